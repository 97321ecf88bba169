use std::path::Path;

use serde::{Deserialize, Serialize};

use super::geometry::MESH_POINTS;
use crate::error::{Error, Result};

const DEFAULT_JSON: &str = include_str!("../../config/lip_indices.json");

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LipIndicesFile {
    outer: Vec<usize>,
    inner: Vec<usize>,
}

/// Face-mesh indices of the outer and inner lip contours, each listed
/// corner-to-corner along the lower lip and back along the upper lip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LipIndicesFile", into = "LipIndicesFile")]
pub struct LipIndices {
    outer: Vec<usize>,
    inner: Vec<usize>,
    all: Vec<usize>,
}

impl TryFrom<LipIndicesFile> for LipIndices {
    type Error = Error;

    fn try_from(file: LipIndicesFile) -> Result<Self> {
        Self::new(file.outer, file.inner)
    }
}

impl From<LipIndices> for LipIndicesFile {
    fn from(l: LipIndices) -> Self {
        Self { outer: l.outer, inner: l.inner }
    }
}

impl Default for LipIndices {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_JSON).expect("bundled lip index list is valid")
    }
}

impl LipIndices {
    pub fn new(outer: Vec<usize>, inner: Vec<usize>) -> Result<Self> {
        let mut all: Vec<usize> = outer.iter().chain(&inner).copied().collect();
        all.sort_unstable();
        all.dedup();
        if all.is_empty() {
            return Err(Error::Config("lip index list is empty".into()));
        }
        if let Some(bad) = all.iter().find(|&&i| i >= MESH_POINTS) {
            return Err(Error::Config(format!("lip index {bad} outside the {MESH_POINTS}-point mesh")));
        }
        Ok(Self { outer, inner, all })
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::util::read_json(path)
    }

    pub fn outer(&self) -> &[usize] {
        &self.outer
    }

    pub fn inner(&self) -> &[usize] {
        &self.inner
    }

    /// Sorted, de-duplicated union of both contours.
    pub fn all(&self) -> &[usize] {
        &self.all
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_list_has_forty_distinct_points() {
        let lips = LipIndices::default();
        assert_eq!(lips.outer().len(), 20);
        assert_eq!(lips.inner().len(), 20);
        assert_eq!(lips.all().len(), 40);
    }

    #[test]
    fn out_of_range_index_rejected() {
        assert!(LipIndices::new(vec![468], vec![]).is_err());
        assert!(serde_json::from_str::<LipIndices>(r#"{"outer":[],"inner":[]}"#).is_err());
    }
}
