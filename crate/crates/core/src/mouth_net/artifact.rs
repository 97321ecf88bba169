//! `.yfz` model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "YAWNFZ01"
//! hdr_len  u64      length of the JSON header in bytes
//! header   JSON     {format, spec, preprocessing, classes, tensors, info}
//! blob     f32[]    tensor data, concatenated in header order
//! ```
//!
//! Each header tensor entry carries `name`, `shape`, `offset` and `len`
//! (both in f32 elements), so another runtime can load the weights without
//! knowing this crate.

use std::fs;
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::network::{softmax, FeatureMap, Network, Param};
use super::preprocess::Preprocessing;
use super::spec::{count_parameters, NetworkSpec};
use super::Prediction;
use crate::error::{Error, Result};
use crate::label::MouthState;

const MAGIC: &[u8; 8] = b"YAWNFZ01";
pub const FORMAT: &str = "yawnforge-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format: String,
    spec: NetworkSpec,
    preprocessing: Preprocessing,
    classes: Vec<String>,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    info: serde_json::Value,
}

/// A trained network with its preprocessing. Immutable once built and safe
/// to share between inference threads.
#[derive(Debug, Clone)]
pub struct ModelArtifact {
    pub network: Network,
    pub preprocessing: Preprocessing,
    /// Free-form provenance (training config, metrics summary).
    pub info: serde_json::Value,
}

impl ModelArtifact {
    pub fn new(network: Network, preprocessing: Preprocessing, info: serde_json::Value) -> Self {
        Self { network, preprocessing, info }
    }

    pub fn spec(&self) -> &NetworkSpec {
        self.network.spec()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut offset = 0;
        for p in self.network.params() {
            tensors.push(TensorEntry { name: p.name.clone(), shape: p.shape.clone(), offset, len: p.data.len() });
            offset += p.data.len();
        }
        let header = Header {
            format: FORMAT.into(),
            spec: self.spec().clone(),
            preprocessing: self.preprocessing.clone(),
            classes: MouthState::CLASSES.iter().map(|c| c.as_str().to_string()).collect(),
            tensors,
            info: self.info.clone(),
        };
        let header = serde_json::to_vec(&header).map_err(|e| Error::json("model header", e))?;
        let mut out = Vec::with_capacity(16 + header.len() + offset * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for p in self.network.params() {
            for v in &p.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Artifact(msg.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a yawnforge model (bad magic)"));
        }
        let hdr_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let hdr_end =
            16usize.checked_add(hdr_len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[16..hdr_end]).map_err(|e| Error::json("model header", e))?;
        if header.format != FORMAT {
            return Err(Error::Artifact(format!("unsupported format `{}`", header.format)));
        }
        header.preprocessing.validate()?;
        let blob = &bytes[hdr_end..];
        if !blob.len().is_multiple_of(4) {
            return Err(bad("weight blob is not a whole number of f32"));
        }
        let floats: Vec<f32> = blob.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let mut params = Vec::with_capacity(header.tensors.len());
        for t in &header.tensors {
            let end = t.offset.checked_add(t.len).filter(|&e| e <= floats.len());
            let Some(end) = end else {
                return Err(Error::Artifact(format!("tensor {} exceeds blob", t.name)));
            };
            params.push(Param { name: t.name.clone(), shape: t.shape.clone(), data: floats[t.offset..end].to_vec() });
        }
        let network = Network::from_params(&header.spec, params)?;
        Ok(Self { network, preprocessing: header.preprocessing, info: header.info })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::util::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn predict_tensor(&self, input: &FeatureMap) -> Result<Prediction> {
        let logits = self.network.logits(input)?;
        let scores = softmax(&logits);
        Prediction::from_scores([scores[0], scores[1]])
    }

    /// Classify one mouth crop. Deterministic for fixed weights.
    pub fn predict(&self, crop: &RgbImage) -> Result<Prediction> {
        let input = self.preprocessing.apply(crop)?;
        self.predict_tensor(&input)
    }

    /// Human-readable architecture table.
    pub fn inspect(&self) -> Result<String> {
        let report = count_parameters(self.spec())?;
        let mut out = report.render_table();
        out.push_str(&format!(
            "\ninput: {}x{} RGB, resize {:?}\nclasses: yawn=0, no_yawn=1\n",
            self.preprocessing.input_width, self.preprocessing.input_height, self.preprocessing.resize
        ));
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mouth_net::spec::build_network;
    use rand::SeedableRng;

    fn artifact() -> ModelArtifact {
        let spec = build_network(None).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let net = Network::new(&spec, &mut rng).unwrap();
        ModelArtifact::new(net, Preprocessing::default(), serde_json::json!({"seed": 1}))
    }

    #[test]
    fn container_round_trip_is_byte_stable() {
        let a = artifact();
        let bytes = a.to_bytes().unwrap();
        let b = ModelArtifact::from_bytes(&bytes).unwrap();
        assert_eq!(b.to_bytes().unwrap(), bytes);
        assert_eq!(b.network.params(), a.network.params());
    }

    #[test]
    fn corrupt_containers_rejected() {
        let bytes = artifact().to_bytes().unwrap();
        assert!(ModelArtifact::from_bytes(b"nope").is_err());
        assert!(ModelArtifact::from_bytes(&bytes[..bytes.len() - 4]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ModelArtifact::from_bytes(&bad).is_err());
    }

    #[test]
    fn zero_area_crop_is_input_error() {
        let a = artifact();
        assert!(matches!(a.predict(&RgbImage::new(0, 5)), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn prediction_is_deterministic_and_normalized() {
        let a = artifact();
        let crop = RgbImage::from_fn(23, 17, |x, y| image::Rgb([(x * 11) as u8, (y * 13) as u8, 77]));
        let p1 = a.predict(&crop).unwrap();
        let p2 = a.predict(&crop).unwrap();
        assert_eq!(p1.scores[0].to_bits(), p2.scores[0].to_bits());
        assert_eq!(p1.scores[1].to_bits(), p2.scores[1].to_bits());
        assert!((p1.scores.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(p1.confidence >= 0.5);
    }
}
