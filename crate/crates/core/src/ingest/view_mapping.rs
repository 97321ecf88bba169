use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraView {
    Dashboard,
    Rearview,
    #[default]
    Other,
}

/// Video-level behavior tag carried over from the source dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorTag {
    Normal,
    Talking,
    Yawning,
    Mixed,
}

/// One pattern rule. `pattern` is a regex matched against the video path
/// relative to the corpus root, with `/` separators.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewRule {
    pub pattern: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera_view: Option<CameraView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behavior_tag: Option<BehaviorTag>,
}

/// Maps file names to camera view and behavior tag. For each attribute the
/// first rule that matches and sets it wins.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewMapping {
    #[serde(default)]
    pub rules: Vec<ViewRule>,
    #[serde(default)]
    pub default_view: CameraView,
}

pub struct CompiledViewMapping {
    rules: Vec<(Regex, ViewRule)>,
    default_view: CameraView,
}

impl ViewMapping {
    /// Rules for the YawDD folder layout (`Dash/...` and `Mirror/...`,
    /// behavior in the file name).
    pub fn yawdd() -> Self {
        let rule = |pattern: &str, view: Option<CameraView>, tag: Option<BehaviorTag>| ViewRule {
            pattern: pattern.into(),
            camera_view: view,
            behavior_tag: tag,
        };
        Self {
            rules: vec![
                rule(r"(?i)(^|/)dash", Some(CameraView::Dashboard), Some(BehaviorTag::Mixed)),
                rule(r"(?i)(^|/)mirror", Some(CameraView::Rearview), None),
                rule(r"(?i)yawning", None, Some(BehaviorTag::Yawning)),
                rule(r"(?i)talking", None, Some(BehaviorTag::Talking)),
                rule(r"(?i)normal", None, Some(BehaviorTag::Normal)),
            ],
            default_view: CameraView::Other,
        }
    }

    pub fn compile(&self) -> Result<CompiledViewMapping> {
        let rules = self
            .rules
            .iter()
            .map(|rule| {
                Regex::new(&rule.pattern)
                    .map(|re| (re, rule.clone()))
                    .map_err(|e| Error::Config(format!("bad view pattern `{}`: {e}", rule.pattern)))
            })
            .collect::<Result<_>>()?;
        Ok(CompiledViewMapping { rules, default_view: self.default_view })
    }
}

impl CompiledViewMapping {
    pub fn classify(&self, relative_path: &str) -> (CameraView, Option<BehaviorTag>) {
        let matching = || self.rules.iter().filter(|(re, _)| re.is_match(relative_path));
        let view = matching().find_map(|(_, r)| r.camera_view).unwrap_or(self.default_view);
        let tag = matching().find_map(|(_, r)| r.behavior_tag);
        (view, tag)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn yawdd_layout() {
        let m = ViewMapping::yawdd().compile().unwrap();
        assert_eq!(
            m.classify("Mirror/Female_mirror/1-FemaleNoGlasses-Yawning.avi"),
            (CameraView::Rearview, Some(BehaviorTag::Yawning))
        );
        assert_eq!(m.classify("Dash/Male/12-MaleGlasses.avi"), (CameraView::Dashboard, Some(BehaviorTag::Mixed)));
        assert_eq!(m.classify("other/clip.gif"), (CameraView::Other, None));
    }

    #[test]
    fn bad_pattern_is_config_error() {
        let m = ViewMapping {
            rules: vec![ViewRule { pattern: "(".into(), camera_view: None, behavior_tag: None }],
            default_view: CameraView::Other,
        };
        assert!(matches!(m.compile(), Err(Error::Config(_))));
    }
}
