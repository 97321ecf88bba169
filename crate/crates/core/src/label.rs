use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Frame-level mouth-state label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Yawn,
    NoYawn,
    NoFace,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Yawn, Label::NoYawn, Label::NoFace];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Yawn => "yawn",
            Label::NoYawn => "no_yawn",
            Label::NoFace => "no_face",
        }
    }

    /// Index into the two-class export/classifier map; `None` for `no_face`.
    pub fn class_index(self) -> Option<usize> {
        match self {
            Label::Yawn => Some(0),
            Label::NoYawn => Some(1),
            Label::NoFace => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "yawn" => Ok(Label::Yawn),
            "no_yawn" | "no-yawn" => Ok(Label::NoYawn),
            "no_face" | "no-face" => Ok(Label::NoFace),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

/// Output class of the binary mouth-state network, in network output order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MouthState {
    Yawn,
    NoYawn,
}

impl MouthState {
    pub const CLASSES: [MouthState; 2] = [MouthState::Yawn, MouthState::NoYawn];

    pub fn index(self) -> usize {
        match self {
            MouthState::Yawn => 0,
            MouthState::NoYawn => 1,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::CLASSES.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        Label::from(self).as_str()
    }
}

impl From<MouthState> for Label {
    fn from(state: MouthState) -> Self {
        match state {
            MouthState::Yawn => Label::Yawn,
            MouthState::NoYawn => Label::NoYawn,
        }
    }
}

impl fmt::Display for MouthState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
