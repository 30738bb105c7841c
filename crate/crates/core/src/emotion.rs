//! The closed four-class emotion set.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// One of the four emotion classes. The discriminants fix the axis order
/// of confusion matrices and report columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Angry = 0,
    Happy = 1,
    Neutral = 2,
    Sad = 3,
}

pub const ALL_EMOTIONS: [EmotionLabel; 4] = [
    EmotionLabel::Angry,
    EmotionLabel::Happy,
    EmotionLabel::Neutral,
    EmotionLabel::Sad,
];

impl EmotionLabel {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<EmotionLabel> {
        ALL_EMOTIONS.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Angry => "angry",
            EmotionLabel::Happy => "happy",
            EmotionLabel::Neutral => "neutral",
            EmotionLabel::Sad => "sad",
        }
    }

    /// One-hot target vector.
    pub fn one_hot<F: crate::Scalar>(self) -> [F; 4] {
        let mut v = [F::zero(); 4];
        v[self.index()] = F::one();
        v
    }
}

impl std::str::FromStr for EmotionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<EmotionLabel> {
        match s.trim().to_ascii_lowercase().as_str() {
            "angry" => Ok(EmotionLabel::Angry),
            "happy" => Ok(EmotionLabel::Happy),
            "neutral" => Ok(EmotionLabel::Neutral),
            "sad" => Ok(EmotionLabel::Sad),
            other => Err(Error::Data(format!(
                "unknown emotion label {other:?} (expected angry|happy|neutral|sad)"
            ))),
        }
    }
}

impl std::fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
