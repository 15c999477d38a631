//! Operator categories shared by the cost model and trace attribution.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Category an operator instance (modeled or measured) is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpCategory {
    Attention,
    Convolution,
    Linear,
    #[serde(rename = "groupnorm")]
    GroupNorm,
    Other,
}

impl OpCategory {
    pub const ALL: [OpCategory; 5] = [
        OpCategory::Attention,
        OpCategory::Convolution,
        OpCategory::Linear,
        OpCategory::GroupNorm,
        OpCategory::Other,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            OpCategory::Attention => "attention",
            OpCategory::Convolution => "convolution",
            OpCategory::Linear => "linear",
            OpCategory::GroupNorm => "groupnorm",
            OpCategory::Other => "other",
        }
    }
}

impl fmt::Display for OpCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}
