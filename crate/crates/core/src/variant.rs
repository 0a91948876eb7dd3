use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Which soft Bellman backup to use for the critic target.
///
/// `Corrected` subtracts `α·H₀` inside the next-state expectation alongside
/// the `α·log π` term; `MissingTarget` is the backup without it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackupVariant {
    Corrected,
    MissingTarget,
}

impl BackupVariant {
    pub const ALL: [BackupVariant; 2] = [BackupVariant::Corrected, BackupVariant::MissingTarget];

    pub fn as_str(self) -> &'static str {
        match self {
            BackupVariant::Corrected => "corrected",
            BackupVariant::MissingTarget => "missing_target",
        }
    }

    /// Coefficient on `α·H₀` in the backup: 1 for corrected, 0 otherwise.
    pub fn target_weight(self) -> f64 {
        match self {
            BackupVariant::Corrected => 1.0,
            BackupVariant::MissingTarget => 0.0,
        }
    }
}

impl fmt::Display for BackupVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unknown backup variant {0:?} (expected \"corrected\" or \"missing_target\")")]
pub struct UnknownVariant(pub String);

impl FromStr for BackupVariant {
    type Err = UnknownVariant;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "corrected" => Ok(BackupVariant::Corrected),
            "missing_target" => Ok(BackupVariant::MissingTarget),
            other => Err(UnknownVariant(other.to_string())),
        }
    }
}
