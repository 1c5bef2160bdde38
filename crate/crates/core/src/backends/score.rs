use serde::{Deserialize, Serialize};

use super::BackendError;

/// Probabilities a document entails, is neutral to, or contradicts a hypothesis.
///
/// Each component lies in `[0, 1]` and the three sum to 1 within `1e-6`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScore")]
pub struct EntailmentScore {
    entail: f64,
    neutral: f64,
    contradict: f64,
}

#[derive(Deserialize)]
struct RawScore {
    entail: f64,
    neutral: f64,
    contradict: f64,
}

impl TryFrom<RawScore> for EntailmentScore {
    type Error = BackendError;

    fn try_from(raw: RawScore) -> Result<Self, Self::Error> {
        EntailmentScore::new(raw.entail, raw.neutral, raw.contradict)
    }
}

/// Sums further than this from 1 are rejected instead of renormalized.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-3;
pub const SUM_TOLERANCE: f64 = 1e-6;

impl EntailmentScore {
    pub fn new(entail: f64, neutral: f64, contradict: f64) -> Result<Self, BackendError> {
        let parts = [entail, neutral, contradict];
        if parts.iter().any(|p| !p.is_finite() || !(0.0..=1.0).contains(p)) {
            return Err(BackendError::Malformed {
                reason: format!("probabilities out of range: {parts:?}"),
                excerpt: String::new(),
            });
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(BackendError::Normalization { sum });
        }
        Ok(EntailmentScore {
            entail,
            neutral,
            contradict,
        })
    }

    /// Accepts raw backend output, rescaling it to sum to exactly 1.
    ///
    /// Fails when any component is negative or non-finite, or when the raw sum
    /// is more than [`NORMALIZATION_TOLERANCE`] away from 1.
    pub fn normalized(entail: f64, neutral: f64, contradict: f64) -> Result<Self, BackendError> {
        let parts = [entail, neutral, contradict];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(BackendError::Malformed {
                reason: format!("invalid probabilities {parts:?}"),
                excerpt: String::new(),
            });
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(BackendError::Normalization { sum });
        }
        Ok(EntailmentScore {
            entail: entail / sum,
            neutral: neutral / sum,
            contradict: contradict / sum,
        })
    }

    pub fn entail(&self) -> f64 {
        self.entail
    }

    pub fn neutral(&self) -> f64 {
        self.neutral
    }

    pub fn contradict(&self) -> f64 {
        self.contradict
    }
}
