//! Difficulty-aware adjustments.
//!
//! * correctness scaling by a shifted logistic of the difficulty,
//! * Gaussian initial problem multipliers centred on `d = 3`,
//! * the multiplicative question-grade update applied after each answer,
//! * difficulty derived from an observed inaccuracy rate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curriculum::{MAX_DIFFICULTY, MIN_DIFFICULTY};

pub const DEFAULT_XI_SKEW: f64 = 7.37;
pub const DEFAULT_ALPHA: f64 = 1.3;
/// Centre of the difficulty scale.
pub const DIFFICULTY_CENTER: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DifficultyError {
    #[error("inaccuracy rate {0} not in [0, 1]")]
    RateOutOfRange(f64),
    #[error("invalid difficulty configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DifficultyConfig {
    /// Width `ξ` of the initial Gaussian multiplier.
    pub xi_skew: f64,
    /// Multiplicative step `α` of the grade update.
    pub alpha: f64,
    /// When false the engine is difficulty-agnostic: multipliers stay at 1
    /// and correctness is not scaled.
    pub enabled: bool,
    /// Optional ceiling on multipliers. Off by default.
    #[serde(default)]
    pub max_multiplier: Option<f64>,
}

impl Default for DifficultyConfig {
    fn default() -> Self {
        Self {
            xi_skew: DEFAULT_XI_SKEW,
            alpha: DEFAULT_ALPHA,
            enabled: true,
            max_multiplier: None,
        }
    }
}

impl DifficultyConfig {
    pub fn agnostic() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DifficultyError> {
        if !(self.xi_skew > 0.0) {
            return Err(DifficultyError::InvalidConfig(format!(
                "xi {} must be positive",
                self.xi_skew
            )));
        }
        if !(self.alpha > 1.0) {
            return Err(DifficultyError::InvalidConfig(format!(
                "alpha {} must exceed 1",
                self.alpha
            )));
        }
        if let Some(cap) = self.max_multiplier {
            if !(cap > 0.0) {
                return Err(DifficultyError::InvalidConfig(format!(
                    "multiplier cap {cap} must be positive"
                )));
            }
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `σ(d − 3) + 1/2`, in `(0.5, 1.5)`.
pub fn correctness_multiplier(difficulty: f64) -> f64 {
    sigmoid(difficulty - DIFFICULTY_CENTER) + 0.5
}

pub fn scale_correctness(correct: bool, difficulty: f64) -> f64 {
    if correct {
        correctness_multiplier(difficulty)
    } else {
        0.0
    }
}

/// `exp(−(d − 3)² / ξ)`.
pub fn initial_multiplier(difficulty: f64, xi: f64) -> f64 {
    let offset = difficulty - DIFFICULTY_CENTER;
    (-(offset * offset) / xi).exp()
}

/// Grade update after answering a problem of difficulty `answered`.
///
/// A correct answer multiplies strictly harder problems by `α` and strictly
/// easier ones by `1/α`; an incorrect answer does the reverse. Problems of
/// equal difficulty, including the answered one, are left alone.
pub fn maple_update<'a>(
    problems: impl IntoIterator<Item = (f64, &'a mut f64)>,
    answered: f64,
    correct: bool,
    alpha: f64,
) {
    let (harder, easier) = if correct {
        (alpha, 1.0 / alpha)
    } else {
        (1.0 / alpha, alpha)
    };
    for (difficulty, multiplier) in problems {
        if difficulty > answered {
            *multiplier *= harder;
        } else if difficulty < answered {
            *multiplier *= easier;
        }
    }
}

/// Map-based form of [`maple_update`]. Problems missing from `difficulties`
/// are left unchanged; an unknown `answered` id changes nothing.
pub fn maple_update_map<K: Ord + Clone>(
    multipliers: &BTreeMap<K, f64>,
    difficulties: &BTreeMap<K, f64>,
    answered: &K,
    correct: bool,
    alpha: f64,
) -> BTreeMap<K, f64> {
    let mut out = multipliers.clone();
    let Some(&d_answered) = difficulties.get(answered) else {
        return out;
    };
    maple_update(
        out.iter_mut()
            .filter_map(|(k, m)| difficulties.get(k).map(|&d| (d, m))),
        d_answered,
        correct,
        alpha,
    );
    out
}

/// `4 · rate + 1`.
pub fn derive_difficulty(inaccuracy_rate: f64) -> Result<f64, DifficultyError> {
    if !(0.0..=1.0).contains(&inaccuracy_rate) {
        return Err(DifficultyError::RateOutOfRange(inaccuracy_rate));
    }
    Ok((MAX_DIFFICULTY - MIN_DIFFICULTY) * inaccuracy_rate + MIN_DIFFICULTY)
}
