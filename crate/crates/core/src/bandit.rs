//! ZPDES bandit over a single progression tree.
//!
//! Each activity keeps its correctness and reward histories. The reward is a
//! learning-progress estimate (recent half-window mean minus older
//! half-window mean), the weight is the mean of all rewards, and selection
//! mixes the normalized weights of the zone of proximal development (ZPD)
//! with uniform exploration.
//!
//! Initial and unlock weights are stored as pseudo-rewards at the head of the
//! reward history, so the weight is always a plain mean.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BanditError {
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("unknown activity `{0}`")]
    UnknownActivity(String),
    #[error("invalid bandit configuration: {0}")]
    InvalidConfig(String),
}

/// Tutor belief about an activity. Only moves forward:
/// `Locked -> UnlockedUnmastered -> Mastered`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Belief {
    Locked,
    UnlockedUnmastered,
    Mastered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditConfig {
    /// Exploration rate, in `[0, 1)`.
    pub gamma: f64,
    /// History window `L`; even and at least 2.
    pub history_length: usize,
    /// Mastery threshold on the mean of the last `L` correctness values.
    pub mastery_threshold: f64,
    /// Pseudo-reward given to activities that are unlocked at start.
    pub initial_weight: f64,
    /// Pseudo-reward given to activities unlocked by mastering prerequisites.
    pub unlock_weight: f64,
}

pub const DEFAULT_GAMMA: f64 = 0.1;
pub const DEFAULT_INITIAL_WEIGHT: f64 = 0.5;
pub const DEFAULT_UNLOCK_WEIGHT: f64 = 2.0;
pub const DEFAULT_MASTERY_THRESHOLD: f64 = 0.74;
pub const CONCEPT_HISTORY_LENGTH: usize = 4;
pub const PROBLEM_HISTORY_LENGTH: usize = 2;

impl BanditConfig {
    pub fn concept_default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            history_length: CONCEPT_HISTORY_LENGTH,
            mastery_threshold: DEFAULT_MASTERY_THRESHOLD,
            initial_weight: DEFAULT_INITIAL_WEIGHT,
            unlock_weight: DEFAULT_UNLOCK_WEIGHT,
        }
    }

    pub fn problem_default() -> Self {
        Self {
            history_length: PROBLEM_HISTORY_LENGTH,
            ..Self::concept_default()
        }
    }

    pub fn validate(&self) -> Result<(), BanditError> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(BanditError::InvalidConfig(format!(
                "gamma {} not in [0, 1)",
                self.gamma
            )));
        }
        if self.history_length < 2 || self.history_length % 2 != 0 {
            return Err(BanditError::InvalidConfig(format!(
                "history length {} must be even and >= 2",
                self.history_length
            )));
        }
        if !(self.mastery_threshold > 0.0 && self.mastery_threshold <= 1.5) {
            return Err(BanditError::InvalidConfig(format!(
                "mastery threshold {} not in (0, 1.5]",
                self.mastery_threshold
            )));
        }
        Ok(())
    }
}

/// The last `window` entries of `history` (fewer if the history is short).
/// Missing leading entries are zeros and contribute nothing to a sum.
#[inline]
fn window_slice(history: &[f64], window: usize) -> &[f64] {
    &history[history.len().saturating_sub(window)..]
}

/// Learning progress: mean of the last `L/2` correctness values minus the
/// mean of the `L/2` before them. Missing entries count as zero.
pub fn compute_reward(history: &[f64], window: usize) -> f64 {
    debug_assert!(window >= 2 && window % 2 == 0);
    let half = window / 2;
    let slice = window_slice(history, window);
    let split = slice.len().saturating_sub(half);
    let previous: f64 = slice[..split].iter().sum();
    let recent: f64 = slice[split..].iter().sum();
    recent / half as f64 - previous / half as f64
}

/// Mean of the last `window` correctness values (zero-padded) strictly above
/// `threshold`.
pub fn check_mastery(history: &[f64], window: usize, threshold: f64) -> bool {
    let sum: f64 = window_slice(history, window).iter().sum();
    sum / window as f64 > threshold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivityState {
    pub activity_id: String,
    pub belief: Belief,
    pub correctness_history: Vec<f64>,
    /// Pseudo-rewards first, then one reward per presentation.
    pub reward_history: Vec<f64>,
    /// Difficulty multiplier; stays 1.0 for concept activities.
    pub multiplier: f64,
    pub prerequisites: Vec<String>,
}

impl ActivityState {
    pub fn new(activity_id: impl Into<String>, prerequisites: Vec<String>) -> Self {
        Self {
            activity_id: activity_id.into(),
            belief: Belief::Locked,
            correctness_history: Vec::new(),
            reward_history: Vec::new(),
            multiplier: 1.0,
            prerequisites,
        }
    }

    pub fn presentation_count(&self) -> usize {
        self.reward_history.len()
    }

    pub fn weight(&self) -> f64 {
        update_weight(self)
    }

    pub fn in_zpd(&self) -> bool {
        self.belief == Belief::UnlockedUnmastered
    }
}

/// Arithmetic mean of the reward history (zero if empty).
pub fn update_weight(state: &ActivityState) -> f64 {
    let n = state.reward_history.len();
    if n == 0 {
        return 0.0;
    }
    state.reward_history.iter().sum::<f64>() / n as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate<Id> {
    pub id: Id,
    pub weight: f64,
    pub multiplier: f64,
}

impl<Id> Candidate<Id> {
    pub fn new(id: Id, weight: f64, multiplier: f64) -> Self {
        Self {
            id,
            weight,
            multiplier,
        }
    }
}

/// Selection distribution in candidate order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probabilities<Id> {
    pub entries: Vec<(Id, f64)>,
}

impl<Id: PartialEq> Probabilities<Id> {
    pub fn get(&self, id: &Id) -> Option<f64> {
        self.entries.iter().find(|(i, _)| i == id).map(|(_, p)| *p)
    }
}

impl<Id> Probabilities<Id> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum()
    }
}

/// Effective weights `max(w * m, 0)` are normalized (uniform if they are all
/// zero) and mixed with uniform exploration at rate `gamma`.
pub fn selection_probabilities<Id: Clone>(
    candidates: &[Candidate<Id>],
    gamma: f64,
) -> Result<Probabilities<Id>, BanditError> {
    if candidates.is_empty() {
        return Err(BanditError::EmptyCandidates);
    }
    let n = candidates.len() as f64;
    // f64::max drops NaN in favour of 0.0.
    let effective: Vec<f64> = candidates
        .iter()
        .map(|c| (c.weight * c.multiplier).max(0.0))
        .collect();
    let total: f64 = effective.iter().sum();
    let entries = candidates
        .iter()
        .zip(&effective)
        .map(|(c, &w)| {
            let normalized = if total > 0.0 && total.is_finite() {
                w / total
            } else {
                1.0 / n
            };
            (c.id.clone(), normalized * (1.0 - gamma) + gamma / n)
        })
        .collect();
    Ok(Probabilities { entries })
}

/// Draws one id. Consumes exactly one `f64` from `rng`.
pub fn select_activity<Id: Clone, R: Rng + ?Sized>(
    probabilities: &Probabilities<Id>,
    rng: &mut R,
) -> Result<Id, BanditError> {
    let last = probabilities
        .entries
        .iter()
        .rev()
        .find(|(_, p)| *p > 0.0)
        .or(probabilities.entries.last())
        .ok_or(BanditError::EmptyCandidates)?;
    let u: f64 = rng.random::<f64>() * probabilities.total();
    let mut acc = 0.0;
    for (id, p) in &probabilities.entries {
        acc += p;
        if u < acc {
            return Ok(id.clone());
        }
    }
    // Rounding can leave u just above the final cumulative sum.
    Ok(last.0.clone())
}

/// A ZPDES bandit over one progression tree. Activities keep their
/// declaration order, which fixes the candidate order and therefore the
/// mapping from random draws to selections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZpdesBandit {
    config: BanditConfig,
    activities: Vec<ActivityState>,
}

impl ZpdesBandit {
    /// Builds the tree and unlocks its roots with the initial pseudo-reward.
    /// Prerequisites must refer to activities in `activities` and form a DAG.
    pub fn new(
        config: BanditConfig,
        activities: impl IntoIterator<Item = (String, Vec<String>)>,
    ) -> Result<Self, BanditError> {
        config.validate()?;
        let activities: Vec<ActivityState> = activities
            .into_iter()
            .map(|(id, pre)| ActivityState::new(id, pre))
            .collect();
        for a in &activities {
            for p in &a.prerequisites {
                if !activities.iter().any(|b| &b.activity_id == p) {
                    return Err(BanditError::UnknownActivity(p.clone()));
                }
            }
        }
        let mut bandit = Self { config, activities };
        let initial = bandit.config.initial_weight;
        for a in bandit.activities.iter_mut().filter(|a| a.prerequisites.is_empty()) {
            a.belief = Belief::UnlockedUnmastered;
            a.reward_history.push(initial);
        }
        bandit.refresh_zpd();
        Ok(bandit)
    }

    pub fn config(&self) -> &BanditConfig {
        &self.config
    }

    pub fn activities(&self) -> &[ActivityState] {
        &self.activities
    }

    pub fn get(&self, id: &str) -> Option<&ActivityState> {
        self.activities.iter().find(|a| a.activity_id == id)
    }

    fn get_mut(&mut self, id: &str) -> Result<&mut ActivityState, BanditError> {
        self.activities
            .iter_mut()
            .find(|a| a.activity_id == id)
            .ok_or_else(|| BanditError::UnknownActivity(id.to_owned()))
    }

    pub fn zpd(&self) -> impl Iterator<Item = &ActivityState> {
        self.activities.iter().filter(|a| a.in_zpd())
    }

    pub fn all_mastered(&self) -> bool {
        self.activities.iter().all(|a| a.belief == Belief::Mastered)
    }

    /// ZPD members as selection candidates, in declaration order.
    pub fn zpd_candidates(&self) -> Vec<Candidate<String>> {
        self.zpd()
            .map(|a| Candidate::new(a.activity_id.clone(), a.weight(), a.multiplier))
            .collect()
    }

    pub fn probabilities(&self) -> Result<Probabilities<String>, BanditError> {
        selection_probabilities(&self.zpd_candidates(), self.config.gamma)
    }

    /// Appends a correctness observation and the resulting reward. Returns
    /// the reward.
    pub fn record(&mut self, id: &str, correctness: f64) -> Result<f64, BanditError> {
        let window = self.config.history_length;
        let a = self.get_mut(id)?;
        a.correctness_history.push(correctness);
        let reward = compute_reward(&a.correctness_history, window);
        a.reward_history.push(reward);
        Ok(reward)
    }

    /// Threshold mastery test on the activity's correctness history.
    pub fn meets_threshold(&self, id: &str) -> Result<bool, BanditError> {
        let a = self
            .get(id)
            .ok_or_else(|| BanditError::UnknownActivity(id.to_owned()))?;
        Ok(check_mastery(
            &a.correctness_history,
            self.config.history_length,
            self.config.mastery_threshold,
        ))
    }

    /// Marks an activity mastered. Returns whether the belief changed.
    pub fn mark_mastered(&mut self, id: &str) -> Result<bool, BanditError> {
        let a = self.get_mut(id)?;
        let changed = a.belief != Belief::Mastered;
        a.belief = Belief::Mastered;
        Ok(changed)
    }

    pub fn multiplier_mut(&mut self, id: &str) -> Result<&mut f64, BanditError> {
        Ok(&mut self.get_mut(id)?.multiplier)
    }

    pub fn activities_mut(&mut self) -> impl Iterator<Item = &mut ActivityState> {
        self.activities.iter_mut()
    }

    /// Unlocks every locked activity whose prerequisites are all mastered,
    /// appending the unlock pseudo-reward. Returns the newly unlocked ids.
    pub fn refresh_zpd(&mut self) -> Vec<String> {
        let unlock_weight = self.config.unlock_weight;
        let ready: Vec<usize> = self
            .activities
            .iter()
            .enumerate()
            .filter(|(_, a)| a.belief == Belief::Locked)
            .filter(|(_, a)| {
                a.prerequisites.iter().all(|p| {
                    self.activities
                        .iter()
                        .any(|b| &b.activity_id == p && b.belief == Belief::Mastered)
                })
            })
            .map(|(i, _)| i)
            .collect();
        ready
            .into_iter()
            .map(|i| {
                let a = &mut self.activities[i];
                a.belief = Belief::UnlockedUnmastered;
                a.reward_history.push(unlock_weight);
                a.activity_id.clone()
            })
            .collect()
    }

    /// Structural invariants, used after restoring from a snapshot.
    pub fn check_invariants(&self) -> Result<(), String> {
        self.config.validate().map_err(|e| e.to_string())?;
        for a in &self.activities {
            let prereqs_mastered = a.prerequisites.iter().all(|p| {
                self.activities
                    .iter()
                    .any(|b| &b.activity_id == p && b.belief == Belief::Mastered)
            });
            if (a.belief == Belief::Locked) == prereqs_mastered {
                return Err(format!(
                    "activity `{}` belief {:?} inconsistent with prerequisites",
                    a.activity_id, a.belief
                ));
            }
            if a.belief != Belief::Locked && a.reward_history.len() != a.correctness_history.len() + 1
            {
                return Err(format!(
                    "activity `{}` history lengths inconsistent",
                    a.activity_id
                ));
            }
            if !(a.multiplier > 0.0) {
                return Err(format!("activity `{}` multiplier not positive", a.activity_id));
            }
        }
        Ok(())
    }
}
