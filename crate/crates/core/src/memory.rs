//! Multiscale context model of forgetting.
//!
//! Every presentation of an activity leaves a memory trace that decays
//! exponentially with its own time constant. Memory strength is the weighted
//! mean of the traces, and previously mastered activities whose strength has
//! dropped below a threshold earn a re-entry weight.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Every trace starts at this value; only strength relative to the threshold
/// matters.
pub const TRACE_INITIAL_VALUE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryTrace {
    pub initial_value: f64,
    /// Logical seconds.
    pub activation_time: f64,
    pub decay_constant: f64,
}

/// Weight `ξ_i` of the i-th trace (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum TraceWeightRule {
    Constant { value: f64 },
}

impl TraceWeightRule {
    pub fn weight(&self, _index: usize) -> f64 {
        match *self {
            TraceWeightRule::Constant { value } => value,
        }
    }
}

/// Decay constant `τ_i` of the i-th trace (1-based). Must be strictly
/// increasing in `i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum DecayRule {
    /// `τ_i = scale * i`.
    Linear { scale: f64 },
}

impl DecayRule {
    pub fn decay_constant(&self, index: usize) -> f64 {
        match *self {
            DecayRule::Linear { scale } => scale * index as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryConfig {
    pub trace_weights: TraceWeightRule,
    pub decay_rule: DecayRule,
    /// `m_t`. Not tuned; a neutral default.
    pub memory_threshold: f64,
    /// `m_m`. Not tuned; a neutral default.
    pub memory_multiplier: f64,
    pub enabled: bool,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            trace_weights: TraceWeightRule::Constant { value: 1.0 },
            decay_rule: DecayRule::Linear { scale: 1.0 },
            memory_threshold: 0.5,
            memory_multiplier: 1.0,
            enabled: false,
        }
    }
}

impl MemoryConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.memory_threshold >= 0.0) || !(self.memory_multiplier >= 0.0) {
            return Err("memory threshold and multiplier must be non-negative".into());
        }
        let TraceWeightRule::Constant { value } = self.trace_weights;
        if !(value > 0.0) {
            return Err("trace weights must be positive".into());
        }
        let DecayRule::Linear { scale } = self.decay_rule;
        if !(scale > 0.0) {
            return Err("decay scale must be positive".into());
        }
        Ok(())
    }
}

/// `x(t0 + Δt) = x(t0) · exp(-Δt / τ)`. Times before activation are treated
/// as `Δt = 0`.
pub fn trace_value(trace: &MemoryTrace, now: f64) -> f64 {
    let elapsed = (now - trace.activation_time).max(0.0);
    trace.initial_value * (-elapsed / trace.decay_constant).exp()
}

/// Weighted mean of trace values. `None` when there are no traces or the
/// weight list does not match.
pub fn memory_strength(traces: &[MemoryTrace], weights: &[f64], now: f64) -> Option<f64> {
    if traces.is_empty() || traces.len() != weights.len() {
        return None;
    }
    let gamma: f64 = weights.iter().sum();
    let total: f64 = traces
        .iter()
        .zip(weights)
        .map(|(t, w)| w * trace_value(t, now))
        .sum();
    Some(total / gamma)
}

/// `m_m · max(0, m_t − s)`.
pub fn learned_set_weight(strength: f64, config: &MemoryConfig) -> f64 {
    config.memory_multiplier * (config.memory_threshold - strength).max(0.0)
}

/// Per-session memory traces keyed by activity id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TraceStore {
    traces: BTreeMap<String, Vec<MemoryTrace>>,
}

impl TraceStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn traces(&self, activity: &str) -> &[MemoryTrace] {
        self.traces.get(activity).map_or(&[], Vec::as_slice)
    }

    /// Appends the next trace for `activity`, activated at `now`.
    pub fn record_presentation(&mut self, activity: &str, now: f64, config: &MemoryConfig) {
        let list = self.traces.entry(activity.to_owned()).or_default();
        let index = list.len() + 1;
        list.push(MemoryTrace {
            initial_value: TRACE_INITIAL_VALUE,
            activation_time: now,
            decay_constant: config.decay_rule.decay_constant(index),
        });
    }

    pub fn strength(&self, activity: &str, now: f64, config: &MemoryConfig) -> Option<f64> {
        let traces = self.traces(activity);
        let weights: Vec<f64> = (1..=traces.len())
            .map(|i| config.trace_weights.weight(i))
            .collect();
        memory_strength(traces, &weights, now)
    }
}
