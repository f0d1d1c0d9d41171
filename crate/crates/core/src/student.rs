//! Bayesian knowledge tracing students.
//!
//! Each concept has a hidden binary knowledge state driven by prior, learn,
//! guess and slip probabilities. Simulated students answer from the hidden
//! state; the mastery estimate is what an observer infers from the answers.
//! There is no forgetting: a learned concept stays learned.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curriculum::{ConceptId, Curriculum, ProblemId};
use crate::difficulty::derive_difficulty;

#[derive(Debug, Error)]
pub enum StudentError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse BKT parameters: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("failed to read response table: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid BKT parameters for `{concept}`: {reason}")]
    InvalidParams { concept: ConceptId, reason: String },
    #[error("no BKT parameters for concept `{0}`")]
    MissingConcept(ConceptId),
    #[error("response table row {row}: {reason}")]
    BadResponse { row: usize, reason: String },
    #[error("response table is empty")]
    NoResponses,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BktParams {
    pub prior: f64,
    pub learn: f64,
    pub guess: f64,
    pub slip: f64,
}

impl BktParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("prior", self.prior),
            ("learn", self.learn),
            ("guess", self.guess),
            ("slip", self.slip),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} = {v} not in [0, 1]"));
            }
        }
        if self.guess + self.slip >= 1.0 {
            return Err(format!(
                "guess + slip = {} must be below 1",
                self.guess + self.slip
            ));
        }
        Ok(())
    }
}

/// Ranges of the synthetic parameter generator.
pub const SYNTH_PRIOR: (f64, f64) = (0.05, 0.3);
pub const SYNTH_LEARN: (f64, f64) = (0.05, 0.3);
pub const SYNTH_GUESS: (f64, f64) = (0.1, 0.3);
pub const SYNTH_SLIP: (f64, f64) = (0.05, 0.2);

/// Per-concept parameters. Serialized as a JSON object keyed by concept id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BktParamSet {
    pub params: BTreeMap<ConceptId, BktParams>,
}

impl BktParamSet {
    pub fn from_json(text: &str) -> Result<Self, StudentError> {
        let set: Self = serde_json::from_str(text)?;
        set.validate()?;
        Ok(set)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, StudentError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("parameters serialize")
    }

    pub fn validate(&self) -> Result<(), StudentError> {
        for (concept, p) in &self.params {
            p.validate().map_err(|reason| StudentError::InvalidParams {
                concept: concept.clone(),
                reason,
            })?;
        }
        Ok(())
    }

    /// Draws parameters for every concept of `curriculum` uniformly from the
    /// synthetic ranges.
    pub fn synthetic(curriculum: &Curriculum, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |(lo, hi): (f64, f64)| rng.random_range(lo..=hi);
        let params = curriculum
            .concept_ids_in_order()
            .map(|c| {
                let p = BktParams {
                    prior: draw(SYNTH_PRIOR),
                    learn: draw(SYNTH_LEARN),
                    guess: draw(SYNTH_GUESS),
                    slip: draw(SYNTH_SLIP),
                };
                (c.clone(), p)
            })
            .collect();
        Self { params }
    }

    /// Checks that every concept of `curriculum` has parameters.
    pub fn covers(&self, curriculum: &Curriculum) -> Result<(), StudentError> {
        match curriculum
            .concept_ids_in_order()
            .find(|c| !self.params.contains_key(*c))
        {
            Some(c) => Err(StudentError::MissingConcept(c.clone())),
            None => Ok(()),
        }
    }
}

/// One BKT inference step: condition on the observation, then apply the
/// learning transition.
pub fn update_posterior(posterior: f64, correct: bool, params: &BktParams) -> f64 {
    let conditioned = if correct {
        let num = posterior * (1.0 - params.slip);
        let den = num + (1.0 - posterior) * params.guess;
        if den > 0.0 {
            num / den
        } else {
            posterior
        }
    } else {
        let num = posterior * params.slip;
        let den = num + (1.0 - posterior) * (1.0 - params.guess);
        if den > 0.0 {
            num / den
        } else {
            posterior
        }
    };
    (conditioned + (1.0 - conditioned) * params.learn).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConceptKnowledge {
    pub params: BktParams,
    /// Hidden truth.
    pub learned: bool,
    /// Observer's estimate of `P(learned)`.
    pub posterior: f64,
}

#[derive(Debug, Clone)]
pub struct BktStudent {
    concepts: BTreeMap<ConceptId, ConceptKnowledge>,
    rng: ChaCha8Rng,
}

impl BktStudent {
    /// Samples the initial hidden state of every concept from its prior, in
    /// concept-id order. The posterior starts at the prior.
    pub fn new(params: &BktParamSet, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let concepts = params
            .params
            .iter()
            .map(|(c, p)| {
                let learned = rng.random_bool(p.prior);
                (
                    c.clone(),
                    ConceptKnowledge {
                        params: *p,
                        learned,
                        posterior: p.prior,
                    },
                )
            })
            .collect();
        Self { concepts, rng }
    }

    /// Builds a student with an explicit hidden state, for tests and replays.
    pub fn with_state(
        concepts: BTreeMap<ConceptId, ConceptKnowledge>,
        seed: u64,
    ) -> Self {
        Self {
            concepts,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn knowledge(&self, concept: &ConceptId) -> Option<&ConceptKnowledge> {
        self.concepts.get(concept)
    }

    pub fn concepts(&self) -> &BTreeMap<ConceptId, ConceptKnowledge> {
        &self.concepts
    }

    fn entry(&mut self, concept: &ConceptId) -> Result<&mut ConceptKnowledge, StudentError> {
        self.concepts
            .get_mut(concept)
            .ok_or_else(|| StudentError::MissingConcept(concept.clone()))
    }

    /// Answers from the hidden state: right with probability `guess` when
    /// unlearned, wrong with probability `slip` when learned.
    pub fn sample_response(&mut self, concept: &ConceptId) -> Result<bool, StudentError> {
        let k = *self.entry(concept)?;
        Ok(if k.learned {
            !self.rng.random_bool(k.params.slip)
        } else {
            self.rng.random_bool(k.params.guess)
        })
    }

    /// Learning transition after an attempt. Never unlearns.
    pub fn advance_latent(&mut self, concept: &ConceptId) -> Result<bool, StudentError> {
        let k = *self.entry(concept)?;
        let learned = k.learned || self.rng.random_bool(k.params.learn);
        self.entry(concept)?.learned = learned;
        Ok(learned)
    }

    pub fn observe(&mut self, concept: &ConceptId, correct: bool) -> Result<f64, StudentError> {
        let k = self.entry(concept)?;
        k.posterior = update_posterior(k.posterior, correct, &k.params);
        Ok(k.posterior)
    }

    /// Response, then hidden transition, then posterior update.
    pub fn attempt(&mut self, concept: &ConceptId) -> Result<bool, StudentError> {
        let correct = self.sample_response(concept)?;
        self.advance_latent(concept)?;
        self.observe(concept, correct)?;
        Ok(correct)
    }

    /// Mean posterior over every concept the student tracks.
    pub fn mastery_estimate(&self) -> f64 {
        if self.concepts.is_empty() {
            return 0.0;
        }
        self.concepts.values().map(|k| k.posterior).sum::<f64>() / self.concepts.len() as f64
    }

    /// Fraction of concepts actually learned.
    pub fn latent_mastery(&self) -> f64 {
        if self.concepts.is_empty() {
            return 0.0;
        }
        self.concepts.values().filter(|k| k.learned).count() as f64 / self.concepts.len() as f64
    }
}

/// One row of a response table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub problem_id: ProblemId,
    pub correct: bool,
}

#[derive(Deserialize)]
struct ResponseRow {
    problem_id: String,
    correct: String,
}

/// Reads a CSV with header columns `problem_id` and `correct` (`0`/`1`).
pub fn read_response_table(path: impl AsRef<Path>) -> Result<Vec<ResponseRecord>, StudentError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    parse_responses(&mut reader)
}

pub fn read_response_table_from<R: std::io::Read>(
    input: R,
) -> Result<Vec<ResponseRecord>, StudentError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    parse_responses(&mut reader)
}

fn parse_responses<R: std::io::Read>(
    reader: &mut csv::Reader<R>,
) -> Result<Vec<ResponseRecord>, StudentError> {
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<ResponseRow>().enumerate() {
        let row = row?;
        let correct = match row.correct.as_str() {
            "1" => true,
            "0" => false,
            other => {
                return Err(StudentError::BadResponse {
                    row: i + 1,
                    reason: format!("correct must be 0 or 1, got `{other}`"),
                })
            }
        };
        if row.problem_id.is_empty() {
            return Err(StudentError::BadResponse {
                row: i + 1,
                reason: "empty problem_id".into(),
            });
        }
        out.push(ResponseRecord {
            problem_id: ProblemId(row.problem_id),
            correct,
        });
    }
    Ok(out)
}

/// Difficulty per problem from its observed inaccuracy rate.
pub fn fit_difficulties_from_responses(
    records: &[ResponseRecord],
) -> Result<BTreeMap<ProblemId, f64>, StudentError> {
    if records.is_empty() {
        return Err(StudentError::NoResponses);
    }
    let mut tally: BTreeMap<&ProblemId, (usize, usize)> = BTreeMap::new();
    for r in records {
        let e = tally.entry(&r.problem_id).or_default();
        e.1 += 1;
        if !r.correct {
            e.0 += 1;
        }
    }
    Ok(tally
        .into_iter()
        .map(|(p, (wrong, total))| {
            let d = derive_difficulty(wrong as f64 / total as f64)
                .expect("a ratio of counts lies in [0, 1]");
            (p.clone(), d)
        })
        .collect())
}
