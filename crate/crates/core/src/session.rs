//! Hierarchical tutoring session: a concept bandit over one section plus a
//! problem bandit per concept.
//!
//! A session alternates strictly between [`Session::next_recommendation`]
//! and [`Session::record_answer`]. Both random draws of a recommendation
//! (concept, then problem) come from the session's own seeded generator, and
//! the generator state is part of the snapshot, so a restored session
//! continues the exact same stream.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bandit::{
    select_activity, selection_probabilities, BanditConfig, BanditError, Belief, Candidate,
    Probabilities, ZpdesBandit,
};
use crate::curriculum::{ConceptId, Curriculum, ProblemId, SectionId};
use crate::difficulty::{initial_multiplier, maple_update, scale_correctness, DifficultyConfig};
use crate::memory::{learned_set_weight, MemoryConfig, TraceStore};

pub const SNAPSHOT_FORMAT: &str = "bandit-tutor-session";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown section `{0}`")]
    UnknownSection(SectionId),
    #[error("unknown problem `{0}`")]
    UnknownProblem(ProblemId),
    #[error("session is already complete")]
    Complete,
    #[error("problem `{0}` is not the outstanding recommendation")]
    NotRecommended(ProblemId),
    #[error("problem `{0}` is already mastered")]
    AlreadyMastered(ProblemId),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("snapshot version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: String, found: String },
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<BanditError> for SessionError {
    fn from(e: BanditError) -> Self {
        SessionError::Internal(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub concept: BanditConfig,
    pub problem: BanditConfig,
    pub memory: MemoryConfig,
    pub difficulty: DifficultyConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            concept: BanditConfig::concept_default(),
            problem: BanditConfig::problem_default(),
            memory: MemoryConfig::default(),
            difficulty: DifficultyConfig::default(),
        }
    }
}

impl SessionConfig {
    /// Same hyperparameters with every difficulty adjustment switched off.
    pub fn difficulty_agnostic() -> Self {
        Self {
            difficulty: DifficultyConfig::agnostic(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        self.concept
            .validate()
            .and_then(|_| self.problem.validate())
            .map_err(|e| SessionError::InvalidConfig(e.to_string()))?;
        self.difficulty
            .validate()
            .map_err(|e| SessionError::InvalidConfig(e.to_string()))?;
        self.memory.validate().map_err(SessionError::InvalidConfig)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interaction {
    pub timestamp: f64,
    pub concept_id: ConceptId,
    pub problem_id: ProblemId,
    pub raw_correct: bool,
    pub scaled_correctness: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pending {
    pub concept_id: ConceptId,
    pub problem_id: ProblemId,
    /// The concept came from the learned set rather than the ZPD.
    pub review: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub concept_id: ConceptId,
    pub problem_id: ProblemId,
    pub prompt: String,
    pub choices: Vec<String>,
    pub review: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MasteryCause {
    Threshold,
    BankExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerReport {
    pub concept_id: ConceptId,
    pub problem_id: ProblemId,
    pub correct: bool,
    pub scaled_correctness: f64,
    pub problem_reward: f64,
    pub concept_reward: f64,
    pub problem_mastered: bool,
    pub concept_mastered: Option<MasteryCause>,
    pub unlocked: Vec<ConceptId>,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptProgress {
    pub concept_id: ConceptId,
    pub belief: Belief,
}

/// Everything a session needs besides the curriculum. This is what a
/// snapshot carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionState {
    pub session_id: String,
    pub section_id: SectionId,
    pub seed: u64,
    pub config: SessionConfig,
    pub concept_bandit: ZpdesBandit,
    pub problem_bandits: BTreeMap<ConceptId, ZpdesBandit>,
    pub memory: TraceStore,
    pub rng: ChaCha8Rng,
    pub log: Vec<Interaction>,
    pub outstanding: Option<Pending>,
    /// Timestamp of the most recent answer, logical seconds.
    pub clock: f64,
    pub complete: bool,
}

#[derive(Serialize)]
struct SnapshotOut<'a> {
    format: &'static str,
    version: u32,
    state: &'a SessionState,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotIn {
    format: String,
    version: serde_json::Value,
    state: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    curriculum: Arc<Curriculum>,
    state: SessionState,
}

/// Starts a session on one section of `curriculum`.
pub fn start_session(
    curriculum: Arc<Curriculum>,
    section: &SectionId,
    config: SessionConfig,
    seed: u64,
) -> Result<Session, SessionError> {
    Session::start(curriculum, section, config, seed)
}

impl Session {
    pub fn start(
        curriculum: Arc<Curriculum>,
        section_id: &SectionId,
        config: SessionConfig,
        seed: u64,
    ) -> Result<Self, SessionError> {
        config.validate()?;
        let section = curriculum
            .section(section_id)
            .ok_or_else(|| SessionError::UnknownSection(section_id.clone()))?;

        let concept_bandit = ZpdesBandit::new(
            config.concept.clone(),
            section.concept_ids.iter().map(|c| {
                let concept = curriculum.concept(c).expect("validated curriculum");
                (
                    c.0.clone(),
                    concept.prerequisite_ids.iter().map(|p| p.0.clone()).collect(),
                )
            }),
        )?;

        let mut problem_bandits = BTreeMap::new();
        for c in &section.concept_ids {
            // Problem trees are one level deep: every problem is a root.
            let mut bandit = ZpdesBandit::new(
                config.problem.clone(),
                curriculum.problems_of(c).map(|p| (p.id.0.clone(), Vec::new())),
            )?;
            if config.difficulty.enabled {
                for (activity, problem) in bandit.activities_mut().zip(curriculum.problems_of(c)) {
                    activity.multiplier =
                        initial_multiplier(problem.difficulty, config.difficulty.xi_skew);
                }
            }
            problem_bandits.insert(c.clone(), bandit);
        }

        let state = SessionState {
            session_id: format!("{section_id}-{seed:016x}"),
            section_id: section_id.clone(),
            seed,
            config,
            concept_bandit,
            problem_bandits,
            memory: TraceStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            log: Vec::new(),
            outstanding: None,
            clock: 0.0,
            complete: false,
        };
        Ok(Self { curriculum, state })
    }

    pub fn with_session_id(mut self, id: impl Into<String>) -> Self {
        self.state.session_id = id.into();
        self
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn curriculum(&self) -> &Arc<Curriculum> {
        &self.curriculum
    }

    pub fn session_id(&self) -> &str {
        &self.state.session_id
    }

    pub fn section_id(&self) -> &SectionId {
        &self.state.section_id
    }

    pub fn log(&self) -> &[Interaction] {
        &self.state.log
    }

    pub fn is_complete(&self) -> bool {
        self.state.complete
    }

    pub fn outstanding(&self) -> Option<&Pending> {
        self.state.outstanding.as_ref()
    }

    pub fn concept_bandit(&self) -> &ZpdesBandit {
        &self.state.concept_bandit
    }

    pub fn problem_bandit(&self, concept: &ConceptId) -> Option<&ZpdesBandit> {
        self.state.problem_bandits.get(concept)
    }

    pub fn progress(&self) -> Vec<ConceptProgress> {
        self.state
            .concept_bandit
            .activities()
            .iter()
            .map(|a| ConceptProgress {
                concept_id: ConceptId(a.activity_id.clone()),
                belief: a.belief,
            })
            .collect()
    }

    /// Mastered concepts that can be reviewed: they still have unanswered
    /// problems and their memory strength has a positive re-entry weight.
    fn learned_set_candidates(&self) -> Vec<Candidate<String>> {
        let memory = &self.state.config.memory;
        let now = self.state.clock;
        self.state
            .concept_bandit
            .activities()
            .iter()
            .filter(|a| a.belief == Belief::Mastered)
            .filter(|a| {
                self.state.problem_bandits[a.activity_id.as_str()]
                    .zpd()
                    .next()
                    .is_some()
            })
            .filter_map(|a| {
                let strength = self.state.memory.strength(&a.activity_id, now, memory)?;
                Some(Candidate::new(
                    a.activity_id.clone(),
                    learned_set_weight(strength, memory),
                    1.0,
                ))
            })
            .collect()
    }

    /// Concept selection distribution for the current state: the ZPD, plus
    /// the learned set when memory modelling is enabled, normalized jointly.
    pub fn concept_probabilities(&self) -> Result<Probabilities<String>, SessionError> {
        let mut candidates = self.state.concept_bandit.zpd_candidates();
        if candidates.is_empty() {
            return Err(SessionError::Internal(
                "concept ZPD is empty while unmastered concepts remain".into(),
            ));
        }
        if self.state.config.memory.enabled {
            candidates.extend(self.learned_set_candidates());
        }
        Ok(selection_probabilities(
            &candidates,
            self.state.config.concept.gamma,
        )?)
    }

    /// Problem selection distribution for one concept (weights times
    /// multipliers over unanswered problems).
    pub fn problem_probabilities(
        &self,
        concept: &ConceptId,
    ) -> Result<Probabilities<String>, SessionError> {
        let bandit = self
            .state
            .problem_bandits
            .get(concept)
            .ok_or_else(|| SessionError::Internal(format!("no problem bandit for `{concept}`")))?;
        bandit.probabilities().map_err(|_| {
            SessionError::Internal(format!("concept `{concept}` has no unanswered problems"))
        })
    }

    fn recommendation_for(&self, pending: &Pending) -> Recommendation {
        let problem = self
            .curriculum
            .problem(&pending.problem_id)
            .expect("session problems come from its curriculum");
        Recommendation {
            concept_id: pending.concept_id.clone(),
            problem_id: pending.problem_id.clone(),
            prompt: problem.prompt.clone(),
            choices: problem.choices.clone(),
            review: pending.review,
        }
    }

    /// Picks the next concept and problem. While a recommendation is
    /// outstanding it is returned again and no randomness is consumed.
    pub fn next_recommendation(&mut self) -> Result<Recommendation, SessionError> {
        if let Some(pending) = &self.state.outstanding {
            return Ok(self.recommendation_for(pending));
        }
        if self.state.complete {
            return Err(SessionError::Complete);
        }
        let concept_probs = self.concept_probabilities()?;
        let concept = ConceptId(select_activity(&concept_probs, &mut self.state.rng)?);
        let problem_probs = self.problem_probabilities(&concept)?;
        let problem = ProblemId(select_activity(&problem_probs, &mut self.state.rng)?);
        let review = self
            .state
            .concept_bandit
            .get(concept.as_str())
            .is_some_and(|a| a.belief == Belief::Mastered);
        let pending = Pending {
            concept_id: concept,
            problem_id: problem,
            review,
        };
        let rec = self.recommendation_for(&pending);
        self.state.outstanding = Some(pending);
        Ok(rec)
    }

    /// Applies an answer to the outstanding recommendation.
    ///
    /// Update order: problem bandit, difficulty multipliers, concept bandit
    /// and threshold mastery, bank exhaustion, ZPD refresh, memory trace,
    /// completion.
    pub fn record_answer(
        &mut self,
        problem_id: &ProblemId,
        raw_correct: bool,
        now: f64,
    ) -> Result<AnswerReport, SessionError> {
        let problem = self
            .curriculum
            .problem(problem_id)
            .ok_or_else(|| SessionError::UnknownProblem(problem_id.clone()))?;
        let concept_id = problem.concept_id.clone();
        let difficulty = problem.difficulty;

        let pending = match &self.state.outstanding {
            Some(p) if &p.problem_id == problem_id => p.clone(),
            _ => {
                let mastered = self
                    .state
                    .problem_bandits
                    .get(&concept_id)
                    .and_then(|b| b.get(problem_id.as_str()))
                    .is_some_and(|a| a.belief == Belief::Mastered);
                return Err(if mastered {
                    SessionError::AlreadyMastered(problem_id.clone())
                } else {
                    SessionError::NotRecommended(problem_id.clone())
                });
            }
        };
        debug_assert_eq!(pending.concept_id, concept_id);

        let config = self.state.config.clone();
        let raw = if raw_correct { 1.0 } else { 0.0 };

        // (1) problem bandit: raw correctness, one-time mastery.
        let problem_bandit = self
            .state
            .problem_bandits
            .get_mut(&concept_id)
            .ok_or_else(|| SessionError::Internal(format!("no problem bandit for `{concept_id}`")))?;
        let problem_reward = problem_bandit.record(problem_id.as_str(), raw)?;
        if raw_correct {
            problem_bandit.mark_mastered(problem_id.as_str())?;
        }

        // (2) difficulty multipliers over the concept's problems.
        if config.difficulty.enabled {
            let difficulties: Vec<f64> = self
                .curriculum
                .problems_of(&concept_id)
                .map(|p| p.difficulty)
                .collect();
            maple_update(
                difficulties
                    .iter()
                    .copied()
                    .zip(problem_bandit.activities_mut().map(|a| &mut a.multiplier)),
                difficulty,
                raw_correct,
                config.difficulty.alpha,
            );
            if let Some(cap) = config.difficulty.max_multiplier {
                for a in problem_bandit.activities_mut() {
                    a.multiplier = a.multiplier.min(cap);
                }
            }
        }
        let bank_exhausted = problem_bandit.all_mastered();

        // (3) concept bandit: scaled correctness and threshold mastery.
        let scaled = if config.difficulty.enabled {
            scale_correctness(raw_correct, difficulty)
        } else {
            raw
        };
        let concepts = &mut self.state.concept_bandit;
        let concept_reward = concepts.record(concept_id.as_str(), scaled)?;
        let was_unmastered = concepts
            .get(concept_id.as_str())
            .is_some_and(|a| a.belief == Belief::UnlockedUnmastered);
        let mut concept_mastered = None;
        if was_unmastered && concepts.meets_threshold(concept_id.as_str())? {
            concepts.mark_mastered(concept_id.as_str())?;
            concept_mastered = Some(MasteryCause::Threshold);
        }

        // (4) bank exhaustion overrides the threshold.
        if was_unmastered && concept_mastered.is_none() && bank_exhausted {
            concepts.mark_mastered(concept_id.as_str())?;
            concept_mastered = Some(MasteryCause::BankExhausted);
        }

        // (5) unlock dependents.
        let unlocked = concepts.refresh_zpd().into_iter().map(ConceptId).collect();

        // (6) memory trace.
        self.state
            .memory
            .record_presentation(concept_id.as_str(), now, &config.memory);

        // (7) completion.
        self.state.complete = self.state.concept_bandit.all_mastered();

        self.state.log.push(Interaction {
            timestamp: now,
            concept_id: concept_id.clone(),
            problem_id: problem_id.clone(),
            raw_correct,
            scaled_correctness: scaled,
        });
        self.state.outstanding = None;
        self.state.clock = now;

        Ok(AnswerReport {
            concept_id,
            problem_id: problem_id.clone(),
            correct: raw_correct,
            scaled_correctness: scaled,
            problem_reward,
            concept_reward,
            problem_mastered: raw_correct,
            concept_mastered,
            unlocked,
            complete: self.state.complete,
        })
    }

    /// Versioned JSON snapshot of the full session state, including the
    /// generator position.
    pub fn snapshot(&self) -> String {
        serde_json::to_string(&SnapshotOut {
            format: SNAPSHOT_FORMAT,
            version: SNAPSHOT_VERSION,
            state: &self.state,
        })
        .expect("session state serializes")
    }

    pub fn restore(payload: &str, curriculum: Arc<Curriculum>) -> Result<Self, SessionError> {
        let raw: SnapshotIn =
            serde_json::from_str(payload).map_err(|e| SessionError::Corrupt(e.to_string()))?;
        if raw.format != SNAPSHOT_FORMAT {
            return Err(SessionError::Corrupt(format!(
                "unexpected format tag `{}`",
                raw.format
            )));
        }
        if raw.version != serde_json::Value::from(SNAPSHOT_VERSION) {
            return Err(SessionError::VersionMismatch {
                expected: SNAPSHOT_VERSION.to_string(),
                found: raw.version.to_string(),
            });
        }
        let state: SessionState =
            serde_json::from_value(raw.state).map_err(|e| SessionError::Corrupt(e.to_string()))?;
        let session = Self { curriculum, state };
        session.check_against_curriculum()?;
        Ok(session)
    }

    fn check_against_curriculum(&self) -> Result<(), SessionError> {
        let corrupt = |m: String| Err(SessionError::Corrupt(m));
        self.state.config.validate()?;
        let Some(section) = self.curriculum.section(&self.state.section_id) else {
            return corrupt(format!("unknown section `{}`", self.state.section_id));
        };
        let concept_ids: Vec<&str> = self
            .state
            .concept_bandit
            .activities()
            .iter()
            .map(|a| a.activity_id.as_str())
            .collect();
        let expected: Vec<&str> = section.concept_ids.iter().map(|c| c.as_str()).collect();
        if concept_ids != expected {
            return corrupt("concept bandit does not match the section".into());
        }
        if !self.state.problem_bandits.keys().map(|k| k.as_str()).eq(
            section
                .concept_ids
                .iter()
                .map(|c| c.as_str())
                .collect::<std::collections::BTreeSet<_>>(),
        ) {
            return corrupt("problem bandits do not match the section".into());
        }
        for (concept, bandit) in &self.state.problem_bandits {
            let ids: Vec<&str> = bandit
                .activities()
                .iter()
                .map(|a| a.activity_id.as_str())
                .collect();
            let expected: Vec<&str> = self
                .curriculum
                .problems_of(concept)
                .map(|p| p.id.as_str())
                .collect();
            if ids != expected {
                return corrupt(format!("problem bandit for `{concept}` does not match"));
            }
            bandit.check_invariants().map_err(SessionError::Corrupt)?;
        }
        self.state
            .concept_bandit
            .check_invariants()
            .map_err(SessionError::Corrupt)?;
        if self.state.complete != self.state.concept_bandit.all_mastered() {
            return corrupt("completion flag inconsistent".into());
        }
        let presentations: usize = self
            .state
            .problem_bandits
            .values()
            .flat_map(|b| b.activities())
            .map(|a| a.correctness_history.len())
            .sum();
        if presentations != self.state.log.len() {
            return corrupt("log length does not match presentations".into());
        }
        if let Some(p) = &self.state.outstanding {
            let ok = self
                .state
                .problem_bandits
                .get(&p.concept_id)
                .and_then(|b| b.get(p.problem_id.as_str()))
                .is_some_and(|a| a.in_zpd());
            if !ok {
                return corrupt("outstanding recommendation is not answerable".into());
            }
        }
        Ok(())
    }

    /// Read-only view of weights, multipliers, ZPD membership and histories.
    pub fn diagnostics(&self) -> SessionDiagnostics {
        let memory = &self.state.config.memory;
        let now = self.state.clock;
        let concepts = self
            .state
            .concept_bandit
            .activities()
            .iter()
            .map(|a| ActivityDiagnostics {
                id: a.activity_id.clone(),
                belief: a.belief,
                in_zpd: a.in_zpd(),
                weight: a.weight(),
                multiplier: a.multiplier,
                difficulty: None,
                correctness_history: a.correctness_history.clone(),
                reward_history: a.reward_history.clone(),
                memory_strength: self.state.memory.strength(&a.activity_id, now, memory),
            })
            .collect();
        let problems = self
            .state
            .problem_bandits
            .iter()
            .map(|(c, b)| {
                let list = b
                    .activities()
                    .iter()
                    .map(|a| ActivityDiagnostics {
                        id: a.activity_id.clone(),
                        belief: a.belief,
                        in_zpd: a.in_zpd(),
                        weight: a.weight(),
                        multiplier: a.multiplier,
                        difficulty: self
                            .curriculum
                            .problem(&ProblemId(a.activity_id.clone()))
                            .map(|p| p.difficulty),
                        correctness_history: a.correctness_history.clone(),
                        reward_history: a.reward_history.clone(),
                        memory_strength: None,
                    })
                    .collect();
                (c.clone(), list)
            })
            .collect();
        SessionDiagnostics {
            session_id: self.state.session_id.clone(),
            section_id: self.state.section_id.clone(),
            seed: self.state.seed,
            complete: self.state.complete,
            clock: self.state.clock,
            outstanding: self.state.outstanding.clone(),
            concepts,
            problems,
            log: self.state.log.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityDiagnostics {
    pub id: String,
    pub belief: Belief,
    pub in_zpd: bool,
    pub weight: f64,
    pub multiplier: f64,
    pub difficulty: Option<f64>,
    pub correctness_history: Vec<f64>,
    pub reward_history: Vec<f64>,
    pub memory_strength: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDiagnostics {
    pub session_id: String,
    pub section_id: SectionId,
    pub seed: u64,
    pub complete: bool,
    pub clock: f64,
    pub outstanding: Option<Pending>,
    pub concepts: Vec<ActivityDiagnostics>,
    pub problems: BTreeMap<ConceptId, Vec<ActivityDiagnostics>>,
    pub log: Vec<Interaction>,
}
