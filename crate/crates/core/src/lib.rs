//! Hierarchical multi-armed bandit tutoring engine.
//!
//! A concept bandit picks which concept of a section to quiz next; a problem
//! bandit for that concept picks the question. Both follow the ZPDES scheme
//! (learning-progress rewards over a zone of proximal development), with
//! difficulty-aware correctness scaling and multipliers on the problem side
//! and an optional multiscale forgetting model on the concept side.
//!
//! The crate also ships a Bayesian knowledge tracing student simulator and
//! the experiment harness that compares random, difficulty-agnostic and
//! difficulty-aware sequencing.

pub mod bandit;
pub mod curriculum;
pub mod difficulty;
pub mod experiment;
pub mod memory;
pub mod plot;
pub mod session;
pub mod student;

pub use bandit::{BanditConfig, Belief};
pub use curriculum::{
    generate_synthetic_curriculum, load_curriculum, ConceptId, Curriculum, CurriculumError,
    ProblemId, SectionId,
};
pub use difficulty::DifficultyConfig;
pub use experiment::{
    run_experiment, CurriculumSource, ExperimentError, ExperimentPlan, ExperimentResult, Group,
};
pub use memory::MemoryConfig;
pub use session::{start_session, Recommendation, Session, SessionConfig, SessionError};
pub use student::{BktParamSet, BktParams, BktStudent};
