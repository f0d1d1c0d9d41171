//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use bandit_tutor_core::bandit::Candidate;
use bandit_tutor_core::{generate_synthetic_curriculum, Curriculum, Session, SessionConfig};

/// The 5 sections x 3 concepts x 10 problems shape used by the experiments.
pub fn standard_curriculum(seed: u64) -> Arc<Curriculum> {
    Arc::new(generate_synthetic_curriculum(5, 3, 10, seed).expect("valid shape"))
}

/// `n` candidates with varied weights and multipliers.
pub fn candidates(n: usize) -> Vec<Candidate<usize>> {
    (0..n)
        .map(|i| {
            let x = i as f64;
            Candidate::new(i, (x * 0.37).sin().abs(), 0.5 + (x * 0.11).cos().abs())
        })
        .collect()
}

/// Runs one section to completion, answering every `period`-th question
/// wrong. Returns the number of questions asked.
pub fn run_section(curriculum: &Arc<Curriculum>, config: &SessionConfig, seed: u64, period: usize) -> usize {
    let section = curriculum.sections()[0].id.clone();
    let mut session = Session::start(curriculum.clone(), &section, config.clone(), seed)
        .expect("section exists");
    let mut asked = 0;
    while !session.is_complete() {
        let rec = session.next_recommendation().expect("incomplete session");
        asked += 1;
        let correct = asked % period != 0;
        session
            .record_answer(&rec.problem_id, correct, asked as f64)
            .expect("outstanding problem");
    }
    asked
}
