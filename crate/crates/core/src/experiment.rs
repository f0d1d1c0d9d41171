//! Simulation harness comparing three sequencing policies on BKT students.
//!
//! * `random`: problems drawn uniformly from the current section's bank,
//!   with exactly as many questions per student as the matched
//!   difficulty-agnostic student needed.
//! * `agnostic`: the hierarchical bandit with every difficulty adjustment off.
//! * `full`: the hierarchical bandit with difficulty scaling, Gaussian
//!   initial multipliers and grade updates.
//!
//! Student `i` of every group is seeded with `base_seed + i`, so matched
//! students share their prior draws. Each policy takes its own random
//! choices from sub-seeds derived from the student seed.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curriculum::{
    generate_synthetic_curriculum, parse_shape, ConceptId, Curriculum, CurriculumError, ProblemId,
    SectionId,
};
use crate::session::{Session, SessionConfig, SessionError};
use crate::student::{BktParamSet, BktStudent, StudentError};

pub const DEFAULT_STUDENTS_PER_GROUP: usize = 500;

const SESSION_STREAM: u64 = 0x5e55_1011;
const RANDOM_STREAM: u64 = 0x0ad0_b0de;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Student(#[from] StudentError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("expected {expected} budgets, got {found}")]
    BudgetMismatch { expected: usize, found: usize },
    #[error("malformed results: {0}")]
    Malformed(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Group {
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "agnostic")]
    MabAgnostic,
    #[serde(rename = "full")]
    MabFull,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Random, Group::MabAgnostic, Group::MabFull];

    pub fn name(self) -> &'static str {
        match self {
            Group::Random => "random",
            Group::MabAgnostic => "agnostic",
            Group::MabFull => "full",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Group::Random => "Random (matched budget)",
            Group::MabAgnostic => "Difficulty-agnostic MAB",
            Group::MabFull => "Full MAB",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Group {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "random" => Ok(Group::Random),
            "agnostic" | "mab_difficulty_agnostic" => Ok(Group::MabAgnostic),
            "full" | "mab_full" => Ok(Group::MabFull),
            other => Err(format!(
                "unknown group `{other}` (expected random, agnostic or full)"
            )),
        }
    }
}

/// Parses a comma-separated group list, keeping the canonical order and
/// dropping duplicates.
pub fn parse_groups(list: &str) -> Result<Vec<Group>, String> {
    let mut groups: Vec<Group> = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_, _>>()?;
    groups.sort();
    groups.dedup();
    if groups.is_empty() {
        return Err("no groups given".into());
    }
    Ok(groups)
}

/// Where the curriculum comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum CurriculumSource {
    File(PathBuf),
    Synthetic {
        sections: usize,
        concepts_per_section: usize,
        problems_per_concept: usize,
    },
}

impl CurriculumSource {
    /// `synthetic:SxCxP` or a file path.
    pub fn parse(spec: &str) -> Result<Self, String> {
        match spec.strip_prefix("synthetic:") {
            Some(shape) => {
                let (s, c, p) = parse_shape(shape)
                    .ok_or_else(|| format!("bad synthetic shape `{shape}`, expected e.g. 5x3x10"))?;
                Ok(CurriculumSource::Synthetic {
                    sections: s,
                    concepts_per_section: c,
                    problems_per_concept: p,
                })
            }
            None => Ok(CurriculumSource::File(PathBuf::from(spec))),
        }
    }

    /// Synthetic curricula are generated from `seed`.
    pub fn load(&self, seed: u64) -> Result<Curriculum, CurriculumError> {
        match self {
            CurriculumSource::File(path) => Curriculum::from_file(path),
            CurriculumSource::Synthetic {
                sections,
                concepts_per_section,
                problems_per_concept,
            } => generate_synthetic_curriculum(
                *sections,
                *concepts_per_section,
                *problems_per_concept,
                seed,
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub curriculum: Arc<Curriculum>,
    pub bkt: BktParamSet,
    pub groups: Vec<Group>,
    pub students_per_group: usize,
    pub base_seed: u64,
    /// Bandit hyperparameters shared by both bandit groups. The difficulty
    /// switch is overridden per group.
    pub config: SessionConfig,
}

impl ExperimentPlan {
    /// Default hyperparameters, synthetic BKT parameters seeded from
    /// `base_seed`, all three groups.
    pub fn new(curriculum: Arc<Curriculum>, base_seed: u64) -> Self {
        let bkt = BktParamSet::synthetic(&curriculum, base_seed);
        Self {
            curriculum,
            bkt,
            groups: Group::ALL.to_vec(),
            students_per_group: DEFAULT_STUDENTS_PER_GROUP,
            base_seed,
            config: SessionConfig::default(),
        }
    }

    pub fn with_students(mut self, n: usize) -> Self {
        self.students_per_group = n;
        self
    }

    pub fn with_groups(mut self, groups: Vec<Group>) -> Self {
        self.groups = groups;
        self
    }

    /// Switches the forgetting model on for both bandit groups.
    pub fn with_mcm(mut self, enabled: bool) -> Self {
        self.config.memory.enabled = enabled;
        self
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.students_per_group == 0 {
            return Err(ExperimentError::InvalidPlan(
                "students_per_group must be at least 1".into(),
            ));
        }
        if self.groups.is_empty() {
            return Err(ExperimentError::InvalidPlan("no groups".into()));
        }
        self.config.validate()?;
        self.bkt.validate()?;
        self.bkt.covers(&self.curriculum)?;
        Ok(())
    }

    pub fn student_seed(&self, student: usize) -> u64 {
        self.base_seed.wrapping_add(student as u64)
    }

    fn group_config(&self, group: Group) -> SessionConfig {
        let mut config = self.config.clone();
        config.difficulty.enabled = group == Group::MabFull;
        config
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent sub-seed for `(stream, index)` under a student seed.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(stream)) ^ index)
}

/// Session seed for section `section` (curriculum order) of a student.
pub fn section_session_seed(student_seed: u64, section: usize) -> u64 {
    derive_seed(student_seed, SESSION_STREAM, section as u64)
}

/// State after one question, or the starting state at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_index: usize,
    pub section_id: Option<SectionId>,
    pub concept_id: Option<ConceptId>,
    pub problem_id: Option<ProblemId>,
    pub difficulty: Option<f64>,
    pub correct: Option<bool>,
    /// Mean BKT posterior over all concepts.
    pub mastery: f64,
    /// Fraction of concepts whose hidden state is learned.
    pub latent_mastery: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentLog {
    pub student: usize,
    pub seed: u64,
    /// `records[q]` is the state after `q` questions.
    pub records: Vec<QuestionRecord>,
}

impl StudentLog {
    pub fn question_count(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn trajectory(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.mastery)
    }

    pub fn final_mastery(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.mastery)
    }

    /// Questions answered in each section, in curriculum order.
    pub fn section_counts(&self, curriculum: &Curriculum) -> Vec<usize> {
        curriculum
            .sections()
            .iter()
            .map(|s| {
                self.records
                    .iter()
                    .filter(|r| r.section_id.as_ref() == Some(&s.id))
                    .count()
            })
            .collect()
    }
}

fn initial_record(student: &BktStudent) -> QuestionRecord {
    QuestionRecord {
        question_index: 0,
        section_id: None,
        concept_id: None,
        problem_id: None,
        difficulty: None,
        correct: None,
        mastery: student.mastery_estimate(),
        latent_mastery: student.latent_mastery(),
    }
}

fn attempt_record(
    curriculum: &Curriculum,
    student: &mut BktStudent,
    problem_id: &ProblemId,
    question_index: usize,
) -> Result<QuestionRecord, ExperimentError> {
    let problem = curriculum
        .problem(problem_id)
        .ok_or_else(|| SessionError::UnknownProblem(problem_id.clone()))?;
    let section_id = curriculum
        .concept(&problem.concept_id)
        .map(|c| c.section_id.clone());
    let correct = student.attempt(&problem.concept_id)?;
    Ok(QuestionRecord {
        question_index,
        section_id,
        concept_id: Some(problem.concept_id.clone()),
        problem_id: Some(problem_id.clone()),
        difficulty: Some(problem.difficulty),
        correct: Some(correct),
        mastery: student.mastery_estimate(),
        latent_mastery: student.latent_mastery(),
    })
}

/// One student through every section in order, each to completion.
pub fn simulate_mab_student(
    plan: &ExperimentPlan,
    config: &SessionConfig,
    student_index: usize,
) -> Result<StudentLog, ExperimentError> {
    let seed = plan.student_seed(student_index);
    let mut student = BktStudent::new(&plan.bkt, seed);
    let mut records = vec![initial_record(&student)];
    for (s, section) in plan.curriculum.sections().iter().enumerate() {
        let session_seed = section_session_seed(seed, s);
        let mut session = Session::start(
            plan.curriculum.clone(),
            &section.id,
            config.clone(),
            session_seed,
        )?;
        while !session.is_complete() {
            let rec = session.next_recommendation()?;
            let q = records.len();
            let record = attempt_record(&plan.curriculum, &mut student, &rec.problem_id, q)?;
            let correct = record.correct.unwrap_or(false);
            records.push(record);
            // Logical time is the global question index.
            session.record_answer(&rec.problem_id, correct, q as f64)?;
        }
    }
    Ok(StudentLog {
        student: student_index,
        seed,
        records,
    })
}

pub fn run_group_mab(
    plan: &ExperimentPlan,
    difficulty_enabled: bool,
) -> Result<Vec<StudentLog>, ExperimentError> {
    plan.validate()?;
    let config = plan.group_config(if difficulty_enabled {
        Group::MabFull
    } else {
        Group::MabAgnostic
    });
    (0..plan.students_per_group)
        .into_par_iter()
        .map(|i| simulate_mab_student(plan, &config, i))
        .collect()
}

/// One random-policy student answering exactly `allocation.iter().sum()`
/// questions.
///
/// Each section gets its allocation plus whatever an earlier section could
/// not spend because its bank ran out. If the last section's bank runs out
/// with budget left, its full bank is reopened.
pub fn simulate_random_student(
    plan: &ExperimentPlan,
    student_index: usize,
    allocation: &[usize],
) -> Result<StudentLog, ExperimentError> {
    let sections = plan.curriculum.sections();
    if allocation.len() != sections.len() {
        return Err(ExperimentError::InvalidPlan(format!(
            "allocation covers {} sections, curriculum has {}",
            allocation.len(),
            sections.len()
        )));
    }
    let seed = plan.student_seed(student_index);
    let mut student = BktStudent::new(&plan.bkt, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, RANDOM_STREAM, 0));
    let mut records = vec![initial_record(&student)];
    let mut carry = 0usize;
    for (s, section) in sections.iter().enumerate() {
        let last = s + 1 == sections.len();
        let bank: Vec<ProblemId> = plan
            .curriculum
            .problems_of_section(section)
            .map(|p| p.id.clone())
            .collect();
        let mut open = bank.clone();
        let mut quota = allocation[s] + carry;
        while quota > 0 {
            if open.is_empty() {
                if !last {
                    break;
                }
                open = bank.clone();
            }
            let pick = rng.random_range(0..open.len());
            let q = records.len();
            let record = attempt_record(&plan.curriculum, &mut student, &open[pick], q)?;
            if record.correct == Some(true) {
                open.remove(pick);
            }
            records.push(record);
            quota -= 1;
        }
        carry = quota;
    }
    Ok(StudentLog {
        student: student_index,
        seed,
        records,
    })
}

/// Random-policy group. `allocations[i]` holds student `i`'s per-section
/// question counts, normally taken from the difficulty-agnostic group.
pub fn run_group_random(
    plan: &ExperimentPlan,
    allocations: &[Vec<usize>],
) -> Result<Vec<StudentLog>, ExperimentError> {
    plan.validate()?;
    if allocations.len() != plan.students_per_group {
        return Err(ExperimentError::BudgetMismatch {
            expected: plan.students_per_group,
            found: allocations.len(),
        });
    }
    allocations
        .par_iter()
        .enumerate()
        .map(|(i, a)| simulate_random_student(plan, i, a))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub question_index: usize,
    pub mean_mastery: f64,
    pub stderr: f64,
}

/// Mean mastery after `q` questions for `q = 0..len`. Students that have
/// finished hold their final value.
pub fn aggregate_curve(logs: &[StudentLog], len: usize) -> Vec<CurvePoint> {
    let n = logs.len() as f64;
    (0..len)
        .map(|q| {
            let values = logs.iter().map(|l| {
                let r = l.records.get(q).or(l.records.last());
                r.map_or(0.0, |r| r.mastery)
            });
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for v in values {
                sum += v;
                sum_sq += v * v;
            }
            let mean = if logs.is_empty() { 0.0 } else { sum / n };
            let stderr = if logs.len() < 2 {
                0.0
            } else {
                let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
                (var / n).sqrt()
            };
            CurvePoint {
                question_index: q,
                mean_mastery: mean,
                stderr,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentResult {
    pub logs: BTreeMap<Group, Vec<StudentLog>>,
    pub curves: BTreeMap<Group, Vec<CurvePoint>>,
}

/// Curves for every group, padded to the longest student across all groups.
pub fn aggregate_curves(logs: BTreeMap<Group, Vec<StudentLog>>) -> ExperimentResult {
    let len = logs
        .values()
        .flatten()
        .map(|l| l.records.len())
        .max()
        .unwrap_or(1);
    let curves = logs
        .iter()
        .map(|(g, l)| (*g, aggregate_curve(l, len)))
        .collect();
    ExperimentResult { logs, curves }
}

impl ExperimentResult {
    pub fn question_counts(&self, group: Group) -> Vec<usize> {
        self.logs
            .get(&group)
            .map(|l| l.iter().map(StudentLog::question_count).collect())
            .unwrap_or_default()
    }

    pub fn final_mean(&self, group: Group) -> Option<f64> {
        self.curves
            .get(&group)
            .and_then(|c| c.last())
            .map(|p| p.mean_mastery)
    }

    pub fn max_question_index(&self) -> usize {
        self.curves
            .values()
            .map(|c| c.len().saturating_sub(1))
            .max()
            .unwrap_or(0)
    }
}

/// Runs every group of the plan. The difficulty-agnostic group is always
/// simulated when the random group is requested, since it sets the budgets.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentResult, ExperimentError> {
    plan.validate()?;
    let mut logs = BTreeMap::new();
    let wants = |g| plan.groups.contains(&g);
    let agnostic = if wants(Group::MabAgnostic) || wants(Group::Random) {
        Some(run_group_mab(plan, false)?)
    } else {
        None
    };
    if wants(Group::Random) {
        let allocations: Vec<Vec<usize>> = agnostic
            .as_ref()
            .expect("simulated above")
            .iter()
            .map(|l| l.section_counts(&plan.curriculum))
            .collect();
        logs.insert(Group::Random, run_group_random(plan, &allocations)?);
    }
    if wants(Group::MabAgnostic) {
        logs.insert(Group::MabAgnostic, agnostic.expect("simulated above"));
    }
    if wants(Group::MabFull) {
        logs.insert(Group::MabFull, run_group_mab(plan, true)?);
    }
    Ok(aggregate_curves(logs))
}

#[derive(Debug, Serialize, Deserialize)]
struct CurveRow {
    group: Group,
    question_index: usize,
    mean_mastery: f64,
    stderr: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CountRow {
    group: Group,
    student: usize,
    seed: u64,
    questions: usize,
}

pub const CURVES_FILE: &str = "curves.csv";
pub const COUNTS_FILE: &str = "counts.csv";
pub const LOGS_DIR: &str = "logs";
pub const PLOT_FILE: &str = "mastery.svg";

fn log_file_name(group: Group, student: usize) -> String {
    format!("{}-{student:05}.csv", group.name())
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(io_err(path))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, ExperimentError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Writes `curves.csv`, `counts.csv`, `logs/<group>-<student>.csv` and the
/// plot.
pub fn emit(result: &ExperimentResult, dir: &Path) -> Result<(), ExperimentError> {
    let logs_dir = dir.join(LOGS_DIR);
    fs::create_dir_all(&logs_dir).map_err(io_err(&logs_dir))?;

    write_csv(
        &dir.join(CURVES_FILE),
        result.curves.iter().flat_map(|(g, c)| {
            c.iter().map(move |p| CurveRow {
                group: *g,
                question_index: p.question_index,
                mean_mastery: p.mean_mastery,
                stderr: p.stderr,
            })
        }),
    )?;

    write_csv(
        &dir.join(COUNTS_FILE),
        result.logs.iter().flat_map(|(g, logs)| {
            logs.iter().map(move |l| CountRow {
                group: *g,
                student: l.student,
                seed: l.seed,
                questions: l.question_count(),
            })
        }),
    )?;

    for (g, logs) in &result.logs {
        for l in logs {
            write_csv(&logs_dir.join(log_file_name(*g, l.student)), &l.records)?;
        }
    }

    let plot = dir.join(PLOT_FILE);
    fs::write(&plot, crate::plot::render_svg(&result.curves)).map_err(io_err(&plot))
}

/// Reads the curves only, enough to redraw the plot.
pub fn load_curves(dir: &Path) -> Result<BTreeMap<Group, Vec<CurvePoint>>, ExperimentError> {
    let mut curves: BTreeMap<Group, Vec<CurvePoint>> = BTreeMap::new();
    for row in read_csv::<CurveRow>(&dir.join(CURVES_FILE))? {
        let curve = curves.entry(row.group).or_default();
        if row.question_index != curve.len() {
            return Err(ExperimentError::Malformed(format!(
                "{}: question_index {} out of sequence",
                row.group, row.question_index
            )));
        }
        curve.push(CurvePoint {
            question_index: row.question_index,
            mean_mastery: row.mean_mastery,
            stderr: row.stderr,
        });
    }
    Ok(curves)
}

/// Loads everything [`emit`] wrote.
pub fn load_result(dir: &Path) -> Result<ExperimentResult, ExperimentError> {
    let curves = load_curves(dir)?;
    let mut logs: BTreeMap<Group, Vec<StudentLog>> = BTreeMap::new();
    for row in read_csv::<CountRow>(&dir.join(COUNTS_FILE))? {
        let path = dir.join(LOGS_DIR).join(log_file_name(row.group, row.student));
        let records: Vec<QuestionRecord> = read_csv(&path)?;
        if records.len() != row.questions + 1 {
            return Err(ExperimentError::Malformed(format!(
                "{}: {} records for {} questions",
                path.display(),
                records.len(),
                row.questions
            )));
        }
        logs.entry(row.group).or_default().push(StudentLog {
            student: row.student,
            seed: row.seed,
            records,
        });
    }
    Ok(ExperimentResult { logs, curves })
}
