//! Content universe: sections, per-section concept prerequisite DAGs and
//! per-concept problem banks.
//!
//! A curriculum is loaded from a JSON file (see `docs/curriculum-schema.md`),
//! validated once, and then treated as immutable. Sessions hold it behind an
//! `Arc` and only ever read from it.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lowest difficulty score a problem may carry.
pub const MIN_DIFFICULTY: f64 = 1.0;
/// Highest difficulty score a problem may carry.
pub const MAX_DIFFICULTY: f64 = 5.0;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }

        impl std::borrow::Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }
    };
}

string_id!(
    /// Identifier of a [`Section`].
    SectionId
);
string_id!(
    /// Identifier of a [`Concept`].
    ConceptId
);
string_id!(
    /// Identifier of a [`Problem`].
    ProblemId
);

#[derive(Debug, Error)]
pub enum CurriculumError {
    #[error("failed to read curriculum file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse curriculum: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("validation error: {0}")]
    Invalid(#[from] ValidationError),
    #[error("invalid synthetic curriculum shape: {0}")]
    Shape(String),
}

/// The first invariant a curriculum violates.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("curriculum has no sections")]
    NoSections,
    #[error("section `{0}` has no concepts")]
    EmptySection(SectionId),
    #[error("concept `{0}` has an empty problem bank")]
    EmptyProblemBank(ConceptId),
    #[error("duplicate section id `{0}`")]
    DuplicateSection(SectionId),
    #[error("duplicate concept id `{0}`")]
    DuplicateConcept(ConceptId),
    #[error("duplicate problem id `{0}`")]
    DuplicateProblem(ProblemId),
    #[error("concept `{concept}` lists prerequisite `{prerequisite}` more than once")]
    DuplicatePrerequisite {
        concept: ConceptId,
        prerequisite: ConceptId,
    },
    #[error("concept `{concept}` references unknown prerequisite `{prerequisite}` (dangling id)")]
    DanglingPrerequisite {
        concept: ConceptId,
        prerequisite: ConceptId,
    },
    #[error("concept `{concept}` in section `{section}` lists prerequisite `{prerequisite}` from another section")]
    CrossSectionPrerequisite {
        section: SectionId,
        concept: ConceptId,
        prerequisite: ConceptId,
    },
    #[error("prerequisite cycle in section `{section}` through concepts {concepts:?}")]
    Cycle {
        section: SectionId,
        concepts: Vec<ConceptId>,
    },
    #[error("section `{0}` has no root concept")]
    NoRoot(SectionId),
    #[error("problem `{problem}` difficulty out of range: {difficulty} not in [1, 5]")]
    DifficultyOutOfRange { problem: ProblemId, difficulty: f64 },
    #[error("problem `{problem}` correct_choice {index} is not a valid index into {choices} choices")]
    InvalidCorrectChoice {
        problem: ProblemId,
        index: usize,
        choices: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub id: ProblemId,
    pub concept_id: ConceptId,
    pub difficulty: f64,
    pub prompt: String,
    pub choices: Vec<String>,
    pub correct_choice: usize,
}

impl Problem {
    pub fn is_correct(&self, choice: usize) -> bool {
        choice == self.correct_choice
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Concept {
    pub id: ConceptId,
    pub section_id: SectionId,
    pub prerequisite_ids: Vec<ConceptId>,
    pub problem_ids: Vec<ProblemId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub id: SectionId,
    pub title: String,
    pub concept_ids: Vec<ConceptId>,
}

/// A validated curriculum. Construct with [`Curriculum::from_file`],
/// [`Curriculum::from_json`] or [`generate_synthetic_curriculum`].
#[derive(Debug, Clone, PartialEq)]
pub struct Curriculum {
    sections: Vec<Section>,
    concepts: BTreeMap<ConceptId, Concept>,
    problems: BTreeMap<ProblemId, Problem>,
}

// File schema. Kept separate from the indexed in-memory form.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumFile {
    pub sections: Vec<SectionFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionFile {
    pub id: SectionId,
    pub title: String,
    pub concepts: Vec<ConceptFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptFile {
    pub id: ConceptId,
    pub prerequisites: Vec<ConceptId>,
    pub problems: Vec<ProblemFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub id: ProblemId,
    pub difficulty: f64,
    pub prompt: String,
    pub choices: Vec<String>,
    pub correct_choice: usize,
}

/// Loads and validates a curriculum file.
pub fn load_curriculum(path: impl AsRef<Path>) -> Result<Curriculum, CurriculumError> {
    Curriculum::from_file(path)
}

impl Curriculum {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, CurriculumError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, CurriculumError> {
        let file: CurriculumFile = serde_json::from_str(text)?;
        Ok(Self::from_schema(file)?)
    }

    /// Builds the indexed form and checks every invariant, reporting the
    /// first violation found.
    pub fn from_schema(file: CurriculumFile) -> Result<Self, ValidationError> {
        if file.sections.is_empty() {
            return Err(ValidationError::NoSections);
        }
        let mut sections = Vec::with_capacity(file.sections.len());
        let mut concepts = BTreeMap::new();
        let mut problems = BTreeMap::new();
        let mut section_ids = HashSet::new();

        for section in file.sections {
            if !section_ids.insert(section.id.clone()) {
                return Err(ValidationError::DuplicateSection(section.id));
            }
            if section.concepts.is_empty() {
                return Err(ValidationError::EmptySection(section.id));
            }
            let mut concept_ids = Vec::with_capacity(section.concepts.len());
            for concept in section.concepts {
                if concepts.contains_key(&concept.id) {
                    return Err(ValidationError::DuplicateConcept(concept.id));
                }
                if concept.problems.is_empty() {
                    return Err(ValidationError::EmptyProblemBank(concept.id));
                }
                let mut seen = HashSet::new();
                for pre in &concept.prerequisites {
                    if !seen.insert(pre) {
                        return Err(ValidationError::DuplicatePrerequisite {
                            concept: concept.id.clone(),
                            prerequisite: pre.clone(),
                        });
                    }
                }
                let mut problem_ids = Vec::with_capacity(concept.problems.len());
                for problem in concept.problems {
                    if problems.contains_key(&problem.id) {
                        return Err(ValidationError::DuplicateProblem(problem.id));
                    }
                    if !(MIN_DIFFICULTY..=MAX_DIFFICULTY).contains(&problem.difficulty) {
                        return Err(ValidationError::DifficultyOutOfRange {
                            problem: problem.id,
                            difficulty: problem.difficulty,
                        });
                    }
                    if problem.correct_choice >= problem.choices.len() {
                        return Err(ValidationError::InvalidCorrectChoice {
                            problem: problem.id,
                            index: problem.correct_choice,
                            choices: problem.choices.len(),
                        });
                    }
                    problem_ids.push(problem.id.clone());
                    problems.insert(
                        problem.id.clone(),
                        Problem {
                            id: problem.id,
                            concept_id: concept.id.clone(),
                            difficulty: problem.difficulty,
                            prompt: problem.prompt,
                            choices: problem.choices,
                            correct_choice: problem.correct_choice,
                        },
                    );
                }
                concept_ids.push(concept.id.clone());
                concepts.insert(
                    concept.id.clone(),
                    Concept {
                        id: concept.id,
                        section_id: section.id.clone(),
                        prerequisite_ids: concept.prerequisites,
                        problem_ids,
                    },
                );
            }
            sections.push(Section {
                id: section.id,
                title: section.title,
                concept_ids,
            });
        }

        let curriculum = Self {
            sections,
            concepts,
            problems,
        };
        curriculum.check_prerequisites()?;
        Ok(curriculum)
    }

    fn check_prerequisites(&self) -> Result<(), ValidationError> {
        for section in &self.sections {
            for concept_id in &section.concept_ids {
                let concept = &self.concepts[concept_id];
                for pre in &concept.prerequisite_ids {
                    match self.concepts.get(pre) {
                        None => {
                            return Err(ValidationError::DanglingPrerequisite {
                                concept: concept_id.clone(),
                                prerequisite: pre.clone(),
                            })
                        }
                        Some(p) if p.section_id != section.id => {
                            return Err(ValidationError::CrossSectionPrerequisite {
                                section: section.id.clone(),
                                concept: concept_id.clone(),
                                prerequisite: pre.clone(),
                            })
                        }
                        Some(_) => {}
                    }
                }
            }
            self.topological_order_unchecked(section)?;
            if !section
                .concept_ids
                .iter()
                .any(|c| self.concepts[c].prerequisite_ids.is_empty())
            {
                return Err(ValidationError::NoRoot(section.id.clone()));
            }
        }
        Ok(())
    }

    /// Kahn's algorithm over one section. Ties are broken by declaration
    /// order so the result is deterministic.
    fn topological_order_unchecked(
        &self,
        section: &Section,
    ) -> Result<Vec<ConceptId>, ValidationError> {
        let index: BTreeMap<&ConceptId, usize> = section
            .concept_ids
            .iter()
            .enumerate()
            .map(|(i, c)| (c, i))
            .collect();
        let n = section.concept_ids.len();
        let mut indegree = vec![0usize; n];
        let mut dependents = vec![Vec::new(); n];
        for (i, c) in section.concept_ids.iter().enumerate() {
            for pre in &self.concepts[c].prerequisite_ids {
                let p = index[pre];
                indegree[i] += 1;
                dependents[p].push(i);
            }
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = queue.pop_front() {
            order.push(section.concept_ids[i].clone());
            for &d in &dependents[i] {
                indegree[d] -= 1;
                if indegree[d] == 0 {
                    queue.push_back(d);
                }
            }
        }
        if order.len() < n {
            let concepts = (0..n)
                .filter(|&i| indegree[i] > 0)
                .map(|i| section.concept_ids[i].clone())
                .collect();
            return Err(ValidationError::Cycle {
                section: section.id.clone(),
                concepts,
            });
        }
        Ok(order)
    }

    /// Topological order of a section's concepts, or `None` for an unknown
    /// section.
    pub fn topological_order(&self, section: &SectionId) -> Option<Vec<ConceptId>> {
        let section = self.section(section)?;
        Some(
            self.topological_order_unchecked(section)
                .expect("validated curriculum is acyclic"),
        )
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    pub fn section(&self, id: &SectionId) -> Option<&Section> {
        self.sections.iter().find(|s| &s.id == id)
    }

    pub fn concept(&self, id: &ConceptId) -> Option<&Concept> {
        self.concepts.get(id)
    }

    pub fn problem(&self, id: &ProblemId) -> Option<&Problem> {
        self.problems.get(id)
    }

    pub fn concepts(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.values()
    }

    pub fn problems(&self) -> impl Iterator<Item = &Problem> {
        self.problems.values()
    }

    pub fn concept_count(&self) -> usize {
        self.concepts.len()
    }

    pub fn problem_count(&self) -> usize {
        self.problems.len()
    }

    /// Concepts of every section, in section order then declaration order.
    pub fn concept_ids_in_order(&self) -> impl Iterator<Item = &ConceptId> {
        self.sections.iter().flat_map(|s| s.concept_ids.iter())
    }

    /// Problems of a concept in declaration order.
    pub fn problems_of<'a>(&'a self, concept: &ConceptId) -> impl Iterator<Item = &'a Problem> + 'a {
        self.concepts
            .get(concept)
            .into_iter()
            .flat_map(|c| c.problem_ids.iter())
            .map(|p| &self.problems[p])
    }

    /// Problems of every concept in a section, in declaration order.
    pub fn problems_of_section<'a>(
        &'a self,
        section: &Section,
    ) -> impl Iterator<Item = &'a Problem> + 'a {
        let ids: Vec<&'a ConceptId> = section
            .concept_ids
            .iter()
            .map(|c| &self.concepts[c].id)
            .collect();
        ids.into_iter().flat_map(move |c| self.problems_of(c))
    }

    /// Returns a copy with every problem difficulty replaced from `difficulties`.
    /// Problems not present in the map keep their difficulty.
    pub fn with_difficulties(
        &self,
        difficulties: &BTreeMap<ProblemId, f64>,
    ) -> Result<Self, ValidationError> {
        let mut file = self.to_schema();
        for section in &mut file.sections {
            for concept in &mut section.concepts {
                for problem in &mut concept.problems {
                    if let Some(d) = difficulties.get(&problem.id) {
                        problem.difficulty = *d;
                    }
                }
            }
        }
        Self::from_schema(file)
    }

    pub fn to_schema(&self) -> CurriculumFile {
        CurriculumFile {
            sections: self
                .sections
                .iter()
                .map(|s| SectionFile {
                    id: s.id.clone(),
                    title: s.title.clone(),
                    concepts: s
                        .concept_ids
                        .iter()
                        .map(|c| {
                            let concept = &self.concepts[c];
                            ConceptFile {
                                id: concept.id.clone(),
                                prerequisites: concept.prerequisite_ids.clone(),
                                problems: self
                                    .problems_of(c)
                                    .map(|p| ProblemFile {
                                        id: p.id.clone(),
                                        difficulty: p.difficulty,
                                        prompt: p.prompt.clone(),
                                        choices: p.choices.clone(),
                                        correct_choice: p.correct_choice,
                                    })
                                    .collect(),
                            }
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_schema()).expect("curriculum schema serializes")
    }
}

/// Number of choices attached to each generated problem.
const SYNTHETIC_CHOICES: usize = 4;

/// Probability that an earlier concept becomes a prerequisite of a later
/// one in a generated section.
const SYNTHETIC_EDGE_PROBABILITY: f64 = 0.5;

/// Generates a random but reproducible curriculum.
///
/// Concept `k` of a section may only depend on concepts `0..k`, which keeps
/// each section acyclic and makes concept 0 a root. Difficulties are uniform
/// over `[1, 5]`.
pub fn generate_synthetic_curriculum(
    sections: usize,
    concepts_per_section: usize,
    problems_per_concept: usize,
    seed: u64,
) -> Result<Curriculum, CurriculumError> {
    if sections == 0 || concepts_per_section == 0 || problems_per_concept == 0 {
        return Err(CurriculumError::Shape(format!(
            "{sections}x{concepts_per_section}x{problems_per_concept}: all counts must be at least 1"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut file = CurriculumFile {
        sections: Vec::with_capacity(sections),
    };
    for s in 0..sections {
        let mut concepts: Vec<ConceptFile> = Vec::with_capacity(concepts_per_section);
        for c in 0..concepts_per_section {
            let concept_id = ConceptId(format!("s{s}c{c}"));
            let mut prerequisites: Vec<ConceptId> = (0..c)
                .filter(|_| rng.random_bool(SYNTHETIC_EDGE_PROBABILITY))
                .map(|p| concepts[p].id.clone())
                .collect();
            // Non-root concepts always hang off something, so the DAG is connected
            // to the earlier part of the section.
            if c > 0 && prerequisites.is_empty() {
                let p = rng.random_range(0..c);
                prerequisites.push(concepts[p].id.clone());
            }
            let problems = (0..problems_per_concept)
                .map(|p| {
                    let mut choices: Vec<String> =
                        (0..SYNTHETIC_CHOICES).map(|k| format!("option {}", k + 1)).collect();
                    choices.shuffle(&mut rng);
                    ProblemFile {
                        id: ProblemId(format!("{concept_id}p{p}")),
                        difficulty: rng.random_range(MIN_DIFFICULTY..=MAX_DIFFICULTY),
                        prompt: format!("Question {} on concept {concept_id}", p + 1),
                        choices,
                        correct_choice: rng.random_range(0..SYNTHETIC_CHOICES),
                    }
                })
                .collect();
            concepts.push(ConceptFile {
                id: concept_id,
                prerequisites,
                problems,
            });
        }
        file.sections.push(SectionFile {
            id: SectionId(format!("s{s}")),
            title: format!("Section {}", s + 1),
            concepts,
        });
    }
    Ok(Curriculum::from_schema(file)?)
}

/// Parses a `SxCxP` shape such as `5x3x10`.
pub fn parse_shape(shape: &str) -> Option<(usize, usize, usize)> {
    let parts: Vec<usize> = shape
        .split('x')
        .map(|p| p.trim().parse().ok())
        .collect::<Option<_>>()?;
    match parts.as_slice() {
        [s, c, p] => Some((*s, *c, *p)),
        _ => None,
    }
}
