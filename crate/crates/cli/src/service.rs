//! Task assignment, annotation intake and qualification on top of a [`Store`].
//!
//! All counters live in memory and are rebuilt from the store on startup.

use std::collections::{HashMap, HashSet};
use std::time::{SystemTime, UNIX_EPOCH};

use errspan_core::dataset::annotation_violations;
use errspan_core::textproc::{tokenize, TokenMap};
use errspan_core::{Annotation, Dataset, GenerationRecord, Violation};

use crate::qualification::{self, AnswerKey, Grade, GradeError, QualificationResponse};
use crate::store::{
    AssignmentStatus, QualificationRecord, Store, StoreError, TaskAssignment,
};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("annotator {0} has not passed qualification")]
    NotQualified(String),
    #[error("no open assignment of {generation_id} to {annotator_id}")]
    NoAssignment {
        generation_id: String,
        annotator_id: String,
    },
    #[error("annotation {0} was already submitted")]
    Duplicate(String),
    #[error("annotation has {} violation(s)", .0.len())]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Grade(#[from] GradeError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone)]
pub struct ServiceSettings {
    /// Submitted annotations a generation may collect.
    pub annotations_per_generation: usize,
    pub answer_key: AnswerKey,
    /// Skip the qualification check in `next_task`.
    pub open_enrollment: bool,
}

impl Default for ServiceSettings {
    fn default() -> Self {
        ServiceSettings {
            annotations_per_generation: 10,
            answer_key: AnswerKey::bundled(),
            open_enrollment: false,
        }
    }
}

pub struct AnnotationService<S: Store> {
    store: S,
    settings: ServiceSettings,
    index: HashMap<String, usize>,
    token_maps: Vec<TokenMap>,
    /// Submitted annotations per generation, as indices into the store.
    submitted: Vec<Vec<usize>>,
    open: Vec<usize>,
    /// Per annotator: every generation ever assigned, with its status.
    assigned: HashMap<String, HashMap<usize, AssignmentStatus>>,
    annotation_ids: HashSet<String>,
    qualified: HashSet<String>,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl<S: Store> AnnotationService<S> {
    pub fn new(store: S, settings: ServiceSettings) -> Self {
        let gens = store.generations();
        let index: HashMap<String, usize> = gens
            .iter()
            .enumerate()
            .map(|(i, g)| (g.generation_id.clone(), i))
            .collect();
        let mut service = AnnotationService {
            token_maps: gens.iter().map(|g| tokenize(&g.generation)).collect(),
            submitted: vec![Vec::new(); gens.len()],
            open: vec![0; gens.len()],
            index,
            assigned: HashMap::new(),
            annotation_ids: HashSet::new(),
            qualified: HashSet::new(),
            store,
            settings,
        };
        service.rebuild();
        service
    }

    fn rebuild(&mut self) {
        for a in self.store.assignments() {
            let Some(&pos) = self.index.get(&a.generation_id) else {
                log::warn!("assignment for unknown generation {}", a.generation_id);
                continue;
            };
            let slot = self.assigned.entry(a.annotator_id.clone()).or_default();
            if slot.insert(pos, AssignmentStatus::Open).is_none() {
                self.open[pos] += 1;
            }
        }
        for (i, a) in self.store.annotations().iter().enumerate() {
            self.annotation_ids.insert(a.annotation_id.clone());
            let Some(&pos) = self.index.get(&a.generation_id) else {
                log::warn!("annotation {} for unknown generation", a.annotation_id);
                continue;
            };
            self.submitted[pos].push(i);
            let slot = self.assigned.entry(a.annotator_id.clone()).or_default();
            if slot.insert(pos, AssignmentStatus::Submitted) == Some(AssignmentStatus::Open) {
                self.open[pos] -= 1;
            }
        }
        for q in self.store.qualifications() {
            if q.grade.pass {
                self.qualified.insert(q.annotator_id.clone());
            }
        }
    }

    pub fn store(&self) -> &S {
        &self.store
    }

    pub fn settings(&self) -> &ServiceSettings {
        &self.settings
    }

    pub fn is_qualified(&self, annotator_id: &str) -> bool {
        self.settings.open_enrollment || self.qualified.contains(annotator_id)
    }

    pub fn generation(&self, generation_id: &str) -> Option<&GenerationRecord> {
        self.index
            .get(generation_id)
            .map(|&pos| &self.store.generations()[pos])
    }

    /// Submitted annotations of one generation, in submission order.
    pub fn annotations_of(&self, generation_id: &str) -> Option<Vec<&Annotation>> {
        let &pos = self.index.get(generation_id)?;
        let all = self.store.annotations();
        Some(self.submitted[pos].iter().map(|&i| &all[i]).collect())
    }

    /// Generations plus every submitted annotation.
    pub fn dataset(&self) -> Dataset {
        Dataset::new(
            self.store.generations().to_vec(),
            self.store.annotations().to_vec(),
        )
    }

    pub fn assignments_of(&self, annotator_id: &str) -> Vec<TaskAssignment> {
        let mut out: Vec<TaskAssignment> = self
            .assigned
            .get(annotator_id)
            .into_iter()
            .flatten()
            .map(|(&pos, &status)| TaskAssignment {
                generation_id: self.store.generations()[pos].generation_id.clone(),
                annotator_id: annotator_id.to_string(),
                assigned_at: 0,
                status,
            })
            .collect();
        out.sort_by(|a, b| a.generation_id.cmp(&b.generation_id));
        out
    }

    /// The annotator's open task, or a new one: the generation with the
    /// fewest submitted plus open assignments among those below the cap and
    /// never assigned to this annotator, earliest in the file on ties.
    pub fn next_task(&mut self, annotator_id: &str) -> Result<Option<GenerationRecord>, ServiceError> {
        if !self.is_qualified(annotator_id) {
            return Err(ServiceError::NotQualified(annotator_id.to_string()));
        }
        let mine = self.assigned.get(annotator_id);
        if let Some(pos) = mine.and_then(|m| {
            m.iter()
                .filter(|(_, &s)| s == AssignmentStatus::Open)
                .map(|(&p, _)| p)
                .min()
        }) {
            return Ok(Some(self.store.generations()[pos].clone()));
        }
        let cap = self.settings.annotations_per_generation;
        let best = (0..self.store.generations().len())
            .filter(|pos| !mine.is_some_and(|m| m.contains_key(pos)))
            .map(|pos| (self.submitted[pos].len() + self.open[pos], pos))
            .filter(|&(load, _)| load < cap)
            .min();
        let Some((_, pos)) = best else {
            return Ok(None);
        };
        let generation = self.store.generations()[pos].clone();
        self.store.append_assignment(TaskAssignment {
            generation_id: generation.generation_id.clone(),
            annotator_id: annotator_id.to_string(),
            assigned_at: now(),
            status: AssignmentStatus::Open,
        })?;
        self.open[pos] += 1;
        self.assigned
            .entry(annotator_id.to_string())
            .or_default()
            .insert(pos, AssignmentStatus::Open);
        Ok(Some(generation))
    }

    /// Checks and durably stores an annotation, closing its assignment.
    pub fn submit(&mut self, annotation: Annotation) -> Result<String, ServiceError> {
        if self.annotation_ids.contains(&annotation.annotation_id) {
            return Err(ServiceError::Duplicate(annotation.annotation_id));
        }
        let pos = self
            .index
            .get(&annotation.generation_id)
            .copied()
            .filter(|pos| {
                self.assigned
                    .get(&annotation.annotator_id)
                    .and_then(|m| m.get(pos))
                    == Some(&AssignmentStatus::Open)
            })
            .ok_or_else(|| ServiceError::NoAssignment {
                generation_id: annotation.generation_id.clone(),
                annotator_id: annotation.annotator_id.clone(),
            })?;
        let violations = annotation_violations(&annotation, &self.token_maps[pos]);
        if !violations.is_empty() {
            return Err(ServiceError::Invalid(violations));
        }
        let id = annotation.annotation_id.clone();
        let annotator = annotation.annotator_id.clone();
        self.store.append_annotation(annotation)?;
        self.annotation_ids.insert(id.clone());
        self.submitted[pos].push(self.store.annotations().len() - 1);
        self.open[pos] -= 1;
        self.assigned
            .entry(annotator)
            .or_default()
            .insert(pos, AssignmentStatus::Submitted);
        Ok(id)
    }

    /// Grades a quiz and records the result.
    pub fn qualify(&mut self, response: &QualificationResponse) -> Result<Grade, ServiceError> {
        let grade = qualification::grade(response, &self.settings.answer_key)?;
        self.store.append_qualification(QualificationRecord {
            annotator_id: response.annotator_id.clone(),
            graded_at: now(),
            grade: grade.clone(),
        })?;
        if grade.pass {
            self.qualified.insert(response.annotator_id.clone());
        }
        Ok(grade)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::MemoryStore;
    use errspan_core::{CharSpan, ErrorSpan, ErrorType, Severity};

    fn gens(n: usize) -> Vec<GenerationRecord> {
        (0..n)
            .map(|i| GenerationRecord::new(format!("g{i}"), "P.", "one two three four.", "m", None))
            .collect()
    }

    fn service(n: usize, cap: usize) -> AnnotationService<MemoryStore> {
        AnnotationService::new(
            MemoryStore::new(gens(n)),
            ServiceSettings {
                annotations_per_generation: cap,
                open_enrollment: true,
                ..Default::default()
            },
        )
    }

    fn annotation(id: &str, g: &str, w: &str) -> Annotation {
        Annotation::new(
            id,
            g,
            w,
            vec![ErrorSpan::new(
                CharSpan::new(4, 7),
                ErrorType::Redundant,
                Severity::MINOR,
                "repeats",
            )],
        )
    }

    #[test]
    fn open_task_is_returned_again() {
        let mut s = service(3, 10);
        let a = s.next_task("w1").unwrap().unwrap();
        let b = s.next_task("w1").unwrap().unwrap();
        assert_eq!(a.generation_id, b.generation_id);
        assert_eq!(s.store().assignments.len(), 1);
    }

    #[test]
    fn concurrent_annotators_get_distinct_generations() {
        let mut s = service(3, 10);
        let a = s.next_task("w1").unwrap().unwrap();
        let b = s.next_task("w2").unwrap().unwrap();
        assert_ne!(a.generation_id, b.generation_id);
    }

    #[test]
    fn fewest_submissions_first_and_no_repeats() {
        let mut s = service(2, 10);
        let mut seen = Vec::new();
        for i in 0..2 {
            let g = s.next_task("w1").unwrap().unwrap();
            s.submit(annotation(&format!("a{i}"), &g.generation_id, "w1")).unwrap();
            seen.push(g.generation_id);
        }
        assert_eq!(seen, ["g0", "g1"]);
        assert!(s.next_task("w1").unwrap().is_none());
        // w2 starts on g0 since both have one submission
        assert_eq!(s.next_task("w2").unwrap().unwrap().generation_id, "g0");
    }

    #[test]
    fn cap_is_respected() {
        let mut s = service(1, 2);
        for w in ["w1", "w2"] {
            let g = s.next_task(w).unwrap().unwrap();
            s.submit(annotation(&format!("a-{w}"), &g.generation_id, w)).unwrap();
        }
        assert!(s.next_task("w3").unwrap().is_none());
    }

    #[test]
    fn open_assignments_count_toward_the_cap() {
        let mut s = service(1, 1);
        s.next_task("w1").unwrap().unwrap();
        assert!(s.next_task("w2").unwrap().is_none());
    }

    #[test]
    fn submission_errors() {
        let mut s = service(2, 10);
        // no assignment
        assert!(matches!(
            s.submit(annotation("a1", "g0", "w1")),
            Err(ServiceError::NoAssignment { .. })
        ));
        let g = s.next_task("w1").unwrap().unwrap();
        // antecedent on a type that cannot have one
        let mut bad = annotation("a1", &g.generation_id, "w1");
        bad.spans[0].error_type = ErrorType::Incoherent;
        bad.spans[0].antecedent = Some(CharSpan::new(0, 3));
        match s.submit(bad) {
            Err(ServiceError::Invalid(v)) => assert!(!v.is_empty()),
            other => panic!("{other:?}"),
        }
        assert_eq!(s.submit(annotation("a1", &g.generation_id, "w1")).unwrap(), "a1");
        assert!(matches!(
            s.submit(annotation("a1", &g.generation_id, "w1")),
            Err(ServiceError::Duplicate(_))
        ));
        assert!(matches!(
            s.submit(annotation("a2", &g.generation_id, "w1")),
            Err(ServiceError::NoAssignment { .. })
        ));
    }

    #[test]
    fn qualification_gate() {
        let mut s = AnnotationService::new(MemoryStore::new(gens(1)), ServiceSettings::default());
        assert!(matches!(s.next_task("w1"), Err(ServiceError::NotQualified(_))));
        let mut failing = s.settings().answer_key.perfect_response("w1");
        failing.mcq_answers.iter_mut().for_each(|a| a.push('?'));
        assert!(!s.qualify(&failing).unwrap().pass);
        assert!(s.next_task("w1").is_err());
        let passing = s.settings().answer_key.perfect_response("w1");
        assert_eq!(s.qualify(&passing).unwrap().score, 100);
        assert!(s.next_task("w1").unwrap().is_some());
    }

    #[test]
    fn state_is_rebuilt_from_the_store() {
        let mut s = service(3, 10);
        let g = s.next_task("w1").unwrap().unwrap();
        s.submit(annotation("a1", &g.generation_id, "w1")).unwrap();
        let open = s.next_task("w1").unwrap().unwrap();
        let store = std::mem::take(&mut s.store);
        let mut again = AnnotationService::new(store, s.settings.clone());
        assert_eq!(again.next_task("w1").unwrap().unwrap(), open);
        assert_eq!(again.annotations_of(&g.generation_id).unwrap().len(), 1);
        assert!(matches!(
            again.submit(annotation("a1", &open.generation_id, "w1")),
            Err(ServiceError::Duplicate(_))
        ));
    }
}
