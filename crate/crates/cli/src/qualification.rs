//! Qualification quiz grading.
//!
//! Exercises are worth 5 points, multiple-choice questions 3 points and the
//! real task 20 points, for 100 in total. A marked span matches a key span
//! when both share at least one token and carry the same error type.

use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use errspan_core::textproc::tokenize;
use errspan_core::{Annotation, CharSpan, ErrorType};

pub const EXERCISES: usize = 10;
pub const QUESTIONS: usize = 10;
pub const REAL_TASK_SPANS: usize = 7;
pub const EXERCISE_POINTS: u32 = 5;
pub const QUESTION_POINTS: u32 = 3;
pub const REAL_TASK_POINTS: u32 = 20;
/// Key spans that must be found for full real-task marks.
pub const REAL_TASK_FULL_MARKS_AT: usize = 5;
pub const DEDUCTION_PER_MISSING_SPAN: u32 = 4;
pub const PASS_MARK: u32 = 90;

const BUNDLED_KEY: &str = include_str!("../data/qualification_key.json");

#[derive(Debug, thiserror::Error)]
pub enum GradeError {
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("answer key: {0}")]
    Key(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkedSpan {
    pub start: usize,
    pub end: usize,
    pub error_type: ErrorType,
}

impl MarkedSpan {
    pub fn span(&self) -> CharSpan {
        CharSpan::new(self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exercise {
    pub prompt: String,
    pub text: String,
    #[serde(flatten)]
    pub key: MarkedSpan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub question: String,
    pub choices: Vec<String>,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealTask {
    pub generation_id: String,
    pub prompt: String,
    pub text: String,
    pub spans: Vec<MarkedSpan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerKey {
    pub version: u32,
    pub exercises: Vec<Exercise>,
    pub mcq: Vec<Question>,
    pub real_task: RealTask,
}

impl AnswerKey {
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_KEY).expect("bundled answer key is valid")
    }

    pub fn from_json(json: &str) -> Result<Self, GradeError> {
        let key: AnswerKey =
            serde_json::from_str(json).map_err(|e| GradeError::Key(e.to_string()))?;
        key.check()?;
        Ok(key)
    }

    pub fn load(path: &Path) -> Result<Self, GradeError> {
        let json = std::fs::read_to_string(path)
            .map_err(|e| GradeError::Key(format!("{}: {e}", path.display())))?;
        Self::from_json(&json)
    }

    fn check(&self) -> Result<(), GradeError> {
        let counts = (self.exercises.len(), self.mcq.len(), self.real_task.spans.len());
        if counts != (EXERCISES, QUESTIONS, REAL_TASK_SPANS) {
            return Err(GradeError::Key(format!(
                "expected {EXERCISES}/{QUESTIONS}/{REAL_TASK_SPANS} items, found {}/{}/{}",
                counts.0, counts.1, counts.2
            )));
        }
        for (i, e) in self.exercises.iter().enumerate() {
            token_range(&e.text, e.key.span())
                .filter(|r| !r.is_empty())
                .ok_or_else(|| GradeError::Key(format!("exercise {i} key span is invalid")))?;
        }
        for s in &self.real_task.spans {
            token_range(&self.real_task.text, s.span())
                .filter(|r| !r.is_empty())
                .ok_or_else(|| GradeError::Key(format!("real-task key span {} is invalid", s.span())))?;
        }
        Ok(())
    }

    /// A response that earns full marks.
    pub fn perfect_response(&self, annotator_id: &str) -> QualificationResponse {
        QualificationResponse {
            annotator_id: annotator_id.to_string(),
            exercise_answers: self.exercises.iter().map(|e| e.key).collect(),
            mcq_answers: self.mcq.iter().map(|q| q.answer.clone()).collect(),
            real_task: Annotation::new(
                format!("qualification-{annotator_id}"),
                self.real_task.generation_id.clone(),
                annotator_id,
                self.real_task
                    .spans
                    .iter()
                    .map(|s| {
                        errspan_core::ErrorSpan::new(
                            s.span(),
                            s.error_type,
                            errspan_core::Severity::MODERATE,
                            "from key",
                        )
                    })
                    .collect(),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualificationResponse {
    pub annotator_id: String,
    pub exercise_answers: Vec<MarkedSpan>,
    pub mcq_answers: Vec<String>,
    pub real_task: Annotation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Breakdown {
    pub exercises_correct: Vec<bool>,
    pub exercise_points: u32,
    pub mcq_correct: Vec<bool>,
    pub mcq_points: u32,
    pub real_task_found: usize,
    pub real_task_points: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grade {
    pub score: u32,
    pub pass: bool,
    pub breakdown: Breakdown,
}

fn token_range(text: &str, span: CharSpan) -> Option<Range<usize>> {
    tokenize(text).span_tokens(span).ok()
}

fn matches(text: &str, answer: &MarkedSpan, key: &MarkedSpan) -> Result<bool, GradeError> {
    let answered = token_range(text, answer.span()).ok_or_else(|| {
        GradeError::Malformed(format!("span {} is outside its text", answer.span()))
    })?;
    let expected = token_range(text, key.span()).unwrap_or_default();
    let overlap = answered.start.max(expected.start) < answered.end.min(expected.end);
    Ok(overlap && answer.error_type == key.error_type)
}

/// Real-task points for `found` of the seven key spans.
pub fn real_task_points(found: usize) -> u32 {
    let missing = REAL_TASK_FULL_MARKS_AT.saturating_sub(found) as u32;
    REAL_TASK_POINTS.saturating_sub(DEDUCTION_PER_MISSING_SPAN * missing)
}

pub fn grade(response: &QualificationResponse, key: &AnswerKey) -> Result<Grade, GradeError> {
    if response.exercise_answers.len() != key.exercises.len() {
        return Err(GradeError::Malformed(format!(
            "{} exercise answers for {} exercises",
            response.exercise_answers.len(),
            key.exercises.len()
        )));
    }
    if response.mcq_answers.len() != key.mcq.len() {
        return Err(GradeError::Malformed(format!(
            "{} multiple-choice answers for {} questions",
            response.mcq_answers.len(),
            key.mcq.len()
        )));
    }
    if response.real_task.generation_id != key.real_task.generation_id {
        return Err(GradeError::Malformed(format!(
            "real task annotates {}, expected {}",
            response.real_task.generation_id, key.real_task.generation_id
        )));
    }

    let exercises_correct = key
        .exercises
        .iter()
        .zip(&response.exercise_answers)
        .map(|(e, a)| matches(&e.text, a, &e.key))
        .collect::<Result<Vec<_>, _>>()?;
    let mcq_correct: Vec<bool> = key
        .mcq
        .iter()
        .zip(&response.mcq_answers)
        .map(|(q, a)| q.answer == *a)
        .collect();

    let answers: Vec<MarkedSpan> = response
        .real_task
        .spans
        .iter()
        .map(|s| MarkedSpan {
            start: s.span.start,
            end: s.span.end,
            error_type: s.error_type,
        })
        .collect();
    let mut found = 0;
    for k in &key.real_task.spans {
        let mut hit = false;
        for a in &answers {
            hit |= matches(&key.real_task.text, a, k)?;
        }
        found += usize::from(hit);
    }

    let count = |v: &[bool]| v.iter().filter(|&&b| b).count() as u32;
    let breakdown = Breakdown {
        exercise_points: EXERCISE_POINTS * count(&exercises_correct),
        mcq_points: QUESTION_POINTS * count(&mcq_correct),
        real_task_points: real_task_points(found),
        real_task_found: found,
        exercises_correct,
        mcq_correct,
    };
    let score = breakdown.exercise_points + breakdown.mcq_points + breakdown.real_task_points;
    Ok(Grade {
        score,
        pass: score >= PASS_MARK,
        breakdown,
    })
}
