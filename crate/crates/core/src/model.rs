//! Case records, gold annotations and predictions.
//!
//! Everything here is immutable once constructed; loaders validate every
//! invariant up front so downstream code can index note and answer
//! sentences by id without re-checking.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// One numbered sentence of a clinical note excerpt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteSentence {
    pub id: u32,
    pub text: String,
}

/// One numbered sentence of a reference answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSentence {
    pub id: u32,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelevanceLabel {
    Essential,
    Supplementary,
    NotRelevant,
}

impl RelevanceLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            RelevanceLabel::Essential => "essential",
            RelevanceLabel::Supplementary => "supplementary",
            RelevanceLabel::NotRelevant => "not-relevant",
        }
    }
}

/// Gold answer-to-evidence alignment for one reference answer sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAlignment {
    pub answer_id: u32,
    pub note_ids: BTreeSet<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GoldAnnotations {
    #[serde(default)]
    pub relevance: BTreeMap<u32, RelevanceLabel>,
    #[serde(default)]
    pub reference_answer: Vec<AnswerSentence>,
    #[serde(default)]
    pub alignments: Vec<GoldAlignment>,
}

impl GoldAnnotations {
    pub fn ids_with(&self, label: RelevanceLabel) -> BTreeSet<u32> {
        self.relevance
            .iter()
            .filter(|(_, l)| **l == label)
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn essential(&self) -> BTreeSet<u32> {
        self.ids_with(RelevanceLabel::Essential)
    }

    pub fn supplementary(&self) -> BTreeSet<u32> {
        self.ids_with(RelevanceLabel::Supplementary)
    }

    /// Gold links as `(answer_id, note_id)` pairs.
    pub fn link_pairs(&self) -> BTreeSet<(u32, u32)> {
        self.alignments
            .iter()
            .flat_map(|a| a.note_ids.iter().map(move |n| (a.answer_id, *n)))
            .collect()
    }

    /// The reference answer as a single paragraph.
    pub fn reference_text(&self) -> String {
        self.reference_answer
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub patient_narrative: String,
    pub patient_question: String,
    #[serde(default)]
    pub clinician_question: Option<String>,
    #[serde(rename = "note_excerpt")]
    pub note_sentences: Vec<NoteSentence>,
    #[serde(default)]
    pub gold: Option<GoldAnnotations>,
}

impl CaseRecord {
    pub fn note_ids(&self) -> BTreeSet<u32> {
        self.note_sentences.iter().map(|s| s.id).collect()
    }

    pub fn note_text(&self, id: u32) -> Option<&str> {
        // ids are contiguous from 1 once validated
        self.note_sentences
            .get((id as usize).wrapping_sub(1))
            .filter(|s| s.id == id)
            .map(|s| s.text.as_str())
    }

    /// Numbered excerpt, one `id: text` line per sentence.
    pub fn numbered_excerpt(&self) -> String {
        self.note_sentences
            .iter()
            .map(|s| format!("{}: {}", s.id, s.text))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn require_gold(&self) -> Result<&GoldAnnotations, ModelError> {
        self.gold.as_ref().ok_or_else(|| ModelError::MissingGold {
            case_id: self.case_id.clone(),
        })
    }

    /// Checks every type invariant of the record and its gold annotations.
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |reason: String| ModelError::Validation {
            case_id: self.case_id.clone(),
            reason,
        };
        if self.case_id.trim().is_empty() {
            return Err(fail("empty case_id".into()));
        }
        if self.patient_question.trim().is_empty() {
            return Err(fail("empty patient_question".into()));
        }
        if self.note_sentences.is_empty() {
            return Err(fail("note_excerpt has no sentences".into()));
        }
        check_numbering(self.note_sentences.iter().map(|s| s.id), "note")
            .map_err(&fail)?;
        for s in &self.note_sentences {
            check_text(&s.text).map_err(|r| fail(format!("note sentence {}: {r}", s.id)))?;
        }
        if let Some(gold) = &self.gold {
            let notes = self.note_ids();
            if let Some(bad) = gold.relevance.keys().find(|id| !notes.contains(id)) {
                return Err(fail(format!("relevance label for unknown note id {bad}")));
            }
            check_numbering(gold.reference_answer.iter().map(|s| s.id), "answer")
                .map_err(&fail)?;
            for s in &gold.reference_answer {
                check_text(&s.text)
                    .map_err(|r| fail(format!("answer sentence {}: {r}", s.id)))?;
            }
            let answer_count = gold.reference_answer.len() as u32;
            let mut seen = BTreeSet::new();
            for a in &gold.alignments {
                if a.answer_id == 0 || a.answer_id > answer_count {
                    return Err(fail(format!(
                        "alignment references answer_id {} but reference answer has {} sentences",
                        a.answer_id, answer_count
                    )));
                }
                if !seen.insert(a.answer_id) {
                    return Err(fail(format!("duplicate alignment for answer_id {}", a.answer_id)));
                }
                if let Some(bad) = a.note_ids.iter().find(|id| !notes.contains(id)) {
                    return Err(fail(format!(
                        "alignment for answer_id {} references unknown note id {bad}",
                        a.answer_id
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_numbering(ids: impl Iterator<Item = u32>, what: &str) -> Result<(), String> {
    let ids: Vec<u32> = ids.collect();
    let unique: BTreeSet<u32> = ids.iter().copied().collect();
    if unique.len() != ids.len() {
        return Err(format!("duplicate {what} sentence ids"));
    }
    if ids.iter().enumerate().any(|(i, id)| *id as usize != i + 1) {
        return Err(format!(
            "non-contiguous {what} sentence ids {ids:?} (expected 1..={} in order)",
            ids.len()
        ));
    }
    Ok(())
}

fn check_text(text: &str) -> Result<(), String> {
    if text.is_empty() {
        Err("empty text".into())
    } else if text.trim() != text {
        Err("leading or trailing whitespace".into())
    } else {
        Ok(())
    }
}

/// A directed citation edge from an answer sentence to a note sentence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentLink {
    pub answer_id: u32,
    pub note_id: u32,
    pub confidence: f64,
}

impl AlignmentLink {
    pub fn new(answer_id: u32, note_id: u32, confidence: f64) -> Self {
        Self {
            answer_id,
            note_id,
            confidence,
        }
    }

    pub fn key(&self) -> (u32, u32) {
        (self.answer_id, self.note_id)
    }
}

/// The four shared-task subtasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subtask {
    #[serde(rename = "st1")]
    Interpretation,
    #[serde(rename = "st2")]
    Evidence,
    #[serde(rename = "st3")]
    Answer,
    #[serde(rename = "st4")]
    Alignment,
}

impl Subtask {
    pub const ALL: [Subtask; 4] = [
        Subtask::Interpretation,
        Subtask::Evidence,
        Subtask::Answer,
        Subtask::Alignment,
    ];

    pub fn number(self) -> u8 {
        match self {
            Subtask::Interpretation => 1,
            Subtask::Evidence => 2,
            Subtask::Answer => 3,
            Subtask::Alignment => 4,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.number() == n)
    }

    /// Short label used in file names (`st1` .. `st4`).
    pub fn label(self) -> &'static str {
        match self {
            Subtask::Interpretation => "st1",
            Subtask::Evidence => "st2",
            Subtask::Answer => "st3",
            Subtask::Alignment => "st4",
        }
    }
}

impl fmt::Display for Subtask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "subtask {}", self.number())
    }
}

/// Predictions for one case, any subset of the four subtasks.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictionBundle {
    pub case_id: String,
    pub st1_question: Option<String>,
    pub st2_essential_ids: Option<BTreeSet<u32>>,
    pub st3_answer: Option<String>,
    pub st4_links: Option<Vec<AlignmentLink>>,
}

impl PredictionBundle {
    pub fn new(case_id: impl Into<String>) -> Self {
        Self {
            case_id: case_id.into(),
            ..Self::default()
        }
    }

    /// Sorts links by `(answer_id, note_id)` so bundles compare structurally.
    pub fn canonicalize(&mut self) {
        if let Some(links) = &mut self.st4_links {
            links.sort_by_key(|l| l.key());
        }
    }

    /// Keeps only the field belonging to `subtask`.
    pub fn project(&self, subtask: Subtask) -> PredictionBundle {
        let mut out = PredictionBundle::new(self.case_id.clone());
        match subtask {
            Subtask::Interpretation => out.st1_question = self.st1_question.clone(),
            Subtask::Evidence => out.st2_essential_ids = self.st2_essential_ids.clone(),
            Subtask::Answer => out.st3_answer = self.st3_answer.clone(),
            Subtask::Alignment => out.st4_links = self.st4_links.clone(),
        }
        out
    }

    pub fn has(&self, subtask: Subtask) -> bool {
        match subtask {
            Subtask::Interpretation => self.st1_question.is_some(),
            Subtask::Evidence => self.st2_essential_ids.is_some(),
            Subtask::Answer => self.st3_answer.is_some(),
            Subtask::Alignment => self.st4_links.is_some(),
        }
    }
}

/// Number of maximal non-whitespace runs in `text`.
pub fn count_words(text: &str) -> usize {
    text.split_whitespace().count()
}
