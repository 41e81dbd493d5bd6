//! Case-file ingestion and per-subtask submission files.
//!
//! Case file: a JSON array of case objects (see [`CaseRecord`]). Submission
//! file: a JSON object mapping `case_id` to the subtask's payload:
//!
//! ```text
//! st1  {"clinician_question": "..."}
//! st2  {"essential": [2, 5]}
//! st3  {"answer": "..."}
//! st4  {"links": [{"answer_id": 1, "note_ids": [3], "confidences": [0.95]}]}
//! ```
//!
//! `confidences` is optional on input (missing values read as 1.0).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::ModelError;
use crate::model::{AlignmentLink, CaseRecord, PredictionBundle, Subtask};

/// Loads and validates a case file, preserving file order.
pub fn load_cases(path: impl AsRef<Path>) -> Result<Vec<CaseRecord>, ModelError> {
    let path = path.as_ref();
    let text = read_text(path)?;
    parse_cases(&text, &path.display().to_string())
}

/// Parses case-file text; `origin` names the source in error messages.
pub fn parse_cases(text: &str, origin: &str) -> Result<Vec<CaseRecord>, ModelError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let cases: Vec<CaseRecord> =
        serde_path_to_error::deserialize(&mut de).map_err(|e| parse_error(origin, e))?;
    let mut seen = BTreeSet::new();
    for case in &cases {
        case.validate()?;
        if !seen.insert(case.case_id.as_str()) {
            return Err(ModelError::DuplicateCase {
                case_id: case.case_id.clone(),
            });
        }
    }
    Ok(cases)
}

fn parse_error(origin: &str, e: serde_path_to_error::Error<serde_json::Error>) -> ModelError {
    let field = e.path().to_string();
    let inner = e.into_inner();
    ModelError::Parse {
        path: origin.to_string(),
        line: inner.line(),
        column: inner.column(),
        field,
        message: inner.to_string(),
    }
}

fn read_text(path: &Path) -> Result<String, ModelError> {
    fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct LinkRecord {
    answer_id: u32,
    note_ids: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    confidences: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum SubmissionEntry {
    Question { clinician_question: String },
    Evidence { essential: Vec<u32> },
    Answer { answer: String },
    Links { links: Vec<LinkRecord> },
}

fn entry_for(bundle: &PredictionBundle, subtask: Subtask) -> Result<SubmissionEntry, ModelError> {
    let missing = || ModelError::MissingField {
        case_id: bundle.case_id.clone(),
        subtask,
    };
    Ok(match subtask {
        Subtask::Interpretation => SubmissionEntry::Question {
            clinician_question: bundle.st1_question.clone().ok_or_else(missing)?,
        },
        Subtask::Evidence => SubmissionEntry::Evidence {
            essential: bundle
                .st2_essential_ids
                .as_ref()
                .ok_or_else(missing)?
                .iter()
                .copied()
                .collect(),
        },
        Subtask::Answer => SubmissionEntry::Answer {
            answer: bundle.st3_answer.clone().ok_or_else(missing)?,
        },
        Subtask::Alignment => {
            let links = bundle.st4_links.as_ref().ok_or_else(missing)?;
            let mut grouped: BTreeMap<u32, BTreeMap<u32, f64>> = BTreeMap::new();
            for l in links {
                grouped
                    .entry(l.answer_id)
                    .or_default()
                    .entry(l.note_id)
                    .or_insert(l.confidence);
            }
            SubmissionEntry::Links {
                links: grouped
                    .into_iter()
                    .map(|(answer_id, notes)| LinkRecord {
                        answer_id,
                        note_ids: notes.keys().copied().collect(),
                        confidences: Some(notes.values().copied().collect()),
                    })
                    .collect(),
            }
        }
    })
}

/// Renders a submission document (pretty JSON, trailing newline).
pub fn render_submission(
    bundles: &[PredictionBundle],
    subtask: Subtask,
) -> Result<String, ModelError> {
    let mut doc = Map::new();
    for b in bundles {
        let entry = serde_json::to_value(entry_for(b, subtask)?)
            .expect("submission entries are plain data");
        if doc.insert(b.case_id.clone(), entry).is_some() {
            return Err(ModelError::DuplicateCase {
                case_id: b.case_id.clone(),
            });
        }
    }
    let mut out = serde_json::to_string_pretty(&Value::Object(doc)).expect("json map");
    out.push('\n');
    Ok(out)
}

/// Writes the submission for `subtask` atomically.
pub fn write_submission(
    bundles: &[PredictionBundle],
    subtask: Subtask,
    path: impl AsRef<Path>,
) -> Result<(), ModelError> {
    let text = render_submission(bundles, subtask)?;
    write_atomic(path.as_ref(), text.as_bytes())
}

/// Reads a submission file back into bundles carrying only `subtask`'s field.
pub fn load_submission(
    path: impl AsRef<Path>,
    subtask: Subtask,
) -> Result<Vec<PredictionBundle>, ModelError> {
    let path = path.as_ref();
    let text = read_text(path)?;
    parse_submission(&text, subtask, &path.display().to_string())
}

pub fn parse_submission(
    text: &str,
    subtask: Subtask,
    origin: &str,
) -> Result<Vec<PredictionBundle>, ModelError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let doc: Map<String, Value> =
        serde_path_to_error::deserialize(&mut de).map_err(|e| parse_error(origin, e))?;
    let mut out = Vec::with_capacity(doc.len());
    for (case_id, value) in doc {
        let entry: SubmissionEntry = serde_path_to_error::deserialize(value)
            .map_err(|e| ModelError::Parse {
                path: origin.to_string(),
                line: 0,
                column: 0,
                field: format!("{case_id}.{}", e.path()),
                message: e.into_inner().to_string(),
            })?;
        let mut bundle = PredictionBundle::new(case_id.clone());
        let wrong = || ModelError::Validation {
            case_id: case_id.clone(),
            reason: format!("entry does not match the {subtask} submission schema"),
        };
        match (subtask, entry) {
            (Subtask::Interpretation, SubmissionEntry::Question { clinician_question }) => {
                bundle.st1_question = Some(clinician_question)
            }
            (Subtask::Evidence, SubmissionEntry::Evidence { essential }) => {
                bundle.st2_essential_ids = Some(essential.into_iter().collect())
            }
            (Subtask::Answer, SubmissionEntry::Answer { answer }) => {
                bundle.st3_answer = Some(answer)
            }
            (Subtask::Alignment, SubmissionEntry::Links { links }) => {
                let mut out_links = Vec::new();
                for rec in links {
                    let confs = match rec.confidences {
                        Some(c) if c.len() != rec.note_ids.len() => {
                            return Err(ModelError::Validation {
                                case_id: case_id.clone(),
                                reason: format!(
                                    "answer_id {}: {} note ids but {} confidences",
                                    rec.answer_id,
                                    rec.note_ids.len(),
                                    c.len()
                                ),
                            })
                        }
                        Some(c) => c,
                        None => vec![1.0; rec.note_ids.len()],
                    };
                    out_links.extend(
                        rec.note_ids
                            .iter()
                            .zip(confs)
                            .map(|(n, c)| AlignmentLink::new(rec.answer_id, *n, c)),
                    );
                }
                bundle.st4_links = Some(out_links);
                bundle.canonicalize();
            }
            _ => return Err(wrong()),
        }
        out.push(bundle);
    }
    Ok(out)
}

/// Writes via a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ModelError> {
    let io_err = |source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(io_err)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}
