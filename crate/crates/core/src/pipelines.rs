//! The four subtask procedures composed from programs, gateway and consensus.
//!
//! Every pipeline returns its value together with the raw per-stage outputs
//! so callers can write a provenance sidecar for audit and replay.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::consensus::{aggregate_links, majority_vote, VoteTally};
use crate::error::{GatewayError, ModelError, PipelineError};
use crate::evaluation::citation_marker;
use crate::gateway::{ChatRequest, Gateway};
use crate::model::{AlignmentLink, AnswerSentence, CaseRecord, PredictionBundle, Subtask};
use crate::programs::defaults::ProgramSet;
use crate::programs::{
    format_st2, format_st4, parse_st2, parse_st4, Demo, Inputs, PromptProgram, SentenceVerdict,
    VerdictLabel,
};

/// Ledger labels of every pipeline stage.
pub mod stage {
    pub const ST1_GENERATE: &str = "st1.generate";
    pub const ST2_CLASSIFY: &str = "st2.classify";
    pub const ST2_REASON_ESSENTIAL: &str = "st2.reason_essential";
    pub const ST2_REASON_NONESSENTIAL: &str = "st2.reason_nonessential";
    pub const ST3_CANDIDATE: &str = "st3.candidate";
    pub const ST3_CONSOLIDATE: &str = "st3.consolidate";
    pub const ST4_ALIGN: &str = "st4.align";
    pub const ST4_REFLECT: &str = "st4.reflect";
    pub const ST4_VERIFY: &str = "st4.verify";
}

/// Consolidation selects among candidates rather than sampling new text.
pub const CONSOLIDATION_TEMPERATURE: f64 = 0.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(rename = "R_st2", alias = "r_st2")]
    pub r_st2: u32,
    #[serde(rename = "R_st4", alias = "r_st4")]
    pub r_st4: u32,
    pub candidates_st3: u32,
    pub temp_st1: f64,
    pub temp_st2: f64,
    pub temp_st3: f64,
    pub temp_st4: f64,
    pub tau_c: f64,
    pub max_tokens_st1: u32,
    pub max_tokens_other: u32,
    pub word_limit_st1: usize,
    pub word_limit_st3: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            r_st2: 5,
            r_st4: 5,
            candidates_st3: 5,
            temp_st1: 0.3,
            temp_st2: 0.7,
            temp_st3: 0.9,
            temp_st4: 0.8,
            tau_c: 0.9,
            max_tokens_st1: 2000,
            max_tokens_other: 10000,
            word_limit_st1: 15,
            word_limit_st3: 75,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        for (name, v) in [
            ("R_st2", self.r_st2),
            ("R_st4", self.r_st4),
            ("candidates_st3", self.candidates_st3),
            ("max_tokens_st1", self.max_tokens_st1),
            ("max_tokens_other", self.max_tokens_other),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        for (name, v) in [("word_limit_st1", self.word_limit_st1), ("word_limit_st3", self.word_limit_st3)] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        for (name, t) in [
            ("temp_st1", self.temp_st1),
            ("temp_st2", self.temp_st2),
            ("temp_st3", self.temp_st3),
            ("temp_st4", self.temp_st4),
        ] {
            if !(0.0..=2.0).contains(&t) {
                return bad(format!("{name} must be within [0, 2], got {t}"));
            }
        }
        if !(0.0..=1.0).contains(&self.tau_c) {
            return bad(format!("tau_c must be within [0, 1], got {}", self.tau_c));
        }
        Ok(())
    }
}

/// Raw output of one model call made by a pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub seed_tag: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// A pipeline result with the calls that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Traced<T> {
    pub value: T,
    pub stages: Vec<StageRecord>,
    /// Recoverable problems: unparseable runs, fallbacks, trimming.
    pub notes: Vec<String>,
}

/// Where ST3 takes its essential sentences from.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum EvidenceSource {
    #[default]
    Gold,
    /// A prior ST2 submission, keyed by case id.
    Given(BTreeMap<String, BTreeSet<u32>>),
    /// Run the ST2 pipeline first.
    Predict,
}

impl EvidenceSource {
    pub fn label(&self) -> &'static str {
        match self {
            EvidenceSource::Gold => "gold",
            EvidenceSource::Given(_) => "submission",
            EvidenceSource::Predict => "predicted",
        }
    }
}

/// Per-case sidecar written to `runs/<case_id>/<stN>.meta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub case_id: String,
    pub subtask: Subtask,
    pub config: PipelineConfig,
    pub program_hashes: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evidence_source: Option<String>,
    pub calls: BTreeMap<String, u64>,
    pub stages: Vec<StageRecord>,
    pub notes: Vec<String>,
}

impl Provenance {
    pub fn path(runs_dir: &Path, case_id: &str, subtask: Subtask) -> PathBuf {
        runs_dir.join(case_id).join(format!("{}.meta", subtask.label()))
    }

    pub fn write(&self, runs_dir: &Path) -> Result<(), ModelError> {
        let mut text = serde_json::to_string_pretty(self).expect("provenance serializes");
        text.push('\n');
        crate::dataset::write_atomic(&Self::path(runs_dir, &self.case_id, self.subtask), text.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseRun {
    pub bundle: PredictionBundle,
    pub provenance: Provenance,
}

/// Runs pipelines against one gateway with one configuration.
#[derive(Clone, Copy)]
pub struct Pipelines<'a> {
    pub gateway: &'a Gateway,
    pub cfg: &'a PipelineConfig,
    /// Concurrent calls within one case.
    pub fanout: usize,
}

fn case_inputs(case: &CaseRecord) -> Inputs {
    BTreeMap::from([
        ("patient_narrative".to_string(), case.patient_narrative.clone()),
        ("patient_question".to_string(), case.patient_question.clone()),
        (
            "clinician_question".to_string(),
            case.clinician_question.clone().unwrap_or_default(),
        ),
        ("clinical_notes".to_string(), case.numbered_excerpt()),
    ])
}

fn numbered<'t>(rows: impl Iterator<Item = (u32, &'t str)>) -> String {
    rows.map(|(id, text)| format!("{id}: {text}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Keeps only the inputs `program` declares.
fn select(program: &PromptProgram, all: &Inputs) -> Inputs {
    program
        .input_fields
        .iter()
        .filter_map(|f| all.get(&f.name).map(|v| (f.name.clone(), v.clone())))
        .collect()
}

fn record(stage: &str, seed_tag: &str, outcome: &Result<String, GatewayError>) -> StageRecord {
    StageRecord {
        stage: stage.to_string(),
        seed_tag: seed_tag.to_string(),
        output: outcome.as_ref().ok().cloned(),
        error: outcome.as_ref().err().map(ToString::to_string),
    }
}

impl<'a> Pipelines<'a> {
    pub fn new(gateway: &'a Gateway, cfg: &'a PipelineConfig) -> Self {
        Self {
            gateway,
            cfg,
            fanout: 8,
        }
    }

    pub fn with_fanout(self, fanout: usize) -> Self {
        Self {
            fanout: fanout.max(1),
            ..self
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn request(
        &self,
        case: &CaseRecord,
        program: &PromptProgram,
        inputs: &Inputs,
        stage: &str,
        seed_tag: String,
        temperature: f64,
        max_tokens: u32,
    ) -> Result<ChatRequest, PipelineError> {
        Ok(ChatRequest {
            model_id: self.gateway.model_id().to_string(),
            messages: program.render(&select(program, inputs))?,
            temperature,
            max_tokens,
            seed_tag,
            stage: stage.to_string(),
            scope: Some(case.case_id.clone()),
        })
    }

    /// Issues `requests`, recording each outcome; the first gateway error wins.
    fn issue(
        &self,
        requests: &[ChatRequest],
        stages: &mut Vec<StageRecord>,
    ) -> Result<Vec<String>, PipelineError> {
        let outcomes: Vec<Result<String, GatewayError>> = self
            .gateway
            .complete_each(requests, self.fanout)
            .into_iter()
            .map(|o| o.map(|r| r.content))
            .collect();
        stages.extend(
            requests
                .iter()
                .zip(&outcomes)
                .map(|(r, o)| record(&r.stage, &r.seed_tag, o)),
        );
        outcomes.into_iter().map(|o| o.map_err(PipelineError::from)).collect()
    }

    /// One generation call, then deterministic truncation to the word limit.
    pub fn run_subtask1(
        &self,
        case: &CaseRecord,
        program: &PromptProgram,
    ) -> Result<Traced<String>, PipelineError> {
        let req = self.request(
            case,
            program,
            &case_inputs(case),
            stage::ST1_GENERATE,
            "st1".into(),
            self.cfg.temp_st1,
            self.cfg.max_tokens_st1,
        )?;
        let mut stages = Vec::new();
        let raw = self.issue(std::slice::from_ref(&req), &mut stages)?.remove(0);
        let question = program.extract(&raw, "clinician_question");
        let value = conform_question(&question, self.cfg.word_limit_st1)
            .ok_or_else(|| PipelineError::case(&case.case_id, "model returned an empty question"))?;
        let mut notes = Vec::new();
        if value != question.trim() {
            notes.push(format!("question post-processed from {:?}", question.trim()));
        }
        Ok(Traced { value, stages, notes })
    }

    /// `R_st2` classifier runs, majority-voted per sentence.
    pub fn run_subtask2(
        &self,
        case: &CaseRecord,
        program: &PromptProgram,
    ) -> Result<Traced<BTreeSet<u32>>, PipelineError> {
        let inputs = case_inputs(case);
        let requests = (1..=self.cfg.r_st2)
            .map(|r| {
                self.request(
                    case,
                    program,
                    &inputs,
                    stage::ST2_CLASSIFY,
                    format!("st2/run{r}"),
                    self.cfg.temp_st2,
                    self.cfg.max_tokens_other,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut stages = Vec::new();
        let outputs = self.issue(&requests, &mut stages)?;
        let expected = case.note_ids();
        let mut tally = VoteTally::new(self.cfg.r_st2).map_err(|e| PipelineError::Config(e.to_string()))?;
        let mut notes = Vec::new();
        let mut parsed_runs = 0;
        for (r, raw) in outputs.iter().enumerate() {
            let essential = match parse_st2(raw, &expected) {
                Ok(p) => {
                    parsed_runs += 1;
                    if p.malformed > 0 || !p.absent.is_empty() {
                        notes.push(format!(
                            "run {}: {} malformed lines, absent ids {:?}",
                            r + 1,
                            p.malformed,
                            p.absent
                        ));
                    }
                    p.essential_ids()
                }
                Err(e) => {
                    tracing::warn!(case = %case.case_id, run = r + 1, "unparseable classifier output");
                    notes.push(format!("run {}: {e}", r + 1));
                    BTreeSet::new()
                }
            };
            tally
                .record_run(essential)
                .map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        if parsed_runs == 0 {
            return Err(PipelineError::case(&case.case_id, "no classifier run could be parsed"));
        }
        Ok(Traced {
            value: majority_vote(&tally),
            stages,
            notes,
        })
    }

    /// One reasoning call per gold-labelled sentence, packaged as
    /// single-sentence classifier demos.
    pub fn generate_reasoning_demos(
        &self,
        cases: &[CaseRecord],
        essential_program: &PromptProgram,
        nonessential_program: &PromptProgram,
    ) -> Result<Vec<Demo>, PipelineError> {
        let mut jobs = Vec::new();
        for case in cases {
            let gold = case.require_gold()?;
            let essential = gold.essential();
            for s in &case.note_sentences {
                let is_essential = essential.contains(&s.id);
                let (program, stage) = if is_essential {
                    (essential_program, stage::ST2_REASON_ESSENTIAL)
                } else {
                    (nonessential_program, stage::ST2_REASON_NONESSENTIAL)
                };
                let mut inputs = case_inputs(case);
                inputs.insert("note_sentence".into(), s.text.clone());
                let req = self.request(
                    case,
                    program,
                    &inputs,
                    stage,
                    format!("st2/demo{}", s.id),
                    self.cfg.temp_st2,
                    self.cfg.max_tokens_other,
                )?;
                jobs.push((case, s, is_essential, program, req));
            }
        }
        let requests: Vec<ChatRequest> = jobs.iter().map(|j| j.4.clone()).collect();
        let outcomes = self.gateway.complete_each(&requests, self.fanout);
        let mut demos = Vec::new();
        for ((case, sentence, is_essential, program, _), outcome) in jobs.into_iter().zip(outcomes) {
            let raw = match outcome {
                Ok(r) => r.content,
                Err(e) => {
                    tracing::warn!(case = %case.case_id, sentence = sentence.id, error = %e, "reasoning call failed; pair skipped");
                    continue;
                }
            };
            let reasoning = program
                .extract(&raw, "reasoning")
                .split_whitespace()
                .collect::<Vec<_>>()
                .join(" ");
            if reasoning.is_empty() {
                continue;
            }
            let verdict = SentenceVerdict {
                note_id: sentence.id,
                label: if is_essential {
                    VerdictLabel::Essential
                } else {
                    VerdictLabel::Irrelevant
                },
                score: if is_essential { 10 } else { 0 },
                reasoning,
            };
            let mut inputs = case_inputs(case);
            inputs.insert("clinical_notes".into(), format!("{}: {}", sentence.id, sentence.text));
            demos.push(Demo {
                inputs,
                outputs: BTreeMap::from([(
                    "verdicts".to_string(),
                    format_st2(&[verdict], |_| Some(sentence.text.as_str())),
                )]),
            });
        }
        Ok(demos)
    }

    /// `candidates_st3` sampled answers and one consolidation call.
    pub fn run_subtask3(
        &self,
        case: &CaseRecord,
        answer_program: &PromptProgram,
        consolidation_program: &PromptProgram,
        essential: &BTreeSet<u32>,
    ) -> Result<Traced<String>, PipelineError> {
        let limit = self.cfg.word_limit_st3;
        let mut inputs = case_inputs(case);
        let evidence = numbered(
            essential
                .iter()
                .filter_map(|id| case.note_text(*id).map(|t| (*id, t))),
        );
        inputs.insert(
            "essential_sentences".into(),
            if evidence.is_empty() {
                "(none identified)".into()
            } else {
                evidence
            },
        );
        let requests = (1..=self.cfg.candidates_st3)
            .map(|k| {
                self.request(
                    case,
                    answer_program,
                    &inputs,
                    stage::ST3_CANDIDATE,
                    format!("st3/cand{k}"),
                    self.cfg.temp_st3,
                    self.cfg.max_tokens_other,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut stages = Vec::new();
        let mut notes = Vec::new();
        let candidates: Vec<String> = self
            .issue(&requests, &mut stages)?
            .iter()
            .map(|raw| strip_citations(&answer_program.extract(raw, "answer")))
            .collect();
        let usable: Vec<&String> = candidates.iter().filter(|c| !c.is_empty()).collect();
        if usable.is_empty() {
            return Err(PipelineError::case(&case.case_id, "every candidate answer was empty"));
        }
        inputs.insert(
            "candidate_answers".into(),
            usable
                .iter()
                .enumerate()
                .map(|(i, c)| format!("Candidate {}:\n{c}", i + 1))
                .collect::<Vec<_>>()
                .join("\n\n"),
        );
        let req = self.request(
            case,
            consolidation_program,
            &inputs,
            stage::ST3_CONSOLIDATE,
            "st3/consolidate".into(),
            CONSOLIDATION_TEMPERATURE,
            self.cfg.max_tokens_other,
        )?;
        let raw = self.issue(std::slice::from_ref(&req), &mut stages)?.remove(0);
        let consolidated = conform_answer(&consolidation_program.extract(&raw, "answer"), limit);
        let value = if consolidated.is_empty() {
            notes.push("consolidation unusable; fell back to the longest conforming candidate".into());
            fallback_candidate(&usable, limit)
        } else {
            consolidated
        };
        Ok(Traced { value, stages, notes })
    }

    /// `R_st4` runs of align, reflect and verify; only verified links vote.
    pub fn run_subtask4(
        &self,
        case: &CaseRecord,
        programs: [&PromptProgram; 3],
        answer: &[AnswerSentence],
    ) -> Result<Traced<Vec<AlignmentLink>>, PipelineError> {
        let answer_count = answer.len() as u32;
        let note_ids = case.note_ids();
        let mut inputs = case_inputs(case);
        inputs.insert(
            "answer_sentences".into(),
            numbered(answer.iter().map(|s| (s.id, s.text.as_str()))),
        );
        let runs: Vec<u32> = (1..=self.cfg.r_st4).collect();
        // Runs are independent; stages inside a run are sequential.
        let outcomes = self.gateway.execution().map_bounded(&runs, self.fanout, |&r| {
            self.alignment_run(case, programs, &inputs, r, answer_count, &note_ids)
        });
        let mut tally = VoteTally::new(self.cfg.r_st4).map_err(|e| PipelineError::Config(e.to_string()))?;
        let mut stages = Vec::new();
        let mut notes = Vec::new();
        let mut parsed_runs = 0;
        for (r, outcome) in runs.iter().zip(outcomes) {
            let (links, run_stages, run_notes) = outcome?;
            stages.extend(run_stages);
            notes.extend(run_notes.into_iter().map(|n| format!("run {r}: {n}")));
            let links = match links {
                Some(l) => {
                    parsed_runs += 1;
                    l
                }
                None => Vec::new(),
            };
            tally
                .record_run_with_confidence(links.iter().map(|l| (l.key(), l.confidence)))
                .map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        if parsed_runs == 0 {
            return Err(PipelineError::case(&case.case_id, "no verification output could be parsed"));
        }
        let value = aggregate_links(&tally, self.cfg.tau_c)
            .map_err(|e| PipelineError::Config(e.to_string()))?
            .into_iter()
            .filter(|d| d.retained)
            .map(|d| d.link)
            .collect();
        Ok(Traced { value, stages, notes })
    }

    #[allow(clippy::type_complexity)]
    fn alignment_run(
        &self,
        case: &CaseRecord,
        [align, reflect, verify]: [&PromptProgram; 3],
        base: &Inputs,
        run: u32,
        answer_count: u32,
        note_ids: &BTreeSet<u32>,
    ) -> Result<(Option<Vec<AlignmentLink>>, Vec<StageRecord>, Vec<String>), PipelineError> {
        let mut stages = Vec::new();
        let mut notes = Vec::new();
        let mut inputs = base.clone();
        let mut links = None;
        let plan = [
            (align, stage::ST4_ALIGN, "align", "initial_alignment"),
            (reflect, stage::ST4_REFLECT, "reflect", "reflected_alignment"),
            (verify, stage::ST4_VERIFY, "verify", ""),
        ];
        for (program, label, step, next_field) in plan {
            let req = self.request(
                case,
                program,
                &inputs,
                label,
                format!("st4/run{run}/{step}"),
                self.cfg.temp_st4,
                self.cfg.max_tokens_other,
            )?;
            let raw = self.issue(std::slice::from_ref(&req), &mut stages)?.remove(0);
            links = match parse_st4(&raw, answer_count, note_ids) {
                Ok(p) => {
                    if p.malformed > 0 || p.clamped > 0 {
                        notes.push(format!("{step}: {} malformed lines, {} clamped", p.malformed, p.clamped));
                    }
                    Some(p.links)
                }
                Err(e) => {
                    tracing::warn!(case = %case.case_id, run, step, "unparseable alignment output");
                    notes.push(format!("{step}: {e}"));
                    None
                }
            };
            if !next_field.is_empty() {
                let carried = links.as_deref().unwrap_or(&[]);
                inputs.insert(next_field.to_string(), format_st4(carried, answer_count));
            }
        }
        Ok((links, stages, notes))
    }

    /// Runs `subtask` on one case with the programs in `programs`.
    pub fn run_case(
        &self,
        subtask: Subtask,
        case: &CaseRecord,
        programs: &ProgramSet,
        evidence: &EvidenceSource,
    ) -> Result<CaseRun, PipelineError> {
        let mut bundle = PredictionBundle::new(case.case_id.clone());
        let mut evidence_source = None;
        let (stages, notes) = match subtask {
            Subtask::Interpretation => {
                let t = self.run_subtask1(case, &programs.st1)?;
                bundle.st1_question = Some(t.value);
                (t.stages, t.notes)
            }
            Subtask::Evidence => {
                let t = self.run_subtask2(case, &programs.st2)?;
                bundle.st2_essential_ids = Some(t.value);
                (t.stages, t.notes)
            }
            Subtask::Answer => {
                evidence_source = Some(evidence.label().to_string());
                let mut stages = Vec::new();
                let mut notes = Vec::new();
                let essential = match evidence {
                    EvidenceSource::Gold => case.require_gold()?.essential(),
                    EvidenceSource::Given(map) => map.get(&case.case_id).cloned().ok_or_else(|| {
                        PipelineError::case(&case.case_id, "no essential sentences in the evidence submission")
                    })?,
                    EvidenceSource::Predict => {
                        let t = self.run_subtask2(case, &programs.st2)?;
                        stages = t.stages;
                        notes = t.notes;
                        t.value
                    }
                };
                let t = self.run_subtask3(case, &programs.st3, &programs.st3_consolidation, &essential)?;
                bundle.st3_answer = Some(t.value);
                stages.extend(t.stages);
                notes.extend(t.notes);
                (stages, notes)
            }
            Subtask::Alignment => {
                let gold = case.require_gold()?;
                if gold.reference_answer.is_empty() {
                    return Err(PipelineError::case(&case.case_id, "no reference answer sentences to align"));
                }
                let t = self.run_subtask4(
                    case,
                    [&programs.st4_align, &programs.st4_reflect, &programs.st4_verify],
                    &gold.reference_answer,
                )?;
                bundle.st4_links = Some(t.value);
                (t.stages, t.notes)
            }
        };
        bundle.canonicalize();
        let mut calls = BTreeMap::new();
        for s in &stages {
            *calls.entry(s.stage.clone()).or_insert(0) += 1;
        }
        let mut used = programs.for_subtask(subtask);
        if subtask == Subtask::Answer && *evidence == EvidenceSource::Predict {
            used.push(&programs.st2);
        }
        let program_hashes = used.into_iter().map(|p| (p.name.clone(), p.content_hash())).collect();
        Ok(CaseRun {
            bundle,
            provenance: Provenance {
                case_id: case.case_id.clone(),
                subtask,
                config: self.cfg.clone(),
                program_hashes,
                evidence_source,
                calls,
                stages,
                notes,
            },
        })
    }

    /// Runs `subtask` over `cases` with at most `jobs` cases in flight.
    /// Results come back in input order.
    pub fn run_all(
        &self,
        subtask: Subtask,
        cases: &[CaseRecord],
        programs: &ProgramSet,
        evidence: &EvidenceSource,
        jobs: usize,
    ) -> Vec<Result<CaseRun, PipelineError>> {
        self.gateway
            .execution()
            .map_bounded(cases, jobs.max(1), |case| self.run_case(subtask, case, programs, evidence))
    }
}

fn is_terminal_punct(c: char) -> bool {
    c.is_whitespace() || matches!(c, '.' | ',' | ';' | ':' | '!' | '?' | '…' | '-' | '–' | '—')
}

/// Forces `text` into at most `limit` words ending with `?`; `None` when
/// nothing but punctuation remains.
pub fn conform_question(text: &str, limit: usize) -> Option<String> {
    let trimmed = text.trim();
    let words: Vec<&str> = trimmed.split_whitespace().collect();
    if words.len() <= limit && trimmed.ends_with('?') {
        return Some(trimmed.to_string());
    }
    let kept = words[..words.len().min(limit)].join(" ");
    let core = kept.trim_end_matches(is_terminal_punct);
    if core.is_empty() {
        return None;
    }
    Some(format!("{core}?"))
}

/// Removes bracketed citation markers until none remain, tidying the
/// whitespace they leave behind.
pub fn strip_citations(text: &str) -> String {
    let space_before_punct = regex_lite_space();
    let mut current = text.split_whitespace().collect::<Vec<_>>().join(" ");
    loop {
        let next = citation_marker().replace_all(&current, "");
        let next = space_before_punct.replace_all(&next, "$1");
        let next = next.split_whitespace().collect::<Vec<_>>().join(" ");
        if next == current {
            return current;
        }
        current = next;
    }
}

fn regex_lite_space() -> &'static regex::Regex {
    static RE: std::sync::OnceLock<regex::Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| regex::Regex::new(r"\s+([.,;:!?])").expect("static regex"))
}

/// Strips citation markers, then drops sentences from the end until the
/// answer fits `limit` words. A single over-long sentence is cut at the limit.
pub fn conform_answer(text: &str, limit: usize) -> String {
    let clean = strip_citations(text);
    let mut sentences: Vec<Vec<&str>> = Vec::new();
    let mut current = Vec::new();
    for token in clean.split_whitespace() {
        current.push(token);
        let end = token.trim_end_matches(['"', '\'', ')', '”', '’']);
        if end.ends_with(['.', '!', '?']) {
            sentences.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    let mut total: usize = sentences.iter().map(Vec::len).sum();
    while total > limit && sentences.len() > 1 {
        total -= sentences.pop().map_or(0, |s| s.len());
    }
    let mut words: Vec<&str> = sentences.concat();
    words.truncate(limit);
    words.join(" ")
}

fn fallback_candidate(candidates: &[&String], limit: usize) -> String {
    let fits = candidates
        .iter()
        .filter(|c| crate::model::count_words(c) <= limit)
        .max_by_key(|c| (crate::model::count_words(c), std::cmp::Reverse(c.as_str())));
    match fits {
        Some(c) => conform_answer(c, limit),
        None => {
            let longest = candidates
                .iter()
                .max_by_key(|c| (crate::model::count_words(c), std::cmp::Reverse(c.as_str())))
                .expect("at least one candidate");
            conform_answer(longest, limit)
        }
    }
}
