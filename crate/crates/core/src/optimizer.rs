//! Instruction and demo search for one subtask's program.
//!
//! The search is a sampled grid over (instruction variant, demo subset)
//! pairs, scored by running the owning pipeline on the development cases.
//! Trial 0 is always the unmodified base program.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, PipelineError};
use crate::evaluation::{case_alignment_f1, case_evidence_f1, rouge_l, tokenize};
use crate::gateway::{ChatRequest, Gateway};
use crate::model::{count_words, AlignmentLink, CaseRecord, GoldAnnotations, Subtask};
use crate::par::Execution;
use crate::pipelines::{EvidenceSource, Pipelines};
use crate::programs::defaults::ProgramSet;
use crate::programs::{format_st4, Demo, Inputs, PromptProgram};

pub const PROPOSE_STAGE: &str = "opt.propose";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizationBudget {
    pub num_instruction_candidates: usize,
    pub num_demo_subsets: usize,
    pub max_trials: usize,
    pub judge_temperature: f64,
    /// Seeds demo sampling and trial order.
    pub seed: u64,
}

impl Default for OptimizationBudget {
    fn default() -> Self {
        Self {
            num_instruction_candidates: 8,
            num_demo_subsets: 6,
            max_trials: 24,
            judge_temperature: 0.3,
            seed: 0,
        }
    }
}

impl OptimizationBudget {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.num_instruction_candidates == 0 || self.num_demo_subsets == 0 || self.max_trials == 0 {
            return bad("optimization budget counts must be at least 1".into());
        }
        if self.max_trials > self.num_instruction_candidates * self.num_demo_subsets {
            return bad(format!(
                "max_trials {} exceeds the {}x{} candidate grid",
                self.max_trials, self.num_instruction_candidates, self.num_demo_subsets
            ));
        }
        if !(0.0..=2.0).contains(&self.judge_temperature) {
            return bad(format!("judge_temperature must be within [0, 2], got {}", self.judge_temperature));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateProgram {
    pub base: PromptProgram,
    pub instruction_variant: String,
    pub demo_subset: Vec<Demo>,
    pub trial_score: Option<f64>,
}

impl CandidateProgram {
    pub fn materialize(&self) -> PromptProgram {
        self.base
            .with_instruction(self.instruction_variant.clone())
            .with_demos(self.demo_subset.clone())
    }
}

/// A [0, 1] objective value; `fallback` marks a judge term replaced by its
/// deterministic stand-in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub value: f64,
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rubric {
    St1Semantic,
    St3Faithfulness,
    St3Completeness,
    St3Coherence,
}

impl Rubric {
    pub fn stage(self) -> &'static str {
        match self {
            Rubric::St1Semantic => "judge.st1.semantic",
            Rubric::St3Faithfulness => "judge.st3.faithfulness",
            Rubric::St3Completeness => "judge.st3.completeness",
            Rubric::St3Coherence => "judge.st3.coherence",
        }
    }
}

/// Scores one prediction against a rubric, in [0, 1].
pub trait Judge: Sync {
    fn score(&self, rubric: Rubric, case_id: &str, inputs: &Inputs) -> Result<f64, PipelineError>;
}

impl<F> Judge for F
where
    F: Fn(Rubric, &str, &Inputs) -> Result<f64, PipelineError> + Sync,
{
    fn score(&self, rubric: Rubric, case_id: &str, inputs: &Inputs) -> Result<f64, PipelineError> {
        self(rubric, case_id, inputs)
    }
}

/// Judge backed by the rubric programs in a [`ProgramSet`].
pub struct LlmJudge<'a> {
    pub gateway: &'a Gateway,
    pub programs: &'a ProgramSet,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl LlmJudge<'_> {
    fn program(&self, rubric: Rubric) -> &PromptProgram {
        match rubric {
            Rubric::St1Semantic => &self.programs.judge_st1_semantic,
            Rubric::St3Faithfulness => &self.programs.judge_st3_faithfulness,
            Rubric::St3Completeness => &self.programs.judge_st3_completeness,
            Rubric::St3Coherence => &self.programs.judge_st3_coherence,
        }
    }
}

impl Judge for LlmJudge<'_> {
    fn score(&self, rubric: Rubric, case_id: &str, inputs: &Inputs) -> Result<f64, PipelineError> {
        let program = self.program(rubric);
        let request = ChatRequest {
            model_id: self.gateway.model_id().to_string(),
            messages: program.render(inputs)?,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            seed_tag: "judge".into(),
            stage: rubric.stage().into(),
            scope: Some(case_id.to_string()),
        };
        let raw = self.gateway.complete(&request)?.content;
        let field = program.extract(&raw, "score");
        parse_score(&field)
            .ok_or_else(|| PipelineError::case(case_id, format!("unparseable {} score {field:?}", rubric.stage())))
    }
}

/// First number in `text` when it lies in [0, 1].
pub fn parse_score(text: &str) -> Option<f64> {
    let start = text.find(|c: char| c.is_ascii_digit() || c == '.')?;
    let rest = &text[start..];
    let end = rest
        .find(|c: char| !(c.is_ascii_digit() || c == '.'))
        .unwrap_or(rest.len());
    let v: f64 = rest[..end].trim_end_matches('.').parse().ok()?;
    (0.0..=1.0).contains(&v).then_some(v)
}

const STOPWORDS: &[&str] = &[
    "about", "above", "after", "again", "against", "among", "because", "before", "being", "below",
    "between", "could", "doing", "during", "every", "further", "having", "itself", "might", "other",
    "should", "their", "theirs", "there", "these", "thing", "those", "through", "under", "until",
    "where", "which", "while", "whose", "would", "yours", "himself", "herself", "myself", "themselves",
];

/// Reference words of five or more letters that are not function words.
pub fn content_words(text: &str) -> BTreeSet<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| t.chars().count() >= 5 && !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// Fraction of the reference's content words present in the prediction;
/// 1 when the reference has none.
pub fn key_term_overlap(predicted: &str, reference: &str) -> f64 {
    let wanted = content_words(reference);
    if wanted.is_empty() {
        return 1.0;
    }
    let have: BTreeSet<String> = tokenize(predicted).into_iter().collect();
    wanted.iter().filter(|w| have.contains(*w)).count() as f64 / wanted.len() as f64
}

const PATIENT_PRONOUNS: &[&str] = &["he", "she", "him", "her", "his", "hers", "they", "them", "their"];

/// One third per satisfied condition: within the word limit, ends with
/// `?`, refers to the patient.
pub fn question_structure(predicted: &str, word_limit: usize) -> f64 {
    let text = predicted.trim();
    let tokens = tokenize(text);
    let refers = tokens.iter().any(|t| PATIENT_PRONOUNS.contains(&t.as_str()))
        || tokens.windows(2).any(|w| w[0] == "the" && w[1] == "patient");
    let met = [count_words(text) <= word_limit, text.ends_with('?'), refers]
        .iter()
        .filter(|b| **b)
        .count();
    met as f64 / 3.0
}

pub const ST1_WEIGHTS: (f64, f64, f64) = (0.60, 0.25, 0.15);

/// Weighted combination of judged semantic equivalence, key-term overlap
/// and question structure.
pub fn objective_st1(predicted: &str, reference: &str, case_id: &str, judge: &dyn Judge) -> Objective {
    let key_terms = key_term_overlap(predicted, reference);
    let structure = question_structure(predicted, crate::evaluation::ST1_WORD_LIMIT);
    let inputs = BTreeMap::from([
        ("reference_question".to_string(), reference.to_string()),
        ("predicted_question".to_string(), predicted.to_string()),
    ]);
    let (semantic, fallback) = match judge.score(Rubric::St1Semantic, case_id, &inputs) {
        Ok(s) => (s, false),
        Err(e) => {
            tracing::warn!(case = case_id, error = %e, "semantic judge failed; using key-term overlap");
            (key_terms, true)
        }
    };
    let (ws, wk, wt) = ST1_WEIGHTS;
    Objective {
        value: ws * semantic + wk * key_terms + wt * structure,
        fallback,
    }
}

/// Strict evidence F1 of one case.
pub fn objective_st2(predicted: &BTreeSet<u32>, gold: &GoldAnnotations) -> f64 {
    case_evidence_f1(predicted, gold)
}

/// Mean of judged faithfulness, completeness and coherence with ROUGE-L F1.
pub fn objective_st3(predicted: &str, reference: &str, case: &CaseRecord, judge: &dyn Judge) -> Objective {
    let lexical = rouge_l(predicted, reference).f1;
    let answer = ("answer".to_string(), predicted.to_string());
    let plan = [
        (Rubric::St3Faithfulness, ("clinical_notes".to_string(), case.numbered_excerpt())),
        (Rubric::St3Completeness, ("reference_answer".to_string(), reference.to_string())),
        (Rubric::St3Coherence, ("patient_question".to_string(), case.patient_question.clone())),
    ];
    let mut fallback = false;
    let mut total = lexical;
    for (rubric, extra) in plan {
        let inputs = BTreeMap::from([answer.clone(), extra]);
        total += match judge.score(rubric, &case.case_id, &inputs) {
            Ok(s) => s,
            Err(e) => {
                tracing::warn!(case = %case.case_id, rubric = rubric.stage(), error = %e, "judge failed; using ROUGE-L");
                fallback = true;
                lexical
            }
        };
    }
    Objective {
        value: total / 4.0,
        fallback,
    }
}

/// Link F1 of one case, confidences ignored.
pub fn objective_st4(predicted: &[AlignmentLink], gold: &GoldAnnotations) -> f64 {
    case_alignment_f1(predicted, &gold.link_pairs())
}

fn excerpt(text: &str, max_chars: usize) -> String {
    match text.char_indices().nth(max_chars) {
        Some((i, _)) => format!("{}…", &text[..i]),
        None => text.to_string(),
    }
}

/// Two dev cases rendered as input/expected-output examples for the proposer.
pub fn proposal_examples(subtask: Subtask, cases: &[CaseRecord]) -> String {
    cases
        .iter()
        .filter_map(|c| {
            let gold = c.gold.as_ref()?;
            let expected = match subtask {
                Subtask::Interpretation => c.clinician_question.clone()?,
                Subtask::Evidence => format!("essential sentence ids: {:?}", gold.essential()),
                Subtask::Answer => gold.reference_text(),
                Subtask::Alignment => format_st4(&gold_links(gold), gold.reference_answer.len() as u32),
            };
            Some(format!(
                "Patient question: {}\nPatient narrative: {}\nExpected output: {}",
                c.patient_question,
                excerpt(&c.patient_narrative, 600),
                expected
            ))
        })
        .take(2)
        .enumerate()
        .map(|(i, s)| format!("Example {}:\n{s}", i + 1))
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn gold_links(gold: &GoldAnnotations) -> Vec<AlignmentLink> {
    gold.link_pairs()
        .into_iter()
        .map(|(a, n)| AlignmentLink::new(a, n, 1.0))
        .collect()
}

/// Splits proposer output on `### Variant <n>` headers.
pub fn parse_variants(raw: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in raw.lines() {
        let head = line.trim().trim_start_matches('#').trim();
        let is_header = line.trim_start().starts_with('#')
            && head
                .get(..7)
                .is_some_and(|p| p.eq_ignore_ascii_case("variant"))
            && head[7..].trim().trim_end_matches(':').parse::<u32>().is_ok();
        if is_header {
            if let Some(block) = current.take() {
                out.push(block.join("\n").trim().to_string());
            }
            current = Some(Vec::new());
        } else if let Some(block) = &mut current {
            block.push(line);
        }
    }
    if let Some(block) = current {
        out.push(block.join("\n").trim().to_string());
    }
    out.retain(|v| !v.is_empty());
    out
}

/// The base instruction followed by up to `n - 1` distinct rewrites.
///
/// Duplicate or empty rewrites are discarded, so fewer than `n` may come
/// back; a failed proposer call yields the base instruction alone.
pub fn propose_instructions(
    gateway: &Gateway,
    proposer: &PromptProgram,
    base: &PromptProgram,
    examples: &str,
    n: usize,
    temperature: f64,
) -> Vec<String> {
    let mut out = vec![base.instruction.clone()];
    if n <= 1 {
        return out;
    }
    let inputs = BTreeMap::from([
        ("current_instruction".to_string(), base.instruction.clone()),
        ("examples".to_string(), examples.to_string()),
        ("variant_count".to_string(), (n - 1).to_string()),
    ]);
    let raw = proposer.render(&inputs).map_err(PipelineError::from).and_then(|messages| {
        let request = ChatRequest {
            model_id: gateway.model_id().to_string(),
            messages,
            temperature,
            max_tokens: 10_000,
            seed_tag: format!("propose/{}", base.name),
            stage: PROPOSE_STAGE.into(),
            scope: None,
        };
        Ok(gateway.complete(&request)?.content)
    });
    let raw = match raw {
        Ok(r) => r,
        Err(e) => {
            tracing::warn!(program = %base.name, error = %e, "instruction proposal failed; keeping base only");
            return out;
        }
    };
    let variants_field = proposer.extract(&raw, "variants");
    let mut seen: BTreeSet<String> = BTreeSet::from([normalize(&base.instruction)]);
    for v in parse_variants(&variants_field) {
        if out.len() == n {
            break;
        }
        if seen.insert(normalize(&v)) {
            out.push(v);
        }
    }
    out
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// One evaluated (instruction, demo subset) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub instruction_hash: String,
    pub demo_count: usize,
    pub score: Option<f64>,
    #[serde(skip)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: PromptProgram,
    pub best_trial: Option<usize>,
    pub best_score: Option<f64>,
    pub trials: Vec<TrialRecord>,
}

impl SearchOutcome {
    pub fn base_score(&self) -> Option<f64> {
        self.trials.first().and_then(|t| t.score)
    }

    pub fn all_failed(&self) -> bool {
        self.trials.iter().all(|t| t.score.is_none())
    }
}

/// Demo subsets: the base program's own demos first, then samples of
/// size 0, 2 and 4 (in rotation) from `pool`, distinct, `count` in total.
pub fn demo_subsets(base: &PromptProgram, pool: &[Demo], count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<Demo>> {
    let mut subsets = vec![base.demos.clone()];
    let sizes = [0usize, 2, 4];
    let mut attempts = 0;
    while subsets.len() < count && attempts < count * 8 {
        let size = sizes[attempts % sizes.len()].min(pool.len());
        attempts += 1;
        let mut pick: Vec<Demo> = pool.choose_multiple(rng, size).cloned().collect();
        pick.sort_by(|a, b| (&a.inputs, &a.outputs).cmp(&(&b.inputs, &b.outputs)));
        if !subsets.contains(&pick) {
            subsets.push(pick);
        }
    }
    subsets
}

/// Scores up to `max_trials` grid cells with `evaluate` and keeps the best.
///
/// Ties go to fewer demos, then to the earlier trial. If every trial fails,
/// the base program is returned unchanged.
pub fn search<E>(
    base: &PromptProgram,
    instructions: &[String],
    pool: &[Demo],
    budget: &OptimizationBudget,
    exec: Execution,
    evaluate: E,
) -> SearchOutcome
where
    E: Fn(&PromptProgram) -> Result<f64, PipelineError> + Sync,
{
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let mut instructions: Vec<String> = if instructions.is_empty() {
        vec![base.instruction.clone()]
    } else {
        instructions.to_vec()
    };
    instructions.truncate(budget.num_instruction_candidates);
    let subsets = demo_subsets(base, pool, budget.num_demo_subsets, &mut rng);
    let mut grid: Vec<(usize, usize)> = (0..instructions.len())
        .flat_map(|i| (0..subsets.len()).map(move |d| (i, d)))
        .filter(|&cell| cell != (0, 0))
        .collect();
    grid.shuffle(&mut rng);
    grid.insert(0, (0, 0));
    grid.truncate(budget.max_trials);

    let candidates: Vec<CandidateProgram> = grid
        .iter()
        .map(|&(i, d)| CandidateProgram {
            base: base.clone(),
            instruction_variant: instructions[i].clone(),
            demo_subset: subsets[d].clone(),
            trial_score: None,
        })
        .collect();
    let scores = exec.map(&candidates, |c| evaluate(&c.materialize()));
    let mut trials = Vec::with_capacity(candidates.len());
    let mut best: Option<(usize, f64)> = None;
    for (trial, (cand, score)) in candidates.iter().zip(scores).enumerate() {
        let program = cand.materialize();
        let (score, error) = match score {
            Ok(s) => (Some(s), None),
            Err(e) => {
                tracing::warn!(trial, error = %e, "trial failed");
                (None, Some(e.to_string()))
            }
        };
        if let Some(s) = score {
            let better = match best {
                None => true,
                Some((b, bs)) => {
                    s > bs || (s == bs && program.demos.len() < candidates[b].demo_subset.len())
                }
            };
            if better {
                best = Some((trial, s));
            }
        }
        trials.push(TrialRecord {
            trial,
            instruction_hash: hex::encode(<sha2::Sha256 as sha2::Digest>::digest(
                cand.instruction_variant.as_bytes(),
            )),
            demo_count: cand.demo_subset.len(),
            score,
            error,
        });
    }
    match best {
        Some((t, s)) => SearchOutcome {
            best: candidates[t].materialize(),
            best_trial: Some(t),
            best_score: Some(s),
            trials,
        },
        None => SearchOutcome {
            best: base.clone(),
            best_trial: None,
            best_score: None,
            trials,
        },
    }
}

/// Writes `trial,instruction_hash,demo_count,score`; failed trials have an
/// empty score.
pub fn write_trials_csv(path: &Path, trials: &[TrialRecord]) -> Result<(), ModelError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| ModelError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    };
    w.write_record(["trial", "instruction_hash", "demo_count", "score"]).map_err(io)?;
    for t in trials {
        w.write_record([
            t.trial.to_string(),
            t.instruction_hash.clone(),
            t.demo_count.to_string(),
            t.score.map(|s| format!("{s:.6}")).unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| io(e.into_error().into()))?;
    crate::dataset::write_atomic(path, &bytes)
}

/// Gold-derived demos for the optimized program of `subtask`.
pub fn gold_demos(subtask: Subtask, cases: &[CaseRecord]) -> Vec<Demo> {
    let mut demos = Vec::new();
    for case in cases {
        let Some(gold) = &case.gold else { continue };
        let mut inputs = BTreeMap::from([
            ("patient_narrative".to_string(), case.patient_narrative.clone()),
            ("patient_question".to_string(), case.patient_question.clone()),
        ]);
        let output = match subtask {
            Subtask::Interpretation => {
                let Some(q) = &case.clinician_question else { continue };
                ("clinician_question".to_string(), q.clone())
            }
            Subtask::Evidence => continue,
            Subtask::Answer => {
                inputs.insert("clinician_question".into(), case.clinician_question.clone().unwrap_or_default());
                inputs.insert("clinical_notes".into(), case.numbered_excerpt());
                let essential: Vec<String> = gold
                    .essential()
                    .iter()
                    .filter_map(|id| case.note_text(*id).map(|t| format!("{id}: {t}")))
                    .collect();
                inputs.insert("essential_sentences".into(), essential.join("\n"));
                ("answer".to_string(), gold.reference_text())
            }
            Subtask::Alignment => {
                if gold.reference_answer.is_empty() {
                    continue;
                }
                inputs.insert("clinician_question".into(), case.clinician_question.clone().unwrap_or_default());
                inputs.insert("clinical_notes".into(), case.numbered_excerpt());
                inputs.insert(
                    "answer_sentences".into(),
                    gold.reference_answer
                        .iter()
                        .map(|s| format!("{}: {}", s.id, s.text))
                        .collect::<Vec<_>>()
                        .join("\n"),
                );
                (
                    "alignment".to_string(),
                    format_st4(&gold_links(gold), gold.reference_answer.len() as u32),
                )
            }
        };
        demos.push(Demo {
            inputs,
            outputs: BTreeMap::from([output]),
        });
    }
    demos
}

/// Mean objective of `program` in `subtask`'s slot over `dev` cases.
/// A case-level pipeline failure scores 0; gateway and configuration
/// errors fail the trial.
pub fn evaluate_program(
    subtask: Subtask,
    program: &PromptProgram,
    pipelines: &Pipelines<'_>,
    programs: &ProgramSet,
    dev: &[CaseRecord],
    judge: &dyn Judge,
) -> Result<f64, PipelineError> {
    let mut set = programs.clone();
    *set.optimized_slot(subtask) = program.clone();
    let mut total = 0.0;
    for case in dev {
        let gold = case.require_gold()?;
        let run = match pipelines.run_case(subtask, case, &set, &EvidenceSource::Gold) {
            Ok(run) => run.bundle,
            Err(PipelineError::Case { case_id, reason }) => {
                tracing::debug!(case = %case_id, %reason, "case failed during trial");
                continue;
            }
            Err(e) => return Err(e),
        };
        total += match subtask {
            Subtask::Interpretation => {
                let reference = case.clinician_question.as_deref().unwrap_or_default();
                objective_st1(run.st1_question.as_deref().unwrap_or_default(), reference, &case.case_id, judge).value
            }
            Subtask::Evidence => objective_st2(run.st2_essential_ids.as_ref().expect("st2 output"), gold),
            Subtask::Answer => objective_st3(
                run.st3_answer.as_deref().unwrap_or_default(),
                &gold.reference_text(),
                case,
                judge,
            )
            .value,
            Subtask::Alignment => objective_st4(run.st4_links.as_deref().unwrap_or_default(), gold),
        };
    }
    Ok(total / dev.len() as f64)
}

/// Proposes instructions, builds the demo pool and searches for `subtask`.
pub fn optimize_subtask(
    subtask: Subtask,
    pipelines: &Pipelines<'_>,
    programs: &ProgramSet,
    dev: &[CaseRecord],
    budget: &OptimizationBudget,
    judge: &dyn Judge,
) -> Result<SearchOutcome, PipelineError> {
    budget.validate()?;
    if dev.is_empty() {
        return Err(PipelineError::Config("the development set is empty".into()));
    }
    for case in dev {
        case.require_gold()?;
        if subtask == Subtask::Interpretation && case.clinician_question.is_none() {
            return Err(PipelineError::case(&case.case_id, "no reference clinician question"));
        }
    }
    let base = programs.optimized(subtask);
    let instructions = propose_instructions(
        pipelines.gateway,
        &programs.proposer,
        base,
        &proposal_examples(subtask, dev),
        budget.num_instruction_candidates,
        budget.judge_temperature,
    );
    let pool = match subtask {
        Subtask::Evidence => pipelines.generate_reasoning_demos(
            dev,
            &programs.st2_essential_reasoning,
            &programs.st2_nonessential_reasoning,
        )?,
        _ => gold_demos(subtask, dev),
    };
    Ok(search(base, &instructions, &pool, budget, pipelines.gateway.execution(), |p| {
        evaluate_program(subtask, p, pipelines, programs, dev, judge)
    }))
}
