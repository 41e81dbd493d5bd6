//! Shared-task scoring: evidence and alignment P/R/F1, ROUGE-L, BLEU, and
//! output validators.
//!
//! Degenerate-case conventions (vacuous success scores 1):
//! - no predictions: precision is 1 when there is nothing to find, else 0;
//! - nothing to find: recall is 1;
//! - F1 is 0 whenever precision + recall is 0.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::MetricError;
use crate::model::{count_words, AlignmentLink, GoldAnnotations};
use crate::par::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        Self {
            precision,
            recall,
            f1: harmonic(precision, recall),
        }
    }

    /// P/R/F1 from counts under the vacuous-success conventions.
    pub fn from_counts(tp: usize, predicted: usize, relevant: usize) -> Self {
        let precision = ratio_or(tp, predicted, if relevant == 0 { 1.0 } else { 0.0 });
        let recall = ratio_or(tp, relevant, 1.0);
        Self::new(precision, recall)
    }
}

fn ratio_or(num: usize, den: usize, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvidenceMetrics {
    pub strict_micro: Prf,
    pub lenient_micro: Prf,
    pub strict_macro: Prf,
    pub lenient_macro: Prf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
struct EvidenceCounts {
    predicted: usize,
    essential: usize,
    strict_tp: usize,
    lenient_tp: usize,
}

impl EvidenceCounts {
    fn of(pred: &BTreeSet<u32>, gold: &GoldAnnotations) -> Self {
        let essential = gold.essential();
        let supplementary = gold.supplementary();
        let strict_tp = pred.intersection(&essential).count();
        Self {
            predicted: pred.len(),
            essential: essential.len(),
            strict_tp,
            lenient_tp: strict_tp + pred.intersection(&supplementary).count(),
        }
    }

    fn strict(&self) -> Prf {
        Prf::from_counts(self.strict_tp, self.predicted, self.essential)
    }

    /// Supplementary hits count toward precision only; recall keeps the
    /// essential-only denominator.
    fn lenient(&self) -> Prf {
        let precision = ratio_or(
            self.lenient_tp,
            self.predicted,
            if self.essential == 0 { 1.0 } else { 0.0 },
        );
        Prf::new(precision, ratio_or(self.strict_tp, self.essential, 1.0))
    }
}

fn mean_prf(items: &[Prf]) -> Prf {
    if items.is_empty() {
        return Prf::default();
    }
    let n = items.len() as f64;
    Prf {
        precision: items.iter().map(|p| p.precision).sum::<f64>() / n,
        recall: items.iter().map(|p| p.recall).sum::<f64>() / n,
        f1: items.iter().map(|p| p.f1).sum::<f64>() / n,
    }
}

fn gold_for<'a>(
    golds: &'a BTreeMap<String, GoldAnnotations>,
    case_id: &str,
) -> Result<&'a GoldAnnotations, MetricError> {
    golds
        .get(case_id)
        .ok_or_else(|| MetricError::MissingGold(case_id.to_string()))
}

/// Strict and lenient evidence scores, micro and macro averaged.
pub fn evidence_metrics(
    predictions: &BTreeMap<String, BTreeSet<u32>>,
    golds: &BTreeMap<String, GoldAnnotations>,
) -> Result<EvidenceMetrics, MetricError> {
    evidence_metrics_with(predictions, golds, Execution::default())
}

pub fn evidence_metrics_with(
    predictions: &BTreeMap<String, BTreeSet<u32>>,
    golds: &BTreeMap<String, GoldAnnotations>,
    exec: Execution,
) -> Result<EvidenceMetrics, MetricError> {
    let cases: Vec<(&String, &BTreeSet<u32>)> = predictions.iter().collect();
    let per_case: Vec<EvidenceCounts> = exec
        .map(&cases, |(id, pred)| {
            gold_for(golds, id).map(|g| EvidenceCounts::of(pred, g))
        })
        .into_iter()
        .collect::<Result<_, _>>()?;
    let pooled = per_case.iter().fold(EvidenceCounts::default(), |acc, c| EvidenceCounts {
        predicted: acc.predicted + c.predicted,
        essential: acc.essential + c.essential,
        strict_tp: acc.strict_tp + c.strict_tp,
        lenient_tp: acc.lenient_tp + c.lenient_tp,
    });
    let strict: Vec<Prf> = per_case.iter().map(EvidenceCounts::strict).collect();
    let lenient: Vec<Prf> = per_case.iter().map(EvidenceCounts::lenient).collect();
    Ok(EvidenceMetrics {
        strict_micro: pooled.strict(),
        lenient_micro: pooled.lenient(),
        strict_macro: mean_prf(&strict),
        lenient_macro: mean_prf(&lenient),
    })
}

/// Strict F1 of one case's predicted evidence set.
pub fn case_evidence_f1(pred: &BTreeSet<u32>, gold: &GoldAnnotations) -> f64 {
    EvidenceCounts::of(pred, gold).strict().f1
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AlignmentMetrics {
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
}

/// Link-level scores pooled over cases; confidence is ignored.
pub fn alignment_metrics(
    predictions: &BTreeMap<String, Vec<AlignmentLink>>,
    golds: &BTreeMap<String, GoldAnnotations>,
) -> Result<AlignmentMetrics, MetricError> {
    alignment_metrics_with(predictions, golds, Execution::default())
}

pub fn alignment_metrics_with(
    predictions: &BTreeMap<String, Vec<AlignmentLink>>,
    golds: &BTreeMap<String, GoldAnnotations>,
    exec: Execution,
) -> Result<AlignmentMetrics, MetricError> {
    let cases: Vec<(&String, &Vec<AlignmentLink>)> = predictions.iter().collect();
    let counts: Vec<(usize, usize, usize)> = exec
        .map(&cases, |(id, links)| {
            gold_for(golds, id).map(|g| link_counts(links, &g.link_pairs()))
        })
        .into_iter()
        .collect::<Result<_, _>>()?;
    let (tp, predicted, relevant) = counts
        .iter()
        .fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
    let prf = Prf::from_counts(tp, predicted, relevant);
    Ok(AlignmentMetrics {
        micro_precision: prf.precision,
        micro_recall: prf.recall,
        micro_f1: prf.f1,
    })
}

fn link_counts(links: &[AlignmentLink], gold: &BTreeSet<(u32, u32)>) -> (usize, usize, usize) {
    let pred: BTreeSet<(u32, u32)> = links.iter().map(AlignmentLink::key).collect();
    (pred.intersection(gold).count(), pred.len(), gold.len())
}

/// Link-level F1 of one case.
pub fn case_alignment_f1(links: &[AlignmentLink], gold: &BTreeSet<(u32, u32)>) -> f64 {
    let (tp, p, r) = link_counts(links, gold);
    Prf::from_counts(tp, p, r).f1
}

/// Lowercased alphanumeric runs; whitespace and punctuation separate tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L precision, recall and F1 from the longest common subsequence.
pub fn rouge_l(candidate: &str, reference: &str) -> Prf {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    match (c.is_empty(), r.is_empty()) {
        (true, true) => return Prf::new(1.0, 1.0),
        (true, _) | (_, true) => return Prf::new(0.0, 0.0),
        _ => {}
    }
    let lcs = lcs_len(&c, &r) as f64;
    Prf::new(lcs / c.len() as f64, lcs / r.len() as f64)
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU with 1-4 grams, clipped counts over all references,
/// add-one smoothing for orders 2-4, and the closest-reference brevity
/// penalty.
pub fn bleu(candidate: &str, references: &[&str]) -> f64 {
    const MAX_N: usize = 4;
    let cand = tokenize(candidate);
    if cand.is_empty() || references.is_empty() {
        return 0.0;
    }
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r)).collect();
    let mut log_sum = 0.0;
    for n in 1..=MAX_N {
        let cand_counts = ngram_counts(&cand, n);
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for r in &refs {
            for (g, c) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        let matched: usize = cand_counts
            .iter()
            .map(|(g, c)| (*c).min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        let total = cand.len().saturating_sub(n - 1);
        let p = if n == 1 {
            if matched == 0 {
                return 0.0;
            }
            matched as f64 / total as f64
        } else {
            (matched as f64 + 1.0) / (total as f64 + 1.0)
        };
        log_sum += p.ln() / MAX_N as f64;
    }
    let c = cand.len() as f64;
    let r = refs
        .iter()
        .map(|t| t.len())
        .min_by_key(|len| ((*len as i64 - cand.len() as i64).abs(), *len))
        .unwrap_or(0) as f64;
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * log_sum.exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    Empty,
    OverWordLimit,
    MissingQuestionMark,
    CitationMarkerPresent,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Violation::Empty => "empty",
            Violation::OverWordLimit => "over_word_limit",
            Violation::MissingQuestionMark => "missing_question_mark",
            Violation::CitationMarkerPresent => "citation_marker_present",
        })
    }
}

/// Bracketed numeric citation markers such as `[1]`, `[2, 3]` or `[4-6]`.
pub fn citation_marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\[\s*\d+(?:\s*[,;\-–]\s*\d+)*\s*\]").expect("static regex")
    })
}

pub const ST1_WORD_LIMIT: usize = 15;
pub const ST3_WORD_LIMIT: usize = 75;

/// Format violations of a question (`Interpretation`) or answer (`Answer`).
pub fn validate_output(text: &str, subtask: crate::model::Subtask) -> Vec<Violation> {
    use crate::model::Subtask;
    let limit = match subtask {
        Subtask::Interpretation => ST1_WORD_LIMIT,
        Subtask::Answer => ST3_WORD_LIMIT,
        _ => return Vec::new(),
    };
    validate_with_limit(text, subtask, limit)
}

pub fn validate_with_limit(text: &str, subtask: crate::model::Subtask, limit: usize) -> Vec<Violation> {
    use crate::model::Subtask;
    let text = text.trim();
    if text.is_empty() {
        return vec![Violation::Empty];
    }
    let mut out = Vec::new();
    if count_words(text) > limit {
        out.push(Violation::OverWordLimit);
    }
    match subtask {
        Subtask::Interpretation if !text.ends_with('?') => out.push(Violation::MissingQuestionMark),
        Subtask::Answer if citation_marker().is_match(text) => {
            out.push(Violation::CitationMarkerPresent)
        }
        _ => {}
    }
    out
}

/// Column value in a report; external-model metrics are never computed here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Value(f64),
    NotComputed,
}

impl Serialize for Cell {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Cell::Value(v) => s.serialize_f64(*v),
            Cell::NotComputed => s.serialize_str("not computed"),
        }
    }
}

/// Scores for one subtask, columns in leaderboard order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub subtask: crate::model::Subtask,
    pub cases: usize,
    #[serde(serialize_with = "ordered_columns")]
    pub columns: Vec<(String, Cell)>,
    pub notes: Vec<String>,
}

fn ordered_columns<S: serde::Serializer>(cols: &[(String, Cell)], s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeMap;
    let mut map = s.serialize_map(Some(cols.len()))?;
    for (k, v) in cols {
        map.serialize_entry(k, v)?;
    }
    map.end()
}

impl Report {
    pub fn get(&self, column: &str) -> Option<Cell> {
        self.columns.iter().find(|(k, _)| k == column).map(|(_, v)| *v)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }

    /// Plain-text table: one header row, one value row, notes below.
    pub fn to_table(&self) -> String {
        let cells: Vec<String> = self
            .columns
            .iter()
            .map(|(_, v)| match v {
                Cell::Value(x) => format!("{x:.4}"),
                Cell::NotComputed => "n/c".to_string(),
            })
            .collect();
        let widths: Vec<usize> = self
            .columns
            .iter()
            .zip(&cells)
            .map(|((k, _), c)| k.chars().count().max(c.len()))
            .collect();
        let row = |items: Vec<&str>| {
            items
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        let mut out = format!("{} ({} cases)\n", self.subtask, self.cases);
        out.push_str(&row(self.columns.iter().map(|(k, _)| k.as_str()).collect()));
        out.push('\n');
        out.push_str(&row(cells.iter().map(String::as_str).collect()));
        out.push('\n');
        for n in &self.notes {
            out.push_str(&format!("note: {n}\n"));
        }
        out
    }
}

const CONVENTIONS: &str = "empty prediction scores precision 1 only when nothing is to be found; \
     empty gold scores recall 1; F1 is 0 when precision + recall is 0; macro averages per-case values";

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Scores `predictions` against the gold cases they name.
pub fn build_report(
    subtask: crate::model::Subtask,
    predictions: &[crate::model::PredictionBundle],
    cases: &[crate::model::CaseRecord],
) -> Result<Report, MetricError> {
    use crate::model::Subtask;
    let by_id: BTreeMap<&str, &crate::model::CaseRecord> =
        cases.iter().map(|c| (c.case_id.as_str(), c)).collect();
    let case_of = |id: &str| by_id.get(id).copied().ok_or_else(|| MetricError::MissingGold(id.to_string()));
    let gold_of = |id: &str| -> Result<&GoldAnnotations, MetricError> {
        case_of(id)?.gold.as_ref().ok_or_else(|| MetricError::MissingGold(id.to_string()))
    };
    let missing = |id: &str| MetricError::Incomplete {
        case_id: id.to_string(),
        reason: format!("no {} prediction", subtask.label()),
    };
    let mut notes = Vec::new();
    let nc = Cell::NotComputed;
    let columns: Vec<(String, Cell)> = match subtask {
        Subtask::Interpretation => {
            let mut scores = Vec::new();
            let mut violations = 0;
            for b in predictions {
                let pred = b.st1_question.as_deref().ok_or_else(|| missing(&b.case_id))?;
                let reference = case_of(&b.case_id)?.clinician_question.as_deref().ok_or_else(|| {
                    MetricError::Incomplete {
                        case_id: b.case_id.clone(),
                        reason: "no reference clinician question".into(),
                    }
                })?;
                violations += usize::from(!validate_output(pred, subtask).is_empty());
                scores.push(rouge_l(pred, reference).f1);
            }
            notes.push(format!("{violations} predictions violate the question format"));
            vec![
                ("Overall".to_string(), nc),
                ("R.L.".to_string(), Cell::Value(mean(scores.into_iter()))),
                ("B.S.".to_string(), nc),
                ("A.S.".to_string(), nc),
                ("M.C.".to_string(), nc),
            ]
        }
        Subtask::Evidence => {
            let mut preds = BTreeMap::new();
            let mut golds = BTreeMap::new();
            for b in predictions {
                preds.insert(b.case_id.clone(), b.st2_essential_ids.clone().ok_or_else(|| missing(&b.case_id))?);
                golds.insert(b.case_id.clone(), gold_of(&b.case_id)?.clone());
            }
            let m = evidence_metrics(&preds, &golds)?;
            notes.push(CONVENTIONS.to_string());
            let mut cols = vec![("Overall".to_string(), Cell::Value(m.strict_micro.f1))];
            for (name, prf) in [
                ("Strict Micro", m.strict_micro),
                ("Lenient Micro", m.lenient_micro),
                ("Strict Macro", m.strict_macro),
                ("Lenient Macro", m.lenient_macro),
            ] {
                cols.push((format!("{name} P"), Cell::Value(prf.precision)));
                cols.push((format!("{name} R"), Cell::Value(prf.recall)));
                cols.push((format!("{name} F1"), Cell::Value(prf.f1)));
            }
            cols
        }
        Subtask::Answer => {
            let mut bleus = Vec::new();
            let mut rouges = Vec::new();
            let mut violations = 0;
            for b in predictions {
                let pred = b.st3_answer.as_deref().ok_or_else(|| missing(&b.case_id))?;
                let reference = gold_of(&b.case_id)?.reference_text();
                violations += usize::from(!validate_output(pred, subtask).is_empty());
                bleus.push(bleu(pred, &[reference.as_str()]));
                rouges.push(rouge_l(pred, &reference).f1);
            }
            notes.push(format!("{violations} predictions violate the answer format"));
            vec![
                ("Overall".to_string(), nc),
                ("BLEU".to_string(), Cell::Value(mean(bleus.into_iter()))),
                ("R.L.".to_string(), Cell::Value(mean(rouges.into_iter()))),
                ("SARI".to_string(), nc),
                ("B.S.".to_string(), nc),
                ("A.S.".to_string(), nc),
                ("M.C.".to_string(), nc),
            ]
        }
        Subtask::Alignment => {
            let mut preds = BTreeMap::new();
            let mut golds = BTreeMap::new();
            for b in predictions {
                preds.insert(b.case_id.clone(), b.st4_links.clone().ok_or_else(|| missing(&b.case_id))?);
                golds.insert(b.case_id.clone(), gold_of(&b.case_id)?.clone());
            }
            let m = alignment_metrics(&preds, &golds)?;
            notes.push(CONVENTIONS.to_string());
            vec![
                ("Overall".to_string(), Cell::Value(m.micro_f1)),
                ("M.P.".to_string(), Cell::Value(m.micro_precision)),
                ("M.R.".to_string(), Cell::Value(m.micro_recall)),
                ("M.F1".to_string(), Cell::Value(m.micro_f1)),
            ]
        }
    };
    if columns.iter().any(|(_, c)| *c == Cell::NotComputed) {
        notes.push("n/c columns need external models and are not computed".into());
    }
    Ok(Report {
        subtask,
        cases: predictions.len(),
        columns,
        notes,
    })
}
