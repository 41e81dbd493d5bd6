//! Line grammars for classifier verdicts and alignment links.
//!
//! Verdict line:   `<id>: <sentence> -> essential|irrelevant -> <score> -> <reasoning>`
//! Alignment line: `answer_sentence_k: [note_ids] (confidence=[scores])`
//!
//! Parsing is tolerant: malformed lines are skipped and counted, and only
//! an output with nothing parseable at all is an error.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::ParseError;
use crate::model::AlignmentLink;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictLabel {
    Essential,
    Irrelevant,
}

impl VerdictLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            VerdictLabel::Essential => "essential",
            VerdictLabel::Irrelevant => "irrelevant",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        let s = s.trim().trim_matches(|c| c == '*' || c == '`' || c == '"');
        if s.eq_ignore_ascii_case("essential") {
            Some(VerdictLabel::Essential)
        } else if s.eq_ignore_ascii_case("irrelevant") {
            Some(VerdictLabel::Irrelevant)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceVerdict {
    pub note_id: u32,
    pub label: VerdictLabel,
    /// Relevancy score, 0 to 10.
    pub score: u8,
    pub reasoning: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct St2Parse {
    pub verdicts: Vec<SentenceVerdict>,
    pub malformed: usize,
    /// Well-formed lines naming ids outside the excerpt.
    pub out_of_range: Vec<u32>,
    /// Expected ids with no verdict; downstream treats them as irrelevant.
    pub absent: Vec<u32>,
}

impl St2Parse {
    pub fn essential_ids(&self) -> BTreeSet<u32> {
        self.verdicts
            .iter()
            .filter(|v| v.label == VerdictLabel::Essential)
            .map(|v| v.note_id)
            .collect()
    }
}

fn verdict_head() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^(?:[-*•]\s+)?(?:\*\*)?\[?(\d+)\]?(?:\*\*)?\s*:(.*)$").expect("static regex")
    })
}

fn parse_score(s: &str) -> Option<u8> {
    let s = s.trim().trim_matches('*');
    let s = s.strip_suffix("/10").unwrap_or(s).trim();
    let value = match s.parse::<u8>() {
        Ok(v) => v,
        Err(_) => {
            let f: f64 = s.parse().ok()?;
            if f.fract() != 0.0 || !(0.0..=10.0).contains(&f) {
                return None;
            }
            f as u8
        }
    };
    (value <= 10).then_some(value)
}

fn parse_verdict_line(line: &str) -> Option<Result<SentenceVerdict, ()>> {
    let mut line = line.trim();
    if line.get(..9).is_some_and(|p| p.eq_ignore_ascii_case("verdicts:")) {
        line = line[9..].trim_start();
    }
    let caps = verdict_head().captures(line)?;
    let note_id: u32 = match caps[1].parse() {
        Ok(id) => id,
        Err(_) => return Some(Err(())),
    };
    let parts: Vec<&str> = caps[2].split("->").collect();
    for i in 0..parts.len().saturating_sub(1) {
        let Some(label) = VerdictLabel::parse(parts[i]) else {
            continue;
        };
        let Some(score) = parse_score(parts[i + 1]) else {
            continue;
        };
        let reasoning = parts[i + 2..].join("->").trim().to_string();
        return Some(Ok(SentenceVerdict {
            note_id,
            label,
            score,
            reasoning,
        }));
    }
    Some(Err(()))
}

/// Parses classifier output into one verdict per well-formed line.
pub fn parse_st2(raw: &str, expected_ids: &BTreeSet<u32>) -> Result<St2Parse, ParseError> {
    let mut out = St2Parse::default();
    let mut seen = BTreeSet::new();
    let mut parsed_any = false;
    for line in raw.lines() {
        match parse_verdict_line(line) {
            None => {}
            Some(Err(())) => out.malformed += 1,
            Some(Ok(v)) => {
                parsed_any = true;
                if !expected_ids.contains(&v.note_id) {
                    tracing::warn!(note_id = v.note_id, "verdict for unknown sentence id dropped");
                    out.out_of_range.push(v.note_id);
                } else if !seen.insert(v.note_id) {
                    tracing::warn!(note_id = v.note_id, "duplicate verdict ignored");
                } else {
                    out.verdicts.push(v);
                }
            }
        }
    }
    if !parsed_any {
        return Err(ParseError::NothingParsed {
            raw: raw.to_string(),
            malformed: out.malformed,
        });
    }
    out.absent = expected_ids.iter().filter(|id| !seen.contains(id)).copied().collect();
    Ok(out)
}

/// Formats verdicts, echoing each sentence's text when `note_text` knows it.
pub fn format_st2<'a>(
    verdicts: &[SentenceVerdict],
    note_text: impl Fn(u32) -> Option<&'a str>,
) -> String {
    verdicts
        .iter()
        .map(|v| {
            format!(
                "{}: {} -> {} -> {} -> {}",
                v.note_id,
                note_text(v.note_id).unwrap_or(""),
                v.label.as_str(),
                v.score,
                v.reasoning
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct St4Parse {
    pub links: Vec<AlignmentLink>,
    pub malformed: usize,
    /// Answer-sentence lines outside `1..=answer_count`.
    pub out_of_range_answers: Vec<u32>,
    /// `(answer_id, note_id)` pairs naming unknown note sentences.
    pub out_of_range_notes: Vec<(u32, u32)>,
    /// Confidences that had to be clamped into [0, 1].
    pub clamped: usize,
}

fn link_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^answer[_ ]?sentence[_ ]?(\d+)\s*:\s*\[([^\]]*)\]\s*\(?\s*confidences?\s*[=:]\s*\[([^\]]*)\]\s*\)?\s*$",
        )
        .expect("static regex")
    })
}

fn link_head() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^answer[_ ]?sentence[_ ]?\d+").expect("static regex"))
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Option<Vec<T>> {
    let s = s.trim();
    if s.is_empty() {
        return Some(Vec::new());
    }
    s.split(',').map(|x| x.trim().parse().ok()).collect()
}

/// Parses aligner output; confidences zip positionally with note ids.
pub fn parse_st4(
    raw: &str,
    answer_count: u32,
    note_ids: &BTreeSet<u32>,
) -> Result<St4Parse, ParseError> {
    let mut out = St4Parse::default();
    let mut parsed_any = false;
    let mut seen = BTreeSet::new();
    for line in raw.lines() {
        let line = line
            .trim()
            .trim_start_matches(['-', '*', '•', '`'])
            .trim_end_matches('`')
            .trim();
        let line = match line.get(..10) {
            Some(p) if p.eq_ignore_ascii_case("alignment:") => line[10..].trim_start(),
            _ => line,
        };
        let Some(caps) = link_line().captures(line) else {
            if link_head().is_match(line) {
                out.malformed += 1;
            }
            continue;
        };
        let (Ok(answer_id), Some(ids), Some(confs)) = (
            caps[1].parse::<u32>(),
            parse_list::<u32>(&caps[2]),
            parse_list::<f64>(&caps[3]),
        ) else {
            out.malformed += 1;
            continue;
        };
        if ids.len() != confs.len() || confs.iter().any(|c| c.is_nan()) {
            out.malformed += 1;
            continue;
        }
        parsed_any = true;
        if answer_id == 0 || answer_id > answer_count {
            tracing::warn!(answer_id, "alignment line for unknown answer sentence dropped");
            out.out_of_range_answers.push(answer_id);
            continue;
        }
        for (note_id, conf) in ids.into_iter().zip(confs) {
            if !note_ids.contains(&note_id) {
                tracing::warn!(answer_id, note_id, "link to unknown note sentence dropped");
                out.out_of_range_notes.push((answer_id, note_id));
                continue;
            }
            if !seen.insert((answer_id, note_id)) {
                continue;
            }
            let clamped = conf.clamp(0.0, 1.0);
            if clamped != conf {
                tracing::warn!(answer_id, note_id, conf, "confidence clamped into [0, 1]");
                out.clamped += 1;
            }
            out.links.push(AlignmentLink::new(answer_id, note_id, clamped));
        }
    }
    if !parsed_any {
        return Err(ParseError::NothingParsed {
            raw: raw.to_string(),
            malformed: out.malformed,
        });
    }
    Ok(out)
}

/// One line per answer sentence `1..=answer_count`, note ids ascending.
pub fn format_st4(links: &[AlignmentLink], answer_count: u32) -> String {
    (1..=answer_count)
        .map(|k| {
            let mut mine: Vec<&AlignmentLink> = links.iter().filter(|l| l.answer_id == k).collect();
            mine.sort_by_key(|l| l.note_id);
            let ids: Vec<String> = mine.iter().map(|l| l.note_id.to_string()).collect();
            let confs: Vec<String> = mine.iter().map(|l| format!("{:.2}", l.confidence)).collect();
            format!(
                "answer_sentence_{k}: [{}] (confidence=[{}])",
                ids.join(", "),
                confs.join(", ")
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn field_label() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*(?:#+\s*)?(?:\*\*)?\s*([A-Za-z][A-Za-z0-9_ ]{0,40}?)\s*(?:\*\*)?\s*:(?:\*\*)?")
            .expect("static regex")
    })
}

fn label_of(line: &str, labels: &[&str]) -> Option<(String, usize)> {
    let caps = field_label().captures(line)?;
    let name = caps[1].trim().to_ascii_lowercase().replace(' ', "_");
    labels
        .iter()
        .any(|l| l.eq_ignore_ascii_case(&name))
        .then(|| (name, caps.get(0).map_or(0, |m| m.end())))
}

/// Text after the last `<field>:` label, up to the next label in `labels`.
///
/// Falls back to the whole trimmed text when the label never appears.
pub fn parse_labeled_field(raw: &str, field: &str, labels: &[&str]) -> String {
    let mut all: Vec<&str> = labels.to_vec();
    if !all.iter().any(|l| l.eq_ignore_ascii_case(field)) {
        all.push(field);
    }
    let lines: Vec<&str> = raw.lines().collect();
    let start = lines.iter().enumerate().rev().find_map(|(i, line)| {
        label_of(line, &all)
            .filter(|(name, _)| name.eq_ignore_ascii_case(field))
            .map(|(_, end)| (i, end))
    });
    let Some((i, end)) = start else {
        return raw.trim().to_string();
    };
    let mut body = vec![&lines[i][end..]];
    for line in &lines[i + 1..] {
        if label_of(line, &all).is_some() {
            break;
        }
        body.push(line);
    }
    body.join("\n").trim().to_string()
}
