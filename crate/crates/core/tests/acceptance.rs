//! Acceptance gate: prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails. Runs offline against stub and
//! scripted backends.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use groundqa::consensus::{aggregate_links, majority_vote, VoteTally};
use groundqa::dataset::render_submission;
use groundqa::evaluation::{alignment_metrics, evidence_metrics, validate_output, Prf};
use groundqa::gateway::{ResponseCache, StubBackend};
use groundqa::model::{AnswerSentence, GoldAlignment, NoteSentence, RelevanceLabel};
use groundqa::optimizer::{objective_st1, search, OptimizationBudget, Rubric};
use groundqa::par::Execution;
use groundqa::pipelines::{stage, EvidenceSource, PipelineConfig, Pipelines};
use groundqa::programs::grammar::{format_st2, format_st4, parse_st2, parse_st4, SentenceVerdict, VerdictLabel};
use groundqa::programs::{defaults, Demo};
use groundqa::{AlignmentLink, CaseRecord, ChatRequest, Gateway, GoldAnnotations, PipelineError, ProgramSet, Subtask};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, Option<Duration>, Check); 9] = [
        ("voting oracle equivalence", Some(Duration::from_secs(10)), voting_oracle),
        ("dual-filter boundary", None, dual_filter_boundary),
        ("strict/lenient metric identity", None, metric_identity),
        ("metric oracle equivalence", Some(Duration::from_secs(5)), metric_oracle),
        ("per-case call budgets", None, call_budgets),
        ("format guarantees", None, format_guarantees),
        ("parser round-trips", None, parser_round_trips),
        ("optimizer sanity", None, optimizer_sanity),
        ("replay determinism", None, replay_determinism),
    ];
    let mut failed = 0;
    for (i, (name, limit, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let took = start.elapsed();
        let result = match (result, limit) {
            (Ok(_), Some(l)) if took >= *l => Err(format!("took {took:.2?}, limit {l:?}")),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail}; {took:.2?})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why}; {took:.2?})", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// 1 -------------------------------------------------------------------

/// Per-run outcome digits for one item: 0 = not emitted, d = emitted with
/// confidence (d - 1) / 10.
fn decode(mut index: usize, runs: u32) -> Vec<u8> {
    (0..runs)
        .map(|_| {
            let d = (index % 12) as u8;
            index /= 12;
            d
        })
        .collect()
}

fn voting_oracle() -> Result<String, String> {
    let mut checked = 0usize;
    // binary votes: every emission pattern when it fits in 16 bits, and
    // every per-item vote-count vector otherwise
    for runs in 1..=4u32 {
        for items in 1..=6u32 {
            let bits = items * runs;
            let patterns: Vec<Vec<BTreeSet<u32>>> = if bits <= 16 {
                (0..1u32 << bits)
                    .map(|mask| {
                        (0..runs)
                            .map(|r| (0..items).filter(|i| mask >> (r * items + i) & 1 == 1).collect())
                            .collect()
                    })
                    .collect()
            } else {
                let combos = (runs as usize + 1).pow(items);
                (0..combos)
                    .map(|mut c| {
                        let counts: Vec<u32> = (0..items)
                            .map(|_| {
                                let v = (c % (runs as usize + 1)) as u32;
                                c /= runs as usize + 1;
                                v
                            })
                            .collect();
                        (0..runs)
                            .map(|r| (0..items).filter(|&i| r < counts[i as usize]).collect())
                            .collect()
                    })
                    .collect()
            };
            for per_run in patterns {
                let mut tally = VoteTally::new(runs).map_err(|e| e.to_string())?;
                for run in &per_run {
                    tally.record_run(run.iter().copied()).map_err(|e| e.to_string())?;
                }
                let expected: BTreeSet<u32> = (0..items)
                    .filter(|i| 2 * per_run.iter().filter(|r| r.contains(i)).count() as u32 >= runs)
                    .collect();
                let got = majority_vote(&tally);
                ensure(got == expected, || format!("majority_vote R={runs} runs={per_run:?}: {got:?} != {expected:?}"))?;
                checked += 1;
            }
        }
    }
    // links: every (emitting runs, confidence) outcome per item for each
    // R, packed into tallies of 1 to 6 items, against every tau on the grid
    for runs in 1..=4u32 {
        let outcomes: Vec<Vec<u8>> = (0..12usize.pow(runs)).map(|i| decode(i, runs)).collect();
        let mut chunk_size = 1;
        let mut start = 0;
        while start < outcomes.len() {
            let chunk = &outcomes[start..(start + chunk_size).min(outcomes.len())];
            start += chunk.len();
            chunk_size = chunk_size % 6 + 1;
            let mut tally = VoteTally::new(runs).map_err(|e| e.to_string())?;
            for r in 0..runs as usize {
                let emitted = chunk
                    .iter()
                    .enumerate()
                    .filter(|(_, o)| o[r] > 0)
                    .map(|(j, o)| ((1, j as u32), f64::from(o[r] - 1) / 10.0));
                tally.record_run_with_confidence(emitted).map_err(|e| e.to_string())?;
            }
            for tau_tenths in 0..=10u32 {
                let tau = f64::from(tau_tenths) / 10.0;
                let decisions = aggregate_links(&tally, tau).map_err(|e| e.to_string())?;
                let mut expected = BTreeMap::new();
                for (j, o) in chunk.iter().enumerate() {
                    let votes = o.iter().filter(|d| **d > 0).count() as u32;
                    if votes == 0 {
                        continue;
                    }
                    let sum_tenths: u32 = o.iter().filter(|d| **d > 0).map(|d| u32::from(d - 1)).sum();
                    let keep = 2 * votes >= runs && sum_tenths > tau_tenths * votes;
                    let mean = f64::from(sum_tenths) / (10.0 * f64::from(votes));
                    expected.insert((1, j as u32), (votes, keep, mean));
                }
                ensure(decisions.len() == expected.len(), || {
                    format!("aggregate_links R={runs} tau={tau}: {} decisions for {} links", decisions.len(), expected.len())
                })?;
                for d in &decisions {
                    let Some(&(votes, keep, mean)) = expected.get(&d.link.key()) else {
                        return Err(format!("unexpected link {:?}", d.link.key()));
                    };
                    ensure(d.votes == votes && d.retained == keep && (d.link.confidence - mean).abs() < 1e-12, || {
                        format!(
                            "R={runs} tau={tau} link {:?}: got ({}, {}, {}), want ({votes}, {keep}, {mean})",
                            d.link.key(),
                            d.votes,
                            d.retained,
                            d.link.confidence
                        )
                    })?;
                    checked += 1;
                }
            }
        }
    }
    Ok(format!("{checked} decisions, 0 mismatches"))
}

// 2 -------------------------------------------------------------------

fn dual_filter_boundary() -> Result<String, String> {
    let mut tally = VoteTally::new(5).map_err(|e| e.to_string())?;
    let a = (2, 4);
    let b = (1, 1);
    let runs: [Vec<((u32, u32), f64)>; 5] = [
        vec![(a, 0.95), (b, 0.95)],
        vec![(a, 0.92), (b, 0.85)],
        vec![(a, 0.97), (b, 0.90)],
        vec![(b, 0.90)],
        vec![],
    ];
    for run in runs {
        tally.record_run_with_confidence(run).map_err(|e| e.to_string())?;
    }
    let decisions = aggregate_links(&tally, 0.9).map_err(|e| e.to_string())?;
    let find = |k| decisions.iter().find(|d| d.link.key() == k).copied();
    let (da, db) = (find(a).ok_or("link a missing")?, find(b).ok_or("link b missing")?);
    ensure(da.votes == 3 && da.retained, || format!("3/5 at mean {:.4} should be retained", da.link.confidence))?;
    ensure(db.votes == 4 && !db.retained, || format!("4/5 at mean {:.4} should be dropped", db.link.confidence))?;
    ensure((db.link.confidence - 0.9).abs() < 1e-12, || format!("mean {} != 0.90", db.link.confidence))?;
    Ok(format!("3/5 mean {:.4} kept, 4/5 mean 0.90 dropped", da.link.confidence))
}

// 3, 4 ----------------------------------------------------------------

fn random_gold(rng: &mut ChaCha8Rng, notes: u32) -> GoldAnnotations {
    let relevance = (1..=notes)
        .map(|id| {
            let label = match rng.gen_range(0..3) {
                0 => RelevanceLabel::Essential,
                1 => RelevanceLabel::Supplementary,
                _ => RelevanceLabel::NotRelevant,
            };
            (id, label)
        })
        .collect();
    GoldAnnotations { relevance, ..Default::default() }
}

fn random_subset(rng: &mut ChaCha8Rng, notes: u32, p: f64) -> BTreeSet<u32> {
    (1..=notes).filter(|_| rng.gen_bool(p)).collect()
}

type EvidenceFixture = (BTreeMap<String, BTreeSet<u32>>, BTreeMap<String, GoldAnnotations>);

fn evidence_fixture(rng: &mut ChaCha8Rng) -> EvidenceFixture {
    let mut preds = BTreeMap::new();
    let mut golds = BTreeMap::new();
    for c in 0..rng.gen_range(1..=6) {
        let notes = rng.gen_range(1..=12);
        let p = rng.gen_range(0.0..1.0);
        preds.insert(format!("case{c}"), random_subset(rng, notes, p));
        golds.insert(format!("case{c}"), random_gold(rng, notes));
    }
    (preds, golds)
}

fn metric_identity() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..1000 {
        let (preds, golds) = evidence_fixture(&mut rng);
        let m = evidence_metrics(&preds, &golds).map_err(|e| e.to_string())?;
        for (scope, strict, lenient) in [("micro", m.strict_micro, m.lenient_micro), ("macro", m.strict_macro, m.lenient_macro)] {
            ensure((strict.recall - lenient.recall).abs() <= f64::EPSILON, || {
                format!("trial {trial} {scope}: strict R {} != lenient R {}", strict.recall, lenient.recall)
            })?;
            ensure(strict.precision <= lenient.precision, || {
                format!("trial {trial} {scope}: strict P {} > lenient P {}", strict.precision, lenient.precision)
            })?;
        }
    }
    Ok("1000 fixtures".into())
}

/// Counts by direct membership tests over plain vectors.
fn naive_prf(tp: usize, predicted: usize, relevant: usize) -> (f64, f64, f64) {
    let p = if predicted == 0 {
        if relevant == 0 { 1.0 } else { 0.0 }
    } else {
        tp as f64 / predicted as f64
    };
    let r = if relevant == 0 { 1.0 } else { tp as f64 / relevant as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

fn close(prf: Prf, want: (f64, f64, f64)) -> bool {
    (prf.precision - want.0).abs() < 1e-12 && (prf.recall - want.1).abs() < 1e-12 && (prf.f1 - want.2).abs() < 1e-12
}

fn naive_evidence(preds: &BTreeMap<String, BTreeSet<u32>>, golds: &BTreeMap<String, GoldAnnotations>) -> [(f64, f64, f64); 4] {
    let (mut st, mut lt, mut np, mut ne) = (0, 0, 0, 0);
    let mut strict_rows = Vec::new();
    let mut lenient_rows = Vec::new();
    for (id, pred) in preds {
        let labels = &golds[id].relevance;
        let pred: Vec<u32> = pred.iter().copied().collect();
        let essential: Vec<u32> = labels.iter().filter(|(_, l)| **l == RelevanceLabel::Essential).map(|(i, _)| *i).collect();
        let strict_tp = pred.iter().filter(|i| essential.contains(i)).count();
        let lenient_tp = pred
            .iter()
            .filter(|i| matches!(labels.get(i), Some(RelevanceLabel::Essential | RelevanceLabel::Supplementary)))
            .count();
        let s = naive_prf(strict_tp, pred.len(), essential.len());
        let lp = naive_prf(lenient_tp, pred.len(), essential.len()).0;
        let l = (lp, s.1, if lp + s.1 == 0.0 { 0.0 } else { 2.0 * lp * s.1 / (lp + s.1) });
        strict_rows.push(s);
        lenient_rows.push(l);
        st += strict_tp;
        lt += lenient_tp;
        np += pred.len();
        ne += essential.len();
    }
    let mean = |rows: &[(f64, f64, f64)]| {
        let n = rows.len() as f64;
        (
            rows.iter().map(|r| r.0).sum::<f64>() / n,
            rows.iter().map(|r| r.1).sum::<f64>() / n,
            rows.iter().map(|r| r.2).sum::<f64>() / n,
        )
    };
    let strict_micro = naive_prf(st, np, ne);
    let lp = naive_prf(lt, np, ne).0;
    let lenient_micro = (lp, strict_micro.1, if lp + strict_micro.1 == 0.0 { 0.0 } else { 2.0 * lp * strict_micro.1 / (lp + strict_micro.1) });
    [strict_micro, lenient_micro, mean(&strict_rows), mean(&lenient_rows)]
}

fn metric_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..500 {
        let (preds, golds) = evidence_fixture(&mut rng);
        let m = evidence_metrics(&preds, &golds).map_err(|e| e.to_string())?;
        let want = naive_evidence(&preds, &golds);
        let got = [m.strict_micro, m.lenient_micro, m.strict_macro, m.lenient_macro];
        for (g, w) in got.iter().zip(want) {
            ensure(close(*g, w), || format!("evidence trial {trial}: {g:?} vs oracle {w:?}"))?;
        }

        let mut link_preds = BTreeMap::new();
        let mut link_golds = BTreeMap::new();
        let (mut tp, mut np, mut ng) = (0, 0, 0);
        for c in 0..rng.gen_range(1..=5) {
            let (answers, notes) = (rng.gen_range(1..=4u32), rng.gen_range(1..=8u32));
            let mut pred = Vec::new();
            let mut gold_pairs = Vec::new();
            for a in 1..=answers {
                for n in 1..=notes {
                    if rng.gen_bool(0.3) {
                        pred.push(AlignmentLink::new(a, n, rng.gen_range(0.0..=1.0)));
                    }
                    if rng.gen_bool(0.3) {
                        gold_pairs.push((a, n));
                    }
                }
            }
            tp += pred.iter().filter(|l| gold_pairs.contains(&(l.answer_id, l.note_id))).count();
            np += pred.len();
            ng += gold_pairs.len();
            let alignments = (1..=answers)
                .map(|a| GoldAlignment {
                    answer_id: a,
                    note_ids: gold_pairs.iter().filter(|p| p.0 == a).map(|p| p.1).collect(),
                })
                .collect();
            link_preds.insert(format!("case{c}"), pred);
            link_golds.insert(format!("case{c}"), GoldAnnotations { alignments, ..Default::default() });
        }
        let a = alignment_metrics(&link_preds, &link_golds).map_err(|e| e.to_string())?;
        let w = naive_prf(tp, np, ng);
        ensure(close(Prf { precision: a.micro_precision, recall: a.micro_recall, f1: a.micro_f1 }, w), || {
            format!("alignment trial {trial}: {a:?} vs oracle {w:?}")
        })?;
    }
    let gold = GoldAnnotations {
        relevance: (1..=10)
            .map(|id| {
                let label = match id {
                    2 | 5 => RelevanceLabel::Essential,
                    7 => RelevanceLabel::Supplementary,
                    _ => RelevanceLabel::NotRelevant,
                };
                (id, label)
            })
            .collect(),
        ..Default::default()
    };
    let m = evidence_metrics(
        &BTreeMap::from([("c".to_string(), BTreeSet::from([2, 7, 9]))]),
        &BTreeMap::from([("c".to_string(), gold)]),
    )
    .map_err(|e| e.to_string())?;
    ensure((m.strict_micro.f1 - 0.4).abs() < 1e-12, || format!("worked strict F1 {}", m.strict_micro.f1))?;
    ensure((m.lenient_micro.f1 - 4.0 / 7.0).abs() < 1e-12, || format!("worked lenient F1 {}", m.lenient_micro.f1))?;
    Ok("500 instances, worked example strict 0.4 / lenient 4/7".into())
}

// shared fixture ------------------------------------------------------

fn fixture_cases() -> Vec<CaseRecord> {
    let topics = [
        ("heparin", "chest pain", "Why was heparin started?"),
        ("a feeding tube", "trouble swallowing", "Why did she need a feeding tube?"),
        ("dialysis", "swelling", "Why was dialysis begun?"),
    ];
    topics
        .iter()
        .enumerate()
        .map(|(i, (treatment, symptom, clin))| CaseRecord {
            case_id: format!("s{}", i + 1),
            patient_narrative: format!("My relative came in with {symptom} and was given {treatment}."),
            patient_question: format!("Why was {treatment} needed?"),
            clinician_question: Some(clin.to_string()),
            note_sentences: (1..=5)
                .map(|id| NoteSentence { id, text: format!("Note {id} about {symptom} and {treatment}.") })
                .collect(),
            gold: Some(GoldAnnotations {
                relevance: BTreeMap::from([
                    (1, RelevanceLabel::Essential),
                    (2, RelevanceLabel::Essential),
                    (3, RelevanceLabel::Supplementary),
                    (4, RelevanceLabel::NotRelevant),
                    (5, RelevanceLabel::NotRelevant),
                ]),
                reference_answer: vec![
                    AnswerSentence { id: 1, text: format!("The patient received {treatment} for {symptom}.") },
                    AnswerSentence { id: 2, text: "The team monitored the response.".into() },
                ],
                alignments: vec![
                    GoldAlignment { answer_id: 1, note_ids: BTreeSet::from([1, 2]) },
                    GoldAlignment { answer_id: 2, note_ids: BTreeSet::from([3]) },
                ],
            }),
        })
        .collect()
}

fn fnv(parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for p in parts {
        for b in p.bytes().chain([0xff]) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

/// A well-formed reply for any pipeline stage, varying deterministically
/// with the stage, seed tag and case.
fn synthetic_reply(req: &ChatRequest) -> String {
    let scope = req.scope.as_deref().unwrap_or("");
    let mut rng = ChaCha8Rng::seed_from_u64(fnv(&[&req.stage, &req.seed_tag, scope]));
    match req.stage.as_str() {
        stage::ST1_GENERATE => format!(
            "reasoning: the note explains the treatment.\nclinician_question: Why was treatment {} given to the patient?",
            rng.gen_range(1..4)
        ),
        stage::ST2_CLASSIFY => (1..=5)
            .map(|id| {
                let label = if rng.gen_bool(0.5) { "essential" } else { "irrelevant" };
                format!("{id}: Note {id}. -> {label} -> {} -> reason {id}", rng.gen_range(0..=10))
            })
            .collect::<Vec<_>>()
            .join("\n"),
        stage::ST3_CANDIDATE | stage::ST3_CONSOLIDATE => format!(
            "answer: The patient was treated for reason {} [{}]. The team watched closely.",
            rng.gen_range(1..5),
            rng.gen_range(1..=5)
        ),
        stage::ST4_ALIGN | stage::ST4_REFLECT | stage::ST4_VERIFY => (1..=2)
            .map(|k| {
                let ids: Vec<u32> = (1..=5).filter(|_| rng.gen_bool(0.5)).collect();
                let confs: Vec<String> = ids.iter().map(|_| format!("{:.2}", rng.gen_range(0.80..=1.0))).collect();
                let ids: Vec<String> = ids.iter().map(u32::to_string).collect();
                format!("answer_sentence_{k}: [{}] (confidence=[{}])", ids.join(", "), confs.join(", "))
            })
            .collect::<Vec<_>>()
            .join("\n"),
        _ => "reasoning: placeholder".into(),
    }
}

fn synthetic_gateway() -> Gateway {
    Gateway::new(Arc::new(StubBackend::new(|req: &ChatRequest| Ok(synthetic_reply(req)))))
}

// 5 -------------------------------------------------------------------

fn call_budgets() -> Result<String, String> {
    let cfg = PipelineConfig::default();
    let programs = ProgramSet::default();
    type Budget<'a> = (Subtask, &'a [(&'a str, u64)], u64);
    let expected: [Budget; 3] = [
        (Subtask::Evidence, &[(stage::ST2_CLASSIFY, 5)], 5),
        (Subtask::Answer, &[(stage::ST3_CANDIDATE, 5), (stage::ST3_CONSOLIDATE, 1)], 6),
        (
            Subtask::Alignment,
            &[(stage::ST4_ALIGN, 5), (stage::ST4_REFLECT, 5), (stage::ST4_VERIFY, 5)],
            15,
        ),
    ];
    for case in fixture_cases() {
        for (subtask, per_stage, total) in expected {
            let gw = synthetic_gateway();
            Pipelines::new(&gw, &cfg)
                .run_case(subtask, &case, &programs, &EvidenceSource::Gold)
                .map_err(|e| format!("{subtask} on {}: {e}", case.case_id))?;
            ensure(gw.ledger().total() == total, || {
                format!("{subtask} on {}: {} calls, want {total}", case.case_id, gw.ledger().total())
            })?;
            for (s, n) in per_stage {
                ensure(gw.ledger().count(s) == *n, || format!("{s}: {} calls, want {n}", gw.ledger().count(s)))?;
            }
        }
    }
    Ok("ST2 5, ST3 6, ST4 15 calls per case over 3 cases".into())
}

// 6 -------------------------------------------------------------------

fn token() -> impl Strategy<Value = String> {
    prop_oneof![
        8 => "[a-z]{1,9}",
        2 => "[A-Za-z]{1,8}[.,;!?]",
        1 => "\\[[0-9]{1,2}\\]",
        1 => "\\[[0-9], ?[0-9]\\]",
        1 => "\\[ ?[0-9]-[0-9] ?\\]",
        1 => "[a-z]{2,6}\\[[0-9]\\][.,]?",
        1 => Just("[[1]2]".to_string()),
        1 => Just("?".to_string()),
    ]
}

fn generation() -> impl Strategy<Value = String> {
    (prop::collection::vec(token(), 0..=200), any::<bool>(), any::<bool>()).prop_map(|(words, labeled, question)| {
        let mut text = words.join(" ");
        if question {
            text.push('?');
        }
        if labeled {
            format!("reasoning: draft\nanswer: {text}\nclinician_question: {text}")
        } else {
            text
        }
    })
}

fn scripted(replies: Vec<String>) -> Gateway {
    Gateway::new(Arc::new(StubBackend::new(move |req: &ChatRequest| {
        let k = match req.stage.as_str() {
            stage::ST3_CONSOLIDATE => replies.len() - 1,
            _ => req.seed_tag.trim_start_matches(|c: char| !c.is_ascii_digit()).parse().unwrap_or(0) % (replies.len() - 1),
        };
        Ok(replies[k].clone())
    })))
}

fn format_guarantees() -> Result<String, String> {
    let cfg = PipelineConfig::default();
    let case = fixture_cases().remove(0);
    let st1 = defaults::st1_interpretation();
    let (st3, consolidate) = (defaults::st3_answer(), defaults::st3_consolidation());
    let essential = BTreeSet::from([1, 2]);
    let mut runner = TestRunner::new_with_rng(
        Config { cases: 10_000, failure_persistence: None, ..Config::default() },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    let produced = std::cell::Cell::new((0usize, 0usize));
    let result = runner.run(&prop::collection::vec(generation(), 3), |gens| {
        let gw = scripted(gens);
        let p = Pipelines::new(&gw, &cfg);
        let (mut q, mut a) = produced.get();
        match p.run_subtask1(&case, &st1) {
            Ok(t) => {
                let v = validate_output(&t.value, Subtask::Interpretation);
                prop_assert!(v.is_empty(), "ST1 output {:?} violates {:?}", t.value, v);
                q += 1;
            }
            Err(PipelineError::Case { .. }) => {}
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
        match p.run_subtask3(&case, &st3, &consolidate, &essential) {
            Ok(t) => {
                let v = validate_output(&t.value, Subtask::Answer);
                prop_assert!(v.is_empty(), "ST3 output {:?} violates {:?}", t.value, v);
                a += 1;
            }
            Err(PipelineError::Case { .. }) => {}
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
        produced.set((q, a));
        Ok(())
    });
    result.map_err(|e| e.to_string())?;
    let (q, a) = produced.get();
    Ok(format!("10000 trials, {q} questions and {a} answers checked"))
}

// 7 -------------------------------------------------------------------

fn verdicts() -> impl Strategy<Value = (Vec<SentenceVerdict>, BTreeMap<u32, String>)> {
    prop::collection::btree_map(1u32..60, ("[A-Z][a-z ]{0,20}\\.", any::<bool>(), 0u8..=10, "[a-z][a-z ,.]{0,30}[a-z.]"), 1..12)
        .prop_flat_map(|m| {
            let ids: Vec<u32> = m.keys().copied().collect();
            (Just(m), Just(ids).prop_shuffle())
        })
        .prop_map(|(m, order)| {
            let verdicts = order
                .iter()
                .map(|id| {
                    let (_, essential, score, reasoning) = &m[id];
                    SentenceVerdict {
                        note_id: *id,
                        label: if *essential { VerdictLabel::Essential } else { VerdictLabel::Irrelevant },
                        score: *score,
                        reasoning: reasoning.clone(),
                    }
                })
                .collect();
            (verdicts, m.into_iter().map(|(id, (text, ..))| (id, text)).collect())
        })
}

fn links() -> impl Strategy<Value = (Vec<AlignmentLink>, u32)> {
    (1u32..6).prop_flat_map(|answers| {
        (prop::collection::btree_map((1..=answers, 1u32..30), 0u32..=100, 0..15), Just(answers)).prop_map(
            |(m, answers)| {
                let links = m
                    .into_iter()
                    .map(|((a, n), c)| AlignmentLink::new(a, n, f64::from(c) / 100.0))
                    .collect();
                (links, answers)
            },
        )
    })
}

fn interleave(valid: &str, junk: &[String], rng_seed: u64) -> String {
    let mut lines: Vec<String> = valid.lines().map(str::to_string).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    for j in junk {
        let at = rng.gen_range(0..=lines.len());
        lines.insert(at, j.clone());
    }
    lines.join("\n")
}

fn parser_round_trips() -> Result<String, String> {
    let config = || Config { cases: 1000, failure_persistence: None, ..Config::default() };
    let rng = || proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha);

    let mut runner = TestRunner::new_with_rng(config(), rng());
    runner
        .run(&(verdicts(), 0usize..4, any::<u64>()), |((verdicts, texts), junk, seed)| {
            let text_of = |id: u32| texts.get(&id).map(String::as_str);
            let formatted = format_st2(&verdicts, text_of);
            let expected: BTreeSet<u32> = texts.keys().copied().collect();
            let parsed = parse_st2(&formatted, &expected).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(&format_st2(&parsed.verdicts, text_of), &formatted);
            let bad: Vec<String> = (0..junk).map(|i| format!("{}: Junk. -> maybe -> 3 -> r", 100 + i)).collect();
            let noisy = parse_st2(&interleave(&formatted, &bad, seed), &expected)
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(noisy.malformed, junk);
            prop_assert_eq!(&noisy.verdicts, &parsed.verdicts);
            if junk > 0 {
                prop_assert!(parse_st2(&bad.join("\n"), &expected).is_err());
            }
            Ok(())
        })
        .map_err(|e| format!("verdict lines: {e}"))?;

    let mut runner = TestRunner::new_with_rng(config(), rng());
    runner
        .run(&(links(), 0usize..4, any::<u64>()), |((links, answers), junk, seed)| {
            let notes: BTreeSet<u32> = (1..30).collect();
            let formatted = format_st4(&links, answers);
            let parsed = parse_st4(&formatted, answers, &notes).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(&format_st4(&parsed.links, answers), &formatted);
            let bad: Vec<String> =
                (0..junk).map(|i| format!("answer_sentence_{}: [3] (confidence=[0.2, 0.9])", i + 1)).collect();
            let noisy = parse_st4(&interleave(&formatted, &bad, seed), answers, &notes)
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(noisy.malformed, junk);
            prop_assert_eq!(format_st4(&noisy.links, answers), formatted);
            if junk > 0 {
                prop_assert!(parse_st4(&bad.join("\n"), answers, &notes).is_err());
            }
            Ok(())
        })
        .map_err(|e| format!("link lines: {e}"))?;
    Ok("1000 verdict sets and 1000 link sets".into())
}

// 8 -------------------------------------------------------------------

fn optimizer_sanity() -> Result<String, String> {
    let base = defaults::st1_interpretation();
    let better = "Rewrite the patient's question as one short clinical question.".to_string();
    let budget = OptimizationBudget {
        num_instruction_candidates: 2,
        num_demo_subsets: 1,
        max_trials: 2,
        ..OptimizationBudget::default()
    };
    let instructions = [base.instruction.clone(), better.clone()];
    let outcome = search(&base, &instructions, &[], &budget, Execution::Sequential, |p| {
        Ok(if p.instruction == better { 0.7 } else { 0.4 })
    });
    ensure(outcome.trials.len() == 2, || format!("{} trials on a 2-candidate grid", outcome.trials.len()))?;
    ensure(outcome.best.instruction == better && outcome.best_score == Some(0.7), || {
        format!("picked score {:?}", outcome.best_score)
    })?;

    let demo = |i: u32| Demo {
        inputs: BTreeMap::from([("patient_question".to_string(), format!("question {i}"))]),
        outputs: BTreeMap::from([("clinician_question".to_string(), format!("Why {i}?"))]),
    };
    let seeded = base.with_demos(vec![demo(1), demo(2)]);
    let budget = OptimizationBudget {
        num_instruction_candidates: 1,
        num_demo_subsets: 2,
        max_trials: 2,
        ..OptimizationBudget::default()
    };
    let pool = [demo(3), demo(4), demo(5)];
    let outcome = search(&seeded, &[], &pool, &budget, Execution::Sequential, |_| Ok(0.5));
    let counts: Vec<usize> = outcome.trials.iter().map(|t| t.demo_count).collect();
    ensure(counts.len() == 2 && counts[0] == 2 && counts[1] < 2, || format!("demo counts {counts:?}"))?;
    ensure(outcome.best.demos.len() == counts[1], || format!("tie kept {} demos", outcome.best.demos.len()))?;

    // key terms: reference content words {heparin, started}
    let reference = "Why was heparin started?";
    let filler = " alpha".repeat(20);
    let fixtures: [(String, Option<f64>, f64); 5] = [
        (format!("heparin started{filler}"), Some(0.5), 0.60 * 0.5 + 0.25 * 1.0),
        (reference.to_string(), Some(1.0), 0.60 + 0.25 + 0.15 * (2.0 / 3.0)),
        ("Why was heparin started for the patient?".to_string(), Some(1.0), 1.0),
        ("Why was he given heparin?".to_string(), Some(0.25), 0.60 * 0.25 + 0.25 * 0.5 + 0.15),
        (format!("zzz{filler}"), Some(0.0), 0.0),
    ];
    for (pred, judged, want) in &fixtures {
        let judge = |_: Rubric, _: &str, _: &groundqa::programs::Inputs| -> Result<f64, PipelineError> {
            judged.ok_or_else(|| PipelineError::Config("judge down".into()))
        };
        let got = objective_st1(pred, reference, "c", &judge);
        ensure((got.value - want).abs() < 1e-12 && !got.fallback, || {
            format!("objective_st1({pred:?}) = {}, oracle {want}", got.value)
        })?;
    }
    Ok("argmax picked 0.7 over 0.4, tie kept fewer demos, 5 weighted-sum fixtures".into())
}

// 9 -------------------------------------------------------------------

fn run_everything(gw: &Gateway, cases: &[CaseRecord]) -> Result<String, String> {
    let cfg = PipelineConfig::default();
    let programs = ProgramSet::default();
    let p = Pipelines::new(gw, &cfg);
    let mut out = String::new();
    for subtask in [Subtask::Interpretation, Subtask::Evidence, Subtask::Answer, Subtask::Alignment] {
        let bundles = p
            .run_all(subtask, cases, &programs, &EvidenceSource::Predict, 3)
            .into_iter()
            .map(|r| r.map(|run| run.bundle))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| format!("{subtask}: {e}"))?;
        out.push_str(&render_submission(&bundles, subtask).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

fn replay_determinism() -> Result<String, String> {
    let cases = fixture_cases();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cache = || ResponseCache::open(dir.path()).map_err(|e| e.to_string());
    let primer = synthetic_gateway().with_cache(cache()?);
    let primed = run_everything(&primer, &cases)?;
    let upstream = primer.upstream_calls();
    ensure(upstream > 0, || "priming run made no calls".into())?;
    let mut replays = Vec::new();
    for _ in 0..2 {
        let gw = Gateway::cache_only(cache()?);
        replays.push(run_everything(&gw, &cases)?);
        ensure(gw.upstream_calls() == 0, || format!("replay made {} upstream calls", gw.upstream_calls()))?;
        ensure(gw.ledger().total() == primer.ledger().total(), || "replay call count differs".into())?;
    }
    ensure(replays[0] == replays[1], || "replays differ".into())?;
    ensure(replays[0] == primed, || "replay differs from the priming run".into())?;
    Ok(format!("{upstream} primed calls, 2 replays byte-identical ({} bytes), 0 upstream", primed.len()))
}
