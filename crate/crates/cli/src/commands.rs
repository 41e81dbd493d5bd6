use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use groundqa::dataset::{load_cases, load_submission, write_atomic, write_submission};
use groundqa::evaluation::{build_report, validate_with_limit};
use groundqa::optimizer::{optimize_subtask, write_trials_csv, LlmJudge, OptimizationBudget};
use groundqa::pipelines::{EvidenceSource, PipelineConfig, Pipelines};
use groundqa::{CaseRecord, Gateway, ProgramSet, Subtask};
use serde::Serialize;

use crate::settings::Settings;

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok = 0,
    Failed = 1,
    Partial = 2,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub subtask: Subtask,
    pub config: PipelineConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<OptimizationBudget>,
    pub program_hashes: BTreeMap<String, String>,
    pub dataset: PathBuf,
    pub timestamp: String,
    pub backend: String,
    pub model: String,
    pub ledger: BTreeMap<String, u64>,
    pub total_calls: u64,
    pub upstream_calls: u64,
    pub cases_ok: usize,
    pub cases_failed: Vec<String>,
}

impl RunManifest {
    fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())?;
        Ok(())
    }
}

pub struct Invocation<'a> {
    pub settings: &'a Settings,
    pub command_line: String,
}

impl Invocation<'_> {
    #[allow(clippy::too_many_arguments)]
    fn manifest(
        &self,
        subtask: Subtask,
        programs: &ProgramSet,
        dataset: &Path,
        gateway: &Gateway,
        budget: Option<OptimizationBudget>,
        cases_ok: usize,
        cases_failed: Vec<String>,
    ) -> RunManifest {
        let program_hashes = programs
            .for_subtask(subtask)
            .into_iter()
            .map(|p| (p.name.clone(), p.content_hash()))
            .collect();
        RunManifest {
            command: self.command_line.clone(),
            subtask,
            config: self.settings.pipeline.clone(),
            budget,
            program_hashes,
            dataset: dataset.to_path_buf(),
            timestamp: chrono::Utc::now().to_rfc3339(),
            backend: format!("{:?}", self.settings.backend).to_lowercase(),
            model: gateway.model_id().to_string(),
            ledger: gateway.ledger().snapshot(),
            total_calls: gateway.ledger().total(),
            upstream_calls: gateway.upstream_calls(),
            cases_ok,
            cases_failed,
        }
    }
}

fn load_programs(dir: Option<&Path>) -> Result<ProgramSet> {
    match dir {
        Some(d) => ProgramSet::load_dir(d).with_context(|| format!("loading programs from {}", d.display())),
        None => Ok(ProgramSet::default()),
    }
}

fn load_dataset(path: &Path) -> Result<Vec<CaseRecord>> {
    load_cases(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

pub struct RunArgs<'a> {
    pub subtask: Subtask,
    pub dataset: &'a Path,
    pub programs: Option<&'a Path>,
    pub out: &'a Path,
    pub runs_dir: Option<&'a Path>,
    pub evidence: &'a str,
}

fn evidence_source(spec: &str) -> Result<EvidenceSource> {
    Ok(match spec {
        "gold" => EvidenceSource::Gold,
        "predict" => EvidenceSource::Predict,
        path => {
            let bundles = load_submission(path, Subtask::Evidence)
                .with_context(|| format!("loading evidence submission {path}"))?;
            EvidenceSource::Given(
                bundles
                    .into_iter()
                    .filter_map(|b| b.st2_essential_ids.map(|ids| (b.case_id, ids)))
                    .collect(),
            )
        }
    })
}

pub fn run(inv: &Invocation<'_>, args: RunArgs<'_>) -> Result<Status> {
    let settings = inv.settings;
    let cases = load_dataset(args.dataset)?;
    let programs = load_programs(args.programs)?;
    let evidence = evidence_source(args.evidence)?;
    let gateway = settings.gateway()?;
    let pipelines = Pipelines::new(&gateway, &settings.pipeline).with_fanout(settings.jobs);
    let runs_dir = args.runs_dir.map(Path::to_path_buf).unwrap_or_else(|| {
        args.out.parent().unwrap_or(Path::new(".")).join("runs")
    });
    let results = pipelines.run_all(args.subtask, &cases, &programs, &evidence, settings.jobs);
    let mut bundles = Vec::new();
    let mut failed = Vec::new();
    for (case, result) in cases.iter().zip(results) {
        match result {
            Ok(run) => {
                run.provenance.write(&runs_dir)?;
                bundles.push(run.bundle);
            }
            Err(e) => {
                eprintln!("case {}: {e}", case.case_id);
                failed.push(case.case_id.clone());
            }
        }
    }
    write_submission(&bundles, args.subtask, args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    let ok = bundles.len();
    inv.manifest(args.subtask, &programs, args.dataset, &gateway, None, ok, failed.clone())
        .write(&manifest_path(args.out))?;
    eprintln!(
        "{}: {ok} of {} cases written to {} ({} model calls, {} upstream)",
        args.subtask,
        cases.len(),
        args.out.display(),
        gateway.ledger().total(),
        gateway.upstream_calls()
    );
    Ok(match (failed.is_empty(), ok) {
        (true, _) => Status::Ok,
        (false, 0) => Status::Failed,
        (false, _) => Status::Partial,
    })
}

pub struct OptimizeArgs<'a> {
    pub subtask: Subtask,
    pub dev: &'a Path,
    pub programs: Option<&'a Path>,
    pub out_dir: &'a Path,
}

pub fn optimize(inv: &Invocation<'_>, args: OptimizeArgs<'_>) -> Result<Status> {
    let settings = inv.settings;
    let dev = load_dataset(args.dev)?;
    if let Some(c) = dev.iter().find(|c| c.gold.is_none()) {
        bail!("development case {} has no gold annotations", c.case_id);
    }
    let programs = load_programs(args.programs)?;
    let gateway = settings.gateway()?;
    let pipelines = Pipelines::new(&gateway, &settings.pipeline).with_fanout(settings.jobs);
    let judge = LlmJudge {
        gateway: &gateway,
        programs: &programs,
        temperature: settings.budget.judge_temperature,
        max_tokens: settings.pipeline.max_tokens_other,
    };
    let outcome = optimize_subtask(args.subtask, &pipelines, &programs, &dev, &settings.budget, &judge)?;
    let program_path = args.out_dir.join(format!("{}.optimized", args.subtask.label()));
    outcome.best.save(&program_path)?;
    write_trials_csv(&args.out_dir.join("trials.csv"), &outcome.trials)?;
    let mut tuned = programs.clone();
    *tuned.optimized_slot(args.subtask) = outcome.best.clone();
    let failed: Vec<String> = outcome
        .trials
        .iter()
        .filter_map(|t| t.error.as_ref().map(|e| format!("trial {}: {e}", t.trial)))
        .collect();
    inv.manifest(
        args.subtask,
        &tuned,
        args.dev,
        &gateway,
        Some(settings.budget.clone()),
        outcome.trials.len() - failed.len(),
        failed.clone(),
    )
    .write(&args.out_dir.join(format!("{}.manifest.json", args.subtask.label())))?;
    for f in &failed {
        eprintln!("{f}");
    }
    match (outcome.best_score, outcome.best_trial) {
        (Some(score), Some(trial)) => {
            println!("best score: {score:.6} (trial {trial}, {} demos)", outcome.best.demos.len());
            println!("wrote {}", program_path.display());
            Ok(if failed.is_empty() { Status::Ok } else { Status::Partial })
        }
        _ => {
            eprintln!("every trial failed; base program kept");
            Ok(Status::Failed)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    Table,
    Json,
}

pub fn evaluate(
    subtask: Subtask,
    submission: &Path,
    gold: &Path,
    format: ReportFormat,
    json_out: Option<&Path>,
) -> Result<Status> {
    let cases = load_dataset(gold)?;
    let bundles = load_submission(submission, subtask)
        .with_context(|| format!("loading submission {}", submission.display()))?;
    let known: BTreeSet<&str> = cases.iter().map(|c| c.case_id.as_str()).collect();
    let unknown: Vec<&str> = bundles
        .iter()
        .map(|b| b.case_id.as_str())
        .filter(|id| !known.contains(id))
        .collect();
    if !unknown.is_empty() {
        bail!("submission names cases absent from the gold file: {}", unknown.join(", "));
    }
    let without_gold: Vec<&str> = bundles
        .iter()
        .filter(|b| cases.iter().any(|c| c.case_id == b.case_id && c.gold.is_none()))
        .map(|b| b.case_id.as_str())
        .collect();
    if !without_gold.is_empty() {
        bail!("no gold annotations for: {}", without_gold.join(", "));
    }
    let mut report = build_report(subtask, &bundles, &cases)?;
    let scored: BTreeSet<&str> = bundles.iter().map(|b| b.case_id.as_str()).collect();
    let unscored = cases.iter().filter(|c| !scored.contains(c.case_id.as_str())).count();
    if unscored > 0 {
        report.notes.push(format!("{unscored} gold cases have no prediction and are not scored"));
    }
    match format {
        ReportFormat::Table => print!("{}", report.to_table()),
        ReportFormat::Json => print!("{}", report.to_json()),
    }
    if let Some(path) = json_out {
        write_atomic(path, report.to_json().as_bytes())?;
    }
    Ok(Status::Ok)
}

pub fn validate(
    settings: &Settings,
    dataset: Option<&Path>,
    submission: Option<(&Path, Subtask)>,
) -> Result<Status> {
    if dataset.is_none() && submission.is_none() {
        bail!("nothing to validate: pass --dataset and/or --submission with --subtask");
    }
    if let Some(path) = dataset {
        let cases = load_dataset(path)?;
        println!("{}: {} cases, schema valid", path.display(), cases.len());
    }
    let mut violations = 0;
    if let Some((path, subtask)) = submission {
        let bundles = load_submission(path, subtask)
            .with_context(|| format!("loading submission {}", path.display()))?;
        let limit = match subtask {
            Subtask::Interpretation => settings.pipeline.word_limit_st1,
            _ => settings.pipeline.word_limit_st3,
        };
        for b in &bundles {
            let text = match subtask {
                Subtask::Interpretation => b.st1_question.as_deref(),
                Subtask::Answer => b.st3_answer.as_deref(),
                _ => None,
            };
            if let Some(text) = text {
                for v in validate_with_limit(text, subtask, limit) {
                    println!("{}: {v}", b.case_id);
                    violations += 1;
                }
            }
        }
        println!("{}: {} entries, {violations} format violations", path.display(), bundles.len());
    }
    Ok(if violations == 0 { Status::Ok } else { Status::Partial })
}
