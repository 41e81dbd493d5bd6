//! Layered configuration: flags > environment > config file > defaults.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::ValueEnum;
use groundqa::gateway::{
    RemoteBackend, RemoteConfig, ResponseCache, ScriptedBackend, DEFAULT_MODEL,
};
use groundqa::optimizer::OptimizationBudget;
use groundqa::pipelines::PipelineConfig;
use groundqa::Gateway;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendArg {
    Remote,
    Scripted,
    CacheOnly,
}

/// `[gateway]` table of the config file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GatewayFile {
    backend: Option<BackendArg>,
    script: Option<PathBuf>,
    cache_dir: Option<PathBuf>,
    model: Option<String>,
    jobs: Option<usize>,
}

/// Values already resolved from flags or environment by clap.
#[derive(Debug, Default, Clone)]
pub struct GatewayArgs {
    pub backend: Option<BackendArg>,
    pub script: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub model: Option<String>,
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub backend: BackendArg,
    pub script: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub model: String,
    pub jobs: usize,
    pub pipeline: PipelineConfig,
    pub budget: OptimizationBudget,
}

pub const ENV_PREFIX: &str = "GROUNDQA_";

impl Settings {
    /// Resolves every layer. `sets` are `KEY=VALUE` overrides; keys under
    /// `optimizer.` address the optimization budget.
    pub fn resolve(
        config: Option<&Path>,
        args: GatewayArgs,
        sets: &[String],
        env: &dyn Fn(&str) -> Option<String>,
    ) -> Result<Self> {
        let mut file = match config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str::<toml::Table>(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => toml::Table::new(),
        };
        let gateway: GatewayFile = match file.remove("gateway") {
            Some(v) => v.try_into().context("invalid [gateway] table")?,
            None => GatewayFile::default(),
        };
        let optimizer = match file.remove("optimizer") {
            Some(toml::Value::Table(t)) => t,
            Some(_) => bail!("[optimizer] must be a table"),
            None => toml::Table::new(),
        };
        let mut pipeline_sets = Vec::new();
        let mut budget_sets = Vec::new();
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{s}`"))?;
            match k.trim().strip_prefix("optimizer.") {
                Some(k) => budget_sets.push((k.to_string(), v.trim().to_string())),
                None => pipeline_sets.push((k.trim().to_string(), v.trim().to_string())),
            }
        }
        let pipeline: PipelineConfig = layer(file, ENV_PREFIX, &pipeline_sets, env)?;
        let budget: OptimizationBudget =
            layer(optimizer, &format!("{ENV_PREFIX}OPTIMIZER_"), &budget_sets, env)?;
        pipeline.validate()?;
        budget.validate()?;
        let jobs = args
            .jobs
            .or(gateway.jobs)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        Ok(Self {
            backend: args.backend.or(gateway.backend).unwrap_or(BackendArg::Remote),
            script: args.script.or(gateway.script),
            cache_dir: args.cache_dir.or(gateway.cache_dir),
            model: args
                .model
                .or(gateway.model)
                .unwrap_or_else(|| DEFAULT_MODEL.to_string()),
            jobs,
            pipeline,
            budget,
        })
    }

    pub fn gateway(&self) -> Result<Gateway> {
        let cache = self
            .cache_dir
            .as_ref()
            .map(ResponseCache::open)
            .transpose()
            .context("opening response cache")?;
        let gateway = match self.backend {
            BackendArg::CacheOnly => {
                let cache = cache.ok_or_else(|| anyhow!("--backend cache-only needs --cache-dir"))?;
                return Ok(Gateway::cache_only(cache).with_model(self.model.clone()));
            }
            BackendArg::Scripted => {
                let script = self
                    .script
                    .as_ref()
                    .ok_or_else(|| anyhow!("--backend scripted needs --script"))?;
                let backend = ScriptedBackend::from_path(script)
                    .with_context(|| format!("loading scripts from {}", script.display()))?;
                Gateway::new(Arc::new(backend))
            }
            BackendArg::Remote => {
                let mut cfg = RemoteConfig::from_env().context("configuring the remote backend")?;
                cfg.model = self.model.clone();
                Gateway::new(Arc::new(RemoteBackend::new(cfg)?))
            }
        };
        let gateway = gateway.with_model(self.model.clone());
        Ok(match cache {
            Some(c) => gateway.with_cache(c),
            None => gateway,
        })
    }
}

/// Defaults of `T`, overlaid with `file`, then `<prefix><KEY>` variables,
/// then `sets`. Unknown keys are rejected at every layer.
fn layer<T>(
    file: toml::Table,
    prefix: &str,
    sets: &[(String, String)],
    env: &dyn Fn(&str) -> Option<String>,
) -> Result<T>
where
    T: Serialize + DeserializeOwned + Default,
{
    let mut table = toml::Table::try_from(T::default()).context("serializing defaults")?;
    let keys: BTreeSet<String> = table.keys().cloned().collect();
    let known = |k: &str| -> Result<()> {
        if keys.contains(k) {
            Ok(())
        } else {
            bail!("unknown setting `{k}` (known: {})", keys.iter().cloned().collect::<Vec<_>>().join(", "))
        }
    };
    for (k, v) in file {
        known(&k)?;
        table.insert(k, v);
    }
    for k in &keys {
        let var = format!("{prefix}{}", k.to_uppercase());
        if let Some(raw) = env(&var) {
            table.insert(k.clone(), literal(&raw));
        }
    }
    for (k, v) in sets {
        known(k)?;
        table.insert(k.clone(), literal(v));
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| anyhow!("invalid setting: {}", e.message()))
}

/// A TOML literal when `raw` parses as one, else a string.
fn literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
