//! Pipeline configuration file.
//!
//! Seeds are not read from the sections: every stage seed is derived from
//! the single master `seed`, so a seed field inside a nested section is
//! overwritten before use.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use safemon_core::perturb::{EpsilonGrid, PerturbationKind};
use safemon_core::runtime::Debounce;
use safemon_core::seed::{derive_seed, fnv1a64};
use safemon_core::{SplitSpec, SynthSpec, ThresholdSpec, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::stage::Stage;

/// Base grid shared by both factors before scaling.
pub const BASE_GRID: [f64; 5] = [0.0, 0.2, 0.5, 0.8, 1.0];
pub const HAZE_SCALE: f64 = 0.8;
pub const BLUR_SCALE: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum CorpusSource {
    Synthetic(SynthSpec),
    Manifest { path: PathBuf, classes: usize },
    Packed { path: PathBuf, classes: Option<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorConfig {
    #[serde(flatten)]
    pub kind: PerturbationKind,
    pub epsilons: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ComponentConfig {
    /// Train the built-in CNN on a separate corpus.
    Builtin { train_corpus: CorpusSource, train: TrainConfig },
    /// Attach a foreign-runtime classifier speaking the line protocol.
    External { command: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuntimeConfig {
    /// Drift scenario file; the built-in step scenario when absent.
    pub scenario: Option<PathBuf>,
    pub debounce: Debounce,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self { scenario: None, debounce: Debounce::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub corpus: CorpusSource,
    pub factors: Vec<FactorConfig>,
    pub component: ComponentConfig,
    pub thresholds: ThresholdSpec,
    pub split: SplitSpec,
    pub monitor: TrainConfig,
    pub cv_folds: usize,
    pub runtime: RuntimeConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("run"),
            corpus: CorpusSource::Synthetic(SynthSpec::default()),
            factors: vec![
                FactorConfig { kind: PerturbationKind::haze(), epsilons: BASE_GRID.iter().map(|e| HAZE_SCALE * e).collect() },
                FactorConfig { kind: PerturbationKind::blur(), epsilons: BASE_GRID.iter().map(|e| BLUR_SCALE * e).collect() },
            ],
            component: ComponentConfig::Builtin {
                train_corpus: CorpusSource::Synthetic(SynthSpec::scaled(2, 0)),
                train: TrainConfig { epochs: 8, ..TrainConfig::default() },
            },
            thresholds: ThresholdSpec::default(),
            split: SplitSpec::default(),
            monitor: TrainConfig { epochs: 3, ..TrainConfig::default() },
            cv_folds: 5,
            runtime: RuntimeConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let config: Self = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> anyhow::Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.factors.is_empty() {
            bail!("config needs at least one factor");
        }
        for f in &self.factors {
            f.kind.validate()?;
            EpsilonGrid::new(f.kind.name(), f.epsilons.clone())?;
        }
        self.thresholds.validate()?;
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            bail!("split.train_fraction {} outside (0, 1)", self.split.train_fraction);
        }
        self.monitor.validate()?;
        if self.cv_folds < 2 {
            bail!("cv_folds must be at least 2, got {}", self.cv_folds);
        }
        if let ComponentConfig::Builtin { train, .. } = &self.component {
            train.validate()?;
        }
        if let ComponentConfig::External { command } = &self.component {
            if command.is_empty() {
                bail!("external component needs a command");
            }
        }
        if let CorpusSource::Synthetic(spec) = &self.corpus {
            spec.validate()?;
        }
        let d = self.runtime.debounce;
        if d.window == 0 || d.quorum == 0 || d.quorum > d.window {
            bail!("runtime.debounce needs 1 <= quorum <= window");
        }
        Ok(())
    }

    pub fn grids(&self) -> anyhow::Result<Vec<EpsilonGrid>> {
        self.factors
            .iter()
            .map(|f| Ok(EpsilonGrid::new(f.kind.name(), f.epsilons.clone())?))
            .collect()
    }

    pub fn factor_kinds(&self) -> Vec<PerturbationKind> {
        self.factors.iter().map(|f| f.kind.clone()).collect()
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage)
    }

    /// Working corpus spec with its derived seed.
    pub fn synth_spec(&self, source: &CorpusSource, stage: &str) -> Option<SynthSpec> {
        match source {
            CorpusSource::Synthetic(spec) => Some(SynthSpec { seed: self.stage_seed(stage), ..spec.clone() }),
            _ => None,
        }
    }

    pub fn component_train(&self) -> Option<TrainConfig> {
        match &self.component {
            ComponentConfig::Builtin { train, .. } => Some(TrainConfig { seed: self.stage_seed("train-component"), ..train.clone() }),
            ComponentConfig::External { .. } => None,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec { seed: self.stage_seed("prepare"), ..self.split }
    }

    pub fn monitor_train(&self) -> TrainConfig {
        TrainConfig { seed: self.stage_seed("train-monitor"), ..self.monitor.clone() }
    }

    /// Config sections a stage consumes, including everything upstream of
    /// it; the output directory is never part of it.
    pub fn stage_inputs(&self, stage: Stage) -> Value {
        let mut v = json!({ "seed": self.seed, "corpus": self.corpus });
        let obj = v.as_object_mut().expect("object literal");
        let mut add = |k: &str, val: Value| {
            obj.insert(k.to_string(), val);
        };
        use Stage::*;
        if matches!(stage, Component | Assess | Label | Prepare | TrainMonitor | EvalMonitor | Run) {
            add("component", json!(self.component));
        }
        if matches!(stage, Degrade | Assess | Label | Prepare | TrainMonitor | EvalMonitor | Run) {
            add("factors", json!(self.factors));
        }
        if matches!(stage, Label | Prepare | TrainMonitor | EvalMonitor | Run) {
            add("thresholds", json!(self.thresholds));
        }
        if matches!(stage, Prepare | TrainMonitor | EvalMonitor | Run) {
            add("split", json!(self.split));
        }
        if matches!(stage, TrainMonitor | EvalMonitor | Run) {
            add("monitor", json!(self.monitor));
        }
        if stage == EvalMonitor {
            add("cv_folds", json!(self.cv_folds));
        }
        if stage == Run {
            add("runtime", json!(self.runtime));
        }
        v
    }

    /// 64-bit FNV-1a of the canonical JSON of a stage's inputs.
    pub fn stage_digest(&self, stage: Stage) -> String {
        // serde_json maps are key-sorted, so the encoding is canonical
        let text = self.stage_inputs(stage).to_string();
        format!("{:016x}", fnv1a64(text.as_bytes()))
    }

    /// Digest of the whole configuration minus the output directory.
    pub fn digest(&self) -> String {
        self.stage_digest(Stage::Run)
    }
}
