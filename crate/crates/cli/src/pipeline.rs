//! Stage implementations over a run directory.
//!
//! Layout (relative to the run directory):
//!
//! ```text
//! corpus/corpus.mfd, corpus/corpus.json      working corpus
//! component/model.mfm, component/report.json component and its clean accuracy
//! degrade/plan.json, datasets/<id>.{mfd,json} degraded datasets
//! assess/records.{csv,json}                  accuracy per dataset
//! label/labeled.csv, label/labels.json, label/heatmap.{csv,svg}, label/census.json
//! monitor/{train,test}.mfd, monitor/*_provenance.csv, monitor/split.json
//! monitor/model.mfm, monitor/train_report.json
//! eval/{holdout,cv}/..., eval/summary.json    monitor evaluation
//! runtime/scenario.json, runtime/trace.{jsonl,csv}, runtime/transitions.json
//! stamps/<stage>.json, stamps/<stage>.timing.json
//! summary.json, checksums.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use safemon_core::assess::{assess_all, census, heatmap_grid, records_csv, PerformanceRecord};
use safemon_core::component::{evaluate_accuracy, BuiltinProvider, ExternalProvider, InferenceProvider};
use safemon_core::degrade::{self, DegradationPlan, DegradedDataset};
use safemon_core::imageio::{self, LabeledDataset};
use safemon_core::monitor::{self, EvalReport, MonitorDataset};
use safemon_core::nn::{self, Architecture};
use safemon_core::runtime::{run_stream, DriftScenario, Runtime, SafetyModeConfig, Segment};
use safemon_core::synth::generate_corpus;
use safemon_core::SafetyLabel;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ComponentConfig, CorpusSource, PipelineConfig};
use crate::stage::{RunDir, RunLock, Stage};

const CORPUS: &str = "corpus/corpus.mfd";
const CORPUS_INFO: &str = "corpus/corpus.json";
const COMPONENT_MODEL: &str = "component/model.mfm";
const PLAN: &str = "degrade/plan.json";
const DATASETS: &str = "datasets";
const RECORDS_JSON: &str = "assess/records.json";
const LABELS: &str = "label/labels.json";
const MONITOR_TEST: &str = "monitor/test.mfd";
const MONITOR_MODEL: &str = "monitor/model.mfm";

/// Frames in the built-in drift scenario; the haze step lands halfway.
pub const DEFAULT_SCENARIO_FRAMES: usize = 120;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum CorpusFormat {
    #[default]
    Packed,
    /// Packed plus a manifest and PPM directory.
    Ppm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusInfo {
    pub count: usize,
    pub classes: usize,
    pub class_names: Option<Vec<String>>,
    pub class_counts: Vec<usize>,
    pub shape: String,
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub dataset_id: String,
    pub accuracy: f64,
    pub level: usize,
    pub level_name: String,
}

/// An opened run directory holding its lock.
pub struct Pipeline {
    pub config: PipelineConfig,
    run: RunDir,
    _lock: RunLock,
}

impl Pipeline {
    pub fn open(config: PipelineConfig) -> anyhow::Result<Self> {
        config.validate()?;
        let lock = RunLock::acquire(&config.out_dir)?;
        let run = RunDir::new(&config.out_dir)?;
        Ok(Self { config, run, _lock: lock })
    }

    pub fn root(&self) -> &Path {
        self.run.root()
    }

    pub fn run_dir(&self) -> &RunDir {
        &self.run
    }

    /// Runs one stage after checking its prerequisites.
    pub fn stage(&mut self, stage: Stage) -> anyhow::Result<()> {
        self.stage_with(stage, CorpusFormat::default())
    }

    pub fn stage_with(&mut self, stage: Stage, format: CorpusFormat) -> anyhow::Result<()> {
        self.run.require(stage, &self.config)?;
        self.run.clear_stamp(stage)?;
        match stage {
            Stage::Corpus => self.corpus(format)?,
            Stage::Component => self.component()?,
            Stage::Degrade => self.degrade()?,
            Stage::Assess => self.assess()?,
            Stage::Label => self.label()?,
            Stage::Prepare => self.prepare()?,
            Stage::TrainMonitor => self.train_monitor()?,
            Stage::EvalMonitor => self.eval_monitor()?,
            Stage::Run => self.runtime()?,
        }
        self.run.finish(stage, &self.config)?;
        Ok(())
    }

    /// Runs `from..=to`, skipping leading stages whose stamps are current
    /// unless `force` is set, then writes the summary and checksum files.
    pub fn pipeline(&mut self, from: Stage, to: Stage, force: bool) -> anyhow::Result<serde_json::Value> {
        if from > to {
            bail!("--stage-from {from} comes after --stage-to {to}");
        }
        // once a stage re-runs, everything after it does too
        let mut dirty = force;
        for stage in Stage::ALL.into_iter().filter(|s| (from..=to).contains(s)) {
            if !dirty && self.run.is_current(stage, &self.config)? {
                println!("[{stage}] up to date");
                continue;
            }
            println!("[{stage}] running");
            self.stage(stage)?;
            dirty = true;
        }
        self.write_summary()
    }

    // -- stages --------------------------------------------------------------

    fn corpus(&mut self, format: CorpusFormat) -> anyhow::Result<()> {
        let ds = load_source(&self.config, &self.config.corpus, "corpus")?;
        let shape = ds.shape()?.context("working corpus is empty")?;
        fs::create_dir_all(self.run.path("corpus"))?;
        imageio::save_packed(&self.run.path(CORPUS), &ds)?;
        self.run.record(CORPUS);
        if format == CorpusFormat::Ppm {
            let manifest = imageio::write_manifest_dir(&self.run.path("corpus/ppm"), &ds)?;
            let rel = manifest.strip_prefix(self.run.root()).unwrap_or(&manifest).to_string_lossy().into_owned();
            self.run.record(&rel);
        }
        let info = CorpusInfo {
            count: ds.len(),
            classes: ds.classes(),
            class_names: ds.class_names().map(|n| n.to_vec()),
            class_counts: ds.class_counts(),
            shape: shape.to_string(),
            checksum: degrade::dataset_checksum(&ds)?,
        };
        self.run.write(CORPUS_INFO, serde_json::to_string_pretty(&info)? + "\n")?;
        println!("corpus: {} images, {} classes, {shape}, counts {:?}", info.count, info.classes, info.class_counts);
        Ok(())
    }

    fn component(&mut self) -> anyhow::Result<()> {
        let corpus = self.load_corpus()?;
        let report = match &self.config.component {
            ComponentConfig::Builtin { train_corpus, .. } => {
                let train_set = load_source(&self.config, train_corpus, "component-corpus")?;
                if train_set.classes() != corpus.classes() {
                    bail!("component train corpus has {} classes, working corpus {}", train_set.classes(), corpus.classes());
                }
                let shape = corpus.shape()?.context("working corpus is empty")?;
                train_set.ensure_shape(shape)?;
                let arch = Architecture::default_cnn(shape, corpus.classes());
                let cfg = self.config.component_train().expect("builtin component");
                let images: Vec<_> = train_set.images().iter().collect();
                let trained = nn::train(&images, train_set.labels(), &arch, &cfg)?;
                let path = self.run.path(COMPONENT_MODEL);
                fs::create_dir_all(path.parent().expect("component dir"))?;
                nn::save_model(&path, &trained.model)?;
                self.run.record(COMPONENT_MODEL);
                let checksum = trained.model.checksum();
                let mut provider = BuiltinProvider::new(trained.model);
                let acc = evaluate_accuracy(&mut provider, &corpus)?;
                json!({
                    "kind": "builtin",
                    "train_count": train_set.len(),
                    "epoch_losses": trained.epoch_losses,
                    "model_crc32": format!("{checksum:08x}"),
                    "clean_accuracy": acc.value(),
                    "correct": acc.correct,
                    "count": acc.count,
                })
            }
            ComponentConfig::External { command } => {
                let mut provider = ExternalProvider::spawn(command, Some(corpus.classes()))?;
                let acc = evaluate_accuracy(&mut provider, &corpus)?;
                let name = provider.name().to_string();
                provider.shutdown()?;
                json!({
                    "kind": "external",
                    "command": command,
                    "name": name,
                    "clean_accuracy": acc.value(),
                    "correct": acc.correct,
                    "count": acc.count,
                })
            }
        };
        println!(
            "component: clean accuracy {:.4} ({}/{})",
            report["clean_accuracy"].as_f64().unwrap_or(0.0),
            report["correct"],
            report["count"]
        );
        self.write_json("component/report.json", &report)
    }

    fn degrade(&mut self) -> anyhow::Result<()> {
        let corpus = self.load_corpus()?;
        let plan = degrade::plan(&self.config.grids()?, corpus.len())?;
        println!("{}", accounting_line(&plan));
        let datasets = degrade::generate(&corpus, &plan, &self.config.factor_kinds())?;
        drop(corpus);
        let dir = self.run.path(DATASETS);
        for d in &datasets {
            d.save(&dir)?;
            self.run.record(&format!("{DATASETS}/{}.mfd", d.id()));
            self.run.record(&format!("{DATASETS}/{}.json", d.id()));
        }
        self.run.write(PLAN, serde_json::to_string_pretty(&plan)? + "\n")?;
        Ok(())
    }

    fn assess(&mut self) -> anyhow::Result<()> {
        let classes = self.corpus_info()?.classes;
        let plan = self.load_plan()?;
        let datasets = plan
            .dataset_ids()
            .iter()
            .map(|id| DegradedDataset::load(&self.run.path(DATASETS), id, classes).map_err(|e| e.in_dataset(id)))
            .collect::<Result<Vec<_>, _>>()?;
        let mut provider = self.open_component()?;
        let records = assess_all(provider.as_mut(), &datasets)?;
        for r in &records {
            println!("assess: {} accuracy {:.4} ({}/{})", r.dataset_id, r.accuracy, r.correct, r.count);
        }
        self.run.write("assess/records.csv", records_csv(&records, None))?;
        self.write_json(RECORDS_JSON, &records)
    }

    fn label(&mut self) -> anyhow::Result<()> {
        let spec = &self.config.thresholds.clone();
        let records: Vec<PerformanceRecord> = self.read_json(RECORDS_JSON)?;
        let entries: Vec<LabelEntry> = records
            .iter()
            .map(|r| {
                let level = spec.label(r.accuracy);
                LabelEntry {
                    dataset_id: r.dataset_id.clone(),
                    accuracy: r.accuracy,
                    level: level.level(),
                    level_name: spec.level_name(level).to_string(),
                }
            })
            .collect();
        let labels: Vec<SafetyLabel> = entries.iter().map(|e| SafetyLabel(e.level)).collect();
        let counts = census(&labels, spec.levels());
        let census_json: BTreeMap<String, usize> =
            (1..=spec.levels()).map(|l| (spec.level_name(SafetyLabel(l)).to_string(), counts[l - 1])).collect();
        println!("label: census {census_json:?} over {} datasets", entries.len());

        let csv = records_csv(&records, Some(spec));
        self.run.write("label/labeled.csv", csv)?;
        self.write_json(LABELS, &entries)?;
        self.write_json("label/census.json", &json!({ "levels": census_json, "datasets": entries.len() }))?;
        let plan = self.load_plan()?;
        if plan.grids.len() == 2 {
            let heatmap = heatmap_grid(&plan, &records, spec)?;
            self.run.write("label/heatmap.csv", heatmap.to_csv())?;
            self.run.write("label/heatmap.svg", heatmap.to_svg(spec))?;
        } else {
            println!("label: {} factors, heatmap skipped (records CSV covers it)", plan.grids.len());
        }
        Ok(())
    }

    fn prepare(&mut self) -> anyhow::Result<()> {
        let classes = self.corpus_info()?.classes;
        let m = self.config.thresholds.levels();
        let entries: Vec<LabelEntry> = self.read_json(LABELS)?;
        let labeled = entries
            .iter()
            .map(|e| {
                let d = DegradedDataset::load(&self.run.path(DATASETS), &e.dataset_id, classes).map_err(|err| err.in_dataset(&e.dataset_id))?;
                Ok((d, SafetyLabel(e.level)))
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        let (train, test) = monitor::prepare(labeled, m, &self.config.split_spec())?;
        println!(
            "prepare: {} train / {} test samples, train level counts {:?}",
            train.len(),
            test.len(),
            train.level_counts()
        );
        for (name, set) in [("train", &train), ("test", &test)] {
            let rel = format!("monitor/{name}.mfd");
            let path = self.run.path(&rel);
            fs::create_dir_all(path.parent().expect("monitor dir"))?;
            imageio::save_packed(&path, &set.to_labeled()?)?;
            self.run.record(&rel);
            self.run.write(&format!("monitor/{name}_provenance.csv"), set.provenance_csv())?;
        }
        let split = json!({
            "train": train.len(),
            "test": test.len(),
            "train_level_counts": train.level_counts(),
            "test_level_counts": test.level_counts(),
            "train_majority_fraction": train.majority_fraction(),
            "seed": self.config.split_spec().seed,
        });
        self.write_json("monitor/split.json", &split)
    }

    fn train_monitor(&mut self) -> anyhow::Result<()> {
        let train = self.load_monitor_set("train")?;
        let arch = self.monitor_arch(&train)?;
        let cfg = self.config.monitor_train();
        let trained = monitor::train_monitor(&train, &arch, &cfg)?;
        let path = self.run.path(MONITOR_MODEL);
        nn::save_model(&path, &trained.model)?;
        self.run.record(MONITOR_MODEL);
        println!("train-monitor: {} samples, final loss {:.4}", train.len(), trained.epoch_losses.last().copied().unwrap_or(f64::NAN));
        let report = json!({
            "samples": train.len(),
            "epoch_losses": trained.epoch_losses,
            "model_crc32": format!("{:08x}", trained.model.checksum()),
            "seed": cfg.seed,
        });
        self.write_json("monitor/train_report.json", &report)
    }

    fn eval_monitor(&mut self) -> anyhow::Result<()> {
        let names = self.config.thresholds.level_names.clone();
        let model = nn::load_model(&self.run.path(MONITOR_MODEL))?;
        let test = self.load_monitor_set("test")?;
        let holdout = monitor::evaluate(&model, &test)?;
        self.write_report("eval/holdout", &holdout, &names)?;
        drop(test);

        let train = self.load_monitor_set("train")?;
        let arch = self.monitor_arch(&train)?;
        let cfg = self.config.monitor_train();
        let cv = monitor::kfold_cv(&train, self.config.cv_folds, &arch, &cfg)?;
        self.write_report("eval/cv", &cv.pooled, &names)?;
        let baseline = train.majority_fraction();
        println!(
            "eval-monitor: holdout accuracy {:.4}; {}-fold pooled accuracy {:.4} (folds {:?}); majority baseline {:.4}",
            holdout.accuracy,
            self.config.cv_folds,
            cv.pooled.accuracy,
            cv.fold_accuracies.iter().map(|a| format!("{a:.4}")).collect::<Vec<_>>(),
            baseline
        );
        let summary = json!({
            "holdout": report_json(&holdout),
            "holdout_majority_baseline": test_majority(&self.run, self.config.thresholds.levels())?,
            "cv": {
                "folds": self.config.cv_folds,
                "fold_accuracies": cv.fold_accuracies,
                "pooled": report_json(&cv.pooled),
                "majority_baseline": baseline,
                "fold_model_crc32": cv.fold_model_checksums.iter().map(|c| format!("{c:08x}")).collect::<Vec<_>>(),
            },
            "roc_aggregation": "micro-average over (sample, level) pairs",
            "seeds": { "master": self.config.seed, "monitor": cfg.seed },
            "config_digest": self.config.stage_digest(Stage::EvalMonitor),
        });
        self.write_json("eval/summary.json", &summary)
    }

    fn runtime(&mut self) -> anyhow::Result<()> {
        let corpus = self.load_corpus()?;
        let scenario = match &self.config.runtime.scenario {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading scenario {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing scenario {}", path.display()))?
            }
            None => default_scenario(&self.config),
        };
        scenario.validate()?;
        let mode_config = SafetyModeConfig::from_level_names(&self.config.thresholds.level_names, self.config.runtime.debounce);
        let mut component = self.open_component()?;
        let mut monitor = BuiltinProvider::new(nn::load_model(&self.run.path(MONITOR_MODEL))?);
        let mut rt = Runtime::new(component.as_mut(), &mut monitor, mode_config.clone())?;
        let trace = run_stream(&scenario, &corpus, &self.config.factor_kinds(), &mut rt)?;
        drop(rt);
        let demotions = trace.demotions(&mode_config);
        println!("run: {} frames, {} transitions, {demotions} demotions", trace.verdicts.len(), trace.transitions.len());
        for t in &trace.transitions {
            println!("run: frame {} {} -> {}", t.frame, t.from, t.to);
        }
        self.write_json("runtime/scenario.json", &scenario)?;
        self.run.write("runtime/trace.jsonl", trace.to_jsonl()?)?;
        self.run.write("runtime/trace.csv", trace.to_csv())?;
        let errors = trace.verdicts.iter().filter(|v| v.error.is_some()).count();
        let summary = json!({
            "frames": trace.verdicts.len(),
            "transitions": trace.transitions,
            "demotions": demotions,
            "provider_errors": errors,
            "final_mode": trace.verdicts.last().map(|v| v.mode_after.clone()),
            "debounce": self.config.runtime.debounce,
        });
        self.write_json("runtime/transitions.json", &summary)
    }

    // -- helpers ---------------------------------------------------------------

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> anyhow::Result<()> {
        self.run.write(rel, serde_json::to_string_pretty(value)? + "\n")?;
        Ok(())
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, rel: &str) -> anyhow::Result<T> {
        let path = self.run.path(rel);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn corpus_info(&self) -> anyhow::Result<CorpusInfo> {
        self.read_json(CORPUS_INFO)
    }

    pub fn load_corpus(&self) -> anyhow::Result<LabeledDataset> {
        let info = self.corpus_info()?;
        let ds = imageio::load_packed(&self.run.path(CORPUS), Some(info.classes))?;
        Ok(match info.class_names {
            Some(names) => ds.with_class_names(names)?,
            None => ds,
        })
    }

    pub fn load_plan(&self) -> anyhow::Result<DegradationPlan> {
        self.read_json(PLAN)
    }

    fn load_monitor_set(&self, name: &str) -> anyhow::Result<MonitorDataset> {
        let m = self.config.thresholds.levels();
        let ds = imageio::load_packed(&self.run.path(&format!("monitor/{name}.mfd")), Some(m))?;
        let prov_path = self.run.path(&format!("monitor/{name}_provenance.csv"));
        let text = fs::read_to_string(&prov_path).with_context(|| format!("reading {}", prov_path.display()))?;
        let provenance = MonitorDataset::parse_provenance_csv(&text)?;
        Ok(MonitorDataset::from_labeled(ds, provenance)?)
    }

    fn monitor_arch(&self, data: &MonitorDataset) -> anyhow::Result<Architecture> {
        let shape = data.images.first().map(|i| i.shape()).context("monitor data is empty")?;
        Ok(Architecture::default_cnn(shape, data.level_count))
    }

    pub fn open_component(&self) -> anyhow::Result<Box<dyn InferenceProvider>> {
        Ok(match &self.config.component {
            ComponentConfig::Builtin { .. } => Box::new(BuiltinProvider::new(nn::load_model(&self.run.path(COMPONENT_MODEL))?)),
            ComponentConfig::External { command } => {
                let classes = self.corpus_info()?.classes;
                Box::new(ExternalProvider::spawn(command, Some(classes))?)
            }
        })
    }

    fn write_report(&mut self, dir: &str, report: &EvalReport, names: &[String]) -> anyhow::Result<()> {
        self.run.write(&format!("{dir}/confusion.csv"), report.confusion.to_csv(names))?;
        for (i, roc) in report.roc.iter().enumerate() {
            if let Some(roc) = roc {
                self.run.write(&format!("{dir}/roc_level{}_{}.csv", i + 1, names[names.len() - 1 - i]), roc.to_csv())?;
            }
        }
        if let Some(agg) = &report.aggregate_roc {
            self.run.write(&format!("{dir}/roc_aggregate.csv"), agg.to_csv())?;
        }
        Ok(())
    }

    /// Collects headline numbers and every artifact checksum.
    pub fn write_summary(&mut self) -> anyhow::Result<serde_json::Value> {
        let read = |rel: &str| -> Option<serde_json::Value> { self.read_json(rel).ok() };
        let checksums = self.run.artifact_checksums()?;
        let summary = json!({
            "config_digest": self.config.digest(),
            "master_seed": self.config.seed,
            "corpus": read(CORPUS_INFO),
            "component": read("component/report.json"),
            "label_census": read("label/census.json"),
            "split": read("monitor/split.json"),
            "monitor": read("eval/summary.json"),
            "runtime": read("runtime/transitions.json"),
            "artifact_count": checksums.len(),
        });
        fs::write(self.run.path("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
        fs::write(self.run.path("checksums.json"), serde_json::to_string_pretty(&checksums)? + "\n")?;
        Ok(summary)
    }
}

fn test_majority(run: &RunDir, m: usize) -> anyhow::Result<f64> {
    let ds = imageio::load_packed(&run.path(MONITOR_TEST), Some(m))?;
    let counts = ds.class_counts();
    Ok(*counts.iter().max().unwrap_or(&0) as f64 / ds.len().max(1) as f64)
}

fn report_json(r: &EvalReport) -> serde_json::Value {
    json!({
        "count": r.count,
        "accuracy": r.accuracy,
        "confusion": r.confusion.counts,
        "auc_per_level": r.roc.iter().map(|c| c.as_ref().map(|c| c.auc)).collect::<Vec<_>>(),
        "aggregate_auc": r.aggregate_roc.as_ref().map(|c| c.auc),
    })
}

/// Loads or generates a corpus; synthetic seeds derive from `seed_stage`.
pub fn load_source(config: &PipelineConfig, source: &CorpusSource, seed_stage: &str) -> anyhow::Result<LabeledDataset> {
    Ok(match source {
        CorpusSource::Synthetic(_) => generate_corpus(&config.synth_spec(source, seed_stage).expect("synthetic"))?,
        CorpusSource::Manifest { path, classes } => imageio::load_manifest(path, *classes)?,
        CorpusSource::Packed { path, classes } => imageio::load_packed(path, *classes)?,
    })
}

/// Image count of a corpus source without decoding any pixels.
pub fn source_count(source: &CorpusSource) -> anyhow::Result<usize> {
    Ok(match source {
        CorpusSource::Synthetic(spec) => spec.total(),
        CorpusSource::Manifest { path, classes } => imageio::DatasetManifest::read(path, *classes)?.entries.len(),
        CorpusSource::Packed { path, .. } => {
            use std::io::Read;
            let mut head = [0u8; 8];
            fs::File::open(path)
                .and_then(|mut f| f.read_exact(&mut head))
                .with_context(|| format!("reading header of {}", path.display()))?;
            if &head[..4] != b"MFD1" {
                bail!("{} is not a packed dataset", path.display());
            }
            u32::from_le_bytes(head[4..8].try_into().expect("4 bytes")) as usize
        }
    })
}

/// Plans the degradation without generating images.
pub fn dry_run_plan(config: &PipelineConfig, source_count: usize) -> anyhow::Result<DegradationPlan> {
    let plan = degrade::plan(&config.grids()?, source_count)?;
    println!("{}", accounting_line(&plan));
    Ok(plan)
}

pub fn accounting_line(plan: &DegradationPlan) -> String {
    let n_f = plan.grids.len();
    match plan.rho {
        Some(rho) => format!(
            "degrade: N = n_i * rho^n_f = {} * {rho}^{n_f} = {} images in {} datasets",
            plan.source_count,
            plan.predicted_total,
            plan.combinations.len()
        ),
        None => format!(
            "degrade: N = n_i * combinations = {} * {} = {} images in {} datasets",
            plan.source_count,
            plan.combinations.len(),
            plan.predicted_total,
            plan.combinations.len()
        ),
    }
}

/// Clean first half, then the first factor named `haze` (or the first
/// factor) jumps to its largest grid value.
pub fn default_scenario(config: &PipelineConfig) -> DriftScenario {
    let frames = DEFAULT_SCENARIO_FRAMES;
    let half = frames / 2;
    let factor = config.factors.iter().find(|f| f.kind.name() == "haze").unwrap_or(&config.factors[0]);
    let eps = factor.epsilons.last().copied().unwrap_or(0.0);
    let zero = config.factors.iter().map(|f| (f.kind.name().to_string(), 0.0)).collect();
    let step = [(factor.kind.name().to_string(), eps)].into_iter().collect();
    DriftScenario {
        seed: config.stage_seed("run"),
        frames,
        segments: vec![
            Segment { from: 0, to: half, assignment: zero, interpolate: false },
            Segment { from: half, to: frames, assignment: step, interpolate: false },
        ],
    }
}
