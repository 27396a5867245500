//! Stage bookkeeping inside a run directory: completion stamps carrying the
//! config digest, prerequisite and staleness checks, and the lock file.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Corpus,
    Component,
    Degrade,
    Assess,
    Label,
    Prepare,
    TrainMonitor,
    EvalMonitor,
    Run,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Corpus,
        Stage::Component,
        Stage::Degrade,
        Stage::Assess,
        Stage::Label,
        Stage::Prepare,
        Stage::TrainMonitor,
        Stage::EvalMonitor,
        Stage::Run,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Corpus => "corpus",
            Stage::Component => "train-component",
            Stage::Degrade => "degrade",
            Stage::Assess => "assess",
            Stage::Label => "label",
            Stage::Prepare => "prepare",
            Stage::TrainMonitor => "train-monitor",
            Stage::EvalMonitor => "eval-monitor",
            Stage::Run => "run",
        }
    }

    /// Command that produces this stage.
    pub fn command(self) -> &'static str {
        match self {
            Stage::Corpus => "synth` or `ingest",
            other => other.name(),
        }
    }

    pub fn prerequisites(self) -> &'static [Stage] {
        use Stage::*;
        match self {
            Corpus => &[],
            Component => &[Corpus],
            Degrade => &[Corpus],
            Assess => &[Component, Degrade],
            Label => &[Assess],
            Prepare => &[Degrade, Label],
            TrainMonitor => &[Prepare],
            EvalMonitor => &[Prepare, TrainMonitor],
            Run => &[Corpus, Component, Label, TrainMonitor],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        match s {
            "synth" | "ingest" => Ok(Stage::Corpus),
            "component" => Ok(Stage::Component),
            _ => Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| {
                let names: Vec<_> = Stage::ALL.iter().map(|s| s.name()).collect();
                anyhow!("unknown stage {s:?}; expected one of {}", names.join(", "))
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamp {
    pub stage: String,
    pub digest: String,
    pub master_seed: u64,
    pub stage_seed: u64,
    /// Relative artifact path to hex CRC32 of its bytes.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Timing {
    started_unix: f64,
    elapsed_seconds: f64,
}

pub fn file_crc(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(format!("{:08x}", crc32fast::hash(&bytes)))
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// A run directory and the artifacts written by the current stage.
pub struct RunDir {
    root: PathBuf,
    written: Vec<String>,
    started: f64,
}

impl RunDir {
    pub fn new(root: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating run directory {}", root.display()))?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new(), started: unix_now() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Writes an artifact and records it for the stage stamp.
    pub fn write(&mut self, rel: &str, bytes: impl AsRef<[u8]>) -> anyhow::Result<PathBuf> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.record(rel);
        Ok(path)
    }

    /// Records an artifact written by other code.
    pub fn record(&mut self, rel: &str) {
        if !self.written.iter().any(|w| w == rel) {
            self.written.push(rel.to_string());
        }
    }

    fn stamp_path(&self, stage: Stage) -> PathBuf {
        self.root.join("stamps").join(format!("{}.json", stage.name()))
    }

    pub fn read_stamp(&self, stage: Stage) -> anyhow::Result<Option<Stamp>> {
        let path = self.stamp_path(stage);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?))
    }

    /// Fails unless every prerequisite stage has a current stamp.
    pub fn require(&self, stage: Stage, config: &PipelineConfig) -> anyhow::Result<()> {
        let mut missing = Vec::new();
        for &pre in stage.prerequisites() {
            if self.read_stamp(pre)?.is_none() {
                missing.push(pre);
            }
        }
        if !missing.is_empty() {
            let names: Vec<String> = missing.iter().map(|p| format!("`{}`", p.command())).collect();
            bail!("`{stage}` needs stages that have not run in {}; run {} first", self.root.display(), names.join(", then "));
        }
        for &pre in stage.prerequisites() {
            let stamp = self.read_stamp(pre)?.expect("checked above");
            let digest = config.stage_digest(pre);
            if stamp.digest != digest {
                bail!(
                    "`{pre}` artifacts are stale: made with config digest {} but the current config gives {digest}; re-run `{}` first",
                    stamp.digest,
                    pre.command()
                );
            }
            for rel in stamp.artifacts.keys() {
                if !self.path(rel).exists() {
                    bail!("artifact {rel} of `{pre}` is missing; re-run `{}` first", pre.command());
                }
            }
        }
        Ok(())
    }

    /// True when the stage's stamp matches the config and its artifacts are
    /// unchanged on disk.
    pub fn is_current(&self, stage: Stage, config: &PipelineConfig) -> anyhow::Result<bool> {
        let Some(stamp) = self.read_stamp(stage)? else { return Ok(false) };
        if stamp.digest != config.stage_digest(stage) {
            return Ok(false);
        }
        for (rel, crc) in &stamp.artifacts {
            let path = self.path(rel);
            if !path.exists() || &file_crc(&path)? != crc {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Drops any existing stamp so a failed re-run cannot leave a stale
    /// one looking current.
    pub fn clear_stamp(&self, stage: Stage) -> anyhow::Result<()> {
        let path = self.stamp_path(stage);
        if path.exists() {
            fs::remove_file(&path).with_context(|| format!("removing {}", path.display()))?;
        }
        Ok(())
    }

    /// Writes the stamp for everything recorded since the last call, plus a
    /// timing sidecar kept out of the stamp so stamps stay reproducible.
    pub fn finish(&mut self, stage: Stage, config: &PipelineConfig) -> anyhow::Result<Stamp> {
        let mut artifacts = BTreeMap::new();
        for rel in self.written.drain(..) {
            artifacts.insert(rel.clone(), file_crc(&self.root.join(&rel))?);
        }
        let stamp = Stamp {
            stage: stage.name().to_string(),
            digest: config.stage_digest(stage),
            master_seed: config.seed,
            stage_seed: config.stage_seed(stage.name()),
            artifacts,
        };
        let path = self.stamp_path(stage);
        fs::create_dir_all(path.parent().expect("stamp dir"))?;
        fs::write(&path, serde_json::to_string_pretty(&stamp)? + "\n")?;
        let now = unix_now();
        let timing = Timing { started_unix: self.started, elapsed_seconds: now - self.started };
        fs::write(path.with_extension("timing.json"), serde_json::to_string_pretty(&timing)? + "\n")?;
        self.started = now;
        Ok(stamp)
    }

    /// Every stamped artifact and its checksum, over all completed stages.
    pub fn artifact_checksums(&self) -> anyhow::Result<BTreeMap<String, String>> {
        let mut all = BTreeMap::new();
        for stage in Stage::ALL {
            if let Some(stamp) = self.read_stamp(stage)? {
                all.extend(stamp.artifacts);
            }
        }
        Ok(all)
    }
}

/// Exclusive lock on a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(root: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating run directory {}", root.display()))?;
        let path = root.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => {
                fs::write(&path, format!("{}\n", std::process::id()))?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => bail!(
                "run directory {} is locked by another command (delete {} if no command is running)",
                root.display(),
                path.display()
            ),
            Err(e) => Err(e).with_context(|| format!("creating {}", path.display())),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_parse() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert_eq!("synth".parse::<Stage>().unwrap(), Stage::Corpus);
        assert!("nope".parse::<Stage>().is_err());
    }

    #[test]
    fn prerequisites_precede() {
        for s in Stage::ALL {
            assert!(s.prerequisites().iter().all(|p| *p < s));
        }
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let lock = RunLock::acquire(dir.path()).unwrap();
        assert!(RunLock::acquire(dir.path()).unwrap_err().to_string().contains("locked"));
        drop(lock);
        RunLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn missing_and_stale_prerequisites() {
        let dir = tempfile::tempdir().unwrap();
        let config = PipelineConfig::default();
        let mut run = RunDir::new(dir.path()).unwrap();
        let err = run.require(Stage::Assess, &config).unwrap_err().to_string();
        assert!(err.contains("`train-component`, then `degrade`"), "{err}");

        run.write("a.txt", "x").unwrap();
        run.finish(Stage::Corpus, &config).unwrap();
        run.require(Stage::Degrade, &config).unwrap();
        assert!(run.is_current(Stage::Corpus, &config).unwrap());

        let changed = PipelineConfig { seed: 9, ..config.clone() };
        let err = run.require(Stage::Degrade, &changed).unwrap_err().to_string();
        assert!(err.contains("stale"), "{err}");

        fs::write(dir.path().join("a.txt"), "y").unwrap();
        assert!(!run.is_current(Stage::Corpus, &config).unwrap());
        fs::remove_file(dir.path().join("a.txt")).unwrap();
        assert!(run.require(Stage::Degrade, &config).unwrap_err().to_string().contains("missing"));
    }
}
