//! Runtime deployment of a monitor beside the component over a frame
//! stream.
//!
//! The safety mode follows an asymmetric debounce and depends only on the
//! last `window` verdicts: it is the lowest level `L` for which at least
//! `quorum` of them are at or below `L`, but never below the latest
//! verdict. So a demotion needs a quorum while a promotion takes effect on
//! the first higher verdict. Provider failures force the least-safe mode
//! for that frame.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::assess::SafetyLabel;
use crate::component::InferenceProvider;
use crate::error::{Error, Result};
use crate::imageio::{Image, LabeledDataset};
use crate::nn::argmax;
use crate::perturb::{apply_stack, PerturbationKind};
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Debounce {
    pub window: usize,
    pub quorum: usize,
}

impl Default for Debounce {
    fn default() -> Self {
        Self { window: 3, quorum: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyModeConfig {
    /// Mode name for every monitor level `1..=m`.
    pub level_to_mode: BTreeMap<usize, String>,
    #[serde(default)]
    pub debounce: Debounce,
}

impl Default for SafetyModeConfig {
    fn default() -> Self {
        let level_to_mode = [(3, "normal"), (2, "limited"), (1, "stop")]
            .into_iter()
            .map(|(l, m)| (l, m.to_string()))
            .collect();
        Self { level_to_mode, debounce: Debounce::default() }
    }
}

impl SafetyModeConfig {
    pub fn from_level_names(level_names: &[String], debounce: Debounce) -> Self {
        let m = level_names.len();
        let level_to_mode = level_names.iter().enumerate().map(|(i, n)| (m - i, n.clone())).collect();
        Self { level_to_mode, debounce }
    }

    pub fn levels(&self) -> usize {
        self.level_to_mode.len()
    }

    pub fn validate(&self) -> Result<()> {
        let Debounce { window, quorum } = self.debounce;
        if window == 0 || quorum == 0 || quorum > window {
            return Err(Error::Config(format!("debounce needs 1 <= quorum <= window, got ({window}, {quorum})")));
        }
        let m = self.levels();
        if m < 2 || (1..=m).any(|l| !self.level_to_mode.contains_key(&l)) {
            return Err(Error::Config("every level from 1 to m must map to a mode".into()));
        }
        Ok(())
    }

    pub fn mode_name(&self, level: usize) -> &str {
        &self.level_to_mode[&level]
    }
}

/// Last `window` verdict levels and the current mode level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeState {
    pub mode: usize,
    pub recent: VecDeque<usize>,
    pub next_frame: usize,
    pub levels: usize,
}

impl ModeState {
    pub fn initial(config: &SafetyModeConfig) -> Self {
        Self { mode: config.levels(), recent: VecDeque::new(), next_frame: 0, levels: config.levels() }
    }

    /// Records a verdict level and returns the new state.
    pub fn advance(&self, verdict: usize, debounce: Debounce) -> ModeState {
        let mut recent = self.recent.clone();
        recent.push_back(verdict);
        while recent.len() > debounce.window {
            recent.pop_front();
        }
        // Lowest level backed by a quorum, never below the latest verdict.
        let backed = (1..self.levels)
            .find(|&l| recent.iter().filter(|&&v| v <= l).count() >= debounce.quorum)
            .unwrap_or(self.levels);
        let mode = backed.max(verdict);
        ModeState { mode, recent, next_frame: self.next_frame + 1, levels: self.levels }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorVerdict {
    pub frame_index: usize,
    pub level: usize,
    pub level_probs: Vec<f64>,
    pub component_prediction: Option<usize>,
    pub mode_after: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

pub struct Runtime<'a> {
    component: &'a mut dyn InferenceProvider,
    monitor: &'a mut dyn InferenceProvider,
    config: SafetyModeConfig,
}

impl<'a> Runtime<'a> {
    pub fn new(component: &'a mut dyn InferenceProvider, monitor: &'a mut dyn InferenceProvider, config: SafetyModeConfig) -> Result<Self> {
        config.validate()?;
        if monitor.classes() != config.levels() {
            return Err(Error::Config(format!(
                "monitor predicts {} levels, mode table has {}",
                monitor.classes(),
                config.levels()
            )));
        }
        if let (Some(a), Some(b)) = (component.input_shape(), monitor.input_shape()) {
            if a != b {
                return Err(Error::Dimension { expected: a.to_string(), found: format!("monitor input {b}") });
            }
        }
        Ok(Self { component, monitor, config })
    }

    pub fn config(&self) -> &SafetyModeConfig {
        &self.config
    }

    /// Evaluates one frame and advances the mode state.
    pub fn step(&mut self, state: &ModeState, frame: &Image) -> Result<(MonitorVerdict, ModeState)> {
        for shape in [self.component.input_shape(), self.monitor.input_shape()].into_iter().flatten() {
            if frame.shape() != shape {
                return Err(Error::Dimension { expected: shape.to_string(), found: frame.shape().to_string() });
            }
        }
        let frames = std::slice::from_ref(frame);
        let component = self.component.predict_proba(frames).and_then(|rows| first_row(rows));
        let monitor = self.monitor.predict_proba(frames).and_then(|rows| first_row(rows));

        let (level, level_probs, component_prediction, error) = match (component, monitor) {
            (Ok(c), Ok(m)) => (argmax(&m) + 1, m, Some(argmax(&c)), None),
            (c, m) => {
                let mut levels = vec![0.0; self.config.levels()];
                levels[0] = 1.0;
                let msg = [c.err(), m.err()].into_iter().flatten().map(|e| e.to_string()).collect::<Vec<_>>().join("; ");
                (1, levels, None, Some(msg))
            }
        };
        let mut next = state.advance(level, self.config.debounce);
        if error.is_some() {
            next.mode = 1;
        }
        let verdict = MonitorVerdict {
            frame_index: state.next_frame,
            level,
            level_probs,
            component_prediction,
            mode_after: self.config.mode_name(next.mode).to_string(),
            error,
        };
        Ok((verdict, next))
    }
}

fn first_row(rows: Vec<Vec<f64>>) -> Result<Vec<f64>> {
    rows.into_iter().next().ok_or_else(|| Error::Provider("provider returned no rows".into()))
}

// ---------------------------------------------------------------------------
// Scenarios

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub from: usize,
    /// Exclusive.
    pub to: usize,
    pub assignment: BTreeMap<String, f64>,
    /// Ramp linearly from the previous segment's assignment (zeros for the
    /// first segment) to this one, reaching it on the last frame.
    #[serde(default)]
    pub interpolate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftScenario {
    pub seed: u64,
    pub frames: usize,
    pub segments: Vec<Segment>,
}

impl DriftScenario {
    pub fn validate(&self) -> Result<()> {
        let mut expected_from = 0;
        for (i, s) in self.segments.iter().enumerate() {
            if s.from != expected_from || s.to <= s.from {
                return Err(Error::Config(format!(
                    "segment {i} covers [{}, {}) but must start at {expected_from} and be non-empty",
                    s.from, s.to
                )));
            }
            if let Some((f, e)) = s.assignment.iter().find(|(_, e)| !(0.0..=1.0).contains(*e)) {
                return Err(Error::Config(format!("segment {i}: epsilon {e} for {f} outside [0, 1]")));
            }
            expected_from = s.to;
        }
        if expected_from != self.frames {
            return Err(Error::Config(format!("segments cover {expected_from} frames, scenario declares {}", self.frames)));
        }
        Ok(())
    }

    /// Factor assignment in effect at a frame.
    pub fn assignment_at(&self, frame: usize) -> BTreeMap<String, f64> {
        let Some(pos) = self.segments.iter().position(|s| s.from <= frame && frame < s.to) else {
            return BTreeMap::new();
        };
        let seg = &self.segments[pos];
        if !seg.interpolate {
            return seg.assignment.clone();
        }
        let start = if pos == 0 { BTreeMap::new() } else { self.segments[pos - 1].assignment.clone() };
        let t = (frame - seg.from + 1) as f64 / (seg.to - seg.from) as f64;
        let mut keys: Vec<&String> = seg.assignment.keys().chain(start.keys()).collect();
        keys.sort();
        keys.dedup();
        keys.into_iter()
            .map(|k| {
                let a = start.get(k).copied().unwrap_or(0.0);
                let b = seg.assignment.get(k).copied().unwrap_or(0.0);
                (k.clone(), a + t * (b - a))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub frame: usize,
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub verdicts: Vec<MonitorVerdict>,
    pub transitions: Vec<Transition>,
}

impl Trace {
    pub fn demotions(&self, config: &SafetyModeConfig) -> usize {
        let level_of = |name: &str| config.level_to_mode.iter().find(|(_, m)| m.as_str() == name).map(|(l, _)| *l);
        self.transitions.iter().filter(|t| level_of(&t.to) < level_of(&t.from)).count()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for v in &self.verdicts {
            out.push_str(&serde_json::to_string(v)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,level,mode\n");
        for v in &self.verdicts {
            let _ = writeln!(out, "{},{},{}", v.frame_index, v.level, v.mode_after);
        }
        out
    }
}

/// Replays a scenario: each frame is a seeded draw from `source` perturbed
/// by the scheduled assignment, applied in `factors` order.
pub fn run_stream(scenario: &DriftScenario, source: &LabeledDataset, factors: &[PerturbationKind], runtime: &mut Runtime<'_>) -> Result<Trace> {
    scenario.validate()?;
    for seg in &scenario.segments {
        if let Some(name) = seg.assignment.keys().find(|n| !factors.iter().any(|f| f.name() == n.as_str())) {
            return Err(Error::Config(format!("scenario uses unknown factor {name:?}")));
        }
    }
    if scenario.frames > 0 && source.is_empty() {
        return Err(Error::Config("scenario needs a non-empty source dataset".into()));
    }
    let mut rng = rng_from_seed(scenario.seed);
    let mut state = ModeState::initial(runtime.config());
    let mut trace = Trace::default();
    for frame in 0..scenario.frames {
        let pick = rng.random_range(0..source.len());
        let assignment = scenario.assignment_at(frame);
        let stack: Vec<(PerturbationKind, f64)> =
            factors.iter().map(|f| (f.clone(), assignment.get(f.name()).copied().unwrap_or(0.0))).collect();
        let image = apply_stack(&source.images()[pick], &stack)?.quantized();
        let before = runtime.config().mode_name(state.mode).to_string();
        let (verdict, next) = runtime.step(&state, &image)?;
        if verdict.mode_after != before {
            trace.transitions.push(Transition { frame, from: before, to: verdict.mode_after.clone() });
        }
        trace.verdicts.push(verdict);
        state = next;
    }
    Ok(trace)
}

/// Replays a level sequence through the mode machine; returns modes.
pub fn replay_levels(levels: &[usize], config: &SafetyModeConfig) -> Vec<usize> {
    let mut state = ModeState::initial(config);
    levels
        .iter()
        .map(|&l| {
            state = state.advance(l, config.debounce);
            state.mode
        })
        .collect()
}

pub fn verdict_label(verdict: &MonitorVerdict) -> SafetyLabel {
    SafetyLabel(verdict.level)
}
