//! Synthesis of runtime safety monitors for image classifiers.
//!
//! A source corpus is degraded over a grid of perturbation strengths, the
//! component classifier is scored on every degraded dataset, scores are
//! mapped to safety levels, and a second classifier (the monitor) is
//! trained to predict the level from a single input image. At run time
//! the monitor's verdicts drive a debounced operating mode.

pub mod assess;
pub mod component;
pub mod degrade;
pub mod error;
pub mod imageio;
pub mod monitor;
pub mod nn;
pub mod perturb;
pub mod runtime;
pub mod seed;
pub mod synth;

pub use assess::{Heatmap, PerformanceRecord, SafetyLabel, ThresholdSpec};
pub use component::{BuiltinProvider, ExternalProvider, FnProvider, InferenceProvider};
pub use degrade::{DegradationPlan, DegradedDataset, DatasetMetadata};
pub use error::{Error, Result};
pub use imageio::{Image, LabeledDataset, Shape};
pub use monitor::{ConfusionMatrix, CvResult, EvalReport, MonitorDataset, RocPoint, SplitSpec};
pub use nn::{Architecture, Layer, Model, TrainConfig};
pub use perturb::{EpsilonGrid, PerturbationKind};
pub use runtime::{Debounce, DriftScenario, ModeState, MonitorVerdict, Runtime, SafetyModeConfig, Trace};
pub use synth::SynthSpec;
