//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit when
//! any criterion fails. Budgets are wall-clock limits and count towards
//! the verdict.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;
use safemon_cli::config::{CorpusSource, PipelineConfig};
use safemon_cli::pipeline::{accounting_line, dry_run_plan, source_count, Pipeline};
use safemon_cli::stage::Stage;
use safemon_core::assess::{census, heatmap_grid, PerformanceRecord, SafetyLabel, ThresholdSpec};
use safemon_core::component::FnProvider;
use safemon_core::imageio::{read_packed, read_ppm, write_packed, write_ppm, Image, LabeledDataset, Shape};
use safemon_core::monitor::{auc, kfold_cv, split_indices, stratified_folds, MonitorDataset, SplitSpec};
use safemon_core::nn::{loss_and_grads, read_model, write_model, Architecture, Layer, Model, TrainConfig};
use safemon_core::perturb::{apply_blur, apply_haze, gaussian_kernel, DEFAULT_HAZE_COLOR};
use safemon_core::runtime::{replay_levels, Debounce, DriftScenario, ModeState, Runtime, SafetyModeConfig, Segment};
use safemon_core::seed::{rng_from_seed, Rng as SeededRng};
use safemon_core::{DegradationPlan, Error, SynthSpec};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

struct Suite {
    passed: usize,
    failed: usize,
}

impl Suite {
    fn criterion(&mut self, id: &str, title: &str, budget: Duration, f: impl FnOnce() -> Check) {
        let start = Instant::now();
        let result = f();
        let took = start.elapsed();
        let result = match result {
            Ok(detail) if took > budget => Err(format!("{detail}; exceeded budget of {budget:?}")),
            other => other,
        };
        let timing = format!("[{:.2}s of {:.0}s]", took.as_secs_f64(), budget.as_secs_f64());
        match result {
            Ok(detail) => {
                self.passed += 1;
                println!("PASS {id} {title}: {detail} {timing}");
            }
            Err(why) => {
                self.failed += 1;
                println!("FAIL {id} {title}: {why} {timing}");
            }
        }
    }
}

fn random_image(rng: &mut SeededRng, w: usize, h: usize) -> Image {
    Image::new(w, h, 3, (0..w * h * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
}

fn random_lattice_image(rng: &mut SeededRng, w: usize, h: usize) -> Image {
    let bytes: Vec<u8> = (0..w * h * 3).map(|_| rng.random()).collect();
    Image::from_bytes(w, h, 3, &bytes).unwrap()
}

fn naive_blur(img: &Image, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let weight = |dx: isize, dy: isize| (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
    let mut total = 0.0;
    for dy in -r..=r {
        for dx in -r..=r {
            total += weight(dx, dy);
        }
    }
    let (w, h) = (img.width() as isize, img.height() as isize);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            for c in 0..img.channels() {
                let mut acc = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let sx = (x + dx).clamp(0, w - 1) as usize;
                        let sy = (y + dy).clamp(0, h - 1) as usize;
                        acc += weight(dx, dy) / total * img.get(sx, sy, c);
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

fn pairwise_auc(scores: &[f64], positives: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &p) in positives.iter().enumerate() {
        for (j, &q) in positives.iter().enumerate() {
            if p && !q {
                pairs += 1.0;
                wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
    }
    wins / pairs
}

fn expand(per_level: &[usize]) -> Vec<SafetyLabel> {
    per_level.iter().enumerate().flat_map(|(i, &n)| std::iter::repeat_n(SafetyLabel(i + 1), n)).collect()
}

fn accounting() -> Check {
    let config = PipelineConfig::default();
    let n_i = source_count(&CorpusSource::Synthetic(SynthSpec::scaled(1, 0))).map_err(|e| e.to_string())?;
    ensure!(n_i == 4110, "reference-scale corpus has {n_i} images, expected 4110");
    let plan = dry_run_plan(&config, n_i).map_err(|e| e.to_string())?;
    ensure!(plan.predicted_total == 102_750, "N = {}", plan.predicted_total);
    ensure!(plan.combinations.len() == 25, "{} combinations", plan.combinations.len());
    ensure!(plan.rho == Some(5), "rho {:?}", plan.rho);
    let line = accounting_line(&plan);
    ensure!(line.contains("102750"), "log line {line:?}");
    Ok(format!("N = 102750 over 25 combinations ({line})"))
}

fn split_arithmetic() -> Check {
    let per_dataset = expand(&[3, 7, 15]);
    let levels: Vec<SafetyLabel> = per_dataset.iter().flat_map(|&l| std::iter::repeat_n(l, 4110)).collect();
    ensure!(levels.len() == 102_750, "{} samples", levels.len());
    let (train, test) = split_indices(&levels, 3, &SplitSpec { train_fraction: 0.8, seed: 11 }).map_err(|e| e.to_string())?;
    ensure!(train.len() == 82_200 && test.len() == 20_550, "train {} / test {}", train.len(), test.len());
    let mut seen = vec![0u8; levels.len()];
    for &i in train.iter().chain(&test) {
        seen[i] += 1;
    }
    ensure!(seen.iter().all(|&c| c == 1), "split is not a partition");
    Ok("train 82200 / test 20550, disjoint and exhaustive".into())
}

fn perturbation_suite() -> Check {
    let mut rng = rng_from_seed(7);
    for _ in 0..20 {
        let img = random_lattice_image(&mut rng, 8, 8);
        let haze = apply_haze(&img, 0.0, DEFAULT_HAZE_COLOR).map_err(|e| e.to_string())?;
        let blur = apply_blur(&img, 0.0, 3.0).map_err(|e| e.to_string())?;
        ensure!(haze.to_bytes() == img.to_bytes() && blur.to_bytes() == img.to_bytes(), "epsilon 0 changed an image");
        let color = [rng.random(), rng.random(), rng.random()];
        let full = apply_haze(&random_image(&mut rng, 5, 4), 1.0, color).map_err(|e| e.to_string())?;
        ensure!(full.pixels().iter().enumerate().all(|(i, v)| *v == color[i % 3]), "epsilon 1 haze is not a fill");
    }
    let mut worst_kernel = 0.0f64;
    for sigma in [0.1, 0.5, 1.0, 1.8, 2.0, 4.0] {
        let k = gaussian_kernel(sigma);
        worst_kernel = worst_kernel.max((k.weights().iter().sum::<f64>() - 1.0).abs());
    }
    ensure!(worst_kernel <= 1e-12, "kernel sum off by {worst_kernel:e}");
    for _ in 0..50 {
        let img = random_image(&mut rng, 7, 6);
        let eps: f64 = rng.random();
        let lo = img.pixels().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = img.pixels().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let out = apply_blur(&img, eps, 3.0).map_err(|e| e.to_string())?;
        ensure!(out.pixels().iter().all(|v| *v >= lo - 1e-9 && *v <= hi + 1e-9), "blur left the input range");
        let out = apply_haze(&img, eps, DEFAULT_HAZE_COLOR).map_err(|e| e.to_string())?;
        ensure!(out.pixels().iter().all(|v| (-1e-9..=1.0 + 1e-9).contains(v)), "haze left [0, 1]");
    }
    let mut worst = 0.0f64;
    for sigma in [0.5, 1.0] {
        for _ in 0..20 {
            let img = random_image(&mut rng, 8, 8);
            let fast = apply_blur(&img, sigma / 3.0, 3.0).map_err(|e| e.to_string())?;
            for (a, b) in fast.pixels().iter().zip(naive_blur(&img, sigma)) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    ensure!(worst <= 1e-9, "blur differs from naive convolution by {worst:e}");
    Ok(format!("identity, fill, range ok; kernel error {worst_kernel:.1e}; naive blur error {worst:.1e}"))
}

fn random_arch(rng: &mut SeededRng) -> Architecture {
    loop {
        let side = 2 * rng.random_range(1..=3usize);
        let mut layers = Vec::new();
        if rng.random_bool(0.7) {
            layers.push(Layer::Conv { out_channels: rng.random_range(1..=3) });
            if rng.random_bool(0.6) {
                layers.push(Layer::Relu);
            }
            if rng.random_bool(0.5) {
                layers.push(Layer::MaxPool);
            }
        }
        layers.push(Layer::Flatten);
        if rng.random_bool(0.5) {
            layers.push(Layer::Dense { units: rng.random_range(2..=5) });
            layers.push(Layer::Relu);
        }
        layers.push(Layer::Dense { units: rng.random_range(2..=4) });
        let arch = Architecture { input: Shape::new(side, side, rng.random_range(1..=2)), layers };
        if arch.parameter_count().is_ok_and(|n| n <= 500) {
            return arch;
        }
    }
}

fn gradient_checks() -> Check {
    let mut rng = rng_from_seed(99);
    let h = 1e-4;
    let mut worst = 0.0f64;
    let mut params = 0;
    for _ in 0..20 {
        let arch = random_arch(&mut rng);
        let (k, input) = (arch.classes(), arch.input);
        // zero biases put rectifiers on their kink; jitter and redraw until
        // no kink lies within reach of the difference stencil
        let (mut model, images) = loop {
            let mut model = Model::init(arch.clone(), rng.random()).map_err(|e| e.to_string())?;
            for p in model.params_mut() {
                *p += rng.random_range(-0.1..0.1);
            }
            let images: Vec<Image> = (0..3)
                .map(|_| Image::new(input.width, input.height, input.channels, (0..input.len()).map(|_| rng.random()).collect()).unwrap())
                .collect();
            if images.iter().all(|im| model.kink_margin(im).is_ok_and(|m| m > 1e-3)) {
                break (model, images);
            }
        };
        let refs: Vec<&Image> = images.iter().collect();
        let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..k)).collect();
        let (_, grad) = loss_and_grads(&model, &refs, &labels).map_err(|e| e.to_string())?;
        params += grad.len();
        for i in 0..grad.len() {
            let orig = model.params()[i];
            model.params_mut()[i] = orig + h;
            let up = loss_and_grads(&model, &refs, &labels).map_err(|e| e.to_string())?.0;
            model.params_mut()[i] = orig - h;
            let down = loss_and_grads(&model, &refs, &labels).map_err(|e| e.to_string())?.0;
            model.params_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max((numeric - grad[i]).abs() / (numeric.abs() + grad[i].abs()).max(1e-6));
        }
    }
    ensure!(worst < 1e-4, "max relative error {worst:e}");
    Ok(format!("20 networks, {params} parameters, max relative error {worst:.2e}"))
}

fn auc_oracle() -> Check {
    let exact = auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).map_err(|e| e.to_string())?;
    ensure!(exact == 0.75, "worked example gave {exact}");
    let mut rng = rng_from_seed(5);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(2..=200);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..25) as f64 / 25.0).collect();
        let mut positives: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        positives[0] = true;
        positives[1] = false;
        let fast = auc(&scores, &positives).map_err(|e| e.to_string())?;
        worst = worst.max((fast - pairwise_auc(&scores, &positives)).abs());
    }
    ensure!(worst <= 1e-9, "rank AUC differs from enumeration by {worst:e}");
    Ok(format!("worked example 0.75 exact; 50 instances, max difference {worst:.1e}"))
}

fn labeling() -> Check {
    let spec = ThresholdSpec::default();
    for (acc, level) in [(0.95, 3), (0.55, 2), (0.39, 1), (0.70, 3), (0.40, 2)] {
        let got = spec.label(acc).level();
        ensure!(got == level, "accuracy {acc} labeled {got}, expected {level}");
    }
    Ok("0.95->3 0.55->2 0.39->1 0.70->3 0.40->2".into())
}

fn cv_integrity() -> Check {
    let mut rng = rng_from_seed(13);
    for _ in 0..30 {
        let counts: Vec<usize> = (0..3).map(|_| rng.random_range(5..40)).collect();
        let levels = expand(&counts);
        let folds = stratified_folds(&levels, 3, 5, rng.random()).map_err(|e| e.to_string())?;
        let mut tested = vec![0usize; levels.len()];
        for f in 0..5 {
            for (i, _) in folds.iter().enumerate().filter(|(_, &g)| g == f) {
                tested[i] += 1;
            }
        }
        ensure!(tested.iter().all(|&t| t == 1), "a sample was not tested exactly once");
    }
    for _ in 0..3 {
        let counts: Vec<usize> = (0..3).map(|_| rng.random_range(5..15)).collect();
        let levels = expand(&counts);
        let images = (0..levels.len()).map(|_| random_image(&mut rng, 2, 2)).collect();
        let provenance = (0..levels.len()).map(|i| ("d".to_string(), i)).collect();
        let data = MonitorDataset::new(images, levels.clone(), provenance, 3).map_err(|e| e.to_string())?;
        let arch = Architecture { input: Shape::new(2, 2, 3), layers: vec![Layer::Flatten, Layer::Dense { units: 3 }] };
        let cfg = TrainConfig { epochs: 1, batch_size: 4, seed: rng.random(), ..Default::default() };
        let cv = kfold_cv(&data, 5, &arch, &cfg).map_err(|e| e.to_string())?;
        ensure!(cv.pooled.confusion.total() == levels.len(), "pooled confusion covers {} of {}", cv.pooled.confusion.total(), levels.len());
        ensure!(cv.pooled.confusion.row_sums() == counts, "pooled rows {:?} vs counts {counts:?}", cv.pooled.confusion.row_sums());
    }
    Ok("30 random fold assignments and 3 full CV runs test every sample exactly once".into())
}

fn read_json<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<T, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn run_pipeline(out: &Path) -> Result<serde_json::Value, String> {
    let config = PipelineConfig { out_dir: out.to_path_buf(), ..PipelineConfig::default() };
    let mut p = Pipeline::open(config).map_err(|e| format!("{e:#}"))?;
    p.pipeline(Stage::Corpus, Stage::Run, false).map_err(|e| format!("{e:#}"))
}

fn end_to_end(out: &Path, secs: &mut f64) -> Check {
    let start = Instant::now();
    let summary = run_pipeline(out)?;
    *secs = start.elapsed().as_secs_f64();

    let corpus = &summary["corpus"];
    ensure!(corpus["count"] == 411, "corpus has {} images", corpus["count"]);
    ensure!(corpus["class_counts"] == serde_json::json!([72, 75, 45, 66, 63, 45, 45]), "class counts {}", corpus["class_counts"]);
    let clean = summary["component"]["clean_accuracy"].as_f64().ok_or("no clean accuracy")?;
    ensure!(clean >= 0.95, "component clean accuracy {clean:.4} below 0.95");

    let plan: DegradationPlan = read_json(&out.join("degrade/plan.json"))?;
    let ids = plan.dataset_ids();
    ensure!(ids.len() == 25, "{} degraded datasets", ids.len());
    for id in &ids {
        ensure!(out.join(format!("datasets/{id}.mfd")).exists(), "missing dataset {id}");
    }
    let records: Vec<PerformanceRecord> = read_json(&out.join("assess/records.json"))?;
    let spec = ThresholdSpec::default();
    let heatmap = heatmap_grid(&plan, &records, &spec).map_err(|e| e.to_string())?;
    ensure!(heatmap.accuracy[0][0] == clean, "heatmap cell (0,0) {} != clean accuracy {clean}", heatmap.accuracy[0][0]);
    let labels: Vec<SafetyLabel> = records.iter().map(|r| spec.label(r.accuracy)).collect();
    let counts = census(&labels, 3);
    ensure!(counts.iter().sum::<usize>() == 25, "census {counts:?} does not partition 25");

    let cv = &summary["monitor"]["cv"];
    let pooled = cv["pooled"]["accuracy"].as_f64().ok_or("no pooled accuracy")?;
    let baseline = cv["majority_baseline"].as_f64().ok_or("no baseline")?;
    ensure!(pooled >= baseline + 0.15, "pooled CV accuracy {pooled:.4} is less than 15 points above the majority baseline {baseline:.4}");
    Ok(format!(
        "clean accuracy {clean:.4} = heatmap (0,0); census (level 1, 2, 3) = {counts:?}; pooled 5-fold accuracy {pooled:.4} vs majority {baseline:.4} (+{:.1} points); {secs:.0}s",
        100.0 * (pooled - baseline),
        secs = *secs
    ))
}

fn determinism(first: &Path, second: &Path) -> Check {
    run_pipeline(second)?;
    let a: BTreeMap<String, String> = read_json(&first.join("checksums.json"))?;
    let b: BTreeMap<String, String> = read_json(&second.join("checksums.json"))?;
    ensure!(!a.is_empty(), "first run recorded no artifacts");
    let differing: Vec<&String> = a.keys().chain(b.keys()).filter(|k| a.get(*k) != b.get(*k)).collect();
    ensure!(differing.is_empty(), "artifacts differ: {differing:?}");
    let sa = fs::read(first.join("summary.json")).map_err(|e| e.to_string())?;
    let sb = fs::read(second.join("summary.json")).map_err(|e| e.to_string())?;
    ensure!(sa == sb, "summary files differ");
    Ok(format!("{} artifact checksums identical across two runs", a.len()))
}

fn state_machine() -> Check {
    let cfg = |window, quorum| SafetyModeConfig { debounce: Debounce { window, quorum }, ..Default::default() };
    let modes = replay_levels(&[1, 3, 3, 1, 1, 1], &cfg(3, 3));
    let first_stop = modes.iter().position(|&m| m == 1).map(|i| i + 1);
    ensure!(first_stop == Some(6), "stop first entered at frame {first_stop:?}, modes {modes:?}");
    let promoted = replay_levels(&[1, 1, 1, 3], &cfg(3, 3));
    ensure!(promoted == vec![3, 3, 1, 3], "promotion trace {promoted:?}");
    let mut rng = rng_from_seed(3);
    for _ in 0..50 {
        let levels: Vec<usize> = (0..rng.random_range(1..30)).map(|_| rng.random_range(1..=3)).collect();
        ensure!(replay_levels(&levels, &cfg(1, 1)) == levels, "(1,1) debounce does not track {levels:?}");
    }
    let mut component = FnProvider::new(7, |_: &Image| Ok(vec![1.0 / 7.0; 7]));
    let mut crashing = FnProvider::new(3, |_: &Image| Err(Error::Provider("simulated crash".into())));
    let config = cfg(3, 3);
    let mut rt = Runtime::new(&mut component, &mut crashing, config.clone()).map_err(|e| e.to_string())?;
    let frame = Image::filled(32, 32, &[0.5; 3]).unwrap();
    let (verdict, state) = rt.step(&ModeState::initial(&config), &frame).map_err(|e| e.to_string())?;
    ensure!(verdict.mode_after == "stop" && state.mode == 1, "crash left mode {}", verdict.mode_after);
    ensure!(verdict.error.as_deref().is_some_and(|e| e.contains("simulated crash")), "no error annotation");
    Ok("[1,3,3,1,1,1] stops at frame 6; (1,1) tracks levels; crashing provider forces stop".into())
}

fn format_round_trips() -> Check {
    let mut rng = rng_from_seed(21);
    for (w, h) in [(1, 1), (3, 5), (32, 32)] {
        let img = random_lattice_image(&mut rng, w, h);
        let bytes = write_ppm(&img).map_err(|e| e.to_string())?;
        let back = read_ppm(&bytes).map_err(|e| e.to_string())?;
        ensure!(back == img, "PPM {w}x{h} changed");
        ensure!(write_ppm(&back).map_err(|e| e.to_string())? == bytes, "PPM {w}x{h} re-encodes differently");
    }
    let images: Vec<Image> = (0..6).map(|_| random_lattice_image(&mut rng, 4, 4)).collect();
    let ds = LabeledDataset::new(images, vec![0, 1, 2, 3, 4, 5], 7).map_err(|e| e.to_string())?;
    let bytes = write_packed(&ds).map_err(|e| e.to_string())?;
    let back = read_packed(&bytes, Some(7)).map_err(|e| e.to_string())?;
    ensure!(back == ds, "packed dataset changed");
    ensure!(write_packed(&back).map_err(|e| e.to_string())? == bytes, "packed re-encodes differently");
    for _ in 0..5 {
        let arch = random_arch(&mut rng);
        let model = Model::init(arch, rng.random()).map_err(|e| e.to_string())?;
        let bytes = write_model(&model).map_err(|e| e.to_string())?;
        let back = read_model(&bytes).map_err(|e| e.to_string())?;
        let same = back.architecture() == model.architecture()
            && back.params().iter().zip(model.params()).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure!(same, "model parameters changed");
        ensure!(write_model(&back).map_err(|e| e.to_string())? == bytes, "model re-encodes differently");
    }
    let default_model = Model::init(Architecture::default_cnn(Shape::new(32, 32, 3), 7), 1).map_err(|e| e.to_string())?;
    let back = read_model(&write_model(&default_model).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure!(back.params() == default_model.params(), "default CNN changed");
    Ok("PPM, packed dataset and model files are bit-exact".into())
}

/// Scenario checks that depend on the trained end-to-end monitor.
fn scenario_checks(out: &Path) -> Check {
    let transitions: serde_json::Value = read_json(&out.join("runtime/transitions.json"))?;
    let demotions = transitions["demotions"].as_u64().unwrap_or(0);
    let frames = transitions["frames"].as_u64().unwrap_or(0) as usize;
    let after_step = transitions["transitions"]
        .as_array()
        .map(|t| t.iter().filter(|t| t["frame"].as_u64().unwrap_or(0) as usize >= frames / 2).count())
        .unwrap_or(0);
    ensure!(demotions >= 1 && after_step >= 1, "haze step produced {demotions} demotions, {after_step} transitions after the step");

    let clean = DriftScenario {
        seed: 8,
        frames: 120,
        segments: vec![Segment { from: 0, to: 120, assignment: BTreeMap::new(), interpolate: false }],
    };
    let scenario_path = out.join("clean_scenario.json");
    fs::write(&scenario_path, serde_json::to_string(&clean).unwrap()).map_err(|e| e.to_string())?;
    let mut config = PipelineConfig { out_dir: out.to_path_buf(), ..PipelineConfig::default() };
    config.runtime.scenario = Some(scenario_path);
    let mut p = Pipeline::open(config).map_err(|e| format!("{e:#}"))?;
    p.stage(Stage::Run).map_err(|e| format!("{e:#}"))?;
    let clean_summary: serde_json::Value = read_json(&out.join("runtime/transitions.json"))?;
    let clean_demotions = clean_summary["demotions"].as_u64().unwrap_or(u64::MAX);
    ensure!(clean_demotions == 0, "clean stream produced {clean_demotions} demotions");
    Ok(format!("haze step: {demotions} demotions; clean stream: no demotions, final mode {}", clean_summary["final_mode"]))
}

fn main() -> ExitCode {
    let mut suite = Suite { passed: 0, failed: 0 };
    let s = Duration::from_secs;
    suite.criterion("C01", "degradation accounting", s(1), accounting);
    suite.criterion("C02", "split arithmetic", s(5), split_arithmetic);
    suite.criterion("C03", "perturbation invariants", s(10), perturbation_suite);
    suite.criterion("C04", "gradient checks", s(60), gradient_checks);
    suite.criterion("C05", "AUC oracle", s(5), auc_oracle);
    suite.criterion("C06", "labeling semantics", s(1), labeling);
    suite.criterion("C07", "CV integrity", s(5), cv_integrity);

    let first = tempfile::tempdir().expect("temp dir");
    let second = tempfile::tempdir().expect("temp dir");
    let mut e2e_secs = 0.0;
    suite.criterion("C08", "end-to-end desk-scale run", s(600), || end_to_end(first.path(), &mut e2e_secs));
    suite.criterion("C09", "determinism", s(1200), || determinism(first.path(), second.path()));
    suite.criterion("C10", "runtime state machine", s(5), state_machine);
    suite.criterion("C11", "format round-trips", s(5), format_round_trips);
    suite.criterion("X01", "drift scenarios with the end-to-end monitor", s(60), || scenario_checks(first.path()));

    println!("acceptance: {} passed, {} failed", suite.passed, suite.failed);
    if suite.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
