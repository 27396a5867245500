//! Procedural speed-limit glyph corpus.
//!
//! Each image is a red-ringed white disc carrying a seven-segment speed
//! value on a tinted, lightly textured background. Placement, rotation and
//! background vary per image from a seed derived from the corpus seed and
//! the image index, so generation parallelizes without changing output.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::{Image, LabeledDataset, DEFAULT_SIDE, RGB};
use crate::seed::{derive_seed, mix64, rng_from_seed};

pub const SPEED_CLASSES: [&str; 7] = ["30", "50", "60", "70", "80", "100", "120"];

/// Per-class sample counts of the reference speed-sign test set.
pub const REFERENCE_COUNTS: [usize; 7] = [720, 750, 450, 660, 630, 450, 450];

pub const MAX_POSITION_JITTER: f64 = 2.0;
pub const MAX_ROTATION_DEG: f64 = 10.0;

const SUPERSAMPLE: usize = 3;
const RING_OUTER: f64 = 13.5;
const RING_INNER: f64 = 10.5;
const DIGIT_HEIGHT: f64 = 10.0;
const STROKE_HALF: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub counts: Vec<usize>,
    pub seed: u64,
    /// Maximum glyph offset in pixels along each axis.
    pub position_jitter: f64,
    /// Maximum rotation in degrees either way.
    pub rotation_jitter_deg: f64,
    /// Range of the background's mean brightness.
    pub background: (f64, f64),
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self::scaled(10, 0)
    }
}

impl SynthSpec {
    /// Reference proportions with every count divided by `divisor`.
    pub fn scaled(divisor: usize, seed: u64) -> Self {
        let d = divisor.max(1) as f64;
        Self {
            counts: REFERENCE_COUNTS.iter().map(|&c| (c as f64 / d).round() as usize).collect(),
            seed,
            position_jitter: MAX_POSITION_JITTER,
            rotation_jitter_deg: MAX_ROTATION_DEG,
            background: (0.25, 0.65),
        }
    }

    pub fn with_counts(mut self, counts: Vec<usize>) -> Self {
        self.counts = counts;
        self
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.counts.len() != SPEED_CLASSES.len() {
            return Err(Error::Config(format!("expected {} class counts, got {}", SPEED_CLASSES.len(), self.counts.len())));
        }
        if let Some(c) = self.counts.iter().position(|&n| n == 0) {
            return Err(Error::Config(format!("class {c} has count 0; every class must be represented")));
        }
        if !(0.0..=MAX_POSITION_JITTER).contains(&self.position_jitter) {
            return Err(Error::Config(format!("position jitter {} outside [0, {MAX_POSITION_JITTER}]", self.position_jitter)));
        }
        if !(0.0..=MAX_ROTATION_DEG).contains(&self.rotation_jitter_deg) {
            return Err(Error::Config(format!("rotation jitter {} outside [0, {MAX_ROTATION_DEG}]", self.rotation_jitter_deg)));
        }
        let (lo, hi) = self.background;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("background range ({lo}, {hi}) must satisfy 0 <= lo <= hi <= 1")));
        }
        Ok(())
    }
}

/// Generates the corpus, labels grouped by class in class order.
pub fn generate_corpus(spec: &SynthSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let labels: Vec<usize> = spec.counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
    let base = derive_seed(spec.seed, "synth");
    let images = labels
        .par_iter()
        .enumerate()
        .map(|(i, &class)| render(spec, class, mix64(base ^ i as u64)))
        .collect();
    let names = SPEED_CLASSES.iter().map(|s| s.to_string()).collect();
    LabeledDataset::new(images, labels, SPEED_CLASSES.len())?.with_class_names(names)
}

struct Placement {
    dx: f64,
    dy: f64,
    cos: f64,
    sin: f64,
    background: [f64; 3],
}

fn render(spec: &SynthSpec, class: usize, seed: u64) -> Image {
    let mut rng = rng_from_seed(seed);
    let jitter = |rng: &mut crate::seed::Rng, max: f64| if max > 0.0 { rng.random_range(-max..=max) } else { 0.0 };
    let dx = jitter(&mut rng, spec.position_jitter);
    let dy = jitter(&mut rng, spec.position_jitter);
    let theta = jitter(&mut rng, spec.rotation_jitter_deg).to_radians();
    let (lo, hi) = spec.background;
    let brightness = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.08..=0.08));
    let place = Placement {
        dx,
        dy,
        cos: theta.cos(),
        sin: theta.sin(),
        background: tint.map(|t| (brightness + t).clamp(0.0, 1.0)),
    };
    let strokes = glyph_strokes(SPEED_CLASSES[class]);

    let side = DEFAULT_SIDE;
    let centre = side as f64 / 2.0;
    let mut pixels = Vec::with_capacity(side * side * RGB);
    for y in 0..side {
        for x in 0..side {
            let mut acc = [0.0; 3];
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64 - centre - place.dx;
                    let py = y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64 - centre - place.dy;
                    // Inverse rotation into glyph coordinates.
                    let gx = place.cos * px + place.sin * py;
                    let gy = -place.sin * px + place.cos * py;
                    let c = shade(gx, gy, &strokes, &place.background);
                    for (a, v) in acc.iter_mut().zip(c) {
                        *a += v;
                    }
                }
            }
            let texture = rng.random_range(-0.03..=0.03);
            let n = (SUPERSAMPLE * SUPERSAMPLE) as f64;
            pixels.extend(acc.iter().map(|a| a / n + texture));
        }
    }
    Image::from_clamped(side, side, RGB, pixels).quantized()
}

fn shade(x: f64, y: f64, strokes: &[Stroke], background: &[f64; 3]) -> [f64; 3] {
    let r = x.hypot(y);
    if r >= RING_OUTER {
        *background
    } else if r >= RING_INNER {
        [0.85, 0.1, 0.12]
    } else if strokes.iter().any(|s| s.distance(x, y) <= STROKE_HALF) {
        [0.05, 0.05, 0.08]
    } else {
        [0.95, 0.95, 0.95]
    }
}

#[derive(Debug, Clone, Copy)]
struct Stroke {
    a: (f64, f64),
    b: (f64, f64),
}

impl Stroke {
    fn distance(&self, x: f64, y: f64) -> f64 {
        let (vx, vy) = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let (wx, wy) = (x - self.a.0, y - self.a.1);
        let t = ((wx * vx + wy * vy) / (vx * vx + vy * vy)).clamp(0.0, 1.0);
        (wx - t * vx).hypot(wy - t * vy)
    }
}

// Segments a..g in the usual order: top, upper right, lower right, bottom,
// lower left, upper left, middle.
fn segments(digit: char) -> &'static [usize] {
    match digit {
        '0' => &[0, 1, 2, 3, 4, 5],
        '1' => &[1, 2],
        '2' => &[0, 1, 6, 4, 3],
        '3' => &[0, 1, 6, 2, 3],
        '5' => &[0, 5, 6, 2, 3],
        '6' => &[0, 5, 6, 4, 2, 3],
        '7' => &[0, 1, 2],
        '8' => &[0, 1, 2, 3, 4, 5, 6],
        _ => unreachable!("no glyph for {digit}"),
    }
}

fn glyph_strokes(text: &str) -> Vec<Stroke> {
    let n = text.chars().count() as f64;
    let (width, gap) = if n > 2.0 { (3.6, 1.8) } else { (4.6, 3.0) };
    let total = n * width + (n - 1.0) * gap;
    let top = -DIGIT_HEIGHT / 2.0;
    let mid = 0.0;
    let bottom = DIGIT_HEIGHT / 2.0;
    let mut out = Vec::new();
    for (i, ch) in text.chars().enumerate() {
        let left = -total / 2.0 + i as f64 * (width + gap);
        let right = left + width;
        let seg = [
            ((left, top), (right, top)),
            ((right, top), (right, mid)),
            ((right, mid), (right, bottom)),
            ((left, bottom), (right, bottom)),
            ((left, mid), (left, bottom)),
            ((left, top), (left, mid)),
            ((left, mid), (right, mid)),
        ];
        out.extend(segments(ch).iter().map(|&s| Stroke { a: seg[s].0, b: seg[s].1 }));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::dataset_checksum;

    #[test]
    fn default_counts() {
        let spec = SynthSpec::default();
        assert_eq!(spec.counts, vec![72, 75, 45, 66, 63, 45, 45]);
        assert_eq!(spec.total(), 411);
        assert_eq!(SynthSpec::scaled(1, 0).total(), 4110);
    }

    #[test]
    fn deterministic_and_exact() {
        let spec = SynthSpec::default().with_counts(vec![2, 1, 1, 1, 1, 1, 3]);
        let a = generate_corpus(&spec).unwrap();
        let b = generate_corpus(&spec).unwrap();
        assert_eq!(dataset_checksum(&a).unwrap(), dataset_checksum(&b).unwrap());
        assert_eq!(a.class_counts(), spec.counts);
        assert_eq!(a.labels(), &[0, 0, 1, 2, 3, 4, 5, 6, 6, 6]);
        assert_eq!(a.class_names().unwrap()[5], "100");
        assert_eq!(a.shape().unwrap().unwrap().to_string(), "32x32x3");
        // values on the 8-bit lattice
        assert_eq!(a, a.quantized());

        let other = generate_corpus(&SynthSpec { seed: 9, ..spec }).unwrap();
        assert_ne!(dataset_checksum(&a).unwrap(), dataset_checksum(&other).unwrap());
    }

    #[test]
    fn rejects_bad_specs() {
        let zero = SynthSpec::default().with_counts(vec![1, 1, 0, 1, 1, 1, 1]);
        assert!(generate_corpus(&zero).unwrap_err().to_string().contains("count 0"));
        assert!(SynthSpec::default().with_counts(vec![1; 6]).validate().is_err());
        assert!(SynthSpec { position_jitter: 2.5, ..Default::default() }.validate().is_err());
        assert!(SynthSpec { rotation_jitter_deg: 11.0, ..Default::default() }.validate().is_err());
        assert!(SynthSpec { background: (0.7, 0.2), ..Default::default() }.validate().is_err());
    }

    #[test]
    fn glyph_layout() {
        let spec = SynthSpec { position_jitter: 0.0, rotation_jitter_deg: 0.0, ..Default::default() };
        let img = render(&spec, 4, 1);
        // white disc below the digits, dark middle bar of the 8
        assert!(img.get(16, 24, 0) > 0.85);
        assert!(img.get(12, 15, 0) < 0.5);
        // the ring is red, the far corner is background
        let ring = (img.get(16, 4, 0), img.get(16, 4, 1));
        assert!(ring.0 > 0.7 && ring.1 < 0.25, "{ring:?}");
        assert!(img.get(0, 0, 0) < 0.8);
    }
}
