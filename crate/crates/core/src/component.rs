//! The ML component under monitoring, behind [`InferenceProvider`].
//!
//! Two providers ship here: [`BuiltinProvider`] wrapping a trained
//! [`Model`], and [`ExternalProvider`] which drives a child process over
//! line-delimited JSON on its standard streams:
//!
//! ```text
//! child  -> parent  {"type":"hello","classes":<k>,"name":"<id>"}
//! parent -> child   {"id":<u64>,"width":<w>,"height":<h>,"pixels":"<base64 RGB bytes>"}
//! child  -> parent  {"id":<u64>,"probs":[<k reals>]}
//! ```
//!
//! Responses may arrive in any order but each id exactly once. Closing the
//! child's standard input asks it to exit.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::{Image, LabeledDataset, Shape, RGB};
use crate::nn::{argmax, Model};

pub const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(10);
pub const SHUTDOWN_TIMEOUT: Duration = Duration::from_secs(5);
pub const RESPONSE_TIMEOUT: Duration = Duration::from_secs(60);

/// Probability sums further than this from 1 are rejected; closer ones are
/// re-normalized.
pub const EXTERNAL_SUM_TOLERANCE: f64 = 1e-3;

pub trait InferenceProvider {
    fn classes(&self) -> usize;

    /// Input shape, when the provider knows it.
    fn input_shape(&self) -> Option<Shape>;

    /// One probability row per image.
    fn predict_proba(&mut self, images: &[Image]) -> Result<Vec<Vec<f64>>>;
}

pub struct BuiltinProvider {
    model: Model,
}

impl BuiltinProvider {
    pub fn new(model: Model) -> Self {
        Self { model }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }
}

impl InferenceProvider for BuiltinProvider {
    fn classes(&self) -> usize {
        self.model.classes()
    }

    fn input_shape(&self) -> Option<Shape> {
        Some(self.model.input_shape())
    }

    fn predict_proba(&mut self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        let model = &self.model;
        images.par_iter().map(|img| model.predict(img)).collect()
    }
}

/// Adapts a closure into a provider; handy for in-process fakes.
pub struct FnProvider<F> {
    classes: usize,
    f: F,
}

impl<F> FnProvider<F>
where
    F: FnMut(&Image) -> Result<Vec<f64>>,
{
    pub fn new(classes: usize, f: F) -> Self {
        Self { classes, f }
    }
}

impl<F> InferenceProvider for FnProvider<F>
where
    F: FnMut(&Image) -> Result<Vec<f64>>,
{
    fn classes(&self) -> usize {
        self.classes
    }

    fn input_shape(&self) -> Option<Shape> {
        None
    }

    fn predict_proba(&mut self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        images.iter().map(|img| (self.f)(img)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub count: usize,
}

impl Accuracy {
    pub fn value(&self) -> f64 {
        self.correct as f64 / self.count as f64
    }
}

const EVAL_CHUNK: usize = 256;

/// Predicted class (argmax, lowest index on ties) for every image.
pub fn predict_classes(provider: &mut dyn InferenceProvider, images: &[Image]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_CHUNK) {
        let rows = provider.predict_proba(chunk)?;
        if rows.len() != chunk.len() {
            return Err(Error::Provider(format!("{} rows returned for {} images", rows.len(), chunk.len())));
        }
        out.extend(rows.iter().map(|r| argmax(r)));
    }
    Ok(out)
}

pub fn evaluate_accuracy(provider: &mut dyn InferenceProvider, dataset: &LabeledDataset) -> Result<Accuracy> {
    if dataset.is_empty() {
        return Err(Error::Config("cannot evaluate accuracy on an empty dataset".into()));
    }
    if provider.classes() != dataset.classes() {
        return Err(Error::Config(format!(
            "provider predicts {} classes but the dataset has {}",
            provider.classes(),
            dataset.classes()
        )));
    }
    if let Some(shape) = provider.input_shape() {
        dataset.ensure_shape(shape)?;
    }
    let predicted = predict_classes(provider, dataset.images())?;
    let correct = predicted.iter().zip(dataset.labels()).filter(|(p, l)| p == l).count();
    Ok(Accuracy { correct, count: dataset.len() })
}

// ---------------------------------------------------------------------------
// Wire messages

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    #[serde(rename = "type")]
    pub kind: String,
    pub classes: usize,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub width: usize,
    pub height: usize,
    pub pixels: String,
}

impl Request {
    pub fn encode(id: u64, image: &Image) -> Result<Self> {
        if image.channels() != RGB {
            return Err(Error::Dimension { expected: "3 channels".into(), found: format!("{} channels", image.channels()) });
        }
        Ok(Self { id, width: image.width(), height: image.height(), pixels: BASE64.encode(image.to_bytes()) })
    }

    pub fn decode_image(&self) -> Result<Image> {
        let bytes = BASE64
            .decode(&self.pixels)
            .map_err(|e| Error::Protocol { message: format!("bad base64 in request {}: {e}", self.id), line: self.pixels.clone() })?;
        Image::from_bytes(self.width, self.height, RGB, &bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    pub probs: Vec<f64>,
}

/// Validates an external probability row, re-normalizing near-misses.
pub fn normalize_probs(probs: &[f64], classes: usize) -> std::result::Result<Vec<f64>, String> {
    if probs.len() != classes {
        return Err(format!("expected {classes} probabilities, got {}", probs.len()));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err("probabilities must be finite and non-negative".into());
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > EXTERNAL_SUM_TOLERANCE {
        return Err(format!("probabilities sum to {sum}"));
    }
    Ok(probs.iter().map(|p| p / sum).collect())
}

// ---------------------------------------------------------------------------
// Parent side

pub struct ExternalProvider {
    command: Vec<String>,
    name: String,
    classes: usize,
    child: Option<Child>,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    response_timeout: Duration,
}

impl ExternalProvider {
    /// Launches `command` and waits for its hello line. When
    /// `expected_classes` is given, a different advertised class count is an
    /// error.
    pub fn spawn(command: &[String], expected_classes: Option<usize>) -> Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::Provider("empty external command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Provider(format!("cannot spawn {program:?}: {e}")))?;
        let stdout = child.stdout.take().expect("stdout piped");
        let stdin = child.stdin.take();

        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });

        let mut provider = Self {
            command: command.to_vec(),
            name: String::new(),
            classes: 0,
            child: Some(child),
            stdin,
            lines: rx,
            next_id: 0,
            response_timeout: RESPONSE_TIMEOUT,
        };
        let line = provider.next_line(HANDSHAKE_TIMEOUT, "handshake")?;
        let hello: Hello = serde_json::from_str(&line)
            .map_err(|e| Error::Protocol { message: format!("malformed hello: {e}"), line: line.clone() })?;
        if hello.kind != "hello" || hello.classes < 2 {
            return Err(Error::Protocol { message: "expected a hello message with at least 2 classes".into(), line });
        }
        if let Some(k) = expected_classes {
            if k != hello.classes {
                return Err(Error::Provider(format!(
                    "{:?} reports {} classes, corpus has {k}",
                    provider.command[0], hello.classes
                )));
            }
        }
        provider.classes = hello.classes;
        provider.name = hello.name;
        Ok(provider)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn set_response_timeout(&mut self, timeout: Duration) {
        self.response_timeout = timeout;
    }

    fn next_line(&mut self, timeout: Duration, what: &str) -> Result<String> {
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(Error::Provider(format!("reading from {:?}: {e}", self.command[0]))),
            Err(RecvTimeoutError::Timeout) => {
                Err(Error::Provider(format!("{what} timed out after {timeout:?} waiting on {:?}", self.command[0])))
            }
            Err(RecvTimeoutError::Disconnected) => {
                let status = self.child.as_mut().and_then(|c| c.wait().ok());
                Err(Error::Provider(format!(
                    "{:?} closed its output during {what} (exit status: {})",
                    self.command[0],
                    status.map_or("unknown".to_string(), |s| s.to_string())
                )))
            }
        }
    }

    /// Closes the child's input and reaps it, killing it after the
    /// shutdown timeout.
    pub fn shutdown(&mut self) -> Result<()> {
        drop(self.stdin.take());
        let Some(mut child) = self.child.take() else { return Ok(()) };
        let deadline = Instant::now() + SHUTDOWN_TIMEOUT;
        loop {
            if child.try_wait()?.is_some() {
                return Ok(());
            }
            if Instant::now() >= deadline {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::Provider(format!("{:?} did not exit within {SHUTDOWN_TIMEOUT:?}", self.command[0])));
            }
            thread::sleep(Duration::from_millis(10));
        }
    }
}

impl Drop for ExternalProvider {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}

impl InferenceProvider for ExternalProvider {
    fn classes(&self) -> usize {
        self.classes
    }

    fn input_shape(&self) -> Option<Shape> {
        None
    }

    fn predict_proba(&mut self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        let first_id = self.next_id;
        {
            let stdin = self
                .stdin
                .as_mut()
                .ok_or_else(|| Error::Provider("external provider already shut down".into()))?;
            for (i, img) in images.iter().enumerate() {
                let req = Request::encode(first_id + i as u64, img)?;
                let mut line = serde_json::to_string(&req)?;
                line.push('\n');
                stdin
                    .write_all(line.as_bytes())
                    .map_err(|e| Error::Provider(format!("writing request {}: {e}", req.id)))?;
            }
            stdin.flush().map_err(|e| Error::Provider(format!("flushing requests: {e}")))?;
        }
        self.next_id += images.len() as u64;

        let mut answers: HashMap<u64, Vec<f64>> = HashMap::with_capacity(images.len());
        while answers.len() < images.len() {
            let line = self.next_line(self.response_timeout, "inference")?;
            let resp: Response = serde_json::from_str(&line)
                .map_err(|e| Error::Protocol { message: format!("malformed response: {e}"), line: line.clone() })?;
            if resp.id < first_id || resp.id >= self.next_id {
                return Err(Error::Protocol { message: format!("unexpected response id {}", resp.id), line });
            }
            let probs = normalize_probs(&resp.probs, self.classes).map_err(|message| Error::Protocol { message, line: line.clone() })?;
            if answers.insert(resp.id, probs).is_some() {
                return Err(Error::Protocol { message: format!("duplicate response id {}", resp.id), line });
            }
        }
        Ok((first_id..self.next_id).map(|id| answers.remove(&id).unwrap()).collect())
    }
}

// ---------------------------------------------------------------------------
// Child side

/// Serves the protocol over the given streams until input ends. Any
/// malformed request aborts with a protocol error.
pub fn serve<R, W, F>(input: R, mut output: W, name: &str, classes: usize, mut predict: F) -> Result<usize>
where
    R: BufRead,
    W: Write,
    F: FnMut(&Image) -> Result<Vec<f64>>,
{
    let hello = Hello { kind: "hello".into(), classes, name: name.into() };
    writeln!(output, "{}", serde_json::to_string(&hello)?)?;
    output.flush()?;
    let mut served = 0;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let req: Request = serde_json::from_str(&line)
            .map_err(|e| Error::Protocol { message: format!("malformed request: {e}"), line: line.clone() })?;
        let image = req.decode_image()?;
        let probs = predict(&image)?;
        writeln!(output, "{}", serde_json::to_string(&Response { id: req.id, probs })?)?;
        output.flush()?;
        served += 1;
    }
    Ok(served)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Architecture;

    fn sh(script: &str) -> Vec<String> {
        vec!["sh".into(), "-c".into(), script.into()]
    }

    #[test]
    fn zero_weight_builtin_is_uniform() {
        let arch = Architecture::default_cnn(Shape::new(8, 8, 3), 4);
        let mut p = BuiltinProvider::new(Model::zeros(arch).unwrap());
        let img = Image::filled(8, 8, &[0.3, 0.5, 0.7]).unwrap();
        for row in p.predict_proba(&[img.clone(), img]).unwrap() {
            assert_eq!(row.len(), 4);
            for v in row {
                assert!((v - 0.25).abs() < 1e-15);
            }
        }
    }

    fn table_shaped(counts: &[usize]) -> LabeledDataset {
        let img = Image::filled(2, 2, &[0.5; 3]).unwrap();
        let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat(c).take(n)).collect();
        LabeledDataset::new(vec![img; labels.len()], labels, counts.len()).unwrap()
    }

    #[test]
    fn constant_provider_accuracy_is_class_share() {
        let data = table_shaped(&[720, 750, 450, 660, 630, 450, 450]);
        let mut always_zero = FnProvider::new(7, |_| Ok(vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]));
        let acc = evaluate_accuracy(&mut always_zero, &data).unwrap();
        assert_eq!((acc.correct, acc.count), (720, 4110));
        assert_eq!(acc.value(), 720.0 / 4110.0);
    }

    #[test]
    fn accuracy_errors() {
        let data = table_shaped(&[1, 1]);
        let mut wrong_k = FnProvider::new(3, |_| Ok(vec![1.0, 0.0, 0.0]));
        assert!(evaluate_accuracy(&mut wrong_k, &data).is_err());
        let empty = LabeledDataset::new(vec![], vec![], 2).unwrap();
        let mut p = FnProvider::new(2, |_| Ok(vec![1.0, 0.0]));
        assert!(evaluate_accuracy(&mut p, &empty).is_err());
    }

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize_probs(&[0.5, 0.5], 2).unwrap(), vec![0.5, 0.5]);
        let n = normalize_probs(&[0.5, 0.5004], 2).unwrap();
        assert!((n.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(normalize_probs(&[0.5, 0.6], 2).is_err());
        assert!(normalize_probs(&[1.0], 2).is_err());
        assert!(normalize_probs(&[1.5, -0.5], 2).is_err());
    }

    #[test]
    fn serve_round_trip_in_memory() {
        let img = Image::from_bytes(2, 1, 3, &[10, 20, 30, 40, 50, 60]).unwrap();
        let req = serde_json::to_string(&Request::encode(9, &img).unwrap()).unwrap();
        let input = format!("{req}\n");
        let mut out = Vec::new();
        let served = serve(input.as_bytes(), &mut out, "echo", 3, |im| {
            assert_eq!(im, &img);
            Ok(vec![1.0, 0.0, 0.0])
        })
        .unwrap();
        assert_eq!(served, 1);
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().contains(r#""type":"hello""#));
        let resp: Response = serde_json::from_str(lines.next().unwrap()).unwrap();
        assert_eq!(resp, Response { id: 9, probs: vec![1.0, 0.0, 0.0] });
    }

    #[test]
    fn serve_rejects_malformed_request() {
        let mut out = Vec::new();
        let err = serve("not json\n".as_bytes(), &mut out, "x", 2, |_| Ok(vec![0.5, 0.5])).unwrap_err();
        assert!(matches!(err, Error::Protocol { .. }));
    }

    #[test]
    fn spawn_failure_names_command() {
        let err = ExternalProvider::spawn(&["definitely-not-a-command-xyz".into()], None).err().unwrap();
        assert!(err.to_string().contains("definitely-not-a-command-xyz"), "{err}");
    }

    #[test]
    fn one_hot_stub_over_shell() {
        // Answers every request with a one-hot on class 0.
        let script = r#"echo '{"type":"hello","classes":3,"name":"stub"}'
while read -r line; do
  id=$(echo "$line" | sed 's/^{"id":\([0-9]*\).*/\1/')
  echo "{\"id\":$id,\"probs\":[1,0,0]}"
done"#;
        let mut p = ExternalProvider::spawn(&sh(script), Some(3)).unwrap();
        assert_eq!(p.classes(), 3);
        assert_eq!(p.name(), "stub");
        let img = Image::filled(2, 2, &[0.1, 0.2, 0.3]).unwrap();
        let rows = p.predict_proba(&[img.clone(), img.clone(), img]).unwrap();
        assert_eq!(rows, vec![vec![1.0, 0.0, 0.0]; 3]);
        p.shutdown().unwrap();
    }

    #[test]
    fn class_count_mismatch_and_malformed_lines() {
        let hello7 = r#"echo '{"type":"hello","classes":7,"name":"s"}'; cat > /dev/null"#;
        assert!(ExternalProvider::spawn(&sh(hello7), Some(5)).is_err());

        let garbage = r#"echo 'hello there'; cat > /dev/null"#;
        let err = ExternalProvider::spawn(&sh(garbage), None).err().unwrap();
        assert!(err.to_string().contains("hello there"), "{err}");

        let bad_reply = r#"echo '{"type":"hello","classes":2,"name":"s"}'; read -r l; echo 'oops'; cat > /dev/null"#;
        let mut p = ExternalProvider::spawn(&sh(bad_reply), None).unwrap();
        let err = p.predict_proba(&[Image::filled(1, 1, &[0.0; 3]).unwrap()]).unwrap_err();
        assert!(matches!(&err, Error::Protocol { line, .. } if line == "oops"), "{err}");
    }

    #[test]
    fn dead_child_is_a_provider_error() {
        let dies = r#"echo '{"type":"hello","classes":2,"name":"s"}'; exit 3"#;
        let mut p = ExternalProvider::spawn(&sh(dies), None).unwrap();
        thread::sleep(Duration::from_millis(50));
        let err = p.predict_proba(&[Image::filled(1, 1, &[0.0; 3]).unwrap()]).unwrap_err();
        assert!(matches!(err, Error::Provider(_)), "{err}");
    }
}
