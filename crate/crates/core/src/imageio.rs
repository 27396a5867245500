//! Image and dataset representations plus their on-disk formats.
//!
//! Pixels live in memory as `f64` values in `[0, 1]`, row-major and
//! channel-interleaved. Conversion to and from 8-bit is `v / 255` and
//! `clamp(round(v * 255), 0, 255)`.
//!
//! Packed dataset layout (`.mfd`, little-endian):
//!
//! ```text
//! "MFD1" | u32 count | u16 width | u16 height | u8 channels | u8 0 | u32 crc32(records)
//! count x ( u16 label | width*height*channels bytes )
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const DEFAULT_SIDE: usize = 32;
pub const RGB: usize = 3;

const PACKED_MAGIC: &[u8; 4] = b"MFD1";
pub const PACKED_HEADER_LEN: usize = 18;

/// Row-major, channel-interleaved image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        let expected = width * height * channels;
        if pixels.len() != expected {
            return Err(Error::Dimension {
                expected: format!("{expected} values for {width}x{height}x{channels}"),
                found: format!("{} values", pixels.len()),
            });
        }
        if let Some((i, v)) = pixels.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!("pixel value {v} at index {i} outside [0, 1]")));
        }
        Ok(Self { width, height, channels, pixels })
    }

    /// Image filled with a single value per channel.
    pub fn filled(width: usize, height: usize, color: &[f64]) -> Result<Self> {
        let pixels = (0..width * height).flat_map(|_| color.iter().copied()).collect();
        Self::new(width, height, color.len(), pixels)
    }

    /// Builds an image from values the caller guarantees are in range,
    /// clamping away floating point overshoot.
    pub(crate) fn from_clamped(width: usize, height: usize, channels: usize, mut pixels: Vec<f64>) -> Self {
        debug_assert_eq!(pixels.len(), width * height * channels);
        for v in &mut pixels {
            *v = v.clamp(0.0, 1.0);
        }
        Self { width, height, channels, pixels }
    }

    pub fn from_bytes(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        let pixels = bytes.iter().map(|&b| f64::from(b) / 255.0).collect();
        Self::new(width, height, channels, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> Shape {
        Shape { width: self.width, height: self.height, channels: self.channels }
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// 8-bit quantization of every channel value.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| quantize(v)).collect()
    }

    /// The image as it would read back from an 8-bit file.
    pub fn quantized(&self) -> Image {
        let pixels = self.pixels.iter().map(|&v| f64::from(quantize(v)) / 255.0).collect();
        Image { pixels, ..*self }
    }

    pub fn mean(&self) -> f64 {
        if self.pixels.is_empty() {
            return 0.0;
        }
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Shape {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(width: usize, height: usize, channels: usize) -> Self {
        Self { width, height, channels }
    }

    pub fn len(&self) -> usize {
        self.width * self.height * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.width, self.height, self.channels)
    }
}

pub fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Images with integer class labels in `[0, classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Vec<Image>,
    labels: Vec<usize>,
    class_names: Option<Vec<String>>,
    classes: usize,
}

impl LabeledDataset {
    pub fn new(images: Vec<Image>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Dimension {
                expected: format!("{} labels", images.len()),
                found: format!("{} labels", labels.len()),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelRange { label, classes });
        }
        Ok(Self { images, labels, class_names: None, classes })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.classes {
            return Err(Error::Config(format!(
                "{} class names given for {} classes",
                names.len(),
                self.classes
            )));
        }
        self.class_names = Some(names);
        Ok(self)
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Shape shared by every image, or `None` for an empty dataset.
    pub fn shape(&self) -> Result<Option<Shape>> {
        let Some(first) = self.images.first() else { return Ok(None) };
        let shape = first.shape();
        for (i, img) in self.images.iter().enumerate() {
            if img.shape() != shape {
                return Err(Error::Dimension {
                    expected: shape.to_string(),
                    found: format!("{} at image {i}", img.shape()),
                });
            }
        }
        Ok(Some(shape))
    }

    /// Rejects datasets whose images do not all have the given shape.
    pub fn ensure_shape(&self, expected: Shape) -> Result<()> {
        for (i, img) in self.images.iter().enumerate() {
            if img.shape() != expected {
                return Err(Error::Dimension {
                    expected: expected.to_string(),
                    found: format!("{} at image {i}", img.shape()),
                });
            }
        }
        Ok(())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Every image replaced by its 8-bit quantization.
    pub fn quantized(&self) -> LabeledDataset {
        LabeledDataset {
            images: self.images.iter().map(Image::quantized).collect(),
            ..self.clone()
        }
    }

    pub fn into_parts(self) -> (Vec<Image>, Vec<usize>) {
        (self.images, self.labels)
    }
}

// ---------------------------------------------------------------------------
// PPM

pub fn read_ppm(bytes: &[u8]) -> Result<Image> {
    let mut cursor = HeaderCursor { bytes, pos: 0 };
    let magic = cursor.token()?;
    if magic != "P6" {
        return Err(Error::format(0, format!("expected magic P6, found {magic:?}")));
    }
    let width = cursor.number("width")?;
    let height = cursor.number("height")?;
    cursor.skip_space();
    let maxval_offset = cursor.pos;
    let maxval = cursor.number("maxval")?;
    if maxval != 255 {
        return Err(Error::format(maxval_offset, format!("maxval {maxval} unsupported, expected 255")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    match bytes.get(cursor.pos) {
        Some(b) if b.is_ascii_whitespace() => cursor.pos += 1,
        _ => return Err(Error::format(cursor.pos, "missing whitespace after maxval")),
    }
    let start = cursor.pos;
    let needed = width * height * RGB;
    let payload = &bytes[start..];
    if payload.len() < needed {
        return Err(Error::format(
            start + payload.len(),
            format!("truncated pixel payload: need {needed} bytes, have {}", payload.len()),
        ));
    }
    Image::from_bytes(width, height, RGB, &payload[..needed])
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<String> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(start, "unexpected end of header"));
        }
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        let tok = self.token()?;
        tok.parse().map_err(|_| Error::format(start, format!("invalid {what} {tok:?}")))
    }
}

pub fn write_ppm(image: &Image) -> Result<Vec<u8>> {
    if image.channels() != RGB {
        return Err(Error::Dimension {
            expected: "3 channels".into(),
            found: format!("{} channels", image.channels()),
        });
    }
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.to_bytes());
    Ok(out)
}

// ---------------------------------------------------------------------------
// Packed datasets

pub fn write_packed(dataset: &LabeledDataset) -> Result<Vec<u8>> {
    let shape = dataset.shape()?.unwrap_or(Shape::new(0, 0, 0));
    let too_big = |what: &str| Error::Config(format!("{what} does not fit the packed header"));
    let width = u16::try_from(shape.width).map_err(|_| too_big("width"))?;
    let height = u16::try_from(shape.height).map_err(|_| too_big("height"))?;
    let channels = u8::try_from(shape.channels).map_err(|_| too_big("channels"))?;
    let count = u32::try_from(dataset.len()).map_err(|_| too_big("image count"))?;

    let mut records = Vec::with_capacity(dataset.len() * (2 + shape.len()));
    for (img, &label) in dataset.images().iter().zip(dataset.labels()) {
        let label = u16::try_from(label).map_err(|_| too_big("label"))?;
        records.extend_from_slice(&label.to_le_bytes());
        records.extend(img.to_bytes());
    }

    let mut out = Vec::with_capacity(PACKED_HEADER_LEN + records.len());
    out.extend_from_slice(PACKED_MAGIC);
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&width.to_le_bytes());
    out.extend_from_slice(&height.to_le_bytes());
    out.push(channels);
    out.push(0);
    out.extend_from_slice(&crc32fast::hash(&records).to_le_bytes());
    out.extend(records);
    Ok(out)
}

/// CRC32 stored in a packed file header, without validating the rest.
pub fn packed_checksum(bytes: &[u8]) -> Result<u32> {
    if bytes.len() < PACKED_HEADER_LEN || &bytes[..4] != PACKED_MAGIC {
        return Err(Error::format(0, "not a packed dataset"));
    }
    Ok(u32::from_le_bytes(bytes[14..18].try_into().unwrap()))
}

/// Reads a packed dataset. The format does not record the class count:
/// when `classes` is `None` it is taken as one more than the largest label.
pub fn read_packed(bytes: &[u8], classes: Option<usize>) -> Result<LabeledDataset> {
    if bytes.len() < PACKED_HEADER_LEN {
        return Err(Error::format(bytes.len(), "truncated header"));
    }
    if &bytes[..4] != PACKED_MAGIC {
        return Err(Error::format(0, format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4]))));
    }
    let le16 = |at: usize| usize::from(u16::from_le_bytes([bytes[at], bytes[at + 1]]));
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let width = le16(8);
    let height = le16(10);
    let channels = usize::from(bytes[12]);
    if bytes[13] != 0 {
        return Err(Error::format(13, "reserved byte must be zero"));
    }
    let expected_crc = u32::from_le_bytes(bytes[14..18].try_into().unwrap());

    let record_len = 2 + width * height * channels;
    let records = &bytes[PACKED_HEADER_LEN..];
    if records.len() != count * record_len {
        return Err(Error::format(
            PACKED_HEADER_LEN,
            format!(
                "size mismatch: {count} records of {record_len} bytes need {}, found {}",
                count * record_len,
                records.len()
            ),
        ));
    }
    let actual_crc = crc32fast::hash(records);
    if actual_crc != expected_crc {
        return Err(Error::Checksum { expected: expected_crc, actual: actual_crc });
    }

    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for rec in records.chunks_exact(record_len) {
        labels.push(usize::from(u16::from_le_bytes([rec[0], rec[1]])));
        images.push(Image::from_bytes(width, height, channels, &rec[2..])?);
    }
    let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    LabeledDataset::new(images, labels, classes)
}

pub fn save_packed(path: &Path, dataset: &LabeledDataset) -> Result<()> {
    let bytes = write_packed(dataset)?;
    fs::write(path, bytes).map_err(|e| Error::file(path, e))
}

pub fn load_packed(path: &Path, classes: Option<usize>) -> Result<LabeledDataset> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    read_packed(&bytes, classes)
}

// ---------------------------------------------------------------------------
// Manifests

/// A CSV listing of `path,label` rows relative to a base directory.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub base_dir: PathBuf,
    pub entries: Vec<(PathBuf, usize)>,
}

#[derive(serde::Deserialize, serde::Serialize)]
struct ManifestRow {
    path: String,
    label: String,
}

impl DatasetManifest {
    pub fn read(path: &Path, classes: usize) -> Result<Self> {
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        for (row_no, row) in reader.deserialize::<ManifestRow>().enumerate() {
            let line = row_no + 2;
            let row = row.map_err(|e| Error::Manifest(format!("line {line}: {e}")))?;
            let label: usize = row
                .label
                .trim()
                .parse()
                .map_err(|_| Error::Manifest(format!("line {line}: cannot parse label {:?}", row.label)))?;
            if label >= classes {
                return Err(Error::LabelRange { label, classes });
            }
            if !seen.insert(row.path.clone()) {
                return Err(Error::Manifest(format!("line {line}: duplicate path {}", row.path)));
            }
            entries.push((PathBuf::from(row.path), label));
        }
        Ok(Self { base_dir, entries })
    }

    pub fn load(&self, classes: usize) -> Result<LabeledDataset> {
        let mut images = Vec::with_capacity(self.entries.len());
        let mut labels = Vec::with_capacity(self.entries.len());
        for (rel, label) in &self.entries {
            let full = self.base_dir.join(rel);
            let bytes = fs::read(&full).map_err(|e| Error::file(&full, e))?;
            images.push(read_ppm(&bytes).map_err(|e| Error::Manifest(format!("{}: {e}", full.display())))?);
            labels.push(*label);
        }
        let dataset = LabeledDataset::new(images, labels, classes)?;
        dataset.shape()?;
        Ok(dataset)
    }
}

pub fn load_manifest(path: &Path, classes: usize) -> Result<LabeledDataset> {
    DatasetManifest::read(path, classes)?.load(classes)
}

/// Writes every image as `img_NNNNN.ppm` under `dir` plus `dir/manifest.csv`.
pub fn write_manifest_dir(dir: &Path, dataset: &LabeledDataset) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let manifest_path = dir.join("manifest.csv");
    let mut writer = csv::Writer::from_path(&manifest_path)
        .map_err(|e| Error::Manifest(format!("{}: {e}", manifest_path.display())))?;
    for (i, (img, label)) in dataset.images().iter().zip(dataset.labels()).enumerate() {
        let name = format!("img_{i:05}.ppm");
        let path = dir.join(&name);
        fs::write(&path, write_ppm(img)?).map_err(|e| Error::file(&path, e))?;
        writer
            .serialize(ManifestRow { path: name, label: label.to_string() })
            .map_err(|e| Error::Manifest(e.to_string()))?;
    }
    writer.flush()?;
    Ok(manifest_path)
}
