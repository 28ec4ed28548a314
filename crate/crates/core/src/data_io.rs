//! Dataset ingestion, synthetic datasets and the feature cache.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extractors::{Extractor, Feature, FeatureError};
use crate::imagekit::{Image, ImageError};
use crate::sampling::{Purpose, RngStream};

/// Bytes per CIFAR-10 record: one label byte plus 32×32×3 planar pixels.
pub const CIFAR10_RECORD_LEN: usize = 1 + CIFAR10_PIXELS;
const CIFAR10_SIDE: usize = 32;
const CIFAR10_PIXELS: usize = CIFAR10_SIDE * CIFAR10_SIDE * 3;
const CIFAR10_FILES: [&str; 6] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
    "test_batch.bin",
];

pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: length {len} is not a multiple of {CIFAR10_RECORD_LEN}-byte records")]
    BadRecordLength { path: PathBuf, len: u64 },
    #[error("no dataset files found at {0}")]
    FileMissing(PathBuf),
    #[error("requested {requested} images but only {available} are available")]
    NotEnoughImages { requested: usize, available: usize },
    #[error("dataset must contain at least one image")]
    EmptyDataset,
    #[error("cannot decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("{path} is {got:?} but earlier images are {expected:?}")]
    MixedDimensions { path: PathBuf, expected: (usize, usize, usize), got: (usize, usize, usize) },
    #[error("{0}: lossy formats are not accepted")]
    LossyFormat(PathBuf),
    #[error("invalid synthesis parameters: {0}")]
    InvalidParams(String),
    #[error("cache was written for extractor {found}, expected {expected}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("cache at {0} does not list the dataset's image ids")]
    CacheIdMismatch(PathBuf),
    #[error("malformed cache line {line}: {reason}")]
    MalformedCache { line: usize, reason: String },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Cifar10Binary,
    ImageDir,
    Synthetic,
}

/// A loaded set of same-shape images with stable ids.
#[derive(Debug, Clone)]
pub struct DatasetHandle {
    pub kind: DatasetKind,
    /// Root path or generator description.
    pub source: String,
    pub ids: Vec<String>,
    pub images: Vec<Image>,
}

impl DatasetHandle {
    fn new(kind: DatasetKind, source: String, ids: Vec<String>, images: Vec<Image>) -> Result<Self, DataError> {
        let first = images.first().ok_or(DataError::EmptyDataset)?;
        let dims = (first.height(), first.width(), first.channels());
        if let Some((i, img)) =
            images.iter().enumerate().find(|(_, img)| (img.height(), img.width(), img.channels()) != dims)
        {
            return Err(DataError::MixedDimensions {
                path: PathBuf::from(&ids[i]),
                expected: dims,
                got: (img.height(), img.width(), img.channels()),
            });
        }
        Ok(Self { kind, source, ids, images })
    }

    pub fn count(&self) -> usize {
        self.images.len()
    }

    /// `(height, width, channels)` shared by every image.
    pub fn dims(&self) -> (usize, usize, usize) {
        let img = &self.images[0];
        (img.height(), img.width(), img.channels())
    }
}

fn sample_indices(total: usize, n: usize, stream: RngStream) -> Result<Vec<usize>, DataError> {
    if n == 0 {
        return Err(DataError::EmptyDataset);
    }
    if n > total {
        return Err(DataError::NotEnoughImages { requested: n, available: total });
    }
    let mut picked = index::sample(&mut stream.rng(), total, n).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Encodes one record: label byte followed by the R, G and B planes.
pub fn encode_cifar10_record(label: u8, img: &Image) -> Result<Vec<u8>, DataError> {
    if (img.height(), img.width(), img.channels()) != (CIFAR10_SIDE, CIFAR10_SIDE, 3) {
        return Err(DataError::InvalidParams("CIFAR-10 records are 32x32x3".into()));
    }
    let mut out = Vec::with_capacity(CIFAR10_RECORD_LEN);
    out.push(label);
    for c in 0..3 {
        out.extend(img.pixels().chunks_exact(3).map(|px| px[c]));
    }
    Ok(out)
}

/// Decodes the pixel part of a record into a channel-interleaved image.
pub fn decode_cifar10_record(record: &[u8]) -> Result<(u8, Image), DataError> {
    if record.len() != CIFAR10_RECORD_LEN {
        return Err(DataError::BadRecordLength { path: PathBuf::new(), len: record.len() as u64 });
    }
    let planes = &record[1..];
    let plane = CIFAR10_SIDE * CIFAR10_SIDE;
    let mut pixels = Vec::with_capacity(CIFAR10_PIXELS);
    for i in 0..plane {
        pixels.extend([planes[i], planes[plane + i], planes[2 * plane + i]]);
    }
    Ok((record[0], Image::new(CIFAR10_SIDE, CIFAR10_SIDE, 3, pixels)?))
}

/// Writes labelled images as one CIFAR-10 binary batch file.
pub fn write_cifar10_batch(path: &Path, records: &[(u8, Image)]) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    for (label, img) in records {
        w.write_all(&encode_cifar10_record(*label, img)?)?;
    }
    w.flush()?;
    Ok(())
}

fn cifar10_files(root: &Path) -> Result<Vec<PathBuf>, DataError> {
    if root.is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let files: Vec<PathBuf> = CIFAR10_FILES.iter().map(|f| root.join(f)).filter(|p| p.is_file()).collect();
    if files.is_empty() {
        return Err(DataError::FileMissing(root.to_path_buf()));
    }
    Ok(files)
}

/// Samples `n` images without replacement from CIFAR-10 binary batches under `root`
/// (a directory holding the standard batch files, or a single batch file).
pub fn load_cifar10(root: &Path, n: usize, stream: RngStream) -> Result<DatasetHandle, DataError> {
    let files = cifar10_files(root)?;
    let mut offsets = Vec::with_capacity(files.len());
    let mut total = 0usize;
    for path in &files {
        let len = fs::metadata(path)?.len();
        if len == 0 || len % CIFAR10_RECORD_LEN as u64 != 0 {
            return Err(DataError::BadRecordLength { path: path.clone(), len });
        }
        offsets.push(total);
        total += (len / CIFAR10_RECORD_LEN as u64) as usize;
    }
    let picked = sample_indices(total, n, stream)?;
    let mut ids = Vec::with_capacity(n);
    let mut images = Vec::with_capacity(n);
    let mut next = picked.iter().peekable();
    for (f, path) in files.iter().enumerate() {
        let start = offsets[f];
        let end = offsets.get(f + 1).copied().unwrap_or(total);
        if next.peek().is_none_or(|&&i| i >= end) {
            continue;
        }
        let bytes = fs::read(path)?;
        while let Some(&&i) = next.peek() {
            if i >= end {
                break;
            }
            let local = i - start;
            let record = &bytes[local * CIFAR10_RECORD_LEN..(local + 1) * CIFAR10_RECORD_LEN];
            let (_, img) = decode_cifar10_record(record)?;
            let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            ids.push(format!("cifar10:{name}:{local}"));
            images.push(img);
            next.next();
        }
    }
    DatasetHandle::new(DatasetKind::Cifar10Binary, root.display().to_string(), ids, images)
}

fn extension(path: &Path) -> Option<String> {
    path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase())
}

/// Decodes a lossless 8-bit RGB or grayscale image without altering pixel values.
pub fn read_image(path: &Path) -> Result<Image, DataError> {
    let decode_err = |reason: String| DataError::Decode { path: path.to_path_buf(), reason };
    if matches!(extension(path).as_deref(), Some("jpg" | "jpeg")) {
        return Err(DataError::LossyFormat(path.to_path_buf()));
    }
    let dynamic =
        image::ImageReader::open(path)?.with_guessed_format()?.decode().map_err(|e| decode_err(e.to_string()))?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    match dynamic {
        image::DynamicImage::ImageRgb8(buf) => Ok(Image::new(h, w, 3, buf.into_raw())?),
        image::DynamicImage::ImageLuma8(buf) => Ok(Image::new(h, w, 1, buf.into_raw())?),
        other => Err(decode_err(format!("unsupported pixel layout {:?}", other.color()))),
    }
}

/// Writes an image as PNG or binary PPM/PGM depending on the extension.
pub fn write_image(path: &Path, img: &Image) -> Result<(), DataError> {
    let color = if img.channels() == 3 { image::ExtendedColorType::Rgb8 } else { image::ExtendedColorType::L8 };
    image::save_buffer(path, img.pixels(), img.width() as u32, img.height() as u32, color)
        .map_err(|e| DataError::Decode { path: path.to_path_buf(), reason: e.to_string() })
}

/// Samples `n` PNG/PPM/PGM files from `root` (sorted by name before sampling).
pub fn load_image_dir(root: &Path, n: usize, stream: RngStream) -> Result<DatasetHandle, DataError> {
    if !root.is_dir() {
        return Err(DataError::FileMissing(root.to_path_buf()));
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(root)? {
        let path = entry?.path();
        match extension(&path).as_deref() {
            Some("png" | "ppm" | "pgm" | "pnm") => files.push(path),
            Some("jpg" | "jpeg") => return Err(DataError::LossyFormat(path)),
            _ => {}
        }
    }
    if files.is_empty() {
        return Err(DataError::FileMissing(root.to_path_buf()));
    }
    files.sort();
    let picked = sample_indices(files.len(), n, stream)?;
    let mut ids = Vec::with_capacity(n);
    let mut images = Vec::with_capacity(n);
    for i in picked {
        images.push(read_image(&files[i])?);
        ids.push(files[i].display().to_string());
    }
    DatasetHandle::new(DatasetKind::ImageDir, root.display().to_string(), ids, images)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Distinct quantization-bin centres plus Gaussian pixel noise.
    GridGaussian,
    /// Independent uniform pixels.
    RandomTexture,
    /// Photo-like stand-in: a colour-gradient background with a few flat
    /// rectangles and ellipses, plus Gaussian pixel noise.
    PiecewiseSmooth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    /// Pixel noise std in normalized `[0, 1]` units (scaled by 255).
    pub sigma: f64,
    pub bin_size: u32,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self { sigma: 0.02, bin_size: 50 }
    }
}

/// Generates `n` images of shape `dims`; image `i` draws from its own stream.
pub fn synthesize(
    kind: SynthKind,
    dims: (usize, usize, usize),
    n: usize,
    params: SynthParams,
    master_seed: u64,
) -> Result<DatasetHandle, DataError> {
    let (h, w, c) = dims;
    let len = h * w * c;
    Image::new(h, w, c, vec![0; len])?;
    if n == 0 {
        return Err(DataError::EmptyDataset);
    }
    let mut images = Vec::with_capacity(n);
    match kind {
        SynthKind::RandomTexture => {
            for i in 0..n {
                let mut rng = RngStream::for_purpose(master_seed, Purpose::Dataset, i as u64).rng();
                let px: Vec<u8> = (0..len).map(|_| rng.random()).collect();
                images.push(Image::new(h, w, c, px)?);
            }
        }
        SynthKind::PiecewiseSmooth => {
            if !(params.sigma >= 0.0 && params.sigma.is_finite()) {
                return Err(DataError::InvalidParams("sigma must be >= 0".into()));
            }
            for i in 0..n {
                let mut rng = RngStream::for_purpose(master_seed, Purpose::Dataset, i as u64).rng();
                images.push(piecewise_smooth(h, w, c, params.sigma, &mut rng)?);
            }
        }
        SynthKind::GridGaussian => {
            if !(params.sigma >= 0.0 && params.sigma.is_finite()) {
                return Err(DataError::InvalidParams("sigma must be >= 0".into()));
            }
            let bin = params.bin_size as usize;
            let levels = 256usize.checked_div(bin).unwrap_or(0);
            if levels < 2 && n > 1 {
                return Err(DataError::InvalidParams("bin_size leaves fewer than two full bins".into()));
            }
            let mut seen = HashSet::with_capacity(n);
            for i in 0..n {
                let mut rng = RngStream::for_purpose(master_seed, Purpose::Dataset, i as u64).rng();
                let centre = loop {
                    let candidate: Vec<u8> = (0..len).map(|_| rng.random_range(0..levels) as u8).collect();
                    if seen.insert(candidate.clone()) {
                        break candidate;
                    }
                };
                let noise = 255.0 * params.sigma;
                let px = centre
                    .iter()
                    .map(|&level| {
                        let mid = (level as usize * bin + bin / 2) as f64;
                        let z: f64 = rng.sample(StandardNormal);
                        (mid + noise * z).round().clamp(0.0, 255.0) as u8
                    })
                    .collect();
                images.push(Image::new(h, w, c, px)?);
            }
        }
    }
    let ids = (0..n).map(|i| format!("synthetic:{i}")).collect();
    let source = serde_json::json!({ "kind": kind, "params": params, "seed": master_seed }).to_string();
    DatasetHandle::new(DatasetKind::Synthetic, source, ids, images)
}

fn piecewise_smooth<R: Rng>(h: usize, w: usize, c: usize, sigma: f64, rng: &mut R) -> Result<Image, DataError> {
    let colour = |rng: &mut R| -> Vec<f64> { (0..c).map(|_| rng.random_range(0.0..=255.0)).collect() };
    let (from, to) = (colour(rng), colour(rng));
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let span = dx.abs() * w as f64 + dy.abs() * h as f64;
    let offset = dx.min(0.0) * w as f64 + dy.min(0.0) * h as f64;
    let mut canvas = vec![0.0f64; h * w * c];
    for r in 0..h {
        for col in 0..w {
            let t = ((dx * col as f64 + dy * r as f64 - offset) / span).clamp(0.0, 1.0);
            for ch in 0..c {
                canvas[(r * w + col) * c + ch] = from[ch] + t * (to[ch] - from[ch]);
            }
        }
    }
    for _ in 0..rng.random_range(2..=6) {
        let fill = colour(rng);
        let (r0, r1) = {
            let (a, b) = (rng.random_range(0..h), rng.random_range(0..h));
            (a.min(b), a.max(b))
        };
        let (c0, c1) = {
            let (a, b) = (rng.random_range(0..w), rng.random_range(0..w));
            (a.min(b), a.max(b))
        };
        let ellipse = rng.random_bool(0.5);
        let (cy, cx) = ((r0 + r1) as f64 / 2.0, (c0 + c1) as f64 / 2.0);
        let (ry, rx) = (((r1 - r0) as f64 / 2.0).max(0.5), ((c1 - c0) as f64 / 2.0).max(0.5));
        for r in r0..=r1 {
            for col in c0..=c1 {
                let (u, v) = ((r as f64 - cy) / ry, (col as f64 - cx) / rx);
                if ellipse && u * u + v * v > 1.0 {
                    continue;
                }
                canvas[(r * w + col) * c..(r * w + col + 1) * c].copy_from_slice(&fill);
            }
        }
    }
    let noise = 255.0 * sigma;
    let px = canvas
        .into_iter()
        .map(|v| {
            let z: f64 = rng.sample(StandardNormal);
            (v + noise * z).round().clamp(0.0, 255.0) as u8
        })
        .collect();
    Ok(Image::new(h, w, c, px)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheHeader {
    extractor_fingerprint: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    id: String,
    feature: Feature,
}

/// JSON-lines feature cache keyed by an extractor fingerprint.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCache {
    pub path: PathBuf,
    pub fingerprint: String,
    pub records: Vec<(String, Feature)>,
}

impl FeatureCache {
    /// Writes to a temporary file beside `path` and renames it into place.
    pub fn write(path: &Path, fingerprint: &str, records: Vec<(String, Feature)>) -> Result<Self, DataError> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let tmp = tempfile::NamedTempFile::new_in(dir)?;
        {
            let mut w = BufWriter::new(tmp.as_file());
            let header = CacheHeader { extractor_fingerprint: fingerprint.to_owned(), version: CACHE_VERSION };
            serde_json::to_writer(&mut w, &header).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
            for (id, feature) in &records {
                let rec = CacheRecord { id: id.clone(), feature: feature.clone() };
                serde_json::to_writer(&mut w, &rec).map_err(std::io::Error::from)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        tmp.persist(path).map_err(|e| e.error)?;
        Ok(Self { path: path.to_path_buf(), fingerprint: fingerprint.to_owned(), records })
    }

    pub fn load(path: &Path, expected_fingerprint: &str) -> Result<Self, DataError> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let header_line = lines.next().ok_or(DataError::MalformedCache { line: 1, reason: "empty file".into() })??;
        let header: CacheHeader = serde_json::from_str(&header_line)
            .map_err(|e| DataError::MalformedCache { line: 1, reason: e.to_string() })?;
        if header.extractor_fingerprint != expected_fingerprint {
            return Err(DataError::FingerprintMismatch {
                expected: expected_fingerprint.to_owned(),
                found: header.extractor_fingerprint,
            });
        }
        if header.version != CACHE_VERSION {
            return Err(DataError::MalformedCache { line: 1, reason: format!("unknown version {}", header.version) });
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let rec: CacheRecord = serde_json::from_str(&line)
                .map_err(|e| DataError::MalformedCache { line: i + 2, reason: e.to_string() })?;
            records.push((rec.id, rec.feature));
        }
        Ok(Self { path: path.to_path_buf(), fingerprint: header.extractor_fingerprint, records })
    }

    pub fn get(&self, id: &str) -> Option<&Feature> {
        self.records.iter().find(|(k, _)| k == id).map(|(_, f)| f)
    }

    pub fn features(&self) -> impl Iterator<Item = &Feature> {
        self.records.iter().map(|(_, f)| f)
    }
}

/// Extracts every image of the dataset in parallel, preserving order.
pub fn extract_all(handle: &DatasetHandle, extractor: &Extractor) -> Result<Vec<Feature>, FeatureError> {
    handle.images.par_iter().map(|img| extractor.extract_image(img)).collect()
}

/// Loads the cache at `path` when it matches the extractor, otherwise extracts and writes it.
pub fn cache_features(handle: &DatasetHandle, extractor: &Extractor, path: &Path) -> Result<FeatureCache, DataError> {
    let fingerprint = extractor.config().fingerprint();
    if path.exists() {
        let cache = FeatureCache::load(path, &fingerprint)?;
        if cache.records.len() != handle.ids.len()
            || cache.records.iter().zip(&handle.ids).any(|((id, _), want)| id != want)
        {
            return Err(DataError::CacheIdMismatch(path.to_path_buf()));
        }
        return Ok(cache);
    }
    let features = extract_all(handle, extractor)?;
    FeatureCache::write(path, &fingerprint, handle.ids.iter().cloned().zip(features).collect())
}
