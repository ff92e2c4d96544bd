//! Datasets in, result files out: synthetic tasks, whitening, IDX ingestion,
//! CSV tables and JSON manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DataBatch;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SyntheticKind {
    /// `Y = W X + noise` with `W` a random `d_h x d_0` matrix of the given rank.
    LinearTeacher { rank: usize },
    /// Isotropic Gaussian clusters, one per class, one-hot labels (`d_h = classes`).
    GaussianBlobs { classes: usize, sigma: f64 },
    /// The single sample `{x -> y}`.
    ScalarPair { x: f64, y: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub d0: usize,
    pub dh: usize,
    pub n: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub whiten: bool,
}

impl SyntheticSpec {
    pub fn scalar_pair(x: f64, y: f64) -> Self {
        Self { kind: SyntheticKind::ScalarPair { x, y }, d0: 1, dh: 1, n: 1, noise_sigma: 0.0, seed: 0, whiten: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d0 == 0 || self.dh == 0 || self.n == 0 {
            return Err(Error::config("data", "d0, dh and n must be positive"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::config("data.noise_sigma", "must be non-negative"));
        }
        match self.kind {
            SyntheticKind::LinearTeacher { rank } if rank > self.d0.min(self.dh) => {
                return Err(Error::config("data.kind.rank", "cannot exceed min(d0, dh)"));
            }
            SyntheticKind::GaussianBlobs { classes, sigma } => {
                if classes < 2 || classes != self.dh {
                    return Err(Error::config("data.kind.classes", "need at least two classes and dh = classes"));
                }
                if !(sigma >= 0.0) {
                    return Err(Error::config("data.kind.sigma", "must be non-negative"));
                }
            }
            SyntheticKind::ScalarPair { .. } if (self.d0, self.dh, self.n) != (1, 1, 1) => {
                return Err(Error::config("data", "scalar_pair has d0 = dh = n = 1"));
            }
            _ => {}
        }
        if self.whiten && self.n < self.d0 {
            return Err(Error::config("data.n", "whitening needs n >= d0"));
        }
        Ok(())
    }
}

fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal) * scale)
}

pub fn make_synthetic(spec: &SyntheticSpec) -> Result<DataBatch> {
    Ok(make_synthetic_with_teacher(spec)?.0)
}

/// Like [`make_synthetic`], also returning the generating matrix for linear
/// teachers.
pub fn make_synthetic_with_teacher(spec: &SyntheticSpec) -> Result<(DataBatch, Option<DMatrix<f64>>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.kind {
        SyntheticKind::ScalarPair { x, y } => Ok((DataBatch::scalar_pair(x, y), None)),
        SyntheticKind::LinearTeacher { rank } => {
            let mut x = gaussian_matrix(&mut rng, spec.d0, spec.n, 1.0);
            if spec.whiten {
                x = whiten(&x)?;
            }
            let teacher = gaussian_matrix(&mut rng, spec.dh, rank, 1.0) * gaussian_matrix(&mut rng, rank, spec.d0, 1.0);
            let noise = gaussian_matrix(&mut rng, spec.dh, spec.n, spec.noise_sigma);
            let y = &teacher * &x + noise;
            Ok((DataBatch::new(x, y)?, Some(teacher)))
        }
        SyntheticKind::GaussianBlobs { classes, sigma } => {
            let centers = gaussian_matrix(&mut rng, spec.d0, classes, 1.0);
            let mut x = DMatrix::zeros(spec.d0, spec.n);
            let mut y = DMatrix::zeros(classes, spec.n);
            for j in 0..spec.n {
                let c = j % classes;
                for i in 0..spec.d0 {
                    x[(i, j)] = centers[(i, c)] + sigma * rng.sample::<f64, _>(StandardNormal);
                }
                y[(c, j)] = 1.0;
            }
            if spec.whiten {
                x = whiten(&x)?;
            }
            Ok((DataBatch::new(x, y)?, None))
        }
    }
}

/// Replaces `X` by `Q^T` from the thin QR factorization `X^T = QR` (with
/// `diag(R) > 0`), so that `XX^T = I` and the row space is unchanged.
pub fn whiten(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() < x.nrows() {
        return Err(Error::config("data.n", "whitening needs at least as many samples as input dimensions"));
    }
    let qr = x.transpose().qr();
    let r = qr.r();
    let mut q = qr.q();
    for k in 0..r.nrows() {
        if r[(k, k)] == 0.0 {
            return Err(Error::RankDeficient { ratio: 0.0 });
        }
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    Ok(q.transpose())
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let size = self.rows * self.cols;
        &self.pixels[i * size..(i + 1) * size]
    }
}

fn read_be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]])).ok_or_else(|| Error::IdxTruncated {
        path: path.to_path_buf(),
        needed: at + 4,
        available: bytes.len(),
    })
}

fn check_payload(bytes: &[u8], header: usize, payload: usize, path: &Path) -> Result<()> {
    let needed = header + payload;
    if bytes.len() < needed {
        return Err(Error::IdxTruncated { path: path.to_path_buf(), needed, available: bytes.len() });
    }
    if bytes.len() > needed {
        return Err(Error::DimensionMismatch(format!(
            "{}: {} trailing bytes after the declared payload",
            path.display(),
            bytes.len() - needed
        )));
    }
    Ok(())
}

/// Big-endian header `magic, count, rows, cols` followed by raw pixels.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<IdxImages> {
    let magic = read_be_u32(bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::IdxBadMagic { path: path.to_path_buf(), found: magic, expected: IDX_IMAGES_MAGIC });
    }
    let count = read_be_u32(bytes, 4, path)? as usize;
    let rows = read_be_u32(bytes, 8, path)? as usize;
    let cols = read_be_u32(bytes, 12, path)? as usize;
    check_payload(bytes, 16, count * rows * cols, path)?;
    Ok(IdxImages { count, rows, cols, pixels: bytes[16..].to_vec() })
}

/// Big-endian header `magic, count` followed by one byte per label.
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = read_be_u32(bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::IdxBadMagic { path: path.to_path_buf(), found: magic, expected: IDX_LABELS_MAGIC });
    }
    let count = read_be_u32(bytes, 4, path)? as usize;
    check_payload(bytes, 8, count, path)?;
    Ok(bytes[8..].to_vec())
}

/// Serializes images in IDX layout (used to build fixtures).
pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IDX_IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdxDataset {
    pub images: IdxImages,
    pub labels: Vec<u8>,
    pub images_path: PathBuf,
    pub labels_path: PathBuf,
}

impl IdxDataset {
    pub fn open(images_path: &Path, labels_path: &Path) -> Result<Self> {
        let images_bytes = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
        let labels_bytes = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
        let images = parse_idx_images(&images_bytes, images_path)?;
        let labels = parse_idx_labels(&labels_bytes, labels_path)?;
        if images.count != labels.len() {
            return Err(Error::IdxCountMismatch { images: images.count, labels: labels.len() });
        }
        Ok(Self { images, labels, images_path: images_path.to_path_buf(), labels_path: labels_path.to_path_buf() })
    }
}

/// Target encoding for class labels; both produce `|keep_labels|` outputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelEncoding {
    #[default]
    OneHot,
    /// One-hot mapped to `{-1, +1}`.
    Signed,
}

/// Keeps samples whose label is in `keep_labels` (at most `max_per_class`
/// each, in file order), flattens images to columns scaled by 1/255 and
/// encodes labels by their position in the sorted `keep_labels`.
pub fn select_idx(
    dataset: &IdxDataset,
    keep_labels: &[u8],
    max_per_class: usize,
    encoding: LabelEncoding,
) -> Result<DataBatch> {
    let mut classes: Vec<u8> = keep_labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut taken: BTreeMap<u8, usize> = BTreeMap::new();
    let mut chosen = Vec::new();
    for (i, &label) in dataset.labels.iter().enumerate() {
        if let Ok(class) = classes.binary_search(&label) {
            let count = taken.entry(label).or_default();
            if *count < max_per_class {
                *count += 1;
                chosen.push((i, class));
            }
        }
    }
    if chosen.is_empty() {
        return Err(Error::EmptyFilter);
    }
    let d0 = dataset.images.rows * dataset.images.cols;
    let (off, on) = match encoding {
        LabelEncoding::OneHot => (0.0, 1.0),
        LabelEncoding::Signed => (-1.0, 1.0),
    };
    let mut x = DMatrix::zeros(d0, chosen.len());
    let mut y = DMatrix::from_element(classes.len(), chosen.len(), off);
    for (j, &(i, class)) in chosen.iter().enumerate() {
        for (k, &p) in dataset.images.image(i).iter().enumerate() {
            x[(k, j)] = p as f64 / 255.0;
        }
        y[(class, j)] = on;
    }
    DataBatch::new(x, y)
}

pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    keep_labels: &[u8],
    max_per_class: usize,
    encoding: LabelEncoding,
) -> Result<DataBatch> {
    select_idx(&IdxDataset::open(images_path, labels_path)?, keep_labels, max_per_class, encoding)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format_float(*v),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

pub fn write_csv(table: &Table, path: &Path) -> Result<()> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path).map_err(csv_err)?;
    w.write_record(&table.header).map_err(csv_err)?;
    for row in &table.rows {
        w.write_record(row.iter().map(Cell::render)).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a CSV written by [`write_csv`]: header plus rows of strings.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()))
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err)?;
    Ok((header, rows))
}

/// Run metadata written next to every output set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: serde_json::Value,
    pub seed: u64,
    pub arch: serde_json::Value,
    pub data: serde_json::Value,
    pub run_cfg: serde_json::Value,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: serde_json::Value, seed: u64) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            command,
            seed,
            arch: serde_json::Value::Null,
            data: serde_json::Value::Null,
            run_cfg: serde_json::Value::Null,
            outputs: Vec::new(),
        }
    }
}

pub fn write_manifest<T: Serialize>(doc: &T, path: &Path) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(doc).map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<serde_json::Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_pair_data() {
        let d = make_synthetic(&SyntheticSpec::scalar_pair(1.0, 1.0)).unwrap();
        assert_eq!(d.x[(0, 0)], 1.0);
        assert_eq!(d.y[(0, 0)], 1.0);
    }

    fn teacher_spec(whiten: bool) -> SyntheticSpec {
        SyntheticSpec {
            kind: SyntheticKind::LinearTeacher { rank: 2 },
            d0: 3,
            dh: 2,
            n: 10,
            noise_sigma: 0.0,
            seed: 4,
            whiten,
        }
    }

    #[test]
    fn whitening_is_exact_and_idempotent() {
        let d = make_synthetic(&teacher_spec(true)).unwrap();
        let gram = &d.x * d.x.transpose();
        assert!((gram - DMatrix::identity(3, 3)).norm() < 1e-10);
        let again = whiten(&d.x).unwrap();
        assert!((again - &d.x).norm() < 1e-12);
    }

    #[test]
    fn whitening_needs_enough_samples() {
        let mut spec = teacher_spec(true);
        spec.n = 2;
        assert!(make_synthetic(&spec).is_err());
    }

    #[test]
    fn noiseless_teacher_is_recovered() {
        let (d, teacher) = make_synthetic_with_teacher(&teacher_spec(false)).unwrap();
        let w = crate::landscape::global_minimizer(&d).unwrap();
        assert!((w - teacher.unwrap()).norm() < 1e-8);
    }

    #[test]
    fn blobs_are_one_hot() {
        let spec = SyntheticSpec {
            kind: SyntheticKind::GaussianBlobs { classes: 2, sigma: 0.3 },
            d0: 4,
            dh: 2,
            n: 8,
            noise_sigma: 0.0,
            seed: 1,
            whiten: false,
        };
        let d = make_synthetic(&spec).unwrap();
        for j in 0..8 {
            assert_relative_eq!(d.y.column(j).sum(), 1.0);
        }
        assert_eq!(make_synthetic(&spec).unwrap(), d);
    }

    #[test]
    fn float_round_trips_through_text() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(format_float(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = encode_idx_labels(&[1, 2]);
        bytes[3] = 0x03;
        let err = parse_idx_labels(&bytes, Path::new("l")).unwrap_err();
        assert!(matches!(err, Error::IdxBadMagic { found: 0x803, .. }));
        let err = parse_idx_images(&encode_idx_labels(&[1]), Path::new("i")).unwrap_err();
        assert!(matches!(err, Error::IdxBadMagic { found: 0x801, .. }));
    }

    #[test]
    fn truncated_idx_is_rejected() {
        let imgs = IdxImages { count: 2, rows: 2, cols: 2, pixels: vec![7; 8] };
        let bytes = encode_idx_images(&imgs);
        assert_eq!(parse_idx_images(&bytes, Path::new("i")).unwrap(), imgs);
        let err = parse_idx_images(&bytes[..bytes.len() - 1], Path::new("i")).unwrap_err();
        assert!(matches!(err, Error::IdxTruncated { needed: 24, available: 23, .. }));
        let err = parse_idx_images(&bytes[..10], Path::new("i")).unwrap_err();
        assert!(matches!(err, Error::IdxTruncated { .. }));
    }
}
