//! Data preparation: a synthetic related-task generator, an IDX image
//! loader, PCA, digit-pair task extraction, and seeded node partitioning.
//! Everything here is a pure function of its inputs and seed.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{CoreError, LabeledDataset};

#[derive(Debug, Error)]
pub enum DatakitError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("relatedness must lie in [0,1], got {0}")]
    BadRelatedness(f64),
    #[error("noise_sigma must be non-negative, got {0}")]
    BadSigma(f64),
    #[error("{0} must be at least 1")]
    ZeroCount(&'static str),
    #[error("{path}: expected magic {expected:#010x}, found {got:#010x}")]
    WrongMagic { path: PathBuf, expected: u32, got: u32 },
    #[error("{path}: truncated, need {expected} bytes, found {got}")]
    Truncated { path: PathBuf, expected: usize, got: usize },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("positive and negative digits are both {0}")]
    SameDigit(u8),
    #[error("digit {0} is out of range 0..=9")]
    DigitOutOfRange(u8),
    #[error("digit {0} does not occur in the raw dataset")]
    DigitAbsent(u8),
    #[error("k = {k} exceeds data dimension {d}")]
    KTooLarge { k: usize, d: usize },
    #[error("need more than k = {k} samples, got {n}")]
    TooFewSamples { n: usize, k: usize },
    #[error("data has dimension {got}, model expects {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("power iteration failed to converge")]
    PowerIterationFailed,
    #[error("partition requests {requested} samples of class {label} but the pool has {available}")]
    Shortfall { label: i8, requested: usize, available: usize },
    #[error("partition entry {0} requests zero samples of both classes")]
    EmptyNodeRequest(usize),
}

/// Related binary tasks in R^p: each task separates Gaussian clouds at
/// ±u_t where u_t mixes a shared direction g with a private one, so
/// `relatedness` dials how much the tasks have in common.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub p: usize,
    pub tasks: usize,
    /// Fraction of the separator shared across tasks, in [0,1].
    pub relatedness: f64,
    pub noise_sigma: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DatakitError> {
        if !(0.0..=1.0).contains(&self.relatedness) || !self.relatedness.is_finite() {
            return Err(DatakitError::BadRelatedness(self.relatedness));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(DatakitError::BadSigma(self.noise_sigma));
        }
        for (name, v) in [
            ("p", self.p),
            ("tasks", self.tasks),
            ("train_per_class", self.train_per_class),
            ("test_per_class", self.test_per_class),
        ] {
            if v == 0 {
                return Err(DatakitError::ZeroCount(name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TaskData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

fn unit_normal(rng: &mut ChaCha20Rng, p: usize) -> Array1<f64> {
    loop {
        let v = Array1::from_iter((0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let norm = v.dot(&v).sqrt();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

fn draw_cloud(
    rng: &mut ChaCha20Rng,
    u: &Array1<f64>,
    sigma: f64,
    per_class: usize,
    task_id: usize,
) -> Result<LabeledDataset, DatakitError> {
    let p = u.len();
    let n = 2 * per_class;
    let mut x = Array2::zeros((n, p));
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let sign = if i < per_class { 1.0 } else { -1.0 };
        for j in 0..p {
            x[[i, j]] = sign * u[j] + sigma * rng.sample::<f64, _>(StandardNormal);
        }
        y[i] = sign;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut xs = Array2::zeros((n, p));
    let mut ys = Array1::zeros(n);
    for (row, &src) in order.iter().enumerate() {
        xs.row_mut(row).assign(&x.row(src));
        ys[row] = y[src];
    }
    Ok(LabeledDataset::new(xs, ys, task_id)?)
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Vec<TaskData>, DatakitError> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let g = unit_normal(&mut rng, spec.p);
    let rho = spec.relatedness;
    let mut out = Vec::with_capacity(spec.tasks);
    for t in 0..spec.tasks {
        let u = loop {
            let d = unit_normal(&mut rng, spec.p);
            let mixed = &g * rho + &d * (1.0 - rho);
            let norm = mixed.dot(&mixed).sqrt();
            if norm > 1e-12 {
                break mixed / norm;
            }
        };
        let train = draw_cloud(&mut rng, &u, spec.noise_sigma, spec.train_per_class, t)?;
        let test = draw_cloud(&mut rng, &u, spec.noise_sigma, spec.test_per_class, t)?;
        out.push(TaskData { train, test });
    }
    Ok(out)
}

/// Raw image set as parsed from an IDX pair: row-major pixels scaled to
/// [0,1], one u8 label per row.
#[derive(Debug, Clone)]
pub struct RawDataset {
    pub images: Array2<f64>,
    pub labels: Vec<u8>,
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_file(path: &Path) -> Result<Vec<u8>, DatakitError> {
    std::fs::read(path).map_err(|source| DatakitError::Io { path: path.to_path_buf(), source })
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, DatakitError> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(DatakitError::Truncated {
            path: path.to_path_buf(),
            expected: end,
            got: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<RawDataset, DatakitError> {
    let img_bytes = read_file(images_path)?;
    let magic = be_u32(&img_bytes, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DatakitError::WrongMagic {
            path: images_path.to_path_buf(),
            expected: IDX_IMAGES_MAGIC,
            got: magic,
        });
    }
    let count = be_u32(&img_bytes, 4, images_path)? as usize;
    let rows = be_u32(&img_bytes, 8, images_path)? as usize;
    let cols = be_u32(&img_bytes, 12, images_path)? as usize;
    let pixels = rows * cols;
    let expected = 16 + count * pixels;
    if img_bytes.len() < expected {
        return Err(DatakitError::Truncated {
            path: images_path.to_path_buf(),
            expected,
            got: img_bytes.len(),
        });
    }

    let lbl_bytes = read_file(labels_path)?;
    let magic = be_u32(&lbl_bytes, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DatakitError::WrongMagic {
            path: labels_path.to_path_buf(),
            expected: IDX_LABELS_MAGIC,
            got: magic,
        });
    }
    let lbl_count = be_u32(&lbl_bytes, 4, labels_path)? as usize;
    let lbl_expected = 8 + lbl_count;
    if lbl_bytes.len() < lbl_expected {
        return Err(DatakitError::Truncated {
            path: labels_path.to_path_buf(),
            expected: lbl_expected,
            got: lbl_bytes.len(),
        });
    }
    if count != lbl_count {
        return Err(DatakitError::CountMismatch { images: count, labels: lbl_count });
    }

    let mut images = Array2::zeros((count, pixels));
    for i in 0..count {
        let base = 16 + i * pixels;
        for j in 0..pixels {
            images[[i, j]] = img_bytes[base + j] as f64 / 255.0;
        }
    }
    let labels = lbl_bytes[8..8 + lbl_count].to_vec();
    Ok(RawDataset { images, labels })
}

#[derive(Debug, Clone)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    /// k × D, orthonormal rows; each row's largest-magnitude entry is
    /// positive so fits are reproducible up to machine precision.
    pub components: Array2<f64>,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.nrows()
    }
}

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 10_000;
const POWER_RESTARTS: usize = 4;

fn fix_sign(v: &mut Array1<f64>) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.mapv_inplace(|x| -x);
    }
}

/// Leading eigenvector of the symmetric matrix `s` by power iteration;
/// near-zero matrices (fully deflated directions) report eigenvalue 0.
fn leading_eigenvector(
    s: &Array2<f64>,
    rng: &mut ChaCha20Rng,
) -> Result<(f64, Array1<f64>), DatakitError> {
    let d = s.nrows();
    let scale = s.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if scale < 1e-14 {
        return Ok((0.0, Array1::zeros(d))); // caller replaces with any orthonormal fill
    }
    let mut start: Array1<f64> = Array1::zeros(d);
    start[0] = 1.0;
    for _ in 0..POWER_RESTARTS {
        let mut v = start.clone();
        let norm = v.dot(&v).sqrt();
        if norm > 0.0 {
            v /= norm;
        }
        for _ in 0..POWER_MAX_ITERS {
            let mut next = s.dot(&v);
            let norm = next.dot(&next).sqrt();
            if norm < 1e-14 * scale {
                // start vector lives in the kernel; restart randomized
                break;
            }
            next /= norm;
            let align = next.dot(&v).abs();
            v = next;
            if 1.0 - align < POWER_TOL {
                let lambda = v.dot(&s.dot(&v));
                return Ok((lambda, v));
            }
        }
        start = unit_normal(rng, d);
    }
    Err(DatakitError::PowerIterationFailed)
}

/// Fill for a zero-variance direction: any unit vector orthogonal to the
/// rows already extracted.
fn orthonormal_fill(components: &[Array1<f64>], d: usize) -> Array1<f64> {
    for axis in 0..d {
        let mut v: Array1<f64> = Array1::zeros(d);
        v[axis] = 1.0;
        for c in components {
            let proj = v.dot(c);
            v.scaled_add(-proj, c);
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-8 {
            return v / norm;
        }
    }
    unreachable!("fewer than d components extracted, some axis must remain independent");
}

pub fn pca_fit(data: &Array2<f64>, k: usize) -> Result<PcaModel, DatakitError> {
    let (n, d) = data.dim();
    if k == 0 {
        return Err(DatakitError::ZeroCount("k"));
    }
    if k > d {
        return Err(DatakitError::KTooLarge { k, d });
    }
    if n <= k {
        return Err(DatakitError::TooFewSamples { n, k });
    }
    let mean = data.mean_axis(ndarray::Axis(0)).expect("n > 0");
    let centered = data - &mean.view().insert_axis(ndarray::Axis(0));
    let mut cov = centered.t().dot(&centered) / (n as f64 - 1.0);

    let mut rng = ChaCha20Rng::seed_from_u64(0x5ca1_ab1e);
    let mut rows: Vec<Array1<f64>> = Vec::with_capacity(k);
    for _ in 0..k {
        let (lambda, mut v) = leading_eigenvector(&cov, &mut rng)?;
        if lambda.abs() < 1e-14 || v.dot(&v) < 0.5 {
            v = orthonormal_fill(&rows, d);
        } else {
            // re-orthogonalize against earlier rows to stop drift
            for c in &rows {
                let proj = v.dot(c);
                v.scaled_add(-proj, c);
            }
            let norm = v.dot(&v).sqrt();
            if norm < 1e-8 {
                v = orthonormal_fill(&rows, d);
            } else {
                v /= norm;
            }
        }
        fix_sign(&mut v);
        let lambda = v.dot(&cov.dot(&v));
        for i in 0..d {
            for j in 0..d {
                cov[[i, j]] -= lambda * v[i] * v[j];
            }
        }
        rows.push(v);
    }

    let mut components = Array2::zeros((k, d));
    for (i, row) in rows.iter().enumerate() {
        components.row_mut(i).assign(row);
    }
    Ok(PcaModel { mean, components })
}

pub fn pca_transform(model: &PcaModel, data: &Array2<f64>) -> Result<Array2<f64>, DatakitError> {
    if data.ncols() != model.mean.len() {
        return Err(DatakitError::DimMismatch {
            expected: model.mean.len(),
            got: data.ncols(),
        });
    }
    let centered = data - &model.mean.view().insert_axis(ndarray::Axis(0));
    Ok(centered.dot(&model.components.t()))
}

/// Extract a binary task from raw digit data: `digit_pos` → +1,
/// `digit_neg` → −1, everything else dropped.
pub fn make_task(
    raw: &RawDataset,
    digit_pos: u8,
    digit_neg: u8,
    task_id: usize,
) -> Result<LabeledDataset, DatakitError> {
    if digit_pos == digit_neg {
        return Err(DatakitError::SameDigit(digit_pos));
    }
    for d in [digit_pos, digit_neg] {
        if d > 9 {
            return Err(DatakitError::DigitOutOfRange(d));
        }
        if !raw.labels.contains(&d) {
            return Err(DatakitError::DigitAbsent(d));
        }
    }
    let keep: Vec<usize> = raw
        .labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == digit_pos || l == digit_neg)
        .map(|(i, _)| i)
        .collect();
    let mut x = Array2::zeros((keep.len(), raw.images.ncols()));
    let mut y = Array1::zeros(keep.len());
    for (row, &src) in keep.iter().enumerate() {
        x.row_mut(row).assign(&raw.images.row(src));
        y[row] = if raw.labels[src] == digit_pos { 1.0 } else { -1.0 };
    }
    Ok(LabeledDataset::new(x, y, task_id)?)
}

/// Per-node class quotas drawn without replacement from one task's pool.
#[derive(Debug, Clone)]
pub struct PartitionPlan {
    /// (positives, negatives) requested for each node, by node index.
    pub per_node: Vec<(usize, usize)>,
    pub seed: u64,
}

pub fn partition(
    dataset: &LabeledDataset,
    plan: &PartitionPlan,
) -> Result<Vec<LabeledDataset>, DatakitError> {
    let mut pos: Vec<usize> = Vec::new();
    let mut neg: Vec<usize> = Vec::new();
    for (i, &y) in dataset.labels.iter().enumerate() {
        if y > 0.0 {
            pos.push(i);
        } else {
            neg.push(i);
        }
    }
    let want_pos: usize = plan.per_node.iter().map(|&(p, _)| p).sum();
    let want_neg: usize = plan.per_node.iter().map(|&(_, n)| n).sum();
    if want_pos > pos.len() {
        return Err(DatakitError::Shortfall {
            label: 1,
            requested: want_pos,
            available: pos.len(),
        });
    }
    if want_neg > neg.len() {
        return Err(DatakitError::Shortfall {
            label: -1,
            requested: want_neg,
            available: neg.len(),
        });
    }
    if let Some(node) = plan.per_node.iter().position(|&(p, n)| p == 0 && n == 0) {
        return Err(DatakitError::EmptyNodeRequest(node));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(plan.seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    let p_dim = dataset.dim();
    let mut out = Vec::with_capacity(plan.per_node.len());
    let (mut pi, mut ni) = (0usize, 0usize);
    for &(np, nn) in &plan.per_node {
        let mut x = Array2::zeros((np + nn, p_dim));
        let mut y = Array1::zeros(np + nn);
        for r in 0..np {
            let src = pos[pi + r];
            x.row_mut(r).assign(&dataset.features.row(src));
            y[r] = dataset.labels[src];
        }
        for r in 0..nn {
            let src = neg[ni + r];
            x.row_mut(np + r).assign(&dataset.features.row(src));
            y[np + r] = dataset.labels[src];
        }
        pi += np;
        ni += nn;
        out.push(LabeledDataset::new(x, y, dataset.task_id)?);
    }
    Ok(out)
}
