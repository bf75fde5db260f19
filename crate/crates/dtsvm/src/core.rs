//! Shared domain types: datasets, the stacked decision vector, structured
//! selector operators, and hyperparameters.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dataset must contain at least one sample")]
    EmptyDataset,
    #[error("label at index {0} is {1}, expected -1 or +1")]
    BadLabel(usize, f64),
    #[error("feature matrix has {rows} rows but {labels} labels")]
    ShapeMismatch { rows: usize, labels: usize },
    #[error("non-finite feature at sample {0}")]
    NonFiniteFeature(usize),
    #[error("decision vector length {0} is not of the form 2(p+1)")]
    BadDecisionLength(usize),
    #[error("{name} must be strictly positive, got {value}")]
    NonPositiveHyper { name: &'static str, value: f64 },
}

/// Binary-labeled samples for one task. Labels are exactly -1 or +1.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub features: Array2<f64>,
    pub labels: Array1<f64>,
    pub task_id: usize,
}

impl LabeledDataset {
    pub fn new(
        features: Array2<f64>,
        labels: Array1<f64>,
        task_id: usize,
    ) -> Result<Self, CoreError> {
        if features.nrows() == 0 {
            return Err(CoreError::EmptyDataset);
        }
        if features.nrows() != labels.len() {
            return Err(CoreError::ShapeMismatch {
                rows: features.nrows(),
                labels: labels.len(),
            });
        }
        for (i, &y) in labels.iter().enumerate() {
            if y != 1.0 && y != -1.0 {
                return Err(CoreError::BadLabel(i, y));
            }
        }
        for (i, row) in features.rows().into_iter().enumerate() {
            if row.iter().any(|x| !x.is_finite()) {
                return Err(CoreError::NonFiniteFeature(i));
            }
        }
        Ok(Self { features, labels, task_id })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

/// A dataset with the all-ones column appended: rows are [x', 1].
/// The diagonal label matrix is stored as the label vector itself.
#[derive(Debug, Clone)]
pub struct AugmentedTask {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
}

impl AugmentedTask {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Feature dimension before augmentation.
    pub fn p(&self) -> usize {
        self.x.ncols() - 1
    }
}

pub fn augment(dataset: &LabeledDataset) -> AugmentedTask {
    let n = dataset.len();
    let mut x = Array2::ones((n, dataset.dim() + 1));
    x.slice_mut(ndarray::s![.., ..dataset.dim()])
        .assign(&dataset.features);
    AugmentedTask { x, y: dataset.labels.clone() }
}

/// The per-(node, task) decision vector, laid out as
/// `[w0(0..p), b0, w(0..p), b]`, total length `2(p+1)`.
///
/// `w0, b0` are the components shared across tasks; `w, b` are the
/// task-specific corrections. The effective classifier is their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedDecision {
    data: Array1<f64>,
}

impl StackedDecision {
    pub fn zeros(p: usize) -> Self {
        Self { data: Array1::zeros(2 * (p + 1)) }
    }

    pub fn from_array(data: Array1<f64>) -> Result<Self, CoreError> {
        if data.len() < 4 || data.len() % 2 != 0 {
            return Err(CoreError::BadDecisionLength(data.len()));
        }
        Ok(Self { data })
    }

    pub fn p(&self) -> usize {
        self.data.len() / 2 - 1
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.data.view()
    }

    pub fn as_array(&self) -> &Array1<f64> {
        &self.data
    }

    pub fn as_array_mut(&mut self) -> &mut Array1<f64> {
        &mut self.data
    }

    pub fn w0(&self) -> ArrayView1<'_, f64> {
        self.data.slice(ndarray::s![..self.p()])
    }

    pub fn b0(&self) -> f64 {
        self.data[self.p()]
    }

    pub fn w(&self) -> ArrayView1<'_, f64> {
        let p = self.p();
        self.data.slice(ndarray::s![p + 1..2 * p + 1])
    }

    pub fn b(&self) -> f64 {
        self.data[2 * self.p() + 1]
    }

    /// Effective classifier `(w0 + w, b0 + b)`.
    pub fn sum_parts(&self) -> (Array1<f64>, f64) {
        (&self.w0() + &self.w(), self.b0() + self.b())
    }

    /// `(‖w0‖², ‖w‖²)` — the two regularizer quadratic forms. Bias entries
    /// contribute nothing.
    pub fn quad_forms(&self) -> (f64, f64) {
        let m1 = self.w0().iter().map(|v| v * v).sum();
        let m2 = self.w().iter().map(|v| v * v).sum();
        (m1, m2)
    }
}

/// First half of the stacked vector: the shared part `(w0, b0)` as a
/// (p+1)-vector.
pub fn project_common(r: ArrayView1<'_, f64>) -> Array1<f64> {
    let half = r.len() / 2;
    r.slice(ndarray::s![..half]).to_owned()
}

/// Embed a (p+1)-vector into the stacked layout with zero task part.
pub fn embed_common(common: ArrayView1<'_, f64>) -> Array1<f64> {
    let mut out = Array1::zeros(2 * common.len());
    out.slice_mut(ndarray::s![..common.len()]).assign(&common);
    out
}

/// Apply the diagonal selector that keeps the shared half and zeroes the
/// task half.
pub fn keep_common(r: ArrayView1<'_, f64>) -> Array1<f64> {
    let half = r.len() / 2;
    let mut out = r.to_owned();
    out.slice_mut(ndarray::s![half..]).fill(0.0);
    out
}

/// Collapse the stacked vector to the effective (p+1)-dim classifier
/// `[w0+w, b0+b]`.
pub fn collapse(r: ArrayView1<'_, f64>) -> Array1<f64> {
    let half = r.len() / 2;
    &r.slice(ndarray::s![..half]) + &r.slice(ndarray::s![half..])
}

/// How the dual box bound is chosen for a scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltyMode {
    /// node count x task count x C, counted once at scenario start.
    GlobalVtc,
    Explicit(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    /// Error-penalty weight.
    pub c: f64,
    /// Regularizer on the shared part.
    pub eps1: f64,
    /// Regularizer on the per-task part.
    pub eps2: f64,
    /// Cross-task ADMM step.
    pub eta1: f64,
    /// Cross-node ADMM step.
    pub eta2: f64,
    pub penalty_mode: PenaltyMode,
}

impl Hyperparams {
    pub fn new(c: f64, eps1: f64, eps2: f64, eta1: f64, eta2: f64) -> Result<Self, CoreError> {
        let h = Self { c, eps1, eps2, eta1, eta2, penalty_mode: PenaltyMode::GlobalVtc };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        for (name, value) in [
            ("C", self.c),
            ("eps1", self.eps1),
            ("eps2", self.eps2),
            ("eta1", self.eta1),
            ("eta2", self.eta2),
        ] {
            if !(value > 0.0) {
                return Err(CoreError::NonPositiveHyper { name, value });
            }
        }
        Ok(())
    }

    pub fn with_penalty(mut self, penalty: f64) -> Self {
        self.penalty_mode = PenaltyMode::Explicit(penalty);
        self
    }
}

/// Pool several datasets of the same task into one.
pub fn concat_datasets(parts: &[LabeledDataset]) -> Result<LabeledDataset, CoreError> {
    if parts.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    let views: Vec<_> = parts.iter().map(|d| d.features.view()).collect();
    let features = ndarray::concatenate(Axis(0), &views).expect("consistent dims");
    let labels = ndarray::concatenate(
        Axis(0),
        &parts.iter().map(|d| d.labels.view()).collect::<Vec<_>>(),
    )
    .expect("consistent dims");
    LabeledDataset::new(features, labels, parts[0].task_id)
}
