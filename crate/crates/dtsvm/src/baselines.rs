//! Reference solvers that share no iteration logic with the consensus
//! engine: a centralized single-task SVM and a deliberately simple
//! subgradient solver for the pooled transfer objective. The latter exists
//! to cross-validate the engine's fixed points, not to be fast.

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::core::{CoreError, LabeledDataset};
use crate::qpbox::{default_max_sweeps, solve_box_qp_opts, BoxQp, QpError, QpSolution};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("{name} must be strictly positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("need at least one task dataset")]
    NoTasks,
    #[error("task {task} has feature dim {got}, expected {expected}")]
    DimMismatch { task: usize, expected: usize, got: usize },
    #[error("dual solve stopped above tolerance (residual {0})")]
    NotConverged(f64),
}

pub const DEFAULT_BIAS_RIDGE: f64 = 1e-6;

/// The ridged-bias dual: Q_nm = y_n y_m (x_n·x_m + 1/ridge), c = 1,
/// box [0, C]. The rank-one 1/ridge block makes the dual very stiff for
/// small ridges, so the sweep budget scales with 1/ridge.
fn csvm_dual(
    data: &LabeledDataset,
    c: f64,
    bias_ridge: f64,
) -> Result<QpSolution, BaselineError> {
    let n = data.len();
    let inv = 1.0 / bias_ridge;
    let x = &data.features;
    let y = &data.labels;
    let mut q = Array2::zeros((n, n));
    for a in 0..n {
        for b in a..n {
            let val = y[a] * y[b] * (x.row(a).dot(&x.row(b)) + inv);
            q[[a, b]] = val;
            q[[b, a]] = val;
        }
    }
    let qp = BoxQp::new(q, Array1::ones(n), c)?;
    let sweeps = default_max_sweeps(n).max((24.0 / bias_ridge) as usize);
    let sol = solve_box_qp_opts(&qp, None, 1e-6, sweeps)?;
    if !sol.converged {
        return Err(BaselineError::NotConverged(sol.kkt_residual));
    }
    Ok(sol)
}

/// Centralized single-task SVM: ½‖w‖² + (ridge/2)b² + C Σ hinge, solved
/// through its box-QP dual. The tiny bias ridge stands in for the exact
/// unregularized bias; the drift it introduces is far below the risk
/// resolution of any scenario here.
pub fn train_csvm(
    data: &LabeledDataset,
    c: f64,
    bias_ridge: f64,
) -> Result<(Array1<f64>, f64), BaselineError> {
    if !(c > 0.0) {
        return Err(BaselineError::NonPositive { name: "C", value: c });
    }
    if !(bias_ridge > 0.0) {
        return Err(BaselineError::NonPositive { name: "bias_ridge", value: bias_ridge });
    }
    let sol = csvm_dual(data, c, bias_ridge)?;
    let mut w = Array1::zeros(data.dim());
    let mut ysum = 0.0;
    for i in 0..data.len() {
        let weight = sol.lambda[i] * data.labels[i];
        if weight != 0.0 {
            w.scaled_add(weight, &data.features.row(i));
        }
        ysum += sol.lambda[i] * data.labels[i];
    }
    Ok((w, ysum / bias_ridge))
}

#[derive(Debug, Clone)]
pub struct CentralizedTransferSolution {
    pub w0: Array1<f64>,
    pub b0: f64,
    /// Per-task correction (w_t, b_t); effective classifier is the sum
    /// with the shared part.
    pub tasks: Vec<(Array1<f64>, f64)>,
    pub objective: f64,
    pub iterations: usize,
}

/// Pooled transfer objective over T tasks:
///   (ε1 T / 2)‖w0‖² + (ε2/2) Σ_t ‖w_t‖² + T·C · Σ_t Σ_n hinge_tn,
/// minimized by full-batch subgradient steps step_c/√k with iterate
/// averaging; returns the best-objective candidate seen. Independent of
/// the engine by design — it exists to check the engine's fixed points.
pub fn train_centralized_transfer_oracle(
    datasets: &[LabeledDataset],
    eps1: f64,
    eps2: f64,
    c: f64,
    steps: usize,
    step_c: f64,
) -> Result<CentralizedTransferSolution, BaselineError> {
    if datasets.is_empty() {
        return Err(BaselineError::NoTasks);
    }
    for (name, value) in [("eps1", eps1), ("eps2", eps2), ("C", c), ("step_c", step_c)] {
        if !(value > 0.0) {
            return Err(BaselineError::NonPositive { name, value });
        }
    }
    if steps == 0 {
        return Err(BaselineError::NonPositive { name: "steps", value: 0.0 });
    }
    let p = datasets[0].dim();
    for (t, ds) in datasets.iter().enumerate() {
        if ds.dim() != p {
            return Err(BaselineError::DimMismatch { task: t, expected: p, got: ds.dim() });
        }
    }
    let t_count = datasets.len();
    let tc = t_count as f64 * c;

    let objective = |w0: &Array1<f64>, b0: f64, w: &[Array1<f64>], b: &[f64]| -> f64 {
        let mut val = 0.5 * eps1 * t_count as f64 * w0.dot(w0);
        for (t, ds) in datasets.iter().enumerate() {
            val += 0.5 * eps2 * w[t].dot(&w[t]);
            let eff = w0 + &w[t];
            let scores = ds.features.dot(&eff);
            for (s, yv) in scores.iter().zip(ds.labels.iter()) {
                val += tc * (1.0 - yv * (s + b0 + b[t])).max(0.0);
            }
        }
        val
    };

    let mut w0 = Array1::zeros(p);
    let mut b0 = 0.0;
    let mut w: Vec<Array1<f64>> = vec![Array1::zeros(p); t_count];
    let mut b = vec![0.0; t_count];

    let mut best_obj = objective(&w0, b0, &w, &b);
    let mut best = (w0.clone(), b0, w.clone(), b.clone());

    let mut avg_w0 = Array1::zeros(p);
    let mut avg_b0 = 0.0;
    let mut avg_w: Vec<Array1<f64>> = vec![Array1::zeros(p); t_count];
    let mut avg_b = vec![0.0; t_count];

    for k in 1..=steps {
        let mut g_w0 = &w0 * (eps1 * t_count as f64);
        let mut g_b0 = 0.0;
        let mut g_w: Vec<Array1<f64>> = w.iter().map(|wt| wt * eps2).collect();
        let mut g_b = vec![0.0; t_count];
        for (t, ds) in datasets.iter().enumerate() {
            let eff = &w0 + &w[t];
            let scores = ds.features.dot(&eff);
            for (n, (s, yv)) in scores.iter().zip(ds.labels.iter()).enumerate() {
                if yv * (s + b0 + b[t]) < 1.0 {
                    let scale = -yv * tc;
                    g_w0.scaled_add(scale, &ds.features.row(n));
                    g_w[t].scaled_add(scale, &ds.features.row(n));
                    g_b0 += scale;
                    g_b[t] += scale;
                }
            }
        }
        let step = step_c / (k as f64).sqrt();
        w0.scaled_add(-step, &g_w0);
        b0 -= step * g_b0;
        for t in 0..t_count {
            w[t].scaled_add(-step, &g_w[t]);
            b[t] -= step * g_b[t];
        }

        avg_w0 += &w0;
        avg_b0 += b0;
        for t in 0..t_count {
            avg_w[t] += &w[t];
            avg_b[t] += b[t];
        }

        if k % 50 == 0 {
            let inv = 1.0 / k as f64;
            let cand_avg_w0 = &avg_w0 * inv;
            let cand_avg_w: Vec<Array1<f64>> = avg_w.iter().map(|a| a * inv).collect();
            let cand_avg_b: Vec<f64> = avg_b.iter().map(|x| x * inv).collect();
            for (cw0, cb0, cw, cb) in [
                (&w0, b0, &w, &b),
                (&cand_avg_w0, avg_b0 * inv, &cand_avg_w, &cand_avg_b),
            ] {
                let o = objective(cw0, cb0, cw, cb);
                if o < best_obj {
                    best_obj = o;
                    best = (cw0.clone(), cb0, cw.clone(), cb.clone());
                }
            }
        }
    }

    let (w0, b0, w, b) = best;
    Ok(CentralizedTransferSolution {
        w0,
        b0,
        tasks: w.into_iter().zip(b).collect(),
        objective: best_obj,
        iterations: steps,
    })
}
