//! Core-matrix fitting with side information.
//!
//! Given side matrices `X` (m x d) and `Y` (n x d) and labeled entry
//! observations, fit a small core `C` so that predictions `(X C Y^T)_{ij}`
//! match the labels. Two solvers are provided:
//!
//! - [`fit_projected`]: projected gradient descent on the empirical risk with
//!   a hard nuclear-norm ball constraint `||C||_* <= budget`;
//! - [`fit_factored`]: gradient descent on the factored objective
//!   `risk(A B^T) + lambda (||A||_F^2 + ||B||_F^2)`, whose regularizer agrees
//!   with the nuclear norm of `A B^T` at stationary points.
//!
//! Both solvers use backtracking line search and are deterministic given the
//! solver seed.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;
use crate::subspace::SideInfo;
use crate::synthgen::LabeledSample;

/// Armijo sufficient-decrease constant.
const ARMIJO_C: f64 = 1e-4;
/// Give up halving below this step.
const MIN_STEP: f64 = 1e-18;

// ---------------------------------------------------------------------------
// Loss specification
// ---------------------------------------------------------------------------

/// Pointwise loss on (prediction, label) pairs.
///
/// `squared` and `absolute` have no uniform bound, so they cannot feed the
/// bound evaluator; `clipped-squared` clamps the prediction to a range before
/// squaring, which makes the loss bounded by `(hi-lo)^2` and Lipschitz with
/// constant `2(hi-lo)` whenever labels stay inside the range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LossSpec {
    Squared,
    Absolute,
    ClippedSquared { lo: f64, hi: f64 },
}

impl LossSpec {
    pub fn clipped(lo: f64, hi: f64) -> Result<Self> {
        if !(hi > lo) {
            return Err(Error::Argument(format!(
                "clip range must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self::ClippedSquared { lo, hi })
    }

    /// Lipschitz constant in the prediction argument; `None` when unbounded.
    pub fn lipschitz(&self) -> Option<f64> {
        match self {
            Self::Squared => None,
            Self::Absolute => Some(1.0),
            Self::ClippedSquared { lo, hi } => Some(2.0 * (hi - lo)),
        }
    }

    /// Uniform bound on the loss value; `None` when unbounded.
    pub fn bound(&self) -> Option<f64> {
        match self {
            Self::Squared | Self::Absolute => None,
            Self::ClippedSquared { lo, hi } => Some((hi - lo) * (hi - lo)),
        }
    }

    pub fn clip_range(&self) -> Option<(f64, f64)> {
        match self {
            Self::ClippedSquared { lo, hi } => Some((*lo, *hi)),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Squared => "squared",
            Self::Absolute => "absolute",
            Self::ClippedSquared { .. } => "clipped-squared",
        }
    }

    pub fn value(&self, prediction: f64, label: f64) -> f64 {
        match self {
            Self::Squared => {
                let e = prediction - label;
                e * e
            }
            Self::Absolute => (prediction - label).abs(),
            Self::ClippedSquared { lo, hi } => {
                let e = prediction.clamp(*lo, *hi) - label;
                e * e
            }
        }
    }

    /// (Sub)derivative with respect to the prediction.
    pub fn gradient(&self, prediction: f64, label: f64) -> f64 {
        match self {
            Self::Squared => 2.0 * (prediction - label),
            Self::Absolute => {
                let e = prediction - label;
                if e > 0.0 {
                    1.0
                } else if e < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Self::ClippedSquared { lo, hi } => {
                if prediction < *lo || prediction > *hi {
                    0.0
                } else {
                    2.0 * (prediction - label)
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Solver configuration and result
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Initial line-search step; `None` means start from 1.0 and adapt.
    pub step_size: Option<f64>,
    /// Relative-objective stopping threshold.
    pub tolerance: f64,
    /// Factored-init standard deviation; `None` means `0.1 / sqrt(d)`.
    pub init_scale: Option<f64>,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            step_size: None,
            tolerance: 1e-8,
            init_scale: None,
            seed: 0,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if let Some(s) = self.step_size {
            if !(s > 0.0) {
                return Err(Error::Config("step_size must be positive".into()));
            }
        }
        Ok(())
    }

    fn initial_step(&self) -> f64 {
        self.step_size.unwrap_or(1.0)
    }
}

/// Factor pair for the factored solver.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorPair {
    #[serde(with = "crate::mat_serde")]
    pub a: DMatrix<f64>,
    #[serde(with = "crate::mat_serde")]
    pub b: DMatrix<f64>,
}

/// Fitted core matrix with its training trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    #[serde(with = "crate::mat_serde")]
    pub core: DMatrix<f64>,
    /// Present for the factored solver; `core = a * b^T`.
    pub factors: Option<FactorPair>,
    /// Objective value per accepted iterate (including the initial point).
    pub objective_trace: Vec<f64>,
    /// Final empirical risk on the training samples (regularizer excluded).
    pub train_risk: f64,
    pub nuclear_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

// ---------------------------------------------------------------------------
// Projections
// ---------------------------------------------------------------------------

/// Euclidean projection of a nonnegative vector onto
/// `{ w >= 0 : sum(w) <= budget }`.
///
/// Inside the budget the input is returned unchanged; otherwise the result is
/// the sorted-threshold simplex projection (descending sort, largest feasible
/// support).
pub fn l1_simplex_project(values: &[f64], budget: f64) -> Result<Vec<f64>> {
    if budget < 0.0 {
        return Err(Error::Argument("projection budget must be nonnegative".into()));
    }
    if values.iter().any(|&v| v < 0.0) {
        return Err(Error::Argument("projection input must be nonnegative".into()));
    }
    let total: f64 = values.iter().sum();
    if total <= budget {
        return Ok(values.to_vec());
    }
    if budget == 0.0 {
        return Ok(vec![0.0; values.len()]);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &v) in sorted.iter().enumerate() {
        cumulative += v;
        let candidate = (cumulative - budget) / (k + 1) as f64;
        if v - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    Ok(values.iter().map(|&v| (v - theta).max(0.0)).collect())
}

/// Frobenius-nearest point of the nuclear-norm ball `{ ||Z||_* <= budget }`:
/// SVD, project the singular values onto the l1 ball, recompose.
pub fn project_nuclear_ball(core: &DMatrix<f64>, budget: f64) -> Result<DMatrix<f64>> {
    if budget < 0.0 {
        return Err(Error::Argument("nuclear budget must be nonnegative".into()));
    }
    let (u, sigma, v) = linalg::full_svd(core)?;
    if sigma.iter().sum::<f64>() <= budget {
        return Ok(core.clone());
    }
    let projected = l1_simplex_project(&sigma, budget)?;
    let mut out = DMatrix::zeros(core.nrows(), core.ncols());
    for (k, &s) in projected.iter().enumerate() {
        if s > 0.0 {
            // Rank-1 update u_k s v_k^T.
            let uk = u.column(k);
            let vk = v.column(k);
            for i in 0..out.nrows() {
                for j in 0..out.ncols() {
                    out[(i, j)] += s * uk[i] * vk[j];
                }
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Labeled batch, objective and gradient
// ---------------------------------------------------------------------------

/// Samples grouped by row so objective and gradient evaluations cost
/// `O(active_rows * d^2 + N * d)` instead of `O(N * d^2)`.
struct RowGrouped {
    /// (row index, [(col index, label)]) for rows with at least one sample.
    rows: Vec<(usize, Vec<(usize, f64)>)>,
    count: usize,
}

impl RowGrouped {
    fn new(side: &SideInfo, labeled: &[LabeledSample]) -> Result<Self> {
        if labeled.is_empty() {
            return Err(Error::Argument("at least one labeled sample is required".into()));
        }
        let (m, n) = (side.nrows(), side.ncols());
        let mut sorted: Vec<&LabeledSample> = labeled.iter().collect();
        sorted.sort_by_key(|s| (s.row, s.col));
        let mut rows: Vec<(usize, Vec<(usize, f64)>)> = Vec::new();
        for s in sorted {
            if s.row >= m || s.col >= n {
                return Err(Error::Argument(format!(
                    "labeled entry ({}, {}) outside {m}x{n}",
                    s.row, s.col
                )));
            }
            if !s.value.is_finite() {
                return Err(Error::Argument("labeled value is not finite".into()));
            }
            match rows.last_mut() {
                Some((row, cells)) if *row == s.row => cells.push((s.col, s.value)),
                _ => rows.push((s.row, vec![(s.col, s.value)])),
            }
        }
        Ok(Self { rows, count: labeled.len() })
    }

    /// Mean loss of `X core Y^T` against the labels.
    fn risk(&self, side: &SideInfo, core: &DMatrix<f64>, loss: LossSpec) -> f64 {
        let mut total = 0.0;
        for (row, cells) in &self.rows {
            let w = side.x().row(*row) * core; // 1 x d
            for &(col, label) in cells {
                let pred = (&w * side.y().row(col).transpose())[(0, 0)];
                total += loss.value(pred, label);
            }
        }
        total / self.count as f64
    }

    /// Mean loss and its gradient with respect to the core matrix.
    fn risk_and_grad(
        &self,
        side: &SideInfo,
        core: &DMatrix<f64>,
        loss: LossSpec,
    ) -> (f64, DMatrix<f64>) {
        let d = side.d();
        let mut total = 0.0;
        let mut grad = DMatrix::zeros(d, d);
        for (row, cells) in &self.rows {
            let xi = side.x().row(*row);
            let w = xi * core; // 1 x d
            let mut s = nalgebra::RowDVector::zeros(d);
            for &(col, label) in cells {
                let yj = side.y().row(col);
                let pred = (&w * yj.transpose())[(0, 0)];
                total += loss.value(pred, label);
                s += yj * loss.gradient(pred, label);
            }
            // grad += x_i^T s_i
            grad.gemm(1.0 / self.count as f64, &xi.transpose(), &s, 1.0);
        }
        (total / self.count as f64, grad)
    }
}

// ---------------------------------------------------------------------------
// Solvers
// ---------------------------------------------------------------------------

fn ensure_finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numerical(format!("{what} became non-finite ({value})")))
    }
}

/// Projected (sub)gradient descent on the empirical risk over the nuclear
/// ball `||core||_* <= budget`, with Armijo backtracking on the projected
/// step. Starts from the zero matrix.
pub fn fit_projected(
    side: &SideInfo,
    labeled: &[LabeledSample],
    budget: f64,
    loss: LossSpec,
    cfg: &SolverConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    if !(budget > 0.0) {
        return Err(Error::Argument("nuclear budget must be positive".into()));
    }
    let batch = RowGrouped::new(side, labeled)?;
    let d = side.d();

    let mut core = DMatrix::zeros(d, d);
    let mut objective = ensure_finite(batch.risk(side, &core, loss), "objective")?;
    let mut trace = vec![objective];
    let mut step = cfg.initial_step();
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..cfg.max_iters {
        let (_, grad) = batch.risk_and_grad(side, &core, loss);
        // Backtracking on the projected step: accept when the decrease beats
        // the squared displacement at rate ARMIJO_C / step.
        let mut accepted = None;
        let mut alpha = step;
        while alpha >= MIN_STEP {
            let candidate = project_nuclear_ball(&(&core - grad.scale(alpha)), budget)?;
            let displacement = (&candidate - &core).norm_squared();
            if displacement == 0.0 {
                break; // already at the constrained stationary point
            }
            let cand_obj = ensure_finite(batch.risk(side, &candidate, loss), "objective")?;
            if cand_obj <= objective - ARMIJO_C / alpha * displacement {
                accepted = Some((candidate, cand_obj, alpha));
                break;
            }
            alpha *= 0.5;
        }
        let Some((candidate, cand_obj, used)) = accepted else {
            converged = true;
            break;
        };
        iterations += 1;
        let previous = objective;
        core = candidate;
        objective = cand_obj;
        trace.push(objective);
        step = (used * 2.0).min(cfg.initial_step().max(1.0) * 1024.0);
        let denom = previous.abs().max(1.0);
        if (previous - objective) / denom < cfg.tolerance {
            converged = true;
            break;
        }
    }

    let train_risk = batch.risk(side, &core, loss);
    let nuclear_norm = linalg::nuclear_norm(&core)?;
    Ok(FitResult {
        core,
        factors: None,
        objective_trace: trace,
        train_risk,
        nuclear_norm,
        iterations,
        converged,
    })
}

/// Gradient descent on the factored objective
/// `risk(A B^T) + lambda (||A||_F^2 + ||B||_F^2)` with `A, B` of shape
/// `d x inner_rank`, returning `core = A B^T`.
pub fn fit_factored(
    side: &SideInfo,
    labeled: &[LabeledSample],
    lambda: f64,
    inner_rank: usize,
    loss: LossSpec,
    cfg: &SolverConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    if lambda < 0.0 {
        return Err(Error::Argument("lambda must be nonnegative".into()));
    }
    let d = side.d();
    if inner_rank < 1 || inner_rank > d {
        return Err(Error::Argument(format!(
            "inner rank {inner_rank} out of range 1..={d}"
        )));
    }
    let batch = RowGrouped::new(side, labeled)?;

    let scale = cfg.init_scale.unwrap_or(0.1 / (d as f64).sqrt());
    let mut init_rng = rng::stream_rng(cfg.seed, &[0xFAC]);
    let gauss = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let mut a = DMatrix::from_fn(d, inner_rank, |_, _| scale * gauss(&mut init_rng));
    let mut b = DMatrix::from_fn(d, inner_rank, |_, _| scale * gauss(&mut init_rng));

    let objective_of = |batch: &RowGrouped, a: &DMatrix<f64>, b: &DMatrix<f64>| -> f64 {
        let core = a * b.transpose();
        batch.risk(side, &core, loss) + lambda * (a.norm_squared() + b.norm_squared())
    };

    let mut objective = ensure_finite(objective_of(&batch, &a, &b), "objective")?;
    let mut trace = vec![objective];
    let mut step = cfg.initial_step();
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..cfg.max_iters {
        let core = &a * b.transpose();
        let (_, grad_core) = batch.risk_and_grad(side, &core, loss);
        let grad_a = &grad_core * &b + a.scale(2.0 * lambda);
        let grad_b = grad_core.transpose() * &a + b.scale(2.0 * lambda);
        let grad_norm_sq = grad_a.norm_squared() + grad_b.norm_squared();
        if grad_norm_sq == 0.0 {
            converged = true;
            break;
        }

        let mut accepted = None;
        let mut alpha = step;
        while alpha >= MIN_STEP {
            let cand_a = &a - grad_a.scale(alpha);
            let cand_b = &b - grad_b.scale(alpha);
            let cand_obj = ensure_finite(objective_of(&batch, &cand_a, &cand_b), "objective")?;
            if cand_obj <= objective - ARMIJO_C * alpha * grad_norm_sq {
                accepted = Some((cand_a, cand_b, cand_obj, alpha));
                break;
            }
            alpha *= 0.5;
        }
        let Some((cand_a, cand_b, cand_obj, used)) = accepted else {
            converged = true;
            break;
        };
        iterations += 1;
        let previous = objective;
        a = cand_a;
        b = cand_b;
        objective = cand_obj;
        trace.push(objective);
        step = (used * 2.0).min(cfg.initial_step().max(1.0) * 1024.0);
        let denom = previous.abs().max(1.0);
        if (previous - objective) / denom < cfg.tolerance {
            converged = true;
            break;
        }
    }

    let core = &a * b.transpose();
    let train_risk = batch.risk(side, &core, loss);
    let nuclear_norm = linalg::nuclear_norm(&core)?;
    Ok(FitResult {
        core,
        factors: Some(FactorPair { a, b }),
        objective_trace: trace,
        train_risk,
        nuclear_norm,
        iterations,
        converged,
    })
}

// ---------------------------------------------------------------------------
// Prediction and risk
// ---------------------------------------------------------------------------

/// Empirical risk of a core matrix and its gradient, for diagnostics and
/// derivative checks.
pub fn empirical_risk_gradient(
    side: &SideInfo,
    labeled: &[LabeledSample],
    core: &DMatrix<f64>,
    loss: LossSpec,
) -> Result<(f64, DMatrix<f64>)> {
    if core.shape() != (side.d(), side.d()) {
        return Err(Error::Argument(format!(
            "core must be {d}x{d}, got {}x{}",
            core.nrows(),
            core.ncols(),
            d = side.d()
        )));
    }
    let batch = RowGrouped::new(side, labeled)?;
    Ok(batch.risk_and_grad(side, core, loss))
}

/// Predictions `(X core Y^T)_{ij}` for a list of entries, without forming the
/// dense product; optionally clipped to a range.
pub fn predict(
    side: &SideInfo,
    core: &DMatrix<f64>,
    entries: &[(usize, usize)],
    clip: Option<(f64, f64)>,
) -> Result<Vec<f64>> {
    let (m, n) = (side.nrows(), side.ncols());
    if core.shape() != (side.d(), side.d()) {
        return Err(Error::Argument(format!(
            "core must be {d}x{d}, got {}x{}",
            core.nrows(),
            core.ncols(),
            d = side.d()
        )));
    }
    // Cache x_i^T core per distinct row as rows arrive; entries in real
    // workloads are grouped by row, so a one-slot cache already pays off.
    let mut cache: Option<(usize, nalgebra::RowDVector<f64>)> = None;
    let mut out = Vec::with_capacity(entries.len());
    for &(i, j) in entries {
        if i >= m || j >= n {
            return Err(Error::Argument(format!("entry ({i}, {j}) outside {m}x{n}")));
        }
        let w = match &cache {
            Some((row, w)) if *row == i => w.clone(),
            _ => {
                let w = side.x().row(i) * core;
                cache = Some((i, w.clone()));
                w
            }
        };
        let mut pred = (w * side.y().row(j).transpose())[(0, 0)];
        if let Some((lo, hi)) = clip {
            pred = pred.clamp(lo, hi);
        }
        out.push(pred);
    }
    Ok(out)
}

/// Mean loss of predictions against labels.
pub fn empirical_risk(predictions: &[f64], labels: &[f64], loss: LossSpec) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Argument(format!(
            "length mismatch: {} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Argument("empty prediction list".into()));
    }
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &l)| loss.value(p, l))
        .sum();
    Ok(total / predictions.len() as f64)
}
