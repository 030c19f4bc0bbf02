//! Reference methods: SoftImpute and user-based KNN.
//!
//! Both operate on labeled ratings alone, which is exactly what makes them
//! useful comparison points for the subspace-assisted estimator when most
//! labels are removed.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use crate::rng;
use crate::subspace;
use crate::synthgen::LabeledSample;

// ---------------------------------------------------------------------------
// SoftImpute
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SoftImputeConfig {
    /// Soft-threshold level applied to singular values each sweep.
    pub lambda: f64,
    /// Rank cap for the inner SVD.
    pub max_rank: usize,
    pub max_iters: usize,
    /// Relative Frobenius-change stopping threshold.
    pub tolerance: f64,
}

impl Default for SoftImputeConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            max_rank: 60,
            max_iters: 100,
            tolerance: 1e-4,
        }
    }
}

impl SoftImputeConfig {
    fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be nonnegative".into()));
        }
        if self.max_rank < 1 {
            return Err(Error::Config("max_rank must be at least 1".into()));
        }
        if self.max_iters < 1 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// A completed matrix and the state of the iteration that produced it.
#[derive(Debug, Clone)]
pub struct CompletionResult {
    pub matrix: DMatrix<f64>,
    pub iterations: usize,
    /// False when the sweep limit was hit before the change dropped below
    /// tolerance; the best iterate is still returned.
    pub converged: bool,
    /// Surrogate objective `0.5 ||P_obs(Z - X)||_F^2 + lambda ||Z||_*`
    /// per sweep.
    pub objective_trace: Vec<f64>,
}

/// Singular-value soft-thresholding: `sigma_i <- max(sigma_i - lambda, 0)`.
pub fn svt(matrix: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if lambda < 0.0 {
        return Err(Error::Argument("lambda must be nonnegative".into()));
    }
    let (recomposed, _) = svt_capped(matrix, lambda, matrix.nrows().min(matrix.ncols()), 0)?;
    Ok(recomposed)
}

/// Soft-threshold keeping at most `max_rank` components. Large inputs go
/// through the randomized SVD; returns the recomposed matrix and the nuclear
/// norm of the result.
fn svt_capped(
    matrix: &DMatrix<f64>,
    lambda: f64,
    max_rank: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, f64)> {
    let (m, n) = matrix.shape();
    let k = max_rank.min(m.min(n));
    // The randomized path pays off once the kept rank is far below min(m, n).
    let factors = if m.min(n) > 4 * (k + 8) {
        subspace::randomized_svd(matrix, k, seed, 4, 8)?
    } else {
        subspace::truncated_svd(matrix, k)?
    };
    let thresholded: Vec<f64> = factors
        .sigma()
        .iter()
        .map(|&s| (s - lambda).max(0.0))
        .collect();
    let nuclear: f64 = thresholded.iter().sum();
    let mut out = DMatrix::zeros(m, n);
    for (idx, &s) in thresholded.iter().enumerate() {
        if s > 0.0 {
            let u = factors.u().column(idx);
            let v = factors.v().column(idx);
            out.gemm(s, &u, &v.transpose(), 1.0);
        }
    }
    Ok((out, nuclear))
}

/// Deduplicate observations into (row, col) -> mean value.
fn observed_cells(labeled: &[LabeledSample], m: usize, n: usize) -> Result<Vec<(usize, usize, f64)>> {
    if labeled.is_empty() {
        return Err(Error::Argument("at least one labeled sample is required".into()));
    }
    let mut acc: HashMap<(usize, usize), (f64, usize)> = HashMap::new();
    for s in labeled {
        if s.row >= m || s.col >= n {
            return Err(Error::Argument(format!(
                "labeled entry ({}, {}) outside {m}x{n}",
                s.row, s.col
            )));
        }
        let slot = acc.entry((s.row, s.col)).or_insert((0.0, 0));
        slot.0 += s.value;
        slot.1 += 1;
    }
    let mut cells: Vec<(usize, usize, f64)> = acc
        .into_iter()
        .map(|((i, j), (sum, count))| (i, j, sum / count as f64))
        .collect();
    cells.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    Ok(cells)
}

/// Iterative soft-thresholded completion: overwrite observed cells with their
/// labels, soft-threshold the singular values, repeat until the iterate
/// stabilizes.
pub fn softimpute_fit(
    labeled: &[LabeledSample],
    m: usize,
    n: usize,
    cfg: &SoftImputeConfig,
) -> Result<CompletionResult> {
    let cells = observed_cells(labeled, m, n)?;
    softimpute_sweeps(&cells, m, n, cfg, None)
}

fn softimpute_sweeps(
    cells: &[(usize, usize, f64)],
    m: usize,
    n: usize,
    cfg: &SoftImputeConfig,
    warm_start: Option<DMatrix<f64>>,
) -> Result<CompletionResult> {
    cfg.validate()?;
    let mut z = warm_start.unwrap_or_else(|| DMatrix::zeros(m, n));
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for sweep in 0..cfg.max_iters {
        let mut work = z.clone();
        for &(i, j, v) in cells {
            work[(i, j)] = v;
        }
        let (next, nuclear) = svt_capped(&work, cfg.lambda, cfg.max_rank, sweep as u64)?;

        let fit: f64 = cells
            .iter()
            .map(|&(i, j, v)| {
                let e = next[(i, j)] - v;
                e * e
            })
            .sum();
        trace.push(0.5 * fit + cfg.lambda * nuclear);

        let delta = (&next - &z).norm_squared();
        let scale = z.norm_squared().max(1.0);
        z = next;
        iterations = sweep + 1;
        if delta / scale < cfg.tolerance * cfg.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "softimpute did not converge in {} sweeps (lambda = {})",
            cfg.max_iters,
            cfg.lambda
        );
    }
    Ok(CompletionResult {
        matrix: z,
        iterations,
        converged,
        objective_trace: trace,
    })
}

/// Standard multiplier grid for [`softimpute_fit_tuned`].
pub const LAMBDA_GRID: [f64; 6] = [0.5, 1.0, 2.0, 5.0, 10.0, 20.0];

/// Pick `lambda` from `LAMBDA_GRID * ||P_obs(X)|| / sqrt(N)` on a seeded
/// 80/20 validation split, then refit on all labels with the winner.
///
/// Candidates are fitted on a descending lambda path with warm starts, so
/// every validation fit is properly converged at a fraction of the cold-start
/// cost.
pub fn softimpute_fit_tuned(
    labeled: &[LabeledSample],
    m: usize,
    n: usize,
    base: &SoftImputeConfig,
    seed: u64,
) -> Result<(CompletionResult, f64)> {
    base.validate()?;
    if labeled.len() < 5 {
        return Err(Error::Argument(
            "lambda tuning needs at least 5 labeled samples".into(),
        ));
    }
    let cells = observed_cells(labeled, m, n)?;
    let mut observed = DMatrix::<f64>::zeros(m, n);
    for &(i, j, v) in &cells {
        observed[(i, j)] = v;
    }
    // Spectral norm of the observed matrix sets the scale of the grid.
    let top = subspace::randomized_svd(&observed, 1, rng::derive(seed, &[1]), 4, 8)?;
    let scale = top.sigma()[0] / (labeled.len() as f64).sqrt();

    let mut shuffled: Vec<LabeledSample> = labeled.to_vec();
    let mut shuffle_rng = rng::stream_rng(seed, &[2]);
    rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut shuffle_rng);
    let holdout = (labeled.len() / 5).max(1);
    let (val, train) = shuffled.split_at(holdout);
    let train_cells = observed_cells(train, m, n)?;

    let mut multipliers = LAMBDA_GRID;
    multipliers.sort_by(|a, b| b.partial_cmp(a).unwrap());

    let mut best: Option<(f64, f64)> = None; // (rmse, lambda)
    let mut warm: Option<DMatrix<f64>> = None;
    for &mult in &multipliers {
        let lambda = mult * scale;
        let cfg = SoftImputeConfig { lambda, ..base.clone() };
        let fit = softimpute_sweeps(&train_cells, m, n, &cfg, warm.take())?;
        let se: f64 = val
            .iter()
            .map(|s| {
                let e = fit.matrix[(s.row, s.col)] - s.value;
                e * e
            })
            .sum();
        let rmse = (se / val.len() as f64).sqrt();
        log::debug!("softimpute lambda {lambda:.4} -> validation rmse {rmse:.4}");
        if best.map_or(true, |(b, _)| rmse < b) {
            best = Some((rmse, lambda));
        }
        warm = Some(fit.matrix);
    }
    let (_, lambda) = best.expect("grid is nonempty");
    let cfg = SoftImputeConfig { lambda, ..base.clone() };
    let fit = softimpute_sweeps(&cells, m, n, &cfg, warm)?;
    Ok((fit, lambda))
}

// ---------------------------------------------------------------------------
// User-based KNN
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KnnFallback {
    UserMean,
    GlobalMean,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KnnConfig {
    /// Neighbor count.
    pub k: usize,
    /// Minimum co-rated items for a similarity to count.
    pub min_overlap: usize,
    pub fallback: KnnFallback,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            k: 40,
            min_overlap: 3,
            fallback: KnnFallback::UserMean,
        }
    }
}

struct UserProfile {
    /// (item, rating) sorted by item.
    ratings: Vec<(usize, f64)>,
    mean: f64,
}

/// Mean-centered cosine over co-rated items; `None` when the overlap is too
/// small or either centered sub-vector is null.
fn similarity(a: &UserProfile, b: &UserProfile, min_overlap: usize) -> Option<f64> {
    let mut dot = 0.0;
    let mut norm_a = 0.0;
    let mut norm_b = 0.0;
    let mut overlap = 0usize;
    let (mut i, mut j) = (0usize, 0usize);
    while i < a.ratings.len() && j < b.ratings.len() {
        match a.ratings[i].0.cmp(&b.ratings[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                let ca = a.ratings[i].1 - a.mean;
                let cb = b.ratings[j].1 - b.mean;
                dot += ca * cb;
                norm_a += ca * ca;
                norm_b += cb * cb;
                overlap += 1;
                i += 1;
                j += 1;
            }
        }
    }
    if overlap < min_overlap || norm_a <= 0.0 || norm_b <= 0.0 {
        return None;
    }
    Some(dot / (norm_a.sqrt() * norm_b.sqrt()))
}

/// Predict ratings for query entries as the mean rating given to the target
/// item by the `k` most similar users, with a per-config fallback when no
/// qualified neighbor rated the item.
pub fn knn_predict(
    labeled: &[LabeledSample],
    queries: &[(usize, usize)],
    cfg: &KnnConfig,
) -> Result<Vec<f64>> {
    if labeled.is_empty() {
        return Err(Error::Argument("at least one labeled sample is required".into()));
    }
    if cfg.k < 1 || cfg.min_overlap < 1 {
        return Err(Error::Config("k and min_overlap must be at least 1".into()));
    }

    let user_count = labeled
        .iter()
        .map(|s| s.row + 1)
        .chain(queries.iter().map(|&(u, _)| u + 1))
        .max()
        .unwrap_or(0);
    let global_mean = labeled.iter().map(|s| s.value).sum::<f64>() / labeled.len() as f64;

    let mut profiles: Vec<UserProfile> = (0..user_count)
        .map(|_| UserProfile { ratings: Vec::new(), mean: 0.0 })
        .collect();
    let mut by_item: HashMap<usize, Vec<(usize, f64)>> = HashMap::new();
    for s in labeled {
        profiles[s.row].ratings.push((s.col, s.value));
        by_item.entry(s.col).or_default().push((s.row, s.value));
    }
    for profile in &mut profiles {
        profile.ratings.sort_unstable_by_key(|&(item, _)| item);
        if !profile.ratings.is_empty() {
            profile.mean =
                profile.ratings.iter().map(|&(_, r)| r).sum::<f64>() / profile.ratings.len() as f64;
        }
    }
    for raters in by_item.values_mut() {
        raters.sort_unstable_by_key(|&(user, _)| user);
    }

    let fallback_for = |user: usize| -> f64 {
        match cfg.fallback {
            KnnFallback::GlobalMean => global_mean,
            KnnFallback::UserMean => {
                if profiles[user].ratings.is_empty() {
                    global_mean
                } else {
                    profiles[user].mean
                }
            }
        }
    };

    // Similarities are memoized per query user.
    let mut out = Vec::with_capacity(queries.len());
    let mut memo_user = usize::MAX;
    let mut memo: HashMap<usize, Option<f64>> = HashMap::new();
    for &(user, item) in queries {
        if user != memo_user {
            memo_user = user;
            memo.clear();
        }
        let Some(raters) = by_item.get(&item) else {
            out.push(fallback_for(user));
            continue;
        };
        let mut scored: Vec<(f64, usize, f64)> = Vec::new();
        for &(other, rating) in raters {
            if other == user {
                continue;
            }
            let sim = *memo
                .entry(other)
                .or_insert_with(|| similarity(&profiles[user], &profiles[other], cfg.min_overlap));
            if let Some(sim) = sim {
                scored.push((sim, other, rating));
            }
        }
        if scored.is_empty() {
            out.push(fallback_for(user));
            continue;
        }
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let top = &scored[..scored.len().min(cfg.k)];
        out.push(top.iter().map(|&(_, _, r)| r).sum::<f64>() / top.len() as f64);
    }
    Ok(out)
}
