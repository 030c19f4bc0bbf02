//! Synthetic worlds with a shared row/column subspace.
//!
//! A world bundles group-indicator side matrices `X*`, `Y*`, a small core
//! matrix, a low-rank sampling distribution `P` built from the same group
//! structure, and the ground-truth matrix `G = X* C Y*^T`. Labeled and
//! unlabeled observations are drawn i.i.d. from `P`, with additive Gaussian
//! noise on labels.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::subspace::{truncated_svd, SubspaceFactors};

// Stream tags under a world's base seed.
const STREAM_ROW_GROUPS: u64 = 1;
const STREAM_COL_GROUPS: u64 = 2;
const STREAM_CORE: u64 = 3;
const STREAM_SAMPLING: u64 = 4;
// Stream tags under a draw seed.
const STREAM_ENTRIES: u64 = 1;
const STREAM_NOISE: u64 = 2;

/// Configuration for [`make_world`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub m: usize,
    pub n: usize,
    /// Shared-subspace dimension; also the number of row and column groups.
    pub d: usize,
    /// Row-group sizes; must sum to `m`. Defaults to `m/d` each.
    #[serde(default)]
    pub row_group_sizes: Option<Vec<usize>>,
    /// Column-group sizes; must sum to `n`. Defaults to `n/d` each.
    #[serde(default)]
    pub col_group_sizes: Option<Vec<usize>>,
    /// Target Frobenius norm of the core matrix.
    pub core_frobenius_norm: f64,
    /// Standard deviation of the additive label noise.
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// The 200x200, four-group benchmark world with unit-scale entries.
    fn default() -> Self {
        Self {
            m: 200,
            n: 200,
            d: 4,
            row_group_sizes: None,
            col_group_sizes: None,
            core_frobenius_norm: 4.0,
            noise_sd: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d < 1 {
            return Err(Error::Config("d must be at least 1".into()));
        }
        if self.noise_sd < 0.0 {
            return Err(Error::Config("noise_sd must be nonnegative".into()));
        }
        if !(self.core_frobenius_norm > 0.0) {
            return Err(Error::Config("core_frobenius_norm must be positive".into()));
        }
        self.row_sizes()?;
        self.col_sizes()?;
        Ok(())
    }

    pub fn row_sizes(&self) -> Result<Vec<usize>> {
        resolve_sizes(self.m, self.d, self.row_group_sizes.as_deref(), "row")
    }

    pub fn col_sizes(&self) -> Result<Vec<usize>> {
        resolve_sizes(self.n, self.d, self.col_group_sizes.as_deref(), "column")
    }
}

fn resolve_sizes(total: usize, d: usize, sizes: Option<&[usize]>, axis: &str) -> Result<Vec<usize>> {
    match sizes {
        Some(sizes) => {
            if sizes.len() != d {
                return Err(Error::Config(format!(
                    "{axis} group sizes list has {} entries, expected d = {d}",
                    sizes.len()
                )));
            }
            if sizes.iter().any(|&s| s == 0) {
                return Err(Error::Config(format!("{axis} group sizes must be positive")));
            }
            if sizes.iter().sum::<usize>() != total {
                return Err(Error::Config(format!(
                    "{axis} group sizes sum to {}, expected {total}",
                    sizes.iter().sum::<usize>()
                )));
            }
            Ok(sizes.to_vec())
        }
        None => {
            if total % d != 0 {
                return Err(Error::Config(format!(
                    "{axis} count {total} is not divisible by d = {d}; \
                     give explicit group sizes"
                )));
            }
            Ok(vec![total / d; d])
        }
    }
}

/// Ground-truth bundle for a realizable instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthWorld {
    /// `m x d` row-group indicator matrix.
    #[serde(with = "crate::mat_serde")]
    pub x_star: DMatrix<f64>,
    /// `n x d` column-group indicator matrix.
    #[serde(with = "crate::mat_serde")]
    pub y_star: DMatrix<f64>,
    /// `d x d` core matrix.
    #[serde(with = "crate::mat_serde")]
    pub core_star: DMatrix<f64>,
    /// `m x n` sampling distribution; nonnegative, sums to one, rank <= d.
    #[serde(with = "crate::mat_serde")]
    pub pmf: DMatrix<f64>,
    /// `m x n` ground truth `x_star * core_star * y_star^T`.
    #[serde(with = "crate::mat_serde")]
    pub ground_truth: DMatrix<f64>,
}

impl SynthWorld {
    pub fn m(&self) -> usize {
        self.x_star.nrows()
    }

    pub fn n(&self) -> usize {
        self.y_star.nrows()
    }

    pub fn d(&self) -> usize {
        self.core_star.nrows()
    }

    /// Exact top-`d` singular factors of the sampling distribution.
    pub fn true_subspace(&self) -> Result<SubspaceFactors> {
        truncated_svd(&self.pmf, self.d())
    }
}

fn indicator(d: usize, assignment: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(assignment.len(), d);
    for (row, &g) in assignment.iter().enumerate() {
        out[(row, g)] = 1.0;
    }
    out
}

fn random_assignment(count: usize, sizes: &[usize], rng: &mut impl rand::Rng) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..count).collect();
    indices.shuffle(rng);
    let mut assignment = vec![0usize; count];
    let mut cursor = 0;
    for (group, &size) in sizes.iter().enumerate() {
        for &idx in &indices[cursor..cursor + size] {
            assignment[idx] = group;
        }
        cursor += size;
    }
    assignment
}

/// Generate a world: random group partitions, a Gaussian core rescaled to the
/// target Frobenius norm, and a sampling distribution lifted from a `d x d`
/// uniform-entry seed matrix and normalized to total mass one.
pub fn make_world(cfg: &SynthConfig) -> Result<SynthWorld> {
    cfg.validate()?;
    let row_sizes = cfg.row_sizes()?;
    let col_sizes = cfg.col_sizes()?;
    let d = cfg.d;

    let mut row_rng = rng::stream_rng(cfg.seed, &[STREAM_ROW_GROUPS]);
    let mut col_rng = rng::stream_rng(cfg.seed, &[STREAM_COL_GROUPS]);
    let row_assignment = random_assignment(cfg.m, &row_sizes, &mut row_rng);
    let col_assignment = random_assignment(cfg.n, &col_sizes, &mut col_rng);
    let x_star = indicator(d, &row_assignment);
    let y_star = indicator(d, &col_assignment);

    let mut core_rng = rng::stream_rng(cfg.seed, &[STREAM_CORE]);
    let mut core = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut core_rng));
    let norm = core.norm();
    if norm < 1e-300 {
        return Err(Error::Numerical("degenerate zero core draw".into()));
    }
    core.scale_mut(cfg.core_frobenius_norm / norm);

    let mut p_rng = rng::stream_rng(cfg.seed, &[STREAM_SAMPLING]);
    let mut p0 = DMatrix::from_fn(d, d, |_, _| p_rng.random::<f64>());
    let mut lifted = &x_star * &p0 * y_star.transpose();
    let mut mass: f64 = lifted.iter().sum();
    if mass < 1e-12 {
        // One resample covers the measure-zero all-tiny draw.
        p0 = DMatrix::from_fn(d, d, |_, _| p_rng.random::<f64>());
        lifted = &x_star * &p0 * y_star.transpose();
        mass = lifted.iter().sum();
        if mass < 1e-12 {
            return Err(Error::Numerical(
                "sampling seed matrix has negligible mass after resampling".into(),
            ));
        }
    }
    let pmf = lifted / mass;

    let ground_truth = &x_star * &core * y_star.transpose();
    Ok(SynthWorld {
        x_star,
        y_star,
        core_star: core,
        pmf,
        ground_truth,
    })
}

/// Deterministic world with contiguous groups and explicit `d x d` sampling
/// seed and core matrices. The sampling seed must be entrywise nonnegative;
/// it is lifted through the indicators and normalized to total mass one.
pub fn block_world(
    row_sizes: &[usize],
    col_sizes: &[usize],
    p0: &DMatrix<f64>,
    core: &DMatrix<f64>,
) -> Result<SynthWorld> {
    let d = p0.nrows();
    if p0.ncols() != d || core.shape() != (d, d) {
        return Err(Error::Config(format!(
            "sampling seed and core must both be {d}x{d}"
        )));
    }
    if row_sizes.len() != d || col_sizes.len() != d {
        return Err(Error::Config(format!(
            "expected {d} row and column groups, got {} and {}",
            row_sizes.len(),
            col_sizes.len()
        )));
    }
    if row_sizes.iter().any(|&s| s == 0) || col_sizes.iter().any(|&s| s == 0) {
        return Err(Error::Config("group sizes must be positive".into()));
    }
    if p0.iter().any(|&v| v < 0.0) {
        return Err(Error::Config("sampling seed matrix must be nonnegative".into()));
    }
    let m: usize = row_sizes.iter().sum();
    let n: usize = col_sizes.iter().sum();

    let mut row_assignment = Vec::with_capacity(m);
    for (g, &s) in row_sizes.iter().enumerate() {
        row_assignment.extend(std::iter::repeat(g).take(s));
    }
    let mut col_assignment = Vec::with_capacity(n);
    for (g, &s) in col_sizes.iter().enumerate() {
        col_assignment.extend(std::iter::repeat(g).take(s));
    }
    let x_star = indicator(d, &row_assignment);
    let y_star = indicator(d, &col_assignment);

    let lifted = &x_star * p0 * y_star.transpose();
    let mass: f64 = lifted.iter().sum();
    if mass < 1e-12 {
        return Err(Error::Config("sampling seed matrix has negligible mass".into()));
    }
    let pmf = lifted / mass;
    let ground_truth = &x_star * core * y_star.transpose();
    Ok(SynthWorld {
        x_star,
        y_star,
        core_star: core.clone(),
        pmf,
        ground_truth,
    })
}

// ---------------------------------------------------------------------------
// Observations
// ---------------------------------------------------------------------------

/// A labeled observation: an entry index and the noisy value seen there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(usize, usize, f64)", into = "(usize, usize, f64)")]
pub struct LabeledSample {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

impl From<(usize, usize, f64)> for LabeledSample {
    fn from((row, col, value): (usize, usize, f64)) -> Self {
        Self { row, col, value }
    }
}

impl From<LabeledSample> for (usize, usize, f64) {
    fn from(s: LabeledSample) -> Self {
        (s.row, s.col, s.value)
    }
}

/// Entry draws from a sampling distribution, split into unlabeled indices and
/// labeled (index, value) observations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObservationSet {
    pub m: usize,
    pub n: usize,
    pub unlabeled: Vec<(usize, usize)>,
    pub labeled: Vec<LabeledSample>,
}

impl ObservationSet {
    pub fn validate(&self) -> Result<()> {
        for &(i, j) in &self.unlabeled {
            if i >= self.m || j >= self.n {
                return Err(Error::Argument(format!(
                    "unlabeled index ({i}, {j}) outside {}x{}",
                    self.m, self.n
                )));
            }
        }
        for s in &self.labeled {
            if s.row >= self.m || s.col >= self.n {
                return Err(Error::Argument(format!(
                    "labeled index ({}, {}) outside {}x{}",
                    s.row, s.col, self.m, self.n
                )));
            }
            if !s.value.is_finite() {
                return Err(Error::Argument("labeled value is not finite".into()));
            }
        }
        Ok(())
    }
}

/// Cumulative-sum categorical sampler over matrix entries.
struct EntrySampler {
    cumulative: Vec<f64>,
    ncols: usize,
}

impl EntrySampler {
    fn new(pmf: &DMatrix<f64>) -> Self {
        let (m, n) = pmf.shape();
        let mut cumulative = Vec::with_capacity(m * n);
        let mut acc = 0.0;
        for i in 0..m {
            for j in 0..n {
                acc += pmf[(i, j)];
                cumulative.push(acc);
            }
        }
        Self { cumulative, ncols: n }
    }

    fn draw(&self, rng: &mut impl rand::Rng) -> (usize, usize) {
        let total = *self.cumulative.last().expect("nonempty pmf");
        let target = rng.random::<f64>() * total;
        let idx = self.cumulative.partition_point(|&c| c <= target);
        let idx = idx.min(self.cumulative.len() - 1);
        (idx / self.ncols, idx % self.ncols)
    }
}

/// Draw `count` i.i.d. unlabeled entries from the world's sampling
/// distribution (with replacement).
pub fn draw_unlabeled(world: &SynthWorld, count: usize, seed: u64) -> ObservationSet {
    let sampler = EntrySampler::new(&world.pmf);
    let mut rng = rng::stream_rng(seed, &[STREAM_ENTRIES]);
    let unlabeled = (0..count).map(|_| sampler.draw(&mut rng)).collect();
    ObservationSet {
        m: world.m(),
        n: world.n(),
        unlabeled,
        labeled: Vec::new(),
    }
}

/// Draw `count` i.i.d. labeled observations: entries from the sampling
/// distribution, values `G[entry] + Normal(0, noise_sd^2)`.
///
/// Entry and noise streams are separated, so two calls with the same seed and
/// different noise levels visit the same entries.
pub fn draw_labeled(
    world: &SynthWorld,
    count: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<ObservationSet> {
    if noise_sd < 0.0 {
        return Err(Error::Argument("noise_sd must be nonnegative".into()));
    }
    let sampler = EntrySampler::new(&world.pmf);
    let mut entry_rng = rng::stream_rng(seed, &[STREAM_ENTRIES]);
    let mut noise_rng = rng::stream_rng(seed, &[STREAM_NOISE]);
    let noise = Normal::new(0.0, noise_sd)
        .map_err(|e| Error::Argument(format!("invalid noise distribution: {e}")))?;
    let labeled = (0..count)
        .map(|_| {
            let (i, j) = sampler.draw(&mut entry_rng);
            let value = world.ground_truth[(i, j)] + noise.sample(&mut noise_rng);
            LabeledSample { row: i, col: j, value }
        })
        .collect();
    Ok(ObservationSet {
        m: world.m(),
        n: world.n(),
        unlabeled: Vec::new(),
        labeled,
    })
}
