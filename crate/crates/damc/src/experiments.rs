//! Experiment orchestration: the synthetic (M, N) grid with its disentangled
//! gap estimate, and the masked-label protocol on MovieLens-style rating
//! data. All output artifacts are byte-deterministic given the spec.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{knn_predict, softimpute_fit, softimpute_fit_tuned, KnnConfig, SoftImputeConfig};
use crate::error::{Error, Result};
use crate::imc::{self, empirical_risk, fit_factored, fit_projected, LossSpec, SolverConfig};
use crate::rng;
use crate::subspace::{truncated_svd_auto, EmpiricalPmf, SideInfo};
use crate::synthgen::{draw_labeled, draw_unlabeled, make_world, LabeledSample, SynthConfig};

// Stream tags under a grid's base seed.
const TAG_WORLD: u64 = 1;
const TAG_UNLABELED: u64 = 2;
const TAG_LABELED: u64 = 3;
const TAG_TEST: u64 = 4;
const TAG_SOLVER: u64 = 5;
// Stream tags under a real-data seed.
const TAG_SPLIT: u64 = 11;
const TAG_MASK: u64 = 12;
const TAG_FIT: u64 = 13;
const TAG_TUNE: u64 = 14;

// ---------------------------------------------------------------------------
// Grid specification
// ---------------------------------------------------------------------------

/// Which core solver the grid uses.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GridSolver {
    /// Factored gradient descent; `inner_rank` defaults to `d`.
    Factored {
        #[serde(default)]
        lambda: f64,
        #[serde(default)]
        inner_rank: Option<usize>,
    },
    /// Projected gradient descent under a hard nuclear budget.
    Projected { budget: f64 },
}

impl Default for GridSolver {
    /// Factored with no regularization.
    fn default() -> Self {
        GridSolver::Factored { lambda: 0.0, inner_rank: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Unlabeled sample counts (the M axis).
    pub unlabeled_counts: Vec<usize>,
    /// Labeled sample counts (the N axis).
    pub labeled_counts: Vec<usize>,
    pub runs_per_cell: usize,
    pub world: SynthConfig,
    #[serde(default)]
    pub solver: GridSolver,
    #[serde(default)]
    pub solver_config: SolverConfig,
    /// Fresh labeled draws per run used as the held-out test set.
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    pub base_seed: u64,
}

fn default_test_size() -> usize {
    5000
}

impl GridSpec {
    fn validate(&self) -> Result<()> {
        if self.unlabeled_counts.is_empty() || self.labeled_counts.is_empty() {
            return Err(Error::Config("grid axes must be nonempty".into()));
        }
        if self.unlabeled_counts.iter().any(|&c| c == 0)
            || self.labeled_counts.iter().any(|&c| c == 0)
        {
            return Err(Error::Config("sample counts must be at least 1".into()));
        }
        if self.runs_per_cell == 0 {
            return Err(Error::Config("runs_per_cell must be at least 1".into()));
        }
        if self.test_size == 0 {
            return Err(Error::Config("test_size must be at least 1".into()));
        }
        self.world.validate()
    }
}

/// One grid run: risks, gap and subspace-recovery distances.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunRecord {
    pub m_unlabeled: usize,
    pub n_labeled: usize,
    pub run_index: usize,
    pub train_risk: f64,
    pub test_risk: f64,
    pub gap: f64,
    pub subspace_dist_u: f64,
    pub subspace_dist_v: f64,
    pub seed: u64,
}

/// A run the solver could not finish; kept separate so one bad cell never
/// poisons the grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellFailure {
    pub m_unlabeled: usize,
    pub n_labeled: usize,
    pub run_index: usize,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridOutcome {
    pub records: Vec<RunRecord>,
    pub failures: Vec<CellFailure>,
}

fn run_one_cell(
    spec: &GridSpec,
    m_unlabeled: usize,
    n_labeled: usize,
    run_index: usize,
) -> Result<RunRecord> {
    let base = spec.base_seed;
    let world_seed = rng::derive(base, &[TAG_WORLD, run_index as u64]);
    let world_cfg = SynthConfig { seed: world_seed, ..spec.world.clone() };
    let world = make_world(&world_cfg)?;
    let d = world.d();

    let coords = [m_unlabeled as u64, n_labeled as u64, run_index as u64];
    let path = |tag: u64| -> u64 {
        rng::derive(base, &[tag, coords[0], coords[1], coords[2]])
    };

    let unlabeled = draw_unlabeled(&world, m_unlabeled, path(TAG_UNLABELED));
    let pmf_hat = EmpiricalPmf::from_samples(&unlabeled.unlabeled, world.m(), world.n())?;
    let factors = truncated_svd_auto(&pmf_hat.to_dense(), d, path(TAG_UNLABELED))?;
    let side = SideInfo::from_factors(&factors);

    let labeled = draw_labeled(&world, n_labeled, spec.world.noise_sd, path(TAG_LABELED))?;
    let solver_cfg = SolverConfig { seed: path(TAG_SOLVER), ..spec.solver_config.clone() };
    let loss = LossSpec::Squared;
    let fit = match &spec.solver {
        GridSolver::Factored { lambda, inner_rank } => fit_factored(
            &side,
            &labeled.labeled,
            *lambda,
            inner_rank.unwrap_or(d),
            loss,
            &solver_cfg,
        )?,
        GridSolver::Projected { budget } => {
            fit_projected(&side, &labeled.labeled, *budget, loss, &solver_cfg)?
        }
    };

    let test = draw_labeled(&world, spec.test_size, spec.world.noise_sd, path(TAG_TEST))?;
    let entries: Vec<(usize, usize)> = test.labeled.iter().map(|s| (s.row, s.col)).collect();
    let values: Vec<f64> = test.labeled.iter().map(|s| s.value).collect();
    let preds = imc::predict(&side, &fit.core, &entries, None)?;
    let test_risk = empirical_risk(&preds, &values, loss)?;

    let truth = world.true_subspace()?;
    let dist_u = crate::subspace::procrustes_distance(factors.u(), truth.u())?.distance;
    let dist_v = crate::subspace::procrustes_distance(factors.v(), truth.v())?.distance;

    Ok(RunRecord {
        m_unlabeled,
        n_labeled,
        run_index,
        train_risk: fit.train_risk,
        test_risk,
        gap: test_risk - fit.train_risk,
        subspace_dist_u: dist_u,
        subspace_dist_v: dist_v,
        seed: world_seed,
    })
}

/// Run the full grid with rayon's current thread pool.
pub fn run_grid(spec: &GridSpec) -> Result<GridOutcome> {
    run_grid_with_jobs(spec, 0)
}

/// Run the full grid on `jobs` worker threads (0 means the default pool).
/// Records come back sorted by `(m_unlabeled, n_labeled, run_index)`
/// regardless of scheduling, so output bytes never depend on parallelism.
pub fn run_grid_with_jobs(spec: &GridSpec, jobs: usize) -> Result<GridOutcome> {
    spec.validate()?;
    let mut m_values = spec.unlabeled_counts.clone();
    m_values.sort_unstable();
    m_values.dedup();
    let mut n_values = spec.labeled_counts.clone();
    n_values.sort_unstable();
    n_values.dedup();

    let mut tasks = Vec::new();
    for &m in &m_values {
        for &n in &n_values {
            for run in 0..spec.runs_per_cell {
                tasks.push((m, n, run));
            }
        }
    }

    let execute = || -> Vec<std::result::Result<RunRecord, CellFailure>> {
        tasks
            .par_iter()
            .map(|&(m, n, run)| {
                run_one_cell(spec, m, n, run).map_err(|e| CellFailure {
                    m_unlabeled: m,
                    n_labeled: n,
                    run_index: run,
                    message: e.to_string(),
                })
            })
            .collect()
    };

    let results = if jobs == 0 {
        execute()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot build a {jobs}-thread pool: {e}")))?;
        pool.install(execute)
    };

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(f) => failures.push(f),
        }
    }
    records.sort_by_key(|r| (r.m_unlabeled, r.n_labeled, r.run_index));
    failures.sort_by_key(|f| (f.m_unlabeled, f.n_labeled, f.run_index));
    for f in &failures {
        log::warn!(
            "grid cell (M = {}, N = {}, run {}) failed: {}",
            f.m_unlabeled,
            f.n_labeled,
            f.run_index,
            f.message
        );
    }
    Ok(GridOutcome { records, failures })
}

// ---------------------------------------------------------------------------
// Gap decomposition
// ---------------------------------------------------------------------------

fn mean_gap(records: &[RunRecord], m: usize, n: usize) -> Result<f64> {
    let gaps: Vec<f64> = records
        .iter()
        .filter(|r| r.m_unlabeled == m && r.n_labeled == n)
        .map(|r| r.gap)
        .collect();
    if gaps.is_empty() {
        return Err(Error::Argument(format!(
            "no records for grid cell (M = {m}, N = {n})"
        )));
    }
    Ok(gaps.iter().sum::<f64>() / gaps.len() as f64)
}

/// `GAP(M, n_max) + GAP(m_max, N)`: the subspace-estimation error read off at
/// the most labels, plus the core-estimation error read off at the most
/// unlabeled samples.
pub fn disentangled_estimate(
    records: &[RunRecord],
    m: usize,
    n: usize,
    m_max: usize,
    n_max: usize,
) -> Result<f64> {
    Ok(mean_gap(records, m, n_max)? + mean_gap(records, m_max, n)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub m_unlabeled: usize,
    pub n_labeled: usize,
    pub mean_gap: f64,
    pub disentangled_estimate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub pearson_r: f64,
    pub points: Vec<ScatterPoint>,
}

/// Pearson correlation; errors when either series has zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Argument(
            "correlation needs two equal-length series of at least 2 points".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::Numerical(
            "correlation undefined: a series has zero variance".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Per-cell (mean gap, disentangled estimate) pairs over the whole grid and
/// their Pearson correlation.
pub fn correlation_report(records: &[RunRecord], m_max: usize, n_max: usize) -> Result<CorrelationReport> {
    let mut cells: Vec<(usize, usize)> =
        records.iter().map(|r| (r.m_unlabeled, r.n_labeled)).collect();
    cells.sort_unstable();
    cells.dedup();
    if cells.is_empty() {
        return Err(Error::Argument("no records".into()));
    }
    let mut points = Vec::with_capacity(cells.len());
    for (m, n) in cells {
        points.push(ScatterPoint {
            m_unlabeled: m,
            n_labeled: n,
            mean_gap: mean_gap(records, m, n)?,
            disentangled_estimate: disentangled_estimate(records, m, n, m_max, n_max)?,
        });
    }
    let gaps: Vec<f64> = points.iter().map(|p| p.mean_gap).collect();
    let estimates: Vec<f64> = points.iter().map(|p| p.disentangled_estimate).collect();
    Ok(CorrelationReport {
        pearson_r: pearson(&gaps, &estimates)?,
        points,
    })
}

// ---------------------------------------------------------------------------
// Rating data
// ---------------------------------------------------------------------------

/// A ratings table with dense 0-based user/item indices.
#[derive(Debug, Clone)]
pub struct RatingDataset {
    pub user_count: usize,
    pub item_count: usize,
    /// (user, item, rating) with dense indices.
    pub ratings: Vec<LabeledSample>,
    /// Dense index -> original id.
    pub user_ids: Vec<u64>,
    pub item_ids: Vec<u64>,
}

impl RatingDataset {
    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    pub fn rating_range(&self) -> (f64, f64) {
        let lo = self.ratings.iter().map(|s| s.value).fold(f64::INFINITY, f64::min);
        let hi = self
            .ratings
            .iter()
            .map(|s| s.value)
            .fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

/// Load a tab-separated `user item rating timestamp` ratings file (the
/// canonical MovieLens-100K `u.data` layout). Ids are re-indexed to dense
/// 0-based ranges; a cardinality mismatch against the canonical 943 users /
/// 1682 items / 100000 ratings is logged, not fatal.
pub fn load_ml100k(path: &Path) -> Result<RatingDataset> {
    let content = std::fs::read_to_string(path)?;
    let mut triples: Vec<(u64, u64, f64)> = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let user = parse_field(fields.next(), line_no, "user id")?;
        let item = parse_field(fields.next(), line_no, "item id")?;
        let rating: f64 = match fields.next() {
            Some(f) => f.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("bad rating `{f}`"),
            })?,
            None => {
                return Err(Error::Parse {
                    line: line_no,
                    message: "missing rating field".into(),
                })
            }
        };
        if !rating.is_finite() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("non-finite rating {rating}"),
            });
        }
        triples.push((user, item, rating));
    }
    if triples.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: format!("no ratings found in {}", path.display()),
        });
    }

    let mut user_ids: Vec<u64> = triples.iter().map(|t| t.0).collect();
    user_ids.sort_unstable();
    user_ids.dedup();
    let mut item_ids: Vec<u64> = triples.iter().map(|t| t.1).collect();
    item_ids.sort_unstable();
    item_ids.dedup();
    let user_index: std::collections::HashMap<u64, usize> =
        user_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let item_index: std::collections::HashMap<u64, usize> =
        item_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();

    let ratings: Vec<LabeledSample> = triples
        .iter()
        .map(|&(u, i, r)| LabeledSample {
            row: user_index[&u],
            col: item_index[&i],
            value: r,
        })
        .collect();

    if (user_ids.len(), item_ids.len(), ratings.len()) != (943, 1682, 100_000) {
        log::warn!(
            "dataset cardinality ({} users, {} items, {} ratings) differs from canonical \
             MovieLens-100K (943, 1682, 100000)",
            user_ids.len(),
            item_ids.len(),
            ratings.len()
        );
    }

    Ok(RatingDataset {
        user_count: user_ids.len(),
        item_count: item_ids.len(),
        ratings,
        user_ids,
        item_ids,
    })
}

fn parse_field(field: Option<&str>, line: usize, what: &str) -> Result<u64> {
    match field {
        Some(f) => f.trim().parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad {what} `{f}`"),
        }),
        None => Err(Error::Parse {
            line,
            message: format!("missing {what}"),
        }),
    }
}

/// Split interactions into labeled and unlabeled parts: an exact-count
/// uniformly random `ceil(p * len)`-subset loses its rating and is kept only
/// as entry pairs.
pub fn mask_labels(
    interactions: &[LabeledSample],
    p: f64,
    seed: u64,
) -> Result<(Vec<LabeledSample>, Vec<(usize, usize)>)> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Argument(format!("mask fraction must be in [0, 1], got {p}")));
    }
    let remove = (p * interactions.len() as f64).ceil() as usize;
    let remove = remove.min(interactions.len());
    let mut order: Vec<usize> = (0..interactions.len()).collect();
    let mut rng = rng::stream_rng(seed, &[TAG_MASK]);
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let mut unlabeled_idx = order[..remove].to_vec();
    let mut labeled_idx = order[remove..].to_vec();
    unlabeled_idx.sort_unstable();
    labeled_idx.sort_unstable();
    let unlabeled = unlabeled_idx
        .into_iter()
        .map(|i| (interactions[i].row, interactions[i].col))
        .collect();
    let labeled = labeled_idx.into_iter().map(|i| interactions[i]).collect();
    Ok((labeled, unlabeled))
}

/// Root mean squared error.
pub fn rmse(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    Ok(empirical_risk(predictions, truths, LossSpec::Squared)?.sqrt())
}

// ---------------------------------------------------------------------------
// Real-data protocol
// ---------------------------------------------------------------------------

fn default_real_d() -> usize {
    40
}

fn default_real_lambda() -> f64 {
    0.005
}

/// Rating-scale fits sit near a saddle at the origin; a larger random
/// initialization and a tighter stop than the library-wide defaults are
/// needed for the factored solver to leave it.
fn default_real_solver() -> SolverConfig {
    SolverConfig {
        max_iters: 6000,
        tolerance: 1e-10,
        init_scale: Some(0.3),
        ..SolverConfig::default()
    }
}

fn default_true() -> bool {
    true
}

/// Method selection plus per-method configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name")]
pub enum RealMethod {
    /// Subspace SVD on all train interactions, factored core fit on the
    /// labeled ones, predictions clipped to the observed label range.
    #[serde(rename = "damc")]
    Damc {
        #[serde(default = "default_real_d")]
        d: usize,
        #[serde(default = "default_real_lambda")]
        lambda: f64,
        #[serde(default)]
        inner_rank: Option<usize>,
        #[serde(default = "default_real_solver")]
        solver: SolverConfig,
        /// Fit residuals against the global labeled mean.
        #[serde(default = "default_true")]
        center_labels: bool,
    },
    /// SoftImpute on the labeled matrix alone; `lambda: null` tunes on a
    /// validation split.
    #[serde(rename = "softimpute")]
    SoftImpute {
        #[serde(default)]
        config: SoftImputeConfig,
        #[serde(default)]
        lambda: Option<f64>,
    },
    /// User-based KNN on the labeled ratings alone.
    #[serde(rename = "userknn")]
    UserKnn {
        #[serde(default)]
        config: KnnConfig,
    },
}

impl RealMethod {
    pub fn name(&self) -> &'static str {
        match self {
            RealMethod::Damc { .. } => "damc",
            RealMethod::SoftImpute { .. } => "softimpute",
            RealMethod::UserKnn { .. } => "userknn",
        }
    }
}

fn default_train_fraction() -> f64 {
    0.8
}

fn default_dataset_name() -> String {
    "ml-100k".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RealDataConfig {
    pub dataset_path: PathBuf,
    #[serde(default = "default_dataset_name")]
    pub dataset_name: String,
    /// Fraction of training labels removed (kept as bare interactions).
    pub label_removal_p: f64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    pub method: RealMethod,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RealResultRow {
    pub dataset: String,
    pub method: String,
    pub p: f64,
    pub rmse: f64,
    pub seed: u64,
}

/// Run one (method, p) cell of the masked-label protocol.
pub fn run_real(cfg: &RealDataConfig) -> Result<RealResultRow> {
    if !(0.0..=1.0).contains(&cfg.label_removal_p) {
        return Err(Error::Config(format!(
            "label_removal_p must be in [0, 1], got {}",
            cfg.label_removal_p
        )));
    }
    if !(0.0..=1.0).contains(&cfg.train_fraction) {
        return Err(Error::Config(format!(
            "train_fraction must be in [0, 1], got {}",
            cfg.train_fraction
        )));
    }
    let dataset = load_ml100k(&cfg.dataset_path)?;
    let (m, n) = (dataset.user_count, dataset.item_count);

    // Seeded exact-count train/test interaction split.
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut split_rng = rng::stream_rng(cfg.seed, &[TAG_SPLIT]);
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut split_rng);
    let train_count = (cfg.train_fraction * dataset.len() as f64).round() as usize;
    let train_count = train_count.min(dataset.len());
    let train: Vec<LabeledSample> = order[..train_count]
        .iter()
        .map(|&i| dataset.ratings[i])
        .collect();
    let test: Vec<LabeledSample> = order[train_count..]
        .iter()
        .map(|&i| dataset.ratings[i])
        .collect();
    if test.is_empty() {
        return Err(Error::Config(
            "train_fraction leaves no test interactions".into(),
        ));
    }

    let (labeled_train, unlabeled_train) =
        mask_labels(&train, cfg.label_removal_p, rng::derive(cfg.seed, &[TAG_MASK]))?;

    let test_entries: Vec<(usize, usize)> = test.iter().map(|s| (s.row, s.col)).collect();
    let test_values: Vec<f64> = test.iter().map(|s| s.value).collect();

    let predictions = match &cfg.method {
        RealMethod::Damc { d, lambda, inner_rank, solver, center_labels } => {
            if labeled_train.is_empty() {
                return Err(Error::Argument(
                    "no labeled training data left to fit the core matrix (p = 1?)".into(),
                ));
            }
            // Every train interaction, labeled or not, is a draw from the
            // sampling distribution.
            let mut all_pairs: Vec<(usize, usize)> =
                labeled_train.iter().map(|s| (s.row, s.col)).collect();
            all_pairs.extend_from_slice(&unlabeled_train);
            let pmf = EmpiricalPmf::from_samples(&all_pairs, m, n)?;
            let factors =
                truncated_svd_auto(&pmf.to_dense(), *d, rng::derive(cfg.seed, &[TAG_FIT]))?;
            let side = SideInfo::from_factors(&factors);

            let mean = if *center_labels {
                labeled_train.iter().map(|s| s.value).sum::<f64>() / labeled_train.len() as f64
            } else {
                0.0
            };
            let shifted: Vec<LabeledSample> = labeled_train
                .iter()
                .map(|s| LabeledSample { value: s.value - mean, ..*s })
                .collect();
            let solver_cfg = SolverConfig { seed: rng::derive(cfg.seed, &[TAG_FIT, 1]), ..solver.clone() };
            let fit = fit_factored(
                &side,
                &shifted,
                *lambda,
                inner_rank.unwrap_or(*d),
                LossSpec::Squared,
                &solver_cfg,
            )?;
            let (lo, hi) = {
                let lo = labeled_train.iter().map(|s| s.value).fold(f64::INFINITY, f64::min);
                let hi = labeled_train
                    .iter()
                    .map(|s| s.value)
                    .fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            };
            imc::predict(&side, &fit.core, &test_entries, None)?
                .into_iter()
                .map(|p| (p + mean).clamp(lo, hi))
                .collect()
        }
        RealMethod::SoftImpute { config, lambda } => {
            if labeled_train.is_empty() {
                return Err(Error::Argument(
                    "no labeled training data left for softimpute (p = 1?)".into(),
                ));
            }
            let completion = match lambda {
                Some(l) => {
                    let cfg_fixed = SoftImputeConfig { lambda: *l, ..config.clone() };
                    softimpute_fit(&labeled_train, m, n, &cfg_fixed)?
                }
                None => {
                    softimpute_fit_tuned(&labeled_train, m, n, config, rng::derive(cfg.seed, &[TAG_TUNE]))?
                        .0
                }
            };
            test_entries
                .iter()
                .map(|&(i, j)| completion.matrix[(i, j)])
                .collect()
        }
        RealMethod::UserKnn { config } => {
            if labeled_train.is_empty() {
                return Err(Error::Argument(
                    "no labeled training data left for userknn (p = 1?)".into(),
                ));
            }
            knn_predict(&labeled_train, &test_entries, config)?
        }
    };

    Ok(RealResultRow {
        dataset: cfg.dataset_name.clone(),
        method: cfg.method.name().to_string(),
        p: cfg.label_removal_p,
        rmse: rmse(&predictions, &test_values)?,
        seed: cfg.seed,
    })
}

// ---------------------------------------------------------------------------
// CSV schemas
// ---------------------------------------------------------------------------

/// Canonical float formatting: 10 significant digits, scientific.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.9e}")
}

pub const GRID_CSV_HEADER: &str =
    "m_unlabeled,n_labeled,run,train_risk,test_risk,gap,dist_u,dist_v,seed";

pub fn grid_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(GRID_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.m_unlabeled,
            r.n_labeled,
            r.run_index,
            fmt_float(r.train_risk),
            fmt_float(r.test_risk),
            fmt_float(r.gap),
            fmt_float(r.subspace_dist_u),
            fmt_float(r.subspace_dist_v),
            r.seed,
        ));
    }
    out
}

pub const SCATTER_CSV_HEADER: &str = "m_unlabeled,n_labeled,mean_gap,disentangled_estimate";

pub fn scatter_csv(points: &[ScatterPoint]) -> String {
    let mut out = String::from(SCATTER_CSV_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.m_unlabeled,
            p.n_labeled,
            fmt_float(p.mean_gap),
            fmt_float(p.disentangled_estimate),
        ));
    }
    out
}

pub const REAL_CSV_HEADER: &str = "dataset,method,p,rmse,seed";

pub fn real_csv_row(row: &RealResultRow) -> String {
    format!(
        "{},{},{},{},{}\n",
        row.dataset,
        row.method,
        fmt_float(row.p),
        fmt_float(row.rmse),
        row.seed
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::io::Write;

    fn tiny_spec() -> GridSpec {
        GridSpec {
            unlabeled_counts: vec![400, 200],
            labeled_counts: vec![20, 40],
            runs_per_cell: 3,
            world: SynthConfig {
                m: 20,
                n: 20,
                d: 2,
                core_frobenius_norm: 2.0,
                noise_sd: 0.05,
                seed: 0,
                ..SynthConfig::default()
            },
            solver: GridSolver::default(),
            solver_config: SolverConfig { max_iters: 300, ..SolverConfig::default() },
            test_size: 200,
            base_seed: 7,
        }
    }

    #[test]
    fn grid_cardinality_and_ordering() {
        let outcome = run_grid(&tiny_spec()).unwrap();
        assert!(outcome.failures.is_empty());
        assert_eq!(outcome.records.len(), 2 * 2 * 3);
        let mut keys: Vec<_> = outcome
            .records
            .iter()
            .map(|r| (r.m_unlabeled, r.n_labeled, r.run_index))
            .collect();
        let sorted = {
            let mut s = keys.clone();
            s.sort_unstable();
            s
        };
        assert_eq!(keys, sorted);
        keys.dedup();
        assert_eq!(keys.len(), 12);
    }

    #[test]
    fn grid_gap_arithmetic_exact() {
        let outcome = run_grid(&tiny_spec()).unwrap();
        for r in &outcome.records {
            assert_eq!(r.gap, r.test_risk - r.train_risk);
            assert!(r.subspace_dist_u >= 0.0);
            assert!(r.subspace_dist_v >= 0.0);
        }
    }

    #[test]
    fn grid_deterministic_across_jobs() {
        let spec = tiny_spec();
        let a = run_grid_with_jobs(&spec, 1).unwrap();
        let b = run_grid_with_jobs(&spec, 2).unwrap();
        assert_eq!(grid_csv(&a.records), grid_csv(&b.records));
        let c = run_grid_with_jobs(&spec, 1).unwrap();
        assert_eq!(grid_csv(&a.records), grid_csv(&c.records));
    }

    fn fake_record(m: usize, n: usize, run: usize, gap: f64) -> RunRecord {
        RunRecord {
            m_unlabeled: m,
            n_labeled: n,
            run_index: run,
            train_risk: 0.0,
            test_risk: gap,
            gap,
            subspace_dist_u: 0.0,
            subspace_dist_v: 0.0,
            seed: 0,
        }
    }

    #[test]
    fn disentangled_estimate_is_the_two_anchor_sum() {
        let records = vec![
            fake_record(10, 1, 0, 0.5),
            fake_record(10, 8, 0, 0.1),
            fake_record(90, 1, 0, 0.05),
            fake_record(90, 8, 0, 0.0),
        ];
        // GAP(10, 8) + GAP(90, 1) = 0.1 + 0.05.
        let est = disentangled_estimate(&records, 10, 1, 90, 8).unwrap();
        assert_relative_eq!(est, 0.15);
        // At the anchor cell the two terms coincide: 2 * GAP(90, 8).
        let est = disentangled_estimate(&records, 90, 8, 90, 8).unwrap();
        assert_relative_eq!(est, 0.0);
        let records2 = vec![
            fake_record(90, 8, 0, 0.2),
            fake_record(10, 8, 0, 0.3),
            fake_record(90, 1, 0, 0.4),
        ];
        let est = disentangled_estimate(&records2, 90, 8, 90, 8).unwrap();
        assert_relative_eq!(est, 0.4);
        // Missing cell names the cell.
        let err = disentangled_estimate(&records2, 11, 1, 90, 8).unwrap_err();
        assert!(err.to_string().contains("M = 11"), "{err}");
    }

    #[test]
    fn correlation_perfect_when_gaps_are_additive() {
        // gap(M, N) = a(M) + b(N) with a(m_max) = b(n_max) = 0 makes the
        // estimate equal the gap exactly.
        let a = |m: usize| if m == 90 { 0.0 } else { 0.4 };
        let b = |n: usize| if n == 8 { 0.0 } else { 0.2 };
        let mut records = Vec::new();
        for &m in &[10usize, 90] {
            for &n in &[1usize, 8] {
                records.push(fake_record(m, n, 0, a(m) + b(n)));
            }
        }
        let report = correlation_report(&records, 90, 8).unwrap();
        assert_relative_eq!(report.pearson_r, 1.0, epsilon = 1e-12);
        assert_eq!(report.points.len(), 4);
        for p in &report.points {
            assert_relative_eq!(p.mean_gap, p.disentangled_estimate, epsilon = 1e-12);
        }
    }

    #[test]
    fn correlation_undefined_for_constant_gaps() {
        let mut records = Vec::new();
        for &m in &[10usize, 90] {
            for &n in &[1usize, 8] {
                records.push(fake_record(m, n, 0, 0.25));
            }
        }
        assert!(correlation_report(&records, 90, 8).is_err());
    }

    #[test]
    fn pearson_examples() {
        assert_relative_eq!(
            pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(),
            -1.0,
            epsilon = 1e-12
        );
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    // -- rating data -----------------------------------------------------------

    fn write_fixture(content: &str) -> std::path::PathBuf {
        use std::sync::atomic::{AtomicU64, Ordering};
        static COUNTER: AtomicU64 = AtomicU64::new(0);
        let mut path = std::env::temp_dir();
        path.push(format!(
            "damc-fixture-{}-{}.tsv",
            std::process::id(),
            COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    #[test]
    fn ml100k_fixture_parses_exactly() {
        let path = write_fixture("1\t10\t5\t874965758\n2\t10\t3\t876893171\n1\t20\t4\t878542960\n");
        let ds = load_ml100k(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(ds.user_count, 2);
        assert_eq!(ds.item_count, 2);
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.user_ids, vec![1, 2]);
        assert_eq!(ds.item_ids, vec![10, 20]);
        // (user 1, item 10, 5.0) maps to dense (0, 0).
        assert_eq!(ds.ratings[0], LabeledSample { row: 0, col: 0, value: 5.0 });
        assert_eq!(ds.ratings[1], LabeledSample { row: 1, col: 0, value: 3.0 });
        assert_eq!(ds.ratings[2], LabeledSample { row: 0, col: 1, value: 4.0 });
        assert_eq!(ds.rating_range(), (3.0, 5.0));
    }

    #[test]
    fn ml100k_rejects_empty_and_malformed() {
        let path = write_fixture("");
        let err = load_ml100k(&path).unwrap_err();
        std::fs::remove_file(&path).ok();
        assert!(matches!(err, Error::Parse { .. }));

        let path = write_fixture("1\t10\t5\n2\tbroken\n");
        let err = load_ml100k(&path).unwrap_err();
        std::fs::remove_file(&path).ok();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    // -- masking ----------------------------------------------------------------

    fn fake_interactions(count: usize) -> Vec<LabeledSample> {
        (0..count)
            .map(|k| LabeledSample { row: k / 10, col: k % 10, value: (k % 5) as f64 + 1.0 })
            .collect()
    }

    #[test]
    fn masking_is_exact_count() {
        let data = fake_interactions(100);
        let (labeled, unlabeled) = mask_labels(&data, 0.0, 1).unwrap();
        assert_eq!((labeled.len(), unlabeled.len()), (100, 0));
        let (labeled, unlabeled) = mask_labels(&data, 1.0, 1).unwrap();
        assert_eq!((labeled.len(), unlabeled.len()), (0, 100));
        let (labeled, unlabeled) = mask_labels(&data, 0.5, 1).unwrap();
        assert_eq!((labeled.len(), unlabeled.len()), (50, 50));
        assert!(mask_labels(&data, 1.5, 1).is_err());
    }

    #[test]
    fn masking_preserves_the_interaction_multiset() {
        let data = fake_interactions(57);
        let (labeled, unlabeled) = mask_labels(&data, 0.3, 9).unwrap();
        let mut recovered: Vec<(usize, usize)> = labeled
            .iter()
            .map(|s| (s.row, s.col))
            .chain(unlabeled.iter().copied())
            .collect();
        recovered.sort_unstable();
        let mut original: Vec<(usize, usize)> = data.iter().map(|s| (s.row, s.col)).collect();
        original.sort_unstable();
        assert_eq!(recovered, original);
        // Deterministic given seed.
        let again = mask_labels(&data, 0.3, 9).unwrap();
        assert_eq!(again.0, labeled);
        assert_eq!(again.1, unlabeled);
    }

    // -- rmse ---------------------------------------------------------------------

    #[test]
    fn rmse_examples_and_oracle() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_relative_eq!(rmse(&[2.0, 3.0], &[1.0, 2.0]).unwrap(), 1.0);
        let preds = [1.5, -0.5, 2.0];
        let truths = [1.0, 0.0, 0.0];
        let direct = ((0.25 + 0.25 + 4.0) / 3.0f64).sqrt();
        assert_relative_eq!(rmse(&preds, &truths).unwrap(), direct, epsilon = 1e-12);
        assert!(rmse(&[1.0], &[]).is_err());
    }

    // -- real protocol on a small fixture ------------------------------------------

    fn synthetic_ratings_file(users: usize, items: usize, seed: u64) -> std::path::PathBuf {
        use rand::Rng;
        let mut rng = rng::stream_rng(seed, &[55]);
        let mut content = String::new();
        for u in 1..=users {
            for i in 1..=items {
                if rng.random::<f64>() < 0.6 {
                    let rating = rng.random_range(1..=5);
                    content.push_str(&format!("{u}\t{i}\t{rating}\t0\n"));
                }
            }
        }
        write_fixture(&content)
    }

    #[test]
    fn run_real_smoke_all_methods() {
        let path = synthetic_ratings_file(30, 25, 3);
        for method in [
            RealMethod::Damc {
                d: 3,
                lambda: 0.01,
                inner_rank: None,
                solver: SolverConfig { max_iters: 200, ..SolverConfig::default() },
                center_labels: true,
            },
            RealMethod::SoftImpute { config: SoftImputeConfig::default(), lambda: Some(0.5) },
            RealMethod::UserKnn { config: KnnConfig { k: 5, min_overlap: 2, ..KnnConfig::default() } },
        ] {
            let cfg = RealDataConfig {
                dataset_path: path.clone(),
                dataset_name: "fixture".into(),
                label_removal_p: 0.5,
                train_fraction: 0.8,
                method,
                seed: 11,
            };
            let row = run_real(&cfg).unwrap();
            assert!(row.rmse.is_finite() && row.rmse > 0.0);
            assert_eq!(row.p, 0.5);
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn run_real_deterministic() {
        let path = synthetic_ratings_file(20, 20, 5);
        let cfg = RealDataConfig {
            dataset_path: path.clone(),
            dataset_name: "fixture".into(),
            label_removal_p: 0.4,
            train_fraction: 0.8,
            method: RealMethod::UserKnn { config: KnnConfig { k: 3, min_overlap: 2, ..KnnConfig::default() } },
            seed: 21,
        };
        let a = run_real(&cfg).unwrap();
        let b = run_real(&cfg).unwrap();
        assert_eq!(a, b);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn run_real_rejects_degenerate_configs() {
        let path = synthetic_ratings_file(10, 10, 7);
        let base = RealDataConfig {
            dataset_path: path.clone(),
            dataset_name: "fixture".into(),
            label_removal_p: 1.0,
            train_fraction: 0.8,
            method: RealMethod::Damc {
                d: 2,
                lambda: 0.0,
                inner_rank: None,
                solver: SolverConfig::default(),
                center_labels: true,
            },
            seed: 1,
        };
        // p = 1 leaves nothing to fit the core on.
        assert!(run_real(&base).is_err());
        let bad_p = RealDataConfig { label_removal_p: 1.2, ..base.clone() };
        assert!(run_real(&bad_p).is_err());
        std::fs::remove_file(&path).ok();
    }

    // -- csv -------------------------------------------------------------------------

    #[test]
    fn csv_headers_and_layout() {
        let records = vec![fake_record(10, 2, 0, 0.125)];
        let csv = grid_csv(&records);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "m_unlabeled,n_labeled,run,train_risk,test_risk,gap,dist_u,dist_v,seed"
        );
        let row = lines.next().unwrap();
        assert!(row.starts_with("10,2,0,"));
        assert!(row.contains("1.250000000e-1"));

        let points = vec![ScatterPoint {
            m_unlabeled: 10,
            n_labeled: 2,
            mean_gap: 0.5,
            disentangled_estimate: 0.25,
        }];
        let csv = scatter_csv(&points);
        assert!(csv.starts_with("m_unlabeled,n_labeled,mean_gap,disentangled_estimate\n"));
        assert!(csv.contains("10,2,5.000000000e-1,2.500000000e-1"));

        let row = RealResultRow {
            dataset: "ml-100k".into(),
            method: "damc".into(),
            p: 0.9,
            rmse: 1.0,
            seed: 3,
        };
        assert_eq!(
            real_csv_row(&row),
            "ml-100k,damc,9.000000000e-1,1.000000000e0,3\n"
        );
    }
}
