//! Shared-subspace estimation from unlabeled entry samples.
//!
//! The estimation pipeline is: accumulate unlabeled draws into an empirical
//! PMF `O_M`, take its rank-`d` truncated SVD, and rescale the singular-vector
//! blocks into side-information matrices `X = sqrt(m/d)·U`, `Y = sqrt(n/d)·V`.
//! This module also carries the diagnostics used by the theory checks: the
//! rotation-minimized subspace distance and the spectral-gap condition number
//! of a sampling distribution.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;

/// Matrices at most this wide go through the dense Golub–Kahan SVD; larger
/// ones use the randomized range finder.
pub const DENSE_SVD_LIMIT: usize = 2000;

/// Oversampling columns for the randomized range finder.
const RSVD_OVERSAMPLE: usize = 8;
/// Power (subspace) iterations for the randomized range finder.
const RSVD_POWER_ITERS: usize = 10;

/// Eigengap below which condition-number diagnostics are refused.
pub const MIN_EIGENGAP: f64 = 1e-14;

// ---------------------------------------------------------------------------
// Empirical PMF
// ---------------------------------------------------------------------------

/// Counts of unlabeled entry draws; the PMF view is `counts / total`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmpiricalPmf {
    m: usize,
    n: usize,
    total: u64,
    /// Nonzero cells sorted by (row, col).
    counts: Vec<(usize, usize, u64)>,
}

impl EmpiricalPmf {
    /// Accumulate a sample list into per-cell counts.
    pub fn from_samples(samples: &[(usize, usize)], m: usize, n: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Argument(
                "empirical PMF requires at least one sample".into(),
            ));
        }
        let mut map = std::collections::HashMap::new();
        for &(i, j) in samples {
            if i >= m || j >= n {
                return Err(Error::Argument(format!(
                    "sample ({i}, {j}) outside a {m}x{n} matrix"
                )));
            }
            *map.entry((i, j)).or_insert(0u64) += 1;
        }
        let mut counts: Vec<(usize, usize, u64)> =
            map.into_iter().map(|((i, j), c)| (i, j, c)).collect();
        counts.sort_unstable();
        Ok(Self {
            m,
            n,
            total: samples.len() as u64,
            counts,
        })
    }

    pub fn nrows(&self) -> usize {
        self.m
    }

    pub fn ncols(&self) -> usize {
        self.n
    }

    /// Number of accumulated samples.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn nnz(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts
            .binary_search_by(|&(r, c, _)| (r, c).cmp(&(i, j)))
            .map(|idx| self.counts[idx].2)
            .unwrap_or(0)
    }

    /// Dense `O_M = counts / total`.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.m, self.n);
        let total = self.total as f64;
        for &(i, j, c) in &self.counts {
            out[(i, j)] = c as f64 / total;
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Truncated SVD
// ---------------------------------------------------------------------------

/// Top-`d` singular triplets of a matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubspaceFactors {
    #[serde(with = "crate::mat_serde")]
    u: DMatrix<f64>,
    sigma: Vec<f64>,
    #[serde(with = "crate::mat_serde")]
    v: DMatrix<f64>,
}

impl SubspaceFactors {
    /// `m x d` matrix of left singular vectors (orthonormal columns).
    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    /// Singular values, nonincreasing.
    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// `n x d` matrix of right singular vectors (orthonormal columns).
    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// `U diag(sigma) V^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&DVector::from_vec(self.sigma.clone())) * self.v.transpose()
    }
}

fn check_rank_arg(d: usize, m: usize, n: usize) -> Result<()> {
    if d < 1 || d > m.min(n) {
        return Err(Error::Argument(format!(
            "truncation rank {d} out of range for a {m}x{n} matrix"
        )));
    }
    Ok(())
}

/// Fix the sign ambiguity of each singular pair: the entry of largest
/// magnitude in `u`'s column is made positive (ties broken by lowest index),
/// and `v`'s column is flipped along with it.
fn canonicalize_signs(u: &mut DMatrix<f64>, v: &mut DMatrix<f64>) {
    for k in 0..u.ncols() {
        let mut best = 0usize;
        let mut best_abs = f64::NEG_INFINITY;
        for r in 0..u.nrows() {
            let a = u[(r, k)].abs();
            if a > best_abs {
                best_abs = a;
                best = r;
            }
        }
        if u[(best, k)] < 0.0 {
            for r in 0..u.nrows() {
                u[(r, k)] = -u[(r, k)];
            }
            for r in 0..v.nrows() {
                v[(r, k)] = -v[(r, k)];
            }
        }
    }
}

/// Rank-`d` truncated SVD through the dense Golub–Kahan path.
pub fn truncated_svd(matrix: &DMatrix<f64>, d: usize) -> Result<SubspaceFactors> {
    let (m, n) = matrix.shape();
    check_rank_arg(d, m, n)?;
    let (u_full, sigma_full, v_full) = linalg::full_svd(matrix)?;
    let mut u = u_full.columns(0, d).into_owned();
    let mut v = v_full.columns(0, d).into_owned();
    canonicalize_signs(&mut u, &mut v);
    Ok(SubspaceFactors {
        u,
        sigma: sigma_full[..d].to_vec(),
        v,
    })
}

/// Rank-`d` truncated SVD via a randomized range finder with power
/// iterations. Intended for matrices too large for the dense path; accuracy
/// at desk scale is checked against the dense oracle in tests.
pub fn truncated_svd_randomized(matrix: &DMatrix<f64>, d: usize, seed: u64) -> Result<SubspaceFactors> {
    randomized_svd(matrix, d, seed, RSVD_POWER_ITERS, RSVD_OVERSAMPLE)
}

pub(crate) fn randomized_svd(
    matrix: &DMatrix<f64>,
    d: usize,
    seed: u64,
    power_iters: usize,
    oversample: usize,
) -> Result<SubspaceFactors> {
    let (m, n) = matrix.shape();
    check_rank_arg(d, m, n)?;
    let k = (d + oversample).min(m.min(n));

    let mut rng = rng::stream_rng(seed, &[0x56D]);
    let omega = DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(&mut rng));

    // Range finder with re-orthonormalization between power steps.
    let mut q = (matrix * omega).qr().q();
    for _ in 0..power_iters {
        let z = (matrix.transpose() * &q).qr().q();
        q = (matrix * z).qr().q();
    }

    // Project and solve the small problem.
    let b = q.transpose() * matrix; // k x n
    let small = truncated_svd(&b, d)?;
    let mut u = &q * small.u;
    let mut v = small.v;
    canonicalize_signs(&mut u, &mut v);
    Ok(SubspaceFactors {
        u,
        sigma: small.sigma,
        v,
    })
}

/// Truncated SVD choosing the dense or randomized path by matrix size.
pub fn truncated_svd_auto(matrix: &DMatrix<f64>, d: usize, seed: u64) -> Result<SubspaceFactors> {
    let (m, n) = matrix.shape();
    if m.min(n) <= DENSE_SVD_LIMIT {
        truncated_svd(matrix, d)
    } else {
        truncated_svd_randomized(matrix, d, seed)
    }
}

// ---------------------------------------------------------------------------
// Side information
// ---------------------------------------------------------------------------

/// Rescaled singular-vector blocks feeding the core-matrix fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SideInfo {
    #[serde(with = "crate::mat_serde")]
    x: DMatrix<f64>,
    #[serde(with = "crate::mat_serde")]
    y: DMatrix<f64>,
    d: usize,
}

impl SideInfo {
    /// `x = sqrt(m/d)·u`, `y = sqrt(n/d)·v`.
    pub fn from_factors(factors: &SubspaceFactors) -> Self {
        let d = factors.rank();
        let m = factors.u.nrows();
        let n = factors.v.nrows();
        Self {
            x: factors.u.scale((m as f64 / d as f64).sqrt()),
            y: factors.v.scale((n as f64 / d as f64).sqrt()),
            d,
        }
    }

    /// Wrap explicit side matrices (columns need not be orthogonal).
    pub fn from_matrices(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        if x.ncols() != y.ncols() {
            return Err(Error::Argument(format!(
                "side matrices have mismatched widths {} and {}",
                x.ncols(),
                y.ncols()
            )));
        }
        let d = x.ncols();
        Ok(Self { x, y, d })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.y.nrows()
    }
}

// ---------------------------------------------------------------------------
// Procrustes distance
// ---------------------------------------------------------------------------

/// Result of aligning one orthonormal basis to another.
#[derive(Debug, Clone)]
pub struct ProcrustesAlignment {
    /// `min_R ||u R - u_star||` in spectral norm.
    pub distance: f64,
    /// The minimizing orthogonal `d x d` rotation.
    pub rotation: DMatrix<f64>,
}

/// Spectral-norm distance between the column spaces of two orthonormal-column
/// matrices, minimized over orthogonal rotations.
///
/// The minimizer is the orthogonal polar factor of `u^T u_star`: writing
/// `u^T u_star = W S Z^T`, the rotation `R = W Z^T` attains
/// `||u R - u_star|| = sqrt(2 - 2 sigma_min(u^T u_star))`, which is optimal.
pub fn procrustes_distance(u: &DMatrix<f64>, u_star: &DMatrix<f64>) -> Result<ProcrustesAlignment> {
    if u.shape() != u_star.shape() {
        return Err(Error::Argument(format!(
            "basis shapes differ: {}x{} vs {}x{}",
            u.nrows(),
            u.ncols(),
            u_star.nrows(),
            u_star.ncols()
        )));
    }
    let cross = u.transpose() * u_star;
    let (w, _sigma, z) = linalg::full_svd(&cross)?;
    let rotation = &w * z.transpose();
    let diff = u * &rotation - u_star;
    let distance = linalg::spectral_norm(&diff)?;
    Ok(ProcrustesAlignment { distance, rotation })
}

// ---------------------------------------------------------------------------
// Spectral diagnostics
// ---------------------------------------------------------------------------

/// Spectral norm, eigengap and condition number of a sampling distribution.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpectralDiagnostics {
    /// `||P||`, the largest singular value.
    pub spectral_norm: f64,
    /// `sigma_d - sigma_(d+1)`; the trailing value is taken as 0 when the
    /// matrix is exactly rank `d` or `d = min(m, n)`.
    pub eigengap: f64,
    /// `||P|| / eigengap`.
    pub condition: f64,
}

/// Diagnostics for the rank-`d` subspace of a PMF.
///
/// Requests `d + 1` singular values so the eigengap is meaningful when the
/// true rank exceeds `d`.
pub fn spectral_diagnostics(pmf: &DMatrix<f64>, d: usize) -> Result<SpectralDiagnostics> {
    let (m, n) = pmf.shape();
    check_rank_arg(d, m, n)?;
    let mass: f64 = pmf.iter().sum();
    if pmf.iter().any(|&v| v < 0.0) || (mass - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!(
            "not a PMF: entries must be nonnegative and sum to 1 (got {mass:.12})"
        )));
    }
    let want = (d + 1).min(m.min(n));
    let factors = truncated_svd_auto(pmf, want, 0)?;
    let spectral_norm = factors.sigma[0];
    let trailing = if want > d { factors.sigma[d] } else { 0.0 };
    let eigengap = factors.sigma[d - 1] - trailing;
    if eigengap < MIN_EIGENGAP {
        return Err(Error::DegenerateEigengap {
            gap: eigengap,
            min: MIN_EIGENGAP,
        });
    }
    Ok(SpectralDiagnostics {
        spectral_norm,
        eigengap,
        condition: spectral_norm / eigengap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    /// Independent singular-value oracle: eigenvalues of A^T A.
    fn singular_values_by_gram(a: &DMatrix<f64>) -> Vec<f64> {
        let gram = a.transpose() * a;
        let eig = nalgebra::SymmetricEigen::new(gram);
        let mut vals: Vec<f64> = eig
            .eigenvalues
            .iter()
            .map(|&l| l.max(0.0).sqrt())
            .collect();
        vals.sort_by(|x, y| y.partial_cmp(x).unwrap());
        vals
    }

    fn random_matrix(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng::stream_rng(seed, &[99]);
        DMatrix::from_fn(m, n, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn empirical_pmf_counts_and_normalizes() {
        let pmf = EmpiricalPmf::from_samples(&[(0, 0); 4], 2, 2).unwrap();
        let dense = pmf.to_dense();
        assert_eq!(dense, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));

        let pmf = EmpiricalPmf::from_samples(&[(0, 0), (1, 1)], 2, 2).unwrap();
        let dense = pmf.to_dense();
        assert_eq!(dense[(0, 0)], 0.5);
        assert_eq!(dense[(1, 1)], 0.5);
        assert_relative_eq!(dense.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert_eq!(pmf.count(0, 1), 0);
        assert_eq!(pmf.count(1, 1), 1);
    }

    #[test]
    fn empirical_pmf_rejects_empty_and_out_of_range() {
        assert!(EmpiricalPmf::from_samples(&[], 2, 2).is_err());
        assert!(EmpiricalPmf::from_samples(&[(2, 0)], 2, 2).is_err());
    }

    #[test]
    fn truncated_svd_rank_one() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let f = truncated_svd(&a, 1).unwrap();
        assert_relative_eq!(f.sigma()[0], 1.0, epsilon = 1e-12);
        // u = ±(1,0)^T, v = ±(0,1)^T; the sign convention makes both positive.
        assert_relative_eq!(f.u()[(0, 0)].abs(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(f.v()[(1, 0)].abs(), 1.0, epsilon = 1e-12);
        assert!(f.u()[(0, 0)] > 0.0);
    }

    #[test]
    fn truncated_svd_identity() {
        let f = truncated_svd(&DMatrix::identity(3, 3), 3).unwrap();
        for s in f.sigma() {
            assert_relative_eq!(*s, 1.0, epsilon = 1e-12);
        }
        let rec = f.reconstruct();
        assert_relative_eq!(rec, DMatrix::identity(3, 3), epsilon = 1e-10);
    }

    #[test]
    fn truncated_svd_matches_gram_oracle() {
        for seed in 0..6u64 {
            let a = random_matrix(20, 15, seed);
            let f = truncated_svd(&a, 5).unwrap();
            let oracle = singular_values_by_gram(&a);
            for k in 0..5 {
                assert_relative_eq!(f.sigma()[k], oracle[k], max_relative = 1e-9);
            }
            // Best rank-5 approximation: residual spectral norm equals sigma_6.
            let resid = &a - f.reconstruct();
            assert_relative_eq!(
                linalg::spectral_norm(&resid).unwrap(),
                oracle[5],
                max_relative = 1e-8
            );
        }
    }

    #[test]
    fn truncated_svd_orthonormal_columns() {
        let a = random_matrix(30, 12, 7);
        let f = truncated_svd(&a, 4).unwrap();
        let gram_u = f.u().transpose() * f.u();
        let gram_v = f.v().transpose() * f.v();
        assert_relative_eq!(gram_u, DMatrix::identity(4, 4), epsilon = 1e-10);
        assert_relative_eq!(gram_v, DMatrix::identity(4, 4), epsilon = 1e-10);
    }

    #[test]
    fn truncated_svd_rejects_bad_rank() {
        let a = DMatrix::identity(3, 3);
        assert!(truncated_svd(&a, 0).is_err());
        assert!(truncated_svd(&a, 4).is_err());
    }

    #[test]
    fn randomized_matches_dense_on_low_rank() {
        // Rank-3 matrix + small tail; randomized path must agree with dense.
        let left = random_matrix(60, 3, 11);
        let right = random_matrix(40, 3, 12);
        let a = &left * right.transpose() + random_matrix(60, 40, 13).scale(1e-6);
        let dense = truncated_svd(&a, 3).unwrap();
        let rand = truncated_svd_randomized(&a, 3, 5).unwrap();
        for k in 0..3 {
            assert_relative_eq!(dense.sigma()[k], rand.sigma()[k], max_relative = 1e-6);
        }
        let d = procrustes_distance(rand.u(), dense.u()).unwrap().distance;
        assert!(d < 1e-5, "subspace mismatch {d}");
    }

    #[test]
    fn side_info_scaling_identity() {
        let a = random_matrix(24, 10, 3);
        let f = truncated_svd(&a, 4).unwrap();
        let side = SideInfo::from_factors(&f);
        let gram = side.x().transpose() * side.x();
        let expected = DMatrix::identity(4, 4).scale(24.0 / 4.0);
        assert_relative_eq!(gram, expected, epsilon = 1e-8);
        let gram_y = side.y().transpose() * side.y();
        assert_relative_eq!(gram_y, DMatrix::identity(4, 4).scale(10.0 / 4.0), epsilon = 1e-8);
    }

    #[test]
    fn side_info_canonical_columns() {
        // u = first d canonical basis columns -> x = sqrt(m/d) [I; 0].
        let m = 6;
        let d = 2;
        let mut u = DMatrix::zeros(m, d);
        u[(0, 0)] = 1.0;
        u[(1, 1)] = 1.0;
        let f = SubspaceFactors {
            u,
            sigma: vec![1.0, 0.5],
            v: DMatrix::identity(4, 2),
        };
        let side = SideInfo::from_factors(&f);
        let scale = (m as f64 / d as f64).sqrt();
        assert_relative_eq!(side.x()[(0, 0)], scale, epsilon = 1e-14);
        assert_relative_eq!(side.x()[(1, 1)], scale, epsilon = 1e-14);
        assert_relative_eq!(side.x()[(2, 0)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn procrustes_zero_for_identical() {
        let a = random_matrix(10, 3, 21);
        let f = truncated_svd(&a, 3).unwrap();
        let d = procrustes_distance(f.u(), f.u()).unwrap().distance;
        assert!(d < 1e-12);
    }

    #[test]
    fn procrustes_orthogonal_one_dim() {
        // d=1 with orthogonal unit vectors: both R = ±1 give distance sqrt(2).
        let u = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let u_star = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let d = procrustes_distance(&u, &u_star).unwrap().distance;
        assert_relative_eq!(d, 2.0f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn procrustes_rotation_invariance() {
        let a = random_matrix(12, 2, 31);
        let f = truncated_svd(&a, 2).unwrap();
        let b = random_matrix(12, 2, 32);
        let g = truncated_svd(&b, 2).unwrap();
        let base = procrustes_distance(f.u(), g.u()).unwrap().distance;
        // Any orthogonal Q applied to the first basis leaves the minimum unchanged.
        let theta: f64 = 0.73;
        let q = DMatrix::from_row_slice(
            2,
            2,
            &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()],
        );
        let rotated = f.u() * q;
        let after = procrustes_distance(&rotated, g.u()).unwrap().distance;
        assert_relative_eq!(base, after, epsilon = 1e-10);
    }

    #[test]
    fn procrustes_beats_sampled_rotations() {
        // Oracle lower-bound check: the returned minimum is no worse than any
        // sampled orthogonal R (rotations and reflections), d = 2.
        let a = random_matrix(9, 2, 41);
        let b = random_matrix(9, 2, 42);
        let fu = truncated_svd(&a, 2).unwrap();
        let gu = truncated_svd(&b, 2).unwrap();
        let best = procrustes_distance(fu.u(), gu.u()).unwrap().distance;
        let mut rng = rng::stream_rng(43, &[7]);
        for _ in 0..10_000 {
            let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let reflect: bool = rng.random();
            let (c, s) = (theta.cos(), theta.sin());
            let r = if reflect {
                DMatrix::from_row_slice(2, 2, &[c, s, s, -c])
            } else {
                DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
            };
            let cand = linalg::spectral_norm(&(fu.u() * r - gu.u())).unwrap();
            assert!(best <= cand + 1e-10, "sampled rotation beat the polar factor");
        }
    }

    #[test]
    fn procrustes_shape_mismatch() {
        let u = DMatrix::identity(4, 2);
        let v = DMatrix::identity(5, 2);
        assert!(procrustes_distance(&u, &v).is_err());
    }

    #[test]
    fn diagnostics_uniform_pmf() {
        let n = 8;
        let pmf = DMatrix::from_element(n, n, 1.0 / (n * n) as f64);
        let diag = spectral_diagnostics(&pmf, 1).unwrap();
        assert_relative_eq!(diag.spectral_norm, 1.0 / n as f64, epsilon = 1e-12);
        assert_relative_eq!(diag.eigengap, 1.0 / n as f64, epsilon = 1e-12);
        assert_relative_eq!(diag.condition, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn diagnostics_constructed_ratio() {
        // Singular values c·(2, 1): condition number exactly 2 at d = 2.
        let u = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let core = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let raw = &u * &core * u.transpose();
        let pmf = raw.clone() / raw.iter().sum::<f64>();
        let diag = spectral_diagnostics(&pmf, 2).unwrap();
        assert_relative_eq!(diag.condition, 2.0, epsilon = 1e-10);
    }

    #[test]
    fn diagnostics_spectral_norm_below_max_marginal() {
        // ||P|| <= p* <= 1 on random normalized PMFs.
        let mut rng = rng::stream_rng(17, &[3]);
        for _ in 0..25 {
            let m = rng.random_range(2..8);
            let n = rng.random_range(2..8);
            let raw = DMatrix::from_fn(m, n, |_, _| rng.random::<f64>());
            let pmf = raw.clone() / raw.iter().sum::<f64>();
            let p_star = (0..m)
                .map(|i| pmf.row(i).iter().sum::<f64>())
                .chain((0..n).map(|j| pmf.column(j).iter().sum::<f64>()))
                .fold(0.0f64, f64::max);
            let norm = linalg::spectral_norm(&pmf).unwrap();
            assert!(norm <= p_star + 1e-10);
            assert!(p_star <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn diagnostics_degenerate_gap() {
        // Two equal singular values at the cut: eigengap 0 at d = 1.
        let pmf = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]);
        match spectral_diagnostics(&pmf, 1) {
            Err(Error::DegenerateEigengap { .. }) => {}
            other => panic!("expected degenerate eigengap, got {other:?}"),
        }
    }

    #[test]
    fn diagnostics_rejects_non_pmf() {
        let m = DMatrix::from_element(2, 2, 0.5);
        assert!(spectral_diagnostics(&m, 1).is_err());
    }

    #[test]
    fn sign_convention_is_deterministic() {
        let a = random_matrix(15, 6, 51);
        let f1 = truncated_svd(&a, 3).unwrap();
        let f2 = truncated_svd(&a.clone(), 3).unwrap();
        assert_eq!(f1.u(), f2.u());
        assert_eq!(f1.v(), f2.v());
        // Largest-magnitude entry of each u column is positive.
        for k in 0..3 {
            let col = f1.u().column(k);
            let (mut best, mut best_abs) = (0, f64::NEG_INFINITY);
            for (r, &val) in col.iter().enumerate() {
                if val.abs() > best_abs {
                    best_abs = val.abs();
                    best = r;
                }
            }
            assert!(col[best] > 0.0);
        }
    }

    #[test]
    fn reconstruction_invariant_under_sign_quotient() {
        // u/v sign flips cancel in the product; reconstruct() must equal the
        // rank-d truncation regardless of convention.
        let a = random_matrix(10, 10, 61);
        let f = truncated_svd(&a, 10).unwrap();
        assert_relative_eq!(f.reconstruct(), a, epsilon = 1e-9);
    }

    #[test]
    fn zero_rows_are_permitted() {
        let samples = vec![(0, 0), (0, 1), (0, 0)];
        let pmf = EmpiricalPmf::from_samples(&samples, 3, 2).unwrap();
        let f = truncated_svd(&pmf.to_dense(), 1).unwrap();
        assert_relative_eq!(f.u()[(1, 0)], 0.0, epsilon = 1e-12);
        assert_relative_eq!(f.u()[(2, 0)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn factors_serialize_round_trip() {
        let a = random_matrix(6, 4, 71);
        let f = truncated_svd(&a, 2).unwrap();
        let json = serde_json::to_string(&f).unwrap();
        let back: SubspaceFactors = serde_json::from_str(&json).unwrap();
        assert_eq!(back.u(), f.u());
        assert_eq!(back.sigma(), f.sigma());
    }
}
