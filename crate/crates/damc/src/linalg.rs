//! Small shared linear-algebra helpers on top of nalgebra.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Iteration cap for the implicit-shift SVD.
const SVD_MAX_ITERS: usize = 10_000;

/// Relative deflation threshold for the implicit-shift SVD. Tightening this
/// to machine epsilon makes nalgebra's iteration mis-converge on exactly
/// rank-deficient inputs (it can report a leading singular value larger than
/// the Frobenius norm); 1e-12 is strict enough for every tolerance in this
/// crate and deflates cleanly.
const SVD_EPS: f64 = 1e-12;

/// Full SVD with explicit failure reporting.
///
/// Returns `(u, sigma, v)` with singular values sorted in descending order and
/// `u`, `v` column-permuted to match.
pub(crate) fn full_svd(matrix: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let (m, n) = matrix.shape();
    let svd = matrix
        .clone()
        .try_svd(true, true, SVD_EPS, SVD_MAX_ITERS)
        .ok_or_else(|| {
            Error::Numerical(format!(
                "SVD of a {m}x{n} matrix did not converge within {SVD_MAX_ITERS} iterations \
                 (largest entry {:.3e})",
                matrix.amax()
            ))
        })?;
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");

    let k = svd.singular_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .expect("singular values are finite")
    });

    let sigma: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u_sorted = DMatrix::from_fn(m, k, |r, c| u[(r, order[c])]);
    let v_sorted = DMatrix::from_fn(n, k, |r, c| v_t[(order[c], r)]);
    Ok((u_sorted, sigma, v_sorted))
}

/// Spectral norm (largest singular value).
pub(crate) fn spectral_norm(matrix: &DMatrix<f64>) -> Result<f64> {
    let (_, sigma, _) = full_svd(matrix)?;
    Ok(sigma.first().copied().unwrap_or(0.0))
}

/// Nuclear norm (sum of singular values).
pub(crate) fn nuclear_norm(matrix: &DMatrix<f64>) -> Result<f64> {
    let (_, sigma, _) = full_svd(matrix)?;
    Ok(sigma.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    #[test]
    fn svd_sorted_and_reconstructs() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let (u, sigma, v) = full_svd(&a).unwrap();
        assert!(sigma[0] >= sigma[1]);
        let rec = &u * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(sigma.clone())) * v.transpose();
        assert_relative_eq!(rec, a, epsilon = 1e-10);
    }

    #[test]
    fn norms_on_diagonal_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -1.0]);
        assert_relative_eq!(spectral_norm(&a).unwrap(), 3.0, epsilon = 1e-12);
        assert_relative_eq!(nuclear_norm(&a).unwrap(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn svd_handles_exactly_rank_deficient_input() {
        // Regression: a rank-1 4x4 matrix whose leading singular value the
        // implicit-shift iteration overestimates at machine-epsilon deflation
        // thresholds. The nuclear norm of a rank-1 matrix is its Frobenius
        // norm.
        let u = DVector::from_vec(vec![0.31, -0.52, 0.11, 0.79]);
        let v = DVector::from_vec(vec![-0.44, 0.23, 0.86, -0.09]);
        let p = (&u * v.transpose()).scale(0.394 / (u.norm() * v.norm()));
        let nn = nuclear_norm(&p).unwrap();
        assert_relative_eq!(nn, p.norm(), max_relative = 1e-9);
        let sn = spectral_norm(&p).unwrap();
        assert_relative_eq!(sn, p.norm(), max_relative = 1e-9);
    }
}
