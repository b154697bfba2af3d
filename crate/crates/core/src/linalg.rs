//! Dense solvers: SPD solve for the regularized normal equations and the
//! general real eigenvalue problem.

use nalgebra::{linalg::Schur, DMatrix};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::nn::Mat;

/// Solves `G X = R` for symmetric positive-definite `G` by Cholesky
/// factorization of the Jacobi-scaled matrix `D G D`, `D = diag(G)^{-1/2}`.
///
/// A pivot below `n * eps` (relative to the unit diagonal) is reported as
/// singular.
pub fn solve_spd(g: &Mat, r: &Mat) -> Result<Mat> {
    let n = g.rows();
    if g.cols() != n || r.rows() != n {
        return Err(Error::shape(
            "solve_spd",
            format!("G {:?}, R {:?}", g.shape(), r.shape()),
        ));
    }
    let mut d = vec![0.0; n];
    for i in 0..n {
        let gii = g[(i, i)];
        if !(gii > 0.0) {
            return Err(Error::Singular(format!("diagonal entry {i} is {gii}")));
        }
        d[i] = 1.0 / gii.sqrt();
    }
    // lower-triangular factor of the scaled matrix
    let mut l = Mat::from_fn(n, n, |i, j| if j <= i { g[(i, j)] * d[i] * d[j] } else { 0.0 });
    let tol = n as f64 * f64::EPSILON;
    for j in 0..n {
        let mut pivot = l[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot > tol) {
            return Err(Error::Singular(format!(
                "Cholesky pivot {j} is {pivot:.3e} (tolerance {tol:.1e})"
            )));
        }
        let pivot = pivot.sqrt();
        l[(j, j)] = pivot;
        for i in j + 1..n {
            let mut s = l[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / pivot;
        }
    }
    let mut x = r.clone();
    for c in 0..r.cols() {
        let mut y: Vec<f64> = (0..n).map(|i| r[(i, c)] * d[i]).collect();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[(k, i)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        for i in 0..n {
            x[(i, c)] = y[i] * d[i];
        }
    }
    Ok(x)
}

pub const EIG_MAX_ITERATIONS: usize = 10_000;

/// All eigenvalues of a real square matrix (Hessenberg reduction followed by
/// shifted QR iterations to real Schur form), sorted by modulus, descending.
/// Ties are ordered by real then imaginary part.
pub fn eigenvalues(a: &Mat) -> Result<Vec<Complex64>> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::shape("eigenvalues", format!("{:?} is not square", a.shape())));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("eigenvalue input".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let m = DMatrix::from_row_slice(n, n, a.as_slice());
    let schur = Schur::try_new(m, f64::EPSILON, EIG_MAX_ITERATIONS).ok_or(Error::NonConvergence {
        dim: n,
        iterations: EIG_MAX_ITERATIONS,
    })?;
    let mut eig: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();
    eig.sort_by(|x, y| {
        y.norm()
            .total_cmp(&x.norm())
            .then(y.re.total_cmp(&x.re))
            .then(y.im.total_cmp(&x.im))
    });
    Ok(eig)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spd_solve_matches_known_solution() {
        let g = Mat::from_vec(3, 3, vec![4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]).unwrap();
        let x_true = Mat::from_vec(3, 2, vec![1.0, -1.0, 2.0, 0.5, -3.0, 0.25]).unwrap();
        let r = g.matmul(&x_true).unwrap();
        let mut x = solve_spd(&g, &r).unwrap();
        x.axpy(-1.0, &x_true).unwrap();
        assert!(x.max_abs() < 1e-14);
    }

    #[test]
    fn spd_solve_handles_badly_scaled_columns() {
        let s = [1.0, 1e-3, 1e4];
        let base = Mat::from_vec(3, 3, vec![2.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 1.0]).unwrap();
        let g = Mat::from_fn(3, 3, |i, j| base[(i, j)] * s[i] * s[j]);
        // solution balanced in the scaled variables, so accuracy is limited
        // only by the conditioning of `base`
        let x_true = Mat::from_fn(3, 1, |i, _| (i + 1) as f64 / s[i]);
        let r = g.matmul(&x_true).unwrap();
        let x = solve_spd(&g, &r).unwrap();
        for i in 0..3 {
            assert!((x[(i, 0)] - x_true[(i, 0)]).abs() < 1e-13 * x_true[(i, 0)].abs());
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let g = Mat::from_vec(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(solve_spd(&g, &Mat::zeros(2, 1)), Err(Error::Singular(_))));
    }

    #[test]
    fn diagonal_spectrum() {
        let a = Mat::from_vec(2, 2, vec![0.5, 0.0, 0.0, 0.9]).unwrap();
        let e = eigenvalues(&a).unwrap();
        assert!((e[0].re - 0.9).abs() < 1e-15 && e[0].im == 0.0);
        assert!((e[1].re - 0.5).abs() < 1e-15);
    }

    #[test]
    fn scaled_rotation_spectrum() {
        let (r, th) = (0.8_f64, 0.3_f64);
        let a = Mat::from_vec(2, 2, vec![r * th.cos(), -r * th.sin(), r * th.sin(), r * th.cos()]).unwrap();
        let e = eigenvalues(&a).unwrap();
        for z in &e {
            assert!((z.norm() - r).abs() < 1e-14);
            assert!((z.im.abs() - r * th.sin()).abs() < 1e-14);
        }
        assert!((e[0].im + e[1].im).abs() < 1e-14);
    }

    #[test]
    fn non_square_is_rejected() {
        assert!(matches!(eigenvalues(&Mat::zeros(2, 3)), Err(Error::Shape { .. })));
    }
}
