//! Small dense helpers shared by the models and solvers.

use nalgebra::{DMatrix, DVector};

/// Stack square or rectangular blocks along the diagonal.
pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// `(M + Mᵀ)/2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of a symmetric matrix. Empty matrices report +inf.
pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    symmetrize(m).symmetric_eigen().eigenvalues.min()
}

/// Largest absolute eigenvalue of a general square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    eigen_moduli(m).into_iter().fold(0.0, f64::max)
}

/// Moduli of the eigenvalues of a general square matrix.
///
/// The Schur iteration can stall on exactly nilpotent inputs (a pure shift
/// matrix, say); in that case a tiny deterministic perturbation is added.
pub fn eigen_moduli(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let scale = m.amax().max(1.0);
    for k in 0..4 {
        let mut t = m.clone();
        if k > 0 {
            let eps = scale * 10f64.powi(-15 + 2 * k);
            for i in 0..n {
                for j in 0..n {
                    t[(i, j)] += eps * (((i * 7 + j * 13) % 11) as f64 / 11.0 - 0.45);
                }
            }
        }
        if let Some(s) = nalgebra::linalg::Schur::try_new(t, f64::EPSILON, 5000) {
            return s.complex_eigenvalues().iter().map(|z| z.norm()).collect();
        }
    }
    panic!("eigenvalue iteration failed to converge")
}

/// Pseudo-inverse of a symmetric positive semidefinite matrix, dropping
/// eigenvalues below `rel_tol` times the largest one.
pub fn psd_pinv(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = symmetrize(m).symmetric_eigen();
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let mut inv = DMatrix::zeros(n, n);
    for k in 0..n {
        let l = eig.eigenvalues[k];
        if l > rel_tol * top && l > 0.0 {
            let v = eig.eigenvectors.column(k);
            inv += v * v.transpose() / l;
        }
    }
    inv
}

/// Symmetric PSD square root.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Roots of a monic polynomial `z^n + p[0] z^{n-1} + … + p[n-1]` as moduli,
/// via the companion matrix.
pub fn monic_root_moduli(p: &[f64]) -> Vec<f64> {
    let n = p.len();
    if n == 0 {
        return Vec::new();
    }
    let mut comp = DMatrix::zeros(n, n);
    for j in 0..n {
        comp[(0, j)] = -p[j];
    }
    for i in 1..n {
        comp[(i, i - 1)] = 1.0;
    }
    eigen_moduli(&comp)
}

/// Infinity norm of a vector; zero for empty input.
pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Sample mean and sample standard deviation (n−1 denominator).
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_diag_places_blocks() {
        let a = DMatrix::from_element(1, 1, 2.0);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let m = block_diag(&[&a, &b]);
        assert_eq!(m.nrows(), 3);
        assert_eq!(m[(0, 0)], 2.0);
        assert_eq!(m[(2, 1)], 3.0);
        assert_eq!(m[(0, 2)], 0.0);
    }

    #[test]
    fn pinv_of_rank_one() {
        let v = DVector::from_vec(vec![1.0, 2.0]);
        let m = &v * v.transpose();
        let p = psd_pinv(&m, 1e-12);
        let back = &m * &p * &m;
        assert!((back - m).norm() < 1e-12);
    }

    #[test]
    fn companion_roots() {
        // (z - 0.5)(z + 0.25) = z^2 - 0.25 z - 0.125
        let mut r = monic_root_moduli(&[-0.25, -0.125]);
        r.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((r[0] - 0.25).abs() < 1e-12 && (r[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, -1.0, 1.0, -1.0]);
        assert_eq!(m, 0.0);
        assert!((s - (4.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
