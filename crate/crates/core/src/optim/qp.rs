//! Primal active-set method for `min ½zᵀHz + fᵀz s.t. Az ≤ b` with `H ≻ 0`.
//!
//! Equality-constrained subproblems are solved in range space with a cached
//! Cholesky factor `H = LLᵀ`: with `Y = L⁻¹A_Wᵀ` the multipliers solve
//! `(YᵀY) λ = −Yᵀ L⁻¹g`. `YᵀY` is updated one row at a time as the working
//! set changes.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
}

/// Optimality residuals, each relative to `1 + max(‖f‖∞, ‖Hz‖∞)` for
/// stationarity and `1 + ‖b‖∞` for feasibility.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// One multiplier per inequality row, zero for inactive rows.
    pub lambda: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    /// Working set at termination, usable as a warm start.
    pub active: Vec<usize>,
    pub residuals: KktResiduals,
    pub objective: f64,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum QpError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("Hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("constraints are infeasible (phase-1 residual {0:e})")]
    Infeasible(f64),
    #[error("no convergence after {iterations} iterations (KKT residual {:e})", residuals.max())]
    NonConvergence { iterations: usize, residuals: KktResiduals, z: DVector<f64> },
}

/// Feasible starting point and candidate working set.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub z: DVector<f64>,
    pub active: Vec<usize>,
}

/// Independent KKT check for a candidate primal-dual pair.
pub fn kkt_residuals(p: &QpProblem, z: &DVector<f64>, lambda: &DVector<f64>) -> KktResiduals {
    let hz = &p.h * z;
    let grad = &hz + &p.f + p.a.transpose() * lambda;
    let scale = 1.0 + crate::linalg::inf_norm(&p.f).max(crate::linalg::inf_norm(&hz));
    let bscale = 1.0 + crate::linalg::inf_norm(&p.b);
    let slack = &p.b - &p.a * z;
    let mut primal: f64 = 0.0;
    let mut dual: f64 = 0.0;
    let mut comp: f64 = 0.0;
    for i in 0..slack.len() {
        primal = primal.max(-slack[i]);
        dual = dual.max(-lambda[i]);
        comp = comp.max((lambda[i] * slack[i]).abs());
    }
    KktResiduals {
        stationarity: crate::linalg::inf_norm(&grad) / scale,
        primal: primal / bscale,
        dual: dual / scale,
        complementarity: comp / (scale * bscale),
    }
}

/// Cached factorization of a fixed Hessian, reusable across right-hand sides
/// and constraint sets. Not shareable between threads while solving; clone it.
#[derive(Debug, Clone)]
pub struct QpWorkspace {
    h: DMatrix<f64>,
    l: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl QpWorkspace {
    pub fn new(h: &DMatrix<f64>) -> Result<Self, QpError> {
        if h.nrows() != h.ncols() {
            return Err(QpError::Invalid("H must be square".into()));
        }
        let asym = (h - h.transpose()).amax();
        if asym > 1e-10 * (1.0 + h.amax()) {
            return Err(QpError::Invalid(format!("H is not symmetric (asymmetry {asym:e})")));
        }
        let chol = Cholesky::new(h.clone()).ok_or(QpError::NotPositiveDefinite)?;
        let l = chol.l();
        Ok(Self { h: h.clone(), l, chol })
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.h
    }

    /// `L⁻¹ v`
    fn fwd(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut x = v.clone();
        self.l.solve_lower_triangular_mut(&mut x);
        x
    }

    /// `L⁻ᵀ v`
    fn bwd(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut x = v.clone();
        self.l.tr_solve_lower_triangular_mut(&mut x);
        x
    }

    /// Solve with this Hessian and the given data. Without a warm start the
    /// origin is used when feasible, otherwise a phase-1 problem finds a
    /// feasible point.
    pub fn solve(
        &self,
        f: &DVector<f64>,
        a: &DMatrix<f64>,
        b: &DVector<f64>,
        settings: &QpSettings,
        warm: Option<&WarmStart>,
    ) -> Result<QpSolution, QpError> {
        let n = self.dim();
        let m = a.nrows();
        if f.len() != n || a.ncols() != n && m > 0 || b.len() != m {
            return Err(QpError::Invalid(format!("dimensions: H {n}, f {}, A {}x{}, b {}", f.len(), m, a.ncols(), b.len())));
        }
        let bscale = 1.0 + crate::linalg::inf_norm(b);
        let feas_tol = 1e-12 * bscale;
        let feasible = |z: &DVector<f64>| m == 0 || (a * z - b).max() <= feas_tol;

        let (z0, w0) = match warm {
            Some(w) if w.z.len() == n && feasible(&w.z) => {
                let s = b - a * &w.z;
                let tight: Vec<usize> = w.active.iter().cloned().filter(|&i| i < m && s[i].abs() <= 1e-9 * bscale).collect();
                (w.z.clone(), tight)
            }
            _ => {
                let zero = DVector::zeros(n);
                if feasible(&zero) {
                    (zero, Vec::new())
                } else {
                    (phase_one(a, b, settings)?, Vec::new())
                }
            }
        };
        self.active_set(f, a, b, settings, z0, w0)
    }

    fn active_set(
        &self,
        f: &DVector<f64>,
        a: &DMatrix<f64>,
        b: &DVector<f64>,
        settings: &QpSettings,
        mut z: DVector<f64>,
        initial: Vec<usize>,
    ) -> Result<QpSolution, QpError> {
        let m = a.nrows();
        let mut work: Vec<usize> = Vec::new();
        let mut ycols: Vec<DVector<f64>> = Vec::new();
        let mut s = DMatrix::<f64>::zeros(0, 0);
        let mut in_work = vec![false; m];

        let add = |i: usize, work: &mut Vec<usize>, ycols: &mut Vec<DVector<f64>>, s: &mut DMatrix<f64>, in_work: &mut Vec<bool>| -> bool {
            let y = self.fwd(&a.row(i).transpose());
            let k = work.len();
            let mut col = DVector::zeros(k + 1);
            for (j, yj) in ycols.iter().enumerate() {
                col[j] = yj.dot(&y);
            }
            col[k] = y.dot(&y);
            // reject rows dependent on the current working set
            let mut trial = s.clone().resize(k + 1, k + 1, 0.0);
            trial.set_column(k, &col);
            trial.set_row(k, &col.transpose());
            if Cholesky::new(trial.clone()).is_none() || col[k] <= 1e-14 {
                return false;
            }
            *s = trial;
            work.push(i);
            ycols.push(y);
            in_work[i] = true;
            true
        };

        for i in initial {
            if !in_work[i] {
                add(i, &mut work, &mut ycols, &mut s, &mut in_work);
            }
        }

        let zscale = |z: &DVector<f64>| 1.0 + crate::linalg::inf_norm(z);
        // a full step lands on the working-set minimizer; what is left of
        // the next step is round-off, amplified by badly scaled Hessians
        let mut full_step = false;
        for it in 0..settings.max_iter {
            let g = self.hessian() * &z + f;
            let gh = self.fwd(&g);
            let (p, lam) = if work.is_empty() {
                (-self.bwd(&gh), DVector::zeros(0))
            } else {
                let k = work.len();
                let mut rhs = DVector::zeros(k);
                for (j, yj) in ycols.iter().enumerate() {
                    rhs[j] = -yj.dot(&gh);
                }
                let lam = match Cholesky::new(s.clone()) {
                    Some(c) => c.solve(&rhs),
                    None => return Err(self.nonconvergence(f, a, b, &z, &work, &DVector::zeros(k), it)),
                };
                let mut v = gh.clone();
                for (j, yj) in ycols.iter().enumerate() {
                    v.axpy(lam[j], yj, 1.0);
                }
                (-self.bwd(&v), lam)
            };

            let newton = crate::linalg::inf_norm(&self.bwd(&gh));
            if full_step || crate::linalg::inf_norm(&p) <= 1e-13 * (zscale(&z) + newton) {
                full_step = false;
                // stationary on the working set: check multipliers
                let (jmin, lmin) = lam.iter().enumerate().fold((usize::MAX, 0.0), |acc, (j, &l)| if l < acc.1 { (j, l) } else { acc });
                let lam_scale = 1.0 + crate::linalg::inf_norm(&g);
                if jmin == usize::MAX || lmin >= -settings.tol * 1e-3 * lam_scale {
                    return self.finish(f, a, b, z, &work, &lam, it + 1, settings);
                }
                // drop the most negative multiplier
                let i = work.remove(jmin);
                ycols.remove(jmin);
                in_work[i] = false;
                s = s.remove_row(jmin).remove_column(jmin);
                continue;
            }

            // ratio test over constraints outside the working set
            let ap = a * &p;
            let slack = b - a * &z;
            let mut alpha = 1.0;
            let mut blocking = None;
            for i in 0..m {
                if in_work[i] || ap[i] <= 1e-14 * (1.0 + slack[i].abs()) {
                    continue;
                }
                let ai = slack[i].max(0.0) / ap[i];
                if ai < alpha || (ai == alpha && blocking.is_some_and(|bk| i < bk)) {
                    alpha = ai;
                    blocking = Some(i);
                }
            }
            z.axpy(alpha, &p, 1.0);
            full_step = blocking.is_none();
            if let Some(i) = blocking {
                if add(i, &mut work, &mut ycols, &mut s, &mut in_work) {
                    // pull z back onto the working set to stop round-off drift
                    let r = DVector::from_iterator(work.len(), work.iter().map(|&w| b[w] - a.row(w).dot(&z.transpose())));
                    if let Some(c) = Cholesky::new(s.clone()) {
                        let t = c.solve(&r);
                        let mut v = DVector::zeros(z.len());
                        for (j, yj) in ycols.iter().enumerate() {
                            v.axpy(t[j], yj, 1.0);
                        }
                        z += self.bwd(&v);
                    }
                }
            }
        }
        let lam = DVector::zeros(work.len());
        Err(self.nonconvergence(f, a, b, &z, &work, &lam, settings.max_iter))
    }

    fn full_lambda(m: usize, work: &[usize], lam: &DVector<f64>) -> DVector<f64> {
        let mut full = DVector::zeros(m);
        for (j, &i) in work.iter().enumerate() {
            full[i] = lam[j].max(0.0);
        }
        full
    }

    fn problem(&self, f: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> QpProblem {
        QpProblem { h: self.h.clone(), f: f.clone(), a: a.clone(), b: b.clone() }
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        f: &DVector<f64>,
        a: &DMatrix<f64>,
        b: &DVector<f64>,
        z: DVector<f64>,
        work: &[usize],
        lam: &DVector<f64>,
        iterations: usize,
        settings: &QpSettings,
    ) -> Result<QpSolution, QpError> {
        let lambda = Self::full_lambda(a.nrows(), work, lam);
        let residuals = kkt_residuals(&self.problem(f, a, b), &z, &lambda);
        if residuals.max() > settings.tol {
            return Err(QpError::NonConvergence { iterations, residuals, z });
        }
        let objective = 0.5 * z.dot(&(&self.h * &z)) + f.dot(&z);
        Ok(QpSolution { z, lambda, status: QpStatus::Optimal, iterations, active: work.to_vec(), residuals, objective })
    }

    #[allow(clippy::too_many_arguments)]
    fn nonconvergence(&self, f: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>, z: &DVector<f64>, work: &[usize], lam: &DVector<f64>, iterations: usize) -> QpError {
        let lambda = Self::full_lambda(a.nrows(), work, lam);
        QpError::NonConvergence { iterations, residuals: kkt_residuals(&self.problem(f, a, b), z, &lambda), z: z.clone() }
    }

    /// Factor-reusing solve of a full problem whose Hessian equals this one.
    pub fn solve_problem(&self, p: &QpProblem, settings: &QpSettings) -> Result<QpSolution, QpError> {
        self.solve(&p.f, &p.a, &p.b, settings, None)
    }

    /// `H⁻¹ v` through the cached factor.
    pub fn h_solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(v)
    }
}

/// Find a point with `Az ≤ b` by solving
/// `min s + ½δ(‖z‖² + s²) s.t. Az − s1 ≤ b, s ≥ 0` from an obviously feasible start.
fn phase_one(a: &DMatrix<f64>, b: &DVector<f64>, settings: &QpSettings) -> Result<DVector<f64>, QpError> {
    let (m, n) = a.shape();
    let delta = 1e-6;
    let mut h = DMatrix::identity(n + 1, n + 1) * delta;
    h[(n, n)] = delta;
    let mut f = DVector::zeros(n + 1);
    f[n] = 1.0;
    let mut a1 = DMatrix::zeros(m + 1, n + 1);
    a1.view_mut((0, 0), (m, n)).copy_from(a);
    for i in 0..m {
        a1[(i, n)] = -1.0;
    }
    a1[(m, n)] = -1.0;
    let mut b1 = DVector::zeros(m + 1);
    b1.rows_mut(0, m).copy_from(b);
    let s0 = (-b.min()).max(0.0) + 1.0;
    let mut z0 = DVector::zeros(n + 1);
    z0[n] = s0;
    let ws = QpWorkspace::new(&h)?;
    let relaxed = QpSettings { max_iter: settings.max_iter.max(4 * (m + n)), ..*settings };
    let sol = ws.active_set(&f, &a1, &b1, &relaxed, z0, Vec::new())?;
    let s = sol.z[n];
    let z = sol.z.rows(0, n).into_owned();
    let viol = if m == 0 { 0.0 } else { (a * &z - b).max() };
    let tol = 1e-8 * (1.0 + crate::linalg::inf_norm(b));
    if s > tol || viol > tol {
        return Err(QpError::Infeasible(s.max(viol)));
    }
    Ok(z)
}

/// Solve a QP from scratch.
pub fn solve_qp(p: &QpProblem, settings: &QpSettings) -> Result<QpSolution, QpError> {
    QpWorkspace::new(&p.h)?.solve(&p.f, &p.a, &p.b, settings, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_closed_form() {
        let h = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let f = DVector::from_vec(vec![1.0, -2.0]);
        let p = QpProblem { h: h.clone(), f: f.clone(), a: DMatrix::zeros(0, 2), b: DVector::zeros(0) };
        let sol = solve_qp(&p, &QpSettings::default()).unwrap();
        let direct = -h.cholesky().unwrap().solve(&f);
        assert!((sol.z - direct).amax() < 1e-10);
    }

    #[test]
    fn one_dimensional_bound() {
        let p = QpProblem {
            h: DMatrix::from_element(1, 1, 1.0),
            f: DVector::zeros(1),
            a: DMatrix::from_element(1, 1, 1.0),
            b: DVector::from_element(1, -1.0),
        };
        let sol = solve_qp(&p, &QpSettings::default()).unwrap();
        assert!((sol.z[0] + 1.0).abs() < 1e-12);
        assert!((sol.lambda[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_detected() {
        let p = QpProblem {
            h: DMatrix::identity(1, 1),
            f: DVector::zeros(1),
            a: DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
            b: DVector::from_vec(vec![-1.0, -1.0]),
        };
        assert!(matches!(solve_qp(&p, &QpSettings::default()), Err(QpError::Infeasible(_))));
    }

    #[test]
    fn not_pd_rejected() {
        let p = QpProblem { h: DMatrix::zeros(2, 2), f: DVector::zeros(2), a: DMatrix::zeros(0, 2), b: DVector::zeros(0) };
        assert_eq!(solve_qp(&p, &QpSettings::default()).unwrap_err(), QpError::NotPositiveDefinite);
    }

    #[test]
    fn warm_start_reproduces_cold() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let f = DVector::from_vec(vec![-4.0, -4.0]);
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 0.8, 0.8]);
        let ws = QpWorkspace::new(&h).unwrap();
        let cold = ws.solve(&f, &a, &b, &QpSettings::default(), None).unwrap();
        let warm = WarmStart { z: cold.z.clone(), active: cold.active.clone() };
        let again = ws.solve(&f, &a, &b, &QpSettings::default(), Some(&warm)).unwrap();
        assert!((cold.z - again.z).amax() < 1e-12);
        assert!(again.iterations <= 1);
    }
}
