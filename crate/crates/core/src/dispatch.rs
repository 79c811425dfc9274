//! Power dispatch: the three MPC variants over the zero-sum input
//! transform, the equal-split scheduler and the available-power baseline.
//!
//! Inside the MPC problems the redistributed input `û` is in MW and the
//! weights `r_i` are per MW². Commands leave in W.
//!
//! Stages run `k = t..t+N_h` (so `N_h + 1` of them); stage `t` uses the
//! measured-step matrices `A_0`, `C_0` and the measured turbulence `d_t`.

use crate::farm::FarmModel;
use crate::linalg::{psd_pinv, symmetrize};
use crate::linearize::{CoefficientSurface, TurbineParams};
use crate::optim::{
    check_lmi, solve_sdp, AffMat, LmiReport, QpError, QpSettings, QpWorkspace, SdpBuilder, SdpError, SdpProblem, SdpSettings,
    SymVar, WarmStart,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const MW: f64 = 1e6;

/// Cost weight on the traces of covariance-type variables that the original
/// cost does not see; keeps the SDP optimal set bounded.
const TRACE_REG: f64 = 1e-9;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum DispatchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("degenerate weights: {0}")]
    Factorization(String),
    #[error("QP solver: {0}")]
    Qp(#[from] QpError),
    #[error("SDP solver: {0}")]
    Sdp(SdpError),
    #[error("chance constraints cannot be met: {0}")]
    ChanceInfeasible(String),
    #[error("SMPC problem exceeds the size cap: {0}")]
    SizeCap(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MpcMode {
    Edmpc,
    Dmpc,
    Smpc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    pub n_h: usize,
    /// Per-turbine input weights, per MW².
    pub r: Vec<f64>,
    /// Per-turbine setpoint deviation bound (W).
    pub u_max: f64,
    /// Chance-constraint violation probability.
    pub p_tilde: f64,
    /// Slack penalty; `None` means `1e6 · max r_i`.
    pub rho_slack: Option<f64>,
    pub mode: MpcMode,
}

impl MpcConfig {
    pub fn new(mode: MpcMode, n_h: usize, r: Vec<f64>, u_max: f64) -> Self {
        Self { n_h, r, u_max, p_tilde: 0.05, rho_slack: None, mode }
    }

    pub fn validate(&self, n: usize) -> Result<(), DispatchError> {
        if self.r.len() != n {
            return Err(DispatchError::Config(format!("{} input weights for {n} turbines", self.r.len())));
        }
        if self.r.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(DispatchError::Config("input weights must be positive".into()));
        }
        if !(self.u_max > 0.0) {
            return Err(DispatchError::Config("u_max must be positive".into()));
        }
        if !(self.p_tilde > 0.0 && self.p_tilde < 0.5) {
            return Err(DispatchError::Config(format!("p_tilde {} outside (0, 0.5)", self.p_tilde)));
        }
        if let Some(rho) = self.rho_slack {
            if !(rho > 0.0) {
                return Err(DispatchError::Config("slack penalty must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn rho(&self) -> f64 {
        self.rho_slack.unwrap_or_else(|| 1e6 * self.r.iter().cloned().fold(0.0, f64::max))
    }
}

/// `N × (N−1)` bidiagonal map from `û` to zero-sum deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTransform {
    pub t: DMatrix<f64>,
    pub n: usize,
}

pub fn make_transform(n: usize) -> Result<InputTransform, DispatchError> {
    if n < 2 {
        return Err(DispatchError::Config("redistribution needs at least two turbines".into()));
    }
    let mut t = DMatrix::zeros(n, n - 1);
    for j in 0..n - 1 {
        t[(j, j)] = 1.0;
        t[(j + 1, j)] = -1.0;
    }
    Ok(InputTransform { t, n })
}

/// `P(c_sᵀu ≥ u_s_max) ≤ p̃`, with `u` the per-turbine deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChanceConstraint {
    pub c_s: DVector<f64>,
    /// Bound in W.
    pub u_s_max: f64,
}

/// `|u_i| ≤ u_max` as `2N` one-sided constraints.
pub fn box_constraints(n: usize, u_max: f64) -> Vec<ChanceConstraint> {
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        for sign in [1.0, -1.0] {
            let mut c = DVector::zeros(n);
            c[i] = sign;
            out.push(ChanceConstraint { c_s: c, u_s_max: u_max });
        }
    }
    out
}

/// Output weight `Q` (per turbine `diag(q_Mt, q_Ms)`) and `R̂ = TᵀRT`.
pub fn build_weights(tf: &InputTransform, n_h: usize, r: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let nh = n_h.max(1) as f64;
    let q_mt = 0.05 / (23e6f64.powi(2) * nh);
    let q_ms = 0.2 / (2e6f64.powi(2) * nh);
    let mut q = DMatrix::zeros(2 * tf.n, 2 * tf.n);
    for i in 0..tf.n {
        q[(2 * i, 2 * i)] = q_mt;
        q[(2 * i + 1, 2 * i + 1)] = q_ms;
    }
    let rm = DMatrix::from_diagonal(&DVector::from_column_slice(r));
    let r_hat = symmetrize(&(tf.t.transpose() * rm * &tf.t));
    (q, r_hat)
}

/// Stacked predictions over the horizon: `Y = 𝓐 x_t + 𝓑 Û + 𝓑_d d_t`,
/// with `Û` stage-major in MW.
#[derive(Debug, Clone, PartialEq)]
pub struct Condensed {
    pub n_h: usize,
    pub bu: DMatrix<f64>,
    pub ax: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    /// Diagonal of `diag(Q, …, Q)`.
    pub q: DVector<f64>,
    pub r_hat: DMatrix<f64>,
}

pub fn condense(model: &FarmModel, tf: &InputTransform, cfg: &MpcConfig) -> Result<Condensed, DispatchError> {
    let n = model.n();
    cfg.validate(n)?;
    if tf.n != n {
        return Err(DispatchError::Config(format!("transform for {} turbines, farm has {n}", tf.n)));
    }
    if model.turbines.iter().any(|t| t.ny() != 2) {
        return Err(DispatchError::Config("each turbine must expose (M_t, M_s)".into()));
    }
    let stages = cfg.n_h + 1;
    let ny = model.ny();
    let m = n - 1;
    let nx = model.nx();
    let mut ax = DMatrix::zeros(stages * ny, nx);
    let mut bd = DMatrix::zeros(stages * ny, n);
    let mut bu = DMatrix::zeros(stages * ny, stages * m);
    for (i, wt) in model.turbines.iter().enumerate() {
        let xo = model.offsets[i];
        let ni = wt.nx();
        let yo = 2 * i;
        // C A^j for j = 0..n_h−1
        let mut ca = vec![wt.c_a.clone()];
        for j in 1..cfg.n_h {
            let next = &ca[j - 1] * &wt.a_a;
            ca.push(next);
        }
        // per-turbine input response: h[l] = coefficient of u at lag l
        let mut h = vec![wt.d_a.clone()];
        for j in 0..cfg.n_h {
            h.push(&ca[j] * &wt.b_a);
        }
        for k in 0..stages {
            let r0 = k * ny + yo;
            if k == 0 {
                ax.view_mut((r0, xo), (2, ni)).copy_from(&wt.c_0);
                bd.view_mut((r0, i), (2, 1)).copy_from(&wt.d_da);
            } else {
                ax.view_mut((r0, xo), (2, ni)).copy_from(&(&ca[k - 1] * &wt.a_0));
                bd.view_mut((r0, i), (2, 1)).copy_from(&(&ca[k - 1] * &wt.b_da));
            }
            for j in 0..=k {
                let hj = &h[k - j];
                // u_i = û_i − û_{i−1}
                for (col, sign) in [(i, 1.0), (i.wrapping_sub(1), -1.0)] {
                    if col < m {
                        for r in 0..2 {
                            bu[(r0 + r, j * m + col)] += sign * MW * hj[(r, 0)];
                        }
                    }
                }
            }
        }
    }
    let (qm, r_hat) = build_weights(tf, cfg.n_h, &cfg.r);
    let q = DVector::from_iterator(stages * ny, (0..stages * ny).map(|k| qm[(k % ny, k % ny)]));
    Ok(Condensed { n_h: cfg.n_h, bu, ax, bd, q, r_hat })
}

impl Condensed {
    fn stages(&self) -> usize {
        self.n_h + 1
    }

    /// `(𝓑ᵀ𝓠𝓑 + 𝓡̂, 𝓑ᵀ𝓠𝓐, 𝓑ᵀ𝓠𝓑_d)`
    fn normal_terms(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let mut qb = self.bu.clone();
        for (r, mut row) in qb.row_iter_mut().enumerate() {
            row *= self.q[r];
        }
        let qbt = qb.transpose();
        let mut h = &qbt * &self.bu;
        let m = self.r_hat.nrows();
        for k in 0..self.stages() {
            let mut blk = h.view_mut((k * m, k * m), (m, m));
            blk += &self.r_hat;
        }
        (symmetrize(&h), &qbt * &self.ax, &qbt * &self.bd)
    }
}

/// Unconstrained law `û_t = K_x x_t + K_d d_t` (MW).
#[derive(Debug, Clone, PartialEq)]
pub struct EdmpcGains {
    pub k_x: DMatrix<f64>,
    pub k_d: DMatrix<f64>,
}

impl EdmpcGains {
    pub fn apply(&self, x: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        &self.k_x * x + &self.k_d * d
    }
}

pub fn edmpc_gains(model: &FarmModel, tf: &InputTransform, cfg: &MpcConfig) -> Result<EdmpcGains, DispatchError> {
    let cond = condense(model, tf, cfg)?;
    let (h, hx, hd) = cond.normal_terms();
    let chol = h.cholesky().ok_or_else(|| DispatchError::Factorization("normal matrix is not positive definite".into()))?;
    let m = tf.n - 1;
    let kx = -chol.solve(&hx);
    let kd = -chol.solve(&hd);
    Ok(EdmpcGains { k_x: kx.rows(0, m).into_owned(), k_d: kd.rows(0, m).into_owned() })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub cost: f64,
    pub slack_max: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchCommand {
    /// Absolute setpoints (W).
    pub p_dem: DVector<f64>,
    /// Deviations from the operating-point demand (W).
    pub u: DVector<f64>,
    pub diagnostics: Diagnostics,
}

fn command(tf: &InputTransform, u_hat_mw: &DVector<f64>, p_dem0: &DVector<f64>, diagnostics: Diagnostics) -> DispatchCommand {
    let u = &tf.t * u_hat_mw * MW;
    DispatchCommand { p_dem: &u + p_dem0, u, diagnostics }
}

fn p_dem0(model: &FarmModel) -> DVector<f64> {
    DVector::from_iterator(model.n(), model.ops.iter().map(|o| o.p_dem0))
}

/// Deterministic MPC with quadratic slack penalty, kept across steps so the
/// Hessian factor and the previous solution are reused.
#[derive(Debug, Clone)]
pub struct DmpcController {
    tf: InputTransform,
    n_u: usize,
    n_s: usize,
    hx: DMatrix<f64>,
    hd: DMatrix<f64>,
    ws: QpWorkspace,
    a: DMatrix<f64>,
    b: DVector<f64>,
    c_hat: Vec<DVector<f64>>,
    u_bound: Vec<f64>,
    p_dem0: DVector<f64>,
    warm: Option<DVector<f64>>,
    pub settings: QpSettings,
}

impl DmpcController {
    pub fn new(model: &FarmModel, tf: &InputTransform, cfg: &MpcConfig, constraints: &[ChanceConstraint]) -> Result<Self, DispatchError> {
        let cond = condense(model, tf, cfg)?;
        let (h, hx, hd) = cond.normal_terms();
        let m = tf.n - 1;
        let stages = cond.stages();
        let n_u = stages * m;
        let s = constraints.len();
        let n_s = stages * s;
        for c in constraints {
            if c.c_s.len() != tf.n || !(c.u_s_max > 0.0) {
                return Err(DispatchError::Config("constraint direction must have length N and a positive bound".into()));
            }
        }
        // ½zᵀHz with H = 2·blockdiag(normal matrix, ρI)
        let mut hfull = DMatrix::zeros(n_u + n_s, n_u + n_s);
        hfull.view_mut((0, 0), (n_u, n_u)).copy_from(&(&h * 2.0));
        let rho = cfg.rho();
        for k in 0..n_s {
            hfull[(n_u + k, n_u + k)] = 2.0 * rho;
        }
        let ws = QpWorkspace::new(&hfull).map_err(|e| DispatchError::Factorization(e.to_string()))?;
        let c_hat: Vec<DVector<f64>> = constraints.iter().map(|c| tf.t.transpose() * &c.c_s).collect();
        let u_bound: Vec<f64> = constraints.iter().map(|c| c.u_s_max / MW).collect();
        let mut a = DMatrix::zeros(n_s, n_u + n_s);
        let mut b = DVector::zeros(n_s);
        for k in 0..stages {
            for (j, ch) in c_hat.iter().enumerate() {
                let row = k * s + j;
                a.view_mut((row, k * m), (1, m)).copy_from(&ch.transpose());
                a[(row, n_u + row)] = -1.0;
                b[row] = u_bound[j];
            }
        }
        Ok(Self {
            tf: tf.clone(),
            n_u,
            n_s,
            hx: hx * 2.0,
            hd: hd * 2.0,
            ws,
            a,
            b,
            c_hat,
            u_bound,
            p_dem0: p_dem0(model),
            warm: None,
            settings: QpSettings { max_iter: 200usize.max(2 * n_s + n_u), ..QpSettings::default() },
        })
    }

    /// Shift the previous plan by one stage and make it feasible.
    fn warm_start(&self) -> Option<WarmStart> {
        let prev = self.warm.as_ref()?;
        let m = self.tf.n - 1;
        let stages = self.n_u / m;
        let s = self.c_hat.len();
        let mut z = DVector::zeros(self.n_u + self.n_s);
        for k in 0..stages {
            let src = (k + 1).min(stages - 1);
            z.rows_mut(k * m, m).copy_from(&prev.rows(src * m, m));
        }
        let mut active = Vec::new();
        for k in 0..stages {
            for j in 0..s {
                let row = k * s + j;
                let v = self.c_hat[j].dot(&z.rows(k * m, m)) - self.u_bound[j];
                if v > 0.0 {
                    z[self.n_u + row] = v;
                    active.push(row);
                }
            }
        }
        Some(WarmStart { z, active })
    }

    /// Solve at the measured state; returns the command and the full plan.
    pub fn solve(&mut self, x: &DVector<f64>, d: &DVector<f64>) -> Result<DispatchCommand, DispatchError> {
        let mut f = DVector::zeros(self.n_u + self.n_s);
        f.rows_mut(0, self.n_u).copy_from(&(&self.hx * x + &self.hd * d));
        let warm = self.warm_start();
        let sol = self.ws.solve(&f, &self.a, &self.b, &self.settings, warm.as_ref())?;
        let m = self.tf.n - 1;
        let u_hat = sol.z.rows(0, m).into_owned();
        let slack_max = sol.z.rows(self.n_u, self.n_s).iter().fold(0.0, |a: f64, v| a.max(*v));
        self.warm = Some(sol.z.rows(0, self.n_u).into_owned());
        Ok(command(&self.tf, &u_hat, &self.p_dem0, Diagnostics { cost: sol.objective, slack_max, iterations: sol.iterations }))
    }

    pub fn reset(&mut self) {
        self.warm = None;
    }

    /// Last full plan `Û` (MW), stage-major.
    pub fn plan(&self) -> Option<&DVector<f64>> {
        self.warm.as_ref()
    }
}

/// One-shot DMPC solve.
pub fn solve_dmpc(
    model: &FarmModel,
    tf: &InputTransform,
    cfg: &MpcConfig,
    x_t: &DVector<f64>,
    d_t: &DVector<f64>,
    constraints: &[ChanceConstraint],
) -> Result<DispatchCommand, DispatchError> {
    DmpcController::new(model, tf, cfg, constraints)?.solve(x_t, d_t)
}

// ---------------------------------------------------------------------------
// SMPC

/// `½ (1/erf⁻¹(1 − 2p̃))²`, the variance coefficient of the tightened bound.
pub fn chance_coefficient(p_tilde: f64) -> Result<f64, DispatchError> {
    if !(p_tilde > 0.0 && p_tilde < 0.5) {
        return Err(DispatchError::Config(format!("p_tilde {p_tilde} outside (0, 0.5)")));
    }
    let e = statrs::function::erf::erf_inv(1.0 - 2.0 * p_tilde);
    Ok(0.5 / (e * e))
}

/// Rows of `F` with `FᵀF = M`, dropping numerically null directions.
fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..m.nrows()).filter(|&k| eig.eigenvalues[k] > 1e-12 * top).collect();
    let mut f = DMatrix::zeros(keep.len(), m.nrows());
    for (r, &k) in keep.iter().enumerate() {
        f.row_mut(r).copy_from(&(eig.eigenvectors.column(k).transpose() * eig.eigenvalues[k].sqrt()));
    }
    f
}

/// Dense problem data shared by the SMPC builder and checks, in MW units.
#[derive(Debug, Clone)]
struct SmpcData {
    a: DMatrix<f64>,
    a0: DMatrix<f64>,
    b_hat: DMatrix<f64>,
    bd: DMatrix<f64>,
    sigma: DMatrix<f64>,
    l: DMatrix<f64>,
}

impl SmpcData {
    fn new(model: &FarmModel, tf: &InputTransform) -> Self {
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(model.sigma_w()));
        let bd = model.b_d();
        let l = &bd * sigma.map(f64::sqrt);
        Self { a: model.a(), a0: model.a_0(), b_hat: model.b() * &tf.t * MW, bd, sigma, l }
    }
}

/// Where the SMPC unknowns live inside the SDP.
#[derive(Debug, Clone)]
pub struct SmpcLayout {
    n_h: usize,
    u_bar: Vec<Vec<usize>>,
    h: Option<AffMat>,
    u_cov: Vec<Option<SymVar>>,
    x_cov: Vec<Option<SymVar>>,
    g: Vec<Option<AffMat>>,
    p: Vec<SymVar>,
    theta: Vec<Vec<usize>>,
    /// Variables whose traces carry the regularization weight.
    reg_traces: Vec<SymVar>,
}

#[derive(Debug, Clone)]
pub struct SmpcProblem {
    pub sdp: SdpProblem,
    pub layout: SmpcLayout,
    data: SmpcDataHandle,
    x_t: DVector<f64>,
    d_t: DVector<f64>,
    p_dem0: DVector<f64>,
    tf: InputTransform,
}

#[derive(Debug, Clone)]
struct SmpcDataHandle(Box<SmpcData>);

/// Rough total LMI dimension, used to refuse oversized problems early.
fn smpc_dim_estimate(n: usize, nx: usize, n_h: usize, s: usize) -> usize {
    let m = n - 1;
    let r = 3 * n - 1;
    let mut dim = 0;
    for k in 0..=n_h {
        dim += match k {
            0 | 1 => r + 1,
            2 => r + 1 + 2 * n + (m + n) + if n_h >= 3 { nx + 2 * n } else { 0 },
            _ => r + 1 + (m + nx) + if k < n_h { 2 * nx + n } else { 0 },
        };
        dim += 3 * s;
    }
    dim
}

/// Build the SMPC semidefinite program.
///
/// The mean state is substituted through its dynamics, and each second-moment
/// block enters through `F P Fᵀ` with `FᵀF = M` so the reduced `P̃` carries a
/// plain trace cost. At `t+2` the pinned covariance `X = LLᵀ`, `L = B_dΣ^{1/2}`,
/// restricts the feedback to `G = H Lᵀ`.
pub fn build_smpc(
    model: &FarmModel,
    tf: &InputTransform,
    cfg: &MpcConfig,
    x_t: &DVector<f64>,
    d_t: &DVector<f64>,
    constraints: &[ChanceConstraint],
    settings: &SdpSettings,
) -> Result<SmpcProblem, DispatchError> {
    let n = model.n();
    cfg.validate(n)?;
    if tf.n != n {
        return Err(DispatchError::Config(format!("transform for {} turbines, farm has {n}", tf.n)));
    }
    let nx = model.nx();
    if x_t.len() != nx || d_t.len() != n {
        return Err(DispatchError::Config("state or disturbance has the wrong length".into()));
    }
    let est = smpc_dim_estimate(n, nx, cfg.n_h, constraints.len());
    if est > settings.max_dim {
        return Err(DispatchError::SizeCap(format!(
            "{n} turbines with N_h = {} need about {est} LMI rows (cap {}); use DMPC or EDMPC",
            cfg.n_h, settings.max_dim
        )));
    }
    let coef = chance_coefficient(cfg.p_tilde)?;
    let data = SmpcData::new(model, tf);
    let m = n - 1;
    let (q, r_hat) = build_weights(tf, cfg.n_h, &cfg.r);
    let d_hat = model.d() * &tf.t * MW;
    let dd = model.d_d();
    let stacked = |c: &DMatrix<f64>| {
        let mut s = DMatrix::zeros(c.nrows(), nx + m + n);
        s.view_mut((0, 0), (c.nrows(), nx)).copy_from(c);
        s.view_mut((0, nx), (c.nrows(), m)).copy_from(&d_hat);
        s.view_mut((0, nx + m), (c.nrows(), n)).copy_from(&dd);
        let mut mm = s.transpose() * &q * &s;
        let mut blk = mm.view_mut((nx, nx), (m, m));
        blk += &r_hat;
        symmetrize(&mm)
    };
    let f0 = psd_factor(&stacked(&model.c_0()));
    let f = psd_factor(&stacked(&model.c()));

    let k1 = |v: f64| AffMat::constant(DMatrix::from_element(1, 1, v));
    let cst = AffMat::constant;
    let zeros = |r: usize, c: usize| AffMat::zeros(r, c);
    let eye = AffMat::identity;

    let mut b = SdpBuilder::new();
    let u_bar: Vec<Vec<usize>> = (0..=cfg.n_h).map(|_| b.scalars(m)).collect();
    let u_expr: Vec<AffMat> = u_bar.iter().map(|v| AffMat::var_column(v)).collect();

    // mean states
    let mut x_bar = vec![cst(DMatrix::from_column_slice(nx, 1, x_t.as_slice()))];
    if cfg.n_h >= 1 {
        let c = &data.a0 * x_t + &data.bd * d_t;
        x_bar.push(u_expr[0].lmul(&data.b_hat).add_constant(&DMatrix::from_column_slice(nx, 1, c.as_slice())));
    }
    for k in 1..cfg.n_h {
        let next = x_bar[k].lmul(&data.a).add(&u_expr[k].lmul(&data.b_hat));
        x_bar.push(next);
    }

    let mut layout = SmpcLayout {
        n_h: cfg.n_h,
        u_bar: u_bar.clone(),
        h: None,
        u_cov: vec![None; cfg.n_h + 1],
        x_cov: vec![None; cfg.n_h + 1],
        g: vec![None; cfg.n_h + 1],
        p: Vec::new(),
        theta: Vec::new(),
        reg_traces: Vec::new(),
    };

    for k in 0..=cfg.n_h {
        let ff = if k == 0 { &f0 } else { &f };
        let r = ff.nrows();
        let dpart = if k == 0 { cst(DMatrix::from_column_slice(n, 1, d_t.as_slice())) } else { zeros(n, 1) };
        let v = AffMat::grid(&[vec![Some(x_bar[k].clone())], vec![Some(u_expr[k].clone())], vec![Some(dpart)]]);
        let fv = v.lmul(ff);
        let p = b.sym(r);
        b.add_cost_trace(&DMatrix::identity(r, r), &p.expr());
        let pe = p.expr();
        match k {
            0 | 1 => {
                b.add_lmi_grid(&format!("P[t+{k}]"), vec![vec![Some(pe), Some(fv)], vec![None, Some(eye(1))]]);
            }
            2 => {
                let h = b.mat(m, n);
                let sig_h = data.sigma.map(f64::sqrt);
                let w = AffMat::grid(&[
                    vec![Some(cst(data.l.clone())), Some(zeros(nx, n))],
                    vec![Some(h.clone()), Some(zeros(m, n))],
                    vec![Some(zeros(n, n)), Some(cst(sig_h))],
                ]);
                b.add_lmi_grid(
                    "P[t+2]",
                    vec![vec![Some(pe), Some(fv), Some(w.lmul(ff))], vec![None, Some(eye(1)), Some(zeros(1, 2 * n))], vec![None, None, Some(eye(2 * n))]],
                );
                let uc = b.sym(m);
                b.add_lmi_grid("U[t+2]", vec![vec![Some(uc.expr()), Some(h.clone())], vec![None, Some(eye(n))]]);
                layout.reg_traces.push(uc.clone());
                layout.u_cov[2] = Some(uc);
                if cfg.n_h >= 3 {
                    let x3 = b.sym(nx);
                    let ax = h.lmul(&data.b_hat).add_constant(&(&data.a * &data.l));
                    b.add_lmi_grid(
                        "X[t+3]",
                        vec![vec![Some(x3.expr()), Some(ax), Some(cst(data.l.clone()))], vec![None, Some(eye(n)), Some(zeros(n, n))], vec![None, None, Some(eye(n))]],
                    );
                    layout.reg_traces.push(x3.clone());
                    layout.x_cov[3] = Some(x3);
                }
                layout.h = Some(h);
            }
            _ => {
                let xk = layout.x_cov[k].clone().expect("covariance created by the previous stage");
                let g = b.mat(m, nx);
                let uc = b.sym(m);
                let xi = AffMat::grid(&[
                    vec![Some(xk.expr()), Some(g.transpose()), Some(zeros(nx, n))],
                    vec![Some(g.clone()), Some(uc.expr()), Some(zeros(m, n))],
                    vec![Some(zeros(n, nx)), Some(zeros(n, m)), Some(cst(data.sigma.clone()))],
                ]);
                let reduced = pe.sub(&xi.lmul(ff).rmul(&ff.transpose()));
                b.add_lmi_grid(&format!("P[t+{k}]"), vec![vec![Some(reduced), Some(fv)], vec![None, Some(eye(1))]]);
                b.add_lmi_grid(&format!("U[t+{k}]"), vec![vec![Some(uc.expr()), Some(g.clone())], vec![None, Some(xk.expr())]]);
                if k < cfg.n_h {
                    let xn = b.sym(nx);
                    let ax = xk.expr().lmul(&data.a).add(&g.lmul(&data.b_hat));
                    b.add_lmi_grid(
                        &format!("X[t+{}]", k + 1),
                        vec![vec![Some(xn.expr()), Some(ax), Some(cst(data.l.clone()))], vec![None, Some(xk.expr()), Some(zeros(nx, n))], vec![None, None, Some(eye(n))]],
                    );
                    layout.reg_traces.push(xn.clone());
                    layout.x_cov[k + 1] = Some(xn);
                }
                layout.g[k] = Some(g);
                layout.u_cov[k] = Some(uc);
            }
        }
        layout.p.push(p);

        // chance constraints
        let mut th = Vec::with_capacity(constraints.len());
        for (s, c) in constraints.iter().enumerate() {
            if c.c_s.len() != n || !(c.u_s_max > 0.0) {
                return Err(DispatchError::Config("constraint direction must have length N and a positive bound".into()));
            }
            let ch = tf.t.transpose() * &c.c_s;
            let chm = DMatrix::from_row_slice(1, m, ch.as_slice());
            let umax = c.u_s_max / MW;
            let theta = b.scalar();
            let te = AffMat::var(theta);
            b.add_ge(&format!("mean[t+{k},{s}]"), &k1(0.75 * umax).sub(&te.scale(1.0 / umax)).sub(&u_expr[k].lmul(&chm)));
            b.add_ge(&format!("theta[t+{k},{s}]"), &te);
            if let Some(uc) = &layout.u_cov[k] {
                let quad = uc.expr().lmul(&chm).rmul(&chm.transpose());
                b.add_ge(&format!("var[t+{k},{s}]"), &te.scale(coef).sub(&quad));
            }
            th.push(theta);
        }
        layout.theta.push(th);
    }
    for s in &layout.reg_traces {
        b.add_cost_trace(&(DMatrix::identity(s.n, s.n) * TRACE_REG), &s.expr());
    }
    Ok(SmpcProblem {
        sdp: b.build(),
        layout,
        data: SmpcDataHandle(Box::new(data)),
        x_t: x_t.clone(),
        d_t: d_t.clone(),
        p_dem0: p_dem0(model),
        tf: tf.clone(),
    })
}

/// Values of the SMPC unknowns at a solution. `x_cov[k]` is the covariance
/// bound of stage `t+k`; `p` holds the reduced second-moment blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct SmpcSolution {
    pub x_bar: Vec<DVector<f64>>,
    /// Mean inputs `ū_k` (MW).
    pub u_bar: Vec<DVector<f64>>,
    pub x_cov: Vec<DMatrix<f64>>,
    pub g: Vec<Option<DMatrix<f64>>>,
    /// Feedback gains `K_k = G_k X_k⁺`.
    pub k_gain: Vec<Option<DMatrix<f64>>>,
    pub u_cov: Vec<DMatrix<f64>>,
    pub p: Vec<DMatrix<f64>>,
    pub theta: Vec<Vec<f64>>,
    /// Second-moment cost `Σ tr(P̃_k)`, without the regularization term.
    pub cost: f64,
    pub iterations: usize,
    pub report: LmiReport,
}

impl SmpcProblem {
    /// Map an SDP point back to the SMPC unknowns.
    pub fn extract(&self, y: &DVector<f64>, iterations: usize) -> SmpcSolution {
        let lay = &self.layout;
        let d = &self.data.0;
        let nx = self.x_t.len();
        let m = self.tf.n - 1;
        let u_bar: Vec<DVector<f64>> = lay.u_bar.iter().map(|v| DVector::from_iterator(m, v.iter().map(|i| y[*i]))).collect();
        let mut x_bar = vec![self.x_t.clone()];
        for k in 0..lay.n_h {
            let prev = if k == 0 { &d.a0 * &self.x_t + &d.bd * &self.d_t } else { &d.a * &x_bar[k] };
            x_bar.push(prev + &d.b_hat * &u_bar[k]);
        }
        let mut x_cov = vec![DMatrix::zeros(nx, nx); lay.n_h + 1];
        let mut g = vec![None; lay.n_h + 1];
        let mut k_gain = vec![None; lay.n_h + 1];
        let mut u_cov = vec![DMatrix::zeros(m, m); lay.n_h + 1];
        if lay.n_h >= 2 {
            x_cov[2] = &d.bd * &d.sigma * d.bd.transpose();
            let h = lay.h.as_ref().expect("stage t+2 exists").eval(y);
            g[2] = Some(&h * d.l.transpose());
            k_gain[2] = Some(&h * d.l.clone().pseudo_inverse(1e-12).expect("pseudo-inverse of L"));
        }
        for k in 2..=lay.n_h {
            if let Some(x) = &lay.x_cov[k] {
                x_cov[k] = x.value(y);
            }
            if let Some(u) = &lay.u_cov[k] {
                u_cov[k] = u.value(y);
            }
            if let Some(gk) = &lay.g[k] {
                let gv = gk.eval(y);
                k_gain[k] = Some(&gv * psd_pinv(&x_cov[k], 1e-10));
                g[k] = Some(gv);
            }
        }
        let p: Vec<DMatrix<f64>> = lay.p.iter().map(|s| s.value(y)).collect();
        let cost = p.iter().map(|m| m.trace()).sum();
        let theta = lay.theta.iter().map(|t| t.iter().map(|i| y[*i]).collect()).collect();
        let mut sol = SmpcSolution { x_bar, u_bar, x_cov, g, k_gain, u_cov, p, theta, cost, iterations, report: check_lmi(y, &self.sdp) };
        sol.report.extra = self.covariance_slack(&sol);
        sol
    }

    /// Minimum eigenvalue of `X_{k+1} − (A + B̂K_k) X_k (A + B̂K_k)ᵀ − B_dΣ_wB_dᵀ`
    /// for each propagated stage.
    pub fn covariance_slack(&self, sol: &SmpcSolution) -> Vec<(String, f64)> {
        let d = &self.data.0;
        let noise = &d.bd * &d.sigma * d.bd.transpose();
        let mut out = Vec::new();
        for k in 2..self.layout.n_h {
            let kk = sol.k_gain[k].as_ref().expect("gain exists from t+2");
            let acl = &d.a + &d.b_hat * kk;
            let diff = &sol.x_cov[k + 1] - &acl * &sol.x_cov[k] * acl.transpose() - &noise;
            out.push((format!("chain[t+{k}]"), crate::linalg::min_eig(&symmetrize(&diff))));
        }
        out
    }

    /// Closed-loop matrices used by Monte Carlo checks: `(A, B̂, B_d, Σ_w)`.
    pub fn dynamics(&self) -> (&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>) {
        let d = &self.data.0;
        (&d.a, &d.b_hat, &d.bd, &d.sigma)
    }

    pub fn command(&self, sol: &SmpcSolution) -> DispatchCommand {
        command(&self.tf, &sol.u_bar[0], &self.p_dem0, Diagnostics { cost: sol.cost, slack_max: 0.0, iterations: sol.iterations })
    }
}

/// Build and solve the SMPC problem; infeasibility can only come from the
/// chance constraints, since dropping them leaves a feasible problem.
pub fn solve_smpc(
    model: &FarmModel,
    tf: &InputTransform,
    cfg: &MpcConfig,
    x_t: &DVector<f64>,
    d_t: &DVector<f64>,
    constraints: &[ChanceConstraint],
    settings: &SdpSettings,
) -> Result<(DispatchCommand, SmpcSolution), DispatchError> {
    let prob = build_smpc(model, tf, cfg, x_t, d_t, constraints, settings)?;
    let res = solve_sdp(&prob.sdp, settings);
    if res.is_err() {
        // offline cross-checking of failed solves
        if let Some(dir) = std::env::var_os("WFMPC_DUMP_DIR") {
            let path = std::path::Path::new(&dir).join(format!("smpc-{}.toml", std::process::id()));
            let _ = std::fs::write(path, crate::optim::dump::sdp_to_string(&prob.sdp));
        }
    }
    let sol = match res {
        Ok(s) => s,
        Err(SdpError::Infeasible(r)) => return Err(DispatchError::ChanceInfeasible(format!("certificate residual {r:e}"))),
        Err(SdpError::SizeCap(s)) => return Err(DispatchError::SizeCap(s)),
        Err(e) => return Err(DispatchError::Sdp(e)),
    };
    let out = prob.extract(&sol.y, sol.iterations);
    Ok((prob.command(&out), out))
}

// ---------------------------------------------------------------------------
// Baselines

/// Equal split of the farm demand.
pub fn scheduler(p_dem_wf: f64, n: usize) -> DispatchCommand {
    DispatchCommand { p_dem: DVector::from_element(n, p_dem_wf / n as f64), u: DVector::zeros(n), diagnostics: Diagnostics::default() }
}

/// `(π/2) ρ R² C_P^max`, so that available power is this times `v³`.
pub fn available_power_coeff(p: &TurbineParams, surf: &CoefficientSurface) -> f64 {
    PI / 2.0 * p.rho * p.r * p.r * surf.cp_max()
}

/// Split proportional to available power `(π/2) ρ R² v³ C_P^max`.
pub fn proportional_dispatch(
    p_dem_wf: f64,
    v_meas: &[f64],
    params: &[TurbineParams],
    surfs: &[CoefficientSurface],
) -> Result<DispatchCommand, DispatchError> {
    if params.len() != v_meas.len() || surfs.len() != v_meas.len() {
        return Err(DispatchError::Config("one parameter set and surface per turbine required".into()));
    }
    let coeff: Vec<f64> = params.iter().zip(surfs).map(|(p, s)| available_power_coeff(p, s)).collect();
    proportional_with(p_dem_wf, v_meas, &coeff)
}

fn proportional_with(p_dem_wf: f64, v_meas: &[f64], coeff: &[f64]) -> Result<DispatchCommand, DispatchError> {
    if v_meas.iter().any(|v| !(*v > 0.0)) {
        return Err(DispatchError::Config("measured wind speeds must be positive".into()));
    }
    let pa: Vec<f64> = v_meas.iter().zip(coeff).map(|(v, c)| c * v.powi(3)).collect();
    let total: f64 = pa.iter().sum();
    if !(total > 0.0) {
        return Err(DispatchError::Config("no available power".into()));
    }
    let n = v_meas.len();
    let p_dem = DVector::from_iterator(n, pa.iter().map(|p| p_dem_wf * p / total));
    let u = &p_dem - DVector::from_element(n, p_dem_wf / n as f64);
    Ok(DispatchCommand { p_dem, u, diagnostics: Diagnostics::default() })
}

// ---------------------------------------------------------------------------
// Closed-loop wrapper

/// Which dispatcher to run.
#[derive(Debug, Clone, PartialEq)]
pub enum ControllerSpec {
    Scheduler,
    Proportional,
    Mpc(MpcConfig),
}

impl ControllerSpec {
    pub fn label(&self) -> String {
        match self {
            Self::Scheduler => "scheduler".into(),
            Self::Proportional => "proportional".into(),
            Self::Mpc(c) => format!("{}(N_h={})", match c.mode {
                MpcMode::Edmpc => "edmpc",
                MpcMode::Dmpc => "dmpc",
                MpcMode::Smpc => "smpc",
            }, c.n_h),
        }
    }
}

#[derive(Debug, Clone)]
enum Inner {
    Scheduler,
    Proportional(Vec<f64>),
    Edmpc(InputTransform, EdmpcGains),
    Dmpc(Box<DmpcController>),
    Smpc { tf: InputTransform, model: Box<FarmModel>, cfg: MpcConfig, constraints: Vec<ChanceConstraint>, settings: SdpSettings },
}

/// A dispatcher with whatever state it carries between steps.
#[derive(Debug, Clone)]
pub struct Dispatcher {
    inner: Inner,
    p_dem_wf: f64,
    p_dem0: DVector<f64>,
}

impl Dispatcher {
    /// `avail_coeff[i]` is the available-power coefficient of turbine `i`
    /// (only used by the proportional baseline).
    pub fn new(spec: &ControllerSpec, model: &FarmModel, p_dem_wf: f64, avail_coeff: &[f64]) -> Result<Self, DispatchError> {
        let n = model.n();
        let inner = match spec {
            ControllerSpec::Scheduler => Inner::Scheduler,
            ControllerSpec::Proportional => {
                if avail_coeff.len() != n {
                    return Err(DispatchError::Config("available-power coefficients missing".into()));
                }
                Inner::Proportional(avail_coeff.to_vec())
            }
            ControllerSpec::Mpc(cfg) => {
                let tf = make_transform(n)?;
                let cons = box_constraints(n, cfg.u_max);
                match cfg.mode {
                    MpcMode::Edmpc => {
                        let g = edmpc_gains(model, &tf, cfg)?;
                        Inner::Edmpc(tf, g)
                    }
                    MpcMode::Dmpc => Inner::Dmpc(Box::new(DmpcController::new(model, &tf, cfg, &cons)?)),
                    MpcMode::Smpc => {
                        let settings = SdpSettings::default();
                        let est = smpc_dim_estimate(n, model.nx(), cfg.n_h, cons.len());
                        if est > settings.max_dim {
                            return Err(DispatchError::SizeCap(format!(
                                "{n} turbines with N_h = {} need about {est} LMI rows (cap {}); use DMPC or EDMPC",
                                cfg.n_h, settings.max_dim
                            )));
                        }
                        cfg.validate(n)?;
                        Inner::Smpc { tf, model: Box::new(model.clone()), cfg: cfg.clone(), constraints: cons, settings }
                    }
                }
            }
        };
        Ok(Self { inner, p_dem_wf, p_dem0: p_dem0(model) })
    }

    /// Override the QP optimality tolerance and the SDP gap tolerance.
    pub fn set_tolerance(&mut self, tol: f64) {
        match &mut self.inner {
            Inner::Dmpc(c) => c.settings.tol = tol,
            Inner::Smpc { settings, .. } => settings.gap_tol = tol.max(settings.gap_target),
            _ => {}
        }
    }

    /// One decision from the measured state `x`, turbulence `d` and winds.
    pub fn dispatch(&mut self, x: &DVector<f64>, d: &DVector<f64>, v_meas: &[f64]) -> Result<DispatchCommand, DispatchError> {
        match &mut self.inner {
            Inner::Scheduler => Ok(scheduler(self.p_dem_wf, self.p_dem0.len())),
            Inner::Proportional(c) => proportional_with(self.p_dem_wf, v_meas, c),
            Inner::Edmpc(tf, g) => Ok(command(tf, &g.apply(x, d), &self.p_dem0, Diagnostics::default())),
            Inner::Dmpc(ctl) => ctl.solve(x, d),
            Inner::Smpc { tf, model, cfg, constraints, settings } => {
                solve_smpc(model, tf, cfg, x, d, constraints, settings).map(|(c, _)| c)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::farm::build_farm;
    use crate::linearize::{PitchGains, TurbineModel};
    use crate::windsim::fixture;

    fn farm(n: usize) -> FarmModel {
        let models: Vec<TurbineModel> = (0..n)
            .map(|i| {
                TurbineModel::build(
                    TurbineParams::default(),
                    CoefficientSurface::default(),
                    11.5 + 0.5 * i as f64,
                    3e6,
                    PitchGains::Designed { zeta: 0.7, omega_n: 0.6 },
                    1.0,
                )
                .unwrap()
            })
            .collect();
        build_farm(&models, &vec![fixture("eq45").unwrap(); n]).unwrap()
    }

    fn state(model: &FarmModel, seed: u64) -> (DVector<f64>, DVector<f64>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut x = DVector::zeros(model.nx());
        for (i, t) in model.turbines.iter().enumerate() {
            let o = model.offsets[i];
            x[o] = rng.random_range(-1.0..1.0);
            x[o + 1] = rng.random_range(-0.05..0.05);
            x[o + 2] = rng.random_range(-5.0..5.0);
            for k in t.n_wt..t.nx() {
                x[o + k] = rng.random_range(-0.5..0.5);
            }
        }
        let d = DVector::from_fn(model.n(), |_, _| rng.random_range(-1.0..1.0));
        (x, d)
    }

    #[test]
    fn edmpc_is_unconstrained_dmpc() {
        let m = farm(3);
        let tf = make_transform(3).unwrap();
        for n_h in 0..4 {
            let cfg = MpcConfig::new(MpcMode::Dmpc, n_h, vec![0.06; 3], 1e12);
            let g = edmpc_gains(&m, &tf, &cfg).unwrap();
            let mut ctl = DmpcController::new(&m, &tf, &cfg, &[]).unwrap();
            for seed in 0..5 {
                let (x, d) = state(&m, seed);
                let e = command(&tf, &g.apply(&x, &d), &p_dem0(&m), Diagnostics::default());
                let q = ctl.solve(&x, &d).unwrap();
                assert!((&e.u - &q.u).amax() < 1e-8 * MW, "n_h {n_h}: {}", (&e.u - &q.u).amax());
            }
        }
    }

    #[test]
    fn box_binds_and_sum_is_zero() {
        let m = farm(3);
        let tf = make_transform(3).unwrap();
        let cfg = MpcConfig::new(MpcMode::Dmpc, 2, vec![0.06; 3], 1e4);
        let mut ctl = DmpcController::new(&m, &tf, &cfg, &box_constraints(3, cfg.u_max)).unwrap();
        let (x, d) = state(&m, 7);
        let d = d * 10.0;
        let c = ctl.solve(&x, &d).unwrap();
        // the quadratic slack penalty leaves a violation of order λ/ρ
        assert!(c.u.amax() <= 1e4 * (1.0 + 1e-3), "{}", c.u);
        assert!(c.u.amax() >= 1e4 * (1.0 - 1e-3), "box should bind: {}", c.u);
        assert!(c.diagnostics.slack_max > 0.0);
        assert!(c.u.sum().abs() < 1e-6);
        assert!((c.p_dem.sum() - 9e6).abs() < 1e-6 * 9e6);
        // warm start gives the same answer
        let again = ctl.solve(&x, &d).unwrap();
        assert!((&again.u - &c.u).amax() < 1e-6);
    }

    #[test]
    fn smpc_zero_state_and_structure() {
        let m = farm(3);
        let tf = make_transform(3).unwrap();
        let cfg = MpcConfig::new(MpcMode::Smpc, 3, vec![0.06; 3], 1e5);
        let cons = box_constraints(3, cfg.u_max);
        let x = DVector::zeros(m.nx());
        let d = DVector::zeros(3);
        let (c, sol) = solve_smpc(&m, &tf, &cfg, &x, &d, &cons, &SdpSettings::default()).unwrap();
        assert!(c.u.amax() < 1e-3, "{}", c.u);
        assert!(sol.report.passes(1e-7), "{:?}", sol.report.worst_name());
        assert_eq!(sol.x_cov[0].amax(), 0.0);
        assert_eq!(sol.x_cov[1].amax(), 0.0);
        let bd = m.b_d();
        let want = &bd * DMatrix::from_diagonal(&DVector::from_vec(m.sigma_w())) * bd.transpose();
        assert_eq!(sol.x_cov[2], want);
        for (name, v) in &sol.report.extra {
            assert!(*v >= -1e-6, "{name}: {v}");
        }
    }

    #[test]
    fn smpc_tends_to_dmpc() {
        let mut m = farm(3);
        for t in &mut m.turbines {
            t.sigma_w2 = 1e-12;
        }
        let tf = make_transform(3).unwrap();
        let cfg = MpcConfig::new(MpcMode::Smpc, 2, vec![0.06; 3], 1e5);
        let cons = box_constraints(3, cfg.u_max);
        let (x, d) = state(&m, 3);
        let (x, d) = (x * 0.1, d * 0.1);
        let (s, _) = solve_smpc(&m, &tf, &cfg, &x, &d, &cons, &SdpSettings::default()).unwrap();
        let q = solve_dmpc(&m, &tf, &cfg, &x, &d, &cons).unwrap();
        assert!(q.u.amax() < 0.5 * cfg.u_max, "constraints should be inactive: {}", q.u);
        assert!((&s.u - &q.u).amax() < 1e-4 * MW, "{} vs {}", s.u, q.u);
    }

    #[test]
    fn smpc_size_cap() {
        let m = farm(3);
        let tf = make_transform(3).unwrap();
        let cfg = MpcConfig::new(MpcMode::Smpc, 3, vec![0.06; 3], 1e5);
        let tiny = SdpSettings { max_dim: 20, ..Default::default() };
        let r = build_smpc(&m, &tf, &cfg, &DVector::zeros(m.nx()), &DVector::zeros(3), &[], &tiny);
        assert!(matches!(r, Err(DispatchError::SizeCap(_))));
    }

    #[test]
    fn cost_scaling_invariance() {
        let m = farm(2);
        let tf = make_transform(2).unwrap();
        let (x, d) = state(&m, 11);
        let cons = box_constraints(2, 1e5);
        let a = MpcConfig { rho_slack: Some(1e5), ..MpcConfig::new(MpcMode::Dmpc, 2, vec![0.06; 2], 1e5) };
        let mut m2 = m.clone();
        // scaling every output row of C, D, D_d by √s scales Q by s
        for t in &mut m2.turbines {
            for mat in [&mut t.c_a, &mut t.d_a, &mut t.d_da, &mut t.c_0] {
                *mat *= 2f64.sqrt();
            }
        }
        let b = MpcConfig { r: vec![0.12; 2], rho_slack: Some(2e5), ..a.clone() };
        let ua = solve_dmpc(&m, &tf, &a, &x, &d, &cons).unwrap();
        let ub = solve_dmpc(&m2, &tf, &b, &x, &d, &cons).unwrap();
        assert!((&ua.u - &ub.u).amax() < 1e-9 * MW);
    }

    #[test]
    fn transform_shape() {
        let t = make_transform(2).unwrap();
        assert_eq!(t.t, DMatrix::from_column_slice(2, 1, &[1.0, -1.0]));
        let t = make_transform(10).unwrap();
        for j in 0..9 {
            assert_eq!(t.t.column(j).sum(), 0.0);
        }
        assert!(make_transform(1).is_err());
    }

    #[test]
    fn weights_match_display() {
        let tf = make_transform(2).unwrap();
        let (q, r) = build_weights(&tf, 2, &[1.0, 1.0]);
        assert!((q[(0, 0)] - 0.05 / (23e6f64.powi(2) * 2.0)).abs() < 1e-30);
        assert!((q[(1, 1)] - 2.5e-14).abs() < 1e-28);
        assert_eq!(r, DMatrix::from_element(1, 1, 2.0));
    }

    #[test]
    fn quantile_two() {
        let p = 0.5 * statrs::function::erf::erfc(2.0 / 2f64.sqrt());
        assert!((chance_coefficient(p).unwrap() - 0.25).abs() < 1e-9);
        assert!(chance_coefficient(0.5).is_err());
    }

    #[test]
    fn scheduler_split() {
        let c = scheduler(30e6, 10);
        assert!(c.p_dem.iter().all(|p| *p == 3e6));
        assert_eq!(c.p_dem.sum(), 30e6);
    }

    #[test]
    fn proportional_cube_law() {
        let c = proportional_with(9e6, &[12.0, 12.0 * 2f64.cbrt()], &[1.0, 1.0]).unwrap();
        assert!((c.p_dem[0] - 3e6).abs() < 1e-6);
        assert!((c.p_dem[1] - 6e6).abs() < 1e-6);
    }
}
