//! Single-turbine statics, operating point, linear model and discretization.
//!
//! Pitch is expressed in degrees throughout; all other quantities are SI.

mod nonlinear;
mod surface;

pub use nonlinear::{NonlinearWt, WtOutputs, WtState};
pub use surface::{ct_from_cp, induction_from_cp, AnalyticCp, Coefficients, CoefficientSurface, TabulatedSurface, BETZ};

use nalgebra::DMatrix;
use std::f64::consts::PI;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum LinearizeError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid turbine parameters: {0}")]
    InvalidParams(String),
    #[error("no operating point: {0}")]
    OperatingPoint(String),
    #[error("surface file: {0}")]
    Parse(String),
}

/// Which coefficient multiplies `T_r − T_r0` in the main-shaft torque row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MsFormula {
    /// `n_gb²/J`, the printed coefficient.
    #[default]
    AsPrinted,
    /// `n_gb² J_g / J`, the lumped two-inertia shaft torque.
    LumpedInertia,
}

/// Physical constants of one turbine. Defaults are the NREL 5-MW reference
/// turbine; `k_p`/`k_i` are in degrees per rad/s of generator speed error.
#[derive(Debug, Clone, PartialEq)]
pub struct TurbineParams {
    pub rho: f64,
    pub r: f64,
    pub h: f64,
    pub n_gb: f64,
    pub j_r: f64,
    pub j_g: f64,
    pub mu: f64,
    pub t_omega: f64,
    pub k_p: f64,
    pub k_i: f64,
    pub p_rated: f64,
    /// Rated generator speed used as the speed set point (rad/s).
    pub omega_g_rated: f64,
    /// Generator torque limit (N·m); `None` disables saturation.
    pub t_g_max: Option<f64>,
    pub beta_min: f64,
    pub beta_max: f64,
    pub ms_formula: MsFormula,
}

impl Default for TurbineParams {
    fn default() -> Self {
        // NREL gain schedule at zero pitch, converted from rad to deg.
        let deg = 180.0 / PI;
        Self {
            rho: 1.225,
            r: 63.0,
            h: 87.6,
            n_gb: 97.0,
            j_r: 38_759_228.0,
            j_g: 534.116,
            mu: 0.944,
            t_omega: 1.0 / (2.0 * PI * 0.25),
            k_p: 0.018_826_81 * deg,
            k_i: 0.008_068_634 * deg,
            p_rated: 5e6,
            omega_g_rated: 1173.7 * 2.0 * PI / 60.0,
            t_g_max: Some(47_402.91),
            beta_min: 0.0,
            beta_max: 90.0,
            ms_formula: MsFormula::AsPrinted,
        }
    }
}

impl TurbineParams {
    pub fn validate(&self) -> Result<(), LinearizeError> {
        let pos = [
            ("rho", self.rho),
            ("R", self.r),
            ("h", self.h),
            ("n_gb", self.n_gb),
            ("J_r", self.j_r),
            ("J_g", self.j_g),
            ("mu", self.mu),
            ("T_omega", self.t_omega),
            ("K_P", self.k_p),
            ("K_I", self.k_i),
            ("P_rated", self.p_rated),
            ("omega_g_rated", self.omega_g_rated),
        ];
        for (name, v) in pos {
            if !(v > 0.0) || !v.is_finite() {
                return Err(LinearizeError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if self.mu > 1.0 {
            return Err(LinearizeError::InvalidParams(format!("mu must be <= 1, got {}", self.mu)));
        }
        if let Some(t) = self.t_g_max {
            if !(t > 0.0) {
                return Err(LinearizeError::InvalidParams("t_g_max must be positive".into()));
            }
        }
        if !(self.beta_max > self.beta_min) {
            return Err(LinearizeError::InvalidParams("beta_max must exceed beta_min".into()));
        }
        Ok(())
    }

    /// Total inertia seen by the rotor, `J_r + n_gb² J_g`.
    pub fn inertia(&self) -> f64 {
        self.j_r + self.n_gb * self.n_gb * self.j_g
    }

    pub fn omega_r_rated(&self) -> f64 {
        self.omega_g_rated / self.n_gb
    }

    /// Coefficients `(c_g, c_r)` of `M_s − M_s0 = c_g ΔT_g + c_r ΔT_r`.
    pub fn ms_coefficients(&self) -> (f64, f64) {
        let j = self.inertia();
        let c_g = self.n_gb * self.j_r / j;
        let c_r = match self.ms_formula {
            MsFormula::AsPrinted => self.n_gb * self.n_gb / j,
            MsFormula::LumpedInertia => self.n_gb * self.n_gb * self.j_g / j,
        };
        (c_g, c_r)
    }
}

fn check_speeds(v: f64, omega_r: f64) -> Result<(), LinearizeError> {
    if !(v > 0.0) || !(omega_r > 0.0) {
        return Err(LinearizeError::Domain(format!("need v > 0 and omega_r > 0, got v={v}, omega_r={omega_r}")));
    }
    Ok(())
}

/// Aerodynamic power `(π/2) ρ R² v³ C_P(λ, β)` in W.
pub fn aero_power(p: &TurbineParams, surf: &CoefficientSurface, v: f64, omega_r: f64, beta: f64) -> Result<f64, LinearizeError> {
    check_speeds(v, omega_r)?;
    let c = surf.eval(omega_r * p.r / v, beta)?;
    Ok(PI / 2.0 * p.rho * p.r * p.r * v.powi(3) * c.cp)
}

/// Aerodynamic torque `(π/2) ρ R³ v² C_Q(λ, β)` in N·m.
pub fn aero_torque(p: &TurbineParams, surf: &CoefficientSurface, v: f64, omega_r: f64, beta: f64) -> Result<f64, LinearizeError> {
    check_speeds(v, omega_r)?;
    let c = surf.eval(omega_r * p.r / v, beta)?;
    Ok(PI / 2.0 * p.rho * p.r.powi(3) * v * v * c.cq)
}

/// Thrust force and tower-base moment `(F_t, h F_t)`.
pub fn thrust_and_tower_moment(p: &TurbineParams, surf: &CoefficientSurface, v: f64, omega_r: f64, beta: f64) -> Result<(f64, f64), LinearizeError> {
    check_speeds(v, omega_r)?;
    let c = surf.eval(omega_r * p.r / v, beta)?;
    let f = PI / 2.0 * p.rho * p.r * p.r * v * v * c.ct;
    Ok((f, p.h * f))
}

/// Steady-state linearization point. Pitch in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub v0: f64,
    pub beta0: f64,
    pub omega_r0: f64,
    pub omega_g0: f64,
    pub t_r0: f64,
    pub t_g0: f64,
    pub m_t0: f64,
    pub m_s0: f64,
    pub p_ref0: f64,
    pub p_dem0: f64,
}

impl OperatingPoint {
    /// Close the statics for wind `v0` and demand `p_dem0`: the rotor runs at
    /// rated speed and the pitch is found by bisection so that
    /// `μ · aero_power = p_dem0`.
    pub fn solve(p: &TurbineParams, surf: &CoefficientSurface, v0: f64, p_dem0: f64) -> Result<Self, LinearizeError> {
        p.validate()?;
        if !(p_dem0 > 0.0) {
            return Err(LinearizeError::OperatingPoint(format!("demand must be positive, got {p_dem0}")));
        }
        let w = p.omega_r_rated();
        let target = p_dem0 / p.mu;
        let f = |b: f64| aero_power(p, surf, v0, w, b).map(|pa| pa - target);
        let (mut lo, mut hi) = (p.beta_min, p.beta_max.min(45.0));
        let (flo, fhi) = (f(lo)?, f(hi)?);
        if flo < 0.0 {
            return Err(LinearizeError::OperatingPoint(format!(
                "wind {v0} m/s cannot deliver {:.3} MW at rated speed (power-maximization region)",
                p_dem0 / 1e6
            )));
        }
        if fhi > 0.0 {
            return Err(LinearizeError::OperatingPoint(format!("no pitch in range sheds power at {v0} m/s")));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid)? > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-14 {
                break;
            }
        }
        let beta0 = 0.5 * (lo + hi);
        let t_r0 = aero_torque(p, surf, v0, w, beta0)?;
        let t_g0 = t_r0 / p.n_gb;
        let omega_g0 = p.omega_g_rated;
        let closure = (p.mu * omega_g0 * t_g0 - p_dem0).abs() / p_dem0;
        if closure > 1e-8 {
            return Err(LinearizeError::OperatingPoint(format!("power balance residual {closure:e}")));
        }
        let (_, m_t0) = thrust_and_tower_moment(p, surf, v0, w, beta0)?;
        Ok(Self {
            v0,
            beta0,
            omega_r0: w,
            omega_g0,
            t_r0,
            t_g0,
            m_t0,
            m_s0: t_r0,
            p_ref0: p_dem0,
            p_dem0,
        })
    }
}

/// Partial derivatives of rotor torque and tower moment at an operating point.
/// Pitch derivatives are per degree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AeroGains {
    pub k_v_tr: f64,
    pub k_w_tr: f64,
    pub k_beta_tr: f64,
    pub k_v_mt: f64,
    pub k_omega_mt: f64,
    pub k_beta_mt: f64,
}

/// Finite-difference steps (δv, δω, δβ) used by [`compute_aero_gains`].
pub const GAIN_STEPS: (f64, f64, f64) = (1e-3, 1e-4, 1e-3);

/// Central-difference gains at `op` with the default steps.
pub fn compute_aero_gains(p: &TurbineParams, surf: &CoefficientSurface, op: &OperatingPoint) -> Result<AeroGains, LinearizeError> {
    compute_aero_gains_with_steps(p, surf, op, GAIN_STEPS)
}

/// Central-difference gains with explicit steps `(δv, δω, δβ)`.
pub fn compute_aero_gains_with_steps(
    p: &TurbineParams,
    surf: &CoefficientSurface,
    op: &OperatingPoint,
    steps: (f64, f64, f64),
) -> Result<AeroGains, LinearizeError> {
    let (dv, dw, db) = steps;
    let (v, w, b) = (op.v0, op.omega_r0, op.beta0);
    for (vv, ww, bb) in [(v - dv, w, b), (v + dv, w, b), (v, w - dw, b), (v, w + dw, b), (v, w, b - db), (v, w, b + db)] {
        if !(vv > 0.0) || !surf.contains(ww * p.r / vv, bb) {
            return Err(LinearizeError::Domain(format!("operating point v={v}, omega_r={w}, beta={b} outside surface")));
        }
    }
    let tr = |v, w, b| aero_torque(p, surf, v, w, b);
    let mt = |v, w, b| thrust_and_tower_moment(p, surf, v, w, b).map(|x| x.1);
    let t0 = tr(v, w, b)?;
    if (t0 - op.t_r0).abs() > 0.01 * op.t_r0.abs() {
        eprintln!("warning: operating point torque {} differs from surface torque {t0} by more than 1%", op.t_r0);
    }
    Ok(AeroGains {
        k_v_tr: (tr(v + dv, w, b)? - tr(v - dv, w, b)?) / (2.0 * dv),
        k_w_tr: (tr(v, w + dw, b)? - tr(v, w - dw, b)?) / (2.0 * dw),
        k_beta_tr: (tr(v, w, b + db)? - tr(v, w, b - db)?) / (2.0 * db),
        k_v_mt: (mt(v + dv, w, b)? - mt(v - dv, w, b)?) / (2.0 * dv),
        k_omega_mt: (mt(v, w + dw, b)? - mt(v, w - dw, b)?) / (2.0 * dw),
        k_beta_mt: (mt(v, w, b + db)? - mt(v, w, b - db)?) / (2.0 * db),
    })
}

/// PI gains from the usual second-order rule: the closed speed loop behaves
/// like `s² + 2ζω_n s + ω_n²` when the aerodynamic speed derivative is ignored.
pub fn design_pitch_gains(p: &TurbineParams, gains: &AeroGains, op: &OperatingPoint, zeta: f64, omega_n: f64) -> Result<(f64, f64), LinearizeError> {
    let dp_dbeta = -gains.k_beta_tr * op.omega_r0;
    if !(dp_dbeta > 0.0) {
        return Err(LinearizeError::OperatingPoint("power does not decrease with pitch here".into()));
    }
    let scale = p.inertia() * op.omega_r0 / (p.n_gb * dp_dbeta);
    Ok((2.0 * scale * zeta * omega_n, scale * omega_n * omega_n))
}

/// Continuous-time linear model. State (Δβ [deg], Δω_r, Δω_g^f), input ΔP_dem,
/// disturbance Δv, outputs (ΔM_t, ΔM_s).
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousSS {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub dd: DMatrix<f64>,
}

/// Discrete-time model with sampling time `ts`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSS {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub dd: DMatrix<f64>,
    pub ts: f64,
}

impl DiscreteSS {
    pub fn nx(&self) -> usize {
        self.a.nrows()
    }
}

/// Assemble the three-state turbine model around `op`.
pub fn linearize_wt(p: &TurbineParams, g: &AeroGains, op: &OperatingPoint) -> Result<ContinuousSS, LinearizeError> {
    p.validate()?;
    let j = p.inertia();
    if !(j > 0.0) {
        return Err(LinearizeError::InvalidParams("singular inertia".into()));
    }
    let n = p.n_gb;
    let tw = p.t_omega;
    let wg0 = op.omega_g0;
    // ΔT_g = u/(μ ω_g0) − P0/(μ ω_g0²) n Δω_r
    let tg_u = 1.0 / (p.mu * wg0);
    let tg_w = -op.p_dem0 * n / (p.mu * wg0 * wg0);
    let (c_g, c_r) = p.ms_coefficients();

    let a = DMatrix::from_row_slice(3, 3, &[
        0.0, p.k_p * n / tw, p.k_i - p.k_p / tw,
        g.k_beta_tr / j, (g.k_w_tr - n * tg_w) / j, 0.0,
        0.0, n / tw, -1.0 / tw,
    ]);
    let b = DMatrix::from_column_slice(3, 1, &[0.0, -n * tg_u / j, 0.0]);
    let bd = DMatrix::from_column_slice(3, 1, &[0.0, g.k_v_tr / j, 0.0]);
    let c = DMatrix::from_row_slice(2, 3, &[
        g.k_beta_mt, g.k_omega_mt, 0.0,
        c_r * g.k_beta_tr, c_g * tg_w + c_r * g.k_w_tr, 0.0,
    ]);
    let d = DMatrix::from_column_slice(2, 1, &[0.0, c_g * tg_u]);
    let dd = DMatrix::from_column_slice(2, 1, &[g.k_v_mt, c_r * g.k_v_tr]);
    Ok(ContinuousSS { a, b, bd, c, d, dd })
}

/// Zero-order-hold discretization through the exponential of the augmented
/// matrix `[[A, B, Bd], [0, 0, 0]]·Ts`.
pub fn discretize(sys: &ContinuousSS, ts: f64) -> DiscreteSS {
    assert!(ts > 0.0, "sampling time must be positive");
    let n = sys.a.nrows();
    let m = sys.b.ncols();
    let q = sys.bd.ncols();
    let k = n + m + q;
    let mut aug = DMatrix::zeros(k, k);
    aug.view_mut((0, 0), (n, n)).copy_from(&(&sys.a * ts));
    aug.view_mut((0, n), (n, m)).copy_from(&(&sys.b * ts));
    aug.view_mut((0, n + m), (n, q)).copy_from(&(&sys.bd * ts));
    let e = aug.exp();
    DiscreteSS {
        a: e.view((0, 0), (n, n)).into_owned(),
        b: e.view((0, n), (n, m)).into_owned(),
        bd: e.view((0, n + m), (n, q)).into_owned(),
        c: sys.c.clone(),
        d: sys.d.clone(),
        dd: sys.dd.clone(),
        ts,
    }
}

/// Everything needed to run one turbine: parameters, surface, operating
/// point, gains and the discrete model.
#[derive(Debug, Clone)]
pub struct TurbineModel {
    pub params: TurbineParams,
    pub surface: CoefficientSurface,
    pub op: OperatingPoint,
    pub gains: AeroGains,
    pub discrete: DiscreteSS,
}

/// How the PI gains are chosen when building a [`TurbineModel`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PitchGains {
    /// Use `params.k_p`, `params.k_i` as given.
    Fixed,
    /// Design them at the operating point with damping `zeta` and natural
    /// frequency `omega_n` (rad/s).
    Designed { zeta: f64, omega_n: f64 },
}

impl TurbineModel {
    pub fn build(
        mut params: TurbineParams,
        surface: CoefficientSurface,
        v0: f64,
        p_dem0: f64,
        pitch: PitchGains,
        ts: f64,
    ) -> Result<Self, LinearizeError> {
        let op = OperatingPoint::solve(&params, &surface, v0, p_dem0)?;
        let gains = compute_aero_gains(&params, &surface, &op)?;
        if let PitchGains::Designed { zeta, omega_n } = pitch {
            let (kp, ki) = design_pitch_gains(&params, &gains, &op, zeta, omega_n)?;
            params.k_p = kp;
            params.k_i = ki;
        }
        let cont = linearize_wt(&params, &gains, &op)?;
        let discrete = discretize(&cont, ts);
        Ok(Self { params, surface, op, gains, discrete })
    }

    pub fn nonlinear(&self) -> NonlinearWt<'_> {
        NonlinearWt::new(&self.params, &self.surface, &self.op)
    }
}
