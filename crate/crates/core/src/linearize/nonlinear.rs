//! Nonlinear single-turbine plant: static aerodynamics, lumped-inertia
//! drivetrain, speed filter and PI pitch loop.

use std::f64::consts::PI;

use super::{aero_torque, thrust_and_tower_moment, CoefficientSurface, LinearizeError, OperatingPoint, TurbineParams};

/// Pitch (deg), rotor speed and filtered generator speed (rad/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WtState {
    pub beta: f64,
    pub omega_r: f64,
    pub omega_f: f64,
}

/// Instantaneous turbine outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WtOutputs {
    pub p_out: f64,
    pub t_r: f64,
    pub t_g: f64,
    pub m_s: f64,
    pub m_t: f64,
}

pub struct NonlinearWt<'a> {
    pub params: &'a TurbineParams,
    pub surface: &'a CoefficientSurface,
    pub op: &'a OperatingPoint,
    /// Optimal-mode torque gain `K` in `T_g ≤ K ω_g²`.
    pub k_opt: f64,
}

impl<'a> NonlinearWt<'a> {
    pub fn new(params: &'a TurbineParams, surface: &'a CoefficientSurface, op: &'a OperatingPoint) -> Self {
        let (cp, lambda, _) = surface.cp_max_point();
        let k_opt = 0.5 * params.rho * PI * params.r.powi(5) * cp / (lambda.powi(3) * params.n_gb.powi(3));
        Self { params, surface, op, k_opt }
    }

    pub fn equilibrium(&self) -> WtState {
        WtState { beta: self.op.beta0, omega_r: self.op.omega_r0, omega_f: self.op.omega_g0 }
    }

    /// Power-tracking torque, limited by the cap and by the optimal-mode
    /// curve `K ω_g²` so that the rotor cannot be braked to a stall when the
    /// wind cannot carry the demand.
    fn generator_torque(&self, omega_r: f64, p_dem: f64) -> f64 {
        let omega_g = self.params.n_gb * omega_r;
        let t = (p_dem / (self.params.mu * omega_g)).min(self.k_opt * omega_g * omega_g);
        match self.params.t_g_max {
            Some(cap) => t.min(cap),
            None => t,
        }
    }

    /// Time derivative of the state for demand `p_dem` (W) and wind `v` (m/s).
    pub fn rhs(&self, x: &WtState, p_dem: f64, v: f64) -> Result<[f64; 3], LinearizeError> {
        let p = self.params;
        let t_r = aero_torque(p, self.surface, v, x.omega_r, x.beta)?;
        let t_g = self.generator_torque(x.omega_r, p_dem);
        let omega_g = p.n_gb * x.omega_r;
        let dw = (t_r - p.n_gb * t_g) / p.inertia();
        let df = (omega_g - x.omega_f) / p.t_omega;
        let e = omega_g - self.op.omega_g0;
        let ef = x.omega_f - self.op.omega_g0;
        let mut db = (p.k_i - p.k_p / p.t_omega) * ef + p.k_p / p.t_omega * e;
        if (x.beta <= p.beta_min && db < 0.0) || (x.beta >= p.beta_max && db > 0.0) {
            db = 0.0;
        }
        Ok([db, dw, df])
    }

    /// Classic RK4 over `dt` with inputs held.
    pub fn rk4(&self, x: &WtState, p_dem: f64, v: f64, dt: f64) -> Result<WtState, LinearizeError> {
        let add = |x: &WtState, k: &[f64; 3], s: f64| WtState {
            beta: x.beta + s * k[0],
            omega_r: x.omega_r + s * k[1],
            omega_f: x.omega_f + s * k[2],
        };
        let k1 = self.rhs(x, p_dem, v)?;
        let k2 = self.rhs(&add(x, &k1, dt / 2.0), p_dem, v)?;
        let k3 = self.rhs(&add(x, &k2, dt / 2.0), p_dem, v)?;
        let k4 = self.rhs(&add(x, &k3, dt), p_dem, v)?;
        let mut out = WtState {
            beta: x.beta + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            omega_r: x.omega_r + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
            omega_f: x.omega_f + dt / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
        };
        out.beta = out.beta.clamp(self.params.beta_min, self.params.beta_max);
        Ok(out)
    }

    /// Advance one sampling period `ts` in `substeps` RK4 steps.
    pub fn advance(&self, x: &WtState, p_dem: f64, v: f64, ts: f64, substeps: usize) -> Result<WtState, LinearizeError> {
        let dt = ts / substeps as f64;
        let mut s = *x;
        for _ in 0..substeps {
            s = self.rk4(&s, p_dem, v, dt)?;
        }
        Ok(s)
    }

    pub fn outputs(&self, x: &WtState, p_dem: f64, v: f64) -> Result<WtOutputs, LinearizeError> {
        let p = self.params;
        let t_r = aero_torque(p, self.surface, v, x.omega_r, x.beta)?;
        let (_, m_t) = thrust_and_tower_moment(p, self.surface, v, x.omega_r, x.beta)?;
        let t_g = self.generator_torque(x.omega_r, p_dem);
        let (c_g, c_r) = p.ms_coefficients();
        Ok(WtOutputs {
            p_out: p.mu * p.n_gb * x.omega_r * t_g,
            t_r,
            t_g,
            m_s: self.op.m_s0 + c_g * (t_g - self.op.t_g0) + c_r * (t_r - self.op.t_r0),
            m_t,
        })
    }
}
