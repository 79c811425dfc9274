//! Turbine models augmented with wind predictors, stacked into a farm.
//!
//! Per turbine, with predictor state `x_v` and turbine state `x_wt`:
//!
//! ```text
//! A_a = [ Ā   B̄d C_v     ]   B_a = [B̄]   B_da = [B̄d]   C_a = [C̄  D̄d C_v]
//!       [ 0   A_v+B_v C_v ]         [0 ]          [B_v]
//! ```
//!
//! At the measured step the predictor feedback is cut: `A_0 = diag(Ā, A_v)`,
//! `C_0 = [C̄ 0]` and the measured turbulence `d` drives `B_da` and `D_da`.
//! The predictor state therefore advances with `A_v` and `B_v d` at that step.

use crate::linalg::block_diag;
use crate::linearize::{DiscreteSS, OperatingPoint, TurbineModel};
use crate::windsim::PredictorSS;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum FarmError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("a farm needs at least one turbine")]
    Empty,
}

/// One turbine with its predictor, see the module docs for the block layout.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedWt {
    pub a_a: DMatrix<f64>,
    pub b_a: DMatrix<f64>,
    pub b_da: DMatrix<f64>,
    pub c_a: DMatrix<f64>,
    pub d_a: DMatrix<f64>,
    pub d_da: DMatrix<f64>,
    pub a_0: DMatrix<f64>,
    pub c_0: DMatrix<f64>,
    pub sigma_w2: f64,
    /// Number of turbine states (the leading block).
    pub n_wt: usize,
}

impl AugmentedWt {
    pub fn nx(&self) -> usize {
        self.a_a.nrows()
    }

    pub fn ny(&self) -> usize {
        self.c_a.nrows()
    }

    /// One update. With `first_step` the disturbance is the measured
    /// turbulence, otherwise the innovation.
    pub fn step(&self, x: &DVector<f64>, u: f64, dw: f64, first_step: bool) -> (DVector<f64>, DVector<f64>) {
        let (a, c) = if first_step { (&self.a_0, &self.c_0) } else { (&self.a_a, &self.c_a) };
        let xn = a * x + self.b_a.column(0) * u + self.b_da.column(0) * dw;
        let y = c * x + self.d_a.column(0) * u + self.d_da.column(0) * dw;
        (xn, y)
    }
}

/// Build the augmented turbine from its discrete model and predictor.
pub fn augment_wt(wt: &DiscreteSS, pred: &PredictorSS) -> Result<AugmentedWt, FarmError> {
    pred.validate().map_err(|e| FarmError::Dimension(e.to_string()))?;
    if (wt.ts - 1.0).abs() > 1e-12 {
        return Err(FarmError::Dimension(format!("turbine model sampled at {} s, predictor at 1 s", wt.ts)));
    }
    let n = wt.nx();
    let nv = pred.order();
    if wt.b.ncols() != 1 || wt.bd.ncols() != 1 || wt.d.ncols() != 1 || wt.dd.ncols() != 1 {
        return Err(FarmError::Dimension("turbine model must have one input and one disturbance".into()));
    }
    let p = wt.c.nrows();
    let k = n + nv;
    let mut a_a = DMatrix::zeros(k, k);
    a_a.view_mut((0, 0), (n, n)).copy_from(&wt.a);
    a_a.view_mut((0, n), (n, nv)).copy_from(&(&wt.bd * &pred.c_v));
    a_a.view_mut((n, n), (nv, nv)).copy_from(&(&pred.a_v + &pred.b_v * &pred.c_v));
    let mut b_a = DMatrix::zeros(k, 1);
    b_a.view_mut((0, 0), (n, 1)).copy_from(&wt.b);
    let mut b_da = DMatrix::zeros(k, 1);
    b_da.view_mut((0, 0), (n, 1)).copy_from(&wt.bd);
    b_da.view_mut((n, 0), (nv, 1)).copy_from(&pred.b_v);
    let mut c_a = DMatrix::zeros(p, k);
    c_a.view_mut((0, 0), (p, n)).copy_from(&wt.c);
    c_a.view_mut((0, n), (p, nv)).copy_from(&(&wt.dd * &pred.c_v));
    let a_0 = block_diag(&[&wt.a, &pred.a_v]);
    let mut c_0 = DMatrix::zeros(p, k);
    c_0.view_mut((0, 0), (p, n)).copy_from(&wt.c);
    Ok(AugmentedWt {
        a_a,
        b_a,
        b_da,
        c_a,
        d_a: wt.d.clone(),
        d_da: wt.dd.clone(),
        a_0,
        c_0,
        sigma_w2: pred.err_var,
        n_wt: n,
    })
}

/// Block-diagonal farm, stored per turbine.
#[derive(Debug, Clone, PartialEq)]
pub struct FarmModel {
    pub turbines: Vec<AugmentedWt>,
    pub ops: Vec<OperatingPoint>,
    /// Start of each turbine's block in the stacked state.
    pub offsets: Vec<usize>,
}

/// Stack turbines in the given order. `ops` holds each turbine's operating
/// point for reconstructing absolute signals.
pub fn assemble_farm(turbines: Vec<AugmentedWt>, ops: Vec<OperatingPoint>) -> Result<FarmModel, FarmError> {
    if turbines.is_empty() {
        return Err(FarmError::Empty);
    }
    if ops.len() != turbines.len() {
        return Err(FarmError::Dimension(format!("{} turbines but {} operating points", turbines.len(), ops.len())));
    }
    let mut offsets = Vec::with_capacity(turbines.len());
    let mut off = 0;
    for t in &turbines {
        offsets.push(off);
        off += t.nx();
    }
    Ok(FarmModel { turbines, ops, offsets })
}

macro_rules! dense_view {
    ($name:ident, $field:ident) => {
        pub fn $name(&self) -> DMatrix<f64> {
            let blocks: Vec<&DMatrix<f64>> = self.turbines.iter().map(|t| &t.$field).collect();
            block_diag(&blocks)
        }
    };
}

impl FarmModel {
    pub fn n(&self) -> usize {
        self.turbines.len()
    }

    pub fn nx(&self) -> usize {
        self.turbines.iter().map(|t| t.nx()).sum()
    }

    pub fn ny(&self) -> usize {
        self.turbines.iter().map(|t| t.ny()).sum()
    }

    /// Innovation variances `diag(Σ_w)`.
    pub fn sigma_w(&self) -> Vec<f64> {
        self.turbines.iter().map(|t| t.sigma_w2).collect()
    }

    pub fn block<'a>(&self, i: usize, x: &'a DVector<f64>) -> nalgebra::DVectorView<'a, f64> {
        x.rows(self.offsets[i], self.turbines[i].nx())
    }

    dense_view!(a, a_a);
    dense_view!(b, b_a);
    dense_view!(b_d, b_da);
    dense_view!(c, c_a);
    dense_view!(d, d_a);
    dense_view!(d_d, d_da);
    dense_view!(a_0, a_0);
    dense_view!(c_0, c_0);
}

/// Augment each turbine with its predictor and stack them.
pub fn build_farm(models: &[TurbineModel], preds: &[PredictorSS]) -> Result<FarmModel, FarmError> {
    if models.len() != preds.len() {
        return Err(FarmError::Dimension(format!("{} turbines but {} predictors", models.len(), preds.len())));
    }
    let wts = models.iter().zip(preds).map(|(m, p)| augment_wt(&m.discrete, p)).collect::<Result<Vec<_>, _>>()?;
    assemble_farm(wts, models.iter().map(|m| m.op.clone()).collect())
}

/// One farm update, turbine by turbine.
pub fn step_farm(
    model: &FarmModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    d_or_w: &DVector<f64>,
    first_step: bool,
) -> Result<(DVector<f64>, DVector<f64>), FarmError> {
    let n = model.n();
    if x.len() != model.nx() || u.len() != n || d_or_w.len() != n {
        return Err(FarmError::Dimension(format!(
            "x {} (want {}), u {} and d {} (want {n})",
            x.len(),
            model.nx(),
            u.len(),
            d_or_w.len()
        )));
    }
    let mut xn = DVector::zeros(model.nx());
    let mut y = DVector::zeros(model.ny());
    let mut yoff = 0;
    for (i, t) in model.turbines.iter().enumerate() {
        let xi = model.block(i, x).into_owned();
        let (xni, yi) = t.step(&xi, u[i], d_or_w[i], first_step);
        xn.rows_mut(model.offsets[i], t.nx()).copy_from(&xni);
        y.rows_mut(yoff, t.ny()).copy_from(&yi);
        yoff += t.ny();
    }
    Ok((xn, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::windsim::fixture;

    fn wt() -> DiscreteSS {
        DiscreteSS {
            a: DMatrix::from_row_slice(3, 3, &[0.9, 0.1, 0.0, 0.0, 0.8, 0.1, 0.0, 0.2, 0.5]),
            b: DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.5]),
            bd: DMatrix::from_column_slice(3, 1, &[0.3, 0.2, 0.0]),
            c: DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, 0.0]),
            d: DMatrix::from_column_slice(2, 1, &[0.0, 0.7]),
            dd: DMatrix::from_column_slice(2, 1, &[3.0, 0.1]),
            ts: 1.0,
        }
    }

    #[test]
    fn block_structure() {
        let a = augment_wt(&wt(), &fixture("eq45").unwrap()).unwrap();
        assert_eq!(a.nx(), 5);
        assert_eq!(a.a_0.view((0, 3), (3, 2)).norm(), 0.0);
        assert_eq!(a.c_0.view((0, 3), (2, 2)).norm(), 0.0);
    }

    #[test]
    fn zero_cv_decouples() {
        let mut p = fixture("eq45").unwrap();
        p.c_v.fill(0.0);
        let a = augment_wt(&wt(), &p).unwrap();
        assert_eq!(a.a_a.view((0, 3), (3, 2)).norm(), 0.0);
        assert_eq!(a.c_a.view((0, 3), (2, 2)).norm(), 0.0);
    }

    #[test]
    fn empty_farm_rejected() {
        assert_eq!(assemble_farm(vec![], vec![]), Err(FarmError::Empty));
    }

    #[test]
    fn zero_in_zero_out() {
        let a = augment_wt(&wt(), &fixture("eq45").unwrap()).unwrap();
        let op = OperatingPoint {
            v0: 12.0, beta0: 0.0, omega_r0: 1.0, omega_g0: 97.0, t_r0: 1.0, t_g0: 1.0,
            m_t0: 1.0, m_s0: 1.0, p_ref0: 1.0, p_dem0: 1.0,
        };
        let f = assemble_farm(vec![a.clone(), a], vec![op.clone(), op]).unwrap();
        let (xn, y) = step_farm(&f, &DVector::zeros(10), &DVector::zeros(2), &DVector::zeros(2), false).unwrap();
        assert_eq!(xn.norm() + y.norm(), 0.0);
        assert!(step_farm(&f, &DVector::zeros(9), &DVector::zeros(2), &DVector::zeros(2), false).is_err());
    }
}
