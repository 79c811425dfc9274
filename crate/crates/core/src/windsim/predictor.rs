use super::{ArmaModel, WindError, WindSeries};
use nalgebra::{DMatrix, DVector};

/// State-space realization of the one-step-ahead predictor
/// `v̂(t|t−1) = (C(z) − A(z))/C(z) · ṽ(t)`:
/// `x(t+1) = A_v x(t) + B_v ṽ(t)`, `v̂(t+1|t) = C_v x(t+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorSS {
    pub a_v: DMatrix<f64>,
    pub b_v: DMatrix<f64>,
    pub c_v: DMatrix<f64>,
    pub err_var: f64,
    pub mean: f64,
}

impl PredictorSS {
    /// Zero-order predictor that always forecasts the mean; its error
    /// variance is the turbulence variance.
    pub fn none(sigma2: f64, mean: f64) -> Self {
        Self {
            a_v: DMatrix::zeros(0, 0),
            b_v: DMatrix::zeros(0, 1),
            c_v: DMatrix::zeros(1, 0),
            err_var: sigma2,
            mean,
        }
    }

    pub fn order(&self) -> usize {
        self.a_v.nrows()
    }

    /// Markov parameters `C_v A_v^{k−1} B_v`, k = 1..=n.
    pub fn impulse_response(&self, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n);
        let mut x = self.b_v.clone();
        for _ in 0..n {
            out.push(if self.order() == 0 { 0.0 } else { (&self.c_v * &x)[(0, 0)] });
            x = &self.a_v * x;
        }
        out
    }

    pub fn validate(&self) -> Result<(), WindError> {
        let n = self.order();
        if self.a_v.ncols() != n || self.b_v.shape() != (n, 1) || self.c_v.shape() != (1, n) {
            return Err(WindError::Format("predictor matrix dimensions are inconsistent".into()));
        }
        if !(self.err_var > 0.0) {
            return Err(WindError::Format("prediction error variance must be positive".into()));
        }
        if crate::linalg::spectral_radius(&self.a_v) >= 1.0 {
            return Err(WindError::Format("predictor A_v is not stable".into()));
        }
        Ok(())
    }
}

/// Controllable canonical realization of `(C − A)/C`.
pub fn build_predictor(model: &ArmaModel) -> PredictorSS {
    let n = model.na().max(model.nc());
    let coef = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    let mut a_v = DMatrix::zeros(n, n);
    let mut c_v = DMatrix::zeros(1, n);
    for i in 0..n {
        a_v[(0, i)] = -coef(&model.c, i);
        c_v[(0, i)] = coef(&model.c, i) - coef(&model.a, i);
        if i + 1 < n {
            a_v[(i + 1, i)] = 1.0;
        }
    }
    let mut b_v = DMatrix::zeros(n, 1);
    if n > 0 {
        b_v[(0, 0)] = 1.0;
    }
    PredictorSS { a_v, b_v, c_v, err_var: model.sigma_w2, mean: model.mean }
}

/// One-step prediction errors `ṽ(t) − v̂(t|t−1)` over a series, predictor
/// state starting at zero.
pub fn prediction_errors(pred: &PredictorSS, samples: &[f64]) -> Vec<f64> {
    let n = pred.order();
    let mut x = DVector::zeros(n);
    let mut out = Vec::with_capacity(samples.len());
    for v in samples {
        let vt = v - pred.mean;
        let vhat = if n == 0 { 0.0 } else { (&pred.c_v * &x)[0] };
        out.push(vt - vhat);
        if n > 0 {
            x = &pred.a_v * x + &pred.b_v * vt;
        }
    }
    out
}

/// Samples skipped before error statistics are collected.
pub const VALIDATION_WARMUP: usize = 50;

/// `1 − var(prediction error)/var(validation)` with a short warm-up discard.
/// Also returns the empirical error variance.
pub fn variance_reduction(pred: &PredictorSS, validation: &WindSeries) -> Result<(f64, f64), WindError> {
    let s = &validation.samples;
    let skip = VALIDATION_WARMUP.min(s.len() / 4);
    let (_, std) = crate::linalg::mean_std(&s[skip..]);
    if !(std > 0.0) {
        return Err(WindError::ZeroVariance);
    }
    let e = prediction_errors(pred, s);
    let (_, estd) = crate::linalg::mean_std(&e[skip..]);
    let err_var = estd * estd;
    Ok((1.0 - err_var / (std * std), err_var))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c_equal_a_gives_zero_predictor() {
        let m = ArmaModel { a: vec![0.3, -0.1], c: vec![0.3, -0.1], sigma_w2: 1.0, mean: 5.0 };
        let p = build_predictor(&m);
        assert!(p.impulse_response(20).iter().all(|h| *h == 0.0));
        let e = prediction_errors(&p, &[5.5, 6.0, 4.0]);
        assert_eq!(e, vec![0.5, 1.0, -1.0]);
    }

    #[test]
    fn none_predictor() {
        let p = PredictorSS::none(1.44, 12.0);
        assert_eq!(p.order(), 0);
        assert_eq!(prediction_errors(&p, &[13.0]), vec![1.0]);
    }
}
