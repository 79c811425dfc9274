use super::{WindError, WindSeries};
use crate::linalg::monic_root_moduli;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// `A(z) y = C(z) w` with monic `A(z) = 1 + a₁z⁻¹ + …` and
/// `C(z) = 1 + c₁z⁻¹ + …`; `a`, `c` hold the non-leading coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmaModel {
    pub a: Vec<f64>,
    pub c: Vec<f64>,
    pub sigma_w2: f64,
    pub mean: f64,
}

impl ArmaModel {
    pub fn na(&self) -> usize {
        self.a.len()
    }

    pub fn nc(&self) -> usize {
        self.c.len()
    }

    /// Both polynomials have all roots strictly inside the unit circle.
    pub fn is_stable_invertible(&self) -> bool {
        let inside = |p: &[f64]| monic_root_moduli(p).iter().all(|r| *r < 1.0 - 1e-9);
        inside(&self.a) && inside(&self.c) && self.sigma_w2 > 0.0 && self.sigma_w2.is_finite()
    }

    /// Innovation estimates obtained by inverse filtering zero-mean data.
    pub fn residuals(&self, y: &[f64]) -> Vec<f64> {
        let mut e = vec![0.0; y.len()];
        for t in 0..y.len() {
            let mut v = y[t];
            for (i, ai) in self.a.iter().enumerate() {
                if t > i {
                    v += ai * y[t - i - 1];
                }
            }
            for (i, ci) in self.c.iter().enumerate() {
                if t > i {
                    v -= ci * e[t - i - 1];
                }
            }
            e[t] = v;
        }
        e
    }
}

fn least_squares(phi: &DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    let g = phi.transpose() * phi;
    let rhs = phi.transpose() * y;
    g.cholesky().map(|c| c.solve(&rhs))
}

/// Samples discarded before residual statistics are taken.
const WARMUP: usize = 50;

fn fit_candidate(y: &[f64], e_long: &[f64], start: usize, na: usize, nc: usize) -> Option<(Vec<f64>, Vec<f64>)> {
    let rows = y.len() - start;
    let mut phi = DMatrix::zeros(rows, na + nc);
    let mut rhs = DVector::zeros(rows);
    for (r, t) in (start..y.len()).enumerate() {
        rhs[r] = y[t];
        for i in 0..na {
            phi[(r, i)] = -y[t - i - 1];
        }
        for i in 0..nc {
            phi[(r, na + i)] = e_long[t - i - 1];
        }
    }
    let theta = least_squares(&phi, &rhs)?;
    Some((theta.rows(0, na).iter().cloned().collect(), theta.rows(na, nc).iter().cloned().collect()))
}

/// Two-stage least squares over the order grid `[1..max_na] × [1..max_nc]`,
/// choosing the minimum final prediction error.
pub fn identify_arma(train: &WindSeries, max_na: usize, max_nc: usize) -> Result<ArmaModel, WindError> {
    identify_arma_series(&train.samples, max_na, max_nc)
}

/// [`identify_arma`] on raw samples.
pub fn identify_arma_series(samples: &[f64], max_na: usize, max_nc: usize) -> Result<ArmaModel, WindError> {
    let l = samples.len();
    if l < 300 {
        return Err(WindError::Identification(format!("need at least 300 samples, got {l}")));
    }
    if !(1..=6).contains(&max_na) || !(1..=6).contains(&max_nc) {
        return Err(WindError::Identification("model orders must lie in 1..=6".into()));
    }
    let mean = samples.iter().sum::<f64>() / l as f64;
    let y: Vec<f64> = samples.iter().map(|v| v - mean).collect();

    // Stage 1: long autoregression for innovation estimates.
    let p = 20.min(l / 10);
    let long = fit_candidate(&y, &[], p, p, 0)
        .ok_or_else(|| WindError::Identification("long AR fit is singular".into()))?;
    let long_model = ArmaModel { a: long.0, c: Vec::new(), sigma_w2: 1.0, mean };
    let e_long = long_model.residuals(&y);

    // Stage 2: every candidate order, visited so that ties favour smaller models.
    let mut orders: Vec<(usize, usize)> = (1..=max_na).flat_map(|na| (1..=max_nc).map(move |nc| (na, nc))).collect();
    orders.sort_by_key(|&(na, nc)| (na + nc, na));
    let start = p + max_na.max(max_nc);
    let mut best: Option<(f64, ArmaModel)> = None;
    for (na, nc) in orders {
        let Some((a, c)) = fit_candidate(&y, &e_long, start, na, nc) else { continue };
        let mut m = ArmaModel { a, c, sigma_w2: 1.0, mean };
        let e = m.residuals(&y);
        let tail = &e[WARMUP.min(l / 4)..];
        m.sigma_w2 = tail.iter().map(|v| v * v).sum::<f64>() / tail.len() as f64;
        if !m.is_stable_invertible() {
            continue;
        }
        let n = (na + nc) as f64;
        let lf = l as f64;
        let fpe = m.sigma_w2 * (lf + n) / (lf - n);
        if best.as_ref().is_none_or(|(b, _)| fpe < *b) {
            best = Some((fpe, m));
        }
    }
    best.map(|(_, m)| m)
        .ok_or_else(|| WindError::Identification("every candidate is unstable or non-invertible".into()))
}

/// Simulate `n` samples of the model (mean included) after a burn-in.
pub fn simulate_arma(model: &ArmaModel, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, model.sigma_w2.sqrt()).expect("finite variance");
    let burn = 500;
    let total = n + burn;
    let mut y = vec![0.0; total];
    let mut w = vec![0.0; total];
    for t in 0..total {
        w[t] = normal.sample(&mut rng);
        let mut v = w[t];
        for (i, ci) in model.c.iter().enumerate() {
            if t > i {
                v += ci * w[t - i - 1];
            }
        }
        for (i, ai) in model.a.iter().enumerate() {
            if t > i {
                v -= ai * y[t - i - 1];
            }
        }
        y[t] = v;
    }
    y[burn..].iter().map(|v| v + model.mean).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residuals_invert_simulation() {
        let m = ArmaModel { a: vec![-0.5, 0.2], c: vec![0.3], sigma_w2: 1.0, mean: 0.0 };
        assert!(m.is_stable_invertible());
        let y = simulate_arma(&m, 2000, 3);
        let e = m.residuals(&y);
        let var = e[100..].iter().map(|v| v * v).sum::<f64>() / (e.len() - 100) as f64;
        assert!((var - 1.0).abs() < 0.1);
    }

    #[test]
    fn too_short_is_error() {
        assert!(identify_arma_series(&[1.0; 100], 2, 2).is_err());
    }

    #[test]
    fn unstable_detected() {
        let m = ArmaModel { a: vec![-1.5], c: vec![0.1], sigma_w2: 1.0, mean: 0.0 };
        assert!(!m.is_stable_invertible());
    }
}
