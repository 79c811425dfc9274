//! Aerodynamic coefficient surfaces C_P, C_Q, C_T over (λ, β).

use super::LinearizeError;

/// Coefficients at one (λ, β) point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub cp: f64,
    pub cq: f64,
    pub ct: f64,
}

/// Constants of the exponential placeholder
/// `C_P = c1 (c2/λi − c3 β − c4) exp(−c5/λi) + c6 λ` with
/// `1/λi = 1/(λ + 0.08 β) − 0.035/(β³ + 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticCp {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
}

impl Default for AnalyticCp {
    fn default() -> Self {
        Self { c1: 0.5176, c2: 116.0, c3: 0.4, c4: 5.0, c5: 21.0, c6: 0.0068 }
    }
}

impl AnalyticCp {
    /// Unclamped power coefficient.
    pub fn raw_cp(&self, lambda: f64, beta: f64) -> f64 {
        let inv_li = 1.0 / (lambda + 0.08 * beta) - 0.035 / (beta.powi(3) + 1.0);
        self.c1 * (self.c2 * inv_li - self.c3 * beta - self.c4) * (-self.c5 * inv_li).exp()
            + self.c6 * lambda
    }
}

/// Rectangular grid with bilinear interpolation. Rows follow β, columns λ.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedSurface {
    pub lambda: Vec<f64>,
    pub beta: Vec<f64>,
    pub cp: Vec<Vec<f64>>,
    pub ct: Vec<Vec<f64>>,
}

/// Either a tabulated grid or the analytic placeholder. C_Q is always
/// derived as C_P/λ and C_T, for the analytic form, from axial momentum
/// theory (`C_P = 4a(1−a)²`, `C_T = 4a(1−a)`).
#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientSurface {
    Analytic(AnalyticCp),
    Tabulated(TabulatedSurface),
}

impl Default for CoefficientSurface {
    fn default() -> Self {
        CoefficientSurface::Analytic(AnalyticCp::default())
    }
}

/// Betz limit 16/27.
pub const BETZ: f64 = 16.0 / 27.0;

/// Axial induction factor in [0, 1/3] with `4a(1−a)² = cp`, closed-form
/// trigonometric root of the cubic.
pub fn induction_from_cp(cp: f64) -> f64 {
    let q = (cp / 4.0).clamp(0.0, 4.0 / 27.0);
    let r = 2.0 / 27.0 - q;
    let phi = (-13.5 * r).clamp(-1.0, 1.0).acos();
    let a = 2.0 / 3.0 + (2.0 / 3.0) * (phi / 3.0 - 4.0 * std::f64::consts::PI / 3.0).cos();
    a.clamp(0.0, 1.0 / 3.0)
}

/// Momentum-theory thrust coefficient matching a power coefficient.
pub fn ct_from_cp(cp: f64) -> f64 {
    let a = induction_from_cp(cp);
    4.0 * a * (1.0 - a)
}

impl CoefficientSurface {
    /// Evaluate (C_P, C_Q, C_T) at tip-speed ratio `lambda` and pitch `beta` (deg).
    pub fn eval(&self, lambda: f64, beta: f64) -> Result<Coefficients, LinearizeError> {
        if !(lambda > 0.0) || !lambda.is_finite() || !beta.is_finite() {
            return Err(LinearizeError::Domain(format!("lambda={lambda}, beta={beta}")));
        }
        let (cp, ct) = match self {
            CoefficientSurface::Analytic(c) => {
                let cp = c.raw_cp(lambda, beta).max(0.0);
                (cp, ct_from_cp(cp))
            }
            CoefficientSurface::Tabulated(t) => (t.interp(&t.cp, lambda, beta)?, t.interp(&t.ct, lambda, beta)?),
        };
        Ok(Coefficients { cp, cq: cp / lambda, ct })
    }

    /// Whether (λ, β) lies inside the surface's domain.
    pub fn contains(&self, lambda: f64, beta: f64) -> bool {
        match self {
            CoefficientSurface::Analytic(_) => lambda > 0.0,
            CoefficientSurface::Tabulated(t) => {
                lambda >= t.lambda[0]
                    && lambda <= *t.lambda.last().unwrap()
                    && beta >= t.beta[0]
                    && beta <= *t.beta.last().unwrap()
            }
        }
    }

    /// Maximum power coefficient, used for the available-power baseline.
    pub fn cp_max(&self) -> f64 {
        self.cp_max_point().0
    }

    /// `(C_P^max, λ, β)` at the maximum over the surface (grid search for
    /// the analytic form).
    pub fn cp_max_point(&self) -> (f64, f64, f64) {
        let mut best = (0.0f64, 0.0, 0.0);
        match self {
            CoefficientSurface::Tabulated(t) => {
                for (ib, row) in t.cp.iter().enumerate() {
                    for (il, cp) in row.iter().enumerate() {
                        if *cp > best.0 {
                            best = (*cp, t.lambda[il], t.beta[ib]);
                        }
                    }
                }
            }
            CoefficientSurface::Analytic(c) => {
                for ib in 0..=200 {
                    let beta = ib as f64 * 0.05;
                    for il in 1..=2000 {
                        let lambda = il as f64 * 0.01;
                        let cp = c.raw_cp(lambda, beta);
                        if cp > best.0 {
                            best = (cp, lambda, beta);
                        }
                    }
                }
            }
        }
        best
    }
}

fn bracket(grid: &[f64], x: f64) -> Option<(usize, f64)> {
    if grid.len() < 2 || x < grid[0] || x > *grid.last().unwrap() {
        return None;
    }
    let mut i = grid.partition_point(|g| *g <= x).saturating_sub(1);
    if i >= grid.len() - 1 {
        i = grid.len() - 2;
    }
    Some((i, (x - grid[i]) / (grid[i + 1] - grid[i])))
}

impl TabulatedSurface {
    fn interp(&self, table: &[Vec<f64>], lambda: f64, beta: f64) -> Result<f64, LinearizeError> {
        let (j, tl) = bracket(&self.lambda, lambda)
            .ok_or_else(|| LinearizeError::Domain(format!("lambda={lambda} outside table")))?;
        let (i, tb) = bracket(&self.beta, beta)
            .ok_or_else(|| LinearizeError::Domain(format!("beta={beta} outside table")))?;
        let v00 = table[i][j];
        let v01 = table[i][j + 1];
        let v10 = table[i + 1][j];
        let v11 = table[i + 1][j + 1];
        Ok((1.0 - tb) * ((1.0 - tl) * v00 + tl * v01) + tb * ((1.0 - tl) * v10 + tl * v11))
    }

    /// Parse the plain-text grid format: three blank-line separated blocks
    /// (C_P, C_Q, C_T). Each block starts with the λ breakpoints; every other
    /// line holds a β breakpoint followed by one value per λ. The C_Q block is
    /// checked for shape only since C_Q is derived from C_P.
    pub fn parse(text: &str) -> Result<Self, LinearizeError> {
        let mut blocks: Vec<Vec<Vec<f64>>> = Vec::new();
        let mut cur: Vec<Vec<f64>> = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.starts_with('#') {
                continue;
            }
            if line.is_empty() {
                if !cur.is_empty() {
                    blocks.push(std::mem::take(&mut cur));
                }
                continue;
            }
            let row = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| LinearizeError::Parse(format!("line {}: {e}", ln + 1)))?;
            cur.push(row);
        }
        if !cur.is_empty() {
            blocks.push(cur);
        }
        if blocks.len() != 3 {
            return Err(LinearizeError::Parse(format!("expected 3 blocks, found {}", blocks.len())));
        }
        let mut lambda = Vec::new();
        let mut beta = Vec::new();
        let mut tables = Vec::new();
        for (k, block) in blocks.iter().enumerate() {
            let mut lam = block[0].clone();
            let rows = &block[1..];
            if rows.is_empty() {
                return Err(LinearizeError::Parse(format!("block {} has no rows", k + 1)));
            }
            if lam.len() == rows[0].len() {
                // leading corner cell
                lam.remove(0);
            }
            let mut b = Vec::new();
            let mut t = Vec::new();
            for r in rows {
                if r.len() != lam.len() + 1 {
                    return Err(LinearizeError::Parse(format!("block {}: ragged row", k + 1)));
                }
                b.push(r[0]);
                t.push(r[1..].to_vec());
            }
            if k == 0 {
                lambda = lam;
                beta = b;
            } else if lam != lambda || b != beta {
                return Err(LinearizeError::Parse(format!("block {}: breakpoints differ", k + 1)));
            }
            tables.push(t);
        }
        let increasing = |g: &[f64]| g.len() >= 2 && g.windows(2).all(|w| w[1] > w[0]);
        if !increasing(&lambda) || !increasing(&beta) {
            return Err(LinearizeError::Parse("breakpoints must be strictly increasing".into()));
        }
        let ct = tables.pop().unwrap();
        tables.pop();
        let cp = tables.pop().unwrap();
        Ok(Self { lambda, beta, cp, ct })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn induction_endpoints() {
        assert!(induction_from_cp(0.0).abs() < 1e-12);
        assert!((induction_from_cp(BETZ) - 1.0 / 3.0).abs() < 1e-9);
        for k in 1..50 {
            let cp = BETZ * k as f64 / 50.0;
            let a = induction_from_cp(cp);
            assert!((4.0 * a * (1.0 - a).powi(2) - cp).abs() < 1e-12);
        }
    }

    #[test]
    fn cq_identity_on_grid() {
        let s = CoefficientSurface::default();
        for il in 1..40 {
            for ib in 0..20 {
                let (l, b) = (il as f64 * 0.5, ib as f64);
                let c = s.eval(l, b).unwrap();
                assert!((c.cq * l - c.cp).abs() <= 1e-14);
                assert!(c.cp >= 0.0 && c.cp <= 0.593);
            }
        }
    }

    #[test]
    fn parse_and_interp() {
        let text = "1 2\n0 0.1 0.3\n10 0.0 0.1\n\n1 2\n0 0.1 0.15\n10 0 0.05\n\n1 2\n0 0.5 0.7\n10 0.2 0.3\n";
        let s = CoefficientSurface::Tabulated(TabulatedSurface::parse(text).unwrap());
        let c = s.eval(1.5, 5.0).unwrap();
        assert!((c.cp - 0.125).abs() < 1e-12);
        assert!((c.ct - 0.425).abs() < 1e-12);
        assert!(s.eval(3.0, 0.0).is_err());
    }

    #[test]
    fn parse_rejects_two_blocks() {
        assert!(TabulatedSurface::parse("1 2\n0 1 1\n\n1 2\n0 1 1\n").is_err());
    }
}
