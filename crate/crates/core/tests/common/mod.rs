//! Independent oracles shared by the integration and acceptance tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wfmpc::optim::{LmiBlock, LpRow, QpProblem, SdpProblem, SparseSym};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0))
}

pub fn qp_objective(p: &QpProblem, z: &DVector<f64>) -> f64 {
    0.5 * z.dot(&(&p.h * z)) + p.f.dot(z)
}

/// Strictly convex QP with a known feasible point; about a third of the
/// rows pass through that point so several constraints tend to bind.
pub fn random_qp(seed: u64, box_only: bool) -> QpProblem {
    let mut r = rng(seed);
    let n = r.random_range(2..8);
    let m = randn(&mut r, n, n);
    let h = m.transpose() * &m + DMatrix::identity(n, n) * 0.5;
    let f = randn(&mut r, n, 1).column(0) * 4.0;
    if box_only {
        let lo = DVector::from_fn(n, |_, _| r.random_range(-1.0..0.0));
        let hi = DVector::from_fn(n, |i, _| lo[i] + r.random_range(0.1..1.5));
        let mut a = DMatrix::zeros(2 * n, n);
        let mut b = DVector::zeros(2 * n);
        for i in 0..n {
            a[(2 * i, i)] = 1.0;
            b[2 * i] = hi[i];
            a[(2 * i + 1, i)] = -1.0;
            b[2 * i + 1] = -lo[i];
        }
        return QpProblem { h, f, a, b };
    }
    let rows = r.random_range(1..3 * n);
    let a = randn(&mut r, rows, n);
    let z0 = randn(&mut r, n, 1).column(0).into_owned();
    let b = DVector::from_fn(rows, |i, _| (a.row(i) * &z0)[0] + if r.random_bool(0.35) { 0.0 } else { r.random_range(0.0..1.0) });
    QpProblem { h, f, a, b }
}

/// Box-constrained QP by projected gradient with a `1/L` step.
pub fn box_qp_oracle(p: &QpProblem) -> DVector<f64> {
    let n = p.h.nrows();
    let (mut lo, mut hi) = (DVector::from_element(n, f64::NEG_INFINITY), DVector::from_element(n, f64::INFINITY));
    for k in 0..p.a.nrows() {
        let i = (0..n).find(|&i| p.a[(k, i)] != 0.0).expect("box row");
        if p.a[(k, i)] > 0.0 {
            hi[i] = hi[i].min(p.b[k] / p.a[(k, i)]);
        } else {
            lo[i] = lo[i].max(p.b[k] / p.a[(k, i)]);
        }
    }
    let l = p.h.clone().symmetric_eigen().eigenvalues.max();
    let mut z = DVector::<f64>::zeros(n).zip_zip_map(&lo, &hi, |v, a, b| v.clamp(a, b));
    for _ in 0..200_000 {
        let g = &p.h * &z + &p.f;
        let zn = (&z - g / l).zip_zip_map(&lo, &hi, |v, a, b| v.clamp(a, b));
        let step = (&zn - &z).amax();
        z = zn;
        if step < 1e-14 {
            break;
        }
    }
    z
}

/// General QP through accelerated projected gradient on the dual
/// `max_{λ≥0} −½gᵀH⁻¹g − bᵀλ`, `g = f + Aᵀλ`. Returns the dual value, a
/// lower bound on the optimum that converges to it.
pub fn dual_qp_oracle(p: &QpProblem) -> f64 {
    let hinv = p.h.clone().try_inverse().expect("H invertible");
    let m = p.a.nrows();
    let g_of = |lam: &DVector<f64>| &p.f + p.a.transpose() * lam;
    let dual = |lam: &DVector<f64>| {
        let g = g_of(lam);
        -0.5 * g.dot(&(&hinv * &g)) - p.b.dot(lam)
    };
    let k = &p.a * &hinv * p.a.transpose();
    let l = k.symmetric_eigen().eigenvalues.max().max(1e-12);
    let mut lam = DVector::zeros(m);
    let mut yk = lam.clone();
    let mut t = 1.0f64;
    let mut best = dual(&lam);
    for it in 0..400_000 {
        let z = -(&hinv * g_of(&yk));
        let grad = &p.a * z - &p.b;
        let next = (&yk + grad / l).map(|v| v.max(0.0));
        let val = dual(&next);
        // adaptive restart keeps the method monotone
        if val < best {
            t = 1.0;
            yk = lam.clone();
            continue;
        }
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        yk = &next + (&next - &lam) * ((t - 1.0) / tn);
        let gain = val - best;
        lam = next;
        best = val;
        t = tn;
        if it > 100 && gain.abs() < 1e-16 * (1.0 + best.abs()) {
            break;
        }
    }
    best
}

fn dense_sym(m: &DMatrix<f64>) -> SparseSym {
    let mut entries = Vec::new();
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            if m[(i, j)] != 0.0 {
                entries.push((i, j, m[(i, j)]));
            }
        }
    }
    SparseSym { entries }
}

fn random_orthogonal(r: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    randn(r, n, n).qr().q()
}

/// SDP `min cᵀy s.t. F(y) ⪰ 0, row(y) ≥ 0` whose optimum is fixed by
/// construction: a primal point `y*` with slack `S*` and a dual `X*` with
/// complementary ranges, `c_i = ⟨F_i, X*⟩`. Returns the problem and `cᵀy*`.
pub fn certified_sdp(seed: u64) -> (SdpProblem, f64) {
    let mut r = rng(seed);
    let nv = r.random_range(2..7);
    let y_star = DVector::from_fn(nv, |_, _| r.random_range(-1.0..1.0));
    let mut c = DVector::zeros(nv);
    let mut blocks = Vec::new();
    for b in 0..r.random_range(1..4) {
        let dim = r.random_range(2..6);
        let q = random_orthogonal(&mut r, dim);
        let rank_s = r.random_range(1..dim);
        let s_diag = DVector::from_fn(dim, |i, _| if i < rank_s { r.random_range(0.5..2.0) } else { 0.0 });
        let x_diag = DVector::from_fn(dim, |i, _| if i < rank_s { 0.0 } else { r.random_range(0.5..2.0) });
        let s = &q * DMatrix::from_diagonal(&s_diag) * q.transpose();
        let x = &q * DMatrix::from_diagonal(&x_diag) * q.transpose();
        let fs: Vec<DMatrix<f64>> = (0..nv)
            .map(|_| {
                let m = randn(&mut r, dim, dim);
                (&m + m.transpose()) * 0.5
            })
            .collect();
        let mut f0 = s.clone();
        for (i, f) in fs.iter().enumerate() {
            f0 -= f * y_star[i];
            c[i] += (f * &x).trace();
        }
        let f0 = (&f0 + f0.transpose()) * 0.5;
        blocks.push(LmiBlock { name: format!("block{b}"), dim, f0, terms: fs.iter().enumerate().map(|(i, f)| (i, dense_sym(f))).collect() });
    }
    let mut lp = Vec::new();
    for j in 0..r.random_range(0..4) {
        let a: Vec<f64> = (0..nv).map(|_| r.random_range(-1.0..1.0)).collect();
        let (s, x) = if r.random_bool(0.5) { (0.0, r.random_range(0.5..2.0)) } else { (r.random_range(0.5..2.0), 0.0) };
        let f0 = s - a.iter().zip(y_star.iter()).map(|(a, y)| a * y).sum::<f64>();
        for i in 0..nv {
            c[i] += a[i] * x;
        }
        lp.push(LpRow { name: format!("row{j}"), f0, coeffs: a.into_iter().enumerate().collect() });
    }
    let opt = c.dot(&y_star);
    (SdpProblem { n_vars: nv, c, blocks, lp }, opt)
}
