//! Primal-dual interior point for
//!
//! ```text
//! min cᵀy  s.t.  F_b(y) = F0_b + Σ y_i F_ib ⪰ 0  (each block b)
//!                f0_l + Σ a_li y_i ≥ 0         (each linear row l)
//! ```
//!
//! Infeasible-start path following with the HKM direction and Mehrotra
//! predictor-corrector. The Schur matrix `M_ij = Σ_b tr(F_ib X_b F_jb Z_b⁻¹)`
//! is factored in block-arrow form: a variable that appears in a single
//! block only couples with variables of that block, so those variables are
//! eliminated block by block before the dense coupling part is factored.

use crate::linalg::symmetrize;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use std::collections::BTreeMap;

/// Symmetric matrix as upper-triangle triplets `(i, j, v)` with `i ≤ j`;
/// `(i, j, v)` stands for `v` at both `(i, j)` and `(j, i)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseSym {
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseSym {
    pub fn to_dense(&self, n: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
            if i != j {
                m[(j, i)] += v;
            }
        }
        m
    }

    /// `tr(S G)` for a general square `G`.
    fn trace_with(&self, g: &DMatrix<f64>) -> f64 {
        self.entries
            .iter()
            .map(|&(i, j, v)| if i == j { v * g[(i, i)] } else { v * (g[(i, j)] + g[(j, i)]) })
            .sum()
    }

    fn add_scaled_to(&self, m: &mut DMatrix<f64>, s: f64) {
        for &(i, j, v) in &self.entries {
            m[(i, j)] += s * v;
            if i != j {
                m[(j, i)] += s * v;
            }
        }
    }
}

/// One PSD constraint `F0 + Σ y_i F_i ⪰ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiBlock {
    pub name: String,
    pub dim: usize,
    pub f0: DMatrix<f64>,
    /// Coefficient matrices keyed by variable, at most one per variable.
    pub terms: Vec<(usize, SparseSym)>,
}

impl LmiBlock {
    pub fn eval(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.f0.clone();
        for (v, s) in &self.terms {
            s.add_scaled_to(&mut m, y[*v]);
        }
        m
    }
}

/// Scalar constraint `f0 + Σ a_i y_i ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpRow {
    pub name: String,
    pub f0: f64,
    pub coeffs: Vec<(usize, f64)>,
}

impl LpRow {
    pub fn eval(&self, y: &DVector<f64>) -> f64 {
        self.f0 + self.coeffs.iter().map(|(i, a)| a * y[*i]).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub n_vars: usize,
    pub c: DVector<f64>,
    pub blocks: Vec<LmiBlock>,
    pub lp: Vec<LpRow>,
}

impl SdpProblem {
    pub fn total_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.dim).sum::<usize>() + self.lp.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdpSettings {
    /// Relative gap the iteration aims for.
    pub gap_target: f64,
    /// Relative gap required to accept a solution.
    pub gap_tol: f64,
    pub feas_tol: f64,
    /// Minimum eigenvalue accepted for every LMI at the returned point.
    pub lmi_tol: f64,
    pub max_iter: usize,
    /// Cap on the sum of block dimensions.
    pub max_dim: usize,
    /// Cap on the number of scalar variables.
    pub max_vars: usize,
}

impl Default for SdpSettings {
    fn default() -> Self {
        Self { gap_target: 1e-9, gap_tol: 1e-6, feas_tol: 1e-9, lmi_tol: 1e-7, max_iter: 100, max_dim: 1500, max_vars: 8000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub y: DVector<f64>,
    /// Primal (dual-certificate) matrices, one per block.
    pub x: Vec<DMatrix<f64>>,
    pub x_lp: DVector<f64>,
    pub status: SdpStatus,
    pub iterations: usize,
    pub objective: f64,
    pub rel_gap: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SdpError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("problem exceeds the size cap: {0}")]
    SizeCap(String),
    #[error("constraints are infeasible (certificate residual {0:e})")]
    Infeasible(f64),
    #[error("objective is unbounded below (ray residual {0:e})")]
    Unbounded(f64),
    #[error("no convergence after {iterations} iterations: gap {gap:e}, primal {pinf:e}, dual {dinf:e}, worst LMI eigenvalue {worst_eig:e}")]
    NonConvergence { iterations: usize, gap: f64, pinf: f64, dinf: f64, worst_eig: f64 },
}

/// Minimum eigenvalue of every block and row at a candidate point.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiReport {
    pub blocks: Vec<(String, f64)>,
    pub rows: Vec<(String, f64)>,
    /// Extra named slacks added by callers (for example a covariance chain).
    pub extra: Vec<(String, f64)>,
}

impl LmiReport {
    pub fn worst(&self) -> f64 {
        self.blocks
            .iter()
            .chain(&self.rows)
            .chain(&self.extra)
            .map(|(_, v)| *v)
            .fold(f64::INFINITY, f64::min)
    }

    /// Name of the most violated entry.
    pub fn worst_name(&self) -> Option<&str> {
        self.blocks
            .iter()
            .chain(&self.rows)
            .chain(&self.extra)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(n, _)| n.as_str())
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.worst() >= -tol
    }
}

/// Evaluate every constraint of `p` at `y`.
pub fn check_lmi(y: &DVector<f64>, p: &SdpProblem) -> LmiReport {
    LmiReport {
        blocks: p.blocks.iter().map(|b| (b.name.clone(), crate::linalg::min_eig(&b.eval(y)))).collect(),
        rows: p.lp.iter().map(|r| (r.name.clone(), r.eval(y))).collect(),
        extra: Vec::new(),
    }
}

// ---------------------------------------------------------------------------
// Problem construction

/// Affine matrix expression `constant + Σ_v y_v · T_v` with sparse `T_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffMat {
    pub rows: usize,
    pub cols: usize,
    pub constant: DMatrix<f64>,
    pub terms: BTreeMap<usize, Vec<(usize, usize, f64)>>,
}

impl AffMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, constant: DMatrix::zeros(rows, cols), terms: BTreeMap::new() }
    }

    pub fn constant(m: DMatrix<f64>) -> Self {
        Self { rows: m.nrows(), cols: m.ncols(), constant: m, terms: BTreeMap::new() }
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(DMatrix::identity(n, n))
    }

    /// A single variable as a 1×1 expression.
    pub fn var(v: usize) -> Self {
        let mut e = Self::zeros(1, 1);
        e.terms.insert(v, vec![(0, 0, 1.0)]);
        e
    }

    /// Column vector whose entries are the given variables.
    pub fn var_column(vars: &[usize]) -> Self {
        let mut e = Self::zeros(vars.len(), 1);
        for (i, &v) in vars.iter().enumerate() {
            e.terms.entry(v).or_default().push((i, 0, 1.0));
        }
        e
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.constant *= s;
        for t in out.terms.values_mut() {
            for e in t.iter_mut() {
                e.2 *= s;
            }
        }
        out
    }

    pub fn add(&self, o: &AffMat) -> Self {
        assert_eq!(self.shape(), o.shape(), "shape mismatch in AffMat::add");
        let mut out = self.clone();
        out.constant += &o.constant;
        for (v, t) in &o.terms {
            out.terms.entry(*v).or_default().extend_from_slice(t);
        }
        out
    }

    pub fn sub(&self, o: &AffMat) -> Self {
        self.add(&o.scale(-1.0))
    }

    pub fn add_constant(&self, m: &DMatrix<f64>) -> Self {
        let mut out = self.clone();
        out.constant += m;
        out
    }

    pub fn transpose(&self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            constant: self.constant.transpose(),
            terms: self.terms.iter().map(|(v, t)| (*v, t.iter().map(|&(i, j, x)| (j, i, x)).collect())).collect(),
        }
    }

    /// `K · self`
    pub fn lmul(&self, k: &DMatrix<f64>) -> Self {
        assert_eq!(k.ncols(), self.rows, "shape mismatch in AffMat::lmul");
        let mut out = Self::zeros(k.nrows(), self.cols);
        out.constant = k * &self.constant;
        for (v, t) in &self.terms {
            let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
            for &(i, j, x) in t {
                for r in 0..k.nrows() {
                    let kv = k[(r, i)];
                    if kv != 0.0 {
                        *acc.entry((r, j)).or_default() += kv * x;
                    }
                }
            }
            out.terms.insert(*v, acc.into_iter().map(|((r, c), x)| (r, c, x)).collect());
        }
        out
    }

    /// `self · K`
    pub fn rmul(&self, k: &DMatrix<f64>) -> Self {
        self.transpose().lmul(&k.transpose()).transpose()
    }

    /// Sub-block `(r0, c0)` of size `(nr, nc)`.
    pub fn block(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> Self {
        let mut out = Self::zeros(nr, nc);
        out.constant.copy_from(&self.constant.view((r0, c0), (nr, nc)));
        for (v, t) in &self.terms {
            let sel: Vec<_> = t
                .iter()
                .filter(|&&(i, j, _)| i >= r0 && i < r0 + nr && j >= c0 && j < c0 + nc)
                .map(|&(i, j, x)| (i - r0, j - c0, x))
                .collect();
            if !sel.is_empty() {
                out.terms.insert(*v, sel);
            }
        }
        out
    }

    pub fn eval(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (v, t) in &self.terms {
            for &(i, j, x) in t {
                m[(i, j)] += x * y[*v];
            }
        }
        m
    }

    /// Stack a grid of expressions. `None` entries are zero blocks sized by
    /// the row/column they sit in.
    pub fn grid(blocks: &[Vec<Option<AffMat>>]) -> Self {
        let nr = blocks.len();
        let nc = blocks[0].len();
        let mut heights = vec![None; nr];
        let mut widths = vec![None; nc];
        for (i, row) in blocks.iter().enumerate() {
            assert_eq!(row.len(), nc, "ragged grid");
            for (j, b) in row.iter().enumerate() {
                if let Some(b) = b {
                    heights[i] = Some(b.rows);
                    widths[j] = Some(b.cols);
                }
            }
        }
        let heights: Vec<usize> = heights.into_iter().map(|h| h.expect("grid row without a sized block")).collect();
        let widths: Vec<usize> = widths.into_iter().map(|w| w.expect("grid column without a sized block")).collect();
        let mut out = Self::zeros(heights.iter().sum(), widths.iter().sum());
        let mut r0 = 0;
        for (i, row) in blocks.iter().enumerate() {
            let mut c0 = 0;
            for (j, b) in row.iter().enumerate() {
                if let Some(b) = b {
                    assert_eq!((b.rows, b.cols), (heights[i], widths[j]), "grid block shape mismatch");
                    out.constant.view_mut((r0, c0), (b.rows, b.cols)).copy_from(&b.constant);
                    for (v, t) in &b.terms {
                        out.terms.entry(*v).or_default().extend(t.iter().map(|&(a, c, x)| (a + r0, c + c0, x)));
                    }
                }
                c0 += widths[j];
            }
            r0 += heights[i];
        }
        out
    }
}

/// Symmetric matrix variable; `idx[k]` is the scalar variable of packed
/// upper-triangle entry `k` (row-major over `i ≤ j`).
#[derive(Debug, Clone, PartialEq)]
pub struct SymVar {
    pub n: usize,
    pub idx: Vec<usize>,
}

impl SymVar {
    pub fn var(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        // row-major packed upper triangle
        self.idx[i * self.n - i * (i + 1) / 2 + j]
    }

    pub fn expr(&self) -> AffMat {
        let mut e = AffMat::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in i..self.n {
                let v = self.var(i, j);
                let t = e.terms.entry(v).or_default();
                t.push((i, j, 1.0));
                if i != j {
                    t.push((j, i, 1.0));
                }
            }
        }
        e
    }

    pub fn value(&self, y: &DVector<f64>) -> DMatrix<f64> {
        self.expr().eval(y)
    }
}

/// Incremental construction of an [`SdpProblem`].
#[derive(Debug, Clone, Default)]
pub struct SdpBuilder {
    n_vars: usize,
    c: Vec<f64>,
    blocks: Vec<LmiBlock>,
    lp: Vec<LpRow>,
}

impl SdpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn scalar(&mut self) -> usize {
        self.n_vars += 1;
        self.c.push(0.0);
        self.n_vars - 1
    }

    pub fn scalars(&mut self, k: usize) -> Vec<usize> {
        (0..k).map(|_| self.scalar()).collect()
    }

    pub fn sym(&mut self, n: usize) -> SymVar {
        SymVar { n, idx: self.scalars(n * (n + 1) / 2) }
    }

    /// General `r × c` matrix variable.
    pub fn mat(&mut self, r: usize, c: usize) -> AffMat {
        let mut e = AffMat::zeros(r, c);
        for i in 0..r {
            for j in 0..c {
                let v = self.scalar();
                e.terms.insert(v, vec![(i, j, 1.0)]);
            }
        }
        e
    }

    pub fn add_cost(&mut self, v: usize, coeff: f64) {
        self.c[v] += coeff;
    }

    /// Add `tr(M E)` to the cost; returns the constant part of that term.
    pub fn add_cost_trace(&mut self, m: &DMatrix<f64>, e: &AffMat) -> f64 {
        assert_eq!((m.ncols(), m.nrows()), (e.rows, e.cols), "trace shape mismatch");
        for (v, t) in &e.terms {
            for &(i, j, x) in t {
                self.c[*v] += m[(j, i)] * x;
            }
        }
        (m * &e.constant).trace()
    }

    /// Add `E ⪰ 0` for a square expression; it is symmetrized entrywise.
    pub fn add_lmi(&mut self, name: &str, e: &AffMat) {
        assert_eq!(e.rows, e.cols, "LMI must be square");
        let n = e.rows;
        let mut terms = Vec::new();
        for (v, t) in &e.terms {
            let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
            for &(i, j, x) in t {
                let key = if i <= j { (i, j) } else { (j, i) };
                *acc.entry(key).or_default() += if i == j { x } else { 0.5 * x };
            }
            let entries: Vec<_> = acc.into_iter().filter(|(_, x)| *x != 0.0).map(|((i, j), x)| (i, j, x)).collect();
            if !entries.is_empty() {
                terms.push((*v, SparseSym { entries }));
            }
        }
        self.blocks.push(LmiBlock { name: name.to_string(), dim: n, f0: symmetrize(&e.constant), terms });
    }

    /// Add a block-grid LMI given its upper triangle; lower blocks mirror.
    pub fn add_lmi_grid(&mut self, name: &str, upper: Vec<Vec<Option<AffMat>>>) {
        let k = upper.len();
        let mut full: Vec<Vec<Option<AffMat>>> = vec![vec![None; k]; k];
        for i in 0..k {
            for j in 0..k {
                full[i][j] = if j >= i { upper[i][j].clone() } else { upper[j][i].as_ref().map(|b| b.transpose()) };
            }
        }
        let e = AffMat::grid(&full);
        self.add_lmi(name, &e);
    }

    /// Add `e ≥ 0` for a 1×1 expression.
    pub fn add_ge(&mut self, name: &str, e: &AffMat) {
        assert_eq!(e.shape(), (1, 1), "scalar constraint needs a 1x1 expression");
        let mut coeffs: BTreeMap<usize, f64> = BTreeMap::new();
        for (v, t) in &e.terms {
            for &(_, _, x) in t {
                *coeffs.entry(*v).or_default() += x;
            }
        }
        self.lp.push(LpRow {
            name: name.to_string(),
            f0: e.constant[(0, 0)],
            coeffs: coeffs.into_iter().filter(|(_, x)| *x != 0.0).collect(),
        });
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn build(self) -> SdpProblem {
        SdpProblem { n_vars: self.n_vars, c: DVector::from_vec(self.c), blocks: self.blocks, lp: self.lp }
    }
}

// ---------------------------------------------------------------------------
// Solver

/// Where each variable lives, for the block-arrow factorization.
struct Structure {
    /// `Some(b)` when the variable only appears in PSD block `b`.
    local: Vec<Option<usize>>,
    /// Position of each variable inside its local group or the global list.
    pos: Vec<usize>,
    groups: Vec<Vec<usize>>,
    globals: Vec<usize>,
    /// Global variables appearing in each block.
    block_globals: Vec<Vec<usize>>,
    /// LP matrix rows as `(var, coeff)`.
    lp_cols: Vec<Vec<(usize, f64)>>,
}

fn analyse(p: &SdpProblem) -> Result<Structure, SdpError> {
    let nv = p.n_vars;
    let mut count = vec![0usize; nv];
    let mut in_lp = vec![false; nv];
    let mut first_block = vec![usize::MAX; nv];
    let mut block_vars = Vec::with_capacity(p.blocks.len());
    for (b, blk) in p.blocks.iter().enumerate() {
        if blk.f0.shape() != (blk.dim, blk.dim) {
            return Err(SdpError::Invalid(format!("block {} has F0 of the wrong size", blk.name)));
        }
        let mut vars = Vec::with_capacity(blk.terms.len());
        let mut seen = std::collections::BTreeSet::new();
        for (v, s) in &blk.terms {
            if *v >= nv {
                return Err(SdpError::Invalid(format!("block {} references variable {v}", blk.name)));
            }
            if !seen.insert(*v) {
                return Err(SdpError::Invalid(format!("block {} lists variable {v} twice", blk.name)));
            }
            if s.entries.iter().any(|&(i, j, _)| i > j || j >= blk.dim) {
                return Err(SdpError::Invalid(format!("block {} has a malformed coefficient", blk.name)));
            }
            count[*v] += 1;
            if first_block[*v] == usize::MAX {
                first_block[*v] = b;
            }
            vars.push(*v);
        }
        block_vars.push(vars);
    }
    let mut lp_cols = Vec::with_capacity(p.lp.len());
    for row in &p.lp {
        for &(v, _) in &row.coeffs {
            if v >= nv {
                return Err(SdpError::Invalid(format!("row {} references variable {v}", row.name)));
            }
            in_lp[v] = true;
        }
        lp_cols.push(row.coeffs.clone());
    }
    for v in 0..nv {
        if count[v] == 0 && !in_lp[v] {
            return Err(SdpError::Invalid(format!("variable {v} appears in no constraint")));
        }
    }
    let mut local = vec![None; nv];
    let mut pos = vec![0; nv];
    let mut groups = vec![Vec::new(); p.blocks.len()];
    let mut globals = Vec::new();
    for v in 0..nv {
        if count[v] == 1 && !in_lp[v] {
            let b = first_block[v];
            local[v] = Some(b);
            pos[v] = groups[b].len();
            groups[b].push(v);
        } else {
            pos[v] = globals.len();
            globals.push(v);
        }
    }
    let block_globals = block_vars.iter().map(|vs| vs.iter().cloned().filter(|v| local[*v].is_none()).collect()).collect();
    Ok(Structure { local, pos, groups, globals, block_globals, lp_cols })
}

/// Factored Schur matrix.
struct SchurFactor {
    d_chol: Vec<Option<Cholesky<f64, Dyn>>>,
    /// `D_g⁻¹ E_g` with columns over the block's globals.
    dinv_e: Vec<DMatrix<f64>>,
    e: Vec<DMatrix<f64>>,
    s_chol: Option<Cholesky<f64, Dyn>>,
}

fn chol_reg(m: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if m.nrows() == 0 {
        return Cholesky::new(m);
    }
    let scale = m.diagonal().amax().max(1e-300);
    for k in 0..6 {
        let reg = if k == 0 { 0.0 } else { scale * 10f64.powi(-16 + 2 * k) };
        let mut t = m.clone();
        for i in 0..t.nrows() {
            t[(i, i)] += reg;
        }
        if let Some(c) = Cholesky::new(t) {
            return Some(c);
        }
    }
    None
}

#[derive(Clone)]
struct Iterate {
    y: DVector<f64>,
    x: Vec<DMatrix<f64>>,
    z: Vec<DMatrix<f64>>,
    xl: DVector<f64>,
    zl: DVector<f64>,
}

struct Direction {
    dy: DVector<f64>,
    dx: Vec<DMatrix<f64>>,
    dz: Vec<DMatrix<f64>>,
    dxl: DVector<f64>,
    dzl: DVector<f64>,
}

fn lp_eval(p: &SdpProblem, y: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(p.lp.len(), p.lp.iter().map(|r| r.eval(y)))
}

/// `(A* X)_i = Σ_b tr(F_ib X_b) + Σ_l a_li x_l`.
fn adjoint(p: &SdpProblem, x: &[DMatrix<f64>], xl: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(p.n_vars);
    for (b, blk) in p.blocks.iter().enumerate() {
        for (v, s) in &blk.terms {
            out[*v] += s.trace_with(&x[b]);
        }
    }
    for (l, row) in p.lp.iter().enumerate() {
        for &(v, a) in &row.coeffs {
            out[v] += a * xl[l];
        }
    }
    out
}

/// Largest step keeping `X + αΔX ⪰ 0` (∞ when any step does).
fn max_step_psd(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    let Some(c) = Cholesky::new(x.clone()) else { return 0.0 };
    let l = c.l();
    let mut t = dx.clone();
    l.solve_lower_triangular_mut(&mut t);
    let mut t = t.transpose();
    l.solve_lower_triangular_mut(&mut t);
    let lmin = symmetrize(&t).symmetric_eigen().eigenvalues.min();
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

fn max_step_lp(x: &DVector<f64>, dx: &DVector<f64>) -> f64 {
    x.iter().zip(dx.iter()).filter(|(_, d)| **d < 0.0).map(|(x, d)| -x / d).fold(f64::INFINITY, f64::min)
}

struct Solver<'a> {
    p: &'a SdpProblem,
    st: Structure,
}

impl<'a> Solver<'a> {
    fn schur(&self, it: &Iterate, zinv: &[DMatrix<f64>]) -> Result<SchurFactor, ()> {
        let p = self.p;
        let st = &self.st;
        let ng = st.globals.len();
        let mut dmat: Vec<DMatrix<f64>> = st.groups.iter().map(|g| DMatrix::zeros(g.len(), g.len())).collect();
        let mut emat: Vec<DMatrix<f64>> =
            st.groups.iter().zip(&st.block_globals).map(|(g, bg)| DMatrix::zeros(g.len(), if g.is_empty() { 0 } else { bg.len() })).collect();
        let mut fmat = DMatrix::zeros(ng, ng);

        for (b, blk) in p.blocks.iter().enumerate() {
            let x = &it.x[b];
            let zi = &zinv[b];
            let n = blk.dim;
            // position of each global of this block within block_globals[b]
            let gpos: BTreeMap<usize, usize> = st.block_globals[b].iter().enumerate().map(|(k, v)| (*v, k)).collect();
            let terms = &blk.terms;
            for (ti, (vi, si)) in terms.iter().enumerate() {
                // W = X F_i Z⁻¹
                let w = if 2 * si.entries.len() < n {
                    let mut w = DMatrix::zeros(n, n);
                    for &(pp, qq, v) in &si.entries {
                        w += x.column(pp) * zi.row(qq) * v;
                        if pp != qq {
                            w += x.column(qq) * zi.row(pp) * v;
                        }
                    }
                    w
                } else {
                    x * si.to_dense(n) * zi
                };
                for (vj, sj) in terms.iter().skip(ti) {
                    let val = sj.trace_with(&w);
                    let (a, bb) = (*vi, *vj);
                    match (st.local[a], st.local[bb]) {
                        (Some(_), Some(_)) => {
                            let (i, j) = (st.pos[a], st.pos[bb]);
                            dmat[b][(i, j)] += val;
                            if i != j {
                                dmat[b][(j, i)] += val;
                            }
                        }
                        (Some(_), None) => emat[b][(st.pos[a], gpos[&bb])] += val,
                        (None, Some(_)) => emat[b][(st.pos[bb], gpos[&a])] += val,
                        (None, None) => {
                            let (i, j) = (st.pos[a], st.pos[bb]);
                            fmat[(i, j)] += val;
                            if i != j {
                                fmat[(j, i)] += val;
                            }
                        }
                    }
                }
            }
        }
        for (l, cols) in st.lp_cols.iter().enumerate() {
            let w = it.xl[l] / it.zl[l];
            for &(a, ca) in cols {
                for &(bb, cb) in cols {
                    fmat[(st.pos[a], st.pos[bb])] += ca * cb * w;
                }
            }
        }

        let mut d_chol = Vec::with_capacity(dmat.len());
        let mut dinv_e = Vec::with_capacity(dmat.len());
        for (b, d) in dmat.into_iter().enumerate() {
            if d.nrows() == 0 {
                d_chol.push(None);
                dinv_e.push(DMatrix::zeros(0, 0));
                continue;
            }
            let c = chol_reg(d).ok_or(())?;
            let de = c.solve(&emat[b]);
            let bg = &st.block_globals[b];
            let upd = emat[b].transpose() * &de;
            for (ii, gi) in bg.iter().enumerate() {
                for (jj, gj) in bg.iter().enumerate() {
                    fmat[(st.pos[*gi], st.pos[*gj])] -= upd[(ii, jj)];
                }
            }
            d_chol.push(Some(c));
            dinv_e.push(de);
        }
        let s_chol = if ng > 0 { Some(chol_reg(symmetrize(&fmat)).ok_or(())?) } else { None };
        Ok(SchurFactor { d_chol, dinv_e, e: emat, s_chol })
    }

    fn schur_solve(&self, f: &SchurFactor, rhs: &DVector<f64>) -> DVector<f64> {
        let st = &self.st;
        let ng = st.globals.len();
        // local right-hand sides
        let mut rl: Vec<DVector<f64>> = st.groups.iter().map(|g| DVector::from_iterator(g.len(), g.iter().map(|v| rhs[*v]))).collect();
        let mut rg = DVector::from_iterator(ng, st.globals.iter().map(|v| rhs[*v]));
        let mut dinv_r: Vec<DVector<f64>> = Vec::with_capacity(rl.len());
        for (b, r) in rl.iter().enumerate() {
            match &f.d_chol[b] {
                Some(c) => {
                    let dr = c.solve(r);
                    let corr = f.e[b].transpose() * &dr;
                    for (k, gv) in st.block_globals[b].iter().enumerate() {
                        rg[st.pos[*gv]] -= corr[k];
                    }
                    dinv_r.push(dr);
                }
                None => dinv_r.push(DVector::zeros(0)),
            }
        }
        let yg = match &f.s_chol {
            Some(c) => c.solve(&rg),
            None => DVector::zeros(0),
        };
        let mut out = DVector::zeros(rhs.len());
        for (k, v) in st.globals.iter().enumerate() {
            out[*v] = yg[k];
        }
        for (b, g) in st.groups.iter().enumerate() {
            if g.is_empty() {
                continue;
            }
            let ygb = DVector::from_iterator(st.block_globals[b].len(), st.block_globals[b].iter().map(|v| yg[st.pos[*v]]));
            let yl = &dinv_r[b] - &f.dinv_e[b] * ygb;
            for (k, v) in g.iter().enumerate() {
                out[*v] = yl[k];
            }
            rl[b] = yl;
        }
        out
    }

    /// Search direction for centering `sigma·mu` and corrector products.
    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        it: &Iterate,
        zinv: &[DMatrix<f64>],
        f: &SchurFactor,
        rp: &DVector<f64>,
        rd: &[DMatrix<f64>],
        rdl: &DVector<f64>,
        target: f64,
        corr: Option<(&[DMatrix<f64>], &DVector<f64>)>,
    ) -> Direction {
        let p = self.p;
        let mut rhs = -rp;
        let mut gs = Vec::with_capacity(p.blocks.len());
        for (b, blk) in p.blocks.iter().enumerate() {
            let n = blk.dim;
            let mut centre = DMatrix::identity(n, n) * target;
            if let Some((c, _)) = corr {
                centre -= &c[b];
            }
            let g = &centre * &zinv[b] - &it.x[b] - &it.x[b] * &rd[b] * &zinv[b];
            for (v, s) in &blk.terms {
                rhs[*v] += s.trace_with(&g);
            }
            gs.push(centre);
        }
        let mut gl = DVector::zeros(p.lp.len());
        for l in 0..p.lp.len() {
            let c = corr.map_or(0.0, |(_, cl)| cl[l]);
            gl[l] = (target - c) / it.zl[l] - it.xl[l] - it.xl[l] * rdl[l] / it.zl[l];
            for &(v, a) in &self.st.lp_cols[l] {
                rhs[v] += a * gl[l];
            }
        }
        let dy = self.schur_solve(f, &rhs);
        let mut dz = Vec::with_capacity(p.blocks.len());
        let mut dx = Vec::with_capacity(p.blocks.len());
        for (b, blk) in p.blocks.iter().enumerate() {
            let mut d = rd[b].clone();
            for (v, s) in &blk.terms {
                s.add_scaled_to(&mut d, dy[*v]);
            }
            let x = &gs[b] * &zinv[b] - &it.x[b] - &it.x[b] * &d * &zinv[b];
            dx.push(symmetrize(&x));
            dz.push(d);
        }
        let mut dzl = rdl.clone();
        for (l, row) in p.lp.iter().enumerate() {
            for &(v, a) in &row.coeffs {
                dzl[l] += a * dy[v];
            }
        }
        let mut dxl = DVector::zeros(p.lp.len());
        for l in 0..p.lp.len() {
            let c = corr.map_or(0.0, |(_, cl)| cl[l]);
            dxl[l] = (target - c) / it.zl[l] - it.xl[l] - it.xl[l] * dzl[l] / it.zl[l];
        }
        Direction { dy, dx, dz, dxl, dzl }
    }

    fn step_lengths(&self, it: &Iterate, d: &Direction) -> (f64, f64) {
        let mut ap = max_step_lp(&it.xl, &d.dxl);
        let mut ad = max_step_lp(&it.zl, &d.dzl);
        for b in 0..self.p.blocks.len() {
            ap = ap.min(max_step_psd(&it.x[b], &d.dx[b]));
            ad = ad.min(max_step_psd(&it.z[b], &d.dz[b]));
        }
        (ap, ad)
    }
}

fn frob_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Solve an SDP in the form documented at the top of this module.
pub fn solve_sdp(p: &SdpProblem, settings: &SdpSettings) -> Result<SdpSolution, SdpError> {
    if p.c.len() != p.n_vars {
        return Err(SdpError::Invalid("cost length differs from variable count".into()));
    }
    if p.total_dim() > settings.max_dim || p.n_vars > settings.max_vars {
        return Err(SdpError::SizeCap(format!(
            "total block dimension {} (cap {}), {} variables (cap {})",
            p.total_dim(),
            settings.max_dim,
            p.n_vars,
            settings.max_vars
        )));
    }
    let st = analyse(p)?;
    let solver = Solver { p, st };
    let nu = p.total_dim().max(1) as f64;

    let f0norm = p.blocks.iter().map(|b| b.f0.norm_squared()).sum::<f64>().sqrt()
        + p.lp.iter().map(|r| r.f0 * r.f0).sum::<f64>().sqrt();
    let cnorm = p.c.norm();

    // starting point
    let mut x = Vec::new();
    let mut z = Vec::new();
    for blk in &p.blocks {
        let n = blk.dim as f64;
        let fmax = blk.terms.iter().map(|(_, s)| s.to_dense(blk.dim).norm()).fold(0.0, f64::max);
        let cmax = blk.terms.iter().map(|(v, _)| p.c[*v].abs()).fold(0.0, f64::max);
        let xi = (10.0f64).max(n.sqrt()).max(n * (1.0 + cmax) / (1.0 + fmax));
        let eta = (10.0f64).max(n.sqrt()).max(blk.f0.norm()).max(fmax);
        x.push(DMatrix::identity(blk.dim, blk.dim) * xi);
        z.push(DMatrix::identity(blk.dim, blk.dim) * eta);
    }
    let lscale = (10.0f64).max(1.0 + cnorm.min(1e3));
    let mut it = Iterate {
        y: DVector::zeros(p.n_vars),
        x,
        z,
        xl: DVector::from_element(p.lp.len(), lscale),
        zl: DVector::from_element(p.lp.len(), lscale),
    };

    let mut last = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut stalls = 0;
    let mut best_pinf = f64::INFINITY;
    let mut flat = 0;
    // lowest max(gap, pinf, dinf) seen, returned if later steps lose accuracy
    let mut best: Option<(f64, Iterate, (f64, f64, f64), usize)> = None;
    for iter in 0..settings.max_iter {
        let zinv: Vec<DMatrix<f64>> = match it.z.iter().map(|z| Cholesky::new(z.clone()).map(|c| c.inverse())).collect::<Option<Vec<_>>>() {
            Some(v) => v,
            None => break,
        };
        let ax = adjoint(p, &it.x, &it.xl);
        let rp = &p.c - &ax;
        let rd: Vec<DMatrix<f64>> = p.blocks.iter().enumerate().map(|(b, blk)| blk.eval(&it.y) - &it.z[b]).collect();
        let rdl = lp_eval(p, &it.y) - &it.zl;
        let comp = it.x.iter().zip(&it.z).map(|(a, b)| frob_inner(a, b)).sum::<f64>() + it.xl.dot(&it.zl);
        let mu = comp / nu;
        let dobj = p.c.dot(&it.y);
        let pobj = -(p.blocks.iter().zip(&it.x).map(|(b, x)| frob_inner(&b.f0, x)).sum::<f64>()
            + p.lp.iter().zip(it.xl.iter()).map(|(r, x)| r.f0 * x).sum::<f64>());
        let rel_gap = comp.max((dobj - pobj).abs()) / (1.0 + dobj.abs() + pobj.abs());
        let pinf = rp.norm() / (1.0 + cnorm);
        let dinf = (rd.iter().map(|r| r.norm_squared()).sum::<f64>() + rdl.norm_squared()).sqrt() / (1.0 + f0norm);
        last = (rel_gap, pinf, dinf);

        if rel_gap <= settings.gap_target && pinf <= settings.feas_tol && dinf <= settings.feas_tol {
            return finish(p, it, iter, last, settings);
        }
        let score = rel_gap.max(pinf).max(dinf);
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, it.clone(), last, iter));
        } else if best.as_ref().is_some_and(|b| b.0 <= settings.gap_tol && score > 100.0 * b.0) {
            break;
        }
        // converged in y but the primal residual has stopped shrinking
        if rel_gap <= settings.gap_target && dinf <= settings.feas_tol {
            if pinf < 0.9 * best_pinf {
                flat = 0;
            } else {
                flat += 1;
                if flat >= 5 {
                    break;
                }
            }
        }
        best_pinf = best_pinf.min(pinf);
        // infeasibility certificates
        if pobj > 0.0 {
            let t = pobj;
            if ax.norm() / t < 1e-8 && t > 1e6 {
                return Err(SdpError::Infeasible(ax.norm() / t));
            }
        }
        if dobj < 0.0 {
            let s = -dobj;
            let rdn = (rd.iter().map(|r| r.norm_squared()).sum::<f64>() + rdl.norm_squared()).sqrt();
            if (f0norm + rdn) / s < 1e-8 && s > 1e6 {
                return Err(SdpError::Unbounded((f0norm + rdn) / s));
            }
        }

        let Ok(fac) = solver.schur(&it, &zinv) else { break };
        // predictor
        let aff = solver.direction(&it, &zinv, &fac, &rp, &rd, &rdl, 0.0, None);
        let (ap, ad) = solver.step_lengths(&it, &aff);
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let mut comp_aff = it.xl.iter().zip(it.zl.iter()).zip(aff.dxl.iter().zip(aff.dzl.iter())).map(|((x, z), (dx, dz))| (x + ap * dx) * (z + ad * dz)).sum::<f64>();
        for b in 0..p.blocks.len() {
            comp_aff += frob_inner(&(&it.x[b] + &aff.dx[b] * ap), &(&it.z[b] + &aff.dz[b] * ad));
        }
        let sigma = ((comp_aff / nu) / mu).clamp(0.0, 1.0).powi(3);
        // corrector
        let cb: Vec<DMatrix<f64>> = aff.dx.iter().zip(&aff.dz).map(|(a, b)| a * b).collect();
        let cl = aff.dxl.component_mul(&aff.dzl);
        let d = solver.direction(&it, &zinv, &fac, &rp, &rd, &rdl, sigma * mu, Some((&cb, &cl)));
        let (ap, ad) = solver.step_lengths(&it, &d);
        let gamma = 0.9 + 0.09 * ap.min(ad).min(1.0);
        let (ap, ad) = ((gamma * ap).min(1.0), (gamma * ad).min(1.0));
        if ap.min(ad) < 1e-10 {
            stalls += 1;
            if stalls > 3 {
                break;
            }
        }
        for b in 0..p.blocks.len() {
            it.x[b] += &d.dx[b] * ap;
            it.z[b] += &d.dz[b] * ad;
            it.x[b] = symmetrize(&it.x[b]);
            it.z[b] = symmetrize(&it.z[b]);
        }
        it.xl += &d.dxl * ap;
        it.y += &d.dy * ad;
        it.zl += &d.dzl * ad;
    }
    let loose = settings.feas_tol.max(settings.gap_tol);
    let ok = |l: &(f64, f64, f64)| l.0 <= settings.gap_tol && l.1 <= loose && l.2 <= loose;
    if let Some((score, b, bl, at)) = best {
        if score < last.0.max(last.1).max(last.2) && ok(&bl) {
            return finish(p, b, at, bl, settings);
        }
    }
    let (gap, pinf, dinf) = last;
    if ok(&last) {
        return finish(p, it, settings.max_iter, last, settings);
    }
    let worst_eig = check_lmi(&it.y, p).worst();
    Err(SdpError::NonConvergence { iterations: settings.max_iter, gap, pinf, dinf, worst_eig })
}

fn finish(p: &SdpProblem, it: Iterate, iterations: usize, last: (f64, f64, f64), settings: &SdpSettings) -> Result<SdpSolution, SdpError> {
    let (gap, pinf, dinf) = last;
    let report = check_lmi(&it.y, p);
    if !report.passes(settings.lmi_tol) || gap > settings.gap_tol {
        return Err(SdpError::NonConvergence { iterations, gap, pinf, dinf, worst_eig: report.worst() });
    }
    Ok(SdpSolution {
        objective: p.c.dot(&it.y),
        y: it.y,
        x: it.x,
        x_lp: it.xl,
        status: SdpStatus::Optimal,
        iterations,
        rel_gap: gap,
        primal_infeasibility: pinf,
        dual_infeasibility: dinf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_boundary() {
        // min x s.t. [[x, 1], [1, x]] ⪰ 0
        let mut b = SdpBuilder::new();
        let x = b.scalar();
        b.add_cost(x, 1.0);
        let e = AffMat::var(x);
        let one = AffMat::constant(DMatrix::from_element(1, 1, 1.0));
        b.add_lmi_grid("m", vec![vec![Some(e.clone()), Some(one)], vec![None, Some(e)]]);
        let p = b.build();
        let s = solve_sdp(&p, &SdpSettings::default()).unwrap();
        assert!((s.y[0] - 1.0).abs() < 1e-7, "{}", s.y[0]);
    }

    #[test]
    fn linear_rows_only() {
        // min x + y s.t. x ≥ 1, y ≥ 2, x + y ≥ 4
        let mut b = SdpBuilder::new();
        let v = b.scalars(2);
        b.add_cost(v[0], 1.0);
        b.add_cost(v[1], 1.0);
        let k = |c: f64| AffMat::constant(DMatrix::from_element(1, 1, c));
        b.add_ge("x", &AffMat::var(v[0]).add(&k(-1.0)));
        b.add_ge("y", &AffMat::var(v[1]).add(&k(-2.0)));
        b.add_ge("sum", &AffMat::var(v[0]).add(&AffMat::var(v[1])).add(&k(-4.0)));
        let s = solve_sdp(&b.build(), &SdpSettings::default()).unwrap();
        assert!((s.objective - 4.0).abs() < 1e-6);
    }

    #[test]
    fn sym_var_packing() {
        let mut b = SdpBuilder::new();
        let s = b.sym(3);
        assert_eq!(s.idx.len(), 6);
        assert_eq!(s.var(2, 1), s.var(1, 2));
        let y = DVector::from_iterator(6, (0..6).map(|k| k as f64));
        let m = s.value(&y);
        assert_eq!(m, m.transpose());
        assert_eq!(m[(0, 2)], 2.0);
        assert_eq!(m[(1, 1)], 3.0);
    }

    #[test]
    fn infeasible_is_reported() {
        // x ≥ 1 and −x ≥ 0
        let mut b = SdpBuilder::new();
        let x = b.scalar();
        let k = |c: f64| AffMat::constant(DMatrix::from_element(1, 1, c));
        b.add_ge("a", &AffMat::var(x).add(&k(-1.0)));
        b.add_ge("b", &AffMat::var(x).scale(-1.0));
        let r = solve_sdp(&b.build(), &SdpSettings::default());
        assert!(matches!(r, Err(SdpError::Infeasible(_)) | Err(SdpError::NonConvergence { .. })), "{r:?}");
    }

    #[test]
    fn size_cap() {
        let mut b = SdpBuilder::new();
        let s = b.sym(40);
        b.add_lmi("big", &s.expr());
        let r = solve_sdp(&b.build(), &SdpSettings { max_dim: 10, ..Default::default() });
        assert!(matches!(r, Err(SdpError::SizeCap(_))));
    }
}
