//! Primal-dual interior-point solver for conic programs
//!
//! ```text
//!   minimize  cᵀx   subject to  A x = b,  x ∈ K
//! ```
//!
//! where `K` is a product of nonnegative orthants, second-order cones
//! `{(t,u) : t ≥ ‖u‖}` and free blocks. Orthant blocks use the usual
//! `x/s` scaling, second-order blocks Nesterov–Todd scaling; steps follow
//! Mehrotra's predictor-corrector scheme. Free variables are eliminated by
//! pivoting on equality rows before the iterations start.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::linalg::{dot, norm2, norm_inf, DenseCholesky};

/// One block of the cone, in variable order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cone {
    NonNeg(usize),
    /// `{(t, u) : t ≥ ‖u‖₂}` of total size `k ≥ 2`.
    SecondOrder(usize),
    Free(usize),
}

impl Cone {
    pub fn size(&self) -> usize {
        match *self {
            Cone::NonNeg(k) | Cone::SecondOrder(k) | Cone::Free(k) => k,
        }
    }
}

pub type ConeSpec = Vec<Cone>;

/// Sparse column: `(row, value)` pairs.
pub type SparseCol = Vec<(usize, f64)>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConeProgram {
    pub nrows: usize,
    pub c: Vec<f64>,
    /// Column-wise constraint matrix.
    pub cols: Vec<SparseCol>,
    pub b: Vec<f64>,
    pub cones: ConeSpec,
}

impl ConeProgram {
    pub fn nvars(&self) -> usize {
        self.cols.len()
    }

    /// `A x`
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nrows];
        for (col, &xj) in self.cols.iter().zip(x) {
            if xj != 0.0 {
                for &(r, v) in col {
                    out[r] += v * xj;
                }
            }
        }
        out
    }

    /// `Aᵀ y`
    pub fn apply_t(&self, y: &[f64]) -> Vec<f64> {
        self.cols.iter().map(|col| col.iter().map(|&(r, v)| v * y[r]).sum()).collect()
    }

    /// Plain-text standard-form listing for debugging.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "rows {} cols {}", self.nrows, self.nvars());
        let cones: Vec<String> = self
            .cones
            .iter()
            .map(|c| match c {
                Cone::NonNeg(k) => format!("L{k}"),
                Cone::SecondOrder(k) => format!("Q{k}"),
                Cone::Free(k) => format!("F{k}"),
            })
            .collect();
        let _ = writeln!(s, "cones {}", cones.join(" "));
        let _ = writeln!(s, "c");
        for (j, v) in self.c.iter().enumerate() {
            if *v != 0.0 {
                let _ = writeln!(s, "{j} {v:e}");
            }
        }
        let _ = writeln!(s, "b");
        for (i, v) in self.b.iter().enumerate() {
            if *v != 0.0 {
                let _ = writeln!(s, "{i} {v:e}");
            }
        }
        let _ = writeln!(s, "A");
        for (j, col) in self.cols.iter().enumerate() {
            for (i, v) in col {
                let _ = writeln!(s, "{i} {j} {v:e}");
            }
        }
        s
    }
}

/// Incremental construction of a [`ConeProgram`]. Consecutive variables of
/// the same orthant or free kind are merged into one block.
#[derive(Debug, Default, Clone)]
pub struct ProgramBuilder {
    b: Vec<f64>,
    c: Vec<f64>,
    cols: Vec<SparseCol>,
    cones: Vec<Cone>,
}

impl ProgramBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_row(&mut self, rhs: f64) -> usize {
        self.b.push(rhs);
        self.b.len() - 1
    }

    pub fn nrows(&self) -> usize {
        self.b.len()
    }

    pub fn nvars(&self) -> usize {
        self.cols.len()
    }

    pub fn rhs_mut(&mut self, row: usize) -> &mut f64 {
        &mut self.b[row]
    }

    fn push_block(&mut self, cone: Cone) {
        match (self.cones.last_mut(), cone) {
            (Some(Cone::NonNeg(k)), Cone::NonNeg(m)) => *k += m,
            (Some(Cone::Free(k)), Cone::Free(m)) => *k += m,
            _ => self.cones.push(cone),
        }
    }

    fn push_col(&mut self, mut col: SparseCol, cost: f64) -> usize {
        col.retain(|&(_, v)| v != 0.0);
        self.cols.push(col);
        self.c.push(cost);
        self.cols.len() - 1
    }

    pub fn add_nonneg(&mut self, col: SparseCol, cost: f64) -> usize {
        self.push_block(Cone::NonNeg(1));
        self.push_col(col, cost)
    }

    pub fn add_free(&mut self, col: SparseCol, cost: f64) -> usize {
        self.push_block(Cone::Free(1));
        self.push_col(col, cost)
    }

    /// Adds a second-order block; returns the index of its first variable.
    pub fn add_soc(&mut self, cols: Vec<SparseCol>, costs: Vec<f64>) -> usize {
        assert!(cols.len() >= 2 && cols.len() == costs.len());
        self.cones.push(Cone::SecondOrder(cols.len()));
        let first = self.cols.len();
        for (col, cost) in cols.into_iter().zip(costs) {
            self.push_col(col, cost);
        }
        first
    }

    pub fn build(self) -> ConeProgram {
        let nrows = self.b.len();
        for col in &self.cols {
            for &(r, _) in col {
                assert!(r < nrows, "row index out of range");
            }
        }
        ConeProgram { nrows, c: self.c, cols: self.cols, b: self.b, cones: self.cones }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    Stalled,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub s: Vec<f64>,
    /// `|cᵀx − bᵀy| / (1 + |cᵀx|)`
    pub gap: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
}

impl ConicSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Relative accuracy the solver aims for.
    pub tol: f64,
    /// Relative accuracy still reported as optimal when progress stalls.
    pub accept_tol: f64,
    pub step_fraction: f64,
    /// Norm of an iterate beyond which infeasibility is declared.
    pub divergence: f64,
    /// Per-iteration trace on standard error.
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { max_iters: 200, tol: 1e-9, accept_tol: 1e-7, step_fraction: 0.99, divergence: 1e10, verbose: std::env::var_os("SOSRELAX_TRACE").is_some() }
    }
}

pub fn solve(prog: &ConeProgram) -> ConicSolution {
    solve_with(prog, &SolverOptions::default())
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    NonNeg,
    Soc,
}

#[derive(Clone, Copy)]
struct Block {
    kind: Kind,
    start: usize,
    len: usize,
}

/// Nesterov–Todd scaling of one second-order block: `W = β [[w0, w1ᵀ], [w1, I + w1 w1ᵀ/(1+w0)]]`.
#[derive(Clone)]
struct SocScaling {
    beta: f64,
    w: Vec<f64>,
}

impl SocScaling {
    fn new(x: &[f64], s: &[f64]) -> Option<Self> {
        let xjx = jdot(x, x);
        let sjs = jdot(s, s);
        if !(xjx > 0.0 && sjs > 0.0) {
            return None;
        }
        let xn: Vec<f64> = x.iter().map(|v| v / xjx.sqrt()).collect();
        let sn: Vec<f64> = s.iter().map(|v| v / sjs.sqrt()).collect();
        let gamma = ((1.0 + dot(&xn, &sn)) / 2.0).sqrt();
        let mut w: Vec<f64> = xn.iter().zip(&sn).map(|(a, b)| a - b).collect();
        w[0] = xn[0] + sn[0];
        for v in w.iter_mut() {
            *v /= 2.0 * gamma;
        }
        Some(SocScaling { beta: (xjx / sjs).sqrt().sqrt(), w })
    }

    /// `W v`
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let w0 = self.w[0];
        let w1 = &self.w[1..];
        let wv1 = dot(w1, &v[1..]);
        out[0] = self.beta * (w0 * v[0] + wv1);
        let coef = v[0] + wv1 / (1.0 + w0);
        for i in 1..v.len() {
            out[i] = self.beta * (v[i] + coef * w1[i - 1]);
        }
    }

    /// `W⁻¹ v`
    fn apply_inv(&self, v: &[f64], out: &mut [f64]) {
        let w0 = self.w[0];
        let w1 = &self.w[1..];
        let wv1 = dot(w1, &v[1..]);
        out[0] = (w0 * v[0] - wv1) / self.beta;
        let coef = -v[0] + wv1 / (1.0 + w0);
        for i in 1..v.len() {
            out[i] = (v[i] + coef * w1[i - 1]) / self.beta;
        }
    }

    /// Dense `W²` (row-major).
    fn squared(&self) -> Vec<f64> {
        let k = self.w.len();
        let mut wm = vec![0.0; k * k];
        let mut e = vec![0.0; k];
        let mut col = vec![0.0; k];
        for j in 0..k {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            self.apply(&e, &mut col);
            for i in 0..k {
                wm[i * k + j] = col[i];
            }
        }
        let mut w2 = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                w2[i * k + j] = (0..k).map(|l| wm[i * k + l] * wm[l * k + j]).sum();
            }
        }
        w2
    }
}

/// `xᵀ J x` with `J = diag(1, -1, ..., -1)`.
fn jdot(a: &[f64], b: &[f64]) -> f64 {
    a[0] * b[0] - dot(&a[1..], &b[1..])
}

/// Jordan product in a second-order block.
fn soc_prod(u: &[f64], v: &[f64], out: &mut [f64]) {
    out[0] = dot(u, v);
    for i in 1..u.len() {
        out[i] = u[0] * v[i] + v[0] * u[i];
    }
}

/// Solves `λ ∘ z = r` in a second-order block.
fn soc_div(lam: &[f64], r: &[f64], out: &mut [f64]) {
    let det = jdot(lam, lam);
    let z0 = (lam[0] * r[0] - dot(&lam[1..], &r[1..])) / det;
    out[0] = z0;
    for i in 1..lam.len() {
        out[i] = (r[i] - z0 * lam[i]) / lam[0];
    }
}

/// Largest `α ≥ 0` keeping `x + α d` in the second-order cone (may be infinite).
fn soc_max_step(x: &[f64], d: &[f64]) -> f64 {
    let a = jdot(d, d);
    let b = 2.0 * jdot(x, d);
    let c = jdot(x, x).max(0.0);
    let mut best = f64::INFINITY;
    if d[0] < 0.0 {
        best = best.min(-x[0] / d[0]);
    }
    let scale = a.abs().max(b.abs()).max(c.abs()).max(1e-300);
    if a.abs() <= 1e-14 * scale {
        if b < 0.0 {
            best = best.min(-c / b);
        }
        return best.max(0.0);
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return best.max(0.0);
    }
    let sq = disc.sqrt();
    let t = -0.5 * (b + b.signum() * sq);
    let roots = [t / a, if t != 0.0 { c / t } else { f64::INFINITY }];
    for r in roots {
        if r > 0.0 {
            best = best.min(r);
        }
    }
    best.max(0.0)
}

/// Minimum "eigenvalue" of a cone element, used by the initial point heuristic.
fn cone_min(blocks: &[Block], v: &[f64]) -> f64 {
    let mut m = f64::INFINITY;
    for b in blocks {
        let seg = &v[b.start..b.start + b.len];
        match b.kind {
            Kind::NonNeg => m = seg.iter().fold(m, |a, &x| a.min(x)),
            Kind::Soc => m = m.min(seg[0] - norm2(&seg[1..])),
        }
    }
    m
}

fn add_identity(blocks: &[Block], v: &mut [f64], t: f64) {
    for b in blocks {
        match b.kind {
            Kind::NonNeg => v[b.start..b.start + b.len].iter_mut().for_each(|x| *x += t),
            Kind::Soc => v[b.start] += t,
        }
    }
}

fn identity_dot(blocks: &[Block], v: &[f64]) -> f64 {
    let mut s = 0.0;
    for b in blocks {
        match b.kind {
            Kind::NonNeg => s += v[b.start..b.start + b.len].iter().sum::<f64>(),
            Kind::Soc => s += v[b.start],
        }
    }
    s
}

struct Scaling {
    nonneg_w: Vec<f64>,
    soc: Vec<Option<SocScaling>>,
}

/// Interior-point iterations on a program without free blocks.
struct Solver<'a> {
    p: &'a ConeProgram,
    blocks: Vec<Block>,
    m: usize,
    n: usize,
    nu: f64,
    active_rows: Vec<bool>,
}

impl<'a> Solver<'a> {
    fn new(p: &'a ConeProgram) -> Self {
        let mut blocks = Vec::new();
        let mut start = 0;
        let mut nu = 0.0;
        for cone in &p.cones {
            let (kind, len) = match *cone {
                Cone::NonNeg(k) => (Kind::NonNeg, k),
                Cone::SecondOrder(k) => (Kind::Soc, k),
                Cone::Free(_) => unreachable!("free blocks are eliminated before the iterations"),
            };
            nu += if kind == Kind::NonNeg { len as f64 } else { 1.0 };
            blocks.push(Block { kind, start, len });
            start += len;
        }
        assert_eq!(start, p.nvars(), "cone sizes must add up to the variable count");
        Solver { p, blocks, m: p.nrows, n: p.nvars(), nu: nu.max(1.0), active_rows: active_rows(p) }
    }

    fn scaling(&self, x: &[f64], s: &[f64]) -> Option<Scaling> {
        let mut nonneg_w = vec![0.0; self.n];
        let mut soc = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            match b.kind {
                Kind::NonNeg => {
                    for j in b.start..b.start + b.len {
                        if !(x[j] > 0.0 && s[j] > 0.0) {
                            return None;
                        }
                        nonneg_w[j] = (x[j] / s[j]).sqrt();
                    }
                    soc.push(None);
                }
                Kind::Soc => {
                    let r = b.start..b.start + b.len;
                    soc.push(Some(SocScaling::new(&x[r.clone()], &s[r])?));
                }
            }
        }
        Some(Scaling { nonneg_w, soc })
    }

    fn apply_w(&self, sc: &Scaling, v: &[f64], inverse: bool) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (bi, b) in self.blocks.iter().enumerate() {
            let r = b.start..b.start + b.len;
            match b.kind {
                Kind::NonNeg => {
                    for j in r {
                        out[j] = if inverse { v[j] / sc.nonneg_w[j] } else { v[j] * sc.nonneg_w[j] };
                    }
                }
                Kind::Soc => {
                    let w = sc.soc[bi].as_ref().expect("soc scaling");
                    if inverse {
                        w.apply_inv(&v[r.clone()], &mut out[r]);
                    } else {
                        w.apply(&v[r.clone()], &mut out[r]);
                    }
                }
            }
        }
        out
    }

    fn jordan_prod(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for b in &self.blocks {
            let r = b.start..b.start + b.len;
            match b.kind {
                Kind::NonNeg => {
                    for j in r {
                        out[j] = u[j] * v[j];
                    }
                }
                Kind::Soc => soc_prod(&u[r.clone()], &v[r.clone()], &mut out[r]),
            }
        }
        out
    }

    fn jordan_div(&self, lam: &[f64], rhs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for b in &self.blocks {
            let r = b.start..b.start + b.len;
            match b.kind {
                Kind::NonNeg => {
                    for j in r {
                        out[j] = rhs[j] / lam[j];
                    }
                }
                Kind::Soc => soc_div(&lam[r.clone()], &rhs[r.clone()], &mut out[r]),
            }
        }
        out
    }

    fn max_step(&self, v: &[f64], d: &[f64]) -> f64 {
        let mut a = f64::INFINITY;
        for b in &self.blocks {
            let r = b.start..b.start + b.len;
            match b.kind {
                Kind::NonNeg => {
                    for j in r {
                        if d[j] < 0.0 {
                            a = a.min(-v[j] / d[j]);
                        }
                    }
                }
                Kind::Soc => a = a.min(soc_max_step(&v[r.clone()], &d[r])),
            }
        }
        a
    }

    /// Lower triangle of `A W² Aᵀ`, dense row-major.
    fn normal_matrix(&self, sc: &Scaling) -> Vec<f64> {
        let m = self.m;
        let mut mat = vec![0.0; m * m];
        for (bi, b) in self.blocks.iter().enumerate() {
            match b.kind {
                Kind::NonNeg => {
                    for j in b.start..b.start + b.len {
                        let d = sc.nonneg_w[j] * sc.nonneg_w[j];
                        let col = &self.p.cols[j];
                        for &(r1, v1) in col {
                            let f = d * v1;
                            for &(r2, v2) in col {
                                if r2 <= r1 {
                                    mat[r1 * m + r2] += f * v2;
                                }
                            }
                        }
                    }
                }
                Kind::Soc => {
                    let w2 = sc.soc[bi].as_ref().expect("soc scaling").squared();
                    let k = b.len;
                    for p in 0..k {
                        let colp = &self.p.cols[b.start + p];
                        for q in 0..k {
                            let coef = w2[p * k + q];
                            if coef == 0.0 {
                                continue;
                            }
                            let colq = &self.p.cols[b.start + q];
                            for &(r1, v1) in colp {
                                let f = coef * v1;
                                for &(r2, v2) in colq {
                                    if r2 <= r1 {
                                        mat[r1 * m + r2] += f * v2;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        for i in 0..m {
            if !self.active_rows[i] {
                mat[i * m + i] = 1.0;
            }
        }
        mat
    }

    fn residuals(&self, x: &[f64], y: &[f64], s: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let ax = self.p.apply(x);
        let rp: Vec<f64> = self.p.b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let aty = self.p.apply_t(y);
        let rd: Vec<f64> = (0..self.n).map(|j| self.p.c[j] - aty[j] - s[j]).collect();
        (rp, rd)
    }

    fn initial_point(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let m = self.m;
        // least-squares estimates through A Aᵀ
        let mut aat = vec![0.0; m * m];
        for col in &self.p.cols {
            for &(r1, v1) in col {
                for &(r2, v2) in col {
                    if r2 <= r1 {
                        aat[r1 * m + r2] += v1 * v2;
                    }
                }
            }
        }
        for i in 0..m {
            if !self.active_rows[i] {
                aat[i * m + i] = 1.0;
            }
        }
        let f = DenseCholesky::factor(aat, m, 1e-14);
        let mut x = self.p.apply_t(&f.solve(&self.p.b));
        let y = f.solve(&self.p.apply(&self.p.c));
        let aty = self.p.apply_t(&y);
        let mut s: Vec<f64> = (0..self.n).map(|j| self.p.c[j] - aty[j]).collect();

        let dx = (-1.5 * cone_min(&self.blocks, &x)).max(0.0);
        let ds = (-1.5 * cone_min(&self.blocks, &s)).max(0.0);
        add_identity(&self.blocks, &mut x, dx);
        add_identity(&self.blocks, &mut s, ds);
        let xs = dot(&x, &s);
        let ex = identity_dot(&self.blocks, &x);
        let es = identity_dot(&self.blocks, &s);
        let dx2 = if es > 0.0 { 0.5 * xs / es } else { 0.0 };
        let ds2 = if ex > 0.0 { 0.5 * xs / ex } else { 0.0 };
        add_identity(&self.blocks, &mut x, dx2);
        add_identity(&self.blocks, &mut s, ds2);
        for v in [&mut x, &mut s] {
            let mn = cone_min(&self.blocks, v);
            if !(mn > 1e-8) || !mn.is_finite() {
                add_identity(&self.blocks, v, 1.0 - mn.min(0.0));
            }
        }
        (x, y, s)
    }

    fn run(&self, opts: &SolverOptions) -> ConicSolution {
        let (mut x, mut y, mut s) = self.initial_point();
        let bnorm = norm2(&self.p.b);
        let cnorm = norm2(&self.p.c);
        let mut iterations = 0;
        let mut status = SolveStatus::Stalled;
        let mut best: Option<(f64, Stats, Vec<f64>, Vec<f64>, Vec<f64>)> = None;
        let mut last = Stats::default();
        let mut last_step = 1.0f64;

        for it in 0..=opts.max_iters {
            iterations = it;
            let (rp, rd) = self.residuals(&x, &y, &s);
            let pobj = dot(&self.p.c, &x);
            let dobj = dot(&self.p.b, &y);
            let pres = norm2(&rp) / (1.0 + bnorm);
            let dres = norm2(&rd) / (1.0 + cnorm);
            let gap = (pobj - dobj).abs() / (1.0 + pobj.abs());
            let mu = dot(&x, &s) / self.nu;
            last = Stats { pres, dres, gap, pobj, dobj };
            if opts.verbose {
                eprintln!("{it:3} pobj {pobj:+.9e} dobj {dobj:+.9e} pres {pres:.2e} dres {dres:.2e} gap {gap:.2e} mu {mu:.2e}");
            }
            let merit = pres.max(dres).max(gap);
            if merit.is_finite() && best.as_ref().is_none_or(|b| merit < b.0) {
                best = Some((merit, last, x.clone(), y.clone(), s.clone()));
            }

            if pres <= opts.tol && dres <= opts.tol && gap <= opts.tol {
                status = SolveStatus::Optimal;
                break;
            }
            let big = opts.divergence;
            if norm_inf(&y).max(norm_inf(&s)) > big * (1.0 + cnorm) && dobj > 0.0 {
                status = SolveStatus::PrimalInfeasible;
                break;
            }
            if norm_inf(&x) > big * (1.0 + bnorm) && pobj < 0.0 {
                status = SolveStatus::DualInfeasible;
                break;
            }
            if it == opts.max_iters {
                break;
            }

            let Some(sc) = self.scaling(&x, &s) else { break };
            let lam = self.apply_w(&sc, &s, false);
            let Some(kkt) = Kkt::new(self, &sc) else { break };

            // predictor
            let xi_aff: Vec<f64> = lam.iter().map(|v| -v).collect();
            let (dx_a, _, ds_a) = kkt.solve(self, &sc, &rp, &rd, &xi_aff);
            let ap = self.max_step(&x, &dx_a).min(1.0);
            let ad = self.max_step(&s, &ds_a).min(1.0);
            let mut mu_aff = 0.0;
            for j in 0..self.n {
                mu_aff += (x[j] + ap * dx_a[j]) * (s[j] + ad * ds_a[j]);
            }
            mu_aff /= self.nu;
            let mut sigma = if mu > 0.0 { (mu_aff / mu).max(0.0).powi(3).min(1.0) } else { 0.0 };
            // a short previous step means the iterate left the central path
            if last_step < 0.1 {
                sigma = sigma.max(0.5);
            }

            // corrector
            let wdx = self.apply_w(&sc, &dx_a, true);
            let wds = self.apply_w(&sc, &ds_a, false);
            let corr = self.jordan_prod(&wdx, &wds);
            let lamlam = self.jordan_prod(&lam, &lam);
            let mut rc: Vec<f64> = (0..self.n).map(|j| -lamlam[j] - corr[j]).collect();
            add_identity(&self.blocks, &mut rc, sigma * mu);
            let xi = self.jordan_div(&lam, &rc);
            let (dx, dy, ds) = kkt.solve(self, &sc, &rp, &rd, &xi);
            let ap = (opts.step_fraction * self.max_step(&x, &dx)).min(1.0);
            let ad = (opts.step_fraction * self.max_step(&s, &ds)).min(1.0);
            if !(ap.is_finite() && ad.is_finite()) || (ap < 1e-12 && ad < 1e-12) {
                break;
            }
            last_step = ap.min(ad);
            for j in 0..self.n {
                x[j] += ap * dx[j];
                s[j] += ad * ds[j];
            }
            for i in 0..self.m {
                y[i] += ad * dy[i];
            }
            if x.iter().chain(&s).chain(&y).any(|v| !v.is_finite()) {
                break;
            }
        }

        if status == SolveStatus::Stalled {
            if let Some((merit, stats, bx, by, bs)) = best {
                x = bx;
                y = by;
                s = bs;
                last = stats;
                if merit <= opts.accept_tol {
                    status = SolveStatus::Optimal;
                }
            }
        }
        ConicSolution {
            status,
            x,
            y,
            s,
            gap: last.gap,
            primal_objective: last.pobj,
            dual_objective: last.dobj,
            primal_residual: last.pres,
            dual_residual: last.dres,
            iterations,
        }
    }
}

fn active_rows(p: &ConeProgram) -> Vec<bool> {
    let mut active = vec![false; p.nrows];
    for col in &p.cols {
        for &(r, v) in col {
            if v != 0.0 {
                active[r] = true;
            }
        }
    }
    active
}

#[derive(Default, Clone, Copy)]
struct Stats {
    pres: f64,
    dres: f64,
    gap: f64,
    pobj: f64,
    dobj: f64,
}

/// Factored normal equations for one iteration.
struct Kkt {
    mat: Vec<f64>,
    chol: DenseCholesky,
}

impl Kkt {
    fn new(sv: &Solver, sc: &Scaling) -> Option<Self> {
        let mat = sv.normal_matrix(sc);
        if mat.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let chol = DenseCholesky::factor(mat.clone(), sv.m, 1e-30);
        Some(Kkt { mat, chol })
    }

    /// `M z = h` with one step of iterative refinement.
    fn solve_normal(&self, h: &[f64]) -> Vec<f64> {
        let m = h.len();
        let mut z = self.chol.solve(h);
        let mut r = h.to_vec();
        for i in 0..m {
            let row = &self.mat[i * m..i * m + i + 1];
            for j in 0..i {
                r[i] -= row[j] * z[j];
                r[j] -= row[j] * z[i];
            }
            r[i] -= row[i] * z[i];
        }
        let dz = self.chol.solve(&r);
        if dz.iter().all(|v| v.is_finite()) {
            for i in 0..m {
                z[i] += dz[i];
            }
        }
        z
    }

    /// Newton direction for right-hand sides `(rp, rd, ξ)`.
    fn solve(&self, sv: &Solver, sc: &Scaling, rp: &[f64], rd: &[f64], xi: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = sv.n;
        // h = rp - A W (ξ - W rd)
        let wrd = sv.apply_w(sc, rd, false);
        let t: Vec<f64> = (0..n).map(|j| xi[j] - wrd[j]).collect();
        let wt = sv.apply_w(sc, &t, false);
        let awt = sv.p.apply(&wt);
        let h: Vec<f64> = rp.iter().zip(&awt).map(|(a, b)| a - b).collect();
        let mut dy = self.solve_normal(&h);
        let step = |dy: &[f64]| {
            let atdy = sv.p.apply_t(dy);
            let ds: Vec<f64> = (0..n).map(|j| rd[j] - atdy[j]).collect();
            let wds = sv.apply_w(sc, &ds, false);
            let inner: Vec<f64> = (0..n).map(|j| xi[j] - wds[j]).collect();
            let dx = sv.apply_w(sc, &inner, false);
            (dx, ds)
        };
        let (mut dx, mut ds) = step(&dy);
        // refine against the primal equation A dx = rp itself, which the
        // formed normal matrix only approximates once W is badly scaled
        let mut err = primal_error(sv, rp, &dx);
        for _ in 0..3 {
            let e = err.0;
            if err.1 <= 1e-15 * (1.0 + norm2(rp)) {
                break;
            }
            let delta = self.chol.solve(&e);
            let cand: Vec<f64> = dy.iter().zip(&delta).map(|(a, b)| a + b).collect();
            let (cx, cs) = step(&cand);
            let cerr = primal_error(sv, rp, &cx);
            if !(cerr.1 < err.1) {
                break;
            }
            dy = cand;
            dx = cx;
            ds = cs;
            err = cerr;
        }
        (dx, dy, ds)
    }
}

fn primal_error(sv: &Solver, rp: &[f64], dx: &[f64]) -> (Vec<f64>, f64) {
    let adx = sv.p.apply(dx);
    let e: Vec<f64> = rp.iter().zip(&adx).map(|(a, b)| a - b).collect();
    let norm = norm2(&e);
    (e, norm)
}

/// Solves `A x = b` for square dense `A` (row-major) by partial pivoting.
fn dense_solve(mut a: Vec<f64>, n: usize, mut b: Vec<f64>) -> Option<Vec<f64>> {
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i * n + k].abs().total_cmp(&a[j * n + k].abs()))?;
        if a[p * n + k] == 0.0 {
            return None;
        }
        if p != k {
            for j in 0..n {
                a.swap(k * n + j, p * n + j);
            }
            b.swap(k, p);
        }
        for i in k + 1..n {
            let f = a[i * n + k] / a[k * n + k];
            if f != 0.0 {
                for j in k..n {
                    a[i * n + j] -= f * a[k * n + j];
                }
                b[i] -= f * b[k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i * n + j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i * n + i];
    }
    Some(x)
}

/// Program with its free variables eliminated by pivoting on equality rows.
struct Reduced {
    prog: ConeProgram,
    /// reduced variable → original variable
    vars: Vec<usize>,
    /// reduced row → original row
    rows: Vec<usize>,
    /// `(free variable, pivot row)` pairs
    pivots: Vec<(usize, usize)>,
}

enum Presolved {
    Reduced(Reduced),
    DualInfeasible,
}

fn eliminate_free(prog: &ConeProgram) -> Presolved {
    let m = prog.nrows;
    let n = prog.nvars();
    let mut rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); m];
    for (j, col) in prog.cols.iter().enumerate() {
        for &(r, v) in col {
            *rows[r].entry(j).or_insert(0.0) += v;
        }
    }
    let mut b = prog.b.clone();
    let mut c = prog.c.clone();
    let mut active = vec![true; m];
    let mut is_free = vec![false; n];
    let mut start = 0;
    for cone in &prog.cones {
        if let Cone::Free(k) = cone {
            is_free[start..start + k].iter_mut().for_each(|f| *f = true);
        }
        start += cone.size();
    }
    let cscale = 1.0 + norm_inf(&prog.c);
    let mut pivots = Vec::new();

    for j in (0..n).filter(|&j| is_free[j]) {
        let colmax = prog.cols[j].iter().fold(0.0f64, |a, &(_, v)| a.max(v.abs()));
        let cand: Vec<(usize, f64)> =
            (0..m).filter(|&i| active[i]).filter_map(|i| rows[i].get(&j).map(|&v| (i, v))).collect();
        let amax = cand.iter().fold(0.0f64, |a, &(_, v)| a.max(v.abs()));
        if amax <= 1e-12 * (1.0 + colmax) {
            if c[j].abs() > 1e-12 * cscale {
                return Presolved::DualInfeasible;
            }
            for &(i, _) in &cand {
                rows[i].remove(&j);
            }
            continue;
        }
        let &(r, piv) = cand
            .iter()
            .filter(|(_, v)| v.abs() >= 0.1 * amax)
            .min_by_key(|(i, _)| rows[*i].len())
            .expect("a candidate reaches the maximum");
        active[r] = false;
        let prow = rows[r].clone();
        let br = b[r];
        for &(i, aij) in &cand {
            if i == r {
                continue;
            }
            let f = aij / piv;
            let row = &mut rows[i];
            for (&k, &v) in &prow {
                let old = row.get(&k).copied().unwrap_or(0.0);
                let new = old - f * v;
                if k == j || new.abs() <= 1e-13 * old.abs().max((f * v).abs()) {
                    row.remove(&k);
                } else {
                    row.insert(k, new);
                }
            }
            b[i] -= f * br;
        }
        let f = c[j] / piv;
        for (&k, &v) in &prow {
            c[k] -= f * v;
        }
        c[j] = 0.0;
        pivots.push((j, r));
    }

    let vars: Vec<usize> = (0..n).filter(|&j| !is_free[j]).collect();
    let mut new_index = vec![usize::MAX; n];
    for (k, &j) in vars.iter().enumerate() {
        new_index[j] = k;
    }
    let keep_rows: Vec<usize> = (0..m).filter(|&i| active[i]).collect();
    let mut cols: Vec<SparseCol> = vec![Vec::new(); vars.len()];
    for (ri, &i) in keep_rows.iter().enumerate() {
        for (&k, &v) in &rows[i] {
            if !is_free[k] {
                cols[new_index[k]].push((ri, v));
            }
        }
    }
    let cones = prog.cones.iter().filter(|c| !matches!(c, Cone::Free(_))).copied().collect();
    let reduced = ConeProgram {
        nrows: keep_rows.len(),
        c: vars.iter().map(|&j| c[j]).collect(),
        cols,
        b: keep_rows.iter().map(|&i| b[i]).collect(),
        cones,
    };
    Presolved::Reduced(Reduced { prog: reduced, vars, rows: keep_rows, pivots })
}

/// Removes the rows no variable touches; their multipliers come back as zero.
fn drop_rows(red: &mut Reduced, keep: &[bool]) {
    if keep.iter().all(|&k| k) {
        return;
    }
    let mut new_index = vec![usize::MAX; keep.len()];
    let mut rows = Vec::new();
    let mut b = Vec::new();
    for (i, _) in keep.iter().enumerate().filter(|(_, &k)| k) {
        new_index[i] = rows.len();
        rows.push(red.rows[i]);
        b.push(red.prog.b[i]);
    }
    for col in &mut red.prog.cols {
        col.retain(|&(r, _)| keep[r]);
        for e in col.iter_mut() {
            e.0 = new_index[e.0];
        }
    }
    red.prog.nrows = rows.len();
    red.prog.b = b;
    red.rows = rows;
}

/// Maps a solution of the reduced program back to the original variables.
fn expand(prog: &ConeProgram, red: &Reduced, sol: ConicSolution) -> ConicSolution {
    let n = prog.nvars();
    let m = prog.nrows;
    let mut x = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut y = vec![0.0; m];
    for (k, &j) in red.vars.iter().enumerate() {
        x[j] = sol.x[k];
        s[j] = sol.s[k];
    }
    for (k, &i) in red.rows.iter().enumerate() {
        y[i] = sol.y[k];
    }
    let p = red.pivots.len();
    if p > 0 {
        let row_pos: HashMap<usize, usize> = red.pivots.iter().enumerate().map(|(a, &(_, r))| (r, a)).collect();
        // A[P, F] and A[P, F]ᵀ
        let mut apf = vec![0.0; p * p];
        for (a, &(j, _)) in red.pivots.iter().enumerate() {
            for &(r, v) in &prog.cols[j] {
                if let Some(&ra) = row_pos.get(&r) {
                    apf[ra * p + a] += v;
                }
            }
        }
        // primal: A[P,F] x_F = b_P - (A x with x_F = 0)_P
        let ax = prog.apply(&x);
        let rhs: Vec<f64> = red.pivots.iter().map(|&(_, r)| prog.b[r] - ax[r]).collect();
        if let Some(xf) = dense_solve(apf.clone(), p, rhs) {
            for (a, &(j, _)) in red.pivots.iter().enumerate() {
                x[j] = xf[a];
            }
        }
        // dual: A[P,F]ᵀ y_P = c_F - A[·,F]ᵀ y (with y_P = 0)
        let rhs: Vec<f64> = red
            .pivots
            .iter()
            .map(|&(j, _)| prog.c[j] - prog.cols[j].iter().map(|&(r, v)| v * y[r]).sum::<f64>())
            .collect();
        let mut apft = vec![0.0; p * p];
        for i in 0..p {
            for k in 0..p {
                apft[k * p + i] = apf[i * p + k];
            }
        }
        if let Some(yp) = dense_solve(apft, p, rhs) {
            for (a, &(_, r)) in red.pivots.iter().enumerate() {
                y[r] = yp[a];
            }
        }
    }
    let mut out = ConicSolution { x, y, s, ..sol };
    let rep = verify(prog, &out);
    out.primal_objective = dot(&prog.c, &out.x);
    out.dual_objective = dot(&prog.b, &out.y);
    out.primal_residual = rep.primal_residual;
    out.dual_residual = rep.dual_residual;
    out.gap = rep.gap;
    out
}

fn failed(prog: &ConeProgram, status: SolveStatus) -> ConicSolution {
    ConicSolution {
        status,
        x: vec![0.0; prog.nvars()],
        y: vec![0.0; prog.nrows],
        s: vec![0.0; prog.nvars()],
        gap: f64::INFINITY,
        primal_objective: f64::NAN,
        dual_objective: f64::NAN,
        primal_residual: f64::INFINITY,
        dual_residual: f64::INFINITY,
        iterations: 0,
    }
}

thread_local! {
    static RECORDER: std::cell::RefCell<Option<Vec<String>>> = const { std::cell::RefCell::new(None) };
}

/// Starts keeping a [`ConeProgram::dump`] listing of every program solved on
/// this thread.
pub fn start_recording() {
    RECORDER.with(|r| *r.borrow_mut() = Some(Vec::new()));
}

/// Stops recording and returns the listings in solve order.
pub fn take_recording() -> Vec<String> {
    RECORDER.with(|r| r.borrow_mut().take().unwrap_or_default())
}

/// Solves a conic program. Free variables are eliminated first; rows that no
/// variable touches are then checked for consistency, an inconsistent one
/// making the program primal infeasible.
pub fn solve_with(prog: &ConeProgram, opts: &SolverOptions) -> ConicSolution {
    RECORDER.with(|r| {
        if let Some(list) = r.borrow_mut().as_mut() {
            list.push(prog.dump());
        }
    });
    let red = match eliminate_free(prog) {
        Presolved::Reduced(r) => r,
        Presolved::DualInfeasible => return failed(prog, SolveStatus::DualInfeasible),
    };
    let mut red = red;
    let active = active_rows(&red.prog);
    let bnorm = norm2(&red.prog.b);
    if (0..red.prog.nrows).any(|i| !active[i] && red.prog.b[i].abs() > 1e-10 * (1.0 + bnorm)) {
        return failed(prog, SolveStatus::PrimalInfeasible);
    }
    drop_rows(&mut red, &active);
    let rp = &red.prog;
    let sol = if rp.nvars() == 0 {
        let mut s = failed(rp, SolveStatus::Optimal);
        s.gap = 0.0;
        s
    } else {
        Solver::new(rp).run(opts)
    };
    let out = expand(prog, &red, sol);
    if out.status == SolveStatus::Optimal {
        OPTIMAL_SOLVES.fetch_add(1, Ordering::Relaxed);
        WORST_GAP.fetch_max(out.gap.to_bits(), Ordering::Relaxed);
    }
    out
}

static OPTIMAL_SOLVES: AtomicUsize = AtomicUsize::new(0);
// nonnegative f64 bit patterns order like the values
static WORST_GAP: AtomicU64 = AtomicU64::new(0);

/// Number of solves in this process that ended Optimal, and the largest
/// relative gap among them.
pub fn optimal_gap_record() -> (usize, f64) {
    (OPTIMAL_SOLVES.load(Ordering::Relaxed), f64::from_bits(WORST_GAP.load(Ordering::Relaxed)))
}

/// Independently recomputed residuals of a solution.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ResidualReport {
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub primal_cone_violation: f64,
    pub dual_cone_violation: f64,
}

impl ResidualReport {
    pub fn max_violation(&self) -> f64 {
        self.primal_residual
            .max(self.dual_residual)
            .max(self.gap)
            .max(self.primal_cone_violation)
            .max(self.dual_cone_violation)
    }
}

pub fn verify(prog: &ConeProgram, sol: &ConicSolution) -> ResidualReport {
    let ax = prog.apply(&sol.x);
    let rp: Vec<f64> = prog.b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let aty = prog.apply_t(&sol.y);
    let rd: Vec<f64> = (0..prog.nvars()).map(|j| prog.c[j] - aty[j] - sol.s[j]).collect();
    let pobj = dot(&prog.c, &sol.x);
    let dobj = dot(&prog.b, &sol.y);
    let mut pviol: f64 = 0.0;
    let mut dviol: f64 = 0.0;
    let mut start = 0;
    for cone in &prog.cones {
        let k = cone.size();
        let xs = &sol.x[start..start + k];
        let ss = &sol.s[start..start + k];
        match cone {
            Cone::NonNeg(_) => {
                for (&a, &b) in xs.iter().zip(ss) {
                    pviol = pviol.max(-a);
                    dviol = dviol.max(-b);
                }
            }
            Cone::SecondOrder(_) => {
                pviol = pviol.max(norm2(&xs[1..]) - xs[0]);
                dviol = dviol.max(norm2(&ss[1..]) - ss[0]);
            }
            Cone::Free(_) => dviol = dviol.max(norm_inf(ss)),
        }
        start += k;
    }
    ResidualReport {
        primal_residual: norm2(&rp) / (1.0 + norm2(&prog.b)),
        dual_residual: norm2(&rd) / (1.0 + norm2(&prog.c)),
        gap: (pobj - dobj).abs() / (1.0 + pobj.abs()),
        primal_cone_violation: pviol,
        dual_cone_violation: dviol,
    }
}
