//! Column generation over structured subsets of the psd cone.
//!
//! The master problem is a conic program whose Gram-type part is a conic
//! combination of atoms: rank-one matrices `u uᵀ` (LP) or `V Λ Vᵀ` with a psd
//! `2×2` block `Λ` (SOCP). New atoms are priced from the dual matrix.

use std::collections::{BTreeMap, HashSet};
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::conic::{self, ProgramBuilder, SolveStatus, SparseCol};
use crate::gram::{sparse, GramTable};
use crate::linalg::{eig_sym, norm2, LinalgError, SymMatrix};

/// Reduced costs above this are not considered violated.
pub const VIOLATION_TOL: f64 = -1e-9;

#[derive(Debug, Error)]
pub enum ColGenError {
    #[error("master problem finished with status {0:?}")]
    Master(SolveStatus),
    #[error("linear algebra error: {0}")]
    Linalg(#[from] LinalgError),
    #[error("invalid parameters: {0}")]
    Params(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mode {
    LpEigen,
    LpTriples,
    SocpEigen,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lp-eigen" => Ok(Mode::LpEigen),
            "lp-triples" => Ok(Mode::LpTriples),
            "socp-eigen" => Ok(Mode::SocpEigen),
            other => Err(format!("unknown mode '{other}'")),
        }
    }
}

/// First nonzero entry made positive, entries rounded for hashing.
fn canonical_key(u: &[f64]) -> Vec<i64> {
    let sign = u.iter().find(|v| v.abs() > 1e-12).map_or(1.0, |v| v.signum());
    let scale = u.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    u.iter().map(|v| (sign * v / scale * 1e9).round() as i64).collect()
}

#[derive(Debug, Clone, Default)]
pub struct AtomSet {
    pub rank1: Vec<Vec<f64>>,
    pub socp: Vec<(Vec<f64>, Vec<f64>)>,
    keys: HashSet<Vec<i64>>,
}

impl AtomSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// `U_{n,2}`: `e_i` and `e_i ± e_j`.
    pub fn initial_lp(n: usize) -> Self {
        let mut s = AtomSet::new();
        for i in 0..n {
            let mut u = vec![0.0; n];
            u[i] = 1.0;
            s.add_rank1(u);
        }
        for i in 0..n {
            for j in i + 1..n {
                for sign in [1.0, -1.0] {
                    let mut u = vec![0.0; n];
                    u[i] = 1.0;
                    u[j] = sign;
                    s.add_rank1(u);
                }
            }
        }
        s
    }

    /// `V_{n,2}`: pairs `(e_j, e_k)`, `j < k`.
    pub fn initial_socp(n: usize) -> Self {
        let mut s = AtomSet::new();
        for j in 0..n {
            for k in j + 1..n {
                let mut a = vec![0.0; n];
                let mut b = vec![0.0; n];
                a[j] = 1.0;
                b[k] = 1.0;
                s.add_pair(a, b);
            }
        }
        if n == 1 {
            s.add_rank1(vec![1.0]);
        }
        s
    }

    /// Adds `u uᵀ` unless an equal atom (up to sign) is present.
    pub fn add_rank1(&mut self, u: Vec<f64>) -> bool {
        let mut key = canonical_key(&u);
        key.push(1);
        if self.keys.insert(key) {
            self.rank1.push(u);
            true
        } else {
            false
        }
    }

    pub fn add_pair(&mut self, a: Vec<f64>, b: Vec<f64>) -> bool {
        let mut key = canonical_key(&a);
        key.push(2);
        key.extend(canonical_key(&b));
        if self.keys.insert(key) {
            self.socp.push((a, b));
            true
        } else {
            false
        }
    }

    pub fn len(&self) -> usize {
        self.rank1.len() + self.socp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// New atoms produced by pricing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Priced {
    pub rank1: Vec<Vec<f64>>,
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Priced {
    pub fn is_empty(&self) -> bool {
        self.rank1.is_empty() && self.pairs.is_empty()
    }
}

/// A master problem: fixed rows and extra columns in `base`, plus the Gram
/// table through which atoms enter. The reported bound is `sense · cᵀx`.
#[derive(Debug, Clone)]
pub struct MasterProblem {
    pub base: ProgramBuilder,
    pub table: GramTable,
    pub sense: f64,
}

#[derive(Debug, Clone)]
pub struct MasterSolution {
    pub bound: f64,
    pub solution: conic::ConicSolution,
    /// `X_ij = cost_ij − ⟨unit_ij, y⟩`; the reduced cost of `u uᵀ` is `uᵀ X u`.
    pub dual: SymMatrix,
    pub rank1_weights: Vec<f64>,
    /// `(a, b, c)` of each `Λ = [[a, c], [c, b]]`.
    pub blocks: Vec<[f64; 3]>,
    /// Index of the first atom variable. Atom columns use unit-length atoms.
    pub atom_offset: usize,
}

impl MasterSolution {
    /// `Σ α u uᵀ + Σ V Λ Vᵀ`
    pub fn gram(&self, atoms: &AtomSet) -> SymMatrix {
        let n = self.dual.dim();
        let mut q = SymMatrix::zeros(n);
        for (u, &w) in atoms.rank1.iter().zip(&self.rank1_weights) {
            for i in 0..n {
                for j in i..n {
                    q.add_to(i, j, w * u[i] * u[j]);
                }
            }
        }
        for ((a, b), l) in atoms.socp.iter().zip(&self.blocks) {
            for i in 0..n {
                for j in i..n {
                    q.add_to(i, j, l[0] * a[i] * a[j] + l[1] * b[i] * b[j] + l[2] * (a[i] * b[j] + b[i] * a[j]));
                }
            }
        }
        q
    }
}

fn scaled(col: &SparseCol, s: f64) -> impl Iterator<Item = (usize, f64)> + '_ {
    col.iter().map(move |&(r, v)| (r, s * v))
}

fn combine(parts: &[(&SparseCol, f64)]) -> SparseCol {
    let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
    for (col, s) in parts {
        for (r, v) in scaled(col, *s) {
            *acc.entry(r).or_insert(0.0) += v;
        }
    }
    acc.into_iter().filter(|(_, v)| v.abs() > 1e-15).collect()
}

/// Dual matrix of a master solution.
pub fn dual_matrix(table: &GramTable, y: &[f64]) -> SymMatrix {
    let n = table.dim();
    let mut x = SymMatrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            let (col, cost) = table.unit_half(i, j);
            x.set(i, j, cost - col.iter().map(|&(r, v)| v * y[r]).sum::<f64>());
        }
    }
    x
}

pub fn solve_master(mp: &MasterProblem, atoms: &AtomSet) -> Result<MasterSolution, ColGenError> {
    // columns are built from unit vectors; positive rescaling maps each cone
    // onto itself, and the weights are mapped back below
    let unit = |u: &[f64]| {
        let nu = norm2(u);
        let s = if nu > 0.0 { 1.0 / nu } else { 1.0 };
        (u.iter().map(|v| v * s).collect::<Vec<f64>>(), s)
    };
    let mut pb = mp.base.clone();
    let atom_offset = pb.nvars();
    let mut rank1_scale = Vec::with_capacity(atoms.rank1.len());
    for u in &atoms.rank1 {
        let (uh, s) = unit(u);
        let (col, cost) = mp.table.image_outer(&sparse(&uh));
        pb.add_nonneg(col, cost);
        rank1_scale.push(s);
    }
    let mut soc_first = Vec::with_capacity(atoms.socp.len());
    for (a, b) in &atoms.socp {
        let ((ah, ka), (bh, kb)) = (unit(a), unit(b));
        let (sa, sb) = (sparse(&ah), sparse(&bh));
        let (ca, costa) = mp.table.image_outer(&sa);
        let (cb, costb) = mp.table.image_outer(&sb);
        let (cab, costab) = mp.table.image_sym(&sa, &sb);
        let t = combine(&[(&ca, 0.5), (&cb, 0.5)]);
        let u1 = combine(&[(&ca, 0.5), (&cb, -0.5)]);
        let first = pb.add_soc(vec![t, u1, cab], vec![0.5 * (costa + costb), 0.5 * (costa - costb), costab]);
        soc_first.push((first, ka, kb));
    }
    let prog = pb.build();
    let sol = conic::solve(&prog);
    if sol.status != SolveStatus::Optimal {
        return Err(ColGenError::Master(sol.status));
    }
    let dual = dual_matrix(&mp.table, &sol.y);
    let rank1_weights =
        sol.x[atom_offset..atom_offset + atoms.rank1.len()].iter().zip(&rank1_scale).map(|(w, s)| w * s * s).collect();
    let blocks = soc_first
        .iter()
        .map(|&(f, sa, sb)| {
            let (t, u1, u2) = (sol.x[f], sol.x[f + 1], sol.x[f + 2]);
            [(t + u1) / 2.0 * sa * sa, (t - u1) / 2.0 * sb * sb, u2 / 2.0 * sa * sb]
        })
        .collect();
    Ok(MasterSolution { bound: mp.sense * sol.primal_objective, solution: sol, dual, rank1_weights, blocks, atom_offset })
}

/// Eigenvectors of `X` with eigenvalue below `-1e-9`, most negative first.
/// In SOCP mode consecutive eigenvectors are paired; a leftover single one
/// becomes a rank-one atom.
pub fn price_eigen(x: &SymMatrix, how_many: usize, socp: bool) -> Result<Priced, ColGenError> {
    let e = eig_sym(x)?;
    let neg: Vec<Vec<f64>> = (0..x.dim()).filter(|&k| e.values[k] < VIOLATION_TOL).map(|k| e.vector(k)).collect();
    let mut out = Priced::default();
    if !socp {
        out.rank1 = neg.into_iter().take(how_many).collect();
        return Ok(out);
    }
    let mut it = neg.into_iter();
    while out.pairs.len() + out.rank1.len() < how_many {
        match (it.next(), it.next()) {
            (Some(a), Some(b)) => out.pairs.push((a, b)),
            (Some(a), None) => {
                out.rank1.push(a);
                break;
            }
            _ => break,
        }
    }
    Ok(out)
}

/// One vector of `U_{n,3}`: a support of one to three indices and signs for
/// all but the first entry (which is `+1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple {
    pub support: [usize; 3],
    pub len: usize,
    pub signs: u8,
}

impl Triple {
    pub fn entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.len).map(move |k| {
            let s = if k > 0 && (self.signs >> (k - 1)) & 1 == 1 { -1.0 } else { 1.0 };
            (self.support[k], s)
        })
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        for (i, s) in self.entries() {
            v[i] = s;
        }
        v
    }

    pub fn quad(&self, b: &SymMatrix) -> f64 {
        let e: Vec<(usize, f64)> = self.entries().collect();
        let mut s = 0.0;
        for &(i, si) in &e {
            for &(j, sj) in &e {
                s += si * sj * b.get(i, j);
            }
        }
        s
    }
}

/// `U_{n,3}` in scan order: support size, then support lexicographically, then sign pattern.
pub fn triples(n: usize) -> Vec<Triple> {
    let mut out = Vec::new();
    for i in 0..n {
        out.push(Triple { support: [i, 0, 0], len: 1, signs: 0 });
    }
    for i in 0..n {
        for j in i + 1..n {
            for s in 0..2 {
                out.push(Triple { support: [i, j, 0], len: 2, signs: s });
            }
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                for s in 0..4 {
                    out.push(Triple { support: [i, j, k], len: 3, signs: s });
                }
            }
        }
    }
    out
}

/// Scans `all` from `cursor` (wrapping) for violated vectors, stopping after
/// `t1` hits; returns the `t2` most violated (ties by scan position) and the
/// position after the last scanned vector.
pub fn price_triples(b: &SymMatrix, all: &[Triple], cursor: usize, t1: usize, t2: usize) -> (Vec<Triple>, usize) {
    assert!(t1 >= t2 && t2 >= 1, "need t1 >= t2 >= 1");
    let total = all.len();
    if total == 0 {
        return (vec![], 0);
    }
    let mut hits: Vec<(f64, usize)> = Vec::new();
    let mut pos = cursor % total;
    for _ in 0..total {
        let v = all[pos].quad(b);
        let idx = pos;
        pos = (pos + 1) % total;
        if v < VIOLATION_TOL {
            hits.push((v, idx));
            if hits.len() >= t1 {
                break;
            }
        }
    }
    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    (hits.into_iter().take(t2).map(|(_, i)| all[i]).collect(), pos)
}

#[derive(Debug, Clone, Copy)]
pub struct ColGenOptions {
    pub mode: Mode,
    pub iters: usize,
    /// Eigen-pricing atoms per iteration.
    pub per_iter: usize,
    pub t1: usize,
    pub t2: usize,
}

impl Default for ColGenOptions {
    fn default() -> Self {
        ColGenOptions { mode: Mode::LpEigen, iters: 10, per_iter: 1, t1: 300_000, t2: 5000 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IterLog {
    pub iter: usize,
    pub bound: f64,
    pub atoms_added: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct ColGenState {
    pub atoms: AtomSet,
    pub bounds: Vec<f64>,
    pub dual: SymMatrix,
    pub triples_cursor: usize,
    pub log: Vec<IterLog>,
    pub last: MasterSolution,
}

/// Runs column generation from the mode's initial atoms.
pub fn run(mp: &MasterProblem, opts: &ColGenOptions) -> Result<ColGenState, ColGenError> {
    let n = mp.table.dim();
    let atoms = match opts.mode {
        Mode::SocpEigen => AtomSet::initial_socp(n),
        _ => AtomSet::initial_lp(n),
    };
    run_from(mp, atoms, opts)
}

pub fn run_from(mp: &MasterProblem, mut atoms: AtomSet, opts: &ColGenOptions) -> Result<ColGenState, ColGenError> {
    if opts.mode == Mode::LpTriples && !(opts.t1 >= opts.t2 && opts.t2 >= 1) {
        return Err(ColGenError::Params("need t1 >= t2 >= 1".into()));
    }
    let n = mp.table.dim();
    let all_triples = if opts.mode == Mode::LpTriples { triples(n) } else { vec![] };
    let mut cursor = 0;
    let mut bounds = Vec::new();
    let mut log = Vec::new();
    let mut iter = 0;
    loop {
        let start = Instant::now();
        let sol = solve_master(mp, &atoms)?;
        bounds.push(sol.bound);
        let mut added = 0;
        if iter < opts.iters {
            match opts.mode {
                Mode::LpEigen | Mode::SocpEigen => {
                    let priced = price_eigen(&sol.dual, opts.per_iter, opts.mode == Mode::SocpEigen)?;
                    for u in priced.rank1 {
                        added += atoms.add_rank1(u) as usize;
                    }
                    for (a, b) in priced.pairs {
                        added += atoms.add_pair(a, b) as usize;
                    }
                }
                Mode::LpTriples => {
                    let (found, next) = price_triples(&sol.dual, &all_triples, cursor, opts.t1, opts.t2);
                    cursor = next;
                    for t in found {
                        added += atoms.add_rank1(t.to_dense(n)) as usize;
                    }
                }
            }
        }
        log.push(IterLog { iter, bound: sol.bound, atoms_added: added, wall_ms: start.elapsed().as_secs_f64() * 1e3 });
        if iter >= opts.iters || added == 0 {
            return Ok(ColGenState { atoms, bounds, dual: sol.dual.clone(), triples_cursor: cursor, log, last: sol });
        }
        iter += 1;
    }
}

/// Master for `max bᵀy  s.t.  C − Σ y_i A_i = Σ atoms`, the matrix form.
pub fn matrix_master(c: &SymMatrix, a: &[SymMatrix], b: &[f64]) -> MasterProblem {
    let n = c.dim();
    let mut pb = ProgramBuilder::new();
    // one row per entry (i ≤ j), measuring the coefficient of x_i x_j in xᵀMx
    let mut row = vec![vec![0usize; n]; n];
    for i in 0..n {
        for j in i..n {
            let mult = if i == j { 1.0 } else { 2.0 };
            row[i][j] = pb.add_row(mult * c.get(i, j));
        }
    }
    for (ak, &bk) in a.iter().zip(b) {
        let mut col = Vec::new();
        for i in 0..n {
            for j in i..n {
                let mult = if i == j { 1.0 } else { 2.0 };
                let v = ak.get(i, j);
                if v != 0.0 {
                    col.push((row[i][j], mult * v));
                }
            }
        }
        pb.add_free(col, -bk);
    }
    let table = GramTable::from_fn(n, |i, j| (vec![(row[i][j], 1.0)], 0.0));
    MasterProblem { base: pb, table, sense: -1.0 }
}
