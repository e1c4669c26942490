//! Iterative change of basis for LP/SOCP approximations of an SDP
//!
//! `min C·X  s.t.  A_i·X = b_i,  X ⪰ 0`.
//!
//! Inner steps replace `X ⪰ 0` by `X ∈ DD(U)` or `SDD(U)` and update `U` to
//! the Cholesky factor of the optimal `X`. Outer steps work on the dual,
//! `max bᵀy  s.t.  C − Σ y_i A_i ∈ DD(U)`, which bounds the SDP from below.

use serde::Serialize;
use thiserror::Error;

use crate::colgen::{self, AtomSet, ColGenError, MasterProblem, MasterSolution};
use crate::conic::{ProgramBuilder, SolveStatus};
use crate::gram::{ConeTag, GramTable};
use crate::linalg::{cholesky, LinalgError, Mat, SymMatrix};

/// Regularization used when factoring an iterate.
pub const CHOL_REG: f64 = 1e-9;
/// Sequences stop when the relative improvement drops below this.
pub const IMPROVEMENT_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum BasisError {
    #[error(transparent)]
    Master(#[from] ColGenError),
    #[error("linear algebra error: {0}")]
    Linalg(#[from] LinalgError),
    #[error("inconsistent data: {0}")]
    Data(String),
}

/// `min C·X  s.t.  A_i·X = b_i`.
#[derive(Debug, Clone, Serialize)]
pub struct SdpData {
    pub c: SymMatrix,
    pub a: Vec<SymMatrix>,
    pub b: Vec<f64>,
}

impl SdpData {
    pub fn new(c: SymMatrix, a: Vec<SymMatrix>, b: Vec<f64>) -> Result<Self, BasisError> {
        if a.len() != b.len() {
            return Err(BasisError::Data(format!("{} constraint matrices but {} right-hand sides", a.len(), b.len())));
        }
        if let Some(bad) = a.iter().find(|m| m.dim() != c.dim()) {
            return Err(BasisError::Data(format!("matrix of dimension {} but C has {}", bad.dim(), c.dim())));
        }
        Ok(SdpData { c, a, b })
    }

    pub fn dim(&self) -> usize {
        self.c.dim()
    }

    /// `C − Σ y_i A_i`
    pub fn slack(&self, y: &[f64]) -> SymMatrix {
        let mut s = self.c.clone();
        for (a, &yi) in self.a.iter().zip(y) {
            s = s.add(&a.scale(-yi));
        }
        s
    }

    /// Largest `|A_i·X − b_i|`.
    pub fn residual(&self, x: &SymMatrix) -> f64 {
        self.a.iter().zip(&self.b).map(|(a, &b)| (inner(a, x) - b).abs()).fold(0.0, f64::max)
    }
}

/// `A·B` (trace inner product)
pub fn inner(a: &SymMatrix, b: &SymMatrix) -> f64 {
    let n = a.dim();
    let mut s = 0.0;
    for i in 0..n {
        s += a.get(i, i) * b.get(i, i);
        for j in i + 1..n {
            s += 2.0 * a.get(i, j) * b.get(i, j);
        }
    }
    s
}

/// Atoms spanning `DD(U)` (`Uᵀv` for `v ∈ U_{n,2}`) or `SDD(U)` (pairs `Uᵀe_i, Uᵀe_j`).
pub fn basis_atoms(u: &Mat, tag: ConeTag) -> AtomSet {
    let n = u.rows;
    let base = match tag {
        ConeTag::DD => AtomSet::initial_lp(n),
        ConeTag::SDD => AtomSet::initial_socp(n),
    };
    let mut out = AtomSet::new();
    for v in &base.rank1 {
        out.add_rank1(u.tmatvec(v));
    }
    for (a, b) in &base.socp {
        out.add_pair(u.tmatvec(a), u.tmatvec(b));
    }
    out
}

/// `min C·X  s.t.  A_i·X = b_i` over the cone spanned by the atoms.
pub fn inner_master(data: &SdpData) -> MasterProblem {
    let mut pb = ProgramBuilder::new();
    for &b in &data.b {
        pb.add_row(b);
    }
    let table = GramTable::from_fn(data.dim(), |i, j| {
        let col = data.a.iter().enumerate().filter(|(_, a)| a.get(i, j) != 0.0).map(|(k, a)| (k, a.get(i, j))).collect();
        (col, data.c.get(i, j))
    });
    MasterProblem { base: pb, table, sense: 1.0 }
}

#[derive(Debug, Clone)]
pub struct InnerStep {
    pub x: SymMatrix,
    pub bound: f64,
}

pub fn inner_step(data: &SdpData, u: &Mat, tag: ConeTag) -> Result<InnerStep, BasisError> {
    let atoms = basis_atoms(u, tag);
    let sol = colgen::solve_master(&inner_master(data), &atoms)?;
    Ok(InnerStep { x: sol.gram(&atoms), bound: sol.bound })
}

/// Cholesky factor of an iterate, regularized.
pub fn update_basis(x: &SymMatrix) -> Result<Mat, BasisError> {
    Ok(cholesky(x, CHOL_REG)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct BasisSequence {
    pub bases: Vec<Mat>,
    pub bounds: Vec<f64>,
    pub cone_tag: ConeTag,
}

fn stalled(prev: f64, cur: f64) -> bool {
    (prev - cur).abs() <= IMPROVEMENT_FLOOR * (1.0 + prev.abs())
}

/// Inner sequence from `start` (or `I`); bounds are nonincreasing.
pub fn inner_sequence(data: &SdpData, tag: ConeTag, iters: usize, start: Option<Mat>) -> Result<BasisSequence, BasisError> {
    let mut u = start.unwrap_or_else(|| Mat::identity(data.dim()));
    let mut seq = BasisSequence { bases: vec![], bounds: vec![], cone_tag: tag };
    for k in 0..=iters {
        let step = inner_step(data, &u, tag)?;
        seq.bases.push(u);
        seq.bounds.push(step.bound);
        if k == iters || (k > 0 && stalled(seq.bounds[k - 1], step.bound)) {
            break;
        }
        u = update_basis(&step.x)?;
    }
    Ok(seq)
}

#[derive(Debug, Clone)]
pub struct PhaseOne {
    /// Basis from the first iterate with `α ≤ 0`, if any.
    pub basis: Option<Mat>,
    pub alphas: Vec<f64>,
}

/// Phase I: `min α  s.t.  A_i·X = b_i,  X + αI ∈ DD(U_k)`, with `α ≥ −1` to
/// keep the program bounded.
pub fn phase_one(a: &[SymMatrix], b: &[f64], tag: ConeTag, max_iters: usize) -> Result<PhaseOne, BasisError> {
    let n = a.first().map_or(0, |m| m.dim());
    if n == 0 {
        return Err(BasisError::Data("phase one needs at least one constraint".into()));
    }
    let data = SdpData::new(SymMatrix::zeros(n), a.to_vec(), b.to_vec())?;
    // Z = X + αI is the atom part; α = s − 1 with s ≥ 0
    let mut pb = ProgramBuilder::new();
    for (ai, &bi) in a.iter().zip(b) {
        pb.add_row(bi - ai.trace());
    }
    pb.add_nonneg((0..a.len()).map(|k| (k, -a[k].trace())).filter(|&(_, v)| v != 0.0).collect(), 1.0);
    let mut mp = inner_master(&data);
    mp.base = pb;
    let mut u = Mat::identity(n);
    let mut alphas = Vec::new();
    for _ in 0..max_iters.max(1) {
        let atoms = basis_atoms(&u, tag);
        let sol = match colgen::solve_master(&mp, &atoms) {
            Ok(s) => s,
            Err(ColGenError::Master(SolveStatus::PrimalInfeasible)) => return Ok(PhaseOne { basis: None, alphas }),
            Err(e) => return Err(e.into()),
        };
        let alpha = sol.solution.x[0] - 1.0;
        alphas.push(alpha);
        if alpha <= 0.0 {
            return Ok(PhaseOne { basis: Some(u), alphas });
        }
        u = update_basis(&sol.gram(&atoms))?;
    }
    Ok(PhaseOne { basis: None, alphas })
}

#[derive(Debug, Clone)]
pub struct OuterStep {
    /// `bᵀy`, a lower bound on the SDP value.
    pub bound: f64,
    pub y: Vec<f64>,
    /// `C − Σ y_i A_i`
    pub slack: SymMatrix,
    pub master: MasterSolution,
}

/// Solves `max bᵀy  s.t.  C − Σ y_i A_i ∈ DD(U)` (or `SDD(U)`), the dual of
/// the outer relaxation `min C·X, A_i·X = b_i, X ∈ DD(U)*`.
pub fn outer_step(data: &SdpData, u: &Mat, tag: ConeTag) -> Result<OuterStep, BasisError> {
    let mp = colgen::matrix_master(&data.c, &data.a, &data.b);
    let atoms = basis_atoms(u, tag);
    let master = colgen::solve_master(&mp, &atoms)?;
    let y = master.solution.x[..data.a.len()].to_vec();
    let slack = data.slack(&y);
    Ok(OuterStep { bound: master.bound, y, slack, master })
}

/// Outer sequence: bounds are nondecreasing lower bounds.
pub fn outer_sequence(data: &SdpData, tag: ConeTag, iters: usize) -> Result<BasisSequence, BasisError> {
    let mut u = Mat::identity(data.dim());
    let mut seq = BasisSequence { bases: vec![], bounds: vec![], cone_tag: tag };
    for k in 0..=iters {
        let step = outer_step(data, &u, tag)?;
        seq.bases.push(u);
        seq.bounds.push(step.bound);
        if k == iters || (k > 0 && stalled(seq.bounds[k - 1], step.bound)) {
            break;
        }
        u = update_basis(&step.slack)?;
    }
    Ok(seq)
}
