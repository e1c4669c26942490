//! Drivers: forms on the sphere, stable sets, partition, dc decompositions.

use serde::Serialize;
use thiserror::Error;

use crate::basispursuit::{self, BasisError, SdpData};
use crate::colgen::{self, ColGenError, ColGenOptions, IterLog, MasterProblem, Mode};
use crate::conic::{self, Cone, ProgramBuilder, SolveStatus};
use crate::gram::{
    add_gram_block, add_identity_column, basis, hessian_basis_for, BasisKind, ConeTag, GramCertificate,
    GramError, GramTable, ParitySpan, PolyRows,
};
use crate::linalg::{cholesky, LinalgError, Mat, SymMatrix};
use crate::poly::{monomials_of_degree, Monomial, PolyError, Polynomial};

#[derive(Debug, Error)]
pub enum AppError {
    #[error(transparent)]
    ColGen(#[from] ColGenError),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Gram(#[from] GramError),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("solver finished with status {0:?}")]
    Solver(SolveStatus),
    #[error("invalid input: {0}")]
    Input(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct GraphInstance {
    pub n: usize,
    pub adjacency: SymMatrix,
}

impl GraphInstance {
    /// Duplicate edges are merged; self-loops are ignored.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut adjacency = SymMatrix::zeros(n);
        for &(i, j) in edges {
            if i != j {
                adjacency.set(i, j, 1.0);
            }
        }
        GraphInstance { n, adjacency }
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i != j && self.adjacency.get(i, j) != 0.0
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.has_edge(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn degree(&self, i: usize) -> usize {
        (0..self.n).filter(|&j| self.has_edge(i, j)).count()
    }

    pub fn min_degree(&self) -> usize {
        (0..self.n).map(|i| self.degree(i)).min().unwrap_or(0)
    }

    pub fn complement(&self) -> GraphInstance {
        let mut edges = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if !self.has_edge(i, j) {
                    edges.push((i, j));
                }
            }
        }
        GraphInstance::new(self.n, &edges)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundRun {
    pub bounds: Vec<f64>,
    pub log: Vec<IterLog>,
}

pub fn mode_for(tag: ConeTag) -> Mode {
    match tag {
        ConeTag::DD => Mode::LpEigen,
        ConeTag::SDD => Mode::SocpEigen,
    }
}

/// Lower bounds on the minimum of the form `p` over the unit sphere:
/// `max λ  s.t.  p − λ (Σ x_i²)^d` is a combination of atoms.
pub fn sphere_min(p: &Polynomial, mode: Mode, iters: usize) -> Result<BoundRun, AppError> {
    sphere_min_with(p, &ColGenOptions { mode, iters, ..Default::default() })
}

/// As [`sphere_min`] with explicit pricing options.
pub fn sphere_min_with(p: &Polynomial, opts: &ColGenOptions) -> Result<BoundRun, AppError> {
    let deg = p.degree();
    if !p.is_homogeneous() || deg % 2 == 1 {
        return Err(AppError::Input("sphere minimization needs a form of even degree".into()));
    }
    let n = p.nvars();
    let half = deg / 2;
    let mut pb = ProgramBuilder::new();
    let mut rows = PolyRows::new();
    rows.add_rhs(&mut pb, 0, p, 1.0);
    let radial = Polynomial::sum_of_squares(n).pow(half);
    let col = rows.column(&mut pb, 0, &radial, 1.0);
    pb.add_free(col, -1.0);
    let b = monomials_of_degree(n, half);
    let table = rows.table(&mut pb, 0, &b);
    let mp = MasterProblem { base: pb, table, sense: -1.0 };
    let state = colgen::run(&mp, opts)?;
    Ok(BoundRun { bounds: state.bounds, log: state.log })
}

/// Master of `min λ  s.t.  λ(I + A) − J − N = Σ atoms, N ≥ 0`, with one row
/// per entry measuring the coefficient of `x_i x_j` in `xᵀ M x`.
pub fn copositive_master(g: &GraphInstance) -> MasterProblem {
    let n = g.n;
    let mut pb = ProgramBuilder::new();
    let mut row = vec![vec![0usize; n]; n];
    for i in 0..n {
        for j in i..n {
            let mult = if i == j { 1.0 } else { 2.0 };
            row[i][j] = pb.add_row(-mult);
        }
    }
    let mut lambda = Vec::new();
    for i in 0..n {
        lambda.push((row[i][i], -1.0));
        for j in i + 1..n {
            if g.has_edge(i, j) {
                lambda.push((row[i][j], -2.0));
            }
        }
    }
    lambda.sort_by_key(|e| e.0);
    pb.add_free(lambda, 1.0);
    for i in 0..n {
        for j in i..n {
            pb.add_nonneg(vec![(row[i][j], 1.0)], 0.0);
        }
    }
    let table = GramTable::from_fn(n, |i, j| (vec![(row[i][j], 1.0)], 0.0));
    MasterProblem { base: pb, table, sense: 1.0 }
}

/// Upper bounds on the stability number from the copositive formulation,
/// tightened by eigenvector cuts.
pub fn stable_set_copositive(g: &GraphInstance, tag: ConeTag, iters: usize) -> Result<BoundRun, AppError> {
    stable_set_copositive_with(g, &ColGenOptions { mode: mode_for(tag), iters, ..Default::default() })
}

/// As [`stable_set_copositive`] with explicit pricing options.
pub fn stable_set_copositive_with(g: &GraphInstance, opts: &ColGenOptions) -> Result<BoundRun, AppError> {
    let state = colgen::run(&copositive_master(g), opts)?;
    Ok(BoundRun { bounds: state.bounds, log: state.log })
}

/// `min λ  s.t.  (x∘x)ᵀ(λ(I + A) − J)(x∘x) · (Σ x_i²)^r` is dsos/sdsos.
pub fn stable_set_rdsos(g: &GraphInstance, r: u32, tag: ConeTag) -> Result<f64, AppError> {
    let n = g.n;
    let sq = |i: usize| {
        let mut e = vec![0u32; n];
        e[i] = 2;
        Monomial(e)
    };
    let quartic = |m: &dyn Fn(usize, usize) -> f64| {
        let mut terms = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let v = m(i, j);
                if v != 0.0 {
                    terms.push((sq(i).mul(&sq(j)), v));
                }
            }
        }
        Polynomial::from_terms(n, terms)
    };
    let mult = Polynomial::sum_of_squares(n).pow(r);
    let p_lambda = quartic(&|i, j| if i == j || g.has_edge(i, j) { 1.0 } else { 0.0 }).try_mul(&mult)?;
    let p_ones = quartic(&|_, _| 1.0).try_mul(&mult)?;

    let mut pb = ProgramBuilder::new();
    let mut rows = PolyRows::new();
    rows.add_rhs(&mut pb, 0, &p_ones, -1.0);
    let col = rows.column(&mut pb, 0, &p_lambda, -1.0);
    pb.add_free(col, 1.0);
    let b = basis(n, 2 + r, BasisKind::ExactDegree(2 + r));
    let table = rows.table(&mut pb, 0, &b.entries);
    let span = ParitySpan::new([&p_lambda, &p_ones]);
    let parity: Vec<u64> = b.entries.iter().map(|m| m.parity()).collect();
    add_gram_block(&mut pb, &table, None, tag, &|i, j| span.contains(parity[i] ^ parity[j]))?;
    let sol = conic::solve(&pb.build());
    if !sol.is_optimal() {
        return Err(AppError::Solver(sol.status));
    }
    Ok(sol.primal_objective)
}

/// The Lovász program `min −J·X  s.t.  I·X = 1,  X_ij = 0` on edges.
pub fn lovasz_sdp(g: &GraphInstance) -> SdpData {
    let n = g.n;
    let mut a = vec![SymMatrix::identity(n)];
    let mut b = vec![1.0];
    for (i, j) in g.edges() {
        let mut e = SymMatrix::zeros(n);
        e.set(i, j, 0.5);
        a.push(e);
        b.push(0.0);
    }
    SdpData { c: SymMatrix::from_fn(n, |_, _| -1.0), a, b }
}

/// Upper bounds on the stability number from the outer (dual) basis sequence.
pub fn stable_set_outer(g: &GraphInstance, tag: ConeTag, iters: usize) -> Result<Vec<f64>, AppError> {
    let seq = basispursuit::outer_sequence(&lovasz_sdp(g), tag, iters)?;
    Ok(seq.bounds.iter().map(|b| -b).collect())
}

/// `Σ (x_i² − 1)² + (Σ a_i x_i)²`
pub fn partition_polynomial(a: &[u64]) -> Polynomial {
    let n = a.len();
    let mut p = Polynomial::zero(n);
    for i in 0..n {
        let xi = Polynomial::var(n, i);
        let t = &(&xi * &xi) - &Polynomial::constant(n, 1.0);
        p = &p + &(&t * &t);
    }
    let lin = Polynomial::from_terms(n, a.iter().enumerate().map(|(i, &v)| (Monomial::var(n, i), v as f64)));
    &p + &(&lin * &lin)
}

/// Homogenized partition form with `ε = 0`, and `h = (Σ x_i² / n)²`.
pub fn partition_forms(a: &[u64]) -> (Polynomial, Polynomial) {
    let n = a.len();
    let nf = n as f64;
    let s = Polynomial::sum_of_squares(n).scale(1.0 / nf);
    let quartic: Polynomial = Polynomial::from_terms(n, (0..n).map(|i| {
        let mut e = vec![0u32; n];
        e[i] = 4;
        (Monomial(e), 1.0)
    }));
    let lin = Polynomial::from_terms(n, a.iter().enumerate().map(|(i, &v)| (Monomial::var(n, i), v as f64)));
    let quad = &(&lin * &lin) - &Polynomial::sum_of_squares(n).scale(2.0);
    let h = &s * &s;
    let ph = &(&quartic + &(&quad * &s)) + &h.scale(nf);
    (ph, h)
}

#[derive(Debug, Clone, Serialize)]
pub struct PartitionRun {
    pub eps: Vec<f64>,
    pub refuted: bool,
    /// Gram certificate of the last iterate, `q^h_{a,ε} = zᵀ Uᵀ Q U z`.
    pub certificate: Option<GramCertificate>,
}

/// Threshold above which an `ε` counts as a refutation.
pub const REFUTE_TOL: f64 = 1e-7;

/// Maximizes `ε` with `q^h_{a,ε}` in the dsos/sdsos cone of basis `U_k`,
/// updating `U_{k+1} = chol(Gram_k)`.
pub fn partition_refute(a: &[u64], tag: ConeTag, iters: usize) -> Result<PartitionRun, AppError> {
    if a.is_empty() || a.contains(&0) {
        return Err(AppError::Input("partition entries must be positive".into()));
    }
    let n = a.len();
    let (ph, h) = partition_forms(a);
    let b = basis(n, 2, BasisKind::ExactDegree(2));
    let span = ParitySpan::new([&ph, &h]);
    let parity: Vec<u64> = b.entries.iter().map(|m| m.parity()).collect();
    let mut u: Option<Mat> = None;
    let mut eps = Vec::new();
    let mut certificate = None;
    for _ in 0..=iters {
        let mut pb = ProgramBuilder::new();
        let mut rows = PolyRows::new();
        rows.add_rhs(&mut pb, 0, &ph, 1.0);
        let col = rows.column(&mut pb, 0, &h, 1.0);
        let e = pb.add_free(col, -1.0);
        let table = rows.table(&mut pb, 0, &b.entries);
        let allowed = |i: usize, j: usize| u.is_some() || span.contains(parity[i] ^ parity[j]);
        let block = add_gram_block(&mut pb, &table, u.as_ref(), tag, &allowed)?;
        let sol = conic::solve(&pb.build());
        if !sol.is_optimal() {
            return Err(AppError::Solver(sol.status));
        }
        eps.push(sol.x[e]);
        let q = block.extract(&sol.x);
        let basis_u = u.clone().unwrap_or_else(|| Mat::identity(b.len()));
        let gram = q.congruence(&basis_u);
        certificate = Some(GramCertificate { basis: b.clone(), u: basis_u, q, cone_tag: tag });
        u = Some(cholesky(&gram, basispursuit::CHOL_REG)?);
    }
    let refuted = eps.iter().any(|&e| e > REFUTE_TOL);
    Ok(PartitionRun { eps, refuted, certificate })
}

/// Largest margin `t ≤ 1` such that `p_a − ε = zᵀQz` with `Q − tI` dsos/sdsos
/// for some `ε`; the non-homogeneous program is feasible iff the margin is
/// nonnegative.
pub fn partition_nonhomogeneous_margin(a: &[u64], tag: ConeTag) -> Result<f64, AppError> {
    let p = partition_polynomial(a);
    let n = a.len();
    let b = basis(n, 2, BasisKind::UpToDegree(2));
    let mut pb = ProgramBuilder::new();
    let mut rows = PolyRows::new();
    rows.add_rhs(&mut pb, 0, &p, 1.0);
    let eps_col = rows.column(&mut pb, 0, &Polynomial::constant(n, 1.0), 1.0);
    pb.add_free(eps_col, 0.0);
    let table = rows.table(&mut pb, 0, &b.entries);
    add_gram_block(&mut pb, &table, None, tag, &|_, _| true)?;
    let t = add_identity_column(&mut pb, &table, None, -1.0);
    let cap = pb.add_row(1.0);
    let mut prog = pb.build();
    prog.cols[t].push((cap, 1.0));
    prog.cols.push(vec![(cap, 1.0)]);
    prog.c.push(0.0);
    prog.cones.push(Cone::NonNeg(1));
    let sol = conic::solve(&prog);
    match sol.status {
        SolveStatus::Optimal => Ok(sol.x[t]),
        // raising the constant shift never hurts, so the primal optimal set is
        // unbounded and the iterations may crawl; an accurate dual point still
        // bounds the margin from above
        SolveStatus::Stalled if sol.dual_residual <= 1e-8 => Ok(-sol.dual_objective),
        other => Err(AppError::Solver(other)),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DcdResult {
    pub g: Polynomial,
    pub h: Polynomial,
    pub g_certificate: GramCertificate,
    pub h_certificate: GramCertificate,
    pub objective: f64,
}

/// `f = g − h` with `g`, `h` dsos/sdsos-convex, minimizing the sphere average
/// of `Tr H_g`.
pub fn dcd(f: &Polynomial, tag: ConeTag) -> Result<DcdResult, AppError> {
    let deg = f.degree();
    if deg % 2 == 1 {
        return Err(AppError::Input(format!("degree {deg} is odd")));
    }
    let n = f.nvars();
    let hb = hessian_basis_for(f)?;
    let g_monomials: Vec<Monomial> = if f.is_homogeneous() {
        monomials_of_degree(n, deg)
    } else {
        (2..=deg).flat_map(|d| monomials_of_degree(n, d)).collect()
    };
    let mut pb = ProgramBuilder::new();
    let mut rows = PolyRows::new();
    // group 0: H_g = Gram_0;  group 1: H_g − H_f = Gram_1
    rows.add_rhs(&mut pb, 1, &f.hessian_biform(), -1.0);
    let mut g_vars = Vec::with_capacity(g_monomials.len());
    for m in &g_monomials {
        let mono = Polynomial::from_terms(n, [(m.clone(), 1.0)]);
        let hm = mono.hessian_biform();
        let mut col = rows.column(&mut pb, 0, &hm, -1.0);
        col.extend(rows.column(&mut pb, 1, &hm, -1.0));
        col.sort_by_key(|e| e.0);
        g_vars.push(pb.add_free(col, mono.sphere_integral_tr_hessian()));
    }
    let t0 = rows.table(&mut pb, 0, &hb.entries);
    let t1 = rows.table(&mut pb, 1, &hb.entries);
    let b0 = add_gram_block(&mut pb, &t0, None, tag, &|_, _| true)?;
    let b1 = add_gram_block(&mut pb, &t1, None, tag, &|_, _| true)?;
    let sol = conic::solve(&pb.build());
    if !sol.is_optimal() {
        return Err(AppError::Solver(sol.status));
    }
    let g = Polynomial::from_terms(n, g_monomials.iter().cloned().zip(g_vars.iter().map(|&v| sol.x[v])));
    let h = g.try_sub(f)?;
    let cert = |q: SymMatrix| GramCertificate { basis: hb.clone(), u: Mat::identity(hb.len()), q, cone_tag: tag };
    Ok(DcdResult {
        objective: g.sphere_integral_tr_hessian(),
        g,
        h,
        g_certificate: cert(b0.extract(&sol.x)),
        h_certificate: cert(b1.extract(&sol.x)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_bound_of_radial_power() {
        let p = Polynomial::sum_of_squares(2).pow(2);
        let run = sphere_min(&p, Mode::LpEigen, 0).unwrap();
        assert!((run.bounds[0] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn partition_forms_match_definition() {
        let a = [1, 2, 3];
        let (ph, h) = partition_forms(&a);
        // at a point with ‖x‖² = n the form equals the partition polynomial
        let x = [1.0, -1.2, (3.0f64 - 1.0 - 1.44).sqrt()];
        let p = partition_polynomial(&a);
        assert!((ph.eval(&x).unwrap() - p.eval(&x).unwrap()).abs() < 1e-9);
        assert!((h.eval(&x).unwrap() - 1.0).abs() < 1e-12);
    }
}
