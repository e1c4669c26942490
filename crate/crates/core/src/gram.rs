//! Gram-matrix modeling: monomial bases, coefficient matching and
//! DD/SDD membership programs for polynomials.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::{self, ProgramBuilder, SolveStatus, SparseCol};
use crate::linalg::{is_dd, is_sdd, LinalgError, Mat, SymMatrix, DD_TOL};
use crate::poly::{binomial, monomials_of_degree, monomials_up_to_degree, Monomial, PolyError, Polynomial};

/// Reconstruction tolerance of certificates, relative to `1 + max|coeff|`.
pub const RECONSTRUCTION_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum GramError {
    #[error("polynomial error: {0}")]
    Poly(#[from] PolyError),
    #[error("linear algebra error: {0}")]
    Linalg(#[from] LinalgError),
    #[error("solver finished with status {0:?}")]
    Solver(SolveStatus),
    #[error("basis change has shape {rows}x{cols}, expected {dim}x{dim}")]
    Dimension { rows: usize, cols: usize, dim: usize },
    #[error("odd degree {0}")]
    OddDegree(u32),
    #[error("{0}")]
    Construction(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConeTag {
    DD,
    SDD,
}

impl std::str::FromStr for ConeTag {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dsos" | "dd" => Ok(ConeTag::DD),
            "sdsos" | "sdd" => Ok(ConeTag::SDD),
            other => Err(format!("unknown cone '{other}' (expected dsos or sdsos)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisKind {
    ExactDegree(u32),
    UpToDegree(u32),
    /// `y · z(x, d-1)` for Hessian biforms of degree-`2d` forms.
    HessianBasis(u32),
    /// `y · z̃(x, d-1)`, the non-homogeneous counterpart.
    HessianUpTo(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonomialBasis {
    pub nvars: usize,
    pub kind: BasisKind,
    pub entries: Vec<Monomial>,
}

impl MonomialBasis {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of variables of the polynomials built on this basis.
    pub fn poly_nvars(&self) -> usize {
        match self.kind {
            BasisKind::HessianBasis(_) | BasisKind::HessianUpTo(_) => 2 * self.nvars,
            _ => self.nvars,
        }
    }
}

/// Monomial basis in `n` variables. Hessian kinds live in `2n` variables `(x, y)`.
pub fn basis(n: usize, d: u32, kind: BasisKind) -> MonomialBasis {
    let entries = match kind {
        BasisKind::ExactDegree(_) => monomials_of_degree(n, d),
        BasisKind::UpToDegree(_) => monomials_up_to_degree(n, d),
        BasisKind::HessianBasis(_) | BasisKind::HessianUpTo(_) => {
            let xs = if d == 0 {
                vec![]
            } else if matches!(kind, BasisKind::HessianBasis(_)) {
                monomials_of_degree(n, d - 1)
            } else {
                monomials_up_to_degree(n, d - 1)
            };
            let mut out = Vec::with_capacity(n * xs.len());
            for m in &xs {
                for i in 0..n {
                    let mut e = m.0.clone();
                    e.extend(std::iter::repeat(0).take(n));
                    e[n + i] = 1;
                    out.push(Monomial(e));
                }
            }
            out.sort();
            out
        }
    };
    let kind = match kind {
        BasisKind::ExactDegree(_) => BasisKind::ExactDegree(d),
        BasisKind::UpToDegree(_) => BasisKind::UpToDegree(d),
        BasisKind::HessianBasis(_) => BasisKind::HessianBasis(d),
        BasisKind::HessianUpTo(_) => BasisKind::HessianUpTo(d),
    };
    MonomialBasis { nvars: n, kind, entries }
}

/// Expected basis size, from counting formulas.
pub fn basis_size(n: usize, d: u32, kind: BasisKind) -> usize {
    let n32 = n as u32;
    let v = match kind {
        BasisKind::ExactDegree(_) => binomial(n32 + d - 1, d),
        BasisKind::UpToDegree(_) => binomial(n32 + d, d),
        BasisKind::HessianBasis(_) if d == 0 => 0.0,
        BasisKind::HessianBasis(_) => n as f64 * binomial(n32 + d - 2, d - 1),
        BasisKind::HessianUpTo(_) if d == 0 => 0.0,
        BasisKind::HessianUpTo(_) => n as f64 * binomial(n32 + d - 1, d - 1),
    };
    v.round() as usize
}

fn merge(acc: &mut BTreeMap<usize, f64>, col: &SparseCol, scale: f64) {
    for &(r, v) in col {
        *acc.entry(r).or_insert(0.0) += scale * v;
    }
}

fn finish(acc: BTreeMap<usize, f64>) -> SparseCol {
    acc.into_iter().filter(|(_, v)| v.abs() > 1e-15).collect()
}

/// Images of the symmetric units `(E_ij + E_ji)/2` of a Gram space, as
/// program columns plus objective contributions.
#[derive(Debug, Clone)]
pub struct GramTable {
    dim: usize,
    units: Vec<(SparseCol, f64)>,
}

impl GramTable {
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> (SparseCol, f64)) -> Self {
        let mut units = Vec::with_capacity(dim * (dim + 1) / 2);
        for i in 0..dim {
            for j in i..dim {
                units.push(f(i, j));
            }
        }
        GramTable { dim, units }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn unit_half(&self, i: usize, j: usize) -> &(SparseCol, f64) {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        &self.units[i * self.dim - i * (i + 1) / 2 + j]
    }

    /// Image of `(u vᵀ + v uᵀ)/2` for sparse `u`, `v`.
    pub fn image_sym(&self, u: &[(usize, f64)], v: &[(usize, f64)]) -> (SparseCol, f64) {
        let mut acc = BTreeMap::new();
        let mut cost = 0.0;
        for &(i, ui) in u {
            for &(j, vj) in v {
                let (col, c) = self.unit_half(i, j);
                merge(&mut acc, col, ui * vj);
                cost += ui * vj * c;
            }
        }
        (finish(acc), cost)
    }

    pub fn image_outer(&self, u: &[(usize, f64)]) -> (SparseCol, f64) {
        self.image_sym(u, u)
    }
}

/// Sparse representation of a dense vector.
pub fn sparse(v: &[f64]) -> Vec<(usize, f64)> {
    v.iter().enumerate().filter(|(_, x)| **x != 0.0).map(|(i, &x)| (i, x)).collect()
}

fn unit_vec(i: usize) -> Vec<(usize, f64)> {
    vec![(i, 1.0)]
}

/// Rows of a program keyed by `(identity group, monomial)`; one group per
/// polynomial identity.
#[derive(Debug, Default, Clone)]
pub struct PolyRows {
    map: HashMap<(usize, Monomial), usize>,
}

impl PolyRows {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn row(&mut self, pb: &mut ProgramBuilder, group: usize, m: &Monomial) -> usize {
        if let Some(&r) = self.map.get(&(group, m.clone())) {
            return r;
        }
        let r = pb.add_row(0.0);
        self.map.insert((group, m.clone()), r);
        r
    }

    /// Adds `scale · p` to the right-hand side of the identity.
    pub fn add_rhs(&mut self, pb: &mut ProgramBuilder, group: usize, p: &Polynomial, scale: f64) {
        for (m, c) in p.terms() {
            let r = self.row(pb, group, m);
            *pb.rhs_mut(r) += scale * c;
        }
    }

    /// Column whose contribution to the identity is `scale · p`.
    pub fn column(&mut self, pb: &mut ProgramBuilder, group: usize, p: &Polynomial, scale: f64) -> SparseCol {
        let mut col: SparseCol = p.terms().map(|(m, c)| (self.row(pb, group, m), scale * c)).collect();
        col.sort_by_key(|e| e.0);
        col
    }

    /// Gram table of `zᵀ Q z` for the basis `z`.
    pub fn table(&mut self, pb: &mut ProgramBuilder, group: usize, basis: &[Monomial]) -> GramTable {
        GramTable::from_fn(basis.len(), |i, j| {
            let m = basis[i].mul(&basis[j]);
            (vec![(self.row(pb, group, &m), 1.0)], 0.0)
        })
    }

    /// Monomials of a group that carry a row.
    pub fn monomials(&self, group: usize) -> Vec<(Monomial, usize)> {
        let mut v: Vec<_> = self.map.iter().filter(|((g, _), _)| *g == group).map(|((_, m), &r)| (m.clone(), r)).collect();
        v.sort();
        v
    }
}

/// F2-span of monomial parities, used to drop Gram entries that sign
/// symmetry forces to zero.
#[derive(Debug, Clone)]
pub struct ParitySpan {
    rows: Vec<u64>,
}

impl ParitySpan {
    pub fn new<'a>(polys: impl IntoIterator<Item = &'a Polynomial>) -> Self {
        let mut span = ParitySpan { rows: Vec::new() };
        for p in polys {
            for (m, _) in p.terms() {
                span.insert(m.parity());
            }
        }
        span
    }

    fn reduce(&self, mut v: u64) -> u64 {
        for &r in &self.rows {
            let top = 63 - r.leading_zeros();
            if v >> top & 1 == 1 {
                v ^= r;
            }
        }
        v
    }

    fn insert(&mut self, v: u64) {
        let v = self.reduce(v);
        if v != 0 {
            self.rows.push(v);
            self.rows.sort_by_key(|r| std::cmp::Reverse(63 - r.leading_zeros()));
            // keep rows fully reduced on their pivots
            let n = self.rows.len();
            for i in 0..n {
                let top = 63 - self.rows[i].leading_zeros();
                for j in 0..n {
                    if i != j && self.rows[j] >> top & 1 == 1 {
                        self.rows[j] ^= self.rows[i];
                    }
                }
            }
            self.rows.sort_by_key(|r| std::cmp::Reverse(63 - r.leading_zeros()));
        }
    }

    pub fn contains(&self, v: u64) -> bool {
        self.reduce(v) == 0
    }
}

/// Gram-entry coefficient per program variable, for reading `Q` back.
#[derive(Debug, Clone, Serialize)]
pub struct GramBlock {
    pub dim: usize,
    pub tag: ConeTag,
    entries: Vec<(usize, usize, usize, f64)>,
}

impl GramBlock {
    pub fn extract(&self, x: &[f64]) -> SymMatrix {
        let mut q = SymMatrix::zeros(self.dim);
        for &(var, a, b, coef) in &self.entries {
            q.add_to(a, b, coef * x[var]);
        }
        q
    }

    /// Contribution of each variable to `tr Q`.
    pub fn trace_coefficients(&self) -> Vec<(usize, f64)> {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for &(var, a, b, coef) in &self.entries {
            if a == b {
                *acc.entry(var).or_insert(0.0) += coef;
            }
        }
        acc.into_iter().collect()
    }

    pub fn nvars(&self) -> usize {
        self.entries.iter().map(|e| e.0).collect::<std::collections::BTreeSet<_>>().len()
    }
}

/// Rows of `U` as sparse vectors (identity when `u` is `None`).
fn basis_rows(dim: usize, u: Option<&Mat>) -> Vec<Vec<(usize, f64)>> {
    match u {
        None => (0..dim).map(unit_vec).collect(),
        Some(u) => (0..dim).map(|a| sparse(u.row(a))).collect(),
    }
}

/// Adds `zᵀ Uᵀ Q U z` with `Q` in the dd or sdd cone as program variables.
/// `allowed(a, b)` restricts the off-diagonal pairs that may be nonzero.
pub fn add_gram_block(
    pb: &mut ProgramBuilder,
    table: &GramTable,
    u: Option<&Mat>,
    tag: ConeTag,
    allowed: &dyn Fn(usize, usize) -> bool,
) -> Result<GramBlock, GramError> {
    let dim = table.dim();
    if let Some(u) = u {
        if u.rows != dim || u.cols != dim {
            return Err(GramError::Dimension { rows: u.rows, cols: u.cols, dim });
        }
    }
    let rows = basis_rows(dim, u);
    let mut entries = Vec::new();
    let diag: Vec<(SparseCol, f64)> = rows.iter().map(|r| table.image_outer(r)).collect();

    for a in 0..dim {
        let (col, cost) = diag[a].clone();
        let v = pb.add_nonneg(col, cost);
        entries.push((v, a, a, 1.0));
    }
    for a in 0..dim {
        for b in a + 1..dim {
            if !allowed(a, b) {
                continue;
            }
            let (cross, ccost) = table.image_sym(&rows[a], &rows[b]);
            match tag {
                ConeTag::DD => {
                    for sign in [1.0, -1.0] {
                        let mut acc = BTreeMap::new();
                        merge(&mut acc, &diag[a].0, 1.0);
                        merge(&mut acc, &diag[b].0, 1.0);
                        merge(&mut acc, &cross, 2.0 * sign);
                        let cost = diag[a].1 + diag[b].1 + 2.0 * sign * ccost;
                        let v = pb.add_nonneg(finish(acc), cost);
                        entries.push((v, a, a, 1.0));
                        entries.push((v, b, b, 1.0));
                        entries.push((v, a, b, sign));
                    }
                }
                ConeTag::SDD => {
                    let mut t = BTreeMap::new();
                    merge(&mut t, &diag[a].0, 0.5);
                    merge(&mut t, &diag[b].0, 0.5);
                    let mut u1 = BTreeMap::new();
                    merge(&mut u1, &diag[a].0, 0.5);
                    merge(&mut u1, &diag[b].0, -0.5);
                    let first = pb.add_soc(
                        vec![finish(t), finish(u1), cross],
                        vec![0.5 * (diag[a].1 + diag[b].1), 0.5 * (diag[a].1 - diag[b].1), ccost],
                    );
                    entries.push((first, a, a, 0.5));
                    entries.push((first, b, b, 0.5));
                    entries.push((first + 1, a, a, 0.5));
                    entries.push((first + 1, b, b, -0.5));
                    entries.push((first + 2, a, b, 0.5));
                }
            }
        }
    }
    Ok(GramBlock { dim, tag, entries })
}

/// Free variable `t` contributing `t · zᵀ Uᵀ I U z`; returns its index.
pub fn add_identity_column(pb: &mut ProgramBuilder, table: &GramTable, u: Option<&Mat>, cost: f64) -> usize {
    let rows = basis_rows(table.dim(), u);
    let mut acc = BTreeMap::new();
    let mut c = 0.0;
    for r in &rows {
        let (col, cc) = table.image_outer(r);
        merge(&mut acc, &col, 1.0);
        c += cc;
    }
    pb.add_free(finish(acc), cost + c)
}

/// `(basis, U, Q, tag)` with `p = zᵀ Uᵀ Q U z`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GramCertificate {
    pub basis: MonomialBasis,
    pub u: Mat,
    pub q: SymMatrix,
    pub cone_tag: ConeTag,
}

impl GramCertificate {
    /// `Uᵀ Q U`
    pub fn gram(&self) -> SymMatrix {
        self.q.congruence(&self.u)
    }

    pub fn reconstruct(&self) -> Polynomial {
        let g = self.gram();
        let n = self.basis.poly_nvars();
        let mut terms = Vec::new();
        for a in 0..g.dim() {
            for b in a..g.dim() {
                let v = g.get(a, b);
                if v != 0.0 {
                    let m = self.basis.entries[a].mul(&self.basis.entries[b]);
                    terms.push((m, if a == b { v } else { 2.0 * v }));
                }
            }
        }
        Polynomial::from_terms(n, terms)
    }

    pub fn reconstruction_error(&self, target: &Polynomial) -> f64 {
        self.reconstruct().max_coeff_diff(target)
    }

    pub fn cone_ok(&self) -> Result<bool, GramError> {
        Ok(match self.cone_tag {
            ConeTag::DD => is_dd(&self.q, DD_TOL),
            ConeTag::SDD => is_sdd(&self.q, DD_TOL)?,
        })
    }

    /// Checks reconstruction and cone membership of `Q`.
    pub fn validate(&self, target: &Polynomial) -> Result<(), String> {
        let err = self.reconstruction_error(target);
        let tol = RECONSTRUCTION_TOL * (1.0 + target.max_abs_coefficient());
        if err > tol {
            return Err(format!("reconstruction error {err:e} exceeds {tol:e}"));
        }
        match self.cone_ok() {
            Ok(true) => Ok(()),
            Ok(false) => Err(format!("Gram matrix is not {:?}", self.cone_tag)),
            Err(e) => Err(e.to_string()),
        }
    }
}

/// Coefficients of `zᵀ Uᵀ Q U z` as linear functions of the entries `Q_ab`, `a ≤ b`.
#[derive(Debug, Clone)]
pub struct GramMap {
    pub nvars: usize,
    pub rows: Vec<(Monomial, Vec<((usize, usize), f64)>)>,
}

impl GramMap {
    pub fn apply(&self, q: &SymMatrix) -> Polynomial {
        let terms = self.rows.iter().map(|(m, lin)| (m.clone(), lin.iter().map(|&((a, b), c)| c * q.get(a, b)).sum()));
        Polynomial::from_terms(self.nvars, terms)
    }
}

pub fn gram_map(b: &MonomialBasis, u: Option<&Mat>) -> Result<GramMap, GramError> {
    let dim = b.len();
    if let Some(u) = u {
        if u.rows != dim || u.cols != dim {
            return Err(GramError::Dimension { rows: u.rows, cols: u.cols, dim });
        }
    }
    let rows = basis_rows(dim, u);
    let mut acc: BTreeMap<Monomial, BTreeMap<(usize, usize), f64>> = BTreeMap::new();
    for a in 0..dim {
        for bb in a..dim {
            let mult = if a == bb { 1.0 } else { 2.0 };
            for &(i, ui) in &rows[a] {
                for &(j, uj) in &rows[bb] {
                    let m = b.entries[i].mul(&b.entries[j]);
                    *acc.entry(m).or_default().entry((a, bb)).or_insert(0.0) += mult * ui * uj;
                }
            }
        }
    }
    let rows = acc
        .into_iter()
        .map(|(m, lin)| (m, lin.into_iter().filter(|(_, v)| *v != 0.0).collect::<Vec<_>>()))
        .filter(|(_, lin)| !lin.is_empty())
        .collect();
    Ok(GramMap { nvars: b.poly_nvars(), rows })
}

/// Basis suited to `p`: exact degree for forms, up-to-degree otherwise.
pub fn basis_for(p: &Polynomial) -> Result<MonomialBasis, GramError> {
    let deg = p.degree();
    if deg % 2 == 1 {
        return Err(GramError::OddDegree(deg));
    }
    let n = p.nvars();
    Ok(if p.is_homogeneous() {
        basis(n, deg / 2, BasisKind::ExactDegree(deg / 2))
    } else {
        basis(n, deg / 2, BasisKind::UpToDegree(deg / 2))
    })
}

/// Result of a membership test: the largest margin `t` with `Q - tI` in the
/// cone, and a certificate when `t` is nonnegative up to tolerance.
#[derive(Debug, Clone, Serialize)]
pub struct MarginResult {
    pub margin: f64,
    pub certificate: Option<GramCertificate>,
}

/// Maximizes `t` such that `p = zᵀ Uᵀ Q U z` with `Q - tI` dd/sdd, `t ≤ cap`.
pub fn max_margin(
    p: &Polynomial,
    b: &MonomialBasis,
    u: Option<&Mat>,
    tag: ConeTag,
    cap: f64,
) -> Result<MarginResult, GramError> {
    let dim = b.len();
    let mut pb = ProgramBuilder::new();
    let mut rows = PolyRows::new();
    rows.add_rhs(&mut pb, 0, p, 1.0);
    let table = rows.table(&mut pb, 0, &b.entries);
    let span = ParitySpan::new([p]);
    let use_parity = u.is_none() && b.poly_nvars() <= 64;
    let parity: Vec<u64> = b.entries.iter().map(|m| m.parity()).collect();
    let allowed = |i: usize, j: usize| !use_parity || span.contains(parity[i] ^ parity[j]);
    let block = add_gram_block(&mut pb, &table, u, tag, &allowed)?;
    let t = add_identity_column(&mut pb, &table, u, -1.0);
    let cap_row = pb.add_row(cap);
    // t + slack = cap
    let mut prog = pb.build();
    prog.cols[t].push((cap_row, 1.0));
    prog.cols.push(vec![(cap_row, 1.0)]);
    prog.c.push(0.0);
    prog.cones.push(conic::Cone::NonNeg(1));

    let sol = conic::solve(&prog);
    if sol.status != SolveStatus::Optimal {
        // a monomial of p outside the Gram image makes the program infeasible
        if sol.status == SolveStatus::PrimalInfeasible {
            return Ok(MarginResult { margin: f64::NEG_INFINITY, certificate: None });
        }
        return Err(GramError::Solver(sol.status));
    }
    let margin = sol.x[t];
    let tol = RECONSTRUCTION_TOL * (1.0 + p.max_abs_coefficient());
    let certificate = if margin >= -tol {
        let mut q = block.extract(&sol.x);
        if margin > 0.0 {
            for a in 0..dim {
                q.add_to(a, a, margin);
            }
        }
        Some(GramCertificate {
            basis: b.clone(),
            u: u.cloned().unwrap_or_else(|| Mat::identity(dim)),
            q,
            cone_tag: tag,
        })
    } else {
        None
    };
    Ok(MarginResult { margin, certificate })
}

/// DSOS/SDSOS membership of `p` in the basis changed by `U`; `None` when infeasible.
pub fn membership(p: &Polynomial, tag: ConeTag, u: Option<&Mat>) -> Result<Option<GramCertificate>, GramError> {
    let b = basis_for(p)?;
    Ok(max_margin(p, &b, u, tag, 1.0)?.certificate)
}

/// Membership of `p · (Σ x_i²)^r`.
pub fn r_membership(p: &Polynomial, r: u32, tag: ConeTag) -> Result<Option<GramCertificate>, GramError> {
    let q = p.try_mul(&Polynomial::sum_of_squares(p.nvars()).pow(r))?;
    membership(&q, tag, None)
}

/// Hessian basis suited to `p`.
pub fn hessian_basis_for(p: &Polynomial) -> Result<MonomialBasis, GramError> {
    let deg = p.degree();
    if deg % 2 == 1 {
        return Err(GramError::OddDegree(deg));
    }
    let n = p.nvars();
    Ok(if p.is_homogeneous() {
        basis(n, deg / 2, BasisKind::HessianBasis(deg / 2))
    } else {
        basis(n, deg / 2, BasisKind::HessianUpTo(deg / 2))
    })
}

/// dsos/sdsos-convexity: membership of the Hessian biform `yᵀ H_p(x) y`.
pub fn convexity_membership(p: &Polynomial, tag: ConeTag) -> Result<Option<GramCertificate>, GramError> {
    Ok(convexity_margin(p, tag)?.certificate)
}

pub fn convexity_margin(p: &Polynomial, tag: ConeTag) -> Result<MarginResult, GramError> {
    let h = p.hessian_biform();
    let b = hessian_basis_for(p)?;
    max_margin(&h, &b, None, tag, 1.0)
}

/// Base case in two variables: a symmetric form of degree `2d` whose Hessian
/// biform has a strictly dd Gram matrix.
fn interior_two_vars(d: u32) -> Polynomial {
    if d == 1 {
        return Polynomial::sum_of_squares(2);
    }
    let half = if d % 2 == 0 { d / 2 } else { (d - 1) / 2 };
    let mut a = vec![0.0; half as usize + 1];
    a[1] = 1.0;
    for k in 1..half {
        a[k as usize + 1] = (2.0 * d as f64 - 2.0 * k as f64) / (2.0 * k as f64 + 2.0) * a[k as usize];
    }
    let df = d as f64;
    a[0] = if d % 2 == 0 {
        1.0 / df + df / (2.0 * (2.0 * df - 1.0)) * a[half as usize]
    } else {
        1.0 + 2.0 * (2.0 * df - 2.0) / (2.0 * df * (2.0 * df - 1.0))
    };
    let terms = (0..=d).map(|k| {
        let idx = k.min(d - k) as usize;
        (Monomial(vec![2 * (d - k), 2 * k]), a[idx])
    });
    Polynomial::from_terms(2, terms)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Margin required of the Hessian Gram matrices built below.
pub const INTERIOR_MARGIN: f64 = 1e-6;

/// Form of degree `2d` in `n` variables whose Hessian biform has a strictly
/// dd Gram matrix, built from two variables up by symmetrization.
pub fn interior_dsos_convex_form(n: usize, d: u32) -> Result<Polynomial, GramError> {
    assert!(n >= 2 && d >= 1);
    let mut p = interior_two_vars(d);
    for m in 2..n {
        // sum over m-subsets of m+1 variables
        let mut q = Polynomial::zero(m + 1);
        for subset in combinations(m + 1, m) {
            q = &q + &p.embed(m + 1, &subset);
        }
        let v = Polynomial::from_terms(
            m + 1,
            monomials_of_degree(m + 1, d)
                .into_iter()
                .filter(|mono| mono.0.iter().all(|&e| e > 0))
                .map(|mono| (Monomial(mono.0.iter().map(|e| 2 * e).collect()), 1.0)),
        );
        let mut alpha = 1.0;
        loop {
            let cand = &q + &v.scale(alpha);
            let r = convexity_margin(&cand, ConeTag::DD)?;
            if r.margin >= INTERIOR_MARGIN {
                p = cand;
                break;
            }
            if v.is_zero() || alpha < 1e-12 {
                return Err(GramError::Construction(format!(
                    "no recursion scalar found for n={}, 2d={} (margin {:e})",
                    m + 1,
                    2 * d,
                    r.margin
                )));
            }
            alpha /= 2.0;
        }
    }
    Ok(p)
}

/// Polynomial of degree `2d` in `n ≥ 2` variables in the interior of the
/// dsos-convex cone: the sum of the interior forms of degrees `2, ..., 2d`.
pub fn interior_dsos_convex(n: usize, two_d: u32) -> Result<Polynomial, GramError> {
    if two_d % 2 == 1 {
        return Err(GramError::OddDegree(two_d));
    }
    let mut p = Polynomial::zero(n);
    for k in 1..=two_d / 2 {
        p = &p + &interior_dsos_convex_form(n, k)?;
    }
    Ok(p)
}
