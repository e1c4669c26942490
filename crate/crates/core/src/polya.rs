//! Optimization-free lower bounds for polynomial programs over a ball.
//!
//! A candidate `γ` is a strict lower bound on `min p(x) s.t. g_i(x) ≥ 0`
//! iff a certain sum-of-squares form `f_γ` is positive definite. Positivity
//! is certified by Pólya-type coefficient checks (or, in the multiplier
//! variant, by a dsos/sdsos program), and each level is solved by bisection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::{self, Cone, ProgramBuilder, SolveStatus};
use crate::gram::{add_gram_block, add_identity_column, basis, BasisKind, ConeTag, GramError, ParitySpan, PolyRows};
use crate::poly::{binomial, monomials_of_degree, Monomial, PolyError, Polynomial};

/// Products with more terms than this are not expanded.
pub const TERM_LIMIT: f64 = 5e6;
/// Multiplier programs with more identity rows than this are not built.
pub const MULTIPLIER_ROW_LIMIT: f64 = 2500.0;

#[derive(Debug, Error)]
pub enum PolyaError {
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Gram(#[from] GramError),
    #[error("solver finished with status {0:?}")]
    Solver(SolveStatus),
    #[error("invalid instance: {0}")]
    Instance(String),
}

/// `min p(x)  s.t.  g_i(x) ≥ 0`, with the feasible set inside the ball of radius `radius`.
#[derive(Debug, Clone, Serialize)]
pub struct PopInstance {
    pub p: Polynomial,
    pub constraints: Vec<Polynomial>,
    pub radius: f64,
    /// Half of the smallest even integer ≥ all degrees.
    pub d: u32,
}

#[derive(Debug, Deserialize)]
pub struct PopJson {
    pub objective: Polynomial,
    #[serde(default)]
    pub constraints: Vec<Polynomial>,
    pub radius: f64,
}

impl PopInstance {
    pub fn new(p: Polynomial, constraints: Vec<Polynomial>, radius: f64) -> Result<Self, PolyaError> {
        if !(radius > 0.0) {
            return Err(PolyaError::Instance(format!("radius must be positive, got {radius}")));
        }
        if let Some(g) = constraints.iter().find(|g| g.nvars() != p.nvars()) {
            return Err(PolyaError::Instance(format!(
                "constraint has {} variables, objective has {}",
                g.nvars(),
                p.nvars()
            )));
        }
        let maxdeg = constraints.iter().map(|g| g.degree()).chain([p.degree()]).max().unwrap_or(0);
        let d = maxdeg.div_ceil(2).max(1);
        Ok(PopInstance { p, constraints, radius, d })
    }

    pub fn nvars(&self) -> usize {
        self.p.nvars()
    }

    /// Variables of `f_γ`: `x`, `s_0..s_{m+1}`, `y`.
    pub fn lifted_nvars(&self) -> usize {
        self.nvars() + self.constraints.len() + 3
    }

    /// Degree of `f_γ`.
    pub fn lifted_degree(&self) -> u32 {
        4 * self.d
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PolyaBounds {
    pub eta: Vec<f64>,
    pub beta: f64,
}

/// Upper bounds on each `g_i` and on `−p` over the ball.
pub fn bounds(pop: &PopInstance) -> PolyaBounds {
    PolyaBounds {
        eta: pop.constraints.iter().map(|g| g.monomial_bound(pop.radius)).collect(),
        beta: pop.p.scale(-1.0).monomial_bound(pop.radius),
    }
}

/// `y^{2d} q(x/y)` in the lifted variables.
fn lift(q: &Polynomial, pop: &PopInstance) -> Result<Polynomial, PolyError> {
    let n = pop.nvars();
    let total = pop.lifted_nvars();
    let h = q.homogenize(2 * pop.d)?;
    let map: Vec<usize> = (0..n).chain([total - 1]).collect();
    Ok(h.embed(total, &map))
}

fn power_of(total: usize, i: usize, k: u32) -> Polynomial {
    let mut e = vec![0u32; total];
    e[i] = k;
    Polynomial::from_terms(total, [(Monomial(e), 1.0)])
}

/// The form `f_γ` of degree `4d` whose positive definiteness is equivalent to
/// `γ` being a strict lower bound.
pub fn build_f_gamma(pop: &PopInstance, b: &PolyaBounds, gamma: f64) -> Result<Polynomial, PolyaError> {
    let n = pop.nvars();
    let m = pop.constraints.len();
    let total = pop.lifted_nvars();
    let d = pop.d;
    let y = total - 1;
    let s = |i: usize| n + i;
    let y2d = power_of(total, y, 2 * d);
    let slack = |i: usize| &power_of(total, s(i), 2) * &power_of(total, y, 2 * d - 2);

    let first = &(&y2d.scale(gamma) - &lift(&pop.p, pop)?) - &slack(0);
    let mut f = &first * &first;
    for (i, g) in pop.constraints.iter().enumerate() {
        let t = &lift(g, pop)? - &slack(i + 1);
        f = &f + &(&t * &t);
    }
    let radius_sum = pop.radius + b.eta.iter().sum::<f64>() + b.beta + gamma;
    let mut sq = Polynomial::zero(total);
    for i in (0..n).chain((0..=m).map(s)) {
        sq = &sq + &power_of(total, i, 2);
    }
    let last = &(&y2d.scale(radius_sum.powi(d as i32)) - &sq.pow(d)) - &power_of(total, s(m + 1), 2 * d);
    f = &f + &(&last * &last);
    Ok(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Membership {
    Member,
    NotMember,
    /// The product would exceed the term limit.
    Unevaluated,
}

impl Membership {
    pub fn accepted(self) -> bool {
        self == Membership::Member
    }
}

/// Homogeneous polynomial stored densely in colex order of its exponents.
struct DenseForm {
    nvars: usize,
    degree: u32,
    coeffs: Vec<f64>,
}

/// `C(a, k)` for `a < rows`, `k ≤ cols`.
struct Binom {
    table: Vec<Vec<usize>>,
}

impl Binom {
    fn new(rows: usize, cols: usize) -> Self {
        let mut table = vec![vec![0usize; cols + 1]; rows + 1];
        for a in 0..=rows {
            table[a][0] = 1;
            for k in 1..=cols.min(a) {
                table[a][k] = table[a - 1][k - 1] + if k <= a - 1 { table[a - 1][k] } else { 0 };
            }
        }
        Binom { table }
    }

    fn get(&self, a: usize, k: usize) -> usize {
        if k > a {
            0
        } else {
            self.table[a][k]
        }
    }
}

fn count_forms(nvars: usize, degree: u32) -> f64 {
    binomial(degree + nvars as u32 - 1, nvars as u32 - 1)
}

impl DenseForm {
    /// Rank of an exponent vector: colex rank of `t_k = e_0 + … + e_k + k`.
    fn rank(exps: &[u32], binom: &Binom) -> usize {
        let mut s = 0usize;
        let mut r = 0usize;
        for k in 0..exps.len() - 1 {
            s += exps[k] as usize;
            r += binom.get(s + k, k + 1);
        }
        r
    }

    fn from_sparse(p: &Polynomial, degree: u32, binom: &Binom) -> DenseForm {
        let nvars = p.nvars();
        let mut coeffs = vec![0.0; count_forms(nvars, degree) as usize];
        for (m, c) in p.terms() {
            coeffs[Self::rank(m.exps(), binom)] += c;
        }
        DenseForm { nvars, degree, coeffs }
    }

    /// Product with `z_1 + … + z_n`.
    fn times_linear_sum(&self, binom: &Binom) -> DenseForm {
        let n = self.nvars;
        let degree = self.degree + 1;
        let size = count_forms(n, degree) as usize;
        if n == 1 {
            return DenseForm { nvars: 1, degree, coeffs: self.coeffs.clone() };
        }
        let k = n - 1;
        let top = degree as usize + n - 2;
        let mut coeffs = Vec::with_capacity(size);
        let mut t: Vec<usize> = (0..k).collect();
        let mut prefix = vec![0usize; k + 1];
        let mut suffix = vec![0usize; k + 1];
        for _ in 0..size {
            for i in 0..k {
                prefix[i + 1] = prefix[i] + binom.get(t[i], i + 1);
            }
            suffix[k] = 0;
            for i in (0..k).rev() {
                suffix[i] = suffix[i + 1] + binom.get(t[i].saturating_sub(1), i + 1);
            }
            let mut sum = 0.0;
            let mut comp = 0.0;
            let mut add = |v: f64| {
                let s = sum + v;
                comp += if sum.abs() >= v.abs() { (sum - s) + v } else { (v - s) + sum };
                sum = s;
            };
            for i in 0..k {
                let prev = if i == 0 { None } else { Some(t[i - 1]) };
                let exponent_positive = match prev {
                    None => t[0] > 0,
                    Some(p) => t[i] > p + 1,
                };
                if exponent_positive {
                    add(self.coeffs[prefix[i] + suffix[i]]);
                }
            }
            // last variable: its exponent is degree − S_{n−2}
            if t[k - 1] - (k - 1) < degree as usize {
                add(self.coeffs[prefix[k]]);
            }
            coeffs.push(sum + comp);
            // next combination in colex order
            let mut i = 0;
            while i < k {
                let limit = if i + 1 < k { t[i + 1] } else { top + 1 };
                if t[i] + 1 < limit {
                    t[i] += 1;
                    for (j, tj) in t.iter_mut().enumerate().take(i) {
                        *tj = j;
                    }
                    break;
                }
                i += 1;
            }
        }
        DenseForm { nvars: n, degree, coeffs }
    }
}

/// Membership of a form `q` of degree `2D` in the level-`r` Pólya cone: the
/// coefficients of `(q(v²−w²) + (1/2r)(Σ v_i⁴ + w_i⁴)^D) · (Σ v_i² + w_i²)^{r²}`
/// must be nonnegative up to `1e-9 (1 + max |coeff|)`.
pub fn pol_membership(q: &Polynomial, r: u32) -> Result<Membership, PolyaError> {
    pol_membership_of_degree(q, q.degree(), r)
}

/// As [`pol_membership`], with the degree given explicitly (needed for `q = 0`).
pub fn pol_membership_of_degree(q: &Polynomial, deg: u32, r: u32) -> Result<Membership, PolyaError> {
    if r == 0 {
        return Err(PolyaError::Instance("level r must be at least 1".into()));
    }
    if !q.terms().all(|(m, _)| m.degree() == deg) || deg % 2 == 1 {
        return Err(PolyaError::Instance("pol_membership needs a form of even degree".into()));
    }
    let half = deg / 2;
    let n = q.nvars();
    let vars = 2 * n;
    if sphere_witness(q, r)? {
        return Ok(Membership::NotMember);
    }
    // work in a_i = v_i², b_i = w_i²; every exponent below is even
    let final_degree = deg + r * r;
    if count_forms(vars, final_degree) > TERM_LIMIT {
        return Ok(Membership::Unevaluated);
    }
    let halve = |p: &Polynomial| {
        Polynomial::from_terms(vars, p.terms().map(|(m, c)| (Monomial(m.exps().iter().map(|e| e / 2).collect()), c)))
    };
    let fourth_powers = Polynomial::from_terms(
        vars,
        (0..vars).map(|i| {
            let mut e = vec![0u32; vars];
            e[i] = 2;
            (Monomial(e), 1.0)
        }),
    );
    let base = &halve(&q.substitute_square_difference()) + &fourth_powers.pow(half).scale(0.5 / r as f64);
    let binom = Binom::new(final_degree as usize + vars + 1, vars);
    let mut dense = DenseForm::from_sparse(&base, deg, &binom);
    for _ in 0..r * r {
        dense = dense.times_linear_sum(&binom);
    }
    let max = dense.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let min = dense.coeffs.iter().fold(f64::INFINITY, |m, &c| m.min(c));

    Ok(if min >= -1e-9 * (1.0 + max) { Membership::Member } else { Membership::NotMember })
}

/// Searches the unit sphere for `z` with `q(z) + 1/(2r) < 0`. Splitting `z`
/// into positive and negative parts gives a point of the orthant where the
/// transformed polynomial is negative, so no level can accept `q`.
fn sphere_witness(q: &Polynomial, r: u32) -> Result<bool, PolyaError> {
    const STARTS: usize = 32;
    const STEPS: usize = 200;
    let n = q.nvars();
    let shift = 0.5 / r as f64;
    let slack = 1e-9 * (1.0 + q.terms().map(|(_, c)| c.abs()).sum::<f64>());
    let grad: Vec<Polynomial> = (0..n).map(|i| q.partial(i)).collect::<Result<_, _>>()?;
    let normalize = |z: &mut Vec<f64>| {
        let nz = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        z.iter_mut().for_each(|v| *v /= nz);
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..STARTS {
        let mut z: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        normalize(&mut z);
        let mut val = q.eval(&z)?;
        let mut step = 0.1;
        for _ in 0..STEPS {
            if val + shift < -slack {
                return Ok(true);
            }
            let g: Vec<f64> = grad.iter().map(|p| p.eval(&z)).collect::<Result<_, _>>()?;
            let radial: f64 = g.iter().zip(&z).map(|(a, b)| a * b).sum();
            let tangent: Vec<f64> = g.iter().zip(&z).map(|(a, b)| a - radial * b).collect();
            if tangent.iter().all(|v| v.abs() < 1e-14) {
                break;
            }
            let mut moved = false;
            while step > 1e-12 {
                let mut cand: Vec<f64> = z.iter().zip(&tangent).map(|(a, b)| a - step * b).collect();
                normalize(&mut cand);
                let cv = q.eval(&cand)?;
                if cv < val {
                    z = cand;
                    val = cv;
                    step *= 2.0;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }
        if val + shift < -slack {
            return Ok(true);
        }
    }
    Ok(false)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Variant {
    Pol,
    Multiplier(ConeTag),
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaTest {
    pub gamma: f64,
    pub outcome: Membership,
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelResult {
    pub r: u32,
    /// Last accepted `γ`, or `−∞` when the bracket's lower end fails.
    pub value: f64,
    /// Largest individually accepted `γ`.
    pub best_accepted: f64,
    pub tests: Vec<GammaTest>,
    pub unevaluated: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct HierarchyResult {
    pub levels: Vec<LevelResult>,
    pub l: Vec<f64>,
    /// Running maxima of `l`.
    pub m: Vec<f64>,
    pub bisect_eps: f64,
}

/// `[−β, monomial bound of p]`
pub fn default_bracket(pop: &PopInstance) -> (f64, f64) {
    (-bounds(pop).beta, pop.p.monomial_bound(pop.radius))
}

/// `f_γ − (1/r)(Σ z_i²)^{2d}`
pub fn level_form(pop: &PopInstance, b: &PolyaBounds, r: u32, gamma: f64) -> Result<Polynomial, PolyaError> {
    let f = build_f_gamma(pop, b, gamma)?;
    let radial = Polynomial::sum_of_squares(pop.lifted_nvars()).pow(2 * pop.d);
    Ok(&f - &radial.scale(1.0 / r as f64))
}

/// Bisection with `L` accepted and `U` rejected, as long as `U − L ≥ eps`.
fn bisect(
    r: u32,
    bracket: (f64, f64),
    eps: f64,
    mut test: impl FnMut(f64) -> Result<Membership, PolyaError>,
) -> Result<LevelResult, PolyaError> {
    let (mut lo, mut hi) = bracket;
    if !(lo < hi) {
        return Err(PolyaError::Instance(format!("empty bracket [{lo}, {hi}]")));
    }
    let mut res = LevelResult { r, value: f64::NEG_INFINITY, best_accepted: f64::NEG_INFINITY, tests: vec![], unevaluated: false };
    let first = test(lo)?;
    res.tests.push(GammaTest { gamma: lo, outcome: first });
    match first {
        Membership::Member => res.best_accepted = lo,
        Membership::NotMember => return Ok(res),
        Membership::Unevaluated => {
            res.unevaluated = true;
            return Ok(res);
        }
    }
    while hi - lo >= eps {
        let mid = 0.5 * (lo + hi);
        let out = test(mid)?;
        res.tests.push(GammaTest { gamma: mid, outcome: out });
        if out.accepted() {
            lo = mid;
            res.best_accepted = res.best_accepted.max(mid);
        } else {
            hi = mid;
        }
    }
    res.value = lo;
    Ok(res)
}

/// Level `r` of the coefficient-check hierarchy.
pub fn level(pop: &PopInstance, r: u32, bracket: (f64, f64), eps: f64) -> Result<LevelResult, PolyaError> {
    let b = bounds(pop);
    bisect(r, bracket, eps, |g| pol_membership(&level_form(pop, &b, r, g)?, r))
}

/// `f_γ(v²−w²) − (1/r)(Σ (v_i²−w_i²)²)^{d} + (1/2r)(Σ v_i⁴+w_i⁴)^{d}` with `2d = deg f_γ`.
pub fn p_gamma_r(pop: &PopInstance, b: &PolyaBounds, r: u32, gamma: f64) -> Result<Polynomial, PolyaError> {
    let f = build_f_gamma(pop, b, gamma)?;
    let n = pop.lifted_nvars();
    let half = pop.lifted_degree() / 2;
    let radial = Polynomial::sum_of_squares(n).pow(half).substitute_square_difference();
    let fourth = Polynomial::from_terms(
        2 * n,
        (0..2 * n).map(|i| {
            let mut e = vec![0u32; 2 * n];
            e[i] = 4;
            (Monomial(e), 1.0)
        }),
    );
    let rf = r as f64;
    Ok(&(&f.substitute_square_difference() - &radial.scale(1.0 / rf)) + &fourth.pow(half).scale(0.5 / rf))
}

/// Whether some nonzero `q` of degree `qdeg` makes both `q` and `P·q`
/// dsos/sdsos. `P` must be even in every variable; `q` is then taken even
/// as well (averaging over sign flips keeps both memberships). Returns the
/// margin of `P·q` under the normalization `tr Gram(q) = 1`, or `None` when
/// the program exceeds the size guard.
pub fn multiplier_margin(p: &Polynomial, qdeg: u32, tag: ConeTag) -> Result<Option<f64>, PolyaError> {
    if qdeg % 2 == 1 || p.degree() % 2 == 1 || !p.is_homogeneous() {
        return Err(PolyaError::Instance("multiplier search needs even degrees and a form".into()));
    }
    if p.terms().any(|(m, _)| m.exps().iter().any(|e| e % 2 == 1)) {
        return Err(PolyaError::Instance("multiplier search needs an even polynomial".into()));
    }
    let n = p.nvars();
    let prod_half = (p.degree() + qdeg) / 2;
    if count_forms(n, prod_half) > MULTIPLIER_ROW_LIMIT {
        return Ok(None);
    }
    let q_monomials: Vec<Monomial> =
        monomials_of_degree(n, qdeg / 2).into_iter().map(|m| Monomial(m.exps().iter().map(|e| 2 * e).collect())).collect();
    let mut pb = ProgramBuilder::new();
    let mut rows = PolyRows::new();
    for m in &q_monomials {
        let mono = Polynomial::from_terms(n, [(m.clone(), 1.0)]);
        let mut col = rows.column(&mut pb, 0, &mono, -1.0);
        col.extend(rows.column(&mut pb, 1, &p.try_mul(&mono)?, -1.0));
        col.sort_by_key(|e| e.0);
        pb.add_free(col, 0.0);
    }
    let even_span = ParitySpan::new(std::iter::empty::<&Polynomial>());
    let bq = basis(n, qdeg / 2, BasisKind::ExactDegree(qdeg / 2));
    let bp = basis(n, prod_half, BasisKind::ExactDegree(prod_half));
    let tq = rows.table(&mut pb, 0, &bq.entries);
    let tp = rows.table(&mut pb, 1, &bp.entries);
    let par_q: Vec<u64> = bq.entries.iter().map(|m| m.parity()).collect();
    let par_p: Vec<u64> = bp.entries.iter().map(|m| m.parity()).collect();
    let qblock = add_gram_block(&mut pb, &tq, None, tag, &|i, j| even_span.contains(par_q[i] ^ par_q[j]))?;
    add_gram_block(&mut pb, &tp, None, tag, &|i, j| even_span.contains(par_p[i] ^ par_p[j]))?;
    let t = add_identity_column(&mut pb, &tp, None, -1.0);
    let cap = pb.add_row(1.0);
    let trace = pb.add_row(1.0);
    let mut prog = pb.build();
    prog.cols[t].push((cap, 1.0));
    for (var, coef) in qblock.trace_coefficients() {
        prog.cols[var].push((trace, coef));
    }
    prog.cols.push(vec![(cap, 1.0)]);
    prog.c.push(0.0);
    prog.cones.push(Cone::NonNeg(1));
    let sol = conic::solve(&prog);
    if !sol.is_optimal() {
        return Err(PolyaError::Solver(sol.status));
    }
    Ok(Some(sol.x[t]))
}

/// Level `r` of the multiplier hierarchy (`q` of degree `2r²`).
pub fn level_multiplier(
    pop: &PopInstance,
    r: u32,
    tag: ConeTag,
    bracket: (f64, f64),
    eps: f64,
) -> Result<LevelResult, PolyaError> {
    if r == 0 {
        return Err(PolyaError::Instance("level r must be at least 1".into()));
    }
    let b = bounds(pop);
    bisect(r, bracket, eps, |g| {
        let p = p_gamma_r(pop, &b, r, g)?;
        Ok(match multiplier_margin(&p, 2 * r * r, tag)? {
            None => Membership::Unevaluated,
            Some(t) if t >= -1e-7 * (1.0 + p.max_abs_coefficient()) => Membership::Member,
            Some(_) => Membership::NotMember,
        })
    })
}

/// Levels `1..=r_max` and their running maxima.
pub fn run(
    pop: &PopInstance,
    r_max: u32,
    bracket: Option<(f64, f64)>,
    eps: f64,
    variant: Variant,
) -> Result<HierarchyResult, PolyaError> {
    if r_max == 0 {
        return Err(PolyaError::Instance("r_max must be at least 1".into()));
    }
    let bracket = bracket.unwrap_or_else(|| default_bracket(pop));
    let mut levels = Vec::new();
    for r in 1..=r_max {
        levels.push(match variant {
            Variant::Pol => level(pop, r, bracket, eps)?,
            Variant::Multiplier(tag) => level_multiplier(pop, r, tag, bracket, eps)?,
        });
    }
    let l: Vec<f64> = levels.iter().map(|lv| lv.value).collect();
    let mut m = Vec::with_capacity(l.len());
    let mut best = f64::NEG_INFINITY;
    for &v in &l {
        best = best.max(v);
        m.push(best);
    }
    Ok(HierarchyResult { levels, l, m, bisect_eps: eps })
}
