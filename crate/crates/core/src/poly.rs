//! Sparse multivariate polynomials with real coefficients.
//!
//! Terms are kept in a map keyed by dense exponent vectors. Iteration order is
//! graded lexicographic: lower total degree first, and within one degree the
//! monomial with the larger exponent on the earlier variable comes first, so
//! `x1^2, x1 x2, x2^2` is the canonical order of the quadratic monomials in two
//! variables.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Coefficients with magnitude below this are dropped after every operation.
pub const CLEANUP_THRESHOLD: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolyError {
    #[error("variable count mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("degree {degree} exceeds homogenization degree {target}")]
    DegreeTooHigh { degree: u32, target: u32 },
    #[error("variable index {index} out of range for {nvars} variables")]
    IndexOutOfRange { index: usize, nvars: usize },
    #[error("malformed polynomial: {0}")]
    Malformed(String),
}

/// Exponent vector of a monomial.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Monomial(pub Vec<u32>);

impl Monomial {
    pub fn one(nvars: usize) -> Self {
        Monomial(vec![0; nvars])
    }

    pub fn var(nvars: usize, i: usize) -> Self {
        let mut e = vec![0; nvars];
        e[i] = 1;
        Monomial(e)
    }

    pub fn nvars(&self) -> usize {
        self.0.len()
    }

    pub fn exps(&self) -> &[u32] {
        &self.0
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// Bitmask of the variables carrying an odd exponent (first 64 variables).
    pub fn parity(&self) -> u64 {
        self.0
            .iter()
            .enumerate()
            .fold(0u64, |acc, (i, &e)| if e % 2 == 1 { acc | (1 << i) } else { acc })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .map(|(&e, &xi)| xi.powi(e as i32))
            .product()
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All monomials in `nvars` variables of total degree exactly `d`, graded-lex ordered.
pub fn monomials_of_degree(nvars: usize, d: u32) -> Vec<Monomial> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; nvars];
    fn rec(i: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Monomial>) {
        let n = cur.len();
        if i + 1 == n {
            cur[i] = left;
            out.push(Monomial(cur.clone()));
            cur[i] = 0;
            return;
        }
        for e in (0..=left).rev() {
            cur[i] = e;
            rec(i + 1, left - e, cur, out);
        }
        cur[i] = 0;
    }
    if nvars == 0 {
        if d == 0 {
            out.push(Monomial(vec![]));
        }
        return out;
    }
    rec(0, d, &mut cur, &mut out);
    out
}

/// All monomials of total degree at most `d`, graded-lex ordered.
pub fn monomials_up_to_degree(nvars: usize, d: u32) -> Vec<Monomial> {
    (0..=d).flat_map(|k| monomials_of_degree(nvars, k)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        Self::from_terms(nvars, [(Monomial::one(nvars), c)])
    }

    pub fn var(nvars: usize, i: usize) -> Self {
        Self::from_terms(nvars, [(Monomial::var(nvars, i), 1.0)])
    }

    /// Builds a polynomial, merging repeated monomials.
    ///
    /// Panics if a monomial has the wrong length.
    pub fn from_terms<I>(nvars: usize, terms: I) -> Self
    where
        I: IntoIterator<Item = (Monomial, f64)>,
    {
        let mut map: BTreeMap<Monomial, f64> = BTreeMap::new();
        for (m, c) in terms {
            assert_eq!(m.nvars(), nvars, "monomial length must equal nvars");
            *map.entry(m).or_insert(0.0) += c;
        }
        let mut p = Polynomial { nvars, terms: map };
        p.cleanup();
        p
    }

    /// `Σ x_i^2`
    pub fn sum_of_squares(nvars: usize) -> Self {
        Self::from_terms(
            nvars,
            (0..nvars).map(|i| {
                let mut e = vec![0; nvars];
                e[i] = 2;
                (Monomial(e), 1.0)
            }),
        )
    }

    /// Quadratic form `xᵀ M x` for a dense row-major symmetric `M`.
    pub fn quadratic_form(m: &[Vec<f64>]) -> Self {
        let n = m.len();
        let mut terms = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let mut e = vec![0; n];
                e[i] += 1;
                e[j] += 1;
                terms.push((Monomial(e), m[i][j]));
            }
        }
        Self::from_terms(n, terms)
    }

    fn cleanup(&mut self) {
        self.terms.retain(|_, c| c.abs() >= CLEANUP_THRESHOLD);
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Terms in graded-lex order.
    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn coeff(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    /// Total degree; 0 for the zero polynomial.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn is_homogeneous(&self) -> bool {
        let mut degs = self.terms.keys().map(Monomial::degree);
        match degs.next() {
            None => true,
            Some(d) => degs.all(|e| e == d),
        }
    }

    fn check_dims(&self, other: &Polynomial) -> Result<(), PolyError> {
        if self.nvars != other.nvars {
            return Err(PolyError::DimensionMismatch { left: self.nvars, right: other.nvars });
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_dims(other)?;
        let mut out = self.clone();
        for (m, c) in &other.terms {
            *out.terms.entry(m.clone()).or_insert(0.0) += c;
        }
        out.cleanup();
        Ok(out)
    }

    pub fn try_sub(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.try_add(&other.scale(-1.0))
    }

    pub fn try_mul(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_dims(other)?;
        let mut acc: HashMap<Monomial, f64> = HashMap::with_capacity(self.len() * other.len());
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                *acc.entry(ma.mul(mb)).or_insert(0.0) += ca * cb;
            }
        }
        Ok(Polynomial::from_terms(self.nvars, acc))
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let mut out = Polynomial {
            nvars: self.nvars,
            terms: self.terms.iter().map(|(m, c)| (m.clone(), c * s)).collect(),
        };
        out.cleanup();
        out
    }

    /// `p^k` by repeated squaring.
    pub fn pow(&self, k: u32) -> Polynomial {
        let mut result = Polynomial::constant(self.nvars, 1.0);
        let mut base = self.clone();
        let mut k = k;
        while k > 0 {
            if k & 1 == 1 {
                result = &result * &base;
            }
            k >>= 1;
            if k > 0 {
                base = &base * &base;
            }
        }
        result
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, PolyError> {
        if x.len() != self.nvars {
            return Err(PolyError::DimensionMismatch { left: self.nvars, right: x.len() });
        }
        Ok(self.terms.iter().map(|(m, c)| c * m.eval(x)).sum())
    }

    /// `∂p/∂x_i`
    pub fn partial(&self, i: usize) -> Result<Polynomial, PolyError> {
        if i >= self.nvars {
            return Err(PolyError::IndexOutOfRange { index: i, nvars: self.nvars });
        }
        let terms = self.terms.iter().filter(|(m, _)| m.0[i] > 0).map(|(m, &c)| {
            let mut e = m.0.clone();
            let k = e[i];
            e[i] -= 1;
            (Monomial(e), c * k as f64)
        });
        Ok(Polynomial::from_terms(self.nvars, terms))
    }

    /// Appends a variable `y` and pads each term to total degree `target`.
    pub fn homogenize(&self, target: u32) -> Result<Polynomial, PolyError> {
        let deg = self.degree();
        if deg > target {
            return Err(PolyError::DegreeTooHigh { degree: deg, target });
        }
        let terms = self.terms.iter().map(|(m, &c)| {
            let mut e = m.0.clone();
            e.push(target - m.degree());
            (Monomial(e), c)
        });
        Ok(Polynomial::from_terms(self.nvars + 1, terms))
    }

    /// Replaces every `x_i` by `v_i^2 - w_i^2`; the result has variables
    /// `(v_1..v_n, w_1..w_n)`.
    pub fn substitute_square_difference(&self) -> Polynomial {
        let n = self.nvars;
        let mut acc: HashMap<Monomial, f64> = HashMap::new();
        for (m, &c) in &self.terms {
            // Expand Π_i (v_i^2 - w_i^2)^{e_i} one variable at a time.
            let mut partial: Vec<(Vec<u32>, f64)> = vec![(vec![0; 2 * n], c)];
            for (i, &e) in m.0.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                let mut next = Vec::with_capacity(partial.len() * (e as usize + 1));
                for (exps, coef) in &partial {
                    for k in 0..=e {
                        let mut ex = exps.clone();
                        ex[i] += 2 * (e - k);
                        ex[n + i] += 2 * k;
                        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                        next.push((ex, coef * sign * binomial(e, k)));
                    }
                }
                partial = next;
            }
            for (ex, coef) in partial {
                *acc.entry(Monomial(ex)).or_insert(0.0) += coef;
            }
        }
        Polynomial::from_terms(2 * n, acc)
    }

    /// Smallest stored coefficient, 0 for the zero polynomial.
    pub fn min_coefficient(&self) -> f64 {
        self.terms.values().copied().fold(None, |acc: Option<f64>, c| {
            Some(acc.map_or(c, |a| a.min(c)))
        })
        .unwrap_or(0.0)
    }

    pub fn max_abs_coefficient(&self) -> f64 {
        self.terms.values().fold(0.0, |a, c| a.max(c.abs()))
    }

    /// `Σ_α |c_α| R^{|α|}`, an upper bound on `|p|` over the box `|x_i| ≤ R`.
    pub fn monomial_bound(&self, r: f64) -> f64 {
        self.terms
            .iter()
            .map(|(m, c)| c.abs() * r.powi(m.degree() as i32))
            .sum()
    }

    /// Average of `Tr H_g` over the unit sphere with respect to the
    /// rotation-invariant probability measure.
    pub fn sphere_integral_tr_hessian(&self) -> f64 {
        let n = self.nvars;
        let mut total = 0.0;
        for i in 0..n {
            let d2 = self.partial(i).and_then(|p| p.partial(i)).expect("index in range");
            for (m, c) in d2.terms() {
                total += c * sphere_moment(m.exps());
            }
        }
        total
    }

    /// Hessian biform `yᵀ H_p(x) y` in variables `(x_1..x_n, y_1..y_n)`.
    pub fn hessian_biform(&self) -> Polynomial {
        let n = self.nvars;
        let mut acc: HashMap<Monomial, f64> = HashMap::new();
        for i in 0..n {
            let di = self.partial(i).expect("index in range");
            for j in 0..n {
                let dij = di.partial(j).expect("index in range");
                for (m, c) in dij.terms() {
                    let mut e = m.0.clone();
                    e.extend(std::iter::repeat(0).take(n));
                    e[n + i] += 1;
                    e[n + j] += 1;
                    *acc.entry(Monomial(e)).or_insert(0.0) += c;
                }
            }
        }
        Polynomial::from_terms(2 * n, acc)
    }

    /// Renames variables: variable `i` of `self` becomes variable `map[i]` of
    /// a polynomial in `nvars` variables. Exponents of colliding targets add.
    pub fn embed(&self, nvars: usize, map: &[usize]) -> Polynomial {
        assert_eq!(map.len(), self.nvars);
        let terms = self.terms.iter().map(|(m, &c)| {
            let mut e = vec![0; nvars];
            for (i, &k) in m.0.iter().enumerate() {
                e[map[i]] += k;
            }
            (Monomial(e), c)
        });
        Polynomial::from_terms(nvars, terms)
    }

    /// Part of the polynomial with total degree exactly `d`.
    pub fn homogeneous_part(&self, d: u32) -> Polynomial {
        Polynomial {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .filter(|(m, _)| m.degree() == d)
                .map(|(m, &c)| (m.clone(), c))
                .collect(),
        }
    }

    /// Largest coefficientwise difference `max |p_α - q_α|`.
    pub fn max_coeff_diff(&self, other: &Polynomial) -> f64 {
        let mut worst: f64 = 0.0;
        for (m, c) in &self.terms {
            worst = worst.max((c - other.coeff(m)).abs());
        }
        for (m, c) in &other.terms {
            if !self.terms.contains_key(m) {
                worst = worst.max(c.abs());
            }
        }
        worst
    }
}

/// Normalized sphere moment of `x^α`: zero unless all exponents are even, in
/// which case it is `Π_j Γ(β_j) / (π^{n/2} Γ(Σβ_j)) · Γ(n/2)` with
/// `β_j = (α_j+1)/2`, evaluated through the half-integer Gamma identity.
pub fn sphere_moment(alpha: &[u32]) -> f64 {
    if alpha.iter().any(|a| a % 2 == 1) {
        return 0.0;
    }
    let n = alpha.len() as f64;
    let mut num = 1.0;
    let mut k_total = 0u32;
    for &a in alpha {
        let k = a / 2;
        // Γ(k+1/2)/√π = (2k)! / (4^k k!) = Π_{i=1}^k (2i-1)/2
        num *= gamma_half_over_sqrt_pi(k);
        k_total += k;
    }
    // Γ(n/2) / Γ(n/2 + K) = 1 / Π_{t<K} (n/2 + t)
    let mut den = 1.0;
    for t in 0..k_total {
        den *= n / 2.0 + t as f64;
    }
    num / den
}

/// `Γ(k + 1/2) / √π`
pub fn gamma_half_over_sqrt_pi(k: u32) -> f64 {
    (1..=k).map(|i| (2 * i - 1) as f64 / 2.0).product()
}

pub fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r.round()
}

impl std::ops::Add<&Polynomial> for &Polynomial {
    type Output = Polynomial;
    /// Panics on a variable count mismatch; use [`Polynomial::try_add`] to recover.
    fn add(self, rhs: &Polynomial) -> Polynomial {
        self.try_add(rhs).expect("polynomial dimension mismatch")
    }
}

impl std::ops::Sub<&Polynomial> for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self.try_sub(rhs).expect("polynomial dimension mismatch")
    }
}

impl std::ops::Mul<&Polynomial> for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        self.try_mul(rhs).expect("polynomial dimension mismatch")
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for (m, c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "{c}")?;
            for (i, &e) in m.0.iter().enumerate() {
                match e {
                    0 => {}
                    1 => write!(f, "*x{}", i + 1)?,
                    _ => write!(f, "*x{}^{}", i + 1, e)?,
                }
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct PolyJson {
    nvars: usize,
    terms: Vec<(Vec<u32>, f64)>,
}

impl Serialize for Polynomial {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PolyJson {
            nvars: self.nvars,
            terms: self.terms.iter().map(|(m, &c)| (m.0.clone(), c)).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Polynomial {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = PolyJson::deserialize(d)?;
        if raw.nvars == 0 {
            return Err(serde::de::Error::custom("nvars must be positive"));
        }
        for (e, _) in &raw.terms {
            if e.len() != raw.nvars {
                return Err(serde::de::Error::custom(format!(
                    "exponent vector of length {} in a polynomial with {} variables",
                    e.len(),
                    raw.nvars
                )));
            }
        }
        Ok(Polynomial::from_terms(
            raw.nvars,
            raw.terms.into_iter().map(|(e, c)| (Monomial(e), c)),
        ))
    }
}
