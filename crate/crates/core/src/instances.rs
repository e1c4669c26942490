//! Standard and random test instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::apps::GraphInstance;
use crate::poly::{monomials_of_degree, Polynomial};

/// Petersen graph: outer 5-cycle, inner pentagram, spokes.
pub fn petersen() -> GraphInstance {
    let mut edges = Vec::new();
    for i in 0..5 {
        edges.push((i, (i + 1) % 5));
        edges.push((5 + i, 5 + (i + 2) % 5));
        edges.push((i, 5 + i));
    }
    GraphInstance::new(10, &edges)
}

/// Complement of the Petersen graph; its stability number is 2.
pub fn petersen_complement() -> GraphInstance {
    petersen().complement()
}

pub fn cycle(n: usize) -> GraphInstance {
    let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    GraphInstance::new(n, &edges)
}

pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> GraphInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                edges.push((i, j));
            }
        }
    }
    GraphInstance::new(n, &edges)
}

/// Form of degree `degree` with coefficients uniform in `[-1, 1]`.
pub fn random_form(n: usize, degree: u32, seed: u64) -> Polynomial {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Polynomial::from_terms(n, monomials_of_degree(n, degree).into_iter().map(|m| (m, rng.gen_range(-1.0..1.0))))
}

/// Polynomial with all monomials of degree `1..=degree`, coefficients in `[-1, 1]`.
pub fn random_polynomial(n: usize, degree: u32, seed: u64) -> Polynomial {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terms: Vec<_> = (1..=degree).flat_map(|d| monomials_of_degree(n, d)).map(|m| (m, rng.gen_range(-1.0..1.0))).collect();
    Polynomial::from_terms(n, terms)
}
