use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sphere::unit_point;

use sosrelax::poly::monomials_of_degree;
use sosrelax::polya::{self, pol_membership, Membership, PopInstance, Variant};
use sosrelax::Polynomial;

mod sphere {
    use rand::Rng;

    /// Uniform point on the unit sphere (normalized Gaussian by Box–Muller).
    pub fn unit_point(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        loop {
            let z: Vec<f64> = (0..n)
                .map(|_| {
                    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                    let u2: f64 = rng.gen();
                    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                })
                .collect();
            let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-6 {
                return z.iter().map(|v| v / norm).collect();
            }
        }
    }
}

fn toy() -> PopInstance {
    let x = Polynomial::var(1, 0);
    let one_minus = &Polynomial::constant(1, 1.0) - &x;
    PopInstance::new(x.clone(), vec![x, one_minus], 1.0).unwrap()
}

fn random_even_form(n: usize, deg: u32, lo: f64, seed: u64) -> Polynomial {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Polynomial::from_terms(n, monomials_of_degree(n, deg).into_iter().map(|m| (m, rng.gen_range(lo..1.0))))
}

fn sphere_min_sampled(q: &Polynomial, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples).map(|_| q.eval(&unit_point(&mut rng, q.nvars())).unwrap()).fold(f64::INFINITY, f64::min)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    // an accepted q satisfies q ≥ −1/(2r) on the unit sphere, which is what
    // makes every accepted γ satisfy f_γ ≥ 1/(2r) there
    #[test]
    fn accepted_forms_respect_the_sphere_floor(seed in 0u64..10_000, r in 1u32..=4, lo in -1.0f64..0.5) {
        let q = random_even_form(2, 4, lo, seed);
        let out = pol_membership(&q, r).unwrap();
        if out == Membership::Member {
            let floor = -0.5 / r as f64 - 1e-9;
            prop_assert!(sphere_min_sampled(&q, 2000, seed) >= floor);
        }
        // and a form below the floor somewhere is never accepted
        let shifted = &q - &Polynomial::sum_of_squares(2).pow(2).scale(sphere_min_sampled(&q, 500, seed) + 1.0);
        prop_assert_ne!(pol_membership(&shifted, r).unwrap(), Membership::Member);
    }

}

#[test]
fn random_forms_are_sometimes_accepted() {
    // the transformed form vanishes where v = w, so acceptance needs the
    // 1/(2r) term to outweigh the cross terms; in two variables that starts at r = 4
    let accepted = (0..40).filter(|&seed| pol_membership(&random_even_form(2, 4, -0.1, seed), 4).unwrap() == Membership::Member).count();
    assert!(accepted >= 5, "{accepted}");
}

#[test]
fn toy_hierarchy_is_valid() {
    let pop = toy();
    let res = polya::run(&pop, 3, None, 1e-3, Variant::Pol).unwrap();
    for &l in &res.l {
        assert!(l <= 1e-6, "{:?}", res.l);
    }
    for w in res.m.windows(2) {
        assert!(w[1] >= w[0]);
    }
    for lv in &res.levels {
        // the lower end of the bracket comes first
        assert_eq!(lv.tests[0].gamma, polya::default_bracket(&pop).0);
    }
}

#[test]
fn gamma_above_the_minimum_is_rejected() {
    let pop = toy();
    let b = polya::bounds(&pop);
    for r in 1..=5 {
        let q = polya::level_form(&pop, &b, r, 0.1).unwrap();
        assert_eq!(pol_membership(&q, r).unwrap(), Membership::NotMember, "r = {r}");
    }
}

#[test]
fn f_gamma_is_a_form_in_the_lifted_variables() {
    let pop = toy();
    let b = polya::bounds(&pop);
    for gamma in [-1.0, -0.5, 0.0, 0.3] {
        let f = polya::build_f_gamma(&pop, &b, gamma).unwrap();
        assert!(f.is_homogeneous());
        assert_eq!(f.nvars(), pop.lifted_nvars());
        assert_eq!(f.degree(), pop.lifted_degree());
    }
}

#[test]
fn oversized_products_are_unevaluated() {
    // nonnegative, so the sphere search cannot reject it early
    let q = Polynomial::sum_of_squares(6).pow(2);
    assert_eq!(pol_membership(&q, 40).unwrap(), Membership::Unevaluated);
}

#[test]
fn bad_instances_are_rejected() {
    assert!(PopInstance::new(Polynomial::var(1, 0), vec![], 0.0).is_err());
    assert!(PopInstance::new(Polynomial::var(1, 0), vec![Polynomial::var(2, 0)], 1.0).is_err());
    assert!(polya::run(&toy(), 0, None, 1e-3, Variant::Pol).is_err());
}
