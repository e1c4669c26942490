use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sosrelax::gram::{
    self, basis, convexity_membership, gram_map, interior_dsos_convex, interior_dsos_convex_form, membership,
    r_membership, BasisKind, ConeTag,
};
use sosrelax::linalg::{eig_sym, Mat, SymMatrix};
use sosrelax::poly::{Monomial, Polynomial};

fn poly(n: usize, terms: &[(&[u32], f64)]) -> Polynomial {
    Polynomial::from_terms(n, terms.iter().map(|(e, c)| (Monomial(e.to_vec()), *c)))
}

/// x⁴y² + x²y⁴ − 3x²y² + 1, homogenized with z.
fn motzkin_form() -> Polynomial {
    poly(3, &[(&[4, 2, 0], 1.0), (&[2, 4, 0], 1.0), (&[2, 2, 2], -3.0), (&[0, 0, 6], 1.0)])
}

fn random_unit_points(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| {
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.iter().map(|x| x / norm).collect()
        })
        .collect()
}

#[test]
fn motzkin_multiplier_levels() {
    let m = motzkin_form();
    assert!(membership(&m, ConeTag::DD, None).unwrap().is_none());
    assert!(membership(&m, ConeTag::SDD, None).unwrap().is_none());
    // one multiplier is not enough for the scaled-dd cone (margin about -0.012)
    assert!(r_membership(&m, 1, ConeTag::SDD).unwrap().is_none());
    let cert = r_membership(&m, 2, ConeTag::DD).unwrap().expect("2-dsos");
    let target = m.try_mul(&Polynomial::sum_of_squares(3).pow(2)).unwrap();
    cert.validate(&target).unwrap();
}

#[test]
fn r_zero_matches_membership_and_dsos_stays_dsos() {
    let p = poly(2, &[(&[4, 0], 1.0), (&[2, 2], 1.0), (&[0, 4], 1.0)]);
    assert!(r_membership(&p, 0, ConeTag::DD).unwrap().is_some());
    let cert = r_membership(&p, 1, ConeTag::DD).unwrap().expect("still dsos");
    cert.validate(&p.try_mul(&Polynomial::sum_of_squares(2)).unwrap()).unwrap();
}

#[test]
fn gram_map_matches_expansion_under_basis_change() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let b = basis(3, 2, BasisKind::ExactDegree(2));
    let dim = b.len();
    let u = Mat::from_rows(&(0..dim).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect::<Vec<_>>());
    let mut q = SymMatrix::zeros(dim);
    for i in 0..dim {
        for j in i..dim {
            q.set(i, j, rng.gen_range(-1.0..1.0));
        }
    }
    let map = gram_map(&b, Some(&u)).unwrap();
    let via_map = map.apply(&q);
    let cert = gram::GramCertificate { basis: b.clone(), u: u.clone(), q: q.clone(), cone_tag: ConeTag::DD };
    let direct = cert.reconstruct();
    assert!(via_map.max_coeff_diff(&direct) < 1e-10);
    // independent expansion: (U z)ᵀ Q (U z) at random points
    for _ in 0..5 {
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let z: Vec<f64> = b.entries.iter().map(|m| m.eval(&x)).collect();
        let uz = u.matvec(&z);
        let val = q.quad(&uz);
        assert!((via_map.eval(&x).unwrap() - val).abs() < 1e-10);
    }
}

#[test]
fn convexity_examples() {
    let p = Polynomial::sum_of_squares(2);
    let cert = convexity_membership(&p, ConeTag::DD).unwrap().expect("dsos-convex");
    cert.validate(&p.hessian_biform()).unwrap();
    let q = cert.gram();
    assert!((q.get(0, 0) - 2.0).abs() < 1e-6 && (q.get(1, 1) - 2.0).abs() < 1e-6 && q.get(0, 1).abs() < 1e-6);

    let radial = Polynomial::sum_of_squares(3).pow(4);
    assert!(convexity_membership(&radial, ConeTag::DD).unwrap().is_none());
    assert!(convexity_membership(&radial, ConeTag::SDD).unwrap().is_none());
}

#[test]
fn interior_constructions_are_strictly_dd() {
    let base = interior_dsos_convex(2, 2).unwrap();
    assert_eq!(base, Polynomial::sum_of_squares(2));
    let p4 = interior_dsos_convex_form(2, 2).unwrap();
    let m = gram::convexity_margin(&p4, ConeTag::DD).unwrap();
    assert!(m.margin >= gram::INTERIOR_MARGIN);
    let p34 = interior_dsos_convex(3, 4).unwrap();
    assert!(!p34.is_homogeneous());
    let cert = convexity_membership(&p34, ConeTag::DD).unwrap().expect("dsos-convex");
    cert.validate(&p34.hessian_biform()).unwrap();
    let form = interior_dsos_convex_form(3, 2).unwrap();
    assert!(gram::convexity_margin(&form, ConeTag::DD).unwrap().margin >= gram::INTERIOR_MARGIN);
}

fn random_quartic_form(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> Polynomial {
    let mons = sosrelax::poly::monomials_of_degree(n, 4);
    let p = Polynomial::from_terms(n, mons.into_iter().map(|m| (m, rng.gen_range(-1.0..1.0))));
    &p + &Polynomial::sum_of_squares(n).pow(2).scale(shift)
}

#[test]
fn cone_chain_and_sampled_nonnegativity() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut dsos_count = 0;
    for _ in 0..40 {
        let n = rng.gen_range(2..=3);
        let shift = rng.gen_range(0.0..3.0);
        let p = random_quartic_form(&mut rng, n, shift);
        let dd = membership(&p, ConeTag::DD, None).unwrap();
        let sdd = membership(&p, ConeTag::SDD, None).unwrap();
        if let Some(c) = &dd {
            dsos_count += 1;
            c.validate(&p).unwrap();
            assert!(sdd.is_some(), "dsos must imply sdsos");
        }
        if let Some(c) = &sdd {
            c.validate(&p).unwrap();
            for x in random_unit_points(&mut rng, n, 200) {
                assert!(p.eval(&x).unwrap() >= -1e-6);
            }
        }
    }
    assert!(dsos_count > 5);
}

#[test]
fn convexity_certificates_give_psd_hessians() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..10 {
        let p = random_quartic_form(&mut rng, 2, 4.0);
        if convexity_membership(&p, ConeTag::DD).unwrap().is_some() {
            for x in random_unit_points(&mut rng, 2, 100) {
                let h = SymMatrix::from_fn(2, |i, j| p.partial(i).unwrap().partial(j).unwrap().eval(&x).unwrap());
                assert!(eig_sym(&h).unwrap().values[0] >= -1e-6);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn membership_is_scale_invariant(seed in 0u64..1000, shift in 0.5f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_quartic_form(&mut rng, 2, shift);
        let a = membership(&p, ConeTag::DD, None).unwrap().is_some();
        let b = membership(&p.scale(10.0), ConeTag::DD, None).unwrap().is_some();
        // the threshold is relative, so only clear cases must agree
        let margin = gram::max_margin(&p, &gram::basis_for(&p).unwrap(), None, ConeTag::DD, 1.0).unwrap().margin;
        if margin.abs() > 1e-5 {
            prop_assert_eq!(a, b);
        }
    }
}
