//! Oracles shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sosrelax::basispursuit::{inner, SdpData};
use sosrelax::colgen::{self, ColGenOptions, Mode};
use sosrelax::conic::{ConeProgram, ProgramBuilder};
use sosrelax::gram::PolyRows;
use sosrelax::{GraphInstance, Polynomial, SymMatrix};

/// Solves a small dense system by Gaussian elimination with partial pivoting.
pub fn gauss(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))?;
        if a[p][k].abs() < 1e-10 {
            return None;
        }
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    if n < k {
        return vec![];
    }
    let mut out = subsets(n - 1, k);
    for mut s in subsets(n - 1, k - 1) {
        s.push(n - 1);
        out.push(s);
    }
    out
}

/// Optimal value of `min cᵀx, Ax = b, x ≥ 0` by enumerating basic feasible solutions.
pub fn vertex_enumeration(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Option<f64> {
    let m = a.len();
    let n = c.len();
    let mut best: Option<f64> = None;
    for basis in subsets(n, m) {
        let sub: Vec<Vec<f64>> = (0..m).map(|i| basis.iter().map(|&j| a[i][j]).collect()).collect();
        if let Some(xb) = gauss(sub, b.to_vec()) {
            if xb.iter().all(|&v| v >= -1e-9) {
                let val: f64 = basis.iter().zip(&xb).map(|(&j, &v)| c[j] * v).sum();
                best = Some(best.map_or(val, |b: f64| b.min(val)));
            }
        }
    }
    best
}

pub fn lp_program(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> ConeProgram {
    let mut pb = ProgramBuilder::new();
    for &v in b {
        pb.add_row(v);
    }
    for j in 0..c.len() {
        pb.add_nonneg((0..a.len()).map(|i| (i, a[i][j])).collect(), c[j]);
    }
    pb.build()
}

pub fn random_bounded_lp(rng: &mut ChaCha8Rng, m: usize, n: usize) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let a: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
    let b: Vec<f64> = a.iter().map(|row| row.iter().zip(&x0).map(|(p, q)| p * q).sum()).collect();
    let y0: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let c: Vec<f64> = (0..n).map(|j| (0..m).map(|i| a[i][j] * y0[i]).sum::<f64>() + rng.gen_range(0.1..1.0)).collect();
    (a, b, c)
}

pub fn stability_number(g: &GraphInstance) -> usize {
    let n = g.n;
    let mut best = 0;
    for set in 0u32..(1 << n) {
        let size = set.count_ones() as usize;
        if size <= best {
            continue;
        }
        let independent = (0..n).all(|i| set >> i & 1 == 0 || (i + 1..n).all(|j| set >> j & 1 == 0 || !g.has_edge(i, j)));
        if independent {
            best = size;
        }
    }
    best
}

pub fn subset_sum_split(a: &[u64]) -> bool {
    let total: u64 = a.iter().sum();
    if total % 2 == 1 {
        return false;
    }
    let mut reach = vec![false; total as usize / 2 + 1];
    reach[0] = true;
    for &v in a {
        for s in (v as usize..reach.len()).rev() {
            reach[s] |= reach[s - v as usize];
        }
    }
    reach[total as usize / 2]
}

/// Minimum over points of the cube surface `[-1, 1]ⁿ`, projected to the sphere.
pub fn sphere_grid_min(p: &Polynomial, steps: usize) -> f64 {
    let n = p.nvars();
    let ticks: Vec<f64> = (0..=steps).map(|k| -1.0 + 2.0 * k as f64 / steps as f64).collect();
    let mut best = f64::INFINITY;
    let mut idx = vec![0usize; n];
    loop {
        let x: Vec<f64> = idx.iter().map(|&k| ticks[k]).collect();
        if x.iter().any(|v| v.abs() == 1.0) {
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let z: Vec<f64> = x.iter().map(|v| v / norm).collect();
            best = best.min(p.eval(&z).unwrap());
        }
        let mut k = 0;
        while k < n {
            idx[k] += 1;
            if idx[k] <= steps {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == n {
            return best;
        }
    }
}

pub fn unit_point(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r2: f64 = x.iter().map(|v| v * v).sum();
        if r2 > 1e-4 && r2 <= 1.0 {
            let r = r2.sqrt();
            return x.iter().map(|v| v / r).collect();
        }
    }
}

pub fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
    let mut m = SymMatrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            m.set(i, j, rng.gen_range(-1.0..1.0));
        }
    }
    m
}

pub fn random_pd(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
    let g = random_sym(rng, n).to_dense();
    let gg = g.transpose().matmul(&g);
    SymMatrix::from_dense(&gg).add(&SymMatrix::identity(n).scale(0.1))
}

/// Instance with `X = I` feasible, so the inner sequence starts feasible.
pub fn inner_instance(seed: u64) -> SdpData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(3..=5);
    let m = rng.gen_range(2..=4);
    let a: Vec<SymMatrix> = (0..m).map(|_| random_sym(&mut rng, n)).collect();
    let b = a.iter().map(|ai| ai.trace()).collect();
    let c = random_sym(&mut rng, n).add(&SymMatrix::identity(n).scale(n as f64));
    SdpData::new(c, a, b).unwrap()
}

/// Instance with a diagonally dominant cost, so `y = 0` is dual feasible, and a
/// positive definite primal point.
pub fn outer_instance(seed: u64) -> SdpData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(3..=5);
    let m = rng.gen_range(2..=4);
    let a: Vec<SymMatrix> = (0..m).map(|_| random_sym(&mut rng, n)).collect();
    let x0 = random_pd(&mut rng, n);
    let b = a.iter().map(|ai| inner(ai, &x0)).collect();
    let mut c = random_sym(&mut rng, n);
    for i in 0..n {
        c.set(i, i, n as f64 + 1.0);
    }
    SdpData::new(c, a, b).unwrap()
}

/// Column generation state of the sphere master `max λ, p − λ(Σx²)² ∈ cone`.
pub fn sphere_min_state(p: &Polynomial, iters: usize) -> colgen::ColGenState {
    let n = p.nvars();
    let mut pb = ProgramBuilder::new();
    let mut rows = PolyRows::new();
    rows.add_rhs(&mut pb, 0, p, 1.0);
    let col = rows.column(&mut pb, 0, &Polynomial::sum_of_squares(n).pow(2), 1.0);
    pb.add_free(col, -1.0);
    let b = sosrelax::poly::monomials_of_degree(n, 2);
    let table = rows.table(&mut pb, 0, &b);
    let mp = colgen::MasterProblem { base: pb, table, sense: -1.0 };
    colgen::run(&mp, &ColGenOptions { mode: Mode::LpEigen, iters, ..Default::default() }).unwrap()
}
