//! Fixed workloads shared by the benchmarks.

use sosrelax::instances::random_form;
use sosrelax::polya::PopInstance;
use sosrelax::Polynomial;

/// Random quartic form in `n` variables with a fixed seed.
pub fn quartic(n: usize) -> Polynomial {
    random_form(n, 4, 7)
}

/// `min x  s.t.  x ≥ 0, 1 − x ≥ 0` over the unit ball.
pub fn toy_pop() -> PopInstance {
    let x = Polynomial::var(1, 0);
    let one_minus = &Polynomial::constant(1, 1.0) - &x;
    PopInstance::new(x.clone(), vec![x, one_minus], 1.0).expect("valid instance")
}
