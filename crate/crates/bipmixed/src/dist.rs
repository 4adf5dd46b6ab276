//! Small sampling helpers shared by the Gibbs updates.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

pub fn draw_standard_normal(rng: &mut impl Rng) -> f64 {
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

pub fn draw_normal(rng: &mut impl Rng, mean: f64, var: f64) -> f64 {
    debug_assert!(var >= 0.0);
    mean + var.sqrt() * draw_standard_normal(rng)
}

/// Inverse gamma with shape `a` and scale `b`: density proportional to
/// x^(-a-1) exp(-b / x). Drawn as the reciprocal of a Gamma(a, rate = b)
/// variate.
pub fn draw_inv_gamma(rng: &mut impl Rng, shape: f64, scale: f64) -> f64 {
    debug_assert!(shape > 0.0 && scale > 0.0);
    let g = Gamma::new(shape, 1.0 / scale).expect("valid gamma parameters");
    1.0 / g.sample(rng)
}
