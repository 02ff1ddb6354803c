//! Beta variates through the Gamma reparameterization
//! `G = g1 / (g1 + g2)`, `g1 ~ Gamma(α, 1)`, `g2 ~ Gamma(β, 1)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Unit-scale Gamma draw: Marsaglia–Tsang squeeze for `shape >= 1`, and
/// the `Gamma(shape + 1) · U^(1/shape)` boost below one.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0);
    if shape < 1.0 {
        let u = open_unit(rng);
        return sample_gamma(shape + 1.0, rng) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = open_unit(rng);
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Uniform on (0, 1].
fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.gen::<f64>()
}

/// One Beta(α, β) variate, kept strictly inside (0, 1).
pub fn guidance_sample<R: Rng + ?Sized>(alpha: f64, beta: f64, rng: &mut R) -> Result<f64> {
    if !(alpha > 0.0 && beta > 0.0) || !alpha.is_finite() || !beta.is_finite() {
        return Err(Error::Parameter(format!(
            "Beta shapes must be positive and finite, got ({alpha}, {beta})"
        )));
    }
    let g1 = sample_gamma(alpha, rng);
    let g2 = sample_gamma(beta, rng);
    let sum = g1 + g2;
    let g = if sum > 0.0 {
        g1 / sum
    } else {
        alpha / (alpha + beta)
    };
    Ok(g.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
}

/// Independent generator for one `(iteration, pixel)` cell of a seeded run.
/// Each cell owns its own ChaCha stream, so draws do not depend on the
/// order in which pixels are visited.
pub fn cell_rng(seed: u64, iteration: usize, pixel: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((iteration as u64) << 40) ^ pixel as u64);
    rng
}
