//! Guided iterative disparity refinement.
//!
//! Every iteration compares the ordering map of the current disparity with
//! the monocular one, turns the agreement into Beta-distributed guidance,
//! and amplifies the matching update by `1 + G · r · t / T` before adding
//! it to the disparity.

mod sampling;

pub use sampling::{cell_rng, guidance_sample, sample_gamma};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::matching::{lookup, matching_update, CostSlice, CostVolume};
use crate::ordering::{ordering_agreement, ordering_map, OrderingStack};

/// Per-pixel Beta parameters and the guidance value used for re-weighting.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceField {
    pub alpha: ScalarField,
    pub beta: ScalarField,
    pub g: ScalarField,
}

/// `α = 1 + κ(1 − a)`, `β = 1 + κa`, `g = α / (α + β)`.
///
/// Guidance is therefore large where the orderings disagree and exactly
/// 0.5 at agreement 0.5. Pixels with invalid agreement get invalid
/// guidance.
pub fn guidance_from_agreement(agreement: &ScalarField, kappa: f64) -> Result<GuidanceField> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::Parameter(format!("kappa must be > 0, got {kappa}")));
    }
    let alpha = agreement.map(|a| 1.0 + kappa * (1.0 - a.clamp(0.0, 1.0)));
    let beta = agreement.map(|a| 1.0 + kappa * a.clamp(0.0, 1.0));
    let (w, h) = agreement.dims();
    let g = ScalarField::from_fn_opt(w, h, |u, v| {
        let a = alpha.get(u, v)?;
        let b = beta.get(u, v)?;
        Some(a / (a + b))
    });
    Ok(GuidanceField { alpha, beta, g })
}

/// Replaces the deterministic guidance with one Beta draw per pixel, each
/// from its own seeded stream.
pub fn sample_guidance(field: &GuidanceField, seed: u64, iteration: usize) -> ScalarField {
    let (w, h) = field.g.dims();
    let draws: Vec<Option<f64>> = (0..w * h)
        .into_par_iter()
        .map(|p| {
            let a = field.alpha.at(p)?;
            let b = field.beta.at(p)?;
            guidance_sample(a, b, &mut cell_rng(seed, iteration, p)).ok()
        })
        .collect();
    ScalarField::from_fn_opt(w, h, |u, v| draws[v * w + u])
}

/// `Δ̃ = Δ · (1 + g · r · t / T)` with `t` counted from 1.
///
/// Invalid update pixels pass through unchanged; invalid guidance acts as
/// `g = 0`.
pub fn reweight_update(
    delta: &ScalarField,
    g: &ScalarField,
    r: f64,
    t: usize,
    total: usize,
) -> Result<ScalarField> {
    delta.ensure_same_dims(g, "update vs guidance")?;
    if t < 1 || t > total {
        return Err(Error::Parameter(format!(
            "iteration {t} outside 1..={total}"
        )));
    }
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::Parameter(format!(
            "amplitude r must be >= 0, got {r}"
        )));
    }
    let ramp = r * t as f64 / total as f64;
    let (w, h) = delta.dims();
    Ok(ScalarField::from_fn_opt(w, h, |u, v| {
        let d = delta.get(u, v)?;
        let gv = g.get(u, v).unwrap_or(0.0);
        Some(d * (1.0 + gv * ramp))
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IterationConfig {
    /// Number of refinement iterations `T`.
    pub iterations: usize,
    /// Guidance amplitude `r`.
    pub amplitude: f64,
    /// Lookup radius in candidates.
    pub radius: usize,
    pub temperature: f64,
    /// Beta concentration used to turn agreement into guidance.
    pub kappa: f64,
    /// Seed for stochastic guidance; `None` uses `g = α / (α + β)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_seed: Option<u64>,
    /// Ordering-map settings for the stereo side. Windows must match the
    /// monocular stack.
    pub use_sigmoid: bool,
    pub pre_scale: f64,
}

impl Default for IterationConfig {
    fn default() -> Self {
        IterationConfig {
            iterations: 8,
            amplitude: 1.0,
            radius: 4,
            temperature: 0.07,
            kappa: 4.0,
            sample_seed: None,
            use_sigmoid: true,
            pre_scale: 1.0,
        }
    }
}

impl IterationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Parameter("iterations must be >= 1".into()));
        }
        if !(self.amplitude >= 0.0) {
            return Err(Error::Parameter("amplitude r must be >= 0".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Parameter("temperature must be > 0".into()));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::Parameter("kappa must be > 0".into()));
        }
        if !(self.pre_scale > 0.0) {
            return Err(Error::Parameter("pre_scale must be > 0".into()));
        }
        Ok(())
    }
}

/// Everything the iteration produced, including what global fusion reuses.
#[derive(Debug, Clone)]
pub struct IterationTrace {
    /// `D_d^1 ..= D_d^T`.
    pub iterates: Vec<ScalarField>,
    /// Guidance applied at each iteration (all zero without a monocular map).
    pub guidance: Vec<ScalarField>,
    /// Cost samples around the final disparity.
    pub final_slice: CostSlice,
    /// Ordering agreement from the last iteration.
    pub final_agreement: Option<ScalarField>,
}

impl IterationTrace {
    pub fn last(&self) -> &ScalarField {
        self.iterates
            .last()
            .expect("trace holds at least one iterate")
    }
}

/// Runs `T` refinement steps `D^t = clamp(D^{t−1} + Δ̃, 0, d_max − 1)`.
///
/// Without a monocular ordering map the guidance is zero and the loop
/// reduces to plain cost-driven refinement.
pub fn iterate(
    volume: &CostVolume,
    init: &ScalarField,
    mono_ordering: Option<&OrderingStack>,
    config: &IterationConfig,
) -> Result<IterationTrace> {
    config.validate()?;
    if init.dims() != volume.dims() {
        return Err(Error::dims(
            "initial disparity vs cost volume",
            init.dims(),
            volume.dims(),
        ));
    }
    if let Some(m) = mono_ordering {
        if m.dims() != volume.dims() {
            return Err(Error::dims(
                "mono ordering vs cost volume",
                m.dims(),
                volume.dims(),
            ));
        }
    }
    let hi = (volume.d_max() - 1) as f64;
    if let Some((lo, top)) = init.min_max() {
        if lo < 0.0 || top > hi {
            return Err(Error::Parameter(format!(
                "initial disparity range [{lo}, {top}] exceeds [0, {hi}]"
            )));
        }
    }
    let (w, h) = init.dims();
    let total = config.iterations;
    let mut current = init.clone();
    let mut iterates = Vec::with_capacity(total);
    let mut guidance = Vec::with_capacity(total);
    let mut final_agreement = None;

    for t in 1..=total {
        let g = match mono_ordering {
            Some(mono) => {
                let stereo = ordering_map(
                    &current,
                    mono.windows(),
                    config.use_sigmoid,
                    config.pre_scale,
                )?;
                let agreement = ordering_agreement(mono, &stereo)?;
                let field = guidance_from_agreement(&agreement, config.kappa)?;
                final_agreement = Some(agreement);
                match config.sample_seed {
                    Some(seed) => sample_guidance(&field, seed, t),
                    None => field.g,
                }
            }
            None => ScalarField::filled(w, h, 0.0),
        };
        let slice = lookup(volume, &current, config.radius)?;
        let delta = matching_update(&slice, config.temperature)?;
        let step = reweight_update(&delta, &g, config.amplitude, t, total)?;
        current = ScalarField::from_fn_opt(w, h, |u, v| {
            let d = current.get(u, v)?;
            Some(match step.get(u, v) {
                Some(s) => (d + s).clamp(0.0, hi),
                None => d,
            })
        });
        iterates.push(current.clone());
        guidance.push(g);
    }
    let final_slice = lookup(volume, &current, config.radius)?;
    Ok(IterationTrace {
        iterates,
        guidance,
        final_slice,
        final_agreement,
    })
}
