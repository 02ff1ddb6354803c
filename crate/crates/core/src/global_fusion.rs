//! Registration of relative monocular depth onto disparity and the final
//! confidence-weighted fusion.
//!
//! Registration treats the optimized disparity as a noisy affine image of
//! the monocular map, `disp ≈ a · mono + b`, and solves it with Huber IRLS.
//! The local mode fits the same model per tile, shrunk toward the global
//! fit, and interpolates the tile parameters into per-pixel fields.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::matching::CostSlice;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegistrationMode {
    #[default]
    Global,
    Local,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    pub mode: RegistrationMode,
    pub irls_iters: usize,
    /// Huber threshold in units of the robust residual scale.
    pub huber_k: f64,
    pub min_inliers: usize,
    /// Stop once the relative parameter change drops below this.
    pub tolerance: f64,
    /// Tile side for the local mode.
    pub tile: usize,
    /// Pull of each tile toward the global fit, relative to its data term.
    pub lambda_reg: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            mode: RegistrationMode::Global,
            irls_iters: 20,
            huber_k: 1.345,
            min_inliers: 100,
            tolerance: 1e-8,
            tile: 32,
            lambda_reg: 0.01,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.irls_iters == 0 {
            return Err(Error::Parameter("irls_iters must be >= 1".into()));
        }
        if !(self.huber_k > 0.0) {
            return Err(Error::Parameter("huber_k must be > 0".into()));
        }
        if self.min_inliers < 2 {
            return Err(Error::Parameter("min_inliers must be >= 2".into()));
        }
        if self.tile < 16 {
            return Err(Error::Parameter(format!(
                "tile must be >= 16, got {}",
                self.tile
            )));
        }
        if !(self.lambda_reg >= 0.0) {
            return Err(Error::Parameter("lambda_reg must be >= 0".into()));
        }
        Ok(())
    }
}

/// Result of a robust line fit `y ≈ a·x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineFit {
    pub a: f64,
    pub b: f64,
    /// IRLS weights of the final solve, one per sample.
    pub weights: Vec<f64>,
    pub iterations: usize,
    /// Robust residual scale (1.4826 · median |residual|) at the last round.
    pub scale: f64,
}

/// Normal-equation sums, centered for stability.
fn solve_weighted(samples: impl Iterator<Item = (f64, f64, f64)> + Clone) -> Option<(f64, f64)> {
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (x, y, w) in samples.clone() {
        sw += w;
        sx += w * x;
        sy += w * y;
    }
    if !(sw > 0.0) {
        return None;
    }
    let (mx, my) = (sx / sw, sy / sw);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y, w) in samples {
        let dx = x - mx;
        sxx += w * dx * dx;
        sxy += w * dx * (y - my);
    }
    if !(sxx > 1e-12 * sw * (mx * mx + 1.0)) {
        return None;
    }
    let a = sxy / sxx;
    Some((a, my - a * mx))
}

fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Huber IRLS fit of `y ≈ a·x + b`, started from ordinary least squares.
///
/// `prior` adds, for every sample, a pseudo-observation of the prior line
/// at the same `x` with weight `lambda`; it is how tiles are shrunk toward
/// the global fit.
pub fn robust_affine_fit(
    x: &[f64],
    y: &[f64],
    config: &RegistrationConfig,
    prior: Option<((f64, f64), f64)>,
) -> Result<AffineFit> {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < config.min_inliers {
        return Err(Error::InsufficientData {
            found: n,
            required: config.min_inliers,
        });
    }
    let (pa, pb, lambda) = match prior {
        Some(((pa, pb), l)) if l > 0.0 => (pa, pb, l),
        _ => (0.0, 0.0, 0.0),
    };
    let solve = |w: &[f64]| {
        let data = (0..n).map(|i| (x[i], y[i], w[i]));
        let prior_rows = (0..n).map(|i| (x[i], pa * x[i] + pb, lambda));
        if lambda > 0.0 {
            solve_weighted(data.chain(prior_rows))
        } else {
            solve_weighted(data.chain(prior_rows.take(0)))
        }
    };
    let degenerate = || {
        Error::DegenerateInput(
            "monocular depth has zero variance over the jointly valid pixels".into(),
        )
    };

    let mut weights = vec![1.0; n];
    let (mut a, mut b) = solve(&weights).ok_or_else(degenerate)?;
    let mut abs_res = vec![0.0; n];
    let mut scale = 0.0;
    let mut iterations = 0;
    for _ in 0..config.irls_iters {
        for i in 0..n {
            abs_res[i] = (y[i] - a * x[i] - b).abs();
        }
        let mut scratch = abs_res.clone();
        scale = 1.4826 * median(&mut scratch);
        if scale <= 0.0 {
            // at least half the samples are fit exactly
            break;
        }
        let delta = config.huber_k * scale;
        let next: Vec<f64> = abs_res
            .iter()
            .map(|&r| if r <= delta { 1.0 } else { delta / r })
            .collect();
        let Some((na, nb)) = solve(&next) else {
            break;
        };
        iterations += 1;
        let change = ((na - a).abs() / a.abs().max(1e-12)).max((nb - b).abs() / b.abs().max(1.0));
        weights = next;
        a = na;
        b = nb;
        if change < config.tolerance {
            break;
        }
    }
    Ok(AffineFit {
        a,
        b,
        weights,
        iterations,
        scale,
    })
}

/// Per-pixel scale and shift mapping monocular depth onto disparity.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationField {
    pub a: ScalarField,
    pub b: ScalarField,
    pub global_a: f64,
    pub global_b: f64,
    pub mode: RegistrationMode,
}

impl RegistrationField {
    pub fn constant(width: usize, height: usize, a: f64, b: f64) -> Self {
        RegistrationField {
            a: ScalarField::filled(width, height, a),
            b: ScalarField::filled(width, height, b),
            global_a: a,
            global_b: b,
            mode: RegistrationMode::Global,
        }
    }
}

fn joint_samples(mono: &ScalarField, disp: &ScalarField) -> Result<(Vec<f64>, Vec<f64>)> {
    mono.ensure_same_dims(disp, "mono vs disparity")?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..mono.len() {
        if let (Some(m), Some(d)) = (mono.at(i), disp.at(i)) {
            xs.push(m);
            ys.push(d);
        }
    }
    Ok((xs, ys))
}

/// Robust global fit; returns the registration together with the IRLS
/// diagnostics.
pub fn register_global_fit(
    mono: &ScalarField,
    disp: &ScalarField,
    config: &RegistrationConfig,
) -> Result<(RegistrationField, AffineFit)> {
    config.validate()?;
    let (xs, ys) = joint_samples(mono, disp)?;
    let fit = robust_affine_fit(&xs, &ys, config, None)?;
    let (w, h) = mono.dims();
    Ok((RegistrationField::constant(w, h, fit.a, fit.b), fit))
}

pub fn register_global(
    mono: &ScalarField,
    disp: &ScalarField,
    config: &RegistrationConfig,
) -> Result<RegistrationField> {
    register_global_fit(mono, disp, config).map(|(r, _)| r)
}

/// Per-tile fits shrunk toward the global fit, bilinearly interpolated
/// between tile centers. Tiles short of `min_inliers` (or degenerate)
/// inherit the global parameters.
pub fn register_local(
    mono: &ScalarField,
    disp: &ScalarField,
    config: &RegistrationConfig,
) -> Result<RegistrationField> {
    let (global, _) = register_global_fit(mono, disp, config)?;
    let (ga, gb) = (global.global_a, global.global_b);
    let (w, h) = mono.dims();
    let t = config.tile;
    let (nx, ny) = (w.div_ceil(t), h.div_ceil(t));
    let params: Vec<(f64, f64)> = (0..nx * ny)
        .into_par_iter()
        .map(|k| {
            let (tx, ty) = (k % nx, k / nx);
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for v in ty * t..((ty + 1) * t).min(h) {
                for u in tx * t..((tx + 1) * t).min(w) {
                    if let (Some(m), Some(d)) = (mono.get(u, v), disp.get(u, v)) {
                        xs.push(m);
                        ys.push(d);
                    }
                }
            }
            robust_affine_fit(&xs, &ys, config, Some(((ga, gb), config.lambda_reg)))
                .map(|f| (f.a, f.b))
                .unwrap_or((ga, gb))
        })
        .collect();

    let half = (t as f64 - 1.0) / 2.0;
    let axis = |p: usize, n: usize| {
        let s = ((p as f64 - half) / t as f64).clamp(0.0, (n - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut a = Vec::with_capacity(w * h);
    let mut b = Vec::with_capacity(w * h);
    for v in 0..h {
        let (y0, y1, fy) = axis(v, ny);
        for u in 0..w {
            let (x0, x1, fx) = axis(u, nx);
            let at = |i: usize, j: usize| params[j * nx + i];
            let blend = |pick: fn((f64, f64)) -> f64| {
                let top = pick(at(x0, y0)) * (1.0 - fx) + pick(at(x1, y0)) * fx;
                let bottom = pick(at(x0, y1)) * (1.0 - fx) + pick(at(x1, y1)) * fx;
                top * (1.0 - fy) + bottom * fy
            };
            a.push(blend(|p| p.0));
            b.push(blend(|p| p.1));
        }
    }
    Ok(RegistrationField {
        a: ScalarField::new(w, h, a)?,
        b: ScalarField::new(w, h, b)?,
        global_a: ga,
        global_b: gb,
        mode: RegistrationMode::Local,
    })
}

pub fn register(
    mono: &ScalarField,
    disp: &ScalarField,
    config: &RegistrationConfig,
) -> Result<RegistrationField> {
    match config.mode {
        RegistrationMode::Global => register_global(mono, disp, config),
        RegistrationMode::Local => register_local(mono, disp, config),
    }
}

/// `a · mono + b` per pixel; validity follows `mono`.
pub fn apply_registration(mono: &ScalarField, reg: &RegistrationField) -> Result<ScalarField> {
    mono.ensure_same_dims(&reg.a, "mono vs registration")?;
    let (w, h) = mono.dims();
    Ok(ScalarField::from_fn_opt(w, h, |u, v| {
        Some(reg.a.get(u, v)? * mono.get(u, v)? + reg.b.get(u, v)?)
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfidenceWeights {
    pub cost: f64,
    pub agreement: f64,
    pub residual: f64,
    /// Residual scale in pixels.
    pub tau_res: f64,
}

impl Default for ConfidenceWeights {
    fn default() -> Self {
        ConfidenceWeights {
            cost: 0.4,
            agreement: 0.3,
            residual: 0.3,
            tau_res: 1.0,
        }
    }
}

impl ConfidenceWeights {
    /// Confidence from the cost samples alone.
    pub fn cost_only() -> Self {
        ConfidenceWeights {
            cost: 1.0,
            agreement: 0.0,
            residual: 0.0,
            tau_res: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ws = [self.cost, self.agreement, self.residual];
        if ws.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Parameter("confidence weights must be >= 0".into()));
        }
        let sum: f64 = ws.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Parameter(format!(
                "confidence weights must sum to 1, got {sum}"
            )));
        }
        if !(self.tau_res > 0.0) {
            return Err(Error::Parameter("tau_res must be > 0".into()));
        }
        Ok(())
    }
}

/// How decisively one window of costs singles out its minimum, in `[0, 1]`.
pub fn cost_sharpness(costs: &[f64]) -> f64 {
    let mut min = f64::INFINITY;
    let mut second = f64::INFINITY;
    for &c in costs {
        if c < min {
            second = min;
            min = c;
        } else if c < second {
            second = c;
        }
    }
    if !second.is_finite() {
        return 0.0;
    }
    let mean = costs.iter().sum::<f64>() / costs.len() as f64;
    ((second - min) / (mean - min + 1e-9)).clamp(0.0, 1.0)
}

/// `c = w_cost · sharpness + w_agree · agreement + w_res · exp(−residual / τ)`.
///
/// Sharpness uses the finest level of the slice. A missing agreement or
/// residual contributes zero to its term.
pub fn confidence_map(
    slice: &CostSlice,
    agreement: Option<&ScalarField>,
    residual: &ScalarField,
    weights: &ConfidenceWeights,
) -> Result<ScalarField> {
    weights.validate()?;
    let (w, h) = slice.dims();
    if residual.dims() != (w, h) {
        return Err(Error::dims(
            "residual vs cost slice",
            residual.dims(),
            (w, h),
        ));
    }
    if let Some(a) = agreement {
        if a.dims() != (w, h) {
            return Err(Error::dims("agreement vs cost slice", a.dims(), (w, h)));
        }
    }
    Ok(ScalarField::from_fn(w, h, |u, v| {
        let p = v * w + u;
        let sharp = cost_sharpness(slice.samples(p, 0));
        let agree = agreement.and_then(|a| a.at(p)).unwrap_or(0.0);
        let res = residual
            .at(p)
            .map_or(0.0, |r| (-r.abs() / weights.tau_res).exp());
        (weights.cost * sharp + weights.agreement * agree + weights.residual * res).clamp(0.0, 1.0)
    }))
}

/// Outputs of the global fusion stage.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionResult {
    pub registered_mono: ScalarField,
    pub confidence: ScalarField,
    pub fused: ScalarField,
}

/// `D_f = c · D_d + (1 − c) · D̃_m`, kept inside the interval spanned by
/// the two inputs. A pixel valid in only one input copies it; an invalid
/// confidence trusts the disparity.
pub fn fuse(
    disp: &ScalarField,
    registered_mono: &ScalarField,
    c: &ScalarField,
) -> Result<ScalarField> {
    disp.ensure_same_dims(registered_mono, "disparity vs registered mono")?;
    disp.ensure_same_dims(c, "disparity vs confidence")?;
    let (w, h) = disp.dims();
    Ok(ScalarField::from_fn_opt(w, h, |u, v| {
        match (disp.get(u, v), registered_mono.get(u, v)) {
            (Some(d), Some(m)) => {
                let c = c.get(u, v).unwrap_or(1.0).clamp(0.0, 1.0);
                Some(if c == 1.0 {
                    d
                } else if c == 0.0 {
                    m
                } else {
                    (m + c * (d - m)).clamp(d.min(m), d.max(m))
                })
            }
            (Some(d), None) => Some(d),
            (None, Some(m)) => Some(m),
            (None, None) => None,
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn linear_scene(seed: u64, n: usize, a: f64, b: f64, sigma: f64) -> (ScalarField, ScalarField) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma.max(1e-300)).unwrap();
        let mono = ScalarField::from_fn(n, n, |_, _| rng.gen_range(1.0..50.0));
        let disp = mono.map(|m| {
            a * m
                + b
                + if sigma > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                }
        });
        (mono, disp)
    }

    #[test]
    fn exact_line_recovered() {
        let (mono, disp) = linear_scene(51, 32, 2.0, 3.0, 0.0);
        let reg = register_global(&mono, &disp, &RegistrationConfig::default()).unwrap();
        assert!((reg.global_a - 2.0).abs() < 1e-12);
        assert!((reg.global_b - 3.0).abs() < 1e-10);
    }

    #[test]
    fn too_few_pixels() {
        let (mono, _) = linear_scene(52, 8, 1.0, 0.0, 0.0);
        let disp = ScalarField::filled(8, 8, 1.0);
        match register_global(&mono, &disp, &RegistrationConfig::default()) {
            Err(Error::InsufficientData { found, required }) => {
                assert_eq!((found, required), (64, 100))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn constant_mono_is_degenerate() {
        let mono = ScalarField::filled(16, 16, 4.0);
        let disp = ScalarField::from_fn(16, 16, |u, _| u as f64);
        assert!(matches!(
            register_global(&mono, &disp, &RegistrationConfig::default()),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn final_estimate_is_wls_at_final_weights() {
        let (mono, mut disp) = linear_scene(53, 48, 2.5, -4.0, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        for u in 0..48 {
            disp.set(u, rng.gen_range(0..48), Some(rng.gen_range(0.0..200.0)));
        }
        let (reg, fit) = register_global_fit(&mono, &disp, &RegistrationConfig::default()).unwrap();
        // plain (uncentered) normal equations as the oracle
        let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (k, (x, y)) in mono.data().iter().zip(disp.data()).enumerate() {
            let w = fit.weights[k];
            s0 += w;
            s1 += w * x;
            s2 += w * x * x;
            t0 += w * y;
            t1 += w * x * y;
        }
        let det = s0 * s2 - s1 * s1;
        let a = (s0 * t1 - s1 * t0) / det;
        let b = (s2 * t0 - s1 * t1) / det;
        assert!((reg.global_a - a).abs() <= 1e-9 * a.abs());
        assert!((reg.global_b - b).abs() <= 1e-9 * b.abs());
        assert!(fit.weights.iter().any(|&w| w < 1.0));
    }

    #[test]
    fn affine_equivariance() {
        let (mono, disp) = linear_scene(55, 40, 1.7, 6.0, 0.2);
        let cfg = RegistrationConfig::default();
        let base = register_global(&mono, &disp, &cfg).unwrap();
        let (s, t) = (3.5, -12.0);
        let moved = mono.map(|m| s * m + t);
        let reg = register_global(&moved, &disp, &cfg).unwrap();
        assert!((reg.global_a - base.global_a / s).abs() < 1e-7 * base.global_a.abs());
        let b_expected = base.global_b - base.global_a * t / s;
        assert!((reg.global_b - b_expected).abs() < 1e-6);
        let d1 = apply_registration(&mono, &base).unwrap();
        let d2 = apply_registration(&moved, &reg).unwrap();
        for (x, y) in d1.data().iter().zip(d2.data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn local_equals_global_for_constant_truth() {
        let (mono, disp) = linear_scene(56, 64, 2.0, 1.0, 0.05);
        let stiff = RegistrationConfig {
            lambda_reg: 1e12,
            ..RegistrationConfig::default()
        };
        let local = register_local(&mono, &disp, &stiff).unwrap();
        for (&a, &b) in local.a.data().iter().zip(local.b.data()) {
            assert!((a - local.global_a).abs() < 1e-6);
            assert!((b - local.global_b).abs() < 1e-6);
        }
        let loose = register_local(&mono, &disp, &RegistrationConfig::default()).unwrap();
        for (&a, &b) in loose.a.data().iter().zip(loose.b.data()) {
            assert!((a - 2.0).abs() < 0.01);
            assert!((b - 1.0).abs() < 0.2);
        }
    }

    #[test]
    fn local_two_halves_recovered_at_tile_centers() {
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let n = 128;
        let mono = ScalarField::from_fn(n, n, |_, _| rng.gen_range(1.0..50.0));
        let disp = ScalarField::from_fn(n, n, |u, v| {
            let m = mono.get(u, v).unwrap();
            let (a, b) = if u < n / 2 { (2.0, 0.0) } else { (3.0, 5.0) };
            a * m + b + noise.sample(&mut rng)
        });
        let cfg = RegistrationConfig {
            mode: RegistrationMode::Local,
            ..RegistrationConfig::default()
        };
        let reg = register(&mono, &disp, &cfg).unwrap();
        let t = cfg.tile;
        for ty in 0..n / t {
            for tx in 0..n / t {
                let (u, v) = (tx * t + t / 2, ty * t + t / 2);
                // tile centers fall between pixels; sample the nearest pixel
                let (a_true, b_true) = if u < n / 2 { (2.0, 0.0) } else { (3.0, 5.0) };
                let a = reg.a.get(u, v).unwrap();
                let b = reg.b.get(u, v).unwrap();
                assert!(
                    (a - a_true).abs() <= 0.05 * a_true,
                    "a={a} at tile ({tx},{ty})"
                );
                // b is judged against the disparity range it shifts
                assert!(
                    (b - b_true).abs() <= 0.05 * 50.0 * a_true,
                    "b={b} at tile ({tx},{ty})"
                );
            }
        }
    }

    #[test]
    fn local_fields_are_smooth() {
        let mut rng = ChaCha8Rng::seed_from_u64(58);
        let n = 100;
        let mono = ScalarField::from_fn(n, n, |_, _| rng.gen_range(1.0..50.0));
        let disp = ScalarField::from_fn(n, n, |u, v| {
            let m = mono.get(u, v).unwrap();
            (1.0 + u as f64 / 40.0) * m + v as f64 / 10.0 + rng.gen_range(-0.5..0.5)
        });
        let cfg = RegistrationConfig {
            tile: 20,
            ..RegistrationConfig::default()
        };
        let reg = register_local(&mono, &disp, &cfg).unwrap();
        for field in [&reg.a, &reg.b] {
            let (lo, hi) = field.min_max().unwrap();
            let bound = (hi - lo) / cfg.tile as f64 + 1e-12;
            for v in 0..n {
                for u in 0..n {
                    let x = field.get(u, v).unwrap();
                    if u + 1 < n {
                        assert!((field.get(u + 1, v).unwrap() - x).abs() <= bound);
                    }
                    if v + 1 < n {
                        assert!((field.get(u, v + 1).unwrap() - x).abs() <= bound);
                    }
                }
            }
        }
    }

    #[test]
    fn local_falls_back_when_tiles_are_sparse() {
        let (mono, disp) = linear_scene(59, 64, 2.0, 3.0, 0.01);
        let cfg = RegistrationConfig {
            min_inliers: 2000,
            ..RegistrationConfig::default()
        };
        let reg = register_local(&mono, &disp, &cfg).unwrap();
        assert!(reg.a.iter_valid().all(|(_, a)| a == reg.global_a));
        assert!(reg.b.iter_valid().all(|(_, b)| b == reg.global_b));
    }

    #[test]
    fn apply_registration_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let mono = ScalarField::from_fn(5, 4, |_, _| rng.gen_range(-3.0..3.0));
        let id = RegistrationField::constant(5, 4, 1.0, 0.0);
        assert_eq!(apply_registration(&mono, &id).unwrap(), mono);
        let c = RegistrationField::constant(5, 4, 0.0, 5.0);
        assert!(apply_registration(&mono, &c)
            .unwrap()
            .iter_valid()
            .all(|(_, x)| x == 5.0));
        let reg = RegistrationField {
            a: ScalarField::from_fn(5, 4, |_, _| rng.gen_range(0.5..2.0)),
            b: ScalarField::from_fn(5, 4, |_, _| rng.gen_range(-1.0..1.0)),
            global_a: 1.0,
            global_b: 0.0,
            mode: RegistrationMode::Local,
        };
        let out = apply_registration(&mono, &reg).unwrap();
        for i in 0..20 {
            assert_eq!(
                out.data()[i],
                reg.a.data()[i] * mono.data()[i] + reg.b.data()[i]
            );
        }
        let bad = ScalarField::filled(3, 3, 1.0);
        assert!(apply_registration(&bad, &id).is_err());
    }

    #[test]
    fn confidence_plug_in_cases() {
        let third = ConfidenceWeights {
            cost: 1.0 / 3.0,
            agreement: 1.0 / 3.0,
            residual: 1.0 / 3.0,
            tau_res: 1.0,
        };
        let flat = CostSlice::from_raw(1, 1, 4, 1, vec![0.5; 9]).unwrap();
        let ones = ScalarField::filled(1, 1, 1.0);
        let zero = ScalarField::filled(1, 1, 0.0);
        let c = confidence_map(&flat, Some(&ones), &zero, &third).unwrap();
        assert!((c.get(0, 0).unwrap() - 2.0 / 3.0).abs() < 1e-12);

        let mut hot = vec![1.0; 9];
        hot[4] = 0.0;
        let sharp = CostSlice::from_raw(1, 1, 4, 1, hot).unwrap();
        let c = confidence_map(&sharp, Some(&ones), &zero, &third).unwrap();
        assert!((c.get(0, 0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn confidence_matches_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let weights = ConfidenceWeights::default();
        let data: Vec<f64> = (0..4 * 2 * 7).map(|_| rng.gen()).collect();
        let slice = CostSlice::from_raw(2, 2, 3, 2, data.clone()).unwrap();
        let agree = ScalarField::from_fn(2, 2, |_, _| rng.gen());
        let res = ScalarField::from_fn(2, 2, |_, _| rng.gen_range(0.0..4.0));
        let c = confidence_map(&slice, Some(&agree), &res, &weights).unwrap();
        for p in 0..4 {
            let mut s = data[p * 14..p * 14 + 7].to_vec();
            let mean = s.iter().sum::<f64>() / 7.0;
            s.sort_by(f64::total_cmp);
            let sharp = ((s[1] - s[0]) / (mean - s[0] + 1e-9)).clamp(0.0, 1.0);
            let want = 0.4 * sharp + 0.3 * agree.data()[p] + 0.3 * (-res.data()[p]).exp();
            assert!((c.data()[p] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn confidence_rejects_bad_weights() {
        let slice = CostSlice::from_raw(1, 1, 0, 1, vec![0.0]).unwrap();
        let z = ScalarField::filled(1, 1, 0.0);
        let w = ConfidenceWeights {
            cost: 0.5,
            agreement: 0.5,
            residual: 0.5,
            tau_res: 1.0,
        };
        assert!(matches!(
            confidence_map(&slice, None, &z, &w),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn fuse_cases() {
        let d = ScalarField::filled(1, 1, 2.0);
        let m = ScalarField::filled(1, 1, 4.0);
        let at = |c: f64| {
            fuse(&d, &m, &ScalarField::filled(1, 1, c))
                .unwrap()
                .get(0, 0)
                .unwrap()
        };
        assert_eq!(at(1.0), 2.0);
        assert_eq!(at(0.0), 4.0);
        assert_eq!(at(0.5), 3.0);
    }

    #[test]
    fn fuse_copies_single_valid_input() {
        let mut d = ScalarField::filled(2, 1, 2.0);
        let mut m = ScalarField::filled(2, 1, 4.0);
        d.set(0, 0, None);
        m.set(1, 0, None);
        let f = fuse(&d, &m, &ScalarField::filled(2, 1, 0.5)).unwrap();
        assert_eq!(f.data(), &[4.0, 2.0]);
    }

    #[test]
    fn fuse_is_convex() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        for _ in 0..200 {
            let d = ScalarField::from_fn(4, 4, |_, _| rng.gen_range(-1e3..1e3));
            let m = ScalarField::from_fn(4, 4, |_, _| rng.gen_range(-1e3..1e3));
            let c = ScalarField::from_fn(4, 4, |_, _| rng.gen());
            let f = fuse(&d, &m, &c).unwrap();
            for i in 0..16 {
                let (x, y, z) = (d.data()[i], m.data()[i], f.data()[i]);
                assert!(x.min(y) <= z && z <= x.max(y));
            }
        }
    }
}
