//! Census-based binocular matching: features, cost volume with a
//! disparity-axis pyramid, windowed lookup, winner-take-all initialisation
//! and the softmin-expectation disparity update.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{ImageBuffer, ScalarField};

/// Cost of a tap that falls outside the candidate range or the image.
pub const SENTINEL_COST: f64 = 1.0;

/// Largest census window whose mask fits in 128 bits.
pub const MAX_CENSUS_WINDOW: usize = 11;

/// Per-pixel census bitmasks.
///
/// Bit `k` refers to the `k`-th neighbor in row-major order over the
/// window, skipping the center; it is set iff that neighbor is brighter
/// than the center.
#[derive(Debug, Clone, PartialEq)]
pub struct CensusField {
    width: usize,
    height: usize,
    window: usize,
    bits: Vec<u128>,
}

impl CensusField {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn bit_count(&self) -> usize {
        self.window * self.window - 1
    }

    pub fn mask(&self, u: usize, v: usize) -> u128 {
        self.bits[v * self.width + u]
    }

    pub fn masks(&self) -> &[u128] {
        &self.bits
    }
}

pub(crate) fn check_odd_window(window: usize, min: usize) -> Result<()> {
    if window.is_multiple_of(2) || window < min {
        return Err(Error::Parameter(format!(
            "window must be odd and >= {min}, got {window}"
        )));
    }
    Ok(())
}

pub fn census_transform(image: &ImageBuffer, window: usize) -> Result<CensusField> {
    check_odd_window(window, 3)?;
    if window > MAX_CENSUS_WINDOW {
        return Err(Error::Parameter(format!(
            "census window {window} exceeds {MAX_CENSUS_WINDOW}"
        )));
    }
    let gray = image.luma();
    let (w, h) = gray.dims();
    let r = (window / 2) as isize;
    let px = |u: isize, v: isize| {
        let u = u.clamp(0, w as isize - 1) as usize;
        let v = v.clamp(0, h as isize - 1) as usize;
        gray.data()[v * w + u]
    };
    let mut bits = vec![0u128; w * h];
    bits.par_chunks_mut(w.max(1))
        .enumerate()
        .for_each(|(v, row)| {
            let v = v as isize;
            for (u, out) in row.iter_mut().enumerate() {
                let u = u as isize;
                let center = px(u, v);
                let mut mask = 0u128;
                let mut k = 0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        if px(u + dx, v + dy) > center {
                            mask |= 1 << k;
                        }
                        k += 1;
                    }
                }
                *out = mask;
            }
        });
    Ok(CensusField {
        width: w,
        height: h,
        window,
        bits,
    })
}

/// One level of the disparity pyramid; `cost` is laid out `(v, u, d)` with
/// the candidate index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct CostLevel {
    candidates: usize,
    cost: Vec<f64>,
}

impl CostLevel {
    pub fn candidates(&self) -> usize {
        self.candidates
    }

    pub fn costs_at(&self, pixel: usize) -> &[f64] {
        &self.cost[pixel * self.candidates..(pixel + 1) * self.candidates]
    }

    fn halved(&self) -> CostLevel {
        let n = self.candidates.div_ceil(2);
        let pixels = self.cost.len() / self.candidates;
        let mut cost = Vec::with_capacity(pixels * n);
        for p in 0..pixels {
            let c = self.costs_at(p);
            for j in 0..n {
                let a = c[2 * j];
                cost.push(match c.get(2 * j + 1) {
                    Some(&b) => 0.5 * (a + b),
                    None => a,
                });
            }
        }
        CostLevel {
            candidates: n,
            cost,
        }
    }
}

/// Matching costs over candidate disparities `0..d_max`; lower is better.
///
/// Level `k` of the pyramid has `ceil(d_max / 2^k)` candidates, each the
/// average of two adjacent candidates of level `k - 1` (an unpaired last
/// candidate is copied).
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    width: usize,
    height: usize,
    d_max: usize,
    levels: Vec<CostLevel>,
}

impl CostVolume {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, k: usize) -> &CostLevel {
        &self.levels[k]
    }

    pub fn cost(&self, u: usize, v: usize, d: usize) -> f64 {
        self.levels[0].costs_at(v * self.width + u)[d]
    }
}

pub const DEFAULT_PYRAMID_LEVELS: usize = 1;

pub fn build_cost_volume(
    left: &CensusField,
    right: &CensusField,
    d_max: usize,
) -> Result<CostVolume> {
    build_cost_volume_with_levels(left, right, d_max, DEFAULT_PYRAMID_LEVELS)
}

/// Normalized Hamming cost between `left(u, v)` and `right(u - d, v)`.
pub fn build_cost_volume_with_levels(
    left: &CensusField,
    right: &CensusField,
    d_max: usize,
    levels: usize,
) -> Result<CostVolume> {
    if left.dims() != right.dims() {
        return Err(Error::dims(
            "left vs right census",
            left.dims(),
            right.dims(),
        ));
    }
    if left.window != right.window {
        return Err(Error::Parameter(format!(
            "census windows differ: {} vs {}",
            left.window, right.window
        )));
    }
    if d_max == 0 {
        return Err(Error::Parameter("d_max must be >= 1".into()));
    }
    if levels == 0 {
        return Err(Error::Parameter(
            "cost pyramid needs at least one level".into(),
        ));
    }
    let (w, h) = left.dims();
    let norm = left.bit_count() as f64;
    let mut cost = vec![0.0; w * h * d_max];
    cost.par_chunks_mut((w * d_max).max(1))
        .enumerate()
        .for_each(|(v, row)| {
            for u in 0..w {
                let l = left.mask(u, v);
                for d in 0..d_max {
                    row[u * d_max + d] = if d > u {
                        SENTINEL_COST
                    } else {
                        (l ^ right.mask(u - d, v)).count_ones() as f64 / norm
                    };
                }
            }
        });
    let mut pyramid = vec![CostLevel {
        candidates: d_max,
        cost,
    }];
    for _ in 1..levels {
        let next = pyramid.last().expect("non-empty").halved();
        pyramid.push(next);
    }
    Ok(CostVolume {
        width: w,
        height: h,
        d_max,
        levels: pyramid,
    })
}

impl CostVolume {
    /// Replaces level 0 by its `window × window` box mean in the image
    /// plane (per candidate, clamp-to-edge) and rebuilds the pyramid.
    pub fn aggregated(&self, window: usize) -> Result<CostVolume> {
        check_odd_window(window, 1)?;
        if window == 1 {
            return Ok(self.clone());
        }
        let (w, h, n) = (self.width, self.height, self.d_max);
        let r = (window / 2) as isize;
        let src = &self.levels[0].cost;
        let clamp = |x: isize, hi: usize| x.clamp(0, hi as isize - 1) as usize;
        let mut horiz = vec![0.0; w * h * n];
        horiz
            .par_chunks_mut((w * n).max(1))
            .enumerate()
            .for_each(|(v, row)| {
                for u in 0..w {
                    let out = &mut row[u * n..(u + 1) * n];
                    for dx in -r..=r {
                        let uu = clamp(u as isize + dx, w);
                        let c = &src[(v * w + uu) * n..(v * w + uu + 1) * n];
                        for (o, x) in out.iter_mut().zip(c) {
                            *o += x;
                        }
                    }
                }
            });
        let norm = (window * window) as f64;
        let mut cost = vec![0.0; w * h * n];
        cost.par_chunks_mut((w * n).max(1))
            .enumerate()
            .for_each(|(v, row)| {
                for dy in -r..=r {
                    let vv = clamp(v as isize + dy, h);
                    let c = &horiz[vv * w * n..(vv + 1) * w * n];
                    for (o, x) in row.iter_mut().zip(c) {
                        *o += x;
                    }
                }
                for o in row.iter_mut() {
                    *o /= norm;
                }
            });
        let mut pyramid = vec![CostLevel {
            candidates: n,
            cost,
        }];
        for _ in 1..self.levels.len() {
            let next = pyramid.last().expect("non-empty").halved();
            pyramid.push(next);
        }
        Ok(CostVolume {
            width: w,
            height: h,
            d_max: n,
            levels: pyramid,
        })
    }
}

/// Costs sampled in a window of `2·radius + 1` offsets around the current
/// disparity, for every pyramid level. Layout is `(pixel, level, offset)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSlice {
    width: usize,
    height: usize,
    radius: usize,
    levels: usize,
    data: Vec<f64>,
}

impl CostSlice {
    /// Builds a slice from raw samples, mostly for tests and tooling.
    pub fn from_raw(
        width: usize,
        height: usize,
        radius: usize,
        levels: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if levels == 0 || data.len() != width * height * levels * (2 * radius + 1) {
            return Err(Error::Dimension(format!(
                "slice {width}x{height}, {levels} levels, radius {radius} cannot hold {} samples",
                data.len()
            )));
        }
        Ok(CostSlice {
            width,
            height,
            radius,
            levels,
            data,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn taps(&self) -> usize {
        2 * self.radius + 1
    }

    /// Samples for one pixel and level, ordered from offset `-radius` to `+radius`.
    pub fn samples(&self, pixel: usize, level: usize) -> &[f64] {
        let n = self.taps();
        let start = (pixel * self.levels + level) * n;
        &self.data[start..start + n]
    }
}

/// Position of full-resolution disparity `d` on level `k`'s candidate
/// axis. Level-`k` candidate `j` averages level-0 candidates
/// `j·2^k .. (j+1)·2^k`, so its center sits at `j·2^k + (2^k − 1)/2`.
fn level_position(d: f64, level: usize) -> f64 {
    let s = (1usize << level) as f64;
    (d - (s - 1.0) / 2.0) / s
}

fn interpolate(costs: &[f64], p: f64) -> f64 {
    let n = costs.len();
    if !(p >= 0.0 && p <= (n - 1) as f64) {
        return SENTINEL_COST;
    }
    let i0 = p.floor() as usize;
    let f = p - i0 as f64;
    if f == 0.0 {
        costs[i0]
    } else {
        costs[i0] + (costs[i0 + 1] - costs[i0]) * f
    }
}

/// Samples the cost volume at `disparity + o` for `o` in `-radius..=radius`
/// with linear interpolation along the candidate axis. Pixels with invalid
/// disparity receive sentinel costs.
pub fn lookup(volume: &CostVolume, disparity: &ScalarField, radius: usize) -> Result<CostSlice> {
    if disparity.dims() != volume.dims() {
        return Err(Error::dims(
            "disparity vs cost volume",
            disparity.dims(),
            volume.dims(),
        ));
    }
    let (w, h) = volume.dims();
    let levels = volume.num_levels();
    let taps = 2 * radius + 1;
    let per_pixel = levels * taps;
    let mut data = vec![SENTINEL_COST; w * h * per_pixel];
    data.par_chunks_mut(per_pixel.max(1))
        .enumerate()
        .for_each(|(p, out)| {
            let Some(d) = disparity.at(p) else {
                return;
            };
            for (k, level) in volume.levels.iter().enumerate() {
                let costs = level.costs_at(p);
                let center = level_position(d, k);
                for (t, slot) in out[k * taps..(k + 1) * taps].iter_mut().enumerate() {
                    let o = t as f64 - radius as f64;
                    *slot = interpolate(costs, center + o);
                }
            }
        });
    Ok(CostSlice {
        width: w,
        height: h,
        radius,
        levels,
        data,
    })
}

/// Winner-take-all disparity with a parabolic sub-pixel refinement.
///
/// The first minimum wins ties. Minima on the first or last candidate skip
/// the refinement. Results are clamped to `[0, d_max − 1]`.
pub fn wta_init(volume: &CostVolume) -> ScalarField {
    let (w, h) = volume.dims();
    let level = &volume.levels[0];
    let hi = (volume.d_max - 1) as f64;
    let data: Vec<f64> = (0..w * h)
        .into_par_iter()
        .map(|p| {
            let c = level.costs_at(p);
            let (best, _) =
                c.iter().enumerate().fold(
                    (0, f64::INFINITY),
                    |acc, (i, &x)| if x < acc.1 { (i, x) } else { acc },
                );
            let mut d = best as f64;
            if best > 0 && best + 1 < c.len() {
                let (a, b, e) = (c[best - 1], c[best], c[best + 1]);
                let denom = a - 2.0 * b + e;
                if denom > 0.0 {
                    d += (0.5 * (a - e) / denom).clamp(-0.5, 0.5);
                }
            }
            d.clamp(0.0, hi)
        })
        .collect();
    ScalarField::new(w, h, data).expect("dimensions consistent")
}

/// Softmin expectation of the offset over one window of costs.
pub fn softmin_expectation(costs: &[f64], temperature: f64) -> f64 {
    let radius = (costs.len() / 2) as f64;
    let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, &c) in costs.iter().enumerate() {
        let wgt = (-(c - min) / temperature).exp();
        num += (t as f64 - radius) * wgt;
        den += wgt;
    }
    num / den
}

/// Deterministic disparity update: the softmin-weighted mean offset over
/// each level's window, combined across levels with weights `2^-k`.
///
/// Offsets are in taps, so `|Δ| <= radius` for every pixel.
pub fn matching_update(slice: &CostSlice, temperature: f64) -> Result<ScalarField> {
    if !(temperature > 0.0) {
        return Err(Error::Parameter(format!(
            "temperature must be > 0, got {temperature}"
        )));
    }
    let (w, h) = slice.dims();
    let weights: Vec<f64> = (0..slice.levels).map(|k| 0.5f64.powi(k as i32)).collect();
    let total: f64 = weights.iter().sum();
    let r = slice.radius as f64;
    let data: Vec<f64> = (0..w * h)
        .into_par_iter()
        .map(|p| {
            let mut acc = 0.0;
            for (k, wk) in weights.iter().enumerate() {
                acc += wk * softmin_expectation(slice.samples(p, k), temperature);
            }
            (acc / total).clamp(-r, r)
        })
        .collect();
    ScalarField::new(w, h, data)
}
