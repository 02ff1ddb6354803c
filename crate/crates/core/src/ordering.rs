//! Binary local ordering maps.
//!
//! Each channel compares one neighbor against the center pixel through a
//! sigmoid, `σ(s · (D(u', v') − D(u, v)))`, so values above 0.5 mean the
//! neighbor is closer (larger disparity) and values below mean farther.
//! Only the sign survives arbitrary positive affine changes of `D`, which
//! is what lets monocular (relative) and binocular (absolute) maps be
//! compared.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::ScalarField;

/// Window set used unless configured otherwise.
pub const DEFAULT_WINDOWS: [usize; 2] = [5, 3];

/// Window sets for the kernel-size ablation, smallest to largest.
pub const WINDOW_ABLATIONS: [&[usize]; 5] =
    [&[1], &[3], &[5, 3], &[9, 7, 5, 3], &[13, 11, 9, 7, 5, 3]];

/// Multi-channel ordering field, laid out `(pixel, channel)`.
///
/// Channels are grouped by window in the declared order; within a window
/// the neighbors run in row-major order with the center skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderingStack {
    width: usize,
    height: usize,
    windows: Vec<usize>,
    use_sigmoid: bool,
    channels: usize,
    data: Vec<f64>,
    valid: Vec<bool>,
}

impl OrderingStack {
    pub fn from_raw(
        width: usize,
        height: usize,
        windows: Vec<usize>,
        use_sigmoid: bool,
        data: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let channels = channel_count(&windows)?;
        if data.len() != width * height * channels || valid.len() != width * height {
            return Err(Error::Dimension(format!(
                "ordering stack {width}x{height} with {channels} channels got {} values",
                data.len()
            )));
        }
        Ok(OrderingStack {
            width,
            height,
            windows,
            use_sigmoid,
            channels,
            data,
            valid,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn windows(&self) -> &[usize] {
        &self.windows
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn uses_sigmoid(&self) -> bool {
        self.use_sigmoid
    }

    /// Value meaning "neighbor equals center": 0.5 with the sigmoid, 0 without.
    pub fn neutral(&self) -> f64 {
        if self.use_sigmoid {
            0.5
        } else {
            0.0
        }
    }

    pub fn is_valid(&self, pixel: usize) -> bool {
        self.valid[pixel]
    }

    pub fn pixel(&self, pixel: usize) -> &[f64] {
        &self.data[pixel * self.channels..(pixel + 1) * self.channels]
    }

    /// Per-channel sign relative to [`OrderingStack::neutral`]: −1, 0 or +1.
    pub fn signs(&self, pixel: usize) -> impl Iterator<Item = i8> + '_ {
        let n = self.neutral();
        self.pixel(pixel).iter().map(move |&c| sign_of(c - n))
    }
}

fn sign_of(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Window 1 is accepted and contributes no channels.
fn channel_count(windows: &[usize]) -> Result<usize> {
    if windows.is_empty() {
        return Err(Error::Parameter("window list is empty".into()));
    }
    let mut n = 0;
    for &k in windows {
        if k % 2 == 0 {
            return Err(Error::Parameter(format!("ordering window {k} is not odd")));
        }
        n += k * k - 1;
    }
    Ok(n)
}

/// Logistic function that never rounds to 0, 0.5 or 1 unless the input
/// is exactly zero, keeping the sign of `x` recoverable from the output.
pub fn strict_sigmoid(x: f64) -> f64 {
    if x == 0.0 {
        return 0.5;
    }
    let s = if x > 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    if x > 0.0 {
        s.clamp(next_up(0.5), next_down(1.0))
    } else {
        s.clamp(f64::MIN_POSITIVE, next_down(0.5))
    }
}

fn next_up(x: f64) -> f64 {
    f64::from_bits(x.to_bits() + 1)
}

fn next_down(x: f64) -> f64 {
    f64::from_bits(x.to_bits() - 1)
}

/// Ordering stack of `field` over the given windows. Borders clamp to the
/// edge; a pixel with any invalid tap is invalid.
pub fn ordering_map(
    field: &ScalarField,
    windows: &[usize],
    use_sigmoid: bool,
    pre_scale: f64,
) -> Result<OrderingStack> {
    let channels = channel_count(windows)?;
    if !(pre_scale > 0.0 && pre_scale.is_finite()) {
        return Err(Error::Parameter(format!(
            "pre_scale must be > 0, got {pre_scale}"
        )));
    }
    let (w, h) = field.dims();
    let mut offsets = Vec::with_capacity(channels);
    for &k in windows {
        let r = (k / 2) as isize;
        for dy in -r..=r {
            for dx in -r..=r {
                if dx != 0 || dy != 0 {
                    offsets.push((dx, dy));
                }
            }
        }
    }
    let tap = |u: isize, v: isize| {
        let u = u.clamp(0, w as isize - 1) as usize;
        let v = v.clamp(0, h as isize - 1) as usize;
        field.get(u, v)
    };
    let mut data = vec![0.0; w * h * channels];
    let mut valid = vec![false; w * h];
    data.par_chunks_mut(channels.max(1))
        .zip(valid.par_iter_mut())
        .enumerate()
        .for_each(|(p, (out, ok))| {
            let (u, v) = ((p % w) as isize, (p / w) as isize);
            let Some(center) = tap(u, v) else {
                return;
            };
            for (slot, &(dx, dy)) in out.iter_mut().zip(&offsets) {
                let Some(n) = tap(u + dx, v + dy) else {
                    out.iter_mut().for_each(|x| *x = 0.0);
                    return;
                };
                let diff = n - center;
                *slot = if use_sigmoid {
                    strict_sigmoid(pre_scale * diff)
                } else {
                    diff
                };
            }
            *ok = true;
        });
    if channels == 0 {
        // no channels to test: validity follows the field itself
        valid.copy_from_slice(field.valid());
    }
    Ok(OrderingStack {
        width: w,
        height: h,
        windows: windows.to_vec(),
        use_sigmoid,
        channels,
        data,
        valid,
    })
}

/// Fraction of channels on which both stacks order the neighbor the same
/// way. A tie (neighbor equal to center) in either stack counts as
/// agreement, as does a stack with no channels.
pub fn ordering_agreement(mono: &OrderingStack, stereo: &OrderingStack) -> Result<ScalarField> {
    if mono.dims() != stereo.dims() {
        return Err(Error::dims(
            "mono vs stereo ordering",
            mono.dims(),
            stereo.dims(),
        ));
    }
    if mono.windows != stereo.windows {
        return Err(Error::Dimension(format!(
            "ordering windows differ: {:?} vs {:?}",
            mono.windows, stereo.windows
        )));
    }
    let (w, h) = mono.dims();
    let c = mono.channels;
    let values: Vec<Option<f64>> = (0..w * h)
        .into_par_iter()
        .map(|p| {
            if !(mono.valid[p] && stereo.valid[p]) {
                return None;
            }
            if c == 0 {
                return Some(1.0);
            }
            let agree = mono
                .signs(p)
                .zip(stereo.signs(p))
                .filter(|&(a, b)| a == 0 || b == 0 || a == b)
                .count();
            Some(agree as f64 / c as f64)
        })
        .collect();
    Ok(ScalarField::from_fn_opt(w, h, |u, v| values[v * w + u]))
}
