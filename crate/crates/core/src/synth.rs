//! Layered synthetic stereo scenes with exact ground truth.
//!
//! A scene is a textured background plus fronto-parallel rectangles, each
//! at a constant disparity. Both views are rendered from the surfaces
//! directly, so occlusions are real and their mask is known in closed
//! form. Texture is attached to surface coordinates: a point on a surface
//! has the same intensity in both views.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ImageBuffer, ScalarField};
use crate::metrics::RegionMask;

/// Scale and shift mapping ground-truth disparity to monocular depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonoModel {
    pub a: f64,
    pub b: f64,
    /// Per-region overrides; region 0 is the background, region `i` the
    /// `i`-th layer from the back.
    pub regions: Vec<Affine>,
    pub sigma: f64,
    pub outlier_fraction: f64,
}

impl Default for MonoModel {
    fn default() -> Self {
        MonoModel {
            a: 0.4,
            b: 1.6,
            regions: Vec::new(),
            sigma: 0.0,
            outlier_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Exclusive upper bound on disparities, in pixels.
    pub d_max: usize,
    pub background_disparity: f64,
    pub layers: usize,
    /// Inclusive range layer disparities are drawn from.
    pub layer_disparity: [f64; 2],
    pub integer_disparities: bool,
    /// Texture contrast in `[0, 1]`; 0 gives flat surfaces.
    pub texture_density: f64,
    /// Share of texture blocks rendered at constant intensity.
    pub textureless_fraction: f64,
    /// Side of the textureless blocks, in surface coordinates.
    pub textureless_block: usize,
    /// Coarsest value-noise cell, in pixels.
    pub texture_scale: f64,
    pub mono: MonoModel,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 7,
            width: 320,
            height: 256,
            d_max: 64,
            background_disparity: 8.0,
            layers: 2,
            layer_disparity: [16.0, 40.0],
            integer_disparities: true,
            texture_density: 0.5,
            textureless_fraction: 0.2,
            textureless_block: 32,
            texture_scale: 8.0,
            mono: MonoModel::default(),
        }
    }
}

const MAX_LAYERS: usize = 16;

fn spec_err(field: &str, message: impl Into<String>) -> Error {
    Error::Spec {
        field: field.into(),
        message: message.into(),
    }
}

fn unit_interval(field: &str, x: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(spec_err(field, format!("{x} is outside [0, 1]")));
    }
    Ok(())
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < 8 {
            return Err(spec_err("width", format!("{} is below 8", self.width)));
        }
        if self.height < 8 {
            return Err(spec_err("height", format!("{} is below 8", self.height)));
        }
        if self.d_max < 1 {
            return Err(spec_err("d_max", "must be >= 1"));
        }
        let top = (self.d_max - 1) as f64;
        if !(0.0..=top).contains(&self.background_disparity) {
            return Err(spec_err(
                "background_disparity",
                format!("{} is outside [0, {top}]", self.background_disparity),
            ));
        }
        if self.layers > MAX_LAYERS {
            return Err(spec_err(
                "layers",
                format!("{} exceeds {MAX_LAYERS}", self.layers),
            ));
        }
        let [lo, hi] = self.layer_disparity;
        if !(lo <= hi) || lo < 0.0 {
            return Err(spec_err(
                "layer_disparity",
                format!("[{lo}, {hi}] is not a valid range"),
            ));
        }
        if self.layers > 0 && hi > top {
            return Err(spec_err(
                "layer_disparity",
                format!("upper bound {hi} exceeds d_max - 1 = {top}"),
            ));
        }
        if self.integer_disparities && self.layers > 0 && lo.ceil() > hi.floor() {
            return Err(spec_err(
                "layer_disparity",
                format!("[{lo}, {hi}] holds no integer"),
            ));
        }
        unit_interval("texture_density", self.texture_density)?;
        unit_interval("textureless_fraction", self.textureless_fraction)?;
        if self.textureless_block == 0 {
            return Err(spec_err("textureless_block", "must be >= 1"));
        }
        if !(self.texture_scale >= 1.0) {
            return Err(spec_err("texture_scale", "must be >= 1"));
        }
        let m = &self.mono;
        let affines = std::iter::once(Affine { a: m.a, b: m.b }).chain(m.regions.iter().copied());
        for (i, f) in affines.enumerate() {
            let field = if i == 0 {
                "mono.a".to_string()
            } else {
                format!("mono.regions[{}]", i - 1)
            };
            if !(f.a > 0.0) || !f.a.is_finite() || !f.b.is_finite() {
                return Err(spec_err(&field, "scale must be positive and finite"));
            }
        }
        if m.regions.len() > self.layers + 1 {
            return Err(spec_err(
                "mono.regions",
                format!(
                    "{} entries for {} regions",
                    m.regions.len(),
                    self.layers + 1
                ),
            ));
        }
        if !(m.sigma >= 0.0) || !m.sigma.is_finite() {
            return Err(spec_err("mono.sigma", "must be >= 0"));
        }
        unit_interval("mono.outlier_fraction", m.outlier_fraction)?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SceneSpec = serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            // serde names the offending key inside backticks
            let field = msg.split('`').nth(1).unwrap_or("<document>").to_string();
            Error::Spec {
                field,
                message: msg,
            }
        })?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Axis-aligned rectangle `[x0, x1) × [y0, y1)` in left-image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
    pub disparity: f64,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub spec: SceneSpec,
    /// Back to front.
    pub layers: Vec<Layer>,
    pub left: ImageBuffer,
    pub right: ImageBuffer,
    pub gt_left: ScalarField,
    pub gt_right: ScalarField,
    pub occlusion: RegionMask,
    pub mono: ScalarField,
    /// `all`, `occ`, `nonocc`, `textureless` and `textured`, in that order.
    pub region_masks: Vec<RegionMask>,
    /// Surface id visible at each left pixel (0 is the background).
    pub surface: Vec<usize>,
}

impl Scene {
    pub fn mask(&self, name: &str) -> Option<&RegionMask> {
        self.region_masks.iter().find(|m| m.name == name)
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn hash01(keys: &[u64]) -> f64 {
    let h = keys.iter().fold(0u64, |acc, &k| splitmix(acc ^ k));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

struct Renderer<'a> {
    spec: &'a SceneSpec,
    layers: &'a [Layer],
    bases: Vec<f64>,
    flat_blocks: Vec<bool>,
    blocks_x: usize,
}

impl Renderer<'_> {
    fn disparity(&self, surface: usize) -> f64 {
        match surface {
            0 => self.spec.background_disparity,
            i => self.layers[i - 1].disparity,
        }
    }

    /// Front-most surface containing surface point `(x, y)` once shifted by
    /// its own disparity times `shift_sign`.
    fn visible(&self, x: f64, y: usize, shift: bool) -> usize {
        for (i, l) in self.layers.iter().enumerate().rev() {
            let xs = if shift { x + l.disparity } else { x };
            if y >= l.y0 && y < l.y1 && xs >= l.x0 as f64 && xs < l.x1 as f64 {
                return i + 1;
            }
        }
        0
    }

    fn is_flat(&self, xs: f64, y: usize) -> bool {
        if xs < 0.0 {
            return false;
        }
        let b = self.spec.textureless_block;
        let bx = (xs as usize) / b;
        bx < self.blocks_x && self.flat_blocks[(y / b) * self.blocks_x + bx]
    }

    fn value_noise(&self, surface: usize, x: f64, y: f64) -> f64 {
        let seed = self.spec.seed;
        let mut total = 0.0;
        let mut norm = 0.0;
        let mut cell = self.spec.texture_scale;
        let mut weight = 1.0;
        for octave in 0..3u64 {
            let (gx, gy) = (x / cell, y / cell);
            let (ix, iy) = (gx.floor(), gy.floor());
            let (fx, fy) = (gx - ix, gy - iy);
            let lattice = |dx: f64, dy: f64| {
                hash01(&[
                    seed,
                    surface as u64,
                    octave,
                    (ix + dx) as i64 as u64,
                    (iy + dy) as i64 as u64,
                ])
            };
            let top = lattice(0.0, 0.0) * (1.0 - fx) + lattice(1.0, 0.0) * fx;
            let bottom = lattice(0.0, 1.0) * (1.0 - fx) + lattice(1.0, 1.0) * fx;
            total += weight * (top * (1.0 - fy) + bottom * fy);
            norm += weight;
            cell = (cell / 2.0).max(1.0);
            weight *= 0.6;
        }
        total / norm
    }

    fn intensity(&self, surface: usize, xs: f64, y: usize) -> f64 {
        let base = self.bases[surface];
        if self.is_flat(xs, y) {
            return base;
        }
        let n = self.value_noise(surface, xs, y as f64);
        // the noise spans roughly [0.2, 0.8]; stretch it to about [0, 1]
        (base + self.spec.texture_density * 1.6 * (n - 0.5)).clamp(0.0, 1.0)
    }
}

fn place_layers(spec: &SceneSpec) -> Vec<Layer> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let (w, h) = (spec.width, spec.height);
    let [lo, hi] = spec.layer_disparity;
    let mut layers: Vec<Layer> = (0..spec.layers)
        .map(|_| {
            let lw = ((w as f64 * rng.gen_range(0.25..0.45)) as usize).max(2);
            let lh = ((h as f64 * rng.gen_range(0.25..0.6)) as usize).max(2);
            let x0 = rng.gen_range(0..=w - lw);
            let y0 = rng.gen_range(0..=h - lh);
            let d = if spec.integer_disparities {
                rng.gen_range(lo.ceil() as i64..=hi.floor() as i64) as f64
            } else if lo == hi {
                lo
            } else {
                rng.gen_range(lo..=hi)
            };
            Layer {
                x0,
                x1: x0 + lw,
                y0,
                y1: y0 + lh,
                disparity: d,
            }
        })
        .collect();
    layers.sort_by(|a, b| a.disparity.total_cmp(&b.disparity));
    layers
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let layers = place_layers(spec);

    let b = spec.textureless_block;
    let (blocks_x, blocks_y) = (w.div_ceil(b), h.div_ceil(b));
    let n_blocks = blocks_x * blocks_y;
    let n_flat = (spec.textureless_fraction * n_blocks as f64).round() as usize;
    let mut order: Vec<usize> = (0..n_blocks).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(2);
    order.shuffle(&mut rng);
    let mut flat_blocks = vec![false; n_blocks];
    for &k in &order[..n_flat] {
        flat_blocks[k] = true;
    }
    let bases = (0..=layers.len())
        .map(|s| 0.3 + 0.4 * hash01(&[spec.seed, s as u64, 0xba5e]))
        .collect();
    let r = Renderer {
        spec,
        layers: &layers,
        bases,
        flat_blocks,
        blocks_x,
    };

    let mut surface = vec![0; w * h];
    let mut left = vec![0.0; w * h];
    let mut right = vec![0.0; w * h];
    let mut gt_left = vec![0.0; w * h];
    let mut gt_right = vec![0.0; w * h];
    let mut occluded = vec![false; w * h];
    let mut flat = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let s = r.visible(x as f64, y, false);
            let d = r.disparity(s);
            surface[p] = s;
            gt_left[p] = d;
            left[p] = r.intensity(s, x as f64, y);
            flat[p] = r.is_flat(x as f64, y);
            let xr = x as f64 - d;
            occluded[p] = xr < 0.0 || r.visible(xr, y, true) != s;

            let sr = r.visible(x as f64, y, true);
            let dr = r.disparity(sr);
            gt_right[p] = dr;
            right[p] = r.intensity(sr, x as f64 + dr, y);
        }
    }

    let mono = render_mono(spec, &surface, &gt_left);
    let gt_left = ScalarField::new(w, h, gt_left)?;
    let gt_right = ScalarField::new(w, h, gt_right)?;
    let occlusion = RegionMask::new("occ", w, h, occluded)?;
    let textureless = RegionMask::new("textureless", w, h, flat)?;
    let region_masks = vec![
        RegionMask::all(w, h),
        occlusion.clone(),
        occlusion.complement("nonocc"),
        textureless.clone(),
        textureless.complement("textured"),
    ];
    Ok(Scene {
        spec: spec.clone(),
        layers,
        left: ImageBuffer::new(w, h, 1, left)?,
        right: ImageBuffer::new(w, h, 1, right)?,
        gt_left,
        gt_right,
        occlusion,
        mono: ScalarField::new(w, h, mono)?,
        region_masks,
        surface,
    })
}

fn render_mono(spec: &SceneSpec, surface: &[usize], gt: &[f64]) -> Vec<f64> {
    let m = &spec.mono;
    let affine = |s: usize| {
        m.regions
            .get(s)
            .copied()
            .unwrap_or(Affine { a: m.a, b: m.b })
    };
    let clean: Vec<f64> = surface
        .iter()
        .zip(gt)
        .map(|(&s, &d)| {
            let f = affine(s);
            f.a * d + f.b
        })
        .collect();
    if m.sigma == 0.0 && m.outlier_fraction == 0.0 {
        return clean;
    }
    let lo = clean.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = clean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    clean
        .iter()
        .enumerate()
        .map(|(p, &x)| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6d6f_6e6f);
            rng.set_stream(p as u64);
            let noise: f64 = StandardNormal.sample(&mut rng);
            if rng.gen::<f64>() < m.outlier_fraction {
                if hi > lo {
                    rng.gen_range(lo..=hi)
                } else {
                    lo
                }
            } else {
                x + m.sigma * noise
            }
        })
        .collect()
}
