//! Grid containers and sampling primitives.
//!
//! Coordinates follow the usual image convention: pixel centers sit at
//! integer coordinates, the origin is the top-left pixel, `u` runs along a
//! row and `v` down the columns. Disparity is positive leftward, so the
//! right-image match of left pixel `u` lies at `u - d`.

use crate::error::{Error, Result};

/// H×W grid of reals with a per-pixel validity mask.
///
/// Every valid entry is finite. Invalid entries carry no meaning and are
/// stored as `0.0` by the operations in this crate.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    width: usize,
    height: usize,
    data: Vec<f64>,
    valid: Vec<bool>,
}

impl ScalarField {
    /// Builds a field whose validity is derived from finiteness.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_len(width, height, data.len())?;
        let valid = data.iter().map(|v| v.is_finite()).collect();
        let mut field = ScalarField {
            width,
            height,
            data,
            valid,
        };
        field.scrub();
        Ok(field)
    }

    pub fn with_mask(
        width: usize,
        height: usize,
        data: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        check_len(width, height, data.len())?;
        if valid.len() != data.len() {
            return Err(Error::Dimension(format!(
                "mask length {} does not match data length {}",
                valid.len(),
                data.len()
            )));
        }
        if let Some(i) = data
            .iter()
            .zip(&valid)
            .position(|(d, &m)| m && !d.is_finite())
        {
            return Err(Error::Parameter(format!(
                "pixel {i} is marked valid but holds a non-finite value"
            )));
        }
        let mut field = ScalarField {
            width,
            height,
            data,
            valid,
        };
        field.scrub();
        Ok(field)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(value.is_finite(), "fill value must be finite");
        ScalarField {
            width,
            height,
            data: vec![value; width * height],
            valid: vec![true; width * height],
        }
    }

    pub fn invalid(width: usize, height: usize) -> Self {
        ScalarField {
            width,
            height,
            data: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    /// Builds a field from `f(u, v)`; non-finite results become invalid.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        let valid: Vec<bool> = data.iter().map(|x| x.is_finite()).collect();
        let mut field = ScalarField {
            width,
            height,
            data,
            valid,
        };
        field.scrub();
        field
    }

    /// Like [`ScalarField::from_fn`] but with an explicit `None` for invalid pixels.
    pub fn from_fn_opt(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> Option<f64>,
    ) -> Self {
        let mut field = ScalarField::invalid(width, height);
        for v in 0..height {
            for u in 0..width {
                if let Some(x) = f(u, v).filter(|x| x.is_finite()) {
                    let i = v * width + u;
                    field.data[i] = x;
                    field.valid[i] = true;
                }
            }
        }
        field
    }

    fn scrub(&mut self) {
        for (d, &m) in self.data.iter_mut().zip(&self.valid) {
            if !m {
                *d = 0.0;
            }
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn index(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }

    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        let i = self.index(u, v);
        self.valid[i].then_some(self.data[i])
    }

    pub fn at(&self, i: usize) -> Option<f64> {
        self.valid[i].then_some(self.data[i])
    }

    pub fn is_valid(&self, u: usize, v: usize) -> bool {
        self.valid[self.index(u, v)]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&m| m).count()
    }

    pub fn set(&mut self, u: usize, v: usize, value: Option<f64>) {
        let i = self.index(u, v);
        match value.filter(|x| x.is_finite()) {
            Some(x) => {
                self.data[i] = x;
                self.valid[i] = true;
            }
            None => {
                self.data[i] = 0.0;
                self.valid[i] = false;
            }
        }
    }

    /// Applies `f` to every valid value; invalid pixels stay invalid.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> ScalarField {
        let mut out = self.clone();
        for (d, &m) in out.data.iter_mut().zip(&out.valid) {
            if m {
                *d = f(*d);
            }
        }
        out.valid = out
            .valid
            .iter()
            .zip(&out.data)
            .map(|(&m, d)| m && d.is_finite())
            .collect();
        out.scrub();
        out
    }

    /// Clamps every valid value into `[lo, hi]`.
    pub fn clamp(&self, lo: f64, hi: f64) -> ScalarField {
        self.map(|x| x.clamp(lo, hi))
    }

    /// Iterates `(index, value)` over valid pixels in raster order.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.data
            .iter()
            .zip(&self.valid)
            .enumerate()
            .filter_map(|(i, (&d, &m))| m.then_some((i, d)))
    }

    pub fn min_max(&self) -> Option<(f64, f64)> {
        self.iter_valid().fold(None, |acc, (_, x)| match acc {
            None => Some((x, x)),
            Some((lo, hi)) => Some((lo.min(x), hi.max(x))),
        })
    }

    pub fn into_parts(self) -> (usize, usize, Vec<f64>, Vec<bool>) {
        (self.width, self.height, self.data, self.valid)
    }

    /// Mean over `factor × factor` blocks (partial blocks at the far
    /// edges); a block without valid pixels is invalid.
    pub fn downsample_area(&self, factor: usize) -> Result<ScalarField> {
        if factor == 0 {
            return Err(Error::Parameter("downsample factor must be >= 1".into()));
        }
        let w = self.width.div_ceil(factor);
        let h = self.height.div_ceil(factor);
        Ok(ScalarField::from_fn_opt(w, h, |u, v| {
            let mut acc = 0.0;
            let mut n = 0usize;
            for y in v * factor..((v + 1) * factor).min(self.height) {
                for x in u * factor..((u + 1) * factor).min(self.width) {
                    if let Some(z) = self.get(x, y) {
                        acc += z;
                        n += 1;
                    }
                }
            }
            (n > 0).then(|| acc / n as f64)
        }))
    }

    pub(crate) fn ensure_same_dims(&self, other: &ScalarField, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(what, self.dims(), other.dims()));
        }
        Ok(())
    }
}

fn check_len(width: usize, height: usize, len: usize) -> Result<()> {
    if width * height != len {
        return Err(Error::Dimension(format!(
            "{width}x{height} grid needs {} values, got {len}",
            width * height
        )));
    }
    Ok(())
}

/// Interleaved image with 1 or 3 channels and samples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    /// Samples are clamped into `[0, 1]`; NaN maps to 0.
    pub fn new(width: usize, height: usize, channels: usize, mut data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Parameter(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::Dimension(format!(
                "{width}x{height}x{channels} image needs {} samples, got {}",
                width * height * channels,
                data.len()
            )));
        }
        for x in &mut data {
            *x = if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
        }
        Ok(ImageBuffer {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn gray_from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                let x = f(u, v);
                data.push(if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) });
            }
        }
        ImageBuffer {
            width,
            height,
            channels: 1,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn sample(&self, u: usize, v: usize, c: usize) -> f64 {
        self.data[(v * self.width + u) * self.channels + c]
    }

    /// Single-channel view; RGB is converted with Rec. 601 luma weights.
    pub fn luma(&self) -> ImageBuffer {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).clamp(0.0, 1.0))
            .collect();
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Box-filter downsampling by an integer factor. Partial blocks at the
    /// right and bottom edges average the pixels they contain.
    pub fn downsample_area(&self, factor: usize) -> Result<ImageBuffer> {
        if factor == 0 {
            return Err(Error::Parameter("downsample factor must be >= 1".into()));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let w = self.width.div_ceil(factor);
        let h = self.height.div_ceil(factor);
        let c = self.channels;
        let mut data = vec![0.0; w * h * c];
        for v in 0..h {
            for u in 0..w {
                let (u0, u1) = (u * factor, ((u + 1) * factor).min(self.width));
                let (v0, v1) = (v * factor, ((v + 1) * factor).min(self.height));
                let n = ((u1 - u0) * (v1 - v0)) as f64;
                for ch in 0..c {
                    let mut acc = 0.0;
                    for y in v0..v1 {
                        for x in u0..u1 {
                            acc += self.sample(x, y, ch);
                        }
                    }
                    data[(v * w + u) * c + ch] = acc / n;
                }
            }
        }
        ImageBuffer::new(w, h, c, data)
    }
}

/// Where output sample positions land on the source grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Alignment {
    /// First and last samples coincide with the source corners.
    #[default]
    Corners,
    /// Pixel areas align: `src = (dst + 0.5) * in / out - 0.5`, clamped.
    Centers,
}

/// Source taps for one output coordinate: `(i0, i1, frac)`. `i0 == i1`
/// means a single tap.
fn axis_taps(dst: usize, n_in: usize, n_out: usize, align: Alignment) -> (usize, usize, f64) {
    let src = match align {
        Alignment::Corners => {
            if n_out == 1 || n_in == 1 {
                0.0
            } else {
                dst as f64 * ((n_in - 1) as f64 / (n_out - 1) as f64)
            }
        }
        Alignment::Centers => {
            ((dst as f64 + 0.5) * (n_in as f64 / n_out as f64) - 0.5).clamp(0.0, (n_in - 1) as f64)
        }
    };
    let i0 = (src.floor() as usize).min(n_in - 1);
    let frac = src - i0 as f64;
    if frac <= 0.0 || i0 + 1 >= n_in {
        (i0, i0, 0.0)
    } else {
        (i0, i0 + 1, frac)
    }
}

/// Bilinear resize with corner-aligned sampling.
///
/// With `scale_values` set the values are multiplied by `new_w / width`,
/// which keeps disparities in pixels of the new grid.
pub fn bilinear_resize(
    field: &ScalarField,
    new_w: usize,
    new_h: usize,
    scale_values: bool,
) -> Result<ScalarField> {
    bilinear_resize_with(field, new_w, new_h, scale_values, Alignment::Corners)
}

pub fn bilinear_resize_with(
    field: &ScalarField,
    new_w: usize,
    new_h: usize,
    scale_values: bool,
    align: Alignment,
) -> Result<ScalarField> {
    if new_w == 0 || new_h == 0 {
        return Err(Error::Dimension(format!(
            "resize target {new_w}x{new_h} has a zero side"
        )));
    }
    if field.is_empty() {
        return Err(Error::Dimension("cannot resize an empty field".into()));
    }
    if field.dims() == (new_w, new_h) {
        return Ok(field.clone());
    }
    let factor = if scale_values {
        new_w as f64 / field.width as f64
    } else {
        1.0
    };
    let cols: Vec<_> = (0..new_w)
        .map(|x| axis_taps(x, field.width, new_w, align))
        .collect();
    let mut out = ScalarField::invalid(new_w, new_h);
    for y in 0..new_h {
        let (r0, r1, fy) = axis_taps(y, field.height, new_h, align);
        for (x, &(c0, c1, fx)) in cols.iter().enumerate() {
            let tap = |r: usize, c: usize| field.get(c, r);
            let top = lerp_opt(tap(r0, c0), tap(r0, c1), c0 == c1, fx);
            let value = if r0 == r1 {
                top
            } else {
                let bottom = lerp_opt(tap(r1, c0), tap(r1, c1), c0 == c1, fx);
                match (top, bottom) {
                    (Some(a), Some(b)) => Some(a + (b - a) * fy),
                    _ => None,
                }
            };
            out.set(x, y, value.map(|v| v * factor));
        }
    }
    Ok(out)
}

fn lerp_opt(a: Option<f64>, b: Option<f64>, single: bool, t: f64) -> Option<f64> {
    if single {
        return a;
    }
    match (a, b) {
        (Some(a), Some(b)) => Some(a + (b - a) * t),
        _ => None,
    }
}

/// Resamples a source along rows by a per-pixel disparity:
/// `out(u, v) = source(u - disparity(u, v), v)`.
pub trait HorizontalWarp: Sized {
    fn warp_horizontal(&self, disparity: &ScalarField) -> Result<Self>;
}

impl HorizontalWarp for ScalarField {
    /// Samples that fall outside the image, or touch an invalid tap, are invalid.
    fn warp_horizontal(&self, disparity: &ScalarField) -> Result<Self> {
        self.ensure_same_dims(disparity, "warp source vs disparity")?;
        let w = self.width;
        Ok(ScalarField::from_fn_opt(w, self.height, |u, v| {
            let d = disparity.get(u, v)?;
            let x = u as f64 - d;
            if !(0.0..=(w - 1) as f64).contains(&x) {
                return None;
            }
            let x0 = x.floor() as usize;
            let f = x - x0 as f64;
            if f == 0.0 {
                self.get(x0, v)
            } else {
                let a = self.get(x0, v)?;
                let b = self.get(x0 + 1, v)?;
                Some(a + (b - a) * f)
            }
        }))
    }
}

impl HorizontalWarp for ImageBuffer {
    /// Samples clamp to the border; invalid disparities keep the source pixel.
    fn warp_horizontal(&self, disparity: &ScalarField) -> Result<Self> {
        if self.dims() != disparity.dims() {
            return Err(Error::dims(
                "warp source vs disparity",
                self.dims(),
                disparity.dims(),
            ));
        }
        let (w, c) = (self.width, self.channels);
        let mut data = Vec::with_capacity(self.data.len());
        for v in 0..self.height {
            for u in 0..w {
                let d = disparity.get(u, v).unwrap_or(0.0);
                let x = (u as f64 - d).clamp(0.0, (w - 1) as f64);
                let x0 = x.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let f = x - x0 as f64;
                for ch in 0..c {
                    let a = self.sample(x0, v, ch);
                    let b = self.sample(x1, v, ch);
                    data.push(a + (b - a) * f);
                }
            }
        }
        ImageBuffer::new(w, self.height, c, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn field_area_downsample_skips_invalid() {
        let mut f = ScalarField::new(3, 2, vec![1.0, 3.0, 5.0, 3.0, 5.0, 7.0]).unwrap();
        f.set(2, 1, None);
        let d = f.downsample_area(2).unwrap();
        assert_eq!(d.dims(), (2, 1));
        assert_eq!(d.get(0, 0), Some(3.0));
        assert_eq!(d.get(1, 0), Some(5.0));
        let mut g = ScalarField::filled(2, 2, 1.0);
        for (u, v) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            g.set(u, v, None);
        }
        assert_eq!(g.downsample_area(2).unwrap().get(0, 0), None);
    }

    fn random_field(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ScalarField {
        ScalarField::from_fn(w, h, |_, _| rng.gen_range(-10.0..10.0))
    }

    #[test]
    fn resize_to_same_dims_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_field(&mut rng, 7, 5);
        let g = bilinear_resize(&f, 7, 5, true).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn resize_preserves_constants() {
        let f = ScalarField::filled(2, 2, 5.0);
        for (w, h) in [(1, 1), (3, 7), (16, 9)] {
            for align in [Alignment::Corners, Alignment::Centers] {
                let g = bilinear_resize_with(&f, w, h, false, align).unwrap();
                assert!(g.iter_valid().all(|(_, x)| x == 5.0));
                assert_eq!(g.valid_count(), w * h);
            }
        }
    }

    #[test]
    fn resize_corner_aligned_matches_scalar_oracle() {
        // independent oracle: x_src = x_dst * (n_in - 1) / (n_out - 1)
        let f = ScalarField::new(2, 1, vec![0.0, 1.0]).unwrap();
        let g = bilinear_resize(&f, 4, 1, false).unwrap();
        let expected: Vec<f64> = (0..4).map(|i| i as f64 / 3.0).collect();
        for (got, want) in g.data().iter().zip(&expected) {
            assert!((got - want).abs() < 1e-15);
        }
        // the 1x2 column case from the other axis
        let f = ScalarField::new(1, 2, vec![0.0, 1.0]).unwrap();
        let g = bilinear_resize(&f, 1, 4, false).unwrap();
        for (got, want) in g.data().iter().zip(&expected) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn resize_scales_disparity_values() {
        let f = ScalarField::filled(4, 4, 2.0);
        let g = bilinear_resize(&f, 16, 16, true).unwrap();
        assert!(g.iter_valid().all(|(_, x)| (x - 8.0).abs() < 1e-12));
    }

    #[test]
    fn resize_zero_target_is_error() {
        let f = ScalarField::filled(2, 2, 1.0);
        assert!(matches!(
            bilinear_resize(&f, 0, 3, false),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn resize_invalid_tap_propagates() {
        let mut f = ScalarField::filled(3, 1, 1.0);
        f.set(1, 0, None);
        let g = bilinear_resize(&f, 5, 1, false).unwrap();
        // src positions 0, 0.5, 1, 1.5, 2
        assert_eq!(g.valid(), &[true, false, false, false, true]);
    }

    #[test]
    fn resize_round_trip_keeps_constants() {
        let f = ScalarField::filled(9, 6, -3.25);
        let up = bilinear_resize(&f, 31, 17, false).unwrap();
        let back = bilinear_resize(&up, 9, 6, false).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn warp_zero_disparity_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_field(&mut rng, 8, 8);
        let d = ScalarField::filled(8, 8, 0.0);
        let g = f.warp_horizontal(&d).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn warp_ramp_by_one() {
        let f = ScalarField::from_fn(6, 2, |u, _| u as f64);
        let d = ScalarField::filled(6, 2, 1.0);
        let g = f.warp_horizontal(&d).unwrap();
        for v in 0..2 {
            assert_eq!(g.get(0, v), None);
            for u in 1..6 {
                assert_eq!(g.get(u, v), Some(u as f64 - 1.0));
            }
        }
    }

    #[test]
    fn warp_integer_disparity_matches_index_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let f = random_field(&mut rng, 8, 8);
            let d = ScalarField::from_fn(8, 8, |_, _| rng.gen_range(0..=3) as f64);
            let g = f.warp_horizontal(&d).unwrap();
            for v in 0..8 {
                for u in 0..8 {
                    let s = d.get(u, v).unwrap() as usize;
                    let expected = if u >= s { f.get(u - s, v) } else { None };
                    assert_eq!(g.get(u, v), expected);
                }
            }
        }
    }

    #[test]
    fn warp_dimension_mismatch() {
        let f = ScalarField::filled(4, 4, 0.0);
        let d = ScalarField::filled(4, 3, 0.0);
        assert!(matches!(f.warp_horizontal(&d), Err(Error::Dimension(_))));
    }

    #[test]
    fn warp_image_clamps_to_edge() {
        let img = ImageBuffer::gray_from_fn(4, 1, |u, _| u as f64 / 3.0);
        let d = ScalarField::filled(4, 1, 2.0);
        let out = img.warp_horizontal(&d).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 0.0, 1.0 / 3.0]);
    }

    #[test]
    fn valid_pixels_stay_finite_under_fuzz() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let w = rng.gen_range(1..10);
            let h = rng.gen_range(1..10);
            let f = ScalarField::from_fn(w, h, |_, _| {
                if rng.gen_bool(0.1) {
                    f64::INFINITY
                } else {
                    rng.gen_range(-1e6..1e6)
                }
            });
            let d = ScalarField::from_fn(w, h, |_, _| rng.gen_range(-3.0..3.0));
            let nw = rng.gen_range(1..12);
            let nh = rng.gen_range(1..12);
            let r = bilinear_resize(&f, nw, nh, rng.gen()).unwrap();
            let s = f.warp_horizontal(&d).unwrap();
            assert!(r.iter_valid().all(|(_, x)| x.is_finite()));
            assert!(s.iter_valid().all(|(_, x)| x.is_finite()));
        }
    }

    #[test]
    fn luma_of_gray_rgb_matches() {
        let rgb = ImageBuffer::new(1, 1, 3, vec![0.4, 0.4, 0.4]).unwrap();
        assert!((rgb.luma().data()[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn image_values_are_clamped() {
        let img = ImageBuffer::new(2, 1, 1, vec![-1.0, 2.0]).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
    }
}
