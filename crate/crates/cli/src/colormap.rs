use stereofuse::ScalarField;

use crate::args::ColormapArg;

/// Shown for pixels without a value.
pub const INVALID_RGB: [u8; 3] = [255, 0, 255];

fn to_u8(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn poly(t: f64, c: [f64; 6]) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * t + k)
}

const TURBO: [[f64; 6]; 3] = [
    [
        0.13572138,
        4.61539260,
        -42.66032258,
        132.13108234,
        -152.94239396,
        59.28637943,
    ],
    [
        0.09140261,
        2.19418839,
        4.84296658,
        -14.18503333,
        4.27729857,
        2.82956604,
    ],
    [
        0.10667330,
        12.64194608,
        -60.58204836,
        110.36276771,
        -89.90310912,
        27.34824973,
    ],
];

/// Polynomial fit of the Turbo colormap.
pub fn turbo(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    TURBO.map(|c| to_u8(poly(t, c)))
}

pub fn gray(t: f64) -> [u8; 3] {
    let g = to_u8(t);
    [g, g, g]
}

/// Interleaved RGB for `field`, mapping `[lo, hi]` onto the colormap.
/// A degenerate range maps every valid pixel to the middle color.
pub fn render(field: &ScalarField, map: ColormapArg, lo: f64, hi: f64) -> Vec<u8> {
    let f = match map {
        ColormapArg::Turbo => turbo,
        ColormapArg::Gray => gray,
    };
    let span = hi - lo;
    let mut out = Vec::with_capacity(field.len() * 3);
    for i in 0..field.len() {
        let rgb = match field.at(i) {
            None => INVALID_RGB,
            Some(_) if span.abs() < f64::EPSILON * hi.abs().max(1.0) => f(0.5),
            Some(x) => f((x - lo) / span),
        };
        out.extend_from_slice(&rgb);
    }
    out
}
