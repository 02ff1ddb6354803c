//! Disparity evaluation: end-point error, bad-x percentages, region masks
//! and mean ± std aggregation over checkpoints.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::loss::LossBreakdown;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Standard bad-x thresholds reported by [`evaluate`].
pub const BAD_THRESHOLDS: [f64; 4] = [1.0, 2.0, 3.0, 5.0];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    pub name: String,
    width: usize,
    height: usize,
    mask: Vec<bool>,
}

impl RegionMask {
    pub fn new(
        name: impl Into<String>,
        width: usize,
        height: usize,
        mask: Vec<bool>,
    ) -> Result<Self> {
        if mask.len() != width * height {
            return Err(Error::Dimension(format!(
                "mask of length {} for a {width}x{height} grid",
                mask.len()
            )));
        }
        Ok(RegionMask {
            name: name.into(),
            width,
            height,
            mask,
        })
    }

    pub fn all(width: usize, height: usize) -> Self {
        RegionMask {
            name: "all".into(),
            width,
            height,
            mask: vec![true; width * height],
        }
    }

    pub fn from_fn(
        name: impl Into<String>,
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Self {
        let mut mask = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                mask.push(f(u, v));
            }
        }
        RegionMask {
            name: name.into(),
            width,
            height,
            mask,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        self.mask[v * self.width + u]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn complement(&self, name: impl Into<String>) -> Self {
        RegionMask {
            name: name.into(),
            width: self.width,
            height: self.height,
            mask: self.mask.iter().map(|m| !m).collect(),
        }
    }

    pub fn union(&self, other: &RegionMask, name: impl Into<String>) -> Result<Self> {
        self.combine(other, name, |a, b| a || b)
    }

    pub fn intersect(&self, other: &RegionMask, name: impl Into<String>) -> Result<Self> {
        self.combine(other, name, |a, b| a && b)
    }

    /// Drops pixels where `field` is invalid.
    pub fn restrict_to_valid(&self, field: &ScalarField) -> Result<Self> {
        if field.dims() != self.dims() {
            return Err(Error::dims("mask vs field", self.dims(), field.dims()));
        }
        Ok(RegionMask {
            name: self.name.clone(),
            width: self.width,
            height: self.height,
            mask: self
                .mask
                .iter()
                .zip(field.valid())
                .map(|(&m, &v)| m && v)
                .collect(),
        })
    }

    fn combine(
        &self,
        other: &RegionMask,
        name: impl Into<String>,
        op: impl Fn(bool, bool) -> bool,
    ) -> Result<Self> {
        if self.dims() != other.dims() {
            return Err(Error::dims("mask vs mask", self.dims(), other.dims()));
        }
        Ok(RegionMask {
            name: name.into(),
            width: self.width,
            height: self.height,
            mask: self
                .mask
                .iter()
                .zip(&other.mask)
                .map(|(&a, &b)| op(a, b))
                .collect(),
        })
    }
}

/// How the bad-x threshold treats an error exactly equal to `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BadComparison {
    /// `|err| >= x` counts as bad.
    #[default]
    AtLeast,
    /// `|err| > x` counts as bad (common in other toolkits).
    Exceeds,
}

/// Absolute errors over the pixels that are in the mask and valid in both
/// fields, in raster order.
fn masked_errors<'a>(
    pred: &'a ScalarField,
    gt: &'a ScalarField,
    mask: &'a RegionMask,
) -> Result<impl Iterator<Item = f64> + 'a> {
    pred.ensure_same_dims(gt, "prediction vs ground truth")?;
    if mask.dims() != gt.dims() {
        return Err(Error::dims("mask vs ground truth", mask.dims(), gt.dims()));
    }
    Ok((0..gt.len()).filter_map(move |i| {
        if !mask.mask[i] {
            return None;
        }
        Some((pred.at(i)? - gt.at(i)?).abs())
    }))
}

/// Mean absolute disparity error over the masked, jointly valid pixels.
pub fn epe(pred: &ScalarField, gt: &ScalarField, mask: &RegionMask) -> Result<f64> {
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for e in masked_errors(pred, gt, mask)? {
        sum += e;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyMask(mask.name.clone()));
    }
    Ok(sum / n as f64)
}

/// Percentage of masked pixels whose error is at least `x` pixels.
pub fn bad_x(pred: &ScalarField, gt: &ScalarField, mask: &RegionMask, x: f64) -> Result<f64> {
    bad_x_with(pred, gt, mask, x, BadComparison::AtLeast)
}

pub fn bad_x_with(
    pred: &ScalarField,
    gt: &ScalarField,
    mask: &RegionMask,
    x: f64,
    cmp: BadComparison,
) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Parameter(format!(
            "bad-x threshold must be > 0, got {x}"
        )));
    }
    let mut bad = 0usize;
    let mut n = 0usize;
    for e in masked_errors(pred, gt, mask)? {
        n += 1;
        let is_bad = match cmp {
            BadComparison::AtLeast => e >= x,
            BadComparison::Exceeds => e > x,
        };
        bad += is_bad as usize;
    }
    if n == 0 {
        return Err(Error::EmptyMask(mask.name.clone()));
    }
    Ok(100.0 * bad as f64 / n as f64)
}

/// Left–right consistency occlusion mask from a pair of ground-truth
/// disparities.
///
/// A valid left pixel is occluded when its right-image match falls outside
/// the image, lands on an invalid right disparity, or disagrees by more
/// than `tol`. The right disparity is sampled at the nearest pixel. Pixels
/// with invalid left disparity are in neither `occ` nor its complement
/// within valid ground truth.
pub fn occlusion_mask(
    gt_left: &ScalarField,
    gt_right: &ScalarField,
    tol: f64,
) -> Result<RegionMask> {
    gt_left.ensure_same_dims(gt_right, "left vs right ground truth")?;
    let (w, h) = gt_left.dims();
    Ok(RegionMask::from_fn("occ", w, h, |u, v| {
        let Some(dl) = gt_left.get(u, v) else {
            return false;
        };
        let x = u as f64 - dl;
        if x < 0.0 || x > (w - 1) as f64 {
            return true;
        }
        let xr = (x.round() as usize).min(w - 1);
        match gt_right.get(xr, v) {
            Some(dr) => (dl - dr).abs() > tol,
            None => true,
        }
    }))
}

/// Splits valid ground truth into `(occ, nonocc)`.
pub fn occlusion_split(gt: &ScalarField, occ: &RegionMask) -> Result<(RegionMask, RegionMask)> {
    let occ = occ.restrict_to_valid(gt)?.renamed("occ");
    let nonocc = occ.complement("nonocc").restrict_to_valid(gt)?;
    Ok((occ, nonocc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
}

impl MetricEntry {
    pub fn single(value: f64) -> Self {
        MetricEntry {
            value,
            mean: None,
            std: None,
        }
    }
}

/// Metric values keyed by metric name, then mask name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub metrics: BTreeMap<String, BTreeMap<String, MetricEntry>>,
    pub counts: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub series: BTreeMap<String, Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossBreakdown>,
}

impl Default for EvalReport {
    fn default() -> Self {
        EvalReport {
            schema_version: REPORT_SCHEMA_VERSION,
            metrics: BTreeMap::new(),
            counts: BTreeMap::new(),
            series: BTreeMap::new(),
            loss: None,
        }
    }
}

impl EvalReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, metric: &str, mask: &str, value: f64) {
        self.metrics
            .entry(metric.to_string())
            .or_default()
            .insert(mask.to_string(), MetricEntry::single(value));
    }

    pub fn value(&self, metric: &str, mask: &str) -> Option<f64> {
        self.metrics.get(metric)?.get(mask).map(|e| e.value)
    }

    fn keys(&self) -> Vec<(&str, &str)> {
        self.metrics
            .iter()
            .flat_map(|(m, masks)| masks.keys().map(move |k| (m.as_str(), k.as_str())))
            .collect()
    }
}

pub fn bad_key(x: f64) -> String {
    format!("bad{x:.1}")
}

/// EPE and bad-{1,2,3,5} for each mask. Masks with no valid pixels are
/// skipped and recorded with a zero count.
pub fn evaluate(pred: &ScalarField, gt: &ScalarField, masks: &[RegionMask]) -> Result<EvalReport> {
    evaluate_with(pred, gt, masks, &BAD_THRESHOLDS, BadComparison::AtLeast)
}

pub fn evaluate_with(
    pred: &ScalarField,
    gt: &ScalarField,
    masks: &[RegionMask],
    thresholds: &[f64],
    cmp: BadComparison,
) -> Result<EvalReport> {
    let mut report = EvalReport::new();
    for mask in masks {
        let n = masked_errors(pred, gt, mask)?.count();
        report.counts.insert(mask.name.clone(), n);
        if n == 0 {
            continue;
        }
        report.insert("epe", &mask.name, epe(pred, gt, mask)?);
        for &x in thresholds {
            report.insert(&bad_key(x), &mask.name, bad_x_with(pred, gt, mask, x, cmp)?);
        }
    }
    Ok(report)
}

/// Mean and population standard deviation per (metric, mask) key.
pub fn aggregate(reports: &[EvalReport]) -> Result<EvalReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Schema("nothing to aggregate".into()))?;
    let keys = first.keys();
    for (i, r) in reports.iter().enumerate().skip(1) {
        if r.keys() != keys {
            return Err(Error::Schema(format!(
                "report {i} has different (metric, mask) keys than report 0"
            )));
        }
    }
    let mut out = EvalReport::new();
    out.counts = first.counts.clone();
    let n = reports.len() as f64;
    for (metric, mask) in keys {
        let values: Vec<f64> = reports
            .iter()
            .map(|r| r.metrics[metric][mask].value)
            .collect();
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        out.metrics.entry(metric.to_string()).or_default().insert(
            mask.to_string(),
            MetricEntry {
                value: mean,
                mean: Some(mean),
                std: Some(var.sqrt()),
            },
        );
    }
    Ok(out)
}

/// Table-style `mean±std` with a fixed number of decimals.
pub fn format_mean_std(mean: f64, std: f64, decimals: usize) -> String {
    format!("{mean:.decimals$}±{std:.decimals$}")
}
