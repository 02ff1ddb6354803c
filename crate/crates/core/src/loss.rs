//! Sequence loss over an iteration trace and a finite-difference check of
//! its subgradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::local_fusion::IterationTrace;

pub const DEFAULT_GAMMA: f64 = 0.9;

/// Exponent applied to iteration `t` of `T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExponentForm {
    /// `γ^(T+2−t)`: the last iterate is weighted by `γ²`.
    #[default]
    AsWritten,
    /// `γ^(T−t)`: the last iterate is weighted by 1.
    Standard,
}

/// Weighted terms of the loss. Every entry already includes its weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub iteration_terms: Vec<f64>,
    pub mono_term: f64,
    pub fused_term: f64,
    pub total: f64,
}

/// Mean absolute error over pixels valid in both fields.
pub fn mean_abs_error(pred: &ScalarField, gt: &ScalarField) -> Result<f64> {
    pred.ensure_same_dims(gt, "prediction vs ground truth")?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..gt.len() {
        if let (Some(p), Some(g)) = (pred.at(i), gt.at(i)) {
            sum += (p - g).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask("ground truth".into()));
    }
    Ok(sum / n as f64)
}

/// Weight of each iteration `t = 1..=T`.
pub fn sequence_weights(total: usize, gamma: f64, form: ExponentForm) -> Vec<f64> {
    let offset = match form {
        ExponentForm::AsWritten => 2,
        ExponentForm::Standard => 0,
    };
    (1..=total)
        .map(|t| gamma.powi((total + offset - t) as i32))
        .collect()
}

pub fn sequence_loss(
    trace: &IterationTrace,
    registered_mono: &ScalarField,
    fused: &ScalarField,
    gt: &ScalarField,
    gamma: f64,
) -> Result<LossBreakdown> {
    sequence_loss_from(
        &trace.iterates,
        registered_mono,
        fused,
        gt,
        gamma,
        ExponentForm::AsWritten,
    )
}

/// `Σ_t w_t‖D_d^t − D_G‖₁ + γ‖D̃_m − D_G‖₁ + ‖D_f − D_G‖₁` with `‖·‖₁` the
/// mean absolute error.
pub fn sequence_loss_from(
    iterates: &[ScalarField],
    registered_mono: &ScalarField,
    fused: &ScalarField,
    gt: &ScalarField,
    gamma: f64,
    form: ExponentForm,
) -> Result<LossBreakdown> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Parameter(format!(
            "gamma must be in (0, 1], got {gamma}"
        )));
    }
    if gt.valid_count() == 0 {
        return Err(Error::EmptyMask("ground truth".into()));
    }
    let weights = sequence_weights(iterates.len(), gamma, form);
    let iteration_terms = iterates
        .iter()
        .zip(&weights)
        .map(|(d, w)| Ok(w * mean_abs_error(d, gt)?))
        .collect::<Result<Vec<f64>>>()?;
    let mono_term = gamma * mean_abs_error(registered_mono, gt)?;
    let fused_term = mean_abs_error(fused, gt)?;
    let total = iteration_terms.iter().sum::<f64>() + mono_term + fused_term;
    Ok(LossBreakdown {
        iteration_terms,
        mono_term,
        fused_term,
        total,
    })
}

/// A scalar loss of one field with a known subgradient.
pub trait PerturbableLoss {
    fn value(&self, field: &ScalarField) -> Result<f64>;

    /// Analytic (sub)gradient; invalid where the loss does not depend on
    /// the pixel.
    fn gradient(&self, field: &ScalarField) -> Result<ScalarField>;

    /// Distance from `pixel` to the nearest non-differentiable point, if any.
    fn kink_distance(&self, _field: &ScalarField, _pixel: usize) -> Option<f64> {
        None
    }
}

/// `weight · ‖field − gt‖₁`.
#[derive(Debug, Clone)]
pub struct L1Term {
    pub gt: ScalarField,
    pub weight: f64,
}

impl L1Term {
    pub fn new(gt: ScalarField, weight: f64) -> Self {
        L1Term { gt, weight }
    }
}

impl PerturbableLoss for L1Term {
    fn value(&self, field: &ScalarField) -> Result<f64> {
        Ok(self.weight * mean_abs_error(field, &self.gt)?)
    }

    fn gradient(&self, field: &ScalarField) -> Result<ScalarField> {
        field.ensure_same_dims(&self.gt, "field vs ground truth")?;
        let n = (0..field.len())
            .filter(|&i| field.at(i).is_some() && self.gt.at(i).is_some())
            .count();
        if n == 0 {
            return Err(Error::EmptyMask("ground truth".into()));
        }
        let scale = self.weight / n as f64;
        let (w, h) = field.dims();
        Ok(ScalarField::from_fn_opt(w, h, |u, v| {
            let r = field.get(u, v)? - self.gt.get(u, v)?;
            Some(if r > 0.0 {
                scale
            } else if r < 0.0 {
                -scale
            } else {
                0.0
            })
        }))
    }

    fn kink_distance(&self, field: &ScalarField, pixel: usize) -> Option<f64> {
        Some((field.at(pixel)? - self.gt.at(pixel)?).abs())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    /// Worst `|fd − analytic| / |analytic|` over checked pixels.
    pub max_deviation: f64,
    pub checked: usize,
    /// Pixels within `10·eps` of a kink.
    pub skipped: Vec<usize>,
}

/// Central differences `(L(x+ε) − L(x−ε)) / 2ε` at every gradient pixel.
pub fn fd_gradient_check(
    loss: &impl PerturbableLoss,
    field: &ScalarField,
    eps: f64,
) -> Result<FdReport> {
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("eps must be > 0, got {eps}")));
    }
    let grad = loss.gradient(field)?;
    let mut probe = field.clone();
    let mut report = FdReport {
        max_deviation: 0.0,
        checked: 0,
        skipped: Vec::new(),
    };
    for (i, analytic) in grad.iter_valid() {
        if loss
            .kink_distance(field, i)
            .is_some_and(|k| k <= 10.0 * eps)
        {
            report.skipped.push(i);
            continue;
        }
        let x = field.at(i).expect("gradient pixels are valid in the field");
        let (u, v) = (i % field.width(), i / field.width());
        probe.set(u, v, Some(x + eps));
        let up = loss.value(&probe)?;
        probe.set(u, v, Some(x - eps));
        let down = loss.value(&probe)?;
        probe.set(u, v, Some(x));
        let fd = (up - down) / (2.0 * eps);
        let dev = if analytic == 0.0 {
            fd.abs()
        } else {
            (fd - analytic).abs() / analytic.abs()
        };
        report.max_deviation = report.max_deviation.max(dev);
        report.checked += 1;
    }
    Ok(report)
}
