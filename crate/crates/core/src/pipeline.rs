//! End-to-end disparity estimation and its configuration.
//!
//! Matching and refinement run on area-downsampled images; the refined
//! disparity is upsampled, registered against the monocular map at full
//! resolution, and fused with a confidence computed at matching
//! resolution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::global_fusion::{
    apply_registration, confidence_map, fuse, register, ConfidenceWeights, FusionResult,
    RegistrationConfig, RegistrationField,
};
use crate::grid::{bilinear_resize_with, Alignment, ImageBuffer, ScalarField};
use crate::local_fusion::{iterate, IterationConfig, IterationTrace};
use crate::loss::{sequence_loss_from, ExponentForm, LossBreakdown, DEFAULT_GAMMA};
use crate::matching::{
    build_cost_volume_with_levels, census_transform, check_odd_window, wta_init,
    DEFAULT_PYRAMID_LEVELS, MAX_CENSUS_WINDOW,
};
use crate::ordering::{ordering_agreement, ordering_map, DEFAULT_WINDOWS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchingConfig {
    /// Candidate count at matching resolution.
    pub d_max: usize,
    /// Images are area-averaged by this factor before matching.
    pub downsample: usize,
    pub census_window: usize,
    /// Box window applied to each cost plane; 1 disables it.
    pub aggregation_window: usize,
    pub pyramid_levels: usize,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        MatchingConfig {
            d_max: 64,
            downsample: 4,
            census_window: 5,
            aggregation_window: 5,
            pyramid_levels: DEFAULT_PYRAMID_LEVELS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrderingConfig {
    pub windows: Vec<usize>,
}

impl Default for OrderingConfig {
    fn default() -> Self {
        OrderingConfig {
            windows: DEFAULT_WINDOWS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceVariant {
    /// Cost sharpness, ordering agreement and residual.
    #[default]
    Hybrid,
    /// Cost sharpness alone.
    Cost,
    /// `c = 0`: the registered monocular map replaces the disparity.
    Mono,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfidenceConfig {
    pub variant: ConfidenceVariant,
    pub weights: ConfidenceWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub gamma: f64,
    pub exponent: ExponentForm,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: DEFAULT_GAMMA,
            exponent: ExponentForm::AsWritten,
        }
    }
}

/// Switches for ablation runs.
///
/// Two alternatives to guided iteration were considered and rejected:
/// fusing the monocular map only into the initial disparity, and fusing
/// it only after the last iteration. Neither is implemented.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Ordering-map guidance during iteration.
    pub local_fusion: bool,
    /// Registration and confidence-weighted fusion after iteration.
    pub global_fusion: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            local_fusion: true,
            global_fusion: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Worker threads; unset uses the process default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// The monocular input is depth-like (larger is farther) and gets
    /// inverted before use.
    pub mono_is_depth: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub matching: MatchingConfig,
    pub iteration: IterationConfig,
    pub ordering: OrderingConfig,
    pub registration: RegistrationConfig,
    pub confidence: ConfidenceConfig,
    pub loss: LossConfig,
    pub ablation: AblationConfig,
    pub run: RunConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let m = &self.matching;
        if m.d_max < 1 {
            return Err(Error::Parameter("matching.d_max must be >= 1".into()));
        }
        if m.downsample < 1 {
            return Err(Error::Parameter("matching.downsample must be >= 1".into()));
        }
        check_odd_window(m.census_window, 3)?;
        if m.census_window > MAX_CENSUS_WINDOW {
            return Err(Error::Parameter(format!(
                "matching.census_window exceeds {MAX_CENSUS_WINDOW}"
            )));
        }
        check_odd_window(m.aggregation_window, 1)?;
        if m.pyramid_levels < 1 {
            return Err(Error::Parameter(
                "matching.pyramid_levels must be >= 1".into(),
            ));
        }
        self.iteration.validate()?;
        if self.ordering.windows.is_empty() {
            return Err(Error::Parameter(
                "ordering.windows must not be empty".into(),
            ));
        }
        for &w in &self.ordering.windows {
            check_odd_window(w, 1)?;
        }
        self.registration.validate()?;
        self.confidence.weights.validate()?;
        if !(self.loss.gamma > 0.0 && self.loss.gamma <= 1.0) {
            return Err(Error::Parameter("loss.gamma must be in (0, 1]".into()));
        }
        if self.run.threads == Some(0) {
            return Err(Error::Parameter("run.threads must be >= 1".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: PipelineConfig = toml::from_str(text)
            .map_err(|e| Error::Parameter(format!("config: {}", e.message())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Fused,
    /// No monocular input, or global fusion disabled.
    MatchingOnly,
    /// Registration failed; the output is the refined disparity.
    Fallback(String),
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Final full-resolution disparity.
    pub disparity: ScalarField,
    /// Winner-take-all initialization at matching resolution.
    pub init: ScalarField,
    /// Refinement trace at matching resolution.
    pub trace: IterationTrace,
    /// Last refined disparity at full resolution.
    pub matching: ScalarField,
    pub registration: Option<RegistrationField>,
    pub fusion: Option<FusionResult>,
    pub status: RunStatus,
    /// Downsample factor between the trace and the full-resolution fields.
    pub factor: usize,
}

impl PipelineOutput {
    /// Every refinement iterate at full resolution.
    pub fn iterates_full_res(&self) -> Result<Vec<ScalarField>> {
        let (w, h) = self.disparity.dims();
        self.trace
            .iterates
            .iter()
            .map(|d| upsample_disparity(d, w, h, self.factor))
            .collect()
    }

    /// Sequence loss against ground truth. Without a fusion stage the
    /// refined disparity stands in for the monocular and fused terms.
    pub fn loss(&self, gt: &ScalarField, config: &LossConfig) -> Result<LossBreakdown> {
        let iterates = self.iterates_full_res()?;
        let mono = self
            .fusion
            .as_ref()
            .map_or(&self.matching, |f| &f.registered_mono);
        sequence_loss_from(
            &iterates,
            mono,
            &self.disparity,
            gt,
            config.gamma,
            config.exponent,
        )
    }
}

/// Area-aligned upsampling of a disparity computed on a grid downsampled
/// by `factor`; values are scaled by `factor`.
pub fn upsample_disparity(
    field: &ScalarField,
    width: usize,
    height: usize,
    factor: usize,
) -> Result<ScalarField> {
    if factor == 1 && field.dims() == (width, height) {
        return Ok(field.clone());
    }
    let f = factor as f64;
    Ok(bilinear_resize_with(field, width, height, false, Alignment::Centers)?.map(|d| d * f))
}

fn prepare_mono(mono: &ScalarField, is_depth: bool) -> ScalarField {
    if !is_depth {
        return mono.clone();
    }
    let (w, h) = mono.dims();
    ScalarField::from_fn_opt(w, h, |u, v| {
        let z = mono.get(u, v)?;
        (z > 0.0).then(|| 1.0 / z)
    })
}

pub fn run(
    config: &PipelineConfig,
    left: &ImageBuffer,
    right: &ImageBuffer,
    mono: Option<&ScalarField>,
) -> Result<PipelineOutput> {
    config.validate()?;
    if left.dims() != right.dims() {
        return Err(Error::dims(
            "left vs right image",
            left.dims(),
            right.dims(),
        ));
    }
    let (w, h) = left.dims();
    if let Some(m) = mono {
        if m.dims() != (w, h) {
            return Err(Error::dims("mono vs left image", m.dims(), (w, h)));
        }
    }
    let mc = &config.matching;
    let f = mc.downsample;
    let l = left.downsample_area(f)?;
    let r = right.downsample_area(f)?;
    let volume = build_cost_volume_with_levels(
        &census_transform(&l, mc.census_window)?,
        &census_transform(&r, mc.census_window)?,
        mc.d_max,
        mc.pyramid_levels,
    )?
    .aggregated(mc.aggregation_window)?;
    let init = wta_init(&volume);

    let mono_full = mono.map(|m| prepare_mono(m, config.run.mono_is_depth));
    let mono_ordering = match &mono_full {
        Some(m) => Some(ordering_map(
            &m.downsample_area(f)?,
            &config.ordering.windows,
            config.iteration.use_sigmoid,
            config.iteration.pre_scale,
        )?),
        None => None,
    };
    let guide = mono_ordering
        .as_ref()
        .filter(|_| config.ablation.local_fusion);
    let trace = iterate(&volume, &init, guide, &config.iteration)?;
    let matching = upsample_disparity(trace.last(), w, h, f)?;

    let mut out = PipelineOutput {
        disparity: matching.clone(),
        init,
        trace,
        matching,
        registration: None,
        fusion: None,
        status: RunStatus::MatchingOnly,
        factor: f,
    };
    let (Some(mono_full), Some(mono_ordering)) = (mono_full, mono_ordering) else {
        return Ok(out);
    };
    if !config.ablation.global_fusion {
        return Ok(out);
    }
    let reg = match register(&mono_full, &out.matching, &config.registration) {
        Ok(reg) => reg,
        Err(e @ (Error::InsufficientData { .. } | Error::DegenerateInput(_))) => {
            out.status = RunStatus::Fallback(e.to_string());
            return Ok(out);
        }
        Err(e) => return Err(e),
    };
    let registered = apply_registration(&mono_full, &reg)?;

    let (cw, ch) = out.trace.last().dims();
    let confidence_low = match config.confidence.variant {
        ConfidenceVariant::Mono => ScalarField::filled(cw, ch, 0.0),
        variant => {
            let d_low = out.trace.last();
            let registered_low = registered.downsample_area(f)?.map(|x| x / f as f64);
            let residual = ScalarField::from_fn_opt(cw, ch, |u, v| {
                Some((d_low.get(u, v)? - registered_low.get(u, v)?).abs())
            });
            let stereo = ordering_map(
                d_low,
                &config.ordering.windows,
                config.iteration.use_sigmoid,
                config.iteration.pre_scale,
            )?;
            let agreement = ordering_agreement(&mono_ordering, &stereo)?;
            let weights = match variant {
                ConfidenceVariant::Cost => ConfidenceWeights {
                    tau_res: config.confidence.weights.tau_res,
                    ..ConfidenceWeights::cost_only()
                },
                _ => config.confidence.weights.clone(),
            };
            confidence_map(
                &out.trace.final_slice,
                Some(&agreement),
                &residual,
                &weights,
            )?
        }
    };
    let confidence = bilinear_resize_with(&confidence_low, w, h, false, Alignment::Centers)?;
    let fused = fuse(&out.matching, &registered, &confidence)?;
    out.disparity = fused.clone();
    out.registration = Some(reg);
    out.fusion = Some(FusionResult {
        registered_mono: registered,
        confidence,
        fused,
    });
    out.status = RunStatus::Fused;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, SceneSpec};

    fn small_scene() -> crate::synth::Scene {
        generate_scene(&SceneSpec {
            width: 96,
            height: 64,
            d_max: 32,
            layer_disparity: [12.0, 24.0],
            ..SceneSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn config_round_trips_through_toml() {
        let mut cfg = PipelineConfig::default();
        cfg.iteration.sample_seed = Some(5);
        cfg.run.threads = Some(2);
        cfg.ordering.windows = vec![9, 7, 5, 3];
        let text = cfg.to_toml();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(
            PipelineConfig::from_toml("").unwrap(),
            PipelineConfig::default()
        );
    }

    #[test]
    fn config_rejects_bad_fields() {
        for text in [
            "[matching]\ncensus_window = 4",
            "[iteration]\niterations = 0",
            "[confidence.weights]\ncost = 0.9",
            "[loss]\ngamma = 1.5",
            "[ordering]\nwindows = [4]",
            "[registration]\ntile = 8",
            "[nope]\nx = 1",
        ] {
            assert!(PipelineConfig::from_toml(text).is_err(), "{text}");
        }
    }

    #[test]
    fn upsample_scales_values() {
        let d = ScalarField::filled(4, 3, 2.5);
        let up = upsample_disparity(&d, 16, 12, 4).unwrap();
        assert!(up.iter_valid().all(|(_, x)| x == 10.0));
    }

    #[test]
    fn without_mono_output_is_refined_disparity() {
        let scene = small_scene();
        let cfg = PipelineConfig {
            matching: MatchingConfig {
                d_max: 16,
                ..MatchingConfig::default()
            },
            ..PipelineConfig::default()
        };
        let out = run(&cfg, &scene.left, &scene.right, None).unwrap();
        assert_eq!(out.status, RunStatus::MatchingOnly);
        assert_eq!(out.disparity, out.matching);
        let plain = upsample_disparity(out.trace.last(), 96, 64, 4).unwrap();
        assert_eq!(out.disparity, plain);
    }

    #[test]
    fn fused_output_lies_between_inputs() {
        let scene = small_scene();
        let cfg = PipelineConfig {
            matching: MatchingConfig {
                d_max: 16,
                ..MatchingConfig::default()
            },
            ..PipelineConfig::default()
        };
        let out = run(&cfg, &scene.left, &scene.right, Some(&scene.mono)).unwrap();
        assert_eq!(out.status, RunStatus::Fused);
        let fusion = out.fusion.as_ref().unwrap();
        for i in 0..out.disparity.len() {
            let (d, m, f) = (
                out.matching.data()[i],
                fusion.registered_mono.data()[i],
                out.disparity.data()[i],
            );
            assert!(d.min(m) <= f && f <= d.max(m));
        }
        let loss = out.loss(&scene.gt_left, &cfg.loss).unwrap();
        assert_eq!(loss.iteration_terms.len(), cfg.iteration.iterations);
    }

    #[test]
    fn degenerate_mono_falls_back() {
        let scene = small_scene();
        let cfg = PipelineConfig {
            matching: MatchingConfig {
                d_max: 16,
                ..MatchingConfig::default()
            },
            ..PipelineConfig::default()
        };
        let flat = ScalarField::filled(96, 64, 1.0);
        let out = run(&cfg, &scene.left, &scene.right, Some(&flat)).unwrap();
        assert!(matches!(out.status, RunStatus::Fallback(_)));
        assert_eq!(out.disparity, out.matching);
    }

    #[test]
    fn depth_like_mono_is_inverted() {
        let m = ScalarField::new(3, 1, vec![2.0, 0.0, 4.0]).unwrap();
        let inv = prepare_mono(&m, true);
        assert_eq!(inv.get(0, 0), Some(0.5));
        assert_eq!(inv.get(1, 0), None);
        assert_eq!(inv.get(2, 0), Some(0.25));
    }
}
