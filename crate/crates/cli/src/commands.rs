use std::path::Path;

use serde::Serialize;
use serde_json::json;
use stereofuse::global_fusion::{
    apply_registration, register, RegistrationConfig, RegistrationMode,
};
use stereofuse::io::{
    read_image, read_pfm, write_pfm, write_png, write_png_rgb8, write_report, ImageFormat,
};
use stereofuse::metrics::{
    aggregate, evaluate, evaluate_with, occlusion_split, BadComparison, EvalReport, RegionMask,
    BAD_THRESHOLDS,
};
use stereofuse::pipeline::{self, ConfidenceVariant, PipelineConfig, RunStatus};
use stereofuse::synth::{generate_scene, SceneSpec};
use stereofuse::{ImageBuffer, ScalarField};

use crate::args::{ConfidenceArg, EvalArgs, MatchArgs, ModeArg, RegisterArgs, SynthArgs, VizArgs};
use crate::colormap;
use crate::error::{create_dir, in_file, read_file, write_file, CliError, CliResult};
use crate::scene_file::SceneFile;

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

fn read_text(path: &Path) -> CliResult<String> {
    String::from_utf8(read_file(path)?)
        .map_err(|_| CliError::Input(format!("{}: not valid UTF-8", path.display())))
}

pub fn load_image(path: &Path) -> CliResult<ImageBuffer> {
    let format = ImageFormat::from_extension(&extension(path)).ok_or_else(|| {
        CliError::Input(format!("{}: expected a .png or .pgm image", path.display()))
    })?;
    in_file(path, read_image(&read_file(path)?, format))
}

/// A PFM field, or the luma of a PNG/PGM image.
pub fn load_field(path: &Path) -> CliResult<ScalarField> {
    if extension(path) == "pfm" {
        return in_file(path, read_pfm(&read_file(path)?));
    }
    let img = load_image(path)?.luma();
    let (w, h) = img.dims();
    Ok(ScalarField::from_fn(w, h, |u, v| img.sample(u, v, 0)))
}

fn load_masks(path: &Path) -> CliResult<Vec<RegionMask>> {
    let file: SceneFile = serde_json::from_str(&read_text(path)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    in_file(path, file.region_masks())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn synth(args: &SynthArgs) -> CliResult<()> {
    let mut spec = match &args.spec {
        Some(p) => in_file(p, SceneSpec::from_json(&read_text(p)?))?,
        None => SceneSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let scene = generate_scene(&spec)?;
    create_dir(&args.out)?;
    write_file(&args.out.join("left.png"), &write_png(&scene.left)?)?;
    write_file(&args.out.join("right.png"), &write_png(&scene.right)?)?;
    write_file(&args.out.join("disp_left.pfm"), &write_pfm(&scene.gt_left))?;
    write_file(
        &args.out.join("disp_right.pfm"),
        &write_pfm(&scene.gt_right),
    )?;
    write_file(&args.out.join("mono.pfm"), &write_pfm(&scene.mono))?;
    write_json(&args.out.join("scene.json"), &SceneFile::from_scene(&scene))?;
    Ok(())
}

fn registration_mode(m: ModeArg) -> RegistrationMode {
    match m {
        ModeArg::Global => RegistrationMode::Global,
        ModeArg::Local => RegistrationMode::Local,
    }
}

fn parse_switch(value: &str) -> Option<bool> {
    match value {
        "on" | "true" | "1" => Some(true),
        "off" | "false" | "0" => Some(false),
        _ => None,
    }
}

fn apply_ablation(config: &mut PipelineConfig, items: &[String]) -> CliResult<()> {
    for item in items {
        let (stage, value) = item.split_once('=').unwrap_or((item.as_str(), "off"));
        let on = parse_switch(value)
            .ok_or_else(|| CliError::Input(format!("--ablate {item}: expected on or off")))?;
        match stage {
            "ilf" | "local_fusion" => config.ablation.local_fusion = on,
            "gf" | "global_fusion" => config.ablation.global_fusion = on,
            _ => {
                return Err(CliError::Input(format!(
                    "--ablate {item}: unknown stage `{stage}`"
                )))
            }
        }
    }
    Ok(())
}

fn parse_value(text: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

/// Applies `section.key=value` overrides through the TOML representation,
/// so every config entry is reachable and unknown keys are rejected.
pub fn apply_overrides(config: PipelineConfig, items: &[String]) -> CliResult<PipelineConfig> {
    if items.is_empty() {
        return Ok(config);
    }
    let mut root = toml::Table::try_from(&config).expect("config is a table");
    for item in items {
        let (path, value) = item
            .split_once('=')
            .ok_or_else(|| CliError::Input(format!("--set {item}: expected key=value")))?;
        let keys: Vec<&str> = path.trim().split('.').collect();
        let (last, parents) = keys.split_last().expect("split yields one item");
        let mut table = &mut root;
        for k in parents {
            table = table
                .entry(k.to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()))
                .as_table_mut()
                .ok_or_else(|| CliError::Input(format!("--set {item}: `{k}` is not a section")))?;
        }
        table.insert(last.to_string(), parse_value(value.trim()));
    }
    let text = toml::to_string(&root).expect("table serializes");
    PipelineConfig::from_toml(&text).map_err(|e| CliError::Input(format!("--set: {e}")))
}

pub fn match_config(args: &MatchArgs) -> CliResult<PipelineConfig> {
    let mut c = match &args.config {
        Some(p) => in_file(p, PipelineConfig::from_toml(&read_text(p)?))?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = args.d_max {
        c.matching.d_max = v;
    }
    if let Some(v) = args.downsample {
        c.matching.downsample = v;
    }
    if let Some(v) = args.iterations {
        c.iteration.iterations = v;
    }
    if let Some(v) = args.amplitude {
        c.iteration.amplitude = v;
    }
    if let Some(v) = args.gamma {
        c.loss.gamma = v;
    }
    if let Some(v) = args.kappa {
        c.iteration.kappa = v;
    }
    if let Some(v) = &args.windows {
        c.ordering.windows = v.clone();
    }
    if args.no_sigmoid {
        c.iteration.use_sigmoid = false;
    }
    if let Some(m) = args.registration {
        c.registration.mode = registration_mode(m);
    }
    if let Some(v) = args.confidence {
        c.confidence.variant = match v {
            ConfidenceArg::Hybrid => ConfidenceVariant::Hybrid,
            ConfidenceArg::Cost => ConfidenceVariant::Cost,
            ConfidenceArg::Mono => ConfidenceVariant::Mono,
        };
    }
    if args.seed.is_some() {
        c.iteration.sample_seed = args.seed;
    }
    if args.mono_is_depth {
        c.run.mono_is_depth = true;
    }
    apply_ablation(&mut c, &args.ablate)?;
    let c = apply_overrides(c, &args.overrides)?;
    c.validate().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(c)
}

fn mean_abs_diff(a: &ScalarField, b: &ScalarField) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for i in 0..a.len() {
        if let (Some(x), Some(y)) = (a.at(i), b.at(i)) {
            sum += (x - y).abs();
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn mean_valid(f: &ScalarField) -> Option<f64> {
    let n = f.valid_count();
    (n > 0).then(|| f.iter_valid().map(|(_, x)| x).sum::<f64>() / n as f64)
}

pub fn run_match(args: &MatchArgs, config: &PipelineConfig) -> CliResult<()> {
    let left = load_image(&args.left)?;
    let right = load_image(&args.right)?;
    let mono = args.mono.as_deref().map(load_field).transpose()?;
    let gt = args.gt.as_deref().map(load_field).transpose()?;
    let out = pipeline::run(config, &left, &right, mono.as_ref())?;

    create_dir(&args.out)?;
    write_file(&args.out.join("disparity.pfm"), &write_pfm(&out.disparity))?;
    write_file(&args.out.join("config.toml"), config.to_toml().as_bytes())?;
    if let Some(f) = &out.fusion {
        write_file(&args.out.join("confidence.pfm"), &write_pfm(&f.confidence))?;
        write_file(
            &args.out.join("registered_mono.pfm"),
            &write_pfm(&f.registered_mono),
        )?;
    }

    let iterates = &out.trace.iterates;
    let updates: Vec<f64> = std::iter::once(&out.init)
        .chain(iterates.iter())
        .collect::<Vec<_>>()
        .windows(2)
        .map(|w| mean_abs_diff(w[0], w[1]))
        .collect();
    let guidance: Vec<Option<f64>> = out.trace.guidance.iter().map(mean_valid).collect();
    let (status, reason) = match &out.status {
        RunStatus::Fused => ("fused", None),
        RunStatus::MatchingOnly => ("matching_only", None),
        RunStatus::Fallback(r) => ("fallback", Some(r.clone())),
    };
    let registration = out.registration.as_ref().map(|r| {
        json!({
            "mode": r.mode,
            "a": r.global_a,
            "b": r.global_b,
        })
    });
    write_json(
        &args.out.join("trace.json"),
        &json!({
            "status": status,
            "fallback_reason": reason,
            "iterations": iterates.len(),
            "downsample": out.factor,
            "mean_abs_update": updates,
            "mean_guidance": guidance,
            "registration": registration,
        }),
    )?;

    let mut report = EvalReport::new();
    report.series.insert("mean_abs_update".into(), updates);
    if let Some(gt) = &gt {
        let (w, h) = out.disparity.dims();
        let mut masks = vec![RegionMask::all(w, h)];
        if let Some(p) = &args.masks {
            masks.extend(load_masks(p)?.into_iter().filter(|m| m.name != "all"));
        }
        let scored = evaluate(&out.disparity, gt, &masks)?;
        report.metrics = scored.metrics;
        report.counts = scored.counts;
        let all = RegionMask::all(w, h);
        let series = out
            .iterates_full_res()?
            .iter()
            .map(|d| stereofuse::metrics::epe(d, gt, &all))
            .collect::<stereofuse::Result<Vec<_>>>()?;
        report.series.insert("epe".into(), series);
        report.loss = Some(out.loss(gt, &config.loss)?);
    }
    write_file(&args.out.join("report.json"), &write_report(&report))?;

    if let RunStatus::Fallback(reason) = &out.status {
        return Err(CliError::Degraded(format!(
            "registration failed ({reason}); wrote the refined disparity"
        )));
    }
    Ok(())
}

pub fn eval(args: &EvalArgs) -> CliResult<()> {
    let gt = load_field(&args.gt)?;
    let (w, h) = gt.dims();
    let mut masks = vec![RegionMask::all(w, h)];
    if let Some(p) = &args.masks {
        masks.extend(load_masks(p)?.into_iter().filter(|m| m.name != "all"));
    }
    if let Some(p) = &args.gt_right {
        let right = load_field(p)?;
        let occ = stereofuse::metrics::occlusion_mask(&gt, &right, args.occ_tol)?;
        let (occ, nonocc) = occlusion_split(&gt, &occ)?;
        masks.retain(|m| m.name != "occ" && m.name != "nonocc");
        masks.push(occ);
        masks.push(nonocc);
    }
    for m in &masks {
        if m.dims() != (w, h) {
            return Err(stereofuse::Error::dims(
                &format!("mask `{}` vs ground truth", m.name),
                m.dims(),
                (w, h),
            )
            .into());
        }
    }
    let cmp = if args.exceeds {
        BadComparison::Exceeds
    } else {
        BadComparison::AtLeast
    };
    let reports = args
        .pred
        .iter()
        .map(|p| {
            Ok(evaluate_with(
                &load_field(p)?,
                &gt,
                &masks,
                &BAD_THRESHOLDS,
                cmp,
            )?)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let report = if reports.len() == 1 {
        reports.into_iter().next().expect("one report")
    } else {
        aggregate(&reports)?
    };
    let bytes = write_report(&report);
    match &args.out {
        Some(p) => {
            write_file(p, &bytes)?;
            print_table(&report);
        }
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    Ok(())
}

fn print_table(report: &EvalReport) {
    for (metric, masks) in &report.metrics {
        for (mask, e) in masks {
            let value = match (e.mean, e.std) {
                (Some(m), Some(s)) => stereofuse::metrics::format_mean_std(m, s, 3),
                _ => format!("{:.3}", e.value),
            };
            println!("{metric:<8} {mask:<12} {value}");
        }
    }
}

pub fn viz(args: &VizArgs) -> CliResult<()> {
    let field = load_field(&args.field)?;
    let (lo, hi) = match &args.range {
        Some(r) => *r,
        None => field.min_max().ok_or_else(|| {
            CliError::Input(format!(
                "{}: no valid pixels to render",
                args.field.display()
            ))
        })?,
    };
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(CliError::Input(format!(
            "--range {lo},{hi}: expected finite lo <= hi"
        )));
    }
    let rgb = colormap::render(&field, args.colormap, lo, hi);
    let (w, h) = field.dims();
    write_file(&args.out, &write_png_rgb8(w, h, &rgb)?)
}

pub fn register_cmd(args: &RegisterArgs) -> CliResult<()> {
    let mut cfg: RegistrationConfig = match &args.config {
        Some(p) => in_file(p, PipelineConfig::from_toml(&read_text(p)?))?.registration,
        None => RegistrationConfig::default(),
    };
    if let Some(m) = args.mode {
        cfg.mode = registration_mode(m);
    }
    if let Some(t) = args.tile {
        cfg.tile = t;
    }
    if let Some(l) = args.lambda {
        cfg.lambda_reg = l;
    }
    cfg.validate().map_err(|e| CliError::Input(e.to_string()))?;
    let mut mono = load_field(&args.mono)?;
    if args.mono_is_depth {
        let (w, h) = mono.dims();
        mono = ScalarField::from_fn_opt(w, h, |u, v| {
            mono.get(u, v).filter(|z| *z > 0.0).map(|z| 1.0 / z)
        });
    }
    let disp = load_field(&args.disp)?;
    let reg = register(&mono, &disp, &cfg)?;
    let registered = apply_registration(&mono, &reg)?;
    create_dir(&args.out)?;
    write_file(&args.out.join("registered.pfm"), &write_pfm(&registered))?;
    write_json(
        &args.out.join("registration.json"),
        &json!({
            "mode": reg.mode,
            "a": reg.global_a,
            "b": reg.global_b,
            "a_range": reg.a.min_max(),
            "b_range": reg.b.min_max(),
        }),
    )
}
