use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stereofuse::io::{parse_report, read_image, read_pfm, write_pfm, ImageFormat};
use stereofuse::pipeline::{run, PipelineConfig};
use stereofuse::ScalarField;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stereofuse"))
        .args(args)
        .env_remove("STEREOFUSE_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn pfm(path: &Path) -> ScalarField {
    read_pfm(&fs::read(path).unwrap()).unwrap()
}

fn save(path: &Path, field: &ScalarField) -> String {
    fs::write(path, write_pfm(field)).unwrap();
    s(path)
}

/// Small synthetic scene in `dir/scene`.
fn scene(dir: &Path) -> PathBuf {
    let spec = dir.join("spec.json");
    fs::write(&spec, r#"{"width": 96, "height": 64, "seed": 3}"#).unwrap();
    let out = dir.join("scene");
    let o = bin(&["synth", "--spec", &s(&spec), "--out", &s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn match_args(scene: &Path, out: &Path) -> Vec<String> {
    vec![
        "match".into(),
        "--left".into(),
        s(&scene.join("left.png")),
        "--right".into(),
        s(&scene.join("right.png")),
        "--out".into(),
        s(out),
    ]
}

fn run_match(scene: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = match_args(scene, out);
    args.extend(extra.iter().map(|a| a.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    bin(&refs)
}

#[test]
fn synth_writes_six_files_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = scene(dir.path());
    let mut names: Vec<String> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "disp_left.pfm",
            "disp_right.pfm",
            "left.png",
            "mono.pfm",
            "right.png",
            "scene.json"
        ]
    );
    let b = dir.path().join("again");
    bin(&[
        "synth",
        "--spec",
        &s(&dir.path().join("spec.json")),
        "--out",
        &s(&b),
    ]);
    for n in &names {
        assert_eq!(
            fs::read(a.join(n)).unwrap(),
            fs::read(b.join(n)).unwrap(),
            "{n}"
        );
    }
}

#[test]
fn synth_bad_spec_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.json");
    fs::write(&spec, r#"{"texture_density": 1.5}"#).unwrap();
    let o = bin(&[
        "synth",
        "--spec",
        &s(&spec),
        "--out",
        &s(&dir.path().join("x")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("texture_density"));
}

#[test]
fn match_without_mono_equals_the_library_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scene(dir.path());
    let out = dir.path().join("run");
    let o = run_match(&sc, &out, &["--gt", &s(&sc.join("disp_left.pfm"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let load = |n: &str| read_image(&fs::read(sc.join(n)).unwrap(), ImageFormat::Png).unwrap();
    let expected = run(
        &PipelineConfig::default(),
        &load("left.png"),
        &load("right.png"),
        None,
    )
    .unwrap();
    let expected = read_pfm(&write_pfm(&expected.disparity)).unwrap();
    assert_eq!(pfm(&out.join("disparity.pfm")), expected);

    let report = parse_report(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.series["epe"].len(), 8);
    assert!(report.loss.is_some());
    assert!(!out.join("confidence.pfm").exists());
}

#[test]
fn match_with_mono_writes_fusion_outputs_and_reloadable_config() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scene(dir.path());
    let out = dir.path().join("run");
    let mono = s(&sc.join("mono.pfm"));
    let o = run_match(
        &sc,
        &out,
        &[
            "--mono",
            &mono,
            "--iterations",
            "4",
            "--set",
            "confidence.weights.tau_res=2.0",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for n in [
        "disparity.pfm",
        "trace.json",
        "report.json",
        "config.toml",
        "confidence.pfm",
        "registered_mono.pfm",
    ] {
        assert!(out.join(n).exists(), "{n}");
    }
    let text = fs::read_to_string(out.join("config.toml")).unwrap();
    let config = PipelineConfig::from_toml(&text).unwrap();
    assert_eq!(config.iteration.iterations, 4);
    assert_eq!(config.confidence.weights.tau_res, 2.0);

    let again = dir.path().join("again");
    let o = run_match(
        &sc,
        &again,
        &["--mono", &mono, "--config", &s(&out.join("config.toml"))],
    );
    assert_eq!(code(&o), 0);
    assert_eq!(
        fs::read(out.join("disparity.pfm")).unwrap(),
        fs::read(again.join("disparity.pfm")).unwrap()
    );
}

#[test]
fn match_ablation_flags_reach_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scene(dir.path());
    let out = dir.path().join("run");
    let mono = s(&sc.join("mono.pfm"));
    let o = run_match(&sc, &out, &["--mono", &mono, "--ablate", "ilf=off"]);
    assert_eq!(code(&o), 0);
    let config =
        PipelineConfig::from_toml(&fs::read_to_string(out.join("config.toml")).unwrap()).unwrap();
    assert!(!config.ablation.local_fusion);
    assert!(config.ablation.global_fusion);

    let o = run_match(&sc, &dir.path().join("x"), &["--ablate", "everything=off"]);
    assert_eq!(code(&o), 2);
    let o = run_match(
        &sc,
        &dir.path().join("y"),
        &["--set", "iteration.no_such_key=1"],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn match_registration_failure_exits_3_with_fallback_written() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scene(dir.path());
    let mono = save(&dir.path().join("empty.pfm"), &ScalarField::invalid(96, 64));
    let out = dir.path().join("run");
    let o = run_match(&sc, &out, &["--mono", &mono]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let matching_only = dir.path().join("plain");
    run_match(&sc, &matching_only, &[]);
    assert_eq!(
        fs::read(out.join("disparity.pfm")).unwrap(),
        fs::read(matching_only.join("disparity.pfm")).unwrap()
    );
    let trace = fs::read_to_string(out.join("trace.json")).unwrap();
    assert!(trace.contains("\"fallback\""));
}

#[test]
fn match_unreadable_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let o = run_match(&missing, &dir.path().join("run"), &[]);
    assert_eq!(code(&o), 2);
}

#[test]
fn eval_perfect_prediction_and_aggregation() {
    let dir = tempfile::tempdir().unwrap();
    let gt = ScalarField::from_fn(8, 6, |u, v| (u + v) as f64);
    let g = save(&dir.path().join("gt.pfm"), &gt);
    let out = dir.path().join("r.json");
    let o = bin(&["eval", "--pred", &g, "--gt", &g, "--out", &s(&out)]);
    assert_eq!(code(&o), 0);
    let report = parse_report(&fs::read(&out).unwrap()).unwrap();
    assert!(report
        .metrics
        .values()
        .flat_map(|m| m.values())
        .all(|e| e.value == 0.0));

    let preds: Vec<String> = (1..=3)
        .map(|k| {
            save(
                &dir.path().join(format!("p{k}.pfm")),
                &gt.map(|x| x + k as f64),
            )
        })
        .collect();
    let mut args = vec!["eval", "--pred"];
    args.extend(preds.iter().map(String::as_str));
    args.extend(["--gt", &g, "--out", out.to_str().unwrap()]);
    let o = bin(&args);
    assert_eq!(code(&o), 0);
    let report = parse_report(&fs::read(&out).unwrap()).unwrap();
    let e = &report.metrics["epe"]["all"];
    assert_eq!(e.mean, Some(2.0));
    assert!((e.std.unwrap() - (2.0f64 / 3.0).sqrt()).abs() < 1e-6);
    assert!(String::from_utf8_lossy(&o.stdout).contains("2.000±0.816"));
}

#[test]
fn eval_counts_match_a_hand_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let gt = ScalarField::filled(4, 4, 10.0);
    let errors = [
        0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 5.0, 6.0, -1.0, -2.0, -3.0, -5.0, 0.25, -0.75,
    ];
    let pred = ScalarField::from_fn(4, 4, |u, v| 10.0 + errors[v * 4 + u]);
    let g = save(&dir.path().join("gt.pfm"), &gt);
    let p = save(&dir.path().join("p.pfm"), &pred);
    let o = bin(&["eval", "--pred", &p, "--gt", &g]);
    assert_eq!(code(&o), 0);
    let report = parse_report(&o.stdout).unwrap();
    let count = |x: f64| errors.iter().filter(|e| e.abs() >= x).count() as f64 * 100.0 / 16.0;
    for x in [1.0, 2.0, 3.0, 5.0] {
        assert_eq!(
            report.value(&format!("bad{x:.1}"), "all"),
            Some(count(x)),
            "bad{x}"
        );
    }
    let mean = errors.iter().map(|e: &f64| e.abs()).sum::<f64>() / 16.0;
    assert!((report.value("epe", "all").unwrap() - mean).abs() < 1e-6);

    let o = bin(&["eval", "--pred", &p, "--gt", &g, "--exceeds"]);
    let strict = parse_report(&o.stdout).unwrap();
    assert_eq!(
        strict.value("bad1.0", "all"),
        Some(errors.iter().filter(|e| e.abs() > 1.0).count() as f64 * 100.0 / 16.0)
    );
}

#[test]
fn eval_dimension_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let g = save(&dir.path().join("gt.pfm"), &ScalarField::filled(4, 4, 1.0));
    let p = save(&dir.path().join("p.pfm"), &ScalarField::filled(5, 4, 1.0));
    assert_eq!(code(&bin(&["eval", "--pred", &p, "--gt", &g])), 2);
}

#[test]
fn eval_uses_scene_masks() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scene(dir.path());
    let g = s(&sc.join("disp_left.pfm"));
    let o = bin(&[
        "eval",
        "--pred",
        &g,
        "--gt",
        &g,
        "--masks",
        &s(&sc.join("scene.json")),
    ]);
    assert_eq!(code(&o), 0);
    let report = parse_report(&o.stdout).unwrap();
    for m in ["all", "occ", "nonocc", "textured", "textureless"] {
        assert!(report.counts.contains_key(m), "{m}");
    }
}

fn png_pixels(path: &Path) -> Vec<f64> {
    read_image(&fs::read(path).unwrap(), ImageFormat::Png)
        .unwrap()
        .data()
        .to_vec()
}

#[test]
fn viz_constant_ramp_and_fixed_range() {
    let dir = tempfile::tempdir().unwrap();
    let c = save(&dir.path().join("c.pfm"), &ScalarField::filled(4, 2, 7.0));
    let out = dir.path().join("c.png");
    assert_eq!(
        code(&bin(&[
            "viz",
            "--field",
            &c,
            "--colormap",
            "gray",
            "--out",
            &s(&out)
        ])),
        0
    );
    let px = png_pixels(&out);
    assert!(px.iter().all(|&x| (x - 128.0 / 255.0).abs() < 1e-12));

    let r = save(
        &dir.path().join("r.pfm"),
        &ScalarField::from_fn(16, 1, |u, _| u as f64),
    );
    let out = dir.path().join("r.png");
    bin(&[
        "viz",
        "--field",
        &r,
        "--colormap",
        "gray",
        "--out",
        &s(&out),
    ]);
    let px = png_pixels(&out);
    assert!(px
        .chunks(3)
        .zip(px.chunks(3).skip(1))
        .all(|(a, b)| b[0] > a[0]));

    let a = save(
        &dir.path().join("a.pfm"),
        &ScalarField::from_fn(8, 8, |u, v| (u * v) as f64),
    );
    let b = save(
        &dir.path().join("b.pfm"),
        &ScalarField::from_fn(8, 8, |u, v| (u * v) as f64),
    );
    let (oa, ob) = (dir.path().join("a.png"), dir.path().join("b.png"));
    assert_eq!(
        code(&bin(&[
            "viz",
            "--field",
            &a,
            "--range",
            "0,100",
            "--out",
            &s(&oa)
        ])),
        0
    );
    bin(&["viz", "--field", &b, "--range", "0,100", "--out", &s(&ob)]);
    assert_eq!(fs::read(oa).unwrap(), fs::read(ob).unwrap());
}

#[test]
fn viz_marks_invalid_and_rejects_empty_fields() {
    let dir = tempfile::tempdir().unwrap();
    let f = ScalarField::with_mask(2, 1, vec![1.0, 0.0], vec![true, false]).unwrap();
    let p = save(&dir.path().join("f.pfm"), &f);
    let out = dir.path().join("f.png");
    assert_eq!(code(&bin(&["viz", "--field", &p, "--out", &s(&out)])), 0);
    assert_eq!(&png_pixels(&out)[3..], &[1.0, 0.0, 1.0]);

    let e = save(&dir.path().join("e.pfm"), &ScalarField::invalid(3, 3));
    assert_eq!(code(&bin(&["viz", "--field", &e, "--out", &s(&out)])), 2);
}

#[test]
fn register_recovers_affine_and_reports_insufficient_data() {
    let dir = tempfile::tempdir().unwrap();
    let mono = ScalarField::from_fn(64, 64, |u, v| 1.0 + (u + 2 * v) as f64 * 0.1);
    let m = save(&dir.path().join("m.pfm"), &mono);
    let d = save(&dir.path().join("d.pfm"), &mono.map(|x| 3.0 * x - 2.0));
    let out = dir.path().join("reg");
    let o = bin(&["register", "--mono", &m, "--disp", &d, "--out", &s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("registration.json")).unwrap()).unwrap();
    assert!((json["a"].as_f64().unwrap() - 3.0).abs() < 1e-6);
    assert!((json["b"].as_f64().unwrap() + 2.0).abs() < 1e-6);
    let registered = pfm(&out.join("registered.pfm"));
    assert!((registered.get(5, 5).unwrap() - (3.0 * mono.get(5, 5).unwrap() - 2.0)).abs() < 1e-4);

    let o = bin(&[
        "register",
        "--mono",
        &m,
        "--disp",
        &d,
        "--mode",
        "local",
        "--out",
        &s(&dir.path().join("loc")),
    ]);
    assert_eq!(code(&o), 0);

    let tiny_m = save(&dir.path().join("tm.pfm"), &ScalarField::filled(4, 4, 1.0));
    let tiny_d = save(&dir.path().join("td.pfm"), &ScalarField::filled(4, 4, 2.0));
    let o = bin(&[
        "register",
        "--mono",
        &tiny_m,
        "--disp",
        &tiny_d,
        "--out",
        &s(&dir.path().join("t")),
    ]);
    assert_eq!(code(&o), 3);
}

#[test]
fn thread_flag_zero_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&[
        "--threads",
        "0",
        "synth",
        "--out",
        &s(&dir.path().join("x")),
    ]);
    assert_eq!(code(&o), 2);
}
