use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ndarray::Array2;
use vlkit_core::decode::{decode_depth, decode_semseg, DecodeConfig, LogitTensor};
use vlkit_core::depth::{quantize, DepthMap, QuantSpec};
use vlkit_core::grammar::{BoundingBox, Keypoint, PoseInstance, POSE_KEYPOINTS};
use vlkit_core::mask::LabelMap;
use vlkit_core::metrics::{
    ciou, delta1, filter_rollout_groups, fit_power_law, map_coco, match_pose_by_center, miou, pckh,
    FilterConfig, LabeledBox, RolloutGroup, ScoredBox,
};
use vlkit_core::model::{load_checkpoint, run_demo, DemoConfig};
use vlkit_core::{UnifiedVocab, VocabConfig};

const APPENDIX_BOX: &str = "<box><x_155><y_154><x_221><y_206></box>";

fn vlkit(args: &[&str]) -> Output {
    vlkit_env(args, &[])
}

fn vlkit_env(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vlkit"));
    cmd.args(args).env_remove("YVL_CONFIG");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn field(report: &str, key: &str) -> f64 {
    let line = report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")))
        .unwrap_or_else(|| panic!("no {key} in {report}"));
    line.parse().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: impl AsRef<[u8]>) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

/// Deterministic pseudo-random values without an RNG dependency.
fn wobble(i: usize, salt: f64) -> f64 {
    ((i as f64 * 12.9898 + salt).sin() * 43758.5453).fract() * 6.0 - 3.0
}

fn logits(rows: usize, cols: usize, salt: f64) -> LogitTensor {
    // Rounded through f32 so the file round trip is exact.
    let v = (0..rows * cols).map(|i| wobble(i, salt) as f32 as f64).collect();
    LogitTensor::new(Array2::from_shape_vec((rows, cols), v).unwrap()).unwrap()
}

fn save_logits(dir: &Path, name: &str, z: &LogitTensor) -> PathBuf {
    let mut bytes = Vec::new();
    z.write_to(&mut bytes).unwrap();
    write(dir, name, bytes)
}

fn label_map(h: usize, w: usize, classes: u32, salt: f64) -> LabelMap {
    let v = (0..h * w).map(|i| ((wobble(i, salt) + 3.0) as u32).min(classes - 1)).collect();
    LabelMap::new(h, w, v).unwrap()
}

#[test]
fn every_subcommand_has_help() {
    let paths: &[&[&str]] = &[
        &[],
        &["vocab"],
        &["vocab", "build"],
        &["emit"],
        &["parse"],
        &["rle"],
        &["rle", "encode"],
        &["rle", "decode"],
        &["depth"],
        &["depth", "quantize"],
        &["depth", "dequantize"],
        &["decode"],
        &["decode", "semseg"],
        &["decode", "depth"],
        &["decode", "refseg"],
        &["metrics"],
        &["metrics", "iou"],
        &["metrics", "map"],
        &["metrics", "miou"],
        &["metrics", "ciou"],
        &["metrics", "pckh"],
        &["metrics", "delta1"],
        &["reward"],
        &["rollout"],
        &["rollout", "filter"],
        &["fit-scaling"],
        &["train"],
        &["train", "demo"],
    ];
    for p in paths {
        let mut args = p.to_vec();
        args.push("--help");
        let text = ok(&vlkit(&args));
        assert!(text.contains("Usage: vlkit"), "{p:?}: {text}");
    }
}

#[test]
fn unknown_flags_and_bad_inputs_fail_cleanly() {
    let out = vlkit(&["metrics", "iou", "--pred", "0,0,1,1", "--gt", "0,0,1,1", "--frobnicate"]);
    assert!(!out.status.success());
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.map", "2 2\n1 2\n3\n");
    let dest = dir.path().join("out.rle");
    let out = vlkit(&["rle", "encode", s(&bad), "-o", s(&dest)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("vlkit: error:") && err.contains("row 2"), "{err}");
    assert!(!dest.exists());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    let missing = vlkit(&["rle", "decode", s(&dir.path().join("nope.rle"))]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn rle_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for (i, (h, w)) in [(1, 1), (4, 7), (9, 3)].into_iter().enumerate() {
        let map = label_map(h, w, 4, i as f64);
        let src = write(dir.path(), "in.map", map.to_text());
        for wrap in [false, true] {
            let rle = dir.path().join("in.rle");
            let back = dir.path().join("back.map");
            let mut enc = vec!["rle", "encode", s(&src), "-o", s(&rle)];
            if wrap {
                enc.push("--wrap");
            }
            ok(&vlkit(&enc));
            ok(&vlkit(&["rle", "decode", s(&rle), "-o", s(&back)]));
            assert_eq!(std::fs::read(&src).unwrap(), std::fs::read(&back).unwrap());
        }
    }
}

#[test]
fn semseg_decode_matches_library_across_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = UnifiedVocab::build(VocabConfig::default()).unwrap();
    let cats: Vec<Vec<u32>> = ["sky", "road"].iter().map(|c| vocab.category_token_ids(c).as_set()).collect();
    let tensors: Vec<LogitTensor> = (0..3).map(|i| logits(9, 256, i as f64)).collect();
    let files: Vec<PathBuf> =
        tensors.iter().enumerate().map(|(i, z)| save_logits(dir.path(), &format!("t{i}.vllt"), z)).collect();

    let single = ok(&vlkit(&[
        "decode",
        "semseg",
        "--logits",
        s(&files[0]),
        "--grid",
        "3x3",
        "--size",
        "12x12",
        "--cats",
        "sky,road",
    ]));
    let expect = decode_semseg(&tensors[0], &cats, &DecodeConfig::default(), (3, 3), (12, 12)).unwrap();
    assert_eq!(single, expect.to_text());

    let out_dir = dir.path().join("maps");
    std::fs::create_dir(&out_dir).unwrap();
    let mut args =
        vec!["--jobs", "3", "decode", "semseg", "--grid", "3x3", "--size", "12x12", "--cats", "sky,road"];
    args.extend(["--background", "-o", s(&out_dir), "--logits"]);
    args.extend(files.iter().map(|f| s(f)));
    ok(&vlkit(&args));
    for (i, z) in tensors.iter().enumerate() {
        let got = std::fs::read_to_string(out_dir.join(format!("t{i}.map"))).unwrap();
        let cfg = DecodeConfig { background_mode: true, ..DecodeConfig::default() };
        assert_eq!(got, decode_semseg(z, &cats, &cfg, (3, 3), (12, 12)).unwrap().to_text());
    }
}

#[test]
fn depth_decode_and_codec_match_library() {
    let dir = tempfile::tempdir().unwrap();
    let spec = QuantSpec::new(vlkit_core::depth::Scheme::Linear, 0.0, 8.0, 16).unwrap();
    let z = logits(4, 16, 7.0);
    let file = save_logits(dir.path(), "d.vllt", &z);
    let got = ok(&vlkit(&[
        "decode",
        "depth",
        "--logits",
        s(&file),
        "--grid",
        "2x2",
        "--size",
        "5x6",
        "--spec",
        "linear 0 8 16",
    ]));
    assert_eq!(got, decode_depth(&z, &spec, (2, 2), (5, 6)).unwrap().to_text(Some(&spec)));

    let depths = DepthMap::new(2, 3, vec![0.7, 0.0, 3.25, 9.9, f64::NAN, 5.0]).unwrap();
    let src = write(dir.path(), "x.depth", depths.to_text(Some(&QuantSpec::nyuv2())));
    let labels = ok(&vlkit(&["depth", "quantize", s(&src)]));
    assert_eq!(labels, quantize(&depths, &QuantSpec::nyuv2()).to_text());
    let flagged = ok(&vlkit(&["depth", "quantize", s(&src), "--spec", "cityscapes"]));
    assert_eq!(flagged, quantize(&depths, &QuantSpec::cityscapes()).to_text());
    let lab = write(dir.path(), "x.map", &labels);
    let back = ok(&vlkit(&["depth", "dequantize", s(&lab), "--spec", "nyuv2"]));
    let (map, parsed) = DepthMap::from_text(&back).unwrap();
    assert_eq!(parsed, Some(QuantSpec::nyuv2()));
    assert_eq!(quantize(&map, &QuantSpec::nyuv2()).to_text(), labels);
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "vlkit.cfg", "version: 1\ncoords_per_axis: 300\ndepth_spec: ddad\n");
    let depths = write(dir.path(), "d.depth", "1 2\n3.5 60\n");
    let via_env = ok(&vlkit_env(&["depth", "quantize", s(&depths)], &[("YVL_CONFIG", &cfg)]));
    let (map, _) = DepthMap::from_text("1 2\n3.5 60\n").unwrap();
    assert_eq!(via_env, quantize(&map, &QuantSpec::ddad()).to_text());
    let overridden =
        ok(&vlkit_env(&["depth", "quantize", s(&depths), "--spec", "nyuv2"], &[("YVL_CONFIG", &cfg)]));
    assert_eq!(overridden, quantize(&map, &QuantSpec::nyuv2()).to_text());

    let manifest = ok(&vlkit(&["--config", s(&cfg), "vocab", "build"]));
    let v = UnifiedVocab::from_manifest(&manifest).unwrap();
    assert_eq!(v.coords_per_axis(), 300);
    let flag = ok(&vlkit(&["--config", s(&cfg), "vocab", "build", "--coords-per-axis", "40"]));
    assert_eq!(UnifiedVocab::from_manifest(&flag).unwrap().coords_per_axis(), 40);
    let manifest_file = write(dir.path(), "v.manifest", &manifest);
    let wide = write(dir.path(), "wide.jsonl", "{\"box\":[10,10,500,20]}\n");
    let strict = vlkit(&["emit", "boxes", s(&wide), "--vocab", s(&manifest_file)]);
    assert_eq!(strict.status.code(), Some(1));
    let clamped = ok(&vlkit(&["emit", "boxes", s(&wide), "--vocab", s(&manifest_file), "--mode", "clamp"]));
    assert_eq!(clamped, "<box><x_10><y_10><x_299><y_20></box>\n");

    let broken = write(dir.path(), "broken.cfg", "version: 1\ncolour: red\n");
    let out = vlkit_env(&["vocab", "build"], &[("YVL_CONFIG", &broken)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));
}

#[test]
fn structured_values_round_trip_through_records() {
    let dir = tempfile::tempdir().unwrap();
    let records = [
        ("boxes", "{\"box\":[155,154,221,206]}\n"),
        ("detections", "{\"category\":\"cat\",\"box\":[1,2,30,40]}\n{\"category\":\"cat\",\"box\":[5,5,9,9]}\n{\"category\":\"dog\",\"box\":[0,0,3,3]}\n"),
        ("poly", "{\"points\":[[0,0],[10,0],[10,10],[0,10]]}\n"),
    ];
    for (kind, text) in records {
        let src = write(dir.path(), "in.jsonl", text);
        let tokens = ok(&vlkit(&["emit", kind, s(&src)]));
        let back = ok(&vlkit(&["parse", kind, "--text", tokens.trim()]));
        assert_eq!(back, text, "{kind}");
    }
    let kp: Vec<String> = (0..POSE_KEYPOINTS).map(|j| format!("[{}.0,{}.0,{}.0]", j, 2 * j, j % 2)).collect();
    let pose = format!("{{\"box\":[0,0,40,40],\"keypoints\":[{}]}}\n", kp.join(","));
    let src = write(dir.path(), "pose.jsonl", &pose);
    let tokens = ok(&vlkit(&["emit", "pose", s(&src)]));
    let file = write(dir.path(), "pose.txt", &tokens);
    assert_eq!(ok(&vlkit(&["parse", "pose", s(&file)])), pose);

    let parsed = ok(&vlkit(&["parse", "boxes", "--text", APPENDIX_BOX]));
    assert_eq!(parsed, "{\"box\":[155,154,221,206]}\n");
    let chatty = format!("Sure. {APPENDIX_BOX} is where it is.");
    assert!(!vlkit(&["parse", "boxes", "--text", &chatty]).status.success());
    assert_eq!(ok(&vlkit(&["parse", "boxes", "--extract", "--text", &chatty])), parsed);
}

#[test]
fn grounding_reward_on_the_appendix_box_is_one() {
    let out = ok(&vlkit(&["reward", "grounding", "--pred", APPENDIX_BOX, "--gt", APPENDIX_BOX]));
    assert_eq!(out, "task: grounding\nreward: 1.0\n");
    let json =
        ok(&vlkit(&["--format", "json", "reward", "grounding", "--pred", "0,0,10,10", "--gt", "0,0,40,10"]));
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["reward"].as_f64().unwrap(), 0.25 / 0.5);
}

#[test]
fn other_rewards_follow_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let count = |pred: &str, gt: &str| {
        field(&ok(&vlkit(&["reward", "counting", "--pred", pred, "--gt", gt])), "reward")
    };
    assert_eq!(count("I count them. The answer is 7", "7"), 1.0);
    assert_eq!(count("no idea", "7"), 0.0);
    assert_eq!(count("90", "100"), 1.0 - 10.0 / 100.0);
    let parse = ok(&vlkit(&["reward", "parsing", "--pred", "kitten", "--gt", "sitting"]));
    assert_eq!(field(&parse, "reward"), 1.0 - 3.0 / 7.0);

    let a = label_map(6, 6, 3, 1.0);
    let b = label_map(6, 6, 3, 2.0);
    let pa = write(dir.path(), "a.map", a.to_text());
    let pb = write(dir.path(), "b.map", b.to_text());
    let at = |p: &Path| format!("@{}", s(p));
    let r = ok(&vlkit(&["reward", "semseg", "--pred", &at(&pa), "--gt", &at(&pb), "--classes", "3"]));
    assert_eq!(field(&r, "reward"), miou(&a, &b, 3, Some(255)).unwrap());
    let square = "<ins><poly><x_0><y_0><x_100><y_0><x_100><y_100><x_0><y_100></poly></ins>";
    let r = ok(&vlkit(&["reward", "refseg", "--pred", square, "--gt", square, "--raster", "128x128"]));
    assert_eq!(field(&r, "reward"), 1.0);
}

#[test]
fn dense_metrics_are_bit_identical_to_library() {
    let dir = tempfile::tempdir().unwrap();
    let mut args_m = vec![
        "--jobs".to_string(),
        "2".into(),
        "metrics".into(),
        "miou".into(),
        "--classes".into(),
        "4".into(),
    ];
    let mut args_c = vec!["metrics".to_string(), "ciou".into()];
    let (mut preds, mut gts, mut pairs, mut bin_pairs) = (vec![], vec![], vec![], vec![]);
    for i in 0..4 {
        let p = label_map(8, 5, 4, 10.0 + i as f64);
        let g = label_map(8, 5, 4, 20.0 + i as f64);
        preds.push(write(dir.path(), &format!("p{i}.map"), p.to_text()));
        gts.push(write(dir.path(), &format!("g{i}.map"), g.to_text()));
        let bin =
            |m: &LabelMap| LabelMap::new(8, 5, m.labels().iter().map(|&l| (l > 1) as u32).collect()).unwrap();
        bin_pairs.push((bin(&p), bin(&g)));
        pairs.push((p, g));
    }
    let bpreds: Vec<PathBuf> = bin_pairs
        .iter()
        .enumerate()
        .map(|(i, (p, _))| write(dir.path(), &format!("bp{i}.map"), p.to_text()))
        .collect();
    let bgts: Vec<PathBuf> = bin_pairs
        .iter()
        .enumerate()
        .map(|(i, (_, g))| write(dir.path(), &format!("bg{i}.map"), g.to_text()))
        .collect();
    args_m.push("--pred".into());
    args_m.extend(preds.iter().map(|p| s(p).to_string()));
    args_m.push("--gt".into());
    args_m.extend(gts.iter().map(|p| s(p).to_string()));
    args_c.push("--pred".into());
    args_c.extend(bpreds.iter().map(|p| s(p).to_string()));
    args_c.push("--gt".into());
    args_c.extend(bgts.iter().map(|p| s(p).to_string()));

    let m = ok(&vlkit(&args_m.iter().map(String::as_str).collect::<Vec<_>>()));
    let per: Vec<f64> = pairs.iter().map(|(p, g)| miou(p, g, 4, None).unwrap()).collect();
    for (i, v) in per.iter().enumerate() {
        assert_eq!(field(&m, &format!("miou.{i}")), *v);
    }
    assert_eq!(field(&m, "miou"), per.iter().sum::<f64>() / 4.0);
    let c = ok(&vlkit(&args_c.iter().map(String::as_str).collect::<Vec<_>>()));
    assert_eq!(field(&c, "ciou"), ciou(&bin_pairs).unwrap());

    let pd = DepthMap::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 0.0, 6.0]).unwrap();
    let gd = DepthMap::new(2, 3, vec![1.1, 3.0, 3.0, 0.0, 5.0, 6.5]).unwrap();
    let a = write(dir.path(), "p.depth", pd.to_text(None));
    let b = write(dir.path(), "g.depth", gd.to_text(None));
    let d = ok(&vlkit(&["metrics", "delta1", "--pred", s(&a), "--gt", s(&b)]));
    assert_eq!(field(&d, "delta1"), delta1(&pd, &gd).unwrap());
}

#[test]
fn detection_and_pose_metrics_are_bit_identical_to_library() {
    let dir = tempfile::tempdir().unwrap();
    let bx = |a, b, c, d| BoundingBox::new(a, b, c, d).unwrap();
    let gt = "{\"image\":\"a\",\"category\":\"cat\",\"box\":[0,0,10,10]}\n\
              {\"image\":\"a\",\"category\":\"dog\",\"box\":[20,20,30,35]}\n\
              {\"image\":\"b\",\"category\":\"cat\",\"box\":[5,5,15,15]}\n";
    let pred = "{\"image\":\"b\",\"category\":\"cat\",\"box\":[5,6,15,15],\"score\":0.8}\n\
                {\"image\":\"a\",\"category\":\"cat\",\"box\":[0,0,6,10],\"score\":0.9}\n\
                {\"image\":\"a\",\"category\":\"dog\",\"box\":[21,20,30,35],\"score\":0.4}\n\
                {\"image\":\"a\",\"category\":\"cat\",\"box\":[40,40,50,50],\"score\":0.95}\n";
    let g = write(dir.path(), "gt.jsonl", gt);
    let p = write(dir.path(), "pred.jsonl", pred);
    let out = ok(&vlkit(&["metrics", "map", "--pred", s(&p), "--gt", s(&g)]));
    let sb = |c: &str, b, s| ScoredBox { category: c.into(), bbox: b, score: s };
    let lb = |c: &str, b| LabeledBox { category: c.into(), bbox: b };
    let expect = map_coco(
        &[
            vec![
                sb("cat", bx(0, 0, 6, 10), 0.9),
                sb("dog", bx(21, 20, 30, 35), 0.4),
                sb("cat", bx(40, 40, 50, 50), 0.95),
            ],
            vec![sb("cat", bx(5, 6, 15, 15), 0.8)],
        ],
        &[
            vec![lb("cat", bx(0, 0, 10, 10)), lb("dog", bx(20, 20, 30, 35))],
            vec![lb("cat", bx(5, 5, 15, 15))],
        ],
    );
    assert_eq!(field(&out, "map"), expect);
    assert_eq!(field(&out, "images"), 2.0);

    let pose = |dx: u32, vis: fn(usize) -> bool| PoseInstance {
        bbox: bx(0, 0, 100, 100),
        keypoints: std::array::from_fn(|j| Keypoint {
            x: 10 + 3 * j as u32 + dx,
            y: 20 + j as u32,
            visible: vis(j),
        }),
    };
    let line = |p: &PoseInstance| {
        let kp: Vec<String> = p
            .keypoints
            .iter()
            .map(|k| format!("[{},{},{}]", k.x, k.y, if k.visible { "1.0" } else { "0.0" }))
            .collect();
        format!("{{\"box\":[0,0,100,100],\"keypoints\":[{}]}}\n", kp.join(","))
    };
    let gt_pose = pose(0, |j| j != 3);
    let preds = [pose(40, |_| true), pose(2, |_| true)];
    let g = write(dir.path(), "gp.jsonl", line(&gt_pose));
    let p = write(dir.path(), "pp.jsonl", preds.iter().map(line).collect::<String>());
    let out = ok(&vlkit(&["metrics", "pckh", "--pred", s(&p), "--gt", s(&g), "--head-len", "5"]));
    let best = match_pose_by_center(&preds, &gt_pose).unwrap();
    let expect = pckh(&preds[best], &gt_pose, 5.0, 0.5).unwrap();
    assert_eq!(field(&out, "pckh"), expect.mean.unwrap());
    assert_eq!(field(&out, "visible_joints"), 15.0);
}

#[test]
fn rollout_filter_and_scaling_fit_match_library() {
    let dir = tempfile::tempdir().unwrap();
    let groups = vec![
        RolloutGroup {
            rewards: vec![1.0, 0.0],
            ratios: vec![vec![1.0, 1.01], vec![0.99]],
            advantages: vec![vec![1.0, 1.0], vec![-1.0]],
        },
        RolloutGroup {
            rewards: vec![0.0, 0.0],
            ratios: vec![vec![1.0], vec![1.0]],
            advantages: vec![vec![0.0], vec![0.0]],
        },
        RolloutGroup {
            rewards: vec![1.0, 0.2],
            ratios: vec![vec![3.0], vec![0.2]],
            advantages: vec![vec![1.0], vec![1.0]],
        },
    ];
    let text: String = groups.iter().map(|g| serde_json::to_string(g).unwrap() + "\n").collect();
    let src = write(dir.path(), "g.jsonl", text);
    let dest = dir.path().join("kept.jsonl");
    let report = ok(&vlkit(&["rollout", "filter", s(&src), "-o", s(&dest)]));
    let kept = filter_rollout_groups(&groups, &FilterConfig::default()).unwrap();
    assert_eq!(kept.len(), 1);
    let written: Vec<RolloutGroup> =
        std::fs::read_to_string(&dest).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(written, kept);
    assert_eq!(field(&report, "kept"), 1.0);

    let points: Vec<(f64, f64)> = [1e3, 1e4, 1e5, 1e6]
        .iter()
        .map(|&c: &f64| (c, 3.0 * c.powf(-0.102) * (1.0 + 0.01 * c.log10().sin())))
        .collect();
    let text: String = points.iter().map(|(c, e)| format!("{c:?} {e:?}\n")).collect();
    let src = write(dir.path(), "pts.txt", format!("# compute loss\n{text}"));
    let out = ok(&vlkit(&["fit-scaling", s(&src), "--predict", "1e7"]));
    let fit = fit_power_law(&points).unwrap();
    assert_eq!(field(&out, "alpha"), fit.alpha);
    assert_eq!(field(&out, "r2"), fit.r2);
    assert_eq!(field(&out, "predict.10000000"), fit.predict(1e7));
}

#[test]
fn train_demo_is_seeded_and_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("m.yvck");
    let losses = dir.path().join("losses.txt");
    let args =
        ["--seed", "9", "train", "demo", "--steps", "25", "--checkpoint", s(&ck), "--losses", s(&losses)];
    let a = ok(&vlkit(&args));
    let first = std::fs::read(&ck).unwrap();
    assert_eq!(ok(&vlkit(&args)), a);
    assert_eq!(std::fs::read(&ck).unwrap(), first);
    let (model, report) = run_demo(&DemoConfig { seed: 9, steps: 25, ..DemoConfig::default() }).unwrap();
    assert_eq!(field(&a, "smoothed_end"), report.smoothed_end);
    let listed: Vec<f64> =
        std::fs::read_to_string(&losses).unwrap().lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(listed, report.losses);
    assert_eq!(load_checkpoint(first.as_slice()).unwrap().cfg, model.cfg);
    let other = ok(&vlkit(&["--seed", "10", "train", "demo", "--steps", "25"]));
    assert_ne!(field(&other, "smoothed_end"), report.smoothed_end);
}
