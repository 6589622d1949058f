mod common;

use std::fs;
use std::path::Path;

use common::{ok, prepared, run, run_in, s, write_raw};
use graphtone::checkpoint::Checkpoint;
use graphtone::dataset::{load_reference, DatasetManifest};
use graphtone::synthetic::{neighbourhood_dataset, stripes, textured_image, SyntheticPair};
use graphtone::rng::{stream_rng, Stream};
use graphtone::{AblationMode, DisplayImage};

fn files_in(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn help_and_usage_exit_codes() {
    let help = run(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    let text = String::from_utf8_lossy(&help.stdout);
    for sub in ["prepare", "graph", "train", "infer", "blend", "eval", "tonecurve", "contrast-select"] {
        assert!(text.contains(sub), "help lacks {sub}");
    }
    assert_eq!(run(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn missing_inputs_are_validation_errors_and_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let r = run(&["train", "--manifest", "/nonexistent/manifest.json", "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(!out.exists());
    let r = run(&["eval", "--pred", "/nonexistent", "--ref", "/nonexistent", "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(!out.exists());
}

fn saturate(pair: &mut SyntheticPair, count: usize) {
    for p in pair.linear.0.pixels_mut().iter_mut().take(count) {
        *p = [1.0, 1.0, 1.0];
    }
}

#[test]
fn prepare_applies_the_saturation_filter() {
    let dir = tempfile::tempdir().unwrap();
    let mut pairs = neighbourhood_dataset(10, 20, 5);
    // 20 of 400 pixels = 5% saturated, above the 3% default.
    saturate(&mut pairs[1], 20);
    saturate(&mut pairs[6], 20);
    // 2% stays below the threshold.
    saturate(&mut pairs[3], 8);
    let raw = write_raw(dir.path(), &pairs);
    let out = dir.path().join("prepared");
    ok(&run(&[
        "prepare", "--input", s(&raw.input), "--seg", s(&raw.seg), "--ref", s(&raw.reference),
        "--resize", "16x16", "--out", s(&out),
    ]));
    let m = DatasetManifest::load(out.join("manifest.json")).unwrap();
    assert_eq!(m.entries.len(), 8);
    let rejected: Vec<&str> = m.report.iter().filter(|r| !r.kept).map(|r| r.id.as_str()).collect();
    assert_eq!(rejected, ["synth-001", "synth-006"]);
    m.validate().unwrap();
    let img = graphtone::dataset::load_linear(&m.entries[0].linear).unwrap();
    assert_eq!(img.dims(), (16, 16));
    let csv = fs::read_to_string(out.join("filter_report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);

    // With the filter disabled every loadable entry is kept.
    let all = dir.path().join("all");
    ok(&run(&[
        "prepare", "--input", s(&raw.input), "--seg", s(&raw.seg), "--ref", s(&raw.reference),
        "--no-saturation-filter", "--out", s(&all),
    ]));
    assert_eq!(DatasetManifest::load(all.join("manifest.json")).unwrap().entries.len(), 10);
}

#[test]
fn prepare_skips_entries_without_segmentation() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = neighbourhood_dataset(4, 12, 6);
    let raw = write_raw(dir.path(), &pairs);
    fs::remove_file(raw.seg.join("synth-002.png")).unwrap();
    let out = dir.path().join("prepared");
    ok(&run(&[
        "prepare", "--input", s(&raw.input), "--seg", s(&raw.seg), "--ref", s(&raw.reference),
        "--no-resize", "--out", s(&out),
    ]));
    let m = DatasetManifest::load(out.join("manifest.json")).unwrap();
    let ids: Vec<&str> = m.entries.iter().map(|e| e.id.as_str()).collect();
    assert_eq!(ids, ["synth-000", "synth-001", "synth-003"]);

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let r = run(&["prepare", "--input", s(&empty), "--seg", s(&raw.seg), "--ref", s(&raw.reference), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn global_lut_training_has_no_gcn() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = prepared(dir.path(), &neighbourhood_dataset(3, 12, 1), "0");
    let out = dir.path().join("run");
    ok(&run(&[
        "train", "--manifest", s(&manifest), "--ablation", "global_lut", "--schedule", "ablation-flat",
        "--epochs", "2", "--out", s(&out),
    ]));
    let ckpt = Checkpoint::load(out.join("model.ckpt")).unwrap();
    assert_eq!(ckpt.params.mode(), AblationMode::GlobalLut);
    assert!(ckpt.params.gcn.is_none());
    assert!(ckpt.params.named_tensors().iter().all(|(n, _)| n.starts_with("fc.")));
    for f in ["config.toml", "loss.png", "model.ckpt", "report.csv", "state.ckpt"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert_eq!(fs::read_to_string(out.join("report.csv")).unwrap().lines().count(), 3);
}

#[test]
fn resume_continues_and_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = prepared(dir.path(), &neighbourhood_dataset(4, 12, 2), "0.25");
    let full = dir.path().join("full");
    let part = dir.path().join("part");
    let common = ["--ablation", "local_lut", "--seed", "9", "--checkpoint-every", "1"];
    let mut a = vec!["train", "--manifest", s(&manifest), "--epochs", "4", "--out", s(&full)];
    a.extend(common);
    ok(&run(&a));
    let mut b = vec!["train", "--manifest", s(&manifest), "--epochs", "2", "--out", s(&part)];
    b.extend(common);
    ok(&run(&b));
    let state = part.join("state.ckpt");
    let mut c = vec!["train", "--manifest", s(&manifest), "--epochs", "4", "--resume", s(&state), "--out", s(&part)];
    c.extend(common);
    ok(&run(&c));
    assert_eq!(fs::read(full.join("state.ckpt")).unwrap(), fs::read(part.join("state.ckpt")).unwrap());
    assert_eq!(fs::read(full.join("model.ckpt")).unwrap(), fs::read(part.join("model.ckpt")).unwrap());
}

#[test]
fn corrupt_resume_checkpoint_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = prepared(dir.path(), &neighbourhood_dataset(2, 12, 3), "0");
    let bad = dir.path().join("bad.ckpt");
    fs::write(&bad, b"GTCKPT01garbage").unwrap();
    let r = run(&["train", "--manifest", s(&manifest), "--epochs", "1", "--resume", s(&bad), "--out", s(&dir.path().join("o"))]);
    assert_eq!(r.status.code(), Some(2));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("cannot resume"), "{err}");
}

#[test]
fn invalid_config_file_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = prepared(dir.path(), &neighbourhood_dataset(2, 12, 3), "0");
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "epochs = 3\nlearning_rate = 0.1\n").unwrap();
    let r = run(&["train", "--manifest", s(&manifest), "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(r.status.code(), Some(1));
    fs::write(&cfg, "epochs = 1\nablation_mode = \"local_lut\"\nlr_schedule = [[0, 0.001], [5, 0.0001]]\n").unwrap();
    let out = dir.path().join("o2");
    ok(&run(&["train", "--manifest", s(&manifest), "--config", s(&cfg), "--out", s(&out)]));
    assert_eq!(Checkpoint::load(out.join("model.ckpt")).unwrap().params.mode(), AblationMode::LocalLut);
}

/// Trained model plus one scene on disk.
fn model_and_scene(dir: &Path, mode: &str) -> (std::path::PathBuf, std::path::PathBuf, std::path::PathBuf) {
    let pairs = neighbourhood_dataset(2, 16, 4);
    let manifest = prepared(dir, &pairs, "0");
    let run_dir = dir.join("model");
    ok(&run(&["train", "--manifest", s(&manifest), "--ablation", mode, "--epochs", "2", "--out", s(&run_dir)]));
    let raw = dir.join("raw");
    (run_dir.join("model.ckpt"), raw.join("input/synth-000.png"), raw.join("seg/synth-000.png"))
}

#[test]
fn infer_outputs_are_deterministic_and_debug_dump_is_complete() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, img, seg) = model_and_scene(dir.path(), "gsemtmo");
    let labels = graphtone::dataset::load_segmentation(&seg).unwrap().distinct_labels().len();
    let o1 = dir.path().join("i1");
    let o2 = dir.path().join("i2");
    for o in [&o1, &o2] {
        ok(&run(&[
            "infer", "--checkpoint", s(&ckpt), "--image", s(&img), "--seg", s(&seg), "--blend", "--dump-debug",
            "--radius", "3", "--diameter", "6", "--out", s(o),
        ]));
    }
    assert_eq!(fs::read(o1.join("synth-000.png")).unwrap(), fs::read(o2.join("synth-000.png")).unwrap());
    let debug = files_in(&o1.join("debug"));
    assert_eq!(debug.iter().filter(|f| f.starts_with("alpha_")).count(), labels);
    assert_eq!(debug.iter().filter(|f| f.starts_with("frame_")).count(), labels);
    assert_eq!(debug.iter().filter(|f| f.starts_with("tonecurve_")).count(), labels);
}

#[test]
fn single_segment_blend_matches_plain_inference() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, _, _) = model_and_scene(dir.path(), "gsemtmo");
    let seg = stripes(20, 14, &[4]).unwrap();
    let img = textured_image(&seg, &mut stream_rng(8, Stream::Synthetic));
    let img_path = dir.path().join("one.png");
    let seg_path = dir.path().join("one_seg.png");
    graphtone::dataset::save_linear(&img, &img_path).unwrap();
    graphtone::dataset::save_segmentation(&seg, &seg_path).unwrap();
    let plain = dir.path().join("plain");
    let blended = dir.path().join("blended");
    ok(&run(&["infer", "--checkpoint", s(&ckpt), "--image", s(&img_path), "--seg", s(&seg_path), "--out", s(&plain)]));
    ok(&run(&[
        "infer", "--checkpoint", s(&ckpt), "--image", s(&img_path), "--seg", s(&seg_path), "--blend", "--out", s(&blended),
    ]));
    let a = load_reference(plain.join("one.png")).unwrap();
    let b = load_reference(blended.join("one.png")).unwrap();
    // Both are 16-bit encodings of values within 1e-6 of each other.
    let max = a
        .pixels()
        .iter()
        .flatten()
        .zip(b.pixels().iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(max <= 1.0 / 65535.0 + 1e-12, "{max}");
}

#[test]
fn infer_rejects_mismatched_segmentation() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, img, _) = model_and_scene(dir.path(), "local_lut");
    let small = dir.path().join("small.png");
    graphtone::dataset::save_segmentation(&stripes(5, 5, &[1, 2]).unwrap(), &small).unwrap();
    let out = dir.path().join("o");
    let r = run(&["infer", "--checkpoint", s(&ckpt), "--image", s(&img), "--seg", s(&small), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn tonecurve_graph_and_blend_commands() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, img, seg) = model_and_scene(dir.path(), "gsemtmo");
    let labels = graphtone::dataset::load_segmentation(&seg).unwrap().distinct_labels();

    let tc = dir.path().join("tc");
    ok(&run(&["tonecurve", "--checkpoint", s(&ckpt), "--image", s(&img), "--seg", s(&seg), "--samples", "32", "--out", s(&tc)]));
    let csvs: Vec<String> = files_in(&tc).into_iter().filter(|f| f.ends_with(".csv")).collect();
    assert_eq!(csvs.len(), labels.len());
    let body = fs::read_to_string(tc.join(&csvs[0])).unwrap();
    assert_eq!(body.lines().count(), 33);
    assert!(tc.join("tonecurves.png").is_file());

    let g = dir.path().join("g");
    ok(&run(&["graph", "--image", s(&img), "--seg", s(&seg), "--out", s(&g)]));
    let dump: serde_json::Value = serde_json::from_str(&fs::read_to_string(g.join("synth-000_graph.json")).unwrap()).unwrap();
    assert_eq!(dump["nodes"].as_array().unwrap().len(), labels.len());
    // Stripes form a path graph.
    assert_eq!(dump["edges"].as_array().unwrap().len(), labels.len() - 1);

    // Blending identical frames reproduces the frame.
    let frame = dir.path().join("frame.png");
    let f = DisplayImage(graphtone::RgbImage::from_fn(16, 16, |x, y| [x as f64 / 15.0, y as f64 / 15.0, 0.25]));
    graphtone::dataset::save_display(&f, &frame, true).unwrap();
    let b = dir.path().join("b");
    let mut args = vec!["blend", "--seg", s(&seg), "--radius", "2", "--diameter", "4", "--out", s(&b), "--frames"];
    let frame_s = s(&frame).to_string();
    for _ in &labels {
        args.push(&frame_s);
    }
    ok(&run(&args));
    assert_eq!(load_reference(b.join("blended.png")).unwrap(), load_reference(&frame).unwrap());
    let r = run(&["blend", "--seg", s(&seg), "--frames", s(&frame), "--out", s(&b)]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn eval_of_identical_directories() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = neighbourhood_dataset(5, 24, 7);
    let raw = write_raw(dir.path(), &pairs);
    let extra = raw.reference.join("orphan.png");
    fs::copy(raw.reference.join("synth-000.png"), &extra).unwrap();
    let out = dir.path().join("scores");
    ok(&run(&["eval", "--pred", s(&raw.reference), "--ref", s(&raw.reference), "--resamples", "200", "--out", s(&out)]));
    let csv = fs::read_to_string(out.join("scores.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    for row in rows {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[1], "inf");
        assert_eq!(cols[2], "0");
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["count"], 6);
    assert_eq!(summary["psnr"]["median"], "inf");
    for m in ["psnr", "hyab", "ms_ssim", "c_ml"] {
        assert!(out.join(format!("hist_{m}.png")).is_file());
    }

    // Unmatched files are listed and skipped.
    fs::remove_file(&extra).unwrap();
    let preds = dir.path().join("preds");
    fs::create_dir(&preds).unwrap();
    fs::copy(raw.reference.join("synth-001.png"), preds.join("synth-001.png")).unwrap();
    fs::copy(raw.reference.join("synth-002.png"), preds.join("stray.png")).unwrap();
    let out2 = dir.path().join("scores2");
    ok(&run(&["eval", "--pred", s(&preds), "--ref", s(&raw.reference), "--resamples", "50", "--out", s(&out2)]));
    assert_eq!(fs::read_to_string(out2.join("scores.csv")).unwrap().lines().count(), 2);
    let un: serde_json::Value = serde_json::from_str(&fs::read_to_string(out2.join("unmatched.json")).unwrap()).unwrap();
    assert_eq!(un["missing_reference"], serde_json::json!(["stray"]));
    assert_eq!(un["missing_prediction"].as_array().unwrap().len(), 4);
}

#[test]
fn contrast_select_keeps_the_highest_contrast_references() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = prepared(dir.path(), &neighbourhood_dataset(6, 16, 8), "0");
    let out = dir.path().join("hc");
    ok(&run(&["contrast-select", "--manifest", s(&manifest), "--count", "3", "--out", s(&out)]));
    let selected = DatasetManifest::load(out.join("manifest.json")).unwrap();
    assert_eq!(selected.entries.len(), 3);
    selected.validate().unwrap();
    let csv = fs::read_to_string(out.join("contrast.csv")).unwrap();
    let rows: Vec<(f64, bool)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            (c[1].parse().unwrap(), c[2] == "true")
        })
        .collect();
    let min_in = rows.iter().filter(|r| r.1).map(|r| r.0).fold(f64::INFINITY, f64::min);
    let max_out = rows.iter().filter(|r| !r.1).map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    assert!(min_in >= max_out);
}

#[test]
fn commands_are_idempotent_and_stay_inside_out() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("work");
    fs::create_dir(&work).unwrap();
    let pairs = neighbourhood_dataset(3, 12, 9);
    let raw = write_raw(&dir.path().join("raw"), &pairs);
    let prep = |out: &str| {
        ok(&run_in(&work, &[
            "prepare", "--input", s(&raw.input), "--seg", s(&raw.seg), "--ref", s(&raw.reference), "--resize", "10x10",
            "--val-fraction", "0.34", "--seed", "3", "--out", out,
        ]))
    };
    prep("a");
    prep("b");
    assert_eq!(files_in(&work), ["a", "b"]);
    for f in ["manifest.json", "filter_report.csv", "linear/synth-001.png", "reference/synth-002.png"] {
        assert_eq!(fs::read(work.join("a").join(f)).unwrap(), fs::read(work.join("b").join(f)).unwrap(), "{f}");
    }
    let train = |out: &str| {
        ok(&run_in(&work, &["train", "--manifest", "a/manifest.json", "--epochs", "2", "--seed", "4", "--out", out]))
    };
    train("t1");
    train("t2");
    assert_eq!(files_in(&work), ["a", "b", "t1", "t2"]);
    for f in ["model.ckpt", "state.ckpt", "report.csv", "loss.png", "config.toml"] {
        assert_eq!(fs::read(work.join("t1").join(f)).unwrap(), fs::read(work.join("t2").join(f)).unwrap(), "{f}");
    }
}
