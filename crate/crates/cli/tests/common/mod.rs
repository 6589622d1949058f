#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use graphtone::dataset::{save_display, save_linear, save_segmentation};
use graphtone::synthetic::SyntheticPair;

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_graphtone"));
    c.env("RUST_LOG", "warn");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

pub fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

pub struct RawDataset {
    pub input: PathBuf,
    pub seg: PathBuf,
    pub reference: PathBuf,
}

/// Writes `pairs` as `input/`, `seg/` and `ref/` directories under `root`.
pub fn write_raw(root: &Path, pairs: &[SyntheticPair]) -> RawDataset {
    let d = RawDataset {
        input: root.join("input"),
        seg: root.join("seg"),
        reference: root.join("ref"),
    };
    for p in pairs {
        save_linear(&p.linear, d.input.join(format!("{}.png", p.id))).unwrap();
        save_segmentation(&p.segmentation, d.seg.join(format!("{}.png", p.id))).unwrap();
        save_display(&p.reference, d.reference.join(format!("{}.png", p.id)), true).unwrap();
    }
    d
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Raw dataset plus `prepare` output at the native resolution.
pub fn prepared(root: &Path, pairs: &[SyntheticPair], val_fraction: &str) -> PathBuf {
    let raw = write_raw(&root.join("raw"), pairs);
    let out = root.join("prepared");
    ok(&run(&[
        "prepare",
        "--input",
        s(&raw.input),
        "--seg",
        s(&raw.seg),
        "--ref",
        s(&raw.reference),
        "--no-saturation-filter",
        "--no-resize",
        "--val-fraction",
        val_fraction,
        "--out",
        s(&out),
    ]));
    out.join("manifest.json")
}
