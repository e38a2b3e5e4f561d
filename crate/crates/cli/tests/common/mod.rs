//! Shared helpers for the CLI test targets.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bgcf_core::datagen::{build_paper_model, generate, paper_structure, MarginDesign, Missingness};
use bgcf_core::io::{dataset_csv, structure_text};
use bgcf_core::rng::rng_from_seed;

pub fn bgcf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bgcf"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn assert_ok(out: &Output) {
    assert!(out.status.success(), "command failed: {}", stderr(out));
}

/// Writes `data.csv` and `structure.txt` for a replicate of the standard
/// four-factor population into `dir`.
pub fn write_generated(
    dir: &Path,
    n: usize,
    design: MarginDesign,
    missing: Missingness,
    seed: u64,
) -> (PathBuf, PathBuf) {
    let structure = paper_structure();
    let truth = build_paper_model(1);
    let mut rng = rng_from_seed(seed);
    let gen = generate(
        &truth,
        &structure,
        n,
        &design.margins(&structure),
        missing,
        &mut rng,
    )
    .unwrap();
    let data = dir.join("data.csv");
    let spec = dir.join("structure.txt");
    std::fs::write(&data, dataset_csv(&gen.data)).unwrap();
    std::fs::write(&spec, structure_text(&structure, &gen.data)).unwrap();
    (data, spec)
}

pub fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Names and contents of every file in `dir`, sorted by name.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}
