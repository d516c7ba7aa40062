#![allow(dead_code)]

pub mod schema;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rvf_core::io;
use rvf_core::synthetic::{italy_like, PanelSpec, SyntheticPanel};

pub fn rvf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rvf")).args(args).output().expect("running rvf")
}

/// Runs a command and asserts a zero exit status.
pub fn rvf_ok(args: &[&str]) -> Output {
    let out = rvf(args);
    assert!(
        out.status.success(),
        "rvf {args:?} failed: {}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Writes the input files of `p` and a config into `dir`. `extra` is
/// appended to the config verbatim.
pub fn write_inputs(dir: &Path, p: &SyntheticPanel, extra: &str) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    io::panel_table(&p.records).write_path(&dir.join("panel.csv")).unwrap();
    io::partition_table(&p.partition_rows).write_path(&dir.join("partitions.csv")).unwrap();
    io::membership_table(&p.membership).write_path(&dir.join("membership.csv")).unwrap();
    let mut cfg = String::from("panel = \"panel.csv\"\npartitions = \"partitions.csv\"\nmembership = \"membership.csv\"\n");
    if !p.crosswalk.is_empty() {
        io::crosswalk_table(&p.crosswalk).write_path(&dir.join("crosswalk.csv")).unwrap();
        cfg.push_str("crosswalk = \"crosswalk.csv\"\n");
    }
    cfg.push_str(extra);
    let path = dir.join("config.toml");
    std::fs::write(&path, cfg).unwrap();
    path
}

/// A small synthetic panel with a fast configuration.
pub fn small_synthetic(dir: &Path, spec: PanelSpec, extra: &str) -> PathBuf {
    let p = italy_like(&spec);
    let base = "grid = [20, 20]\nh = 0.29\nalpha = 0.0067\nbootstrap = 30\nseed = 5\npermutations = 99\ncurve_replicates = 50\n\
                [attractors]\nlong_horizon = 200.0\n";
    // `extra` keys go before the table header.
    write_inputs(dir, &p, &format!("{extra}{base}"))
}

pub fn small_spec() -> PanelSpec {
    PanelSpec { n_zones: 14, ..PanelSpec::default() }
}

pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

pub fn column(path: &Path, name: &str) -> Vec<String> {
    let (h, rows) = read_csv(path);
    let k = h.iter().position(|c| c == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.into_iter().map(|r| r[k].clone()).collect()
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
