mod common;

use std::collections::BTreeMap;
use std::path::Path;

use common::*;
use rvf_core::panel::UnitRecord;
use rvf_core::synthetic::{PanelSpec, SyntheticPanel};

const SCHEMA: &str = include_str!("../schemas/report.schema.json");

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut m = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_file() {
            m.insert(p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
        }
    }
    m
}

fn tree(dir: &Path) -> Vec<String> {
    let mut v = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        v.push(p.strip_prefix(dir).unwrap().to_string_lossy().into_owned());
        if p.is_dir() {
            v.extend(tree(&p).into_iter().map(|s| format!("{}/{s}", p.file_name().unwrap().to_string_lossy())));
        }
    }
    v.sort();
    v
}

/// Every unit's log density rises by `c` between two years under a fixed
/// partition, so every transition is `(c, c)`.
fn shifted_panel(c: f64) -> SyntheticPanel {
    let mut records = Vec::new();
    let mut partition_rows = Vec::new();
    for z in 0..5 {
        for k in 0..8 {
            let id = format!("Z{z}U{k}");
            let y = 9.0 + 0.8 * z as f64 + 0.37 * ((k * 7 + z * 3) % 11) as f64 / 11.0 * 3.0;
            for (year, shift) in [(2000, 0.0), (2001, c)] {
                let population = ((y + shift).exp() * 10.0).round() as u64;
                records.push(UnitRecord { unit_id: id.clone(), year, population, area_km2: 10.0 });
            }
            partition_rows.push((id, format!("Z{z}"), 2000, 2001));
        }
    }
    SyntheticPanel { records, crosswalk: Vec::new(), partition_rows, membership: Vec::new() }
}

fn num_attr(tag: &str, name: &str) -> f64 {
    let key = format!(" {name}=\"");
    let i = tag.find(&key).unwrap() + key.len();
    let j = tag[i..].find('"').unwrap();
    tag[i..i + j].parse().unwrap()
}

fn arrow_lines(svg: &str) -> Vec<[f64; 4]> {
    svg.lines()
        .filter(|l| l.starts_with("<line class=\"arrow\""))
        .map(|l| [num_attr(l, "x1"), num_attr(l, "y1"), num_attr(l, "x2"), num_attr(l, "y2")])
        .collect()
}

#[test]
fn describe_rows_match_window_and_constant_panel_is_flat() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = shifted_panel(0.0);
    for r in p.records.iter_mut() {
        r.population = 5000;
    }
    for r in p.partition_rows.iter_mut() {
        r.3 = 2001;
    }
    let cfg = write_inputs(dir.path(), &p, "permutations = 19\nout = \"out\"\n");
    rvf_ok(&["describe", "--config", s(&cfg)]);
    let csv = dir.path().join("out/describe.csv");
    let cv = column(&csv, "cv");
    assert_eq!(cv.len(), 2);
    assert!(cv.iter().all(|c| c == "0"));
    let mean = column(&csv, "mean_density");
    assert!(mean.iter().all(|m| m == &mean[0]));
    assert!(column(&csv, "morans_i").iter().all(String::is_empty));
    let diag = read_json(&dir.path().join("out/diagnostics.json"));
    assert_eq!(diag["status"], "ok");
    assert!(!diag["warnings"].as_array().unwrap().is_empty());
}

#[test]
fn describe_shows_moran_drop_at_partition_switch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_synthetic(dir.path(), PanelSpec::default(), "out = \"out\"\n");
    rvf_ok(&["describe", "--config", s(&cfg), "--window", "1990:2010"]);
    let csv = dir.path().join("out/describe.csv");
    let years: Vec<i32> = column(&csv, "year").iter().map(|y| y.parse().unwrap()).collect();
    assert_eq!(years, (1990..=2010).collect::<Vec<_>>());
    let mi: Vec<f64> = column(&csv, "morans_i").iter().map(|v| v.parse().unwrap()).collect();
    let jumps: Vec<(i32, f64)> = (1..mi.len()).map(|i| (years[i], mi[i] - mi[i - 1])).collect();
    let (worst_year, worst) = jumps.iter().copied().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    assert_eq!(worst_year, 2002);
    let others = jumps.iter().filter(|j| j.0 != 2002).map(|j| j.1.abs()).fold(0.0, f64::max);
    assert!(worst < -5.0 * others, "drop {worst}, largest other change {others}");
    for f in ["describe_morans_i.svg", "describe_cv.svg", "describe_variance.svg"] {
        let svg = std::fs::read_to_string(dir.path().join("out").join(f)).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
}

#[test]
fn estimate_identical_deltas_give_uniform_arrows_drawn_at_one_fifth() {
    let dir = tempfile::tempdir().unwrap();
    let c = 0.1;
    let cfg = write_inputs(
        dir.path(),
        &shifted_panel(c),
        "grid = [15, 15]\nh = 0.15\nalpha = 0.0067\nbootstrap = 25\ncurve_replicates = 20\nout = \"out\"\n",
    );
    rvf_ok(&["estimate", "--config", s(&cfg)]);
    let out = dir.path().join("out");
    let (_, rows) = read_csv(&out.join("field.csv"));
    let nonempty: Vec<[f64; 4]> = rows
        .iter()
        .filter(|r| !r[2].is_empty())
        .map(|r| [r[0].parse().unwrap(), r[1].parse().unwrap(), r[2].parse().unwrap(), r[3].parse().unwrap()])
        .collect();
    assert!(!nonempty.is_empty() && nonempty.len() < rows.len(), "expected empty and non-empty nodes");
    for a in &nonempty {
        assert!((a[2] - c).abs() < 1e-4 && (a[3] - c).abs() < 1e-4, "{a:?}");
    }
    let svg = std::fs::read_to_string(out.join("field.svg")).unwrap();
    let lines = arrow_lines(&svg);
    assert_eq!(lines.len(), nonempty.len());
    for (l, a) in lines.iter().zip(&nonempty) {
        let tol = |v: f64| 1e-5 * v.abs().max(1.0);
        assert!((l[0] - a[0]).abs() <= tol(a[0]) && (l[1] - a[1]).abs() <= tol(a[1]));
        let (tx, ty) = (a[0] + a[2] / 5.0, a[1] + a[3] / 5.0);
        assert!((l[2] - tx).abs() <= tol(tx) && (l[3] - ty).abs() <= tol(ty), "{l:?} vs {a:?}");
    }
    for f in ["moran_points_2000.csv", "moran_points_2001.csv", "moran_curve_2000.csv", "moran_curve_2001.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
}

#[test]
fn tune_single_candidate_returns_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_synthetic(
        dir.path(),
        small_spec(),
        "tune_h = [0.57]\ntune_alpha = [0.01]\ngrid_pad_h = 0.57\nout = \"out\"\n",
    );
    // The fixture config carries explicit (h, alpha); drop them to tune.
    let text = std::fs::read_to_string(&cfg).unwrap().replace("h = 0.29\nalpha = 0.0067\n", "");
    std::fs::write(&cfg, text).unwrap();
    rvf_ok(&["tune", "--config", s(&cfg)]);
    let j = read_json(&dir.path().join("out/tune.json"));
    assert_eq!(j["best_alpha"], 0.01);
    assert_eq!(j["best_h"], 0.57);
    assert_eq!(j["candidates"], 1);
    let (h, rows) = read_csv(&dir.path().join("out/tune.csv"));
    assert_eq!(h, ["alpha", "h", "mse", "status"]);
    assert_eq!(rows.len(), 1);
}

#[test]
fn forecast_report_validates_and_stays_in_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_synthetic(dir.path(), small_spec(), "out = \"out\"\n");
    let before = tree(dir.path());
    rvf_ok(&["forecast", "--config", s(&cfg)]);
    let after = tree(dir.path());
    let added: Vec<&String> = after.iter().filter(|p| !before.contains(p)).collect();
    assert!(added.iter().all(|p| p.starts_with("out")), "{added:?}");

    let out = dir.path().join("out");
    let schema: serde_json::Value = serde_json::from_str(SCHEMA).unwrap();
    let report = read_json(&out.join("report.json"));
    let errors = schema::validate(&schema, &report);
    assert!(errors.is_empty(), "{errors:#?}");
    assert_eq!(report["schema_version"], "1.0.0");

    let k = report["attractors"].as_array().unwrap().len();
    let aggregates = report["aggregates"].as_array().unwrap();
    assert_eq!(aggregates.len(), k + 1);
    let total: f64 = aggregates.iter().map(|a| a["municipalities"]["share"].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
    for f in ["trajectories.csv", "overlay.csv", "basins.svg", "field.csv", "diagnostics.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let flags = column(&out.join("overlay.csv"), "program_flag");
    assert_eq!(flags.len(), 2 * (k + 1));
}

#[test]
fn schema_validator_rejects_broken_reports() {
    let schema: serde_json::Value = serde_json::from_str(SCHEMA).unwrap();
    let doc = serde_json::json!({"schema_version": "1.0.0", "window": [1984], "extra": 1});
    let errors = schema::validate(&schema, &doc);
    assert!(errors.iter().any(|e| e.contains("missing")));
    assert!(errors.iter().any(|e| e.contains("fewer than 2")));
    assert!(errors.iter().any(|e| e.contains("unexpected property")));
}

#[test]
fn forecast_is_byte_identical_across_runs_and_thread_caps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_synthetic(dir.path(), small_spec(), "");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    rvf_ok(&["forecast", "--config", s(&cfg), "--out", s(&a)]);
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_rvf"))
        .args(["forecast", "--config", s(&cfg), "--out", s(&b)])
        .env("RVF_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (name, bytes) in &fa {
        assert!(bytes == &fb[name], "{name} differs");
    }
}

#[test]
fn partition_switch_with_frozen_populations_is_vertical() {
    let dir = tempfile::tempdir().unwrap();
    let spec = PanelSpec { freeze_switch: true, ..PanelSpec::default() };
    let cfg = small_synthetic(dir.path(), spec, "out = \"out\"\n");
    rvf_ok(&["diag-partition-switch", "--config", s(&cfg)]);
    let j = read_json(&dir.path().join("out/partition_switch.json"));
    assert_eq!(j["years"], serde_json::json!([2001, 2002]));
    assert_eq!(j["partition_changed"], true);
    assert!(j["significant_nodes"].as_u64().unwrap() > 0);
    assert!(j["median_abs_dx_over_abs_dy"].as_f64().unwrap() < 0.2);
    assert_eq!(j["vertical"], true);
}

#[test]
fn partition_switch_null_cases() {
    let dir = tempfile::tempdir().unwrap();
    let spec = PanelSpec { no_switch: true, ..PanelSpec::default() };
    let cfg = small_synthetic(dir.path(), spec, "switch_years = [2001, 2002]\nout = \"out\"\n");
    rvf_ok(&["diag-partition-switch", "--config", s(&cfg)]);
    let j = read_json(&dir.path().join("out/partition_switch.json"));
    assert_eq!(j["partition_changed"], false);
    assert_ne!(j["vertical"], true);

    let dir = tempfile::tempdir().unwrap();
    let spec = PanelSpec { no_switch: true, drift: 0.0, n_zones: 14, ..PanelSpec::default() };
    let cfg = small_synthetic(dir.path(), spec, "switch_years = [2001, 2002]\nout = \"out\"\n");
    rvf_ok(&["diag-partition-switch", "--config", s(&cfg)]);
    let j = read_json(&dir.path().join("out/partition_switch.json"));
    assert_eq!(j["significant_nodes"], 0);
    assert!(j["median_abs_dx_over_abs_dy"].is_null());
    assert!(j["vertical"].is_null());
    assert_eq!(j["flag"], "no_significant_nodes");
}

#[test]
fn hard_errors_exit_nonzero_and_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_synthetic(dir.path(), small_spec(), "out = \"out\"\n");
    let out = rvf(&["estimate", "--config", s(&cfg), "--window", "1970:1990"]);
    assert!(!out.status.success());
    let d = read_json(&dir.path().join("out/diagnostics.json"));
    assert_eq!(d["status"], "error");
    assert!(d["error"].as_str().unwrap().contains("1970"));

    std::fs::remove_file(dir.path().join("panel.csv")).unwrap();
    let out = rvf(&["describe", "--config", s(&cfg)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));

    let out = rvf(&["estimate", "--config", s(&cfg), "--grid", "12"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_writes_a_runnable_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("data");
    rvf_ok(&["synth", "--out", s(&d), "--zones", "8"]);
    for f in ["panel.csv", "crosswalk.csv", "partitions.csv", "membership.csv", "config.toml"] {
        assert!(d.join(f).is_file(), "{f}");
    }
    rvf_ok(&["describe", "--config", s(&d.join("config.toml")), "--window", "2000:2004"]);
    assert_eq!(column(&d.join("out/describe.csv"), "year").len(), 5);
}
