//! The subcommands. Each reads its inputs from a [`RunConfig`] and writes
//! into the configured output directory only.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rvf_core::flow::{forecast_all, GridFlow, IntegrateOptions};
use rvf_core::geom::Vec2;
use rvf_core::inference::{
    annotate, basin_probabilities, bootstrap_fields, find_attractors, flag_significance, policy_overlay,
    BasinUnit, BootstrapEnsemble,
};
use rvf_core::io::{self, fmt_f64, Table};
use rvf_core::moran::{
    dispersion_stats, moran_curve, morans_i, to_moran, transitions, CurveOptions, MoranCurve, MoranPoint, Transition,
    WeightMatrix,
};
use rvf_core::panel::{ingest_panel, Crosswalk, DroppedUnit, Panel};
use rvf_core::rvf::{EvalGrid, RvfEstimator, RvfParams, VectorFieldGrid};
use rvf_core::stats::median;
use rvf_core::synthetic::{italy_like, PanelSpec};
use rvf_core::tuning::{self, Holdout, TuneOptions};
use rvf_core::Error;

use crate::config::RunConfig;
use crate::report::{self, Diagnostics, ForecastReport, Parameters, SwitchDiagnostic, TuneSummary};
use crate::svg::{self, Frame, Svg};
use crate::{diagnostics, CliError, SynthArgs};

/// A median `|dx| / |dy|` below this reads as vertical arrows.
pub const VERTICAL_RATIO: f64 = 0.2;

static DROPPED: Mutex<Vec<DroppedUnit>> = Mutex::new(Vec::new());

struct Loaded {
    panel: Panel,
    window: [i32; 2],
}

fn load(cfg: &RunConfig) -> Result<Loaded, CliError> {
    let mut records = io::read_panel_path(&cfg.panel)?;
    if let Some([a, b]) = cfg.window {
        records.retain(|r| r.year >= a && r.year <= b);
    }
    let crosswalk = match &cfg.crosswalk {
        Some(p) => Crosswalk::new(io::read_crosswalk_path(p)?, None)?,
        None => Crosswalk::identity(),
    };
    let partitions = io::read_partitions_path(&cfg.partitions)?;
    let (panel, ingest) = ingest_panel(&records, &crosswalk, partitions)?;
    for d in &ingest.dropped {
        log::warn!("unit {} dropped ({:?}) in years {:?}", d.unit_id, d.reason, d.years);
    }
    DROPPED.lock().unwrap_or_else(|e| e.into_inner()).extend(ingest.dropped);
    let window = cfg.window.unwrap_or([panel.first_year(), panel.last_year()]);
    if window[0] != panel.first_year() || window[1] != panel.last_year() {
        return Err(CliError::Config(format!(
            "window {}:{} is not covered by the panel ({}:{})",
            window[0],
            window[1],
            panel.first_year(),
            panel.last_year()
        )));
    }
    Ok(Loaded { panel, window })
}

fn write(out: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    std::fs::write(out.join(name), contents)?;
    Ok(())
}

fn write_table(out: &Path, name: &str, t: &Table) -> Result<(), CliError> {
    t.write_path(&out.join(name))?;
    Ok(())
}

/// Writes `diagnostics.json` with every warning collected so far.
pub fn write_diagnostics(out: &Path, command: &str, error: Option<&str>) -> Result<(), CliError> {
    let dropped = std::mem::take(&mut *DROPPED.lock().unwrap_or_else(|e| e.into_inner()));
    let d = Diagnostics {
        command,
        status: if error.is_some() { "error" } else { "ok" },
        error,
        warnings: diagnostics::take(),
        dropped_units: dropped,
    };
    write(out, "diagnostics.json", &report::to_json(&d)?)
}

fn base_params(cfg: &RunConfig, h: f64, alpha: f64) -> RvfParams {
    RvfParams { h, alpha, kernel: cfg.kernel, rule: cfg.normalizer }
}

fn tune_options(cfg: &RunConfig) -> TuneOptions {
    TuneOptions {
        h_grid: cfg.tune_h.clone(),
        alpha_grid: cfg.tune_alpha.clone(),
        kernel: cfg.kernel,
        rule: cfg.normalizer,
        step: cfg.step,
        holdout: (cfg.tune_holdout > 0.0).then_some(Holdout { fraction: cfg.tune_holdout, seed: cfg.seed }),
        ..TuneOptions::default()
    }
}

fn pad_h(cfg: &RunConfig) -> f64 {
    cfg.h.unwrap_or(cfg.grid_pad_h)
}

fn grid_for(cfg: &RunConfig, ts: &[Transition]) -> Result<EvalGrid, CliError> {
    Ok(EvalGrid::for_transitions(ts, pad_h(cfg), cfg.grid[0], cfg.grid[1])?)
}

/// Explicit `(h, alpha)` or the tuned optimum. The flag tells which.
fn resolve_params(cfg: &RunConfig, ts: &[Transition], grid: &EvalGrid) -> Result<(RvfParams, bool), CliError> {
    match (cfg.h, cfg.alpha) {
        (Some(h), Some(a)) => Ok((base_params(cfg, h, a), false)),
        _ => {
            let r = tuning::tune(ts, grid, &tune_options(cfg))?;
            log::info!("tuned alpha = {}, h = {}", r.best_alpha, r.best_h);
            Ok((base_params(cfg, r.best_h, r.best_alpha), true))
        }
    }
}

struct FieldRun {
    transitions: Vec<Transition>,
    params: RvfParams,
    tuned: bool,
    field: VectorFieldGrid,
    ensemble: BootstrapEnsemble,
}

fn weights(panel: &Panel, year: i32) -> Result<WeightMatrix, CliError> {
    let w = WeightMatrix::for_year(panel, year)?;
    let s = w.singletons();
    if !s.is_empty() {
        log::warn!("{} units without zone-mates in {year} have no spatial lag", s.len());
    }
    Ok(w)
}

/// Point field between `t0` and `t1` with bootstrap significance.
fn field_between(cfg: &RunConfig, panel: &Panel, t0: i32, t1: i32) -> Result<FieldRun, CliError> {
    let ts = transitions(panel, &weights(panel, t0)?, &weights(panel, t1)?, t0, t1)?;
    let grid = grid_for(cfg, &ts)?;
    let (params, tuned) = resolve_params(cfg, &ts, &grid)?;
    let est = RvfEstimator::from_transitions(&ts, &params)?;
    let mut field = est.on_grid(&grid);
    if field.n_nonempty() == 0 {
        return Err(Error::EmptyField.into());
    }
    let ensemble = if cfg.bootstrap == 0 {
        log::warn!("no bootstrap replicates; no arrow is flagged significant");
        BootstrapEnsemble { seed: cfg.seed, grid, fields: Vec::new(), degenerate: Vec::new() }
    } else {
        let ens = bootstrap_fields(&ts, &params, &grid, cfg.bootstrap, cfg.seed)?;
        let support = est.effective_n_on_grid(&grid);
        let sig = flag_significance(&ens, Some(&support), &cfg.significance);
        annotate(&mut field, &sig);
        ens
    };
    Ok(FieldRun { transitions: ts, params, tuned, field, ensemble })
}

fn curve(cfg: &RunConfig, points: &[MoranPoint], year: i32) -> Option<MoranCurve> {
    let opts = CurveOptions {
        replicates: cfg.curve_replicates,
        bandwidth: cfg.curve_bandwidth,
        seed: cfg.seed.wrapping_add(year as u64),
        ..CurveOptions::default()
    };
    match moran_curve(points, &opts) {
        Ok(c) => Some(c),
        Err(e) => {
            log::warn!("Moran curve for {year} unavailable: {e}");
            None
        }
    }
}

pub fn describe(cfg: &RunConfig) -> Result<(), CliError> {
    let Loaded { panel, window } = load(cfg)?;
    let out = cfg.out_dir();
    let mut t = Table::new(&[
        "year",
        "mean_density",
        "mean_log_density",
        "cv",
        "var_between_share",
        "var_within_share",
        "morans_i",
        "morans_i_lo",
        "morans_i_hi",
        "partition_from",
    ]);
    let mut years = Vec::new();
    let (mut cv, mut between, mut within, mut mi, mut lo, mut hi) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for year in window[0]..=window[1] {
        let part = panel.partition_for(year)?;
        let ds = dispersion_stats(&panel, part, year)?;
        if ds.degenerate {
            log::warn!("log density is constant in {year}; variance shares set to 0");
        }
        let w = WeightMatrix::from_partition(part, panel.units())?;
        let seed = cfg.seed.wrapping_add(year as u64);
        let m = match morans_i(panel.log_density(year)?, &w, cfg.permutations, seed) {
            Ok(m) => Some(m),
            Err(e) => {
                log::warn!("Moran's I undefined in {year}: {e}");
                None
            }
        };
        let opt = |f: fn(&rvf_core::moran::MoranI) -> f64| m.as_ref().map(f).unwrap_or(f64::NAN);
        t.push(vec![
            year.to_string(),
            fmt_f64(ds.mean_density),
            fmt_f64(ds.mean_log_density),
            fmt_f64(ds.cv),
            fmt_f64(ds.var_between_share),
            fmt_f64(ds.var_within_share),
            fmt_f64(opt(|m| m.value)),
            fmt_f64(opt(|m| m.lo)),
            fmt_f64(opt(|m| m.hi)),
            part.valid_from.to_string(),
        ]);
        years.push(year as f64);
        cv.push(ds.cv);
        between.push(ds.var_between_share);
        within.push(ds.var_within_share);
        mi.push(opt(|m| m.value));
        lo.push(opt(|m| m.lo));
        hi.push(opt(|m| m.hi));
    }
    write_table(&out, "describe.csv", &t)?;
    write(
        &out,
        "describe_morans_i.svg",
        &svg::line_chart("Global Moran's I", "year", "Moran's I", &years, &[("Moran's I", &mi)], Some((&lo, &hi))),
    )?;
    write(
        &out,
        "describe_cv.svg",
        &svg::line_chart("Coefficient of variation of density", "year", "CV", &years, &[("CV", &cv)], None),
    )?;
    write(
        &out,
        "describe_variance.svg",
        &svg::line_chart(
            "Log-density variance shares",
            "year",
            "share",
            &years,
            &[("between zones", &between), ("within zones", &within)],
            None,
        ),
    )?;
    Ok(())
}

fn field_svg(title: &str, field: &VectorFieldGrid, scatter: &[(Vec<Vec2>, &str, String)], curves: &[(&MoranCurve, &str)]) -> String {
    let b = field.grid.bounds;
    let mut s = Svg::new(Frame::new(b), title);
    s.axes("log density", "spatial lag of log density");
    let diag: Vec<Vec2> = [b.min.x.max(b.min.y), b.max.x.min(b.max.y)].iter().map(|&v| Vec2::new(v, v)).collect();
    if diag[0].x < diag[1].x {
        s.polyline(&diag, "#444444", 0.8, Some("4 3"));
    }
    let mut legend = Vec::new();
    for (pts, colour, name) in scatter {
        s.points(pts, colour, 1.6, "units");
        legend.push((*colour, name.clone()));
    }
    for (c, colour) in curves {
        let pts: Vec<Vec2> = c.x.iter().zip(&c.fit).map(|(&x, &y)| Vec2::new(x, y)).collect();
        s.polyline(&pts, colour, 1.8, None);
    }
    let arrows: Vec<(Vec2, Vec2, bool)> = field
        .grid
        .nodes()
        .zip(&field.arrows)
        .zip(&field.significant)
        .filter_map(|((z, a), &sig)| a.map(|a| (z, a, sig)))
        .collect();
    s.arrows(&arrows);
    legend.push((svg::SIGNIFICANT, "significant arrow".into()));
    legend.push((svg::NOT_SIGNIFICANT, "not significant".into()));
    s.legend(&legend);
    s.finish()
}

pub fn estimate(cfg: &RunConfig) -> Result<(), CliError> {
    let Loaded { panel, window } = load(cfg)?;
    let out = cfg.out_dir();
    let [t0, t1] = window;
    let run = field_between(cfg, &panel, t0, t1)?;
    write_table(&out, "field.csv", &io::field_table(&run.field))?;

    let mut scatter = Vec::new();
    let mut curves = Vec::new();
    for (year, colour) in [(t0, svg::PALETTE[0]), (t1, svg::PALETTE[2])] {
        let pts = to_moran(&panel, &weights(&panel, year)?, year)?;
        let pop = panel.population(year)?;
        write_table(&out, &format!("moran_points_{year}.csv"), &io::moran_points_table(panel.units(), year, &pts, pop))?;
        if let Some(c) = curve(cfg, &pts, year) {
            write_table(&out, &format!("moran_curve_{year}.csv"), &io::curve_table(&c))?;
            curves.push((c, colour));
        }
        scatter.push((pts.iter().map(|p| p.z()).collect::<Vec<_>>(), colour, year.to_string()));
    }
    let title = format!("Moran space {t0} to {t1}, h = {}, alpha = {}", run.params.h, run.params.alpha);
    let curve_refs: Vec<(&MoranCurve, &str)> = curves.iter().map(|(c, col)| (c, *col)).collect();
    write(&out, "field.svg", &field_svg(&title, &run.field, &scatter, &curve_refs))?;
    log::info!(
        "{} of {} nodes non-empty, {} significant",
        run.field.n_nonempty(),
        run.field.grid.len(),
        run.field.significant.iter().filter(|&&s| s).count()
    );
    Ok(())
}

pub fn tune(cfg: &RunConfig) -> Result<(), CliError> {
    let Loaded { panel, window } = load(cfg)?;
    let out = cfg.out_dir();
    let [t0, t1] = window;
    let ts = transitions(&panel, &weights(&panel, t0)?, &weights(&panel, t1)?, t0, t1)?;
    let grid = grid_for(cfg, &ts)?;
    let r = tuning::tune(&ts, &grid, &tune_options(cfg))?;
    write_table(&out, "tune.csv", &io::tune_table(&r))?;
    let mut status_counts = BTreeMap::new();
    for c in &r.candidates {
        *status_counts.entry(c.status.as_str().to_string()).or_insert(0) += 1;
    }
    let summary = TuneSummary {
        window,
        best_alpha: r.best_alpha,
        best_h: r.best_h,
        best_mse: r.best_mse,
        in_sample: r.in_sample,
        candidates: r.candidates.len(),
        status_counts,
    };
    write(&out, "tune.json", &report::to_json(&summary)?)
}

fn basins_svg(title: &str, field: &VectorFieldGrid, rep: &rvf_core::inference::AttractorReport, radius_factor: f64) -> String {
    let mut s = Svg::new(Frame::new(field.grid.bounds), title);
    s.axes("log density", "spatial lag of log density");
    let k = rep.attractors.len();
    let mut legend = Vec::new();
    for slot in 0..=k {
        let pts: Vec<Vec2> = rep.units.iter().filter(|u| u.basin.unwrap_or(k) == slot).map(|u| u.start).collect();
        let (colour, name) = if slot < k {
            (svg::PALETTE[slot % svg::PALETTE.len()], rep.attractors[slot].label.clone())
        } else {
            (svg::UNRESOLVED, "unresolved".to_string())
        };
        s.points(&pts, colour, 2.0, "units");
        legend.push((colour, format!("{name} ({})", pts.len())));
    }
    for (i, a) in rep.attractors.iter().enumerate() {
        s.data_circle(a.center, a.radius * radius_factor, svg::PALETTE[i % svg::PALETTE.len()], &a.label);
    }
    s.legend(&legend);
    s.finish()
}

pub fn forecast(cfg: &RunConfig) -> Result<(), CliError> {
    let Loaded { panel, window } = load(cfg)?;
    let out = cfg.out_dir();
    let [t0, t1] = window;
    let run = field_between(cfg, &panel, t0, t1)?;
    write_table(&out, "field.csv", &io::field_table(&run.field))?;

    let now = to_moran(&panel, &weights(&panel, t1)?, t1)?;
    let pop = panel.population(t1)?;
    let units: Vec<BasinUnit> = now
        .iter()
        .map(|p| BasinUnit { unit_id: panel.units()[p.unit].clone(), start: p.z(), population: pop[p.unit] })
        .collect();
    let starts: Vec<Vec2> = units.iter().map(|u| u.start).collect();
    let flow = GridFlow::new(&run.field);
    let mut attractors = find_attractors(&flow, &starts, &cfg.attractors)?;
    if let Some(labels) = &cfg.labels {
        if labels.len() == attractors.len() {
            for (a, l) in attractors.iter_mut().zip(labels) {
                a.label = l.clone();
            }
        } else {
            log::warn!("{} labels given for {} attractors; default labels kept", labels.len(), attractors.len());
        }
    }
    let rep = basin_probabilities(&run.field, &run.ensemble, &attractors, &units, &cfg.attractors)?;

    let tau = run.field.tau;
    let horizon = cfg.forecast_horizon.unwrap_or(tau);
    let record_every = ((1.0 / cfg.step).round() as usize).max(1);
    let indexed: Vec<(usize, Vec2)> = now.iter().map(|p| (p.unit, p.z())).collect();
    let trajs = forecast_all(&flow, &indexed, horizon, &IntegrateOptions { step: cfg.step, converge_tol: None, record_every })?;
    let flagged = |f: fn(&rvf_core::flow::Trajectory) -> bool| trajs.iter().filter(|t| f(t)).count();
    let (clamped, holes, failed) = (flagged(|t| t.clamped), flagged(|t| t.hole), flagged(|t| t.failed));
    if clamped > 0 {
        log::warn!("{clamped} trajectories reached the grid boundary and were clamped");
    }
    if holes > 0 {
        log::warn!("{holes} trajectories crossed cells with empty nodes");
    }
    if failed > 0 {
        log::warn!("{failed} trajectories failed");
    }
    write_table(&out, "trajectories.csv", &io::trajectory_table(panel.units(), &trajs))?;

    let parameters = Parameters {
        h: run.params.h,
        alpha: run.params.alpha,
        kernel: run.params.kernel,
        normalizer: run.params.rule,
        tuned: run.tuned,
        grid: cfg.grid,
        bootstrap: cfg.bootstrap,
        seed: cfg.seed,
        step: cfg.step,
        long_horizon: cfg.attractors.long_horizon,
        forecast_horizon: horizon,
        merge_radius: cfg.attractors.merge_radius,
        min_share: cfg.attractors.min_share,
        radius_factor: cfg.attractors.radius_factor,
    };
    let doc = ForecastReport::new(window, tau, parameters, &rep);
    write(&out, "report.json", &report::to_json(&doc)?)?;
    if let Some(p) = &cfg.membership {
        let membership = io::read_membership_path(p)?;
        write_table(&out, "overlay.csv", &io::overlay_table(&policy_overlay(&rep, &membership)))?;
    }
    let title = format!("Basins of attraction from {t1} ({} attractors)", rep.attractors.len());
    write(&out, "basins.svg", &basins_svg(&title, &run.field, &rep, cfg.attractors.radius_factor))?;
    log::info!("{} transitions, {} attractors", run.transitions.len(), rep.attractors.len());
    Ok(())
}

/// The first pair of adjacent years whose zone partitions differ.
fn detect_switch(panel: &Panel) -> Option<[i32; 2]> {
    panel
        .years()
        .windows(2)
        .find(|w| match (panel.partition_for(w[0]), panel.partition_for(w[1])) {
            (Ok(a), Ok(b)) => a.zone_of != b.zone_of,
            _ => false,
        })
        .map(|w| [w[0], w[1]])
}

pub fn diag_partition_switch(cfg: &RunConfig) -> Result<(), CliError> {
    let Loaded { panel, .. } = load(cfg)?;
    let out = cfg.out_dir();
    let [t0, t1] = match cfg.switch_years.or_else(|| detect_switch(&panel)) {
        Some(y) => y,
        None => return Err(CliError::Config("no partition change in the panel; set switch_years".into())),
    };
    if t1 != t0 + 1 {
        log::warn!("switch years {t0}:{t1} are not adjacent");
    }
    let changed = panel.partition_for(t0)?.zone_of != panel.partition_for(t1)?.zone_of;
    if !changed {
        log::warn!("the zone partition does not change between {t0} and {t1}");
    }
    let run = field_between(cfg, &panel, t0, t1)?;
    let sig: Vec<Vec2> = run
        .field
        .arrows
        .iter()
        .zip(&run.field.significant)
        .filter_map(|(a, &s)| if s { *a } else { None })
        .collect();
    let ratios: Vec<f64> = sig.iter().map(|a| if a.y != 0.0 { a.x.abs() / a.y.abs() } else { f64::INFINITY }).collect();
    let (stat, flag) = if ratios.is_empty() {
        log::warn!("no significant arrows between {t0} and {t1}; the ratio is not reported");
        (None, Some("no_significant_nodes"))
    } else {
        (Some(median(&ratios)), None)
    };
    let mean_abs = |f: fn(&Vec2) -> f64| (!sig.is_empty()).then(|| sig.iter().map(f).sum::<f64>() / sig.len() as f64);
    let d = SwitchDiagnostic {
        years: [t0, t1],
        partition_changed: changed,
        h: run.params.h,
        alpha: run.params.alpha,
        nonempty_nodes: run.field.n_nonempty(),
        significant_nodes: sig.len(),
        median_abs_dx_over_abs_dy: stat.filter(|s| s.is_finite()),
        vertical: stat.map(|s| s < VERTICAL_RATIO),
        mean_abs_dx: mean_abs(|a| a.x.abs()),
        mean_abs_dy: mean_abs(|a| a.y.abs()),
        flag,
    };
    write(&out, "partition_switch.json", &report::to_json(&d)?)?;
    write_table(&out, "partition_switch_field.csv", &io::field_table(&run.field))?;
    let start: Vec<Vec2> = run.transitions.iter().map(|t| t.start).collect();
    let title = format!("Field across the partition change {t0} to {t1}");
    write(
        &out,
        "partition_switch_field.svg",
        &field_svg(&title, &run.field, &[(start, svg::PALETTE[0], t0.to_string())], &[]),
    )
}

/// Writes a synthetic panel with a crosswalk, two partitions and programme
/// membership, plus a `config.toml` pointing at them.
pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let spec = PanelSpec {
        seed: a.seed,
        n_zones: a.zones,
        freeze_switch: a.freeze_switch,
        no_switch: a.no_switch,
        ..PanelSpec::default()
    };
    let p = italy_like(&spec);
    std::fs::create_dir_all(&a.out)?;
    let out: PathBuf = a.out.clone();
    write_table(&out, "panel.csv", &io::panel_table(&p.records))?;
    write_table(&out, "crosswalk.csv", &io::crosswalk_table(&p.crosswalk))?;
    write_table(&out, "partitions.csv", &io::partition_table(&p.partition_rows))?;
    write_table(&out, "membership.csv", &io::membership_table(&p.membership))?;
    let config = format!(
        "panel = \"panel.csv\"\ncrosswalk = \"crosswalk.csv\"\npartitions = \"partitions.csv\"\nmembership = \"membership.csv\"\n\
         window = [{}, {}]\nswitch_years = [{}, {}]\ngrid = [40, 40]\nh = 0.21\nalpha = 0.0067\nbootstrap = 100\nseed = {}\nout = \"out\"\n",
        spec.first_year,
        spec.last_year,
        spec.switch_year - 1,
        spec.switch_year,
        a.seed
    );
    write(&out, "config.toml", &config)
}
