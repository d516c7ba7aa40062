//! JSON documents written by the commands. The forecast report follows
//! `schemas/report.schema.json`.

use std::collections::BTreeMap;

use rvf_core::inference::{AttractorReport, Band};
use rvf_core::panel::DroppedUnit;
use serde::Serialize;

pub const SCHEMA_VERSION: &str = "1.0.0";

#[derive(Debug, Clone, Serialize)]
pub struct Parameters {
    pub h: f64,
    pub alpha: f64,
    pub kernel: rvf_core::kde::Kernel,
    pub normalizer: rvf_core::kde::NormalizerRule,
    pub tuned: bool,
    pub grid: [usize; 2],
    pub bootstrap: usize,
    pub seed: u64,
    pub step: f64,
    pub long_horizon: f64,
    pub forecast_horizon: f64,
    pub merge_radius: f64,
    pub min_share: f64,
    pub radius_factor: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AttractorOut {
    pub id: usize,
    pub label: String,
    pub center: [f64; 2],
    pub radius: f64,
    pub members: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregateOut {
    pub label: String,
    pub attractor: Option<usize>,
    pub municipalities: Band,
    pub population: Band,
}

#[derive(Debug, Clone, Serialize)]
pub struct UnitOut {
    pub unit_id: String,
    pub start: [f64; 2],
    pub population: u64,
    pub basin: Option<String>,
    pub probabilities: BTreeMap<String, f64>,
    pub unresolved: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ForecastReport {
    pub schema_version: &'static str,
    pub window: [i32; 2],
    pub tau: f64,
    pub parameters: Parameters,
    pub replicates: usize,
    pub degenerate_replicates: usize,
    pub attractors: Vec<AttractorOut>,
    pub aggregates: Vec<AggregateOut>,
    pub units: Vec<UnitOut>,
}

impl ForecastReport {
    pub fn new(window: [i32; 2], tau: f64, parameters: Parameters, r: &AttractorReport) -> Self {
        let labels: Vec<String> = r.attractors.iter().map(|a| a.label.clone()).collect();
        ForecastReport {
            schema_version: SCHEMA_VERSION,
            window,
            tau,
            parameters,
            replicates: r.replicates,
            degenerate_replicates: r.degenerate_replicates,
            attractors: r
                .attractors
                .iter()
                .map(|a| AttractorOut {
                    id: a.id,
                    label: a.label.clone(),
                    center: [a.center.x, a.center.y],
                    radius: a.radius,
                    members: a.members,
                })
                .collect(),
            aggregates: r
                .aggregates
                .iter()
                .map(|g| AggregateOut {
                    label: g.label.clone(),
                    attractor: g.attractor,
                    municipalities: g.municipalities,
                    population: g.population,
                })
                .collect(),
            units: r
                .units
                .iter()
                .map(|u| UnitOut {
                    unit_id: u.unit_id.clone(),
                    start: [u.start.x, u.start.y],
                    population: u.population,
                    basin: u.basin.map(|b| labels[b].clone()),
                    probabilities: labels.iter().cloned().zip(u.probabilities.iter().copied()).collect(),
                    unresolved: u.unresolved,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TuneSummary {
    pub window: [i32; 2],
    pub best_alpha: f64,
    pub best_h: f64,
    pub best_mse: f64,
    pub in_sample: bool,
    pub candidates: usize,
    pub status_counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SwitchDiagnostic {
    pub years: [i32; 2],
    pub partition_changed: bool,
    pub h: f64,
    pub alpha: f64,
    pub nonempty_nodes: usize,
    pub significant_nodes: usize,
    /// Median of `|dx| / |dy|` over significant nodes.
    pub median_abs_dx_over_abs_dy: Option<f64>,
    pub vertical: Option<bool>,
    pub mean_abs_dx: Option<f64>,
    pub mean_abs_dy: Option<f64>,
    pub flag: Option<&'static str>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics<'a> {
    pub command: &'a str,
    pub status: &'static str,
    pub error: Option<&'a str>,
    pub warnings: Vec<String>,
    pub dropped_units: Vec<DroppedUnit>,
}

/// Serializes with a trailing newline.
pub fn to_json<T: Serialize>(v: &T) -> Result<String, serde_json::Error> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}
