//! Bootstrap inference over transitions: arrow significance, attractors,
//! basin membership probabilities and the aggregate basin report.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{forecast_all, integrate_lenient, GridFlow, IntegrateOptions, VelocityField};
use crate::geom::Vec2;
use crate::kde::Covariance;
use crate::moran::Transition;
use crate::par;
use crate::rvf::{direction_variance, EvalGrid, RvfEstimator, RvfParams, VectorFieldGrid};
use crate::stats::{quantile, quantile_sorted, stream_rng};

/// 95% quantile of the chi-square distribution with 2 degrees of freedom.
pub const CHI2_2_95: f64 = 5.991464547107979;

/// Replicate fields estimated on resampled transitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapEnsemble {
    pub seed: u64,
    pub grid: EvalGrid,
    pub fields: Vec<VectorFieldGrid>,
    /// Replicates whose resample could not be estimated (for instance all
    /// drawn transitions identical). Their fields are entirely empty.
    pub degenerate: Vec<bool>,
}

impl BootstrapEnsemble {
    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn n_degenerate(&self) -> usize {
        self.degenerate.iter().filter(|&&d| d).count()
    }

    /// Finite replicate arrows at node `k`, in replicate order.
    pub fn node_samples(&self, k: usize) -> Vec<Vec2> {
        self.fields.iter().filter_map(|f| f.arrows[k]).filter(|a| a.is_finite()).collect()
    }
}

/// Indices of one bootstrap resample: `n` draws with replacement.
pub fn resample_indices(n: usize, seed: u64, replicate: usize) -> Vec<usize> {
    let mut rng = stream_rng(seed, replicate as u64 + 1);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// `b` replicate fields, each estimated on `N` transitions drawn with
/// replacement from the observed `N`. Replicate `r` uses its own random
/// stream, so the ensemble does not depend on scheduling.
pub fn bootstrap_fields(
    transitions: &[Transition],
    params: &RvfParams,
    grid: &EvalGrid,
    b: usize,
    seed: u64,
) -> Result<BootstrapEnsemble> {
    let n = transitions.len();
    if n < 10 {
        return Err(Error::invalid(format!("bootstrap needs at least 10 transitions, got {n}")));
    }
    if b == 0 {
        return Err(Error::invalid("bootstrap needs at least one replicate"));
    }
    if b < 100 {
        log::warn!("{b} bootstrap replicates; at least 100 are recommended");
    }
    let sets: Vec<Vec<usize>> = (0..b).map(|r| resample_indices(n, seed, r)).collect();
    bootstrap_from_indices(transitions, params, grid, &sets, seed)
}

/// Replicate fields from explicit resample index sets.
pub fn bootstrap_from_indices(
    transitions: &[Transition],
    params: &RvfParams,
    grid: &EvalGrid,
    index_sets: &[Vec<usize>],
    seed: u64,
) -> Result<BootstrapEnsemble> {
    let tau = transitions.first().map_or(1.0, |t| t.horizon as f64);
    if let Some(bad) = index_sets.iter().flatten().find(|&&i| i >= transitions.len()) {
        return Err(Error::invalid(format!("resample index {bad} out of range")));
    }
    let out = par::map_slice(index_sets, |idx| {
        let starts: Vec<Vec2> = idx.iter().map(|&i| transitions[i].start).collect();
        let deltas: Vec<Vec2> = idx.iter().map(|&i| transitions[i].delta).collect();
        match RvfEstimator::new(&starts, &deltas, tau, params) {
            Ok(est) => (est.on_grid(grid), false),
            Err(_) => (VectorFieldGrid::from_fn(*grid, tau, |_| None), true),
        }
    });
    let degenerate: Vec<bool> = out.iter().map(|o| o.1).collect();
    let n_deg = degenerate.iter().filter(|&&d| d).count();
    if n_deg > 0 {
        log::warn!("{n_deg} degenerate bootstrap replicates");
    }
    Ok(BootstrapEnsemble { seed, grid: *grid, fields: out.into_iter().map(|o| o.0).collect(), degenerate })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignificanceOptions {
    pub critical_value: f64,
    /// Nodes with fewer finite replicate arrows are never significant.
    pub min_replicates: usize,
    /// Minimum Kish effective sample size of the point estimate.
    pub min_effective_n: f64,
}

impl Default for SignificanceOptions {
    fn default() -> Self {
        SignificanceOptions { critical_value: CHI2_2_95, min_replicates: 20, min_effective_n: 5.0 }
    }
}

/// Per-node outcome of the bootstrap test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSignificance {
    pub significant: bool,
    pub effective_replicates: usize,
    /// Mahalanobis distance of the origin, `None` when the replicate
    /// covariance is singular and percentile intervals were used.
    pub statistic: Option<f64>,
    pub direction_variance: Option<f64>,
}

/// Tests each node's arrow against zero using the replicate arrows.
///
/// The origin's squared Mahalanobis distance under the replicates' mean and
/// covariance is compared with `critical_value`. With a singular covariance
/// the node is significant when a componentwise 95% percentile interval
/// excludes zero. `support` holds the point estimate's effective sample
/// size per node (see [`RvfEstimator::effective_n_on_grid`]).
pub fn flag_significance(
    ensemble: &BootstrapEnsemble,
    support: Option<&[f64]>,
    opts: &SignificanceOptions,
) -> Vec<NodeSignificance> {
    par::map_range(ensemble.grid.len(), |k| {
        let samples = ensemble.node_samples(k);
        let n = samples.len();
        let dirvar = direction_variance(&samples).ok();
        let enough_support = support.is_none_or(|m| m[k] >= opts.min_effective_n);
        if n < opts.min_replicates.max(2) || !enough_support {
            return NodeSignificance {
                significant: false,
                effective_replicates: n,
                statistic: None,
                direction_variance: dirvar,
            };
        }
        let (significant, statistic) = match Covariance::sample(&samples) {
            Ok(cov) => {
                let mean = samples.iter().fold(Vec2::ZERO, |a, &s| a + s) * (1.0 / n as f64);
                let d2 = cov.mahalanobis_sq(mean);
                (d2 > opts.critical_value, Some(d2))
            }
            Err(_) => (percentile_excludes_zero(&samples), None),
        };
        NodeSignificance { significant, effective_replicates: n, statistic, direction_variance: dirvar }
    })
}

fn percentile_excludes_zero(samples: &[Vec2]) -> bool {
    let xs: Vec<f64> = samples.iter().map(|s| s.x).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.y).collect();
    let excl = |v: &[f64]| {
        let lo = quantile(v, 0.025);
        let hi = quantile(v, 0.975);
        lo > 0.0 || hi < 0.0
    };
    excl(&xs) || excl(&ys)
}

/// Copies significance flags and direction variances onto a field.
pub fn annotate(field: &mut VectorFieldGrid, sig: &[NodeSignificance]) {
    for (k, s) in sig.iter().enumerate() {
        field.significant[k] = s.significant && field.arrows[k].is_some();
        field.direction_variance[k] = s.direction_variance;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attractor {
    pub id: usize,
    pub center: Vec2,
    pub radius: f64,
    pub label: String,
    /// Start points whose terminal fell in the cluster.
    pub members: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttractorOptions {
    pub long_horizon: f64,
    pub step: f64,
    pub converge_tol: f64,
    pub merge_radius: f64,
    /// Minimum share of start points for a cluster to count.
    pub min_share: f64,
    pub radius_floor: f64,
    /// Assignment reaches `radius_factor` times an attractor's radius.
    pub radius_factor: f64,
}

impl Default for AttractorOptions {
    fn default() -> Self {
        AttractorOptions {
            long_horizon: 500.0,
            step: 0.1,
            converge_tol: 1e-6,
            merge_radius: 0.5,
            min_share: 0.01,
            radius_floor: 0.25,
            radius_factor: 1.5,
        }
    }
}

impl AttractorOptions {
    fn integrate_options(&self) -> IntegrateOptions {
        IntegrateOptions { step: self.step, converge_tol: Some(self.converge_tol), record_every: usize::MAX }
    }
}

/// Terminal points of long-horizon integrations from `starts`.
pub fn terminal_points(field: &impl VelocityField, starts: &[Vec2], opts: &AttractorOptions) -> Result<Vec<Vec2>> {
    let s: Vec<(usize, Vec2)> = starts.iter().copied().enumerate().collect();
    let trajs = forecast_all(field, &s, opts.long_horizon, &opts.integrate_options())?;
    Ok(trajs.into_iter().filter(|t| !t.failed).map(|t| t.terminal).collect())
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Single-linkage clusters of `points` at linkage distance `r`, as index
/// lists sorted by their first member.
pub fn single_linkage(points: &[Vec2], r: f64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].x.total_cmp(&points[b].x).then(points[a].y.total_cmp(&points[b].y)));
    let mut uf = UnionFind((0..points.len()).collect());
    let r2 = r * r;
    for (a, &i) in order.iter().enumerate() {
        for &j in &order[a + 1..] {
            if points[j].x - points[i].x > r {
                break;
            }
            if (points[j] - points[i]).norm_sq() <= r2 {
                uf.union(i, j);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..points.len() {
        let root = uf.find(i);
        groups.entry(root).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Member minimizing the summed distance to the others; ties go to the
/// lexicographically smallest point so the result is order-free.
fn medoid(points: &[Vec2]) -> Vec2 {
    let cost: Vec<f64> = par::map_slice(points, |p| points.iter().map(|q| p.dist(*q)).sum());
    let mut best = 0;
    for i in 1..points.len() {
        let (a, b) = (points[i], points[best]);
        let better = cost[i] < cost[best]
            || (cost[i] == cost[best] && (a.x, a.y).partial_cmp(&(b.x, b.y)) == Some(std::cmp::Ordering::Less));
        if better {
            best = i;
        }
    }
    points[best]
}

fn summarize(points: &[Vec2], floor: f64) -> (Vec2, f64) {
    let c = medoid(points);
    let d: Vec<f64> = points.iter().map(|p| p.dist(c)).collect();
    (c, quantile(&d, 0.95).max(floor))
}

/// Labels attractors by descending own-density coordinate.
pub fn default_labels(n: usize) -> Vec<String> {
    match n {
        2 => vec!["urban".into(), "rural".into()],
        3 => vec!["urban".into(), "suburban".into(), "rural".into()],
        _ => (1..=n).map(|i| format!("attractor-{i}")).collect(),
    }
}

/// Clusters terminal points into attractors. Clusters whose circles
/// overlap are merged until all are disjoint. Attractors are ordered by
/// descending own coordinate of their centers.
pub fn attractors_from_terminals(terminals: &[Vec2], n_starts: usize, opts: &AttractorOptions) -> Result<Vec<Attractor>> {
    let threshold = opts.min_share * n_starts as f64;
    let mut clusters: Vec<Vec<Vec2>> = single_linkage(terminals, opts.merge_radius)
        .into_iter()
        .filter(|c| c.len() as f64 >= threshold)
        .map(|c| c.into_iter().map(|i| terminals[i]).collect())
        .collect();
    if clusters.is_empty() {
        return Err(Error::NoAttractor);
    }
    let mut summary: Vec<(Vec2, f64)> = clusters.iter().map(|c| summarize(c, opts.radius_floor)).collect();
    'merge: loop {
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                if summary[i].0.dist(summary[j].0) <= summary[i].1 + summary[j].1 {
                    let moved = clusters.remove(j);
                    summary.remove(j);
                    clusters[i].extend(moved);
                    summary[i] = summarize(&clusters[i], opts.radius_floor);
                    continue 'merge;
                }
            }
        }
        break;
    }
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.sort_by(|&a, &b| summary[b].0.x.total_cmp(&summary[a].0.x).then(summary[b].0.y.total_cmp(&summary[a].0.y)));
    let labels = default_labels(order.len());
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(id, k)| Attractor {
            id,
            center: summary[k].0,
            radius: summary[k].1,
            label: labels[id].clone(),
            members: clusters[k].len(),
        })
        .collect())
}

/// Integrates every start for the long horizon and clusters the terminal
/// points.
pub fn find_attractors(field: &impl VelocityField, starts: &[Vec2], opts: &AttractorOptions) -> Result<Vec<Attractor>> {
    if starts.is_empty() {
        return Err(Error::invalid("no start points"));
    }
    let terminals = terminal_points(field, starts, opts)?;
    attractors_from_terminals(&terminals, starts.len(), opts)
}

/// Nearest attractor whose enlarged circle contains `p`.
pub fn assign(p: Vec2, attractors: &[Attractor], radius_factor: f64) -> Option<usize> {
    attractors
        .iter()
        .enumerate()
        .map(|(k, a)| (k, p.dist(a.center), a.radius * radius_factor))
        .filter(|&(_, d, r)| d <= r)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(k, _, _)| k)
}

/// Basin of each start under `field`, `None` for unresolved.
pub fn assign_starts(
    field: &impl VelocityField,
    attractors: &[Attractor],
    starts: &[Vec2],
    opts: &AttractorOptions,
) -> Vec<Option<usize>> {
    let io = opts.integrate_options();
    par::map_slice(starts, |&z| match integrate_lenient(field, z, opts.long_horizon, &io) {
        Ok(t) if !t.failed => assign(t.terminal, attractors, opts.radius_factor),
        _ => None,
    })
}

/// A unit entering the basin report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinUnit {
    pub unit_id: String,
    pub start: Vec2,
    pub population: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub share: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitMembership {
    pub unit_id: String,
    pub start: Vec2,
    pub population: u64,
    /// Basin under the point-estimate field.
    pub basin: Option<usize>,
    /// Replicate assignment frequency per attractor.
    pub probabilities: Vec<f64>,
    pub unresolved: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    /// Attractor label, or `unresolved`.
    pub label: String,
    pub attractor: Option<usize>,
    pub municipalities: Band,
    pub population: Band,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttractorReport {
    pub attractors: Vec<Attractor>,
    pub seed: u64,
    /// Non-degenerate replicates used for probabilities and bands.
    pub replicates: usize,
    pub degenerate_replicates: usize,
    pub units: Vec<UnitMembership>,
    pub aggregates: Vec<AggregateRow>,
}

fn shares(assign: &[Option<usize>], units: &[BasinUnit], k: usize) -> (Vec<f64>, Vec<f64>) {
    let total_pop: f64 = units.iter().map(|u| u.population as f64).sum();
    let mut count = vec![0usize; k + 1];
    let mut pop = vec![0f64; k + 1];
    for (a, u) in assign.iter().zip(units) {
        let slot = a.unwrap_or(k);
        count[slot] += 1;
        pop[slot] += u.population as f64;
    }
    let n = units.len().max(1) as f64;
    let pop_den = if total_pop > 0.0 { total_pop } else { 1.0 };
    (count.iter().map(|&c| c as f64 / n).collect(), pop.iter().map(|&p| p / pop_den).collect())
}

/// Assignment frequencies over replicate fields and aggregate basin shares.
///
/// Point shares come from `point_field`; the 90% bands are the 5th and 95th
/// percentiles of the replicate-level shares.
pub fn basin_probabilities(
    point_field: &VectorFieldGrid,
    ensemble: &BootstrapEnsemble,
    attractors: &[Attractor],
    units: &[BasinUnit],
    opts: &AttractorOptions,
) -> Result<AttractorReport> {
    if attractors.is_empty() {
        return Err(Error::NoAttractor);
    }
    let k = attractors.len();
    let starts: Vec<Vec2> = units.iter().map(|u| u.start).collect();
    let point = assign_starts(&GridFlow::new(point_field), attractors, &starts, opts);

    let live: Vec<usize> = (0..ensemble.len()).filter(|&r| !ensemble.degenerate[r]).collect();
    let reps: Vec<Vec<Option<usize>>> =
        par::map_slice(&live, |&r| assign_starts(&GridFlow::new(&ensemble.fields[r]), attractors, &starts, opts));
    let b = reps.len();

    let mut counts = vec![vec![0usize; k]; units.len()];
    for rep in &reps {
        for (i, a) in rep.iter().enumerate() {
            if let Some(a) = a {
                counts[i][*a] += 1;
            }
        }
    }
    let members = units
        .iter()
        .zip(&counts)
        .zip(&point)
        .map(|((u, c), &basin)| {
            let probabilities: Vec<f64> =
                c.iter().map(|&x| if b > 0 { x as f64 / b as f64 } else { 0.0 }).collect();
            let resolved: usize = c.iter().sum();
            let unresolved = if b > 0 { (b - resolved) as f64 / b as f64 } else { 1.0 };
            UnitMembership {
                unit_id: u.unit_id.clone(),
                start: u.start,
                population: u.population,
                basin,
                probabilities,
                unresolved,
            }
        })
        .collect();

    let (pc, pp) = shares(&point, units, k);
    let rep_shares: Vec<(Vec<f64>, Vec<f64>)> = reps.iter().map(|r| shares(r, units, k)).collect();
    let band = |slot: usize, est: f64, pick: fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| {
        let mut v: Vec<f64> = rep_shares.iter().map(|s| pick(s)[slot]).collect();
        v.sort_by(f64::total_cmp);
        if v.is_empty() {
            Band { share: est, lo: f64::NAN, hi: f64::NAN }
        } else {
            Band { share: est, lo: quantile_sorted(&v, 0.05), hi: quantile_sorted(&v, 0.95) }
        }
    };
    let aggregates = (0..=k)
        .map(|slot| AggregateRow {
            label: if slot < k { attractors[slot].label.clone() } else { "unresolved".into() },
            attractor: (slot < k).then_some(slot),
            municipalities: band(slot, pc[slot], |s| &s.0),
            population: band(slot, pp[slot], |s| &s.1),
        })
        .collect();

    Ok(AttractorReport {
        attractors: attractors.to_vec(),
        seed: ensemble.seed,
        replicates: b,
        degenerate_replicates: ensemble.len() - b,
        units: members,
        aggregates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayRow {
    pub attractor: String,
    pub program_flag: bool,
    pub n_units: usize,
    pub population: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub rows: Vec<OverlayRow>,
    /// Membership ids not present in the report.
    pub unknown_units: Vec<String>,
}

/// Cross-tabulates point-estimate basins against a programme flag. Units
/// missing from `membership` count as unflagged.
pub fn policy_overlay(report: &AttractorReport, membership: &[(String, bool)]) -> Overlay {
    let known: BTreeMap<&str, usize> =
        report.units.iter().enumerate().map(|(i, u)| (u.unit_id.as_str(), i)).collect();
    let mut flagged = vec![false; report.units.len()];
    let mut unknown = Vec::new();
    for (id, flag) in membership {
        match known.get(id.as_str()) {
            Some(&i) => flagged[i] |= *flag,
            None => unknown.push(id.clone()),
        }
    }
    if !unknown.is_empty() {
        log::warn!("{} membership ids have no position in the report", unknown.len());
    }
    let k = report.attractors.len();
    let mut cells = vec![[(0usize, 0u64); 2]; k + 1];
    for (u, &f) in report.units.iter().zip(&flagged) {
        let cell = &mut cells[u.basin.unwrap_or(k)][usize::from(f)];
        cell.0 += 1;
        cell.1 += u.population;
    }
    let mut rows = Vec::new();
    for (slot, c) in cells.iter().enumerate() {
        let label = if slot < k { report.attractors[slot].label.clone() } else { "unresolved".to_string() };
        for flag in [true, false] {
            let (n_units, population) = c[usize::from(flag)];
            rows.push(OverlayRow { attractor: label.clone(), program_flag: flag, n_units, population });
        }
    }
    Overlay { rows, unknown_units: unknown }
}
