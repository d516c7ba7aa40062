//! Zone-membership spatial weights, the Moran space and descriptive spatial
//! statistics.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::panel::{Panel, ZonePartition};
use crate::par;
use crate::stats;

/// Row-standardized weights linking each unit to the other members of its
/// zone. `W[i, j] = 1 / (n_z - 1)` for zone-mates `j != i`; the diagonal is
/// zero. Units alone in their zone have an empty row.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    zone: Vec<usize>,
    members: Vec<Vec<usize>>,
    zone_ids: Vec<String>,
}

impl WeightMatrix {
    /// Builds the weights for `units` (panel order) from a partition.
    pub fn from_partition(partition: &ZonePartition, units: &[String]) -> Result<Self> {
        let mut index: BTreeMap<&str, usize> = BTreeMap::new();
        let mut zone = Vec::with_capacity(units.len());
        let mut members: Vec<Vec<usize>> = Vec::new();
        let mut zone_ids = Vec::new();
        for (i, u) in units.iter().enumerate() {
            let z = partition.zone(u).ok_or_else(|| Error::MissingZone {
                unit: u.clone(),
                year: partition.valid_from,
            })?;
            let zi = *index.entry(z).or_insert_with(|| {
                members.push(Vec::new());
                zone_ids.push(z.to_string());
                members.len() - 1
            });
            zone.push(zi);
            members[zi].push(i);
        }
        Ok(WeightMatrix { zone, members, zone_ids })
    }

    /// Weights from the partition valid in `year`.
    pub fn for_year(panel: &Panel, year: i32) -> Result<Self> {
        Self::from_partition(panel.partition_for(year)?, panel.units())
    }

    pub fn n(&self) -> usize {
        self.zone.len()
    }

    pub fn n_zones(&self) -> usize {
        self.members.len()
    }

    pub fn zone_of(&self, i: usize) -> usize {
        self.zone[i]
    }

    pub fn zone_id(&self, z: usize) -> &str {
        &self.zone_ids[z]
    }

    pub fn zone_members(&self, z: usize) -> &[usize] {
        &self.members[z]
    }

    pub fn is_singleton(&self, i: usize) -> bool {
        self.members[self.zone[i]].len() < 2
    }

    /// Units whose row is empty.
    pub fn singletons(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.is_singleton(i)).collect()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if i == j || self.zone[i] != self.zone[j] {
            return 0.0;
        }
        1.0 / (self.members[self.zone[i]].len() - 1) as f64
    }

    /// Non-zero entries `(j, w_ij)` of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let m = &self.members[self.zone[i]];
        let w = if m.len() > 1 { 1.0 / (m.len() - 1) as f64 } else { 0.0 };
        m.iter().copied().filter(move |&j| j != i).map(move |j| (j, w))
    }

    /// Sum of all weights; equals the number of non-singleton rows.
    pub fn s0(&self) -> f64 {
        (0..self.n()).filter(|&i| !self.is_singleton(i)).count() as f64
    }

    /// Spatial lag `(Wy)_i`, the mean of `y` over the zone-mates of `i`.
    /// NaN for singleton rows.
    pub fn lag(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.n(), "value vector does not match weight matrix");
        (0..self.n())
            .map(|i| {
                let m = &self.members[self.zone[i]];
                if m.len() < 2 {
                    return f64::NAN;
                }
                let s: f64 = m.iter().filter(|&&j| j != i).map(|&j| y[j]).sum();
                s / (m.len() - 1) as f64
            })
            .collect()
    }
}

/// A unit's position `(y, Wy)` in the Moran space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoranPoint {
    /// Index into the panel's unit list.
    pub unit: usize,
    pub own: f64,
    pub lag: f64,
}

impl MoranPoint {
    pub fn z(&self) -> Vec2 {
        Vec2::new(self.own, self.lag)
    }
}

/// Maps one panel year into the Moran space. Singleton-zone units are left
/// out; points follow the unit order.
pub fn to_moran(panel: &Panel, weights: &WeightMatrix, year: i32) -> Result<Vec<MoranPoint>> {
    let y = panel.log_density(year)?;
    if weights.n() != y.len() {
        return Err(Error::invalid("weight matrix does not match the panel units"));
    }
    let lag = weights.lag(y);
    Ok((0..y.len())
        .filter(|&i| !weights.is_singleton(i))
        .map(|i| MoranPoint { unit: i, own: y[i], lag: lag[i] })
        .collect())
}

/// Observed movement of a unit in the Moran space between two years.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub unit: usize,
    pub start: Vec2,
    pub end: Vec2,
    /// `end - start`.
    pub delta: Vec2,
    /// Years between the endpoints.
    pub horizon: i32,
}

impl Transition {
    pub fn new(unit: usize, start: Vec2, end: Vec2, horizon: i32) -> Self {
        Transition { unit, start, end, delta: end - start, horizon }
    }
}

/// Transitions from `t0` to `t1`; each endpoint uses its own weight matrix,
/// so a change of zone partition between the years shows up in the lag.
pub fn transitions(
    panel: &Panel,
    w_start: &WeightMatrix,
    w_end: &WeightMatrix,
    t0: i32,
    t1: i32,
) -> Result<Vec<Transition>> {
    if t1 <= t0 {
        return Err(Error::EmptyWindow(t0, t1));
    }
    let a = to_moran(panel, w_start, t0)?;
    let b = to_moran(panel, w_end, t1)?;
    let mut end_of = vec![None; panel.n_units()];
    for p in &b {
        end_of[p.unit] = Some(p.z());
    }
    let out: Vec<Transition> = a
        .iter()
        .filter_map(|p| end_of[p.unit].map(|e| Transition::new(p.unit, p.z(), e, t1 - t0)))
        .collect();
    if out.is_empty() {
        return Err(Error::NoUnits(format!("no unit has a lag in both {t0} and {t1}")));
    }
    Ok(out)
}

/// Global Moran's I with a permutation band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoranI {
    pub value: f64,
    /// Expectation under spatial randomness, `-1 / (N - 1)`.
    pub expected: f64,
    pub lo: f64,
    pub hi: f64,
    pub permutations: usize,
}

/// `I = (N / S0) * sum_ij w_ij d_i d_j / sum_i d_i^2` with `d = y - mean(y)`.
pub fn morans_i_value(values: &[f64], weights: &WeightMatrix) -> Result<f64> {
    let n = values.len();
    let m = stats::mean(values);
    let d: Vec<f64> = values.iter().map(|v| v - m).collect();
    let den: f64 = d.iter().map(|x| x * x).sum();
    if !(den > 0.0) || values.iter().all(|&v| v == values[0]) {
        return Err(Error::Degenerate("Moran's I of a constant vector".into()));
    }
    let s0 = weights.s0();
    if s0 == 0.0 {
        return Err(Error::Degenerate("Moran's I with no neighbour pairs".into()));
    }
    let lag = weights.lag(&d);
    let num: f64 = (0..n)
        .filter(|&i| !weights.is_singleton(i))
        .map(|i| d[i] * lag[i])
        .sum();
    Ok(n as f64 / s0 * num / den)
}

/// O(N) Moran's I using zone sums; used for permutation draws.
fn morans_i_zone_sums(values: &[f64], weights: &WeightMatrix, s0: f64) -> f64 {
    let m = stats::mean(values);
    let mut zone_sum = vec![0.0; weights.n_zones()];
    let mut den = 0.0;
    for (i, v) in values.iter().enumerate() {
        let d = v - m;
        zone_sum[weights.zone_of(i)] += d;
        den += d * d;
    }
    let mut num = 0.0;
    for (i, v) in values.iter().enumerate() {
        let z = weights.zone_of(i);
        let size = weights.zone_members(z).len();
        if size < 2 {
            continue;
        }
        let d = v - m;
        num += d * (zone_sum[z] - d) / (size - 1) as f64;
    }
    values.len() as f64 / s0 * num / den
}

/// Moran's I with a 2.5/97.5 percentile band from `permutations` random
/// relabellings. Permutation `k` uses its own random stream.
pub fn morans_i(
    values: &[f64],
    weights: &WeightMatrix,
    permutations: usize,
    seed: u64,
) -> Result<MoranI> {
    let value = morans_i_value(values, weights)?;
    let s0 = weights.s0();
    let draws = par::map_range(permutations, |k| {
        let mut rng = stats::stream_rng(seed, k as u64);
        let mut v = values.to_vec();
        v.shuffle(&mut rng);
        morans_i_zone_sums(&v, weights, s0)
    });
    Ok(MoranI {
        value,
        expected: -1.0 / (values.len() as f64 - 1.0),
        lo: stats::quantile(&draws, 0.025),
        hi: stats::quantile(&draws, 0.975),
        permutations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveOptions {
    pub n_eval: usize,
    pub replicates: usize,
    /// Gaussian kernel bandwidth on the own coordinate; rule of thumb if `None`.
    pub bandwidth: Option<f64>,
    pub seed: u64,
}

impl Default for CurveOptions {
    fn default() -> Self {
        CurveOptions { n_eval: 100, replicates: 500, bandwidth: None, seed: 0 }
    }
}

/// Local-linear regression of the lag on the own coordinate, with pointwise
/// 95% bands. The local slope is the local Moran coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoranCurve {
    pub x: Vec<f64>,
    pub fit: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub slope: Vec<f64>,
    pub slope_lo: Vec<f64>,
    pub slope_hi: Vec<f64>,
    pub bandwidth: f64,
}

/// Silverman's rule of thumb `0.9 min(sd, IQR / 1.34) n^(-1/5)`.
pub fn rule_of_thumb_bandwidth(x: &[f64]) -> f64 {
    let sd = stats::sample_sd(x);
    let iqr = stats::quantile(x, 0.75) - stats::quantile(x, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (x.len() as f64).powf(-0.2)
}

const CURVE_CUTOFF: f64 = 5.0;
const Z_975: f64 = 1.959963984540054;

/// Fits `(level, slope)` at each abscissa. `xy` must be sorted by x.
fn local_linear(xy: &[(f64, f64)], at: &[f64], h: f64) -> Vec<(f64, f64)> {
    at.iter()
        .map(|&x0| {
            let from = xy.partition_point(|p| p.0 < x0 - CURVE_CUTOFF * h);
            let to = xy.partition_point(|p| p.0 <= x0 + CURVE_CUTOFF * h);
            let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for &(x, y) in &xy[from..to] {
                let u = x - x0;
                let w = (-0.5 * (u / h) * (u / h)).exp();
                s0 += w;
                s1 += w * u;
                s2 += w * u * u;
                t0 += w * y;
                t1 += w * u * y;
            }
            let det = s0 * s2 - s1 * s1;
            if !(det > 1e-12 * s0 * s2) {
                return (f64::NAN, f64::NAN);
            }
            ((s2 * t0 - s1 * t1) / det, (s0 * t1 - s1 * t0) / det)
        })
        .collect()
}

pub fn moran_curve(points: &[MoranPoint], opts: &CurveOptions) -> Result<MoranCurve> {
    if points.len() < 30 {
        return Err(Error::invalid(format!(
            "Moran curve needs at least 30 points, got {}",
            points.len()
        )));
    }
    let own: Vec<f64> = points.iter().map(|p| p.own).collect();
    let (xmin, xmax) = own
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if !(xmax > xmin) {
        return Err(Error::Degenerate("own-coordinate range is empty".into()));
    }
    let h = opts.bandwidth.unwrap_or_else(|| rule_of_thumb_bandwidth(&own));
    if !(h > 0.0) {
        return Err(Error::invalid("curve bandwidth must be positive"));
    }
    let n_eval = opts.n_eval.max(2);
    let x: Vec<f64> = (0..n_eval)
        .map(|k| xmin + (xmax - xmin) * k as f64 / (n_eval - 1) as f64)
        .collect();

    let mut xy: Vec<(f64, f64)> = points.iter().map(|p| (p.own, p.lag)).collect();
    xy.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let point = local_linear(&xy, &x, h);

    let reps = par::map_range(opts.replicates, |r| {
        let mut rng = stats::stream_rng(opts.seed, r as u64);
        let mut sample: Vec<(f64, f64)> = (0..xy.len())
            .map(|_| xy[rand::Rng::random_range(&mut rng, 0..xy.len())])
            .collect();
        sample.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        local_linear(&sample, &x, h)
    });

    let mut curve = MoranCurve {
        x: x.clone(),
        fit: Vec::with_capacity(n_eval),
        lo: Vec::with_capacity(n_eval),
        hi: Vec::with_capacity(n_eval),
        slope: Vec::with_capacity(n_eval),
        slope_lo: Vec::with_capacity(n_eval),
        slope_hi: Vec::with_capacity(n_eval),
        bandwidth: h,
    };
    for k in 0..n_eval {
        let (fit, slope) = point[k];
        let level_se = finite_sd(reps.iter().map(|r| r[k].0));
        let slope_se = finite_sd(reps.iter().map(|r| r[k].1));
        curve.fit.push(fit);
        curve.lo.push(fit - Z_975 * level_se);
        curve.hi.push(fit + Z_975 * level_se);
        curve.slope.push(slope);
        curve.slope_lo.push(slope - Z_975 * slope_se);
        curve.slope_hi.push(slope + Z_975 * slope_se);
    }
    Ok(curve)
}

fn finite_sd(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.filter(|x| x.is_finite()).collect();
    if v.len() < 2 {
        return 0.0;
    }
    stats::sample_sd(&v)
}

/// Cross-sectional dispersion of one panel year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionStats {
    pub year: i32,
    /// Mean density in persons per km².
    pub mean_density: f64,
    pub mean_log_density: f64,
    /// Coefficient of variation of density (not log density).
    pub cv: f64,
    /// Total variance of log density (population form, divides by N).
    pub total_variance: f64,
    pub var_between: f64,
    pub var_within: f64,
    pub var_between_share: f64,
    pub var_within_share: f64,
    /// Set when the total variance is zero and the shares are reported as 0.
    pub degenerate: bool,
}

/// Coefficient of variation and the between/within-zone decomposition of the
/// log-density variance in `year`.
pub fn dispersion_stats(panel: &Panel, partition: &ZonePartition, year: i32) -> Result<DispersionStats> {
    let y = panel.log_density(year)?;
    let pop = panel.population(year)?;
    let area = panel.area_km2();
    let n = y.len() as f64;
    let density: Vec<f64> = pop.iter().zip(area).map(|(&p, &a)| p as f64 / a).collect();
    let mean_density = stats::mean(&density);
    let cv = if mean_density > 0.0 { stats::variance(&density).sqrt() / mean_density } else { 0.0 };

    let w = WeightMatrix::from_partition(partition, panel.units())?;
    let grand = stats::mean(y);
    let total_variance = y.iter().map(|v| (v - grand) * (v - grand)).sum::<f64>() / n;
    let mut var_between = 0.0;
    let mut var_within = 0.0;
    for z in 0..w.n_zones() {
        let members = w.zone_members(z);
        let zm = members.iter().map(|&i| y[i]).sum::<f64>() / members.len() as f64;
        var_between += members.len() as f64 * (zm - grand) * (zm - grand);
        var_within += members.iter().map(|&i| (y[i] - zm) * (y[i] - zm)).sum::<f64>();
    }
    var_between /= n;
    var_within /= n;
    let degenerate = !(total_variance > 0.0);
    let (bs, ws) = if degenerate {
        (0.0, 0.0)
    } else {
        let tot = var_between + var_within;
        (var_between / tot, var_within / tot)
    };
    Ok(DispersionStats {
        year,
        mean_density,
        mean_log_density: grand,
        cv,
        total_variance,
        var_between,
        var_within,
        var_between_share: bs,
        var_within_share: ws,
        degenerate,
    })
}
