//! Synthetic data with known ground truth, used by the test suites, the
//! benchmarks and the `synth` CLI command.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::geom::Vec2;
use crate::moran::Transition;
use crate::panel::{CrosswalkEntry, UnitRecord, ZonePartition};
use crate::stats::stream_rng;

/// Double-well gradient field `-grad V`, `V = (x^2 - 4)^2 / 16 + y^2 / 4`,
/// with sinks at `(-2, 0)` and `(2, 0)` separated by the line `x = 0`.
pub fn two_basin_velocity(z: Vec2) -> Vec2 {
    Vec2::new(-z.x * (z.x * z.x - 4.0) / 4.0, -z.y / 2.0)
}

/// Sinks of [`two_basin_velocity`].
pub const TWO_BASIN_SINKS: [Vec2; 2] = [Vec2::new(-2.0, 0.0), Vec2::new(2.0, 0.0)];

/// Index into [`TWO_BASIN_SINKS`] of the basin containing `z`.
pub fn two_basin_label(z: Vec2) -> usize {
    usize::from(z.x > 0.0)
}

/// `n` one-year transitions of the double-well field with starts uniform on
/// `[-3, 3] x [-2, 2]` and isotropic Gaussian noise of s.d. `sigma`.
pub fn two_basin_transitions(n: usize, sigma: f64, seed: u64) -> Vec<Transition> {
    field_transitions(n, sigma, seed, two_basin_velocity, (-3.0, 3.0), (-2.0, 2.0))
}

/// Transitions `delta = f(start) + noise` with uniform starts.
pub fn field_transitions(
    n: usize,
    sigma: f64,
    seed: u64,
    f: impl Fn(Vec2) -> Vec2,
    xr: (f64, f64),
    yr: (f64, f64),
) -> Vec<Transition> {
    let mut rng = stream_rng(seed, 0);
    let noise = Normal::new(0.0, sigma).unwrap();
    (0..n)
        .map(|j| {
            let z = Vec2::new(rng.random_range(xr.0..xr.1), rng.random_range(yr.0..yr.1));
            let d = f(z) + Vec2::new(noise.sample(&mut rng), noise.sample(&mut rng));
            Transition { unit: j, start: z, end: z + d, delta: d, horizon: 1 }
        })
        .collect()
}

/// Standard-normal starts with isotropic zero-mean noise moves.
pub fn isotropic_noise_transitions(n: usize, sigma: f64, seed: u64) -> Vec<Transition> {
    let mut rng = stream_rng(seed, 1);
    (0..n)
        .map(|j| {
            let z = Vec2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            let d = Vec2::new(
                sigma * rng.sample::<f64, _>(StandardNormal),
                sigma * rng.sample::<f64, _>(StandardNormal),
            );
            Transition { unit: j, start: z, end: z + d, delta: d, horizon: 1 }
        })
        .collect()
}

/// Options for [`italy_like`].
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSpec {
    pub seed: u64,
    pub n_zones: usize,
    pub first_year: i32,
    pub last_year: i32,
    /// First year of the second partition.
    pub switch_year: i32,
    /// Annual own-density drift scale; zero gives a static panel.
    pub drift: f64,
    /// Copy the populations of `switch_year - 1` into `switch_year`.
    pub freeze_switch: bool,
    /// Use the first partition for every year.
    pub no_switch: bool,
}

impl Default for PanelSpec {
    fn default() -> Self {
        PanelSpec {
            seed: 2019,
            n_zones: 60,
            first_year: 1984,
            last_year: 2019,
            switch_year: 2002,
            drift: 0.012,
            freeze_switch: false,
            no_switch: false,
        }
    }
}

/// Raw inputs of a synthetic regional panel.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPanel {
    pub records: Vec<UnitRecord>,
    pub crosswalk: Vec<CrosswalkEntry>,
    pub partition_rows: Vec<(String, String, i32, i32)>,
    /// Units flagged by a place-based programme (low-density units).
    pub membership: Vec<(String, bool)>,
}

impl SyntheticPanel {
    pub fn partitions(&self) -> Vec<ZonePartition> {
        crate::panel::partitions_from_rows(self.partition_rows.clone()).unwrap()
    }
}

/// A panel with municipality-like units grouped into commuting zones.
///
/// Zones have heterogeneous mean log densities and each zone's first unit
/// is a denser core. Dense units grow and sparse ones shrink over time. From
/// `switch_year` on, the densest zones absorb the sparsest ones, so that
/// dense cores share zones with sparse units and the global Moran's I drops.
/// Two units are recorded as split in their early years to exercise the
/// crosswalk, and one zone is a singleton.
pub fn italy_like(spec: &PanelSpec) -> SyntheticPanel {
    let mut rng = stream_rng(spec.seed, 7);
    let n_zones = spec.n_zones.max(4);
    let mut units: Vec<(String, usize, f64, f64)> = Vec::new();
    let mut zone_mean = Vec::with_capacity(n_zones);
    for z in 0..n_zones {
        let mu = 4.3 + 1.3 * rng.sample::<f64, _>(StandardNormal);
        zone_mean.push(mu);
        let size = if z == n_zones - 1 { 1 } else { rng.random_range(6..24) };
        for k in 0..size {
            let core = if k == 0 { 1.6 } else { 0.0 };
            let y = mu + core + 0.7 * rng.sample::<f64, _>(StandardNormal);
            let area = (2.5 + 0.8 * rng.sample::<f64, _>(StandardNormal)).exp();
            units.push((format!("U{:04}", units.len()), z, y, area));
        }
    }

    let mut order: Vec<usize> = (0..n_zones - 1).collect();
    order.sort_by(|&a, &b| zone_mean[b].total_cmp(&zone_mean[a]));
    let k = (n_zones - 1) / 4;
    let mut zone_b: Vec<usize> = (0..n_zones).collect();
    for i in 0..k {
        zone_b[order[order.len() - 1 - i]] = order[i];
    }

    let years: Vec<i32> = (spec.first_year..=spec.last_year).collect();
    let mut records = Vec::new();
    let mut crosswalk = Vec::new();
    let split_units: Vec<usize> = vec![3, 10];
    let split_until = (spec.first_year + 6).min(spec.last_year - 1);
    for (j, (id, _, y0, area)) in units.iter().enumerate() {
        let mut y = *y0;
        let mut last_pop = 0u64;
        for &year in &years {
            if year > spec.first_year {
                if spec.freeze_switch && year == spec.switch_year {
                    // populations carried over unchanged
                } else {
                    let trend = spec.drift * (y - 4.3).tanh();
                    y += trend + spec.drift * 0.5 * rng.sample::<f64, _>(StandardNormal);
                }
            }
            let pop = if spec.freeze_switch && year == spec.switch_year {
                last_pop
            } else {
                ((y.exp() * area).round() as u64).max(1)
            };
            last_pop = pop;
            if split_units.contains(&j) && year <= split_until {
                let a = pop / 3;
                for (suffix, p, ar) in [("a", a, area * 0.4), ("b", pop - a, area * 0.6)] {
                    records.push(UnitRecord {
                        unit_id: format!("{id}{suffix}"),
                        year,
                        population: p,
                        area_km2: ar,
                    });
                }
            } else {
                records.push(UnitRecord { unit_id: id.clone(), year, population: pop, area_km2: *area });
            }
        }
        if split_units.contains(&j) {
            for suffix in ["a", "b"] {
                crosswalk.push(CrosswalkEntry {
                    source_unit_id: format!("{id}{suffix}"),
                    target_unit_id: id.clone(),
                    year_from: spec.first_year,
                    year_to: split_until,
                });
            }
        }
    }

    let mut partition_rows = Vec::new();
    let mut zone_name = BTreeMap::new();
    for z in 0..n_zones {
        zone_name.insert(z, format!("Z{z:03}"));
    }
    let (a_to, b_from) = if spec.no_switch {
        (spec.last_year, None)
    } else {
        (spec.switch_year - 1, Some(spec.switch_year))
    };
    for (id, z, _, _) in &units {
        partition_rows.push((id.clone(), zone_name[z].clone(), spec.first_year, a_to));
        if let Some(from) = b_from {
            partition_rows.push((id.clone(), zone_name[&zone_b[*z]].clone(), from, spec.last_year));
        }
    }

    let membership = units
        .iter()
        .map(|(id, _, y, _)| (id.clone(), *y < 3.6 && rng.random_bool(0.6)))
        .collect();

    SyntheticPanel { records, crosswalk, partition_rows, membership }
}
