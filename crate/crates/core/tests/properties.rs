use std::collections::BTreeMap;

use proptest::prelude::*;
use rvf_core::kde::{AdaptiveDensity, Kernel};
use rvf_core::moran::{dispersion_stats, morans_i_value, to_moran, transitions, WeightMatrix};
use rvf_core::panel::{harmonize, ingest_panel, Crosswalk, CrosswalkEntry, UnitRecord, ZonePartition};
use rvf_core::rvf::{RvfEstimator, RvfParams};
use rvf_core::Vec2;

fn point() -> impl Strategy<Value = Vec2> {
    (-5.0f64..5.0, -5.0f64..5.0).prop_map(|(x, y)| Vec2::new(x, y))
}

/// Units `u0..un` over two years with optional zero populations, plus
/// split sources `s0a/s0b -> u0` in the first year.
fn records() -> impl Strategy<Value = Vec<UnitRecord>> {
    prop::collection::vec((0u64..5000, 1u64..5000, 0.5f64..40.0), 4..20).prop_map(|rows| {
        let mut out = Vec::new();
        for (i, (p0, p1, area)) in rows.into_iter().enumerate() {
            if i == 0 {
                for (suffix, share) in [("a", 0.3), ("b", 0.7)] {
                    out.push(UnitRecord {
                        unit_id: format!("s0{suffix}"),
                        year: 2000,
                        population: p0 / 2,
                        area_km2: area * share,
                    });
                }
            } else {
                out.push(UnitRecord { unit_id: format!("u{i}"), year: 2000, population: p0, area_km2: area });
            }
            out.push(UnitRecord { unit_id: format!("u{i}"), year: 2001, population: p1, area_km2: area });
        }
        out
    })
}

fn crosswalk() -> Crosswalk {
    let e = |s: &str| CrosswalkEntry {
        source_unit_id: s.into(),
        target_unit_id: "u0".into(),
        year_from: 2000,
        year_to: 2000,
    };
    Crosswalk::new(vec![e("s0a"), e("s0b")], None).unwrap()
}

fn partition_for(units: impl IntoIterator<Item = String>, zones: usize) -> ZonePartition {
    let map: BTreeMap<String, String> =
        units.into_iter().enumerate().map(|(i, u)| (u, format!("z{}", i % zones))).collect();
    ZonePartition::new(map, 2000, 2001).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn harmonization_is_idempotent_and_additive(recs in records()) {
        let cw = crosswalk();
        let once = harmonize(&recs, &cw).unwrap();
        let twice = harmonize(&once, &cw).unwrap();
        prop_assert_eq!(&once, &twice);
        let merged = once.iter().find(|r| r.unit_id == "u0" && r.year == 2000).unwrap();
        let sources: u64 = recs.iter().filter(|r| r.unit_id.starts_with("s0")).map(|r| r.population).sum();
        prop_assert_eq!(merged.population, sources);
    }

    #[test]
    fn every_unit_is_retained_or_reported(recs in records()) {
        let units: std::collections::BTreeSet<String> =
            recs.iter().filter(|r| r.year == 2001).map(|r| r.unit_id.clone()).collect();
        let part = partition_for(units.iter().cloned(), 3);
        match ingest_panel(&recs, &crosswalk(), vec![part]) {
            Ok((panel, report)) => {
                let mut seen: Vec<String> = panel.units().to_vec();
                seen.extend(report.dropped.iter().map(|d| d.unit_id.clone()));
                seen.sort();
                prop_assert_eq!(seen, units.into_iter().collect::<Vec<_>>());
                for y in panel.years() {
                    prop_assert!(panel.log_density(*y).unwrap().iter().all(|v| v.is_finite()));
                }
            }
            Err(e) => prop_assert!(matches!(e, rvf_core::Error::NoUnits(_)), "{e}"),
        }
    }

    #[test]
    fn moran_statistics_invariants(
        recs in records(), zones in 1usize..5, shift in -10.0f64..10.0, scale in 0.1f64..10.0,
    ) {
        let units: Vec<String> = recs.iter().filter(|r| r.year == 2001).map(|r| r.unit_id.clone()).collect();
        let part = partition_for(units, zones);
        let Ok((panel, _)) = ingest_panel(&recs, &crosswalk(), vec![part.clone()]) else { return Ok(()); };
        let w = WeightMatrix::for_year(&panel, 2001).unwrap();
        for i in 0..w.n() {
            if !w.is_singleton(i) {
                let s: f64 = w.row(i).map(|(_, x)| x).sum();
                prop_assert!((s - 1.0).abs() <= 1e-12);
            }
        }
        let y = panel.log_density(2001).unwrap();
        if let Ok(i0) = morans_i_value(y, &w) {
            let moved: Vec<f64> = y.iter().map(|v| v * scale + shift).collect();
            let i1 = morans_i_value(&moved, &w).unwrap();
            prop_assert!((i0 - i1).abs() <= 1e-9 * i0.abs().max(1.0));
        }
        let d = dispersion_stats(&panel, &part, 2001).unwrap();
        prop_assert!((0.0..=1.0).contains(&d.var_between_share));
        prop_assert!((0.0..=1.0).contains(&d.var_within_share));
        if !d.degenerate {
            prop_assert!((d.var_between_share + d.var_within_share - 1.0).abs() <= 1e-10);
        }
        if let Ok(ts) = transitions(&panel, &w, &w, 2000, 2001) {
            let end = to_moran(&panel, &w, 2001).unwrap();
            for t in &ts {
                let e = end.iter().find(|p| p.unit == t.unit).unwrap().z();
                let back = t.start + t.delta;
                prop_assert!(back.dist(e) <= 4.0 * f64::EPSILON * e.norm().max(1.0));
                prop_assert_eq!(t.end, e);
            }
        }
    }

    #[test]
    fn arrows_are_convex_combinations_and_local(
        starts in prop::collection::vec(point(), 12..40),
        seed in 0u64..1000,
        h in 0.3f64..1.2,
        alpha in 0.0f64..0.6,
        z in point(),
    ) {
        let deltas: Vec<Vec2> = (0..starts.len())
            .map(|j| Vec2::new(((j as u64 * 7 + seed) % 13) as f64 - 6.0, ((j as u64 * 3 + seed) % 5) as f64))
            .collect();
        let Ok(est) = RvfEstimator::new(&starts, &deltas, 1.0, &RvfParams::new(h, alpha)) else { return Ok(()); };
        let e = est.estimate_at(z);
        let w = est.weights_at(z);
        match e.arrow {
            None => prop_assert!(w.is_empty() && e.mass == 0.0),
            Some(a) => {
                let (lo_x, hi_x) = w.iter().fold((f64::MAX, f64::MIN), |m, (j, _)| (m.0.min(deltas[*j].x), m.1.max(deltas[*j].x)));
                let (lo_y, hi_y) = w.iter().fold((f64::MAX, f64::MIN), |m, (j, _)| (m.0.min(deltas[*j].y), m.1.max(deltas[*j].y)));
                prop_assert!(a.x >= lo_x - 1e-12 && a.x <= hi_x + 1e-12);
                prop_assert!(a.y >= lo_y - 1e-12 && a.y <= hi_y + 1e-12);
                // Moving a transition that has no weight at z changes nothing.
                if let Some(j) = (0..starts.len()).find(|j| w.iter().all(|(k, _)| k != j)) {
                    let mut d2 = deltas.clone();
                    d2[j] = Vec2::new(1e6, -1e6);
                    let est2 = RvfEstimator::new(&starts, &d2, 1.0, &RvfParams::new(h, alpha)).unwrap();
                    prop_assert_eq!(est2.estimate_at(z).arrow, Some(a));
                }
            }
        }
    }

    #[test]
    fn field_is_translation_equivariant(
        starts in prop::collection::vec(point(), 12..30),
        shift in point(),
        z in point(),
        alpha in 0.0f64..0.5,
    ) {
        let deltas: Vec<Vec2> = starts.iter().map(|s| Vec2::new(s.y.sin(), s.x.cos())).collect();
        let moved: Vec<Vec2> = starts.iter().map(|s| *s + shift).collect();
        let p = RvfParams::new(0.8, alpha);
        let (Ok(a), Ok(b)) = (RvfEstimator::new(&starts, &deltas, 1.0, &p), RvfEstimator::new(&moved, &deltas, 1.0, &p))
            else { return Ok(()); };
        let (ea, eb) = (a.estimate_at(z), b.estimate_at(z + shift));
        match (ea.arrow, eb.arrow) {
            (Some(u), Some(v)) => prop_assert!(u.dist(v) <= 1e-8, "{u:?} vs {v:?}"),
            (None, None) => {}
            // Points on the support boundary may flip under rounding.
            _ => prop_assert!(ea.mass.max(eb.mass) < 1e-6),
        }
    }

    #[test]
    fn density_is_affine_equivariant(
        pts in prop::collection::vec(point(), 12..30),
        a11 in 0.5f64..2.0, a12 in -1.0f64..1.0, a22 in 0.5f64..2.0,
        b in point(), z in point(), alpha in 0.0f64..0.5,
    ) {
        let map = |p: Vec2| Vec2::new(a11 * p.x + a12 * p.y, a22 * p.y) + b;
        let det = a11 * a22;
        let mapped: Vec<Vec2> = pts.iter().map(|&p| map(p)).collect();
        let (Ok(f), Ok(g)) = (
            AdaptiveDensity::new(&pts, 0.7, alpha, Kernel::Epanechnikov),
            AdaptiveDensity::new(&mapped, 0.7, alpha, Kernel::Epanechnikov),
        ) else { return Ok(()); };
        let (u, v) = (f.eval(z), g.eval(map(z)) * det);
        prop_assert!((u - v).abs() <= 1e-8 * u.max(1e-3), "{u} vs {v}");
    }
}
