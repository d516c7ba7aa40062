use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rvf_core::flow::GridFlow;
use rvf_core::geom::Bounds;
use rvf_core::inference::*;
use rvf_core::moran::Transition;
use rvf_core::rvf::{EvalGrid, RvfEstimator, RvfParams, VectorFieldGrid};
use rvf_core::stats::{median, stream_rng};
use rvf_core::synthetic::*;
use rvf_core::Vec2;

fn units_of(ts: &[Transition]) -> Vec<BasinUnit> {
    ts.iter()
        .map(|t| BasinUnit { unit_id: format!("u{}", t.unit), start: t.start, population: 1 + t.unit as u64 % 7 })
        .collect()
}

fn contracting_setup() -> (VectorFieldGrid, BootstrapEnsemble, Vec2) {
    let c = Vec2::new(0.5, -0.25);
    let grid = EvalGrid::new(Bounds { min: Vec2::new(-2.0, -2.0), max: Vec2::new(2.0, 2.0) }, 21, 21).unwrap();
    let field = VectorFieldGrid::from_fn(grid, 1.0, |z| Some((c - z) * 0.4));
    let ens = BootstrapEnsemble { seed: 0, grid, fields: vec![field.clone(); 5], degenerate: vec![false; 5] };
    (field, ens, c)
}

#[test]
fn two_basin_recovery() {
    let ts = two_basin_transitions(1000, 0.1, 3);
    let params = RvfParams::new(0.21, 0.0067);
    let grid = EvalGrid::for_transitions(&ts, params.h, 40, 40).unwrap();
    let field = RvfEstimator::from_transitions(&ts, &params).unwrap().on_grid(&grid);
    let starts: Vec<Vec2> = ts.iter().map(|t| t.start).collect();
    let opts = AttractorOptions::default();
    let att = find_attractors(&GridFlow::new(&field), &starts, &opts).unwrap();
    assert_eq!(att.len(), 2);
    assert_eq!(att[0].label, "urban");
    assert!(att[0].center.dist(TWO_BASIN_SINKS[1]) < 0.2);
    assert!(att[1].center.dist(TWO_BASIN_SINKS[0]) < 0.2);

    let ens = bootstrap_fields(&ts, &params, &grid, 100, 11).unwrap();
    let units = units_of(&ts);
    let rep = basin_probabilities(&field, &ens, &att, &units, &opts).unwrap();
    let mut acc = 0.0;
    for u in &rep.units {
        let truth = 1 - two_basin_label(u.start);
        acc += u.probabilities[truth];
        let total: f64 = u.probabilities.iter().sum::<f64>() + u.unresolved;
        assert!((total - 1.0).abs() <= 1e-12);
        assert!(u.probabilities.iter().all(|p| (0.0..=1.0).contains(p)));
    }
    assert!(acc / units.len() as f64 >= 0.95);
    for row in &rep.aggregates {
        assert!(row.municipalities.lo <= row.municipalities.hi);
    }
    let shares: f64 = rep.aggregates.iter().map(|r| r.municipalities.share).sum();
    assert!((shares - 1.0).abs() < 1e-12);
}

#[test]
fn start_at_center_of_contracting_field() {
    let (field, ens, c) = contracting_setup();
    let opts = AttractorOptions::default();
    let starts: Vec<Vec2> = field.grid.nodes().collect();
    let att = find_attractors(&GridFlow::new(&field), &starts, &opts).unwrap();
    assert_eq!(att.len(), 1);
    assert!(att[0].center.dist(c) < 1e-3);
    let units = vec![BasinUnit { unit_id: "c".into(), start: c, population: 10 }];
    let rep = basin_probabilities(&field, &ens, &att, &units, &opts).unwrap();
    assert_eq!(rep.units[0].probabilities, vec![1.0]);
    assert_eq!(rep.units[0].unresolved, 0.0);
}

#[test]
fn attractors_ignore_start_order() {
    let ts = two_basin_transitions(600, 0.1, 8);
    let params = RvfParams::new(0.25, 0.0);
    let grid = EvalGrid::for_transitions(&ts, params.h, 30, 30).unwrap();
    let field = RvfEstimator::from_transitions(&ts, &params).unwrap().on_grid(&grid);
    let mut starts: Vec<Vec2> = ts.iter().map(|t| t.start).collect();
    let flow = GridFlow::new(&field);
    let a = find_attractors(&flow, &starts, &AttractorOptions::default()).unwrap();
    starts.shuffle(&mut stream_rng(1, 1));
    let b = find_attractors(&flow, &starts, &AttractorOptions::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn identical_deltas_survive_every_replicate() {
    let mut rng = stream_rng(4, 0);
    let d = Vec2::new(0.3, -0.1);
    let ts: Vec<Transition> = (0..60)
        .map(|j| {
            let s = Vec2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            Transition { unit: j, start: s, end: s + d, delta: d, horizon: 1 }
        })
        .collect();
    let params = RvfParams::new(0.5, 0.1);
    let grid = EvalGrid::for_transitions(&ts, params.h, 10, 10).unwrap();
    let ens = bootstrap_fields(&ts, &params, &grid, 30, 2).unwrap();
    for f in &ens.fields {
        for a in f.arrows.iter().flatten() {
            assert_eq!(*a, d);
        }
    }
}

#[test]
fn replicate_mean_approaches_point_estimate() {
    let mut small = Vec::new();
    let mut large = Vec::new();
    for run in 0..10 {
        let ts = two_basin_transitions(300, 0.1, 100 + run);
        let params = RvfParams::new(0.3, 0.0);
        let grid = EvalGrid::new(Bounds { min: Vec2::new(-1.2, -0.2), max: Vec2::new(-1.0, 0.0) }, 2, 2).unwrap();
        let point = RvfEstimator::from_transitions(&ts, &params).unwrap().estimate_at(grid.node(0)).arrow.unwrap();
        let diff = |b: usize| {
            let e = bootstrap_fields(&ts, &params, &grid, b, run).unwrap();
            let s = e.node_samples(0);
            let m = s.iter().fold(Vec2::ZERO, |a, &x| a + x) * (1.0 / s.len() as f64);
            m.dist(point)
        };
        small.push(diff(50));
        large.push(diff(1000));
    }
    assert!(median(&large) < median(&small), "{} vs {}", median(&large), median(&small));
}

#[test]
fn symmetric_replicates_rarely_significant() {
    let grid = EvalGrid::new(Bounds { min: Vec2::ZERO, max: Vec2::new(1.0, 1.0) }, 2, 2).unwrap();
    let mut flagged = 0;
    for run in 0..100 {
        let mut rng = stream_rng(run, 0);
        let fields: Vec<VectorFieldGrid> = (0..200)
            .map(|_| {
                let a = Vec2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
                VectorFieldGrid::from_fn(grid, 1.0, |_| Some(a))
            })
            .collect();
        let ens = BootstrapEnsemble { seed: run, grid, degenerate: vec![false; 200], fields };
        flagged += usize::from(flag_significance(&ens, None, &SignificanceOptions::default())[0].significant);
    }
    assert!(flagged <= 10, "{flagged} of 100");
}

#[test]
fn pure_noise_flags_few_nodes() {
    let params = RvfParams::new(0.21, 0.0067);
    for seed in 0..3 {
        let ts = isotropic_noise_transitions(800, 0.1, seed);
        let grid = EvalGrid::for_transitions(&ts, params.h, 25, 25).unwrap();
        let est = RvfEstimator::from_transitions(&ts, &params).unwrap();
        let field = est.on_grid(&grid);
        let support = est.effective_n_on_grid(&grid);
        let ens = bootstrap_fields(&ts, &params, &grid, 200, seed).unwrap();
        let sig = flag_significance(&ens, Some(&support), &SignificanceOptions::default());
        let n = field.n_nonempty();
        let k = sig.iter().zip(&field.arrows).filter(|(s, a)| s.significant && a.is_some()).count();
        assert!((k as f64) <= 0.1 * n as f64, "seed {seed}: {k} of {n}");
    }
}

#[test]
fn report_is_reproducible() {
    let run = || {
        let ts = two_basin_transitions(300, 0.1, 21);
        let params = RvfParams::new(0.3, 0.01);
        let grid = EvalGrid::for_transitions(&ts, params.h, 20, 20).unwrap();
        let field = RvfEstimator::from_transitions(&ts, &params).unwrap().on_grid(&grid);
        let ens = bootstrap_fields(&ts, &params, &grid, 20, 99).unwrap();
        let starts: Vec<Vec2> = ts.iter().map(|t| t.start).collect();
        let opts = AttractorOptions::default();
        let att = find_attractors(&GridFlow::new(&field), &starts, &opts).unwrap();
        let rep = basin_probabilities(&field, &ens, &att, &units_of(&ts), &opts).unwrap();
        serde_json::to_string(&rep).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn overlay_partition_identities() {
    let ts = two_basin_transitions(200, 0.1, 5);
    let params = RvfParams::new(0.3, 0.0);
    let grid = EvalGrid::for_transitions(&ts, params.h, 20, 20).unwrap();
    let field = RvfEstimator::from_transitions(&ts, &params).unwrap().on_grid(&grid);
    let ens = bootstrap_fields(&ts, &params, &grid, 10, 1).unwrap();
    let starts: Vec<Vec2> = ts.iter().map(|t| t.start).collect();
    let opts = AttractorOptions::default();
    let att = find_attractors(&GridFlow::new(&field), &starts, &opts).unwrap();
    let units = units_of(&ts);
    let rep = basin_probabilities(&field, &ens, &att, &units, &opts).unwrap();

    let totals = |o: &Overlay| {
        let mut t = std::collections::BTreeMap::new();
        for r in &o.rows {
            let e = t.entry(r.attractor.clone()).or_insert((0usize, 0u64));
            e.0 += r.n_units;
            e.1 += r.population;
        }
        t
    };
    let none = policy_overlay(&rep, &[]);
    assert!(none.rows.iter().filter(|r| r.program_flag).all(|r| r.n_units == 0 && r.population == 0));
    let all: Vec<(String, bool)> = units.iter().map(|u| (u.unit_id.clone(), true)).collect();
    let full = policy_overlay(&rep, &all);
    for r in full.rows.iter().filter(|r| r.program_flag) {
        let (n, p) = totals(&none)[&r.attractor];
        assert_eq!((r.n_units, r.population), (n, p));
    }
    let mut rng = stream_rng(3, 3);
    let mut random: Vec<(String, bool)> = units.iter().map(|u| (u.unit_id.clone(), rng.random_bool(0.4))).collect();
    random.push(("ghost".into(), true));
    let ov = policy_overlay(&rep, &random);
    assert_eq!(ov.unknown_units, vec!["ghost".to_string()]);
    assert_eq!(totals(&ov), totals(&none));
    let n: usize = ov.rows.iter().map(|r| r.n_units).sum();
    assert_eq!(n, units.len());
}
