use super::*;
use crate::objective::{data, MiniBatchOracle, ProblemInstance, Sampling};
use crate::optimizer::{run, GradientSource, RunConfig, Terminal};
use crate::stepsize::StepPolicy;

fn centroid2(n: usize, seed: u64) -> ProblemInstance {
    ProblemInstance::centroid(data::gaussian_cloud(&[0.0, 0.0], 1.0, n, seed)).unwrap()
}

fn single_policy_experiment(seeds: Vec<u64>) -> Experiment {
    let problem = centroid2(50, 1);
    let oracle = MiniBatchOracle::new(10, Sampling::WithoutReplacement, 0);
    Experiment {
        problem,
        source: GradientSource::MiniBatch(oracle),
        policies: vec![("fixed".into(), StepPolicy::fixed(0.1))],
        seeds,
        base_config: RunConfig::new(50, 0, vec![2.0, -1.0]),
    }
}

#[test]
fn single_seed_aggregate_equals_trajectory() {
    let e = single_policy_experiment(vec![7]);
    let curves = run_experiment(&e).unwrap();
    let (_, curve) = &curves[0];
    assert_eq!(curve.n_seeds, 1);
    let mut config = e.base_config.clone();
    config.seed = 7;
    let t = run(&e.problem, &e.source, &e.policies[0].1, &config);
    assert!(matches!(t.terminal, Terminal::MaxIters));
    for (i, r) in t.records.iter().enumerate() {
        assert_eq!(curve.ks[i], r.k);
        assert_eq!(curve.mean_q[i], r.q.unwrap());
        assert_eq!(curve.min_q[i], r.q.unwrap());
        assert_eq!(curve.max_q[i], r.q.unwrap());
        assert_eq!(curve.se_q[i], 0.0);
    }
}

#[test]
fn aggregation_is_permutation_invariant() {
    let a = run_experiment(&single_policy_experiment(vec![1, 2, 3, 4, 5])).unwrap();
    let b = run_experiment(&single_policy_experiment(vec![4, 1, 5, 3, 2])).unwrap();
    assert_eq!(a[0].1.mean_q, b[0].1.mean_q);
    assert_eq!(a[0].1.se_q, b[0].1.se_q);
    assert_eq!(a[0].1.min_q, b[0].1.min_q);
    assert_eq!(a[0].1.max_q, b[0].1.max_q);
}

#[test]
fn parallel_and_sequential_paths_agree() {
    let e = single_policy_experiment(vec![1, 2, 3, 4]);
    let par = run_experiment(&e).unwrap();
    let seq = run_experiment_sequential(&e).unwrap();
    assert_eq!(par[0].1.mean_q, seq[0].1.mean_q);
}

#[test]
fn mean_stays_within_min_and_max() {
    let e = single_policy_experiment(vec![1, 2, 3, 4, 5, 6, 7, 8]);
    let curves = run_experiment(&e).unwrap();
    let c = &curves[0].1;
    for i in 0..c.ks.len() {
        assert!(c.min_q[i] <= c.mean_q[i] && c.mean_q[i] <= c.max_q[i]);
        assert!(c.se_q[i] >= 0.0);
    }
}

#[test]
fn failed_cells_are_recorded_and_skipped() {
    let problem = centroid2(50, 2);
    let bad_f_star = problem.f_star() + 0.1;
    let bad_policy =
        StepPolicy::polyak(bad_f_star).with_caps(crate::stepsize::Caps::new(0.5, 1.0).unwrap());
    let e = Experiment {
        source: GradientSource::Full,
        policies: vec![("bad-polyak".into(), bad_policy)],
        seeds: vec![1, 2, 3],
        base_config: RunConfig::new(500, 0, vec![3.0, 3.0]),
        problem,
    };
    let curves = run_experiment(&e).unwrap();
    let c = &curves[0].1;
    // Full-gradient runs are seed-independent; all three cells fail alike.
    assert_eq!(c.errors.len(), 3);
    assert_eq!(c.n_seeds, 0);
    assert!(c.ks.is_empty());
}

#[test]
fn duplicate_labels_are_rejected() {
    let mut e = single_policy_experiment(vec![1]);
    e.policies.push(("fixed".into(), StepPolicy::fixed(0.2)));
    assert!(matches!(
        run_experiment(&e),
        Err(HarnessError::DuplicateLabel(_))
    ));
    e.policies.pop();
    e.seeds.clear();
    assert!(matches!(run_experiment(&e), Err(HarnessError::NoSeeds)));
}

#[test]
fn heatmap_polyak_is_inverse_mu_on_flat_axis() {
    let problem = ProblemInstance::quadratic(vec![1.0, 10.0], vec![0.0, 0.0], 0.0).unwrap();
    let policy = StepPolicy::polyak(0.0);
    let grid = GridSpec {
        resolution: 11,
        ..Default::default()
    };
    let map = heatmap_h(&problem, &policy, &grid, None).unwrap();
    let iy0 = map.ys.iter().position(|&y| y == 0.0).unwrap();
    for (ix, &x) in map.xs.iter().enumerate() {
        let h = map.h[iy0 * map.xs.len() + ix];
        if x == 0.0 {
            assert!(h.is_nan()); // the minimizer itself is singular
        } else {
            assert!((h - 1.0).abs() < 1e-12, "h({x},0) = {h}");
        }
    }
}

#[test]
fn heatmap_respects_caps_and_row_count() {
    let problem = centroid2(30, 3);
    let caps = crate::stepsize::Caps::new(0.05, 0.5).unwrap();
    let policy = StepPolicy::polyak(problem.f_star()).with_caps(caps);
    let grid = GridSpec {
        resolution: 11,
        ..Default::default()
    };
    let map = heatmap_h(&problem, &policy, &grid, None).unwrap();
    assert_eq!(map.h.len(), 121);
    for &h in map.h.iter().filter(|h| h.is_finite()) {
        assert!((0.05..=0.5).contains(&h));
    }
    let csv = heatmap_to_csv(&map);
    assert_eq!(csv.lines().count(), 1 + 121);
}

#[test]
fn heatmap_rejects_non_planar_problems() {
    let problem = ProblemInstance::quadratic(vec![1.0, 2.0, 3.0], vec![0.0; 3], 0.0).unwrap();
    let policy = StepPolicy::polyak(0.0);
    assert!(matches!(
        heatmap_h(&problem, &policy, &GridSpec::default(), None),
        Err(HarnessError::NotPlanar(3))
    ));
}

#[test]
fn splr_heatmap_grows_with_batch_size() {
    let problem = centroid2(200, 4);
    let policy = StepPolicy::polyak_stochastic(problem.f_star(), 1);
    let grid = GridSpec {
        resolution: 21,
        ..Default::default()
    };
    let small = MiniBatchOracle::new(20, Sampling::WithoutReplacement, 0);
    let large = MiniBatchOracle::new(200, Sampling::WithoutReplacement, 0);
    let h20 = heatmap_h(&problem, &policy, &grid, Some(&small)).unwrap();
    let h200 = heatmap_h(&problem, &policy, &grid, Some(&large)).unwrap();
    for (a, b) in h20.h.iter().zip(&h200.h) {
        if a.is_finite() && b.is_finite() {
            assert!(b >= a, "M=200 rate {b} below M=20 rate {a}");
        }
    }
}

#[test]
fn good_init_polyak_beats_epoch_decay() {
    let problem = centroid2(200, 5);
    let oracle = MiniBatchOracle::new(20, Sampling::WithoutReplacement, 0);
    let source = GradientSource::MiniBatch(oracle);
    let policies = vec![
        (
            "splr".to_string(),
            StepPolicy::polyak_stochastic(problem.f_star(), 1)
                .with_caps(StepPolicy::default_splr_caps(problem.mu())),
        ),
        ("epoch".to_string(), StepPolicy::epoch_decay(0.6, 6.0, 100)),
    ];
    let report =
        good_init_scenario(&problem, &source, &policies, 1e-8, &[1, 2, 3, 4, 5], 50).unwrap();
    let splr = &report.entries[0];
    let epoch = &report.entries[1];
    assert!(splr.initial_h < 0.6, "splr initial h = {}", splr.initial_h);
    assert!(splr.mean_final_q < epoch.mean_final_q);
}

#[test]
fn epoch_decay_forgets_a_good_initialization_in_one_step() {
    // One large step from a near-optimal start inflates q: the mini-batch
    // noise dominates when the gradient is nearly zero.
    let problem = centroid2(200, 6);
    let oracle = MiniBatchOracle::new(20, Sampling::WithoutReplacement, 0);
    let e = Experiment {
        source: GradientSource::MiniBatch(oracle),
        policies: vec![("epoch".into(), StepPolicy::epoch_decay(0.6, 6.0, 100))],
        seeds: (1..=20).collect(),
        base_config: RunConfig::new(
            1,
            0,
            problem.x_star().unwrap().iter().map(|v| v + 1e-6).collect(),
        ),
        problem: problem.clone(),
    };
    let q0 = problem.q(&e.base_config.x0).unwrap();
    let curves = run_experiment(&e).unwrap();
    assert!(curves[0].1.final_mean_q().unwrap() > q0);
}

#[test]
fn aggregate_csv_round_trips_and_handles_empty_curves() {
    let e = single_policy_experiment(vec![1, 2]);
    let curves = run_experiment(&e).unwrap();
    let csv = aggregate_to_csv(&curves[0].1);
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "k,mean_q,se_q,min_q,max_q,mean_f_excess"
    );
    let first = lines.next().unwrap();
    let cols: Vec<&str> = first.split(',').collect();
    assert_eq!(cols[1].parse::<f64>().unwrap(), curves[0].1.mean_q[0]);

    let empty = AggregateCurve {
        ks: vec![],
        mean_q: vec![],
        se_q: vec![],
        min_q: vec![],
        max_q: vec![],
        mean_f_excess: vec![],
        bound: None,
        n_seeds: 0,
        errors: vec![],
    };
    assert_eq!(
        aggregate_to_csv(&empty),
        "k,mean_q,se_q,min_q,max_q,mean_f_excess\n"
    );
}

#[test]
fn bound_column_appears_for_splr() {
    let problem = centroid2(100, 7);
    let oracle = MiniBatchOracle::new(10, Sampling::WithoutReplacement, 0);
    let e = Experiment {
        source: GradientSource::MiniBatch(oracle),
        policies: vec![(
            "splr".into(),
            StepPolicy::polyak_stochastic(problem.f_star(), 1)
                .with_caps(StepPolicy::default_splr_caps(problem.mu())),
        )],
        seeds: vec![1, 2, 3],
        base_config: RunConfig::new(20, 0, vec![1.0, 1.0]),
        problem,
    };
    let curves = run_experiment(&e).unwrap();
    let c = &curves[0].1;
    let bound = c.bound.as_ref().expect("splr has a bound");
    assert_eq!(bound.len(), c.ks.len());
    // bound at k=0 equals q0
    let q0 = e.problem.q(&e.base_config.x0).unwrap();
    assert!((bound[0] - q0).abs() < 1e-15);
    let csv = aggregate_to_csv(c);
    assert!(csv.starts_with("k,mean_q,se_q,min_q,max_q,mean_f_excess,bound\n"));
}

#[test]
fn csv_export_is_bit_stable() {
    let e = single_policy_experiment(vec![3, 9]);
    let a = aggregate_to_csv(&run_experiment(&e).unwrap()[0].1);
    let b = aggregate_to_csv(&run_experiment(&e).unwrap()[0].1);
    assert_eq!(a, b);
}

#[test]
fn svg_renderers_produce_wellformed_documents() {
    let e = single_policy_experiment(vec![1, 2]);
    let curves = run_experiment(&e).unwrap();
    let doc = svg::curves_svg(&curves);
    assert!(doc.starts_with("<svg"));
    assert!(doc.ends_with("</svg>\n"));

    let problem = centroid2(30, 8);
    let grid = GridSpec {
        resolution: 11,
        ..Default::default()
    };
    let map = heatmap_h(&problem, &StepPolicy::polyak(problem.f_star()), &grid, None).unwrap();
    let f: Vec<f64> = map
        .ys
        .iter()
        .flat_map(|&y| {
            let problem = &problem;
            let xs = &map.xs;
            xs.iter()
                .map(move |&x| problem.full_value(&[x, y]).unwrap())
        })
        .collect();
    let doc = svg::heatmap_svg(&map, &f, 6);
    assert!(doc.contains("<rect"));
    assert!(doc.contains("<line"));
}
