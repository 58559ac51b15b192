use std::sync::Arc;

use super::*;
use crate::problems::ForwardMap;

fn constant_problem(c: f64) -> ProblemSpec<f64> {
    ProblemSpec {
        name: "const".into(),
        m: 1,
        d: 1,
        horizon: 1.0,
        domain: vec![(-1.0, 1.0)],
        driver: Arc::new(move |_t: f64, _x: &[f64], _y: &[f64], _z: &[f64], out: &mut [f64]| {
            out[0] = 0.0;
        }),
        terminal: Arc::new(move |_x: &[f64], out: &mut [f64]| out[0] = c),
        analytic: None,
        transform: ForwardMap::identity(1),
        smoothing: false,
        kink: None,
        eval_point: vec![0.0],
    }
}

#[test]
fn constant_solution_is_a_fixed_point() {
    let problem = constant_problem(0.7);
    for (ky, kz) in [(1, 1), (2, 3), (3, 3), (4, 2), (6, 6)] {
        let mut cfg = SolverConfig::new(ky, kz, 8);
        cfg.grid_intervals = Some(8);
        cfg.gh_points = 4;
        let res = solve_backward(&problem, &cfg).unwrap();
        assert!(
            (res.y0[0] - 0.7).abs() < 1e-12,
            "K=({ky},{kz}): y0 = {}",
            res.y0[0]
        );
        assert!(res.z0[0].abs() < 1e-12, "K=({ky},{kz}): z0 = {}", res.z0[0]);
        // zero driver: the Picard fixed point is hit on the first sweep
        assert_eq!(res.picard.max_iterations, 1);
        assert_eq!(res.picard.non_converged, 0);
    }
}

#[test]
fn layer_build_counter_and_eval_index() {
    let problem = constant_problem(1.0);
    let mut cfg = SolverConfig::new(3, 3, 10);
    cfg.grid_intervals = Some(8);
    cfg.gh_points = 4;
    let res = solve_backward(&problem, &cfg).unwrap();
    // layers 7..1 each build a y-set and a z-set; layer 0 builds none
    assert_eq!(res.main_layer_builds, 14);
    assert_eq!(res.eval_index, vec![4]);
    assert_eq!(res.n_intervals, 8);
    assert!(res.timings.total_s > 0.0);
}

#[test]
fn rejects_bad_step_configs() {
    let problem = constant_problem(1.0);
    assert!(solve_backward(&problem, &SolverConfig::new(0, 1, 8)).is_err());
    assert!(solve_backward(&problem, &SolverConfig::new(1, 7, 8)).is_err());
    // N below the step count leaves no layer to compute
    assert!(solve_backward(&problem, &SolverConfig::new(4, 4, 3)).is_err());
    let mut cfg = SolverConfig::new(1, 1, 8);
    cfg.grid_intervals = Some(2);
    assert!(solve_backward(&problem, &cfg).is_err());
    cfg.grid_intervals = Some(100);
    cfg.point_cap = 50;
    assert!(matches!(
        solve_backward(&problem, &cfg),
        Err(Error::ResourceLimit(_))
    ));
}

#[test]
fn picard_step_matches_closed_form() {
    // driver f = -y with K_y = 1 has the fixed point
    // y (1 + dt/2) = ey + (dt/2) ef
    let problem = ProblemSpec {
        driver: Arc::new(|_t: f64, _x: &[f64], y: &[f64], _z: &[f64], out: &mut [f64]| {
            out[0] = -y[0];
        }),
        ..constant_problem(0.0)
    };
    let w = scheme_weights(1, 1).unwrap();
    let bundle = CondExpBundle {
        m: 1,
        d: 1,
        ky: 1,
        kz: 1,
        ey_far: vec![0.9],
        ef: vec![-0.9],
        ez: vec![0.0],
        efdw: vec![0.0],
    };
    let dt = 0.25;
    let (y, iters) = step_y_picard(
        &bundle, &w, &[0.0], &problem, 0.0, &[0.0], dt, 30, 1e-15,
    )
    .unwrap();
    let expected = (0.9 + 0.5 * dt * (-0.9)) / (1.0 + 0.5 * dt);
    assert!((y[0] - expected).abs() < 1e-14, "y = {}, want {expected}", y[0]);
    assert!(iters > 1 && iters < 30, "iters = {iters}");
}

#[test]
fn z_step_matches_hand_rollout() {
    // K_z = 2: z = (ez1 + g1 (efdw1 - ez1) + g2 (efdw2 - ez2)) / g0
    let w = scheme_weights(1, 2).unwrap();
    let bundle: CondExpBundle<f64> = CondExpBundle {
        m: 1,
        d: 1,
        ky: 1,
        kz: 2,
        ey_far: vec![0.0],
        ef: vec![0.0],
        ez: vec![0.3, 0.1],
        efdw: vec![0.05, -0.02],
    };
    let z = step_z(&bundle, &w).unwrap();
    let expected = (0.3 + (2.0 / 3.0) * (0.05 - 0.3) + (-1.0 / 12.0) * (-0.02 - 0.1)) / (5.0 / 12.0);
    assert!((z[0] - expected).abs() < 1e-15, "z = {}, want {expected}", z[0]);

    // mismatched weights are rejected
    assert!(step_z(&bundle, &scheme_weights(1, 1).unwrap()).is_err());
}

#[test]
fn expectations_match_quadrature_identities() {
    // layer values y = x^2, z = 3x + 1; pure Brownian transport gives
    // E[y(X)] = x^2 + 2 k dt * Var-half = x^2 + k dt, E[z(X)] = 3x + 1,
    // and E[f dW] = 0 for f constant.
    let problem = ProblemSpec {
        driver: Arc::new(|_t: f64, _x: &[f64], _y: &[f64], _z: &[f64], out: &mut [f64]| {
            out[0] = 1.0;
        }),
        domain: vec![(-8.0, 8.0)],
        ..constant_problem(0.0)
    };
    let grid = SpaceGrid::new(&problem.domain, 257).unwrap();
    let points = grid.total_points();
    let mut lv = LayerValues::zeros(1, 1, 1, points);
    for p in 0..points {
        let x = grid.knot(0, p);
        lv.y[p] = x * x;
        lv.z[p] = 3.0 * x + 1.0;
    }
    let interp = build_layer_interp(&lv, &grid).unwrap();
    let mut history = SplineHistory::new(2).unwrap();
    history.push(interp.clone());
    history.push(interp);

    let rule = hermite_rule::<f64>(16).unwrap();
    let tensor = TensorRule::new(&rule, 1).unwrap();
    let w = scheme_weights(2, 1).unwrap();
    let dt = 0.01;
    let i = grid.nearest_index(&[1.0]);
    let b = conditional_expectations(&history, &tensor, &grid, &i, &w, &problem, 0.0, dt).unwrap();
    let x = grid.knot(0, i[0]);
    assert!((b.ey_far[0] - (x * x + 2.0 * dt)).abs() < 1e-9, "ey = {}", b.ey_far[0]);
    assert!((b.ef[0] - 1.0).abs() < 1e-12);
    assert!((b.ef[1] - 1.0).abs() < 1e-12);
    assert!((b.ez[0] - (3.0 * x + 1.0)).abs() < 1e-9, "ez = {}", b.ez[0]);
    assert!(b.efdw[0].abs() < 1e-12, "efdw = {}", b.efdw[0]);

    // short history is refused
    let short = SplineHistory::<LayerInterp<f64>>::new(2).unwrap();
    assert!(matches!(
        conditional_expectations(&short, &tensor, &grid, &i, &w, &problem, 0.0, dt),
        Err(Error::InsufficientData(_))
    ));
}

#[test]
fn bootstrap_layers_track_the_closed_form() {
    let problem = ProblemSpec::<f64>::by_name("ex1").unwrap();
    let n = 64;
    let k = 3;
    let tg = build_time_grid(0.0, problem.horizon, n).unwrap();
    let grid = SpaceGrid::new(&problem.domain, 2049).unwrap();
    let rule = hermite_rule::<f64>(32).unwrap();
    let tensor = TensorRule::new(&rule, 1).unwrap();
    let layers =
        bootstrap_initial_layers(&problem, &tg, &grid, k, &tensor, 30, 1e-14, None, 1 << 20, 1)
            .unwrap();
    assert_eq!(layers.len(), k);
    let analytic = problem.analytic.as_ref().unwrap();
    let p = grid.flat_index(&grid.nearest_index(&[0.0]));
    for (idx, lv) in layers.iter().enumerate() {
        assert_eq!(lv.layer, n - k + 1 + idx);
        let t = tg.time(lv.layer);
        let (y_ref, z_ref) = analytic(t, &[0.0]);
        assert!(
            (lv.y[p] - y_ref[0]).abs() < 1e-5,
            "layer {}: y = {}, want {}",
            lv.layer,
            lv.y[p],
            y_ref[0]
        );
        assert!(
            (lv.z[p] - z_ref[0]).abs() < 1e-4,
            "layer {}: z = {}, want {}",
            lv.layer,
            lv.z[p],
            z_ref[0]
        );
    }
    // ascending layer order, terminal last
    assert_eq!(layers.last().unwrap().layer, n);
    assert_eq!(layers[0].layer, n - k + 1);
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let problem = ProblemSpec::<f64>::by_name("ex1").unwrap();
    let mut cfg = SolverConfig::new(3, 3, 16);
    cfg.grid_intervals = Some(128);
    cfg.gh_points = 8;
    let mut runs = Vec::new();
    for threads in [1usize, 2, 8] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let res = pool.install(|| solve_backward(&problem, &cfg)).unwrap();
        runs.push((res.y0[0].to_bits(), res.z0[0].to_bits()));
    }
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
}

#[test]
fn single_precision_instantiation_runs() {
    let problem = ProblemSpec::<f32>::by_name("ex1").unwrap();
    let mut cfg = SolverConfig::<f32>::new(2, 2, 16);
    cfg.grid_intervals = Some(256);
    cfg.gh_points = 8;
    cfg.picard_tol = 1e-6;
    let res = solve_backward(&problem, &cfg).unwrap();
    assert!((res.y0[0] - 0.5).abs() < 1e-2, "y0 = {}", res.y0[0]);
    assert!((res.z0[0] - 0.25).abs() < 5e-2, "z0 = {}", res.z0[0]);
}
