use mcam::refine::{
    ascend, fit_loss_gradient, fit_loss_value, fit_to_tabular, global_iterate, global_objective,
    kink_margin, max_abs_deviation, objective_gradient, BackupTarget, IterateConfig, PolicyNet,
    TrainConfig,
};
use mcam::solver::{
    bellman_backup, gain_of_policy, rvi_solve, Centering, RviConfig, RviVariant, TabularPolicy,
    ValueTable,
};
use mcam::{Control, Dynamics, Grid, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn random_coords(n: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.random_range(0..n)).collect()
}

fn smooth_values(grid: &Grid, regimes: usize) -> ValueTable {
    let mut v = ValueTable::zeros(grid, regimes);
    let n = grid.len();
    for l in 0..regimes {
        for k in 0..n {
            let x = grid.x(k);
            v.values[l * n + k] = (1.0 + 0.3 * l as f64) * (0.4 * x).tanh() + 0.01 * x;
        }
    }
    v
}

/// A net whose controls stay clear of every kink of `G` on `grid`.
fn smooth_net(p: &ModelParams, grid: &Grid) -> PolicyNet {
    (0..50)
        .map(|seed| PolicyNet::for_grid(p, grid, 16, seed))
        .find(|net| kink_margin(p, grid, net) > 1e-3)
        .expect("some seed avoids the kinks")
}

#[test]
fn fit_loss_gradient_matches_finite_differences() {
    let p = ModelParams::table1();
    let grid = Grid::for_model(&p, 0.5).unwrap();
    let policy = TabularPolicy::from_fn(&grid, 2, |x, l| {
        Control::new(0.5 + 0.04 * x.abs().min(10.0), 0.1 + 0.1 * l as f64, 0.3).canonical(x, &p)
    });
    let mut net = PolicyNet::for_grid(&p, &grid, 16, 3);
    let grad = fit_loss_gradient(&net, &p, &policy, &grid);
    for i in random_coords(net.param_count(), 12, 1) {
        let step = 1e-5;
        let orig = net.params()[i];
        net.params_mut()[i] = orig + step;
        let up = fit_loss_value(&net, &p, &policy, &grid);
        net.params_mut()[i] = orig - step;
        let down = fit_loss_value(&net, &p, &policy, &grid);
        net.params_mut()[i] = orig;
        let fd = (up - down) / (2.0 * step);
        assert!(
            rel_err(grad[i], fd) < 1e-5,
            "coordinate {i}: {} vs {fd}",
            grad[i]
        );
    }
}

#[test]
fn constant_policy_is_fitted_closely() {
    let p = ModelParams::table1();
    let grid = Grid::for_model(&p, 0.5).unwrap();
    let policy = TabularPolicy::constant(&grid, &p, Control::new(0.8, 0.2, 0.0));
    let mut net = PolicyNet::for_grid(&p, &grid, 16, 0);
    let report = fit_to_tabular(&mut net, &p, &policy, &grid, &TrainConfig::default()).unwrap();
    assert!(report.max_abs < 0.01, "max abs {}", report.max_abs);
    assert_eq!(report.max_abs, max_abs_deviation(&net, &p, &policy, &grid));
    assert!(report.losses.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn objective_with_zero_values_is_mean_reward_increment() {
    let p = ModelParams::table1();
    let grid = Grid::for_model(&p, 0.5).unwrap();
    let net = PolicyNet::for_grid(&p, &grid, 16, 1);
    let zero = ValueTable::zeros(&grid, 2);
    let target = BackupTarget::new(&zero, RviVariant::Paper, Centering::PerRegime, None);
    let policy = net.tabulate(&p, &grid);
    let mut total = 0.0;
    let mut count = 0.0;
    for l in 0..2 {
        for k in grid.interior() {
            let row = mcam::transitions(&p, &grid, k, l, &policy.get(k, l));
            total += p.coefficients(grid.x(k), l, &policy.get(k, l)).reward * row.dt;
            count += 1.0;
        }
    }
    let g = global_objective(&p, &grid, &net, &target);
    assert!(
        (g - total / count).abs() < 1e-12,
        "{g} vs {}",
        total / count
    );
}

#[test]
fn objective_shifts_with_the_value_table() {
    let p = ModelParams::table1();
    let grid = Grid::for_model(&p, 0.5).unwrap();
    let net = PolicyNet::for_grid(&p, &grid, 16, 2);
    let v = smooth_values(&grid, 2);
    let mut shifted = v.clone();
    shifted.values.iter_mut().for_each(|x| *x += 3.25);
    let a = BackupTarget::new(&v, RviVariant::SemiMdp, Centering::PerRegime, Some(0.2));
    let b = BackupTarget::new(
        &shifted,
        RviVariant::SemiMdp,
        Centering::PerRegime,
        Some(0.2),
    );
    let ga = global_objective(&p, &grid, &net, &a);
    let gb = global_objective(&p, &grid, &net, &b);
    assert!((gb - ga - 3.25).abs() < 1e-12);
}

#[test]
fn objective_agrees_with_the_solver_backup() {
    let p = ModelParams::table1();
    let grid = Grid::for_model(&p, 0.5).unwrap();
    let net = PolicyNet::for_grid(&p, &grid, 16, 4);
    let v = smooth_values(&grid, 2);
    let target = BackupTarget::new(&v, RviVariant::Paper, Centering::PerRegime, None);
    let policy = net.tabulate(&p, &grid);
    let centered = v.centered(Centering::PerRegime);
    let mut total = 0.0;
    let mut count = 0.0;
    for l in 0..2 {
        for k in grid.interior() {
            total += bellman_backup(&p, &grid, &centered, k, l, &policy.get(k, l));
            count += 1.0;
        }
    }
    let g = global_objective(&p, &grid, &net, &target);
    assert!((g - total / count).abs() < 1e-9, "{g} vs {}", total / count);
}

#[test]
fn objective_gradient_matches_finite_differences() {
    let p = ModelParams::table1();
    let grid = Grid::for_model(&p, 0.5).unwrap();
    let mut net = smooth_net(&p, &grid);
    let v = smooth_values(&grid, 2);
    for (variant, gain) in [(RviVariant::Paper, None), (RviVariant::SemiMdp, Some(0.25))] {
        let target = BackupTarget::new(&v, variant, Centering::PerRegime, gain);
        let (_, grad) = objective_gradient(&p, &grid, &net, &target);
        for i in random_coords(net.param_count(), 12, 9) {
            let step = 1e-5;
            let orig = net.params()[i];
            net.params_mut()[i] = orig + step;
            let up = global_objective(&p, &grid, &net, &target);
            net.params_mut()[i] = orig - step;
            let down = global_objective(&p, &grid, &net, &target);
            net.params_mut()[i] = orig;
            let fd = (up - down) / (2.0 * step);
            assert!(
                rel_err(grad[i], fd) < 1e-4,
                "{variant:?} coordinate {i}: {} vs {fd}",
                grad[i]
            );
        }
    }
}

#[test]
fn ascent_never_lowers_the_objective() {
    let p = ModelParams::table1();
    let grid = Grid::for_model(&p, 0.5).unwrap();
    let mut net = PolicyNet::for_grid(&p, &grid, 16, 5);
    let v = smooth_values(&grid, 2);
    let target = BackupTarget::new(&v, RviVariant::Paper, Centering::PerRegime, None);
    let config = TrainConfig {
        ascent_epochs: 200,
        ..Default::default()
    };
    let report = ascend(&p, &grid, &mut net, &target, &config).unwrap();
    assert!(report.objective.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(
        *report.objective.last().unwrap(),
        global_objective(&p, &grid, &net, &target)
    );
}

#[test]
fn single_control_converges_in_one_round() {
    let mut p = ModelParams::table1();
    p.min_retention = 1.0;
    p.max_risky = 0.0;
    p.min_dividend = 1.0;
    let coarse = Grid::new(4.0, 0.5, 2.0).unwrap();
    let fine = Grid::new(4.0, 0.25, 2.0).unwrap();
    p.boundary = 4.0;
    let config = IterateConfig {
        train: TrainConfig {
            width: 8,
            fit_epochs: 50,
            ascent_epochs: 50,
            ..Default::default()
        },
        ..Default::default()
    };
    let out = global_iterate(&p, &coarse, &fine, &config).unwrap();
    assert!(out.converged);
    let forced = TabularPolicy::constant(&fine, &p, Control::new(1.0, 0.0, 0.0));
    let gain = gain_of_policy(&p, &fine, &forced).unwrap().gamma;
    assert!((out.gain.gamma - gain).abs() < 1e-10);
    // round 2 only confirms that nothing moved
    assert!(out.rounds.len() <= 2, "{} rounds", out.rounds.len());
    assert!(out.rounds[0].value_change > 0.0);
}

#[test]
fn zero_round_limit_is_rejected() {
    let p = ModelParams::table1();
    let coarse = Grid::for_model(&p, 0.5).unwrap();
    let fine = Grid::for_model(&p, 0.25).unwrap();
    let config = IterateConfig {
        max_rounds: 0,
        ..Default::default()
    };
    assert!(global_iterate(&p, &coarse, &fine, &config).is_err());
    assert!(config.validate_at("refine.").unwrap_err()[0].starts_with("refine.max_rounds"));
}

#[test]
fn misaligned_grids_are_rejected() {
    let p = ModelParams::table1();
    let coarse = Grid::for_model(&p, 0.5).unwrap();
    let fine = Grid::for_model(&p, 0.2).unwrap();
    assert!(global_iterate(&p, &coarse, &fine, &IterateConfig::default()).is_err());
}

#[test]
fn checkpoint_json_restores_the_policy_exactly() {
    let p = ModelParams::table1();
    let grid = Grid::for_model(&p, 0.5).unwrap();
    let net = PolicyNet::for_grid(&p, &grid, 16, 7);
    let back = PolicyNet::from_json(&net.to_json()).unwrap();
    assert_eq!(back, net);
    assert_eq!(back.tabulate(&p, &grid), net.tabulate(&p, &grid));
}

#[test]
fn coarse_policy_is_fitted_within_tolerance() {
    let p = ModelParams::table1();
    let grid = Grid::for_model(&p, 0.5).unwrap();
    let rvi = rvi_solve(
        &p,
        &grid,
        &RviConfig {
            variant: RviVariant::SemiMdp,
            ..Default::default()
        },
    )
    .unwrap();
    let mut net = PolicyNet::for_grid(&p, &Grid::for_model(&p, 0.1).unwrap(), 64, 0);
    let report = fit_to_tabular(&mut net, &p, &rvi.policy, &grid, &TrainConfig::default()).unwrap();
    assert!(report.max_abs <= 0.05, "max abs {}", report.max_abs);
}
