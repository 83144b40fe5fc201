//! Cross-checks against slow, independent reference computations.

use dshape_core::model::{ContinuousDa, DiscreteDa, Scenario, TimeGrid, TrafficProfile};
use dshape_core::subproblems::{project_box_budget, project_simplex_ls};
use dshape_core::{
    equilibrium_check, feasible_windows, offds_run, rods_solve, variance_objective, AlgoParams, BaseTrafficModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Water level `c` with `Σ clip(c − load, lo, hi) = budget`, by plain bisection.
fn fill_against(load: &[f64], lo: &[f64], hi: &[f64], budget: f64) -> Vec<f64> {
    let total = |c: f64| -> f64 { (0..load.len()).map(|i| (c - load[i]).clamp(lo[i], hi[i])).sum() };
    let (mut a, mut b) = (-1e6, 1e6);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if total(m) < budget {
            a = m;
        } else {
            b = m;
        }
    }
    let c = 0.5 * (a + b);
    (0..load.len()).map(|i| (c - load[i]).clamp(lo[i], hi[i])).collect()
}

/// Exact optimum of the integer problem with one continuous DA: every
/// combination of discrete placements, each completed by the optimal fill.
fn brute_force_optimum(s: &Scenario, base: &[f64]) -> f64 {
    let sets: Vec<_> = s
        .discrete_das
        .iter()
        .map(|d| feasible_windows(d, 0, s.grid).unwrap())
        .collect();
    let n = s.population() as f64;
    let mut best = f64::INFINITY;
    let combos: usize = sets.iter().map(|s| s.len()).product();
    for mut code in 0..combos {
        let mut load = base.to_vec();
        for set in &sets {
            let a = code % set.len();
            code /= set.len();
            for (l, v) in load.iter_mut().zip(set.vertex(a).iter()) {
                *l += v;
            }
        }
        for c in &s.continuous_das {
            let p = fill_against(&load, &c.lower, &c.upper, c.budget);
            for (l, v) in load.iter_mut().zip(&p) {
                *l += v;
            }
        }
        let d: Vec<f64> = load.iter().map(|x| x / n).collect();
        best = best.min(variance_objective(&d));
    }
    best
}

fn tiny_instance(rng: &mut ChaCha8Rng) -> (Scenario, Vec<f64>) {
    let slots = 6;
    let grid = TimeGrid::new(slots);
    let base: Vec<f64> = (0..slots).map(|_| rng.random_range(0.0..10.0)).collect();
    let arrival = rng.random_range(0..2);
    let deadline = rng.random_range(arrival + 2..slots);
    let cap = rng.random_range(1.0..4.0);
    let budget = rng.random_range(0.5..1.0) * cap * (deadline - arrival + 1) as f64;
    let continuous = vec![ContinuousDa::with_rate_cap(0, arrival, deadline, budget, cap, grid)];
    let discrete = (0..rng.random_range(1..=2))
        .map(|i| {
            let length = rng.random_range(1..=3);
            let arrival = rng.random_range(0..=slots - length);
            let placements = rng.random_range(1..=3).min(slots - arrival - length + 1);
            DiscreteDa {
                id: 1 + i,
                arrival,
                deadline: arrival + length + placements - 1,
                rate: rng.random_range(1.0..5.0),
                length,
            }
        })
        .collect();
    let s = Scenario {
        grid,
        base: BaseTrafficModel::noiseless(TrafficProfile::new(base.clone()).unwrap()),
        continuous_das: continuous,
        discrete_das: discrete,
        arrivals: None,
        algo: AlgoParams::default(),
        seed: 0,
    };
    (s, base)
}

#[test]
fn relaxed_optimum_bounds_the_integer_optimum_which_bounds_the_randomized_runs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..25 {
        let (s, base) = tiny_instance(&mut rng);
        let relaxed = rods_solve(&s, &base, 1e-12, 200_000).unwrap();
        let exact = brute_force_optimum(&s, &base);
        let best_run = (0..20)
            .map(|seed| offds_run(&s, &base, 30, seed).unwrap().objective())
            .fold(f64::INFINITY, f64::min);
        let slack = 1e-12 * exact.max(1.0);
        assert!(relaxed.objective <= exact + slack, "{} > {exact}", relaxed.objective);
        assert!(exact <= best_run + slack, "{exact} > {best_run}");
        assert!(equilibrium_check(&relaxed.state, &s, 1e-8).satisfied);
    }
}

#[test]
fn simplex_fit_matches_grid_search_for_small_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid = TimeGrid::new(8);
    for _ in 0..200 {
        let length = rng.random_range(1..=3);
        let arrival = rng.random_range(0..=8 - length);
        let placements = rng.random_range(1..=3).min(8 - arrival - length + 1);
        let da = DiscreteDa {
            id: 0,
            arrival,
            deadline: arrival + length + placements - 1,
            rate: 3.0,
            length,
        };
        let set = feasible_windows(&da, 0, grid).unwrap();
        let target: Vec<f64> = (0..8).map(|_| rng.random_range(-4.0..6.0)).collect();
        let objective = |u: &[f64]| -> f64 {
            set.combine(u).iter().zip(&target).map(|(p, y)| (p - y).powi(2)).sum()
        };
        let solved = project_simplex_ls(&set, &target, 1e-10, 500).unwrap();
        // Grid over the simplex with step 1/400.
        let steps = 400;
        let mut best = f64::INFINITY;
        let mut best_u = vec![];
        match set.len() {
            1 => {
                best = objective(&[1.0]);
                best_u = vec![1.0];
            }
            2 => {
                for i in 0..=steps {
                    let u = [i as f64 / steps as f64, 1.0 - i as f64 / steps as f64];
                    let v = objective(&u);
                    if v < best {
                        best = v;
                        best_u = u.to_vec();
                    }
                }
            }
            _ => {
                for i in 0..=steps {
                    for j in 0..=steps - i {
                        let u = [
                            i as f64 / steps as f64,
                            j as f64 / steps as f64,
                            (steps - i - j) as f64 / steps as f64,
                        ];
                        let v = objective(&u);
                        if v < best {
                            best = v;
                            best_u = u.to_vec();
                        }
                    }
                }
            }
        }
        assert!(objective(solved.as_slice()) <= best + 1e-9);
        for (a, b) in solved.as_slice().iter().zip(&best_u) {
            assert!((a - b).abs() <= 1e-3 + 1.0 / steps as f64, "{:?} vs {best_u:?}", solved.as_slice());
        }
    }
}

#[test]
fn box_projection_matches_plain_bisection() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..500 {
        let n = rng.random_range(1..20);
        let lo: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.5)).collect();
        let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.0..3.0)).collect();
        let budget = rng.random_range(lo.iter().sum::<f64>()..=hi.iter().sum::<f64>());
        let target: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let neg: Vec<f64> = target.iter().map(|t| -t).collect();
        let reference = fill_against(&neg, &lo, &hi, budget);
        let p = project_box_budget(&target, &lo, &hi, budget, 1e-10).unwrap();
        for (a, b) in p.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
