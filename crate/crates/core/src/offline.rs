//! Offline scheduling with complete information: the randomized distributed
//! loop, its relaxed deterministic counterpart, and equilibrium checks.

use serde::{Deserialize, Serialize};

use crate::engine::{Blocks, ContinuousBlock, DiscreteBlock, Horizon, TracePoint, VirtualTrafficMode};
use crate::error::{Error, Result};
use crate::metrics::{offline_bound, variance_objective};
use crate::model::{feasible_windows, Da, FeasibleSet, Scenario, SimplexWeights};
use crate::subproblems::{box_budget_linear_min, project_box_budget, project_simplex_ls};

/// Whether discrete DAs hold a sampled vertex or a relaxed convex combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Sampled,
    Relaxed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaSchedule {
    pub id: u32,
    pub discrete: bool,
    /// Full-length rate profile.
    pub profile: Vec<f64>,
    /// Latest convex-combination weights over the start slots of a discrete DA.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Sampled start slot of a discrete DA.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub kind: ScheduleKind,
    pub iteration: usize,
    pub base: Vec<f64>,
    /// Continuous DAs first, then discrete, in scenario order.
    pub schedules: Vec<DaSchedule>,
    /// `d = (b + Σ p_n)/N`.
    pub average: Vec<f64>,
}

/// `(b + Σ p_n)/N`, summing the profiles in the order given.
pub fn average_profile<'a>(base: &[f64], profiles: impl IntoIterator<Item = &'a [f64]>, population: usize) -> Vec<f64> {
    let mut agg = base.to_vec();
    for p in profiles {
        for (a, x) in agg.iter_mut().zip(p) {
            *a += x;
        }
    }
    let n = population.max(1) as f64;
    agg.iter().map(|a| a / n).collect()
}

impl ScheduleState {
    pub fn slots(&self) -> usize {
        self.base.len()
    }

    pub fn population(&self) -> usize {
        self.schedules.len()
    }

    pub fn objective(&self) -> f64 {
        variance_objective(&self.average)
    }

    pub fn aggregate(&self) -> Vec<f64> {
        let n = self.population().max(1) as f64;
        self.average.iter().map(|d| d * n).collect()
    }

    pub fn discrete_profiles(&self) -> impl Iterator<Item = &[f64]> {
        self.schedules
            .iter()
            .filter(|s| s.discrete)
            .map(|s| s.profile.as_slice())
    }

    /// The rounding bound `(2/(T N²)) Σ_discrete ‖p_n‖²` at this state.
    pub fn offline_bound(&self) -> f64 {
        offline_bound(self.slots(), self.population(), self.discrete_profiles())
    }

    fn from_blocks(blocks: &Blocks, base: &[f64], iteration: usize) -> Self {
        let slots = base.len();
        let mut schedules = Vec::with_capacity(blocks.continuous.len() + blocks.discrete.len());
        for b in &blocks.continuous {
            let mut profile = vec![0.0; slots];
            profile[b.range.clone()].copy_from_slice(&b.profile);
            schedules.push(DaSchedule {
                id: b.id,
                discrete: false,
                profile,
                weights: None,
                start: None,
            });
        }
        for b in &blocks.discrete {
            schedules.push(DaSchedule {
                id: b.id,
                discrete: true,
                profile: b.set.vertex(b.choice).into_inner(),
                weights: Some(b.weights.as_slice().to_vec()),
                start: Some(b.start()),
            });
        }
        let average = average_profile(base, schedules.iter().map(|s| s.profile.as_slice()), schedules.len());
        Self {
            kind: ScheduleKind::Sampled,
            iteration,
            base: base.to_vec(),
            schedules,
            average,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub seed: u64,
    /// `V(d^k)` for `k = 0..=K`.
    pub points: Vec<TracePoint>,
    pub state: ScheduleState,
}

impl RunTrace {
    pub fn objective(&self) -> f64 {
        self.state.objective()
    }
}

fn check_base(scenario: &Scenario, base: &[f64]) -> Result<()> {
    if base.len() != scenario.grid.slots {
        return Err(Error::LengthMismatch {
            expected: scenario.grid.slots,
            found: base.len(),
        });
    }
    Ok(())
}

fn feasible_sets(scenario: &Scenario) -> Result<Vec<FeasibleSet>> {
    scenario
        .discrete_das
        .iter()
        .map(|da| feasible_windows(da, 0, scenario.grid))
        .collect()
}

fn initial_blocks(scenario: &Scenario, seed: u64) -> Result<Blocks> {
    let tol = scenario.algo.bisection_tol;
    let continuous = scenario
        .continuous_das
        .iter()
        .map(|da| ContinuousBlock::new(da, 0, da.budget, None, tol))
        .collect::<Result<_>>()?;
    let discrete = scenario
        .discrete_das
        .iter()
        .zip(feasible_sets(scenario)?)
        .map(|(da, set)| DiscreteBlock::sampled(da.id, set, seed, 0))
        .collect();
    Ok(Blocks { continuous, discrete })
}

fn blocks_from_state(scenario: &Scenario, state: &ScheduleState) -> Result<Blocks> {
    if state.population() != scenario.population() {
        return Err(Error::LengthMismatch {
            expected: scenario.population(),
            found: state.population(),
        });
    }
    let tol = scenario.algo.bisection_tol;
    let (cont, disc) = state.schedules.split_at(scenario.continuous_das.len());
    let continuous = scenario
        .continuous_das
        .iter()
        .zip(cont)
        .map(|(da, s)| ContinuousBlock::new(da, 0, da.budget, Some(&s.profile), tol))
        .collect::<Result<_>>()?;
    let discrete = scenario
        .discrete_das
        .iter()
        .zip(disc)
        .zip(feasible_sets(scenario)?)
        .map(|((da, s), set)| {
            let start = s.start.ok_or_else(|| Error::Invalid(format!("DA {} has no sampled start", da.id)))?;
            let choice = set
                .index_of_start(start)
                .ok_or_else(|| Error::Invalid(format!("DA {} start {start} is infeasible", da.id)))?;
            let weights = SimplexWeights::indicator(set.len(), choice);
            Ok(DiscreteBlock::with_choice(da.id, set, weights, choice))
        })
        .collect::<Result<_>>()?;
    Ok(Blocks { continuous, discrete })
}

fn horizon<'a>(scenario: &Scenario, base: &'a [f64], seed: u64) -> Horizon<'a> {
    Horizon {
        from: 0,
        fixed: base,
        population: scenario.population(),
        virtual_total: 0.0,
        virtual_mode: VirtualTrafficMode::Nonnegative,
        seed,
        stream_slot: 0,
        params: scenario.algo,
    }
}

/// `p^0`: continuous budgets spread evenly over their windows and projected;
/// each discrete DA at a uniformly drawn start slot.
pub fn initial_profiles(scenario: &Scenario, base: &[f64], seed: u64) -> Result<ScheduleState> {
    check_base(scenario, base)?;
    Ok(ScheduleState::from_blocks(&initial_blocks(scenario, seed)?, base, 0))
}

/// Runs `iterations` rounds of the randomized distributed scheduler from `p^0`.
pub fn offds_run(scenario: &Scenario, base: &[f64], iterations: usize, seed: u64) -> Result<RunTrace> {
    check_base(scenario, base)?;
    let mut blocks = initial_blocks(scenario, seed)?;
    let h = horizon(scenario, base, seed);
    let mut points = Vec::with_capacity(iterations + 1);
    blocks.iterate(&h, iterations, &mut points)?;
    let done = points.len() - 1;
    Ok(RunTrace {
        seed,
        points,
        state: ScheduleState::from_blocks(&blocks, base, done),
    })
}

/// One round from an arbitrary sampled state, drawing with the streams of
/// iteration `state.iteration` under `seed`.
pub fn offds_step(scenario: &Scenario, state: &ScheduleState, seed: u64) -> Result<ScheduleState> {
    let mut blocks = blocks_from_state(scenario, state)?;
    let h = horizon(scenario, &state.base, seed);
    let (d, _) = blocks.average(&h);
    blocks.update(&d, &h, state.iteration)?;
    Ok(ScheduleState::from_blocks(&blocks, &state.base, state.iteration + 1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedSolution {
    pub state: ScheduleState,
    pub objective: f64,
    /// Upper bound on `objective − optimum` from the linearized problem.
    pub certified_gap: f64,
    pub sweeps: usize,
}

/// Solves the convex relaxation (discrete DAs over the convex hull of their
/// placements) by cyclic exact block minimization until no profile entry
/// moves by more than `tol`.
pub fn rods_solve(scenario: &Scenario, base: &[f64], tol: f64, max_sweeps: usize) -> Result<RelaxedSolution> {
    check_base(scenario, base)?;
    let slots = scenario.grid.slots;
    let btol = scenario.algo.bisection_tol;
    let sets = feasible_sets(scenario)?;
    let mut profiles: Vec<Vec<f64>> = Vec::with_capacity(scenario.population());
    let mut weights: Vec<Vec<f64>> = Vec::with_capacity(sets.len());
    for da in &scenario.continuous_das {
        let block = ContinuousBlock::new(da, 0, da.budget, None, btol)?;
        let mut p = vec![0.0; slots];
        p[block.range.clone()].copy_from_slice(&block.profile);
        profiles.push(p);
    }
    for set in &sets {
        let u = vec![1.0 / set.len() as f64; set.len()];
        profiles.push(set.combine(&u));
        weights.push(u);
    }
    let n_cont = scenario.continuous_das.len();
    let mut agg = base.to_vec();
    for p in &profiles {
        for (a, x) in agg.iter_mut().zip(p) {
            *a += x;
        }
    }

    let mut sweeps = 0;
    let mut change = f64::INFINITY;
    while sweeps < max_sweeps {
        sweeps += 1;
        change = 0.0f64;
        for i in 0..profiles.len() {
            let others: Vec<f64> = agg.iter().zip(&profiles[i]).map(|(a, p)| a - p).collect();
            let next = if i < n_cont {
                let da = &scenario.continuous_das[i];
                let w = da.window();
                let target: Vec<f64> = others[w.clone()].iter().map(|x| -x).collect();
                let local = project_box_budget(&target, &da.lower[w.clone()], &da.upper[w.clone()], da.budget, btol)?;
                let mut p = vec![0.0; slots];
                p[w].copy_from_slice(&local);
                p
            } else {
                let set = &sets[i - n_cont];
                let target: Vec<f64> = others.iter().map(|x| -x).collect();
                let u = project_simplex_ls(set, &target, scenario.algo.simplex_tol, scenario.algo.simplex_max_iters)?;
                let p = set.combine(u.as_slice());
                weights[i - n_cont] = u.as_slice().to_vec();
                p
            };
            for t in 0..slots {
                change = change.max((next[t] - profiles[i][t]).abs());
                agg[t] = others[t] + next[t];
            }
            profiles[i] = next;
        }
        if change <= tol {
            break;
        }
    }

    let population = profiles.len();
    let average = average_profile(base, profiles.iter().map(|p| p.as_slice()), population);
    let mut schedules = Vec::with_capacity(population);
    for (i, profile) in profiles.into_iter().enumerate() {
        let (id, discrete) = if i < n_cont {
            (scenario.continuous_das[i].id, false)
        } else {
            (scenario.discrete_das[i - n_cont].id, true)
        };
        schedules.push(DaSchedule {
            id,
            discrete,
            profile,
            weights: discrete.then(|| weights[i - n_cont].clone()),
            start: None,
        });
    }
    let state = ScheduleState {
        kind: ScheduleKind::Relaxed,
        iteration: sweeps,
        base: base.to_vec(),
        schedules,
        average,
    };
    if change > tol {
        return Err(Error::MaxItersExceeded {
            solver: "relaxed block descent",
            iterations: sweeps,
            residual: change,
            best: Box::new(state.average.clone()),
        });
    }
    let report = equilibrium_check(&state, scenario, f64::INFINITY);
    let objective = state.objective();
    Ok(RelaxedSolution {
        state,
        objective,
        certified_gap: report.linearization_gap,
        sweeps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub satisfied: bool,
    /// Per DA: `⟨g_n, p_n⟩ − min_{p' ∈ S_n} ⟨g_n, p'⟩`, divided by `max(1, ‖g_n‖∞ · P_n)`.
    pub residuals: Vec<(u32, f64)>,
    pub max_residual: f64,
    /// `Σ_n` of the unscaled residuals against the full aggregate, times `2/(T N²)`:
    /// an upper bound on how far `V` is above the relaxed optimum.
    pub linearization_gap: f64,
}

/// Evaluates the variational inequalities that characterize a fixed point.
///
/// Continuous DAs, and every DA of a relaxed state, are tested against the
/// full aggregate `b + Σ_m p_m`. Discrete DAs of a sampled state are tested
/// against the aggregate of the others, `b + Σ_{m≠n} p_m`, over their
/// placements.
pub fn equilibrium_check(state: &ScheduleState, scenario: &Scenario, tol: f64) -> EquilibriumReport {
    let agg = state.aggregate();
    let slots = state.slots();
    let n = state.population().max(1) as f64;
    let das = scenario.das();
    let mut residuals = Vec::with_capacity(das.len());
    let mut linear_total = 0.0;
    for (da, s) in das.iter().zip(&state.schedules) {
        let dot = |g: &[f64], p: &[f64]| g.iter().zip(p).map(|(x, y)| x * y).sum::<f64>();
        let (full_gap, own_gap, scale) = match da {
            Da::Continuous(c) => {
                let min = box_budget_linear_min(&agg, &c.lower, &c.upper, c.budget);
                let gap = dot(&agg, &s.profile) - min;
                let gmax = agg.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                (gap, gap, gmax * c.budget)
            }
            Da::Discrete(d) => {
                let set = match feasible_windows(d, 0, scenario.grid) {
                    Ok(set) => set,
                    Err(_) => {
                        residuals.push((d.id, f64::INFINITY));
                        continue;
                    }
                };
                let full_min = set.inner_products(&agg).into_iter().fold(f64::INFINITY, f64::min);
                let full_gap = dot(&agg, &s.profile) - full_min;
                let gmax = agg.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                let own_gap = match state.kind {
                    ScheduleKind::Relaxed => full_gap,
                    ScheduleKind::Sampled => {
                        let others: Vec<f64> = (0..slots).map(|t| agg[t] - s.profile[t]).collect();
                        let min = set.inner_products(&others).into_iter().fold(f64::INFINITY, f64::min);
                        dot(&others, &s.profile) - min
                    }
                };
                (full_gap, own_gap, gmax * d.budget())
            }
        };
        linear_total += full_gap.max(0.0);
        residuals.push((da.id(), own_gap.max(0.0) / scale.max(1.0)));
    }
    let max_residual = residuals.iter().map(|r| r.1).fold(0.0, f64::max);
    EquilibriumReport {
        satisfied: max_residual <= tol,
        residuals,
        max_residual,
        linearization_gap: 2.0 * linear_total / (slots as f64 * n * n),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AlgoParams, ContinuousDa, DiscreteDa, TimeGrid, TrafficProfile};
    use crate::traffic::BaseTrafficModel;

    fn scenario(slots: usize, continuous: Vec<ContinuousDa>, discrete: Vec<DiscreteDa>) -> Scenario {
        Scenario {
            grid: TimeGrid::new(slots),
            base: BaseTrafficModel::noiseless(TrafficProfile::zeros(slots)),
            continuous_das: continuous,
            discrete_das: discrete,
            arrivals: None,
            algo: AlgoParams::default(),
            seed: 0,
        }
    }

    #[test]
    fn single_continuous_da_flattens_empty_base() {
        let grid = TimeGrid::new(4);
        let s = scenario(4, vec![ContinuousDa::with_rate_cap(0, 0, 3, 6.0, 3.0, grid)], vec![]);
        let p0 = initial_profiles(&s, &[0.0; 4], 1).unwrap();
        assert_eq!(p0.schedules[0].profile, vec![1.5; 4]);
        let run = offds_run(&s, &[0.0; 4], 30, 1).unwrap();
        assert_eq!(run.points.len(), 31);
        assert!(run.objective() < 1e-20);
    }

    #[test]
    fn single_discrete_da_moves_into_the_valley() {
        let da = DiscreteDa {
            id: 0,
            arrival: 0,
            deadline: 4,
            rate: 3.0,
            length: 2,
        };
        let s = scenario(5, vec![], vec![da]);
        let base = [9.0, 9.0, 0.0, 0.0, 9.0];
        for seed in 0..5 {
            let run = offds_run(&s, &base, 5, seed).unwrap();
            assert_eq!(run.state.schedules[0].start, Some(2));
        }
    }

    #[test]
    fn single_placement_is_the_initial_profile() {
        let da = DiscreteDa {
            id: 3,
            arrival: 1,
            deadline: 4,
            rate: 2.0,
            length: 3,
        };
        let s = scenario(6, vec![], vec![da]);
        let p0 = initial_profiles(&s, &[0.0; 6], 9).unwrap();
        assert_eq!(p0.schedules[0].profile, vec![0.0, 2.0, 2.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn runs_are_reproducible() {
        let grid = TimeGrid::new(12);
        let s = scenario(
            12,
            vec![ContinuousDa::with_rate_cap(0, 2, 9, 8.0, 3.0, grid)],
            vec![
                DiscreteDa { id: 1, arrival: 0, deadline: 12, rate: 3.0, length: 3 },
                DiscreteDa { id: 2, arrival: 4, deadline: 11, rate: 3.0, length: 2 },
            ],
        );
        let base: Vec<f64> = (0..12).map(|t| 5.0 + (t as f64).sin() * 4.0).collect();
        let a = offds_run(&s, &base, 20, 77).unwrap();
        let b = offds_run(&s, &base, 20, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn relaxed_and_randomized_agree_without_discrete_das() {
        let grid = TimeGrid::new(10);
        let s = scenario(
            10,
            vec![
                ContinuousDa::with_rate_cap(0, 0, 9, 10.0, 3.0, grid),
                ContinuousDa::with_rate_cap(1, 3, 7, 6.0, 2.0, grid),
            ],
            vec![],
        );
        let base: Vec<f64> = (0..10).map(|t| 8.0 + 3.0 * (t as f64 * 0.9).cos()).collect();
        let relaxed = rods_solve(&s, &base, 1e-12, 100_000).unwrap();
        let run = offds_run(&s, &base, 2000, 0).unwrap();
        assert!((relaxed.objective - run.objective()).abs() < 1e-10);
        assert!(equilibrium_check(&relaxed.state, &s, 1e-9).satisfied);
    }

    #[test]
    fn ample_flexibility_gives_flat_relaxed_optimum() {
        let grid = TimeGrid::new(6);
        let s = scenario(6, vec![ContinuousDa::with_rate_cap(0, 0, 5, 12.0, 10.0, grid)], vec![]);
        let base = [4.0, 1.0, 3.0, 0.0, 2.0, 2.0];
        let relaxed = rods_solve(&s, &base, 1e-12, 1000).unwrap();
        assert!(relaxed.objective < 1e-20);
    }

    #[test]
    fn initial_point_is_not_an_equilibrium() {
        let grid = TimeGrid::new(8);
        let s = scenario(
            8,
            vec![ContinuousDa::with_rate_cap(0, 0, 7, 6.0, 3.0, grid)],
            vec![DiscreteDa { id: 1, arrival: 0, deadline: 8, rate: 3.0, length: 2 }],
        );
        let base = [9.0, 9.0, 9.0, 0.0, 0.0, 0.0, 9.0, 9.0];
        let p0 = initial_profiles(&s, &base, 0).unwrap();
        assert!(!equilibrium_check(&p0, &s, 1e-6).satisfied);
    }

    #[test]
    fn conservation_holds_at_every_state() {
        let grid = TimeGrid::new(10);
        let s = scenario(
            10,
            vec![ContinuousDa::with_rate_cap(0, 1, 8, 7.0, 3.0, grid)],
            vec![DiscreteDa { id: 1, arrival: 0, deadline: 9, rate: 3.0, length: 3 }],
        );
        let base: Vec<f64> = (0..10).map(|t| (t * 7 % 5) as f64).collect();
        let mut state = initial_profiles(&s, &base, 4).unwrap();
        let expected = base.iter().sum::<f64>() + 7.0 + 9.0;
        for _ in 0..10 {
            let total: f64 = state.aggregate().iter().sum();
            assert!((total - expected).abs() <= 1e-9 * expected);
            state = offds_step(&s, &state, 4).unwrap();
        }
    }

    #[test]
    fn step_matches_the_full_run() {
        let grid = TimeGrid::new(10);
        let s = scenario(
            10,
            vec![ContinuousDa::with_rate_cap(0, 1, 8, 7.0, 3.0, grid)],
            vec![DiscreteDa { id: 1, arrival: 0, deadline: 9, rate: 3.0, length: 3 }],
        );
        let base: Vec<f64> = (0..10).map(|t| (t * 7 % 5) as f64).collect();
        let mut state = initial_profiles(&s, &base, 4).unwrap();
        for _ in 0..6 {
            state = offds_step(&s, &state, 4).unwrap();
        }
        let run = offds_run(&s, &base, 6, 4).unwrap();
        assert_eq!(state.schedules, run.state.schedules);
    }
}
