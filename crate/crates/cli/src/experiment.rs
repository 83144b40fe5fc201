//! The benchmark cases and the sweeps built on them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use dshape_core::rng::mix;
use dshape_core::{
    bundled_diurnal, gap_report, offds_run, onds_run, AlgoParams, ArrivalModel, BaseRealization, BaseTrafficModel,
    Da, DeviationModel, ExactBase, FrozenForecast, OnlineConfig, ResolvePolicy, Scenario, TimeGrid,
    VirtualTrafficMode,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{HarnessError, Result};

const BASE_STREAM: u64 = 0xba5e;
const ARRIVAL_STREAM: u64 = 0xa771;

/// The five ways of scheduling one simulated day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Case {
    /// Complete information: offline scheduling on the realized day.
    Offline,
    /// Updated base prediction and expected future arrivals.
    Online,
    /// Exact base traffic, expected future arrivals.
    ExactBase,
    /// Updated base prediction, every DA known in advance.
    KnownArrivals,
    /// Base prediction made once at the start, every DA known in advance.
    FrozenPrediction,
}

impl Case {
    pub const ALL: [Case; 5] = [
        Case::Offline,
        Case::Online,
        Case::ExactBase,
        Case::KnownArrivals,
        Case::FrozenPrediction,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    /// Whether the case replays a recorded arrival stream.
    pub fn needs_recorded_arrivals(self) -> bool {
        matches!(self, Case::Offline | Case::KnownArrivals | Case::FrozenPrediction)
    }
}

/// Default full-size scenario: 96 half-hour slots with arrivals during the
/// first 48, on the bundled diurnal curve.
pub fn default_scenario(sigma2: f64) -> Scenario {
    let grid = TimeGrid::new(96);
    Scenario {
        grid,
        base: BaseTrafficModel {
            mean: bundled_diurnal(),
            deviation: DeviationModel::Cumulative { sigma2 },
            clamp_at_zero: true,
        },
        continuous_das: vec![],
        discrete_das: vec![],
        arrivals: Some(ArrivalModel::default()),
        algo: AlgoParams::default(),
        seed: 0,
    }
}

/// Knobs shared by every case of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    /// Inner iterations per solve.
    pub iterations: usize,
    pub virtual_mode: VirtualTrafficMode,
    pub resolve: ResolvePolicy,
}

impl Settings {
    pub fn new(iterations: usize) -> Self {
        Self {
            iterations,
            virtual_mode: VirtualTrafficMode::default(),
            resolve: ResolvePolicy::default(),
        }
    }

    fn online(&self, seed: u64) -> OnlineConfig {
        OnlineConfig {
            virtual_mode: self.virtual_mode,
            resolve: self.resolve,
            ..OnlineConfig::new(self.iterations, seed)
        }
    }
}

/// One simulated day: base-traffic realization and the DAs that show up.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub seed: u64,
    pub base: BaseRealization,
    pub realized: Vec<f64>,
    pub arrivals: Vec<Da>,
}

/// Seed of repetition `rep` under a master seed. Independent of sweep parameters,
/// so every sweep point sees the same random numbers.
pub fn rep_seed(master: u64, rep: usize) -> u64 {
    mix(&[master, rep as u64])
}

impl Replicate {
    /// Draws the day. The scenario's own DAs, if any, replace generated arrivals.
    pub fn draw(scenario: &Scenario, seed: u64) -> Self {
        let base = scenario.base.realize(&mut ChaCha8Rng::seed_from_u64(mix(&[seed, BASE_STREAM])));
        let realized = base.realized();
        let arrivals = match (&scenario.arrivals, scenario.population()) {
            (Some(model), 0) => model.generate(scenario.grid, &mut ChaCha8Rng::seed_from_u64(mix(&[seed, ARRIVAL_STREAM]))),
            _ => scenario.das(),
        };
        Self {
            seed,
            base,
            realized,
            arrivals,
        }
    }

    /// Same day with a recorded arrival stream.
    pub fn with_arrivals(mut self, arrivals: Vec<Da>) -> Self {
        self.arrivals = arrivals;
        self
    }
}

/// Full-day objective `V(d)` of one case.
pub fn run_case(case: Case, scenario: &Scenario, day: &Replicate, settings: &Settings) -> Result<f64> {
    let seed = day.seed;
    let iterations = settings.iterations;
    let mut config = settings.online(seed);
    let v = match case {
        Case::Offline => {
            let s = scenario.clone().with_das(&day.arrivals);
            offds_run(&s, &day.realized, iterations, seed)?.objective()
        }
        Case::Online => onds_run(scenario, &day.realized, &day.base, &day.arrivals, &config)?.objective,
        Case::ExactBase => {
            let exact = ExactBase(day.realized.clone());
            onds_run(scenario, &day.realized, &exact, &day.arrivals, &config)?.objective
        }
        Case::KnownArrivals => {
            config.virtual_traffic = false;
            config.disclose_all = true;
            onds_run(scenario, &day.realized, &day.base, &day.arrivals, &config)?.objective
        }
        Case::FrozenPrediction => {
            config.virtual_traffic = false;
            config.disclose_all = true;
            let frozen = FrozenForecast(day.base.predict(0));
            onds_run(scenario, &day.realized, &frozen, &day.arrivals, &config)?.objective
        }
    };
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub rep: usize,
    pub seed: u64,
    pub arrivals: usize,
    /// `(case, V)` for every case run.
    pub objectives: Vec<(Case, f64)>,
}

impl RepOutcome {
    pub fn objective(&self, case: Case) -> Option<f64> {
        self.objectives.iter().find(|(c, _)| *c == case).map(|(_, v)| *v)
    }

    /// `(V_case − V_offline)/V_offline`.
    pub fn relative_gap(&self, case: Case) -> Result<f64> {
        let reference = self.objective(Case::Offline).ok_or(HarnessError::MissingReference)?;
        let subject = self.objective(case).ok_or(HarnessError::MissingReference)?;
        Ok(gap_report(subject, reference, None).relative()?)
    }
}

/// Runs `cases` (plus the offline reference) on `reps` days in parallel.
pub fn compare_cases(
    scenario: &Scenario,
    cases: &[Case],
    reps: usize,
    master: u64,
    settings: &Settings,
) -> Result<Vec<RepOutcome>> {
    let days: Vec<Replicate> = (0..reps).map(|rep| Replicate::draw(scenario, rep_seed(master, rep))).collect();
    compare_days(scenario, &days, cases, settings)
}

/// Runs `cases` (plus the offline reference) on the given days in parallel;
/// repetition numbers follow the order of `days`.
pub fn compare_days(scenario: &Scenario, days: &[Replicate], cases: &[Case], settings: &Settings) -> Result<Vec<RepOutcome>> {
    let mut wanted: Vec<Case> = cases.to_vec();
    wanted.push(Case::Offline);
    wanted.sort();
    wanted.dedup();
    days.par_iter()
        .enumerate()
        .map(|(rep, day)| {
            let objectives = wanted
                .iter()
                .map(|&c| Ok((c, run_case(c, scenario, day, settings)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(RepOutcome {
                rep,
                seed: day.seed,
                arrivals: day.arrivals.len(),
                objectives,
            })
        })
        .collect()
}

/// Mean and standard error of the relative gap of `case` across repetitions.
pub fn gap_summary(outcomes: &[RepOutcome], case: Case) -> Result<(f64, f64)> {
    let gaps = outcomes
        .iter()
        .map(|o| o.relative_gap(case))
        .collect::<Result<Vec<_>>>()?;
    Ok(dshape_core::metrics::mean_and_se(&gaps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub outcomes: Vec<RepOutcome>,
}

/// Base-uncertainty sweep: all cases at each `σ²`.
pub fn sigma_sweep(
    scenario: &Scenario,
    sigma2: &[f64],
    cases: &[Case],
    reps: usize,
    master: u64,
    settings: &Settings,
) -> Result<Vec<SweepPoint>> {
    sigma2
        .iter()
        .map(|&s2| {
            let mut s = scenario.clone();
            s.base.deviation = match &s.base.deviation {
                DeviationModel::Cumulative { .. } => DeviationModel::Cumulative { sigma2: s2 },
                DeviationModel::CausalFilter { impulse, .. } => DeviationModel::CausalFilter {
                    impulse: impulse.clone(),
                    delta2: s2,
                },
            };
            Ok(SweepPoint {
                value: s2,
                outcomes: compare_cases(&s, cases, reps, master, settings)?,
            })
        })
        .collect()
}

/// Discrete-share sweep: online against offline at each share of discrete DAs.
pub fn penetration_sweep(
    scenario: &Scenario,
    shares: &[f64],
    reps: usize,
    master: u64,
    settings: &Settings,
) -> Result<Vec<SweepPoint>> {
    let model = scenario.arrivals.ok_or(HarnessError::NoArrivalModel)?;
    shares
        .iter()
        .map(|&share| {
            let mut s = scenario.clone();
            s.arrivals = Some(ArrivalModel {
                continuous_fraction: 1.0 - share,
                ..model
            });
            Ok(SweepPoint {
                value: share,
                outcomes: compare_cases(&s, &[Case::Online], reps, master, settings)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationPoint {
    pub iterations: usize,
    pub mean: f64,
    pub std: f64,
    pub objectives: Vec<f64>,
}

/// Offline objective after `K` iterations for each `K`, over `seeds` days.
pub fn iteration_study(scenario: &Scenario, counts: &[usize], seeds: usize, master: u64) -> Result<Vec<IterationPoint>> {
    let max = counts.iter().copied().max().unwrap_or(0);
    // One run of the longest length per seed; shorter counts read the trace.
    let traces = (0..seeds)
        .into_par_iter()
        .map(|rep| {
            let day = Replicate::draw(scenario, rep_seed(master, rep));
            let s = scenario.clone().with_das(&day.arrivals);
            Ok(offds_run(&s, &day.realized, max, day.seed)?
                .points
                .iter()
                .map(|p| p.objective)
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(counts
        .iter()
        .map(|&k| {
            let objectives: Vec<f64> = traces.iter().map(|t| t[k.min(t.len() - 1)]).collect();
            let n = objectives.len() as f64;
            let mean = objectives.iter().sum::<f64>() / n;
            let var = objectives.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            IterationPoint {
                iterations: k,
                mean,
                std: var.sqrt(),
                objectives,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_day(sigma2: f64, continuous_fraction: f64) -> Scenario {
        let mut s = default_scenario(sigma2);
        s.grid = TimeGrid::new(24);
        s.base.mean = dshape_core::TrafficProfile::new(s.base.mean[..24].to_vec()).unwrap();
        s.arrivals = Some(ArrivalModel {
            cutoff: 12,
            slack_min: 2,
            slack_max: 4,
            continuous_fraction,
            ..ArrivalModel::default()
        });
        s
    }

    #[test]
    fn case_ids_round_trip() {
        for c in Case::ALL {
            assert_eq!(Case::from_id(c.id()), Some(c));
        }
        assert_eq!(Case::from_id(5), None);
        assert!(!Case::Online.needs_recorded_arrivals());
        assert!(Case::FrozenPrediction.needs_recorded_arrivals());
    }

    #[test]
    fn days_depend_only_on_the_seed() {
        let s = short_day(10.0, 0.5);
        let a = Replicate::draw(&s, rep_seed(3, 1));
        let b = Replicate::draw(&s, rep_seed(3, 1));
        assert_eq!(a.realized, b.realized);
        assert_eq!(a.arrivals, b.arrivals);
        // Same arrivals whatever the base uncertainty.
        let c = Replicate::draw(&short_day(90.0, 0.5), rep_seed(3, 1));
        assert_eq!(a.arrivals, c.arrivals);
        assert_ne!(rep_seed(3, 1), rep_seed(3, 2));
    }

    #[test]
    fn without_base_uncertainty_exact_base_is_the_online_case() {
        let s = short_day(0.0, 0.5);
        let out = compare_cases(&s, &[Case::Online, Case::ExactBase], 2, 9, &Settings::new(10)).unwrap();
        for o in &out {
            assert_eq!(o.objective(Case::Online), o.objective(Case::ExactBase));
        }
    }

    #[test]
    fn everything_known_at_the_start_closes_the_gap() {
        let mut s = short_day(0.0, 0.5);
        s.arrivals = None;
        let day = Replicate::draw(&short_day(0.0, 0.5), 4);
        let das: Vec<Da> = day
            .arrivals
            .iter()
            .map(|da| match da.clone() {
                Da::Continuous(mut c) => {
                    c.arrival = 0;
                    Da::Continuous(c)
                }
                Da::Discrete(mut d) => {
                    d.arrival = 0;
                    Da::Discrete(d)
                }
            })
            .collect();
        let s = s.with_das(&das);
        let day = Replicate::draw(&s, 4);
        let settings = Settings::new(15);
        let offline = run_case(Case::Offline, &s, &day, &settings).unwrap();
        let online = run_case(Case::Online, &s, &day, &settings).unwrap();
        assert!((online - offline).abs() <= 1e-12 * offline.max(1.0));
    }

    #[test]
    fn penetration_zero_has_no_discrete_das() {
        let s = short_day(0.0, 0.3);
        let points = penetration_sweep(&s, &[0.0, 1.0], 2, 1, &Settings::new(5)).unwrap();
        for rep in 0..2 {
            let day = Replicate::draw(
                &Scenario {
                    arrivals: Some(ArrivalModel {
                        continuous_fraction: 1.0,
                        ..s.arrivals.unwrap()
                    }),
                    ..s.clone()
                },
                rep_seed(1, rep),
            );
            assert!(day.arrivals.iter().all(|d| !d.is_discrete()));
        }
        assert_eq!(points.len(), 2);
        assert!(points.iter().all(|p| p.outcomes.len() == 2));
    }

    #[test]
    fn continuous_only_days_descend_monotonically() {
        let s = short_day(20.0, 1.0);
        let counts: Vec<usize> = (0..=25).collect();
        let points = iteration_study(&s, &counts, 5, 2).unwrap();
        for seed in 0..5 {
            for w in points.windows(2) {
                let (a, b) = (w[0].objectives[seed], w[1].objectives[seed]);
                assert!(b <= a + 1e-12 * a.max(1.0), "K={}: {a} -> {b}", w[1].iterations);
            }
        }
    }

    #[test]
    fn iterations_lower_the_mean_and_the_spread() {
        let s = short_day(20.0, 0.5);
        let points = iteration_study(&s, &[1, 5, 30], 12, 6).unwrap();
        assert!(points[2].mean < points[0].mean);
        assert!(points[2].std <= points[1].std);
    }
}
