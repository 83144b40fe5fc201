//! The coordinator/DA inner loop shared by the offline and online schedulers.
//!
//! Blocks keep only the slots they can use, so one iteration costs roughly the
//! total window length rather than `N·T`.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::variance_objective;
use crate::model::{AlgoParams, ContinuousDa, FeasibleSet, SimplexWeights};
use crate::rng::{StreamKey, INIT_ITERATION};
use crate::subproblems::{project_box_budget, sample_vertex, simplex_qp, valley_fill, valley_fill_nonneg};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VirtualTrafficMode {
    /// Water-filling with `q ≥ 0`.
    #[default]
    Nonnegative,
    /// Closed-form fill that flattens the load exactly; `q` may be negative.
    Unconstrained,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub objective: f64,
    /// `max_n ‖p_n^k − p_n^{k−1}‖∞`; absent for the initial point.
    pub max_change: Option<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct ContinuousBlock {
    pub id: u32,
    /// Slots covered by the local vectors.
    pub range: Range<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub budget: f64,
    pub profile: Vec<f64>,
}

impl ContinuousBlock {
    /// The DA restricted to slots `from..`, with `budget` left to send.
    /// Without a `profile` the budget is spread evenly and projected.
    pub fn new(da: &ContinuousDa, from: usize, budget: f64, profile: Option<&[f64]>, tol: f64) -> Result<Self> {
        let window = da.window();
        let range = window.start.max(from)..window.end.max(from);
        let lower = da.lower[range.clone()].to_vec();
        let upper = da.upper[range.clone()].to_vec();
        let profile = match profile {
            Some(p) => p[range.clone()].to_vec(),
            None if range.is_empty() => Vec::new(),
            None => {
                let even = vec![budget / range.len() as f64; range.len()];
                project_box_budget(&even, &lower, &upper, budget, tol)?
            }
        };
        if range.is_empty() && budget > tol * da.budget.max(1.0) {
            return Err(Error::InfeasibleBudget {
                budget,
                min_total: 0.0,
                max_total: 0.0,
            });
        }
        Ok(Self {
            id: da.id,
            range,
            lower,
            upper,
            budget,
            profile,
        })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct DiscreteBlock {
    pub id: u32,
    pub set: FeasibleSet,
    pub gram: Vec<f64>,
    pub weights: SimplexWeights,
    pub choice: usize,
}

impl DiscreteBlock {
    /// A block whose current vertex is drawn uniformly from `set`.
    pub fn sampled(id: u32, set: FeasibleSet, seed: u64, slot: usize) -> Self {
        let weights = SimplexWeights::uniform(set.len());
        let choice = sample_vertex(&weights, &mut StreamKey::new(seed, slot, id, INIT_ITERATION).rng());
        Self::with_choice(id, set, weights, choice)
    }

    pub fn with_choice(id: u32, set: FeasibleSet, weights: SimplexWeights, choice: usize) -> Self {
        let gram = set.gram();
        Self {
            id,
            set,
            gram,
            weights,
            choice,
        }
    }

    pub fn start(&self) -> usize {
        self.set.start(self.choice)
    }

    pub fn occupied(&self) -> Range<usize> {
        let s = self.start();
        s..s + self.set.length()
    }

    pub fn value_at(&self, slot: usize) -> f64 {
        if self.occupied().contains(&slot) {
            self.set.rate()
        } else {
            0.0
        }
    }
}

/// What the coordinator knows about the horizon `from..slots`.
#[derive(Debug, Clone)]
pub(crate) struct Horizon<'a> {
    pub from: usize,
    /// Base prediction plus locked traffic; indexed by absolute slot.
    pub fixed: &'a [f64],
    /// Number of DAs the average is taken over.
    pub population: usize,
    pub virtual_total: f64,
    pub virtual_mode: VirtualTrafficMode,
    pub seed: u64,
    /// Slot component of the random stream keys.
    pub stream_slot: usize,
    pub params: AlgoParams,
}

impl Horizon<'_> {
    pub fn slots(&self) -> usize {
        self.fixed.len()
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Blocks {
    pub continuous: Vec<ContinuousBlock>,
    pub discrete: Vec<DiscreteBlock>,
}

impl Blocks {
    /// `fixed + Σ p_n`, continuous blocks first; zero before `from`.
    pub fn aggregate(&self, h: &Horizon) -> Vec<f64> {
        let mut agg = vec![0.0; h.slots()];
        agg[h.from..].copy_from_slice(&h.fixed[h.from..]);
        for b in &self.continuous {
            for (v, p) in agg[b.range.clone()].iter_mut().zip(&b.profile) {
                *v += p;
            }
        }
        for b in &self.discrete {
            let r = b.set.rate();
            for v in &mut agg[b.occupied()] {
                *v += r;
            }
        }
        agg
    }

    /// Virtual future traffic over `from+1..`, filled against `agg`.
    pub fn virtual_traffic(agg: &[f64], h: &Horizon) -> Vec<f64> {
        let mut q = vec![0.0; agg.len()];
        let lo = h.from + 1;
        if h.virtual_total != 0.0 && lo < agg.len() {
            let fill = match h.virtual_mode {
                VirtualTrafficMode::Nonnegative => valley_fill_nonneg(&agg[lo..], h.virtual_total),
                VirtualTrafficMode::Unconstrained => valley_fill(&agg[lo..], h.virtual_total),
            };
            q[lo..].copy_from_slice(&fill);
        }
        q
    }

    /// Announced average over the horizon (zero before `from`) and its virtual part.
    pub fn average(&self, h: &Horizon) -> (Vec<f64>, Vec<f64>) {
        let mut d = self.aggregate(h);
        let q = Self::virtual_traffic(&d, h);
        let n = h.population.max(1) as f64;
        for t in h.from..d.len() {
            d[t] = (d[t] + q[t]) / n;
        }
        (d, q)
    }

    /// One synchronous round of DA updates against the announced `d`.
    /// Returns the largest change of any profile entry.
    pub fn update(&mut self, d: &[f64], h: &Horizon, iteration: usize) -> Result<f64> {
        let mut change = 0.0f64;
        for b in &mut self.continuous {
            if b.range.is_empty() {
                continue;
            }
            let target: Vec<f64> = b
                .profile
                .iter()
                .zip(&d[b.range.clone()])
                .map(|(p, d)| p - d)
                .collect();
            let next = project_box_budget(&target, &b.lower, &b.upper, b.budget, h.params.bisection_tol)?;
            for (old, new) in b.profile.iter().zip(&next) {
                change = change.max((old - new).abs());
            }
            b.profile = next;
        }
        let n = h.population;
        for b in &mut self.discrete {
            let set = &b.set;
            // y = vertex − d, on the span only; slots outside contribute a constant.
            let mut y = vec![0.0; h.slots()];
            for t in set.span() {
                y[t] = b.value_at(t) - d[t];
            }
            let next = if n <= 1 {
                // Linear limit: minimize ⟨d − p, f_a⟩; lowest index wins ties.
                let scores = set.inner_products(&y);
                let mut best = 0;
                for a in 1..scores.len() {
                    if scores[a] > scores[best] {
                        best = a;
                    }
                }
                b.weights = SimplexWeights::indicator(set.len(), best);
                best
            } else {
                let factor = n as f64 / (n as f64 - 1.0);
                for v in &mut y[set.span()] {
                    *v *= factor;
                }
                let c = set.inner_products(&y);
                b.weights = match simplex_qp(&b.gram, &c, h.params.simplex_tol, h.params.simplex_max_iters) {
                    Ok(w) => w,
                    Err(Error::MaxItersExceeded { best, .. }) => SimplexWeights::from_solver(*best),
                    Err(e) => return Err(e),
                };
                let mut rng = StreamKey::new(h.seed, h.stream_slot, b.id, iteration as u64).rng();
                sample_vertex(&b.weights, &mut rng)
            };
            if next != b.choice {
                change = change.max(set.rate());
                b.choice = next;
            }
        }
        Ok(change)
    }

    /// Runs `iterations` rounds, appending `V(d^k)` for `k = 0..=iterations`
    /// over the horizon. Stops early once the largest change is within
    /// `params.early_stop` and there is no discrete block.
    pub fn iterate(&mut self, h: &Horizon, iterations: usize, trace: &mut Vec<TracePoint>) -> Result<()> {
        let (mut d, _) = self.average(h);
        trace.push(TracePoint {
            iteration: 0,
            objective: variance_objective(&d[h.from..]),
            max_change: None,
        });
        for k in 0..iterations {
            let change = self.update(&d, h, k)?;
            d = self.average(h).0;
            trace.push(TracePoint {
                iteration: k + 1,
                objective: variance_objective(&d[h.from..]),
                max_change: Some(change),
            });
            if let Some(tol) = h.params.early_stop {
                if self.discrete.is_empty() && change <= tol {
                    break;
                }
            }
        }
        Ok(())
    }
}
