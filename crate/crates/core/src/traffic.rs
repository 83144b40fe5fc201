//! Base-traffic truth and prediction models, and deferrable-application arrival streams.

use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{slots_needed, ContinuousDa, Da, DiscreteDa, TimeGrid, TrafficProfile};

const BUNDLED_DIURNAL: &str = include_str!("../data/diurnal_96.csv");

/// Synthetic 96-slot diurnal mean curve shipped with the crate (not measured data).
pub fn bundled_diurnal() -> TrafficProfile {
    parse_trace(BUNDLED_DIURNAL.as_bytes(), Some(96)).expect("bundled trace is valid")
}

/// How the realized base traffic deviates from its mean, and how that deviation
/// is revealed over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DeviationModel {
    /// `b(τ) = b̄(τ) + Σ_{s≤τ} ω_s(τ)` with `Var ω_s(τ) = σ²/(τ−s+1)`; at slot `t`
    /// the innovations `ω_s` with `s ≤ t` are known.
    Cumulative { sigma2: f64 },
    /// `b(τ) = b̄(τ) + Σ_{s≤τ} e(s) f(τ−s)` with i.i.d. `e(s)` of variance `δ²`;
    /// `impulse[k] = f(k)` and `f(k) = 0` past the end of the vector.
    CausalFilter { impulse: Vec<f64>, delta2: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseTrafficModel {
    pub mean: TrafficProfile,
    pub deviation: DeviationModel,
    #[serde(default = "yes")]
    pub clamp_at_zero: bool,
}

fn yes() -> bool {
    true
}

/// `H(k) = Σ_{j=1..k} 1/j`.
pub fn harmonic(k: usize) -> f64 {
    (1..=k).map(|j| 1.0 / j as f64).sum()
}

impl BaseTrafficModel {
    pub fn noiseless(mean: TrafficProfile) -> Self {
        Self {
            mean,
            deviation: DeviationModel::Cumulative { sigma2: 0.0 },
            clamp_at_zero: true,
        }
    }

    pub fn validate(&self, grid: TimeGrid) -> Vec<String> {
        let mut out = Vec::new();
        if self.mean.len() != grid.slots {
            out.push(format!(
                "base mean has {} slots, grid has {}",
                self.mean.len(),
                grid.slots
            ));
        }
        match &self.deviation {
            DeviationModel::Cumulative { sigma2 } => {
                if !(*sigma2 >= 0.0 && sigma2.is_finite()) {
                    out.push(format!("sigma2 must be nonnegative, got {sigma2}"));
                }
            }
            DeviationModel::CausalFilter { impulse, delta2 } => {
                if !(*delta2 >= 0.0 && delta2.is_finite()) {
                    out.push(format!("delta2 must be nonnegative, got {delta2}"));
                }
                if impulse.first() != Some(&1.0) {
                    out.push("impulse response must start with f(0) = 1".into());
                }
            }
        }
        out
    }

    /// Variance of `b_t(τ) − b(τ)` before clamping.
    pub fn prediction_error_variance(&self, t: usize, tau: usize) -> f64 {
        if tau <= t {
            return 0.0;
        }
        match &self.deviation {
            DeviationModel::Cumulative { sigma2 } => sigma2 * harmonic(tau - t),
            DeviationModel::CausalFilter { impulse, delta2 } => {
                let sum: f64 = (t + 1..=tau)
                    .map(|s| impulse.get(tau - s).copied().unwrap_or(0.0).powi(2))
                    .sum();
                delta2 * sum
            }
        }
    }

    /// Draws one innovation table; truth and every prediction are read from it.
    ///
    /// Standard normals are drawn in a fixed order and then scaled, so models that
    /// differ only in their variance parameter share the same underlying draws.
    pub fn realize<R: Rng + ?Sized>(&self, rng: &mut R) -> BaseRealization {
        let slots = self.mean.len();
        let innovations = match &self.deviation {
            DeviationModel::Cumulative { sigma2 } => {
                let mut prefix = Vec::with_capacity(slots);
                for tau in 0..slots {
                    let mut row = Vec::with_capacity(tau + 1);
                    let mut acc = 0.0;
                    for s in 0..=tau {
                        let z: f64 = rng.sample(StandardNormal);
                        acc += z * (sigma2 / (tau - s + 1) as f64).sqrt();
                        row.push(acc);
                    }
                    prefix.push(row);
                }
                Innovations::Cumulative { prefix }
            }
            DeviationModel::CausalFilter { impulse, delta2 } => {
                let sd = delta2.sqrt();
                let e = (0..slots)
                    .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                Innovations::Filter {
                    e,
                    impulse: impulse.clone(),
                }
            }
        };
        BaseRealization {
            mean: self.mean.to_vec(),
            clamp: self.clamp_at_zero,
            innovations,
        }
    }
}

#[derive(Debug, Clone)]
enum Innovations {
    /// `prefix[τ][s] = Σ_{s' ≤ s} ω_{s'}(τ)`.
    Cumulative { prefix: Vec<Vec<f64>> },
    Filter { e: Vec<f64>, impulse: Vec<f64> },
}

/// One realization of the base-traffic process: the truth plus the prediction
/// available at every slot.
#[derive(Debug, Clone)]
pub struct BaseRealization {
    mean: Vec<f64>,
    clamp: bool,
    innovations: Innovations,
}

impl BaseRealization {
    pub fn slots(&self) -> usize {
        self.mean.len()
    }

    /// Deviation of slot `tau` known at slot `t`, before clamping.
    fn revealed(&self, t: usize, tau: usize) -> f64 {
        match &self.innovations {
            Innovations::Cumulative { prefix } => prefix[tau][t.min(tau)],
            Innovations::Filter { e, impulse } => (0..=t.min(tau))
                .map(|s| e[s] * impulse.get(tau - s).copied().unwrap_or(0.0))
                .sum(),
        }
    }

    fn finish(&self, v: f64) -> f64 {
        if self.clamp {
            v.max(0.0)
        } else {
            v
        }
    }

    /// Prediction `b_t(τ)` for `τ = t..T`.
    pub fn predict(&self, t: usize) -> Vec<f64> {
        (t..self.slots())
            .map(|tau| self.finish(self.mean[tau] + self.revealed(t, tau)))
            .collect()
    }

    /// The realized trace `b(τ) = b_τ(τ)`.
    pub fn realized(&self) -> Vec<f64> {
        (0..self.slots())
            .map(|tau| self.finish(self.mean[tau] + self.revealed(tau, tau)))
            .collect()
    }

    /// Slots whose realized value was clamped at zero.
    pub fn clamped_slots(&self) -> Vec<usize> {
        (0..self.slots())
            .filter(|&tau| self.mean[tau] + self.revealed(tau, tau) < 0.0)
            .collect()
    }
}

/// Source of the base-traffic forecast the online controller sees at each slot.
pub trait BasePredictor {
    /// Forecast for slots `t..T`; the first entry is the current slot.
    fn predict(&self, t: usize) -> Vec<f64>;
}

impl BasePredictor for BaseRealization {
    fn predict(&self, t: usize) -> Vec<f64> {
        BaseRealization::predict(self, t)
    }
}

/// Perfect foresight of the base traffic.
#[derive(Debug, Clone)]
pub struct ExactBase(pub Vec<f64>);

impl BasePredictor for ExactBase {
    fn predict(&self, t: usize) -> Vec<f64> {
        self.0[t..].to_vec()
    }
}

/// A single forecast made once and never refreshed.
#[derive(Debug, Clone)]
pub struct FrozenForecast(pub Vec<f64>);

impl BasePredictor for FrozenForecast {
    fn predict(&self, t: usize) -> Vec<f64> {
        self.0[t..].to_vec()
    }
}

/// Shifted-Poisson arrival process of deferrable applications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArrivalModel {
    /// Deterministic arrivals per slot added to the Poisson count.
    pub shift: u32,
    pub rate: f64,
    /// Probability that an arrival is continuous-rate.
    pub continuous_fraction: f64,
    pub budget_min: f64,
    pub budget_max: f64,
    pub slack_min: usize,
    pub slack_max: usize,
    pub rate_cap: f64,
    /// DAs arrive in slots `0..cutoff`.
    pub cutoff: usize,
}

impl Default for ArrivalModel {
    fn default() -> Self {
        Self {
            shift: 0,
            rate: 4.0,
            continuous_fraction: 0.5,
            budget_min: 12.0,
            budget_max: 24.0,
            slack_min: 6,
            slack_max: 14,
            rate_cap: 3.0,
            cutoff: 48,
        }
    }
}

impl ArrivalModel {
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.rate >= 0.0 && self.rate.is_finite()) {
            out.push(format!("arrival rate must be nonnegative, got {}", self.rate));
        }
        if !(0.0..=1.0).contains(&self.continuous_fraction) {
            out.push("continuous fraction must lie in [0, 1]".into());
        }
        if !(self.budget_min > 0.0 && self.budget_min <= self.budget_max) {
            out.push("budget range must satisfy 0 < min <= max".into());
        }
        if self.slack_min > self.slack_max {
            out.push("slack range must satisfy min <= max".into());
        }
        if self.rate_cap.is_nan() || self.rate_cap <= 0.0 {
            out.push("rate cap must be positive".into());
        }
        out
    }

    /// Checks that every DA the model can emit fits on `grid`.
    pub fn validate_for(&self, grid: TimeGrid) -> Vec<String> {
        let mut out = self.validate();
        if out.is_empty() && self.cutoff > 0 {
            let longest = slots_needed(self.budget_max, self.rate_cap);
            if self.cutoff - 1 + longest >= grid.slots {
                out.push(format!(
                    "a DA arriving at slot {} may need {longest} slots; grid has {}",
                    self.cutoff - 1,
                    grid.slots
                ));
            }
        }
        out
    }

    /// Mean number of arrivals in `slot`.
    pub fn mean_arrivals(&self, slot: usize) -> f64 {
        if slot < self.cutoff {
            self.shift as f64 + self.rate
        } else {
            0.0
        }
    }

    /// Mean DA size used for the virtual future traffic.
    pub fn mean_budget(&self) -> f64 {
        0.5 * (self.budget_min + self.budget_max)
    }

    /// `Σ_{τ>t} P·λ_τ` over a grid of `slots` slots.
    pub fn expected_future_volume(&self, t: usize, slots: usize) -> f64 {
        (t + 1..slots)
            .map(|tau| self.mean_budget() * self.mean_arrivals(tau))
            .sum()
    }

    fn draw_da<R: Rng + ?Sized>(&self, id: u32, arrival: usize, grid: TimeGrid, rng: &mut R) -> Da {
        let continuous = rng.random::<f64>() < self.continuous_fraction;
        let budget = if self.budget_max > self.budget_min {
            rng.random_range(self.budget_min..self.budget_max)
        } else {
            self.budget_min
        };
        let length = slots_needed(budget, self.rate_cap);
        let slack = rng.random_range(self.slack_min..=self.slack_max);
        let deadline = arrival + length + slack;
        if continuous {
            Da::Continuous(ContinuousDa::with_rate_cap(
                id,
                arrival,
                deadline,
                budget,
                self.rate_cap,
                grid,
            ))
        } else {
            Da::Discrete(DiscreteDa {
                id,
                arrival,
                deadline: deadline.min(grid.slots),
                rate: self.rate_cap,
                length,
            })
        }
    }

    /// Per slot before the cutoff, `shift + Poisson(rate)` arrivals with
    /// uniformly drawn sizes and deadlines. Ids are assigned in arrival order.
    pub fn generate<R: Rng + ?Sized>(&self, grid: TimeGrid, rng: &mut R) -> Vec<Da> {
        let poisson = (self.rate > 0.0).then(|| Poisson::new(self.rate).expect("positive rate"));
        let mut out = Vec::new();
        for t in 0..self.cutoff.min(grid.slots) {
            let extra = poisson.as_ref().map_or(0, |p| p.sample(rng) as u32);
            for _ in 0..self.shift + extra {
                let id = out.len() as u32;
                out.push(self.draw_da(id, t, grid, rng));
            }
        }
        out
    }

    /// Exactly `count` DAs with arrival slots uniform on `0..cutoff`, sorted by arrival.
    pub fn generate_population<R: Rng + ?Sized>(
        &self,
        grid: TimeGrid,
        count: usize,
        rng: &mut R,
    ) -> Vec<Da> {
        let cutoff = self.cutoff.clamp(1, grid.slots);
        let mut arrivals: Vec<usize> = (0..count).map(|_| rng.random_range(0..cutoff)).collect();
        arrivals.sort_unstable();
        arrivals
            .into_iter()
            .enumerate()
            .map(|(i, t)| self.draw_da(i as u32, t, grid, rng))
            .collect()
    }
}

/// Free-function form of [`ArrivalModel::generate`].
pub fn generate_arrivals<R: Rng + ?Sized>(model: &ArrivalModel, grid: TimeGrid, rng: &mut R) -> Vec<Da> {
    model.generate(grid, rng)
}

fn parse_trace(reader: impl Read, expected: Option<usize>) -> Result<TrafficProfile> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut values = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = match record.len() {
            1 => &record[0],
            2 => &record[1],
            n => {
                return Err(Error::Parse {
                    line,
                    message: format!("expected `value` or `slot,value`, found {n} fields"),
                })
            }
        };
        let v: f64 = field.parse().map_err(|_| Error::Parse {
            line,
            message: format!("not a number: {field:?}"),
        })?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Parse {
                line,
                message: format!("traffic must be finite and nonnegative, got {v}"),
            });
        }
        values.push(v);
    }
    if let Some(expected) = expected {
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: values.len(),
            });
        }
    }
    TrafficProfile::new(values)
}

/// Reads a trace with one value per line or `slot,value` rows. `#` starts a comment.
pub fn load_trace_csv(path: impl AsRef<Path>, expected_len: Option<usize>) -> Result<TrafficProfile> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_trace(file, expected_len)
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrivalRow {
    id: u32,
    t_a: usize,
    #[serde(rename = "type")]
    kind: String,
    #[serde(rename = "P_n")]
    budget: f64,
    #[serde(rename = "r_n")]
    rate: f64,
    #[serde(rename = "l_n")]
    length: usize,
    t_d: usize,
}

/// Writes an arrival record. Continuous DAs are stored by their rate cap, so
/// only DAs with a `[0, cap]` box on their window round-trip exactly.
pub fn write_arrivals_csv<W: std::io::Write>(das: &[Da], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for da in das {
        let row = match da {
            Da::Continuous(c) => {
                let cap = c.upper.iter().copied().fold(0.0, f64::max);
                ArrivalRow {
                    id: c.id,
                    t_a: c.arrival,
                    kind: "continuous".into(),
                    budget: c.budget,
                    rate: cap,
                    length: slots_needed(c.budget, cap),
                    t_d: c.deadline,
                }
            }
            Da::Discrete(d) => ArrivalRow {
                id: d.id,
                t_a: d.arrival,
                kind: "discrete".into(),
                budget: d.budget(),
                rate: d.rate,
                length: d.length,
                t_d: d.deadline,
            },
        };
        wtr.serialize(row)?;
    }
    wtr.flush().map_err(|e| Error::io("<arrivals>", e))?;
    Ok(())
}

pub fn read_arrivals_csv<R: Read>(reader: R, grid: TimeGrid) -> Result<Vec<Da>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: ArrivalRow = row?;
        let da = match row.kind.as_str() {
            "continuous" => Da::Continuous(ContinuousDa::with_rate_cap(
                row.id, row.t_a, row.t_d, row.budget, row.rate, grid,
            )),
            "discrete" => Da::Discrete(DiscreteDa {
                id: row.id,
                arrival: row.t_a,
                deadline: row.t_d,
                rate: row.rate,
                length: row.length,
            }),
            other => {
                return Err(Error::Parse {
                    line: out.len() + 2,
                    message: format!("unknown DA type {other:?}"),
                })
            }
        };
        out.push(da);
    }
    Ok(out)
}
