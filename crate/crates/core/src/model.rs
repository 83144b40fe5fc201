//! Domain types for deferrable applications (DAs) and their feasible sets.
//!
//! Slots are 0-based: a day of `T` slots is indexed `0..T`. A continuous DA
//! may transmit in any slot where its upper rate bound is positive. A discrete
//! DA occupies `length` consecutive slots `s..s + length` with
//! `arrival <= s` and `s + length <= deadline`, so its deadline is exclusive
//! and it has `deadline - arrival - length + 1` placements.

use std::collections::HashSet;
use std::fmt;
use std::ops::{Deref, Range};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traffic::{ArrivalModel, BaseTrafficModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub slots: usize,
    /// Documentation only; the algorithms are unitless in time.
    #[serde(default = "default_slot_minutes")]
    pub slot_minutes: u32,
}

fn default_slot_minutes() -> u32 {
    30
}

impl TimeGrid {
    pub fn new(slots: usize) -> Self {
        Self {
            slots,
            slot_minutes: default_slot_minutes(),
        }
    }
}

/// Nonnegative traffic rate per slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TrafficProfile(Vec<f64>);

impl TrafficProfile {
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = rates
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::Invalid(format!(
                "traffic rate at slot {i} must be finite and nonnegative, got {v}"
            )));
        }
        Ok(Self(rates))
    }

    pub fn zeros(slots: usize) -> Self {
        Self(vec![0.0; slots])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl Deref for TrafficProfile {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for TrafficProfile {
    type Error = Error;

    fn try_from(rates: Vec<f64>) -> Result<Self> {
        Self::new(rates)
    }
}

impl From<TrafficProfile> for Vec<f64> {
    fn from(p: TrafficProfile) -> Self {
        p.0
    }
}

/// Interruptible DA that accepts any rate within per-slot bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousDa {
    pub id: u32,
    pub arrival: usize,
    /// Last slot (inclusive) in which the DA may transmit.
    pub deadline: usize,
    pub budget: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ContinuousDa {
    /// Box `[0, rate_cap]` on `arrival..=deadline`, clipped to the grid.
    pub fn with_rate_cap(
        id: u32,
        arrival: usize,
        deadline: usize,
        budget: f64,
        rate_cap: f64,
        grid: TimeGrid,
    ) -> Self {
        let deadline = deadline.min(grid.slots.saturating_sub(1));
        let upper = (0..grid.slots)
            .map(|t| {
                if (arrival..=deadline).contains(&t) {
                    rate_cap
                } else {
                    0.0
                }
            })
            .collect();
        Self {
            id,
            arrival,
            deadline,
            budget,
            lower: vec![0.0; grid.slots],
            upper,
        }
    }

    /// Smallest slot range containing every slot with a positive upper bound.
    pub fn window(&self) -> Range<usize> {
        let first = self.upper.iter().position(|&u| u > 0.0);
        let last = self.upper.iter().rposition(|&u| u > 0.0);
        match (first, last) {
            (Some(a), Some(b)) => a..b + 1,
            _ => 0..0,
        }
    }

    pub fn capacity(&self) -> f64 {
        self.upper.iter().sum()
    }
}

/// Non-interruptible DA that runs at a constant rate for `length` consecutive slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteDa {
    pub id: u32,
    pub arrival: usize,
    /// Exclusive: the last occupied slot is strictly before `deadline`.
    pub deadline: usize,
    pub rate: f64,
    pub length: usize,
}

impl DiscreteDa {
    /// Builds a DA from its total traffic; the length is rounded up and the
    /// budget snapped to `length * rate`.
    pub fn from_budget(id: u32, arrival: usize, deadline: usize, budget: f64, rate: f64) -> Self {
        Self {
            id,
            arrival,
            deadline,
            rate,
            length: slots_needed(budget, rate),
        }
    }

    pub fn budget(&self) -> f64 {
        self.length as f64 * self.rate
    }

    /// Number of placements when scheduling from the arrival slot on.
    pub fn placements(&self) -> usize {
        (self.deadline + 1).saturating_sub(self.arrival + self.length)
    }
}

/// `ceil(budget / rate)`, tolerant of budgets that are a whole multiple up to rounding.
pub fn slots_needed(budget: f64, rate: f64) -> usize {
    let ratio = budget / rate;
    let rounded = ratio.round();
    if (ratio - rounded).abs() <= 1e-9 * rounded.max(1.0) {
        rounded.max(1.0) as usize
    } else {
        ratio.ceil().max(1.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Da {
    Continuous(ContinuousDa),
    Discrete(DiscreteDa),
}

impl Da {
    pub fn id(&self) -> u32 {
        match self {
            Da::Continuous(c) => c.id,
            Da::Discrete(d) => d.id,
        }
    }

    pub fn arrival(&self) -> usize {
        match self {
            Da::Continuous(c) => c.arrival,
            Da::Discrete(d) => d.arrival,
        }
    }

    pub fn budget(&self) -> f64 {
        match self {
            Da::Continuous(c) => c.budget,
            Da::Discrete(d) => d.budget(),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Da::Discrete(_))
    }
}

/// The vertices of a discrete DA's feasible set: one rectangular block per start slot.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleSet {
    slots: usize,
    rate: f64,
    length: usize,
    starts: Vec<usize>,
}

impl FeasibleSet {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn start(&self, index: usize) -> usize {
        self.starts[index]
    }

    pub fn index_of_start(&self, start: usize) -> Option<usize> {
        self.starts.iter().position(|&s| s == start)
    }

    /// Slots touched by at least one vertex.
    pub fn span(&self) -> Range<usize> {
        match (self.starts.first(), self.starts.last()) {
            (Some(&a), Some(&b)) => a..b + self.length,
            _ => 0..0,
        }
    }

    pub fn vertex(&self, index: usize) -> TrafficProfile {
        let mut rates = vec![0.0; self.slots];
        let s = self.starts[index];
        rates[s..s + self.length].fill(self.rate);
        TrafficProfile(rates)
    }

    pub fn profiles(&self) -> Vec<TrafficProfile> {
        (0..self.len()).map(|a| self.vertex(a)).collect()
    }

    /// `⟨f_a, f_b⟩ = rate² · overlap(a, b)`, row-major.
    pub fn gram(&self) -> Vec<f64> {
        let n = self.len();
        let r2 = self.rate * self.rate;
        let mut g = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                let shift = self.starts[a].abs_diff(self.starts[b]);
                g[a * n + b] = r2 * self.length.saturating_sub(shift) as f64;
            }
        }
        g
    }

    /// `⟨f_a, y⟩` for every vertex.
    pub fn inner_products(&self, y: &[f64]) -> Vec<f64> {
        let mut prefix = Vec::with_capacity(self.slots + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for &v in y {
            acc += v;
            prefix.push(acc);
        }
        self.starts
            .iter()
            .map(|&s| self.rate * (prefix[s + self.length] - prefix[s]))
            .collect()
    }

    /// `Σ_a u_a f_a` as a dense profile.
    pub fn combine(&self, weights: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.slots];
        for (&s, &u) in self.starts.iter().zip(weights) {
            if u != 0.0 {
                let w = u * self.rate;
                for v in &mut out[s..s + self.length] {
                    *v += w;
                }
            }
        }
        out
    }
}

/// All placements of `da` that start no earlier than `from_slot`.
pub fn feasible_windows(da: &DiscreteDa, from_slot: usize, grid: TimeGrid) -> Result<FeasibleSet> {
    let first = da.arrival.max(from_slot);
    let end = da.deadline.min(grid.slots);
    if da.length == 0 || first + da.length > end {
        return Err(Error::EmptyFeasibleSet {
            da: da.id,
            from_slot,
        });
    }
    Ok(FeasibleSet {
        slots: grid.slots,
        rate: da.rate,
        length: da.length,
        starts: (first..=end - da.length).collect(),
    })
}

/// Convex-combination weights over the vertices of a [`FeasibleSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    pub const SUM_TOL: f64 = 1e-12;

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Invalid("simplex weights must be nonempty".into()));
        }
        if weights.iter().any(|&u| !u.is_finite() || u < 0.0) {
            return Err(Error::Invalid("simplex weights must be nonnegative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOL * weights.len() as f64 {
            return Err(Error::Invalid(format!("simplex weights sum to {sum}")));
        }
        Ok(Self(weights))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn indicator(n: usize, index: usize) -> Self {
        let mut w = vec![0.0; n];
        w[index] = 1.0;
        Self(w)
    }

    /// Clips tiny negatives and renormalizes output of a numerical solver.
    pub(crate) fn from_solver(mut weights: Vec<f64>) -> Self {
        for u in &mut weights {
            if *u < 0.0 {
                *u = 0.0;
            }
        }
        let sum: f64 = weights.iter().sum();
        if sum > 0.0 && sum != 1.0 {
            for u in &mut weights {
                *u /= sum;
            }
        }
        Self(weights)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the single vertex carrying all the mass, if any.
    pub fn pure_index(&self) -> Option<usize> {
        self.0.iter().position(|&u| u == 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgoParams {
    pub iterations: usize,
    pub bisection_tol: f64,
    pub simplex_tol: f64,
    pub simplex_max_iters: usize,
    /// Stop continuous-only runs once no profile entry moves by more than this.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub early_stop: Option<f64>,
}

impl Default for AlgoParams {
    fn default() -> Self {
        Self {
            iterations: 30,
            bisection_tol: 1e-10,
            simplex_tol: 1e-9,
            simplex_max_iters: 500,
            early_stop: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub grid: TimeGrid,
    pub base: BaseTrafficModel,
    #[serde(default)]
    pub continuous_das: Vec<ContinuousDa>,
    #[serde(default)]
    pub discrete_das: Vec<DiscreteDa>,
    /// Arrival process used by the online experiments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arrivals: Option<ArrivalModel>,
    #[serde(default)]
    pub algo: AlgoParams,
    #[serde(default)]
    pub seed: u64,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn population(&self) -> usize {
        self.continuous_das.len() + self.discrete_das.len()
    }

    /// Continuous DAs first, then discrete, in declaration order.
    pub fn das(&self) -> Vec<Da> {
        self.continuous_das
            .iter()
            .cloned()
            .map(Da::Continuous)
            .chain(self.discrete_das.iter().cloned().map(Da::Discrete))
            .collect()
    }

    pub fn with_das(mut self, das: &[Da]) -> Self {
        self.continuous_das.clear();
        self.discrete_das.clear();
        for da in das {
            match da {
                Da::Continuous(c) => self.continuous_das.push(c.clone()),
                Da::Discrete(d) => self.discrete_das.push(d.clone()),
            }
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub da: Option<u32>,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.da {
            Some(id) => write!(f, "DA {id}: {}", self.reason),
            None => write!(f, "{}", self.reason),
        }
    }
}

fn violation(da: Option<u32>, reason: impl Into<String>) -> Violation {
    Violation {
        da,
        reason: reason.into(),
    }
}

/// Checks a single continuous DA against a grid.
pub fn validate_continuous(da: &ContinuousDa, grid: TimeGrid) -> Vec<Violation> {
    let id = Some(da.id);
    let mut out = Vec::new();
    if da.lower.len() != grid.slots || da.upper.len() != grid.slots {
        out.push(violation(
            id,
            format!(
                "rate bounds must have {} entries (lower {}, upper {})",
                grid.slots,
                da.lower.len(),
                da.upper.len()
            ),
        ));
        return out;
    }
    if !(da.budget.is_finite() && da.budget > 0.0) {
        out.push(violation(id, format!("budget must be positive, got {}", da.budget)));
    }
    if da.arrival > da.deadline || da.deadline >= grid.slots {
        out.push(violation(
            id,
            format!("window {}..={} outside grid of {} slots", da.arrival, da.deadline, grid.slots),
        ));
    }
    for t in 0..grid.slots {
        let (lo, hi) = (da.lower[t], da.upper[t]);
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
            out.push(violation(id, format!("invalid rate bounds [{lo}, {hi}] at slot {t}")));
            break;
        }
        if hi > 0.0 && (t < da.arrival || t > da.deadline) {
            out.push(violation(id, format!("positive upper bound at slot {t} outside its window")));
            break;
        }
    }
    let min_total: f64 = da.lower.iter().sum();
    let capacity = da.capacity();
    if da.budget > capacity * (1.0 + 1e-12) {
        out.push(violation(
            id,
            format!("budget exceeds capacity ({} > {capacity})", da.budget),
        ));
    }
    if da.budget < min_total * (1.0 - 1e-12) {
        out.push(violation(
            id,
            format!("budget below guaranteed minimum ({} < {min_total})", da.budget),
        ));
    }
    out
}

/// Checks a single discrete DA against a grid.
pub fn validate_discrete(da: &DiscreteDa, grid: TimeGrid) -> Vec<Violation> {
    let id = Some(da.id);
    let mut out = Vec::new();
    if !(da.rate.is_finite() && da.rate > 0.0) {
        out.push(violation(id, format!("rate must be positive, got {}", da.rate)));
    }
    if da.length == 0 {
        out.push(violation(id, "length must be at least one slot"));
    }
    if da.deadline > grid.slots {
        out.push(violation(
            id,
            format!("deadline {} beyond grid of {} slots", da.deadline, grid.slots),
        ));
    }
    if da.length > 0 && da.placements() == 0 {
        out.push(violation(id, "empty feasible set"));
    }
    out
}

/// Every invariant violation in a scenario. An empty list means the scenario is valid.
/// False for NaN as well as for nonpositive values.
fn positive(x: f64) -> bool {
    x > 0.0
}

pub fn validate_scenario(s: &Scenario) -> Vec<Violation> {
    let mut out = Vec::new();
    let grid = s.grid;
    if grid.slots == 0 {
        out.push(violation(None, "grid must have at least one slot"));
        return out;
    }
    out.extend(s.base.validate(grid).into_iter().map(|r| violation(None, r)));
    if let Some(model) = &s.arrivals {
        out.extend(model.validate().into_iter().map(|r| violation(None, r)));
    }
    if s.population() == 0 && s.arrivals.is_none() {
        out.push(violation(None, "scenario has no deferrable applications"));
    }
    let a = &s.algo;
    if a.iterations == 0
        || a.simplex_max_iters == 0
        || !positive(a.bisection_tol)
        || !positive(a.simplex_tol)
        || a.early_stop.is_some_and(|e| e.is_nan() || e < 0.0)
    {
        out.push(violation(None, "algorithm parameters must be positive"));
    }
    let mut seen = HashSet::new();
    for da in &s.continuous_das {
        if !seen.insert(da.id) {
            out.push(violation(Some(da.id), "duplicate id"));
        }
        out.extend(validate_continuous(da, grid));
    }
    for da in &s.discrete_das {
        if !seen.insert(da.id) {
            out.push(violation(Some(da.id), "duplicate id"));
        }
        out.extend(validate_discrete(da, grid));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic::DeviationModel;

    fn discrete(arrival: usize, deadline: usize, length: usize) -> DiscreteDa {
        DiscreteDa {
            id: 7,
            arrival,
            deadline,
            rate: 3.0,
            length,
        }
    }

    fn starts(set: &FeasibleSet) -> Vec<usize> {
        set.starts().to_vec()
    }

    // The examples below are the 1-based cases shifted down by one slot.

    #[test]
    fn window_count_matches_placement_formula() {
        // t_a=1, t_d=5, l=2 -> A = 5 - 1 - 2 + 1 = 3
        let set = feasible_windows(&discrete(0, 4, 2), 0, TimeGrid::new(6)).unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(starts(&set), vec![0, 1, 2]);
        for p in set.profiles() {
            assert_eq!(p.total(), 6.0);
            assert_eq!(p.iter().filter(|&&v| v == 3.0).count(), 2);
        }
    }

    #[test]
    fn tight_deadline_forces_single_placement() {
        let set = feasible_windows(&discrete(0, 2, 2), 0, TimeGrid::new(4)).unwrap();
        assert_eq!(starts(&set), vec![0]);
    }

    #[test]
    fn later_from_slot_drops_earlier_starts() {
        let da = discrete(0, 4, 2);
        let grid = TimeGrid::new(6);
        let late = feasible_windows(&da, 2, grid).unwrap();
        assert_eq!(starts(&late), vec![2]);
        // brute force: every start s with s >= from and s + l <= deadline
        let brute: Vec<usize> = (0..grid.slots)
            .filter(|&s| s >= da.arrival && s >= 2 && s + da.length <= da.deadline)
            .collect();
        assert_eq!(starts(&late), brute);
    }

    #[test]
    fn empty_feasible_set_is_an_error() {
        let err = feasible_windows(&discrete(0, 4, 2), 3, TimeGrid::new(6)).unwrap_err();
        assert!(matches!(err, Error::EmptyFeasibleSet { da: 7, from_slot: 3 }));
        assert!(feasible_windows(&discrete(2, 3, 2), 0, TimeGrid::new(6)).is_err());
    }

    #[test]
    fn gram_and_inner_products_match_dense_vertices() {
        let set = feasible_windows(&discrete(1, 9, 3), 0, TimeGrid::new(10)).unwrap();
        let dense = set.profiles();
        let g = set.gram();
        let n = set.len();
        let y: Vec<f64> = (0..10).map(|t| (t as f64 * 0.7).sin()).collect();
        let c = set.inner_products(&y);
        for a in 0..n {
            let ca: f64 = dense[a].iter().zip(&y).map(|(x, y)| x * y).sum();
            assert!((ca - c[a]).abs() < 1e-12);
            for b in 0..n {
                let gab: f64 = dense[a].iter().zip(dense[b].iter()).map(|(x, y)| x * y).sum();
                assert_eq!(gab, g[a * n + b]);
            }
        }
    }

    #[test]
    fn length_is_rounded_up_and_budget_snapped() {
        let da = DiscreteDa::from_budget(1, 0, 20, 13.5, 3.0);
        assert_eq!(da.length, 5);
        assert_eq!(da.budget(), 15.0);
        assert_eq!(slots_needed(12.0, 3.0), 4);
        assert_eq!(slots_needed(12.000000000001, 3.0), 4);
    }

    fn base_scenario() -> Scenario {
        let grid = TimeGrid::new(8);
        Scenario {
            grid,
            base: BaseTrafficModel {
                mean: TrafficProfile::new(vec![5.0; 8]).unwrap(),
                deviation: DeviationModel::Cumulative { sigma2: 0.0 },
                clamp_at_zero: true,
            },
            continuous_das: vec![ContinuousDa::with_rate_cap(1, 0, 3, 6.0, 3.0, grid)],
            discrete_das: vec![discrete(2, 8, 3)],
            arrivals: None,
            algo: AlgoParams::default(),
            seed: 1,
        }
    }

    #[test]
    fn well_formed_scenario_has_no_violations() {
        assert!(validate_scenario(&base_scenario()).is_empty());
    }

    #[test]
    fn over_budget_continuous_da_is_reported() {
        let mut s = base_scenario();
        s.continuous_das[0].budget = 100.0;
        let v = validate_scenario(&s);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].da, Some(1));
        assert!(v[0].reason.contains("budget exceeds capacity"));
    }

    #[test]
    fn too_tight_discrete_da_is_reported() {
        let mut s = base_scenario();
        s.discrete_das[0] = discrete(2, 4, 3);
        let v = validate_scenario(&s);
        assert_eq!(v.len(), 1);
        assert!(v[0].reason.contains("empty feasible set"));
    }

    #[test]
    fn duplicate_ids_and_bad_bounds_are_reported() {
        let mut s = base_scenario();
        s.discrete_das[0].id = 1;
        s.continuous_das[0].upper[6] = 1.0;
        let v = validate_scenario(&s);
        assert!(v.iter().any(|v| v.reason == "duplicate id"));
        assert!(v.iter().any(|v| v.reason.contains("outside its window")));
    }

    #[test]
    fn scenario_json_round_trips_and_rejects_unknown_keys() {
        let s = base_scenario();
        let back = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
        let mut value: serde_json::Value = serde_json::from_str(&s.to_json()).unwrap();
        value["surprise"] = serde_json::json!(1);
        assert!(Scenario::from_json(&value.to_string()).is_err());
    }

    #[test]
    fn negative_profile_is_rejected() {
        assert!(TrafficProfile::new(vec![1.0, -0.5]).is_err());
        assert!(serde_json::from_str::<TrafficProfile>("[1.0, -2.0]").is_err());
    }
}
