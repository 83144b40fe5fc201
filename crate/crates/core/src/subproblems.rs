//! The three structured subproblems solved by every DA and by the coordinator.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{FeasibleSet, SimplexWeights};

/// Euclidean projection of `target` onto `{lower ≤ p ≤ upper, Σp = budget}`.
///
/// The solution is `p = clip(target + ν, lower, upper)` for the scalar `ν` that
/// meets the budget. `Σ clip(target + ν)` is piecewise linear in `ν`, so the
/// bracketing piece is found by bisection over the sorted breakpoints and the
/// root is then exact. `tol` is only the slack allowed in the feasibility check.
pub fn project_box_budget(
    target: &[f64],
    lower: &[f64],
    upper: &[f64],
    budget: f64,
    tol: f64,
) -> Result<Vec<f64>> {
    let n = target.len();
    if lower.len() != n || upper.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: lower.len().min(upper.len()),
        });
    }
    let min_total: f64 = lower.iter().sum();
    let max_total: f64 = upper.iter().sum();
    let slack = tol * budget.abs().max(1.0);
    if !(budget >= min_total - slack && budget <= max_total + slack) {
        return Err(Error::InfeasibleBudget {
            budget,
            min_total,
            max_total,
        });
    }
    if budget >= max_total {
        return Ok(upper.to_vec());
    }
    if budget <= min_total {
        return Ok(lower.to_vec());
    }

    let total_at = |nu: f64| -> f64 {
        (0..n)
            .map(|i| (target[i] + nu).clamp(lower[i], upper[i]))
            .sum()
    };
    let mut breaks: Vec<f64> = (0..n)
        .flat_map(|i| [lower[i] - target[i], upper[i] - target[i]])
        .collect();
    breaks.sort_unstable_by(f64::total_cmp);

    // Largest breakpoint index whose total is still ≤ budget.
    let (mut lo, mut hi) = (0usize, breaks.len() - 1);
    if total_at(breaks[lo]) > budget || total_at(breaks[hi]) < budget {
        unreachable!("budget lies strictly inside the attainable range");
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if total_at(breaks[mid]) <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (nu_lo, nu_hi) = (breaks[lo], breaks[hi]);
    // On (nu_lo, nu_hi) the total is fixed + free·ν.
    let mid = 0.5 * (nu_lo + nu_hi);
    let mut fixed = 0.0;
    let mut free = 0usize;
    for i in 0..n {
        let v = target[i] + mid;
        if v <= lower[i] {
            fixed += lower[i];
        } else if v >= upper[i] {
            fixed += upper[i];
        } else {
            fixed += target[i];
            free += 1;
        }
    }
    let nu = if free == 0 {
        nu_lo
    } else {
        ((budget - fixed) / free as f64).clamp(nu_lo, nu_hi)
    };
    Ok((0..n)
        .map(|i| (target[i] + nu).clamp(lower[i], upper[i]))
        .collect())
}

/// `argmin_{u ∈ Δ} ‖Σ_a u_a f_a − target‖²` over the vertices of `set`.
///
/// Primal active-set method on `½uᵀGu − cᵀu`. The vertices of a feasible set
/// are linearly independent, so every equality-constrained subproblem has a
/// positive definite Gram block and is solved exactly by Cholesky.
pub fn project_simplex_ls(
    set: &FeasibleSet,
    target: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<SimplexWeights> {
    let gram = set.gram();
    let c = set.inner_products(target);
    simplex_qp(&gram, &c, tol, max_iters)
}

/// Active-set solve of `min ½uᵀGu − cᵀu` over the probability simplex.
pub(crate) fn simplex_qp(gram: &[f64], c: &[f64], tol: f64, max_iters: usize) -> Result<SimplexWeights> {
    let n = c.len();
    if n == 1 {
        return Ok(SimplexWeights::indicator(1, 0));
    }
    let g = |a: usize, b: usize| gram[a * n + b];
    let grad = |u: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|a| {
                let mut s = -c[a];
                for (b, &ub) in u.iter().enumerate() {
                    if ub != 0.0 {
                        s += g(a, b) * ub;
                    }
                }
                s
            })
            .collect()
    };

    let first = (0..n)
        .min_by(|&a, &b| (0.5 * g(a, a) - c[a]).total_cmp(&(0.5 * g(b, b) - c[b])))
        .expect("nonempty");
    let mut u = vec![0.0; n];
    u[first] = 1.0;
    let mut active = vec![first];
    let mut residual = f64::INFINITY;

    for _ in 0..max_iters {
        // Equality-constrained minimizer on the active face.
        let m = active.len();
        let gs = DMatrix::from_fn(m, m, |i, j| g(active[i], active[j]));
        let chol = gs
            .cholesky()
            .ok_or_else(|| Error::Invalid("vertex Gram block is not positive definite".into()))?;
        let w1 = chol.solve(&DVector::from_fn(m, |i, _| c[active[i]]));
        let w2 = chol.solve(&DVector::from_element(m, 1.0));
        let mu = (w1.sum() - 1.0) / w2.sum();
        let v: Vec<f64> = (0..m).map(|i| w1[i] - mu * w2[i]).collect();

        if v.iter().all(|&x| x >= 0.0) {
            u.fill(0.0);
            for (i, &a) in active.iter().enumerate() {
                u[a] = v[i];
            }
            let gr = grad(&u);
            let level: f64 = u.iter().zip(&gr).map(|(x, y)| x * y).sum();
            let scale = gr.iter().fold(1.0f64, |s, x| s.max(x.abs()));
            let (entering, worst) = (0..n)
                .filter(|a| !active.contains(a))
                .map(|a| (a, gr[a] - level))
                .min_by(|x, y| x.1.total_cmp(&y.1))
                .unwrap_or((usize::MAX, 0.0));
            residual = (-worst).max(0.0) / scale;
            if residual <= tol {
                return Ok(SimplexWeights::from_solver(u));
            }
            active.push(entering);
        } else {
            // Step toward v until the first active weight hits zero.
            let mut alpha = 1.0f64;
            for (i, &a) in active.iter().enumerate() {
                if v[i] < u[a] {
                    alpha = alpha.min(u[a] / (u[a] - v[i]));
                }
            }
            for (i, &a) in active.iter().enumerate() {
                u[a] += alpha * (v[i] - u[a]);
            }
            let before = active.len();
            active.retain(|&a| u[a] > 1e-15);
            for (a, w) in u.iter_mut().enumerate() {
                if !active.contains(&a) {
                    *w = 0.0;
                }
            }
            if active.len() == before {
                // Roundoff kept every weight positive; drop the smallest.
                let (pos, _) = active
                    .iter()
                    .enumerate()
                    .min_by(|x, y| u[*x.1].total_cmp(&u[*y.1]))
                    .expect("nonempty");
                u[active[pos]] = 0.0;
                active.remove(pos);
            }
            let s: f64 = u.iter().sum();
            u.iter_mut().for_each(|x| *x /= s);
        }
    }
    Err(Error::MaxItersExceeded {
        solver: "simplex least squares",
        iterations: max_iters,
        residual,
        best: Box::new(u),
    })
}

/// Draws a vertex index with probability `weights[a]`.
pub fn sample_vertex<R: Rng + ?Sized>(weights: &SimplexWeights, rng: &mut R) -> usize {
    if let Some(a) = weights.pure_index() {
        return a;
    }
    WeightedIndex::new(weights.as_slice())
        .expect("simplex weights have positive mass")
        .sample(rng)
}

/// Unconstrained valley filling: `q(τ) = (total + Σ load)/H − load(τ)`.
///
/// The filled load `load + q` is constant. Entries of `q` may be negative.
pub fn valley_fill(load: &[f64], total: f64) -> Vec<f64> {
    if load.is_empty() {
        return Vec::new();
    }
    let level = (total + load.iter().sum::<f64>()) / load.len() as f64;
    load.iter().map(|&l| level - l).collect()
}

/// Valley filling with `q ≥ 0`: `q(τ) = max(0, c − load(τ))` with `Σq = total`.
pub fn valley_fill_nonneg(load: &[f64], total: f64) -> Vec<f64> {
    if load.is_empty() || total <= 0.0 {
        return vec![0.0; load.len()];
    }
    let mut sorted = load.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    // Raise the water level across the k lowest slots until the volume runs out.
    let mut prefix = 0.0;
    let mut level = sorted[0];
    for k in 1..=sorted.len() {
        prefix += sorted[k - 1];
        let candidate = (total + prefix) / k as f64;
        level = candidate;
        if k == sorted.len() || candidate <= sorted[k] {
            break;
        }
    }
    load.iter().map(|&l| (level - l).max(0.0)).collect()
}

/// Residuals of the first-order optimality conditions of a projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// Largest constraint violation.
    pub primal_residual: f64,
    /// Largest deviation of the gradient from the common multiplier on free coordinates.
    pub stationarity: f64,
    /// `⟨g, p⟩ − min_{p' feasible} ⟨g, p'⟩` with `g = p − target`.
    pub gap: f64,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.primal_residual.max(self.stationarity).max(self.gap)
    }
}

/// Optimality residuals of `p` as the projection of `target` onto the box-budget set.
pub fn kkt_box_budget(p: &[f64], target: &[f64], lower: &[f64], upper: &[f64], budget: f64) -> KktReport {
    let n = p.len();
    let mut primal = (p.iter().sum::<f64>() - budget).abs();
    for i in 0..n {
        primal = primal.max(lower[i] - p[i]).max(p[i] - upper[i]);
    }
    let g: Vec<f64> = (0..n).map(|i| p[i] - target[i]).collect();

    // Free coordinates share g = −ν.
    let free: Vec<usize> = (0..n).filter(|&i| p[i] > lower[i] && p[i] < upper[i]).collect();
    let stationarity = if free.is_empty() {
        // All at a bound: need max over raisable ≤ min over lowerable.
        let raisable = (0..n).filter(|&i| p[i] < upper[i]).map(|i| g[i]).fold(f64::INFINITY, f64::min);
        let lowerable = (0..n).filter(|&i| p[i] > lower[i]).map(|i| g[i]).fold(f64::NEG_INFINITY, f64::max);
        (lowerable - raisable).max(0.0)
    } else {
        let level = free.iter().map(|&i| g[i]).sum::<f64>() / free.len() as f64;
        let mut worst = free.iter().map(|&i| (g[i] - level).abs()).fold(0.0, f64::max);
        for i in 0..n {
            if p[i] <= lower[i] && p[i] < upper[i] {
                worst = worst.max(level - g[i]);
            } else if p[i] >= upper[i] && p[i] > lower[i] {
                worst = worst.max(g[i] - level);
            }
        }
        worst
    };

    let best = box_budget_linear_min(&g, lower, upper, budget);
    let current: f64 = (0..n).map(|i| g[i] * p[i]).sum();
    KktReport {
        primal_residual: primal.max(0.0),
        stationarity,
        gap: (current - best).max(0.0),
    }
}

/// `min ⟨g, p⟩` over the box-budget set: fill the cheapest slots first.
pub fn box_budget_linear_min(g: &[f64], lower: &[f64], upper: &[f64], budget: f64) -> f64 {
    let n = g.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| g[a].total_cmp(&g[b]));
    let mut left = budget - lower.iter().sum::<f64>();
    let mut best: f64 = (0..n).map(|i| g[i] * lower[i]).sum();
    for i in order {
        if left <= 0.0 {
            break;
        }
        let take = (upper[i] - lower[i]).min(left);
        best += g[i] * take;
        left -= take;
    }
    best
}

/// Optimality residuals of simplex weights for the least-squares fit of `target`.
pub fn kkt_simplex(set: &FeasibleSet, weights: &[f64], target: &[f64]) -> KktReport {
    let sum: f64 = weights.iter().sum();
    let primal = weights.iter().fold((sum - 1.0).abs(), |m, &u| m.max(-u));
    let p = set.combine(weights);
    let resid: Vec<f64> = p.iter().zip(target).map(|(x, y)| x - y).collect();
    let g = set.inner_products(&resid);
    let level: f64 = weights.iter().zip(&g).map(|(u, x)| u * x).sum();
    let min = g.iter().copied().fold(f64::INFINITY, f64::min);
    let stationarity = weights
        .iter()
        .zip(&g)
        .filter(|(u, _)| **u > 0.0)
        .map(|(_, x)| (x - level).abs())
        .fold(0.0, f64::max);
    KktReport {
        primal_residual: primal.max(0.0),
        stationarity,
        gap: (level - min).max(0.0),
    }
}
