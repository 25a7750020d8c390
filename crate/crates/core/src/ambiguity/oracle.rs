//! Primal solvers used to certify the dual routes.
//!
//! Neither function shares code with the dual searches: the Wasserstein
//! oracle solves the finite transportation problem with one budget
//! constraint directly, and the f_k oracle builds an explicitly feasible
//! primal point from the stationarity conditions of the primal program.

use super::{f_k, fk_divergence, AmbiguityError, AmbiguitySpec};
use crate::measures::DiscreteMeasure;

pub const WASSERSTEIN_SIZE_LIMIT: usize = 1_000_000;
pub const FK_ATOM_LIMIT: usize = 12;

/// Exact optimum of
/// `min sum_ij xi_ij g(y_j)` s.t. `sum_j xi_ij = p_i`, `sum_ij xi_ij c(w_i, y_j) <= delta`.
///
/// Each atom's options `(c(w_i, y_j), g(y_j))` are reduced to the lower convex
/// hull starting at the atom itself; the LP then fills the budget with hull
/// segments in decreasing order of value drop per unit cost.
pub fn brute_force_wasserstein<G: Fn(&[f64]) -> f64>(
    g: G,
    center: &DiscreteMeasure,
    spec: &AmbiguitySpec,
    candidates: &[Vec<f64>],
) -> Result<f64, AmbiguityError> {
    let AmbiguitySpec::Wasserstein { delta, cost } = *spec else {
        return Err(AmbiguityError::WrongFamily("wasserstein"));
    };
    spec.validate()?;
    if candidates.is_empty() {
        return Err(AmbiguityError::EmptyCandidates);
    }
    let size = center.len() * candidates.len();
    if size > WASSERSTEIN_SIZE_LIMIT {
        return Err(AmbiguityError::SizeLimitExceeded { size, limit: WASSERSTEIN_SIZE_LIMIT });
    }
    let values: Vec<f64> = candidates.iter().map(|y| g(y)).collect();
    if let Some(j) = values.iter().position(|v| !v.is_finite()) {
        return Err(AmbiguityError::NonFiniteFunctionValue { point: j });
    }

    // (efficiency, mass-scaled cost, mass-scaled drop, atom, order along hull)
    let mut segments: Vec<(f64, f64, f64, usize, usize)> = Vec::new();
    let mut base = 0.0;
    for (i, (atom, &p)) in center.atoms().iter().zip(center.weights()).enumerate() {
        let start = candidates
            .iter()
            .position(|y| y.as_slice() == atom.as_slice())
            .ok_or(AmbiguityError::AtomNotInCandidates { atom: i })?;
        let g0 = values[start];
        base += p * g0;
        let mut options: Vec<(f64, f64)> = candidates
            .iter()
            .zip(&values)
            .map(|(y, &v)| (cost.eval(atom, y), v))
            .filter(|&(c, v)| c > 0.0 && v < g0)
            .collect();
        options.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        // lower-left convex hull from (0, g0)
        let mut hull: Vec<(f64, f64)> = vec![(0.0, g0)];
        for (c, v) in options {
            if v >= hull.last().unwrap().1 {
                continue;
            }
            while hull.len() >= 2 {
                let (c1, v1) = hull[hull.len() - 2];
                let (c2, v2) = hull[hull.len() - 1];
                // keep (c2, v2) only if it lies strictly below the chord
                if (v2 - v1) * (c - c1) >= (v - v1) * (c2 - c1) {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push((c, v));
        }
        for (s, w) in hull.windows(2).enumerate() {
            let dc = w[1].0 - w[0].0;
            let dv = w[0].1 - w[1].1;
            segments.push((dv / dc, p * dc, p * dv, i, s));
        }
    }
    segments.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.3.cmp(&b.3)).then(a.4.cmp(&b.4)));
    let mut budget = delta;
    let mut value = base;
    for (_, c, drop, _, _) in segments {
        if budget <= 0.0 {
            break;
        }
        if c <= budget {
            value -= drop;
            budget -= c;
        } else {
            value -= drop * budget / c;
            budget = 0.0;
        }
    }
    Ok(value)
}

/// Optimum of `min_q sum_i q_i g_i` over the simplex with
/// `sum_i p_i f_k(q_i / p_i) <= delta`.
///
/// For multiplier `nu` on the divergence the minimizing likelihood ratio is
/// `t_i = (1 + (k - 1)(tau - g_i)/nu)_+^{1/(k-1)}`, with `tau` fixing the
/// total mass. Both multipliers are found by bisection, the feasible side is
/// kept, and the objective is evaluated at that explicit primal point.
pub fn brute_force_fk<G: Fn(&[f64]) -> f64>(
    g: G,
    center: &DiscreteMeasure,
    spec: &AmbiguitySpec,
) -> Result<f64, AmbiguityError> {
    let AmbiguitySpec::FkDivergence { delta, k } = *spec else {
        return Err(AmbiguityError::WrongFamily("fk"));
    };
    spec.validate()?;
    if center.len() > FK_ATOM_LIMIT {
        return Err(AmbiguityError::SizeLimitExceeded { size: center.len(), limit: FK_ATOM_LIMIT });
    }
    let p = center.weights();
    let values: Vec<f64> = center.atoms().iter().map(|a| g(a)).collect();
    if let Some(j) = values.iter().position(|v| !v.is_finite()) {
        return Err(AmbiguityError::NonFiniteFunctionValue { point: j });
    }
    let mean: f64 = p.iter().zip(&values).map(|(a, b)| a * b).sum();
    let gmin = values.iter().copied().fold(f64::INFINITY, f64::min);
    let gmax = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if delta == 0.0 || gmax == gmin {
        return Ok(mean);
    }

    // all mass on the minimizers
    let p_min: f64 = p.iter().zip(&values).filter(|(_, &v)| v == gmin).map(|(w, _)| w).sum();
    let concentrated: Vec<f64> =
        p.iter().zip(&values).map(|(&w, &v)| if v == gmin { w / p_min } else { 0.0 }).collect();
    if fk_divergence(k, &concentrated, p) <= delta {
        return Ok(gmin);
    }

    let ratios = |nu: f64, tau: f64| -> Vec<f64> {
        values.iter().map(|&v| (1.0 + (k - 1.0) * (tau - v) / nu).max(0.0).powf(1.0 / (k - 1.0))).collect()
    };
    let primal_point = |nu: f64| -> Vec<f64> {
        let mass = |tau: f64| -> f64 { ratios(nu, tau).iter().zip(p).map(|(t, w)| t * w).sum() };
        let (mut lo, mut hi) = (gmin - nu / (k - 1.0), gmax);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mass(mid) < 1.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let t = ratios(nu, hi);
        let total: f64 = t.iter().zip(p).map(|(t, w)| t * w).sum();
        t.iter().zip(p).map(|(t, w)| t * w / total).collect()
    };
    let divergence = |nu: f64| fk_divergence(k, &primal_point(nu), p);

    let range = gmax - gmin;
    let (mut lo, mut hi) = (range, range);
    while divergence(hi) > delta {
        hi *= 2.0;
    }
    while divergence(lo) <= delta && lo > 1e-300 {
        lo *= 0.5;
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if divergence(mid) > delta {
            lo = mid
        } else {
            hi = mid
        }
    }
    let q = primal_point(hi);
    debug_assert!(q.iter().zip(p).map(|(x, w)| w * f_k(k, x / w)).sum::<f64>() <= delta + 1e-9);
    Ok(q.iter().zip(&values).map(|(x, v)| x * v).sum())
}
