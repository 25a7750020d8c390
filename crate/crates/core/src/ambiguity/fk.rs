use super::{c_k, fk_divergence, InnerSolution};
use crate::search::golden_max;

/// Cressie-Read dual on the center atoms.
pub(super) fn solve(k: f64, delta: f64, weights: &[f64], g: &[f64], eta_tol: f64) -> InnerSolution {
    let expectation: f64 = weights.iter().zip(g).map(|(p, v)| p * v).sum();
    let (gmin, gmax) = g.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = gmax - gmin;
    if delta == 0.0 || range == 0.0 {
        let mass = weights.iter().copied().enumerate().filter(|&(_, m)| m > 0.0).collect();
        return InnerSolution { value: expectation, dual_point: 0.0, mass, certificate_gap: 0.0 };
    }
    let kp = k / (k - 1.0);
    let ck = c_k(k, delta);
    let objective = |eta: f64| -> f64 {
        let moment: f64 = weights
            .iter()
            .zip(g)
            .map(|(p, v)| {
                let d = eta - v;
                if d > 0.0 {
                    p * d.powf(kp)
                } else {
                    0.0
                }
            })
            .sum();
        eta - ck * moment.powf(1.0 / kp)
    };
    let slope = |eta: f64| -> f64 {
        let (m, m1) = weights.iter().zip(g).fold((0.0, 0.0), |(m, m1), (p, v)| {
            let d = eta - v;
            if d > 0.0 {
                (m + p * d.powf(kp), m1 + p * d.powf(kp - 1.0))
            } else {
                (m, m1)
            }
        });
        if m == 0.0 {
            1.0
        } else {
            1.0 - ck * m.powf(1.0 / kp - 1.0) * m1
        }
    };

    // the maximizer can sit far above max g when delta is small
    let lo = gmin - range;
    let mut reach = range;
    let mut doublings = 0;
    while slope(gmax + reach) > 0.0 && doublings < 200 {
        reach *= 2.0;
        doublings += 1;
    }
    let run = golden_max(objective, lo, gmax + reach, eta_tol);
    let (mut eta_star, mut value) = (run.argmax, run.max);

    // all mass on the minimizers of g is feasible exactly when
    // c_k P_min^{1/k'} >= 1; the dual then attains min g at eta = min g
    let p_min: f64 = weights.iter().zip(g).filter(|(_, &v)| v == gmin).map(|(p, _)| p).sum();
    let concentrated = ck * p_min.powf(1.0 / kp) >= 1.0;
    let at_min = objective(gmin);
    if at_min >= value {
        value = at_min;
        eta_star = gmin;
    }

    let mut q: Vec<f64> = if concentrated {
        weights.iter().zip(g).map(|(p, &v)| if v == gmin { *p } else { 0.0 }).collect()
    } else {
        weights
            .iter()
            .zip(g)
            .map(|(p, v)| {
                let d = eta_star - v;
                if d > 0.0 {
                    p * d.powf(kp - 1.0)
                } else {
                    0.0
                }
            })
            .collect()
    };
    let total: f64 = q.iter().sum();
    if total > 0.0 {
        q.iter_mut().for_each(|x| *x /= total);
    } else {
        q = weights.to_vec();
    }
    // pull back toward the center if rounding left the ball
    if fk_divergence(k, &q, weights) > delta {
        let (mut a, mut b) = (0.0f64, 1.0f64);
        let mix =
            |t: f64, q: &[f64]| -> Vec<f64> { q.iter().zip(weights).map(|(x, p)| (1.0 - t) * x + t * p).collect() };
        for _ in 0..100 {
            let t = 0.5 * (a + b);
            if fk_divergence(k, &mix(t, &q), weights) > delta {
                a = t
            } else {
                b = t
            }
        }
        q = mix(b, &q);
    }
    let primal: f64 = q.iter().zip(g).map(|(x, v)| x * v).sum();
    let mass = q.into_iter().enumerate().filter(|&(_, m)| m > 0.0).collect();
    InnerSolution { value, dual_point: eta_star, mass, certificate_gap: primal - value }
}
