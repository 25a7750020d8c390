use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::collections::HashMap;

use super::{AmbiguityError, Cost, InnerSolution};
use crate::measures::DiscreteMeasure;
use crate::search::golden_max;

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

/// Transport costs from each center atom to each candidate, with candidates
/// sorted lexicographically so that index order breaks ties.
#[derive(Debug, Clone)]
pub(super) struct TransportTable {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    home: Vec<usize>,
    costs: Vec<Vec<f64>>,
    /// Candidate indices by decreasing cost, then increasing index.
    order: Vec<Vec<u32>>,
    delta: f64,
}

/// Lower envelope of `lambda -> g_j + lambda c_j` over `lambda >= 0`.
struct Envelope {
    slope: Vec<f64>,
    intercept: Vec<f64>,
    point: Vec<usize>,
    /// `starts[k]` is where piece `k` takes over from piece `k - 1`.
    starts: Vec<f64>,
}

impl Envelope {
    fn build(order: &[u32], costs: &[f64], g: &[f64]) -> Self {
        let mut slope: Vec<f64> = Vec::new();
        let mut intercept: Vec<f64> = Vec::new();
        let mut point: Vec<usize> = Vec::new();
        for &j in order {
            let j = j as usize;
            let (s, b) = (costs[j], g[j]);
            if let Some(&last_s) = slope.last() {
                if last_s == s {
                    if b < *intercept.last().unwrap() {
                        slope.pop();
                        intercept.pop();
                        point.pop();
                    } else {
                        continue;
                    }
                }
            }
            while slope.len() >= 2 {
                let n = slope.len();
                let (s1, b1) = (slope[n - 2], intercept[n - 2]);
                let (s2, b2) = (slope[n - 1], intercept[n - 1]);
                let x_new = (b - b1) / (s1 - s);
                let x_12 = (b2 - b1) / (s1 - s2);
                if x_new <= x_12 {
                    slope.pop();
                    intercept.pop();
                    point.pop();
                } else {
                    break;
                }
            }
            slope.push(s);
            intercept.push(b);
            point.push(j);
        }
        // drop pieces that are only optimal for negative lambda
        let mut starts: Vec<f64> = Vec::with_capacity(slope.len());
        starts.push(f64::NEG_INFINITY);
        for k in 1..slope.len() {
            starts.push((intercept[k] - intercept[k - 1]) / (slope[k - 1] - slope[k]));
        }
        let first = (0..slope.len()).find(|&k| k + 1 == slope.len() || starts[k + 1] > 0.0).unwrap_or(0);
        let mut env = Envelope {
            slope: slope.split_off(first),
            intercept: intercept.split_off(first),
            point: point.split_off(first),
            starts: starts.split_off(first),
        };
        env.starts[0] = f64::NEG_INFINITY;
        env
    }

    /// Piece active just to the right of `lambda` (lowest cost on ties).
    fn right(&self, lambda: f64) -> usize {
        self.starts[1..].partition_point(|&s| s <= lambda)
    }

    /// Piece active just to the left of `lambda` (highest cost on ties).
    fn left(&self, lambda: f64) -> usize {
        self.starts[1..].partition_point(|&s| s < lambda)
    }

    fn value(&self, lambda: f64) -> f64 {
        let k = self.right(lambda);
        self.intercept[k] + self.slope[k] * lambda
    }
}

impl TransportTable {
    pub(super) fn new(
        center: &DiscreteMeasure,
        candidates: &[Vec<f64>],
        cost: Cost,
        delta: f64,
    ) -> Result<Self, AmbiguityError> {
        let dim = center.dim();
        if let Some(c) = candidates.iter().find(|c| c.len() != dim) {
            return Err(AmbiguityError::DimensionMismatch { center: dim, candidates: c.len() });
        }
        let mut points: Vec<Vec<f64>> = candidates.to_vec();
        points.sort_by(|a, b| lex_cmp(a, b));
        points.dedup_by(|a, b| lex_cmp(a, b) == Ordering::Equal);
        let index: HashMap<Vec<u64>, usize> =
            points.iter().enumerate().map(|(i, p)| (p.iter().map(|v| v.to_bits()).collect(), i)).collect();
        let mut home = Vec::with_capacity(center.len());
        for (i, atom) in center.atoms().iter().enumerate() {
            let key: Vec<u64> = atom.iter().map(|v| v.to_bits()).collect();
            match index.get(&key) {
                Some(&j) => home.push(j),
                None => return Err(AmbiguityError::AtomNotInCandidates { atom: i }),
            }
        }
        let costs: Vec<Vec<f64>> =
            center.atoms().iter().map(|a| points.iter().map(|y| cost.eval(a, y)).collect()).collect();
        let order = costs
            .iter()
            .map(|c| {
                let mut idx: Vec<u32> = (0..points.len() as u32).collect();
                idx.sort_by(|&x, &y| c[y as usize].total_cmp(&c[x as usize]).then(x.cmp(&y)));
                idx
            })
            .collect();
        Ok(Self { points, weights: center.weights().to_vec(), home, costs, order, delta })
    }

    pub(super) fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    fn center_solution(&self, g: &[f64]) -> InnerSolution {
        let value = self.weights.iter().zip(&self.home).map(|(p, &h)| p * g[h]).sum();
        let mut mass: BTreeMap<usize, f64> = BTreeMap::new();
        for (p, &h) in self.weights.iter().zip(&self.home) {
            *mass.entry(h).or_default() += p;
        }
        InnerSolution { value, dual_point: 0.0, mass: mass.into_iter().collect(), certificate_gap: 0.0 }
    }

    pub(super) fn solve(&self, g: &[f64], lambda_tol: f64) -> InnerSolution {
        let (gmin, gmax) = g.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let range = gmax - gmin;
        if self.delta == 0.0 || range == 0.0 {
            return self.center_solution(g);
        }
        let envelopes: Vec<Envelope> =
            self.order.iter().zip(&self.costs).map(|(o, c)| Envelope::build(o, c, g)).collect();
        let delta = self.delta;
        let weights = &self.weights;
        let objective = |lambda: f64| -> f64 {
            let inner: f64 = envelopes.iter().zip(weights).map(|(e, p)| p * e.value(lambda)).sum();
            inner - lambda * delta
        };
        let lambda_max = range / delta;
        let run = golden_max(objective, 0.0, lambda_max, lambda_tol);
        let (mut lambda_star, mut value) = (run.argmax, run.max);

        // the objective is piecewise linear: intersect the pieces active at
        // the two bracket ends
        let line = |lambda: f64, right: bool| -> (f64, f64) {
            envelopes.iter().zip(weights).fold((-delta, 0.0), |(s, b), (e, p)| {
                let k = if right { e.right(lambda) } else { e.left(lambda) };
                (s + p * e.slope[k], b + p * e.intercept[k])
            })
        };
        let (sa, ia) = line(run.lo, true);
        let (sb, ib) = line(run.hi, false);
        if sa > sb {
            let x = (ib - ia) / (sa - sb);
            if x.is_finite() && x >= 0.0 && x <= lambda_max {
                let fx = objective(x);
                if fx > value {
                    value = fx;
                    lambda_star = x;
                }
            }
        }

        let mass = self.extract(&envelopes, lambda_star);
        let primal: f64 = mass.iter().map(|&(j, m)| m * g[j]).sum();
        InnerSolution { value, dual_point: lambda_star, mass, certificate_gap: primal - value }
    }

    /// Budget-exact transport plan at `lambda`: every atom goes to its
    /// cheapest minimizer, then atoms switch (in index order) to their
    /// costliest minimizer until the budget binds, splitting one atom.
    fn extract(&self, envelopes: &[Envelope], lambda: f64) -> Vec<(usize, f64)> {
        let eps = 1e-9 * (1.0 + lambda);
        let low: Vec<usize> = envelopes.iter().map(|e| e.point[e.right(lambda + eps)]).collect();
        let high: Vec<usize> =
            if lambda > eps { envelopes.iter().map(|e| e.point[e.left(lambda - eps)]).collect() } else { low.clone() };
        let mut mass: BTreeMap<usize, f64> = BTreeMap::new();
        let low_cost: f64 = (0..self.weights.len()).map(|i| self.weights[i] * self.costs[i][low[i]]).sum();
        if low_cost > self.delta {
            // only reachable through rounding; shrink toward staying put
            let theta = self.delta / low_cost;
            for i in 0..self.weights.len() {
                *mass.entry(low[i]).or_default() += theta * self.weights[i];
                *mass.entry(self.home[i]).or_default() += (1.0 - theta) * self.weights[i];
            }
        } else {
            let mut remaining = self.delta - low_cost;
            for i in 0..self.weights.len() {
                let p = self.weights[i];
                let extra = p * (self.costs[i][high[i]] - self.costs[i][low[i]]);
                let theta = if extra <= 0.0 {
                    0.0
                } else if extra <= remaining {
                    1.0
                } else {
                    remaining / extra
                };
                remaining = (remaining - theta * extra).max(0.0);
                if theta > 0.0 {
                    *mass.entry(high[i]).or_default() += theta * p;
                }
                if theta < 1.0 {
                    *mass.entry(low[i]).or_default() += (1.0 - theta) * p;
                }
            }
        }
        mass.into_iter().filter(|&(_, m)| m > 0.0).collect()
    }

    /// Transport cost of a plan given as per-atom rows over candidates.
    #[cfg(test)]
    pub(super) fn cost_between(&self, atom: usize, point: usize) -> f64 {
        self.costs[atom][point]
    }
}
