//! Robust Bellman operators on grid value functions and value iteration.
//!
//! With `g_{x,a}(w) = v(f(x, a, w))` the two operators are
//!
//! ```text
//! CAA: (Tv)(x) = max_a [ r(x,a) + alpha inf_psi E_psi g_{x,a} ]
//! CAU: (Tv)(x) = sup_phi inf_psi sum_a phi_a [ r(x,a) + alpha E_psi g_{x,a} ]
//! ```
//!
//! Both are alpha-contractions in the sup norm.

mod grid;

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grid::{default_nodes, GridValueFunction, Policy, PolicyRule};

use crate::ambiguity::{AmbiguityError, AmbiguitySpec, DualTolerances, InnerProblem, InnerSolution};
use crate::measures::DiscreteMeasure;
use crate::models::ControlProblem;
use crate::search::golden_max;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Adversary {
    /// Sees the current action.
    Caa,
    /// Does not see the current action.
    Cau,
}

/// Outcome of value iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_residual: f64,
    /// `final_residual * alpha / (1 - alpha)`.
    pub error_bound: f64,
    pub wall_time: f64,
    /// Largest duality-gap estimate of the CAU outer maximization in the
    /// last sweep (0 for CAA).
    pub outer_gap: f64,
}

#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub value: GridValueFunction,
    pub policy: Policy,
    pub report: SolveReport,
}

#[derive(Debug, Error)]
pub enum BellmanError {
    #[error(transparent)]
    Ambiguity(#[from] AmbiguityError),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("grid has {found} values, expected {expected}")]
    GridMismatch { expected: usize, found: usize },
    #[error("value {value} at node {node} outside [0, {bound}]")]
    ValueOutOfRange { node: usize, value: f64, bound: f64 },
    #[error("outer maximization at node {node} stopped with duality gap estimate {gap}")]
    NonConvergedOuter { node: usize, gap: f64 },
    #[error(
        "value iteration stopped after {} iterations with residual {}",
        .0.report.iterations,
        .0.report.final_residual
    )]
    NonConverged(Box<FixedPoint>),
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
}

/// Settings of the CAU outer maximization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuterOptions {
    /// Mirror-ascent iterations for more than two actions.
    #[serde(default = "default_outer_iters")]
    pub outer_iters: usize,
    /// Golden-section tolerance on `phi_0` for two actions.
    #[serde(default = "default_phi_tol")]
    pub phi_tol: f64,
    /// Largest accepted duality-gap estimate.
    #[serde(default = "default_outer_gap_tol")]
    pub outer_gap_tol: f64,
}

fn default_outer_iters() -> usize {
    400
}

fn default_phi_tol() -> f64 {
    1e-10
}

fn default_outer_gap_tol() -> f64 {
    1e-3
}

impl Default for OuterOptions {
    fn default() -> Self {
        Self { outer_iters: default_outer_iters(), phi_tol: default_phi_tol(), outer_gap_tol: default_outer_gap_tol() }
    }
}

/// `10 * ceil(log(beta r_max / tol) / log(1 / alpha))`.
pub fn default_max_iters(problem: &ControlProblem, tol: f64) -> usize {
    let ratio = (problem.beta() * problem.r_max() / tol).max(std::f64::consts::E);
    let n = (ratio.ln() / (1.0 / problem.discount()).ln()).ceil();
    (10.0 * n).max(1.0) as usize
}

const MEMO_CAPACITY: usize = 4096;
const CUTTING_PLANE_ITERS: usize = 100;

/// `max_phi min_k phi . cuts[k]` over the simplex, with its maximizer.
fn cutting_plane_step(cuts: &[Vec<f64>]) -> Option<(f64, Vec<f64>)> {
    use minilp::{ComparisonOp, OptimizationDirection, Problem};
    let m = cuts.first()?.len();
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let t = lp.add_var(1.0, (f64::NEG_INFINITY, f64::INFINITY));
    let phi: Vec<_> = (0..m).map(|_| lp.add_var(0.0, (0.0, 1.0))).collect();
    lp.add_constraint(phi.iter().map(|&v| (v, 1.0)).collect::<minilp::LinearExpr>(), ComparisonOp::Eq, 1.0);
    for cut in cuts {
        let mut row: minilp::LinearExpr = phi.iter().zip(cut).map(|(&v, &c)| (v, -c)).collect();
        row.add(t, 1.0);
        lp.add_constraint(row, ComparisonOp::Le, 0.0);
    }
    let sol = lp.solve().ok()?;
    Some((sol.objective(), phi.iter().map(|&v| sol[v].max(0.0)).collect()))
}

/// Cache of inner solves keyed by the exact bits of the input values.
struct Memo<T> {
    map: Mutex<HashMap<Vec<u64>, T>>,
}

impl<T: Clone> Memo<T> {
    fn new() -> Self {
        Self { map: Mutex::new(HashMap::new()) }
    }

    fn get_or<F>(&self, key: Vec<u64>, compute: F) -> Result<T, BellmanError>
    where
        F: FnOnce() -> Result<T, BellmanError>,
    {
        if let Some(v) = self.map.lock().unwrap().get(&key) {
            return Ok(v.clone());
        }
        let v = compute()?;
        let mut map = self.map.lock().unwrap();
        if map.len() < MEMO_CAPACITY {
            map.insert(key, v.clone());
        }
        Ok(v)
    }
}

fn bits(values: &[f64]) -> Vec<u64> {
    values.iter().map(|v| v.to_bits()).collect()
}

/// Result of the CAU outer problem at one node.
#[derive(Debug, Clone)]
struct MixedSolution {
    value: f64,
    phi: Vec<f64>,
    gap: f64,
}

/// The robust Bellman machinery for one problem, ambiguity set and center.
pub struct Bellman<'a> {
    problem: &'a ControlProblem,
    inner: InnerProblem,
    outer: OuterOptions,
}

impl<'a> Bellman<'a> {
    /// `candidates` is the Wasserstein candidate set (ignored for f_k);
    /// `None` selects the problem's default grid plus center atoms.
    pub fn new(
        problem: &'a ControlProblem,
        spec: AmbiguitySpec,
        center: DiscreteMeasure,
        candidates: Option<&[Vec<f64>]>,
        tol: DualTolerances,
    ) -> Result<Self, BellmanError> {
        if center.dim() != problem.noise_dim() {
            return Err(
                AmbiguityError::DimensionMismatch { center: center.dim(), candidates: problem.noise_dim() }.into()
            );
        }
        let inner = match (spec.is_wasserstein(), candidates) {
            (true, Some(c)) => InnerProblem::new(spec, center, c, tol)?,
            (true, None) => {
                let c = problem.default_candidates(&center);
                InnerProblem::new(spec, center, &c, tol)?
            }
            (false, _) => InnerProblem::new(spec, center, &[], tol)?,
        };
        Ok(Self { problem, inner, outer: OuterOptions::default() })
    }

    pub fn with_outer(mut self, outer: OuterOptions) -> Self {
        self.outer = outer;
        self
    }

    pub fn problem(&self) -> &ControlProblem {
        self.problem
    }

    pub fn inner(&self) -> &InnerProblem {
        &self.inner
    }

    /// Upper end of the admissible value range.
    pub fn value_bound(&self) -> f64 {
        self.problem.beta() * self.problem.r_max() + 1e-6
    }

    fn check_grid(&self, v: &GridValueFunction) -> Result<(), BellmanError> {
        if v.dim() != self.problem.state_dim() {
            return Err(BellmanError::InvalidGrid(format!(
                "value function has dimension {}, problem has {}",
                v.dim(),
                self.problem.state_dim()
            )));
        }
        Ok(())
    }

    /// `g_{x,a}` on the inner evaluation points.
    pub fn continuation(&self, v: &GridValueFunction, x: &[f64], a: usize) -> Vec<f64> {
        let mut next = vec![0.0; self.problem.state_dim()];
        self.inner
            .points()
            .iter()
            .map(|w| {
                self.problem.step_into(x, a, w, &mut next);
                v.eval(&next)
            })
            .collect()
    }

    fn check_range(&self, values: &[f64]) -> Result<(), BellmanError> {
        let bound = self.value_bound();
        for (node, &value) in values.iter().enumerate() {
            if !(value >= -1e-6 && value <= bound) {
                return Err(BellmanError::ValueOutOfRange { node, value, bound });
            }
        }
        Ok(())
    }

    /// CAA operator; the policy is the greedy action, ties to the lowest
    /// index.
    pub fn apply_caa(&self, v: &GridValueFunction) -> Result<(GridValueFunction, Policy), BellmanError> {
        self.check_grid(v)?;
        let nodes = v.nodes();
        let alpha = self.problem.discount();
        let memo: Memo<f64> = Memo::new();
        let results: Vec<(f64, usize)> = nodes
            .par_iter()
            .map(|x| {
                let mut best = (f64::NEG_INFINITY, 0);
                for a in 0..self.problem.num_actions() {
                    let g = self.continuation(v, x, a);
                    let inf = memo.get_or(bits(&g), || Ok(self.inner.solve(&g)?.value))?;
                    let q = self.problem.reward(x, a) + alpha * inf;
                    if q > best.0 {
                        best = (q, a);
                    }
                }
                Ok(best)
            })
            .collect::<Result<_, BellmanError>>()?;
        let values: Vec<f64> = results.iter().map(|r| r.0).collect();
        self.check_range(&values)?;
        let policy = Policy::new(
            v.axes().to_vec(),
            self.problem.num_actions(),
            PolicyRule::Deterministic(results.iter().map(|r| r.1).collect()),
        )?;
        Ok((v.with_values(values)?, policy))
    }

    /// `r(x,a) + alpha g_{x,a}` for every action, the CAU payoff rows.
    fn payoff_rows(&self, v: &GridValueFunction, x: &[f64]) -> Vec<Vec<f64>> {
        let alpha = self.problem.discount();
        (0..self.problem.num_actions())
            .map(|a| {
                let r = self.problem.reward(x, a);
                self.continuation(v, x, a).into_iter().map(|g| r + alpha * g).collect()
            })
            .collect()
    }

    fn mix(rows: &[Vec<f64>], phi: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; rows[0].len()];
        for (row, &p) in rows.iter().zip(phi) {
            if p != 0.0 {
                for (hj, rj) in h.iter_mut().zip(row) {
                    *hj += p * rj;
                }
            }
        }
        h
    }

    /// `sup_phi inf_psi sum_a phi_a E_psi rows[a]`.
    fn solve_mixed(&self, rows: &[Vec<f64>]) -> Result<MixedSolution, BellmanError> {
        let m = rows.len();
        let solve =
            |phi: &[f64]| -> Result<InnerSolution, BellmanError> { Ok(self.inner.solve(&Self::mix(rows, phi))?) };
        // upper bound on the value from a best response to psi
        let response = |sol: &InnerSolution| rows.iter().map(|r| sol.expect(r)).fold(f64::NEG_INFINITY, f64::max);
        if m == 1 {
            let sol = solve(&[1.0])?;
            return Ok(MixedSolution { value: sol.value, phi: vec![1.0], gap: 0.0 });
        }
        if m == 2 {
            let mut err = None;
            let run = golden_max(
                |t| match solve(&[t, 1.0 - t]) {
                    Ok(s) => s.value,
                    Err(e) => {
                        err.get_or_insert(e);
                        f64::NEG_INFINITY
                    }
                },
                0.0,
                1.0,
                self.outer.phi_tol,
            );
            if let Some(e) = err {
                return Err(e);
            }
            let phi = vec![run.argmax, 1.0 - run.argmax];
            let sol = solve(&phi)?;
            let gap = (response(&sol) - sol.value).max(0.0);
            // a kink at the optimum makes `response` loose; the bracket bounds the error instead
            let gap = gap.min(2.0 * (run.hi - run.lo) * rows.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs())));
            return Ok(MixedSolution { value: sol.value, phi, gap });
        }

        // every inner solution psi gives the cut phi . E_psi[rows] >= f(phi);
        // cutting planes run first, entropic mirror ascent with averaging
        // takes over if they stall
        let mut best: (f64, Vec<f64>) = (f64::NEG_INFINITY, vec![]);
        let mut cuts: Vec<Vec<f64>> = Vec::new();
        let consider = |phi: Vec<f64>, sol: &InnerSolution, best: &mut (f64, Vec<f64>), cuts: &mut Vec<Vec<f64>>| {
            let grad: Vec<f64> = rows.iter().map(|r| sol.expect(r)).collect();
            if sol.value > best.0 {
                *best = (sol.value, phi);
            }
            cuts.push(grad.clone());
            grad
        };
        let converged = |upper: f64, best: f64| upper - best <= 1e-12 * (1.0 + best.abs());
        let cutting_planes = |best: &mut (f64, Vec<f64>), cuts: &mut Vec<Vec<f64>>| -> Result<f64, BellmanError> {
            let mut upper = f64::INFINITY;
            for _ in 0..CUTTING_PLANE_ITERS {
                let Some((bound, phi)) = cutting_plane_step(cuts) else { break };
                upper = upper.min(bound);
                if converged(upper, best.0) {
                    break;
                }
                let sol = solve(&phi)?;
                consider(phi, &sol, best, cuts);
            }
            Ok(upper)
        };
        for a in 0..m {
            let mut phi = vec![0.0; m];
            phi[a] = 1.0;
            let sol = solve(&phi)?;
            consider(phi, &sol, &mut best, &mut cuts);
        }
        let mut upper = cutting_planes(&mut best, &mut cuts)?;
        if !converged(upper, best.0) {
            let mut phi = vec![1.0 / m as f64; m];
            let mut avg = vec![0.0; m];
            for t in 1..=self.outer.outer_iters {
                let sol = solve(&phi)?;
                let grad = consider(phi.clone(), &sol, &mut best, &mut cuts);
                let mean = grad.iter().sum::<f64>() / m as f64;
                let scale = grad.iter().map(|g| (g - mean).abs()).fold(0.0, f64::max);
                for (a, p) in avg.iter_mut().zip(&phi) {
                    *a += p;
                }
                if scale == 0.0 {
                    break;
                }
                let step = 0.5 / (t as f64).sqrt();
                let logits: Vec<f64> = phi.iter().zip(&grad).map(|(p, g)| p.ln() + step * (g - mean) / scale).collect();
                let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
                let z: f64 = e.iter().sum();
                phi = e.iter().map(|v| (v / z).max(1e-300)).collect();
            }
            let z: f64 = avg.iter().sum();
            if z > 0.0 {
                let avg: Vec<f64> = avg.iter().map(|a| a / z).collect();
                let sol = solve(&avg)?;
                consider(avg, &sol, &mut best, &mut cuts);
            }
            upper = upper.min(cutting_planes(&mut best, &mut cuts)?);
        }
        let (value, phi) = best;
        let total: f64 = phi.iter().map(|p| p.max(0.0)).sum();
        let phi = phi.iter().map(|p| p.max(0.0) / total).collect();
        Ok(MixedSolution { value, phi, gap: (upper - value).max(0.0) })
    }

    fn cau_nodes(&self, v: &GridValueFunction) -> Result<Vec<MixedSolution>, BellmanError> {
        self.check_grid(v)?;
        let memo: Memo<MixedSolution> = Memo::new();
        v.nodes()
            .par_iter()
            .map(|x| {
                let rows = self.payoff_rows(v, x);
                let key: Vec<u64> = rows.iter().flat_map(|r| bits(r)).collect();
                memo.get_or(key, || self.solve_mixed(&rows))
            })
            .collect()
    }

    /// CAU operator with the maximizing mixture per node; also returns the
    /// largest outer duality-gap estimate.
    pub fn apply_cau_with_gap(&self, v: &GridValueFunction) -> Result<(GridValueFunction, Policy, f64), BellmanError> {
        if self.problem.num_actions() == 1 {
            let (value, policy) = self.apply_caa(v)?;
            let n = value.len();
            let policy = Policy::new(policy.axes().to_vec(), 1, PolicyRule::Randomized(vec![vec![1.0]; n]))?;
            return Ok((value, policy, 0.0));
        }
        let sols = self.cau_nodes(v)?;
        let mut max_gap = 0.0f64;
        for (node, s) in sols.iter().enumerate() {
            if s.gap > self.outer.outer_gap_tol {
                return Err(BellmanError::NonConvergedOuter { node, gap: s.gap });
            }
            max_gap = max_gap.max(s.gap);
        }
        let values: Vec<f64> = sols.iter().map(|s| s.value).collect();
        self.check_range(&values)?;
        let policy = Policy::new(
            v.axes().to_vec(),
            self.problem.num_actions(),
            PolicyRule::Randomized(sols.into_iter().map(|s| s.phi).collect()),
        )?;
        Ok((v.with_values(values)?, policy, max_gap))
    }

    pub fn apply_cau(&self, v: &GridValueFunction) -> Result<(GridValueFunction, Policy), BellmanError> {
        self.apply_cau_with_gap(v).map(|(v, p, _)| (v, p))
    }

    pub fn apply(&self, adversary: Adversary, v: &GridValueFunction) -> Result<GridValueFunction, BellmanError> {
        match adversary {
            Adversary::Caa => self.apply_caa(v).map(|r| r.0),
            Adversary::Cau => self.apply_cau(v).map(|r| r.0),
        }
    }

    /// Value iteration from `initial` (all zeros on the grid when built with
    /// [`GridValueFunction::uniform`]) until the sup-norm update is at most
    /// `tol`.
    pub fn solve_fixed_point(
        &self,
        adversary: Adversary,
        initial: GridValueFunction,
        tol: f64,
        max_iters: Option<usize>,
    ) -> Result<FixedPoint, BellmanError> {
        if !(tol > 0.0) {
            return Err(BellmanError::InvalidOptions(format!("tol must be positive, got {tol}")));
        }
        let max_iters = max_iters.unwrap_or_else(|| default_max_iters(self.problem, tol));
        if max_iters == 0 {
            return Err(BellmanError::InvalidOptions("max_iters must be at least 1".into()));
        }
        let start = Instant::now();
        let alpha = self.problem.discount();
        let mut v = initial;
        let mut residual;
        let mut iterations = 0;
        let mut policy;
        let mut outer_gap;
        loop {
            let (next, pol, gap) = match adversary {
                Adversary::Caa => {
                    let (n, p) = self.apply_caa(&v)?;
                    (n, p, 0.0)
                }
                Adversary::Cau => self.apply_cau_with_gap(&v)?,
            };
            iterations += 1;
            residual = next.sup_distance(&v);
            v = next;
            policy = pol;
            outer_gap = gap;
            log::debug!("iteration {iterations}: residual {residual:.3e}");
            if residual <= tol || iterations >= max_iters {
                break;
            }
        }
        let report = SolveReport {
            iterations,
            final_residual: residual,
            error_bound: residual * alpha / (1.0 - alpha),
            wall_time: start.elapsed().as_secs_f64(),
            outer_gap,
        };
        let fp = FixedPoint { value: v, policy, report };
        if residual > tol {
            return Err(BellmanError::NonConverged(Box::new(fp)));
        }
        Ok(fp)
    }

    /// Greedy policy with respect to `v`.
    pub fn extract_policy(&self, v: &GridValueFunction, adversary: Adversary) -> Result<Policy, BellmanError> {
        match adversary {
            Adversary::Caa => self.apply_caa(v).map(|r| r.1),
            Adversary::Cau => self.apply_cau(v).map(|r| r.1),
        }
    }

    /// Worst-case noise law at `x` against `v` when the controller mixes
    /// actions with `phi`, as a measure on the inner evaluation points. For
    /// a point mass `phi` this is the CAA adversary's choice.
    pub fn worst_case_noise(
        &self,
        v: &GridValueFunction,
        x: &[f64],
        phi: &[f64],
    ) -> Result<DiscreteMeasure, BellmanError> {
        let alpha = self.problem.discount();
        let rows: Vec<Vec<f64>> = (0..self.problem.num_actions())
            .map(|a| {
                if phi[a] == 0.0 {
                    vec![0.0; self.inner.points().len()]
                } else {
                    let r = self.problem.reward(x, a);
                    self.continuation(v, x, a).into_iter().map(|g| r + alpha * g).collect()
                }
            })
            .collect();
        let sol = self.inner.solve(&Self::mix(&rows, phi))?;
        Ok(self.inner.measure_of(&sol)?)
    }
}

/// Fresh operator and one CAA application.
pub fn apply_caa(
    problem: &ControlProblem,
    spec: AmbiguitySpec,
    center: &DiscreteMeasure,
    candidates: Option<&[Vec<f64>]>,
    v: &GridValueFunction,
) -> Result<GridValueFunction, BellmanError> {
    Bellman::new(problem, spec, center.clone(), candidates, DualTolerances::default())?.apply_caa(v).map(|r| r.0)
}

/// Fresh operator and one CAU application.
pub fn apply_cau(
    problem: &ControlProblem,
    spec: AmbiguitySpec,
    center: &DiscreteMeasure,
    candidates: Option<&[Vec<f64>]>,
    v: &GridValueFunction,
) -> Result<(GridValueFunction, Policy), BellmanError> {
    Bellman::new(problem, spec, center.clone(), candidates, DualTolerances::default())?.apply_cau(v)
}

/// Value iteration from zero on a uniform grid with `nodes` per dimension
/// (default per dimension when `None`).
pub fn solve_fixed_point(
    problem: &ControlProblem,
    spec: AmbiguitySpec,
    center: &DiscreteMeasure,
    candidates: Option<&[Vec<f64>]>,
    adversary: Adversary,
    nodes: Option<&[usize]>,
    tol: f64,
    max_iters: Option<usize>,
) -> Result<FixedPoint, BellmanError> {
    let op = Bellman::new(problem, spec, center.clone(), candidates, DualTolerances::default())?;
    let v0 = zero_grid(problem, nodes)?;
    op.solve_fixed_point(adversary, v0, tol, max_iters)
}

/// All-zero value function on the problem's uniform grid.
pub fn zero_grid(problem: &ControlProblem, nodes: Option<&[usize]>) -> Result<GridValueFunction, BellmanError> {
    let d = problem.state_dim();
    let counts: Vec<usize> = match nodes {
        Some(n) => n.to_vec(),
        None => vec![default_nodes(d); d],
    };
    GridValueFunction::uniform(problem.state_box(), &counts, 0.0)
}
