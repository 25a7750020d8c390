//! Monte Carlo rollouts of grid policies.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bellman::{Bellman, BellmanError, GridValueFunction, Policy};
use crate::measures::DiscreteMeasure;
use crate::models::ControlProblem;
use crate::rng::{sample_index, stream};

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("policy grid has dimension {policy}, problem state dimension is {problem}")]
    PolicyGridMismatch { policy: usize, problem: usize },
    #[error("policy has {policy} actions, problem has {problem}")]
    ActionCountMismatch { policy: usize, problem: usize },
    #[error("initial state has dimension {found}, expected {expected}")]
    StateDimension { expected: usize, found: usize },
    #[error("noise law has dimension {found}, expected {expected}")]
    NoiseDimension { expected: usize, found: usize },
    #[error(transparent)]
    Bellman(#[from] BellmanError),
}

/// Law of the noise at each step.
pub enum NoiseModel<'a> {
    /// I.i.d. draws from a fixed measure.
    Nominal(&'a DiscreteMeasure),
    /// The stationary adversary induced by `value`: the inner minimizer at
    /// the current state against the realized action (deterministic
    /// policies) or against the policy's mixture (randomized policies).
    WorstCase { op: &'a Bellman<'a>, value: &'a GridValueFunction },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `x_0, ..., x_T`.
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub noises: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub discounted_return: f64,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    /// `t, x.., action, w.., reward` rows, one per step.
    pub fn write_csv<W: Write>(&self, w: &mut csv::Writer<W>, index: Option<usize>, header: bool) -> csv::Result<()> {
        let dx = self.states.first().map_or(0, Vec::len);
        let dw = self.noises.first().map_or(0, Vec::len);
        if header {
            let mut h: Vec<String> = Vec::new();
            if index.is_some() {
                h.push("trajectory".into());
            }
            h.push("t".into());
            h.extend((0..dx).map(|k| format!("x{k}")));
            h.push("action".into());
            h.extend((0..dw).map(|k| format!("w{k}")));
            h.push("reward".into());
            w.write_record(&h)?;
        }
        for t in 0..self.horizon() {
            let mut row: Vec<String> = Vec::new();
            if let Some(i) = index {
                row.push(i.to_string());
            }
            row.push(t.to_string());
            row.extend(self.states[t].iter().map(|v| v.to_string()));
            row.push(self.actions[t].to_string());
            row.extend(self.noises[t].iter().map(|v| v.to_string()));
            row.push(self.rewards[t].to_string());
            w.write_record(&row)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnSummary {
    pub mean: f64,
    pub stderr: f64,
    pub n_traj: usize,
}

fn check(problem: &ControlProblem, policy: &Policy, noise: &NoiseModel<'_>, x0: &[f64]) -> Result<(), RolloutError> {
    if policy.axes().len() != problem.state_dim() {
        return Err(RolloutError::PolicyGridMismatch { policy: policy.axes().len(), problem: problem.state_dim() });
    }
    if policy.num_actions() != problem.num_actions() {
        return Err(RolloutError::ActionCountMismatch { policy: policy.num_actions(), problem: problem.num_actions() });
    }
    if x0.len() != problem.state_dim() {
        return Err(RolloutError::StateDimension { expected: problem.state_dim(), found: x0.len() });
    }
    if let NoiseModel::Nominal(m) = noise {
        if m.dim() != problem.noise_dim() {
            return Err(RolloutError::NoiseDimension { expected: problem.noise_dim(), found: m.dim() });
        }
    }
    Ok(())
}

fn run(
    problem: &ControlProblem,
    policy: &Policy,
    noise: &NoiseModel<'_>,
    x0: &[f64],
    horizon: usize,
    seed: u64,
    index: u64,
    log: bool,
) -> Result<Trajectory, RolloutError> {
    let mut rng = stream(seed, &[index]);
    let alpha = problem.discount();
    let mut traj = Trajectory {
        states: vec![x0.to_vec()],
        actions: Vec::new(),
        noises: Vec::new(),
        rewards: Vec::new(),
        discounted_return: 0.0,
    };
    let mut x = x0.to_vec();
    let mut next = vec![0.0; x.len()];
    let mut discount = 1.0;
    for _ in 0..horizon {
        let node = policy.nearest_node(&x);
        let probs = policy.probabilities(node);
        let a = if policy.is_randomized() {
            sample_index(&mut rng, &probs)
        } else {
            probs.iter().position(|&p| p == 1.0).unwrap()
        };
        let w = match noise {
            NoiseModel::Nominal(m) => m.atoms()[sample_index(&mut rng, m.weights())].clone(),
            NoiseModel::WorstCase { op, value } => {
                let phi = if policy.is_randomized() {
                    probs
                } else {
                    let mut e = vec![0.0; probs.len()];
                    e[a] = 1.0;
                    e
                };
                let m = op.worst_case_noise(value, &x, &phi)?;
                m.atoms()[sample_index(&mut rng, m.weights())].clone()
            }
        };
        let r = problem.reward(&x, a);
        traj.discounted_return += discount * r;
        discount *= alpha;
        problem.step_into(&x, a, &w, &mut next);
        std::mem::swap(&mut x, &mut next);
        if log {
            traj.actions.push(a);
            traj.noises.push(w);
            traj.rewards.push(r);
            traj.states.push(x.clone());
        }
    }
    if !log {
        traj.states.clear();
    }
    Ok(traj)
}

/// One trajectory driven by the generator stream `(seed, index)`.
pub fn simulate(
    problem: &ControlProblem,
    policy: &Policy,
    noise: &NoiseModel<'_>,
    x0: &[f64],
    horizon: usize,
    seed: u64,
    index: u64,
) -> Result<Trajectory, RolloutError> {
    check(problem, policy, noise, x0)?;
    run(problem, policy, noise, x0, horizon, seed, index, true)
}

/// Trajectories `0..n_traj` in parallel, returned in index order.
pub fn simulate_many(
    problem: &ControlProblem,
    policy: &Policy,
    noise: &NoiseModel<'_>,
    x0: &[f64],
    horizon: usize,
    seed: u64,
    n_traj: usize,
) -> Result<Vec<Trajectory>, RolloutError> {
    check(problem, policy, noise, x0)?;
    (0..n_traj as u64).into_par_iter().map(|i| run(problem, policy, noise, x0, horizon, seed, i, true)).collect()
}

/// Discounted returns only, without step logs.
pub fn simulate_returns(
    problem: &ControlProblem,
    policy: &Policy,
    noise: &NoiseModel<'_>,
    x0: &[f64],
    horizon: usize,
    seed: u64,
    n_traj: usize,
) -> Result<Vec<f64>, RolloutError> {
    check(problem, policy, noise, x0)?;
    (0..n_traj as u64)
        .into_par_iter()
        .map(|i| run(problem, policy, noise, x0, horizon, seed, i, false).map(|t| t.discounted_return))
        .collect()
}

/// Pairwise summation in index order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        n if n <= 8 => values.iter().sum(),
        n => pairwise_sum(&values[..n / 2]) + pairwise_sum(&values[n / 2..]),
    }
}

pub fn summarize(returns: &[f64]) -> ReturnSummary {
    let n = returns.len();
    if n == 0 {
        return ReturnSummary { mean: 0.0, stderr: 0.0, n_traj: 0 };
    }
    let mean = pairwise_sum(returns) / n as f64;
    let sq: Vec<f64> = returns.iter().map(|r| (r - mean) * (r - mean)).collect();
    let var = if n > 1 { pairwise_sum(&sq) / (n - 1) as f64 } else { 0.0 };
    ReturnSummary { mean, stderr: (var / n as f64).sqrt(), n_traj: n }
}
