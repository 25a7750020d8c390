//! Control problems: boxes, finite actions, dynamics, reward and discount.

pub mod expr;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ambiguity::{box_grid, worst_case, AmbiguityError, AmbiguitySpec};
use crate::measures::DiscreteMeasure;
use expr::{Expr, VarKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config at `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> ModelError {
    ModelError::InvalidConfig { field: field.to_string(), reason: reason.into() }
}

/// `(x, a, w, out)`: writes the unclipped next state into `out`.
pub type DynamicsFn = Arc<dyn Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// `(x, a)`: unclipped reward.
pub type RewardFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// An immutable control problem. Dynamics outputs are clipped into the
/// state box and rewards into `[0, r_max]`.
#[derive(Clone)]
pub struct ControlProblem {
    name: String,
    state_box: Vec<(f64, f64)>,
    noise_box: Vec<(f64, f64)>,
    actions: Vec<Vec<f64>>,
    discount: f64,
    r_max: f64,
    dynamics: DynamicsFn,
    reward: RewardFn,
}

impl fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlProblem")
            .field("name", &self.name)
            .field("state_box", &self.state_box)
            .field("noise_box", &self.noise_box)
            .field("actions", &self.actions)
            .field("discount", &self.discount)
            .field("r_max", &self.r_max)
            .finish_non_exhaustive()
    }
}

fn check_box(field: &str, b: &[(f64, f64)]) -> Result<(), ModelError> {
    if b.is_empty() {
        return Err(invalid(field, "box must have at least one dimension"));
    }
    for &(lo, hi) in b {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(invalid(field, format!("need finite lo < hi, got [{lo}, {hi}]")));
        }
    }
    Ok(())
}

impl ControlProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        state_box: Vec<(f64, f64)>,
        noise_box: Vec<(f64, f64)>,
        actions: Vec<Vec<f64>>,
        discount: f64,
        r_max: f64,
        dynamics: DynamicsFn,
        reward: RewardFn,
    ) -> Result<Self, ModelError> {
        if !(discount > 0.0 && discount < 1.0) {
            return Err(invalid("discount", format!("must lie in (0, 1), got {discount}")));
        }
        if !(r_max.is_finite() && r_max > 0.0) {
            return Err(invalid("r_max", format!("must be positive and finite, got {r_max}")));
        }
        check_box("state_box", &state_box)?;
        check_box("noise_box", &noise_box)?;
        let Some(first) = actions.first() else {
            return Err(invalid("actions", "at least one action is required"));
        };
        if actions.iter().any(|a| a.len() != first.len() || a.iter().any(|v| !v.is_finite())) {
            return Err(invalid("actions", "actions must be finite vectors of equal length"));
        }
        Ok(Self { name: name.into(), state_box, noise_box, actions, discount, r_max, dynamics, reward })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_box.len()
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_box.len()
    }

    pub fn state_box(&self) -> &[(f64, f64)] {
        &self.state_box
    }

    pub fn noise_box(&self) -> &[(f64, f64)] {
        &self.noise_box
    }

    pub fn actions(&self) -> &[Vec<f64>] {
        &self.actions
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// `1 / (1 - discount)`.
    pub fn beta(&self) -> f64 {
        1.0 / (1.0 - self.discount)
    }

    /// Same problem with another discount factor.
    pub fn with_discount(&self, discount: f64) -> Result<Self, ModelError> {
        let mut p = self.clone();
        if !(discount > 0.0 && discount < 1.0) {
            return Err(invalid("discount", format!("must lie in (0, 1), got {discount}")));
        }
        p.discount = discount;
        Ok(p)
    }

    /// Next state for action index `a`, clipped into the state box.
    pub fn step_into(&self, x: &[f64], a: usize, w: &[f64], out: &mut [f64]) {
        (self.dynamics)(x, &self.actions[a], w, out);
        for (v, &(lo, hi)) in out.iter_mut().zip(&self.state_box) {
            *v = if v.is_nan() { lo } else { v.clamp(lo, hi) };
        }
    }

    pub fn step(&self, x: &[f64], a: usize, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.state_dim()];
        self.step_into(x, a, w, &mut out);
        out
    }

    /// Reward before clipping.
    pub fn raw_reward(&self, x: &[f64], a: usize) -> f64 {
        (self.reward)(x, &self.actions[a])
    }

    /// Reward clipped into `[0, r_max]`.
    pub fn reward(&self, x: &[f64], a: usize) -> f64 {
        let r = self.raw_reward(x, a);
        if r.is_nan() {
            0.0
        } else {
            r.clamp(0.0, self.r_max)
        }
    }

    /// Default Wasserstein candidate set: a uniform grid over the noise box
    /// together with the center atoms.
    pub fn default_candidates(&self, center: &DiscreteMeasure) -> Vec<Vec<f64>> {
        default_candidates(&self.noise_box, center)
    }
}

/// Uniform grid over `noise_box` (2001 points in one dimension, coarser in
/// more) plus the atoms of `center`.
pub fn default_candidates(noise_box: &[(f64, f64)], center: &DiscreteMeasure) -> Vec<Vec<f64>> {
    let per_dim = match noise_box.len() {
        1 => 2001,
        2 => 101,
        3 => 21,
        _ => 11,
    };
    let mut c = box_grid(noise_box, per_dim);
    c.extend(center.atoms().iter().cloned());
    c
}

fn default_lemma5_actions() -> Vec<f64> {
    vec![0.0]
}

fn default_state_box() -> Vec<[f64; 2]> {
    vec![[0.0, 1.0]]
}

fn default_actions() -> Vec<Vec<f64>> {
    vec![vec![0.0]]
}

fn one() -> f64 {
    1.0
}

/// One expression or a list of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExprList {
    One(String),
    Many(Vec<String>),
}

impl ExprList {
    fn items(&self) -> Vec<&str> {
        match self {
            ExprList::One(s) => vec![s.as_str()],
            ExprList::Many(v) => v.iter().map(String::as_str).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelConfig {
    /// `x' = w`, `r(x, a) = x` on `[0, 1]`.
    Lemma5 {
        #[serde(default = "default_lemma5_actions")]
        actions: Vec<f64>,
    },
    /// `x' = (x + 1/a - w)^+`, `r = r_max - x - cost(a)`.
    Queue {
        actions: Vec<f64>,
        service_cost: Vec<f64>,
        x_max: f64,
        r_max: f64,
        #[serde(default)]
        noise_box: Option<[f64; 2]>,
    },
    /// `x' = w * (x + a)` with self-financing trades `sum(a) <= 0`.
    Portfolio {
        m: usize,
        gamma: f64,
        trade_grid: Vec<f64>,
        #[serde(rename = "box")]
        state_box: [f64; 2],
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        noise_box: Option<[f64; 2]>,
    },
    Custom {
        expr_dynamics: ExprList,
        expr_reward: String,
        #[serde(default = "default_state_box")]
        state_box: Vec<[f64; 2]>,
        #[serde(default = "default_state_box")]
        noise_box: Vec<[f64; 2]>,
        #[serde(default = "default_actions")]
        actions: Vec<Vec<f64>>,
        #[serde(default = "one")]
        r_max: f64,
    },
}

impl ModelConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::Lemma5 { .. } => "lemma5",
            ModelConfig::Queue { .. } => "queue",
            ModelConfig::Portfolio { .. } => "portfolio",
            ModelConfig::Custom { .. } => "custom",
        }
    }
}

fn pairs(b: &[[f64; 2]]) -> Vec<(f64, f64)> {
    b.iter().map(|&[lo, hi]| (lo, hi)).collect()
}

pub fn build_model(cfg: &ModelConfig, discount: f64) -> Result<ControlProblem, ModelError> {
    match cfg {
        ModelConfig::Lemma5 { actions } => {
            if actions.is_empty() {
                return Err(invalid("model.actions", "at least one action is required"));
            }
            ControlProblem::new(
                "lemma5",
                vec![(0.0, 1.0)],
                vec![(0.0, 1.0)],
                actions.iter().map(|&a| vec![a]).collect(),
                discount,
                1.0,
                Arc::new(|_x, _a, w, out| out[0] = w[0]),
                Arc::new(|x, _a| x[0]),
            )
        }
        ModelConfig::Queue { actions, service_cost, x_max, r_max, noise_box } => {
            if actions.is_empty() {
                return Err(invalid("model.actions", "at least one service rate is required"));
            }
            if let Some(a) = actions.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
                return Err(invalid("model.actions", format!("service rates must be positive, got {a}")));
            }
            if service_cost.len() != actions.len() {
                return Err(invalid(
                    "model.service_cost",
                    format!("expected {} entries, found {}", actions.len(), service_cost.len()),
                ));
            }
            if !(x_max.is_finite() && *x_max > 0.0) {
                return Err(invalid("model.x_max", "must be positive"));
            }
            let min_rate = actions.iter().copied().fold(f64::INFINITY, f64::min);
            let nb = noise_box.unwrap_or([0.0, 2.0 / min_rate]);
            let costs = service_cost.clone();
            let rates = actions.clone();
            let r_max_v = *r_max;
            ControlProblem::new(
                "queue",
                vec![(0.0, *x_max)],
                vec![(nb[0], nb[1])],
                actions.iter().map(|&a| vec![a]).collect(),
                discount,
                *r_max,
                Arc::new(|x, a, w, out| out[0] = (x[0] + 1.0 / a[0] - w[0]).max(0.0)),
                Arc::new(move |x, a| {
                    let i = rates.iter().position(|&r| r == a[0]).unwrap_or(0);
                    r_max_v - x[0] - costs[i]
                }),
            )
            .map_err(|e| prefix(e, "model."))
        }
        ModelConfig::Portfolio { m, gamma, trade_grid, state_box, scale, noise_box } => {
            let m = *m;
            if !(1..=2).contains(&m) {
                return Err(invalid("model.m", format!("supported range is 1..=2, got {m}")));
            }
            if !(gamma.is_finite() && *gamma > 0.0) {
                return Err(invalid("model.gamma", "must be positive"));
            }
            if !(scale.is_finite() && *scale > 0.0) {
                return Err(invalid("model.scale", "must be positive"));
            }
            if trade_grid.is_empty() || trade_grid.len() > 41 {
                return Err(invalid("model.trade_grid", "needs between 1 and 41 points"));
            }
            if state_box[0] < 0.0 {
                return Err(invalid("model.box", "holdings must be nonnegative"));
            }
            let nb = noise_box.unwrap_or([0.8, 1.2]);
            let mut actions: Vec<Vec<f64>> = vec![vec![]];
            for _ in 0..m {
                actions = actions
                    .into_iter()
                    .flat_map(|p| {
                        trade_grid.iter().map(move |&t| {
                            let mut q = p.clone();
                            q.push(t);
                            q
                        })
                    })
                    .collect();
            }
            actions.retain(|a| a.iter().sum::<f64>() <= 0.0);
            if actions.is_empty() {
                return Err(invalid("model.trade_grid", "no self-financing trade on the grid"));
            }
            let (gamma, scale) = (*gamma, *scale);
            let feasible = |x: &[f64], a: &[f64]| x.iter().zip(a).all(|(x, a)| x + a >= 0.0);
            ControlProblem::new(
                "portfolio",
                vec![(state_box[0], state_box[1]); m],
                vec![(nb[0], nb[1]); m],
                actions,
                discount,
                scale,
                Arc::new(move |x, a, w, out| {
                    let ok = feasible(x, a);
                    for i in 0..out.len() {
                        out[i] = if ok { w[i] * (x[i] + a[i]) } else { w[i] * x[i] };
                    }
                }),
                Arc::new(move |x, a| {
                    if !feasible(x, a) {
                        return 0.0;
                    }
                    let c = -a.iter().sum::<f64>();
                    (1.0 - (-gamma * c).exp()) * scale
                }),
            )
            .map_err(|e| prefix(e, "model."))
        }
        ModelConfig::Custom { expr_dynamics, expr_reward, state_box, noise_box, actions, r_max } => {
            let d_x = state_box.len();
            let d_w = noise_box.len();
            let d_a = actions.first().map_or(0, Vec::len);
            let parse = |field: &str, s: &str, d_w: usize| -> Result<Expr, ModelError> {
                let e = Expr::parse(s).map_err(|e| invalid(field, e.to_string()))?;
                for (kind, dim, name) in
                    [(VarKind::State, d_x, "x"), (VarKind::Action, d_a, "a"), (VarKind::Noise, d_w, "w")]
                {
                    if let Some(i) = e.max_index(kind) {
                        if i >= dim {
                            return Err(invalid(field, format!("{name}_{i} is out of range (dimension {dim})")));
                        }
                    }
                }
                Ok(e)
            };
            let items = expr_dynamics.items();
            if items.len() != d_x {
                return Err(invalid(
                    "model.expr_dynamics",
                    format!("expected {d_x} expressions, found {}", items.len()),
                ));
            }
            let dyn_exprs: Vec<Expr> =
                items.iter().map(|s| parse("model.expr_dynamics", s, d_w)).collect::<Result<_, _>>()?;
            let reward_expr = parse("model.expr_reward", expr_reward, 0)?;
            ControlProblem::new(
                "custom",
                pairs(state_box),
                pairs(noise_box),
                actions.clone(),
                discount,
                *r_max,
                Arc::new(move |x, a, w, out| {
                    for (o, e) in out.iter_mut().zip(&dyn_exprs) {
                        *o = e.eval(x, a, w);
                    }
                }),
                Arc::new(move |x, a| reward_expr.eval(x, a, &[])),
            )
            .map_err(|e| prefix(e, "model."))
        }
    }
}

fn prefix(e: ModelError, p: &str) -> ModelError {
    match e {
        ModelError::InvalidConfig { field, reason } if field != "discount" => {
            ModelError::InvalidConfig { field: format!("{p}{field}"), reason }
        }
        other => other,
    }
}

/// `x + alpha/(1-alpha) * inf E[W]` for the `lemma5` model, the inner
/// infimum taken over the default candidate set.
pub fn lemma5_exact_value(
    spec: &AmbiguitySpec,
    center: &DiscreteMeasure,
    alpha: f64,
    x: f64,
) -> Result<f64, AmbiguityError> {
    let candidates = default_candidates(&[(0.0, 1.0)], center);
    let c = worst_case(|w| w[0], center, spec, &candidates)?.value;
    Ok(x + alpha / (1.0 - alpha) * c)
}
