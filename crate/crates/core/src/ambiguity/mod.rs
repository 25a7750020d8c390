//! Worst-case expectations over ambiguity balls around a discrete center.
//!
//! For a function `g` on the noise space and a center `mu`, the adversary's
//! value is `inf { E_psi[g] : psi in P }` where `P` is either a Wasserstein
//! ball `{ W_c(psi, mu) <= delta }` or a Cressie-Read ball
//! `{ D_{f_k}(psi || mu) <= delta }`. Both are solved through their
//! one-dimensional duals:
//!
//! ```text
//! Wasserstein:  sup_{lambda >= 0}  -lambda delta + E_mu[ min_y g(y) + lambda c(w, y) ]
//! f_k:          sup_eta  eta - c_k(delta) (E_mu[(eta - g)_+^{k'}])^{1/k'}
//! ```
//!
//! Every solution carries a primal worst-case measure and the gap between its
//! primal value and the dual value. The `oracle` module solves the same
//! problems in primal form for cross-checking.

mod fk;
pub mod oracle;
mod wasserstein;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measures::{DiscreteMeasure, MeasureError};

pub use oracle::{brute_force_fk, brute_force_wasserstein};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AmbiguityError {
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("center atom {atom} is not among the candidates")]
    AtomNotInCandidates { atom: usize },
    #[error("dimension mismatch: center has {center}, candidates have {candidates}")]
    DimensionMismatch { center: usize, candidates: usize },
    #[error("f_k divergence requires k > 1, got {0}")]
    InvalidK(f64),
    #[error("radius must be a finite nonnegative number, got {0}")]
    InvalidDelta(f64),
    #[error("function value is not finite at point {point}")]
    NonFiniteFunctionValue { point: usize },
    #[error("expected {expected} function values, got {found}")]
    ValueCount { expected: usize, found: usize },
    #[error("problem size {size} exceeds the oracle limit {limit}")]
    SizeLimitExceeded { size: usize, limit: usize },
    #[error("operation requires the {0} family")]
    WrongFamily(&'static str),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Transport cost between noise points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Cost {
    #[default]
    #[serde(rename = "sq")]
    SquaredEuclidean,
    #[serde(rename = "abs")]
    Euclidean,
}

impl Cost {
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        match self {
            Cost::SquaredEuclidean => sq,
            Cost::Euclidean => sq.sqrt(),
        }
    }
}

/// The adversary's budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", deny_unknown_fields)]
pub enum AmbiguitySpec {
    #[serde(rename = "wasserstein")]
    Wasserstein {
        delta: f64,
        #[serde(default)]
        cost: Cost,
    },
    #[serde(rename = "fk")]
    FkDivergence { delta: f64, k: f64 },
}

impl AmbiguitySpec {
    pub fn wasserstein(delta: f64, cost: Cost) -> Self {
        AmbiguitySpec::Wasserstein { delta, cost }
    }

    pub fn fk(k: f64, delta: f64) -> Self {
        AmbiguitySpec::FkDivergence { delta, k }
    }

    pub fn delta(&self) -> f64 {
        match *self {
            AmbiguitySpec::Wasserstein { delta, .. } | AmbiguitySpec::FkDivergence { delta, .. } => delta,
        }
    }

    pub fn with_delta(self, delta: f64) -> Self {
        match self {
            AmbiguitySpec::Wasserstein { cost, .. } => AmbiguitySpec::Wasserstein { delta, cost },
            AmbiguitySpec::FkDivergence { k, .. } => AmbiguitySpec::FkDivergence { delta, k },
        }
    }

    pub fn validate(&self) -> Result<(), AmbiguityError> {
        let delta = self.delta();
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(AmbiguityError::InvalidDelta(delta));
        }
        if let AmbiguitySpec::FkDivergence { k, .. } = *self {
            if !(k.is_finite() && k > 1.0) {
                return Err(AmbiguityError::InvalidK(k));
            }
        }
        Ok(())
    }

    /// Conjugate exponent `k / (k - 1)` (f_k only).
    pub fn k_conjugate(&self) -> Option<f64> {
        match *self {
            AmbiguitySpec::FkDivergence { k, .. } => Some(k / (k - 1.0)),
            _ => None,
        }
    }

    /// `c_k(delta) = (1 + k (k - 1) delta)^{1/k}` (f_k only).
    pub fn c_k(&self) -> Option<f64> {
        match *self {
            AmbiguitySpec::FkDivergence { k, delta } => Some(c_k(k, delta)),
            _ => None,
        }
    }

    pub fn is_wasserstein(&self) -> bool {
        matches!(self, AmbiguitySpec::Wasserstein { .. })
    }
}

pub fn c_k(k: f64, delta: f64) -> f64 {
    (1.0 + k * (k - 1.0) * delta).powf(1.0 / k)
}

/// Cressie-Read generator `f_k(t) = (t^k - k t + k - 1) / (k (k - 1))`.
pub fn f_k(k: f64, t: f64) -> f64 {
    (t.powf(k) - k * t + k - 1.0) / (k * (k - 1.0))
}

/// `D_{f_k}(q || p)` for weight vectors on common atoms (`q << p` assumed).
pub fn fk_divergence(k: f64, q: &[f64], p: &[f64]) -> f64 {
    q.iter()
        .zip(p)
        .map(|(&qi, &pi)| {
            if pi > 0.0 {
                pi * f_k(k, qi / pi)
            } else if qi > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .sum()
}

/// Tolerances for the one-dimensional dual searches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualTolerances {
    pub lambda_tol: f64,
    pub eta_tol: f64,
}

impl Default for DualTolerances {
    fn default() -> Self {
        Self { lambda_tol: 1e-9, eta_tol: 1e-9 }
    }
}

/// Solution of one inner problem, indexed by the problem's evaluation points.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    pub value: f64,
    /// `lambda*` (Wasserstein) or `eta*` (f_k).
    pub dual_point: f64,
    /// Worst-case measure as `(point index, mass)`, sorted by index.
    pub mass: Vec<(usize, f64)>,
    /// Primal value of `mass` minus the dual value.
    pub certificate_gap: f64,
}

impl InnerSolution {
    /// `E_psi[h]` for values `h` on the evaluation points.
    pub fn expect(&self, h: &[f64]) -> f64 {
        self.mass.iter().map(|&(j, m)| m * h[j]).sum()
    }
}

/// Public result of a worst-case evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct WorstCaseResult {
    pub value: f64,
    pub dual_point: f64,
    pub worst_measure: DiscreteMeasure,
    pub certificate_gap: f64,
}

#[derive(Debug, Clone)]
enum InnerKind {
    Wasserstein(wasserstein::TransportTable),
    Fk { k: f64, delta: f64 },
}

/// A worst-case problem with fixed center, budget and candidate set, ready
/// to be solved for many functions `g`.
///
/// `g` is supplied as its values on [`InnerProblem::points`]: the sorted,
/// deduplicated candidates for Wasserstein balls, the center atoms for f_k.
#[derive(Debug, Clone)]
pub struct InnerProblem {
    spec: AmbiguitySpec,
    center: DiscreteMeasure,
    points: Vec<Vec<f64>>,
    tol: DualTolerances,
    kind: InnerKind,
}

impl InnerProblem {
    pub fn new(
        spec: AmbiguitySpec,
        center: DiscreteMeasure,
        candidates: &[Vec<f64>],
        tol: DualTolerances,
    ) -> Result<Self, AmbiguityError> {
        spec.validate()?;
        match spec {
            AmbiguitySpec::Wasserstein { delta, cost } => {
                if candidates.is_empty() {
                    return Err(AmbiguityError::EmptyCandidates);
                }
                let table = wasserstein::TransportTable::new(&center, candidates, cost, delta)?;
                let points = table.points().to_vec();
                Ok(Self { spec, center, points, tol, kind: InnerKind::Wasserstein(table) })
            }
            AmbiguitySpec::FkDivergence { k, delta } => {
                let points = center.atoms().to_vec();
                Ok(Self { spec, center, points, tol, kind: InnerKind::Fk { k, delta } })
            }
        }
    }

    /// Points at which `g` must be evaluated, in solver order.
    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn spec(&self) -> &AmbiguitySpec {
        &self.spec
    }

    pub fn center(&self) -> &DiscreteMeasure {
        &self.center
    }

    pub fn tolerances(&self) -> DualTolerances {
        self.tol
    }

    /// Solves the inner problem for `g` given on [`Self::points`].
    pub fn solve(&self, g: &[f64]) -> Result<InnerSolution, AmbiguityError> {
        if g.len() != self.points.len() {
            return Err(AmbiguityError::ValueCount { expected: self.points.len(), found: g.len() });
        }
        if let Some(j) = g.iter().position(|v| !v.is_finite()) {
            return Err(AmbiguityError::NonFiniteFunctionValue { point: j });
        }
        Ok(match &self.kind {
            InnerKind::Wasserstein(table) => table.solve(g, self.tol.lambda_tol),
            InnerKind::Fk { k, delta } => fk::solve(*k, *delta, self.center.weights(), g, self.tol.eta_tol),
        })
    }

    /// Converts a solution's mass list into a measure on the points.
    pub fn measure_of(&self, sol: &InnerSolution) -> Result<DiscreteMeasure, AmbiguityError> {
        let atoms = sol.mass.iter().map(|&(j, _)| self.points[j].clone()).collect();
        let total: f64 = sol.mass.iter().map(|&(_, m)| m).sum();
        let weights = sol.mass.iter().map(|&(_, m)| m / total).collect();
        Ok(DiscreteMeasure::new(atoms, weights)?)
    }

    fn evaluate<G: Fn(&[f64]) -> f64>(&self, g: G) -> Result<WorstCaseResult, AmbiguityError> {
        let values: Vec<f64> = self.points.iter().map(|p| g(p)).collect();
        let sol = self.solve(&values)?;
        Ok(WorstCaseResult {
            value: sol.value,
            dual_point: sol.dual_point,
            worst_measure: self.measure_of(&sol)?,
            certificate_gap: sol.certificate_gap,
        })
    }
}

/// Worst-case expectation over a Wasserstein ball, inner infimum restricted
/// to `candidates` (which must contain every center atom).
pub fn worst_case_wasserstein<G: Fn(&[f64]) -> f64>(
    g: G,
    center: &DiscreteMeasure,
    spec: &AmbiguitySpec,
    candidates: &[Vec<f64>],
) -> Result<WorstCaseResult, AmbiguityError> {
    if !spec.is_wasserstein() {
        return Err(AmbiguityError::WrongFamily("wasserstein"));
    }
    InnerProblem::new(*spec, center.clone(), candidates, DualTolerances::default())?.evaluate(g)
}

/// Worst-case expectation over an f_k-divergence ball.
pub fn worst_case_fk<G: Fn(&[f64]) -> f64>(
    g: G,
    center: &DiscreteMeasure,
    spec: &AmbiguitySpec,
) -> Result<WorstCaseResult, AmbiguityError> {
    if spec.is_wasserstein() {
        return Err(AmbiguityError::WrongFamily("fk"));
    }
    InnerProblem::new(*spec, center.clone(), &[], DualTolerances::default())?.evaluate(g)
}

/// Dispatches on the family; `candidates` is ignored for f_k.
pub fn worst_case<G: Fn(&[f64]) -> f64>(
    g: G,
    center: &DiscreteMeasure,
    spec: &AmbiguitySpec,
    candidates: &[Vec<f64>],
) -> Result<WorstCaseResult, AmbiguityError> {
    match spec {
        AmbiguitySpec::Wasserstein { .. } => worst_case_wasserstein(g, center, spec, candidates),
        AmbiguitySpec::FkDivergence { .. } => worst_case_fk(g, center, spec),
    }
}

/// `n` evenly spaced points on `[lo, hi]` (endpoints exact).
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect(),
    }
}

/// Uniform tensor grid over a box with `per_dim` points per dimension.
pub fn box_grid(bounds: &[(f64, f64)], per_dim: usize) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = bounds.iter().map(|&(lo, hi)| linspace(lo, hi, per_dim)).collect();
    let mut out = vec![vec![]];
    for axis in &axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

#[cfg(test)]
mod tests;
