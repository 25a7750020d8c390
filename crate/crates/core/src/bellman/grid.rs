use std::io::Write;

use serde::{Deserialize, Serialize};

use super::BellmanError;
use crate::ambiguity::linspace;

/// Default node count per dimension.
pub fn default_nodes(dim: usize) -> usize {
    match dim {
        1 => 101,
        2 => 41,
        _ => 11,
    }
}

/// Node values on a tensor grid, flattened row-major (last axis fastest),
/// evaluated by multilinear interpolation after clipping into the grid box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridValueFunction {
    axes: Vec<Vec<f64>>,
    values: Vec<f64>,
}

fn check_axes(axes: &[Vec<f64>]) -> Result<(), BellmanError> {
    if axes.is_empty() {
        return Err(BellmanError::InvalidGrid("grid needs at least one axis".into()));
    }
    for (d, axis) in axes.iter().enumerate() {
        if axis.len() < 2 {
            return Err(BellmanError::InvalidGrid(format!("axis {d} needs at least 2 nodes")));
        }
        if axis.windows(2).any(|w| !(w[0] < w[1])) || axis.iter().any(|v| !v.is_finite()) {
            return Err(BellmanError::InvalidGrid(format!("axis {d} must be finite and strictly increasing")));
        }
    }
    Ok(())
}

impl GridValueFunction {
    pub fn new(axes: Vec<Vec<f64>>, values: Vec<f64>) -> Result<Self, BellmanError> {
        check_axes(&axes)?;
        let n: usize = axes.iter().map(Vec::len).product();
        if values.len() != n {
            return Err(BellmanError::GridMismatch { expected: n, found: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(BellmanError::InvalidGrid("values must be finite".into()));
        }
        Ok(Self { axes, values })
    }

    /// Uniform grid over `bounds` with `nodes[d]` nodes on axis `d`.
    pub fn uniform(bounds: &[(f64, f64)], nodes: &[usize], fill: f64) -> Result<Self, BellmanError> {
        if bounds.len() != nodes.len() {
            return Err(BellmanError::InvalidGrid(format!(
                "{} node counts for {} dimensions",
                nodes.len(),
                bounds.len()
            )));
        }
        let axes: Vec<Vec<f64>> = bounds.iter().zip(nodes).map(|(&(lo, hi), &n)| linspace(lo, hi, n)).collect();
        check_axes(&axes)?;
        let n = axes.iter().map(Vec::len).product();
        Ok(Self { axes, values: vec![fill; n] })
    }

    pub fn from_fn<F: Fn(&[f64]) -> f64>(axes: Vec<Vec<f64>>, f: F) -> Result<Self, BellmanError> {
        check_axes(&axes)?;
        let values = node_points(&axes).iter().map(|x| f(x)).collect();
        Self::new(axes, values)
    }

    /// Same grid, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, BellmanError> {
        Self::new(self.axes.clone(), values)
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        node_points(&self.axes)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        if self.axes.len() == 1 {
            let axis = &self.axes[0];
            let (i, t) = locate(axis, x[0]);
            return self.values[i] * (1.0 - t) + self.values[i + 1] * t;
        }
        let d = self.axes.len();
        let mut base = 0usize;
        let mut strides = vec![0usize; d];
        let mut ts = vec![0.0; d];
        let mut stride = 1usize;
        for k in (0..d).rev() {
            let (i, t) = locate(&self.axes[k], x[k]);
            base += i * stride;
            strides[k] = stride;
            ts[k] = t;
            stride *= self.axes[k].len();
        }
        let mut total = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = base;
            for k in 0..d {
                if corner >> k & 1 == 1 {
                    w *= ts[k];
                    idx += strides[k];
                } else {
                    w *= 1.0 - ts[k];
                }
            }
            if w != 0.0 {
                total += w * self.values[idx];
            }
        }
        total
    }

    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Index of the nearest node: per-axis nearest, ties to the smaller
    /// coordinate.
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        nearest_node(&self.axes, x)
    }

    /// CSV with one coordinate column per dimension, then `value`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.dim()).map(|k| format!("x{k}")).collect();
        header.push("value".into());
        w.write_record(&header)?;
        for (x, v) in self.nodes().iter().zip(&self.values) {
            let mut row: Vec<String> = x.iter().map(|c| c.to_string()).collect();
            row.push(v.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Segment index `i` and weight `t` with `x ~ (1-t) axis[i] + t axis[i+1]`.
fn locate(axis: &[f64], x: f64) -> (usize, f64) {
    let n = axis.len();
    if !(x > axis[0]) {
        return (0, 0.0);
    }
    if x >= axis[n - 1] {
        return (n - 2, 1.0);
    }
    let i = axis.partition_point(|&a| a <= x) - 1;
    (i, (x - axis[i]) / (axis[i + 1] - axis[i]))
}

pub(super) fn node_points(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![]];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

fn nearest_node(axes: &[Vec<f64>], x: &[f64]) -> usize {
    let mut idx = 0;
    for (axis, &v) in axes.iter().zip(x) {
        let j = axis.partition_point(|&a| a < v);
        let best = if j == 0 {
            0
        } else if j == axis.len() {
            j - 1
        } else if v - axis[j - 1] <= axis[j] - v {
            j - 1
        } else {
            j
        };
        idx = idx * axis.len() + best;
    }
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyRule {
    Deterministic(Vec<usize>),
    Randomized(Vec<Vec<f64>>),
}

/// A stationary policy on a grid; off-grid states use the nearest node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    axes: Vec<Vec<f64>>,
    num_actions: usize,
    rule: PolicyRule,
}

impl Policy {
    pub fn new(axes: Vec<Vec<f64>>, num_actions: usize, rule: PolicyRule) -> Result<Self, BellmanError> {
        check_axes(&axes)?;
        let n: usize = axes.iter().map(Vec::len).product();
        match &rule {
            PolicyRule::Deterministic(a) => {
                if a.len() != n {
                    return Err(BellmanError::GridMismatch { expected: n, found: a.len() });
                }
                if let Some(&bad) = a.iter().find(|&&i| i >= num_actions) {
                    return Err(BellmanError::InvalidPolicy(format!("action index {bad} out of range")));
                }
            }
            PolicyRule::Randomized(phi) => {
                if phi.len() != n {
                    return Err(BellmanError::GridMismatch { expected: n, found: phi.len() });
                }
                for p in phi {
                    let total: f64 = p.iter().sum();
                    if p.len() != num_actions || p.iter().any(|&v| !(v >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                        return Err(BellmanError::InvalidPolicy("invalid probability vector".into()));
                    }
                }
            }
        }
        Ok(Self { axes, num_actions, rule })
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn rule(&self) -> &PolicyRule {
        &self.rule
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn is_randomized(&self) -> bool {
        matches!(self.rule, PolicyRule::Randomized(_))
    }

    pub fn nearest_node(&self, x: &[f64]) -> usize {
        nearest_node(&self.axes, x)
    }

    /// Action distribution at a node.
    pub fn probabilities(&self, node: usize) -> Vec<f64> {
        match &self.rule {
            PolicyRule::Deterministic(a) => {
                let mut p = vec![0.0; self.num_actions];
                p[a[node]] = 1.0;
                p
            }
            PolicyRule::Randomized(phi) => phi[node].clone(),
        }
    }

    /// CSV with coordinates, then `action_index` or `phi_0..`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.axes.len();
        let mut header: Vec<String> = (0..d).map(|k| format!("x{k}")).collect();
        match &self.rule {
            PolicyRule::Deterministic(_) => header.push("action_index".into()),
            PolicyRule::Randomized(_) => header.extend((0..self.num_actions).map(|a| format!("phi_{a}"))),
        }
        w.write_record(&header)?;
        for (i, x) in node_points(&self.axes).iter().enumerate() {
            let mut row: Vec<String> = x.iter().map(|c| c.to_string()).collect();
            match &self.rule {
                PolicyRule::Deterministic(a) => row.push(a[i].to_string()),
                PolicyRule::Randomized(phi) => row.extend(phi[i].iter().map(|p| p.to_string())),
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_examples() {
        let v = GridValueFunction::new(vec![vec![0.0, 1.0]], vec![0.0, 1.0]).unwrap();
        assert_eq!(v.eval(&[0.25]), 0.25);
        assert_eq!(v.eval(&[-3.0]), 0.0);
        assert_eq!(v.eval(&[7.0]), 1.0);
        let g = GridValueFunction::from_fn(vec![linspace(0.0, 1.0, 11)], |x| (3.0 * x[0]).sin()).unwrap();
        for (x, val) in g.nodes().iter().zip(g.values()) {
            assert_eq!(g.eval(x), *val);
        }
    }

    #[test]
    fn bilinear_reproduces_bilinear_functions() {
        let f = |x: &[f64]| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1];
        let g = GridValueFunction::from_fn(vec![linspace(0.0, 2.0, 5), linspace(-1.0, 1.0, 7)], f).unwrap();
        for &(a, b) in &[(0.3, 0.2), (1.99, -0.99), (0.0, 1.0), (1.25, 0.1)] {
            assert!((g.eval(&[a, b]) - f(&[a, b])).abs() < 1e-12);
        }
        assert_eq!(g.eval(&[5.0, -5.0]), f(&[2.0, -1.0]));
        // row-major, last axis fastest
        assert_eq!(g.nodes()[1], vec![0.0, linspace(-1.0, 1.0, 7)[1]]);
    }

    #[test]
    fn nearest_node_ties_go_low() {
        let g = GridValueFunction::uniform(&[(0.0, 1.0), (0.0, 1.0)], &[3, 3], 0.0).unwrap();
        assert_eq!(g.nearest_node(&[0.25, 0.75]), 1);
        assert_eq!(g.nearest_node(&[0.26, 0.76]), 3 + 2);
        assert_eq!(g.nearest_node(&[-1.0, 9.0]), 2);
    }

    #[test]
    fn grid_validation() {
        assert!(GridValueFunction::new(vec![vec![0.0]], vec![0.0]).is_err());
        assert!(GridValueFunction::new(vec![vec![0.0, 0.0]], vec![0.0, 0.0]).is_err());
        assert!(GridValueFunction::new(vec![vec![0.0, 1.0]], vec![0.0]).is_err());
        assert!(Policy::new(vec![vec![0.0, 1.0]], 2, PolicyRule::Deterministic(vec![0, 2])).is_err());
        assert!(Policy::new(vec![vec![0.0, 1.0]], 2, PolicyRule::Randomized(vec![vec![0.5, 0.6]; 2])).is_err());
    }

    #[test]
    fn csv_layout() {
        let v = GridValueFunction::new(vec![vec![0.0, 1.0]], vec![0.5, 1.5]).unwrap();
        let mut buf = Vec::new();
        v.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x0,value\n0,0.5\n1,1.5\n");
        let p =
            Policy::new(vec![vec![0.0, 1.0]], 2, PolicyRule::Randomized(vec![vec![0.5, 0.5], vec![1.0, 0.0]])).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x0,phi_0,phi_1\n0,0.5,0.5\n1,1,0\n");
    }
}
