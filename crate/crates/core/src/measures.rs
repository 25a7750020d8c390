//! Finite-support probability measures and sample ingestion.

use std::collections::HashMap;
use std::fmt;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("sample set is empty")]
    EmptySampleSet,
    #[error("non-finite value in sample row {row}")]
    NonFiniteSample { row: usize },
    #[error("row {row} has dimension {found}, expected {expected}")]
    DimensionMismatch { row: usize, expected: usize, found: usize },
    #[error("probability must lie in [0, 1], got {0}")]
    InvalidProbability(f64),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("function value is not finite at atom {atom}")]
    NonFiniteFunctionValue { atom: usize },
    #[error("sample file: {0}")]
    Io(String),
}

/// Where a sample set came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    File(String),
    Generator { name: String, seed: u64 },
    Inline,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::File(p) => write!(f, "file:{p}"),
            Provenance::Generator { name, seed } => write!(f, "{name}(seed={seed})"),
            Provenance::Inline => write!(f, "inline"),
        }
    }
}

/// Rows of noise vectors, all of the same dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    rows: Vec<Vec<f64>>,
    dim: usize,
    provenance: Provenance,
}

impl SampleSet {
    pub fn new(rows: Vec<Vec<f64>>, provenance: Provenance) -> Result<Self, MeasureError> {
        let dim = rows.first().map(Vec::len).ok_or(MeasureError::EmptySampleSet)?;
        if dim == 0 {
            return Err(MeasureError::DimensionMismatch { row: 0, expected: 1, found: 0 });
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(MeasureError::DimensionMismatch { row: i, expected: dim, found: row.len() });
            }
        }
        Ok(Self { rows, dim, provenance })
    }

    /// Scalar samples.
    pub fn from_scalars(values: &[f64], provenance: Provenance) -> Result<Self, MeasureError> {
        Self::new(values.iter().map(|&v| vec![v]).collect(), provenance)
    }

    /// Reads one sample per CSV row. `header` skips the first row.
    pub fn from_csv_reader<R: Read>(reader: R, header: bool, provenance: Provenance) -> Result<Self, MeasureError> {
        let mut rdr =
            csv::ReaderBuilder::new().has_headers(header).trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| MeasureError::Io(e.to_string()))?;
            let row = rec
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| MeasureError::Io(format!("row {i}: {e}")))?;
            rows.push(row);
        }
        Self::new(rows, provenance)
    }

    pub fn from_csv_path(path: &Path, header: bool) -> Result<Self, MeasureError> {
        let file = std::fs::File::open(path).map_err(|e| MeasureError::Io(format!("{}: {e}", path.display())))?;
        Self::from_csv_reader(file, header, Provenance::File(path.display().to_string()))
    }

    /// `n` i.i.d. Bernoulli(p) draws on {0, 1} from the stream `(seed, path)`.
    pub fn bernoulli(p: f64, n: usize, seed: u64, path: &[u64]) -> Result<Self, MeasureError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(MeasureError::InvalidProbability(p));
        }
        let mut rng = rng::stream(seed, path);
        let rows = (0..n).map(|_| vec![if rng::uniform(&mut rng) < p { 1.0 } else { 0.0 }]).collect();
        Self::new(rows, Provenance::Generator { name: format!("bernoulli(p={p})"), seed })
    }

    /// `n` draws uniform on the grid `{lo + i (hi - lo)/(points - 1)}`.
    pub fn uniform_grid(
        lo: f64,
        hi: f64,
        points: usize,
        n: usize,
        seed: u64,
        path: &[u64],
    ) -> Result<Self, MeasureError> {
        if points < 1 || !(lo.is_finite() && hi.is_finite()) || hi < lo {
            return Err(MeasureError::InvalidWeights(format!("bad grid [{lo}, {hi}] with {points} points")));
        }
        let mut rng = rng::stream(seed, path);
        let step = if points > 1 { (hi - lo) / (points - 1) as f64 } else { 0.0 };
        let rows = (0..n)
            .map(|_| {
                let i = rng.random_range(0..points);
                vec![if i + 1 == points { hi } else { lo + step * i as f64 }]
            })
            .collect();
        Self::new(rows, Provenance::Generator { name: format!("uniform_grid({lo},{hi},{points})"), seed })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }
}

fn point_key(p: &[f64]) -> Vec<u64> {
    p.iter().map(|v| v.to_bits()).collect()
}

/// A probability measure with finitely many atoms.
///
/// Atoms are kept in first-appearance order and merged only on exact bitwise
/// equality of their coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    atoms: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Builds a measure from atoms and weights. Weights must be nonnegative
    /// and sum to one within 1e-9; they are renormalized exactly.
    pub fn new(atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self, MeasureError> {
        if atoms.is_empty() {
            return Err(MeasureError::InvalidWeights("no atoms".into()));
        }
        if atoms.len() != weights.len() {
            return Err(MeasureError::InvalidWeights(format!("{} atoms but {} weights", atoms.len(), weights.len())));
        }
        let dim = atoms[0].len();
        for (i, a) in atoms.iter().enumerate() {
            if a.len() != dim || dim == 0 {
                return Err(MeasureError::DimensionMismatch { row: i, expected: dim.max(1), found: a.len() });
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(MeasureError::NonFiniteSample { row: i });
            }
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(MeasureError::InvalidWeights(format!("weight {w} is not a nonnegative number")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(MeasureError::InvalidWeights(format!("weights sum to {total}")));
        }
        let mut merged_atoms: Vec<Vec<f64>> = Vec::new();
        let mut merged_weights: Vec<f64> = Vec::new();
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        for (a, w) in atoms.into_iter().zip(weights) {
            match index.get(&point_key(&a)) {
                Some(&j) => merged_weights[j] += w,
                None => {
                    index.insert(point_key(&a), merged_atoms.len());
                    merged_atoms.push(a);
                    merged_weights.push(w);
                }
            }
        }
        // drop zero-mass atoms unless everything would vanish
        if merged_weights.iter().any(|&w| w > 0.0) {
            let (a, w): (Vec<_>, Vec<_>) =
                merged_atoms.into_iter().zip(merged_weights).filter(|(_, w)| *w > 0.0).unzip();
            merged_atoms = a;
            merged_weights = w;
        }
        let total: f64 = merged_weights.iter().sum();
        merged_weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self { atoms: merged_atoms, weights: merged_weights })
    }

    /// Scalar atoms.
    pub fn from_scalars(atoms: &[f64], weights: &[f64]) -> Result<Self, MeasureError> {
        Self::new(atoms.iter().map(|&a| vec![a]).collect(), weights.to_vec())
    }

    pub fn dirac(point: Vec<f64>) -> Result<Self, MeasureError> {
        Self::new(vec![point], vec![1.0])
    }

    /// Empirical measure of a sample set: multiplicity / n per distinct row.
    pub fn from_samples(s: &SampleSet) -> Result<Self, MeasureError> {
        if s.is_empty() {
            return Err(MeasureError::EmptySampleSet);
        }
        let mut atoms: Vec<Vec<f64>> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        for (i, row) in s.rows().iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(MeasureError::NonFiniteSample { row: i });
            }
            let key = point_key(row);
            match index.get(&key) {
                Some(&j) => counts[j] += 1,
                None => {
                    index.insert(key, atoms.len());
                    atoms.push(row.clone());
                    counts.push(1);
                }
            }
        }
        let n = s.len() as f64;
        let weights = counts.into_iter().map(|c| c as f64 / n).collect();
        Ok(Self { atoms, weights })
    }

    /// `p` mass at 1 and `1 - p` at 0 (degenerate ends collapse to one atom).
    pub fn two_point(p: f64) -> Result<Self, MeasureError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(MeasureError::InvalidProbability(p));
        }
        Self::new(vec![vec![0.0], vec![1.0]], vec![1.0 - p, p])
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].len()
    }

    /// Weight assigned to `point` (exact match), zero if absent.
    pub fn weight_of(&self, point: &[f64]) -> f64 {
        let key = point_key(point);
        self.atoms.iter().position(|a| point_key(a) == key).map_or(0.0, |i| self.weights[i])
    }

    /// `sum_i weight_i g(atom_i)`.
    pub fn expectation<G: Fn(&[f64]) -> f64>(&self, g: G) -> Result<f64, MeasureError> {
        let mut acc = 0.0;
        for (i, (a, w)) in self.atoms.iter().zip(&self.weights).enumerate() {
            let v = g(a);
            if !v.is_finite() {
                return Err(MeasureError::NonFiniteFunctionValue { atom: i });
            }
            acc += w * v;
        }
        Ok(acc)
    }

    /// Draws `n` i.i.d. samples from the stream `(seed, path)`.
    pub fn sample(&self, n: usize, seed: u64, path: &[u64]) -> SampleSet {
        let mut rng = rng::stream(seed, path);
        let rows = (0..n).map(|_| self.atoms[rng::sample_index(&mut rng, &self.weights)].clone()).collect();
        SampleSet { rows, dim: self.dim(), provenance: Provenance::Generator { name: "discrete".into(), seed } }
    }

    /// Smallest and largest coordinate per dimension.
    pub fn bounding_box(&self) -> Vec<(f64, f64)> {
        (0..self.dim())
            .map(|d| {
                self.atoms.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| (lo.min(a[d]), hi.max(a[d])))
            })
            .collect()
    }
}
