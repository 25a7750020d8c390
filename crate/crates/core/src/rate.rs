//! Sample-size sweeps: sup-norm error of the empirical-center fixed point
//! against the exact-center one, and log-log slope fits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ambiguity::{AmbiguitySpec, DualTolerances};
use crate::bellman::{zero_grid, Adversary, Bellman, BellmanError, GridValueFunction};
use crate::measures::{DiscreteMeasure, MeasureError};
use crate::models::ControlProblem;

#[derive(Debug, Error)]
pub enum RateError {
    #[error("slope fit needs at least 3 distinct sample sizes with positive median error, found {0}")]
    InsufficientPoints(usize),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error(transparent)]
    Bellman(#[from] BellmanError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// `(1 + k(k-1) delta)^(-1/(k-1))`.
pub fn p_k(k: f64, delta: f64) -> f64 {
    (1.0 + k * (k - 1.0) * delta).powf(-1.0 / (k - 1.0))
}

/// `k(k-1) delta / (2 (1 + k(k-1) delta))`.
pub fn chi_k(k: f64, delta: f64) -> f64 {
    let s = k * (k - 1.0) * delta;
    s / (2.0 * (1.0 + s))
}

/// Hex SHA-256 of the canonical (key-sorted, compact) JSON form.
pub fn config_digest<T: Serialize>(value: &T) -> String {
    let canonical = serde_json::to_value(value).map(|v| v.to_string()).unwrap_or_default();
    let hash = Sha256::digest(canonical.as_bytes());
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub n_grid: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub adversary: Adversary,
    pub tol: f64,
    pub max_iters: Option<usize>,
    pub nodes: Option<Vec<usize>>,
    pub dual: DualTolerances,
}

impl SweepSettings {
    pub fn new(n_grid: Vec<usize>, trials: usize, seed: u64) -> Self {
        Self {
            n_grid,
            trials,
            seed,
            adversary: Adversary::Caa,
            tol: 1e-8,
            max_iters: None,
            nodes: None,
            dual: DualTolerances::default(),
        }
    }

    fn validate(&self) -> Result<(), RateError> {
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return Err(RateError::InvalidSweep("n_grid must be nonempty with positive entries".into()));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(RateError::InvalidSweep("n_grid must be strictly ascending".into()));
        }
        if self.trials == 0 {
            return Err(RateError::InvalidSweep("trials must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    /// Index of the center in the family (0 for a single center).
    pub member: usize,
    pub n: usize,
    pub trial: usize,
    /// `None` when the trial failed.
    pub sup_error: Option<f64>,
    /// Sup-node gap between empirical and exact operators applied to the
    /// exact fixed point.
    pub operator_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub rows: Vec<RateRow>,
    /// Per sample size: the median error (largest over family members).
    pub medians: Vec<(usize, f64)>,
    pub fit: Option<SlopeFit>,
    /// Failed trials.
    pub warnings: usize,
    /// Trials with `sup_error > beta * operator_gap + 2 tol`.
    pub audit_violations: usize,
    pub config_digest: String,
}

impl RateReport {
    pub fn write_csv<W: std::io::Write>(&self, out: W, with_member: bool) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if with_member {
            w.write_record(["member", "n", "trial", "sup_error"])?;
        } else {
            w.write_record(["n", "trial", "sup_error"])?;
        }
        for r in &self.rows {
            let err = r.sup_error.map(|e| e.to_string()).unwrap_or_default();
            if with_member {
                w.write_record([r.member.to_string(), r.n.to_string(), r.trial.to_string(), err])?;
            } else {
                w.write_record([r.n.to_string(), r.trial.to_string(), err])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len();
    Some(if m % 2 == 1 { values[m / 2] } else { 0.5 * (values[m / 2 - 1] + values[m / 2]) })
}

/// Median error per sample size over successful trials.
pub fn medians_by_n(rows: &[RateRow]) -> Vec<(usize, f64)> {
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    ns.into_iter()
        .filter_map(|n| {
            let mut e: Vec<f64> = rows.iter().filter(|r| r.n == n).filter_map(|r| r.sup_error).collect();
            median(&mut e).map(|m| (n, m))
        })
        .collect()
}

/// Least squares of `ln(median)` on `ln(n)`.
pub fn fit_points(points: &[(usize, f64)]) -> Result<SlopeFit, RateError> {
    let pts: Vec<(f64, f64)> =
        points.iter().filter(|&&(_, e)| e > 0.0 && e.is_finite()).map(|&(n, e)| ((n as f64).ln(), e.ln())).collect();
    let k = pts.len();
    if k < 3 {
        return Err(RateError::InsufficientPoints(k));
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k as f64;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let stderr = if k > 2 { (ssr / (k - 2) as f64 / sxx).sqrt() } else { 0.0 };
    Ok(SlopeFit { slope, intercept, stderr })
}

/// Median per `n`, then [`fit_points`].
pub fn fit_slope(rows: &[RateRow]) -> Result<SlopeFit, RateError> {
    fit_points(&medians_by_n(rows))
}

/// Spearman rank correlation (average ranks on ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                r[k] = (i + j) as f64 / 2.0 + 1.0;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// The two-point hard instances `(1-p) delta_0 + p delta_1` with
/// `1 - p` log-spaced over `[eps_lo, eps_hi]`.
pub fn hard_instance_family(eps_lo: f64, eps_hi: f64, members: usize) -> Result<Vec<DiscreteMeasure>, MeasureError> {
    let (a, b) = (eps_lo.ln(), eps_hi.ln());
    (0..members)
        .map(|i| {
            let t = if members == 1 { 0.0 } else { i as f64 / (members - 1) as f64 };
            DiscreteMeasure::two_point(1.0 - (a + t * (b - a)).exp())
        })
        .collect()
}

struct Reference<'a> {
    exact: GridValueFunction,
    exact_image: GridValueFunction,
    center: &'a DiscreteMeasure,
}

fn reference<'a>(
    problem: &ControlProblem,
    spec: AmbiguitySpec,
    candidates: Option<&[Vec<f64>]>,
    center: &'a DiscreteMeasure,
    s: &SweepSettings,
) -> Result<Reference<'a>, RateError> {
    let op = Bellman::new(problem, spec, center.clone(), candidates, s.dual)?;
    let fp = op.solve_fixed_point(s.adversary, zero_grid(problem, s.nodes.as_deref())?, s.tol, s.max_iters)?;
    let exact_image = op.apply(s.adversary, &fp.value)?;
    Ok(Reference { exact: fp.value, exact_image, center })
}

fn trial(
    problem: &ControlProblem,
    spec: AmbiguitySpec,
    candidates: Option<&[Vec<f64>]>,
    r: &Reference<'_>,
    empirical: DiscreteMeasure,
    s: &SweepSettings,
) -> Result<(f64, f64), RateError> {
    let with_atoms;
    let cands = match candidates {
        Some(c) => {
            let mut c = c.to_vec();
            c.extend(empirical.atoms().iter().cloned());
            with_atoms = c;
            Some(with_atoms.as_slice())
        }
        None => None,
    };
    let op = Bellman::new(problem, spec, empirical, cands, s.dual)?;
    let fp = op.solve_fixed_point(s.adversary, zero_grid(problem, s.nodes.as_deref())?, s.tol, s.max_iters)?;
    let gap = op.apply(s.adversary, &r.exact)?.sup_distance(&r.exact_image);
    Ok((fp.value.sup_distance(&r.exact), gap))
}

/// Sweep over a family of true centers. Trial `(member, n, trial)` draws
/// its samples from the stream `(seed, member, n, trial)`; `sampler`
/// turns a center into the empirical measure for that trial.
pub fn run_family_sweep_with<F>(
    problem: &ControlProblem,
    spec: AmbiguitySpec,
    centers: &[DiscreteMeasure],
    candidates: Option<&[Vec<f64>]>,
    s: &SweepSettings,
    digest: String,
    sampler: F,
) -> Result<RateReport, RateError>
where
    F: Fn(&DiscreteMeasure, usize, u64, &[u64]) -> Result<DiscreteMeasure, MeasureError> + Sync,
{
    s.validate()?;
    if centers.is_empty() {
        return Err(RateError::InvalidSweep("at least one center is required".into()));
    }
    let refs: Vec<Reference<'_>> =
        centers.par_iter().map(|c| reference(problem, spec, candidates, c, s)).collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, usize, usize)> = (0..centers.len())
        .flat_map(|m| s.n_grid.iter().flat_map(move |&n| (0..s.trials).map(move |t| (m, n, t))))
        .collect();
    let beta = problem.beta();
    let rows: Vec<RateRow> = jobs
        .par_iter()
        .map(|&(member, n, t)| {
            let r = &refs[member];
            let path = [member as u64, n as u64, t as u64];
            let result = sampler(r.center, n, s.seed, &path)
                .map_err(RateError::from)
                .and_then(|emp| trial(problem, spec, candidates, r, emp, s));
            match result {
                Ok((e, g)) => RateRow { member, n, trial: t, sup_error: Some(e), operator_gap: Some(g) },
                Err(err) => {
                    log::warn!("trial (member {member}, n {n}, trial {t}) failed: {err}");
                    RateRow { member, n, trial: t, sup_error: None, operator_gap: None }
                }
            }
        })
        .collect();
    let warnings = rows.iter().filter(|r| r.sup_error.is_none()).count();
    let audit_violations = rows
        .iter()
        .filter(|r| matches!((r.sup_error, r.operator_gap), (Some(e), Some(g)) if e > beta * g + 2.0 * s.tol))
        .count();
    let medians: Vec<(usize, f64)> = s
        .n_grid
        .iter()
        .filter_map(|&n| {
            (0..centers.len())
                .filter_map(|m| {
                    let sub: Vec<RateRow> = rows.iter().filter(|r| r.member == m && r.n == n).cloned().collect();
                    medians_by_n(&sub).first().map(|p| p.1)
                })
                .reduce(f64::max)
                .map(|e| (n, e))
        })
        .collect();
    let fit = fit_points(&medians).ok();
    Ok(RateReport { rows, medians, fit, warnings, audit_violations, config_digest: digest })
}

fn sample_center(c: &DiscreteMeasure, n: usize, seed: u64, path: &[u64]) -> Result<DiscreteMeasure, MeasureError> {
    DiscreteMeasure::from_samples(&c.sample(n, seed, path))
}

/// Sweep with i.i.d. sampling from every center of the family.
pub fn run_family_sweep(
    problem: &ControlProblem,
    spec: AmbiguitySpec,
    centers: &[DiscreteMeasure],
    candidates: Option<&[Vec<f64>]>,
    s: &SweepSettings,
    digest: String,
) -> Result<RateReport, RateError> {
    run_family_sweep_with(problem, spec, centers, candidates, s, digest, sample_center)
}

/// Sweep around one true center.
pub fn run_sweep(
    problem: &ControlProblem,
    spec: AmbiguitySpec,
    true_center: &DiscreteMeasure,
    candidates: Option<&[Vec<f64>]>,
    s: &SweepSettings,
    digest: String,
) -> Result<RateReport, RateError> {
    run_family_sweep(problem, spec, std::slice::from_ref(true_center), candidates, s, digest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ambiguity::Cost;
    use crate::models::{build_model, ModelConfig};

    fn rows_from(f: impl Fn(f64) -> f64) -> Vec<RateRow> {
        [64usize, 128, 256, 512, 1024]
            .iter()
            .flat_map(|&n| (0..3).map(move |t| (n, t)).collect::<Vec<_>>())
            .map(|(n, t)| RateRow { member: 0, n, trial: t, sup_error: Some(f(n as f64)), operator_gap: None })
            .collect()
    }

    #[test]
    fn synthetic_slopes() {
        let fit = fit_slope(&rows_from(|n| n.powf(-0.5))).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        let fit = fit_slope(&rows_from(|n| 3.0 * n.powf(-1.0 / 3.0))).unwrap();
        assert!((fit.slope + 1.0 / 3.0).abs() < 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
        let fit = fit_slope(&rows_from(|_| 0.7)).unwrap();
        assert!(fit.slope.abs() < 1e-12 && fit.stderr < 1e-12);
    }

    #[test]
    fn too_few_points() {
        let rows: Vec<RateRow> = rows_from(|n| 1.0 / n).into_iter().filter(|r| r.n < 200).collect();
        assert!(matches!(fit_slope(&rows), Err(RateError::InsufficientPoints(2))));
    }

    #[test]
    fn helper_formulas() {
        for &k in &[1.2, 1.5, 2.0, 3.0] {
            for &d in &[0.01, 0.1, 0.5, 2.0] {
                let p = p_k(k, d);
                let kk = k * (k - 1.0);
                assert!(((p.powf(1.0 - k) - 1.0) / kk - d).abs() < 1e-12);
                assert!((chi_k(k, d) - (1.0 - p.powf(k - 1.0)) / 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 4.0, 9.0, 16.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn digest_is_key_order_free() {
        let a: serde_json::Value = serde_json::from_str(r#"{"b":1,"a":[1,2]}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str(r#"{"a":[1,2], "b":1}"#).unwrap();
        assert_eq!(config_digest(&a), config_digest(&b));
        assert_eq!(config_digest(&a).len(), 64);
    }

    #[test]
    fn identical_centers_give_zero_error() {
        let p = build_model(&ModelConfig::Lemma5 { actions: vec![0.0] }, 0.9).unwrap();
        let c = DiscreteMeasure::two_point(0.5).unwrap();
        let spec = AmbiguitySpec::wasserstein(0.09, Cost::SquaredEuclidean);
        let mut s = SweepSettings::new(vec![64], 1, 3);
        s.nodes = Some(vec![21]);
        let report =
            run_family_sweep_with(&p, spec, std::slice::from_ref(&c), None, &s, String::new(), |c, _, _, _| {
                Ok(c.clone())
            })
            .unwrap();
        assert!(report.rows[0].sup_error.unwrap() <= 2.0 * s.tol * p.beta());
        assert_eq!(report.audit_violations, 0);
    }

    #[test]
    fn sweep_is_deterministic_and_audited() {
        let p = build_model(&ModelConfig::Lemma5 { actions: vec![0.0] }, 0.9).unwrap();
        let c = DiscreteMeasure::two_point(0.5).unwrap();
        let spec = AmbiguitySpec::fk(2.0, 0.1);
        let mut s = SweepSettings::new(vec![16, 64, 256], 4, 9);
        s.nodes = Some(vec![11]);
        let a = run_sweep(&p, spec, &c, None, &s, "x".into()).unwrap();
        let b = run_sweep(&p, spec, &c, None, &s, "x".into()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 12);
        assert_eq!(a.warnings, 0);
        assert_eq!(a.audit_violations, 0);
        assert!(a.fit.is_some());
    }

    #[test]
    fn family_members() {
        let fam = hard_instance_family(1e-5, 0.5, 48).unwrap();
        assert_eq!(fam.len(), 48);
        assert!((fam[0].weight_of(&[0.0]) - 1e-5).abs() < 1e-15);
        assert!((fam[47].weight_of(&[1.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_grids() {
        let p = build_model(&ModelConfig::Lemma5 { actions: vec![0.0] }, 0.9).unwrap();
        let c = DiscreteMeasure::two_point(0.5).unwrap();
        let spec = AmbiguitySpec::fk(2.0, 0.1);
        for s in [SweepSettings::new(vec![64, 32], 1, 0), SweepSettings::new(vec![64], 0, 0)] {
            assert!(matches!(run_sweep(&p, spec, &c, None, &s, String::new()), Err(RateError::InvalidSweep(_))));
        }
    }
}
