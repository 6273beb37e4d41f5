//! Seeded Monte Carlo studies of the estimators.
//!
//! A study draws `N` multivariate-normal rows per replicate, punches holes
//! with a configured missingness mechanism, applies a list of estimators,
//! and aggregates empirical moments against the closed-form variances.
//!
//! Reproducibility: replicate `r` draws from stream `r` of a ChaCha cipher
//! keyed by the master seed, and aggregation is a fixed-order reduction over
//! the replicate index, so serial and parallel schedules agree bit for bit.
//! Within a replicate the draw order is: the `Q` standard normals of each
//! row first, then that row's mechanism draws.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bivariate::{self, BivariateConfig, SubsampleMeans};
use crate::error::{Error, Result};
use crate::estimator::{
    hierarchical_estimate, CovarianceMode, EstimateOptions, HierarchicalEstimate,
};
use crate::params::ParameterDef;
use crate::pattern::{partition, Dataset, MissingPattern, PatternPartition};

/// Population the rows are drawn from: multivariate normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl Population {
    pub fn q(&self) -> usize {
        self.mean.len()
    }

    pub fn cov_matrix(&self) -> Result<DMatrix<f64>> {
        let q = self.q();
        if q == 0 || self.cov.len() != q || self.cov.iter().any(|r| r.len() != q) {
            return Err(Error::InvalidPopulation);
        }
        let m = DMatrix::from_fn(q, q, |i, j| self.cov[i][j]);
        for i in 0..q {
            for j in 0..q {
                if !m[(i, j)].is_finite() || (m[(i, j)] - m[(j, i)]).abs() > 1e-12 {
                    return Err(Error::InvalidPopulation);
                }
            }
        }
        Ok(m)
    }

    fn cholesky_l(&self) -> Result<DMatrix<f64>> {
        self.cov_matrix()?
            .cholesky()
            .map(|c| c.l())
            .ok_or(Error::InvalidPopulation)
    }
}

/// One pattern's share of a mixture mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternProb {
    pub pattern: MissingPattern,
    pub prob: f64,
}

/// How cells go missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Mechanism {
    /// Each row draws its pattern independently from a fixed mixture.
    Mcar { patterns: Vec<PatternProb> },
    /// After each observed component a row drops out with this probability;
    /// observed components are always a prefix.
    MonotoneDropout { dropout: f64 },
    /// Pattern mixture as in MCAR, but incomplete rows have the unknown
    /// shift added to their observed component (bivariate only).
    DeltaShift {
        patterns: Vec<PatternProb>,
        shift: f64,
    },
}

impl Mechanism {
    pub fn is_ignorable(&self) -> bool {
        matches!(self, Mechanism::Mcar { .. } | Mechanism::MonotoneDropout { .. })
    }

    fn validate(&self, q: usize) -> Result<()> {
        let check_mixture = |patterns: &[PatternProb]| -> Result<()> {
            if patterns.is_empty() {
                return Err(Error::InvalidConfig("pattern mixture is empty".into()));
            }
            let mut total = 0.0;
            for pp in patterns {
                if pp.pattern.q() != q {
                    return Err(Error::InvalidConfig(format!(
                        "pattern {} has dimension {}, expected {q}",
                        pp.pattern,
                        pp.pattern.q()
                    )));
                }
                if !(0.0..=1.0).contains(&pp.prob) {
                    return Err(Error::InvalidConfig(format!(
                        "pattern probability {} outside [0, 1]",
                        pp.prob
                    )));
                }
                total += pp.prob;
            }
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "pattern probabilities sum to {total}, expected 1"
                )));
            }
            Ok(())
        };
        match self {
            Mechanism::Mcar { patterns } => check_mixture(patterns),
            Mechanism::MonotoneDropout { dropout } => {
                if (0.0..=1.0).contains(dropout) {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig(format!(
                        "dropout probability {dropout} outside [0, 1]"
                    )))
                }
            }
            Mechanism::DeltaShift { patterns, shift } => {
                check_mixture(patterns)?;
                if !shift.is_finite() {
                    return Err(Error::InvalidConfig("shift must be finite".into()));
                }
                if q != 2 {
                    return Err(Error::InvalidConfig(
                        "the shift mechanism is bivariate".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// The estimators a study can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    /// Component means over complete rows only.
    CompleteCase,
    /// Each component's mean over every row observing it.
    AvailableCase,
    /// The full hierarchy with the population covariance supplied.
    HierarchicalKnown,
    /// The full hierarchy with subsample-estimated covariances.
    HierarchicalPlugin,
    /// Bivariate mean-vector closed form at the true covariance.
    ClosedFormMeanVector,
    /// Bivariate change-score closed form at the true covariance.
    ClosedFormChangeScore,
    /// Shift-robust pooled change score.
    NonignorableShift,
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::CompleteCase => "complete-case",
            EstimatorKind::AvailableCase => "available-case",
            EstimatorKind::HierarchicalKnown => "hierarchical-known",
            EstimatorKind::HierarchicalPlugin => "hierarchical-plugin",
            EstimatorKind::ClosedFormMeanVector => "closed-form-mean-vector",
            EstimatorKind::ClosedFormChangeScore => "closed-form-change-score",
            EstimatorKind::NonignorableShift => "nonignorable-shift",
        }
    }

    fn needs_bivariate(&self) -> bool {
        matches!(
            self,
            EstimatorKind::ClosedFormMeanVector
                | EstimatorKind::ClosedFormChangeScore
                | EstimatorKind::NonignorableShift
        )
    }

    fn labels(&self, q: usize) -> Vec<String> {
        match self {
            EstimatorKind::NonignorableShift => vec![
                "delta_complete".into(),
                "delta_incomplete".into(),
                "delta_combined".into(),
            ],
            EstimatorKind::ClosedFormChangeScore => vec!["delta".into()],
            EstimatorKind::ClosedFormMeanVector => {
                vec!["mu_1".into(), "mu_2".into(), "delta".into()]
            }
            _ => {
                let mut labels: Vec<String> = (1..=q).map(|i| format!("mu_{i}")).collect();
                if q == 2 {
                    labels.push("delta".into());
                }
                labels
            }
        }
    }

    fn truth(&self, population: &Population) -> Vec<f64> {
        let delta = population.mean[0] - *population.mean.get(1).unwrap_or(&0.0);
        match self {
            EstimatorKind::NonignorableShift => vec![delta; 3],
            EstimatorKind::ClosedFormChangeScore => vec![delta],
            EstimatorKind::ClosedFormMeanVector => {
                vec![population.mean[0], population.mean[1], delta]
            }
            _ => {
                let mut t = population.mean.clone();
                if population.q() == 2 {
                    t.push(delta);
                }
                t
            }
        }
    }
}

/// Tolerances of the pass/fail verdicts in a study report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Mean checks: |bias| within this many Monte Carlo standard errors.
    pub mean_se: f64,
    /// Variance checks: relative deviation from the formula value.
    pub var_rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            mean_se: 4.0,
            var_rel: 0.02,
        }
    }
}

/// Full specification of one replication study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub population: Population,
    pub mechanism: Mechanism,
    pub sample_size: usize,
    pub replicates: usize,
    pub estimators: Vec<EstimatorKind>,
    pub seed: u64,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl StudySpec {
    pub fn validate(&self) -> Result<()> {
        let q = self.population.q();
        self.population.cholesky_l()?;
        self.mechanism.validate(q)?;
        if self.sample_size < 2 {
            return Err(Error::InvalidConfig("sample size must be at least 2".into()));
        }
        if self.replicates < 1 {
            return Err(Error::InvalidConfig("need at least one replicate".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidConfig("estimator list is empty".into()));
        }
        for kind in &self.estimators {
            if kind.needs_bivariate() && q != 2 {
                return Err(Error::EstimatorNotApplicable(kind.name().into()));
            }
        }
        Ok(())
    }
}

fn replicate_rng(seed: u64, replicate: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

/// Draws one replicate's dataset: `N` population rows with the mechanism
/// applied. Deterministic given `(spec.seed, replicate)`.
pub fn generate(spec: &StudySpec, replicate: u64) -> Result<Dataset<f64>> {
    spec.population.cov_matrix()?;
    let l = spec.population.cholesky_l()?;
    let q = spec.population.q();
    let mut rng = replicate_rng(spec.seed, replicate);
    let mean = DVector::from_column_slice(&spec.population.mean);

    let mut rows = Vec::with_capacity(spec.sample_size);
    for _ in 0..spec.sample_size {
        let z = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &mean + &l * z;
        let row = apply_mechanism(&spec.mechanism, &x, &mut rng);
        rows.push(row);
    }
    Dataset::from_rows(rows)
}

fn pick_pattern<'a>(patterns: &'a [PatternProb], rng: &mut ChaCha12Rng) -> &'a MissingPattern {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for pp in patterns {
        acc += pp.prob;
        if u < acc {
            return &pp.pattern;
        }
    }
    &patterns.last().expect("non-empty mixture").pattern
}

fn apply_mechanism(
    mechanism: &Mechanism,
    x: &DVector<f64>,
    rng: &mut ChaCha12Rng,
) -> Vec<Option<f64>> {
    let q = x.len();
    match mechanism {
        Mechanism::Mcar { patterns } => {
            let p = pick_pattern(patterns, rng);
            (0..q).map(|c| p.is_observed(c).then(|| x[c])).collect()
        }
        Mechanism::MonotoneDropout { dropout } => {
            let mut keep = q;
            for k in 1..q {
                if rng.random::<f64>() < *dropout {
                    keep = k;
                    break;
                }
            }
            (0..q).map(|c| (c < keep).then(|| x[c])).collect()
        }
        Mechanism::DeltaShift { patterns, shift } => {
            let p = pick_pattern(patterns, rng);
            let incomplete = p.n_observed() < q;
            (0..q)
                .map(|c| {
                    p.is_observed(c)
                        .then(|| if incomplete { x[c] + shift } else { x[c] })
                })
                .collect()
        }
    }
}

/// One estimator's output on one replicate.
struct ReplicateOutput {
    values: Vec<f64>,
    /// Per-label formula variance at the replicate's realized subsample
    /// sizes, where a formula exists.
    theory: Vec<Option<f64>>,
}

fn component_means(
    data: &Dataset<f64>,
    part: &PatternPartition,
    pattern: &MissingPattern,
) -> Option<Vec<f64>> {
    let rows = part.group(pattern)?;
    let q = data.q();
    let mut sums = vec![0.0; q];
    for &r in rows {
        for (s, cell) in sums.iter_mut().zip(data.row(r)) {
            if let Some(v) = cell {
                *s += v;
            }
        }
    }
    Some(
        sums.into_iter()
            .map(|s| s / rows.len() as f64)
            .collect(),
    )
}

fn bivariate_patterns() -> (MissingPattern, MissingPattern, MissingPattern) {
    (
        MissingPattern::new(vec![true, true]).unwrap(),
        MissingPattern::new(vec![true, false]).unwrap(),
        MissingPattern::new(vec![false, true]).unwrap(),
    )
}

fn realized_means(
    data: &Dataset<f64>,
    part: &PatternPartition,
) -> Result<(SubsampleMeans<f64>, usize, usize, usize)> {
    let (p11, p10, p01) = bivariate_patterns();
    let complete = component_means(data, part, &p11).ok_or(Error::NoCompleteCases)?;
    let first = component_means(data, part, &p10).map(|m| m[0]);
    let second = component_means(data, part, &p01).map(|m| m[1]);
    let means = SubsampleMeans {
        complete_1: complete[0],
        complete_2: complete[1],
        first_only: first.unwrap_or(0.0),
        second_only: second.unwrap_or(0.0),
    };
    Ok((means, part.size(&p11), part.size(&p10), part.size(&p01)))
}

fn hierarchy_outputs(fit: &HierarchicalEstimate<f64>, q: usize) -> ReplicateOutput {
    let mut values: Vec<f64> = (0..q).map(|i| fit.root.theta_tilde[i]).collect();
    let mut theory: Vec<Option<f64>> = (0..q).map(|i| Some(fit.root.cov_tilde[(i, i)])).collect();
    if q == 2 {
        values.push(fit.root.theta_tilde[0] - fit.root.theta_tilde[1]);
        theory.push(Some(
            fit.root.cov_tilde[(0, 0)] - 2.0 * fit.root.cov_tilde[(0, 1)]
                + fit.root.cov_tilde[(1, 1)],
        ));
    }
    ReplicateOutput { values, theory }
}

fn apply_estimator(
    kind: EstimatorKind,
    spec: &StudySpec,
    sigma: &DMatrix<f64>,
    data: &Dataset<f64>,
    part: &PatternPartition,
) -> Result<ReplicateOutput> {
    let q = data.q();
    match kind {
        EstimatorKind::CompleteCase => {
            let root = MissingPattern::complete(q)?;
            let means = component_means(data, part, &root).ok_or(Error::NoCompleteCases)?;
            let j = part.size(&root) as f64;
            let mut values = means.clone();
            let mut theory: Vec<Option<f64>> =
                (0..q).map(|c| Some(sigma[(c, c)] / j)).collect();
            if q == 2 {
                values.push(means[0] - means[1]);
                theory.push(Some(
                    (sigma[(0, 0)] - 2.0 * sigma[(0, 1)] + sigma[(1, 1)]) / j,
                ));
            }
            Ok(ReplicateOutput { values, theory })
        }
        EstimatorKind::AvailableCase => {
            let mut values = Vec::with_capacity(q + 1);
            let mut theory = Vec::with_capacity(q + 1);
            // Under a shift mechanism the pooled rows are not identically
            // distributed and sigma/n understates the variance.
            let attach_theory = spec.mechanism.is_ignorable();
            for c in 0..q {
                let mut sum = 0.0;
                let mut n = 0usize;
                for row in data.rows() {
                    if let Some(v) = row[c] {
                        sum += v;
                        n += 1;
                    }
                }
                if n == 0 {
                    return Err(Error::NoData);
                }
                values.push(sum / n as f64);
                theory.push(attach_theory.then(|| sigma[(c, c)] / n as f64));
            }
            if q == 2 {
                values.push(values[0] - values[1]);
                theory.push(None);
            }
            Ok(ReplicateOutput { values, theory })
        }
        EstimatorKind::HierarchicalKnown | EstimatorKind::HierarchicalPlugin => {
            let params: Vec<ParameterDef<f64>> = (0..q).map(ParameterDef::mean).collect();
            let mode = if kind == EstimatorKind::HierarchicalKnown {
                CovarianceMode::Known(sigma.clone())
            } else {
                CovarianceMode::PlugIn
            };
            let fit = hierarchical_estimate(data, &params, &mode, &EstimateOptions::default())?;
            let mut out = hierarchy_outputs(&fit, q);
            if kind == EstimatorKind::HierarchicalPlugin {
                // Plug-in covariances are estimates, not formula values.
                out.theory = vec![None; out.values.len()];
            }
            Ok(out)
        }
        EstimatorKind::ClosedFormMeanVector => {
            let (means, j11, j21, j22) = realized_means(data, part)?;
            let cfg = BivariateConfig::new(
                sigma[(0, 0)],
                sigma[(0, 1)],
                sigma[(1, 1)],
                j11,
                j21,
                j22,
            )?;
            let (est, cov) = bivariate::mean_vector(&means, &cfg)?;
            Ok(ReplicateOutput {
                values: vec![est[0], est[1], est[0] - est[1]],
                theory: vec![
                    Some(cov[(0, 0)]),
                    Some(cov[(1, 1)]),
                    Some(cov[(0, 0)] - 2.0 * cov[(0, 1)] + cov[(1, 1)]),
                ],
            })
        }
        EstimatorKind::ClosedFormChangeScore => {
            let (means, j11, j21, _) = realized_means(data, part)?;
            let cfg =
                BivariateConfig::new(sigma[(0, 0)], sigma[(0, 1)], sigma[(1, 1)], j11, j21, 0)?;
            let (est, var) = bivariate::change_score(&means, &cfg)?;
            Ok(ReplicateOutput {
                values: vec![est],
                theory: vec![Some(var)],
            })
        }
        EstimatorKind::NonignorableShift => {
            let (means, j11, j21, j22) = realized_means(data, part)?;
            if j21 == 0 || j22 == 0 {
                return Err(Error::InvalidConfig(
                    "shift adjustment needs both incomplete patterns".into(),
                ));
            }
            let cfg = BivariateConfig::new(
                sigma[(0, 0)],
                sigma[(0, 1)],
                sigma[(1, 1)],
                j11,
                j21,
                j22,
            )?;
            let (combined, var_combined) = bivariate::nonignorable_shift(&means, &cfg)?;
            let delta_complete = means.complete_1 - means.complete_2;
            let delta_incomplete = means.first_only - means.second_only;
            let a = cfg.sigma11 - 2.0 * cfg.sigma12 + cfg.sigma22;
            Ok(ReplicateOutput {
                values: vec![delta_complete, delta_incomplete, combined],
                theory: vec![
                    Some(a / j11 as f64),
                    Some(cfg.sigma11 / j21 as f64 + cfg.sigma22 / j22 as f64),
                    Some(var_combined),
                ],
            })
        }
    }
}

/// One verdict in a study report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Aggregated results of one estimator over all replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub kind: EstimatorKind,
    pub labels: Vec<String>,
    pub n_success: usize,
    pub n_failed: usize,
    pub truth: Vec<f64>,
    pub empirical_mean: Vec<f64>,
    pub bias: Vec<f64>,
    /// Monte Carlo standard error of each empirical mean.
    pub mc_se: Vec<f64>,
    pub empirical_var: Vec<f64>,
    pub empirical_cov: Vec<Vec<f64>>,
    /// Mean of the per-replicate formula variance, where one exists.
    pub theoretical_var: Vec<Option<f64>>,
    pub checks: Vec<CheckResult>,
}

/// Full study output. Reproducible bit for bit from `(spec, seed)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub spec: StudySpec,
    pub mean_pattern_counts: BTreeMap<String, f64>,
    pub mean_dropped: f64,
    pub estimators: Vec<EstimatorReport>,
    pub study_checks: Vec<CheckResult>,
}

impl StudyReport {
    pub fn all_checks_passed(&self) -> bool {
        self.estimators
            .iter()
            .flat_map(|e| &e.checks)
            .chain(&self.study_checks)
            .all(|c| c.passed)
    }
}

struct Accumulator {
    kind: EstimatorKind,
    labels: Vec<String>,
    values: Vec<Vec<f64>>,
    theory_sum: Vec<f64>,
    theory_count: Vec<usize>,
    failed: usize,
}

/// Runs the replication study and aggregates the estimator outputs.
///
/// A replicate where an estimator fails (for example a pattern it needs came
/// out empty) is counted against that estimator and excluded from its
/// aggregates; the study itself never aborts on estimator failures.
pub fn run_study(spec: &StudySpec) -> Result<StudyReport> {
    spec.validate()?;
    let sigma = spec.population.cov_matrix()?;
    let q = spec.population.q();

    let mut accs: Vec<Accumulator> = spec
        .estimators
        .iter()
        .map(|&kind| {
            let labels = kind.labels(q);
            Accumulator {
                kind,
                theory_sum: vec![0.0; labels.len()],
                theory_count: vec![0; labels.len()],
                labels,
                values: Vec::new(),
                failed: 0,
            }
        })
        .collect();
    let mut pattern_counts: BTreeMap<String, f64> = BTreeMap::new();
    let mut dropped_sum = 0.0;

    for rep in 0..spec.replicates as u64 {
        let data = generate(spec, rep)?;
        let part = partition(&data)?;
        for (p, rows) in part.groups() {
            *pattern_counts.entry(p.to_string()).or_insert(0.0) += rows.len() as f64;
        }
        dropped_sum += part.dropped() as f64;

        for acc in accs.iter_mut() {
            match apply_estimator(acc.kind, spec, &sigma, &data, &part) {
                Ok(out) => {
                    debug_assert_eq!(out.values.len(), acc.labels.len());
                    for (i, th) in out.theory.iter().enumerate() {
                        if let Some(v) = th {
                            acc.theory_sum[i] += v;
                            acc.theory_count[i] += 1;
                        }
                    }
                    acc.values.push(out.values);
                }
                Err(_) => acc.failed += 1,
            }
        }
    }

    let r = spec.replicates as f64;
    let mean_pattern_counts = pattern_counts
        .into_iter()
        .map(|(k, v)| (k, v / r))
        .collect();

    let mut estimators = Vec::with_capacity(accs.len());
    for acc in &accs {
        estimators.push(summarize(acc, spec, q)?);
    }
    let study_checks = cross_checks(&estimators, spec);

    Ok(StudyReport {
        spec: spec.clone(),
        mean_pattern_counts,
        mean_dropped: dropped_sum / r,
        estimators,
        study_checks,
    })
}

#[allow(clippy::needless_range_loop)] // triangular index loops
fn mean_and_cov(values: &[Vec<f64>], dim: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = values.len();
    let mut mean = vec![0.0; dim];
    for v in values {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = vec![vec![0.0; dim]; dim];
    if n >= 2 {
        for v in values {
            for a in 0..dim {
                let da = v[a] - mean[a];
                for b in a..dim {
                    cov[a][b] += da * (v[b] - mean[b]);
                }
            }
        }
        for a in 0..dim {
            for b in a..dim {
                let c = cov[a][b] / (n as f64 - 1.0);
                cov[a][b] = c;
                cov[b][a] = c;
            }
        }
    }
    (mean, cov)
}

fn summarize(acc: &Accumulator, spec: &StudySpec, q: usize) -> Result<EstimatorReport> {
    let dim = acc.labels.len();
    let n = acc.values.len();
    let truth = acc.kind.truth(&spec.population);

    if n == 0 {
        return Ok(EstimatorReport {
            kind: acc.kind,
            labels: acc.labels.clone(),
            n_success: 0,
            n_failed: acc.failed,
            truth,
            empirical_mean: Vec::new(),
            bias: Vec::new(),
            mc_se: Vec::new(),
            empirical_var: Vec::new(),
            empirical_cov: Vec::new(),
            theoretical_var: Vec::new(),
            checks: vec![CheckResult {
                name: format!("{}: any-success", acc.kind.name()),
                passed: false,
                detail: "estimator failed on every replicate".into(),
            }],
        });
    }

    let (mean, cov) = mean_and_cov(&acc.values, dim);
    let var: Vec<f64> = (0..dim).map(|i| cov[i][i]).collect();
    let se: Vec<f64> = var.iter().map(|v| (v / n as f64).sqrt()).collect();
    let bias: Vec<f64> = mean.iter().zip(&truth).map(|(m, t)| m - t).collect();
    let theoretical_var: Vec<Option<f64>> = (0..dim)
        .map(|i| {
            (acc.theory_count[i] == n).then(|| acc.theory_sum[i] / n as f64)
        })
        .collect();

    let mut checks = Vec::new();
    let tol = spec.tolerances;
    let shift_mechanism = !spec.mechanism.is_ignorable();
    let unbiased_expected = match acc.kind {
        EstimatorKind::CompleteCase | EstimatorKind::NonignorableShift => true,
        _ => !shift_mechanism,
    };
    for i in 0..dim {
        if unbiased_expected && se[i] > 0.0 {
            checks.push(CheckResult {
                name: format!("unbiased({})", acc.labels[i]),
                passed: bias[i].abs() <= tol.mean_se * se[i],
                detail: format!(
                    "|bias| = {:.3e}, allowed {:.3e} ({} se)",
                    bias[i].abs(),
                    tol.mean_se * se[i],
                    tol.mean_se
                ),
            });
        }
        if let Some(theory) = theoretical_var[i] {
            if theory > 0.0 && n >= 1000 {
                let rel = (var[i] / theory - 1.0).abs();
                checks.push(CheckResult {
                    name: format!("variance-match({})", acc.labels[i]),
                    passed: rel <= tol.var_rel,
                    detail: format!(
                        "empirical {:.6e} vs formula {:.6e}, rel dev {:.3e} (allowed {:.1e})",
                        var[i], theory, rel, tol.var_rel
                    ),
                });
            }
        }
    }
    if shift_mechanism && acc.kind == EstimatorKind::AvailableCase && q == 2 {
        // The naive available-case mean of a shifted component must show the
        // bias the adjustment removes.
        if se[0] > 0.0 {
            checks.push(CheckResult {
                name: "biased-by-shift(mu_1)".into(),
                passed: bias[0].abs() > 10.0 * se[0],
                detail: format!("|bias| = {:.3e}, 10 se = {:.3e}", bias[0].abs(), 10.0 * se[0]),
            });
        }
    }

    Ok(EstimatorReport {
        kind: acc.kind,
        labels: acc.labels.clone(),
        n_success: n,
        n_failed: acc.failed,
        truth,
        empirical_mean: mean,
        bias,
        mc_se: se,
        empirical_var: var,
        empirical_cov: cov,
        theoretical_var,
        checks,
    })
}

fn delta_variance(report: &EstimatorReport, label: &str) -> Option<f64> {
    let i = report.labels.iter().position(|l| l == label)?;
    (report.n_success >= 2).then(|| report.empirical_var[i])
}

fn cross_checks(estimators: &[EstimatorReport], spec: &StudySpec) -> Vec<CheckResult> {
    let mut checks = Vec::new();
    if !spec.mechanism.is_ignorable() {
        return checks;
    }
    let complete = estimators
        .iter()
        .find(|e| e.kind == EstimatorKind::CompleteCase)
        .and_then(|e| delta_variance(e, "delta").map(|v| (v, e.n_success)));
    let Some((cc_var, cc_n)) = complete else {
        return checks;
    };
    for e in estimators {
        let improved = matches!(
            e.kind,
            EstimatorKind::HierarchicalKnown
                | EstimatorKind::HierarchicalPlugin
                | EstimatorKind::ClosedFormMeanVector
                | EstimatorKind::ClosedFormChangeScore
        );
        if !improved {
            continue;
        }
        if let Some(v) = delta_variance(e, "delta") {
            // Allowance: 3 Monte Carlo standard errors of the variance.
            let se_var = cc_var * (2.0 / (cc_n as f64 - 1.0)).sqrt();
            checks.push(CheckResult {
                name: format!("variance-ordering(delta, {})", e.kind.name()),
                passed: v <= cc_var + 3.0 * se_var,
                detail: format!(
                    "Var({}) = {:.6e} vs complete-case {:.6e}",
                    e.kind.name(),
                    v,
                    cc_var
                ),
            });
        }
    }
    checks
}

/// One rung of the convergence ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub replicates: usize,
    /// Mean Frobenius distance between the plug-in and known root gains.
    pub mean_gain_error: f64,
    /// Replicates where both fits produced comparable gains.
    pub gain_comparisons: usize,
    /// Empirical variance of the plug-in estimate over the known one.
    pub variance_ratio: f64,
}

/// Compares the plug-in hierarchy against the known-covariance hierarchy
/// along a ladder of sample sizes: the gain matrices converge and the
/// variance penalty of estimating the covariances vanishes.
pub fn convergence_probe(spec: &StudySpec, ladder: &[usize]) -> Result<Vec<ConvergenceRow>> {
    spec.validate()?;
    if ladder.len() < 3 {
        return Err(Error::LadderTooShort);
    }
    if ladder.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(
            "size ladder must be strictly increasing".into(),
        ));
    }
    let sigma = spec.population.cov_matrix()?;
    let q = spec.population.q();
    let params: Vec<ParameterDef<f64>> = (0..q).map(ParameterDef::mean).collect();
    let known = CovarianceMode::Known(sigma.clone());
    let opts = EstimateOptions::default();

    let scalar_of = |fit: &HierarchicalEstimate<f64>| {
        if q == 2 {
            fit.root.theta_tilde[0] - fit.root.theta_tilde[1]
        } else {
            fit.root.theta_tilde[0]
        }
    };

    let mut rows = Vec::with_capacity(ladder.len());
    for &n in ladder {
        let mut spec_n = spec.clone();
        spec_n.sample_size = n;
        let mut plugin_vals = Vec::new();
        let mut known_vals = Vec::new();
        let mut gain_error_sum = 0.0;
        let mut gain_comparisons = 0usize;

        for rep in 0..spec.replicates as u64 {
            let data = generate(&spec_n, rep)?;
            let Ok(plugin_fit) = hierarchical_estimate(&data, &params, &CovarianceMode::PlugIn, &opts)
            else {
                continue;
            };
            let Ok(known_fit) = hierarchical_estimate(&data, &params, &known, &opts) else {
                continue;
            };
            plugin_vals.push(scalar_of(&plugin_fit));
            known_vals.push(scalar_of(&known_fit));
            if let (Some(g_hat), Some(g)) = (
                &plugin_fit.root.provenance.gain,
                &known_fit.root.provenance.gain,
            ) {
                if g_hat.shape() == g.shape() {
                    gain_error_sum += (g_hat - g).norm();
                    gain_comparisons += 1;
                }
            }
        }

        let var = |vals: &[f64]| {
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (vals.len() as f64 - 1.0)
        };
        rows.push(ConvergenceRow {
            n,
            replicates: plugin_vals.len(),
            mean_gain_error: if gain_comparisons > 0 {
                gain_error_sum / gain_comparisons as f64
            } else {
                f64::INFINITY
            },
            gain_comparisons,
            variance_ratio: var(&plugin_vals) / var(&known_vals),
        });
    }
    Ok(rows)
}
