//! The five subcommands.

use hierest::bivariate::{self, BivariateConfig, SubsampleMeans};
use hierest::estimator::{hierarchical_estimate, CovarianceMode, EstimateOptions};
use hierest::km::{product_limit, recursive_cdf};
use hierest::pattern::{partition, Dataset, MissingPattern};
use hierest::sim::{convergence_probe, run_study};
use nalgebra::DMatrix;

use crate::config::{BivariateFileConfig, CovarianceConfig, EstimateConfig, StudyConfig};
use crate::report::{
    emit, BivariateReport, EstimateReport, KmReport, PatternCount, SimulationOutput,
};
use crate::{core_err, BivariateArgs, CliError, EstimateArgs, KmArgs, ModeArg, StudyArgs, Variant};

pub fn estimate(args: &EstimateArgs) -> Result<(), CliError> {
    let data = crate::ingest::read_dataset(&args.input, &args.missing_token)?;
    let cfg = EstimateConfig::load(&args.config)?;
    let params = cfg.parameter_defs(data.columns())?;

    let want_known = match (args.mode, &cfg.covariance) {
        (Some(ModeArg::Known), _) => true,
        (Some(ModeArg::Plugin), _) => false,
        (None, Some(CovarianceConfig::Known { .. })) => true,
        (None, _) => false,
    };
    let mode = if want_known {
        match &cfg.covariance {
            Some(CovarianceConfig::Known { matrix }) => {
                let s = matrix.len();
                if s != params.len() || matrix.iter().any(|r| r.len() != s) {
                    return Err(CliError::Input(format!(
                        "known covariance must be a {0}x{0} matrix over the parameter list",
                        params.len()
                    )));
                }
                CovarianceMode::Known(DMatrix::from_fn(s, s, |i, j| matrix[i][j]))
            }
            _ => {
                return Err(CliError::Input(
                    "--mode known needs a covariance matrix in the config".into(),
                ))
            }
        }
    } else {
        CovarianceMode::PlugIn
    };

    let opts = EstimateOptions {
        monotone: args.monotone || cfg.monotone.unwrap_or(false),
    };
    let fit = hierarchical_estimate(&data, &params, &mode, &opts).map_err(core_err)?;

    let s = params.len();
    let report = EstimateReport {
        mode: if want_known { "known" } else { "plugin" }.into(),
        monotone: opts.monotone,
        parameters: params.iter().map(|p| p.label().to_string()).collect(),
        theta: (0..s).map(|i| fit.root.theta_tilde[i]).collect(),
        cov: (0..s)
            .map(|i| (0..s).map(|j| fit.root.cov_tilde[(i, j)]).collect())
            .collect(),
        pattern_counts: fit
            .nodes
            .iter()
            .map(|n| PatternCount {
                pattern: n.pattern.to_string(),
                rows: n.j,
            })
            .collect(),
        dropped_rows: fit.dropped_rows,
        nodes: fit.nodes,
    };
    emit(&report, args.format, args.output.as_deref())
}

pub fn km(args: &KmArgs) -> Result<(), CliError> {
    let sample = crate::ingest::read_censored(&args.input)?;
    let cdf = recursive_cdf(&sample).map_err(core_err)?;
    let mut report = KmReport {
        knots: cdf.knots().to_vec(),
        cdf: cdf.values().to_vec(),
        survival: cdf.survival(),
        oracle_survival: None,
        oracle_max_deviation: None,
    };
    if args.oracle {
        let oracle = product_limit(&sample).map_err(core_err)?;
        let dev = cdf
            .values()
            .iter()
            .zip(oracle.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        report.oracle_survival = Some(oracle.survival());
        report.oracle_max_deviation = Some(dev);
    }
    emit(&report, args.format, args.output.as_deref())
}

struct BivariateInputs {
    means: SubsampleMeans<f64>,
    sigma: Option<(f64, f64, f64)>,
    cs: Option<(f64, f64)>,
    sizes: (usize, usize, usize),
}

fn bivariate_from_raw(data: &Dataset<f64>) -> Result<BivariateInputs, CliError> {
    if data.q() != 2 {
        return Err(CliError::Input(format!(
            "bivariate input needs exactly two columns, found {}",
            data.q()
        )));
    }
    let part = partition(data).map_err(core_err)?;
    let p = |mask: &[bool]| MissingPattern::new(mask.to_vec()).unwrap();
    let (p11, p10, p01) = (p(&[true, true]), p(&[true, false]), p(&[false, true]));
    let complete = part
        .group(&p11)
        .ok_or(CliError::Empty("no complete cases".into()))?;
    let j11 = complete.len();
    if j11 < 2 {
        return Err(CliError::Input(
            "need at least two complete rows to estimate the covariance".into(),
        ));
    }

    let cell = |r: usize, c: usize| data.row(r)[c].unwrap();
    let mean = |rows: &[usize], c: usize| {
        rows.iter().map(|&r| cell(r, c)).sum::<f64>() / rows.len() as f64
    };
    let (m1, m2) = (mean(complete, 0), mean(complete, 1));
    let mut s11 = 0.0;
    let mut s12 = 0.0;
    let mut s22 = 0.0;
    for &r in complete {
        let (d1, d2) = (cell(r, 0) - m1, cell(r, 1) - m2);
        s11 += d1 * d1;
        s12 += d1 * d2;
        s22 += d2 * d2;
    }
    let denom = (j11 - 1) as f64;
    let (s11, s12, s22) = (s11 / denom, s12 / denom, s22 / denom);

    let first = part.group(&p10).map(|rows| mean(rows, 0));
    let second = part.group(&p01).map(|rows| mean(rows, 1));
    Ok(BivariateInputs {
        means: SubsampleMeans {
            complete_1: m1,
            complete_2: m2,
            first_only: first.unwrap_or(0.0),
            second_only: second.unwrap_or(0.0),
        },
        sigma: Some((s11, s12, s22)),
        cs: None,
        sizes: (j11, part.size(&p10), part.size(&p01)),
    })
}

fn bivariate_from_config(cfg: &BivariateFileConfig) -> BivariateInputs {
    BivariateInputs {
        means: SubsampleMeans {
            complete_1: cfg.means.complete[0],
            complete_2: cfg.means.complete[1],
            first_only: cfg.means.first_only.unwrap_or(0.0),
            second_only: cfg.means.second_only.unwrap_or(0.0),
        },
        sigma: cfg.sigma.as_ref().map(|s| (s.var1, s.cov, s.var2)),
        cs: cfg.compound_symmetry.as_ref().map(|c| (c.sigma, c.rho)),
        sizes: (cfg.sizes.complete, cfg.sizes.first_only, cfg.sizes.second_only),
    }
}

pub fn bivariate(args: &BivariateArgs) -> Result<(), CliError> {
    let inputs = match (&args.input, &args.config) {
        (Some(path), None) => {
            let data = crate::ingest::read_dataset(path, &args.missing_token)?;
            bivariate_from_raw(&data)?
        }
        (None, Some(path)) => bivariate_from_config(&BivariateFileConfig::load(path)?),
        _ => {
            return Err(CliError::Input(
                "pass exactly one of --input (raw CSV) or --config (explicit inputs)".into(),
            ))
        }
    };
    let (j11, j21, j22) = inputs.sizes;
    let need_sigma = || {
        inputs.sigma.ok_or_else(|| {
            CliError::Input("this variant needs a sigma section in the config".into())
        })
    };

    let (variant, labels, estimate, covariance, sigma_used, sizes_used) = match args.variant {
        Variant::MeanVector => {
            let (s11, s12, s22) = need_sigma()?;
            let cfg = BivariateConfig::new(s11, s12, s22, j11, j21, j22).map_err(core_err)?;
            let (est, cov) = bivariate::mean_vector(&inputs.means, &cfg).map_err(core_err)?;
            (
                "mean-vector",
                vec!["mu_1".to_string(), "mu_2".to_string()],
                vec![est[0], est[1]],
                vec![
                    vec![cov[(0, 0)], cov[(0, 1)]],
                    vec![cov[(1, 0)], cov[(1, 1)]],
                ],
                (s11, s12, s22),
                vec![j11, j21, j22],
            )
        }
        Variant::ChangeScore => {
            let (s11, s12, s22) = need_sigma()?;
            let cfg = BivariateConfig::new(s11, s12, s22, j11, j21, 0).map_err(core_err)?;
            let (est, var) = bivariate::change_score(&inputs.means, &cfg).map_err(core_err)?;
            (
                "change-score",
                vec!["delta".to_string()],
                vec![est],
                vec![vec![var]],
                (s11, s12, s22),
                vec![j11, j21, 0],
            )
        }
        Variant::CompoundSymmetry => {
            let (sigma, rho) = match (inputs.cs, inputs.sigma) {
                (Some(cs), _) => cs,
                (None, Some((s11, s12, s22))) => {
                    // Pool the two variances when only a general sigma is
                    // available (the raw-CSV route lands here).
                    let var = 0.5 * (s11 + s22);
                    (var.sqrt(), s12 / var)
                }
                (None, None) => {
                    return Err(CliError::Input(
                        "compound-symmetry needs a compound_symmetry or sigma section".into(),
                    ))
                }
            };
            let (est, var) = bivariate::change_score_cs(&inputs.means, sigma, rho, j11, j21)
                .map_err(core_err)?;
            (
                "compound-symmetry",
                vec!["delta".to_string()],
                vec![est],
                vec![vec![var]],
                (sigma * sigma, rho * sigma * sigma, sigma * sigma),
                vec![j11, j21, 0],
            )
        }
        Variant::Shift => {
            let (s11, s12, s22) = need_sigma()?;
            let cfg = BivariateConfig::new(s11, s12, s22, j11, j21, j22).map_err(core_err)?;
            let (est, var) =
                bivariate::nonignorable_shift(&inputs.means, &cfg).map_err(core_err)?;
            (
                "shift",
                vec!["delta_combined".to_string()],
                vec![est],
                vec![vec![var]],
                (s11, s12, s22),
                vec![j11, j21, j22],
            )
        }
    };

    let (s11, s12, s22) = sigma_used;
    let report = BivariateReport {
        variant: variant.into(),
        labels,
        estimate,
        covariance,
        sigma_used: vec![vec![s11, s12], vec![s12, s22]],
        sizes_used,
    };
    emit(&report, args.format, args.output.as_deref())
}

pub fn simulate(args: &StudyArgs, gate: bool) -> Result<(), CliError> {
    let cfg = StudyConfig::load(&args.config, args.seed)?;
    let report = run_study(&cfg.spec).map_err(core_err)?;
    let convergence = match &cfg.size_ladder {
        Some(ladder) => Some(convergence_probe(&cfg.spec, ladder).map_err(core_err)?),
        None => None,
    };
    let output = SimulationOutput {
        report,
        convergence,
    };
    emit(&output, args.format, args.output.as_deref())?;

    if gate {
        let failed: Vec<String> = output
            .report
            .estimators
            .iter()
            .flat_map(|e| e.checks.iter().map(move |c| (e.kind.name(), c)))
            .chain(
                output
                    .report
                    .study_checks
                    .iter()
                    .map(|c| ("study", c)),
            )
            .filter(|(_, c)| !c.passed)
            .map(|(who, c)| format!("{who}: {}", c.name))
            .collect();
        if !failed.is_empty() {
            return Err(CliError::Validation(format!(
                "{} check(s) failed: {}",
                failed.len(),
                failed.join("; ")
            )));
        }
    }
    Ok(())
}
