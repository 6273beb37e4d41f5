//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Run with `cargo test -p hierest --test acceptance -- --nocapture` to see
//! the lines; the Monte Carlo criteria take a couple of minutes total.

use hierest::bivariate::{self, BivariateConfig, SubsampleMeans};
use hierest::estimator::{
    assemble_blocks, gain_system, hierarchical_estimate, subsample_estimate, update,
    CorrectionOutcome, CovarianceMode, EstimateOptions, Provenance, SubsampleEstimate,
    UpdatedEstimate,
};
use hierest::km::{pooled_variance_combine, product_limit, recursive_cdf, CensoredSample};
use hierest::params::ParameterDef;
use hierest::pattern::{partition, Dataset, MissingPattern};
use hierest::sim::{
    convergence_probe, run_study, EstimatorKind, Mechanism, PatternProb, Population, StudySpec,
    Tolerances,
};
use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn conclude(criterion: &str, failures: Vec<String>, detail: String) {
    if failures.is_empty() {
        println!("acceptance {criterion}: PASS — {detail}");
    } else {
        println!("acceptance {criterion}: FAIL — {}", failures.join("; "));
        panic!("{criterion} failed: {}", failures.join("; "));
    }
}

fn pat(mask: &str) -> MissingPattern {
    MissingPattern::new(mask.chars().map(|c| c == '1').collect()).unwrap()
}

fn pp(mask: &str, prob: f64) -> PatternProb {
    PatternProb {
        pattern: pat(mask),
        prob,
    }
}

#[test]
fn criterion_1_kaplan_meier_equivalence() {
    let mut rng = ChaCha12Rng::seed_from_u64(101);
    let mut max_dev = 0.0f64;
    let mut cases = 0usize;
    while cases < 1000 {
        let n = 1 + (rng.random::<u64>() % 40) as usize;
        let obs: Vec<(f64, bool)> = (0..n)
            .map(|_| (rng.random::<f64>() + 1e-12, rng.random::<f64>() < 0.45))
            .collect();
        if !obs.iter().any(|(_, e)| *e) {
            continue;
        }
        let sample = CensoredSample::new(obs).unwrap();
        let a = recursive_cdf(&sample).unwrap();
        let b = product_limit(&sample).unwrap();
        assert_eq!(a.knots(), b.knots());
        for (x, y) in a.values().iter().zip(b.values()) {
            max_dev = max_dev.max((x - y).abs());
        }
        cases += 1;
    }
    let failures = if max_dev <= 1e-12 {
        vec![]
    } else {
        vec![format!("max deviation {max_dev:.3e} > 1e-12")]
    };
    conclude(
        "1 (Kaplan-Meier equivalence)",
        failures,
        format!("1000 censored samples, max |recursive - product-limit| = {max_dev:.3e}"),
    );
}

struct RandomBivariate {
    sigma: (f64, f64, f64),
    sizes: (usize, usize, usize),
    data: Dataset<f64>,
    means: SubsampleMeans<f64>,
}

fn random_bivariate(rng: &mut ChaCha12Rng, with_second_only: bool) -> RandomBivariate {
    let s11 = 0.2 + 1.8 * rng.random::<f64>();
    let s22 = 0.2 + 1.8 * rng.random::<f64>();
    let rho = 1.9 * rng.random::<f64>() - 0.95;
    let s12 = rho * (s11 * s22).sqrt();
    let size = |rng: &mut ChaCha12Rng| 2 + (rng.random::<u64>() % 199) as usize;
    let (j11, j21) = (size(rng), size(rng));
    let j22 = if with_second_only { size(rng) } else { 0 };

    let mut rows = Vec::with_capacity(j11 + j21 + j22);
    let val = |rng: &mut ChaCha12Rng| 10.0 * rng.random::<f64>() - 5.0;
    for _ in 0..j11 {
        rows.push(vec![Some(val(rng)), Some(val(rng))]);
    }
    for _ in 0..j21 {
        rows.push(vec![Some(val(rng)), None]);
    }
    for _ in 0..j22 {
        rows.push(vec![None, Some(val(rng))]);
    }
    let data = Dataset::from_rows(rows).unwrap();

    let part = partition(&data).unwrap();
    let mean_of = |p: &MissingPattern, c: usize| {
        part.group(p).map(|rows| {
            rows.iter().map(|&r| data.row(r)[c].unwrap()).sum::<f64>() / rows.len() as f64
        })
    };
    let means = SubsampleMeans {
        complete_1: mean_of(&pat("11"), 0).unwrap(),
        complete_2: mean_of(&pat("11"), 1).unwrap(),
        first_only: mean_of(&pat("10"), 0).unwrap(),
        second_only: mean_of(&pat("01"), 1).unwrap_or(0.0),
    };
    RandomBivariate {
        sigma: (s11, s12, s22),
        sizes: (j11, j21, j22),
        data,
        means,
    }
}

#[test]
fn criterion_2_closed_form_engine_equivalence() {
    let mut rng = ChaCha12Rng::seed_from_u64(202);
    let params = vec![ParameterDef::mean(0), ParameterDef::mean(1)];
    let opts = EstimateOptions::default();
    let mut max_dev = 0.0f64;
    let mut failures = Vec::new();

    for case in 0..500 {
        // Mean-vector route: all three patterns present.
        let rb = random_bivariate(&mut rng, true);
        let (s11, s12, s22) = rb.sigma;
        let sigma = DMatrix::from_row_slice(2, 2, &[s11, s12, s12, s22]);
        let fit = hierarchical_estimate(&rb.data, &params, &CovarianceMode::Known(sigma), &opts)
            .unwrap();
        let cfg =
            BivariateConfig::new(s11, s12, s22, rb.sizes.0, rb.sizes.1, rb.sizes.2).unwrap();
        let (est, cov) = bivariate::mean_vector(&rb.means, &cfg).unwrap();
        for i in 0..2 {
            max_dev = max_dev.max((fit.root.theta_tilde[i] - est[i]).abs());
            for j in 0..2 {
                max_dev = max_dev.max((fit.root.cov_tilde[(i, j)] - cov[(i, j)]).abs());
            }
        }

        // Change-score route: second-only pattern empty.
        let rb = random_bivariate(&mut rng, false);
        let (s11, s12, s22) = rb.sigma;
        let sigma = DMatrix::from_row_slice(2, 2, &[s11, s12, s12, s22]);
        let fit = hierarchical_estimate(&rb.data, &params, &CovarianceMode::Known(sigma), &opts)
            .unwrap();
        let cfg = BivariateConfig::new(s11, s12, s22, rb.sizes.0, rb.sizes.1, 0).unwrap();
        let (delta, var) = bivariate::change_score(&rb.means, &cfg).unwrap();
        let engine_delta = fit.root.theta_tilde[0] - fit.root.theta_tilde[1];
        let engine_var = fit.root.cov_tilde[(0, 0)] - 2.0 * fit.root.cov_tilde[(0, 1)]
            + fit.root.cov_tilde[(1, 1)];
        max_dev = max_dev.max((engine_delta - delta).abs());
        max_dev = max_dev.max((engine_var - var).abs());

        if max_dev > 1e-10 && failures.is_empty() {
            failures.push(format!("case {case}: deviation {max_dev:.3e} > 1e-10"));
        }
    }
    conclude(
        "2 (closed form vs engine)",
        failures,
        format!("500 random configs each route, max componentwise deviation = {max_dev:.3e}"),
    );
}

#[test]
fn criterion_3_special_case_collapses() {
    let mut rng = ChaCha12Rng::seed_from_u64(303);
    let mut failures = Vec::new();
    for case in 0..1000 {
        let means = SubsampleMeans {
            complete_1: 10.0 * rng.random::<f64>() - 5.0,
            complete_2: 10.0 * rng.random::<f64>() - 5.0,
            first_only: 10.0 * rng.random::<f64>() - 5.0,
            second_only: 0.0,
        };
        let j11 = 1 + (rng.random::<u64>() % 200) as usize;
        let j21 = (rng.random::<u64>() % 200) as usize;
        let s11 = 0.2 + rng.random::<f64>();

        // sigma12 = sigma11: exactly the complete-case change score.
        let cfg = BivariateConfig {
            sigma11: s11,
            sigma12: s11,
            sigma22: s11 + 1.0,
            j11,
            j21,
            j22: 0,
        };
        let (delta, _) = bivariate::change_score(&means, &cfg).unwrap();
        if delta != means.complete_1 - means.complete_2 {
            failures.push(format!("case {case}: complete-case collapse not exact"));
            break;
        }

        // sigma12 = 0: exactly the available-case combination.
        let cfg = BivariateConfig::new(s11, 0.0, s11 + 1.0, j11, j21, 0).unwrap();
        let (delta, _) = bivariate::change_score(&means, &cfg).unwrap();
        let w = j11 as f64 / (j11 + j21) as f64;
        let available = w * means.complete_1 + (1.0 - w) * means.first_only - means.complete_2;
        let scale = delta.abs().max(available.abs()).max(1.0);
        if (delta - available).abs() > 1e-14 * scale {
            failures.push(format!(
                "case {case}: available-case deviation {:.3e}",
                (delta - available).abs()
            ));
            break;
        }
    }
    conclude(
        "3 (special-case collapses)",
        failures,
        "1000 cases: sigma12=sigma11 collapse exact, sigma12=0 collapse at machine precision"
            .into(),
    );
}

#[test]
fn criterion_4_change_score_variance_formula() {
    let spec = StudySpec {
        population: Population {
            mean: vec![0.0, 0.0],
            cov: vec![vec![1.0, 0.5], vec![0.5, 1.0]],
        },
        mechanism: Mechanism::Mcar {
            patterns: vec![pp("11", 0.5), pp("10", 0.5)],
        },
        sample_size: 200,
        replicates: 200_000,
        estimators: vec![
            EstimatorKind::ClosedFormChangeScore,
            EstimatorKind::CompleteCase,
        ],
        seed: 404,
        tolerances: Tolerances {
            mean_se: 4.0,
            var_rel: 0.02,
        },
    };
    let report = run_study(&spec).unwrap();
    let cs = &report.estimators[0];
    let cc = &report.estimators[1];
    let mut failures = Vec::new();

    assert_eq!(cs.labels, vec!["delta".to_string()]);
    let theory = cs.theoretical_var[0].expect("Eq. (19) value at realized sizes");
    let rel = (cs.empirical_var[0] / theory - 1.0).abs();
    if rel > 0.02 {
        failures.push(format!("variance off by {:.2}%", 100.0 * rel));
    }
    if cs.bias[0].abs() > 4.0 * cs.mc_se[0] {
        failures.push(format!(
            "bias {:.3e} exceeds 4 se {:.3e}",
            cs.bias[0].abs(),
            4.0 * cs.mc_se[0]
        ));
    }
    let cc_delta = cc.labels.iter().position(|l| l == "delta").unwrap();
    if cs.empirical_var[0] > cc.empirical_var[cc_delta] {
        failures.push("corrected variance above the complete-case variance".into());
    }
    if cs.n_failed > 0 {
        failures.push(format!("{} failed replicates", cs.n_failed));
    }
    conclude(
        "4 (change-score variance formula, R=2e5)",
        failures,
        format!(
            "empirical {:.6e} vs formula {:.6e} ({:+.2}%), bias {:.2e} ({:.1} se), CC var {:.6e}",
            cs.empirical_var[0],
            theory,
            100.0 * (cs.empirical_var[0] / theory - 1.0),
            cs.bias[0],
            cs.bias[0].abs() / cs.mc_se[0],
            cc.empirical_var[cc_delta]
        ),
    );
}

#[test]
fn criterion_5_nonignorable_shift() {
    let third = 1.0 / 3.0;
    let spec = StudySpec {
        population: Population {
            mean: vec![0.0, 0.0],
            cov: vec![vec![1.0, 0.5], vec![0.5, 1.0]],
        },
        mechanism: Mechanism::DeltaShift {
            patterns: vec![pp("11", third), pp("10", third), pp("01", third)],
            shift: 5.0,
        },
        sample_size: 300,
        replicates: 100_000,
        estimators: vec![EstimatorKind::NonignorableShift, EstimatorKind::AvailableCase],
        seed: 505,
        tolerances: Tolerances {
            mean_se: 4.0,
            var_rel: 0.03,
        },
    };
    let report = run_study(&spec).unwrap();
    let shift = &report.estimators[0];
    let avail = &report.estimators[1];
    let mut failures = Vec::new();

    let idx = |labels: &[String], name: &str| labels.iter().position(|l| l == name).unwrap();
    let combined = idx(&shift.labels, "delta_combined");
    let complete = idx(&shift.labels, "delta_complete");
    let incomplete = idx(&shift.labels, "delta_incomplete");

    if shift.bias[combined].abs() > 4.0 * shift.mc_se[combined] {
        failures.push(format!(
            "combined estimator biased: {:.3e} vs 4 se {:.3e}",
            shift.bias[combined].abs(),
            4.0 * shift.mc_se[combined]
        ));
    }
    let avail_mu1 = idx(&avail.labels, "mu_1");
    if avail.bias[avail_mu1].abs() <= 10.0 * avail.mc_se[avail_mu1] {
        failures.push("available-case component-1 mean not visibly biased".into());
    }
    let theory = shift.theoretical_var[combined].expect("Eq. (23) value");
    let rel = (shift.empirical_var[combined] / theory - 1.0).abs();
    if rel > 0.03 {
        failures.push(format!("combined variance off by {:.2}%", 100.0 * rel));
    }
    if shift.empirical_var[combined] >= shift.empirical_var[complete]
        || shift.empirical_var[combined] >= shift.empirical_var[incomplete]
    {
        failures.push("combined variance not below both inputs".into());
    }
    conclude(
        "5 (non-ignorable shift, R=1e5)",
        failures,
        format!(
            "combined bias {:.2e} ({:.1} se), var {:.6e} vs formula {:.6e} ({:+.2}%), available-case mu1 bias {:.3}",
            shift.bias[combined],
            shift.bias[combined].abs() / shift.mc_se[combined],
            shift.empirical_var[combined],
            theory,
            100.0 * (shift.empirical_var[combined] / theory - 1.0),
            avail.bias[avail_mu1]
        ),
    );
}

#[test]
fn criterion_6_plugin_convergence() {
    let spec = StudySpec {
        population: Population {
            mean: vec![0.0, 0.0],
            cov: vec![vec![1.0, 0.5], vec![0.5, 1.0]],
        },
        mechanism: Mechanism::Mcar {
            patterns: vec![pp("11", 0.5), pp("10", 0.25), pp("01", 0.25)],
        },
        sample_size: 50,
        replicates: 20_000,
        estimators: vec![EstimatorKind::HierarchicalPlugin],
        seed: 606,
        tolerances: Tolerances::default(),
    };
    let rows = convergence_probe(&spec, &[50, 200, 800]).unwrap();
    let mut failures = Vec::new();

    let ratios: Vec<f64> = rows.iter().map(|r| r.variance_ratio).collect();
    let errors: Vec<f64> = rows.iter().map(|r| r.mean_gain_error).collect();
    if !(ratios[0] > ratios[1] && ratios[1] > ratios[2]) {
        failures.push(format!("variance ratios not decreasing: {ratios:?}"));
    }
    if ratios[2] > 1.05 {
        failures.push(format!("ratio at N=800 is {:.4} > 1.05", ratios[2]));
    }
    if !(errors[0] > errors[1] && errors[1] > errors[2]) {
        failures.push(format!("gain errors not decreasing: {errors:?}"));
    }
    conclude(
        "6 (plug-in convergence, R=2e4 per size)",
        failures,
        format!(
            "variance ratios {:.4}/{:.4}/{:.4}, gain errors {:.4}/{:.4}/{:.4} at N=50/200/800",
            ratios[0], ratios[1], ratios[2], errors[0], errors[1], errors[2]
        ),
    );
}

fn random_dataset(rng: &mut ChaCha12Rng) -> Dataset<f64> {
    loop {
        let q = 2 + (rng.random::<u64>() % 2) as usize;
        let n = 8 + (rng.random::<u64>() % 53) as usize;
        let rows: Vec<Vec<Option<f64>>> = (0..n)
            .map(|_| {
                let complete = rng.random::<f64>() < 0.5;
                let mask: Vec<bool> = if complete {
                    vec![true; q]
                } else {
                    (0..q).map(|_| rng.random::<f64>() < 0.6).collect()
                };
                mask.iter()
                    .map(|&o| o.then(|| 6.0 * rng.random::<f64>() - 3.0))
                    .collect()
            })
            .collect();
        let data = Dataset::from_rows(rows).unwrap();
        let part = partition(&data).unwrap();
        let root = MissingPattern::complete(q).unwrap();
        if part.size(&root) >= 2 {
            return data;
        }
    }
}

#[test]
fn criterion_7_property_suites() {
    let mut failures = Vec::new();

    // Dispersion reduction: cov_hat - cov_tilde stays positive semidefinite.
    let mut rng = ChaCha12Rng::seed_from_u64(701);
    for case in 0..1000 {
        let data = random_dataset(&mut rng);
        let q = data.q();
        let params: Vec<ParameterDef<f64>> = (0..q).map(ParameterDef::mean).collect();
        let fit = hierarchical_estimate(
            &data,
            &params,
            &CovarianceMode::PlugIn,
            &EstimateOptions::default(),
        )
        .unwrap();
        let part = partition(&data).unwrap();
        let root = MissingPattern::complete(q).unwrap();
        let est = subsample_estimate(
            &data,
            part.group(&root).unwrap(),
            &root,
            &params,
            &CovarianceMode::PlugIn,
        )
        .unwrap();
        let reduction = &est.cov_hat - &fit.root.cov_tilde;
        let min_eig = reduction.symmetric_eigenvalues().min();
        if min_eig < -1e-10 {
            failures.push(format!("PSD violated at case {case}: min eig {min_eig:.3e}"));
            break;
        }
    }

    // Zero-residual identity: b_hat == b_tilde leaves theta untouched.
    let mut rng = ChaCha12Rng::seed_from_u64(702);
    for case in 0..1000 {
        let theta: Vec<f64> = (0..2).map(|_| 6.0 * rng.random::<f64>() - 3.0).collect();
        let v0 = 0.1 + rng.random::<f64>();
        let v1 = 0.1 + rng.random::<f64>();
        let c01 = (rng.random::<f64>() - 0.5) * 0.5 * (v0 * v1).sqrt();
        let parent = SubsampleEstimate {
            pattern: pat("11"),
            param_ids: vec![0, 1],
            theta_hat: DVector::from_vec(theta.clone()),
            cov_hat: DMatrix::from_row_slice(2, 2, &[v0, c01, c01, v1]),
            j: 10,
        };
        let child = UpdatedEstimate {
            pattern: pat("10"),
            param_ids: vec![0],
            theta_tilde: DVector::from_vec(vec![theta[0]]),
            cov_tilde: DMatrix::from_element(1, 1, 0.1 + rng.random::<f64>()),
            provenance: Provenance {
                children_used: vec![],
                outcome: CorrectionOutcome::NoChildren,
                gain: None,
            },
        };
        let blocks = assemble_blocks(&parent, &[&child]).unwrap();
        let gains = gain_system(&parent, &blocks);
        let upd = update(&parent, &blocks, &gains);
        if upd.theta_tilde != parent.theta_hat {
            failures.push(format!("zero-residual identity broken at case {case}"));
            break;
        }
    }

    // Scale equivariance of mean parameters.
    let mut rng = ChaCha12Rng::seed_from_u64(703);
    for case in 0..1000 {
        let data = random_dataset(&mut rng);
        let q = data.q();
        let params: Vec<ParameterDef<f64>> = (0..q).map(ParameterDef::mean).collect();
        let opts = EstimateOptions::default();
        let fit = hierarchical_estimate(&data, &params, &CovarianceMode::PlugIn, &opts).unwrap();
        let c = 0.1 + 5.0 * rng.random::<f64>();
        let scaled = Dataset::from_rows(
            data.rows()
                .iter()
                .map(|r| r.iter().map(|v| v.map(|x| c * x)).collect())
                .collect(),
        )
        .unwrap();
        let fit_c = hierarchical_estimate(&scaled, &params, &CovarianceMode::PlugIn, &opts).unwrap();
        let mut ok = true;
        for i in 0..q {
            let want = c * fit.root.theta_tilde[i];
            let got = fit_c.root.theta_tilde[i];
            ok &= (got - want).abs() <= 1e-10 * want.abs().max(1.0);
            for j in 0..q {
                let want = c * c * fit.root.cov_tilde[(i, j)];
                let got = fit_c.root.cov_tilde[(i, j)];
                // Absolute slack for entries that cancel to rounding residue.
                ok &= (got - want).abs() <= 1e-12 + 1e-10 * want.abs();
            }
        }
        if !ok {
            failures.push(format!("scale equivariance broken at case {case}"));
            break;
        }
    }

    // Row-permutation invariance.
    let mut rng = ChaCha12Rng::seed_from_u64(704);
    for case in 0..1000 {
        let data = random_dataset(&mut rng);
        let q = data.q();
        let params: Vec<ParameterDef<f64>> = (0..q).map(ParameterDef::mean).collect();
        let opts = EstimateOptions::default();
        let fit = hierarchical_estimate(&data, &params, &CovarianceMode::PlugIn, &opts).unwrap();

        let mut perm: Vec<usize> = (0..data.n_rows()).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, (rng.random::<u64>() % (i as u64 + 1)) as usize);
        }
        let shuffled = Dataset::from_rows(perm.iter().map(|&i| data.row(i).to_vec()).collect())
            .unwrap();
        let fit_p = hierarchical_estimate(&shuffled, &params, &CovarianceMode::PlugIn, &opts)
            .unwrap();
        let mut ok = true;
        for i in 0..q {
            ok &= (fit.root.theta_tilde[i] - fit_p.root.theta_tilde[i]).abs()
                <= 1e-10 * fit.root.theta_tilde[i].abs().max(1.0);
            for j in 0..q {
                ok &= (fit.root.cov_tilde[(i, j)] - fit_p.root.cov_tilde[(i, j)]).abs() <= 1e-10;
            }
        }
        if !ok {
            failures.push(format!("permutation invariance broken at case {case}"));
            break;
        }
    }

    // Fisher-information additivity of the pooled combination.
    let mut rng = ChaCha12Rng::seed_from_u64(705);
    for case in 0..1000 {
        let va = 10f64.powf(4.0 * rng.random::<f64>() - 2.0);
        let vb = 10f64.powf(4.0 * rng.random::<f64>() - 2.0);
        let (_, _, combined) = pooled_variance_combine(va, vb).unwrap();
        let lhs = 1.0 / combined;
        let rhs = 1.0 / va + 1.0 / vb;
        if (lhs - rhs).abs() > 1e-12 * rhs.abs() {
            failures.push(format!("Fisher additivity broken at case {case}"));
            break;
        }
    }

    conclude(
        "7 (property suites)",
        failures,
        "1000 cases each: dispersion PSD, zero-residual, scale equivariance, permutation invariance, Fisher additivity".into(),
    );
}
