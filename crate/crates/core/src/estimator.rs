//! The hierarchical correction engine.
//!
//! Each pattern subsample yields a moment estimate with a covariance. Walking
//! the lattice from the deepest level up, every node absorbs the already
//! corrected estimates of its children through the variance-optimal linear
//! update
//!
//! ```text
//! theta_tilde = theta_hat - K (K*)^-1 (b_hat - b_tilde)
//! cov_tilde   = cov_hat   - K (K*)^-1 K^T
//! ```
//!
//! where `b_hat` stacks the parent's own estimates of the parameters it
//! shares with each child, `b_tilde` stacks the children's corrected
//! estimates of the same parameters, `K` collects the covariances between
//! the parent estimate and `b_hat`, and `K*` adds the independent child
//! covariances block-diagonally on top of the `b_hat` covariance. Because a
//! child block is a subvector of the parent estimate, both `K` and the first
//! term of `K*` are submatrices of the parent covariance, and the cross
//! covariance between `b_hat` and `b_tilde` vanishes (disjoint subsamples of
//! i.i.d. rows).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pattern::{estimable, partition, Dataset, MissingPattern};
use crate::params::ParameterDef;
use crate::scalar::Scalar;

/// Relative eigenvalue floor of the positive-definiteness gate on `K*`.
const GATE_EPSILON: f64 = 1e-10;

/// Where the covariances come from.
#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceMode<T> {
    /// Population covariance matrix of the moment functions, `S x S` over the
    /// full parameter list: entry `(s, r)` is `Cov(phi_s(X), phi_r(X))`.
    Known(DMatrix<T>),
    /// Estimate every covariance from the pattern subsample itself.
    PlugIn,
}

/// Moment estimate of one pattern subsample.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsampleEstimate<T> {
    pub pattern: MissingPattern,
    /// Positions (in the parameter list) this subsample can estimate.
    pub param_ids: Vec<usize>,
    pub theta_hat: DVector<T>,
    pub cov_hat: DMatrix<T>,
    pub j: usize,
}

/// The stacked correction system of one parent node.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionBlocks<T> {
    /// Parent's own estimates of the shared parameters, block per child.
    pub b_hat: DVector<T>,
    /// Children's corrected estimates of the same parameters.
    pub b_tilde: DVector<T>,
    /// Block-diagonal covariance of `b_tilde`.
    pub b_tilde_cov: DMatrix<T>,
    /// Per stacked coordinate: which child and parameter it came from.
    pub index_map: Vec<BlockCoord>,
    /// Distinct contributing children, in block order.
    pub children: Vec<MissingPattern>,
}

impl<T> CorrectionBlocks<T> {
    pub fn len(&self) -> usize {
        self.index_map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_map.is_empty()
    }
}

/// One stacked coordinate of the correction system.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCoord {
    pub child: MissingPattern,
    /// Position of the parameter in the full parameter list.
    pub param_id: usize,
    /// Position of the parameter within the parent's `param_ids`.
    pub parent_pos: usize,
}

/// The gain system `(K, K*)` of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSystem<T> {
    /// `S* x L`: covariance of the parent estimate with `b_hat`.
    pub k: DMatrix<T>,
    /// `L x L`: covariance of `b_hat` plus the block-diagonal `b_tilde` part.
    pub k_star: DMatrix<T>,
}

/// How a node's correction went.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrectionOutcome {
    /// Children absorbed through the gain update.
    Corrected,
    /// Nothing to absorb: no present child shares a parameter.
    NoChildren,
    /// `K*` failed the positive-definiteness gate; estimate left uncorrected.
    SingularFallback,
}

/// Record of what produced an updated estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance<T> {
    pub children_used: Vec<MissingPattern>,
    pub outcome: CorrectionOutcome,
    /// The applied gain `K (K*)^-1` when the node was corrected.
    pub gain: Option<DMatrix<T>>,
}

/// A pattern estimate after the correction step.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdatedEstimate<T> {
    pub pattern: MissingPattern,
    pub param_ids: Vec<usize>,
    pub theta_tilde: DVector<T>,
    pub cov_tilde: DMatrix<T>,
    pub provenance: Provenance<T>,
}

impl<T: Scalar> UpdatedEstimate<T> {
    /// Passes a subsample estimate through unchanged.
    pub fn uncorrected(est: &SubsampleEstimate<T>, outcome: CorrectionOutcome) -> Self {
        Self {
            pattern: est.pattern.clone(),
            param_ids: est.param_ids.clone(),
            theta_tilde: est.theta_hat.clone(),
            cov_tilde: est.cov_hat.clone(),
            provenance: Provenance {
                children_used: Vec::new(),
                outcome,
                gain: None,
            },
        }
    }
}

/// Per-node record in the full hierarchy report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub pattern: MissingPattern,
    pub level: usize,
    pub j: usize,
    pub n_params: usize,
    pub status: NodeStatus,
    pub children_used: Vec<MissingPattern>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeStatus {
    Corrected,
    Uncorrected,
    SingularFallback,
    /// Plug-in covariance needs at least two rows; the node is dropped as a
    /// donor.
    CovarianceUnavailable,
    /// The pattern estimates none of the requested parameters.
    NoEstimableParams,
    /// Monotone mode only walks the dropout chain; this pattern is off it.
    OffChain,
}

/// Options of the full recursion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EstimateOptions {
    /// Restrict the lattice to the single dropout chain (components missing
    /// from the right), where the block-independence assumption is exact.
    pub monotone: bool,
}

/// The root estimate plus the per-node trace of the recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalEstimate<T> {
    pub root: UpdatedEstimate<T>,
    pub nodes: Vec<NodeSummary>,
    pub dropped_rows: usize,
}

/// Moment estimate of one pattern subsample: the mean of the estimable
/// moment functions over the given rows, with its covariance.
///
/// In plug-in mode the covariance is the sample covariance of the per-row
/// moment values (divisor `J - 1`) divided by `J`, which needs `J >= 2`. In
/// known mode it is the supplied population covariance divided by `J`.
pub fn subsample_estimate<T: Scalar>(
    data: &Dataset<T>,
    rows: &[usize],
    pattern: &MissingPattern,
    params: &[ParameterDef<T>],
    mode: &CovarianceMode<T>,
) -> Result<SubsampleEstimate<T>> {
    let j = rows.len();
    if j == 0 {
        return Err(Error::NoData);
    }
    let param_ids = estimable(pattern, params)?;
    let s = param_ids.len();

    let mut phi = DMatrix::<T>::zeros(j, s);
    for (n, &row_idx) in rows.iter().enumerate() {
        let row = data.row(row_idx);
        for (a, &id) in param_ids.iter().enumerate() {
            phi[(n, a)] = params[id].evaluate(row).map_err(|e| match e {
                Error::NonFiniteValue { param } => Error::BadCell {
                    row: row_idx,
                    detail: format!("parameter '{param}' is not finite here"),
                },
                other => other,
            })?;
        }
    }

    let j_t = T::from_count(j);
    let theta_hat = DVector::from_fn(s, |a, _| phi.column(a).sum() / j_t);

    let cov_hat = match mode {
        CovarianceMode::Known(c) => {
            if c.nrows() != params.len() || c.ncols() != params.len() {
                return Err(Error::DimensionMismatch(format!(
                    "known covariance is {}x{}, expected {}x{}",
                    c.nrows(),
                    c.ncols(),
                    params.len(),
                    params.len()
                )));
            }
            DMatrix::from_fn(s, s, |a, b| c[(param_ids[a], param_ids[b])] / j_t)
        }
        CovarianceMode::PlugIn => {
            if j < 2 {
                return Err(Error::CovarianceInestimable {
                    pattern: pattern.to_string(),
                    j,
                });
            }
            let mut cov = DMatrix::<T>::zeros(s, s);
            for n in 0..j {
                for a in 0..s {
                    let da = phi[(n, a)] - theta_hat[a];
                    for b in a..s {
                        let db = phi[(n, b)] - theta_hat[b];
                        cov[(a, b)] += da * db;
                    }
                }
            }
            let scale = T::from_count(j - 1) * j_t;
            for a in 0..s {
                for b in a..s {
                    let v = cov[(a, b)] / scale;
                    cov[(a, b)] = v;
                    cov[(b, a)] = v;
                }
            }
            cov
        }
    };

    Ok(SubsampleEstimate {
        pattern: pattern.clone(),
        param_ids,
        theta_hat,
        cov_hat,
        j,
    })
}

/// Stacks the correction system from the present children of a node.
///
/// Each child contributes one block holding the parameters estimable by both
/// parent and child: the parent's own estimate of them (`b_hat`), the child's
/// corrected estimate (`b_tilde`), and the child's covariance submatrix.
/// Blocks are concatenated in canonical child order; children sharing no
/// parameter contribute nothing. With no usable child the correction is
/// impossible and the caller keeps the parent estimate.
pub fn assemble_blocks<T: Scalar>(
    parent: &SubsampleEstimate<T>,
    child_updates: &[&UpdatedEstimate<T>],
) -> Result<CorrectionBlocks<T>> {
    let mut children: Vec<&UpdatedEstimate<T>> = child_updates.to_vec();
    children.sort_by(|a, b| b.pattern.cmp(&a.pattern));

    let mut b_hat = Vec::new();
    let mut b_tilde = Vec::new();
    let mut index_map: Vec<BlockCoord> = Vec::new();
    let mut used_children = Vec::new();
    // (offset, child coordinate list) per block, to fill the covariance after
    // the stacked length is known.
    let mut block_slices: Vec<(usize, Vec<usize>, &UpdatedEstimate<T>)> = Vec::new();

    for child in children {
        let mut child_coords = Vec::new();
        let offset = index_map.len();
        for (parent_pos, &id) in parent.param_ids.iter().enumerate() {
            if let Some(child_pos) = child.param_ids.iter().position(|&cid| cid == id) {
                b_hat.push(parent.theta_hat[parent_pos]);
                b_tilde.push(child.theta_tilde[child_pos]);
                index_map.push(BlockCoord {
                    child: child.pattern.clone(),
                    param_id: id,
                    parent_pos,
                });
                child_coords.push(child_pos);
            }
        }
        if !child_coords.is_empty() {
            used_children.push(child.pattern.clone());
            block_slices.push((offset, child_coords, child));
        }
    }

    if index_map.is_empty() {
        return Err(Error::NoCorrectionPossible);
    }

    let l = index_map.len();
    let mut b_tilde_cov = DMatrix::<T>::zeros(l, l);
    for (offset, coords, child) in block_slices {
        for (a, &ca) in coords.iter().enumerate() {
            for (b, &cb) in coords.iter().enumerate() {
                b_tilde_cov[(offset + a, offset + b)] = child.cov_tilde[(ca, cb)];
            }
        }
    }

    Ok(CorrectionBlocks {
        b_hat: DVector::from_vec(b_hat),
        b_tilde: DVector::from_vec(b_tilde),
        b_tilde_cov,
        index_map,
        children: used_children,
    })
}

/// Builds the gain system of a node.
///
/// `b_hat` is a subvector of the parent estimate, so `K` is made of columns
/// of the parent covariance and the first term of `K*` is the corresponding
/// submatrix (cross-block entries included). The child part enters
/// block-diagonally; `b_hat` and `b_tilde` are uncorrelated because the
/// subsamples are disjoint.
pub fn gain_system<T: Scalar>(
    parent: &SubsampleEstimate<T>,
    blocks: &CorrectionBlocks<T>,
) -> GainSystem<T> {
    let s = parent.theta_hat.len();
    let l = blocks.len();
    let k = DMatrix::from_fn(s, l, |a, lx| {
        parent.cov_hat[(a, blocks.index_map[lx].parent_pos)]
    });
    let mut k_star = DMatrix::from_fn(l, l, |lx, kx| {
        parent.cov_hat[(blocks.index_map[lx].parent_pos, blocks.index_map[kx].parent_pos)]
            + blocks.b_tilde_cov[(lx, kx)]
    });
    // Exact symmetry for the eigenvalue gate.
    let half = T::from_f64(0.5).unwrap();
    let k_star_t = k_star.transpose();
    k_star = (k_star + k_star_t) * half;
    GainSystem { k, k_star }
}

/// Applies the variance-optimal update to one node.
///
/// `K*` must pass the positive-definiteness gate (minimum eigenvalue above
/// `1e-10 * trace / L`); otherwise the parent estimate is returned unchanged
/// with a `SingularFallback` provenance, which small plug-in subsamples can
/// trigger.
pub fn update<T: Scalar>(
    parent: &SubsampleEstimate<T>,
    blocks: &CorrectionBlocks<T>,
    gains: &GainSystem<T>,
) -> UpdatedEstimate<T> {
    let l = blocks.len();
    let fallback = |outcome| UpdatedEstimate {
        pattern: parent.pattern.clone(),
        param_ids: parent.param_ids.clone(),
        theta_tilde: parent.theta_hat.clone(),
        cov_tilde: parent.cov_hat.clone(),
        provenance: Provenance {
            children_used: blocks.children.clone(),
            outcome,
            gain: None,
        },
    };

    let eps = T::from_f64(GATE_EPSILON).unwrap();
    let threshold = eps * gains.k_star.trace() / T::from_count(l);
    let min_eig = gains.k_star.symmetric_eigenvalues().min();
    let gate_passes = min_eig.is_finite() && min_eig > threshold;
    if !gate_passes {
        return fallback(CorrectionOutcome::SingularFallback);
    }
    let chol = match gains.k_star.clone().cholesky() {
        Some(c) => c,
        None => return fallback(CorrectionOutcome::SingularFallback),
    };

    let gain = chol.solve(&gains.k.transpose()).transpose();
    let residual = &blocks.b_hat - &blocks.b_tilde;
    let theta_tilde = &parent.theta_hat - &gain * residual;
    let mut cov_tilde = &parent.cov_hat - &gain * gains.k.transpose();
    let half = T::from_f64(0.5).unwrap();
    let cov_t = cov_tilde.transpose();
    cov_tilde = (cov_tilde + cov_t) * half;

    UpdatedEstimate {
        pattern: parent.pattern.clone(),
        param_ids: parent.param_ids.clone(),
        theta_tilde,
        cov_tilde,
        provenance: Provenance {
            children_used: blocks.children.clone(),
            outcome: CorrectionOutcome::Corrected,
            gain: Some(gain),
        },
    }
}

fn correct_node<T: Scalar>(
    est: &SubsampleEstimate<T>,
    children: &[&UpdatedEstimate<T>],
) -> UpdatedEstimate<T> {
    match assemble_blocks(est, children) {
        Ok(blocks) => {
            let gains = gain_system(est, &blocks);
            update(est, &blocks, &gains)
        }
        Err(Error::NoCorrectionPossible) => {
            UpdatedEstimate::uncorrected(est, CorrectionOutcome::NoChildren)
        }
        Err(_) => unreachable!("assemble_blocks only signals NoCorrectionPossible"),
    }
}

/// Runs the whole bottom-up recursion and returns the corrected root
/// estimate (the all-observed pattern) together with a per-node trace.
///
/// Levels are processed deepest first, so every node is corrected against
/// its children's already corrected estimates. The result is deterministic
/// given the dataset, parameters, mode, and options.
pub fn hierarchical_estimate<T: Scalar>(
    data: &Dataset<T>,
    params: &[ParameterDef<T>],
    mode: &CovarianceMode<T>,
    opts: &EstimateOptions,
) -> Result<HierarchicalEstimate<T>> {
    if params.is_empty() {
        return Err(Error::InvalidConfig(
            "at least one parameter is required".into(),
        ));
    }
    if let CovarianceMode::Known(c) = mode {
        validate_known_covariance(c, params.len())?;
    }

    let part = partition(data)?;
    let root_pattern = MissingPattern::complete(data.q())?;
    if !part.contains(&root_pattern) {
        return Err(Error::NoCompleteCases);
    }

    let mut updates: std::collections::BTreeMap<MissingPattern, UpdatedEstimate<T>> =
        std::collections::BTreeMap::new();
    let mut nodes = Vec::new();

    for pattern in part.patterns_deepest_first() {
        let rows = part.group(&pattern).expect("pattern taken from partition");
        let j = rows.len();
        let level = pattern.level();
        let mut summary = NodeSummary {
            pattern: pattern.clone(),
            level,
            j,
            n_params: 0,
            status: NodeStatus::Uncorrected,
            children_used: Vec::new(),
        };

        if opts.monotone && !pattern.is_monotone_prefix() {
            summary.status = NodeStatus::OffChain;
            nodes.push(summary);
            continue;
        }

        let est = match subsample_estimate(data, rows, &pattern, params, mode) {
            Ok(est) => est,
            Err(Error::CovarianceInestimable { pattern: p, j }) => {
                if pattern == root_pattern {
                    return Err(Error::CovarianceInestimable { pattern: p, j });
                }
                summary.status = NodeStatus::CovarianceUnavailable;
                nodes.push(summary);
                continue;
            }
            Err(e) => return Err(e),
        };
        summary.n_params = est.param_ids.len();
        if est.param_ids.is_empty() {
            summary.status = NodeStatus::NoEstimableParams;
            nodes.push(summary);
            continue;
        }

        let child_patterns = if opts.monotone {
            pattern.monotone_child().into_iter().collect::<Vec<_>>()
        } else {
            pattern.children()
        };
        let children: Vec<&UpdatedEstimate<T>> = child_patterns
            .iter()
            .filter_map(|c| updates.get(c))
            .collect();

        let updated = correct_node(&est, &children);
        summary.status = match updated.provenance.outcome {
            CorrectionOutcome::Corrected => NodeStatus::Corrected,
            CorrectionOutcome::NoChildren => NodeStatus::Uncorrected,
            CorrectionOutcome::SingularFallback => NodeStatus::SingularFallback,
        };
        summary.children_used = updated.provenance.children_used.clone();
        nodes.push(summary);
        updates.insert(pattern, updated);
    }

    let root = updates
        .remove(&root_pattern)
        .expect("root present and estimable");
    nodes.sort_by(|a, b| a.level.cmp(&b.level).then_with(|| b.pattern.cmp(&a.pattern)));

    Ok(HierarchicalEstimate {
        root,
        nodes,
        dropped_rows: part.dropped(),
    })
}

fn validate_known_covariance<T: Scalar>(c: &DMatrix<T>, s: usize) -> Result<()> {
    if c.nrows() != s || c.ncols() != s {
        return Err(Error::DimensionMismatch(format!(
            "known covariance is {}x{}, expected {}x{}",
            c.nrows(),
            c.ncols(),
            s,
            s
        )));
    }
    let mut scale = T::zero();
    let mut skew = T::zero();
    for a in 0..s {
        for b in 0..s {
            scale = scale.max(c[(a, b)].abs());
            skew = skew.max((c[(a, b)] - c[(b, a)]).abs());
        }
    }
    let tol = T::from_f64(1e-9).unwrap() * scale.max(T::one());
    if skew > tol {
        return Err(Error::InvalidPopulation);
    }
    Ok(())
}
