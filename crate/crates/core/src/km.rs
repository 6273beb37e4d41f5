//! Recursive CDF estimation under right censoring.
//!
//! Random dropout is monotone missingness: once a subject is censored at
//! `M`, everything later is unseen. The recursion estimates the CDF at each
//! event time by combining the empirical CDF of the step subsample (all
//! observations not censored at or before the current event time) with the
//! estimate carried from the previous step:
//!
//! ```text
//! 1 - F(t_s) = [1 - Fhat_s(t_s)] / [1 - Fhat_s(t_{s-1})] * [1 - F(t_{s-1})]
//! ```
//!
//! Telescoping this ratio reproduces the Kaplan-Meier product-limit
//! estimator exactly; [`product_limit`] is the independent oracle the
//! recursion is checked against.
//!
//! Tie convention: censorings tied with an event time count as at risk for
//! that event, and tied events aggregate. The recursion's step subsample
//! excludes censorings at or before the event time, so with event/censoring
//! ties the two routes can legitimately differ; on tie-free data they agree
//! to machine precision.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Right-censored observations: `(time, event)` pairs where `event = false`
/// means the true value exceeds the recorded censoring time.
#[derive(Debug, Clone, PartialEq)]
pub struct CensoredSample<T> {
    observations: Vec<(T, bool)>,
}

impl<T: Scalar> CensoredSample<T> {
    pub fn new(observations: Vec<(T, bool)>) -> Result<Self> {
        for (i, (t, _)) in observations.iter().enumerate() {
            if !t.is_finite() || *t <= T::zero() {
                return Err(Error::InvalidTime { index: i });
            }
        }
        Ok(Self { observations })
    }

    pub fn observations(&self) -> &[(T, bool)] {
        &self.observations
    }

    pub fn n(&self) -> usize {
        self.observations.len()
    }

    pub fn n_events(&self) -> usize {
        self.observations.iter().filter(|(_, e)| *e).count()
    }

    /// Distinct event times, ascending.
    fn event_times(&self) -> Vec<T> {
        let mut times: Vec<T> = self
            .observations
            .iter()
            .filter_map(|&(t, e)| e.then_some(t))
            .collect();
        times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
        times.dedup();
        times
    }
}

/// A right-continuous step CDF: knots are the distinct event times, values
/// are nondecreasing and within `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCdf<T> {
    knots: Vec<T>,
    values: Vec<T>,
}

impl<T: Scalar> StepCdf<T> {
    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn survival(&self) -> Vec<T> {
        self.values.iter().map(|&v| T::one() - v).collect()
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    /// CDF value at `t` (0 before the first knot).
    pub fn value_at(&self, t: T) -> T {
        match self.knots.iter().rposition(|&k| k <= t) {
            Some(i) => self.values[i],
            None => T::zero(),
        }
    }
}

/// The recursive information-absorbing CDF estimator.
///
/// Step `s` uses the subsample not censored at or before `t_s` (events at any
/// time plus censorings strictly after `t_s`). The first step is the plain
/// empirical CDF of that subsample at `t_1`; later steps multiply the
/// survival carried so far by the step ratio. Values are clamped to `[0, 1]`.
pub fn recursive_cdf<T: Scalar>(sample: &CensoredSample<T>) -> Result<StepCdf<T>> {
    let knots = sample.event_times();
    if knots.is_empty() {
        return Err(Error::NoEvents);
    }

    let obs = sample.observations();
    let mut survival = T::one();
    let mut values = Vec::with_capacity(knots.len());
    for (s, &t_s) in knots.iter().enumerate() {
        let eligible = obs.iter().filter(|&&(t, e)| e || t > t_s).count();
        let n_s = T::from_count(eligible);
        let events_le = |cut: T| {
            T::from_count(obs.iter().filter(|&&(t, e)| e && t <= cut).count())
        };
        let f_ts = events_le(t_s) / n_s;
        if s == 0 {
            survival = T::one() - f_ts;
        } else {
            let f_prev = events_le(knots[s - 1]) / n_s;
            let denom = T::one() - f_prev;
            if denom > T::zero() {
                survival *= (T::one() - f_ts) / denom;
            }
            // denom == 0: survival is already 0 on this subsample; carry the
            // previous value forward.
        }
        survival = survival.clamp(T::zero(), T::one());
        values.push(T::one() - survival);
    }

    Ok(StepCdf { knots, values })
}

/// The Kaplan-Meier product-limit estimator, as the independent oracle.
///
/// Survival at `t_s` is the product over event times up to `t_s` of
/// `(n_k - d_k) / n_k`, with `d_k` the events at `t_k` and `n_k` the
/// observations still at risk just before `t_k` (censorings tied with `t_k`
/// included). Returned as the CDF `1 - S`.
pub fn product_limit<T: Scalar>(sample: &CensoredSample<T>) -> Result<StepCdf<T>> {
    let knots = sample.event_times();
    if knots.is_empty() {
        return Err(Error::NoEvents);
    }

    let obs = sample.observations();
    let mut survival = T::one();
    let mut values = Vec::with_capacity(knots.len());
    for &t_k in &knots {
        let at_risk = obs.iter().filter(|&&(t, _)| t >= t_k).count();
        let deaths = obs.iter().filter(|&&(t, e)| e && t == t_k).count();
        survival *= T::from_count(at_risk - deaths) / T::from_count(at_risk);
        values.push(T::one() - survival);
    }

    Ok(StepCdf { knots, values })
}

/// Inverse-variance combination of two independent unbiased estimators.
///
/// Returns `(weight_a, weight_b, combined_variance)` with
/// `combined = va * vb / (va + vb)`; the reciprocal identity
/// `1/combined = 1/va + 1/vb` is the Fisher-information additivity behind
/// the recursion's variance bookkeeping.
pub fn pooled_variance_combine<T: Scalar>(var_a: T, var_b: T) -> Result<(T, T, T)> {
    if !var_a.is_positive_real() || !var_b.is_positive_real() {
        return Err(Error::InvalidVariance);
    }
    let total = var_a + var_b;
    Ok((var_b / total, var_a / total, var_a * var_b / total))
}
