//! Moment functionals: the parameters the hierarchy estimates.
//!
//! Each parameter is the expectation of a known function of the data vector.
//! The definition carries the exact set of components the function reads, so
//! the lattice can decide which pattern subsamples can estimate it.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

type PhiFn<T> = Arc<dyn Fn(&[Option<T>]) -> T + Send + Sync>;

/// The moment function of one parameter.
#[derive(Clone)]
pub enum ParamKind<T> {
    /// Mean of one component.
    Mean(usize),
    /// `P(x_c <= t)`: indicator of the event, so CDF values are estimable.
    Indicator(usize, T),
    /// Mixed moment `E(x_a * x_b)`.
    ProductMoment(usize, usize),
    /// User-supplied moment function. `required` lists every component the
    /// function reads; those cells are guaranteed present when it is called.
    Custom {
        tag: String,
        required: Vec<usize>,
        eval: PhiFn<T>,
    },
}

/// One parameter: a labelled moment functional plus the component set it
/// requires.
#[derive(Clone)]
pub struct ParameterDef<T> {
    label: String,
    kind: ParamKind<T>,
    required: BTreeSet<usize>,
}

impl<T: Scalar> ParameterDef<T> {
    pub fn new(label: impl Into<String>, kind: ParamKind<T>) -> Self {
        let required = match &kind {
            ParamKind::Mean(c) => BTreeSet::from([*c]),
            ParamKind::Indicator(c, _) => BTreeSet::from([*c]),
            ParamKind::ProductMoment(a, b) => BTreeSet::from([*a, *b]),
            ParamKind::Custom { required, .. } => required.iter().copied().collect(),
        };
        Self {
            label: label.into(),
            kind,
            required,
        }
    }

    /// Mean of component `c` (0-based).
    pub fn mean(c: usize) -> Self {
        Self::new(format!("mean(x{})", c + 1), ParamKind::Mean(c))
    }

    /// `P(x_c <= t)`.
    pub fn indicator(c: usize, threshold: T) -> Self {
        Self::new(
            format!("cdf(x{})", c + 1),
            ParamKind::Indicator(c, threshold),
        )
    }

    /// `E(x_a * x_b)`.
    pub fn product_moment(a: usize, b: usize) -> Self {
        Self::new(
            format!("moment(x{}*x{})", a + 1, b + 1),
            ParamKind::ProductMoment(a, b),
        )
    }

    /// `E(x_a - x_b)`: the change score, built on the custom-moment hook.
    pub fn difference(a: usize, b: usize) -> Self {
        Self::custom(
            format!("diff(x{}-x{})", a + 1, b + 1),
            vec![a, b],
            move |row: &[Option<T>]| {
                row[a].expect("required cell present") - row[b].expect("required cell present")
            },
        )
    }

    /// Arbitrary moment function; `required` must list every component read.
    pub fn custom(
        tag: impl Into<String>,
        required: Vec<usize>,
        eval: impl Fn(&[Option<T>]) -> T + Send + Sync + 'static,
    ) -> Self {
        let tag = tag.into();
        Self::new(
            tag.clone(),
            ParamKind::Custom {
                tag,
                required,
                eval: Arc::new(eval),
            },
        )
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn kind(&self) -> &ParamKind<T> {
        &self.kind
    }

    /// Components (0-based) the moment function reads.
    pub fn required(&self) -> &BTreeSet<usize> {
        &self.required
    }

    /// Evaluates the moment function on one row. Every required component
    /// must be present and the value must come out finite.
    pub fn evaluate(&self, row: &[Option<T>]) -> Result<T> {
        for &c in &self.required {
            if c >= row.len() {
                return Err(Error::BadParameter {
                    param: self.label.clone(),
                    component: c + 1,
                    dim: row.len(),
                });
            }
            if row[c].is_none() {
                return Err(Error::ComponentMissing {
                    param: self.label.clone(),
                    component: c + 1,
                });
            }
        }
        let value = match &self.kind {
            ParamKind::Mean(c) => row[*c].unwrap(),
            ParamKind::Indicator(c, t) => {
                if row[*c].unwrap() <= *t {
                    T::one()
                } else {
                    T::zero()
                }
            }
            ParamKind::ProductMoment(a, b) => row[*a].unwrap() * row[*b].unwrap(),
            ParamKind::Custom { eval, .. } => eval(row),
        };
        if !value.is_finite() {
            return Err(Error::NonFiniteValue {
                param: self.label.clone(),
            });
        }
        Ok(value)
    }
}

impl<T: fmt::Debug> fmt::Debug for ParameterDef<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.kind {
            ParamKind::Mean(c) => format!("Mean({c})"),
            ParamKind::Indicator(c, t) => format!("Indicator({c}, {t:?})"),
            ParamKind::ProductMoment(a, b) => format!("ProductMoment({a}, {b})"),
            ParamKind::Custom { tag, .. } => format!("Custom({tag:?})"),
        };
        f.debug_struct("ParameterDef")
            .field("label", &self.label)
            .field("kind", &kind)
            .field("required", &self.required)
            .finish()
    }
}
