//! Missing patterns, pattern subsamples, and the parent/child lattice.
//!
//! A pattern records which of the `Q` components of a row are observed.
//! Patterns with `i - 1` unobserved components form level `i` of the
//! hierarchy; the all-observed pattern is the root (level 1). The bottom-up
//! correction in [`crate::estimator`] walks this lattice from the deepest
//! level present up to the root.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::params::ParameterDef;
use crate::scalar::Scalar;

/// Observedness mask of one row: `true` means the component was observed.
///
/// At least one component is observed; rows with nothing observed carry no
/// information and never enter the hierarchy.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MissingPattern {
    observed: Vec<bool>,
}

impl MissingPattern {
    /// Builds a pattern from an observedness mask.
    pub fn new(observed: Vec<bool>) -> Result<Self> {
        let q = observed.len();
        if q == 0 {
            return Err(Error::DimensionMismatch(
                "a pattern needs at least one component".into(),
            ));
        }
        if observed.iter().all(|o| !o) {
            return Err(Error::AllMissingPattern { q });
        }
        Ok(Self { observed })
    }

    /// The all-observed (root) pattern of dimension `q`.
    pub fn complete(q: usize) -> Result<Self> {
        Self::new(vec![true; q])
    }

    /// Pattern of a data row; `None` when every cell is missing.
    pub fn from_row<T>(row: &[Option<T>]) -> Option<Self> {
        let observed: Vec<bool> = row.iter().map(|c| c.is_some()).collect();
        MissingPattern::new(observed).ok()
    }

    pub fn q(&self) -> usize {
        self.observed.len()
    }

    pub fn observed(&self) -> &[bool] {
        &self.observed
    }

    pub fn is_observed(&self, component: usize) -> bool {
        self.observed.get(component).copied().unwrap_or(false)
    }

    pub fn n_observed(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    /// Hierarchy level: number of unobserved components plus one, in `1..=Q`.
    pub fn level(&self) -> usize {
        self.q() - self.n_observed() + 1
    }

    pub fn is_complete(&self) -> bool {
        self.n_observed() == self.q()
    }

    /// True when the observed components are exactly a prefix `0..k` of the
    /// component list, the shape produced by monotone dropout.
    pub fn is_monotone_prefix(&self) -> bool {
        let k = self.n_observed();
        self.observed.iter().take(k).all(|&o| o)
    }

    pub fn observed_components(&self) -> impl Iterator<Item = usize> + '_ {
        self.observed
            .iter()
            .enumerate()
            .filter_map(|(i, &o)| o.then_some(i))
    }

    /// All patterns one level deeper: each observed component switched off in
    /// turn, skipping the all-missing mask. Canonical (descending-mask) order,
    /// so the child dropping the highest-indexed component comes first.
    pub fn children(&self) -> Vec<MissingPattern> {
        let mut out: Vec<MissingPattern> = self
            .observed_components()
            .filter_map(|c| {
                let mut mask = self.observed.clone();
                mask[c] = false;
                MissingPattern::new(mask).ok()
            })
            .collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    /// The single chain child used in monotone mode: the highest-indexed
    /// observed component switched off. `None` at the deepest level or for
    /// non-prefix patterns.
    pub fn monotone_child(&self) -> Option<MissingPattern> {
        if !self.is_monotone_prefix() {
            return None;
        }
        let last = self.observed_components().last()?;
        let mut mask = self.observed.clone();
        mask[last] = false;
        MissingPattern::new(mask).ok()
    }

    /// Mask rendered as a string of `1`/`0`, component 0 first.
    pub fn mask_string(&self) -> String {
        self.observed
            .iter()
            .map(|&o| if o { '1' } else { '0' })
            .collect()
    }

    fn from_mask_str(s: &str) -> Result<Self> {
        let observed: Result<Vec<bool>> = s
            .chars()
            .map(|c| match c {
                '1' => Ok(true),
                '0' => Ok(false),
                other => Err(Error::InvalidConfig(format!(
                    "pattern mask may only contain 0 and 1, found '{other}'"
                ))),
            })
            .collect();
        MissingPattern::new(observed?)
    }
}

impl fmt::Display for MissingPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.mask_string())
    }
}

impl fmt::Debug for MissingPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MissingPattern({})", self.mask_string())
    }
}

impl Serialize for MissingPattern {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.mask_string())
    }
}

impl<'de> Deserialize<'de> for MissingPattern {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        MissingPattern::from_mask_str(&s).map_err(D::Error::custom)
    }
}

/// A rectangular dataset: every row has exactly `Q` cells, each either a
/// finite value or missing.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    columns: Vec<String>,
    rows: Vec<Vec<Option<T>>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<Option<T>>>) -> Result<Self> {
        let q = columns.len();
        if q == 0 {
            return Err(Error::DimensionMismatch(
                "dataset needs at least one column".into(),
            ));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != q {
                return Err(Error::MalformedRow {
                    row: i,
                    expected: q,
                    found: row.len(),
                });
            }
            for (c, cell) in row.iter().enumerate() {
                if let Some(v) = cell {
                    if !v.is_finite() {
                        return Err(Error::BadCell {
                            row: i,
                            detail: format!("column {} is not finite", c + 1),
                        });
                    }
                }
            }
        }
        Ok(Self { columns, rows })
    }

    /// Convenience constructor with `x1..xQ` column names.
    pub fn from_rows(rows: Vec<Vec<Option<T>>>) -> Result<Self> {
        let q = rows.first().map(Vec::len).unwrap_or(0);
        let columns = (1..=q).map(|i| format!("x{i}")).collect();
        Self::new(columns, rows)
    }

    pub fn q(&self) -> usize {
        self.columns.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Option<T>>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[Option<T>] {
        &self.rows[i]
    }
}

/// The dataset split by missing pattern. Groups are pairwise disjoint and,
/// together with the dropped all-missing rows, cover every row exactly once.
/// Only non-empty groups are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternPartition {
    groups: BTreeMap<MissingPattern, Vec<usize>>,
    dropped: usize,
}

impl PatternPartition {
    pub fn groups(&self) -> &BTreeMap<MissingPattern, Vec<usize>> {
        &self.groups
    }

    /// Count of all-missing rows excluded from the hierarchy.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn contains(&self, pattern: &MissingPattern) -> bool {
        self.groups.contains_key(pattern)
    }

    pub fn group(&self, pattern: &MissingPattern) -> Option<&[usize]> {
        self.groups.get(pattern).map(Vec::as_slice)
    }

    /// Subsample size of a pattern; zero when the pattern is absent.
    pub fn size(&self, pattern: &MissingPattern) -> usize {
        self.groups.get(pattern).map(Vec::len).unwrap_or(0)
    }

    /// Patterns ordered deepest level first; within a level, descending mask.
    pub fn patterns_deepest_first(&self) -> Vec<MissingPattern> {
        let mut patterns: Vec<MissingPattern> = self.groups.keys().cloned().collect();
        patterns.sort_by(|a, b| b.level().cmp(&a.level()).then_with(|| b.cmp(a)));
        patterns
    }
}

/// Splits a dataset into pattern subsamples.
///
/// Every row with at least one observed component lands in exactly one group
/// keyed by its observedness mask; all-missing rows are counted in
/// [`PatternPartition::dropped`].
pub fn partition<T: Scalar>(data: &Dataset<T>) -> Result<PatternPartition> {
    if data.n_rows() == 0 {
        return Err(Error::NoData);
    }
    let mut groups: BTreeMap<MissingPattern, Vec<usize>> = BTreeMap::new();
    let mut dropped = 0usize;
    for (i, row) in data.rows().iter().enumerate() {
        match MissingPattern::from_row(row) {
            Some(p) => groups.entry(p).or_default().push(i),
            None => dropped += 1,
        }
    }
    Ok(PatternPartition { groups, dropped })
}

/// All patterns one level deeper than `p` (free-function form of
/// [`MissingPattern::children`]).
pub fn children(p: &MissingPattern) -> Vec<MissingPattern> {
    p.children()
}

/// Indices (0-based positions in `params`) of the parameters estimable from
/// pattern `p`: those whose required components are all observed. Input order
/// is preserved.
pub fn estimable<T: Scalar>(p: &MissingPattern, params: &[ParameterDef<T>]) -> Result<Vec<usize>> {
    let q = p.q();
    let mut out = Vec::new();
    for (s, def) in params.iter().enumerate() {
        for &c in def.required() {
            if c >= q {
                return Err(Error::BadParameter {
                    param: def.label().to_string(),
                    component: c + 1,
                    dim: q,
                });
            }
        }
        if def.required().iter().all(|&c| p.is_observed(c)) {
            out.push(s);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParameterDef;
    use proptest::prelude::*;

    fn pat(mask: &str) -> MissingPattern {
        MissingPattern::from_mask_str(mask).unwrap()
    }

    #[test]
    fn partition_groups_by_mask_and_drops_all_missing() {
        let data = Dataset::from_rows(vec![
            vec![Some(1.0), Some(2.0)],
            vec![Some(3.0), None],
            vec![None, Some(5.0)],
            vec![None, None],
        ])
        .unwrap();
        let part = partition(&data).unwrap();
        assert_eq!(part.group(&pat("11")), Some(&[0usize][..]));
        assert_eq!(part.group(&pat("10")), Some(&[1usize][..]));
        assert_eq!(part.group(&pat("01")), Some(&[2usize][..]));
        assert_eq!(part.dropped(), 1);
        assert_eq!(part.groups().len(), 3);
    }

    #[test]
    fn complete_data_forms_a_single_group() {
        let rows = (0..5)
            .map(|i| vec![Some(i as f64), Some(1.0), Some(2.0)])
            .collect();
        let data = Dataset::from_rows(rows).unwrap();
        let part = partition(&data).unwrap();
        assert_eq!(part.groups().len(), 1);
        assert_eq!(part.size(&pat("111")), 5);
        assert_eq!(part.dropped(), 0);
    }

    #[test]
    fn q3_all_masks_realize_three_levels() {
        let masks = ["111", "110", "101", "011", "100", "010", "001"];
        let rows = masks
            .iter()
            .map(|m| {
                m.chars()
                    .map(|c| (c == '1').then_some(1.0f64))
                    .collect::<Vec<_>>()
            })
            .collect();
        let part = partition(&Dataset::from_rows(rows).unwrap()).unwrap();
        assert_eq!(part.groups().len(), 7);
        let by_level = |level: usize| {
            part.groups()
                .keys()
                .filter(|p| p.level() == level)
                .count()
        };
        assert_eq!(by_level(1), 1);
        assert_eq!(by_level(2), 3);
        assert_eq!(by_level(3), 3);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let data = Dataset::<f64>::new(vec!["x1".into()], vec![]).unwrap();
        assert_eq!(partition(&data), Err(Error::NoData));
    }

    #[test]
    fn ragged_row_is_rejected_with_index() {
        let err = Dataset::from_rows(vec![
            vec![Some(1.0), Some(2.0)],
            vec![Some(3.0)],
        ])
        .unwrap_err();
        assert_eq!(
            err,
            Error::MalformedRow {
                row: 1,
                expected: 2,
                found: 1
            }
        );
    }

    #[test]
    fn non_finite_cell_is_rejected() {
        let err = Dataset::from_rows(vec![vec![Some(f64::NAN), Some(2.0)]]).unwrap_err();
        assert!(matches!(err, Error::BadCell { row: 0, .. }));
    }

    #[test]
    fn children_of_the_complete_q3_pattern() {
        assert_eq!(pat("111").children(), vec![pat("110"), pat("101"), pat("011")]);
    }

    #[test]
    fn children_never_include_the_all_missing_mask() {
        assert!(pat("10").children().is_empty());
        assert_eq!(pat("110").children(), vec![pat("100"), pat("010")]);
    }

    #[test]
    fn level_counts_unobserved_components() {
        assert_eq!(pat("111").level(), 1);
        assert_eq!(pat("101").level(), 2);
        assert_eq!(pat("001").level(), 3);
    }

    #[test]
    fn monotone_chain_drops_trailing_components() {
        assert_eq!(pat("111").monotone_child(), Some(pat("110")));
        assert_eq!(pat("110").monotone_child(), Some(pat("100")));
        assert_eq!(pat("100").monotone_child(), None);
        assert_eq!(pat("101").monotone_child(), None);
        assert!(pat("110").is_monotone_prefix());
        assert!(!pat("011").is_monotone_prefix());
    }

    #[test]
    fn estimable_keeps_input_order() {
        let params = vec![ParameterDef::<f64>::mean(0), ParameterDef::mean(1)];
        assert_eq!(estimable(&pat("11"), &params).unwrap(), vec![0, 1]);
        assert_eq!(estimable(&pat("10"), &params).unwrap(), vec![0]);

        let params = vec![
            ParameterDef::<f64>::mean(1),
            ParameterDef::product_moment(0, 2),
        ];
        assert_eq!(estimable(&pat("101"), &params).unwrap(), vec![1]);
    }

    #[test]
    fn estimable_rejects_out_of_range_components() {
        let params = vec![ParameterDef::<f64>::mean(3)];
        assert!(matches!(
            estimable(&pat("11"), &params),
            Err(Error::BadParameter { .. })
        ));
    }

    #[test]
    fn pattern_serde_uses_mask_strings() {
        let p = pat("101");
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, "\"101\"");
        let back: MissingPattern = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
    }

    proptest! {
        #[test]
        fn partition_is_disjoint_and_exhaustive(
            rows in proptest::collection::vec(
                proptest::collection::vec(proptest::option::of(-100.0f64..100.0), 3),
                1..40,
            )
        ) {
            let data = Dataset::from_rows(rows.clone()).unwrap();
            let part = partition(&data).unwrap();
            let mut seen = vec![0usize; rows.len()];
            for (p, idxs) in part.groups() {
                prop_assert!(p.level() >= 1 && p.level() <= 3);
                prop_assert_eq!(p.q() - p.n_observed(), p.level() - 1);
                prop_assert!(!idxs.is_empty());
                for &i in idxs {
                    seen[i] += 1;
                }
            }
            let grouped: usize = seen.iter().sum();
            prop_assert_eq!(grouped + part.dropped(), rows.len());
            prop_assert!(seen.iter().all(|&c| c <= 1));
        }

        #[test]
        fn children_differ_in_exactly_one_position(mask in proptest::collection::vec(any::<bool>(), 1..8)) {
            prop_assume!(mask.iter().any(|&o| o));
            let p = MissingPattern::new(mask).unwrap();
            let params: Vec<ParameterDef<f64>> =
                (0..p.q()).map(ParameterDef::mean).collect();
            let own = estimable(&p, &params).unwrap();
            for child in p.children() {
                let diff = p
                    .observed()
                    .iter()
                    .zip(child.observed())
                    .filter(|(a, b)| a != b)
                    .count();
                prop_assert_eq!(diff, 1);
                prop_assert_eq!(child.level(), p.level() + 1);
                let sub = estimable(&child, &params).unwrap();
                prop_assert!(sub.iter().all(|s| own.contains(s)));
            }
        }

        #[test]
        fn row_permutation_preserves_keys_and_sizes(
            rows in proptest::collection::vec(
                proptest::collection::vec(proptest::option::of(-1.0f64..1.0), 2),
                1..30,
            ),
            seed in any::<u64>(),
        ) {
            let data = Dataset::from_rows(rows.clone()).unwrap();
            let part = partition(&data).unwrap();

            let mut perm: Vec<usize> = (0..rows.len()).collect();
            let mut s = seed;
            for i in (1..perm.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (s >> 33) as usize % (i + 1));
            }
            let shuffled: Vec<_> = perm.iter().map(|&i| rows[i].clone()).collect();
            let part2 = partition(&Dataset::from_rows(shuffled).unwrap()).unwrap();

            prop_assert_eq!(part.dropped(), part2.dropped());
            let sizes: Vec<_> = part.groups().iter().map(|(p, g)| (p.clone(), g.len())).collect();
            let sizes2: Vec<_> = part2.groups().iter().map(|(p, g)| (p.clone(), g.len())).collect();
            prop_assert_eq!(sizes, sizes2);
        }
    }
}
