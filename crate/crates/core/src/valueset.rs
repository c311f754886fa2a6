// SPDX-License-Identifier: Apache-2.0

//! Argument-knowledge lattice shared by the binary scanner and the profile
//! generator.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Distinct sets larger than this widen to a range.
pub const MAX_DISTINCT: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum ValueSet {
    /// Any OR-combination of the listed flag values.
    Flags {
        values: BTreeSet<i64>,
    },
    Range {
        lo: i64,
        hi: i64,
    },
    Distinct {
        values: BTreeSet<i64>,
    },
    /// Addresses of known string literals, by content.
    Strings {
        values: BTreeSet<String>,
    },
    Unknown,
}

impl ValueSet {
    pub fn single(v: i64) -> Self {
        ValueSet::Distinct { values: [v].into() }
    }

    pub fn distinct(values: impl IntoIterator<Item = i64>) -> Self {
        let values: BTreeSet<i64> = values.into_iter().collect();
        if values.is_empty() {
            return ValueSet::Unknown;
        }
        if values.len() > MAX_DISTINCT {
            let lo = *values.first().unwrap();
            let hi = *values.last().unwrap();
            return ValueSet::Range { lo, hi };
        }
        ValueSet::Distinct { values }
    }

    pub fn string(s: impl Into<String>) -> Self {
        ValueSet::Strings {
            values: [s.into()].into(),
        }
    }

    pub fn is_unknown(&self) -> bool {
        matches!(self, ValueSet::Unknown)
    }

    /// Whether the concrete integer `v` is admitted.
    pub fn contains(&self, v: i64) -> bool {
        match self {
            ValueSet::Flags { values } => {
                let all = values.iter().fold(0i64, |a, b| a | b);
                v & !all == 0
            }
            ValueSet::Range { lo, hi } => *lo <= v && v <= *hi,
            ValueSet::Distinct { values } => values.contains(&v),
            ValueSet::Strings { .. } => false,
            ValueSet::Unknown => true,
        }
    }

    pub fn contains_str(&self, s: &str) -> bool {
        match self {
            ValueSet::Strings { values } => values.contains(s),
            ValueSet::Unknown => true,
            _ => false,
        }
    }

    /// Least upper bound.
    pub fn join(&self, other: &ValueSet) -> ValueSet {
        use ValueSet::*;
        match (self, other) {
            (Unknown, _) | (_, Unknown) => Unknown,
            (Strings { values: a }, Strings { values: b }) => Strings {
                values: a.union(b).cloned().collect(),
            },
            (Strings { .. }, _) | (_, Strings { .. }) => Unknown,
            (Distinct { values: a }, Distinct { values: b }) => ValueSet::distinct(a.union(b).copied()),
            (Flags { values: a }, Flags { values: b }) => Flags {
                values: a.union(b).copied().collect(),
            },
            (Flags { values: f }, Distinct { values: d }) | (Distinct { values: d }, Flags { values: f }) => {
                if d.iter().chain(f).any(|v| *v < 0) {
                    return Unknown;
                }
                Flags {
                    values: f.union(d).copied().filter(|v| *v != 0).collect(),
                }
            }
            (Flags { values: f }, Range { lo, hi }) | (Range { lo, hi }, Flags { values: f }) => {
                if f.iter().any(|v| *v < 0) {
                    return Unknown;
                }
                let all = f.iter().fold(0i64, |a, b| a | b);
                Range {
                    lo: (*lo).min(0),
                    hi: (*hi).max(all),
                }
            }
            (Range { lo, hi }, Range { lo: l2, hi: h2 }) => Range {
                lo: (*lo).min(*l2),
                hi: (*hi).max(*h2),
            },
            (Range { lo, hi }, Distinct { values }) | (Distinct { values }, Range { lo, hi }) => Range {
                lo: (*lo).min(*values.first().unwrap()),
                hi: (*hi).max(*values.last().unwrap()),
            },
        }
    }

    /// Image under `f`, defined element-wise on distinct sets only.
    pub fn map_distinct(&self, f: impl Fn(i64) -> i64) -> ValueSet {
        match self {
            ValueSet::Distinct { values } => ValueSet::distinct(values.iter().map(|v| f(*v))),
            _ => ValueSet::Unknown,
        }
    }

    /// Reinterprets non-negative distinct values as OR-combinable flags.
    pub fn as_flags(&self) -> ValueSet {
        match self {
            ValueSet::Distinct { values } if values.iter().all(|v| *v >= 0) => {
                let mut bits = BTreeSet::new();
                for v in values {
                    for b in 0..63 {
                        if v & (1 << b) != 0 {
                            bits.insert(1i64 << b);
                        }
                    }
                }
                ValueSet::Flags { values: bits }
            }
            other => other.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_widens_to_range() {
        let v = ValueSet::distinct(0..20);
        assert_eq!(v, ValueSet::Range { lo: 0, hi: 19 });
        assert_eq!(
            ValueSet::distinct(0..3),
            ValueSet::Distinct {
                values: [0, 1, 2].into()
            }
        );
    }

    #[test]
    fn flags_admit_subsets_only() {
        let f = ValueSet::Flags {
            values: [1, 64, 512].into(),
        };
        assert!(f.contains(0));
        assert!(f.contains(65));
        assert!(f.contains(577));
        assert!(!f.contains(2));
    }

    #[test]
    fn join_is_an_upper_bound() {
        let a = ValueSet::distinct([2]);
        let b = ValueSet::Flags { values: [1, 4].into() };
        let j = a.join(&b);
        for v in [0, 1, 2, 4, 7] {
            assert!(j.contains(v));
        }
        assert!(a.join(&ValueSet::Unknown).is_unknown());
        assert!(ValueSet::string("r").join(&a).is_unknown());
    }

    #[test]
    fn as_flags_covers_original_values() {
        let v = ValueSet::distinct([577, 524866]);
        let f = v.as_flags();
        assert!(f.contains(577) && f.contains(524866));
    }
}
