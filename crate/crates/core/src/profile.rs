// SPDX-License-Identifier: Apache-2.0

//! Syscall tables and allowlist profile generation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::binscan::{BinaryCallsite, DirectSyscall};
use crate::symexec::ValueFn;
use crate::sysident::{ApiSyscallMap, SyscallName};
use crate::valueset::ValueSet;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Arch {
    #[serde(rename = "a64")]
    A64,
    #[serde(rename = "a32")]
    A32,
    #[serde(rename = "x86_64")]
    X86_64,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::A64 => "a64",
            Arch::A32 => "a32",
            Arch::X86_64 => "x86_64",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a64" | "aarch64" | "arm64" => Ok(Arch::A64),
            "a32" | "arm" => Ok(Arch::A32),
            "x86_64" | "x64" => Ok(Arch::X86_64),
            other => Err(Error::UnknownArch(other.to_string())),
        }
    }
}

/// Default data directory: `SECFORGE_DATA`, else the crate's `data/`.
pub fn data_dir() -> PathBuf {
    std::env::var_os("SECFORGE_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/data")))
}

/// Bijective syscall name <-> number table of one architecture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyscallTable {
    pub arch: Arch,
    by_name: BTreeMap<String, i64>,
    by_nr: BTreeMap<i64, String>,
}

struct OrderedEntries(Vec<(String, i64)>);

impl<'de> Deserialize<'de> for OrderedEntries {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = OrderedEntries;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map of syscall names to numbers")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut m: A) -> std::result::Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = m.next_entry::<String, i64>()? {
                    out.push((k, v));
                }
                Ok(OrderedEntries(out))
            }
        }
        d.deserialize_map(V)
    }
}

#[derive(Deserialize)]
struct TableDoc {
    arch: Arch,
    syscalls: OrderedEntries,
}

impl SyscallTable {
    pub fn parse(text: &str) -> Result<Self> {
        let doc: TableDoc = serde_json::from_str(text).map_err(|e| Error::Schema(format!("syscall table: {e}")))?;
        let mut by_name = BTreeMap::new();
        let mut by_nr = BTreeMap::new();
        for (name, nr) in doc.syscalls.0 {
            if by_nr.insert(nr, name.clone()).is_some() {
                return Err(Error::DuplicateNumber(nr));
            }
            if by_name.insert(name.clone(), nr).is_some() {
                return Err(Error::DuplicateName(name));
            }
        }
        Ok(SyscallTable {
            arch: doc.arch,
            by_name,
            by_nr,
        })
    }

    /// Table compiled into the crate.
    pub fn builtin(arch: Arch) -> Self {
        let text = match arch {
            Arch::A64 => include_str!("../data/syscalls/a64.json"),
            Arch::A32 => include_str!("../data/syscalls/a32.json"),
            Arch::X86_64 => include_str!("../data/syscalls/x86_64.json"),
        };
        Self::parse(text).expect("builtin syscall table is valid")
    }

    pub fn number_of(&self, name: &str) -> Option<i64> {
        self.by_name.get(name).copied()
    }

    pub fn name_of(&self, nr: i64) -> Option<&str> {
        self.by_nr.get(&nr).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.by_nr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_nr.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, &str)> {
        self.by_nr.iter().map(|(n, s)| (*n, s.as_str()))
    }
}

/// Loads `<dir>/syscalls/<arch>.json`, falling back to the builtin table
/// when `dir` is `None`.
pub fn load_syscall_table(arch: Arch, dir: Option<&Path>) -> Result<SyscallTable> {
    let Some(dir) = dir else {
        return Ok(SyscallTable::builtin(arch));
    };
    let path = dir.join("syscalls").join(format!("{arch}.json"));
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let table = SyscallTable::parse(&text)?;
    if table.arch != arch {
        return Err(Error::ArchMismatch {
            expected: arch.to_string(),
            found: table.arch.to_string(),
        });
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefaultAction {
    #[default]
    Errno,
    Kill,
}

impl FromStr for DefaultAction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "errno" => Ok(DefaultAction::Errno),
            "kill" => Ok(DefaultAction::Kill),
            other => Err(Error::Config(format!("unknown default action `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FilterOp {
    #[serde(rename = "eq")]
    Eq,
    #[serde(rename = "maskedEq")]
    MaskedEq,
    #[serde(rename = "inSet")]
    InSet,
    #[serde(rename = "inRange")]
    InRange,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArgFilter {
    pub index: usize,
    pub op: FilterOp,
    pub values: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<u64>,
}

impl ArgFilter {
    pub fn accepts(&self, v: i64) -> bool {
        match self.op {
            FilterOp::Eq => self.values.first() == Some(&v),
            FilterOp::MaskedEq => {
                let mask = self.mask.unwrap_or(u64::MAX);
                self.values
                    .first()
                    .is_some_and(|want| (v as u64) & mask == (*want as u64) & mask)
            }
            FilterOp::InSet => self.values.contains(&v),
            FilterOp::InRange => match self.values.as_slice() {
                [lo, hi] => *lo <= v && v <= *hi,
                _ => false,
            },
        }
    }

    /// Filter admitting exactly the known values of `set`; `None` for
    /// unknown sets and string sets.
    pub fn from_value_set(index: usize, set: &ValueSet) -> Option<ArgFilter> {
        let (op, values, mask) = match set {
            ValueSet::Distinct { values } if values.len() == 1 => {
                (FilterOp::Eq, values.iter().copied().collect(), None)
            }
            ValueSet::Distinct { values } => (FilterOp::InSet, values.iter().copied().collect(), None),
            ValueSet::Flags { values } => {
                let all = values.iter().fold(0i64, |a, b| a | b);
                (FilterOp::MaskedEq, vec![0], Some(!(all as u64)))
            }
            ValueSet::Range { lo, hi } => (FilterOp::InRange, vec![*lo, *hi], None),
            ValueSet::Strings { .. } | ValueSet::Unknown => return None,
        };
        Some(ArgFilter {
            index,
            op,
            values,
            mask,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleAction {
    Allow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub syscall: i64,
    pub name: String,
    pub action: RuleAction,
    #[serde(default)]
    pub args: Vec<ArgFilter>,
}

impl Rule {
    /// Filters on the same index are alternatives; indices are conjunctive.
    /// Returns the first index whose filters reject the arguments.
    pub fn rejecting_index(&self, args: &[Option<i64>]) -> Option<usize> {
        let mut indices: Vec<usize> = self.args.iter().map(|f| f.index).collect();
        indices.sort_unstable();
        indices.dedup();
        indices.into_iter().find(|&i| {
            let v = args.get(i).copied().flatten();
            !self
                .args
                .iter()
                .filter(|f| f.index == i)
                .any(|f| v.is_some_and(|v| f.accepts(v)))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SeccompProfile {
    pub arch: Arch,
    pub default_action: DefaultAction,
    pub rules: Vec<Rule>,
}

impl SeccompProfile {
    pub fn rule_for(&self, nr: i64) -> Option<&Rule> {
        self.rules.iter().find(|r| r.syscall == nr)
    }

    pub fn rule_named(&self, name: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.name == name)
    }

    pub fn allowed_names(&self) -> BTreeSet<&str> {
        self.rules.iter().map(|r| r.name.as_str()).collect()
    }
}

pub fn serialize_profile(p: &SeccompProfile) -> String {
    let mut s = serde_json::to_string_pretty(p).expect("profile serializes");
    s.push('\n');
    s
}

pub fn parse_profile(text: &str) -> Result<SeccompProfile> {
    serde_json::from_str(text).map_err(|e| Error::Schema(format!("profile: {e}")))
}

/// Profile plus the findings produced while building it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProfileOutput {
    pub profile: SeccompProfile,
    pub diagnostics: Vec<String>,
    /// Set when every table syscall had to be allowed unfiltered.
    pub full_allowlist: bool,
}

/// Per-syscall contributions: one vector of argument knowledge per path
/// that can issue the syscall. `None` marks an argument nothing is known
/// about.
type Contributions = BTreeMap<String, Vec<Vec<Option<ValueSet>>>>;

/// Builds the allowlist for a binary from the library mapping and the
/// binary's callsites and direct syscalls.
pub fn generate_profile(
    map: &ApiSyscallMap,
    callsites: &[BinaryCallsite],
    direct: &[DirectSyscall],
    table: &SyscallTable,
    default_action: DefaultAction,
) -> Result<ProfileOutput> {
    let mut diags = Vec::new();
    let mut full = false;
    let mut contrib: Contributions = BTreeMap::new();

    for cs in callsites {
        let Some(entry) = map.entries.get(&cs.api) else {
            diags.push(format!(
                "{}@{:#x}: `{}` is not an analysed API; ignored",
                cs.function, cs.address, cs.api
            ));
            continue;
        };
        if entry.full_allowlist {
            diags.push(format!(
                "{}@{:#x}: `{}` reaches a syscall with an unresolved number; allowing every syscall",
                cs.function, cs.address, cs.api
            ));
            full = true;
            continue;
        }
        for site in &entry.sites {
            let SyscallName::Named(name) = &site.syscall else {
                full = true;
                continue;
            };
            let args = (0..site.nargs)
                .map(|i| {
                    let m = entry.mapping_for(&site.id, i)?;
                    if m.pointer {
                        return None;
                    }
                    let mapping = m.mapping.as_ref()?;
                    let input = match mapping.api_arg_index {
                        Some(j) => {
                            let v = cs.arg_sets.get(j)?;
                            if entry.params.get(j).is_some_and(|p| p.flags) {
                                v.as_flags()
                            } else {
                                v.clone()
                            }
                        }
                        None => ValueSet::Unknown,
                    };
                    let out = apply_value_fn(&mapping.value_fn, &input);
                    (!out.is_unknown()).then_some(out)
                })
                .collect();
            contrib.entry(name.clone()).or_default().push(args);
        }
    }

    // Arity and pointer positions, learned from the library's own sites.
    let mut signatures: BTreeMap<&str, (usize, BTreeSet<usize>)> = BTreeMap::new();
    for entry in map.entries.values() {
        for site in &entry.sites {
            let SyscallName::Named(name) = &site.syscall else {
                continue;
            };
            let sig = signatures.entry(name.as_str()).or_default();
            sig.0 = sig.0.max(site.nargs);
            for i in 0..site.nargs {
                if entry.mapping_for(&site.id, i).is_some_and(|m| m.pointer) {
                    sig.1.insert(i);
                }
            }
        }
    }

    for d in direct {
        let numbers = match &d.nr {
            ValueSet::Distinct { values } => values.clone(),
            _ => {
                diags.push(format!(
                    "{}@{:#x}: direct syscall number unresolved; allowing every syscall",
                    d.function, d.address
                ));
                full = true;
                continue;
            }
        };
        for nr in numbers {
            let Some(name) = table.name_of(nr) else {
                diags.push(format!(
                    "{}@{:#x}: syscall number {nr} is not in the {} table; allowing every syscall",
                    d.function, d.address, table.arch
                ));
                full = true;
                continue;
            };
            // Registers past the arity or holding pointers say nothing about the call.
            let args = match signatures.get(name) {
                Some((nargs, pointers)) => d
                    .arg_sets
                    .iter()
                    .take(*nargs)
                    .enumerate()
                    .map(|(i, v)| (!v.is_unknown() && !pointers.contains(&i)).then(|| v.clone()))
                    .collect(),
                None => Vec::new(),
            };
            contrib.entry(name.to_string()).or_default().push(args);
        }
    }

    let rules = if full {
        log::warn!("profile degraded to the full {} syscall table", table.arch);
        table
            .iter()
            .map(|(nr, name)| Rule {
                syscall: nr,
                name: name.to_string(),
                action: RuleAction::Allow,
                args: Vec::new(),
            })
            .collect()
    } else {
        let mut rules = Vec::new();
        for (name, paths) in &contrib {
            let Some(nr) = table.number_of(name) else {
                return Err(Error::ArchMismatch {
                    expected: table.arch.to_string(),
                    found: format!("syscall `{name}` from another architecture"),
                });
            };
            rules.push(Rule {
                syscall: nr,
                name: name.clone(),
                action: RuleAction::Allow,
                args: merge_paths(paths),
            });
        }
        rules.sort_by_key(|r| r.syscall);
        rules
    };

    Ok(ProfileOutput {
        profile: SeccompProfile {
            arch: table.arch,
            default_action,
            rules,
        },
        diagnostics: diags,
        full_allowlist: full,
    })
}

/// An argument is filtered only when every path knows its value.
fn merge_paths(paths: &[Vec<Option<ValueSet>>]) -> Vec<ArgFilter> {
    let width = paths.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = Vec::new();
    for i in 0..width {
        let mut acc: Option<ValueSet> = None;
        let mut known = true;
        for p in paths {
            match p.get(i).cloned().flatten() {
                Some(v) => acc = Some(acc.map_or(v.clone(), |a| a.join(&v))),
                None => {
                    known = false;
                    break;
                }
            }
        }
        if !known {
            continue;
        }
        if let Some(f) = acc.and_then(|v| ArgFilter::from_value_set(i, &v)) {
            out.push(f);
        }
    }
    out
}

/// Pushes the binary-side value set of an API argument through a mapping.
pub fn apply_value_fn(f: &ValueFn, input: &ValueSet) -> ValueSet {
    match f {
        ValueFn::Identity => input.clone(),
        ValueFn::ConstantSet { values } => ValueSet::distinct(values.iter().copied()),
        ValueFn::Table { entries } => {
            use crate::domain::DomainValue;
            let lookup = |k: DomainValue| entries.get(&k).copied();
            let image: Option<Vec<i64>> = match input {
                ValueSet::Distinct { values } => values.iter().map(|v| lookup(DomainValue::Int(*v))).collect(),
                ValueSet::Strings { values } => values.iter().map(|s| lookup(DomainValue::Str(s.clone()))).collect(),
                ValueSet::Range { lo, hi } if hi - lo < 4096 => {
                    (*lo..=*hi).map(|v| lookup(DomainValue::Int(v))).collect()
                }
                _ => None,
            };
            image.map_or(ValueSet::Unknown, ValueSet::distinct)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn read_numbers_per_arch() {
        assert_eq!(SyscallTable::builtin(Arch::A64).number_of("read"), Some(63));
        assert_eq!(SyscallTable::builtin(Arch::X86_64).number_of("read"), Some(0));
        assert_eq!(SyscallTable::builtin(Arch::A32).number_of("read"), Some(3));
        assert_eq!(SyscallTable::builtin(Arch::A64).len(), 291);
    }

    #[test]
    fn duplicate_entries_are_rejected() {
        let dup_nr = r#"{"arch":"a64","syscalls":{"a":1,"b":1}}"#;
        assert_eq!(SyscallTable::parse(dup_nr).unwrap_err(), Error::DuplicateNumber(1));
        let dup_name = r#"{"arch":"a64","syscalls":{"a":1,"a":2}}"#;
        assert_eq!(
            SyscallTable::parse(dup_name).unwrap_err(),
            Error::DuplicateName("a".into())
        );
    }

    #[test]
    fn empty_inputs_deny_everything() {
        let t = SyscallTable::builtin(Arch::A64);
        let out = generate_profile(&ApiSyscallMap::default(), &[], &[], &t, DefaultAction::Errno).unwrap();
        assert!(out.profile.rules.is_empty());
        assert!(!out.full_allowlist);
    }

    #[test]
    fn missing_default_action_is_a_schema_error() {
        let err = parse_profile(r#"{"arch":"a64","rules":[]}"#).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn filter_ops() {
        let f = |op, values: Vec<i64>, mask| ArgFilter {
            index: 0,
            op,
            values,
            mask,
        };
        assert!(f(FilterOp::Eq, vec![2], None).accepts(2));
        assert!(!f(FilterOp::Eq, vec![2], None).accepts(3));
        assert!(f(FilterOp::InSet, vec![1, 5], None).accepts(5));
        assert!(f(FilterOp::InRange, vec![1, 5], None).accepts(3));
        assert!(!f(FilterOp::InRange, vec![1, 5], None).accepts(6));
        let m = f(FilterOp::MaskedEq, vec![0], Some(!0b101u64));
        assert!(m.accepts(0b100) && m.accepts(0b101) && !m.accepts(0b010));
    }

    #[test]
    fn filters_on_one_index_are_alternatives() {
        let r = Rule {
            syscall: 198,
            name: "socket".into(),
            action: RuleAction::Allow,
            args: vec![
                ArgFilter {
                    index: 0,
                    op: FilterOp::Eq,
                    values: vec![2],
                    mask: None,
                },
                ArgFilter {
                    index: 0,
                    op: FilterOp::Eq,
                    values: vec![10],
                    mask: None,
                },
            ],
        };
        assert_eq!(r.rejecting_index(&[Some(10)]), None);
        assert_eq!(r.rejecting_index(&[Some(17)]), Some(0));
        assert_eq!(r.rejecting_index(&[None]), Some(0));
    }
}
