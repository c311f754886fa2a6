// SPDX-License-Identifier: Apache-2.0

//! Flag tables and the finite input domains used by symbolic execution.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ir::{Atom, IrProgram, Stmt};
use crate::profile::Arch;
use crate::{Error, Result};

/// A concrete input value: an integer or a short string.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DomainValue {
    Int(i64),
    Str(String),
}

impl fmt::Display for DomainValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DomainValue::Int(v) => write!(f, "{v}"),
            DomainValue::Str(s) => write!(f, "{s:?}"),
        }
    }
}

/// Symbolic flag names per architecture, grouped by prefix (`AF`, `O`, ...).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagTable {
    pub arch: Arch,
    pub groups: BTreeMap<String, BTreeMap<String, i64>>,
}

impl FlagTable {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("flag table: {e}")))
    }

    pub fn builtin(arch: Arch) -> Result<Self> {
        let text = match arch {
            Arch::A64 => include_str!("../data/flags/a64.json"),
            Arch::A32 => include_str!("../data/flags/a32.json"),
            Arch::X86_64 => return Err(Error::UnknownArch("x86_64 has no flag table".into())),
        };
        Self::parse(text)
    }

    pub fn lookup(&self, name: &str) -> Option<i64> {
        self.groups.values().find_map(|g| g.get(name).copied())
    }

    pub fn group(&self, name: &str) -> Option<&BTreeMap<String, i64>> {
        self.groups.get(name)
    }
}

/// Declared input domain of an argument.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Domain {
    Strings {
        values: Vec<String>,
    },
    Ints {
        values: Vec<i64>,
    },
    /// One value out of a flag-table group.
    Enum {
        group: String,
    },
    /// Any OR-combination of a flag-table group.
    Flags {
        group: String,
    },
}

/// Cap on enumerated OR-combinations of a flag group.
pub const MAX_FLAG_COMBINATIONS: usize = 4096;

impl Domain {
    pub fn is_flags(&self) -> bool {
        matches!(self, Domain::Flags { .. })
    }

    pub fn enumerate(&self, flags: &FlagTable) -> Result<BTreeSet<DomainValue>> {
        let group = |g: &str| {
            flags
                .group(g)
                .ok_or_else(|| Error::Schema(format!("unknown flag group `{g}`")))
        };
        Ok(match self {
            Domain::Strings { values } => values.iter().cloned().map(DomainValue::Str).collect(),
            Domain::Ints { values } => values.iter().copied().map(DomainValue::Int).collect(),
            Domain::Enum { group: g } => group(g)?.values().copied().map(DomainValue::Int).collect(),
            Domain::Flags { group: g } => {
                let mut acc: BTreeSet<i64> = [0].into();
                for &bit in group(g)?.values() {
                    let next: Vec<i64> = acc.iter().map(|v| v | bit).collect();
                    acc.extend(next);
                    if acc.len() > MAX_FLAG_COMBINATIONS {
                        return Err(Error::Schema(format!("flag group `{g}` has too many combinations")));
                    }
                }
                acc.into_iter().map(DomainValue::Int).collect()
            }
        })
    }
}

/// Domains plus their bindings to `function:paramIndex` positions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainCatalog {
    #[serde(default)]
    pub domains: BTreeMap<String, Domain>,
    #[serde(default)]
    pub bindings: BTreeMap<String, String>,
}

/// Enumerated values per (function, parameter index).
pub type ParamDomains = BTreeMap<(String, usize), BTreeSet<DomainValue>>;

impl DomainCatalog {
    pub fn parse(text: &str) -> Result<Self> {
        let cat: DomainCatalog = serde_json::from_str(text).map_err(|e| Error::Schema(format!("domains: {e}")))?;
        for (pos, dom) in &cat.bindings {
            parse_position(pos)?;
            if !cat.domains.contains_key(dom) {
                return Err(Error::Schema(format!("binding `{pos}` names unknown domain `{dom}`")));
            }
        }
        Ok(cat)
    }

    /// Domain bound to a position, with the function name taken as given.
    pub fn binding(&self, function: &str, index: usize) -> Option<&Domain> {
        self.bindings
            .get(&format!("{function}:{index}"))
            .and_then(|d| self.domains.get(d))
    }

    /// Enumerates every binding and pushes domains from parameters into the
    /// callees they are passed to unchanged, until nothing changes.
    pub fn param_domains(&self, prog: &IrProgram, flags: &FlagTable) -> Result<ParamDomains> {
        let mut out = ParamDomains::new();
        for (pos, dom) in &self.bindings {
            let (f, idx) = parse_position(pos)?;
            let values = self.domains[dom].enumerate(flags)?;
            out.entry((prog.canonical(&f).to_string(), idx))
                .or_default()
                .extend(values);
        }
        loop {
            let mut changed = false;
            for f in &prog.functions {
                for (_, stmt) in f.statements() {
                    let Stmt::Call { callee, args, .. } = stmt else {
                        continue;
                    };
                    let callee = prog.canonical(callee);
                    if prog.function(callee).is_none() {
                        continue;
                    }
                    for (i, a) in args.iter().enumerate() {
                        let Atom::Var(v) = a else { continue };
                        let Some(p) = f.param_index(v) else { continue };
                        let Some(src) = out.get(&(f.name.clone(), p)).cloned() else {
                            continue;
                        };
                        let dst = out.entry((callee.to_string(), i)).or_default();
                        let before = dst.len();
                        dst.extend(src);
                        changed |= dst.len() != before;
                    }
                }
            }
            if !changed {
                return Ok(out);
            }
        }
    }
}

fn parse_position(pos: &str) -> Result<(String, usize)> {
    let (f, i) = pos
        .rsplit_once(':')
        .ok_or_else(|| Error::Schema(format!("binding `{pos}` is not `function:index`")))?;
    let i = i
        .parse()
        .map_err(|_| Error::Schema(format!("binding `{pos}` has a bad index")))?;
    Ok((f.to_string(), i))
}
