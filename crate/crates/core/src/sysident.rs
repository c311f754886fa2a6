// SPDX-License-Identifier: Apache-2.0

//! Finds syscall-issuing statements and maps each API to the syscalls it
//! can reach.
//!
//! Three idioms issue syscalls: wrapper functions generated from a template
//! (listed by name), calls to syscall macros such as `__syscall_cancel`
//! (first argument names the syscall), and inline-assembly `syscall(...)`
//! statements.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::callgraph::CallGraph;
use crate::ir::{Atom, Expr, IrFunction, IrProgram, SemType, SiteId, Stmt};
use crate::profile::SyscallTable;
use crate::symexec::ArgumentMapping;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SyscallName {
    Named(String),
    Dynamic,
}

impl SyscallName {
    pub fn name(&self) -> Option<&str> {
        match self {
            SyscallName::Named(n) => Some(n),
            SyscallName::Dynamic => None,
        }
    }
}

impl fmt::Display for SyscallName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SyscallName::Named(n) => f.write_str(n),
            SyscallName::Dynamic => f.write_str("dynamic"),
        }
    }
}

impl Serialize for SyscallName {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SyscallName {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(if s == "dynamic" {
            SyscallName::Dynamic
        } else {
            SyscallName::Named(s)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SiteKind {
    Wrapper,
    Macro,
    Asm,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyscallSite {
    pub site: SiteId,
    pub kind: SiteKind,
    pub syscall: SyscallName,
    pub nr: Atom,
    pub args: Vec<Atom>,
}

impl SyscallSite {
    pub fn function(&self) -> &str {
        &self.site.function
    }
}

/// Non-fatal finding reported while identifying sites.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub site: SiteId,
    pub message: String,
}

/// Locates every syscall site in the library.
///
/// Numeric syscall constants are named through `table` when one is given;
/// without a table, or for non-constant numbers, the site is `dynamic`.
pub fn identify_syscall_functions(
    prog: &IrProgram,
    macros: &BTreeSet<String>,
    table: Option<&SyscallTable>,
) -> (Vec<SyscallSite>, Vec<Diagnostic>) {
    let mut sites = Vec::new();
    let mut diags = Vec::new();
    for f in &prog.functions {
        if let Some(sys) = prog.wrappers.get(&f.name) {
            sites.push(SyscallSite {
                site: SiteId::entry(&f.name),
                kind: SiteKind::Wrapper,
                syscall: SyscallName::Named(sys.clone()),
                nr: Atom::Var(sys.clone()),
                args: f.params.iter().map(|p| Atom::Var(p.name.clone())).collect(),
            });
        }
        for (id, stmt) in f.statements() {
            let (kind, nr, args) = match stmt {
                Stmt::Call { callee, args, .. } if macros.contains(prog.canonical(callee)) => {
                    let Some((nr, rest)) = args.split_first() else {
                        diags.push(Diagnostic {
                            site: SiteId::new(&f.name, id),
                            message: format!("macro `{callee}` called without a syscall argument"),
                        });
                        continue;
                    };
                    (SiteKind::Macro, nr.clone(), rest.to_vec())
                }
                Stmt::Syscall { nr, args } => (SiteKind::Asm, nr.clone(), args.clone()),
                _ => continue,
            };
            let site = SiteId::new(&f.name, id);
            let syscall = resolve_number(prog, f, &nr, table);
            if syscall == SyscallName::Dynamic {
                diags.push(Diagnostic {
                    site: site.clone(),
                    message: "unresolved syscall number; site treated as dynamic".to_string(),
                });
                log::warn!("{site}: unresolved syscall number");
            }
            sites.push(SyscallSite {
                site,
                kind,
                syscall,
                nr,
                args,
            });
        }
    }
    sites.sort_by(|a, b| a.site.cmp(&b.site));
    (sites, diags)
}

fn is_variable(prog: &IrProgram, f: &IrFunction, name: &str) -> bool {
    f.param_index(name).is_some()
        || prog.globals.contains_key(name)
        || f.statements().any(|(_, s)| s.defined_var() == Some(name))
}

fn resolve_number(prog: &IrProgram, f: &IrFunction, nr: &Atom, table: Option<&SyscallTable>) -> SyscallName {
    match nr {
        Atom::Int(n) => match table.and_then(|t| t.name_of(*n)) {
            Some(name) => SyscallName::Named(name.to_string()),
            None => SyscallName::Dynamic,
        },
        Atom::Str(_) => SyscallName::Dynamic,
        Atom::Var(v) => {
            if let Some(name) = v.strip_prefix("__NR_") {
                return SyscallName::Named(name.to_string());
            }
            if !is_variable(prog, f, v) {
                return SyscallName::Named(v.clone());
            }
            // A local with a single constant definition still resolves.
            if f.param_index(v).is_some() {
                return SyscallName::Dynamic;
            }
            let defs: Vec<&Stmt> = f
                .statements()
                .filter(|(_, s)| s.defined_var() == Some(v.as_str()))
                .map(|(_, s)| s)
                .collect();
            match defs.as_slice() {
                [Stmt::Assign {
                    rhs: Expr::Atom(a @ (Atom::Int(_) | Atom::Var(_))),
                    ..
                }] if a != nr => resolve_number(prog, f, a, table),
                _ => SyscallName::Dynamic,
            }
        }
    }
}

/// A syscall site reachable from an API, as recorded in the mapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteRef {
    pub id: SiteId,
    pub syscall: SyscallName,
    /// Number of argument expressions passed at the site.
    pub nargs: usize,
}

/// Argument mapping for one (site, syscall argument) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SiteArgMapping {
    pub site: SiteId,
    pub syscall_arg_index: usize,
    /// Pointer arguments are never filtered.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub pointer: bool,
    pub mapping: Option<ArgumentMapping>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ApiParam {
    #[serde(rename = "type")]
    pub ty: SemType,
    /// Name of the input domain bound to this parameter, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    /// OR-combinable flag argument.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub flags: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ApiEntry {
    pub syscalls: BTreeSet<String>,
    pub sites: Vec<SiteRef>,
    pub full_allowlist: bool,
    #[serde(default)]
    pub params: Vec<ApiParam>,
    #[serde(default)]
    pub arg_mappings: Vec<SiteArgMapping>,
}

impl ApiEntry {
    pub fn mapping_for(&self, site: &SiteId, arg: usize) -> Option<&SiteArgMapping> {
        self.arg_mappings
            .iter()
            .find(|m| &m.site == site && m.syscall_arg_index == arg)
    }
}

/// API name -> reachable syscalls, keyed by the names in the API list.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ApiSyscallMap {
    pub entries: BTreeMap<String, ApiEntry>,
}

impl ApiSyscallMap {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("map serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }
}

/// Functions reachable from `start` (inclusive) over the merged graph.
pub fn reachable_functions(graph: &CallGraph, start: &str) -> BTreeSet<String> {
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([start.to_string()]);
    seen.insert(start.to_string());
    while let Some(f) = queue.pop_front() {
        for callee in graph.callees(&f) {
            if seen.insert(callee.to_string()) {
                queue.push_back(callee.to_string());
            }
        }
    }
    seen
}

pub fn build_api_syscall_map(prog: &IrProgram, graph: &CallGraph, sites: &[SyscallSite]) -> Result<ApiSyscallMap> {
    let mut by_fn: BTreeMap<&str, Vec<&SyscallSite>> = BTreeMap::new();
    for s in sites {
        by_fn.entry(s.function()).or_default().push(s);
    }
    for api in &prog.api_list {
        let canonical = prog.canonical(api);
        if prog.function(canonical).is_none() || !graph.nodes.contains(canonical) {
            return Err(Error::UnknownApi(api.clone()));
        }
    }
    let entries: Vec<(String, ApiEntry)> = prog
        .api_list
        .par_iter()
        .map(|api| {
            let canonical = prog.canonical(api);
            let reach = reachable_functions(graph, canonical);
            let mut syscalls = BTreeSet::new();
            let mut refs = Vec::new();
            let mut full = false;
            for f in &reach {
                for s in by_fn.get(f.as_str()).into_iter().flatten() {
                    match &s.syscall {
                        SyscallName::Named(n) => {
                            syscalls.insert(n.clone());
                        }
                        SyscallName::Dynamic => full = true,
                    }
                    refs.push(SiteRef {
                        id: s.site.clone(),
                        syscall: s.syscall.clone(),
                        nargs: s.args.len(),
                    });
                }
            }
            refs.sort_by(|a, b| a.id.cmp(&b.id));
            let params = prog
                .function(canonical)
                .map(|f| {
                    f.params
                        .iter()
                        .map(|p| ApiParam {
                            ty: p.ty.clone(),
                            domain: None,
                            flags: false,
                        })
                        .collect()
                })
                .unwrap_or_default();
            (
                api.clone(),
                ApiEntry {
                    syscalls,
                    sites: refs,
                    full_allowlist: full,
                    params,
                    arg_mappings: Vec::new(),
                },
            )
        })
        .collect();
    Ok(ApiSyscallMap {
        entries: entries.into_iter().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::callgraph::build_callgraph;
    use crate::ir::parse_ir;

    fn macros() -> BTreeSet<String> {
        ["__syscall_cancel".to_string()].into()
    }

    #[test]
    fn wrapper_gets_synthetic_entry_site() {
        let p = parse_ir("func read(fd:int, buf:ptr, n:int)\nendfunc\n")
            .unwrap()
            .with_wrappers([("read".to_string(), "read".to_string())].into());
        let (sites, diags) = identify_syscall_functions(&p, &macros(), None);
        assert!(diags.is_empty());
        assert_eq!(sites.len(), 1);
        assert_eq!(sites[0].site, SiteId::entry("read"));
        assert_eq!(sites[0].syscall, SyscallName::Named("read".into()));
        assert_eq!(sites[0].args.len(), 3);
    }

    #[test]
    fn macro_call_names_the_syscall() {
        let p = parse_ir(
            "extern __syscall_cancel\nfunc f(fd:int, path:str, flags:int)\nbb a:\n  call __syscall_cancel(openat, fd, path, flags)\n  return\nendfunc\n",
        )
        .unwrap();
        let (sites, _) = identify_syscall_functions(&p, &macros(), None);
        assert_eq!(sites.len(), 1);
        assert_eq!(sites[0].kind, SiteKind::Macro);
        assert_eq!(sites[0].syscall, SyscallName::Named("openat".into()));
        assert_eq!(sites[0].args.len(), 3);
    }

    #[test]
    fn variable_number_is_dynamic() {
        let p = parse_ir("func f(nr_var:int, a:int)\nbb a:\n  syscall(nr_var, a)\n  return\nendfunc\n").unwrap();
        let (sites, diags) = identify_syscall_functions(&p, &macros(), None);
        assert_eq!(sites[0].syscall, SyscallName::Dynamic);
        assert_eq!(diags.len(), 1);
    }

    #[test]
    fn local_constant_number_resolves() {
        let p = parse_ir("func f(a:int)\nbb a:\n  n = __NR_close\n  syscall(n, a)\n  return\nendfunc\n").unwrap();
        let (sites, _) = identify_syscall_functions(&p, &macros(), None);
        assert_eq!(sites[0].syscall, SyscallName::Named("close".into()));
    }

    #[test]
    fn numeric_constant_resolves_through_table() {
        let p = parse_ir("func f(a:int)\nbb a:\n  syscall(63, a)\n  return\nendfunc\n").unwrap();
        let table = SyscallTable::builtin(crate::profile::Arch::A64);
        let (sites, _) = identify_syscall_functions(&p, &macros(), Some(&table));
        assert_eq!(sites[0].syscall, SyscallName::Named("read".into()));
        let (sites, _) = identify_syscall_functions(&p, &macros(), None);
        assert_eq!(sites[0].syscall, SyscallName::Dynamic);
    }

    #[test]
    fn isolated_api_reaches_nothing() {
        let p = parse_ir("func f()\nbb a:\n  return\nendfunc\n")
            .unwrap()
            .with_apis(["f".to_string()]);
        let g = build_callgraph(&p).unwrap();
        let (sites, _) = identify_syscall_functions(&p, &macros(), None);
        let m = build_api_syscall_map(&p, &g, &sites).unwrap();
        assert!(m.entries["f"].syscalls.is_empty());
        assert!(!m.entries["f"].full_allowlist);
    }

    #[test]
    fn unknown_api_is_an_error() {
        let p = parse_ir("func f()\nbb a:\n  return\nendfunc\n")
            .unwrap()
            .with_apis(["g".to_string()]);
        let g = build_callgraph(&p).unwrap();
        assert_eq!(
            build_api_syscall_map(&p, &g, &[]).unwrap_err(),
            Error::UnknownApi("g".into())
        );
    }

    #[test]
    fn dynamic_site_flags_full_allowlist() {
        let p = parse_ir(
            "func raw(nr:int)\nbb a:\n  syscall(nr)\n  return\nendfunc\nfunc api(nr:int)\nbb a:\n  call raw(nr)\n  return\nendfunc\n",
        )
        .unwrap()
        .with_apis(["api".to_string()]);
        let g = build_callgraph(&p).unwrap();
        let (sites, _) = identify_syscall_functions(&p, &macros(), None);
        let m = build_api_syscall_map(&p, &g, &sites).unwrap();
        assert!(m.entries["api"].full_allowlist);
    }
}
