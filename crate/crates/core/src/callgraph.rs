// SPDX-License-Identifier: Apache-2.0

//! Direct call graph plus two-layer indirect-call resolution.
//!
//! Layer one keeps every address-taken function whose signature matches
//! the callsite. Layer two applies when the call target was loaded from a
//! field of a known object type: only functions that were stored into an
//! object of that same type survive.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ir::{Atom, Expr, IrFunction, IrProgram, Place, SemType, SiteId, Stmt};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefinementLevel {
    AddressTaken,
    TypeMatched,
    ObjectRefined,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DirectEdge {
    pub caller: String,
    pub callee: String,
    pub site: SiteId,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IndirectEdge {
    pub caller: String,
    pub callee: String,
    pub site: SiteId,
    pub level: RefinementLevel,
}

/// A function whose address escapes, with the object type it was stored in.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AddressTakenRecord {
    pub function: String,
    pub stored_in_type: Option<String>,
}

/// An `icall` before resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndirectSite {
    pub site: SiteId,
    pub target: String,
    /// Object type the target was loaded from, explicit or recovered.
    pub from_type: Option<String>,
    /// `None` where the argument type is not recoverable (matches anything).
    pub arg_types: Vec<Option<SemType>>,
    pub uses_result: bool,
}

/// Candidate sets computed for one indirect callsite.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IndirectResolution {
    pub site: SiteId,
    pub address_taken: BTreeSet<String>,
    pub type_matched: BTreeSet<String>,
    pub object_refined: Option<BTreeSet<String>>,
    pub level: RefinementLevel,
}

impl IndirectResolution {
    /// Candidates at the tightest level achieved.
    pub fn candidates(&self) -> &BTreeSet<String> {
        match (&self.object_refined, self.level) {
            (Some(s), RefinementLevel::ObjectRefined) => s,
            (_, RefinementLevel::TypeMatched) => &self.type_matched,
            _ => &self.address_taken,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CallGraph {
    pub nodes: BTreeSet<String>,
    pub direct: BTreeSet<DirectEdge>,
    pub indirect: BTreeSet<IndirectEdge>,
    pub indirect_sites: Vec<IndirectSite>,
    pub resolutions: Vec<IndirectResolution>,
}

impl CallGraph {
    /// Callees of `func` over direct and (tightest-level) indirect edges.
    pub fn callees<'a>(&'a self, func: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.direct
            .iter()
            .filter(move |e| e.caller == func)
            .map(|e| e.callee.as_str())
            .chain(
                self.indirect
                    .iter()
                    .filter(move |e| e.caller == func)
                    .map(|e| e.callee.as_str()),
            )
    }

    /// Every callsite (direct or indirect) that targets `callee`.
    pub fn callsites_of<'a>(&'a self, callee: &'a str) -> impl Iterator<Item = &'a SiteId> + 'a {
        self.direct
            .iter()
            .filter(move |e| e.callee == callee)
            .map(|e| &e.site)
            .chain(
                self.indirect
                    .iter()
                    .filter(move |e| e.callee == callee)
                    .map(|e| &e.site),
            )
    }

    pub fn edge_count(&self) -> usize {
        self.direct.len() + self.indirect.len()
    }

    pub fn to_doc(&self) -> GraphDoc {
        let mut edges: Vec<EdgeDoc> = self
            .direct
            .iter()
            .map(|e| EdgeDoc {
                from: e.caller.clone(),
                to: e.callee.clone(),
                site: e.site.clone(),
                kind: EdgeKind::Direct,
                level: None,
            })
            .chain(self.indirect.iter().map(|e| EdgeDoc {
                from: e.caller.clone(),
                to: e.callee.clone(),
                site: e.site.clone(),
                kind: EdgeKind::Indirect,
                level: Some(e.level),
            }))
            .collect();
        edges.sort();
        GraphDoc {
            nodes: self.nodes.iter().cloned().collect(),
            edges,
        }
    }

    pub fn from_doc(doc: &GraphDoc) -> Self {
        let mut g = CallGraph {
            nodes: doc.nodes.iter().cloned().collect(),
            ..Default::default()
        };
        for e in &doc.edges {
            match e.kind {
                EdgeKind::Direct => {
                    g.direct.insert(DirectEdge {
                        caller: e.from.clone(),
                        callee: e.to.clone(),
                        site: e.site.clone(),
                    });
                }
                EdgeKind::Indirect => {
                    g.indirect.insert(IndirectEdge {
                        caller: e.from.clone(),
                        callee: e.to.clone(),
                        site: e.site.clone(),
                        level: e.level.unwrap_or(RefinementLevel::AddressTaken),
                    });
                }
            }
        }
        g
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_doc()).expect("graph serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GraphDoc = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        Ok(Self::from_doc(&doc))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Direct,
    Indirect,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeDoc {
    pub from: String,
    pub to: String,
    pub site: SiteId,
    pub kind: EdgeKind,
    pub level: Option<RefinementLevel>,
}

/// Serialized call graph: `{nodes, edges:[{from,to,site,kind,level}]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDoc {
    pub nodes: Vec<String>,
    pub edges: Vec<EdgeDoc>,
}

pub fn build_direct_callgraph(prog: &IrProgram) -> Result<CallGraph> {
    let per_fn: Vec<Result<(Vec<DirectEdge>, Vec<IndirectSite>)>> =
        prog.functions.par_iter().map(|f| direct_edges_of(prog, f)).collect();
    let mut g = CallGraph::default();
    g.nodes.extend(prog.functions.iter().map(|f| f.name.clone()));
    g.nodes.extend(prog.externs.iter().cloned());
    for r in per_fn {
        let (edges, sites) = r?;
        g.direct.extend(edges);
        g.indirect_sites.extend(sites);
    }
    g.indirect_sites.sort_by(|a, b| a.site.cmp(&b.site));
    Ok(g)
}

fn direct_edges_of(prog: &IrProgram, f: &IrFunction) -> Result<(Vec<DirectEdge>, Vec<IndirectSite>)> {
    let mut edges = Vec::new();
    let mut sites = Vec::new();
    for (id, stmt) in f.statements() {
        match stmt {
            Stmt::Call { callee, .. } => {
                let canonical = prog.canonical(callee);
                if !prog.is_function(canonical) && !prog.is_extern(canonical) {
                    return Err(Error::UnknownCallee {
                        caller: f.name.clone(),
                        callee: callee.clone(),
                    });
                }
                edges.push(DirectEdge {
                    caller: f.name.clone(),
                    callee: canonical.to_string(),
                    site: SiteId::new(&f.name, id),
                });
            }
            Stmt::IndirectCall {
                lhs,
                target,
                from_type,
                args,
            } => {
                let from_type = from_type.clone().or_else(|| target_provenance(prog, f, target));
                sites.push(IndirectSite {
                    site: SiteId::new(&f.name, id),
                    target: target.clone(),
                    from_type,
                    arg_types: args.iter().map(|a| prog.atom_type(f, a)).collect(),
                    uses_result: lhs.is_some(),
                });
            }
            _ => {}
        }
    }
    Ok((edges, sites))
}

/// Object type a call target was loaded from, when every definition agrees.
fn target_provenance(prog: &IrProgram, f: &IrFunction, target: &str) -> Option<String> {
    if f.param_index(target).is_some() {
        return None;
    }
    let mut ty: Option<String> = None;
    let mut any = false;
    for (_, stmt) in f.statements() {
        if stmt.defined_var() != Some(target) {
            continue;
        }
        any = true;
        let Stmt::Assign {
            rhs: Expr::Field { base, .. },
            ..
        } = stmt
        else {
            return None;
        };
        let t = prog.object_type_of(f, base)?;
        match &ty {
            Some(prev) if *prev != t => return None,
            _ => ty = Some(t),
        }
    }
    if any {
        ty
    } else {
        None
    }
}

pub fn collect_address_taken(prog: &IrProgram) -> BTreeSet<AddressTakenRecord> {
    let mut out = BTreeSet::new();
    for f in &prog.functions {
        let fn_name = |a: &Atom| -> Option<String> {
            let v = a.as_var()?;
            if f.param_index(v).is_some() || f.statements().any(|(_, s)| s.defined_var() == Some(v)) {
                return None;
            }
            prog.is_function(v).then(|| prog.canonical(v).to_string())
        };
        for (_, stmt) in f.statements() {
            match stmt {
                Stmt::Assign {
                    lhs,
                    rhs: Expr::Atom(a),
                } => {
                    if let Some(name) = fn_name(a) {
                        let stored_in_type = match lhs {
                            Place::Field { base, .. } => prog.object_type_of(f, base),
                            Place::Var(_) => None,
                        };
                        out.insert(AddressTakenRecord {
                            function: name,
                            stored_in_type,
                        });
                    }
                }
                Stmt::Call { args, .. } | Stmt::IndirectCall { args, .. } | Stmt::Syscall { args, .. } => {
                    for a in args {
                        if let Some(name) = fn_name(a) {
                            out.insert(AddressTakenRecord {
                                function: name,
                                stored_in_type: None,
                            });
                        }
                    }
                }
                Stmt::Return(Some(a)) => {
                    if let Some(name) = fn_name(a) {
                        out.insert(AddressTakenRecord {
                            function: name,
                            stored_in_type: None,
                        });
                    }
                }
                _ => {}
            }
        }
    }
    out
}

fn signature_matches(site: &IndirectSite, f: &IrFunction) -> bool {
    if f.params.len() != site.arg_types.len() {
        return false;
    }
    if site.uses_result && !f.blocks.is_empty() && !f.returns_value() {
        return false;
    }
    site.arg_types
        .iter()
        .zip(&f.params)
        .all(|(a, p)| a.as_ref().is_none_or(|t| *t == p.ty))
}

/// Resolves every indirect callsite of `direct` against the address-taken set.
pub fn resolve_indirect_calls(
    prog: &IrProgram,
    direct: &CallGraph,
    at_set: &BTreeSet<AddressTakenRecord>,
) -> CallGraph {
    let address_taken: BTreeSet<String> = at_set.iter().map(|r| r.function.clone()).collect();
    let mut stored: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for r in at_set {
        if let Some(t) = &r.stored_in_type {
            stored.entry(t.as_str()).or_default().insert(r.function.as_str());
        }
    }

    let resolutions: Vec<IndirectResolution> = direct
        .indirect_sites
        .par_iter()
        .map(|site| {
            let type_matched: BTreeSet<String> = address_taken
                .iter()
                .filter(|name| prog.function(name).is_some_and(|f| signature_matches(site, f)))
                .cloned()
                .collect();
            let object_refined = site.from_type.as_ref().map(|t| {
                let in_type = stored.get(t.as_str());
                type_matched
                    .iter()
                    .filter(|f| in_type.is_some_and(|s| s.contains(f.as_str())))
                    .cloned()
                    .collect::<BTreeSet<String>>()
            });
            let level = if object_refined.is_some() {
                RefinementLevel::ObjectRefined
            } else {
                RefinementLevel::TypeMatched
            };
            IndirectResolution {
                site: site.site.clone(),
                address_taken: address_taken.clone(),
                type_matched,
                object_refined,
                level,
            }
        })
        .collect();

    let mut g = CallGraph::default();
    for r in &resolutions {
        g.nodes.insert(r.site.function.clone());
        for callee in r.candidates() {
            g.nodes.insert(callee.clone());
            g.indirect.insert(IndirectEdge {
                caller: r.site.function.clone(),
                callee: callee.clone(),
                site: r.site.clone(),
                level: r.level,
            });
        }
    }
    g.resolutions = resolutions;
    g
}

pub fn merge_graphs(direct: &CallGraph, indirect: &CallGraph) -> CallGraph {
    let mut g = direct.clone();
    g.nodes.extend(indirect.nodes.iter().cloned());
    g.indirect.extend(indirect.indirect.iter().cloned());
    g.resolutions.extend(indirect.resolutions.iter().cloned());
    g.resolutions.sort_by(|a, b| a.site.cmp(&b.site));
    for e in g
        .direct
        .iter()
        .map(|e| (&e.caller, &e.callee))
        .chain(g.indirect.iter().map(|e| (&e.caller, &e.callee)))
    {
        debug_assert!(g.nodes.contains(e.0) && g.nodes.contains(e.1));
    }
    g
}

/// Builds the merged graph in one go.
pub fn build_callgraph(prog: &IrProgram) -> Result<CallGraph> {
    let direct = build_direct_callgraph(prog)?;
    let at = collect_address_taken(prog);
    let indirect = resolve_indirect_calls(prog, &direct, &at);
    Ok(merge_graphs(&direct, &indirect))
}
