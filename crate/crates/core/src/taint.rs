// SPDX-License-Identifier: Apache-2.0

//! Backward taint from syscall arguments to their data sources.
//!
//! Within a function, taint follows every definition of a variable (flow
//! insensitive) plus the branches those definitions are control dependent
//! on. Reaching a parameter continues into each caller that is reachable
//! from the API under analysis; reaching the API's own parameter yields an
//! `api-arg` source.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::callgraph::CallGraph;
use crate::domain::DomainValue;
use crate::ir::{build_function_cfg, cfg, Atom, Expr, IrFunction, IrProgram, SiteId, Stmt};
use crate::sysident::{reachable_functions, SyscallSite};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DdgNode {
    /// The root: one argument of one syscall site.
    SyscallArg {
        site: SiteId,
        index: usize,
    },
    Constant {
        value: DomainValue,
    },
    ApiArg {
        api: String,
        index: usize,
    },
    FnArg {
        function: String,
        index: usize,
    },
    LocalVar {
        function: String,
        name: String,
    },
    ObjectField {
        #[serde(rename = "type")]
        ty: String,
        field: String,
    },
    /// Computation at a statement: a binary operator symbol, `[i]` for a
    /// character load, `call:<fn>` for a call result or `icall`.
    Calc {
        site: SiteId,
        op: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Data,
    /// Branch scrutinee -> value defined under that branch.
    Control,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DdgEdge {
    pub from: DdgNode,
    pub to: DdgNode,
    /// Operand position for edges into `calc` nodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operand: Option<usize>,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DataDependencyGraph {
    pub api: String,
    pub site: SiteId,
    pub arg_index: usize,
    pub nodes: BTreeSet<DdgNode>,
    pub edges: BTreeSet<DdgEdge>,
    pub recorded_conds: BTreeSet<SiteId>,
    pub unknown_source: bool,
    /// (function, label) pairs processed while building the graph.
    pub visits: usize,
}

impl DataDependencyGraph {
    pub fn root(&self) -> DdgNode {
        DdgNode::SyscallArg {
            site: self.site.clone(),
            index: self.arg_index,
        }
    }

    /// Incoming edges of `node`, in canonical order.
    pub fn incoming<'a>(&'a self, node: &'a DdgNode) -> impl Iterator<Item = &'a DdgEdge> + 'a {
        self.edges.iter().filter(move |e| &e.to == node)
    }

    /// Nodes without incoming data or control edges.
    pub fn leaves(&self) -> Vec<&DdgNode> {
        let targets: HashSet<&DdgNode> = self.edges.iter().map(|e| &e.to).collect();
        self.nodes.iter().filter(|n| !targets.contains(n)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    AllDetermined,
    HasObjectField,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceClassification {
    pub kind: SourceKind,
    pub sources: Vec<DdgNode>,
}

pub fn classify_sources(ddg: &DataDependencyGraph) -> SourceClassification {
    let sources: Vec<DdgNode> = ddg.leaves().into_iter().cloned().collect();
    let mut kind = SourceKind::AllDetermined;
    if ddg.unknown_source {
        kind = SourceKind::Unknown;
    }
    for s in &sources {
        match s {
            DdgNode::Constant { .. } | DdgNode::ApiArg { .. } => {}
            DdgNode::ObjectField { .. } => {
                if kind == SourceKind::AllDetermined {
                    kind = SourceKind::HasObjectField;
                }
            }
            _ => kind = SourceKind::Unknown,
        }
    }
    SourceClassification { kind, sources }
}

#[derive(Debug, Clone)]
pub struct TaintConfig {
    /// Caller-expansion depth bound.
    pub max_depth: usize,
}

impl Default for TaintConfig {
    fn default() -> Self {
        TaintConfig { max_depth: 32 }
    }
}

/// Intra-function result of tracing one variable.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Fragment {
    nodes: BTreeSet<DdgNode>,
    edges: BTreeSet<DdgEdge>,
    conds: BTreeSet<SiteId>,
    /// Parameters the traced value depends on.
    params: BTreeSet<usize>,
    /// Variables traced, including the start.
    labels: BTreeSet<String>,
    unknown: bool,
}

/// Grow-only memo of intra-function fragments, safe to share across
/// threads. Entries are inserted whole; a racing duplicate computation is
/// discarded.
#[derive(Debug, Default)]
pub struct TaintCache {
    fragments: RwLock<HashMap<(String, String), Arc<Fragment>>>,
    computed: AtomicUsize,
    hits: AtomicUsize,
}

impl TaintCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.fragments.read().expect("taint cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Fragments computed from scratch so far.
    pub fn computed(&self) -> usize {
        self.computed.load(Ordering::Relaxed)
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    fn get_or_compute(&self, prog: &IrProgram, f: &IrFunction, var: &str) -> Arc<Fragment> {
        let key = (f.name.clone(), var.to_string());
        if let Some(frag) = self.fragments.read().expect("taint cache poisoned").get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Arc::clone(frag);
        }
        let frag = Arc::new(trace_in_function(prog, f, var));
        self.computed.fetch_add(1, Ordering::Relaxed);
        let mut w = self.fragments.write().expect("taint cache poisoned");
        Arc::clone(w.entry(key).or_insert(frag))
    }
}

fn const_node(a: &Atom) -> Option<DdgNode> {
    match a {
        Atom::Int(v) => Some(DdgNode::Constant {
            value: DomainValue::Int(*v),
        }),
        Atom::Str(s) => Some(DdgNode::Constant {
            value: DomainValue::Str(s.clone()),
        }),
        Atom::Var(_) => None,
    }
}

fn is_local(f: &IrFunction, v: &str) -> bool {
    f.statements().any(|(_, s)| s.defined_var() == Some(v))
}

/// Node standing for variable `v` of `f`, or `None` when `v` names nothing
/// the taint can follow.
fn var_node(f: &IrFunction, v: &str) -> Option<DdgNode> {
    if let Some(i) = f.param_index(v) {
        return Some(DdgNode::FnArg {
            function: f.name.clone(),
            index: i,
        });
    }
    is_local(f, v).then(|| DdgNode::LocalVar {
        function: f.name.clone(),
        name: v.to_string(),
    })
}

fn trace_in_function(prog: &IrProgram, f: &IrFunction, start: &str) -> Fragment {
    let mut frag = Fragment::default();
    let cfg = build_function_cfg(f);
    let pdom = cfg::post_dominators(&cfg);
    let stmts: Vec<&Stmt> = f.statements().map(|(_, s)| s).collect();
    let mut queue = VecDeque::from([start.to_string()]);
    let mut seen = HashSet::new();

    while let Some(v) = queue.pop_front() {
        if !seen.insert(v.clone()) {
            continue;
        }
        frag.labels.insert(v.clone());
        let Some(node) = var_node(f, &v) else {
            // Globals and function names carry no traceable value.
            frag.unknown = true;
            continue;
        };
        frag.nodes.insert(node.clone());
        if let DdgNode::FnArg { index, .. } = node {
            frag.params.insert(index);
            continue;
        }
        let operand =
            |frag: &mut Fragment, a: &Atom, to: &DdgNode, pos: Option<usize>, queue: &mut VecDeque<String>| {
                let from = match const_node(a) {
                    Some(c) => c,
                    None => {
                        let name = a.as_var().expect("non-constant atom is a variable");
                        match var_node(f, name) {
                            Some(n) => {
                                queue.push_back(name.to_string());
                                n
                            }
                            None => {
                                frag.unknown = true;
                                return;
                            }
                        }
                    }
                };
                frag.nodes.insert(from.clone());
                frag.edges.insert(DdgEdge {
                    from,
                    to: to.clone(),
                    operand: pos,
                    kind: EdgeKind::Data,
                });
            };
        for (id, stmt) in stmts.iter().enumerate() {
            if stmt.defined_var() != Some(v.as_str()) {
                continue;
            }
            let site = SiteId::new(&f.name, id);
            match stmt {
                Stmt::Assign { rhs, .. } => match rhs {
                    Expr::Atom(a) => operand(&mut frag, a, &node, None, &mut queue),
                    Expr::Field { base, field } => {
                        let ty = match prog.object_type_of(f, base) {
                            Some(t) => t,
                            None => {
                                frag.unknown = true;
                                "?".to_string()
                            }
                        };
                        let src = DdgNode::ObjectField {
                            ty,
                            field: field.clone(),
                        };
                        frag.nodes.insert(src.clone());
                        frag.edges.insert(DdgEdge {
                            from: src,
                            to: node.clone(),
                            operand: None,
                            kind: EdgeKind::Data,
                        });
                    }
                    Expr::Binop { op, lhs, rhs } => {
                        let calc = DdgNode::Calc {
                            site: site.clone(),
                            op: op.symbol().to_string(),
                        };
                        frag.nodes.insert(calc.clone());
                        operand(&mut frag, lhs, &calc, Some(0), &mut queue);
                        operand(&mut frag, rhs, &calc, Some(1), &mut queue);
                        frag.edges.insert(DdgEdge {
                            from: calc,
                            to: node.clone(),
                            operand: None,
                            kind: EdgeKind::Data,
                        });
                    }
                    Expr::CharAt { base, index } => {
                        let calc = DdgNode::Calc {
                            site: site.clone(),
                            op: format!("[{index}]"),
                        };
                        frag.nodes.insert(calc.clone());
                        operand(&mut frag, &Atom::Var(base.clone()), &calc, Some(0), &mut queue);
                        frag.edges.insert(DdgEdge {
                            from: calc,
                            to: node.clone(),
                            operand: None,
                            kind: EdgeKind::Data,
                        });
                    }
                },
                Stmt::Call { callee, args, .. } => {
                    let callee = prog.canonical(callee);
                    let calc = DdgNode::Calc {
                        site: site.clone(),
                        op: format!("call:{callee}"),
                    };
                    // Only library functions with bodies can be summarised.
                    let summarisable = prog
                        .function(callee)
                        .is_some_and(|g| !g.blocks.is_empty() && !prog.wrappers.contains_key(callee));
                    if !summarisable {
                        frag.unknown = true;
                    }
                    frag.nodes.insert(calc.clone());
                    for (i, a) in args.iter().enumerate() {
                        operand(&mut frag, a, &calc, Some(i), &mut queue);
                    }
                    frag.edges.insert(DdgEdge {
                        from: calc,
                        to: node.clone(),
                        operand: None,
                        kind: EdgeKind::Data,
                    });
                }
                Stmt::IndirectCall { .. } => {
                    let calc = DdgNode::Calc {
                        site: site.clone(),
                        op: "icall".to_string(),
                    };
                    frag.unknown = true;
                    frag.nodes.insert(calc.clone());
                    frag.edges.insert(DdgEdge {
                        from: calc,
                        to: node.clone(),
                        operand: None,
                        kind: EdgeKind::Data,
                    });
                }
                _ => {}
            }
            for b in cfg::controlling_branches(f, &cfg, &pdom, id) {
                frag.conds.insert(SiteId::new(&f.name, b));
                for name in branch_vars(stmts[b]) {
                    if let Some(n) = var_node(f, name) {
                        frag.nodes.insert(n.clone());
                        frag.edges.insert(DdgEdge {
                            from: n,
                            to: node.clone(),
                            operand: None,
                            kind: EdgeKind::Control,
                        });
                        queue.push_back(name.to_string());
                    }
                }
            }
        }
    }
    // Branches testing any traced variable are recorded too.
    for (id, stmt) in stmts.iter().enumerate() {
        if branch_vars(stmt).iter().any(|v| frag.labels.contains(*v)) {
            frag.conds.insert(SiteId::new(&f.name, id));
        }
    }
    frag
}

fn branch_vars(stmt: &Stmt) -> Vec<&str> {
    match stmt {
        Stmt::Cond { var, rhs, .. } => {
            let mut v = vec![var.as_str()];
            v.extend(rhs.as_var());
            v
        }
        Stmt::Switch { scrutinee, .. } => vec![scrutinee.as_str()],
        _ => Vec::new(),
    }
}

/// Argument expression of a site: wrapper sites use the parameters.
pub fn site_arg(site: &SyscallSite, index: usize) -> Option<&Atom> {
    site.args.get(index)
}

/// Whether the argument is pointer-typed (and so never filterable).
pub fn is_pointer_arg(prog: &IrProgram, site: &SyscallSite, index: usize) -> bool {
    let Some(f) = prog.function(&site.site.function) else {
        return false;
    };
    match site_arg(site, index) {
        Some(Atom::Str(_)) => true,
        Some(a @ Atom::Var(_)) => prog.atom_type(f, a).is_some_and(|t| t.is_pointer()),
        _ => false,
    }
}

pub fn backward_taint(
    api: &str,
    site: &SyscallSite,
    arg_index: usize,
    prog: &IrProgram,
    graph: &CallGraph,
    cache: &TaintCache,
    config: &TaintConfig,
) -> Result<DataDependencyGraph> {
    let api_fn = prog.canonical(api).to_string();
    if prog.function(&api_fn).is_none() {
        return Err(Error::UnknownApi(api.to_string()));
    }
    let atom = site_arg(site, arg_index).ok_or_else(|| Error::PointerArgument {
        site: site.site.to_string(),
        index: arg_index,
    })?;
    if is_pointer_arg(prog, site, arg_index) {
        return Err(Error::PointerArgument {
            site: site.site.to_string(),
            index: arg_index,
        });
    }
    let reach = reachable_functions(graph, &api_fn);
    let mut ddg = DataDependencyGraph {
        api: api.to_string(),
        site: site.site.clone(),
        arg_index,
        nodes: BTreeSet::new(),
        edges: BTreeSet::new(),
        recorded_conds: BTreeSet::new(),
        unknown_source: false,
        visits: 0,
    };
    let root = ddg.root();
    ddg.nodes.insert(root.clone());
    let site_fn = prog
        .function(&site.site.function)
        .ok_or_else(|| Error::UnknownApi(site.site.function.clone()))?;

    let mut queue: VecDeque<(String, String, usize)> = VecDeque::new();
    let link = |ddg: &mut DataDependencyGraph,
                f: &IrFunction,
                a: &Atom,
                to: DdgNode,
                depth: usize,
                queue: &mut VecDeque<(String, String, usize)>| {
        let from = match const_node(a) {
            Some(c) => c,
            None => {
                let v = a.as_var().expect("variable atom");
                match var_node(f, v) {
                    Some(n) => {
                        queue.push_back((f.name.clone(), v.to_string(), depth));
                        n
                    }
                    None => {
                        ddg.unknown_source = true;
                        return;
                    }
                }
            }
        };
        ddg.nodes.insert(from.clone());
        ddg.edges.insert(DdgEdge {
            from,
            to,
            operand: None,
            kind: EdgeKind::Data,
        });
    };
    link(&mut ddg, site_fn, atom, root, 0, &mut queue);

    let mut visited: HashSet<(String, String)> = HashSet::new();
    while let Some((fname, var, depth)) = queue.pop_front() {
        if !visited.insert((fname.clone(), var.clone())) {
            continue;
        }
        ddg.visits += 1;
        let f = prog.function(&fname).expect("queued functions exist");
        let frag = cache.get_or_compute(prog, f, &var);
        ddg.nodes.extend(frag.nodes.iter().cloned());
        ddg.edges.extend(frag.edges.iter().cloned());
        ddg.recorded_conds.extend(frag.conds.iter().cloned());
        ddg.unknown_source |= frag.unknown;
        for label in &frag.labels {
            visited.insert((fname.clone(), label.clone()));
        }
        for &pi in &frag.params {
            let param_node = DdgNode::FnArg {
                function: fname.clone(),
                index: pi,
            };
            let mut fed = false;
            if fname == api_fn {
                let src = DdgNode::ApiArg {
                    api: api.to_string(),
                    index: pi,
                };
                ddg.nodes.insert(src.clone());
                ddg.edges.insert(DdgEdge {
                    from: src,
                    to: param_node.clone(),
                    operand: None,
                    kind: EdgeKind::Data,
                });
                fed = true;
            }
            let callsites: BTreeSet<&SiteId> = graph
                .callsites_of(&fname)
                .filter(|s| reach.contains(&s.function))
                .collect();
            for cs in callsites {
                fed = true;
                if depth + 1 > config.max_depth {
                    ddg.unknown_source = true;
                    continue;
                }
                let caller = prog.function(&cs.function).expect("graph nodes exist");
                let args = match cs.stmt.and_then(|i| caller.statement(i)) {
                    Some(Stmt::Call { args, .. }) | Some(Stmt::IndirectCall { args, .. }) => args,
                    _ => {
                        ddg.unknown_source = true;
                        continue;
                    }
                };
                match args.get(pi) {
                    Some(a) => link(&mut ddg, caller, a, param_node.clone(), depth + 1, &mut queue),
                    None => ddg.unknown_source = true,
                }
            }
            if !fed {
                ddg.unknown_source = true;
            }
        }
    }
    Ok(ddg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::callgraph::build_callgraph;
    use crate::ir::parse_ir;
    use crate::sysident::identify_syscall_functions;

    fn setup(src: &str) -> (IrProgram, CallGraph, Vec<SyscallSite>) {
        let p = parse_ir(src).unwrap();
        let g = build_callgraph(&p).unwrap();
        let (sites, _) = identify_syscall_functions(&p, &BTreeSet::new(), None);
        (p, g, sites)
    }

    #[test]
    fn constant_argument() {
        let (p, g, s) = setup("func f()\nbb a:\n  syscall(close, 2)\n  return\nendfunc\n");
        let d = backward_taint("f", &s[0], 0, &p, &g, &TaintCache::new(), &TaintConfig::default()).unwrap();
        let c = classify_sources(&d);
        assert_eq!(c.kind, SourceKind::AllDetermined);
        assert_eq!(
            c.sources,
            vec![DdgNode::Constant {
                value: DomainValue::Int(2)
            }]
        );
    }

    #[test]
    fn parameter_becomes_api_arg() {
        let (p, g, s) = setup(
            "func inner(x:int)\nbb a:\n  syscall(close, x)\n  return\nendfunc\nfunc api(y:int)\nbb a:\n  call inner(y)\n  return\nendfunc\n",
        );
        let d = backward_taint("api", &s[0], 0, &p, &g, &TaintCache::new(), &TaintConfig::default()).unwrap();
        let c = classify_sources(&d);
        assert_eq!(c.kind, SourceKind::AllDetermined);
        assert_eq!(
            c.sources,
            vec![DdgNode::ApiArg {
                api: "api".into(),
                index: 0
            }]
        );
    }

    #[test]
    fn object_field_source() {
        let (p, g, s) = setup(
            "global cfg:obj(config_t)\nfunc f()\nbb a:\n  v = cfg.flags\n  syscall(close, v)\n  return\nendfunc\n",
        );
        let d = backward_taint("f", &s[0], 0, &p, &g, &TaintCache::new(), &TaintConfig::default()).unwrap();
        let c = classify_sources(&d);
        assert_eq!(c.kind, SourceKind::HasObjectField);
        assert!(c.sources.contains(&DdgNode::ObjectField {
            ty: "config_t".into(),
            field: "flags".into()
        }));
    }

    #[test]
    fn pointer_argument_is_rejected() {
        let (p, g, s) = setup("func f(path:str)\nbb a:\n  syscall(unlink, path)\n  return\nendfunc\n");
        let err = backward_taint("f", &s[0], 0, &p, &g, &TaintCache::new(), &TaintConfig::default()).unwrap_err();
        assert!(matches!(err, Error::PointerArgument { index: 0, .. }));
    }

    #[test]
    fn depth_bound_degrades_to_unknown() {
        let (p, g, s) = setup(
            "func inner(x:int)\nbb a:\n  syscall(close, x)\n  return\nendfunc\nfunc api(y:int)\nbb a:\n  call inner(y)\n  return\nendfunc\n",
        );
        let cfg = TaintConfig { max_depth: 0 };
        let d = backward_taint("api", &s[0], 0, &p, &g, &TaintCache::new(), &cfg).unwrap();
        assert!(d.unknown_source);
        assert_eq!(classify_sources(&d).kind, SourceKind::Unknown);
    }

    #[test]
    fn loops_terminate_and_record_conditions() {
        let (p, g, s) = setup(
            "func f(n:int)\nbb a:\n  i = 0\n  goto h\nbb h:\n  if (i < n) goto body else done\nbb body:\n  i = i + 1\n  goto h\nbb done:\n  syscall(close, i)\n  return\nendfunc\n",
        );
        let cache = TaintCache::new();
        let d = backward_taint("f", &s[0], 0, &p, &g, &cache, &TaintConfig::default()).unwrap();
        assert!(d.recorded_conds.contains(&SiteId::new("f", 2)));
        assert!(d.visits <= p.functions.len() * 2);
        let warm = backward_taint("f", &s[0], 0, &p, &g, &cache, &TaintConfig::default()).unwrap();
        assert_eq!(d, warm);
        assert!(cache.hits() > 0);
    }
}
