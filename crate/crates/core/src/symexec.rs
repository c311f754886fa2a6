// SPDX-License-Identifier: Apache-2.0

//! Path-forking symbolic execution over statement CFGs, and composition of
//! the resulting summaries into API-argument -> syscall-argument mappings.
//!
//! Each parameter `j` starts as the symbol `Sym(j)`. Branches on symbolic
//! values fork the path and record the constraint; a branch whose
//! constraints no value of the enumerated input domain satisfies is pruned.
//! Output slots (the return value and every argument passed at a call or
//! syscall) are then tabulated per input value.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, RwLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::callgraph::CallGraph;
use crate::domain::{DomainValue, ParamDomains};
use crate::ir::interp::char_at;
use crate::ir::{Atom, BinOp, CmpOp, Expr, IrFunction, IrProgram, Stmt};
use crate::taint::{classify_sources, DataDependencyGraph, DdgNode, EdgeKind, SourceKind};

pub type ValueTable = BTreeMap<DomainValue, i64>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SymValue {
    Sym(usize),
    Const(i64),
    Str(String),
    /// Byte `index` of string argument `arg`.
    CharAt(usize, i64),
    Binop(BinOp, Box<SymValue>, Box<SymValue>),
    /// A callee's tabulated return value applied to an input.
    Apply(Arc<ValueTable>, Box<SymValue>),
    Undef,
}

impl SymValue {
    fn depth(&self) -> usize {
        match self {
            SymValue::Binop(_, a, b) => 1 + a.depth().max(b.depth()),
            SymValue::Apply(_, a) => 1 + a.depth(),
            _ => 0,
        }
    }

    fn has_undef(&self) -> bool {
        match self {
            SymValue::Undef => true,
            SymValue::Binop(_, a, b) => a.has_undef() || b.has_undef(),
            SymValue::Apply(_, a) => a.has_undef(),
            _ => false,
        }
    }

    fn symbols(&self, out: &mut BTreeSet<usize>) {
        match self {
            SymValue::Sym(j) | SymValue::CharAt(j, _) => {
                out.insert(*j);
            }
            SymValue::Binop(_, a, b) => {
                a.symbols(out);
                b.symbols(out);
            }
            SymValue::Apply(_, a) => a.symbols(out),
            _ => {}
        }
    }

    /// Concrete value under an assignment of the symbols; `None` when the
    /// value is undefined or not an integer/string.
    pub fn eval(&self, env: &BTreeMap<usize, DomainValue>) -> Option<DomainValue> {
        Some(match self {
            SymValue::Sym(j) => env.get(j)?.clone(),
            SymValue::Const(v) => DomainValue::Int(*v),
            SymValue::Str(s) => DomainValue::Str(s.clone()),
            SymValue::CharAt(j, i) => match env.get(j)? {
                DomainValue::Str(s) => DomainValue::Int(char_at(s, *i)),
                DomainValue::Int(_) => return None,
            },
            SymValue::Binop(op, a, b) => match (a.eval(env)?, b.eval(env)?) {
                (DomainValue::Int(x), DomainValue::Int(y)) => DomainValue::Int(op.apply(x, y)),
                _ => return None,
            },
            SymValue::Apply(t, a) => DomainValue::Int(*t.get(&a.eval(env)?)?),
            SymValue::Undef => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constraint {
    pub lhs: SymValue,
    pub op: CmpOp,
    pub rhs: SymValue,
    pub holds: bool,
}

impl Constraint {
    /// `None` when the constraint cannot be decided under `env`.
    fn eval(&self, env: &BTreeMap<usize, DomainValue>) -> Option<bool> {
        match (self.lhs.eval(env)?, self.rhs.eval(env)?) {
            (DomainValue::Int(a), DomainValue::Int(b)) => Some(self.op.eval(a, b) == self.holds),
            _ => None,
        }
    }

    fn symbols(&self, out: &mut BTreeSet<usize>) {
        self.lhs.symbols(out);
        self.rhs.symbols(out);
    }
}

/// Output position tracked by a summary.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Slot {
    Return,
    /// Argument `index` passed by the call or syscall at statement `stmt`.
    CallArg {
        stmt: usize,
        index: usize,
    },
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Slot::Return => f.write_str("return"),
            Slot::CallArg { stmt, index } => write!(f, "#{stmt}:{index}"),
        }
    }
}

impl FromStr for Slot {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "return" {
            return Ok(Slot::Return);
        }
        let bad = || format!("bad slot `{s}`");
        let (stmt, index) = s.strip_prefix('#').and_then(|r| r.split_once(':')).ok_or_else(bad)?;
        Ok(Slot::CallArg {
            stmt: stmt.parse().map_err(|_| bad())?,
            index: index.parse().map_err(|_| bad())?,
        })
    }
}

impl Serialize for Slot {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Slot {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

mod table_pairs {
    use super::ValueTable;
    use crate::domain::DomainValue;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &ValueTable, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(t.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ValueTable, D::Error> {
        Ok(Vec::<(DomainValue, i64)>::deserialize(d)?.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum TableFn {
    Identity,
    Map {
        #[serde(with = "table_pairs")]
        entries: ValueTable,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum Relation {
    DeterminedBy { arg: usize, table: TableFn },
    Constant { value: i64 },
    Undetermined { reason: String },
}

impl Relation {
    fn undetermined(reason: impl Into<String>) -> Self {
        Relation::Undetermined { reason: reason.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgRelationSummary {
    pub function: String,
    pub relations: BTreeMap<Slot, Relation>,
}

impl ArgRelationSummary {
    pub fn returns(&self) -> Option<&Relation> {
        self.relations.get(&Slot::Return)
    }
}

#[derive(Debug, Clone)]
pub struct SymexecConfig {
    pub max_paths: usize,
    /// Statements executed along one path before it is abandoned.
    pub max_steps_per_path: usize,
    pub max_expr_depth: usize,
    /// Cap on enumerated input combinations when checking constraints.
    pub max_combinations: usize,
}

impl Default for SymexecConfig {
    fn default() -> Self {
        SymexecConfig {
            max_paths: 4096,
            max_steps_per_path: 10_000,
            max_expr_depth: 64,
            max_combinations: 4096,
        }
    }
}

/// Enumerated input values per parameter index.
pub type ArgDomains = BTreeMap<usize, BTreeSet<DomainValue>>;

struct PathState {
    pc: usize,
    env: HashMap<String, SymValue>,
    constraints: Vec<Constraint>,
    steps: usize,
}

struct Exec<'a> {
    prog: &'a IrProgram,
    f: &'a IrFunction,
    stmts: Vec<&'a Stmt>,
    block_start: HashMap<&'a str, usize>,
    domains: &'a ArgDomains,
    summaries: &'a BTreeMap<String, Arc<ArgRelationSummary>>,
    config: &'a SymexecConfig,
    outputs: Vec<(Slot, Vec<Constraint>, SymValue)>,
}

impl Exec<'_> {
    fn atom(&self, st: &PathState, a: &Atom) -> SymValue {
        match a {
            Atom::Int(v) => SymValue::Const(*v),
            Atom::Str(s) => SymValue::Str(s.clone()),
            Atom::Var(v) => st.env.get(v).cloned().unwrap_or(SymValue::Undef),
        }
    }

    fn binop(&self, op: BinOp, a: SymValue, b: SymValue) -> SymValue {
        match (&a, &b) {
            (SymValue::Const(x), SymValue::Const(y)) => SymValue::Const(op.apply(*x, *y)),
            _ if a.has_undef() || b.has_undef() => SymValue::Undef,
            _ if 1 + a.depth().max(b.depth()) > self.config.max_expr_depth => SymValue::Undef,
            _ => SymValue::Binop(op, Box::new(a), Box::new(b)),
        }
    }

    fn call_result(&self, callee: &str, args: &[SymValue]) -> SymValue {
        let Some(summary) = self.summaries.get(self.prog.canonical(callee)) else {
            return SymValue::Undef;
        };
        match summary.returns() {
            Some(Relation::Constant { value }) => SymValue::Const(*value),
            Some(Relation::DeterminedBy { arg, table }) => {
                let Some(input) = args.get(*arg).cloned() else {
                    return SymValue::Undef;
                };
                match table {
                    TableFn::Identity => input,
                    TableFn::Map { entries } => match &input {
                        SymValue::Const(v) => entries
                            .get(&DomainValue::Int(*v))
                            .map_or(SymValue::Undef, |o| SymValue::Const(*o)),
                        SymValue::Str(s) => entries
                            .get(&DomainValue::Str(s.clone()))
                            .map_or(SymValue::Undef, |o| SymValue::Const(*o)),
                        SymValue::Undef => SymValue::Undef,
                        _ => SymValue::Apply(Arc::new(entries.clone()), Box::new(input)),
                    },
                }
            }
            _ => SymValue::Undef,
        }
    }

    /// Whether some assignment of the enumerated domains satisfies every
    /// decidable constraint. Undecidable constraints never prune.
    fn satisfiable(&self, constraints: &[Constraint]) -> bool {
        let mut syms = BTreeSet::new();
        for c in constraints {
            c.symbols(&mut syms);
        }
        let syms: Vec<usize> = syms.into_iter().filter(|j| self.domains.contains_key(j)).collect();
        let mut total: usize = 1;
        for j in &syms {
            total = total.saturating_mul(self.domains[j].len());
        }
        if total > self.config.max_combinations {
            return true;
        }
        let mut env = BTreeMap::new();
        self.any_assignment(&syms, &mut env, constraints)
    }

    fn any_assignment(&self, syms: &[usize], env: &mut BTreeMap<usize, DomainValue>, cs: &[Constraint]) -> bool {
        let Some((&j, rest)) = syms.split_first() else {
            return cs.iter().all(|c| c.eval(env) != Some(false));
        };
        for v in &self.domains[&j] {
            env.insert(j, v.clone());
            if self.any_assignment(rest, env, cs) {
                return true;
            }
        }
        env.remove(&j);
        false
    }

    /// Runs every path; `Err` when a budget is exhausted.
    fn run(&mut self) -> Result<(), String> {
        if self.stmts.is_empty() {
            return Ok(());
        }
        let mut env = HashMap::new();
        for (j, p) in self.f.params.iter().enumerate() {
            env.insert(p.name.clone(), SymValue::Sym(j));
        }
        let mut work = vec![PathState {
            pc: 0,
            env,
            constraints: Vec::new(),
            steps: 0,
        }];
        let mut paths = 1usize;
        while let Some(mut st) = work.pop() {
            loop {
                st.steps += 1;
                if st.steps > self.config.max_steps_per_path {
                    return Err("step budget exhausted".into());
                }
                let stmt = self.stmts[st.pc];
                match stmt {
                    Stmt::Assign { lhs, rhs } => {
                        let v = match rhs {
                            Expr::Atom(a) => self.atom(&st, a),
                            Expr::Field { .. } => SymValue::Undef,
                            Expr::Binop { op, lhs, rhs } => {
                                let (a, b) = (self.atom(&st, lhs), self.atom(&st, rhs));
                                self.binop(*op, a, b)
                            }
                            Expr::CharAt { base, index } => match st.env.get(base) {
                                Some(SymValue::Str(s)) => SymValue::Const(char_at(s, *index)),
                                Some(SymValue::Sym(j)) => SymValue::CharAt(*j, *index),
                                _ => SymValue::Undef,
                            },
                        };
                        if let crate::ir::Place::Var(name) = lhs {
                            st.env.insert(name.clone(), v);
                        }
                        st.pc += 1;
                    }
                    Stmt::Call { lhs, callee, args } => {
                        let vals: Vec<SymValue> = args.iter().map(|a| self.atom(&st, a)).collect();
                        self.record_args(&st, &vals);
                        let r = self.call_result(callee, &vals);
                        if let Some(l) = lhs {
                            st.env.insert(l.clone(), r);
                        }
                        st.pc += 1;
                    }
                    Stmt::IndirectCall { lhs, args, .. } => {
                        let vals: Vec<SymValue> = args.iter().map(|a| self.atom(&st, a)).collect();
                        self.record_args(&st, &vals);
                        if let Some(l) = lhs {
                            st.env.insert(l.clone(), SymValue::Undef);
                        }
                        st.pc += 1;
                    }
                    Stmt::Syscall { args, .. } => {
                        let vals: Vec<SymValue> = args.iter().map(|a| self.atom(&st, a)).collect();
                        self.record_args(&st, &vals);
                        st.pc += 1;
                    }
                    Stmt::Return(v) => {
                        let val = match v {
                            Some(a) => self.atom(&st, a),
                            None => SymValue::Undef,
                        };
                        self.outputs.push((Slot::Return, st.constraints.clone(), val));
                        break;
                    }
                    Stmt::Goto(l) => st.pc = self.block_start[l.as_str()],
                    Stmt::Cond {
                        var,
                        op,
                        rhs,
                        then_label,
                        else_label,
                    } => {
                        let a = st.env.get(var).cloned().unwrap_or(SymValue::Undef);
                        let b = self.atom(&st, rhs);
                        if let (SymValue::Const(x), SymValue::Const(y)) = (&a, &b) {
                            let l = if op.eval(*x, *y) { then_label } else { else_label };
                            st.pc = self.block_start[l.as_str()];
                            continue;
                        }
                        let arms = [(then_label, true), (else_label, false)];
                        let mut forks = Vec::new();
                        for (label, holds) in arms {
                            let mut cs = st.constraints.clone();
                            cs.push(Constraint {
                                lhs: a.clone(),
                                op: *op,
                                rhs: b.clone(),
                                holds,
                            });
                            if self.satisfiable(&cs) {
                                forks.push((self.block_start[label.as_str()], cs));
                            }
                        }
                        if !self.fork(&mut st, forks, &mut work, &mut paths)? {
                            break;
                        }
                    }
                    Stmt::Switch {
                        scrutinee,
                        cases,
                        default,
                    } => {
                        let a = st.env.get(scrutinee).cloned().unwrap_or(SymValue::Undef);
                        if let SymValue::Const(x) = a {
                            let l = cases.iter().find(|(k, _)| *k == x).map(|(_, l)| l).unwrap_or(default);
                            st.pc = self.block_start[l.as_str()];
                            continue;
                        }
                        let eq = |k: i64, holds: bool| Constraint {
                            lhs: a.clone(),
                            op: CmpOp::Eq,
                            rhs: SymValue::Const(k),
                            holds,
                        };
                        let mut forks = Vec::new();
                        for (k, label) in cases {
                            let mut cs = st.constraints.clone();
                            cs.push(eq(*k, true));
                            if self.satisfiable(&cs) {
                                forks.push((self.block_start[label.as_str()], cs));
                            }
                        }
                        let mut cs = st.constraints.clone();
                        cs.extend(cases.iter().map(|(k, _)| eq(*k, false)));
                        if self.satisfiable(&cs) {
                            forks.push((self.block_start[default.as_str()], cs));
                        }
                        if !self.fork(&mut st, forks, &mut work, &mut paths)? {
                            break;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Continues `st` on the first fork and queues the rest. Returns false
    /// when every arm was pruned.
    fn fork(
        &self,
        st: &mut PathState,
        mut forks: Vec<(usize, Vec<Constraint>)>,
        work: &mut Vec<PathState>,
        paths: &mut usize,
    ) -> Result<bool, String> {
        if forks.is_empty() {
            return Ok(false);
        }
        *paths += forks.len() - 1;
        if *paths > self.config.max_paths {
            return Err("path budget exhausted".into());
        }
        let (pc, cs) = forks.remove(0);
        for (pc, constraints) in forks {
            work.push(PathState {
                pc,
                env: st.env.clone(),
                constraints,
                steps: st.steps,
            });
        }
        st.pc = pc;
        st.constraints = cs;
        Ok(true)
    }

    fn record_args(&mut self, st: &PathState, vals: &[SymValue]) {
        for (i, v) in vals.iter().enumerate() {
            self.outputs.push((
                Slot::CallArg { stmt: st.pc, index: i },
                st.constraints.clone(),
                v.clone(),
            ));
        }
    }

    fn relation(&self, entries: &[(&Vec<Constraint>, &SymValue)]) -> Relation {
        if entries.iter().any(|(_, v)| v.has_undef()) {
            return Relation::undetermined("depends on an untracked value");
        }
        if let Some((_, SymValue::Const(c))) = entries.first() {
            if entries.iter().all(|(_, v)| **v == SymValue::Const(*c)) {
                return Relation::Constant { value: *c };
            }
        }
        if let Some((_, SymValue::Sym(j))) = entries.first() {
            if entries.iter().all(|(_, v)| **v == SymValue::Sym(*j)) {
                return Relation::DeterminedBy {
                    arg: *j,
                    table: TableFn::Identity,
                };
            }
        }
        let mut syms = BTreeSet::new();
        for (cs, v) in entries {
            v.symbols(&mut syms);
            for c in cs.iter() {
                c.symbols(&mut syms);
            }
        }
        let j = match syms.iter().collect::<Vec<_>>().as_slice() {
            [j] => **j,
            [] => return Relation::undetermined("value differs along paths it cannot tell apart"),
            _ => return Relation::undetermined("depends on more than one argument"),
        };
        let Some(domain) = self.domains.get(&j) else {
            return Relation::undetermined(format!("argument {j} has no input domain"));
        };
        let mut table = ValueTable::new();
        for d in domain {
            let env = BTreeMap::from([(j, d.clone())]);
            let mut out: Option<i64> = None;
            for (cs, v) in entries {
                let mut live = true;
                for c in cs.iter() {
                    match c.eval(&env) {
                        Some(true) => {}
                        Some(false) => {
                            live = false;
                            break;
                        }
                        None => return Relation::undetermined("undecidable branch condition"),
                    }
                }
                if !live {
                    continue;
                }
                let val = match v.eval(&env) {
                    Some(DomainValue::Int(x)) => x,
                    _ => return Relation::undetermined("non-integer output"),
                };
                match out {
                    Some(prev) if prev != val => {
                        return Relation::undetermined("several values for one input");
                    }
                    _ => out = Some(val),
                }
            }
            if let Some(v) = out {
                table.insert(d.clone(), v);
            }
        }
        if table.is_empty() {
            return Relation::undetermined("no input reaches the slot");
        }
        Relation::DeterminedBy {
            arg: j,
            table: TableFn::Map { entries: table },
        }
    }
}

/// Summarises one function given the summaries of its callees.
pub fn symexec_function(
    prog: &IrProgram,
    f: &IrFunction,
    domains: &ArgDomains,
    summaries: &BTreeMap<String, Arc<ArgRelationSummary>>,
    config: &SymexecConfig,
) -> ArgRelationSummary {
    let mut block_start = HashMap::new();
    let mut id = 0;
    for b in &f.blocks {
        block_start.insert(b.label.as_str(), id);
        id += b.stmts.len();
    }
    let mut exec = Exec {
        prog,
        f,
        stmts: f.statements().map(|(_, s)| s).collect(),
        block_start,
        domains,
        summaries,
        config,
        outputs: Vec::new(),
    };
    let outcome = exec.run();
    let mut by_slot: BTreeMap<Slot, Vec<(&Vec<Constraint>, &SymValue)>> = BTreeMap::new();
    for (slot, cs, v) in &exec.outputs {
        by_slot.entry(slot.clone()).or_default().push((cs, v));
    }
    let relations = match outcome {
        Ok(()) => by_slot
            .iter()
            .map(|(slot, entries)| (slot.clone(), exec.relation(entries)))
            .collect(),
        Err(reason) => {
            log::debug!("{}: {reason}", f.name);
            let mut slots: BTreeSet<Slot> = by_slot.keys().cloned().collect();
            if f.returns_value() {
                slots.insert(Slot::Return);
            }
            slots
                .into_iter()
                .map(|s| (s, Relation::undetermined(reason.clone())))
                .collect()
        }
    };
    ArgRelationSummary {
        function: f.name.clone(),
        relations,
    }
}

/// Grow-only summary store shared by concurrent workers.
#[derive(Debug, Default)]
pub struct SummaryCache {
    inner: RwLock<BTreeMap<String, Arc<ArgRelationSummary>>>,
}

impl SummaryCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, f: &str) -> Option<Arc<ArgRelationSummary>> {
        self.inner.read().expect("summary cache poisoned").get(f).cloned()
    }

    fn insert(&self, s: ArgRelationSummary) {
        let mut w = self.inner.write().expect("summary cache poisoned");
        w.entry(s.function.clone()).or_insert_with(|| Arc::new(s));
    }

    pub fn snapshot(&self) -> BTreeMap<String, Arc<ArgRelationSummary>> {
        self.inner.read().expect("summary cache poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("summary cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Strongly connected components of the direct call graph (Tarjan), as a
/// component index per function.
fn components(prog: &IrProgram, graph: &CallGraph) -> (HashMap<String, usize>, Vec<Vec<String>>) {
    let names: Vec<&str> = prog.functions.iter().map(|f| f.name.as_str()).collect();
    let index_of: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let succ: Vec<Vec<usize>> = names
        .iter()
        .map(|n| {
            let mut s: Vec<usize> = graph
                .direct
                .iter()
                .filter(|e| e.caller == *n)
                .filter_map(|e| index_of.get(e.callee.as_str()).copied())
                .collect();
            s.sort_unstable();
            s.dedup();
            s
        })
        .collect();

    struct T<'a> {
        succ: &'a [Vec<usize>],
        index: Vec<Option<usize>>,
        low: Vec<usize>,
        on_stack: Vec<bool>,
        stack: Vec<usize>,
        next: usize,
        comps: Vec<Vec<usize>>,
    }
    fn strong(t: &mut T, v: usize) {
        t.index[v] = Some(t.next);
        t.low[v] = t.next;
        t.next += 1;
        t.stack.push(v);
        t.on_stack[v] = true;
        for i in 0..t.succ[v].len() {
            let w = t.succ[v][i];
            match t.index[w] {
                None => {
                    strong(t, w);
                    t.low[v] = t.low[v].min(t.low[w]);
                }
                Some(iw) if t.on_stack[w] => t.low[v] = t.low[v].min(iw),
                _ => {}
            }
        }
        if Some(t.low[v]) == t.index[v] {
            let mut comp = Vec::new();
            loop {
                let w = t.stack.pop().expect("tarjan stack");
                t.on_stack[w] = false;
                comp.push(w);
                if w == v {
                    break;
                }
            }
            t.comps.push(comp);
        }
    }
    let n = names.len();
    let mut t = T {
        succ: &succ,
        index: vec![None; n],
        low: vec![0; n],
        on_stack: vec![false; n],
        stack: Vec::new(),
        next: 0,
        comps: Vec::new(),
    };
    for v in 0..n {
        if t.index[v].is_none() {
            strong(&mut t, v);
        }
    }
    let mut comp_of = HashMap::new();
    let mut comps = Vec::new();
    for (ci, c) in t.comps.iter().enumerate() {
        let mut members: Vec<String> = c.iter().map(|&i| names[i].to_string()).collect();
        members.sort();
        for m in &members {
            comp_of.insert(m.clone(), ci);
        }
        comps.push(members);
    }
    (comp_of, comps)
}

/// Summarises every function bottom-up in waves: a function runs once all
/// callees outside its own recursive component are summarised. Calls into
/// the same component stay unsummarised (undetermined).
pub fn summarize_all(
    prog: &IrProgram,
    graph: &CallGraph,
    domains: &ParamDomains,
    cache: &SummaryCache,
    config: &SymexecConfig,
) -> BTreeMap<String, Arc<ArgRelationSummary>> {
    let (comp_of, comps) = components(prog, graph);
    // Tarjan emits components callees-first; level = longest callee chain.
    let mut level = vec![0usize; comps.len()];
    for (ci, members) in comps.iter().enumerate() {
        for m in members {
            for e in graph.direct.iter().filter(|e| &e.caller == m) {
                if let Some(&cj) = comp_of.get(&e.callee) {
                    if cj != ci {
                        level[ci] = level[ci].max(level[cj] + 1);
                    }
                }
            }
        }
    }
    let max_level = level.iter().copied().max().unwrap_or(0);
    for l in 0..=max_level {
        let wave: Vec<&IrFunction> = prog
            .functions
            .iter()
            .filter(|f| level[comp_of[&f.name]] == l && cache.get(&f.name).is_none())
            .collect();
        let known = cache.snapshot();
        let done: Vec<ArgRelationSummary> = wave
            .par_iter()
            .map(|f| {
                let arg_domains: ArgDomains = (0..f.params.len())
                    .filter_map(|i| domains.get(&(f.name.clone(), i)).map(|d| (i, d.clone())))
                    .collect();
                let visible: BTreeMap<String, Arc<ArgRelationSummary>> = known
                    .iter()
                    .filter(|(g, _)| comp_of.get(*g) != comp_of.get(&f.name))
                    .map(|(g, s)| (g.clone(), Arc::clone(s)))
                    .collect();
                symexec_function(prog, f, &arg_domains, &visible, config)
            })
            .collect();
        for s in done {
            cache.insert(s);
        }
    }
    cache.snapshot()
}

/// How a syscall argument's value follows from one API argument.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum ValueFn {
    Identity,
    Table {
        #[serde(with = "table_pairs")]
        entries: ValueTable,
    },
    ConstantSet {
        values: BTreeSet<i64>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ArgumentMapping {
    pub api: String,
    /// Absent for constant sets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_arg_index: Option<usize>,
    pub syscall_name: String,
    pub syscall_arg_index: usize,
    pub value_fn: ValueFn,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum AbsVal {
    Ident(usize),
    Table(usize, ValueTable),
    Consts(BTreeSet<i64>),
    Strs(BTreeSet<String>),
}

const MAX_CONSTS: usize = 4096;

fn join(a: AbsVal, b: AbsVal) -> Option<AbsVal> {
    use AbsVal::*;
    match (a, b) {
        (Consts(x), Consts(y)) => Some(Consts(x.union(&y).copied().collect())),
        (Strs(x), Strs(y)) => Some(Strs(x.union(&y).cloned().collect())),
        (a, b) if a == b => Some(a),
        _ => None,
    }
}

fn compose(v: AbsVal, t: &ValueTable) -> Option<AbsVal> {
    Some(match v {
        AbsVal::Consts(s) => AbsVal::Consts(
            s.iter()
                .map(|c| t.get(&DomainValue::Int(*c)).copied())
                .collect::<Option<_>>()?,
        ),
        AbsVal::Strs(s) => AbsVal::Consts(
            s.iter()
                .map(|c| t.get(&DomainValue::Str(c.clone())).copied())
                .collect::<Option<_>>()?,
        ),
        AbsVal::Ident(j) => AbsVal::Table(j, t.clone()),
        AbsVal::Table(j, inner) => AbsVal::Table(
            j,
            inner
                .into_iter()
                .filter_map(|(k, mid)| t.get(&DomainValue::Int(mid)).map(|o| (k, *o)))
                .collect(),
        ),
    })
}

struct Resolver<'a> {
    ddg: &'a DataDependencyGraph,
    summaries: &'a BTreeMap<String, Arc<ArgRelationSummary>>,
    api_domains: &'a ArgDomains,
    memo: HashMap<DdgNode, Option<AbsVal>>,
    active: Vec<DdgNode>,
}

impl Resolver<'_> {
    fn eval(&mut self, node: &DdgNode) -> Option<AbsVal> {
        if let Some(v) = self.memo.get(node) {
            return v.clone();
        }
        if self.active.contains(node) {
            // Values flowing around a loop are not tracked.
            return None;
        }
        self.active.push(node.clone());
        let v = self.eval_uncached(node);
        self.active.pop();
        self.memo.insert(node.clone(), v.clone());
        v
    }

    fn operands(&mut self, node: &DdgNode) -> BTreeMap<usize, Option<AbsVal>> {
        let edges: Vec<(usize, DdgNode)> = self
            .ddg
            .incoming(node)
            .filter(|e| e.kind == EdgeKind::Data)
            .filter_map(|e| e.operand.map(|i| (i, e.from.clone())))
            .collect();
        edges.into_iter().map(|(i, from)| (i, self.eval(&from))).collect()
    }

    fn tabulate(&self, j: usize, f: impl Fn(&DomainValue) -> Option<i64>) -> Option<AbsVal> {
        let dom = self.api_domains.get(&j)?;
        let t: ValueTable = dom.iter().filter_map(|d| f(d).map(|o| (d.clone(), o))).collect();
        (!t.is_empty()).then_some(AbsVal::Table(j, t))
    }

    fn eval_uncached(&mut self, node: &DdgNode) -> Option<AbsVal> {
        match node {
            DdgNode::Constant { value } => Some(match value {
                DomainValue::Int(v) => AbsVal::Consts([*v].into()),
                DomainValue::Str(s) => AbsVal::Strs([s.clone()].into()),
            }),
            DdgNode::ApiArg { index, .. } => Some(AbsVal::Ident(*index)),
            DdgNode::ObjectField { .. } => None,
            DdgNode::SyscallArg { .. } | DdgNode::FnArg { .. } | DdgNode::LocalVar { .. } => {
                let srcs: Vec<DdgNode> = self
                    .ddg
                    .incoming(node)
                    .filter(|e| e.kind == EdgeKind::Data)
                    .map(|e| e.from.clone())
                    .collect();
                let mut acc: Option<AbsVal> = None;
                for s in srcs {
                    let v = self.eval(&s)?;
                    acc = Some(match acc {
                        None => v,
                        Some(a) => join(a, v)?,
                    });
                }
                acc
            }
            DdgNode::Calc { op, .. } => {
                let ops = self.operands(node);
                if let Some(callee) = op.strip_prefix("call:") {
                    let rel = self.summaries.get(callee)?.returns()?.clone();
                    return match rel {
                        Relation::Constant { value } => Some(AbsVal::Consts([value].into())),
                        Relation::DeterminedBy { arg, table } => {
                            let input = ops.get(&arg).cloned().flatten()?;
                            match table {
                                TableFn::Identity => Some(input),
                                TableFn::Map { entries } => compose(input, &entries),
                            }
                        }
                        Relation::Undetermined { .. } => None,
                    };
                }
                if let Some(idx) = op.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                    let idx: i64 = idx.parse().ok()?;
                    return match ops.get(&0).cloned().flatten()? {
                        AbsVal::Strs(s) => Some(AbsVal::Consts(s.iter().map(|x| char_at(x, idx)).collect())),
                        AbsVal::Ident(j) => self.tabulate(j, |d| match d {
                            DomainValue::Str(s) => Some(char_at(s, idx)),
                            DomainValue::Int(_) => None,
                        }),
                        _ => None,
                    };
                }
                let bop = BinOp::from_symbol(op)?;
                let a = ops.get(&0).cloned().flatten()?;
                let b = ops.get(&1).cloned().flatten()?;
                match (a, b) {
                    (AbsVal::Consts(x), AbsVal::Consts(y)) => {
                        if x.len().saturating_mul(y.len()) > MAX_CONSTS {
                            return None;
                        }
                        Some(AbsVal::Consts(
                            x.iter()
                                .flat_map(|p| y.iter().map(move |q| bop.apply(*p, *q)))
                                .collect(),
                        ))
                    }
                    (sym, AbsVal::Consts(c)) | (AbsVal::Consts(c), sym) if c.len() == 1 => {
                        let c = *c.first().expect("one constant");
                        let sym_first = matches!(ops.get(&0), Some(Some(AbsVal::Ident(_) | AbsVal::Table(..))));
                        let apply = |x: i64| if sym_first { bop.apply(x, c) } else { bop.apply(c, x) };
                        match sym {
                            AbsVal::Ident(j) => self.tabulate(j, |d| match d {
                                DomainValue::Int(x) => Some(apply(*x)),
                                DomainValue::Str(_) => None,
                            }),
                            AbsVal::Table(j, t) => {
                                Some(AbsVal::Table(j, t.into_iter().map(|(k, v)| (k, apply(v))).collect()))
                            }
                            _ => None,
                        }
                    }
                    _ => None,
                }
            }
        }
    }
}

/// Composes a fully determined DDG with function summaries into a mapping
/// of one API argument (or constants) onto the syscall argument. `None`
/// leaves the argument unrestricted.
pub fn resolve_arg_mapping(
    ddg: &DataDependencyGraph,
    summaries: &BTreeMap<String, Arc<ArgRelationSummary>>,
    api_domains: &ArgDomains,
    syscall_name: &str,
) -> Option<ArgumentMapping> {
    if classify_sources(ddg).kind != SourceKind::AllDetermined {
        return None;
    }
    let mut r = Resolver {
        ddg,
        summaries,
        api_domains,
        memo: HashMap::new(),
        active: Vec::new(),
    };
    let (api_arg_index, value_fn) = match r.eval(&ddg.root())? {
        AbsVal::Ident(j) => (Some(j), ValueFn::Identity),
        AbsVal::Table(j, t) if !t.is_empty() => (Some(j), ValueFn::Table { entries: t }),
        AbsVal::Consts(s) if !s.is_empty() => (None, ValueFn::ConstantSet { values: s }),
        _ => return None,
    };
    Some(ArgumentMapping {
        api: ddg.api.clone(),
        api_arg_index,
        syscall_name: syscall_name.to_string(),
        syscall_arg_index: ddg.arg_index,
        value_fn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_ir;

    fn summary(src: &str, name: &str, domains: ArgDomains) -> ArgRelationSummary {
        let p = parse_ir(src).unwrap();
        symexec_function(
            &p,
            p.function(name).unwrap(),
            &domains,
            &BTreeMap::new(),
            &SymexecConfig::default(),
        )
    }

    fn strs(v: &[&str]) -> BTreeSet<DomainValue> {
        v.iter().map(|s| DomainValue::Str(s.to_string())).collect()
    }

    #[test]
    fn identity_return() {
        let s = summary("func f(x:int)\nbb a:\n  return x\nendfunc\n", "f", ArgDomains::new());
        assert_eq!(
            s.returns(),
            Some(&Relation::DeterminedBy {
                arg: 0,
                table: TableFn::Identity
            })
        );
    }

    #[test]
    fn global_value_is_undetermined() {
        let s = summary(
            "global cfg:obj(c)\nfunc f()\nbb a:\n  v = cfg.x\n  return v\nendfunc\n",
            "f",
            ArgDomains::new(),
        );
        assert!(matches!(s.returns(), Some(Relation::Undetermined { .. })));
    }

    #[test]
    fn string_to_flag_switch() {
        let src = "func m(mode:str)\nbb a:\n  c = mode[0]\n  switch (c) { 'r': r, 'w': w, default: bad }\nbb r:\n  return 0\nbb w:\n  return 577\nbb bad:\n  return -1\nendfunc\n";
        let s = summary(src, "m", [(0, strs(&["r", "w"]))].into());
        let want: ValueTable = [(DomainValue::Str("r".into()), 0), (DomainValue::Str("w".into()), 577)].into();
        assert_eq!(
            s.returns(),
            Some(&Relation::DeterminedBy {
                arg: 0,
                table: TableFn::Map { entries: want }
            })
        );
    }

    #[test]
    fn path_budget_degrades() {
        let src = "func f(n:int)\nbb a:\n  i = 0\n  goto h\nbb h:\n  if (i < n) goto b else d\nbb b:\n  i = i + 1\n  goto h\nbb d:\n  return i\nendfunc\n";
        let p = parse_ir(src).unwrap();
        let cfg = SymexecConfig {
            max_paths: 8,
            ..SymexecConfig::default()
        };
        let s = symexec_function(&p, p.function("f").unwrap(), &ArgDomains::new(), &BTreeMap::new(), &cfg);
        assert!(matches!(s.returns(), Some(Relation::Undetermined { .. })));
    }

    #[test]
    fn slot_text_round_trips() {
        for s in [Slot::Return, Slot::CallArg { stmt: 3, index: 1 }] {
            assert_eq!(s.to_string().parse::<Slot>().unwrap(), s);
        }
    }

    #[test]
    fn value_fn_json_round_trips() {
        let v = ValueFn::Table {
            entries: [(DomainValue::Str("r".into()), 0), (DomainValue::Int(3), 9)].into(),
        };
        let text = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<ValueFn>(&text).unwrap(), v);
    }
}
