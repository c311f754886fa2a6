// SPDX-License-Identifier: Apache-2.0

//! Concrete interpreter for the library IR.
//!
//! Runs API functions on concrete inputs and records every syscall the run
//! would issue. Ground-truth traces for the fixture programs come from here,
//! and so do the oracles that check the static analyses.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Atom, Expr, IrFunction, IrProgram, Place, SemType, Stmt};
use crate::policy::SyscallEvent;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Int(i64),
    Str(String),
    Func(String),
    Obj(usize),
    /// A value the interpreter does not model (pointers, extern results).
    Opaque,
}

impl Value {
    fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }
}

impl From<&RunArg> for Value {
    fn from(a: &RunArg) -> Self {
        match a {
            RunArg::Int(v) => Value::Int(*v),
            RunArg::Str(s) => Value::Str(s.clone()),
            RunArg::Null => Value::Opaque,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InterpError {
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("{function}: branch on a value the interpreter cannot decide")]
    NonConcreteBranch { function: String },
    #[error("{function}: indirect call through a non-function value")]
    BadIndirectTarget { function: String },
    #[error("{function}: syscall number is not concrete")]
    NonConcreteSyscall { function: String },
    #[error("step budget exhausted")]
    StepLimit,
    #[error("call depth exceeded")]
    DepthLimit,
}

#[derive(Debug, Clone)]
pub struct InterpConfig {
    /// Value every syscall returns.
    pub syscall_result: i64,
    pub max_steps: usize,
    pub max_depth: usize,
}

impl Default for InterpConfig {
    fn default() -> Self {
        InterpConfig {
            syscall_result: 3,
            max_steps: 100_000,
            max_depth: 64,
        }
    }
}

pub struct Interpreter<'p> {
    prog: &'p IrProgram,
    macros: &'p BTreeSet<String>,
    config: InterpConfig,
    globals: HashMap<String, Value>,
    heap: HashMap<(usize, String), Value>,
    next_obj: usize,
    steps: usize,
    events: Vec<SyscallEvent>,
    edges: BTreeSet<(String, String)>,
}

impl<'p> Interpreter<'p> {
    pub fn new(prog: &'p IrProgram, macros: &'p BTreeSet<String>) -> Self {
        Self::with_config(prog, macros, InterpConfig::default())
    }

    pub fn with_config(prog: &'p IrProgram, macros: &'p BTreeSet<String>, config: InterpConfig) -> Self {
        let mut next_obj = 0;
        let mut globals = HashMap::new();
        for (name, ty) in &prog.globals {
            let v = match ty {
                SemType::Object(_) => {
                    next_obj += 1;
                    Value::Obj(next_obj - 1)
                }
                SemType::Int => Value::Int(0),
                _ => Value::Opaque,
            };
            globals.insert(name.clone(), v);
        }
        Interpreter {
            prog,
            macros,
            config,
            globals,
            heap: HashMap::new(),
            next_obj,
            steps: 0,
            events: Vec::new(),
            edges: BTreeSet::new(),
        }
    }

    /// Syscalls issued so far, in order.
    pub fn events(&self) -> &[SyscallEvent] {
        &self.events
    }

    pub fn take_events(&mut self) -> Vec<SyscallEvent> {
        std::mem::take(&mut self.events)
    }

    /// Every (caller, callee) pair between defined functions seen so far.
    pub fn observed_edges(&self) -> &BTreeSet<(String, String)> {
        &self.edges
    }

    /// Records a syscall issued directly by the program, bypassing the library.
    pub fn direct_syscall(&mut self, name: &str, args: &[Value]) {
        self.events
            .push(SyscallEvent::named(name, args.iter().map(Value::as_int).collect()));
    }

    pub fn call(&mut self, name: &str, args: Vec<Value>) -> Result<Value, InterpError> {
        self.steps = 0;
        self.invoke(name, args, 0)
    }

    fn invoke(&mut self, name: &str, args: Vec<Value>, depth: usize) -> Result<Value, InterpError> {
        if depth > self.config.max_depth {
            return Err(InterpError::DepthLimit);
        }
        let canonical = self.prog.canonical(name).to_string();
        if self.macros.contains(&canonical) {
            return self.macro_syscall(&canonical, &args);
        }
        let Some(func) = self.prog.function(&canonical) else {
            if self.prog.is_extern(&canonical) {
                return Ok(Value::Opaque);
            }
            return Err(InterpError::UnknownFunction(canonical));
        };
        if let Some(sys) = self.prog.wrappers.get(&canonical) {
            let ints = args.iter().map(Value::as_int).collect();
            self.events.push(SyscallEvent::named(sys, ints));
            if func.blocks.is_empty() {
                return Ok(Value::Int(self.config.syscall_result));
            }
        }
        self.run_body(func, args, depth)
    }

    fn macro_syscall(&mut self, macro_name: &str, args: &[Value]) -> Result<Value, InterpError> {
        // First argument already evaluated: Func/Str forms carry the name.
        let (first, rest) = args.split_first().ok_or_else(|| InterpError::NonConcreteSyscall {
            function: macro_name.to_string(),
        })?;
        let ints = rest.iter().map(Value::as_int).collect();
        let ev = match first {
            Value::Int(n) => SyscallEvent::numbered(*n, ints),
            Value::Str(s) | Value::Func(s) => SyscallEvent::named(s, ints),
            _ => {
                return Err(InterpError::NonConcreteSyscall {
                    function: macro_name.to_string(),
                })
            }
        };
        self.events.push(ev);
        Ok(Value::Int(self.config.syscall_result))
    }

    fn run_body(&mut self, func: &IrFunction, args: Vec<Value>, depth: usize) -> Result<Value, InterpError> {
        if func.blocks.is_empty() {
            return Ok(Value::Opaque);
        }
        let mut locals: HashMap<String, Value> = HashMap::new();
        for (p, v) in func.params.iter().zip(args) {
            locals.insert(p.name.clone(), v);
        }
        let stmts: Vec<&Stmt> = func.statements().map(|(_, s)| s).collect();
        let mut block_start = HashMap::new();
        let mut id = 0;
        for b in &func.blocks {
            block_start.insert(b.label.as_str(), id);
            id += b.stmts.len();
        }

        let mut pc = 0;
        loop {
            self.steps += 1;
            if self.steps > self.config.max_steps {
                return Err(InterpError::StepLimit);
            }
            let stmt = stmts[pc];
            match stmt {
                Stmt::Assign { lhs, rhs } => {
                    let v = self.eval_expr(func, &locals, rhs);
                    match lhs {
                        Place::Var(name) => {
                            if locals.contains_key(name) || !self.globals.contains_key(name) {
                                locals.insert(name.clone(), v);
                            } else {
                                self.globals.insert(name.clone(), v);
                            }
                        }
                        Place::Field { base, field } => {
                            if let Value::Obj(id) = self.lookup(func, &locals, base) {
                                self.heap.insert((id, field.clone()), v);
                            }
                        }
                    }
                    pc += 1;
                }
                Stmt::Call { lhs, callee, args } => {
                    let vals = self.call_args(func, &locals, callee, args);
                    let callee_c = self.prog.canonical(callee).to_string();
                    if self.prog.function(&callee_c).is_some() {
                        self.edges.insert((func.name.clone(), callee_c.clone()));
                    }
                    let r = self.invoke(&callee_c, vals, depth + 1)?;
                    if let Some(l) = lhs {
                        locals.insert(l.clone(), r);
                    }
                    pc += 1;
                }
                Stmt::IndirectCall { lhs, target, args, .. } => {
                    let Value::Func(callee) = self.lookup(func, &locals, target) else {
                        return Err(InterpError::BadIndirectTarget {
                            function: func.name.clone(),
                        });
                    };
                    let vals = args.iter().map(|a| self.eval_atom(func, &locals, a)).collect();
                    let callee_c = self.prog.canonical(&callee).to_string();
                    self.edges.insert((func.name.clone(), callee_c.clone()));
                    let r = self.invoke(&callee_c, vals, depth + 1)?;
                    if let Some(l) = lhs {
                        locals.insert(l.clone(), r);
                    }
                    pc += 1;
                }
                Stmt::Cond {
                    var,
                    op,
                    rhs,
                    then_label,
                    else_label,
                } => {
                    let a = self.lookup(func, &locals, var).as_int();
                    let b = self.eval_atom(func, &locals, rhs).as_int();
                    let (Some(a), Some(b)) = (a, b) else {
                        return Err(InterpError::NonConcreteBranch {
                            function: func.name.clone(),
                        });
                    };
                    let label = if op.eval(a, b) { then_label } else { else_label };
                    pc = block_start[label.as_str()];
                }
                Stmt::Switch {
                    scrutinee,
                    cases,
                    default,
                } => {
                    let Some(v) = self.lookup(func, &locals, scrutinee).as_int() else {
                        return Err(InterpError::NonConcreteBranch {
                            function: func.name.clone(),
                        });
                    };
                    let label = cases.iter().find(|(k, _)| *k == v).map(|(_, l)| l).unwrap_or(default);
                    pc = block_start[label.as_str()];
                }
                Stmt::Goto(label) => pc = block_start[label.as_str()],
                Stmt::Return(v) => {
                    return Ok(match v {
                        Some(a) => self.eval_atom(func, &locals, a),
                        None => Value::Opaque,
                    });
                }
                Stmt::Syscall { nr, args } => {
                    let ints = args.iter().map(|a| self.eval_atom(func, &locals, a).as_int()).collect();
                    let ev = match self.syscall_number(func, &locals, nr) {
                        Some(Ok(n)) => SyscallEvent::numbered(n, ints),
                        Some(Err(name)) => SyscallEvent::named(&name, ints),
                        None => {
                            return Err(InterpError::NonConcreteSyscall {
                                function: func.name.clone(),
                            })
                        }
                    };
                    self.events.push(ev);
                    pc += 1;
                }
            }
        }
    }

    /// Arguments of a direct call; macro calls keep their first argument as a name.
    fn call_args(&self, func: &IrFunction, locals: &HashMap<String, Value>, callee: &str, args: &[Atom]) -> Vec<Value> {
        let is_macro = self.macros.contains(self.prog.canonical(callee));
        args.iter()
            .enumerate()
            .map(|(i, a)| {
                if is_macro && i == 0 {
                    match self.syscall_number(func, locals, a) {
                        Some(Ok(n)) => Value::Int(n),
                        Some(Err(name)) => Value::Str(name),
                        None => Value::Opaque,
                    }
                } else {
                    self.eval_atom(func, locals, a)
                }
            })
            .collect()
    }

    /// `Ok(number)` for a concrete number, `Err(name)` for a symbolic name.
    fn syscall_number(
        &self,
        func: &IrFunction,
        locals: &HashMap<String, Value>,
        nr: &Atom,
    ) -> Option<Result<i64, String>> {
        match nr {
            Atom::Int(n) => Some(Ok(*n)),
            Atom::Str(_) => None,
            Atom::Var(v) => {
                if let Some(name) = v.strip_prefix("__NR_") {
                    return Some(Err(name.to_string()));
                }
                if locals.contains_key(v) || func.param_index(v).is_some() || self.globals.contains_key(v) {
                    return self.lookup(func, locals, v).as_int().map(Ok);
                }
                Some(Err(v.clone()))
            }
        }
    }

    fn lookup(&self, _func: &IrFunction, locals: &HashMap<String, Value>, name: &str) -> Value {
        if let Some(v) = locals.get(name) {
            return v.clone();
        }
        if let Some(v) = self.globals.get(name) {
            return v.clone();
        }
        if self.prog.is_function(name) {
            return Value::Func(self.prog.canonical(name).to_string());
        }
        Value::Opaque
    }

    fn eval_atom(&self, func: &IrFunction, locals: &HashMap<String, Value>, a: &Atom) -> Value {
        match a {
            Atom::Int(v) => Value::Int(*v),
            Atom::Str(s) => Value::Str(s.clone()),
            Atom::Var(v) => self.lookup(func, locals, v),
        }
    }

    fn eval_expr(&mut self, func: &IrFunction, locals: &HashMap<String, Value>, e: &Expr) -> Value {
        match e {
            Expr::Atom(a) => self.eval_atom(func, locals, a),
            Expr::Field { base, field } => match self.lookup(func, locals, base) {
                Value::Obj(id) => self.heap.get(&(id, field.clone())).cloned().unwrap_or(Value::Int(0)),
                _ => Value::Opaque,
            },
            Expr::Binop { op, lhs, rhs } => {
                match (self.eval_atom(func, locals, lhs), self.eval_atom(func, locals, rhs)) {
                    (Value::Int(a), Value::Int(b)) => Value::Int(op.apply(a, b)),
                    _ => Value::Opaque,
                }
            }
            Expr::CharAt { base, index } => match self.lookup(func, locals, base) {
                Value::Str(s) => Value::Int(char_at(&s, *index)),
                _ => Value::Opaque,
            },
        }
    }

    /// Allocates a fresh object, for callers that pass structures in.
    pub fn new_object(&mut self) -> Value {
        self.next_obj += 1;
        Value::Obj(self.next_obj - 1)
    }
}

/// Byte at `index`, or 0 past the end (the terminating NUL).
pub fn char_at(s: &str, index: i64) -> i64 {
    if index < 0 {
        return 0;
    }
    s.as_bytes().get(index as usize).map(|&b| b as i64).unwrap_or(0)
}

/// One concrete argument in a program run description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RunArg {
    Int(i64),
    Str(String),
    Null,
}

/// One step of a program's ground-truth behaviour.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RunStep {
    Api { api: String, args: Vec<RunArg> },
    Syscall { syscall: String, args: Vec<RunArg> },
}

/// Parses a run description: a JSON array of API calls and direct syscalls.
pub fn parse_run(text: &str) -> crate::Result<Vec<RunStep>> {
    serde_json::from_str(text).map_err(|e| crate::Error::Schema(e.to_string()))
}

/// Executes a run description and returns the syscalls it issues.
pub fn ground_truth_trace(
    prog: &IrProgram,
    macros: &BTreeSet<String>,
    steps: &[RunStep],
) -> Result<Vec<SyscallEvent>, InterpError> {
    let mut interp = Interpreter::new(prog, macros);
    for step in steps {
        match step {
            RunStep::Api { api, args } => {
                interp.call(api, args.iter().map(Value::from).collect())?;
            }
            RunStep::Syscall { syscall, args } => {
                let vals: Vec<Value> = args.iter().map(Value::from).collect();
                interp.direct_syscall(syscall, &vals);
            }
        }
    }
    Ok(interp.take_events())
}
