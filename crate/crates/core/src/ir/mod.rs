// SPDX-License-Identifier: Apache-2.0

//! In-memory model of the library's intermediate representation.
//!
//! The textual form is line oriented, one construct per line:
//!
//! ```text
//! # comment
//! alias: open64 -> __libc_open
//! extern __syscall_cancel
//! global cfg:obj(config_t)
//! func fopen(path:str, mode:str)
//! bb entry:
//!   flags = call __open_flags_of_mode(mode)
//!   if (flags < 0) goto fail else go
//! bb go:
//!   fd = call __libc_openat(-100, path, flags, 438)
//!   return fd
//! bb fail:
//!   return 0
//! endfunc
//! ```
//!
//! Statement forms: `x = <expr>`, `obj.field = <atom>`, `[x =] call f(args)`,
//! `[x =] icall f [from Type](args)`, `if (a op b) goto l1 else l2`,
//! `switch (v) { c: l, ..., default: l }`, `goto l`, `syscall(nr, args)` and
//! `return [atom]`. Expressions are three-address: an atom, `a op b`,
//! `s[i]` or `obj.field`. Atoms are integers (decimal, hex or negative), char
//! literals, string literals or identifiers.

pub(crate) mod cfg;
pub mod interp;
mod parse;
mod print;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use cfg::{build_function_cfg, StatementCfg};
pub use parse::{canonicalize_aliases, parse_alias_graph, parse_api_list, parse_ir, parse_wrapper_list};
pub use print::serialize_ir;

/// Semantic type tag of a parameter or global.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SemType {
    Int,
    Pointer,
    String,
    Object(String),
    FunctionPointer,
}

impl SemType {
    /// Values of this type are addresses the kernel filter cannot inspect.
    pub fn is_pointer(&self) -> bool {
        !matches!(self, SemType::Int)
    }
}

impl fmt::Display for SemType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SemType::Int => f.write_str("int"),
            SemType::Pointer => f.write_str("ptr"),
            SemType::String => f.write_str("str"),
            SemType::Object(t) => write!(f, "obj({t})"),
            SemType::FunctionPointer => f.write_str("fnptr"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub ty: SemType,
}

/// Leaf operand of a statement.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Atom {
    Int(i64),
    Str(String),
    /// A parameter, local, global or function name.
    Var(String),
}

impl Atom {
    pub fn as_var(&self) -> Option<&str> {
        match self {
            Atom::Var(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Shl,
    Shr,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::And => "&",
            BinOp::Or => "|",
            BinOp::Xor => "^",
            BinOp::Shl => "<<",
            BinOp::Shr => ">>",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        Some(match s {
            "+" => BinOp::Add,
            "-" => BinOp::Sub,
            "*" => BinOp::Mul,
            "&" => BinOp::And,
            "|" => BinOp::Or,
            "^" => BinOp::Xor,
            "<<" => BinOp::Shl,
            ">>" => BinOp::Shr,
            _ => return None,
        })
    }

    pub fn apply(self, a: i64, b: i64) -> i64 {
        match self {
            BinOp::Add => a.wrapping_add(b),
            BinOp::Sub => a.wrapping_sub(b),
            BinOp::Mul => a.wrapping_mul(b),
            BinOp::And => a & b,
            BinOp::Or => a | b,
            BinOp::Xor => a ^ b,
            BinOp::Shl => a.wrapping_shl(b as u32),
            BinOp::Shr => a.wrapping_shr(b as u32),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        Some(match s {
            "==" => CmpOp::Eq,
            "!=" => CmpOp::Ne,
            "<" => CmpOp::Lt,
            "<=" => CmpOp::Le,
            ">" => CmpOp::Gt,
            ">=" => CmpOp::Ge,
            _ => return None,
        })
    }

    pub fn eval(self, a: i64, b: i64) -> bool {
        match self {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }
    }
}

/// Right-hand side of an assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Expr {
    Atom(Atom),
    Field { base: String, field: String },
    Binop { op: BinOp, lhs: Atom, rhs: Atom },
    CharAt { base: String, index: i64 },
}

/// Assignment target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Place {
    Var(String),
    Field { base: String, field: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stmt {
    Assign {
        lhs: Place,
        rhs: Expr,
    },
    Call {
        lhs: Option<String>,
        callee: String,
        args: Vec<Atom>,
    },
    IndirectCall {
        lhs: Option<String>,
        target: String,
        from_type: Option<String>,
        args: Vec<Atom>,
    },
    Cond {
        var: String,
        op: CmpOp,
        rhs: Atom,
        then_label: String,
        else_label: String,
    },
    Switch {
        scrutinee: String,
        cases: Vec<(i64, String)>,
        default: String,
    },
    Goto(String),
    Return(Option<Atom>),
    /// Inline-assembly syscall: number expression plus up to six arguments.
    Syscall {
        nr: Atom,
        args: Vec<Atom>,
    },
}

impl Stmt {
    /// Terminators end a block and never fall through.
    pub fn is_terminator(&self) -> bool {
        matches!(
            self,
            Stmt::Cond { .. } | Stmt::Switch { .. } | Stmt::Goto(_) | Stmt::Return(_)
        )
    }

    pub fn jump_targets(&self) -> Vec<&str> {
        match self {
            Stmt::Cond {
                then_label, else_label, ..
            } => vec![then_label, else_label],
            Stmt::Switch { cases, default, .. } => cases
                .iter()
                .map(|(_, l)| l.as_str())
                .chain(std::iter::once(default.as_str()))
                .collect(),
            Stmt::Goto(l) => vec![l],
            _ => Vec::new(),
        }
    }

    /// Variable defined by this statement, if any.
    pub fn defined_var(&self) -> Option<&str> {
        match self {
            Stmt::Assign { lhs: Place::Var(v), .. } => Some(v),
            Stmt::Call { lhs, .. } | Stmt::IndirectCall { lhs, .. } => lhs.as_deref(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasicBlock {
    pub label: String,
    pub stmts: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IrFunction {
    pub name: String,
    pub params: Vec<Param>,
    pub blocks: Vec<BasicBlock>,
    #[serde(default)]
    pub is_address_taken_candidate: bool,
}

impl IrFunction {
    /// Statements with their positional ids, in block order.
    pub fn statements(&self) -> impl Iterator<Item = (usize, &Stmt)> {
        self.blocks.iter().flat_map(|b| b.stmts.iter()).enumerate()
    }

    pub fn statement(&self, id: usize) -> Option<&Stmt> {
        self.statements().nth(id).map(|(_, s)| s)
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Whether any `return` in the body carries a value.
    pub fn returns_value(&self) -> bool {
        self.statements().any(|(_, s)| matches!(s, Stmt::Return(Some(_))))
    }
}

/// Identifies one statement of one function.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SiteId {
    pub function: String,
    /// `None` marks the synthetic entry site of a wrapper function.
    pub stmt: Option<usize>,
}

impl SiteId {
    pub fn new(function: impl Into<String>, stmt: usize) -> Self {
        SiteId {
            function: function.into(),
            stmt: Some(stmt),
        }
    }

    pub fn entry(function: impl Into<String>) -> Self {
        SiteId {
            function: function.into(),
            stmt: None,
        }
    }
}

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.stmt {
            Some(id) => write!(f, "{}#{}", self.function, id),
            None => write!(f, "{}#entry", self.function),
        }
    }
}

impl std::str::FromStr for SiteId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (function, stmt) = s.rsplit_once('#').ok_or_else(|| format!("site `{s}` lacks `#`"))?;
        let stmt = match stmt {
            "entry" => None,
            n => Some(n.parse().map_err(|_| format!("bad statement id in `{s}`"))?),
        };
        Ok(SiteId {
            function: function.to_string(),
            stmt,
        })
    }
}

impl Serialize for SiteId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SiteId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A parsed library: functions, aliases and the API/wrapper lists.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IrProgram {
    pub functions: Vec<IrFunction>,
    /// alias -> canonical name, chains already collapsed.
    pub aliases: BTreeMap<String, String>,
    pub externs: BTreeSet<String>,
    pub globals: BTreeMap<String, SemType>,
    pub api_list: BTreeSet<String>,
    /// wrapper function -> syscall name.
    pub wrappers: BTreeMap<String, String>,
    index: HashMap<String, usize>,
}

impl IrProgram {
    pub fn new(
        functions: Vec<IrFunction>,
        aliases: BTreeMap<String, String>,
        externs: BTreeSet<String>,
        globals: BTreeMap<String, SemType>,
    ) -> crate::Result<Self> {
        let mut index = HashMap::new();
        for (i, f) in functions.iter().enumerate() {
            if index.insert(f.name.clone(), i).is_some() {
                return Err(crate::Error::DuplicateFunction(f.name.clone()));
            }
        }
        for (alias, target) in &aliases {
            if index.contains_key(alias) {
                return Err(crate::Error::DuplicateFunction(alias.clone()));
            }
            if !index.contains_key(target) && !externs.contains(target) {
                return Err(crate::Error::DanglingAlias {
                    alias: alias.clone(),
                    target: target.clone(),
                });
            }
        }
        Ok(IrProgram {
            functions,
            aliases,
            externs,
            globals,
            api_list: BTreeSet::new(),
            wrappers: BTreeMap::new(),
            index,
        })
    }

    pub fn with_apis(mut self, apis: impl IntoIterator<Item = String>) -> Self {
        self.api_list.extend(apis);
        self
    }

    pub fn with_wrappers(mut self, wrappers: BTreeMap<String, String>) -> Self {
        self.wrappers.extend(wrappers);
        self
    }

    /// Merges an external alias dump into the program.
    pub fn with_aliases(mut self, extra: &BTreeMap<String, String>) -> crate::Result<Self> {
        let mut raw = self.aliases.clone();
        raw.extend(extra.iter().map(|(a, b)| (a.clone(), b.clone())));
        let aliases = canonicalize_aliases(&raw)?;
        let mut prog = IrProgram::new(
            std::mem::take(&mut self.functions),
            aliases,
            std::mem::take(&mut self.externs),
            std::mem::take(&mut self.globals),
        )?;
        prog.api_list = self.api_list;
        prog.wrappers = self.wrappers;
        Ok(prog)
    }

    /// Resolves a name through the alias map.
    pub fn canonical<'a>(&'a self, name: &'a str) -> &'a str {
        self.aliases.get(name).map(String::as_str).unwrap_or(name)
    }

    pub fn function(&self, name: &str) -> Option<&IrFunction> {
        self.index.get(self.canonical(name)).map(|&i| &self.functions[i])
    }

    pub fn is_function(&self, name: &str) -> bool {
        self.index.contains_key(self.canonical(name))
    }

    pub fn is_extern(&self, name: &str) -> bool {
        self.externs.contains(self.canonical(name))
    }

    /// Best-effort semantic type of an identifier inside `func`.
    ///
    /// Locals are typed by their first typable definition; `None` means the
    /// type cannot be recovered intra-procedurally.
    pub fn type_of(&self, func: &IrFunction, name: &str) -> Option<SemType> {
        self.type_of_inner(func, name, &mut Vec::new())
    }

    fn type_of_inner(&self, func: &IrFunction, name: &str, seen: &mut Vec<String>) -> Option<SemType> {
        if let Some(p) = func.params.iter().find(|p| p.name == name) {
            return Some(p.ty.clone());
        }
        if seen.iter().any(|s| s == name) {
            return None;
        }
        seen.push(name.to_string());
        let mut found = None;
        for (_, stmt) in func.statements() {
            if stmt.defined_var() != Some(name) {
                continue;
            }
            let ty = match stmt {
                Stmt::Assign { rhs, .. } => match rhs {
                    Expr::Atom(a) => self.atom_type_inner(func, a, seen),
                    Expr::Binop { .. } | Expr::CharAt { .. } => Some(SemType::Int),
                    Expr::Field { .. } => None,
                },
                _ => None,
            };
            if ty.is_some() {
                found = ty;
                break;
            }
        }
        seen.pop();
        if found.is_some() {
            return found;
        }
        if let Some(t) = self.globals.get(name) {
            return Some(t.clone());
        }
        if self.is_function(name) {
            return Some(SemType::FunctionPointer);
        }
        None
    }

    pub fn atom_type(&self, func: &IrFunction, atom: &Atom) -> Option<SemType> {
        self.atom_type_inner(func, atom, &mut Vec::new())
    }

    fn atom_type_inner(&self, func: &IrFunction, atom: &Atom, seen: &mut Vec<String>) -> Option<SemType> {
        match atom {
            Atom::Int(_) => Some(SemType::Int),
            Atom::Str(_) => Some(SemType::String),
            Atom::Var(v) => self.type_of_inner(func, v, seen),
        }
    }

    /// Object type of `base` when it is a typed parameter or global.
    pub fn object_type_of(&self, func: &IrFunction, base: &str) -> Option<String> {
        match self.type_of(func, base) {
            Some(SemType::Object(t)) => Some(t),
            _ => None,
        }
    }
}
