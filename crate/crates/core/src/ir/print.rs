// SPDX-License-Identifier: Apache-2.0

use std::fmt::Write as _;

use super::{Atom, Expr, IrProgram, Place, Stmt};

/// Renders a program back into the textual IR grammar.
pub fn serialize_ir(prog: &IrProgram) -> String {
    let mut out = String::new();
    for (alias, target) in &prog.aliases {
        let _ = writeln!(out, "alias: {alias} -> {target}");
    }
    for name in &prog.externs {
        let _ = writeln!(out, "extern {name}");
    }
    for (name, ty) in &prog.globals {
        let _ = writeln!(out, "global {name}:{ty}");
    }
    for f in &prog.functions {
        let params: Vec<String> = f.params.iter().map(|p| format!("{}:{}", p.name, p.ty)).collect();
        let _ = writeln!(out, "func {}({})", f.name, params.join(", "));
        for b in &f.blocks {
            let _ = writeln!(out, "bb {}:", b.label);
            for s in &b.stmts {
                let _ = writeln!(out, "  {}", stmt_text(s));
            }
        }
        out.push_str("endfunc\n");
    }
    out
}

pub(crate) fn atom_text(a: &Atom) -> String {
    match a {
        Atom::Int(v) => v.to_string(),
        Atom::Var(v) => v.clone(),
        Atom::Str(s) => {
            let mut t = String::from("\"");
            for c in s.chars() {
                match c {
                    '"' => t.push_str("\\\""),
                    '\\' => t.push_str("\\\\"),
                    '\n' => t.push_str("\\n"),
                    '\t' => t.push_str("\\t"),
                    '\0' => t.push_str("\\0"),
                    c => t.push(c),
                }
            }
            t.push('"');
            t
        }
    }
}

fn args_text(args: &[Atom]) -> String {
    args.iter().map(atom_text).collect::<Vec<_>>().join(", ")
}

pub(crate) fn stmt_text(s: &Stmt) -> String {
    match s {
        Stmt::Assign { lhs, rhs } => {
            let lhs = match lhs {
                Place::Var(v) => v.clone(),
                Place::Field { base, field } => format!("{base}.{field}"),
            };
            let rhs = match rhs {
                Expr::Atom(a) => atom_text(a),
                Expr::Field { base, field } => format!("{base}.{field}"),
                Expr::Binop { op, lhs, rhs } => {
                    format!("{} {} {}", atom_text(lhs), op.symbol(), atom_text(rhs))
                }
                Expr::CharAt { base, index } => format!("{base}[{index}]"),
            };
            format!("{lhs} = {rhs}")
        }
        Stmt::Call { lhs, callee, args } => {
            let call = format!("call {callee}({})", args_text(args));
            match lhs {
                Some(l) => format!("{l} = {call}"),
                None => call,
            }
        }
        Stmt::IndirectCall {
            lhs,
            target,
            from_type,
            args,
        } => {
            let from = from_type.as_ref().map(|t| format!(" from {t}")).unwrap_or_default();
            let call = format!("icall {target}{from}({})", args_text(args));
            match lhs {
                Some(l) => format!("{l} = {call}"),
                None => call,
            }
        }
        Stmt::Cond {
            var,
            op,
            rhs,
            then_label,
            else_label,
        } => format!(
            "if ({var} {} {}) goto {then_label} else {else_label}",
            op.symbol(),
            atom_text(rhs)
        ),
        Stmt::Switch {
            scrutinee,
            cases,
            default,
        } => {
            let mut arms: Vec<String> = cases.iter().map(|(k, l)| format!("{k}: {l}")).collect();
            arms.push(format!("default: {default}"));
            format!("switch ({scrutinee}) {{ {} }}", arms.join(", "))
        }
        Stmt::Goto(l) => format!("goto {l}"),
        Stmt::Return(None) => "return".to_string(),
        Stmt::Return(Some(a)) => format!("return {}", atom_text(a)),
        Stmt::Syscall { nr, args } => {
            let mut all = vec![nr.clone()];
            all.extend(args.iter().cloned());
            format!("syscall({})", args_text(&all))
        }
    }
}
