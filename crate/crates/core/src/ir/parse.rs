// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};

use super::{Atom, BasicBlock, BinOp, CmpOp, Expr, IrFunction, IrProgram, Param, Place, SemType, Stmt};
use crate::{Error, Result};

/// Parses an IR dump into a program.
///
/// Alias lines inside the dump are collapsed the same way
/// [`parse_alias_graph`] collapses a standalone alias dump.
pub fn parse_ir(text: &str) -> Result<IrProgram> {
    let mut functions = Vec::new();
    let mut raw_aliases = BTreeMap::new();
    let mut externs = BTreeSet::new();
    let mut globals = BTreeMap::new();
    let mut current: Option<FunctionBuilder> = None;

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(fb) = current.as_mut() {
            if line == "endfunc" {
                let f = current.take().unwrap().finish(lineno)?;
                functions.push(f);
            } else if let Some(rest) = line.strip_prefix("bb ") {
                let label = rest
                    .strip_suffix(':')
                    .ok_or_else(|| Error::syntax(lineno, "block header must end with `:`"))?
                    .trim();
                expect_ident(label, lineno)?;
                fb.open_block(label, lineno)?;
            } else {
                let stmt = parse_stmt(line, lineno)?;
                fb.push(stmt, lineno)?;
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix("alias:") {
            let (a, b) = parse_alias_line(rest, lineno)?;
            raw_aliases.insert(a, b);
        } else if let Some(rest) = line.strip_prefix("extern ") {
            for name in rest.split(',') {
                let name = name.trim();
                expect_ident(name, lineno)?;
                externs.insert(name.to_string());
            }
        } else if let Some(rest) = line.strip_prefix("global ") {
            let p = parse_param(rest.trim(), lineno)?;
            globals.insert(p.name, p.ty);
        } else if let Some(rest) = line.strip_prefix("func ") {
            current = Some(FunctionBuilder::header(rest, lineno)?);
        } else {
            return Err(Error::syntax(lineno, format!("unexpected top-level line `{line}`")));
        }
    }
    if let Some(fb) = current {
        return Err(Error::syntax(
            text.lines().count(),
            format!("function `{}` lacks `endfunc`", fb.name),
        ));
    }
    let aliases = canonicalize_aliases(&raw_aliases)?;
    IrProgram::new(functions, aliases, externs, globals)
}

/// Parses an alias dump (`alias: a -> b` per line) and collapses chains.
pub fn parse_alias_graph(text: &str) -> Result<BTreeMap<String, String>> {
    let mut raw = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = strip_comment(line).trim();
        if line.is_empty() {
            continue;
        }
        let rest = line
            .strip_prefix("alias:")
            .ok_or_else(|| Error::syntax(i + 1, "expected `alias: <name> -> <name>`"))?;
        let (a, b) = parse_alias_line(rest, i + 1)?;
        raw.insert(a, b);
    }
    canonicalize_aliases(&raw)
}

/// Collapses alias chains so every alias maps to its final target.
pub fn canonicalize_aliases(raw: &BTreeMap<String, String>) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for start in raw.keys() {
        let mut chain = vec![start.clone()];
        let mut cur = start;
        while let Some(next) = raw.get(cur) {
            if chain.contains(next) {
                chain.push(next.clone());
                return Err(Error::CyclicAlias(chain));
            }
            chain.push(next.clone());
            cur = next;
        }
        out.insert(start.clone(), cur.clone());
    }
    Ok(out)
}

/// One API name per line.
pub fn parse_api_list(text: &str) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = strip_comment(line).trim();
        if line.is_empty() {
            continue;
        }
        expect_ident(line, i + 1)?;
        out.insert(line.to_string());
    }
    Ok(out)
}

/// `wrapper -> syscall` per line.
pub fn parse_wrapper_list(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = strip_comment(line).trim();
        if line.is_empty() {
            continue;
        }
        let (a, b) = parse_alias_line(line, i + 1)?;
        out.insert(a, b);
    }
    Ok(out)
}

fn parse_alias_line(rest: &str, lineno: usize) -> Result<(String, String)> {
    let (a, b) = rest
        .split_once("->")
        .ok_or_else(|| Error::syntax(lineno, "expected `<name> -> <name>`"))?;
    let (a, b) = (a.trim(), b.trim());
    expect_ident(a, lineno)?;
    expect_ident(b, lineno)?;
    Ok((a.to_string(), b.to_string()))
}

fn strip_comment(line: &str) -> &str {
    // `#` inside a string or char literal is not a comment.
    let mut in_str = false;
    let mut in_char = false;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        if escaped {
            escaped = false;
            continue;
        }
        match c {
            '\\' if in_str || in_char => escaped = true,
            '"' if !in_char => in_str = !in_str,
            '\'' if !in_str => in_char = !in_char,
            '#' if !in_str && !in_char => return &line[..i],
            _ => {}
        }
    }
    line
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn expect_ident(s: &str, lineno: usize) -> Result<()> {
    if is_ident(s) && !s.contains('.') {
        Ok(())
    } else {
        Err(Error::syntax(lineno, format!("`{s}` is not an identifier")))
    }
}

fn parse_type(s: &str, lineno: usize) -> Result<SemType> {
    Ok(match s {
        "int" => SemType::Int,
        "ptr" => SemType::Pointer,
        "str" => SemType::String,
        "fnptr" => SemType::FunctionPointer,
        _ => {
            let inner = s
                .strip_prefix("obj(")
                .and_then(|r| r.strip_suffix(')'))
                .ok_or_else(|| Error::syntax(lineno, format!("unknown type `{s}`")))?;
            expect_ident(inner, lineno)?;
            SemType::Object(inner.to_string())
        }
    })
}

fn parse_param(s: &str, lineno: usize) -> Result<Param> {
    let (name, ty) = s
        .split_once(':')
        .ok_or_else(|| Error::syntax(lineno, format!("parameter `{s}` lacks a type")))?;
    let name = name.trim();
    expect_ident(name, lineno)?;
    Ok(Param {
        name: name.to_string(),
        ty: parse_type(ty.trim(), lineno)?,
    })
}

struct FunctionBuilder {
    name: String,
    params: Vec<Param>,
    blocks: Vec<BasicBlock>,
}

impl FunctionBuilder {
    fn header(rest: &str, lineno: usize) -> Result<Self> {
        let rest = rest.trim();
        let open = rest
            .find('(')
            .ok_or_else(|| Error::syntax(lineno, "function header lacks `(`"))?;
        let name = rest[..open].trim();
        expect_ident(name, lineno)?;
        let inner = rest[open + 1..]
            .strip_suffix(')')
            .ok_or_else(|| Error::syntax(lineno, "function header lacks `)`"))?;
        let mut params = Vec::new();
        for p in inner.split(',') {
            let p = p.trim();
            if p.is_empty() {
                continue;
            }
            params.push(parse_param(p, lineno)?);
        }
        Ok(FunctionBuilder {
            name: name.to_string(),
            params,
            blocks: Vec::new(),
        })
    }

    fn open_block(&mut self, label: &str, lineno: usize) -> Result<()> {
        if let Some(prev) = self.blocks.last() {
            if prev.stmts.is_empty() {
                return Err(Error::syntax(lineno, format!("block `{}` is empty", prev.label)));
            }
        }
        if self.blocks.iter().any(|b| b.label == label) {
            return Err(Error::syntax(lineno, format!("duplicate block label `{label}`")));
        }
        self.blocks.push(BasicBlock {
            label: label.to_string(),
            stmts: Vec::new(),
        });
        Ok(())
    }

    fn push(&mut self, stmt: Stmt, lineno: usize) -> Result<()> {
        let block = self
            .blocks
            .last_mut()
            .ok_or_else(|| Error::syntax(lineno, "statement outside of a block"))?;
        if block.stmts.last().is_some_and(Stmt::is_terminator) {
            return Err(Error::syntax(
                lineno,
                format!("statement after the terminator of block `{}`", block.label),
            ));
        }
        block.stmts.push(stmt);
        Ok(())
    }

    fn finish(self, lineno: usize) -> Result<IrFunction> {
        if let Some(last) = self.blocks.last() {
            if !last.stmts.last().is_some_and(Stmt::is_terminator) {
                return Err(Error::syntax(
                    lineno,
                    format!("function `{}` falls off its last block", self.name),
                ));
            }
        }
        for b in &self.blocks {
            for s in &b.stmts {
                for target in s.jump_targets() {
                    if !self.blocks.iter().any(|b| b.label == target) {
                        return Err(Error::DanglingLabel {
                            function: self.name.clone(),
                            label: target.to_string(),
                        });
                    }
                }
            }
        }
        Ok(IrFunction {
            name: self.name,
            params: self.params,
            blocks: self.blocks,
            is_address_taken_candidate: false,
        })
    }
}

fn parse_stmt(line: &str, lineno: usize) -> Result<Stmt> {
    let err = |reason: &str| Error::syntax(lineno, format!("{reason}: `{line}`"));

    if let Some(rest) = line.strip_prefix("goto ") {
        let label = rest.trim();
        expect_ident(label, lineno)?;
        return Ok(Stmt::Goto(label.to_string()));
    }
    if line == "return" {
        return Ok(Stmt::Return(None));
    }
    if let Some(rest) = line.strip_prefix("return ") {
        return Ok(Stmt::Return(Some(parse_atom(rest.trim(), lineno)?)));
    }
    if let Some(rest) = line.strip_prefix("if ") {
        let rest = rest.trim();
        let close = rest.find(')').ok_or_else(|| err("condition lacks `)`"))?;
        let cond = rest
            .strip_prefix('(')
            .map(|r| &r[..close - 1])
            .ok_or_else(|| err("condition lacks `(`"))?;
        let toks: Vec<&str> = cond.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(err("condition must be `<var> <op> <operand>`"));
        }
        expect_ident(toks[0], lineno)?;
        let op = CmpOp::from_symbol(toks[1]).ok_or_else(|| err("unknown comparison"))?;
        let rhs = parse_atom(toks[2], lineno)?;
        let tail: Vec<&str> = rest[close + 1..].split_whitespace().collect();
        match tail.as_slice() {
            ["goto", l1, "else", l2] => {
                expect_ident(l1, lineno)?;
                expect_ident(l2, lineno)?;
                return Ok(Stmt::Cond {
                    var: toks[0].to_string(),
                    op,
                    rhs,
                    then_label: l1.to_string(),
                    else_label: l2.to_string(),
                });
            }
            _ => return Err(err("expected `goto <label> else <label>`")),
        }
    }
    if let Some(rest) = line.strip_prefix("switch ") {
        let rest = rest.trim();
        let close = rest.find(')').ok_or_else(|| err("switch lacks `)`"))?;
        let scrutinee = rest
            .strip_prefix('(')
            .map(|r| r[..close - 1].trim())
            .ok_or_else(|| err("switch lacks `(`"))?;
        expect_ident(scrutinee, lineno)?;
        let body = rest[close + 1..].trim();
        let body = body
            .strip_prefix('{')
            .and_then(|b| b.strip_suffix('}'))
            .ok_or_else(|| err("switch body must be `{ ... }`"))?;
        let mut cases = Vec::new();
        let mut default = None;
        for arm in split_top_level(body) {
            let arm = arm.trim();
            if arm.is_empty() {
                continue;
            }
            let (k, label) = rsplit_colon(arm).ok_or_else(|| err("switch arm lacks `:`"))?;
            let label = label.trim();
            expect_ident(label, lineno)?;
            if k.trim() == "default" {
                default = Some(label.to_string());
            } else {
                match parse_atom(k.trim(), lineno)? {
                    Atom::Int(v) => cases.push((v, label.to_string())),
                    _ => return Err(err("switch case must be an integer or char constant")),
                }
            }
        }
        let default = default.ok_or_else(|| err("switch lacks a default arm"))?;
        return Ok(Stmt::Switch {
            scrutinee: scrutinee.to_string(),
            cases,
            default,
        });
    }
    if line.starts_with("syscall(") || line.starts_with("syscall (") {
        let args = parse_arg_list(line["syscall".len()..].trim(), lineno)?;
        let mut args = args.into_iter();
        let nr = args.next().ok_or_else(|| err("syscall lacks a number"))?;
        let args: Vec<Atom> = args.collect();
        if args.len() > 6 {
            return Err(err("syscall takes at most six arguments"));
        }
        return Ok(Stmt::Syscall { nr, args });
    }

    // Remaining forms may carry an assignment.
    let (lhs, rhs) = match split_assignment(line) {
        Some((l, r)) => (Some(l.trim()), r.trim()),
        None => (None, line),
    };

    if let Some(rest) = rhs.strip_prefix("call ") {
        let (callee, args) = parse_call(rest, lineno)?;
        let lhs = lhs.map(|l| place_var(l, lineno)).transpose()?;
        return Ok(Stmt::Call { lhs, callee, args });
    }
    if let Some(rest) = rhs.strip_prefix("icall ") {
        let rest = rest.trim();
        let open = rest.find('(').ok_or_else(|| err("icall lacks `(`"))?;
        let head: Vec<&str> = rest[..open].split_whitespace().collect();
        let (target, from_type) = match head.as_slice() {
            [t] => (t.to_string(), None),
            [t, "from", ty] => (t.to_string(), Some(ty.to_string())),
            _ => return Err(err("expected `icall <var> [from <Type>](args)`")),
        };
        expect_ident(&target, lineno)?;
        if let Some(t) = &from_type {
            expect_ident(t, lineno)?;
        }
        let args = parse_arg_list(&rest[open..], lineno)?;
        let lhs = lhs.map(|l| place_var(l, lineno)).transpose()?;
        return Ok(Stmt::IndirectCall {
            lhs,
            target,
            from_type,
            args,
        });
    }

    let lhs = lhs.ok_or_else(|| err("unknown statement form"))?;
    let place = parse_place(lhs, lineno)?;
    let rhs = parse_expr(rhs, lineno)?;
    if let Place::Field { .. } = place {
        if !matches!(rhs, Expr::Atom(_)) {
            return Err(err("field stores take an atom"));
        }
    }
    Ok(Stmt::Assign { lhs: place, rhs })
}

fn split_assignment(line: &str) -> Option<(&str, &str)> {
    // The first `=` that is not part of a comparison operator.
    let bytes = line.as_bytes();
    let mut in_str = false;
    for (i, &b) in bytes.iter().enumerate() {
        match b {
            b'"' => in_str = !in_str,
            b'=' if !in_str => {
                let prev = if i > 0 { bytes[i - 1] } else { b' ' };
                let next = bytes.get(i + 1).copied().unwrap_or(b' ');
                if next == b'=' || matches!(prev, b'=' | b'!' | b'<' | b'>') {
                    return None;
                }
                return Some((&line[..i], &line[i + 1..]));
            }
            _ => {}
        }
    }
    None
}

fn place_var(s: &str, lineno: usize) -> Result<String> {
    expect_ident(s, lineno)?;
    Ok(s.to_string())
}

fn parse_place(s: &str, lineno: usize) -> Result<Place> {
    if let Some((base, field)) = s.split_once('.') {
        expect_ident(base, lineno)?;
        expect_ident(field, lineno)?;
        return Ok(Place::Field {
            base: base.to_string(),
            field: field.to_string(),
        });
    }
    Ok(Place::Var(place_var(s, lineno)?))
}

fn parse_expr(s: &str, lineno: usize) -> Result<Expr> {
    let toks = tokenize_expr(s);
    match toks.as_slice() {
        [one] => {
            if let Some(open) = one.find('[') {
                if !one.starts_with('"') {
                    let base = &one[..open];
                    let idx = one[open + 1..]
                        .strip_suffix(']')
                        .ok_or_else(|| Error::syntax(lineno, format!("bad index `{one}`")))?;
                    expect_ident(base, lineno)?;
                    let index =
                        parse_int(idx.trim()).ok_or_else(|| Error::syntax(lineno, format!("bad index `{one}`")))?;
                    return Ok(Expr::CharAt {
                        base: base.to_string(),
                        index,
                    });
                }
            }
            if !one.starts_with('"') && !one.starts_with('\'') && one.contains('.') {
                let (base, field) = one.split_once('.').unwrap();
                if is_ident(base) && is_ident(field) {
                    return Ok(Expr::Field {
                        base: base.to_string(),
                        field: field.to_string(),
                    });
                }
            }
            Ok(Expr::Atom(parse_atom(one, lineno)?))
        }
        [a, op, b] => {
            let op = BinOp::from_symbol(op).ok_or_else(|| Error::syntax(lineno, format!("unknown operator `{op}`")))?;
            Ok(Expr::Binop {
                op,
                lhs: parse_atom(a, lineno)?,
                rhs: parse_atom(b, lineno)?,
            })
        }
        _ => Err(Error::syntax(lineno, format!("unsupported expression `{s}`"))),
    }
}

/// Splits on whitespace, keeping quoted literals intact.
fn tokenize_expr(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for c in s.chars() {
        if let Some(q) = quote {
            cur.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == q {
                quote = None;
            }
            continue;
        }
        match c {
            '"' | '\'' => {
                quote = Some(c);
                cur.push(c);
            }
            c if c.is_whitespace() => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn parse_call(rest: &str, lineno: usize) -> Result<(String, Vec<Atom>)> {
    let rest = rest.trim();
    let open = rest.find('(').ok_or_else(|| Error::syntax(lineno, "call lacks `(`"))?;
    let callee = rest[..open].trim();
    expect_ident(callee, lineno)?;
    Ok((callee.to_string(), parse_arg_list(&rest[open..], lineno)?))
}

fn parse_arg_list(s: &str, lineno: usize) -> Result<Vec<Atom>> {
    let inner = s
        .strip_prefix('(')
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| Error::syntax(lineno, format!("expected `(args)`, got `{s}`")))?;
    let mut out = Vec::new();
    for a in split_top_level(inner) {
        let a = a.trim();
        if a.is_empty() {
            if inner.trim().is_empty() {
                continue;
            }
            return Err(Error::syntax(lineno, "empty argument"));
        }
        out.push(parse_atom(a, lineno)?);
    }
    Ok(out)
}

/// Splits on commas outside quotes.
fn split_top_level(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for (i, c) in s.char_indices() {
        if let Some(q) = quote {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == q {
                quote = None;
            }
            continue;
        }
        match c {
            '"' | '\'' => quote = Some(c),
            ',' => {
                out.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(&s[start..]);
    out
}

/// Splits a switch arm at its last colon outside quotes.
fn rsplit_colon(s: &str) -> Option<(&str, &str)> {
    let mut quote: Option<char> = None;
    let mut pos = None;
    for (i, c) in s.char_indices() {
        match (quote, c) {
            (Some(q), c) if c == q => quote = None,
            (Some(_), _) => {}
            (None, '"' | '\'') => quote = Some(c),
            (None, ':') => pos = Some(i),
            _ => {}
        }
    }
    pos.map(|i| (&s[..i], &s[i + 1..]))
}

fn parse_int(s: &str) -> Option<i64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s),
    };
    let v = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(hex, 16).ok()?
    } else if body.chars().all(|c| c.is_ascii_digit()) && !body.is_empty() {
        body.parse().ok()?
    } else {
        return None;
    };
    Some(if neg { -v } else { v })
}

fn unescape(body: &str, lineno: usize) -> Result<String> {
    let mut out = String::new();
    let mut chars = body.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('0') => out.push('\0'),
            Some('\\') => out.push('\\'),
            Some('\'') => out.push('\''),
            Some('"') => out.push('"'),
            other => {
                return Err(Error::syntax(
                    lineno,
                    format!("bad escape `\\{}`", other.unwrap_or(' ')),
                ))
            }
        }
    }
    Ok(out)
}

pub(super) fn parse_atom(s: &str, lineno: usize) -> Result<Atom> {
    if let Some(v) = parse_int(s) {
        return Ok(Atom::Int(v));
    }
    if let Some(body) = s.strip_prefix('\'').and_then(|r| r.strip_suffix('\'')) {
        let text = unescape(body, lineno)?;
        let mut chars = text.chars();
        return match (chars.next(), chars.next()) {
            (Some(c), None) if c.is_ascii() => Ok(Atom::Int(c as i64)),
            _ => Err(Error::syntax(lineno, format!("bad char literal `{s}`"))),
        };
    }
    if s.len() >= 2 && s.starts_with('"') && s.ends_with('"') {
        return Ok(Atom::Str(unescape(&s[1..s.len() - 1], lineno)?));
    }
    if is_ident(s) && !s.contains('.') {
        return Ok(Atom::Var(s.to_string()));
    }
    Err(Error::syntax(lineno, format!("bad operand `{s}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_has_no_functions() {
        let p = parse_ir("").unwrap();
        assert!(p.functions.is_empty());
        assert!(p.aliases.is_empty());
    }

    #[test]
    fn dangling_label_is_rejected() {
        let text = "func f(a:int)\nbb bb0:\n  if (a == 0) goto bb9 else bb0\nendfunc\n";
        assert_eq!(
            parse_ir(text).unwrap_err(),
            Error::DanglingLabel {
                function: "f".into(),
                label: "bb9".into()
            }
        );
    }

    #[test]
    fn duplicate_function_is_rejected() {
        let text = "func f()\nbb a:\n  return\nendfunc\nfunc f()\nbb a:\n  return\nendfunc\n";
        assert_eq!(parse_ir(text).unwrap_err(), Error::DuplicateFunction("f".into()));
    }

    #[test]
    fn unknown_statement_is_rejected() {
        let text = "func f()\nbb a:\n  frobnicate x\n  return\nendfunc\n";
        assert!(matches!(parse_ir(text).unwrap_err(), Error::Syntax { line: 3, .. }));
    }

    #[test]
    fn statement_after_terminator_is_rejected() {
        let text = "func f()\nbb a:\n  return\n  x = 1\nendfunc\n";
        assert!(matches!(parse_ir(text).unwrap_err(), Error::Syntax { line: 4, .. }));
    }

    #[test]
    fn too_many_syscall_args_rejected() {
        let text = "func f()\nbb a:\n  syscall(1, 1, 2, 3, 4, 5, 6, 7)\n  return\nendfunc\n";
        assert!(matches!(parse_ir(text).unwrap_err(), Error::Syntax { .. }));
    }

    #[test]
    fn single_alias() {
        let m = parse_alias_graph("alias: open64 -> __libc_open\n").unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m["open64"], "__libc_open");
    }

    #[test]
    fn alias_chain_collapses() {
        let m = parse_alias_graph("alias: a -> b\nalias: b -> c\n").unwrap();
        assert_eq!(m["a"], "c");
        assert_eq!(m["b"], "c");
    }

    #[test]
    fn alias_cycle_is_an_error() {
        let err = parse_alias_graph("alias: a -> b\nalias: b -> a\n").unwrap_err();
        assert!(matches!(err, Error::CyclicAlias(_)));
    }

    #[test]
    fn statement_forms() {
        let text = r#"
extern ext
global g:obj(config_t)
func f(s:str, n:int, cb:fnptr)
bb entry:
  c = s[0]
  x = n | 0x40
  y = g.flags
  g.flags = 3
  z = call ext(s, "a,b", 'r')
  icall cb from proto_ops(n, 1)
  r = icall cb(n)
  syscall(__NR_openat, -100, s, x, 0)
  switch (c) { 'r': a, ':': b, default: b }
bb a:
  goto b
bb b:
  if (x >= 2) goto a else done
bb done:
  return r
endfunc
"#;
        let p = parse_ir(text).unwrap();
        let f = p.function("f").unwrap();
        let stmts: Vec<&Stmt> = f.statements().map(|(_, s)| s).collect();
        assert_eq!(stmts.len(), 12);
        assert_eq!(
            stmts[0],
            &Stmt::Assign {
                lhs: Place::Var("c".into()),
                rhs: Expr::CharAt {
                    base: "s".into(),
                    index: 0
                }
            }
        );
        assert!(matches!(
            stmts[4],
            Stmt::Call { args, .. } if args[1] == Atom::Str("a,b".into()) && args[2] == Atom::Int(114)
        ));
        assert!(matches!(
            stmts[5],
            Stmt::IndirectCall { from_type: Some(t), lhs: None, .. } if t == "proto_ops"
        ));
        assert!(matches!(
            stmts[8],
            Stmt::Switch { cases, .. } if cases == &vec![(114, "a".to_string()), (58, "b".to_string())]
        ));
        assert_eq!(p.globals["g"], SemType::Object("config_t".into()));
    }
}
