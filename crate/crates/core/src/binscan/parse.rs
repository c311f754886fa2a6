// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use super::{AluOp, BinFunction, BinaryImage, Insn, Mem, Op, Reg};
use crate::profile::Arch;
use crate::{Error, Result};

fn parse_hex(s: &str) -> Option<u64> {
    let s = s.trim();
    let s = s.strip_prefix("0x").unwrap_or(s);
    if s.is_empty() {
        return None;
    }
    u64::from_str_radix(s, 16).ok()
}

fn parse_imm(s: &str) -> Option<i64> {
    let s = s.trim();
    let s = s.strip_prefix('#').unwrap_or(s).trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s),
    };
    let v = match body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        Some(h) => u64::from_str_radix(h, 16).ok()? as i64,
        None => body.parse::<i64>().ok()?,
    };
    Some(if neg { v.wrapping_neg() } else { v })
}

fn parse_reg(arch: Arch, s: &str) -> Option<Reg> {
    let s = s.trim().to_ascii_lowercase();
    let num = |p: &str| s.strip_prefix(p).and_then(|n| n.parse::<u8>().ok());
    match arch {
        Arch::A32 => match s.as_str() {
            "sp" => Some(Reg::Sp),
            "lr" => Some(Reg::gp(14, true)),
            "pc" => Some(Reg::Pc),
            "fp" => Some(Reg::gp(11, true)),
            "ip" => Some(Reg::gp(12, true)),
            "sl" => Some(Reg::gp(10, true)),
            _ => match num("r")? {
                13 => Some(Reg::Sp),
                15 => Some(Reg::Pc),
                n if n < 15 => Some(Reg::gp(n, true)),
                _ => None,
            },
        },
        _ => match s.as_str() {
            "sp" | "wsp" => Some(Reg::Sp),
            "xzr" | "wzr" => Some(Reg::Zr),
            "fp" => Some(Reg::gp(29, false)),
            "lr" => Some(Reg::gp(30, false)),
            _ => {
                if let Some(n) = num("x").filter(|n| *n <= 30) {
                    Some(Reg::gp(n, false))
                } else {
                    num("w").filter(|n| *n <= 30).map(|n| Reg::gp(n, true))
                }
            }
        },
    }
}

/// Splits operands on commas outside `[]` and `{}`.
fn split_operands(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '[' | '{' => depth += 1,
            ']' | '}' => depth -= 1,
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

/// `lsl #16` / `lsl 16` shift amount.
fn parse_shift(s: Option<&String>) -> Option<u32> {
    match s {
        None => Some(0),
        Some(s) => {
            let rest = s.trim().strip_prefix("lsl")?;
            u32::try_from(parse_imm(rest)?).ok().filter(|v| *v < 64)
        }
    }
}

fn parse_mem(arch: Arch, ops: &[String]) -> Option<Mem> {
    let first = ops.first()?.trim();
    let (inner, pre_wb) = match first.strip_suffix('!') {
        Some(i) => (i.trim(), true),
        None => (first, false),
    };
    let inner = inner.strip_prefix('[')?.strip_suffix(']')?;
    let parts = split_operands(inner);
    let base = parse_reg(arch, parts.first()?)?;
    let offset = match parts.get(1) {
        Some(o) => parse_imm(o)?,
        None => 0,
    };
    if parts.len() > 2 {
        return None;
    }
    let post_wb = ops.len() > 1;
    if post_wb && parse_imm(&ops[1]).is_none() {
        return None;
    }
    Some(Mem {
        base,
        offset,
        writeback: pre_wb || post_wb,
    })
}

/// Target address of a branch operand: `400600 <sym>` or `0x400600`.
fn parse_target(s: &str) -> Option<(u64, Option<String>)> {
    let s = s.trim();
    let (addr, sym) = match s.split_once('<') {
        Some((a, rest)) => (a.trim(), rest.strip_suffix('>').map(|x| x.to_string())),
        None => (s, None),
    };
    Some((parse_hex(addr.strip_prefix('#').unwrap_or(addr))?, sym))
}

fn reg_list(arch: Arch, s: &str) -> Option<Vec<Reg>> {
    let inner = s.trim().strip_prefix('{')?.strip_suffix('}')?;
    inner.split(',').map(|r| parse_reg(arch, r)).collect()
}

const CONDITIONS: &[&str] = &[
    "eq", "ne", "cs", "hs", "cc", "lo", "mi", "pl", "vs", "vc", "hi", "ls", "ge", "lt", "gt", "le", "al",
];

/// Names the other ARM state if the instruction can only belong to it.
fn foreign_arch(arch: Arch, mnemonic: &str, operands: &str) -> Option<Arch> {
    let m = mnemonic.to_ascii_lowercase();
    let regs = |prefix: char| {
        operands
            .split(|c: char| !c.is_ascii_alphanumeric())
            .any(|t| t.len() > 1 && t.starts_with(prefix) && t[1..].bytes().all(|b| b.is_ascii_digit()))
    };
    match arch {
        Arch::A64 if matches!(m.as_str(), "swi" | "push" | "pop" | "movw" | "movt" | "bx" | "blx") || regs('r') => {
            Some(Arch::A32)
        }
        Arch::A32 if regs('x') || regs('w') => Some(Arch::A64),
        _ => None,
    }
}

fn decode(arch: Arch, addr: u64, mnemonic: &str, operands: &str) -> Op {
    let ops = split_operands(operands);
    let reg = |i: usize| ops.get(i).and_then(|o| parse_reg(arch, o));
    let imm = |i: usize| ops.get(i).filter(|o| o.starts_with('#')).and_then(|o| parse_imm(o));
    let m = mnemonic.to_ascii_lowercase();
    let a32 = arch == Arch::A32;
    let decoded = match m.as_str() {
        "nop" => Some(Op::Nop),
        "ret" => Some(Op::Ret),
        "bx" if reg(0) == Some(Reg::gp(14, true)) => Some(Op::Ret),
        "cmp" | "cmn" | "tst" | "teq" => Some(Op::Nop),
        "svc" | "swi" => parse_imm(ops.first().map(String::as_str).unwrap_or("0")).map(|imm| Op::Svc { imm }),
        "bl" => ops
            .first()
            .and_then(|o| parse_target(o))
            .map(|(target, sym)| Op::Call { target, sym }),
        "blr" | "blx" => reg(0).map(|r| Op::CallReg { target: r }),
        "b" => ops
            .first()
            .and_then(|o| parse_target(o))
            .map(|(target, sym)| Op::Branch {
                target,
                sym,
                conditional: false,
            }),
        "cbz" | "cbnz" => ops
            .get(1)
            .and_then(|o| parse_target(o))
            .map(|(target, sym)| Op::Branch {
                target,
                sym,
                conditional: true,
            }),
        "tbz" | "tbnz" => ops
            .get(2)
            .and_then(|o| parse_target(o))
            .map(|(target, sym)| Op::Branch {
                target,
                sym,
                conditional: true,
            }),
        _ if m.starts_with("b.") || (a32 && m.len() == 3 && m.starts_with('b') && CONDITIONS.contains(&&m[1..])) => ops
            .first()
            .and_then(|o| parse_target(o))
            .map(|(target, sym)| Op::Branch {
                target,
                sym,
                conditional: true,
            }),
        "mov" | "movz" | "movw" => match (reg(0), imm(1), reg(1)) {
            (Some(rd), Some(v), _) => parse_shift(ops.get(2)).map(|s| Op::MovImm {
                rd,
                imm: v.wrapping_shl(s),
            }),
            (Some(rd), None, Some(rs)) if ops.len() == 2 => Some(Op::MovReg { rd, rs }),
            _ => None,
        },
        "movn" | "mvn" => match (reg(0), imm(1)) {
            (Some(rd), Some(v)) => parse_shift(ops.get(2)).map(|s| Op::MovImm {
                rd,
                imm: !v.wrapping_shl(s),
            }),
            _ => None,
        },
        "movk" => match (reg(0), imm(1)) {
            (Some(rd), Some(v)) => parse_shift(ops.get(2)).map(|shift| Op::MovK { rd, imm: v, shift }),
            _ => None,
        },
        "movt" => match (reg(0), imm(1)) {
            (Some(rd), Some(v)) => Some(Op::MovK { rd, imm: v, shift: 16 }),
            _ => None,
        },
        "add" | "sub" | "orr" | "eor" | "and" => {
            let op = match m.as_str() {
                "add" => AluOp::Add,
                "sub" => AluOp::Sub,
                "orr" => AluOp::Orr,
                "eor" => AluOp::Eor,
                _ => AluOp::And,
            };
            match (reg(0), reg(1), imm(2), reg(2)) {
                (Some(rd), Some(Reg::Zr), Some(v), _) if op == AluOp::Orr => Some(Op::MovImm { rd, imm: v }),
                (Some(rd), Some(Reg::Zr), None, Some(rs)) if op == AluOp::Orr && ops.len() == 3 => {
                    Some(Op::MovReg { rd, rs })
                }
                (Some(rd), Some(rs), Some(v), _) => parse_shift(ops.get(3)).map(|s| Op::AluImm {
                    rd,
                    rs,
                    op,
                    imm: v.wrapping_shl(s),
                }),
                _ => None,
            }
        }
        "ldr" | "ldrsw" => match reg(0) {
            Some(rd) => {
                let rest = &ops[1..];
                match rest.first().map(String::as_str) {
                    Some(o) if o.starts_with('=') => parse_imm(&o[1..]).map(|v| Op::MovImm { rd, imm: v }),
                    Some(o) if o.starts_with('[') => parse_mem(arch, rest).map(|mem| {
                        if mem.base == Reg::Pc && !mem.writeback {
                            // ARM-mode pc reads as the instruction address plus 8.
                            Op::LoadLit {
                                rd,
                                addr: addr.wrapping_add(8).wrapping_add(mem.offset as u64),
                            }
                        } else {
                            Op::Load { rd, mem }
                        }
                    }),
                    Some(o) => parse_target(o).map(|(a, _)| Op::LoadLit { rd, addr: a }),
                    None => None,
                }
            }
            None => None,
        },
        "str" => match reg(0) {
            Some(rs) => parse_mem(arch, &ops[1..]).map(|mem| Op::Store { rs, mem }),
            None => None,
        },
        "ldp" | "stp" => match (reg(0), reg(1)) {
            (Some(r1), Some(r2)) => parse_mem(arch, &ops[2..]).map(|mem| {
                if m == "ldp" {
                    Op::LoadPair { r1, r2, mem }
                } else {
                    Op::StorePair { r1, r2, mem }
                }
            }),
            _ => None,
        },
        "adr" => match (reg(0), ops.get(1).and_then(|o| parse_target(o))) {
            (Some(rd), Some((a, _))) => Some(Op::Adr { rd, addr: a }),
            _ => None,
        },
        "push" => ops.first().and_then(|o| reg_list(arch, o)).map(|_| Op::Clobber {
            regs: Vec::new(),
            sp: true,
            ret: false,
        }),
        "pop" => ops.first().and_then(|o| reg_list(arch, o)).map(|regs| Op::Clobber {
            ret: regs.contains(&Reg::Pc),
            regs,
            sp: true,
        }),
        _ => None,
    };
    decoded.unwrap_or(Op::Opaque)
}

fn strip_comment(line: &str) -> &str {
    let mut end = line.len();
    for pat in ["//", ";"] {
        if let Some(i) = line.find(pat) {
            end = end.min(i);
        }
    }
    if line.trim_start().starts_with('#') {
        end = 0;
    }
    &line[..end]
}

/// Parses a string literal from a `.asciz` operand.
fn parse_string_literal(s: &str) -> Option<String> {
    let s = s.trim();
    serde_json::from_str::<String>(s).ok()
}

pub fn parse_disassembly(text: &str, arch: Arch) -> Result<BinaryImage> {
    if arch == Arch::X86_64 {
        return Err(Error::UnknownArch("x86_64 disassembly is not supported".into()));
    }
    let mut img = BinaryImage {
        arch,
        functions: Vec::new(),
        plt_stubs: BTreeMap::new(),
        literal_pool: BTreeMap::new(),
        string_pool: BTreeMap::new(),
    };
    // Current section: Some(function) or a PLT stub (None after header).
    let mut current: Option<BinFunction> = None;
    let mut in_stub = false;

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        // `.asciz` literals may contain comment characters; handle them first.
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let line = if trimmed.contains(".asciz") || trimmed.contains(".string") {
            trimmed
        } else {
            strip_comment(trimmed).trim()
        };
        if line.is_empty() {
            continue;
        }
        if let Some(head) = line.strip_suffix(">:") {
            let (addr, name) = head
                .split_once(" <")
                .ok_or_else(|| Error::syntax(lineno, "function header must be `<addr> <name>:`"))?;
            let start = parse_hex(addr).ok_or_else(|| Error::syntax(lineno, format!("bad address `{addr}`")))?;
            if let Some(f) = current.take() {
                img.functions.push(f);
            }
            if let Some(api) = name.strip_suffix("@plt") {
                if img.plt_stubs.values().any(|n| n == api) {
                    return Err(Error::syntax(lineno, format!("duplicate plt stub `{name}`")));
                }
                img.plt_stubs.insert(start, api.to_string());
                in_stub = true;
            } else {
                current = Some(BinFunction {
                    name: name.to_string(),
                    start,
                    insns: Vec::new(),
                });
                in_stub = false;
            }
            continue;
        }
        let (addr, rest) = line
            .split_once(':')
            .ok_or_else(|| Error::syntax(lineno, format!("unrecognised line `{line}`")))?;
        let addr = parse_hex(addr).ok_or_else(|| Error::syntax(lineno, format!("bad address `{}`", addr.trim())))?;
        let rest = rest.trim();
        let (mnemonic, operands) = match rest.find(char::is_whitespace) {
            Some(i) => (&rest[..i], rest[i..].trim()),
            None => (rest, ""),
        };
        if mnemonic.is_empty() {
            return Err(Error::syntax(lineno, "missing mnemonic"));
        }
        match mnemonic {
            ".word" | ".quad" | ".xword" => {
                let v = parse_hex(operands)
                    .or_else(|| parse_imm(operands).map(|v| v as u64))
                    .ok_or_else(|| Error::syntax(lineno, format!("bad literal `{operands}`")))?;
                let v = if mnemonic == ".word" { v as u32 as i64 } else { v as i64 };
                img.literal_pool.insert(addr, v);
                continue;
            }
            ".asciz" | ".string" => {
                let s = parse_string_literal(operands)
                    .ok_or_else(|| Error::syntax(lineno, format!("bad string literal `{operands}`")))?;
                img.string_pool.insert(addr, s);
                continue;
            }
            _ => {}
        }
        if in_stub {
            continue;
        }
        let Some(f) = current.as_mut() else {
            return Err(Error::syntax(lineno, "instruction outside a function"));
        };
        if f.insns.last().is_some_and(|last| last.addr >= addr) {
            return Err(Error::syntax(lineno, format!("address {addr:#x} does not increase")));
        }
        if let Some(found) = foreign_arch(arch, mnemonic, operands) {
            return Err(Error::ArchMismatch {
                expected: arch.to_string(),
                found: format!("{found} instruction `{mnemonic} {operands}` at line {lineno}"),
            });
        }
        f.insns.push(Insn {
            addr,
            mnemonic: mnemonic.to_ascii_lowercase(),
            op: decode(arch, addr, mnemonic, operands),
        });
    }
    if let Some(f) = current.take() {
        img.functions.push(f);
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_common_forms() {
        let a = Arch::A64;
        assert_eq!(
            decode(a, 0, "mov", "w0, #2"),
            Op::MovImm {
                rd: Reg::gp(0, true),
                imm: 2
            }
        );
        assert_eq!(
            decode(a, 0, "movk", "x1, #0x2, lsl 16"),
            Op::MovK {
                rd: Reg::gp(1, false),
                imm: 2,
                shift: 16
            }
        );
        assert!(matches!(
            decode(a, 0, "stp", "x29, x30, [sp, #-16]!"),
            Op::StorePair {
                mem: Mem { writeback: true, .. },
                ..
            }
        ));
        assert!(matches!(
            decode(a, 0, "ldp", "x29, x30, [sp], #16"),
            Op::LoadPair {
                mem: Mem { writeback: true, .. },
                ..
            }
        ));
        assert!(matches!(
            decode(a, 0, "b.ne", "400520 <main+0x20>"),
            Op::Branch { conditional: true, .. }
        ));
        assert_eq!(decode(a, 0, "fmadd", "d0, d1, d2, d3"), Op::Opaque);
        assert_eq!(
            decode(Arch::A32, 0x100, "ldr", "r0, [pc, #8]"),
            Op::LoadLit {
                rd: Reg::gp(0, true),
                addr: 0x110
            }
        );
    }

    #[test]
    fn malformed_address_is_a_syntax_error() {
        let e = parse_disassembly("0000000000400500 <main>:\n  40zz00:\tnop\n", Arch::A64).unwrap_err();
        assert!(matches!(e, Error::Syntax { line: 2, .. }));
    }

    #[test]
    fn empty_text_gives_empty_image() {
        let img = parse_disassembly("", Arch::A64).unwrap();
        assert!(img.functions.is_empty());
    }
}
