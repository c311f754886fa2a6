// SPDX-License-Identifier: Apache-2.0

//! Disassembly ingestion: API callsites, direct syscall instructions and
//! best-effort backward slicing of their argument registers.
//!
//! Input is objdump-style text:
//!
//! ```text
//! 0000000000400600 <socket@plt>:
//!   400600:  nop
//! 0000000000400500 <main>:
//!   400500:  mov  w0, #0x2
//!   400504:  bl  400600 <socket@plt>
//!   400508:  ret
//!   400510:  .word  0x11
//!   400518:  .asciz  "r"
//! ```

mod parse;
mod slice;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use parse::parse_disassembly;
pub use slice::SliceConfig;

use crate::profile::Arch;
use crate::valueset::ValueSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Reg {
    /// General-purpose register `n`; `narrow` for 32-bit views (w-regs, a32).
    Gp {
        n: u8,
        narrow: bool,
    },
    Sp,
    Zr,
    Pc,
}

impl Reg {
    pub fn gp(n: u8, narrow: bool) -> Self {
        Reg::Gp { n, narrow }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AluOp {
    Add,
    Sub,
    Orr,
    Eor,
    And,
}

impl AluOp {
    fn apply(self, a: i64, b: i64) -> i64 {
        match self {
            AluOp::Add => a.wrapping_add(b),
            AluOp::Sub => a.wrapping_sub(b),
            AluOp::Orr => a | b,
            AluOp::Eor => a ^ b,
            AluOp::And => a & b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mem {
    pub base: Reg,
    pub offset: i64,
    /// Pre- or post-indexed: the base register is updated.
    pub writeback: bool,
}

/// Decoded instruction semantics relevant to slicing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    MovImm {
        rd: Reg,
        imm: i64,
    },
    MovK {
        rd: Reg,
        imm: i64,
        shift: u32,
    },
    MovReg {
        rd: Reg,
        rs: Reg,
    },
    AluImm {
        rd: Reg,
        rs: Reg,
        op: AluOp,
        imm: i64,
    },
    Load {
        rd: Reg,
        mem: Mem,
    },
    LoadPair {
        r1: Reg,
        r2: Reg,
        mem: Mem,
    },
    LoadLit {
        rd: Reg,
        addr: u64,
    },
    Store {
        rs: Reg,
        mem: Mem,
    },
    StorePair {
        r1: Reg,
        r2: Reg,
        mem: Mem,
    },
    Adr {
        rd: Reg,
        addr: u64,
    },
    Call {
        target: u64,
        sym: Option<String>,
    },
    CallReg {
        target: Reg,
    },
    Branch {
        target: u64,
        sym: Option<String>,
        conditional: bool,
    },
    Ret,
    Svc {
        imm: i64,
    },
    /// Writes the listed registers (and possibly sp) with unknown values.
    Clobber {
        regs: Vec<Reg>,
        sp: bool,
        ret: bool,
    },
    Nop,
    Opaque,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Insn {
    pub addr: u64,
    pub mnemonic: String,
    pub op: Op,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinFunction {
    pub name: String,
    pub start: u64,
    pub insns: Vec<Insn>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    pub arch: Arch,
    pub functions: Vec<BinFunction>,
    /// Stub address -> API name.
    pub plt_stubs: BTreeMap<u64, String>,
    pub literal_pool: BTreeMap<u64, i64>,
    pub string_pool: BTreeMap<u64, String>,
}

impl BinaryImage {
    /// API reached by a call or tail branch, if the target is a PLT stub.
    fn stub_target<'a>(&'a self, target: u64, sym: Option<&'a String>) -> Option<&'a str> {
        if let Some(api) = self.plt_stubs.get(&target) {
            return Some(api.as_str());
        }
        sym.and_then(|s| s.strip_suffix("@plt"))
    }

    pub fn function(&self, name: &str) -> Option<&BinFunction> {
        self.functions.iter().find(|f| f.name == name)
    }

    /// Replaces the instruction at `addr` with an opaque one.
    pub fn make_opaque(&mut self, addr: u64) -> bool {
        for f in &mut self.functions {
            if let Some(i) = f.insns.iter_mut().find(|i| i.addr == addr) {
                i.op = Op::Opaque;
                return true;
            }
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BinaryCallsite {
    pub function: String,
    pub address: u64,
    pub api: String,
    pub arg_sets: Vec<ValueSet>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DirectSyscall {
    pub function: String,
    pub address: u64,
    pub nr: ValueSet,
    pub arg_sets: Vec<ValueSet>,
}

/// Everything `scan-bin` learns about one binary.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScanResult {
    pub callsites: Vec<BinaryCallsite>,
    pub direct: Vec<DirectSyscall>,
    #[serde(default)]
    pub diagnostics: Vec<String>,
}

/// Register-count fallback when the API arity is not known.
pub const DEFAULT_ARG_REGS: usize = 8;

/// Every `bl` (or tail `b`) to a PLT stub of a listed API, by address.
/// Argument sets are left empty.
pub fn find_api_callsites(img: &BinaryImage, apis: &BTreeSet<String>) -> Vec<BinaryCallsite> {
    let mut out = Vec::new();
    for f in &img.functions {
        for insn in &f.insns {
            let api = match &insn.op {
                Op::Call { target, sym } => img.stub_target(*target, sym.as_ref()),
                Op::Branch {
                    target,
                    sym,
                    conditional: false,
                } => img.stub_target(*target, sym.as_ref()),
                _ => None,
            };
            if let Some(api) = api.filter(|a| apis.contains(*a)) {
                out.push(BinaryCallsite {
                    function: f.name.clone(),
                    address: insn.addr,
                    api: api.to_string(),
                    arg_sets: Vec::new(),
                });
            }
        }
    }
    out.sort_by_key(|c| c.address);
    out
}

/// Diagnostics for register-target calls, which are not followed.
pub fn indirect_call_diagnostics(img: &BinaryImage) -> Vec<String> {
    let mut out = Vec::new();
    for f in &img.functions {
        for insn in &f.insns {
            if let Op::CallReg { .. } = insn.op {
                out.push(format!("{}@{:#x}: indirect call skipped", f.name, insn.addr));
            }
        }
    }
    out
}

fn arg_reg_count(arch: Arch) -> usize {
    match arch {
        Arch::A32 => 4,
        _ => 8,
    }
}

/// Slices the argument registers live at the callsite.
pub fn extract_call_args(
    img: &BinaryImage,
    callsite: &BinaryCallsite,
    arity: Option<usize>,
    config: &SliceConfig,
) -> BinaryCallsite {
    let n = arity.unwrap_or(DEFAULT_ARG_REGS);
    let mut s = slice::Slicer::new(img, config);
    let arg_sets = (0..n)
        .map(|i| {
            if i < arg_reg_count(img.arch) {
                s.value_before(&callsite.function, callsite.address, i as u8)
            } else {
                // Stack-passed arguments are not tracked.
                ValueSet::Unknown
            }
        })
        .collect();
    BinaryCallsite {
        arg_sets,
        ..callsite.clone()
    }
}

/// Every supervisor call with its number and six argument registers.
pub fn find_direct_syscalls(img: &BinaryImage, config: &SliceConfig) -> Vec<DirectSyscall> {
    let mut out = Vec::new();
    for f in &img.functions {
        for insn in &f.insns {
            let Op::Svc { imm } = insn.op else { continue };
            let mut s = slice::Slicer::new(img, config);
            let nr = match img.arch {
                // OABI encodes the number in the immediate (0x900000 + nr).
                Arch::A32 if imm != 0 => ValueSet::single(imm & 0xfffff),
                Arch::A32 => s.value_before(&f.name, insn.addr, 7),
                _ => s.value_before(&f.name, insn.addr, 8),
            };
            let arg_sets = (0..6).map(|i| s.value_before(&f.name, insn.addr, i)).collect();
            out.push(DirectSyscall {
                function: f.name.clone(),
                address: insn.addr,
                nr,
                arg_sets,
            });
        }
    }
    out.sort_by_key(|d| d.address);
    out
}

/// Full scan: callsites with sliced arguments, direct syscalls and
/// diagnostics. `arity` gives the argument count per API when known.
pub fn scan_binary(img: &BinaryImage, arity: &BTreeMap<String, usize>, config: &SliceConfig) -> ScanResult {
    use rayon::prelude::*;
    let apis: BTreeSet<String> = arity.keys().cloned().collect();
    let callsites = find_api_callsites(img, &apis)
        .par_iter()
        .map(|cs| extract_call_args(img, cs, arity.get(&cs.api).copied(), config))
        .collect();
    ScanResult {
        callsites,
        direct: find_direct_syscalls(img, config),
        diagnostics: indirect_call_diagnostics(img),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG3: &str = "\
0000000000400600 <socket@plt>:
  400600:\tnop
0000000000400500 <main>:
  400500:\tstp\tx29, x30, [sp, #-16]!
  400504:\tmov\tx29, sp
  400508:\tmov\tw0, #0x2
  40050c:\tmov\tw1, #0x1
  400510:\tmov\tw2, #0x6
  400514:\tbl\t400600 <socket@plt>
  400518:\tldp\tx29, x30, [sp], #16
  40051c:\tret
";

    #[test]
    fn socket_prologue_arguments() {
        let img = parse_disassembly(FIG3, Arch::A64).unwrap();
        assert_eq!(img.plt_stubs.len(), 1);
        let apis: BTreeSet<String> = ["socket".to_string()].into();
        let cs = find_api_callsites(&img, &apis);
        assert_eq!(cs.len(), 1);
        let cs = extract_call_args(&img, &cs[0], Some(3), &SliceConfig::default());
        assert_eq!(
            cs.arg_sets,
            vec![ValueSet::single(2), ValueSet::single(1), ValueSet::single(6)]
        );
    }

    #[test]
    fn movz_movk_composition() {
        let text = "0000000000400000 <f>:\n  400000:\tmovz\tx1, #0x1\n  400004:\tmovk\tx1, #0x2, lsl 16\n  400008:\tbl\t400100 <open@plt>\n";
        let img = parse_disassembly(text, Arch::A64).unwrap();
        let cs = find_api_callsites(&img, &["open".to_string()].into());
        let cs = extract_call_args(&img, &cs[0], Some(2), &SliceConfig::default());
        assert_eq!(cs.arg_sets[1], ValueSet::single(0x20001));
        assert!(cs.arg_sets[0].is_unknown());
    }

    #[test]
    fn direct_svc_number() {
        let text = "0000000000400000 <f>:\n  400000:\tmov\tw8, #63\n  400004:\tsvc\t#0\n  400008:\tsvc\t#0\n";
        let img = parse_disassembly(text, Arch::A64).unwrap();
        let d = find_direct_syscalls(&img, &SliceConfig::default());
        assert_eq!(d[0].nr, ValueSet::single(63));
        // The first svc overwrote x0 only; x8 survives.
        assert_eq!(d[1].nr, ValueSet::single(63));
    }

    #[test]
    fn untraceable_svc_number_is_unknown() {
        let text = "0000000000400000 <f>:\n  400000:\tldr\tx8, [x3]\n  400004:\tsvc\t#0\n";
        let img = parse_disassembly(text, Arch::A64).unwrap();
        assert!(find_direct_syscalls(&img, &SliceConfig::default())[0].nr.is_unknown());
    }

    #[test]
    fn oabi_immediate_number() {
        let text = "00010000 <f>:\n  10000:\tswi\t#0x900004\n";
        let img = parse_disassembly(text, Arch::A32).unwrap();
        assert_eq!(
            find_direct_syscalls(&img, &SliceConfig::default())[0].nr,
            ValueSet::single(4)
        );
    }
}
