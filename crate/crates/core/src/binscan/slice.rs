// SPDX-License-Identifier: Apache-2.0

//! Backward slicing over decoded instructions.
//!
//! `query(f, i, loc)` is the value set `loc` may hold just before
//! instruction `i` of function `f`: the join over every predecessor of the
//! value it leaves in `loc`. A predecessor that does not write `loc`
//! passes the question further back. Revisiting a question already on the
//! stack through pass-throughs only contributes nothing (the loop adds no
//! new value); revisiting it through a write gives unknown.

use std::collections::{BTreeMap, HashMap};

use super::{BinaryImage, Mem, Op, Reg};
use crate::profile::Arch;
use crate::valueset::ValueSet;

#[derive(Debug, Clone)]
pub struct SliceConfig {
    /// Instruction/location evaluations per slicing session.
    pub max_insns: usize,
    pub max_caller_hops: usize,
}

impl Default for SliceConfig {
    fn default() -> Self {
        SliceConfig {
            max_insns: 500,
            max_caller_hops: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Base {
    Sp,
    Fp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Loc {
    Reg(u8),
    Slot { base: Base, off: i64, size: u8 },
}

type Key = (usize, usize, Loc, usize);

struct FnInfo {
    preds: Vec<Vec<usize>>,
    /// The frame address is copied into another register.
    escapes: bool,
    /// (function, instruction) of every call or branch to this function.
    callers: Vec<(usize, usize)>,
}

pub(super) struct Slicer<'a> {
    img: &'a BinaryImage,
    config: &'a SliceConfig,
    info: Vec<FnInfo>,
    memo: HashMap<Key, Option<ValueSet>>,
    stack: Vec<(Key, bool)>,
    evaluated: usize,
}

fn fp_reg(arch: Arch) -> u8 {
    match arch {
        Arch::A32 => 11,
        _ => 29,
    }
}

fn call_clobbers(arch: Arch, n: u8) -> bool {
    match arch {
        Arch::A32 => n <= 3 || n == 12 || n == 14,
        _ => n <= 18 || n == 30,
    }
}

fn same_gp(r: Reg, n: u8) -> bool {
    matches!(r, Reg::Gp { n: m, .. } if m == n)
}

fn narrow(v: ValueSet) -> ValueSet {
    let fits = |x: i64| i64::from(x as i32) == x;
    match v {
        ValueSet::Distinct { .. } => v.map_distinct(|x| i64::from(x as i32)),
        ValueSet::Range { lo, hi } if fits(lo) && fits(hi) => v,
        ValueSet::Flags { ref values } if values.iter().all(|x| fits(*x)) => v,
        ValueSet::Strings { .. } => v,
        _ => ValueSet::Unknown,
    }
}

fn join(acc: Option<ValueSet>, v: Option<ValueSet>) -> Option<ValueSet> {
    match (acc, v) {
        (None, v) | (v, None) => v,
        (Some(a), Some(b)) => Some(a.join(&b)),
    }
}

impl<'a> Slicer<'a> {
    pub(super) fn new(img: &'a BinaryImage, config: &'a SliceConfig) -> Self {
        let start_of: BTreeMap<u64, usize> = img.functions.iter().enumerate().map(|(i, f)| (f.start, i)).collect();
        let mut info: Vec<FnInfo> = img
            .functions
            .iter()
            .map(|f| {
                let index: HashMap<u64, usize> = f.insns.iter().enumerate().map(|(i, x)| (x.addr, i)).collect();
                let mut preds = vec![Vec::new(); f.insns.len()];
                for (i, insn) in f.insns.iter().enumerate() {
                    if i + 1 < f.insns.len() {
                        let ends = matches!(
                            insn.op,
                            Op::Ret | Op::Branch { conditional: false, .. } | Op::Clobber { ret: true, .. }
                        );
                        if !ends {
                            preds[i + 1].push(i);
                        }
                    }
                    if let Op::Branch { target, .. } = insn.op {
                        if let Some(&t) = index.get(&target) {
                            preds[t].push(i);
                        }
                    }
                }
                let fp = fp_reg(img.arch);
                let frame = |r: Reg| r == Reg::Sp || same_gp(r, fp);
                let escapes = f.insns.iter().any(|x| match x.op {
                    Op::MovReg { rd, rs } | Op::AluImm { rd, rs, .. } => frame(rs) && !frame(rd),
                    _ => false,
                });
                FnInfo {
                    preds,
                    escapes,
                    callers: Vec::new(),
                }
            })
            .collect();
        for (fi, f) in img.functions.iter().enumerate() {
            for (ii, insn) in f.insns.iter().enumerate() {
                let target = match insn.op {
                    Op::Call { target, .. } | Op::Branch { target, .. } => target,
                    _ => continue,
                };
                if let Some(&callee) = start_of.get(&target) {
                    if callee != fi || matches!(insn.op, Op::Call { .. }) {
                        info[callee].callers.push((fi, ii));
                    }
                }
            }
        }
        Slicer {
            img,
            config,
            info,
            memo: HashMap::new(),
            stack: Vec::new(),
            evaluated: 0,
        }
    }

    /// Value of general register `n` just before the instruction at `addr`.
    pub(super) fn value_before(&mut self, function: &str, addr: u64, n: u8) -> ValueSet {
        let Some(fi) = self.img.functions.iter().position(|f| f.name == function) else {
            return ValueSet::Unknown;
        };
        let Some(ii) = self.img.functions[fi].insns.iter().position(|i| i.addr == addr) else {
            return ValueSet::Unknown;
        };
        let v = self.query(fi, ii, Loc::Reg(n), 0, false).0.unwrap_or(ValueSet::Unknown);
        if self.img.arch == Arch::A32 {
            narrow(v)
        } else {
            v
        }
    }

    fn query(&mut self, fi: usize, ii: usize, loc: Loc, hops: usize, via_def: bool) -> (Option<ValueSet>, usize) {
        let key = (fi, ii, loc, hops);
        if let Some(v) = self.memo.get(&key) {
            return (v.clone(), usize::MAX);
        }
        if let Some(pos) = self.stack.iter().position(|(k, _)| *k == key) {
            let written = via_def || self.stack[pos + 1..].iter().any(|(_, d)| *d);
            return (written.then_some(ValueSet::Unknown), pos);
        }
        self.evaluated += 1;
        if self.evaluated > self.config.max_insns {
            return (Some(ValueSet::Unknown), usize::MAX);
        }
        let depth = self.stack.len();
        self.stack.push((key, via_def));
        let mut acc = None;
        let mut dep = usize::MAX;
        if ii == 0 {
            let (v, d) = self.entry_value(fi, loc, hops);
            acc = join(acc, v);
            dep = dep.min(d);
        }
        let preds = self.info[fi].preds[ii].clone();
        for p in preds {
            if acc.as_ref().is_some_and(ValueSet::is_unknown) {
                break;
            }
            let (v, d) = self.transfer(fi, p, loc, hops);
            acc = join(acc, v);
            dep = dep.min(d);
        }
        self.stack.pop();
        if dep >= depth || acc.as_ref().is_some_and(ValueSet::is_unknown) {
            self.memo.insert(key, acc.clone());
        }
        (acc, dep)
    }

    fn entry_value(&mut self, fi: usize, loc: Loc, hops: usize) -> (Option<ValueSet>, usize) {
        if let Loc::Reg(_) = loc {
            if hops < self.config.max_caller_hops {
                if let [(cf, ci)] = self.info[fi].callers[..] {
                    return self.query(cf, ci, loc, hops + 1, false);
                }
            }
        }
        (Some(ValueSet::Unknown), usize::MAX)
    }

    fn read(&mut self, fi: usize, p: usize, r: Reg, hops: usize) -> (Option<ValueSet>, usize) {
        match r {
            Reg::Zr => (Some(ValueSet::single(0)), usize::MAX),
            Reg::Sp | Reg::Pc => (Some(ValueSet::Unknown), usize::MAX),
            Reg::Gp { n, narrow: nw } => {
                let (v, d) = self.query(fi, p, Loc::Reg(n), hops, true);
                (if nw { v.map(narrow) } else { v }, d)
            }
        }
    }

    fn width(&self, r: Reg) -> u8 {
        match (self.img.arch, r) {
            (Arch::A32, _) | (_, Reg::Gp { narrow: true, .. }) => 4,
            _ => 8,
        }
    }

    fn base_of(&self, r: Reg) -> Option<Base> {
        match r {
            Reg::Sp => Some(Base::Sp),
            r if same_gp(r, fp_reg(self.img.arch)) => Some(Base::Fp),
            _ => None,
        }
    }

    fn load(&mut self, fi: usize, p: usize, mem: &Mem, off: i64, rd: Reg, hops: usize) -> (Option<ValueSet>, usize) {
        let Some(base) = self.base_of(mem.base) else {
            return (Some(ValueSet::Unknown), usize::MAX);
        };
        let size = self.width(rd);
        let (v, d) = self.query(fi, p, Loc::Slot { base, off, size }, hops, true);
        (if size == 4 { v.map(narrow) } else { v }, d)
    }

    /// Whether `op` writes register `target` (a general register number, or
    /// `None` for sp).
    fn writes(&self, op: &Op, target: Option<u8>) -> bool {
        let hit = |r: Reg| match target {
            None => r == Reg::Sp,
            Some(n) => same_gp(r, n),
        };
        let wb = |m: &Mem| m.writeback && hit(m.base);
        match op {
            Op::MovImm { rd, .. }
            | Op::MovK { rd, .. }
            | Op::MovReg { rd, .. }
            | Op::AluImm { rd, .. }
            | Op::LoadLit { rd, .. }
            | Op::Adr { rd, .. } => hit(*rd),
            Op::Load { rd, mem } => hit(*rd) || wb(mem),
            Op::LoadPair { r1, r2, mem } => hit(*r1) || hit(*r2) || wb(mem),
            Op::Store { mem, .. } | Op::StorePair { mem, .. } => wb(mem),
            Op::Call { .. } | Op::CallReg { .. } => target.is_some_and(|n| call_clobbers(self.img.arch, n)),
            Op::Svc { .. } => target == Some(0),
            Op::Clobber { regs, sp, .. } => match target {
                None => *sp,
                Some(_) => regs.iter().any(|r| hit(*r)),
            },
            Op::Opaque => true,
            Op::Branch { .. } | Op::Ret | Op::Nop => false,
        }
    }

    fn transfer(&mut self, fi: usize, p: usize, loc: Loc, hops: usize) -> (Option<ValueSet>, usize) {
        let img = self.img;
        let op = &img.functions[fi].insns[p].op;
        let unknown = (Some(ValueSet::Unknown), usize::MAX);
        match loc {
            Loc::Reg(n) => {
                let fix = |r: Reg, v: ValueSet| match r {
                    Reg::Gp { narrow: true, .. } => narrow(v),
                    _ => v,
                };
                match *op {
                    Op::MovImm { rd, imm } if same_gp(rd, n) => (Some(fix(rd, ValueSet::single(imm))), usize::MAX),
                    Op::MovK { rd, imm, shift } if same_gp(rd, n) => {
                        let (v, d) = self.query(fi, p, Loc::Reg(n), hops, true);
                        let mask = !(0xffffi64 << shift);
                        let v = v.map(|v| fix(rd, v.map_distinct(|x| (x & mask) | (imm << shift))));
                        (v, d)
                    }
                    Op::MovReg { rd, rs } if same_gp(rd, n) => {
                        let (v, d) = self.read(fi, p, rs, hops);
                        (v.map(|v| fix(rd, v)), d)
                    }
                    Op::AluImm { rd, rs, op, imm } if same_gp(rd, n) => {
                        let (v, d) = self.read(fi, p, rs, hops);
                        (v.map(|v| fix(rd, v.map_distinct(|x| op.apply(x, imm)))), d)
                    }
                    Op::Load { rd, ref mem } if same_gp(rd, n) => {
                        if mem.writeback && same_gp(mem.base, n) {
                            return unknown;
                        }
                        let mem = *mem;
                        self.load(fi, p, &mem, mem.offset, rd, hops)
                    }
                    Op::LoadPair { r1, r2, ref mem } if same_gp(r1, n) || same_gp(r2, n) => {
                        if mem.writeback && same_gp(mem.base, n) {
                            return unknown;
                        }
                        let mem = *mem;
                        let (rd, off) = if same_gp(r2, n) {
                            (r2, mem.offset + i64::from(self.width(r1)))
                        } else {
                            (r1, mem.offset)
                        };
                        self.load(fi, p, &mem, off, rd, hops)
                    }
                    Op::LoadLit { rd, addr } if same_gp(rd, n) => {
                        let v = match (img.literal_pool.get(&addr), img.string_pool.get(&addr)) {
                            (Some(v), _) => fix(rd, ValueSet::single(*v)),
                            (None, Some(s)) => ValueSet::string(s.clone()),
                            _ => ValueSet::Unknown,
                        };
                        (Some(v), usize::MAX)
                    }
                    Op::Adr { rd, addr } if same_gp(rd, n) => {
                        let v = match img.string_pool.get(&addr) {
                            Some(s) => ValueSet::string(s.clone()),
                            None => fix(rd, ValueSet::single(addr as i64)),
                        };
                        (Some(v), usize::MAX)
                    }
                    _ if self.writes(op, Some(n)) => unknown,
                    _ => self.query(fi, p, loc, hops, false),
                }
            }
            Loc::Slot { base, off, size } => {
                let base_reg = match base {
                    Base::Sp => None,
                    Base::Fp => Some(fp_reg(img.arch)),
                };
                if self.writes(op, base_reg) {
                    return unknown;
                }
                let stores: Vec<(Reg, Mem, i64)> = match *op {
                    Op::Store { rs, mem } => vec![(rs, mem, mem.offset)],
                    Op::StorePair { r1, r2, mem } => {
                        vec![(r1, mem, mem.offset), (r2, mem, mem.offset + i64::from(self.width(r1)))]
                    }
                    Op::Opaque => return unknown,
                    Op::Call { .. } | Op::CallReg { .. } if self.info[fi].escapes => return unknown,
                    _ => Vec::new(),
                };
                for (rs, mem, at) in stores {
                    match self.base_of(mem.base) {
                        // A store through an untracked pointer may alias the frame.
                        None => return unknown,
                        Some(b) if b != base => {
                            if self.info[fi].escapes {
                                return unknown;
                            }
                        }
                        Some(_) => {
                            let w = i64::from(self.width(rs));
                            if at == off && w == i64::from(size) {
                                let (v, d) = self.read(fi, p, rs, hops);
                                return (if size == 4 { v.map(narrow) } else { v }, d);
                            }
                            if at < off + i64::from(size) && off < at + w {
                                return unknown;
                            }
                        }
                    }
                }
                self.query(fi, p, loc, hops, false)
            }
        }
    }
}
