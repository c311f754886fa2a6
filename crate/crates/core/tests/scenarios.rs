// SPDX-License-Identifier: Apache-2.0

mod common;

use std::collections::BTreeMap;
use std::path::Path;

use common::*;
use secforge::binscan::{find_direct_syscalls, parse_disassembly, SliceConfig};
use secforge::pipeline::{scan, Caches};
use secforge::policy::{evaluate, simulate_trace, SyscallEvent};
use secforge::profile::{generate_profile, load_syscall_table, Arch, DefaultAction, FilterOp};
use secforge::sysident::ApiSyscallMap;
use secforge::valueset::ValueSet;

fn prog(name: &str) -> Program {
    programs().into_iter().find(|p| p.name == name).unwrap()
}

#[test]
fn netprog_allows_only_its_socket_call() {
    let p = prog("netprog");
    let profile = profile_for(&p).profile;
    let trace = ground_truth(&p);
    assert_eq!(trace.len(), 5);
    assert_eq!(simulate_trace(&profile, &trace).allowed, 5);

    let table = load_syscall_table(Arch::A64, None).unwrap();
    let denied = table
        .iter()
        .filter(|(nr, _)| {
            let any_args = SyscallEvent::numbered(*nr, vec![None; 6]);
            profile.rule_for(*nr).is_none() && !evaluate(&profile, &any_args).is_allow()
        })
        .count();
    assert_eq!(denied, 290);
    // Wrong domain on the one allowed syscall.
    let ev = SyscallEvent::numbered(198, vec![Some(17), Some(1), Some(6)]);
    assert!(!evaluate(&profile, &ev).is_allow());
}

#[test]
fn fileprog_read_only_open() {
    let profile = profile_for(&prog("fileprog")).profile;
    assert_eq!(
        profile.allowed_names().into_iter().collect::<Vec<_>>(),
        ["close", "openat"]
    );
    let openat = profile.rule_named("openat").unwrap();
    let flags = openat.args.iter().find(|f| f.index == 2).unwrap();
    assert_eq!((flags.op, flags.values.as_slice()), (FilterOp::Eq, &[0][..]));
    let write_mode = SyscallEvent::named("openat", vec![Some(-100), None, Some(577), Some(438)]);
    assert!(!evaluate(
        &profile,
        &write_mode.resolved(&load_syscall_table(Arch::A64, None).unwrap())
    )
    .is_allow());
}

#[test]
fn logprog_fd_follows_level_table() {
    let profile = profile_for(&prog("logprog")).profile;
    let w = profile.rule_named("write").unwrap();
    let fd = w.args.iter().find(|f| f.index == 0).unwrap();
    assert_eq!(fd.values, [1, 2]);
    assert!(w.args.iter().any(|f| f.index == 2 && f.values == [8]));
}

#[test]
fn dynamic_syscall_api_allows_everything() {
    let out = profile_for(&prog("dynprog"));
    assert!(out.full_allowlist);
    assert_eq!(out.profile.rules.len(), 291);
    assert!(out.profile.rules.iter().all(|r| r.args.is_empty()));
}

#[test]
fn a32_direct_syscalls_drop_stale_registers() {
    let profile = profile_for(&prog("armprog")).profile;
    assert!(profile.rule_named("exit").unwrap().args.is_empty());
    let write = profile.rule_named("write").unwrap();
    assert_eq!(write.args.iter().map(|f| f.index).collect::<Vec<_>>(), [0, 2]);
    let openat = profile.rule_named("openat").unwrap();
    let flags = openat.args.iter().find(|f| f.index == 2).unwrap();
    assert_eq!(flags.op, FilterOp::MaskedEq);
    assert_eq!(flags.mask, Some(!0x80241u64));
}

#[test]
fn empty_callsites_yield_no_rules() {
    let out = generate_profile(
        &ApiSyscallMap::default(),
        &[],
        &[],
        &load_syscall_table(Arch::A64, None).unwrap(),
        DefaultAction::Errno,
    )
    .unwrap();
    assert!(out.profile.rules.is_empty());
    assert!(!out.full_allowlist);
}

#[test]
fn movz_movk_builds_wide_constant() {
    let text = "\
0000000000400000 <f>:
  400000:\tmovz\tx1, #0x1
  400004:\tmovk\tx1, #0x2, lsl #16
  400008:\tmov\tx8, x1
  40000c:\tsvc\t#0x0
";
    let img = parse_disassembly(text, Arch::A64).unwrap();
    let d = find_direct_syscalls(&img, &SliceConfig::default());
    assert_eq!(d[0].nr, ValueSet::single(0x20001));
}

#[test]
fn svc_number_from_w8() {
    let text = "0000000000400000 <f>:\n  400000:\tmov\tw8, #63\n  400004:\tsvc\t#0\n";
    let img = parse_disassembly(text, Arch::A64).unwrap();
    let d = find_direct_syscalls(&img, &SliceConfig::default());
    assert_eq!(d.len(), 1);
    assert_eq!(d[0].nr, ValueSet::single(63));
}

#[test]
fn a32_swi_immediate_names_the_syscall() {
    let text = "00010000 <f>:\n   10000:\tmov\tr7, #0x99\n   10004:\tswi\t#0x900004\n";
    let img = parse_disassembly(text, Arch::A32).unwrap();
    let d = find_direct_syscalls(&img, &SliceConfig::default());
    // The immediate wins over whatever sits in r7.
    assert_eq!(d[0].nr, ValueSet::single(4));
}

#[test]
fn indirect_call_through_object_table_is_followed() {
    let a = analyze(&libc_config(Arch::A64, Path::new("unused")), &Caches::default());
    assert!(a.analysis.map.entries["fputs"].syscalls.contains("write"));
    let proto = analyze(&proto_ops_config(Path::new("unused")), &Caches::default());
    let close = &proto.analysis.map.entries["sock_close"].syscalls;
    assert_eq!(
        close.iter().map(String::as_str).collect::<Vec<_>>(),
        ["close", "shutdown"]
    );
}

#[test]
fn unknown_arguments_fall_back_to_no_filter() {
    let p = prog("sendprog");
    let cfg = program_config(&p, Path::new("unused"));
    let a = analyze(&cfg, &Caches::default());
    let s = scan(&a.analysis.map, &read_fixture("sendprog.dis"), Arch::A64, &cfg.budgets).unwrap();
    let send = s.callsites.iter().find(|c| c.api == "send").unwrap();
    assert!(send.arg_sets[0].is_unknown());
    assert!(send.arg_sets[2].is_unknown());
    assert_eq!(send.arg_sets[3], ValueSet::single(0));
    let profile = profile_for(&p).profile;
    assert!(profile.rule_named("close").unwrap().args.is_empty());
}

#[test]
fn traces_record_every_syscall_in_order() {
    let names = |p: &str| -> Vec<String> { ground_truth(&prog(p)).into_iter().map(|e| e.name.unwrap()).collect() };
    assert_eq!(names("logprog"), ["write", "write", "exit_group"]);
    assert_eq!(names("sendprog"), ["socket", "connect", "sendto", "sendto", "close"]);
    assert_eq!(names("dynprog"), ["getpid", "getpid", "read"]);
}

#[test]
fn callsite_arities_come_from_the_mapping() {
    let a = analyze(&libc_config(Arch::A64, Path::new("unused")), &Caches::default());
    let arity: BTreeMap<&str, usize> = a
        .analysis
        .map
        .entries
        .iter()
        .map(|(k, e)| (k.as_str(), e.params.len()))
        .collect();
    assert_eq!(arity["socket"], 3);
    assert_eq!(arity["sendto"], 6);
    assert_eq!(arity["getpid"], 0);
}
