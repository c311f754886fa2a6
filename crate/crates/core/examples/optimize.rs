// SPDX-License-Identifier: Apache-2.0
//! Moves the most frequent syscalls to the front of the rule list.

use secforge::policy::{histogram, optimize_order, parse_trace};
use secforge::profile::{load_syscall_table, parse_profile};

fn main() -> anyhow::Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let profile = parse_profile(&std::fs::read_to_string(format!("{dir}/sendprog.seccomp.json"))?)?;
    let trace = parse_trace(&std::fs::read_to_string(format!("{dir}/sendprog.trace.jsonl"))?)?;
    let table = load_syscall_table(profile.arch, None)?;
    let names = |p: &secforge::profile::SeccompProfile| p.rules.iter().map(|r| r.name.clone()).collect::<Vec<_>>();
    println!("before: {:?}", names(&profile));
    println!(
        "after:  {:?}",
        names(&optimize_order(&profile, &histogram(&trace, &table)))
    );
    Ok(())
}
