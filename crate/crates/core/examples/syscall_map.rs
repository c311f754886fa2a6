// SPDX-License-Identifier: Apache-2.0
//! Which syscalls each exported API of the sample libc can reach.

use secforge::pipeline::{analyze_library, load_flags, load_library, Caches, PipelineConfig};
use secforge::profile::{load_syscall_table, Arch};

fn main() -> anyhow::Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let mut cfg = PipelineConfig::new(Arch::A64, "unused");
    cfg.ir = Some(format!("{dir}/mini-libc.gcfg").into());
    cfg.apis = Some(format!("{dir}/mini-libc.apis").into());
    cfg.wrappers = Some(format!("{dir}/mini-libc.wrappers").into());
    cfg.aliases = Some(format!("{dir}/mini-libc.aliases").into());

    let lib = load_library(&cfg)?;
    let a = analyze_library(
        &lib,
        &load_flags(cfg.arch, None)?,
        &load_syscall_table(cfg.arch, None)?,
        &cfg.budgets,
        &Caches::default(),
    )?;
    for (api, e) in &a.map.entries {
        let tail = if e.full_allowlist {
            "  (unresolved number: everything)"
        } else {
            ""
        };
        println!("{api:<12} {:?}{tail}", e.syscalls);
    }
    Ok(())
}
