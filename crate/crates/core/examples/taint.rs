// SPDX-License-Identifier: Apache-2.0
//! Backward taint from openat's flags argument to the fopen mode string.

use secforge::pipeline::{analyze_library, load_flags, load_library, Caches, PipelineConfig};
use secforge::profile::{load_syscall_table, Arch};
use secforge::taint::{backward_taint, classify_sources};

fn main() -> anyhow::Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let mut cfg = PipelineConfig::new(Arch::A64, "unused");
    cfg.ir = Some(format!("{dir}/mini-libc.gcfg").into());
    cfg.apis = Some(format!("{dir}/mini-libc.apis").into());
    let lib = load_library(&cfg)?;
    let caches = Caches::default();
    let a = analyze_library(
        &lib,
        &load_flags(cfg.arch, None)?,
        &load_syscall_table(cfg.arch, None)?,
        &cfg.budgets,
        &caches,
    )?;

    let site = a
        .sites
        .iter()
        .find(|s| s.site.function == "__libc_openat")
        .expect("openat site");
    let ddg = backward_taint("fopen", site, 2, &lib.prog, &a.graph, &caches.taint, &cfg.budgets.taint)?;
    for e in &ddg.edges {
        println!("{:?} -> {:?}", e.from, e.to);
    }
    println!("sources: {:?}", classify_sources(&ddg));
    Ok(())
}
