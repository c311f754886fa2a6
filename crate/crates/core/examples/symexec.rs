// SPDX-License-Identifier: Apache-2.0
//! Symbolic execution over the mode domain turns fopen's mode string into a
//! table of open flags.

use secforge::pipeline::{analyze_library, load_flags, load_library, Caches, PipelineConfig};
use secforge::profile::{load_syscall_table, Arch};

fn main() -> anyhow::Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let mut cfg = PipelineConfig::new(Arch::A64, "unused");
    cfg.ir = Some(format!("{dir}/mini-libc.gcfg").into());
    cfg.apis = Some(format!("{dir}/mini-libc.apis").into());
    cfg.domains = Some(format!("{dir}/mini-libc.domains.json").into());
    let lib = load_library(&cfg)?;
    let a = analyze_library(
        &lib,
        &load_flags(cfg.arch, None)?,
        &load_syscall_table(cfg.arch, None)?,
        &cfg.budgets,
        &Caches::default(),
    )?;

    if let Some(s) = a.summaries.get("__fopen_mode_flags") {
        println!("__fopen_mode_flags: {}", serde_json::to_string(&s.returns())?);
    }
    for api in ["fopen", "logmsg"] {
        for m in a.map.entries[api]
            .arg_mappings
            .iter()
            .filter_map(|m| m.mapping.as_ref())
        {
            println!(
                "{api} -> {}[{}]: {}",
                m.syscall_name,
                m.syscall_arg_index,
                serde_json::to_string(&m.value_fn)?
            );
        }
    }
    Ok(())
}
