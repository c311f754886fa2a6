// SPDX-License-Identifier: Apache-2.0
//! Library analysis, binary scan and profile generation written to a
//! scratch directory, the way the `pipeline` subcommand runs them.

use secforge::pipeline::{run_pipeline, Caches, PipelineConfig};
use secforge::profile::{serialize_profile, Arch};

fn main() -> anyhow::Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let prog = std::env::args().nth(1).unwrap_or_else(|| "logprog".into());
    let arch = if prog == "armprog" { Arch::A32 } else { Arch::A64 };
    let out = tempfile::tempdir()?;
    let mut cfg = PipelineConfig::new(arch, out.path());
    cfg.ir = Some(format!("{dir}/mini-libc.gcfg").into());
    cfg.apis = Some(format!("{dir}/mini-libc.apis").into());
    cfg.wrappers = Some(format!("{dir}/mini-libc.wrappers").into());
    cfg.aliases = Some(format!("{dir}/mini-libc.aliases").into());
    cfg.domains = Some(format!("{dir}/mini-libc.domains.json").into());
    cfg.bin_dis = Some(format!("{dir}/{prog}.dis").into());

    let result = run_pipeline(&cfg, &Caches::default())?;
    for d in &result.diagnostics {
        eprintln!("note: {d}");
    }
    print!("{}", serialize_profile(&result.profile));
    for f in std::fs::read_dir(out.path())? {
        eprintln!("wrote {}", f?.file_name().to_string_lossy());
    }
    Ok(())
}
