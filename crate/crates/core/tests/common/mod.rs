// SPDX-License-Identifier: Apache-2.0
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use secforge::ir::interp::{ground_truth_trace, parse_run};
use secforge::pipeline::{
    analyze_library, load_flags, load_library, scan, Caches, Library, LibraryAnalysis, PipelineConfig,
};
use secforge::policy::SyscallEvent;
use secforge::profile::{generate_profile, load_syscall_table, Arch, DefaultAction, ProfileOutput, SyscallTable};
use serde::Deserialize;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn fixture(name: &str) -> PathBuf {
    fixtures().join(name)
}

pub fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[derive(Debug, Clone, Deserialize)]
pub struct Program {
    pub name: String,
    pub arch: Arch,
}

pub fn programs() -> Vec<Program> {
    serde_json::from_str(&read_fixture("programs.json")).expect("programs.json")
}

pub fn libc_config(arch: Arch, out: &Path) -> PipelineConfig {
    let mut c = PipelineConfig::new(arch, out);
    c.ir = Some(fixture("mini-libc.gcfg"));
    c.apis = Some(fixture("mini-libc.apis"));
    c.wrappers = Some(fixture("mini-libc.wrappers"));
    c.aliases = Some(fixture("mini-libc.aliases"));
    c.domains = Some(fixture("mini-libc.domains.json"));
    c
}

pub fn program_config(p: &Program, out: &Path) -> PipelineConfig {
    let mut c = libc_config(p.arch, out);
    c.bin_dis = Some(fixture(&format!("{}.dis", p.name)));
    c
}

pub fn proto_ops_config(out: &Path) -> PipelineConfig {
    let mut c = PipelineConfig::new(Arch::A64, out);
    c.ir = Some(fixture("proto_ops.gcfg"));
    c.apis = Some(fixture("proto_ops.apis"));
    c
}

pub struct Analyzed {
    pub lib: Library,
    pub table: SyscallTable,
    pub analysis: LibraryAnalysis,
}

pub fn analyze(cfg: &PipelineConfig, caches: &Caches) -> Analyzed {
    let lib = load_library(cfg).expect("library loads");
    let flags = load_flags(cfg.arch, None).expect("flags");
    let table = load_syscall_table(cfg.arch, None).expect("table");
    let analysis = analyze_library(&lib, &flags, &table, &cfg.budgets, caches).expect("analysis");
    Analyzed { lib, table, analysis }
}

/// Whole pipeline in memory.
pub fn profile_for(p: &Program) -> ProfileOutput {
    let cfg = program_config(p, Path::new("unused"));
    let a = analyze(&cfg, &Caches::default());
    let text = read_fixture(&format!("{}.dis", p.name));
    let s = scan(&a.analysis.map, &text, p.arch, &cfg.budgets).expect("scan");
    generate_profile(&a.analysis.map, &s.callsites, &s.direct, &a.table, DefaultAction::Errno).expect("profile")
}

/// Syscalls the program issues when its run description is interpreted.
pub fn ground_truth(p: &Program) -> Vec<SyscallEvent> {
    let cfg = program_config(p, Path::new("unused"));
    let lib = load_library(&cfg).expect("library loads");
    let table = load_syscall_table(p.arch, None).expect("table");
    let steps = parse_run(&read_fixture(&format!("{}.run.json", p.name))).expect("run description");
    ground_truth_trace(&lib.prog, &lib.macros, &steps)
        .expect("interpretable run")
        .iter()
        .map(|e| e.resolved(&table))
        .collect()
}
