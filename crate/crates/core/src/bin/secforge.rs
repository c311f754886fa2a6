// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use secforge::ir::interp::{ground_truth_trace, parse_run};
use secforge::pipeline::{
    analyze_library, load_flags, load_library, read_input, run_analyze_lib, run_gen_profile, run_pipeline,
    run_scan_bin, write_output, Caches, PipelineConfig,
};
use secforge::policy::{
    histogram, optimize_order, parse_cve_map, parse_trace, score_cve, serialize_trace, simulate_trace,
};
use secforge::profile::{load_syscall_table, parse_profile, serialize_profile, Arch, DefaultAction};
use secforge::taint::backward_taint;
use secforge::Error;

#[derive(Parser)]
#[command(
    name = "secforge",
    version,
    about = "Syscall allowlist generation from library IR and binary disassembly"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, global = true, default_value = "a64")]
    arch: Arch,
    #[arg(long, global = true)]
    ir: Option<PathBuf>,
    #[arg(long, global = true)]
    aliases: Option<PathBuf>,
    #[arg(long, global = true)]
    apis: Option<PathBuf>,
    #[arg(long, global = true)]
    wrappers: Option<PathBuf>,
    #[arg(long, global = true)]
    macros: Option<PathBuf>,
    #[arg(long, global = true)]
    domains: Option<PathBuf>,
    #[arg(long = "bin-dis", global = true)]
    bin_dis: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long = "flags-dir", global = true)]
    flags_dir: Option<PathBuf>,
    #[arg(long = "syscall-dir", global = true)]
    syscall_dir: Option<PathBuf>,
    #[arg(long = "cve-map", global = true)]
    cve_map: Option<PathBuf>,
    #[arg(long, global = true)]
    trace: Option<PathBuf>,
    /// Profile to read; defaults to `<out>/profile.json`.
    #[arg(long, global = true)]
    profile: Option<PathBuf>,
    #[arg(long = "default-action", global = true, default_value = "errno")]
    default_action: DefaultAction,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[arg(long = "slice-budget", global = true, default_value_t = 500)]
    slice_budget: usize,
    #[arg(long = "path-budget", global = true, default_value_t = 4096)]
    path_budget: usize,
    #[arg(long = "taint-depth", global = true, default_value_t = 32)]
    taint_depth: usize,
}

#[derive(Subcommand)]
enum Cmd {
    /// Library analysis: writes mapping.json.
    AnalyzeLib,
    /// Binary scan: writes callsites.json.
    ScanBin,
    /// Profile generation: writes profile.json.
    GenProfile,
    /// analyze-lib, scan-bin and gen-profile in order.
    Pipeline,
    /// Evaluates a trace against a profile; writes report.json.
    Simulate,
    /// Scores CVE mitigation; writes cve.json.
    ScoreCve,
    /// Reorders rules by trace frequency; writes profile.optimized.json.
    OptimizeOrder,
    /// Dumps the merged call graph.
    Graph,
    /// Dumps the backward-taint graph of one syscall argument.
    Taint {
        #[arg(long)]
        api: String,
        /// Syscall site, `function#stmt` or `function#entry`.
        #[arg(long)]
        site: String,
        #[arg(long)]
        arg: usize,
    },
    /// Runs a program description on the IR interpreter and writes its trace.
    Trace {
        #[arg(long)]
        run: PathBuf,
    },
    /// Looks up a syscall by name or number.
    Table { key: String },
}

impl Common {
    fn config(&self) -> PipelineConfig {
        let mut c = PipelineConfig::new(self.arch, &self.out);
        c.ir = self.ir.clone();
        c.aliases = self.aliases.clone();
        c.apis = self.apis.clone();
        c.wrappers = self.wrappers.clone();
        c.macros = self.macros.clone();
        c.domains = self.domains.clone();
        c.flags_dir = self.flags_dir.clone();
        c.syscall_dir = self.syscall_dir.clone();
        c.bin_dis = self.bin_dis.clone();
        c.cve_map = self.cve_map.clone();
        c.default_action = self.default_action;
        c.budgets.slice.max_insns = self.slice_budget;
        c.budgets.symexec.max_paths = self.path_budget;
        c.budgets.taint.max_depth = self.taint_depth;
        c
    }

    fn profile_path(&self) -> PathBuf {
        self.profile.clone().unwrap_or_else(|| self.out.join("profile.json"))
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn emit(out: &Path, name: &str, text: &str) -> anyhow::Result<()> {
    let path = write_output(out, name, text)?;
    print!("{text}");
    log::info!("wrote {}", path.display());
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let c = &cli.common;
    let cfg = c.config();
    let caches = Caches::default();
    match &cli.cmd {
        Cmd::AnalyzeLib => {
            let map = run_analyze_lib(&cfg, &caches)?;
            log::info!("{} APIs analysed", map.entries.len());
        }
        Cmd::ScanBin => {
            let scan = run_scan_bin(&cfg)?;
            log::info!(
                "{} callsites, {} direct syscalls",
                scan.callsites.len(),
                scan.direct.len()
            );
        }
        Cmd::GenProfile => {
            let out = run_gen_profile(&cfg)?;
            log::info!("{} allow rules", out.profile.rules.len());
        }
        Cmd::Pipeline => {
            let out = run_pipeline(&cfg, &caches)?;
            print!("{}", serialize_profile(&out.profile));
        }
        Cmd::Simulate => {
            let profile = parse_profile(&read_input(Some(&c.profile_path()), "profile")?)?;
            let trace = parse_trace(&read_input(c.trace.as_deref(), "trace")?)?;
            let table = load_syscall_table(c.arch, c.syscall_dir.as_deref())?;
            let trace: Vec<_> = trace.iter().map(|e| e.resolved(&table)).collect();
            let report = simulate_trace(&profile, &trace);
            emit(&c.out, "report.json", &to_json(&report))?;
        }
        Cmd::ScoreCve => {
            let profile = parse_profile(&read_input(Some(&c.profile_path()), "profile")?)?;
            let cves = match &c.cve_map {
                Some(p) => parse_cve_map(&read_input(Some(p), "CVE map")?)?,
                None => parse_cve_map(include_str!("../../data/cve_map.json"))?,
            };
            let table = load_syscall_table(c.arch, c.syscall_dir.as_deref())?;
            let flags = load_flags(c.arch, c.flags_dir.as_deref())?;
            let score = score_cve(&profile, &cves, &table, &flags);
            for d in &score.diagnostics {
                log::warn!("{d}");
            }
            emit(&c.out, "cve.json", &to_json(&score))?;
        }
        Cmd::OptimizeOrder => {
            let profile = parse_profile(&read_input(Some(&c.profile_path()), "profile")?)?;
            let trace = parse_trace(&read_input(c.trace.as_deref(), "trace")?)?;
            let table = load_syscall_table(c.arch, c.syscall_dir.as_deref())?;
            let optimized = optimize_order(&profile, &histogram(&trace, &table));
            emit(&c.out, "profile.optimized.json", &serialize_profile(&optimized))?;
        }
        Cmd::Graph => {
            let lib = load_library(&cfg)?;
            let graph = secforge::callgraph::build_callgraph(&lib.prog)?;
            emit(&c.out, "callgraph.json", &graph.to_json())?;
        }
        Cmd::Taint { api, site, arg } => {
            let lib = load_library(&cfg)?;
            let flags = load_flags(c.arch, c.flags_dir.as_deref())?;
            let table = load_syscall_table(c.arch, c.syscall_dir.as_deref())?;
            let a = analyze_library(&lib, &flags, &table, &cfg.budgets, &caches)?;
            let s = a
                .sites
                .iter()
                .find(|s| s.site.to_string() == *site)
                .with_context(|| format!("no syscall site `{site}`"))?;
            let ddg = backward_taint(api, s, *arg, &lib.prog, &a.graph, &caches.taint, &cfg.budgets.taint)?;
            emit(&c.out, "taint.json", &to_json(&ddg))?;
        }
        Cmd::Trace { run } => {
            let lib = load_library(&cfg)?;
            let steps = parse_run(&read_input(Some(run), "run description")?)?;
            let events = ground_truth_trace(&lib.prog, &lib.macros, &steps).map_err(|e| anyhow::anyhow!("{e}"))?;
            let table = load_syscall_table(c.arch, c.syscall_dir.as_deref())?;
            let events: Vec<_> = events.iter().map(|e| e.resolved(&table)).collect();
            emit(&c.out, "trace.jsonl", &serialize_trace(&events))?;
        }
        Cmd::Table { key } => {
            let table = load_syscall_table(c.arch, c.syscall_dir.as_deref())?;
            let hit = match key.parse::<i64>() {
                Ok(nr) => table.name_of(nr).map(|n| (nr, n.to_string())),
                Err(_) => table.number_of(key).map(|nr| (nr, key.clone())),
            };
            let (nr, name) = hit.with_context(|| format!("`{key}` is not in the {} table", c.arch))?;
            println!("{name} {nr}");
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct Failure {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    stage: Option<String>,
    kind: &'static str,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.common.jobs > 0 {
        // A second initialisation only fails if a pool already exists.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.common.jobs)
            .build_global();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (stage, inner) = match e.downcast_ref::<Error>() {
                Some(Error::Stage { stage, source }) => (Some(stage.clone()), Some(source.as_ref())),
                Some(other) => (None, Some(other)),
                None => (None, None),
            };
            let kind = match inner {
                Some(Error::Config(_)) => "config",
                Some(Error::Syntax { .. }) => "syntax",
                Some(Error::Schema(_)) => "schema",
                Some(_) => "analysis",
                None => "other",
            };
            let f = Failure {
                error: e.to_string(),
                stage,
                kind,
            };
            eprintln!("{}", serde_json::to_string(&f).expect("serializable"));
            if kind == "config" {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
