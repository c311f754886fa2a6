// SPDX-License-Identifier: Apache-2.0

//! Stage orchestration: library analysis, binary scan and profile
//! generation, each with a file artifact.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use crate::binscan::{parse_disassembly, scan_binary, ScanResult, SliceConfig};
use crate::callgraph::{build_callgraph, CallGraph};
use crate::domain::{DomainCatalog, FlagTable, ParamDomains};
use crate::ir::{parse_alias_graph, parse_api_list, parse_ir, parse_wrapper_list, IrProgram, SiteId};
use crate::profile::{generate_profile, load_syscall_table, Arch, DefaultAction, ProfileOutput, SyscallTable};
use crate::symexec::{resolve_arg_mapping, summarize_all, ArgDomains, ArgRelationSummary, SummaryCache, SymexecConfig};
use crate::sysident::{
    build_api_syscall_map, identify_syscall_functions, ApiSyscallMap, SiteArgMapping, SyscallName, SyscallSite,
};
use crate::taint::{backward_taint, is_pointer_arg, TaintCache, TaintConfig};
use crate::{Error, Result};

pub const MAPPING_FILE: &str = "mapping.json";
pub const CALLSITES_FILE: &str = "callsites.json";
pub const PROFILE_FILE: &str = "profile.json";

/// Analysis budgets.
#[derive(Debug, Clone, Default)]
pub struct Budgets {
    pub taint: TaintConfig,
    pub symexec: SymexecConfig,
    pub slice: SliceConfig,
}

/// Shared memo tables; reusing them makes later runs warm.
#[derive(Debug, Default)]
pub struct Caches {
    pub taint: TaintCache,
    pub summaries: SummaryCache,
}

/// Parsed library inputs.
#[derive(Debug, Clone)]
pub struct Library {
    pub prog: IrProgram,
    pub macros: BTreeSet<String>,
    pub catalog: DomainCatalog,
}

pub struct LibraryAnalysis {
    pub graph: CallGraph,
    pub sites: Vec<SyscallSite>,
    pub map: ApiSyscallMap,
    pub summaries: BTreeMap<String, Arc<ArgRelationSummary>>,
    pub param_domains: ParamDomains,
    pub diagnostics: Vec<String>,
}

/// Call graph, syscall sites, API map, taint and summaries, with argument
/// mappings attached to every API entry.
pub fn analyze_library(
    lib: &Library,
    flags: &FlagTable,
    table: &SyscallTable,
    budgets: &Budgets,
    caches: &Caches,
) -> Result<LibraryAnalysis> {
    let prog = &lib.prog;
    let graph = build_callgraph(prog)?;
    let (sites, diags) = identify_syscall_functions(prog, &lib.macros, Some(table));
    let mut map = build_api_syscall_map(prog, &graph, &sites)?;
    let param_domains = lib.catalog.param_domains(prog, flags)?;
    let summaries = summarize_all(prog, &graph, &param_domains, &caches.summaries, &budgets.symexec);

    let by_id: BTreeMap<&SiteId, &SyscallSite> = sites.iter().map(|s| (&s.site, s)).collect();
    let filled: Vec<(String, Vec<SiteArgMapping>)> = map
        .entries
        .par_iter()
        .map(|(api, entry)| {
            let canonical = prog.canonical(api).to_string();
            let api_domains: ArgDomains = (0..entry.params.len())
                .filter_map(|j| param_domains.get(&(canonical.clone(), j)).map(|d| (j, d.clone())))
                .collect();
            let mut out = Vec::new();
            for r in &entry.sites {
                let SyscallName::Named(name) = &r.syscall else { continue };
                let Some(site) = by_id.get(&r.id) else { continue };
                for i in 0..r.nargs {
                    if is_pointer_arg(prog, site, i) {
                        out.push(SiteArgMapping {
                            site: r.id.clone(),
                            syscall_arg_index: i,
                            pointer: true,
                            mapping: None,
                        });
                        continue;
                    }
                    let (pointer, mapping) =
                        match backward_taint(api, site, i, prog, &graph, &caches.taint, &budgets.taint) {
                            Ok(ddg) => (false, resolve_arg_mapping(&ddg, &summaries, &api_domains, name)),
                            Err(Error::PointerArgument { .. }) => (true, None),
                            Err(e) => return Err(e),
                        };
                    out.push(SiteArgMapping {
                        site: r.id.clone(),
                        syscall_arg_index: i,
                        pointer,
                        mapping,
                    });
                }
            }
            Ok((api.clone(), out))
        })
        .collect::<Result<_>>()?;
    for (api, mappings) in filled {
        let entry = map.entries.get_mut(&api).expect("entry exists");
        entry.arg_mappings = mappings;
        let canonical = prog.canonical(&api);
        for (j, p) in entry.params.iter_mut().enumerate() {
            let key = [api.as_str(), canonical]
                .into_iter()
                .map(|f| format!("{f}:{j}"))
                .find(|k| lib.catalog.bindings.contains_key(k));
            if let Some(k) = key {
                let dom = &lib.catalog.bindings[&k];
                p.flags = lib.catalog.domains[dom].is_flags();
                p.domain = Some(dom.clone());
            }
        }
    }
    Ok(LibraryAnalysis {
        graph,
        sites,
        map,
        summaries,
        param_domains,
        diagnostics: diags
            .into_iter()
            .map(|d| format!("{}: {}", d.site, d.message))
            .collect(),
    })
}

/// Scans a binary against the API map.
pub fn scan(map: &ApiSyscallMap, img_text: &str, arch: Arch, budgets: &Budgets) -> Result<ScanResult> {
    let img = parse_disassembly(img_text, arch)?;
    let arity: BTreeMap<String, usize> = map.entries.iter().map(|(k, e)| (k.clone(), e.params.len())).collect();
    Ok(scan_binary(&img, &arity, &budgets.slice))
}

/// Every path the pipeline reads or writes.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub arch: Arch,
    pub ir: Option<PathBuf>,
    pub aliases: Option<PathBuf>,
    pub apis: Option<PathBuf>,
    pub wrappers: Option<PathBuf>,
    /// Defaults to the shipped macro list.
    pub macros: Option<PathBuf>,
    pub domains: Option<PathBuf>,
    /// Directory holding `<arch>.json` flag tables; built-ins otherwise.
    pub flags_dir: Option<PathBuf>,
    /// Directory holding `<arch>.json` syscall tables; built-ins otherwise.
    pub syscall_dir: Option<PathBuf>,
    pub bin_dis: Option<PathBuf>,
    pub cve_map: Option<PathBuf>,
    pub out: PathBuf,
    pub default_action: DefaultAction,
    pub budgets: Budgets,
}

impl PipelineConfig {
    pub fn new(arch: Arch, out: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            arch,
            ir: None,
            aliases: None,
            apis: None,
            wrappers: None,
            macros: None,
            domains: None,
            flags_dir: None,
            syscall_dir: None,
            bin_dis: None,
            cve_map: None,
            out: out.into(),
            default_action: DefaultAction::default(),
            budgets: Budgets::default(),
        }
    }

    /// Rejects zero budgets.
    pub fn validate(&self) -> Result<()> {
        let b = &self.budgets;
        if b.taint.max_depth == 0
            || b.symexec.max_paths == 0
            || b.symexec.max_steps_per_path == 0
            || b.slice.max_insns == 0
        {
            return Err(Error::Config("budgets must be positive".into()));
        }
        Ok(())
    }
}

pub fn read_input(path: Option<&Path>, what: &str) -> Result<String> {
    let path = path.ok_or_else(|| Error::Config(format!("missing {what} path")))?;
    if !path.exists() {
        return Err(Error::Config(format!("{what} file {} does not exist", path.display())));
    }
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_optional(path: Option<&Path>, what: &str) -> Result<Option<String>> {
    match path {
        None => Ok(None),
        Some(p) => read_input(Some(p), what).map(Some),
    }
}

pub fn write_output(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn load_flags(arch: Arch, dir: Option<&Path>) -> Result<FlagTable> {
    let t = match dir {
        Some(d) => FlagTable::parse(&read_input(Some(&d.join(format!("{arch}.json"))), "flag table")?)?,
        None => FlagTable::builtin(arch)?,
    };
    if t.arch != arch {
        return Err(Error::ArchMismatch {
            expected: arch.to_string(),
            found: t.arch.to_string(),
        });
    }
    Ok(t)
}

pub fn load_library(cfg: &PipelineConfig) -> Result<Library> {
    let ir = read_input(cfg.ir.as_deref(), "IR")?;
    let apis = parse_api_list(&read_input(cfg.apis.as_deref(), "API list")?)?;
    let mut prog = parse_ir(&ir)?;
    if let Some(text) = read_optional(cfg.aliases.as_deref(), "alias")? {
        prog = prog.with_aliases(&parse_alias_graph(&text)?)?;
    }
    if let Some(text) = read_optional(cfg.wrappers.as_deref(), "wrapper list")? {
        prog = prog.with_wrappers(parse_wrapper_list(&text)?);
    }
    prog = prog.with_apis(apis);
    let macros = match read_optional(cfg.macros.as_deref(), "macro list")? {
        Some(text) => parse_api_list(&text)?,
        None => parse_api_list(include_str!("../data/macros.txt"))?,
    };
    // Macro invocations look like calls; give the call graph something to resolve them to.
    for m in &macros {
        if !prog.is_function(m) {
            prog.externs.insert(m.clone());
        }
    }
    let catalog = match read_optional(cfg.domains.as_deref(), "domain catalog")? {
        Some(text) => DomainCatalog::parse(&text)?,
        None => DomainCatalog::default(),
    };
    Ok(Library { prog, macros, catalog })
}

/// `analyze-lib`: writes the API mapping.
pub fn run_analyze_lib(cfg: &PipelineConfig, caches: &Caches) -> Result<ApiSyscallMap> {
    let stage = |e: Error| e.in_stage("analyze-lib");
    cfg.validate().map_err(stage)?;
    let lib = load_library(cfg).map_err(stage)?;
    let flags = load_flags(cfg.arch, cfg.flags_dir.as_deref()).map_err(stage)?;
    let table = load_syscall_table(cfg.arch, cfg.syscall_dir.as_deref()).map_err(stage)?;
    let a = analyze_library(&lib, &flags, &table, &cfg.budgets, caches).map_err(stage)?;
    for d in &a.diagnostics {
        log::warn!("{d}");
    }
    write_output(&cfg.out, MAPPING_FILE, &a.map.to_json()).map_err(stage)?;
    Ok(a.map)
}

fn load_mapping(cfg: &PipelineConfig) -> Result<ApiSyscallMap> {
    ApiSyscallMap::from_json(&read_input(Some(&cfg.out.join(MAPPING_FILE)), "mapping")?)
}

/// `scan-bin`: reads the mapping from the output directory and writes the
/// callsite list.
pub fn run_scan_bin(cfg: &PipelineConfig) -> Result<ScanResult> {
    let stage = |e: Error| e.in_stage("scan-bin");
    let map = load_mapping(cfg).map_err(stage)?;
    let text = read_input(cfg.bin_dis.as_deref(), "disassembly").map_err(stage)?;
    let result = scan(&map, &text, cfg.arch, &cfg.budgets).map_err(stage)?;
    for d in &result.diagnostics {
        log::warn!("{d}");
    }
    let json = serde_json::to_string_pretty(&result).expect("scan result serializes") + "\n";
    write_output(&cfg.out, CALLSITES_FILE, &json).map_err(stage)?;
    Ok(result)
}

/// `gen-profile`: combines mapping and callsites into the profile.
pub fn run_gen_profile(cfg: &PipelineConfig) -> Result<ProfileOutput> {
    let stage = |e: Error| e.in_stage("gen-profile");
    let map = load_mapping(cfg).map_err(stage)?;
    let text = read_input(Some(&cfg.out.join(CALLSITES_FILE)), "callsites").map_err(stage)?;
    let scan: ScanResult = serde_json::from_str(&text)
        .map_err(|e| Error::Schema(format!("callsites: {e}")))
        .map_err(stage)?;
    let table = load_syscall_table(cfg.arch, cfg.syscall_dir.as_deref()).map_err(stage)?;
    let out = generate_profile(&map, &scan.callsites, &scan.direct, &table, cfg.default_action).map_err(stage)?;
    for d in &out.diagnostics {
        log::warn!("{d}");
    }
    write_output(&cfg.out, PROFILE_FILE, &crate::profile::serialize_profile(&out.profile)).map_err(stage)?;
    Ok(out)
}

/// `pipeline`: analyze-lib, scan-bin and gen-profile in order.
pub fn run_pipeline(cfg: &PipelineConfig, caches: &Caches) -> Result<ProfileOutput> {
    run_analyze_lib(cfg, caches)?;
    run_scan_bin(cfg)?;
    run_gen_profile(cfg)
}
