// SPDX-License-Identifier: Apache-2.0
//! Scores the stored profiles against the bundled CVE map.

use secforge::policy::{parse_cve_map, score_cve};
use secforge::profile::{data_dir, load_syscall_table, parse_profile, Arch};

fn main() -> anyhow::Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let cves = parse_cve_map(&std::fs::read_to_string(data_dir().join("cve_map.json"))?)?;
    let table = load_syscall_table(Arch::A64, None)?;
    let flags = secforge::pipeline::load_flags(Arch::A64, None)?;
    for name in ["netprog", "optprog", "rawprog", "dynprog"] {
        let profile = parse_profile(&std::fs::read_to_string(format!("{dir}/{name}.seccomp.json"))?)?;
        let s = score_cve(&profile, &cves, &table, &flags);
        let packet = s.mitigated.iter().find(|m| m.id == "CVE-2017-7308");
        println!(
            "{name:<8} {}/{} mitigated ({} by syscall, {} by argument); CVE-2017-7308: {:?}",
            s.mitigated.len(),
            cves.len(),
            s.by_syscall_block,
            s.by_arg_block,
            packet.map(|m| m.by)
        );
    }
    Ok(())
}
