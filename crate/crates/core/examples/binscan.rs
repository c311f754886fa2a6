// SPDX-License-Identifier: Apache-2.0
//! Recovers callsite arguments from disassembly by backward slicing.

use std::collections::BTreeMap;

use secforge::binscan::{parse_disassembly, scan_binary, SliceConfig};
use secforge::profile::Arch;

fn main() -> anyhow::Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let arity: BTreeMap<String, usize> = [
        ("socket", 3),
        ("setsockopt", 5),
        ("fopen", 2),
        ("close", 1),
        ("open", 3),
    ]
    .map(|(k, v)| (k.to_string(), v))
    .into();
    for (name, arch) in [
        ("netprog", Arch::A64),
        ("rawprog", Arch::A64),
        ("fileprog", Arch::A64),
        ("armprog", Arch::A32),
    ] {
        let img = parse_disassembly(&std::fs::read_to_string(format!("{dir}/{name}.dis"))?, arch)?;
        let scan = scan_binary(&img, &arity, &SliceConfig::default());
        println!("{name}:");
        for c in &scan.callsites {
            println!("  {}@{:#x} {}{:?}", c.function, c.address, c.api, c.arg_sets);
        }
        for d in &scan.direct {
            println!("  {}@{:#x} svc nr={:?}", d.function, d.address, d.nr);
        }
    }
    Ok(())
}
