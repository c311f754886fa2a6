// SPDX-License-Identifier: Apache-2.0
//! Syscall numbering differs per architecture.

use secforge::profile::{load_syscall_table, Arch};

fn main() -> anyhow::Result<()> {
    for arch in [Arch::A64, Arch::A32, Arch::X86_64] {
        let t = load_syscall_table(arch, None)?;
        let show = |n: &str| t.number_of(n).map_or("-".to_string(), |v| v.to_string());
        println!(
            "{:<7} {:>3} entries  read={} openat={} socket={}",
            arch.as_str(),
            t.len(),
            show("read"),
            show("openat"),
            show("socket")
        );
    }
    Ok(())
}
