// SPDX-License-Identifier: Apache-2.0
//! Replays recorded traces against the stored profiles.

use secforge::policy::{parse_trace, simulate_trace};
use secforge::profile::parse_profile;

fn main() -> anyhow::Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    for name in ["netprog", "fileprog", "logprog", "sendprog", "armprog"] {
        let profile = parse_profile(&std::fs::read_to_string(format!("{dir}/{name}.seccomp.json"))?)?;
        let trace = parse_trace(&std::fs::read_to_string(format!("{dir}/{name}.trace.jsonl"))?)?;
        let r = simulate_trace(&profile, &trace);
        println!("{name:<9} {} allowed, {} denied", r.allowed, r.denied);
    }
    // Mode "w" is outside what fileprog passes to fopen.
    let profile = parse_profile(&std::fs::read_to_string(format!("{dir}/fileprog.seccomp.json"))?)?;
    let bad = parse_trace("{\"nr\":56,\"args\":[-100,null,577,438]}\n")?;
    println!(
        "fileprog with O_WRONLY|O_CREAT|O_TRUNC: {:?}",
        simulate_trace(&profile, &bad).first_denied
    );
    Ok(())
}
