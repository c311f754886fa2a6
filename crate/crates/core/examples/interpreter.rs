// SPDX-License-Identifier: Apache-2.0
//! Runs the sample libc on concrete inputs to get ground-truth syscalls.

use secforge::ir::interp::{Interpreter, Value};
use secforge::ir::parse_api_list;
use secforge::ir::parse_ir;

fn main() -> anyhow::Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let prog = parse_ir(&std::fs::read_to_string(format!("{dir}/mini-libc.gcfg"))?)?;
    let macros = parse_api_list(&std::fs::read_to_string(
        secforge::profile::data_dir().join("macros.txt"),
    )?)?;
    let mut interp = Interpreter::new(&prog, &macros);
    for mode in ["r", "w", "a", "r+", "w+", "a+", "x"] {
        interp.call("fopen", vec![Value::Str("/tmp/f".into()), Value::Str(mode.into())])?;
    }
    for level in 0..5 {
        interp.call("logmsg", vec![Value::Int(level), Value::Str("hi".into())])?;
    }
    for e in interp.events() {
        println!("{:<10} {:?}", e.name.as_deref().unwrap_or("?"), e.args);
    }
    Ok(())
}
