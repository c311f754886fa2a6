// SPDX-License-Identifier: Apache-2.0
//! Resolves the indirect calls in the proto_ops fixture and prints the
//! candidate sets at each refinement level.

use secforge::callgraph::build_callgraph;
use secforge::ir::parse_ir;

fn main() -> anyhow::Result<()> {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/proto_ops.gcfg"))?;
    let prog = parse_ir(&text)?;
    let graph = build_callgraph(&prog)?;
    for r in &graph.resolutions {
        println!("{} ({:?})", r.site, r.level);
        println!("  address-taken  {:?}", r.address_taken);
        println!("  type-matched   {:?}", r.type_matched);
        println!("  object-refined {:?}", r.object_refined);
    }
    println!("{} direct, {} indirect edges", graph.direct.len(), graph.indirect.len());
    Ok(())
}
