// SPDX-License-Identifier: Apache-2.0

use std::collections::HashMap;

use serde::Serialize;

use super::{IrFunction, Stmt};

/// Statement-level control-flow graph of one function.
///
/// Node ids are the positional statement ids of [`IrFunction::statements`].
/// Edges form a multigraph: a `cond` whose two arms name the same label
/// still contributes two edges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StatementCfg {
    pub nodes: usize,
    pub edges: Vec<(usize, usize)>,
    /// `None` for a function with an empty body.
    pub entry: Option<usize>,
}

impl StatementCfg {
    pub fn successors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |(a, _)| *a == node).map(|&(_, b)| b)
    }

    pub fn predecessors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |(_, b)| *b == node).map(|&(a, _)| a)
    }
}

pub fn build_function_cfg(f: &IrFunction) -> StatementCfg {
    let mut first_of_block = HashMap::new();
    let mut id = 0;
    for b in &f.blocks {
        first_of_block.insert(b.label.as_str(), id);
        id += b.stmts.len();
    }
    let total = id;
    let mut edges = Vec::new();
    for (id, stmt) in f.statements() {
        if stmt.is_terminator() {
            for target in stmt.jump_targets() {
                edges.push((id, first_of_block[target]));
            }
        } else if id + 1 < total {
            edges.push((id, id + 1));
        }
    }
    StatementCfg {
        nodes: total,
        edges,
        entry: (total > 0).then_some(0),
    }
}

/// Post-dominator sets over a statement CFG; exit is every node without
/// successors (returns).
pub(crate) fn post_dominators(cfg: &StatementCfg) -> Vec<Vec<bool>> {
    let n = cfg.nodes;
    let mut succ = vec![Vec::new(); n];
    for &(a, b) in &cfg.edges {
        succ[a].push(b);
    }
    let mut pdom = vec![vec![true; n]; n];
    for (i, s) in succ.iter().enumerate() {
        if s.is_empty() {
            pdom[i] = vec![false; n];
            pdom[i][i] = true;
        }
    }
    let mut changed = true;
    while changed {
        changed = false;
        for i in (0..n).rev() {
            if succ[i].is_empty() {
                continue;
            }
            let mut next = vec![true; n];
            for &s in &succ[i] {
                for (k, v) in next.iter_mut().enumerate() {
                    *v = *v && pdom[s][k];
                }
            }
            next[i] = true;
            if next != pdom[i] {
                pdom[i] = next;
                changed = true;
            }
        }
    }
    pdom
}

/// Branch statements (`cond`/`switch`) that `node` is control dependent on.
pub(crate) fn controlling_branches(f: &IrFunction, cfg: &StatementCfg, pdom: &[Vec<bool>], node: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for (b, stmt) in f.statements() {
        if !matches!(stmt, Stmt::Cond { .. } | Stmt::Switch { .. }) {
            continue;
        }
        // node is control dependent on b if some successor of b is
        // post-dominated by node while node does not strictly post-dominate b.
        let strictly_pdom_b = node != b && pdom[b][node];
        if strictly_pdom_b {
            continue;
        }
        if cfg.successors(b).any(|s| pdom[s][node]) {
            out.push(b);
        }
    }
    out
}
