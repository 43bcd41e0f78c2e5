//! Graphviz rendering of a window's call graph, optionally overlaid with
//! ground-truth fault propagation.
//!
//! Gray edges are the union of the per-step call edges. With a ground-truth
//! record, affected services are drawn red, and each call edge `s → c`
//! between two affected services where `c` was hit no later than `s` (and
//! `s` is not itself a root) gets a red arrow `c → s` labeled with the step
//! at which `s` was first affected.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::graphseq::GraphWindow;
use crate::sim::GroundTruth;

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

pub fn export_dot(window: &GraphWindow, truth: Option<&GroundTruth>) -> Result<String> {
    let n = window.num_nodes();
    let first = match truth {
        Some(t) => {
            if t.id != window.id() {
                return Err(Error::validation(
                    "ground truth",
                    format!("record {} does not describe window {}", t.id, window.id()),
                ));
            }
            if let Some(&bad) = t.roots.iter().chain(t.affected_per_step.iter().flatten()).find(|&&s| s >= n) {
                return Err(Error::validation(
                    "ground truth",
                    format!("service {bad} out of range for {n} services"),
                ));
            }
            t.first_affected(n)
        }
        None => vec![None; n],
    };
    let roots: BTreeSet<usize> = truth.map(|t| t.roots.iter().copied().collect()).unwrap_or_default();
    let edges: BTreeSet<(usize, usize)> = window.all_edges().iter().flatten().copied().collect();

    let mut out = String::new();
    let _ = writeln!(out, "digraph {} {{", quote(window.id()));
    let _ = writeln!(out, "  rankdir=TB;");
    let _ = writeln!(out, "  node [shape=ellipse, style=filled, fillcolor=white, color=black];");
    for (i, f) in first.iter().enumerate() {
        let label = quote(&window.node_name(i));
        match f {
            Some(step) => {
                let _ = writeln!(
                    out,
                    "  n{i} [label={label}, color=red, fillcolor=\"#f8d0d0\", xlabel=\"t={step}\"];"
                );
            }
            None => {
                let _ = writeln!(out, "  n{i} [label={label}];");
            }
        }
    }
    for &(caller, callee) in &edges {
        let _ = writeln!(out, "  n{caller} -> n{callee} [color=gray];");
    }
    for &(caller, callee) in &edges {
        if let (Some(fc), Some(fs)) = (first[callee], first[caller]) {
            if fc <= fs && !roots.contains(&caller) {
                let _ = writeln!(
                    out,
                    "  n{callee} -> n{caller} [color=red, fontcolor=red, penwidth=2, label=\"{fs}\"];"
                );
            }
        }
    }
    out.push_str("}\n");
    Ok(out)
}
