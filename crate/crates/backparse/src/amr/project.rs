//! Alignment normalization and projection of graph edges onto the
//! target sentence.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

use super::graph::AugmentedGraph;
use super::paths::PATH_SELF;

/// Per-token distribution over the N+1 augmented node indices.
/// Row t (0-based) covers token position t+1.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentDist {
    pub n_tokens: usize,
    pub n_nodes: usize,
    rows: Vec<f64>,
}

impl AlignmentDist {
    pub fn from_rows(n_tokens: usize, n_nodes: usize, rows: Vec<f64>) -> AlignmentDist {
        assert_eq!(rows.len(), n_tokens * n_nodes, "alignment grid size mismatch");
        AlignmentDist { n_tokens, n_nodes, rows }
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.rows[t * self.n_nodes..(t + 1) * self.n_nodes]
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }
}

/// Spread each token's hard alignments uniformly; tokens without any
/// alignment put all mass on the NULL node (index 0).
///
/// `pairs` holds (token_pos, node_id) with 1-based token positions and
/// augmented node ids in 1..=N.
pub fn normalize_alignment(pairs: &[(usize, usize)], n_tokens: usize, n_graph_nodes: usize) -> Result<AlignmentDist> {
    let n_nodes = n_graph_nodes + 1;
    for &(pos, node) in pairs {
        if pos < 1 || pos > n_tokens {
            return Err(Error::Data(format!("alignment token position {pos} out of range 1..={n_tokens}")));
        }
        if node < 1 || node > n_graph_nodes {
            return Err(Error::Data(format!("alignment node id {node} out of range 1..={n_graph_nodes}")));
        }
    }
    let mut rows = vec![0.0; n_tokens * n_nodes];
    for t in 0..n_tokens {
        let nodes: BTreeSet<usize> = pairs.iter().filter(|(p, _)| *p == t + 1).map(|&(_, n)| n).collect();
        if nodes.is_empty() {
            rows[t * n_nodes] = 1.0;
        } else {
            let w = 1.0 / nodes.len() as f64;
            for n in nodes {
                rows[t * n_nodes + n] = w;
            }
        }
    }
    Ok(AlignmentDist {
        n_tokens,
        n_nodes,
        rows,
    })
}

/// A projected labeled arc over sentence positions (1-based);
/// `from >= to` always holds.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ProjectedArc {
    pub from: usize,
    pub to: usize,
    pub label: String,
}

/// Project graph edges onto sentence positions via hard alignments.
///
/// For every edge (u, label, w) and every pair of aligned positions
/// (p_u, p_w), the later position becomes `from`; the label carries a
/// direction flag: "↓label" when the later word aligns to the parent u,
/// "↑label" when it aligns to the child w. Equal positions are skipped.
/// Positions with no outgoing arc get a "self" loop.
pub fn project_edges(g: &AugmentedGraph, pairs: &[(usize, usize)], n_tokens: usize) -> Result<Vec<ProjectedArc>> {
    for &(pos, node) in pairs {
        if pos < 1 || pos > n_tokens {
            return Err(Error::Data(format!("alignment token position {pos} out of range 1..={n_tokens}")));
        }
        if node >= g.n_nodes() {
            return Err(Error::Data(format!("alignment node id {node} out of range")));
        }
    }
    let mut positions_of = vec![Vec::new(); g.n_nodes()];
    for &(pos, node) in pairs {
        positions_of[node].push(pos);
    }
    let mut arcs: BTreeSet<ProjectedArc> = BTreeSet::new();
    for e in g.edges() {
        for &pu in &positions_of[e.src] {
            for &pw in &positions_of[e.dst] {
                if pu == pw {
                    continue;
                }
                let (from, to, dir) = if pu > pw {
                    (pu, pw, '\u{2193}') // later word aligned to the parent
                } else {
                    (pw, pu, '\u{2191}') // later word aligned to the child
                };
                arcs.insert(ProjectedArc {
                    from,
                    to,
                    label: format!("{dir}{}", e.label),
                });
            }
        }
    }
    let mut covered = vec![false; n_tokens + 1];
    for a in &arcs {
        covered[a.from] = true;
    }
    for t in 1..=n_tokens {
        if !covered[t] {
            arcs.insert(ProjectedArc {
                from: t,
                to: t,
                label: PATH_SELF.to_string(),
            });
        }
    }
    Ok(arcs.into_iter().collect())
}

/// Check the projected-example invariants: every position is `from` of
/// at least one arc, self-labeled arcs are exactly the loops, and
/// `to <= from` throughout.
pub fn validate_arcs(arcs: &[ProjectedArc], n_tokens: usize) -> Result<()> {
    let mut covered = vec![false; n_tokens + 1];
    for a in arcs {
        if a.from < 1 || a.from > n_tokens || a.to < 1 || a.to > n_tokens {
            return Err(Error::Data(format!("arc ({}, {}) out of range 1..={n_tokens}", a.from, a.to)));
        }
        if a.to > a.from {
            return Err(Error::Data(format!("arc points forward: ({}, {})", a.from, a.to)));
        }
        if (a.from == a.to) != (a.label == PATH_SELF) {
            return Err(Error::Data(format!(
                "self label/loop mismatch on arc ({}, {}, {})",
                a.from, a.label, a.to
            )));
        }
        covered[a.from] = true;
    }
    for t in 1..=n_tokens {
        if !covered[t] {
            return Err(Error::Data(format!("position {t} has no outgoing arc")));
        }
    }
    Ok(())
}
