//! AMR graph data model and NULL-node augmentation.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub type NodeId = usize;

/// Concept used for the artificial NULL node added by augmentation.
pub const NULL_CONCEPT: &str = "<null>";
/// Label of the edge from the NULL node to the original root.
pub const ROOT_EDGE_LABEL: &str = "root";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub src: NodeId,
    pub label: String,
    pub dst: NodeId,
}

/// Labeled directed graph of concept nodes with a designated root.
/// Node ids are dense indices 0..N-1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmrGraph {
    /// Variable names (parallel to `concepts`); empty strings are
    /// allowed for graphs that never came from PENMAN text.
    pub vars: Vec<String>,
    pub concepts: Vec<String>,
    pub edges: Vec<Edge>,
    pub root: NodeId,
}

impl AmrGraph {
    pub fn n_nodes(&self) -> usize {
        self.concepts.len()
    }

    /// Check the structural invariants: ids in range, no duplicate
    /// triples, undirected-connected from the root, and printable
    /// labels. Directed cycles are allowed: a re-reference back to an
    /// ancestor (re-entrance) is legal and produces one.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_nodes();
        if n == 0 {
            return Err(Error::Data("graph has no nodes".into()));
        }
        if self.vars.len() != n {
            return Err(Error::Data("vars/concepts length mismatch".into()));
        }
        if self.root >= n {
            return Err(Error::Data(format!("root id {} out of range", self.root)));
        }
        for c in &self.concepts {
            if c.is_empty() || c.chars().any(|ch| ch <= ' ') {
                return Err(Error::Data(format!("bad concept {c:?}")));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for e in &self.edges {
            if e.src >= n || e.dst >= n {
                return Err(Error::Data(format!("edge ({}, {}, {}) out of range", e.src, e.label, e.dst)));
            }
            if e.label.is_empty() || e.label.chars().any(|ch| ch <= ' ') {
                return Err(Error::Data(format!("bad edge label {:?}", e.label)));
            }
            if !seen.insert((e.src, e.label.clone(), e.dst)) {
                return Err(Error::Data(format!("duplicate edge ({}, {}, {})", e.src, e.label, e.dst)));
            }
        }
        // undirected connectivity from the root
        let mut adj = vec![Vec::new(); n];
        for e in &self.edges {
            adj[e.src].push(e.dst);
            adj[e.dst].push(e.src);
        }
        let mut visited = vec![false; n];
        let mut stack = vec![self.root];
        visited[self.root] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !visited[v] {
                    visited[v] = true;
                    stack.push(v);
                }
            }
        }
        if visited.iter().any(|v| !v) {
            return Err(Error::Data("graph is not connected from the root".into()));
        }
        Ok(())
    }
}

/// The input graph extended with a NULL node at index 0 acting as the
/// parent of the original root; all original indices shift by +1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedGraph {
    base: AmrGraph,
    concepts: Vec<String>,
    edges: Vec<Edge>,
}

impl AugmentedGraph {
    /// Number of nodes including NULL (N+1).
    pub fn n_nodes(&self) -> usize {
        self.concepts.len()
    }

    pub fn null_id(&self) -> NodeId {
        0
    }

    /// Augmented index of the original root.
    pub fn root(&self) -> NodeId {
        self.base.root + 1
    }

    pub fn concepts(&self) -> &[String] {
        &self.concepts
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn base(&self) -> &AmrGraph {
        &self.base
    }
}

/// Add the NULL node as parent of the root. Fails on graphs that were
/// already augmented.
pub fn augment_null(g: &AmrGraph) -> Result<AugmentedGraph> {
    g.validate()?;
    if g.concepts.iter().any(|c| c == NULL_CONCEPT) {
        return Err(Error::Data("already augmented".into()));
    }
    let mut concepts = Vec::with_capacity(g.n_nodes() + 1);
    concepts.push(NULL_CONCEPT.to_string());
    concepts.extend(g.concepts.iter().cloned());
    let mut edges = Vec::with_capacity(g.edges.len() + 1);
    edges.push(Edge {
        src: 0,
        label: ROOT_EDGE_LABEL.to_string(),
        dst: g.root + 1,
    });
    for e in &g.edges {
        edges.push(Edge {
            src: e.src + 1,
            label: e.label.clone(),
            dst: e.dst + 1,
        });
    }
    Ok(AugmentedGraph {
        base: g.clone(),
        concepts,
        edges,
    })
}
