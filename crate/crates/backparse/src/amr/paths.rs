//! Shortest label paths between node pairs and the relation vocabulary
//! they index into. A path step traversing parent→child renders as
//! "↓label", child→parent as "↑label"; steps are space-joined. Ties on
//! length resolve to the lexicographically smallest rendered string.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::graph::AugmentedGraph;

pub const PATH_SELF: &str = "self";
pub const PATH_NONE: &str = "none";
pub const PATH_LONG: &str = "long-path";

pub const REL_SELF_ID: usize = 0;
pub const REL_NONE_ID: usize = 1;
pub const REL_ROOT_ID: usize = 2;
const RESERVED: [&str; 3] = [PATH_SELF, PATH_NONE, "root"];

/// Undirected adjacency with rendered step strings.
fn step_adjacency(g: &AugmentedGraph) -> Vec<Vec<(usize, String)>> {
    let n = g.n_nodes();
    let mut adj: Vec<Vec<(usize, String)>> = vec![Vec::new(); n];
    for e in g.edges() {
        adj[e.src].push((e.dst, format!("\u{2193}{}", e.label)));
        adj[e.dst].push((e.src, format!("\u{2191}{}", e.label)));
    }
    adj
}

/// Shortest undirected label path from `i` to `j`, or "self" / "none" /
/// "long-path" for the identity, unreachable and over-length cases.
pub fn shortest_label_path(g: &AugmentedGraph, i: usize, j: usize, max_len: usize) -> Result<String> {
    let n = g.n_nodes();
    if i >= n || j >= n {
        return Err(Error::Data(format!("node id out of range: ({i}, {j}) in graph of {n}")));
    }
    assert!(max_len >= 1, "max_len must be >= 1");
    if i == j {
        return Ok(PATH_SELF.to_string());
    }
    let adj = step_adjacency(g);
    // BFS distances from i
    let mut dist = vec![usize::MAX; n];
    dist[i] = 0;
    let mut frontier = vec![i];
    let mut d = 0;
    while !frontier.is_empty() && dist[j] == usize::MAX {
        let mut next = Vec::new();
        for &u in &frontier {
            for (v, _) in &adj[u] {
                if dist[*v] == usize::MAX {
                    dist[*v] = d + 1;
                    next.push(*v);
                }
            }
        }
        frontier = next;
        d += 1;
    }
    if dist[j] == usize::MAX {
        return Ok(PATH_NONE.to_string());
    }
    if dist[j] > max_len {
        return Ok(PATH_LONG.to_string());
    }
    // Lexicographically smallest rendered string along shortest paths.
    // Labels contain no characters <= ' ', so prefix order survives
    // concatenation with the space separator.
    let mut best: Vec<Option<String>> = vec![None; n];
    best[i] = Some(String::new());
    let mut order: Vec<usize> = (0..n).filter(|&v| dist[v] != usize::MAX && dist[v] <= dist[j]).collect();
    order.sort_by_key(|&v| dist[v]);
    for &v in &order {
        if v == i {
            continue;
        }
        let mut cand: Option<String> = None;
        for (u, _) in adj[v].iter() {
            if dist[*u] == usize::MAX || dist[*u] + 1 != dist[v] {
                continue;
            }
            // all steps u -> v (there may be parallel edges)
            for (w, step) in adj[*u].iter() {
                if *w != v {
                    continue;
                }
                if let Some(prefix) = &best[*u] {
                    let s = if prefix.is_empty() {
                        step.clone()
                    } else {
                        format!("{prefix} {step}")
                    };
                    if cand.as_ref().map_or(true, |c| s < *c) {
                        cand = Some(s);
                    }
                }
            }
        }
        best[v] = cand;
    }
    Ok(best[j].clone().expect("reachable node must have a path"))
}

/// Bidirectional map between path strings and relation ids, with the
/// three reserved entries fixed at ids 0..2.
#[derive(Debug, Clone)]
pub struct RelationVocab {
    entries: Vec<String>,
    index: HashMap<String, usize>,
    pub shared_with_decoder: bool,
    cap: usize,
}

impl RelationVocab {
    pub fn new(shared_with_decoder: bool, cap: usize) -> RelationVocab {
        assert!(cap >= RESERVED.len(), "relation vocab cap below reserved size");
        let mut v = RelationVocab {
            entries: Vec::new(),
            index: HashMap::new(),
            shared_with_decoder,
            cap,
        };
        for r in RESERVED {
            v.push(r.to_string());
        }
        v
    }

    fn push(&mut self, s: String) -> usize {
        let id = self.entries.len();
        self.index.insert(s.clone(), id);
        self.entries.push(s);
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: usize) -> &str {
        &self.entries[id]
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    /// Add a path string during vocabulary building. Over-cap additions
    /// fall back to the "none" id.
    pub fn add(&mut self, path: &str) -> usize {
        if let Some(id) = self.lookup(path) {
            return id;
        }
        if self.entries.len() >= self.cap {
            return REL_NONE_ID;
        }
        self.push(path.to_string())
    }

    fn lookup(&self, path: &str) -> Option<usize> {
        if path == PATH_LONG {
            return Some(REL_NONE_ID);
        }
        self.index.get(path).copied()
    }

    /// Id of a path string; unseen paths map to "none".
    pub fn get(&self, path: &str) -> usize {
        self.lookup(path).unwrap_or(REL_NONE_ID)
    }

    pub fn contains(&self, path: &str) -> bool {
        self.lookup(path).is_some()
    }

    /// One path string per line; reserved entries are implicit, so line
    /// number = id - 3.
    pub fn save(&self, path: &Path) -> Result<()> {
        let body: String = self.entries[RESERVED.len()..]
            .iter()
            .map(|e| format!("{e}\n"))
            .collect();
        fs::write(path, body)?;
        Ok(())
    }

    pub fn load(path: &Path, shared_with_decoder: bool, cap: usize) -> Result<RelationVocab> {
        let text = fs::read_to_string(path)?;
        let mut v = RelationVocab::new(shared_with_decoder, cap.max(RESERVED.len()));
        for line in text.lines() {
            if line.is_empty() {
                continue;
            }
            if v.contains(line) {
                return Err(Error::Data(format!("duplicate relation vocab entry: {line}")));
            }
            v.push(line.to_string());
        }
        Ok(v)
    }
}

/// Pairwise relation-id grid for all augmented node pairs. With
/// `grow`, unseen path strings are added to the vocabulary (training);
/// otherwise they map to "none" (inference).
pub fn build_relation_matrix(
    g: &AugmentedGraph,
    vocab: &mut RelationVocab,
    max_len: usize,
    grow: bool,
) -> Result<Vec<usize>> {
    let n = g.n_nodes();
    let mut grid = vec![0usize; n * n];
    for i in 0..n {
        for j in 0..n {
            let path = shortest_label_path(g, i, j, max_len)?;
            grid[i * n + j] = if grow { vocab.add(&path) } else { vocab.get(&path) };
        }
    }
    Ok(grid)
}

/// Ensure both single-step forms of every edge label are present
/// (vocabulary building).
pub fn add_single_step_labels(g: &AugmentedGraph, vocab: &mut RelationVocab) {
    for e in g.edges() {
        vocab.add(&format!("\u{2193}{}", e.label));
        vocab.add(&format!("\u{2191}{}", e.label));
    }
}
