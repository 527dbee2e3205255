//! Reader and writer for a reduced PENMAN subset:
//! `(var / concept :REL child ...)` where children are nested
//! expressions or re-references to already-introduced variables.
//! String constants, quoted literals and wiki links are out of scope.

use std::collections::HashMap;

use crate::error::{Error, Result};

use super::graph::{AmrGraph, Edge};

#[derive(Debug, PartialEq)]
enum Token {
    Open,
    Close,
    Slash,
    Label(String),
    Atom(String),
}

fn tokenize(text: &str) -> Result<Vec<Token>> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    let flush = |cur: &mut String, tokens: &mut Vec<Token>| {
        if !cur.is_empty() {
            let t = std::mem::take(cur);
            if let Some(rest) = t.strip_prefix(':') {
                tokens.push(Token::Label(rest.to_string()));
            } else if t == "/" {
                tokens.push(Token::Slash);
            } else {
                tokens.push(Token::Atom(t));
            }
        }
    };
    for ch in text.chars() {
        match ch {
            '(' => {
                flush(&mut cur, &mut tokens);
                tokens.push(Token::Open);
            }
            ')' => {
                flush(&mut cur, &mut tokens);
                tokens.push(Token::Close);
            }
            c if c.is_whitespace() => flush(&mut cur, &mut tokens),
            c => cur.push(c),
        }
    }
    flush(&mut cur, &mut tokens);
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    vars: Vec<String>,
    concepts: Vec<String>,
    edges: Vec<Edge>,
    var_ids: HashMap<String, usize>,
    /// (edge slot, var) references awaiting a definition.
    pending: Vec<(usize, String)>,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<&Token> {
        let t = self.tokens.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn parse_node(&mut self) -> Result<usize> {
        match self.next() {
            Some(Token::Open) => {}
            other => return Err(Error::Data(format!("expected '(', found {other:?}"))),
        }
        let var = match self.next() {
            Some(Token::Atom(v)) => v.clone(),
            other => return Err(Error::Data(format!("expected variable, found {other:?}"))),
        };
        match self.next() {
            Some(Token::Slash) => {}
            other => return Err(Error::Data(format!("expected '/', found {other:?}"))),
        }
        let concept = match self.next() {
            Some(Token::Atom(c)) => c.clone(),
            other => return Err(Error::Data(format!("expected concept, found {other:?}"))),
        };
        if self.var_ids.contains_key(&var) {
            return Err(Error::Data(format!("duplicate variable definition: {var}")));
        }
        let id = self.vars.len();
        self.vars.push(var.clone());
        self.concepts.push(concept);
        self.var_ids.insert(var, id);

        loop {
            match self.peek() {
                Some(Token::Label(_)) => {
                    let label = match self.next() {
                        Some(Token::Label(l)) => l.clone(),
                        _ => unreachable!(),
                    };
                    match self.peek() {
                        Some(Token::Open) => {
                            // reserve the slot so edges stay in definition order
                            let slot = self.edges.len();
                            self.edges.push(Edge { src: id, label, dst: usize::MAX });
                            let child = self.parse_node()?;
                            self.edges[slot].dst = child;
                        }
                        Some(Token::Atom(_)) => {
                            let name = match self.next() {
                                Some(Token::Atom(a)) => a.clone(),
                                _ => unreachable!(),
                            };
                            // may be a forward reference; resolve later
                            let slot = self.edges.len();
                            self.edges.push(Edge { src: id, label, dst: usize::MAX });
                            self.pending.push((slot, name));
                        }
                        other => {
                            return Err(Error::Data(format!("expected child after :{label}, found {other:?}")))
                        }
                    }
                }
                Some(Token::Close) => {
                    self.next();
                    return Ok(id);
                }
                other => return Err(Error::Data(format!("expected relation or ')', found {other:?}"))),
            }
        }
    }
}

/// Parse a single PENMAN-subset expression into a graph. Re-referenced
/// variables become re-entrant edges, not duplicate nodes.
pub fn parse_penman(text: &str) -> Result<AmrGraph> {
    let tokens = tokenize(text)?;
    if tokens.is_empty() {
        return Err(Error::Data("empty input".into()));
    }
    let opens = tokens.iter().filter(|t| **t == Token::Open).count();
    let closes = tokens.iter().filter(|t| **t == Token::Close).count();
    if opens != closes {
        return Err(Error::Data(format!("unbalanced parentheses: {opens} open vs {closes} close")));
    }
    let mut parser = Parser {
        tokens,
        pos: 0,
        vars: Vec::new(),
        concepts: Vec::new(),
        edges: Vec::new(),
        var_ids: HashMap::new(),
        pending: Vec::new(),
    };
    let root = parser.parse_node()?;
    if parser.pos != parser.tokens.len() {
        return Err(Error::Data("trailing input after graph".into()));
    }
    for (slot, name) in std::mem::take(&mut parser.pending) {
        match parser.var_ids.get(&name) {
            Some(&dst) => parser.edges[slot].dst = dst,
            None => return Err(Error::Data(format!("reference to undefined variable: {name}"))),
        }
    }
    let g = AmrGraph {
        vars: parser.vars,
        concepts: parser.concepts,
        edges: parser.edges,
        root,
    };
    g.validate()?;
    Ok(g)
}

/// Render a graph back to PENMAN text. Requires every node to be
/// reachable from the root along directed edges (inverse relations are
/// out of scope for the writer).
pub fn render_penman(g: &AmrGraph) -> Result<String> {
    g.validate()?;
    let n = g.n_nodes();
    // stable variable names; reuse originals when unique and nonempty
    let unique_vars = {
        let mut set = std::collections::HashSet::new();
        g.vars.iter().all(|v| !v.is_empty() && set.insert(v.clone()))
    };
    let var_name = |i: usize| -> String {
        if unique_vars {
            g.vars[i].clone()
        } else {
            format!("n{i}")
        }
    };
    let mut children: Vec<Vec<(String, usize)>> = vec![Vec::new(); n];
    for e in &g.edges {
        children[e.src].push((e.label.clone(), e.dst));
    }
    let mut defined = vec![false; n];
    let mut out = String::new();
    fn emit(
        u: usize,
        g: &AmrGraph,
        children: &[Vec<(String, usize)>],
        defined: &mut [bool],
        var_name: &dyn Fn(usize) -> String,
        out: &mut String,
    ) {
        defined[u] = true;
        out.push('(');
        out.push_str(&var_name(u));
        out.push_str(" / ");
        out.push_str(&g.concepts[u]);
        for (label, v) in &children[u] {
            out.push_str(" :");
            out.push_str(label);
            out.push(' ');
            if defined[*v] {
                out.push_str(&var_name(*v));
            } else {
                emit(*v, g, children, defined, var_name, out);
            }
        }
        out.push(')');
    }
    emit(g.root, g, &children, &mut defined, &var_name, &mut out);
    if defined.iter().any(|d| !d) {
        return Err(Error::Data("graph has nodes unreachable from the root along directed edges".into()));
    }
    Ok(out)
}

/// Split a file of blank-line-separated PENMAN blocks.
pub fn split_penman_blocks(text: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut cur = String::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !cur.trim().is_empty() {
                blocks.push(std::mem::take(&mut cur));
            }
            cur.clear();
        } else {
            cur.push_str(line);
            cur.push('\n');
        }
    }
    if !cur.trim().is_empty() {
        blocks.push(cur);
    }
    blocks
}
