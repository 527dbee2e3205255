//! Corpus formats and preprocessing: word/concept vocabularies, the
//! JSONL raw-example format, PENMAN + alignment-file ingestion, and the
//! pipeline turning raw examples into decoder-ready supervision.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::amr::{
    augment_null, build_relation_matrix, normalize_alignment, parse_penman, project_edges, validate_arcs,
    add_single_step_labels, AlignmentDist, AmrGraph, AugmentedGraph, Edge, RelationVocab, PATH_SELF,
    REL_SELF_ID,
};
use crate::error::{Error, Result};

pub const WORD_UNK: usize = 0;
pub const WORD_BOS: usize = 1;
pub const WORD_EOS: usize = 2;
pub const CONCEPT_UNK: usize = 0;

const WORD_RESERVED: [&str; 3] = ["<unk>", "<s>", "</s>"];
const CONCEPT_RESERVED: [&str; 1] = ["<unk>"];

/// Closed token ↔ id map with a fixed reserved prefix.
#[derive(Debug, Clone)]
pub struct Vocab {
    entries: Vec<String>,
    index: HashMap<String, usize>,
    n_reserved: usize,
}

impl Vocab {
    fn with_reserved(reserved: &[&str]) -> Vocab {
        let mut v = Vocab {
            entries: Vec::new(),
            index: HashMap::new(),
            n_reserved: reserved.len(),
        };
        for r in reserved {
            v.add(r);
        }
        v
    }

    pub fn words() -> Vocab {
        Vocab::with_reserved(&WORD_RESERVED)
    }

    pub fn concepts() -> Vocab {
        Vocab::with_reserved(&CONCEPT_RESERVED)
    }

    pub fn add(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.entries.len();
        self.index.insert(token.to_string(), id);
        self.entries.push(token.to_string());
        id
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of a token, falling back to the unknown id (0 by reservation
    /// order in both vocabularies).
    pub fn get_or_unk(&self, token: &str) -> usize {
        self.get(token).unwrap_or(0)
    }

    pub fn entry(&self, id: usize) -> &str {
        &self.entries[id]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One token per line; reserved entries are implicit.
    pub fn save(&self, path: &Path) -> Result<()> {
        let body: String = self.entries[self.n_reserved..].iter().map(|e| format!("{e}\n")).collect();
        fs::write(path, body)?;
        Ok(())
    }

    pub fn load(path: &Path, reserved: &[&str]) -> Result<Vocab> {
        let text = fs::read_to_string(path)?;
        let mut v = Vocab::with_reserved(reserved);
        for line in text.lines() {
            if line.is_empty() {
                continue;
            }
            if v.get(line).is_some() {
                return Err(Error::Data(format!("duplicate vocab entry: {line}")));
            }
            v.add(line);
        }
        Ok(v)
    }

    pub fn load_words(path: &Path) -> Result<Vocab> {
        Vocab::load(path, &WORD_RESERVED)
    }

    pub fn load_concepts(path: &Path) -> Result<Vocab> {
        Vocab::load(path, &CONCEPT_RESERVED)
    }
}

/// Edge-label vocabulary of the decoder's label head: "self" plus every
/// single-step directed path ("↑x"/"↓x") in the relation vocabulary.
/// `rel_ids[k]` is the relation id backing label k, so the label
/// embedding can share rows of the relation embedding γ.
#[derive(Debug, Clone)]
pub struct LabelVocab {
    entries: Vec<String>,
    index: HashMap<String, usize>,
    rel_ids: Vec<usize>,
}

pub const LABEL_SELF: usize = 0;

impl LabelVocab {
    pub fn from_relations(rel: &RelationVocab) -> LabelVocab {
        let mut v = LabelVocab {
            entries: Vec::new(),
            index: HashMap::new(),
            rel_ids: Vec::new(),
        };
        v.push(PATH_SELF, REL_SELF_ID);
        for (id, entry) in rel.entries().iter().enumerate() {
            let single_step = !entry.contains(' ')
                && (entry.starts_with('\u{2191}') || entry.starts_with('\u{2193}'));
            if single_step {
                v.push(entry, id);
            }
        }
        v
    }

    fn push(&mut self, label: &str, rel_id: usize) {
        self.index.insert(label.to_string(), self.entries.len());
        self.entries.push(label.to_string());
        self.rel_ids.push(rel_id);
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

    pub fn get(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    /// Relation ids backing each label (for shared γ rows).
    pub fn rel_ids(&self) -> &[usize] {
        &self.rel_ids
    }
}

/// One raw corpus line: `{"graph": {...}, "tokens": [...], "align":
/// [[pos,node],...]}` with 1-based token positions and 0-based
/// pre-augmentation node ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawExample {
    pub graph: RawGraph,
    pub tokens: Vec<String>,
    pub align: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawGraph {
    pub nodes: Vec<String>,
    pub edges: Vec<(usize, String, usize)>,
    pub root: usize,
}

impl RawGraph {
    pub fn to_amr(&self) -> AmrGraph {
        AmrGraph {
            vars: vec![String::new(); self.nodes.len()],
            concepts: self.nodes.clone(),
            edges: self
                .edges
                .iter()
                .map(|(src, label, dst)| Edge {
                    src: *src,
                    label: label.clone(),
                    dst: *dst,
                })
                .collect(),
            root: self.root,
        }
    }

    pub fn from_amr(g: &AmrGraph) -> RawGraph {
        RawGraph {
            nodes: g.concepts.clone(),
            edges: g.edges.iter().map(|e| (e.src, e.label.clone(), e.dst)).collect(),
            root: g.root,
        }
    }
}

pub fn read_raw_jsonl(path: &Path) -> Result<Vec<RawExample>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex: RawExample = serde_json::from_str(line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        out.push(ex);
    }
    Ok(out)
}

pub fn write_raw_jsonl(path: &Path, examples: &[RawExample]) -> Result<()> {
    let mut body = String::new();
    for ex in examples {
        body.push_str(&serde_json::to_string(ex)?);
        body.push('\n');
    }
    fs::write(path, body)?;
    Ok(())
}

/// Read parallel PENMAN / sentence / alignment files into raw examples.
///
/// Graphs are blank-line-separated PENMAN blocks; sentences are one
/// whitespace-tokenized line each; alignments are one line each of
/// space-separated `pos-node` pairs (1-based positions, 0-based node
/// ids), empty line for none.
pub fn ingest_penman(graphs: &Path, sentences: &Path, alignments: &Path) -> Result<Vec<RawExample>> {
    let blocks = crate::amr::split_penman_blocks(&fs::read_to_string(graphs)?);
    let sent_text = fs::read_to_string(sentences)?;
    let align_text = fs::read_to_string(alignments)?;
    let sents: Vec<&str> = sent_text.lines().collect();
    let aligns: Vec<&str> = align_text.lines().collect();
    if blocks.len() != sents.len() || blocks.len() != aligns.len() {
        return Err(Error::Data(format!(
            "parallel file length mismatch: {} graphs, {} sentences, {} alignment lines",
            blocks.len(),
            sents.len(),
            aligns.len()
        )));
    }
    let mut out = Vec::new();
    for (i, block) in blocks.iter().enumerate() {
        let g = parse_penman(block).map_err(|e| Error::Data(format!("{}: graph {}: {e}", graphs.display(), i + 1)))?;
        let tokens: Vec<String> = sents[i].split_whitespace().map(str::to_string).collect();
        if tokens.is_empty() {
            return Err(Error::Data(format!("{}:{}: empty sentence", sentences.display(), i + 1)));
        }
        let mut align = Vec::new();
        for part in aligns[i].split_whitespace() {
            let (pos, node) = part
                .split_once('-')
                .and_then(|(p, n)| Some((p.parse::<usize>().ok()?, n.parse::<usize>().ok()?)))
                .ok_or_else(|| {
                    Error::Data(format!("{}:{}: bad alignment pair {part:?}", alignments.display(), i + 1))
                })?;
            align.push((pos, node));
        }
        out.push(RawExample {
            graph: RawGraph::from_amr(&g),
            tokens,
            align,
        });
    }
    Ok(out)
}

/// One projected gold arc with a decoder-label-vocabulary id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GoldArc {
    /// 1-based source position t (the later word).
    pub from: usize,
    /// 1-based target position j ≤ t.
    pub to: usize,
    /// Label id in the decoder label vocabulary.
    pub label: usize,
}

/// A fully preprocessed example: id-mapped graph and tokens plus the
/// decoder's supervision (gold alignment rows and projected arcs).
#[derive(Debug, Clone)]
pub struct ProcessedExample {
    pub graph: AugmentedGraph,
    /// Concept ids over the N+1 augmented nodes.
    pub concept_ids: Vec<usize>,
    /// (N+1)×(N+1) relation-id grid, row-major.
    pub rel_ids: Vec<usize>,
    /// Word ids, length M, without BOS/EOS.
    pub tokens: Vec<usize>,
    pub gold_align: AlignmentDist,
    pub arcs: Vec<GoldArc>,
}

impl ProcessedExample {
    /// Number of augmented nodes (N+1).
    pub fn n_nodes(&self) -> usize {
        self.concept_ids.len()
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.len()
    }

    /// Gold arcs whose `from` is t, 1-based.
    pub fn arcs_from(&self, t: usize) -> impl Iterator<Item = &GoldArc> {
        self.arcs.iter().filter(move |a| a.from == t)
    }
}

/// Vocabulary bundle plus preprocessing configuration.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub words: Vocab,
    pub concepts: Vocab,
    pub relations: RelationVocab,
    pub labels: LabelVocab,
    pub max_path_len: usize,
}

impl Pipeline {
    /// Build all vocabularies from a training corpus (frequency floor 1:
    /// every observed token enters) and preprocess it in the same pass.
    pub fn build(
        raw: &[RawExample],
        max_path_len: usize,
        relation_cap: usize,
        share_relation_embeddings: bool,
    ) -> Result<(Pipeline, Vec<ProcessedExample>)> {
        let mut words = Vocab::words();
        let mut concepts = Vocab::concepts();
        let mut relations = RelationVocab::new(share_relation_embeddings, relation_cap);
        let mut staged = Vec::with_capacity(raw.len());
        for (i, ex) in raw.iter().enumerate() {
            let g = augment_null(&ex.graph.to_amr())
                .map_err(|e| Error::Data(format!("example {}: {e}", i + 1)))?;
            for t in &ex.tokens {
                words.add(t);
            }
            for c in g.concepts() {
                concepts.add(c);
            }
            add_single_step_labels(&g, &mut relations);
            let rel_ids = build_relation_matrix(&g, &mut relations, max_path_len, true)?;
            staged.push((g, rel_ids));
        }
        let labels = LabelVocab::from_relations(&relations);
        let pipeline = Pipeline {
            words,
            concepts,
            relations,
            labels,
            max_path_len,
        };
        let mut processed = Vec::with_capacity(raw.len());
        for ((g, rel_ids), ex) in staged.into_iter().zip(raw) {
            processed.push(pipeline.finish(g, rel_ids, ex)?);
        }
        Ok((pipeline, processed))
    }

    /// Preprocess with frozen vocabularies (dev/test/inference). Unknown
    /// words and concepts map to their unknown ids; unseen relation
    /// paths map to "none"; a projected arc with an unseen label is a
    /// data error.
    pub fn process(&self, ex: &RawExample) -> Result<ProcessedExample> {
        let g = augment_null(&ex.graph.to_amr())?;
        let mut relations = self.relations.clone();
        let rel_ids = build_relation_matrix(&g, &mut relations, self.max_path_len, false)?;
        self.finish(g, rel_ids, ex)
    }

    /// Preprocess a bare graph (no sentence) for generation: augmented
    /// graph, concept ids and the frozen relation grid.
    pub fn process_graph(&self, g: &RawGraph) -> Result<(AugmentedGraph, Vec<usize>, Vec<usize>)> {
        let g = augment_null(&g.to_amr())?;
        let mut relations = self.relations.clone();
        let rel_ids = build_relation_matrix(&g, &mut relations, self.max_path_len, false)?;
        let concept_ids = g.concepts().iter().map(|c| self.concepts.get_or_unk(c)).collect();
        Ok((g, concept_ids, rel_ids))
    }

    fn finish(&self, g: AugmentedGraph, rel_ids: Vec<usize>, ex: &RawExample) -> Result<ProcessedExample> {
        let m = ex.tokens.len();
        if m == 0 {
            return Err(Error::Data("example has no tokens".into()));
        }
        // raw node ids are pre-augmentation (0-based); shift to 1..=N
        let pairs: Vec<(usize, usize)> = ex.align.iter().map(|&(pos, node)| (pos, node + 1)).collect();
        let gold_align = normalize_alignment(&pairs, m, g.n_nodes() - 1)?;
        let projected = project_edges(&g, &pairs, m)?;
        validate_arcs(&projected, m)?;
        let mut arcs = Vec::with_capacity(projected.len());
        for a in &projected {
            let label = self
                .labels
                .get(&a.label)
                .ok_or_else(|| Error::Data(format!("projected arc label {:?} not in label vocabulary", a.label)))?;
            arcs.push(GoldArc {
                from: a.from,
                to: a.to,
                label,
            });
        }
        let concept_ids = g.concepts().iter().map(|c| self.concepts.get_or_unk(c)).collect();
        let tokens = ex.tokens.iter().map(|t| self.words.get_or_unk(t)).collect();
        Ok(ProcessedExample {
            graph: g,
            concept_ids,
            rel_ids,
            tokens,
            gold_align,
            arcs,
        })
    }
}
