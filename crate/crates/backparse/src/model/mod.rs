//! Model configuration, the named-parameter store, initialization, and
//! checkpoint participation. The encoder and decoder forward passes
//! live in the submodules.

pub mod decoder;
pub mod encoder;

#[cfg(test)]
pub(crate) mod tests;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{load_checkpoint, save_checkpoint, RngState, Tape, Tensor};

pub use decoder::{DecoderState, ForwardOutput, StepOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeLossKind {
    Ce,
    Mse,
}

/// Sizes and switches of the whole network (encoder, decoder, heads).
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub layers: usize,
    pub d: usize,
    pub heads: usize,
    pub d_r: usize,
    pub d_biaff: usize,
    pub ffn: usize,
    pub word_vocab: usize,
    pub concept_vocab: usize,
    pub relation_vocab: usize,
    /// Relation-vocabulary id backing each decoder edge label (shared
    /// relation-embedding rows); its length is R_dec.
    pub label_rel_ids: Vec<usize>,
    pub node_loss: NodeLossKind,
    pub enable_node: bool,
    pub enable_edge: bool,
    pub enable_integration: bool,
    pub share_relation_embeddings: bool,
    pub attention_dropout: f64,
    pub residual_dropout: f64,
    pub ln_eps: f64,
}

impl ModelConfig {
    pub fn n_labels(&self) -> usize {
        self.label_rel_ids.len()
    }

    pub fn d_head(&self) -> usize {
        self.d / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("layers", self.layers),
            ("d", self.d),
            ("heads", self.heads),
            ("d_r", self.d_r),
            ("d_biaff", self.d_biaff),
            ("ffn", self.ffn),
            ("word_vocab", self.word_vocab),
            ("concept_vocab", self.concept_vocab),
            ("relation_vocab", self.relation_vocab),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.d % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden size {} not divisible by head count {}",
                self.d, self.heads
            )));
        }
        if self.label_rel_ids.is_empty() {
            return Err(Error::Config("empty decoder label vocabulary".into()));
        }
        for &r in &self.label_rel_ids {
            if r >= self.relation_vocab {
                return Err(Error::Config(format!("label relation id {r} outside relation vocabulary")));
            }
        }
        if self.enable_integration && !(self.enable_node || self.enable_edge) {
            return Err(Error::Config(
                "enable_integration requires enable_node or enable_edge".into(),
            ));
        }
        for (name, v) in [
            ("attention_dropout", self.attention_dropout),
            ("residual_dropout", self.residual_dropout),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0,1)")));
            }
        }
        Ok(())
    }
}

/// Named learnable tensors in fixed registration order (the order fixes
/// both initialization draws and the checkpoint layout).
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    order: Vec<String>,
    map: HashMap<String, Tensor>,
}

impl ParamStore {
    fn add(&mut self, name: &str, t: Tensor) {
        assert!(!self.map.contains_key(name), "duplicate parameter {name}");
        self.order.push(name.to_string());
        self.map.insert(name.to_string(), t);
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.map.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn names(&self) -> &[String] {
        &self.order
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.order.iter().map(|n| (n.as_str(), &self.map[n]))
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.order.iter().map(|n| self.map[n].clone()).collect()
    }

    pub fn n_scalars(&self) -> usize {
        self.iter().map(|(_, t)| t.len()).sum()
    }
}

pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

fn glorot(rng: &mut RngState, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
    Tensor::param(&[rows, cols], data)
}

fn glorot3(rng: &mut RngState, d1: usize, r: usize, d2: usize) -> Tensor {
    let bound = (6.0 / (d1 + d2) as f64).sqrt();
    let data = (0..d1 * r * d2).map(|_| rng.uniform(-bound, bound)).collect();
    Tensor::param(&[d1, r, d2], data)
}

fn embedding(rng: &mut RngState, vocab: usize, d: usize) -> Tensor {
    let sd = (d as f64).powf(-0.5);
    let data = (0..vocab * d).map(|_| rng.normal(0.0, sd)).collect();
    Tensor::param(&[vocab, d], data)
}

fn zeros_param(shape: &[usize]) -> Tensor {
    Tensor::param(shape, vec![0.0; shape.iter().product()])
}

fn ones_param(shape: &[usize]) -> Tensor {
    Tensor::param(shape, vec![1.0; shape.iter().product()])
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Model> {
        cfg.validate()?;
        let mut rng = RngState::new(seed);
        let mut p = ParamStore::default();
        let (d, dh, dr, db, ffn) = (cfg.d, cfg.d_head(), cfg.d_r, cfg.d_biaff, cfg.ffn);
        let nl = cfg.n_labels();

        p.add("word_emb", embedding(&mut rng, cfg.word_vocab, d));
        p.add("concept_emb", embedding(&mut rng, cfg.concept_vocab, d));
        p.add("rel_emb", embedding(&mut rng, cfg.relation_vocab, dr));
        if !cfg.share_relation_embeddings {
            p.add("label_emb", embedding(&mut rng, nl, dr));
        }

        for l in 0..cfg.layers {
            for w in ["wq", "wk", "wv", "wo"] {
                p.add(&format!("enc.{l}.{w}"), glorot(&mut rng, d, d));
            }
            p.add(&format!("enc.{l}.wr"), glorot(&mut rng, dr, dh));
            p.add(&format!("enc.{l}.ff1"), glorot(&mut rng, d, ffn));
            p.add(&format!("enc.{l}.ff1_b"), zeros_param(&[ffn]));
            p.add(&format!("enc.{l}.ff2"), glorot(&mut rng, ffn, d));
            p.add(&format!("enc.{l}.ff2_b"), zeros_param(&[d]));
            for ln in ["ln1", "ln2"] {
                p.add(&format!("enc.{l}.{ln}_g"), ones_param(&[d]));
                p.add(&format!("enc.{l}.{ln}_b"), zeros_param(&[d]));
            }
        }

        for l in 0..cfg.layers {
            for block in ["self", "cross"] {
                for w in ["wq", "wk", "wv", "wo"] {
                    p.add(&format!("dec.{l}.{block}.{w}"), glorot(&mut rng, d, d));
                }
            }
            p.add(&format!("dec.{l}.ff1"), glorot(&mut rng, d, ffn));
            p.add(&format!("dec.{l}.ff1_b"), zeros_param(&[ffn]));
            p.add(&format!("dec.{l}.ff2"), glorot(&mut rng, ffn, d));
            p.add(&format!("dec.{l}.ff2_b"), zeros_param(&[d]));
            for ln in ["ln1", "ln2", "ln3"] {
                p.add(&format!("dec.{l}.{ln}_g"), ones_param(&[d]));
                p.add(&format!("dec.{l}.{ln}_b"), zeros_param(&[d]));
            }
        }

        for head in ["arc_to", "arc_from", "label_to", "label_from"] {
            p.add(&format!("biaff.{head}.w"), glorot(&mut rng, d, db));
            p.add(&format!("biaff.{head}.b"), zeros_param(&[db]));
        }
        p.add("biaff.u_arc", glorot3(&mut rng, db, 1, db));
        p.add("biaff.w_arc", glorot(&mut rng, 2 * db, 1));
        p.add("biaff.b_arc", zeros_param(&[1]));
        p.add("biaff.u_label", glorot3(&mut rng, db, nl, db));
        p.add("biaff.w_label", glorot(&mut rng, 2 * db, nl));
        p.add("biaff.b_label", zeros_param(&[nl]));
        p.add("intg.e_proj", glorot(&mut rng, dr + d, d));

        Ok(Model { cfg, params: p })
    }

    pub(crate) fn p(&self, name: &str) -> &Tensor {
        self.params.get(name)
    }

    /// Embedding rows of the decoder edge labels: shared γ rows or the
    /// independent table, per configuration.
    pub(crate) fn label_embeddings(&self, tape: &Tape) -> Tensor {
        if self.cfg.share_relation_embeddings {
            tape.gather_rows(self.p("rel_emb"), &self.cfg.label_rel_ids)
        } else {
            self.p("label_emb").clone()
        }
    }

    pub fn save(&self, path: &Path, rng_seed: u64) -> Result<()> {
        let tensors: Vec<(String, Vec<usize>, Vec<f64>)> = self
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), t.shape(), t.data()))
            .collect();
        save_checkpoint(path, &tensors, crate::tensor::RNG_ALGORITHM, rng_seed)
    }

    /// Load parameters into a model skeleton built from `cfg`. The
    /// checkpoint must contain exactly the parameters the configuration
    /// implies, with matching shapes.
    pub fn load(path: &Path, cfg: ModelConfig) -> Result<(Model, u64)> {
        let (tensors, algorithm, seed) = load_checkpoint(path)?;
        if algorithm != crate::tensor::RNG_ALGORITHM {
            return Err(Error::Data(format!("checkpoint uses unknown rng algorithm {algorithm:?}")));
        }
        let model = Model::new(cfg, 0)?;
        if tensors.len() != model.params.names().len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} tensors, configuration implies {}",
                tensors.len(),
                model.params.names().len()
            )));
        }
        for (name, shape, data) in tensors {
            let t = model
                .params
                .map
                .get(&name)
                .ok_or_else(|| Error::Data(format!("checkpoint tensor {name:?} not in configuration")))?;
            if t.shape() != shape {
                return Err(Error::Data(format!(
                    "checkpoint tensor {name:?} has shape {shape:?}, expected {:?}",
                    t.shape()
                )));
            }
            t.set_data(data);
        }
        Ok((model, seed))
    }
}

/// Sinusoidal positional-encoding row for 0-based position `pos`.
pub fn positional_encoding(pos: usize, d: usize) -> Vec<f64> {
    let mut row = vec![0.0; d];
    for i in 0..d / 2 {
        let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
        row[2 * i] = angle.sin();
        row[2 * i + 1] = angle.cos();
    }
    if d % 2 == 1 {
        let i = d / 2;
        row[d - 1] = (pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64)).sin();
    }
    row
}
