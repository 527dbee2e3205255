//! Run configuration: one JSON file (unknown keys rejected) covering
//! model shape, loss weights, optimizer schedule, decoding, data
//! paths, and the synthetic-corpus spec. Defaults follow the reference
//! hyper-parameter table (λ_node = 0.01, λ_label = 0.1, beam 5, noam
//! factor 0.5, warmup 16,000, Adam β = 0.9/0.98); scale-bound knobs
//! (batch tokens, step counts) default to desk-scale values and can be
//! raised for fidelity runs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Pipeline;
use crate::error::{Error, Result};
use crate::evaluate::GenOptions;
use crate::model::{ModelConfig, NodeLossKind};
use crate::synth::SyntheticSpec;
use crate::train::TrainOptions;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    // model shape
    pub layers: usize,
    pub d: usize,
    pub heads: usize,
    pub d_r: usize,
    pub d_biaff: usize,
    pub ffn: usize,
    pub node_loss: NodeLossKind,
    pub enable_node: bool,
    pub enable_edge: bool,
    pub enable_integration: bool,
    pub share_relation_embeddings: bool,
    pub attention_dropout: f64,
    pub residual_dropout: f64,
    pub ln_eps: f64,

    // data pipeline
    pub max_path_len: usize,
    pub relation_cap: usize,

    // losses and optimization
    pub lambda_node: f64,
    pub lambda_label: f64,
    pub lr_factor: f64,
    pub warmup: usize,
    pub clip_norm: f64,
    pub batch_tokens: usize,
    pub max_steps: usize,
    pub eval_every: usize,
    pub log_every: usize,

    // decoding
    pub beam: usize,
    pub len_penalty: f64,
    pub max_len: Option<usize>,

    pub seed: u64,

    // artifact locations
    pub work_dir: PathBuf,
    pub train_path: PathBuf,
    pub dev_path: PathBuf,
    pub test_path: PathBuf,

    pub synth: SyntheticSpec,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            layers: 6,
            d: 512,
            heads: 8,
            d_r: 64,
            d_biaff: 512,
            ffn: 2048,
            node_loss: NodeLossKind::Ce,
            enable_node: true,
            enable_edge: true,
            enable_integration: true,
            share_relation_embeddings: true,
            attention_dropout: 0.3,
            residual_dropout: 0.1,
            ln_eps: 1e-5,
            max_path_len: 4,
            relation_cap: 5002,
            lambda_node: 0.01,
            lambda_label: 0.1,
            lr_factor: 0.5,
            warmup: 16_000,
            clip_norm: 1.0,
            batch_tokens: 512, // desk-scale; reference table uses 2048
            max_steps: 5000,
            eval_every: 200,
            log_every: 50,
            beam: 5,
            len_penalty: 0.6,
            max_len: None,
            seed: 1,
            work_dir: PathBuf::from("runs/default"),
            train_path: PathBuf::from("data/train.jsonl"),
            dev_path: PathBuf::from("data/dev.jsonl"),
            test_path: PathBuf::from("data/test.jsonl"),
            synth: SyntheticSpec::default(),
        }
    }
}

impl RunConfig {
    /// Load a config file and apply `key=value` overrides (values
    /// parsed as JSON, bare words taken as strings). A missing file
    /// path of `None` starts from defaults.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str::<serde_json::Value>(&text)
                    .map_err(|e| Error::Config(format!("config {}: {e}", p.display())))?
            }
            None => serde_json::json!({}),
        };
        let map = value
            .as_object_mut()
            .ok_or_else(|| Error::Config("config root must be a JSON object".into()))?;
        for ov in overrides {
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{ov}' is not key=value")))?;
            let v = serde_json::from_str::<serde_json::Value>(raw)
                .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
            map.insert(key.to_string(), v);
        }
        let cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::Config(msg.into())) };
        check(self.layers >= 1, "layers must be >= 1")?;
        check(self.d >= 1 && self.d % self.heads == 0, "d must be a positive multiple of heads")?;
        check(self.max_path_len >= 1, "max_path_len must be >= 1")?;
        check(self.relation_cap >= 4, "relation_cap must cover the reserved relations")?;
        check(self.lambda_node >= 0.0 && self.lambda_label >= 0.0, "loss weights must be >= 0")?;
        check(self.lr_factor > 0.0, "lr_factor must be > 0")?;
        check(self.warmup >= 1, "warmup must be >= 1")?;
        check(self.clip_norm > 0.0, "clip_norm must be > 0")?;
        check(self.batch_tokens >= 1, "batch_tokens must be >= 1")?;
        check(self.beam >= 1, "beam must be >= 1")?;
        check(self.len_penalty >= 0.0, "len_penalty must be >= 0")?;
        check(
            (0.0..1.0).contains(&self.attention_dropout) && (0.0..1.0).contains(&self.residual_dropout),
            "dropout rates must be in [0, 1)",
        )?;
        check(
            !self.enable_integration || self.enable_node || self.enable_edge,
            "integration requires the node or edge head",
        )?;
        Ok(())
    }

    /// Instantiate the model shape against a fitted data pipeline.
    pub fn model_config(&self, pipe: &Pipeline) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            d: self.d,
            heads: self.heads,
            d_r: self.d_r,
            d_biaff: self.d_biaff,
            ffn: self.ffn,
            word_vocab: pipe.words.len(),
            concept_vocab: pipe.concepts.len(),
            relation_vocab: pipe.relations.len(),
            label_rel_ids: pipe.labels.rel_ids().to_vec(),
            node_loss: self.node_loss,
            enable_node: self.enable_node,
            enable_edge: self.enable_edge,
            enable_integration: self.enable_integration,
            share_relation_embeddings: self.share_relation_embeddings,
            attention_dropout: self.attention_dropout,
            residual_dropout: self.residual_dropout,
            ln_eps: self.ln_eps,
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            max_steps: self.max_steps,
            batch_tokens: self.batch_tokens,
            eval_every: self.eval_every,
            lambda_node: self.lambda_node,
            lambda_label: self.lambda_label,
            lr_factor: self.lr_factor,
            warmup: self.warmup,
            clip_norm: self.clip_norm,
            seed: self.seed,
            beam: self.beam,
            len_penalty: self.len_penalty,
            metrics_path: Some(self.work_dir.join("metrics.jsonl")),
            checkpoint_path: Some(self.checkpoint_path()),
            log_every: self.log_every,
        }
    }

    pub fn gen_options(&self) -> GenOptions {
        GenOptions {
            beam: self.beam,
            len_penalty: self.len_penalty,
            max_len: self.max_len,
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.work_dir.join("model.ckpt")
    }

    pub fn vocab_dir(&self) -> PathBuf {
        self.work_dir.join("vocab")
    }

    /// Dump the fully-resolved config next to the artifacts so any run
    /// can be reproduced from its own output directory.
    pub fn dump_effective(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.work_dir)?;
        let path = self.work_dir.join("config.effective.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_snapshot_matches_reference_settings() {
        let c = RunConfig::default();
        assert_eq!(c.lambda_node, 0.01);
        assert_eq!(c.lambda_label, 0.1);
        assert_eq!(c.beam, 5);
        assert_eq!(c.layers, 6);
        assert_eq!(c.d, 512);
        assert_eq!(c.heads, 8);
        assert_eq!(c.attention_dropout, 0.3);
        assert_eq!(c.lr_factor, 0.5);
        assert_eq!(c.warmup, 16_000);
        assert_eq!(c.relation_cap, 5002);
        assert!(c.share_relation_embeddings);
        assert_eq!(c.len_penalty, 0.6);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"beam": 3, "bean": 4}"#).unwrap();
        let err = RunConfig::load(Some(&p), &[]).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn overrides_beat_file_values_and_are_validated() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"beam": 3, "seed": 9}"#).unwrap();
        let c = RunConfig::load(Some(&p), &["beam=7".into(), "work_dir=out/x".into()]).unwrap();
        assert_eq!(c.beam, 7);
        assert_eq!(c.seed, 9);
        assert_eq!(c.work_dir, PathBuf::from("out/x"));
        let err = RunConfig::load(Some(&p), &["beam=0".into()]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn effective_dump_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = RunConfig::default();
        c.work_dir = dir.path().join("run");
        c.beam = 2;
        let dumped = c.dump_effective().unwrap();
        let back = RunConfig::load(Some(&dumped), &[]).unwrap();
        assert_eq!(serde_json::to_string(&c).unwrap(), serde_json::to_string(&back).unwrap());
    }

    #[test]
    fn integration_without_heads_is_rejected() {
        let mut c = RunConfig::default();
        c.enable_node = false;
        c.enable_edge = false;
        assert!(c.validate().is_err());
        c.enable_integration = false;
        c.validate().unwrap();
    }
}
