//! Training: the three loss terms (word cross-entropy, node-alignment
//! supervision, arc/label supervision), their weighted sum, Adam with
//! an inverse-square-root warmup schedule, global-norm gradient
//! clipping, token-count batching, and the training loop with periodic
//! dev BLEU and best-checkpoint tracking.

use std::io::Write as _;
use std::path::PathBuf;

use serde::Serialize;

use crate::data::{ProcessedExample, WORD_EOS};
use crate::error::{Error, Result};
use crate::evaluate::{beam_search, corpus_bleu, GenOptions};
use crate::model::{ForwardOutput, Model, NodeLossKind};
use crate::tensor::{RngState, Tape, Tensor};

/// Word-sequence cross-entropy: the forced-decoding logits (M+1, V)
/// against the gold words followed by the end symbol, summed over
/// positions.
pub fn loss_std(tape: &Tape, word_logits: &Tensor, tokens: &[usize]) -> Tensor {
    let shape = word_logits.shape();
    let (rows, v) = (shape[0], shape[1]);
    assert_eq!(rows, tokens.len() + 1, "logit rows must cover every gold word plus the end symbol");
    let mut target = vec![0.0; rows * v];
    for (t, row) in target.chunks_mut(v).enumerate() {
        let w = if t < tokens.len() { tokens[t] } else { WORD_EOS };
        row[w] = 1.0;
    }
    tape.cross_entropy(&Tensor::new(&[rows, v], target), word_logits)
}

/// Node-alignment loss between the predicted word-to-node attention
/// rows β′ (M, N+1) and the normalized gold alignment, summed over
/// steps. CE operates on the probabilities directly (they are already
/// normalized); MSE is the summed squared difference.
pub fn loss_node(tape: &Tape, node_dists: &Tensor, ex: &ProcessedExample, kind: NodeLossKind) -> Tensor {
    let shape = node_dists.shape();
    assert_eq!(shape[0], ex.n_tokens());
    assert_eq!(shape[1], ex.n_nodes());
    let gold = Tensor::new(&shape, ex.gold_align.rows().to_vec());
    match kind {
        NodeLossKind::Ce => tape.neg(&tape.sum(&tape.mul(&gold, &tape.log(node_dists)))),
        NodeLossKind::Mse => tape.mse(node_dists, &gold),
    }
}

/// Arc/label loss: −log of the joint probability ψ^label·ψ^arc at each
/// gold arc, summed over arcs. `arc_probs[t-1]` holds the arc
/// distribution over positions 1..t at step t, `label_probs[t-1]` the
/// per-position label distributions (t, R).
pub fn loss_label(
    tape: &Tape,
    arc_probs: &[Tensor],
    label_probs: &[Tensor],
    ex: &ProcessedExample,
) -> Tensor {
    let r = if label_probs.is_empty() { 0 } else { label_probs[0].shape()[1] };
    let mut terms = Vec::new();
    for a in &ex.arcs {
        let arc_p = tape.gather(&arc_probs[a.from - 1], &[a.to - 1]);
        let label_p = tape.gather(&label_probs[a.from - 1], &[(a.to - 1) * r + a.label]);
        terms.push(tape.neg(&tape.add(&tape.log(&arc_p), &tape.log(&label_p))));
    }
    match terms.len() {
        0 => Tensor::zeros(&[1]),
        1 => terms.pop().unwrap(),
        _ => {
            let refs: Vec<&Tensor> = terms.iter().collect();
            tape.sum(&tape.concat(&refs, 0))
        }
    }
}

/// Per-example loss components (as tape nodes, so any of them can be
/// differentiated).
pub struct Losses {
    pub std: Tensor,
    pub node: Tensor,
    pub label: Tensor,
    pub total: Tensor,
}

/// ℓ_total = ℓ_std + λ_node·ℓ_node + λ_label·ℓ_label for one example.
/// Disabled heads contribute exactly zero.
pub fn example_losses(
    model: &Model,
    tape: &Tape,
    ex: &ProcessedExample,
    out: &ForwardOutput,
    lambda_node: f64,
    lambda_label: f64,
) -> Losses {
    let std = loss_std(tape, &out.word_logits, &ex.tokens);
    let node = if model.cfg.enable_node {
        loss_node(tape, &out.node_dists, ex, model.cfg.node_loss)
    } else {
        Tensor::zeros(&[1])
    };
    let label = if model.cfg.enable_edge {
        loss_label(tape, &out.arc_probs, &out.label_probs, ex)
    } else {
        Tensor::zeros(&[1])
    };
    let total = tape.add(
        &std,
        &tape.add(&tape.scale(&node, lambda_node), &tape.scale(&label, lambda_label)),
    );
    Losses { std, node, label, total }
}

/// Inverse-square-root learning-rate schedule with linear warmup:
/// lr(step) = factor · d^-0.5 · min(step^-0.5, step · warmup^-1.5).
/// Peaks at `warmup`.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub factor: f64,
    pub warmup: usize,
    pub d: usize,
}

impl Schedule {
    pub fn lr(&self, step: usize) -> f64 {
        assert!(step >= 1, "schedule steps are 1-based");
        let s = step as f64;
        let w = self.warmup.max(1) as f64;
        self.factor * (self.d as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
    }
}

/// Adam with bias correction (β1 = 0.9, β2 = 0.98, ε = 1e-9 by
/// default); the learning rate is supplied per step.
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: usize,
}

impl Adam {
    pub fn new(params: &[Tensor]) -> Adam {
        Adam {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &[Tensor], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "optimizer/parameter count mismatch");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in params.iter().enumerate() {
            p.update(|data, grad| {
                for (j, g) in grad.iter().enumerate() {
                    self.m[i][j] = self.beta1 * self.m[i][j] + (1.0 - self.beta1) * g;
                    self.v[i][j] = self.beta2 * self.v[i][j] + (1.0 - self.beta2) * g * g;
                    let mhat = self.m[i][j] / bc1;
                    let vhat = self.v[i][j] / bc2;
                    data[j] -= lr * mhat / (vhat.sqrt() + self.eps);
                }
            });
        }
    }
}

/// L2 norm of all gradients taken together.
pub fn global_grad_norm(params: &[Tensor]) -> f64 {
    params
        .iter()
        .map(|p| p.grad().iter().map(|g| g * g).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Scale gradients so the global norm is at most `max_norm`. Returns
/// the pre-clip norm.
pub fn clip_grad_norm(params: &[Tensor], max_norm: f64) -> f64 {
    let norm = global_grad_norm(params);
    if norm > max_norm {
        let s = max_norm / norm;
        for p in params {
            p.update(|_, grad| {
                for g in grad.iter_mut() {
                    *g *= s;
                }
            });
        }
    }
    norm
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub max_steps: usize,
    /// Batches close once the summed gold-token count reaches this.
    pub batch_tokens: usize,
    pub eval_every: usize,
    pub lambda_node: f64,
    pub lambda_label: f64,
    pub lr_factor: f64,
    pub warmup: usize,
    pub clip_norm: f64,
    pub seed: u64,
    pub beam: usize,
    pub len_penalty: f64,
    pub metrics_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
    pub log_every: usize,
}

impl Default for TrainOptions {
    fn default() -> TrainOptions {
        TrainOptions {
            max_steps: 1000,
            batch_tokens: 512,
            eval_every: 200,
            lambda_node: 0.01,
            lambda_label: 0.1,
            lr_factor: 0.5,
            warmup: 400,
            clip_norm: 1.0,
            seed: 0,
            beam: 5,
            len_penalty: 0.6,
            metrics_path: None,
            checkpoint_path: None,
            log_every: 50,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StepMetrics {
    pub step: usize,
    pub lr: f64,
    pub loss_std: f64,
    pub loss_node: f64,
    pub loss_label: f64,
    pub loss_total: f64,
    pub grad_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_bleu: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub steps: usize,
    pub final_loss: f64,
    pub best_dev_bleu: Option<f64>,
    pub best_dev_step: Option<usize>,
}

fn shuffled(n: usize, rng: &mut RngState) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        idx.swap(i, rng.below(i + 1));
    }
    idx
}

/// Dev-set BLEU under beam search (token ids against gold token ids).
pub fn dev_bleu(model: &Model, dev: &[ProcessedExample], beam: usize, len_penalty: f64) -> Result<f64> {
    let opts = GenOptions { beam, len_penalty, max_len: None };
    let mut cands = Vec::with_capacity(dev.len());
    let mut refs = Vec::with_capacity(dev.len());
    for ex in dev {
        cands.push(beam_search(model, &ex.concept_ids, &ex.rel_ids, &opts).tokens);
        refs.push(ex.tokens.clone());
    }
    corpus_bleu(&cands, &refs)
}

/// Run the training loop. Deterministic for a fixed seed: example
/// order, dropout, and all arithmetic replay identically. Saves the
/// best-dev-BLEU checkpoint when a path is given, appends one JSON
/// line of metrics per logged step, and fails with a numeric error on
/// a non-finite loss.
pub fn train(
    model: &Model,
    train_set: &[ProcessedExample],
    dev_set: &[ProcessedExample],
    opts: &TrainOptions,
) -> Result<TrainReport> {
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let params = model.params.tensors();
    let mut adam = Adam::new(&params);
    let schedule = Schedule { factor: opts.lr_factor, warmup: opts.warmup, d: model.cfg.d };
    let mut rng = RngState::new(opts.seed);
    let mut metrics_file = match &opts.metrics_path {
        Some(p) => Some(std::fs::OpenOptions::new().create(true).append(true).open(p)?),
        None => None,
    };

    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;
    let mut best_dev: Option<(f64, usize)> = None;
    let mut final_loss = f64::NAN;

    for step in 1..=opts.max_steps {
        // assemble a batch by token budget (at least one example)
        let mut batch: Vec<&ProcessedExample> = Vec::new();
        let mut tokens = 0usize;
        loop {
            if cursor >= order.len() {
                order = shuffled(train_set.len(), &mut rng);
                cursor = 0;
            }
            let ex = &train_set[order[cursor]];
            cursor += 1;
            tokens += ex.n_tokens();
            batch.push(ex);
            if tokens >= opts.batch_tokens || batch.is_empty() {
                break;
            }
        }

        let tape = Tape::new();
        let mut sums = (0.0, 0.0, 0.0);
        let mut totals = Vec::with_capacity(batch.len());
        for ex in &batch {
            let h_top = model.encode(&tape, &ex.concept_ids, &ex.rel_ids, true, &mut rng);
            let out = model.forward_teacher(&tape, ex, &h_top, true, &mut rng);
            let l = example_losses(model, &tape, ex, &out, opts.lambda_node, opts.lambda_label);
            sums.0 += l.std.item();
            sums.1 += l.node.item();
            sums.2 += l.label.item();
            totals.push(l.total);
        }
        let mut summed = totals[0].clone();
        for t in &totals[1..] {
            summed = tape.add(&summed, t);
        }
        let batch_loss = tape.scale(&summed, 1.0 / batch.len() as f64);
        let loss_val = batch_loss.item();
        if !loss_val.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {loss_val} at step {step}")));
        }
        final_loss = loss_val;

        for p in &params {
            p.zero_grad();
        }
        tape.backward(&batch_loss);
        let grad_norm = clip_grad_norm(&params, opts.clip_norm);
        let lr = schedule.lr(step);
        adam.step(&params, lr);

        let eval_now = opts.eval_every > 0 && step % opts.eval_every == 0 && !dev_set.is_empty();
        let bleu = if eval_now {
            let b = dev_bleu(model, dev_set, opts.beam, opts.len_penalty)?;
            if best_dev.map_or(true, |(best, _)| b > best) {
                best_dev = Some((b, step));
                if let Some(path) = &opts.checkpoint_path {
                    model.save(path, opts.seed)?;
                }
            }
            Some(b)
        } else {
            None
        };

        if bleu.is_some() || (opts.log_every > 0 && step % opts.log_every == 0) || step == opts.max_steps {
            let n = batch.len() as f64;
            let m = StepMetrics {
                step,
                lr,
                loss_std: sums.0 / n,
                loss_node: sums.1 / n,
                loss_label: sums.2 / n,
                loss_total: loss_val,
                grad_norm,
                dev_bleu: bleu,
            };
            if let Some(f) = metrics_file.as_mut() {
                writeln!(f, "{}", serde_json::to_string(&m)?)?;
            }
        }
    }

    // save the final model when no eval point ever fired
    if best_dev.is_none() {
        if let Some(path) = &opts.checkpoint_path {
            model.save(path, opts.seed)?;
        }
    }

    Ok(TrainReport {
        steps: opts.max_steps,
        final_loss,
        best_dev_bleu: best_dev.map(|(b, _)| b),
        best_dev_step: best_dev.map(|(_, s)| s),
    })
}
