//! Autoregressive decoder with three coupled heads: word generation,
//! node prediction via the averaged top-layer cross-attention, and
//! biaffine arc/label prediction over previously generated positions.
//! The previous step's word embedding, node vector and edge vector are
//! attendable by the next step's first layer when integration is on.
//!
//! Two forward paths exist. The sequential path steps one position at a
//! time and is the ground truth: with integration on, each step's edge
//! vector depends on earlier top-layer states, so training is
//! inherently stepwise. The parallel path runs all positions at once
//! and is valid when integration is off, or when the integration slot
//! vectors are supplied externally (per-position slot masks then
//! restrict each query to its own slot pair).

use crate::data::{GoldArc, ProcessedExample, WORD_BOS};
use crate::tensor::{RngState, Tape, Tensor};

use super::{positional_encoding, Model};

/// Everything one decoding step produces.
pub struct StepOutput {
    pub word_logits: Tensor, // (1, V)
    pub node_dist: Tensor,   // (1, N+1)
    /// Softmax over candidate positions j ∈ 1..=t; None when edge heads
    /// were skipped.
    pub arc_probs: Option<Tensor>, // (t)
    pub label_probs: Option<Tensor>, // (t, R_dec)
    pub s_top: Tensor,       // (1, d)
}

/// Incremental per-layer caches for one decode in progress.
#[derive(Clone)]
pub struct DecoderState {
    /// Completed steps.
    pub step: usize,
    /// Inputs of each layer at positions 1..=step, each (1, d).
    xs: Vec<Vec<Tensor>>,
    /// Top-layer states s^L_j, each (1, d).
    top: Vec<Tensor>,
    arc_to: Vec<Tensor>,
    label_to: Vec<Tensor>,
    /// Integration slots produced by the previous step (zeros at start).
    pub prev_v: Tensor, // (1, d)
    pub prev_e: Tensor, // (1, d_r + d)
    pub h_top: Tensor,  // (N+1, d)
}

impl DecoderState {
    pub fn new(model: &Model, h_top: Tensor) -> DecoderState {
        let cfg = &model.cfg;
        DecoderState {
            step: 0,
            xs: vec![Vec::new(); cfg.layers],
            top: Vec::new(),
            arc_to: Vec::new(),
            label_to: Vec::new(),
            prev_v: Tensor::zeros(&[1, cfg.d]),
            prev_e: Tensor::zeros(&[1, cfg.d_r + cfg.d]),
            h_top,
        }
    }

    /// Stacked top-layer states (step, d).
    pub fn top_stack(&self, tape: &Tape) -> Tensor {
        let refs: Vec<&Tensor> = self.top.iter().collect();
        tape.concat(&refs, 0)
    }
}

/// Teacher-forced outputs over a whole example. Word logits cover
/// positions 1..=M+1 (the last predicts the end symbol); the auxiliary
/// heads cover 1..=M.
pub struct ForwardOutput {
    pub word_logits: Tensor, // (M+1, V)
    pub node_dists: Tensor,  // (M, N+1)
    pub arc_probs: Vec<Tensor>,
    pub label_probs: Vec<Tensor>,
}

impl Model {
    fn linear(&self, tape: &Tape, x: &Tensor, prefix: &str) -> Tensor {
        tape.add(&tape.matmul(x, self.p(&format!("{prefix}.w"))), self.p(&format!("{prefix}.b")))
    }

    /// Multi-head attention (post-softmax probabilities also returned,
    /// averaged over heads, before attention dropout).
    fn mha(
        &self,
        tape: &Tape,
        prefix: &str,
        query: &Tensor,
        keys: &Tensor,
        mask: Option<&Tensor>,
        train: bool,
        rng: &mut RngState,
    ) -> (Tensor, Tensor) {
        let (heads, dh, d) = (self.cfg.heads, self.cfg.d_head(), self.cfg.d);
        let tq = query.shape()[0];
        let tk = keys.shape()[0];
        let q = tape.matmul(query, self.p(&format!("{prefix}.wq")));
        let k = tape.matmul(keys, self.p(&format!("{prefix}.wk")));
        let v = tape.matmul(keys, self.p(&format!("{prefix}.wv")));
        let q3 = tape.permute(&tape.reshape(&q, &[tq, heads, dh]), &[1, 0, 2]);
        let k3 = tape.permute(&tape.reshape(&k, &[tk, heads, dh]), &[1, 0, 2]);
        let v3 = tape.permute(&tape.reshape(&v, &[tk, heads, dh]), &[1, 0, 2]);
        let logits = tape.scale(&tape.matmul(&q3, &tape.transpose2(&k3)), 1.0 / (dh as f64).sqrt());
        let alpha = tape.masked_softmax(&logits, mask, 2);
        let mean = tape.scale(&tape.sum_axis(&alpha, 0, false), 1.0 / heads as f64);
        let alpha = tape.dropout(&alpha, self.cfg.attention_dropout, rng, train);
        let ctx = tape.matmul(&alpha, &v3);
        let merged = tape.reshape(&tape.permute(&ctx, &[1, 0, 2]), &[tq, d]);
        (tape.matmul(&merged, self.p(&format!("{prefix}.wo"))), mean)
    }

    /// One decoder block: self-attention against `self_keys`,
    /// cross-attention against the encoder states, feed-forward;
    /// post-norm residuals throughout. Returns the block output and the
    /// head-averaged cross-attention probabilities.
    fn decoder_layer(
        &self,
        tape: &Tape,
        l: usize,
        x: &Tensor,
        self_keys: &Tensor,
        self_mask: Option<&Tensor>,
        h_top: &Tensor,
        train: bool,
        rng: &mut RngState,
    ) -> (Tensor, Tensor) {
        let eps = self.cfg.ln_eps;
        let p_res = self.cfg.residual_dropout;
        let (sa, _) = self.mha(tape, &format!("dec.{l}.self"), x, self_keys, self_mask, train, rng);
        let x1 = tape.layer_norm(
            &tape.add(x, &tape.dropout(&sa, p_res, rng, train)),
            self.p(&format!("dec.{l}.ln1_g")),
            self.p(&format!("dec.{l}.ln1_b")),
            eps,
        );
        let (ca, cross) = self.mha(tape, &format!("dec.{l}.cross"), &x1, h_top, None, train, rng);
        let x2 = tape.layer_norm(
            &tape.add(&x1, &tape.dropout(&ca, p_res, rng, train)),
            self.p(&format!("dec.{l}.ln2_g")),
            self.p(&format!("dec.{l}.ln2_b")),
            eps,
        );
        let ff1 = tape.add(&tape.matmul(&x2, self.p(&format!("dec.{l}.ff1"))), self.p(&format!("dec.{l}.ff1_b")));
        let ff = tape.add(
            &tape.matmul(&tape.relu(&ff1), self.p(&format!("dec.{l}.ff2"))),
            self.p(&format!("dec.{l}.ff2_b")),
        );
        let x3 = tape.layer_norm(
            &tape.add(&x2, &tape.dropout(&ff, p_res, rng, train)),
            self.p(&format!("dec.{l}.ln3_g")),
            self.p(&format!("dec.{l}.ln3_b")),
            eps,
        );
        (x3, cross)
    }

    /// Biaffine scores x_to[j]ᵀ U y_from + W(x_to[j] ⊕ y_from) + b for
    /// every candidate row j; the concatenation term splits into two
    /// matrix products.
    pub fn biaffine_scores(
        &self,
        tape: &Tape,
        x_to: &Tensor,   // (t, d_biaff)
        y_from: &Tensor, // (1, d_biaff)
        u: &Tensor,
        w: &Tensor, // (2 d_biaff, r)
        b: &Tensor, // (r)
    ) -> Tensor {
        let db = self.cfg.d_biaff;
        let y_vec = tape.reshape(y_from, &[db]);
        let bil = tape.bilinear(x_to, u, &y_vec);
        let w_to = tape.slice(w, 0, 0, db);
        let w_from = tape.slice(w, 0, db, db);
        let lin_to = tape.matmul(x_to, &w_to);
        let lin_from = tape.matmul(y_from, &w_from);
        tape.add(&tape.add(&bil, &lin_to), &tape.add(&lin_from, b))
    }

    /// Arc and label distributions for step t given the stacked `to`
    /// projections of s^L_{1..t} and the current top state.
    pub(crate) fn arc_label_heads(
        &self,
        tape: &Tape,
        arc_to: &Tensor,   // (t, d_biaff)
        label_to: &Tensor, // (t, d_biaff)
        s_t: &Tensor,      // (1, d)
    ) -> (Tensor, Tensor) {
        let t = arc_to.shape()[0];
        let arc_from = self.linear(tape, s_t, "biaff.arc_from");
        let label_from = self.linear(tape, s_t, "biaff.label_from");
        let arc_scores = self.biaffine_scores(
            tape,
            arc_to,
            &arc_from,
            self.p("biaff.u_arc"),
            self.p("biaff.w_arc"),
            self.p("biaff.b_arc"),
        );
        let arc_probs = tape.masked_softmax(&tape.reshape(&arc_scores, &[t]), None, 0);
        let label_scores = self.biaffine_scores(
            tape,
            label_to,
            &label_from,
            self.p("biaff.u_label"),
            self.p("biaff.w_label"),
            self.p("biaff.b_label"),
        );
        let label_probs = tape.masked_softmax(&label_scores, None, 1);
        (arc_probs, label_probs)
    }

    /// Advance the decoder by one position. `y_prev` is the previous
    /// word (BOS at the first step). The integration slots read
    /// `st.prev_v` / `st.prev_e`, which the caller refreshes afterwards
    /// via [`Model::integrate_predicted`] or [`Model::integrate_gold`].
    pub fn decode_step(
        &self,
        tape: &Tape,
        st: &mut DecoderState,
        y_prev: usize,
        want_edges: bool,
        train: bool,
        rng: &mut RngState,
    ) -> StepOutput {
        let t = st.step + 1;
        let d = self.cfg.d;
        let emb = tape.gather_rows(self.p("word_emb"), &[y_prev]);
        let pe = Tensor::new(&[1, d], positional_encoding(t - 1, d));
        let x = tape.add(&tape.scale(&emb, (d as f64).sqrt()), &pe);
        let mut cur = tape.dropout(&x, self.cfg.residual_dropout, rng, train);
        let mut beta = None;
        for l in 0..self.cfg.layers {
            st.xs[l].push(cur.clone());
            let mut parts: Vec<Tensor> = st.xs[l].clone();
            if l == 0 && self.cfg.enable_integration {
                parts.push(st.prev_v.clone());
                parts.push(tape.matmul(&st.prev_e, self.p("intg.e_proj")));
            }
            let refs: Vec<&Tensor> = parts.iter().collect();
            let keys = tape.concat(&refs, 0);
            let (out, cross) = self.decoder_layer(tape, l, &cur, &keys, None, &st.h_top, train, rng);
            if l == self.cfg.layers - 1 {
                beta = Some(cross);
            }
            cur = out;
        }
        st.top.push(cur.clone());
        st.arc_to.push(self.linear(tape, &cur, "biaff.arc_to"));
        st.label_to.push(self.linear(tape, &cur, "biaff.label_to"));
        st.step = t;
        let word_logits = tape.matmul(&cur, &tape.transpose2(self.p("word_emb")));
        let (arc_probs, label_probs) = if want_edges {
            let to_a: Vec<&Tensor> = st.arc_to.iter().collect();
            let to_l: Vec<&Tensor> = st.label_to.iter().collect();
            let (a, lp) = self.arc_label_heads(tape, &tape.concat(&to_a, 0), &tape.concat(&to_l, 0), &cur);
            (Some(a), Some(lp))
        } else {
            (None, None)
        };
        StepOutput {
            word_logits,
            node_dist: beta.expect("at least one decoder layer"),
            arc_probs,
            label_probs,
            s_top: cur,
        }
    }

    /// Refresh the integration slots from this step's predictions
    /// (inference / forced decoding).
    pub fn integrate_predicted(&self, tape: &Tape, st: &mut DecoderState, out: &StepOutput) {
        let cfg = &self.cfg;
        st.prev_v = if cfg.enable_node {
            tape.matmul(&out.node_dist, &st.h_top)
        } else {
            Tensor::zeros(&[1, cfg.d])
        };
        st.prev_e = if cfg.enable_edge {
            let arc = out.arc_probs.as_ref().expect("edge head output");
            let lab = out.label_probs.as_ref().expect("edge head output");
            let t = arc.shape()[0];
            let joint = tape.mul(lab, &tape.reshape(arc, &[t, 1]));
            let q = tape.reshape(&tape.sum_axis(&joint, 0, false), &[1, cfg.n_labels()]);
            let r = tape.matmul(&q, &self.label_embeddings(tape));
            let s = tape.matmul(&tape.reshape(arc, &[1, t]), &st.top_stack(tape));
            tape.concat(&[&r, &s], 1)
        } else {
            Tensor::zeros(&[1, cfg.d_r + cfg.d])
        };
    }

    /// Refresh the integration slots from gold supervision (teacher
    /// forcing): the normalized gold alignment row and the gold arcs
    /// leaving the current position (uniformly weighted).
    pub fn integrate_gold(&self, tape: &Tape, st: &mut DecoderState, gold_row: &[f64], arcs: &[GoldArc]) {
        let cfg = &self.cfg;
        st.prev_v = if cfg.enable_node {
            assert_eq!(gold_row.len(), st.h_top.shape()[0], "gold alignment row length");
            tape.matmul(&Tensor::new(&[1, gold_row.len()], gold_row.to_vec()), &st.h_top)
        } else {
            Tensor::zeros(&[1, cfg.d])
        };
        st.prev_e = if cfg.enable_edge {
            assert!(!arcs.is_empty(), "every position has at least one gold arc");
            let t = st.step;
            let w = 1.0 / arcs.len() as f64;
            let mut arc_w = vec![0.0; t];
            let mut lab_w = vec![0.0; cfg.n_labels()];
            for a in arcs {
                assert!(a.to >= 1 && a.to <= t, "gold arc target out of range");
                arc_w[a.to - 1] += w;
                lab_w[a.label] += w;
            }
            let r = tape.matmul(&Tensor::new(&[1, cfg.n_labels()], lab_w), &self.label_embeddings(tape));
            let s = tape.matmul(&Tensor::new(&[1, t], arc_w), &st.top_stack(tape));
            tape.concat(&[&r, &s], 1)
        } else {
            Tensor::zeros(&[1, cfg.d_r + cfg.d])
        };
    }

    /// Teacher-forced forward over a whole example, stepping
    /// sequentially. Correct for every configuration; required when
    /// integration is on.
    pub fn forward_teacher(
        &self,
        tape: &Tape,
        ex: &ProcessedExample,
        h_top: &Tensor,
        train: bool,
        rng: &mut RngState,
    ) -> ForwardOutput {
        let m = ex.tokens.len();
        let mut st = DecoderState::new(self, h_top.clone());
        let mut inputs = Vec::with_capacity(m + 1);
        inputs.push(WORD_BOS);
        inputs.extend_from_slice(&ex.tokens);
        let mut logits = Vec::with_capacity(m + 1);
        let mut nodes = Vec::with_capacity(m);
        let mut arc_probs = Vec::with_capacity(m);
        let mut label_probs = Vec::with_capacity(m);
        for t in 1..=m + 1 {
            let last = t == m + 1;
            let out = self.decode_step(tape, &mut st, inputs[t - 1], !last, train, rng);
            logits.push(out.word_logits.clone());
            if !last {
                nodes.push(out.node_dist.clone());
                arc_probs.push(out.arc_probs.clone().expect("edge heads requested"));
                label_probs.push(out.label_probs.clone().expect("edge heads requested"));
                if self.cfg.enable_integration {
                    let gold_arcs: Vec<GoldArc> = ex.arcs_from(t).copied().collect();
                    self.integrate_gold(tape, &mut st, ex.gold_align.row(t - 1), &gold_arcs);
                }
            }
        }
        let logit_refs: Vec<&Tensor> = logits.iter().collect();
        let node_refs: Vec<&Tensor> = nodes.iter().collect();
        ForwardOutput {
            word_logits: tape.concat(&logit_refs, 0),
            node_dists: tape.concat(&node_refs, 0),
            arc_probs,
            label_probs,
        }
    }

    /// Teacher-forced forward over all positions at once. Valid when
    /// integration is off; with integration on, the per-position slot
    /// vectors (v rows t, e rows t for query position t+1, zeros in row
    /// 0) must be supplied and each query sees exactly its own slot
    /// pair through the mask.
    pub fn forward_parallel(
        &self,
        tape: &Tape,
        ex: &ProcessedExample,
        h_top: &Tensor,
        slots: Option<(&Tensor, &Tensor)>,
        train: bool,
        rng: &mut RngState,
    ) -> ForwardOutput {
        assert!(
            slots.is_some() || !self.cfg.enable_integration,
            "parallel forward with integration needs slot vectors"
        );
        let m = ex.tokens.len();
        let tq = m + 1;
        let d = self.cfg.d;
        let mut inputs = Vec::with_capacity(tq);
        inputs.push(WORD_BOS);
        inputs.extend_from_slice(&ex.tokens);
        let emb = tape.gather_rows(self.p("word_emb"), &inputs);
        let mut pe = vec![0.0; tq * d];
        for (p, row) in pe.chunks_mut(d).enumerate() {
            row.copy_from_slice(&positional_encoding(p, d));
        }
        let x = tape.add(&tape.scale(&emb, (d as f64).sqrt()), &Tensor::new(&[tq, d], pe));
        let mut cur = tape.dropout(&x, self.cfg.residual_dropout, rng, train);

        let mut causal = vec![0.0; tq * tq];
        for p in 0..tq {
            for j in 0..=p {
                causal[p * tq + j] = 1.0;
            }
        }
        let causal = Tensor::new(&[1, tq, tq], causal);
        let slot_mask = slots.map(|_| {
            // query p sees slot row p only (its predecessor's vectors)
            let mut eye = vec![0.0; tq * tq];
            for p in 0..tq {
                eye[p * tq + p] = 1.0;
            }
            let eye = Tensor::new(&[1, tq, tq], eye);
            tape.concat(&[&causal, &eye, &eye], 2)
        });

        let mut beta_all = None;
        for l in 0..self.cfg.layers {
            let (keys, mask) = match (l, slots) {
                (0, Some((v, e))) => {
                    let eproj = tape.matmul(e, self.p("intg.e_proj"));
                    (
                        tape.concat(&[&cur, v, &eproj], 0),
                        slot_mask.as_ref().expect("slot mask built").clone(),
                    )
                }
                _ => (cur.clone(), causal.clone()),
            };
            let (out, cross) = self.decoder_layer(tape, l, &cur, &keys, Some(&mask), h_top, train, rng);
            if l == self.cfg.layers - 1 {
                beta_all = Some(cross);
            }
            cur = out;
        }
        let beta_all = beta_all.expect("at least one decoder layer");

        let word_logits = tape.matmul(&cur, &tape.transpose2(self.p("word_emb")));
        let node_dists = tape.slice(&beta_all, 0, 0, m);
        let to_a = self.linear(tape, &cur, "biaff.arc_to");
        let to_l = self.linear(tape, &cur, "biaff.label_to");
        let mut arc_probs = Vec::with_capacity(m);
        let mut label_probs = Vec::with_capacity(m);
        for t in 1..=m {
            let (a, lp) = self.arc_label_heads(
                tape,
                &tape.slice(&to_a, 0, 0, t),
                &tape.slice(&to_l, 0, 0, t),
                &tape.slice(&cur, 0, t - 1, 1),
            );
            arc_probs.push(a);
            label_probs.push(lp);
        }
        ForwardOutput {
            word_logits,
            node_dists,
            arc_probs,
            label_probs,
        }
    }
}
