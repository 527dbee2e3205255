//! Graph encoder: stacked relation-conditioned multi-head
//! self-attention over the augmented node set. Attention logits add a
//! relation term (query · projected relation embedding) and attention
//! outputs add the relation projection itself, so each node pair's
//! shortest-label-path relation conditions both where and what to
//! attend.

use crate::tensor::{RngState, Tape, Tensor};

use super::Model;

impl Model {
    /// Encode the augmented node set: concept embeddings through
    /// `layers` post-norm blocks. `rel_ids` is the row-major
    /// (n × n) relation-id grid. Returns the top-layer states (n, d).
    pub fn encode(
        &self,
        tape: &Tape,
        concept_ids: &[usize],
        rel_ids: &[usize],
        train: bool,
        rng: &mut RngState,
    ) -> Tensor {
        let n = concept_ids.len();
        assert_eq!(rel_ids.len(), n * n, "relation grid size mismatch");
        let emb = tape.gather_rows(self.p("concept_emb"), concept_ids);
        let mut h = tape.scale(&emb, (self.cfg.d as f64).sqrt());
        h = tape.dropout(&h, self.cfg.residual_dropout, rng, train);
        for l in 0..self.cfg.layers {
            h = self.encoder_layer(tape, l, &h, rel_ids, train, rng);
        }
        h
    }

    fn encoder_layer(
        &self,
        tape: &Tape,
        l: usize,
        h: &Tensor,
        rel_ids: &[usize],
        train: bool,
        rng: &mut RngState,
    ) -> Tensor {
        let eps = self.cfg.ln_eps;
        let p_res = self.cfg.residual_dropout;
        let attn = self.relation_attention(tape, l, h, rel_ids, train, rng);
        let x = tape.add(h, &tape.dropout(&attn, p_res, rng, train));
        let x = tape.layer_norm(
            &x,
            self.p(&format!("enc.{l}.ln1_g")),
            self.p(&format!("enc.{l}.ln1_b")),
            eps,
        );
        let ff1 = tape.add(&tape.matmul(&x, self.p(&format!("enc.{l}.ff1"))), self.p(&format!("enc.{l}.ff1_b")));
        let ff = tape.add(
            &tape.matmul(&tape.relu(&ff1), self.p(&format!("enc.{l}.ff2"))),
            self.p(&format!("enc.{l}.ff2_b")),
        );
        let y = tape.add(&x, &tape.dropout(&ff, p_res, rng, train));
        tape.layer_norm(
            &y,
            self.p(&format!("enc.{l}.ln2_g")),
            self.p(&format!("enc.{l}.ln2_b")),
            eps,
        )
    }

    /// One layer's relation-conditioned self-attention (without
    /// residual/norm). Per head: logits_ij = q_i·(k_j + rρ_ij)/√d_head,
    /// output_i = Σ_j α_ij (v_j + rρ_ij) with rρ the per-layer
    /// projection of the pairwise relation embeddings.
    pub fn relation_attention(
        &self,
        tape: &Tape,
        l: usize,
        h: &Tensor,
        rel_ids: &[usize],
        train: bool,
        rng: &mut RngState,
    ) -> Tensor {
        let n = h.shape()[0];
        let heads = self.cfg.heads;
        let dh = self.cfg.d_head();
        let q = tape.matmul(h, self.p(&format!("enc.{l}.wq")));
        let k = tape.matmul(h, self.p(&format!("enc.{l}.wk")));
        let v = tape.matmul(h, self.p(&format!("enc.{l}.wv")));
        let rel = tape.gather_rows(self.p("rel_emb"), rel_ids);
        let rp = tape.matmul(&rel, self.p(&format!("enc.{l}.wr")));
        let rp3 = tape.reshape(&rp, &[n, n, dh]);
        let q3 = tape.permute(&tape.reshape(&q, &[n, heads, dh]), &[1, 0, 2]);
        let k3 = tape.permute(&tape.reshape(&k, &[n, heads, dh]), &[1, 0, 2]);
        let v3 = tape.permute(&tape.reshape(&v, &[n, heads, dh]), &[1, 0, 2]);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let qh = tape.reshape(&tape.slice(&q3, 0, hd, 1), &[n, dh]);
            let kh = tape.reshape(&tape.slice(&k3, 0, hd, 1), &[n, dh]);
            let vh = tape.reshape(&tape.slice(&v3, 0, hd, 1), &[n, dh]);
            let base = tape.matmul(&qh, &tape.transpose2(&kh));
            // rel_term[i, j] = q_i · rρ_ij, batched over i
            let rel_term = tape.reshape(&tape.matmul(&rp3, &tape.reshape(&qh, &[n, dh, 1])), &[n, n]);
            let logits = tape.scale(&tape.add(&base, &rel_term), scale);
            let alpha = tape.masked_softmax(&logits, None, 1);
            let alpha = tape.dropout(&alpha, self.cfg.attention_dropout, rng, train);
            let ctx = tape.matmul(&alpha, &vh);
            // rel_ctx[i] = Σ_j α_ij rρ_ij, batched over i
            let rel_ctx = tape.reshape(&tape.matmul(&tape.reshape(&alpha, &[n, 1, n]), &rp3), &[n, dh]);
            outs.push(tape.add(&ctx, &rel_ctx));
        }
        let refs: Vec<&Tensor> = outs.iter().collect();
        let cat = tape.concat(&refs, 1);
        tape.matmul(&cat, self.p(&format!("enc.{l}.wo")))
    }
}
