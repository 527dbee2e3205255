use super::decoder::DecoderState;
use super::*;
use crate::amr::parse_penman;
use crate::data::{Pipeline, RawExample, RawGraph, ProcessedExample};
use crate::tensor::{grad_check, RngState, Tape, Tensor};

pub(crate) fn fig1_raw() -> RawExample {
    let g = parse_penman("(p / possible-01 :ARG1 (h / help-01 :ARG0 (p2 / police) :ARG1 (v / victim)))").unwrap();
    RawExample {
        graph: RawGraph::from_amr(&g),
        tokens: ["the", "police", "could", "help", "the", "victim"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        align: vec![(2, 2), (3, 0), (4, 1), (6, 3)],
    }
}

fn cfg_from_pipeline(p: &Pipeline, flags: (bool, bool, bool)) -> ModelConfig {
    ModelConfig {
        layers: 2,
        d: 16,
        heads: 2,
        d_r: 6,
        d_biaff: 10,
        ffn: 24,
        word_vocab: p.words.len(),
        concept_vocab: p.concepts.len(),
        relation_vocab: p.relations.len(),
        label_rel_ids: p.labels.rel_ids().to_vec(),
        node_loss: NodeLossKind::Ce,
        enable_node: flags.0,
        enable_edge: flags.1,
        enable_integration: flags.2,
        share_relation_embeddings: true,
        attention_dropout: 0.3,
        residual_dropout: 0.1,
        ln_eps: 1e-5,
    }
}

pub(crate) fn fixture(flags: (bool, bool, bool), seed: u64) -> (Model, ProcessedExample) {
    let (p, processed) = Pipeline::build(&[fig1_raw()], 4, 5002, true).unwrap();
    let model = Model::new(cfg_from_pipeline(&p, flags), seed).unwrap();
    (model, processed.into_iter().next().unwrap())
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let (da, db) = (a.data(), b.data());
    da.iter().zip(db.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn assert_bits_equal(a: &Tensor, b: &Tensor, what: &str) {
    assert_eq!(a.shape(), b.shape(), "{what}: shape");
    let (da, db) = (a.data(), b.data());
    for (i, (x, y)) in da.iter().zip(db.iter()).enumerate() {
        assert_eq!(x.to_bits(), y.to_bits(), "{what}: element {i}: {x} vs {y}");
    }
}

// naive row-major (m,k)x(k,n)
fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            for j in 0..n {
                c[i * n + j] += av * b[p * n + j];
            }
        }
    }
    c
}

/// Literal per-pair evaluation of the relation-aware attention layer.
fn naive_relation_attention(model: &Model, l: usize, h: &[f64], n: usize, rel_ids: &[usize]) -> Vec<f64> {
    let (d, heads, dh, dr) = (model.cfg.d, model.cfg.heads, model.cfg.d_head(), model.cfg.d_r);
    let q = mm(h, &model.p(&format!("enc.{l}.wq")).data(), n, d, d);
    let k = mm(h, &model.p(&format!("enc.{l}.wk")).data(), n, d, d);
    let v = mm(h, &model.p(&format!("enc.{l}.wv")).data(), n, d, d);
    let gamma = model.p("rel_emb").data();
    let wr = model.p(&format!("enc.{l}.wr")).data();
    // rp[i][j] = wr^T γ_{rel(i,j)}
    let mut rp = vec![0.0; n * n * dh];
    for i in 0..n {
        for j in 0..n {
            let g = &gamma[rel_ids[i * n + j] * dr..(rel_ids[i * n + j] + 1) * dr];
            for c in 0..dh {
                let mut acc = 0.0;
                for a in 0..dr {
                    acc += g[a] * wr[a * dh + c];
                }
                rp[(i * n + j) * dh + c] = acc;
            }
        }
    }
    let mut cat = vec![0.0; n * d];
    for hd in 0..heads {
        for i in 0..n {
            let mut e = vec![0.0; n];
            for j in 0..n {
                let mut acc = 0.0;
                for c in 0..dh {
                    acc += q[i * d + hd * dh + c] * (k[j * d + hd * dh + c] + rp[(i * n + j) * dh + c]);
                }
                e[j] = acc / (dh as f64).sqrt();
            }
            let mx = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = e.iter().map(|x| (x - mx).exp()).sum();
            let alpha: Vec<f64> = e.iter().map(|x| (x - mx).exp() / z).collect();
            for c in 0..dh {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += alpha[j] * (v[j * d + hd * dh + c] + rp[(i * n + j) * dh + c]);
                }
                cat[i * d + hd * dh + c] = acc;
            }
        }
    }
    mm(&cat, &model.p("enc.0.wo").data(), n, d, d)
}

#[test]
fn relation_attention_matches_double_loop_oracle() {
    let mut rng = RngState::new(7);
    for trial in 0..50 {
        let (model, ex) = fixture((false, false, false), 100 + trial);
        let n = ex.n_nodes();
        let h_data: Vec<f64> = (0..n * model.cfg.d).map(|_| rng.normal(0.0, 1.0)).collect();
        let tape = Tape::new();
        let h = Tensor::new(&[n, model.cfg.d], h_data.clone());
        let got = model.relation_attention(&tape, 0, &h, &ex.rel_ids, false, &mut rng);
        let want = naive_relation_attention(&model, 0, &h_data, n, &ex.rel_ids);
        let gd = got.data();
        let diff = gd.iter().zip(want.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff <= 1e-9, "trial {trial}: diff {diff}");
    }
}

#[test]
fn zero_relation_projection_is_vanilla_attention() {
    let (model, ex) = fixture((false, false, false), 3);
    let n = ex.n_nodes();
    model.p("enc.0.wr").set_data(vec![0.0; model.cfg.d_r * model.cfg.d_head()]);
    let mut rng = RngState::new(11);
    let h_data: Vec<f64> = (0..n * model.cfg.d).map(|_| rng.normal(0.0, 1.0)).collect();
    let tape = Tape::new();
    let h = Tensor::new(&[n, model.cfg.d], h_data.clone());
    let got = model.relation_attention(&tape, 0, &h, &ex.rel_ids, false, &mut rng);
    // the oracle's rp is exactly zero here, so this is vanilla attention
    let want = naive_relation_attention(&model, 0, &h_data, n, &ex.rel_ids);
    let gd = got.data();
    let diff = gd.iter().zip(want.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff <= 1e-12, "diff {diff}");
}

#[test]
fn encoder_permutation_equivariance() {
    let (model, ex) = fixture((false, false, false), 5);
    let n = ex.n_nodes();
    // permutation fixing nothing in particular
    let perm: Vec<usize> = vec![2, 0, 4, 1, 3]; // new index -> old index
    let ids_p: Vec<usize> = perm.iter().map(|&o| ex.concept_ids[o]).collect();
    let mut rel_p = vec![0usize; n * n];
    for i in 0..n {
        for j in 0..n {
            rel_p[i * n + j] = ex.rel_ids[perm[i] * n + perm[j]];
        }
    }
    let mut rng = RngState::new(0);
    let tape = Tape::new();
    let h = model.encode(&tape, &ex.concept_ids, &ex.rel_ids, false, &mut rng);
    let hp = model.encode(&tape, &ids_p, &rel_p, false, &mut rng);
    let (hd, hpd) = (h.data(), hp.data());
    let d = model.cfg.d;
    for i in 0..n {
        for c in 0..d {
            let a = hpd[i * d + c];
            let b = hd[perm[i] * d + c];
            assert!((a - b).abs() <= 1e-9, "node {i} dim {c}: {a} vs {b}");
        }
    }
}

#[test]
fn probability_invariants_and_first_step_arc() {
    let (model, ex) = fixture((true, true, true), 9);
    let tape = Tape::new();
    let mut rng = RngState::new(1);
    let h = model.encode(&tape, &ex.concept_ids, &ex.rel_ids, false, &mut rng);
    let out = model.forward_teacher(&tape, &ex, &h, false, &mut rng);
    let m = ex.n_tokens();
    let n1 = ex.n_nodes();
    let nd = out.node_dists.data();
    for t in 0..m {
        let s: f64 = nd[t * n1..(t + 1) * n1].iter().sum();
        assert!((s - 1.0).abs() <= 1e-9, "node row {t} sums to {s}");
    }
    for (t, (a, lp)) in out.arc_probs.iter().zip(&out.label_probs).enumerate() {
        let ad = a.data();
        assert_eq!(ad.len(), t + 1);
        assert!((ad.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        let lpd = lp.data();
        let r = model.cfg.n_labels();
        for j in 0..=t {
            let s: f64 = lpd[j * r..(j + 1) * r].iter().sum();
            assert!((s - 1.0).abs() <= 1e-9, "label row {j} at step {} sums to {s}", t + 1);
        }
        // chain-rule joint over (j, k) is itself a distribution
        let joint: f64 = (0..=t).map(|j| ad[j] * lpd[j * r..(j + 1) * r].iter().sum::<f64>()).sum();
        assert!((joint - 1.0).abs() <= 1e-9);
    }
    // single-candidate softmax at the first step
    assert_eq!(out.arc_probs[0].data(), vec![1.0]);
}

#[test]
fn zero_biaffine_parameters_give_uniform_heads() {
    let (model, ex) = fixture((true, true, false), 13);
    for name in ["biaff.u_arc", "biaff.w_arc", "biaff.b_arc", "biaff.u_label", "biaff.w_label", "biaff.b_label"] {
        let t = model.p(name);
        t.set_data(vec![0.0; t.len()]);
    }
    let tape = Tape::new();
    let mut rng = RngState::new(1);
    let h = model.encode(&tape, &ex.concept_ids, &ex.rel_ids, false, &mut rng);
    let out = model.forward_teacher(&tape, &ex, &h, false, &mut rng);
    let r = model.cfg.n_labels();
    for (t, (a, lp)) in out.arc_probs.iter().zip(&out.label_probs).enumerate() {
        for v in a.data() {
            assert!((v - 1.0 / (t + 1) as f64).abs() <= 1e-12);
        }
        for v in lp.data() {
            assert!((v - 1.0 / r as f64).abs() <= 1e-12);
        }
    }
}

#[test]
fn biaffine_matches_naive_loops() {
    let (model, _) = fixture((true, true, false), 21);
    let (d, db, r) = (model.cfg.d, model.cfg.d_biaff, model.cfg.n_labels());
    let mut rng = RngState::new(2);
    for trial in 0..50 {
        let t = 1 + rng.below(6);
        let x: Vec<f64> = (0..t * db).map(|_| rng.normal(0.0, 1.0)).collect();
        let xl: Vec<f64> = (0..t * db).map(|_| rng.normal(0.0, 1.0)).collect();
        let s: Vec<f64> = (0..d).map(|_| rng.normal(0.0, 1.0)).collect();
        let tape = Tape::new();
        let (arc, lab) = model.arc_label_heads(
            &tape,
            &Tensor::new(&[t, db], x.clone()),
            &Tensor::new(&[t, db], xl.clone()),
            &Tensor::new(&[1, d], s.clone()),
        );
        // naive: project s, evaluate x1ᵀUx2 + W(x1⊕x2) + b, softmax
        let project = |w: &str, b: &str| -> Vec<f64> {
            let wd = model.p(w).data();
            let bd = model.p(b).data();
            let mut y = bd.clone();
            for a in 0..d {
                for c in 0..db {
                    y[c] += s[a] * wd[a * db + c];
                }
            }
            y
        };
        let naive = |x: &[f64], y: &[f64], u: &str, w: &str, b: &str, nr: usize| -> Vec<f64> {
            let ud = model.p(u).data();
            let wd = model.p(w).data();
            let bd = model.p(b).data();
            let mut scores = vec![0.0; t * nr];
            for j in 0..t {
                for k in 0..nr {
                    let mut acc = bd[k];
                    for a in 0..db {
                        for c in 0..db {
                            acc += x[j * db + a] * ud[(a * nr + k) * db + c] * y[c];
                        }
                        acc += x[j * db + a] * wd[a * nr + k];
                    }
                    for c in 0..db {
                        acc += y[c] * wd[(db + c) * nr + k];
                    }
                    scores[j * nr + k] = acc;
                }
            }
            scores
        };
        let softmax = |s: &[f64]| -> Vec<f64> {
            let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = s.iter().map(|v| (v - mx).exp()).sum();
            s.iter().map(|v| (v - mx).exp() / z).collect()
        };
        let ya = project("biaff.arc_from.w", "biaff.arc_from.b");
        let arc_want = softmax(&naive(&x, &ya, "biaff.u_arc", "biaff.w_arc", "biaff.b_arc", 1));
        let ad = arc.data();
        for (a, b) in ad.iter().zip(arc_want.iter()) {
            assert!((a - b).abs() <= 1e-9, "trial {trial}: arc {a} vs {b}");
        }
        let yl = project("biaff.label_from.w", "biaff.label_from.b");
        let raw = naive(&xl, &yl, "biaff.u_label", "biaff.w_label", "biaff.b_label", r);
        let ld = lab.data();
        for j in 0..t {
            let want = softmax(&raw[j * r..(j + 1) * r]);
            for (a, b) in ld[j * r..(j + 1) * r].iter().zip(want.iter()) {
                assert!((a - b).abs() <= 1e-9, "trial {trial}: label {a} vs {b}");
            }
        }
    }
}

#[test]
fn baseline_identity_sequential_equals_parallel_bitwise() {
    let (model, ex) = fixture((false, false, false), 17);
    let tape = Tape::new();
    let mut rng = RngState::new(1);
    let h = model.encode(&tape, &ex.concept_ids, &ex.rel_ids, false, &mut rng);
    let seq = model.forward_teacher(&tape, &ex, &h, false, &mut rng);
    let par = model.forward_parallel(&tape, &ex, &h, None, false, &mut rng);
    assert_bits_equal(&seq.word_logits, &par.word_logits, "word logits");
    assert_bits_equal(&seq.node_dists, &par.node_dists, "node dists");
    for (a, b) in seq.arc_probs.iter().zip(&par.arc_probs) {
        assert_bits_equal(a, b, "arc probs");
    }
    for (a, b) in seq.label_probs.iter().zip(&par.label_probs) {
        assert_bits_equal(a, b, "label probs");
    }
}

#[test]
fn stepwise_equals_parallel_with_slot_masks() {
    let (model, ex) = fixture((true, true, true), 23);
    let tape = Tape::new();
    let mut rng = RngState::new(1);
    let h = model.encode(&tape, &ex.concept_ids, &ex.rel_ids, false, &mut rng);
    // sequential pass, capturing the gold integration slots per step
    let m = ex.n_tokens();
    let mut st = DecoderState::new(&model, h.clone());
    let mut inputs = vec![crate::data::WORD_BOS];
    inputs.extend_from_slice(&ex.tokens);
    let mut v_rows = vec![vec![0.0; model.cfg.d]];
    let mut e_rows = vec![vec![0.0; model.cfg.d_r + model.cfg.d]];
    let mut seq_logits = Vec::new();
    let mut seq_nodes = Vec::new();
    let mut seq_arcs = Vec::new();
    for t in 1..=m + 1 {
        let out = model.decode_step(&tape, &mut st, inputs[t - 1], t <= m, false, &mut rng);
        seq_logits.push(out.word_logits.data());
        if t <= m {
            seq_nodes.push(out.node_dist.data());
            seq_arcs.push(out.arc_probs.clone().unwrap().data());
            let arcs: Vec<_> = ex.arcs_from(t).copied().collect();
            model.integrate_gold(&tape, &mut st, ex.gold_align.row(t - 1), &arcs);
            v_rows.push(st.prev_v.data());
            e_rows.push(st.prev_e.data());
        }
    }
    let v_all = Tensor::new(&[m + 1, model.cfg.d], v_rows.concat());
    let e_all = Tensor::new(&[m + 1, model.cfg.d_r + model.cfg.d], e_rows.concat());
    let par = model.forward_parallel(&tape, &ex, &h, Some((&v_all, &e_all)), false, &mut rng);
    let pl = par.word_logits.data();
    let v = model.cfg.word_vocab;
    for (t, row) in seq_logits.iter().enumerate() {
        for (c, x) in row.iter().enumerate() {
            let y = pl[t * v + c];
            assert!((x - y).abs() <= 1e-9, "step {} logit {c}: {x} vs {y}", t + 1);
        }
    }
    let pn = par.node_dists.data();
    let n1 = ex.n_nodes();
    for (t, row) in seq_nodes.iter().enumerate() {
        for (c, x) in row.iter().enumerate() {
            assert!((x - pn[t * n1 + c]).abs() <= 1e-9);
        }
    }
    for (t, row) in seq_arcs.iter().enumerate() {
        let pa = par.arc_probs[t].data();
        for (c, x) in row.iter().enumerate() {
            assert!((x - pa[c]).abs() <= 1e-9);
        }
    }
}

#[test]
fn causality_under_token_mutation() {
    let (model, ex) = fixture((true, true, true), 29);
    let tape = Tape::new();
    let mut rng = RngState::new(1);
    let h = model.encode(&tape, &ex.concept_ids, &ex.rel_ids, false, &mut rng);
    let base = model.forward_teacher(&tape, &ex, &h, false, &mut rng);
    let u = 3; // perturb y_3
    let mut mutated = ex.clone();
    mutated.tokens[u - 1] = (mutated.tokens[u - 1] + 1) % model.cfg.word_vocab;
    let out = model.forward_teacher(&tape, &mutated, &h, false, &mut rng);
    let v = model.cfg.word_vocab;
    let (bd, od) = (base.word_logits.data(), out.word_logits.data());
    for t in 0..u {
        for c in 0..v {
            assert_eq!(bd[t * v + c].to_bits(), od[t * v + c].to_bits(), "step {} changed", t + 1);
        }
    }
    // and something after u did change
    assert!(bd[u * v..].iter().zip(&od[u * v..]).any(|(a, b)| a != b));
}

#[test]
fn checkpoint_round_trip_preserves_forward_bits() {
    let (model, ex) = fixture((true, true, true), 31);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bpg");
    model.save(&path, 42).unwrap();
    let (loaded, seed) = Model::load(&path, model.cfg.clone()).unwrap();
    assert_eq!(seed, 42);
    let run = |m: &Model| -> Tensor {
        let tape = Tape::new();
        let mut rng = RngState::new(1);
        let h = m.encode(&tape, &ex.concept_ids, &ex.rel_ids, false, &mut rng);
        m.forward_teacher(&tape, &ex, &h, false, &mut rng).word_logits
    };
    assert_bits_equal(&run(&model), &run(&loaded), "forward after reload");
}

#[test]
fn integration_slots_zero_at_start_but_distinct_from_baseline() {
    // with zero slots at t=0 the first step still differs from the
    // baseline because the slots' zero vectors are attendable
    let (with, ex) = fixture((true, true, true), 37);
    let without = Model::new(
        ModelConfig {
            enable_node: false,
            enable_edge: false,
            enable_integration: false,
            ..with.cfg.clone()
        },
        37,
    )
    .unwrap();
    let tape = Tape::new();
    let mut rng = RngState::new(1);
    let h = with.encode(&tape, &ex.concept_ids, &ex.rel_ids, false, &mut rng);
    let mut st_a = DecoderState::new(&with, h.clone());
    let mut st_b = DecoderState::new(&without, h.clone());
    let a = with.decode_step(&tape, &mut st_a, crate::data::WORD_BOS, false, false, &mut rng);
    let b = without.decode_step(&tape, &mut st_b, crate::data::WORD_BOS, false, false, &mut rng);
    assert!(max_abs_diff(&a.word_logits, &b.word_logits) > 0.0);
}

fn tiny_fixture(flags: (bool, bool, bool)) -> (Model, ProcessedExample) {
    let g = parse_penman("(a / alpha :R1 (b / beta) :R2 (c / gamma))").unwrap();
    let raw = RawExample {
        graph: RawGraph::from_amr(&g),
        tokens: ["x", "y", "z", "w"].iter().map(|s| s.to_string()).collect(),
        align: vec![(1, 0), (2, 1), (4, 2)],
    };
    let (p, processed) = Pipeline::build(&[raw], 4, 100, true).unwrap();
    let cfg = ModelConfig {
        layers: 1,
        d: 8,
        heads: 2,
        d_r: 4,
        d_biaff: 6,
        ffn: 10,
        word_vocab: p.words.len(),
        concept_vocab: p.concepts.len(),
        relation_vocab: p.relations.len(),
        label_rel_ids: p.labels.rel_ids().to_vec(),
        node_loss: NodeLossKind::Ce,
        enable_node: flags.0,
        enable_edge: flags.1,
        enable_integration: flags.2,
        share_relation_embeddings: true,
        attention_dropout: 0.0,
        residual_dropout: 0.0,
        ln_eps: 1e-5,
    };
    (Model::new(cfg, 51).unwrap(), processed.into_iter().next().unwrap())
}

#[test]
fn gradcheck_encoder() {
    let (model, ex) = tiny_fixture((false, false, false));
    let params = [
        model.p("concept_emb").clone(),
        model.p("rel_emb").clone(),
        model.p("enc.0.wr").clone(),
        model.p("enc.0.wq").clone(),
        model.p("enc.0.ln1_g").clone(),
    ];
    let err = grad_check(
        |tape| {
            let mut rng = RngState::new(0);
            let h = model.encode(tape, &ex.concept_ids, &ex.rel_ids, false, &mut rng);
            // non-uniform weighting so gradients do not cancel
            let w: Vec<f64> = (0..h.len()).map(|i| ((i % 7) as f64 - 3.0) / 3.0).collect();
            tape.sum(&tape.mul(&h, &Tensor::new(&h.shape(), w)))
        },
        &params,
        1e-5,
    );
    assert!(err <= 1e-3, "encoder gradcheck error {err}");
}

#[test]
fn gradcheck_decoder_with_integration() {
    let (model, ex) = tiny_fixture((true, true, true));
    let params = [
        model.p("word_emb").clone(),
        model.p("dec.0.self.wq").clone(),
        model.p("dec.0.cross.wv").clone(),
        model.p("biaff.u_label").clone(),
        model.p("biaff.w_arc").clone(),
        model.p("intg.e_proj").clone(),
    ];
    let err = grad_check(
        |tape| {
            let mut rng = RngState::new(0);
            let h = model.encode(tape, &ex.concept_ids, &ex.rel_ids, false, &mut rng);
            let out = model.forward_teacher(tape, &ex, &h, false, &mut rng);
            let wl = &out.word_logits;
            let w: Vec<f64> = (0..wl.len()).map(|i| ((i % 5) as f64 - 2.0) / 2.0).collect();
            let mut total = tape.sum(&tape.mul(wl, &Tensor::new(&wl.shape(), w)));
            total = tape.add(&total, &tape.sum(&tape.log(&out.node_dists)));
            for (a, lp) in out.arc_probs.iter().zip(&out.label_probs) {
                total = tape.add(&total, &tape.sum(&tape.log(a)));
                total = tape.add(&total, &tape.sum(&tape.log(lp)));
            }
            total
        },
        &params,
        1e-5,
    );
    assert!(err <= 1e-3, "decoder gradcheck error {err}");
}
