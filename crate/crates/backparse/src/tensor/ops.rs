//! Differentiable operations. Every op validates shapes, computes the
//! forward values, asserts finiteness, and records a backward closure.

use super::{assert_finite, row_major_strides, RngState, Tape, Tensor};

/// Shape after numpy-style broadcasting, or a panic naming the op.
fn broadcast_shape(op: &str, a: &[usize], b: &[usize]) -> Vec<usize> {
    let nd = a.len().max(b.len());
    let mut out = vec![0usize; nd];
    for i in 0..nd {
        let da = if i < nd - a.len() { 1 } else { a[i - (nd - a.len())] };
        let db = if i < nd - b.len() { 1 } else { b[i - (nd - b.len())] };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            panic!("{op}: shapes {a:?} and {b:?} are not broadcastable");
        };
    }
    out
}

/// For each flat index of `out_shape`, the flat index into `in_shape`
/// it reads from (broadcast semantics).
fn broadcast_map(out_shape: &[usize], in_shape: &[usize]) -> Vec<usize> {
    let numel: usize = out_shape.iter().product();
    let nd = out_shape.len();
    let offset = nd - in_shape.len();
    let in_strides = row_major_strides(in_shape);
    let mut map = vec![0usize; numel];
    let mut idx = vec![0usize; nd];
    for (flat, slot) in map.iter_mut().enumerate().take(numel) {
        let mut pos = 0usize;
        for d in 0..nd {
            if d >= offset {
                let sd = in_shape[d - offset];
                if sd != 1 {
                    pos += idx[d] * in_strides[d - offset];
                }
            }
        }
        *slot = pos;
        let _ = flat;
        // increment multi-index
        for d in (0..nd).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    map
}

/// c += op(a, b) matmul kernel; `ta`/`tb` transpose the operand reads.
fn mm_kernel(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize, ta: bool, tb: bool) {
    match (ta, tb) {
        (false, false) => {
            for i in 0..m {
                for p in 0..k {
                    let av = a[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &b[p * n..(p + 1) * n];
                    let crow = &mut c[i * n..(i + 1) * n];
                    for j in 0..n {
                        crow[j] += av * brow[j];
                    }
                }
            }
        }
        (false, true) => {
            // b is (n, k)
            for i in 0..m {
                let arow = &a[i * k..(i + 1) * k];
                for j in 0..n {
                    let brow = &b[j * k..(j + 1) * k];
                    let mut acc = 0.0;
                    for p in 0..k {
                        acc += arow[p] * brow[p];
                    }
                    c[i * n + j] += acc;
                }
            }
        }
        (true, false) => {
            // a is (k, m)
            for p in 0..k {
                let arow = &a[p * m..(p + 1) * m];
                let brow = &b[p * n..(p + 1) * n];
                for i in 0..m {
                    let av = arow[i];
                    if av == 0.0 {
                        continue;
                    }
                    let crow = &mut c[i * n..(i + 1) * n];
                    for j in 0..n {
                        crow[j] += av * brow[j];
                    }
                }
            }
        }
        (true, true) => {
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for p in 0..k {
                        acc += a[p * m + i] * b[j * k + p];
                    }
                    c[i * n + j] += acc;
                }
            }
        }
    }
}

impl Tape {
    fn binary_elementwise(
        &self,
        op: &'static str,
        a: &Tensor,
        b: &Tensor,
        f: impl Fn(f64, f64) -> f64,
        df: impl Fn(f64, f64, f64) -> (f64, f64) + 'static,
    ) -> Tensor {
        let (sa, sb) = (a.shape(), b.shape());
        let out_shape = broadcast_shape(op, &sa, &sb);
        let map_a = broadcast_map(&out_shape, &sa);
        let map_b = broadcast_map(&out_shape, &sb);
        let numel: usize = out_shape.iter().product();
        let mut data = vec![0.0; numel];
        a.with_data(|ad| {
            b.with_data(|bd| {
                for i in 0..numel {
                    data[i] = f(ad[map_a[i]], bd[map_b[i]]);
                }
            })
        });
        assert_finite(op, &data);
        let out = Tensor::new(&out_shape, data);
        let (ac, bc, oc) = (a.clone(), b.clone(), out.clone());
        self.record(
            &[a, b],
            &out,
            Box::new(move || {
                let dy = oc.adj_clone();
                let ad = ac.data();
                let bd = bc.data();
                ac.with_adj_mut(|adj| {
                    for i in 0..numel {
                        let (da, _) = df(ad[map_a[i]], bd[map_b[i]], dy[i]);
                        adj[map_a[i]] += da;
                    }
                });
                bc.with_adj_mut(|adj| {
                    for i in 0..numel {
                        let (_, db) = df(ad[map_a[i]], bd[map_b[i]], dy[i]);
                        adj[map_b[i]] += db;
                    }
                });
            }),
        );
        out
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Tensor {
        self.binary_elementwise("add", a, b, |x, y| x + y, |_, _, dy| (dy, dy))
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Tensor {
        self.binary_elementwise("sub", a, b, |x, y| x - y, |_, _, dy| (dy, -dy))
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Tensor {
        self.binary_elementwise("mul", a, b, |x, y| x * y, |x, y, dy| (y * dy, x * dy))
    }

    pub fn scale(&self, a: &Tensor, c: f64) -> Tensor {
        let data: Vec<f64> = a.with_data(|d| d.iter().map(|v| v * c).collect());
        assert_finite("scale", &data);
        let out = Tensor::new(&a.shape(), data);
        let (ac, oc) = (a.clone(), out.clone());
        self.record(
            &[a],
            &out,
            Box::new(move || {
                let dy = oc.adj_clone();
                ac.with_adj_mut(|adj| {
                    for (g, d) in adj.iter_mut().zip(dy.iter()) {
                        *g += c * d;
                    }
                });
            }),
        );
        out
    }

    pub fn neg(&self, a: &Tensor) -> Tensor {
        self.scale(a, -1.0)
    }

    pub fn relu(&self, a: &Tensor) -> Tensor {
        let data: Vec<f64> = a.with_data(|d| d.iter().map(|v| v.max(0.0)).collect());
        let out = Tensor::new(&a.shape(), data);
        let (ac, oc) = (a.clone(), out.clone());
        self.record(
            &[a],
            &out,
            Box::new(move || {
                let dy = oc.adj_clone();
                let ad = ac.data();
                ac.with_adj_mut(|adj| {
                    for i in 0..adj.len() {
                        if ad[i] > 0.0 {
                            adj[i] += dy[i];
                        }
                    }
                });
            }),
        );
        out
    }

    pub fn log(&self, a: &Tensor) -> Tensor {
        let data: Vec<f64> = a.with_data(|d| d.iter().map(|v| v.ln()).collect());
        assert_finite("log", &data);
        let out = Tensor::new(&a.shape(), data);
        let (ac, oc) = (a.clone(), out.clone());
        self.record(
            &[a],
            &out,
            Box::new(move || {
                let dy = oc.adj_clone();
                let ad = ac.data();
                ac.with_adj_mut(|adj| {
                    for i in 0..adj.len() {
                        adj[i] += dy[i] / ad[i];
                    }
                });
            }),
        );
        out
    }

    /// Batched matrix product. Operands must be 2-d, or 3-d with equal
    /// batch sizes; a 2-d operand broadcasts over the other's batch.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Tensor {
        let sa = a.shape();
        let sb = b.shape();
        assert!(
            (2..=3).contains(&sa.len()) && (2..=3).contains(&sb.len()),
            "matmul: operands must be 2-d or 3-d, got {sa:?} x {sb:?}"
        );
        let (ba, m, ka) = if sa.len() == 3 { (sa[0], sa[1], sa[2]) } else { (1, sa[0], sa[1]) };
        let (bb, kb, n) = if sb.len() == 3 { (sb[0], sb[1], sb[2]) } else { (1, sb[0], sb[1]) };
        assert_eq!(ka, kb, "matmul: inner dimensions disagree: {sa:?} x {sb:?}");
        let k = ka;
        let batch = if sa.len() == 3 && sb.len() == 3 {
            assert_eq!(ba, bb, "matmul: batch dimensions disagree: {sa:?} x {sb:?}");
            ba
        } else {
            ba.max(bb)
        };
        let a3 = sa.len() == 3;
        let b3 = sb.len() == 3;
        let out_shape: Vec<usize> = if a3 || b3 { vec![batch, m, n] } else { vec![m, n] };
        let mut data = vec![0.0; batch * m * n];
        a.with_data(|ad| {
            b.with_data(|bd| {
                for bi in 0..batch {
                    let asl = if a3 { &ad[bi * m * k..(bi + 1) * m * k] } else { ad };
                    let bsl = if b3 { &bd[bi * k * n..(bi + 1) * k * n] } else { bd };
                    mm_kernel(asl, bsl, &mut data[bi * m * n..(bi + 1) * m * n], m, k, n, false, false);
                }
            })
        });
        assert_finite("matmul", &data);
        let out = Tensor::new(&out_shape, data);
        let (ac, bc, oc) = (a.clone(), b.clone(), out.clone());
        self.record(
            &[a, b],
            &out,
            Box::new(move || {
                let dy = oc.adj_clone();
                let ad = ac.data();
                let bd = bc.data();
                // dA = dC * B^T
                ac.with_adj_mut(|adj| {
                    for bi in 0..batch {
                        let dsl = &dy[bi * m * n..(bi + 1) * m * n];
                        let bsl = if b3 { &bd[bi * k * n..(bi + 1) * k * n] } else { &bd[..] };
                        let asl = if a3 { &mut adj[bi * m * k..(bi + 1) * m * k] } else { &mut adj[..] };
                        mm_kernel(dsl, bsl, asl, m, n, k, false, true);
                    }
                });
                // dB = A^T * dC
                bc.with_adj_mut(|adj| {
                    for bi in 0..batch {
                        let dsl = &dy[bi * m * n..(bi + 1) * m * n];
                        let asl = if a3 { &ad[bi * m * k..(bi + 1) * m * k] } else { &ad[..] };
                        let bsl = if b3 { &mut adj[bi * k * n..(bi + 1) * k * n] } else { &mut adj[..] };
                        mm_kernel(asl, dsl, bsl, k, m, n, true, false);
                    }
                });
            }),
        );
        out
    }

    /// Swap the last two axes.
    pub fn transpose2(&self, a: &Tensor) -> Tensor {
        let s = a.shape();
        assert!(s.len() >= 2, "transpose2 requires ndim >= 2");
        let mut perm: Vec<usize> = (0..s.len()).collect();
        perm.swap(s.len() - 2, s.len() - 1);
        self.permute(a, &perm)
    }

    pub fn permute(&self, a: &Tensor, perm: &[usize]) -> Tensor {
        let s = a.shape();
        assert_eq!(perm.len(), s.len(), "permute: rank mismatch");
        let out_shape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
        let in_strides = row_major_strides(&s);
        let numel: usize = s.iter().product();
        // map[i] = flat input index feeding flat output index i
        let mut map = vec![0usize; numel];
        let mut idx = vec![0usize; out_shape.len()];
        for slot in map.iter_mut() {
            let mut pos = 0;
            for (d, &i) in idx.iter().enumerate() {
                pos += i * in_strides[perm[d]];
            }
            *slot = pos;
            for d in (0..idx.len()).rev() {
                idx[d] += 1;
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        let data: Vec<f64> = a.with_data(|d| map.iter().map(|&p| d[p]).collect());
        let out = Tensor::new(&out_shape, data);
        let (ac, oc) = (a.clone(), out.clone());
        self.record(
            &[a],
            &out,
            Box::new(move || {
                let dy = oc.adj_clone();
                ac.with_adj_mut(|adj| {
                    for (i, &p) in map.iter().enumerate() {
                        adj[p] += dy[i];
                    }
                });
            }),
        );
        out
    }

    pub fn reshape(&self, a: &Tensor, shape: &[usize]) -> Tensor {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, a.len(), "reshape: {:?} -> {:?} changes element count", a.shape(), shape);
        let out = Tensor::new(shape, a.data());
        let (ac, oc) = (a.clone(), out.clone());
        self.record(
            &[a],
            &out,
            Box::new(move || {
                let dy = oc.adj_clone();
                ac.with_adj_mut(|adj| {
                    for (g, d) in adj.iter_mut().zip(dy.iter()) {
                        *g += *d;
                    }
                });
            }),
        );
        out
    }

    pub fn concat(&self, parts: &[&Tensor], axis: usize) -> Tensor {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let s0 = parts[0].shape();
        assert!(axis < s0.len(), "concat: axis out of range");
        let mut axis_total = 0usize;
        for p in parts {
            let sp = p.shape();
            assert_eq!(sp.len(), s0.len(), "concat: rank mismatch");
            for d in 0..s0.len() {
                if d != axis {
                    assert_eq!(sp[d], s0[d], "concat: shape mismatch off the concat axis");
                }
            }
            axis_total += sp[axis];
        }
        let mut out_shape = s0.clone();
        out_shape[axis] = axis_total;
        let outer: usize = s0[..axis].iter().product();
        let inner: usize = s0[axis + 1..].iter().product();
        let mut data = vec![0.0; outer * axis_total * inner];
        let mut offsets = Vec::with_capacity(parts.len());
        let mut off = 0usize;
        for p in parts {
            let la = p.shape()[axis];
            offsets.push((off, la));
            p.with_data(|pd| {
                for o in 0..outer {
                    let src = &pd[o * la * inner..(o + 1) * la * inner];
                    let dst = &mut data[(o * axis_total + off) * inner..(o * axis_total + off + la) * inner];
                    dst.copy_from_slice(src);
                }
            });
            off += la;
        }
        let out = Tensor::new(&out_shape, data);
        let clones: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
        let oc = out.clone();
        self.record(
            parts,
            &out,
            Box::new(move || {
                let dy = oc.adj_clone();
                for (p, &(off, la)) in clones.iter().zip(offsets.iter()) {
                    p.with_adj_mut(|adj| {
                        for o in 0..outer {
                            let src = &dy[(o * axis_total + off) * inner..(o * axis_total + off + la) * inner];
                            let dst = &mut adj[o * la * inner..(o + 1) * la * inner];
                            for (g, d) in dst.iter_mut().zip(src.iter()) {
                                *g += *d;
                            }
                        }
                    });
                }
            }),
        );
        out
    }

    pub fn slice(&self, a: &Tensor, axis: usize, start: usize, len: usize) -> Tensor {
        let s = a.shape();
        assert!(axis < s.len(), "slice: axis out of range");
        assert!(start + len <= s[axis], "slice: range {start}..{} exceeds axis size {}", start + len, s[axis]);
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let la = s[axis];
        let mut out_shape = s.clone();
        out_shape[axis] = len;
        let mut data = vec![0.0; outer * len * inner];
        a.with_data(|ad| {
            for o in 0..outer {
                let src = &ad[(o * la + start) * inner..(o * la + start + len) * inner];
                data[o * len * inner..(o + 1) * len * inner].copy_from_slice(src);
            }
        });
        let out = Tensor::new(&out_shape, data);
        let (ac, oc) = (a.clone(), out.clone());
        self.record(
            &[a],
            &out,
            Box::new(move || {
                let dy = oc.adj_clone();
                ac.with_adj_mut(|adj| {
                    for o in 0..outer {
                        let dst = &mut adj[(o * la + start) * inner..(o * la + start + len) * inner];
                        let src = &dy[o * len * inner..(o + 1) * len * inner];
                        for (g, d) in dst.iter_mut().zip(src.iter()) {
                            *g += *d;
                        }
                    }
                });
            }),
        );
        out
    }

    /// Row lookup into an embedding table; backward scatters.
    pub fn gather_rows(&self, table: &Tensor, ids: &[usize]) -> Tensor {
        let s = table.shape();
        assert_eq!(s.len(), 2, "gather_rows: table must be 2-d");
        let (v, d) = (s[0], s[1]);
        for &i in ids {
            assert!(i < v, "gather_rows: id {i} out of range {v}");
        }
        let mut data = vec![0.0; ids.len() * d];
        table.with_data(|td| {
            for (r, &i) in ids.iter().enumerate() {
                data[r * d..(r + 1) * d].copy_from_slice(&td[i * d..(i + 1) * d]);
            }
        });
        let out = Tensor::new(&[ids.len(), d], data);
        let (tc, oc) = (table.clone(), out.clone());
        let ids = ids.to_vec();
        self.record(
            &[table],
            &out,
            Box::new(move || {
                let dy = oc.adj_clone();
                tc.with_adj_mut(|adj| {
                    for (r, &i) in ids.iter().enumerate() {
                        for c in 0..d {
                            adj[i * d + c] += dy[r * d + c];
                        }
                    }
                });
            }),
        );
        out
    }

    /// Select elements by flat index.
    pub fn gather(&self, a: &Tensor, idx: &[usize]) -> Tensor {
        let n = a.len();
        for &i in idx {
            assert!(i < n, "gather: flat index {i} out of range {n}");
        }
        let data: Vec<f64> = a.with_data(|ad| idx.iter().map(|&i| ad[i]).collect());
        let out = Tensor::new(&[idx.len()], data);
        let (ac, oc) = (a.clone(), out.clone());
        let idx = idx.to_vec();
        self.record(
            &[a],
            &out,
            Box::new(move || {
                let dy = oc.adj_clone();
                ac.with_adj_mut(|adj| {
                    for (r, &i) in idx.iter().enumerate() {
                        adj[i] += dy[r];
                    }
                });
            }),
        );
        out
    }

    pub fn sum(&self, a: &Tensor) -> Tensor {
        let total: f64 = a.with_data(|d| d.iter().sum());
        assert_finite("sum", &[total]);
        let out = Tensor::scalar(total);
        let (ac, oc) = (a.clone(), out.clone());
        self.record(
            &[a],
            &out,
            Box::new(move || {
                let dy = oc.adj_clone()[0];
                ac.with_adj_mut(|adj| adj.iter_mut().for_each(|g| *g += dy));
            }),
        );
        out
    }

    pub fn sum_axis(&self, a: &Tensor, axis: usize, keepdim: bool) -> Tensor {
        let s = a.shape();
        assert!(axis < s.len(), "sum_axis: axis out of range");
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let la = s[axis];
        let mut out_shape: Vec<usize> = s.clone();
        if keepdim {
            out_shape[axis] = 1;
        } else {
            out_shape.remove(axis);
        }
        let mut data = vec![0.0; outer * inner];
        a.with_data(|ad| {
            for o in 0..outer {
                for l in 0..la {
                    for i in 0..inner {
                        data[o * inner + i] += ad[(o * la + l) * inner + i];
                    }
                }
            }
        });
        assert_finite("sum_axis", &data);
        let out = Tensor::new(&out_shape, data);
        let (ac, oc) = (a.clone(), out.clone());
        self.record(
            &[a],
            &out,
            Box::new(move || {
                let dy = oc.adj_clone();
                ac.with_adj_mut(|adj| {
                    for o in 0..outer {
                        for l in 0..la {
                            for i in 0..inner {
                                adj[(o * la + l) * inner + i] += dy[o * inner + i];
                            }
                        }
                    }
                });
            }),
        );
        out
    }

    /// Softmax along `axis` with optional mask (nonzero = keep). Masked
    /// positions get probability 0; panics on a fully-masked slice.
    pub fn masked_softmax(&self, x: &Tensor, mask: Option<&Tensor>, axis: usize) -> Tensor {
        let s = x.shape();
        assert!(axis < s.len(), "masked_softmax: axis out of range");
        let keep: Option<Vec<bool>> = mask.map(|m| {
            let map = broadcast_map(&s, &m.shape());
            m.with_data(|md| map.iter().map(|&p| md[p] != 0.0).collect())
        });
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let la = s[axis];
        let numel: usize = s.iter().product();
        let mut data = vec![0.0; numel];
        x.with_data(|xd| {
            for o in 0..outer {
                for i in 0..inner {
                    let at = |l: usize| (o * la + l) * inner + i;
                    let mut mx = f64::NEG_INFINITY;
                    for l in 0..la {
                        let k = keep.as_ref().map_or(true, |kk| kk[at(l)]);
                        if k && xd[at(l)] > mx {
                            mx = xd[at(l)];
                        }
                    }
                    if mx == f64::NEG_INFINITY {
                        panic!("masked_softmax: fully-masked slice");
                    }
                    let mut z = 0.0;
                    for l in 0..la {
                        let k = keep.as_ref().map_or(true, |kk| kk[at(l)]);
                        let e = if k { (xd[at(l)] - mx).exp() } else { 0.0 };
                        data[at(l)] = e;
                        z += e;
                    }
                    for l in 0..la {
                        data[at(l)] /= z;
                    }
                }
            }
        });
        assert_finite("masked_softmax", &data);
        let out = Tensor::new(&s, data);
        let (xc, oc) = (x.clone(), out.clone());
        self.record(
            &[x],
            &out,
            Box::new(move || {
                let dy = oc.adj_clone();
                let y = oc.data();
                xc.with_adj_mut(|adj| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |l: usize| (o * la + l) * inner + i;
                            let mut dot = 0.0;
                            for l in 0..la {
                                dot += y[at(l)] * dy[at(l)];
                            }
                            for l in 0..la {
                                adj[at(l)] += y[at(l)] * (dy[at(l)] - dot);
                            }
                        }
                    }
                });
            }),
        );
        out
    }

    /// Replace positions where `mask` is nonzero with `value`.
    pub fn masked_fill(&self, x: &Tensor, mask: &Tensor, value: f64) -> Tensor {
        let s = x.shape();
        let map = broadcast_map(&s, &mask.shape());
        let filled: Vec<bool> = mask.with_data(|md| map.iter().map(|&p| md[p] != 0.0).collect());
        let data: Vec<f64> = x.with_data(|xd| {
            xd.iter()
                .zip(filled.iter())
                .map(|(&v, &f)| if f { value } else { v })
                .collect()
        });
        assert_finite("masked_fill", &data);
        let out = Tensor::new(&s, data);
        let (xc, oc) = (x.clone(), out.clone());
        self.record(
            &[x],
            &out,
            Box::new(move || {
                let dy = oc.adj_clone();
                xc.with_adj_mut(|adj| {
                    for i in 0..adj.len() {
                        if !filled[i] {
                            adj[i] += dy[i];
                        }
                    }
                });
            }),
        );
        out
    }

    /// Per-last-dimension standardization followed by an affine map.
    pub fn layer_norm(&self, x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Tensor {
        let s = x.shape();
        let d = *s.last().expect("layer_norm on 0-d tensor");
        assert_eq!(gain.shape(), vec![d], "layer_norm: gain shape mismatch");
        assert_eq!(bias.shape(), vec![d], "layer_norm: bias shape mismatch");
        let rows = x.len() / d;
        let mut data = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        x.with_data(|xd| {
            gain.with_data(|gd| {
                bias.with_data(|bd| {
                    for r in 0..rows {
                        let row = &xd[r * d..(r + 1) * d];
                        let mean = row.iter().sum::<f64>() / d as f64;
                        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                        let istd = 1.0 / (var + eps).sqrt();
                        inv_std[r] = istd;
                        for c in 0..d {
                            let xh = (row[c] - mean) * istd;
                            xhat[r * d + c] = xh;
                            data[r * d + c] = gd[c] * xh + bd[c];
                        }
                    }
                })
            })
        });
        assert_finite("layer_norm", &data);
        let out = Tensor::new(&s, data);
        let (xc, gc, bc, oc) = (x.clone(), gain.clone(), bias.clone(), out.clone());
        self.record(
            &[x, gain, bias],
            &out,
            Box::new(move || {
                let dy = oc.adj_clone();
                let gd = gc.data();
                gc.with_adj_mut(|adj| {
                    for r in 0..rows {
                        for c in 0..d {
                            adj[c] += dy[r * d + c] * xhat[r * d + c];
                        }
                    }
                });
                bc.with_adj_mut(|adj| {
                    for r in 0..rows {
                        for c in 0..d {
                            adj[c] += dy[r * d + c];
                        }
                    }
                });
                xc.with_adj_mut(|adj| {
                    for r in 0..rows {
                        let istd = inv_std[r];
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        for c in 0..d {
                            let dxh = dy[r * d + c] * gd[c];
                            sum_dxhat += dxh;
                            sum_dxhat_xhat += dxh * xhat[r * d + c];
                        }
                        for c in 0..d {
                            let dxh = dy[r * d + c] * gd[c];
                            adj[r * d + c] += istd
                                * (dxh - sum_dxhat / d as f64 - xhat[r * d + c] * sum_dxhat_xhat / d as f64);
                        }
                    }
                });
            }),
        );
        out
    }

    /// -sum(target * log softmax(logits)), summed over rows.
    pub fn cross_entropy(&self, target: &Tensor, logits: &Tensor) -> Tensor {
        let s = logits.shape();
        assert_eq!(target.shape(), s, "cross_entropy: shape mismatch");
        let d = *s.last().expect("cross_entropy on 0-d tensor");
        let rows = logits.len() / d;
        let mut logsm = vec![0.0; logits.len()];
        logits.with_data(|ld| {
            for r in 0..rows {
                let row = &ld[r * d..(r + 1) * d];
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
                let lz = z.ln() + mx;
                for c in 0..d {
                    logsm[r * d + c] = row[c] - lz;
                }
            }
        });
        let total: f64 = target.with_data(|td| {
            td.iter().zip(logsm.iter()).map(|(&t, &l)| -t * l).sum()
        });
        assert_finite("cross_entropy", &[total]);
        let out = Tensor::scalar(total);
        let (tc, lc, oc) = (target.clone(), logits.clone(), out.clone());
        self.record(
            &[target, logits],
            &out,
            Box::new(move || {
                let dy = oc.adj_clone()[0];
                let td = tc.data();
                lc.with_adj_mut(|adj| {
                    for r in 0..rows {
                        let tsum: f64 = td[r * d..(r + 1) * d].iter().sum();
                        for c in 0..d {
                            let p = logsm[r * d + c].exp();
                            adj[r * d + c] += dy * (p * tsum - td[r * d + c]);
                        }
                    }
                });
                tc.with_adj_mut(|adj| {
                    for i in 0..adj.len() {
                        adj[i] += dy * (-logsm[i]);
                    }
                });
            }),
        );
        out
    }

    /// Sum of squared differences.
    pub fn mse(&self, a: &Tensor, b: &Tensor) -> Tensor {
        assert_eq!(a.shape(), b.shape(), "mse: shape mismatch");
        let total: f64 = a.with_data(|ad| {
            b.with_data(|bd| ad.iter().zip(bd.iter()).map(|(&x, &y)| (x - y) * (x - y)).sum())
        });
        assert_finite("mse", &[total]);
        let out = Tensor::scalar(total);
        let (ac, bc, oc) = (a.clone(), b.clone(), out.clone());
        self.record(
            &[a, b],
            &out,
            Box::new(move || {
                let dy = oc.adj_clone()[0];
                let ad = ac.data();
                let bd = bc.data();
                ac.with_adj_mut(|adj| {
                    for i in 0..adj.len() {
                        adj[i] += dy * 2.0 * (ad[i] - bd[i]);
                    }
                });
                bc.with_adj_mut(|adj| {
                    for i in 0..adj.len() {
                        adj[i] += dy * 2.0 * (bd[i] - ad[i]);
                    }
                });
            }),
        );
        out
    }

    /// Inverted dropout: kept positions scale by 1/(1-rate).
    pub fn dropout(&self, x: &Tensor, rate: f64, rng: &mut RngState, train: bool) -> Tensor {
        assert!((0.0..1.0).contains(&rate), "dropout: rate must be in [0,1)");
        if !train || rate == 0.0 {
            return x.clone();
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.uniform(0.0, 1.0) < rate { 0.0 } else { keep_scale })
            .collect();
        let data: Vec<f64> = x.with_data(|xd| xd.iter().zip(mask.iter()).map(|(&v, &m)| v * m).collect());
        let out = Tensor::new(&x.shape(), data);
        let (xc, oc) = (x.clone(), out.clone());
        self.record(
            &[x],
            &out,
            Box::new(move || {
                let dy = oc.adj_clone();
                xc.with_adj_mut(|adj| {
                    for i in 0..adj.len() {
                        adj[i] += dy[i] * mask[i];
                    }
                });
            }),
        );
        out
    }

    /// Biaffine bilinear form: rows of `x` against `y` through the 3-d
    /// tensor `u` of shape (d1, r, d2). Returns (J, r) with
    /// out[j, k] = x[j]^T U[:, k, :] y.
    pub fn bilinear(&self, x: &Tensor, u: &Tensor, y: &Tensor) -> Tensor {
        let su = u.shape();
        assert_eq!(su.len(), 3, "bilinear: U must be 3-d");
        let (d1, r, d2) = (su[0], su[1], su[2]);
        let sx = x.shape();
        assert_eq!(sx.len(), 2, "bilinear: x must be 2-d");
        assert_eq!(sx[1], d1, "bilinear: x/U shape mismatch");
        assert_eq!(y.shape(), vec![d2], "bilinear: y/U shape mismatch");
        // tmp[a, k] = sum_b U[a, k, b] * y[b]
        let u2 = self.reshape(u, &[d1 * r, d2]);
        let ycol = self.reshape(y, &[d2, 1]);
        let tmp = self.matmul(&u2, &ycol); // (d1*r, 1)
        let tmp = self.reshape(&tmp, &[d1, r]);
        self.matmul(x, &tmp) // (J, r)
    }
}
