//! Define-by-run reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and the data its
//! backward rule needs. Nodes only reference earlier nodes, so the node list
//! is a topological order and `backward` is a single reverse sweep.

use std::sync::atomic::{AtomicU64, Ordering};

use super::{dot, gemm_nn, gemm_nt, gemm_tn, sigmoid, Result, Tensor, TensorError};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on one specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
    },
    MatMulNT {
        a: usize,
        b: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Sub {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    AddRow {
        a: usize,
        row: usize,
    },
    Scale {
        a: usize,
        k: f64,
    },
    Sigmoid {
        a: usize,
    },
    Relu {
        a: usize,
    },
    MaskedSoftmax {
        a: usize,
    },
    SegmentSoftmax {
        a: usize,
        seg: Vec<usize>,
    },
    Concat {
        parts: Vec<usize>,
        axis: usize,
    },
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum {
        a: usize,
    },
    Gather {
        a: usize,
        idx: Vec<usize>,
    },
    GatherRows {
        a: usize,
        idx: Vec<usize>,
    },
    ScatterAdd {
        a: usize,
        idx: Vec<usize>,
    },
    ScaleRows {
        a: usize,
        s: usize,
    },
    RowDot {
        a: usize,
        b: usize,
    },
    SliceCols {
        a: usize,
        start: usize,
    },
    Reshape {
        a: usize,
    },
    PairwiseL1 {
        a: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// A recording of one forward computation.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable leaf. Gradients accumulate into it on `backward`.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[self.idx(v).expect("foreign var")].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Accumulated gradient of a trainable leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[self.idx(v).ok()?].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id {
            return Err(TensorError::ForeignVar {
                expected: self.id,
                found: v.tape,
            });
        }
        Ok(v.idx)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let idx = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var { tape: self.id, idx }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let rg = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.push_raw(value, op, rg)
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    fn rank2(&self, i: usize, op: &'static str) -> Result<(usize, usize)> {
        match self.val(i).shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(TensorError::invalid(op, format!("expected a matrix, got shape {s:?}"))),
        }
    }

    fn same_shape(&self, a: usize, b: usize, op: &'static str) -> Result<()> {
        if self.val(a).shape() != self.val(b).shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.val(a).shape().to_vec(),
                right: self.val(b).shape().to_vec(),
            });
        }
        Ok(())
    }

    // ---- operations -------------------------------------------------------

    /// `a[m×k] · b[k×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (m, k) = self.rank2(ia, "matmul")?;
        let (k2, n) = self.rank2(ib, "matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: vec![m, k],
                right: vec![k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(self.val(ia).data(), self.val(ib).data(), &mut out, m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::MatMul { a: ia, b: ib }, &[ia, ib]))
    }

    /// `a[m×k] · b[n×k]ᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (m, k) = self.rank2(ia, "matmul_nt")?;
        let (n, k2) = self.rank2(ib, "matmul_nt")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_nt",
                left: vec![m, k],
                right: vec![n, k2],
            });
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(self.val(ia).data(), self.val(ib).data(), &mut out, m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::MatMulNT { a: ia, b: ib }, &[ia, ib]))
    }

    fn zip_with(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: impl FnOnce(usize, usize) -> Op,
    ) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        self.same_shape(ia, ib, name)?;
        let data = self
            .val(ia)
            .data()
            .iter()
            .zip(self.val(ib).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(self.val(ia).shape().to_vec(), data)?;
        Ok(self.push(t, op(ia, ib), &[ia, ib]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, |a, b| Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    /// Broadcast a length-`d` row over every row of `a[n×d]`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ia, ir) = (self.idx(a)?, self.idx(row)?);
        let (n, d) = self.rank2(ia, "add_row")?;
        if self.val(ir).len() != d {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                left: vec![n, d],
                right: self.val(ir).shape().to_vec(),
            });
        }
        let r = self.val(ir).data();
        let data = self
            .val(ia)
            .data()
            .chunks(d.max(1))
            .flat_map(|chunk| chunk.iter().zip(r).map(|(x, y)| x + y))
            .collect();
        let t = Tensor::new(vec![n, d], data)?;
        Ok(self.push(t, Op::AddRow { a: ia, row: ir }, &[ia, ir]))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = self.val(ia);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|x| x * k).collect())?;
        Ok(self.push(t, Op::Scale { a: ia, k }, &[ia]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = self.val(ia);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&x| sigmoid(x)).collect())?;
        Ok(self.push(t, Op::Sigmoid { a: ia }, &[ia]))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = self.val(ia);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&x| x.max(0.0)).collect())?;
        Ok(self.push(t, Op::Relu { a: ia }, &[ia]))
    }

    /// Softmax over the positions where `valid` is true; other positions are exactly 0.
    pub fn masked_softmax(&mut self, a: Var, valid: &[bool]) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = self.val(ia).data();
        if valid.len() != x.len() {
            return Err(TensorError::ShapeMismatch {
                op: "masked_softmax",
                left: self.val(ia).shape().to_vec(),
                right: vec![valid.len()],
            });
        }
        let m = x
            .iter()
            .zip(valid)
            .filter(|(_, &ok)| ok)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return Err(TensorError::invalid(
                "masked_softmax",
                "empty support: every position is masked",
            ));
        }
        let mut y: Vec<f64> = x
            .iter()
            .zip(valid)
            .map(|(&v, &ok)| if ok { (v - m).exp() } else { 0.0 })
            .collect();
        let s: f64 = y.iter().sum();
        y.iter_mut().for_each(|v| *v /= s);
        let t = Tensor::new(self.val(ia).shape().to_vec(), y)?;
        Ok(self.push(t, Op::MaskedSoftmax { a: ia }, &[ia]))
    }

    /// Softmax computed independently within each segment; `seg[i]` names the
    /// segment of flat element `i`.
    pub fn segment_softmax(&mut self, a: Var, seg: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = self.val(ia).data();
        if seg.len() != x.len() {
            return Err(TensorError::ShapeMismatch {
                op: "segment_softmax",
                left: self.val(ia).shape().to_vec(),
                right: vec![seg.len()],
            });
        }
        let n_seg = seg.iter().copied().max().map_or(0, |m| m + 1);
        let mut mx = vec![f64::NEG_INFINITY; n_seg];
        for (&v, &s) in x.iter().zip(seg) {
            mx[s] = mx[s].max(v);
        }
        let mut y: Vec<f64> = x.iter().zip(seg).map(|(&v, &s)| (v - mx[s]).exp()).collect();
        let mut tot = vec![0.0; n_seg];
        for (&v, &s) in y.iter().zip(seg) {
            tot[s] += v;
        }
        for (v, &s) in y.iter_mut().zip(seg) {
            *v /= tot[s];
        }
        let t = Tensor::new(self.val(ia).shape().to_vec(), y)?;
        Ok(self.push(
            t,
            Op::SegmentSoftmax {
                a: ia,
                seg: seg.to_vec(),
            },
            &[ia],
        ))
    }

    /// Concatenate along `axis`. Rank-1 parts join end to end (axis 0); rank-2
    /// parts stack rows (axis 0) or columns (axis 1). Empty parts are skipped.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let ids: Vec<usize> = parts.iter().map(|&p| self.idx(p)).collect::<Result<_>>()?;
        let ids: Vec<usize> = ids.into_iter().filter(|&i| !self.val(i).is_empty()).collect();
        if ids.is_empty() {
            return Err(TensorError::invalid("concat", "no non-empty parts"));
        }
        let rank = self.val(ids[0]).shape().len();
        if ids.iter().any(|&i| self.val(i).shape().len() != rank) || rank > 2 {
            return Err(TensorError::invalid("concat", "parts must share rank 1 or 2"));
        }
        let first = self.val(ids[0]).shape().to_vec();
        let (shape, data) = match (rank, axis) {
            (1, 0) => {
                let data: Vec<f64> = ids.iter().flat_map(|&i| self.val(i).data().iter().copied()).collect();
                (vec![data.len()], data)
            }
            (2, 0) => {
                let cols = first[1];
                let mut rows = 0;
                for &i in &ids {
                    let s = self.val(i).shape();
                    if s[1] != cols {
                        return Err(TensorError::ShapeMismatch {
                            op: "concat",
                            left: first.clone(),
                            right: s.to_vec(),
                        });
                    }
                    rows += s[0];
                }
                let data = ids.iter().flat_map(|&i| self.val(i).data().iter().copied()).collect();
                (vec![rows, cols], data)
            }
            (2, 1) => {
                let rows = first[0];
                let mut cols = 0;
                for &i in &ids {
                    let s = self.val(i).shape();
                    if s[0] != rows {
                        return Err(TensorError::ShapeMismatch {
                            op: "concat",
                            left: first.clone(),
                            right: s.to_vec(),
                        });
                    }
                    cols += s[1];
                }
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for &i in &ids {
                        data.extend_from_slice(self.val(i).row(r));
                    }
                }
                (vec![rows, cols], data)
            }
            _ => {
                return Err(TensorError::invalid(
                    "concat",
                    format!("axis {axis} out of range for rank {rank}"),
                ))
            }
        };
        let t = Tensor::new(shape, data)?;
        Ok(self.push(
            t,
            Op::Concat {
                parts: ids.clone(),
                axis,
            },
            &ids,
        ))
    }

    /// Mean cross-entropy of `logits[B×C]` against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let il = self.idx(logits)?;
        let (b, c) = self.rank2(il, "cross_entropy")?;
        if labels.len() != b {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                left: vec![b, c],
                right: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(TensorError::invalid(
                "cross_entropy",
                format!("label {bad} outside [0, {c})"),
            ));
        }
        let x = self.val(il).data();
        let mut probs = vec![0.0; b * c];
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = &x[i * c..(i + 1) * c];
            let (arg, m) =
                row.iter().copied().enumerate().fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (j, v)| if v > acc.1 { (j, v) } else { acc },
                );
            let rest: f64 = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != arg)
                .map(|(_, &v)| (v - m).exp())
                .sum();
            total += (m - row[y]) + rest.ln_1p();
            let z = 1.0 + rest;
            for j in 0..c {
                probs[i * c + j] = (row[j] - m).exp() / z;
            }
        }
        let t = Tensor::scalar(total / b as f64);
        Ok(self.push(
            t,
            Op::CrossEntropy {
                logits: il,
                labels: labels.to_vec(),
                probs,
            },
            &[il],
        ))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let t = Tensor::scalar(self.val(ia).data().iter().sum());
        Ok(self.push(t, Op::Sum { a: ia }, &[ia]))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(TensorError::invalid("mean", "empty tensor"));
        }
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Flat gather: `out[j] = a.flat[idx[j]]`.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = self.val(ia).data();
        if let Some(&bad) = idx.iter().find(|&&i| i >= x.len()) {
            return Err(TensorError::invalid("gather", format!("index {bad} >= {}", x.len())));
        }
        let t = Tensor::vector(idx.iter().map(|&i| x[i]).collect());
        Ok(self.push(
            t,
            Op::Gather {
                a: ia,
                idx: idx.to_vec(),
            },
            &[ia],
        ))
    }

    /// Row gather from `a[n×d]`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let (n, d) = self.rank2(ia, "gather_rows")?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(TensorError::invalid("gather_rows", format!("row {bad} >= {n}")));
        }
        let src = self.val(ia);
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(src.row(i));
        }
        let t = Tensor::new(vec![idx.len(), d], data)?;
        Ok(self.push(
            t,
            Op::GatherRows {
                a: ia,
                idx: idx.to_vec(),
            },
            &[ia],
        ))
    }

    /// `out[idx[j]] += a.flat[j]`, output length `size`.
    pub fn scatter_add(&mut self, a: Var, idx: &[usize], size: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = self.val(ia).data();
        if idx.len() != x.len() {
            return Err(TensorError::ShapeMismatch {
                op: "scatter_add",
                left: self.val(ia).shape().to_vec(),
                right: vec![idx.len()],
            });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= size) {
            return Err(TensorError::invalid("scatter_add", format!("index {bad} >= {size}")));
        }
        let mut out = vec![0.0; size];
        for (&v, &i) in x.iter().zip(idx) {
            out[i] += v;
        }
        let t = Tensor::vector(out);
        Ok(self.push(
            t,
            Op::ScatterAdd {
                a: ia,
                idx: idx.to_vec(),
            },
            &[ia],
        ))
    }

    /// Row `i` of `a[n×d]` multiplied by `s.flat[i]`.
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        let (ia, is) = (self.idx(a)?, self.idx(s)?);
        let (n, d) = self.rank2(ia, "scale_rows")?;
        let sv = self.val(is).data();
        if sv.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows",
                left: vec![n, d],
                right: self.val(is).shape().to_vec(),
            });
        }
        let x = self.val(ia).data();
        let data = (0..n * d).map(|j| x[j] * sv[j / d.max(1)]).collect();
        let t = Tensor::new(vec![n, d], data)?;
        Ok(self.push(t, Op::ScaleRows { a: ia, s: is }, &[ia, is]))
    }

    /// Per-row inner products of two `[n×d]` matrices.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        self.same_shape(ia, ib, "row_dot")?;
        let (n, d) = self.rank2(ia, "row_dot")?;
        let (x, y) = (self.val(ia).data(), self.val(ib).data());
        let t = Tensor::vector(
            (0..n)
                .map(|i| dot(&x[i * d..(i + 1) * d], &y[i * d..(i + 1) * d]))
                .collect(),
        );
        Ok(self.push(t, Op::RowDot { a: ia, b: ib }, &[ia, ib]))
    }

    /// Columns `start..start + len` of `a[n×d]`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let (n, d) = self.rank2(ia, "slice_cols")?;
        if start + len > d {
            return Err(TensorError::invalid(
                "slice_cols",
                format!("{start}+{len} > {d} columns"),
            ));
        }
        let x = self.val(ia);
        let mut data = Vec::with_capacity(n * len);
        for r in 0..n {
            data.extend_from_slice(&x.row(r)[start..start + len]);
        }
        let t = Tensor::new(vec![n, len], data)?;
        Ok(self.push(t, Op::SliceCols { a: ia, start }, &[ia]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let t = self.val(ia).clone().reshaped(shape.to_vec())?;
        Ok(self.push(t, Op::Reshape { a: ia }, &[ia]))
    }

    /// `Σ_{i,j} Σ_k |a_ik − a_jk|` over ordered row pairs of `a[B×K]`.
    pub fn pairwise_l1(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let (b, k) = self.rank2(ia, "pairwise_l1")?;
        let x = self.val(ia).data();
        let mut total = 0.0;
        let mut col = vec![0.0; b];
        for c in 0..k {
            for r in 0..b {
                col[r] = x[r * k + c];
            }
            col.sort_by(f64::total_cmp);
            // sorted order: Σ_{i<j} (x_j − x_i) = Σ_r x_(r)·(2r − (B−1))
            for (r, &v) in col.iter().enumerate() {
                total += v * (2.0 * r as f64 - (b as f64 - 1.0));
            }
        }
        let t = Tensor::scalar(2.0 * total);
        Ok(self.push(t, Op::PairwiseL1 { a: ia }, &[ia]))
    }

    // ---- backward ---------------------------------------------------------

    /// Reverse sweep from a scalar; gradients accumulate into trainable leaves.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let il = self.idx(loss)?;
        if self.val(il).len() != 1 {
            return Err(TensorError::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.val(il).shape()),
            ));
        }
        self.backward_with(loss, &[1.0])
    }

    /// Reverse sweep seeded with an arbitrary upstream gradient for `out`.
    pub fn backward_with(&mut self, out: Var, upstream: &[f64]) -> Result<()> {
        let io = self.idx(out)?;
        if upstream.len() != self.val(io).len() {
            return Err(TensorError::ShapeMismatch {
                op: "backward",
                left: self.val(io).shape().to_vec(),
                right: vec![upstream.len()],
            });
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..=io).map(|_| None).collect();
        adj[io] = Some(upstream.to_vec());
        for i in (0..=io).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                match &mut self.nodes[i].grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
                continue;
            }
            self.backprop_node(i, &g, &mut adj);
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let wants = |j: usize| nodes[j].requires_grad;
        let out = nodes[i].value.data();
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = nodes[*a].value.dims2();
                let n = nodes[*b].value.dims2().1;
                if wants(*a) {
                    gemm_nt(g, nodes[*b].value.data(), slot(adj, *a, m * k), m, n, k);
                }
                if wants(*b) {
                    gemm_tn(nodes[*a].value.data(), g, slot(adj, *b, k * n), m, k, n);
                }
            }
            Op::MatMulNT { a, b } => {
                let (m, k) = nodes[*a].value.dims2();
                let n = nodes[*b].value.dims2().0;
                if wants(*a) {
                    gemm_nn(g, nodes[*b].value.data(), slot(adj, *a, m * k), m, n, k);
                }
                if wants(*b) {
                    gemm_tn(g, nodes[*a].value.data(), slot(adj, *b, n * k), m, n, k);
                }
            }
            Op::Add { a, b } => {
                for (j, sign) in [(*a, 1.0), (*b, 1.0)] {
                    if wants(j) {
                        axpy(slot(adj, j, g.len()), g, sign);
                    }
                }
            }
            Op::Sub { a, b } => {
                for (j, sign) in [(*a, 1.0), (*b, -1.0)] {
                    if wants(j) {
                        axpy(slot(adj, j, g.len()), g, sign);
                    }
                }
            }
            Op::Mul { a, b } => {
                let (x, y) = (nodes[*a].value.data(), nodes[*b].value.data());
                if wants(*a) {
                    for ((d, gv), yv) in slot(adj, *a, g.len()).iter_mut().zip(g).zip(y) {
                        *d += gv * yv;
                    }
                }
                if wants(*b) {
                    for ((d, gv), xv) in slot(adj, *b, g.len()).iter_mut().zip(g).zip(x) {
                        *d += gv * xv;
                    }
                }
            }
            Op::AddRow { a, row } => {
                if wants(*a) {
                    axpy(slot(adj, *a, g.len()), g, 1.0);
                }
                if wants(*row) {
                    let d = nodes[*row].value.len();
                    let dr = slot(adj, *row, d);
                    for chunk in g.chunks(d.max(1)) {
                        axpy(dr, chunk, 1.0);
                    }
                }
            }
            Op::Scale { a, k } => {
                if wants(*a) {
                    axpy(slot(adj, *a, g.len()), g, *k);
                }
            }
            Op::Sigmoid { a } => {
                if wants(*a) {
                    for ((d, gv), y) in slot(adj, *a, g.len()).iter_mut().zip(g).zip(out) {
                        *d += gv * y * (1.0 - y);
                    }
                }
            }
            Op::Relu { a } => {
                if wants(*a) {
                    let x = nodes[*a].value.data();
                    for ((d, gv), xv) in slot(adj, *a, g.len()).iter_mut().zip(g).zip(x) {
                        if *xv > 0.0 {
                            *d += gv;
                        }
                    }
                }
            }
            Op::MaskedSoftmax { a } => {
                if wants(*a) {
                    let s: f64 = g.iter().zip(out).map(|(gv, y)| gv * y).sum();
                    for ((d, gv), y) in slot(adj, *a, g.len()).iter_mut().zip(g).zip(out) {
                        *d += y * (gv - s);
                    }
                }
            }
            Op::SegmentSoftmax { a, seg } => {
                if wants(*a) {
                    let n_seg = seg.iter().copied().max().map_or(0, |m| m + 1);
                    let mut s = vec![0.0; n_seg];
                    for ((gv, y), &sg) in g.iter().zip(out).zip(seg) {
                        s[sg] += gv * y;
                    }
                    for (((d, gv), y), &sg) in slot(adj, *a, g.len()).iter_mut().zip(g).zip(out).zip(seg) {
                        *d += y * (gv - s[sg]);
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let rank = nodes[parts[0]].value.shape().len();
                if rank == 1 || *axis == 0 {
                    let mut off = 0;
                    for &p in parts {
                        let n = nodes[p].value.len();
                        if wants(p) {
                            axpy(slot(adj, p, n), &g[off..off + n], 1.0);
                        }
                        off += n;
                    }
                } else {
                    let rows = nodes[i].value.dims2().0;
                    let total = nodes[i].value.dims2().1;
                    let mut col_off = 0;
                    for &p in parts {
                        let w = nodes[p].value.dims2().1;
                        if wants(p) {
                            let d = slot(adj, p, rows * w);
                            for r in 0..rows {
                                axpy(
                                    &mut d[r * w..(r + 1) * w],
                                    &g[r * total + col_off..r * total + col_off + w],
                                    1.0,
                                );
                            }
                        }
                        col_off += w;
                    }
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                if wants(*logits) {
                    let (b, c) = nodes[*logits].value.dims2();
                    let scale = g[0] / b as f64;
                    let d = slot(adj, *logits, b * c);
                    for (r, &y) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == y { 1.0 } else { 0.0 };
                            d[r * c + j] += scale * (probs[r * c + j] - onehot);
                        }
                    }
                }
            }
            Op::Sum { a } => {
                if wants(*a) {
                    let n = nodes[*a].value.len();
                    slot(adj, *a, n).iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Gather { a, idx } => {
                if wants(*a) {
                    let d = slot(adj, *a, nodes[*a].value.len());
                    for (gv, &j) in g.iter().zip(idx) {
                        d[j] += gv;
                    }
                }
            }
            Op::GatherRows { a, idx } => {
                if wants(*a) {
                    let (_, w) = nodes[*a].value.dims2();
                    let d = slot(adj, *a, nodes[*a].value.len());
                    for (r, &j) in idx.iter().enumerate() {
                        axpy(&mut d[j * w..(j + 1) * w], &g[r * w..(r + 1) * w], 1.0);
                    }
                }
            }
            Op::ScatterAdd { a, idx } => {
                if wants(*a) {
                    let d = slot(adj, *a, idx.len());
                    for (dv, &j) in d.iter_mut().zip(idx) {
                        *dv += g[j];
                    }
                }
            }
            Op::ScaleRows { a, s } => {
                let (n, w) = nodes[*a].value.dims2();
                let sv = nodes[*s].value.data();
                let x = nodes[*a].value.data();
                if wants(*a) {
                    let d = slot(adj, *a, n * w);
                    for j in 0..n * w {
                        d[j] += g[j] * sv[j / w.max(1)];
                    }
                }
                if wants(*s) {
                    let d = slot(adj, *s, n);
                    for r in 0..n {
                        d[r] += dot(&g[r * w..(r + 1) * w], &x[r * w..(r + 1) * w]);
                    }
                }
            }
            Op::RowDot { a, b } => {
                let (n, w) = nodes[*a].value.dims2();
                for (this, other) in [(*a, *b), (*b, *a)] {
                    if wants(this) {
                        let o = nodes[other].value.data();
                        let d = slot(adj, this, n * w);
                        for r in 0..n {
                            for c in 0..w {
                                d[r * w + c] += g[r] * o[r * w + c];
                            }
                        }
                    }
                }
            }
            Op::SliceCols { a, start } => {
                if wants(*a) {
                    let (n, w) = nodes[*a].value.dims2();
                    let len = nodes[i].value.dims2().1;
                    let d = slot(adj, *a, n * w);
                    for r in 0..n {
                        axpy(
                            &mut d[r * w + start..r * w + start + len],
                            &g[r * len..(r + 1) * len],
                            1.0,
                        );
                    }
                }
            }
            Op::Reshape { a } => {
                if wants(*a) {
                    axpy(slot(adj, *a, g.len()), g, 1.0);
                }
            }
            Op::PairwiseL1 { a } => {
                if wants(*a) {
                    let (b, k) = nodes[*a].value.dims2();
                    let x = nodes[*a].value.data();
                    let d = slot(adj, *a, b * k);
                    let mut col: Vec<(f64, usize)> = Vec::with_capacity(b);
                    for c in 0..k {
                        col.clear();
                        col.extend((0..b).map(|r| (x[r * k + c], r)));
                        col.sort_by(|p, q| p.0.total_cmp(&q.0));
                        // d/dx_r = 2·(#strictly smaller − #strictly larger)
                        let mut start = 0;
                        while start < b {
                            let mut end = start;
                            while end < b && col[end].0 == col[start].0 {
                                end += 1;
                            }
                            let coef = 2.0 * (start as f64 - (b - end) as f64);
                            for &(_, r) in &col[start..end] {
                                d[r * k + c] += g[0] * coef;
                            }
                            start = end;
                        }
                    }
                }
            }
        }
    }
}

fn slot(adj: &mut [Option<Vec<f64>>], j: usize, n: usize) -> &mut [f64] {
    adj[j].get_or_insert_with(|| vec![0.0; n])
}

fn axpy(dst: &mut [f64], src: &[f64], k: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_orthogonal() {
        let mut t = Tape::new();
        let i2 = t.constant(m(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let x = t.constant(m(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let y = t.matmul(i2, x).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);

        let a = t.constant(m(1, 2, &[1.0, 0.0]));
        let b = t.constant(m(2, 1, &[0.0, 5.0]));
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[0.0]);
    }

    #[test]
    fn matmul_reports_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        match t.matmul(a, b) {
            Err(TensorError::ShapeMismatch { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn masked_softmax_examples() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::vector(vec![0.0, 0.0]));
        let y = t.masked_softmax(a, &[true, true]).unwrap();
        assert_eq!(t.value(y).data(), &[0.5, 0.5]);

        let a = t.constant(Tensor::vector(vec![5.0, 5.0, 5.0]));
        let y = t.masked_softmax(a, &[true, false, true]).unwrap();
        assert_eq!(t.value(y).data(), &[0.5, 0.0, 0.5]);

        let a = t.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let y = t.masked_softmax(a, &[true; 3]).unwrap();
        let v = t.value(y).data();
        assert_relative_eq!(v[0], 0.09003, epsilon = 1e-5);
        assert_relative_eq!(v[1], 0.24473, epsilon = 1e-5);
        assert_relative_eq!(v[2], 0.66524, epsilon = 1e-5);

        let a = t.constant(Tensor::vector(vec![1.0, 2.0]));
        assert!(t.masked_softmax(a, &[false, false]).is_err());
    }

    #[test]
    fn concat_examples() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = t.constant(Tensor::vector(vec![3.0]));
        let e = t.constant(Tensor::vector(vec![]));
        let c = t.concat(&[a, b], 0).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 2.0, 3.0]);
        let c = t.concat(&[a, e], 0).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 2.0]);

        let p = t.constant(m(2, 1, &[1.0, 2.0]));
        let q = t.constant(m(3, 1, &[1.0, 2.0, 3.0]));
        assert!(t.concat(&[p, q], 1).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let mut t = Tape::new();
        let l = t.constant(m(1, 2, &[0.0, 0.0]));
        let ce = t.cross_entropy(l, &[0]).unwrap();
        assert_relative_eq!(t.value(ce).data()[0], std::f64::consts::LN_2, epsilon = 1e-12);

        let l = t.constant(m(1, 2, &[50.0, 0.0]));
        let ce = t.cross_entropy(l, &[0]).unwrap();
        assert!(t.value(ce).data()[0] < 1e-20);

        let l = t.constant(m(1, 2, &[1.0, 0.0]));
        let ce = t.cross_entropy(l, &[1]).unwrap();
        assert_relative_eq!(t.value(ce).data()[0], 1.313262, epsilon = 1e-6);

        assert!(t.cross_entropy(l, &[2]).is_err());
    }

    #[test]
    fn backward_sum_is_ones_and_accumulates() {
        let mut t = Tape::new();
        let p = t.leaf(m(2, 3, &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]));
        let s = t.sum(p).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(p).unwrap(), &[1.0; 6]);
        t.backward(s).unwrap();
        assert_eq!(t.grad(p).unwrap(), &[2.0; 6]);
        t.zero_grad();
        assert!(t.grad(p).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let p = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(t.backward(p).is_err());
    }

    #[test]
    fn foreign_var_is_rejected() {
        let mut t1 = Tape::new();
        let mut t2 = Tape::new();
        let a = t1.leaf(Tensor::scalar(1.0));
        assert!(matches!(t2.sigmoid(a), Err(TensorError::ForeignVar { .. })));
    }

    #[test]
    fn pairwise_l1_value() {
        let mut t = Tape::new();
        let e = t.leaf(m(2, 1, &[0.3, 0.7]));
        let r = t.pairwise_l1(e).unwrap();
        assert_relative_eq!(t.value(r).data()[0], 0.8, epsilon = 1e-15);
        t.backward(r).unwrap();
        assert_eq!(t.grad(e).unwrap(), &[-2.0, 2.0]);
    }
}
