//! Define-by-run reverse-mode differentiation over dense `f64` arrays.
//!
//! A [`Tape`] records every primitive as a node in creation order. Inputs
//! always precede their consumers, so a single reverse sweep from the root
//! visits each node once and yields exact adjoints for every leaf created
//! with [`Tape::leaf`]. Leaf gradients accumulate across calls to
//! [`Tape::backward`]; callers reset them with [`Tape::zero_grad`].
//!
//! The tape is rebuilt for every forward pass. Parameters are copied in as
//! leaves, which is cheap at the sizes this crate targets.

mod check;

pub use check::finite_diff_check;

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive kinds, used for diagnostics and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Constant,
    MatMul,
    Add,
    AddRow,
    Scale,
    Mul,
    Relu,
    Tanh,
    Embedding,
    MeanPool,
    Conv1dMaxPool,
    Concat,
    GatherRows,
    Lerp,
    SoftmaxCrossEntropy,
    Select,
    Sum,
    Mean,
    Reshape,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Constant => "constant",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::AddRow => "add_row",
            OpKind::Scale => "scale",
            OpKind::Mul => "mul",
            OpKind::Relu => "relu",
            OpKind::Tanh => "tanh",
            OpKind::Embedding => "embedding_lookup",
            OpKind::MeanPool => "mean_pool",
            OpKind::Conv1dMaxPool => "conv1d_maxpool",
            OpKind::Concat => "concat",
            OpKind::GatherRows => "gather_rows",
            OpKind::Lerp => "lerp",
            OpKind::SoftmaxCrossEntropy => "softmax_cross_entropy",
            OpKind::Select => "select",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Reshape => "reshape",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var },
    AddRow { x: Var, bias: Var },
    Scale { x: Var, factor: f64 },
    Mul { a: Var, b: Var },
    Relu { x: Var },
    Tanh { x: Var },
    Embedding { table: Var, ids: Vec<usize> },
    MeanPool { x: Var, valid_lens: Vec<usize> },
    // argmax[s * c + ch] is the winning window start, or None when the
    // pooled pre-activation is <= 0 and relu blocks the gradient.
    Conv1dMaxPool {
        x: Var,
        filters: Var,
        bias: Var,
        argmax: Vec<Option<usize>>,
    },
    Concat { parts: Vec<Var> },
    GatherRows { x: Var, index: Vec<usize> },
    Lerp { a: Var, b: Var, weight: Var },
    SoftmaxCrossEntropy { logits: Var, target: Vec<f64>, probs: Vec<f64> },
    Select { a: Var, b: Var, mask: Vec<bool> },
    Sum { x: Var },
    Mean { x: Var },
    Reshape { x: Var },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Constant => OpKind::Constant,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Add { .. } => OpKind::Add,
            Op::AddRow { .. } => OpKind::AddRow,
            Op::Scale { .. } => OpKind::Scale,
            Op::Mul { .. } => OpKind::Mul,
            Op::Relu { .. } => OpKind::Relu,
            Op::Tanh { .. } => OpKind::Tanh,
            Op::Embedding { .. } => OpKind::Embedding,
            Op::MeanPool { .. } => OpKind::MeanPool,
            Op::Conv1dMaxPool { .. } => OpKind::Conv1dMaxPool,
            Op::Concat { .. } => OpKind::Concat,
            Op::GatherRows { .. } => OpKind::GatherRows,
            Op::Lerp { .. } => OpKind::Lerp,
            Op::SoftmaxCrossEntropy { .. } => OpKind::SoftmaxCrossEntropy,
            Op::Select { .. } => OpKind::Select,
            Op::Sum { .. } => OpKind::Sum,
            Op::Mean { .. } => OpKind::Mean,
            Op::Reshape { .. } => OpKind::Reshape,
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording of one forward computation.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    fault: Option<OpKind>,
    visits: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Total node visits made by all backward passes so far.
    pub fn visits(&self) -> usize {
        self.visits
    }

    /// Test hook: negate every adjoint produced by `kind` in later backward
    /// passes. Used to confirm the gradient checker notices a sign error.
    #[doc(hidden)]
    pub fn inject_sign_fault(&mut self, kind: Option<OpKind>) {
        self.fault = kind;
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Dimension {
                op: "add",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let shape = ta.shape().to_vec();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Add { a, b }, rg))
    }

    /// Adds a bias vector to every row of a matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tx.shape().len() != 2 || tb.shape().len() != 1 || tx.shape()[1] != tb.shape()[0] {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: tx.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let w = tb.len();
        let out: Vec<f64> = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + tb.data()[i % w])
            .collect();
        let shape = tx.shape().to_vec();
        let rg = self.any_grad(&[x, bias]);
        Ok(self.push(Tensor::new(shape, out)?, Op::AddRow { x, bias }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let tx = self.value(x);
        let out: Vec<f64> = tx.data().iter().map(|v| v * factor).collect();
        let t = Tensor::new(tx.shape().to_vec(), out).expect("same shape");
        let rg = self.any_grad(&[x]);
        self.push(t, Op::Scale { x, factor }, rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Dimension {
                op: "mul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let shape = ta.shape().to_vec();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Mul { a, b }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let out: Vec<f64> = tx.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let t = Tensor::new(tx.shape().to_vec(), out).expect("same shape");
        let rg = self.any_grad(&[x]);
        self.push(t, Op::Relu { x }, rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let out: Vec<f64> = tx.data().iter().map(|v| v.tanh()).collect();
        let t = Tensor::new(tx.shape().to_vec(), out).expect("same shape");
        let rg = self.any_grad(&[x]);
        self.push(t, Op::Tanh { x }, rg)
    }

    /// Gathers rows of a `[V x d]` table, producing `[ids.len() x d]`.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        if tt.shape().len() != 2 {
            return Err(Error::Dimension {
                op: "embedding_lookup",
                lhs: tt.shape().to_vec(),
                rhs: vec![ids.len()],
            });
        }
        let (vocab, d) = (tt.shape()[0], tt.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(Error::Index {
                    what: "embedding table",
                    index: id,
                    len: vocab,
                });
            }
            out.extend_from_slice(tt.row(id));
        }
        let rg = self.any_grad(&[table]);
        Ok(self.push(
            Tensor::new(vec![ids.len(), d], out)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Mean over the first `valid_len` rows of a `[len x d]` sequence.
    pub fn mean_pool(&mut self, x: Var, valid_len: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if shape.len() != 2 {
            return Err(Error::Dimension {
                op: "mean_pool",
                lhs: shape,
                rhs: vec![valid_len],
            });
        }
        let batched = self.reshape(x, vec![1, shape[0], shape[1]])?;
        let pooled = self.mean_pool_batch(batched, &[valid_len])?;
        self.reshape(pooled, vec![shape[1]])
    }

    /// Batched masked mean: `[n x len x d]` with per-sequence valid lengths
    /// to `[n x d]`.
    pub fn mean_pool_batch(&mut self, x: Var, valid_lens: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let shape = tx.shape();
        if shape.len() != 3 || shape[0] != valid_lens.len() {
            return Err(Error::Dimension {
                op: "mean_pool",
                lhs: shape.to_vec(),
                rhs: vec![valid_lens.len()],
            });
        }
        let (n, len, d) = (shape[0], shape[1], shape[2]);
        let mut out = vec![0.0; n * d];
        for (s, &vl) in valid_lens.iter().enumerate() {
            if vl == 0 || vl > len {
                return Err(Error::Precondition(format!(
                    "mean_pool valid_len {vl} must be in 1..={len}"
                )));
            }
            let row = &mut out[s * d..(s + 1) * d];
            for t in 0..vl {
                let src = &tx.data()[(s * len + t) * d..(s * len + t + 1) * d];
                for (o, v) in row.iter_mut().zip(src) {
                    *o += v;
                }
            }
            let inv = vl as f64;
            for o in row.iter_mut() {
                *o /= inv;
            }
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            Tensor::new(vec![n, d], out)?,
            Op::MeanPool {
                x,
                valid_lens: valid_lens.to_vec(),
            },
            rg,
        ))
    }

    /// Valid 1-D convolution of a `[len x d]` sequence with `[w x d x c]`
    /// filters, relu, then a global max over time, giving `[c]`.
    pub fn conv1d_maxpool(&mut self, x: Var, filters: Var, bias: Var) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if shape.len() != 2 {
            return Err(Error::Dimension {
                op: "conv1d_maxpool",
                lhs: shape,
                rhs: self.value(filters).shape().to_vec(),
            });
        }
        let batched = self.reshape(x, vec![1, shape[0], shape[1]])?;
        let pooled = self.conv1d_maxpool_batch(batched, filters, bias)?;
        let c = self.value(pooled).shape()[1];
        self.reshape(pooled, vec![c])
    }

    /// Batched form of [`Tape::conv1d_maxpool`]: `[n x len x d]` to `[n x c]`.
    ///
    /// Ties between equal maxima go to the lowest time index.
    pub fn conv1d_maxpool_batch(&mut self, x: Var, filters: Var, bias: Var) -> Result<Var> {
        let (tx, tf, tb) = (self.value(x), self.value(filters), self.value(bias));
        let (xs, fs) = (tx.shape(), tf.shape());
        if xs.len() != 3 || fs.len() != 3 || xs[2] != fs[1] || tb.shape() != [fs[2]] {
            return Err(Error::Dimension {
                op: "conv1d_maxpool",
                lhs: xs.to_vec(),
                rhs: fs.to_vec(),
            });
        }
        let (n, len, d) = (xs[0], xs[1], xs[2]);
        let (w, c) = (fs[0], fs[2]);
        if len < w {
            return Err(Error::InputTooShort { len, width: w });
        }
        let (xd, fd, bd) = (tx.data(), tf.data(), tb.data());
        let windows = len - w + 1;
        let mut out = vec![0.0; n * c];
        let mut argmax = vec![None; n * c];
        let mut z = vec![0.0; c];
        for s in 0..n {
            let mut best = vec![f64::NEG_INFINITY; c];
            let mut best_t = vec![0usize; c];
            for t in 0..windows {
                z.copy_from_slice(bd);
                for o in 0..w {
                    let xrow = &xd[(s * len + t + o) * d..(s * len + t + o + 1) * d];
                    for (e, &xv) in xrow.iter().enumerate() {
                        let frow = &fd[(o * d + e) * c..(o * d + e + 1) * c];
                        for (zc, fv) in z.iter_mut().zip(frow) {
                            *zc += xv * fv;
                        }
                    }
                }
                for ch in 0..c {
                    if z[ch] > best[ch] {
                        best[ch] = z[ch];
                        best_t[ch] = t;
                    }
                }
            }
            for ch in 0..c {
                if best[ch] > 0.0 {
                    out[s * c + ch] = best[ch];
                    argmax[s * c + ch] = Some(best_t[ch]);
                }
            }
        }
        let rg = self.any_grad(&[x, filters, bias]);
        Ok(self.push(
            Tensor::new(vec![n, c], out)?,
            Op::Conv1dMaxPool {
                x,
                filters,
                bias,
                argmax,
            },
            rg,
        ))
    }

    /// Concatenates `[n x c_i]` matrices along the column axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Precondition("concat of zero parts".into()))?;
        let n = self.value(*first).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != 2 || s[0] != n {
                return Err(Error::Dimension {
                    op: "concat",
                    lhs: self.value(*first).shape().to_vec(),
                    rhs: s.to_vec(),
                });
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = self.any_grad(parts);
        Ok(self.push(
            Tensor::new(vec![n, total], out)?,
            Op::Concat {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    /// Reorders slices along the leading axis: output row `r` is input row
    /// `index[r]`.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let rows = tx.rows();
        let mut shape = tx.shape().to_vec();
        if shape.is_empty() {
            return Err(Error::Dimension {
                op: "gather_rows",
                lhs: shape,
                rhs: vec![index.len()],
            });
        }
        let mut out = Vec::with_capacity(index.len() * tx.row_width());
        for &i in index {
            if i >= rows {
                return Err(Error::Index {
                    what: "gather_rows",
                    index: i,
                    len: rows,
                });
            }
            out.extend_from_slice(tx.row(i));
        }
        shape[0] = index.len();
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::GatherRows {
                x,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    /// Per-row convex combination `a * w + b * (1 - w)`, where `w` holds one
    /// weight per slice along the leading axis.
    pub fn lerp(&mut self, a: Var, b: Var, weight: Var) -> Result<Var> {
        let (ta, tb, tw) = (self.value(a), self.value(b), self.value(weight));
        if ta.shape() != tb.shape() || tw.shape() != [ta.rows()] {
            return Err(Error::Dimension {
                op: "lerp",
                lhs: ta.shape().to_vec(),
                rhs: if ta.shape() != tb.shape() {
                    tb.shape().to_vec()
                } else {
                    tw.shape().to_vec()
                },
            });
        }
        let width = ta.row_width();
        let out: Vec<f64> = ta
            .data()
            .iter()
            .zip(tb.data())
            .enumerate()
            .map(|(idx, (x, y))| {
                let lam = tw.data()[idx / width.max(1)];
                x * lam + y * (1.0 - lam)
            })
            .collect();
        let shape = ta.shape().to_vec();
        let rg = self.any_grad(&[a, b, weight]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Lerp { a, b, weight }, rg))
    }

    /// Per-sample cross-entropy of `[n x C]` logits against nonnegative
    /// target rows (soft labels allowed). Returns `[n]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: &Tensor) -> Result<Var> {
        let tl = self.value(logits);
        let shape = tl.shape();
        if shape.len() != 2 || target.shape() != shape {
            return Err(Error::Dimension {
                op: "softmax_cross_entropy",
                lhs: shape.to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        let (n, classes) = (shape[0], shape[1]);
        if classes < 2 {
            return Err(Error::config(format!(
                "cross-entropy needs at least 2 classes, got {classes}"
            )));
        }
        if target.data().iter().any(|&t| !(t >= 0.0)) {
            return Err(Error::Precondition("target rows must be nonnegative".into()));
        }
        let mut losses = Vec::with_capacity(n);
        let mut probs = Vec::with_capacity(n * classes);
        for r in 0..n {
            let z = tl.row(r);
            let t = target.row(r);
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = z.iter().map(|v| (v - m).exp()).sum();
            let lse = m + sum_exp.ln();
            let loss: f64 = z
                .iter()
                .zip(t)
                .filter(|(_, &tc)| tc != 0.0)
                .map(|(zc, tc)| tc * (lse - zc))
                .sum();
            losses.push(loss);
            probs.extend(z.iter().map(|v| (v - m).exp() / sum_exp));
        }
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::vector(losses),
            Op::SoftmaxCrossEntropy {
                logits,
                target: target.data().to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Elementwise selector over vectors: `b` where `mask` is set, else `a`.
    pub fn select(&mut self, a: Var, b: Var, mask: &[bool]) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 1 || ta.shape() != tb.shape() || mask.len() != ta.len() {
            return Err(Error::Dimension {
                op: "select",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let out: Vec<f64> = mask
            .iter()
            .enumerate()
            .map(|(i, &m)| if m { tb.data()[i] } else { ta.data()[i] })
            .collect();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(
            Tensor::vector(out),
            Op::Select {
                a,
                b,
                mask: mask.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.is_empty() {
            return Err(Error::Precondition("mean of an empty tensor".into()));
        }
        let m = tx.data().iter().sum::<f64>() / tx.len() as f64;
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::scalar(m), Op::Mean { x }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(t, Op::Reshape { x }, rg))
    }

    /// Propagates adjoints from a scalar `root` back to every leaf.
    ///
    /// Visits nodes `root, root-1, ..., 0` once each and returns the number
    /// of nodes visited. Leaf gradients are added to whatever is already
    /// accumulated.
    pub fn backward(&mut self, root: Var) -> Result<usize> {
        if self.value(root).len() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);
        let mut visited = 0;
        for id in (0..=root.0).rev() {
            visited += 1;
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let sign = if self.fault == Some(node.op.kind()) { -1.0 } else { 1.0 };
            self.propagate(id, &g, sign, &mut adj);
        }
        self.visits += visited;
        Ok(visited)
    }

    fn propagate(&mut self, id: usize, g: &[f64], sign: f64, adj: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let node = &nodes[id];
        // Helper closure semantics: allocate the adjoint buffer of `v` lazily
        // and hand it back for accumulation, or None if v needs no gradient.
        fn slot<'a>(
            nodes: &[Node],
            adj: &'a mut [Option<Vec<f64>>],
            v: Var,
        ) -> Option<&'a mut Vec<f64>> {
            if !nodes[v.0].requires_grad {
                return None;
            }
            let len = nodes[v.0].value.len();
            Some(adj[v.0].get_or_insert_with(|| vec![0.0; len]))
        }

        match &node.op {
            Op::Leaf => {
                let shape = node.value.shape().to_vec();
                let acc = self.grads[id].get_or_insert_with(|| Tensor::zeros(&shape));
                for (a, v) in acc.data_mut().iter_mut().zip(g) {
                    *a += sign * v;
                }
            }
            Op::Constant => {}
            Op::MatMul { a, b } => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if let Some(da) = slot(nodes, adj, *a) {
                    // dA = dC * B^T
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g[i * n + j] * tb.data()[p * n + j];
                            }
                            da[i * k + p] += sign * acc;
                        }
                    }
                }
                if let Some(db) = slot(nodes, adj, *b) {
                    // dB = A^T * dC
                    for p in 0..k {
                        for j in 0..n {
                            let mut acc = 0.0;
                            for i in 0..m {
                                acc += ta.data()[i * k + p] * g[i * n + j];
                            }
                            db[p * n + j] += sign * acc;
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if let Some(d) = slot(nodes, adj, v) {
                        for (x, gv) in d.iter_mut().zip(g) {
                            *x += sign * gv;
                        }
                    }
                }
            }
            Op::AddRow { x, bias } => {
                if let Some(dx) = slot(nodes, adj, *x) {
                    for (x, gv) in dx.iter_mut().zip(g) {
                        *x += sign * gv;
                    }
                }
                if let Some(db) = slot(nodes, adj, *bias) {
                    let w = db.len();
                    for (i, gv) in g.iter().enumerate() {
                        db[i % w] += sign * gv;
                    }
                }
            }
            Op::Scale { x, factor } => {
                if let Some(dx) = slot(nodes, adj, *x) {
                    for (d, gv) in dx.iter_mut().zip(g) {
                        *d += sign * gv * factor;
                    }
                }
            }
            Op::Mul { a, b } => {
                let (ta, tb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                if let Some(da) = slot(nodes, adj, *a) {
                    for i in 0..g.len() {
                        da[i] += sign * g[i] * tb[i];
                    }
                }
                if let Some(db) = slot(nodes, adj, *b) {
                    for i in 0..g.len() {
                        db[i] += sign * g[i] * ta[i];
                    }
                }
            }
            Op::Relu { x } => {
                let tx = nodes[x.0].value.data();
                if let Some(dx) = slot(nodes, adj, *x) {
                    for i in 0..g.len() {
                        if tx[i] > 0.0 {
                            dx[i] += sign * g[i];
                        }
                    }
                }
            }
            Op::Tanh { x } => {
                let y = node.value.data();
                if let Some(dx) = slot(nodes, adj, *x) {
                    for i in 0..g.len() {
                        dx[i] += sign * g[i] * (1.0 - y[i] * y[i]);
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let d = nodes[table.0].value.shape()[1];
                if let Some(dt) = slot(nodes, adj, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        for e in 0..d {
                            dt[id * d + e] += sign * g[r * d + e];
                        }
                    }
                }
            }
            Op::MeanPool { x, valid_lens } => {
                let shape = nodes[x.0].value.shape();
                let (len, d) = (shape[1], shape[2]);
                if let Some(dx) = slot(nodes, adj, *x) {
                    for (s, &vl) in valid_lens.iter().enumerate() {
                        let inv = vl as f64;
                        for t in 0..vl {
                            for e in 0..d {
                                dx[(s * len + t) * d + e] += sign * g[s * d + e] / inv;
                            }
                        }
                    }
                }
            }
            Op::Conv1dMaxPool {
                x,
                filters,
                bias,
                argmax,
            } => {
                let xs = nodes[x.0].value.shape();
                let (len, d) = (xs[1], xs[2]);
                let fs = nodes[filters.0].value.shape();
                let (w, c) = (fs[0], fs[2]);
                let (xd, fd) = (nodes[x.0].value.data(), nodes[filters.0].value.data());
                if let Some(db) = slot(nodes, adj, *bias) {
                    for (i, am) in argmax.iter().enumerate() {
                        if am.is_some() {
                            db[i % c] += sign * g[i];
                        }
                    }
                }
                if let Some(df) = slot(nodes, adj, *filters) {
                    for (i, am) in argmax.iter().enumerate() {
                        let Some(t) = am else { continue };
                        let (s, ch) = (i / c, i % c);
                        for o in 0..w {
                            for e in 0..d {
                                df[(o * d + e) * c + ch] +=
                                    sign * g[i] * xd[(s * len + t + o) * d + e];
                            }
                        }
                    }
                }
                if let Some(dx) = slot(nodes, adj, *x) {
                    for (i, am) in argmax.iter().enumerate() {
                        let Some(t) = am else { continue };
                        let (s, ch) = (i / c, i % c);
                        for o in 0..w {
                            for e in 0..d {
                                dx[(s * len + t + o) * d + e] +=
                                    sign * g[i] * fd[(o * d + e) * c + ch];
                            }
                        }
                    }
                }
            }
            Op::Concat { parts } => {
                let n = node.value.rows();
                let total = node.value.row_width();
                let mut offset = 0;
                for &p in parts {
                    let width = nodes[p.0].value.row_width();
                    if let Some(dp) = slot(nodes, adj, p) {
                        for r in 0..n {
                            for col in 0..width {
                                dp[r * width + col] += sign * g[r * total + offset + col];
                            }
                        }
                    }
                    offset += width;
                }
            }
            Op::GatherRows { x, index } => {
                let width = nodes[x.0].value.row_width();
                if let Some(dx) = slot(nodes, adj, *x) {
                    for (r, &src) in index.iter().enumerate() {
                        for col in 0..width {
                            dx[src * width + col] += sign * g[r * width + col];
                        }
                    }
                }
            }
            Op::Lerp { a, b, weight } => {
                let (ta, tb, tw) = (
                    nodes[a.0].value.data(),
                    nodes[b.0].value.data(),
                    nodes[weight.0].value.data(),
                );
                let width = nodes[a.0].value.row_width().max(1);
                if let Some(da) = slot(nodes, adj, *a) {
                    for i in 0..g.len() {
                        da[i] += sign * g[i] * tw[i / width];
                    }
                }
                if let Some(db) = slot(nodes, adj, *b) {
                    for i in 0..g.len() {
                        db[i] += sign * g[i] * (1.0 - tw[i / width]);
                    }
                }
                if let Some(dw) = slot(nodes, adj, *weight) {
                    for i in 0..g.len() {
                        dw[i / width] += sign * g[i] * (ta[i] - tb[i]);
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                target,
                probs,
            } => {
                let classes = nodes[logits.0].value.shape()[1];
                if let Some(dl) = slot(nodes, adj, *logits) {
                    for (r, gv) in g.iter().enumerate() {
                        let t = &target[r * classes..(r + 1) * classes];
                        let p = &probs[r * classes..(r + 1) * classes];
                        let mass: f64 = t.iter().sum();
                        for c in 0..classes {
                            dl[r * classes + c] += sign * gv * (mass * p[c] - t[c]);
                        }
                    }
                }
            }
            Op::Select { a, b, mask } => {
                let to_b = mask.iter().any(|&m| m);
                let to_a = mask.iter().any(|&m| !m);
                if to_a {
                    if let Some(da) = slot(nodes, adj, *a) {
                        for i in 0..g.len() {
                            if !mask[i] {
                                da[i] += sign * g[i];
                            }
                        }
                    }
                }
                if to_b {
                    if let Some(db) = slot(nodes, adj, *b) {
                        for i in 0..g.len() {
                            if mask[i] {
                                db[i] += sign * g[i];
                            }
                        }
                    }
                }
            }
            Op::Sum { x } => {
                if let Some(dx) = slot(nodes, adj, *x) {
                    for d in dx.iter_mut() {
                        *d += sign * g[0];
                    }
                }
            }
            Op::Mean { x } => {
                if let Some(dx) = slot(nodes, adj, *x) {
                    let inv = dx.len() as f64;
                    for d in dx.iter_mut() {
                        *d += sign * g[0] / inv;
                    }
                }
            }
            Op::Reshape { x } => {
                if let Some(dx) = slot(nodes, adj, *x) {
                    for (d, gv) in dx.iter_mut().zip(g) {
                        *d += sign * gv;
                    }
                }
            }
        }
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests;
