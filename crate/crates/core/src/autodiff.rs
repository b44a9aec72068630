//! Minimal reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records primitive operations in execution order; [`Var`]
//! handles index into it. Calling [`Var::backward`] on a scalar walks the
//! record in reverse, applying each primitive's vector–Jacobian rule and
//! accumulating gradients additively, so using a value twice yields the sum
//! of both paths. Trainable tensors live outside the tape as [`Param`]s;
//! registering one on a tape (via [`Tape::param`]) makes backward deposit
//! its gradient into the parameter's persistent buffer.
//!
//! Everything is 64-bit: the finite-difference checks this engine is held to
//! (see [`grad_check`]) are not reliable in single precision.
//!
//! Shape rules: mismatched shapes in primitive calls are programming errors
//! and panic with the offending dimensions. Fallible validation belongs to
//! the layer and model constructors that assemble these primitives.

use std::cell::{Ref, RefCell, RefMut};
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dense::DenseMat;
use crate::error::{Error, Result};
use crate::sparse::SparseSym;

/// Row-to-group membership for block-diagonal batches.
///
/// Segment ids must be non-decreasing, start at 0, and have no gaps; every
/// group therefore owns one non-empty, contiguous row range.
#[derive(Clone, Debug, PartialEq)]
pub struct Segments {
    seg: Vec<usize>,
    bounds: Vec<(usize, usize)>,
}

impl Segments {
    pub fn new(seg: Vec<usize>) -> Result<Self> {
        if seg.is_empty() {
            return Err(Error::EmptySegment { segment: 0 });
        }
        if seg[0] != 0 {
            return Err(Error::InvalidSparse("segment ids must start at 0".into()));
        }
        let mut bounds = Vec::new();
        let mut start = 0;
        for i in 1..=seg.len() {
            if i == seg.len() || seg[i] != seg[start] {
                bounds.push((start, i));
                if i < seg.len() {
                    if seg[i] != seg[start] + 1 {
                        return Err(Error::InvalidSparse(format!(
                            "segment ids must be contiguous: {} follows {}",
                            seg[i], seg[start]
                        )));
                    }
                    start = i;
                }
            }
        }
        Ok(Segments { seg, bounds })
    }

    /// Build from consecutive group sizes.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        for (g, &s) in sizes.iter().enumerate() {
            if s == 0 {
                return Err(Error::EmptySegment { segment: g });
            }
        }
        let seg: Vec<usize> = sizes
            .iter()
            .enumerate()
            .flat_map(|(g, &s)| std::iter::repeat(g).take(s))
            .collect();
        Segments::new(seg)
    }

    pub fn n_rows(&self) -> usize {
        self.seg.len()
    }

    pub fn n_groups(&self) -> usize {
        self.bounds.len()
    }

    /// Half-open row range `[start, end)` of group `g`.
    pub fn bounds(&self, g: usize) -> (usize, usize) {
        self.bounds[g]
    }

    /// Group owning row `i`.
    pub fn group_of(&self, i: usize) -> usize {
        self.seg[i]
    }

    pub fn ids(&self) -> &[usize] {
        &self.seg
    }
}

/// A named trainable tensor with persistent value and gradient buffers.
///
/// Cloning shares the underlying storage, so optimizers and models can hold
/// the same parameter.
#[derive(Clone)]
pub struct Param {
    inner: Rc<ParamInner>,
}

struct ParamInner {
    name: String,
    value: RefCell<DenseMat>,
    grad: RefCell<DenseMat>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: DenseMat) -> Param {
        let grad = DenseMat::zeros(value.rows, value.cols);
        Param {
            inner: Rc::new(ParamInner {
                name: name.into(),
                value: RefCell::new(value),
                grad: RefCell::new(grad),
            }),
        }
    }

    pub fn name(&self) -> &str {
        &self.inner.name
    }

    pub fn value(&self) -> Ref<'_, DenseMat> {
        self.inner.value.borrow()
    }

    pub fn value_mut(&self) -> RefMut<'_, DenseMat> {
        self.inner.value.borrow_mut()
    }

    pub fn grad(&self) -> Ref<'_, DenseMat> {
        self.inner.grad.borrow()
    }

    pub fn grad_mut(&self) -> RefMut<'_, DenseMat> {
        self.inner.grad.borrow_mut()
    }

    pub fn zero_grad(&self) {
        for g in self.grad_mut().data.iter_mut() {
            *g = 0.0;
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().shape()
    }

    pub fn numel(&self) -> usize {
        let (r, c) = self.shape();
        r * c
    }

    /// Two handles are the same parameter iff they share storage.
    pub fn same_as(&self, other: &Param) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

impl std::fmt::Debug for Param {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (r, c) = self.shape();
        write!(f, "Param({} {r}x{c})", self.name())
    }
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    /// Per-group product of an `n × n` block-diagonal left factor with row
    /// blocks of the right factor; off-block entries are treated as (and
    /// receive gradient) zero.
    BlockMatMul {
        a: usize,
        b: usize,
        segments: Rc<Segments>,
    },
    /// Product of a constant sparse symmetric matrix with a tape value.
    SpmmConst {
        s: Rc<SparseSym>,
        x: usize,
    },
    Add(usize, usize),
    Sub(usize, usize),
    ElementwiseMul(usize, usize),
    ScalarMul(usize, f64),
    /// Add a `1 × c` bias row to every row of x.
    AddRowBroadcast {
        x: usize,
        bias: usize,
    },
    Transpose(usize),
    ConcatCols(Vec<usize>),
    SliceCols {
        x: usize,
        start: usize,
    },
    Tanh(usize),
    Relu(usize),
    /// `x ↦ x^{−1/2}` with the convention `0 ↦ 0` (and gradient 0 there).
    RsqrtOrZero(usize),
    /// Row-wise softmax restricted to each row's own segment columns;
    /// entries outside the segment are exactly zero.
    SoftmaxRowsMasked {
        x: usize,
        segments: Rc<Segments>,
    },
    /// Per-group, per-column maximum over rows. Ties route the gradient to
    /// the lowest row index, recorded in `argmax` (group-major, then column).
    RowMaxPoolSegmented {
        x: usize,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: DenseMat,
        inv_std: Vec<f64>,
        train: bool,
    },
    /// Inverted-scaling dropout; mask entries are 0 or 1/(1−p).
    Dropout {
        x: usize,
        mask: Vec<f64>,
    },
    /// Rows of `[xᵢ | xⱼ]` for every ordered within-group pair (i, j),
    /// groups in order, i outer, j inner.
    PairConcat {
        x: usize,
        segments: Rc<Segments>,
    },
    /// Inverse layout of `PairConcat` scores: an `M × 1` column scattered
    /// into an `n × n` matrix with zeros across groups.
    PairScatter {
        scores: usize,
        segments: Rc<Segments>,
    },
    /// Per-row softmax cross-entropy against integer targets; output is an
    /// `n × 1` column of losses. `probs` caches the softmax for backward.
    CrossEntropyLogits {
        logits: usize,
        targets: Rc<Vec<usize>>,
        probs: DenseMat,
    },
    Sum(usize),
    Mean(usize),
}

struct Node {
    value: DenseMat,
    op: Op,
    requires_grad: bool,
}

struct TapeInner {
    nodes: Vec<Node>,
    grads: Vec<Option<DenseMat>>,
    params: Vec<(Param, usize)>,
}

/// A record of primitive applications; see the module docs.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// A value recorded on a [`Tape`].
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    idx: usize,
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                grads: Vec::new(),
                params: Vec::new(),
            })),
        }
    }

    fn push(&self, value: DenseMat, op: Op, requires_grad: bool) -> Var {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        inner.grads.push(None);
        Var {
            tape: self.clone(),
            idx: inner.nodes.len() - 1,
        }
    }

    /// Record a constant leaf (no gradient tracked).
    pub fn constant(&self, value: DenseMat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Record a leaf that participates in differentiation.
    pub fn leaf(&self, value: DenseMat, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Register a parameter: a differentiable leaf whose gradient is
    /// deposited into `p` when backward completes.
    pub fn param(&self, p: &Param) -> Var {
        let v = self.push(p.value().clone(), Op::Leaf, true);
        self.inner.borrow_mut().params.push((p.clone(), v.idx));
        v
    }

    fn same_tape(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    fn value_of(&self, idx: usize) -> DenseMat {
        self.inner.borrow().nodes[idx].value.clone()
    }

    fn requires(&self, idx: usize) -> bool {
        self.inner.borrow().nodes[idx].requires_grad
    }

    /// Column-wise concatenation of the given values.
    pub fn concat_cols(&self, parts: &[&Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: empty part list");
        for p in parts {
            assert!(self.same_tape(&p.tape), "concat_cols: vars from another tape");
        }
        let inner = self.inner.borrow();
        let mats: Vec<&DenseMat> = parts.iter().map(|p| &inner.nodes[p.idx].value).collect();
        let value = DenseMat::concat_cols(&mats).expect("concat_cols shapes");
        let requires = parts.iter().any(|p| inner.nodes[p.idx].requires_grad);
        let idxs: Vec<usize> = parts.iter().map(|p| p.idx).collect();
        drop(inner);
        self.push(value, Op::ConcatCols(idxs), requires)
    }

    /// Product of a constant sparse symmetric matrix with `x`.
    pub fn spmm(&self, s: &Rc<SparseSym>, x: &Var) -> Var {
        let value = s.spmm(&x.tape.value_of(x.idx)).expect("spmm shapes");
        self.push(
            value,
            Op::SpmmConst {
                s: Rc::clone(s),
                x: x.idx,
            },
            x.requires_grad(),
        )
    }
}

impl Var {
    pub fn shape(&self) -> (usize, usize) {
        let inner = self.tape.inner.borrow();
        inner.nodes[self.idx].value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(self.idx)
    }

    /// A copy of the recorded value.
    pub fn value(&self) -> DenseMat {
        self.tape.value_of(self.idx)
    }

    /// Read the recorded value without copying.
    pub fn with_value<R>(&self, f: impl FnOnce(&DenseMat) -> R) -> R {
        let inner = self.tape.inner.borrow();
        f(&inner.nodes[self.idx].value)
    }

    /// The value of a 1×1 node.
    pub fn scalar(&self) -> f64 {
        self.with_value(|m| {
            assert_eq!(m.shape(), (1, 1), "scalar() on non-scalar value");
            m.data[0]
        })
    }

    /// Gradient accumulated by the last `backward` call, if any reached it.
    pub fn grad(&self) -> Option<DenseMat> {
        self.tape.inner.borrow().grads[self.idx].clone()
    }

    fn binary(&self, rhs: &Var, op: fn(usize, usize) -> Op, f: fn(&DenseMat, &DenseMat) -> DenseMat) -> Var {
        assert!(self.tape.same_tape(&rhs.tape), "vars from different tapes");
        let inner = self.tape.inner.borrow();
        let a = &inner.nodes[self.idx].value;
        let b = &inner.nodes[rhs.idx].value;
        let value = f(a, b);
        let requires = inner.nodes[self.idx].requires_grad || inner.nodes[rhs.idx].requires_grad;
        drop(inner);
        self.tape.push(value, op(self.idx, rhs.idx), requires)
    }

    /// Matrix product `self · rhs`.
    pub fn matmul(&self, rhs: &Var) -> Var {
        self.binary(rhs, Op::MatMul, |a, b| a.matmul(b).expect("matmul shapes"))
    }

    /// Block-diagonal matrix product: `self` is `n × n`, taken per group.
    ///
    /// Entries of `self` outside the diagonal blocks are ignored and receive
    /// zero gradient; callers must only use this when those entries are
    /// structurally zero (e.g. segment-masked learned adjacencies).
    pub fn block_matmul(&self, rhs: &Var, segments: &Rc<Segments>) -> Var {
        assert!(self.tape.same_tape(&rhs.tape), "vars from different tapes");
        let n = segments.n_rows();
        let inner = self.tape.inner.borrow();
        let a = &inner.nodes[self.idx].value;
        let b = &inner.nodes[rhs.idx].value;
        assert_eq!(a.shape(), (n, n), "block_matmul: left factor must be n×n");
        assert_eq!(b.rows, n, "block_matmul: row count mismatch");
        let mut out = DenseMat::zeros(n, b.cols);
        for g in 0..segments.n_groups() {
            let (s, e) = segments.bounds(g);
            for i in s..e {
                let arow = &a.row(i)[s..e];
                let orow = out.row_mut(i);
                for (off, &av) in arow.iter().enumerate() {
                    if av != 0.0 {
                        let brow = b.row(s + off);
                        for (o, &bv) in orow.iter_mut().zip(brow) {
                            *o += av * bv;
                        }
                    }
                }
            }
        }
        let requires = inner.nodes[self.idx].requires_grad || inner.nodes[rhs.idx].requires_grad;
        drop(inner);
        self.tape.push(
            out,
            Op::BlockMatMul {
                a: self.idx,
                b: rhs.idx,
                segments: Rc::clone(segments),
            },
            requires,
        )
    }

    pub fn add(&self, rhs: &Var) -> Var {
        self.binary(rhs, Op::Add, |a, b| a.add(b).expect("add shapes"))
    }

    pub fn sub(&self, rhs: &Var) -> Var {
        self.binary(rhs, Op::Sub, |a, b| a.sub(b).expect("sub shapes"))
    }

    /// Entrywise product.
    pub fn elementwise_mul(&self, rhs: &Var) -> Var {
        self.binary(rhs, Op::ElementwiseMul, |a, b| {
            a.hadamard(b).expect("elementwise_mul shapes")
        })
    }

    pub fn scalar_mul(&self, c: f64) -> Var {
        let value = self.with_value(|m| m.scale(c));
        self.tape
            .push(value, Op::ScalarMul(self.idx, c), self.requires_grad())
    }

    /// Add a `1 × c` bias row to every row.
    pub fn add_row_broadcast(&self, bias: &Var) -> Var {
        assert!(self.tape.same_tape(&bias.tape), "vars from different tapes");
        let inner = self.tape.inner.borrow();
        let x = &inner.nodes[self.idx].value;
        let b = &inner.nodes[bias.idx].value;
        assert_eq!(b.rows, 1, "bias must be a single row");
        assert_eq!(b.cols, x.cols, "bias width mismatch");
        let mut value = x.clone();
        for i in 0..value.rows {
            for (v, &bb) in value.row_mut(i).iter_mut().zip(&b.data) {
                *v += bb;
            }
        }
        let requires = inner.nodes[self.idx].requires_grad || inner.nodes[bias.idx].requires_grad;
        drop(inner);
        self.tape.push(
            value,
            Op::AddRowBroadcast {
                x: self.idx,
                bias: bias.idx,
            },
            requires,
        )
    }

    pub fn transpose(&self) -> Var {
        let value = self.with_value(|m| m.transpose());
        self.tape
            .push(value, Op::Transpose(self.idx), self.requires_grad())
    }

    /// Columns `start..end` as a new value.
    pub fn slice_cols(&self, start: usize, end: usize) -> Var {
        let value = self.with_value(|m| m.slice_cols(start, end).expect("slice_cols range"));
        self.tape.push(
            value,
            Op::SliceCols { x: self.idx, start },
            self.requires_grad(),
        )
    }

    pub fn tanh(&self) -> Var {
        let value = self.with_value(|m| m.map(f64::tanh));
        self.tape
            .push(value, Op::Tanh(self.idx), self.requires_grad())
    }

    pub fn relu(&self) -> Var {
        let value = self.with_value(|m| m.map(|v| v.max(0.0)));
        self.tape
            .push(value, Op::Relu(self.idx), self.requires_grad())
    }

    /// `x ↦ x^{−1/2}` entrywise, with `0 ↦ 0` (used for degree
    /// normalization where isolated nodes must stay zero).
    pub fn rsqrt_or_zero(&self) -> Var {
        let value = self.with_value(|m| m.map(|v| if v > 0.0 { 1.0 / v.sqrt() } else { 0.0 }));
        self.tape
            .push(value, Op::RsqrtOrZero(self.idx), self.requires_grad())
    }

    /// Row-wise softmax over each row's own segment columns; other entries
    /// are exactly zero. Rows of the result sum to 1 over their segment.
    pub fn softmax_rows_masked(&self, segments: &Rc<Segments>) -> Var {
        let n = segments.n_rows();
        let value = self.with_value(|m| {
            assert_eq!(m.shape(), (n, n), "softmax_rows_masked: expects n×n scores");
            let mut out = DenseMat::zeros(n, n);
            for i in 0..n {
                let (s, e) = segments.bounds(segments.group_of(i));
                let row = m.row(i);
                let mut maxv = f64::NEG_INFINITY;
                for j in s..e {
                    maxv = maxv.max(row[j]);
                }
                let mut total = 0.0;
                for j in s..e {
                    let ev = (row[j] - maxv).exp();
                    out[(i, j)] = ev;
                    total += ev;
                }
                for j in s..e {
                    out[(i, j)] /= total;
                }
            }
            out
        });
        self.tape.push(
            value,
            Op::SoftmaxRowsMasked {
                x: self.idx,
                segments: Rc::clone(segments),
            },
            self.requires_grad(),
        )
    }

    /// Per-group, per-column maximum over rows: one output row per group.
    /// Ties break toward the lowest row index so backward is deterministic.
    pub fn row_max_pool_segmented(&self, segments: &Rc<Segments>) -> Var {
        let (value, argmax) = self.with_value(|m| {
            assert_eq!(m.rows, segments.n_rows(), "row_max_pool: row count mismatch");
            let groups = segments.n_groups();
            let mut out = DenseMat::zeros(groups, m.cols);
            let mut argmax = vec![0usize; groups * m.cols];
            for g in 0..groups {
                let (s, e) = segments.bounds(g);
                for c in 0..m.cols {
                    let mut best_row = s;
                    let mut best = m[(s, c)];
                    for i in (s + 1)..e {
                        let v = m[(i, c)];
                        if v > best {
                            best = v;
                            best_row = i;
                        }
                    }
                    out[(g, c)] = best;
                    argmax[g * m.cols + c] = best_row;
                }
            }
            (out, argmax)
        });
        self.tape.push(
            value,
            Op::RowMaxPoolSegmented {
                x: self.idx,
                argmax,
            },
            self.requires_grad(),
        )
    }

    /// Batch normalization over rows, per column.
    ///
    /// In train mode the batch mean and (biased) variance normalize the
    /// column and the running buffers are updated in place with the given
    /// momentum; in eval mode the running statistics are used, which keeps
    /// eval outputs independent of batch composition.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &self,
        gamma: &Var,
        beta: &Var,
        running_mean: &mut [f64],
        running_var: &mut [f64],
        momentum: f64,
        eps: f64,
        train: bool,
    ) -> Var {
        assert!(self.tape.same_tape(&gamma.tape) && self.tape.same_tape(&beta.tape));
        let inner = self.tape.inner.borrow();
        let x = &inner.nodes[self.idx].value;
        let g = &inner.nodes[gamma.idx].value;
        let b = &inner.nodes[beta.idx].value;
        let c = x.cols;
        assert_eq!(g.shape(), (1, c), "gamma must be 1×cols");
        assert_eq!(b.shape(), (1, c), "beta must be 1×cols");
        assert_eq!(running_mean.len(), c);
        assert_eq!(running_var.len(), c);
        assert!(x.rows > 0, "batch_norm on empty batch");

        let nrows = x.rows as f64;
        let (mean, var): (Vec<f64>, Vec<f64>) = if train {
            let mut mean = vec![0.0; c];
            for i in 0..x.rows {
                for (m, &v) in mean.iter_mut().zip(x.row(i)) {
                    *m += v;
                }
            }
            for m in mean.iter_mut() {
                *m /= nrows;
            }
            let mut var = vec![0.0; c];
            for i in 0..x.rows {
                for ((vv, &v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                    let d = v - m;
                    *vv += d * d;
                }
            }
            for v in var.iter_mut() {
                *v /= nrows;
            }
            for j in 0..c {
                running_mean[j] = (1.0 - momentum) * running_mean[j] + momentum * mean[j];
                running_var[j] = (1.0 - momentum) * running_var[j] + momentum * var[j];
            }
            (mean, var)
        } else {
            (running_mean.to_vec(), running_var.to_vec())
        };

        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = DenseMat::zeros(x.rows, c);
        let mut value = DenseMat::zeros(x.rows, c);
        for i in 0..x.rows {
            for j in 0..c {
                let xh = (x[(i, j)] - mean[j]) * inv_std[j];
                xhat[(i, j)] = xh;
                value[(i, j)] = g.data[j] * xh + b.data[j];
            }
        }
        let requires = inner.nodes[self.idx].requires_grad
            || inner.nodes[gamma.idx].requires_grad
            || inner.nodes[beta.idx].requires_grad;
        drop(inner);
        self.tape.push(
            value,
            Op::BatchNorm {
                x: self.idx,
                gamma: gamma.idx,
                beta: beta.idx,
                xhat,
                inv_std,
                train,
            },
            requires,
        )
    }

    /// Inverted-scaling dropout: each entry is zeroed with probability `p`,
    /// survivors are scaled by `1/(1−p)`. Callers skip this op entirely in
    /// eval mode, which keeps eval deterministic.
    pub fn dropout(&self, p: f64, rng: &mut ChaCha8Rng) -> Var {
        assert!((0.0..1.0).contains(&p), "dropout probability must be in [0, 1)");
        if p == 0.0 {
            // Record a pass-through so gradients still flow one-to-one.
            return self.scalar_mul(1.0);
        }
        let scale = 1.0 / (1.0 - p);
        let (value, mask) = self.with_value(|m| {
            let mask: Vec<f64> = (0..m.data.len())
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { scale })
                .collect();
            let mut value = m.clone();
            for (v, &k) in value.data.iter_mut().zip(&mask) {
                *v *= k;
            }
            (value, mask)
        });
        self.tape.push(
            value,
            Op::Dropout { x: self.idx, mask },
            self.requires_grad(),
        )
    }

    /// Per-row softmax cross-entropy against integer class targets; output
    /// is an `n × 1` column of losses, `loss_i = lse(logits_i) − logit_{i,tᵢ}`.
    pub fn cross_entropy_with_logits(&self, targets: &[usize]) -> Var {
        let (value, probs) = self.with_value(|m| {
            assert_eq!(m.rows, targets.len(), "one target per logit row");
            for &t in targets {
                assert!(t < m.cols, "target class {t} out of range");
            }
            let mut probs = DenseMat::zeros(m.rows, m.cols);
            let mut losses = DenseMat::zeros(m.rows, 1);
            for i in 0..m.rows {
                let row = m.row(i);
                let maxv = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let mut total = 0.0;
                for (j, &v) in row.iter().enumerate() {
                    let e = (v - maxv).exp();
                    probs[(i, j)] = e;
                    total += e;
                }
                for j in 0..m.cols {
                    probs[(i, j)] /= total;
                }
                losses[(i, 0)] = total.ln() + maxv - row[targets[i]];
            }
            (losses, probs)
        });
        self.tape.push(
            value,
            Op::CrossEntropyLogits {
                logits: self.idx,
                targets: Rc::new(targets.to_vec()),
                probs,
            },
            self.requires_grad(),
        )
    }

    /// Sum of all entries, as a 1×1 value.
    pub fn sum(&self) -> Var {
        let value = self.with_value(|m| {
            DenseMat::from_vec(1, 1, vec![m.data.iter().sum()]).expect("1x1")
        });
        self.tape
            .push(value, Op::Sum(self.idx), self.requires_grad())
    }

    /// Mean of all entries, as a 1×1 value.
    pub fn mean(&self) -> Var {
        let value = self.with_value(|m| {
            assert!(!m.data.is_empty(), "mean of empty value");
            let s: f64 = m.data.iter().sum();
            DenseMat::from_vec(1, 1, vec![s / m.data.len() as f64]).expect("1x1")
        });
        self.tape
            .push(value, Op::Mean(self.idx), self.requires_grad())
    }

    /// Run reverse-mode differentiation from this scalar.
    ///
    /// Afterwards every reachable differentiable node holds `∂self/∂node`
    /// (readable via [`Var::grad`]) and every registered [`Param`] has its
    /// gradient buffer incremented.
    pub fn backward(&self) -> Result<()> {
        if self.shape() != (1, 1) {
            return Err(Error::DimMismatch {
                op: "backward",
                details: format!("loss must be 1×1, got {}×{}", self.shape().0, self.shape().1),
            });
        }
        let mut inner = self.tape.inner.borrow_mut();
        let inner = &mut *inner;
        let nodes = &inner.nodes;
        let grads = &mut inner.grads;
        for g in grads.iter_mut() {
            *g = None;
        }
        grads[self.idx] = Some(DenseMat::from_vec(1, 1, vec![1.0]).expect("1x1"));

        // Accumulate `delta` into the gradient of node `idx` (skipping nodes
        // that do not require grad keeps the backward pass lean).
        fn accum(grads: &mut [Option<DenseMat>], nodes: &[Node], idx: usize, delta: &DenseMat) {
            if !nodes[idx].requires_grad {
                return;
            }
            match &mut grads[idx] {
                Some(g) => g.add_assign_scaled(delta, 1.0),
                slot => {
                    *slot = Some(delta.clone());
                }
            }
        }

        for idx in (0..=self.idx).rev() {
            if !nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &nodes[idx].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if nodes[*a].requires_grad {
                        let da = g.matmul_a_bt(&nodes[*b].value).expect("shape");
                        accum(grads, nodes, *a, &da);
                    }
                    if nodes[*b].requires_grad {
                        let db = nodes[*a].value.matmul_at_b(&g).expect("shape");
                        accum(grads, nodes, *b, &db);
                    }
                }
                Op::BlockMatMul { a, b, segments } => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    if nodes[*a].requires_grad {
                        let mut da = DenseMat::zeros(av.rows, av.cols);
                        for gr in 0..segments.n_groups() {
                            let (s, e) = segments.bounds(gr);
                            for i in s..e {
                                let grow = g.row(i);
                                let darow = da.row_mut(i);
                                for j in s..e {
                                    let brow = bv.row(j);
                                    let mut acc = 0.0;
                                    for (&gg, &bb) in grow.iter().zip(brow) {
                                        acc += gg * bb;
                                    }
                                    darow[j] = acc;
                                }
                            }
                        }
                        accum(grads, nodes, *a, &da);
                    }
                    if nodes[*b].requires_grad {
                        let mut db = DenseMat::zeros(bv.rows, bv.cols);
                        for gr in 0..segments.n_groups() {
                            let (s, e) = segments.bounds(gr);
                            for i in s..e {
                                let arow = &av.row(i)[s..e];
                                let grow = g.row(i);
                                for (off, &av_ij) in arow.iter().enumerate() {
                                    if av_ij != 0.0 {
                                        let dbrow = db.row_mut(s + off);
                                        for (d, &gg) in dbrow.iter_mut().zip(grow) {
                                            *d += av_ij * gg;
                                        }
                                    }
                                }
                            }
                        }
                        accum(grads, nodes, *b, &db);
                    }
                }
                Op::SpmmConst { s, x } => {
                    // s is symmetric, so sᵀ g = s g.
                    let dx = s.spmm(&g).expect("shape");
                    accum(grads, nodes, *x, &dx);
                }
                Op::Add(a, b) => {
                    accum(grads, nodes, *a, &g);
                    accum(grads, nodes, *b, &g);
                }
                Op::Sub(a, b) => {
                    accum(grads, nodes, *a, &g);
                    if nodes[*b].requires_grad {
                        let neg = g.scale(-1.0);
                        accum(grads, nodes, *b, &neg);
                    }
                }
                Op::ElementwiseMul(a, b) => {
                    if nodes[*a].requires_grad {
                        let da = g.hadamard(&nodes[*b].value).expect("shape");
                        accum(grads, nodes, *a, &da);
                    }
                    if nodes[*b].requires_grad {
                        let db = g.hadamard(&nodes[*a].value).expect("shape");
                        accum(grads, nodes, *b, &db);
                    }
                }
                Op::ScalarMul(a, c) => {
                    let da = g.scale(*c);
                    accum(grads, nodes, *a, &da);
                }
                Op::AddRowBroadcast { x, bias } => {
                    accum(grads, nodes, *x, &g);
                    if nodes[*bias].requires_grad {
                        let mut db = DenseMat::zeros(1, g.cols);
                        for i in 0..g.rows {
                            for (d, &gg) in db.data.iter_mut().zip(g.row(i)) {
                                *d += gg;
                            }
                        }
                        accum(grads, nodes, *bias, &db);
                    }
                }
                Op::Transpose(a) => {
                    let da = g.transpose();
                    accum(grads, nodes, *a, &da);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = nodes[p].value.cols;
                        if nodes[p].requires_grad {
                            let dp = g.slice_cols(at, at + w).expect("range");
                            accum(grads, nodes, p, &dp);
                        }
                        at += w;
                    }
                }
                Op::SliceCols { x, start } => {
                    let xv = &nodes[*x].value;
                    let mut dx = DenseMat::zeros(xv.rows, xv.cols);
                    for i in 0..g.rows {
                        dx.row_mut(i)[*start..*start + g.cols].copy_from_slice(g.row(i));
                    }
                    accum(grads, nodes, *x, &dx);
                }
                Op::Tanh(a) => {
                    let y = &nodes[idx].value;
                    let da = DenseMat {
                        rows: g.rows,
                        cols: g.cols,
                        data: g
                            .data
                            .iter()
                            .zip(&y.data)
                            .map(|(&gg, &yy)| gg * (1.0 - yy * yy))
                            .collect(),
                    };
                    accum(grads, nodes, *a, &da);
                }
                Op::Relu(a) => {
                    let y = &nodes[idx].value;
                    let da = DenseMat {
                        rows: g.rows,
                        cols: g.cols,
                        data: g
                            .data
                            .iter()
                            .zip(&y.data)
                            .map(|(&gg, &yy)| if yy > 0.0 { gg } else { 0.0 })
                            .collect(),
                    };
                    accum(grads, nodes, *a, &da);
                }
                Op::RsqrtOrZero(a) => {
                    // y = x^{−1/2} ⇒ dy/dx = −y³/2; zero where clamped.
                    let y = &nodes[idx].value;
                    let da = DenseMat {
                        rows: g.rows,
                        cols: g.cols,
                        data: g
                            .data
                            .iter()
                            .zip(&y.data)
                            .map(|(&gg, &yy)| -0.5 * yy * yy * yy * gg)
                            .collect(),
                    };
                    accum(grads, nodes, *a, &da);
                }
                Op::SoftmaxRowsMasked { x, segments } => {
                    let y = &nodes[idx].value;
                    let mut dx = DenseMat::zeros(y.rows, y.cols);
                    for i in 0..y.rows {
                        let (s, e) = segments.bounds(segments.group_of(i));
                        let yrow = y.row(i);
                        let grow = g.row(i);
                        let mut dot = 0.0;
                        for j in s..e {
                            dot += grow[j] * yrow[j];
                        }
                        let drow = dx.row_mut(i);
                        for j in s..e {
                            drow[j] = yrow[j] * (grow[j] - dot);
                        }
                    }
                    accum(grads, nodes, *x, &dx);
                }
                Op::RowMaxPoolSegmented { x, argmax } => {
                    let xv = &nodes[*x].value;
                    let mut dx = DenseMat::zeros(xv.rows, xv.cols);
                    for gr in 0..g.rows {
                        for c in 0..g.cols {
                            dx[(argmax[gr * g.cols + c], c)] += g[(gr, c)];
                        }
                    }
                    accum(grads, nodes, *x, &dx);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    train,
                } => {
                    let c = g.cols;
                    let nrows = g.rows as f64;
                    if nodes[*beta].requires_grad {
                        let mut db = DenseMat::zeros(1, c);
                        for i in 0..g.rows {
                            for (d, &gg) in db.data.iter_mut().zip(g.row(i)) {
                                *d += gg;
                            }
                        }
                        accum(grads, nodes, *beta, &db);
                    }
                    if nodes[*gamma].requires_grad {
                        let mut dg = DenseMat::zeros(1, c);
                        for i in 0..g.rows {
                            for j in 0..c {
                                dg.data[j] += g[(i, j)] * xhat[(i, j)];
                            }
                        }
                        accum(grads, nodes, *gamma, &dg);
                    }
                    if nodes[*x].requires_grad {
                        let gv = &nodes[*gamma].value;
                        let mut dx = DenseMat::zeros(g.rows, c);
                        if *train {
                            // Batch statistics depend on x: the usual
                            // three-term rule per column.
                            let mut gsum = vec![0.0; c];
                            let mut gxhat = vec![0.0; c];
                            for i in 0..g.rows {
                                for j in 0..c {
                                    gsum[j] += g[(i, j)];
                                    gxhat[j] += g[(i, j)] * xhat[(i, j)];
                                }
                            }
                            for i in 0..g.rows {
                                for j in 0..c {
                                    dx[(i, j)] = gv.data[j] * inv_std[j]
                                        * (g[(i, j)]
                                            - gsum[j] / nrows
                                            - xhat[(i, j)] * gxhat[j] / nrows);
                                }
                            }
                        } else {
                            for i in 0..g.rows {
                                for j in 0..c {
                                    dx[(i, j)] = g[(i, j)] * gv.data[j] * inv_std[j];
                                }
                            }
                        }
                        accum(grads, nodes, *x, &dx);
                    }
                }
                Op::Dropout { x, mask } => {
                    let da = DenseMat {
                        rows: g.rows,
                        cols: g.cols,
                        data: g.data.iter().zip(mask).map(|(&gg, &m)| gg * m).collect(),
                    };
                    accum(grads, nodes, *x, &da);
                }
                Op::PairConcat { x, segments } => {
                    let xv = &nodes[*x].value;
                    let f = xv.cols;
                    let mut dx = DenseMat::zeros(xv.rows, f);
                    let mut r = 0;
                    for gr in 0..segments.n_groups() {
                        let (s, e) = segments.bounds(gr);
                        for i in s..e {
                            for j in s..e {
                                let grow = g.row(r);
                                let di = dx.row_mut(i);
                                for (d, &gg) in di.iter_mut().zip(&grow[..f]) {
                                    *d += gg;
                                }
                                let dj = dx.row_mut(j);
                                for (d, &gg) in dj.iter_mut().zip(&grow[f..]) {
                                    *d += gg;
                                }
                                r += 1;
                            }
                        }
                    }
                    accum(grads, nodes, *x, &dx);
                }
                Op::PairScatter { scores, segments } => {
                    let m = nodes[*scores].value.rows;
                    let mut ds = DenseMat::zeros(m, 1);
                    let mut r = 0;
                    for gr in 0..segments.n_groups() {
                        let (s, e) = segments.bounds(gr);
                        for i in s..e {
                            for j in s..e {
                                ds[(r, 0)] = g[(i, j)];
                                r += 1;
                            }
                        }
                    }
                    accum(grads, nodes, *scores, &ds);
                }
                Op::CrossEntropyLogits {
                    logits,
                    targets,
                    probs,
                } => {
                    let mut dl = probs.clone();
                    for (i, &t) in targets.iter().enumerate() {
                        dl[(i, t)] -= 1.0;
                        let gi = g[(i, 0)];
                        for v in dl.row_mut(i) {
                            *v *= gi;
                        }
                    }
                    accum(grads, nodes, *logits, &dl);
                }
                Op::Sum(a) => {
                    let xv = &nodes[*a].value;
                    let da = DenseMat::filled(xv.rows, xv.cols, g.data[0]);
                    accum(grads, nodes, *a, &da);
                }
                Op::Mean(a) => {
                    let xv = &nodes[*a].value;
                    let da = DenseMat::filled(xv.rows, xv.cols, g.data[0] / xv.data.len() as f64);
                    accum(grads, nodes, *a, &da);
                }
            }
            grads[idx] = Some(g);
        }

        for (param, node_idx) in &inner.params {
            if let Some(g) = &grads[*node_idx] {
                param.grad_mut().add_assign_scaled(g, 1.0);
            }
        }
        Ok(())
    }
}

/// Rows of `[xᵢ | xⱼ]` for every ordered within-group pair `(i, j)`:
/// groups in order, `i` outer, `j` inner. Output is `Σ n_g² × 2f`.
pub fn pair_concat(x: &Var, segments: &Rc<Segments>) -> Var {
    let (value, requires) = {
        let inner = x.tape.inner.borrow();
        let xv = &inner.nodes[x.idx].value;
        assert_eq!(xv.rows, segments.n_rows(), "pair_concat: row count mismatch");
        let f = xv.cols;
        let m: usize = (0..segments.n_groups())
            .map(|g| {
                let (s, e) = segments.bounds(g);
                (e - s) * (e - s)
            })
            .sum();
        let mut out = DenseMat::zeros(m, 2 * f);
        let mut r = 0;
        for g in 0..segments.n_groups() {
            let (s, e) = segments.bounds(g);
            for i in s..e {
                for j in s..e {
                    let orow = out.row_mut(r);
                    orow[..f].copy_from_slice(xv.row(i));
                    orow[f..].copy_from_slice(xv.row(j));
                    r += 1;
                }
            }
        }
        (out, inner.nodes[x.idx].requires_grad)
    };
    x.tape.push(
        value,
        Op::PairConcat {
            x: x.idx,
            segments: Rc::clone(segments),
        },
        requires,
    )
}

/// Scatter an `M × 1` column of pair scores (the `pair_concat` row order)
/// into an `n × n` matrix; cross-group entries are exactly zero.
pub fn pair_scatter(scores: &Var, segments: &Rc<Segments>) -> Var {
    let n = segments.n_rows();
    let (value, requires) = {
        let inner = scores.tape.inner.borrow();
        let sv = &inner.nodes[scores.idx].value;
        let m: usize = (0..segments.n_groups())
            .map(|g| {
                let (s, e) = segments.bounds(g);
                (e - s) * (e - s)
            })
            .sum();
        assert_eq!(sv.shape(), (m, 1), "pair_scatter: expects M×1 scores");
        let mut out = DenseMat::zeros(n, n);
        let mut r = 0;
        for g in 0..segments.n_groups() {
            let (s, e) = segments.bounds(g);
            for i in s..e {
                for j in s..e {
                    out[(i, j)] = sv[(r, 0)];
                    r += 1;
                }
            }
        }
        (out, inner.nodes[scores.idx].requires_grad)
    };
    scores.tape.push(
        value,
        Op::PairScatter {
            scores: scores.idx,
            segments: Rc::clone(segments),
        },
        requires,
    )
}

/// Compare tape gradients against central finite differences.
///
/// `loss_fn` must rebuild the computation (deterministically) from the
/// current parameter values and return the scalar loss node. For each
/// parameter, up to `max_coords_per_param` coordinates are perturbed by
/// `±eps` (all of them when the parameter is small enough); the returned
/// value is the worst relative error
/// `|analytic − numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<F>(
    mut loss_fn: F,
    params: &[Param],
    eps: f64,
    max_coords_per_param: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64>
where
    F: FnMut() -> Result<Var>,
{
    for p in params {
        p.zero_grad();
    }
    let loss = loss_fn()?;
    loss.backward()?;
    let analytic: Vec<DenseMat> = params.iter().map(|p| p.grad().clone()).collect();

    let mut worst: f64 = 0.0;
    for (pi, p) in params.iter().enumerate() {
        let n = p.numel();
        let coords: Vec<usize> = if n <= max_coords_per_param {
            (0..n).collect()
        } else {
            rand::seq::index::sample(rng, n, max_coords_per_param).into_vec()
        };
        for c in coords {
            let orig = p.value().data[c];
            p.value_mut().data[c] = orig + eps;
            let up = loss_fn()?.scalar();
            p.value_mut().data[c] = orig - eps;
            let down = loss_fn()?.scalar();
            p.value_mut().data[c] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[pi].data[c];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
