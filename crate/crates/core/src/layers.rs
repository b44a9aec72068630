//! Graph convolution layers, relation fusion, and learned edges.
//!
//! A convolution layer filters node features with Chebyshev polynomials of
//! each relation's rescaled Laplacian and fuses the per-relation results
//! into one output. The supported fusion methods, with their trainable
//! parameter counts (bias terms excluded; `f` input features, `K` filter
//! order, `R` relations, `C` projection width, `o` output features):
//!
//! | method            | combination                                  | parameters      |
//! |-------------------|----------------------------------------------|-----------------|
//! | `single`          | one relation, `X̄Θ`                           | `f·K·o`         |
//! | `concat`          | `[X̄⁽¹⁾ | … | X̄⁽ᴿ⁾] Θ`                        | `f·K·R·o`       |
//! | `2d`              | product basis `Tᵢ(L̃⁽ᵃ⁾)Tⱼ(L̃⁽ᵇ⁾)X`, `R = 2`   | `f·K²·o`        |
//! | `multiply`        | `(f₁ ⊙ … ⊙ f_R) Θ`, `f_r = tanh(X̄⁽ʳ⁾W_r+b_r)` | `C(f·K·R + o)` |
//! | `sum`             | `(f₁ + … + f_R) Θ`                            | `C(f·K·R + o)` |
//! | `multiply_shared` | as `multiply` with one shared `W, b`          | `C(f·K + o)`    |
//! | `sum_shared`      | as `sum` with one shared `W, b`               | `C(f·K + o)`    |
//!
//! Relations may be fixed (a sparse rescaled Laplacian built from dataset
//! edges) or learned end-to-end by an [`EdgeLearner`], which scores every
//! within-graph node pair with a small MLP, normalizes scores row-wise with
//! a softmax over each node's own graph, and symmetrizes. Gradients flow
//! through the learned adjacency's degree normalization back into the MLP.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{pair_concat, pair_scatter, Param, Segments, Tape, Var};
use crate::dense::DenseMat;
use crate::error::{Error, Result};
use crate::sparse::SparseSym;

/// How a convolution layer combines its relations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMethod {
    /// One relation only; the plain Chebyshev filter.
    Single,
    /// Concatenate the per-relation Chebyshev bases.
    Concat,
    /// Two-dimensional Chebyshev product basis over exactly two relations.
    #[serde(rename = "2d")]
    TwoDCheb,
    /// Elementwise product of per-relation projections.
    Multiply,
    /// Sum of per-relation projections.
    Sum,
    /// `Multiply` with one projection shared across relations.
    MultiplyShared,
    /// `Sum` with one projection shared across relations.
    SumShared,
}

impl FusionMethod {
    /// All methods, in documentation order.
    pub fn all() -> [FusionMethod; 7] {
        [
            FusionMethod::Single,
            FusionMethod::Concat,
            FusionMethod::TwoDCheb,
            FusionMethod::Multiply,
            FusionMethod::Sum,
            FusionMethod::MultiplyShared,
            FusionMethod::SumShared,
        ]
    }

    /// Whether the method projects each relation through `tanh(X̄W + b)`.
    pub fn uses_projections(self) -> bool {
        matches!(
            self,
            FusionMethod::Multiply
                | FusionMethod::Sum
                | FusionMethod::MultiplyShared
                | FusionMethod::SumShared
        )
    }

    /// Whether projection weights are shared across relations.
    pub fn shares_projection(self) -> bool {
        matches!(self, FusionMethod::MultiplyShared | FusionMethod::SumShared)
    }

    /// The relation-count constraint: `(min, max)` inclusive, `None` = any.
    fn relation_bounds(self) -> (usize, Option<usize>) {
        match self {
            FusionMethod::Single => (1, Some(1)),
            FusionMethod::TwoDCheb => (2, Some(2)),
            _ => (1, None),
        }
    }

    fn check_relations(self, got: usize) -> Result<()> {
        let (lo, hi) = self.relation_bounds();
        let ok = got >= lo && hi.is_none_or(|h| got <= h);
        if ok {
            return Ok(());
        }
        let expected = match (lo, hi) {
            (lo, Some(hi)) if lo == hi => format!("exactly {lo}"),
            (lo, Some(hi)) => format!("{lo} to {hi}"),
            (lo, None) => format!("at least {lo}"),
        };
        Err(Error::RelationCount {
            fusion: self.to_string(),
            expected,
            got,
        })
    }
}

impl fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FusionMethod::Single => "single",
            FusionMethod::Concat => "concat",
            FusionMethod::TwoDCheb => "2d",
            FusionMethod::Multiply => "multiply",
            FusionMethod::Sum => "sum",
            FusionMethod::MultiplyShared => "multiply_shared",
            FusionMethod::SumShared => "sum_shared",
        };
        f.write_str(s)
    }
}

impl FromStr for FusionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<FusionMethod> {
        match s {
            "single" => Ok(FusionMethod::Single),
            "concat" => Ok(FusionMethod::Concat),
            "2d" => Ok(FusionMethod::TwoDCheb),
            "multiply" => Ok(FusionMethod::Multiply),
            "sum" => Ok(FusionMethod::Sum),
            "multiply_shared" => Ok(FusionMethod::MultiplyShared),
            "sum_shared" => Ok(FusionMethod::SumShared),
            other => Err(Error::Config {
                key: "fusion".into(),
                reason: format!(
                    "unknown fusion `{other}` (expected one of: single, concat, 2d, \
                     multiply, sum, multiply_shared, sum_shared)"
                ),
            }),
        }
    }
}

/// A relation's rescaled Laplacian: either a fixed sparse operator or a
/// dense value on the tape (for learned edges, so gradients pass through).
#[derive(Clone)]
pub enum LapRef<'a> {
    Fixed(&'a Rc<SparseSym>),
    Learned(&'a Var),
}

fn apply_lap(tape: &Tape, lap: &LapRef<'_>, x: &Var, segments: &Rc<Segments>) -> Var {
    match lap {
        LapRef::Fixed(s) => tape.spmm(s, x),
        LapRef::Learned(l) => l.block_matmul(x, segments),
    }
}

/// The Chebyshev tower `[T₀(L̃)x, …, T_{K−1}(L̃)x]` via the three-term
/// recurrence `T_k = 2 L̃ T_{k−1} − T_{k−2}`, recorded on the tape.
fn cheb_tower(tape: &Tape, lap: &LapRef<'_>, x: &Var, k: usize, segments: &Rc<Segments>) -> Vec<Var> {
    let mut blocks = Vec::with_capacity(k);
    blocks.push(x.clone());
    if k > 1 {
        blocks.push(apply_lap(tape, lap, x, segments));
    }
    for i in 2..k {
        let t = apply_lap(tape, lap, &blocks[i - 1], segments)
            .scalar_mul(2.0)
            .sub(&blocks[i - 2]);
        blocks.push(t);
    }
    blocks
}

/// Glorot-uniform initialization: entries drawn from
/// `±√(6 / (fan_in + fan_out))`.
pub fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMat {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    DenseMat {
        rows,
        cols,
        data: (0..rows * cols)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
            .collect(),
    }
}

/// One spectral graph convolution layer.
pub struct ConvLayer {
    pub fusion: FusionMethod,
    pub k_order: usize,
    pub in_features: usize,
    pub out_features: usize,
    pub n_relations: usize,
    /// Filter matrix Θ (no bias; normalization layers follow every conv).
    theta: Param,
    /// Per-relation projections `(W_r, b_r)`; one shared pair for the
    /// `*_shared` methods, empty when the method does not project.
    projections: Vec<(Param, Param)>,
}

impl ConvLayer {
    /// Create a layer with Glorot-initialized weights and zero biases.
    /// `proj_width` is the projection size `C`, used only by the
    /// projection-based fusion methods. Parameters are named under `prefix`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        prefix: &str,
        fusion: FusionMethod,
        k_order: usize,
        in_features: usize,
        out_features: usize,
        n_relations: usize,
        proj_width: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<ConvLayer> {
        if k_order == 0 {
            return Err(Error::Config {
                key: "k_order".into(),
                reason: "filter order must be at least 1".into(),
            });
        }
        fusion.check_relations(n_relations)?;

        let basis_width = in_features * k_order;
        let (theta_rows, n_proj) = match fusion {
            FusionMethod::Single => (basis_width, 0),
            FusionMethod::Concat => (basis_width * n_relations, 0),
            FusionMethod::TwoDCheb => (in_features * k_order * k_order, 0),
            FusionMethod::Multiply | FusionMethod::Sum => (proj_width, n_relations),
            FusionMethod::MultiplyShared | FusionMethod::SumShared => (proj_width, 1),
        };
        if fusion.uses_projections() && proj_width == 0 {
            return Err(Error::Config {
                key: "proj_hidden".into(),
                reason: "projection width must be at least 1".into(),
            });
        }

        let theta = Param::new(
            format!("{prefix}.theta"),
            glorot(theta_rows, out_features, rng),
        );
        let projections = (0..n_proj)
            .map(|r| {
                let w = Param::new(
                    format!("{prefix}.proj{r}.w"),
                    glorot(basis_width, proj_width, rng),
                );
                let b = Param::new(format!("{prefix}.proj{r}.b"), DenseMat::zeros(1, proj_width));
                (w, b)
            })
            .collect();

        Ok(ConvLayer {
            fusion,
            k_order,
            in_features,
            out_features,
            n_relations,
            theta,
            projections,
        })
    }

    /// Trainable parameters as `(param, weight_decay_applies)`: decay is
    /// applied to weight matrices, never to biases.
    pub fn params(&self) -> Vec<(Param, bool)> {
        let mut out = vec![(self.theta.clone(), true)];
        for (w, b) in &self.projections {
            out.push((w.clone(), true));
            out.push((b.clone(), false));
        }
        out
    }

    /// Trainable scalar count excluding bias terms.
    pub fn param_count(&self) -> usize {
        self.theta.numel() + self.projections.iter().map(|(w, _)| w.numel()).sum::<usize>()
    }

    /// Filter the node features `x` (`n × in_features`) with every
    /// relation's Laplacian and fuse into an `n × out_features` output.
    pub fn forward(
        &self,
        tape: &Tape,
        laps: &[LapRef<'_>],
        x: &Var,
        segments: &Rc<Segments>,
    ) -> Result<Var> {
        self.fusion.check_relations(laps.len())?;
        if laps.len() != self.n_relations {
            return Err(Error::RelationCount {
                fusion: self.fusion.to_string(),
                expected: format!("exactly {} (layer was built for that many)", self.n_relations),
                got: laps.len(),
            });
        }
        let (rows, cols) = x.shape();
        if cols != self.in_features || rows != segments.n_rows() {
            return Err(Error::DimMismatch {
                op: "conv_forward",
                details: format!(
                    "features are {rows}×{cols}, layer expects {}×{}",
                    segments.n_rows(),
                    self.in_features
                ),
            });
        }

        let k = self.k_order;
        let theta = tape.param(&self.theta);
        let fused = match self.fusion {
            FusionMethod::Single => {
                let tower = cheb_tower(tape, &laps[0], x, k, segments);
                concat_tower(tape, &tower)
            }
            FusionMethod::Concat => {
                let mut parts = Vec::with_capacity(self.n_relations);
                for lap in laps {
                    parts.push(concat_tower(tape, &cheb_tower(tape, lap, x, k, segments)));
                }
                let refs: Vec<&Var> = parts.iter().collect();
                tape.concat_cols(&refs)
            }
            FusionMethod::TwoDCheb => {
                // Product basis block (i, j) = Tᵢ(L̃⁽ᵃ⁾) Tⱼ(L̃⁽ᵇ⁾) x, laid out
                // row-major: i outer, j inner.
                let inner = cheb_tower(tape, &laps[1], x, k, segments);
                let mut grid: Vec<Option<Var>> = vec![None; k * k];
                for (j, tj) in inner.iter().enumerate() {
                    let outer = cheb_tower(tape, &laps[0], tj, k, segments);
                    for (i, block) in outer.into_iter().enumerate() {
                        grid[i * k + j] = Some(block);
                    }
                }
                let blocks: Vec<Var> = grid.into_iter().map(|b| b.expect("filled")).collect();
                concat_tower(tape, &blocks)
            }
            FusionMethod::Multiply | FusionMethod::Sum
            | FusionMethod::MultiplyShared | FusionMethod::SumShared => {
                let shared = self.fusion.shares_projection();
                let multiply = matches!(
                    self.fusion,
                    FusionMethod::Multiply | FusionMethod::MultiplyShared
                );
                let proj_vars: Vec<(Var, Var)> = self
                    .projections
                    .iter()
                    .map(|(w, b)| (tape.param(w), tape.param(b)))
                    .collect();
                let mut acc: Option<Var> = None;
                for (r, lap) in laps.iter().enumerate() {
                    let (w, b) = if shared { &proj_vars[0] } else { &proj_vars[r] };
                    let xbar = concat_tower(tape, &cheb_tower(tape, lap, x, k, segments));
                    let f = xbar.matmul(w).add_row_broadcast(b).tanh();
                    acc = Some(match acc {
                        None => f,
                        Some(a) if multiply => a.elementwise_mul(&f),
                        Some(a) => a.add(&f),
                    });
                }
                acc.expect("at least one relation")
            }
        };
        Ok(fused.matmul(&theta))
    }
}

fn concat_tower(tape: &Tape, blocks: &[Var]) -> Var {
    if blocks.len() == 1 {
        return blocks[0].clone();
    }
    let refs: Vec<&Var> = blocks.iter().collect();
    tape.concat_cols(&refs)
}

/// Learns a soft adjacency over every within-graph node pair.
///
/// Scores come from a two-layer MLP on concatenated endpoint features,
/// `score(i, j) = w₂ᵀ tanh(W₁ [xᵢ | xⱼ] + b₁) + b₂`; each node's outgoing
/// scores are normalized with a softmax over its own graph, and the result
/// is symmetrized as `(E + Eᵀ)/2` without re-normalization. Entries between
/// different graphs are exactly zero.
pub struct EdgeLearner {
    pub in_features: usize,
    pub hidden: usize,
    w1: Param,
    b1: Param,
    w2: Param,
    b2: Param,
}

impl EdgeLearner {
    pub fn new(prefix: &str, in_features: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<EdgeLearner> {
        if hidden == 0 {
            return Err(Error::Config {
                key: "edge_hidden".into(),
                reason: "edge MLP hidden width must be at least 1".into(),
            });
        }
        Ok(EdgeLearner {
            in_features,
            hidden,
            w1: Param::new(format!("{prefix}.w1"), glorot(2 * in_features, hidden, rng)),
            b1: Param::new(format!("{prefix}.b1"), DenseMat::zeros(1, hidden)),
            w2: Param::new(format!("{prefix}.w2"), glorot(hidden, 1, rng)),
            b2: Param::new(format!("{prefix}.b2"), DenseMat::zeros(1, 1)),
        })
    }

    pub fn params(&self) -> Vec<(Param, bool)> {
        vec![
            (self.w1.clone(), true),
            (self.b1.clone(), false),
            (self.w2.clone(), true),
            (self.b2.clone(), false),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.w1.numel() + self.w2.numel()
    }

    /// The learned symmetric adjacency (`n × n`) for the batch.
    pub fn learn_edges(&self, tape: &Tape, x: &Var, segments: &Rc<Segments>) -> Result<Var> {
        let (_, cols) = x.shape();
        if cols != self.in_features {
            return Err(Error::DimMismatch {
                op: "learn_edges",
                details: format!("features have {cols} columns, learner expects {}", self.in_features),
            });
        }
        let pairs = pair_concat(x, segments);
        let h = pairs
            .matmul(&tape.param(&self.w1))
            .add_row_broadcast(&tape.param(&self.b1))
            .tanh();
        let scores = h
            .matmul(&tape.param(&self.w2))
            .add_row_broadcast(&tape.param(&self.b2));
        let e = pair_scatter(&scores, segments).softmax_rows_masked(segments);
        Ok(e.add(&e.transpose()).scalar_mul(0.5))
    }
}

/// The rescaled Laplacian `−D^{−1/2} E D^{−1/2}` of a dense non-negative
/// adjacency on the tape, with `D` the diagonal of row sums. Zero-degree
/// rows stay zero. Gradients flow through the normalization into `E`.
pub fn learned_laplacian(tape: &Tape, adj: &Var, segments: &Rc<Segments>) -> Var {
    let n = segments.n_rows();
    let ones = tape.constant(DenseMat::filled(n, 1, 1.0));
    let inv_sqrt_deg = adj.block_matmul(&ones, segments).rsqrt_or_zero();
    let scaling = inv_sqrt_deg.matmul(&inv_sqrt_deg.transpose());
    scaling.elementwise_mul(adj).scalar_mul(-1.0)
}

/// Per-graph max over nodes: one row per graph.
pub fn global_max_pool(x: &Var, segments: &Rc<Segments>) -> Var {
    x.row_max_pool_segmented(segments)
}

/// A dense affine layer `x W + b`.
pub struct Linear {
    w: Param,
    b: Param,
}

impl Linear {
    pub fn new(prefix: &str, in_features: usize, out_features: usize, rng: &mut ChaCha8Rng) -> Linear {
        Linear {
            w: Param::new(format!("{prefix}.w"), glorot(in_features, out_features, rng)),
            b: Param::new(format!("{prefix}.b"), DenseMat::zeros(1, out_features)),
        }
    }

    pub fn forward(&self, tape: &Tape, x: &Var) -> Var {
        x.matmul(&tape.param(&self.w)).add_row_broadcast(&tape.param(&self.b))
    }

    pub fn params(&self) -> Vec<(Param, bool)> {
        vec![(self.w.clone(), true), (self.b.clone(), false)]
    }

    pub fn in_features(&self) -> usize {
        self.w.shape().0
    }

    pub fn out_features(&self) -> usize {
        self.w.shape().1
    }
}

/// Batch normalization state: learnable scale/shift plus running statistics
/// updated in train mode and used in eval mode.
pub struct BnLayer {
    gamma: Param,
    beta: Param,
    running_mean: RefCell<Vec<f64>>,
    running_var: RefCell<Vec<f64>>,
    pub momentum: f64,
    pub eps: f64,
}

impl BnLayer {
    pub fn new(prefix: &str, features: usize) -> BnLayer {
        BnLayer {
            gamma: Param::new(format!("{prefix}.gamma"), DenseMat::filled(1, features, 1.0)),
            beta: Param::new(format!("{prefix}.beta"), DenseMat::zeros(1, features)),
            running_mean: RefCell::new(vec![0.0; features]),
            running_var: RefCell::new(vec![1.0; features]),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, tape: &Tape, x: &Var, train: bool) -> Var {
        x.batch_norm(
            &tape.param(&self.gamma),
            &tape.param(&self.beta),
            &mut self.running_mean.borrow_mut(),
            &mut self.running_var.borrow_mut(),
            self.momentum,
            self.eps,
            train,
        )
    }

    /// Batch-norm scale/shift train like biases: no weight decay.
    pub fn params(&self) -> Vec<(Param, bool)> {
        vec![(self.gamma.clone(), false), (self.beta.clone(), false)]
    }

    pub fn running_stats(&self) -> (Vec<f64>, Vec<f64>) {
        (self.running_mean.borrow().clone(), self.running_var.borrow().clone())
    }

    pub fn set_running_stats(&self, mean: Vec<f64>, var: Vec<f64>) -> Result<()> {
        if mean.len() != self.running_mean.borrow().len() || var.len() != mean.len() {
            return Err(Error::Checkpoint(format!(
                "running statistics for `{}` have the wrong length",
                self.gamma.name()
            )));
        }
        *self.running_mean.borrow_mut() = mean;
        *self.running_var.borrow_mut() = var;
        Ok(())
    }

    pub fn name_prefix(&self) -> String {
        self.gamma
            .name()
            .strip_suffix(".gamma")
            .unwrap_or(self.gamma.name())
            .to_string()
    }
}
