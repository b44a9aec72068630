//! The graph classification model: stacked graph convolutions with batch
//! normalization and ReLU, global max pooling, and a two-layer classifier
//! head with dropout.
//!
//! Each convolution sees up to two relations: the dataset's annotated
//! adjacency and, when enabled, a learned soft adjacency produced by an
//! [`EdgeLearner`]. By default the learned adjacency is computed once per
//! forward pass from the input features and shared by every layer; with
//! `learned_edge_recompute` each layer re-learns edges from its own input
//! features using a per-layer learner.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Param, Tape, Var};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::layers::{
    global_max_pool, learned_laplacian, BnLayer, ConvLayer, EdgeLearner, FusionMethod, LapRef,
    Linear,
};

/// Architecture and regularization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub fusion: FusionMethod,
    /// Chebyshev filter order `K` (number of basis blocks per relation).
    pub k_order: usize,
    /// Output width of each convolution layer, in order.
    pub conv_widths: Vec<usize>,
    /// Hidden width of the classifier head.
    pub fc_width: usize,
    pub n_classes: usize,
    /// Dropout probability before each classifier layer.
    pub dropout: f64,
    /// Projection width `C` for the multiply/sum fusion families.
    pub proj_hidden: usize,
    /// Hidden width of the edge-learning MLP.
    pub edge_hidden: usize,
    /// Add a learned soft adjacency as a second relation.
    pub use_learned_edges: bool,
    /// Re-learn edges per layer from that layer's input features instead of
    /// once from the raw inputs.
    pub learned_edge_recompute: bool,
}

impl ModelConfig {
    /// Relations each convolution receives.
    pub fn n_relations(&self) -> usize {
        1 + usize::from(self.use_learned_edges)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |key: &str, reason: String| Error::Config {
            key: key.into(),
            reason,
        };
        if !(1..=6).contains(&self.k_order) {
            return Err(cfg(
                "k_order",
                format!("filter order must be in 1..=6, got {}", self.k_order),
            ));
        }
        if self.conv_widths.is_empty() || self.conv_widths.iter().any(|&w| w == 0) {
            return Err(cfg(
                "conv_widths",
                "need at least one convolution layer, all widths positive".into(),
            ));
        }
        if self.fc_width == 0 {
            return Err(cfg("fc_width", "classifier width must be positive".into()));
        }
        if self.n_classes < 2 {
            return Err(cfg(
                "n_classes",
                format!("need at least 2 classes, got {}", self.n_classes),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(cfg(
                "dropout",
                format!("dropout must be in [0, 1), got {}", self.dropout),
            ));
        }
        match (self.fusion, self.use_learned_edges) {
            (FusionMethod::Single, true) => Err(cfg(
                "use_learned_edges",
                "`single` fusion takes exactly one relation; disable learned edges".into(),
            )),
            (FusionMethod::Single, false) => Ok(()),
            (_, false) => Err(cfg(
                "use_learned_edges",
                format!(
                    "`{}` fusion combines the annotated and learned relations; \
                     enable learned edges",
                    self.fusion
                ),
            )),
            (_, true) => Ok(()),
        }?;
        if self.fusion.uses_projections() && self.proj_hidden == 0 {
            return Err(cfg(
                "proj_hidden",
                "projection width must be positive for multiply/sum fusion".into(),
            ));
        }
        if self.use_learned_edges && self.edge_hidden == 0 {
            return Err(cfg(
                "edge_hidden",
                "edge MLP width must be positive when learned edges are enabled".into(),
            ));
        }
        if self.learned_edge_recompute && !self.use_learned_edges {
            return Err(cfg(
                "learned_edge_recompute",
                "requires learned edges to be enabled".into(),
            ));
        }
        Ok(())
    }
}

/// A built model with its trainable state.
pub struct Model {
    pub config: ModelConfig,
    pub x_in: usize,
    /// One learner when edges are computed once per forward; one per layer
    /// under `learned_edge_recompute`; empty without learned edges.
    edge_learners: Vec<EdgeLearner>,
    convs: Vec<ConvLayer>,
    conv_bns: Vec<BnLayer>,
    fc1: Linear,
    fc_bn: BnLayer,
    fc2: Linear,
}

impl Model {
    /// Build a model with freshly initialized parameters.
    pub fn build(config: ModelConfig, x_in: usize, rng: &mut ChaCha8Rng) -> Result<Model> {
        config.validate()?;
        if x_in == 0 {
            return Err(Error::Config {
                key: "x_in".into(),
                reason: "input feature width must be positive".into(),
            });
        }

        let mut convs = Vec::new();
        let mut conv_bns = Vec::new();
        let mut in_w = x_in;
        for (i, &out_w) in config.conv_widths.iter().enumerate() {
            convs.push(ConvLayer::new(
                &format!("conv{i}"),
                config.fusion,
                config.k_order,
                in_w,
                out_w,
                config.n_relations(),
                config.proj_hidden,
                rng,
            )?);
            conv_bns.push(BnLayer::new(&format!("conv_bn{i}"), out_w));
            in_w = out_w;
        }

        let mut edge_learners = Vec::new();
        if config.use_learned_edges {
            if config.learned_edge_recompute {
                let mut in_w = x_in;
                for (i, &out_w) in config.conv_widths.iter().enumerate() {
                    edge_learners.push(EdgeLearner::new(
                        &format!("edge{i}"),
                        in_w,
                        config.edge_hidden,
                        rng,
                    )?);
                    in_w = out_w;
                }
            } else {
                edge_learners.push(EdgeLearner::new("edge0", x_in, config.edge_hidden, rng)?);
            }
        }

        let last_w = *config.conv_widths.last().expect("validated non-empty");
        let fc1 = Linear::new("fc1", last_w, config.fc_width, rng);
        let fc_bn = BnLayer::new("fc_bn", config.fc_width);
        let fc2 = Linear::new("fc2", config.fc_width, config.n_classes, rng);

        Ok(Model {
            config,
            x_in,
            edge_learners,
            convs,
            conv_bns,
            fc1,
            fc_bn,
            fc2,
        })
    }

    /// All trainable parameters paired with their weight-decay flag, in a
    /// stable order (edge learners, convolutions with their norms, head).
    pub fn params(&self) -> Vec<(Param, bool)> {
        let mut out = Vec::new();
        for e in &self.edge_learners {
            out.extend(e.params());
        }
        for (conv, bn) in self.convs.iter().zip(&self.conv_bns) {
            out.extend(conv.params());
            out.extend(bn.params());
        }
        out.extend(self.fc1.params());
        out.extend(self.fc_bn.params());
        out.extend(self.fc2.params());
        out
    }

    fn bns(&self) -> Vec<&BnLayer> {
        self.conv_bns.iter().chain(std::iter::once(&self.fc_bn)).collect()
    }

    /// Trainable scalars across all parameters (biases included).
    pub fn n_parameters(&self) -> usize {
        self.params().iter().map(|(p, _)| p.numel()).sum()
    }

    /// Convolution filter parameters under the bias-free counting
    /// convention (Θ plus projection weights).
    pub fn conv_param_count(&self) -> usize {
        self.convs.iter().map(|c| c.param_count()).sum()
    }

    fn forward_impl(
        &self,
        tape: &Tape,
        batch: &Batch,
        train: bool,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let segments = &batch.segments;
        let x = tape.constant(batch.features.clone());

        // Learned adjacency from the input features, shared by all layers,
        // unless each layer re-learns from its own input.
        let recompute = self.config.learned_edge_recompute;
        let mut learned_lap: Option<Var> = None;
        if self.config.use_learned_edges && !recompute {
            let adj = self.edge_learners[0].learn_edges(tape, &x, segments)?;
            learned_lap = Some(learned_laplacian(tape, &adj, segments));
        }

        let mut h = x;
        for (i, (conv, bn)) in self.convs.iter().zip(&self.conv_bns).enumerate() {
            if self.config.use_learned_edges && recompute {
                let adj = self.edge_learners[i].learn_edges(tape, &h, segments)?;
                learned_lap = Some(learned_laplacian(tape, &adj, segments));
            }
            let mut laps = vec![LapRef::Fixed(&batch.lap)];
            if let Some(l) = &learned_lap {
                laps.push(LapRef::Learned(l));
            }
            h = conv.forward(tape, &laps, &h, segments)?;
            h = bn.forward(tape, &h, train);
            h = h.relu();
        }

        let mut pooled = global_max_pool(&h, segments);
        let p = self.config.dropout;
        if train && p > 0.0 {
            let rng = rng.as_deref_mut().expect("train mode needs an rng");
            pooled = pooled.dropout(p, rng);
        }
        let mut hidden = self.fc_bn.forward(tape, &self.fc1.forward(tape, &pooled), train).relu();
        if train && p > 0.0 {
            let rng = rng.as_deref_mut().expect("train mode needs an rng");
            hidden = hidden.dropout(p, rng);
        }
        Ok(self.fc2.forward(tape, &hidden))
    }

    /// Logits (`graphs × classes`) with batch statistics, dropout active.
    pub fn forward_train(&self, tape: &Tape, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<Var> {
        self.forward_impl(tape, batch, true, Some(rng))
    }

    /// Logits with running statistics and no dropout; deterministic.
    pub fn forward_eval(&self, tape: &Tape, batch: &Batch) -> Result<Var> {
        self.forward_impl(tape, batch, false, None)
    }

    /// Mean cross-entropy over the batch's graphs.
    pub fn loss(&self, logits: &Var, labels: &[usize]) -> Var {
        logits.cross_entropy_with_logits(labels).mean()
    }

    /// Predicted class per graph (argmax of eval logits; ties take the
    /// lowest class index).
    pub fn predict(&self, batch: &Batch) -> Result<Vec<usize>> {
        let tape = Tape::new();
        let logits = self.forward_eval(&tape, batch)?;
        let v = logits.value();
        Ok((0..v.rows)
            .map(|i| {
                let row = v.row(i);
                let mut best = 0;
                for (j, &x) in row.iter().enumerate() {
                    if x > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }

    /// Serialize configuration, parameters, and normalization statistics.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            x_in: self.x_in,
            config: self.config.clone(),
            params: self
                .params()
                .iter()
                .map(|(p, _)| {
                    let v = p.value();
                    ParamBlob {
                        name: p.name().to_string(),
                        rows: v.rows,
                        cols: v.cols,
                        data: v.data.clone(),
                    }
                })
                .collect(),
            bn_running: self
                .bns()
                .iter()
                .map(|bn| {
                    let (mean, var) = bn.running_stats();
                    BnBlob {
                        name: bn.name_prefix(),
                        mean,
                        var,
                    }
                })
                .collect(),
        };
        let json = serde_json::to_string(&file)
            .map_err(|e| Error::Checkpoint(format!("serialize failed: {e}")))?;
        fs::write(path, json).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(())
    }

    /// Rebuild a model from a checkpoint written by [`Model::save`].
    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let file: CheckpointFile = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("not a valid checkpoint: {e}")))?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unrecognized format `{}` (expected `{CHECKPOINT_FORMAT}`)",
                file.format
            )));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (this build reads version {CHECKPOINT_VERSION})",
                file.version
            )));
        }

        // Initialization values are irrelevant; every parameter is
        // overwritten from the checkpoint below.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = Model::build(file.config, file.x_in, &mut rng)?;

        let params = model.params();
        let mut matched = vec![false; params.len()];
        for blob in &file.params {
            let Some(pos) = params.iter().position(|(p, _)| p.name() == blob.name) else {
                return Err(Error::Checkpoint(format!(
                    "checkpoint parameter `{}` does not exist in this architecture",
                    blob.name
                )));
            };
            let (p, _) = &params[pos];
            if p.shape() != (blob.rows, blob.cols) || blob.data.len() != blob.rows * blob.cols {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` has shape {}×{} in the checkpoint but {}×{} in the model",
                    blob.name,
                    blob.rows,
                    blob.cols,
                    p.shape().0,
                    p.shape().1
                )));
            }
            p.value_mut().data.copy_from_slice(&blob.data);
            matched[pos] = true;
        }
        if let Some(pos) = matched.iter().position(|&m| !m) {
            return Err(Error::Checkpoint(format!(
                "checkpoint is missing parameter `{}`",
                params[pos].0.name()
            )));
        }

        let bns = model.bns();
        if file.bn_running.len() != bns.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} normalization entries, the model has {}",
                file.bn_running.len(),
                bns.len()
            )));
        }
        for blob in &file.bn_running {
            let Some(bn) = bns.iter().find(|bn| bn.name_prefix() == blob.name) else {
                return Err(Error::Checkpoint(format!(
                    "normalization entry `{}` does not exist in this architecture",
                    blob.name
                )));
            };
            bn.set_running_stats(blob.mean.clone(), blob.var.clone())?;
        }
        Ok(model)
    }
}

const CHECKPOINT_FORMAT: &str = "chebgraph-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// On-disk checkpoint layout (JSON object, in field order):
///
/// - `format`: literal `"chebgraph-checkpoint"`.
/// - `version`: layout version, currently `1`.
/// - `x_in`: input feature width the model was built for.
/// - `config`: the full [`ModelConfig`].
/// - `params`: every trainable matrix by name — `{name, rows, cols,
///   data}` with `data` row-major `f64`.
/// - `bn_running`: per batch-norm layer `{name, mean, var}` running
///   statistics.
///
/// Values round-trip bit-for-bit; loading rejects unknown, missing, or
/// misshapen entries.
#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    x_in: usize,
    config: ModelConfig,
    params: Vec<ParamBlob>,
    bn_running: Vec<BnBlob>,
}

#[derive(Serialize, Deserialize)]
struct ParamBlob {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BnBlob {
    name: String,
    mean: Vec<f64>,
    var: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_batch, GraphRecord};
    use crate::dense::DenseMat;
    use crate::sparse::SparseSym;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn toy_record(n: usize, edges: &[(usize, usize)], labels: &[usize], x_in: usize, class: usize) -> GraphRecord {
        let adjacency = SparseSym::from_undirected_edges(n, edges).unwrap();
        let mut node_features = DenseMat::zeros(n, x_in);
        for (i, &l) in labels.iter().enumerate() {
            node_features[(i, l)] = 1.0;
        }
        GraphRecord {
            n,
            adjacency,
            node_labels: labels.to_vec(),
            graph_label: class,
            node_features,
        }
    }

    fn toy_batch(x_in: usize) -> crate::data::Batch {
        let g0 = toy_record(3, &[(0, 1), (1, 2)], &[0, 1, 2 % x_in], x_in, 0);
        let g1 = toy_record(4, &[(0, 1), (1, 2), (2, 3), (3, 0)], &[1, 0, 1, 0], x_in, 1);
        make_batch(&[&g0, &g1]).unwrap()
    }

    fn single_config() -> ModelConfig {
        ModelConfig {
            fusion: FusionMethod::Single,
            k_order: 3,
            conv_widths: vec![8, 8],
            fc_width: 16,
            n_classes: 2,
            dropout: 0.1,
            proj_hidden: 0,
            edge_hidden: 0,
            use_learned_edges: false,
            learned_edge_recompute: false,
        }
    }

    fn multigraph_config(fusion: FusionMethod) -> ModelConfig {
        ModelConfig {
            fusion,
            k_order: 2,
            conv_widths: vec![6, 6],
            fc_width: 12,
            n_classes: 2,
            dropout: 0.1,
            proj_hidden: 5,
            edge_hidden: 4,
            use_learned_edges: true,
            learned_edge_recompute: false,
        }
    }

    #[test]
    fn config_validation_rejects_bad_settings() {
        let mut c = single_config();
        c.k_order = 0;
        assert!(matches!(c.validate(), Err(Error::Config { ref key, .. }) if key == "k_order"));
        c.k_order = 7;
        assert!(c.validate().is_err());

        let mut c = single_config();
        c.use_learned_edges = true;
        assert!(matches!(c.validate(), Err(Error::Config { ref key, .. }) if key == "use_learned_edges"));

        let mut c = multigraph_config(FusionMethod::TwoDCheb);
        c.use_learned_edges = false;
        assert!(c.validate().is_err());

        let mut c = multigraph_config(FusionMethod::Concat);
        c.use_learned_edges = false;
        assert!(c.validate().is_err());

        let mut c = single_config();
        c.dropout = 1.0;
        assert!(matches!(c.validate(), Err(Error::Config { ref key, .. }) if key == "dropout"));
    }

    #[test]
    fn forward_shapes_and_widths_follow_the_config() {
        let mut r = rng(1);
        let model = Model::build(single_config(), 3, &mut r).unwrap();
        let batch = toy_batch(3);
        let tape = Tape::new();
        let logits = model.forward_eval(&tape, &batch).unwrap();
        assert_eq!(logits.shape(), (2, 2));
        // conv0: 3·3·8 = 72, conv1: 8·3·8 = 192.
        assert_eq!(model.conv_param_count(), 72 + 192);
    }

    #[test]
    fn zeroed_model_predicts_uniformly() {
        let mut r = rng(2);
        let model = Model::build(single_config(), 3, &mut r).unwrap();
        for (p, _) in model.params() {
            let (rows, cols) = p.shape();
            *p.value_mut() = DenseMat::zeros(rows, cols);
        }
        let batch = toy_batch(3);
        let tape = Tape::new();
        let logits = model.forward_eval(&tape, &batch).unwrap();
        let loss = model.loss(&logits, &batch.labels);
        assert!((loss.scalar() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn identical_graphs_in_a_batch_get_identical_logits() {
        for fusion in [FusionMethod::Single, FusionMethod::Multiply] {
            let config = if fusion == FusionMethod::Single {
                single_config()
            } else {
                multigraph_config(fusion)
            };
            let mut r = rng(3);
            let model = Model::build(config, 3, &mut r).unwrap();
            let g = toy_record(3, &[(0, 1), (1, 2)], &[0, 1, 2], 3, 0);
            let batch = make_batch(&[&g, &g]).unwrap();
            let tape = Tape::new();
            let logits = model.forward_eval(&tape, &batch).unwrap().value();
            for j in 0..2 {
                assert!(
                    (logits[(0, j)] - logits[(1, j)]).abs() < 1e-12,
                    "{fusion}: column {j}"
                );
            }
        }
    }

    #[test]
    fn graph_order_in_a_batch_does_not_change_eval_logits() {
        let mut r = rng(4);
        let model = Model::build(multigraph_config(FusionMethod::Concat), 3, &mut r).unwrap();
        let g0 = toy_record(3, &[(0, 1), (1, 2)], &[0, 1, 2], 3, 0);
        let g1 = toy_record(4, &[(0, 1), (1, 2), (2, 3), (3, 0)], &[1, 0, 1, 0], 3, 1);
        let fwd = make_batch(&[&g0, &g1]).unwrap();
        let rev = make_batch(&[&g1, &g0]).unwrap();
        let tape = Tape::new();
        let a = model.forward_eval(&tape, &fwd).unwrap().value();
        let b = model.forward_eval(&tape, &rev).unwrap().value();
        for j in 0..2 {
            assert!((a[(0, j)] - b[(1, j)]).abs() < 1e-8);
            assert!((a[(1, j)] - b[(0, j)]).abs() < 1e-8);
        }
    }

    #[test]
    fn training_reduces_the_loss_on_a_toy_problem() {
        use crate::optim::Adam;
        let mut r = rng(5);
        let model = Model::build(single_config(), 3, &mut r).unwrap();
        let batch = toy_batch(3);
        let mut opt = Adam::new(model.params(), 0.0);
        let mut first = None;
        let mut last = 0.0;
        for _ in 0..60 {
            let tape = Tape::new();
            let logits = model.forward_train(&tape, &batch, &mut r).unwrap();
            let loss = model.loss(&logits, &batch.labels);
            last = loss.scalar();
            first.get_or_insert(last);
            opt.zero_grad();
            loss.backward().unwrap();
            opt.step(0.01).unwrap();
        }
        assert!(last < first.unwrap() * 0.5, "{first:?} → {last}");
        assert_eq!(model.predict(&batch).unwrap(), batch.labels);
    }

    #[test]
    fn checkpoints_round_trip_bit_for_bit() {
        for config in [
            single_config(),
            multigraph_config(FusionMethod::Multiply),
            {
                let mut c = multigraph_config(FusionMethod::Sum);
                c.learned_edge_recompute = true;
                c
            },
        ] {
            let mut r = rng(6);
            let model = Model::build(config, 3, &mut r).unwrap();
            let batch = toy_batch(3);
            // A training step gives the running statistics non-trivial values.
            let tape = Tape::new();
            model.forward_train(&tape, &batch, &mut r).unwrap();

            let tmp = tempfile::tempdir().unwrap();
            let path = tmp.path().join("model.json");
            model.save(&path).unwrap();
            let loaded = Model::load(&path).unwrap();

            let tape = Tape::new();
            let a = model.forward_eval(&tape, &batch).unwrap().value();
            let b = loaded.forward_eval(&tape, &batch).unwrap().value();
            assert_eq!(a, b, "eval outputs must match exactly after reload");
        }
    }

    #[test]
    fn checkpoint_loading_validates_contents() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("bad.json");
        fs::write(&path, "{\"format\": \"something-else\"}").unwrap();
        assert!(matches!(Model::load(&path), Err(Error::Checkpoint(_))));

        // A checkpoint whose declared architecture disagrees with a stored
        // parameter shape is rejected.
        let mut r = rng(7);
        let model = Model::build(single_config(), 3, &mut r).unwrap();
        let path = tmp.path().join("model.json");
        model.save(&path).unwrap();
        let mut text = fs::read_to_string(&path).unwrap();
        text = text.replace("\"name\":\"fc1.w\",\"rows\":8", "\"name\":\"fc1.w\",\"rows\":9");
        fs::write(&path, text).unwrap();
        assert!(matches!(Model::load(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn recompute_mode_builds_one_learner_per_layer() {
        let mut config = multigraph_config(FusionMethod::Concat);
        config.learned_edge_recompute = true;
        let mut r = rng(8);
        let model = Model::build(config, 3, &mut r).unwrap();
        assert_eq!(model.edge_learners.len(), 2);
        assert_eq!(model.edge_learners[0].in_features, 3);
        assert_eq!(model.edge_learners[1].in_features, 6);
        let batch = toy_batch(3);
        let tape = Tape::new();
        let logits = model.forward_eval(&tape, &batch).unwrap();
        assert_eq!(logits.shape(), (2, 2));
    }
}
