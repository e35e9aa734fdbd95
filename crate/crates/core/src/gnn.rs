//! Graph convolutional layers, the two-channel forward pass with late
//! fusion, and full-batch training with early stopping.
//!
//! One layer maps `Z` to
//!
//! ```text
//! Z_old = g(Â Z W)  [+ g((I - Â) Z W_hp)]
//! Z_new = g(Â' Z W) [+ g((I - Â') Z W_hp)]
//! Z'    = λ·Z_new + Z_old
//! ```
//!
//! where `g` is the activation (skipped on the last layer) and the rewired
//! channel reuses `W` unless `shared_fusion_weights` is off. Without a
//! rewired graph the model is a plain GCN; with the identity as `Â` and no
//! high-pass branch it is an MLP.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, Graph, Split};
use crate::tensor::{accuracy, adam_step, AdamConfig, AdamState, DenseMatrix, Propagator, Tape, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

impl Activation {
    pub fn apply(self, z: &DenseMatrix) -> DenseMatrix {
        match self {
            Activation::Relu => z.relu(),
        }
    }

    fn record(self, tape: &mut Tape, z: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(z),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub hidden_dim: usize,
    /// Weight of the rewired channel in the late fusion.
    pub lambda: f64,
    pub use_high_pass: bool,
    pub dropout: f64,
    pub activation: Activation,
    pub shared_fusion_weights: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            hidden_dim: 64,
            lambda: 1.0,
            use_high_pass: false,
            dropout: 0.5,
            activation: Activation::Relu,
            shared_fusion_weights: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.hidden_dim == 0 {
            return Err(Error::InvalidParam("n_layers and hidden_dim must be positive".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParam(format!("lambda = {} must be >= 0", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidParam(format!("dropout = {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every layer.
    pub fn layer_dims(&self, in_dim: usize, n_classes: usize) -> Vec<(usize, usize)> {
        (0..self.n_layers)
            .map(|l| {
                let fan_in = if l == 0 { in_dim } else { self.hidden_dim };
                let fan_out = if l + 1 == self.n_layers {
                    n_classes
                } else {
                    self.hidden_dim
                };
                (fan_in, fan_out)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Epochs without a new best validation accuracy before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            weight_decay: 5e-4,
            max_epochs: 2000,
            patience: 40,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidParam(format!("lr = {} must be positive", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "weight_decay = {} must be >= 0",
                self.weight_decay
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidParam("max_epochs must be positive".into()));
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return Err(Error::InvalidParam(format!(
                "patience = {} must be in [1, max_epochs = {}]",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// Low-pass operator `Â` and optional high-pass `I - Â` of one graph.
#[derive(Clone, Debug)]
pub struct Channel {
    pub low: Arc<Propagator>,
    pub high: Option<Arc<Propagator>>,
}

impl Channel {
    pub fn from_graph(graph: &Graph, high_pass: bool) -> Self {
        let a = normalize_adjacency(graph);
        Self {
            low: Arc::new(a.propagator()),
            high: high_pass.then(|| Arc::new(a.high_pass_propagator())),
        }
    }

    /// No message passing: the model reduces to an MLP.
    pub fn identity(n_nodes: usize) -> Self {
        Self {
            low: Arc::new(Propagator::Identity(n_nodes)),
            high: None,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.low.dim()
    }
}

/// The original graph and, for the two-channel model, the rewired one.
#[derive(Clone, Debug)]
pub struct GraphInputs {
    pub old: Channel,
    pub new: Option<Channel>,
}

impl GraphInputs {
    pub fn single(old: Channel) -> Self {
        Self { old, new: None }
    }

    pub fn fused(old: Channel, new: Channel) -> Self {
        Self { old, new: Some(new) }
    }

    fn check(&self, config: &ModelConfig, n_rows: usize) -> Result<()> {
        for ch in std::iter::once(&self.old).chain(&self.new) {
            if ch.n_nodes() != n_rows {
                return Err(Error::Shape(format!(
                    "graph over {} nodes for {n_rows} feature rows",
                    ch.n_nodes()
                )));
            }
            if config.use_high_pass && ch.high.is_none() {
                return Err(Error::InvalidParam(
                    "high-pass model needs a high-pass operator for every channel".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub w: DenseMatrix,
    pub w_hp: Option<DenseMatrix>,
    /// Rewired-channel weights when they are not shared.
    pub w_new: Option<DenseMatrix>,
    pub w_new_hp: Option<DenseMatrix>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layers: Vec<LayerParams>,
}

fn glorot(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect();
    DenseMatrix::from_vec(fan_in, fan_out, data).expect("glorot shape")
}

impl ModelParams {
    /// Glorot-uniform weights. The original-channel weights come from their
    /// own random stream, so adding a rewired channel with separate weights
    /// leaves them unchanged.
    pub fn init(config: &ModelConfig, in_dim: usize, n_classes: usize, two_channel: bool, seed: u64) -> Self {
        let mut old = ChaCha8Rng::seed_from_u64(seed);
        let mut new = ChaCha8Rng::seed_from_u64(seed);
        new.set_stream(1);
        let separate = two_channel && !config.shared_fusion_weights;
        let layers = config
            .layer_dims(in_dim, n_classes)
            .into_iter()
            .map(|(i, o)| {
                let w = glorot(i, o, &mut old);
                let w_hp = config.use_high_pass.then(|| glorot(i, o, &mut old));
                let w_new = separate.then(|| glorot(i, o, &mut new));
                let w_new_hp = (separate && config.use_high_pass).then(|| glorot(i, o, &mut new));
                LayerParams {
                    w,
                    w_hp,
                    w_new,
                    w_new_hp,
                }
            })
            .collect();
        Self { layers }
    }

    /// Every weight matrix in a fixed order.
    pub fn matrices(&self) -> Vec<&DenseMatrix> {
        self.layers
            .iter()
            .flat_map(|l| std::iter::once(&l.w).chain(&l.w_hp).chain(&l.w_new).chain(&l.w_new_hp))
            .collect()
    }

    pub fn matrices_mut(&mut self) -> Vec<&mut DenseMatrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                std::iter::once(&mut l.w)
                    .chain(l.w_hp.as_mut())
                    .chain(l.w_new.as_mut())
                    .chain(l.w_new_hp.as_mut())
            })
            .collect()
    }

    fn check(&self, config: &ModelConfig, inputs: &GraphInputs, in_dim: usize) -> Result<()> {
        if self.layers.len() != config.n_layers {
            return Err(Error::Shape(format!(
                "{} parameter layers for a {}-layer model",
                self.layers.len(),
                config.n_layers
            )));
        }
        let mut dim = in_dim;
        for (k, l) in self.layers.iter().enumerate() {
            if l.w.rows() != dim {
                return Err(Error::Shape(format!(
                    "layer {k} expects {} inputs, got {dim}",
                    l.w.rows()
                )));
            }
            if config.use_high_pass != l.w_hp.is_some() {
                return Err(Error::Shape(format!("layer {k} high-pass weights do not match config")));
            }
            let separate = inputs.new.is_some() && !config.shared_fusion_weights;
            if separate && (l.w_new.is_none() || config.use_high_pass != l.w_new_hp.is_some()) {
                return Err(Error::Shape(format!("layer {k} lacks rewired-channel weights")));
            }
            dim = l.w.cols();
        }
        Ok(())
    }
}

/// `g(Â Z W)`, activation skipped when `activation` is `None`.
pub fn gcn_layer(
    a_hat: &Propagator,
    z: &DenseMatrix,
    w: &DenseMatrix,
    activation: Option<Activation>,
) -> Result<DenseMatrix> {
    let out = a_hat.apply(&z.matmul(w)?)?;
    Ok(match activation {
        Some(g) => g.apply(&out),
        None => out,
    })
}

/// `g((I - Â) Z W_hp)` given the high-pass operator `I - Â`.
pub fn high_pass_layer(
    high_pass: &Propagator,
    z: &DenseMatrix,
    w_hp: &DenseMatrix,
    activation: Option<Activation>,
) -> Result<DenseMatrix> {
    gcn_layer(high_pass, z, w_hp, activation)
}

fn channel_output(
    ch: &Channel,
    z: &DenseMatrix,
    w: &DenseMatrix,
    w_hp: Option<&DenseMatrix>,
    g: Option<Activation>,
) -> Result<DenseMatrix> {
    let mut out = gcn_layer(&ch.low, z, w, g)?;
    if let (Some(hp), Some(w_hp)) = (&ch.high, w_hp) {
        out.add_assign(&high_pass_layer(hp, z, w_hp, g)?)?;
    }
    Ok(out)
}

/// Evaluation-mode logits (no dropout).
pub fn forward(
    params: &ModelParams,
    features: &DenseMatrix,
    inputs: &GraphInputs,
    config: &ModelConfig,
) -> Result<DenseMatrix> {
    config.validate()?;
    inputs.check(config, features.rows())?;
    params.check(config, inputs, features.cols())?;
    let last = params.layers.len() - 1;
    let mut z = features.clone();
    for (l, p) in params.layers.iter().enumerate() {
        let g = (l < last).then_some(config.activation);
        let hp = if config.use_high_pass { p.w_hp.as_ref() } else { None };
        let old = channel_output(&inputs.old, &z, &p.w, hp, g)?;
        z = match &inputs.new {
            None => old,
            Some(ch) => {
                let (w, w_hp) = match &p.w_new {
                    Some(w_new) => (w_new, p.w_new_hp.as_ref()),
                    None => (&p.w, hp),
                };
                let new = channel_output(ch, &z, w, w_hp, g)?;
                new.scale(config.lambda).add(&old)?
            }
        };
    }
    Ok(z)
}

/// Seed of the dropout mask for one layer of one training step.
fn dropout_seed(seed: u64, epoch: usize, layer: usize) -> u64 {
    fn mix(mut x: u64) -> u64 {
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^ (x >> 31)
    }
    mix(seed ^ mix(((epoch as u64) << 16) | layer as u64))
}

/// Parameter leaves of one recorded forward pass, in [`ModelParams::matrices`] order.
struct ParamVars {
    vars: Vec<Var>,
}

fn record_channel(
    tape: &mut Tape,
    ch: &Channel,
    z: Var,
    w: Var,
    w_hp: Option<Var>,
    g: Option<Activation>,
) -> Result<Var> {
    let zw = tape.matmul(z, w)?;
    let mut out = tape.propagate(&ch.low, zw)?;
    if let Some(g) = g {
        out = g.record(tape, out);
    }
    if let (Some(hp), Some(w_hp)) = (&ch.high, w_hp) {
        let zw = tape.matmul(z, w_hp)?;
        let mut h = tape.propagate(hp, zw)?;
        if let Some(g) = g {
            h = g.record(tape, h);
        }
        out = tape.add(out, h)?;
    }
    Ok(out)
}

/// Records the forward pass; `dropout` carries `(seed, epoch)` in training.
fn record_forward(
    tape: &mut Tape,
    params: &ModelParams,
    features: &DenseMatrix,
    inputs: &GraphInputs,
    config: &ModelConfig,
    dropout: Option<(u64, usize)>,
) -> Result<(Var, ParamVars)> {
    let mut vars = Vec::new();
    let mut z = tape.constant(features.clone());
    let last = params.layers.len() - 1;
    for (l, p) in params.layers.iter().enumerate() {
        let w = tape.param(p.w.clone());
        vars.push(w);
        let w_hp = p.w_hp.as_ref().map(|m| tape.param(m.clone()));
        vars.extend(w_hp);
        let w_new = p.w_new.as_ref().map(|m| tape.param(m.clone()));
        vars.extend(w_new);
        let w_new_hp = p.w_new_hp.as_ref().map(|m| tape.param(m.clone()));
        vars.extend(w_new_hp);

        if let Some((seed, epoch)) = dropout {
            z = tape.dropout(z, config.dropout, dropout_seed(seed, epoch, l))?;
        }
        let g = (l < last).then_some(config.activation);
        let hp = if config.use_high_pass { w_hp } else { None };
        let old = record_channel(tape, &inputs.old, z, w, hp, g)?;
        z = match &inputs.new {
            None => old,
            Some(ch) => {
                let (wn, wn_hp) = match w_new {
                    Some(wn) => (wn, w_new_hp),
                    None => (w, hp),
                };
                let new = record_channel(tape, ch, z, wn, wn_hp, g)?;
                let new = tape.scale(new, config.lambda);
                tape.add(new, old)?
            }
        };
    }
    Ok((z, ParamVars { vars }))
}

/// Training loss and its gradient for every weight matrix, in
/// [`ModelParams::matrices`] order. `dropout` is `(seed, epoch)`.
pub fn loss_and_gradients(
    params: &ModelParams,
    features: &DenseMatrix,
    labels: &[usize],
    mask: &[usize],
    inputs: &GraphInputs,
    config: &ModelConfig,
    dropout: Option<(u64, usize)>,
) -> Result<(f64, Vec<DenseMatrix>)> {
    config.validate()?;
    inputs.check(config, features.rows())?;
    params.check(config, inputs, features.cols())?;
    let mut tape = Tape::new();
    let (logits, pv) = record_forward(&mut tape, params, features, inputs, config, dropout)?;
    let loss = tape.masked_cross_entropy(logits, labels, mask)?;
    let value = tape.value(loss).get(0, 0);
    let mut grads = tape.backward(loss)?;
    let out = pv
        .vars
        .iter()
        .zip(params.matrices())
        .map(|(&v, m)| grads.take(v).unwrap_or_else(|| DenseMatrix::zeros(m.rows(), m.cols())))
        .collect();
    Ok((value, out))
}

pub fn evaluate(
    params: &ModelParams,
    features: &DenseMatrix,
    inputs: &GraphInputs,
    config: &ModelConfig,
    labels: &[usize],
    mask: &[usize],
) -> Result<f64> {
    accuracy(&forward(params, features, inputs, config)?, labels, mask)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub test_acc: f64,
    pub best_epoch: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainResult {
    /// Parameters of the best validation epoch.
    pub params: ModelParams,
    pub trace: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub test_acc: f64,
    pub seed: u64,
}

impl TrainResult {
    pub fn summary(&self) -> TrainSummary {
        TrainSummary {
            test_acc: self.test_acc,
            best_epoch: self.best_epoch,
            seed: self.seed,
        }
    }
}

pub fn trace_csv(trace: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_acc\n");
    for r in trace {
        writeln!(out, "{},{},{}", r.epoch, r.train_loss, r.val_acc).unwrap();
    }
    out
}

/// Full-batch training on `split.train`. Epoch `e` (from 1) takes one Adam
/// step and then measures validation accuracy; the parameters with the
/// highest validation accuracy (earliest on ties) are kept, and training
/// stops after `patience` epochs without improvement. Epoch 0 in the trace
/// is the untrained model, with the train loss it has.
pub fn train(
    features: &DenseMatrix,
    labels: &[usize],
    n_classes: usize,
    split: &Split,
    inputs: &GraphInputs,
    model: &ModelConfig,
    train: &TrainConfig,
) -> Result<TrainResult> {
    model.validate()?;
    train.validate()?;
    for (name, part) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        if part.is_empty() {
            return Err(Error::InvalidSplit(format!("empty {name} set")));
        }
    }
    let mut params = ModelParams::init(model, features.cols(), n_classes, inputs.new.is_some(), train.seed);
    let adam = train.adam();
    let mut state = AdamState::new(&params.matrices());

    let val_acc = evaluate(&params, features, inputs, model, labels, &split.val)?;
    let (init_loss, _) = loss_and_gradients(&params, features, labels, &split.train, inputs, model, None)?;
    let mut trace = vec![EpochRecord {
        epoch: 0,
        train_loss: init_loss,
        val_acc,
    }];
    let mut best = (0, val_acc, params.clone());
    for epoch in 1..=train.max_epochs {
        let (loss, grads) = loss_and_gradients(
            &params,
            features,
            labels,
            &split.train,
            inputs,
            model,
            Some((train.seed, epoch)),
        )?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let grad_refs: Vec<&DenseMatrix> = grads.iter().collect();
        adam_step(&mut params.matrices_mut(), &grad_refs, &mut state, &adam)?;
        let val_acc = evaluate(&params, features, inputs, model, labels, &split.val)?;
        trace.push(EpochRecord {
            epoch,
            train_loss: loss,
            val_acc,
        });
        if val_acc > best.1 {
            best = (epoch, val_acc, params.clone());
        } else if epoch - best.0 >= train.patience {
            break;
        }
    }
    let (best_epoch, best_val_acc, params) = best;
    let test_acc = evaluate(&params, features, inputs, model, labels, &split.test)?;
    Ok(TrainResult {
        params,
        trace,
        best_epoch,
        best_val_acc,
        test_acc,
        seed: train.seed,
    })
}
