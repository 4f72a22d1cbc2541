//! Static layer graph with forward inference, a recording forward pass for
//! training, and reverse-mode gradients for the trainable tensors.
//!
//! Graphs are built once by [`GraphBuilder`] (see [`build_network`] for the
//! segmentation architecture) and stored in topological order, so both passes
//! are single sweeps over the node list.

mod arch;
pub mod ops;
mod weights;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use arch::{build_network, NetworkConfig, WidthMultiplier, DEFAULT_DECODER_CHANNELS};
pub use weights::{
    apply_container, load_weights, save_weights, LoadReport, WeightContainer, WeightRecord,
};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use ops::{BatchNormCache, ConvSpec, PoolSpec};

pub type NodeId = usize;
pub type ParamId = usize;

/// Normalization epsilon added to the variance.
pub const BN_EPSILON: f64 = 1e-3;
/// Weight of the newest batch in the running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    Encoder,
    Decoder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    /// Learnable weight, bias, scale or shift.
    Weight,
    /// Batch-normalization running mean or variance.
    RunningStat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub role: ParamRole,
    pub section: Section,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input,
    Conv {
        weight: ParamId,
        bias: Option<ParamId>,
        spec: ConvSpec,
    },
    ConvTranspose {
        weight: ParamId,
        bias: Option<ParamId>,
        stride: usize,
    },
    MaxPool(PoolSpec),
    AvgPool(PoolSpec),
    BatchNorm {
        gamma: ParamId,
        beta: ParamId,
        mean: ParamId,
        var: ParamId,
    },
    Relu,
    Sigmoid,
    Concat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<NodeId>,
    pub channels: usize,
    /// Spatial downsampling factor relative to the network input.
    pub scale: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    nodes: Vec<Node>,
    params: Vec<Param<T>>,
    output: NodeId,
    input_size: (usize, usize),
    marks: BTreeMap<String, NodeId>,
    config: Option<NetworkConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    pub trainable: usize,
}

/// Gradient of the loss for one trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad<T> {
    pub param: ParamId,
    pub name: String,
    pub grad: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub entries: Vec<ParamGrad<T>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| &e.grad)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }
}

/// Batch statistics observed by a training-mode normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean_param: ParamId,
    pub var_param: ParamId,
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub count: usize,
}

#[derive(Debug, Clone)]
enum Cache<T> {
    None,
    ArgMax(Vec<u32>),
    Norm(BatchNormCache<T>),
}

/// Activations and per-layer caches recorded by [`Network::forward_train`].
#[derive(Debug, Clone)]
pub struct Tape<T> {
    outputs: Vec<Option<Tensor<T>>>,
    caches: Vec<Cache<T>>,
    output: NodeId,
}

impl<T: Scalar> Tape<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.outputs[self.output].as_ref().expect("output recorded")
    }

    /// Activation of node `id`.
    pub fn activation(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.outputs.get(id).and_then(Option::as_ref)
    }
}

/// Loss function evaluated on the network output.
pub trait Loss<T: Scalar> {
    fn value(&self, predicted: &[T], target: &[T]) -> Result<T>;
    fn gradient(&self, predicted: &[T], target: &[T]) -> Result<Vec<T>>;
}

/// Loss value, gradients and the batch statistics of one training pass.
#[derive(Debug, Clone)]
pub struct GradientPass<T> {
    pub loss: T,
    pub output: Tensor<T>,
    pub grads: Gradients<T>,
    pub batch_stats: Vec<BatchStats<T>>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Train,
    Eval,
}

impl<T: Scalar> Network<T> {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn config(&self) -> Option<&NetworkConfig> {
        self.config.as_ref()
    }

    pub fn input_size(&self) -> (usize, usize) {
        self.input_size
    }

    pub fn input_channels(&self) -> usize {
        self.nodes[0].channels
    }

    pub fn output_node(&self) -> NodeId {
        self.output
    }

    /// Named graph positions (encoder taps, decoder concatenations, ...).
    pub fn mark(&self, name: &str) -> Option<NodeId> {
        self.marks.get(name).copied()
    }

    pub fn marks(&self) -> &BTreeMap<String, NodeId> {
        &self.marks
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Replaces a tensor's values; the shape must not change.
    pub fn set_param(&mut self, id: ParamId, tensor: Tensor<T>) -> Result<()> {
        let p = &mut self.params[id];
        if p.tensor.shape() != tensor.shape() {
            return Err(Error::DimMismatch {
                expected: p.tensor.len(),
                found: tensor.len(),
            });
        }
        p.tensor = tensor;
        Ok(())
    }

    pub fn param_data_mut(&mut self, id: ParamId) -> &mut [T] {
        self.params[id].tensor.data_mut()
    }

    /// Marks every encoder weight frozen (or trainable). Frozen normalization
    /// layers run on their running statistics.
    pub fn set_encoder_frozen(&mut self, frozen: bool) {
        for p in &mut self.params {
            if p.role == ParamRole::Weight && p.section == Section::Encoder {
                p.trainable = !frozen;
            }
        }
        if let Some(cfg) = self.config.as_mut() {
            cfg.freeze_encoder = frozen;
        }
    }

    pub fn count_parameters(&self) -> ParamCount {
        let total = self.params.iter().map(|p| p.tensor.len()).sum();
        let trainable = self
            .params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.tensor.len())
            .sum();
        ParamCount { total, trainable }
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        (0..self.params.len())
            .filter(|&i| self.params[i].trainable)
            .collect()
    }

    fn check_input(&self, batch: &Tensor<T>) -> Result<()> {
        let shape = batch.shape();
        let (h, w) = self.input_size;
        let c = self.input_channels();
        if shape.len() != 4 || shape[0] == 0 || shape[1] != c || shape[2] != h || shape[3] != w {
            return Err(Error::ShapeMismatch(format!(
                "expected (B, {c}, {h}, {w}), got {shape:?}"
            )));
        }
        Ok(())
    }

    /// Inference: normalization layers use running statistics and
    /// intermediate activations are released as soon as they are consumed.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(batch)?;
        let tape = self.run(batch, Mode::Eval, false);
        Ok(tape
            .outputs
            .into_iter()
            .nth(self.output)
            .flatten()
            .expect("output"))
    }

    /// Training-mode forward pass that records everything needed by
    /// [`Network::backward`]. Trainable normalization layers use batch
    /// statistics. Does not modify the network.
    pub fn forward_train(&self, batch: &Tensor<T>) -> Result<Tape<T>> {
        self.check_input(batch)?;
        Ok(self.run(batch, Mode::Train, true))
    }

    fn last_uses(&self) -> Vec<NodeId> {
        let mut last: Vec<NodeId> = (0..self.nodes.len()).collect();
        for (id, node) in self.nodes.iter().enumerate() {
            for &i in &node.inputs {
                last[i] = last[i].max(id);
            }
        }
        last[self.output] = usize::MAX;
        last
    }

    fn run(&self, batch: &Tensor<T>, mode: Mode, keep: bool) -> Tape<T> {
        let n = self.nodes.len();
        let mut outputs: Vec<Option<Tensor<T>>> = vec![None; n];
        let mut caches: Vec<Cache<T>> = vec![Cache::None; n];
        let last_use = if keep { Vec::new() } else { self.last_uses() };
        let eps = T::lit(BN_EPSILON);

        for (id, node) in self.nodes.iter().enumerate() {
            let input = |k: usize| -> &Tensor<T> {
                outputs[node.inputs[k]].as_ref().expect("input computed")
            };
            let (out, cache) = match &node.op {
                Op::Input => (batch.clone(), Cache::None),
                Op::Conv { weight, bias, spec } => (
                    ops::conv2d(
                        input(0),
                        &self.params[*weight].tensor,
                        bias.map(|b| &self.params[b].tensor),
                        spec,
                    ),
                    Cache::None,
                ),
                Op::ConvTranspose {
                    weight,
                    bias,
                    stride,
                } => (
                    ops::conv_transpose2d(
                        input(0),
                        &self.params[*weight].tensor,
                        bias.map(|b| &self.params[b].tensor),
                        *stride,
                    ),
                    Cache::None,
                ),
                Op::MaxPool(spec) => {
                    let (y, arg) = ops::max_pool(input(0), spec);
                    (y, Cache::ArgMax(arg))
                }
                Op::AvgPool(spec) => (ops::avg_pool(input(0), spec), Cache::None),
                Op::BatchNorm {
                    gamma,
                    beta,
                    mean,
                    var,
                } => {
                    let batch_stats = mode == Mode::Train && self.params[*gamma].trainable;
                    let (y, c) = ops::batch_norm(
                        input(0),
                        self.params[*gamma].tensor.data(),
                        self.params[*beta].tensor.data(),
                        self.params[*mean].tensor.data(),
                        self.params[*var].tensor.data(),
                        eps,
                        batch_stats,
                    );
                    (y, if keep { Cache::Norm(c) } else { Cache::None })
                }
                Op::Relu => (ops::relu(input(0)), Cache::None),
                Op::Sigmoid => (ops::sigmoid(input(0)), Cache::None),
                Op::Concat => {
                    let parts: Vec<&Tensor<T>> = (0..node.inputs.len()).map(input).collect();
                    (ops::concat(&parts), Cache::None)
                }
            };
            outputs[id] = Some(out);
            if keep {
                caches[id] = cache;
            } else {
                for &i in &node.inputs {
                    if last_use[i] == id {
                        outputs[i] = None;
                    }
                }
            }
        }
        Tape {
            outputs,
            caches,
            output: self.output,
        }
    }

    /// Whether any trainable tensor lies upstream of (or at) each node.
    fn requires_grad(&self) -> Vec<bool> {
        let mut req = vec![false; self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            let own = match &node.op {
                Op::Conv { weight, bias, .. } | Op::ConvTranspose { weight, bias, .. } => {
                    self.params[*weight].trainable || bias.is_some_and(|b| self.params[b].trainable)
                }
                Op::BatchNorm { gamma, beta, .. } => {
                    self.params[*gamma].trainable || self.params[*beta].trainable
                }
                _ => false,
            };
            req[id] = own || node.inputs.iter().any(|&i| req[i]);
        }
        req
    }

    /// Reverse-mode sweep from `d_output` (gradient of the loss with respect
    /// to the network output). Only trainable tensors receive gradients.
    pub fn backward(&self, tape: &Tape<T>, d_output: Tensor<T>) -> Result<Gradients<T>> {
        if d_output.shape() != tape.output().shape() {
            return Err(Error::ShapeMismatch(format!(
                "output gradient {:?} vs output {:?}",
                d_output.shape(),
                tape.output().shape()
            )));
        }
        let req = self.requires_grad();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        let mut param_grads: BTreeMap<ParamId, Tensor<T>> = BTreeMap::new();
        grads[self.output] = Some(d_output);

        let accumulate =
            |grads: &mut Vec<Option<Tensor<T>>>, id: NodeId, g: Tensor<T>| match grads[id].as_mut()
            {
                Some(acc) => acc.add_assign(&g),
                None => grads[id] = Some(g),
            };

        for id in (0..self.nodes.len()).rev() {
            if !req[id] {
                continue;
            }
            let Some(dy) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            let act = |k: usize| tape.outputs[node.inputs[k]].as_ref().expect("recorded");
            let want_in = |k: usize| req[node.inputs[k]];
            match &node.op {
                Op::Input => {}
                Op::Conv { weight, bias, spec } => {
                    let g = ops::conv2d_backward(
                        act(0),
                        &self.params[*weight].tensor,
                        &dy,
                        spec,
                        want_in(0),
                        self.params[*weight].trainable,
                        bias.is_some_and(|b| self.params[b].trainable),
                    );
                    if let Some(dw) = g.dweight {
                        param_grads.insert(*weight, dw);
                    }
                    if let (Some(db), Some(b)) = (g.dbias, bias) {
                        param_grads.insert(*b, db);
                    }
                    if let Some(dx) = g.dx {
                        accumulate(&mut grads, node.inputs[0], dx);
                    }
                }
                Op::ConvTranspose {
                    weight,
                    bias,
                    stride,
                } => {
                    let g = ops::conv_transpose2d_backward(
                        act(0),
                        &self.params[*weight].tensor,
                        &dy,
                        *stride,
                        want_in(0),
                        self.params[*weight].trainable,
                        bias.is_some_and(|b| self.params[b].trainable),
                    );
                    if let Some(dw) = g.dweight {
                        param_grads.insert(*weight, dw);
                    }
                    if let (Some(db), Some(b)) = (g.dbias, bias) {
                        param_grads.insert(*b, db);
                    }
                    if let Some(dx) = g.dx {
                        accumulate(&mut grads, node.inputs[0], dx);
                    }
                }
                Op::MaxPool(_) => {
                    if want_in(0) {
                        let Cache::ArgMax(arg) = &tape.caches[id] else {
                            unreachable!("max-pool cache")
                        };
                        let dx = ops::max_pool_backward(act(0).shape(), &dy, arg);
                        accumulate(&mut grads, node.inputs[0], dx);
                    }
                }
                Op::AvgPool(spec) => {
                    if want_in(0) {
                        let dx = ops::avg_pool_backward(act(0).shape(), &dy, spec);
                        accumulate(&mut grads, node.inputs[0], dx);
                    }
                }
                Op::BatchNorm { gamma, beta, .. } => {
                    let Cache::Norm(cache) = &tape.caches[id] else {
                        unreachable!("normalization cache")
                    };
                    let g = ops::batch_norm_backward(
                        &dy,
                        self.params[*gamma].tensor.data(),
                        cache,
                        want_in(0),
                    );
                    let c = g.dgamma.len();
                    if self.params[*gamma].trainable {
                        param_grads.insert(*gamma, Tensor::from_vec(&[c], g.dgamma)?);
                    }
                    if self.params[*beta].trainable {
                        param_grads.insert(*beta, Tensor::from_vec(&[c], g.dbeta)?);
                    }
                    if let Some(dx) = g.dx {
                        accumulate(&mut grads, node.inputs[0], dx);
                    }
                }
                Op::Relu => {
                    if want_in(0) {
                        let y = tape.outputs[id].as_ref().expect("recorded");
                        accumulate(&mut grads, node.inputs[0], ops::relu_backward(y, &dy));
                    }
                }
                Op::Sigmoid => {
                    if want_in(0) {
                        let y = tape.outputs[id].as_ref().expect("recorded");
                        accumulate(&mut grads, node.inputs[0], ops::sigmoid_backward(y, &dy));
                    }
                }
                Op::Concat => {
                    let channels: Vec<usize> = node
                        .inputs
                        .iter()
                        .map(|&i| self.nodes[i].channels)
                        .collect();
                    let parts = ops::concat_backward(&dy, &channels);
                    for (k, part) in parts.into_iter().enumerate() {
                        if want_in(k) {
                            accumulate(&mut grads, node.inputs[k], part);
                        }
                    }
                }
            }
        }

        Ok(Gradients {
            entries: param_grads
                .into_iter()
                .map(|(param, grad)| ParamGrad {
                    param,
                    name: self.params[param].name.clone(),
                    grad,
                })
                .collect(),
        })
    }

    /// Training forward, loss and backward in one call.
    pub fn gradients<L: Loss<T>>(
        &self,
        batch: &Tensor<T>,
        targets: &Tensor<T>,
        loss: &L,
    ) -> Result<GradientPass<T>> {
        let tape = self.forward_train(batch)?;
        let output = tape.output();
        if targets.shape() != output.shape() {
            return Err(Error::ShapeMismatch(format!(
                "targets {:?} vs output {:?}",
                targets.shape(),
                output.shape()
            )));
        }
        let value = loss.value(output.data(), targets.data())?;
        let d_out = Tensor::from_vec(
            output.shape(),
            loss.gradient(output.data(), targets.data())?,
        )?;
        let grads = self.backward(&tape, d_out)?;
        let batch_stats = self.batch_stats(&tape);
        Ok(GradientPass {
            loss: value,
            output: tape.output().clone(),
            grads,
            batch_stats,
        })
    }

    /// Statistics seen by every training-mode normalization layer on a tape.
    pub fn batch_stats(&self, tape: &Tape<T>) -> Vec<BatchStats<T>> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(id, node)| match (&node.op, &tape.caches[id]) {
                (Op::BatchNorm { mean, var, .. }, Cache::Norm(c)) if c.batch_stats => {
                    let [n, _, h, w] = c.x_hat.dims4();
                    Some(BatchStats {
                        mean_param: *mean,
                        var_param: *var,
                        mean: c.mean.clone(),
                        var: c.var.clone(),
                        count: n * h * w,
                    })
                }
                _ => None,
            })
            .collect()
    }

    /// Exponential moving update of the running statistics (unbiased variance).
    pub fn update_running_stats(&mut self, stats: &[BatchStats<T>]) {
        let m = T::lit(BN_MOMENTUM);
        let keep = T::one() - m;
        for s in stats {
            let correction = if s.count > 1 {
                T::lit(s.count as f64 / (s.count - 1) as f64)
            } else {
                T::one()
            };
            for (r, &b) in self.params[s.mean_param]
                .tensor
                .data_mut()
                .iter_mut()
                .zip(&s.mean)
            {
                *r = keep * *r + m * b;
            }
            for (r, &b) in self.params[s.var_param]
                .tensor
                .data_mut()
                .iter_mut()
                .zip(&s.var)
            {
                *r = keep * *r + m * b * correction;
            }
        }
    }

    /// Converts every tensor to another scalar type.
    pub fn cast<S: Scalar>(&self) -> Network<S> {
        Network {
            nodes: self.nodes.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                    role: p.role,
                    section: p.section,
                    trainable: p.trainable,
                })
                .collect(),
            output: self.output,
            input_size: self.input_size,
            marks: self.marks.clone(),
            config: self.config.clone(),
        }
    }
}

/// Incremental construction of a [`Network`]. Convolution kernels are drawn
/// He-uniform from a seeded generator in creation order; biases and shifts
/// start at zero, scales and running variances at one.
pub struct GraphBuilder<T> {
    nodes: Vec<Node>,
    params: Vec<Param<T>>,
    marks: BTreeMap<String, NodeId>,
    input_size: (usize, usize),
    rng: ChaCha8Rng,
    section: Section,
}

impl<T: Scalar> GraphBuilder<T> {
    pub fn new(input_channels: usize, input_size: (usize, usize), seed: u64) -> Self {
        GraphBuilder {
            nodes: vec![Node {
                name: "input".into(),
                op: Op::Input,
                inputs: vec![],
                channels: input_channels,
                scale: 1,
            }],
            params: Vec::new(),
            marks: BTreeMap::new(),
            input_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
            section: Section::Decoder,
        }
    }

    pub fn input(&self) -> NodeId {
        0
    }

    /// Section assigned to parameters created from now on.
    pub fn set_section(&mut self, section: Section) {
        self.section = section;
    }

    pub fn channels(&self, id: NodeId) -> usize {
        self.nodes[id].channels
    }

    pub fn mark(&mut self, name: &str, id: NodeId) {
        self.marks.insert(name.to_string(), id);
    }

    fn prefix(&self) -> &'static str {
        match self.section {
            Section::Encoder => "encoder",
            Section::Decoder => "decoder",
        }
    }

    fn add_param(&mut self, name: String, tensor: Tensor<T>, role: ParamRole) -> ParamId {
        debug_assert!(self.params.iter().all(|p| p.name != name), "{name}");
        self.params.push(Param {
            name,
            tensor,
            role,
            section: self.section,
            trainable: role == ParamRole::Weight,
        });
        self.params.len() - 1
    }

    fn he_uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let limit = (6.0 / fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::lit(self.rng.gen_range(-limit..limit)))
            .collect();
        Tensor::from_vec(shape, data).expect("shape")
    }

    fn push(
        &mut self,
        name: String,
        op: Op,
        inputs: Vec<NodeId>,
        channels: usize,
        scale: usize,
    ) -> NodeId {
        self.nodes.push(Node {
            name,
            op,
            inputs,
            channels,
            scale,
        });
        self.nodes.len() - 1
    }

    pub fn conv(
        &mut self,
        input: NodeId,
        name: &str,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        bias: bool,
    ) -> NodeId {
        let cin = self.nodes[input].channels;
        let full = format!("{}.{name}", self.prefix());
        let w = self.he_uniform(
            &[out_channels, cin, kernel.0, kernel.1],
            cin * kernel.0 * kernel.1,
        );
        let weight = self.add_param(format!("{full}.weight"), w, ParamRole::Weight);
        let bias = bias.then(|| {
            self.add_param(
                format!("{full}.bias"),
                Tensor::zeros(&[out_channels]),
                ParamRole::Weight,
            )
        });
        let scale = self.nodes[input].scale * stride;
        self.push(
            full,
            Op::Conv {
                weight,
                bias,
                spec: ConvSpec::same(kernel, stride),
            },
            vec![input],
            out_channels,
            scale,
        )
    }

    pub fn conv_transpose(
        &mut self,
        input: NodeId,
        name: &str,
        out_channels: usize,
        stride: usize,
    ) -> NodeId {
        let cin = self.nodes[input].channels;
        let full = format!("{}.{name}", self.prefix());
        let w = self.he_uniform(&[cin, out_channels, stride, stride], cin);
        let weight = self.add_param(format!("{full}.weight"), w, ParamRole::Weight);
        let bias = Some(self.add_param(
            format!("{full}.bias"),
            Tensor::zeros(&[out_channels]),
            ParamRole::Weight,
        ));
        let scale = self.nodes[input].scale / stride;
        self.push(
            full,
            Op::ConvTranspose {
                weight,
                bias,
                stride,
            },
            vec![input],
            out_channels,
            scale,
        )
    }

    pub fn batch_norm(&mut self, input: NodeId, name: &str) -> NodeId {
        let c = self.nodes[input].channels;
        let full = format!("{}.{name}", self.prefix());
        let gamma = self.add_param(
            format!("{full}.gamma"),
            Tensor::full(&[c], T::one()),
            ParamRole::Weight,
        );
        let beta = self.add_param(
            format!("{full}.beta"),
            Tensor::zeros(&[c]),
            ParamRole::Weight,
        );
        let mean = self.add_param(
            format!("{full}.running_mean"),
            Tensor::zeros(&[c]),
            ParamRole::RunningStat,
        );
        let var = self.add_param(
            format!("{full}.running_var"),
            Tensor::full(&[c], T::one()),
            ParamRole::RunningStat,
        );
        let scale = self.nodes[input].scale;
        self.push(
            full,
            Op::BatchNorm {
                gamma,
                beta,
                mean,
                var,
            },
            vec![input],
            c,
            scale,
        )
    }

    fn unary(&mut self, input: NodeId, name: &str, op: Op, stride: usize) -> NodeId {
        let c = self.nodes[input].channels;
        let scale = self.nodes[input].scale * stride;
        let full = format!("{}.{name}", self.prefix());
        self.push(full, op, vec![input], c, scale)
    }

    pub fn relu(&mut self, input: NodeId, name: &str) -> NodeId {
        self.unary(input, name, Op::Relu, 1)
    }

    pub fn sigmoid(&mut self, input: NodeId, name: &str) -> NodeId {
        self.unary(input, name, Op::Sigmoid, 1)
    }

    pub fn max_pool(&mut self, input: NodeId, name: &str, kernel: usize, stride: usize) -> NodeId {
        let spec = PoolSpec {
            kernel,
            stride,
            pad: (kernel - 1) / 2,
        };
        self.unary(input, name, Op::MaxPool(spec), stride)
    }

    pub fn avg_pool(&mut self, input: NodeId, name: &str, kernel: usize) -> NodeId {
        let spec = PoolSpec {
            kernel,
            stride: 1,
            pad: (kernel - 1) / 2,
        };
        self.unary(input, name, Op::AvgPool(spec), 1)
    }

    pub fn concat(&mut self, inputs: &[NodeId], name: &str) -> NodeId {
        let scale = self.nodes[inputs[0]].scale;
        assert!(
            inputs.iter().all(|&i| self.nodes[i].scale == scale),
            "concatenated inputs must share a resolution"
        );
        let c = inputs.iter().map(|&i| self.nodes[i].channels).sum();
        let full = format!("{}.{name}", self.prefix());
        self.push(full, Op::Concat, inputs.to_vec(), c, scale)
    }

    /// Convolution (no bias), normalization and rectification.
    pub fn conv_bn_relu(
        &mut self,
        input: NodeId,
        name: &str,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
    ) -> NodeId {
        let c = self.conv(
            input,
            &format!("{name}.conv"),
            out_channels,
            kernel,
            stride,
            false,
        );
        let b = self.batch_norm(c, &format!("{name}.bn"));
        self.relu(b, &format!("{name}.relu"))
    }

    pub fn finish(self, output: NodeId) -> Network<T> {
        Network {
            nodes: self.nodes,
            params: self.params,
            output,
            input_size: self.input_size,
            marks: self.marks,
            config: None,
        }
    }
}

#[cfg(test)]
mod tests;
