//! Layered network with optional skip concatenations.
//!
//! Node `i` applies `layers[i]` to the output of node `i - 1` (node 0 reads
//! the network input). A `ConcatSkip { from }` node additionally reads the
//! output of the earlier node `from`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layer::{Layer, LayerKind, ReluMode};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    Classifier,
    Unet,
}

impl Topology {
    pub fn name(&self) -> &'static str {
        match self {
            Topology::Classifier => "classifier",
            Topology::Unet => "unet",
        }
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub input: Tensor,
    pub outputs: Vec<Tensor>,
    argmax: Vec<Option<Vec<usize>>>,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        self.outputs.last().unwrap_or(&self.input)
    }
}

/// Result of a backward pass.
#[derive(Debug, Clone)]
pub struct Backprop {
    pub input_grad: Tensor,
    /// Gradient with respect to each node's output; `None` for nodes the
    /// gradient never reached (those after the starting node).
    pub node_grads: Vec<Option<Tensor>>,
}

#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
    topology: Topology,
    input_shape: [usize; 3],
    output_shape: Vec<usize>,
    trace: Option<Trace>,
}

impl Network {
    /// Builds and validates a network; weights are Glorot-initialized from
    /// `seed`.
    pub fn new(kinds: &[LayerKind], topology: Topology, input_shape: [usize; 3], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers: Vec<Layer> = kinds
            .iter()
            .map(|&k| {
                let mut l = Layer::new(k);
                l.init(&mut rng);
                l
            })
            .collect();
        Self::from_layers(layers, topology, input_shape)
    }

    /// Validates shapes and topology constraints for already-populated layers.
    pub fn from_layers(layers: Vec<Layer>, topology: Topology, input_shape: [usize; 3]) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParameter("network has no layers".into()));
        }
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate() {
            let input = if i == 0 { input_shape.to_vec() } else { shapes[i - 1].clone() };
            let skip = match layer.kind {
                LayerKind::ConcatSkip { from } => {
                    if from + 1 >= i {
                        return Err(Error::InvalidParameter(format!(
                            "skip at node {i} must reference an earlier, non-adjacent node, got {from}"
                        )));
                    }
                    Some(shapes[from].as_slice())
                }
                _ => None,
            };
            for (p, s) in layer.params.iter().zip(layer.kind.param_shapes()) {
                if p.shape() != s.as_slice() {
                    return Err(Error::shape(format!("{s:?}"), format!("{:?}", p.shape())));
                }
            }
            shapes.push(layer.output_shape(&input, skip)?);
        }
        let output_shape = shapes.last().cloned().unwrap_or_default();
        if layers.last().map(|l| l.kind) != Some(LayerKind::Sigmoid) {
            return Err(Error::InvalidParameter("final layer must be a sigmoid".into()));
        }
        match topology {
            Topology::Classifier => {
                if output_shape != [1] {
                    return Err(Error::shape("classifier output [1]", format!("{output_shape:?}")));
                }
            }
            Topology::Unet => {
                if output_shape != [1, input_shape[1], input_shape[2]] {
                    return Err(Error::shape(
                        format!("[1, {}, {}]", input_shape[1], input_shape[2]),
                        format!("{output_shape:?}"),
                    ));
                }
                let downs = layers.iter().filter(|l| l.kind == LayerKind::MaxPool2).count();
                let ups = layers.iter().filter(|l| l.kind == LayerKind::Upsample2).count();
                let skips = layers.iter().filter(|l| matches!(l.kind, LayerKind::ConcatSkip { .. })).count();
                if downs != ups || skips != downs {
                    return Err(Error::InvalidParameter(format!(
                        "unet needs mirrored levels: {downs} pools, {ups} upsamples, {skips} skips"
                    )));
                }
            }
        }
        Ok(Self {
            layers,
            topology,
            input_shape,
            output_shape,
            trace: None,
        })
    }

    /// Two-level encoder (8, 16 channels), 32-channel bottleneck, mirrored
    /// decoder with nearest upsampling and skip concatenations, 1x1 output
    /// convolution and sigmoid.
    pub fn toy_unet(size: usize, seed: u64) -> Result<Self> {
        use LayerKind::*;
        let kinds = [
            Conv2d { in_ch: 1, out_ch: 8, k: 3 },
            Relu, // 1: level-1 features
            MaxPool2,
            Conv2d { in_ch: 8, out_ch: 16, k: 3 },
            Relu, // 4: level-2 features
            MaxPool2,
            Conv2d { in_ch: 16, out_ch: 32, k: 3 },
            Relu,
            Upsample2,
            ConcatSkip { from: 4 },
            Conv2d { in_ch: 48, out_ch: 16, k: 3 },
            Relu,
            Upsample2,
            ConcatSkip { from: 1 },
            Conv2d { in_ch: 24, out_ch: 8, k: 3 },
            Relu,
            Conv2d { in_ch: 8, out_ch: 1, k: 1 },
            Sigmoid,
        ];
        Self::new(&kinds, Topology::Unet, [1, size, size], seed)
    }

    /// Three conv+relu+maxpool stages (8, 16, 16 channels), global average
    /// pooling, dense, sigmoid.
    pub fn toy_classifier(size: usize, seed: u64) -> Result<Self> {
        use LayerKind::*;
        let kinds = [
            Conv2d { in_ch: 1, out_ch: 8, k: 3 },
            Relu,
            MaxPool2,
            Conv2d { in_ch: 8, out_ch: 16, k: 3 },
            Relu,
            MaxPool2,
            Conv2d { in_ch: 16, out_ch: 16, k: 3 },
            Relu,
            MaxPool2,
            GlobalAvgPool,
            Dense { inputs: 16, outputs: 1 },
            Sigmoid,
        ];
        Self::new(&kinds, Topology::Classifier, [1, size, size], seed)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Layer::n_params).sum()
    }

    /// `(source node, concatenating node)` pairs.
    pub fn skip_links(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| match l.kind {
                LayerKind::ConcatSkip { from } => Some((from, i)),
                _ => None,
            })
            .collect()
    }

    /// Node whose output is the pre-sigmoid score.
    pub fn logit_node(&self) -> usize {
        self.layers.len() - 2
    }

    /// Feature maps of the last convolution: its relu output when a relu
    /// follows directly, else the convolution output itself.
    pub fn last_conv_features(&self) -> Option<usize> {
        let conv = self
            .layers
            .iter()
            .rposition(|l| matches!(l.kind, LayerKind::Conv2d { .. }))?;
        match self.layers.get(conv + 1) {
            Some(l) if l.kind == LayerKind::Relu => Some(conv + 1),
            _ => Some(conv),
        }
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape() != self.input_shape {
            return Err(Error::shape(format!("{:?}", self.input_shape), format!("{:?}", input.shape())));
        }
        Ok(())
    }

    /// Forward pass keeping every intermediate output.
    pub fn trace(&self, input: &Tensor) -> Result<Trace> {
        self.check_input(input)?;
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        let mut argmax = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let x = if i == 0 { input } else { &outputs[i - 1] };
            let skip = match layer.kind {
                LayerKind::ConcatSkip { from } => Some(&outputs[from]),
                _ => None,
            };
            let (y, idx) = layer.forward(x, skip)?;
            if !y.is_finite() {
                return Err(Error::NonFinite { layer: i });
            }
            outputs.push(y);
            argmax.push(idx);
        }
        Ok(Trace {
            input: input.clone(),
            outputs,
            argmax,
        })
    }

    /// Inference; does not touch any stored state.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.trace(input)?.outputs.pop().expect("at least one layer"))
    }

    /// Backpropagates `upstream` (the gradient with respect to the output of
    /// node `from_node`) down to the input. Parameter gradients are added to
    /// `param_sink[i]` for each layer `i` when a sink is given.
    pub fn backprop(
        &self,
        trace: &Trace,
        from_node: usize,
        upstream: &Tensor,
        mode: ReluMode,
        mut param_sink: Option<&mut [Vec<Tensor>]>,
    ) -> Result<Backprop> {
        if from_node >= self.layers.len() || trace.outputs.len() != self.layers.len() {
            return Err(Error::InvalidParameter(format!("no node {from_node} in trace")));
        }
        if upstream.shape() != trace.outputs[from_node].shape() {
            return Err(Error::shape(
                format!("{:?}", trace.outputs[from_node].shape()),
                format!("{:?}", upstream.shape()),
            ));
        }
        let mut node_grads: Vec<Option<Tensor>> = vec![None; self.layers.len()];
        node_grads[from_node] = Some(upstream.clone());
        let mut input_grad = Tensor::zeros(trace.input.shape());
        for i in (0..=from_node).rev() {
            let Some(g) = node_grads[i].clone() else { continue };
            let layer = &self.layers[i];
            let x = if i == 0 { &trace.input } else { &trace.outputs[i - 1] };
            let sink = param_sink.as_deref_mut().map(|s| s[i].as_mut_slice());
            let (gx, gskip) = layer.backward(x, &trace.outputs[i], trace.argmax[i].as_deref(), &g, mode, sink)?;
            if i == 0 {
                input_grad = gx;
            } else {
                accumulate(&mut node_grads[i - 1], gx);
            }
            if let (LayerKind::ConcatSkip { from }, Some(gs)) = (layer.kind, gskip) {
                accumulate(&mut node_grads[from], gs);
            }
        }
        Ok(Backprop { input_grad, node_grads })
    }

    /// Forward pass that remembers its trace for a following [`backward`].
    ///
    /// [`backward`]: Network::backward
    pub fn forward_train(&mut self, input: &Tensor) -> Result<Tensor> {
        let trace = self.trace(input)?;
        let out = trace.output().clone();
        self.trace = Some(trace);
        Ok(out)
    }

    /// Backpropagates `upstream` (gradient of the loss with respect to the
    /// network output) through the remembered trace, adding parameter
    /// gradients into each layer's `grads`. Returns the input gradient.
    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let trace = self.trace.take().ok_or(Error::BackwardBeforeForward)?;
        let mut sink: Vec<Vec<Tensor>> = self.layers.iter_mut().map(|l| std::mem::take(&mut l.grads)).collect();
        let last = self.layers.len() - 1;
        let result = self.backprop(&trace, last, upstream, ReluMode::Standard, Some(&mut sink));
        for (layer, grads) in self.layers.iter_mut().zip(sink) {
            layer.grads = grads;
        }
        self.trace = Some(trace);
        Ok(result?.input_grad)
    }

    pub fn zero_grads(&mut self) {
        self.layers.iter_mut().for_each(Layer::zero_grads);
    }

    /// Drops the remembered trace.
    pub fn clear_trace(&mut self) {
        self.trace = None;
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}
