//! Layer graphs for the classifier and the addition-skip reference network.
//!
//! A [`ModelGraph`] is an immutable description: layer list, parameter
//! registry and tap names. Weights and moving statistics live in a
//! [`Session`], so one graph can back several concurrent sessions.

mod reference;
mod session;
mod vdcnet;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use reference::{build_reference_net, ReferenceConfig};
pub use session::{Forward, Session};
pub use vdcnet::{build_conv_block, build_vdcnet, BlockWidths, VdcNetConfig};

use crate::ops::{PoolMode, DEFAULT_EPSILON, DEFAULT_MOMENTUM};

/// Tap holding the rectified output of the last convolution.
pub const LAST_CONV_TAP: &str = "last_conv";

/// Index into a graph's parameter registry.
pub type ParamId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Weight,
    Bias,
    Gamma,
    Beta,
    MovingMean,
    MovingVariance,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::MovingMean | ParamKind::MovingVariance)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    /// Fan-in used for initialization of weights.
    pub fan_in: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Input,
    Conv {
        filters: usize,
        kernel: usize,
        weight: ParamId,
        bias: ParamId,
    },
    BatchNorm {
        gamma: ParamId,
        beta: ParamId,
        mean: ParamId,
        variance: ParamId,
    },
    Relu,
    MaxPool {
        pool: usize,
    },
    ConcatSkip,
    AddSkip,
    GlobalPool {
        mode: PoolMode,
    },
    Dense {
        units: usize,
        weight: ParamId,
        bias: ParamId,
    },
    Sigmoid,
}

impl LayerKind {
    pub fn label(&self) -> &'static str {
        match self {
            LayerKind::Input => "input",
            LayerKind::Conv { .. } => "conv",
            LayerKind::BatchNorm { .. } => "bn",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool { .. } => "maxpool",
            LayerKind::ConcatSkip => "concat-skip",
            LayerKind::AddSkip => "add-skip",
            LayerKind::GlobalPool { .. } => "global-pool",
            LayerKind::Dense { .. } => "dense",
            LayerKind::Sigmoid => "sigmoid",
        }
    }

    fn params(&self) -> Vec<ParamId> {
        match *self {
            LayerKind::Conv { weight, bias, .. } | LayerKind::Dense { weight, bias, .. } => {
                vec![weight, bias]
            }
            LayerKind::BatchNorm {
                gamma,
                beta,
                mean,
                variance,
            } => vec![gamma, beta, mean, variance],
            _ => vec![],
        }
    }
}

/// One node of the layer graph.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// Indices of the layers feeding this one.
    pub inputs: Vec<usize>,
    /// Per-sample output shape: `[C, H, W]` for maps, `[D]` after global pooling.
    pub out_shape: Vec<usize>,
    pub tap: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnSettings {
    pub momentum: f64,
    pub epsilon: f64,
}

impl Default for BnSettings {
    fn default() -> Self {
        BnSettings {
            momentum: DEFAULT_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph {
    pub arch: String,
    pub input_channels: usize,
    pub input_size: usize,
    pub layers: Vec<LayerSpec>,
    pub params: Vec<ParamSpec>,
    pub taps: BTreeMap<String, usize>,
    pub head_pool: PoolMode,
    pub bn: BnSettings,
    /// Index of the logit (dense) layer.
    pub logit_layer: usize,
}

impl ModelGraph {
    pub fn conv_count(&self) -> usize {
        self.count(|k| matches!(k, LayerKind::Conv { .. }))
    }

    pub fn maxpool_count(&self) -> usize {
        self.count(|k| matches!(k, LayerKind::MaxPool { .. }))
    }

    pub fn bn_count(&self) -> usize {
        self.count(|k| matches!(k, LayerKind::BatchNorm { .. }))
    }

    pub fn count(&self, pred: impl Fn(&LayerKind) -> bool) -> usize {
        self.layers.iter().filter(|l| pred(&l.kind)).count()
    }

    pub fn tap_layer(&self, name: &str) -> Option<&LayerSpec> {
        self.taps.get(name).map(|&i| &self.layers[i])
    }

    /// Kinds of the layers after the last-conv tap, e.g. `[global-pool, dense, sigmoid]`.
    pub fn head_kinds(&self) -> Vec<&'static str> {
        let tap = self.taps.get(LAST_CONV_TAP).copied().unwrap_or(0);
        self.layers[tap + 1..].iter().map(|l| l.kind.label()).collect()
    }

    /// True when the head is exactly global average pooling, one dense unit and a sigmoid.
    pub fn has_gap_dense_head(&self) -> bool {
        self.head_pool == PoolMode::Avg
            && self.head_kinds() == ["global-pool", "dense", "sigmoid"]
            && matches!(self.layers[self.logit_layer].kind, LayerKind::Dense { units: 1, .. })
    }

    /// Output channel counts of every concat-skip, in graph order.
    pub fn concat_channels(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::ConcatSkip))
            .map(|l| l.out_shape[0])
            .collect()
    }

    pub fn layer_param_count(&self, layer: &LayerSpec) -> usize {
        layer
            .kind
            .params()
            .into_iter()
            .filter(|&p| self.params[p].kind.trainable())
            .map(|p| self.params[p].shape.iter().product::<usize>())
            .sum()
    }

    /// Human-readable layer table followed by summary lines.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model {} (input {}x{}x{})", self.arch, self.input_channels, self.input_size, self.input_size);
        let _ = writeln!(s, "{:<4} {:<28} {:<12} {:<18} {:>12}  tap", "#", "layer", "kind", "output", "params");
        for (i, l) in self.layers.iter().enumerate() {
            let shape = l
                .out_shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("x");
            let _ = writeln!(
                s,
                "{:<4} {:<28} {:<12} {:<18} {:>12}  {}",
                i,
                l.name,
                l.kind.label(),
                shape,
                self.layer_param_count(l),
                l.tap.as_deref().unwrap_or("")
            );
        }
        let _ = writeln!(s, "conv layers: {}", self.conv_count());
        let _ = writeln!(s, "maxpool layers: {}", self.maxpool_count());
        let _ = writeln!(s, "batch norm layers: {}", self.bn_count());
        let _ = writeln!(s, "concat skips: {}", self.count(|k| matches!(k, LayerKind::ConcatSkip)));
        let _ = writeln!(s, "add skips: {}", self.count(|k| matches!(k, LayerKind::AddSkip)));
        let _ = writeln!(
            s,
            "head: {} ({})",
            self.head_kinds().join(" -> "),
            match self.head_pool {
                PoolMode::Avg => "avg",
                PoolMode::Max => "max",
            }
        );
        if let Some(t) = self.tap_layer(LAST_CONV_TAP) {
            let _ = writeln!(s, "last_conv tap: {:?}", t.out_shape);
        }
        let _ = writeln!(s, "trainable params: {}", count_params(self));
        s
    }
}

/// Trainable parameter count: weights, biases, gamma and beta (not moving statistics).
pub fn count_params(graph: &ModelGraph) -> usize {
    graph
        .params
        .iter()
        .filter(|p| p.kind.trainable())
        .map(|p| p.shape.iter().product::<usize>())
        .sum()
}

/// Incremental builder that tracks shapes and registers parameters.
pub(crate) struct GraphBuilder {
    layers: Vec<LayerSpec>,
    params: Vec<ParamSpec>,
    taps: BTreeMap<String, usize>,
}

impl GraphBuilder {
    pub fn new(channels: usize, size: usize) -> Self {
        GraphBuilder {
            layers: vec![LayerSpec {
                name: "input".into(),
                kind: LayerKind::Input,
                inputs: vec![],
                out_shape: vec![channels, size, size],
                tap: None,
            }],
            params: vec![],
            taps: BTreeMap::new(),
        }
    }

    pub fn shape(&self, layer: usize) -> &[usize] {
        &self.layers[layer].out_shape
    }

    pub fn channels(&self, layer: usize) -> usize {
        self.layers[layer].out_shape[0]
    }

    fn param(&mut self, name: String, shape: Vec<usize>, kind: ParamKind, fan_in: usize) -> ParamId {
        self.params.push(ParamSpec {
            name,
            shape,
            kind,
            fan_in,
        });
        self.params.len() - 1
    }

    fn push(&mut self, name: String, kind: LayerKind, inputs: Vec<usize>, out_shape: Vec<usize>) -> usize {
        self.layers.push(LayerSpec {
            name,
            kind,
            inputs,
            out_shape,
            tap: None,
        });
        self.layers.len() - 1
    }

    pub fn tap(&mut self, layer: usize, name: &str) {
        self.layers[layer].tap = Some(name.to_string());
        self.taps.insert(name.to_string(), layer);
    }

    pub fn conv(&mut self, x: usize, name: &str, filters: usize, kernel: usize) -> usize {
        let (c, h, w) = (self.shape(x)[0], self.shape(x)[1], self.shape(x)[2]);
        let fan_in = c * kernel * kernel;
        let weight = self.param(format!("{name}.weight"), vec![filters, c, kernel, kernel], ParamKind::Weight, fan_in);
        let bias = self.param(format!("{name}.bias"), vec![filters], ParamKind::Bias, fan_in);
        self.push(
            name.to_string(),
            LayerKind::Conv {
                filters,
                kernel,
                weight,
                bias,
            },
            vec![x],
            vec![filters, h, w],
        )
    }

    pub fn bn(&mut self, x: usize, name: &str) -> usize {
        let c = self.channels(x);
        let gamma = self.param(format!("{name}.gamma"), vec![c], ParamKind::Gamma, 0);
        let beta = self.param(format!("{name}.beta"), vec![c], ParamKind::Beta, 0);
        let mean = self.param(format!("{name}.moving_mean"), vec![c], ParamKind::MovingMean, 0);
        let variance = self.param(format!("{name}.moving_variance"), vec![c], ParamKind::MovingVariance, 0);
        let shape = self.shape(x).to_vec();
        self.push(
            name.to_string(),
            LayerKind::BatchNorm {
                gamma,
                beta,
                mean,
                variance,
            },
            vec![x],
            shape,
        )
    }

    pub fn relu(&mut self, x: usize, name: &str) -> usize {
        let shape = self.shape(x).to_vec();
        self.push(name.to_string(), LayerKind::Relu, vec![x], shape)
    }

    /// BN → ReLU → conv, the pre-activation unit used throughout both networks.
    pub fn bn_relu_conv(&mut self, x: usize, name: &str, filters: usize, kernel: usize) -> usize {
        let b = self.bn(x, &format!("{name}.bn"));
        let r = self.relu(b, &format!("{name}.relu"));
        self.conv(r, &format!("{name}.conv"), filters, kernel)
    }

    pub fn maxpool(&mut self, x: usize, name: &str, pool: usize) -> usize {
        let s = self.shape(x);
        let shape = vec![s[0], s[1] / pool, s[2] / pool];
        self.push(name.to_string(), LayerKind::MaxPool { pool }, vec![x], shape)
    }

    pub fn concat(&mut self, a: usize, b: usize, name: &str) -> usize {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let shape = vec![sa[0] + sb[0], sa[1], sa[2]];
        self.push(name.to_string(), LayerKind::ConcatSkip, vec![a, b], shape)
    }

    pub fn add(&mut self, a: usize, b: usize, name: &str) -> usize {
        let shape = self.shape(a).to_vec();
        self.push(name.to_string(), LayerKind::AddSkip, vec![a, b], shape)
    }

    /// Global pool → dense(1) → sigmoid. Returns the index of the dense layer.
    pub fn head(&mut self, x: usize, mode: PoolMode) -> usize {
        let c = self.channels(x);
        let g = self.push("head.pool".into(), LayerKind::GlobalPool { mode }, vec![x], vec![c]);
        let weight = self.param("head.dense.weight".into(), vec![c, 1], ParamKind::Weight, c);
        let bias = self.param("head.dense.bias".into(), vec![1], ParamKind::Bias, c);
        let d = self.push(
            "head.dense".into(),
            LayerKind::Dense {
                units: 1,
                weight,
                bias,
            },
            vec![g],
            vec![1],
        );
        self.push("head.sigmoid".into(), LayerKind::Sigmoid, vec![d], vec![1]);
        d
    }

    pub fn finish(
        self,
        arch: &str,
        head_pool: PoolMode,
        bn: BnSettings,
        logit_layer: usize,
    ) -> ModelGraph {
        let input = &self.layers[0].out_shape;
        ModelGraph {
            arch: arch.to_string(),
            input_channels: input[0],
            input_size: input[1],
            layers: self.layers,
            params: self.params,
            taps: self.taps,
            head_pool,
            bn,
            logit_layer,
        }
    }
}
