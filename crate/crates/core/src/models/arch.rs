//! Declarative layer tables for the four autoencoders and the discriminator.

use crate::numerics::{same_padding, Activation};
use crate::{Error, Result};
use std::fmt::{self, Write as _};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArchId {
    A1,
    A2,
    A3,
    A4,
    /// Discriminator used for adversarial fine-tuning.
    D,
}

impl ArchId {
    pub const AUTOENCODERS: [ArchId; 4] = [ArchId::A1, ArchId::A2, ArchId::A3, ArchId::A4];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchId::A1 => "A1",
            ArchId::A2 => "A2",
            ArchId::A3 => "A3",
            ArchId::A4 => "A4",
            ArchId::D => "D",
        }
    }

    pub fn is_autoencoder(self) -> bool {
        self != ArchId::D
    }
}

impl fmt::Display for ArchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A1" => Ok(ArchId::A1),
            "A2" => Ok(ArchId::A2),
            "A3" => Ok(ArchId::A3),
            "A4" => Ok(ArchId::A4),
            "D" => Ok(ArchId::D),
            other => Err(Error::InvalidArgument(format!(
                "unknown architecture id {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Deconv,
    Dense,
}

/// One row of a layer table. Within a layer the order is
/// linear op, then activation, then batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// Output channels (conv/deconv) or units (dense).
    pub filters: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub activation: Activation,
    pub batch_norm: bool,
}

impl LayerSpec {
    fn conv(
        name: &str,
        filters: usize,
        k: usize,
        stride: usize,
        activation: Activation,
        batch_norm: bool,
    ) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::Conv,
            filters,
            kernel: (k, k),
            stride,
            activation,
            batch_norm,
        }
    }

    fn deconv(
        name: &str,
        filters: usize,
        k: usize,
        stride: usize,
        activation: Activation,
        batch_norm: bool,
    ) -> Self {
        LayerSpec {
            kind: LayerKind::Deconv,
            ..Self::conv(name, filters, k, stride, activation, batch_norm)
        }
    }

    fn dense(name: &str, units: usize, activation: Activation) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::Dense,
            filters: units,
            kernel: (1, 1),
            stride: 1,
            activation,
            batch_norm: false,
        }
    }
}

/// Tunables not printed in the layer tables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArchOptions {
    pub leaky_slope: f64,
    /// Activation of the discriminator's unannotated stride-2 convs.
    pub downsample_activation: Activation,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl Default for ArchOptions {
    fn default() -> Self {
        ArchOptions {
            leaky_slope: 0.2,
            downsample_activation: Activation::Linear,
            bn_momentum: 0.99,
            bn_epsilon: 1e-3,
        }
    }
}

/// Per-sample extent `(h, w, c)`.
pub type Shape3 = (usize, usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureSpec {
    pub id: ArchId,
    pub input: Shape3,
    pub layers: Vec<LayerSpec>,
    /// Number of leading layers forming the encoder; `None` for the
    /// discriminator.
    pub bottleneck: Option<usize>,
    pub options: ArchOptions,
}

impl ArchitectureSpec {
    /// Output extent of every layer, in order.
    pub fn shapes(&self) -> Vec<Shape3> {
        let mut cur = self.input;
        let mut out = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            cur = match l.kind {
                LayerKind::Conv => (
                    same_padding(cur.0, l.kernel.0, l.stride).0,
                    same_padding(cur.1, l.kernel.1, l.stride).0,
                    l.filters,
                ),
                LayerKind::Deconv => (cur.0 * l.stride, cur.1 * l.stride, l.filters),
                LayerKind::Dense => (1, 1, l.filters),
            };
            out.push(cur);
        }
        out
    }

    /// Input extent of every layer, in order.
    pub fn input_shapes(&self) -> Vec<Shape3> {
        let mut v = vec![self.input];
        v.extend(self.shapes());
        v.pop();
        v
    }

    /// Bottleneck shape for autoencoders, output shape for the discriminator.
    pub fn feature_shape(&self) -> Shape3 {
        let shapes = self.shapes();
        match self.bottleneck {
            Some(b) => shapes[b - 1],
            None => *shapes.last().expect("non-empty layer table"),
        }
    }

    pub fn feature_dim(&self) -> usize {
        let (h, w, c) = self.feature_shape();
        h * w * c
    }

    pub fn encoder(&self) -> &[LayerSpec] {
        &self.layers[..self.bottleneck.unwrap_or(self.layers.len())]
    }

    pub fn decoder(&self) -> &[LayerSpec] {
        &self.layers[self.bottleneck.unwrap_or(self.layers.len())..]
    }

    /// Human-readable layer table.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "architecture {}  input {}x{}x{}",
            self.id, self.input.0, self.input.1, self.input.2
        );
        let _ = writeln!(
            s,
            "{:<8} {:<7} {:>7} {:>7} {:>6} {:<16} {:<3} {:>12} {:>10}",
            "layer", "kind", "filters", "kernel", "stride", "activation", "bn", "output", "params"
        );
        let inputs = self.input_shapes();
        for ((l, out), inp) in self.layers.iter().zip(self.shapes()).zip(inputs) {
            let act = match l.activation {
                Activation::LeakyRelu(a) => format!("leaky_relu({a})"),
                other => format!("{other:?}").to_lowercase(),
            };
            let _ = writeln!(
                s,
                "{:<8} {:<7} {:>7} {:>7} {:>6} {:<16} {:<3} {:>12} {:>10}",
                l.name,
                format!("{:?}", l.kind).to_lowercase(),
                l.filters,
                format!("{}x{}", l.kernel.0, l.kernel.1),
                l.stride,
                act,
                if l.batch_norm { "yes" } else { "no" },
                format!("{}x{}x{}", out.0, out.1, out.2),
                layer_params(l, inp),
            );
        }
        let _ = writeln!(
            s,
            "feature dim {}  trainable parameters {}",
            self.feature_dim(),
            param_count(self)
        );
        s
    }
}

pub fn build_spec(id: ArchId) -> ArchitectureSpec {
    build_spec_with(id, ArchOptions::default())
}

pub fn build_spec_with(id: ArchId, options: ArchOptions) -> ArchitectureSpec {
    use Activation::{Linear, Relu, Tanh};
    let (enc, dec, act): ([usize; 5], [usize; 4], Activation) = match id {
        ArchId::A1 => ([16, 32, 64, 128, 256], [256, 128, 64, 32], Relu),
        ArchId::A2 => ([16, 16, 32, 32, 128], [32, 32, 16, 16], Linear),
        ArchId::A3 => ([16, 16, 32, 32, 128], [64, 32, 32, 16], Linear),
        ArchId::A4 => ([16, 16, 32, 64, 128], [64, 32, 16, 16], Linear),
        ArchId::D => return discriminator(options),
    };
    let enc_kernels = [(6, 1), (5, 2), (4, 2), (3, 2), (2, 2)];
    let dec_kernels = [(2, 2), (3, 2), (4, 2), (5, 2)];
    let mut layers = Vec::with_capacity(10);
    for (i, (&f, &(k, s))) in enc.iter().zip(&enc_kernels).enumerate() {
        layers.push(LayerSpec::conv(
            &format!("conv{}", i + 1),
            f,
            k,
            s,
            act,
            i < 4,
        ));
    }
    for (i, (&f, &(k, s))) in dec.iter().zip(&dec_kernels).enumerate() {
        layers.push(LayerSpec::deconv(
            &format!("deconv{}", i + 1),
            f,
            k,
            s,
            act,
            true,
        ));
    }
    layers.push(LayerSpec::deconv("deconv5", 3, 6, 1, Tanh, false));
    ArchitectureSpec {
        id,
        input: (64, 64, 3),
        layers,
        bottleneck: Some(5),
        options,
    }
}

fn discriminator(options: ArchOptions) -> ArchitectureSpec {
    let leaky = Activation::LeakyRelu(options.leaky_slope);
    let down = options.downsample_activation;
    let layers = vec![
        LayerSpec::conv("conv1", 16, 5, 1, leaky, true),
        LayerSpec::conv("conv2", 16, 2, 2, down, false),
        LayerSpec::conv("conv3", 32, 4, 1, leaky, true),
        LayerSpec::conv("conv4", 32, 2, 2, down, false),
        LayerSpec::conv("conv5", 64, 3, 1, leaky, true),
        LayerSpec::conv("conv6", 64, 2, 2, leaky, true),
        LayerSpec::dense("fc1", 128, leaky),
        LayerSpec::dense("fc2", 1, Activation::Sigmoid),
    ];
    ArchitectureSpec {
        id: ArchId::D,
        input: (64, 64, 3),
        layers,
        bottleneck: None,
        options,
    }
}

/// Trainable parameters of one layer given its input extent.
pub fn layer_params(l: &LayerSpec, input: Shape3) -> usize {
    let (kh, kw) = l.kernel;
    let base = match l.kind {
        LayerKind::Conv | LayerKind::Deconv => kh * kw * input.2 * l.filters + l.filters,
        LayerKind::Dense => input.0 * input.1 * input.2 * l.filters + l.filters,
    };
    base + if l.batch_norm { 2 * l.filters } else { 0 }
}

/// Filters and biases plus the per-channel scale and shift of every batch
/// norm. Running statistics are not trainable.
pub fn param_count(spec: &ArchitectureSpec) -> usize {
    spec.layers
        .iter()
        .zip(spec.input_shapes())
        .map(|(l, inp)| layer_params(l, inp))
        .sum()
}
