//! Declarative layer tables for the generator, the global and local
//! discriminators, and the concatenator, plus conv-arithmetic helpers
//! (output sizes, receptive fields).

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Deconv,
    Fc,
    /// Final generator conv emitting the RGB image.
    Out,
    /// Feature concatenation marker in the concatenator; holds no weights.
    Concat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    None,
}

/// Layer stride: 2x downsampling, identity, or 2x upsampling (transposed
/// convolution, written as stride 1/2).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stride {
    One,
    Two,
    Half,
}

impl Stride {
    pub fn as_f64(self) -> f64 {
        match self {
            Stride::One => 1.0,
            Stride::Two => 2.0,
            Stride::Half => 0.5,
        }
    }
}

impl fmt::Display for Stride {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stride::One => write!(f, "1"),
            Stride::Two => write!(f, "2"),
            Stride::Half => write!(f, "1/2"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Filter size in pixels (0 for FC/concat rows).
    pub filter: usize,
    /// Dilation rate.
    pub dilation: usize,
    pub stride: Stride,
    /// Number of output channels (conv) or units (FC/concat).
    pub outputs: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn conv(filter: usize, dilation: usize, stride: Stride, outputs: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv,
            filter,
            dilation,
            stride,
            outputs,
            activation: Activation::Relu,
        }
    }

    /// Zero padding that preserves spatial size at stride 1 and halves or
    /// doubles it exactly at stride 2 / 1⁄2 (even inputs).
    pub fn padding(&self) -> usize {
        match self.kind {
            LayerKind::Conv | LayerKind::Out => (self.filter - 1) * self.dilation / 2,
            LayerKind::Deconv => (self.filter - 2) / 2,
            LayerKind::Fc | LayerKind::Concat => 0,
        }
    }

    pub fn is_spatial(&self) -> bool {
        matches!(self.kind, LayerKind::Conv | LayerKind::Deconv | LayerKind::Out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkRole {
    Generator,
    GlobalDisc,
    LocalDisc,
    Concatenator,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub role: NetworkRole,
    pub layers: Vec<LayerSpec>,
}

/// The 10-layer encoder-decoder generator. `dilations` sets the rates of the
/// three dilated 3x3 layers in the middle of the encoder.
pub fn generator_spec(dilations: [usize; 3]) -> NetworkSpec {
    use Stride::*;
    let mut layers = vec![
        LayerSpec::conv(5, 1, One, 64),
        LayerSpec::conv(3, 1, Two, 128),
        LayerSpec::conv(3, 1, One, 256),
        LayerSpec::conv(3, dilations[0], One, 256),
        LayerSpec::conv(3, dilations[1], One, 256),
        LayerSpec::conv(3, dilations[2], One, 256),
        LayerSpec::conv(3, 1, One, 256),
        LayerSpec {
            kind: LayerKind::Deconv,
            filter: 4,
            dilation: 1,
            stride: Half,
            outputs: 128,
            activation: Activation::Relu,
        },
        LayerSpec::conv(3, 1, One, 64),
    ];
    layers.push(LayerSpec {
        kind: LayerKind::Out,
        filter: 3,
        dilation: 1,
        stride: One,
        outputs: 3,
        activation: Activation::Sigmoid,
    });
    NetworkSpec {
        role: NetworkRole::Generator,
        layers,
    }
}

/// The three discriminator-side tables: global tower, local tower (shared
/// between the two image halves), and the concatenator that joins the three
/// 512-wide feature vectors into one probability.
pub fn discriminator_specs() -> (NetworkSpec, NetworkSpec, NetworkSpec) {
    use Stride::Two;
    let global = NetworkSpec {
        role: NetworkRole::GlobalDisc,
        layers: vec![
            LayerSpec::conv(5, 1, Two, 32),
            LayerSpec::conv(5, 1, Two, 64),
            LayerSpec::conv(5, 1, Two, 64),
            LayerSpec::conv(5, 1, Two, 64),
            LayerSpec::conv(5, 1, Two, 64),
            fc(512, Activation::Relu),
        ],
    };
    let local = NetworkSpec {
        role: NetworkRole::LocalDisc,
        layers: vec![
            LayerSpec::conv(5, 1, Two, 32),
            LayerSpec::conv(5, 1, Two, 64),
            LayerSpec::conv(5, 1, Two, 64),
            LayerSpec::conv(5, 1, Two, 64),
            fc(512, Activation::Relu),
        ],
    };
    let concat = concatenator_spec(3 * 512);
    (global, local, concat)
}

/// Concatenator over `width` joined features: a marker row then FC to a
/// single sigmoid probability.
pub fn concatenator_spec(width: usize) -> NetworkSpec {
    NetworkSpec {
        role: NetworkRole::Concatenator,
        layers: vec![
            LayerSpec {
                kind: LayerKind::Concat,
                filter: 0,
                dilation: 1,
                stride: Stride::One,
                outputs: width,
                activation: Activation::None,
            },
            fc(1, Activation::Sigmoid),
        ],
    }
}

fn fc(outputs: usize, activation: Activation) -> LayerSpec {
    LayerSpec {
        kind: LayerKind::Fc,
        filter: 0,
        dilation: 1,
        stride: Stride::One,
        outputs,
        activation,
    }
}

/// Receptive-field size (in input pixels) after each convolutional layer,
/// via the recurrence r += (f-1)*eta*jump; jump *= s. Stops at the first
/// non-spatial layer.
pub fn receptive_field(spec: &NetworkSpec) -> Vec<f64> {
    let mut r = 1.0;
    let mut jump = 1.0;
    let mut out = Vec::new();
    for layer in &spec.layers {
        if !layer.is_spatial() {
            break;
        }
        r += (layer.filter as f64 - 1.0) * layer.dilation as f64 * jump;
        jump *= layer.stride.as_f64();
        out.push(r);
    }
    out
}

impl NetworkSpec {
    /// Spatial output size of the convolutional prefix for a given input.
    pub fn conv_output_size(
        &self,
        channels: usize,
        height: usize,
        width: usize,
    ) -> Result<(usize, usize, usize)> {
        let (mut c, mut h, mut w) = (channels, height, width);
        for layer in &self.layers {
            if !layer.is_spatial() {
                break;
            }
            match layer.stride {
                Stride::One => {}
                Stride::Two => {
                    let eff = (layer.filter - 1) * layer.dilation + 1;
                    h = (h + 2 * layer.padding() - eff) / 2 + 1;
                    w = (w + 2 * layer.padding() - eff) / 2 + 1;
                }
                Stride::Half => {
                    if h == 0 || w == 0 {
                        return Err(Error::Shape("empty feature map before deconv".into()));
                    }
                    h *= 2;
                    w *= 2;
                }
            }
            if h == 0 || w == 0 {
                return Err(Error::Shape(format!(
                    "feature map collapsed to {h}x{w} inside {:?}",
                    self.role
                )));
            }
            c = layer.outputs;
        }
        Ok((c, h, w))
    }

    /// Render the layer table as fixed-width text.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("{:?}\n", self.role));
        s.push_str("type    f    eta  s    n\n");
        for layer in &self.layers {
            let kind = match layer.kind {
                LayerKind::Conv => "CONV",
                LayerKind::Deconv => "DECONV",
                LayerKind::Fc => "FC",
                LayerKind::Out => "OUT",
                LayerKind::Concat => "concat",
            };
            let f = if layer.filter == 0 {
                "-".to_string()
            } else {
                layer.filter.to_string()
            };
            let eta = if layer.is_spatial() {
                layer.dilation.to_string()
            } else {
                "-".to_string()
            };
            let stride = if layer.is_spatial() {
                layer.stride.to_string()
            } else {
                "-".to_string()
            };
            s.push_str(&format!(
                "{kind:<7} {f:<4} {eta:<4} {stride:<4} {}\n",
                layer.outputs
            ));
        }
        s
    }
}
