//! Learnable weights for a [`NetworkSpec`]: construction, deterministic
//! fan-in-scaled initialization, flat access for the optimizer, and hashing.

use ndarray::{Array1, Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{Activation, LayerKind, NetworkSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    /// Weights (out, in, f, f), bias (out).
    Conv { w: Array4<f64>, b: Array1<f64> },
    /// Weights (in, out, f, f), bias (out).
    Deconv { w: Array4<f64>, b: Array1<f64> },
    /// Weights (out, in), bias (out).
    Fc { w: Array2<f64>, b: Array1<f64> },
    /// Concatenation marker; no weights.
    Concat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub layers: Vec<LayerParams>,
}

/// Input shape tracked while sizing layers: feature maps or a flat vector.
#[derive(Debug, Clone, Copy)]
enum FanState {
    Spatial { c: usize, h: usize, w: usize },
    Flat(usize),
}

/// Deterministic parameter initialization: zero-mean normals scaled by
/// fan-in (He for ReLU layers, Xavier otherwise), zero biases.
pub fn init_params(
    spec: &NetworkSpec,
    input: (usize, usize, usize),
    seed: u64,
) -> Result<Params> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = FanState::Spatial {
        c: input.0,
        h: input.1,
        w: input.2,
    };
    let mut layers = Vec::with_capacity(spec.layers.len());
    for layer in &spec.layers {
        match layer.kind {
            LayerKind::Conv | LayerKind::Out | LayerKind::Deconv => {
                let FanState::Spatial { c, h, w } = state else {
                    return Err(Error::Config(
                        "convolution after a flat layer is not supported".into(),
                    ));
                };
                let f = layer.filter;
                let n = layer.outputs;
                let fan_in = c * f * f;
                let std = init_std(fan_in, layer.activation);
                let b = Array1::zeros(n);
                let (weights, nh, nw) = match layer.kind {
                    LayerKind::Deconv => {
                        let w4 = Array4::from_shape_simple_fn((c, n, f, f), || {
                            normal(&mut rng) * std
                        });
                        (LayerParams::Deconv { w: w4, b }, h * 2, w * 2)
                    }
                    _ => {
                        let w4 = Array4::from_shape_simple_fn((n, c, f, f), || {
                            normal(&mut rng) * std
                        });
                        let eff = (f - 1) * layer.dilation + 1;
                        let s = match layer.stride {
                            super::spec::Stride::Two => 2,
                            _ => 1,
                        };
                        let nh = (h + 2 * layer.padding() - eff) / s + 1;
                        let nw = (w + 2 * layer.padding() - eff) / s + 1;
                        (LayerParams::Conv { w: w4, b }, nh, nw)
                    }
                };
                layers.push(weights);
                state = FanState::Spatial { c: n, h: nh, w: nw };
            }
            LayerKind::Fc => {
                let fan_in = match state {
                    FanState::Spatial { c, h, w } => c * h * w,
                    FanState::Flat(d) => d,
                };
                let n = layer.outputs;
                let std = init_std(fan_in, layer.activation);
                let w2 =
                    Array2::from_shape_simple_fn((n, fan_in), || normal(&mut rng) * std);
                layers.push(LayerParams::Fc {
                    w: w2,
                    b: Array1::zeros(n),
                });
                state = FanState::Flat(n);
            }
            LayerKind::Concat => {
                let width = match state {
                    FanState::Spatial { c, h, w } => c * h * w,
                    FanState::Flat(d) => d,
                };
                if width != layer.outputs {
                    return Err(Error::Config(format!(
                        "concat row expects width {}, got {width}",
                        layer.outputs
                    )));
                }
                layers.push(LayerParams::Concat);
                state = FanState::Flat(width);
            }
        }
    }
    Ok(Params { layers })
}

fn init_std(fan_in: usize, activation: Activation) -> f64 {
    match activation {
        Activation::Relu => (2.0 / fan_in as f64).sqrt(),
        _ => (1.0 / fan_in as f64).sqrt(),
    }
}

/// Box-Muller standard normal; deterministic given the RNG stream.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let mut u1: f64 = rng.gen();
    while u1 <= f64::MIN_POSITIVE {
        u1 = rng.gen();
    }
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

impl Params {
    pub fn zeros_like(&self) -> Params {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                LayerParams::Conv { w, b } => LayerParams::Conv {
                    w: Array4::zeros(w.raw_dim()),
                    b: Array1::zeros(b.raw_dim()),
                },
                LayerParams::Deconv { w, b } => LayerParams::Deconv {
                    w: Array4::zeros(w.raw_dim()),
                    b: Array1::zeros(b.raw_dim()),
                },
                LayerParams::Fc { w, b } => LayerParams::Fc {
                    w: Array2::zeros(w.raw_dim()),
                    b: Array1::zeros(b.raw_dim()),
                },
                LayerParams::Concat => LayerParams::Concat,
            })
            .collect();
        Params { layers }
    }

    /// All parameter arrays as flat slices, in a fixed traversal order.
    pub fn flat(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                LayerParams::Conv { w, b } | LayerParams::Deconv { w, b } => {
                    out.push(w.as_slice().expect("standard layout"));
                    out.push(b.as_slice().expect("standard layout"));
                }
                LayerParams::Fc { w, b } => {
                    out.push(w.as_slice().expect("standard layout"));
                    out.push(b.as_slice().expect("standard layout"));
                }
                LayerParams::Concat => {}
            }
        }
        out
    }

    pub fn flat_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                LayerParams::Conv { w, b } | LayerParams::Deconv { w, b } => {
                    out.push(w.as_slice_mut().expect("standard layout"));
                    out.push(b.as_slice_mut().expect("standard layout"));
                }
                LayerParams::Fc { w, b } => {
                    out.push(w.as_slice_mut().expect("standard layout"));
                    out.push(b.as_slice_mut().expect("standard layout"));
                }
                LayerParams::Concat => {}
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.flat().iter().map(|s| s.len()).sum()
    }

    /// Elementwise accumulation; shapes must match.
    pub fn add_assign(&mut self, other: &Params) {
        let theirs = other.flat();
        for (mine, theirs) in self.flat_mut().into_iter().zip(theirs) {
            debug_assert_eq!(mine.len(), theirs.len());
            for (a, b) in mine.iter_mut().zip(theirs.iter()) {
                *a += b;
            }
        }
    }

    /// FNV-1a over the exact bit patterns of every parameter; used to prove
    /// which networks a training phase touched.
    pub fn hash64(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for slice in self.flat() {
            for v in slice {
                for byte in v.to_bits().to_le_bytes() {
                    hash ^= u64::from(byte);
                    hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        hash
    }
}
