//! Batched forward and backward passes: the fully-convolutional generator,
//! the discriminator towers with the shared local branch and split/flip
//! routing, and the concatenator head.

use ndarray::{s, Array1, Array2, Array3, Array4, Axis, Dimension};
use rayon::prelude::*;

use super::ops::{
    conv2d_backward, conv2d_forward, deconv2d_backward, deconv2d_forward, reshape_logical,
    ConvGeom,
};
use super::params::{init_params, LayerParams, Params};
use super::spec::{
    concatenator_spec, discriminator_specs, generator_spec, Activation, LayerKind, LayerSpec,
    NetworkSpec, Stride,
};
use crate::error::{Error, Result};

fn geom_of(layer: &LayerSpec) -> ConvGeom {
    ConvGeom {
        filter: layer.filter,
        dilation: layer.dilation,
        stride: match layer.stride {
            Stride::One => 1,
            Stride::Two | Stride::Half => 2,
        },
        pad: layer.padding(),
    }
}

fn apply_activation<D: Dimension>(act: Activation, x: &mut ndarray::Array<f64, D>) {
    match act {
        Activation::Relu => x.mapv_inplace(|v| v.max(0.0)),
        Activation::Sigmoid => x.mapv_inplace(sigmoid),
        Activation::None => {}
    }
}

/// Multiply the upstream gradient by the activation derivative, expressed in
/// terms of the post-activation output.
fn activation_backward<D: Dimension>(
    act: Activation,
    output: &ndarray::Array<f64, D>,
    grad: &mut ndarray::Array<f64, D>,
) {
    match act {
        Activation::Relu => {
            ndarray::Zip::from(grad).and(output).for_each(|g, &y| {
                if y <= 0.0 {
                    *g = 0.0;
                }
            });
        }
        Activation::Sigmoid => {
            ndarray::Zip::from(grad)
                .and(output)
                .for_each(|g, &y| *g *= y * (1.0 - y));
        }
        Activation::None => {}
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Post-activation outputs of every layer in a convolutional stack;
/// `values[0]` is the input, `values[i+1]` the output of layer `i`.
pub struct ConvStackCache {
    pub values: Vec<Array4<f64>>,
}

fn conv_layer_forward_batch(
    layer: &LayerSpec,
    lp: &LayerParams,
    x: &Array4<f64>,
) -> Result<Array4<f64>> {
    let (bsz, c, h, w) = x.dim();
    let g = geom_of(layer);
    let mut out = match (layer.kind, lp) {
        (LayerKind::Conv | LayerKind::Out, LayerParams::Conv { w: wt, b }) => {
            let (n, cin, _, _) = wt.dim();
            if cin != c {
                return Err(Error::Shape(format!(
                    "layer expects {cin} input channels, got {c}"
                )));
            }
            let (ho, wo) = g.out_hw(h, w);
            let mut out = Array4::<f64>::zeros((bsz, n, ho, wo));
            ndarray::Zip::from(out.axis_iter_mut(Axis(0)))
                .and(x.axis_iter(Axis(0)))
                .par_for_each(|mut o, xi| {
                    o.assign(&conv2d_forward(xi, wt.view(), b.view(), &g));
                });
            out
        }
        (LayerKind::Deconv, LayerParams::Deconv { w: wt, b }) => {
            let (cin, n, _, _) = wt.dim();
            if cin != c {
                return Err(Error::Shape(format!(
                    "deconv expects {cin} input channels, got {c}"
                )));
            }
            let mut out = Array4::<f64>::zeros((bsz, n, h * 2, w * 2));
            ndarray::Zip::from(out.axis_iter_mut(Axis(0)))
                .and(x.axis_iter(Axis(0)))
                .par_for_each(|mut o, xi| {
                    o.assign(&deconv2d_forward(xi, wt.view(), b.view(), &g));
                });
            out
        }
        _ => {
            return Err(Error::Shape(
                "layer spec and parameters disagree on layer kind".into(),
            ))
        }
    };
    apply_activation(layer.activation, &mut out);
    Ok(out)
}

/// Forward through the convolutional prefix of a spec.
pub fn conv_stack_forward(
    layers: &[LayerSpec],
    params: &[LayerParams],
    x: &Array4<f64>,
) -> Result<(Array4<f64>, ConvStackCache)> {
    let mut values = Vec::with_capacity(layers.len() + 1);
    values.push(x.clone());
    for (layer, lp) in layers.iter().zip(params) {
        let next = conv_layer_forward_batch(layer, lp, values.last().unwrap())?;
        values.push(next);
    }
    let out = values.last().unwrap().clone();
    Ok((out, ConvStackCache { values }))
}

/// Backward through the stack. Returns per-layer parameter gradients (same
/// container shape as the parameters) and the gradient w.r.t. the input.
pub fn conv_stack_backward(
    layers: &[LayerSpec],
    params: &[LayerParams],
    cache: &ConvStackCache,
    grad_out: Array4<f64>,
) -> (Vec<LayerParams>, Array4<f64>) {
    let mut grad = grad_out;
    let mut layer_grads: Vec<LayerParams> = Vec::with_capacity(layers.len());
    for (idx, (layer, lp)) in layers.iter().zip(params).enumerate().rev() {
        let output = &cache.values[idx + 1];
        let input = &cache.values[idx];
        activation_backward(layer.activation, output, &mut grad);
        let g = geom_of(layer);
        let bsz = input.dim().0;
        let per_sample: Vec<(Array3<f64>, Array4<f64>, Array1<f64>)> = (0..bsz)
            .into_par_iter()
            .map(|bi| {
                let xi = input.index_axis(Axis(0), bi);
                let gi = grad.index_axis(Axis(0), bi);
                match lp {
                    LayerParams::Conv { w, .. } => conv2d_backward(xi, w.view(), &g, gi),
                    LayerParams::Deconv { w, .. } => deconv2d_backward(xi, w.view(), &g, gi),
                    _ => unreachable!("conv stack holds only conv layers"),
                }
            })
            .collect();
        let (_, c, h, w) = input.dim();
        let mut gx = Array4::<f64>::zeros((bsz, c, h, w));
        let mut gw_sum: Option<Array4<f64>> = None;
        let mut gb_sum: Option<Array1<f64>> = None;
        for (bi, (gxi, gwi, gbi)) in per_sample.into_iter().enumerate() {
            gx.index_axis_mut(Axis(0), bi).assign(&gxi);
            match &mut gw_sum {
                Some(acc) => *acc += &gwi,
                None => gw_sum = Some(gwi),
            }
            match &mut gb_sum {
                Some(acc) => *acc += &gbi,
                None => gb_sum = Some(gbi),
            }
        }
        let gw = gw_sum.expect("non-empty batch");
        let gb = gb_sum.expect("non-empty batch");
        layer_grads.push(match lp {
            LayerParams::Conv { .. } => LayerParams::Conv { w: gw, b: gb },
            LayerParams::Deconv { .. } => LayerParams::Deconv { w: gw, b: gb },
            _ => unreachable!(),
        });
        grad = gx;
    }
    layer_grads.reverse();
    (layer_grads, grad)
}

fn fc_forward(
    w: &Array2<f64>,
    b: &Array1<f64>,
    act: Activation,
    x: &Array2<f64>,
) -> Array2<f64> {
    let mut out = x.dot(&w.t()) + b;
    apply_activation(act, &mut out);
    out
}

/// Backward of a fully-connected layer; `output` is post-activation.
fn fc_backward(
    w: &Array2<f64>,
    act: Activation,
    input: &Array2<f64>,
    output: &Array2<f64>,
    mut grad: Array2<f64>,
) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
    activation_backward(act, output, &mut grad);
    let gw = grad.t().dot(input);
    let gb = grad.sum_axis(Axis(0));
    let gx = grad.dot(w);
    (gw, gb, gx)
}

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

/// The encoder-decoder generator: spec plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub spec: NetworkSpec,
    pub params: Params,
}

pub const GENERATOR_INPUT_CHANNELS: usize = 4;

impl Generator {
    pub fn new(dilations: [usize; 3], seed: u64) -> Self {
        let spec = generator_spec(dilations);
        // Fully convolutional: weight shapes are independent of the spatial
        // input size, so any even placeholder works here.
        let params = init_params(&spec, (GENERATOR_INPUT_CHANNELS, 128, 128), seed)
            .expect("generator spec is conv-only");
        Generator { spec, params }
    }

    pub fn from_parts(spec: NetworkSpec, params: Params) -> Self {
        Generator { spec, params }
    }

    /// Batched forward on (B,4,H,W); returns (B,3,H,W) plus the cache needed
    /// for backprop.
    pub fn forward_batch(&self, x: &Array4<f64>) -> Result<(Array4<f64>, ConvStackCache)> {
        let (_, c, h, w) = x.dim();
        if c != GENERATOR_INPUT_CHANNELS {
            return Err(Error::Shape(format!(
                "generator input must have {GENERATOR_INPUT_CHANNELS} channels, got {c}"
            )));
        }
        if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
            return Err(Error::Argument(format!(
                "generator input must have even spatial dimensions, got {h}x{w}"
            )));
        }
        conv_stack_forward(&self.spec.layers, &self.params.layers, x)
    }

    /// Gradients of the batched forward pass.
    pub fn backward_batch(
        &self,
        cache: &ConvStackCache,
        grad_out: Array4<f64>,
    ) -> (Params, Array4<f64>) {
        let (layers, gx) =
            conv_stack_backward(&self.spec.layers, &self.params.layers, cache, grad_out);
        (Params { layers }, gx)
    }

    /// Single-image inference on an (H, W, 4) input, returning (H, W, 3) in
    /// (0,1).
    pub fn forward(&self, input: &Array3<f64>) -> Result<Array3<f64>> {
        let (_, _, c) = input.dim();
        if c != GENERATOR_INPUT_CHANNELS {
            return Err(Error::Shape(format!(
                "expected {GENERATOR_INPUT_CHANNELS} channels, got {c}"
            )));
        }
        let x = hwc_to_chw(input).insert_axis(Axis(0));
        let (out, _) = self.forward_batch(&x)?;
        Ok(chw_to_hwc(&out.index_axis(Axis(0), 0).to_owned()))
    }
}

pub fn hwc_to_chw(x: &Array3<f64>) -> Array3<f64> {
    x.view().permuted_axes([2, 0, 1]).as_standard_layout().to_owned()
}

pub fn chw_to_hwc(x: &Array3<f64>) -> Array3<f64> {
    x.view().permuted_axes([1, 2, 0]).as_standard_layout().to_owned()
}

// ---------------------------------------------------------------------------
// Discriminator
// ---------------------------------------------------------------------------

/// Split an (H, W, 3) image into its left half and its right half flipped
/// along the vertical axis, so the outpainted strip sits on the left of both.
pub fn split_halves(image: &Array3<f64>) -> Result<(Array3<f64>, Array3<f64>)> {
    let (_, w, _) = image.dim();
    if w % 2 != 0 {
        return Err(Error::Argument(format!(
            "cannot split odd width {w} into halves"
        )));
    }
    let half = w / 2;
    let left = image.slice(s![.., 0..half, ..]).to_owned();
    let right_flipped = image.slice(s![.., half..; -1, ..]).to_owned();
    Ok((left, right_flipped))
}

/// Batched CHW variant of [`split_halves`].
fn split_halves_chw(x: &Array4<f64>) -> Result<(Array4<f64>, Array4<f64>)> {
    let (_, _, _, w) = x.dim();
    if w % 2 != 0 {
        return Err(Error::Argument(format!(
            "cannot split odd width {w} into halves"
        )));
    }
    let half = w / 2;
    let left = x
        .slice(s![.., .., .., 0..half])
        .as_standard_layout()
        .to_owned();
    let right_flipped = x
        .slice(s![.., .., .., half..; -1])
        .as_standard_layout()
        .to_owned();
    Ok((left, right_flipped))
}

/// Global tower, shared local tower, and concatenator, with their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorBundle {
    pub input_hw: (usize, usize),
    pub use_local: bool,
    pub global_spec: NetworkSpec,
    pub local_spec: NetworkSpec,
    pub concat_spec: NetworkSpec,
    pub global: Params,
    pub local: Params,
    pub concat: Params,
}

/// Parameter gradients for the three discriminator parts.
pub struct DiscGrads {
    pub global: Params,
    pub local: Params,
    pub concat: Params,
}

struct TowerCache {
    conv: ConvStackCache,
    conv_out_dim: (usize, usize, usize, usize),
    fc_in: Array2<f64>,
    fc_out: Array2<f64>,
}

pub struct DiscCache {
    global: TowerCache,
    local_left: Option<TowerCache>,
    local_right: Option<TowerCache>,
    feat: Array2<f64>,
    p: Array1<f64>,
}

impl DiscCache {
    /// Concatenated feature vector fed to the concatenator, (B, width).
    pub fn features(&self) -> &Array2<f64> {
        &self.feat
    }
}

fn tower_forward(
    spec: &NetworkSpec,
    params: &Params,
    x: &Array4<f64>,
) -> Result<(Array2<f64>, TowerCache)> {
    let n_conv = spec.layers.len() - 1;
    let (conv_out, conv_cache) =
        conv_stack_forward(&spec.layers[..n_conv], &params.layers[..n_conv], x)?;
    let dim = conv_out.dim();
    let (bsz, c, h, w) = dim;
    let fc_in = conv_out
        .into_shape_with_order((bsz, c * h * w))
        .expect("standard layout");
    let fc_spec = &spec.layers[n_conv];
    let LayerParams::Fc { w: fw, b: fb } = &params.layers[n_conv] else {
        return Err(Error::Shape("tower must end with an FC layer".into()));
    };
    if fw.dim().1 != c * h * w {
        return Err(Error::Shape(format!(
            "FC expects {} inputs, conv stack produced {}",
            fw.dim().1,
            c * h * w
        )));
    }
    let fc_out = fc_forward(fw, fb, fc_spec.activation, &fc_in);
    Ok((
        fc_out.clone(),
        TowerCache {
            conv: conv_cache,
            conv_out_dim: dim,
            fc_in,
            fc_out,
        },
    ))
}

fn tower_backward(
    spec: &NetworkSpec,
    params: &Params,
    cache: &TowerCache,
    grad: Array2<f64>,
) -> (Params, Array4<f64>) {
    let n_conv = spec.layers.len() - 1;
    let fc_spec = &spec.layers[n_conv];
    let LayerParams::Fc { w: fw, .. } = &params.layers[n_conv] else {
        unreachable!("validated in forward");
    };
    let (gw, gb, gx_flat) = fc_backward(fw, fc_spec.activation, &cache.fc_in, &cache.fc_out, grad);
    let gx = reshape_logical(gx_flat, cache.conv_out_dim);
    let (mut layer_grads, gx_in) =
        conv_stack_backward(&spec.layers[..n_conv], &params.layers[..n_conv], &cache.conv, gx);
    layer_grads.push(LayerParams::Fc { w: gw, b: gb });
    (Params { layers: layer_grads }, gx_in)
}

impl DiscriminatorBundle {
    /// Build a bundle for a fixed input size. With `use_local` the
    /// concatenator joins 3x512 features; without it, only the global 512.
    pub fn new(input_hw: (usize, usize), use_local: bool, seed: u64) -> Result<Self> {
        let (h, w) = input_hw;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Argument(format!(
                "discriminator input must be even-sized, got {h}x{w}"
            )));
        }
        let (global_spec, local_spec, _) = discriminator_specs();
        let concat_width = if use_local { 3 * 512 } else { 512 };
        let concat_spec = concatenator_spec(concat_width);
        let global = init_params(&global_spec, (3, h, w), seed.wrapping_add(1))?;
        let local = init_params(&local_spec, (3, h, w / 2), seed.wrapping_add(2))?;
        let concat = init_params(&concat_spec, (concat_width, 1, 1), seed.wrapping_add(3))?;
        Ok(DiscriminatorBundle {
            input_hw,
            use_local,
            global_spec,
            local_spec,
            concat_spec,
            global,
            local,
            concat,
        })
    }

    fn check_input(&self, x: &Array4<f64>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        if c != 3 {
            return Err(Error::Shape(format!("expected 3 channels, got {c}")));
        }
        if (h, w) != self.input_hw {
            return Err(Error::Argument(format!(
                "discriminator is fixed to {}x{} inputs, got {h}x{w}",
                self.input_hw.0, self.input_hw.1
            )));
        }
        Ok(())
    }

    /// Batched forward: probabilities in (0,1), one per sample.
    pub fn forward_batch(&self, x: &Array4<f64>) -> Result<(Array1<f64>, DiscCache)> {
        self.check_input(x)?;
        let (g_feat, g_cache) = tower_forward(&self.global_spec, &self.global, x)?;
        let (feat, local_left, local_right) = if self.use_local {
            let (l, r) = split_halves_chw(x)?;
            let (lf, lc) = tower_forward(&self.local_spec, &self.local, &l)?;
            let (rf, rc) = tower_forward(&self.local_spec, &self.local, &r)?;
            let feat = ndarray::concatenate(Axis(1), &[g_feat.view(), lf.view(), rf.view()])
                .expect("feature widths agree");
            (feat, Some(lc), Some(rc))
        } else {
            (g_feat, None, None)
        };
        let fc_spec = &self.concat_spec.layers[1];
        let LayerParams::Fc { w, b } = &self.concat.layers[1] else {
            return Err(Error::Shape("concatenator must end with FC".into()));
        };
        let out = fc_forward(w, b, fc_spec.activation, &feat);
        let p = out.index_axis(Axis(1), 0).to_owned();
        Ok((
            p.clone(),
            DiscCache {
                global: g_cache,
                local_left,
                local_right,
                feat,
                p,
            },
        ))
    }

    /// Batched backward from gradients w.r.t. the output probabilities.
    /// Returns parameter gradients and the gradient w.r.t. the input images.
    pub fn backward_batch(
        &self,
        cache: &DiscCache,
        grad_p: &Array1<f64>,
    ) -> Result<(DiscGrads, Array4<f64>)> {
        let bsz = grad_p.len();
        let fc_spec = &self.concat_spec.layers[1];
        let LayerParams::Fc { w, .. } = &self.concat.layers[1] else {
            unreachable!("validated in forward");
        };
        let grad_out = grad_p.view().insert_axis(Axis(1)).to_owned();
        let p_out = cache.p.view().insert_axis(Axis(1)).to_owned();
        let (gw, gb, g_feat) = fc_backward(w, fc_spec.activation, &cache.feat, &p_out, grad_out);
        let concat_grads = Params {
            layers: vec![LayerParams::Concat, LayerParams::Fc { w: gw, b: gb }],
        };

        let (g_global_feat, g_local) = if self.use_local {
            (
                g_feat.slice(s![.., 0..512]).to_owned(),
                Some((
                    g_feat.slice(s![.., 512..1024]).to_owned(),
                    g_feat.slice(s![.., 1024..1536]).to_owned(),
                )),
            )
        } else {
            (g_feat, None)
        };

        let (global_grads, g_img_global) =
            tower_backward(&self.global_spec, &self.global, &cache.global, g_global_feat);

        let mut g_img = g_img_global;
        let local_grads = match g_local {
            Some((gl, gr)) => {
                let lc = cache.local_left.as_ref().expect("local cache");
                let rc = cache.local_right.as_ref().expect("local cache");
                let (mut lg, g_left) = tower_backward(&self.local_spec, &self.local, lc, gl);
                let (rg, g_right) = tower_backward(&self.local_spec, &self.local, rc, gr);
                // Shared weights: contributions from both halves accumulate.
                lg.add_assign(&rg);
                let half = self.input_hw.1 / 2;
                {
                    let mut left_slice = g_img.slice_mut(s![.., .., .., 0..half]);
                    left_slice += &g_left;
                }
                {
                    let mut right_slice = g_img.slice_mut(s![.., .., .., half..]);
                    right_slice += &g_right.slice(s![.., .., .., ..; -1]);
                }
                lg
            }
            None => self.local.zeros_like(),
        };
        debug_assert_eq!(g_img.dim().0, bsz);
        Ok((
            DiscGrads {
                global: global_grads,
                local: local_grads,
                concat: concat_grads,
            },
            g_img,
        ))
    }

    /// Combined hash over all three parameter sets.
    pub fn hash64(&self) -> u64 {
        self.global
            .hash64()
            .rotate_left(1)
            .wrapping_add(self.local.hash64())
            .rotate_left(1)
            .wrapping_add(self.concat.hash64())
    }
}

/// Single-image discriminator probability for an (H, W, 3) input.
pub fn discriminator_forward(bundle: &DiscriminatorBundle, image: &Array3<f64>) -> Result<f64> {
    let (h, w, c) = image.dim();
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    if (h, w) != bundle.input_hw {
        return Err(Error::Argument(format!(
            "discriminator is fixed to {}x{} inputs, got {h}x{w}",
            bundle.input_hw.0, bundle.input_hw.1
        )));
    }
    let x = hwc_to_chw(image).insert_axis(Axis(0));
    let (p, _) = bundle.forward_batch(&x)?;
    Ok(p[0])
}
