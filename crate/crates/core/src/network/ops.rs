//! Single-sample convolution kernels on (C, H, W) arrays: dilated and strided
//! convolution, stride-2 transposed convolution, and their exact adjoints,
//! all routed through im2col/col2im plus one GEMM.

use ndarray::{Array1, Array2, Array3, Array4, ArrayView1, ArrayView3, ArrayView4, Axis};

/// Spatial geometry of one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub filter: usize,
    pub dilation: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn effective_filter(&self) -> usize {
        (self.filter - 1) * self.dilation + 1
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let eff = self.effective_filter();
        (
            (h + 2 * self.pad - eff) / self.stride + 1,
            (w + 2 * self.pad - eff) / self.stride + 1,
        )
    }
}

/// Reshape a GEMM result by logical (row-major) order regardless of its
/// memory layout; `dot` outputs are not always C-contiguous.
pub(crate) fn reshape_logical<D>(a: Array2<f64>, dims: D) -> ndarray::Array<f64, D::Dim>
where
    D: ndarray::IntoDimension,
{
    let dims = dims.into_dimension();
    match a.is_standard_layout() {
        true => a
            .into_shape_with_order(dims)
            .expect("element count preserved"),
        false => {
            let data: Vec<f64> = a.iter().copied().collect();
            ndarray::Array::from_shape_vec(dims, data).expect("element count preserved")
        }
    }
}

/// Output positions `o` with `0 <= o*stride + off < limit`, clamped to
/// `[0, out_limit)`. Returns an empty range when nothing is in bounds.
fn valid_range(off: isize, stride: usize, limit: usize, out_limit: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if off >= 0 { 0 } else { ((-off + s - 1) / s) as usize };
    let hi_floor = (limit as isize - 1 - off).div_euclid(s);
    if hi_floor < 0 {
        return (0, 0);
    }
    let hi = ((hi_floor as usize) + 1).min(out_limit);
    (lo.min(hi), hi)
}

/// Unfold x (C,H,W) into a (C*f*f, Ho*Wo) matrix; out-of-bounds taps are zero.
pub fn im2col(x: ArrayView3<f64>, g: &ConvGeom) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let (ho, wo) = g.out_hw(h, w);
    let f = g.filter;
    let mut col = Array2::<f64>::zeros((c * f * f, ho * wo));
    let xs = x.as_standard_layout();
    let xsl = xs.as_slice().expect("standard layout");
    let csl = col.as_slice_mut().expect("standard layout");
    let (d, s, p) = (g.dilation, g.stride, g.pad as isize);
    for ci in 0..c {
        for a in 0..f {
            let off_y = (a * d) as isize - p;
            let (oy_lo, oy_hi) = valid_range(off_y, s, h, ho);
            for bk in 0..f {
                let off_x = (bk * d) as isize - p;
                let (ox_lo, ox_hi) = valid_range(off_x, s, w, wo);
                if ox_lo >= ox_hi {
                    continue;
                }
                let row = (ci * f + a) * f + bk;
                for oy in oy_lo..oy_hi {
                    let iy = (oy as isize * s as isize + off_y) as usize;
                    let src = (ci * h + iy) * w;
                    let dst = row * (ho * wo) + oy * wo;
                    if s == 1 {
                        let ix0 = (ox_lo as isize + off_x) as usize;
                        let len = ox_hi - ox_lo;
                        csl[dst + ox_lo..dst + ox_lo + len]
                            .copy_from_slice(&xsl[src + ix0..src + ix0 + len]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            let ix = (ox as isize * s as isize + off_x) as usize;
                            csl[dst + ox] = xsl[src + ix];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Exact adjoint of [`im2col`]: scatter-add a column matrix back onto a
/// (C,H,W) array.
pub fn col2im(col: &Array2<f64>, c: usize, h: usize, w: usize, g: &ConvGeom) -> Array3<f64> {
    let (ho, wo) = g.out_hw(h, w);
    let f = g.filter;
    debug_assert_eq!(col.dim(), (c * f * f, ho * wo));
    let mut out = Array3::<f64>::zeros((c, h, w));
    let osl = out.as_slice_mut().expect("standard layout");
    let csl = col.as_slice().expect("standard layout");
    let (d, s, p) = (g.dilation, g.stride, g.pad as isize);
    for ci in 0..c {
        for a in 0..f {
            let off_y = (a * d) as isize - p;
            let (oy_lo, oy_hi) = valid_range(off_y, s, h, ho);
            for bk in 0..f {
                let off_x = (bk * d) as isize - p;
                let (ox_lo, ox_hi) = valid_range(off_x, s, w, wo);
                if ox_lo >= ox_hi {
                    continue;
                }
                let row = (ci * f + a) * f + bk;
                for oy in oy_lo..oy_hi {
                    let iy = (oy as isize * s as isize + off_y) as usize;
                    let dst = (ci * h + iy) * w;
                    let src = row * (ho * wo) + oy * wo;
                    if s == 1 {
                        let ix0 = (ox_lo as isize + off_x) as usize;
                        for (o, v) in osl[dst + ix0..dst + ix0 + (ox_hi - ox_lo)]
                            .iter_mut()
                            .zip(&csl[src + ox_lo..src + ox_hi])
                        {
                            *o += v;
                        }
                    } else {
                        for ox in ox_lo..ox_hi {
                            let ix = (ox as isize * s as isize + off_x) as usize;
                            osl[dst + ix] += csl[src + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Convolve x (Cin,H,W) with weights (Cout,Cin,f,f) plus bias.
pub fn conv2d_forward(
    x: ArrayView3<f64>,
    w: ArrayView4<f64>,
    b: ArrayView1<f64>,
    g: &ConvGeom,
) -> Array3<f64> {
    let (cin, h, win) = x.dim();
    let (n, wc, f, _) = w.dim();
    debug_assert_eq!(cin, wc);
    debug_assert_eq!(f, g.filter);
    let (ho, wo) = g.out_hw(h, win);
    let col = im2col(x, g);
    let w_mat = w.to_shape((n, cin * f * f)).expect("contiguous weights");
    let mut out = w_mat.dot(&col);
    for (mut row, bias) in out.outer_iter_mut().zip(b.iter()) {
        row += *bias;
    }
    reshape_logical(out, (n, ho, wo))
}

/// Gradients of a conv layer: (d/dx, d/dw, d/db) from the upstream gradient.
pub fn conv2d_backward(
    x: ArrayView3<f64>,
    w: ArrayView4<f64>,
    g: &ConvGeom,
    grad_out: ArrayView3<f64>,
) -> (Array3<f64>, Array4<f64>, Array1<f64>) {
    let (cin, h, win) = x.dim();
    let (n, _, f, _) = w.dim();
    let (_, ho, wo) = grad_out.dim();
    let go_std = grad_out.as_standard_layout();
    let go_mat = go_std.to_shape((n, ho * wo)).expect("contiguous gradient");
    let col = im2col(x, g);
    let gw = reshape_logical(go_mat.dot(&col.t()), (n, cin, f, f));
    let gb = go_mat.sum_axis(Axis(1));
    let w_mat = w.to_shape((n, cin * f * f)).expect("contiguous weights");
    let gcol = w_mat.t().dot(&go_mat);
    let gx = col2im(&gcol, cin, h, win, g);
    (gx, gw, gb)
}

/// Transposed convolution: x (Cin,H,W), weights (Cin,Cout,f,f), output
/// (Cout, 2H, 2W) for the stride-2 geometry used in the decoder.
pub fn deconv2d_forward(
    x: ArrayView3<f64>,
    w: ArrayView4<f64>,
    b: ArrayView1<f64>,
    g: &ConvGeom,
) -> Array3<f64> {
    let (cin, h, win) = x.dim();
    let (wc, cout, f, _) = w.dim();
    debug_assert_eq!(cin, wc);
    let (oh, ow) = (h * g.stride, win * g.stride);
    debug_assert_eq!(g.out_hw(oh, ow), (h, win));
    let xs = x.as_standard_layout();
    let x_mat = xs.to_shape((cin, h * win)).expect("contiguous input");
    let w_mat = w.to_shape((cin, cout * f * f)).expect("contiguous weights");
    let col = w_mat.t().dot(&x_mat);
    let mut out = col2im(&col, cout, oh, ow, g);
    for (mut plane, bias) in out.outer_iter_mut().zip(b.iter()) {
        plane += *bias;
    }
    out
}

/// Gradients of a transposed-conv layer.
pub fn deconv2d_backward(
    x: ArrayView3<f64>,
    w: ArrayView4<f64>,
    g: &ConvGeom,
    grad_out: ArrayView3<f64>,
) -> (Array3<f64>, Array4<f64>, Array1<f64>) {
    let (cin, h, win) = x.dim();
    let (_, cout, f, _) = w.dim();
    let colg = im2col(grad_out, g);
    let w_mat = w.to_shape((cin, cout * f * f)).expect("contiguous weights");
    let gx = reshape_logical(w_mat.dot(&colg), (cin, h, win));
    let xs = x.as_standard_layout();
    let x_mat = xs.to_shape((cin, h * win)).expect("contiguous input");
    let gw = reshape_logical(x_mat.dot(&colg.t()), (cin, cout, f, f));
    let gb = grad_out
        .axis_iter(Axis(0))
        .map(|plane| plane.sum())
        .collect::<Array1<f64>>();
    (gx, gw, gb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array3, Array4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand3(dims: (usize, usize, usize), seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_simple_fn(dims, || rng.gen_range(-1.0..1.0))
    }

    fn rand4(dims: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_simple_fn(dims, || rng.gen_range(-1.0..1.0))
    }

    fn rand1(n: usize, seed: u64) -> Array1<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array1::from_shape_simple_fn(n, || rng.gen_range(-1.0..1.0))
    }

    /// Direct-definition convolution used as an independent oracle.
    fn naive_conv(
        x: &Array3<f64>,
        w: &Array4<f64>,
        b: &Array1<f64>,
        g: &ConvGeom,
    ) -> Array3<f64> {
        let (cin, h, win) = x.dim();
        let (n, _, f, _) = w.dim();
        let (ho, wo) = g.out_hw(h, win);
        let mut out = Array3::<f64>::zeros((n, ho, wo));
        for co in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[co];
                    for ci in 0..cin {
                        for a in 0..f {
                            for bb in 0..f {
                                let iy = (oy * g.stride + a * g.dilation) as isize
                                    - g.pad as isize;
                                let ix = (ox * g.stride + bb * g.dilation) as isize
                                    - g.pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < win
                                {
                                    acc += x[[ci, iy as usize, ix as usize]]
                                        * w[[co, ci, a, bb]];
                                }
                            }
                        }
                    }
                    out[[co, oy, ox]] = acc;
                }
            }
        }
        out
    }

    /// Direct-definition transposed convolution.
    fn naive_deconv(
        x: &Array3<f64>,
        w: &Array4<f64>,
        b: &Array1<f64>,
        g: &ConvGeom,
    ) -> Array3<f64> {
        let (cin, h, win) = x.dim();
        let (_, cout, f, _) = w.dim();
        let (oh, ow) = (h * g.stride, win * g.stride);
        let mut out = Array3::<f64>::zeros((cout, oh, ow));
        for co in 0..cout {
            out.index_axis_mut(ndarray::Axis(0), co).fill(b[co]);
        }
        for ci in 0..cin {
            for co in 0..cout {
                for i in 0..h {
                    for j in 0..win {
                        for a in 0..f {
                            for bb in 0..f {
                                let oy = (i * g.stride + a) as isize - g.pad as isize;
                                let ox = (j * g.stride + bb) as isize - g.pad as isize;
                                if oy >= 0 && ox >= 0 && (oy as usize) < oh && (ox as usize) < ow
                                {
                                    out[[co, oy as usize, ox as usize]] +=
                                        x[[ci, i, j]] * w[[ci, co, a, bb]];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let cases = [
            (ConvGeom { filter: 3, dilation: 1, stride: 1, pad: 1 }, (2, 6, 8)),
            (ConvGeom { filter: 3, dilation: 2, stride: 1, pad: 2 }, (3, 7, 5)),
            (ConvGeom { filter: 3, dilation: 8, stride: 1, pad: 8 }, (1, 6, 6)),
            (ConvGeom { filter: 5, dilation: 1, stride: 2, pad: 2 }, (2, 8, 10)),
            (ConvGeom { filter: 3, dilation: 1, stride: 2, pad: 1 }, (2, 8, 6)),
        ];
        for (idx, (g, dims)) in cases.into_iter().enumerate() {
            let x = rand3(dims, idx as u64);
            let w = rand4((4, dims.0, g.filter, g.filter), 100 + idx as u64);
            let b = rand1(4, 200 + idx as u64);
            let fast = conv2d_forward(x.view(), w.view(), b.view(), &g);
            let slow = naive_conv(&x, &w, &b, &g);
            assert_eq!(fast.dim(), slow.dim());
            let max_err = (&fast - &slow).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(max_err < 1e-12, "case {idx}: max err {max_err}");
        }
    }

    #[test]
    fn stride_two_halves_even_inputs() {
        let g = ConvGeom { filter: 5, dilation: 1, stride: 2, pad: 2 };
        assert_eq!(g.out_hw(128, 128), (64, 64));
        assert_eq!(g.out_hw(128, 64), (64, 32));
        let g = ConvGeom { filter: 3, dilation: 1, stride: 2, pad: 1 };
        assert_eq!(g.out_hw(128, 192), (64, 96));
    }

    #[test]
    fn deconv_matches_naive_oracle_and_doubles_size() {
        let g = ConvGeom { filter: 4, dilation: 1, stride: 2, pad: 1 };
        let x = rand3((3, 5, 4), 1);
        let w = rand4((3, 2, 4, 4), 2);
        let b = rand1(2, 3);
        let fast = deconv2d_forward(x.view(), w.view(), b.view(), &g);
        assert_eq!(fast.dim(), (2, 10, 8));
        let slow = naive_deconv(&x, &w, &b, &g);
        let max_err = (&fast - &slow).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_err < 1e-12, "max err {max_err}");
    }

    #[test]
    fn col2im_is_the_adjoint_of_im2col() {
        // <im2col(x), C> == <x, col2im(C)> for random C characterizes the
        // adjoint exactly.
        for (idx, g) in [
            ConvGeom { filter: 3, dilation: 2, stride: 1, pad: 2 },
            ConvGeom { filter: 5, dilation: 1, stride: 2, pad: 2 },
            ConvGeom { filter: 4, dilation: 1, stride: 2, pad: 1 },
        ]
        .into_iter()
        .enumerate()
        {
            let dims = (2, 8, 6);
            let x = rand3(dims, 10 + idx as u64);
            let col_x = im2col(x.view(), &g);
            let mut rng = ChaCha8Rng::seed_from_u64(77 + idx as u64);
            let c_mat = Array2::from_shape_simple_fn(col_x.dim(), || rng.gen_range(-1.0..1.0));
            let lhs: f64 = (&col_x * &c_mat).sum();
            let back = col2im(&c_mat, dims.0, dims.1, dims.2, &g);
            let rhs: f64 = (&x * &back).sum();
            assert!((lhs - rhs).abs() < 1e-10, "case {idx}: {lhs} vs {rhs}");
        }
    }

    /// Central-difference check of conv gradients through the scalar
    /// functional L = sum(conv(x, w, b) * r).
    #[test]
    fn conv_backward_matches_finite_differences() {
        let g = ConvGeom { filter: 3, dilation: 2, stride: 2, pad: 2 };
        let dims = (2, 6, 6);
        let mut x = rand3(dims, 21);
        let mut w = rand4((3, 2, 3, 3), 22);
        let mut b = rand1(3, 23);
        let (ho, wo) = g.out_hw(dims.1, dims.2);
        let r = rand3((3, ho, wo), 24);

        let (gx, gw, gb) = conv2d_backward(x.view(), w.view(), &g, r.view());
        let eps = 1e-6;
        let loss = |x: &Array3<f64>, w: &Array4<f64>, b: &Array1<f64>| -> f64 {
            (&conv2d_forward(x.view(), w.view(), b.view(), &g) * &r).sum()
        };

        for idx in [(0, 0, 0), (1, 3, 2), (0, 5, 5)] {
            let orig = x[idx];
            x[idx] = orig + eps;
            let up = loss(&x, &w, &b);
            x[idx] = orig - eps;
            let down = loss(&x, &w, &b);
            x[idx] = orig;
            let num = (up - down) / (2.0 * eps);
            assert!((num - gx[idx]).abs() < 1e-7, "gx at {idx:?}");
        }
        for idx in [(0, 0, 0, 0), (2, 1, 2, 1), (1, 0, 1, 2)] {
            let orig = w[idx];
            w[idx] = orig + eps;
            let up = loss(&x, &w, &b);
            w[idx] = orig - eps;
            let down = loss(&x, &w, &b);
            w[idx] = orig;
            let num = (up - down) / (2.0 * eps);
            assert!((num - gw[idx]).abs() < 1e-7, "gw at {idx:?}");
        }
        for i in 0..3 {
            let orig = b[i];
            b[i] = orig + eps;
            let up = loss(&x, &w, &b);
            b[i] = orig - eps;
            let down = loss(&x, &w, &b);
            b[i] = orig;
            let num = (up - down) / (2.0 * eps);
            assert!((num - gb[i]).abs() < 1e-7, "gb at {i}");
        }
    }

    #[test]
    fn deconv_backward_matches_finite_differences() {
        let g = ConvGeom { filter: 4, dilation: 1, stride: 2, pad: 1 };
        let dims = (2, 4, 3);
        let mut x = rand3(dims, 31);
        let mut w = rand4((2, 3, 4, 4), 32);
        let mut b = rand1(3, 33);
        let r = rand3((3, 8, 6), 34);

        let (gx, gw, gb) = deconv2d_backward(x.view(), w.view(), &g, r.view());
        let eps = 1e-6;
        let loss = |x: &Array3<f64>, w: &Array4<f64>, b: &Array1<f64>| -> f64 {
            (&deconv2d_forward(x.view(), w.view(), b.view(), &g) * &r).sum()
        };

        for idx in [(0, 0, 0), (1, 2, 1), (0, 3, 2)] {
            let orig = x[idx];
            x[idx] = orig + eps;
            let up = loss(&x, &w, &b);
            x[idx] = orig - eps;
            let down = loss(&x, &w, &b);
            x[idx] = orig;
            let num = (up - down) / (2.0 * eps);
            assert!((num - gx[idx]).abs() < 1e-7, "gx at {idx:?}");
        }
        for idx in [(0, 0, 0, 0), (1, 2, 3, 1), (0, 1, 2, 2)] {
            let orig = w[idx];
            w[idx] = orig + eps;
            let up = loss(&x, &w, &b);
            w[idx] = orig - eps;
            let down = loss(&x, &w, &b);
            w[idx] = orig;
            let num = (up - down) / (2.0 * eps);
            assert!((num - gw[idx]).abs() < 1e-7, "gw at {idx:?}");
        }
        for i in 0..3 {
            let orig = b[i];
            b[i] = orig + eps;
            let up = loss(&x, &w, &b);
            b[i] = orig - eps;
            let down = loss(&x, &w, &b);
            b[i] = orig;
            let num = (up - down) / (2.0 * eps);
            assert!((num - gb[i]).abs() < 1e-7, "gb at {i}");
        }
    }
}
