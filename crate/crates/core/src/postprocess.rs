//! Gradient-domain compositing: paste the source's blend region into the
//! destination by solving a per-channel Poisson equation with Dirichlet
//! boundary values from the destination.

use log::warn;
use ndarray::{Array2, Array3};

use crate::dataset::PixelImage;
use crate::error::{Error, Result};
use crate::preprocess::Mask;

/// Inputs to [`seamless_blend`]. The blend region is the complement of the
/// mask support (the known center), eroded by one pixel so boundary values
/// come from the destination.
pub struct BlendRequest<'a> {
    pub source: &'a PixelImage,
    pub destination: &'a PixelImage,
    pub mask: &'a Mask,
}

/// Maximum-residual tolerance of the interior solve, in intensity levels.
const SOLVE_TOL: f64 = 1e-6;

/// Gradient-domain blend, rounded back to 8 bits. Outside the (eroded) blend
/// region the output equals the destination exactly; inside, the output's
/// gradients match the source's in the least-squares sense.
pub fn seamless_blend(request: &BlendRequest) -> Result<PixelImage> {
    let values = seamless_blend_values(request)?;
    Ok(PixelImage {
        data: values.mapv(|v| v.round().clamp(0.0, 255.0) as u8),
    })
}

/// Real-valued blend before rounding; used directly by oracle tests.
pub fn seamless_blend_values(request: &BlendRequest) -> Result<Array3<f64>> {
    let src = &request.source.data;
    let dst = &request.destination.data;
    let mask = request.mask;
    if src.dim() != dst.dim() {
        return Err(Error::Shape(format!(
            "source {:?} vs destination {:?}",
            src.dim(),
            dst.dim()
        )));
    }
    let (h, w, _) = src.dim();
    if h != mask.height() || w != mask.width() {
        return Err(Error::Shape(format!(
            "images {h}x{w} do not match mask {}x{}",
            mask.height(),
            mask.width()
        )));
    }
    if mask.support_size() == (h * w) {
        return Err(Error::Argument("blend region is empty".into()));
    }

    let mut out = dst.mapv(f64::from);

    // 1-px erosion of the mask complement, also excluding image borders.
    let mut index = Array2::<i64>::from_elem((h, w), -1);
    let mut region: Vec<(usize, usize)> = Vec::new();
    for i in 1..h.saturating_sub(1) {
        for j in 1..w.saturating_sub(1) {
            let interior = !mask.is_masked(i, j)
                && !mask.is_masked(i - 1, j)
                && !mask.is_masked(i + 1, j)
                && !mask.is_masked(i, j - 1)
                && !mask.is_masked(i, j + 1);
            if interior {
                index[[i, j]] = region.len() as i64;
                region.push((i, j));
            }
        }
    }

    if region.is_empty() {
        warn!("blend region too thin to erode; copying source directly");
        for i in 0..h {
            for j in 0..w {
                if !mask.is_masked(i, j) {
                    for c in 0..3 {
                        out[[i, j, c]] = f64::from(src[[i, j, c]]);
                    }
                }
            }
        }
        return Ok(out);
    }

    let neighbors = |i: usize, j: usize| {
        [
            (i - 1, j),
            (i + 1, j),
            (i, j - 1),
            (i, j + 1),
        ]
    };

    for c in 0..3 {
        // Right-hand side: source Laplacian plus destination boundary terms.
        let n = region.len();
        let mut rhs = vec![0.0f64; n];
        let mut init = vec![0.0f64; n];
        for (p, &(i, j)) in region.iter().enumerate() {
            let mut b = 4.0 * f64::from(src[[i, j, c]]);
            for (ni, nj) in neighbors(i, j) {
                b -= f64::from(src[[ni, nj, c]]);
                if index[[ni, nj]] < 0 {
                    b += f64::from(dst[[ni, nj, c]]);
                }
            }
            rhs[p] = b;
            init[p] = f64::from(src[[i, j, c]]);
        }
        let solution = conjugate_gradient(&region, &index, &rhs, init, neighbors);
        for (p, &(i, j)) in region.iter().enumerate() {
            out[[i, j, c]] = solution[p];
        }
    }
    Ok(out)
}

/// CG on the SPD graph Laplacian 4u(p) - sum of interior neighbors.
fn conjugate_gradient<F>(
    region: &[(usize, usize)],
    index: &Array2<i64>,
    rhs: &[f64],
    init: Vec<f64>,
    neighbors: F,
) -> Vec<f64>
where
    F: Fn(usize, usize) -> [(usize, usize); 4],
{
    let n = region.len();
    let apply = |x: &[f64], out: &mut [f64]| {
        for (p, &(i, j)) in region.iter().enumerate() {
            let mut v = 4.0 * x[p];
            for (ni, nj) in neighbors(i, j) {
                let q = index[[ni, nj]];
                if q >= 0 {
                    v -= x[q as usize];
                }
            }
            out[p] = v;
        }
    };

    let mut x = init;
    let mut ax = vec![0.0; n];
    apply(&x, &mut ax);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rs_old: f64 = r.iter().map(|v| v * v).sum();
    let max_iter = 4 * n + 200;
    for _ in 0..max_iter {
        if r.iter().fold(0.0f64, |m, v| m.max(v.abs())) < SOLVE_TOL {
            break;
        }
        let mut ap = vec![0.0; n];
        apply(&p, &mut ap);
        let denom: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if denom.abs() < f64::MIN_POSITIVE {
            break;
        }
        let alpha = rs_old / denom;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rs_new / rs_old;
        rs_old = rs_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    x
}
