//! End-to-end inference: preprocess, generate, renormalize, paste the known
//! region, and blend — once, or recursively to keep widening the canvas.

use ndarray::Array3;

use crate::dataset::{ImageTensor, PixelImage};
use crate::error::{Error, Result};
use crate::network::Generator;
use crate::objectives::{renormalize, rmse};
use crate::postprocess::{seamless_blend, BlendRequest};
use crate::preprocess::{assemble_input, build_mask, Mask, OutpaintGeometry};

/// Output of a single or recursive outpainting run.
#[derive(Debug, Clone)]
pub struct OutpaintResult {
    /// Final blended 8-bit image.
    pub output: PixelImage,
    /// Raw generator output in [0,1] from the last generator call.
    pub raw: ImageTensor,
    /// Masked RMSE against the supplied ground truth, when available.
    pub rmse: Option<f64>,
    /// Geometry of the (first) generator call.
    pub geometry: OutpaintGeometry,
}

/// Outpaint the strips of a full-width image whose center is known. The
/// center columns pass through to the output bit-exactly; the strips are
/// hallucinated. With `ground_truth` supplied, the masked RMSE is reported.
pub fn outpaint_once(
    generator: &Generator,
    image: &PixelImage,
    geometry: &OutpaintGeometry,
    ground_truth: Option<&PixelImage>,
) -> Result<OutpaintResult> {
    if image.height() != geometry.height || image.width() != geometry.total_width() {
        return Err(Error::Argument(format!(
            "image {}x{} does not match geometry {}x{}",
            image.height(),
            image.width(),
            geometry.height,
            geometry.total_width()
        )));
    }
    let mask = build_mask(geometry);
    let normalized = image.normalize();
    let pair = assemble_input(&normalized, &mask)?;
    let raw = generator.forward(&pair.generator_input)?;
    let generated = renormalize(&raw);
    let canvas = paste_unmasked(&generated, image, &mask);
    let blended = seamless_blend(&BlendRequest {
        source: image,
        destination: &canvas,
        mask: &mask,
    })?;
    let rmse_value = match ground_truth {
        Some(gt) => Some(rmse(gt, &blended, &mask)?),
        None => None,
    };
    Ok(OutpaintResult {
        output: blended,
        raw,
        rmse: rmse_value,
        geometry: *geometry,
    })
}

/// Widen the canvas by `k` columns on each side, fill the new strips with the
/// scalar mean of the current image, and attach the new-strip mask as the
/// fourth channel.
pub fn expand_and_pad(image: &PixelImage, k: usize) -> Result<(Array3<f64>, Mask)> {
    if k == 0 {
        return Err(Error::Argument("expansion width must be at least 1".into()));
    }
    let (h, w, _) = image.data.dim();
    let new_w = w + 2 * k;
    let mean = image.data.iter().map(|&v| f64::from(v)).sum::<f64>()
        / (image.data.len() as f64 * 255.0);
    let mut input = Array3::<f64>::zeros((h, new_w, 4));
    for i in 0..h {
        for j in 0..new_w {
            let known = j >= k && j < k + w;
            for c in 0..3 {
                input[[i, j, c]] = if known {
                    f64::from(image.data[[i, j - k, c]]) / 255.0
                } else {
                    mean
                };
            }
            input[[i, j, 3]] = f64::from(!known);
        }
    }
    let geometry = OutpaintGeometry {
        height: h,
        center_width: w,
        strip_width: k,
    };
    Ok((input, build_mask(&geometry)))
}

/// Repeatedly widen the image by 2k columns per iteration, running the
/// fully-convolutional generator on the whole widened canvas each time.
/// Previously known pixels are pasted back and therefore never change.
pub fn outpaint_recursive(
    generator: &Generator,
    image: &PixelImage,
    iterations: usize,
    k: usize,
) -> Result<OutpaintResult> {
    if iterations == 0 {
        return Err(Error::Argument("iterations must be at least 1".into()));
    }
    let first_geometry = OutpaintGeometry {
        height: image.height(),
        center_width: image.width(),
        strip_width: k,
    };
    let mut current = image.clone();
    let mut raw = current.normalize();
    for _ in 0..iterations {
        let (input, mask) = expand_and_pad(&current, k)?;
        raw = generator.forward(&input)?;
        let generated = renormalize(&raw);
        let canvas = paste_center(&generated, &current, k);
        let blended = seamless_blend(&BlendRequest {
            source: &canvas,
            destination: &canvas,
            mask: &mask,
        })?;
        current = blended;
    }
    Ok(OutpaintResult {
        output: current,
        raw,
        rmse: None,
        geometry: first_geometry,
    })
}

/// Destination image with the unmasked pixels replaced by the known image.
fn paste_unmasked(generated: &PixelImage, known: &PixelImage, mask: &Mask) -> PixelImage {
    let mut data = generated.data.clone();
    for i in 0..mask.height() {
        for j in 0..mask.width() {
            if !mask.is_masked(i, j) {
                for c in 0..3 {
                    data[[i, j, c]] = known.data[[i, j, c]];
                }
            }
        }
    }
    PixelImage { data }
}

/// Paste `known` into the widened canvas at horizontal offset `k`.
fn paste_center(generated: &PixelImage, known: &PixelImage, k: usize) -> PixelImage {
    let mut data = generated.data.clone();
    let (h, w, _) = known.data.dim();
    for i in 0..h {
        for j in 0..w {
            for c in 0..3 {
                data[[i, j + k, c]] = known.data[[i, j, c]];
            }
        }
    }
    PixelImage { data }
}

/// Horizontal concatenation for side-by-side comparison sheets.
pub fn side_by_side(images: &[&PixelImage]) -> Result<PixelImage> {
    if images.is_empty() {
        return Err(Error::Argument("nothing to concatenate".into()));
    }
    let h = images[0].height();
    if images.iter().any(|img| img.height() != h) {
        return Err(Error::Shape("images must share a height".into()));
    }
    let gap = 4usize;
    let total_w: usize =
        images.iter().map(|img| img.width()).sum::<usize>() + gap * (images.len() - 1);
    let mut data = Array3::<u8>::from_elem((h, total_w, 3), 255);
    let mut x = 0;
    for img in images {
        let w = img.width();
        data.slice_mut(ndarray::s![.., x..x + w, ..])
            .assign(&img.data);
        x += w + gap;
    }
    Ok(PixelImage { data })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_generator() -> Generator {
        Generator::new([1, 2, 4], 42)
    }

    fn patterned(h: usize, w: usize) -> PixelImage {
        PixelImage {
            data: Array3::from_shape_fn((h, w, 3), |(i, j, c)| {
                ((i * 31 + j * 7 + c * 11) % 256) as u8
            }),
        }
    }

    #[test]
    fn outpaint_once_preserves_center_exactly() {
        let geom = OutpaintGeometry::desk();
        let gen = test_generator();
        let image = patterned(geom.height, geom.total_width());
        let result = outpaint_once(&gen, &image, &geom, None).unwrap();
        assert_eq!(result.output.data.dim(), image.data.dim());
        let k = geom.strip_width;
        for i in 0..geom.height {
            for j in k..k + geom.center_width {
                for c in 0..3 {
                    assert_eq!(
                        result.output.data[[i, j, c]],
                        image.data[[i, j, c]],
                        "center pixel ({i},{j},{c}) changed"
                    );
                }
            }
        }
    }

    #[test]
    fn outpaint_once_with_ground_truth_reports_rmse() {
        let geom = OutpaintGeometry::desk();
        let gen = test_generator();
        let image = patterned(geom.height, geom.total_width());
        let result = outpaint_once(&gen, &image, &geom, Some(&image)).unwrap();
        let r = result.rmse.unwrap();
        assert!(r.is_finite() && r > 0.0, "untrained output has positive RMSE");
    }

    #[test]
    fn outpaint_once_rejects_wrong_size() {
        let geom = OutpaintGeometry::desk();
        let gen = test_generator();
        let image = patterned(16, 16);
        assert!(outpaint_once(&gen, &image, &geom, None).is_err());
    }

    #[test]
    fn expand_and_pad_geometry_and_mean_fill() {
        let image = patterned(16, 32);
        let (input, mask) = expand_and_pad(&image, 8).unwrap();
        assert_eq!(input.dim(), (16, 48, 4));
        assert_eq!(mask.support_size(), 2 * 8 * 16);
        // Constant image pads with the same constant.
        let constant = PixelImage {
            data: Array3::from_elem((8, 16, 3), 100u8),
        };
        let (cin, _) = expand_and_pad(&constant, 4).unwrap();
        for j in 0..4 {
            let v = cin[[0, j, 0]];
            assert!((v - 100.0 / 255.0).abs() < 1e-12);
        }
    }

    #[test]
    fn double_expansion_masks_are_disjoint() {
        let image = patterned(8, 16);
        let (_, mask1) = expand_and_pad(&image, 2).unwrap();
        let wider = PixelImage {
            data: Array3::zeros((8, 20, 3)),
        };
        let (_, mask2) = expand_and_pad(&wider, 2).unwrap();
        // mask1 covers cols 0-1 and 18-19 of the 20-wide canvas; mask2 covers
        // cols 0-1 and 22-23 of the 24-wide canvas. Shifted into the final
        // frame, supports cannot overlap.
        assert_eq!(mask1.width() + 4, mask2.width());
        for i in 0..8 {
            for j in 0..mask1.width() {
                if mask1.is_masked(i, j) {
                    assert!(!mask2.is_masked(i, j + 2));
                }
            }
        }
    }

    #[test]
    fn recursion_reaches_3_5x_width_in_five_iterations() {
        let gen = test_generator();
        // k = width/4 mirrors the full-scale 128/32 ratio.
        let image = patterned(16, 32);
        let result = outpaint_recursive(&gen, &image, 5, 8).unwrap();
        assert_eq!(result.output.width(), 32 + 2 * 8 * 5);
        assert_eq!(result.output.width(), 112);
        assert!((result.output.width() as f64 / 32.0 - 3.5).abs() < 1e-12);
        assert_eq!(result.output.height(), 16);
    }

    #[test]
    fn recursion_never_touches_previously_known_pixels() {
        let gen = test_generator();
        let image = patterned(16, 32);
        let one = outpaint_recursive(&gen, &image, 1, 8).unwrap();
        let two = outpaint_recursive(&gen, &image, 2, 8).unwrap();
        // The original image sits at offset 8 after one pass, 16 after two.
        for i in 0..16 {
            for j in 0..32 {
                for c in 0..3 {
                    assert_eq!(one.output.data[[i, j + 8, c]], image.data[[i, j, c]]);
                    assert_eq!(two.output.data[[i, j + 16, c]], image.data[[i, j, c]]);
                }
            }
        }
        // And the once-outpainted strips survive the second pass.
        for i in 0..16 {
            for j in 0..48 {
                for c in 0..3 {
                    assert_eq!(
                        two.output.data[[i, j + 8, c]],
                        one.output.data[[i, j, c]]
                    );
                }
            }
        }
    }

    #[test]
    fn outpainting_is_deterministic() {
        let gen = test_generator();
        let geom = OutpaintGeometry::desk();
        let image = patterned(geom.height, geom.total_width());
        let a = outpaint_once(&gen, &image, &geom, None).unwrap();
        let b = outpaint_once(&gen, &image, &geom, None).unwrap();
        assert_eq!(a.output, b.output);
        assert_eq!(a.raw, b.raw);
    }

    #[test]
    fn side_by_side_concatenates_widths() {
        let a = patterned(8, 10);
        let b = patterned(8, 6);
        let sheet = side_by_side(&[&a, &b]).unwrap();
        assert_eq!(sheet.height(), 8);
        assert_eq!(sheet.width(), 10 + 4 + 6);
    }
}
