//! Mean-fill preprocessing: outpainting mask, unmasked mean, and assembly of
//! the 4-channel generator input.

use ndarray::{Array2, Array3};

use crate::dataset::ImageTensor;
use crate::error::{Error, Result};

/// Geometry of a horizontal outpainting problem: a known center of
/// `center_width` columns flanked by two unknown strips of `strip_width`
/// columns each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct OutpaintGeometry {
    pub height: usize,
    pub center_width: usize,
    pub strip_width: usize,
}

impl OutpaintGeometry {
    pub fn new(height: usize, center_width: usize, strip_width: usize) -> Result<Self> {
        if height == 0 || center_width == 0 || strip_width == 0 {
            return Err(Error::Argument(
                "geometry dimensions must all be positive".into(),
            ));
        }
        let geom = OutpaintGeometry {
            height,
            center_width,
            strip_width,
        };
        // One downsample/upsample round trip inside the generator requires
        // even spatial dimensions.
        if geom.height % 2 != 0 || geom.total_width() % 2 != 0 {
            return Err(Error::Argument(format!(
                "generator requires even height and total width, got {}x{}",
                geom.height,
                geom.total_width()
            )));
        }
        Ok(geom)
    }

    /// The 128/64/32 configuration used throughout training and evaluation.
    pub fn standard() -> Self {
        OutpaintGeometry {
            height: 128,
            center_width: 64,
            strip_width: 32,
        }
    }

    /// Miniature 32/16/8 configuration for desk-scale runs and tests.
    pub fn desk() -> Self {
        OutpaintGeometry {
            height: 32,
            center_width: 16,
            strip_width: 8,
        }
    }

    pub fn total_width(&self) -> usize {
        self.center_width + 2 * self.strip_width
    }
}

/// Binary outpainting mask: 1 on the strips to hallucinate, 0 on the known
/// center columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    data: Array2<u8>,
}

impl Mask {
    pub fn from_array(data: Array2<u8>) -> Result<Self> {
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Argument("mask values must be 0 or 1".into()));
        }
        Ok(Mask { data })
    }

    pub fn data(&self) -> &Array2<u8> {
        &self.data
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    /// True on the region to outpaint.
    pub fn is_masked(&self, i: usize, j: usize) -> bool {
        self.data[[i, j]] == 1
    }

    /// Number of masked pixels |supp(M)|.
    pub fn support_size(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }
}

/// Ground truth plus the mean-filled, mask-concatenated generator input.
#[derive(Debug, Clone)]
pub struct PreprocessedPair {
    /// Normalized ground truth, H x W x 3 in [0,1].
    pub ground_truth: ImageTensor,
    /// Generator input, H x W x 4 in [0,1]: mean-filled image in channels
    /// 0..3 and the mask in channel 3.
    pub generator_input: Array3<f64>,
}

/// Build the strip mask for a geometry: columns `[0, k)` and `[k+n, k+n+k)`
/// are 1, the center `[k, k+n)` is 0.
pub fn build_mask(geometry: &OutpaintGeometry) -> Mask {
    let k = geometry.strip_width;
    let n = geometry.center_width;
    let data = Array2::from_shape_fn((geometry.height, geometry.total_width()), |(_, j)| {
        u8::from(j < k || j >= k + n)
    });
    Mask { data }
}

/// Mean pixel intensity over the unmasked region, a single scalar across all
/// three channels.
pub fn mean_unmasked(image: &ImageTensor, mask: &Mask) -> Result<f64> {
    check_shapes(image, mask)?;
    let unmasked = image.dim().0 * image.dim().1 - mask.support_size();
    if unmasked == 0 {
        return Err(Error::Argument(
            "mask covers the whole image; unmasked mean is undefined".into(),
        ));
    }
    let mut sum = 0.0;
    for i in 0..image.dim().0 {
        for j in 0..image.dim().1 {
            if !mask.is_masked(i, j) {
                for c in 0..3 {
                    sum += image[[i, j, c]];
                }
            }
        }
    }
    Ok(sum / (unmasked * 3) as f64)
}

/// Replace the masked strips with the unmasked mean and append the mask as a
/// fourth channel.
pub fn assemble_input(image: &ImageTensor, mask: &Mask) -> Result<PreprocessedPair> {
    let mu = mean_unmasked(image, mask)?;
    let (h, w, _) = image.dim();
    let mut input = Array3::<f64>::zeros((h, w, 4));
    for i in 0..h {
        for j in 0..w {
            let masked = mask.is_masked(i, j);
            for c in 0..3 {
                input[[i, j, c]] = if masked { mu } else { image[[i, j, c]] };
            }
            input[[i, j, 3]] = f64::from(mask.data[[i, j]]);
        }
    }
    Ok(PreprocessedPair {
        ground_truth: image.clone(),
        generator_input: input,
    })
}

fn check_shapes(image: &ImageTensor, mask: &Mask) -> Result<()> {
    let (h, w, c) = image.dim();
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    if h != mask.height() || w != mask.width() {
        return Err(Error::Shape(format!(
            "image {h}x{w} does not match mask {}x{}",
            mask.height(),
            mask.width()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn constant_image(h: usize, w: usize, value: f64) -> ImageTensor {
        Array3::from_elem((h, w, 3), value)
    }

    #[test]
    fn mask_matches_indicator_formula() {
        let geom = OutpaintGeometry::standard();
        let mask = build_mask(&geom);
        for i in 0..128 {
            for j in 0..128 {
                let expected = u8::from(!(32..96).contains(&j));
                assert_eq!(mask.data()[[i, j]], expected, "at ({i},{j})");
            }
        }
    }

    #[test]
    fn mask_support_is_8192_for_standard_geometry() {
        let mask = build_mask(&OutpaintGeometry::standard());
        assert_eq!(mask.support_size(), 8192);
    }

    #[test]
    fn minimal_mask_rows() {
        let geom = OutpaintGeometry {
            height: 2,
            center_width: 2,
            strip_width: 1,
        };
        let mask = build_mask(&geom);
        for i in 0..2 {
            let row: Vec<u8> = (0..4).map(|j| mask.data()[[i, j]]).collect();
            assert_eq!(row, vec![1, 0, 0, 1]);
        }
    }

    #[test]
    fn mean_of_constant_image() {
        let geom = OutpaintGeometry::desk();
        let mask = build_mask(&geom);
        let image = constant_image(geom.height, geom.total_width(), 0.4);
        let mu = mean_unmasked(&image, &mask).unwrap();
        assert!((mu - 0.4).abs() < 1e-12);
    }

    #[test]
    fn mean_excludes_masked_strips() {
        let geom = OutpaintGeometry::desk();
        let mask = build_mask(&geom);
        let mut image = constant_image(geom.height, geom.total_width(), 0.0);
        for i in 0..geom.height {
            for j in geom.strip_width..geom.strip_width + geom.center_width {
                for c in 0..3 {
                    image[[i, j, c]] = 1.0;
                }
            }
        }
        let mu = mean_unmasked(&image, &mask).unwrap();
        assert!((mu - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_of_split_center_matches_brute_force() {
        // Half the center pixels at 0.2, half at 0.6; brute-force oracle over
        // the unmasked region must agree with mean_unmasked.
        let geom = OutpaintGeometry::desk();
        let mask = build_mask(&geom);
        let mut image = constant_image(geom.height, geom.total_width(), 0.0);
        let mut toggle = false;
        for i in 0..geom.height {
            for j in geom.strip_width..geom.strip_width + geom.center_width {
                let v = if toggle { 0.2 } else { 0.6 };
                toggle = !toggle;
                for c in 0..3 {
                    image[[i, j, c]] = v;
                }
            }
        }
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..geom.height {
            for j in 0..geom.total_width() {
                if !mask.is_masked(i, j) {
                    for c in 0..3 {
                        sum += image[[i, j, c]];
                        count += 1;
                    }
                }
            }
        }
        let oracle = sum / count as f64;
        assert!((oracle - 0.4).abs() < 1e-12);
        let mu = mean_unmasked(&image, &mask).unwrap();
        assert!((mu - oracle).abs() < 1e-12);
    }

    #[test]
    fn all_ones_mask_is_an_error() {
        let data = Array2::from_elem((4, 4), 1u8);
        let mask = Mask::from_array(data).unwrap();
        let image = constant_image(4, 4, 0.5);
        assert!(mean_unmasked(&image, &mask).is_err());
    }

    #[test]
    fn assemble_constant_image() {
        let geom = OutpaintGeometry::desk();
        let mask = build_mask(&geom);
        let image = constant_image(geom.height, geom.total_width(), 0.7);
        let pair = assemble_input(&image, &mask).unwrap();
        assert_eq!(
            pair.generator_input.dim(),
            (geom.height, geom.total_width(), 4)
        );
        for i in 0..geom.height {
            for j in 0..geom.total_width() {
                for c in 0..3 {
                    assert!((pair.generator_input[[i, j, c]] - 0.7).abs() < 1e-12);
                }
                assert_eq!(
                    pair.generator_input[[i, j, 3]],
                    f64::from(mask.data()[[i, j]])
                );
            }
        }
    }

    #[test]
    fn assemble_standard_geometry_shape() {
        let geom = OutpaintGeometry::standard();
        let mask = build_mask(&geom);
        let image = constant_image(128, 128, 0.3);
        let pair = assemble_input(&image, &mask).unwrap();
        assert_eq!(pair.generator_input.dim(), (128, 128, 4));
    }

    #[test]
    fn zero_mask_is_identity_fill() {
        let data = Array2::zeros((6, 8));
        let mask = Mask::from_array(data).unwrap();
        let mut image = constant_image(6, 8, 0.0);
        for (idx, v) in image.iter_mut().enumerate() {
            *v = (idx % 97) as f64 / 97.0;
        }
        let pair = assemble_input(&image, &mask).unwrap();
        for i in 0..6 {
            for j in 0..8 {
                for c in 0..3 {
                    assert_eq!(pair.generator_input[[i, j, c]], image[[i, j, c]]);
                }
            }
        }
    }

    #[test]
    fn center_preserved_exactly_and_fill_idempotent() {
        let geom = OutpaintGeometry::desk();
        let mask = build_mask(&geom);
        let mut image = constant_image(geom.height, geom.total_width(), 0.0);
        for (idx, v) in image.iter_mut().enumerate() {
            *v = (idx % 251) as f64 / 251.0;
        }
        let pair = assemble_input(&image, &mask).unwrap();
        // Center columns are passed through untouched.
        for i in 0..geom.height {
            for j in 0..geom.total_width() {
                if !mask.is_masked(i, j) {
                    for c in 0..3 {
                        assert_eq!(pair.generator_input[[i, j, c]], image[[i, j, c]]);
                    }
                }
            }
        }
        // Re-assembling the already mean-filled image reproduces it.
        let filled: ImageTensor = pair
            .generator_input
            .slice(ndarray::s![.., .., 0..3])
            .to_owned();
        let pair2 = assemble_input(&filled, &mask).unwrap();
        assert_eq!(pair2.generator_input, pair.generator_input);
    }
}
