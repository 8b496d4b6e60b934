//! Training losses and the masked-RMSE evaluation metric.
//!
//! The reconstruction loss sums squared differences over the masked strips
//! (mean-reduced across a batch); the adversarial losses are the standard
//! non-saturating cross-entropy pair with probabilities clamped away from
//! {0,1} before any logarithm.

use ndarray::{Array4, ArrayView1};

use crate::dataset::{ImageTensor, PixelImage};
use crate::error::{Error, Result};
use crate::preprocess::Mask;

/// Probabilities are clamped to [EPS, 1-EPS] before logs so every loss stays
/// finite.
pub const PROB_EPS: f64 = 1e-7;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Sum of squared differences over the masked strips of a single image.
pub fn mse_loss(output: &ImageTensor, target: &ImageTensor, mask: &Mask) -> Result<f64> {
    check_image_mask(output, target, mask)?;
    let (h, w, _) = output.dim();
    let mut sum = 0.0;
    for i in 0..h {
        for j in 0..w {
            if mask.is_masked(i, j) {
                for c in 0..3 {
                    let d = output[[i, j, c]] - target[[i, j, c]];
                    sum += d * d;
                }
            }
        }
    }
    Ok(sum)
}

/// Batched masked reconstruction loss on (B,3,H,W) tensors, mean-reduced over
/// the batch, together with its gradient with respect to `output`.
pub fn mse_loss_batch(
    output: &Array4<f64>,
    target: &Array4<f64>,
    mask: &Mask,
) -> Result<(f64, Array4<f64>)> {
    if output.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "output {:?} vs target {:?}",
            output.dim(),
            target.dim()
        )));
    }
    let (b, c, h, w) = output.dim();
    if c != 3 || h != mask.height() || w != mask.width() {
        return Err(Error::Shape(format!(
            "batch {:?} does not match mask {}x{}",
            output.dim(),
            mask.height(),
            mask.width()
        )));
    }
    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut grad = Array4::<f64>::zeros(output.raw_dim());
    for bi in 0..b {
        for i in 0..h {
            for j in 0..w {
                if mask.is_masked(i, j) {
                    for ci in 0..c {
                        let d = output[[bi, ci, i, j]] - target[[bi, ci, i, j]];
                        loss += d * d * inv_b;
                        grad[[bi, ci, i, j]] = 2.0 * d * inv_b;
                    }
                }
            }
        }
    }
    Ok((loss, grad))
}

/// Discriminator loss -[log p_real + log(1 - p_fake)] for a single pair.
pub fn disc_loss(p_real: f64, p_fake: f64) -> f64 {
    let pr = clamp_prob(p_real);
    let pf = clamp_prob(p_fake);
    -(pr.ln() + (1.0 - pf).ln())
}

/// Batched discriminator loss, mean over the batch, with gradients with
/// respect to each probability. Gradients are zero where clamping is active.
pub fn disc_loss_batch(
    p_real: ArrayView1<f64>,
    p_fake: ArrayView1<f64>,
) -> (f64, Vec<f64>, Vec<f64>) {
    let b = p_real.len() as f64;
    let mut loss = 0.0;
    let mut grad_real = Vec::with_capacity(p_real.len());
    let mut grad_fake = Vec::with_capacity(p_fake.len());
    for (&pr, &pf) in p_real.iter().zip(p_fake.iter()) {
        let prc = clamp_prob(pr);
        let pfc = clamp_prob(pf);
        loss += -(prc.ln() + (1.0 - pfc).ln()) / b;
        grad_real.push(if (PROB_EPS..=1.0 - PROB_EPS).contains(&pr) {
            -1.0 / (prc * b)
        } else {
            0.0
        });
        grad_fake.push(if (PROB_EPS..=1.0 - PROB_EPS).contains(&pf) {
            1.0 / ((1.0 - pfc) * b)
        } else {
            0.0
        });
    }
    (loss, grad_real, grad_fake)
}

/// Joint generator loss: reconstruction plus the alpha-weighted adversarial
/// term `-alpha * log p_fake`.
pub fn gen_loss(mse: f64, p_fake: f64, alpha: f64) -> f64 {
    mse - alpha * clamp_prob(p_fake).ln()
}

/// Batched adversarial term of the generator loss: mean of
/// `-alpha * log p_fake` with gradients with respect to each probability.
pub fn gen_adv_loss_batch(p_fake: ArrayView1<f64>, alpha: f64) -> (f64, Vec<f64>) {
    let b = p_fake.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(p_fake.len());
    for &pf in p_fake.iter() {
        let pfc = clamp_prob(pf);
        loss += -alpha * pfc.ln() / b;
        grad.push(if (PROB_EPS..=1.0 - PROB_EPS).contains(&pf) {
            -alpha / (pfc * b)
        } else {
            0.0
        });
    }
    (loss, grad)
}

/// Root-mean-square error over the masked strips of two 8-bit images,
/// normalized by the number of masked pixels while summing over all three
/// channels.
pub fn rmse(ground_truth: &PixelImage, output: &PixelImage, mask: &Mask) -> Result<f64> {
    if ground_truth.data.dim() != output.data.dim() {
        return Err(Error::Shape(format!(
            "ground truth {:?} vs output {:?}",
            ground_truth.data.dim(),
            output.data.dim()
        )));
    }
    let (h, w, _) = ground_truth.data.dim();
    if h != mask.height() || w != mask.width() {
        return Err(Error::Shape(format!(
            "images {h}x{w} do not match mask {}x{}",
            mask.height(),
            mask.width()
        )));
    }
    let support = mask.support_size();
    if support == 0 {
        return Err(Error::Argument(
            "mask support is empty; masked RMSE is undefined".into(),
        ));
    }
    let mut sum = 0.0;
    for i in 0..h {
        for j in 0..w {
            if mask.is_masked(i, j) {
                for c in 0..3 {
                    let d =
                        f64::from(ground_truth.data[[i, j, c]]) - f64::from(output.data[[i, j, c]]);
                    sum += d * d;
                }
            }
        }
    }
    Ok((sum / support as f64).sqrt())
}

/// Real-valued masked RMSE used by symmetry/scaling property tests.
pub fn rmse_real(a: &ImageTensor, b: &ImageTensor, mask: &Mask) -> Result<f64> {
    check_image_mask(a, b, mask)?;
    let support = mask.support_size();
    if support == 0 {
        return Err(Error::Argument(
            "mask support is empty; masked RMSE is undefined".into(),
        ));
    }
    let (h, w, _) = a.dim();
    let mut sum = 0.0;
    for i in 0..h {
        for j in 0..w {
            if mask.is_masked(i, j) {
                for c in 0..3 {
                    let d = a[[i, j, c]] - b[[i, j, c]];
                    sum += d * d;
                }
            }
        }
    }
    Ok((sum / support as f64).sqrt())
}

/// Map a [0,1] tensor back to 8-bit: multiply by 255, round half away from
/// zero, clamp.
pub fn renormalize(tensor: &ImageTensor) -> PixelImage {
    let data = tensor.mapv(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8);
    PixelImage { data }
}

fn check_image_mask(a: &ImageTensor, b: &ImageTensor, mask: &Mask) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    let (h, w, c) = a.dim();
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
