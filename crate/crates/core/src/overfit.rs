//! Single-image overfit sanity check: train the full pipeline on one image
//! (reconstruction warm-up plus a short adversarial tail) and track the
//! masked RMSE at every 10% mark.

use std::time::{Duration, Instant};

use crate::dataset::PixelImage;
use crate::error::{Error, Result};
use crate::objectives::{renormalize, rmse};
use crate::preprocess::{assemble_input, build_mask, OutpaintGeometry};
use crate::trainer::{train_step, Checkpoint, TrainingSchedule};

#[derive(Debug, Clone)]
pub struct OverfitConfig {
    pub iterations: u64,
    pub seed: u64,
    pub learning_rate: f64,
    pub alpha: f64,
    /// Fraction of the budget spent in the adversarial phase (no
    /// discriminator warm-up: the schedule is Phase 1 plus a short Phase 3).
    pub p3_fraction: f64,
    pub geometry: OutpaintGeometry,
    pub dilations: [usize; 3],
    pub use_local: bool,
}

impl Default for OverfitConfig {
    fn default() -> Self {
        OverfitConfig {
            iterations: 400,
            seed: 0,
            learning_rate: 2e-3,
            alpha: 0.0004,
            p3_fraction: 0.1,
            geometry: OutpaintGeometry::standard(),
            dilations: [2, 4, 8],
            use_local: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverfitMark {
    pub iteration: u64,
    pub rmse: f64,
}

#[derive(Debug, Clone)]
pub struct OverfitReport {
    /// Masked RMSE of the mean-filled input itself: the do-nothing upper
    /// bound reported for a 0-iteration run.
    pub baseline_rmse: f64,
    /// Masked RMSE at every 10% mark of the budget.
    pub marks: Vec<OverfitMark>,
    pub final_rmse: f64,
    pub elapsed: Duration,
}

/// Current masked RMSE of the generator against the training image.
fn generator_rmse(state: &Checkpoint, image: &PixelImage) -> Result<f64> {
    let mask = build_mask(&state.geometry);
    let pair = assemble_input(&image.normalize(), &mask)?;
    let raw = state.generator.forward(&pair.generator_input)?;
    rmse(image, &renormalize(&raw), &mask)
}

pub fn run_overfit_sanity(image: &PixelImage, cfg: &OverfitConfig) -> Result<OverfitReport> {
    let geom = cfg.geometry;
    if image.height() != geom.height || image.width() != geom.total_width() {
        return Err(Error::Argument(format!(
            "overfit image must be {}x{}, got {}x{}",
            geom.height,
            geom.total_width(),
            image.height(),
            image.width()
        )));
    }
    let start = Instant::now();
    let mask = build_mask(&geom);
    let normalized = image.normalize();

    // Do-nothing baseline: the mean-filled strips themselves.
    let pair = assemble_input(&normalized, &mask)?;
    let mean_filled = renormalize(
        &pair
            .generator_input
            .slice(ndarray::s![.., .., 0..3])
            .to_owned(),
    );
    let baseline_rmse = rmse(image, &mean_filled, &mask)?;

    let t3 = ((cfg.iterations as f64) * cfg.p3_fraction).round() as u64;
    let t1 = cfg.iterations - t3;
    let schedule = TrainingSchedule {
        t1,
        t2: 0,
        t3,
        alpha: cfg.alpha,
        batch_size: 1,
        learning_rate: cfg.learning_rate,
        seed: cfg.seed,
        eval_interval: 0,
    };
    let mut state = Checkpoint::initialize(schedule, geom, cfg.dilations, cfg.use_local)?;

    let mut marks = Vec::new();
    if cfg.iterations == 0 {
        return Ok(OverfitReport {
            baseline_rmse,
            marks,
            final_rmse: baseline_rmse,
            elapsed: start.elapsed(),
        });
    }

    let batch = [normalized];
    for step in 1..=cfg.iterations {
        train_step(&mut state, &batch, &mask)?;
        if (step * 10) % cfg.iterations == 0 {
            marks.push(OverfitMark {
                iteration: step,
                rmse: generator_rmse(&state, image)?,
            });
        }
    }
    let final_rmse = marks.last().map(|m| m.rmse).expect("at least one mark");
    Ok(OverfitReport {
        baseline_rmse,
        marks,
        final_rmse,
        elapsed: start.elapsed(),
    })
}
