//! Three-phase adversarial training: generator warm-up on reconstruction
//! loss, discriminator warm-up, then joint adversarial updates, with loss
//! logging, periodic dev evaluation, and resumable checkpoints.

mod adam;
mod checkpoint;

pub use adam::AdamState;
pub use checkpoint::{load_checkpoint, save_checkpoint};

use std::fs;
use std::io::Write as IoWrite;
use std::path::PathBuf;

use ndarray::{Array1, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{load_and_downsample, sample_minibatch, DatasetManifest, ImageTensor};
use crate::error::{Error, Result};
use crate::network::{hwc_to_chw, DiscriminatorBundle, Generator};
use crate::objectives::{disc_loss_batch, gen_adv_loss_batch, mse_loss_batch};
use crate::preprocess::{assemble_input, build_mask, Mask, OutpaintGeometry};

/// Iteration budgets and optimizer settings for one training run.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainingSchedule {
    pub t1: u64,
    pub t2: u64,
    pub t3: u64,
    pub alpha: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub eval_interval: u64,
}

impl TrainingSchedule {
    pub fn total(&self) -> u64 {
        self.t1 + self.t2 + self.t3
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 {
            return Err(Error::Config("alpha must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }

    /// The published main run: 18/2/80 split of 227,500 iterations.
    pub fn paper_global() -> Self {
        TrainingSchedule {
            t1: 40_950,
            t2: 4_550,
            t3: 182_000,
            alpha: 0.0004,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
            eval_interval: 500,
        }
    }

    /// The published local-discriminator run.
    pub fn paper_local() -> Self {
        TrainingSchedule {
            t1: 20_000,
            t2: 4_000,
            t3: 95_000,
            alpha: 0.0004,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
            eval_interval: 500,
        }
    }

    /// CI-friendly miniature run over the desk geometry.
    pub fn desk() -> Self {
        TrainingSchedule {
            t1: 200,
            t2: 50,
            t3: 250,
            alpha: 0.0004,
            batch_size: 4,
            learning_rate: 1e-3,
            seed: 0,
            eval_interval: 500,
        }
    }
}

/// Which of the three training phases an iteration belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Generator conditioning on the reconstruction loss.
    P1GeneratorMse,
    /// Discriminator conditioning with the generator frozen.
    P2Discriminator,
    /// Joint adversarial training.
    P3Adversarial,
}

impl Phase {
    pub fn label(&self) -> &'static str {
        match self {
            Phase::P1GeneratorMse => "P1",
            Phase::P2Discriminator => "P2",
            Phase::P3Adversarial => "P3",
        }
    }
}

/// Phase of a global iteration: [0,T1) -> P1, [T1,T1+T2) -> P2, the rest P3.
pub fn phase_of(iteration: u64, schedule: &TrainingSchedule) -> Result<Phase> {
    if iteration >= schedule.total() {
        return Err(Error::Argument(format!(
            "iteration {iteration} outside schedule of {} iterations",
            schedule.total()
        )));
    }
    if iteration < schedule.t1 {
        Ok(Phase::P1GeneratorMse)
    } else if iteration < schedule.t1 + schedule.t2 {
        Ok(Phase::P2Discriminator)
    } else {
        Ok(Phase::P3Adversarial)
    }
}

/// One CSV row of the loss log.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub iteration: u64,
    pub phase: Phase,
    pub train_mse: f64,
    pub dev_mse: Option<f64>,
    pub disc_loss: Option<f64>,
    pub gen_loss: Option<f64>,
}

impl LossRecord {
    pub const CSV_HEADER: &'static str = "iteration,phase,train_mse,dev_mse,disc_loss,gen_loss";

    pub fn to_csv_row(&self) -> String {
        let opt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.iteration,
            self.phase.label(),
            self.train_mse,
            opt(&self.dev_mse),
            opt(&self.disc_loss),
            opt(&self.gen_loss)
        )
    }
}

/// Complete training state; everything needed to continue a run exactly.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub iteration: u64,
    pub schedule: TrainingSchedule,
    pub geometry: OutpaintGeometry,
    pub dilations: [usize; 3],
    pub use_local: bool,
    pub generator: Generator,
    pub discriminator: DiscriminatorBundle,
    pub gen_opt: AdamState,
    /// Optimizer state for the global, local, and concatenator parts.
    pub disc_opt: [AdamState; 3],
    pub rng: ChaCha8Rng,
}

impl Checkpoint {
    pub fn initialize(
        schedule: TrainingSchedule,
        geometry: OutpaintGeometry,
        dilations: [usize; 3],
        use_local: bool,
    ) -> Result<Self> {
        schedule.validate()?;
        let generator = Generator::new(dilations, schedule.seed);
        let discriminator = DiscriminatorBundle::new(
            (geometry.height, geometry.total_width()),
            use_local,
            schedule.seed,
        )?;
        let gen_opt = AdamState::new(&generator.params, schedule.learning_rate);
        let disc_opt = [
            AdamState::new(&discriminator.global, schedule.learning_rate),
            AdamState::new(&discriminator.local, schedule.learning_rate),
            AdamState::new(&discriminator.concat, schedule.learning_rate),
        ];
        let rng = ChaCha8Rng::seed_from_u64(schedule.seed);
        Ok(Checkpoint {
            iteration: 0,
            schedule,
            geometry,
            dilations,
            use_local,
            generator,
            discriminator,
            gen_opt,
            disc_opt,
            rng,
        })
    }
}

/// Stack normalized (H,W,3) images into ground-truth and generator-input
/// batches in CHW layout.
fn assemble_batch(batch: &[ImageTensor], mask: &Mask) -> Result<(Array4<f64>, Array4<f64>)> {
    let b = batch.len();
    let (h, w, _) = batch[0].dim();
    let mut targets = Array4::<f64>::zeros((b, 3, h, w));
    let mut inputs = Array4::<f64>::zeros((b, 4, h, w));
    for (bi, image) in batch.iter().enumerate() {
        let pair = assemble_input(image, mask)?;
        targets
            .index_axis_mut(Axis(0), bi)
            .assign(&hwc_to_chw(&pair.ground_truth));
        inputs
            .index_axis_mut(Axis(0), bi)
            .assign(&hwc_to_chw(&pair.generator_input));
    }
    Ok((targets, inputs))
}

fn ensure_finite(value: f64, name: &'static str, iteration: u64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteLoss {
            iteration,
            loss_name: name,
            value,
        })
    }
}

/// One discriminator update on (real, fake) batches. Returns the loss.
fn discriminator_step(
    state: &mut Checkpoint,
    real: &Array4<f64>,
    fake: &Array4<f64>,
) -> Result<f64> {
    let (p_real, cache_real) = state.discriminator.forward_batch(real)?;
    let (p_fake, cache_fake) = state.discriminator.forward_batch(fake)?;
    let (loss, grad_real, grad_fake) = disc_loss_batch(p_real.view(), p_fake.view());
    let loss = ensure_finite(loss, "discriminator", state.iteration)?;
    let (mut grads, _) = state
        .discriminator
        .backward_batch(&cache_real, &Array1::from_vec(grad_real))?;
    let (grads_fake, _) = state
        .discriminator
        .backward_batch(&cache_fake, &Array1::from_vec(grad_fake))?;
    grads.global.add_assign(&grads_fake.global);
    grads.local.add_assign(&grads_fake.local);
    grads.concat.add_assign(&grads_fake.concat);
    state.disc_opt[0].step(&mut state.discriminator.global, &grads.global);
    state.disc_opt[1].step(&mut state.discriminator.local, &grads.local);
    state.disc_opt[2].step(&mut state.discriminator.concat, &grads.concat);
    Ok(loss)
}

/// Execute one training iteration on an already-normalized batch and advance
/// the iteration counter.
pub fn train_step(
    state: &mut Checkpoint,
    batch: &[ImageTensor],
    mask: &Mask,
) -> Result<LossRecord> {
    if batch.len() != state.schedule.batch_size {
        return Err(Error::Argument(format!(
            "batch of {} images does not match configured batch size {}",
            batch.len(),
            state.schedule.batch_size
        )));
    }
    let phase = phase_of(state.iteration, &state.schedule)?;
    let (targets, inputs) = assemble_batch(batch, mask)?;
    let iteration = state.iteration;

    let record = match phase {
        Phase::P1GeneratorMse => {
            let (out, cache) = state.generator.forward_batch(&inputs)?;
            let (mse, grad) = mse_loss_batch(&out, &targets, mask)?;
            let mse = ensure_finite(mse, "reconstruction", iteration)?;
            let (grads, _) = state.generator.backward_batch(&cache, grad);
            state.gen_opt.step(&mut state.generator.params, &grads);
            LossRecord {
                iteration,
                phase,
                train_mse: mse,
                dev_mse: None,
                disc_loss: None,
                gen_loss: None,
            }
        }
        Phase::P2Discriminator => {
            // Generator is frozen: forward only, no gradient through it.
            let (out, _) = state.generator.forward_batch(&inputs)?;
            let (mse, _) = mse_loss_batch(&out, &targets, mask)?;
            let mse = ensure_finite(mse, "reconstruction", iteration)?;
            let dloss = discriminator_step(state, &targets, &out)?;
            LossRecord {
                iteration,
                phase,
                train_mse: mse,
                dev_mse: None,
                disc_loss: Some(dloss),
                gen_loss: None,
            }
        }
        Phase::P3Adversarial => {
            let (out, cache) = state.generator.forward_batch(&inputs)?;
            // Discriminator first, then the generator, on the same batch.
            let dloss = discriminator_step(state, &targets, &out)?;
            let (p_fake, dcache) = state.discriminator.forward_batch(&out)?;
            let (mse, grad_mse) = mse_loss_batch(&out, &targets, mask)?;
            let mse = ensure_finite(mse, "reconstruction", iteration)?;
            let (adv, grad_p) = gen_adv_loss_batch(p_fake.view(), state.schedule.alpha);
            let adv = ensure_finite(adv, "generator-adversarial", iteration)?;
            let (_, grad_img) = state
                .discriminator
                .backward_batch(&dcache, &Array1::from_vec(grad_p))?;
            let total_grad = grad_mse + &grad_img;
            let (grads, _) = state.generator.backward_batch(&cache, total_grad);
            state.gen_opt.step(&mut state.generator.params, &grads);
            LossRecord {
                iteration,
                phase,
                train_mse: mse,
                dev_mse: None,
                disc_loss: Some(dloss),
                gen_loss: Some(mse + adv),
            }
        }
    };
    state.iteration += 1;
    Ok(record)
}

/// Masked reconstruction loss of the current generator over the validation
/// set, mean per image.
pub fn eval_dev_mse(state: &Checkpoint, manifest: &DatasetManifest, mask: &Mask) -> Result<f64> {
    if manifest.val_paths.is_empty() {
        return Err(Error::Config("manifest has no validation images".into()));
    }
    let chunk = state.schedule.batch_size.max(1);
    let mut total = 0.0;
    for paths in manifest.val_paths.chunks(chunk) {
        let images: Vec<ImageTensor> = paths
            .iter()
            .map(|p| Ok(load_and_downsample(p, manifest.target_size)?.normalize()))
            .collect::<Result<_>>()?;
        let (targets, inputs) = assemble_batch(&images, mask)?;
        let (out, _) = state.generator.forward_batch(&inputs)?;
        let (mse, _) = mse_loss_batch(&out, &targets, mask)?;
        // mse is mean-per-image within the chunk; re-weight to a global mean.
        total += mse * images.len() as f64;
    }
    Ok(total / manifest.val_paths.len() as f64)
}

/// Filesystem layout and extra knobs for [`run_training`].
#[derive(Debug, Clone)]
pub struct TrainerConfig {
    pub schedule: TrainingSchedule,
    pub geometry: OutpaintGeometry,
    pub dilations: [usize; 3],
    pub use_local: bool,
    pub out_dir: PathBuf,
    pub resume_from: Option<PathBuf>,
    /// Stop after this global iteration (checkpointing as usual); used to
    /// exercise resume paths.
    pub stop_after: Option<u64>,
    pub checkpoint_interval: u64,
}

impl TrainerConfig {
    pub fn new(
        schedule: TrainingSchedule,
        geometry: OutpaintGeometry,
        out_dir: impl Into<PathBuf>,
    ) -> Self {
        TrainerConfig {
            schedule,
            geometry,
            dilations: [2, 4, 8],
            use_local: true,
            out_dir: out_dir.into(),
            resume_from: None,
            stop_after: None,
            checkpoint_interval: 5000,
        }
    }

    pub fn checkpoint_path(&self, iteration: u64) -> PathBuf {
        self.out_dir.join(format!("checkpoint_{iteration:08}.ckpt"))
    }

    pub fn loss_log_path(&self) -> PathBuf {
        self.out_dir.join("loss_log.csv")
    }
}

/// Run (or resume) the full three-phase schedule: executes every iteration,
/// appends one loss row each, evaluates dev MSE at the configured interval,
/// and writes checkpoints at the cadence, at phase boundaries, and at the
/// end.
pub fn run_training(manifest: &DatasetManifest, cfg: &TrainerConfig) -> Result<Checkpoint> {
    let expected = (cfg.geometry.height, cfg.geometry.total_width());
    if manifest.target_size != expected {
        return Err(Error::Config(format!(
            "manifest target size {:?} does not match geometry {:?}",
            manifest.target_size, expected
        )));
    }
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;

    let mut state = match &cfg.resume_from {
        Some(path) => load_checkpoint(path)?,
        None => Checkpoint::initialize(
            cfg.schedule,
            cfg.geometry,
            cfg.dilations,
            cfg.use_local,
        )?,
    };
    let resuming = state.iteration > 0;
    let mask = build_mask(&cfg.geometry);

    let log_path = cfg.loss_log_path();
    let mut log = if resuming && log_path.exists() {
        fs::OpenOptions::new()
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?
    } else {
        let mut f = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
        writeln!(f, "{}", LossRecord::CSV_HEADER).map_err(|e| Error::io(&log_path, e))?;
        f
    };

    let total = state.schedule.total();
    let stop = cfg.stop_after.unwrap_or(total).min(total);
    let t1 = state.schedule.t1;
    let t12 = state.schedule.t1 + state.schedule.t2;

    while state.iteration < stop {
        let step = state.iteration;
        let batch = sample_minibatch(manifest, state.schedule.batch_size, step)?;
        let mut record = match train_step(&mut state, &batch, &mask) {
            Ok(rec) => rec,
            Err(e) => {
                // Leave a diagnostic row before surfacing the failure.
                let _ = writeln!(log, "{step},ABORT,,,,");
                return Err(e);
            }
        };
        let done = state.iteration;
        if state.schedule.eval_interval > 0 && done % state.schedule.eval_interval == 0 {
            record.dev_mse = Some(eval_dev_mse(&state, manifest, &mask)?);
        }
        writeln!(log, "{}", record.to_csv_row()).map_err(|e| Error::io(&log_path, e))?;
        let boundary = done == t1 || done == t12 || done == total;
        if done % cfg.checkpoint_interval == 0 || boundary || done == stop {
            save_checkpoint(&state, &cfg.checkpoint_path(done))?;
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::Rng;

    fn schedule(t1: u64, t2: u64, t3: u64) -> TrainingSchedule {
        TrainingSchedule {
            t1,
            t2,
            t3,
            alpha: 0.0004,
            batch_size: 1,
            learning_rate: 1e-3,
            seed: 9,
            eval_interval: 0,
        }
    }

    fn random_image(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_simple_fn((h, w, 3), || rng.gen_range(0.0..1.0))
    }

    fn tiny_state(sched: TrainingSchedule) -> Checkpoint {
        let geometry = OutpaintGeometry {
            height: 16,
            center_width: 8,
            strip_width: 4,
        };
        Checkpoint::initialize(sched, geometry, [1, 2, 4], true).unwrap()
    }

    #[test]
    fn phase_boundaries_of_published_schedule() {
        let s = schedule(40_950, 4_550, 182_000);
        assert_eq!(phase_of(0, &s).unwrap(), Phase::P1GeneratorMse);
        assert_eq!(phase_of(40_949, &s).unwrap(), Phase::P1GeneratorMse);
        assert_eq!(phase_of(40_950, &s).unwrap(), Phase::P2Discriminator);
        assert_eq!(phase_of(45_499, &s).unwrap(), Phase::P2Discriminator);
        assert_eq!(phase_of(45_500, &s).unwrap(), Phase::P3Adversarial);
        assert_eq!(phase_of(227_499, &s).unwrap(), Phase::P3Adversarial);
        assert!(phase_of(227_500, &s).is_err());
    }

    #[test]
    fn published_schedule_is_the_18_2_80_split() {
        let s = schedule(40_950, 4_550, 182_000);
        let total = s.total() as f64;
        assert_eq!(s.total(), 227_500);
        assert!((s.t1 as f64 / total - 0.18).abs() < 1e-12);
        assert!((s.t2 as f64 / total - 0.02).abs() < 1e-12);
        assert!((s.t3 as f64 / total - 0.80).abs() < 1e-12);
    }

    #[test]
    fn empty_warmup_phases_are_all_p3() {
        let s = schedule(0, 0, 10);
        for i in 0..10 {
            assert_eq!(phase_of(i, &s).unwrap(), Phase::P3Adversarial);
        }
    }

    #[test]
    fn phase_partition_has_no_gaps_or_overlaps() {
        let s = schedule(7, 3, 11);
        let mut counts = [0u64; 3];
        for i in 0..s.total() {
            match phase_of(i, &s).unwrap() {
                Phase::P1GeneratorMse => counts[0] += 1,
                Phase::P2Discriminator => counts[1] += 1,
                Phase::P3Adversarial => counts[2] += 1,
            }
        }
        assert_eq!(counts, [7, 3, 11]);
    }

    #[test]
    fn p1_touches_only_the_generator() {
        let mut state = tiny_state(schedule(3, 0, 0));
        let mask = build_mask(&state.geometry);
        let image = random_image(16, 16, 1);
        let disc_before = state.discriminator.hash64();
        let gen_before = state.generator.params.hash64();
        let rec = train_step(&mut state, &[image], &mask).unwrap();
        assert_eq!(rec.phase, Phase::P1GeneratorMse);
        assert!(rec.disc_loss.is_none() && rec.gen_loss.is_none());
        assert_ne!(state.generator.params.hash64(), gen_before);
        assert_eq!(state.discriminator.hash64(), disc_before);
    }

    #[test]
    fn p2_freezes_the_generator() {
        let mut state = tiny_state(schedule(0, 3, 0));
        let mask = build_mask(&state.geometry);
        let image = random_image(16, 16, 2);
        let gen_before = state.generator.params.hash64();
        let disc_before = state.discriminator.hash64();
        let rec = train_step(&mut state, &[image], &mask).unwrap();
        assert_eq!(rec.phase, Phase::P2Discriminator);
        assert!(rec.disc_loss.is_some());
        assert_eq!(state.generator.params.hash64(), gen_before);
        assert_ne!(state.discriminator.hash64(), disc_before);
    }

    #[test]
    fn p3_updates_both_networks() {
        let mut state = tiny_state(schedule(0, 0, 3));
        let mask = build_mask(&state.geometry);
        let image = random_image(16, 16, 3);
        let gen_before = state.generator.params.hash64();
        let disc_before = state.discriminator.hash64();
        let rec = train_step(&mut state, &[image], &mask).unwrap();
        assert_eq!(rec.phase, Phase::P3Adversarial);
        assert!(rec.disc_loss.is_some() && rec.gen_loss.is_some());
        assert_ne!(state.generator.params.hash64(), gen_before);
        assert_ne!(state.discriminator.hash64(), disc_before);
    }

    #[test]
    fn p3_with_zero_alpha_matches_p1_generator_update() {
        let mut sched = schedule(1, 0, 0);
        sched.alpha = 0.0;
        let mut p1_state = tiny_state(sched);
        let mut sched3 = schedule(0, 0, 1);
        sched3.alpha = 0.0;
        let mut p3_state = tiny_state(sched3);
        // Same initialization seeds, so the generators start identical.
        assert_eq!(
            p1_state.generator.params.hash64(),
            p3_state.generator.params.hash64()
        );
        let mask = build_mask(&p1_state.geometry);
        let image = random_image(16, 16, 4);
        train_step(&mut p1_state, &[image.clone()], &mask).unwrap();
        train_step(&mut p3_state, &[image], &mask).unwrap();
        assert_eq!(
            p1_state.generator.params, p3_state.generator.params,
            "alpha = 0 must reduce the P3 generator update to the P1 update"
        );
    }

    #[test]
    fn single_image_p1_descends() {
        let mut state = tiny_state(schedule(60, 0, 0));
        let mask = build_mask(&state.geometry);
        let image = random_image(16, 16, 5);
        let mut first = None;
        let mut last = 0.0;
        for _ in 0..60 {
            let rec = train_step(&mut state, &[image.clone()], &mask).unwrap();
            first.get_or_insert(rec.train_mse);
            last = rec.train_mse;
        }
        let first = first.unwrap();
        assert!(
            last < 0.5 * first,
            "P1 must at least halve the reconstruction loss: {first} -> {last}"
        );
    }

    #[test]
    fn train_step_is_deterministic() {
        let image = random_image(16, 16, 6);
        let run = || {
            let mut state = tiny_state(schedule(2, 1, 2));
            let mask = build_mask(&state.geometry);
            let mut rows = Vec::new();
            for _ in 0..5 {
                let rec = train_step(&mut state, &[image.clone()], &mask).unwrap();
                rows.push(rec.to_csv_row());
            }
            (rows, state.generator.params.hash64())
        };
        let (rows_a, hash_a) = run();
        let (rows_b, hash_b) = run();
        assert_eq!(rows_a, rows_b);
        assert_eq!(hash_a, hash_b);
    }

    #[test]
    fn checkpoint_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let mut state = tiny_state(schedule(2, 1, 2));
        let mask = build_mask(&state.geometry);
        let image = random_image(16, 16, 7);
        for _ in 0..3 {
            train_step(&mut state, &[image.clone()], &mask).unwrap();
        }
        let path = dir.path().join("ckpt.ckpt");
        save_checkpoint(&state, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.iteration, state.iteration);
        assert_eq!(loaded.schedule, state.schedule);
        assert_eq!(loaded.generator.params, state.generator.params);
        assert_eq!(loaded.discriminator.global, state.discriminator.global);
        assert_eq!(loaded.discriminator.local, state.discriminator.local);
        assert_eq!(loaded.discriminator.concat, state.discriminator.concat);
        assert_eq!(loaded.gen_opt, state.gen_opt);
        assert_eq!(loaded.disc_opt[0], state.disc_opt[0]);
        assert_eq!(loaded.rng, state.rng);
        assert!(path.with_extension("json").exists());
    }

    #[test]
    fn truncated_checkpoint_fails_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let state = tiny_state(schedule(1, 0, 0));
        let path = dir.path().join("ckpt.ckpt");
        save_checkpoint(&state, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        match load_checkpoint(&path) {
            Err(Error::CheckpointFormat(_)) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn garbage_file_is_not_a_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::CheckpointFormat(_))
        ));
    }

    #[test]
    fn non_finite_loss_aborts() {
        let mut state = tiny_state(schedule(1, 0, 0));
        // Poison the output layer's bias; its sigmoid then emits NaN.
        if let Some(crate::network::LayerParams::Conv { b, .. }) =
            state.generator.params.layers.last_mut()
        {
            b[0] = f64::NAN;
        }
        let mask = build_mask(&state.geometry);
        let image = random_image(16, 16, 8);
        match train_step(&mut state, &[image], &mask) {
            Err(Error::NonFiniteLoss { iteration, .. }) => assert_eq!(iteration, 0),
            other => panic!("expected non-finite abort, got {other:?}"),
        }
    }
}
