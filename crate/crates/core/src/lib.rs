//! Training and inference toolkit for GAN-based horizontal image outpainting.
//!
//! Given an image whose outer vertical strips are treated as unknown, the
//! generator hallucinates those strips from the visible center. The crate
//! covers the full pipeline: dataset manifests and minibatch sampling,
//! mean-fill preprocessing, the encoder-decoder generator with dilated
//! convolutions, global/local discriminators, three-phase adversarial
//! training, masked-RMSE evaluation, gradient-domain blending, and single or
//! recursive outpainting of arbitrary-width inputs.

pub mod dataset;
pub mod error;
pub mod network;
pub mod objectives;
pub mod outpaint;
pub mod overfit;
pub mod postprocess;
pub mod preprocess;
pub mod trainer;

pub use dataset::{DatasetManifest, ImageTensor, PixelImage};
pub use error::{Error, Result};
pub use network::{DiscriminatorBundle, Generator, LayerSpec, NetworkSpec, Params};
pub use outpaint::OutpaintResult;
pub use preprocess::{Mask, OutpaintGeometry, PreprocessedPair};
pub use trainer::{Checkpoint, LossRecord, Phase, TrainingSchedule};

