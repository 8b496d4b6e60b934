//! Network architectures: declarative layer tables, parameters, convolution
//! kernels, and forward/backward passes.

pub mod forward;
pub mod ops;
pub mod params;
pub mod spec;

pub use forward::{
    chw_to_hwc, discriminator_forward, hwc_to_chw, split_halves, ConvStackCache, DiscCache,
    DiscGrads, DiscriminatorBundle, Generator, GENERATOR_INPUT_CHANNELS,
};
pub use params::{init_params, LayerParams, Params};
pub use spec::{
    concatenator_spec, discriminator_specs, generator_spec, receptive_field, Activation,
    LayerKind, LayerSpec, NetworkRole, NetworkSpec, Stride,
};
