//! Autoencoder and discriminator architectures, their weights, and the
//! forward/backward passes over them.

mod arch;
mod gradcheck;
mod io;
mod network;
mod weights;

pub use arch::{
    build_spec, build_spec_with, layer_params, param_count, ArchId, ArchOptions, ArchitectureSpec,
    LayerKind, LayerSpec, Shape3,
};
pub use gradcheck::NetworkCheck;
pub use io::{
    load_weights, save_weights, weights_from_bytes, weights_to_bytes, WEIGHTS_MAGIC,
    WEIGHTS_VERSION,
};
pub(crate) use io::{Reader, Writer};
pub use network::{FeatureVector, GradAt, Trace, INFER_CHUNK};
pub use weights::{
    init_weights, zero_weights, LayerGrads, LayerParams, LayerWeights, ModelGrads, ModelWeights,
    WeightsMeta,
};
