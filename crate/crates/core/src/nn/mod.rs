//! The fixed two-convolution CNN: layers, initialization, forward and
//! backward passes, and the model file format.

mod init;
mod io;
pub mod layers;
mod model;

pub use init::{glorot_uniform_init, he_uniform_init};
pub use io::{load_model, load_model_file, save_model, save_model_with_meta, ModelFile, MAGIC, VERSION};
pub use layers::{
    conv2d_forward, dense_forward, dropout_forward, maxpool2d_forward, relu, softmax, sparse_ce_loss, Mode,
};
pub use model::{
    backward, forward, loss_and_gradients, predict, ActivationTrace, ModelSpec, Params, ShapeChain,
    PARAM_NAMES,
};

pub(crate) use io::{decode_tensor_file, encode_tensor_file};
