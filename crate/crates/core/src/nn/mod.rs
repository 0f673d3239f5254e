//! Reverse-mode autodiff core: tensors, the tape, layers, initializers and SGD.

mod gradcheck;
mod graph;
mod init;
mod layers;
mod optim;
mod params;
mod rnn;
mod tensor;

pub use gradcheck::{
    check_gradients, relative_error, GradCheckReport, FD_STEP, FD_TOLERANCE,
    HINGE_KINK_MARGIN, SQRT_KINK_MARGIN,
};
pub use graph::{log_sum_exp, sigmoid, softmax, Graph, Var};
pub use init::{
    init_params, splitmix64, InitMode, InitScheme, Initializer, LayerParams, I1_CLIP_SIGMAS,
    I1_STD,
};
pub use layers::{Access, Layer, LayerKind, Mlp, MlpBuilder, DEFAULT_DROPOUT};
pub use optim::sgd_step;
pub use params::{Gradients, ParamId, ParamStore};
pub use rnn::{rnn_encode, ElmanEncoder};
pub use tensor::{argmax, Tensor};
