//! Deterministic network compute: layer specs, forward/backward passes, losses.

mod loss;
mod net;
mod spec;

pub use loss::{
    argmax, batch_loss, batch_loss_sums, bounded_xe_from_probs, bounded_xe_loss, softmax,
    zero_one_loss, BatchLoss, LossConfig,
};
pub use net::{backward, forward, predict, Cache, Pass};
pub use spec::{LayerSpec, NetworkSpec, TensorInfo, TensorRole};
