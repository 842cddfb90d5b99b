//! Dense tensors, a reverse-mode tape, feed-forward nets, Adam and checkpoints.

mod adam;
mod checkpoint;
mod gradcheck;
mod mlp;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use checkpoint::Checkpoint;
pub use gradcheck::{check_gradients, relative_error, GradCheckReport, REL_ERR_FLOOR};
pub use mlp::{Linear, Mlp, MlpOutput, MlpSpec, Squash};
pub use tape::{Activation, Gradients, ParamId, ParamStore, Tape, Var};
pub use tensor::Tensor;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// `batch x dim` matrix of i.i.d. standard normal draws.
pub fn sample_latent<R: Rng + ?Sized>(dim: usize, batch: usize, rng: &mut R) -> Tensor {
    let data: Vec<f64> = (0..dim * batch)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Tensor::matrix(batch, dim, data).expect("shape matches data length")
}
