//! Model assemblies built from graph layers and solvers.

pub mod baselines;
mod checkpoint;
mod gde;
mod hybrid;
mod latent;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use gde::{gde2_forward, gde_forward, GdeOutput, NeuralGDEModel};
pub use hybrid::{gcde_gru_forward, HybridGDEModel, HybridOutput, JumpMap};
pub use latent::{
    elbo_loss, elbo_terms, gaussian_log_likelihood, gsde_decode, kl_standard_normal, latent_encode,
    repressilator_graph, ElboTerms, LatentGDEModel, LatentPass, PosteriorParams,
};
