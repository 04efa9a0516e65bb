//! Coarse-grained bounded polynomial exponential family VAEs.
//!
//! The crate implements three variational autoencoders sharing one
//! reverse-mode autodiff engine:
//!
//! * a Gaussian VAE (diagonal Gaussian posterior, standard normal prior),
//! * a categorical VAE (Concrete relaxed one-hot latents, uniform prior),
//! * the coarse-grained BPEF VAE, whose latent `z_j = y_j^T zeta` is a
//!   Concrete sample over a grid `zeta` of `[-1, 1]` with polynomial logits.
//!
//! Around the models sit executable checks of the underlying theory:
//! information monotonicity of the KL divergence under coarse graining,
//! the argmax property of the Concrete distribution, Bregman centroids and
//! lower bounds on the KL term for discrete exponential families, and Monte
//! Carlo density grids over the 2-simplex.
//!
//! Monte Carlo loops are split into fixed-size chunks, each with its own
//! [`sampling::Rng`] stream, so results do not depend on the thread count.
//! The `parallel` feature (on by default) runs the chunks on rayon.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod distributions;
pub mod divergence;
pub mod error;
pub mod expfam;
pub mod parallel;
pub mod sampling;
pub mod vae;

pub use error::{Error, Result};
