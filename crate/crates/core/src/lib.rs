//! Streaming drag manipulation of an autoregressive toy latent video model.
//!
//! The crate is layered bottom-up: [`tensor`] provides arithmetic, FFTs and
//! reverse-mode gradients; [`model`] is a small seeded autoregressive
//! denoiser with a KV cache and a procedural decoder; [`drag`] resolves user
//! drag instructions into target masks; [`optim`] runs the latent region
//! optimisation; [`metrics`] scores the results.

pub mod drag;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod tensor;
