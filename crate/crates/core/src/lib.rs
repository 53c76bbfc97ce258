//! Generative augmentation for the temporal stream of video classification.
//!
//! Videos are compressed into dynamic images by rank pooling, a Wasserstein
//! GAN per class synthesizes new dynamic images, and self-paced selection
//! decides which generated images join classifier training and when.
//!
//! Module map:
//!
//! | module | contents |
//! |--------|----------|
//! | [`numerics`] | tensors, seeded RNG streams, optimizers, finite-difference checks |
//! | [`nn`] | dense layers with hand-written backward passes |
//! | [`videodata`] | synthetic videos, sparse sampling, the `DYN1` container |
//! | [`rankpool`] | ranking energy, its subgradient, dynamic images |
//! | [`wgan`] | per-class weight-clipped WGAN and the `WGN1` checkpoint |
//! | [`classifier`] | MLP softmax classifier, schedules, the `CLF1` checkpoint |
//! | [`sps`] | margin / loss / random selection of generated samples |
//! | [`par`] | data-parallel map with a sequential fallback |

pub mod classifier;
pub mod error;
pub mod nn;
pub mod numerics;
pub mod par;
pub mod rankpool;
pub mod sps;
pub mod videodata;
pub mod wgan;

mod binio;

pub use error::{Error, Result};
