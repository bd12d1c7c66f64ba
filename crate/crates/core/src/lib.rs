//! Attribute-disentangled generative modelling of corresponded 3D head meshes.
//!
//! The crate covers the whole offline pipeline: fixed-topology meshes and their
//! anatomical segmentation ([`mesh`]), mesh-Laplacian spectra and spectral
//! interpolation augmentation ([`spectral`]), synthetic cohorts and dataset
//! manifests ([`cohort`]), a small reverse-mode autodiff engine ([`diff`]), the
//! swap-disentangled spiral-convolution VAE ([`sdvae`]), LDA/QDA latent analysis
//! ([`analysis`]) and procedure-restricted latent interpolation ([`planning`]).

pub mod analysis;
pub mod cohort;
pub mod diff;
pub mod linalg;
pub mod mesh;
pub mod planning;
pub mod sdvae;
pub mod spectral;

/// Length of the latent code.
pub const LATENT_DIM: usize = 75;
/// Latent variables per attribute subset.
pub const SUBSET_DIM: usize = 5;
