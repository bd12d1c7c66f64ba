//! Swap-disentangled spiral-convolution mesh VAE.
//!
//! The encoder maps a mesh to a Gaussian over a 75-dimensional latent space
//! split into 15 subsets of 5 variables, one per anatomical attribute. During
//! training, mini-batches are expanded into a grid in which one attribute is
//! exchanged between subjects, and a hinge loss asks the latent subsets to
//! follow the exchange.

mod checkpoint;
mod hierarchy;
mod loss;
mod metrics;
mod model;
mod swap;
mod train;

use serde::{Deserialize, Serialize};

use crate::diff::DiffError;
use crate::mesh::{MeshError, ATTRIBUTE_COUNT};
use crate::{LATENT_DIM, SUBSET_DIM};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, RngState};
pub use hierarchy::{
    decimate, spiral_indices, upsampling_matrix, vertex_quadrics, Decimation, HierarchyLevel, MeshHierarchy,
    Quadric,
};
pub use loss::{
    consistency_loss, kl_loss, laplacian_loss, loss_kl, loss_latent_consistency, loss_laplacian,
    loss_reconstruction, reconstruction_loss, ConsistencyNorm,
};
pub use metrics::{metric_diversity, metric_reconstruction_error, IdentityStub, MeanStd, MeshModel};
pub use model::{Activation, ModelConfig, Normalizer, SdVae};
pub use swap::{make_swap_batch, SwapBatch};
pub use train::{total_loss, train, EpochLog, LossVars, TrainData, TrainOutcome, TrainingConfig, TrainingLog};

#[derive(Debug, thiserror::Error)]
pub enum SdVaeError {
    #[error("decimation: {0}")]
    Decimation(String),
    #[error("attribute index {0} out of range")]
    InvalidAttribute(usize),
    #[error("batch needs at least {needed} subjects, got {got}")]
    BatchTooSmall { needed: usize, got: usize },
    #[error("latent vector has length {0}, expected 75")]
    LatentLength(usize),
    #[error("mesh topology does not match the model")]
    TopologyMismatch,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged {
        epoch: usize,
        step: usize,
        detail: String,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SdVaeError> = std::result::Result<T, E>;

/// A point in the 75-dimensional latent space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LatentVector(Vec<f64>);

impl LatentVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != LATENT_DIM {
            return Err(SdVaeError::LatentLength(values.len()));
        }
        Ok(Self(values))
    }

    pub fn zeros() -> Self {
        Self(vec![0.0; LATENT_DIM])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    /// Variables `[5k, 5k+5)` belonging to attribute `k`.
    pub fn subset(&self, k: usize) -> &[f64] {
        assert!(k < ATTRIBUTE_COUNT, "attribute {k} out of range");
        &self.0[k * SUBSET_DIM..(k + 1) * SUBSET_DIM]
    }

    pub fn subset_mut(&mut self, k: usize) -> &mut [f64] {
        assert!(k < ATTRIBUTE_COUNT, "attribute {k} out of range");
        &mut self.0[k * SUBSET_DIM..(k + 1) * SUBSET_DIM]
    }
}

impl TryFrom<Vec<f64>> for LatentVector {
    type Error = SdVaeError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<LatentVector> for Vec<f64> {
    fn from(z: LatentVector) -> Self {
        z.0
    }
}

/// Attribute whose subset contains latent variable `i`.
pub fn attribute_of_variable(i: usize) -> usize {
    i / SUBSET_DIM
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsets_partition_the_latent() {
        let z = LatentVector::new((0..75).map(|i| i as f64).collect()).unwrap();
        let mut all: Vec<f64> = (0..15).flat_map(|k| z.subset(k).to_vec()).collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, z.values());
        assert_eq!(z.subset(3), &[15.0, 16.0, 17.0, 18.0, 19.0]);
        assert_eq!(attribute_of_variable(74), 14);
        assert!(LatentVector::new(vec![0.0; 74]).is_err());
        let json = serde_json::to_string(&z).unwrap();
        assert_eq!(serde_json::from_str::<LatentVector>(&json).unwrap(), z);
        assert!(serde_json::from_str::<LatentVector>("[1.0]").is_err());
    }
}
