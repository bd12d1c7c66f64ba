use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{LatentVector, Result, SdVae, SdVaeError};
use crate::mesh::{mean_vertex_distance, CorrespondedMesh};
use crate::LATENT_DIM;

/// Anything that reconstructs meshes and generates them from latents.
pub trait MeshModel {
    fn reconstruct(&self, meshes: &[CorrespondedMesh]) -> Result<Vec<CorrespondedMesh>>;
    fn generate(&self, latents: &[LatentVector]) -> Result<Vec<CorrespondedMesh>>;
}

impl MeshModel for SdVae {
    fn reconstruct(&self, meshes: &[CorrespondedMesh]) -> Result<Vec<CorrespondedMesh>> {
        SdVae::reconstruct(self, meshes)
    }

    fn generate(&self, latents: &[LatentVector]) -> Result<Vec<CorrespondedMesh>> {
        SdVae::generate(self, latents)
    }
}

/// Reconstructs every mesh exactly and generates a fixed template.
#[derive(Debug, Clone)]
pub struct IdentityStub {
    pub template: CorrespondedMesh,
}

impl MeshModel for IdentityStub {
    fn reconstruct(&self, meshes: &[CorrespondedMesh]) -> Result<Vec<CorrespondedMesh>> {
        Ok(meshes.to_vec())
    }

    fn generate(&self, latents: &[LatentVector]) -> Result<Vec<CorrespondedMesh>> {
        Ok(vec![self.template.clone(); latents.len()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt() })
    }
}

const CHUNK: usize = 32;

/// Mean vertex distance between each test mesh and its reconstruction, mm.
pub fn metric_reconstruction_error(model: &dyn MeshModel, test: &[CorrespondedMesh]) -> Result<MeanStd> {
    let mut errors = Vec::with_capacity(test.len());
    for chunk in test.chunks(CHUNK) {
        let rec = model.reconstruct(chunk)?;
        for (a, b) in chunk.iter().zip(&rec) {
            errors.push(mean_vertex_distance(a, b)?);
        }
    }
    MeanStd::of(&errors).ok_or(SdVaeError::BatchTooSmall { needed: 1, got: 0 })
}

/// Mean vertex distance over `n / 2` disjoint random pairs of meshes
/// generated from standard-normal latents, mm.
pub fn metric_diversity(model: &dyn MeshModel, n: usize, seed: u64) -> Result<f64> {
    if n < 2 {
        return Err(SdVaeError::BatchTooSmall { needed: 2, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latents: Vec<LatentVector> = (0..n)
        .map(|_| LatentVector::new((0..LATENT_DIM).map(|_| rng.sample(StandardNormal)).collect()))
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let pairs = n / 2;
    let mut total = 0.0;
    for chunk in order[..2 * pairs].chunks(2 * CHUNK) {
        let batch: Vec<LatentVector> = chunk.iter().map(|&i| latents[i].clone()).collect();
        let meshes = model.generate(&batch)?;
        for pair in meshes.chunks(2) {
            total += mean_vertex_distance(&pair[0], &pair[1])?;
        }
    }
    Ok(total / pairs as f64)
}
