use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    consistency_loss, kl_loss, laplacian_loss, make_swap_batch, reconstruction_loss, ConsistencyNorm, Result,
    SdVae, SdVaeError,
};
use crate::diff::{Adam, DiffError, Graph, Tensor, Var};
use crate::mesh::{mean_vertex_distance, CorrespondedMesh, ATTRIBUTE_COUNT};
use crate::spectral::build_laplacian;
use crate::LATENT_DIM;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Laplacian weight.
    pub alpha: f64,
    /// KL weight.
    pub beta: f64,
    /// Latent-consistency weight.
    pub kappa: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub consistency_norm: ConsistencyNorm,
    /// Optimizer steps per epoch; `None` makes one pass over the training set.
    pub steps_per_epoch: Option<usize>,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 600,
            batch_size: 16,
            lr: 1e-4,
            alpha: 0.1,
            beta: 1e-4,
            kappa: 0.5,
            eta1: 0.5,
            eta2: 0.5,
            consistency_norm: ConsistencyNorm::Squared,
            steps_per_epoch: None,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr, self.alpha, self.beta, self.kappa, self.eta1, self.eta2];
        if positive.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || self.lr <= 0.0 {
            return Err(SdVaeError::Config("weights and margins must be finite and non-negative".into()));
        }
        if self.batch_size < 2 {
            return Err(SdVaeError::BatchTooSmall {
                needed: 2,
                got: self.batch_size,
            });
        }
        if self.epochs == 0 || self.steps_per_epoch == Some(0) {
            return Err(SdVaeError::Config("epochs and steps per epoch must be positive".into()));
        }
        Ok(())
    }
}

pub struct TrainData<'a> {
    pub train: Vec<(&'a str, &'a CorrespondedMesh)>,
    pub val: Vec<&'a CorrespondedMesh>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub reconstruction: f64,
    pub laplacian: f64,
    pub kl: f64,
    pub consistency: f64,
    pub total: f64,
    /// Mean vertex distance between validation meshes and their
    /// reconstructions, mm; `None` without a validation set.
    pub val_reconstruction_mm: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
}

impl TrainingLog {
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "epoch",
            "reconstruction",
            "laplacian",
            "kl",
            "consistency",
            "total",
            "val_reconstruction_mm",
        ])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.reconstruction.to_string(),
                e.laplacian.to_string(),
                e.kl.to_string(),
                e.consistency.to_string(),
                e.total.to_string(),
                e.val_reconstruction_mm.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()
    }
}

pub struct TrainOutcome {
    /// Parameters with the lowest validation error (the last epoch's without
    /// a validation set).
    pub model: SdVae,
    pub log: TrainingLog,
    /// Generator state after the final step.
    pub rng: ChaCha8Rng,
}

struct StepTerms {
    reconstruction: f64,
    laplacian: f64,
    kl: f64,
    consistency: f64,
    total: f64,
}

fn diverged(epoch: usize, step: usize, e: impl std::fmt::Display) -> SdVaeError {
    SdVaeError::Diverged {
        epoch,
        step,
        detail: e.to_string(),
    }
}

/// Mean vertex distance of reconstructions, mm.
fn validation_error(model: &SdVae, val: &[&CorrespondedMesh]) -> Result<Option<f64>> {
    if val.is_empty() {
        return Ok(None);
    }
    let owned: Vec<CorrespondedMesh> = val.iter().map(|m| (*m).clone()).collect();
    let rec = model.reconstruct(&owned)?;
    let mut total = 0.0;
    for (a, b) in owned.iter().zip(&rec) {
        total += mean_vertex_distance(a, b)?;
    }
    Ok(Some(total / owned.len() as f64))
}

/// Nodes of the training objective inside one graph.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub reconstruction: Var,
    pub laplacian: Var,
    pub kl: Var,
    pub consistency: Var,
    pub total: Var,
}

/// Reconstruction + α·Laplacian + β·KL + κ·consistency for the stacked
/// `b × b` swap grid `x` with reparameterisation noise `eps` (`b² × 75`).
/// `offset` holds the normaliser's mean position for every stacked vertex.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    g: &mut Graph,
    model: &SdVae,
    p: &[Var],
    x: Var,
    eps: Tensor,
    b: usize,
    swapped: usize,
    config: &TrainingConfig,
    laplacian: &Arc<crate::linalg::CsrMatrix>,
    offset: &Tensor,
) -> Result<LossVars> {
    let count = b * b;
    let (mu, ls) = model.encode_graph(g, p, x, count)?;
    let eps = g.constant(eps);
    let sigma = g.exp(ls)?;
    let scaled = g.mul(sigma, eps)?;
    let z = g.add(mu, scaled)?;
    let out = model.decode_graph(g, p, z, count)?;

    let rec = reconstruction_loss(g, out, x)?;
    let off = g.constant(offset.clone());
    let lap = laplacian_loss(g, out, laplacian.clone(), Some(off))?;
    let kl = kl_loss(g, mu, ls)?;
    let cons = consistency_loss(g, mu, b, swapped, config.eta1, config.eta2, config.consistency_norm)?;

    let a = g.scale(lap, config.alpha)?;
    let bk = g.scale(kl, config.beta)?;
    let c = g.scale(cons, config.kappa)?;
    let t = g.add(rec, a)?;
    let t = g.add(t, bk)?;
    let total = g.add(t, c)?;
    Ok(LossVars {
        reconstruction: rec,
        laplacian: lap,
        kl,
        consistency: cons,
        total,
    })
}

/// Builds the graph for one swap batch and returns the loss terms after
/// backpropagation, leaving gradients in `g`.
#[allow(clippy::too_many_arguments)]
fn step_graph(
    model: &SdVae,
    config: &TrainingConfig,
    grid: &[&CorrespondedMesh],
    b: usize,
    swapped: usize,
    laplacian: &Arc<crate::linalg::CsrMatrix>,
    offset: &Tensor,
    rng: &mut ChaCha8Rng,
) -> std::result::Result<(Graph, Vec<Var>, StepTerms), SdVaeError> {
    let count = grid.len();
    let mut g = Graph::new();
    let p: Vec<_> = model.params.iter().map(|t| g.param(t.clone())).collect();
    let x = g.constant(model.stack(grid)?);
    let noise: Vec<f64> = (0..count * LATENT_DIM).map(|_| rng.sample(StandardNormal)).collect();
    let eps = Tensor::new(count, LATENT_DIM, noise)?;
    let l = total_loss(&mut g, model, &p, x, eps, b, swapped, config, laplacian, offset)?;
    let terms = StepTerms {
        reconstruction: g.value(l.reconstruction).item(),
        laplacian: g.value(l.laplacian).item(),
        kl: g.value(l.kl).item(),
        consistency: g.value(l.consistency).item(),
        total: g.value(l.total).item(),
    };
    g.backward(l.total)?;
    Ok((g, p, terms))
}

/// Swap-batch training with Adam. Each step draws `B` distinct training
/// subjects and one attribute uniformly, encodes the whole `B × B` grid,
/// and minimises reconstruction + α·Laplacian + β·KL + κ·consistency.
pub fn train(
    init: SdVae,
    data: &TrainData,
    config: &TrainingConfig,
    observer: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    let b = config.batch_size;
    if data.train.len() < b {
        return Err(SdVaeError::BatchTooSmall {
            needed: b,
            got: data.train.len(),
        });
    }
    let mut model = init;
    let laplacian = Arc::new(build_laplacian(&model.topology));
    let offset_row = model.normalizer.offset();
    let mut offset = Vec::with_capacity(b * b * offset_row.len());
    for _ in 0..b * b {
        offset.extend_from_slice(&offset_row);
    }
    let offset = Tensor::new(b * b * model.vertex_count(), 3, offset)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.lr, &model.params);
    let steps = config.steps_per_epoch.unwrap_or_else(|| data.train.len().div_ceil(b));
    let mut log = TrainingLog::default();
    let mut best: Option<(f64, Vec<Tensor>)> = None;

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let mut sums = [0.0; 5];
        for step in 0..steps {
            let picked = sample(&mut rng, data.train.len(), b).into_vec();
            let subjects: Vec<(&str, &CorrespondedMesh)> = picked.iter().map(|&i| data.train[i]).collect();
            let swapped = rng.random_range(0..ATTRIBUTE_COUNT);
            let batch = make_swap_batch(&subjects, swapped)?;
            let grid: Vec<&CorrespondedMesh> = batch.grid.iter().collect();
            let (g, p, terms) = step_graph(&model, config, &grid, b, swapped, &laplacian, &offset, &mut rng)
                .map_err(|e| match e {
                    SdVaeError::Diff(DiffError::NonFinite { .. }) => diverged(epoch, step, e),
                    other => other,
                })?;
            if !terms.total.is_finite() {
                return Err(diverged(epoch, step, "non-finite total loss"));
            }
            let grads: Vec<Tensor> = p
                .iter()
                .zip(&model.params)
                .map(|(v, t)| g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols())))
                .collect();
            adam.step(&mut model.params, &grads)?;
            if model.params.iter().any(|t| !t.is_finite()) {
                return Err(diverged(epoch, step, "non-finite parameters after update"));
            }
            for (s, v) in sums
                .iter_mut()
                .zip([terms.reconstruction, terms.laplacian, terms.kl, terms.consistency, terms.total])
            {
                *s += v;
            }
        }
        let n = steps as f64;
        let val = validation_error(&model, &data.val)
            .map_err(|e| diverged(epoch, steps, format!("validation: {e}")))?;
        let entry = EpochLog {
            epoch,
            reconstruction: sums[0] / n,
            laplacian: sums[1] / n,
            kl: sums[2] / n,
            consistency: sums[3] / n,
            total: sums[4] / n,
            val_reconstruction_mm: val,
            seconds: started.elapsed().as_secs_f64(),
        };
        observer(&entry);
        log.epochs.push(entry);
        let score = val.unwrap_or(f64::NEG_INFINITY);
        if val.is_none() || best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, model.params.clone()));
            log.best_epoch = Some(epoch);
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok(TrainOutcome { model, log, rng })
}
