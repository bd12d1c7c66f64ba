use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{AnalysisError, Result};
use crate::mesh::{displacement, region_mean_displacement, ATTRIBUTE_COUNT};
use crate::sdvae::{attribute_of_variable, LatentVector, MeshModel};
use crate::LATENT_DIM;

/// Mean displacement (mm) of every attribute region while one latent variable
/// sweeps from `sweep.0` to `sweep.1` with the others held at the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisentanglementMatrix {
    pub sweep: (f64, f64),
    /// One row per latent variable.
    pub entries: Vec<[f64; ATTRIBUTE_COUNT]>,
}

impl DisentanglementMatrix {
    /// Region with the largest displacement for variable `i`.
    pub fn argmax(&self, i: usize) -> usize {
        let row = &self.entries[i];
        (0..ATTRIBUTE_COUNT).fold(0, |best, k| if row[k] > row[best] { k } else { best })
    }

    /// Per attribute, the fraction of its subset's variables whose argmax is
    /// its own region.
    pub fn subset_fractions(&self) -> [f64; ATTRIBUTE_COUNT] {
        let mut hits = [0usize; ATTRIBUTE_COUNT];
        let mut total = [0usize; ATTRIBUTE_COUNT];
        for i in 0..self.entries.len() {
            let k = attribute_of_variable(i);
            total[k] += 1;
            hits[k] += usize::from(self.argmax(i) == k);
        }
        std::array::from_fn(|k| if total[k] == 0 { 0.0 } else { hits[k] as f64 / total[k] as f64 })
    }

    /// Fraction of all variables whose argmax is the region of their subset.
    pub fn argmax_fraction(&self) -> f64 {
        let hits = (0..self.entries.len())
            .filter(|&i| self.argmax(i) == attribute_of_variable(i))
            .count();
        hits as f64 / self.entries.len() as f64
    }

    /// Per region k, the largest ratio over latent subsets of the subset's
    /// mean displacement of region k to its mean displacement of the other
    /// regions.
    pub fn region_dominance(&self) -> [f64; ATTRIBUTE_COUNT] {
        let mut subsets = [[0.0; ATTRIBUTE_COUNT]; ATTRIBUTE_COUNT];
        let mut counts = [0usize; ATTRIBUTE_COUNT];
        for (i, row) in self.entries.iter().enumerate() {
            let s = attribute_of_variable(i);
            counts[s] += 1;
            subsets[s].iter_mut().zip(row).for_each(|(acc, v)| *acc += v);
        }
        std::array::from_fn(|k| {
            subsets
                .iter()
                .zip(&counts)
                .filter(|(_, &n)| n > 0)
                .map(|(row, _)| {
                    let others = (row.iter().sum::<f64>() - row[k]) / (ATTRIBUTE_COUNT - 1) as f64;
                    if others > 0.0 {
                        row[k] / others
                    } else if row[k] > 0.0 {
                        f64::INFINITY
                    } else {
                        0.0
                    }
                })
                .fold(0.0, f64::max)
        })
    }

    /// `variable,<region names...>`.
    pub fn write_csv<W: Write>(&self, out: W, region_names: &[String]) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["variable".to_string()];
        header.extend(region_names.iter().cloned());
        w.write_record(&header)?;
        for (i, row) in self.entries.iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()
    }
}

pub fn disentanglement_matrix(
    model: &dyn MeshModel,
    sweep: (f64, f64),
    baseline: &LatentVector,
) -> Result<DisentanglementMatrix> {
    if !(sweep.0.is_finite() && sweep.1.is_finite()) || sweep.0 >= sweep.1 {
        return Err(AnalysisError::Sweep(format!("{:?}", sweep)));
    }
    let mut latents = Vec::with_capacity(2 * LATENT_DIM);
    for i in 0..LATENT_DIM {
        for v in [sweep.0, sweep.1] {
            let mut z = baseline.clone();
            z.values_mut()[i] = v;
            latents.push(z);
        }
    }
    let meshes = model.generate(&latents)?;
    let mut entries = Vec::with_capacity(LATENT_DIM);
    for pair in meshes.chunks(2) {
        let field = displacement(&pair[0], &pair[1])?;
        let masks = pair[0].topology().attribute_masks();
        let mut row = [0.0; ATTRIBUTE_COUNT];
        for (k, mask) in masks.iter().enumerate() {
            row[k] = region_mean_displacement(&field, mask)?;
        }
        entries.push(row);
    }
    Ok(DisentanglementMatrix { sweep, entries })
}
