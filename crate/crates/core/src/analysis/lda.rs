use nalgebra::{DMatrix, SVD};
use serde::{Deserialize, Serialize};

use super::{check_samples, class_list, AnalysisError, Result};
use crate::cohort::ClassLabel;

/// Fisher discriminant projection onto at most two axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub classes: Vec<ClassLabel>,
    pub priors: Vec<f64>,
    /// Prior-weighted mean of the class means.
    pub centre: Vec<f64>,
    /// `d × components`, row-major.
    pub scalings: Vec<f64>,
    pub components: usize,
    /// Fraction of between-class variance carried by each kept axis.
    pub explained_variance_ratio: Vec<f64>,
    pub embedded_means: Vec<[f64; 2]>,
}

impl LdaModel {
    pub fn dimension(&self) -> usize {
        self.centre.len()
    }

    /// `(z − centre)ᵀ W`, padded with zeros when fewer than two axes exist.
    pub fn embed(&self, z: &[f64]) -> Result<[f64; 2]> {
        if z.len() != self.dimension() {
            return Err(AnalysisError::Dimension {
                expected: self.dimension(),
                got: z.len(),
            });
        }
        let mut out = [0.0; 2];
        for (j, (v, c)) in z.iter().zip(&self.centre).enumerate() {
            let x = v - c;
            for (m, o) in out.iter_mut().enumerate().take(self.components) {
                *o += x * self.scalings[j * self.components + m];
            }
        }
        Ok(out)
    }

    pub fn embed_all(&self, samples: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
        samples.iter().map(|z| self.embed(z)).collect()
    }
}

/// Two-stage SVD solver: whiten the within-class scatter, then diagonalise
/// the between-class scatter of the whitened class means. Singular values
/// below `tol` (relative to the largest in the second stage) are dropped.
pub fn fit_lda(samples: &[Vec<f64>], labels: &[ClassLabel], tol: f64) -> Result<LdaModel> {
    let d = check_samples(samples, labels)?;
    let classes = class_list(labels);
    let (n, nc) = (samples.len(), classes.len());
    if nc < 2 {
        return Err(AnalysisError::SingleClass(nc));
    }
    if n <= nc {
        return Err(AnalysisError::TooFewSamples { samples: n, classes: nc });
    }
    let index: Vec<usize> = labels
        .iter()
        .map(|l| classes.binary_search(l).expect("label listed"))
        .collect();
    let mut counts = vec![0usize; nc];
    let mut means = vec![vec![0.0; d]; nc];
    for (x, &c) in samples.iter().zip(&index) {
        counts[c] += 1;
        for (m, v) in means[c].iter_mut().zip(x) {
            *m += v;
        }
    }
    for (m, &k) in means.iter_mut().zip(&counts) {
        m.iter_mut().for_each(|v| *v /= k as f64);
    }
    let priors: Vec<f64> = counts.iter().map(|&k| k as f64 / n as f64).collect();

    let mut within = DMatrix::zeros(n, d);
    for (i, (x, &c)) in samples.iter().zip(&index).enumerate() {
        for j in 0..d {
            within[(i, j)] = x[j] - means[c][j];
        }
    }
    let std: Vec<f64> = (0..d)
        .map(|j| {
            let col = within.column(j);
            let mean = col.mean();
            let s = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            if s == 0.0 {
                1.0
            } else {
                s
            }
        })
        .collect();
    let fac = (1.0 / (n - nc) as f64).sqrt();
    for j in 0..d {
        let s = std[j];
        within.column_mut(j).iter_mut().for_each(|v| *v = *v * fac / s);
    }
    let svd = SVD::new(within, false, true);
    let vt = svd.v_t.expect("requested");
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank == 0 {
        return Err(AnalysisError::SingularScatter);
    }
    // d × rank
    let whiten = DMatrix::from_fn(d, rank, |j, r| vt[(r, j)] / std[j] / svd.singular_values[r]);

    let centre: Vec<f64> = (0..d)
        .map(|j| (0..nc).map(|c| priors[c] * means[c][j]).sum())
        .collect();
    let fac2 = 1.0 / (nc - 1) as f64;
    let between = DMatrix::from_fn(nc, d, |c, j| (n as f64 * priors[c] * fac2).sqrt() * (means[c][j] - centre[j]));
    let projected = between * &whiten;
    let svd2 = SVD::new(projected, false, true);
    let s2 = &svd2.singular_values;
    let top = s2.iter().copied().fold(0.0, f64::max);
    if top <= 0.0 {
        return Err(AnalysisError::NoBetweenClassScatter);
    }
    let rank2 = s2.iter().filter(|&&s| s > tol * top).count();
    let vt2 = svd2.v_t.expect("requested");
    let components = rank2.min(2);
    let total: f64 = s2.iter().map(|s| s * s).sum();
    let explained_variance_ratio = s2.iter().take(components).map(|s| s * s / total).collect();
    let mut scalings = vec![0.0; d * components];
    for j in 0..d {
        for m in 0..components {
            scalings[j * components + m] = (0..rank).map(|r| whiten[(j, r)] * vt2[(m, r)]).sum();
        }
    }
    let mut model = LdaModel {
        classes,
        priors,
        centre,
        scalings,
        components,
        explained_variance_ratio,
        embedded_means: Vec::new(),
    };
    model.embedded_means = means.iter().map(|m| model.embed(m)).collect::<Result<_>>()?;
    Ok(model)
}
