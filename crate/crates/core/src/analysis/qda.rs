use nalgebra::{DMatrix, SVD};
use serde::{Deserialize, Serialize};

use super::{check_samples, class_list, AnalysisError, Result};
use crate::cohort::ClassLabel;

/// One Gaussian per class, with its own full covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QdaModel {
    pub classes: Vec<ClassLabel>,
    pub priors: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Per class, the covariance eigenvectors as `d × d` row-major columns.
    rotations: Vec<Vec<f64>>,
    /// Per class, the covariance eigenvalues.
    variances: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: ClassLabel,
    /// Normalised log-posterior of every class, in model class order.
    pub log_posteriors: Vec<f64>,
}

impl QdaModel {
    pub fn dimension(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn covariance(&self, class: usize) -> Vec<Vec<f64>> {
        let d = self.dimension();
        let (r, s) = (&self.rotations[class], &self.variances[class]);
        (0..d)
            .map(|i| (0..d).map(|j| (0..d).map(|k| r[i * d + k] * s[k] * r[j * d + k]).sum()).collect())
            .collect()
    }

    /// Replaces the priors; any positive weights are accepted and normalised.
    pub fn set_priors(&mut self, weights: &[f64]) -> Result<()> {
        let total: f64 = weights.iter().sum();
        if weights.len() != self.classes.len() || weights.iter().any(|w| !(*w > 0.0)) || !total.is_finite() {
            return Err(AnalysisError::Dimension {
                expected: self.classes.len(),
                got: weights.len(),
            });
        }
        self.priors = weights.iter().map(|w| w / total).collect();
        Ok(())
    }

    /// Unnormalised `log prior + log N(z; μ_c, Σ_c)` per class.
    pub fn log_joint(&self, z: &[f64]) -> Result<Vec<f64>> {
        let d = self.dimension();
        if z.len() != d {
            return Err(AnalysisError::Dimension { expected: d, got: z.len() });
        }
        let log_2pi = (2.0 * std::f64::consts::PI).ln();
        Ok((0..self.classes.len())
            .map(|c| {
                let (r, s, mu) = (&self.rotations[c], &self.variances[c], &self.means[c]);
                let mut maha = 0.0;
                let mut log_det = 0.0;
                for k in 0..d {
                    let proj: f64 = (0..d).map(|i| (z[i] - mu[i]) * r[i * d + k]).sum();
                    maha += proj * proj / s[k];
                    log_det += s[k].ln();
                }
                self.priors[c].ln() - 0.5 * (maha + log_det + d as f64 * log_2pi)
            })
            .collect())
    }

    pub fn classify(&self, z: &[f64]) -> Result<Classification> {
        let joint = self.log_joint(z)?;
        let (best, top) = joint
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        let norm = top + joint.iter().map(|v| (v - top).exp()).sum::<f64>().ln();
        Ok(Classification {
            label: self.classes[best].clone(),
            log_posteriors: joint.iter().map(|v| v - norm).collect(),
        })
    }
}

/// Per-class SVD of the centred samples. A class whose covariance has a
/// singular value at or below `tol` is an error; nothing is regularised.
pub fn fit_qda(samples: &[Vec<f64>], labels: &[ClassLabel], tol: f64) -> Result<QdaModel> {
    let d = check_samples(samples, labels)?;
    let classes = class_list(labels);
    if classes.len() < 2 {
        return Err(AnalysisError::SingleClass(classes.len()));
    }
    let n = samples.len();
    let mut model = QdaModel {
        classes: classes.clone(),
        priors: Vec::new(),
        means: Vec::new(),
        rotations: Vec::new(),
        variances: Vec::new(),
    };
    for class in &classes {
        let members: Vec<&Vec<f64>> = samples.iter().zip(labels).filter(|(_, l)| *l == class).map(|(x, _)| x).collect();
        let nc = members.len();
        let mean: Vec<f64> = (0..d).map(|j| members.iter().map(|x| x[j]).sum::<f64>() / nc as f64).collect();
        let degenerate = |rank| AnalysisError::DegenerateCovariance {
            class: class.clone(),
            samples: nc,
            dim: d,
            rank,
        };
        if nc <= d {
            return Err(degenerate(nc.saturating_sub(1)));
        }
        let scale = 1.0 / ((nc - 1) as f64).sqrt();
        let centred = DMatrix::from_fn(nc, d, |i, j| (members[i][j] - mean[j]) * scale);
        let svd = SVD::new(centred, false, true);
        let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
        if rank < d {
            return Err(degenerate(rank));
        }
        let vt = svd.v_t.expect("requested");
        model.rotations.push((0..d * d).map(|idx| vt[(idx % d, idx / d)]).collect());
        model.variances.push(svd.singular_values.iter().map(|s| s * s).collect());
        model.priors.push(nc as f64 / n as f64);
        model.means.push(mean);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use nalgebra::{Matrix2, Vector2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use super::*;

    fn gaussian(rng: &mut ChaCha8Rng, centre: &[f64], spread: f64, n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| centre.iter().map(|c| c + spread * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect()
    }

    fn two_classes(seed: u64, gap: f64) -> (Vec<Vec<f64>>, Vec<ClassLabel>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = gaussian(&mut rng, &[0.0, 0.0, 0.0], 1.0, 50);
        x.extend(gaussian(&mut rng, &[gap, 0.0, 0.0], 1.0, 50));
        let y = (0..100).map(|i| ClassLabel::new(if i < 50 { "a" } else { "b" })).collect();
        (x, y)
    }

    #[test]
    fn far_apart_classes_are_separated() {
        let (x, y) = two_classes(0, 10.0);
        let m = fit_qda(&x, &y, 1e-4).unwrap();
        let (test, truth) = two_classes(1, 10.0);
        for (z, l) in test.iter().zip(&truth) {
            assert_eq!(&m.classify(z).unwrap().label, l);
        }
        for (c, mu) in m.means.iter().enumerate() {
            assert_eq!(m.classify(mu).unwrap().label, m.classes[c]);
        }
        let total: f64 = m.priors.iter().sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn covariance_is_symmetric_psd() {
        let (x, y) = two_classes(2, 3.0);
        let m = fit_qda(&x, &y, 1e-4).unwrap();
        let cov = m.covariance(0);
        let mat = DMatrix::from_fn(3, 3, |i, j| cov[i][j]);
        assert!((&mat - mat.transpose()).amax() < 1e-12);
        assert!(mat.symmetric_eigenvalues().iter().all(|&e| e >= -1e-12));
        // sample covariance of class a, computed directly
        let a = &x[..50];
        let mean: Vec<f64> = (0..3).map(|j| a.iter().map(|v| v[j]).sum::<f64>() / 50.0).collect();
        for i in 0..3 {
            for j in 0..3 {
                let direct = a.iter().map(|v| (v[i] - mean[i]) * (v[j] - mean[j])).sum::<f64>() / 49.0;
                assert!((cov[i][j] - direct).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn degenerate_classes_rejected() {
        let (x, y) = two_classes(3, 5.0);
        let flat: Vec<Vec<f64>> = x.iter().map(|v| vec![v[0], v[1], 0.0]).collect();
        assert!(matches!(
            fit_qda(&flat, &y, 1e-4),
            Err(AnalysisError::DegenerateCovariance { rank: 2, dim: 3, .. })
        ));
        let few: Vec<Vec<f64>> = x[48..52].to_vec();
        assert!(matches!(
            fit_qda(&few, &y[48..52], 1e-4),
            Err(AnalysisError::DegenerateCovariance { samples: 2, .. })
        ));
    }

    #[test]
    fn scaling_priors_keeps_labels() {
        let (x, y) = two_classes(4, 2.0);
        let mut m = fit_qda(&x, &y, 1e-4).unwrap();
        let (test, _) = two_classes(5, 2.0);
        let before: Vec<_> = test.iter().map(|z| m.classify(z).unwrap().label).collect();
        let doubled: Vec<f64> = m.priors.iter().map(|p| 2.0 * p).collect();
        m.set_priors(&doubled).unwrap();
        let after: Vec<_> = test.iter().map(|z| m.classify(z).unwrap().label).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn equal_covariances_give_linear_boundary() {
        let (x, _) = two_classes(6, 0.0);
        let a = x[..50].to_vec();
        let b: Vec<Vec<f64>> = a.iter().map(|v| vec![v[0] + 3.0, v[1] - 1.0, v[2] + 0.5]).collect();
        let samples: Vec<Vec<f64>> = a.into_iter().chain(b).collect();
        let labels: Vec<ClassLabel> = (0..100).map(|i| ClassLabel::new(if i < 50 { "a" } else { "b" })).collect();
        let m = fit_qda(&samples, &labels, 1e-4).unwrap();
        let f = |z: &[f64]| {
            let j = m.log_joint(z).unwrap();
            j[0] - j[1]
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let p: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let q: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let pq: Vec<f64> = p.iter().zip(&q).map(|(s, t)| s + t).collect();
            let residual = f(&pq) - f(&p) - f(&q) + f(&[0.0; 3]);
            assert!(residual.abs() < 1e-8, "{residual}");
        }
    }

    /// Labels from the textbook density formula with an explicit inverse and
    /// determinant.
    #[test]
    fn matches_brute_force_density_on_random_2d_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let classes = rng.random_range(2..5);
            let mut x = Vec::new();
            let mut y = Vec::new();
            for c in 0..classes {
                let centre = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
                let n = rng.random_range(4..12);
                let shear = rng.random_range(-1.0..1.0);
                for _ in 0..n {
                    let u: f64 = rng.sample(StandardNormal);
                    let v: f64 = rng.sample(StandardNormal);
                    x.push(vec![centre[0] + u * (1.0 + c as f64 * 0.5), centre[1] + shear * u + v]);
                    y.push(ClassLabel::new(format!("k{c}")));
                }
            }
            let m = fit_qda(&x, &y, 1e-4).unwrap();
            let z = [rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)];
            let mut best = (f64::NEG_INFINITY, 0);
            for c in 0..m.classes.len() {
                let members: Vec<&Vec<f64>> = x.iter().zip(&y).filter(|(_, l)| **l == m.classes[c]).map(|(p, _)| p).collect();
                let n = members.len() as f64;
                let mu = Vector2::new(
                    members.iter().map(|p| p[0]).sum::<f64>() / n,
                    members.iter().map(|p| p[1]).sum::<f64>() / n,
                );
                let mut cov = Matrix2::zeros();
                for p in &members {
                    let d = Vector2::new(p[0], p[1]) - mu;
                    cov += d * d.transpose() / (n - 1.0);
                }
                let diff = Vector2::new(z[0], z[1]) - mu;
                let density = (-0.5 * (diff.transpose() * cov.try_inverse().unwrap() * diff)[0]).exp()
                    / (2.0 * std::f64::consts::PI * cov.determinant().sqrt());
                let score = density * n / x.len() as f64;
                if score > best.0 {
                    best = (score, c);
                }
            }
            assert_eq!(m.classify(&z).unwrap().label, m.classes[best.1]);
        }
    }
}
