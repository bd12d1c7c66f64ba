use serde::{Deserialize, Serialize};

use super::{class_list, AnalysisError, Result};
use crate::cohort::ClassLabel;

/// One-standard-deviation contour of a 2D Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub centre: [f64; 2],
    /// Major then minor semi-axis.
    pub semi_axes: [f64; 2],
    /// Angle of the major axis from the first coordinate axis, radians.
    pub rotation: f64,
    /// Fewer than two points, or a covariance without full rank.
    pub degenerate: bool,
}

impl Ellipse {
    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.semi_axes[0] * self.semi_axes[1]
    }

    /// Polyline with `n` points, for plotting.
    pub fn outline(&self, n: usize) -> Vec<[f64; 2]> {
        let (s, c) = self.rotation.sin_cos();
        (0..n)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / n as f64;
                let (x, y) = (self.semi_axes[0] * t.cos(), self.semi_axes[1] * t.sin());
                [self.centre[0] + c * x - s * y, self.centre[1] + s * x + c * y]
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassContour {
    pub class: ClassLabel,
    pub count: usize,
    pub mean: [f64; 2],
    /// Sample covariance.
    pub covariance: [[f64; 2]; 2],
    pub ellipse: Ellipse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistributionSummary {
    pub classes: Vec<ClassContour>,
}

fn ellipse(mean: [f64; 2], cov: [[f64; 2]; 2], count: usize) -> Ellipse {
    let (a, b, c) = (cov[0][0], cov[0][1], cov[1][1]);
    let half_trace = 0.5 * (a + c);
    let root = (0.25 * (a - c).powi(2) + b * b).sqrt();
    let (l1, l2) = (half_trace + root, (half_trace - root).max(0.0));
    let rotation = match (b == 0.0, a >= c) {
        (true, true) => 0.0,
        (true, false) => std::f64::consts::FRAC_PI_2,
        // eigenvector (b, l1 − a)
        _ => (l1 - a).atan2(b),
    };
    Ellipse {
        centre: mean,
        semi_axes: [l1.sqrt(), l2.sqrt()],
        rotation,
        degenerate: count < 2 || l2 <= 1e-12 * l1.max(f64::MIN_POSITIVE),
    }
}

pub fn iso_contours(points: &[[f64; 2]], labels: &[ClassLabel]) -> Result<ClassDistributionSummary> {
    if points.len() != labels.len() {
        return Err(AnalysisError::LabelCount {
            samples: points.len(),
            labels: labels.len(),
        });
    }
    let classes = class_list(labels)
        .into_iter()
        .map(|class| {
            let pts: Vec<[f64; 2]> = points.iter().zip(labels).filter(|(_, l)| **l == class).map(|(p, _)| *p).collect();
            let n = pts.len() as f64;
            let mean = [pts.iter().map(|p| p[0]).sum::<f64>() / n, pts.iter().map(|p| p[1]).sum::<f64>() / n];
            let mut cov = [[0.0; 2]; 2];
            if pts.len() > 1 {
                for p in &pts {
                    let d = [p[0] - mean[0], p[1] - mean[1]];
                    for i in 0..2 {
                        for j in 0..2 {
                            cov[i][j] += d[i] * d[j] / (n - 1.0);
                        }
                    }
                }
            }
            ClassContour {
                class,
                count: pts.len(),
                mean,
                covariance: cov,
                ellipse: ellipse(mean, cov, pts.len()),
            }
        })
        .collect();
    Ok(ClassDistributionSummary { classes })
}
