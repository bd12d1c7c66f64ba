//! Linear and quadratic discriminant analysis on latent codes, iso-contours of
//! embedded class clouds, and latent-traversal displacement matrices.

mod confusion;
mod contours;
mod disentangle;
mod lda;
mod qda;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::cohort::ClassLabel;
use crate::mesh::{MeshError, ATTRIBUTE_COUNT};
use crate::sdvae::{LatentVector, SdVaeError};

pub use confusion::{confusion_matrix, ConfusionMatrix};
pub use contours::{iso_contours, ClassContour, ClassDistributionSummary, Ellipse};
pub use disentangle::{disentanglement_matrix, DisentanglementMatrix};
pub use lda::{fit_lda, LdaModel};
pub use qda::{fit_qda, Classification, QdaModel};

/// Singular-value threshold shared by both discriminant solvers.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("need at least two classes, got {0}")]
    SingleClass(usize),
    #[error("{samples} samples cannot separate {classes} classes")]
    TooFewSamples { samples: usize, classes: usize },
    #[error("{labels} labels for {samples} samples")]
    LabelCount { samples: usize, labels: usize },
    #[error("sample has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("within-class scatter is singular")]
    SingularScatter,
    #[error("class means coincide; no between-class scatter")]
    NoBetweenClassScatter,
    #[error(
        "covariance of class {class} is degenerate (rank {rank} of {dim} from {samples} samples); \
         QDA needs more than {dim} samples per class, e.g. fit on 5-variable attribute subsets"
    )]
    DegenerateCovariance {
        class: ClassLabel,
        samples: usize,
        dim: usize,
        rank: usize,
    },
    #[error("class {0} is not known to the model")]
    UnknownClass(ClassLabel),
    #[error("invalid sweep: {0}")]
    Sweep(String),
    #[error(transparent)]
    Model(#[from] SdVaeError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

pub type Result<T, E = AnalysisError> = std::result::Result<T, E>;

/// Sorted distinct labels.
pub(crate) fn class_list(labels: &[ClassLabel]) -> Vec<ClassLabel> {
    labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect()
}

pub(crate) fn check_samples(samples: &[Vec<f64>], labels: &[ClassLabel]) -> Result<usize> {
    if samples.len() != labels.len() {
        return Err(AnalysisError::LabelCount {
            samples: samples.len(),
            labels: labels.len(),
        });
    }
    let d = samples.first().map_or(0, Vec::len);
    for s in samples {
        if s.len() != d || d == 0 {
            return Err(AnalysisError::Dimension { expected: d, got: s.len() });
        }
    }
    Ok(d)
}

/// Which part of the latent a model was fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Whole,
    Attribute(usize),
}

impl Scope {
    pub fn select(&self, z: &LatentVector) -> Vec<f64> {
        match *self {
            Scope::Whole => z.values().to_vec(),
            Scope::Attribute(k) => z.subset(k).to_vec(),
        }
    }

    /// `whole` or `attribute_<k>`.
    pub fn parse(s: &str) -> Option<Self> {
        if s == "whole" {
            return Some(Scope::Whole);
        }
        let k: usize = s.strip_prefix("attribute_")?.parse().ok()?;
        (k < ATTRIBUTE_COUNT).then_some(Scope::Attribute(k))
    }
}

impl std::fmt::Display for Scope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scope::Whole => f.write_str("whole"),
            Scope::Attribute(k) => write!(f, "attribute_{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeModels {
    pub scope: Scope,
    pub lda: LdaModel,
    pub qda: QdaModel,
}

/// Whole-latent models followed by one pair per attribute subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentModels {
    pub whole: ScopeModels,
    pub attributes: Vec<ScopeModels>,
}

impl LatentModels {
    pub fn scope(&self, scope: Scope) -> Option<&ScopeModels> {
        match scope {
            Scope::Whole => Some(&self.whole),
            Scope::Attribute(k) => self.attributes.get(k),
        }
    }
}

fn fit_scope(scope: Scope, latents: &[LatentVector], labels: &[ClassLabel]) -> Result<ScopeModels> {
    let x: Vec<Vec<f64>> = latents.iter().map(|z| scope.select(z)).collect();
    Ok(ScopeModels {
        scope,
        lda: fit_lda(&x, labels, DEFAULT_TOLERANCE)?,
        qda: fit_qda(&x, labels, DEFAULT_TOLERANCE)?,
    })
}

pub fn per_attribute_models(latents: &[LatentVector], labels: &[ClassLabel]) -> Result<LatentModels> {
    Ok(LatentModels {
        whole: fit_scope(Scope::Whole, latents, labels)?,
        attributes: (0..ATTRIBUTE_COUNT)
            .map(|k| fit_scope(Scope::Attribute(k), latents, labels))
            .collect::<Result<_>>()?,
    })
}
