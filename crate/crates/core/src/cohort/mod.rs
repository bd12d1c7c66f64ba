//! Subject manifests, stratified splits and class-balancing augmentation plans.

mod synthetic;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mesh::CorrespondedMesh;
use crate::spectral::{sample_weights, spectral_augment, LaplacianEigenbasis, SpectralError};

pub use synthetic::{
    generate_synthetic_cohort, geodesic_sphere, synthetic_template, AgeScale, SubjectFactors,
    SyntheticCohort, SyntheticFactorSpec, SyntheticTemplate,
};

#[derive(Debug, thiserror::Error)]
pub enum CohortError {
    #[error("class {class} has {count} subjects, at least {needed} required")]
    TooFewSubjects {
        class: String,
        count: usize,
        needed: usize,
    },
    #[error("class {0}: no age group contains two subjects to pair")]
    NoPairableAgeGroup(String),
    #[error("subject count for class {0} must be positive")]
    NonPositiveCount(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("invalid split ratios {0:?}")]
    InvalidRatios([f64; 3]),
    #[error("unknown subject {0}")]
    UnknownSubject(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = CohortError> = std::result::Result<T, E>;

/// Diagnostic class. The four built-in labels are provided as constructors;
/// any other label is accepted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassLabel(pub String);

impl ClassLabel {
    pub const HEALTHY: &'static str = "Healthy";
    pub const APERT: &'static str = "Apert";
    pub const CROUZON: &'static str = "Crouzon";
    pub const MUENKE: &'static str = "Muenke";

    pub fn new(label: impl Into<String>) -> Self {
        Self(label.into())
    }

    pub fn healthy() -> Self {
        Self::new(Self::HEALTHY)
    }

    pub fn builtin() -> [ClassLabel; 4] {
        [
            Self::new(Self::HEALTHY),
            Self::new(Self::APERT),
            Self::new(Self::CROUZON),
            Self::new(Self::MUENKE),
        ]
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    M,
    F,
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::M => "M",
            Sex::F => "F",
        })
    }
}

impl FromStr for Sex {
    type Err = CohortError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "M" => Ok(Sex::M),
            "F" => Ok(Sex::F),
            other => Err(CohortError::Manifest(format!("bad sex {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Augmented,
    Synthetic,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Real => "real",
            Provenance::Augmented => "augmented",
            Provenance::Synthetic => "synthetic",
        })
    }
}

impl FromStr for Provenance {
    type Err = CohortError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(Provenance::Real),
            "augmented" => Ok(Provenance::Augmented),
            "synthetic" => Ok(Provenance::Synthetic),
            other => Err(CohortError::Manifest(format!("bad provenance {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = CohortError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(CohortError::Manifest(format!("bad split {other:?}"))),
        }
    }
}

/// Age bands within which augmentation pairs are drawn: `[0, 4)` and `[4, 20]`.
pub fn age_group(age: f64) -> usize {
    usize::from(age >= 4.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    pub class_label: ClassLabel,
    pub age: f64,
    pub sex: Sex,
    pub mesh_path: String,
    pub provenance: Provenance,
    pub parents: Option<(String, String)>,
}

pub type SplitAssignment = BTreeMap<String, Split>;

/// Records plus their split, persisted as
/// `id,class,age,sex,provenance,parents,mesh_path,split`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<SubjectRecord>,
    pub splits: SplitAssignment,
}

const MANIFEST_COLUMNS: [&str; 8] = [
    "id",
    "class",
    "age",
    "sex",
    "provenance",
    "parents",
    "mesh_path",
    "split",
];

impl Manifest {
    pub fn new(records: Vec<SubjectRecord>) -> Self {
        Self {
            records,
            splits: SplitAssignment::new(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&SubjectRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn split_of(&self, id: &str) -> Option<Split> {
        self.splits.get(id).copied()
    }

    pub fn in_split(&self, split: Split) -> Vec<&SubjectRecord> {
        self.records
            .iter()
            .filter(|r| self.split_of(&r.id) == Some(split))
            .collect()
    }

    pub fn class_counts(&self, split: Option<Split>) -> BTreeMap<ClassLabel, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            if split.is_none() || self.split_of(&r.id) == split {
                *counts.entry(r.class_label.clone()).or_insert(0) += 1;
            }
        }
        counts
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(MANIFEST_COLUMNS)?;
        for r in &self.records {
            let parents = r
                .parents
                .as_ref()
                .map(|(a, b)| format!("{a};{b}"))
                .unwrap_or_default();
            let split = self.split_of(&r.id).map(|s| s.to_string()).unwrap_or_default();
            w.write_record([
                r.id.as_str(),
                r.class_label.as_str(),
                &r.age.to_string(),
                &r.sex.to_string(),
                &r.provenance.to_string(),
                &parents,
                &r.mesh_path,
                &split,
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != MANIFEST_COLUMNS {
            return Err(CohortError::Manifest(format!("unexpected header {headers:?}")));
        }
        let mut manifest = Manifest::default();
        for row in reader.records() {
            let row = row?;
            let field = |i: usize| row.get(i).unwrap_or("");
            let age: f64 = field(2)
                .parse()
                .map_err(|_| CohortError::Manifest(format!("bad age {:?}", field(2))))?;
            let parents = match field(5) {
                "" => None,
                p => {
                    let (a, b) = p
                        .split_once(';')
                        .ok_or_else(|| CohortError::Manifest(format!("bad parents {p:?}")))?;
                    Some((a.to_string(), b.to_string()))
                }
            };
            let record = SubjectRecord {
                id: field(0).to_string(),
                class_label: ClassLabel::new(field(1)),
                age,
                sex: field(3).parse()?,
                provenance: field(4).parse()?,
                parents,
                mesh_path: field(6).to_string(),
            };
            if !field(7).is_empty() {
                manifest.splits.insert(record.id.clone(), field(7).parse()?);
            }
            manifest.records.push(record);
        }
        Ok(manifest)
    }
}

fn group_by_class<'a>(records: &[&'a SubjectRecord]) -> BTreeMap<ClassLabel, Vec<&'a SubjectRecord>> {
    let mut by_class: BTreeMap<ClassLabel, Vec<&SubjectRecord>> = BTreeMap::new();
    for r in records {
        by_class.entry(r.class_label.clone()).or_default().push(r);
    }
    for list in by_class.values_mut() {
        list.sort_by(|a, b| a.id.cmp(&b.id));
    }
    by_class
}

/// Per-class shuffled split with `round(ratio · n)` train and validation
/// subjects and the remainder in test. Augmented records are ignored: they
/// belong to the training split only.
pub fn stratified_split(
    records: &[SubjectRecord],
    ratios: [f64; 3],
    seed: u64,
) -> Result<SplitAssignment> {
    let total: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (total - 1.0).abs() > 1e-9 {
        return Err(CohortError::InvalidRatios(ratios));
    }
    let eligible: Vec<&SubjectRecord> = records
        .iter()
        .filter(|r| r.provenance != Provenance::Augmented)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = SplitAssignment::new();
    for (class, mut members) in group_by_class(&eligible) {
        let n = members.len();
        if n < 3 {
            return Err(CohortError::TooFewSubjects {
                class: class.0,
                count: n,
                needed: 3,
            });
        }
        members.shuffle(&mut rng);
        let n_train = ((ratios[0] * n as f64).round() as usize).min(n);
        let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
        for (i, r) in members.iter().enumerate() {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            assignment.insert(r.id.clone(), split);
        }
    }
    Ok(assignment)
}

/// One planned augmentation: `parent1 + U[ρ ⊙ Uᵀ(parent2 − parent1)]` with ρ
/// drawn from `seed`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationPair {
    pub class_label: ClassLabel,
    pub parent1: String,
    pub parent2: String,
    pub seed: u64,
}

/// Plans `target − count` same-class, same-age-group pairs for every class
/// below `target_per_class`, sampled uniformly with replacement from all
/// ordered pairs of distinct subjects.
pub fn plan_augmentation(
    train_records: &[&SubjectRecord],
    target_per_class: usize,
    seed: u64,
) -> Result<Vec<AugmentationPair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plan = Vec::new();
    for (class, members) in group_by_class(train_records) {
        let need = target_per_class.saturating_sub(members.len());
        if need == 0 {
            continue;
        }
        if members.len() < 2 {
            return Err(CohortError::TooFewSubjects {
                class: class.0,
                count: members.len(),
                needed: 2,
            });
        }
        let mut groups: [Vec<&SubjectRecord>; 2] = [Vec::new(), Vec::new()];
        for r in &members {
            groups[age_group(r.age)].push(r);
        }
        let pairs: Vec<(&SubjectRecord, &SubjectRecord)> = groups
            .iter()
            .flat_map(|g| {
                g.iter()
                    .flat_map(move |a| g.iter().filter(move |b| a.id != b.id).map(move |b| (*a, *b)))
            })
            .collect();
        if pairs.is_empty() {
            return Err(CohortError::NoPairableAgeGroup(class.0));
        }
        for _ in 0..need {
            let (a, b) = pairs[rng.random_range(0..pairs.len())];
            plan.push(AugmentationPair {
                class_label: class.clone(),
                parent1: a.id.clone(),
                parent2: b.id.clone(),
                seed: rng.random(),
            });
        }
    }
    Ok(plan)
}

/// Realises a plan with spectral interpolation. Returns the new records (in
/// plan order, ids `aug-<class>-<n>`) and meshes.
pub fn apply_augmentation(
    plan: &[AugmentationPair],
    records: &[SubjectRecord],
    meshes: &HashMap<String, CorrespondedMesh>,
    basis: &LaplacianEigenbasis,
) -> Result<Vec<(SubjectRecord, CorrespondedMesh)>> {
    let by_id: HashMap<&str, &SubjectRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut counters: BTreeMap<&ClassLabel, usize> = BTreeMap::new();
    let mut out = Vec::with_capacity(plan.len());
    for pair in plan {
        let lookup = |id: &str| {
            Ok::<_, CohortError>((
                *by_id
                    .get(id)
                    .ok_or_else(|| CohortError::UnknownSubject(id.to_string()))?,
                meshes
                    .get(id)
                    .ok_or_else(|| CohortError::UnknownSubject(id.to_string()))?,
            ))
        };
        let (r1, m1) = lookup(&pair.parent1)?;
        let (r2, m2) = lookup(&pair.parent2)?;
        let weights = sample_weights(pair.seed, basis.k());
        let mesh = spectral_augment(m1, m2, &weights, basis)?;
        let n = counters.entry(&pair.class_label).or_insert(0);
        let id = format!("aug-{}-{:04}", pair.class_label.as_str().to_lowercase(), *n);
        *n += 1;
        let record = SubjectRecord {
            mesh_path: format!("meshes/{id}.obj"),
            id,
            class_label: pair.class_label.clone(),
            age: 0.5 * (r1.age + r2.age),
            sex: r1.sex,
            provenance: Provenance::Augmented,
            parents: Some((r1.id.clone(), r2.id.clone())),
        };
        out.push((record, mesh));
    }
    Ok(out)
}
