use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use cranio_core::analysis::LatentModels;
use cranio_core::cohort::{ClassLabel, Manifest, Split};
use cranio_core::mesh::TopologyId;
use cranio_core::planning::{builtin_procedures, PlanningSession, ProcedureRegistry};
use cranio_core::sdvae::{read_checkpoint, LatentVector, MeanStd};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Result, ServiceError};

/// Hex SHA-256 of an artifact's bytes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArtifactHash(pub String);

impl ArtifactHash {
    pub fn of(bytes: &[u8]) -> Self {
        Self(hex::encode(Sha256::digest(bytes)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    pub manifest: ArtifactHash,
    pub topology: TopologyId,
    pub subjects: usize,
    pub class_counts: BTreeMap<ClassLabel, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub reconstruction_mm: Option<MeanStd>,
    pub diversity_mm: Option<f64>,
    /// Whole-latent QDA accuracy on held-out subjects.
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub id: String,
    pub dataset: String,
    pub checkpoint: ArtifactHash,
    pub topology: TopologyId,
    pub metrics: ModelMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisEntry {
    pub id: String,
    pub model: String,
    pub artifact: ArtifactHash,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSubject {
    pub id: String,
    pub class_label: ClassLabel,
    pub split: Split,
    pub latent: LatentVector,
}

/// Encoded subjects and the discriminant models fitted on the training ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisArtifact {
    pub subjects: Vec<AnalysisSubject>,
    pub models: LatentModels,
}

impl AnalysisArtifact {
    pub fn subject(&self, id: &str) -> Option<&AnalysisSubject> {
        self.subjects.iter().find(|s| s.id == id)
    }

    pub fn training(&self) -> impl Iterator<Item = &AnalysisSubject> {
        self.subjects.iter().filter(|s| s.split == Split::Train)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEntry {
    pub id: String,
    pub analysis: String,
    /// Seconds since the Unix epoch.
    pub created: u64,
    pub session: PlanningSession,
}

/// The manifest index: everything except sessions, which live in their own
/// files so that each can be written under its own lock.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Index {
    pub datasets: Vec<DatasetEntry>,
    pub models: Vec<ModelEntry>,
    pub analyses: Vec<AnalysisEntry>,
}

impl Index {
    pub fn dataset(&self, id: &str) -> Option<&DatasetEntry> {
        self.datasets.iter().find(|d| d.id == id)
    }

    pub fn model(&self, id: &str) -> Option<&ModelEntry> {
        self.models.iter().find(|m| m.id == id)
    }

    pub fn analysis(&self, id: &str) -> Option<&AnalysisEntry> {
        self.analyses.iter().find(|a| a.id == id)
    }

    /// First analysis registered for `model`.
    pub fn analysis_for_model(&self, model: &str) -> Option<&AnalysisEntry> {
        self.analyses.iter().find(|a| a.model == model)
    }
}

fn upsert<T>(list: &mut Vec<T>, item: T, same: impl Fn(&T) -> bool) {
    match list.iter_mut().find(|x| same(x)) {
        Some(slot) => *slot = item,
        None => list.push(item),
    }
}

/// Flat directory store:
///
/// ```text
/// root/index.json        datasets, models, analyses
/// root/procedures.toml   procedure registry
/// root/objects/<sha256>  immutable artifacts
/// root/sessions/<id>.json
/// ```
#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("objects"))?;
        fs::create_dir_all(root.join("sessions"))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn object_path(&self, hash: &ArtifactHash) -> PathBuf {
        self.root.join("objects").join(&hash.0)
    }

    pub fn put(&self, bytes: &[u8]) -> Result<ArtifactHash> {
        let hash = ArtifactHash::of(bytes);
        let path = self.object_path(&hash);
        if !path.exists() {
            write_atomic(&path, bytes)?;
        }
        Ok(hash)
    }

    pub fn get(&self, hash: &ArtifactHash) -> Result<Vec<u8>> {
        let path = self.object_path(hash);
        let bytes = fs::read(&path).map_err(|_| ServiceError::MissingArtifact(hash.0.clone()))?;
        if ArtifactHash::of(&bytes) != *hash {
            return Err(ServiceError::CorruptArtifact(hash.0.clone()));
        }
        Ok(bytes)
    }

    pub fn put_json<T: Serialize>(&self, value: &T) -> Result<ArtifactHash> {
        self.put(&serde_json::to_vec(value)?)
    }

    pub fn get_json<T: DeserializeOwned>(&self, hash: &ArtifactHash) -> Result<T> {
        Ok(serde_json::from_slice(&self.get(hash)?)?)
    }

    pub fn load_index(&self) -> Result<Index> {
        match fs::read(self.root.join("index.json")) {
            Ok(bytes) => Ok(serde_json::from_slice(&bytes)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Index::default()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save_index(&self, index: &Index) -> Result<()> {
        write_atomic(&self.root.join("index.json"), &serde_json::to_vec_pretty(index)?)
    }

    fn update_index(&self, f: impl FnOnce(&mut Index) -> Result<()>) -> Result<()> {
        let mut index = self.load_index()?;
        f(&mut index)?;
        self.save_index(&index)
    }

    pub fn register_dataset(&self, id: &str, manifest: &Manifest, topology: &TopologyId) -> Result<DatasetEntry> {
        let mut csv = Vec::new();
        manifest
            .write_csv(&mut csv)
            .map_err(|e| ServiceError::Invalid(e.to_string()))?;
        let entry = DatasetEntry {
            id: id.to_string(),
            manifest: self.put(&csv)?,
            topology: topology.clone(),
            subjects: manifest.records.len(),
            class_counts: manifest.class_counts(None),
        };
        self.update_index(|index| {
            upsert(&mut index.datasets, entry.clone(), |d| d.id == id);
            Ok(())
        })?;
        Ok(entry)
    }

    /// Stores checkpoint bytes. The checkpoint must parse and match the
    /// dataset's topology.
    pub fn register_model(&self, id: &str, dataset: &str, checkpoint: &[u8], metrics: ModelMetrics) -> Result<ModelEntry> {
        let ck = read_checkpoint(checkpoint).map_err(|e| ServiceError::Invalid(e.to_string()))?;
        let topology = ck.model.topology.id().clone();
        let mut entry = None;
        self.update_index(|index| {
            let ds = index
                .dataset(dataset)
                .ok_or_else(|| ServiceError::NotFound(format!("dataset {dataset}")))?;
            if ds.topology != topology {
                return Err(ServiceError::TopologyMismatch);
            }
            let e = ModelEntry {
                id: id.to_string(),
                dataset: dataset.to_string(),
                checkpoint: self.put(checkpoint)?,
                topology,
                metrics,
            };
            upsert(&mut index.models, e.clone(), |m| m.id == id);
            entry = Some(e);
            Ok(())
        })?;
        Ok(entry.expect("set on success"))
    }

    pub fn register_analysis(&self, id: &str, model: &str, artifact: &AnalysisArtifact) -> Result<AnalysisEntry> {
        let mut entry = None;
        self.update_index(|index| {
            if index.model(model).is_none() {
                return Err(ServiceError::NotFound(format!("model {model}")));
            }
            let e = AnalysisEntry {
                id: id.to_string(),
                model: model.to_string(),
                artifact: self.put_json(artifact)?,
            };
            upsert(&mut index.analyses, e.clone(), |a| a.id == id);
            entry = Some(e);
            Ok(())
        })?;
        Ok(entry.expect("set on success"))
    }

    pub fn load_manifest(&self, entry: &DatasetEntry) -> Result<Manifest> {
        Manifest::read_csv(&self.get(&entry.manifest)?[..]).map_err(|e| ServiceError::Invalid(e.to_string()))
    }

    /// The stored registry, or the built-in procedures on first use.
    pub fn load_procedures(&self) -> Result<ProcedureRegistry> {
        match fs::read_to_string(self.root.join("procedures.toml")) {
            Ok(text) => ProcedureRegistry::from_toml(&text).map_err(|e| ServiceError::Invalid(e.to_string())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(builtin_procedures()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save_procedures(&self, registry: &ProcedureRegistry) -> Result<()> {
        write_atomic(&self.root.join("procedures.toml"), registry.to_toml().as_bytes())
    }

    pub fn save_session(&self, entry: &SessionEntry) -> Result<()> {
        let path = self.root.join("sessions").join(format!("{}.json", entry.id));
        write_atomic(&path, &serde_json::to_vec_pretty(entry)?)
    }

    /// All stored sessions, ordered by id.
    pub fn load_sessions(&self) -> Result<Vec<SessionEntry>> {
        let mut out = Vec::new();
        for item in fs::read_dir(self.root.join("sessions"))? {
            let path = item?.path();
            if path.extension().is_some_and(|e| e == "json") {
                out.push(serde_json::from_slice(&fs::read(&path)?)?);
            }
        }
        out.sort_by(|a: &SessionEntry, b| a.id.cmp(&b.id));
        Ok(out)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().expect("store paths have a parent");
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
