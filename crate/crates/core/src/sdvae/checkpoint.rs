use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MeshHierarchy, ModelConfig, Normalizer, Result, SdVae, SdVaeError, TrainingConfig};
use crate::diff::Tensor;
use crate::mesh::{MeshTopology, TopologyId};

const MAGIC: &[u8; 8] = b"SDVAECK1";
const VERSION: u32 = 1;

/// Position of a ChaCha8 stream, enough to resume it exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Serialize, Deserialize)]
struct StoredTopology {
    vertex_count: usize,
    faces: Vec<[usize; 3]>,
    labels: Vec<usize>,
    attribute_names: Vec<String>,
    hash: TopologyId,
}

#[derive(Serialize, Deserialize)]
struct Header {
    topology: StoredTopology,
    hierarchy: MeshHierarchy,
    model: ModelConfig,
    training: Option<TrainingConfig>,
    normalizer: Normalizer,
    rng: Option<RngState>,
    shapes: Vec<(usize, usize)>,
}

/// Contents of a checkpoint file.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: SdVae,
    pub training: Option<TrainingConfig>,
    pub rng: Option<RngState>,
}

fn bad(msg: impl Into<String>) -> SdVaeError {
    SdVaeError::Checkpoint(msg.into())
}

/// Layout: magic, `u32` version, `u64` header length, JSON header, then every
/// parameter as little-endian `f64` in model order.
pub fn write_checkpoint<W: Write>(
    mut out: W,
    model: &SdVae,
    training: Option<&TrainingConfig>,
    rng: Option<&RngState>,
) -> Result<()> {
    let topo = &model.topology;
    let header = Header {
        topology: StoredTopology {
            vertex_count: topo.vertex_count(),
            faces: topo.faces().to_vec(),
            labels: topo.labels().to_vec(),
            attribute_names: topo.attribute_names().to_vec(),
            hash: topo.id().clone(),
        },
        hierarchy: (*model.hierarchy).clone(),
        model: model.config.clone(),
        training: training.cloned(),
        normalizer: model.normalizer.clone(),
        rng: rng.cloned(),
        shapes: model.params.iter().map(Tensor::shape).collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for t in &model.params {
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a model checkpoint"));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = usize::try_from(u64::from_le_bytes(len)).map_err(|_| bad("header too large"))?;
    let mut json = vec![0u8; len];
    input.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| bad(e.to_string()))?;

    let st = header.topology;
    let topology = MeshTopology::new(st.vertex_count, st.faces, st.labels, st.attribute_names)?;
    if *topology.id() != st.hash {
        return Err(bad(format!("topology hash {} does not match stored {}", topology.id(), st.hash)));
    }
    let mut params = Vec::with_capacity(header.shapes.len());
    let mut buf = [0u8; 8];
    for &(rows, cols) in &header.shapes {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            input.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        params.push(Tensor::new(rows, cols, data)?);
    }
    if input.read(&mut buf)? != 0 {
        return Err(bad("trailing bytes after parameters"));
    }
    let model = SdVae::from_parts(
        Arc::new(topology),
        Arc::new(header.hierarchy),
        header.model,
        header.normalizer,
        params,
    )?;
    Ok(Checkpoint {
        model,
        training: header.training,
        rng: header.rng,
    })
}

pub fn save_checkpoint(
    path: &Path,
    model: &SdVae,
    training: Option<&TrainingConfig>,
    rng: Option<&RngState>,
) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), model, training, rng)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::sdvae::model::tests::micro_model;

    #[test]
    fn round_trip_encodes_bitwise_equal() {
        let (model, meshes) = micro_model(4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let _: f64 = rng.random();
        let state = RngState::capture(&rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &model, Some(&TrainingConfig::default()), Some(&state)).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.model.params, model.params);
        assert_eq!(loaded.training, Some(TrainingConfig::default()));
        let a = model.encode(&meshes).unwrap();
        let b = loaded.model.encode(&meshes).unwrap();
        for (x, y) in a.iter().zip(&b) {
            let xb: Vec<u64> = x.0.values().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.0.values().iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
        let mut resumed = loaded.rng.unwrap().restore();
        assert_eq!(resumed.random::<u64>(), rng.random::<u64>());
    }

    #[test]
    fn corrupted_files_rejected() {
        let (model, _) = micro_model(5);
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &model, None, None).unwrap();
        assert!(read_checkpoint(&bytes[..]).is_ok());

        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(matches!(read_checkpoint(&wrong_magic[..]), Err(SdVaeError::Checkpoint(_))));

        let truncated = &bytes[..bytes.len() - 8];
        assert!(read_checkpoint(truncated).is_err());

        let mut trailing = bytes.clone();
        trailing.extend_from_slice(&[0; 8]);
        assert!(read_checkpoint(&trailing[..]).is_err());
    }
}
