//! Fixed-topology head meshes.
//!
//! Every mesh in a cohort shares one [`MeshTopology`]: the same vertex count,
//! the same oriented triangle list and the same segmentation into anatomical
//! attributes. Positions are in millimetres and stored in double precision.

mod io;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use sha2::{Digest, Sha256};

pub use io::{
    load_mesh, read_obj, read_ply, read_segmentation, read_segmentation_str, write_mesh,
    write_obj, write_obj_string, write_ply, write_segmentation, MeshFormat, RawMesh,
};

/// Number of anatomical attributes the template is segmented into.
pub const ATTRIBUTE_COUNT: usize = 15;

const CANONICAL_ATTRIBUTES: &str = include_str!("../../data/attributes.txt");

/// The canonical attribute names shipped with the crate.
pub fn canonical_attribute_names() -> Vec<String> {
    CANONICAL_ATTRIBUTES
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum MeshError {
    #[error("face {face} references vertex {index} but the mesh has {vertex_count} vertices")]
    FaceIndexOutOfRange {
        face: usize,
        index: usize,
        vertex_count: usize,
    },
    #[error("face {0} is degenerate (repeated vertex)")]
    DegenerateFace(usize),
    #[error("edge ({0}, {1}) is shared by more than two faces or inconsistently oriented")]
    NonManifoldEdge(usize, usize),
    #[error("expected {expected} attribute names, got {got}")]
    AttributeCount { expected: usize, got: usize },
    #[error("vertex {vertex} has attribute label {label}, labels must be below {max}")]
    BadLabel {
        vertex: usize,
        label: usize,
        max: usize,
    },
    #[error("segmentation has {got} labels for {expected} vertices")]
    LabelCount { expected: usize, got: usize },
    #[error("correspondence error: {0}")]
    Correspondence(String),
    #[error("meshes do not share a topology")]
    TopologyMismatch,
    #[error("non-finite coordinate at vertex {0}")]
    NonFinite(usize),
    #[error("empty vertex mask")]
    EmptyMask,
    #[error("mask index {index} out of range for {len} vertices")]
    MaskIndex { index: usize, len: usize },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported mesh format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = MeshError> = std::result::Result<T, E>;

/// Content hash identifying a topology (vertex count, faces and segmentation).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct TopologyId(pub String);

impl fmt::Display for TopologyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Shared connectivity and attribute segmentation of a cohort.
#[derive(Debug, Clone)]
pub struct MeshTopology {
    vertex_count: usize,
    faces: Vec<[usize; 3]>,
    labels: Vec<usize>,
    attribute_masks: Vec<Vec<usize>>,
    attribute_names: Vec<String>,
    id: TopologyId,
}

impl PartialEq for MeshTopology {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}

impl MeshTopology {
    /// Builds a topology from faces and a per-vertex attribute label in `0..15`.
    pub fn new(
        vertex_count: usize,
        faces: Vec<[usize; 3]>,
        labels: Vec<usize>,
        attribute_names: Vec<String>,
    ) -> Result<Self> {
        if attribute_names.len() != ATTRIBUTE_COUNT {
            return Err(MeshError::AttributeCount {
                expected: ATTRIBUTE_COUNT,
                got: attribute_names.len(),
            });
        }
        if labels.len() != vertex_count {
            return Err(MeshError::LabelCount {
                expected: vertex_count,
                got: labels.len(),
            });
        }
        validate_faces(vertex_count, &faces)?;
        let mut attribute_masks = vec![Vec::new(); ATTRIBUTE_COUNT];
        for (v, &label) in labels.iter().enumerate() {
            if label >= ATTRIBUTE_COUNT {
                return Err(MeshError::BadLabel {
                    vertex: v,
                    label,
                    max: ATTRIBUTE_COUNT,
                });
            }
            attribute_masks[label].push(v);
        }
        let id = topology_hash(vertex_count, &faces, &labels);
        Ok(Self {
            vertex_count,
            faces,
            labels,
            attribute_masks,
            attribute_names,
            id,
        })
    }

    /// Topology with every vertex assigned to the first attribute.
    pub fn unsegmented(vertex_count: usize, faces: Vec<[usize; 3]>) -> Result<Self> {
        Self::new(
            vertex_count,
            faces,
            vec![0; vertex_count],
            canonical_attribute_names(),
        )
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn attribute_masks(&self) -> &[Vec<usize>] {
        &self.attribute_masks
    }

    pub fn mask(&self, attribute: usize) -> &[usize] {
        &self.attribute_masks[attribute]
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attribute_names.iter().position(|n| n == name)
    }

    pub fn id(&self) -> &TopologyId {
        &self.id
    }

    /// Undirected edges, each listed once with the smaller index first, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| {
                [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])]
                    .into_iter()
                    .map(|(a, b)| (a.min(b), a.max(b)))
            })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Sorted neighbour lists per vertex.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertex_count];
        for (a, b) in self.edges() {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }
}

pub(crate) fn validate_faces(vertex_count: usize, faces: &[[usize; 3]]) -> Result<()> {
    let mut directed: HashMap<(usize, usize), usize> = HashMap::with_capacity(faces.len() * 3);
    for (fi, f) in faces.iter().enumerate() {
        for &index in f {
            if index >= vertex_count {
                return Err(MeshError::FaceIndexOutOfRange {
                    face: fi,
                    index,
                    vertex_count,
                });
            }
        }
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            return Err(MeshError::DegenerateFace(fi));
        }
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            // A consistently oriented manifold uses each directed edge once.
            if directed.insert((a, b), fi).is_some() {
                return Err(MeshError::NonManifoldEdge(a, b));
            }
        }
    }
    Ok(())
}

fn topology_hash(vertex_count: usize, faces: &[[usize; 3]], labels: &[usize]) -> TopologyId {
    let mut hasher = Sha256::new();
    hasher.update(b"topology-v1");
    hasher.update((vertex_count as u64).to_le_bytes());
    hasher.update((faces.len() as u64).to_le_bytes());
    for f in faces {
        for &i in f {
            hasher.update((i as u64).to_le_bytes());
        }
    }
    for &l in labels {
        hasher.update([l as u8]);
    }
    TopologyId(hex::encode(hasher.finalize()))
}

/// A mesh in dense correspondence with the shared topology.
#[derive(Debug, Clone)]
pub struct CorrespondedMesh {
    topology: Arc<MeshTopology>,
    positions: Vec<[f64; 3]>,
}

impl CorrespondedMesh {
    pub fn new(topology: Arc<MeshTopology>, positions: Vec<[f64; 3]>) -> Result<Self> {
        if positions.len() != topology.vertex_count() {
            return Err(MeshError::Correspondence(format!(
                "mesh has {} vertices, topology expects {}",
                positions.len(),
                topology.vertex_count()
            )));
        }
        if let Some(v) = positions
            .iter()
            .position(|p| p.iter().any(|c| !c.is_finite()))
        {
            return Err(MeshError::NonFinite(v));
        }
        Ok(Self {
            topology,
            positions,
        })
    }

    pub fn topology(&self) -> &Arc<MeshTopology> {
        &self.topology
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn into_positions(self) -> Vec<[f64; 3]> {
        self.positions
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    pub fn same_topology(&self, other: &CorrespondedMesh) -> bool {
        Arc::ptr_eq(&self.topology, &other.topology) || self.topology.id() == other.topology.id()
    }

    /// Positions as a row-major `n × 3` buffer.
    pub fn flat_positions(&self) -> Vec<f64> {
        self.positions.iter().flatten().copied().collect()
    }

    pub fn from_flat(topology: Arc<MeshTopology>, flat: &[f64]) -> Result<Self> {
        if !flat.len().is_multiple_of(3) {
            return Err(MeshError::Correspondence(
                "flat position buffer is not a multiple of 3".into(),
            ));
        }
        let positions = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Self::new(topology, positions)
    }

    pub fn translated(&self, offset: [f64; 3]) -> CorrespondedMesh {
        CorrespondedMesh {
            topology: Arc::clone(&self.topology),
            positions: self
                .positions
                .iter()
                .map(|p| [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]])
                .collect(),
        }
    }
}

/// Per-vertex displacement magnitude between two corresponded meshes, in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    magnitudes: Vec<f64>,
}

impl DisplacementField {
    pub fn from_magnitudes(magnitudes: Vec<f64>) -> Result<Self> {
        if let Some(v) = magnitudes.iter().position(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(MeshError::NonFinite(v));
        }
        Ok(Self { magnitudes })
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    pub fn mean(&self) -> f64 {
        if self.magnitudes.is_empty() {
            return 0.0;
        }
        self.magnitudes.iter().sum::<f64>() / self.magnitudes.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.magnitudes.iter().copied().fold(0.0, f64::max)
    }
}

pub fn displacement(a: &CorrespondedMesh, b: &CorrespondedMesh) -> Result<DisplacementField> {
    if !a.same_topology(b) {
        return Err(MeshError::TopologyMismatch);
    }
    let magnitudes = a
        .positions
        .iter()
        .zip(&b.positions)
        .map(|(p, q)| distance(p, q))
        .collect();
    Ok(DisplacementField { magnitudes })
}

pub fn mean_vertex_distance(a: &CorrespondedMesh, b: &CorrespondedMesh) -> Result<f64> {
    Ok(displacement(a, b)?.mean())
}

pub fn region_mean_displacement(field: &DisplacementField, mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(MeshError::EmptyMask);
    }
    let len = field.magnitudes.len();
    let mut total = 0.0;
    for &v in mask {
        total += *field
            .magnitudes
            .get(v)
            .ok_or(MeshError::MaskIndex { index: v, len })?;
    }
    Ok(total / mask.len() as f64)
}

pub(crate) fn distance(p: &[f64; 3], q: &[f64; 3]) -> f64 {
    let dx = p[0] - q[0];
    let dy = p[1] - q[1];
    let dz = p[2] - q[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle_topology() -> Arc<MeshTopology> {
        let mut labels = vec![0; 3];
        labels[2] = 4;
        Arc::new(
            MeshTopology::new(3, vec![[0, 1, 2]], labels, canonical_attribute_names()).unwrap(),
        )
    }

    fn mesh(top: &Arc<MeshTopology>, p: Vec<[f64; 3]>) -> CorrespondedMesh {
        CorrespondedMesh::new(Arc::clone(top), p).unwrap()
    }

    #[test]
    fn canonical_names_has_fifteen_entries() {
        let names = canonical_attribute_names();
        assert_eq!(names.len(), ATTRIBUTE_COUNT);
        assert_eq!(names[2], "orbits");
    }

    #[test]
    fn masks_partition_vertices() {
        let top = triangle_topology();
        let total: usize = top.attribute_masks().iter().map(Vec::len).sum();
        assert_eq!(total, 3);
        assert_eq!(top.mask(4), &[2]);
    }

    #[test]
    fn rejects_out_of_range_and_nonmanifold_faces() {
        let names = canonical_attribute_names();
        assert!(matches!(
            MeshTopology::new(3, vec![[0, 1, 3]], vec![0; 3], names.clone()),
            Err(MeshError::FaceIndexOutOfRange { .. })
        ));
        // Same directed edge twice means flipped orientation or a fin.
        assert!(matches!(
            MeshTopology::new(4, vec![[0, 1, 2], [0, 1, 3]], vec![0; 4], names.clone()),
            Err(MeshError::NonManifoldEdge(0, 1))
        ));
        assert!(matches!(
            MeshTopology::new(3, vec![[0, 1, 2]], vec![0, 0, 15], names),
            Err(MeshError::BadLabel { .. })
        ));
    }

    #[test]
    fn displacement_examples() {
        let top = triangle_topology();
        let a = mesh(&top, vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        assert!(displacement(&a, &a)
            .unwrap()
            .magnitudes()
            .iter()
            .all(|&m| m == 0.0));

        let b = a.translated([3.0, 4.0, 0.0]);
        let d = displacement(&a, &b).unwrap();
        for &m in d.magnitudes() {
            assert!((m - 5.0).abs() < 1e-12);
        }
        assert!((mean_vertex_distance(&a, &b).unwrap() - 5.0).abs() < 1e-12);

        let mut moved = a.positions().to_vec();
        moved[1][2] += 12.0;
        let c = mesh(&top, moved);
        assert_eq!(displacement(&a, &c).unwrap().magnitudes(), &[0.0, 12.0, 0.0]);
        assert!((mean_vertex_distance(&a, &c).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn topology_mismatch_is_reported() {
        let top = triangle_topology();
        let other = Arc::new(MeshTopology::unsegmented(3, vec![[0, 2, 1]]).unwrap());
        let a = mesh(&top, vec![[0.0; 3]; 3]);
        let b = mesh(&other, vec![[0.0; 3]; 3]);
        assert!(matches!(displacement(&a, &b), Err(MeshError::TopologyMismatch)));
    }

    #[test]
    fn region_mean_examples() {
        let field = DisplacementField::from_magnitudes(vec![2.0, 4.0, 0.0, 10.0]).unwrap();
        assert_eq!(region_mean_displacement(&field, &[0, 1]).unwrap(), 3.0);
        assert_eq!(region_mean_displacement(&field, &[3]).unwrap(), 10.0);
        let zero = DisplacementField::from_magnitudes(vec![0.0; 4]).unwrap();
        assert_eq!(region_mean_displacement(&zero, &[0, 1, 2]).unwrap(), 0.0);
        assert!(matches!(
            region_mean_displacement(&field, &[]),
            Err(MeshError::EmptyMask)
        ));
        assert!(region_mean_displacement(&field, &[7]).is_err());
    }

    #[test]
    fn non_finite_positions_rejected() {
        let top = triangle_topology();
        let r = CorrespondedMesh::new(top, vec![[0.0; 3], [f64::NAN, 0.0, 0.0], [0.0; 3]]);
        assert!(matches!(r, Err(MeshError::NonFinite(1))));
    }
}
