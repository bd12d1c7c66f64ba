use std::sync::Arc;

use super::{Result, SdVaeError};
use crate::mesh::{CorrespondedMesh, ATTRIBUTE_COUNT};

/// `B × B` grid of meshes; cell `(r, c)` is subject `r` with attribute
/// `swapped_attribute` taken from subject `c`.
#[derive(Debug, Clone)]
pub struct SwapBatch {
    pub size: usize,
    pub swapped_attribute: usize,
    pub diagonal_ids: Vec<String>,
    /// Row-major cells.
    pub grid: Vec<CorrespondedMesh>,
}

impl SwapBatch {
    pub fn cell(&self, r: usize, c: usize) -> &CorrespondedMesh {
        &self.grid[r * self.size + c]
    }
}

/// Hard copy of the attribute region; seams are left to the Laplacian loss.
pub fn make_swap_batch(subjects: &[(&str, &CorrespondedMesh)], attribute: usize) -> Result<SwapBatch> {
    if attribute >= ATTRIBUTE_COUNT {
        return Err(SdVaeError::InvalidAttribute(attribute));
    }
    let (_, first) = subjects
        .first()
        .ok_or(SdVaeError::BatchTooSmall { needed: 1, got: 0 })?;
    if subjects.iter().any(|(_, m)| !m.same_topology(first)) {
        return Err(SdVaeError::TopologyMismatch);
    }
    let topology: &Arc<_> = first.topology();
    let mask = topology.mask(attribute);
    let b = subjects.len();
    let mut grid = Vec::with_capacity(b * b);
    for (_, row) in subjects {
        for (_, col) in subjects {
            let mut positions = row.positions().to_vec();
            for &v in mask {
                positions[v] = col.positions()[v];
            }
            grid.push(CorrespondedMesh::new(topology.clone(), positions)?);
        }
    }
    Ok(SwapBatch {
        size: b,
        swapped_attribute: attribute,
        diagonal_ids: subjects.iter().map(|(id, _)| id.to_string()).collect(),
        grid,
    })
}
