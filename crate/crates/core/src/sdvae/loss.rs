use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{LatentVector, Result, SdVaeError};
use crate::diff::{Graph, Result as DiffResult, Tensor, Var};
use crate::linalg::CsrMatrix;
use crate::mesh::{CorrespondedMesh, ATTRIBUTE_COUNT};
use crate::spectral::build_laplacian;
use crate::{LATENT_DIM, SUBSET_DIM};

/// Distance between latent subsets in the consistency loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsistencyNorm {
    #[default]
    Squared,
    Euclidean,
}

/// Mean squared difference over vertices and coordinates.
pub fn reconstruction_loss(g: &mut Graph, out: Var, target: Var) -> DiffResult<Var> {
    let d = g.sub(out, target)?;
    let sq = g.square(d)?;
    g.mean(sq)
}

/// Mean over vertices of `‖L·(out + offset)‖²` for a stacked batch of
/// `(batch·n) × 3` positions; `offset` restores absolute coordinates when
/// `out` is centred.
pub fn laplacian_loss(g: &mut Graph, out: Var, laplacian: Arc<CsrMatrix>, offset: Option<Var>) -> DiffResult<Var> {
    let y = match offset {
        Some(o) => g.add(out, o)?,
        None => out,
    };
    let ly = g.sparse_rows(y, laplacian)?;
    let sq = g.square(ly)?;
    let m = g.mean(sq)?;
    g.scale(m, 3.0)
}

/// Mean over dimensions of `½(μ² + σ² − 1 − log σ²)`.
pub fn kl_loss(g: &mut Graph, mu: Var, log_sigma: Var) -> DiffResult<Var> {
    let mu2 = g.square(mu)?;
    let two_ls = g.scale(log_sigma, 2.0)?;
    let var = g.exp(two_ls)?;
    let a = g.add(mu2, var)?;
    let b = g.sub(a, two_ls)?;
    let c = g.add_scalar(b, -1.0)?;
    let m = g.mean(c)?;
    g.scale(m, 0.5)
}

fn pair_indices(b: usize) -> [(Vec<usize>, Vec<usize>); 2] {
    let (mut c1, mut c2, mut r1, mut r2) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for fixed in 0..b {
        for i in 0..b {
            for j in i + 1..b {
                // same column, different rows
                c1.push(i * b + fixed);
                c2.push(j * b + fixed);
                // same row, different columns
                r1.push(fixed * b + i);
                r2.push(fixed * b + j);
            }
        }
    }
    [(c1, c2), (r1, r2)]
}

fn subset_distances(
    g: &mut Graph,
    mu: Var,
    pairs: (Vec<usize>, Vec<usize>),
    indicator: Var,
    norm: ConsistencyNorm,
) -> Result<Var> {
    let a = g.gather_rows(mu, Arc::from(pairs.0))?;
    let b = g.gather_rows(mu, Arc::from(pairs.1))?;
    let d = g.sub(a, b)?;
    let sq = g.square(d)?;
    let per_subset = g.matmul(sq, indicator)?;
    let dist = match norm {
        ConsistencyNorm::Squared => per_subset,
        ConsistencyNorm::Euclidean => {
            let shifted = g.add_scalar(per_subset, 1e-12)?;
            g.sqrt(shifted)?
        }
    };
    Ok(g.mean_rows(dist)?)
}

/// Hinge loss on the encoder means of a swap grid (`B² × 75`, row-major
/// cells). Shapes sharing a column share attribute `k*` and should agree on
/// its subset; shapes sharing a row share every other attribute.
pub fn consistency_loss(
    g: &mut Graph,
    mu: Var,
    batch: usize,
    swapped: usize,
    eta1: f64,
    eta2: f64,
    norm: ConsistencyNorm,
) -> Result<Var> {
    if batch < 2 {
        return Err(SdVaeError::BatchTooSmall { needed: 2, got: batch });
    }
    if swapped >= ATTRIBUTE_COUNT {
        return Err(SdVaeError::InvalidAttribute(swapped));
    }
    let mut ind = Tensor::zeros(LATENT_DIM, ATTRIBUTE_COUNT);
    for i in 0..LATENT_DIM {
        ind.data_mut()[i * ATTRIBUTE_COUNT + i / SUBSET_DIM] = 1.0;
    }
    let indicator = g.constant(ind);
    let [col_pairs, row_pairs] = pair_indices(batch);
    let d_col = subset_distances(g, mu, col_pairs, indicator, norm)?;
    let d_row = subset_distances(g, mu, row_pairs, indicator, norm)?;
    let diff = g.sub(d_col, d_row)?;
    let signs = (0..ATTRIBUTE_COUNT).map(|k| if k == swapped { 1.0 } else { -1.0 }).collect();
    let margins = (0..ATTRIBUTE_COUNT).map(|k| if k == swapped { eta1 } else { eta2 }).collect();
    let s = g.constant(Tensor::row_vector(signs));
    let m = g.constant(Tensor::row_vector(margins));
    let signed = g.mul(diff, s)?;
    let shifted = g.add(signed, m)?;
    let hinge = g.relu(shifted)?;
    Ok(g.sum(hinge)?)
}

fn flat(mesh: &CorrespondedMesh) -> Result<Tensor> {
    Ok(Tensor::new(mesh.vertex_count(), 3, mesh.flat_positions())?)
}

pub fn loss_reconstruction(out: &CorrespondedMesh, target: &CorrespondedMesh) -> Result<f64> {
    if !out.same_topology(target) {
        return Err(SdVaeError::TopologyMismatch);
    }
    let mut g = Graph::new();
    let a = g.constant(flat(out)?);
    let b = g.constant(flat(target)?);
    let l = reconstruction_loss(&mut g, a, b)?;
    Ok(g.value(l).item())
}

/// Uses the uniform Laplacian of the mesh's own topology.
pub fn loss_laplacian(mesh: &CorrespondedMesh) -> Result<f64> {
    let lap = Arc::new(build_laplacian(mesh.topology()));
    let mut g = Graph::new();
    let x = g.constant(flat(mesh)?);
    let l = laplacian_loss(&mut g, x, lap, None)?;
    Ok(g.value(l).item())
}

pub fn loss_kl(mu: &[f64], log_sigma: &[f64]) -> Result<f64> {
    let mut g = Graph::new();
    let m = g.constant(Tensor::row_vector(mu.to_vec()));
    let s = g.constant(Tensor::row_vector(log_sigma.to_vec()));
    let l = kl_loss(&mut g, m, s)?;
    Ok(g.value(l).item())
}

/// `latents` are the `B²` grid means in row-major cell order.
pub fn loss_latent_consistency(
    latents: &[LatentVector],
    swapped: usize,
    eta1: f64,
    eta2: f64,
    norm: ConsistencyNorm,
) -> Result<f64> {
    let b = (latents.len() as f64).sqrt().round() as usize;
    if b * b != latents.len() {
        return Err(SdVaeError::Config(format!("{} latents do not form a square grid", latents.len())));
    }
    let mut g = Graph::new();
    let data = latents.iter().flat_map(|z| z.values().iter().copied()).collect();
    let mu = g.constant(Tensor::new(latents.len(), LATENT_DIM, data)?);
    let l = consistency_loss(&mut g, mu, b, swapped, eta1, eta2, norm)?;
    Ok(g.value(l).item())
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::cohort::synthetic_template;
    use crate::mesh::MeshTopology;

    fn template_mesh() -> CorrespondedMesh {
        let t = synthetic_template(4, [75.0, 95.0, 90.0], 0.35, 15.0).unwrap();
        CorrespondedMesh::new(t.topology.clone(), t.rest.clone()).unwrap()
    }

    #[test]
    fn reconstruction_examples() {
        let m = template_mesh();
        assert_eq!(loss_reconstruction(&m, &m).unwrap(), 0.0);
        let shifted = m.translated([1.0, 0.0, 0.0]);
        assert!((loss_reconstruction(&shifted, &m).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let far = m.translated([3.0, 0.0, 0.0]);
        assert!((loss_reconstruction(&far, &m).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(loss_kl(&[0.0; 75], &[0.0; 75]).unwrap(), 0.0);
        assert!((loss_kl(&[1.0], &[0.0]).unwrap() - 0.5).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let mu: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let ls: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            assert!(loss_kl(&mu, &ls).unwrap() >= 0.0);
        }
    }

    /// 4×4 grid of vertices in the plane, split into triangles.
    fn grid_patch(f: impl Fn(f64, f64) -> [f64; 3]) -> CorrespondedMesh {
        let n = 4;
        let mut faces = Vec::new();
        for i in 0..n - 1 {
            for j in 0..n - 1 {
                let v = i * n + j;
                faces.push([v, v + 1, v + n]);
                faces.push([v + 1, v + n + 1, v + n]);
            }
        }
        let topo = Arc::new(MeshTopology::unsegmented(n * n, faces).unwrap());
        let positions = (0..n * n).map(|v| f((v / n) as f64, (v % n) as f64)).collect();
        CorrespondedMesh::new(topo, positions).unwrap()
    }

    #[test]
    fn laplacian_examples() {
        let affine = grid_patch(|i, j| [2.0 * i + 1.0, -j, 0.5 * i + 0.25 * j]);
        let lap = build_laplacian(affine.topology());
        let mut out = vec![0.0; 16 * 3];
        lap.apply_rows(&affine.flat_positions(), 3, &mut out);
        // interior vertices 5, 6, 9 and 10 have symmetric stencils
        for v in [5, 6, 9, 10] {
            for d in 0..3 {
                assert!(out[v * 3 + d].abs() < 1e-12, "vertex {v}");
            }
        }
        let m = template_mesh();
        let base = loss_laplacian(&m).unwrap();
        let doubled = CorrespondedMesh::new(
            m.topology().clone(),
            m.positions().iter().map(|p| p.map(|x| 2.0 * x)).collect(),
        )
        .unwrap();
        assert!((loss_laplacian(&doubled).unwrap() - 4.0 * base).abs() < 1e-9 * base);
        let mut spiked = m.positions().to_vec();
        spiked[7][0] += 10.0;
        let spiked = CorrespondedMesh::new(m.topology().clone(), spiked).unwrap();
        assert!(loss_laplacian(&spiked).unwrap() > base);
    }

    fn random_latents(b: usize, seed: u64) -> Vec<LatentVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..b * b)
            .map(|_| LatentVector::new((0..75).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
            .collect()
    }

    #[test]
    fn constant_latents_hit_every_margin() {
        let z = LatentVector::new(vec![0.3; 75]).unwrap();
        let grid = vec![z; 9];
        let l = loss_latent_consistency(&grid, 4, 0.5, 0.5, ConsistencyNorm::Squared).unwrap();
        assert!((l - (0.5 + 14.0 * 0.5)).abs() < 1e-12);
        let l = loss_latent_consistency(&grid, 4, 0.2, 0.7, ConsistencyNorm::Squared).unwrap();
        assert!((l - (0.2 + 14.0 * 0.7)).abs() < 1e-12);
    }

    #[test]
    fn ideal_latents_give_zero_loss() {
        // z[r][c]: subset k* follows the column subject, other subsets the row subject
        let b = 3;
        let k = 6;
        let mut grid = Vec::new();
        for r in 0..b {
            for c in 0..b {
                let mut z = LatentVector::zeros();
                for a in 0..15 {
                    let owner = if a == k { c } else { r };
                    z.subset_mut(a).iter_mut().for_each(|v| *v = owner as f64);
                }
                grid.push(z);
            }
        }
        let l = loss_latent_consistency(&grid, k, 0.5, 0.5, ConsistencyNorm::Squared).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn row_relabeling_symmetry() {
        let b = 3;
        let grid = random_latents(b, 9);
        let base = loss_latent_consistency(&grid, 2, 0.5, 0.5, ConsistencyNorm::Squared).unwrap();
        // swap rows 0 and 2 and columns 0 and 2 together (relabel subjects)
        let perm = [2, 1, 0];
        let mut permuted = Vec::new();
        for r in 0..b {
            for c in 0..b {
                permuted.push(grid[perm[r] * b + perm[c]].clone());
            }
        }
        let l = loss_latent_consistency(&permuted, 2, 0.5, 0.5, ConsistencyNorm::Squared).unwrap();
        assert!((l - base).abs() < 1e-12);
        // rows alone
        let mut rows_only = Vec::new();
        for r in 0..b {
            for c in 0..b {
                rows_only.push(grid[perm[r] * b + c].clone());
            }
        }
        let l = loss_latent_consistency(&rows_only, 2, 0.5, 0.5, ConsistencyNorm::Squared).unwrap();
        assert!((l - base).abs() < 1e-12);
    }

    #[test]
    fn single_subject_grid_is_an_error() {
        let grid = random_latents(1, 0);
        assert!(matches!(
            loss_latent_consistency(&grid, 0, 0.5, 0.5, ConsistencyNorm::Squared),
            Err(SdVaeError::BatchTooSmall { .. })
        ));
    }
}
