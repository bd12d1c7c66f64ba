//! Quadric-error mesh decimation, barycentric up-sampling and spiral indices.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};

use super::{Result, SdVaeError};
use crate::linalg::CsrMatrix;
use crate::mesh::{validate_faces, CorrespondedMesh};

/// Symmetric 4×4 plane quadric, upper triangle stored row by row.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Quadric([f64; 10]);

impl Quadric {
    /// Squared distance quadric of the plane `n·x + d = 0` (with unit `n`).
    pub fn plane(n: [f64; 3], d: f64) -> Self {
        let p = [n[0], n[1], n[2], d];
        let mut q = [0.0; 10];
        let mut k = 0;
        for i in 0..4 {
            for j in i..4 {
                q[k] = p[i] * p[j];
                k += 1;
            }
        }
        Self(q)
    }

    pub fn add(&mut self, other: &Quadric) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    /// `[x,1]ᵀ Q [x,1]`.
    pub fn error(&self, x: [f64; 3]) -> f64 {
        let p = [x[0], x[1], x[2], 1.0];
        let mut e = 0.0;
        let mut k = 0;
        for i in 0..4 {
            for j in i..4 {
                let w = if i == j { 1.0 } else { 2.0 };
                e += w * self.0[k] * p[i] * p[j];
                k += 1;
            }
        }
        e
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn face_normal(p: &[[f64; 3]], f: [usize; 3]) -> [f64; 3] {
    cross(sub(p[f[1]], p[f[0]]), sub(p[f[2]], p[f[0]]))
}

/// Sum of the plane quadrics of each vertex's incident faces.
pub fn vertex_quadrics(positions: &[[f64; 3]], faces: &[[usize; 3]]) -> Vec<Quadric> {
    let mut q = vec![Quadric::default(); positions.len()];
    for &f in faces {
        let n = face_normal(positions, f);
        let len = dot(n, n).sqrt();
        if len == 0.0 {
            continue;
        }
        let n = [n[0] / len, n[1] / len, n[2] / len];
        let plane = Quadric::plane(n, -dot(n, positions[f[0]]));
        for &v in &f {
            q[v].add(&plane);
        }
    }
    q
}

#[derive(Debug, PartialEq)]
struct Candidate {
    cost: f64,
    keep: usize,
    remove: usize,
    stamps: (u64, u64),
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on cost, ties broken by indices
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.keep.cmp(&self.keep))
            .then_with(|| other.remove.cmp(&self.remove))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Result of one decimation: surviving fine indices (ascending) and the
/// coarse faces over their positions in that list.
#[derive(Debug, Clone)]
pub struct Decimation {
    pub kept: Vec<usize>,
    pub faces: Vec<[usize; 3]>,
}

struct Collapser<'a> {
    positions: &'a [[f64; 3]],
    faces: Vec<[usize; 3]>,
    face_alive: Vec<bool>,
    vertex_faces: Vec<Vec<usize>>,
    neighbours: Vec<BTreeSet<usize>>,
    quadrics: Vec<Quadric>,
    alive: Vec<bool>,
    stamps: Vec<u64>,
}

impl Collapser<'_> {
    fn candidate(&self, a: usize, b: usize) -> Candidate {
        let mut q = self.quadrics[a];
        q.add(&self.quadrics[b]);
        let ca = q.error(self.positions[a]).max(0.0);
        let cb = q.error(self.positions[b]).max(0.0);
        let (keep, remove, cost) = if ca <= cb { (a, b, ca) } else { (b, a, cb) };
        Candidate {
            cost,
            keep,
            remove,
            stamps: (self.stamps[keep], self.stamps[remove]),
        }
    }

    fn valid(&self, keep: usize, remove: usize) -> bool {
        let common: Vec<usize> = self.neighbours[keep]
            .intersection(&self.neighbours[remove])
            .copied()
            .collect();
        // link condition keeps the surface manifold
        if common.len() != 2 || common.iter().any(|&w| self.neighbours[w].len() <= 3) {
            return false;
        }
        if self.neighbours[keep].len() + self.neighbours[remove].len() - 4 < 3 {
            return false;
        }
        for &fi in &self.vertex_faces[remove] {
            let f = self.faces[fi];
            if !self.face_alive[fi] || f.contains(&keep) {
                continue;
            }
            let before = face_normal(self.positions, f);
            let after = face_normal(self.positions, f.map(|v| if v == remove { keep } else { v }));
            if dot(before, after) <= 0.0 || dot(after, after) <= 1e-18 * dot(before, before) {
                return false;
            }
        }
        true
    }

    fn collapse(&mut self, keep: usize, remove: usize) {
        for fi in std::mem::take(&mut self.vertex_faces[remove]) {
            if !self.face_alive[fi] {
                continue;
            }
            if self.faces[fi].contains(&keep) {
                self.face_alive[fi] = false;
            } else {
                for v in self.faces[fi].iter_mut() {
                    if *v == remove {
                        *v = keep;
                    }
                }
                self.vertex_faces[keep].push(fi);
            }
        }
        self.vertex_faces[keep].retain(|&fi| self.face_alive[fi]);
        for w in std::mem::take(&mut self.neighbours[remove]) {
            self.neighbours[w].remove(&remove);
            if w != keep {
                self.neighbours[w].insert(keep);
                self.neighbours[keep].insert(w);
            }
        }
        let q = self.quadrics[remove];
        self.quadrics[keep].add(&q);
        self.alive[remove] = false;
        self.stamps[keep] += 1;
    }

    fn all_candidates(&self) -> BinaryHeap<Candidate> {
        let mut heap = BinaryHeap::new();
        for a in 0..self.alive.len() {
            if !self.alive[a] {
                continue;
            }
            for &b in self.neighbours[a].range(a + 1..) {
                heap.push(self.candidate(a, b));
            }
        }
        heap
    }
}

/// Half-edge collapses in order of quadric error until `target` vertices
/// remain. Surviving vertices keep their original positions.
pub fn decimate(positions: &[[f64; 3]], faces: &[[usize; 3]], target: usize) -> Result<Decimation> {
    let n = positions.len();
    if target < 4 || target > n {
        return Err(SdVaeError::Decimation(format!(
            "cannot reduce {n} vertices to {target} (a closed surface needs at least 4)"
        )));
    }
    let mut vertex_faces = vec![Vec::new(); n];
    let mut neighbours = vec![BTreeSet::new(); n];
    for (fi, f) in faces.iter().enumerate() {
        for k in 0..3 {
            vertex_faces[f[k]].push(fi);
            neighbours[f[k]].insert(f[(k + 1) % 3]);
            neighbours[f[(k + 1) % 3]].insert(f[k]);
        }
    }
    let mut c = Collapser {
        positions,
        faces: faces.to_vec(),
        face_alive: vec![true; faces.len()],
        vertex_faces,
        neighbours,
        quadrics: vertex_quadrics(positions, faces),
        alive: vec![true; n],
        stamps: vec![0; n],
    };
    let mut remaining = n;
    let mut heap = c.all_candidates();
    let mut rebuilt = false;
    while remaining > target {
        let Some(cand) = heap.pop() else {
            if rebuilt {
                return Err(SdVaeError::Decimation(format!(
                    "no valid collapse left at {remaining} vertices (target {target})"
                )));
            }
            rebuilt = true;
            heap = c.all_candidates();
            continue;
        };
        let (k, r) = (cand.keep, cand.remove);
        if !c.alive[k] || !c.alive[r] || cand.stamps != (c.stamps[k], c.stamps[r]) {
            continue;
        }
        if !c.neighbours[k].contains(&r) || !c.valid(k, r) {
            continue;
        }
        c.collapse(k, r);
        remaining -= 1;
        rebuilt = false;
        let nbrs: Vec<usize> = c.neighbours[k].iter().copied().collect();
        for w in nbrs {
            heap.push(c.candidate(k, w));
        }
    }

    let kept: Vec<usize> = (0..n).filter(|&v| c.alive[v]).collect();
    let mut new_index = vec![usize::MAX; n];
    for (i, &v) in kept.iter().enumerate() {
        new_index[v] = i;
    }
    let coarse: Vec<[usize; 3]> = c
        .faces
        .iter()
        .zip(&c.face_alive)
        .filter(|(_, &alive)| alive)
        .map(|(f, _)| f.map(|v| new_index[v]))
        .collect();
    validate_faces(kept.len(), &coarse).map_err(|e| SdVaeError::Decimation(e.to_string()))?;
    Ok(Decimation { kept, faces: coarse })
}

/// Closest point of triangle `abc` to `p`, as barycentric weights.
fn closest_barycentric(p: [f64; 3], a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> [f64; 3] {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return [1.0, 0.0, 0.0];
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return [0.0, 1.0, 0.0];
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return [1.0 - v, v, 0.0];
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return [0.0, 0.0, 1.0];
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return [1.0 - w, 0.0, w];
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return [0.0, 1.0 - w, w];
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    [1.0 - v - w, v, w]
}

/// `fine × coarse` interpolation matrix: kept vertices copy their coarse
/// counterpart, the rest take barycentric weights on the nearest coarse face.
pub fn upsampling_matrix(
    fine: &[[f64; 3]],
    kept: &[usize],
    coarse_faces: &[[usize; 3]],
) -> CsrMatrix {
    let coarse: Vec<[f64; 3]> = kept.iter().map(|&v| fine[v]).collect();
    let mut coarse_of = vec![None; fine.len()];
    for (i, &v) in kept.iter().enumerate() {
        coarse_of[v] = Some(i);
    }
    let mut triplets = Vec::new();
    for (v, &p) in fine.iter().enumerate() {
        if let Some(i) = coarse_of[v] {
            triplets.push((v, i, 1.0));
            continue;
        }
        let mut best = (f64::INFINITY, 0, [0.0; 3]);
        for (fi, f) in coarse_faces.iter().enumerate() {
            let w = closest_barycentric(p, coarse[f[0]], coarse[f[1]], coarse[f[2]]);
            let q: [f64; 3] =
                std::array::from_fn(|d| w[0] * coarse[f[0]][d] + w[1] * coarse[f[1]][d] + w[2] * coarse[f[2]][d]);
            let e = sub(p, q);
            let dist = dot(e, e);
            if dist < best.0 {
                best = (dist, fi, w);
            }
        }
        let (_, fi, w) = best;
        for k in 0..3 {
            let wk = w[k].max(0.0);
            if wk > 0.0 {
                triplets.push((v, coarse_faces[fi][k], wk));
            }
        }
    }
    CsrMatrix::from_triplets(fine.len(), kept.len(), triplets)
}

/// Neighbours of `v` in the rotational order given by face orientation,
/// starting from the smallest index. Vertices not reached by walking the
/// fan (boundaries) follow in ascending order.
fn ordered_ring(v: usize, neighbours: &BTreeSet<usize>, faces_of_v: &[[usize; 3]]) -> Vec<usize> {
    let mut next = std::collections::HashMap::new();
    for f in faces_of_v {
        let k = f.iter().position(|&x| x == v).expect("incident face");
        next.insert(f[(k + 1) % 3], f[(k + 2) % 3]);
    }
    let mut ring = Vec::with_capacity(neighbours.len());
    let mut seen = BTreeSet::new();
    if let Some(&start) = neighbours.iter().next() {
        let mut cur = start;
        while seen.insert(cur) {
            ring.push(cur);
            match next.get(&cur) {
                Some(&n) => cur = n,
                None => break,
            }
        }
    }
    ring.extend(neighbours.iter().filter(|w| !seen.contains(w)));
    ring
}

/// Spiral index table, `len` entries per vertex: the vertex itself, its
/// ordered one-ring, then later rings, truncated or padded with the last index.
pub fn spiral_indices(vertex_count: usize, faces: &[[usize; 3]], len: usize) -> Vec<usize> {
    let mut neighbours = vec![BTreeSet::new(); vertex_count];
    let mut incident = vec![Vec::new(); vertex_count];
    for f in faces {
        for k in 0..3 {
            neighbours[f[k]].insert(f[(k + 1) % 3]);
            neighbours[f[(k + 1) % 3]].insert(f[k]);
            incident[f[k]].push(*f);
        }
    }
    let rings: Vec<Vec<usize>> = (0..vertex_count)
        .map(|v| ordered_ring(v, &neighbours[v], &incident[v]))
        .collect();

    let mut table = Vec::with_capacity(vertex_count * len);
    for v in 0..vertex_count {
        let mut spiral = vec![v];
        let mut seen = BTreeSet::from([v]);
        let mut frontier = vec![v];
        while spiral.len() < len && !frontier.is_empty() {
            let mut next = Vec::new();
            for &u in &frontier {
                for &w in &rings[u] {
                    if seen.insert(w) {
                        next.push(w);
                    }
                }
            }
            spiral.extend(&next);
            frontier = next;
        }
        spiral.truncate(len);
        while spiral.len() < len {
            spiral.push(*spiral.last().unwrap());
        }
        table.extend(spiral);
    }
    table
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyLevel {
    pub vertex_count: usize,
    pub faces: Vec<[usize; 3]>,
    /// `vertex_count × spiral_len`, row-major.
    pub spirals: Vec<usize>,
}

/// Level 0 is the template; level `l+1` keeps the vertices `down[l]` of level
/// `l`, and `up[l]` (`n_l × n_{l+1}`) maps back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshHierarchy {
    pub spiral_len: usize,
    pub levels: Vec<HierarchyLevel>,
    pub down: Vec<Vec<usize>>,
    pub up: Vec<CsrMatrix>,
}

impl MeshHierarchy {
    /// `levels` decimation steps, each to `ceil(n / factor)` vertices.
    pub fn build(template: &CorrespondedMesh, levels: usize, factor: usize, spiral_len: usize) -> Result<Self> {
        let mut positions = template.positions().to_vec();
        let mut faces = template.topology().faces().to_vec();
        let mut out = MeshHierarchy {
            spiral_len,
            levels: Vec::with_capacity(levels + 1),
            down: Vec::with_capacity(levels),
            up: Vec::with_capacity(levels),
        };
        out.push_level(positions.len(), faces.clone());
        for _ in 0..levels {
            let target = positions.len().div_ceil(factor.max(1));
            let dec = decimate(&positions, &faces, target)?;
            out.up.push(upsampling_matrix(&positions, &dec.kept, &dec.faces));
            positions = dec.kept.iter().map(|&v| positions[v]).collect();
            faces = dec.faces;
            out.down.push(dec.kept);
            out.push_level(positions.len(), faces.clone());
        }
        Ok(out)
    }

    fn push_level(&mut self, vertex_count: usize, faces: Vec<[usize; 3]>) {
        let spirals = spiral_indices(vertex_count, &faces, self.spiral_len);
        self.levels.push(HierarchyLevel {
            vertex_count,
            faces,
            spirals,
        });
    }

    pub fn depth(&self) -> usize {
        self.down.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.vertex_count).collect()
    }

    pub fn spiral(&self, level: usize, v: usize) -> &[usize] {
        &self.levels[level].spirals[v * self.spiral_len..(v + 1) * self.spiral_len]
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::cohort::synthetic_template;
    use crate::mesh::MeshTopology;

    /// Regular hexagonal fan around vertex 0 in the plane z = 0.
    fn hex_fan() -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
        let mut p = vec![[0.0, 0.0, 0.0]];
        for k in 0..6 {
            let a = std::f64::consts::PI / 3.0 * k as f64;
            p.push([a.cos(), a.sin(), 0.0]);
        }
        let faces = (0..6).map(|k| [0, 1 + k, 1 + (k + 1) % 6]).collect();
        (p, faces)
    }

    #[test]
    fn planar_vertex_has_zero_quadric_error() {
        let (p, f) = hex_fan();
        let q = vertex_quadrics(&p, &f);
        assert!(q[0].error(p[0]).abs() < 1e-15);
        assert!(q[0].error([0.0, 0.0, 2.0]) > 1.0);
    }

    #[test]
    fn quadric_error_is_squared_plane_distance() {
        let q = Quadric::plane([0.0, 0.0, 1.0], -1.0);
        assert!((q.error([5.0, -3.0, 4.0]) - 9.0).abs() < 1e-12);
    }

    #[test]
    fn hexagonal_fan_spiral() {
        let (_, f) = hex_fan();
        let s = spiral_indices(7, &f, 9);
        assert_eq!(&s[..9], &[0, 1, 2, 3, 4, 5, 6, 6, 6]);
    }

    #[test]
    fn spirals_start_at_centre_and_are_valid() {
        let t = synthetic_template(4, [75.0, 95.0, 90.0], 0.35, 15.0).unwrap();
        let s = spiral_indices(t.topology.vertex_count(), t.topology.faces(), 9);
        let adj = t.topology.adjacency();
        for v in 0..t.topology.vertex_count() {
            let sp = &s[v * 9..(v + 1) * 9];
            assert_eq!(sp[0], v);
            assert_eq!(sp[1], adj[v][0]);
            assert!(sp.iter().all(|&i| i < t.topology.vertex_count()));
            // second entry follows the first around v in face orientation
            assert!(t
                .topology
                .faces()
                .iter()
                .any(|f| (0..3).any(|k| f[k] == v && f[(k + 1) % 3] == sp[1] && f[(k + 2) % 3] == sp[2])));
        }
    }

    #[test]
    fn template_hierarchy_levels_and_upsampling() {
        let t = synthetic_template(10, [75.0, 95.0, 90.0], 0.35, 15.0).unwrap();
        let mesh = CorrespondedMesh::new(t.topology.clone(), t.rest.clone()).unwrap();
        let h = MeshHierarchy::build(&mesh, 4, 4, 9).unwrap();
        assert_eq!(h.sizes(), vec![1002, 251, 63, 16, 4]);
        for l in 0..4 {
            let ratio = h.sizes()[l] as f64 / h.sizes()[l + 1] as f64;
            assert!((ratio - 4.0).abs() <= 0.4, "{ratio}");
            let up = &h.up[l];
            for r in 0..up.rows() {
                let (sum, min) = up.row(r).fold((0.0, f64::INFINITY), |(s, m), (_, w)| (s + w, m.min(w)));
                assert!((sum - 1.0).abs() < 1e-12 && min >= 0.0);
            }
        }
        // kept vertices are reproduced exactly
        let mut positions = mesh.positions().to_vec();
        for l in 0..4 {
            let coarse: Vec<f64> = h.down[l].iter().flat_map(|&v| positions[v]).collect();
            let mut fine = vec![0.0; positions.len() * 3];
            h.up[l].apply_rows(&coarse, 3, &mut fine);
            for &v in &h.down[l] {
                assert_eq!(&fine[v * 3..v * 3 + 3], &positions[v]);
            }
            positions = h.down[l].iter().map(|&v| positions[v]).collect();
        }
    }

    #[test]
    fn decimation_below_four_vertices_fails() {
        let t = synthetic_template(1, [1.0, 1.0, 1.0], 0.35, 0.0).unwrap();
        let mesh = CorrespondedMesh::new(t.topology.clone(), t.rest.clone()).unwrap();
        assert!(matches!(
            MeshHierarchy::build(&mesh, 2, 4, 9),
            Err(SdVaeError::Decimation(_))
        ));
        let topo = Arc::new(MeshTopology::unsegmented(12, t.topology.faces().to_vec()).unwrap());
        let h = MeshHierarchy::build(&CorrespondedMesh::new(topo, t.rest.clone()).unwrap(), 1, 3, 9).unwrap();
        assert_eq!(h.sizes(), vec![12, 4]);
    }
}
