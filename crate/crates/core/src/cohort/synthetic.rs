//! Parametric stand-in for a clinical cohort: an ellipsoidal head template
//! with 15 angular regions, deformed per subject by region-local bumps.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ClassLabel, CohortError, Provenance, Result, Sex, SubjectRecord};
use crate::mesh::{canonical_attribute_names, CorrespondedMesh, MeshTopology, ATTRIBUTE_COUNT};

/// Global size factor `adult − (adult − newborn)·exp(−age/τ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgeScale {
    pub newborn: f64,
    pub adult: f64,
    pub tau_years: f64,
}

impl AgeScale {
    pub fn constant() -> Self {
        Self {
            newborn: 1.0,
            adult: 1.0,
            tau_years: 1.0,
        }
    }

    pub fn at(&self, age: f64) -> f64 {
        self.adult - (self.adult - self.newborn) * (-age / self.tau_years).exp()
    }
}

impl Default for AgeScale {
    fn default() -> Self {
        Self {
            newborn: 0.85,
            adult: 1.0,
            tau_years: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticFactorSpec {
    /// Per-class bump amplitude in mm for each of the 15 regions.
    pub class_amplitudes: BTreeMap<ClassLabel, [f64; ATTRIBUTE_COUNT]>,
    /// Standard deviation of the per-subject amplitude noise, mm.
    pub noise_sigma: f64,
    pub age_scale: AgeScale,
    pub age_range: [f64; 2],
    /// Angular standard deviation of each bump, radians.
    pub bump_width: f64,
    /// Geodesic distance beyond a region's boundary over which its bump fades to zero, mm.
    pub blend_width_mm: f64,
    /// Icosphere subdivision frequency; the template has `10f² + 2` vertices.
    pub template_frequency: usize,
    pub semi_axes: [f64; 3],
}

impl Default for SyntheticFactorSpec {
    fn default() -> Self {
        let names = canonical_attribute_names();
        let amp = |pairs: &[(&str, f64)]| {
            let mut a = [0.0; ATTRIBUTE_COUNT];
            for (name, value) in pairs {
                let k = names.iter().position(|n| n == name).expect("canonical name");
                a[k] = *value;
            }
            a
        };
        let mut class_amplitudes = BTreeMap::new();
        class_amplitudes.insert(ClassLabel::healthy(), [0.0; ATTRIBUTE_COUNT]);
        class_amplitudes.insert(
            ClassLabel::new(ClassLabel::APERT),
            amp(&[("forehead", 6.0), ("orbits", 5.0), ("malar", -5.0), ("nose", -3.0)]),
        );
        class_amplitudes.insert(
            ClassLabel::new(ClassLabel::CROUZON),
            amp(&[("orbits", 7.0), ("malar", -6.0), ("upper_lip", -3.0), ("chin", 3.0)]),
        );
        class_amplitudes.insert(
            ClassLabel::new(ClassLabel::MUENKE),
            amp(&[("forehead", 5.0), ("temporal", 4.0), ("parietal", -3.0)]),
        );
        Self {
            class_amplitudes,
            noise_sigma: 1.5,
            age_scale: AgeScale::default(),
            age_range: [0.0, 20.0],
            bump_width: 0.35,
            blend_width_mm: 15.0,
            template_frequency: 10,
            semi_axes: [75.0, 95.0, 90.0],
        }
    }
}

impl SyntheticFactorSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CohortError::InvalidSpec(m.to_string()));
        if self
            .class_amplitudes
            .values()
            .flatten()
            .any(|a| !a.is_finite())
        {
            return bad("amplitudes must be finite");
        }
        let rows: Vec<_> = self.class_amplitudes.values().collect();
        if !rows.iter().any(|a| rows.iter().any(|b| a != b)) {
            return bad("at least two classes must differ in one region amplitude");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise sigma must be finite and non-negative");
        }
        let [lo, hi] = self.age_range;
        if !(0.0 <= lo && lo <= hi && hi <= 20.0) {
            return bad("age range must lie in [0, 20]");
        }
        let s = self.age_scale;
        if !(s.newborn > 0.0 && s.adult > 0.0 && s.tau_years > 0.0) {
            return bad("age scale parameters must be positive");
        }
        if !(self.bump_width > 0.0 && self.blend_width_mm >= 0.0) {
            return bad("bump width must be positive and blend width non-negative");
        }
        if self.template_frequency == 0 {
            return bad("template frequency must be positive");
        }
        if self.semi_axes.iter().any(|a| !(*a > 0.0)) {
            return bad("semi-axes must be positive");
        }
        Ok(())
    }
}

/// Unit-sphere geodesic polyhedron of frequency `f` with outward-facing
/// triangles, `10f² + 2` vertices and `20f²` faces.
pub fn geodesic_sphere(frequency: usize) -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
    let f = frequency.max(1);
    let p = (1.0 + 5f64.sqrt()) / 2.0;
    let corners = [
        [-1.0, p, 0.0],
        [1.0, p, 0.0],
        [-1.0, -p, 0.0],
        [1.0, -p, 0.0],
        [0.0, -1.0, p],
        [0.0, 1.0, p],
        [0.0, -1.0, -p],
        [0.0, 1.0, -p],
        [p, 0.0, -1.0],
        [p, 0.0, 1.0],
        [-p, 0.0, -1.0],
        [-p, 0.0, 1.0],
    ];
    let ico_faces: [[usize; 3]; 20] = [
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    let mut positions = Vec::new();
    let mut index: HashMap<[(usize, usize); 3], usize> = HashMap::new();
    let mut faces = Vec::with_capacity(20 * f * f);
    for face in ico_faces {
        let [a, b, c] = oriented(face, &corners);
        // integer barycentric weights give an exact key shared across faces
        let mut vertex = |i: usize, j: usize| {
            let mut key = [(a, f - i - j), (b, i), (c, j)];
            key.sort_unstable();
            for entry in key.iter_mut() {
                if entry.1 == 0 {
                    *entry = (usize::MAX, 0);
                }
            }
            key.sort_unstable();
            *index.entry(key).or_insert_with(|| {
                let w = [(f - i - j) as f64, i as f64, j as f64];
                let q: [f64; 3] =
                    std::array::from_fn(|d| w[0] * corners[a][d] + w[1] * corners[b][d] + w[2] * corners[c][d]);
                let n = norm(q);
                positions.push([q[0] / n, q[1] / n, q[2] / n]);
                positions.len() - 1
            })
        };
        for i in 0..f {
            for j in 0..f - i {
                let v00 = vertex(i, j);
                let v10 = vertex(i + 1, j);
                let v01 = vertex(i, j + 1);
                faces.push([v00, v10, v01]);
                if i + j + 2 <= f {
                    let v11 = vertex(i + 1, j + 1);
                    faces.push([v10, v11, v01]);
                }
            }
        }
    }
    (positions, faces)
}

fn oriented(face: [usize; 3], corners: &[[f64; 3]]) -> [usize; 3] {
    let [a, b, c] = face.map(|i| corners[i]);
    let n = cross(sub(b, a), sub(c, a));
    let centroid: [f64; 3] = std::array::from_fn(|d| a[d] + b[d] + c[d]);
    if dot(n, centroid) < 0.0 {
        [face[0], face[2], face[1]]
    } else {
        face
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

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// Evenly spread unit directions on a golden-angle spiral.
fn fibonacci_directions(n: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let theta = golden * i as f64;
            [r * theta.cos(), r * theta.sin(), z]
        })
        .collect()
}

/// Multi-source Dijkstra over mesh edges weighted by Euclidean length.
fn geodesic_distances(adjacency: &[Vec<usize>], positions: &[[f64; 3]], sources: &[usize]) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; positions.len()];
    let mut heap = BinaryHeap::new();
    for &s in sources {
        dist[s] = 0.0;
        heap.push(Reverse((0f64.to_bits(), s)));
    }
    while let Some(Reverse((bits, v))) = heap.pop() {
        let d = f64::from_bits(bits);
        if d > dist[v] {
            continue;
        }
        for &w in &adjacency[v] {
            let nd = d + norm(sub(positions[v], positions[w]));
            if nd < dist[w] {
                dist[w] = nd;
                heap.push(Reverse((nd.to_bits(), w)));
            }
        }
    }
    dist
}

/// Rest shape, outward normals and the 15 unit-amplitude deformation fields.
#[derive(Debug, Clone)]
pub struct SyntheticTemplate {
    pub topology: Arc<MeshTopology>,
    pub rest: Vec<[f64; 3]>,
    pub normals: Vec<[f64; 3]>,
    pub region_centres: Vec<[f64; 3]>,
    /// Geodesic distance from every vertex to each region, mm.
    pub region_distances: Vec<Vec<f64>>,
    /// `fields[k][v]`: displacement along the normal per mm of region-k amplitude.
    pub fields: Vec<Vec<f64>>,
    pub blend_width_mm: f64,
}

pub fn synthetic_template(
    frequency: usize,
    semi_axes: [f64; 3],
    bump_width: f64,
    blend_width_mm: f64,
) -> Result<SyntheticTemplate> {
    let (unit, faces) = geodesic_sphere(frequency);
    let centres = fibonacci_directions(ATTRIBUTE_COUNT);
    let labels: Vec<usize> = unit
        .iter()
        .map(|u| {
            (0..ATTRIBUTE_COUNT)
                .max_by(|&a, &b| dot(*u, centres[a]).total_cmp(&dot(*u, centres[b])))
                .unwrap()
        })
        .collect();
    let topology = MeshTopology::new(unit.len(), faces, labels, canonical_attribute_names())
        .map_err(|e| CohortError::InvalidSpec(e.to_string()))?;
    let rest: Vec<[f64; 3]> = unit
        .iter()
        .map(|u| [u[0] * semi_axes[0], u[1] * semi_axes[1], u[2] * semi_axes[2]])
        .collect();

    let mut normals = vec![[0.0; 3]; rest.len()];
    for face in topology.faces() {
        let [a, b, c] = face.map(|i| rest[i]);
        let n = cross(sub(b, a), sub(c, a));
        for &v in face {
            for d in 0..3 {
                normals[v][d] += n[d];
            }
        }
    }
    for n in &mut normals {
        let len = norm(*n);
        *n = [n[0] / len, n[1] / len, n[2] / len];
    }

    let adjacency = topology.adjacency();
    let mut region_distances = Vec::with_capacity(ATTRIBUTE_COUNT);
    let mut fields = Vec::with_capacity(ATTRIBUTE_COUNT);
    for (k, centre) in centres.iter().enumerate() {
        let dist = geodesic_distances(&adjacency, &rest, topology.mask(k));
        let field = unit
            .iter()
            .zip(&dist)
            .map(|(u, &d)| {
                let angle = dot(*u, *centre).clamp(-1.0, 1.0).acos();
                let bump = (-angle * angle / (2.0 * bump_width * bump_width)).exp();
                let falloff = if d == 0.0 {
                    1.0
                } else if d < blend_width_mm {
                    (1.0 - d / blend_width_mm).powi(2)
                } else {
                    0.0
                };
                bump * falloff
            })
            .collect();
        region_distances.push(dist);
        fields.push(field);
    }

    Ok(SyntheticTemplate {
        topology: Arc::new(topology),
        rest,
        normals,
        region_centres: centres,
        region_distances,
        fields,
        blend_width_mm,
    })
}

impl SyntheticTemplate {
    pub fn from_spec(spec: &SyntheticFactorSpec) -> Result<Self> {
        synthetic_template(
            spec.template_frequency,
            spec.semi_axes,
            spec.bump_width,
            spec.blend_width_mm,
        )
    }

    /// `scale · (rest + Σ_k amplitudes[k] · fields[k] · normal)`.
    pub fn synthesize(&self, amplitudes: &[f64; ATTRIBUTE_COUNT], scale: f64) -> CorrespondedMesh {
        let positions = (0..self.rest.len())
            .map(|v| {
                let offset: f64 = (0..ATTRIBUTE_COUNT)
                    .map(|k| amplitudes[k] * self.fields[k][v])
                    .sum();
                std::array::from_fn(|d| scale * (self.rest[v][d] + offset * self.normals[v][d]))
            })
            .collect();
        CorrespondedMesh::new(self.topology.clone(), positions).expect("finite synthetic mesh")
    }
}

/// Ground-truth generative factors of one synthetic subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectFactors {
    pub id: String,
    pub amplitudes: [f64; ATTRIBUTE_COUNT],
    pub scale: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub template: SyntheticTemplate,
    pub records: Vec<SubjectRecord>,
    pub meshes: Vec<CorrespondedMesh>,
    pub factors: Vec<SubjectFactors>,
}

impl SyntheticCohort {
    /// Sidecar CSV: `id,class,age,scale,<region amplitudes...>`.
    pub fn write_factors_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["id".to_string(), "class".into(), "age".into(), "scale".into()];
        header.extend(self.template.topology.attribute_names().iter().cloned());
        w.write_record(&header)?;
        for (record, f) in self.records.iter().zip(&self.factors) {
            let mut row = vec![
                f.id.clone(),
                record.class_label.to_string(),
                record.age.to_string(),
                f.scale.to_string(),
            ];
            row.extend(f.amplitudes.iter().map(|a| a.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Draws `counts[class]` subjects per class. Ages are uniform over the spec's
/// range, sex is 50:50, and each region amplitude is the class value plus
/// N(0, σ) noise. Subject streams are derived from `seed` in id order.
pub fn generate_synthetic_cohort(
    spec: &SyntheticFactorSpec,
    counts: &BTreeMap<ClassLabel, i64>,
    seed: u64,
) -> Result<SyntheticCohort> {
    spec.validate()?;
    for (class, &n) in counts {
        if n <= 0 {
            return Err(CohortError::NonPositiveCount(class.0.clone()));
        }
        if !spec.class_amplitudes.contains_key(class) {
            return Err(CohortError::InvalidSpec(format!("no amplitudes for class {class}")));
        }
    }
    let template = SyntheticTemplate::from_spec(spec)?;
    let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
    let mut master = ChaCha8Rng::seed_from_u64(seed);

    let mut records = Vec::new();
    let mut meshes = Vec::new();
    let mut factors = Vec::new();
    for (class, &n) in counts {
        let base = &spec.class_amplitudes[class];
        for i in 0..n as usize {
            let mut rng = ChaCha8Rng::seed_from_u64(master.random());
            let id = format!("{}-{i:04}", class.as_str().to_lowercase());
            let age = rng.random_range(spec.age_range[0]..=spec.age_range[1]);
            let sex = if rng.random_bool(0.5) { Sex::M } else { Sex::F };
            let amplitudes: [f64; ATTRIBUTE_COUNT] = std::array::from_fn(|k| {
                base[k] + if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 }
            });
            let scale = spec.age_scale.at(age);
            meshes.push(template.synthesize(&amplitudes, scale));
            records.push(SubjectRecord {
                mesh_path: format!("meshes/{id}.obj"),
                id: id.clone(),
                class_label: class.clone(),
                age,
                sex,
                provenance: Provenance::Synthetic,
                parents: None,
            });
            factors.push(SubjectFactors {
                id,
                amplitudes,
                scale,
            });
        }
    }
    Ok(SyntheticCohort {
        template,
        records,
        meshes,
        factors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{displacement, region_mean_displacement};

    fn small_spec() -> SyntheticFactorSpec {
        SyntheticFactorSpec {
            template_frequency: 4,
            ..SyntheticFactorSpec::default()
        }
    }

    fn counts(pairs: &[(&str, i64)]) -> BTreeMap<ClassLabel, i64> {
        pairs.iter().map(|(c, n)| (ClassLabel::new(*c), *n)).collect()
    }

    #[test]
    fn icosphere_counts_and_orientation() {
        for f in [1, 2, 4, 10] {
            let (p, faces) = geodesic_sphere(f);
            assert_eq!(p.len(), 10 * f * f + 2);
            assert_eq!(faces.len(), 20 * f * f);
            for face in &faces {
                let [a, b, c] = face.map(|i| p[i]);
                let n = cross(sub(b, a), sub(c, a));
                assert!(dot(n, a) > 0.0);
            }
            let area: f64 = faces
                .iter()
                .map(|face| {
                    let [a, b, c] = face.map(|i| p[i]);
                    0.5 * norm(cross(sub(b, a), sub(c, a)))
                })
                .sum();
            // Euler characteristic of a closed sphere
            let edges = faces.len() * 3 / 2;
            assert_eq!(p.len() + faces.len() - edges, 2);
            assert!(area < 4.0 * std::f64::consts::PI);
        }
    }

    #[test]
    fn template_regions_cover_all_attributes() {
        let t = synthetic_template(10, [75.0, 95.0, 90.0], 0.35, 15.0).unwrap();
        assert_eq!(t.topology.vertex_count(), 1002);
        for k in 0..ATTRIBUTE_COUNT {
            assert!(t.topology.mask(k).len() > 30, "region {k}");
        }
        let micro = synthetic_template(4, [75.0, 95.0, 90.0], 0.35, 15.0).unwrap();
        assert!(micro.topology.vertex_count() <= 200);
        assert!(micro.topology.attribute_masks().iter().all(|m| !m.is_empty()));
    }

    #[test]
    fn zero_amplitudes_and_noise_give_scaled_template() {
        let mut spec = small_spec();
        for a in spec.class_amplitudes.values_mut() {
            *a = [0.0; ATTRIBUTE_COUNT];
        }
        spec.noise_sigma = 0.0;
        // identical classes fail validation, so synthesize from the template directly
        let t = SyntheticTemplate::from_spec(&spec).unwrap();
        let m = t.synthesize(&[0.0; ATTRIBUTE_COUNT], 0.9);
        for (p, r) in m.positions().iter().zip(&t.rest) {
            for d in 0..3 {
                assert!((p[d] - 0.9 * r[d]).abs() < 1e-12);
            }
        }
        assert!(matches!(spec.validate(), Err(CohortError::InvalidSpec(_))));
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = small_spec();
        let c = counts(&[("Healthy", 3), ("Apert", 2)]);
        let a = generate_synthetic_cohort(&spec, &c, 5).unwrap();
        let b = generate_synthetic_cohort(&spec, &c, 5).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.factors, b.factors);
        for (x, y) in a.meshes.iter().zip(&b.meshes) {
            assert_eq!(x.positions(), y.positions());
        }
        let other = generate_synthetic_cohort(&spec, &c, 6).unwrap();
        assert_ne!(a.factors, other.factors);
        for r in &a.records {
            assert!((0.0..=20.0).contains(&r.age));
        }
    }

    #[test]
    fn non_positive_counts_rejected() {
        let spec = small_spec();
        assert!(matches!(
            generate_synthetic_cohort(&spec, &counts(&[("Healthy", 0)]), 0),
            Err(CohortError::NonPositiveCount(_))
        ));
        assert!(matches!(
            generate_synthetic_cohort(&spec, &counts(&[("Apert", -2)]), 0),
            Err(CohortError::NonPositiveCount(_))
        ));
    }

    #[test]
    fn class_difference_concentrates_in_orbits() {
        let names = canonical_attribute_names();
        let orbits = names.iter().position(|n| n == "orbits").unwrap();
        let mut a = [0.0; ATTRIBUTE_COUNT];
        a[orbits] = 8.0;
        let spec = SyntheticFactorSpec {
            class_amplitudes: [(ClassLabel::new("A"), a), (ClassLabel::new("B"), [0.0; 15])]
                .into_iter()
                .collect(),
            noise_sigma: 1.0,
            age_scale: AgeScale::constant(),
            ..SyntheticFactorSpec::default()
        };
        let cohort = generate_synthetic_cohort(&spec, &counts(&[("A", 20), ("B", 20)]), 11).unwrap();
        let topology = cohort.template.topology.clone();
        let class_mean = |label: &str| {
            let members: Vec<_> = cohort
                .records
                .iter()
                .zip(&cohort.meshes)
                .filter(|(r, _)| r.class_label.0 == label)
                .map(|(_, m)| m)
                .collect();
            let positions = (0..topology.vertex_count())
                .map(|v| {
                    std::array::from_fn(|d| {
                        members.iter().map(|m| m.positions()[v][d]).sum::<f64>() / members.len() as f64
                    })
                })
                .collect();
            CorrespondedMesh::new(topology.clone(), positions).unwrap()
        };
        let field = displacement(&class_mean("A"), &class_mean("B")).unwrap();
        let region: Vec<f64> = (0..ATTRIBUTE_COUNT)
            .map(|k| region_mean_displacement(&field, topology.mask(k)).unwrap())
            .collect();
        for (k, &r) in region.iter().enumerate() {
            if k != orbits {
                assert!(region[orbits] > 5.0 * r, "orbits {} vs region {k} {r}", region[orbits]);
            }
        }
    }

    #[test]
    fn zeroing_a_factor_changes_only_its_region_and_blend() {
        let t = synthetic_template(10, [75.0, 95.0, 90.0], 0.35, 15.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let amps: [f64; ATTRIBUTE_COUNT] = std::array::from_fn(|_| rng.random_range(-8.0..8.0));
        let full = t.synthesize(&amps, 0.95);
        for j in 0..ATTRIBUTE_COUNT {
            let mut zeroed = amps;
            zeroed[j] = 0.0;
            let m = t.synthesize(&zeroed, 0.95);
            let field = displacement(&full, &m).unwrap();
            let mut inside = 0.0;
            for (v, &d) in field.magnitudes().iter().enumerate() {
                if t.region_distances[j][v] >= t.blend_width_mm {
                    assert!(d < 1e-12, "factor {j} moved vertex {v} by {d}");
                } else if t.region_distances[j][v] == 0.0 {
                    inside += d;
                }
            }
            assert!(inside > 0.0);
        }
    }

    #[test]
    fn age_scale_curve() {
        let s = AgeScale::default();
        assert!((s.at(0.0) - s.newborn).abs() < 1e-12);
        assert!(s.at(20.0) > s.at(4.0));
        assert!((s.at(1e6) - s.adult).abs() < 1e-12);
    }

    #[test]
    fn factors_csv_has_region_columns() {
        let cohort = generate_synthetic_cohort(&small_spec(), &counts(&[("Healthy", 2), ("Muenke", 1)]), 0).unwrap();
        let mut buf = Vec::new();
        cohort.write_factors_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("id,class,age,scale,forehead,"));
        assert_eq!(lines[1].split(',').count(), 4 + ATTRIBUTE_COUNT);
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let spec = SyntheticFactorSpec::default();
        let text = toml::to_string(&spec).unwrap();
        let back: SyntheticFactorSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
