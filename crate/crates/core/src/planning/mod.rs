//! Procedure-restricted latent interpolation toward the healthy population.
//!
//! A patient's latent code `z_P` is moved toward a target on the line through
//! `z_P` and the healthy mean, but only on the latent subsets of the
//! attributes a procedure operates on.

mod procedures;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cohort::ClassLabel;
use crate::mesh::{displacement, CorrespondedMesh, DisplacementField, MeshError};
use crate::sdvae::{LatentVector, MeshModel, SdVaeError};
use crate::{LATENT_DIM, SUBSET_DIM};

pub use procedures::{builtin_procedures, Procedure, ProcedureRegistry, ProcedureSpec};

/// Displacements above this are drawn with the top colour.
pub const DISPLACEMENT_CAP_MM: f64 = 10.0;

#[derive(Debug, thiserror::Error)]
pub enum PlanningError {
    #[error("no healthy subjects among the latents")]
    NoHealthySubjects,
    #[error("patient latent coincides with the healthy mean; direction undefined")]
    ZeroDirection,
    #[error("procedure {0} has no attributes")]
    EmptyProcedure(String),
    #[error("unknown attribute {0}")]
    UnknownAttribute(String),
    #[error("stop fraction for attribute {attribute} is {value}, must lie in [0, 1]")]
    StopFraction { attribute: usize, value: f64 },
    #[error("stop fraction given for attribute {0}, which the procedure does not move")]
    StopOutsideProcedure(usize),
    #[error("interpolation parameter {0} outside [0, 1]")]
    Parameter(f64),
    #[error("need at least one trajectory step")]
    NoSteps,
    #[error("procedure registry: {0}")]
    Registry(String),
    #[error(transparent)]
    Model(#[from] SdVaeError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

pub type Result<T, E = PlanningError> = std::result::Result<T, E>;

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// Healthy latent mean and the healthy cloud it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthyReference {
    pub mean: LatentVector,
    pub healthy: Vec<LatentVector>,
}

impl HealthyReference {
    /// Population standard deviation of the healthy latents projected on the
    /// unit vector `u`.
    pub fn sigma_along(&self, u: &[f64]) -> f64 {
        let proj: Vec<f64> = self
            .healthy
            .iter()
            .map(|z| z.values().iter().zip(u).map(|(a, b)| a * b).sum())
            .collect();
        let n = proj.len() as f64;
        let m = proj.iter().sum::<f64>() / n;
        (proj.iter().map(|p| (p - m).powi(2)).sum::<f64>() / n).sqrt()
    }
}

pub fn healthy_reference(latents: &[LatentVector], labels: &[ClassLabel]) -> Result<HealthyReference> {
    let healthy: Vec<LatentVector> = latents
        .iter()
        .zip(labels)
        .filter(|(_, l)| l.as_str() == ClassLabel::HEALTHY)
        .map(|(z, _)| z.clone())
        .collect();
    if healthy.is_empty() {
        return Err(PlanningError::NoHealthySubjects);
    }
    let n = healthy.len() as f64;
    let mean = (0..LATENT_DIM)
        .map(|i| healthy.iter().map(|z| z.values()[i]).sum::<f64>() / n)
        .collect();
    Ok(HealthyReference {
        mean: LatentVector::new(mean)?,
        healthy,
    })
}

/// The healthy mean and the points 1, 2 and 3 σ from it toward the patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationTargets {
    pub mean: LatentVector,
    pub sigma1: LatentVector,
    pub sigma2: LatentVector,
    pub sigma3: LatentVector,
    /// Healthy spread along `direction`.
    pub sigma_dir: f64,
    /// Unit vector from the healthy mean toward the patient.
    pub direction: Vec<f64>,
}

impl InterpolationTargets {
    pub fn get<'a>(&'a self, target: &'a Target) -> &'a LatentVector {
        match target {
            Target::Mean => &self.mean,
            Target::Sigma1 => &self.sigma1,
            Target::Sigma2 => &self.sigma2,
            Target::Sigma3 => &self.sigma3,
            Target::Custom(z) => z,
        }
    }
}

pub fn targets(reference: &HealthyReference, z_p: &LatentVector) -> Result<InterpolationTargets> {
    let mu = reference.mean.values();
    let gap: Vec<f64> = z_p.values().iter().zip(mu).map(|(p, m)| p - m).collect();
    let length = norm(gap.iter().copied());
    if length == 0.0 {
        return Err(PlanningError::ZeroDirection);
    }
    let direction: Vec<f64> = gap.iter().map(|g| g / length).collect();
    let sigma_dir = reference.sigma_along(&direction);
    let at = |k: f64| -> Result<LatentVector> {
        Ok(LatentVector::new(
            mu.iter().zip(&direction).map(|(m, u)| m + k * sigma_dir * u).collect(),
        )?)
    };
    Ok(InterpolationTargets {
        mean: reference.mean.clone(),
        sigma1: at(1.0)?,
        sigma2: at(2.0)?,
        sigma3: at(3.0)?,
        sigma_dir,
        direction,
    })
}

/// Where an interpolation ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Mean,
    Sigma1,
    Sigma2,
    Sigma3,
    /// E.g. the encoding of a chosen healthy subject.
    Custom(LatentVector),
}

/// State of one interactive plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningSession {
    pub patient: String,
    pub z_p: LatentVector,
    pub procedure: Procedure,
    pub target: Target,
    /// Position along the trajectory.
    pub t: f64,
    /// Per-attribute stop fraction; attributes of the procedure without an
    /// entry use 1.
    pub stops: BTreeMap<usize, f64>,
}

impl PlanningSession {
    pub fn new(patient: impl Into<String>, z_p: LatentVector, procedure: Procedure, target: Target) -> Self {
        Self {
            patient: patient.into(),
            z_p,
            procedure,
            target,
            t: 1.0,
            stops: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.t) {
            return Err(PlanningError::Parameter(self.t));
        }
        for (&k, &v) in &self.stops {
            if !self.procedure.contains(k) {
                return Err(PlanningError::StopOutsideProcedure(k));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(PlanningError::StopFraction { attribute: k, value: v });
            }
        }
        Ok(())
    }

    pub fn stop(&self, attribute: usize) -> f64 {
        self.stops.get(&attribute).copied().unwrap_or(1.0)
    }

    /// `z(t)`: moved subsets are `(1 − t·t_k)·z_P + t·t_k·target`, all
    /// others stay at `z_P`.
    pub fn latent_at(&self, target: &LatentVector, t: f64) -> Result<LatentVector> {
        if !(0.0..=1.0).contains(&t) {
            return Err(PlanningError::Parameter(t));
        }
        let mut z = self.z_p.clone();
        for &k in self.procedure.attributes() {
            let s = t * self.stop(k);
            for i in k * SUBSET_DIM..(k + 1) * SUBSET_DIM {
                z.values_mut()[i] = (1.0 - s) * self.z_p.values()[i] + s * target.values()[i];
            }
        }
        Ok(z)
    }

    /// `steps` equidistant parameters in `[0, 1]`.
    pub fn trajectory_latents(&self, target: &LatentVector, steps: usize) -> Result<Vec<(f64, LatentVector)>> {
        self.validate()?;
        if steps == 0 {
            return Err(PlanningError::NoSteps);
        }
        (0..steps)
            .map(|i| {
                let t = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
                Ok((t, self.latent_at(target, t)?))
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryStep {
    pub t: f64,
    pub latent: LatentVector,
    pub mesh: CorrespondedMesh,
    /// Relative to the first step's mesh.
    pub displacement: DisplacementField,
}

/// Decodes every trajectory step.
pub fn interpolate(
    session: &PlanningSession,
    targets: &InterpolationTargets,
    model: &dyn MeshModel,
    steps: usize,
) -> Result<Vec<TrajectoryStep>> {
    let latents = session.trajectory_latents(targets.get(&session.target), steps)?;
    let zs: Vec<LatentVector> = latents.iter().map(|(_, z)| z.clone()).collect();
    let meshes = model.generate(&zs)?;
    let start = meshes[0].clone();
    latents
        .into_iter()
        .zip(meshes)
        .map(|((t, latent), mesh)| {
            Ok(TrajectoryStep {
                t,
                displacement: displacement(&start, &mesh)?,
                latent,
                mesh,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub procedure: String,
    pub d_mu: f64,
    pub d_1sigma: f64,
    pub d_2sigma: f64,
    pub d_3sigma: f64,
}

/// `‖z_end − z_μ‖` where `z_end` takes the target's subsets on the moved
/// attributes and `z_P`'s elsewhere.
pub fn procedure_distance(procedure: &Procedure, z_p: &LatentVector, target: &LatentVector, mean: &LatentVector) -> f64 {
    norm((0..LATENT_DIM).map(|i| {
        let end = if procedure.contains(i / SUBSET_DIM) {
            target.values()[i]
        } else {
            z_p.values()[i]
        };
        end - mean.values()[i]
    }))
}

/// Procedures ordered from smallest to largest `d_μ`.
pub fn rank_procedures(procedures: &[Procedure], z_p: &LatentVector, targets: &InterpolationTargets) -> Vec<RankingRow> {
    let mu = &targets.mean;
    let mut rows: Vec<RankingRow> = procedures
        .iter()
        .map(|p| RankingRow {
            procedure: p.name().to_string(),
            d_mu: procedure_distance(p, z_p, &targets.mean, mu),
            d_1sigma: procedure_distance(p, z_p, &targets.sigma1, mu),
            d_2sigma: procedure_distance(p, z_p, &targets.sigma2, mu),
            d_3sigma: procedure_distance(p, z_p, &targets.sigma3, mu),
        })
        .collect();
    rows.sort_by(|a, b| a.d_mu.total_cmp(&b.d_mu).then_with(|| a.procedure.cmp(&b.procedure)));
    rows
}

/// `t,z0,...,z74`.
pub fn write_trajectory_csv<W: Write>(out: W, steps: &[(f64, LatentVector)]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((0..LATENT_DIM).map(|i| format!("z{i}")));
    w.write_record(&header)?;
    for (t, z) in steps {
        let mut rec = vec![t.to_string()];
        rec.extend(z.values().iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()
}

/// One magnitude per line.
pub fn write_displacement<W: Write>(mut out: W, field: &DisplacementField) -> std::io::Result<()> {
    for m in field.magnitudes() {
        writeln!(out, "{m}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use super::*;
    use crate::mesh::ATTRIBUTE_COUNT;
    use crate::sdvae::IdentityStub;

    fn random_latent(rng: &mut ChaCha8Rng, scale: f64) -> LatentVector {
        LatentVector::new((0..LATENT_DIM).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
    }

    fn reference(seed: u64) -> HealthyReference {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let latents: Vec<LatentVector> = (0..40).map(|_| random_latent(&mut rng, 1.0)).collect();
        let labels = vec![ClassLabel::healthy(); 40];
        healthy_reference(&latents, &labels).unwrap()
    }

    #[test]
    fn healthy_mean_examples() {
        let a = LatentVector::new(vec![1.0; 75]).unwrap();
        let b = LatentVector::new(vec![3.0; 75]).unwrap();
        let c = LatentVector::new(vec![100.0; 75]).unwrap();
        let h = ClassLabel::healthy();
        let r = healthy_reference(std::slice::from_ref(&a), std::slice::from_ref(&h)).unwrap();
        assert_eq!(r.mean, a);
        let labels = [h.clone(), h, ClassLabel::new("Apert")];
        let r = healthy_reference(&[a, b, c], &labels).unwrap();
        assert_eq!(r.mean.values(), &[2.0; 75]);
        assert!(matches!(
            healthy_reference(&[LatentVector::zeros()], &[ClassLabel::new("Apert")]),
            Err(PlanningError::NoHealthySubjects)
        ));
    }

    #[test]
    fn isotropic_cloud_targets() {
        // ±s·√75 on each axis: along any axis, 2 of 150 points are nonzero, so the variance is s²
        let s = 2.0;
        let mut healthy = Vec::new();
        for i in 0..LATENT_DIM {
            for sign in [-1.0, 1.0] {
                let mut z = vec![0.0; LATENT_DIM];
                z[i] = sign * s * (LATENT_DIM as f64).sqrt();
                healthy.push(LatentVector::new(z).unwrap());
            }
        }
        let labels = vec![ClassLabel::healthy(); healthy.len()];
        let r = healthy_reference(&healthy, &labels).unwrap();
        let mut zp = vec![0.0; LATENT_DIM];
        zp[0] = 10.0 * s;
        let t = targets(&r, &LatentVector::new(zp).unwrap()).unwrap();
        assert!((t.sigma_dir - s).abs() < 1e-12);
        let mut expected = vec![0.0; LATENT_DIM];
        expected[0] = s;
        for (a, b) in t.sigma1.values().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(targets(&r, &r.mean), Err(PlanningError::ZeroDirection)));
    }

    fn collinearity_residual(a: &[f64], b: &[f64], p: &[f64]) -> f64 {
        // distance of p from the line through a and b
        let d: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
        let len = norm(d.iter().copied());
        let u: Vec<f64> = d.iter().map(|x| x / len).collect();
        let w: Vec<f64> = p.iter().zip(a).map(|(x, y)| x - y).collect();
        let along: f64 = w.iter().zip(&u).map(|(x, y)| x * y).sum();
        norm(w.iter().zip(&u).map(|(x, y)| x - along * y))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn targets_are_collinear_and_evenly_spaced(seed in 0u64..100_000) {
            let r = reference(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let zp = random_latent(&mut rng, 3.0);
            let t = targets(&r, &zp).unwrap();
            for (k, z) in [(1.0, &t.sigma1), (2.0, &t.sigma2), (3.0, &t.sigma3)] {
                prop_assert!(collinearity_residual(zp.values(), r.mean.values(), z.values()) < 1e-10);
                let dist = norm(z.values().iter().zip(r.mean.values()).map(|(a, b)| a - b));
                prop_assert!((dist - k * t.sigma_dir).abs() < 1e-10);
            }
        }

        #[test]
        fn adding_an_attribute_never_increases_d_mu(seed in 0u64..100_000) {
            let r = reference(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let zp = random_latent(&mut rng, 3.0);
            let t = targets(&r, &zp).unwrap();
            let mut attrs: Vec<usize> = (0..ATTRIBUTE_COUNT).filter(|_| rng.random_bool(0.4)).collect();
            if attrs.is_empty() {
                attrs.push(0);
            }
            let extra = rng.random_range(0..ATTRIBUTE_COUNT);
            let base = Procedure::new("a", attrs.clone()).unwrap();
            attrs.push(extra);
            let bigger = Procedure::new("b", attrs).unwrap();
            for target in [&t.mean, &t.sigma1, &t.sigma2, &t.sigma3] {
                prop_assert!(
                    procedure_distance(&bigger, &zp, target, &t.mean)
                        <= procedure_distance(&base, &zp, target, &t.mean) + 1e-12
                );
            }
        }

        #[test]
        fn trajectory_is_affine_frozen_and_approaching(seed in 0u64..100_000, steps in 3usize..12) {
            let r = reference(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
            let zp = random_latent(&mut rng, 3.0);
            let t = targets(&r, &zp).unwrap();
            let attrs: Vec<usize> = (0..ATTRIBUTE_COUNT).filter(|_| rng.random_bool(0.5)).chain([3]).collect();
            let procedure = Procedure::new("p", attrs).unwrap();
            let mut session = PlanningSession::new("x", zp.clone(), procedure.clone(), Target::Mean);
            for &k in procedure.attributes() {
                session.stops.insert(k, rng.random_range(0.0..=1.0));
            }
            let traj = session.trajectory_latents(&t.mean, steps).unwrap();
            prop_assert_eq!(&traj[0].1, &zp);
            for w in traj.windows(3) {
                for i in 0..LATENT_DIM {
                    let second = w[2].1.values()[i] - 2.0 * w[1].1.values()[i] + w[0].1.values()[i];
                    prop_assert!(second.abs() < 1e-12);
                }
            }
            for (_, z) in &traj {
                for k in (0..ATTRIBUTE_COUNT).filter(|k| !procedure.contains(*k)) {
                    prop_assert_eq!(z.subset(k), zp.subset(k));
                }
            }
            let d: Vec<f64> = traj
                .iter()
                .map(|(_, z)| norm(z.values().iter().zip(t.mean.values()).map(|(a, b)| a - b)))
                .collect();
            for w in d.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12);
            }
        }
    }

    #[test]
    fn full_interpolation_reaches_the_mean() {
        let r = reference(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let zp = random_latent(&mut rng, 3.0);
        let t = targets(&r, &zp).unwrap();
        let s = PlanningSession::new("x", zp.clone(), Procedure::whole_head(), Target::Mean);
        let traj = s.trajectory_latents(&t.mean, 5).unwrap();
        assert_eq!(traj.len(), 5);
        assert_eq!(traj[0].1, zp);
        for (a, b) in traj[4].1.values().iter().zip(t.mean.values()) {
            assert_eq!(a, b);
        }
        let rows = rank_procedures(&[Procedure::whole_head()], &zp, &t);
        assert_eq!(rows[0].d_mu, 0.0);
    }

    #[test]
    fn single_attribute_distance_is_pythagorean() {
        let r = reference(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let zp = random_latent(&mut rng, 3.0);
        let t = targets(&r, &zp).unwrap();
        let nose = Procedure::new("nose", [3]).unwrap();
        let d = procedure_distance(&nose, &zp, &t.mean, &t.mean);
        let total: f64 = zp.values().iter().zip(t.mean.values()).map(|(a, b)| (a - b).powi(2)).sum();
        let gap: f64 = zp.subset(3).iter().zip(t.mean.subset(3)).map(|(a, b)| (a - b).powi(2)).sum();
        assert!((d * d - (total - gap)).abs() < 1e-9);
    }

    #[test]
    fn ranking_is_sorted() {
        let r = reference(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let zp = random_latent(&mut rng, 3.0);
        let t = targets(&r, &zp).unwrap();
        let reg = builtin_procedures();
        let rows = rank_procedures(reg.procedures(), &zp, &t);
        assert_eq!(rows.len(), 6);
        for w in rows.windows(2) {
            assert!(w[0].d_mu <= w[1].d_mu);
        }
    }

    #[test]
    fn session_validation() {
        let mut s = PlanningSession::new("x", LatentVector::zeros(), Procedure::new("p", [1, 2]).unwrap(), Target::Mean);
        s.stops.insert(1, 0.5);
        assert!(s.validate().is_ok());
        s.stops.insert(3, 0.5);
        assert!(matches!(s.validate(), Err(PlanningError::StopOutsideProcedure(3))));
        s.stops.remove(&3);
        s.stops.insert(2, 1.5);
        assert!(s.validate().is_err());
        s.stops.insert(2, 1.0);
        s.t = -0.1;
        assert!(s.validate().is_err());
        s.t = 0.0;
        assert!(matches!(s.trajectory_latents(&LatentVector::zeros(), 0), Err(PlanningError::NoSteps)));
    }

    #[test]
    fn first_step_has_zero_displacement() {
        let tmpl = crate::cohort::synthetic_template(4, [75.0, 95.0, 90.0], 0.35, 15.0).unwrap();
        let mesh = CorrespondedMesh::new(tmpl.topology.clone(), tmpl.rest.clone()).unwrap();
        let stub = IdentityStub { template: mesh };
        let r = reference(8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let zp = random_latent(&mut rng, 3.0);
        let t = targets(&r, &zp).unwrap();
        let s = PlanningSession::new("x", zp, builtin_procedures().get("FOAR").unwrap().clone(), Target::Sigma2);
        let steps = interpolate(&s, &t, &stub, 5).unwrap();
        assert_eq!(steps.len(), 5);
        assert!(steps[0].displacement.magnitudes().iter().all(|&m| m == 0.0));
        let mut buf = Vec::new();
        write_displacement(&mut buf, &steps[0].displacement).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 162);
    }
}
