//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! Run with `cargo test --release -p cranio-cli --test acceptance`. The
//! end-to-end criterion trains two desk-scale models and takes most of the
//! runtime; set `CRANIO_ACCEPTANCE_ONLY=<substring>` to run a subset.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use cranio_cli::config::RunConfig;
use cranio_cli::stages::{self, AnalysisSummary, EvalMetrics, Layout};
use cranio_core::analysis::fit_qda;
use cranio_core::cohort::{generate_synthetic_cohort, synthetic_template, ClassLabel, SyntheticFactorSpec};
use cranio_core::diff::{grad_check, Axis, GradCheckOptions, Graph, Result as DiffResult, Tensor, Var};
use cranio_core::linalg::CsrMatrix;
use cranio_core::mesh::{CorrespondedMesh, ATTRIBUTE_COUNT};
use cranio_core::planning::{
    healthy_reference, procedure_distance, rank_procedures, targets, PlanningSession, Procedure, Target,
};
use cranio_core::sdvae::{
    loss_kl, loss_latent_consistency, make_swap_batch, total_loss, ConsistencyNorm, LatentVector, MeshHierarchy,
    ModelConfig, Normalizer, SdVae, SdVaeError, TrainingConfig,
};
use cranio_core::spectral::{
    build_laplacian, eigendecompose_with, fourier, inverse_fourier, sample_weights, spectral_augment, EigenOptions,
    EigenSolver, InterpolationWeights, LaplacianEigenbasis,
};
use cranio_core::LATENT_DIM;
use nalgebra::{Matrix2, Vector2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn template(frequency: usize) -> CorrespondedMesh {
    let t = synthetic_template(frequency, [75.0, 95.0, 90.0], 0.35, 15.0).unwrap();
    CorrespondedMesh::new(t.topology.clone(), t.rest.clone()).unwrap()
}

fn cohort_meshes(frequency: usize, per_class: i64, seed: u64) -> Vec<CorrespondedMesh> {
    let spec = SyntheticFactorSpec {
        template_frequency: frequency,
        ..SyntheticFactorSpec::default()
    };
    let counts = ClassLabel::builtin().into_iter().map(|c| (c, per_class)).collect();
    generate_synthetic_cohort(&spec, &counts, seed).unwrap().meshes
}

fn spectral_identities() -> Outcome {
    let start = Instant::now();
    let meshes = cohort_meshes(10, 1, 11);
    let (x1, x2) = (&meshes[0], &meshes[1]);
    let n = x1.vertex_count();
    let basis = LaplacianEigenbasis::for_topology(x1.topology(), n).map_err(|e| e.to_string())?;

    let coeffs = fourier(x1, &basis).unwrap();
    let back = inverse_fourier(&coeffs, &basis).unwrap();
    let round_trip = back
        .iter()
        .zip(x1.positions())
        .flat_map(|(a, b)| (0..3).map(move |c| (a[c] - b[c]).abs()))
        .fold(0.0, f64::max);
    ensure(round_trip < 1e-8, format!("round trip {round_trip:e}"))?;

    let energy: f64 = x1.positions().iter().flatten().map(|v| v * v).sum();
    let spectral: f64 = coeffs.matrix().iter().map(|v| v * v).sum();
    let parseval = (energy - spectral).abs() / energy;
    ensure(parseval < 1e-8, format!("Parseval {parseval:e}"))?;

    let zero = InterpolationWeights::from_values(vec![0.0; n], 0);
    let same = spectral_augment(x1, x2, &zero, &basis).unwrap();
    ensure(same.positions() == x1.positions(), "rho = 0 does not return X1 exactly")?;

    let rho = sample_weights(5, n);
    let aug = spectral_augment(x1, x2, &rho, &basis).unwrap();
    let (c1, c2, ca) = (fourier(x1, &basis).unwrap(), fourier(x2, &basis).unwrap(), fourier(&aug, &basis).unwrap());
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for c in 0..3 {
            let r = rho.values()[i];
            let expected = c1.get(i, c) + r * (c2.get(i, c) - c1.get(i, c));
            worst = worst.max((ca.get(i, c) - expected).abs());
        }
    }
    ensure(worst < 1e-10, format!("component identity {worst:e}"))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, format!("took {secs:.1} s"))?;
    Ok(format!(
        "{n} vertices, round trip {round_trip:.1e}, Parseval {parseval:.1e}, component {worst:.1e}, {secs:.1} s"
    ))
}

fn eigensolver() -> Outcome {
    let path3 = CsrMatrix::from_triplets(
        3,
        3,
        vec![(0, 0, 1.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 2.0), (1, 2, -1.0), (2, 1, -1.0), (2, 2, 1.0)],
    );
    for solver in [EigenSolver::Dense, EigenSolver::Lanczos] {
        let opts = EigenOptions {
            solver,
            ..EigenOptions::default()
        };
        let b = eigendecompose_with(&path3, 3, &opts).map_err(|e| e.to_string())?;
        for (got, want) in b.eigenvalues().iter().zip([0.0, 1.0, 3.0]) {
            ensure((got - want).abs() < 1e-10, format!("{solver:?}: eigenvalue {got} vs {want}"))?;
        }
    }
    let t = template(10);
    let lap = build_laplacian(t.topology());
    let mut residuals = Vec::new();
    for solver in [EigenSolver::Dense, EigenSolver::Lanczos] {
        let opts = EigenOptions {
            solver,
            ..EigenOptions::default()
        };
        let b = eigendecompose_with(&lap, 100, &opts).map_err(|e| e.to_string())?;
        let r = b.orthonormality_residual();
        ensure(r < 1e-8, format!("{solver:?}: orthonormality residual {r:e}"))?;
        residuals.push(format!("{solver:?} {r:.1e}"));
    }
    Ok(format!("path-3 spectrum exact; k=100 orthonormality {}", residuals.join(", ")))
}

fn random_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn weighted_sum(g: &mut Graph, y: Var, rng_seed: u64) -> DiffResult<Var> {
    let (r, c) = g.value(y).shape();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let w = g.constant(random_tensor(r, c, &mut rng, -1.0, 1.0));
    let p = g.mul(y, w)?;
    g.sum(p)
}

type Primitive = fn(&mut Graph, &[Var]) -> DiffResult<Var>;

/// Every graph operation, applied to inputs `[a (3×4), b (3×4), m (4×2), row (1×4), pos (3×4)]`.
fn primitives() -> Vec<(&'static str, Primitive)> {
    vec![
        ("matmul", |g, v| g.matmul(v[0], v[2])),
        ("add", |g, v| g.add(v[0], v[1])),
        ("add_row", |g, v| g.add_row(v[0], v[3])),
        ("sub", |g, v| g.sub(v[0], v[1])),
        ("mul", |g, v| g.mul(v[0], v[1])),
        ("scale", |g, v| g.scale(v[0], -1.7)),
        ("add_scalar", |g, v| g.add_scalar(v[0], 0.3)),
        ("concat_rows", |g, v| g.concat(&[v[0], v[1]], Axis::Rows)),
        ("concat_cols", |g, v| g.concat(&[v[0], v[1], v[0]], Axis::Cols)),
        ("gather_rows", |g, v| g.gather_rows(v[0], Arc::from(vec![2, 0, 2, 1]))),
        ("gather_blocks", |g, v| g.gather_blocks(v[0], Arc::from(vec![1, 0, 2, 2, 0, 1]), 3)),
        ("sparse_rows", |g, v| {
            let s = Arc::new(CsrMatrix::from_triplets(2, 3, vec![(0, 0, 0.5), (0, 2, -1.5), (1, 1, 2.0)]));
            g.sparse_rows(v[0], s)
        }),
        ("reshape", |g, v| g.reshape(v[0], 2, 6)),
        ("elu", |g, v| g.elu(v[0])),
        ("relu", |g, v| g.relu(v[0])),
        ("exp", |g, v| g.exp(v[0])),
        ("log", |g, v| g.log(v[4])),
        ("square", |g, v| g.square(v[0])),
        ("sqrt", |g, v| g.sqrt(v[4])),
        ("sum", |g, v| g.sum(v[0])),
        ("mean", |g, v| g.mean(v[0])),
        ("mean_rows", |g, v| g.mean_rows(v[0])),
    ]
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let opts = GradCheckOptions::default();
    let mut worst_primitive: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [
            random_tensor(3, 4, &mut rng, -2.0, 2.0),
            random_tensor(3, 4, &mut rng, -2.0, 2.0),
            random_tensor(4, 2, &mut rng, -2.0, 2.0),
            random_tensor(1, 4, &mut rng, -2.0, 2.0),
            random_tensor(3, 4, &mut rng, 0.2, 3.0),
        ];
        for (name, op) in primitives() {
            let err = grad_check(
                |g, v| {
                    let y = op(g, v)?;
                    weighted_sum(g, y, seed ^ 0x5eed)
                },
                &inputs,
                opts,
            )
            .map_err(|e| format!("{name}: {e}"))?;
            ensure(err < 1e-4, format!("{name}: relative error {err:e}"))?;
            worst_primitive = worst_primitive.max(err);
        }
    }

    // micro hierarchy: 162 vertices, two levels
    let meshes = cohort_meshes(4, 2, 21);
    let t = template(4);
    let config = ModelConfig {
        encoder_features: vec![4, 6],
        decoder_features: vec![6, 4],
        ..ModelConfig::default()
    };
    let hierarchy = MeshHierarchy::build(&t, 2, 4, 9).unwrap();
    let model = SdVae::new(
        t.topology().clone(),
        Arc::new(hierarchy),
        config,
        Normalizer::fit(&meshes).unwrap(),
        8,
    )
    .unwrap();
    let training = TrainingConfig {
        beta: 0.05,
        ..TrainingConfig::default()
    };
    let b = 2;
    let swapped = 2;
    let laplacian = Arc::new(build_laplacian(&model.topology));
    let offset = Tensor::new(b * b * model.vertex_count(), 3, model.normalizer.offset().repeat(b * b)).unwrap();
    let batch = make_swap_batch(&[("a", &meshes[0]), ("b", &meshes[5])], swapped).unwrap();
    let grid: Vec<&CorrespondedMesh> = batch.grid.iter().collect();
    let x = model.stack(&grid).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let eps = Tensor::new(
        b * b,
        LATENT_DIM,
        (0..b * b * LATENT_DIM).map(|_| rng.sample(StandardNormal)).collect(),
    )
    .unwrap();
    let loss_err = grad_check(
        |g, p| {
            let xv = g.constant(x.clone());
            let l = total_loss(g, &model, p, xv, eps.clone(), b, swapped, &training, &laplacian, &offset).map_err(
                |e| match e {
                    SdVaeError::Diff(d) => d,
                    other => panic!("{other}"),
                },
            )?;
            Ok(l.total)
        },
        &model.params,
        GradCheckOptions {
            max_coords: Some(40),
            seed: 4,
            ..GradCheckOptions::default()
        },
    )
    .map_err(|e| e.to_string())?;
    ensure(loss_err < 1e-4, format!("total loss relative error {loss_err:e}"))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 120.0, format!("took {secs:.0} s"))?;
    Ok(format!(
        "{} primitives x 20 draws max {worst_primitive:.1e}; total loss ({} vertices, {} tensors) {loss_err:.1e}; {secs:.1} s",
        primitives().len(),
        model.vertex_count(),
        model.params.len()
    ))
}

fn swap_invariants() -> Outcome {
    let meshes = cohort_meshes(4, 2, 31);
    let labels = meshes[0].topology().labels().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let mut checked = 0;
    for _ in 0..30 {
        let b = rng.random_range(2..=4);
        let picked = sample(&mut rng, meshes.len(), b).into_vec();
        let subjects: Vec<(&str, &CorrespondedMesh)> = picked.iter().map(|&i| ("s", &meshes[i])).collect();
        for k in 0..ATTRIBUTE_COUNT {
            let batch = make_swap_batch(&subjects, k).unwrap();
            for r in 0..b {
                for c in 0..b {
                    let cell = batch.cell(r, c).positions();
                    for (v, p) in cell.iter().enumerate() {
                        let owner = if labels[v] == k { c } else { r };
                        ensure(
                            *p == subjects[owner].1.positions()[v],
                            format!("B={b} k={k} cell ({r},{c}) vertex {v}"),
                        )?;
                    }
                }
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} grids, B in 2..=4, every k"))
}

fn consistency_closed_forms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for b in 2..=4 {
        let z = LatentVector::new((0..LATENT_DIM).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
        let grid = vec![z; b * b];
        for k in 0..ATTRIBUTE_COUNT {
            for (eta1, eta2) in [(0.5, 0.5), (0.25, 0.75)] {
                let l = loss_latent_consistency(&grid, k, eta1, eta2, ConsistencyNorm::Squared).unwrap();
                let want = eta1 + 14.0 * eta2;
                ensure(l == want, format!("constant grid B={b} k={k}: {l} != {want}"))?;
            }
            let mut ideal = Vec::new();
            for r in 0..b {
                for c in 0..b {
                    let mut z = LatentVector::zeros();
                    for a in 0..ATTRIBUTE_COUNT {
                        let owner = if a == k { c } else { r };
                        z.subset_mut(a).iter_mut().for_each(|v| *v = owner as f64);
                    }
                    ideal.push(z);
                }
            }
            let l = loss_latent_consistency(&ideal, k, 0.5, 0.5, ConsistencyNorm::Squared).unwrap();
            ensure(l == 0.0, format!("ideal grid B={b} k={k}: {l}"))?;
        }
    }
    Ok("constant grid = eta1 + 14 eta2 and ideal grid = 0, exactly, B in 2..=4".into())
}

fn kl_closed_form() -> Outcome {
    let kl = loss_kl(&[1.0], &[0.0]).map_err(|e| e.to_string())?;
    ensure((kl - 0.5).abs() < 1e-12, format!("KL {kl}"))?;
    Ok(format!("KL(mu=1, sigma=1) = {kl}"))
}

struct Arm {
    summary: AnalysisSummary,
    eval: EvalMetrics,
}

fn run_arm(config: &RunConfig, out: &Path) -> Result<Arm, String> {
    let layout = Layout::new(out);
    let step = |r: anyhow::Result<()>| r.map_err(|e| format!("{e:#}"));
    step(stages::synth(config, &layout))?;
    step(stages::split(config, &layout))?;
    step(stages::augment(config, &layout))?;
    step(stages::train(config, &layout))?;
    let eval = stages::eval(config, &layout, false).map_err(|e| format!("{e:#}"))?;
    let summary = stages::analyze(config, &layout).map_err(|e| format!("{e:#}"))?;
    Ok(Arm { summary, eval })
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut config = RunConfig::load(&workspace().join("configs/desk.toml")).map_err(|e| format!("{e:#}"))?;
    config.augment.enabled = true;
    let augmented = run_arm(&config, &dir.path().join("augmented"))?;
    config.augment.enabled = false;
    let unbalanced = run_arm(&config, &dir.path().join("unbalanced"))?;
    let secs = start.elapsed().as_secs_f64();

    let orbits = 2;
    let a = augmented.summary.whole.accuracy;
    let f1_aug = augmented.summary.whole.macro_f1;
    let f1_unb = unbalanced.summary.whole.macro_f1;
    let dis = augmented.eval.disentanglement.argmax_fraction;
    let region = augmented.summary.attributes[orbits].accuracy;
    let dominance = &augmented.eval.disentanglement.region_dominance;
    let weakest = dominance.iter().copied().fold(f64::INFINITY, f64::min);
    let detail = format!(
        "(a) accuracy {a:.3} (b) macro-F1 {f1_unb:.3} unbalanced vs {f1_aug:.3} augmented \
         (c) argmax fraction {dis:.3} {:?} (d) orbit-scope accuracy {region:.3}; \
         weakest region dominance {weakest:.2}; {:.1} min",
        augmented.eval.disentanglement.subset_fractions,
        secs / 60.0
    );
    let mut failed = Vec::new();
    if a < 0.95 {
        failed.push("a");
    }
    if f1_unb >= f1_aug {
        failed.push("b");
    }
    if dis < 0.8 {
        failed.push("c");
    }
    if region < 0.25 + 0.40 {
        failed.push("d");
    }
    if secs > 30.0 * 60.0 {
        failed.push("runtime");
    }
    if failed.is_empty() {
        Ok(detail)
    } else {
        Err(format!("failed {}: {detail}", failed.join(",")))
    }
}

fn random_latent(rng: &mut ChaCha8Rng, scale: f64) -> LatentVector {
    LatentVector::new((0..LATENT_DIM).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

fn planning_geometry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let healthy_label = ClassLabel::healthy();
    for instance in 0..100 {
        let cloud: Vec<LatentVector> = (0..40).map(|_| random_latent(&mut rng, 1.0)).collect();
        let labels = vec![healthy_label.clone(); cloud.len()];
        let reference = healthy_reference(&cloud, &labels).unwrap();
        let z_p = random_latent(&mut rng, 3.0);
        let t = targets(&reference, &z_p).unwrap();
        let mu = t.mean.values();
        for (k, z) in [(1.0, &t.sigma1), (2.0, &t.sigma2), (3.0, &t.sigma3)] {
            let offset: Vec<f64> = z.values().iter().zip(mu).map(|(a, b)| a - b).collect();
            let along: f64 = offset.iter().zip(&t.direction).map(|(a, u)| a * u).sum();
            let off_line = norm(offset.iter().zip(&t.direction).map(|(a, u)| a - along * u));
            ensure(off_line < 1e-10, format!("instance {instance}: {k} sigma target off the line by {off_line:e}"))?;
            ensure(
                (along - k * t.sigma_dir).abs() < 1e-10,
                format!("instance {instance}: spacing {along} vs {}", k * t.sigma_dir),
            )?;
        }

        // random nested procedures P ⊂ Q
        let size = rng.random_range(1..ATTRIBUTE_COUNT);
        let q_attrs = sample(&mut rng, ATTRIBUTE_COUNT, size + 1).into_vec();
        let p_attrs = q_attrs[..size].to_vec();
        let p = Procedure::new("p", p_attrs).unwrap();
        let q = Procedure::new("q", q_attrs).unwrap();
        let dp = procedure_distance(&p, &z_p, &t.mean, &t.mean);
        let dq = procedure_distance(&q, &z_p, &t.mean, &t.mean);
        ensure(dq <= dp, format!("instance {instance}: adding an attribute raised d_mu {dp} -> {dq}"))?;

        let whole = Procedure::whole_head();
        let rows = rank_procedures(std::slice::from_ref(&whole), &z_p, &t);
        ensure(rows[0].d_mu == 0.0, format!("instance {instance}: whole-head d_mu {}", rows[0].d_mu))?;

        let session = PlanningSession::new("p", z_p.clone(), p, Target::Mean);
        let path = session.trajectory_latents(&t.mean, 11).unwrap();
        let d: Vec<f64> = path
            .iter()
            .map(|(_, z)| norm(z.values().iter().zip(mu).map(|(a, b)| a - b)))
            .collect();
        ensure(
            d.windows(2).all(|w| w[1] <= w[0] + 1e-12),
            format!("instance {instance}: d_mu increases along the trajectory {d:?}"),
        )?;
    }
    Ok("100 instances: collinear targets, k sigma spacing, d_mu monotone, whole head reaches the mean".into())
}

/// Gaussian-density argmax with explicit 2×2 algebra.
fn brute_force_label(points: &[[f64; 2]], labels: &[usize], classes: usize, z: [f64; 2]) -> usize {
    let n = points.len() as f64;
    let mut best = (0, f64::NEG_INFINITY);
    for c in 0..classes {
        let members: Vec<Vector2<f64>> = points
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == c)
            .map(|(p, _)| Vector2::new(p[0], p[1]))
            .collect();
        let nc = members.len() as f64;
        let mean = members.iter().sum::<Vector2<f64>>() / nc;
        let cov = members
            .iter()
            .map(|x| (x - mean) * (x - mean).transpose())
            .sum::<Matrix2<f64>>()
            / (nc - 1.0);
        let d = Vector2::new(z[0], z[1]) - mean;
        let maha = (d.transpose() * cov.try_inverse().unwrap() * d)[0];
        let score = (nc / n).ln() - 0.5 * (maha + cov.determinant().ln() + 2.0 * (2.0 * std::f64::consts::PI).ln());
        if score > best.1 {
            best = (c, score);
        }
    }
    best.0
}

fn qda_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut queries = 0;
    for instance in 0..1000 {
        let classes = rng.random_range(2..=4);
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for c in 0..classes {
            let centre = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
            let a = [[rng.random_range(0.3..2.0), rng.random_range(-1.0..1.0)], [0.0, rng.random_range(0.3..2.0)]];
            for _ in 0..rng.random_range(5..20) {
                let e: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
                points.push([
                    centre[0] + a[0][0] * e[0] + a[0][1] * e[1],
                    centre[1] + a[1][0] * e[0] + a[1][1] * e[1],
                ]);
                labels.push(c);
            }
        }
        let names: Vec<ClassLabel> = labels.iter().map(|c| ClassLabel::new(format!("c{c}"))).collect();
        let samples: Vec<Vec<f64>> = points.iter().map(|p| p.to_vec()).collect();
        let model = fit_qda(&samples, &names, 1e-9).map_err(|e| format!("instance {instance}: {e}"))?;
        for _ in 0..10 {
            let z = [rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0)];
            let want = format!("c{}", brute_force_label(&points, &labels, classes, z));
            let got = model.classify(&z).unwrap().label;
            ensure(got.as_str() == want, format!("instance {instance}: {got} vs {want} at {z:?}"))?;
            queries += 1;
        }
    }
    Ok(format!("1000 instances, {queries} queries, all labels equal"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = workspace().join("configs/micro.toml");
    let mut outs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_cranio"))
            .arg("--config")
            .arg(&config)
            .arg("--seed")
            .arg("17")
            .arg("--out")
            .arg(&out)
            .arg("run-all")
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), String::from_utf8_lossy(&status.stderr).into_owned())?;
        outs.push(out);
    }
    let files = list_files(&outs[0]);
    ensure(files == list_files(&outs[1]), "different file sets")?;
    for f in &files {
        let a = std::fs::read(outs[0].join(f)).unwrap();
        let b = std::fs::read(outs[1].join(f)).unwrap();
        ensure(a == b, format!("{} differs", f.display()))?;
    }
    Ok(format!("{} files byte-identical across two runs", files.len()))
}

fn list_files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("spectral identities", spectral_identities),
        ("eigensolver", eigensolver),
        ("gradient suite", gradient_suite),
        ("swap-batch invariants", swap_invariants),
        ("consistency-loss closed forms", consistency_closed_forms),
        ("KL closed form", kl_closed_form),
        ("end-to-end synthetic reproduction", end_to_end),
        ("planning geometry", planning_geometry),
        ("QDA oracle equivalence", qda_oracle),
        ("determinism", determinism),
    ];
    let only = std::env::var("CRANIO_ACCEPTANCE_ONLY").ok();
    let mut results = BTreeMap::new();
    for (name, check) in criteria {
        if only.as_deref().is_some_and(|o| !name.contains(o)) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let took = Duration::from_secs_f64(start.elapsed().as_secs_f64());
        match &outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{took:.1?}]"),
            Err(detail) => println!("FAIL {name}: {detail} [{took:.1?}]"),
        }
        results.insert(name, outcome.is_ok());
    }
    let failed = results.values().filter(|ok| !**ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
