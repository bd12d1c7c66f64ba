//! One function per subcommand. Every stage reads its inputs from, and writes
//! its outputs to, the run's output directory.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use cranio_core::analysis::{
    confusion_matrix, disentanglement_matrix, iso_contours, per_attribute_models, ConfusionMatrix, Scope,
};
use cranio_core::cohort::{
    apply_augmentation, generate_synthetic_cohort, plan_augmentation, stratified_split, ClassLabel, Manifest,
    Provenance, Split, SubjectRecord,
};
use cranio_core::mesh::{
    canonical_attribute_names, load_mesh, read_segmentation, write_mesh, write_segmentation, CorrespondedMesh,
    MeshTopology,
};
use cranio_core::planning::{
    builtin_procedures, healthy_reference, interpolate, rank_procedures, targets, write_displacement,
    write_trajectory_csv, PlanningSession, ProcedureRegistry,
};
use cranio_core::sdvae::{
    load_checkpoint, metric_diversity, metric_reconstruction_error, save_checkpoint, train as train_model,
    IdentityStub, LatentVector, MeanStd, MeshHierarchy, MeshModel, Normalizer, RngState, SdVae, TrainData,
};
use cranio_core::spectral::{export_spectra, LaplacianEigenbasis, SpectrumSubject};
use cranio_core::LATENT_DIM;
use cranio_service::{AnalysisArtifact, AnalysisSubject, ModelMetrics, Store};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::svg::{embedding_svg, heatmap_svg, ScatterPoint};

pub const DATASET_ID: &str = "cohort";
pub const MODEL_ID: &str = "model";
pub const ANALYSIS_ID: &str = "analysis";

/// File locations inside a run's output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub out: PathBuf,
}

impl Layout {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self { out: out.into() }
    }

    pub fn cohort(&self) -> PathBuf {
        self.out.join("cohort")
    }
    pub fn manifest(&self) -> PathBuf {
        self.cohort().join("manifest.csv")
    }
    pub fn spectral(&self) -> PathBuf {
        self.out.join("spectral")
    }
    pub fn model(&self) -> PathBuf {
        self.out.join("model")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.model().join("checkpoint.sdvae")
    }
    pub fn eval(&self) -> PathBuf {
        self.out.join("eval")
    }
    pub fn analysis(&self) -> PathBuf {
        self.out.join("analysis")
    }
    pub fn analysis_artifact(&self) -> PathBuf {
        self.analysis().join("analysis.json")
    }
    pub fn plan(&self) -> PathBuf {
        self.out.join("plan")
    }
}

fn require(path: &Path, stage: &str) -> Result<()> {
    if !path.exists() {
        bail!("missing artifact {}; run `cranio {stage}` first", path.display());
    }
    Ok(())
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, stage: &str) -> Result<T> {
    require(path, stage)?;
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn counts(map: &BTreeMap<ClassLabel, usize>) -> String {
    map.iter().map(|(c, n)| format!("{c} {n}")).collect::<Vec<_>>().join(", ")
}

fn progress(message: impl AsRef<str>) {
    eprintln!("{}", message.as_ref());
}

/// Working manifest plus the shared topology.
pub struct Dataset {
    pub manifest: Manifest,
    pub topology: Arc<MeshTopology>,
    pub template: CorrespondedMesh,
    base: PathBuf,
}

impl Dataset {
    pub fn mesh_path(&self, record: &SubjectRecord) -> PathBuf {
        let p = Path::new(&record.mesh_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn mesh(&self, record: &SubjectRecord) -> Result<CorrespondedMesh> {
        let path = self.mesh_path(record);
        load_mesh(&path, &self.topology).with_context(|| format!("loading {}", path.display()))
    }

    pub fn records_in(&self, split: Split) -> Vec<&SubjectRecord> {
        self.manifest.in_split(split)
    }

    pub fn meshes(&self, records: &[&SubjectRecord]) -> Result<Vec<CorrespondedMesh>> {
        records.iter().map(|r| self.mesh(r)).collect()
    }
}

fn topology_paths(config: &RunConfig, layout: &Layout) -> (PathBuf, PathBuf) {
    match (&config.dataset.template, &config.dataset.segmentation) {
        (Some(t), Some(s)) => (t.clone(), s.clone()),
        _ => (layout.cohort().join("template.obj"), layout.cohort().join("segmentation.txt")),
    }
}

fn load_topology(config: &RunConfig, layout: &Layout) -> Result<(Arc<MeshTopology>, CorrespondedMesh)> {
    let (template_path, seg_path) = topology_paths(config, layout);
    require(&template_path, "synth")?;
    require(&seg_path, "synth")?;
    let (names, labels) = read_segmentation(&seg_path)?;
    let file = std::io::BufReader::new(fs::File::open(&template_path)?);
    let raw = cranio_core::mesh::read_obj(file)
        .with_context(|| format!("parsing {}", template_path.display()))?;
    let topology = Arc::new(MeshTopology::new(raw.positions.len(), raw.faces, labels, names)?);
    let template = CorrespondedMesh::new(topology.clone(), raw.positions)?;
    Ok((topology, template))
}

/// The working manifest, or the configured external one before `split`.
pub fn load_dataset(config: &RunConfig, layout: &Layout) -> Result<Dataset> {
    let (topology, template) = load_topology(config, layout)?;
    let working = layout.manifest();
    let (path, base) = if working.exists() {
        (working, layout.cohort())
    } else if let Some(m) = &config.dataset.manifest {
        let base = m.parent().map(Path::to_path_buf).unwrap_or_default();
        (m.clone(), base)
    } else {
        bail!("missing artifact {}; run `cranio synth` first", working.display());
    };
    let manifest = Manifest::read_csv(fs::File::open(&path)?).with_context(|| format!("reading {}", path.display()))?;
    Ok(Dataset {
        manifest,
        topology,
        template,
        base,
    })
}

fn write_manifest(layout: &Layout, manifest: &Manifest) -> Result<()> {
    create_dir(&layout.cohort())?;
    let file = BufWriter::new(fs::File::create(layout.manifest())?);
    manifest.write_csv(file)?;
    Ok(())
}

pub fn synth(config: &RunConfig, layout: &Layout) -> Result<()> {
    if config.dataset.manifest.is_some() {
        bail!("an external dataset is configured; synth does not apply");
    }
    let cohort = generate_synthetic_cohort(&config.synth.spec, &config.synth.counts, config.seeds().synth)?;
    let dir = layout.cohort();
    create_dir(&dir.join("meshes"))?;
    let t = &cohort.template;
    write_mesh(&dir.join("template.obj"), &CorrespondedMesh::new(t.topology.clone(), t.rest.clone())?)?;
    write_segmentation(&dir.join("segmentation.txt"), &t.topology)?;
    for (r, m) in cohort.records.iter().zip(&cohort.meshes) {
        write_mesh(&dir.join(&r.mesh_path), m)?;
    }
    cohort.write_factors_csv(BufWriter::new(fs::File::create(dir.join("factors.csv"))?))?;
    write_manifest(layout, &Manifest::new(cohort.records.clone()))?;
    progress(format!("synth: {} subjects, {} vertices", cohort.records.len(), t.rest.len()));
    Ok(())
}

/// Assigns splits to the non-augmented subjects and drops earlier
/// augmentations.
pub fn split(config: &RunConfig, layout: &Layout) -> Result<()> {
    let ds = load_dataset(config, layout)?;
    let external = !layout.manifest().exists();
    let mut records: Vec<SubjectRecord> = ds
        .manifest
        .records
        .iter()
        .filter(|r| r.provenance != Provenance::Augmented)
        .cloned()
        .collect();
    if external {
        // keep mesh paths valid from the new manifest location
        for r in &mut records {
            let p = ds.mesh_path(r);
            r.mesh_path = fs::canonicalize(&p)
                .with_context(|| format!("resolving {}", p.display()))?
                .to_string_lossy()
                .into_owned();
        }
    }
    let mut manifest = Manifest::new(records);
    manifest.splits = stratified_split(&manifest.records, config.split.ratios, config.seeds().split)?;
    write_manifest(layout, &manifest)?;
    for split in [Split::Train, Split::Val, Split::Test] {
        progress(format!("split: {split} {}", counts(&manifest.class_counts(Some(split)))));
    }
    Ok(())
}

/// Shared eigenbasis cache. Both consumers request the larger size so the
/// decomposition runs once per run.
fn basis(config: &RunConfig, layout: &Layout, topology: &MeshTopology, k: usize) -> Result<LaplacianEigenbasis> {
    create_dir(&layout.spectral())?;
    let shared = config.augment.basis_k.max(config.spectra.components);
    let cap = topology.vertex_count().saturating_sub(1);
    let basis = LaplacianEigenbasis::cached(&layout.spectral().join("basis.bin"), topology, shared.min(cap))?;
    Ok(basis.truncated(k))
}

/// Balances training classes by spectral interpolation.
pub fn augment(config: &RunConfig, layout: &Layout) -> Result<()> {
    require(&layout.manifest(), "split")?;
    let ds = load_dataset(config, layout)?;
    if ds.manifest.splits.is_empty() {
        bail!("manifest has no splits; run `cranio split` first");
    }
    let mut manifest = ds.manifest.clone();
    let dropped: Vec<String> = manifest
        .records
        .iter()
        .filter(|r| r.provenance == Provenance::Augmented)
        .map(|r| r.id.clone())
        .collect();
    manifest.records.retain(|r| r.provenance != Provenance::Augmented);
    for id in &dropped {
        manifest.splits.remove(id);
    }
    let plan_path = layout.cohort().join("augmentation.csv");
    let mut plan_csv = csv::Writer::from_writer(BufWriter::new(fs::File::create(&plan_path)?));
    plan_csv.write_record(["id", "class", "parent1", "parent2", "seed"])?;
    if !config.augment.enabled {
        plan_csv.flush()?;
        write_manifest(layout, &manifest)?;
        progress("augment: disabled");
        return Ok(());
    }
    let train_records: Vec<SubjectRecord> = manifest
        .records
        .iter()
        .filter(|r| manifest.splits.get(&r.id) == Some(&Split::Train))
        .cloned()
        .collect();
    let train: Vec<&SubjectRecord> = train_records.iter().collect();
    let mut per_class: BTreeMap<&ClassLabel, usize> = BTreeMap::new();
    for r in &train {
        *per_class.entry(&r.class_label).or_default() += 1;
    }
    let target = config
        .augment
        .target
        .unwrap_or_else(|| per_class.values().copied().max().unwrap_or(0));
    let plan = plan_augmentation(&train, target, config.seeds().augment)?;
    let basis = basis(config, layout, &ds.topology, config.augment.basis_k)?;
    let mut parents: HashMap<String, CorrespondedMesh> = HashMap::new();
    for pair in &plan {
        for id in [&pair.parent1, &pair.parent2] {
            if !parents.contains_key(id) {
                let record = train.iter().find(|r| &r.id == id).expect("planned from train");
                parents.insert(id.clone(), ds.mesh(record)?);
            }
        }
    }
    let made = apply_augmentation(&plan, &train_records, &parents, &basis)?;
    create_dir(&layout.cohort().join("meshes"))?;
    for ((record, mesh), pair) in made.into_iter().zip(&plan) {
        write_mesh(&layout.cohort().join(&record.mesh_path), &mesh)?;
        plan_csv.write_record([
            record.id.as_str(),
            pair.class_label.as_str(),
            pair.parent1.as_str(),
            pair.parent2.as_str(),
            &pair.seed.to_string(),
        ])?;
        manifest.splits.insert(record.id.clone(), Split::Train);
        manifest.records.push(record);
    }
    plan_csv.flush()?;
    write_manifest(layout, &manifest)?;
    progress(format!(
        "augment: {} new meshes, training counts {}",
        plan.len(),
        counts(&manifest.class_counts(Some(Split::Train)))
    ));
    Ok(())
}

/// Spectral coefficients of every non-augmented subject.
pub fn spectra(config: &RunConfig, layout: &Layout) -> Result<()> {
    let ds = load_dataset(config, layout)?;
    let basis = basis(config, layout, &ds.topology, config.spectra.components)?;
    let records: Vec<&SubjectRecord> = ds
        .manifest
        .records
        .iter()
        .filter(|r| r.provenance != Provenance::Augmented)
        .collect();
    let meshes = ds.meshes(&records)?;
    let labels: Vec<String> = records.iter().map(|r| r.class_label.to_string()).collect();
    let sexes: Vec<String> = records.iter().map(|r| r.sex.to_string()).collect();
    let subjects: Vec<SpectrumSubject> = records
        .iter()
        .zip(&meshes)
        .enumerate()
        .map(|(i, (r, m))| SpectrumSubject {
            id: &r.id,
            class_label: &labels[i],
            age: r.age,
            sex: &sexes[i],
            mesh: m,
        })
        .collect();
    let path = layout.spectral().join("spectra.csv");
    let rows = export_spectra(
        BufWriter::new(fs::File::create(&path)?),
        &subjects,
        &basis,
        config.spectra.components,
    )?;
    progress(format!("spectra: {rows} rows"));
    Ok(())
}

pub fn train(config: &RunConfig, layout: &Layout) -> Result<()> {
    require(&layout.manifest(), "split")?;
    let ds = load_dataset(config, layout)?;
    let train_records = ds.records_in(Split::Train);
    if train_records.is_empty() {
        bail!("no training subjects; run `cranio split` first");
    }
    let train_meshes = ds.meshes(&train_records)?;
    let val_meshes = ds.meshes(&ds.records_in(Split::Val))?;
    let hierarchy = MeshHierarchy::build(
        &ds.template,
        config.model.levels(),
        config.model.sampling_factor,
        config.model.spiral_len,
    )?;
    let seeds = config.seeds();
    let model = SdVae::new(
        ds.topology.clone(),
        Arc::new(hierarchy),
        config.model.clone(),
        Normalizer::fit(&train_meshes)?,
        seeds.init,
    )?;
    let mut training = config.training.clone();
    training.seed = seeds.training;
    let data = TrainData {
        train: train_records.iter().map(|r| r.id.as_str()).zip(&train_meshes).collect(),
        val: val_meshes.iter().collect(),
    };
    progress(format!(
        "train: {} subjects, {} parameters",
        train_meshes.len(),
        model.parameter_count()
    ));
    let outcome = train_model(model, &data, &training, &mut |e| {
        progress(format!(
            "epoch {:>4}  total {:.4}  rec {:.4}  kl {:.3}  cons {:.4}  val {}  ({:.1}s)",
            e.epoch,
            e.total,
            e.reconstruction,
            e.kl,
            e.consistency,
            e.val_reconstruction_mm.map_or("-".into(), |v| format!("{v:.3} mm")),
            e.seconds
        ))
    })?;
    create_dir(&layout.model())?;
    save_checkpoint(
        &layout.checkpoint(),
        &outcome.model,
        Some(&training),
        Some(&RngState::capture(&outcome.rng)),
    )?;
    // wall-clock seconds stay out so reruns are byte-identical
    outcome
        .log
        .write_csv(BufWriter::new(fs::File::create(layout.model().join("training_log.csv"))?))?;
    Ok(())
}

pub fn load_model(layout: &Layout) -> Result<SdVae> {
    require(&layout.checkpoint(), "train")?;
    Ok(load_checkpoint(&layout.checkpoint())
        .with_context(|| format!("reading {}", layout.checkpoint().display()))?
        .model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisentanglementSummary {
    pub argmax_fraction: f64,
    pub subset_fractions: Vec<f64>,
    /// Per region, the best subset's displacement there over its mean
    /// displacement elsewhere (capped at `f64::MAX`).
    pub region_dominance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub identity_stub: bool,
    pub reconstruction_mm: MeanStd,
    pub diversity_mm: f64,
    pub disentanglement: DisentanglementSummary,
}

/// Reconstruction error on the test split, diversity and the traversal
/// matrix.
pub fn eval(config: &RunConfig, layout: &Layout, identity_stub: bool) -> Result<EvalMetrics> {
    let ds = load_dataset(config, layout)?;
    let test = ds.meshes(&ds.records_in(Split::Test))?;
    if test.is_empty() {
        bail!("no test subjects; run `cranio split` first");
    }
    let model: Box<dyn MeshModel> = if identity_stub {
        Box::new(IdentityStub {
            template: ds.template.clone(),
        })
    } else {
        Box::new(load_model(layout)?)
    };
    let reconstruction_mm = metric_reconstruction_error(model.as_ref(), &test)?;
    let diversity_mm = metric_diversity(model.as_ref(), config.eval.diversity_samples, config.seeds().diversity)?;
    let baseline = match &config.eval.baseline {
        Some(b) => LatentVector::new(b.clone())?,
        None => LatentVector::zeros(),
    };
    let matrix = disentanglement_matrix(model.as_ref(), (config.eval.sweep[0], config.eval.sweep[1]), &baseline)?;
    let metrics = EvalMetrics {
        identity_stub,
        reconstruction_mm,
        diversity_mm,
        disentanglement: DisentanglementSummary {
            argmax_fraction: matrix.argmax_fraction(),
            subset_fractions: matrix.subset_fractions().to_vec(),
            region_dominance: matrix.region_dominance().iter().map(|r| r.min(f64::MAX)).collect(),
        },
    };
    create_dir(&layout.eval())?;
    let names = canonical_attribute_names();
    matrix.write_csv(BufWriter::new(fs::File::create(layout.eval().join("disentanglement.csv"))?), &names)?;
    let rows: Vec<Vec<f64>> = matrix.entries.iter().map(|r| r.to_vec()).collect();
    fs::write(
        layout.eval().join("disentanglement.svg"),
        heatmap_svg("mean displacement (mm) per latent variable and region", &rows, &names),
    )?;
    write_json(&layout.eval().join("metrics.json"), &metrics)?;
    progress(format!(
        "eval: reconstruction {:.3} ± {:.3} mm, diversity {:.3} mm, disentanglement {:.3}",
        metrics.reconstruction_mm.mean,
        metrics.reconstruction_mm.std,
        metrics.diversity_mm,
        metrics.disentanglement.argmax_fraction
    ));
    Ok(metrics)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeSummary {
    pub scope: String,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

impl ScopeSummary {
    fn of(scope: Scope, cm: &ConfusionMatrix) -> Self {
        Self {
            scope: scope.to_string(),
            accuracy: cm.accuracy(),
            macro_precision: cm.macro_precision(),
            macro_recall: cm.macro_recall(),
            macro_f1: cm.macro_f1(),
        }
    }
}

/// Held-out QDA performance per scope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub test_subjects: usize,
    pub whole: ScopeSummary,
    pub attributes: Vec<ScopeSummary>,
}

fn scopes() -> impl Iterator<Item = Scope> {
    std::iter::once(Scope::Whole).chain((0..cranio_core::mesh::ATTRIBUTE_COUNT).map(Scope::Attribute))
}

fn write_confusion(path: &Path, cm: &ConfusionMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["true\\predicted".to_string()];
    header.extend(cm.classes.iter().map(|c| c.to_string()));
    w.write_record(&header)?;
    for (c, row) in cm.classes.iter().zip(&cm.counts) {
        let mut rec = vec![c.to_string()];
        rec.extend(row.iter().map(|n| n.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Encodes every subject, fits LDA/QDA per scope on the training split and
/// scores the test split.
pub fn analyze(config: &RunConfig, layout: &Layout) -> Result<AnalysisSummary> {
    let ds = load_dataset(config, layout)?;
    let model = load_model(layout)?;
    let records: Vec<&SubjectRecord> = ds
        .manifest
        .records
        .iter()
        .filter(|r| ds.manifest.splits.contains_key(&r.id))
        .collect();
    let mut subjects = Vec::with_capacity(records.len());
    for chunk in records.chunks(64) {
        let latents = model.encode_means(&ds.meshes(chunk)?)?;
        for (r, z) in chunk.iter().zip(latents) {
            subjects.push(AnalysisSubject {
                id: r.id.clone(),
                class_label: r.class_label.clone(),
                split: ds.manifest.splits[&r.id],
                latent: z,
            });
        }
    }
    let pick = |split: Split| -> (Vec<&AnalysisSubject>, Vec<ClassLabel>) {
        let s: Vec<&AnalysisSubject> = subjects.iter().filter(|s| s.split == split).collect();
        let labels = s.iter().map(|x| x.class_label.clone()).collect();
        (s, labels)
    };
    let (train, train_labels) = pick(Split::Train);
    let (test, test_labels) = pick(Split::Test);
    let train_z: Vec<LatentVector> = train.iter().map(|s| s.latent.clone()).collect();
    let models = per_attribute_models(&train_z, &train_labels)
        .context("fitting discriminant models on the training latents")?;

    let dir = layout.analysis();
    create_dir(&dir)?;
    let names = canonical_attribute_names();
    let mut whole = None;
    let mut attributes = Vec::new();
    for scope in scopes() {
        let m = models.scope(scope).expect("all scopes fitted");
        let test_x: Vec<Vec<f64>> = test.iter().map(|s| scope.select(&s.latent)).collect();
        let cm = confusion_matrix(&m.qda, &test_x, &test_labels)?;
        write_confusion(&dir.join(format!("confusion_{scope}.csv")), &cm)?;
        let summary = ScopeSummary::of(scope, &cm);
        match scope {
            Scope::Whole => whole = Some(summary),
            Scope::Attribute(_) => attributes.push(summary),
        }

        let train_xy = m.lda.embed_all(&train.iter().map(|s| scope.select(&s.latent)).collect::<Vec<_>>())?;
        let test_xy = m.lda.embed_all(&test_x)?;
        let contours = iso_contours(&train_xy, &train_labels)?;
        write_json(&dir.join(format!("contours_{scope}.json")), &contours)?;
        let mut w = csv::Writer::from_path(dir.join(format!("embedding_{scope}.csv")))?;
        w.write_record(["subject", "class", "split", "x", "y"])?;
        for (s, xy) in train.iter().zip(&train_xy).chain(test.iter().zip(&test_xy)) {
            w.write_record([
                s.id.clone(),
                s.class_label.to_string(),
                s.split.to_string(),
                xy[0].to_string(),
                xy[1].to_string(),
            ])?;
        }
        w.flush()?;
        let points: Vec<ScatterPoint> = train
            .iter()
            .zip(&train_xy)
            .map(|(s, xy)| ScatterPoint {
                class: s.class_label.as_str(),
                xy: *xy,
            })
            .collect();
        let title = match scope {
            Scope::Whole => "whole latent".to_string(),
            Scope::Attribute(k) => names[k].clone(),
        };
        fs::write(dir.join(format!("embedding_{scope}.svg")), embedding_svg(&title, &points, &contours, None))?;
    }
    let summary = AnalysisSummary {
        test_subjects: test.len(),
        whole: whole.expect("whole scope first"),
        attributes,
    };
    write_json(&dir.join("summary.json"), &summary)?;

    let mut w = csv::Writer::from_path(dir.join("latents.csv"))?;
    let mut header = vec!["subject".to_string(), "class".into(), "split".into()];
    header.extend((0..LATENT_DIM).map(|i| format!("z{i}")));
    w.write_record(&header)?;
    for s in &subjects {
        let mut rec = vec![s.id.clone(), s.class_label.to_string(), s.split.to_string()];
        rec.extend(s.latent.values().iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    write_json(&layout.analysis_artifact(), &AnalysisArtifact { subjects, models })?;
    progress(format!(
        "analyze: whole-latent accuracy {:.3}, macro-F1 {:.3} on {} test subjects",
        summary.whole.accuracy, summary.whole.macro_f1, summary.test_subjects
    ));
    Ok(summary)
}

fn load_registry(config: &RunConfig) -> Result<ProcedureRegistry> {
    match &config.plan.registry {
        Some(path) => Ok(ProcedureRegistry::from_toml(&fs::read_to_string(path)?)?),
        None => Ok(builtin_procedures()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub patient: String,
    pub patient_class: ClassLabel,
    pub procedure: String,
    pub sigma_dir: f64,
    pub steps: Vec<PlanStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub t: f64,
    pub mean_displacement_mm: f64,
    pub max_displacement_mm: f64,
}

/// Ranks procedures for one patient and exports the chosen trajectory.
pub fn plan(config: &RunConfig, layout: &Layout) -> Result<PlanSummary> {
    let artifact: AnalysisArtifact = read_json(&layout.analysis_artifact(), "analyze")?;
    let model = load_model(layout)?;
    let registry = load_registry(config)?;
    let patient = match &config.plan.patient {
        Some(id) => artifact
            .subject(id)
            .ok_or_else(|| anyhow!("unknown patient {id}"))?,
        None => artifact
            .subjects
            .iter()
            .filter(|s| s.split == Split::Test && s.class_label != ClassLabel::healthy())
            .min_by(|a, b| a.id.cmp(&b.id))
            .ok_or_else(|| anyhow!("no non-healthy test subject to plan for"))?,
    };
    let (latents, labels): (Vec<LatentVector>, Vec<ClassLabel>) = artifact
        .training()
        .map(|s| (s.latent.clone(), s.class_label.clone()))
        .unzip();
    let reference = healthy_reference(&latents, &labels)?;
    let targets = targets(&reference, &patient.latent)?;
    let ranking = rank_procedures(registry.procedures(), &patient.latent, &targets);

    let dir = layout.plan();
    create_dir(&dir)?;
    let mut w = csv::Writer::from_path(dir.join("ranking.csv"))?;
    w.write_record(["procedure", "d_mu", "d_1sigma", "d_2sigma", "d_3sigma"])?;
    for r in &ranking {
        w.write_record([
            r.procedure.clone(),
            r.d_mu.to_string(),
            r.d_1sigma.to_string(),
            r.d_2sigma.to_string(),
            r.d_3sigma.to_string(),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("targets.csv"))?;
    let mut header = vec!["target".to_string()];
    header.extend((0..LATENT_DIM).map(|i| format!("z{i}")));
    w.write_record(&header)?;
    for (name, z) in [
        ("patient", &patient.latent),
        ("mean", &targets.mean),
        ("sigma1", &targets.sigma1),
        ("sigma2", &targets.sigma2),
        ("sigma3", &targets.sigma3),
    ] {
        let mut rec = vec![name.to_string()];
        rec.extend(z.values().iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let name = match &config.plan.procedure {
        Some(n) => n.clone(),
        None => ranking
            .first()
            .map(|r| r.procedure.clone())
            .ok_or_else(|| anyhow!("the procedure registry is empty"))?,
    };
    let procedure = registry
        .get(&name)
        .ok_or_else(|| anyhow!("unknown procedure {name}"))?
        .clone();
    let session = PlanningSession::new(patient.id.clone(), patient.latent.clone(), procedure, config.plan.target.clone());
    let path = interpolate(&session, &targets, &model, config.plan.steps)?;
    let latents: Vec<(f64, LatentVector)> = path.iter().map(|s| (s.t, s.latent.clone())).collect();
    write_trajectory_csv(BufWriter::new(fs::File::create(dir.join("trajectory.csv"))?), &latents)?;
    let mut steps = Vec::new();
    for (i, s) in path.iter().enumerate() {
        write_mesh(&dir.join(format!("step_{i}.obj")), &s.mesh)?;
        let mut f = BufWriter::new(fs::File::create(dir.join(format!("displacement_{i}.txt")))?);
        write_displacement(&mut f, &s.displacement)?;
        f.flush()?;
        steps.push(PlanStep {
            t: s.t,
            mean_displacement_mm: s.displacement.mean(),
            max_displacement_mm: s.displacement.max(),
        });
    }
    let summary = PlanSummary {
        patient: patient.id.clone(),
        patient_class: patient.class_label.clone(),
        procedure: name,
        sigma_dir: targets.sigma_dir,
        steps,
    };
    write_json(&dir.join("plan.json"), &summary)?;
    progress(format!(
        "plan: {} ({}) best {} with d_mu {:.3}",
        summary.patient,
        summary.patient_class,
        ranking[0].procedure,
        ranking[0].d_mu
    ));
    Ok(summary)
}

/// Imports the run's dataset, model and analysis into the service store.
pub fn register(config: &RunConfig, layout: &Layout) -> Result<Store> {
    let store = Store::open(config.service_root())?;
    let ds = load_dataset(config, layout)?;
    store.register_dataset(DATASET_ID, &ds.manifest, ds.topology.id())?;
    if layout.checkpoint().exists() {
        let mut metrics = ModelMetrics::default();
        let eval_path = layout.eval().join("metrics.json");
        if eval_path.exists() {
            let m: EvalMetrics = read_json(&eval_path, "eval")?;
            if !m.identity_stub {
                metrics.reconstruction_mm = Some(m.reconstruction_mm);
                metrics.diversity_mm = Some(m.diversity_mm);
            }
        }
        let summary_path = layout.analysis().join("summary.json");
        if summary_path.exists() {
            let s: AnalysisSummary = read_json(&summary_path, "analyze")?;
            metrics.accuracy = Some(s.whole.accuracy);
            metrics.macro_f1 = Some(s.whole.macro_f1);
        }
        store.register_model(MODEL_ID, DATASET_ID, &fs::read(layout.checkpoint())?, metrics)?;
        if layout.analysis_artifact().exists() {
            let artifact: AnalysisArtifact = read_json(&layout.analysis_artifact(), "analyze")?;
            store.register_analysis(ANALYSIS_ID, MODEL_ID, &artifact)?;
        }
    }
    Ok(store)
}

/// Every stage in order, ending with the service import.
pub fn run_all(config: &RunConfig, layout: &Layout) -> Result<()> {
    if config.dataset.manifest.is_none() {
        synth(config, layout)?;
    }
    split(config, layout)?;
    augment(config, layout)?;
    spectra(config, layout)?;
    train(config, layout)?;
    eval(config, layout, false)?;
    analyze(config, layout)?;
    plan(config, layout)?;
    register(config, layout)?;
    Ok(())
}
