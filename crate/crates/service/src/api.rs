use std::collections::{BTreeMap, HashMap};
use std::io::Cursor;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use cranio_core::analysis::{iso_contours, ClassDistributionSummary, Scope};
use cranio_core::cohort::{ClassLabel, Split, SubjectRecord};
use cranio_core::mesh::{canonical_attribute_names, read_obj, write_obj_string, CorrespondedMesh, ATTRIBUTE_COUNT};
use cranio_core::planning::{
    healthy_reference, interpolate, rank_procedures, targets, InterpolationTargets, PlanningSession, Procedure,
    ProcedureRegistry, ProcedureSpec, RankingRow, Target, DISPLACEMENT_CAP_MM,
};
use cranio_core::sdvae::{read_checkpoint, LatentVector, SdVae};
use serde::{Deserialize, Serialize};

use crate::glb::write_glb;
use crate::store::{AnalysisArtifact, ArtifactHash, DatasetEntry, Index, ModelEntry, ModelMetrics, SessionEntry, Store};
use crate::{Result, ServiceConfig, ServiceError};

/// Default trajectory length: the five-shape strip.
pub const DEFAULT_STEPS: usize = 5;
pub const MAX_STEPS: usize = 201;

type SessionSlot = Arc<tokio::sync::Mutex<SessionEntry>>;

struct Inner {
    store: Store,
    index: Index,
    procedures: tokio::sync::Mutex<ProcedureRegistry>,
    sessions: RwLock<BTreeMap<String, SessionSlot>>,
    next_session: Mutex<u64>,
    models: Mutex<HashMap<ArtifactHash, Arc<SdVae>>>,
    analyses: Mutex<HashMap<ArtifactHash, Arc<AnalysisArtifact>>>,
}

/// Shared handler state. Registered artifacts are read once at start-up;
/// sessions and procedures are written through to the store.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    pub fn open(store: Store) -> Result<Self> {
        let index = store.load_index()?;
        let procedures = store.load_procedures()?;
        let stored = store.load_sessions()?;
        let next = stored
            .iter()
            .filter_map(|s| s.id.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()))
            .max()
            .map_or(1, |n| n + 1);
        let sessions = stored
            .into_iter()
            .map(|s| (s.id.clone(), Arc::new(tokio::sync::Mutex::new(s))))
            .collect();
        Ok(Self {
            inner: Arc::new(Inner {
                store,
                index,
                procedures: tokio::sync::Mutex::new(procedures),
                sessions: RwLock::new(sessions),
                next_session: Mutex::new(next),
                models: Mutex::new(HashMap::new()),
                analyses: Mutex::new(HashMap::new()),
            }),
        })
    }

    fn dataset(&self, id: &str) -> Result<&DatasetEntry> {
        self.inner
            .index
            .dataset(id)
            .ok_or_else(|| ServiceError::NotFound(format!("dataset {id}")))
    }

    fn model_entry(&self, id: &str) -> Result<&ModelEntry> {
        self.inner
            .index
            .model(id)
            .ok_or_else(|| ServiceError::NotFound(format!("model {id}")))
    }

    fn model(&self, id: &str) -> Result<Arc<SdVae>> {
        let hash = self.model_entry(id)?.checkpoint.clone();
        if let Some(m) = self.inner.models.lock().expect("cache lock").get(&hash) {
            return Ok(m.clone());
        }
        let bytes = self.inner.store.get(&hash)?;
        let model = Arc::new(
            read_checkpoint(&bytes[..])
                .map_err(|e| ServiceError::Invalid(e.to_string()))?
                .model,
        );
        self.inner
            .models
            .lock()
            .expect("cache lock")
            .insert(hash, model.clone());
        Ok(model)
    }

    fn analysis(&self, id: &str) -> Result<(String, Arc<AnalysisArtifact>)> {
        let entry = self
            .inner
            .index
            .analysis(id)
            .ok_or_else(|| ServiceError::NotFound(format!("analysis {id}")))?;
        let hash = entry.artifact.clone();
        if let Some(a) = self.inner.analyses.lock().expect("cache lock").get(&hash) {
            return Ok((entry.model.clone(), a.clone()));
        }
        let artifact: Arc<AnalysisArtifact> = Arc::new(self.inner.store.get_json(&hash)?);
        self.inner
            .analyses
            .lock()
            .expect("cache lock")
            .insert(hash, artifact.clone());
        Ok((entry.model.clone(), artifact))
    }

    fn session_slot(&self, id: &str) -> Result<SessionSlot> {
        self.inner
            .sessions
            .read()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("session {id}")))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/datasets", get(list_datasets))
        .route("/datasets/{id}/subjects", get(dataset_subjects))
        .route("/models", get(list_models))
        .route("/models/{id}/metrics", get(model_metrics))
        .route("/models/{id}/encode", post(encode))
        .route("/analyses/{id}/embedding", get(embedding))
        .route("/procedures", get(list_procedures))
        .route("/procedures/{name}", put(put_procedure).delete(delete_procedure))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).patch(patch_session))
        .route("/sessions/{id}/trajectory", get(trajectory))
        .route("/sessions/{id}/ranking", get(ranking))
        .with_state(state)
}

/// Opens the store named by `config` and serves until the process ends.
pub async fn serve(config: &ServiceConfig) -> Result<()> {
    let state = AppState::open(Store::open(&config.root)?)?;
    let listener = tokio::net::TcpListener::bind(config.address()).await?;
    axum::serve(listener, router(state)).await?;
    Ok(())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> Result<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

fn unprocessable(e: impl ToString) -> ServiceError {
    ServiceError::Unprocessable(e.to_string())
}

async fn list_datasets(State(s): State<AppState>) -> Json<Vec<DatasetEntry>> {
    Json(s.inner.index.datasets.clone())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SubjectRow {
    #[serde(flatten)]
    pub record: SubjectRecord,
    pub split: Option<Split>,
}

async fn dataset_subjects(State(s): State<AppState>, Path(id): Path<String>) -> Result<Json<Vec<SubjectRow>>> {
    let entry = s.dataset(&id)?.clone();
    let store = s.inner.store.clone();
    let manifest = blocking(move || store.load_manifest(&entry)).await?;
    let rows = manifest
        .records
        .iter()
        .map(|r| SubjectRow {
            split: manifest.splits.get(&r.id).copied(),
            record: r.clone(),
        })
        .collect();
    Ok(Json(rows))
}

async fn list_models(State(s): State<AppState>) -> Json<Vec<ModelEntry>> {
    Json(s.inner.index.models.clone())
}

async fn model_metrics(State(s): State<AppState>, Path(id): Path<String>) -> Result<Json<ModelMetrics>> {
    Ok(Json(s.model_entry(&id)?.metrics.clone()))
}

#[derive(Debug, Deserialize)]
struct EncodeQuery {
    analysis: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EncodeResponse {
    pub mu: LatentVector,
    pub subsets: Vec<Vec<f64>>,
    /// Present when the model has an analysis.
    pub classification: Option<EncodedClassification>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EncodedClassification {
    pub analysis: String,
    pub label: ClassLabel,
    pub log_posteriors: BTreeMap<ClassLabel, f64>,
    /// Whole-latent LDA embedding.
    pub embedding: [f64; 2],
    /// Per attribute subset: QDA label and LDA embedding.
    pub attributes: Vec<AttributeClassification>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AttributeClassification {
    pub attribute: String,
    pub label: ClassLabel,
    pub embedding: [f64; 2],
}

fn classify(analysis_id: &str, artifact: &AnalysisArtifact, mu: &LatentVector) -> Result<EncodedClassification> {
    let internal = |e: cranio_core::analysis::AnalysisError| ServiceError::Internal(e.to_string());
    let whole = &artifact.models.whole;
    let z = Scope::Whole.select(mu);
    let c = whole.qda.classify(&z).map_err(internal)?;
    let names = canonical_attribute_names();
    let attributes = artifact
        .models
        .attributes
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let zk = Scope::Attribute(k).select(mu);
            Ok(AttributeClassification {
                attribute: names[k].clone(),
                label: m.qda.classify(&zk).map_err(internal)?.label,
                embedding: m.lda.embed(&zk).map_err(internal)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(EncodedClassification {
        analysis: analysis_id.to_string(),
        log_posteriors: whole.qda.classes.iter().cloned().zip(c.log_posteriors).collect(),
        label: c.label,
        embedding: whole.lda.embed(&z).map_err(internal)?,
        attributes,
    })
}

/// Body: an OBJ mesh in the model's vertex order and connectivity.
async fn encode(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EncodeQuery>,
    body: Bytes,
) -> Result<Json<EncodeResponse>> {
    let model = s.model(&id)?;
    let analysis = match q.analysis.as_deref().or(s.inner.index.analysis_for_model(&id).map(|a| a.id.as_str())) {
        Some(a) => {
            let (owner, artifact) = s.analysis(a)?;
            if owner != id {
                return Err(unprocessable(format!("analysis {a} belongs to model {owner}")));
            }
            Some((a.to_string(), artifact))
        }
        None => None,
    };
    blocking(move || {
        let raw = read_obj(Cursor::new(&body[..])).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let topology = &model.topology;
        if raw.positions.len() != topology.vertex_count() || raw.faces != topology.faces() {
            return Err(ServiceError::TopologyMismatch);
        }
        let mesh = CorrespondedMesh::new(topology.clone(), raw.positions)
            .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let mu = model
            .encode_means(&[mesh])
            .map_err(|e| ServiceError::Internal(e.to_string()))?
            .remove(0);
        let classification = match analysis {
            Some((aid, artifact)) => Some(classify(&aid, &artifact, &mu)?),
            None => None,
        };
        Ok(Json(EncodeResponse {
            subsets: (0..ATTRIBUTE_COUNT).map(|k| mu.subset(k).to_vec()).collect(),
            mu,
            classification,
        }))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct EmbeddingQuery {
    scope: Option<String>,
    /// Subject id to project.
    patient: Option<String>,
    /// Session whose patient to project.
    session: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddedPoint {
    pub subject: String,
    pub class_label: Option<ClassLabel>,
    pub point: [f64; 2],
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbeddingResponse {
    pub scope: String,
    pub explained_variance_ratio: Vec<f64>,
    /// Training subjects the discriminant models were fitted on.
    pub points: Vec<EmbeddedPoint>,
    pub contours: ClassDistributionSummary,
    pub patient: Option<EmbeddedPoint>,
}

async fn embedding(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EmbeddingQuery>,
) -> Result<Json<EmbeddingResponse>> {
    let (_, artifact) = s.analysis(&id)?;
    let scope_name = q.scope.unwrap_or_else(|| "whole".into());
    let scope = Scope::parse(&scope_name)
        .filter(|sc| artifact.models.scope(*sc).is_some())
        .ok_or_else(|| ServiceError::BadRequest(format!("unknown scope {scope_name}")))?;
    let patient = match (q.patient, q.session) {
        (Some(_), Some(_)) => return Err(ServiceError::BadRequest("give patient or session, not both".into())),
        (Some(p), None) => {
            let subject = artifact
                .subject(&p)
                .ok_or_else(|| ServiceError::NotFound(format!("subject {p}")))?;
            Some((p, Some(subject.class_label.clone()), subject.latent.clone()))
        }
        (None, Some(sid)) => {
            let entry = s.session_slot(&sid)?.lock().await.clone();
            if entry.analysis != id {
                return Err(unprocessable(format!("session {sid} uses analysis {}", entry.analysis)));
            }
            let label = artifact.subject(&entry.session.patient).map(|x| x.class_label.clone());
            Some((entry.session.patient, label, entry.session.z_p))
        }
        (None, None) => None,
    };
    blocking(move || {
        let models = artifact.models.scope(scope).expect("checked above");
        let internal = |e: cranio_core::analysis::AnalysisError| ServiceError::Internal(e.to_string());
        let mut points = Vec::new();
        for subject in artifact.training() {
            points.push(EmbeddedPoint {
                subject: subject.id.clone(),
                class_label: Some(subject.class_label.clone()),
                point: models.lda.embed(&scope.select(&subject.latent)).map_err(internal)?,
            });
        }
        let xy: Vec<[f64; 2]> = points.iter().map(|p| p.point).collect();
        let labels: Vec<ClassLabel> = points.iter().filter_map(|p| p.class_label.clone()).collect();
        let contours = iso_contours(&xy, &labels).map_err(internal)?;
        let patient = match patient {
            Some((subject, class_label, z)) => Some(EmbeddedPoint {
                subject,
                class_label,
                point: models.lda.embed(&scope.select(&z)).map_err(internal)?,
            }),
            None => None,
        };
        Ok(Json(EmbeddingResponse {
            scope: scope.to_string(),
            explained_variance_ratio: models.lda.explained_variance_ratio.clone(),
            points,
            contours,
            patient,
        }))
    })
    .await
}

async fn list_procedures(State(s): State<AppState>) -> Json<Vec<Procedure>> {
    Json(s.inner.procedures.lock().await.procedures().to_vec())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProcedureBody {
    attributes: Vec<String>,
}

async fn put_procedure(
    State(s): State<AppState>,
    Path(name): Path<String>,
    Json(body): Json<ProcedureBody>,
) -> Result<Json<Procedure>> {
    let procedure = Procedure::try_from(ProcedureSpec {
        name,
        attributes: body.attributes,
    })
    .map_err(unprocessable)?;
    let mut registry = s.inner.procedures.lock().await;
    let mut updated = registry.clone();
    updated.upsert(procedure.clone());
    s.inner.store.save_procedures(&updated)?;
    *registry = updated;
    Ok(Json(procedure))
}

async fn delete_procedure(State(s): State<AppState>, Path(name): Path<String>) -> Result<StatusCode> {
    let mut registry = s.inner.procedures.lock().await;
    let mut updated = registry.clone();
    if updated.remove(&name).is_none() {
        return Err(ServiceError::NotFound(format!("procedure {name}")));
    }
    s.inner.store.save_procedures(&updated)?;
    *registry = updated;
    Ok(StatusCode::NO_CONTENT)
}

/// A registry name or an inline definition.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ProcedureRef {
    Name(String),
    Inline(ProcedureSpec),
}

async fn resolve_procedure(s: &AppState, r: ProcedureRef) -> Result<Procedure> {
    match r {
        ProcedureRef::Name(name) => s
            .inner
            .procedures
            .lock()
            .await
            .get(&name)
            .cloned()
            .ok_or_else(|| unprocessable(format!("unknown procedure {name}"))),
        ProcedureRef::Inline(spec) => Procedure::try_from(spec).map_err(unprocessable),
    }
}

/// Applies stop fractions keyed by attribute name; `null` clears one.
fn apply_stops(session: &mut PlanningSession, stops: BTreeMap<String, Option<f64>>) -> Result<()> {
    let names = canonical_attribute_names();
    for (name, value) in stops {
        let k = names
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| unprocessable(format!("unknown attribute {name}")))?;
        match value {
            Some(v) => session.stops.insert(k, v),
            None => session.stops.remove(&k),
        };
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    analysis: String,
    /// Subject id; its latent is taken from the analysis unless `z_p` is given.
    patient: String,
    #[serde(default)]
    z_p: Option<LatentVector>,
    procedure: ProcedureRef,
    #[serde(default)]
    target: Option<Target>,
    #[serde(default)]
    t: Option<f64>,
    #[serde(default)]
    stops: BTreeMap<String, Option<f64>>,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

async fn create_session(
    State(s): State<AppState>,
    Json(req): Json<CreateSession>,
) -> Result<(StatusCode, Json<SessionEntry>)> {
    let (_, artifact) = s.analysis(&req.analysis)?;
    let z_p = match req.z_p {
        Some(z) => z,
        None => artifact
            .subject(&req.patient)
            .ok_or_else(|| ServiceError::NotFound(format!("subject {}", req.patient)))?
            .latent
            .clone(),
    };
    let procedure = resolve_procedure(&s, req.procedure).await?;
    let mut session = PlanningSession::new(req.patient, z_p, procedure, req.target.unwrap_or(Target::Mean));
    if let Some(t) = req.t {
        session.t = t;
    }
    apply_stops(&mut session, req.stops)?;
    session.validate().map_err(unprocessable)?;
    let id = {
        let mut next = s.inner.next_session.lock().expect("counter lock");
        let id = format!("s{:06}", *next);
        *next += 1;
        id
    };
    let entry = SessionEntry {
        id: id.clone(),
        analysis: req.analysis,
        created: now(),
        session,
    };
    s.inner.store.save_session(&entry)?;
    s.inner
        .sessions
        .write()
        .expect("session table lock")
        .insert(id, Arc::new(tokio::sync::Mutex::new(entry.clone())));
    Ok((StatusCode::CREATED, Json(entry)))
}

async fn get_session(State(s): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionEntry>> {
    Ok(Json(s.session_slot(&id)?.lock().await.clone()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatchSession {
    t: Option<f64>,
    stops: Option<BTreeMap<String, Option<f64>>>,
    target: Option<Target>,
    procedure: Option<ProcedureRef>,
}

/// Validates the whole update before committing any of it.
async fn patch_session(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<PatchSession>,
) -> Result<Json<SessionEntry>> {
    let slot = s.session_slot(&id)?;
    let procedure = match req.procedure {
        Some(r) => Some(resolve_procedure(&s, r).await?),
        None => None,
    };
    let mut entry = slot.lock().await;
    let mut next = entry.clone();
    if let Some(t) = req.t {
        next.session.t = t;
    }
    if let Some(target) = req.target {
        next.session.target = target;
    }
    if let Some(p) = procedure {
        next.session.procedure = p;
    }
    if let Some(stops) = req.stops {
        apply_stops(&mut next.session, stops)?;
    }
    next.session.validate().map_err(unprocessable)?;
    s.inner.store.save_session(&next)?;
    *entry = next;
    Ok(Json(entry.clone()))
}

fn session_targets(artifact: &AnalysisArtifact, session: &PlanningSession) -> Result<InterpolationTargets> {
    let (latents, labels): (Vec<LatentVector>, Vec<ClassLabel>) = artifact
        .training()
        .map(|x| (x.latent.clone(), x.class_label.clone()))
        .unzip();
    let reference = healthy_reference(&latents, &labels).map_err(unprocessable)?;
    targets(&reference, &session.z_p).map_err(unprocessable)
}

#[derive(Debug, Deserialize)]
struct TrajectoryQuery {
    steps: Option<usize>,
    /// `json` (default), `obj` or `glb`.
    format: Option<String>,
    /// Step to return as a mesh; defaults to the last.
    step: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub latent: LatentVector,
    /// Whole-latent LDA embedding.
    pub embedding: [f64; 2],
    /// Per-vertex distance from the first step, mm.
    pub displacement: Vec<f64>,
    pub mean_displacement: f64,
    pub max_displacement: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrajectoryResponse {
    pub session: String,
    pub displacement_cap_mm: f64,
    pub steps: Vec<TrajectoryPoint>,
}

async fn trajectory(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<TrajectoryQuery>,
) -> Result<Response> {
    let steps = q.steps.unwrap_or(DEFAULT_STEPS);
    if steps == 0 || steps > MAX_STEPS {
        return Err(unprocessable(format!("steps must lie in 1..={MAX_STEPS}")));
    }
    let format = q.format.unwrap_or_else(|| "json".into());
    if !["json", "obj", "glb"].contains(&format.as_str()) {
        return Err(ServiceError::BadRequest(format!("unknown format {format}")));
    }
    let step = q.step.unwrap_or(steps - 1);
    if step >= steps {
        return Err(unprocessable(format!("step {step} is beyond {steps} steps")));
    }
    let entry = s.session_slot(&id)?.lock().await.clone();
    let (model_id, artifact) = s.analysis(&entry.analysis)?;
    let model = s.model(&model_id)?;
    blocking(move || {
        let targets = session_targets(&artifact, &entry.session)?;
        let path = interpolate(&entry.session, &targets, model.as_ref(), steps).map_err(unprocessable)?;
        match format.as_str() {
            "obj" => {
                let m = &path[step].mesh;
                let text = write_obj_string(m.positions(), m.topology().faces());
                Ok(([(header::CONTENT_TYPE, "model/obj")], text).into_response())
            }
            "glb" => {
                let p = &path[step];
                let bytes = write_glb(p.mesh.positions(), p.mesh.topology().faces(), p.displacement.magnitudes());
                Ok(([(header::CONTENT_TYPE, "model/gltf-binary")], bytes).into_response())
            }
            _ => {
                let lda = &artifact.models.whole.lda;
                let steps = path
                    .into_iter()
                    .map(|p| {
                        Ok(TrajectoryPoint {
                            t: p.t,
                            embedding: lda
                                .embed(&Scope::Whole.select(&p.latent))
                                .map_err(|e| ServiceError::Internal(e.to_string()))?,
                            latent: p.latent,
                            mean_displacement: p.displacement.mean(),
                            max_displacement: p.displacement.max(),
                            displacement: p.displacement.magnitudes().to_vec(),
                        })
                    })
                    .collect::<Result<_>>()?;
                Ok(Json(TrajectoryResponse {
                    session: entry.id,
                    displacement_cap_mm: DISPLACEMENT_CAP_MM,
                    steps,
                })
                .into_response())
            }
        }
    })
    .await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RankingResponse {
    pub session: String,
    pub patient: String,
    pub rows: Vec<RankingRow>,
}

/// Every registry procedure, plus the session's own when it is not
/// registered under its name.
async fn ranking(State(s): State<AppState>, Path(id): Path<String>) -> Result<Json<RankingResponse>> {
    let entry = s.session_slot(&id)?.lock().await.clone();
    let (_, artifact) = s.analysis(&entry.analysis)?;
    let mut procedures = s.inner.procedures.lock().await.procedures().to_vec();
    if !procedures.iter().any(|p| p == &entry.session.procedure) {
        procedures.retain(|p| p.name() != entry.session.procedure.name());
        procedures.push(entry.session.procedure.clone());
    }
    let targets = session_targets(&artifact, &entry.session)?;
    Ok(Json(RankingResponse {
        rows: rank_procedures(&procedures, &entry.session.z_p, &targets),
        session: entry.id,
        patient: entry.session.patient,
    }))
}
