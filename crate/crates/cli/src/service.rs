//! Local HTTP service over a directory of MetaImage volumes.
//!
//! Volumes are loaded on first use and shared read-only, so slice requests
//! never wait on a running job. Each volume runs at most one job at a time;
//! jobs execute on the blocking pool and are polled by id.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use balloonseg_core::{
    segment, BinaryMask, ContourError, ImageVolume, InflationParams, InitContour, SegStats, Segmentation, SliceAxis,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::commands::{load_volume, MeshFormat};

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    field: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into(), field: None }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn field(mut self, field: impl Into<String>) -> Self {
        self.field = Some(field.into());
        self
    }

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown {what} {id:?}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = match self.field {
            Some(field) => json!({ "error": self.message, "field": field }),
            None => json!({ "error": self.message }),
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Pending,
    Running,
    Done,
    Failed,
}

struct Job {
    status: JobStatus,
    result: Option<Arc<Segmentation>>,
    error: Option<String>,
}

#[derive(Default)]
struct Registry {
    volumes: HashMap<String, Arc<ImageVolume>>,
    busy: HashSet<String>,
    jobs: HashMap<String, Job>,
}

pub struct AppState {
    dir: PathBuf,
    registry: Mutex<Registry>,
    next_job: AtomicU64,
}

impl AppState {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into(), registry: Mutex::default(), next_job: AtomicU64::new(1) }
    }

    fn registry(&self) -> std::sync::MutexGuard<'_, Registry> {
        self.registry.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Volume files in the directory, keyed by file stem. `.mha` wins over `.mhd`.
    fn catalog(&self) -> std::io::Result<BTreeMap<String, PathBuf>> {
        let mut found = BTreeMap::new();
        for entry in std::fs::read_dir(&self.dir)? {
            let path = entry?.path();
            let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
            let Some(ext @ ("mha" | "mhd")) = ext.as_deref() else { continue };
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            if ext == "mha" || !found.contains_key(stem) {
                found.insert(stem.to_string(), path.clone());
            }
        }
        Ok(found)
    }

    fn load(&self, id: &str, path: &Path) -> ApiResult<Arc<ImageVolume>> {
        if let Some(v) = self.registry().volumes.get(id) {
            return Ok(v.clone());
        }
        let volume = Arc::new(
            load_volume(path).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?,
        );
        Ok(self.registry().volumes.entry(id.to_string()).or_insert(volume).clone())
    }

    fn volume(&self, id: &str) -> ApiResult<Arc<ImageVolume>> {
        let catalog = self.catalog().map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        let path = catalog.get(id).ok_or_else(|| ApiError::not_found("volume", id))?;
        self.load(id, path)
    }

    fn finished(&self, job_id: &str) -> ApiResult<Arc<Segmentation>> {
        let reg = self.registry();
        let job = reg.jobs.get(job_id).ok_or_else(|| ApiError::not_found("job", job_id))?;
        job.result.clone().ok_or_else(|| {
            ApiError::new(StatusCode::CONFLICT, format!("job {job_id} is {:?}, not done", job.status))
        })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/volumes", get(list_volumes))
        .route("/api/volumes/{id}/slice/{axis}/{index}", get(volume_slice))
        .route("/api/segment", post(start_segment))
        .route("/api/jobs/{id}", get(job_status))
        .route("/api/jobs/{id}/mask", get(job_mask))
        .route("/api/jobs/{id}/mask/slice/{axis}/{index}", get(job_mask_slice))
        .route("/api/jobs/{id}/mesh", get(job_mesh))
        .with_state(state)
}

/// Serves `volume_dir` on localhost until the process is stopped.
pub async fn serve(port: u16, volume_dir: PathBuf) -> std::io::Result<()> {
    if !volume_dir.is_dir() {
        return Err(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} is not a directory", volume_dir.display()),
        ));
    }
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
    log::info!("serving {} on http://{}", volume_dir.display(), listener.local_addr()?);
    axum::serve(listener, router(Arc::new(AppState::new(volume_dir)))).await
}

#[derive(Serialize)]
struct VolumeInfo {
    id: String,
    dims: [usize; 3],
    spacing: [f64; 3],
}

async fn list_volumes(State(state): State<Arc<AppState>>) -> ApiResult<Json<Vec<VolumeInfo>>> {
    let catalog = state.catalog().map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let mut out = Vec::new();
    for (id, path) in catalog {
        match state.load(&id, &path) {
            Ok(v) => out.push(VolumeInfo { id, dims: v.dims(), spacing: v.spacing() }),
            Err(e) => log::warn!("skipping {}: {}", path.display(), e.message),
        }
    }
    Ok(Json(out))
}

/// Maps slice pixel (x, y) to a volume index, or fails for an out-of-range slice.
struct SliceFrame {
    axis: SliceAxis,
    index: usize,
    width: usize,
    height: usize,
}

impl SliceFrame {
    fn new(dims: [usize; 3], axis: &str, index: i64) -> ApiResult<Self> {
        let axis = SliceAxis::parse(axis)
            .ok_or_else(|| ApiError::bad_request(format!("axis must be x, y or z, got {axis:?}")).field("axis"))?;
        let len = dims[axis.index()];
        if index < 0 || index as usize >= len {
            return Err(ApiError::bad_request(format!("slice index {index} is outside 0..{len} along {axis}"))
                .field("index"));
        }
        let (a, b) = axis.in_plane();
        Ok(Self { axis, index: index as usize, width: dims[a], height: dims[b] })
    }

    fn voxel(&self, x: usize, y: usize) -> [usize; 3] {
        let (a, b) = self.axis.in_plane();
        let mut idx = [0; 3];
        idx[self.axis.index()] = self.index;
        idx[a] = x;
        idx[b] = y;
        idx
    }
}

#[derive(Deserialize)]
struct Window {
    wl: Option<f32>,
    ww: Option<f32>,
}

/// Linear window/level mapping to 0..=255; a non-positive width thresholds at the level.
fn window_byte(v: f32, level: f32, width: f32) -> u8 {
    if width <= 0.0 {
        return if v >= level { 255 } else { 0 };
    }
    let t = (v - (level - 0.5 * width)) / width;
    (t.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode_png(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().expect("png header to memory");
    writer.write_image_data(pixels).expect("png data to memory");
    writer.finish().expect("png finish to memory");
    out
}

async fn volume_slice(
    State(state): State<Arc<AppState>>,
    UrlPath((id, axis, index)): UrlPath<(String, String, i64)>,
    Query(window): Query<Window>,
) -> ApiResult<Response> {
    let volume = state.volume(&id)?;
    let frame = SliceFrame::new(volume.dims(), &axis, index)?;
    let (lo, hi) = volume.value_range();
    let level = window.wl.unwrap_or(0.5 * (lo + hi));
    let width = window.ww.unwrap_or(hi - lo);
    let mut pixels = Vec::with_capacity(frame.width * frame.height);
    for y in 0..frame.height {
        for x in 0..frame.width {
            pixels.push(window_byte(volume.get(frame.voxel(x, y)), level, width));
        }
    }
    Ok(([(header::CONTENT_TYPE, "image/png")], encode_png(frame.width, frame.height, &pixels)).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentRequest {
    volume_id: String,
    contour: InitContour,
    #[serde(default)]
    params: Option<InflationParams>,
}

fn contour_field(e: &ContourError) -> &'static str {
    match e {
        ContourError::SliceOutOfGrid { .. } => "contour.slice_index",
        ContourError::BadTrim(_) => "params.trim_percent",
        _ => "contour.points",
    }
}

async fn start_segment(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: SegmentRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))?;
    let volume = state.volume(&req.volume_id)?;
    req.contour.validate(&volume).map_err(|e| ApiError::bad_request(e.to_string()).field(contour_field(&e)))?;
    let params = req.params.unwrap_or_default();
    params.validate().map_err(|e| {
        let field = match &e {
            balloonseg_core::InflationError::BadParam { field, .. } => format!("params.{field}"),
            _ => "params".to_string(),
        };
        ApiError::bad_request(e.to_string()).field(field)
    })?;

    let job_id = format!("job-{}", state.next_job.fetch_add(1, Ordering::Relaxed));
    {
        let mut reg = state.registry();
        if !reg.busy.insert(req.volume_id.clone()) {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("volume {:?} already has a job running", req.volume_id),
            ));
        }
        reg.jobs.insert(job_id.clone(), Job { status: JobStatus::Pending, result: None, error: None });
    }

    let worker = state.clone();
    let (id, volume_id, contour) = (job_id.clone(), req.volume_id, req.contour);
    tokio::task::spawn_blocking(move || {
        worker.registry().jobs.get_mut(&id).expect("job registered").status = JobStatus::Running;
        let outcome = segment(&volume, &contour, &params);
        let mut reg = worker.registry();
        reg.busy.remove(&volume_id);
        let job = reg.jobs.get_mut(&id).expect("job registered");
        match outcome {
            Ok((_, result)) => {
                job.result = Some(Arc::new(result));
                job.status = JobStatus::Done;
            }
            Err(e) => {
                log::warn!("{id} failed: {e}");
                job.error = Some(e.to_string());
                job.status = JobStatus::Failed;
            }
        }
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job_id }))).into_response())
}

#[derive(Serialize)]
struct JobView {
    status: JobStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    stats: Option<SegStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

async fn job_status(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<JobView>> {
    let reg = state.registry();
    let job = reg.jobs.get(&id).ok_or_else(|| ApiError::not_found("job", &id))?;
    Ok(Json(JobView {
        status: job.status,
        stats: job.result.as_ref().map(|r| r.stats.clone()),
        error: job.error.clone(),
    }))
}

async fn job_mask(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let result = state.finished(&id)?;
    let bytes = tokio::task::spawn_blocking(move || result.mask.to_mha_bytes())
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct RleRow {
    pub y: usize,
    pub runs: Vec<[usize; 2]>,
}

/// Rows of the slice that contain at least one set pixel, as `[x0, len]` runs.
fn rle_rows(mask: &BinaryMask, frame: &SliceFrame) -> Vec<RleRow> {
    let mut rows = Vec::new();
    for y in 0..frame.height {
        let mut runs: Vec<[usize; 2]> = Vec::new();
        for x in 0..frame.width {
            if !mask.get(frame.voxel(x, y)) {
                continue;
            }
            match runs.last_mut() {
                Some(run) if run[0] + run[1] == x => run[1] += 1,
                _ => runs.push([x, 1]),
            }
        }
        if !runs.is_empty() {
            rows.push(RleRow { y, runs });
        }
    }
    rows
}

async fn job_mask_slice(
    State(state): State<Arc<AppState>>,
    UrlPath((id, axis, index)): UrlPath<(String, String, i64)>,
) -> ApiResult<Json<Vec<RleRow>>> {
    let result = state.finished(&id)?;
    let frame = SliceFrame::new(result.mask.dims(), &axis, index)?;
    Ok(Json(rle_rows(&result.mask, &frame)))
}

#[derive(Deserialize)]
struct MeshQuery {
    format: Option<String>,
}

async fn job_mesh(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<MeshQuery>,
) -> ApiResult<Response> {
    let name = q.format.as_deref().unwrap_or("obj");
    let format = MeshFormat::parse(name)
        .ok_or_else(|| ApiError::bad_request(format!("format must be obj or stl, got {name:?}")).field("format"))?;
    let result = state.finished(&id)?;
    Ok(match format {
        MeshFormat::Obj => ([(header::CONTENT_TYPE, "model/obj")], result.mesh.to_obj().into_bytes()).into_response(),
        MeshFormat::Stl => ([(header::CONTENT_TYPE, "model/stl")], result.mesh.to_stl()).into_response(),
    })
}
