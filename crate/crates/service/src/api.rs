use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::{Body, Bytes};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use feedloop_core::analytics::{IncorporationJudgment, RankingRecord};
use feedloop_core::store::{read_complete_lines, RecordKind};
use feedloop_core::{FeedbackRecord, Timestamp};

use crate::error::{ApiError, ApiResult};
use crate::session::{
    blind_labels, build_queue, Mode, Session, DEFAULT_INCORPORATION_METHODS, DEFAULT_RANKING_METHODS,
    RANKED_SUMMARIES,
};
use crate::store::{Rejection, Store};

#[derive(Clone)]
pub struct AppState {
    store: Arc<Store>,
    sessions: Arc<Mutex<HashMap<String, Session>>>,
}

impl AppState {
    pub fn new(store: Store) -> Self {
        AppState {
            store: Arc::new(store),
            sessions: Arc::new(Mutex::new(HashMap::new())),
        }
    }

    pub fn store(&self) -> &Store {
        &self.store
    }
}

/// The API routes, with the UI bundle served from `static_dir` for any
/// other path.
pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/next", get(next_item))
        .route("/items/{id}/feedback", post(submit_feedback))
        .route("/items/{id}/ranking", post(submit_ranking))
        .route("/items/{id}/incorporation", post(submit_incorporation))
        .route("/feedback/{id}", get(get_feedback))
        .route("/export/{kind}", get(export))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(|| async { ApiError::not_found("not_found", "no such route") }),
    }
}

/// Body parsing that reports failures in the API's error shape.
fn parse<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("invalid_body", e.to_string()))
}

#[derive(Debug, Deserialize)]
struct CreateSession {
    annotator_id: String,
    mode: String,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    task_ids: Option<Vec<String>>,
    #[serde(default)]
    methods: Option<Vec<String>>,
}

/// Session descriptor. Ranking sessions omit the method list.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SessionView {
    pub session_id: String,
    pub annotator_id: String,
    pub mode: Mode,
    pub position: usize,
    pub total: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<String>>,
}

fn describe(s: &Session) -> SessionView {
    SessionView {
        session_id: s.session_id.clone(),
        annotator_id: s.annotator_id.clone(),
        mode: s.mode,
        position: s.cursor,
        total: s.queue.len(),
        methods: (s.mode == Mode::Incorporation).then(|| s.methods.clone()),
    }
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let req: CreateSession = parse(&body)?;
    let mode: Mode = req.mode.parse().map_err(|m| ApiError::bad_request("unknown_mode", m))?;
    let annotator = req.annotator_id.trim();
    if annotator.is_empty() {
        return Err(ApiError::bad_request("invalid_annotator", "annotator_id is empty"));
    }
    let methods: Vec<String> = match (mode, req.methods) {
        (_, Some(m)) => m,
        (Mode::Ranking, None) => DEFAULT_RANKING_METHODS.iter().map(|s| s.to_string()).collect(),
        (Mode::Incorporation, None) => DEFAULT_INCORPORATION_METHODS.iter().map(|s| s.to_string()).collect(),
        (Mode::Feedback, None) => Vec::new(),
    };
    let distinct: BTreeSet<&String> = methods.iter().collect();
    if distinct.len() != methods.len() {
        return Err(ApiError::bad_request("invalid_methods", "methods must be distinct"));
    }
    if mode == Mode::Ranking && methods.len() != RANKED_SUMMARIES {
        return Err(ApiError::bad_request(
            "invalid_methods",
            format!("ranking compares exactly {RANKED_SUMMARIES} methods, got {}", methods.len()),
        ));
    }
    if mode == Mode::Incorporation && methods.is_empty() {
        return Err(ApiError::bad_request("invalid_methods", "no methods to judge"));
    }
    let filter: Option<BTreeSet<String>> = req.task_ids.map(|t| t.into_iter().collect());
    let queue = app.store.read_index(|index| {
        build_queue(&app.store.corpus, index, annotator, mode, &methods, filter.as_ref(), req.seed)
    });
    let session = Session {
        session_id: uuid::Uuid::new_v4().to_string(),
        annotator_id: annotator.to_string(),
        mode,
        queue,
        cursor: 0,
        seed: req.seed,
        methods,
    };
    let view = describe(&session);
    app.sessions.lock().unwrap().insert(session.session_id.clone(), session);
    Ok((StatusCode::CREATED, Json(view)))
}

fn session(app: &AppState, id: &str) -> ApiResult<Session> {
    app.sessions
        .lock()
        .unwrap()
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError::not_found("unknown_session", format!("no session `{id}`")))
}

async fn get_session(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    Ok(Json(describe(&session(&app, &id)?)))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BlindSummary {
    pub label: String,
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Candidate {
    pub method_tag: String,
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AnnotationView {
    Feedback {
        item_id: String,
        title: String,
        post: String,
        initial_summary: String,
    },
    Ranking {
        item_id: String,
        title: String,
        post: String,
        summaries: Vec<BlindSummary>,
    },
    Incorporation {
        item_id: String,
        title: String,
        post: String,
        initial_summary: String,
        feedback: String,
        candidates: Vec<Candidate>,
        judged: Vec<String>,
    },
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct NextResponse {
    pub done: bool,
    pub position: usize,
    pub total: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item: Option<AnnotationView>,
}

fn view_for(app: &AppState, s: &Session, item: &str) -> ApiResult<AnnotationView> {
    let corpus = &app.store.corpus;
    let missing = || ApiError::internal(format!("item `{item}` is no longer in the corpus"));
    Ok(match s.mode {
        Mode::Feedback => {
            let output = corpus.outputs.get(item).ok_or_else(missing)?;
            let task = corpus.tasks.get(&output.task_id).ok_or_else(missing)?;
            AnnotationView::Feedback {
                item_id: item.to_string(),
                title: task.title.clone(),
                post: task.body.clone(),
                initial_summary: output.text.clone(),
            }
        }
        Mode::Ranking => {
            let task = corpus.tasks.get(item).ok_or_else(missing)?;
            let summaries = blind_labels(s.seed, item, &s.methods)
                .into_iter()
                .map(|(label, method)| {
                    corpus.method_text(item, &method).map(|t| BlindSummary {
                        label: label.to_string(),
                        text: t.to_string(),
                    })
                })
                .collect::<Option<Vec<_>>>()
                .ok_or_else(missing)?;
            AnnotationView::Ranking {
                item_id: item.to_string(),
                title: task.title.clone(),
                post: task.body.clone(),
                summaries,
            }
        }
        Mode::Incorporation => {
            let task = corpus.tasks.get(item).ok_or_else(missing)?;
            let initial = corpus.initial_for(item).ok_or_else(missing)?;
            let (feedback, judged) = app.store.read_index(|index| {
                let fb = index.feedback_for_output(&initial.output_id).map(|f| f.text.clone());
                let judged: Vec<String> = s
                    .methods
                    .iter()
                    .filter(|m| index.judged.contains(&(item.to_string(), m.to_string())))
                    .cloned()
                    .collect();
                (fb, judged)
            });
            let candidates = s
                .methods
                .iter()
                .filter_map(|m| {
                    corpus.method_text(item, m).map(|t| Candidate {
                        method_tag: m.clone(),
                        text: t.to_string(),
                    })
                })
                .collect();
            AnnotationView::Incorporation {
                item_id: item.to_string(),
                title: task.title.clone(),
                post: task.body.clone(),
                initial_summary: initial.text.clone(),
                feedback: feedback.ok_or_else(missing)?,
                candidates,
                judged,
            }
        }
    })
}

async fn next_item(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<NextResponse>> {
    let s = session(&app, &id)?;
    let item = s.current().map(|item| view_for(&app, &s, item)).transpose()?;
    Ok(Json(NextResponse {
        done: item.is_none(),
        position: s.cursor,
        total: s.queue.len(),
        item,
    }))
}

/// The session, provided `item_id` is its current item in `mode`.
fn current_session(app: &AppState, session_id: &str, item_id: &str, mode: Mode) -> ApiResult<Session> {
    let s = session(app, session_id)?;
    if s.mode != mode {
        return Err(ApiError::bad_request(
            "wrong_mode",
            format!("session `{session_id}` is in {} mode", s.mode),
        ));
    }
    match s.current() {
        Some(cur) if cur == item_id => Ok(s),
        Some(cur) => Err(ApiError::conflict(
            "stale_item",
            format!("current item is `{cur}`, not `{item_id}`"),
        )),
        None => Err(ApiError::conflict("stale_item", "session is complete")),
    }
}

/// Moves the cursor past `item_id` if it is still current.
fn advance(app: &AppState, session_id: &str, item_id: &str) -> usize {
    let mut sessions = app.sessions.lock().unwrap();
    let s = sessions.get_mut(session_id).expect("session checked by caller");
    if s.current() == Some(item_id) {
        s.advance();
    }
    s.cursor
}

fn rejected(r: Rejection) -> ApiError {
    match r {
        Rejection::Duplicate(m) => ApiError::conflict("duplicate", m),
        Rejection::Invalid(m) => ApiError::bad_request("invalid_record", m),
    }
}

#[derive(Debug, Deserialize)]
struct FeedbackSubmission {
    session_id: String,
    text: String,
}

async fn submit_feedback(
    State(app): State<AppState>,
    Path(item_id): Path<String>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<FeedbackRecord>)> {
    let req: FeedbackSubmission = parse(&body)?;
    let s = current_session(&app, &req.session_id, &item_id, Mode::Feedback)?;
    let text = req.text.trim();
    if text.is_empty() {
        return Err(ApiError::bad_request("empty_text", "feedback text is empty"));
    }
    let output = app
        .store
        .corpus
        .outputs
        .get(&item_id)
        .ok_or_else(|| ApiError::not_found("unknown_item", format!("no output `{item_id}`")))?;
    let record = app
        .store
        .add_feedback(&output.task_id, &item_id, &s.annotator_id, text, Timestamp::now())?
        .map_err(rejected)?;
    advance(&app, &s.session_id, &item_id);
    Ok((StatusCode::CREATED, Json(record)))
}

#[derive(Debug, Deserialize)]
struct RankingSubmission {
    session_id: String,
    ranks: BTreeMap<String, u32>,
}

/// Echo of a stored ranking in blind labels only.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RankingReceipt {
    pub item_id: String,
    pub raw_ranks: BTreeMap<String, u32>,
    pub adjusted_ranks: BTreeMap<String, f64>,
    pub position: usize,
}

async fn submit_ranking(
    State(app): State<AppState>,
    Path(item_id): Path<String>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<RankingReceipt>)> {
    let req: RankingSubmission = parse(&body)?;
    let s = current_session(&app, &req.session_id, &item_id, Mode::Ranking)?;
    let labels = blind_labels(s.seed, &item_id, &s.methods);
    let known: BTreeSet<&str> = labels.iter().map(|(l, _)| *l).collect();
    if let Some(extra) = req.ranks.keys().find(|l| !known.contains(l.as_str())) {
        return Err(ApiError::bad_request("unknown_label", format!("no summary labelled `{extra}`")));
    }
    if let Some((missing, _)) = labels.iter().find(|(l, _)| !req.ranks.contains_key(*l)) {
        return Err(ApiError::bad_request("missing_label", format!("summary `{missing}` is unranked")));
    }
    let raw: BTreeMap<String, u32> = labels.iter().map(|(l, m)| (m.clone(), req.ranks[*l])).collect();
    let record = RankingRecord::new(item_id.clone(), s.annotator_id.clone(), raw)
        .map_err(|e| ApiError::bad_request("invalid_ranking", e.to_string()))?;
    app.store.add_ranking(&record)?.map_err(rejected)?;
    let position = advance(&app, &s.session_id, &item_id);
    let adjusted = labels
        .iter()
        .map(|(l, m)| (l.to_string(), record.adjusted_ranks[m]))
        .collect();
    Ok((
        StatusCode::CREATED,
        Json(RankingReceipt {
            item_id,
            raw_ranks: req.ranks,
            adjusted_ranks: adjusted,
            position,
        }),
    ))
}

#[derive(Debug, Deserialize)]
struct IncorporationSubmission {
    session_id: String,
    method_tag: String,
    at_least_one: bool,
    more_than_one: bool,
    all_points: bool,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct JudgmentReceipt {
    pub judgment: IncorporationJudgment,
    pub remaining: Vec<String>,
    pub position: usize,
}

async fn submit_incorporation(
    State(app): State<AppState>,
    Path(item_id): Path<String>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<JudgmentReceipt>)> {
    let req: IncorporationSubmission = parse(&body)?;
    let s = current_session(&app, &req.session_id, &item_id, Mode::Incorporation)?;
    let corpus = &app.store.corpus;
    if !s.methods.contains(&req.method_tag) || corpus.method_text(&item_id, &req.method_tag).is_none() {
        return Err(ApiError::bad_request(
            "unknown_method",
            format!("item `{item_id}` has no candidate from `{}`", req.method_tag),
        ));
    }
    let judgment = IncorporationJudgment {
        item_id: item_id.clone(),
        method_tag: req.method_tag,
        at_least_one: req.at_least_one,
        more_than_one: req.more_than_one,
        all_points: req.all_points,
    };
    app.store.add_judgment(&judgment)?.map_err(rejected)?;
    let remaining: Vec<String> = app.store.read_index(|index| {
        s.methods
            .iter()
            .filter(|m| corpus.method_text(&item_id, m).is_some())
            .filter(|m| !index.judged.contains(&(item_id.clone(), m.to_string())))
            .cloned()
            .collect()
    });
    let position = if remaining.is_empty() {
        advance(&app, &s.session_id, &item_id)
    } else {
        s.cursor
    };
    Ok((
        StatusCode::CREATED,
        Json(JudgmentReceipt {
            judgment,
            remaining,
            position,
        }),
    ))
}

async fn get_feedback(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<FeedbackRecord>> {
    app.store
        .read_index(|index| index.feedback.get(&id).cloned())
        .map(Json)
        .ok_or_else(|| ApiError::not_found("unknown_feedback", format!("no feedback `{id}`")))
}

/// Streams complete lines only, so a concurrent append is either fully
/// visible or not at all.
async fn export(State(app): State<AppState>, Path(kind): Path<String>) -> ApiResult<Response> {
    let kind: RecordKind = kind
        .parse()
        .map_err(|_| ApiError::not_found("unknown_kind", format!("no record kind `{kind}`")))?;
    let bytes = read_complete_lines(&kind.path_in(app.store.dir()))?;
    Ok((
        [(header::CONTENT_TYPE, "application/x-ndjson")],
        Body::from(bytes),
    )
        .into_response())
}
