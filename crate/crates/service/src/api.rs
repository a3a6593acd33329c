use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::state::AppState;
use crate::ServiceError;

pub const DEFAULT_SAMPLE: i64 = 1000;
pub const DENSITY_BINS: usize = 50;

type Shared = State<Arc<AppState>>;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::NoAnnotations | ServiceError::RetrainInProgress | ServiceError::NoModel => {
                StatusCode::CONFLICT
            }
            ServiceError::Label(e) if !matches!(e, cascade_spotter_core::labeler::LabelError::Io { .. }) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

fn unit(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

#[derive(Debug, Deserialize)]
pub struct ScatterQuery {
    pub n: Option<String>,
    pub seed: Option<String>,
}

fn query_int<T: std::str::FromStr>(name: &str, raw: Option<&str>, default: T) -> Result<T, ServiceError> {
    match raw {
        None => Ok(default),
        Some(s) => s
            .trim()
            .parse()
            .map_err(|_| ServiceError::BadRequest(format!("{name} must be an integer, got {s:?}"))),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub user_id: String,
    pub screen_name: String,
    pub botness: f64,
    pub influence: Option<f64>,
    pub influence_percentile: f64,
    /// Empty when the user used no hashtags.
    pub top_hashtag: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DensityGrid {
    pub botness_bins: usize,
    pub percentile_bins: usize,
    /// `counts[i][j]`: botness bin `i` over [0, 1], percentile bin `j` over
    /// [0, 100]; the upper edge belongs to the last bin.
    pub counts: Vec<Vec<u64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScatterResponse {
    pub scores_version: u64,
    pub seed: u64,
    pub total_users: usize,
    pub points: Vec<ScatterPoint>,
    pub density: DensityGrid,
}

fn bin(v: f64, hi: f64) -> usize {
    ((v / hi * DENSITY_BINS as f64).floor().max(0.0) as usize).min(DENSITY_BINS - 1)
}

pub async fn scatter(State(st): Shared, Query(q): Query<ScatterQuery>) -> Result<Json<ScatterResponse>, ServiceError> {
    let n: i64 = query_int("n", q.n.as_deref(), DEFAULT_SAMPLE)?;
    if n <= 0 {
        return Err(ServiceError::BadRequest(format!("n must be positive, got {n}")));
    }
    let seed: u64 = query_int("seed", q.seed.as_deref(), 0)?;
    let snap = st.snapshot();
    let data = &st.data;
    let total = data.len();

    let mut counts = vec![vec![0u64; DENSITY_BINS]; DENSITY_BINS];
    for i in 0..total {
        counts[bin(snap.botness[i], 1.0)][bin(data.percentile[i], 100.0)] += 1;
    }

    let take = (n as usize).min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, total, take).into_vec();
    picked.sort_unstable();
    let points = picked
        .into_iter()
        .map(|i| ScatterPoint {
            user_id: data.table.user_ids()[i].clone(),
            screen_name: data.screen_name(i).to_string(),
            botness: snap.botness[i],
            influence: unit(data.table.influence[i]),
            influence_percentile: data.percentile[i],
            top_hashtag: data.profiles[i]
                .as_ref()
                .and_then(|p| p.top_hashtag.clone())
                .unwrap_or_default(),
        })
        .collect();
    Ok(Json(ScatterResponse {
        scores_version: snap.version,
        seed,
        total_users: total,
        points,
        density: DensityGrid {
            botness_bins: DENSITY_BINS,
            percentile_bins: DENSITY_BINS,
            counts,
        },
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HashtagCount {
    pub tag: String,
    pub count: u32,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct UserDetail {
    pub user_id: String,
    pub screen_name: String,
    pub profile_url: String,
    pub profile_image_url: String,
    pub location: String,
    pub followers_count: u64,
    pub friends_count: u64,
    pub statuses_count: u64,
    pub tweets_in_dump: u32,
    pub hashtags: Vec<HashtagCount>,
    pub top_hashtag: String,
    pub botness: f64,
    pub influence: Option<f64>,
    pub influence_percentile: f64,
    pub cascade_ids: Vec<String>,
    pub scores_version: u64,
}

pub async fn user(State(st): Shared, Path(id): Path<String>) -> Result<Json<UserDetail>, ServiceError> {
    let data = &st.data;
    let &i = data
        .user_index
        .get(&id)
        .ok_or_else(|| ServiceError::NotFound(format!("user {id}")))?;
    let snap = st.snapshot();
    let screen_name = data.screen_name(i).to_string();
    let profile = data.profiles[i].as_ref();
    Ok(Json(UserDetail {
        user_id: id,
        profile_url: format!("https://twitter.com/{screen_name}"),
        screen_name,
        profile_image_url: profile.map(|p| p.profile_image_url.clone()).unwrap_or_default(),
        location: profile.map(|p| p.location.clone()).unwrap_or_default(),
        followers_count: profile.map_or(0, |p| p.followers_count),
        friends_count: profile.map_or(0, |p| p.friends_count),
        statuses_count: profile.map_or(0, |p| p.statuses_count),
        tweets_in_dump: profile.map_or(0, |p| p.tweets_in_dump),
        hashtags: profile
            .map(|p| {
                p.hashtags
                    .iter()
                    .map(|(tag, count)| HashtagCount {
                        tag: tag.clone(),
                        count: *count,
                    })
                    .collect()
            })
            .unwrap_or_default(),
        top_hashtag: profile.and_then(|p| p.top_hashtag.clone()).unwrap_or_default(),
        botness: snap.botness[i],
        influence: unit(data.table.influence[i]),
        influence_percentile: data.percentile[i],
        cascade_ids: profile.map(|p| p.cascade_ids.clone()).unwrap_or_default(),
        scores_version: snap.version,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CascadeEventView {
    pub index: usize,
    pub tweet_id: String,
    pub user_id: String,
    pub screen_name: String,
    pub rel_time: f64,
    pub mark: u64,
    pub expected_parent: Option<usize>,
    pub influence: f64,
    pub botness: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CascadeDetail {
    pub cascade_id: String,
    pub root_text: String,
    pub root_created_at: i64,
    pub orphan_of: Option<String>,
    pub events: Vec<CascadeEventView>,
    pub scores_version: u64,
}

pub async fn cascade(State(st): Shared, Path(id): Path<String>) -> Result<Json<CascadeDetail>, ServiceError> {
    let data = &st.data;
    let &k = data
        .cascade_index
        .get(&id)
        .ok_or_else(|| ServiceError::NotFound(format!("cascade {id}")))?;
    let c = &data.cascades[k];
    let snap = st.snapshot();
    let events = c
        .events
        .iter()
        .enumerate()
        .map(|(index, e)| {
            let u = data.user_index.get(&e.user_id).copied();
            CascadeEventView {
                index,
                tweet_id: e.tweet_id.clone(),
                user_id: e.user_id.clone(),
                screen_name: u.map(|u| data.screen_name(u).to_string()).unwrap_or_default(),
                rel_time: e.rel_time,
                mark: e.mark,
                expected_parent: e.expected_parent,
                influence: e.influence,
                botness: u.map(|u| snap.botness[u]),
            }
        })
        .collect();
    Ok(Json(CascadeDetail {
        cascade_id: c.meta.cascade_id.clone(),
        root_text: c.meta.root_text.clone(),
        root_created_at: c.meta.root_created_at,
        orphan_of: c.meta.orphan_of.clone(),
        events,
        scores_version: snap.version,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnnotationBody {
    pub user_id: String,
    pub label: f64,
}

pub async fn annotate(State(st): Shared, Json(body): Json<AnnotationBody>) -> Result<StatusCode, ServiceError> {
    if !(0.0..=1.0).contains(&body.label) {
        return Err(ServiceError::BadRequest(format!("label {} outside [0, 1]", body.label)));
    }
    let &i = st
        .data
        .user_index
        .get(&body.user_id)
        .ok_or_else(|| ServiceError::NotFound(format!("user {}", body.user_id)))?;
    let st2 = st.clone();
    tokio::task::spawn_blocking(move || st2.annotate(i, body.label))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct RetrainBody {
    pub rounds: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RetrainResponse {
    pub new_scores_version: u64,
    pub annotations_used: usize,
    pub trees: usize,
}

pub async fn retrain(State(st): Shared, body: Option<Json<RetrainBody>>) -> Result<Json<RetrainResponse>, ServiceError> {
    let rounds = body
        .and_then(|Json(b)| b.rounds)
        .unwrap_or(st.config.fine_tune_rounds);
    let Some(_guard) = st.try_begin_retrain() else {
        return Err(ServiceError::RetrainInProgress);
    };
    let st2 = st.clone();
    // the guard lives in this future, so the flag stays set until the
    // response is ready
    let out = tokio::task::spawn_blocking(move || st2.retrain(rounds))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    Ok(Json(RetrainResponse {
        new_scores_version: out.version,
        annotations_used: out.annotations_used,
        trees: out.trees,
    }))
}
