use axum::body::{to_bytes, Body};
use axum::extract::{Request, State};
use axum::http::header::{CONTENT_LENGTH, CONTENT_TYPE};
use axum::middleware::Next;
use axum::response::Response;
use serde_json::Value;
use vidpriv_core::orchestrator::scrub;

use crate::AppState;

const MAX_JSON_BODY: usize = 64 << 20;

/// Scrub every string, object keys included.
pub fn scrub_value(v: Value, secrets: &[String]) -> Value {
    match v {
        Value::String(s) => Value::String(scrub(&s, secrets)),
        Value::Array(xs) => Value::Array(xs.into_iter().map(|x| scrub_value(x, secrets)).collect()),
        Value::Object(m) => Value::Object(m.into_iter().map(|(k, x)| (scrub(&k, secrets), scrub_value(x, secrets))).collect()),
        other => other,
    }
}

/// Longest first, so that an id containing another is replaced whole.
pub fn secrets(state: &AppState) -> Vec<String> {
    let mut ids = state.orchestrator.known_patient_ids();
    ids.sort_by_key(|s| std::cmp::Reverse(s.len()));
    ids
}

pub fn to_json_scrubbed<T: serde::Serialize>(value: &T, secrets: &[String]) -> String {
    let v = serde_json::to_value(value).unwrap_or(Value::Null);
    scrub_value(v, secrets).to_string()
}

/// Rewrite JSON responses with patient ids removed.
pub async fn scrub_json_responses(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let resp = next.run(req).await;
    let is_json = resp
        .headers()
        .get(CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/json"));
    if !is_json {
        return resp;
    }
    let (mut parts, body) = resp.into_parts();
    let bytes = match to_bytes(body, MAX_JSON_BODY).await {
        Ok(b) => b,
        Err(_) => {
            parts.status = axum::http::StatusCode::INTERNAL_SERVER_ERROR;
            parts.headers.remove(CONTENT_LENGTH);
            return Response::from_parts(parts, Body::from(r#"{"code":"internal","message":"response too large"}"#));
        }
    };
    let text = match serde_json::from_slice::<Value>(&bytes) {
        Ok(v) => scrub_value(v, &secrets(&state)).to_string(),
        // Not valid JSON: scrub it as text rather than pass it through.
        Err(_) => scrub(&String::from_utf8_lossy(&bytes), &secrets(&state)),
    };
    parts.headers.remove(CONTENT_LENGTH);
    Response::from_parts(parts, Body::from(text))
}
