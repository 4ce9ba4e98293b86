//! Resumption tokens: the full request state, serialized as JSON and
//! base64url-encoded. Carrying the original arguments verbatim lets the
//! dispatcher re-validate a resumed request exactly like a fresh one and
//! reject tokens replayed under a different verb.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResumptionState {
    pub verb: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub prefix: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub from: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub until: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub set: Option<String>,
    pub offset: u64,
}

pub fn encode_token(state: &ResumptionState) -> String {
    URL_SAFE_NO_PAD.encode(serde_json::to_vec(state).expect("token state serializes"))
}

pub fn decode_token(token: &str) -> Option<ResumptionState> {
    let bytes = URL_SAFE_NO_PAD.decode(token).ok()?;
    serde_json::from_slice(&bytes).ok()
}
