use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use yawnforge_core::util;

use crate::error::ApiError;

pub const SESSIONS_FILE: &str = "sessions.json";
pub const REVIEWERS_FILE: &str = "reviewers.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionToken {
    pub token: String,
    pub reviewer: String,
    pub issued_at: DateTime<Utc>,
    pub expiry: DateTime<Utc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ReviewerEntry {
    name: String,
    key: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReviewersFile {
    reviewers: Vec<ReviewerEntry>,
}

/// Reviewer names and their bearer keys.
#[derive(Debug, Clone, Default)]
pub struct Reviewers {
    keys: BTreeMap<String, String>,
}

impl Reviewers {
    pub fn load(path: &Path) -> yawnforge_core::Result<Self> {
        let file: ReviewersFile = util::read_json(path)?;
        Ok(Self { keys: file.reviewers.into_iter().map(|r| (r.name, r.key)).collect() })
    }

    pub fn check(&self, reviewer: &str, key: Option<&str>) -> Result<(), ApiError> {
        match (self.keys.get(reviewer), key) {
            (Some(expected), Some(given)) if expected.as_bytes() == given.as_bytes() => Ok(()),
            _ => Err(ApiError::Unauthorized(format!("unknown reviewer or wrong key for `{reviewer}`"))),
        }
    }
}

/// Issued session tokens, persisted next to the store.
#[derive(Debug, Default)]
pub struct Sessions {
    path: Option<PathBuf>,
    by_token: BTreeMap<String, SessionToken>,
}

impl Sessions {
    pub fn load(path: Option<PathBuf>) -> yawnforge_core::Result<Self> {
        let by_token = match &path {
            Some(p) if p.exists() => {
                util::read_json::<Vec<SessionToken>>(p)?.into_iter().map(|s| (s.token.clone(), s)).collect()
            }
            _ => BTreeMap::new(),
        };
        Ok(Self { path, by_token })
    }

    fn persist(&self) -> Result<(), ApiError> {
        if let Some(p) = &self.path {
            let all: Vec<&SessionToken> = self.by_token.values().collect();
            util::write_json(p, &all).map_err(|e| ApiError::Internal(e.to_string()))?;
        }
        Ok(())
    }

    pub fn issue(&mut self, reviewer: &str, now: DateTime<Utc>, ttl: Duration) -> Result<SessionToken, ApiError> {
        self.by_token.retain(|_, s| s.expiry > now);
        let mut raw = [0u8; 24];
        rand::rng().fill_bytes(&mut raw);
        let session =
            SessionToken { token: hex::encode(raw), reviewer: reviewer.to_string(), issued_at: now, expiry: now + ttl };
        self.by_token.insert(session.token.clone(), session.clone());
        self.persist()?;
        Ok(session)
    }

    pub fn validate(&self, token: &str, now: DateTime<Utc>) -> Result<SessionToken, ApiError> {
        match self.by_token.get(token) {
            Some(s) if s.expiry > now => Ok(s.clone()),
            Some(_) => Err(ApiError::Unauthorized("session expired; start a new one".into())),
            None => Err(ApiError::Unauthorized("unknown session token".into())),
        }
    }
}
