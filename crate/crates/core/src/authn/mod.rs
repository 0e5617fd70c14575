//! Token issuing and validation.
//!
//! Access tokens are short-lived HS256 JWTs; refresh tokens are JWTs of type
//! `refresh` whose `jti` must still be live in the issuer's table. A refresh
//! consumes the presented token and returns a new pair.

mod http;

pub use http::router;

use std::sync::Arc;

use chrono::Duration;
use dashmap::DashMap;
use jsonwebtoken::{errors::ErrorKind, Algorithm, DecodingKey, EncodingKey, Header, Validation};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clock::{iso_ms, Clock, Timestamp};

pub const ACCESS_TTL_SECS: i64 = 15 * 60;
pub const REFRESH_TTL_SECS: i64 = 7 * 24 * 3600;
pub const DEFAULT_ISSUER: &str = "qpu-gatekeeper";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenType {
    Access,
    Refresh,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claims {
    pub sub: String,
    pub username: String,
    pub roles: Vec<String>,
    pub iss: String,
    pub iat: i64,
    pub exp: i64,
    pub jti: String,
    pub typ: TokenType,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TokenError {
    #[error("token expired")]
    Expired,
    #[error("token signature invalid")]
    BadSignature,
    #[error("token malformed")]
    Malformed,
    #[error("token revoked")]
    Revoked,
    #[error("invalid credentials")]
    InvalidCredentials,
}

impl TokenError {
    pub fn code(&self) -> &'static str {
        match self {
            TokenError::Expired => "token_expired",
            TokenError::BadSignature => "bad_signature",
            TokenError::Malformed => "malformed_token",
            TokenError::Revoked => "token_revoked",
            TokenError::InvalidCredentials => "invalid_credentials",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenPair {
    pub access_token: String,
    pub refresh_token: String,
    pub token_type: String,
    pub expires_in: i64,
    #[serde(with = "iso_ms")]
    pub expires_at: Timestamp,
}

/// Receives user changes from the accounting service.
pub trait CredentialSink: Send + Sync {
    fn upsert_user(
        &self,
        user_id: &str,
        username: &str,
        roles: &[String],
        disabled: bool,
        password: Option<&str>,
    );
}

#[derive(Debug, Clone)]
struct Credential {
    user_id: String,
    roles: Vec<String>,
    disabled: bool,
    salt: [u8; 16],
    hash: Option<[u8; 32]>,
}

fn hash_password(salt: &[u8; 16], password: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(salt);
    h.update(password.as_bytes());
    h.finalize().into()
}

/// Username-keyed credential table. Passwords are stored as salted SHA-256.
#[derive(Debug, Default)]
pub struct CredentialStore {
    by_username: DashMap<String, Credential>,
}

impl CredentialStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn check(&self, username: &str, password: &str) -> Option<Credential> {
        let cred = self.by_username.get(username)?;
        let expected = cred.hash?;
        (!cred.disabled && hash_password(&cred.salt, password) == expected).then(|| cred.clone())
    }

    fn is_enabled(&self, user_id: &str) -> bool {
        self.by_username
            .iter()
            .any(|c| c.user_id == user_id && !c.disabled)
    }
}

impl CredentialSink for CredentialStore {
    fn upsert_user(
        &self,
        user_id: &str,
        username: &str,
        roles: &[String],
        disabled: bool,
        password: Option<&str>,
    ) {
        let previous = self
            .by_username
            .iter()
            .find(|c| c.user_id == user_id && c.key() != username)
            .map(|c| c.key().clone());
        let carried = previous.and_then(|old| self.by_username.remove(&old)).map(|(_, c)| c);
        let mut entry = self
            .by_username
            .entry(username.to_string())
            .or_insert_with(|| {
                carried.unwrap_or(Credential {
                    user_id: user_id.to_string(),
                    roles: Vec::new(),
                    disabled,
                    salt: [0; 16],
                    hash: None,
                })
            });
        entry.user_id = user_id.to_string();
        entry.roles = roles.to_vec();
        entry.disabled = disabled;
        if let Some(pw) = password {
            rand::thread_rng().fill_bytes(&mut entry.salt);
            entry.hash = Some(hash_password(&entry.salt, pw));
        }
    }
}

pub struct Authn {
    encoding: EncodingKey,
    decoding: DecodingKey,
    issuer: String,
    clock: Arc<dyn Clock>,
    credentials: Arc<CredentialStore>,
    /// Live refresh-token ids and their owners.
    live_refresh: DashMap<String, String>,
}

impl std::fmt::Debug for Authn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Authn").field("issuer", &self.issuer).finish_non_exhaustive()
    }
}

impl Authn {
    pub fn new(signing_key: &[u8], clock: Arc<dyn Clock>) -> Self {
        Self {
            encoding: EncodingKey::from_secret(signing_key),
            decoding: DecodingKey::from_secret(signing_key),
            issuer: DEFAULT_ISSUER.to_string(),
            clock,
            credentials: Arc::new(CredentialStore::new()),
            live_refresh: DashMap::new(),
        }
    }

    pub fn credentials(&self) -> Arc<CredentialStore> {
        self.credentials.clone()
    }

    pub fn login(&self, username: &str, password: &str) -> Result<TokenPair, TokenError> {
        let cred = self
            .credentials
            .check(username, password)
            .ok_or(TokenError::InvalidCredentials)?;
        Ok(self.issue_pair(&cred.user_id, username, &cred.roles))
    }

    pub fn issue_pair(&self, user_id: &str, username: &str, roles: &[String]) -> TokenPair {
        let now = self.clock.now();
        let access = self.sign(user_id, username, roles, TokenType::Access, now, ACCESS_TTL_SECS);
        let refresh = self.sign(user_id, username, roles, TokenType::Refresh, now, REFRESH_TTL_SECS);
        TokenPair {
            access_token: access,
            refresh_token: refresh,
            token_type: "Bearer".into(),
            expires_in: ACCESS_TTL_SECS,
            expires_at: now + Duration::seconds(ACCESS_TTL_SECS),
        }
    }

    fn sign(
        &self,
        user_id: &str,
        username: &str,
        roles: &[String],
        typ: TokenType,
        now: Timestamp,
        ttl: i64,
    ) -> String {
        let claims = Claims {
            sub: user_id.to_string(),
            username: username.to_string(),
            roles: roles.to_vec(),
            iss: self.issuer.clone(),
            iat: now.timestamp(),
            exp: now.timestamp() + ttl,
            jti: uuid::Uuid::new_v4().to_string(),
            typ,
        };
        if typ == TokenType::Refresh {
            self.live_refresh.insert(claims.jti.clone(), claims.sub.clone());
        }
        jsonwebtoken::encode(&Header::new(Algorithm::HS256), &claims, &self.encoding)
            .expect("HS256 encoding cannot fail")
    }

    fn decode(&self, token: &str, expected: TokenType) -> Result<Claims, TokenError> {
        let mut validation = Validation::new(Algorithm::HS256);
        // Expiry is checked against the injected clock below.
        validation.validate_exp = false;
        validation.set_issuer(&[&self.issuer]);
        let data = jsonwebtoken::decode::<Claims>(token, &self.decoding, &validation).map_err(
            |e| match e.kind() {
                ErrorKind::InvalidSignature => TokenError::BadSignature,
                _ => TokenError::Malformed,
            },
        )?;
        let claims = data.claims;
        if claims.typ != expected {
            return Err(TokenError::Malformed);
        }
        if self.clock.now().timestamp() >= claims.exp {
            return Err(TokenError::Expired);
        }
        Ok(claims)
    }

    pub fn validate_access(&self, token: &str) -> Result<Claims, TokenError> {
        self.decode(token, TokenType::Access)
    }

    /// Exchanges a refresh token for a new pair; the presented token is
    /// revoked whether or not the holder is still enabled.
    pub fn refresh(&self, refresh_token: &str) -> Result<TokenPair, TokenError> {
        let claims = self.decode(refresh_token, TokenType::Refresh)?;
        if self.live_refresh.remove(&claims.jti).is_none() {
            return Err(TokenError::Revoked);
        }
        if !self.credentials.is_enabled(&claims.sub) {
            return Err(TokenError::Revoked);
        }
        let roles = self
            .credentials
            .by_username
            .get(&claims.username)
            .map(|c| c.roles.clone())
            .unwrap_or(claims.roles);
        Ok(self.issue_pair(&claims.sub, &claims.username, &roles))
    }

    /// Extracts and validates a `Bearer` access token from an
    /// `Authorization` header value.
    pub fn validate_bearer(&self, header: Option<&str>) -> Result<Claims, TokenError> {
        let token = header
            .and_then(|h| h.strip_prefix("Bearer "))
            .ok_or(TokenError::Malformed)?;
        self.validate_access(token.trim())
    }
}
