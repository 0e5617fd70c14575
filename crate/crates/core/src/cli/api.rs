use std::path::PathBuf;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::{Method, StatusCode};
use serde_json::Value;
use url::Url;

use super::tokens::TokensFile;
use crate::authn::TokenPair;

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub exit_code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(exit_code: i32, message: impl Into<String>) -> Self {
        Self {
            exit_code,
            message: message.into(),
        }
    }

    fn from_status(status: StatusCode, body: &str) -> Self {
        let exit_code = match status.as_u16() {
            401 => 1,
            400 => 2,
            403 => 3,
            404 => 4,
            409 => 5,
            _ => 1,
        };
        let detail = serde_json::from_str::<Value>(body)
            .ok()
            .map(|v| match (v["error"].as_str(), v["detail"].as_str()) {
                (Some(e), Some(d)) => format!("{e}: {d}"),
                (Some(e), None) => e.to_string(),
                _ => body.to_string(),
            })
            .unwrap_or_else(|| body.to_string());
        Self::new(exit_code, format!("{status}: {detail}"))
    }
}

fn network(e: reqwest::Error) -> CliError {
    CliError::new(1, format!("request failed: {e}"))
}

pub fn http_client() -> Client {
    Client::builder()
        .timeout(Duration::from_secs(30))
        .build()
        .expect("http client")
}

/// Password grant against `<server>/auth/token`.
pub fn password_grant(server: &Url, username: &str, password: &str) -> Result<(Url, TokenPair), CliError> {
    let auth = server.join("auth/").map_err(|e| CliError::new(2, e.to_string()))?;
    let resp = http_client()
        .post(auth.join("token").expect("static path"))
        .json(&serde_json::json!({"username": username, "password": password}))
        .send()
        .map_err(network)?;
    let status = resp.status();
    let body = resp.text().map_err(network)?;
    if !status.is_success() {
        return Err(CliError::from_status(status, &body));
    }
    let pair = serde_json::from_str(&body).map_err(|e| CliError::new(1, e.to_string()))?;
    Ok((auth, pair))
}

/// Thin JSON client for the accounting API under `<server>/api/`.
pub struct ApiClient {
    api: Url,
    http: Client,
    token: String,
    tokens: Option<(TokensFile, PathBuf)>,
}

impl ApiClient {
    pub fn new(server: &Url, token: Option<String>, tokens_path: PathBuf) -> Result<Self, CliError> {
        let api = server.join("api/").map_err(|e| CliError::new(2, e.to_string()))?;
        let (token, tokens) = match token {
            Some(t) => (t, None),
            None => {
                let file = TokensFile::load(&tokens_path).map_err(|e| {
                    CliError::new(1, format!("cannot read {}: {e}; run `login` first", tokens_path.display()))
                })?;
                (file.access_token.clone(), Some((file, tokens_path)))
            }
        };
        Ok(Self {
            api,
            http: http_client(),
            token,
            tokens,
        })
    }

    fn refresh(&mut self) -> Result<bool, CliError> {
        let Some((file, path)) = &mut self.tokens else {
            return Ok(false);
        };
        let auth = Url::parse(&file.auth_server_url).map_err(|e| CliError::new(1, e.to_string()))?;
        let resp = self
            .http
            .post(auth.join("refresh").expect("static path"))
            .json(&serde_json::json!({"refresh_token": file.refresh_token}))
            .send()
            .map_err(network)?;
        if !resp.status().is_success() {
            return Ok(false);
        }
        let pair: TokenPair = resp.json().map_err(network)?;
        file.access_token = pair.access_token.clone();
        file.refresh_token = pair.refresh_token;
        file.expires_at = Some(pair.expires_at);
        file.save(path)
            .map_err(|e| CliError::new(1, format!("cannot update {}: {e}", path.display())))?;
        self.token = pair.access_token;
        Ok(true)
    }

    pub fn call(
        &mut self,
        method: Method,
        path: &str,
        query: &[(&str, String)],
        body: Option<&Value>,
    ) -> Result<Value, CliError> {
        let url = self.api.join(path).map_err(|e| CliError::new(2, e.to_string()))?;
        let mut refreshed = false;
        loop {
            let mut req = self.http.request(method.clone(), url.clone()).bearer_auth(&self.token).query(query);
            if let Some(b) = body {
                req = req.json(b);
            }
            let resp = req.send().map_err(network)?;
            let status = resp.status();
            let text = resp.text().map_err(network)?;
            if status == StatusCode::UNAUTHORIZED && !refreshed && self.refresh()? {
                refreshed = true;
                continue;
            }
            if !status.is_success() {
                return Err(CliError::from_status(status, &text));
            }
            if text.is_empty() {
                return Ok(Value::Null);
            }
            return serde_json::from_str(&text).map_err(|e| CliError::new(1, format!("bad response: {e}")));
        }
    }

    pub fn get(&mut self, path: &str, query: &[(&str, String)]) -> Result<Value, CliError> {
        self.call(Method::GET, path, query, None)
    }

    pub fn post(&mut self, path: &str, body: &Value) -> Result<Value, CliError> {
        self.call(Method::POST, path, &[], Some(body))
    }

    pub fn patch(&mut self, path: &str, body: &Value) -> Result<Value, CliError> {
        self.call(Method::PATCH, path, &[], Some(body))
    }

    pub fn delete(&mut self, path: &str) -> Result<Value, CliError> {
        self.call(Method::DELETE, path, &[], None)
    }
}
