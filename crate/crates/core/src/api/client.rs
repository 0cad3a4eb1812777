use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use super::{DecKeysRequest, EncKeysRequest, ErrorDoc, KeyContainer, StatusDoc};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("HTTP {status}: {message}")]
    Http { status: u16, message: String },
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Http { status, .. } => Some(*status),
            ClientError::Transport(_) => None,
        }
    }
}

/// HTTP client for one SAE.
#[derive(Debug, Clone)]
pub struct HttpKeyClient {
    http: reqwest::Client,
    base: String,
    token: String,
}

impl HttpKeyClient {
    /// `endpoint` is the server root, e.g. `http://127.0.0.1:8443`.
    pub fn new(endpoint: &str, token: impl Into<String>) -> Self {
        HttpKeyClient {
            http: reqwest::Client::new(),
            base: endpoint.trim_end_matches('/').to_string(),
            token: token.into(),
        }
    }

    fn url(&self, sae: &str, op: &str) -> String {
        format!("{}/api/v1/keys/{sae}/{op}", self.base)
    }

    async fn finish<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let body = resp.text().await?;
        let message = serde_json::from_str::<ErrorDoc>(&body)
            .map(|e| e.message)
            .unwrap_or(body);
        Err(ClientError::Http {
            status: status.as_u16(),
            message,
        })
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, url: String, body: &B) -> Result<T, ClientError> {
        let resp = self.http.post(url).bearer_auth(&self.token).json(body).send().await?;
        Self::finish(resp).await
    }

    pub async fn status(&self, slave_sae: &str) -> Result<StatusDoc, ClientError> {
        let resp = self
            .http
            .get(self.url(slave_sae, "status"))
            .bearer_auth(&self.token)
            .send()
            .await?;
        Self::finish(resp).await
    }

    pub async fn enc_keys(&self, slave_sae: &str, number: u32, size_bits: u32) -> Result<KeyContainer, ClientError> {
        let req = EncKeysRequest {
            number: Some(number),
            size: Some(size_bits),
        };
        self.post(self.url(slave_sae, "enc_keys"), &req).await
    }

    pub async fn dec_keys(&self, master_sae: &str, key_ids: &[String]) -> Result<KeyContainer, ClientError> {
        self.post(self.url(master_sae, "dec_keys"), &DecKeysRequest::for_ids(key_ids))
            .await
    }
}
