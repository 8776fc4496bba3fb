//! Typed HTTP client for the session service.

use mcle_core::Label;
use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mcle_service::{
    ClassInfo, CreateRequest, CreateResponse, CurvePoint, LabelResponse, MetaResponse, ProjectedSample, QueryResponse,
    StateResponse,
};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("{status} {code}: {message}")]
    Api {
        status: StatusCode,
        code: String,
        message: String,
        field: Option<String>,
    },
    #[error("unexpected response body: {0}")]
    Decode(#[from] serde_json::Error),
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            ClientError::Transport(e) => e.status(),
            ClientError::Decode(_) => None,
        }
    }
}

pub type Result<T, E = ClientError> = std::result::Result<T, E>;

#[derive(Deserialize)]
struct ErrorEnvelope {
    error: ErrorBody,
}

#[derive(Deserialize)]
struct ErrorBody {
    code: String,
    message: String,
    #[serde(default)]
    field: Option<String>,
}

#[derive(Serialize)]
struct LabelBody {
    sample_id: usize,
    label: i8,
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Client {
        Client {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn send(&self, method: Method, path: &str, body: Option<Vec<u8>>) -> Result<(StatusCode, Vec<u8>)> {
        let mut req = self.http.request(method, format!("{}{}", self.base, path));
        if let Some(body) = body {
            req = req.header("content-type", "application/json").body(body);
        }
        let resp = req.send().await?;
        let status = resp.status();
        let bytes = resp.bytes().await?.to_vec();
        if !status.is_success() {
            return Err(match serde_json::from_slice::<ErrorEnvelope>(&bytes) {
                Ok(env) => ClientError::Api {
                    status,
                    code: env.error.code,
                    message: env.error.message,
                    field: env.error.field,
                },
                Err(_) => ClientError::Api {
                    status,
                    code: "http".into(),
                    message: String::from_utf8_lossy(&bytes).into_owned(),
                    field: None,
                },
            });
        }
        Ok((status, bytes))
    }

    async fn json<T: DeserializeOwned>(&self, method: Method, path: &str, body: Option<Vec<u8>>) -> Result<T> {
        let (_, bytes) = self.send(method, path, body).await?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub async fn health(&self) -> Result<()> {
        self.send(Method::GET, "/healthz", None).await.map(|_| ())
    }

    pub async fn meta(&self) -> Result<MetaResponse> {
        self.json(Method::GET, "/meta", None).await
    }

    pub async fn create_session(&self, req: &CreateRequest) -> Result<CreateResponse> {
        self.json(Method::POST, "/sessions", Some(serde_json::to_vec(req)?)).await
    }

    pub async fn query(&self, session: &str) -> Result<QueryResponse> {
        self.json(Method::GET, &format!("/sessions/{session}/query"), None).await
    }

    pub async fn label(&self, session: &str, sample_id: usize, label: Label) -> Result<LabelResponse> {
        let body = serde_json::to_vec(&LabelBody {
            sample_id,
            label: label.as_i8(),
        })?;
        self.json(Method::POST, &format!("/sessions/{session}/label"), Some(body))
            .await
    }

    pub async fn state(&self, session: &str) -> Result<StateResponse> {
        self.json(Method::GET, &format!("/sessions/{session}/state"), None).await
    }
}
