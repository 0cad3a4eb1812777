//! ETSI GS QKD 014 style key delivery: the service logic, its HTTP front
//! end and a matching client.
//!
//! Deviations from the standard interface: key requests are POST with JSON
//! bodies, and SAEs authenticate with static bearer tokens instead of
//! mutual TLS.

mod client;
mod server;

use std::sync::{Arc, Mutex, MutexGuard};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

pub use client::{ClientError, HttpKeyClient};
pub use server::{router, serve_api};

use crate::kms::{KmsError, KmsNetwork};
use crate::topology::SaeSpec;

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatusDoc {
    pub source_KME_ID: String,
    pub target_KME_ID: String,
    pub master_SAE_ID: String,
    pub slave_SAE_ID: String,
    pub key_size: u32,
    pub stored_key_count: u64,
    pub max_key_count: u64,
    pub max_key_per_request: u64,
    pub max_key_size: u32,
    pub min_key_size: u32,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyItem {
    pub key_ID: String,
    pub key: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyContainer {
    pub keys: Vec<KeyItem>,
}

impl KeyContainer {
    /// Parsed key ids and raw key bytes.
    pub fn decode(&self) -> Result<Vec<(Uuid, Vec<u8>)>, ApiError> {
        self.keys
            .iter()
            .map(|k| {
                let id = Uuid::parse_str(&k.key_ID).map_err(|_| ApiError::BadRequest(format!("bad key_ID {}", k.key_ID)))?;
                let bytes = BASE64
                    .decode(&k.key)
                    .map_err(|_| ApiError::BadRequest(format!("bad base64 for {}", k.key_ID)))?;
                Ok((id, bytes))
            })
            .collect()
    }

    pub fn key_ids(&self) -> Vec<String> {
        self.keys.iter().map(|k| k.key_ID.clone()).collect()
    }
}

/// Body of an enc_keys request. Other standard fields are accepted and
/// ignored.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncKeysRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub number: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<u32>,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyIdRef {
    pub key_ID: String,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecKeysRequest {
    pub key_IDs: Vec<KeyIdRef>,
}

impl DecKeysRequest {
    pub fn for_ids<S: ToString>(ids: &[S]) -> Self {
        DecKeysRequest {
            key_IDs: ids.iter().map(|i| KeyIdRef { key_ID: i.to_string() }).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorDoc {
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ApiError {
    #[error("missing or unknown bearer token")]
    Unauthorized,
    #[error("unknown SAE {0}")]
    UnknownSae(String),
    #[error("unknown key_ID {0}")]
    UnknownKeyId(String),
    #[error("key_ID {0} already redeemed")]
    AlreadyRedeemed(String),
    #[error("key size {0} rejected")]
    SizeRejected(u32),
    #[error("{0}")]
    BadRequest(String),
    #[error("insufficient keys: {0}")]
    InsufficientKeys(String),
}

impl ApiError {
    pub fn http_status(&self) -> u16 {
        match self {
            ApiError::Unauthorized => 401,
            ApiError::UnknownSae(_) | ApiError::UnknownKeyId(_) => 404,
            ApiError::AlreadyRedeemed(_) | ApiError::SizeRejected(_) | ApiError::BadRequest(_) => 400,
            ApiError::InsufficientKeys(_) => 503,
        }
    }
}

impl From<KmsError> for ApiError {
    fn from(e: KmsError) -> Self {
        match e {
            KmsError::SizeRejected { bits } => ApiError::SizeRejected(bits),
            KmsError::UnknownSae(s) => ApiError::UnknownSae(s),
            KmsError::UnknownKeyId(id) => ApiError::UnknownKeyId(id.to_string()),
            KmsError::AlreadyRedeemed(id) => ApiError::AlreadyRedeemed(id.to_string()),
            other => ApiError::InsufficientKeys(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApiConfig {
    /// Relay new keys synchronously when the inventory cannot serve a request.
    pub relay_on_demand: bool,
}

impl Default for ApiConfig {
    fn default() -> Self {
        ApiConfig { relay_on_demand: true }
    }
}

/// Shared handle to the KMS network; every mutation is serialized by its lock.
pub type SharedKms = Arc<Mutex<KmsNetwork>>;

/// Request handling shared by the HTTP server and in-process clients. Holds
/// no key state of its own.
#[derive(Clone)]
pub struct KeyDeliveryService {
    kms: SharedKms,
    config: ApiConfig,
}

impl KeyDeliveryService {
    pub fn new(kms: SharedKms, config: ApiConfig) -> Self {
        KeyDeliveryService { kms, config }
    }

    pub fn kms(&self) -> &SharedKms {
        &self.kms
    }

    fn lock(&self) -> MutexGuard<'_, KmsNetwork> {
        self.kms.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn authenticate(kms: &KmsNetwork, token: Option<&str>) -> Result<SaeSpec, ApiError> {
        token
            .and_then(|t| kms.topology().sae_by_token(t))
            .cloned()
            .ok_or(ApiError::Unauthorized)
    }

    fn known_sae(kms: &KmsNetwork, sae: &str) -> Result<(), ApiError> {
        match kms.topology().sae(sae) {
            Some(_) => Ok(()),
            None => Err(ApiError::UnknownSae(sae.to_string())),
        }
    }

    /// Status of the key stream from the caller (master) to `slave_sae`.
    pub fn status(&self, token: Option<&str>, slave_sae: &str) -> Result<StatusDoc, ApiError> {
        let kms = self.lock();
        let master = Self::authenticate(&kms, token)?;
        Self::known_sae(&kms, slave_sae)?;
        let inv = kms.pair_inventory(&master.sae_id, slave_sae)?;
        let cfg = kms.config();
        Ok(StatusDoc {
            source_KME_ID: inv.source_node,
            target_KME_ID: inv.target_node,
            master_SAE_ID: master.sae_id,
            slave_SAE_ID: slave_sae.to_string(),
            key_size: cfg.default_key_size_bits,
            stored_key_count: inv.stored_key_count as u64,
            max_key_count: cfg.max_key_count as u64,
            max_key_per_request: cfg.max_keys_per_request as u64,
            max_key_size: cfg.max_key_size_bits,
            min_key_size: cfg.min_key_size_bits,
        })
    }

    /// Issues keys to the caller (master) for use with `slave_sae`.
    pub fn enc_keys(&self, token: Option<&str>, slave_sae: &str, req: &EncKeysRequest) -> Result<KeyContainer, ApiError> {
        let mut kms = self.lock();
        let master = Self::authenticate(&kms, token)?;
        Self::known_sae(&kms, slave_sae)?;
        let size = req.size.unwrap_or(kms.config().default_key_size_bits);
        kms.config().check_size(size)?;
        let number = req.number.unwrap_or(1);
        if number > kms.config().max_keys_per_request {
            return Err(ApiError::BadRequest(format!(
                "number {number} exceeds max_key_per_request {}",
                kms.config().max_keys_per_request
            )));
        }
        let keys = kms.issue_to_master(&master.sae_id, slave_sae, number as usize, size, self.config.relay_on_demand)?;
        Ok(container(keys))
    }

    /// Releases keys the master already holds to the caller (slave).
    pub fn dec_keys(&self, token: Option<&str>, master_sae: &str, req: &DecKeysRequest) -> Result<KeyContainer, ApiError> {
        let mut kms = self.lock();
        let slave = Self::authenticate(&kms, token)?;
        Self::known_sae(&kms, master_sae)?;
        if req.key_IDs.is_empty() {
            return Err(ApiError::BadRequest("key_IDs must not be empty".into()));
        }
        let ids = req
            .key_IDs
            .iter()
            .map(|k| Uuid::parse_str(&k.key_ID).map_err(|_| ApiError::UnknownKeyId(k.key_ID.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let keys = kms.redeem_at_slave(&slave.sae_id, master_sae, &ids)?;
        Ok(container(keys))
    }
}

fn container<B: AsRef<[u8]>>(keys: Vec<(Uuid, B)>) -> KeyContainer {
    KeyContainer {
        keys: keys
            .into_iter()
            .map(|(id, bytes)| KeyItem {
                key_ID: id.to_string(),
                key: BASE64.encode(bytes.as_ref()),
            })
            .collect(),
    }
}

/// Blocking key access as seen by one SAE.
pub trait KeySource {
    /// Fetches fresh keys shared with `slave_sae`; the caller is the master.
    fn enc_keys(&mut self, slave_sae: &str, number: u32, size_bits: u32) -> Result<KeyContainer, ApiError>;
    /// Redeems keys the master obtained; the caller is the slave.
    fn dec_keys(&mut self, master_sae: &str, key_ids: &[String]) -> Result<KeyContainer, ApiError>;
}

/// In-process client bound to one SAE token.
#[derive(Clone)]
pub struct LocalKeyClient {
    service: KeyDeliveryService,
    token: String,
}

impl LocalKeyClient {
    pub fn new(service: KeyDeliveryService, token: impl Into<String>) -> Self {
        LocalKeyClient {
            service,
            token: token.into(),
        }
    }

    pub fn status(&self, slave_sae: &str) -> Result<StatusDoc, ApiError> {
        self.service.status(Some(&self.token), slave_sae)
    }
}

impl KeySource for LocalKeyClient {
    fn enc_keys(&mut self, slave_sae: &str, number: u32, size_bits: u32) -> Result<KeyContainer, ApiError> {
        let req = EncKeysRequest {
            number: Some(number),
            size: Some(size_bits),
        };
        self.service.enc_keys(Some(&self.token), slave_sae, &req)
    }

    fn dec_keys(&mut self, master_sae: &str, key_ids: &[String]) -> Result<KeyContainer, ApiError> {
        self.service
            .dec_keys(Some(&self.token), master_sae, &DecKeysRequest::for_ids(key_ids))
    }
}
