use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::record::timestamp;
use crate::digest::HexHasher;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Reader,
    Publisher,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Reader => "reader",
            Role::Publisher => "publisher",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reader" => Ok(Role::Reader),
            "publisher" => Ok(Role::Publisher),
            other => Err(format!("unknown role {other:?} (expected reader or publisher)")),
        }
    }
}

/// A freshly issued token. The plain token is only ever held by the caller.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credential {
    pub token: String,
    pub account: String,
    pub role: Role,
    #[serde(with = "timestamp")]
    pub expires_at: DateTime<Utc>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Principal {
    pub account: String,
    pub role: Role,
}

/// One line of the token table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub(crate) struct TokenEntry {
    pub account: String,
    pub role: Role,
    pub salt: String,
    pub hash: String,
    #[serde(with = "timestamp")]
    pub expires_at: DateTime<Utc>,
}

pub(crate) fn salted_hash(salt: &str, token: &str) -> String {
    let mut h = HexHasher::new();
    h.update_framed(salt.as_bytes());
    h.update_framed(token.as_bytes());
    h.finish()
}

/// 256 random bits as 64 hex characters.
pub(crate) fn random_hex32() -> String {
    hex::encode(rand::rng().random::<[u8; 32]>())
}

pub(crate) fn random_salt() -> String {
    hex::encode(rand::rng().random::<[u8; 16]>())
}

/// Compares without an early exit on the first differing byte.
pub(crate) fn constant_time_eq(a: &str, b: &str) -> bool {
    a.len() == b.len() && a.bytes().zip(b.bytes()).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}
