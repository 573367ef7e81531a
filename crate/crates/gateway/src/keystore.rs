//! Local signing keys: one `role,key_id_hex,seed_hex` line per key.
//!
//! This file holds secrets. It is never echoed to stdout, HTTP responses or logs.

use std::path::Path;

use thiserror::Error;
use vaxcard_core::cryptokit::{generate_signing_keypair, CryptoError, KeyId};
use vaxcard_core::{Role, SigningKeyPair};

#[derive(Debug, Error)]
pub enum KeystoreError {
    #[error("keystore I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("keystore line {0} is malformed")]
    Parse(usize),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Debug, Default)]
pub struct Keystore {
    keys: Vec<(Role, SigningKeyPair)>,
}

impl Keystore {
    pub fn parse(text: &str) -> Result<Self, KeystoreError> {
        let mut keys = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<_> = line.split(',').collect();
            let [role, id, seed] = parts[..] else {
                return Err(KeystoreError::Parse(i + 1));
            };
            let role: Role = role.parse().map_err(|_| KeystoreError::Parse(i + 1))?;
            let mut bytes = [0u8; 32];
            hex::decode_to_slice(seed, &mut bytes).map_err(|_| KeystoreError::Parse(i + 1))?;
            let pair = SigningKeyPair::from_seed(&bytes);
            if KeyId::from_hex(id) != Some(pair.key_id()) {
                return Err(KeystoreError::Parse(i + 1));
            }
            keys.push((role, pair));
        }
        Ok(Keystore { keys })
    }

    pub fn load(path: &Path) -> Result<Self, KeystoreError> {
        match std::fs::read_to_string(path) {
            Ok(text) => Self::parse(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn to_file_string(&self) -> String {
        self.keys
            .iter()
            .map(|(role, k)| format!("{role},{},{}\n", k.key_id(), hex::encode(k.seed())))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), KeystoreError> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn generate(&mut self, role: Role) -> Result<&SigningKeyPair, KeystoreError> {
        self.keys.push((role, generate_signing_keypair()?));
        Ok(&self.keys.last().expect("just pushed").1)
    }

    pub fn insert(&mut self, role: Role, key: SigningKeyPair) {
        self.keys.push((role, key));
    }

    /// The most recently added key for `role`.
    pub fn current(&self, role: Role) -> Option<&SigningKeyPair> {
        self.keys.iter().rev().find(|(r, _)| *r == role).map(|(_, k)| k)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Role, &SigningKeyPair)> {
        self.keys.iter().map(|(r, k)| (*r, k))
    }
}
