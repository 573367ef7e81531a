//! Coupon issuance and the role-bound trust store.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::cardcodec::{malformed, CanonicalFields, CardKind, CodecError, Envelope, FieldReader, FieldWriter};
use crate::cryptokit::{self, CryptoError, KeyId, PublicKey, SigningKeyPair};
use crate::error::ErrorCode;

pub const COUPON_ID_LEN: usize = 16;

/// 128-bit pseudorandom coupon identifier, rendered as 32 lowercase hex chars.
///
/// The same value is the holder's pseudonym in the registry.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CouponId([u8; COUPON_ID_LEN]);

impl CouponId {
    pub fn generate() -> Result<Self, CryptoError> {
        cryptokit::random_array().map(CouponId)
    }

    pub fn from_bytes(bytes: [u8; COUPON_ID_LEN]) -> Self {
        CouponId(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; COUPON_ID_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for CouponId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for CouponId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CouponId({})", self.to_hex())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("coupon id must be 32 hex characters")]
pub struct InvalidCouponId;

impl FromStr for CouponId {
    type Err = InvalidCouponId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != COUPON_ID_LEN * 2 {
            return Err(InvalidCouponId);
        }
        let mut out = [0u8; COUPON_ID_LEN];
        hex::decode_to_slice(s, &mut out).map_err(|_| InvalidCouponId)?;
        Ok(CouponId(out))
    }
}

impl Serialize for CouponId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for CouponId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Coarse eligibility attributes printed on a coupon.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CouponAttributes {
    pub age_band: String,
    pub job: String,
    pub comorbid: bool,
}

/// Eligibility token `(number, total, city, phase, (age, job, comorbid))`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CouponMessage {
    pub coupon_id: CouponId,
    pub number: u32,
    pub total: u32,
    pub city: String,
    pub phase: String,
    pub age_band: String,
    pub job: String,
    pub comorbid: bool,
}

impl CanonicalFields for CouponMessage {
    fn write_fields(&self, w: &mut FieldWriter) -> Result<(), CodecError> {
        w.raw(self.coupon_id.as_bytes());
        w.u32(self.number);
        w.u32(self.total);
        w.str(&self.city)?;
        w.str(&self.phase)?;
        w.str(&self.age_band)?;
        w.str(&self.job)?;
        w.bool(self.comorbid);
        Ok(())
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        let coupon_id = CouponId(r.array()?);
        let number = r.u32()?;
        let total = r.u32()?;
        if number == 0 || number > total {
            return Err(malformed(format!("coupon number {number} outside 1..={total}")));
        }
        Ok(CouponMessage {
            coupon_id,
            number,
            total,
            city: r.str()?,
            phase: r.str()?,
            age_band: r.str()?,
            job: r.str()?,
            comorbid: r.bool()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthorityError {
    #[error("batch of {total} coupons needs {total} attribute tuples, got {given}")]
    AttrCountMismatch { total: u32, given: usize },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

impl AuthorityError {
    pub fn code(&self) -> ErrorCode {
        match self {
            AuthorityError::AttrCountMismatch { .. } => ErrorCode::AttrCountMismatch,
            AuthorityError::Codec(e) => e.code(),
            AuthorityError::Crypto(e) => e.code(),
        }
    }
}

/// Signs `total` coupons numbered `1..=total` with fresh pseudorandom ids.
pub fn issue_coupon_batch(
    authority_key: &SigningKeyPair,
    city: &str,
    phase: &str,
    attrs: &[CouponAttributes],
    total: u32,
) -> Result<Vec<Envelope>, AuthorityError> {
    if total == 0 || attrs.len() != total as usize {
        return Err(AuthorityError::AttrCountMismatch {
            total,
            given: attrs.len(),
        });
    }
    let mut ids = HashSet::with_capacity(attrs.len());
    let mut out = Vec::with_capacity(attrs.len());
    for (number, attr) in (1..=total).zip(attrs) {
        let coupon_id = loop {
            let id = CouponId::generate()?;
            if ids.insert(id) {
                break id;
            }
        };
        let coupon = CouponMessage {
            coupon_id,
            number,
            total,
            city: city.to_owned(),
            phase: phase.to_owned(),
            age_band: attr.age_band.clone(),
            job: attr.job.clone(),
            comorbid: attr.comorbid,
        };
        out.push(Envelope::sign(coupon, authority_key)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Authority,
    Clinic,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Authority => "authority",
            Role::Clinic => "clinic",
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
        match s.trim().to_ascii_lowercase().as_str() {
            "authority" => Ok(Role::Authority),
            "clinic" => Ok(Role::Clinic),
            other => Err(format!("unknown role {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrustError {
    #[error("key {0} is not in the trust store")]
    UnknownKey(KeyId),
    #[error("key {key_id} is registered as {actual}, expected {expected}")]
    WrongRole {
        key_id: KeyId,
        expected: Role,
        actual: Role,
    },
    #[error("key {key_id} is already registered as {existing}")]
    RoleConflict { key_id: KeyId, existing: Role },
    #[error("signature does not verify")]
    BadSignature,
    #[error("expected a {expected} card, got {actual}")]
    WrongKind { expected: CardKind, actual: CardKind },
}

impl TrustError {
    pub fn code(&self) -> ErrorCode {
        match self {
            TrustError::UnknownKey(_) => ErrorCode::UnknownKey,
            TrustError::WrongRole { .. } => ErrorCode::WrongRole,
            TrustError::RoleConflict { .. } => ErrorCode::RoleConflict,
            TrustError::BadSignature => ErrorCode::BadSignature,
            TrustError::WrongKind { .. } => ErrorCode::WrongKind,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrustedKey {
    pub public: PublicKey,
    pub role: Role,
}

#[derive(Debug, thiserror::Error)]
pub enum TrustStoreFileError {
    #[error("trust store I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("trust store line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Public keys the verifying parties accept, keyed by key id and bound to a role.
///
/// Mutation is single-writer; share behind a lock if needed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrustStore {
    entries: BTreeMap<KeyId, TrustedKey>,
}

impl TrustStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&KeyId, &TrustedKey)> {
        self.entries.iter()
    }

    /// Idempotent for the same role; a second role for one key is refused.
    pub fn register(&mut self, role: Role, public: PublicKey) -> Result<KeyId, TrustError> {
        let key_id = public.key_id();
        match self.entries.get(&key_id) {
            Some(existing) if existing.role != role => Err(TrustError::RoleConflict {
                key_id,
                existing: existing.role,
            }),
            Some(_) => Ok(key_id),
            None => {
                self.entries.insert(key_id, TrustedKey { public, role });
                Ok(key_id)
            }
        }
    }

    pub fn lookup(&self, key_id: &KeyId, expected_role: Role) -> Result<PublicKey, TrustError> {
        let entry = self
            .entries
            .get(key_id)
            .ok_or(TrustError::UnknownKey(*key_id))?;
        if entry.role != expected_role {
            return Err(TrustError::WrongRole {
                key_id: *key_id,
                expected: expected_role,
                actual: entry.role,
            });
        }
        Ok(entry.public)
    }

    /// Checks kind, signer role and signature of an envelope.
    pub fn verify_envelope(
        &self,
        envelope: &Envelope,
        expected_kind: CardKind,
        role: Role,
    ) -> Result<(), TrustError> {
        if envelope.kind() != expected_kind {
            return Err(TrustError::WrongKind {
                expected: expected_kind,
                actual: envelope.kind(),
            });
        }
        let public = self.lookup(&envelope.signer_key_id, role)?;
        if envelope.verify_with(&public) {
            Ok(())
        } else {
            Err(TrustError::BadSignature)
        }
    }

    /// One `role,key_id_hex,public_key_hex` record per line.
    pub fn to_file_string(&self) -> String {
        self.entries
            .iter()
            .map(|(id, k)| format!("{},{},{}\n", k.role, id.to_hex(), k.public.to_hex()))
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self, TrustStoreFileError> {
        let mut store = TrustStore::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| TrustStoreFileError::Parse { line: i + 1, reason };
            let mut parts = line.split(',');
            let (Some(role), Some(id), Some(public), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(err("expected role,key_id_hex,public_key_hex".into()));
            };
            let role: Role = role.parse().map_err(err)?;
            let id = KeyId::from_hex(id).ok_or_else(|| err("bad key id".into()))?;
            let public = PublicKey::from_hex(public).ok_or_else(|| err("bad public key".into()))?;
            if public.key_id() != id {
                return Err(err(format!("key id {id} does not match public key")));
            }
            store.register(role, public).map_err(|e| err(e.to_string()))?;
        }
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self, TrustStoreFileError> {
        match std::fs::read_to_string(path) {
            Ok(text) => Self::parse(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::new()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), TrustStoreFileError> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }
}
