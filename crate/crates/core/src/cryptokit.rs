//! Signing keys, signatures, passkey commitments and sealed boxes.
//!
//! Ed25519 signs every card, SHA-256 derives key ids and passkey
//! commitments, and ChaCha20-Poly1305 seals PII and visit details.

use std::fmt;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Nonce};
use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use sha2::{Digest, Sha256};
use thiserror::Error;
use zeroize::{Zeroize, ZeroizeOnDrop};

use crate::clinic::Pii;
use crate::error::ErrorCode;

pub const KEY_ID_LEN: usize = 8;
pub const PUBLIC_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;
pub const SALT_LEN: usize = 16;
pub const COMMITMENT_LEN: usize = 32;
pub const SYMMETRIC_KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;

/// Separator between fields of the commitment preimage.
const UNIT_SEPARATOR: u8 = 0x1F;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("system randomness source unavailable")]
    RandomnessUnavailable,
    #[error("sealed box failed to open")]
    DecryptFailed,
}

impl CryptoError {
    pub fn code(&self) -> ErrorCode {
        match self {
            CryptoError::RandomnessUnavailable => ErrorCode::RandomnessUnavailable,
            CryptoError::DecryptFailed => ErrorCode::DecryptFailed,
        }
    }
}

pub(crate) fn random_array<const N: usize>() -> Result<[u8; N], CryptoError> {
    let mut out = [0u8; N];
    getrandom::getrandom(&mut out).map_err(|_| CryptoError::RandomnessUnavailable)?;
    Ok(out)
}

macro_rules! hex_newtype {
    ($name:ident, $len:expr) => {
        impl $name {
            pub const LEN: usize = $len;

            pub fn from_bytes(bytes: [u8; $len]) -> Self {
                Self(bytes)
            }

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn from_hex(s: &str) -> Option<Self> {
                let mut out = [0u8; $len];
                hex::decode_to_slice(s, &mut out).ok()?;
                Some(Self(out))
            }
        }
    };
}

/// First 8 bytes of SHA-256 over a verify key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeyId([u8; KEY_ID_LEN]);
hex_newtype!(KeyId, KEY_ID_LEN);

impl KeyId {
    pub fn derive(public: &PublicKey) -> Self {
        let digest = Sha256::digest(public.as_bytes());
        let mut id = [0u8; KEY_ID_LEN];
        id.copy_from_slice(&digest[..KEY_ID_LEN]);
        KeyId(id)
    }
}

impl fmt::Debug for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyId({})", self.to_hex())
    }
}

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Raw Ed25519 verify key bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PublicKey([u8; PUBLIC_KEY_LEN]);
hex_newtype!(PublicKey, PUBLIC_KEY_LEN);

impl PublicKey {
    pub fn key_id(&self) -> KeyId {
        KeyId::derive(self)
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.to_hex())
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature([u8; SIGNATURE_LEN]);
hex_newtype!(Signature, SIGNATURE_LEN);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", self.to_hex())
    }
}

/// An Ed25519 signing key together with its public half and key id.
///
/// The seed is only reachable through [`SigningKeyPair::seed`], used by the
/// key store. `Debug` never prints it.
#[derive(Clone)]
pub struct SigningKeyPair {
    signing: SigningKey,
    public: PublicKey,
    key_id: KeyId,
}

impl SigningKeyPair {
    pub fn from_seed(seed: &[u8; 32]) -> Self {
        let signing = SigningKey::from_bytes(seed);
        let public = PublicKey(signing.verifying_key().to_bytes());
        let key_id = public.key_id();
        SigningKeyPair {
            signing,
            public,
            key_id,
        }
    }

    pub fn public(&self) -> PublicKey {
        self.public
    }

    pub fn key_id(&self) -> KeyId {
        self.key_id
    }

    pub fn seed(&self) -> [u8; 32] {
        self.signing.to_bytes()
    }
}

impl fmt::Debug for SigningKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigningKeyPair")
            .field("key_id", &self.key_id)
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

pub fn generate_signing_keypair() -> Result<SigningKeyPair, CryptoError> {
    let mut seed = random_array::<32>()?;
    let pair = SigningKeyPair::from_seed(&seed);
    seed.zeroize();
    Ok(pair)
}

pub fn sign(key: &SigningKeyPair, data: &[u8]) -> Signature {
    Signature(key.signing.sign(data).to_bytes())
}

/// Strict Ed25519 verification. Malformed keys or signatures yield `false`.
pub fn verify(public: &PublicKey, data: &[u8], signature: &Signature) -> bool {
    let Ok(key) = VerifyingKey::from_bytes(public.as_bytes()) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(signature.as_bytes());
    key.verify_strict(data, &sig).is_ok()
}

#[derive(Clone, PartialEq, Eq, Zeroize, ZeroizeOnDrop)]
pub struct Salt([u8; SALT_LEN]);
hex_newtype!(Salt, SALT_LEN);

impl Salt {
    pub fn generate() -> Result<Self, CryptoError> {
        random_array().map(Salt)
    }
}

impl fmt::Debug for Salt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Salt(..)")
    }
}

/// SHA-256 binding of a holder's PII and salt.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Commitment([u8; COMMITMENT_LEN]);
hex_newtype!(Commitment, COMMITMENT_LEN);

impl fmt::Debug for Commitment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Commitment({})", self.to_hex())
    }
}

/// `SHA-256(name ‖ 0x1F ‖ dob ‖ 0x1F ‖ sex ‖ 0x1F ‖ salt)`, with an absent
/// sex encoded as the empty string.
pub fn commit_passkey(pii: &Pii, salt: &Salt) -> Commitment {
    let mut h = Sha256::new();
    h.update(pii.name.as_bytes());
    h.update([UNIT_SEPARATOR]);
    h.update(pii.dob.as_bytes());
    h.update([UNIT_SEPARATOR]);
    h.update(pii.sex.as_deref().unwrap_or("").as_bytes());
    h.update([UNIT_SEPARATOR]);
    h.update(salt.as_bytes());
    Commitment(h.finalize().into())
}

#[derive(Clone, PartialEq, Eq, Zeroize, ZeroizeOnDrop)]
pub struct SymmetricKey([u8; SYMMETRIC_KEY_LEN]);
hex_newtype!(SymmetricKey, SYMMETRIC_KEY_LEN);

impl SymmetricKey {
    pub fn generate() -> Result<Self, CryptoError> {
        random_array().map(SymmetricKey)
    }
}

impl fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SymmetricKey(..)")
    }
}

/// Nonce plus ChaCha20-Poly1305 ciphertext (tag appended).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedBox {
    pub nonce: [u8; NONCE_LEN],
    pub ciphertext: Vec<u8>,
}

pub fn seal(
    key: &SymmetricKey,
    plaintext: &[u8],
    associated_data: &[u8],
) -> Result<SealedBox, CryptoError> {
    let nonce = random_array::<NONCE_LEN>()?;
    let cipher = ChaCha20Poly1305::new(key.as_bytes().into());
    let ciphertext = cipher
        .encrypt(
            Nonce::from_slice(&nonce),
            Payload {
                msg: plaintext,
                aad: associated_data,
            },
        )
        // encryption only fails for plaintexts beyond the 256 GiB limit
        .expect("ChaCha20-Poly1305 encryption of an in-memory buffer");
    Ok(SealedBox { nonce, ciphertext })
}

pub fn open(
    key: &SymmetricKey,
    sealed: &SealedBox,
    associated_data: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    let cipher = ChaCha20Poly1305::new(key.as_bytes().into());
    cipher
        .decrypt(
            Nonce::from_slice(&sealed.nonce),
            Payload {
                msg: &sealed.ciphertext,
                aad: associated_data,
            },
        )
        .map_err(|_| CryptoError::DecryptFailed)
}
