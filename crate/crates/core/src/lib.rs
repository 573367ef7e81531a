//! Signed QR-card protocol for phased vaccine distribution.
//!
//! Four cards travel as `SPC1:` Base45 text: an issuer-signed [`CouponMessage`]
//! granting eligibility, and clinic-signed [`BadgeMessage`], [`PasskeyCard`] and
//! [`StatusMessage`] cards produced at the first and second dose. PII exists
//! only sealed inside the holder's Passkey; the registry sees the coupon's
//! pseudorandom id and nothing else.

pub mod authority;
pub mod base45;
pub mod cardcodec;
pub mod clinic;
pub mod cryptokit;
pub mod error;
pub mod registry;
pub mod verifier;

pub use authority::{issue_coupon_batch, CouponAttributes, CouponId, CouponMessage, Role, TrustError, TrustStore};
pub use cardcodec::{from_card_text, to_card_text, CardKind, CardMessage, CardText, CodecError, Envelope};
pub use clinic::{
    administer_first_dose, administer_second_dose, check_in, BadgeMessage, ClinicError, DoseInfo, PasskeyCard, Pii,
    RedemptionLedger, RedemptionState, StatusMessage, VisitDetails,
};
pub use cryptokit::{generate_signing_keypair, SigningKeyPair};
pub use error::ErrorCode;
pub use registry::{Dimension, Registry, RegistryRecord, SymptomReport};
pub use verifier::{disclose_full, disclose_name, verify_status, DisclosureLevel, DisclosureResult};
