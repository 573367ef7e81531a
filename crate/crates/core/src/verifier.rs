//! Third-party verification at three disclosure levels.
//!
//! Nothing here persists: every function is a pure check over the cards
//! handed in and the trust store.

use serde::Serialize;
use thiserror::Error;

use crate::authority::{CouponId, Role, TrustError, TrustStore};
use crate::cardcodec::{CardKind, CardMessage, CodecError, Envelope};
use crate::clinic::{expect_message, verify_binding, BindingFailure, DoseInfo, OpenError, Pii, VisitDetails};
use crate::error::ErrorCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum DisclosureLevel {
    StatusOnly,
    NameVerified,
    FullRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FullRecord {
    pub pii: Pii,
    pub doses: Vec<DoseInfo>,
    pub visit: VisitDetails,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DisclosureResult {
    pub level: DisclosureLevel,
    pub doses_received: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub full: Option<FullRecord>,
}

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Trust(#[from] TrustError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("sealed data failed to open")]
    DecryptFailed,
    #[error("passkey does not belong to the presented card")]
    CommitmentMismatch,
}

impl VerifyError {
    pub fn code(&self) -> ErrorCode {
        match self {
            VerifyError::Trust(e) => e.code(),
            VerifyError::Codec(e) => e.code(),
            VerifyError::DecryptFailed => ErrorCode::DecryptFailed,
            VerifyError::CommitmentMismatch => ErrorCode::CommitmentMismatch,
        }
    }
}

impl From<OpenError> for VerifyError {
    fn from(e: OpenError) -> Self {
        match e {
            OpenError::DecryptFailed => VerifyError::DecryptFailed,
            OpenError::Malformed(e) => VerifyError::Codec(e),
        }
    }
}

pub fn verify_status(status_env: &Envelope, store: &TrustStore) -> Result<DisclosureResult, VerifyError> {
    store.verify_envelope(status_env, CardKind::Status, Role::Clinic)?;
    let status = expect_message(status_env, CardMessage::as_status, CardKind::Status)?;
    Ok(DisclosureResult {
        level: DisclosureLevel::StatusOnly,
        doses_received: status.doses_received,
        name: None,
        full: None,
    })
}

/// Reveals the holder's name using their Passkey. `coupon_id` is read from the
/// holder's Coupon or Badge and is the associated data the PII was sealed under.
pub fn disclose_name(
    status_env: &Envelope,
    passkey_env: &Envelope,
    coupon_id: &CouponId,
    store: &TrustStore,
) -> Result<DisclosureResult, VerifyError> {
    let base = verify_status(status_env, store)?;
    store.verify_envelope(passkey_env, CardKind::Passkey, Role::Clinic)?;
    let status = expect_message(status_env, CardMessage::as_status, CardKind::Status)?;
    let passkey = expect_message(passkey_env, CardMessage::as_passkey, CardKind::Passkey)?;

    let pii = passkey.open_pii(coupon_id)?;
    if passkey.commitment_for(&pii) != status.passkey_commitment {
        return Err(VerifyError::CommitmentMismatch);
    }
    Ok(DisclosureResult {
        level: DisclosureLevel::NameVerified,
        name: Some(pii.name),
        ..base
    })
}

/// Opens the full record in the Badge. The Passkey is mandatory: there is no
/// path to the sealed details without its key.
pub fn disclose_full(
    badge_env: &Envelope,
    passkey_env: &Envelope,
    store: &TrustStore,
) -> Result<DisclosureResult, VerifyError> {
    store.verify_envelope(badge_env, CardKind::Badge, Role::Clinic)?;
    store.verify_envelope(passkey_env, CardKind::Passkey, Role::Clinic)?;
    let badge = expect_message(badge_env, CardMessage::as_badge, CardKind::Badge)?;
    let passkey = expect_message(passkey_env, CardMessage::as_passkey, CardKind::Passkey)?;

    let pii = verify_binding(badge, passkey).map_err(|e| match e {
        BindingFailure::Mismatch => VerifyError::CommitmentMismatch,
        BindingFailure::Malformed(e) => VerifyError::Codec(e),
    })?;
    let visit = passkey.open_details(badge)?;
    Ok(DisclosureResult {
        level: DisclosureLevel::FullRecord,
        doses_received: badge.doses.len() as u8,
        name: Some(pii.name.clone()),
        full: Some(FullRecord {
            pii,
            doses: badge.doses.clone(),
            visit,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::authority::{issue_coupon_batch, CouponAttributes};
    use crate::clinic::{
        administer_first_dose, administer_second_dose, check_in, PasskeyCard, RedemptionLedger, StatusMessage,
    };
    use crate::cryptokit::{self, generate_signing_keypair, SigningKeyPair};
    use std::collections::BTreeSet;

    struct Holder {
        coupon_id: CouponId,
        badge: Envelope,
        passkey: Envelope,
        status: Envelope,
    }

    struct World {
        clinic: SigningKeyPair,
        store: TrustStore,
        holders: Vec<Holder>,
    }

    fn world(names: &[&str]) -> World {
        let authority = generate_signing_keypair().unwrap();
        let clinic = generate_signing_keypair().unwrap();
        let mut store = TrustStore::new();
        store.register(Role::Authority, authority.public()).unwrap();
        store.register(Role::Clinic, clinic.public()).unwrap();
        let mut ledger = RedemptionLedger::new();
        let phases: BTreeSet<String> = ["1B".to_string()].into();
        let attrs = vec![CouponAttributes::default(); names.len()];
        let batch = issue_coupon_batch(&authority, "Springfield", "1B", &attrs, names.len() as u32).unwrap();
        let visit = VisitDetails {
            clinic_name: "Site 4".into(),
            location: "Gym, 1 School Rd".into(),
            timestamp: "2021-01-01T10:00:00Z".into(),
        };
        let holders = batch
            .iter()
            .zip(names)
            .map(|(env, name)| {
                let c = check_in(env, &store, &mut ledger, &phases).unwrap();
                let pii = Pii::new(name, "1970-01-01", Some("F")).unwrap();
                let d1 = DoseInfo::new("Pfizer", 1, "2021-01-01", "L1").unwrap();
                let first = administer_first_dose(&c, &pii, &d1, &clinic, &visit, &mut ledger).unwrap();
                let d2 = DoseInfo::new("Pfizer", 2, "2021-01-22", "L2").unwrap();
                let second =
                    administer_second_dose(&first.badge, &first.passkey, &d2, &store, &clinic, &mut ledger).unwrap();
                Holder {
                    coupon_id: c.coupon_id,
                    badge: second.badge,
                    passkey: first.passkey,
                    status: second.status,
                }
            })
            .collect();
        World { clinic, store, holders }
    }

    #[test]
    fn status_only_reveals_dose_count() {
        let w = world(&["John Doe"]);
        let r = verify_status(&w.holders[0].status, &w.store).unwrap();
        assert_eq!(r.level, DisclosureLevel::StatusOnly);
        assert_eq!(r.doses_received, 2);
        assert!(r.name.is_none() && r.full.is_none());
        let json = serde_json::to_string(&r).unwrap();
        assert!(!json.contains("John"));
    }

    #[test]
    fn status_rejects_wrong_kind_and_tampering() {
        let w = world(&["John Doe"]);
        let err = verify_status(&w.holders[0].badge, &w.store).unwrap_err();
        assert_eq!(err.code(), ErrorCode::WrongKind);

        let bytes = w.holders[0].status.to_bytes().unwrap();
        for bit in 0..bytes.len() * 8 {
            let mut b = bytes.clone();
            b[bit / 8] ^= 1 << (bit % 8);
            let ok = Envelope::from_bytes(&b)
                .ok()
                .map(|env| verify_status(&env, &w.store).is_ok())
                .unwrap_or(false);
            assert!(!ok, "bit {bit} accepted");
        }
    }

    #[test]
    fn name_disclosure_matches_and_crosses() {
        let w = world(&["John Doe", "Jane Roe"]);
        let (a, b) = (&w.holders[0], &w.holders[1]);
        let r = disclose_name(&a.status, &a.passkey, &a.coupon_id, &w.store).unwrap();
        assert_eq!(r.level, DisclosureLevel::NameVerified);
        assert_eq!(r.name.as_deref(), Some("John Doe"));
        assert!(r.full.is_none());

        let err = disclose_name(&a.status, &b.passkey, &b.coupon_id, &w.store).unwrap_err();
        assert_eq!(err.code(), ErrorCode::CommitmentMismatch);
        let err = disclose_name(&a.status, &b.passkey, &a.coupon_id, &w.store).unwrap_err();
        assert_eq!(err.code(), ErrorCode::DecryptFailed);
    }

    #[test]
    fn tampered_sealed_pii_fails_to_decrypt() {
        let w = world(&["John Doe"]);
        let a = &w.holders[0];
        let mut card: PasskeyCard = a.passkey.message.as_passkey().unwrap().clone();
        card.sealed_pii.ciphertext[0] ^= 0x01;
        // unsigned tampering is caught by the signature
        let mut unsigned = a.passkey.clone();
        unsigned.message = card.clone().into();
        assert_eq!(disclose_name(&a.status, &unsigned, &a.coupon_id, &w.store).unwrap_err().code(), ErrorCode::BadSignature);
        // even a validly signed corrupted box never yields plaintext
        let resigned = Envelope::sign(card, &w.clinic).unwrap();
        assert_eq!(disclose_name(&a.status, &resigned, &a.coupon_id, &w.store).unwrap_err().code(), ErrorCode::DecryptFailed);
    }

    #[test]
    fn full_record_and_monotone_disclosure() {
        let w = world(&["John Doe", "Jane Roe"]);
        let a = &w.holders[0];
        let status = verify_status(&a.status, &w.store).unwrap();
        let name = disclose_name(&a.status, &a.passkey, &a.coupon_id, &w.store).unwrap();
        let full = disclose_full(&a.badge, &a.passkey, &w.store).unwrap();
        assert!(status.level < name.level && name.level < full.level);
        assert_eq!(status.doses_received, full.doses_received);
        assert_eq!(name.name, full.name);
        let record = full.full.unwrap();
        assert_eq!(record.visit.location, "Gym, 1 School Rd");
        assert_eq!(record.doses.len(), 2);
        assert_eq!(record.pii.sex.as_deref(), Some("F"));

        let err = disclose_full(&a.badge, &w.holders[1].passkey, &w.store).unwrap_err();
        assert_eq!(err.code(), ErrorCode::CommitmentMismatch);
    }

    #[test]
    fn random_keys_never_open_pii() {
        let w = world(&["John Doe"]);
        let a = &w.holders[0];
        let card = a.passkey.message.as_passkey().unwrap();
        for _ in 0..1_000 {
            let key = cryptokit::SymmetricKey::generate().unwrap();
            assert!(cryptokit::open(&key, &card.sealed_pii, a.coupon_id.as_bytes()).is_err());
        }
    }

    #[test]
    fn forged_status_from_unknown_clinic() {
        let w = world(&["John Doe"]);
        let rogue = generate_signing_keypair().unwrap();
        let commitment = w.holders[0].status.message.as_status().unwrap().passkey_commitment;
        let forged = Envelope::sign(StatusMessage { doses_received: 2, passkey_commitment: commitment }, &rogue).unwrap();
        assert_eq!(verify_status(&forged, &w.store).unwrap_err().code(), ErrorCode::UnknownKey);
    }
}
