//! Vaccination-site operations: coupon check-in, first dose (Badge +
//! Passkey), second dose (reissued Badge + Status).

mod ledger;

pub use ledger::{LedgerError, LedgerEvent, RedemptionLedger, RedemptionState};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::authority::{CouponId, CouponMessage, Role, TrustError, TrustStore};
use crate::cardcodec::{
    self, decode_fields, encode_fields, malformed, CanonicalFields, CardKind, CardMessage, CodecError,
    Envelope, FieldReader, FieldWriter,
};
use crate::cryptokit::{self, commit_passkey, Commitment, CryptoError, Salt, SealedBox, SigningKeyPair, SymmetricKey};
use crate::error::ErrorCode;

/// Personally identifying details. Only ever carried sealed, on the Passkey.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pii {
    pub name: String,
    pub dob: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sex: Option<String>,
}

impl Pii {
    /// Validates the name and normalizes `dob` to `YYYY-MM-DD`.
    pub fn new(name: &str, dob: &str, sex: Option<&str>) -> Result<Self, ClinicError> {
        let name = name.trim();
        if name.is_empty() {
            return Err(ClinicError::InvalidPii("name is empty".into()));
        }
        let dob = cardcodec::normalize_date(dob)
            .ok_or_else(|| ClinicError::InvalidPii(format!("unparseable date of birth {dob:?}")))?;
        let sex = sex.map(str::trim).filter(|s| !s.is_empty()).map(str::to_owned);
        Ok(Pii {
            name: name.to_owned(),
            dob,
            sex,
        })
    }

    pub fn validated(&self) -> Result<Self, ClinicError> {
        Pii::new(&self.name, &self.dob, self.sex.as_deref())
    }
}

impl CanonicalFields for Pii {
    fn write_fields(&self, w: &mut FieldWriter) -> Result<(), CodecError> {
        w.str(&self.name)?;
        w.str(&self.dob)?;
        w.str(self.sex.as_deref().unwrap_or(""))
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        let name = r.str()?;
        let dob = r.str()?;
        let sex = r.str()?;
        if name.is_empty() || !cardcodec::is_iso_date(&dob) {
            return Err(malformed("invalid sealed PII"));
        }
        Ok(Pii {
            name,
            dob,
            sex: (!sex.is_empty()).then_some(sex),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DoseInfo {
    pub manufacturer: String,
    pub dose_number: u8,
    pub date: String,
    pub lot: String,
}

impl DoseInfo {
    pub fn new(manufacturer: &str, dose_number: u8, date: &str, lot: &str) -> Result<Self, ClinicError> {
        let manufacturer = manufacturer.trim();
        if manufacturer.is_empty() {
            return Err(ClinicError::InvalidDose("manufacturer is empty".into()));
        }
        if !(1..=2).contains(&dose_number) {
            return Err(ClinicError::InvalidDose(format!("dose number {dose_number} not in 1..=2")));
        }
        let date = cardcodec::normalize_date(date)
            .ok_or_else(|| ClinicError::InvalidDose(format!("unparseable dose date {date:?}")))?;
        Ok(DoseInfo {
            manufacturer: manufacturer.to_owned(),
            dose_number,
            date,
            lot: lot.trim().to_owned(),
        })
    }

    pub fn validated(&self) -> Result<Self, ClinicError> {
        DoseInfo::new(&self.manufacturer, self.dose_number, &self.date, &self.lot)
    }
}

impl CanonicalFields for DoseInfo {
    fn write_fields(&self, w: &mut FieldWriter) -> Result<(), CodecError> {
        w.str(&self.manufacturer)?;
        w.u32(self.dose_number as u32);
        w.str(&self.date)?;
        w.str(&self.lot)
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        let manufacturer = r.str()?;
        let dose_number = match r.u32()? {
            n @ 1..=2 => n as u8,
            n => return Err(malformed(format!("dose number {n}"))),
        };
        Ok(DoseInfo {
            manufacturer,
            dose_number,
            date: r.str()?,
            lot: r.str()?,
        })
    }
}

/// Time and place of vaccination; sealed inside the Badge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitDetails {
    pub clinic_name: String,
    pub location: String,
    pub timestamp: String,
}

impl CanonicalFields for VisitDetails {
    fn write_fields(&self, w: &mut FieldWriter) -> Result<(), CodecError> {
        w.str(&self.clinic_name)?;
        w.str(&self.location)?;
        w.str(&self.timestamp)
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        Ok(VisitDetails {
            clinic_name: r.str()?,
            location: r.str()?,
            timestamp: r.str()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BadgeMessage {
    pub coupon_id: CouponId,
    pub doses: Vec<DoseInfo>,
    pub passkey_commitment: Commitment,
    pub sealed_details: SealedBox,
}

impl CanonicalFields for BadgeMessage {
    fn write_fields(&self, w: &mut FieldWriter) -> Result<(), CodecError> {
        w.raw(self.coupon_id.as_bytes());
        w.u32(self.doses.len() as u32);
        for dose in &self.doses {
            dose.write_fields(w)?;
        }
        w.raw(self.passkey_commitment.as_bytes());
        w.sealed(&self.sealed_details);
        Ok(())
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        let coupon_id = CouponId::from_bytes(r.array()?);
        let count = r.u32()?;
        if !(1..=2).contains(&count) {
            return Err(malformed(format!("badge with {count} doses")));
        }
        let mut doses = Vec::with_capacity(count as usize);
        for expected in 1..=count as u8 {
            let dose = DoseInfo::read_fields(r)?;
            if dose.dose_number != expected {
                return Err(malformed("badge dose numbers out of order"));
            }
            doses.push(dose);
        }
        Ok(BadgeMessage {
            coupon_id,
            doses,
            passkey_commitment: Commitment::from_bytes(r.array()?),
            sealed_details: r.sealed()?,
        })
    }
}

/// Holder-kept key material: possession of this card is consent to decrypt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PasskeyCard {
    pub key: SymmetricKey,
    pub salt: Salt,
    pub sealed_pii: SealedBox,
}

impl CanonicalFields for PasskeyCard {
    fn write_fields(&self, w: &mut FieldWriter) -> Result<(), CodecError> {
        w.raw(self.key.as_bytes());
        w.raw(self.salt.as_bytes());
        w.sealed(&self.sealed_pii);
        Ok(())
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        Ok(PasskeyCard {
            key: SymmetricKey::from_bytes(r.array()?),
            salt: Salt::from_bytes(r.array()?),
            sealed_pii: r.sealed()?,
        })
    }
}

impl PasskeyCard {
    /// Opens the sealed PII; `coupon_id` is the associated data it was sealed under.
    pub fn open_pii(&self, coupon_id: &CouponId) -> Result<Pii, OpenError> {
        let plain = cryptokit::open(&self.key, &self.sealed_pii, coupon_id.as_bytes())
            .map_err(|_| OpenError::DecryptFailed)?;
        Ok(decode_fields(&plain)?)
    }

    pub fn open_details(&self, badge: &BadgeMessage) -> Result<VisitDetails, OpenError> {
        let plain = cryptokit::open(&self.key, &badge.sealed_details, badge.coupon_id.as_bytes())
            .map_err(|_| OpenError::DecryptFailed)?;
        Ok(decode_fields(&plain)?)
    }

    pub fn commitment_for(&self, pii: &Pii) -> Commitment {
        commit_passkey(pii, &self.salt)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatusMessage {
    pub doses_received: u8,
    pub passkey_commitment: Commitment,
}

impl CanonicalFields for StatusMessage {
    fn write_fields(&self, w: &mut FieldWriter) -> Result<(), CodecError> {
        w.u32(self.doses_received as u32);
        w.raw(self.passkey_commitment.as_bytes());
        Ok(())
    }

    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        let doses_received = match r.u32()? {
            n @ 0..=2 => n as u8,
            n => return Err(malformed(format!("status with {n} doses"))),
        };
        Ok(StatusMessage {
            doses_received,
            passkey_commitment: Commitment::from_bytes(r.array()?),
        })
    }
}

/// Failure to open a box held by a Passkey.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OpenError {
    #[error("sealed box failed to open")]
    DecryptFailed,
    #[error(transparent)]
    Malformed(#[from] CodecError),
}

impl From<OpenError> for ClinicError {
    fn from(e: OpenError) -> Self {
        match e {
            OpenError::DecryptFailed => ClinicError::Crypto(CryptoError::DecryptFailed),
            OpenError::Malformed(e) => ClinicError::Codec(e),
        }
    }
}

#[derive(Debug, Error)]
pub enum ClinicError {
    #[error(transparent)]
    Trust(#[from] TrustError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("phase {0:?} is not active")]
    PhaseNotActive(String),
    #[error("coupon {coupon_id} already redeemed ({state})")]
    AlreadyRedeemed {
        coupon_id: CouponId,
        state: RedemptionState,
    },
    #[error("coupon {0} is not checked in")]
    NotCheckedIn(CouponId),
    #[error("coupon {0} has not had exactly one dose")]
    NotDosed1(CouponId),
    #[error("expected dose number {expected}, got {got}")]
    WrongDoseNumber { expected: u8, got: u8 },
    #[error("first dose was {first}, second dose is {second}")]
    ManufacturerMismatch { first: String, second: String },
    #[error("passkey does not belong to the badge holder")]
    IdentityMismatch,
    #[error("invalid PII: {0}")]
    InvalidPii(String),
    #[error("invalid dose: {0}")]
    InvalidDose(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

impl ClinicError {
    pub fn code(&self) -> ErrorCode {
        match self {
            ClinicError::Trust(e) => e.code(),
            ClinicError::Codec(e) => e.code(),
            ClinicError::Crypto(e) => e.code(),
            ClinicError::PhaseNotActive(_) => ErrorCode::PhaseNotActive,
            ClinicError::AlreadyRedeemed { .. } => ErrorCode::AlreadyRedeemed,
            ClinicError::NotCheckedIn(_) => ErrorCode::NotCheckedIn,
            ClinicError::NotDosed1(_) => ErrorCode::NotDosed1,
            ClinicError::WrongDoseNumber { .. } => ErrorCode::WrongDoseNumber,
            ClinicError::ManufacturerMismatch { .. } => ErrorCode::ManufacturerMismatch,
            ClinicError::IdentityMismatch => ErrorCode::IdentityMismatch,
            ClinicError::InvalidPii(_) => ErrorCode::InvalidPii,
            ClinicError::InvalidDose(_) => ErrorCode::InvalidDose,
            ClinicError::Ledger(e) => e.code(),
        }
    }
}

pub(crate) fn expect_message<T>(
    envelope: &Envelope,
    pick: impl FnOnce(&CardMessage) -> Option<&T>,
    kind: CardKind,
) -> Result<&T, TrustError> {
    pick(&envelope.message).ok_or(TrustError::WrongKind {
        expected: kind,
        actual: envelope.kind(),
    })
}

impl CardMessage {
    pub fn as_coupon(&self) -> Option<&CouponMessage> {
        match self {
            CardMessage::Coupon(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_badge(&self) -> Option<&BadgeMessage> {
        match self {
            CardMessage::Badge(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_status(&self) -> Option<&StatusMessage> {
        match self {
            CardMessage::Status(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_passkey(&self) -> Option<&PasskeyCard> {
        match self {
            CardMessage::Passkey(m) => Some(m),
            _ => None,
        }
    }
}

/// Verifies a coupon against the authority keys, checks its phase and marks
/// it `CheckedIn`. Exclusive access to the ledger makes verify-then-mark atomic.
pub fn check_in(
    coupon_env: &Envelope,
    store: &TrustStore,
    ledger: &mut RedemptionLedger,
    active_phases: &BTreeSet<String>,
) -> Result<CouponMessage, ClinicError> {
    store.verify_envelope(coupon_env, CardKind::Coupon, Role::Authority)?;
    let coupon = expect_message(coupon_env, CardMessage::as_coupon, CardKind::Coupon)?;
    if !active_phases.contains(&coupon.phase) {
        return Err(ClinicError::PhaseNotActive(coupon.phase.clone()));
    }
    if let Some(state) = ledger.state(&coupon.coupon_id) {
        return Err(ClinicError::AlreadyRedeemed {
            coupon_id: coupon.coupon_id,
            state,
        });
    }
    ledger.advance(coupon.coupon_id, RedemptionState::CheckedIn)?;
    Ok(coupon.clone())
}

#[derive(Debug, Clone)]
pub struct FirstDoseCards {
    pub badge: Envelope,
    pub passkey: Envelope,
}

/// Issues the Badge and Passkey for a checked-in coupon.
///
/// The symmetric key and salt exist only inside the returned Passkey; nothing
/// about them is kept in the ledger.
pub fn administer_first_dose(
    coupon: &CouponMessage,
    pii: &Pii,
    dose: &DoseInfo,
    clinic_key: &SigningKeyPair,
    visit: &VisitDetails,
    ledger: &mut RedemptionLedger,
) -> Result<FirstDoseCards, ClinicError> {
    let coupon_id = coupon.coupon_id;
    if ledger.state(&coupon_id) != Some(RedemptionState::CheckedIn) {
        return Err(ClinicError::NotCheckedIn(coupon_id));
    }
    if dose.dose_number != 1 {
        return Err(ClinicError::WrongDoseNumber {
            expected: 1,
            got: dose.dose_number,
        });
    }
    let pii = pii.validated()?;
    let dose = dose.validated()?;

    let key = SymmetricKey::generate()?;
    let salt = Salt::generate()?;
    let passkey_commitment = commit_passkey(&pii, &salt);
    let ad = coupon_id.as_bytes();
    let sealed_details = cryptokit::seal(&key, &encode_fields(visit)?, ad)?;
    let sealed_pii = cryptokit::seal(&key, &encode_fields(&pii)?, ad)?;

    let badge = Envelope::sign(
        BadgeMessage {
            coupon_id,
            doses: vec![dose],
            passkey_commitment,
            sealed_details,
        },
        clinic_key,
    )?;
    let passkey = Envelope::sign(PasskeyCard { key, salt, sealed_pii }, clinic_key)?;

    ledger.advance(coupon_id, RedemptionState::Dosed1)?;
    Ok(FirstDoseCards { badge, passkey })
}

#[derive(Debug, Clone)]
pub struct SecondDoseCards {
    pub badge: Envelope,
    pub status: Envelope,
}

/// Confirms identity with the Passkey, records dose 2 on a reissued Badge and
/// issues the unencrypted Status card.
pub fn administer_second_dose(
    badge_env: &Envelope,
    passkey_env: &Envelope,
    dose: &DoseInfo,
    store: &TrustStore,
    clinic_key: &SigningKeyPair,
    ledger: &mut RedemptionLedger,
) -> Result<SecondDoseCards, ClinicError> {
    store.verify_envelope(badge_env, CardKind::Badge, Role::Clinic)?;
    store.verify_envelope(passkey_env, CardKind::Passkey, Role::Clinic)?;
    let badge = expect_message(badge_env, CardMessage::as_badge, CardKind::Badge)?;
    let passkey = expect_message(passkey_env, CardMessage::as_passkey, CardKind::Passkey)?;

    if ledger.state(&badge.coupon_id) != Some(RedemptionState::Dosed1) {
        return Err(ClinicError::NotDosed1(badge.coupon_id));
    }
    if dose.dose_number != 2 {
        return Err(ClinicError::WrongDoseNumber {
            expected: 2,
            got: dose.dose_number,
        });
    }
    let dose = dose.validated()?;
    let first = &badge.doses[0];
    if !first.manufacturer.eq_ignore_ascii_case(&dose.manufacturer) {
        return Err(ClinicError::ManufacturerMismatch {
            first: first.manufacturer.clone(),
            second: dose.manufacturer.clone(),
        });
    }

    verify_binding(badge, passkey).map_err(|e| match e {
        BindingFailure::Mismatch => ClinicError::IdentityMismatch,
        BindingFailure::Malformed(e) => ClinicError::Codec(e),
    })?;
    // The details must open too, otherwise the passkey cannot serve later
    // full-record disclosure.
    passkey.open_details(badge)?;

    let mut doses = badge.doses.clone();
    doses.push(dose);
    let reissued = Envelope::sign(
        BadgeMessage {
            coupon_id: badge.coupon_id,
            doses,
            passkey_commitment: badge.passkey_commitment,
            sealed_details: badge.sealed_details.clone(),
        },
        clinic_key,
    )?;
    let status = Envelope::sign(
        StatusMessage {
            doses_received: 2,
            passkey_commitment: badge.passkey_commitment,
        },
        clinic_key,
    )?;
    ledger.advance(badge.coupon_id, RedemptionState::Dosed2)?;
    Ok(SecondDoseCards {
        badge: reissued,
        status,
    })
}

pub(crate) enum BindingFailure {
    Mismatch,
    Malformed(CodecError),
}

/// Checks that an authentic `passkey` belongs to `badge`: its PII opens under
/// the badge's coupon id and hashes (with its salt) to the badge commitment.
///
/// Both cards are assumed signature-checked, so a PII box that fails to open
/// under this coupon id was sealed for a different coupon.
pub(crate) fn verify_binding(badge: &BadgeMessage, passkey: &PasskeyCard) -> Result<Pii, BindingFailure> {
    let pii = match passkey.open_pii(&badge.coupon_id) {
        Ok(pii) => pii,
        Err(OpenError::DecryptFailed) => return Err(BindingFailure::Mismatch),
        Err(OpenError::Malformed(e)) => return Err(BindingFailure::Malformed(e)),
    };
    if passkey.commitment_for(&pii) != badge.passkey_commitment {
        return Err(BindingFailure::Mismatch);
    }
    Ok(pii)
}
