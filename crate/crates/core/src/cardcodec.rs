//! Canonical binary layout of card messages and the `SPC1:` card text.
//!
//! Every message is laid out in a fixed field order: a version byte, a kind
//! byte, then the fields. Strings and ciphertexts carry a 4-byte big-endian
//! length prefix, integers are 4-byte big-endian, and keys, salts, ids and
//! commitments are written raw at their fixed width. The signed bytes of a
//! card are exactly this encoding.
//!
//! An envelope on the wire is
//! `version ‖ kind ‖ msg_len(4B BE) ‖ msg_fields ‖ signer_key_id(8B) ‖ signature(64B)`
//! and its card text is `SPC1:` followed by the Base45 of those bytes.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, SecondsFormat, Utc};
use thiserror::Error;

use crate::authority::CouponMessage;
use crate::base45::{self, Base45Error};
use crate::clinic::{BadgeMessage, PasskeyCard, StatusMessage};
use crate::cryptokit::{self, KeyId, SealedBox, Signature, SigningKeyPair, KEY_ID_LEN, NONCE_LEN, SIGNATURE_LEN};
use crate::error::ErrorCode;

pub const PROTOCOL_VERSION: u8 = 1;
pub const CARD_TEXT_PREFIX: &str = "SPC1:";
pub const MAX_STRING_LEN: usize = 65_535;

const HEADER_LEN: usize = 2;
const ENVELOPE_TRAILER_LEN: usize = KEY_ID_LEN + SIGNATURE_LEN;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("string field of {0} bytes exceeds the 65535-byte limit")]
    FieldTooLong(usize),
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("card text does not start with {CARD_TEXT_PREFIX}")]
    BadPrefix,
    #[error("card text is not valid Base45: {0}")]
    BadBase45(#[from] Base45Error),
}

impl CodecError {
    pub fn code(&self) -> ErrorCode {
        match self {
            CodecError::FieldTooLong(_) => ErrorCode::FieldTooLong,
            CodecError::MalformedPayload(_) => ErrorCode::MalformedPayload,
            CodecError::BadPrefix => ErrorCode::BadPrefix,
            CodecError::BadBase45(_) => ErrorCode::BadBase45,
        }
    }
}

pub(crate) fn malformed(msg: impl Into<String>) -> CodecError {
    CodecError::MalformedPayload(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum CardKind {
    Coupon = 1,
    Badge = 2,
    Status = 3,
    Passkey = 4,
}

impl CardKind {
    pub const ALL: [CardKind; 4] = [
        CardKind::Coupon,
        CardKind::Badge,
        CardKind::Status,
        CardKind::Passkey,
    ];

    pub fn from_byte(b: u8) -> Option<Self> {
        CardKind::ALL.into_iter().find(|k| *k as u8 == b)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CardKind::Coupon => "Coupon",
            CardKind::Badge => "Badge",
            CardKind::Status => "Status",
            CardKind::Passkey => "Passkey",
        }
    }
}

impl fmt::Display for CardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Default)]
pub struct FieldWriter {
    buf: Vec<u8>,
}

impl FieldWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn str(&mut self, s: &str) -> Result<(), CodecError> {
        if s.len() > MAX_STRING_LEN {
            return Err(CodecError::FieldTooLong(s.len()));
        }
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
        Ok(())
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn bool(&mut self, v: bool) {
        self.buf.push(v as u8);
    }

    pub fn raw(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Length-prefixed opaque bytes.
    pub fn bytes(&mut self, bytes: &[u8]) {
        self.u32(bytes.len() as u32);
        self.buf.extend_from_slice(bytes);
    }

    pub fn sealed(&mut self, sealed: &SealedBox) {
        self.raw(&sealed.nonce);
        self.bytes(&sealed.ciphertext);
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug)]
pub struct FieldReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> FieldReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        FieldReader { data, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.data.len())
            .ok_or_else(|| malformed(format!("truncated at offset {}", self.pos)))?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    pub fn bool(&mut self) -> Result<bool, CodecError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(malformed(format!("invalid boolean byte {b}"))),
        }
    }

    pub fn str(&mut self) -> Result<String, CodecError> {
        let len = self.u32()? as usize;
        if len > MAX_STRING_LEN {
            return Err(malformed(format!("string length {len} over limit")));
        }
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| malformed("string is not UTF-8"))
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>, CodecError> {
        let len = self.u32()? as usize;
        Ok(self.take(len)?.to_vec())
    }

    pub fn sealed(&mut self) -> Result<SealedBox, CodecError> {
        let nonce = self.array::<NONCE_LEN>()?;
        let ciphertext = self.bytes()?;
        if ciphertext.len() < cryptokit::TAG_LEN {
            return Err(malformed("sealed box shorter than its tag"));
        }
        Ok(SealedBox { nonce, ciphertext })
    }

    pub fn finish(self) -> Result<(), CodecError> {
        if self.pos == self.data.len() {
            Ok(())
        } else {
            Err(malformed(format!(
                "{} trailing bytes",
                self.data.len() - self.pos
            )))
        }
    }
}

/// Fixed-order field layout of a structure inside a card.
pub trait CanonicalFields: Sized {
    fn write_fields(&self, w: &mut FieldWriter) -> Result<(), CodecError>;
    fn read_fields(r: &mut FieldReader<'_>) -> Result<Self, CodecError>;
}

/// Field bytes only, without version or kind header.
pub fn encode_fields<T: CanonicalFields>(value: &T) -> Result<Vec<u8>, CodecError> {
    let mut w = FieldWriter::new();
    value.write_fields(&mut w)?;
    Ok(w.into_bytes())
}

pub fn decode_fields<T: CanonicalFields>(data: &[u8]) -> Result<T, CodecError> {
    let mut r = FieldReader::new(data);
    let value = T::read_fields(&mut r)?;
    r.finish()?;
    Ok(value)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CardMessage {
    Coupon(CouponMessage),
    Badge(BadgeMessage),
    Status(StatusMessage),
    Passkey(PasskeyCard),
}

impl CardMessage {
    pub fn kind(&self) -> CardKind {
        match self {
            CardMessage::Coupon(_) => CardKind::Coupon,
            CardMessage::Badge(_) => CardKind::Badge,
            CardMessage::Status(_) => CardKind::Status,
            CardMessage::Passkey(_) => CardKind::Passkey,
        }
    }

    fn write_fields(&self, w: &mut FieldWriter) -> Result<(), CodecError> {
        match self {
            CardMessage::Coupon(m) => m.write_fields(w),
            CardMessage::Badge(m) => m.write_fields(w),
            CardMessage::Status(m) => m.write_fields(w),
            CardMessage::Passkey(m) => m.write_fields(w),
        }
    }

    fn read_fields(kind: CardKind, r: &mut FieldReader<'_>) -> Result<Self, CodecError> {
        Ok(match kind {
            CardKind::Coupon => CardMessage::Coupon(CouponMessage::read_fields(r)?),
            CardKind::Badge => CardMessage::Badge(BadgeMessage::read_fields(r)?),
            CardKind::Status => CardMessage::Status(StatusMessage::read_fields(r)?),
            CardKind::Passkey => CardMessage::Passkey(PasskeyCard::read_fields(r)?),
        })
    }
}

impl From<CouponMessage> for CardMessage {
    fn from(m: CouponMessage) -> Self {
        CardMessage::Coupon(m)
    }
}

impl From<BadgeMessage> for CardMessage {
    fn from(m: BadgeMessage) -> Self {
        CardMessage::Badge(m)
    }
}

impl From<StatusMessage> for CardMessage {
    fn from(m: StatusMessage) -> Self {
        CardMessage::Status(m)
    }
}

impl From<PasskeyCard> for CardMessage {
    fn from(m: PasskeyCard) -> Self {
        CardMessage::Passkey(m)
    }
}

/// The bytes a card's signature covers.
pub fn canonical_encode(message: &CardMessage) -> Result<Vec<u8>, CodecError> {
    let mut w = FieldWriter::new();
    w.raw(&[PROTOCOL_VERSION, message.kind() as u8]);
    message.write_fields(&mut w)?;
    Ok(w.into_bytes())
}

fn check_header(version: u8, kind_byte: u8) -> Result<CardKind, CodecError> {
    if version != PROTOCOL_VERSION {
        return Err(malformed(format!("unsupported version {version}")));
    }
    CardKind::from_byte(kind_byte).ok_or_else(|| malformed(format!("unknown kind byte {kind_byte}")))
}

pub fn canonical_decode(kind: CardKind, data: &[u8]) -> Result<CardMessage, CodecError> {
    let mut r = FieldReader::new(data);
    let found = check_header(r.u8()?, r.u8()?)?;
    if found != kind {
        return Err(malformed(format!("expected {kind}, found {found}")));
    }
    let message = CardMessage::read_fields(kind, &mut r)?;
    r.finish()?;
    Ok(message)
}

/// A signed card: `(message, signature(message))`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub message: CardMessage,
    pub signer_key_id: KeyId,
    pub signature: Signature,
}

impl Envelope {
    pub fn sign(message: impl Into<CardMessage>, key: &SigningKeyPair) -> Result<Self, CodecError> {
        let message = message.into();
        let signature = cryptokit::sign(key, &canonical_encode(&message)?);
        Ok(Envelope {
            message,
            signer_key_id: key.key_id(),
            signature,
        })
    }

    pub fn version(&self) -> u8 {
        PROTOCOL_VERSION
    }

    pub fn kind(&self) -> CardKind {
        self.message.kind()
    }

    pub fn signed_bytes(&self) -> Result<Vec<u8>, CodecError> {
        canonical_encode(&self.message)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CodecError> {
        let fields = {
            let mut w = FieldWriter::new();
            self.message.write_fields(&mut w)?;
            w.into_bytes()
        };
        let mut w = FieldWriter::new();
        w.raw(&[PROTOCOL_VERSION, self.kind() as u8]);
        w.bytes(&fields);
        w.raw(self.signer_key_id.as_bytes());
        w.raw(self.signature.as_bytes());
        Ok(w.into_bytes())
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, CodecError> {
        if data.len() < HEADER_LEN + 4 + ENVELOPE_TRAILER_LEN {
            return Err(malformed(format!("envelope of {} bytes is too short", data.len())));
        }
        let mut r = FieldReader::new(data);
        let kind = check_header(r.u8()?, r.u8()?)?;
        let fields = r.bytes()?;
        let signer_key_id = KeyId::from_bytes(r.array()?);
        let signature = Signature::from_bytes(r.array()?);
        r.finish()?;

        let message = decode_message_fields(kind, &fields)?;
        Ok(Envelope {
            message,
            signer_key_id,
            signature,
        })
    }

    pub fn to_card_text(&self) -> Result<CardText, CodecError> {
        to_card_text(self)
    }

    pub fn from_card_text(text: &str) -> Result<Self, CodecError> {
        from_card_text(text)
    }

    /// Plain signature check against an already trusted key.
    pub fn verify_with(&self, public: &cryptokit::PublicKey) -> bool {
        match self.signed_bytes() {
            Ok(bytes) => cryptokit::verify(public, &bytes, &self.signature),
            Err(_) => false,
        }
    }
}

fn decode_message_fields(kind: CardKind, fields: &[u8]) -> Result<CardMessage, CodecError> {
    let mut r = FieldReader::new(fields);
    let message = CardMessage::read_fields(kind, &mut r)?;
    r.finish()?;
    Ok(message)
}

/// `SPC1:` + Base45 of an envelope.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CardText(String);

impl CardText {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }

    pub fn decode(&self) -> Result<Envelope, CodecError> {
        from_card_text(&self.0)
    }
}

impl fmt::Display for CardText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for CardText {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        from_card_text(s)?;
        Ok(CardText(s.to_owned()))
    }
}

impl AsRef<str> for CardText {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

pub fn to_card_text(envelope: &Envelope) -> Result<CardText, CodecError> {
    let bytes = envelope.to_bytes()?;
    Ok(CardText(format!("{CARD_TEXT_PREFIX}{}", base45::encode(&bytes))))
}

/// Parses card text into an envelope. The signature is not checked here.
pub fn from_card_text(text: &str) -> Result<Envelope, CodecError> {
    let body = text.strip_prefix(CARD_TEXT_PREFIX).ok_or(CodecError::BadPrefix)?;
    let bytes = base45::decode(body)?;
    Envelope::from_bytes(&bytes)
}

/// Normalizes `YYYY-MM-DD` or US-style `M/D/YYYY` to ISO-8601.
pub fn normalize_date(input: &str) -> Option<String> {
    let input = input.trim();
    let date = NaiveDate::parse_from_str(input, "%Y-%m-%d")
        .or_else(|_| NaiveDate::parse_from_str(input, "%m/%d/%Y"))
        .ok()?;
    Some(date.format("%Y-%m-%d").to_string())
}

pub fn is_iso_date(s: &str) -> bool {
    normalize_date(s).as_deref() == Some(s)
}

pub fn format_timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Parses an RFC 3339 timestamp and renders it in UTC.
pub fn normalize_timestamp(input: &str) -> Option<String> {
    DateTime::parse_from_rfc3339(input.trim())
        .ok()
        .map(|t| format_timestamp(t.with_timezone(&Utc)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::authority::{CouponId, CouponMessage};

    fn coupon() -> CouponMessage {
        CouponMessage {
            coupon_id: CouponId::from_bytes([9; 16]),
            number: 37,
            total: 5000,
            city: "Springfield".into(),
            phase: "1B".into(),
            age_band: "40-49".into(),
            job: "Teacher".into(),
            comorbid: true,
        }
    }

    #[test]
    fn canonical_encoding_is_deterministic() {
        let a = canonical_encode(&coupon().into()).unwrap();
        let b = canonical_encode(&coupon().into()).unwrap();
        assert_eq!(a, b);
        assert_eq!(&a[..2], &[1, 1]);
    }

    #[test]
    fn decode_rejects_version_two() {
        let mut bytes = canonical_encode(&coupon().into()).unwrap();
        bytes[0] = 2;
        assert!(matches!(
            canonical_decode(CardKind::Coupon, &bytes),
            Err(CodecError::MalformedPayload(_))
        ));
    }

    #[test]
    fn decode_rejects_kind_mismatch_and_trailing_bytes() {
        let mut bytes = canonical_encode(&coupon().into()).unwrap();
        assert!(canonical_decode(CardKind::Badge, &bytes).is_err());
        bytes.push(0);
        assert!(canonical_decode(CardKind::Coupon, &bytes).is_err());
    }

    #[test]
    fn every_truncation_is_malformed() {
        let bytes = canonical_encode(&coupon().into()).unwrap();
        for cut in 0..bytes.len() {
            assert!(matches!(
                canonical_decode(CardKind::Coupon, &bytes[..cut]),
                Err(CodecError::MalformedPayload(_))
            ), "cut {cut}");
        }
        assert!(canonical_decode(CardKind::Coupon, &bytes).is_ok());
    }

    #[test]
    fn long_strings_are_rejected() {
        let mut c = coupon();
        c.city = "x".repeat(MAX_STRING_LEN + 1);
        assert_eq!(
            canonical_encode(&c.clone().into()),
            Err(CodecError::FieldTooLong(MAX_STRING_LEN + 1))
        );
        c.city = "x".repeat(MAX_STRING_LEN);
        assert!(canonical_encode(&c.into()).is_ok());
    }

    #[test]
    fn non_canonical_boolean_is_rejected() {
        let mut bytes = canonical_encode(&coupon().into()).unwrap();
        *bytes.last_mut().unwrap() = 2;
        assert!(canonical_decode(CardKind::Coupon, &bytes).is_err());
    }

    #[test]
    fn card_text_rejections() {
        assert_eq!(from_card_text("XYZ:AAAA"), Err(CodecError::BadPrefix));
        assert!(matches!(from_card_text("SPC1:abc"), Err(CodecError::BadBase45(_))));
        assert!(matches!(from_card_text("SPC1:"), Err(CodecError::MalformedPayload(_))));
    }

    #[test]
    fn dates_normalize() {
        assert_eq!(normalize_date("1/1/2021").as_deref(), Some("2021-01-01"));
        assert_eq!(normalize_date("2021-01-01").as_deref(), Some("2021-01-01"));
        assert_eq!(normalize_date("12/31/1999").as_deref(), Some("1999-12-31"));
        assert_eq!(normalize_date("2021-02-30"), None);
        assert_eq!(normalize_date("yesterday"), None);
        assert!(is_iso_date("2021-01-01"));
        assert!(!is_iso_date("1/1/2021"));
        assert_eq!(
            normalize_timestamp("2021-01-01T09:30:00+02:00").as_deref(),
            Some("2021-01-01T07:30:00Z")
        );
    }
}
