//! Frozen values computed by `tests/oracle/reference.py`, an independent
//! Python implementation of the byte layout (Ed25519 and SHA-256 from the
//! `cryptography` package and `hashlib`).

use vaxcard_core::cardcodec::{canonical_decode, canonical_encode, CardKind, CardMessage};
use vaxcard_core::cryptokit::{self, commit_passkey, KeyId, Salt, SigningKeyPair};
use vaxcard_core::{base45, CouponId, CouponMessage, Envelope, Pii};

const COUPON_SIGNED_HEX: &str = "0101000102030405060708090a0b0c0d0e0f00000025000013880000000b537072696e676669656c640000000231420000000534302d3439000000075465616368657200";
const PUBLIC_HEX: &str = "03a107bff3ce10be1d70dd18e74bc09967e4d6309ba50d5f1ddc8664125531b8";
const KEY_ID_HEX: &str = "56475aa75463474c";
const SIGNATURE_HEX: &str = "0b1e8f6539d765141f6f8fdcbf5e425a2d90fb01fd12d227feff865d3e85a9a2dda7a5aa9ea3af91f8dbbfb40d9ffc6bfc7efbc6fcdd7c10dff377efa4467f0a";
const CARD_TEXT: &str = "SPC1:W50000L10100KB0*M0DY0W016C1PN1:Y1000$000005L2000B00UOA*KE3/DR.C: C+SC000LC0LF8000RT03464R60007005UA1EC+8DOIE$+AWKB3UAR09BI1Y5I2E71ZC$/3I8IU8OLH89Y5.WVV:VOPQTAWH:GU+71KL/0SK.KL2KZ8MWKVQAOMW1:+VI-VE$VN/VZUF1ESD7FOYKW2G";
const COMMITMENT_HEX: &str = "53191448566df1f81c47b3b9103ca4bb7f2d44525fbc596716133da20150bdff";

fn table_one_coupon() -> CouponMessage {
    let mut id = [0u8; 16];
    for (i, b) in id.iter_mut().enumerate() {
        *b = i as u8;
    }
    CouponMessage {
        coupon_id: CouponId::from_bytes(id),
        number: 37,
        total: 5000,
        city: "Springfield".into(),
        phase: "1B".into(),
        age_band: "40-49".into(),
        job: "Teacher".into(),
        comorbid: false,
    }
}

fn test_key() -> SigningKeyPair {
    let mut seed = [0u8; 32];
    for (i, b) in seed.iter_mut().enumerate() {
        *b = i as u8;
    }
    SigningKeyPair::from_seed(&seed)
}

#[test]
fn table_one_coupon_layout() {
    let bytes = canonical_encode(&table_one_coupon().into()).unwrap();
    assert_eq!(bytes.len(), 68);
    assert_eq!(hex::encode(&bytes), COUPON_SIGNED_HEX);
    let CardMessage::Coupon(back) = canonical_decode(CardKind::Coupon, &bytes).unwrap() else {
        panic!("kind changed");
    };
    assert_eq!((back.number, back.total), (37, 5000));
    assert_eq!((back.city.as_str(), back.phase.as_str(), back.job.as_str()), ("Springfield", "1B", "Teacher"));
}

#[test]
fn key_id_is_sha256_prefix() {
    let key = test_key();
    assert_eq!(key.public().to_hex(), PUBLIC_HEX);
    assert_eq!(key.key_id(), KeyId::from_hex(KEY_ID_HEX).unwrap());
}

#[test]
fn signature_matches_independent_ed25519() {
    let key = test_key();
    let bytes = canonical_encode(&table_one_coupon().into()).unwrap();
    let sig = cryptokit::sign(&key, &bytes);
    assert_eq!(sig.to_hex(), SIGNATURE_HEX);
    assert!(cryptokit::verify(&key.public(), &bytes, &sig));
}

#[test]
fn card_text_matches_reference_base45() {
    let env = Envelope::sign(table_one_coupon(), &test_key()).unwrap();
    assert_eq!(env.to_bytes().unwrap().len(), 144);
    let text = env.to_card_text().unwrap();
    assert_eq!(text.as_str(), CARD_TEXT);
    assert_eq!(Envelope::from_card_text(CARD_TEXT).unwrap(), env);
    assert_eq!(base45::decode(&CARD_TEXT[5..]).unwrap(), env.to_bytes().unwrap());
}

#[test]
fn commitment_matches_hash_oracle() {
    let pii = Pii::new("John Doe", "1970-01-01", None).unwrap();
    let mut salt = [0u8; 16];
    for (i, b) in salt.iter_mut().enumerate() {
        *b = 0xA0 + i as u8;
    }
    assert_eq!(commit_passkey(&pii, &Salt::from_bytes(salt)).to_hex(), COMMITMENT_HEX);
}
