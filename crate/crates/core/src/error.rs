//! Stable, machine-readable names for every protocol error.
//!
//! The CLI prints these names and the HTTP service returns them in
//! `{"error": ...}` bodies, so they are part of the external surface and must
//! not be renamed.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ErrorCode {
    // card text / canonical encoding
    BadPrefix,
    BadBase45,
    MalformedPayload,
    FieldTooLong,
    // crypto
    RandomnessUnavailable,
    DecryptFailed,
    // trust
    BadSignature,
    UnknownKey,
    WrongRole,
    RoleConflict,
    WrongKind,
    // issuance
    AttrCountMismatch,
    // clinic
    InvalidPii,
    InvalidDose,
    PhaseNotActive,
    AlreadyRedeemed,
    NotCheckedIn,
    NotDosed1,
    WrongDoseNumber,
    ManufacturerMismatch,
    IdentityMismatch,
    // verifier
    CommitmentMismatch,
    // registry
    PIIFieldPresent,
    InvalidRecord,
    DuplicateDose,
    UnknownPseudoId,
    InvalidSeverity,
    // persistence
    Storage,
}

impl ErrorCode {
    pub const ALL: &'static [ErrorCode] = &[
        ErrorCode::BadPrefix,
        ErrorCode::BadBase45,
        ErrorCode::MalformedPayload,
        ErrorCode::FieldTooLong,
        ErrorCode::RandomnessUnavailable,
        ErrorCode::DecryptFailed,
        ErrorCode::BadSignature,
        ErrorCode::UnknownKey,
        ErrorCode::WrongRole,
        ErrorCode::RoleConflict,
        ErrorCode::WrongKind,
        ErrorCode::AttrCountMismatch,
        ErrorCode::InvalidPii,
        ErrorCode::InvalidDose,
        ErrorCode::PhaseNotActive,
        ErrorCode::AlreadyRedeemed,
        ErrorCode::NotCheckedIn,
        ErrorCode::NotDosed1,
        ErrorCode::WrongDoseNumber,
        ErrorCode::ManufacturerMismatch,
        ErrorCode::IdentityMismatch,
        ErrorCode::CommitmentMismatch,
        ErrorCode::PIIFieldPresent,
        ErrorCode::InvalidRecord,
        ErrorCode::DuplicateDose,
        ErrorCode::UnknownPseudoId,
        ErrorCode::InvalidSeverity,
        ErrorCode::Storage,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::BadPrefix => "BadPrefix",
            ErrorCode::BadBase45 => "BadBase45",
            ErrorCode::MalformedPayload => "MalformedPayload",
            ErrorCode::FieldTooLong => "FieldTooLong",
            ErrorCode::RandomnessUnavailable => "RandomnessUnavailable",
            ErrorCode::DecryptFailed => "DecryptFailed",
            ErrorCode::BadSignature => "BadSignature",
            ErrorCode::UnknownKey => "UnknownKey",
            ErrorCode::WrongRole => "WrongRole",
            ErrorCode::RoleConflict => "RoleConflict",
            ErrorCode::WrongKind => "WrongKind",
            ErrorCode::AttrCountMismatch => "AttrCountMismatch",
            ErrorCode::InvalidPii => "InvalidPii",
            ErrorCode::InvalidDose => "InvalidDose",
            ErrorCode::PhaseNotActive => "PhaseNotActive",
            ErrorCode::AlreadyRedeemed => "AlreadyRedeemed",
            ErrorCode::NotCheckedIn => "NotCheckedIn",
            ErrorCode::NotDosed1 => "NotDosed1",
            ErrorCode::WrongDoseNumber => "WrongDoseNumber",
            ErrorCode::ManufacturerMismatch => "ManufacturerMismatch",
            ErrorCode::IdentityMismatch => "IdentityMismatch",
            ErrorCode::CommitmentMismatch => "CommitmentMismatch",
            ErrorCode::PIIFieldPresent => "PIIFieldPresent",
            ErrorCode::InvalidRecord => "InvalidRecord",
            ErrorCode::DuplicateDose => "DuplicateDose",
            ErrorCode::UnknownPseudoId => "UnknownPseudoId",
            ErrorCode::InvalidSeverity => "InvalidSeverity",
            ErrorCode::Storage => "Storage",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ErrorCode {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ErrorCode::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or(())
    }
}
