//! One failure type shared by the CLI and the HTTP service, and the table
//! mapping protocol error names to HTTP statuses.

use std::fmt;

use vaxcard_core::authority::AuthorityError;
use vaxcard_core::registry::RegistryError;
use vaxcard_core::verifier::VerifyError;
use vaxcard_core::{ClinicError, CodecError, ErrorCode, TrustError};

pub const MALFORMED_BODY: &str = "MalformedBody";
pub const CONFIG_ERROR: &str = "ConfigError";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Failure {
    /// A protocol rule was violated. CLI exit 1.
    Protocol { code: ErrorCode, message: String },
    /// The request or arguments are not shaped correctly. CLI exit 2, HTTP 400.
    MalformedBody(String),
    /// Missing keys or unusable state files. CLI exit 2, HTTP 500.
    Config(String),
}

/// HTTP status for each protocol error name.
pub fn http_status_for(code: ErrorCode) -> u16 {
    use ErrorCode::*;
    match code {
        BadPrefix | BadBase45 | MalformedPayload | FieldTooLong | AttrCountMismatch | InvalidPii | InvalidDose
        | PIIFieldPresent | InvalidRecord | InvalidSeverity => 400,
        BadSignature | UnknownKey | WrongRole => 401,
        AlreadyRedeemed | DuplicateDose | RoleConflict => 409,
        WrongKind | PhaseNotActive | NotCheckedIn | NotDosed1 | WrongDoseNumber | ManufacturerMismatch
        | IdentityMismatch | CommitmentMismatch | DecryptFailed | UnknownPseudoId => 422,
        RandomnessUnavailable | Storage => 500,
    }
}

impl Failure {
    pub fn protocol(code: ErrorCode, message: impl fmt::Display) -> Self {
        Failure::Protocol {
            code,
            message: message.to_string(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Failure::Protocol { code, .. } => code.as_str(),
            Failure::MalformedBody(_) => MALFORMED_BODY,
            Failure::Config(_) => CONFIG_ERROR,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Protocol { message, .. } | Failure::MalformedBody(message) | Failure::Config(message) => message,
        }
    }

    pub fn http_status(&self) -> u16 {
        match self {
            Failure::Protocol { code, .. } => http_status_for(*code),
            Failure::MalformedBody(_) => 400,
            Failure::Config(_) => 500,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Protocol { .. } => 1,
            Failure::MalformedBody(_) | Failure::Config(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.name(), self.message())
    }
}

impl std::error::Error for Failure {}

macro_rules! protocol_from {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::protocol(e.code(), &e)
            }
        }
    )*};
}

protocol_from!(ClinicError, VerifyError, RegistryError, CodecError, TrustError, AuthorityError);
