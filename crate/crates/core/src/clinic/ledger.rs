//! Forward-only redemption ledger backed by an append-only event log.
//!
//! Log format: one `timestamp_iso,coupon_id_hex,new_state` line per
//! transition. Replaying the log rebuilds the in-memory map.

use std::collections::HashMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use chrono::Utc;
use thiserror::Error;

use crate::authority::CouponId;
use crate::cardcodec::{format_timestamp, normalize_timestamp};
use crate::error::ErrorCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RedemptionState {
    CheckedIn,
    Dosed1,
    Dosed2,
}

impl RedemptionState {
    pub fn as_str(self) -> &'static str {
        match self {
            RedemptionState::CheckedIn => "CheckedIn",
            RedemptionState::Dosed1 => "Dosed1",
            RedemptionState::Dosed2 => "Dosed2",
        }
    }

    /// The only state reachable from `current`.
    pub fn successor(current: Option<Self>) -> Option<Self> {
        match current {
            None => Some(RedemptionState::CheckedIn),
            Some(RedemptionState::CheckedIn) => Some(RedemptionState::Dosed1),
            Some(RedemptionState::Dosed1) => Some(RedemptionState::Dosed2),
            Some(RedemptionState::Dosed2) => None,
        }
    }
}

impl fmt::Display for RedemptionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RedemptionState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "CheckedIn" => Ok(RedemptionState::CheckedIn),
            "Dosed1" => Ok(RedemptionState::Dosed1),
            "Dosed2" => Ok(RedemptionState::Dosed2),
            other => Err(format!("unknown ledger state {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerEvent {
    pub timestamp: String,
    pub coupon_id: CouponId,
    pub state: RedemptionState,
}

impl LedgerEvent {
    pub fn to_line(&self) -> String {
        format!("{},{},{}", self.timestamp, self.coupon_id, self.state)
    }
}

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("coupon {coupon_id} cannot move from {} to {to}", from.map_or("absent", RedemptionState::as_str))]
    InvalidTransition {
        coupon_id: CouponId,
        from: Option<RedemptionState>,
        to: RedemptionState,
    },
    #[error("ledger log line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("ledger log I/O: {0}")]
    Io(#[from] std::io::Error),
}

impl LedgerError {
    pub fn code(&self) -> ErrorCode {
        match self {
            LedgerError::InvalidTransition { from: Some(_), to: RedemptionState::CheckedIn, .. } => {
                ErrorCode::AlreadyRedeemed
            }
            LedgerError::InvalidTransition { to: RedemptionState::Dosed1, .. } => ErrorCode::NotCheckedIn,
            LedgerError::InvalidTransition { .. } => ErrorCode::NotDosed1,
            LedgerError::Parse { .. } | LedgerError::Io(_) => ErrorCode::Storage,
        }
    }
}

/// Per-coupon redemption state. Callers needing concurrent access wrap it
/// in a lock; every mutation takes `&mut self`.
#[derive(Debug, Default)]
pub struct RedemptionLedger {
    states: HashMap<CouponId, RedemptionState>,
    events: Vec<LedgerEvent>,
    sink: Option<File>,
}

impl RedemptionLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replays the log at `path` (if any) and appends future transitions to it.
    pub fn open(path: &Path) -> Result<Self, LedgerError> {
        let mut ledger = match std::fs::read_to_string(path) {
            Ok(text) => Self::replay(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Self::new(),
            Err(e) => return Err(e.into()),
        };
        ledger.sink = Some(OpenOptions::new().create(true).append(true).open(path)?);
        Ok(ledger)
    }

    pub fn replay(log: &str) -> Result<Self, LedgerError> {
        let mut ledger = Self::new();
        for (i, line) in log.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |reason: String| LedgerError::Parse { line: i + 1, reason };
            let mut parts = line.trim().split(',');
            let (Some(ts), Some(id), Some(state), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(err("expected timestamp,coupon_id,state".into()));
            };
            let timestamp = normalize_timestamp(ts).ok_or_else(|| err(format!("bad timestamp {ts:?}")))?;
            let coupon_id: CouponId = id.parse().map_err(|_| err(format!("bad coupon id {id:?}")))?;
            let state: RedemptionState = state.parse().map_err(err)?;
            ledger
                .apply(LedgerEvent {
                    timestamp,
                    coupon_id,
                    state,
                })
                .map_err(|e| err(e.to_string()))?;
        }
        Ok(ledger)
    }

    pub fn state(&self, coupon_id: &CouponId) -> Option<RedemptionState> {
        self.states.get(coupon_id).copied()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.events
    }

    pub fn states(&self) -> impl Iterator<Item = (&CouponId, &RedemptionState)> {
        self.states.iter()
    }

    pub fn to_log_string(&self) -> String {
        self.events.iter().map(|e| e.to_line() + "\n").collect()
    }

    fn check(&self, coupon_id: &CouponId, to: RedemptionState) -> Result<(), LedgerError> {
        let from = self.state(coupon_id);
        if RedemptionState::successor(from) == Some(to) {
            Ok(())
        } else {
            Err(LedgerError::InvalidTransition {
                coupon_id: *coupon_id,
                from,
                to,
            })
        }
    }

    fn apply(&mut self, event: LedgerEvent) -> Result<(), LedgerError> {
        self.check(&event.coupon_id, event.state)?;
        self.states.insert(event.coupon_id, event.state);
        self.events.push(event);
        Ok(())
    }

    /// Moves a coupon one step forward. The log line is written before the
    /// in-memory state changes.
    pub fn advance(&mut self, coupon_id: CouponId, to: RedemptionState) -> Result<(), LedgerError> {
        self.check(&coupon_id, to)?;
        let event = LedgerEvent {
            timestamp: format_timestamp(Utc::now()),
            coupon_id,
            state: to,
        };
        if let Some(sink) = self.sink.as_mut() {
            writeln!(sink, "{}", event.to_line())?;
            sink.flush()?;
        }
        self.apply(event)
    }
}
