//! Centralized, PII-free record keeping keyed by the coupon pseudonym.
//!
//! State persists as one JSON entry per line: `{"record":{...}}` for dose
//! records and `{"symptom":{...}}` for self-reports. Only accepted entries
//! reach the file.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::authority::{CouponId, CouponMessage};
use crate::cardcodec::is_iso_date;
use crate::clinic::DoseInfo;
use crate::error::ErrorCode;

const RECORD_FIELDS: &[&str] = &["pseudo_id", "city", "phase", "manufacturer", "dose_number", "date"];
const SYMPTOM_FIELDS: &[&str] = &["pseudo_id", "days_since_dose", "symptoms", "severity"];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryRecord {
    pub pseudo_id: CouponId,
    pub city: String,
    pub phase: String,
    pub manufacturer: String,
    pub dose_number: u8,
    pub date: String,
}

impl RegistryRecord {
    /// The anonymized upload for one administered dose.
    pub fn for_dose(coupon: &CouponMessage, dose: &DoseInfo) -> Self {
        RegistryRecord {
            pseudo_id: coupon.coupon_id,
            city: coupon.city.clone(),
            phase: coupon.phase.clone(),
            manufacturer: dose.manufacturer.clone(),
            dose_number: dose.dose_number,
            date: dose.date.clone(),
        }
    }

    fn validate(&self) -> Result<(), RegistryError> {
        let invalid = |m: &str| Err(RegistryError::InvalidRecord(m.to_owned()));
        if self.city.trim().is_empty() || self.phase.trim().is_empty() || self.manufacturer.trim().is_empty() {
            return invalid("city, phase and manufacturer must be non-empty");
        }
        if !(1..=2).contains(&self.dose_number) {
            return invalid("dose_number must be 1 or 2");
        }
        if !is_iso_date(&self.date) {
            return invalid("date must be YYYY-MM-DD");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymptomReport {
    pub pseudo_id: CouponId,
    pub days_since_dose: u32,
    pub symptoms: Vec<String>,
    pub severity: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    City,
    Phase,
    Manufacturer,
    DoseNumber,
}

impl Dimension {
    pub const ALL: [Dimension; 4] = [
        Dimension::City,
        Dimension::Phase,
        Dimension::Manufacturer,
        Dimension::DoseNumber,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::City => "city",
            Dimension::Phase => "phase",
            Dimension::Manufacturer => "manufacturer",
            Dimension::DoseNumber => "dose_number",
        }
    }

    pub fn value_of(self, record: &RegistryRecord) -> String {
        match self {
            Dimension::City => record.city.clone(),
            Dimension::Phase => record.phase.clone(),
            Dimension::Manufacturer => record.manufacturer.clone(),
            Dimension::DoseNumber => record.dose_number.to_string(),
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dimension::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown dimension {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AggregateView {
    pub dimension: Dimension,
    pub value: String,
    pub count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Acknowledgment {
    pub sequence: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegistryEntry {
    Record(RegistryRecord),
    Symptom(SymptomReport),
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("field {0:?} is not part of the anonymized schema")]
    PIIFieldPresent(String),
    #[error("invalid submission: {0}")]
    InvalidRecord(String),
    #[error("dose {dose_number} already recorded for {pseudo_id}")]
    DuplicateDose { pseudo_id: CouponId, dose_number: u8 },
    #[error("no dose record for pseudo id {0}")]
    UnknownPseudoId(CouponId),
    #[error("severity {0} outside 1..=5")]
    InvalidSeverity(u8),
    #[error("registry state line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("registry I/O: {0}")]
    Io(#[from] std::io::Error),
}

impl RegistryError {
    pub fn code(&self) -> ErrorCode {
        match self {
            RegistryError::PIIFieldPresent(_) => ErrorCode::PIIFieldPresent,
            RegistryError::InvalidRecord(_) => ErrorCode::InvalidRecord,
            RegistryError::DuplicateDose { .. } => ErrorCode::DuplicateDose,
            RegistryError::UnknownPseudoId(_) => ErrorCode::UnknownPseudoId,
            RegistryError::InvalidSeverity(_) => ErrorCode::InvalidSeverity,
            RegistryError::Parse { .. } | RegistryError::Io(_) => ErrorCode::Storage,
        }
    }
}

/// Rejects any key outside `allowed`, then deserializes with serde.
fn parse_strict<T: serde::de::DeserializeOwned>(json: &str, allowed: &[&str]) -> Result<T, RegistryError> {
    let value: Value = serde_json::from_str(json).map_err(|e| RegistryError::InvalidRecord(e.to_string()))?;
    let Value::Object(map) = &value else {
        return Err(RegistryError::InvalidRecord("expected a JSON object".into()));
    };
    if let Some(extra) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(RegistryError::PIIFieldPresent(extra.clone()));
    }
    serde_json::from_value(value).map_err(|e| RegistryError::InvalidRecord(e.to_string()))
}

/// Append-only registry. Single writer; `aggregate` reads a consistent view
/// through `&self`.
#[derive(Debug, Default)]
pub struct Registry {
    records: Vec<RegistryRecord>,
    doses: HashSet<(CouponId, u8)>,
    symptoms: Vec<SymptomReport>,
    entries: u64,
    sink: Option<File>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open(path: &Path) -> Result<Self, RegistryError> {
        let mut registry = match std::fs::read_to_string(path) {
            Ok(text) => Self::replay(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Self::new(),
            Err(e) => return Err(e.into()),
        };
        registry.sink = Some(OpenOptions::new().create(true).append(true).open(path)?);
        Ok(registry)
    }

    pub fn replay(text: &str) -> Result<Self, RegistryError> {
        let mut registry = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |reason: String| RegistryError::Parse { line: i + 1, reason };
            let entry: RegistryEntry = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            registry.apply(entry).map_err(|e| err(e.to_string()))?;
        }
        Ok(registry)
    }

    pub fn records(&self) -> &[RegistryRecord] {
        &self.records
    }

    pub fn symptoms(&self) -> &[SymptomReport] {
        &self.symptoms
    }

    pub fn knows(&self, pseudo_id: &CouponId) -> bool {
        self.doses.contains(&(*pseudo_id, 1)) || self.doses.contains(&(*pseudo_id, 2))
    }

    fn check(&self, entry: &RegistryEntry) -> Result<(), RegistryError> {
        match entry {
            RegistryEntry::Record(record) => {
                record.validate()?;
                if self.doses.contains(&(record.pseudo_id, record.dose_number)) {
                    return Err(RegistryError::DuplicateDose {
                        pseudo_id: record.pseudo_id,
                        dose_number: record.dose_number,
                    });
                }
            }
            RegistryEntry::Symptom(report) => {
                if !(1..=5).contains(&report.severity) {
                    return Err(RegistryError::InvalidSeverity(report.severity));
                }
                if !self.knows(&report.pseudo_id) {
                    return Err(RegistryError::UnknownPseudoId(report.pseudo_id));
                }
            }
        }
        Ok(())
    }

    fn apply(&mut self, entry: RegistryEntry) -> Result<Acknowledgment, RegistryError> {
        self.check(&entry)?;
        match entry {
            RegistryEntry::Record(record) => {
                self.doses.insert((record.pseudo_id, record.dose_number));
                self.records.push(record);
            }
            RegistryEntry::Symptom(report) => self.symptoms.push(report),
        }
        self.entries += 1;
        Ok(Acknowledgment {
            sequence: self.entries,
        })
    }

    fn submit(&mut self, entry: RegistryEntry) -> Result<Acknowledgment, RegistryError> {
        self.check(&entry)?;
        if let Some(sink) = self.sink.as_mut() {
            let line = serde_json::to_string(&entry).expect("registry entries serialize");
            writeln!(sink, "{line}")?;
            sink.flush()?;
        }
        self.apply(entry)
    }

    pub fn submit_record(&mut self, record: RegistryRecord) -> Result<Acknowledgment, RegistryError> {
        self.submit(RegistryEntry::Record(record))
    }

    /// Wire-level submission: any field outside the record schema is refused
    /// as `PIIFieldPresent`.
    pub fn submit_record_json(&mut self, json: &str) -> Result<Acknowledgment, RegistryError> {
        let record = parse_strict(json, RECORD_FIELDS)?;
        self.submit_record(record)
    }

    pub fn submit_symptom_report(&mut self, report: SymptomReport) -> Result<Acknowledgment, RegistryError> {
        self.submit(RegistryEntry::Symptom(report))
    }

    pub fn submit_symptom_json(&mut self, json: &str) -> Result<Acknowledgment, RegistryError> {
        let report = parse_strict(json, SYMPTOM_FIELDS)?;
        self.submit_symptom_report(report)
    }

    /// Record counts per value of `dimension`, largest first; ties by value.
    pub fn aggregate(&self, dimension: Dimension) -> Vec<AggregateView> {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for record in &self.records {
            *counts.entry(dimension.value_of(record)).or_default() += 1;
        }
        let mut out: Vec<_> = counts
            .into_iter()
            .map(|(value, count)| AggregateView {
                dimension,
                value,
                count,
            })
            .collect();
        out.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.value.cmp(&b.value)));
        out
    }

    /// The persisted form of the whole registry.
    pub fn to_state_string(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            out += &serde_json::to_string(&RegistryEntry::Record(record.clone())).expect("serialize");
            out.push('\n');
        }
        for report in &self.symptoms {
            out += &serde_json::to_string(&RegistryEntry::Symptom(report.clone())).expect("serialize");
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: u8, manufacturer: &str, dose: u8) -> RegistryRecord {
        RegistryRecord {
            pseudo_id: CouponId::from_bytes([id; 16]),
            city: "Springfield".into(),
            phase: "1B".into(),
            manufacturer: manufacturer.into(),
            dose_number: dose,
            date: "2021-01-01".into(),
        }
    }

    #[test]
    fn duplicate_dose_is_rejected() {
        let mut r = Registry::new();
        r.submit_record(record(1, "Pfizer", 1)).unwrap();
        let err = r.submit_record(record(1, "Pfizer", 1)).unwrap_err();
        assert_eq!(err.code(), ErrorCode::DuplicateDose);
        r.submit_record(record(1, "Pfizer", 2)).unwrap();
        assert_eq!(r.records().len(), 2);
    }

    #[test]
    fn invalid_records_are_rejected() {
        let mut r = Registry::new();
        assert_eq!(r.submit_record(record(1, "Pfizer", 3)).unwrap_err().code(), ErrorCode::InvalidRecord);
        assert_eq!(r.submit_record(record(1, "", 1)).unwrap_err().code(), ErrorCode::InvalidRecord);
        let mut bad_date = record(1, "Pfizer", 1);
        bad_date.date = "1/1/2021".into();
        assert_eq!(r.submit_record(bad_date).unwrap_err().code(), ErrorCode::InvalidRecord);
        assert!(r.records().is_empty());
    }

    #[test]
    fn json_with_extra_fields_is_pii() {
        let mut r = Registry::new();
        let good = serde_json::to_string(&record(1, "Pfizer", 1)).unwrap();
        r.submit_record_json(&good).unwrap();

        let mut value: Value = serde_json::from_str(&serde_json::to_string(&record(2, "Pfizer", 1)).unwrap()).unwrap();
        value["name"] = "John Doe".into();
        let err = r.submit_record_json(&value.to_string()).unwrap_err();
        assert!(matches!(err, RegistryError::PIIFieldPresent(ref f) if f == "name"));
        assert_eq!(r.submit_record_json("[1,2]").unwrap_err().code(), ErrorCode::InvalidRecord);
        assert_eq!(r.submit_record_json("{\"pseudo_id\":\"zz\"}").unwrap_err().code(), ErrorCode::InvalidRecord);
    }

    #[test]
    fn symptom_reports() {
        let mut r = Registry::new();
        let report = |id: u8, severity| SymptomReport {
            pseudo_id: CouponId::from_bytes([id; 16]),
            days_since_dose: 2,
            symptoms: vec!["headache".into()],
            severity,
        };
        assert_eq!(r.submit_symptom_report(report(1, 2)).unwrap_err().code(), ErrorCode::UnknownPseudoId);
        r.submit_record(record(1, "Pfizer", 1)).unwrap();
        r.submit_symptom_report(report(1, 2)).unwrap();
        r.submit_symptom_report(report(1, 3)).unwrap();
        assert_eq!(r.submit_symptom_report(report(1, 6)).unwrap_err().code(), ErrorCode::InvalidSeverity);
        assert_eq!(r.submit_symptom_report(report(1, 0)).unwrap_err().code(), ErrorCode::InvalidSeverity);
        assert_eq!(r.symptoms().len(), 2);
        assert_eq!(
            r.submit_symptom_json("{\"pseudo_id\":\"00\",\"dob\":\"1970-01-01\"}").unwrap_err().code(),
            ErrorCode::PIIFieldPresent
        );
    }

    #[test]
    fn aggregate_counts() {
        let mut r = Registry::new();
        assert!(r.aggregate(Dimension::Manufacturer).is_empty());
        for i in 0..3 {
            r.submit_record(record(i, "Pfizer", 1)).unwrap();
        }
        for i in 3..5 {
            r.submit_record(record(i, "Moderna", 1)).unwrap();
        }
        let view: Vec<_> = r
            .aggregate(Dimension::Manufacturer)
            .into_iter()
            .map(|v| (v.value, v.count))
            .collect();
        assert_eq!(view, vec![("Pfizer".to_string(), 3), ("Moderna".to_string(), 2)]);
        assert_eq!(r.aggregate(Dimension::DoseNumber)[0].value, "1");
    }

    #[test]
    fn replaying_submissions_is_idempotent() {
        let attempts = vec![
            RegistryEntry::Record(record(1, "Pfizer", 1)),
            RegistryEntry::Record(record(1, "Pfizer", 1)),
            RegistryEntry::Symptom(SymptomReport {
                pseudo_id: CouponId::from_bytes([1; 16]),
                days_since_dose: 0,
                symptoms: vec![],
                severity: 1,
            }),
            RegistryEntry::Record(record(2, "Moderna", 1)),
            RegistryEntry::Record(record(2, "Moderna", 1)),
        ];
        let run = || {
            let mut r = Registry::new();
            for a in attempts.clone() {
                let _ = r.submit(a);
            }
            r
        };
        let (a, b) = (run(), run());
        assert_eq!(a.to_state_string(), b.to_state_string());
        let replayed = Registry::replay(&a.to_state_string()).unwrap();
        assert_eq!(replayed.to_state_string(), a.to_state_string());
        assert_eq!(a.records().len(), 2);
    }

    #[test]
    fn dimension_parsing() {
        for d in Dimension::ALL {
            assert_eq!(d.as_str().parse::<Dimension>().unwrap(), d);
        }
        assert!("name".parse::<Dimension>().is_err());
    }
}
