//! The operations both front ends drive. All ledger and registry mutations go
//! through one mutex per store, so check-in is linearizable across requests.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::Utc;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use vaxcard_core::authority::CouponAttributes;
use vaxcard_core::cardcodec::{format_timestamp, normalize_timestamp};
use vaxcard_core::cryptokit::{KeyId, PublicKey};
use vaxcard_core::registry::{Acknowledgment, AggregateView};
use vaxcard_core::{
    administer_first_dose, administer_second_dose, check_in, disclose_full, disclose_name, issue_coupon_batch,
    verify_status, CardKind, CardText, CouponId, CouponMessage, Dimension, DisclosureResult, DoseInfo, Envelope, Pii,
    Registry, RedemptionLedger, Role, TrustStore, VisitDetails,
};

use crate::config::GatewayConfig;
use crate::failure::Failure;
use crate::keystore::Keystore;

/// Operation outcomes, one line each. Lines name the operation and the error
/// code only; card contents never appear.
#[derive(Debug, Default)]
pub struct AuditLog {
    lines: Mutex<Vec<String>>,
}

impl AuditLog {
    pub fn record(&self, line: String) {
        tracing::info!(target: "vaxcard::audit", "{line}");
        self.lines.lock().push(line);
    }

    pub fn lines(&self) -> Vec<String> {
        self.lines.lock().clone()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoseInput {
    pub manufacturer: String,
    #[serde(default)]
    pub dose_number: Option<u8>,
    pub date: String,
    #[serde(default)]
    pub lot: String,
}

impl DoseInput {
    fn to_dose(&self, default_number: u8) -> Result<DoseInfo, Failure> {
        Ok(DoseInfo::new(
            &self.manufacturer,
            self.dose_number.unwrap_or(default_number),
            &self.date,
            &self.lot,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClinicInput {
    pub name: String,
    pub location: String,
    #[serde(default)]
    pub timestamp: Option<String>,
}

impl ClinicInput {
    fn to_visit(&self) -> Result<VisitDetails, Failure> {
        let timestamp = match &self.timestamp {
            Some(t) => normalize_timestamp(t)
                .ok_or_else(|| Failure::MalformedBody(format!("timestamp {t:?} is not RFC 3339")))?,
            None => format_timestamp(Utc::now()),
        };
        Ok(VisitDetails {
            clinic_name: self.name.clone(),
            location: self.location.clone(),
            timestamp,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CouponView {
    pub coupon_id: CouponId,
    pub number: u32,
    pub total: u32,
    pub city: String,
    pub phase: String,
    pub age_band: String,
    pub job: String,
    pub comorbid: bool,
}

impl From<&CouponMessage> for CouponView {
    fn from(c: &CouponMessage) -> Self {
        CouponView {
            coupon_id: c.coupon_id,
            number: c.number,
            total: c.total,
            city: c.city.clone(),
            phase: c.phase.clone(),
            age_band: c.age_band.clone(),
            job: c.job.clone(),
            comorbid: c.comorbid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FirstDoseOutput {
    pub badge_card_text: String,
    pub passkey_card_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SecondDoseOutput {
    pub badge_card_text: String,
    pub status_card_text: String,
}

fn parse_card(text: &str) -> Result<Envelope, Failure> {
    Ok(Envelope::from_card_text(text.trim())?)
}

fn card_text(env: &Envelope) -> Result<String, Failure> {
    Ok(env.to_card_text()?.into_string())
}

pub struct Gateway {
    config: GatewayConfig,
    persist: bool,
    keys: RwLock<Keystore>,
    trust: RwLock<TrustStore>,
    ledger: Mutex<RedemptionLedger>,
    registry: Mutex<Registry>,
    audit: AuditLog,
}

impl Gateway {
    /// Opens every state file named by `config`, creating empty ones as needed.
    pub fn open(config: GatewayConfig) -> Result<Self, Failure> {
        let cfg_err = |what: &str, e: &dyn std::fmt::Display| Failure::Config(format!("{what}: {e}"));
        for path in [&config.keystore_path, &config.ledger_path, &config.registry_path, &config.truststore_path] {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| cfg_err("state directory", &e))?;
            }
        }
        let keys = Keystore::load(&config.keystore_path).map_err(|e| cfg_err("keystore", &e))?;
        let trust = TrustStore::load(&config.truststore_path).map_err(|e| cfg_err("trust store", &e))?;
        let ledger = RedemptionLedger::open(&config.ledger_path).map_err(|e| cfg_err("ledger", &e))?;
        let registry = Registry::open(&config.registry_path).map_err(|e| cfg_err("registry", &e))?;
        Ok(Gateway {
            config,
            persist: true,
            keys: RwLock::new(keys),
            trust: RwLock::new(trust),
            ledger: Mutex::new(ledger),
            registry: Mutex::new(registry),
            audit: AuditLog::default(),
        })
    }

    /// Purely in-memory gateway; nothing touches the filesystem.
    pub fn in_memory(active_phases: BTreeSet<String>, keys: Keystore, trust: TrustStore) -> Self {
        let mut config = GatewayConfig::in_dir(Path::new("."));
        config.active_phases = active_phases;
        Gateway {
            config,
            persist: false,
            keys: RwLock::new(keys),
            trust: RwLock::new(trust),
            ledger: Mutex::new(RedemptionLedger::new()),
            registry: Mutex::new(Registry::new()),
            audit: AuditLog::default(),
        }
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn trust_store(&self) -> TrustStore {
        self.trust.read().clone()
    }

    pub fn ledger_log(&self) -> String {
        self.ledger.lock().to_log_string()
    }

    pub fn registry_state(&self) -> String {
        self.registry.lock().to_state_string()
    }

    fn logged<T>(&self, op: &str, result: Result<T, Failure>) -> Result<T, Failure> {
        let ts = format_timestamp(Utc::now());
        match &result {
            Ok(_) => self.audit.record(format!("{ts} op={op} result=ok")),
            Err(f) => self.audit.record(format!("{ts} op={op} result=error code={}", f.name())),
        }
        result
    }

    fn signing_key(&self, role: Role) -> Result<vaxcard_core::SigningKeyPair, Failure> {
        self.keys
            .read()
            .current(role)
            .cloned()
            .ok_or_else(|| Failure::Config(format!("no {role} signing key; run `keys gen --role {role}`")))
    }

    pub fn issue(
        &self,
        city: &str,
        phase: &str,
        attrs: &[CouponAttributes],
        total: u32,
    ) -> Result<Vec<CardText>, Failure> {
        let result = (|| {
            let key = self.signing_key(Role::Authority)?;
            let batch = issue_coupon_batch(&key, city, phase, attrs, total)?;
            batch
                .iter()
                .map(|env| Ok(env.to_card_text()?))
                .collect::<Result<Vec<_>, Failure>>()
        })();
        self.logged("authority.issue", result)
    }

    pub fn checkin(&self, coupon_text: &str) -> Result<CouponView, Failure> {
        let result = (|| {
            let env = parse_card(coupon_text)?;
            let trust = self.trust.read();
            let coupon = check_in(&env, &trust, &mut self.ledger.lock(), &self.config.active_phases)?;
            Ok(CouponView::from(&coupon))
        })();
        self.logged("clinic.checkin", result)
    }

    pub fn dose1(
        &self,
        coupon_text: &str,
        pii: &Pii,
        dose: &DoseInput,
        clinic: &ClinicInput,
    ) -> Result<FirstDoseOutput, Failure> {
        let result = (|| {
            let env = parse_card(coupon_text)?;
            self.trust.read().verify_envelope(&env, CardKind::Coupon, Role::Authority)?;
            let coupon = env.message.as_coupon().expect("kind checked").clone();
            let key = self.signing_key(Role::Clinic)?;
            let visit = clinic.to_visit()?;
            let cards = administer_first_dose(&coupon, pii, &dose.to_dose(1)?, &key, &visit, &mut self.ledger.lock())?;
            Ok(FirstDoseOutput {
                badge_card_text: card_text(&cards.badge)?,
                passkey_card_text: card_text(&cards.passkey)?,
            })
        })();
        self.logged("clinic.dose1", result)
    }

    pub fn dose2(&self, badge_text: &str, passkey_text: &str, dose: &DoseInput) -> Result<SecondDoseOutput, Failure> {
        let result = (|| {
            let badge = parse_card(badge_text)?;
            let passkey = parse_card(passkey_text)?;
            let key = self.signing_key(Role::Clinic)?;
            let trust = self.trust.read();
            let cards =
                administer_second_dose(&badge, &passkey, &dose.to_dose(2)?, &trust, &key, &mut self.ledger.lock())?;
            Ok(SecondDoseOutput {
                badge_card_text: card_text(&cards.badge)?,
                status_card_text: card_text(&cards.status)?,
            })
        })();
        self.logged("clinic.dose2", result)
    }

    pub fn verify_status(&self, status_text: &str) -> Result<DisclosureResult, Failure> {
        let result = (|| Ok(verify_status(&parse_card(status_text)?, &self.trust.read())?))();
        self.logged("verify.status", result)
    }

    pub fn verify_name(&self, status_text: &str, passkey_text: &str, coupon_id: &str) -> Result<DisclosureResult, Failure> {
        let result = (|| {
            let id: CouponId = coupon_id
                .trim()
                .parse()
                .map_err(|_| Failure::MalformedBody(format!("coupon_id {coupon_id:?} is not 32 hex characters")))?;
            let status = parse_card(status_text)?;
            let passkey = parse_card(passkey_text)?;
            Ok(disclose_name(&status, &passkey, &id, &self.trust.read())?)
        })();
        self.logged("verify.name", result)
    }

    pub fn verify_full(&self, badge_text: &str, passkey_text: &str) -> Result<DisclosureResult, Failure> {
        let result = (|| {
            let badge = parse_card(badge_text)?;
            let passkey = parse_card(passkey_text)?;
            Ok(disclose_full(&badge, &passkey, &self.trust.read())?)
        })();
        self.logged("verify.full", result)
    }

    pub fn submit_record_json(&self, json: &str) -> Result<Acknowledgment, Failure> {
        let result = self.registry.lock().submit_record_json(json).map_err(Failure::from);
        self.logged("registry.record", result)
    }

    pub fn submit_symptom_json(&self, json: &str) -> Result<Acknowledgment, Failure> {
        let result = self.registry.lock().submit_symptom_json(json).map_err(Failure::from);
        self.logged("registry.symptom", result)
    }

    pub fn aggregate(&self, dimension: Dimension) -> Vec<AggregateView> {
        self.registry.lock().aggregate(dimension)
    }

    /// Generates a signing key, stores its seed and trusts its public half.
    pub fn keys_gen(&self, role: Role) -> Result<(KeyId, PublicKey), Failure> {
        let result = (|| {
            let mut keys = self.keys.write();
            let pair = keys.generate(role).map_err(|e| Failure::Config(e.to_string()))?.clone();
            let mut trust = self.trust.write();
            trust.register(role, pair.public())?;
            if self.persist {
                keys.save(&self.config.keystore_path).map_err(|e| Failure::Config(e.to_string()))?;
                trust.save(&self.config.truststore_path).map_err(|e| Failure::Config(e.to_string()))?;
            }
            Ok((pair.key_id(), pair.public()))
        })();
        self.logged("keys.gen", result)
    }

    pub fn keys_register(&self, role: Role, public: PublicKey) -> Result<KeyId, Failure> {
        let result = (|| {
            let mut trust = self.trust.write();
            let id = trust.register(role, public)?;
            if self.persist {
                trust.save(&self.config.truststore_path).map_err(|e| Failure::Config(e.to_string()))?;
            }
            Ok(id)
        })();
        self.logged("keys.register", result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use vaxcard_core::ErrorCode;

    fn gateway() -> Gateway {
        let gw = Gateway::in_memory(["1B".to_string()].into(), Keystore::default(), TrustStore::new());
        gw.keys_gen(Role::Authority).unwrap();
        gw.keys_gen(Role::Clinic).unwrap();
        gw
    }

    fn attrs(n: usize) -> Vec<CouponAttributes> {
        vec![
            CouponAttributes {
                age_band: "65+".into(),
                job: "Retired".into(),
                comorbid: true,
            };
            n
        ]
    }

    fn dose(number: u8) -> DoseInput {
        DoseInput {
            manufacturer: "Moderna".into(),
            dose_number: Some(number),
            date: "2021-02-01".into(),
            lot: "L1".into(),
        }
    }

    fn clinic() -> ClinicInput {
        ClinicInput {
            name: "Civic Center".into(),
            location: "Springfield".into(),
            timestamp: Some("2021-02-01T09:30:00Z".into()),
        }
    }

    #[test]
    fn full_course_through_the_service() {
        let gw = gateway();
        let coupons = gw.issue("Springfield", "1B", &attrs(3), 3).unwrap();
        assert_eq!(coupons.len(), 3);
        let view = gw.checkin(coupons[0].as_str()).unwrap();
        assert_eq!(view.number, 1);
        let pii = Pii::new("Ada Lovelace", "1815-12-10", Some("F")).unwrap();
        let first = gw.dose1(coupons[0].as_str(), &pii, &dose(1), &clinic()).unwrap();
        let second = gw.dose2(&first.badge_card_text, &first.passkey_card_text, &dose(2)).unwrap();
        assert_eq!(gw.verify_status(&second.status_card_text).unwrap().doses_received, 2);
        let named = gw
            .verify_name(&second.status_card_text, &first.passkey_card_text, &view.coupon_id.to_hex())
            .unwrap();
        assert_eq!(named.name.as_deref(), Some("Ada Lovelace"));
        let full = gw.verify_full(&second.badge_card_text, &first.passkey_card_text).unwrap();
        assert_eq!(full.full.unwrap().doses.len(), 2);
    }

    #[test]
    fn second_checkin_is_already_redeemed() {
        let gw = gateway();
        let coupons = gw.issue("Springfield", "1B", &attrs(1), 1).unwrap();
        gw.checkin(coupons[0].as_str()).unwrap();
        let err = gw.checkin(coupons[0].as_str()).unwrap_err();
        assert_eq!(err.name(), ErrorCode::AlreadyRedeemed.as_str());
        assert_eq!(err.http_status(), 409);
    }

    #[test]
    fn inactive_phase_is_refused() {
        let gw = gateway();
        let coupons = gw.issue("Springfield", "2", &attrs(1), 1).unwrap();
        assert_eq!(gw.checkin(coupons[0].as_str()).unwrap_err().name(), "PhaseNotActive");
    }

    #[test]
    fn missing_signing_key_is_a_config_failure() {
        let gw = Gateway::in_memory(BTreeSet::new(), Keystore::default(), TrustStore::new());
        let err = gw.issue("X", "1A", &attrs(1), 1).unwrap_err();
        assert_eq!(err.name(), "ConfigError");
    }

    #[test]
    fn audit_lines_record_outcomes_only() {
        let gw = gateway();
        let coupons = gw.issue("Springfield", "1B", &attrs(1), 1).unwrap();
        gw.checkin(coupons[0].as_str()).unwrap();
        let _ = gw.checkin(coupons[0].as_str());
        let lines = gw.audit().lines();
        assert!(lines.iter().any(|l| l.ends_with("op=clinic.checkin result=ok")));
        assert!(lines
            .iter()
            .any(|l| l.ends_with("op=clinic.checkin result=error code=AlreadyRedeemed")));
        assert!(lines.iter().all(|l| !l.contains("SPC1:")));
    }

    #[test]
    fn bad_timestamp_is_malformed_body() {
        let gw = gateway();
        let coupons = gw.issue("Springfield", "1B", &attrs(1), 1).unwrap();
        gw.checkin(coupons[0].as_str()).unwrap();
        let pii = Pii::new("A B", "1990-01-01", None).unwrap();
        let mut c = clinic();
        c.timestamp = Some("yesterday".into());
        assert_eq!(gw.dose1(coupons[0].as_str(), &pii, &dose(1), &c).unwrap_err().name(), "MalformedBody");
    }
}
