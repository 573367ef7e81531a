//! Drives every role through the CLI against file-backed state in a temp dir.

use std::path::{Path, PathBuf};

use vaxcard_gateway::cli::cli_dispatch;

struct Env {
    dir: tempfile::TempDir,
    config: PathBuf,
}

impl Env {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("vaxcard.conf");
        std::fs::write(&config, "active_phases=1A,1B\n").unwrap();
        let env = Env { dir, config };
        env.ok(&["keys", "gen", "--role", "authority"]);
        env.ok(&["keys", "gen", "--role", "clinic"]);
        env
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> (i32, String, String) {
        let mut argv = vec!["--config", self.config.to_str().unwrap()];
        argv.extend_from_slice(args);
        cli_dispatch(&argv)
    }

    fn ok(&self, args: &[&str]) -> String {
        let (code, out, err) = self.run(args);
        assert_eq!(code, 0, "{args:?} failed: {err}");
        out
    }
}

fn value<'a>(out: &'a str, key: &str) -> &'a str {
    out.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no {key}= in {out:?}"))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Issues one coupon and returns the path holding it.
fn one_coupon(env: &Env) -> PathBuf {
    let out = env.ok(&["authority", "issue", "--city", "Springfield", "--phase", "1B", "--total", "1", "--job", "Teacher"]);
    let path = env.path("coupon.txt");
    std::fs::write(&path, out).unwrap();
    path
}

#[test]
fn second_checkin_exits_one_with_already_redeemed() {
    let env = Env::new();
    let coupon = one_coupon(&env);
    let out = env.ok(&["clinic", "checkin", "--coupon", p(&coupon)]);
    assert_eq!(value(&out, "job"), "Teacher");
    let (code, _, err) = env.run(&["clinic", "checkin", "--coupon", p(&coupon)]);
    assert_eq!(code, 1);
    assert!(err.starts_with("error=AlreadyRedeemed"), "{err}");
}

#[test]
fn full_course_and_disclosure_levels() {
    let env = Env::new();
    let coupon = one_coupon(&env);
    let id = value(&env.ok(&["clinic", "checkin", "--coupon", p(&coupon)]), "coupon_id").to_owned();
    let (badge1, passkey, badge2, status) =
        (env.path("badge1"), env.path("passkey"), env.path("badge2"), env.path("status"));
    env.ok(&[
        "clinic", "dose1", "--coupon", p(&coupon), "--name", "Grace Hopper", "--dob", "12/9/1906",
        "--manufacturer", "Pfizer", "--lot", "EL9261", "--date", "2021-01-15", "--clinic-name", "Pier 9",
        "--location", "Seattle", "--timestamp", "2021-01-15T10:00:00Z", "--badge-out", p(&badge1),
        "--passkey-out", p(&passkey),
    ]);
    env.ok(&[
        "clinic", "dose2", "--badge", p(&badge1), "--passkey", p(&passkey), "--manufacturer", "Pfizer",
        "--date", "2021-02-05", "--badge-out", p(&badge2), "--status-out", p(&status),
    ]);

    let out = env.ok(&["verify", "status", "--status", p(&status)]);
    assert_eq!(value(&out, "level"), "StatusOnly");
    assert_eq!(value(&out, "doses_received"), "2");
    assert!(!out.contains("Grace"));

    let out = env.ok(&["verify", "name", "--status", p(&status), "--passkey", p(&passkey), "--coupon-id", &id]);
    assert_eq!(value(&out, "name"), "Grace Hopper");

    let out = env.ok(&["verify", "full", "--badge", p(&badge2), "--passkey", p(&passkey)]);
    assert_eq!(value(&out, "dob"), "1906-12-09");
    assert_eq!(value(&out, "dose2"), "Pfizer,2021-02-05,");
    assert_eq!(value(&out, "location"), "Seattle");

    let (code, _, err) = env.run(&[
        "clinic", "dose2", "--badge", p(&badge1), "--passkey", p(&passkey), "--manufacturer", "Pfizer",
        "--date", "2021-02-05",
    ]);
    assert_eq!(code, 1);
    assert!(err.starts_with("error=NotDosed1"), "{err}");

    env.ok(&["registry", "submit", "--coupon", p(&coupon), "--badge", p(&badge2), "--dose", "1"]);
    env.ok(&["registry", "submit", "--coupon", p(&coupon), "--badge", p(&badge2), "--dose", "2"]);
    let (code, _, err) = env.run(&["registry", "submit", "--coupon", p(&coupon), "--badge", p(&badge2), "--dose", "2"]);
    assert_eq!(code, 1);
    assert!(err.starts_with("error=DuplicateDose"), "{err}");
    env.ok(&["registry", "symptom", "--pseudo-id", &id, "--days", "1", "--severity", "2", "--symptom", "fatigue"]);

    assert_eq!(env.ok(&["registry", "aggregate", "--dimension", "manufacturer"]), "Pfizer,2\n");
    assert_eq!(env.ok(&["registry", "aggregate", "--dimension", "dose-number"]), "1,1\n2,1\n");

    for state in ["ledger.log", "registry.jsonl", "truststore.txt", "keystore.txt"] {
        let text = std::fs::read_to_string(env.path(state)).unwrap();
        assert!(!text.contains("Grace") && !text.contains("1906"), "{state} leaks PII");
    }
}

#[test]
fn record_json_with_extra_field_is_rejected() {
    let env = Env::new();
    let record = env.path("record.json");
    std::fs::write(
        &record,
        r#"{"pseudo_id":"000102030405060708090a0b0c0d0e0f","city":"X","phase":"1B","manufacturer":"M","dose_number":1,"date":"2021-01-01","name":"Leak"}"#,
    )
    .unwrap();
    let (code, _, err) = env.run(&["registry", "submit", "--record", p(&record)]);
    assert_eq!(code, 1);
    assert!(err.starts_with("error=PIIFieldPresent"), "{err}");
}

#[test]
fn tampered_coupon_is_bad_signature() {
    let env = Env::new();
    let coupon = one_coupon(&env);
    let text = std::fs::read_to_string(&coupon).unwrap();
    let mut env_bytes = vaxcard_core::Envelope::from_card_text(text.trim()).unwrap().to_bytes().unwrap();
    let last = env_bytes.len() - 1;
    env_bytes[last] ^= 1;
    let forged = vaxcard_core::Envelope::from_bytes(&env_bytes).unwrap().to_card_text().unwrap();
    std::fs::write(&coupon, forged.as_str()).unwrap();
    let (code, _, err) = env.run(&["clinic", "checkin", "--coupon", p(&coupon)]);
    assert_eq!(code, 1);
    assert!(err.starts_with("error=BadSignature"), "{err}");
}

#[test]
fn unknown_config_key_exits_two() {
    let env = Env::new();
    std::fs::write(&env.config, "colour=blue\n").unwrap();
    let (code, _, err) = env.run(&["registry", "aggregate", "--dimension", "city"]);
    assert_eq!(code, 2);
    assert!(err.starts_with("error=ConfigError"), "{err}");
}

#[test]
fn attrs_count_must_match_total() {
    let env = Env::new();
    let attrs = env.path("attrs.csv");
    std::fs::write(&attrs, "18-29,Nurse,0\n").unwrap();
    let (code, _, err) = env.run(&[
        "authority", "issue", "--city", "X", "--phase", "1A", "--total", "2", "--attrs", p(&attrs),
    ]);
    assert_eq!(code, 1);
    assert!(err.starts_with("error=AttrCountMismatch"), "{err}");
}
