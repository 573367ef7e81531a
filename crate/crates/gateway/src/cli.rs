//! `vaxcard` command line. Every role's operation, reading and writing
//! card text through files or standard streams.
//!
//! Output is `key=value` lines on stdout. Failures print
//! `error=<Name> message=<text>` on stderr and exit 1 for protocol errors,
//! 2 for usage and configuration errors.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vaxcard_core::authority::CouponAttributes;
use vaxcard_core::cryptokit::PublicKey;
use vaxcard_core::{Dimension, DisclosureResult, Pii, RegistryRecord, Role, SymptomReport};

use crate::config::GatewayConfig;
use crate::failure::Failure;
use crate::service::{ClinicInput, DoseInput, Gateway};

#[derive(Debug, Parser)]
#[command(name = "vaxcard", version, about = "Signed QR-card vaccination protocol")]
struct Cli {
    /// Config file (`key=value` lines). Defaults to $VAXCARD_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Extra active phase for check-in, in addition to the config's list.
    #[arg(long = "active-phase", global = true)]
    active_phases: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Central issuer operations.
    #[command(subcommand)]
    Authority(AuthorityCmd),
    /// Vaccination site operations.
    #[command(subcommand)]
    Clinic(ClinicCmd),
    /// Third-party verification.
    #[command(subcommand)]
    Verify(VerifyCmd),
    /// Anonymized registry.
    #[command(subcommand)]
    Registry(RegistryCmd),
    /// Signing keys and the trust store.
    #[command(subcommand)]
    Keys(KeysCmd),
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        listen: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
enum AuthorityCmd {
    /// Sign a batch of coupons, one card text per line.
    Issue {
        #[arg(long)]
        city: String,
        #[arg(long)]
        phase: String,
        #[arg(long)]
        total: u32,
        /// CSV of `age_band,job,comorbid` lines, one per coupon.
        #[arg(long, conflicts_with_all = ["age_band", "job", "comorbid"])]
        attrs: Option<PathBuf>,
        #[arg(long, default_value = "")]
        age_band: String,
        #[arg(long, default_value = "")]
        job: String,
        #[arg(long)]
        comorbid: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct DoseArgs {
    #[arg(long)]
    manufacturer: String,
    #[arg(long)]
    date: String,
    #[arg(long, default_value = "")]
    lot: String,
}

#[derive(Debug, Subcommand)]
enum ClinicCmd {
    /// Verify a coupon and mark it checked in.
    Checkin {
        #[arg(long)]
        coupon: PathBuf,
    },
    /// First dose: issue Badge and Passkey.
    Dose1 {
        #[arg(long)]
        coupon: PathBuf,
        #[arg(long)]
        name: String,
        #[arg(long)]
        dob: String,
        #[arg(long)]
        sex: Option<String>,
        #[command(flatten)]
        dose: DoseArgs,
        #[arg(long)]
        clinic_name: String,
        #[arg(long)]
        location: String,
        #[arg(long)]
        timestamp: Option<String>,
        #[arg(long)]
        badge_out: Option<PathBuf>,
        #[arg(long)]
        passkey_out: Option<PathBuf>,
    },
    /// Second dose: reissue Badge and issue Status.
    Dose2 {
        #[arg(long)]
        badge: PathBuf,
        #[arg(long)]
        passkey: PathBuf,
        #[command(flatten)]
        dose: DoseArgs,
        #[arg(long)]
        badge_out: Option<PathBuf>,
        #[arg(long)]
        status_out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum VerifyCmd {
    Status {
        #[arg(long)]
        status: PathBuf,
    },
    Name {
        #[arg(long)]
        status: PathBuf,
        #[arg(long)]
        passkey: PathBuf,
        #[arg(long)]
        coupon_id: String,
    },
    Full {
        #[arg(long)]
        badge: PathBuf,
        #[arg(long)]
        passkey: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum RegistryCmd {
    /// Submit a dose record, as JSON or derived from a coupon and badge.
    Submit {
        #[arg(long, conflicts_with_all = ["coupon", "badge"])]
        record: Option<PathBuf>,
        #[arg(long, requires = "badge")]
        coupon: Option<PathBuf>,
        #[arg(long, requires = "coupon")]
        badge: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        dose: u8,
    },
    Symptom {
        #[arg(long)]
        pseudo_id: String,
        #[arg(long)]
        days: u32,
        #[arg(long)]
        severity: u8,
        #[arg(long = "symptom")]
        symptoms: Vec<String>,
    },
    Aggregate {
        #[arg(long, value_enum)]
        dimension: DimensionArg,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DimensionArg {
    City,
    Phase,
    Manufacturer,
    DoseNumber,
}

impl From<DimensionArg> for Dimension {
    fn from(d: DimensionArg) -> Self {
        match d {
            DimensionArg::City => Dimension::City,
            DimensionArg::Phase => Dimension::Phase,
            DimensionArg::Manufacturer => Dimension::Manufacturer,
            DimensionArg::DoseNumber => Dimension::DoseNumber,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RoleArg {
    Authority,
    Clinic,
}

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Self {
        match r {
            RoleArg::Authority => Role::Authority,
            RoleArg::Clinic => Role::Clinic,
        }
    }
}

#[derive(Debug, Subcommand)]
enum KeysCmd {
    /// Generate a signing key and trust its public half.
    Gen {
        #[arg(long, value_enum)]
        role: RoleArg,
    },
    /// Trust an externally generated public key.
    Register {
        #[arg(long, value_enum)]
        role: RoleArg,
        #[arg(long)]
        public: String,
    },
}

struct Io<'a> {
    stdin: &'a mut dyn Read,
    stdout: &'a mut dyn Write,
}

impl Io<'_> {
    fn read(&mut self, path: &Path) -> Result<String, Failure> {
        if path == Path::new("-") {
            let mut s = String::new();
            self.stdin
                .read_to_string(&mut s)
                .map_err(|e| Failure::MalformedBody(format!("stdin: {e}")))?;
            Ok(s)
        } else {
            std::fs::read_to_string(path).map_err(|e| Failure::MalformedBody(format!("{}: {e}", path.display())))
        }
    }

    fn out(&mut self, line: impl AsRef<str>) -> Result<(), Failure> {
        writeln!(self.stdout, "{}", line.as_ref()).map_err(|e| Failure::Config(format!("stdout: {e}")))
    }

    /// Writes card text to `path`, or prints `label=<text>` when no path is given.
    fn emit_card(&mut self, label: &str, text: &str, path: Option<&Path>) -> Result<(), Failure> {
        match path {
            Some(p) => {
                std::fs::write(p, format!("{text}\n"))
                    .map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
                self.out(format!("{label}_out={}", p.display()))
            }
            None => self.out(format!("{label}={text}")),
        }
    }

    fn disclosure(&mut self, r: &DisclosureResult) -> Result<(), Failure> {
        self.out(format!("level={:?}", r.level))?;
        self.out(format!("doses_received={}", r.doses_received))?;
        if let Some(name) = &r.name {
            self.out(format!("name={name}"))?;
        }
        if let Some(full) = &r.full {
            self.out(format!("dob={}", full.pii.dob))?;
            self.out(format!("sex={}", full.pii.sex.as_deref().unwrap_or("")))?;
            for d in &full.doses {
                self.out(format!("dose{}={},{},{}", d.dose_number, d.manufacturer, d.date, d.lot))?;
            }
            self.out(format!("clinic_name={}", full.visit.clinic_name))?;
            self.out(format!("location={}", full.visit.location))?;
            self.out(format!("timestamp={}", full.visit.timestamp))?;
        }
        Ok(())
    }
}

fn parse_attrs(text: &str) -> Result<Vec<CouponAttributes>, Failure> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let parts: Vec<_> = line.split(',').map(str::trim).collect();
            let [age_band, job, comorbid] = parts[..] else {
                return Err(Failure::MalformedBody(format!("attrs line {}: expected age_band,job,comorbid", i + 1)));
            };
            let comorbid = match comorbid.to_ascii_lowercase().as_str() {
                "1" | "true" | "yes" => true,
                "0" | "false" | "no" | "" => false,
                other => return Err(Failure::MalformedBody(format!("attrs line {}: bad flag {other:?}", i + 1))),
            };
            Ok(CouponAttributes {
                age_band: age_band.to_owned(),
                job: job.to_owned(),
                comorbid,
            })
        })
        .collect()
}

fn dose_input(d: DoseArgs, number: u8) -> DoseInput {
    DoseInput {
        manufacturer: d.manufacturer,
        dose_number: Some(number),
        date: d.date,
        lot: d.lot,
    }
}

fn execute(cli: Cli, io: &mut Io<'_>) -> Result<(), Failure> {
    let mut config = GatewayConfig::discover(cli.config.as_deref()).map_err(|e| Failure::Config(e.to_string()))?;
    config.active_phases.extend(cli.active_phases);

    if let Command::Serve { listen } = cli.command {
        if let Some(addr) = listen {
            config.listen_address = addr;
        }
        let gateway = Arc::new(Gateway::open(config)?);
        let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Config(e.to_string()))?;
        return runtime
            .block_on(crate::http::serve(gateway))
            .map_err(|e| Failure::Config(format!("server: {e}")));
    }

    let gw = Gateway::open(config)?;
    match cli.command {
        Command::Serve { .. } => unreachable!("handled above"),
        Command::Authority(AuthorityCmd::Issue { city, phase, total, attrs, age_band, job, comorbid, out }) => {
            let attrs = match attrs {
                Some(path) => parse_attrs(&io.read(&path)?)?,
                None => vec![CouponAttributes { age_band, job, comorbid }; total as usize],
            };
            let cards = gw.issue(&city, &phase, &attrs, total)?;
            let text: String = cards.iter().map(|c| format!("{c}\n")).collect();
            match out {
                Some(path) => {
                    std::fs::write(&path, text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
                    io.out(format!("issued={}", cards.len()))?;
                }
                None => io.out(text.trim_end())?,
            }
        }
        Command::Clinic(ClinicCmd::Checkin { coupon }) => {
            let c = gw.checkin(&io.read(&coupon)?)?;
            io.out(format!("coupon_id={}", c.coupon_id))?;
            io.out(format!("number={}", c.number))?;
            io.out(format!("total={}", c.total))?;
            io.out(format!("city={}", c.city))?;
            io.out(format!("phase={}", c.phase))?;
            io.out(format!("job={}", c.job))?;
        }
        Command::Clinic(ClinicCmd::Dose1 {
            coupon,
            name,
            dob,
            sex,
            dose,
            clinic_name,
            location,
            timestamp,
            badge_out,
            passkey_out,
        }) => {
            let coupon = io.read(&coupon)?;
            let pii = Pii::new(&name, &dob, sex.as_deref())?;
            let clinic = ClinicInput {
                name: clinic_name,
                location,
                timestamp,
            };
            let cards = gw.dose1(&coupon, &pii, &dose_input(dose, 1), &clinic)?;
            io.emit_card("badge", &cards.badge_card_text, badge_out.as_deref())?;
            io.emit_card("passkey", &cards.passkey_card_text, passkey_out.as_deref())?;
        }
        Command::Clinic(ClinicCmd::Dose2 { badge, passkey, dose, badge_out, status_out }) => {
            let badge = io.read(&badge)?;
            let passkey = io.read(&passkey)?;
            let cards = gw.dose2(&badge, &passkey, &dose_input(dose, 2))?;
            io.emit_card("badge", &cards.badge_card_text, badge_out.as_deref())?;
            io.emit_card("status", &cards.status_card_text, status_out.as_deref())?;
        }
        Command::Verify(VerifyCmd::Status { status }) => {
            let r = gw.verify_status(&io.read(&status)?)?;
            io.disclosure(&r)?;
        }
        Command::Verify(VerifyCmd::Name { status, passkey, coupon_id }) => {
            let status = io.read(&status)?;
            let passkey = io.read(&passkey)?;
            let r = gw.verify_name(&status, &passkey, &coupon_id)?;
            io.disclosure(&r)?;
        }
        Command::Verify(VerifyCmd::Full { badge, passkey }) => {
            let badge = io.read(&badge)?;
            let passkey = io.read(&passkey)?;
            let r = gw.verify_full(&badge, &passkey)?;
            io.disclosure(&r)?;
        }
        Command::Registry(RegistryCmd::Submit { record, coupon, badge, dose }) => {
            let json = match (record, coupon, badge) {
                (Some(path), _, _) => io.read(&path)?,
                (None, Some(coupon), Some(badge)) => {
                    let coupon = vaxcard_core::Envelope::from_card_text(io.read(&coupon)?.trim())?;
                    let badge = vaxcard_core::Envelope::from_card_text(io.read(&badge)?.trim())?;
                    let trust = gw.trust_store();
                    trust.verify_envelope(&coupon, vaxcard_core::CardKind::Coupon, Role::Authority)?;
                    trust.verify_envelope(&badge, vaxcard_core::CardKind::Badge, Role::Clinic)?;
                    let c = coupon.message.as_coupon().expect("kind checked");
                    let b = badge.message.as_badge().expect("kind checked");
                    if b.coupon_id != c.coupon_id {
                        return Err(Failure::MalformedBody("badge and coupon ids differ".into()));
                    }
                    let d = b
                        .doses
                        .iter()
                        .find(|d| d.dose_number == dose)
                        .ok_or_else(|| Failure::MalformedBody(format!("badge has no dose {dose}")))?;
                    serde_json::to_string(&RegistryRecord::for_dose(c, d)).expect("serialize")
                }
                _ => return Err(Failure::MalformedBody("give --record, or --coupon with --badge".into())),
            };
            let ack = gw.submit_record_json(json.trim())?;
            io.out(format!("sequence={}", ack.sequence))?;
        }
        Command::Registry(RegistryCmd::Symptom { pseudo_id, days, severity, symptoms }) => {
            let pseudo_id = pseudo_id
                .parse()
                .map_err(|_| Failure::MalformedBody(format!("pseudo id {pseudo_id:?} is not 32 hex characters")))?;
            let report = SymptomReport {
                pseudo_id,
                days_since_dose: days,
                symptoms,
                severity,
            };
            let ack = gw.submit_symptom_json(&serde_json::to_string(&report).expect("serialize"))?;
            io.out(format!("sequence={}", ack.sequence))?;
        }
        Command::Registry(RegistryCmd::Aggregate { dimension }) => {
            for view in gw.aggregate(dimension.into()) {
                io.out(format!("{},{}", view.value, view.count))?;
            }
        }
        Command::Keys(KeysCmd::Gen { role }) => {
            let role = Role::from(role);
            let (id, public) = gw.keys_gen(role)?;
            io.out(format!("role={role}"))?;
            io.out(format!("key_id={id}"))?;
            io.out(format!("public={}", public.to_hex()))?;
        }
        Command::Keys(KeysCmd::Register { role, public }) => {
            let public = PublicKey::from_hex(public.trim())
                .ok_or_else(|| Failure::MalformedBody("public key must be 64 hex characters".into()))?;
            let id = gw.keys_register(role.into(), public)?;
            io.out(format!("key_id={id}"))?;
        }
    }
    Ok(())
}

/// Runs the CLI against the given streams and returns the process exit code.
pub fn run<I, S>(argv: I, stdin: &mut dyn Read, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            let _ = if code == 0 {
                stdout.write_all(rendered.as_bytes())
            } else {
                stderr.write_all(rendered.as_bytes())
            };
            return code;
        }
    };
    let mut io = Io { stdin, stdout };
    match execute(cli, &mut io) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(stderr, "error={} message={}", f.name(), f.message());
            f.exit_code()
        }
    }
}

/// Runs the CLI with empty stdin, capturing output: `(exit code, stdout, stderr)`.
pub fn cli_dispatch<S: AsRef<str>>(argv: &[S]) -> (i32, String, String) {
    let args: Vec<String> = std::iter::once("vaxcard".to_string())
        .chain(argv.iter().map(|s| s.as_ref().to_owned()))
        .collect();
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run(args, &mut std::io::empty(), &mut out, &mut err);
    (
        code,
        String::from_utf8_lossy(&out).into_owned(),
        String::from_utf8_lossy(&err).into_owned(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attrs_csv_parses_flags() {
        let a = parse_attrs("40-49,Teacher,0\n\n65+,Retired,yes\n").unwrap();
        assert_eq!(a.len(), 2);
        assert!(!a[0].comorbid && a[1].comorbid);
        assert_eq!(a[1].job, "Retired");
        assert!(parse_attrs("40-49,Teacher").is_err());
        assert!(parse_attrs("40-49,Teacher,maybe").is_err());
    }

    #[test]
    fn usage_errors_exit_two() {
        let (code, _, err) = cli_dispatch(&["clinic", "checkin"]);
        assert_eq!(code, 2);
        assert!(err.contains("--coupon"));
        let (code, _, _) = cli_dispatch(&["nonsense"]);
        assert_eq!(code, 2);
    }

    #[test]
    fn help_goes_to_stdout() {
        let (code, out, _) = cli_dispatch(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("authority"));
    }

    #[test]
    fn stdin_dash_reads_input() {
        let mut input: &[u8] = b"hello\n";
        let mut out = Vec::new();
        let mut io = Io {
            stdin: &mut input,
            stdout: &mut out,
        };
        assert_eq!(io.read(Path::new("-")).unwrap(), "hello\n");
    }
}
