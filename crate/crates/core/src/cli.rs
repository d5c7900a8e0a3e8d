//! Operator commands: `provision`, `serve`, `simulate`, `report`.
//!
//! Exit status: 0 success, 1 I/O, 2 validation, 3 protocol or credential,
//! 4 corrupt ledger, 5 simulation output failed verification.

use std::ffi::OsString;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::accessory::{AccessoryMode, Phase, ReleasePolicy};
use crate::coupon::CouponMax;
use crate::factory::{provision_batch, ProvisionError, ProvisioningRecord, UnitSpec};
use crate::ids::{AccessoryType, AuthorId, VendorId};
use crate::money::Money;
use crate::server::wire::{serve, Request, Response, WireClient};
use crate::server::{CashingServer, ManagerCredential, PseudonymKey, RewardPolicy, ServerConfig, ServerError};
use crate::sim::{self, Scenario, SimError};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("server: {0}")]
    Protocol(String),
    #[error("ledger {path} is corrupt at line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("{0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Protocol(_) => 3,
            CliError::Corrupt { .. } => 4,
            CliError::Verification(_) => 5,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "appcessory", about = "Accessory coupon economy: factory, cashing server, simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Provision a production batch and register its coupons.
    Provision(ProvisionArgs),
    /// Run the cashing server.
    Serve(ServeArgs),
    /// Run a scenario file.
    Simulate(SimulateArgs),
    /// Print a report from a ledger file.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Counter,
    Random,
    Minimal,
}

impl From<ModeArg> for AccessoryMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Counter => AccessoryMode::Counter,
            ModeArg::Random => AccessoryMode::Random,
            ModeArg::Minimal => AccessoryMode::Minimal,
        }
    }
}

#[derive(Debug, Args)]
pub struct ProvisionArgs {
    #[arg(long)]
    pub units: u64,
    #[arg(long)]
    pub coupons: u64,
    #[arg(long = "worth-udollars")]
    pub worth_udollars: u64,
    #[arg(long, value_enum, default_value = "counter")]
    pub mode: ModeArg,
    /// `per-interval:SECS`, `phased:COUNTxSECS,...`, or a JSON policy object.
    #[arg(long, default_value = "per-interval:60")]
    pub policy: String,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Register the batch with a running server.
    #[arg(long)]
    pub server: Option<String>,
    /// Manager credential, 32 hex digits; required with --server.
    #[arg(long)]
    pub credential: Option<String>,
    #[arg(long = "retail-udollars")]
    pub retail_udollars: u64,
    #[arg(long = "allow-overvalued")]
    pub allow_overvalued: bool,
    #[arg(long, default_value = "acme")]
    pub vendor: String,
    #[arg(long = "type", default_value = "accessory")]
    pub accessory_type: String,
    #[arg(long, default_value = "unit")]
    pub prefix: String,
    #[arg(long = "actuator-gated")]
    pub actuator_gated: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub listen: String,
    #[arg(long)]
    pub ledger: PathBuf,
    #[arg(long)]
    pub credential: String,
    #[arg(long = "holding-period")]
    pub holding_period: u64,
    /// Used only when the ledger is new; defaults to a hash of the credential.
    #[arg(long = "pseudonym-key")]
    pub pseudonym_key: Option<String>,
    /// JSON reward policy file; used only when the ledger is new.
    #[arg(long = "reward-policy")]
    pub reward_policy: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long = "check-conservation")]
    pub check_conservation: bool,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("view").required(true).args(["vendor", "author", "unredeemed", "popular"])))]
pub struct ReportArgs {
    #[arg(long)]
    pub ledger: PathBuf,
    #[arg(long)]
    pub vendor: Option<String>,
    #[arg(long)]
    pub author: Option<String>,
    #[arg(long)]
    pub unredeemed: bool,
    #[arg(long)]
    pub popular: Option<String>,
}

pub fn parse_policy(text: &str) -> Result<ReleasePolicy, CliError> {
    let bad = |m: &str| CliError::Validation(format!("--policy {text:?}: {m}"));
    if text.trim_start().starts_with('{') {
        return serde_json::from_str(text).map_err(|e| bad(&e.to_string()));
    }
    let (kind, rest) = text.split_once(':').ok_or_else(|| bad("expected KIND:ARGS"))?;
    match kind {
        "per-interval" => Ok(ReleasePolicy::PerInterval {
            interval: rest.parse().map_err(|_| bad("interval must be an integer"))?,
        }),
        "phased" => {
            let phases = rest
                .split(',')
                .map(|p| {
                    let (count, duration) = p.split_once('x').ok_or_else(|| bad("phase must be COUNTxSECS"))?;
                    Ok(Phase {
                        count: count.parse().map_err(|_| bad("phase count must be an integer"))?,
                        duration: duration.parse().map_err(|_| bad("phase duration must be an integer"))?,
                    })
                })
                .collect::<Result<_, CliError>>()?;
            Ok(ReleasePolicy::Phased { phases })
        }
        _ => Err(bad("unknown policy kind")),
    }
}

fn parse_credential(hex: &str) -> Result<ManagerCredential, CliError> {
    ManagerCredential::from_hex(hex).map_err(|e| CliError::Validation(format!("credential: {e}")))
}

fn corrupt(path: &Path, e: ServerError) -> CliError {
    match e {
        ServerError::Corrupt { line, message } => CliError::Corrupt { path: path.to_owned(), line, message },
        ServerError::Io(e) => CliError::Io(e),
        other => CliError::Validation(other.to_string()),
    }
}

/// Reads a ledger file; configuration comes from its first record.
pub fn load_ledger(path: &Path, config: ServerConfig) -> Result<CashingServer, CliError> {
    let file = File::open(path)?;
    CashingServer::restore(config, BufReader::new(file)).map_err(|e| corrupt(path, e))
}

fn provision(a: &ProvisionArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let spec = UnitSpec {
        vendor_id: VendorId::new(a.vendor.as_str()),
        accessory_type: AccessoryType::new(a.accessory_type.as_str()),
        mode: a.mode.into(),
        coupon_max: CouponMax::new(a.coupons).map_err(|e| CliError::Validation(format!("--coupons: {e}")))?,
        worth: Money::from_udollars(a.worth_udollars),
        retail_price: Money::from_udollars(a.retail_udollars),
        policy: parse_policy(&a.policy)?,
        actuator_gated: a.actuator_gated,
        allow_overvalued: a.allow_overvalued,
    };
    let client = match &a.server {
        Some(addr) => {
            let cred = parse_credential(a.credential.as_deref().ok_or_else(|| {
                CliError::Validation("--server needs --credential".into())
            })?)?;
            Some((WireClient::connect(addr.as_str())?, cred))
        }
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let records = provision_batch(&a.prefix, a.units, &spec, &mut rng).map_err(|e| match e {
        ProvisionError::RetailCap { .. } => CliError::Validation(format!("{e}; pass --allow-overvalued to permit")),
        e => CliError::Validation(e.to_string()),
    })?;

    let mut file = BufWriter::new(File::create(&a.out)?);
    for r in &records {
        serde_json::to_writer(&mut file, r).map_err(io::Error::from)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;

    let mut registered = Money::ZERO;
    if let Some((client, credential)) = client {
        for r in &records {
            let request = Request::Register {
                credential,
                entries: r.batch_entries(),
                grants: r.grant_record().into_iter().collect(),
            };
            match client.call(&request).map_err(|e| CliError::Protocol(e.to_string()))? {
                Response::Registered { .. } => registered += r.registered_worth(),
                Response::Error { message } => {
                    return Err(CliError::Protocol(format!("registration of {} refused: {message}", r.accessory_id)))
                }
                other => return Err(CliError::Protocol(format!("registration of {}: {other:?}", r.accessory_id))),
            }
        }
    }
    let total: Money = records.iter().map(ProvisioningRecord::registered_worth).sum();
    writeln!(out, "units\t{}", records.len())?;
    writeln!(out, "coupons\t{}", records.len() as u64 * a.coupons)?;
    writeln!(out, "total_worth_udollars\t{}", total.udollars())?;
    writeln!(out, "registered_udollars\t{}", registered.udollars())?;
    Ok(())
}

/// Replaces `path` with a fresh snapshot of `server`.
fn compact(server: &CashingServer, path: &Path) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = BufWriter::new(File::create(&tmp)?);
        server.persist(&mut f)?;
        f.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    }
    fs::rename(tmp, path)
}

fn serve_cmd(a: &ServeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let credential = parse_credential(&a.credential)?;
    let pseudonym_key = match &a.pseudonym_key {
        Some(hex) => PseudonymKey::from_hex(hex).map_err(|e| CliError::Validation(format!("pseudonym key: {e}")))?,
        None => {
            let digest = Sha256::new().chain_update(b"pseudonym-key").chain_update(credential.as_bytes()).finalize();
            PseudonymKey::from_bytes(digest[..16].try_into().expect("16 of 32 bytes"))
        }
    };
    let reward_policy = match &a.reward_policy {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
            .map_err(|e| CliError::Validation(format!("reward policy: {e}")))?,
        None => RewardPolicy::default(),
    };
    let config = ServerConfig { credential, pseudonym_key, reward_policy };
    let existing = fs::metadata(&a.ledger).map(|m| m.len() > 0).unwrap_or(false);
    let server = if existing {
        load_ledger(&a.ledger, config)?
    } else {
        CashingServer::new(config).map_err(|e| CliError::Validation(e.to_string()))?
    };
    compact(&server, &a.ledger)?;
    let journal = OpenOptions::new().append(true).open(&a.ledger)?;
    server.attach_journal(Box::new(BufWriter::new(journal)));

    let listener = TcpListener::bind(&a.listen)?;
    writeln!(out, "listening on {}", listener.local_addr()?)?;
    out.flush()?;
    let server = Arc::new(server);
    serve(listener, Arc::clone(&server), a.holding_period)?.wait();
    if let Some(e) = server.journal_error() {
        return Err(CliError::Io(io::Error::other(e)));
    }
    compact(&server, &a.ledger)?;
    Ok(())
}

fn simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.scenario)?;
    let scenario = Scenario::from_json(&text).map_err(|e| CliError::Validation(e.to_string()))?;
    let result = sim::run(&scenario).map_err(|e| match e {
        SimError::Runtime(m) => CliError::Verification(m),
        e => CliError::Validation(e.to_string()),
    })?;
    result.write_to_dir(&a.out)?;
    let m = &result.metrics;
    let acct = &m.accounting;
    writeln!(out, "events\t{}", m.events)?;
    writeln!(out, "registered\t{}", acct.registered.udollars())?;
    writeln!(out, "credited\t{}", acct.credited.udollars())?;
    writeln!(out, "unredeemed\t{}", acct.unredeemed.udollars())?;
    writeln!(out, "imbalance\t{}", acct.imbalance())?;
    if a.check_conservation {
        sim::verify_dir(&a.out).map_err(|e| CliError::Verification(e.to_string()))?;
        if m.verdict().is_err() {
            return Err(CliError::Verification(format!("books off by {}", acct.imbalance())));
        }
        writeln!(out, "conservation\tok")?;
    }
    Ok(())
}

fn report(a: &ReportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = ServerConfig {
        credential: ManagerCredential::from_bytes([0; 16]),
        pseudonym_key: PseudonymKey::from_bytes([0; 16]),
        reward_policy: RewardPolicy::default(),
    };
    let server = load_ledger(&a.ledger, config)?;
    if let Some(vendor) = &a.vendor {
        let r = server.report_vendor(&VendorId::new(vendor.as_str()));
        writeln!(out, "accessory_type\tauthor\tcoupons\tredeemed_udollars\tcredited_udollars\tusers")?;
        for row in r.rows {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                row.accessory_type,
                row.author,
                row.coupons,
                row.redeemed_worth.udollars(),
                row.credited.udollars(),
                row.users
            )?;
        }
    } else if let Some(author) = &a.author {
        let r = server.report_author(&AuthorId::new(author.as_str()));
        writeln!(out, "accessory_type\tcoupons\tpending_udollars\tpaid_udollars")?;
        for row in &r.rows {
            writeln!(out, "{}\t{}\t{}\t{}", row.accessory_type, row.coupons, row.pending.udollars(), row.paid.udollars())?;
        }
        writeln!(out, "(total)\t\t{}\t{}", r.pending.udollars(), r.paid.udollars())?;
        if r.suspended {
            writeln!(out, "(suspended)\t\t\t{}", r.recovered.udollars())?;
        }
    } else if a.unredeemed {
        writeln!(out, "accessory_type\tcoupons\tworth_udollars")?;
        for row in server.report_unredeemed().rows {
            writeln!(out, "{}\t{}\t{}", row.accessory_type, row.coupons, row.worth.udollars())?;
        }
    } else if let Some(t) = &a.popular {
        writeln!(out, "rank\tauthor\tusers")?;
        for app in server.popular_apps(&AccessoryType::new(t.as_str())).apps {
            writeln!(out, "{}\t{}\t{}", app.rank, app.author, app.users)?;
        }
    }
    Ok(())
}

/// Runs one command, writing its normal output to `out`.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Provision(a) => provision(a, out),
        Command::Serve(a) => serve_cmd(a, out),
        Command::Simulate(a) => simulate(a, out),
        Command::Report(a) => report(a, out),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Validation(e.to_string()))?;
    execute(&cli, out)
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match execute(&cli, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("appcessory: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Lines of a provisioning file.
pub fn read_provisioning(path: &Path) -> Result<Vec<ProvisioningRecord>, CliError> {
    let file = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line)
                .map_err(|e| CliError::Validation(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_ok(args: &[&str]) -> String {
        let mut out = Vec::new();
        run(args.iter().copied(), &mut out).unwrap();
        String::from_utf8(out).unwrap()
    }

    fn run_err(args: &[&str]) -> CliError {
        run(args.iter().copied(), &mut Vec::new()).unwrap_err()
    }

    #[test]
    fn policy_syntax() {
        assert_eq!(parse_policy("per-interval:60").unwrap(), ReleasePolicy::per_minute());
        assert_eq!(
            parse_policy("phased:100x3600,100x36000").unwrap(),
            ReleasePolicy::Phased {
                phases: vec![Phase { count: 100, duration: 3600 }, Phase { count: 100, duration: 36000 }]
            }
        );
        assert_eq!(parse_policy(r#"{"kind":"per_interval","interval":5}"#).unwrap(), ReleasePolicy::PerInterval { interval: 5 });
        assert!(parse_policy("hourly").is_err());
    }

    #[test]
    fn provision_offline() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("batch.jsonl");
        let f = file.to_str().unwrap();
        let out = run_ok(&[
            "appcessory", "provision", "--units", "3", "--coupons", "10", "--worth-udollars", "10000",
            "--mode", "minimal", "--seed", "4", "--out", f, "--retail-udollars", "100000",
        ]);
        assert!(out.contains("total_worth_udollars\t300000"));
        let records = read_provisioning(&file).unwrap();
        assert_eq!(records.len(), 3);
        assert!(records.iter().all(|r| r.secure_id.is_some()));
        let text = fs::read_to_string(&file).unwrap();
        assert_eq!(text, text.to_lowercase());
    }

    #[test]
    fn provision_zero_units() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("batch.jsonl");
        run_ok(&[
            "appcessory", "provision", "--units", "0", "--coupons", "10", "--worth-udollars", "1",
            "--seed", "1", "--out", file.to_str().unwrap(), "--retail-udollars", "10",
        ]);
        assert_eq!(fs::read(&file).unwrap(), b"");
    }

    #[test]
    fn provision_retail_cap() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("batch.jsonl");
        let e = run_err(&[
            "appcessory", "provision", "--units", "1", "--coupons", "10", "--worth-udollars", "2",
            "--seed", "1", "--out", file.to_str().unwrap(), "--retail-udollars", "10",
        ]);
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn report_on_corrupt_ledger() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = dir.path().join("ledger.jsonl");
        fs::write(&ledger, "{\"rec\":\"settle\",\"at\":1,\"holding_period\":0}\nnot json\n").unwrap();
        let e = run_err(&["appcessory", "report", "--ledger", ledger.to_str().unwrap(), "--unredeemed"]);
        assert!(matches!(e, CliError::Corrupt { line: 2, .. }), "{e}");
        assert_eq!(e.exit_code(), 4);
    }

    #[test]
    fn simulate_writes_verifiable_output() {
        let dir = tempfile::tempdir().unwrap();
        let scenario = dir.path().join("s.json");
        fs::write(&scenario, serde_json::to_string(&sim::presets::malicious_calendar(1, true)).unwrap()).unwrap();
        let out_dir = dir.path().join("out");
        let args = ["appcessory", "simulate", "--scenario", scenario.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--check-conservation"];
        let out = run_ok(&args);
        assert!(out.contains("conservation\tok"));
        let first = fs::read(out_dir.join(sim::EVENTS_FILE)).unwrap();
        run_ok(&args);
        assert_eq!(first, fs::read(out_dir.join(sim::EVENTS_FILE)).unwrap());

        let ledger = out_dir.join(sim::LEDGER_FILE);
        let vendor = run_ok(&["appcessory", "report", "--ledger", ledger.to_str().unwrap(), "--vendor", "acme"]);
        assert_eq!(vendor.lines().count(), 4);
        let author = run_ok(&["appcessory", "report", "--ledger", ledger.to_str().unwrap(), "--author", "game"]);
        assert!(author.contains("(redistribution)\t0\t300000\t0"), "{author}");
    }

    #[test]
    fn simulate_invalid_scenario() {
        let dir = tempfile::tempdir().unwrap();
        let scenario = dir.path().join("s.json");
        let mut s = sim::presets::nominal(1);
        s.accessories[0].worth = Money::from_dollars(1);
        fs::write(&scenario, serde_json::to_string(&s).unwrap()).unwrap();
        let e = run_err(&["appcessory", "simulate", "--scenario", scenario.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("accessories[0].retail_price"));
    }
}
