//! Flat key/value metrics and their verification against a ledger dump.

use std::collections::BTreeMap;

use crate::ids::AccessoryId;
use crate::server::{Accounting, AuthorAccount, CashingServer, ManagerCredential, PseudonymKey, ServerConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Metrics {
    pub accounting: Accounting,
    pub events: u64,
    pub settle_checks: u64,
    pub settle_failures: u64,
    pub authors: Vec<AuthorAccount>,
    /// Coupons emitted and redeemed per accessory.
    pub accessories: BTreeMap<AccessoryId, (u64, u64)>,
    pub forgeries_submitted: u64,
    pub forgeries_accepted: u64,
}

/// `Ok` when the books balance, otherwise the imbalance in micro-dollars.
pub fn conservation_verdict(a: &Accounting) -> Result<(), i128> {
    match a.imbalance() {
        0 => Ok(()),
        d => Err(d),
    }
}

fn accounting_rows(a: &Accounting) -> [(&'static str, String); 8] {
    [
        ("registered", a.registered.udollars().to_string()),
        ("credited", a.credited.udollars().to_string()),
        ("fees", a.fees.udollars().to_string()),
        ("unredeemed", a.unredeemed.udollars().to_string()),
        ("remainder", a.remainder.to_string()),
        ("recovered", a.recovered.udollars().to_string()),
        ("redistributed", a.redistributed.udollars().to_string()),
        ("imbalance", a.imbalance().to_string()),
    ]
}

fn author_rows(authors: &[AuthorAccount]) -> impl Iterator<Item = (String, String)> + '_ {
    authors.iter().flat_map(|a| {
        let id = &a.author_id;
        [
            (format!("author.{id}.pending"), a.pending.udollars().to_string()),
            (format!("author.{id}.paid"), a.paid.udollars().to_string()),
            (format!("author.{id}.recovered"), a.recovered.udollars().to_string()),
            (format!("author.{id}.suspended"), a.suspended.to_string()),
        ]
    })
}

impl Metrics {
    pub fn verdict(&self) -> Result<(), i128> {
        conservation_verdict(&self.accounting)
    }

    /// Sorted `(key, value)` rows. Money is in micro-dollars.
    pub fn rows(&self) -> BTreeMap<String, String> {
        let mut rows: BTreeMap<String, String> = accounting_rows(&self.accounting)
            .into_iter()
            .map(|(k, v)| (k.to_owned(), v))
            .collect();
        rows.extend(author_rows(&self.authors));
        for (id, (emitted, redeemed)) in &self.accessories {
            rows.insert(format!("accessory.{id}.emitted"), emitted.to_string());
            rows.insert(format!("accessory.{id}.redeemed"), redeemed.to_string());
        }
        rows.insert("events".into(), self.events.to_string());
        rows.insert("settle.checks".into(), self.settle_checks.to_string());
        rows.insert("settle.failures".into(), self.settle_failures.to_string());
        rows.insert("forgery.submitted".into(), self.forgeries_submitted.to_string());
        rows.insert("forgery.accepted".into(), self.forgeries_accepted.to_string());
        rows
    }

    /// One `key<TAB>value` line per metric.
    pub fn to_table(&self) -> String {
        self.rows().into_iter().map(|(k, v)| format!("{k}\t{v}\n")).collect()
    }
}

pub fn parse_table(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut rows = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('\t').ok_or_else(|| format!("line {}: missing tab", i + 1))?;
        if rows.insert(k.to_owned(), v.to_owned()).is_some() {
            return Err(format!("line {}: duplicate key {k}", i + 1));
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VerifyError {
    #[error("unreadable metrics: {0}")]
    Metrics(String),
    #[error("unreadable ledger: {0}")]
    Ledger(String),
    #[error("verification failed: {}", .0.join("; "))]
    Mismatch(Vec<String>),
}

/// Checks a metrics table for internal balance and against the ledger it
/// claims to summarize.
pub fn verify_output(metrics: &str, ledger: &[u8]) -> Result<(), VerifyError> {
    let rows = parse_table(metrics).map_err(VerifyError::Metrics)?;
    let int = |key: &str| -> Result<i128, VerifyError> {
        rows.get(key)
            .ok_or_else(|| VerifyError::Metrics(format!("missing {key}")))?
            .parse()
            .map_err(|e| VerifyError::Metrics(format!("{key}: {e}")))
    };
    let mut problems = Vec::new();
    let lhs = int("registered")?;
    let rhs = int("credited")? + int("fees")? + int("unredeemed")? + int("remainder")? + int("recovered")?
        - int("redistributed")?;
    if lhs != rhs {
        problems.push(format!("identity off by {}", lhs - rhs));
    }
    if int("imbalance")? != 0 {
        problems.push("recorded imbalance is nonzero".into());
    }
    if int("settle.failures")? != 0 {
        problems.push(format!("{} settlements did not balance", int("settle.failures")?));
    }

    let config = ServerConfig {
        credential: ManagerCredential::from_bytes([0; 16]),
        pseudonym_key: PseudonymKey::from_bytes([0; 16]),
        reward_policy: Default::default(),
    };
    let server = CashingServer::restore(config, ledger).map_err(|e| VerifyError::Ledger(e.to_string()))?;
    let expected: BTreeMap<String, String> = accounting_rows(&server.accounting())
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .chain(author_rows(&server.accounts()))
        .collect();
    for (k, v) in &expected {
        match rows.get(k) {
            Some(found) if found == v => {}
            Some(found) => problems.push(format!("{k}: metrics say {found}, ledger says {v}")),
            None => problems.push(format!("{k}: missing from metrics")),
        }
    }
    for k in rows.keys().filter(|k| k.starts_with("author.") && !expected.contains_key(*k)) {
        problems.push(format!("{k}: not in ledger"));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(VerifyError::Mismatch(problems))
    }
}
