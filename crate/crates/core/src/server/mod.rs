//! The coupon cashing server.
//!
//! The server keeps the ledger of every registered coupon, indexed by coupon
//! value, and redeems each coupon at most once. Only callers presenting the
//! manager credential are credited. Credits land in the author's pending
//! balance and move to paid when [`CashingServer::settle`] finds them older
//! than the holding period; abuse reports suspend an author, claw back what
//! they hold and redistribute it.
//!
//! All state sits behind one mutex, so every operation is linearizable and
//! reports observe a consistent prefix of the redemption history.
//!
//! Every mutation is also expressed as a journal [`Record`]. A journal file
//! replayed from the top rebuilds the same state; see [`CashingServer::persist`]
//! and [`CashingServer::restore`].

pub mod credential;
mod journal;
pub mod report;
pub mod reward;
pub mod wire;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{self, BufRead, Write};
use std::sync::{Mutex, MutexGuard};

use serde::{Deserialize, Serialize};

use crate::coupon::{Coupon, CouponKey, SecureId};
use crate::ids::{AccessoryId, AccessoryType, AuthorId, ManagerId, UserId, VendorId};
use crate::money::Money;

pub use credential::{ManagerCredential, PseudonymKey};
pub use journal::Record;
pub use report::{
    AuthorReport, AuthorReportRow, PopularApp, PopularApps, UnredeemedReport, UnredeemedRow,
    VendorReport, VendorReportRow,
};
pub use reward::{Credit, RewardLedger, RewardPolicy, RewardPolicyError};

/// Pending-credit label for money received through redistribution.
pub const REDISTRIBUTION_SOURCE: &str = "(redistribution)";

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("coupon {0} is already registered")]
    DuplicateCoupon(Coupon),
    #[error("secure id {0} is already registered")]
    DuplicateSecureId(SecureId),
    #[error("accessory {0} was registered with a different vendor or type")]
    AccessoryConflict(AccessoryId),
    #[error(transparent)]
    Policy(#[from] RewardPolicyError),
    #[error("ledger line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("ledger i/o: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub credential: ManagerCredential,
    pub pseudonym_key: PseudonymKey,
    pub reward_policy: RewardPolicy,
}

/// One coupon handed to the server at registration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub coupon: Coupon,
    pub worth: Money,
    pub vendor_id: VendorId,
    pub accessory_id: AccessoryId,
    pub accessory_type: AccessoryType,
}

/// Key escrow for a minimal accessory: the key is released once, to the
/// first legitimate manager presenting the secure id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrantRecord {
    pub secure_id: SecureId,
    pub key: CouponKey,
    #[serde(default)]
    pub granted: bool,
    #[serde(default)]
    pub granted_to: Option<ManagerId>,
}

impl GrantRecord {
    pub fn new(secure_id: SecureId, key: CouponKey) -> Self {
        GrantRecord { secure_id, key, granted: false, granted_to: None }
    }
}

/// A ledger row as seen from outside the server.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LedgerEntry {
    pub coupon: Coupon,
    pub worth: Money,
    pub vendor_id: VendorId,
    pub accessory_id: AccessoryId,
    pub accessory_type: AccessoryType,
    pub redeemed: bool,
    pub redeemer_author: Option<AuthorId>,
    pub redeemed_at: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    UnknownCoupon,
    AlreadyRedeemed,
    BadCredential,
    Suspended,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RedeemOutcome {
    Accepted { credited: Money },
    Rejected { reason: RejectReason },
}

impl RedeemOutcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, RedeemOutcome::Accepted { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefuseReason {
    BadCredential,
    UnknownId,
    AlreadyGranted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GrantOutcome {
    Granted { key: CouponKey },
    Refused { reason: RefuseReason },
}

#[derive(Debug, Clone)]
pub struct RedeemRequest {
    pub coupon: Coupon,
    pub author: AuthorId,
    pub credential: ManagerCredential,
    /// Raw user id or an existing pseudonym; either way only its pseudonym
    /// is stored.
    pub user: String,
    pub now: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payout {
    pub author: AuthorId,
    pub amount: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbuseCaseResult {
    pub accused: AuthorId,
    pub suspended: bool,
    pub clawed_back: Money,
    pub redistributed: Vec<Payout>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorAccount {
    pub author_id: AuthorId,
    pub pending: Money,
    pub paid: Money,
    pub suspended: bool,
    pub recovered: Money,
}

/// Money totals for the conservation identity
/// `registered = credited + fees + unredeemed + remainder + recovered - redistributed`.
///
/// `remainder` is what redemptions released but the reward policy did not
/// pass on. Under a flat policy it stays zero; a decaying policy front-loads
/// credits, so it can go negative while coupon worth is still outstanding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accounting {
    pub registered: Money,
    pub credited: Money,
    pub fees: Money,
    pub unredeemed: Money,
    pub remainder: i128,
    pub recovered: Money,
    pub redistributed: Money,
}

impl Accounting {
    /// Left side minus right side; zero when the books balance.
    pub fn imbalance(&self) -> i128 {
        let rhs = self.credited.udollars() as i128
            + self.fees.udollars() as i128
            + self.unredeemed.udollars() as i128
            + self.remainder
            + self.recovered.udollars() as i128
            - self.redistributed.udollars() as i128;
        self.registered.udollars() as i128 - rhs
    }

    pub fn balances(&self) -> bool {
        self.imbalance() == 0
    }
}

struct AccessoryMeta {
    id: AccessoryId,
    vendor: VendorId,
    accessory_type: AccessoryType,
}

struct Entry {
    coupon: Coupon,
    worth: Money,
    accessory: u32,
    redemption: Option<u32>,
}

struct Redemption {
    entry: u32,
    author: u32,
    user: String,
    at: u64,
    credited: Money,
}

struct Grant {
    record: GrantRecord,
}

struct PendingCredit {
    at: u64,
    amount: Money,
    source: String,
}

struct Account {
    id: AuthorId,
    pending: Vec<PendingCredit>,
    paid: Money,
    paid_by_source: BTreeMap<String, Money>,
    suspended: bool,
    recovered: Money,
}

impl Account {
    fn new(id: AuthorId) -> Self {
        Account {
            id,
            pending: Vec::new(),
            paid: Money::ZERO,
            paid_by_source: BTreeMap::new(),
            suspended: false,
            recovered: Money::ZERO,
        }
    }

    fn pending_total(&self) -> Money {
        self.pending.iter().map(|p| p.amount).sum()
    }

    fn view(&self) -> AuthorAccount {
        AuthorAccount {
            author_id: self.id.clone(),
            pending: self.pending_total(),
            paid: self.paid,
            suspended: self.suspended,
            recovered: self.recovered,
        }
    }
}

struct State {
    pseudonym_key: PseudonymKey,
    rewards: RewardLedger,
    accessories: Vec<AccessoryMeta>,
    accessory_index: HashMap<AccessoryId, u32>,
    entries: Vec<Entry>,
    coupon_index: HashMap<Coupon, u32>,
    grants: Vec<Grant>,
    grant_index: HashMap<SecureId, u32>,
    accounts: Vec<Account>,
    account_index: HashMap<AuthorId, u32>,
    redemptions: Vec<Redemption>,
    fees: Money,
    remainder: i128,
    redistributed: Money,
    /// Redemptions, grants, settlements and abuse cases, in order.
    ops: Vec<Record>,
    journal: Option<Box<dyn Write + Send>>,
    journal_error: Option<String>,
    clock: u64,
}

impl State {
    fn new(pseudonym_key: PseudonymKey, policy: RewardPolicy) -> Self {
        State {
            pseudonym_key,
            rewards: RewardLedger::new(policy),
            accessories: Vec::new(),
            accessory_index: HashMap::new(),
            entries: Vec::new(),
            coupon_index: HashMap::new(),
            grants: Vec::new(),
            grant_index: HashMap::new(),
            accounts: Vec::new(),
            account_index: HashMap::new(),
            redemptions: Vec::new(),
            fees: Money::ZERO,
            remainder: 0,
            redistributed: Money::ZERO,
            ops: Vec::new(),
            journal: None,
            journal_error: None,
            clock: 0,
        }
    }

    fn tick(&mut self, now: u64) {
        self.clock = self.clock.max(now);
    }

    fn write_journal(&mut self, records: &[Record]) {
        let Some(journal) = self.journal.as_mut() else {
            return;
        };
        let result = records
            .iter()
            .try_for_each(|r| journal::write_record(journal, r))
            .and_then(|_| journal.flush());
        if let Err(e) = result {
            self.journal_error.get_or_insert_with(|| e.to_string());
        }
    }

    fn author_slot(&mut self, author: &AuthorId) -> u32 {
        if let Some(&i) = self.account_index.get(author) {
            return i;
        }
        let i = self.accounts.len() as u32;
        self.accounts.push(Account::new(author.clone()));
        self.account_index.insert(author.clone(), i);
        i
    }

    /// Checks a batch against the ledger without touching it.
    fn check_batch(&self, entries: &[BatchEntry], grants: &[GrantRecord]) -> Result<(), ServerError> {
        let mut seen = BTreeSet::new();
        let mut new_accessories: HashMap<&AccessoryId, (&VendorId, &AccessoryType)> = HashMap::new();
        for e in entries {
            if self.coupon_index.contains_key(&e.coupon) || !seen.insert(e.coupon) {
                return Err(ServerError::DuplicateCoupon(e.coupon));
            }
            let conflict = match self.accessory_index.get(&e.accessory_id) {
                Some(&i) => {
                    let meta = &self.accessories[i as usize];
                    meta.vendor != e.vendor_id || meta.accessory_type != e.accessory_type
                }
                None => {
                    let first = new_accessories
                        .entry(&e.accessory_id)
                        .or_insert((&e.vendor_id, &e.accessory_type));
                    *first != (&e.vendor_id, &e.accessory_type)
                }
            };
            if conflict {
                return Err(ServerError::AccessoryConflict(e.accessory_id.clone()));
            }
        }
        let mut seen = BTreeSet::new();
        for g in grants {
            if self.grant_index.contains_key(&g.secure_id) || !seen.insert(g.secure_id) {
                return Err(ServerError::DuplicateSecureId(g.secure_id));
            }
        }
        Ok(())
    }

    fn insert_accessory(&mut self, id: AccessoryId, vendor: VendorId, accessory_type: AccessoryType) -> u32 {
        let i = self.accessories.len() as u32;
        self.accessory_index.insert(id.clone(), i);
        self.accessories.push(AccessoryMeta { id, vendor, accessory_type });
        i
    }

    fn insert_coupon(&mut self, coupon: Coupon, worth: Money, accessory: u32) {
        let i = self.entries.len() as u32;
        self.coupon_index.insert(coupon, i);
        self.entries.push(Entry { coupon, worth, accessory, redemption: None });
    }

    fn insert_grant(&mut self, record: GrantRecord) {
        let i = self.grants.len() as u32;
        self.grant_index.insert(record.secure_id, i);
        self.grants.push(Grant { record });
    }

    /// Inserts a checked batch and returns its journal records.
    fn apply_batch(&mut self, entries: Vec<BatchEntry>, grants: Vec<GrantRecord>) -> Vec<Record> {
        let mut records = Vec::with_capacity(entries.len() + grants.len());
        for e in entries {
            let accessory = match self.accessory_index.get(&e.accessory_id) {
                Some(&i) => i,
                None => {
                    records.push(Record::Accessory {
                        accessory: e.accessory_id.clone(),
                        vendor: e.vendor_id.clone(),
                        accessory_type: e.accessory_type.clone(),
                    });
                    self.insert_accessory(e.accessory_id.clone(), e.vendor_id, e.accessory_type)
                }
            };
            records.push(Record::Coupon {
                coupon: e.coupon,
                worth: e.worth,
                accessory: e.accessory_id,
            });
            self.insert_coupon(e.coupon, e.worth, accessory);
        }
        for g in grants {
            records.push(Record::GrantRecord { secure_id: g.secure_id, key: g.key });
            self.insert_grant(GrantRecord::new(g.secure_id, g.key));
        }
        records
    }

    fn apply_redeem(&mut self, entry: u32, author: u32, user: String, at: u64) -> Money {
        let worth = self.entries[entry as usize].worth;
        let author_id = self.accounts[author as usize].id.clone();
        let Credit { credited, fee } = self.rewards.apply(&author_id, worth);
        let redemption = self.redemptions.len() as u32;
        self.redemptions.push(Redemption { entry, author, user, at, credited });
        self.entries[entry as usize].redemption = Some(redemption);
        self.fees += fee;
        self.remainder += worth.udollars() as i128 - credited.udollars() as i128 - fee.udollars() as i128;
        let source = self.accessory_type_of(entry).as_str().to_owned();
        self.accounts[author as usize].pending.push(PendingCredit { at, amount: credited, source });
        self.tick(at);
        credited
    }

    fn accessory_type_of(&self, entry: u32) -> &AccessoryType {
        let acc = self.entries[entry as usize].accessory;
        &self.accessories[acc as usize].accessory_type
    }

    fn apply_settle(&mut self, now: u64, holding_period: u64) -> Vec<Payout> {
        self.tick(now);
        let mut moved = Vec::new();
        for account in self.accounts.iter_mut().filter(|a| !a.suspended) {
            let mut total = Money::ZERO;
            let mut keep = Vec::with_capacity(account.pending.len());
            for credit in account.pending.drain(..) {
                if now.saturating_sub(credit.at) >= holding_period && now >= credit.at {
                    total += credit.amount;
                    *account.paid_by_source.entry(credit.source).or_default() += credit.amount;
                } else {
                    keep.push(credit);
                }
            }
            account.pending = keep;
            if !total.is_zero() {
                account.paid += total;
                moved.push(Payout { author: account.id.clone(), amount: total });
            }
        }
        moved.sort_by(|a, b| a.author.cmp(&b.author));
        moved
    }

    fn apply_abuse(&mut self, accused: &AuthorId, now: u64) -> AbuseCaseResult {
        self.tick(now);
        let Some(&a) = self.account_index.get(accused) else {
            return AbuseCaseResult {
                accused: accused.clone(),
                suspended: false,
                clawed_back: Money::ZERO,
                redistributed: Vec::new(),
            };
        };
        let account = &mut self.accounts[a as usize];
        if account.suspended {
            return AbuseCaseResult {
                accused: accused.clone(),
                suspended: true,
                clawed_back: Money::ZERO,
                redistributed: Vec::new(),
            };
        }
        account.suspended = true;
        let clawed_back = account.pending_total() + account.paid;
        account.pending.clear();
        account.paid = Money::ZERO;
        account.paid_by_source.clear();
        account.recovered += clawed_back;

        let touched: BTreeSet<u32> = self
            .redemptions
            .iter()
            .filter(|r| r.author == a)
            .map(|r| self.entries[r.entry as usize].accessory)
            .collect();
        let mut weights: BTreeMap<AuthorId, u128> = BTreeMap::new();
        for r in &self.redemptions {
            let other = &self.accounts[r.author as usize];
            if r.author == a || other.suspended || r.credited.is_zero() {
                continue;
            }
            if touched.contains(&self.entries[r.entry as usize].accessory) {
                *weights.entry(other.id.clone()).or_default() += r.credited.udollars() as u128;
            }
        }

        let redistributed = split_proportionally(clawed_back, &weights);
        for payout in &redistributed {
            let slot = self.account_index[&payout.author];
            self.accounts[slot as usize].pending.push(PendingCredit {
                at: now,
                amount: payout.amount,
                source: REDISTRIBUTION_SOURCE.to_owned(),
            });
            self.redistributed += payout.amount;
        }
        AbuseCaseResult {
            accused: accused.clone(),
            suspended: true,
            clawed_back,
            redistributed,
        }
    }

    fn accounting(&self) -> Accounting {
        let mut acc = Accounting {
            fees: self.fees,
            remainder: self.remainder,
            redistributed: self.redistributed,
            ..Accounting::default()
        };
        for e in &self.entries {
            acc.registered += e.worth;
            if e.redemption.is_none() {
                acc.unredeemed += e.worth;
            }
        }
        for a in &self.accounts {
            acc.credited += a.pending_total() + a.paid;
            acc.recovered += a.recovered;
        }
        acc
    }

    fn entry_view(&self, i: u32) -> LedgerEntry {
        let e = &self.entries[i as usize];
        let meta = &self.accessories[e.accessory as usize];
        let redemption = e.redemption.map(|r| &self.redemptions[r as usize]);
        LedgerEntry {
            coupon: e.coupon,
            worth: e.worth,
            vendor_id: meta.vendor.clone(),
            accessory_id: meta.id.clone(),
            accessory_type: meta.accessory_type.clone(),
            redeemed: redemption.is_some(),
            redeemer_author: redemption.map(|r| self.accounts[r.author as usize].id.clone()),
            redeemed_at: redemption.map(|r| r.at),
        }
    }
}

/// Splits `amount` in proportion to `weights`, flooring each share and
/// giving the leftover micro-dollars to the largest share (ties go to the
/// lexicographically smallest author). Zero shares are dropped.
fn split_proportionally(amount: Money, weights: &BTreeMap<AuthorId, u128>) -> Vec<Payout> {
    let total: u128 = weights.values().sum();
    if amount.is_zero() || total == 0 {
        return Vec::new();
    }
    let mut shares: Vec<Payout> = weights
        .iter()
        .map(|(author, w)| Payout {
            author: author.clone(),
            amount: Money::from_udollars((amount.udollars() as u128 * w / total) as u64),
        })
        .collect();
    let handed_out: Money = shares.iter().map(|p| p.amount).sum();
    let leftover = amount.saturating_sub(handed_out);
    if !leftover.is_zero() {
        // BTreeMap order makes the first maximum the smallest id.
        let mut best = 0;
        for (i, p) in shares.iter().enumerate() {
            if p.amount > shares[best].amount {
                best = i;
            }
        }
        shares[best].amount += leftover;
    }
    shares.retain(|p| !p.amount.is_zero());
    shares
}

pub struct CashingServer {
    credential: ManagerCredential,
    state: Mutex<State>,
}

impl CashingServer {
    pub fn new(config: ServerConfig) -> Result<Self, ServerError> {
        config.reward_policy.validate()?;
        Ok(CashingServer {
            credential: config.credential,
            state: Mutex::new(State::new(config.pseudonym_key, config.reward_policy)),
        })
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn verify_credential(&self, presented: &ManagerCredential) -> bool {
        self.credential.verify(presented)
    }

    /// Starts appending every subsequent mutation to `sink`.
    pub fn attach_journal(&self, sink: Box<dyn Write + Send>) {
        self.lock().journal = Some(sink);
    }

    /// The first journal write failure, if any occurred.
    pub fn journal_error(&self) -> Option<String> {
        self.lock().journal_error.clone()
    }

    /// Highest simulated time seen so far.
    pub fn clock(&self) -> u64 {
        self.lock().clock
    }

    pub fn reward_policy(&self) -> RewardPolicy {
        self.lock().rewards.policy().clone()
    }

    /// Registers a factory batch. All-or-nothing: on a duplicate nothing is
    /// registered and the colliding value is named in the error.
    pub fn register_batch(&self, entries: Vec<BatchEntry>, grants: Vec<GrantRecord>) -> Result<usize, ServerError> {
        let mut state = self.lock();
        state.check_batch(&entries, &grants)?;
        let count = entries.len();
        let records = state.apply_batch(entries, grants);
        state.write_journal(&records);
        Ok(count)
    }

    pub fn redeem(&self, req: &RedeemRequest) -> RedeemOutcome {
        if !self.credential.verify(&req.credential) {
            return RedeemOutcome::Rejected { reason: RejectReason::BadCredential };
        }
        let mut state = self.lock();
        let Some(&entry) = state.coupon_index.get(&req.coupon) else {
            return RedeemOutcome::Rejected { reason: RejectReason::UnknownCoupon };
        };
        if state.entries[entry as usize].redemption.is_some() {
            return RedeemOutcome::Rejected { reason: RejectReason::AlreadyRedeemed };
        }
        if let Some(&a) = state.account_index.get(&req.author) {
            if state.accounts[a as usize].suspended {
                return RedeemOutcome::Rejected { reason: RejectReason::Suspended };
            }
        }
        let author = state.author_slot(&req.author);
        let user = state.pseudonym_key.pseudonymize(&req.user);
        let credited = state.apply_redeem(entry, author, user.clone(), req.now);
        let record = Record::Redeem {
            coupon: req.coupon,
            author: req.author.clone(),
            user,
            at: req.now,
        };
        state.write_journal(std::slice::from_ref(&record));
        state.ops.push(record);
        RedeemOutcome::Accepted { credited }
    }

    pub fn grant_key(&self, secure_id: &SecureId, credential: &ManagerCredential, manager: Option<&ManagerId>, now: u64) -> GrantOutcome {
        if !self.credential.verify(credential) {
            return GrantOutcome::Refused { reason: RefuseReason::BadCredential };
        }
        let mut state = self.lock();
        let Some(&i) = state.grant_index.get(secure_id) else {
            return GrantOutcome::Refused { reason: RefuseReason::UnknownId };
        };
        let grant = &mut state.grants[i as usize].record;
        if grant.granted {
            return GrantOutcome::Refused { reason: RefuseReason::AlreadyGranted };
        }
        grant.granted = true;
        grant.granted_to = manager.cloned();
        let key = grant.key;
        state.tick(now);
        let record = Record::Grant {
            secure_id: *secure_id,
            manager: manager.cloned(),
            at: now,
        };
        state.write_journal(std::slice::from_ref(&record));
        state.ops.push(record);
        GrantOutcome::Granted { key }
    }

    /// Moves pending credits at least `holding_period` old to paid, skipping
    /// suspended authors.
    pub fn settle(&self, now: u64, holding_period: u64) -> Vec<Payout> {
        let mut state = self.lock();
        let moved = state.apply_settle(now, holding_period);
        if !moved.is_empty() {
            let record = Record::Settle { at: now, holding_period };
            state.write_journal(std::slice::from_ref(&record));
            state.ops.push(record);
        }
        moved
    }

    /// Suspends `accused`, claws back everything they hold and redistributes
    /// it to the other authors credited on the same accessory instances.
    pub fn handle_abuse_report(&self, accused: &AuthorId, reporter: &str, now: u64) -> AbuseCaseResult {
        let mut state = self.lock();
        let known_and_active = state
            .account_index
            .get(accused)
            .is_some_and(|&a| !state.accounts[a as usize].suspended);
        let result = state.apply_abuse(accused, now);
        if known_and_active {
            let record = Record::Abuse {
                accused: accused.clone(),
                reporter: state.pseudonym_key.pseudonymize(reporter),
                at: now,
            };
            state.write_journal(std::slice::from_ref(&record));
            state.ops.push(record);
        }
        result
    }

    pub fn entry(&self, coupon: &Coupon) -> Option<LedgerEntry> {
        let state = self.lock();
        state.coupon_index.get(coupon).map(|&i| state.entry_view(i))
    }

    pub fn ledger_len(&self) -> usize {
        self.lock().entries.len()
    }

    pub fn grant_record(&self, secure_id: &SecureId) -> Option<GrantRecord> {
        let state = self.lock();
        state.grant_index.get(secure_id).map(|&i| state.grants[i as usize].record.clone())
    }

    pub fn account(&self, author: &AuthorId) -> Option<AuthorAccount> {
        let state = self.lock();
        state.account_index.get(author).map(|&i| state.accounts[i as usize].view())
    }

    /// All author accounts, ordered by author id.
    pub fn accounts(&self) -> Vec<AuthorAccount> {
        let state = self.lock();
        let mut out: Vec<_> = state.accounts.iter().map(Account::view).collect();
        out.sort_by(|a, b| a.author_id.cmp(&b.author_id));
        out
    }

    /// Worth registered for `vendor`, i.e. the vendor's funding liability.
    pub fn vendor_funding(&self, vendor: &VendorId) -> Money {
        let state = self.lock();
        state
            .entries
            .iter()
            .filter(|e| &state.accessories[e.accessory as usize].vendor == vendor)
            .map(|e| e.worth)
            .sum()
    }

    pub fn accounting(&self) -> Accounting {
        self.lock().accounting()
    }

    pub fn pseudonym_of(&self, user: &UserId) -> String {
        self.lock().pseudonym_key.pseudonymize(user.as_str())
    }

    /// Writes the full ledger as a journal that [`Self::restore`] replays.
    pub fn persist<W: Write>(&self, mut out: W) -> io::Result<()> {
        let state = self.lock();
        journal::write_snapshot(&state, &mut out)?;
        out.flush()
    }

    pub fn persist_to_vec(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.persist(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Rebuilds a server by replaying a journal. A leading `config` record
    /// overrides the reward policy and pseudonym key in `config`.
    pub fn restore<R: BufRead>(config: ServerConfig, input: R) -> Result<Self, ServerError> {
        let server = CashingServer::new(config)?;
        {
            let mut state = server.lock();
            journal::replay(&mut state, input)?;
        }
        Ok(server)
    }
}

/// The server surface a manager needs, over any transport.
pub trait CashingService {
    fn redeem(&self, req: &RedeemRequest) -> Result<RedeemOutcome, ServiceError>;
    fn grant_key(&self, secure_id: &SecureId, credential: &ManagerCredential, manager: &ManagerId, now: u64) -> Result<GrantOutcome, ServiceError>;
    fn report_abuse(&self, accused: &AuthorId, reporter: &UserId, credential: &ManagerCredential, now: u64) -> Result<AbuseCaseResult, ServiceError>;
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ServiceError {
    /// The request may not have arrived; resending it is safe.
    #[error("transport: {0}")]
    Transport(String),
    #[error("credential rejected")]
    BadCredential,
    #[error("protocol: {0}")]
    Protocol(String),
}

impl CashingService for CashingServer {
    fn redeem(&self, req: &RedeemRequest) -> Result<RedeemOutcome, ServiceError> {
        Ok(CashingServer::redeem(self, req))
    }

    fn grant_key(&self, secure_id: &SecureId, credential: &ManagerCredential, manager: &ManagerId, now: u64) -> Result<GrantOutcome, ServiceError> {
        Ok(CashingServer::grant_key(self, secure_id, credential, Some(manager), now))
    }

    fn report_abuse(&self, accused: &AuthorId, reporter: &UserId, credential: &ManagerCredential, now: u64) -> Result<AbuseCaseResult, ServiceError> {
        if !self.verify_credential(credential) {
            return Err(ServiceError::BadCredential);
        }
        Ok(self.handle_abuse_report(accused, reporter.as_str(), now))
    }
}

impl<T: CashingService + ?Sized> CashingService for &T {
    fn redeem(&self, req: &RedeemRequest) -> Result<RedeemOutcome, ServiceError> {
        (**self).redeem(req)
    }

    fn grant_key(&self, secure_id: &SecureId, credential: &ManagerCredential, manager: &ManagerId, now: u64) -> Result<GrantOutcome, ServiceError> {
        (**self).grant_key(secure_id, credential, manager, now)
    }

    fn report_abuse(&self, accused: &AuthorId, reporter: &UserId, credential: &ManagerCredential, now: u64) -> Result<AbuseCaseResult, ServiceError> {
        (**self).report_abuse(accused, reporter, credential, now)
    }
}
