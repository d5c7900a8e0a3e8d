use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::io::{self, Write};
use std::sync::{Arc, Mutex};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::metrics::Metrics;
use super::scenario::{AppBehavior, Scenario};
use super::{actor_rng, SimError};
use crate::accessory::{Accessory, AccessoryMode, UseAction};
use crate::coupon::{Coupon, SecureId};
use crate::factory::{provision_unit, registration, ProvisioningRecord};
use crate::ids::{AccessoryId, AuthorId, ManagerId, UserId};
use crate::manager::{DeviceProfile, DriverStatus, Manager, UserReportRow};
use crate::money::Money;
use crate::server::{
    CashingServer, ManagerCredential, Payout, PseudonymKey, RedeemOutcome, RefuseReason,
    RejectReason, ServerConfig,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub time: u64,
    /// Position in the log; breaks ties between equal times.
    pub seq: u64,
    pub actor: String,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Willing {
        accessory: AccessoryId,
    },
    Use {
        accessory: AccessoryId,
        actuator: bool,
    },
    CouponEmitted {
        accessory: AccessoryId,
        coupon: Coupon,
        to: AuthorId,
    },
    Deliver {
        accessory: AccessoryId,
        coupon: Coupon,
        author: AuthorId,
    },
    RedeemResult {
        coupon: Coupon,
        author: AuthorId,
        credited: Money,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rejected: Option<RejectReason>,
    },
    Grant {
        accessory: AccessoryId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        refused: Option<RefuseReason>,
    },
    Settle {
        moved: Money,
        payouts: Vec<Payout>,
        imbalance: i64,
    },
    AbuseReport {
        accused: AuthorId,
        suspended: bool,
        clawed_back: Money,
        redistributed: Vec<Payout>,
    },
    ForgeryBatch {
        submitted: u64,
        accepted: u64,
    },
}

/// Knobs that must not change the outcome.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Drop the server at this time, before any event there, and rebuild it
    /// from its journal.
    pub restart_at: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub events: Vec<Event>,
    /// Full ledger in journal form.
    pub ledger: Vec<u8>,
    pub metrics: Metrics,
    pub user_reports: BTreeMap<UserId, Vec<UserReportRow>>,
}

impl SimResult {
    pub fn events_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for e in &self.events {
            serde_json::to_writer(&mut out, e).expect("event serializes");
            out.push(b'\n');
        }
        out
    }

    /// Writes `events.jsonl`, `ledger.jsonl` and `metrics.tsv` into `dir`.
    pub fn write_to_dir(&self, dir: &std::path::Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(super::EVENTS_FILE), self.events_jsonl())?;
        std::fs::write(dir.join(super::LEDGER_FILE), &self.ledger)?;
        std::fs::write(dir.join(super::METRICS_FILE), self.metrics.to_table())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Action {
    Restart,
    SessionStart { user: usize, app: usize },
    SessionUse { user: usize, app: usize, end: u64 },
    Poll { user: usize, app: usize },
    Forge { user: usize, app: usize },
    Review { user: usize },
    Settle,
}

struct Unit {
    record: ProvisioningRecord,
    device: Accessory,
}

struct Phone {
    user: UserId,
    manager: Manager,
    accessories: Vec<usize>,
    foreground: BTreeSet<AuthorId>,
    reported: BTreeSet<AuthorId>,
    /// Willing app per minimal accessory; the manager hosts its control logic.
    minimal_willing: BTreeMap<usize, AuthorId>,
    grant_logged: BTreeSet<usize>,
}

#[derive(Clone)]
struct SharedBuf(Arc<Mutex<Vec<u8>>>);

impl Write for SharedBuf {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

struct Sim<'a> {
    s: &'a Scenario,
    config: ServerConfig,
    server: CashingServer,
    journal: SharedBuf,
    units: Vec<Unit>,
    phones: Vec<Phone>,
    heap: BinaryHeap<Reverse<(u64, u64, Action)>>,
    next_seq: u64,
    events: Vec<Event>,
    emitted: BTreeMap<usize, u64>,
    redeemed: BTreeMap<usize, u64>,
    settle_checks: u64,
    settle_failures: u64,
    forgeries: (u64, u64),
}

fn app_actor(author: &AuthorId, user: &UserId) -> String {
    format!("app:{author}@{user}")
}

impl<'a> Sim<'a> {
    fn new(s: &'a Scenario) -> Result<Self, SimError> {
        let mut keys = actor_rng(s.seed, "server");
        let credential = ManagerCredential::random(&mut keys);
        let config = ServerConfig {
            credential,
            pseudonym_key: PseudonymKey::random(&mut keys),
            reward_policy: s.reward_policy.clone(),
        };
        let server = CashingServer::new(config.clone()).map_err(|e| SimError::Invalid {
            field: "reward_policy".into(),
            message: e.to_string(),
        })?;
        let journal = SharedBuf(Arc::new(Mutex::new(Vec::new())));
        server.persist(journal.clone()).expect("in-memory write");
        server.attach_journal(Box::new(journal.clone()));

        let mut units = Vec::with_capacity(s.accessories.len());
        for (i, a) in s.accessories.iter().enumerate() {
            let spec = a.unit_spec(s.allow_overvalued).map_err(|m| SimError::Invalid {
                field: format!("accessories[{i}].coupon_max"),
                message: m,
            })?;
            let mut rng = actor_rng(s.seed, &format!("accessory:{}", a.id));
            let record = provision_unit(a.id.clone(), &spec, &mut rng).map_err(|e| SimError::Invalid {
                field: format!("accessories[{i}]"),
                message: e.to_string(),
            })?;
            let device = record.build().map_err(|e| SimError::Invalid {
                field: format!("accessories[{i}]"),
                message: e.to_string(),
            })?;
            units.push(Unit { record, device });
        }
        let records: Vec<_> = units.iter().map(|u| u.record.clone()).collect();
        let (entries, grants) = registration(&records);
        server
            .register_batch(entries, grants)
            .map_err(|e| SimError::Runtime(e.to_string()))?;

        let unit_index: BTreeMap<&AccessoryId, usize> =
            s.accessories.iter().enumerate().map(|(i, a)| (&a.id, i)).collect();
        let phones = s
            .users
            .iter()
            .map(|u| Phone {
                user: u.id.clone(),
                manager: Manager::new(ManagerId::new(format!("manager:{}", u.id)), u.id.clone(), credential),
                accessories: u.accessories.iter().map(|a| unit_index[a]).collect(),
                foreground: u
                    .apps
                    .iter()
                    .filter(|a| s.apps.iter().any(|spec| &spec.author == *a && spec.behavior.is_foreground()))
                    .cloned()
                    .collect(),
                reported: BTreeSet::new(),
                minimal_willing: BTreeMap::new(),
                grant_logged: BTreeSet::new(),
            })
            .collect();

        Ok(Sim {
            s,
            config,
            server,
            journal,
            units,
            phones,
            heap: BinaryHeap::new(),
            next_seq: 0,
            events: Vec::new(),
            emitted: BTreeMap::new(),
            redeemed: BTreeMap::new(),
            settle_checks: 0,
            settle_failures: 0,
            forgeries: (0, 0),
        })
    }

    fn schedule(&mut self, time: u64, action: Action) {
        if time < self.s.duration {
            self.heap.push(Reverse((time, self.next_seq, action)));
            self.next_seq += 1;
        }
    }

    fn log(&mut self, time: u64, actor: String, kind: EventKind) {
        let seq = self.events.len() as u64;
        self.events.push(Event { time, seq, actor, kind });
    }

    fn app_index(&self, author: &AuthorId) -> usize {
        self.s.apps.iter().position(|a| &a.author == author).expect("validated")
    }

    fn seed_schedule(&mut self, options: &RunOptions) {
        if let Some(t) = options.restart_at {
            self.schedule(t, Action::Restart);
        }
        for (u, user) in self.s.users.iter().enumerate() {
            for author in &user.apps {
                let app = self.app_index(author);
                match self.s.apps[app].behavior {
                    AppBehavior::PlaysSessions { start, .. } => self.schedule(start, Action::SessionStart { user: u, app }),
                    AppBehavior::MaliciousBackground { start, .. } => self.schedule(start, Action::Poll { user: u, app }),
                    AppBehavior::Forger { start, .. } => self.schedule(start, Action::Forge { user: u, app }),
                }
            }
            if user.abuse_report_threshold.is_some() {
                self.schedule(user.review_interval, Action::Review { user: u });
            }
        }
        if let Some(interval) = self.s.settle_interval {
            self.schedule(interval, Action::Settle);
        }
    }

    fn run(mut self, options: &RunOptions) -> Result<SimResult, SimError> {
        self.seed_schedule(options);
        while let Some(Reverse((now, _, action))) = self.heap.pop() {
            self.step(now, action)?;
        }
        let accounting = self.server.accounting();
        let metrics = Metrics {
            accounting,
            events: self.events.len() as u64,
            settle_checks: self.settle_checks,
            settle_failures: self.settle_failures,
            authors: self.server.accounts(),
            accessories: self
                .units
                .iter()
                .enumerate()
                .map(|(i, u)| (u.record.accessory_id.clone(), (self.emitted.get(&i).copied().unwrap_or(0), self.redeemed.get(&i).copied().unwrap_or(0))))
                .collect(),
            forgeries_submitted: self.forgeries.0,
            forgeries_accepted: self.forgeries.1,
        };
        Ok(SimResult {
            events: self.events,
            ledger: self.server.persist_to_vec(),
            metrics,
            user_reports: self.phones.iter().map(|p| (p.user.clone(), p.manager.user_report())).collect(),
        })
    }

    fn step(&mut self, now: u64, action: Action) -> Result<(), SimError> {
        match action {
            Action::Restart => {
                let bytes = self.journal.0.lock().unwrap_or_else(|e| e.into_inner()).clone();
                self.server = CashingServer::restore(self.config.clone(), &bytes[..])
                    .map_err(|e| SimError::Runtime(format!("restart failed: {e}")))?;
                self.server.attach_journal(Box::new(self.journal.clone()));
            }
            Action::SessionStart { user, app } => {
                let AppBehavior::PlaysSessions { session_length, willing, .. } = self.s.apps[app].behavior else {
                    unreachable!()
                };
                if willing {
                    self.claim(now, user, app);
                }
                self.step(now, Action::SessionUse { user, app, end: now + session_length })?;
            }
            Action::SessionUse { user, app, end } => {
                let AppBehavior::PlaysSessions { gap, step, .. } = self.s.apps[app].behavior else {
                    unreachable!()
                };
                self.use_all(now, user, app, UseAction::ACTUATOR)?;
                let next = now + step;
                if next <= end {
                    self.schedule(next, Action::SessionUse { user, app, end });
                } else {
                    self.schedule(end + gap, Action::SessionStart { user, app });
                }
            }
            Action::Poll { user, app } => {
                let AppBehavior::MaliciousBackground { stop, poll_interval, sends_actuator_commands, .. } =
                    self.s.apps[app].behavior
                else {
                    unreachable!()
                };
                self.claim(now, user, app);
                let action = UseAction { is_actuator_command: sends_actuator_commands };
                self.use_all(now, user, app, action)?;
                let next = now + poll_interval;
                if stop.is_none_or(|s| next <= s) {
                    self.schedule(next, Action::Poll { user, app });
                }
            }
            Action::Forge { user, app } => self.forge(now, user, app)?,
            Action::Review { user } => {
                self.review(now, user)?;
                let interval = self.s.users[user].review_interval;
                self.schedule(now + interval, Action::Review { user });
            }
            Action::Settle => {
                let payouts = self.server.settle(now, self.s.holding_period);
                let moved = payouts.iter().map(|p| p.amount).sum();
                let imbalance = self.server.accounting().imbalance();
                self.settle_checks += 1;
                if imbalance != 0 {
                    self.settle_failures += 1;
                }
                self.log(now, "server".into(), EventKind::Settle { moved, payouts, imbalance: imbalance as i64 });
                self.schedule(now + self.s.settle_interval.expect("scheduled only when set"), Action::Settle);
            }
        }
        Ok(())
    }

    /// The app declares willingness on every accessory it can reach unless
    /// it already holds it.
    fn claim(&mut self, now: u64, user: usize, app: usize) {
        let author = self.s.apps[app].author.clone();
        let actor = app_actor(&author, &self.phones[user].user);
        for k in 0..self.phones[user].accessories.len() {
            let unit = self.phones[user].accessories[k];
            let holder = match self.units[unit].device.mode() {
                AccessoryMode::Minimal => self.phones[user].minimal_willing.get(&unit),
                _ => self.units[unit].device.willing_app(),
            };
            if holder == Some(&author) {
                continue;
            }
            match self.units[unit].device.mode() {
                AccessoryMode::Minimal => {
                    self.phones[user].minimal_willing.insert(unit, author.clone());
                }
                _ => self.units[unit].device.handle_willing(author.clone()),
            }
            let accessory = self.units[unit].record.accessory_id.clone();
            self.log(now, actor.clone(), EventKind::Willing { accessory });
        }
    }

    fn use_all(&mut self, now: u64, user: usize, app: usize, action: UseAction) -> Result<(), SimError> {
        let author = self.s.apps[app].author.clone();
        let actor = app_actor(&author, &self.phones[user].user);
        for k in 0..self.phones[user].accessories.len() {
            let unit = self.phones[user].accessories[k];
            let accessory = self.units[unit].record.accessory_id.clone();
            self.log(now, actor.clone(), EventKind::Use { accessory: accessory.clone(), actuator: action.is_actuator_command });
            if self.units[unit].device.mode() == AccessoryMode::Minimal {
                self.drive_minimal(now, user, unit, action)?;
                continue;
            }
            let coupons = self.units[unit].device.handle_use(action, now).map_err(|e| SimError::Runtime(e.to_string()))?;
            if coupons.is_empty() {
                continue;
            }
            let to = self.units[unit].device.willing_app().cloned().expect("emission implies willingness");
            for coupon in coupons {
                self.log(now, format!("accessory:{accessory}"), EventKind::CouponEmitted { accessory: accessory.clone(), coupon, to: to.clone() });
                *self.emitted.entry(unit).or_default() += 1;
                self.log(now, app_actor(&to, &self.phones[user].user), EventKind::Deliver { accessory: accessory.clone(), coupon, author: to.clone() });
                let outcome = self.phones[user]
                    .manager
                    .deliver(coupon, &accessory, &to, &self.server, now)
                    .map_err(|e| SimError::Runtime(e.to_string()))?;
                self.log_result(now, unit, coupon, &to, outcome);
            }
        }
        Ok(())
    }

    fn drive_minimal(&mut self, now: u64, user: usize, unit: usize, action: UseAction) -> Result<(), SimError> {
        let Some(author) = self.phones[user].minimal_willing.get(&unit).cloned() else {
            return Ok(());
        };
        let record = &self.units[unit].record;
        let accessory = record.accessory_id.clone();
        let secure_id: SecureId = self.units[unit].device.read_secure_id().map_err(|e| SimError::Runtime(e.to_string()))?;
        let profile = DeviceProfile {
            accessory_id: accessory.clone(),
            vendor_id: record.vendor_id.clone(),
            accessory_type: record.accessory_type.clone(),
            coupon_max: record.coupon_max,
            policy: record.policy.clone(),
            actuator_gated: record.actuator_gated,
        };
        let phone = &mut self.phones[user];
        let step = phone
            .manager
            .driver_use(&secure_id, &profile, &author, action, now, &self.server)
            .map_err(|e| SimError::Runtime(e.to_string()))?;
        let manager_actor = format!("manager:{}", phone.user);
        if phone.grant_logged.insert(unit) {
            let refused = match step.status {
                DriverStatus::Active => None,
                DriverStatus::Refused(r) => Some(r),
            };
            self.log(now, manager_actor.clone(), EventKind::Grant { accessory: accessory.clone(), refused });
        }
        for (coupon, outcome) in step.coupons.into_iter().zip(step.redeemed) {
            self.log(now, manager_actor.clone(), EventKind::CouponEmitted { accessory: accessory.clone(), coupon, to: author.clone() });
            *self.emitted.entry(unit).or_default() += 1;
            self.log(now, manager_actor.clone(), EventKind::Deliver { accessory: accessory.clone(), coupon, author: author.clone() });
            self.log_result(now, unit, coupon, &author, outcome);
        }
        Ok(())
    }

    fn log_result(&mut self, now: u64, unit: usize, coupon: Coupon, author: &AuthorId, outcome: RedeemOutcome) {
        let (credited, rejected) = match outcome {
            RedeemOutcome::Accepted { credited } => {
                *self.redeemed.entry(unit).or_default() += 1;
                (credited, None)
            }
            RedeemOutcome::Rejected { reason } => (Money::ZERO, Some(reason)),
        };
        self.log(now, "server".into(), EventKind::RedeemResult { coupon, author: author.clone(), credited, rejected });
    }

    fn forge(&mut self, now: u64, user: usize, app: usize) -> Result<(), SimError> {
        let AppBehavior::Forger { submissions, .. } = self.s.apps[app].behavior else {
            unreachable!()
        };
        let author = self.s.apps[app].author.clone();
        let phone = &mut self.phones[user];
        let mut rng = actor_rng(self.s.seed, &app_actor(&author, &phone.user));
        let accessory = AccessoryId::new("(none)");
        let mut accepted = 0;
        for _ in 0..submissions {
            let mut bytes = [0u8; 16];
            rng.fill_bytes(&mut bytes);
            let outcome = phone
                .manager
                .deliver(Coupon::from_bytes(bytes), &accessory, &author, &self.server, now)
                .map_err(|e| SimError::Runtime(e.to_string()))?;
            accepted += outcome.is_accepted() as u64;
        }
        self.forgeries.0 += submissions;
        self.forgeries.1 += accepted;
        let actor = app_actor(&author, &phone.user);
        self.log(now, actor, EventKind::ForgeryBatch { submitted: submissions, accepted });
        Ok(())
    }

    /// The user opens the manager's report and files abuse against any
    /// background author above the threshold.
    fn review(&mut self, now: u64, user: usize) -> Result<(), SimError> {
        let threshold = self.s.users[user].abuse_report_threshold.expect("scheduled only with a threshold");
        let phone = &self.phones[user];
        let suspects: Vec<AuthorId> = phone
            .manager
            .user_report()
            .into_iter()
            .filter(|row| row.total > threshold && !phone.foreground.contains(&row.author) && !phone.reported.contains(&row.author))
            .map(|row| row.author)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        for accused in suspects {
            let phone = &mut self.phones[user];
            phone.reported.insert(accused.clone());
            let result = phone
                .manager
                .report_abuse(&accused, &self.server, now)
                .map_err(|e| SimError::Runtime(e.to_string()))?;
            let actor = format!("user:{}", phone.user);
            self.log(
                now,
                actor,
                EventKind::AbuseReport {
                    accused,
                    suspended: result.suspended,
                    clawed_back: result.clawed_back,
                    redistributed: result.redistributed,
                },
            );
        }
        Ok(())
    }
}

pub fn run_with(s: &Scenario, options: &RunOptions) -> Result<SimResult, SimError> {
    s.validate()?;
    Sim::new(s)?.run(options)
}
