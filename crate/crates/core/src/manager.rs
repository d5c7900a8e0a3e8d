//! The coupon cashing manager: the one app on the phone trusted by the
//! server.
//!
//! Apps hand their coupons to the manager, which forwards them with its
//! credential and keeps a per-author, per-accessory tally the user can
//! inspect. That tally is how a user spots an app collecting coupons it has
//! no business collecting, and it backs the abuse report.
//!
//! For minimal accessories the manager also acts as device driver: it
//! redeems the device's secure id for the coupon key once, then runs the
//! release policy itself with the counter stored here.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::accessory::{
    Accessory, AccessoryConfig, AccessoryError, FactorySecret, ReleasePolicy, UseAction,
};
use crate::coupon::{Coupon, CouponCounter, CouponMax, SecureId};
use crate::ids::{AccessoryId, AccessoryType, AuthorId, ManagerId, UserId, VendorId};
use crate::money::Money;
use crate::server::{
    AbuseCaseResult, CashingService, GrantOutcome, ManagerCredential, RedeemOutcome,
    RedeemRequest, RefuseReason, ServiceError,
};

/// Attempts per delivery before a transport failure is surfaced.
pub const DELIVERY_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ManagerError {
    #[error("server unreachable after {attempts} attempts: {last}")]
    Unreachable { attempts: u32, last: String },
    #[error("author {0} has no coupons in this phone's report")]
    UnknownAuthor(AuthorId),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    Accessory(#[from] AccessoryError),
}

/// App-to-manager hand-off of one coupon received from an accessory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename = "DELIVER")]
pub struct Deliver {
    pub coupon_hex: Coupon,
    pub accessory_id: AccessoryId,
    pub app_author_id: AuthorId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserReportRow {
    pub author: AuthorId,
    pub accessory: AccessoryId,
    pub coupons: u64,
    pub total: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryLogEntry {
    pub coupon: Coupon,
    pub accessory: AccessoryId,
    pub author: AuthorId,
    /// Credited amount when accepted, `None` when rejected.
    pub credited: Option<Money>,
}

/// What the manager knows about a minimal accessory besides its secure id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub accessory_id: AccessoryId,
    pub vendor_id: VendorId,
    pub accessory_type: AccessoryType,
    pub coupon_max: CouponMax,
    pub policy: ReleasePolicy,
    pub actuator_gated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverStatus {
    Active,
    Refused(RefuseReason),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DriveOutcome {
    pub status: DriverStatus,
    pub coupons: Vec<Coupon>,
    pub redeemed: Vec<RedeemOutcome>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manager {
    id: ManagerId,
    owner: UserId,
    credential: ManagerCredential,
    tallies: BTreeMap<AuthorId, BTreeMap<AccessoryId, (u64, Money)>>,
    /// Emulated control mechanisms for minimal devices, keyed by secure id.
    /// Each one's counter is the device's externally stored coupon counter.
    granted_keys: BTreeMap<SecureId, Accessory>,
    refused: BTreeMap<SecureId, RefuseReason>,
    seen_accessories: BTreeSet<AccessoryId>,
    log: Vec<DeliveryLogEntry>,
}

impl Manager {
    pub fn new(id: ManagerId, owner: UserId, credential: ManagerCredential) -> Self {
        Manager {
            id,
            owner,
            credential,
            tallies: BTreeMap::new(),
            granted_keys: BTreeMap::new(),
            refused: BTreeMap::new(),
            seen_accessories: BTreeSet::new(),
            log: Vec::new(),
        }
    }

    pub fn id(&self) -> &ManagerId {
        &self.id
    }

    pub fn owner(&self) -> &UserId {
        &self.owner
    }

    pub fn delivery_log(&self) -> &[DeliveryLogEntry] {
        &self.log
    }

    pub fn seen_accessories(&self) -> &BTreeSet<AccessoryId> {
        &self.seen_accessories
    }

    /// External counter for a granted minimal device.
    pub fn external_counter(&self, secure_id: &SecureId) -> Option<CouponCounter> {
        self.granted_keys.get(secure_id).map(Accessory::counter)
    }

    /// Forwards one coupon to the server and records the outcome.
    ///
    /// Transport failures are retried with the identical request; the server
    /// turns an already-applied retry into `already_redeemed`.
    pub fn deliver<S: CashingService + ?Sized>(
        &mut self,
        coupon: Coupon,
        accessory_id: &AccessoryId,
        app_author_id: &AuthorId,
        server: &S,
        now: u64,
    ) -> Result<RedeemOutcome, ManagerError> {
        let req = RedeemRequest {
            coupon,
            author: app_author_id.clone(),
            credential: self.credential,
            user: self.owner.as_str().to_owned(),
            now,
        };
        let mut last = String::new();
        for _ in 0..DELIVERY_ATTEMPTS {
            match server.redeem(&req) {
                Ok(outcome) => {
                    self.record(coupon, accessory_id, app_author_id, outcome);
                    return Ok(outcome);
                }
                Err(ServiceError::Transport(e)) => last = e,
                Err(e) => return Err(e.into()),
            }
        }
        Err(ManagerError::Unreachable { attempts: DELIVERY_ATTEMPTS, last })
    }

    pub fn handle_deliver<S: CashingService + ?Sized>(&mut self, msg: &Deliver, server: &S, now: u64) -> Result<RedeemOutcome, ManagerError> {
        self.deliver(msg.coupon_hex, &msg.accessory_id, &msg.app_author_id, server, now)
    }

    fn record(&mut self, coupon: Coupon, accessory: &AccessoryId, author: &AuthorId, outcome: RedeemOutcome) {
        self.seen_accessories.insert(accessory.clone());
        let credited = match outcome {
            RedeemOutcome::Accepted { credited } => {
                let slot = self
                    .tallies
                    .entry(author.clone())
                    .or_default()
                    .entry(accessory.clone())
                    .or_default();
                slot.0 += 1;
                slot.1 += credited;
                Some(credited)
            }
            RedeemOutcome::Rejected { .. } => None,
        };
        self.log.push(DeliveryLogEntry {
            coupon,
            accessory: accessory.clone(),
            author: author.clone(),
            credited,
        });
    }

    /// Which authors earned how much from which of this user's accessories.
    pub fn user_report(&self) -> Vec<UserReportRow> {
        self.tallies
            .iter()
            .flat_map(|(author, per_acc)| {
                per_acc.iter().map(move |(accessory, (coupons, total))| UserReportRow {
                    author: author.clone(),
                    accessory: accessory.clone(),
                    coupons: *coupons,
                    total: *total,
                })
            })
            .collect()
    }

    /// Total an author earned through this phone.
    pub fn author_total(&self, author: &AuthorId) -> Money {
        self.tallies
            .get(author)
            .map(|m| m.values().map(|(_, t)| *t).sum())
            .unwrap_or_default()
    }

    /// The "report abuse" button. Only authors present in the user report
    /// can be reported.
    pub fn report_abuse<S: CashingService + ?Sized>(&self, accused: &AuthorId, server: &S, now: u64) -> Result<AbuseCaseResult, ManagerError> {
        if !self.tallies.contains_key(accused) {
            return Err(ManagerError::UnknownAuthor(accused.clone()));
        }
        Ok(server.report_abuse(accused, &self.owner, &self.credential, now)?)
    }

    fn ensure_grant<S: CashingService + ?Sized>(
        &mut self,
        secure_id: &SecureId,
        profile: &DeviceProfile,
        server: &S,
        now: u64,
    ) -> Result<DriverStatus, ManagerError> {
        if self.granted_keys.contains_key(secure_id) {
            return Ok(DriverStatus::Active);
        }
        if let Some(&reason) = self.refused.get(secure_id) {
            return Ok(DriverStatus::Refused(reason));
        }
        let mut last = String::new();
        for _ in 0..DELIVERY_ATTEMPTS {
            match server.grant_key(secure_id, &self.credential, &self.id, now) {
                Ok(GrantOutcome::Granted { key }) => {
                    let config = AccessoryConfig {
                        accessory_id: profile.accessory_id.clone(),
                        vendor_id: profile.vendor_id.clone(),
                        accessory_type: profile.accessory_type.clone(),
                        coupon_max: profile.coupon_max,
                        policy: Some(profile.policy.clone()),
                        actuator_gated: profile.actuator_gated,
                    };
                    let mut driver = Accessory::provision(config, FactorySecret::Counter { key })?;
                    driver.handle_willing(AuthorId::new(""));
                    self.granted_keys.insert(*secure_id, driver);
                    return Ok(DriverStatus::Active);
                }
                Ok(GrantOutcome::Refused { reason }) => {
                    self.refused.insert(*secure_id, reason);
                    return Ok(DriverStatus::Refused(reason));
                }
                Err(ServiceError::Transport(e)) => last = e,
                Err(e) => return Err(e.into()),
            }
        }
        Err(ManagerError::Unreachable { attempts: DELIVERY_ATTEMPTS, last })
    }

    /// One use of a minimal accessory, relayed through the manager on behalf
    /// of `app_author`. Coupons that fall due are derived here and delivered.
    pub fn driver_use<S: CashingService + ?Sized>(
        &mut self,
        secure_id: &SecureId,
        profile: &DeviceProfile,
        app_author: &AuthorId,
        action: UseAction,
        now: u64,
        server: &S,
    ) -> Result<DriveOutcome, ManagerError> {
        let status = self.ensure_grant(secure_id, profile, server, now)?;
        if status != DriverStatus::Active {
            return Ok(DriveOutcome { status, coupons: Vec::new(), redeemed: Vec::new() });
        }
        let driver = self.granted_keys.get_mut(secure_id).expect("granted above");
        let coupons = driver.handle_use(action, now)?;
        let mut redeemed = Vec::with_capacity(coupons.len());
        for &c in &coupons {
            redeemed.push(self.deliver(c, &profile.accessory_id, app_author, server, now)?);
        }
        Ok(DriveOutcome { status, coupons, redeemed })
    }

    /// Drives a minimal accessory through a stream of `(time, use)` events.
    pub fn drive_minimal<S, I>(
        &mut self,
        secure_id: &SecureId,
        profile: &DeviceProfile,
        app_author: &AuthorId,
        uses: I,
        server: &S,
    ) -> Result<DriveOutcome, ManagerError>
    where
        S: CashingService + ?Sized,
        I: IntoIterator<Item = (u64, UseAction)>,
    {
        let mut total = DriveOutcome { status: DriverStatus::Active, coupons: Vec::new(), redeemed: Vec::new() };
        for (now, action) in uses {
            let step = self.driver_use(secure_id, profile, app_author, action, now, server)?;
            total.status = step.status;
            total.coupons.extend(step.coupons);
            total.redeemed.extend(step.redeemed);
            if total.status != DriverStatus::Active {
                break;
            }
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use std::cell::Cell;

    use super::*;
    use crate::coupon::{pregenerate_coupons, CouponKey};
    use crate::server::{
        BatchEntry, CashingServer, GrantRecord, PseudonymKey, RejectReason, RewardPolicy,
        ServerConfig,
    };

    const CRED: ManagerCredential = ManagerCredential::from_bytes([0xaa; 16]);

    fn server() -> CashingServer {
        CashingServer::new(ServerConfig {
            credential: CRED,
            pseudonym_key: PseudonymKey::from_bytes([1; 16]),
            reward_policy: RewardPolicy::default(),
        })
        .unwrap()
    }

    fn register(s: &CashingServer, key: CouponKey, max: u64, accessory: &str, secure_id: Option<SecureId>) -> Vec<Coupon> {
        let coupons = pregenerate_coupons(&key, CouponMax::new(max).unwrap(), Money::from_cents(1), &VendorId::new("acme"));
        let entries = coupons
            .iter()
            .map(|p| BatchEntry {
                coupon: p.coupon,
                worth: p.worth,
                vendor_id: p.vendor_id.clone(),
                accessory_id: AccessoryId::new(accessory),
                accessory_type: AccessoryType::new("button"),
            })
            .collect();
        let grants = secure_id.map(|id| vec![GrantRecord::new(id, key)]).unwrap_or_default();
        s.register_batch(entries, grants).unwrap();
        coupons.into_iter().map(|p| p.coupon).collect()
    }

    fn manager(name: &str) -> Manager {
        Manager::new(ManagerId::new(name), UserId::new("alice"), CRED)
    }

    fn profile(accessory: &str) -> DeviceProfile {
        DeviceProfile {
            accessory_id: AccessoryId::new(accessory),
            vendor_id: VendorId::new("acme"),
            accessory_type: AccessoryType::new("button"),
            coupon_max: CouponMax::new(5).unwrap(),
            policy: ReleasePolicy::per_minute(),
            actuator_gated: false,
        }
    }

    fn minutes(n: u64) -> Vec<(u64, UseAction)> {
        (0..=n * 6).map(|i| (i * 10, UseAction::ACTUATOR)).collect()
    }

    #[test]
    fn deliver_tallies_and_dedups() {
        let s = server();
        let coupons = register(&s, CouponKey::from_bytes([1; 16]), 5, "b-1", None);
        let mut m = manager("m1");
        assert!(m.user_report().is_empty());
        let game = AuthorId::new("game");
        let acc = AccessoryId::new("b-1");
        let first = m.deliver(coupons[0], &acc, &game, &s, 0).unwrap();
        assert_eq!(first, RedeemOutcome::Accepted { credited: Money::from_cents(1) });
        let again = m.deliver(coupons[0], &acc, &game, &s, 1).unwrap();
        assert_eq!(again, RedeemOutcome::Rejected { reason: RejectReason::AlreadyRedeemed });
        assert_eq!(m.user_report(), vec![UserReportRow { author: game.clone(), accessory: acc, coupons: 1, total: Money::from_cents(1) }]);
        let recount: Money = m.delivery_log().iter().filter_map(|d| d.credited).sum();
        assert_eq!(recount, m.author_total(&game));
    }

    #[test]
    fn direct_submission_without_credential_is_rejected() {
        let s = server();
        let coupons = register(&s, CouponKey::from_bytes([1; 16]), 5, "b-1", None);
        let outcome = s.redeem(&RedeemRequest {
            coupon: coupons[0],
            author: AuthorId::new("game"),
            credential: ManagerCredential::from_bytes([0; 16]),
            user: "alice".into(),
            now: 0,
        });
        assert_eq!(outcome, RedeemOutcome::Rejected { reason: RejectReason::BadCredential });
    }

    struct Flaky<'a> {
        inner: &'a CashingServer,
        /// Fail this many calls after applying them.
        drop_replies: Cell<u32>,
    }

    impl CashingService for Flaky<'_> {
        fn redeem(&self, req: &RedeemRequest) -> Result<RedeemOutcome, ServiceError> {
            let out = self.inner.redeem(req);
            if self.drop_replies.get() > 0 {
                self.drop_replies.set(self.drop_replies.get() - 1);
                return Err(ServiceError::Transport("reply lost".into()));
            }
            Ok(out)
        }
        fn grant_key(&self, id: &SecureId, c: &ManagerCredential, m: &ManagerId, now: u64) -> Result<GrantOutcome, ServiceError> {
            CashingService::grant_key(self.inner, id, c, m, now)
        }
        fn report_abuse(&self, a: &AuthorId, r: &UserId, c: &ManagerCredential, now: u64) -> Result<AbuseCaseResult, ServiceError> {
            CashingService::report_abuse(self.inner, a, r, c, now)
        }
    }

    #[test]
    fn lost_reply_retry_is_safe() {
        let s = server();
        let coupons = register(&s, CouponKey::from_bytes([1; 16]), 5, "b-1", None);
        let flaky = Flaky { inner: &s, drop_replies: Cell::new(1) };
        let mut m = manager("m1");
        let out = m.deliver(coupons[0], &AccessoryId::new("b-1"), &AuthorId::new("game"), &flaky, 0).unwrap();
        // First attempt landed but its reply was lost; the retry sees the coupon spent.
        assert_eq!(out, RedeemOutcome::Rejected { reason: RejectReason::AlreadyRedeemed });
        assert_eq!(s.accounting().credited, Money::from_cents(1));

        let flaky = Flaky { inner: &s, drop_replies: Cell::new(DELIVERY_ATTEMPTS) };
        assert!(matches!(
            m.deliver(coupons[1], &AccessoryId::new("b-1"), &AuthorId::new("game"), &flaky, 0),
            Err(ManagerError::Unreachable { .. })
        ));
    }

    #[test]
    fn abuse_report_requires_tallied_author() {
        let s = server();
        let coupons = register(&s, CouponKey::from_bytes([1; 16]), 5, "b-1", None);
        let mut m = manager("m1");
        m.deliver(coupons[0], &AccessoryId::new("b-1"), &AuthorId::new("calendar"), &s, 0).unwrap();
        assert_eq!(
            m.report_abuse(&AuthorId::new("stranger"), &s, 1),
            Err(ManagerError::UnknownAuthor(AuthorId::new("stranger")))
        );
        let r = m.report_abuse(&AuthorId::new("calendar"), &s, 1).unwrap();
        assert!(r.suspended);
        assert_eq!(r.clawed_back, Money::from_cents(1));
        let again = m.report_abuse(&AuthorId::new("calendar"), &s, 2).unwrap();
        assert_eq!(again.clawed_back, Money::ZERO);
    }

    #[test]
    fn minimal_device_three_minutes() {
        let s = server();
        let id = SecureId::from_bytes([7; 16]);
        register(&s, CouponKey::from_bytes([3; 16]), 5, "b-1", Some(id));
        let mut m = manager("m1");
        let out = m.drive_minimal(&id, &profile("b-1"), &AuthorId::new("game"), minutes(3), &s).unwrap();
        assert_eq!(out.status, DriverStatus::Active);
        assert_eq!(out.coupons.len(), 3);
        assert!(out.redeemed.iter().all(RedeemOutcome::is_accepted));
        assert_eq!(m.external_counter(&id), Some(CouponCounter::new(3)));

        // The counter never runs past coupon max.
        let more: Vec<_> = (0..=60).map(|i| (1000 + i * 10, UseAction::ACTUATOR)).collect();
        let out = m.drive_minimal(&id, &profile("b-1"), &AuthorId::new("game"), more, &s).unwrap();
        assert_eq!(out.coupons.len(), 2);
        assert_eq!(m.external_counter(&id), Some(CouponCounter::new(5)));
    }

    #[test]
    fn cloned_secure_id_yields_nothing() {
        let s = server();
        let id = SecureId::from_bytes([7; 16]);
        register(&s, CouponKey::from_bytes([3; 16]), 5, "b-1", Some(id));
        let mut first = manager("m1");
        first.drive_minimal(&id, &profile("b-1"), &AuthorId::new("game"), minutes(1), &s).unwrap();
        let mut thief = manager("m2");
        let out = thief.drive_minimal(&id, &profile("b-1"), &AuthorId::new("game"), minutes(3), &s).unwrap();
        assert_eq!(out.status, DriverStatus::Refused(RefuseReason::AlreadyGranted));
        assert!(out.coupons.is_empty());
        assert_eq!(thief.external_counter(&id), None);
    }

    #[test]
    fn two_units_same_type_redeem_independently() {
        let s = server();
        let (id1, id2) = (SecureId::from_bytes([1; 16]), SecureId::from_bytes([2; 16]));
        register(&s, CouponKey::from_bytes([11; 16]), 5, "b-1", Some(id1));
        register(&s, CouponKey::from_bytes([12; 16]), 5, "b-2", Some(id2));
        let mut m = manager("m1");
        let game = AuthorId::new("game");
        let a = m.drive_minimal(&id1, &profile("b-1"), &game, minutes(2), &s).unwrap();
        let b = m.drive_minimal(&id2, &profile("b-2"), &game, minutes(2), &s).unwrap();
        assert_eq!(a.coupons.len() + b.coupons.len(), 4);
        assert!(a.redeemed.iter().chain(&b.redeemed).all(RedeemOutcome::is_accepted));
        assert_eq!(m.seen_accessories().len(), 2);
        assert_eq!(m.user_report().len(), 2);
    }

    #[test]
    fn external_counter_survives_serialization() {
        let s = server();
        let id = SecureId::from_bytes([7; 16]);
        register(&s, CouponKey::from_bytes([3; 16]), 5, "b-1", Some(id));
        let mut m = manager("m1");
        m.drive_minimal(&id, &profile("b-1"), &AuthorId::new("game"), minutes(2), &s).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let mut back: Manager = serde_json::from_str(&json).unwrap();
        assert_eq!(back.external_counter(&id), Some(CouponCounter::new(2)));
        let more: Vec<_> = (0..=6).map(|i| (5000 + i * 10, UseAction::ACTUATOR)).collect();
        let out = back.drive_minimal(&id, &profile("b-1"), &AuthorId::new("game"), more, &s).unwrap();
        // Counter 2 is next: no reuse, so the server accepts it.
        assert_eq!(out.redeemed, vec![RedeemOutcome::Accepted { credited: Money::from_cents(1) }]);
    }

    #[test]
    fn deliver_message_shape() {
        let msg = Deliver {
            coupon_hex: Coupon::from_bytes([0; 16]),
            accessory_id: AccessoryId::new("b-1"),
            app_author_id: AuthorId::new("game"),
        };
        let line = serde_json::to_string(&msg).unwrap();
        assert_eq!(
            line,
            r#"{"type":"DELIVER","coupon_hex":"00000000000000000000000000000000","accessory_id":"b-1","app_author_id":"game"}"#
        );
    }
}
