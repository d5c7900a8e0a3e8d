//! The control mechanism inside an accessory.
//!
//! An [`Accessory`] watches how an app uses it and emits coupons to that app
//! once the app has declared itself willing to receive them. Emission follows
//! a [`ReleasePolicy`] evaluated against accumulated qualifying use. Gaps
//! between qualifying use events count toward that total only when they are
//! at most [`USAGE_GAP_CAP`] seconds long.
//!
//! Minimal accessories carry only a [`SecureId`]; their emission logic runs
//! in the coupon cashing manager instead.

mod link;
mod policy;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coupon::{
    random_coupon, Coupon, CouponCounter, CouponGenerator, CouponKey, CouponMax, SecureId,
};
use crate::ids::{AccessoryId, AccessoryType, AuthorId, VendorId};

pub use link::LinkMessage;
pub use policy::{policy_due, Phase, PolicyError, ReleasePolicy};

/// Longest gap between qualifying use events that still counts as use.
pub const USAGE_GAP_CAP: u64 = 120;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessoryMode {
    /// Encrypts an incrementing counter.
    Counter,
    /// Encrypts a random counter value on every emission.
    Random,
    /// Holds only a secure id; the manager drives emission.
    Minimal,
}

/// One interaction of an app with the accessory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UseAction {
    pub is_actuator_command: bool,
}

impl UseAction {
    pub const ACTUATOR: UseAction = UseAction { is_actuator_command: true };
    pub const POLL: UseAction = UseAction { is_actuator_command: false };
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AccessoryError {
    #[error("clock went backwards: event at {now} after event at {previous}")]
    ClockRegression { previous: u64, now: u64 },
    #[error("operation requires {expected:?} mode, accessory is in {actual:?} mode")]
    WrongMode {
        expected: AccessoryMode,
        actual: AccessoryMode,
    },
    #[error("{0} mode accessories need a release policy")]
    MissingPolicy(&'static str),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Factory-set identity and behavior, common to all modes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessoryConfig {
    pub accessory_id: AccessoryId,
    pub vendor_id: VendorId,
    pub accessory_type: AccessoryType,
    pub coupon_max: CouponMax,
    pub policy: Option<ReleasePolicy>,
    pub actuator_gated: bool,
}

/// Mode-specific factory secrets.
#[derive(Debug, Clone)]
pub enum FactorySecret {
    Counter { key: CouponKey },
    Random { key: CouponKey, rng_seed: u64 },
    Minimal { secure_id: SecureId },
}

#[derive(Clone, Serialize, Deserialize)]
pub struct Accessory {
    config: AccessoryConfig,
    mode: AccessoryMode,
    key: Option<CouponKey>,
    secure_id: Option<SecureId>,
    counter: CouponCounter,
    emitted: u64,
    usage_elapsed: u64,
    willing_app: Option<AuthorId>,
    last_qualifying_use: Option<u64>,
    last_event: Option<u64>,
    rng: Option<ChaCha8Rng>,
    #[serde(skip)]
    generator: Option<CouponGenerator>,
}

impl std::fmt::Debug for Accessory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Accessory")
            .field("id", &self.config.accessory_id)
            .field("mode", &self.mode)
            .field("counter", &self.counter)
            .field("emitted", &self.emitted)
            .field("usage_elapsed", &self.usage_elapsed)
            .field("willing_app", &self.willing_app)
            .finish_non_exhaustive()
    }
}

impl Accessory {
    pub fn provision(config: AccessoryConfig, secret: FactorySecret) -> Result<Self, AccessoryError> {
        let (mode, key, secure_id, rng) = match secret {
            FactorySecret::Counter { key } => (AccessoryMode::Counter, Some(key), None, None),
            FactorySecret::Random { key, rng_seed } => (
                AccessoryMode::Random,
                Some(key),
                None,
                Some(ChaCha8Rng::seed_from_u64(rng_seed)),
            ),
            FactorySecret::Minimal { secure_id } => {
                (AccessoryMode::Minimal, None, Some(secure_id), None)
            }
        };
        if mode != AccessoryMode::Minimal {
            let policy = config.policy.as_ref().ok_or(AccessoryError::MissingPolicy(
                if mode == AccessoryMode::Counter { "counter" } else { "random" },
            ))?;
            policy.validate(config.coupon_max)?;
        }
        let generator = key.as_ref().map(CouponGenerator::new);
        Ok(Accessory {
            config,
            mode,
            key,
            secure_id,
            counter: CouponCounter::ZERO,
            emitted: 0,
            usage_elapsed: 0,
            willing_app: None,
            last_qualifying_use: None,
            last_event: None,
            rng,
            generator,
        })
    }

    pub fn config(&self) -> &AccessoryConfig {
        &self.config
    }

    pub fn id(&self) -> &AccessoryId {
        &self.config.accessory_id
    }

    pub fn mode(&self) -> AccessoryMode {
        self.mode
    }

    pub fn counter(&self) -> CouponCounter {
        self.counter
    }

    pub fn emitted(&self) -> u64 {
        self.emitted
    }

    pub fn usage_elapsed(&self) -> u64 {
        self.usage_elapsed
    }

    pub fn willing_app(&self) -> Option<&AuthorId> {
        self.willing_app.as_ref()
    }

    /// Records that `app_id` accepts coupons. The latest caller wins.
    pub fn handle_willing(&mut self, app_id: AuthorId) {
        self.willing_app = Some(app_id);
    }

    /// Processes one use of the accessory at simulated time `now` and returns
    /// the coupons that became due, addressed to [`Self::willing_app`].
    pub fn handle_use(&mut self, action: UseAction, now: u64) -> Result<Vec<Coupon>, AccessoryError> {
        if let Some(previous) = self.last_event {
            if now < previous {
                return Err(AccessoryError::ClockRegression { previous, now });
            }
        }
        self.last_event = Some(now);

        if self.mode == AccessoryMode::Minimal || self.willing_app.is_none() {
            return Ok(Vec::new());
        }
        if self.config.actuator_gated && !action.is_actuator_command {
            return Ok(Vec::new());
        }

        if let Some(last) = self.last_qualifying_use {
            let gap = now - last;
            if gap <= USAGE_GAP_CAP {
                self.usage_elapsed += gap;
            }
        }
        self.last_qualifying_use = Some(now);

        let policy = self.config.policy.as_ref().expect("validated at provisioning");
        let mut due = policy_due(policy, self.usage_elapsed, self.emitted);
        let mut out = Vec::new();
        match self.mode {
            AccessoryMode::Counter => {
                let remaining = self.config.coupon_max.value() - self.counter.value();
                due = due.min(remaining);
                if self.generator.is_none() {
                    self.generator = Some(CouponGenerator::new(&self.key.expect("keyed mode")));
                }
                let generator = self.generator.as_ref().expect("set above");
                for _ in 0..due {
                    out.push(generator.derive(self.counter));
                    self.counter.increment();
                }
            }
            AccessoryMode::Random => {
                let key = self.key.expect("random mode has a key");
                let rng = self.rng.as_mut().expect("random mode has an rng");
                for _ in 0..due {
                    out.push(random_coupon(&key, self.config.coupon_max, rng));
                }
            }
            AccessoryMode::Minimal => unreachable!(),
        }
        self.emitted += due;
        Ok(out)
    }

    /// The device's secure id, readable by any connected app.
    pub fn read_secure_id(&self) -> Result<SecureId, AccessoryError> {
        match (self.mode, self.secure_id) {
            (AccessoryMode::Minimal, Some(id)) => Ok(id),
            _ => Err(AccessoryError::WrongMode {
                expected: AccessoryMode::Minimal,
                actual: self.mode,
            }),
        }
    }

    /// Handles one message from the app side of the link.
    pub fn handle_message(&mut self, msg: LinkMessage, now: u64) -> Result<Vec<LinkMessage>, AccessoryError> {
        match msg {
            LinkMessage::Willing { app_id } => {
                self.handle_willing(app_id);
                Ok(Vec::new())
            }
            LinkMessage::Use { is_actuator_command } => Ok(self
                .handle_use(UseAction { is_actuator_command }, now)?
                .into_iter()
                .map(|coupon| LinkMessage::Coupon { coupon_hex: coupon })
                .collect()),
            LinkMessage::ReadSecureId => Ok(vec![LinkMessage::SecureId {
                id_hex: self.read_secure_id()?,
            }]),
            // Device-to-app messages are ignored when sent the wrong way.
            LinkMessage::Coupon { .. } | LinkMessage::SecureId { .. } => Ok(Vec::new()),
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use proptest::prelude::*;

    use super::*;
    use crate::coupon::{derive_coupon, pregenerate_coupons};
    use crate::money::Money;

    fn config(max: u64, policy: Option<ReleasePolicy>, gated: bool) -> AccessoryConfig {
        AccessoryConfig {
            accessory_id: AccessoryId::new("acc-1"),
            vendor_id: VendorId::new("acme"),
            accessory_type: AccessoryType::new("heli"),
            coupon_max: CouponMax::new(max).unwrap(),
            policy,
            actuator_gated: gated,
        }
    }

    fn counter_device(max: u64, policy: ReleasePolicy, gated: bool) -> Accessory {
        Accessory::provision(
            config(max, Some(policy), gated),
            FactorySecret::Counter { key: CouponKey::from_bytes([1; 16]) },
        )
        .unwrap()
    }

    /// Continuous actuator use, one event per second over `[from, to]`.
    fn run(acc: &mut Accessory, from: u64, to: u64) -> Vec<(u64, Coupon)> {
        let mut out = Vec::new();
        for t in from..=to {
            for c in acc.handle_use(UseAction::ACTUATOR, t).unwrap() {
                out.push((t, c));
            }
        }
        out
    }

    #[test]
    fn silent_without_willing() {
        let mut acc = counter_device(500, ReleasePolicy::per_minute(), false);
        assert!(run(&mut acc, 0, 3600).is_empty());
        assert_eq!(acc.counter(), CouponCounter::ZERO);
    }

    #[test]
    fn one_minute_one_coupon() {
        let mut acc = counter_device(500, ReleasePolicy::per_minute(), false);
        acc.handle_willing(AuthorId::new("game"));
        assert!(acc.handle_use(UseAction::ACTUATOR, 0).unwrap().is_empty());
        let got = acc.handle_use(UseAction::ACTUATOR, 60).unwrap();
        assert_eq!(got, vec![derive_coupon(&CouponKey::from_bytes([1; 16]), CouponCounter::ZERO)]);
    }

    #[test]
    fn last_willing_wins() {
        let mut acc = counter_device(500, ReleasePolicy::per_minute(), false);
        acc.handle_willing(AuthorId::new("a"));
        acc.handle_willing(AuthorId::new("b"));
        assert_eq!(acc.willing_app(), Some(&AuthorId::new("b")));
    }

    #[test]
    fn runs_out_at_coupon_max() {
        let mut acc = counter_device(500, ReleasePolicy::per_minute(), false);
        acc.handle_willing(AuthorId::new("game"));
        let out = run(&mut acc, 0, 600 * 60);
        assert_eq!(out.len(), 500);
        assert_eq!(out.last().unwrap().0, 500 * 60);
        assert_eq!(acc.counter().value(), 500);
        let expected: Vec<Coupon> = pregenerate_coupons(
            &CouponKey::from_bytes([1; 16]),
            CouponMax::new(500).unwrap(),
            Money::ZERO,
            &VendorId::new("acme"),
        )
        .into_iter()
        .map(|p| p.coupon)
        .collect();
        assert_eq!(out.into_iter().map(|(_, c)| c).collect::<Vec<_>>(), expected);
    }

    #[test]
    fn actuator_gating_blocks_polls() {
        let mut acc = counter_device(500, ReleasePolicy::per_minute(), true);
        acc.handle_willing(AuthorId::new("calendar"));
        for i in 0..100 {
            assert!(acc.handle_use(UseAction::POLL, i * 30).unwrap().is_empty());
        }
        assert_eq!(acc.usage_elapsed(), 0);
    }

    #[test]
    fn long_gaps_do_not_count() {
        let mut acc = counter_device(500, ReleasePolicy::per_minute(), false);
        acc.handle_willing(AuthorId::new("game"));
        acc.handle_use(UseAction::ACTUATOR, 0).unwrap();
        acc.handle_use(UseAction::ACTUATOR, 120).unwrap();
        assert_eq!(acc.usage_elapsed(), 120);
        acc.handle_use(UseAction::ACTUATOR, 241).unwrap();
        assert_eq!(acc.usage_elapsed(), 120);
    }

    #[test]
    fn phased_half_of_first_phase() {
        let policy = ReleasePolicy::Phased {
            phases: vec![Phase { count: 100, duration: 3600 }, Phase { count: 100, duration: 36_000 }],
        };
        let mut acc = counter_device(200, policy, false);
        acc.handle_willing(AuthorId::new("game"));
        let out = run(&mut acc, 0, 1800);
        assert_eq!(out.len(), 50);
        assert_eq!(out[0].0, 36);
    }

    #[test]
    fn clock_regression() {
        let mut acc = counter_device(5, ReleasePolicy::per_minute(), false);
        acc.handle_use(UseAction::ACTUATOR, 10).unwrap();
        assert_eq!(
            acc.handle_use(UseAction::ACTUATOR, 9),
            Err(AccessoryError::ClockRegression { previous: 10, now: 9 })
        );
    }

    #[test]
    fn minimal_mode() {
        let id = SecureId::from_bytes([0x42; 16]);
        let mut acc =
            Accessory::provision(config(10, None, false), FactorySecret::Minimal { secure_id: id }).unwrap();
        assert_eq!(acc.read_secure_id().unwrap(), id);
        assert_eq!(acc.read_secure_id().unwrap(), id);
        acc.handle_willing(AuthorId::new("game"));
        assert!(run(&mut acc, 0, 600).is_empty());

        let counter = counter_device(5, ReleasePolicy::per_minute(), false);
        assert_eq!(
            counter.read_secure_id(),
            Err(AccessoryError::WrongMode { expected: AccessoryMode::Minimal, actual: AccessoryMode::Counter })
        );
    }

    #[test]
    fn missing_or_bad_policy() {
        let key = CouponKey::from_bytes([0; 16]);
        assert!(matches!(
            Accessory::provision(config(10, None, false), FactorySecret::Counter { key }),
            Err(AccessoryError::MissingPolicy(_))
        ));
        assert!(matches!(
            Accessory::provision(
                config(10, Some(ReleasePolicy::PerInterval { interval: 0 }), false),
                FactorySecret::Counter { key }
            ),
            Err(AccessoryError::Policy(_))
        ));
    }

    #[test]
    fn random_mode_draws_from_pregenerated_set() {
        let key = CouponKey::from_bytes([8; 16]);
        let mut acc = Accessory::provision(
            config(10, Some(ReleasePolicy::PerInterval { interval: 1 }), false),
            FactorySecret::Random { key, rng_seed: 4 },
        )
        .unwrap();
        acc.handle_willing(AuthorId::new("game"));
        let out = run(&mut acc, 0, 100);
        // Random mode keeps emitting past coupon max.
        assert_eq!(out.len(), 100);
        let all: HashSet<Coupon> =
            pregenerate_coupons(&key, CouponMax::new(10).unwrap(), Money::ZERO, &VendorId::new("v"))
                .into_iter()
                .map(|p| p.coupon)
                .collect();
        assert!(out.iter().all(|(_, c)| all.contains(c)));
    }

    #[test]
    fn state_survives_serialization() {
        let mut acc = counter_device(500, ReleasePolicy::per_minute(), false);
        acc.handle_willing(AuthorId::new("game"));
        run(&mut acc, 0, 600);
        let json = serde_json::to_string(&acc).unwrap();
        let mut restored: Accessory = serde_json::from_str(&json).unwrap();
        assert_eq!(restored.counter().value(), 10);
        let a = run(&mut acc, 601, 1200);
        let b = run(&mut restored, 601, 1200);
        assert_eq!(a, b);
    }

    #[test]
    fn link_messages() {
        let mut acc = counter_device(5, ReleasePolicy::per_minute(), false);
        let willing: LinkMessage = serde_json::from_str(r#"{"type":"WILLING","app_id":"game"}"#).unwrap();
        assert!(acc.handle_message(willing, 0).unwrap().is_empty());
        acc.handle_message(LinkMessage::Use { is_actuator_command: true }, 0).unwrap();
        let out = acc.handle_message(LinkMessage::Use { is_actuator_command: true }, 60).unwrap();
        assert_eq!(out.len(), 1);
        let line = serde_json::to_string(&out[0]).unwrap();
        assert!(line.starts_with(r#"{"type":"COUPON","coupon_hex":""#), "{line}");
        assert!(acc.handle_message(LinkMessage::ReadSecureId, 60).is_err());
    }

    proptest! {
        #[test]
        fn replay_is_deterministic(steps in prop::collection::vec((0u64..200, any::<bool>(), any::<bool>()), 1..200)) {
            let build = || {
                let mut acc = Accessory::provision(
                    config(50, Some(ReleasePolicy::PerInterval { interval: 30 }), true),
                    FactorySecret::Random { key: CouponKey::from_bytes([2; 16]), rng_seed: 11 },
                ).unwrap();
                let mut now = 0;
                let mut out = Vec::new();
                for (dt, willing, actuator) in &steps {
                    now += dt;
                    if *willing { acc.handle_willing(AuthorId::new("x")); }
                    out.extend(acc.handle_use(UseAction { is_actuator_command: *actuator }, now).unwrap());
                }
                (out, acc.emitted())
            };
            let (a, emitted) = build();
            let (b, _) = build();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.len() as u64, emitted);
        }

        #[test]
        fn counter_mode_never_exceeds_max(max in 1u64..40, dts in prop::collection::vec(0u64..150, 1..300)) {
            let mut acc = counter_device(max, ReleasePolicy::PerInterval { interval: 7 }, false);
            acc.handle_willing(AuthorId::new("x"));
            let mut now = 0;
            let mut total = 0;
            for dt in dts {
                now += dt;
                total += acc.handle_use(UseAction::ACTUATOR, now).unwrap().len() as u64;
                prop_assert!(acc.counter().value() <= max);
            }
            prop_assert!(total <= max);
            let scheduled = ReleasePolicy::PerInterval { interval: 7 }.total_due(acc.usage_elapsed());
            prop_assert!(total <= scheduled);
        }
    }
}
