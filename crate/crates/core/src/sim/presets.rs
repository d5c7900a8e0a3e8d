//! Ready-made scenarios.

use crate::accessory::{AccessoryMode, ReleasePolicy};
use crate::money::Money;
use crate::server::RewardPolicy;

use super::{AccessorySpec, AppBehavior, AppSpec, Scenario, UserSpec};

/// Sessions far enough apart that only the first one happens.
const ONCE: u64 = 1 << 40;

fn accessory(id: &str, accessory_type: &str, mode: AccessoryMode, coupon_max: u64, worth: Money) -> AccessorySpec {
    AccessorySpec {
        id: id.into(),
        vendor: "acme".into(),
        accessory_type: accessory_type.into(),
        mode,
        coupon_max,
        worth,
        retail_price: Money::from_dollars(20),
        policy: ReleasePolicy::per_minute(),
        actuator_gated: false,
    }
}

fn session(author: &str, start: u64, session_length: u64) -> AppSpec {
    AppSpec {
        author: author.into(),
        behavior: AppBehavior::PlaysSessions { start, session_length, gap: ONCE, willing: true, step: 10 },
    }
}

fn user(id: &str, accessories: &[&str], apps: &[&str]) -> UserSpec {
    UserSpec {
        id: id.into(),
        accessories: accessories.iter().map(|&a| a.into()).collect(),
        apps: apps.iter().map(|&a| a.into()).collect(),
        abuse_report_threshold: None,
        review_interval: 600,
    }
}

/// One $0.01-per-minute accessory with 500 coupons, played for 500 minutes
/// by one willing game.
pub fn nominal(seed: u64) -> Scenario {
    Scenario {
        seed,
        duration: 30_060,
        accessories: vec![accessory("lamp-1", "lamp", AccessoryMode::Counter, 500, Money::from_cents(1))],
        apps: vec![session("game", 0, 30_000)],
        users: vec![user("alice", &["lamp-1"], &["game"])],
        reward_policy: RewardPolicy::default(),
        holding_period: 86_400,
        settle_interval: None,
        allow_overvalued: false,
    }
}

/// An actuator-gated lamp worth $0.10 per minute of use. A game earns three
/// coupons, a fitness app one, then a background calendar app drives the
/// lamp for four minutes. The user reviews the report at t = 3000 and
/// reports anything in the background that earned money.
pub fn malicious_calendar(seed: u64, sends_actuator_commands: bool) -> Scenario {
    let mut lamp = accessory("lamp-1", "lamp", AccessoryMode::Counter, 100, Money::from_cents(10));
    lamp.actuator_gated = true;
    let mut alice = user("alice", &["lamp-1"], &["game", "fitness", "calendar"]);
    alice.abuse_report_threshold = Some(Money::ZERO);
    alice.review_interval = 3_000;
    Scenario {
        seed,
        duration: 4_000,
        accessories: vec![lamp],
        apps: vec![
            session("game", 0, 180),
            session("fitness", 1_000, 60),
            AppSpec {
                author: "calendar".into(),
                behavior: AppBehavior::MaliciousBackground {
                    start: 2_000,
                    stop: Some(2_240),
                    poll_interval: 10,
                    sends_actuator_commands,
                },
            },
        ],
        users: vec![alice],
        reward_policy: RewardPolicy::default(),
        holding_period: 86_400,
        settle_interval: Some(1_000),
        allow_overvalued: false,
    }
}

/// Two minimal accessories of the same type on one phone, driven by the
/// manager for five minutes.
pub fn minimal_pair(seed: u64) -> Scenario {
    Scenario {
        seed,
        duration: 450,
        accessories: vec![
            accessory("tag-1", "tag", AccessoryMode::Minimal, 10, Money::from_cents(1)),
            accessory("tag-2", "tag", AccessoryMode::Minimal, 10, Money::from_cents(1)),
        ],
        apps: vec![session("game", 0, 300)],
        users: vec![user("alice", &["tag-1", "tag-2"], &["game"])],
        reward_policy: RewardPolicy::default(),
        holding_period: 0,
        settle_interval: Some(100),
        allow_overvalued: false,
    }
}

/// Several authors share accessories under the decaying reward policy,
/// with frequent settlement.
pub fn busy_market(seed: u64) -> Scenario {
    let authors = ["alpha", "bravo", "charlie", "delta"];
    let mut apps = Vec::new();
    for (i, a) in authors.iter().enumerate() {
        apps.push(AppSpec {
            author: (*a).into(),
            behavior: AppBehavior::PlaysSessions {
                start: 30 * i as u64,
                session_length: 600 + 120 * i as u64,
                gap: 900,
                willing: true,
                step: 20,
            },
        });
    }
    let mut users = Vec::new();
    let mut accessories = Vec::new();
    for u in 0..3 {
        let id = format!("dev-{u}");
        accessories.push(accessory(&id, if u % 2 == 0 { "lamp" } else { "fan" }, AccessoryMode::Counter, 200, Money::from_cents(5)));
        let installed: Vec<&str> = authors.iter().copied().skip(u % 2).collect();
        users.push(user(&format!("user-{u}"), &[&id], &installed));
    }
    accessories[1].mode = AccessoryMode::Random;
    Scenario {
        seed,
        duration: 20_000,
        accessories,
        apps,
        users,
        reward_policy: RewardPolicy::decaying_example(),
        holding_period: 1_800,
        settle_interval: Some(900),
        allow_overvalued: false,
    }
}
