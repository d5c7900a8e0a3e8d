//! Scenario files: the complete, self-contained input of one simulation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::accessory::{AccessoryMode, ReleasePolicy};
use crate::coupon::CouponMax;
use crate::factory::{ProvisionError, UnitSpec};
use crate::ids::{AccessoryId, AccessoryType, AuthorId, UserId, VendorId};
use crate::money::Money;
use crate::server::RewardPolicy;

use super::SimError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    /// Events are scheduled strictly before this simulated second.
    pub duration: u64,
    #[serde(default)]
    pub accessories: Vec<AccessorySpec>,
    #[serde(default)]
    pub apps: Vec<AppSpec>,
    #[serde(default)]
    pub users: Vec<UserSpec>,
    #[serde(default)]
    pub reward_policy: RewardPolicy,
    #[serde(default)]
    pub holding_period: u64,
    /// Seconds between settlement runs; no settlement when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settle_interval: Option<u64>,
    /// Permits units whose coupons are worth more than their retail price.
    #[serde(default)]
    pub allow_overvalued: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccessorySpec {
    pub id: AccessoryId,
    pub vendor: VendorId,
    pub accessory_type: AccessoryType,
    pub mode: AccessoryMode,
    pub coupon_max: u64,
    pub worth: Money,
    pub retail_price: Money,
    pub policy: ReleasePolicy,
    #[serde(default)]
    pub actuator_gated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppSpec {
    pub author: AuthorId,
    pub behavior: AppBehavior,
}

fn default_step() -> u64 {
    10
}

fn default_review_interval() -> u64 {
    600
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AppBehavior {
    /// A foreground app the user plays with: sessions of `session_length`
    /// seconds separated by `gap`, touching the accessory every `step`.
    PlaysSessions {
        #[serde(default)]
        start: u64,
        session_length: u64,
        gap: u64,
        willing: bool,
        #[serde(default = "default_step")]
        step: u64,
    },
    /// Runs unseen, claims willingness and drives the accessory on a timer.
    MaliciousBackground {
        #[serde(default)]
        start: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stop: Option<u64>,
        poll_interval: u64,
        sends_actuator_commands: bool,
    },
    /// Hands the manager uniformly random coupons.
    Forger {
        #[serde(default)]
        start: u64,
        submissions: u64,
    },
}

impl AppBehavior {
    pub fn is_foreground(&self) -> bool {
        matches!(self, AppBehavior::PlaysSessions { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpec {
    pub id: UserId,
    #[serde(default)]
    pub accessories: Vec<AccessoryId>,
    #[serde(default)]
    pub apps: Vec<AuthorId>,
    /// Report a background author whose report row exceeds this; never
    /// report when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abuse_report_threshold: Option<Money>,
    #[serde(default = "default_review_interval")]
    pub review_interval: u64,
}

impl AccessorySpec {
    pub fn unit_spec(&self, allow_overvalued: bool) -> Result<UnitSpec, String> {
        Ok(UnitSpec {
            vendor_id: self.vendor.clone(),
            accessory_type: self.accessory_type.clone(),
            mode: self.mode,
            coupon_max: CouponMax::new(self.coupon_max).map_err(|e| e.to_string())?,
            worth: self.worth,
            retail_price: self.retail_price,
            policy: self.policy.clone(),
            actuator_gated: self.actuator_gated,
            allow_overvalued,
        })
    }
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> SimError {
    SimError::Invalid { field: field.into(), message: message.into() }
}

fn check_id(field: String, id: &str) -> Result<(), SimError> {
    if id.is_empty() || id.chars().any(|c| c.is_whitespace() || c.is_control()) {
        return Err(invalid(field, format!("{id:?} must be non-empty without whitespace")));
    }
    Ok(())
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    /// Canonical serialization: field order is fixed by the types, so two
    /// files that differ only in key order canonicalize identically.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.reward_policy
            .validate()
            .map_err(|e| invalid("reward_policy", e.to_string()))?;
        if self.settle_interval == Some(0) {
            return Err(invalid("settle_interval", "must be positive"));
        }

        let mut accessories = BTreeSet::new();
        for (i, a) in self.accessories.iter().enumerate() {
            let f = |name: &str| format!("accessories[{i}].{name}");
            check_id(f("id"), a.id.as_str())?;
            check_id(f("vendor"), a.vendor.as_str())?;
            check_id(f("accessory_type"), a.accessory_type.as_str())?;
            if !accessories.insert(&a.id) {
                return Err(invalid(f("id"), format!("duplicate accessory {}", a.id)));
            }
            let unit = a.unit_spec(self.allow_overvalued).map_err(|m| invalid(f("coupon_max"), m))?;
            match unit.validate() {
                Ok(_) => {}
                Err(ProvisionError::RetailCap { .. }) => {
                    return Err(invalid(
                        f("retail_price"),
                        format!(
                            "{} coupons x {} exceeds retail price {}; set allow_overvalued to permit",
                            a.coupon_max, a.worth, a.retail_price
                        ),
                    ))
                }
                Err(ProvisionError::ZeroWorth) => return Err(invalid(f("worth"), "must be positive")),
                Err(ProvisionError::Policy(e)) => return Err(invalid(f("policy"), e.to_string())),
            }
        }

        let mut apps = BTreeMap::new();
        for (i, app) in self.apps.iter().enumerate() {
            let f = |name: &str| format!("apps[{i}].{name}");
            check_id(f("author"), app.author.as_str())?;
            if apps.insert(&app.author, &app.behavior).is_some() {
                return Err(invalid(f("author"), format!("duplicate app {}", app.author)));
            }
            match &app.behavior {
                AppBehavior::PlaysSessions { session_length, step, .. } => {
                    if *session_length == 0 {
                        return Err(invalid(f("behavior.session_length"), "must be positive"));
                    }
                    if *step == 0 {
                        return Err(invalid(f("behavior.step"), "must be positive"));
                    }
                }
                AppBehavior::MaliciousBackground { start, stop, poll_interval, .. } => {
                    if *poll_interval == 0 {
                        return Err(invalid(f("behavior.poll_interval"), "must be positive"));
                    }
                    if stop.is_some_and(|s| s < *start) {
                        return Err(invalid(f("behavior.stop"), "must not precede start"));
                    }
                }
                AppBehavior::Forger { .. } => {}
            }
        }

        let mut users = BTreeSet::new();
        let mut owners: BTreeMap<&AccessoryId, &UserId> = BTreeMap::new();
        for (i, u) in self.users.iter().enumerate() {
            let f = |name: &str| format!("users[{i}].{name}");
            check_id(f("id"), u.id.as_str())?;
            if !users.insert(&u.id) {
                return Err(invalid(f("id"), format!("duplicate user {}", u.id)));
            }
            if u.review_interval == 0 {
                return Err(invalid(f("review_interval"), "must be positive"));
            }
            for (j, acc) in u.accessories.iter().enumerate() {
                if !accessories.contains(acc) {
                    return Err(invalid(format!("users[{i}].accessories[{j}]"), format!("unknown accessory {acc}")));
                }
                if let Some(other) = owners.insert(acc, &u.id) {
                    return Err(invalid(format!("users[{i}].accessories[{j}]"), format!("{acc} already owned by {other}")));
                }
            }
            let mut installed = BTreeSet::new();
            for (j, author) in u.apps.iter().enumerate() {
                if !apps.contains_key(author) {
                    return Err(invalid(format!("users[{i}].apps[{j}]"), format!("unknown app {author}")));
                }
                if !installed.insert(author) {
                    return Err(invalid(format!("users[{i}].apps[{j}]"), format!("{author} installed twice")));
                }
            }
        }
        Ok(())
    }
}
