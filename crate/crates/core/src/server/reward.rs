//! Reward structures: how a redeemed coupon turns into an author credit.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::ids::AuthorId;
use crate::money::Money;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardPolicy {
    /// Each coupon pays its worth minus a fee retained by the server.
    FlatPerCoupon { service_fee_ppm: u32 },
    /// Each author's n-th coupon pays `schedule[n]`, then `tail`, capped per
    /// author and drawn from one shared balance.
    DecayingPerAuthor {
        schedule: Vec<Money>,
        tail: Money,
        per_author_cap: Money,
        global_balance: Money,
    },
}

impl Default for RewardPolicy {
    fn default() -> Self {
        RewardPolicy::FlatPerCoupon { service_fee_ppm: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RewardPolicyError {
    #[error("service fee {0} ppm exceeds 1000000")]
    FeeTooLarge(u32),
    #[error("decaying schedule must be non-empty and strictly decreasing")]
    NotDecreasing,
    #[error("tail must not exceed the last schedule amount")]
    TailTooLarge,
    #[error("per-author cap must be at least the first schedule amount")]
    CapTooSmall,
}

impl RewardPolicy {
    /// $.50, $.25, $.10, then $.05 per coupon, at most $1 per author, $5 overall.
    pub fn decaying_example() -> Self {
        RewardPolicy::DecayingPerAuthor {
            schedule: vec![Money::from_cents(50), Money::from_cents(25), Money::from_cents(10)],
            tail: Money::from_cents(5),
            per_author_cap: Money::from_dollars(1),
            global_balance: Money::from_dollars(5),
        }
    }

    pub fn validate(&self) -> Result<(), RewardPolicyError> {
        match self {
            RewardPolicy::FlatPerCoupon { service_fee_ppm } => {
                if *service_fee_ppm > 1_000_000 {
                    return Err(RewardPolicyError::FeeTooLarge(*service_fee_ppm));
                }
            }
            RewardPolicy::DecayingPerAuthor { schedule, tail, per_author_cap, .. } => {
                if schedule.is_empty() || schedule.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(RewardPolicyError::NotDecreasing);
                }
                if tail > schedule.last().expect("non-empty") {
                    return Err(RewardPolicyError::TailTooLarge);
                }
                if *per_author_cap < schedule[0] {
                    return Err(RewardPolicyError::CapTooSmall);
                }
            }
        }
        Ok(())
    }
}

/// What one redemption produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Credit {
    pub credited: Money,
    pub fee: Money,
}

#[derive(Debug, Default, Clone, Copy)]
struct AuthorProgress {
    redemptions: u64,
    credited: Money,
}

/// A reward policy together with the running totals it depends on.
#[derive(Debug, Clone)]
pub struct RewardLedger {
    policy: RewardPolicy,
    per_author: HashMap<AuthorId, AuthorProgress>,
    global: Money,
}

impl RewardLedger {
    pub fn new(policy: RewardPolicy) -> Self {
        RewardLedger {
            policy,
            per_author: HashMap::new(),
            global: Money::ZERO,
        }
    }

    pub fn policy(&self) -> &RewardPolicy {
        &self.policy
    }

    /// Total credited through this policy so far.
    pub fn global_credited(&self) -> Money {
        self.global
    }

    pub fn apply(&mut self, author: &AuthorId, coupon_worth: Money) -> Credit {
        let progress = self.per_author.entry(author.clone()).or_default();
        let credit = match &self.policy {
            RewardPolicy::FlatPerCoupon { service_fee_ppm } => {
                let fee = coupon_worth.ppm(*service_fee_ppm);
                Credit { credited: coupon_worth.saturating_sub(fee), fee }
            }
            RewardPolicy::DecayingPerAuthor {
                schedule,
                tail,
                per_author_cap,
                global_balance,
            } => {
                let nominal = schedule
                    .get(progress.redemptions as usize)
                    .copied()
                    .unwrap_or(*tail);
                let credited = nominal
                    .min(per_author_cap.saturating_sub(progress.credited))
                    .min(global_balance.saturating_sub(self.global));
                Credit { credited, fee: Money::ZERO }
            }
        };
        progress.redemptions += 1;
        progress.credited += credit.credited;
        self.global += credit.credited;
        credit
    }
}
