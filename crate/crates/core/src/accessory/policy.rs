use serde::{Deserialize, Serialize};

use crate::coupon::CouponMax;

/// One stage of a phased release: `count` coupons spread evenly over
/// `duration` seconds of use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase {
    pub count: u64,
    pub duration: u64,
}

/// How coupons become due as an accessory accumulates qualifying use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReleasePolicy {
    /// One coupon per `interval` seconds of use.
    PerInterval { interval: u64 },
    /// Consecutive phases; within a phase emissions are uniformly spaced.
    Phased { phases: Vec<Phase> },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("release interval must be positive")]
    ZeroInterval,
    #[error("phase {index} must have count >= 1 and duration > 0")]
    EmptyPhase { index: usize },
    #[error("phased release schedules {total} coupons but the device only holds {max}")]
    ExceedsMax { total: u64, max: u64 },
}

impl ReleasePolicy {
    pub fn per_minute() -> Self {
        ReleasePolicy::PerInterval { interval: 60 }
    }

    pub fn validate(&self, coupon_max: CouponMax) -> Result<(), PolicyError> {
        match self {
            ReleasePolicy::PerInterval { interval } => {
                if *interval == 0 {
                    return Err(PolicyError::ZeroInterval);
                }
            }
            ReleasePolicy::Phased { phases } => {
                let mut total = 0u64;
                for (index, p) in phases.iter().enumerate() {
                    if p.count == 0 || p.duration == 0 {
                        return Err(PolicyError::EmptyPhase { index });
                    }
                    total = total.saturating_add(p.count);
                }
                if total > coupon_max.value() {
                    return Err(PolicyError::ExceedsMax {
                        total,
                        max: coupon_max.value(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Total number of coupons that should have been emitted once
    /// `usage_elapsed` seconds of qualifying use have accumulated.
    pub fn total_due(&self, usage_elapsed: u64) -> u64 {
        match self {
            ReleasePolicy::PerInterval { interval } => usage_elapsed / interval,
            ReleasePolicy::Phased { phases } => {
                let mut due = 0u64;
                let mut start = 0u64;
                for p in phases {
                    let end = start.saturating_add(p.duration);
                    if usage_elapsed >= end {
                        due += p.count;
                        start = end;
                        continue;
                    }
                    let into = usage_elapsed - start;
                    due += (into as u128 * p.count as u128 / p.duration as u128) as u64;
                    break;
                }
                due
            }
        }
    }
}

/// Coupons newly due: the schedule total at `usage_elapsed` minus what has
/// already gone out, never negative.
pub fn policy_due(policy: &ReleasePolicy, usage_elapsed: u64, emitted_count: u64) -> u64 {
    policy.total_due(usage_elapsed).saturating_sub(emitted_count)
}
