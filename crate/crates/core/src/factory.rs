//! Factory provisioning: per-unit secrets, the coupon batch sent to the
//! cashing server, and the retail-price cap.

use std::collections::HashSet;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::accessory::{
    Accessory, AccessoryConfig, AccessoryError, AccessoryMode, FactorySecret, PolicyError,
    ReleasePolicy,
};
use crate::coupon::{pregenerate_coupons, CouponKey, CouponMax, SecureId};
use crate::ids::{AccessoryId, AccessoryType, VendorId};
use crate::money::Money;
use crate::server::{BatchEntry, GrantRecord};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProvisionError {
    #[error("{coupons} coupons x {worth} exceeds retail price {retail_price}")]
    RetailCap { coupons: u64, worth: Money, retail_price: Money },
    #[error("coupon worth must be positive")]
    ZeroWorth,
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Everything needed to build units of one product line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitSpec {
    pub vendor_id: VendorId,
    pub accessory_type: AccessoryType,
    pub mode: AccessoryMode,
    pub coupon_max: CouponMax,
    pub worth: Money,
    pub retail_price: Money,
    pub policy: ReleasePolicy,
    #[serde(default)]
    pub actuator_gated: bool,
    #[serde(default)]
    pub allow_overvalued: bool,
}

impl UnitSpec {
    /// Total worth of one unit's coupons, checked against the retail price.
    pub fn validate(&self) -> Result<Money, ProvisionError> {
        if self.worth.is_zero() {
            return Err(ProvisionError::ZeroWorth);
        }
        self.policy.validate(self.coupon_max)?;
        let total = self.worth.checked_mul(self.coupon_max.value());
        match total {
            Some(t) if t <= self.retail_price || self.allow_overvalued => Ok(t),
            _ => Err(ProvisionError::RetailCap {
                coupons: self.coupon_max.value(),
                worth: self.worth,
                retail_price: self.retail_price,
            }),
        }
    }
}

/// One line of the provisioning file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvisioningRecord {
    pub accessory_id: AccessoryId,
    pub vendor_id: VendorId,
    pub accessory_type: AccessoryType,
    pub mode: AccessoryMode,
    pub coupon_key: CouponKey,
    pub coupon_max: CouponMax,
    pub worth: Money,
    pub policy: ReleasePolicy,
    pub actuator_gated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secure_id: Option<SecureId>,
    /// Seed of the on-device generator; random mode only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
    pub retail_price: Money,
}

impl ProvisioningRecord {
    pub fn config(&self) -> AccessoryConfig {
        AccessoryConfig {
            accessory_id: self.accessory_id.clone(),
            vendor_id: self.vendor_id.clone(),
            accessory_type: self.accessory_type.clone(),
            coupon_max: self.coupon_max,
            policy: Some(self.policy.clone()),
            actuator_gated: self.actuator_gated,
        }
    }

    /// The physical unit this record describes, fresh from the line.
    pub fn build(&self) -> Result<Accessory, AccessoryError> {
        let secret = match self.mode {
            AccessoryMode::Counter => FactorySecret::Counter { key: self.coupon_key },
            AccessoryMode::Random => FactorySecret::Random {
                key: self.coupon_key,
                rng_seed: self.rng_seed.unwrap_or_default(),
            },
            AccessoryMode::Minimal => FactorySecret::Minimal {
                secure_id: self.secure_id.expect("minimal records carry a secure id"),
            },
        };
        Accessory::provision(self.config(), secret)
    }

    /// Every coupon the unit can ever emit.
    pub fn batch_entries(&self) -> Vec<BatchEntry> {
        pregenerate_coupons(&self.coupon_key, self.coupon_max, self.worth, &self.vendor_id)
            .into_iter()
            .map(|p| BatchEntry {
                coupon: p.coupon,
                worth: p.worth,
                vendor_id: p.vendor_id,
                accessory_id: self.accessory_id.clone(),
                accessory_type: self.accessory_type.clone(),
            })
            .collect()
    }

    pub fn grant_record(&self) -> Option<GrantRecord> {
        self.secure_id.map(|id| GrantRecord::new(id, self.coupon_key))
    }

    pub fn registered_worth(&self) -> Money {
        self.worth.checked_mul(self.coupon_max.value()).expect("validated at provisioning")
    }
}

/// Draws secrets for one unit. Keys and ids already in `seen` are redrawn.
fn draw_unit<R: RngCore>(
    accessory_id: AccessoryId,
    spec: &UnitSpec,
    rng: &mut R,
    seen_keys: &mut HashSet<CouponKey>,
    seen_ids: &mut HashSet<SecureId>,
) -> ProvisioningRecord {
    let coupon_key = loop {
        let k = CouponKey::random(rng);
        if seen_keys.insert(k) {
            break k;
        }
    };
    let secure_id = (spec.mode == AccessoryMode::Minimal).then(|| loop {
        let id = SecureId::random(rng);
        if seen_ids.insert(id) {
            break id;
        }
    });
    let rng_seed = (spec.mode == AccessoryMode::Random).then(|| rng.next_u64());
    ProvisioningRecord {
        accessory_id,
        vendor_id: spec.vendor_id.clone(),
        accessory_type: spec.accessory_type.clone(),
        mode: spec.mode,
        coupon_key,
        coupon_max: spec.coupon_max,
        worth: spec.worth,
        policy: spec.policy.clone(),
        actuator_gated: spec.actuator_gated,
        secure_id,
        rng_seed,
        retail_price: spec.retail_price,
    }
}

pub fn provision_unit<R: RngCore>(accessory_id: AccessoryId, spec: &UnitSpec, rng: &mut R) -> Result<ProvisioningRecord, ProvisionError> {
    spec.validate()?;
    Ok(draw_unit(accessory_id, spec, rng, &mut HashSet::new(), &mut HashSet::new()))
}

/// Provisions `units` units named `{prefix}-{index:05}` with pairwise
/// distinct coupon keys and secure ids.
pub fn provision_batch<R: RngCore>(prefix: &str, units: u64, spec: &UnitSpec, rng: &mut R) -> Result<Vec<ProvisioningRecord>, ProvisionError> {
    spec.validate()?;
    let mut keys = HashSet::new();
    let mut ids = HashSet::new();
    Ok((0..units)
        .map(|i| draw_unit(AccessoryId::new(format!("{prefix}-{i:05}")), spec, rng, &mut keys, &mut ids))
        .collect())
}

/// Everything the cashing server must learn about `records`.
pub fn registration(records: &[ProvisioningRecord]) -> (Vec<BatchEntry>, Vec<GrantRecord>) {
    let entries = records.iter().flat_map(ProvisioningRecord::batch_entries).collect();
    let grants = records.iter().filter_map(ProvisioningRecord::grant_record).collect();
    (entries, grants)
}
