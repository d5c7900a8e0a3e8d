//! A production batch: per-unit keys, coupon lists, secure ids for minimal
//! units, and the retail-price cap on total coupon worth.
//!
//!     cargo run --example factory_provisioning

use appcessory::accessory::{AccessoryMode, ReleasePolicy};
use appcessory::coupon::CouponMax;
use appcessory::factory::{provision_batch, registration, UnitSpec};
use appcessory::ids::{AccessoryType, VendorId};
use appcessory::money::Money;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut spec = UnitSpec {
        vendor_id: VendorId::new("acme"),
        accessory_type: AccessoryType::new("gamepad"),
        mode: AccessoryMode::Counter,
        coupon_max: CouponMax::new(2_000).unwrap(),
        worth: Money::from_cents(1),
        retail_price: Money::from_dollars(30),
        policy: ReleasePolicy::per_minute(),
        actuator_gated: false,
        allow_overvalued: false,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for mode in [AccessoryMode::Counter, AccessoryMode::Random, AccessoryMode::Minimal] {
        spec.mode = mode;
        let records = provision_batch("pad", 3, &spec, &mut rng).unwrap();
        let (entries, grants) = registration(&records);
        println!("{mode:?}: {} ledger entries, {} grant records", entries.len(), grants.len());
        for r in &records {
            println!("  {} key {} worth {}", r.accessory_id, r.coupon_key.to_hex(), r.registered_worth());
        }
    }

    spec.worth = Money::from_cents(2);
    match provision_batch("pad", 1, &spec, &mut rng) {
        Ok(_) => println!("unexpected: overvalued unit accepted"),
        Err(e) => println!("rejected: {e}"),
    }
    spec.allow_overvalued = true;
    println!("with override: {} unit", provision_batch("pad", 1, &spec, &mut rng).unwrap().len());
}
