//! Random-mode accessories draw each coupon uniformly from their
//! pre-generated list, so repeats are expected. Compares observed distinct
//! coupons with m * (1 - (1 - 1/m)^n).
//!
//!     cargo run --example random_coupons [-- USES]

use appcessory::accessory::{AccessoryMode, ReleasePolicy, UseAction};
use appcessory::coupon::CouponMax;
use appcessory::factory::{provision_unit, UnitSpec};
use appcessory::ids::{AccessoryType, AuthorId, VendorId};
use appcessory::money::Money;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

fn main() {
    let n: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5_000);
    let m = 1_000u64;
    let spec = UnitSpec {
        vendor_id: VendorId::new("acme"),
        accessory_type: AccessoryType::new("dice"),
        mode: AccessoryMode::Random,
        coupon_max: CouponMax::new(m).unwrap(),
        worth: Money::from_udollars(100),
        retail_price: Money::from_dollars(1),
        policy: ReleasePolicy::PerInterval { interval: 1 },
        actuator_gated: false,
        allow_overvalued: false,
    };
    let expected = m as f64 * (1.0 - (1.0 - 1.0 / m as f64).powf(n as f64));
    for seed in 0..5 {
        let mut unit = provision_unit("dice".into(), &spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap().build().unwrap();
        unit.handle_willing(AuthorId::new("board-game"));
        let mut distinct = HashSet::new();
        for t in 0..=n {
            distinct.extend(unit.handle_use(UseAction::ACTUATOR, t).unwrap());
        }
        println!("seed {seed}: {} emitted, {} distinct (expected {expected:.1})", unit.emitted(), distinct.len());
    }
}
