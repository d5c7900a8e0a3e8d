//! A front-loaded release schedule: 100 coupons over the first hour, then
//! 100 more over the next ten.
//!
//!     cargo run --example phased_release

use appcessory::accessory::{Accessory, AccessoryConfig, FactorySecret, Phase, ReleasePolicy, UseAction};
use appcessory::coupon::{CouponKey, CouponMax};
use appcessory::ids::{AccessoryId, AccessoryType, AuthorId, VendorId};

fn main() {
    let policy = ReleasePolicy::Phased {
        phases: vec![Phase { count: 100, duration: 3_600 }, Phase { count: 100, duration: 36_000 }],
    };
    let config = AccessoryConfig {
        accessory_id: AccessoryId::new("heli-1"),
        vendor_id: VendorId::new("acme"),
        accessory_type: AccessoryType::new("helicopter"),
        coupon_max: CouponMax::new(200).unwrap(),
        policy: Some(policy),
        actuator_gated: false,
    };
    let mut heli = Accessory::provision(config, FactorySecret::Counter { key: CouponKey::from_bytes([9; 16]) }).unwrap();
    heli.handle_willing(AuthorId::new("flight-sim"));

    let mut checkpoints = [600, 3_600, 7_200, 18_000, 39_600].into_iter().peekable();
    for t in 0..=39_600 {
        heli.handle_use(UseAction::ACTUATOR, t).unwrap();
        if checkpoints.peek() == Some(&t) {
            checkpoints.next();
            println!("after {:>5} s of use: {:>3} coupons", t, heli.emitted());
        }
    }
}
