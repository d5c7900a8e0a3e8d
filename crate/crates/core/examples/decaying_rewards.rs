//! The decaying per-author reward schedule: each author's first coupons pay
//! the most, every author is capped, and a global balance bounds the total.
//!
//!     cargo run --example decaying_rewards

use appcessory::accessory::{AccessoryMode, ReleasePolicy};
use appcessory::coupon::CouponMax;
use appcessory::factory::{provision_batch, registration, UnitSpec};
use appcessory::ids::{AccessoryType, AuthorId, VendorId};
use appcessory::money::Money;
use appcessory::server::{CashingServer, ManagerCredential, PseudonymKey, RedeemOutcome, RedeemRequest, RewardPolicy, ServerConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let credential = ManagerCredential::from_bytes([1; 16]);
    let policy = RewardPolicy::decaying_example();
    println!("policy: {}", serde_json::to_string(&policy).unwrap());
    let server = CashingServer::new(ServerConfig { credential, pseudonym_key: PseudonymKey::from_bytes([2; 16]), reward_policy: policy }).unwrap();

    let spec = UnitSpec {
        vendor_id: VendorId::new("acme"),
        accessory_type: AccessoryType::new("gamepad"),
        mode: AccessoryMode::Counter,
        coupon_max: CouponMax::new(64).unwrap(),
        worth: Money::from_cents(1),
        retail_price: Money::from_dollars(20),
        policy: ReleasePolicy::per_minute(),
        actuator_gated: false,
        allow_overvalued: false,
    };
    let records = provision_batch("pad", 1, &spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let (entries, grants) = registration(&records);
    let coupons: Vec<_> = entries.iter().map(|e| e.coupon).collect();
    server.register_batch(entries, grants).unwrap();

    for (i, coupon) in coupons.into_iter().enumerate() {
        let author = AuthorId::new(format!("author-{}", i / 8));
        let req = RedeemRequest { coupon, author: author.clone(), credential, user: "u".into(), now: i as u64 };
        if let RedeemOutcome::Accepted { credited } = server.redeem(&req) {
            println!("{author}\tredemption {}\tcredited {credited}", i % 8 + 1);
        }
    }
    let acct = server.accounting();
    println!("total credited {} of balance, {} registered worth", acct.credited, acct.registered);
}
