//! A minimal accessory stores only a secure id. The first manager to ask is
//! granted its coupon key and drives coupon release itself; a clone of the
//! id gets nothing.
//!
//!     cargo run --example minimal_accessory

use appcessory::accessory::{AccessoryMode, ReleasePolicy, UseAction};
use appcessory::coupon::CouponMax;
use appcessory::factory::{provision_unit, registration, UnitSpec};
use appcessory::ids::{AccessoryType, AuthorId, ManagerId, UserId, VendorId};
use appcessory::manager::{DeviceProfile, Manager};
use appcessory::money::Money;
use appcessory::server::{CashingServer, ManagerCredential, PseudonymKey, RewardPolicy, ServerConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let credential = ManagerCredential::from_bytes([4; 16]);
    let server = CashingServer::new(ServerConfig { credential, pseudonym_key: PseudonymKey::from_bytes([5; 16]), reward_policy: RewardPolicy::default() }).unwrap();
    let spec = UnitSpec {
        vendor_id: VendorId::new("acme"),
        accessory_type: AccessoryType::new("tag"),
        mode: AccessoryMode::Minimal,
        coupon_max: CouponMax::new(10).unwrap(),
        worth: Money::from_cents(1),
        retail_price: Money::from_dollars(2),
        policy: ReleasePolicy::per_minute(),
        actuator_gated: false,
        allow_overvalued: false,
    };
    let record = provision_unit("tag-1".into(), &spec, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let (entries, grants) = registration(std::slice::from_ref(&record));
    server.register_batch(entries, grants).unwrap();

    let secure_id = record.build().unwrap().read_secure_id().unwrap();
    println!("secure id {}", secure_id.to_hex());
    let profile = DeviceProfile {
        accessory_id: record.accessory_id.clone(),
        vendor_id: record.vendor_id.clone(),
        accessory_type: record.accessory_type.clone(),
        coupon_max: record.coupon_max,
        policy: record.policy.clone(),
        actuator_gated: false,
    };
    let uses = |from: u64| (0..=30u64).map(move |i| (from + i * 10, UseAction::ACTUATOR));
    let game = AuthorId::new("game");

    let mut owner = Manager::new(ManagerId::new("phone"), UserId::new("alice"), credential);
    let first = owner.drive_minimal(&secure_id, &profile, &game, uses(0), &server).unwrap();
    println!("owner: {:?}, {} coupons, external counter {:?}", first.status, first.coupons.len(), owner.external_counter(&secure_id).map(|c| c.value()));

    let mut clone = Manager::new(ManagerId::new("clone"), UserId::new("mallory"), credential);
    let second = clone.drive_minimal(&secure_id, &profile, &game, uses(1_000), &server).unwrap();
    println!("clone: {:?}, {} coupons", second.status, second.coupons.len());
    println!("credited {}", server.accounting().credited);
}
