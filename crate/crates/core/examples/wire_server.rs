//! The cashing server on a TCP socket, with a manager delivering coupons
//! from a lamp over the line-delimited JSON protocol.
//!
//!     cargo run --example wire_server

use std::net::TcpListener;
use std::sync::Arc;

use appcessory::accessory::{AccessoryMode, ReleasePolicy, UseAction};
use appcessory::coupon::CouponMax;
use appcessory::factory::{provision_unit, UnitSpec};
use appcessory::ids::{AccessoryType, AuthorId, ManagerId, UserId, VendorId};
use appcessory::manager::Manager;
use appcessory::money::Money;
use appcessory::server::wire::{serve, Request, Response, WireClient};
use appcessory::server::{CashingServer, ManagerCredential, PseudonymKey, RewardPolicy, ServerConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let credential = ManagerCredential::from_bytes([6; 16]);
    let config = ServerConfig { credential, pseudonym_key: PseudonymKey::from_bytes([7; 16]), reward_policy: RewardPolicy::default() };
    let server = Arc::new(CashingServer::new(config).unwrap());
    let handle = serve(TcpListener::bind("127.0.0.1:0").unwrap(), Arc::clone(&server), 0).unwrap();
    println!("listening on {}", handle.local_addr());

    let spec = UnitSpec {
        vendor_id: VendorId::new("acme"),
        accessory_type: AccessoryType::new("lamp"),
        mode: AccessoryMode::Counter,
        coupon_max: CouponMax::new(100).unwrap(),
        worth: Money::from_cents(1),
        retail_price: Money::from_dollars(10),
        policy: ReleasePolicy::per_minute(),
        actuator_gated: true,
        allow_overvalued: false,
    };
    let record = provision_unit("lamp-1".into(), &spec, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let client = WireClient::connect(handle.local_addr()).unwrap();
    let register = Request::Register { credential, entries: record.batch_entries(), grants: Vec::new() };
    println!("-> {}", serde_json::to_string(&register).unwrap().chars().take(100).collect::<String>() + "...");
    println!("<- {}", serde_json::to_string(&client.call(&register).unwrap()).unwrap());

    let mut lamp = record.build().unwrap();
    let mut manager = Manager::new(ManagerId::new("phone"), UserId::new("alice"), credential);
    let app = AuthorId::new("mood-lighting");
    lamp.handle_willing(app.clone());
    for t in (0..=600).step_by(30) {
        for coupon in lamp.handle_use(UseAction::ACTUATOR, t).unwrap() {
            let outcome = manager.deliver(coupon, lamp.id(), &app, &client, t).unwrap();
            println!("t={t:>3} {} -> {outcome:?}", coupon.to_hex());
        }
    }

    let settle = client.call(&Request::Settle { credential, now: Some(700), holding_period: Some(0) }).unwrap();
    println!("<- {}", serde_json::to_string(&settle).unwrap());
    if let Response::AuthorReport(r) = client.call(&Request::ReportAuthor { author: app }).unwrap() {
        println!("author report: pending {} paid {}", r.pending, r.paid);
    }
    handle.shutdown();
}
