use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;

use appcessory::accessory::{AccessoryMode, ReleasePolicy, UseAction};
use appcessory::coupon::{Coupon, CouponMax};
use appcessory::factory::{provision_batch, registration, UnitSpec};
use appcessory::ids::{AccessoryType, AuthorId, ManagerId, UserId, VendorId};
use appcessory::manager::{DeviceProfile, DriverStatus, Manager};
use appcessory::money::Money;
use appcessory::server::wire::{serve, Request, Response, ServerHandle, WireClient};
use appcessory::server::{CashingServer, ManagerCredential, PseudonymKey, RedeemOutcome, RejectReason, RewardPolicy, ServerConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const CRED: ManagerCredential = ManagerCredential::from_bytes([7; 16]);

fn spec(mode: AccessoryMode) -> UnitSpec {
    UnitSpec {
        vendor_id: VendorId::new("acme"),
        accessory_type: AccessoryType::new("lamp"),
        mode,
        coupon_max: CouponMax::new(10).unwrap(),
        worth: Money::from_cents(1),
        retail_price: Money::from_dollars(5),
        policy: ReleasePolicy::per_minute(),
        actuator_gated: false,
        allow_overvalued: false,
    }
}

fn start() -> (Arc<CashingServer>, ServerHandle) {
    let config = ServerConfig { credential: CRED, pseudonym_key: PseudonymKey::from_bytes([1; 16]), reward_policy: RewardPolicy::default() };
    let server = Arc::new(CashingServer::new(config).unwrap());
    let handle = serve(TcpListener::bind("127.0.0.1:0").unwrap(), Arc::clone(&server), 0).unwrap();
    (server, handle)
}

#[test]
fn register_and_redeem_over_tcp() {
    let (server, handle) = start();
    let client = WireClient::connect(handle.local_addr()).unwrap();
    let records = provision_batch("lamp", 2, &spec(AccessoryMode::Counter), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    for r in &records {
        let resp = client.call(&Request::Register { credential: CRED, entries: r.batch_entries(), grants: Vec::new() }).unwrap();
        assert_eq!(resp, Response::Registered { count: 10 });
    }

    let mut unit = records[0].build().unwrap();
    unit.handle_willing(AuthorId::new("game"));
    let mut manager = Manager::new(ManagerId::new("m"), UserId::new("alice"), CRED);
    for t in (0..=300).step_by(10) {
        for c in unit.handle_use(UseAction::ACTUATOR, t).unwrap() {
            let outcome = manager.deliver(c, unit.id(), &AuthorId::new("game"), &client, t).unwrap();
            assert!(outcome.is_accepted());
        }
    }
    assert_eq!(manager.author_total(&AuthorId::new("game")), Money::from_cents(5));
    assert_eq!(server.account(&AuthorId::new("game")).unwrap().pending, Money::from_cents(5));

    let settled = client.call(&Request::Settle { credential: CRED, now: Some(1_000), holding_period: Some(0) }).unwrap();
    match settled {
        Response::Settled { moved } => assert_eq!(moved.len(), 1),
        other => panic!("{other:?}"),
    }
    handle.shutdown();
}

#[test]
fn credential_gates_mutations() {
    let (server, handle) = start();
    let client = WireClient::connect(handle.local_addr()).unwrap();
    let wrong = ManagerCredential::from_bytes([8; 16]);
    let records = provision_batch("lamp", 1, &spec(AccessoryMode::Counter), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let bad = Response::Rejected { reason: RejectReason::BadCredential };

    assert_eq!(client.call(&Request::Register { credential: wrong, entries: records[0].batch_entries(), grants: Vec::new() }).unwrap(), bad);
    assert_eq!(server.ledger_len(), 0);
    assert_eq!(client.call(&Request::Settle { credential: wrong, now: None, holding_period: None }).unwrap(), bad);
    assert_eq!(client.call(&Request::Shutdown { credential: wrong }).unwrap(), bad);

    client.call(&Request::Register { credential: CRED, entries: records[0].batch_entries(), grants: Vec::new() }).unwrap();
    let coupon = records[0].batch_entries()[0].coupon;
    let redeem = |credential| Request::Redeem { coupon, author: AuthorId::new("game"), credential, user: "u".into(), now: Some(5) };
    assert_eq!(client.call(&redeem(wrong)).unwrap(), bad);
    assert!(matches!(client.call(&redeem(CRED)).unwrap(), Response::Accepted { credited_udollars: 10_000 }));
    assert_eq!(client.call(&redeem(CRED)).unwrap(), Response::Rejected { reason: RejectReason::AlreadyRedeemed });
    handle.shutdown();
}

#[test]
fn malformed_lines_get_an_error_and_the_session_survives() {
    let (_server, handle) = start();
    let mut stream = TcpStream::connect(handle.local_addr()).unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();

    stream.write_all(b"{\"type\":\"redeem\",\"coupon\":\"zz\"}\n").unwrap();
    reader.read_line(&mut line).unwrap();
    let resp: serde_json::Value = serde_json::from_str(&line).unwrap();
    assert_eq!(resp["type"], "error");

    line.clear();
    stream.write_all(b"{\"type\":\"report_unredeemed\"}\n").unwrap();
    reader.read_line(&mut line).unwrap();
    let resp: serde_json::Value = serde_json::from_str(&line).unwrap();
    assert_eq!(resp["type"], "unredeemed");
    handle.shutdown();
}

#[test]
fn unknown_coupon_is_rejected_not_errored() {
    let (_server, handle) = start();
    let client = WireClient::connect(handle.local_addr()).unwrap();
    let mut manager = Manager::new(ManagerId::new("m"), UserId::new("alice"), CRED);
    let forged = Coupon::from_bytes([0xab; 16]);
    let outcome = manager.deliver(forged, &"(none)".into(), &AuthorId::new("forger"), &client, 1).unwrap();
    assert_eq!(outcome, RedeemOutcome::Rejected { reason: RejectReason::UnknownCoupon });
    handle.shutdown();
}

#[test]
fn minimal_unit_driven_through_the_wire() {
    let (server, handle) = start();
    let client = WireClient::connect(handle.local_addr()).unwrap();
    let records = provision_batch("tag", 1, &spec(AccessoryMode::Minimal), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let (entries, grants) = registration(&records);
    client.call(&Request::Register { credential: CRED, entries, grants }).unwrap();

    let r = &records[0];
    let profile = DeviceProfile {
        accessory_id: r.accessory_id.clone(),
        vendor_id: r.vendor_id.clone(),
        accessory_type: r.accessory_type.clone(),
        coupon_max: r.coupon_max,
        policy: r.policy.clone(),
        actuator_gated: false,
    };
    let secure_id = r.build().unwrap().read_secure_id().unwrap();
    let uses = (0..=12u64).map(|i| (i * 10, UseAction::ACTUATOR));
    let mut manager = Manager::new(ManagerId::new("m"), UserId::new("alice"), CRED);
    let out = manager.drive_minimal(&secure_id, &profile, &AuthorId::new("game"), uses, &client).unwrap();
    assert_eq!(out.status, DriverStatus::Active);
    assert_eq!(out.coupons.len(), 2);
    assert!(out.redeemed.iter().all(RedeemOutcome::is_accepted));
    assert_eq!(server.accounting().credited, Money::from_cents(2));
    handle.shutdown();
}
