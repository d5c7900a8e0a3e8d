//! The accessory side of the app link, one JSON record per line: an app
//! claims willingness, sends use commands, and receives coupons.
//!
//!     cargo run --example link_protocol

use appcessory::accessory::{LinkMessage, ReleasePolicy};
use appcessory::coupon::CouponMax;
use appcessory::accessory::{Accessory, AccessoryConfig, FactorySecret};
use appcessory::coupon::CouponKey;
use appcessory::ids::{AccessoryId, AccessoryType, AuthorId, VendorId};

fn main() {
    let config = AccessoryConfig {
        accessory_id: AccessoryId::new("lamp-7"),
        vendor_id: VendorId::new("acme"),
        accessory_type: AccessoryType::new("lamp"),
        coupon_max: CouponMax::new(10).unwrap(),
        policy: Some(ReleasePolicy::PerInterval { interval: 30 }),
        actuator_gated: true,
    };
    let mut lamp = Accessory::provision(config, FactorySecret::Counter { key: CouponKey::from_bytes([3; 16]) }).unwrap();

    let script = [
        (0, LinkMessage::Willing { app_id: AuthorId::new("mood-lighting") }),
        (0, LinkMessage::Use { is_actuator_command: true }),
        (20, LinkMessage::Use { is_actuator_command: false }),
        (40, LinkMessage::Use { is_actuator_command: true }),
        (70, LinkMessage::Use { is_actuator_command: true }),
        (70, LinkMessage::ReadSecureId),
    ];
    for (now, msg) in script {
        println!("t={now:>2} app -> {}", serde_json::to_string(&msg).unwrap());
        match lamp.handle_message(msg, now) {
            Ok(replies) => {
                for r in replies {
                    println!("t={now:>2} app <- {}", serde_json::to_string(&r).unwrap());
                }
            }
            Err(e) => println!("t={now:>2} error: {e}"),
        }
    }
}
