//! A background app tries to harvest coupons from an actuator-gated lamp.
//! Without actuator commands it gets nothing; with them it earns until the
//! owner reviews their report and files an abuse case.
//!
//!     cargo run --example malicious_app

use appcessory::sim::{self, presets, EventKind};

fn main() {
    for actuator in [false, true] {
        let result = sim::run(&presets::malicious_calendar(4, actuator)).unwrap();
        println!("calendar sends actuator commands: {actuator}");
        for e in &result.events {
            match &e.kind {
                EventKind::CouponEmitted { to, .. } if to.as_str() == "calendar" => println!("  t={:>5} coupon harvested", e.time),
                EventKind::AbuseReport { accused, clawed_back, redistributed, .. } => {
                    println!("  t={:>5} {} reported {accused}: clawed back {clawed_back}", e.time, e.actor);
                    for p in redistributed {
                        println!("          {} receives {}", p.author, p.amount);
                    }
                }
                _ => {}
            }
        }
        for a in &result.metrics.authors {
            println!("  {}\tpending {}\tpaid {}\tsuspended {}", a.author_id, a.pending, a.paid, a.suspended);
        }
        println!("  imbalance {}", result.metrics.accounting.imbalance());
    }
}
