//! One lamp, one game, 500 minutes of play: the whole coupon budget flows to
//! the game's pending balance.
//!
//!     cargo run --example nominal_economy [-- SEED]

use appcessory::sim::{self, presets};

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let result = sim::run(&presets::nominal(seed)).expect("preset is valid");

    print!("{}", result.metrics.to_table());
    for (user, rows) in &result.user_reports {
        for row in rows {
            println!("report\t{user}\t{}\t{}\t{} coupons\t{}", row.author, row.accessory, row.coupons, row.total);
        }
    }
    match result.metrics.verdict() {
        Ok(()) => println!("books balance"),
        Err(off) => println!("books off by {off} udollars"),
    }
}
