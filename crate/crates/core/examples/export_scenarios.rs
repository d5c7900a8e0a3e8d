//! Writes the built-in scenarios as JSON files for `appcessory simulate`.
//!
//!     cargo run --example export_scenarios [-- DIR]

use std::path::PathBuf;

use appcessory::sim::presets;

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "scenarios".into()));
    std::fs::create_dir_all(&dir)?;
    let all = [
        ("nominal", presets::nominal(1)),
        ("malicious_calendar", presets::malicious_calendar(1, true)),
        ("gated_calendar", presets::malicious_calendar(1, false)),
        ("minimal_pair", presets::minimal_pair(1)),
        ("busy_market", presets::busy_market(1)),
    ];
    for (name, scenario) in all {
        let path = dir.join(format!("{name}.json"));
        let value: serde_json::Value = serde_json::from_str(&scenario.canonical_json()).unwrap();
        std::fs::write(&path, serde_json::to_string_pretty(&value).unwrap() + "\n")?;
        println!("{}", path.display());
    }
    Ok(())
}
