use std::collections::BTreeMap;

use super::presets::*;
use super::*;
use crate::ids::AuthorId;
use crate::money::Money;
use crate::server::{Accounting, Payout};

fn account(r: &SimResult, author: &str) -> Option<crate::server::AuthorAccount> {
    r.metrics.authors.iter().find(|a| a.author_id.as_str() == author).cloned()
}

/// Credits recounted from the event log alone.
fn recount(events: &[Event]) -> BTreeMap<AuthorId, Money> {
    let mut by_author = BTreeMap::new();
    for e in events {
        if let EventKind::RedeemResult { author, credited, .. } = &e.kind {
            *by_author.entry(author.clone()).or_insert(Money::ZERO) += *credited;
        }
    }
    by_author
}

fn assert_willing_first(events: &[Event]) {
    let mut willing = std::collections::BTreeSet::new();
    for e in events {
        match &e.kind {
            EventKind::Willing { accessory } => {
                willing.insert(accessory.clone());
            }
            EventKind::CouponEmitted { accessory, .. } => assert!(willing.contains(accessory), "coupon before willing at seq {}", e.seq),
            _ => {}
        }
    }
}

#[test]
fn nominal_economy() {
    let r = run(&nominal(1)).unwrap();
    let game = account(&r, "game").unwrap();
    assert_eq!(game.pending, Money::from_dollars(5));
    assert_eq!(r.metrics.accounting.unredeemed, Money::ZERO);
    assert_eq!(r.metrics.verdict(), Ok(()));
    assert_eq!(recount(&r.events)[&AuthorId::new("game")], game.pending);
    assert_eq!(r.metrics.accessories[&"lamp-1".into()], (500, 500));
    assert_willing_first(&r.events);
    let times: Vec<_> = r.events.iter().map(|e| (e.time, e.seq)).collect();
    assert!(times.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn empty_run() {
    let mut s = nominal(1);
    s.duration = 0;
    let r = run(&s).unwrap();
    assert!(r.events.is_empty());
    assert_eq!(r.metrics.verdict(), Ok(()));
    assert_eq!(r.metrics.accounting.unredeemed, Money::from_dollars(5));
}

#[test]
fn gated_lamp_starves_background_app() {
    let r = run(&malicious_calendar(3, false)).unwrap();
    assert_eq!(account(&r, "calendar"), None);
    assert!(!r.events.iter().any(|e| matches!(e.kind, EventKind::AbuseReport { .. })));
    assert_eq!(r.metrics.accounting.credited, Money::from_cents(40));
}

#[test]
fn abuse_lifecycle() {
    let r = run(&malicious_calendar(3, true)).unwrap();
    let report = r
        .events
        .iter()
        .find_map(|e| match &e.kind {
            EventKind::AbuseReport { accused, suspended, clawed_back, redistributed } => {
                Some((accused.clone(), *suspended, *clawed_back, redistributed.clone()))
            }
            _ => None,
        })
        .expect("user reports the calendar app");
    assert_eq!(
        report,
        (
            "calendar".into(),
            true,
            Money::from_cents(40),
            vec![
                Payout { author: "fitness".into(), amount: Money::from_cents(10) },
                Payout { author: "game".into(), amount: Money::from_cents(30) },
            ]
        )
    );
    assert!(r.user_reports[&"alice".into()].iter().any(|row| row.author.as_str() == "calendar"));
    assert_eq!(account(&r, "game").unwrap().pending, Money::from_cents(60));
    assert_eq!(account(&r, "fitness").unwrap().pending, Money::from_cents(20));
    assert!(account(&r, "calendar").unwrap().suspended);
    assert_eq!(r.metrics.verdict(), Ok(()));
    assert_eq!(r.metrics.settle_checks, 3);
    assert_eq!(r.metrics.settle_failures, 0);
}

#[test]
fn minimal_units_on_one_phone() {
    let r = run(&minimal_pair(5)).unwrap();
    assert_eq!(r.metrics.accessories[&"tag-1".into()], (5, 5));
    assert_eq!(r.metrics.accessories[&"tag-2".into()], (5, 5));
    let grants = r.events.iter().filter(|e| matches!(e.kind, EventKind::Grant { refused: None, .. })).count();
    assert_eq!(grants, 2);
    // Zero holding period: everything credited has been paid by the last settlement.
    assert_eq!(account(&r, "game").unwrap().paid, Money::from_cents(10));
}

#[test]
fn busy_market_balances_at_every_settlement() {
    let r = run(&busy_market(11)).unwrap();
    assert!(r.metrics.settle_checks > 10);
    assert_eq!(r.metrics.settle_failures, 0);
    for e in &r.events {
        if let EventKind::Settle { imbalance, .. } = e.kind {
            assert_eq!(imbalance, 0);
        }
    }
    assert_eq!(r.metrics.verdict(), Ok(()));
    assert_willing_first(&r.events);
    // Decaying policy: no author above the cap, total within the balance.
    let policy_cap = Money::from_dollars(1);
    assert!(r.metrics.authors.iter().all(|a| a.pending + a.paid <= policy_cap));
    assert!(r.metrics.accounting.credited <= Money::from_dollars(5));
}

#[test]
fn replay_is_byte_identical() {
    for s in [nominal(2), malicious_calendar(2, true), busy_market(2), minimal_pair(2)] {
        assert!(replay_check(&s).unwrap());
    }
    let a = run(&busy_market(1)).unwrap();
    let b = run(&busy_market(2)).unwrap();
    assert_ne!(a.ledger, b.ledger);
}

#[test]
fn restart_is_invisible() {
    for (s, at) in [(malicious_calendar(4, true), 2_100), (busy_market(4), 7_777), (minimal_pair(4), 150)] {
        let straight = run(&s).unwrap();
        let restarted = run_with(&s, &RunOptions { restart_at: Some(at) }).unwrap();
        assert_eq!(straight.events_jsonl(), restarted.events_jsonl());
        assert_eq!(straight.ledger, restarted.ledger);
        assert_eq!(straight.metrics, restarted.metrics);
    }
}

#[test]
fn forger_gets_nothing() {
    let mut s = nominal(1);
    s.duration = 600;
    s.apps.push(AppSpec { author: "forger".into(), behavior: AppBehavior::Forger { start: 5, submissions: 20_000 } });
    s.users[0].apps.push("forger".into());
    let r = run(&s).unwrap();
    assert_eq!((r.metrics.forgeries_submitted, r.metrics.forgeries_accepted), (20_000, 0));
    assert_eq!(account(&r, "forger"), None);
}

#[test]
fn output_verification() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(&malicious_calendar(1, true)).unwrap();
    r.write_to_dir(dir.path()).unwrap();
    assert_eq!(verify_dir(dir.path()), Ok(()));

    let path = dir.path().join(METRICS_FILE);
    let text = std::fs::read_to_string(&path).unwrap();
    let tampered = text.replace("author.game.pending\t600000", "author.game.pending\t700000");
    assert_ne!(text, tampered);
    std::fs::write(&path, tampered).unwrap();
    assert!(matches!(verify_dir(dir.path()), Err(VerifyError::Mismatch(_))));

    let tampered = text.replace("credited\t", "credited\t1");
    std::fs::write(&path, tampered).unwrap();
    assert!(verify_dir(dir.path()).is_err());
}

#[test]
fn accounting_bug_is_detected() {
    let good = run(&nominal(1)).unwrap().metrics.accounting;
    let bad = Accounting { credited: good.credited + Money::from_udollars(1), ..good };
    assert_eq!(conservation_verdict(&good), Ok(()));
    assert_eq!(conservation_verdict(&bad), Err(-1));
}

#[test]
fn actor_streams_are_independent() {
    use rand::RngCore;
    let a1 = actor_rng(9, "accessory:lamp-1").next_u64();
    let a2 = actor_rng(9, "accessory:lamp-1").next_u64();
    let b = actor_rng(9, "accessory:lamp-2").next_u64();
    let c = actor_rng(10, "accessory:lamp-1").next_u64();
    assert_eq!(a1, a2);
    assert_ne!(a1, b);
    assert_ne!(a1, c);
    // Adding an accessory does not change another one's secrets.
    let mut s = nominal(1);
    let base = run(&s).unwrap();
    let mut extra = s.accessories[0].clone();
    extra.id = "lamp-0".into();
    s.accessories.insert(0, extra);
    let more = run(&s).unwrap();
    let coupons = |r: &SimResult| -> Vec<_> {
        r.events.iter().filter_map(|e| match &e.kind { EventKind::CouponEmitted { coupon, .. } => Some(*coupon), _ => None }).collect()
    };
    assert_eq!(coupons(&base), coupons(&more));
}
