//! Line-delimited ledger journal.
//!
//! One JSON object per line, tagged by `rec`, with fields always written in
//! declaration order. Monetary fields are integer micro-dollars.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{GrantRecord, PseudonymKey, RewardLedger, RewardPolicy, ServerError, State};
use crate::coupon::{Coupon, CouponKey, SecureId};
use crate::ids::{AccessoryId, AccessoryType, AuthorId, ManagerId, VendorId};
use crate::money::Money;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rec", rename_all = "snake_case", deny_unknown_fields)]
pub enum Record {
    Config {
        reward_policy: RewardPolicy,
        pseudonym_key: PseudonymKey,
    },
    Accessory {
        accessory: AccessoryId,
        vendor: VendorId,
        accessory_type: AccessoryType,
    },
    Coupon {
        coupon: Coupon,
        worth: Money,
        accessory: AccessoryId,
    },
    GrantRecord {
        secure_id: SecureId,
        key: CouponKey,
    },
    Redeem {
        coupon: Coupon,
        author: AuthorId,
        /// Already pseudonymized.
        user: String,
        at: u64,
    },
    Grant {
        secure_id: SecureId,
        manager: Option<ManagerId>,
        at: u64,
    },
    Settle {
        at: u64,
        holding_period: u64,
    },
    Abuse {
        accused: AuthorId,
        reporter: String,
        at: u64,
    },
}

pub(super) fn write_record<W: Write + ?Sized>(out: &mut W, record: &Record) -> io::Result<()> {
    serde_json::to_writer(&mut *out, record)?;
    out.write_all(b"\n")
}

pub(super) fn write_snapshot<W: Write>(state: &State, out: &mut W) -> io::Result<()> {
    let mut out = io::BufWriter::new(out);
    write_record(
        &mut out,
        &Record::Config {
            reward_policy: state.rewards.policy().clone(),
            pseudonym_key: state.pseudonym_key,
        },
    )?;
    for meta in &state.accessories {
        write_record(
            &mut out,
            &Record::Accessory {
                accessory: meta.id.clone(),
                vendor: meta.vendor.clone(),
                accessory_type: meta.accessory_type.clone(),
            },
        )?;
    }
    for e in &state.entries {
        write_record(
            &mut out,
            &Record::Coupon {
                coupon: e.coupon,
                worth: e.worth,
                accessory: state.accessories[e.accessory as usize].id.clone(),
            },
        )?;
    }
    for g in &state.grants {
        write_record(
            &mut out,
            &Record::GrantRecord { secure_id: g.record.secure_id, key: g.record.key },
        )?;
    }
    for op in &state.ops {
        write_record(&mut out, op)?;
    }
    out.flush()
}

pub(super) fn replay<R: BufRead>(state: &mut State, input: R) -> Result<(), ServerError> {
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |message: String| ServerError::Corrupt { line: line_no, message };
        let record: Record = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
        apply(state, record, line_no == 1).map_err(corrupt)?;
    }
    Ok(())
}

fn apply(state: &mut State, record: Record, first: bool) -> Result<(), String> {
    match record {
        Record::Config { reward_policy, pseudonym_key } => {
            if !first {
                return Err("config record must be the first line".into());
            }
            reward_policy.validate().map_err(|e| e.to_string())?;
            state.rewards = RewardLedger::new(reward_policy);
            state.pseudonym_key = pseudonym_key;
        }
        Record::Accessory { accessory, vendor, accessory_type } => {
            if state.accessory_index.contains_key(&accessory) {
                return Err(format!("accessory {accessory} declared twice"));
            }
            state.insert_accessory(accessory, vendor, accessory_type);
        }
        Record::Coupon { coupon, worth, accessory } => {
            let Some(&acc) = state.accessory_index.get(&accessory) else {
                return Err(format!("coupon {coupon} names undeclared accessory {accessory}"));
            };
            if state.coupon_index.contains_key(&coupon) {
                return Err(format!("coupon {coupon} registered twice"));
            }
            state.insert_coupon(coupon, worth, acc);
        }
        Record::GrantRecord { secure_id, key } => {
            if state.grant_index.contains_key(&secure_id) {
                return Err(format!("secure id {secure_id} registered twice"));
            }
            state.insert_grant(GrantRecord::new(secure_id, key));
        }
        Record::Redeem { coupon, author, user, at } => {
            let Some(&entry) = state.coupon_index.get(&coupon) else {
                return Err(format!("redeem of unknown coupon {coupon}"));
            };
            if state.entries[entry as usize].redemption.is_some() {
                return Err(format!("coupon {coupon} redeemed twice"));
            }
            let slot = state.author_slot(&author);
            if state.accounts[slot as usize].suspended {
                return Err(format!("redeem by suspended author {author}"));
            }
            state.apply_redeem(entry, slot, user.clone(), at);
            state.ops.push(Record::Redeem { coupon, author, user, at });
        }
        Record::Grant { secure_id, manager, at } => {
            let Some(&g) = state.grant_index.get(&secure_id) else {
                return Err(format!("grant of unknown secure id {secure_id}"));
            };
            let grant = &mut state.grants[g as usize].record;
            if grant.granted {
                return Err(format!("secure id {secure_id} granted twice"));
            }
            grant.granted = true;
            grant.granted_to = manager.clone();
            state.tick(at);
            state.ops.push(Record::Grant { secure_id, manager, at });
        }
        Record::Settle { at, holding_period } => {
            state.apply_settle(at, holding_period);
            state.ops.push(Record::Settle { at, holding_period });
        }
        Record::Abuse { accused, reporter, at } => {
            state.apply_abuse(&accused, at);
            state.ops.push(Record::Abuse { accused, reporter, at });
        }
    }
    Ok(())
}
