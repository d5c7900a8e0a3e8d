//! Read-only views over the ledger. Users appear only as pseudonyms.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{CashingServer, State, REDISTRIBUTION_SOURCE};
use crate::ids::{AccessoryType, AuthorId, VendorId};
use crate::money::Money;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VendorReportRow {
    pub accessory_type: AccessoryType,
    pub author: AuthorId,
    pub coupons: u64,
    pub redeemed_worth: Money,
    pub credited: Money,
    /// Distinct user pseudonyms behind these redemptions.
    pub users: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VendorReport {
    pub vendor: VendorId,
    pub rows: Vec<VendorReportRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorReportRow {
    /// Accessory type, or `(redistribution)` for money received from abuse cases.
    pub accessory_type: String,
    pub coupons: u64,
    pub pending: Money,
    pub paid: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorReport {
    pub author: AuthorId,
    pub pending: Money,
    pub paid: Money,
    pub recovered: Money,
    pub suspended: bool,
    pub rows: Vec<AuthorReportRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnredeemedRow {
    pub accessory_type: AccessoryType,
    pub coupons: u64,
    pub worth: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnredeemedReport {
    pub rows: Vec<UnredeemedRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopularApp {
    pub rank: u32,
    pub author: AuthorId,
    pub users: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopularApps {
    pub accessory_type: AccessoryType,
    pub apps: Vec<PopularApp>,
}

impl State {
    fn vendor_report(&self, vendor: &VendorId) -> VendorReport {
        #[derive(Default)]
        struct Acc<'a> {
            coupons: u64,
            worth: Money,
            credited: Money,
            users: BTreeSet<&'a str>,
        }
        let mut rows: BTreeMap<(&AccessoryType, &AuthorId), Acc> = BTreeMap::new();
        for r in &self.redemptions {
            let entry = &self.entries[r.entry as usize];
            let meta = &self.accessories[entry.accessory as usize];
            if &meta.vendor != vendor {
                continue;
            }
            let row = rows
                .entry((&meta.accessory_type, &self.accounts[r.author as usize].id))
                .or_default();
            row.coupons += 1;
            row.worth += entry.worth;
            row.credited += r.credited;
            row.users.insert(&r.user);
        }
        VendorReport {
            vendor: vendor.clone(),
            rows: rows
                .into_iter()
                .map(|((t, a), acc)| VendorReportRow {
                    accessory_type: t.clone(),
                    author: a.clone(),
                    coupons: acc.coupons,
                    redeemed_worth: acc.worth,
                    credited: acc.credited,
                    users: acc.users.len() as u64,
                })
                .collect(),
        }
    }

    fn author_report(&self, author: &AuthorId) -> AuthorReport {
        let Some(&slot) = self.account_index.get(author) else {
            return AuthorReport {
                author: author.clone(),
                pending: Money::ZERO,
                paid: Money::ZERO,
                recovered: Money::ZERO,
                suspended: false,
                rows: Vec::new(),
            };
        };
        let account = &self.accounts[slot as usize];
        let mut rows: BTreeMap<&str, AuthorReportRow> = BTreeMap::new();
        let row = |source: &str| -> AuthorReportRow {
            AuthorReportRow {
                accessory_type: source.to_owned(),
                coupons: 0,
                pending: Money::ZERO,
                paid: Money::ZERO,
            }
        };
        for r in self.redemptions.iter().filter(|r| r.author == slot) {
            let t = self.accessory_type_of(r.entry).as_str();
            rows.entry(t).or_insert_with(|| row(t)).coupons += 1;
        }
        for p in &account.pending {
            rows.entry(&p.source).or_insert_with(|| row(&p.source)).pending += p.amount;
        }
        for (source, paid) in &account.paid_by_source {
            rows.entry(source).or_insert_with(|| row(source)).paid += *paid;
        }
        let mut rows: Vec<_> = rows.into_values().collect();
        // Redistribution income sorts last.
        rows.sort_by_key(|r| (r.accessory_type == REDISTRIBUTION_SOURCE, r.accessory_type.clone()));
        let view = account.view();
        AuthorReport {
            author: author.clone(),
            pending: view.pending,
            paid: view.paid,
            recovered: view.recovered,
            suspended: view.suspended,
            rows,
        }
    }

    fn unredeemed_report(&self) -> UnredeemedReport {
        let mut rows: BTreeMap<&AccessoryType, (u64, Money)> = BTreeMap::new();
        for e in self.entries.iter().filter(|e| e.redemption.is_none()) {
            let row = rows
                .entry(&self.accessories[e.accessory as usize].accessory_type)
                .or_default();
            row.0 += 1;
            row.1 += e.worth;
        }
        UnredeemedReport {
            rows: rows
                .into_iter()
                .map(|(t, (coupons, worth))| UnredeemedRow {
                    accessory_type: t.clone(),
                    coupons,
                    worth,
                })
                .collect(),
        }
    }

    fn popular_apps(&self, accessory_type: &AccessoryType) -> PopularApps {
        let mut users: BTreeMap<&AuthorId, BTreeSet<&str>> = BTreeMap::new();
        for r in &self.redemptions {
            if self.accessory_type_of(r.entry) == accessory_type {
                users
                    .entry(&self.accounts[r.author as usize].id)
                    .or_default()
                    .insert(&r.user);
            }
        }
        let mut ranked: Vec<(&AuthorId, u64)> =
            users.into_iter().map(|(a, u)| (a, u.len() as u64)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        PopularApps {
            accessory_type: accessory_type.clone(),
            apps: ranked
                .into_iter()
                .enumerate()
                .map(|(i, (author, users))| PopularApp {
                    rank: i as u32 + 1,
                    author: author.clone(),
                    users,
                })
                .collect(),
        }
    }
}

impl CashingServer {
    /// Per accessory type and app author: coupons redeemed and money credited.
    pub fn report_vendor(&self, vendor: &VendorId) -> VendorReport {
        self.lock().vendor_report(vendor)
    }

    /// Per accessory type: coupons redeemed and the live pending/paid split.
    pub fn report_author(&self, author: &AuthorId) -> AuthorReport {
        self.lock().author_report(author)
    }

    pub fn report_unredeemed(&self) -> UnredeemedReport {
        self.lock().unredeemed_report()
    }

    /// Authors ranked by distinct users on `accessory_type`.
    pub fn popular_apps(&self, accessory_type: &AccessoryType) -> PopularApps {
        self.lock().popular_apps(accessory_type)
    }
}
