//! String identifiers for the parties in the system.

use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                $name(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                $name(s)
            }
        }
    };
}

string_id!(
    /// An app author. Apps are identified by their author in every ledger.
    AuthorId
);
string_id!(
    /// An accessory vendor, the party funding coupons.
    VendorId
);
string_id!(
    /// One physical accessory instance.
    AccessoryId
);
string_id!(
    /// A product line; reports are grouped by it.
    AccessoryType
);
string_id!(
    /// A phone owner. Never leaves the manager unpseudonymized in reports.
    UserId
);
string_id!(
    /// A coupon cashing manager installation.
    ManagerId
);
