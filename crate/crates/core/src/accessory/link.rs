use serde::{Deserialize, Serialize};

use crate::coupon::{Coupon, SecureId};
use crate::ids::AuthorId;

/// One record on the accessory/app link, carried one per line as JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LinkMessage {
    /// app -> accessory
    Willing { app_id: AuthorId },
    /// app -> accessory
    Use { is_actuator_command: bool },
    /// app -> accessory, minimal devices only
    ReadSecureId,
    /// accessory -> app
    Coupon { coupon_hex: Coupon },
    /// accessory -> app
    SecureId { id_hex: SecureId },
}
