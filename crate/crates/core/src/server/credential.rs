use hmac::{Hmac, Mac};
use sha2::Sha256;
use subtle::ConstantTimeEq;

use crate::coupon::hex_bytes16;

hex_bytes16!(
    /// Bearer secret proving a client is a legitimate coupon cashing manager.
    ManagerCredential
);

hex_bytes16!(
    /// Server-held key for turning user ids into report pseudonyms.
    PseudonymKey
);

impl ManagerCredential {
    /// Constant-time comparison against the expected credential.
    pub fn verify(&self, presented: &ManagerCredential) -> bool {
        self.as_bytes().ct_eq(presented.as_bytes()).into()
    }
}

impl std::fmt::Debug for ManagerCredential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ManagerCredential(..)")
    }
}

impl std::fmt::Debug for PseudonymKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("PseudonymKey(..)")
    }
}

impl PseudonymKey {
    /// Stable, non-reversible pseudonym: `u-` and 16 hex digits of
    /// HMAC-SHA256 over the user id.
    pub fn pseudonymize(&self, user: &str) -> String {
        let mut mac = <Hmac<Sha256>>::new_from_slice(self.as_bytes()).expect("any key length");
        mac.update(user.as_bytes());
        let tag = mac.finalize().into_bytes();
        format!("u-{}", hex::encode(&tag[..8]))
    }
}
