//! Coupon derivation and encoding.
//!
//! A coupon is the AES-128 encryption, under the accessory's coupon key, of
//! the coupon counter written as a 128-bit big-endian block. The factory runs
//! the same derivation over every counter value below the coupon max to
//! pre-register the device's coupons with the cashing server.

use std::fmt;

use aes::cipher::{generic_array::GenericArray, BlockEncrypt, KeyInit};
use aes::Aes128;
use rand::Rng;
use serde::{de, Deserialize, Deserializer, Serialize};

use crate::ids::VendorId;
use crate::money::Money;

/// Upper bound on the number of coupons a single device may carry.
pub const COUPON_MAX_LIMIT: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CouponError {
    #[error("malformed coupon: {0}")]
    Malformed(String),
    #[error("coupon max must be in 1..={COUPON_MAX_LIMIT}, got {0}")]
    InvalidMax(u64),
}

/// Parses exactly 32 hex digits (either case) into 16 bytes.
pub(crate) fn parse_hex16(s: &str) -> Result<[u8; 16], CouponError> {
    if s.len() != 32 {
        return Err(CouponError::Malformed(format!(
            "expected 32 hex characters, got {}",
            s.len()
        )));
    }
    let mut out = [0u8; 16];
    hex::decode_to_slice(s, &mut out)
        .map_err(|e| CouponError::Malformed(format!("{s:?}: {e}")))?;
    Ok(out)
}

macro_rules! hex_bytes16 {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name([u8; 16]);

        impl $name {
            pub const fn from_bytes(bytes: [u8; 16]) -> Self {
                $name(bytes)
            }

            pub const fn as_bytes(&self) -> &[u8; 16] {
                &self.0
            }

            /// Lowercase, 32 characters.
            pub fn to_hex(&self) -> String {
                ::hex::encode(self.0)
            }

            pub fn from_hex(s: &str) -> Result<Self, $crate::coupon::CouponError> {
                $crate::coupon::parse_hex16(s).map($name)
            }

            pub fn random<R: ::rand::Rng + ?Sized>(rng: &mut R) -> Self {
                let mut b = [0u8; 16];
                rng.fill(&mut b);
                $name(b)
            }
        }

        impl ::std::fmt::Display for $name {
            fn fmt(&self, f: &mut ::std::fmt::Formatter<'_>) -> ::std::fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl ::std::str::FromStr for $name {
            type Err = $crate::coupon::CouponError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Self::from_hex(s)
            }
        }

        impl ::serde::Serialize for $name {
            fn serialize<S: ::serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> ::serde::Deserialize<'de> for $name {
            fn deserialize<D: ::serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = <::std::borrow::Cow<'de, str>>::deserialize(d)?;
                Self::from_hex(&s).map_err(::serde::de::Error::custom)
            }
        }
    };
}

pub(crate) use hex_bytes16;

hex_bytes16!(
    /// The 128-bit opaque token that carries one reward.
    Coupon
);
hex_bytes16!(
    /// Per-accessory secret set in the factory.
    CouponKey
);
hex_bytes16!(
    /// Random 128-bit identifier burned into a minimal accessory.
    SecureId
);

impl fmt::Debug for Coupon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Coupon({})", self.to_hex())
    }
}

impl fmt::Debug for SecureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SecureId({})", self.to_hex())
    }
}

impl fmt::Debug for CouponKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CouponKey(..)")
    }
}

/// Encodes a coupon in its canonical text form.
pub fn encode_coupon(c: &Coupon) -> String {
    c.to_hex()
}

/// Decodes a coupon from exactly 32 hex characters.
pub fn decode_coupon(s: &str) -> Result<Coupon, CouponError> {
    Coupon::from_hex(s)
}

/// Index of the next coupon a device will emit.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct CouponCounter(u64);

impl CouponCounter {
    pub const ZERO: CouponCounter = CouponCounter(0);

    pub const fn new(value: u64) -> Self {
        CouponCounter(value)
    }

    pub const fn value(self) -> u64 {
        self.0
    }

    pub(crate) fn increment(&mut self) {
        self.0 += 1;
    }
}

/// Number of coupons a device will ever emit in counter mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct CouponMax(u64);

impl CouponMax {
    pub fn new(value: u64) -> Result<Self, CouponError> {
        if value == 0 || value > COUPON_MAX_LIMIT {
            return Err(CouponError::InvalidMax(value));
        }
        Ok(CouponMax(value))
    }

    pub const fn value(self) -> u64 {
        self.0
    }
}

impl<'de> Deserialize<'de> for CouponMax {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        CouponMax::new(u64::deserialize(d)?).map_err(de::Error::custom)
    }
}

/// A keyed AES-128 instance that derives coupons for one device.
#[derive(Clone)]
pub struct CouponGenerator {
    cipher: Aes128,
}

impl CouponGenerator {
    pub fn new(key: &CouponKey) -> Self {
        CouponGenerator {
            cipher: Aes128::new(GenericArray::from_slice(key.as_bytes())),
        }
    }

    pub fn derive(&self, counter: CouponCounter) -> Coupon {
        let mut block = GenericArray::from((counter.value() as u128).to_be_bytes());
        self.cipher.encrypt_block(&mut block);
        Coupon(block.into())
    }
}

/// Encrypts `counter` (as a big-endian 128-bit block) under `key`.
pub fn derive_coupon(key: &CouponKey, counter: CouponCounter) -> Coupon {
    CouponGenerator::new(key).derive(counter)
}

/// One coupon as handed to the cashing server at registration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PregeneratedCoupon {
    pub coupon: Coupon,
    pub worth: Money,
    pub vendor_id: VendorId,
}

/// Every coupon the device will emit in counter mode, in counter order.
pub fn pregenerate_coupons(
    key: &CouponKey,
    coupon_max: CouponMax,
    worth: Money,
    vendor_id: &VendorId,
) -> Vec<PregeneratedCoupon> {
    let generator = CouponGenerator::new(key);
    (0..coupon_max.value())
        .map(|i| PregeneratedCoupon {
            coupon: generator.derive(CouponCounter::new(i)),
            worth,
            vendor_id: vendor_id.clone(),
        })
        .collect()
}

/// Encrypts a counter value drawn uniformly from `0..coupon_max`.
///
/// Repeats are expected; the server turns them away as already redeemed.
pub fn random_coupon<R: Rng + ?Sized>(key: &CouponKey, coupon_max: CouponMax, rng: &mut R) -> Coupon {
    let r = rng.gen_range(0..coupon_max.value());
    derive_coupon(key, CouponCounter::new(r))
}
