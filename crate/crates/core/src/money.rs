use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

/// An exact amount of money in micro-dollars (1 000 000 = $1.00).
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Money(u64);

impl Money {
    pub const ZERO: Money = Money(0);
    pub const UDOLLARS_PER_DOLLAR: u64 = 1_000_000;

    pub const fn from_udollars(udollars: u64) -> Self {
        Money(udollars)
    }

    pub const fn from_cents(cents: u64) -> Self {
        Money(cents * 10_000)
    }

    pub const fn from_dollars(dollars: u64) -> Self {
        Money(dollars * Self::UDOLLARS_PER_DOLLAR)
    }

    pub const fn udollars(self) -> u64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn checked_add(self, rhs: Money) -> Option<Money> {
        self.0.checked_add(rhs.0).map(Money)
    }

    pub fn checked_sub(self, rhs: Money) -> Option<Money> {
        self.0.checked_sub(rhs.0).map(Money)
    }

    pub fn saturating_sub(self, rhs: Money) -> Money {
        Money(self.0.saturating_sub(rhs.0))
    }

    pub fn checked_mul(self, n: u64) -> Option<Money> {
        self.0.checked_mul(n).map(Money)
    }

    /// `self * parts / 1_000_000`, rounded down.
    pub fn ppm(self, parts: u32) -> Money {
        Money((self.0 as u128 * parts as u128 / 1_000_000) as u64)
    }
}

impl Add for Money {
    type Output = Money;

    fn add(self, rhs: Money) -> Money {
        Money(self.0.checked_add(rhs.0).expect("money overflow"))
    }
}

impl AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        *self = *self + rhs;
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, Add::add)
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "${}.{:06}",
            self.0 / Self::UDOLLARS_PER_DOLLAR,
            self.0 % Self::UDOLLARS_PER_DOLLAR
        )
    }
}
