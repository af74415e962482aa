use core::fmt;
use core::ops::{Add, Mul};
use core::time::Duration;

use thiserror::Error;

/// An amount in micro-dollars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Money(u64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub const fn from_micros(micros: u64) -> Self {
        Money(micros)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn dollars(self) -> f64 {
        self.0 as f64 / 1e6
    }

    /// Display rounding to whole cents, half away from zero.
    pub fn cents(self) -> u64 {
        (self.0 + 5_000) / 10_000
    }
}

impl Add for Money {
    type Output = Money;

    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl Mul<u64> for Money {
    type Output = Money;

    fn mul(self, rhs: u64) -> Money {
        Money(self.0 * rhs)
    }
}

/// `$0.23`: cents only at display time.
impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = self.cents();
        write!(f, "${}.{:02}", c / 100, c % 100)
    }
}

/// Hourly compute rates plus provisioned shared storage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PricingModel {
    /// $/hour
    pub spot_rate: f64,
    /// $/hour
    pub on_demand_rate: f64,
    /// $ per 100 GiB provisioned, per month
    pub storage_rate: f64,
    /// GiB
    pub provisioned_storage: f64,
}

impl Default for PricingModel {
    fn default() -> Self {
        PricingModel {
            spot_rate: 0.076,
            on_demand_rate: 0.38,
            storage_rate: 16.00,
            provisioned_storage: 100.0,
        }
    }
}

impl PricingModel {
    /// Monthly shared-storage charge, kept apart from per-run compute cost.
    pub fn monthly_storage(&self) -> Money {
        let dollars = self.storage_rate * self.provisioned_storage / 100.0;
        Money(round_nonneg(dollars * 1e6))
    }
}

fn round_nonneg(x: f64) -> u64 {
    libm::round(x).max(0.0) as u64
}

/// `duration` in hours times `rate_per_hour`, to the nearest micro-dollar.
pub fn cost(duration: Duration, rate_per_hour: f64) -> Money {
    let micros_per_hour = round_nonneg(rate_per_hour * 1e6) as u128;
    let ms = duration.as_millis();
    let product = ms * micros_per_hour;
    Money(((product + 1_800_000) / 3_600_000) as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SavingsError {
    #[error("baseline cost is zero")]
    ZeroBaseline,
}

/// Percent saved by paying `cost` instead of `baseline`.
pub fn savings(cost: Money, baseline: Money) -> Result<f64, SavingsError> {
    if baseline == Money::ZERO {
        return Err(SavingsError::ZeroBaseline);
    }
    Ok((1.0 - cost.0 as f64 / baseline.0 as f64) * 100.0)
}
