//! Rational frequencies in cycles per step, e.g. `1/24` for a daily cycle in
//! hourly data.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A frequency `numer / denom` cycles per step, kept in lowest terms.
///
/// Valid frequencies lie in `(0, 0.5]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Frequency {
    numer: u64,
    denom: u64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Frequency {
    pub fn new(numer: u64, denom: u64) -> Result<Self> {
        if numer == 0 || denom == 0 {
            return Err(Error::Domain(format!("frequency {numer}/{denom} is not positive")));
        }
        if 2 * numer > denom {
            return Err(Error::Domain(format!("frequency {numer}/{denom} exceeds the Nyquist limit 1/2")));
        }
        let g = gcd(numer, denom);
        Ok(Self {
            numer: numer / g,
            denom: denom / g,
        })
    }

    /// One cycle every `period` steps.
    pub fn per_period(period: u64) -> Result<Self> {
        Self::new(1, period)
    }

    pub fn numer(self) -> u64 {
        self.numer
    }

    pub fn denom(self) -> u64 {
        self.denom
    }

    pub fn value(self) -> f64 {
        self.numer as f64 / self.denom as f64
    }

    /// Period in steps (may be fractional).
    pub fn period(self) -> f64 {
        self.denom as f64 / self.numer as f64
    }
}

impl PartialOrd for Frequency {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frequency {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.numer as u128 * other.denom as u128).cmp(&(other.numer as u128 * self.denom as u128))
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numer, self.denom)
    }
}

impl FromStr for Frequency {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::config(format!("cannot parse frequency `{s}`, expected `a/b`"));
        let (n, d) = s.split_once('/').ok_or_else(bad)?;
        let n: u64 = n.trim().parse().map_err(|_| bad())?;
        let d: u64 = d.trim().parse().map_err(|_| bad())?;
        Self::new(n, d)
    }
}

impl TryFrom<String> for Frequency {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Frequency> for String {
    fn from(f: Frequency) -> String {
        f.to_string()
    }
}

/// Parses a comma-separated list such as `1/24,1/48`.
pub fn parse_list(s: &str) -> Result<Vec<Frequency>> {
    s.split(',').filter(|t| !t.trim().is_empty()).map(str::parse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_reduces() {
        let f: Frequency = "2/48".parse().unwrap();
        assert_eq!(f, Frequency::per_period(24).unwrap());
        assert_eq!(f.to_string(), "1/24");
        assert!((f.value() - 1.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(Frequency::new(0, 5).is_err());
        assert!(Frequency::new(3, 5).is_err());
        assert!(Frequency::new(1, 2).is_ok());
        assert!("x/2".parse::<Frequency>().is_err());
    }

    #[test]
    fn orders_by_value() {
        let a = Frequency::per_period(24).unwrap();
        let b = Frequency::per_period(7).unwrap();
        assert!(a < b);
        assert_eq!(parse_list("1/24, 1/48").unwrap().len(), 2);
    }
}
