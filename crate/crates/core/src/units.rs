//! Exact quantities shared by the catalog and the link model.
//!
//! Rates and durations are held as `i128` rationals so that catalog figures
//! and transmission times carry no floating-point drift. Decimal SI prefixes
//! are used throughout (1 Mb/s = 10^6 b/s).

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, Sub};

use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub type Exact = Ratio<i128>;

pub const KILO: i128 = 1_000;
pub const MEGA: i128 = 1_000_000;
pub const GIGA: i128 = 1_000_000_000;

/// Rounds to the nearest integer, ties toward positive infinity.
pub fn round_half_up(x: &Exact) -> i128 {
    (x + Exact::new(1, 2)).floor().to_integer()
}

/// Rounds half-up to `decimals` places and renders without exponent.
pub fn format_fixed(x: &Exact, decimals: u32) -> String {
    let scale = 10i128.pow(decimals);
    let scaled = round_half_up(&(x * scale));
    let (int, frac) = scaled.abs().div_rem(&scale);
    let sign = if scaled < 0 { "-" } else { "" };
    if decimals == 0 {
        format!("{sign}{int}")
    } else {
        format!("{sign}{int}.{frac:0width$}", width = decimals as usize)
    }
}

/// Parses a plain decimal literal (`"22"`, `"0.125"`, `"-3.5"`) exactly.
pub fn parse_decimal(s: &str) -> Option<Exact> {
    let s = s.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    if int_part.len() + frac_part.len() > 36 {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let numer: i128 = if digits.is_empty() { 0 } else { digits.parse().ok()? };
    let denom = 10i128.checked_pow(frac_part.len() as u32)?;
    let value = Exact::new(numer, denom);
    Some(if neg { -value } else { value })
}

/// Converts a finite `f64` to the exact decimal it prints as.
///
/// JSON numbers such as `0.3` become exactly 3/10, not the nearest binary
/// fraction.
pub fn exact_from_f64(x: f64) -> Option<Exact> {
    if !x.is_finite() {
        return None;
    }
    parse_decimal(&format!("{x}"))
}

pub fn exact_to_f64(x: &Exact) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// A nonnegative bit rate in bits per second.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct DataRate(Exact);

impl DataRate {
    pub const ZERO: DataRate = DataRate(Ratio::new_raw(0, 1));

    /// Returns `None` for negative values.
    pub fn new(bits_per_second: Exact) -> Option<Self> {
        if bits_per_second.is_negative() {
            None
        } else {
            Some(DataRate(bits_per_second))
        }
    }

    pub fn from_bps(bps: u64) -> Self {
        DataRate(Exact::from_integer(bps as i128))
    }

    pub fn from_kbps(kbps: u64) -> Self {
        DataRate(Exact::from_integer(kbps as i128 * KILO))
    }

    pub fn from_mbps(mbps: u64) -> Self {
        DataRate(Exact::from_integer(mbps as i128 * MEGA))
    }

    /// Exact rate from a decimal Mb/s figure, e.g. `from_mbps_f64(73.2672)`.
    pub fn from_mbps_f64(mbps: f64) -> Option<Self> {
        exact_from_f64(mbps).and_then(|m| DataRate::new(m * MEGA))
    }

    pub fn bits_per_second(&self) -> Exact {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn as_bps_f64(&self) -> f64 {
        exact_to_f64(&self.0)
    }

    pub fn as_mbps_f64(&self) -> f64 {
        exact_to_f64(&(self.0 / MEGA))
    }

    pub fn mbps(&self) -> Exact {
        self.0 / MEGA
    }

    /// Bits carried over `seconds` at this rate.
    pub fn bits_over(&self, seconds: Exact) -> Exact {
        self.0 * seconds
    }

    pub fn scale(&self, factor: i128) -> DataRate {
        DataRate(self.0 * factor.max(0))
    }

    /// Human-readable rendering with an SI prefix and two decimals.
    pub fn display_si(&self) -> String {
        let v = self.0;
        let (div, unit) = if v >= Exact::from_integer(GIGA) {
            (GIGA, "Gb/s")
        } else if v >= Exact::from_integer(MEGA) {
            (MEGA, "Mb/s")
        } else if v >= Exact::from_integer(KILO) {
            (KILO, "kb/s")
        } else {
            (1, "b/s")
        };
        format!("{} {unit}", format_fixed(&(v / div), 2))
    }
}

impl fmt::Display for DataRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display_si())
    }
}

impl Add for DataRate {
    type Output = DataRate;
    fn add(self, rhs: DataRate) -> DataRate {
        DataRate(self.0 + rhs.0)
    }
}

impl Sum for DataRate {
    fn sum<I: Iterator<Item = DataRate>>(iter: I) -> DataRate {
        iter.fold(DataRate::ZERO, Add::add)
    }
}

impl<'a> Sum<&'a DataRate> for DataRate {
    fn sum<I: Iterator<Item = &'a DataRate>>(iter: I) -> DataRate {
        iter.copied().sum()
    }
}

/// A signed duration in milliseconds, held exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Millis(pub Exact);

impl Millis {
    pub const ZERO: Millis = Millis(Ratio::new_raw(0, 1));

    pub fn from_int(ms: i128) -> Self {
        Millis(Exact::from_integer(ms))
    }

    pub fn exact(&self) -> Exact {
        self.0
    }

    pub fn rounded(&self) -> i128 {
        round_half_up(&self.0)
    }

    pub fn as_f64(&self) -> f64 {
        exact_to_f64(&self.0)
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    /// Nearest integer nanosecond count (half-up); negative values clamp to 0.
    pub fn to_nanos(&self) -> u64 {
        round_half_up(&(self.0 * MEGA)).max(0) as u64
    }
}

impl fmt::Display for Millis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ms", format_fixed(&self.0, 2))
    }
}

impl Add for Millis {
    type Output = Millis;
    fn add(self, rhs: Millis) -> Millis {
        Millis(self.0 + rhs.0)
    }
}

impl Sub for Millis {
    type Output = Millis;
    fn sub(self, rhs: Millis) -> Millis {
        Millis(self.0 - rhs.0)
    }
}

/// Serializes an exact value as a JSON number via its decimal expansion.
pub fn serialize_exact_f64<S: Serializer>(x: &Exact, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(exact_to_f64(x))
}

pub fn deserialize_exact_f64<'de, D: Deserializer<'de>>(d: D) -> Result<Exact, D::Error> {
    let v = f64::deserialize(d)?;
    exact_from_f64(v).ok_or_else(|| serde::de::Error::custom(format!("not a finite decimal: {v}")))
}

impl Serialize for DataRate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        serialize_exact_f64(&self.0, s)
    }
}

impl<'de> Deserialize<'de> for DataRate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = deserialize_exact_f64(d)?;
        DataRate::new(v).ok_or_else(|| serde::de::Error::custom("negative data rate"))
    }
}
