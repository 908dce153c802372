//! Identifiers shared across the pipeline: country codes, Hofstede
//! dimensions and governance indicators.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// Three-letter uppercase country code, used as the join key across datasets.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CountryCode([u8; 3]);

impl CountryCode {
    pub fn as_str(&self) -> &str {
        // Construction guarantees ASCII.
        std::str::from_utf8(&self.0).expect("country code is ASCII")
    }

    /// Builds the `n`-th code in the sequence AAA, AAB, ..., ZZZ.
    pub fn nth(n: usize) -> Option<Self> {
        if n >= 26 * 26 * 26 {
            return None;
        }
        let b = |k: usize| b'A' + k as u8;
        Some(CountryCode([b(n / 676), b((n / 26) % 26), b(n % 26)]))
    }
}

impl FromStr for CountryCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let bytes = s.trim().as_bytes();
        if bytes.len() == 3 && bytes.iter().all(|b| b.is_ascii_uppercase()) {
            Ok(CountryCode([bytes[0], bytes[1], bytes[2]]))
        } else {
            Err(Error::InvalidCode(s.to_string()))
        }
    }
}

impl fmt::Display for CountryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for CountryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CountryCode({})", self.as_str())
    }
}

impl Serialize for CountryCode {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for CountryCode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Hofstede's six cultural dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Dimension {
    Pdi,
    Idv,
    Mas,
    Uai,
    Lto,
    Ivr,
}

impl Dimension {
    pub const ALL: [Dimension; 6] = [
        Dimension::Pdi,
        Dimension::Idv,
        Dimension::Mas,
        Dimension::Uai,
        Dimension::Lto,
        Dimension::Ivr,
    ];
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Dimension::Pdi => "PDI",
            Dimension::Idv => "IDV",
            Dimension::Mas => "MAS",
            Dimension::Uai => "UAI",
            Dimension::Lto => "LTO",
            Dimension::Ivr => "IVR",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// The six worldwide governance indicators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Governance {
    Va,
    Pv,
    Ge,
    Rq,
    Rl,
    Cc,
}

impl Governance {
    pub const ALL: [Governance; 6] = [
        Governance::Va,
        Governance::Pv,
        Governance::Ge,
        Governance::Rq,
        Governance::Rl,
        Governance::Cc,
    ];
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Governance::Va => "VA",
            Governance::Pv => "PV",
            Governance::Ge => "GE",
            Governance::Rq => "RQ",
            Governance::Rl => "RL",
            Governance::Cc => "CC",
        }
    }
}

impl fmt::Display for Governance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}
