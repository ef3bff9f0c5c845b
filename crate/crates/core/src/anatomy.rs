//! Vertebral level and pedicle side tags, and annotated pedicle regions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Vec3};

const LEVELS: [&str; 17] = [
    "T1", "T2", "T3", "T4", "T5", "T6", "T7", "T8", "T9", "T10", "T11", "T12", "L1", "L2", "L3",
    "L4", "L5",
];

/// Vertebral level, T1 through L5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Level(u8);

impl Level {
    pub fn all() -> impl Iterator<Item = Level> {
        (0..LEVELS.len() as u8).map(Level)
    }

    pub fn name(self) -> &'static str {
        LEVELS[self.0 as usize]
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LEVELS
            .iter()
            .position(|l| l.eq_ignore_ascii_case(s))
            .map(|i| Level(i as u8))
            .ok_or_else(|| Error::invalid(format!("unknown vertebral level {s:?}")))
    }
}

impl TryFrom<String> for Level {
    type Error = Error;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Level> for String {
    fn from(l: Level) -> Self {
        l.name().to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    /// Encoding used in the action vector: 0 = left, 1 = right.
    pub fn code(self) -> u8 {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Side> {
        match c {
            0 => Some(Side::Left),
            1 => Some(Side::Right),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "left" | "l" => Ok(Side::Left),
            "right" | "r" => Ok(Side::Right),
            _ => Err(Error::invalid(format!("unknown pedicle side {s:?}"))),
        }
    }
}

/// Capsule-shaped pedicle isthmus: all points within `radius_mm` of the
/// segment `start_mm`..`end_mm`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PedicleRegion {
    pub side: Side,
    pub start_mm: Vec3,
    pub end_mm: Vec3,
    pub radius_mm: f64,
}

impl PedicleRegion {
    pub fn contains(&self, p: &Vec3) -> bool {
        let ab = self.end_mm - self.start_mm;
        let len2 = ab.norm_squared();
        let t = if len2 > 0.0 {
            ((p - self.start_mm).dot(&ab) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (p - (self.start_mm + ab * t)).norm() <= self.radius_mm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_parse_and_order() {
        let t12: Level = "T12".parse().unwrap();
        let l1: Level = "l1".parse().unwrap();
        assert!(t12 < l1);
        assert_eq!(l1.to_string(), "L1");
        assert!("C7".parse::<Level>().is_err());
        assert_eq!(Level::all().count(), 17);
        assert_eq!(serde_json::to_string(&t12).unwrap(), "\"T12\"");
    }

    #[test]
    fn region_membership() {
        let r = PedicleRegion {
            side: Side::Left,
            start_mm: Vec3::zeros(),
            end_mm: Vec3::new(0.0, 10.0, 0.0),
            radius_mm: 2.0,
        };
        assert!(r.contains(&Vec3::new(1.9, 5.0, 0.0)));
        assert!(!r.contains(&Vec3::new(2.1, 5.0, 0.0)));
        assert!(r.contains(&Vec3::new(0.0, 11.5, 0.0)));
    }
}
