use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error};

pub const NUM_GRADES: usize = 5;

/// Ordinal quality class: `c0` is the best quality, `c4` the worst.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct QualityGrade(u8);

impl QualityGrade {
    pub const C0: QualityGrade = QualityGrade(0);
    pub const C4: QualityGrade = QualityGrade(4);

    pub fn new(index: usize) -> Result<Self, Error> {
        if index < NUM_GRADES {
            Ok(QualityGrade(index as u8))
        } else {
            Err(invalid!("quality grade {index} outside c0..c4"))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn all() -> impl Iterator<Item = QualityGrade> {
        (0..NUM_GRADES as u8).map(QualityGrade)
    }

    /// Index of the largest value; ties resolve to the lowest (best) grade.
    pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> QualityGrade {
        let mut best = 0;
        for (i, v) in values.iter().enumerate().skip(1) {
            if *v > values[best] {
                best = i;
            }
        }
        QualityGrade(best as u8)
    }
}

impl TryFrom<u8> for QualityGrade {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self, Error> {
        QualityGrade::new(v as usize)
    }
}

impl From<QualityGrade> for u8 {
    fn from(g: QualityGrade) -> u8 {
        g.0
    }
}

impl fmt::Display for QualityGrade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

impl FromStr for QualityGrade {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        let digits = s.strip_prefix('c').unwrap_or(s);
        let idx: usize = digits
            .parse()
            .map_err(|_| invalid!("cannot parse quality grade {s:?}"))?;
        QualityGrade::new(idx)
    }
}
