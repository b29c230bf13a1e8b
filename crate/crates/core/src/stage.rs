use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// A pipeline stage, plus the hull shader's patch constant function which is
/// costed separately but shares the hull shader's regressor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ia,
    Vs,
    Hs,
    Pcf,
    Tess,
    Ds,
    Gs,
    Ras,
    Ps,
    Om,
    Cs,
}

impl Stage {
    /// The nine graphics pipeline stages in pipeline order.
    pub const PIPELINE: [Stage; 9] = [
        Stage::Ia,
        Stage::Vs,
        Stage::Hs,
        Stage::Tess,
        Stage::Ds,
        Stage::Gs,
        Stage::Ras,
        Stage::Ps,
        Stage::Om,
    ];

    pub const ALL: [Stage; 11] = [
        Stage::Ia,
        Stage::Vs,
        Stage::Hs,
        Stage::Pcf,
        Stage::Tess,
        Stage::Ds,
        Stage::Gs,
        Stage::Ras,
        Stage::Ps,
        Stage::Om,
        Stage::Cs,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Stage::Ia => "ia",
            Stage::Vs => "vs",
            Stage::Hs => "hs",
            Stage::Pcf => "pcf",
            Stage::Tess => "tess",
            Stage::Ds => "ds",
            Stage::Gs => "gs",
            Stage::Ras => "ras",
            Stage::Ps => "ps",
            Stage::Om => "om",
            Stage::Cs => "cs",
        }
    }

    pub fn is_programmable(self) -> bool {
        matches!(
            self,
            Stage::Vs | Stage::Hs | Stage::Pcf | Stage::Ds | Stage::Gs | Stage::Ps | Stage::Cs
        )
    }

    /// Stage whose opcode cost table prices this stage's shaders. The patch
    /// constant function runs on hull shader hardware.
    pub fn cost_stage(self) -> Stage {
        match self {
            Stage::Pcf => Stage::Hs,
            s => s,
        }
    }

    /// Position of the stage in the explanatory vector (slot 0 is the
    /// intercept). PCF folds into the hull shader slot.
    pub fn slot(self) -> usize {
        match self {
            Stage::Ia => 1,
            Stage::Vs => 2,
            Stage::Hs | Stage::Pcf => 3,
            Stage::Tess => 4,
            Stage::Ds => 5,
            Stage::Gs => 6,
            Stage::Ras => 7,
            Stage::Ps => 8,
            Stage::Om => 9,
            Stage::Cs => 10,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .iter()
            .copied()
            .find(|st| st.key().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.key().parse::<Stage>().unwrap(), s);
        }
        assert!("xx".parse::<Stage>().is_err());
    }

    #[test]
    fn slots_cover_vector() {
        let mut slots: Vec<usize> = Stage::PIPELINE.iter().map(|s| s.slot()).collect();
        slots.sort();
        assert_eq!(slots, (1..=9).collect::<Vec<_>>());
        assert_eq!(Stage::Pcf.slot(), Stage::Hs.slot());
        assert_eq!(Stage::Pcf.cost_stage(), Stage::Hs);
    }
}
