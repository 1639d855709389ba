use super::SkeletonError;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Number of ordered pair classes.
pub const NUM_CLASSES: usize = 9;

/// What a single worker is doing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActivityState {
    #[serde(rename = "W", alias = "Working")]
    Working,
    #[serde(rename = "P", alias = "Preparing")]
    Preparing,
    #[serde(rename = "R", alias = "Requesting")]
    Requesting,
}

impl ActivityState {
    pub const ALL: [ActivityState; 3] = [
        ActivityState::Working,
        ActivityState::Preparing,
        ActivityState::Requesting,
    ];

    pub fn ordinal(self) -> usize {
        match self {
            ActivityState::Working => 0,
            ActivityState::Preparing => 1,
            ActivityState::Requesting => 2,
        }
    }

    pub fn from_ordinal(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn letter(self) -> char {
        match self {
            ActivityState::Working => 'W',
            ActivityState::Preparing => 'P',
            ActivityState::Requesting => 'R',
        }
    }
}

impl fmt::Display for ActivityState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for ActivityState {
    type Err = SkeletonError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "W" | "Working" | "working" => Ok(ActivityState::Working),
            "P" | "Preparing" | "preparing" => Ok(ActivityState::Preparing),
            "R" | "Requesting" | "requesting" => Ok(ActivityState::Requesting),
            other => Err(SkeletonError::UnknownState(other.to_string())),
        }
    }
}

/// Ordered (left, right) pair of states. `(W, P)` and `(P, W)` are distinct
/// classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairLabel {
    pub left: ActivityState,
    pub right: ActivityState,
}

impl PairLabel {
    /// Row-major over (left, right) with W=0, P=1, R=2.
    pub fn class_index(&self) -> usize {
        3 * self.left.ordinal() + self.right.ordinal()
    }

    pub fn swapped(&self) -> PairLabel {
        PairLabel {
            left: self.right,
            right: self.left,
        }
    }

    pub fn name(&self) -> String {
        format!("{}{}", self.left.letter(), self.right.letter())
    }
}

pub fn encode_pair_label(left: ActivityState, right: ActivityState) -> PairLabel {
    PairLabel { left, right }
}

pub fn decode_pair_label(idx: usize) -> Result<(ActivityState, ActivityState), SkeletonError> {
    if idx >= NUM_CLASSES {
        return Err(SkeletonError::ClassIndexOutOfRange(idx));
    }
    // both ordinals are < 3 here
    Ok((
        ActivityState::ALL[idx / 3],
        ActivityState::ALL[idx % 3],
    ))
}

pub fn one_hot(label: &PairLabel) -> [f64; NUM_CLASSES] {
    let mut v = [0.0; NUM_CLASSES];
    v[label.class_index()] = 1.0;
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use ActivityState::*;

    #[test]
    fn encoding_examples() {
        assert_eq!(encode_pair_label(Working, Working).class_index(), 0);
        assert_eq!(encode_pair_label(Preparing, Requesting).class_index(), 5);
        assert_ne!(
            encode_pair_label(Working, Preparing).class_index(),
            encode_pair_label(Preparing, Working).class_index()
        );
    }

    #[test]
    fn all_pairs_round_trip() {
        let mut seen = [false; NUM_CLASSES];
        for a in ActivityState::ALL {
            for b in ActivityState::ALL {
                let idx = encode_pair_label(a, b).class_index();
                assert!(!seen[idx]);
                seen[idx] = true;
                assert_eq!(decode_pair_label(idx).unwrap(), (a, b));
            }
        }
        assert!(decode_pair_label(9).is_err());
    }

    #[test]
    fn one_hot_slots() {
        let first = one_hot(&encode_pair_label(Working, Working));
        assert_eq!(first, [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let last = one_hot(&encode_pair_label(Requesting, Requesting));
        assert_eq!(last[8], 1.0);
        for idx in 0..NUM_CLASSES {
            let (a, b) = decode_pair_label(idx).unwrap();
            assert_eq!(one_hot(&encode_pair_label(a, b)).iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn state_parsing() {
        assert_eq!("W".parse::<ActivityState>().unwrap(), Working);
        assert_eq!("Requesting".parse::<ActivityState>().unwrap(), Requesting);
        assert!("X".parse::<ActivityState>().is_err());
        let s: ActivityState = serde_json::from_str("\"Preparing\"").unwrap();
        assert_eq!(s, Preparing);
        assert_eq!(serde_json::to_string(&Preparing).unwrap(), "\"P\"");
    }
}
