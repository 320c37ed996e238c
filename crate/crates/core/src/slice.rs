use serde::{Deserialize, Serialize};
use std::fmt;

/// Number of service classes simulated per base station.
pub const NUM_SLICES: usize = 3;

/// Service class of a network slice. The discriminant is the slice index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slice {
    Volte = 0,
    Embb = 1,
    Urllc = 2,
}

impl Slice {
    pub const ALL: [Slice; NUM_SLICES] = [Slice::Volte, Slice::Embb, Slice::Urllc];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Slice> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Slice::Volte => "volte",
            Slice::Embb => "embb",
            Slice::Urllc => "urllc",
        }
    }
}

impl fmt::Display for Slice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
