use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// One of the two players. Agent one's state block precedes agent two's in
/// every joint state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Agent {
    One,
    Two,
}

impl Agent {
    pub const BOTH: [Agent; 2] = [Agent::One, Agent::Two];

    /// Zero-based index (0 for agent one).
    pub fn index(self) -> usize {
        match self {
            Agent::One => 0,
            Agent::Two => 1,
        }
    }

    pub fn other(self) -> Agent {
        match self {
            Agent::One => Agent::Two,
            Agent::Two => Agent::One,
        }
    }

    /// One-based number, as used in configs and output files.
    pub fn number(self) -> u8 {
        self.index() as u8 + 1
    }
}

impl TryFrom<u8> for Agent {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            1 => Ok(Agent::One),
            2 => Ok(Agent::Two),
            other => Err(format!("agent must be 1 or 2, got {other}")),
        }
    }
}

impl From<Agent> for u8 {
    fn from(a: Agent) -> u8 {
        a.number()
    }
}

impl std::fmt::Display for Agent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "A{}", self.number())
    }
}

/// States `x_1 .. x_T`.
pub type Trajectory = Vec<DVector<f64>>;

/// One agent's controls `u_1 .. u_T`.
pub type ControlSeq = Vec<DVector<f64>>;

/// Both agents' control sequences, indexed by [`Agent::index`].
pub type Controls = [ControlSeq; 2];

/// Derives a child seed from a master seed and a path of indices.
///
/// The mapping only depends on its inputs, so work split over any number of
/// threads draws identical random streams.
pub fn seed_for(master: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        // splitmix64 finalizer
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    path.iter()
        .fold(mix(master), |acc, &p| mix(acc ^ mix(p.wrapping_add(0x5851_F42D_4C95_7F2D))))
}
