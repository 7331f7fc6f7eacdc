//! Straight roads along `+y` with per-lane boundary profiles.

use serde::{Deserialize, Serialize};

use crate::costs::{BoundaryProfile, LaneBounds};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RoadLayout {
    /// Two lanes of width `ℓ_w` either side of the center line.
    TwoLane,
    /// Two lanes split by a barrier for `lane_length` meters, a taper from
    /// width `2ℓ_w` to `ℓ_w` over `merge_length` meters, then one lane.
    Merging { lane_length: f64, merge_length: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadGeometry {
    pub lane_width: f64,
    pub center_x: f64,
    pub layout: RoadLayout,
}

/// Which part of the road an agent's boundary barrier tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lane {
    /// Both edges of the paved road.
    Road,
    /// The `-x` lane of a merging road before the taper.
    Left,
    /// The `+x` lane of a merging road before the taper.
    Right,
}

impl RoadGeometry {
    pub fn two_lane(lane_width: f64) -> Self {
        Self { lane_width, center_x: 0.0, layout: RoadLayout::TwoLane }
    }

    pub fn merging(lane_width: f64) -> Self {
        Self {
            lane_width,
            center_x: 0.0,
            layout: RoadLayout::Merging { lane_length: 30.0, merge_length: 30.0 },
        }
    }

    /// Paved width at station `y` with its slope.
    pub fn width_at(&self, y: f64) -> (f64, f64) {
        let w = self.lane_width;
        match self.layout {
            RoadLayout::TwoLane => (2.0 * w, 0.0),
            RoadLayout::Merging { lane_length, merge_length } => {
                if y <= lane_length {
                    (2.0 * w, 0.0)
                } else if y < lane_length + merge_length {
                    let slope = -w / merge_length;
                    (2.0 * w + slope * (y - lane_length), slope)
                } else {
                    (w, 0.0)
                }
            }
        }
    }

    /// Station where the taper begins, if any.
    pub fn merge_start(&self) -> Option<f64> {
        match self.layout {
            RoadLayout::TwoLane => None,
            RoadLayout::Merging { lane_length, .. } => Some(lane_length),
        }
    }

    pub fn bounds(&self, y: f64, lane: Lane) -> LaneBounds {
        let (width, slope) = self.width_at(y);
        let c = self.center_x;
        let road = LaneBounds {
            left: c - width / 2.0,
            left_slope: -slope / 2.0,
            right: c + width / 2.0,
            right_slope: slope / 2.0,
        };
        let separated = self.merge_start().is_some_and(|s| y <= s);
        match lane {
            Lane::Left if separated => LaneBounds { right: c, right_slope: 0.0, ..road },
            Lane::Right if separated => LaneBounds { left: c, left_slope: 0.0, ..road },
            _ => road,
        }
    }

    pub fn profile(&self, lane: Lane) -> LaneProfile {
        LaneProfile { road: *self, lane }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LaneProfile {
    pub road: RoadGeometry,
    pub lane: Lane,
}

impl BoundaryProfile for LaneProfile {
    fn bounds(&self, station: f64) -> LaneBounds {
        self.road.bounds(station, self.lane)
    }
}
