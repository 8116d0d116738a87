//! Seat and microphone geometry: a 3×2 seat grid with one ceiling mic per seat.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::room::{Position, RoomSpec};
use crate::error::{Error, Result};

/// Per-clip uniform jitter on source positions, meters.
pub const SOURCE_JITTER: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneLayout {
    pub seats: Vec<Position>,
    pub mics: Vec<Position>,
}

impl Default for ZoneLayout {
    fn default() -> Self {
        Self::cabin()
    }
}

impl ZoneLayout {
    /// Zone `z = 2·row + col`; rows front to back, columns left to right.
    pub fn cabin() -> Self {
        let mut seats = Vec::with_capacity(6);
        let mut mics = Vec::with_capacity(6);
        for y in [0.55, 1.35, 2.15] {
            for x in [0.40, 1.05] {
                seats.push([x, y, 0.90]);
                mics.push([x, y, 1.15]);
            }
        }
        Self { seats, mics }
    }

    pub fn zones(&self) -> usize {
        self.seats.len()
    }

    pub fn validate(&self, room: &RoomSpec) -> Result<()> {
        if self.seats.len() != self.mics.len() || self.seats.is_empty() {
            return Err(Error::Config(format!(
                "layout needs one mic per seat, got {} seats and {} mics",
                self.seats.len(),
                self.mics.len()
            )));
        }
        for s in &self.seats {
            let lo = s.map(|v| v - SOURCE_JITTER);
            let hi = s.map(|v| v + SOURCE_JITTER);
            if !room.contains(&lo) || !room.contains(&hi) {
                return Err(Error::OutsideRoom(*s));
            }
        }
        match self.mics.iter().find(|m| !room.contains(m)) {
            Some(m) => Err(Error::OutsideRoom(*m)),
            None => Ok(()),
        }
    }

    /// Seat position of zone `z` with uniform ±[`SOURCE_JITTER`] per axis.
    pub fn jittered_seat<R: Rng>(&self, z: usize, rng: &mut R) -> Position {
        self.seats[z].map(|v| v + rng.random_range(-SOURCE_JITTER..=SOURCE_JITTER))
    }

    /// A uniform point inside the room at least 0.1 m from every wall and mic.
    pub fn random_noise_position<R: Rng>(&self, room: &RoomSpec, rng: &mut R) -> Position {
        loop {
            let p = room.dims.map(|d| rng.random_range(0.1..d - 0.1));
            let clear = self
                .mics
                .iter()
                .all(|m| m.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>() > 0.01);
            if clear {
                return p;
            }
        }
    }
}
