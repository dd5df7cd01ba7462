//! Named image channels shared by the model variants and the view analysis.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::plane::Plane;
use crate::stain::{rgb_to_stain_pair, RgbTile};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    R,
    G,
    B,
    H,
    E,
}

impl Channel {
    pub const ALL: [Channel; 5] = [Channel::R, Channel::G, Channel::B, Channel::H, Channel::E];

    pub fn is_stain(self) -> bool {
        matches!(self, Channel::H | Channel::E)
    }

    pub fn letter(self) -> char {
        match self {
            Channel::R => 'r',
            Channel::G => 'g',
            Channel::B => 'b',
            Channel::H => 'h',
            Channel::E => 'e',
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter().to_ascii_uppercase())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "r" => Ok(Channel::R),
            "g" => Ok(Channel::G),
            "b" => Ok(Channel::B),
            "h" => Ok(Channel::H),
            "e" => Ok(Channel::E),
            other => Err(Error::InvalidInput(format!("unknown channel {other:?}"))),
        }
    }
}

/// One channel of a tile in `[0, 1]`: RGB as `v / 255`, H/E via stain separation.
pub fn extract_channel(tile: &RgbTile, which: Channel) -> Plane {
    match which {
        Channel::R => tile.channel(0),
        Channel::G => tile.channel(1),
        Channel::B => tile.channel(2),
        Channel::H => rgb_to_stain_pair(tile).into_planes().0,
        Channel::E => rgb_to_stain_pair(tile).into_planes().1,
    }
}

/// Several channels of one tile; stain separation runs at most once.
pub fn extract_channels(tile: &RgbTile, which: &[Channel]) -> Vec<Plane> {
    let stains = which
        .iter()
        .any(|c| c.is_stain())
        .then(|| rgb_to_stain_pair(tile).into_planes());
    which
        .iter()
        .map(|&c| match (c, &stains) {
            (Channel::H, Some((h, _))) => h.clone(),
            (Channel::E, Some((_, e))) => e.clone(),
            (c, _) => extract_channel(tile, c),
        })
        .collect()
}
