use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::bank::{level_range, SceneSpec};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};

pub const MINUTES_PER_DAY: u16 = 1440;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Weather {
    Clear = 0,
    Clouds = 1,
    Rain = 2,
    Foggy = 3,
    Thunder = 4,
    Overcast = 5,
    ExtraSunny = 6,
}

impl Weather {
    pub const ALL: [Weather; 7] = [
        Weather::Clear,
        Weather::Clouds,
        Weather::Rain,
        Weather::Foggy,
        Weather::Thunder,
        Weather::Overcast,
        Weather::ExtraSunny,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }
}

impl TryFrom<u8> for Weather {
    type Error = Error;

    fn try_from(code: u8) -> Result<Self> {
        Weather::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| Error::Argument(format!("weather code {code} outside 0..=6")))
    }
}

impl From<Weather> for u8 {
    fn from(w: Weather) -> u8 {
        w.code()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneAttributes {
    /// Minutes after midnight, `0..1440`.
    pub time_of_day: u16,
    pub weather: Weather,
    pub target_count: u32,
}

/// Relative frequency of each weather code; fine weather dominates.
const WEATHER_WEIGHTS: [f64; 7] = [0.30, 0.20, 0.08, 0.07, 0.05, 0.15, 0.15];
/// Share of scenes captured between 06:00 and 19:59.
const DAYTIME_SHARE: f64 = 0.75;

pub fn sample_attributes(spec: &SceneSpec, rng_seed: u64) -> Result<SceneAttributes> {
    let (lo, hi) = level_range(spec.level)?;
    let mut rng = rng_from(derive_seed(rng_seed, 0xa77));
    let time_of_day = if rng.gen_bool(DAYTIME_SHARE) {
        rng.gen_range(360..1200)
    } else {
        rng.gen_range(0..MINUTES_PER_DAY)
    };
    let weather = Weather::ALL[WeightedIndex::new(WEATHER_WEIGHTS)
        .expect("static weights")
        .sample(&mut rng)];
    let target_count = rng.gen_range(lo..=hi);
    Ok(SceneAttributes {
        time_of_day,
        weather,
        target_count,
    })
}
