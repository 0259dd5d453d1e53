//! Scene regularisation (rule-based filtering of synthetic scenes toward a
//! target domain) and density regularisation (zeroing implausible pixels).

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::{Manifest, ManifestRecord};
use crate::error::{Error, Result};
use crate::scene::{LEVEL_MAX_COUNT, MINUTES_PER_DAY};

/// One row of a target-domain filter table. All ranges are inclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub levels: BTreeSet<u8>,
    /// Minutes after midnight, `[start, end]`.
    pub time_window: [u16; 2],
    pub weathers: BTreeSet<u8>,
    pub count_range: [u32; 2],
    /// Fraction of the level's maximum count.
    pub ratio_range: [f64; 2],
}

const BUILTIN: [(&str, &str); 5] = [
    ("sht_a", include_str!("../../rules/sht_a.json")),
    ("sht_b", include_str!("../../rules/sht_b.json")),
    ("ucf_cc_50", include_str!("../../rules/ucf_cc_50.json")),
    ("ucf_qnrf", include_str!("../../rules/ucf_qnrf.json")),
    ("worldexpo10", include_str!("../../rules/worldexpo10.json")),
];

/// Clause of a [`FilterRule`], in evaluation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clause {
    Level,
    Time,
    Weather,
    Count,
    Ratio,
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Clause::Level => "level",
            Clause::Time => "time",
            Clause::Weather => "weather",
            Clause::Count => "count",
            Clause::Ratio => "ratio",
        };
        f.write_str(s)
    }
}

impl FilterRule {
    pub fn from_json(text: &str) -> Result<Self> {
        let r: FilterRule = serde_json::from_str(text)?;
        r.validate()?;
        Ok(r)
    }

    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTIN.iter().map(|(n, _)| *n)
    }

    pub fn builtin(name: &str) -> Result<Self> {
        let (_, text) = BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Argument(format!("no built-in filter rule named {name:?}")))?;
        Self::from_json(text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::config(key, msg));
        if self.levels.is_empty() {
            return bad("levels", "must not be empty".into());
        }
        if let Some(l) = self.levels.iter().find(|&&l| l > 8) {
            return bad("levels", format!("level {l} outside 0..=8"));
        }
        if self.weathers.is_empty() {
            return bad("weathers", "must not be empty".into());
        }
        if let Some(w) = self.weathers.iter().find(|&&w| w > 6) {
            return bad("weathers", format!("weather code {w} outside 0..=6"));
        }
        let [t0, t1] = self.time_window;
        if t0 > t1 || t1 >= MINUTES_PER_DAY {
            return bad("time_window", format!("[{t0}, {t1}] must be ordered minutes within a day"));
        }
        let [c0, c1] = self.count_range;
        if c0 > c1 {
            return bad("count_range", format!("[{c0}, {c1}] is not ordered"));
        }
        let [r0, r1] = self.ratio_range;
        if !(r0.is_finite() && r1.is_finite() && 0.0 <= r0 && r0 <= r1) {
            return bad("ratio_range", format!("[{r0}, {r1}] must be ordered non-negative fractions"));
        }
        Ok(())
    }

    /// First clause the record fails, or `None` if it is kept.
    pub fn first_failure(&self, r: &ManifestRecord) -> Result<Option<Clause>> {
        let level = r.require("level", r.level)?;
        let time = r.require("time", r.time)?;
        let weather = r.require("weather", r.weather)?;
        let count = r.require("count", r.count)?;
        if level > 8 {
            return Err(Error::Argument(format!("record {}: level {level} outside 0..=8", r.id)));
        }
        if !self.levels.contains(&level) {
            return Ok(Some(Clause::Level));
        }
        if !(self.time_window[0] <= time && time <= self.time_window[1]) {
            return Ok(Some(Clause::Time));
        }
        if !self.weathers.contains(&weather) {
            return Ok(Some(Clause::Weather));
        }
        if !(self.count_range[0] <= count && count <= self.count_range[1]) {
            return Ok(Some(Clause::Count));
        }
        let ratio = count as f64 / LEVEL_MAX_COUNT[level as usize] as f64;
        if !(self.ratio_range[0] <= ratio && ratio <= self.ratio_range[1]) {
            return Ok(Some(Clause::Ratio));
        }
        Ok(None)
    }

    pub fn accepts(&self, r: &ManifestRecord) -> Result<bool> {
        Ok(self.first_failure(r)?.is_none())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub id: String,
    pub clause: Clause,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterOutcome {
    pub kept: Manifest,
    pub rejected: Vec<Rejection>,
}

/// Keep the records that satisfy every clause of `rule`.
pub fn apply_scene_filter(manifest: &Manifest, rule: &FilterRule) -> Result<FilterOutcome> {
    rule.validate()?;
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for r in &manifest.records {
        match rule.first_failure(r)? {
            None => kept.push(r.clone()),
            Some(clause) => rejected.push(Rejection { id: r.id.clone(), clause }),
        }
    }
    Ok(FilterOutcome {
        kept: Manifest::new(kept),
        rejected,
    })
}

/// Largest per-pixel density seen in the synthetic training targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityBound {
    pub max_s: f64,
}

impl DensityBound {
    pub fn new(max_s: f64) -> Result<Self> {
        if !(max_s > 0.0 && max_s.is_finite()) {
            return Err(Error::Argument(format!("max_s must be positive, got {max_s}")));
        }
        Ok(Self { max_s })
    }
}

pub fn fit_density_bound<'a, I>(maps: I) -> Result<DensityBound>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut seen = false;
    let mut max = f64::NEG_INFINITY;
    for m in maps {
        seen = true;
        for &v in m {
            if !v.is_finite() {
                return Err(Error::Argument(format!("non-finite density value {v}")));
            }
            max = max.max(v);
        }
    }
    if !seen {
        return Err(Error::Argument("fit_density_bound needs at least one map".into()));
    }
    DensityBound::new(max)
}

/// Set every pixel strictly above `max_s` to zero.
pub fn density_clip(map: &[f64], bound: &DensityBound) -> Result<Vec<f64>> {
    if let Some((i, v)) = map.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::Contract(format!("density pixel {i} is {v}; predictions must be non-negative")));
    }
    Ok(map.iter().map(|&v| if v > bound.max_s { 0.0 } else { v }).collect())
}
