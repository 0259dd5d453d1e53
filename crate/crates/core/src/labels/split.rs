use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::Manifest;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};

pub const TEST_FRACTION: f64 = 0.25;
pub const VAL_FRACTION: f64 = 0.10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitStrategy {
    Random,
    CrossCamera,
    CrossLocation,
}

impl FromStr for SplitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "cross_camera" => Ok(Self::CrossCamera),
            "cross_location" => Ok(Self::CrossLocation),
            other => Err(Error::Argument(format!(
                "unknown split strategy {other:?} (expected random, cross_camera or cross_location)"
            ))),
        }
    }
}

impl fmt::Display for SplitStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Random => "random",
            Self::CrossCamera => "cross_camera",
            Self::CrossLocation => "cross_location",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub strategy: SplitStrategy,
    pub seed: u64,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl Split {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Split = serde_json::from_str(text)?;
        let mut seen = BTreeSet::new();
        for id in s.train_ids.iter().chain(&s.val_ids).chain(&s.test_ids) {
            if !seen.insert(id) {
                return Err(Error::Argument(format!("split lists id {id:?} twice")));
            }
        }
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("split serializes")
    }

    /// Check the split partitions exactly the ids of `manifest`.
    pub fn check_against(&self, manifest: &Manifest) -> Result<()> {
        let all: BTreeSet<&str> = manifest.records.iter().map(|r| r.id.as_str()).collect();
        let listed: Vec<&str> = self
            .train_ids
            .iter()
            .chain(&self.val_ids)
            .chain(&self.test_ids)
            .map(String::as_str)
            .collect();
        let set: BTreeSet<&str> = listed.iter().copied().collect();
        if set.len() != listed.len() || set != all {
            return Err(Error::Argument(
                "split does not partition the manifest ids".into(),
            ));
        }
        Ok(())
    }
}

fn share(n: usize, fraction: f64) -> usize {
    (n as f64 * fraction).round() as usize
}

/// Partition a manifest into train/val/test following one of the three
/// protocols, then move 10% of train into validation.
pub fn split_manifest(manifest: &Manifest, strategy: SplitStrategy, seed: u64) -> Result<Split> {
    if manifest.is_empty() {
        return Err(Error::Argument("cannot split an empty manifest".into()));
    }
    let mut rng = rng_from(derive_seed(seed, 0x5b1));
    let recs = &manifest.records;
    let mut test: Vec<usize> = match strategy {
        SplitStrategy::Random => {
            let mut idx: Vec<usize> = (0..recs.len()).collect();
            idx.shuffle(&mut rng);
            idx.truncate(share(recs.len(), TEST_FRACTION));
            idx
        }
        SplitStrategy::CrossCamera => {
            let mut cams: BTreeMap<u32, BTreeSet<u8>> = BTreeMap::new();
            for r in recs {
                cams.entry(r.location_id).or_default().insert(r.camera_id);
            }
            let mut held = BTreeMap::new();
            for (loc, set) in &cams {
                if set.len() < 2 {
                    return Err(Error::Argument(format!(
                        "cross_camera split needs at least 2 cameras at location {loc}, found {}",
                        set.len()
                    )));
                }
                let v: Vec<u8> = set.iter().copied().collect();
                held.insert(*loc, *v.choose(&mut rng).expect("non-empty"));
            }
            (0..recs.len())
                .filter(|&i| held[&recs[i].location_id] == recs[i].camera_id)
                .collect()
        }
        SplitStrategy::CrossLocation => {
            let mut locs: Vec<u32> = recs
                .iter()
                .map(|r| r.location_id)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            if locs.len() < 2 {
                return Err(Error::Argument(
                    "cross_location split needs at least 2 locations".into(),
                ));
            }
            locs.shuffle(&mut rng);
            let n_test = share(locs.len(), TEST_FRACTION).clamp(1, locs.len() - 1);
            let held: BTreeSet<u32> = locs[..n_test].iter().copied().collect();
            (0..recs.len())
                .filter(|&i| held.contains(&recs[i].location_id))
                .collect()
        }
    };
    test.sort_unstable();
    let in_test: BTreeSet<usize> = test.iter().copied().collect();
    let mut train: Vec<usize> = (0..recs.len()).filter(|i| !in_test.contains(i)).collect();
    train.shuffle(&mut rng);
    let n_val = share(train.len(), VAL_FRACTION);
    let mut val: Vec<usize> = train.drain(..n_val).collect();
    train.sort_unstable();
    val.sort_unstable();
    let ids = |v: &[usize]| v.iter().map(|&i| recs[i].id.clone()).collect::<Vec<_>>();
    Ok(Split {
        strategy,
        seed,
        train_ids: ids(&train),
        val_ids: ids(&val),
        test_ids: ids(&test),
    })
}
