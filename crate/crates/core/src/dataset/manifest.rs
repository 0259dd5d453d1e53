use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::RenderStyle;

/// One image of a dataset. Attribute fields are optional so that hand-made
/// or foreign manifests still load; consumers that need them fail with the
/// record id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub image: String,
    pub label: String,
    pub mask: String,
    pub location_id: u32,
    pub camera_id: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<u8>,
    /// Minutes after midnight.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weather: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<RenderStyle>,
}

impl ManifestRecord {
    pub fn require<T: Copy>(&self, field: &'static str, v: Option<T>) -> Result<T> {
        v.ok_or_else(|| Error::MissingAttribute {
            id: self.id.clone(),
            field,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn new(records: Vec<ManifestRecord>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Parse and check that ids are unique and paths are relative.
    pub fn from_json(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if r.id.is_empty() {
                return Err(Error::Argument("manifest record with empty id".into()));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Argument(format!("duplicate manifest id {:?}", r.id)));
            }
            for p in [&r.image, &r.label, &r.mask] {
                let path = Path::new(p);
                if path.is_absolute() || path.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
                    return Err(Error::Argument(format!("record {:?}: path {p:?} escapes the dataset root", r.id)));
                }
            }
            if r.camera_id > 3 {
                return Err(Error::Argument(format!("record {:?}: camera_id {} outside 0..=3", r.id, r.camera_id)));
            }
            if let Some(l) = r.level {
                if l > 8 {
                    return Err(Error::Argument(format!("record {:?}: level {l} outside 0..=8", r.id)));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn get(&self, id: &str) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Records with the given ids, in the order of `ids`.
    pub fn subset(&self, ids: &[String]) -> Result<Manifest> {
        ids.iter()
            .map(|id| {
                self.get(id)
                    .cloned()
                    .ok_or_else(|| Error::Argument(format!("id {id:?} not in manifest")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Manifest::new)
    }
}
