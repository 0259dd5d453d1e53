//! On-disk dataset layout: `manifest.json`, `images/*.png`, `masks/*.png`
//! (0 background, 255 crowd) and `labels/*.json`.

mod manifest;
mod png_io;

pub use manifest::{Manifest, ManifestRecord};
pub use png_io::{decode_mask, decode_rgb, encode_mask, encode_rgb, MAX_SIDE};

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::BinaryMask;
use crate::rng::derive_seed;
use crate::scene::{
    build_scene_bank_with, generate_sample, images_per_scene, BankConfig, RenderStyle, SampleOptions, SceneAttributes,
};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Contents of `labels/<id>.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelFile {
    pub dots: Vec<[f64; 2]>,
    pub count: usize,
    pub attributes: SceneAttributes,
}

impl LabelFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let l: LabelFile = serde_json::from_str(text)?;
        if l.count != l.dots.len() {
            return Err(Error::Argument(format!(
                "label count {} disagrees with {} dots",
                l.count,
                l.dots.len()
            )));
        }
        if let Some(d) = l.dots.iter().find(|d| !(d[0].is_finite() && d[1].is_finite())) {
            return Err(Error::Argument(format!("non-finite dot {d:?}")));
        }
        Ok(l)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_locations: usize,
    pub seed: u64,
    /// Multiplier on the 30/40/50 images-per-scene rule.
    pub scale: f64,
    pub levels: Vec<u8>,
    pub image_size: Option<(usize, usize)>,
    pub style: RenderStyle,
    pub occlusion_threshold: f64,
}

impl GenConfig {
    pub fn new(n_locations: usize, seed: u64) -> Self {
        let bank = BankConfig::new(n_locations, seed);
        let opts = SampleOptions::default();
        Self {
            n_locations,
            seed,
            scale: 1.0,
            levels: bank.levels,
            image_size: bank.image_size,
            style: opts.style,
            occlusion_threshold: opts.occlusion_threshold,
        }
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Generate a dataset tree under `root` and return its manifest.
pub fn generate_dataset(root: &Path, cfg: &GenConfig) -> Result<Manifest> {
    if !(cfg.scale > 0.0 && cfg.scale.is_finite()) {
        return Err(Error::Argument(format!("scale must be positive, got {}", cfg.scale)));
    }
    let mut bank_cfg = BankConfig::new(cfg.n_locations, cfg.seed);
    bank_cfg.levels = cfg.levels.clone();
    bank_cfg.image_size = cfg.image_size;
    let bank = build_scene_bank_with(&bank_cfg)?;
    for dir in ["images", "masks", "labels"] {
        let d = root.join(dir);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let opts = SampleOptions {
        occlusion_threshold: cfg.occlusion_threshold,
        style: cfg.style,
    };
    let mut records = Vec::new();
    for spec in &bank {
        let n = images_per_scene(spec.level, cfg.scale);
        for k in 0..n {
            let id = format!("L{:03}C{}_{:04}", spec.location_id, spec.camera_id, k);
            let seed = derive_seed(spec.appearance_seed, k as u64);
            let s = generate_sample(spec, seed, &opts)?;
            let rec = ManifestRecord {
                image: format!("images/{id}.png"),
                label: format!("labels/{id}.json"),
                mask: format!("masks/{id}.png"),
                id,
                location_id: spec.location_id,
                camera_id: spec.camera_id,
                level: Some(spec.level),
                time: Some(s.attributes.time_of_day),
                weather: Some(s.attributes.weather.code()),
                count: Some(s.count() as u32),
                style: Some(cfg.style),
            };
            write(&root.join(&rec.image), &encode_rgb(&s.image)?)?;
            write(&root.join(&rec.mask), &encode_mask(&s.mask)?)?;
            let label = LabelFile {
                count: s.dots.len(),
                dots: s.dots,
                attributes: s.attributes,
            };
            write(&root.join(&rec.label), serde_json::to_string(&label)?.as_bytes())?;
            records.push(rec);
        }
    }
    let manifest = Manifest::new(records);
    write(&root.join(MANIFEST_FILE), manifest.to_json().as_bytes())?;
    Ok(manifest)
}

/// An image with its labels, decoded into memory.
#[derive(Clone, Debug)]
pub struct LabeledSample {
    pub id: String,
    /// `[3, H, W]` in `[0, 1]`.
    pub image: Tensor<f32>,
    pub dots: Vec<[f64; 2]>,
    pub mask: BinaryMask,
}

impl LabeledSample {
    pub fn count(&self) -> usize {
        self.dots.len()
    }
}

/// A dataset directory. Label-file reads are counted so that callers can
/// prove a regime never looked at labels of a given domain.
#[derive(Debug)]
pub struct Dataset {
    root: PathBuf,
    manifest: Manifest,
    label_reads: AtomicUsize,
}

impl Dataset {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self::with_manifest(root, Manifest::from_json(&text)?))
    }

    pub fn with_manifest(root: impl Into<PathBuf>, manifest: Manifest) -> Self {
        Self {
            root: root.into(),
            manifest,
            label_reads: AtomicUsize::new(0),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    fn record(&self, id: &str) -> Result<&ManifestRecord> {
        self.manifest
            .get(id)
            .ok_or_else(|| Error::Argument(format!("id {id:?} not in dataset {}", self.root.display())))
    }

    pub fn load_image(&self, id: &str) -> Result<Tensor<f32>> {
        decode_rgb(&read(&self.root.join(&self.record(id)?.image))?)
    }

    pub fn load_mask(&self, id: &str) -> Result<BinaryMask> {
        decode_mask(&read(&self.root.join(&self.record(id)?.mask))?)
    }

    pub fn load_label(&self, id: &str) -> Result<LabelFile> {
        self.label_reads.fetch_add(1, Ordering::SeqCst);
        let path = self.root.join(&self.record(id)?.label);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        LabelFile::from_json(&text)
    }

    /// Number of label files read through this handle so far.
    pub fn label_reads(&self) -> usize {
        self.label_reads.load(Ordering::SeqCst)
    }

    pub fn load_labeled(&self, ids: &[String]) -> Result<Vec<LabeledSample>> {
        ids.iter()
            .map(|id| {
                let image = self.load_image(id)?;
                let label = self.load_label(id)?;
                let mask = self.load_mask(id)?;
                let (h, w) = (image.shape()[1], image.shape()[2]);
                if mask.shape() != (h, w) {
                    return Err(Error::Shape(format!("record {id}: mask {:?} vs image {h}x{w}", mask.shape())));
                }
                Ok(LabeledSample {
                    id: id.clone(),
                    image,
                    dots: label.dots,
                    mask,
                })
            })
            .collect()
    }

    pub fn load_images(&self, ids: &[String]) -> Result<Vec<Tensor<f32>>> {
        ids.iter().map(|id| self.load_image(id)).collect()
    }

    pub fn all_ids(&self) -> Vec<String> {
        self.manifest.records.iter().map(|r| r.id.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generate_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = GenConfig::new(1, 5);
        cfg.levels = vec![0, 1];
        cfg.image_size = Some((64, 64));
        cfg.scale = 0.1;
        let m = generate_dataset(dir.path(), &cfg).unwrap();
        assert_eq!(m.len(), 4 * 3);
        let ds = Dataset::open(dir.path()).unwrap();
        assert_eq!(ds.manifest(), &m);
        assert_eq!(ds.label_reads(), 0);
        let ids = ds.all_ids();
        let s = ds.load_labeled(&ids[..2]).unwrap();
        assert_eq!(ds.label_reads(), 2);
        assert_eq!(s[0].image.shape(), &[3, 64, 64]);
        assert_eq!(s[0].count() as u32, m.records[0].count.unwrap());
        ds.load_images(&ids).unwrap();
        assert_eq!(ds.label_reads(), 2);
    }

    #[test]
    fn label_file_checks_count() {
        let good = r#"{"dots":[[1.0,2.0]],"count":1,"attributes":{"time_of_day":5,"weather":0,"target_count":1}}"#;
        assert!(LabelFile::from_json(good).is_ok());
        let bad = good.replace("\"count\":1", "\"count\":2");
        assert!(LabelFile::from_json(&bad).is_err());
    }
}
