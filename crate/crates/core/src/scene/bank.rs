use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::geometry::Polygon;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};

/// Upper end of the head-count range for each capacity level; every range starts at 0.
pub const LEVEL_MAX_COUNT: [u32; 9] = [10, 25, 50, 100, 300, 600, 1000, 2000, 4000];

pub const CAMERAS_PER_LOCATION: u8 = 4;

/// Side of the square cell that may hold at most one head.
pub const HEAD_CELL: usize = 8;

pub fn level_range(level: u8) -> Result<(u32, u32)> {
    LEVEL_MAX_COUNT
        .get(level as usize)
        .map(|&m| (0, m))
        .ok_or_else(|| Error::Argument(format!("level {level} outside 0..=8")))
}

/// Images generated per scene before applying a global scale: 30 for
/// levels 0-2, 40 for 3-5, 50 for 6-8.
pub fn images_per_scene(level: u8, scale: f64) -> usize {
    let base = match level {
        0..=2 => 30.0,
        3..=5 => 40.0,
        _ => 50.0,
    };
    ((base * scale).round() as usize).max(1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub location_id: u32,
    pub camera_id: u8,
    pub roi: Polygon,
    pub level: u8,
    /// `(height, width)` in pixels.
    pub image_size: (usize, usize),
    /// Drives background appearance; shared palette per location.
    pub appearance_seed: u64,
}

impl SceneSpec {
    pub fn height(&self) -> usize {
        self.image_size.0
    }

    pub fn width(&self) -> usize {
        self.image_size.1
    }

    /// Depth proxy at row `y`: 1 at the top edge, 0 at the bottom edge.
    /// Larger `y` is nearer to the camera.
    pub fn depth_at(&self, y: f64) -> f64 {
        let h = self.height() as f64;
        (h - y) / h
    }

    /// Per-pixel depth proxy, row-major `H × W`.
    pub fn depth_field(&self) -> Vec<f64> {
        let (h, w) = self.image_size;
        (0..h)
            .flat_map(|y| std::iter::repeat(self.depth_at(y as f64 + 0.5)).take(w))
            .collect()
    }

    /// Head cells (8×8 grid) whose centre lies inside the ROI.
    pub fn head_cells(&self) -> Vec<(usize, usize)> {
        let (h, w) = self.image_size;
        let mut cells = Vec::new();
        for cy in 0..h / HEAD_CELL {
            for cx in 0..w / HEAD_CELL {
                let (x, y) = (
                    (cx * HEAD_CELL) as f64 + HEAD_CELL as f64 / 2.0,
                    (cy * HEAD_CELL) as f64 + HEAD_CELL as f64 / 2.0,
                );
                if self.roi.contains(x, y) {
                    cells.push((cx, cy));
                }
            }
        }
        cells
    }

    pub fn capacity(&self) -> usize {
        self.head_cells().len()
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        if h == 0 || w == 0 {
            return Err(Error::Argument("scene image size must be positive".into()));
        }
        if self.camera_id >= CAMERAS_PER_LOCATION {
            return Err(Error::Argument(format!("camera id {} outside 0..=3", self.camera_id)));
        }
        level_range(self.level)?;
        if !self.roi.is_simple() {
            return Err(Error::Argument("roi polygon is not simple".into()));
        }
        let (x0, y0, x1, y1) = self.roi.bounds();
        if x0 < 0.0 || y0 < 0.0 || x1 > w as f64 || y1 > h as f64 {
            return Err(Error::Argument("roi extends outside the image".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankConfig {
    pub n_locations: usize,
    pub seed: u64,
    /// Levels to distribute over scenes; defaults to all nine.
    pub levels: Vec<u8>,
    /// Fixed `(height, width)`; when absent each scene is sized to hold its level.
    pub image_size: Option<(usize, usize)>,
}

impl BankConfig {
    pub fn new(n_locations: usize, seed: u64) -> Self {
        Self {
            n_locations,
            seed,
            levels: (0..9).collect(),
            image_size: None,
        }
    }
}

pub fn build_scene_bank(n_locations: usize, seed: u64) -> Result<Vec<SceneSpec>> {
    build_scene_bank_with(&BankConfig::new(n_locations, seed))
}

/// Star-shaped ROI in unit coordinates. Vertices are sorted by angle around an
/// interior centre, which keeps the polygon simple.
fn unit_roi(rng: &mut impl Rng) -> Polygon {
    let k = rng.gen_range(6..=9);
    let margin = 0.03;
    let (cx, cy) = (0.5 + rng.gen_range(-0.05..0.05), 0.5 + rng.gen_range(-0.05..0.05));
    let mut verts = Vec::with_capacity(k);
    for i in 0..k {
        let theta = std::f64::consts::TAU * (i as f64 + rng.gen_range(-0.3..0.3)) / k as f64;
        let (dx, dy) = (theta.cos(), theta.sin());
        // distance from centre to the inset border along (dx, dy)
        let tx = if dx > 0.0 {
            (1.0 - margin - cx) / dx
        } else if dx < 0.0 {
            (margin - cx) / dx
        } else {
            f64::INFINITY
        };
        let ty = if dy > 0.0 {
            (1.0 - margin - cy) / dy
        } else if dy < 0.0 {
            (margin - cy) / dy
        } else {
            f64::INFINITY
        };
        let r = tx.min(ty) * rng.gen_range(0.8..1.0);
        verts.push([cx + r * dx, cy + r * dy]);
    }
    Polygon::new(verts)
}

fn round_up(x: f64, to: usize) -> usize {
    ((x / to as f64).ceil() as usize).max(1) * to
}

pub fn build_scene_bank_with(cfg: &BankConfig) -> Result<Vec<SceneSpec>> {
    if cfg.n_locations == 0 {
        return Err(Error::Argument("n_locations must be at least 1".into()));
    }
    if cfg.levels.is_empty() {
        return Err(Error::Argument("level list is empty".into()));
    }
    for &l in &cfg.levels {
        level_range(l)?;
    }
    let total = cfg.n_locations * CAMERAS_PER_LOCATION as usize;
    let mut rng = rng_from(derive_seed(cfg.seed, 0x5ce7e));
    // balanced level assignment in shuffled order
    let mut levels: Vec<u8> = (0..total).map(|i| cfg.levels[i % cfg.levels.len()]).collect();
    levels.shuffle(&mut rng);

    let mut specs = Vec::with_capacity(total);
    for loc in 0..cfg.n_locations {
        let palette = derive_seed(cfg.seed, 1_000_003 + loc as u64);
        for cam in 0..CAMERAS_PER_LOCATION {
            let idx = loc * CAMERAS_PER_LOCATION as usize + cam as usize;
            let level = levels[idx];
            let (_, max_count) = level_range(level)?;
            let mut srng = rng_from(derive_seed(cfg.seed, 7_919 * (idx as u64 + 1)));
            let unit = unit_roi(&mut srng);
            let frac = unit.area();
            let spec = match cfg.image_size {
                Some((h, w)) => {
                    let spec = SceneSpec {
                        location_id: loc as u32,
                        camera_id: cam,
                        roi: unit.scaled(w as f64, h as f64),
                        level,
                        image_size: (h, w),
                        appearance_seed: derive_seed(palette, cam as u64),
                    };
                    if spec.capacity() < max_count as usize {
                        return Err(Error::Argument(format!(
                            "level {level} (up to {max_count} heads) does not fit a {h}x{w} image (roi capacity {})",
                            spec.capacity()
                        )));
                    }
                    spec
                }
                None => {
                    let needed = (max_count as f64 * (HEAD_CELL * HEAD_CELL) as f64 * 1.15 / frac).sqrt();
                    let mut side = round_up(needed, 32).max(64);
                    loop {
                        let spec = SceneSpec {
                            location_id: loc as u32,
                            camera_id: cam,
                            roi: unit.scaled(side as f64, side as f64),
                            level,
                            image_size: (side, side),
                            appearance_seed: derive_seed(palette, cam as u64),
                        };
                        if spec.capacity() >= max_count as usize {
                            break spec;
                        }
                        side += 32;
                    }
                }
            };
            specs.push(spec);
        }
    }
    Ok(specs)
}
