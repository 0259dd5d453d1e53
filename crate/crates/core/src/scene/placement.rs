use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::bank::{SceneSpec, HEAD_CELL};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};

/// Most persons that may be placed in one depth band.
pub const BAND_CAPACITY: usize = 256;

/// Head radius in pixels for a person standing at the bottom edge.
const NEAR_HEAD_RADIUS: f64 = 3.0;

/// Axis-aligned pixel rectangle, half-open: `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxPx {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersonPlacement {
    pub head_xy: [f64; 2],
    pub head_radius: f64,
    pub footprint: BoxPx,
    /// Depth proxy at the footprint base; larger is farther.
    pub depth: f64,
    pub band: usize,
    pub appearance_seed: u64,
}

impl PersonPlacement {
    /// Build a person from head position and radius; the body hangs below.
    pub fn at(spec: &SceneSpec, head: [f64; 2], radius: f64, appearance_seed: u64) -> Self {
        let footprint = BoxPx {
            x0: head[0] - 1.3 * radius,
            y0: head[1] - radius,
            x1: head[0] + 1.3 * radius,
            y1: head[1] + 6.0 * radius,
        };
        Self {
            head_xy: head,
            head_radius: radius,
            footprint,
            depth: spec.depth_at(footprint.y1),
            band: 0,
            appearance_seed,
        }
    }
}

/// Scatter `count` persons over distinct head cells of the ROI, sort them
/// back-to-front and split them into depth bands of at most
/// [`BAND_CAPACITY`] persons.
pub fn place_crowd(spec: &SceneSpec, count: usize, seed: u64) -> Result<Vec<PersonPlacement>> {
    let cells = spec.head_cells();
    if count > cells.len() {
        return Err(Error::Capacity {
            requested: count,
            capacity: cells.len(),
            roi_area: spec.roi.area(),
        });
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let mut rng = rng_from(derive_seed(seed, 0x91ace));
    let h = spec.height() as f64;
    let picks = sample(&mut rng, cells.len(), count);
    let mut people: Vec<PersonPlacement> = picks
        .into_iter()
        .map(|ci| {
            let (cx, cy) = cells[ci];
            let (ox, oy) = ((cx * HEAD_CELL) as f64, (cy * HEAD_CELL) as f64);
            let centre = [ox + HEAD_CELL as f64 / 2.0, oy + HEAD_CELL as f64 / 2.0];
            let mut head = centre;
            for _ in 0..8 {
                let cand = [ox + rng.gen_range(0.5..7.5), oy + rng.gen_range(0.5..7.5)];
                if spec.roi.contains(cand[0], cand[1]) {
                    head = cand;
                    break;
                }
            }
            let perspective = 0.55 + 0.45 * (head[1] / h);
            let radius = NEAR_HEAD_RADIUS * perspective * rng.gen_range(0.9..1.1);
            PersonPlacement::at(spec, head, radius, rng.gen())
        })
        .collect();
    // far first; ties broken by x for determinism
    people.sort_by(|a, b| {
        b.depth
            .total_cmp(&a.depth)
            .then(a.head_xy[0].total_cmp(&b.head_xy[0]))
    });
    let bands = count.div_ceil(BAND_CAPACITY);
    let per_band = count.div_ceil(bands);
    for (i, p) in people.iter_mut().enumerate() {
        p.band = i / per_band;
    }
    Ok(people)
}
