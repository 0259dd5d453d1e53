//! Sprite compositing: procedural backgrounds, ellipse-stack persons drawn
//! back-to-front, and a global light model driven by time and weather.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attributes::{SceneAttributes, Weather, MINUTES_PER_DAY};
use super::bank::SceneSpec;
use super::placement::PersonPlacement;
use crate::error::{Error, Result};
use crate::labels::BinaryMask;
use crate::rng::{derive_seed, rng_from};
use crate::tensor::Tensor;

/// Appearance family of a generated domain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderStyle {
    /// Warm, clean, saturated: the synthetic source look.
    #[default]
    Game,
    /// Dark asphalt, pale clothing, sensor grain: a second, visually distinct domain.
    Street,
}

/// Visible pixels of one person, stored inside its clipped footprint.
#[derive(Clone, Debug, PartialEq)]
pub struct PersonMask {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    bits: Vec<bool>,
    image_size: (usize, usize),
}

impl PersonMask {
    fn empty(x0: usize, y0: usize, width: usize, height: usize, image_size: (usize, usize)) -> Self {
        Self {
            x0,
            y0,
            width,
            height,
            bits: vec![false; width * height],
            image_size,
        }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0
            && y >= self.y0
            && x < self.x0 + self.width
            && y < self.y0 + self.height
            && self.bits[(y - self.y0) * self.width + (x - self.x0)]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (self.x0 + i % self.width, self.y0 + i / self.width))
    }

    pub fn to_dense(&self) -> BinaryMask {
        let (h, w) = self.image_size;
        let mut m = BinaryMask::zeros(h, w);
        for (x, y) in self.pixels() {
            m.set(x, y, true);
        }
        m
    }

    pub fn image_size(&self) -> (usize, usize) {
        self.image_size
    }
}

pub struct Rendered {
    /// `[3, H, W]`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    /// Visible-pixel masks aligned with the input placements.
    pub person_masks: Vec<PersonMask>,
}

/// Mean luminance multiplier: darkest at midnight, brightest at noon.
pub fn daylight(time_of_day: u16) -> f32 {
    let phase = std::f32::consts::TAU * time_of_day as f32 / MINUTES_PER_DAY as f32;
    0.3 + 0.7 * (0.5 - 0.5 * phase.cos())
}

fn weather_gain(w: Weather) -> f32 {
    match w {
        Weather::Clear => 1.0,
        Weather::Clouds => 0.9,
        Weather::Rain => 0.75,
        Weather::Foggy => 0.9,
        Weather::Thunder => 0.6,
        Weather::Overcast => 0.82,
        Weather::ExtraSunny => 1.1,
    }
}

fn in_ellipse(px: usize, py: usize, cx: f64, cy: f64, rx: f64, ry: f64) -> bool {
    let dx = (px as f64 + 0.5 - cx) / rx;
    let dy = (py as f64 + 0.5 - cy) / ry;
    dx * dx + dy * dy <= 1.0
}

fn clip_box(p: &PersonPlacement, h: usize, w: usize) -> Option<(usize, usize, usize, usize)> {
    let x0 = p.footprint.x0.floor().max(0.0) as usize;
    let y0 = p.footprint.y0.floor().max(0.0) as usize;
    let x1 = (p.footprint.x1.ceil().max(0.0) as usize).min(w);
    let y1 = (p.footprint.y1.ceil().max(0.0) as usize).min(h);
    (x1 > x0 && y1 > y0).then_some((x0, y0, x1, y1))
}

/// Pixels covered by a person's head: centres inside the head disk, plus the
/// pixel holding the head point itself.
pub fn head_pixels(p: &PersonPlacement, h: usize, w: usize) -> Vec<(usize, usize)> {
    let [hx, hy] = p.head_xy;
    let r = p.head_radius;
    let mut out = Vec::new();
    let ys = (hy - r).floor().max(0.0) as usize..((hy + r).ceil().max(0.0) as usize).min(h);
    for y in ys {
        let xs = (hx - r).floor().max(0.0) as usize..((hx + r).ceil().max(0.0) as usize).min(w);
        for x in xs {
            if in_ellipse(x, y, hx, hy, r, r) {
                out.push((x, y));
            }
        }
    }
    let (fx, fy) = (hx.floor(), hy.floor());
    if fx >= 0.0 && fy >= 0.0 && (fx as usize) < w && (fy as usize) < h {
        let c = (fx as usize, fy as usize);
        if !out.contains(&c) {
            out.push(c);
        }
    }
    out
}

fn hsv(h: f32, s: f32, v: f32) -> [f32; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    match (i as i32).rem_euclid(6) {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

struct Palette {
    ground: [f32; 3],
    roi: [f32; 3],
    texture: f32,
    tile: usize,
    grain: f32,
}

fn palette(spec: &SceneSpec, style: RenderStyle) -> Palette {
    let mut rng = rng_from(derive_seed(spec.appearance_seed, 0xc01));
    let j = |rng: &mut crate::rng::Rng, v: f32| (v + rng.gen_range(-0.06f32..0.06)).clamp(0.0, 1.0);
    match style {
        RenderStyle::Game => {
            let ground = [j(&mut rng, 0.85), j(&mut rng, 0.78), j(&mut rng, 0.6)];
            let roi = [j(&mut rng, 0.92), j(&mut rng, 0.86), j(&mut rng, 0.7)];
            Palette {
                ground,
                roi,
                texture: 0.05,
                tile: rng.gen_range(6..12),
                grain: 0.0,
            }
        }
        RenderStyle::Street => {
            let ground = [j(&mut rng, 0.22), j(&mut rng, 0.25), j(&mut rng, 0.3)];
            let roi = [j(&mut rng, 0.3), j(&mut rng, 0.32), j(&mut rng, 0.36)];
            Palette {
                ground,
                roi,
                texture: 0.08,
                tile: rng.gen_range(4..9),
                grain: 0.05,
            }
        }
    }
}

fn person_colors(p: &PersonPlacement, style: RenderStyle) -> ([f32; 3], [f32; 3]) {
    let mut rng = rng_from(p.appearance_seed);
    match style {
        RenderStyle::Game => {
            let body = hsv(rng.gen(), rng.gen_range(0.6..1.0), rng.gen_range(0.35..0.75));
            let v = rng.gen_range(0.08..0.25);
            let head = [v * 1.1, v * 0.9, v * 0.8];
            (body, head)
        }
        RenderStyle::Street => {
            let body = hsv(rng.gen(), rng.gen_range(0.05..0.3), rng.gen_range(0.7..0.95));
            let v = rng.gen_range(0.8..1.0);
            (body, [v, v * 0.97, v * 0.9])
        }
    }
}

pub fn render(spec: &SceneSpec, attrs: &SceneAttributes, placements: &[PersonPlacement]) -> Result<Rendered> {
    render_styled(spec, attrs, placements, RenderStyle::Game)
}

pub fn render_styled(
    spec: &SceneSpec,
    attrs: &SceneAttributes,
    placements: &[PersonPlacement],
    style: RenderStyle,
) -> Result<Rendered> {
    let (h, w) = spec.image_size;
    if h == 0 || w == 0 {
        return Err(Error::Argument("empty image size".into()));
    }
    let pal = palette(spec, style);
    let plane = h * w;
    let mut rgb = vec![0f32; 3 * plane];

    let grain_seed = derive_seed(
        spec.appearance_seed,
        (attrs.time_of_day as u64) << 32 | attrs.target_count as u64,
    );
    let mut grain_rng = rng_from(grain_seed);
    for y in 0..h {
        let shade = 0.85 + 0.15 * (y as f32 / h as f32);
        for x in 0..w {
            let inside = spec.roi.contains(x as f64 + 0.5, y as f64 + 0.5);
            let base = if inside { pal.roi } else { pal.ground };
            let tex = match style {
                RenderStyle::Game => {
                    if ((x / pal.tile) + (y / pal.tile)) % 2 == 0 {
                        pal.texture
                    } else {
                        -pal.texture
                    }
                }
                RenderStyle::Street => {
                    if (x + 2 * y) % (pal.tile * 3) < pal.tile {
                        pal.texture
                    } else {
                        0.0
                    }
                }
            };
            let g = if pal.grain > 0.0 {
                grain_rng.gen_range(-pal.grain..pal.grain)
            } else {
                0.0
            };
            for c in 0..3 {
                rgb[c * plane + y * w + x] = base[c] * shade + tex + g;
            }
        }
    }

    // back-to-front: larger depth first, input order breaks ties
    let mut order: Vec<usize> = (0..placements.len()).collect();
    order.sort_by(|&a, &b| placements[b].depth.total_cmp(&placements[a].depth).then(a.cmp(&b)));

    const NONE: u32 = u32::MAX;
    let mut owner = vec![NONE; plane];
    for &i in &order {
        let p = &placements[i];
        let Some((x0, y0, x1, y1)) = clip_box(p, h, w) else { continue };
        let (body, head) = person_colors(p, style);
        let [hx, hy] = p.head_xy;
        let r = p.head_radius;
        let (bcx, bcy, brx, bry) = (hx, hy + 3.5 * r, 1.25 * r, 2.6 * r);
        for y in y0..y1 {
            for x in x0..x1 {
                if in_ellipse(x, y, bcx, bcy, brx, bry) {
                    let k = y * w + x;
                    owner[k] = i as u32;
                    let lit = 1.0 - 0.25 * ((y as f64 + 0.5 - (bcy - bry)) / (2.0 * bry)) as f32;
                    for c in 0..3 {
                        rgb[c * plane + k] = body[c] * lit;
                    }
                }
            }
        }
        for (x, y) in head_pixels(p, h, w) {
            let k = y * w + x;
            owner[k] = i as u32;
            for c in 0..3 {
                rgb[c * plane + k] = head[c];
            }
        }
    }

    let gain = daylight(attrs.time_of_day) * weather_gain(attrs.weather);
    let fog = matches!(attrs.weather, Weather::Foggy);
    let rain = matches!(attrs.weather, Weather::Rain | Weather::Thunder);
    for k in 0..plane {
        let streak = rain && (k % w + (k / w) * 3) % 17 == 0;
        for c in 0..3 {
            let mut v = rgb[c * plane + k] * gain;
            if fog {
                v = 0.6 * v + 0.4 * 0.7 * gain;
            }
            if streak {
                v = 0.7 * v + 0.3 * 0.8 * gain;
            }
            rgb[c * plane + k] = v.clamp(0.0, 1.0);
        }
    }

    let person_masks = placements
        .iter()
        .enumerate()
        .map(|(i, p)| match clip_box(p, h, w) {
            None => PersonMask::empty(0, 0, 0, 0, (h, w)),
            Some((x0, y0, x1, y1)) => {
                let mut m = PersonMask::empty(x0, y0, x1 - x0, y1 - y0, (h, w));
                for y in y0..y1 {
                    for x in x0..x1 {
                        if owner[y * w + x] == i as u32 {
                            m.bits[(y - y0) * m.width + (x - x0)] = true;
                        }
                    }
                }
                m
            }
        })
        .collect();

    Ok(Rendered {
        image: Tensor::from_vec(&[3, h, w], rgb)?,
        person_masks,
    })
}

/// Keep the head dots of persons whose visible head fraction reaches `threshold`.
pub fn prune_occluded(
    placements: &[PersonPlacement],
    person_masks: &[PersonMask],
    threshold: f64,
) -> Result<Vec<[f64; 2]>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Argument(format!("occlusion threshold {threshold} outside [0, 1]")));
    }
    if placements.len() != person_masks.len() {
        return Err(Error::Argument(format!(
            "{} placements but {} masks",
            placements.len(),
            person_masks.len()
        )));
    }
    let mut dots = Vec::with_capacity(placements.len());
    for (p, m) in placements.iter().zip(person_masks) {
        let (h, w) = m.image_size();
        let head = head_pixels(p, h, w);
        let visible = head.iter().filter(|&&(x, y)| m.contains(x, y)).count();
        let frac = if head.is_empty() {
            0.0
        } else {
            visible as f64 / head.len() as f64
        };
        if frac >= threshold {
            dots.push(p.head_xy);
        }
    }
    Ok(dots)
}
