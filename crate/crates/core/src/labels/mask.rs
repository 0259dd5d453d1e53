use crate::error::{Error, Result};
use crate::scene::PersonMask;

/// Row-major `H × W` boolean mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "mask {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    /// Accepts exactly 0 (background) and 1 or 255 (crowd).
    pub fn from_u8(height: usize, width: usize, raw: &[u8]) -> Result<Self> {
        let data = raw
            .iter()
            .enumerate()
            .map(|(i, &v)| match v {
                0 => Ok(false),
                1 | 255 => Ok(true),
                other => Err(Error::Argument(format!("mask value {other} at index {i} is not binary"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_vec(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// 0 for background, 255 for crowd.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&b| if b { 255 } else { 0 }).collect()
    }

    pub fn inverted(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }
}

/// Pixelwise OR of the visible person masks of one render.
pub fn mask_from_render(person_masks: &[PersonMask], shape: (usize, usize)) -> Result<BinaryMask> {
    let (h, w) = shape;
    let mut out = BinaryMask::zeros(h, w);
    for (i, m) in person_masks.iter().enumerate() {
        if m.image_size() != shape {
            return Err(Error::Argument(format!(
                "person mask {i} is {:?}, expected {:?}",
                m.image_size(),
                shape
            )));
        }
        for (x, y) in m.pixels() {
            out.set(x, y, true);
        }
    }
    Ok(out)
}
