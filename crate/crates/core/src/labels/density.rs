use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_SIGMA: f64 = 4.0;
pub const DEFAULT_LNF: f64 = 100.0;
/// Kernel half-width in units of sigma.
pub const TRUNCATE_SIGMAS: f64 = 4.0;

/// Non-negative `H × W` density field scaled by `lnf`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityMap {
    pub height: usize,
    pub width: usize,
    pub lnf: f64,
    pub sigma: f64,
    pub values: Vec<f64>,
}

impl DensityMap {
    pub fn zeros(height: usize, width: usize, sigma: f64, lnf: f64) -> Self {
        Self {
            height,
            width,
            lnf,
            sigma,
            values: vec![0.0; height * width],
        }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Integral divided by `lnf`.
    pub fn count(&self) -> f64 {
        self.sum() / self.lnf
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Mass-preserving sum pooling to `(H/f) × (W/f)`.
    pub fn pooled(&self, factor: usize) -> Result<DensityMap> {
        let t = Tensor::from_vec(&[1, 1, self.height, self.width], self.values.clone())?.sum_pool(factor)?;
        Ok(DensityMap {
            height: self.height / factor,
            width: self.width / factor,
            lnf: self.lnf,
            sigma: self.sigma,
            values: t.into_data(),
        })
    }

    /// `[1, H, W]` single-precision target.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec(
            &[1, self.height, self.width],
            self.values.iter().map(|&v| v as f32).collect(),
        )
        .expect("shape matches values")
    }
}

fn axis_weights(centre: f64, len: usize, sigma: f64) -> (usize, Vec<f64>) {
    let r = TRUNCATE_SIGMAS * sigma;
    let lo = (centre - r).floor().max(0.0) as usize;
    let hi = ((centre + r).floor() as usize).min(len - 1);
    let w = (lo..=hi)
        .map(|i| {
            let d = i as f64 + 0.5 - centre;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    (lo, w)
}

/// Place a truncated Gaussian of bandwidth `sigma` at each dot, each
/// renormalised after clipping so that it carries exactly `lnf` mass.
///
/// Pixel `(i, j)` has its centre at `(i + 0.5, j + 0.5)`.
pub fn density_from_dots(dots: &[[f64; 2]], shape: (usize, usize), sigma: f64, lnf: f64) -> Result<DensityMap> {
    let (h, w) = shape;
    if h == 0 || w == 0 {
        return Err(Error::Argument(format!("density shape {h}x{w} must be positive")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Argument(format!("sigma must be positive, got {sigma}")));
    }
    if !(lnf > 0.0 && lnf.is_finite()) {
        return Err(Error::Argument(format!("lnf must be positive, got {lnf}")));
    }
    let mut map = DensityMap::zeros(h, w, sigma, lnf);
    for (index, &[x, y]) in dots.iter().enumerate() {
        if !(x >= 0.0 && x < w as f64 && y >= 0.0 && y < h as f64) {
            return Err(Error::DotOutside {
                index,
                x,
                y,
                width: w,
                height: h,
            });
        }
        let (x0, wx) = axis_weights(x, w, sigma);
        let (y0, wy) = axis_weights(y, h, sigma);
        // separable kernel: total mass is the product of the axis sums
        let norm = lnf / (wx.iter().sum::<f64>() * wy.iter().sum::<f64>());
        for (dy, gy) in wy.iter().enumerate() {
            let row = &mut map.values[(y0 + dy) * w + x0..(y0 + dy) * w + x0 + wx.len()];
            for (v, gx) in row.iter_mut().zip(&wx) {
                *v += norm * gy * gx;
            }
        }
    }
    Ok(map)
}
