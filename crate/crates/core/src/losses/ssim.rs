use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsimConfig {
    /// Side of the square Gaussian window.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range of the inputs.
    pub range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            range: 1.0,
        }
    }
}

impl SsimConfig {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.range).powi(2)
    }

    /// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let c = (self.window as f64 - 1.0) / 2.0;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - c;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let z: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / z).collect()
    }

    /// Same settings with the window shrunk to fit an `h × w` image.
    pub fn fitted(&self, h: usize, w: usize) -> Self {
        Self {
            window: self.window.min(h).min(w),
            ..*self
        }
    }
}

/// Mean SSIM between two `[N, C, H, W]` nodes over every valid window
/// position of every plane.
pub fn ssim_index<T: Real>(g: &Graph<T>, a: Var, b: Var, cfg: &SsimConfig) -> Result<Var> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa != sb || sa.len() != 4 {
        return Err(Error::Shape(format!("ssim operands {sa:?} and {sb:?} must be equal NCHW shapes")));
    }
    if cfg.window == 0 || cfg.window > sa[2] || cfg.window > sa[3] {
        return Err(Error::Argument(format!(
            "ssim window {} does not fit a {}x{} image",
            cfg.window, sa[2], sa[3]
        )));
    }
    let taps: Vec<T> = cfg.taps().into_iter().map(T::of).collect();
    let blur = |v: Var| g.blur(v, &taps);
    let (mu_a, mu_b) = (blur(a), blur(b));
    let (mu_aa, mu_bb, mu_ab) = (g.square(mu_a), g.square(mu_b), g.mul(mu_a, mu_b));
    let var_a = g.sub(blur(g.square(a)), mu_aa);
    let var_b = g.sub(blur(g.square(b)), mu_bb);
    let cov = g.sub(blur(g.mul(a, b)), mu_ab);
    let (c1, c2) = (T::of(cfg.c1()), T::of(cfg.c2()));
    let two = T::of(2.0);
    let num = g.mul(g.add_scalar(g.scale(mu_ab, two), c1), g.add_scalar(g.scale(cov, two), c2));
    let den = g.mul(g.add_scalar(g.add(mu_aa, mu_bb), c1), g.add_scalar(g.add(var_a, var_b), c2));
    Ok(g.mean(g.div(num, den)))
}

/// Tensor-level SSIM, evaluated in double precision.
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>, cfg: &SsimConfig) -> Result<f64> {
    let as4 = |t: &Tensor<T>| -> Result<Tensor<f64>> {
        let t = t.cast::<f64>();
        match t.shape().len() {
            2 => {
                let s = t.shape().to_vec();
                t.reshape(&[1, 1, s[0], s[1]])
            }
            3 => {
                let s = t.shape().to_vec();
                t.reshape(&[1, s[0], s[1], s[2]])
            }
            _ => Ok(t),
        }
    };
    let g = Graph::<f64>::new();
    let (a, b) = (g.constant(as4(a)?), g.constant(as4(b)?));
    let v = ssim_index(&g, a, b, cfg)?;
    Ok(g.item(v))
}
