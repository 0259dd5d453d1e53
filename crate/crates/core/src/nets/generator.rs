use super::{check_input, Bound, Schema, NORM_EPS};
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Residual image translator: conv5 stem, two stride-2 convs, `n_res`
/// residual blocks, two stride-2 deconvs and a conv5 + tanh output.
/// The encoder ends after the residual blocks (last layer before the
/// first upsampling), so its output stride is 4.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeneratorArch {
    pub ngf: usize,
    pub n_res: usize,
}

pub const GENERATOR_STRIDE: usize = 4;

impl GeneratorArch {
    pub fn bottleneck_channels(&self) -> usize {
        4 * self.ngf
    }

    pub(crate) fn declare(&self, s: &mut Schema) {
        let f = self.ngf;
        let relu_gain = 2f64.sqrt();
        s.conv("enc.0", 3, f, 5, relu_gain);
        s.conv("enc.1", f, 2 * f, 3, relu_gain);
        s.conv("enc.2", 2 * f, 4 * f, 3, relu_gain);
        for r in 0..self.n_res {
            s.conv(&format!("res.{r}.0"), 4 * f, 4 * f, 3, relu_gain);
            s.conv(&format!("res.{r}.1"), 4 * f, 4 * f, 3, 1.0);
        }
        s.deconv("dec.0", 4 * f, 2 * f, 4, relu_gain);
        s.deconv("dec.1", 2 * f, f, 4, relu_gain);
        s.conv("dec.2", f, 3, 5, 1.0);
    }

    fn norm_relu<T: Real>(g: &Graph<T>, x: Var) -> Var {
        g.relu(g.instance_norm(x, T::of(NORM_EPS)))
    }

    /// `x` is `[N, 3, H, W]` in `[-1, 1]`, `H` and `W` multiples of 4.
    pub fn encode<T: Real>(&self, g: &Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let (_, h, w) = check_input(g, x, 3, "generator")?;
        if h % GENERATOR_STRIDE != 0 || w % GENERATOR_STRIDE != 0 {
            return Err(Error::Shape(format!(
                "generator input {h}x{w} is not a multiple of {GENERATOR_STRIDE}"
            )));
        }
        let mut y = Self::norm_relu(g, p.conv(g, "enc.0", x, 1, 2));
        y = Self::norm_relu(g, p.conv(g, "enc.1", y, 2, 1));
        y = Self::norm_relu(g, p.conv(g, "enc.2", y, 2, 1));
        for r in 0..self.n_res {
            let t = Self::norm_relu(g, p.conv(g, &format!("res.{r}.0"), y, 1, 1));
            let t = g.instance_norm(p.conv(g, &format!("res.{r}.1"), t, 1, 1), T::of(NORM_EPS));
            y = g.add(y, t);
        }
        Ok(y)
    }

    pub fn decode<T: Real>(&self, g: &Graph<T>, p: &Bound, f: Var) -> Result<Var> {
        check_input(g, f, self.bottleneck_channels(), "generator decoder")?;
        let y = Self::norm_relu(g, p.deconv(g, "dec.0", f, 2, 1));
        let y = Self::norm_relu(g, p.deconv(g, "dec.1", y, 2, 1));
        Ok(g.tanh(p.conv(g, "dec.2", y, 1, 2)))
    }

    pub fn forward<T: Real>(&self, g: &Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let f = self.encode(g, p, x)?;
        self.decode(g, p, f)
    }
}
