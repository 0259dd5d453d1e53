use super::{check_input, Bound, Schema, LEAKY_SLOPE, NORM_EPS};
use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::tensor::Real;

/// Image discriminator emitting one real/fake logit per patch:
/// two stride-2 conv4 layers and a conv3 projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchDiscArch {
    pub ndf: usize,
}

impl PatchDiscArch {
    pub(crate) fn declare(&self, s: &mut Schema) {
        let gain = 2f64.sqrt();
        s.conv("d.0", 3, self.ndf, 4, gain);
        s.conv("d.1", self.ndf, 2 * self.ndf, 4, gain);
        s.conv("d.2", 2 * self.ndf, 1, 3, 1.0);
    }

    /// `[N, 3, H, W]` in `[-1, 1]` to `[N, 1, H/4, W/4]` logits.
    pub fn forward<T: Real>(&self, g: &Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        check_input(g, x, 3, "patch discriminator")?;
        let slope = T::of(LEAKY_SLOPE);
        let y = g.leaky_relu(p.conv(g, "d.0", x, 2, 1), slope);
        let y = g.leaky_relu(g.instance_norm(p.conv(g, "d.1", y, 2, 1), T::of(NORM_EPS)), slope);
        Ok(p.conv(g, "d.2", y, 1, 1))
    }
}

/// Feature-level domain classifier: four conv3 layers with leaky ReLU
/// between them, strides `[1, 2, 1, 1]`, two output channels
/// (class 0 = synthetic, class 1 = real).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DomainClsArch {
    pub in_channels: usize,
    pub ndf: usize,
}

const DC_STRIDES: [usize; 4] = [1, 2, 1, 1];

impl DomainClsArch {
    pub(crate) fn declare(&self, s: &mut Schema) {
        let gain = 2f64.sqrt();
        let f = self.ndf;
        s.conv("dc.0", self.in_channels, f, 3, gain);
        s.conv("dc.1", f, 2 * f, 3, gain);
        s.conv("dc.2", 2 * f, 2 * f, 3, gain);
        s.conv("dc.3", 2 * f, 2, 3, 1.0);
    }

    /// `[N, C, h, w]` features to `[N, 2, ceil(h/2), ceil(w/2)]` logits.
    pub fn forward<T: Real>(&self, g: &Graph<T>, p: &Bound, f: Var) -> Result<Var> {
        check_input(g, f, self.in_channels, "domain classifier")?;
        let slope = T::of(LEAKY_SLOPE);
        let mut y = f;
        for (i, stride) in DC_STRIDES.into_iter().enumerate() {
            y = p.conv(g, &format!("dc.{i}"), y, stride, 1);
            if i < 3 {
                y = g.leaky_relu(y, slope);
            }
        }
        Ok(y)
    }
}
