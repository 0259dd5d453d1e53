use super::{check_input, Bound, Init, Schema};
use crate::autograd::{Direction, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Real;

pub const SFCN_STRIDE: usize = 8;
/// Width of the 1-D kernels of the spatial encoder.
pub const SENC_KERNEL: usize = 9;
const SENC_NAMES: [&str; 4] = ["down", "up", "ltr", "rtl"];

/// Ten 3×3 conv layers (stride 2 at layers 2, 5 and 8), a four-direction
/// spatial encoder, a 1×1 density regressor ending in ReLU and a
/// three-deconvolution segmentation head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SfcnArch {
    pub width: usize,
}

pub struct SfcnOutput {
    /// Spatial-encoder output, `[N, 4w, H/8, W/8]`.
    pub features: Var,
    /// `[N, 1, H/8, W/8]`, non-negative.
    pub density: Var,
    /// `[N, 2, H, W]` logits when requested.
    pub seg: Option<Var>,
}

impl SfcnArch {
    pub fn feature_channels(&self) -> usize {
        4 * self.width
    }

    fn backbone(&self) -> [(usize, usize); 10] {
        let w = self.width;
        let widths = [w, w, 2 * w, 2 * w, 2 * w, 4 * w, 4 * w, 4 * w, 4 * w, 4 * w];
        let mut out = [(0, 0); 10];
        for (i, &c) in widths.iter().enumerate() {
            let stride = if matches!(i, 1 | 4 | 7) { 2 } else { 1 };
            out[i] = (c, stride);
        }
        out
    }

    pub(crate) fn declare(&self, s: &mut Schema) {
        let mut cin = 3;
        for (i, (c, _)) in self.backbone().into_iter().enumerate() {
            s.conv(&format!("backbone.{i}"), cin, c, 3, 2f64.sqrt());
            cin = c;
        }
        let c = self.feature_channels();
        for name in SENC_NAMES {
            s.push(format!("senc.{name}.w"), vec![c, c, SENC_KERNEL], Init::Fan {
                fan_in: c * SENC_KERNEL,
                gain: 0.5,
            });
        }
        s.conv("head.0", c, 2 * self.width, 1, 2f64.sqrt());
        s.push("head.1.w".into(), vec![1, 2 * self.width, 1, 1], Init::Fan {
            fan_in: 2 * self.width,
            gain: 1.0,
        });
        // positive start keeps the terminal rectifier active
        s.push("head.1.b".into(), vec![1], Init::Const(1.0));
        s.deconv("seg.0", c, 2 * self.width, 4, 2f64.sqrt());
        s.deconv("seg.1", 2 * self.width, self.width, 4, 2f64.sqrt());
        s.deconv("seg.2", self.width, 2, 4, 1.0);
    }

    /// `x` is `[N, 3, H, W]` in `[0, 1]` with `H` and `W` multiples of 8.
    pub fn forward<T: Real>(&self, g: &Graph<T>, p: &Bound, x: Var, with_seg: bool) -> Result<SfcnOutput> {
        let (_, h, w) = check_input(g, x, 3, "sfcn")?;
        if h % SFCN_STRIDE != 0 || w % SFCN_STRIDE != 0 {
            return Err(Error::Shape(format!(
                "sfcn input {h}x{w} is not a multiple of {SFCN_STRIDE}; pad the image to {}x{}",
                h.div_ceil(SFCN_STRIDE) * SFCN_STRIDE,
                w.div_ceil(SFCN_STRIDE) * SFCN_STRIDE
            )));
        }
        let mut y = g.scale(g.add_scalar(x, T::of(-0.5)), T::of(2.0));
        for (i, (_, stride)) in self.backbone().into_iter().enumerate() {
            y = g.relu(p.conv(g, &format!("backbone.{i}"), y, stride, 1));
        }
        let features = spatial_encoder(g, p, y, true)?;
        let hid = g.relu(p.conv(g, "head.0", features, 1, 0));
        let density = g.relu(p.conv(g, "head.1", hid, 1, 0));
        let seg = with_seg.then(|| {
            let s = g.relu(p.deconv(g, "seg.0", features, 2, 1));
            let s = g.relu(p.deconv(g, "seg.1", s, 2, 1));
            p.deconv(g, "seg.2", s, 2, 1)
        });
        Ok(SfcnOutput { features, density, seg })
    }
}

/// Down, up, left-to-right and right-to-left passes applied in sequence.
/// With `residual` false each pass emits only its propagated messages.
pub fn spatial_encoder<T: Real>(g: &Graph<T>, p: &Bound, f: Var, residual: bool) -> Result<Var> {
    let c = g.value(p.var("senc.down.w")).shape()[0];
    check_input(g, f, c, "spatial encoder")?;
    let mut y = f;
    for (name, dir) in SENC_NAMES.iter().zip(Direction::ALL) {
        y = g.directional(y, p.var(&format!("senc.{name}.w")), dir, residual);
    }
    Ok(y)
}
