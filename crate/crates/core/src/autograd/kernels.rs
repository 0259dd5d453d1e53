//! Forward/backward kernels for the non-elementwise ops. All tensors are NCHW.

use crate::tensor::{matmul, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Geometry {
    pub fn conv(c: usize, h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Option<Self> {
        if h + 2 * pad < kh || w + 2 * pad < kw || stride == 0 {
            return None;
        }
        Some(Self {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        })
    }

    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

pub(crate) fn im2col<T: Real>(img: &[T], g: &Geometry, cols: &mut [T]) {
    let ncol = g.cols();
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut cols[row * ncol..(row + 1) * ncol];
                for oy in 0..g.oh {
                    let y = (oy * g.stride + i) as isize - g.pad as isize;
                    let drow = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if y < 0 || y >= g.h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &img[(c * g.h + y as usize) * g.w..(c * g.h + y as usize + 1) * g.w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let x = (ox * g.stride + j) as isize - g.pad as isize;
                        *d = if x < 0 || x >= g.w as isize {
                            T::zero()
                        } else {
                            src[x as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into the image.
pub(crate) fn col2im<T: Real>(cols: &[T], g: &Geometry, img: &mut [T]) {
    let ncol = g.cols();
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &cols[row * ncol..(row + 1) * ncol];
                for oy in 0..g.oh {
                    let y = (oy * g.stride + i) as isize - g.pad as isize;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + y as usize) * g.w;
                    for ox in 0..g.ow {
                        let x = (ox * g.stride + j) as isize - g.pad as isize;
                        if x >= 0 && x < g.w as isize {
                            img[base + x as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// y[n] = W · im2col(x[n]) + b
pub(crate) fn conv2d_forward<T: Real>(
    x: &[T],
    n: usize,
    w: &[T],
    cout: usize,
    bias: Option<&[T]>,
    g: &Geometry,
) -> Vec<T> {
    let (rows, ncol) = (g.rows(), g.cols());
    let mut cols = vec![T::zero(); rows * ncol];
    let mut out = vec![T::zero(); n * cout * ncol];
    let in_len = g.c * g.h * g.w;
    for s in 0..n {
        im2col(&x[s * in_len..(s + 1) * in_len], g, &mut cols);
        let dst = &mut out[s * cout * ncol..(s + 1) * cout * ncol];
        matmul(w, false, &cols, false, dst, cout, rows, ncol, false);
        if let Some(b) = bias {
            for (co, &bv) in b.iter().enumerate() {
                for v in &mut dst[co * ncol..(co + 1) * ncol] {
                    *v += bv;
                }
            }
        }
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Vec<T>,
    pub db: Vec<T>,
}

pub(crate) fn conv2d_backward<T: Real>(
    x: &[T],
    n: usize,
    w: &[T],
    cout: usize,
    dy: &[T],
    g: &Geometry,
    need_dx: bool,
) -> ConvGrads<T> {
    let (rows, ncol) = (g.rows(), g.cols());
    let in_len = g.c * g.h * g.w;
    let mut cols = vec![T::zero(); rows * ncol];
    let mut dcols = vec![T::zero(); rows * ncol];
    let mut dw = vec![T::zero(); cout * rows];
    let mut db = vec![T::zero(); cout];
    let mut dx = if need_dx { Some(vec![T::zero(); n * in_len]) } else { None };
    for s in 0..n {
        let dys = &dy[s * cout * ncol..(s + 1) * cout * ncol];
        im2col(&x[s * in_len..(s + 1) * in_len], g, &mut cols);
        // dW += dY · colsᵀ
        matmul(dys, false, &cols, true, &mut dw, cout, ncol, rows, true);
        for co in 0..cout {
            db[co] += dys[co * ncol..(co + 1) * ncol].iter().copied().sum::<T>();
        }
        if let Some(dx) = dx.as_mut() {
            // dcols = Wᵀ · dY
            matmul(w, true, dys, false, &mut dcols, rows, cout, ncol, false);
            col2im(&dcols, g, &mut dx[s * in_len..(s + 1) * in_len]);
        }
    }
    ConvGrads { dx, dw, db }
}

/// Transposed convolution. `g` describes the *adjoint* convolution: an image
/// of `g.h × g.w` (this op's output) reduced to `g.oh × g.ow` (this op's input).
pub(crate) fn conv_transpose2d_forward<T: Real>(
    x: &[T],
    n: usize,
    cin: usize,
    w: &[T],
    bias: Option<&[T]>,
    g: &Geometry,
) -> Vec<T> {
    let (rows, ncol) = (g.rows(), g.cols());
    let out_len = g.c * g.h * g.w;
    let mut cols = vec![T::zero(); rows * ncol];
    let mut out = vec![T::zero(); n * out_len];
    for s in 0..n {
        // cols = Wᵀ · x, with W stored cin × rows
        matmul(w, true, &x[s * cin * ncol..(s + 1) * cin * ncol], false, &mut cols, rows, cin, ncol, false);
        let dst = &mut out[s * out_len..(s + 1) * out_len];
        col2im(&cols, g, dst);
        if let Some(b) = bias {
            let plane = g.h * g.w;
            for (co, &bv) in b.iter().enumerate() {
                for v in &mut dst[co * plane..(co + 1) * plane] {
                    *v += bv;
                }
            }
        }
    }
    out
}

pub(crate) fn conv_transpose2d_backward<T: Real>(
    x: &[T],
    n: usize,
    cin: usize,
    w: &[T],
    dy: &[T],
    g: &Geometry,
    need_dx: bool,
) -> ConvGrads<T> {
    let (rows, ncol) = (g.rows(), g.cols());
    let out_len = g.c * g.h * g.w;
    let plane = g.h * g.w;
    let mut dcols = vec![T::zero(); rows * ncol];
    let mut dw = vec![T::zero(); cin * rows];
    let mut db = vec![T::zero(); g.c];
    let mut dx = if need_dx { Some(vec![T::zero(); n * cin * ncol]) } else { None };
    for s in 0..n {
        let dys = &dy[s * out_len..(s + 1) * out_len];
        im2col(dys, g, &mut dcols);
        let xs = &x[s * cin * ncol..(s + 1) * cin * ncol];
        // dW += x · dcolsᵀ
        matmul(xs, false, &dcols, true, &mut dw, cin, ncol, rows, true);
        for co in 0..g.c {
            db[co] += dys[co * plane..(co + 1) * plane].iter().copied().sum::<T>();
        }
        if let Some(dx) = dx.as_mut() {
            matmul(w, false, &dcols, false, &mut dx[s * cin * ncol..(s + 1) * cin * ncol], cin, rows, ncol, false);
        }
    }
    ConvGrads { dx, dw, db }
}

/// Propagation direction of a spatial-encoder pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Down,
    Up,
    LeftToRight,
    RightToLeft,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Down,
        Direction::Up,
        Direction::LeftToRight,
        Direction::RightToLeft,
    ];

    fn vertical(self) -> bool {
        matches!(self, Direction::Down | Direction::Up)
    }

    fn reversed(self) -> bool {
        matches!(self, Direction::Up | Direction::RightToLeft)
    }
}

/// Line layout for one sample: `lines[l][c][m]` where `l` walks the
/// propagation axis in pass order and `m` runs along each line.
struct LineLayout {
    c: usize,
    h: usize,
    w: usize,
    dir: Direction,
}

impl LineLayout {
    fn count(&self) -> usize {
        if self.dir.vertical() {
            self.h
        } else {
            self.w
        }
    }

    fn width(&self) -> usize {
        if self.dir.vertical() {
            self.w
        } else {
            self.h
        }
    }

    #[inline]
    fn source(&self, l: usize, c: usize, m: usize) -> usize {
        let n = self.count();
        let l = if self.dir.reversed() { n - 1 - l } else { l };
        if self.dir.vertical() {
            (c * self.h + l) * self.w + m
        } else {
            (c * self.h + m) * self.w + l
        }
    }

    fn gather<T: Real>(&self, img: &[T]) -> Vec<T> {
        let (n, mw) = (self.count(), self.width());
        let mut out = vec![T::zero(); n * self.c * mw];
        for l in 0..n {
            for c in 0..self.c {
                for m in 0..mw {
                    out[(l * self.c + c) * mw + m] = img[self.source(l, c, m)];
                }
            }
        }
        out
    }

    fn scatter<T: Real>(&self, lines: &[T], img: &mut [T]) {
        let (n, mw) = (self.count(), self.width());
        for l in 0..n {
            for c in 0..self.c {
                for m in 0..mw {
                    img[self.source(l, c, m)] = lines[(l * self.c + c) * mw + m];
                }
            }
        }
    }
}

fn im2col1d<T: Real>(line: &[T], c: usize, m: usize, k: usize, cols: &mut [T]) {
    let pad = (k / 2) as isize;
    for ci in 0..c {
        for kk in 0..k {
            let row = &mut cols[(ci * k + kk) * m..(ci * k + kk + 1) * m];
            for (p, d) in row.iter_mut().enumerate() {
                let q = p as isize + kk as isize - pad;
                *d = if q < 0 || q >= m as isize {
                    T::zero()
                } else {
                    line[ci * m + q as usize]
                };
            }
        }
    }
}

fn col2im1d<T: Real>(cols: &[T], c: usize, m: usize, k: usize, line: &mut [T]) {
    let pad = (k / 2) as isize;
    line.fill(T::zero());
    for ci in 0..c {
        for kk in 0..k {
            let row = &cols[(ci * k + kk) * m..(ci * k + kk + 1) * m];
            for (p, &v) in row.iter().enumerate() {
                let q = p as isize + kk as isize - pad;
                if q >= 0 && q < m as isize {
                    line[ci * m + q as usize] += v;
                }
            }
        }
    }
}

/// Saved state of a directional pass, in line layout per sample.
pub(crate) struct DirectionalTape<T> {
    pub state: Vec<T>,
    pub pre: Vec<T>,
}

/// Sequential message passing along one direction:
/// `s_0 = x_0`, `s_l = x_l + relu(W ⊛ s_{l-1})`. Returns `s` (residual) or
/// `s - x` (messages only).
pub(crate) fn directional_forward<T: Real>(
    x: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    weight: &[T],
    k: usize,
    dir: Direction,
    residual: bool,
) -> (Vec<T>, DirectionalTape<T>) {
    let lay = LineLayout { c, h, w, dir };
    let (lines_n, mw) = (lay.count(), lay.width());
    let line_len = c * mw;
    let sample = c * h * w;
    let mut out = vec![T::zero(); n * sample];
    let mut state_all = Vec::with_capacity(n * sample);
    let mut pre_all = Vec::with_capacity(n * sample);
    let mut cols = vec![T::zero(); c * k * mw];
    for s in 0..n {
        let xs = lay.gather(&x[s * sample..(s + 1) * sample]);
        let mut st = xs.clone();
        let mut pre = vec![T::zero(); xs.len()];
        for l in 1..lines_n {
            let (prev, cur) = st.split_at_mut(l * line_len);
            let prev = &prev[(l - 1) * line_len..];
            im2col1d(prev, c, mw, k, &mut cols);
            let z = &mut pre[l * line_len..(l + 1) * line_len];
            matmul(weight, false, &cols, false, z, c, c * k, mw, false);
            for (sv, &zv) in cur[..line_len].iter_mut().zip(z.iter()) {
                if zv > T::zero() {
                    *sv += zv;
                }
            }
        }
        let y: Vec<T> = if residual {
            st.clone()
        } else {
            st.iter().zip(&xs).map(|(&a, &b)| a - b).collect()
        };
        lay.scatter(&y, &mut out[s * sample..(s + 1) * sample]);
        state_all.extend_from_slice(&st);
        pre_all.extend_from_slice(&pre);
    }
    (
        out,
        DirectionalTape {
            state: state_all,
            pre: pre_all,
        },
    )
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn directional_backward<T: Real>(
    dy: &[T],
    tape: &DirectionalTape<T>,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    weight: &[T],
    k: usize,
    dir: Direction,
    residual: bool,
) -> (Vec<T>, Vec<T>) {
    let lay = LineLayout { c, h, w, dir };
    let (lines_n, mw) = (lay.count(), lay.width());
    let line_len = c * mw;
    let sample = c * h * w;
    let mut dx = vec![T::zero(); n * sample];
    let mut dw = vec![T::zero(); weight.len()];
    let mut cols = vec![T::zero(); c * k * mw];
    let mut dcols = vec![T::zero(); c * k * mw];
    let mut carry = vec![T::zero(); line_len];
    let mut gz = vec![T::zero(); line_len];
    for s in 0..n {
        let gy = lay.gather(&dy[s * sample..(s + 1) * sample]);
        let st = &tape.state[s * sample..(s + 1) * sample];
        let pre = &tape.pre[s * sample..(s + 1) * sample];
        let mut gx = vec![T::zero(); sample];
        carry.fill(T::zero());
        for l in (0..lines_n).rev() {
            let r = l * line_len..(l + 1) * line_len;
            // total gradient reaching s_l
            let mut gs = carry.clone();
            if residual {
                for (a, &b) in gs.iter_mut().zip(&gy[r.clone()]) {
                    *a += b;
                }
            }
            gx[r.clone()].copy_from_slice(&gs);
            if l == 0 {
                break;
            }
            for i in 0..line_len {
                let gm = if residual { gs[i] } else { gs[i] + gy[r.start + i] };
                gz[i] = if pre[r.start + i] > T::zero() { gm } else { T::zero() };
            }
            im2col1d(&st[(l - 1) * line_len..l * line_len], c, mw, k, &mut cols);
            matmul(&gz, false, &cols, true, &mut dw, c, mw, c * k, true);
            matmul(weight, true, &gz, false, &mut dcols, c * k, c, mw, false);
            col2im1d(&dcols, c, mw, k, &mut carry);
        }
        lay.scatter(&gx, &mut dx[s * sample..(s + 1) * sample]);
    }
    (dx, dw)
}

/// Per-(sample, channel) normalisation without affine terms.
/// Returns the normalised output and `1/sqrt(var + eps)` per plane.
pub(crate) fn instance_norm_forward<T: Real>(x: &[T], planes: usize, plane: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let mut y = vec![T::zero(); x.len()];
    let mut inv = vec![T::zero(); planes];
    let count = T::of(plane as f64);
    for p in 0..planes {
        let src = &x[p * plane..(p + 1) * plane];
        let mean = src.iter().copied().sum::<T>() / count;
        let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
        let is = T::one() / (var + eps).sqrt();
        inv[p] = is;
        for (d, &v) in y[p * plane..(p + 1) * plane].iter_mut().zip(src) {
            *d = (v - mean) * is;
        }
    }
    (y, inv)
}

pub(crate) fn instance_norm_backward<T: Real>(dy: &[T], y: &[T], inv: &[T], plane: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); dy.len()];
    let count = T::of(plane as f64);
    for (p, &is) in inv.iter().enumerate() {
        let r = p * plane..(p + 1) * plane;
        let g = &dy[r.clone()];
        let yy = &y[r.clone()];
        let mean_g = g.iter().copied().sum::<T>() / count;
        let mean_gy = g.iter().zip(yy).map(|(&a, &b)| a * b).sum::<T>() / count;
        for ((d, &gv), &yv) in dx[r].iter_mut().zip(g).zip(yy) {
            *d = is * (gv - mean_g - yv * mean_gy);
        }
    }
    dx
}

/// Separable valid-mode filtering of every plane with the same 1-D kernel.
pub(crate) fn blur_forward<T: Real>(x: &[T], planes: usize, h: usize, w: usize, kernel: &[T]) -> Vec<T> {
    let k = kernel.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![T::zero(); h * ow];
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for xo in 0..ow {
                let mut acc = T::zero();
                for (t, &g) in kernel.iter().enumerate() {
                    acc += g * src[y * w + xo + t];
                }
                tmp[y * ow + xo] = acc;
            }
        }
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for yo in 0..oh {
            for xo in 0..ow {
                let mut acc = T::zero();
                for (t, &g) in kernel.iter().enumerate() {
                    acc += g * tmp[(yo + t) * ow + xo];
                }
                dst[yo * ow + xo] = acc;
            }
        }
    }
    out
}

pub(crate) fn blur_backward<T: Real>(dy: &[T], planes: usize, h: usize, w: usize, kernel: &[T]) -> Vec<T> {
    let k = kernel.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut dx = vec![T::zero(); planes * h * w];
    let mut dtmp = vec![T::zero(); h * ow];
    for p in 0..planes {
        let g = &dy[p * oh * ow..(p + 1) * oh * ow];
        dtmp.fill(T::zero());
        for yo in 0..oh {
            for xo in 0..ow {
                let v = g[yo * ow + xo];
                for (t, &kv) in kernel.iter().enumerate() {
                    dtmp[(yo + t) * ow + xo] += kv * v;
                }
            }
        }
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for xo in 0..ow {
                let v = dtmp[y * ow + xo];
                for (t, &kv) in kernel.iter().enumerate() {
                    dst[y * w + xo + t] += kv * v;
                }
            }
        }
    }
    dx
}

/// Log-softmax over axis 1 of an NCHW tensor.
pub(crate) fn log_softmax_forward<T: Real>(x: &[T], n: usize, c: usize, plane: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for s in 0..n {
        for p in 0..plane {
            let at = |ch: usize| (s * c + ch) * plane + p;
            let mut mx = T::neg_infinity();
            for ch in 0..c {
                mx = mx.max(x[at(ch)]);
            }
            let mut z = T::zero();
            for ch in 0..c {
                z += (x[at(ch)] - mx).exp();
            }
            let lse = mx + z.ln();
            for ch in 0..c {
                y[at(ch)] = x[at(ch)] - lse;
            }
        }
    }
    y
}

pub(crate) fn log_softmax_backward<T: Real>(dy: &[T], y: &[T], n: usize, c: usize, plane: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); dy.len()];
    for s in 0..n {
        for p in 0..plane {
            let at = |ch: usize| (s * c + ch) * plane + p;
            let total = (0..c).map(|ch| dy[at(ch)]).sum::<T>();
            for ch in 0..c {
                dx[at(ch)] = dy[at(ch)] - y[at(ch)].exp() * total;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], c: usize, h: usize, w: usize, wt: &[f64], co: usize, k: usize, s: usize, p: usize) -> Vec<f64> {
        let g = Geometry::conv(c, h, w, k, k, s, p).unwrap();
        let mut out = vec![0.0; co * g.oh * g.ow];
        for o in 0..co {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for i in 0..k {
                            for j in 0..k {
                                let y = (oy * s + i) as isize - p as isize;
                                let xx = (ox * s + j) as isize - p as isize;
                                if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                                    acc += wt[((o * c + ci) * k + i) * k + j] * x[(ci * h + y as usize) * w + xx as usize];
                                }
                            }
                        }
                    }
                    out[(o * g.oh + oy) * g.ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        let (c, h, w, co, k) = (2, 7, 6, 3, 3);
        let x: Vec<f64> = (0..c * h * w).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let wt: Vec<f64> = (0..co * c * k * k).map(|i| ((i * 13 % 7) as f64) * 0.1 - 0.3).collect();
        for (s, p) in [(1, 1), (2, 1), (2, 0), (1, 0)] {
            let g = Geometry::conv(c, h, w, k, k, s, p).unwrap();
            let got = conv2d_forward(&x, 1, &wt, co, None, &g);
            assert_eq!(got.len(), co * g.oh * g.ow);
            let want = naive_conv(&x, c, h, w, &wt, co, k, s, p);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transpose_conv_is_adjoint_of_conv() {
        // <conv(x), y> == <x, convT(y)> with the same weights
        let (c, h, w, co, k, s, p) = (2, 8, 8, 3, 4, 2, 1);
        let g = Geometry::conv(c, h, w, k, k, s, p).unwrap();
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..co * g.oh * g.ow).map(|i| (i as f64 * 0.11).cos()).collect();
        let wt: Vec<f64> = (0..co * c * k * k).map(|i| (i as f64 * 0.73).sin()).collect();
        let cx = conv2d_forward(&x, 1, &wt, co, None, &g);
        // convT input channels = co, output channels = c; weights stored co × (c·k·k)
        let ty = conv_transpose2d_forward(&y, 1, co, &wt, None, &g);
        let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&ty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn directional_zero_weight_is_identity_or_zero() {
        let (c, h, w, k) = (2, 4, 5, 3);
        let x: Vec<f64> = (0..c * h * w).map(|i| i as f64).collect();
        let wt = vec![0.0; c * c * k];
        for dir in Direction::ALL {
            let (y, _) = directional_forward(&x, 1, c, h, w, &wt, k, dir, true);
            assert_eq!(y, x);
            let (m, _) = directional_forward(&x, 1, c, h, w, &wt, k, dir, false);
            assert!(m.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn log_softmax_rows_normalise() {
        let x: Vec<f64> = vec![0.3, -1.0, 2.0, 0.5, 1.5, 0.0];
        let y = log_softmax_forward(&x, 1, 2, 3);
        for p in 0..3 {
            let s: f64 = (0..2).map(|c| y[c * 3 + p].exp()).sum::<f64>();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
