//! Tape-based reverse-mode differentiation over NCHW tensors.
//!
//! A [`Graph`] records every op applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a scalar walks the tape in reverse creation order,
//! which is a valid topological order because ops only reference older nodes.

mod kernels;

use std::cell::{Ref, RefCell};

pub use kernels::Direction;
use kernels::{DirectionalTape, Geometry};

use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T: Real> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Square(Var),
    Abs(Var),
    Log(Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Tanh(Var),
    Softplus(Var),
    Sum(Var),
    Mean(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Geometry,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Geometry,
    },
    InstanceNorm {
        x: Var,
        inv_std: Vec<T>,
    },
    Directional {
        x: Var,
        w: Var,
        dir: Direction,
        residual: bool,
        tape: DirectionalTape<T>,
    },
    Blur {
        x: Var,
        kernel: Vec<T>,
    },
    LogSoftmax(Var),
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, op: &str) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{op}: operand shapes differ ({:?} vs {:?})",
        a.shape(),
        b.shape()
    );
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    /// Trainable input.
    pub fn param(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copy of `v` cut from the tape.
    pub fn detach(&self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    /// Scalar value of a 0-d (or single-element) node.
    pub fn item(&self, v: Var) -> T {
        let t = self.value(v);
        assert_eq!(t.len(), 1, "item() on tensor of shape {:?}", t.shape());
        t.data()[0]
    }

    fn unary(&self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(out, op, rg)
    }

    fn binary(&self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let out = {
            let (ta, tb) = (self.value(a), self.value(b));
            same_shape(&ta, &tb, name);
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::from_vec(ta.shape(), data).expect("shape preserved")
        };
        let rg = self.rg(&[a, b]);
        self.push(out, op, rg)
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&self, a: Var, k: T) -> Var {
        self.unary(a, |x| x * k, Op::Scale(a, k))
    }

    pub fn add_scalar(&self, a: Var, k: T) -> Var {
        self.unary(a, |x| x + k, Op::AddScalar(a))
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn abs(&self, a: Var) -> Var {
        self.unary(a, |x| x.abs(), Op::Abs(a))
    }

    pub fn log(&self, a: Var) -> Var {
        self.unary(a, |x| x.ln(), Op::Log(a))
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a))
    }

    pub fn leaky_relu(&self, a: Var, slope: T) -> Var {
        self.unary(
            a,
            |x| if x > T::zero() { x } else { x * slope },
            Op::LeakyRelu(a, slope),
        )
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self, a: Var) -> Var {
        self.unary(a, |x| x.max(T::zero()) + (-x.abs()).exp().ln_1p(), Op::Softplus(a))
    }

    pub fn sum(&self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&self, a: Var) -> Var {
        let s = {
            let t = self.value(a);
            t.sum() / T::of(t.len() as f64)
        };
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// 2-D convolution; `w` is `[cout, cin, kh, kw]`, `b` is `[cout]`.
    pub fn conv2d(&self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (out, geom) = {
            let tx = self.value(x);
            let tw = self.value(w);
            let (n, c, h, wd) = tx.dims4().expect("conv2d input must be NCHW");
            let (cout, cin, kh, kw) = tw.dims4().expect("conv2d weight must be 4-D");
            assert_eq!(c, cin, "conv2d: input has {c} channels, weight expects {cin}");
            let geom = Geometry::conv(c, h, wd, kh, kw, stride, pad)
                .unwrap_or_else(|| panic!("conv2d: kernel {kh}x{kw} does not fit {h}x{wd} (pad {pad})"));
            let bias = b.map(|b| self.value(b).data().to_vec());
            let data = kernels::conv2d_forward(tx.data(), n, tw.data(), cout, bias.as_deref(), &geom);
            (
                Tensor::from_vec(&[n, cout, geom.oh, geom.ow], data).expect("conv shape"),
                geom,
            )
        };
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        self.push(out, Op::Conv2d { x, w, b, geom }, rg)
    }

    /// Transposed 2-D convolution; `w` is `[cin, cout, k, k]`. Output side is
    /// `(in - 1) * stride - 2 * pad + k`.
    pub fn conv_transpose2d(&self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (out, geom) = {
            let tx = self.value(x);
            let tw = self.value(w);
            let (n, c, h, wd) = tx.dims4().expect("conv_transpose2d input must be NCHW");
            let (cin, cout, kh, kw) = tw.dims4().expect("conv_transpose2d weight must be 4-D");
            assert_eq!(c, cin, "conv_transpose2d: input has {c} channels, weight expects {cin}");
            let oh = (h - 1) * stride + kh - 2 * pad;
            let ow = (wd - 1) * stride + kw - 2 * pad;
            let geom = Geometry::conv(cout, oh, ow, kh, kw, stride, pad).expect("conv_transpose2d geometry");
            debug_assert_eq!((geom.oh, geom.ow), (h, wd));
            let bias = b.map(|b| self.value(b).data().to_vec());
            let data = kernels::conv_transpose2d_forward(tx.data(), n, cin, tw.data(), bias.as_deref(), &geom);
            (
                Tensor::from_vec(&[n, cout, oh, ow], data).expect("convT shape"),
                geom,
            )
        };
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        self.push(out, Op::ConvTranspose2d { x, w, b, geom }, rg)
    }

    pub fn instance_norm(&self, x: Var, eps: T) -> Var {
        let (out, inv_std) = {
            let tx = self.value(x);
            let (n, c, h, w) = tx.dims4().expect("instance_norm input must be NCHW");
            let (y, inv) = kernels::instance_norm_forward(tx.data(), n * c, h * w, eps);
            (Tensor::from_vec(tx.shape(), y).expect("shape"), inv)
        };
        let rg = self.rg(&[x]);
        self.push(out, Op::InstanceNorm { x, inv_std }, rg)
    }

    /// One spatial-encoder pass; `w` is `[c, c, k]` with odd `k`.
    pub fn directional(&self, x: Var, w: Var, dir: Direction, residual: bool) -> Var {
        let (out, tape) = {
            let tx = self.value(x);
            let tw = self.value(w);
            let (n, c, h, wd) = tx.dims4().expect("directional input must be NCHW");
            let k = match tw.shape() {
                [a, b, k] if *a == c && *b == c && k % 2 == 1 => *k,
                s => panic!("directional: weight shape {s:?} incompatible with {c} channels"),
            };
            let (y, tape) = kernels::directional_forward(tx.data(), n, c, h, wd, tw.data(), k, dir, residual);
            (Tensor::from_vec(tx.shape(), y).expect("shape"), tape)
        };
        let rg = self.rg(&[x, w]);
        self.push(
            out,
            Op::Directional {
                x,
                w,
                dir,
                residual,
                tape,
            },
            rg,
        )
    }

    /// Separable valid-mode filtering of every plane with `kernel`.
    pub fn blur(&self, x: Var, kernel: &[T]) -> Var {
        let out = {
            let tx = self.value(x);
            let (n, c, h, w) = tx.dims4().expect("blur input must be NCHW");
            let k = kernel.len();
            assert!(k <= h && k <= w, "blur: window {k} larger than {h}x{w}");
            let y = kernels::blur_forward(tx.data(), n * c, h, w, kernel);
            Tensor::from_vec(&[n, c, h - k + 1, w - k + 1], y).expect("shape")
        };
        let rg = self.rg(&[x]);
        self.push(
            out,
            Op::Blur {
                x,
                kernel: kernel.to_vec(),
            },
            rg,
        )
    }

    pub fn log_softmax(&self, x: Var) -> Var {
        let out = {
            let tx = self.value(x);
            let (n, c, h, w) = tx.dims4().expect("log_softmax input must be NCHW");
            Tensor::from_vec(tx.shape(), kernels::log_softmax_forward(tx.data(), n, c, h * w)).expect("shape")
        };
        let rg = self.rg(&[x]);
        self.push(out, Op::LogSoftmax(x), rg)
    }

    /// Reverse pass from a single-element `root`.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[root.0].value.len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(nodes[root.0].value.shape(), T::one()));

        let accumulate = |grads: &mut Vec<Option<Tensor<T>>>, v: Var, g: Tensor<T>| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        };
        let needs = |v: Var| nodes[v.0].requires_grad;

        for i in (0..=root.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            // leaves keep their gradient
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            let val = |v: Var| &nodes[v.0].value;
            let zip_map = |a: &Tensor<T>, f: &dyn Fn(T, T) -> T| -> Tensor<T> {
                let data = g.data().iter().zip(a.data()).map(|(&gv, &av)| f(gv, av)).collect();
                Tensor::from_vec(g.shape(), data).expect("shape")
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    if needs(*a) {
                        accumulate(&mut grads, *a, zip_map(val(*b), &|gv, bv| gv * bv));
                    }
                    if needs(*b) {
                        accumulate(&mut grads, *b, zip_map(val(*a), &|gv, av| gv * av));
                    }
                }
                Op::Div(a, b) => {
                    let tb = val(*b);
                    if needs(*a) {
                        accumulate(&mut grads, *a, zip_map(tb, &|gv, bv| gv / bv));
                    }
                    if needs(*b) {
                        // d(a/b)/db = -(a/b)/b
                        let data = g
                            .data()
                            .iter()
                            .zip(node.value.data())
                            .zip(tb.data())
                            .map(|((&gv, &q), &bv)| -gv * q / bv)
                            .collect();
                        accumulate(&mut grads, *b, Tensor::from_vec(g.shape(), data).expect("shape"));
                    }
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    accumulate(&mut grads, *a, g.map(|x| x * k));
                }
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::Square(a) => {
                    let two = T::of(2.0);
                    accumulate(&mut grads, *a, zip_map(val(*a), &|gv, av| two * av * gv));
                }
                Op::Abs(a) => {
                    accumulate(
                        &mut grads,
                        *a,
                        zip_map(val(*a), &|gv, av| {
                            if av > T::zero() {
                                gv
                            } else if av < T::zero() {
                                -gv
                            } else {
                                T::zero()
                            }
                        }),
                    );
                }
                Op::Log(a) => accumulate(&mut grads, *a, zip_map(val(*a), &|gv, av| gv / av)),
                Op::Relu(a) => accumulate(
                    &mut grads,
                    *a,
                    zip_map(val(*a), &|gv, av| if av > T::zero() { gv } else { T::zero() }),
                ),
                Op::LeakyRelu(a, slope) => {
                    let s = *slope;
                    accumulate(
                        &mut grads,
                        *a,
                        zip_map(val(*a), &|gv, av| if av > T::zero() { gv } else { gv * s }),
                    )
                }
                Op::Tanh(a) => accumulate(
                    &mut grads,
                    *a,
                    zip_map(&node.value, &|gv, y| gv * (T::one() - y * y)),
                ),
                Op::Softplus(a) => accumulate(
                    &mut grads,
                    *a,
                    zip_map(val(*a), &|gv, av| gv / (T::one() + (-av).exp())),
                ),
                Op::Sum(a) => {
                    let gv = g.data()[0];
                    accumulate(&mut grads, *a, Tensor::full(val(*a).shape(), gv));
                }
                Op::Mean(a) => {
                    let ta = val(*a);
                    let gv = g.data()[0] / T::of(ta.len() as f64);
                    accumulate(&mut grads, *a, Tensor::full(ta.shape(), gv));
                }
                Op::Conv2d { x, w, b, geom } => {
                    let tx = val(*x);
                    let tw = val(*w);
                    let n = tx.shape()[0];
                    let cout = tw.shape()[0];
                    let r = kernels::conv2d_backward(tx.data(), n, tw.data(), cout, g.data(), geom, needs(*x));
                    if let Some(dx) = r.dx {
                        accumulate(&mut grads, *x, Tensor::from_vec(tx.shape(), dx).expect("shape"));
                    }
                    accumulate(&mut grads, *w, Tensor::from_vec(tw.shape(), r.dw).expect("shape"));
                    if let Some(b) = b {
                        accumulate(&mut grads, *b, Tensor::from_vec(&[cout], r.db).expect("shape"));
                    }
                }
                Op::ConvTranspose2d { x, w, b, geom } => {
                    let tx = val(*x);
                    let tw = val(*w);
                    let (n, cin) = (tx.shape()[0], tx.shape()[1]);
                    let r = kernels::conv_transpose2d_backward(tx.data(), n, cin, tw.data(), g.data(), geom, needs(*x));
                    if let Some(dx) = r.dx {
                        accumulate(&mut grads, *x, Tensor::from_vec(tx.shape(), dx).expect("shape"));
                    }
                    accumulate(&mut grads, *w, Tensor::from_vec(tw.shape(), r.dw).expect("shape"));
                    if let Some(b) = b {
                        accumulate(&mut grads, *b, Tensor::from_vec(&[geom.c], r.db).expect("shape"));
                    }
                }
                Op::InstanceNorm { x, inv_std } => {
                    let tx = val(*x);
                    let plane = tx.shape()[2] * tx.shape()[3];
                    let dx = kernels::instance_norm_backward(g.data(), node.value.data(), inv_std, plane);
                    accumulate(&mut grads, *x, Tensor::from_vec(tx.shape(), dx).expect("shape"));
                }
                Op::Directional {
                    x,
                    w,
                    dir,
                    residual,
                    tape,
                } => {
                    let tx = val(*x);
                    let tw = val(*w);
                    let (n, c, h, wd) = tx.dims4().expect("4-D");
                    let k = tw.shape()[2];
                    let (dx, dw) =
                        kernels::directional_backward(g.data(), tape, n, c, h, wd, tw.data(), k, *dir, *residual);
                    accumulate(&mut grads, *x, Tensor::from_vec(tx.shape(), dx).expect("shape"));
                    accumulate(&mut grads, *w, Tensor::from_vec(tw.shape(), dw).expect("shape"));
                }
                Op::Blur { x, kernel } => {
                    let tx = val(*x);
                    let (n, c, h, w) = tx.dims4().expect("4-D");
                    let dx = kernels::blur_backward(g.data(), n * c, h, w, kernel);
                    accumulate(&mut grads, *x, Tensor::from_vec(tx.shape(), dx).expect("shape"));
                }
                Op::LogSoftmax(x) => {
                    let tx = val(*x);
                    let (n, c, h, w) = tx.dims4().expect("4-D");
                    let dx = kernels::log_softmax_backward(g.data(), node.value.data(), n, c, h * w);
                    accumulate(&mut grads, *x, Tensor::from_vec(tx.shape(), dx).expect("shape"));
                }
            }
        }
        Gradients { grads }
    }
}
