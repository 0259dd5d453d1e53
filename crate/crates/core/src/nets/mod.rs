//! Network architectures and their parameter containers.
//!
//! A [`ModelState`] is a flat name → tensor map whose names and shapes are
//! fully determined by its [`Arch`]. Forwards run on a [`Graph`] after the
//! state has been bound with [`ModelState::bind`].

mod discriminator;
mod generator;
mod sfcn;

pub use discriminator::{DomainClsArch, PatchDiscArch};
pub use generator::{GeneratorArch, GENERATOR_STRIDE};
pub use sfcn::{spatial_encoder, SfcnArch, SfcnOutput, SENC_KERNEL, SFCN_STRIDE};

use std::collections::BTreeMap;
use std::fmt;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Graph, Var};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};
use crate::tensor::{Real, Tensor};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const NORM_EPS: f64 = 1e-5;

/// Every architecture this crate can build, identified by a stable string.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    Sfcn(SfcnArch),
    Generator(GeneratorArch),
    PatchDisc(PatchDiscArch),
    DomainCls(DomainClsArch),
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arch::Sfcn(a) => write!(f, "sfcn-small10/w{}", a.width),
            Arch::Generator(a) => write!(f, "resgen/ngf{}-res{}", a.ngf, a.n_res),
            Arch::PatchDisc(a) => write!(f, "patchd/ndf{}", a.ndf),
            Arch::DomainCls(a) => write!(f, "domcls/c{}-ndf{}", a.in_channels, a.ndf),
        }
    }
}

fn parse_num(s: &str, prefix: &str, id: &str) -> Result<usize> {
    s.strip_prefix(prefix)
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| (1..=1024).contains(&v))
        .ok_or_else(|| Error::Argument(format!("malformed arch id {id:?}")))
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(id: &str) -> Result<Self> {
        let (family, rest) = id
            .split_once('/')
            .ok_or_else(|| Error::Argument(format!("malformed arch id {id:?}")))?;
        let arch = match family {
            "sfcn-small10" => Arch::Sfcn(SfcnArch {
                width: parse_num(rest, "w", id)?,
            }),
            "resgen" => {
                let (a, b) = rest
                    .split_once('-')
                    .ok_or_else(|| Error::Argument(format!("malformed arch id {id:?}")))?;
                Arch::Generator(GeneratorArch {
                    ngf: parse_num(a, "ngf", id)?,
                    n_res: parse_num(b, "res", id)?,
                })
            }
            "patchd" => Arch::PatchDisc(PatchDiscArch {
                ndf: parse_num(rest, "ndf", id)?,
            }),
            "domcls" => {
                let (a, b) = rest
                    .split_once('-')
                    .ok_or_else(|| Error::Argument(format!("malformed arch id {id:?}")))?;
                Arch::DomainCls(DomainClsArch {
                    in_channels: parse_num(a, "c", id)?,
                    ndf: parse_num(b, "ndf", id)?,
                })
            }
            _ => return Err(Error::Argument(format!("unknown architecture family in {id:?}"))),
        };
        Ok(arch)
    }
}

impl Serialize for Arch {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Arch {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub in_channels: usize,
    pub output_stride: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Init {
    /// Normal with standard deviation `gain / sqrt(fan_in)`.
    Fan { fan_in: usize, gain: f64 },
    Const(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub(crate) init: Init,
}

/// Accumulates parameter declarations in forward order.
#[derive(Default)]
pub(crate) struct Schema {
    pub(crate) entries: Vec<ParamSpec>,
}

impl Schema {
    pub(crate) fn push(&mut self, name: String, shape: Vec<usize>, init: Init) {
        self.entries.push(ParamSpec { name, shape, init });
    }

    /// `[cout, cin, k, k]` weight plus bias.
    pub(crate) fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, gain: f64) {
        self.push(format!("{name}.w"), vec![cout, cin, k, k], Init::Fan { fan_in: cin * k * k, gain });
        self.push(format!("{name}.b"), vec![cout], Init::Const(0.0));
    }

    /// `[cin, cout, k, k]` weight plus bias.
    pub(crate) fn deconv(&mut self, name: &str, cin: usize, cout: usize, k: usize, gain: f64) {
        // each output pixel sees cin * (k / stride)^2 inputs for stride 2
        let fan_in = cin * (k * k / 4).max(1);
        self.push(format!("{name}.w"), vec![cin, cout, k, k], Init::Fan { fan_in, gain });
        self.push(format!("{name}.b"), vec![cout], Init::Const(0.0));
    }
}

impl Arch {
    pub fn schema(&self) -> Vec<ParamSpec> {
        let mut s = Schema::default();
        match self {
            Arch::Sfcn(a) => a.declare(&mut s),
            Arch::Generator(a) => a.declare(&mut s),
            Arch::PatchDisc(a) => a.declare(&mut s),
            Arch::DomainCls(a) => a.declare(&mut s),
        }
        s.entries
    }

    pub fn meta(&self) -> ModelMeta {
        match self {
            Arch::Sfcn(_) => ModelMeta {
                in_channels: 3,
                output_stride: SFCN_STRIDE,
            },
            Arch::Generator(_) => ModelMeta {
                in_channels: 3,
                output_stride: 1,
            },
            Arch::PatchDisc(_) => ModelMeta {
                in_channels: 3,
                output_stride: 4,
            },
            Arch::DomainCls(a) => ModelMeta {
                in_channels: a.in_channels,
                output_stride: 2,
            },
        }
    }

    pub fn init<T: Real>(&self, seed: u64) -> ModelState<T> {
        let mut params = BTreeMap::new();
        for (i, spec) in self.schema().into_iter().enumerate() {
            let n: usize = spec.shape.iter().product();
            let data = match spec.init {
                Init::Const(v) => vec![T::of(v); n],
                Init::Fan { fan_in, gain } => {
                    let mut rng = rng_from(derive_seed(seed, i as u64));
                    let normal = Normal::new(0.0, gain / (fan_in as f64).sqrt()).expect("positive std");
                    (0..n).map(|_| T::of(normal.sample(&mut rng))).collect()
                }
            };
            params.insert(spec.name, Tensor::from_vec(&spec.shape, data).expect("schema shape"));
        }
        ModelState { arch: *self, params }
    }
}

/// Parameters of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<T: Real = f32> {
    pub arch: Arch,
    pub params: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ModelState<T> {
    pub fn arch_id(&self) -> String {
        self.arch.to_string()
    }

    pub fn meta(&self) -> ModelMeta {
        self.arch.meta()
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Parameter names and shapes match the architecture and every value is
    /// finite.
    pub fn validate(&self) -> Result<()> {
        let schema = self.arch.schema();
        if schema.len() != self.params.len() {
            return Err(Error::Argument(format!(
                "{}: expected {} parameter tensors, found {}",
                self.arch,
                schema.len(),
                self.params.len()
            )));
        }
        for spec in schema {
            let t = self
                .params
                .get(&spec.name)
                .ok_or_else(|| Error::Argument(format!("{}: missing parameter {}", self.arch, spec.name)))?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::Shape(format!(
                    "{}: parameter {} has shape {:?}, expected {:?}",
                    self.arch,
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
            if !t.all_finite() {
                return Err(Error::Argument(format!("{}: parameter {} is not finite", self.arch, spec.name)));
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ModelState<U> {
        ModelState {
            arch: self.arch,
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Put every parameter on `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(k, v)| {
                let var = if trainable { g.param(v.clone()) } else { g.constant(v.clone()) };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }
}

/// Graph handles for a bound [`ModelState`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn vars(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Gradients for every parameter that received one.
    pub fn grads<T: Real>(&self, grads: &Gradients<T>) -> BTreeMap<String, Tensor<T>> {
        self.vars
            .iter()
            .filter_map(|(k, v)| grads.get(*v).map(|g| (k.clone(), g.clone())))
            .collect()
    }

    pub(crate) fn conv<T: Real>(&self, g: &Graph<T>, name: &str, x: Var, stride: usize, pad: usize) -> Var {
        g.conv2d(x, self.var(&format!("{name}.w")), Some(self.var(&format!("{name}.b"))), stride, pad)
    }

    pub(crate) fn deconv<T: Real>(&self, g: &Graph<T>, name: &str, x: Var, stride: usize, pad: usize) -> Var {
        g.conv_transpose2d(x, self.var(&format!("{name}.w")), Some(self.var(&format!("{name}.b"))), stride, pad)
    }
}

pub(crate) fn check_input<T: Real>(g: &Graph<T>, x: Var, channels: usize, what: &str) -> Result<(usize, usize, usize)> {
    let shape = g.shape(x);
    match shape.as_slice() {
        [n, c, h, w] if *c == channels && *n > 0 && *h > 0 && *w > 0 => Ok((*n, *h, *w)),
        s => Err(Error::Shape(format!("{what}: expected [N, {channels}, H, W] input, got {s:?}"))),
    }
}
