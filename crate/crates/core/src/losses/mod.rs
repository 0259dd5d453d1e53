//! Training objectives: counting MSE, segmentation cross-entropy, GAN and
//! cycle losses, SSIM and the SSIM cycle term, domain-classifier losses
//! and the weighted joint objective for adaptation.

mod ssim;

pub use ssim::{ssim, ssim_index, SsimConfig};

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::labels::BinaryMask;
use crate::nets::{Bound, DomainClsArch, GeneratorArch, PatchDiscArch, SfcnArch};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Counting loss on translated synthetic images.
    pub alpha: f64,
    /// Translation (CycleGAN + SSIM cycle) loss.
    pub beta: f64,
    /// Inverse adversarial loss on real-domain features.
    pub lambda_adv: f64,
    /// Cycle-consistency weight inside the CycleGAN objective.
    pub lambda_cycle: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.1,
            lambda_adv: 0.01,
            lambda_cycle: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in [
            ("loss_weights.alpha", self.alpha),
            ("loss_weights.beta", self.beta),
            ("loss_weights.lambda_adv", self.lambda_adv),
            ("loss_weights.lambda_cycle", self.lambda_cycle),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(k, format!("must be a finite value >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// `alpha * count + beta * trans + lambda_adv * adv`, in the same
    /// order of operations as [`joint_loss`].
    pub fn total<T: Real>(&self, count: T, trans: T, adv: T) -> T {
        count * T::of(self.alpha) + trans * T::of(self.beta) + adv * T::of(self.lambda_adv)
    }
}

fn same(g_shape: &[usize], h_shape: &[usize], what: &str) -> Result<()> {
    if g_shape != h_shape {
        return Err(Error::Shape(format!("{what}: shapes {g_shape:?} and {h_shape:?} differ")));
    }
    Ok(())
}

/// Mean of squared per-pixel differences.
pub fn counting_mse<T: Real>(g: &Graph<T>, pred: Var, gt: Var) -> Result<Var> {
    same(&g.shape(pred), &g.shape(gt), "counting_mse")?;
    Ok(g.mean(g.square(g.sub(pred, gt))))
}

/// Stack masks into a `[N, H, W]` 0/1 tensor.
pub fn mask_target<T: Real>(masks: &[&BinaryMask]) -> Result<Tensor<T>> {
    let Some(first) = masks.first() else {
        return Err(Error::Argument("no masks given".into()));
    };
    let (h, w) = first.shape();
    let mut data = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        same(&[m.height(), m.width()], &[h, w], "mask_target")?;
        data.extend(m.data().iter().map(|&b| if b { T::one() } else { T::zero() }));
    }
    Tensor::from_vec(&[masks.len(), h, w], data)
}

/// Per-channel one-hot selector for 2-class logits: channel 1 where the
/// mask is set, channel 0 elsewhere.
fn one_hot<T: Real>(mask: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, h, w] = *mask.shape() else {
        return Err(Error::Shape(format!("mask must be [N, H, W], got {:?}", mask.shape())));
    };
    let mut out = vec![T::zero(); n * 2 * h * w];
    for (i, &v) in mask.data().iter().enumerate() {
        let cls = if v == T::zero() {
            0
        } else if v == T::one() {
            1
        } else {
            return Err(Error::Argument(format!("mask value {v:?} at index {i} is not 0 or 1")));
        };
        let (b, px) = (i / (h * w), i % (h * w));
        out[(b * 2 + cls) * h * w + px] = T::one();
    }
    Tensor::from_vec(&[n, 2, h, w], out)
}

/// Mean per-pixel negative log-likelihood of the true class.
pub fn seg_ce<T: Real>(g: &Graph<T>, logits: Var, mask: &Tensor<T>) -> Result<Var> {
    let ls = g.shape(logits);
    let target = one_hot(mask)?;
    same(&ls, target.shape(), "seg_ce")?;
    let pixels = T::of((ls[0] * ls[2] * ls[3]) as f64);
    let picked = g.mul(g.log_softmax(logits), g.constant(target));
    Ok(g.scale(g.sum(picked), -T::one() / pixels))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanCriterion {
    /// Squared distance of patch scores to 1 (real) or 0 (fake).
    #[default]
    LeastSquares,
    /// Sigmoid cross-entropy on patch logits.
    Vanilla,
}

fn gan_target<T: Real>(g: &Graph<T>, scores: Var, real: bool, crit: GanCriterion) -> Var {
    match crit {
        GanCriterion::LeastSquares => {
            let shifted = if real { g.add_scalar(scores, -T::one()) } else { scores };
            g.mean(g.square(shifted))
        }
        // -log sigmoid(z) = softplus(-z); -log(1 - sigmoid(z)) = softplus(z)
        GanCriterion::Vanilla => {
            let z = if real { g.scale(scores, -T::one()) } else { scores };
            g.mean(g.softplus(z))
        }
    }
}

/// Generator side: fake scores are pushed toward "real".
pub fn gan_generator_loss<T: Real>(g: &Graph<T>, fake_scores: Var, crit: GanCriterion) -> Var {
    gan_target(g, fake_scores, true, crit)
}

/// Discriminator side, averaged over the real and fake halves.
pub fn gan_discriminator_loss<T: Real>(g: &Graph<T>, real_scores: Var, fake_scores: Var, crit: GanCriterion) -> Var {
    let r = gan_target(g, real_scores, true, crit);
    let f = gan_target(g, fake_scores, false, crit);
    g.scale(g.add(r, f), T::of(0.5))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

pub const SOURCE_CLASS: usize = 0;
pub const TARGET_CLASS: usize = 1;

/// Sum over locations of `-log softmax(o)[class]`.
fn class_nll<T: Real>(g: &Graph<T>, o: Var, class: usize) -> Result<(Var, usize)> {
    let s = g.shape(o);
    let [n, 2, h, w] = s[..] else {
        return Err(Error::Shape(format!("domain logits must be [N, 2, h, w], got {s:?}")));
    };
    let mut sel = vec![T::zero(); n * 2 * h * w];
    for b in 0..n {
        sel[(b * 2 + class) * h * w..(b * 2 + class + 1) * h * w].fill(T::one());
    }
    let sel = g.constant(Tensor::from_vec(&s, sel)?);
    Ok((g.scale(g.sum(g.mul(g.log_softmax(o), sel)), -T::one()), n * h * w))
}

/// Trains the domain classifier: class 0 at every location of the
/// synthetic logits `o_s`, class 1 at every location of the real `o_r`.
/// Each half is a mean over its locations; the result is their average.
pub fn domain_cls_loss<T: Real>(g: &Graph<T>, o_s: Var, o_r: Var) -> Result<Var> {
    let (ls, ns) = class_nll(g, o_s, SOURCE_CLASS)?;
    let (lr, nr) = class_nll(g, o_r, TARGET_CLASS)?;
    let a = g.scale(ls, T::of(1.0 / ns as f64));
    let b = g.scale(lr, T::of(1.0 / nr as f64));
    Ok(g.scale(g.add(a, b), T::of(0.5)))
}

/// `-log p(source)` over every location of the real-domain logits.
pub fn inverse_adv_loss<T: Real>(g: &Graph<T>, o_r: Var, reduction: Reduction) -> Result<Var> {
    let (l, n) = class_nll(g, o_r, SOURCE_CLASS)?;
    Ok(match reduction {
        Reduction::Sum => l,
        Reduction::Mean => g.scale(l, T::of(1.0 / n as f64)),
    })
}

/// Anything that maps a `[N, 3, H, W]` image in `[-1, 1]` to another.
pub trait Translator<T: Real> {
    fn translate(&self, g: &Graph<T>, x: Var) -> Result<Var>;
}

/// Pass-through translator.
pub struct Identity;

impl<T: Real> Translator<T> for Identity {
    fn translate(&self, _g: &Graph<T>, x: Var) -> Result<Var> {
        Ok(x)
    }
}

#[derive(Clone, Copy)]
pub struct BoundGenerator<'a> {
    pub arch: GeneratorArch,
    pub params: &'a Bound,
}

impl<T: Real> Translator<T> for BoundGenerator<'_> {
    fn translate(&self, g: &Graph<T>, x: Var) -> Result<Var> {
        self.arch.forward(g, self.params, x)
    }
}

#[derive(Clone, Copy)]
pub struct BoundPatchDisc<'a> {
    pub arch: PatchDiscArch,
    pub params: &'a Bound,
}

impl BoundPatchDisc<'_> {
    pub fn score<T: Real>(&self, g: &Graph<T>, x: Var) -> Result<Var> {
        self.arch.forward(g, self.params, x)
    }
}

/// Both translation directions and their reconstructions.
#[derive(Clone, Copy, Debug)]
pub struct CycleTrace {
    pub fake_r: Var,
    pub rec_s: Var,
    pub fake_s: Var,
    pub rec_r: Var,
}

pub fn run_cycle<T: Real>(
    g: &Graph<T>,
    i_s: Var,
    i_r: Var,
    g_sr: &dyn Translator<T>,
    g_rs: &dyn Translator<T>,
) -> Result<CycleTrace> {
    let fake_r = g_sr.translate(g, i_s)?;
    let rec_s = g_rs.translate(g, fake_r)?;
    let fake_s = g_rs.translate(g, i_r)?;
    let rec_r = g_sr.translate(g, fake_s)?;
    Ok(CycleTrace {
        fake_r,
        rec_s,
        fake_s,
        rec_r,
    })
}

/// `[-1, 1]` to `[0, 1]`.
pub fn to_unit<T: Real>(g: &Graph<T>, x: Var) -> Var {
    g.scale(g.add_scalar(x, T::one()), T::of(0.5))
}

/// `(1 - SSIM(i_s, rec_s)) + (1 - SSIM(i_r, rec_r))` on images mapped
/// from `[-1, 1]` to `[0, 1]`.
pub fn se_cycle_from_trace<T: Real>(g: &Graph<T>, i_s: Var, i_r: Var, t: &CycleTrace, cfg: &SsimConfig) -> Result<Var> {
    let s = ssim_index(g, to_unit(g, i_s), to_unit(g, t.rec_s), cfg)?;
    let r = ssim_index(g, to_unit(g, i_r), to_unit(g, t.rec_r), cfg)?;
    let two = g.constant(Tensor::scalar(T::of(2.0)));
    Ok(g.sub(two, g.add(s, r)))
}

pub fn se_cycle_loss<T: Real>(
    g: &Graph<T>,
    i_s: Var,
    i_r: Var,
    g_sr: &dyn Translator<T>,
    g_rs: &dyn Translator<T>,
    cfg: &SsimConfig,
) -> Result<Var> {
    let t = run_cycle(g, i_s, i_r, g_sr, g_rs)?;
    se_cycle_from_trace(g, i_s, i_r, &t, cfg)
}

/// Generator-side CycleGAN objective split into its addends.
#[derive(Clone, Copy, Debug)]
pub struct CycleGanTerms {
    pub gan_sr: Var,
    pub gan_rs: Var,
    pub cycle: Var,
    pub total: Var,
}

/// `L_GAN(G_sr, D_r) + L_GAN(G_rs, D_s) + lambda * L_cycle`, with the
/// cycle term the mean absolute reconstruction error of each direction.
pub fn cycle_gan_from_trace<T: Real>(
    g: &Graph<T>,
    i_s: Var,
    i_r: Var,
    t: &CycleTrace,
    d_r: &BoundPatchDisc<'_>,
    d_s: &BoundPatchDisc<'_>,
    lambda_cycle: f64,
    crit: GanCriterion,
) -> Result<CycleGanTerms> {
    let gan_sr = gan_generator_loss(g, d_r.score(g, t.fake_r)?, crit);
    let gan_rs = gan_generator_loss(g, d_s.score(g, t.fake_s)?, crit);
    let cyc_s = g.mean(g.abs(g.sub(t.rec_s, i_s)));
    let cyc_r = g.mean(g.abs(g.sub(t.rec_r, i_r)));
    let cycle = g.add(cyc_s, cyc_r);
    let total = g.add(g.add(gan_sr, gan_rs), g.scale(cycle, T::of(lambda_cycle)));
    Ok(CycleGanTerms {
        gan_sr,
        gan_rs,
        cycle,
        total,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn cycle_gan_loss<T: Real>(
    g: &Graph<T>,
    i_s: Var,
    i_r: Var,
    g_sr: &dyn Translator<T>,
    g_rs: &dyn Translator<T>,
    d_r: &BoundPatchDisc<'_>,
    d_s: &BoundPatchDisc<'_>,
    lambda_cycle: f64,
    crit: GanCriterion,
) -> Result<(CycleGanTerms, CycleTrace)> {
    if g.shape(i_s).first() == Some(&0) || g.shape(i_r).first() == Some(&0) {
        return Err(Error::Argument("cycle_gan_loss needs non-empty batches".into()));
    }
    let t = run_cycle(g, i_s, i_r, g_sr, g_rs)?;
    Ok((cycle_gan_from_trace(g, i_s, i_r, &t, d_r, d_s, lambda_cycle, crit)?, t))
}

/// Networks taking part in the joint adaptation objective.
pub struct JointModels<'a> {
    pub g_sr: BoundGenerator<'a>,
    pub g_rs: BoundGenerator<'a>,
    pub d_r: BoundPatchDisc<'a>,
    pub d_s: BoundPatchDisc<'a>,
    pub sfcn: SfcnArch,
    pub sfcn_params: &'a Bound,
    pub dc: DomainClsArch,
    pub dc_params: &'a Bound,
}

#[derive(Clone, Copy, Debug)]
pub struct JointOptions {
    pub weights: LossWeights,
    pub criterion: GanCriterion,
    /// Adds the SSIM cycle term to the translation loss when set.
    pub se_cycle: Option<SsimConfig>,
    pub adv_reduction: Reduction,
}

#[derive(Clone, Copy, Debug)]
pub struct JointTerms {
    pub count: Var,
    pub trans: Var,
    pub adv: Var,
    pub total: Var,
    pub cyclegan: CycleGanTerms,
    pub se_cycle: Option<Var>,
    pub trace: CycleTrace,
    /// Spatial-encoder features of translated synthetic and of real images.
    pub feat_s: Var,
    pub feat_r: Var,
}

/// `alpha * L_cnt(SFCN(G_sr(i_s))) + beta * L_trans + lambda_adv * L_adv(F_r)`.
///
/// Images are `[N, 3, H, W]` in `[-1, 1]`; `density_s` holds the synthetic
/// targets at SFCN resolution.
pub fn joint_loss<T: Real>(
    g: &Graph<T>,
    m: &JointModels<'_>,
    i_s: Var,
    density_s: Var,
    i_r: Var,
    opts: &JointOptions,
) -> Result<JointTerms> {
    let w = &opts.weights;
    w.validate()?;
    let trace = run_cycle(g, i_s, i_r, &m.g_sr, &m.g_rs)?;
    let cyclegan = cycle_gan_from_trace(g, i_s, i_r, &trace, &m.d_r, &m.d_s, w.lambda_cycle, opts.criterion)?;
    let se_cycle = opts
        .se_cycle
        .map(|cfg| se_cycle_from_trace(g, i_s, i_r, &trace, &cfg))
        .transpose()?;
    let trans = match se_cycle {
        Some(se) => g.add(cyclegan.total, se),
        None => cyclegan.total,
    };
    let out_s = m.sfcn.forward(g, m.sfcn_params, to_unit(g, trace.fake_r), false)?;
    let count = counting_mse(g, out_s.density, density_s)?;
    let out_r = m.sfcn.forward(g, m.sfcn_params, to_unit(g, i_r), false)?;
    let o_r = m.dc.forward(g, m.dc_params, out_r.features)?;
    let adv = inverse_adv_loss(g, o_r, opts.adv_reduction)?;
    let total = g.add(
        g.add(g.scale(count, T::of(w.alpha)), g.scale(trans, T::of(w.beta))),
        g.scale(adv, T::of(w.lambda_adv)),
    );
    Ok(JointTerms {
        count,
        trans,
        adv,
        total,
        cyclegan,
        se_cycle,
        trace,
        feat_s: out_s.features,
        feat_r: out_r.features,
    })
}
