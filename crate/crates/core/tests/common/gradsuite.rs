//! Finite-difference checks of every loss against every network it trains,
//! at toy shapes in f64. Each case panics on failure and returns its worst
//! relative error.

use rand::Rng as _;

use crowdlab::autograd::{Graph, Var};
use crowdlab::gradcheck::{check_coordinates, check_smooth_coordinates};
use crowdlab::losses::*;
use crowdlab::nets::*;
use crowdlab::rng::rng_from;
use crowdlab::tensor::Tensor;

pub const COORDS: usize = 60;
pub const EPS: f64 = 1e-6;
/// Absolute floor per unit of loss: finite-difference roundoff grows with
/// the magnitude of the loss being differenced.
pub const FLOOR: f64 = 1e-6;
pub const TOL: f64 = 1e-4;
/// One-sided differences disagreeing by this much mark a ReLU kink.
pub const KINK_TOL: f64 = 1e-3;
/// At most this many kinks per probed model.
pub const MAX_KINKS: usize = COORDS / 5;

fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = rng_from(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

const SFCN: SfcnArch = SfcnArch { width: 2 };
const GEN: GeneratorArch = GeneratorArch { ngf: 2, n_res: 1 };
const PD: PatchDiscArch = PatchDiscArch { ndf: 2 };
const DC: DomainClsArch = DomainClsArch { in_channels: 8, ndf: 2 };

/// Check `build` against central differences on the parameters of
/// `models[k]` that receive a gradient, for every `k`. Returns the worst
/// relative error seen.
fn check(label: &str, models: &[ModelState<f64>], build: &dyn Fn(&Graph<f64>, &[Bound]) -> Var) -> f64 {
    let g = Graph::new();
    let bounds: Vec<Bound> = models.iter().map(|m| m.bind(&g, true)).collect();
    let root = build(&g, &bounds);
    let grads = g.backward(root);
    let mut worst = 0.0f64;
    for (k, model) in models.iter().enumerate() {
        let reached = bounds[k].grads(&grads);
        assert!(!reached.is_empty(), "{label}: model {k} got no gradient");
        let names: Vec<&String> = reached.keys().collect();
        let x0: Vec<f64> = names.iter().flat_map(|n| model.params[*n].data().to_vec()).collect();
        let analytic: Vec<f64> = names.iter().flat_map(|n| reached[*n].data().to_vec()).collect();
        let loss = |x: &[f64]| {
            let mut m = models.to_vec();
            let mut off = 0;
            for n in &names {
                let t = m[k].params.get_mut(*n).unwrap();
                let len = t.len();
                t.data_mut().copy_from_slice(&x[off..off + len]);
                off += len;
            }
            let g = Graph::new();
            let b: Vec<Bound> = m.iter().map(|s| s.bind(&g, false)).collect();
            let v = build(&g, &b);
            g.item(v)
        };
        assert!(x0.len() >= COORDS, "{label}: only {} coordinates", x0.len());
        let floor = FLOOR * g.item(root).abs().max(1.0);
        let r = check_smooth_coordinates(&x0, &analytic, loss, COORDS, EPS, floor, KINK_TOL, 17 + k as u64);
        assert_eq!(r.probes.len(), COORDS);
        assert!(r.kinks.len() <= MAX_KINKS, "{label}: {} kinks", r.kinks.len());
        let w = r.worst().unwrap();
        println!(
            "{label} [{}]: loss {:.3}, max rel err {:.2e} (coord {}: {:.6e} vs {:.6e}), {} kinks skipped",
            model.arch,
            g.item(root),
            w.rel_error,
            w.coordinate,
            w.analytic,
            w.numeric,
            r.kinks.len()
        );
        assert!(w.rel_error < TOL, "{label} [{}]: {w:?}", model.arch);
        worst = worst.max(w.rel_error);
    }
    worst
}

fn sfcn() -> ModelState<f64> {
    Arch::Sfcn(SFCN).init(1)
}
fn generator(seed: u64) -> ModelState<f64> {
    Arch::Generator(GEN).init(seed)
}
fn patch_disc(seed: u64) -> ModelState<f64> {
    Arch::PatchDisc(PD).init(seed)
}
fn domain_cls() -> ModelState<f64> {
    Arch::DomainCls(DC).init(5)
}

fn unit_images(seed: u64) -> Tensor<f64> {
    random(&[2, 3, 16, 16], seed, 0.0, 1.0)
}
fn signed_images(seed: u64) -> Tensor<f64> {
    random(&[2, 3, 16, 16], seed, -0.9, 0.9)
}

pub fn counting_mse_through_sfcn() -> f64 {
    let x = unit_images(1);
    let gt = random(&[2, 1, 2, 2], 2, 0.0, 2.0);
    check("counting_mse", &[sfcn()], &|g, b| {
        let out = SFCN.forward(g, &b[0], g.constant(x.clone()), false).unwrap();
        counting_mse(g, out.density, g.constant(gt.clone())).unwrap()
    })
}

pub fn seg_ce_through_sfcn() -> f64 {
    let x = unit_images(3);
    let mask = random(&[2, 16, 16], 4, 0.0, 1.0).map(|v| v.round());
    check("seg_ce", &[sfcn()], &|g, b| {
        let out = SFCN.forward(g, &b[0], g.constant(x.clone()), true).unwrap();
        seg_ce(g, out.seg.unwrap(), &mask).unwrap()
    })
}

pub fn gan_losses_through_patch_discriminator() -> f64 {
    let mut worst = 0.0f64;
    let real = signed_images(5);
    let fake = signed_images(6);
    for crit in [GanCriterion::LeastSquares, GanCriterion::Vanilla] {
        worst = worst.max(check(&format!("gan_generator_loss/{crit:?}"), &[patch_disc(1)], &|g, b| {
            gan_generator_loss(g, PD.forward(g, &b[0], g.constant(fake.clone())).unwrap(), crit)
        }));
        worst = worst.max(check(&format!("gan_discriminator_loss/{crit:?}"), &[patch_disc(1)], &|g, b| {
            let r = PD.forward(g, &b[0], g.constant(real.clone())).unwrap();
            let f = PD.forward(g, &b[0], g.constant(fake.clone())).unwrap();
            gan_discriminator_loss(g, r, f, crit)
        }));
    }
    worst
}

pub fn domain_losses_through_classifier_and_sfcn() -> f64 {
    let mut worst = 0.0f64;
    let fs = random(&[2, 8, 2, 2], 7, -1.0, 1.0);
    let fr = random(&[2, 8, 2, 2], 8, -1.0, 1.0);
    worst = worst.max(check("domain_cls_loss", &[domain_cls()], &|g, b| {
        let os = DC.forward(g, &b[0], g.constant(fs.clone())).unwrap();
        let or = DC.forward(g, &b[0], g.constant(fr.clone())).unwrap();
        domain_cls_loss(g, os, or).unwrap()
    }));
    let x = unit_images(9);
    for red in [Reduction::Mean, Reduction::Sum] {
        worst = worst.max(check(&format!("inverse_adv_loss/{red:?}"), &[sfcn(), domain_cls()], &|g, b| {
            let out = SFCN.forward(g, &b[0], g.constant(x.clone()), false).unwrap();
            let or = DC.forward(g, &b[1], out.features).unwrap();
            inverse_adv_loss(g, or, red).unwrap()
        }));
    }
    worst
}

pub fn cycle_losses_through_generators_and_discriminators() -> f64 {
    let mut worst = 0.0f64;
    let is = signed_images(10);
    let ir = signed_images(11);
    let models = [generator(1), generator(2), patch_disc(3), patch_disc(4)];
    for crit in [GanCriterion::LeastSquares, GanCriterion::Vanilla] {
        worst = worst.max(check(&format!("cycle_gan_loss/{crit:?}"), &models, &|g, b| {
            let (t, _) = cycle_gan_loss(
                g,
                g.constant(is.clone()),
                g.constant(ir.clone()),
                &BoundGenerator { arch: GEN, params: &b[0] },
                &BoundGenerator { arch: GEN, params: &b[1] },
                &BoundPatchDisc { arch: PD, params: &b[2] },
                &BoundPatchDisc { arch: PD, params: &b[3] },
                10.0,
                crit,
            )
            .unwrap();
            t.total
        }));
    }
    worst = worst.max(check("se_cycle_loss", &models[..2], &|g, b| {
        se_cycle_loss(
            g,
            g.constant(is.clone()),
            g.constant(ir.clone()),
            &BoundGenerator { arch: GEN, params: &b[0] },
            &BoundGenerator { arch: GEN, params: &b[1] },
            &SsimConfig::default(),
        )
        .unwrap()
    }));
    worst
}

pub fn ssim_index_input_gradient() -> f64 {
    let a = random(&[2, 3, 16, 16], 12, 0.0, 1.0);
    let b0 = random(&[2, 3, 16, 16], 13, 0.0, 1.0);
    let cfg = SsimConfig::default();
    let eval = |x: &[f64]| {
        let g = Graph::new();
        let bv = g.constant(Tensor::from_vec(b0.shape(), x.to_vec()).unwrap());
        let v = ssim_index(&g, g.constant(a.clone()), bv, &cfg).unwrap();
        g.item(v)
    };
    let g = Graph::new();
    let bv = g.param(b0.clone());
    let v = ssim_index(&g, g.constant(a.clone()), bv, &cfg).unwrap();
    let grads = g.backward(v);
    let r = check_coordinates(b0.data(), grads.get(bv).unwrap().data(), eval, COORDS, EPS, FLOOR, 3);
    println!("ssim_index [input]: max rel err {:.2e}", r.max_rel_error());
    assert!(r.max_rel_error() < TOL, "{:?}", r.worst());
    r.max_rel_error()
}

pub fn joint_loss_through_every_network() -> f64 {
    let mut worst = 0.0f64;
    let is = signed_images(14);
    let ir = signed_images(15);
    let dens = random(&[2, 1, 2, 2], 16, 0.0, 2.0);
    let models = [sfcn(), generator(1), generator(2), patch_disc(3), patch_disc(4), domain_cls()];
    for se in [true, false] {
        let opts = JointOptions {
            weights: LossWeights::default(),
            criterion: GanCriterion::LeastSquares,
            se_cycle: se.then(SsimConfig::default),
            adv_reduction: Reduction::Mean,
        };
        worst = worst.max(check(&format!("joint_loss/se_cycle={se}"), &models, &|g, b| {
            let m = JointModels {
                g_sr: BoundGenerator { arch: GEN, params: &b[1] },
                g_rs: BoundGenerator { arch: GEN, params: &b[2] },
                d_r: BoundPatchDisc { arch: PD, params: &b[3] },
                d_s: BoundPatchDisc { arch: PD, params: &b[4] },
                sfcn: SFCN,
                sfcn_params: &b[0],
                dc: DC,
                dc_params: &b[5],
            };
            let t = joint_loss(g, &m, g.constant(is.clone()), g.constant(dens.clone()), g.constant(ir.clone()), &opts).unwrap();
            t.total
        }));
    }
    worst
}

pub const CASES: [(&str, fn() -> f64); 7] = [
    ("counting_mse x sfcn", counting_mse_through_sfcn),
    ("seg_ce x sfcn", seg_ce_through_sfcn),
    ("gan losses x patch discriminator", gan_losses_through_patch_discriminator),
    ("domain losses x classifier, sfcn", domain_losses_through_classifier_and_sfcn),
    ("cycle, se_cycle x generators, discriminators", cycle_losses_through_generators_and_discriminators),
    ("ssim_index x input", ssim_index_input_gradient),
    ("joint_loss x every network", joint_loss_through_every_network),
];
