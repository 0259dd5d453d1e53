use std::collections::BTreeMap;

use super::batch::{epoch_order, image_batch, make_batch, prepare, to_signed, TrainItem};
use super::record::{state_digest, EpochRecord, RunDir, RunRecord, StepRecord};
use super::supervised::{counting_step, eval_options, evaluate, mean_losses, Selection, Watch, INIT_SALT, ORDER_SALT};
use crate::autograd::Graph;
use crate::checkpoint::Checkpoint;
use crate::config::{Regime, TrainConfig};
use crate::dataset::{Dataset, LabeledSample};
use crate::error::{Error, Result};
use crate::losses::{
    domain_cls_loss, gan_discriminator_loss, joint_loss, ssim, to_unit, BoundGenerator, BoundPatchDisc, JointModels,
    JointOptions, SsimConfig,
};
use crate::metrics::{Prediction, Predictor, SfcnPredictor};
use crate::nets::{Arch, GeneratorArch, ModelState};
use crate::optim::{lr_at, Adam, AdamConfig};
use crate::regularizers::{apply_scene_filter, fit_density_bound, DensityBound, FilterOutcome};
use crate::rng::{derive_seed, rng_from};
use crate::tensor::Tensor;

const REAL_ORDER_SALT: u64 = 0x7ea1;

/// The six networks of the adaptation regime.
#[derive(Clone, Debug, PartialEq)]
pub struct DaModels {
    pub sfcn: ModelState,
    pub g_sr: ModelState,
    pub g_rs: ModelState,
    pub d_r: ModelState,
    pub d_s: ModelState,
    pub dc: ModelState,
}

impl DaModels {
    pub fn init(cfg: &TrainConfig) -> Self {
        let m = &cfg.model;
        let seed = |k: u64| derive_seed(cfg.seed, INIT_SALT + k);
        Self {
            sfcn: Arch::Sfcn(m.sfcn()).init(seed(0)),
            g_sr: Arch::Generator(m.generator()).init(seed(1)),
            g_rs: Arch::Generator(m.generator()).init(seed(2)),
            d_r: Arch::PatchDisc(m.patch_disc()).init(seed(3)),
            d_s: Arch::PatchDisc(m.patch_disc()).init(seed(4)),
            dc: Arch::DomainCls(m.domain_cls()).init(seed(5)),
        }
    }

    fn named(&self) -> [(&'static str, &ModelState); 6] {
        [
            ("sfcn", &self.sfcn),
            ("g_sr", &self.g_sr),
            ("g_rs", &self.g_rs),
            ("d_r", &self.d_r),
            ("d_s", &self.d_s),
            ("dc", &self.dc),
        ]
    }
}

struct Optims {
    sfcn: Adam,
    g_sr: Adam,
    g_rs: Adam,
    d_r: Adam,
    d_s: Adam,
    dc: Adam,
}

impl Optims {
    fn new() -> Self {
        let a = || Adam::new(AdamConfig::default());
        Self {
            sfcn: a(),
            g_sr: a(),
            g_rs: a(),
            d_r: a(),
            d_s: a(),
            dc: a(),
        }
    }
}

fn generator_arch(s: &ModelState) -> Result<GeneratorArch> {
    match s.arch {
        Arch::Generator(a) => Ok(a),
        other => Err(Error::Argument(format!("{other} is not a generator"))),
    }
}

/// Runs `G_sr` on the image before counting.
pub struct TranslatedPredictor {
    pub generator: ModelState,
    pub counter: SfcnPredictor,
}

impl TranslatedPredictor {
    pub fn translate(&self, image: &Tensor<f32>) -> Result<Tensor<f32>> {
        translate_unit(&self.generator, image)
    }
}

impl Predictor for TranslatedPredictor {
    fn predict(&self, s: &LabeledSample) -> Result<Prediction> {
        self.counter.predict_image(&self.translate(&s.image)?)
    }
}

/// Apply a generator to a `[3, H, W]` image in `[0, 1]`.
pub fn translate_unit(generator: &ModelState, image: &Tensor<f32>) -> Result<Tensor<f32>> {
    let arch = generator_arch(generator)?;
    let [3, h, w] = *image.shape() else {
        return Err(Error::Shape(format!("expected [3, H, W], got {:?}", image.shape())));
    };
    let g = Graph::<f32>::new();
    let p = generator.bind(&g, false);
    let x = g.constant(to_signed(image).reshape(&[1, 3, h, w])?);
    let y = to_unit(&g, arch.forward(&g, &p, x)?);
    let out = g.value(y).clone();
    out.reshape(&[3, h, w])
}

/// Mean SSIM between images and their round trip through `first` then
/// `second`, on the `[0, 1]` scale.
pub fn reconstruction_ssim(first: &ModelState, second: &ModelState, images: &[Tensor<f32>]) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::Argument("reconstruction_ssim needs images".into()));
    }
    let mut acc = 0.0;
    for img in images {
        let rec = translate_unit(second, &translate_unit(first, img)?)?;
        acc += ssim(img, &rec, &SsimConfig::default())?;
    }
    Ok(acc / images.len() as f64)
}

fn variance(t: &Tensor<f32>) -> f64 {
    let n = t.len() as f64;
    let mean = t.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    t.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n
}

/// Synthetic and real inputs of an adaptation run.
pub struct DaInputs<'a> {
    pub synth: &'a Dataset,
    pub synth_train: &'a [String],
    pub synth_val: &'a [String],
    /// Only images are read from this dataset.
    pub real: &'a Dataset,
    pub real_train: &'a [String],
}

pub struct DaOutcome {
    pub record: RunRecord,
    /// Counter at the epoch with the lowest validation MAE on translated
    /// synthetic validation images.
    pub best_sfcn: ModelState,
    pub models: DaModels,
    pub bound: Option<DensityBound>,
    pub filter: Option<FilterOutcome>,
    /// SSIM of round trips on synthetic validation and real training
    /// images after the last epoch.
    pub recon_ssim: f64,
}

/// Joint translation + counting + feature alignment.
///
/// Each iteration runs one shared forward pass. The generator/counter
/// update uses the current discriminators; the discriminator update then
/// sees the same, detached, translations and features.
pub fn train_da_joint(cfg: &TrainConfig, inputs: &DaInputs<'_>, mut run: Option<&mut RunDir>) -> Result<DaOutcome> {
    cfg.validate()?;
    let reads_before = inputs.real.label_reads();
    let filter = match &cfg.filter_rule {
        Some(rule) => {
            let rule = rule.resolve()?;
            let out = apply_scene_filter(&inputs.synth.manifest().subset(inputs.synth_train)?, &rule)?;
            if out.kept.is_empty() {
                return Err(Error::Argument("the filter rule rejected every synthetic training image".into()));
            }
            Some(out)
        }
        None => None,
    };
    let train_ids: Vec<String> = match &filter {
        Some(f) => f.kept.records.iter().map(|r| r.id.clone()).collect(),
        None => inputs.synth_train.to_vec(),
    };
    let synth_train = inputs.synth.load_labeled(&train_ids)?;
    let synth_val = inputs.synth.load_labeled(inputs.synth_val)?;
    let real_images = inputs.real.load_images(inputs.real_train)?;
    if real_images.is_empty() {
        return Err(Error::Argument("adaptation needs real images".into()));
    }
    let items = prepare(&synth_train, cfg.sigma, cfg.lnf)?;
    let bound = if cfg.density_reg {
        let pooled = items.iter().map(|i| i.pooled_density()).collect::<Result<Vec<_>>>()?;
        Some(fit_density_bound(pooled.iter().map(|v| v.as_slice()))?)
    } else {
        None
    };
    let opts = eval_options(cfg, bound);
    let m = cfg.model;
    let (sfcn_arch, gen_arch, pd_arch, dc_arch) = (m.sfcn(), m.generator(), m.patch_disc(), m.domain_cls());
    let joint_opts = JointOptions {
        weights: cfg.loss_weights,
        criterion: cfg.adapt.criterion,
        se_cycle: cfg.adapt.se_cycle.then(SsimConfig::default),
        adv_reduction: cfg.adapt.adv_reduction,
    };

    let mut models = DaModels::init(cfg);
    let mut optims = Optims::new();
    let mut record = RunRecord::new(cfg, Regime::DaJoint, state_digest(&models.sfcn));
    let mut sel = Selection { best: None };
    let mut watch = Watch::default();
    let mut low_variance_epochs = 0;
    let mut step = 0;
    let mut real_cursor = 0;
    let mut real_rng = rng_from(derive_seed(cfg.seed, REAL_ORDER_SALT));
    let mut real_order = epoch_order(real_images.len(), &mut real_rng);

    for epoch in 0..cfg.epochs {
        let lr = lr_at(cfg.lr, cfg.lr_decay_per_epoch, epoch);
        let gan_lr = lr_at(cfg.adapt.gan_lr, cfg.lr_decay_per_epoch, epoch);
        let dc_lr = lr_at(cfg.adapt.dc_lr, cfg.lr_decay_per_epoch, epoch);
        let joint = epoch >= cfg.adapt.warmup_epochs;
        let mut rng = rng_from(derive_seed(cfg.seed, ORDER_SALT + epoch as u64));
        let order = epoch_order(items.len(), &mut rng);
        let first = record.steps.len();
        let mut var_acc = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainItem> = chunk.iter().map(|&i| &items[i]).collect();
            let rec = if !joint {
                counting_step(
                    cfg,
                    sfcn_arch,
                    &mut models.sfcn,
                    &mut optims.sfcn,
                    &batch,
                    &mut rng,
                    lr,
                    (epoch, step),
                    &mut watch,
                )?
            } else {
                let mut reals = Vec::with_capacity(batch.len());
                for _ in 0..batch.len() {
                    if real_cursor == real_order.len() {
                        real_order = epoch_order(real_images.len(), &mut real_rng);
                        real_cursor = 0;
                    }
                    reals.push(&real_images[real_order[real_cursor]]);
                    real_cursor += 1;
                }
                let sb = make_batch(&batch, cfg.crop, &mut rng)?;
                let rb = image_batch(&reals, cfg.crop, &mut rng)?;
                if sb.images.shape() != rb.shape() {
                    return Err(Error::Shape(format!(
                        "synthetic batch {:?} and real batch {:?} differ",
                        sb.images.shape(),
                        rb.shape()
                    )));
                }

                let g = Graph::<f32>::new();
                let p_sfcn = models.sfcn.bind(&g, true);
                let p_gsr = models.g_sr.bind(&g, true);
                let p_grs = models.g_rs.bind(&g, true);
                let p_dr = models.d_r.bind(&g, true);
                let p_ds = models.d_s.bind(&g, true);
                let p_dc = models.dc.bind(&g, true);
                let i_s = g.constant(to_signed(&sb.images));
                let i_r = g.constant(to_signed(&rb));
                let density = g.constant(sb.density);
                let jm = JointModels {
                    g_sr: BoundGenerator {
                        arch: gen_arch,
                        params: &p_gsr,
                    },
                    g_rs: BoundGenerator {
                        arch: gen_arch,
                        params: &p_grs,
                    },
                    d_r: BoundPatchDisc {
                        arch: pd_arch,
                        params: &p_dr,
                    },
                    d_s: BoundPatchDisc {
                        arch: pd_arch,
                        params: &p_ds,
                    },
                    sfcn: sfcn_arch,
                    sfcn_params: &p_sfcn,
                    dc: dc_arch,
                    dc_params: &p_dc,
                };
                let t = joint_loss(&g, &jm, i_s, density, i_r, &joint_opts)?;
                let crit = cfg.adapt.criterion;
                let d_r_loss = gan_discriminator_loss(
                    &g,
                    jm.d_r.score(&g, i_r)?,
                    jm.d_r.score(&g, g.detach(t.trace.fake_r))?,
                    crit,
                );
                let d_s_loss = gan_discriminator_loss(
                    &g,
                    jm.d_s.score(&g, i_s)?,
                    jm.d_s.score(&g, g.detach(t.trace.fake_s))?,
                    crit,
                );
                let o_s = dc_arch.forward(&g, &p_dc, g.detach(t.feat_s))?;
                let o_r = dc_arch.forward(&g, &p_dc, g.detach(t.feat_r))?;
                let dc_loss = domain_cls_loss(&g, o_s, o_r)?;
                let disc_total = g.add(g.add(d_r_loss, d_s_loss), dc_loss);

                let item = |v| g.item(v) as f64;
                let total = item(t.total);
                watch.check(step, total)?;
                watch.check(step, item(disc_total))?;
                var_acc += variance(&g.value(t.trace.fake_r));

                let mut losses = BTreeMap::from([
                    ("count".to_string(), item(t.count)),
                    ("trans".to_string(), item(t.trans)),
                    ("adv".to_string(), item(t.adv)),
                    ("gan_sr".to_string(), item(t.cyclegan.gan_sr)),
                    ("gan_rs".to_string(), item(t.cyclegan.gan_rs)),
                    ("cycle".to_string(), item(t.cyclegan.cycle)),
                    ("d_r".to_string(), item(d_r_loss)),
                    ("d_s".to_string(), item(d_s_loss)),
                    ("d_dc".to_string(), item(dc_loss)),
                ]);
                if let Some(se) = t.se_cycle {
                    losses.insert("se_cycle".into(), item(se));
                }

                let gen_grads = g.backward(t.total);
                let disc_grads = g.backward(disc_total);
                let diverged = |_| watch.diverged(step);
                optims
                    .sfcn
                    .update(&mut models.sfcn.params, &p_sfcn.grads(&gen_grads), lr)
                    .map_err(diverged)?;
                optims
                    .g_sr
                    .update(&mut models.g_sr.params, &p_gsr.grads(&gen_grads), gan_lr)
                    .map_err(diverged)?;
                optims
                    .g_rs
                    .update(&mut models.g_rs.params, &p_grs.grads(&gen_grads), gan_lr)
                    .map_err(diverged)?;
                optims
                    .d_r
                    .update(&mut models.d_r.params, &p_dr.grads(&disc_grads), gan_lr)
                    .map_err(diverged)?;
                optims
                    .d_s
                    .update(&mut models.d_s.params, &p_ds.grads(&disc_grads), gan_lr)
                    .map_err(diverged)?;
                optims
                    .dc
                    .update(&mut models.dc.params, &p_dc.grads(&disc_grads), dc_lr)
                    .map_err(diverged)?;
                StepRecord {
                    epoch,
                    step,
                    lr,
                    losses,
                    total,
                }
            };
            if let Some(r) = run.as_deref_mut() {
                r.log_step(&rec)?;
            }
            record.steps.push(rec);
            step += 1;
        }

        let mut diagnostics = BTreeMap::new();
        if joint {
            let v = var_acc / order.chunks(cfg.batch_size).len() as f64;
            diagnostics.insert("translated_variance".to_string(), v);
            if v < cfg.adapt.collapse_variance {
                low_variance_epochs += 1;
                if low_variance_epochs >= cfg.adapt.collapse_epochs {
                    return Err(Error::ModeCollapse {
                        threshold: cfg.adapt.collapse_variance,
                        epochs: low_variance_epochs,
                        variance: v,
                    });
                }
            } else {
                low_variance_epochs = 0;
            }
        }

        let counter = SfcnPredictor::new(models.sfcn.clone(), false)?;
        let val_eval = if joint {
            let tp = TranslatedPredictor {
                generator: models.g_sr.clone(),
                counter,
            };
            if let Some(r) = run.as_deref_mut() {
                for (k, s) in synth_val.iter().chain(&synth_train).take(cfg.adapt.dump_pairs).enumerate() {
                    r.write_pair(epoch, k, &s.image, &tp.translate(&s.image)?)?;
                }
            }
            evaluate(&tp, &synth_val, &opts)?
        } else {
            evaluate(&counter, &synth_val, &opts)?
        };
        let improved = sel.offer(epoch, val_eval.as_ref().map(|v| &v.0), &models.sfcn);
        if let Some(r) = run.as_deref_mut() {
            if let Some((rep, rows)) = &val_eval {
                r.log_eval(epoch, rep, rows)?;
            }
            for (name, st) in models.named() {
                let ck = Checkpoint {
                    state: st.clone(),
                    step: step as u64,
                    config_hash: record.config_hash.clone(),
                    optimizer: None,
                };
                r.save_checkpoint(&format!("last-{name}"), &ck)?;
                if name == "sfcn" && improved {
                    record.best_checkpoint = Some(r.save_checkpoint("best-sfcn", &ck)?);
                }
            }
        }
        record.epochs.push(EpochRecord {
            epoch,
            lr,
            mean_losses: mean_losses(&record.steps[first..]),
            val: val_eval.map(|v| v.0),
            diagnostics,
        });
    }

    let reads = inputs.real.label_reads() - reads_before;
    record.target_label_reads = Some(reads);
    if reads != 0 {
        return Err(Error::Contract(format!("{reads} real-domain label files were read during adaptation")));
    }
    let best_sfcn = match sel.best {
        Some((epoch, mae, s)) => {
            record.best_epoch = Some(epoch);
            record.best_val_mae = Some(mae);
            s
        }
        None => {
            record.best_epoch = Some(cfg.epochs - 1);
            models.sfcn.clone()
        }
    };
    let synth_images: Vec<Tensor<f32>> = synth_val.iter().map(|s| s.image.clone()).collect();
    let mut recon = Vec::new();
    if !synth_images.is_empty() {
        recon.push(reconstruction_ssim(&models.g_sr, &models.g_rs, &synth_images)?);
    }
    recon.push(reconstruction_ssim(&models.g_rs, &models.g_sr, &real_images)?);
    let recon_ssim = recon.iter().sum::<f64>() / recon.len() as f64;
    if let Some(r) = run {
        r.finish(&record)?;
    }
    Ok(DaOutcome {
        record,
        best_sfcn,
        models,
        bound,
        filter,
        recon_ssim,
    })
}
