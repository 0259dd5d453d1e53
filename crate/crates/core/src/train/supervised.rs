use std::collections::BTreeMap;

use super::batch::{epoch_order, make_batch, prepare, TrainItem};
use super::record::{state_digest, EpochRecord, RunDir, RunRecord, StepRecord};
use crate::autograd::Graph;
use crate::checkpoint::Checkpoint;
use crate::config::{Regime, TrainConfig};
use crate::dataset::LabeledSample;
use crate::error::{Error, Result};
use crate::losses::{counting_mse, seg_ce, SsimConfig};
use crate::metrics::{evaluate_model, EvalOptions, EvalReport, Predictor, SampleRow};
use crate::nets::{Arch, ModelState, SfcnArch};
use crate::optim::{lr_at, Adam, AdamConfig};
use crate::regularizers::DensityBound;
use crate::rng::{derive_seed, rng_from};

pub(super) const INIT_SALT: u64 = 0x1417;
pub(super) const ORDER_SALT: u64 = 0x0bde;

pub struct SupervisedOutcome {
    pub record: RunRecord,
    /// Parameters of the epoch with the lowest validation MAE (the last
    /// epoch when there is no validation set).
    pub best: ModelState,
    pub last: ModelState,
}

pub(super) fn sfcn_arch(cfg: &TrainConfig) -> SfcnArch {
    cfg.model.sfcn()
}

pub(super) fn eval_options(cfg: &TrainConfig, bound: Option<DensityBound>) -> EvalOptions {
    EvalOptions {
        sigma: cfg.sigma,
        lnf: cfg.lnf,
        bound,
        ssim: SsimConfig::default(),
    }
}

/// Tracks divergence and the last finite total.
#[derive(Default)]
pub(super) struct Watch {
    last_finite: Option<(usize, f64)>,
}

impl Watch {
    pub fn check(&mut self, step: usize, total: f64) -> Result<()> {
        if total.is_finite() {
            self.last_finite = Some((step, total));
            Ok(())
        } else {
            Err(self.diverged(step))
        }
    }

    pub fn diverged(&self, step: usize) -> Error {
        Error::Diverged {
            step,
            last_finite: self.last_finite.map(|p| p.1),
            last_finite_step: self.last_finite.map(|p| p.0),
        }
    }
}

pub(super) fn mean_losses(steps: &[StepRecord]) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, f64> = BTreeMap::new();
    for s in steps {
        for (k, v) in &s.losses {
            *acc.entry(k.clone()).or_default() += v;
        }
        *acc.entry("total".into()).or_default() += s.total;
    }
    let n = steps.len().max(1) as f64;
    acc.values_mut().for_each(|v| *v /= n);
    acc
}

/// Best-by-validation-MAE bookkeeping shared by all regimes.
pub(super) struct Selection {
    pub best: Option<(usize, f64, ModelState)>,
}

impl Selection {
    pub fn offer(&mut self, epoch: usize, report: Option<&EvalReport>, state: &ModelState) -> bool {
        let Some(r) = report else { return false };
        let better = self.best.as_ref().is_none_or(|(_, m, _)| r.mae < *m);
        if better {
            self.best = Some((epoch, r.mae, state.clone()));
        }
        better
    }
}

pub(super) fn evaluate(
    predictor: &dyn Predictor,
    val: &[LabeledSample],
    opts: &EvalOptions,
) -> Result<Option<(EvalReport, Vec<SampleRow>)>> {
    if val.is_empty() {
        return Ok(None);
    }
    evaluate_model(predictor, val, opts).map(Some)
}

/// One counting (and optionally segmentation) update. Returns the step
/// record.
pub(super) fn counting_step(
    cfg: &TrainConfig,
    arch: SfcnArch,
    state: &mut ModelState,
    opt: &mut Adam,
    items: &[&TrainItem],
    rng: &mut crate::rng::Rng,
    lr: f64,
    (epoch, step): (usize, usize),
    watch: &mut Watch,
) -> Result<StepRecord> {
    let batch = make_batch(items, cfg.crop, rng)?;
    let g = Graph::<f32>::new();
    let p = state.bind(&g, true);
    let x = g.constant(batch.images);
    let out = arch.forward(&g, &p, x, cfg.multitask)?;
    let count = counting_mse(&g, out.density, g.constant(batch.density))?;
    let mut losses = BTreeMap::from([("count".to_string(), g.item(count) as f64)]);
    let total = match out.seg {
        Some(logits) if cfg.multitask => {
            let seg = seg_ce(&g, logits, &batch.masks)?;
            losses.insert("seg".into(), g.item(seg) as f64);
            g.add(
                g.scale(count, cfg.mtl_count_weight as f32),
                g.scale(seg, cfg.mtl_seg_weight as f32),
            )
        }
        _ => count,
    };
    let tv = g.item(total) as f64;
    watch.check(step, tv)?;
    let grads = p.grads(&g.backward(total));
    opt.update(&mut state.params, &grads, lr).map_err(|_| watch.diverged(step))?;
    Ok(StepRecord {
        epoch,
        step,
        lr,
        losses,
        total: tv,
    })
}

/// Supervised counter training on labelled samples.
///
/// `init` replaces the seeded initialisation; its architecture must match
/// the config.
pub fn train_supervised(
    cfg: &TrainConfig,
    train: &[LabeledSample],
    val: &[LabeledSample],
    init: Option<ModelState>,
    mut run: Option<&mut RunDir>,
) -> Result<SupervisedOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Argument("supervised training needs at least one sample".into()));
    }
    let arch = sfcn_arch(cfg);
    let mut state = match init {
        Some(s) if s.arch != Arch::Sfcn(arch) => {
            return Err(Error::Argument(format!(
                "architecture mismatch: initial state is {}, config asks for {}",
                s.arch,
                Arch::Sfcn(arch)
            )))
        }
        Some(s) => {
            s.validate()?;
            s
        }
        None => Arch::Sfcn(arch).init(derive_seed(cfg.seed, INIT_SALT)),
    };
    let items = prepare(train, cfg.sigma, cfg.lnf)?;
    let opts = eval_options(cfg, None);
    let mut record = RunRecord::new(cfg, Regime::Supervised, state_digest(&state));
    let mut opt = Adam::new(AdamConfig::default());
    let mut sel = Selection { best: None };
    let mut watch = Watch::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let lr = lr_at(cfg.lr, cfg.lr_decay_per_epoch, epoch);
        let mut rng = rng_from(derive_seed(cfg.seed, ORDER_SALT + epoch as u64));
        let order = epoch_order(items.len(), &mut rng);
        let first = record.steps.len();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainItem> = chunk.iter().map(|&i| &items[i]).collect();
            let rec = counting_step(cfg, arch, &mut state, &mut opt, &batch, &mut rng, lr, (epoch, step), &mut watch)?;
            if let Some(r) = run.as_deref_mut() {
                r.log_step(&rec)?;
            }
            record.steps.push(rec);
            step += 1;
        }
        let predictor = crate::metrics::SfcnPredictor::new(state.clone(), cfg.multitask)?;
        let val_eval = evaluate(&predictor, val, &opts)?;
        let improved = sel.offer(epoch, val_eval.as_ref().map(|v| &v.0), &state);
        if let Some(r) = run.as_deref_mut() {
            if let Some((rep, rows)) = &val_eval {
                r.log_eval(epoch, rep, rows)?;
            }
            let ck = Checkpoint {
                state: state.clone(),
                step: step as u64,
                config_hash: record.config_hash.clone(),
                optimizer: Some(opt.clone()),
            };
            r.save_checkpoint("last", &ck)?;
            if improved {
                record.best_checkpoint = Some(r.save_checkpoint("best", &ck)?);
            }
        }
        record.epochs.push(EpochRecord {
            epoch,
            lr,
            mean_losses: mean_losses(&record.steps[first..]),
            val: val_eval.map(|v| v.0),
            diagnostics: BTreeMap::new(),
        });
    }
    let best = match sel.best {
        Some((epoch, mae, s)) => {
            record.best_epoch = Some(epoch);
            record.best_val_mae = Some(mae);
            s
        }
        None => {
            record.best_epoch = Some(cfg.epochs - 1);
            state.clone()
        }
    };
    if let Some(r) = run {
        r.finish(&record)?;
    }
    Ok(SupervisedOutcome {
        record,
        best,
        last: state,
    })
}

/// Labelled training and validation sets of one domain.
#[derive(Clone, Copy)]
pub struct DomainData<'a> {
    pub train: &'a [LabeledSample],
    pub val: &'a [LabeledSample],
}

pub struct PretrainOutcome {
    pub pretrain: SupervisedOutcome,
    /// Initialised from every parameter of the pre-training best epoch.
    pub finetune: SupervisedOutcome,
    /// Same budget and seed as `finetune`, from scratch.
    pub scratch: SupervisedOutcome,
}

/// Pre-train on `source`, fine-tune on `target`, and train a from-scratch
/// control on `target` with the fine-tune config.
pub fn pretrain_then_finetune(
    cfg_pre: &TrainConfig,
    cfg_ft: &TrainConfig,
    source: DomainData<'_>,
    target: DomainData<'_>,
    runs: Option<[&mut RunDir; 3]>,
) -> Result<PretrainOutcome> {
    if cfg_pre.model.sfcn() != cfg_ft.model.sfcn() {
        return Err(Error::Argument(format!(
            "architecture mismatch between phases: {} vs {}",
            Arch::Sfcn(cfg_pre.model.sfcn()),
            Arch::Sfcn(cfg_ft.model.sfcn())
        )));
    }
    let [r0, r1, r2] = match runs {
        Some([a, b, c]) => [Some(a), Some(b), Some(c)],
        None => [None, None, None],
    };
    let pretrain = train_supervised(cfg_pre, source.train, source.val, None, r0)?;
    let mut finetune = train_supervised(cfg_ft, target.train, target.val, Some(pretrain.best.clone()), r1)?;
    finetune.record.regime = Regime::PretrainFinetune;
    let mut scratch = train_supervised(cfg_ft, target.train, target.val, None, r2)?;
    scratch.record.regime = Regime::PretrainFinetune;
    Ok(PretrainOutcome {
        pretrain,
        finetune,
        scratch,
    })
}
