use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use crowdlab::checkpoint::Checkpoint;
use crowdlab::config::{validate_config, Regime, TrainConfig};
use crowdlab::dataset::{generate_dataset, Dataset, GenConfig};
use crowdlab::labels::{split_manifest, Split, SplitStrategy, DEFAULT_LNF, DEFAULT_SIGMA};
use crowdlab::losses::SsimConfig;
use crowdlab::metrics::{evaluate_model, write_rows_csv, EvalOptions, OraclePredictor, Predictor, SfcnPredictor};
use crowdlab::nets::SFCN_STRIDE;
use crowdlab::regularizers::{apply_scene_filter, DensityBound, FilterRule};
use crowdlab::report::{write_report, EVAL_FILE};
use crowdlab::scene::RenderStyle;
use crowdlab::train::{
    pretrain_then_finetune, train_da_joint, train_supervised, DaInputs, DomainData, RunDir, TranslatedPredictor,
};

/// Synthetic crowd-counting lab: generate, split, filter, train, adapt,
/// evaluate and report.
#[derive(Parser)]
#[command(name = "crowdlab", version)]
struct Cli {
    /// Output root; relative paths resolve against it. CROWDLAB_ROOT
    /// takes precedence when set.
    #[arg(long, global = true, default_value = ".")]
    root: PathBuf,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Clone, Copy, ValueEnum)]
enum Style {
    Game,
    Street,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum Subset {
    Train,
    Val,
    Test,
    All,
}

#[derive(Subcommand)]
enum Verb {
    /// Generate a synthetic dataset tree.
    Gen {
        #[arg(long)]
        locations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Multiplier on images per scene.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        /// Comma-separated density levels, e.g. `0,1,2`.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<u8>>,
        /// `HxW`, e.g. `64x64`.
        #[arg(long)]
        size: Option<String>,
        #[arg(long, value_enum, default_value = "game")]
        style: Style,
        #[arg(long)]
        occlusion: Option<f64>,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Split a dataset into train/val/test.
    Split {
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, default_value = "random")]
        strategy: SplitStrategy,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to `<data>/split-<strategy>.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply a scene filter rule to a manifest.
    Filter {
        #[arg(long, default_value = "data")]
        data: PathBuf,
        /// Rule file, or the name of a shipped rule.
        #[arg(long)]
        rule: String,
        /// Defaults to `<data>/manifest.filtered.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Supervised or pre-train/fine-tune training.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// `dotted.key=value` override; repeatable.
        #[arg(long = "set")]
        overrides: Vec<String>,
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long)]
        split: PathBuf,
        /// Source domain for `pretrain_finetune`.
        #[arg(long)]
        source_data: Option<PathBuf>,
        #[arg(long)]
        source_split: Option<PathBuf>,
        /// Extra overrides applied to the fine-tune phase only.
        #[arg(long = "ft-set")]
        ft_overrides: Vec<String>,
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Joint synthetic-to-real adaptation. Reads no real-domain labels.
    Adapt {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set")]
        overrides: Vec<String>,
        #[arg(long)]
        synth: PathBuf,
        #[arg(long)]
        synth_split: PathBuf,
        #[arg(long)]
        real: PathBuf,
        /// Only the training images of this split are used.
        #[arg(long)]
        real_split: PathBuf,
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Evaluate a counter checkpoint (or the ground-truth oracle).
    Eval {
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        subset: Subset,
        #[arg(long, conflicts_with = "oracle", required_unless_present = "oracle")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        oracle: bool,
        /// Generator checkpoint applied before counting.
        #[arg(long)]
        translator: Option<PathBuf>,
        /// Also score the segmentation head.
        #[arg(long)]
        seg: bool,
        /// Zero predicted pixels above this value.
        #[arg(long)]
        max_s: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_SIGMA)]
        sigma: f64,
        #[arg(long, default_value_t = DEFAULT_LNF)]
        lnf: f64,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
    },
    /// Markdown table and PNG plots for every run under `--runs`.
    Report {
        #[arg(long, default_value = "runs")]
        runs: PathBuf,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

struct Ctx {
    root: PathBuf,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let (h, w) = s.split_once('x').context("size must look like HxW")?;
    Ok((h.trim().parse()?, w.trim().parse()?))
}

fn read_split(path: &Path) -> Result<Split> {
    let text = fs::read_to_string(path).with_context(|| format!("reading split {}", path.display()))?;
    Ok(Split::from_json(&text)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_rule(ctx: &Ctx, rule: &str) -> Result<FilterRule> {
    let p = ctx.path(Path::new(rule));
    if p.is_file() {
        Ok(FilterRule::from_json(&fs::read_to_string(&p)?)?)
    } else if FilterRule::builtin_names().any(|n| n == rule) {
        Ok(FilterRule::builtin(rule)?)
    } else {
        let names: Vec<_> = FilterRule::builtin_names().collect();
        bail!("rule {rule:?} is neither a file nor one of {names:?}")
    }
}

fn run_id(given: Option<String>, cfg: &TrainConfig) -> String {
    given.unwrap_or_else(|| {
        let regime = serde_json::to_value(cfg.regime).ok().and_then(|v| v.as_str().map(String::from));
        format!("{}-s{}-{}", regime.unwrap_or_default(), cfg.seed, &cfg.hash()[..8])
    })
}

fn load_config(ctx: &Ctx, path: &Path, overrides: &[String]) -> Result<TrainConfig> {
    let p = ctx.path(path);
    if !p.is_file() {
        bail!("config file {} does not exist", p.display());
    }
    Ok(validate_config(&p, overrides)?)
}

fn run(cli: Cli) -> Result<()> {
    let root = std::env::var_os("CROWDLAB_ROOT").map(PathBuf::from).unwrap_or(cli.root);
    let ctx = Ctx { root };
    match cli.verb {
        Verb::Gen {
            locations,
            seed,
            scale,
            levels,
            size,
            style,
            occlusion,
            out,
        } => {
            let mut g = GenConfig::new(locations, seed);
            g.scale = scale;
            if let Some(l) = levels {
                g.levels = l;
            }
            if let Some(s) = size {
                g.image_size = Some(parse_size(&s)?);
            }
            g.style = match style {
                Style::Game => RenderStyle::Game,
                Style::Street => RenderStyle::Street,
            };
            if let Some(o) = occlusion {
                g.occlusion_threshold = o;
            }
            let dir = ctx.path(&out);
            let m = generate_dataset(&dir, &g)?;
            let mut scenes: Vec<_> = m.records.iter().map(|r| (r.location_id, r.camera_id)).collect();
            scenes.dedup();
            println!("{} images from {} scenes -> {}", m.len(), scenes.len(), dir.display());
        }
        Verb::Split {
            data,
            strategy,
            seed,
            out,
        } => {
            let dir = ctx.path(&data);
            let ds = Dataset::open(&dir)?;
            let split = split_manifest(ds.manifest(), strategy, seed)?;
            let out = out.map_or_else(|| dir.join(format!("split-{strategy}.json")), |o| ctx.path(&o));
            write_text(&out, &split.to_json())?;
            println!(
                "train {} / val {} / test {} -> {}",
                split.train_ids.len(),
                split.val_ids.len(),
                split.test_ids.len(),
                out.display()
            );
        }
        Verb::Filter { data, rule, out } => {
            let dir = ctx.path(&data);
            let ds = Dataset::open(&dir)?;
            let rule = load_rule(&ctx, &rule)?;
            let res = apply_scene_filter(ds.manifest(), &rule)?;
            let out = out.map_or_else(|| dir.join("manifest.filtered.json"), |o| ctx.path(&o));
            write_text(&out, &res.kept.to_json())?;
            let log = out.with_extension("rejections.json");
            write_text(&log, &serde_json::to_string_pretty(&res.rejected)?)?;
            println!(
                "kept {} / rejected {} -> {} (log {})",
                res.kept.len(),
                res.rejected.len(),
                out.display(),
                log.display()
            );
        }
        Verb::Train {
            config,
            overrides,
            data,
            split,
            source_data,
            source_split,
            ft_overrides,
            run_id: id,
        } => {
            let cfg = load_config(&ctx, &config, &overrides)?;
            let target = Dataset::open(ctx.path(&data))?;
            let tsplit = read_split(&ctx.path(&split))?;
            tsplit.check_against(target.manifest())?;
            let t_train = target.load_labeled(&tsplit.train_ids)?;
            let t_val = target.load_labeled(&tsplit.val_ids)?;
            let id = run_id(id, &cfg);
            let run_root = ctx.path(Path::new("runs")).join(&id);
            match cfg.regime {
                Regime::Supervised => {
                    let mut run = RunDir::create(&run_root, &cfg)?;
                    let out = train_supervised(&cfg, &t_train, &t_val, None, Some(&mut run))?;
                    println!(
                        "run {id}: best epoch {:?}, val MAE {:?} -> {}",
                        out.record.best_epoch,
                        out.record.best_val_mae,
                        run_root.display()
                    );
                }
                Regime::PretrainFinetune => {
                    let (Some(sd), Some(ss)) = (source_data, source_split) else {
                        bail!("regime pretrain_finetune needs --source-data and --source-split");
                    };
                    let source = Dataset::open(ctx.path(&sd))?;
                    let ssplit = read_split(&ctx.path(&ss))?;
                    ssplit.check_against(source.manifest())?;
                    let s_train = source.load_labeled(&ssplit.train_ids)?;
                    let s_val = source.load_labeled(&ssplit.val_ids)?;
                    let all: Vec<String> = overrides.iter().chain(&ft_overrides).cloned().collect();
                    let cfg_ft = load_config(&ctx, &config, &all)?;
                    let mut pre = RunDir::create(run_root.join("pretrain"), &cfg)?;
                    let mut ft = RunDir::create(run_root.join("finetune"), &cfg_ft)?;
                    let mut scratch = RunDir::create(run_root.join("scratch"), &cfg_ft)?;
                    let out = pretrain_then_finetune(
                        &cfg,
                        &cfg_ft,
                        DomainData {
                            train: &s_train,
                            val: &s_val,
                        },
                        DomainData {
                            train: &t_train,
                            val: &t_val,
                        },
                        Some([&mut pre, &mut ft, &mut scratch]),
                    )?;
                    println!(
                        "run {id}: fine-tuned val MAE {:?}, from-scratch val MAE {:?} -> {}",
                        out.finetune.record.best_val_mae,
                        out.scratch.record.best_val_mae,
                        run_root.display()
                    );
                }
                Regime::DaJoint => bail!("config error at `regime`: da_joint runs through the `adapt` command"),
            }
        }
        Verb::Adapt {
            config,
            overrides,
            synth,
            synth_split,
            real,
            real_split,
            run_id: id,
        } => {
            let cfg = load_config(&ctx, &config, &overrides)?;
            if cfg.regime != Regime::DaJoint {
                bail!("config error at `regime`: adapt needs regime da_joint (try --set regime=da_joint)");
            }
            let s = Dataset::open(ctx.path(&synth))?;
            let ssplit = read_split(&ctx.path(&synth_split))?;
            ssplit.check_against(s.manifest())?;
            let r = Dataset::open(ctx.path(&real))?;
            let rsplit = read_split(&ctx.path(&real_split))?;
            rsplit.check_against(r.manifest())?;
            let id = run_id(id, &cfg);
            let run_root = ctx.path(Path::new("runs")).join(&id);
            let mut run = RunDir::create(&run_root, &cfg)?;
            let out = train_da_joint(
                &cfg,
                &DaInputs {
                    synth: &s,
                    synth_train: &ssplit.train_ids,
                    synth_val: &ssplit.val_ids,
                    real: &r,
                    real_train: &rsplit.train_ids,
                },
                Some(&mut run),
            )?;
            if let Some(b) = out.bound {
                write_text(&run_root.join("density_bound.json"), &serde_json::to_string_pretty(&b)?)?;
            }
            println!(
                "run {id}: best epoch {:?}, translated-val MAE {:?}, reconstruction SSIM {:.4}, real labels read {} -> {}",
                out.record.best_epoch,
                out.record.best_val_mae,
                out.recon_ssim,
                r.label_reads(),
                run_root.display()
            );
        }
        Verb::Eval {
            data,
            split,
            subset,
            checkpoint,
            oracle,
            translator,
            seg,
            max_s,
            sigma,
            lnf,
            out,
        } => {
            let ds = Dataset::open(ctx.path(&data))?;
            let ids = match (&split, subset) {
                (_, Subset::All) | (None, _) => ds.all_ids(),
                (Some(p), sub) => {
                    let s = read_split(&ctx.path(p))?;
                    s.check_against(ds.manifest())?;
                    match sub {
                        Subset::Train => s.train_ids,
                        Subset::Val => s.val_ids,
                        _ => s.test_ids,
                    }
                }
            };
            let samples = ds.load_labeled(&ids)?;
            let predictor: Box<dyn Predictor> = if oracle {
                Box::new(OraclePredictor {
                    sigma,
                    lnf,
                    stride: SFCN_STRIDE,
                })
            } else {
                let path = ctx.path(checkpoint.as_deref().expect("clap requires one"));
                let counter = SfcnPredictor::new(Checkpoint::load(&path)?.state, seg)?;
                match translator {
                    Some(t) => Box::new(TranslatedPredictor {
                        generator: Checkpoint::load(&ctx.path(&t))?.state,
                        counter,
                    }),
                    None => Box::new(counter),
                }
            };
            let opts = EvalOptions {
                sigma,
                lnf,
                bound: max_s.map(DensityBound::new).transpose()?,
                ssim: SsimConfig::default(),
            };
            let (report, rows) = evaluate_model(predictor.as_ref(), &samples, &opts)?;
            let dir = ctx.path(&out);
            write_text(&dir.join(EVAL_FILE), &serde_json::to_string_pretty(&report)?)?;
            let csv = dir.join("rows.csv");
            write_rows_csv(fs::File::create(&csv)?, &rows)?;
            print!("{}", report.table(&format!("evaluation of {} samples", report.n_samples)));
        }
        Verb::Report { runs, out } => {
            let md = write_report(&ctx.path(&runs), &ctx.path(&out))?;
            println!("report -> {}", md.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

