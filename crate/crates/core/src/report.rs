//! Markdown summaries and static PNG line plots for finished runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::train::{read_step_records, RunRecord, RECORDS_FILE, RUN_FILE};

/// File name written by the `eval` command; picked up by [`write_report`].
pub const EVAL_FILE: &str = "eval_report.json";

pub const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [214, 39, 40],
    [44, 160, 44],
    [148, 103, 189],
    [255, 127, 14],
    [23, 190, 207],
];

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<u8>,
}

impl Canvas {
    fn new(w: usize, h: usize) -> Self {
        Self {
            w,
            h,
            px: vec![255; w * h * 3],
        }
    }

    fn set(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h {
            let i = (y as usize * self.w + x as usize) * 3;
            self.px[i..i + 3].copy_from_slice(&c);
        }
    }

    /// Bresenham.
    fn line(&mut self, (mut x0, mut y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let mut err = dx + dy;
        loop {
            self.set(x0, y0, c);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    fn png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.w as u32, self.h as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut wr = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
            wr.write_image_data(&self.px).map_err(|e| Error::Png(e.to_string()))?;
            wr.finish().map_err(|e| Error::Png(e.to_string()))?;
        }
        Ok(out)
    }
}

const MARGIN: i64 = 24;

/// Line plot of every series on shared linear axes with a light grid.
/// Non-finite points are skipped; colours follow [`PALETTE`] in order.
pub fn plot_series(series: &[Series], width: usize, height: usize) -> Result<Vec<u8>> {
    if width < 2 * MARGIN as usize + 2 || height < 2 * MARGIN as usize + 2 {
        return Err(Error::Argument(format!("plot {width}x{height} is too small")));
    }
    let finite = || {
        series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter(|(x, y)| x.is_finite() && y.is_finite())
    };
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in finite() {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let mut c = Canvas::new(width, height);
    let (l, r, t, b) = (MARGIN, width as i64 - MARGIN, MARGIN, height as i64 - MARGIN);
    for k in 0..=4 {
        let gy = t + (b - t) * k / 4;
        let gx = l + (r - l) * k / 4;
        c.line((l, gy), (r, gy), [225, 225, 225]);
        c.line((gx, t), (gx, b), [225, 225, 225]);
    }
    c.line((l, b), (r, b), [0, 0, 0]);
    c.line((l, t), (l, b), [0, 0, 0]);
    if x0.is_finite() {
        if x1 == x0 {
            x1 = x0 + 1.0;
        }
        if y1 == y0 {
            y1 = y0 + 1.0;
        }
        let map = |x: f64, y: f64| {
            (
                l + ((x - x0) / (x1 - x0) * (r - l) as f64).round() as i64,
                b - ((y - y0) / (y1 - y0) * (b - t) as f64).round() as i64,
            )
        };
        for (s, colour) in series.iter().zip(PALETTE.iter().cycle()) {
            let mut prev = None;
            for &(x, y) in &s.points {
                if !(x.is_finite() && y.is_finite()) {
                    prev = None;
                    continue;
                }
                let p = map(x, y);
                c.line(prev.unwrap_or(p), p, *colour);
                prev = Some(p);
            }
        }
    }
    c.png()
}

fn colour_name(i: usize) -> &'static str {
    ["blue", "red", "green", "purple", "orange", "cyan"][i % PALETTE.len()]
}

fn find_files(root: &Path, name: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_files(&p, name, out)?;
        } else if p.file_name().is_some_and(|f| f == name) {
            out.push(p);
        }
    }
    Ok(())
}

fn slug(rel: &Path) -> String {
    let s: String = rel
        .to_string_lossy()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if s.is_empty() {
        "run".into()
    } else {
        s
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.3}"))
}

/// Scan `runs_root` for finished runs and evaluation reports and write
/// `report.md` plus one loss plot and one validation-MAE plot per run into
/// `out_dir`. Returns the markdown path.
pub fn write_report(runs_root: &Path, out_dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut runs = Vec::new();
    find_files(runs_root, RUN_FILE, &mut runs)?;
    let mut evals = Vec::new();
    find_files(runs_root, EVAL_FILE, &mut evals)?;
    if runs.is_empty() && evals.is_empty() {
        return Err(Error::Argument(format!(
            "no {RUN_FILE} or {EVAL_FILE} found under {}",
            runs_root.display()
        )));
    }
    let mut md = String::from("# Run report\n\n");
    if !runs.is_empty() {
        md.push_str("| run | regime | seed | epochs | best epoch | best val MAE | final loss |\n");
        md.push_str("|---|---|---|---|---|---|---|\n");
    }
    let mut plots = String::new();
    for path in &runs {
        let dir = path.parent().expect("file has a parent");
        let rel = dir.strip_prefix(runs_root).unwrap_or(dir);
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rec: RunRecord = serde_json::from_str(&text)?;
        let steps = read_step_records(&dir.join(RECORDS_FILE))?;
        let final_loss = rec.epochs.last().and_then(|e| e.mean_losses.get("total").copied());
        let name = rel.display().to_string();
        writeln!(
            md,
            "| {} | {:?} | {} | {} | {} | {} | {} |",
            if name.is_empty() { "." } else { &name },
            rec.regime,
            rec.seed,
            rec.epochs.len(),
            rec.best_epoch.map_or("-".into(), |e| e.to_string()),
            fmt_opt(rec.best_val_mae),
            fmt_opt(final_loss),
        )
        .expect("string write");

        let id = slug(rel);
        let mut keys: Vec<&String> = steps.iter().flat_map(|s| s.losses.keys()).collect();
        keys.sort();
        keys.dedup();
        let mut series = vec![Series {
            label: "total".into(),
            points: steps.iter().map(|s| (s.step as f64, s.total)).collect(),
        }];
        for k in keys {
            series.push(Series {
                label: k.clone(),
                points: steps
                    .iter()
                    .filter_map(|s| s.losses.get(k).map(|v| (s.step as f64, *v)))
                    .collect(),
            });
        }
        let loss_png = format!("{id}-loss.png");
        let p = out_dir.join(&loss_png);
        fs::write(&p, plot_series(&series, 480, 320)?).map_err(|e| Error::io(&p, e))?;
        let legend: Vec<String> = series
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{} = {}", colour_name(i), s.label))
            .collect();
        writeln!(plots, "## {name}\n\n![loss]({loss_png})\n\nLoss per step: {}.\n", legend.join(", ")).expect("string write");

        let mae: Vec<(f64, f64)> = rec
            .epochs
            .iter()
            .filter_map(|e| e.val.as_ref().map(|v| (e.epoch as f64, v.mae)))
            .collect();
        if !mae.is_empty() {
            let mae_png = format!("{id}-val_mae.png");
            let p = out_dir.join(&mae_png);
            let s = [Series {
                label: "val MAE".into(),
                points: mae,
            }];
            fs::write(&p, plot_series(&s, 480, 320)?).map_err(|e| Error::io(&p, e))?;
            writeln!(plots, "![val MAE]({mae_png})\n\nValidation MAE per epoch.\n").expect("string write");
        }
    }
    if !evals.is_empty() {
        md.push_str("\n| evaluation | n | MAE | MSE | PSNR | SSIM | mIoU |\n|---|---|---|---|---|---|---|\n");
        for path in &evals {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let r: EvalReport = serde_json::from_str(&text)?;
            let rel = path.parent().and_then(|d| d.strip_prefix(runs_root).ok()).unwrap_or(Path::new(""));
            writeln!(
                md,
                "| {} | {} | {:.3} | {:.3} | {:.3} | {:.4} | {} |",
                if rel.as_os_str().is_empty() { ".".to_string() } else { rel.display().to_string() },
                r.n_samples,
                r.mae,
                r.mse,
                r.psnr,
                r.ssim,
                fmt_opt(r.miou)
            )
            .expect("string write");
        }
    }
    md.push('\n');
    md.push_str(&plots);
    let out = out_dir.join("report.md");
    fs::write(&out, md).map_err(|e| Error::io(&out, e))?;
    Ok(out)
}
