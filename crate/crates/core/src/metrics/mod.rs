//! Counting errors, PSNR, SSIM and IoU, and their aggregation over a split.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::dataset::LabeledSample;
use crate::error::{Error, Result};
use crate::labels::{density_from_dots, BinaryMask};
use crate::losses::{ssim, SsimConfig};
use crate::nets::{ModelState, SfcnArch, SFCN_STRIDE};
use crate::regularizers::{density_clip, DensityBound};
use crate::tensor::Tensor;

/// `(mae, mse)` where `mse` is the root of the mean squared error.
pub fn count_errors(pred: &[f64], gt: &[f64]) -> Result<(f64, f64)> {
    if pred.len() != gt.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} ground-truth counts",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Argument("count_errors needs at least one sample".into()));
    }
    let n = pred.len() as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for (p, g) in pred.iter().zip(gt) {
        let e = p - g;
        abs += e.abs();
        sq += e * e;
    }
    Ok((abs / n, (sq / n).sqrt()))
}

/// `10 log10(peak² / MSE)`; identical maps give `+inf`.
pub fn psnr(pred: &[f64], gt: &[f64], peak: f64) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Shape(format!("psnr on maps of {} and {} pixels", pred.len(), gt.len())));
    }
    let mse = pred.iter().zip(gt).map(|(p, g)| (p - g) * (p - g)).sum::<f64>() / pred.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Peak used for density-map PSNR and SSIM: the larger of the two maps'
/// maxima, never below `lnf`.
pub fn density_peak(pred: &[f64], gt: &[f64], lnf: f64) -> f64 {
    pred.iter().chain(gt).copied().fold(lnf, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IouScores {
    pub fg: f64,
    pub bg: f64,
    pub miou: f64,
}

fn class_iou(tp: usize, fp: usize, fneg: usize) -> f64 {
    let d = tp + fp + fneg;
    if d == 0 {
        1.0
    } else {
        tp as f64 / d as f64
    }
}

/// Per-class `TP / (TP + FP + FN)`; a class absent from both masks scores 1.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<IouScores> {
    if pred.shape() != gt.shape() {
        return Err(Error::Shape(format!("iou on masks {:?} and {:?}", pred.shape(), gt.shape())));
    }
    let (mut tt, mut tf, mut ft, mut ff) = (0, 0, 0, 0);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p, g) {
            (true, true) => tt += 1,
            (true, false) => tf += 1,
            (false, true) => ft += 1,
            (false, false) => ff += 1,
        }
    }
    let fg = class_iou(tt, tf, ft);
    let bg = class_iou(ff, ft, tf);
    Ok(IouScores { fg, bg, miou: (fg + bg) / 2.0 })
}

/// [`iou`] on raw 0/1 (or 0/255) pixel values.
pub fn iou_raw(pred: &[u8], gt: &[u8], height: usize, width: usize) -> Result<IouScores> {
    iou(&BinaryMask::from_u8(height, width, pred)?, &BinaryMask::from_u8(height, width, gt)?)
}

/// Prediction for one image.
#[derive(Clone, Debug)]
pub struct Prediction {
    /// Row-major density at `height × width`.
    pub density: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub seg: Option<BinaryMask>,
}

pub trait Predictor {
    fn predict(&self, sample: &LabeledSample) -> Result<Prediction>;
}

/// Returns the ground truth itself.
pub struct OraclePredictor {
    pub sigma: f64,
    pub lnf: f64,
    pub stride: usize,
}

impl Predictor for OraclePredictor {
    fn predict(&self, s: &LabeledSample) -> Result<Prediction> {
        let (h, w) = (s.image.shape()[1], s.image.shape()[2]);
        let d = density_from_dots(&s.dots, (h, w), self.sigma, self.lnf)?.pooled(self.stride)?;
        Ok(Prediction {
            height: d.height,
            width: d.width,
            density: d.values,
            seg: Some(s.mask.clone()),
        })
    }
}

/// Runs an SFCN in inference mode.
pub struct SfcnPredictor {
    pub arch: SfcnArch,
    pub state: ModelState<f32>,
    pub with_seg: bool,
}

impl SfcnPredictor {
    pub fn new(state: ModelState<f32>, with_seg: bool) -> Result<Self> {
        let crate::nets::Arch::Sfcn(arch) = state.arch else {
            return Err(Error::Argument(format!("{} is not an SFCN", state.arch)));
        };
        state.validate()?;
        Ok(Self { arch, state, with_seg })
    }

    pub fn predict_image(&self, image: &Tensor<f32>) -> Result<Prediction> {
        let [3, h, w] = *image.shape() else {
            return Err(Error::Shape(format!("expected [3, H, W] image, got {:?}", image.shape())));
        };
        let g = Graph::<f32>::new();
        let p = self.state.bind(&g, false);
        let x = g.constant(image.clone().reshape(&[1, 3, h, w])?);
        let out = self.arch.forward(&g, &p, x, self.with_seg)?;
        let d = g.value(out.density);
        let seg = out.seg.map(|s| {
            let v = g.value(s);
            let plane = h * w;
            let data = (0..plane).map(|i| v.data()[plane + i] > v.data()[i]).collect();
            BinaryMask::from_vec(h, w, data).expect("seg shape")
        });
        Ok(Prediction {
            density: d.data().iter().map(|&v| v as f64).collect(),
            height: h / SFCN_STRIDE,
            width: w / SFCN_STRIDE,
            seg,
        })
    }
}

impl Predictor for SfcnPredictor {
    fn predict(&self, s: &LabeledSample) -> Result<Prediction> {
        self.predict_image(&s.image)
    }
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub sigma: f64,
    pub lnf: f64,
    pub bound: Option<DensityBound>,
    pub ssim: SsimConfig,
}

/// One line of the per-sample CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub id: String,
    pub gt_count: f64,
    pub pred_count: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub iou_fg: Option<f64>,
    pub iou_bg: Option<f64>,
}

mod inf_str {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Num {
        F(f64),
        S(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Num::deserialize(d)? {
            Num::F(v) => Ok(v),
            Num::S(s) if s == "inf" => Ok(f64::INFINITY),
            Num::S(s) => Err(serde::de::Error::custom(format!("expected number or \"inf\", got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mae: f64,
    pub mse: f64,
    /// `"inf"` in JSON when every prediction is exact.
    #[serde(with = "inf_str")]
    pub psnr: f64,
    pub ssim: f64,
    pub iou_fg: Option<f64>,
    pub iou_bg: Option<f64>,
    pub miou: Option<f64>,
    pub n_samples: usize,
}

impl EvalReport {
    /// Aggregate per-sample rows in order.
    pub fn from_rows(rows: &[SampleRow]) -> Result<Self> {
        let pred: Vec<f64> = rows.iter().map(|r| r.pred_count).collect();
        let gt: Vec<f64> = rows.iter().map(|r| r.gt_count).collect();
        let (mae, mse) = count_errors(&pred, &gt)?;
        let n = rows.len() as f64;
        let mean = |f: &dyn Fn(&SampleRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let iou_mean = |f: &dyn Fn(&SampleRow) -> Option<f64>| -> Option<f64> {
            rows.iter().map(f).collect::<Option<Vec<_>>>().map(|v| v.iter().sum::<f64>() / n)
        };
        let iou_fg = iou_mean(&|r| r.iou_fg);
        let iou_bg = iou_mean(&|r| r.iou_bg);
        Ok(Self {
            mae,
            mse,
            psnr: mean(&|r| r.psnr),
            ssim: mean(&|r| r.ssim),
            miou: iou_fg.zip(iou_bg).map(|(a, b)| (a + b) / 2.0),
            iou_fg,
            iou_bg,
            n_samples: rows.len(),
        })
    }

    /// Plain-text block in the layout of a results table.
    pub fn table(&self, title: &str) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        format!(
            "{title}\n  n      {}\n  MAE    {:.3}\n  MSE    {:.3}\n  PSNR   {:.3}\n  SSIM   {:.4}\n  IoU fg {}\n  IoU bg {}\n  mIoU   {}\n",
            self.n_samples,
            self.mae,
            self.mse,
            self.psnr,
            self.ssim,
            opt(self.iou_fg),
            opt(self.iou_bg),
            opt(self.miou)
        )
    }
}

pub fn write_rows_csv<W: Write>(w: W, rows: &[SampleRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(|e| Error::Argument(format!("csv: {e}")))?;
    }
    wr.flush().map_err(|e| Error::Argument(format!("csv: {e}")))?;
    Ok(())
}

pub fn read_rows_csv<R: Read>(r: R) -> Result<Vec<SampleRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(|e| Error::Argument(format!("csv: {e}"))))
        .collect()
}

/// Evaluate `predictor` on every sample, in order.
pub fn evaluate_model(
    predictor: &dyn Predictor,
    samples: &[LabeledSample],
    opts: &EvalOptions,
) -> Result<(EvalReport, Vec<SampleRow>)> {
    if samples.is_empty() {
        return Err(Error::Argument("cannot evaluate an empty split".into()));
    }
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        let p = predictor.predict(s)?;
        let (h, w) = (s.image.shape()[1], s.image.shape()[2]);
        if p.height == 0 || h % p.height != 0 || w % p.width != 0 || h / p.height != w / p.width {
            return Err(Error::Shape(format!(
                "prediction {}x{} does not tile image {h}x{w}",
                p.height, p.width
            )));
        }
        let gt = density_from_dots(&s.dots, (h, w), opts.sigma, opts.lnf)?.pooled(h / p.height)?;
        let density = match &opts.bound {
            Some(b) => density_clip(&p.density, b)?,
            None => p.density,
        };
        let peak = density_peak(&density, &gt.values, opts.lnf);
        let ps = psnr(&density, &gt.values, peak)?;
        let cfg = SsimConfig {
            range: peak,
            ..opts.ssim.fitted(p.height, p.width)
        };
        let to_t = |v: &[f64]| Tensor::from_vec(&[p.height, p.width], v.to_vec());
        let ss = ssim(&to_t(&density)?, &to_t(&gt.values)?, &cfg)?;
        let io = p.seg.as_ref().map(|m| iou(m, &s.mask)).transpose()?;
        rows.push(SampleRow {
            id: s.id.clone(),
            gt_count: s.dots.len() as f64,
            pred_count: density.iter().sum::<f64>() / opts.lnf,
            psnr: ps,
            ssim: ss,
            iou_fg: io.map(|i| i.fg),
            iou_bg: io.map(|i| i.bg),
        });
    }
    Ok((EvalReport::from_rows(&rows)?, rows))
}
