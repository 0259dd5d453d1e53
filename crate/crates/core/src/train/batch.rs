use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::dataset::LabeledSample;
use crate::error::{Error, Result};
use crate::labels::{density_from_dots, BinaryMask};
use crate::losses::mask_target;
use crate::nets::SFCN_STRIDE;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// A labelled image with its full-resolution density target.
#[derive(Clone, Debug)]
pub struct TrainItem {
    pub id: String,
    /// `[3, H, W]` in `[0, 1]`.
    pub image: Tensor<f32>,
    /// Row-major `H × W`.
    pub density: Vec<f64>,
    pub mask: BinaryMask,
}

impl TrainItem {
    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    /// Density at counter resolution.
    pub fn pooled_density(&self) -> Result<Vec<f64>> {
        let t = Tensor::from_vec(&[1, 1, self.height(), self.width()], self.density.clone())?;
        Ok(t.sum_pool(SFCN_STRIDE)?.into_data())
    }
}

pub fn prepare(samples: &[LabeledSample], sigma: f64, lnf: f64) -> Result<Vec<TrainItem>> {
    samples
        .iter()
        .map(|s| {
            let (h, w) = (s.image.shape()[1], s.image.shape()[2]);
            if h % SFCN_STRIDE != 0 || w % SFCN_STRIDE != 0 {
                return Err(Error::Shape(format!(
                    "{}: image {h}x{w} is not a multiple of {SFCN_STRIDE}",
                    s.id
                )));
            }
            Ok(TrainItem {
                id: s.id.clone(),
                image: s.image.clone(),
                density: density_from_dots(&s.dots, (h, w), sigma, lnf)?.values,
                mask: s.mask.clone(),
            })
        })
        .collect()
}

/// One stacked minibatch.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[N, 3, h, w]` in `[0, 1]`.
    pub images: Tensor<f32>,
    /// `[N, 1, h/8, w/8]`.
    pub density: Tensor<f32>,
    /// `[N, h, w]` of 0/1.
    pub masks: Tensor<f32>,
}

/// Crop window: the whole image when it fits, else a random
/// `crop × crop` window on the stride grid.
fn window(h: usize, w: usize, crop: usize, rng: &mut Rng) -> (usize, usize, usize, usize) {
    let (ch, cw) = (crop.min(h), crop.min(w));
    let pick = |len: usize, c: usize, rng: &mut Rng| {
        let slots = (len - c) / SFCN_STRIDE;
        rng.gen_range(0..=slots) * SFCN_STRIDE
    };
    let y0 = pick(h, ch, rng);
    let x0 = pick(w, cw, rng);
    (y0, x0, ch, cw)
}

fn crop_planes(data: &[f32], planes: usize, h: usize, w: usize, (y0, x0, ch, cw): (usize, usize, usize, usize)) -> Vec<f32> {
    let mut out = Vec::with_capacity(planes * ch * cw);
    for c in 0..planes {
        for y in y0..y0 + ch {
            let row = (c * h + y) * w;
            out.extend_from_slice(&data[row + x0..row + x0 + cw]);
        }
    }
    out
}

/// Crop every item to a common window size and stack. Items must share a
/// size once cropped.
pub fn make_batch(items: &[&TrainItem], crop: usize, rng: &mut Rng) -> Result<Batch> {
    if items.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let (mut imgs, mut dens, mut masks) = (Vec::new(), Vec::new(), Vec::new());
    let mut size = None;
    for it in items {
        let (h, w) = (it.height(), it.width());
        let win = window(h, w, crop, rng);
        let (ch, cw) = (win.2, win.3);
        if *size.get_or_insert((ch, cw)) != (ch, cw) {
            return Err(Error::Shape(format!("{}: crop {ch}x{cw} differs from batch", it.id)));
        }
        imgs.push(Tensor::from_vec(&[1, 3, ch, cw], crop_planes(it.image.data(), 3, h, w, win))?);
        let d: Vec<f32> = it.density.iter().map(|&v| v as f32).collect();
        let d = Tensor::from_vec(&[1, 1, ch, cw], crop_planes(&d, 1, h, w, win))?.sum_pool(SFCN_STRIDE)?;
        dens.push(d);
        let m: Vec<f32> = it.mask.data().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let m = crop_planes(&m, 1, h, w, win);
        masks.push(BinaryMask::from_vec(ch, cw, m.iter().map(|&v| v > 0.5).collect())?);
    }
    let mask_refs: Vec<&BinaryMask> = masks.iter().collect();
    Ok(Batch {
        images: Tensor::stack0(&imgs)?,
        density: Tensor::stack0(&dens)?,
        masks: mask_target(&mask_refs)?,
    })
}

/// Crop and stack unlabelled images the same way.
pub fn image_batch(images: &[&Tensor<f32>], crop: usize, rng: &mut Rng) -> Result<Tensor<f32>> {
    let parts = images
        .iter()
        .map(|img| {
            let [3, h, w] = *img.shape() else {
                return Err(Error::Shape(format!("expected [3, H, W], got {:?}", img.shape())));
            };
            let win = window(h, w, crop, rng);
            Tensor::from_vec(&[1, 3, win.2, win.3], crop_planes(img.data(), 3, h, w, win))
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack0(&parts)
}

/// Shuffled index order for one epoch.
pub fn epoch_order(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// `[0, 1]` to `[-1, 1]`.
pub fn to_signed(t: &Tensor<f32>) -> Tensor<f32> {
    t.map(|v| v * 2.0 - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn item(h: usize, w: usize, dots: &[[f64; 2]]) -> TrainItem {
        let s = LabeledSample {
            id: "x".into(),
            image: Tensor::from_vec(&[3, h, w], (0..3 * h * w).map(|i| (i % 97) as f32 / 97.0).collect()).unwrap(),
            dots: dots.to_vec(),
            mask: BinaryMask::zeros(h, w),
        };
        prepare(&[s], 4.0, 100.0).unwrap().remove(0)
    }

    #[test]
    fn whole_image_batch_keeps_mass() {
        let it = item(32, 40, &[[5.0, 5.0], [30.0, 20.0]]);
        let b = make_batch(&[&it, &it], 64, &mut rng_from(1)).unwrap();
        assert_eq!(b.images.shape(), &[2, 3, 32, 40]);
        assert_eq!(b.density.shape(), &[2, 1, 4, 5]);
        assert_eq!(b.masks.shape(), &[2, 32, 40]);
        assert!((b.density.sum() as f64 - 400.0).abs() < 1e-2);
    }

    #[test]
    fn crops_sit_on_the_stride_grid() {
        let it = item(64, 64, &[[40.0, 40.0]]);
        let mut rng = rng_from(3);
        for _ in 0..20 {
            let b = make_batch(&[&it], 32, &mut rng).unwrap();
            assert_eq!(b.images.shape(), &[1, 3, 32, 32]);
            // the crop's image must be a sub-block of the source
            let v = b.images.data()[0];
            assert!(it.image.data().contains(&v));
            assert!(b.density.sum() as f64 <= 100.0 + 1e-3);
        }
        assert!(prepare(
            &[LabeledSample {
                id: "odd".into(),
                image: Tensor::zeros(&[3, 12, 16]),
                dots: vec![],
                mask: BinaryMask::zeros(12, 16)
            }],
            4.0,
            100.0
        )
        .is_err());
    }
}
