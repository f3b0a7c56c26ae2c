use crate::error::{shape_err, Error, Result};
use crate::preprocess::GrayImage;
use crate::tensor::{Scalar, Tensor};

pub const FOREGROUND: u8 = 255;
pub const BACKGROUND: u8 = 0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ClassCounts {
    pub fn union(&self) -> u64 {
        self.tp + self.fp + self.fn_
    }

    pub fn iou(&self) -> Option<f64> {
        let u = self.union();
        (u > 0).then(|| self.tp as f64 / u as f64)
    }
}

/// Per-class confusion counts for binary masks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub background: ClassCounts,
    pub tumor: ClassCounts,
}

fn check_binary(mask: &GrayImage) -> Result<()> {
    match mask.pixels().iter().find(|&&v| v != BACKGROUND && v != FOREGROUND) {
        Some(&v) => Err(Error::NonBinaryMask(v)),
        None => Ok(()),
    }
}

impl ConfusionCounts {
    pub fn add(&mut self, pred: &GrayImage, gt: &GrayImage) -> Result<()> {
        if !pred.same_dims(gt) {
            return Err(shape_err!(
                "mask sizes differ: {}x{} vs {}x{}",
                pred.width(),
                pred.height(),
                gt.width(),
                gt.height()
            ));
        }
        check_binary(pred)?;
        check_binary(gt)?;
        for (&p, &g) in pred.pixels().iter().zip(gt.pixels()) {
            match (p == FOREGROUND, g == FOREGROUND) {
                (true, true) => self.tumor.tp += 1,
                (false, false) => self.background.tp += 1,
                (true, false) => {
                    self.tumor.fp += 1;
                    self.background.fn_ += 1;
                }
                (false, true) => {
                    self.tumor.fn_ += 1;
                    self.background.fp += 1;
                }
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        for (a, b) in [(&mut self.background, &other.background), (&mut self.tumor, &other.tumor)] {
            a.tp += b.tp;
            a.fp += b.fp;
            a.fn_ += b.fn_;
        }
    }

    /// Mean IoU over the classes with a non-empty union (0 if none).
    pub fn miou(&self) -> f64 {
        let ious: Vec<f64> = [self.background.iou(), self.tumor.iou()].into_iter().flatten().collect();
        if ious.is_empty() {
            0.0
        } else {
            ious.iter().sum::<f64>() / ious.len() as f64
        }
    }
}

pub fn miou(pred: &GrayImage, gt: &GrayImage) -> Result<f64> {
    let mut counts = ConfusionCounts::default();
    counts.add(pred, gt)?;
    Ok(counts.miou())
}

/// Dataset-level mIoU: counts are pooled over all pairs before dividing.
pub fn miou_batch<'a>(pairs: impl IntoIterator<Item = (&'a GrayImage, &'a GrayImage)>) -> Result<f64> {
    let mut counts = ConfusionCounts::default();
    for (pred, gt) in pairs {
        counts.add(pred, gt)?;
    }
    Ok(counts.miou())
}

/// Thresholds a single-channel probability map into a `{0, 255}` mask;
/// values equal to the threshold count as foreground. Accepts `(H, W)` or
/// any shape whose leading extents are all 1.
pub fn binarize<T: Scalar>(pred: &Tensor<T>, threshold: f64) -> Result<GrayImage> {
    let shape = pred.shape();
    if shape.len() < 2 || shape[..shape.len() - 2].iter().any(|&d| d != 1) {
        return Err(shape_err!("binarize expects a single (H, W) map, got {shape:?}"));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let thr = T::from_f64(threshold);
    let pixels = pred
        .data()
        .iter()
        .map(|&p| if p >= thr { FOREGROUND } else { BACKGROUND })
        .collect();
    GrayImage::new(w, h, pixels)
}

/// Splits an `(N, 1, H, W)` batch into one mask per item.
pub fn binarize_batch<T: Scalar>(pred: &Tensor<T>, threshold: f64) -> Result<Vec<GrayImage>> {
    let [n, c, h, w] = pred.dims4("binarize_batch")?;
    if c != 1 {
        return Err(shape_err!("binarize_batch expects one channel, got {c}"));
    }
    pred.data()
        .chunks(h * w)
        .take(n)
        .map(|plane| binarize(&Tensor::new(&[h, w], plane.to_vec())?, threshold))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(w: usize, h: usize, fg: &[usize]) -> GrayImage {
        let mut px = vec![0; w * h];
        fg.iter().for_each(|&i| px[i] = 255);
        GrayImage::new(w, h, px).unwrap()
    }

    #[test]
    fn identical_masks_score_one() {
        let m = mask(3, 3, &[0, 4]);
        assert_eq!(miou(&m, &m).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_foreground() {
        // 4x4, gt foreground 4 px, pred foreground 4 other px
        let gt = mask(4, 4, &[0, 1, 2, 3]);
        let pred = mask(4, 4, &[12, 13, 14, 15]);
        let mut c = ConfusionCounts::default();
        c.add(&pred, &gt).unwrap();
        assert_eq!(c.tumor.iou(), Some(0.0));
        assert_eq!(c.background.iou(), Some(0.5));
        assert_eq!(c.miou(), 0.25);
    }

    #[test]
    fn column_versus_row() {
        let gt = mask(2, 2, &[0, 2]);
        let pred = mask(2, 2, &[0, 1]);
        let v = miou(&pred, &gt).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_union_class_is_skipped() {
        let empty = mask(2, 2, &[]);
        assert_eq!(miou(&empty, &empty).unwrap(), 1.0);
    }

    #[test]
    fn errors() {
        let a = mask(2, 2, &[]);
        let b = mask(2, 3, &[]);
        assert!(matches!(miou(&a, &b), Err(Error::ShapeMismatch(_))));
        let grey = GrayImage::new(2, 2, vec![0, 128, 255, 0]).unwrap();
        assert!(matches!(miou(&grey, &a), Err(Error::NonBinaryMask(128))));
    }

    #[test]
    fn binarize_threshold_is_inclusive() {
        let t = Tensor::<f32>::full(&[1, 1, 2, 3], 0.7);
        assert!(binarize(&t, 0.5).unwrap().pixels().iter().all(|&v| v == 255));
        let t = Tensor::<f64>::full(&[2, 2], 0.5);
        assert!(binarize(&t, 0.5).unwrap().pixels().iter().all(|&v| v == 255));
        let t = Tensor::<f64>::full(&[2, 1, 2, 2], 0.5);
        assert!(binarize(&t, 0.5).is_err());
        assert_eq!(binarize_batch(&t, 0.5).unwrap().len(), 2);
    }
}
