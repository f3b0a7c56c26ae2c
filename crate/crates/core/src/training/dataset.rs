use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{BACKGROUND, FOREGROUND};
use crate::preprocess::{read_gray, write_gray, GrayImage};
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tensor};

/// Image/mask pairs of one common size. Masks hold only 0 and 255.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    items: Vec<(GrayImage, GrayImage)>,
}

/// Train:validation proportion, e.g. 7:3.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitRatio {
    pub train: u32,
    pub val: u32,
}

impl Default for SplitRatio {
    fn default() -> Self {
        Self { train: 7, val: 3 }
    }
}

impl SplitRatio {
    /// `floor(n * train / (train + val))`.
    pub fn train_count(&self, n: usize) -> usize {
        n * self.train as usize / (self.train + self.val) as usize
    }
}

const SPLIT_STREAM: u64 = 1;

impl Dataset {
    pub fn new(items: Vec<(GrayImage, GrayImage)>) -> Result<Self> {
        let Some((first, _)) = items.first() else {
            return Err(Error::Config("dataset is empty".into()));
        };
        let (w, h) = (first.width(), first.height());
        for (i, (img, mask)) in items.iter().enumerate() {
            if img.width() != w || img.height() != h || !img.same_dims(mask) {
                return Err(Error::ShapeMismatch(format!(
                    "item {i}: image {}x{} / mask {}x{}, expected {w}x{h}",
                    img.width(),
                    img.height(),
                    mask.width(),
                    mask.height()
                )));
            }
            if let Some(&v) = mask.pixels().iter().find(|&&v| v != BACKGROUND && v != FOREGROUND) {
                return Err(Error::NonBinaryMask(v));
            }
        }
        Ok(Self { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[(GrayImage, GrayImage)] {
        &self.items
    }

    /// `(width, height)` shared by every item.
    pub fn dims(&self) -> (usize, usize) {
        let img = &self.items[0].0;
        (img.width(), img.height())
    }

    /// Seeded shuffle, then the first `floor(n * train / (train + val))`
    /// items train and the rest validate. Each side keeps at least one item.
    pub fn split(&self, ratio: SplitRatio, seed: u64) -> Result<(Dataset, Dataset)> {
        let n = self.len();
        if n < 2 {
            return Err(Error::Config(format!("cannot split a dataset of {n} item(s)")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        SeededRng::derived(seed, SPLIT_STREAM).shuffle(&mut order);
        let cut = ratio.train_count(n).clamp(1, n - 1);
        let pick = |idx: &[usize]| Dataset {
            items: idx.iter().map(|&i| self.items[i].clone()).collect(),
        };
        Ok((pick(&order[..cut]), pick(&order[cut..])))
    }

    /// Stacks the given items into `(N,1,H,W)` inputs scaled to `[0, 1]` and
    /// `(N,1,H,W)` targets in `{0, 1}`.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> (Tensor<T>, Tensor<T>) {
        let (w, h) = self.dims();
        let scale = T::from_f64(1.0 / 255.0);
        let mut x = Vec::with_capacity(indices.len() * w * h);
        let mut y = Vec::with_capacity(indices.len() * w * h);
        for &i in indices {
            let (img, mask) = &self.items[i];
            x.extend(img.pixels().iter().map(|&v| T::from_f64(v as f64) * scale));
            y.extend(mask.pixels().iter().map(|&v| if v == FOREGROUND { T::one() } else { T::zero() }));
        }
        let shape = [indices.len(), 1, h, w];
        (Tensor::new(&shape, x).unwrap(), Tensor::new(&shape, y).unwrap())
    }

    /// Loads `img_<id>.pgm` / `mask_<id>.pgm` pairs, sorted by id.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut ids = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(id) = name.strip_prefix("img_").and_then(|s| s.strip_suffix(".pgm")) {
                ids.push(id.to_string());
            }
        }
        ids.sort();
        let mut items = Vec::with_capacity(ids.len());
        for id in ids {
            let mask_path = dir.join(format!("mask_{id}.pgm"));
            if !mask_path.exists() {
                return Err(Error::Format(format!("img_{id}.pgm has no matching mask_{id}.pgm")));
            }
            items.push((read_gray(dir.join(format!("img_{id}.pgm")))?, read_gray(mask_path)?));
        }
        if items.is_empty() {
            return Err(Error::Config(format!("no img_*.pgm files in {}", dir.display())));
        }
        Self::new(items)
    }

    /// Writes `img_%04d.pgm` / `mask_%04d.pgm` pairs.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, (img, mask)) in self.items.iter().enumerate() {
            write_gray(img, dir.join(format!("img_{i:04}.pgm")))?;
            write_gray(mask, dir.join(format!("mask_{i:04}.pgm")))?;
        }
        Ok(())
    }
}
