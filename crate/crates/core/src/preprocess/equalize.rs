use super::{GrayImage, RgbImage};

/// Number of representable gray levels.
pub const LEVELS: usize = 256;

const LUMA_R: f64 = 0.299;
const LUMA_G: f64 = 0.587;
const LUMA_B: f64 = 0.114;

/// Weighted-average grayscale conversion with the ITU-R BT.601 luma weights
/// (green > red > blue), rounded half away from zero.
pub fn rgb_to_gray(img: &RgbImage) -> GrayImage {
    let pixels = img
        .pixels()
        .iter()
        .map(|&[r, g, b]| {
            let y = LUMA_R * r as f64 + LUMA_G * g as f64 + LUMA_B * b as f64;
            y.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage::new(img.width(), img.height(), pixels).expect("dimensions preserved")
}

/// Gray-level counts and their running sum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    pub counts: [u64; LEVELS],
    pub cdf: [u64; LEVELS],
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.cdf[LEVELS - 1]
    }

    /// Smallest non-zero cumulative count, i.e. the count of the darkest
    /// occurring level.
    pub fn cdf_min(&self) -> u64 {
        self.cdf.iter().copied().find(|&c| c > 0).unwrap_or(0)
    }

    /// Lookup table from input level to equalized level.
    pub fn equalization_map(&self) -> [u8; LEVELS] {
        let mut map = [0u8; LEVELS];
        let n = self.total();
        let cdf_min = self.cdf_min();
        if n == cdf_min {
            // single gray level: nothing to spread
            for (v, m) in map.iter_mut().enumerate() {
                *m = v as u8;
            }
            return map;
        }
        let span = (n - cdf_min) as f64;
        for (v, m) in map.iter_mut().enumerate() {
            let c = self.cdf[v].saturating_sub(cdf_min) as f64;
            *m = (c / span * (LEVELS - 1) as f64).round().clamp(0.0, 255.0) as u8;
        }
        map
    }
}

pub fn compute_histogram(img: &GrayImage) -> Histogram {
    let mut counts = [0u64; LEVELS];
    for &p in img.pixels() {
        counts[p as usize] += 1;
    }
    let mut cdf = [0u64; LEVELS];
    let mut acc = 0;
    for (c, &k) in cdf.iter_mut().zip(&counts) {
        acc += k;
        *c = acc;
    }
    Histogram { counts, cdf }
}

/// Histogram equalization through the normalized CDF, with the darkest
/// occurring level pinned to 0. Single-level images are returned unchanged.
pub fn equalize(img: &GrayImage) -> GrayImage {
    let map = compute_histogram(img).equalization_map();
    let pixels = img.pixels().iter().map(|&p| map[p as usize]).collect();
    GrayImage::new(img.width(), img.height(), pixels).expect("dimensions preserved")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn luma_examples() {
        let img = RgbImage::new(3, 1, vec![[0, 0, 0], [255, 255, 255], [255, 0, 0]]).unwrap();
        assert_eq!(rgb_to_gray(&img).pixels(), &[0, 255, 76]);
    }

    #[test]
    fn gray_triples_are_fixed_points() {
        let img = RgbImage::new(256, 1, (0..=255u8).map(|v| [v, v, v]).collect()).unwrap();
        let gray = rgb_to_gray(&img);
        assert!(gray.pixels().iter().enumerate().all(|(v, &p)| p as usize == v));
    }

    #[test]
    fn histogram_of_small_image() {
        let img = GrayImage::new(2, 2, vec![52, 55, 61, 59]).unwrap();
        let h = compute_histogram(&img);
        for v in [52, 55, 59, 61] {
            assert_eq!(h.counts[v], 1);
        }
        assert_eq!((h.cdf[52], h.cdf[55], h.cdf[59], h.cdf[61]), (1, 2, 3, 4));
        assert_eq!(h.cdf[51], 0);
        assert_eq!(h.total(), 4);

        let c = compute_histogram(&GrayImage::filled(5, 2, 7).unwrap());
        assert_eq!(c.counts[7], 10);
        assert!(c.cdf[..7].iter().all(|&v| v == 0));
        assert!(c.cdf[7..].iter().all(|&v| v == 10));
    }

    #[test]
    fn equalize_examples() {
        let img = GrayImage::new(2, 2, vec![52, 55, 61, 59]).unwrap();
        assert_eq!(equalize(&img).pixels(), &[0, 85, 255, 170]);

        let ramp = GrayImage::new(16, 16, (0..=255u8).collect()).unwrap();
        assert_eq!(equalize(&ramp), ramp);

        let flat = GrayImage::filled(3, 3, 200).unwrap();
        assert_eq!(equalize(&flat), flat);
    }
}
