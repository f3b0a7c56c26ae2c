use std::f64::consts::PI;

use crate::metrics::{BACKGROUND, FOREGROUND};
use crate::preprocess::GrayImage;
use crate::rng::SeededRng;

use super::Dataset;

/// Bounds on the tumor share of each mask. Layouts outside them are redrawn.
pub const MIN_FOREGROUND: f64 = 0.01;
pub const MAX_FOREGROUND: f64 = 0.25;

const MAX_ATTEMPTS: usize = 64;

struct Blob {
    cx: f64,
    cy: f64,
    radius: f64,
    // (amplitude, frequency, phase) harmonics on the radius
    lobes: [(f64, f64, f64); 3],
}

impl Blob {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let theta = dy.atan2(dx);
        let wobble: f64 = self.lobes.iter().map(|&(a, f, p)| a * (f * theta + p).sin()).sum();
        (dx * dx + dy * dy).sqrt() <= self.radius * (1.0 + wobble)
    }
}

/// Synthetic brain-like scans with one or two bright irregular tumors.
///
/// Each item draws from its own stream derived from `seed` and its index,
/// so the set is fully determined by `(n, side, seed)`.
pub fn synth_dataset(n: usize, side: usize, seed: u64) -> Dataset {
    assert!(n > 0 && side > 0, "synth_dataset needs n > 0 and side > 0");
    let items = (0..n)
        .map(|i| synth_item(side, &mut SeededRng::derived(seed, 0x5eed_0000 + i as u64)))
        .collect();
    Dataset::new(items).expect("generated items share dimensions and binary masks")
}

fn synth_item(side: usize, rng: &mut SeededRng) -> (GrayImage, GrayImage) {
    let s = side as f64;
    let c = s / 2.0;
    let bx = c + rng.uniform(-0.04, 0.04) * s;
    let by = c + rng.uniform(-0.04, 0.04) * s;
    let ra = rng.uniform(0.34, 0.44) * s;
    let rb = rng.uniform(0.30, 0.42) * s;
    let skull = rng.uniform(0.025, 0.045) * s;
    let brain_level = rng.uniform(70.0, 105.0);
    let skull_level = rng.uniform(120.0, 160.0);
    let texture = [
        (rng.uniform(4.0, 10.0), rng.uniform(1.0, 3.0), rng.uniform(0.0, 2.0 * PI)),
        (rng.uniform(4.0, 10.0), rng.uniform(1.0, 3.0), rng.uniform(0.0, 2.0 * PI)),
    ];

    let (blobs, mask) = (0..MAX_ATTEMPTS)
        .find_map(|_| {
            let blobs = draw_blobs(rng, s, (bx, by), (ra, rb));
            let mask = rasterize(side, &blobs);
            let frac = mask.iter().filter(|&&m| m).count() as f64 / (side * side) as f64;
            (MIN_FOREGROUND..=MAX_FOREGROUND).contains(&frac).then_some((blobs, mask))
        })
        .expect("tumor layout within foreground bounds");

    let tumor_levels: Vec<f64> = blobs.iter().map(|_| rng.uniform(150.0, 205.0)).collect();
    let mut pixels = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let (u, v) = ((px - bx) / ra, (py - by) / rb);
            let r = (u * u + v * v).sqrt();
            let mut level = if r <= 1.0 {
                let tex: f64 = texture
                    .iter()
                    .map(|&(a, f, p)| a * (f * 2.0 * PI * (px + 0.7 * py) / s + p).sin())
                    .sum();
                brain_level + tex
            } else if r <= 1.0 + skull / ra.min(rb) {
                skull_level
            } else {
                8.0
            };
            if let Some(k) = blobs.iter().position(|b| b.contains(px, py)) {
                level = tumor_levels[k];
            }
            pixels.push(level + gaussian(rng) * 10.0);
        }
    }
    let image = pixels.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect();
    let mask = mask.iter().map(|&m| if m { FOREGROUND } else { BACKGROUND }).collect();
    (
        GrayImage::new(side, side, image).expect("non-empty image"),
        GrayImage::new(side, side, mask).expect("non-empty mask"),
    )
}

fn draw_blobs(rng: &mut SeededRng, s: f64, centre: (f64, f64), axes: (f64, f64)) -> Vec<Blob> {
    let count = 1 + rng.below(2);
    (0..count)
        .map(|_| {
            let angle = rng.uniform(0.0, 2.0 * PI);
            let dist = rng.uniform(0.0, 0.55);
            let mut lobes = [(0.0, 0.0, 0.0); 3];
            for (i, lobe) in lobes.iter_mut().enumerate() {
                *lobe = (rng.uniform(0.0, 0.15), (i + 2) as f64, rng.uniform(0.0, 2.0 * PI));
            }
            Blob {
                cx: centre.0 + dist * axes.0 * angle.cos(),
                cy: centre.1 + dist * axes.1 * angle.sin(),
                radius: rng.uniform(0.07, 0.15) * s,
                lobes,
            }
        })
        .collect()
}

fn rasterize(side: usize, blobs: &[Blob]) -> Vec<bool> {
    let mut mask = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            mask.push(blobs.iter().any(|b| b.contains(px, py)));
        }
    }
    mask
}

// Irwin-Hall approximation, unit variance.
fn gaussian(rng: &mut SeededRng) -> f64 {
    ((0..4).map(|_| rng.unit()).sum::<f64>() - 2.0) * 3f64.sqrt()
}
