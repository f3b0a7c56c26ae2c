//! Brute-force reference implementations. Deliberately naive and written
//! independently of the library kernels.
#![allow(dead_code)]

/// Direct cross-correlation, summing every tap with explicit bounds checks.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    (n, cin, h, w): (usize, usize, usize, usize),
    wt: &[f64],
    (cout, k): (usize, usize),
    b: &[f64],
    stride: usize,
    pad: usize,
    dil: usize,
) -> (Vec<f64>, usize, usize) {
    let span = dil * (k - 1) + 1;
    let ho = (h + 2 * pad - span) / stride + 1;
    let wo = (w + 2 * pad - span) / stride + 1;
    let mut out = vec![0.0; n * cout * ho * wo];
    for ni in 0..n {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky * dil) as i64 - pad as i64;
                                let ix = (ox * stride + kx * dil) as i64 - pad as i64;
                                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                    continue;
                                }
                                let xv = x[((ni * cin + ci) * h + iy as usize) * w + ix as usize];
                                let wv = wt[((co * cin + ci) * k + ky) * k + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((ni * cout + co) * ho + oy) * wo + ox] = acc + b[co];
                }
            }
        }
    }
    (out, ho, wo)
}

/// Transposed convolution by scattering each input site through the kernel.
pub fn conv_transpose(
    x: &[f64],
    (n, cin, h, w): (usize, usize, usize, usize),
    wt: &[f64],
    (cout, k): (usize, usize),
    b: &[f64],
    stride: usize,
) -> Vec<f64> {
    let ho = (h - 1) * stride + k;
    let wo = (w - 1) * stride + k;
    let mut out = vec![0.0; n * cout * ho * wo];
    for ni in 0..n {
        for co in 0..cout {
            for y in 0..ho {
                for xx in 0..wo {
                    out[((ni * cout + co) * ho + y) * wo + xx] = b[co];
                }
            }
        }
        for ci in 0..cin {
            for i in 0..h {
                for j in 0..w {
                    let v = x[((ni * cin + ci) * h + i) * w + j];
                    for co in 0..cout {
                        for ky in 0..k {
                            for kx in 0..k {
                                let oy = i * stride + ky;
                                let ox = j * stride + kx;
                                out[((ni * cout + co) * ho + oy) * wo + ox] +=
                                    v * wt[((ci * cout + co) * k + ky) * k + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn maxpool(x: &[f64], planes: usize, h: usize, w: usize, win: usize, stride: usize) -> Vec<f64> {
    let ho = (h - win) / stride + 1;
    let wo = (w - win) / stride + 1;
    let mut out = Vec::new();
    for p in 0..planes {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut m = f64::NEG_INFINITY;
                for ky in 0..win {
                    for kx in 0..win {
                        m = m.max(x[(p * h + oy * stride + ky) * w + ox * stride + kx]);
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

/// mIoU by explicit set arithmetic over pixel coordinates.
pub fn miou_sets(pairs: &[(Vec<u8>, Vec<u8>)]) -> Option<f64> {
    use std::collections::BTreeSet;
    let mut ious = Vec::new();
    for class in [0u8, 255u8] {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (img, (pred, gt)) in pairs.iter().enumerate() {
            let a: BTreeSet<(usize, usize)> = pred
                .iter()
                .enumerate()
                .filter(|(_, &v)| v == class)
                .map(|(i, _)| (img, i))
                .collect();
            let b: BTreeSet<(usize, usize)> = gt
                .iter()
                .enumerate()
                .filter(|(_, &v)| v == class)
                .map(|(i, _)| (img, i))
                .collect();
            inter += a.intersection(&b).count();
            union += a.union(&b).count();
        }
        if union > 0 {
            ious.push(inter as f64 / union as f64);
        }
    }
    if ious.is_empty() {
        None
    } else {
        Some(ious.iter().sum::<f64>() / ious.len() as f64)
    }
}

/// Small deterministic generator for test inputs (SplitMix64).
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * ((self.next_u64() >> 11) as f64 / (1u64 << 53) as f64)
    }

    /// Multiples of 1/8 in [-4, 4]: products and sums of these stay exact in
    /// double precision, so any summation order gives the same bits.
    pub fn dyadic(&mut self) -> f64 {
        (self.below(65) as f64 - 32.0) / 8.0
    }

    pub fn vec(&mut self, len: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..len).map(|_| self.uniform(lo, hi)).collect()
    }

    pub fn dyadic_vec(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.dyadic()).collect()
    }
}
