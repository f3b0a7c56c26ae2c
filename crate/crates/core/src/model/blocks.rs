//! Building blocks of the U-Net. Each block has a layout function naming its
//! parameters under a prefix and a forward function reading them back from a
//! [`Bound`] set.

use std::sync::atomic::{AtomicBool, Ordering};

use crate::error::{shape_err, Result};
use crate::tensor::{PoolAxis, Scalar, Tape, Var};

use super::config::NetworkConfig;
use super::params::{Bound, Layout};

fn conv<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    prefix: &str,
    x: Var,
    padding: usize,
    dilation: usize,
) -> Result<Var> {
    let w = p.var(&format!("{prefix}.weight"))?;
    let b = p.var(&format!("{prefix}.bias"))?;
    tape.conv2d(x, w, b, 1, padding, dilation)
}

fn conv_relu<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    prefix: &str,
    x: Var,
    padding: usize,
    dilation: usize,
) -> Result<Var> {
    let y = conv(tape, p, prefix, x, padding, dilation)?;
    tape.relu(y)
}

pub fn double_conv_layout(layout: &mut Layout, prefix: &str, cin: usize, cout: usize) {
    layout.conv(&format!("{prefix}.conv1"), cin, cout, 3);
    layout.conv(&format!("{prefix}.conv2"), cout, cout, 3);
}

/// Two same-size 3x3 convolutions, each followed by relu.
pub fn double_conv<T: Scalar>(tape: &mut Tape<T>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let y = conv_relu(tape, p, &format!("{prefix}.conv1"), x, 1, 1)?;
    conv_relu(tape, p, &format!("{prefix}.conv2"), y, 1, 1)
}

pub fn encoder_layout(layout: &mut Layout, cfg: &NetworkConfig, stage: usize) {
    let cin = if stage == 0 { cfg.in_channels } else { cfg.width(stage - 1) };
    double_conv_layout(layout, &format!("enc{stage}"), cin, cfg.width(stage));
}

/// Returns `(features, pooled)`; the features feed the matching decoder stage.
pub fn encoder_block<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    stage: usize,
    x: Var,
) -> Result<(Var, Var)> {
    let features = double_conv(tape, p, &format!("enc{stage}"), x)?;
    let pooled = tape.maxpool2d(features, 2, 2)?;
    Ok((features, pooled))
}

pub fn coordinate_attention_layout(layout: &mut Layout, prefix: &str, channels: usize, reduced: usize) {
    layout.conv(&format!("{prefix}.shared"), channels, reduced, 1);
    layout.conv(&format!("{prefix}.height"), reduced, channels, 1);
    layout.conv(&format!("{prefix}.width"), reduced, channels, 1);
}

/// Output of the attention block together with its two gating maps.
#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub output: Var,
    /// `(N,C,H,1)` row weights.
    pub rows: Var,
    /// `(N,C,1,W)` column weights.
    pub cols: Var,
}

/// Coordinate attention: pool along each axis, encode both directions with a
/// shared 1x1 convolution, split, and gate the input by a row map and a
/// column map.
pub fn coordinate_attention_maps<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    prefix: &str,
    x: Var,
) -> Result<Attention> {
    let [n, c, h, w] = tape.value(x).dims4("coordinate_attention")?;
    let along_rows = tape.avgpool_directional(x, PoolAxis::Width)?;
    let along_cols = tape.avgpool_directional(x, PoolAxis::Height)?;
    let along_cols = tape.reshape(along_cols, &[n, c, w, 1])?;
    let joint = tape.concat(&[along_rows, along_cols], 2)?;
    let encoded = conv_relu(tape, p, &format!("{prefix}.shared"), joint, 0, 1)?;
    let enc_rows = tape.narrow(encoded, 2, 0, h)?;
    let enc_cols = tape.narrow(encoded, 2, h, w)?;
    let rows = conv(tape, p, &format!("{prefix}.height"), enc_rows, 0, 1)?;
    let rows = tape.sigmoid(rows)?;
    let cols = conv(tape, p, &format!("{prefix}.width"), enc_cols, 0, 1)?;
    let cols = tape.sigmoid(cols)?;
    let cols = tape.reshape(cols, &[n, c, 1, w])?;
    let gated = tape.mul(x, rows)?;
    let output = tape.mul(gated, cols)?;
    Ok(Attention { output, rows, cols })
}

pub fn coordinate_attention<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    prefix: &str,
    x: Var,
) -> Result<Var> {
    Ok(coordinate_attention_maps(tape, p, prefix, x)?.output)
}

pub fn decoder_layout(layout: &mut Layout, cfg: &NetworkConfig, stage: usize) {
    let (below, width) = (cfg.width(stage + 1), cfg.width(stage));
    layout.up_conv(&format!("dec{stage}.up"), below, width, 2);
    if cfg.use_coordinate_attention {
        coordinate_attention_layout(layout, &format!("dec{stage}.ca"), width, cfg.attention_channels(width));
    }
    double_conv_layout(layout, &format!("dec{stage}"), 2 * width, width);
}

/// Upsample `x`, concatenate the (optionally attention-gated) skip in front
/// of it, then apply a double convolution.
pub fn decoder_block<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    stage: usize,
    x: Var,
    skip: Var,
    use_attention: bool,
) -> Result<Var> {
    let [_, _, h, w] = tape.value(x).dims4("decoder input")?;
    let [_, _, sh, sw] = tape.value(skip).dims4("decoder skip")?;
    if sh != 2 * h || sw != 2 * w {
        return Err(shape_err!(
            "decoder stage {stage}: skip is {sh}x{sw}, expected {}x{}",
            2 * h,
            2 * w
        ));
    }
    let wt = p.var(&format!("dec{stage}.up.weight"))?;
    let b = p.var(&format!("dec{stage}.up.bias"))?;
    let up = tape.conv2d_transpose(x, wt, b, 2)?;
    let skip = if use_attention {
        coordinate_attention(tape, p, &format!("dec{stage}.ca"), skip)?
    } else {
        skip
    };
    let joined = tape.concat_channels(&[skip, up])?;
    double_conv(tape, p, &format!("dec{stage}"), joined)
}

pub fn aspp_layout(layout: &mut Layout, prefix: &str, channels: usize, rates: usize) {
    layout.conv(&format!("{prefix}.branch0"), channels, channels, 1);
    for i in 0..rates {
        layout.conv(&format!("{prefix}.rate{i}"), channels, channels, 3);
    }
    layout.conv(&format!("{prefix}.pool"), channels, channels, 1);
    layout.conv(&format!("{prefix}.project"), (rates + 2) * channels, channels, 1);
}

static RATE_WARNED: AtomicBool = AtomicBool::new(false);

/// Dilation actually used for `rate` on an `h x w` map: rates whose 3x3
/// footprint `2r + 1` exceeds the map fall back to 1.
pub fn effective_rate(rate: usize, h: usize, w: usize) -> usize {
    if 2 * rate + 1 > h.min(w) {
        if !RATE_WARNED.swap(true, Ordering::Relaxed) {
            log::warn!("ASPP rate {rate} spans {} pixels on a {h}x{w} map; using rate 1", 2 * rate + 1);
        }
        1
    } else {
        rate
    }
}

/// Atrous spatial pyramid pooling: a 1x1 branch, one dilated 3x3 branch per
/// rate and an image-level pooled branch, concatenated and fused by a 1x1
/// projection. Every branch keeps the channel count of `x`.
pub fn aspp<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    prefix: &str,
    x: Var,
    rates: &[usize],
) -> Result<Var> {
    let [n, c, h, w] = tape.value(x).dims4("aspp")?;
    let mut branches = vec![conv_relu(tape, p, &format!("{prefix}.branch0"), x, 0, 1)?];
    for (i, &rate) in rates.iter().enumerate() {
        let r = effective_rate(rate, h, w);
        branches.push(conv_relu(tape, p, &format!("{prefix}.rate{i}"), x, r, r)?);
    }
    let pooled = tape.global_avgpool(x)?;
    let pooled = conv_relu(tape, p, &format!("{prefix}.pool"), pooled, 0, 1)?;
    branches.push(tape.broadcast_to(pooled, &[n, c, h, w])?);
    let joined = tape.concat_channels(&branches)?;
    conv_relu(tape, p, &format!("{prefix}.project"), joined, 0, 1)
}
