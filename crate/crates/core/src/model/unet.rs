use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

use super::blocks::{self, aspp_layout, decoder_layout, double_conv_layout, encoder_layout};
use super::config::NetworkConfig;
use super::params::{Bound, Layout, Parameters};

/// Encoder-decoder segmentation network with a sigmoid head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UNet {
    cfg: NetworkConfig,
}

impl UNet {
    pub fn new(cfg: NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn layout(&self) -> Layout {
        let cfg = &self.cfg;
        let mut layout = Layout::default();
        for stage in 0..cfg.depth {
            encoder_layout(&mut layout, cfg, stage);
        }
        let bottom = cfg.width(cfg.depth);
        double_conv_layout(&mut layout, "bottleneck", cfg.width(cfg.depth - 1), bottom);
        if cfg.use_aspp {
            aspp_layout(&mut layout, "aspp", bottom, cfg.aspp_rates.len());
        }
        for stage in (0..cfg.depth).rev() {
            decoder_layout(&mut layout, cfg, stage);
        }
        layout.conv("head", cfg.base_channels, cfg.out_channels, 1);
        layout
    }

    /// Maps `(N, in_channels, H, W)` to per-pixel probabilities
    /// `(N, out_channels, H, W)`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let cfg = &self.cfg;
        let [_, c, h, w] = tape.value(x).dims4("network input")?;
        if c != cfg.in_channels {
            return Err(shape_err!("network expects {} input channels, got {c}", cfg.in_channels));
        }
        cfg.check_input_dims(h, w)?;

        let mut skips = Vec::with_capacity(cfg.depth);
        let mut y = x;
        for stage in 0..cfg.depth {
            let (features, pooled) = blocks::encoder_block(tape, p, stage, y)?;
            skips.push(features);
            y = pooled;
        }
        y = blocks::double_conv(tape, p, "bottleneck", y)?;
        if cfg.use_aspp {
            y = blocks::aspp(tape, p, "aspp", y, &cfg.aspp_rates)?;
        }
        for stage in (0..cfg.depth).rev() {
            y = blocks::decoder_block(tape, p, stage, y, skips[stage], cfg.use_coordinate_attention)?;
        }
        let w = p.var("head.weight")?;
        let b = p.var("head.bias")?;
        let logits = tape.conv2d(y, w, b, 1, 0, 1)?;
        tape.sigmoid(logits)
    }

    /// Inference without gradient bookkeeping.
    pub fn predict<T: Scalar>(&self, params: &Parameters<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let input = tape.constant(Tensor::new(x.shape(), x.data().to_vec())?);
        let out = self.forward(&mut tape, &bound, input)?;
        Ok(tape.take_value(out))
    }
}

/// Freshly initialized parameters for `cfg` (He-uniform weights, zero biases).
pub fn init_parameters<T: Scalar>(cfg: &NetworkConfig, seed: u64) -> Result<Parameters<T>> {
    Ok(Parameters::init(&UNet::new(cfg.clone())?.layout(), seed))
}

pub fn build_network<T: Scalar>(cfg: &NetworkConfig, seed: u64) -> Result<(Parameters<T>, UNet)> {
    let net = UNet::new(cfg.clone())?;
    let params = Parameters::init(&net.layout(), seed);
    Ok((params, net))
}
