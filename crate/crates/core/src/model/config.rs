use crate::error::{Error, Result};

/// Smallest attention bottleneck width; `max(C / reduction, MIN_ATTENTION_CHANNELS)`.
pub const MIN_ATTENTION_CHANNELS: usize = 4;

/// Architecture hyperparameters shared by the baseline and improved U-Net.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    /// Number of down/up sampling stages.
    pub depth: usize,
    pub reduction_ratio: usize,
    pub aspp_rates: Vec<usize>,
    pub use_coordinate_attention: bool,
    pub use_aspp: bool,
    pub out_channels: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            base_channels: 32,
            depth: 4,
            reduction_ratio: 8,
            aspp_rates: vec![6, 12, 18],
            use_coordinate_attention: false,
            use_aspp: false,
            out_channels: 1,
        }
    }
}

impl NetworkConfig {
    pub fn baseline(base_channels: usize, depth: usize) -> Self {
        Self {
            base_channels,
            depth,
            ..Self::default()
        }
    }

    /// Baseline plus coordinate attention on skips and ASPP at the bottleneck.
    pub fn improved(base_channels: usize, depth: usize) -> Self {
        Self {
            use_coordinate_attention: true,
            use_aspp: true,
            ..Self::baseline(base_channels, depth)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.in_channels == 0 || self.out_channels == 0 {
            return fail("channel counts must be positive".into());
        }
        if self.depth == 0 {
            return fail("depth must be at least 1".into());
        }
        if self.base_channels == 0 {
            return fail("base_channels must be positive".into());
        }
        if self.depth > 16 || self.base_channels.checked_shl(self.depth as u32).is_none() {
            return fail(format!("depth {} too large", self.depth));
        }
        if self.use_coordinate_attention {
            if self.reduction_ratio == 0 {
                return fail("reduction_ratio must be positive".into());
            }
            if self.base_channels < MIN_ATTENTION_CHANNELS {
                return fail(format!(
                    "base_channels {} below the attention floor {MIN_ATTENTION_CHANNELS}",
                    self.base_channels
                ));
            }
        }
        if self.use_aspp && self.aspp_rates.contains(&0) {
            return fail("every ASPP rate must be at least 1".into());
        }
        Ok(())
    }

    /// Channel width of encoder stage `i`; `i == depth` is the bottleneck.
    pub fn width(&self, stage: usize) -> usize {
        self.base_channels << stage
    }

    /// Required divisor of the input height and width.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.depth
    }

    pub fn check_input_dims(&self, height: usize, width: usize) -> Result<()> {
        let m = self.spatial_multiple();
        if height == 0 || width == 0 || !height.is_multiple_of(m) || !width.is_multiple_of(m) {
            return Err(Error::Config(format!(
                "input {height}x{width} is not divisible by 2^depth = {m}"
            )));
        }
        Ok(())
    }

    pub fn attention_channels(&self, channels: usize) -> usize {
        (channels / self.reduction_ratio.max(1)).max(MIN_ATTENTION_CHANNELS)
    }

    /// Flat `key=value` lines in a fixed order.
    pub fn to_key_values(&self) -> String {
        let rates: Vec<String> = self.aspp_rates.iter().map(usize::to_string).collect();
        format!(
            "in_channels={}\nbase_channels={}\ndepth={}\nreduction_ratio={}\naspp_rates={}\nuse_coordinate_attention={}\nuse_aspp={}\nout_channels={}\n",
            self.in_channels,
            self.base_channels,
            self.depth,
            self.reduction_ratio,
            rates.join(","),
            self.use_coordinate_attention,
            self.use_aspp,
            self.out_channels
        )
    }

    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = 0u32;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad config line {line:?}")))?;
            let num = || {
                value
                    .parse::<usize>()
                    .map_err(|_| Error::Format(format!("bad value for {key}: {value:?}")))
            };
            let flag = || match value {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(Error::Format(format!("bad flag for {key}: {value:?}"))),
            };
            let bit = match key {
                "in_channels" => { cfg.in_channels = num()?; 0 }
                "base_channels" => { cfg.base_channels = num()?; 1 }
                "depth" => { cfg.depth = num()?; 2 }
                "reduction_ratio" => { cfg.reduction_ratio = num()?; 3 }
                "aspp_rates" => {
                    cfg.aspp_rates = if value.is_empty() {
                        Vec::new()
                    } else {
                        value
                            .split(',')
                            .map(|r| r.parse().map_err(|_| Error::Format(format!("bad rate {r:?}"))))
                            .collect::<Result<_>>()?
                    };
                    4
                }
                "use_coordinate_attention" => { cfg.use_coordinate_attention = flag()?; 5 }
                "use_aspp" => { cfg.use_aspp = flag()?; 6 }
                "out_channels" => { cfg.out_channels = num()?; 7 }
                other => return Err(Error::Format(format!("unknown config key {other:?}"))),
            };
            seen |= 1 << bit;
        }
        if seen != 0xff {
            return Err(Error::Format("config header is missing keys".into()));
        }
        Ok(cfg)
    }
}
