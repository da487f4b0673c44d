use serde::{Deserialize, Serialize};

use crate::conditioning::{Direction, EncoderConfig, LayerId, LayerRegistry};
use crate::error::{Error, Result};

/// One resolution level of the U-net.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelConfig {
    /// Resolution label used in layer names.
    pub label: u32,
    pub channels: usize,
    /// Down-path res blocks, each followed by cross-attention.
    pub down_blocks: usize,
    /// Up-path res blocks that carry cross-attention. The level always has
    /// `down_blocks + 1` up-path res blocks; the first `up_attn` of them
    /// are followed by cross-attention.
    pub up_attn: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub preset: String,
    /// Side length of the square RGB input.
    pub image_size: usize,
    pub levels: Vec<LevelConfig>,
    pub mid_channels: usize,
    /// Name of the single bottleneck cross-attention layer.
    pub mid_label: u32,
    pub heads: usize,
    pub head_dim: usize,
    pub groups: usize,
    pub time_dim: usize,
    pub text_dim: usize,
    pub text_blocks: usize,
    pub max_len: usize,
}

impl UNetConfig {
    /// 16 cross-attention layers: two down and three up at three levels plus
    /// the bottleneck. Spatial sizes 32/16/8 carry the labels 64/32/16 and
    /// the 4x4 bottleneck is labelled 8.
    pub fn reference16() -> Self {
        UNetConfig {
            preset: "reference-16".into(),
            image_size: 32,
            levels: vec![
                LevelConfig { label: 64, channels: 8, down_blocks: 2, up_attn: 3 },
                LevelConfig { label: 32, channels: 16, down_blocks: 2, up_attn: 3 },
                LevelConfig { label: 16, channels: 16, down_blocks: 2, up_attn: 3 },
            ],
            mid_channels: 16,
            mid_label: 8,
            heads: 2,
            head_dim: 8,
            groups: 4,
            time_dim: 16,
            text_dim: 48,
            text_blocks: 2,
            max_len: 12,
        }
    }

    /// Five cross-attention layers on a 16x16 input, for fast tests.
    pub fn micro5() -> Self {
        UNetConfig {
            preset: "micro-5".into(),
            image_size: 16,
            levels: vec![
                LevelConfig { label: 64, channels: 8, down_blocks: 1, up_attn: 1 },
                LevelConfig { label: 32, channels: 16, down_blocks: 1, up_attn: 1 },
            ],
            mid_channels: 16,
            mid_label: 16,
            heads: 2,
            head_dim: 8,
            groups: 4,
            time_dim: 16,
            text_dim: 48,
            text_blocks: 2,
            max_len: 12,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "reference-16" => Ok(Self::reference16()),
            "micro-5" => Ok(Self::micro5()),
            _ => Err(Error::InvalidArgument(format!("unknown model preset {name:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.levels.is_empty() {
            return bad("at least one level is required".into());
        }
        if !self.image_size.is_multiple_of(1 << self.levels.len()) {
            return bad(format!(
                "image size {} is not divisible by 2^{}",
                self.image_size,
                self.levels.len()
            ));
        }
        for l in &self.levels {
            if l.up_attn > l.down_blocks + 1 || l.channels % self.groups != 0 {
                return bad(format!("invalid level {l:?}"));
            }
        }
        if !self.mid_channels.is_multiple_of(self.groups) || self.heads == 0 || self.head_dim == 0 {
            return bad("invalid bottleneck or head configuration".into());
        }
        self.registry().map(|_| ())
    }

    /// Cross-attention layers in the order the forward pass visits them.
    pub fn layer_ids(&self) -> Vec<LayerId> {
        let mut ids = Vec::new();
        for l in &self.levels {
            for i in 0..l.down_blocks {
                ids.push(LayerId::new(l.label, Direction::Down, i as u32));
            }
        }
        ids.push(LayerId::new(self.mid_label, Direction::Down, 0));
        for l in self.levels.iter().rev() {
            for i in 0..l.up_attn {
                ids.push(LayerId::new(l.label, Direction::Up, i as u32));
            }
        }
        ids
    }

    pub fn registry(&self) -> Result<LayerRegistry> {
        LayerRegistry::new(self.layer_ids())
    }

    pub fn encoder(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            dim: self.text_dim,
            blocks: self.text_blocks,
            max_len: self.max_len,
            vocab_size,
        }
    }

    /// Spatial side length at each level, then at the bottleneck.
    pub fn spatial_sizes(&self) -> Vec<usize> {
        (0..=self.levels.len()).map(|i| self.image_size >> i).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_preset_matches_reference_registry() {
        let c = UNetConfig::reference16();
        c.validate().unwrap();
        assert_eq!(c.registry().unwrap(), LayerRegistry::reference());
        assert_eq!(c.spatial_sizes(), vec![32, 16, 8, 4]);
    }

    #[test]
    fn micro_has_five_layers() {
        let c = UNetConfig::micro5();
        c.validate().unwrap();
        let names = c.registry().unwrap().to_names();
        assert_eq!(
            names,
            ["(64, 'down', 0)", "(32, 'down', 0)", "(16, 'down', 0)", "(32, 'up', 0)", "(64, 'up', 0)"]
        );
    }
}
