use serde::{Deserialize, Serialize};

use super::{BnSettings, GraphBuilder, ModelGraph, LAST_CONV_TAP};
use crate::error::{Error, Result};
use crate::ops::PoolMode;

/// Widths of one convolutional block: `inner` filters for the 1x1 and 3x3
/// convolutions, `out` filters for the closing 1x1 that gets concatenated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockWidths {
    pub inner: usize,
    pub out: usize,
    pub pool: bool,
}

impl BlockWidths {
    pub const fn new(inner: usize, out: usize, pool: bool) -> Self {
        BlockWidths { inner, out, pool }
    }
}

/// Block schedule of the full-size network (25.8 M trainable parameters).
pub const DEFAULT_BLOCKS: [BlockWidths; 6] = [
    BlockWidths::new(80, 64, true),
    BlockWidths::new(160, 128, true),
    BlockWidths::new(320, 256, true),
    BlockWidths::new(688, 512, true),
    BlockWidths::new(688, 512, false),
    BlockWidths::new(688, 512, false),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VdcNetConfig {
    pub input_size: usize,
    pub input_channels: usize,
    /// Scales every filter count (stem, blocks, final conv); at least one filter is kept.
    pub width_multiplier: f64,
    pub stem_filters: usize,
    pub blocks: Vec<BlockWidths>,
    pub final_filters: usize,
    pub head: PoolMode,
    pub bn: BnSettings,
}

impl Default for VdcNetConfig {
    fn default() -> Self {
        VdcNetConfig {
            input_size: 352,
            input_channels: 3,
            width_multiplier: 1.0,
            stem_filters: 64,
            blocks: DEFAULT_BLOCKS.to_vec(),
            final_filters: 4096,
            head: PoolMode::Avg,
            bn: BnSettings::default(),
        }
    }
}

impl VdcNetConfig {
    fn scaled(&self, w: usize) -> usize {
        ((w as f64 * self.width_multiplier).round() as usize).max(1)
    }

    pub fn pool_count(&self) -> usize {
        self.blocks.iter().filter(|b| b.pool).count()
    }
}

impl GraphBuilder {
    /// BN→ReLU→conv1x1, BN→ReLU→conv3x3, BN→ReLU→conv1x1, concatenated onto
    /// the block input, optionally followed by 2x2 max pooling.
    pub(crate) fn conv_block(&mut self, x: usize, name: &str, widths: [usize; 3], with_pool: bool) -> usize {
        let a = self.bn_relu_conv(x, &format!("{name}.unit1"), widths[0], 1);
        let b = self.bn_relu_conv(a, &format!("{name}.unit2"), widths[1], 3);
        let c = self.bn_relu_conv(b, &format!("{name}.unit3"), widths[2], 1);
        let cat = self.concat(x, c, &format!("{name}.concat"));
        if with_pool {
            self.maxpool(cat, &format!("{name}.pool"), 2)
        } else {
            cat
        }
    }
}

/// A single convolutional block as a standalone graph with input
/// `[in_channels, size, size]`; output channels are `in_channels + widths[2]`.
pub fn build_conv_block(
    in_channels: usize,
    size: usize,
    widths: [usize; 3],
    with_pool: bool,
) -> Result<ModelGraph> {
    if widths.contains(&0) || in_channels == 0 {
        return Err(Error::Argument("block widths must be positive".into()));
    }
    if with_pool && size % 2 != 0 {
        return Err(Error::Argument(format!("block input size {size} is odd")));
    }
    let mut b = GraphBuilder::new(in_channels, size);
    let out = b.conv_block(0, "block", widths, with_pool);
    Ok(b.finish("conv-block", PoolMode::Avg, BnSettings::default(), out))
}

/// Stem (BN on the raw input, 3x3 conv), the configured blocks, a final
/// BN→ReLU→1x1 conv whose rectified output is the `last_conv` tap, and a
/// global pool → dense(1) → sigmoid head.
pub fn build_vdcnet(cfg: &VdcNetConfig) -> Result<ModelGraph> {
    let factor = 1usize << cfg.pool_count();
    if cfg.input_size == 0 || cfg.input_size % factor != 0 {
        return Err(Error::Argument(format!(
            "input size {} must be a positive multiple of {factor}",
            cfg.input_size
        )));
    }
    if !(cfg.width_multiplier > 0.0) || cfg.blocks.is_empty() || cfg.input_channels == 0 {
        return Err(Error::Argument(
            "width multiplier must be positive and at least one block is required".into(),
        ));
    }
    let mut b = GraphBuilder::new(cfg.input_channels, cfg.input_size);
    let stem_bn = b.bn(0, "stem.bn");
    let mut x = b.conv(stem_bn, "stem.conv", cfg.scaled(cfg.stem_filters), 3);
    for (i, blk) in cfg.blocks.iter().enumerate() {
        let inner = cfg.scaled(blk.inner);
        let widths = [inner, inner, cfg.scaled(blk.out)];
        x = b.conv_block(x, &format!("block{}", i + 1), widths, blk.pool);
        b.tap(x, &format!("block{}", i + 1));
    }
    let f = b.bn_relu_conv(x, "final", cfg.scaled(cfg.final_filters), 1);
    let tap = b.relu(f, "final.out");
    b.tap(tap, LAST_CONV_TAP);
    let logit = b.head(tap, cfg.head);
    let arch = match cfg.head {
        PoolMode::Avg => "vdcnet-gap",
        PoolMode::Max => "vdcnet-gmp",
    };
    Ok(b.finish(arch, cfg.head, cfg.bn, logit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{count_params, LayerKind};

    #[test]
    fn block_channel_arithmetic() {
        let g = build_conv_block(32, 16, [16, 16, 32], true).unwrap();
        let out = g.layers.last().unwrap();
        assert_eq!(out.out_shape, vec![64, 8, 8]);
        assert_eq!(g.conv_count(), 3);
        assert_eq!(g.bn_count(), 3);
        assert_eq!(g.maxpool_count(), 1);
    }

    #[test]
    fn block_kernel_order_is_1_3_1() {
        let g = build_conv_block(4, 8, [2, 2, 4], false).unwrap();
        let kernels: Vec<usize> = g
            .layers
            .iter()
            .filter_map(|l| match l.kind {
                LayerKind::Conv { kernel, .. } => Some(kernel),
                _ => None,
            })
            .collect();
        assert_eq!(kernels, vec![1, 3, 1]);
    }

    #[test]
    fn default_structure() {
        let g = build_vdcnet(&VdcNetConfig::default()).unwrap();
        assert_eq!(g.conv_count(), 20);
        assert_eq!(g.maxpool_count(), 4);
        assert_eq!(g.bn_count(), 20);
        assert_eq!(count_params(&g), 25_802_695);
        assert_eq!(g.tap_layer(LAST_CONV_TAP).unwrap().out_shape, vec![4096, 22, 22]);
        assert!(g.has_gap_dense_head());
    }

    #[test]
    fn concat_channels_strictly_increase() {
        let g = build_vdcnet(&VdcNetConfig::default()).unwrap();
        let c = g.concat_channels();
        assert_eq!(c.len(), 6);
        assert!(c.windows(2).all(|w| w[1] > w[0]), "{c:?}");
    }

    #[test]
    fn rejects_indivisible_input() {
        let cfg = VdcNetConfig {
            input_size: 100,
            ..VdcNetConfig::default()
        };
        assert!(matches!(build_vdcnet(&cfg), Err(Error::Argument(_))));
    }

    #[test]
    fn gmp_head_is_not_a_gap_head() {
        let cfg = VdcNetConfig {
            head: PoolMode::Max,
            width_multiplier: 0.125,
            ..VdcNetConfig::default()
        };
        let g = build_vdcnet(&cfg).unwrap();
        assert!(!g.has_gap_dense_head());
        assert_eq!(g.conv_count(), 20);
    }
}
