use serde::{Deserialize, Serialize};

use super::{BnSettings, GraphBuilder, ModelGraph, LAST_CONV_TAP};
use crate::error::{Error, Result};
use crate::ops::PoolMode;

/// Small pre-activation residual network with element-wise addition skips
/// and five downsampling steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    pub input_size: usize,
    pub input_channels: usize,
    pub width_multiplier: f64,
    pub stem_filters: usize,
    /// Output width of each residual stage; every stage ends in a 2x2 max pool.
    pub stages: Vec<usize>,
    pub final_filters: usize,
    pub head: PoolMode,
    pub bn: BnSettings,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig {
            input_size: 352,
            input_channels: 3,
            width_multiplier: 1.0,
            stem_filters: 32,
            stages: vec![32, 64, 128, 256, 256],
            final_filters: 512,
            head: PoolMode::Avg,
            bn: BnSettings::default(),
        }
    }
}

impl ReferenceConfig {
    fn scaled(&self, w: usize) -> usize {
        ((w as f64 * self.width_multiplier).round() as usize).max(1)
    }
}

impl GraphBuilder {
    /// Pre-activation bottleneck with an addition skip; a 1x1 projection of
    /// the pre-activation replaces the identity when the width changes.
    pub(crate) fn residual_block(&mut self, x: usize, name: &str, out: usize) -> usize {
        let inner = (out / 4).max(1);
        let bn = self.bn(x, &format!("{name}.preact.bn"));
        let pre = self.relu(bn, &format!("{name}.preact.relu"));
        let shortcut = if self.channels(x) == out {
            x
        } else {
            self.conv(pre, &format!("{name}.proj"), out, 1)
        };
        let a = self.conv(pre, &format!("{name}.unit1.conv"), inner, 1);
        let b = self.bn_relu_conv(a, &format!("{name}.unit2"), inner, 3);
        let c = self.bn_relu_conv(b, &format!("{name}.unit3"), out, 1);
        self.add(shortcut, c, &format!("{name}.add"))
    }
}

pub fn build_reference_net(cfg: &ReferenceConfig) -> Result<ModelGraph> {
    let factor = 1usize << cfg.stages.len();
    if cfg.input_size == 0 || cfg.input_size % factor != 0 {
        return Err(Error::Argument(format!(
            "input size {} must be a positive multiple of {factor}",
            cfg.input_size
        )));
    }
    if !(cfg.width_multiplier > 0.0) || cfg.stages.is_empty() {
        return Err(Error::Argument(
            "width multiplier must be positive and at least one stage is required".into(),
        ));
    }
    let mut b = GraphBuilder::new(cfg.input_channels, cfg.input_size);
    let stem_bn = b.bn(0, "stem.bn");
    let mut x = b.conv(stem_bn, "stem.conv", cfg.scaled(cfg.stem_filters), 3);
    for (i, &w) in cfg.stages.iter().enumerate() {
        let name = format!("stage{}", i + 1);
        let r = b.residual_block(x, &name, cfg.scaled(w));
        x = b.maxpool(r, &format!("{name}.pool"), 2);
        b.tap(x, &name);
    }
    let f = b.bn_relu_conv(x, "final", cfg.scaled(cfg.final_filters), 1);
    let tap = b.relu(f, "final.out");
    b.tap(tap, LAST_CONV_TAP);
    let logit = b.head(tap, cfg.head);
    Ok(b.finish("reference-resnet", cfg.head, cfg.bn, logit))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::model::{build_vdcnet, count_params, ParamKind, Session, VdcNetConfig};
    use crate::ops::Mode;
    use crate::tensor::Tensor;

    /// With every conv weight zeroed and BN on fresh statistics, an
    /// equal-width residual block returns its input unchanged.
    #[test]
    fn zero_weight_residual_block_is_identity() {
        let mut b = GraphBuilder::new(4, 4);
        let out = b.residual_block(0, "probe", 4);
        let graph = Arc::new(b.finish("residual-probe", PoolMode::Avg, BnSettings::default(), out));
        let mut s = Session::<f64>::new(Arc::clone(&graph), 0);
        for (i, spec) in graph.params.iter().enumerate() {
            if spec.kind == ParamKind::Weight {
                s.param_mut(i).data_mut().fill(0.0);
            }
        }
        let x = Tensor::from_fn([1, 4, 4, 4], |i| (i as f64 * 0.37).sin());
        let fwd = s.forward(&x, Mode::Infer).unwrap();
        let y = fwd.tape.value(fwd.layers[out]);
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn tap_is_input_over_32() {
        let g = build_reference_net(&ReferenceConfig::default()).unwrap();
        let tap = &g.tap_layer(LAST_CONV_TAP).unwrap().out_shape;
        assert_eq!(&tap[1..], &[11, 11]);
        assert_eq!(g.maxpool_count(), 5);
    }

    #[test]
    fn smaller_than_default_vdcnet() {
        let r = count_params(&build_reference_net(&ReferenceConfig::default()).unwrap());
        let v = count_params(&build_vdcnet(&VdcNetConfig::default()).unwrap());
        assert!(r < v, "{r} vs {v}");
    }

    #[test]
    fn tap_ratio_against_vdcnet() {
        let r = build_reference_net(&ReferenceConfig::default()).unwrap();
        let v = build_vdcnet(&VdcNetConfig::default()).unwrap();
        let px = |g: &ModelGraph| {
            let s = &g.tap_layer(LAST_CONV_TAP).unwrap().out_shape;
            s[1] * s[2]
        };
        assert_eq!(px(&v), 4 * px(&r));
    }

    #[test]
    fn has_addition_skips_and_projections() {
        let g = build_reference_net(&ReferenceConfig::default()).unwrap();
        assert_eq!(g.count(|k| matches!(k, crate::model::LayerKind::AddSkip)), 5);
        assert!(g.params.iter().any(|p| p.name.ends_with("proj.weight")));
        assert!(g.has_gap_dense_head());
    }

    #[test]
    fn rejects_input_not_divisible_by_32() {
        let cfg = ReferenceConfig {
            input_size: 176,
            ..ReferenceConfig::default()
        };
        assert!(build_reference_net(&cfg).is_err());
    }
}
