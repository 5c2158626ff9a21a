use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{LayerKind, ModelGraph, ParamId, ParamKind};
use crate::autograd::{Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::ops::{Mode, MovingStats, Padding};
use crate::optim::OptimizerState;
use crate::tensor::{Element, Tensor};
use crate::weights;

/// Record name holding the number of train-mode BN updates in a weight file.
pub const BN_UPDATES_RECORD: &str = "session.bn_updates";

/// Mutable weights and BN statistics for one graph.
#[derive(Clone, Debug)]
pub struct Session<T: Element = f32> {
    graph: Arc<ModelGraph>,
    params: Vec<Tensor<T>>,
    bn_updates: u64,
}

/// A recorded forward pass.
pub struct Forward<T: Element = f32> {
    pub tape: Tape<T>,
    pub logits: Var,
    /// Output variable of every graph layer, indexed like `ModelGraph::layers`.
    pub layers: Vec<Var>,
    pub taps: BTreeMap<String, Var>,
    probs: Var,
}

impl<T: Element> Forward<T> {
    pub fn probs(&self) -> &[T] {
        self.tape.value(self.probs).data()
    }

    pub fn logit_values(&self) -> &[T] {
        self.tape.value(self.logits).data()
    }

    pub fn tap(&self, name: &str) -> Option<&Tensor<T>> {
        self.taps.get(name).map(|&v| self.tape.value(v))
    }

    pub fn tap_var(&self, name: &str) -> Option<Var> {
        self.taps.get(name).copied()
    }

    /// Appends the mean BCE loss and returns it together with its node.
    pub fn bce_loss(&mut self, labels: &[T]) -> Result<(T, Var)> {
        let n = self.tape.value(self.logits).shape()[0];
        let labels = Tensor::new([n, 1], labels.to_vec())?;
        let (_, loss) = self.tape.sigmoid_bce(self.logits, &labels)?;
        Ok((self.tape.value(loss).data()[0], loss))
    }
}

impl<T: Element> Session<T> {
    /// Fresh session: fan-in-scaled normal weights, zero biases, gamma 1,
    /// beta 0, moving mean 0 and moving variance 1.
    pub fn new(graph: Arc<ModelGraph>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = graph
            .params
            .iter()
            .map(|p| match p.kind {
                ParamKind::Weight => {
                    let std = (2.0 / p.fan_in.max(1) as f64).sqrt();
                    Tensor::randn(p.shape.clone(), std, &mut rng)
                }
                ParamKind::Gamma | ParamKind::MovingVariance => Tensor::ones(p.shape.clone()),
                ParamKind::Bias | ParamKind::Beta | ParamKind::MovingMean => {
                    Tensor::zeros(p.shape.clone())
                }
            })
            .collect();
        Session {
            graph,
            params,
            bn_updates: 0,
        }
    }

    pub fn graph(&self) -> &Arc<ModelGraph> {
        &self.graph
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id]
    }

    pub fn bn_updates(&self) -> u64 {
        self.bn_updates
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        (0..self.params.len())
            .filter(|&i| self.graph.params[i].kind.trainable())
            .collect()
    }

    /// Checks `input` is `[N, C, S, S]` for the graph's channels and size.
    pub fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let g = &self.graph;
        let expect = [g.input_channels, g.input_size, g.input_size];
        if input.rank() != 4 || input.shape()[1..] != expect || input.shape()[0] == 0 {
            return Err(shape_err!(
                "model {} expects input [N, {}, {}, {}], got {:?}",
                g.arch,
                expect[0],
                expect[1],
                expect[2],
                input.shape()
            ));
        }
        Ok(())
    }

    /// Runs the graph on `input`, recording every op on a fresh tape.
    /// Train mode updates the BN moving statistics.
    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Forward<T>> {
        self.check_input(input)?;
        let graph = Arc::clone(&self.graph);
        let trained = self.bn_updates > 0;
        let mut tape = Tape::new();
        let mut vars: Vec<Var> = Vec::with_capacity(graph.layers.len());
        let mut param_vars: BTreeMap<ParamId, Var> = BTreeMap::new();
        let mut pv = |tape: &mut Tape<T>, params: &[Tensor<T>], id: ParamId| -> Var {
            *param_vars
                .entry(id)
                .or_insert_with(|| tape.param(params[id].clone(), id))
        };
        for layer in &graph.layers {
            let inp = |k: usize| vars[layer.inputs[k]];
            let v = match layer.kind {
                LayerKind::Input => tape.leaf(input.clone()),
                LayerKind::Conv { weight, bias, .. } => {
                    let w = pv(&mut tape, &self.params, weight);
                    let b = pv(&mut tape, &self.params, bias);
                    tape.conv2d(inp(0), w, Some(b), 1, Padding::Same)?
                }
                LayerKind::BatchNorm {
                    gamma,
                    beta,
                    mean,
                    variance,
                } => {
                    let g = pv(&mut tape, &self.params, gamma);
                    let b = pv(&mut tape, &self.params, beta);
                    let (m, var) = pair_mut(&mut self.params, mean, variance);
                    let stats = MovingStats {
                        mean: m.data_mut(),
                        variance: var.data_mut(),
                        momentum: graph.bn.momentum,
                        epsilon: graph.bn.epsilon,
                    };
                    tape.batch_norm(inp(0), g, b, stats, mode, trained)?
                }
                LayerKind::Relu => tape.relu(inp(0))?,
                LayerKind::MaxPool { pool } => tape.max_pool(inp(0), pool)?,
                LayerKind::ConcatSkip => tape.concat(inp(0), inp(1))?,
                LayerKind::AddSkip => tape.add(inp(0), inp(1))?,
                LayerKind::GlobalPool { mode } => tape.global_pool(inp(0), mode)?,
                LayerKind::Dense { weight, bias, .. } => {
                    let w = pv(&mut tape, &self.params, weight);
                    let b = pv(&mut tape, &self.params, bias);
                    tape.dense(inp(0), w, b)?
                }
                LayerKind::Sigmoid => tape.sigmoid(inp(0))?,
            };
            vars.push(v);
        }
        if mode == Mode::Train {
            self.bn_updates += 1;
        }
        let taps = graph
            .taps
            .iter()
            .map(|(name, &i)| (name.clone(), vars[i]))
            .collect();
        let logits = vars[graph.logit_layer];
        let probs = *vars.last().expect("graph has layers");
        Ok(Forward {
            tape,
            logits,
            layers: vars,
            taps,
            probs,
        })
    }

    /// Infer-mode probabilities, one per sample.
    pub fn predict(&mut self, input: &Tensor<T>) -> Result<Vec<T>> {
        Ok(self.forward(input, Mode::Infer)?.probs().to_vec())
    }

    /// Infer-mode probabilities and copies of every tap.
    pub fn forward_with_taps(
        &mut self,
        input: &Tensor<T>,
        mode: Mode,
    ) -> Result<(Vec<T>, BTreeMap<String, Tensor<T>>)> {
        let fwd = self.forward(input, mode)?;
        let taps = fwd
            .taps
            .iter()
            .map(|(k, &v)| (k.clone(), fwd.tape.value(v).clone()))
            .collect();
        Ok((fwd.probs().to_vec(), taps))
    }

    /// One optimizer update of every trainable parameter.
    pub fn apply(&mut self, opt: &mut OptimizerState<T>, grads: &BTreeMap<ParamId, Tensor<T>>) -> Result<()> {
        let ids = self.trainable_ids();
        let mut refs: Vec<&mut Tensor<T>> = self
            .params
            .iter_mut()
            .enumerate()
            .filter(|(i, _)| ids.binary_search(i).is_ok())
            .map(|(_, p)| p)
            .collect();
        opt.step(&mut refs, &ids, grads)
    }

    /// Named tensors in registry order followed by the BN update counter.
    pub fn to_entries(&self) -> Vec<(String, Tensor<T>)> {
        let mut out: Vec<(String, Tensor<T>)> = self
            .graph
            .params
            .iter()
            .zip(&self.params)
            .map(|(spec, t)| (spec.name.clone(), t.clone()))
            .collect();
        out.push((
            BN_UPDATES_RECORD.into(),
            Tensor::scalar(T::from_f64_lossy(self.bn_updates as f64)),
        ));
        out
    }

    /// Replaces all weights from `entries`; every registry name must be present with its shape.
    pub fn load_entries(&mut self, entries: Vec<(String, Tensor<T>)>, path: &Path) -> Result<()> {
        let mut by_name: BTreeMap<String, Tensor<T>> = entries.into_iter().collect();
        let mut params = Vec::with_capacity(self.params.len());
        for spec in &self.graph.params {
            let t = by_name.remove(&spec.name).ok_or_else(|| {
                Error::format(path, format!("missing record {} for model {}", spec.name, self.graph.arch))
            })?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::format(
                    path,
                    format!("record {} has shape {:?}, expected {:?}", spec.name, t.shape(), spec.shape),
                ));
            }
            params.push(t);
        }
        let updates = by_name
            .remove(BN_UPDATES_RECORD)
            .and_then(|t| t.data().first().and_then(|v| v.to_f64()))
            .unwrap_or(0.0);
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::format(path, format!("unexpected record {extra}")));
        }
        self.params = params;
        self.bn_updates = updates as u64;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        weights::save(path, &self.to_entries())
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        let entries = weights::load(path)?;
        self.load_entries(entries, path)
    }
}

fn pair_mut<T>(v: &mut [T], a: usize, b: usize) -> (&mut T, &mut T) {
    assert!(a < b, "moving mean is registered before moving variance");
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_conv_block, build_reference_net, build_vdcnet, ReferenceConfig, VdcNetConfig};
    use rand::Rng;

    fn tiny_vdcnet(size: usize) -> Arc<ModelGraph> {
        let cfg = VdcNetConfig {
            input_size: size,
            width_multiplier: 1.0 / 64.0,
            ..VdcNetConfig::default()
        };
        Arc::new(build_vdcnet(&cfg).unwrap())
    }

    fn random_input(shape: [usize; 4], seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random::<f32>())
    }

    #[test]
    fn probabilities_in_open_unit_interval() {
        let mut s = Session::<f32>::new(tiny_vdcnet(32), 1);
        let p = s.predict(&random_input([3, 3, 32, 32], 2)).unwrap();
        assert_eq!(p.len(), 3);
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn infer_is_deterministic_and_leaves_stats() {
        let mut s = Session::<f32>::new(tiny_vdcnet(32), 1);
        let x = random_input([2, 3, 32, 32], 3);
        let before = s.params().to_vec();
        let a = s.predict(&x).unwrap();
        let b = s.predict(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(s.params(), before.as_slice());
        s.forward(&x, Mode::Train).unwrap();
        assert_ne!(s.params(), before.as_slice());
        assert_eq!(s.bn_updates(), 1);
    }

    #[test]
    fn wrong_input_shape() {
        let mut s = Session::<f32>::new(tiny_vdcnet(32), 1);
        let err = s.predict(&random_input([1, 3, 16, 16], 0)).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn zero_conv_weights_pass_input_through_concat() {
        let g = Arc::new(build_conv_block(4, 8, [2, 2, 3], false).unwrap());
        let mut s = Session::<f64>::new(Arc::clone(&g), 5);
        for (i, spec) in g.params.iter().enumerate() {
            if spec.kind == ParamKind::Weight {
                s.param_mut(i).data_mut().fill(0.0);
            }
        }
        let x = random_input([2, 4, 8, 8], 9).cast::<f64>();
        let fwd = s.forward(&x, Mode::Infer).unwrap();
        let out = fwd.tape.value(*fwd.layers.last().unwrap());
        assert_eq!(out.shape(), &[2, 7, 8, 8]);
        for n in 0..2 {
            let base = n * 7 * 64;
            assert_eq!(&out.data()[base..base + 4 * 64], &x.data()[n * 256..(n + 1) * 256]);
            assert!(out.data()[base + 4 * 64..base + 7 * 64].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn save_load_reproduces_outputs() {
        let g = Arc::new(
            build_reference_net(&ReferenceConfig {
                input_size: 64,
                width_multiplier: 0.125,
                ..ReferenceConfig::default()
            })
            .unwrap(),
        );
        let mut s = Session::<f32>::new(Arc::clone(&g), 11);
        let x = random_input([2, 3, 64, 64], 4);
        s.forward(&x, Mode::Train).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.vigw");
        s.save(&path).unwrap();
        let mut t = Session::<f32>::new(g, 999);
        t.load(&path).unwrap();
        assert_eq!(t.bn_updates(), 1);
        assert_eq!(s.predict(&x).unwrap(), t.predict(&x).unwrap());
    }

    #[test]
    fn load_rejects_other_architecture() {
        let a = Session::<f32>::new(tiny_vdcnet(32), 1);
        let mut b = Session::<f32>::new(
            Arc::new(
                build_reference_net(&ReferenceConfig {
                    input_size: 32,
                    width_multiplier: 0.125,
                    ..ReferenceConfig::default()
                })
                .unwrap(),
            ),
            1,
        );
        let err = b.load_entries(a.to_entries(), Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn tap_shapes() {
        let mut s = Session::<f32>::new(tiny_vdcnet(64), 1);
        let (_, taps) = s.forward_with_taps(&random_input([2, 3, 64, 64], 1), Mode::Infer).unwrap();
        assert_eq!(taps["last_conv"].shape(), &[2, 64, 4, 4]);
    }
}
