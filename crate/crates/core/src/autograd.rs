//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every op appends a node holding its output value and whatever it needs for
//! the backward pass. [`Tape::backward`] walks the nodes in reverse and returns
//! gradients for every node that (transitively) depends on a parameter or a
//! leaf created with [`Tape::leaf_with_grad`].

use std::collections::BTreeMap;

use crate::error::{shape_err, Error, Result};
use crate::ops::{self, BnCache, ConvGeometry, Mode, MovingStats, Padding, PoolMode};
use crate::tensor::{cst, finite_checks_enabled, Element, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Param(usize),
    Conv2d {
        x: Var,
        k: Var,
        b: Option<Var>,
        geom: ConvGeometry,
    },
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: BnCache<T>,
    },
    Relu(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Concat {
        a: Var,
        b: Var,
    },
    GlobalPool {
        x: Var,
        argmax: Option<Vec<u32>>,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Sigmoid(Var),
    SigmoidBce {
        logits: Var,
        probs: Vec<T>,
        labels: Vec<T>,
    },
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// A recorded forward computation.
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
    warnings: Vec<String>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Diagnostics raised during the forward pass (e.g. BN inference on untrained statistics).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Result<Var> {
        if finite_checks_enabled() {
            value.check_finite(&format!("tape node {}", self.nodes.len()))?;
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; no gradient is tracked for it.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input whose gradient is wanted (finite-difference checks, saliency).
    pub fn leaf_with_grad(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable parameter identified by `id` in the caller's registry.
    pub fn param(&mut self, value: Tensor<T>, id: usize) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Param(id),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let xv = self.value(x);
        let kv = self.value(kernel);
        let geom = ConvGeometry::new(xv.shape(), kv.shape(), stride, padding)?;
        let bdata = match bias {
            Some(b) => {
                let bv = self.value(b);
                if bv.shape() != [geom.filters] {
                    return Err(shape_err!("conv2d bias shape {:?}", bv.shape()));
                }
                Some(bv.data())
            }
            None => None,
        };
        let out = ops::conv2d_forward(&geom, xv.data(), kv.data(), bdata);
        let needs = self.needs(x) || self.needs(kernel) || bias.is_some_and(|b| self.needs(b));
        let value = Tensor::new(geom.output_shape(), out)?;
        self.push(
            value,
            Op::Conv2d {
                x,
                k: kernel,
                b: bias,
                geom,
            },
            needs,
        )
    }

    pub fn max_pool(&mut self, x: Var, pool: usize) -> Result<Var> {
        let xv = self.value(x);
        let (shape, out, argmax) = ops::maxpool_forward(xv.shape(), xv.data(), pool)?;
        let needs = self.needs(x);
        self.push(Tensor::new(shape, out)?, Op::MaxPool { x, argmax }, needs)
    }

    /// Batch normalization; train mode updates `stats` in place.
    ///
    /// `trained` tells whether `stats` has seen at least one train-mode update;
    /// inference on untrained statistics is recorded in [`Tape::warnings`].
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: MovingStats<'_, T>,
        mode: Mode,
        trained: bool,
    ) -> Result<Var> {
        let (y, cache, report) = ops::bn_forward(
            self.value(x).shape(),
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            stats,
            mode,
            trained,
        )?;
        if report.uninitialized_stats {
            let msg = format!(
                "batch norm at node {} ran inference on untrained moving statistics",
                self.nodes.len()
            );
            log::warn!("{msg}");
            self.warnings.push(msg);
        }
        let shape = self.value(x).shape().to_vec();
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(
            Tensor::new(shape, y)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
            },
            needs,
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = ops::relu(self.value(x));
        let needs = self.needs(x);
        self.push(v, Op::Relu(x), needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |p, q| p + q)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(v, Op::Add(a, b), needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |p, q| p * q)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(v, Op::Mul(a, b), needs)
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let v = self.value(x).map(|p| p * factor);
        let needs = self.needs(x);
        self.push(v, Op::Scale(x, factor), needs)
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = ops::concat_channels(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        self.push(v, Op::Concat { a, b }, needs)
    }

    pub fn global_pool(&mut self, x: Var, mode: PoolMode) -> Result<Var> {
        let xv = self.value(x);
        let (out, argmax) = ops::global_pool_forward(xv.shape(), xv.data(), mode)?;
        let shape = [xv.shape()[0], xv.shape()[1]];
        let needs = self.needs(x);
        self.push(Tensor::new(shape, out)?, Op::GlobalPool { x, argmax }, needs)
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let out = ops::dense_forward(xv.shape(), xv.data(), wv.shape(), wv.data(), bv.data())?;
        let shape = [xv.shape()[0], wv.shape()[1]];
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(Tensor::new(shape, out)?, Op::Dense { x, w, b }, needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let v = ops::sigmoid(self.value(x));
        let needs = self.needs(x);
        self.push(v, Op::Sigmoid(x), needs)
    }

    /// Mean binary cross-entropy of sigmoid(`logits`) against `labels`.
    ///
    /// Returns the probabilities and the scalar loss node. The backward pass
    /// uses the analytic `(p - y) / N`, also for clamped (saturated) samples.
    pub fn sigmoid_bce(&mut self, logits: Var, labels: &Tensor<T>) -> Result<(Tensor<T>, Var)> {
        let (probs, loss) = ops::sigmoid_bce(self.value(logits), labels)?;
        let needs = self.needs(logits);
        let var = self.push(
            Tensor::scalar(loss),
            Op::SigmoidBce {
                logits,
                probs: probs.data().to_vec(),
                labels: labels.data().to_vec(),
            },
            needs,
        )?;
        Ok((probs, var))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), needs)
    }

    /// Gradients of the scalar node `loss` with respect to every tracked node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::State(
                "backward called without a recorded forward pass".into(),
            ));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Argument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let seed_shape = self.nodes[loss.0].value.shape().to_vec();
        grads[loss.0] = Some(Tensor::ones(seed_shape));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else {
                continue;
            };
            self.propagate(node, &dy, &mut grads)?;
            grads[i] = Some(dy);
        }

        let mut params = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(id) = node.op {
                let g = grads[i]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape().to_vec()));
                match params.entry(id) {
                    std::collections::btree_map::Entry::Vacant(e) => {
                        e.insert(g);
                    }
                    std::collections::btree_map::Entry::Occupied(mut e) => {
                        e.get_mut().add_assign(&g)?;
                    }
                }
            }
        }
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, node: &Node<T>, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let mut acc = |v: Var, g: Tensor<T>| -> Result<()> {
            if !self.nodes[v.0].needs_grad {
                return Ok(());
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv2d { x, k, b, geom } => {
                let g = ops::conv2d_backward(
                    geom,
                    self.value(*x).data(),
                    self.value(*k).data(),
                    dy.data(),
                    self.needs(*x),
                    self.needs(*k),
                    b.is_some_and(|b| self.needs(b)),
                );
                if let Some(dx) = g.input {
                    acc(*x, Tensor::new(self.value(*x).shape().to_vec(), dx)?)?;
                }
                if let Some(dk) = g.kernel {
                    acc(*k, Tensor::new(self.value(*k).shape().to_vec(), dk)?)?;
                }
                if let (Some(b), Some(db)) = (b, g.bias) {
                    acc(*b, Tensor::new([geom.filters], db)?)?;
                }
            }
            Op::MaxPool { x, argmax } => {
                let xv = self.value(*x);
                let dx = ops::scatter_argmax(xv.len(), argmax, dy.data());
                acc(*x, Tensor::new(xv.shape().to_vec(), dx)?)?;
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
            } => {
                let xv = self.value(*x);
                let (dx, dg, db) =
                    ops::bn_backward(xv.shape(), cache, self.value(*gamma).data(), dy.data());
                let c = dg.len();
                acc(*x, Tensor::new(xv.shape().to_vec(), dx)?)?;
                acc(*gamma, Tensor::new([c], dg)?)?;
                acc(*beta, Tensor::new([c], db)?)?;
            }
            Op::Relu(x) => {
                let g = self
                    .value(*x)
                    .zip_map(dy, |v, d| if v > T::zero() { d } else { T::zero() })?;
                acc(*x, g)?;
            }
            Op::Add(a, b) => {
                acc(*a, dy.clone())?;
                acc(*b, dy.clone())?;
            }
            Op::Mul(a, b) => {
                acc(*a, dy.zip_map(self.value(*b), |d, q| d * q)?)?;
                acc(*b, dy.zip_map(self.value(*a), |d, p| d * p)?)?;
            }
            Op::Scale(x, f) => {
                let f = *f;
                acc(*x, dy.map(|d| d * f))?;
            }
            Op::Concat { a, b } => {
                let ca = self.value(*a).shape()[1];
                let (ga, gb) = ops::split_channels(dy, ca)?;
                acc(*a, ga)?;
                acc(*b, gb)?;
            }
            Op::GlobalPool { x, argmax } => {
                let xv = self.value(*x);
                let (_, _, h, w) = xv.dims4()?;
                let hw = h * w;
                let dx = match argmax {
                    Some(arg) => ops::scatter_argmax(xv.len(), arg, dy.data()),
                    None => {
                        let inv = cst::<T>(1.0 / hw as f64);
                        dy.data()
                            .iter()
                            .flat_map(|&d| std::iter::repeat_n(d * inv, hw))
                            .collect()
                    }
                };
                acc(*x, Tensor::new(xv.shape().to_vec(), dx)?)?;
            }
            Op::Dense { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, d) = xv.dims2()?;
                let u = wv.shape()[1];
                if self.needs(*x) {
                    let mut dx = vec![T::zero(); n * d];
                    T::gemm(n, u, d, T::one(), dy.data(), (u as isize, 1), wv.data(), (1, u as isize), T::zero(), &mut dx, (d as isize, 1));
                    acc(*x, Tensor::new([n, d], dx)?)?;
                }
                if self.needs(*w) {
                    let mut dw = vec![T::zero(); d * u];
                    T::gemm(d, n, u, T::one(), xv.data(), (1, d as isize), dy.data(), (u as isize, 1), T::zero(), &mut dw, (u as isize, 1));
                    acc(*w, Tensor::new([d, u], dw)?)?;
                }
                if self.needs(*b) {
                    let mut db = vec![T::zero(); u];
                    for row in dy.data().chunks_exact(u) {
                        for (s, &g) in db.iter_mut().zip(row) {
                            *s = *s + g;
                        }
                    }
                    acc(*b, Tensor::new([u], db)?)?;
                }
            }
            Op::Sigmoid(x) => {
                let g = node.value.zip_map(dy, |p, d| d * p * (T::one() - p))?;
                acc(*x, g)?;
            }
            Op::SigmoidBce {
                logits,
                probs,
                labels,
            } => {
                let d = dy.data()[0];
                let inv_n = cst::<T>(1.0 / probs.len().max(1) as f64);
                let g: Vec<T> = probs
                    .iter()
                    .zip(labels)
                    .map(|(&p, &y)| d * (p - y) * inv_n)
                    .collect();
                acc(*logits, Tensor::new(self.value(*logits).shape().to_vec(), g)?)?;
            }
            Op::Sum(x) => {
                let d = dy.data()[0];
                acc(*x, Tensor::full(self.value(*x).shape().to_vec(), d))?;
            }
        }
        Ok(())
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: BTreeMap<usize, Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient reaching node `v`, if any flowed there.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of parameter `id`, summed over every use; zero if unused by the loss.
    pub fn param(&self, id: usize) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    pub fn params(&self) -> &BTreeMap<usize, Tensor<T>> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<usize, Tensor<T>> {
        self.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::BatchNormState;

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf_with_grad(Tensor::from_fn([2, 3], |i| i as f64));
        let s = t.sum(x).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &Tensor::ones([2, 3]));
    }

    #[test]
    fn conv_sum_gradient_counts_covering_windows() {
        let (h, w) = (5, 6);
        let mut t = Tape::<f64>::new();
        let x = t.leaf_with_grad(Tensor::from_fn([1, 1, h, w], |i| (i as f64).sin()));
        let k = t.leaf(Tensor::ones([1, 1, 3, 3]));
        let y = t.conv2d(x, k, None, 1, Padding::Same).unwrap();
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        let gx = g.get(x).unwrap();
        // Counting oracle: number of output windows whose 3x3 footprint covers (r, c).
        for r in 0..h {
            for c in 0..w {
                let mut count = 0;
                for oy in 0..h as i64 {
                    for ox in 0..w as i64 {
                        if (oy - r as i64).abs() <= 1 && (ox - c as i64).abs() <= 1 {
                            count += 1;
                        }
                    }
                }
                assert_eq!(gx.data()[r * w + c], count as f64, "cell ({r},{c})");
            }
        }
    }

    #[test]
    fn unused_parameters_get_zero_gradient() {
        let mut t = Tape::<f64>::new();
        let a = t.param(Tensor::from_fn([3], |i| i as f64), 0);
        let b = t.param(Tensor::from_fn([3], |i| i as f64 * 2.0), 1);
        let _unused = t.scale(b, 3.0).unwrap();
        let s = t.sum(a).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.param(0).unwrap(), &Tensor::ones([3]));
        assert_eq!(g.param(1).unwrap(), &Tensor::zeros([3]));
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let t = Tape::<f64>::new();
        assert!(matches!(t.backward(Var(0)), Err(Error::State(_))));
    }

    #[test]
    fn backward_needs_scalar() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf_with_grad(Tensor::ones([2]));
        assert!(matches!(t.backward(x), Err(Error::Argument(_))));
    }

    #[test]
    fn reused_parameter_accumulates() {
        let mut t = Tape::<f64>::new();
        let a = t.param(Tensor::full([2], 1.5), 7);
        let a2 = t.param(Tensor::full([2], 1.5), 7);
        let m = t.mul(a, a2).unwrap();
        let s = t.sum(m).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.param(7).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn untrained_bn_inference_leaves_a_warning() {
        let mut t = Tape::<f32>::new();
        let mut st = BatchNormState::<f32>::new(1);
        let x = t.leaf(Tensor::ones([1, 1, 2, 2]));
        let g = t.param(Tensor::new([1], st.gamma.clone()).unwrap(), 0);
        let b = t.param(Tensor::new([1], st.beta.clone()).unwrap(), 1);
        let stats = MovingStats {
            mean: &mut st.moving_mean,
            variance: &mut st.moving_variance,
            momentum: 0.99,
            epsilon: 1e-3,
        };
        t.batch_norm(x, g, b, stats, Mode::Infer, false).unwrap();
        assert_eq!(t.warnings().len(), 1);
    }

    #[test]
    fn finite_checks_catch_nan() {
        crate::tensor::set_finite_checks(true);
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::new([1], vec![f64::INFINITY]).unwrap());
        let r = t.scale(x, 0.0);
        crate::tensor::set_finite_checks(false);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }
}
