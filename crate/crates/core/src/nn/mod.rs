//! Minimal dense ReLU classifier with exact softmax–cross-entropy backprop.
//!
//! The forward/backward kernels are generic over the scalar type: training
//! runs them at `f32`, the gradient-check oracle instantiates the same
//! formulas at `f64`. All batch loops are indexed with fixed per-element
//! accumulation order (see [`crate::exec`]), so results are bit-identical
//! across reruns and thread counts.

mod checkpoint;
mod gradcheck;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use gradcheck::{grad_check, GradCheckReport};
pub use train::{train, train_from_seed, EpochCtx, TrainConfig, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::{axpy, dot, Scalar};
use crate::rng::{self, Domain};

/// Layer-shape descriptor: a fully connected ReLU stack ending in a linear
/// layer with one logit per class. `hidden` may be empty, giving a linear
/// model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
}

impl Architecture {
    /// Default stack used by the testbed experiments: input -> 128 -> 64 -> C.
    pub fn mlp_default(input: usize, classes: usize) -> Self {
        Architecture {
            input,
            hidden: vec![128, 64],
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 {
            return Err(Error::invalid("architecture input dimension must be > 0"));
        }
        if self.classes < 2 {
            return Err(Error::invalid("architecture needs at least 2 classes"));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::invalid("hidden layer widths must be > 0"));
        }
        Ok(())
    }

    /// `(in_dim, out_dim)` per layer, in declaration order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.classes));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|(i, o)| i * o + o)
            .sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerParams<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub w: Vec<T>,
    pub b: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ParamSet<T> {
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn zeros(arch: &Architecture) -> Self {
        let layers = arch
            .layer_dims()
            .into_iter()
            .map(|(in_dim, out_dim)| LayerParams {
                in_dim,
                out_dim,
                w: vec![T::ZERO; in_dim * out_dim],
                b: vec![T::ZERO; out_dim],
            })
            .collect();
        ParamSet { layers }
    }

    pub fn flat_len(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Parameters in declaration order: layer 0 weights, layer 0 biases, ...
    pub fn flat_iter(&self) -> impl Iterator<Item = T> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()).copied())
    }

    pub fn get_flat(&self, mut idx: usize) -> T {
        for l in &self.layers {
            if idx < l.w.len() {
                return l.w[idx];
            }
            idx -= l.w.len();
            if idx < l.b.len() {
                return l.b[idx];
            }
            idx -= l.b.len();
        }
        panic!("flat index out of range");
    }

    pub fn set_flat(&mut self, mut idx: usize, v: T) {
        for l in &mut self.layers {
            if idx < l.w.len() {
                l.w[idx] = v;
                return;
            }
            idx -= l.w.len();
            if idx < l.b.len() {
                l.b[idx] = v;
                return;
            }
            idx -= l.b.len();
        }
        panic!("flat index out of range");
    }

    /// Squared L2 norm of all parameters, accumulated in 64-bit.
    pub fn sq_norm_f64(&self) -> f64 {
        let mut s = 0.0f64;
        for l in &self.layers {
            for &v in l.w.iter().chain(l.b.iter()) {
                let x = v.to_f64();
                s += x * x;
            }
        }
        s
    }
}

impl ParamSet<f32> {
    pub fn to_f64(&self) -> ParamSet<f64> {
        ParamSet {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    w: l.w.iter().map(|&v| v as f64).collect(),
                    b: l.b.iter().map(|&v| v as f64).collect(),
                })
                .collect(),
        }
    }
}

/// Probability matrix returned by [`Network::forward_probs`]: one row per
/// sample, one column per class.
#[derive(Debug, Clone)]
pub struct ProbMatrix {
    pub data: Vec<f32>,
    pub rows: usize,
    pub classes: usize,
}

impl ProbMatrix {
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.classes..(r + 1) * self.classes]
    }
}

/// Gradient tensors matching the network's parameters.
#[derive(Debug, Clone)]
pub struct Gradients(pub(crate) ParamSet<f32>);

impl Gradients {
    pub fn flat(&self) -> Vec<f32> {
        self.0.flat_iter().collect()
    }

    pub fn len(&self) -> usize {
        self.0.flat_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A dense classifier with fixed parameter count.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: Architecture,
    params: ParamSet<f32>,
}

impl Network {
    /// All-zero parameters; softmax output is uniform for any input.
    pub fn zeroed(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let params = ParamSet::zeros(&arch);
        Ok(Network { arch, params })
    }

    /// He-style uniform init scaled by fan-in, drawn from the seed's init
    /// substream. Biases start at zero.
    pub fn seeded(arch: Architecture, seed: u64) -> Result<Self> {
        use rand::Rng;
        arch.validate()?;
        let mut params = ParamSet::zeros(&arch);
        let mut rng = rng::stream(seed, Domain::Init, 0);
        for layer in &mut params.layers {
            let limit = (6.0 / layer.in_dim as f32).sqrt();
            for w in &mut layer.w {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(Network { arch, params })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn param_count(&self) -> usize {
        self.params.flat_len()
    }

    pub fn params_flat(&self) -> Vec<f32> {
        self.params.flat_iter().collect()
    }

    /// Bitwise parameter equality; the determinism contract is exact, not
    /// approximate.
    pub fn params_bitwise_eq(&self, other: &Network) -> bool {
        self.arch == other.arch
            && self
                .params
                .flat_iter()
                .zip(other.params.flat_iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub(crate) fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamSet<f32> {
        &mut self.params
    }

    pub(crate) fn from_parts(arch: Architecture, params: ParamSet<f32>) -> Self {
        Network { arch, params }
    }

    fn check_batch(&self, features: &[f32]) -> Result<usize> {
        if features.len() % self.arch.input != 0 {
            return Err(Error::ShapeMismatch(format!(
                "batch of {} values is not a multiple of input dim {}",
                features.len(),
                self.arch.input
            )));
        }
        Ok(features.len() / self.arch.input)
    }

    /// Softmax class probabilities for a flat row-major batch.
    pub fn forward_probs(&self, features: &[f32]) -> Result<ProbMatrix> {
        let rows = self.check_batch(features)?;
        let mut acts = new_activations(&self.params, rows);
        forward_into(&self.params, features, rows, &mut acts);
        let logits = acts.last().expect("at least one layer");
        let mut probs = vec![0.0f32; rows * self.arch.classes];
        softmax_rows(logits, self.arch.classes, &mut probs);
        Ok(ProbMatrix {
            data: probs,
            rows,
            classes: self.arch.classes,
        })
    }

    /// Mean cross-entropy plus `weight_decay/2 * ||w||^2`, and its exact
    /// gradient with respect to every parameter.
    pub fn loss_and_grads(
        &self,
        features: &[f32],
        labels: &[usize],
        weight_decay: f32,
    ) -> Result<(f64, Gradients)> {
        let rows = self.check_batch(features)?;
        if rows == 0 {
            return Err(Error::invalid("empty batch"));
        }
        check_labels(labels, rows, self.arch.classes)?;
        let mut scratch = BatchScratch::for_params(&self.params);
        let loss = loss_and_grads_into(
            &self.params,
            features,
            rows,
            labels,
            weight_decay,
            &mut scratch,
        );
        Ok((loss, Gradients(scratch.grads)))
    }
}

pub(crate) fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} rows",
            labels.len(),
            rows
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    Ok(())
}

pub(crate) fn new_activations<T: Scalar>(params: &ParamSet<T>, rows: usize) -> Vec<Vec<T>> {
    params
        .layers
        .iter()
        .map(|l| vec![T::ZERO; rows * l.out_dim])
        .collect()
}

/// Forward pass: fills post-ReLU activations per hidden layer and raw logits
/// as the final entry of `acts`.
pub(crate) fn forward_into<T: Scalar>(
    params: &ParamSet<T>,
    x: &[T],
    rows: usize,
    acts: &mut [Vec<T>],
) {
    let n_layers = params.layers.len();
    for l in 0..n_layers {
        let (before, rest) = acts.split_at_mut(l);
        let input: &[T] = if l == 0 { x } else { &before[l - 1] };
        let layer = &params.layers[l];
        let out = &mut rest[0];
        debug_assert_eq!(out.len(), rows * layer.out_dim);
        let is_last = l + 1 == n_layers;
        let in_dim = layer.in_dim;
        exec::for_each_row(out, layer.out_dim, |r, out_row| {
            let xin = &input[r * in_dim..(r + 1) * in_dim];
            for (o, slot) in out_row.iter_mut().enumerate() {
                let z = dot(&layer.w[o * in_dim..(o + 1) * in_dim], xin) + layer.b[o];
                *slot = if is_last || z > T::ZERO { z } else { T::ZERO };
            }
        });
    }
}

/// Row-wise softmax with max subtraction.
pub(crate) fn softmax_rows<T: Scalar>(logits: &[T], classes: usize, probs: &mut [T]) {
    debug_assert_eq!(logits.len(), probs.len());
    exec::for_each_row(probs, classes, |r, prow| {
        let zrow = &logits[r * classes..(r + 1) * classes];
        let mut m = zrow[0];
        for &z in &zrow[1..] {
            if z > m {
                m = z;
            }
        }
        let mut sum = T::ZERO;
        for (p, &z) in prow.iter_mut().zip(zrow) {
            let e = (z - m).exp();
            *p = e;
            sum += e;
        }
        let inv = T::ONE / sum;
        for p in prow.iter_mut() {
            *p = *p * inv;
        }
    });
}

/// Mean cross-entropy over the batch, accumulated in 64-bit via the
/// log-sum-exp route (stable even when a probability underflows at `T`).
pub(crate) fn mean_ce_loss<T: Scalar>(
    logits: &[T],
    rows: usize,
    classes: usize,
    labels: &[usize],
) -> f64 {
    let row_losses = exec::map_indexed(rows, |r| {
        let zrow = &logits[r * classes..(r + 1) * classes];
        let mut m = f64::NEG_INFINITY;
        for &z in zrow {
            m = m.max(z.to_f64());
        }
        let mut sum = 0.0f64;
        for &z in zrow {
            sum += (z.to_f64() - m).exp();
        }
        m + sum.ln() - zrow[labels[r]].to_f64()
    });
    let mut total = 0.0f64;
    for l in row_losses {
        total += l;
    }
    total / rows as f64
}

pub(crate) struct BatchScratch<T> {
    pub acts: Vec<Vec<T>>,
    pub probs: Vec<T>,
    pub delta: Vec<T>,
    pub delta_prev: Vec<T>,
    pub grads: ParamSet<T>,
}

impl<T: Scalar> BatchScratch<T> {
    pub fn for_params(params: &ParamSet<T>) -> Self {
        BatchScratch {
            acts: Vec::new(),
            probs: Vec::new(),
            delta: Vec::new(),
            delta_prev: Vec::new(),
            grads: ParamSet {
                layers: params
                    .layers
                    .iter()
                    .map(|l| LayerParams {
                        in_dim: l.in_dim,
                        out_dim: l.out_dim,
                        w: vec![T::ZERO; l.w.len()],
                        b: vec![T::ZERO; l.b.len()],
                    })
                    .collect(),
            },
        }
    }

    fn prepare(&mut self, params: &ParamSet<T>, rows: usize) {
        if self.acts.len() != params.layers.len() {
            self.acts = new_activations(params, rows);
        } else {
            for (a, l) in self.acts.iter_mut().zip(&params.layers) {
                a.resize(rows * l.out_dim, T::ZERO);
            }
        }
        let classes = params.layers.last().expect("nonempty").out_dim;
        self.probs.resize(rows * classes, T::ZERO);
    }
}

/// Full step: forward, loss, and exact gradients of
/// `mean CE + weight_decay/2 * ||w||^2`. Gradients land in `scratch.grads`.
pub(crate) fn loss_and_grads_into<T: Scalar>(
    params: &ParamSet<T>,
    x: &[T],
    rows: usize,
    labels: &[usize],
    weight_decay: T,
    scratch: &mut BatchScratch<T>,
) -> f64 {
    scratch.prepare(params, rows);
    forward_into(params, x, rows, &mut scratch.acts);
    let classes = params.layers.last().expect("nonempty").out_dim;
    let logits = scratch.acts.last().expect("nonempty");
    softmax_rows(logits, classes, &mut scratch.probs);
    let ce = mean_ce_loss(logits, rows, classes, labels);
    let loss = ce + 0.5 * weight_decay.to_f64() * params.sq_norm_f64();
    backward_into(params, x, rows, labels, weight_decay, scratch);
    loss
}

fn backward_into<T: Scalar>(
    params: &ParamSet<T>,
    x: &[T],
    rows: usize,
    labels: &[usize],
    weight_decay: T,
    scratch: &mut BatchScratch<T>,
) {
    let n_layers = params.layers.len();
    let classes = params.layers[n_layers - 1].out_dim;

    // Delta at the logits: (p - onehot(y)) / rows.
    let inv = T::ONE / T::from_f32(rows as f32);
    scratch.delta.clear();
    scratch.delta.resize(rows * classes, T::ZERO);
    for r in 0..rows {
        let base = r * classes;
        for c in 0..classes {
            let target = if c == labels[r] { T::ONE } else { T::ZERO };
            scratch.delta[base + c] = (scratch.probs[base + c] - target) * inv;
        }
    }

    for l in (0..n_layers).rev() {
        let layer = &params.layers[l];
        let (in_dim, out_dim) = (layer.in_dim, layer.out_dim);
        let a_prev: &[T] = if l == 0 { x } else { &scratch.acts[l - 1] };
        let delta = &scratch.delta;

        // dW[o] = sum_r delta[r][o] * a_prev[r], batch order fixed.
        let gw = &mut scratch.grads.layers[l].w;
        exec::for_each_row(gw, in_dim, |o, dwrow| {
            for v in dwrow.iter_mut() {
                *v = T::ZERO;
            }
            for r in 0..rows {
                let d = delta[r * out_dim + o];
                if d != T::ZERO {
                    axpy(d, &a_prev[r * in_dim..(r + 1) * in_dim], dwrow);
                }
            }
        });

        let gb = &mut scratch.grads.layers[l].b;
        for (o, slot) in gb.iter_mut().enumerate() {
            let mut s = T::ZERO;
            for r in 0..rows {
                s += delta[r * out_dim + o];
            }
            *slot = s;
        }

        if l > 0 {
            // Backpropagate through the layer and the previous ReLU.
            scratch.delta_prev.clear();
            scratch.delta_prev.resize(rows * in_dim, T::ZERO);
            let w = &layer.w;
            exec::for_each_row(&mut scratch.delta_prev, in_dim, |r, drow| {
                for v in drow.iter_mut() {
                    *v = T::ZERO;
                }
                for o in 0..out_dim {
                    let d = delta[r * out_dim + o];
                    if d != T::ZERO {
                        axpy(d, &w[o * in_dim..(o + 1) * in_dim], drow);
                    }
                }
                let arow = &a_prev[r * in_dim..(r + 1) * in_dim];
                for (dv, &a) in drow.iter_mut().zip(arow) {
                    if !(a > T::ZERO) {
                        *dv = T::ZERO;
                    }
                }
            });
            std::mem::swap(&mut scratch.delta, &mut scratch.delta_prev);
        }
    }

    if weight_decay != T::ZERO {
        for (g, p) in scratch.grads.layers.iter_mut().zip(&params.layers) {
            axpy(weight_decay, &p.w, &mut g.w);
            axpy(weight_decay, &p.b, &mut g.b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_arch() -> Architecture {
        Architecture {
            input: 4,
            hidden: vec![5],
            classes: 10,
        }
    }

    #[test]
    fn zero_network_is_uniform() {
        let net = Network::zeroed(tiny_arch()).unwrap();
        let batch = vec![0.3f32; 4 * 7];
        let probs = net.forward_probs(&batch).unwrap();
        assert_eq!(probs.rows, 7);
        for r in 0..7 {
            for &p in probs.row(r) {
                assert!((p - 0.1).abs() < 1e-7, "expected uniform 0.1, got {p}");
            }
        }
    }

    #[test]
    fn softmax_is_stable_for_extreme_logits() {
        let mut logits = vec![0.0f32; 10];
        logits[0] = 1000.0;
        let mut probs = vec![0.0f32; 10];
        softmax_rows(&logits, 10, &mut probs);
        assert!(probs.iter().all(|p| p.is_finite()));
        assert!((probs[0] - 1.0).abs() < 1e-6);
        let sum: f32 = probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn random_net_rows_sum_to_one() {
        use rand::Rng;
        let arch = Architecture {
            input: 12,
            hidden: vec![9, 6],
            classes: 5,
        };
        let net = Network::seeded(arch, 99).unwrap();
        let mut rng = crate::rng::stream(3, Domain::Aux, 0);
        let batch: Vec<f32> = (0..12 * 64).map(|_| rng.random_range(-2.0..2.0)).collect();
        let probs = net.forward_probs(&batch).unwrap();
        for r in 0..64 {
            let sum: f32 = probs.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "row {r} sums to {sum}");
            assert!(probs.row(r).iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn uniform_probs_give_ln_c_loss() {
        let net = Network::zeroed(tiny_arch()).unwrap();
        let batch = vec![0.5f32; 4 * 3];
        let labels = vec![1usize, 9, 0];
        let (loss, _) = net.loss_and_grads(&batch, &labels, 0.0).unwrap();
        assert!((loss - 10.0f64.ln()).abs() < 1e-6, "loss {loss}");
    }

    #[test]
    fn near_onehot_probs_give_near_zero_loss() {
        // A linear "network" whose logits hugely favor the true class.
        let arch = Architecture {
            input: 3,
            hidden: vec![],
            classes: 3,
        };
        let mut net = Network::zeroed(arch).unwrap();
        // w = 50 * I: logit_c = 50 * x_c, inputs are one-hot rows.
        for c in 0..3 {
            net.params_mut().layers[0].w[c * 3 + c] = 50.0;
        }
        let batch = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let labels = vec![0usize, 1, 2];
        let (loss, _) = net.loss_and_grads(&batch, &labels, 0.0).unwrap();
        assert!(loss.abs() < 1e-6, "loss {loss}");
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let net = Network::zeroed(tiny_arch()).unwrap();
        let batch = vec![0.0f32; 4];
        let err = net.loss_and_grads(&batch, &[10], 0.0).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let net = Network::zeroed(tiny_arch()).unwrap();
        assert!(net.forward_probs(&vec![0.0f32; 6]).is_err());
    }

    #[test]
    fn weight_decay_enters_loss_and_grads() {
        let arch = Architecture {
            input: 2,
            hidden: vec![],
            classes: 2,
        };
        let mut net = Network::zeroed(arch).unwrap();
        net.params_mut().layers[0].w = vec![1.0, 0.0, 0.0, 1.0];
        let batch = vec![0.0f32; 2];
        let (l0, g0) = net.loss_and_grads(&batch, &[0], 0.0).unwrap();
        let (l1, g1) = net.loss_and_grads(&batch, &[0], 0.5).unwrap();
        // ||w||^2 = 2, so the decay term adds 0.5/2*2 = 0.5.
        assert!((l1 - l0 - 0.5).abs() < 1e-7);
        // Gradient for w[0] gains wd * w[0] = 0.5.
        assert!((g1.flat()[0] - g0.flat()[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn seeded_init_is_reproducible_and_seed_sensitive() {
        let a = Network::seeded(tiny_arch(), 1).unwrap();
        let b = Network::seeded(tiny_arch(), 1).unwrap();
        let c = Network::seeded(tiny_arch(), 2).unwrap();
        assert!(a.params_bitwise_eq(&b));
        assert!(!a.params_bitwise_eq(&c));
    }
}
