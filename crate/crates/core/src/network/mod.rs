//! Fully connected Q-network with an optional dueling head, hand-written
//! forward and reverse passes, Adam, global-norm clipping, immutable parameter
//! snapshots and checkpoint files.
//!
//! All parameters live in one flat vector. Each dense layer stores its weight
//! matrix input-major (`in x out`, so `w[i, o]` at `i * out + o`) followed by
//! its bias.

mod checkpoint;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use optim::{clip_global_norm, global_norm, huber, huber_grad, AdamConfig, AdamState};

use std::sync::Arc;

use parking_lot::RwLock;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    /// ReLU hidden layer widths; empty gives a linear (tabular on one-hot input) model.
    pub hidden: Vec<usize>,
    pub n_actions: usize,
    /// Split the head into value and advantage streams, `Q = V + A - mean(A)`.
    pub dueling: bool,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.n_actions == 0 || self.hidden.contains(&0) {
            return Err(Error::invalid(format!("degenerate architecture {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Dense {
    inputs: usize,
    outputs: usize,
    offset: usize,
}

impl Dense {
    fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.inputs * self.outputs
    }

    fn bias(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.inputs * self.outputs;
        start..start + self.outputs
    }

    fn len(&self) -> usize {
        (self.inputs + 1) * self.outputs
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    hidden: Vec<Dense>,
    /// Output layer, or the advantage stream when dueling.
    head: Dense,
    value: Option<Dense>,
    len: usize,
}

impl Layout {
    fn new(arch: &Architecture) -> Self {
        let mut offset = 0;
        let mut place = |inputs, outputs| {
            let d = Dense { inputs, outputs, offset };
            offset += d.len();
            d
        };
        let mut width = arch.input_dim;
        let mut hidden = Vec::with_capacity(arch.hidden.len());
        for &h in &arch.hidden {
            hidden.push(place(width, h));
            width = h;
        }
        let head = place(width, arch.n_actions);
        let value = arch.dueling.then(|| place(width, 1));
        Self {
            hidden,
            head,
            value,
            len: offset,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    arch: Architecture,
    layout: Layout,
    params: Vec<T>,
}

/// Activations kept by [`Network::forward_batch`] for the reverse pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    batch: usize,
    /// `activations[0]` is the input, `activations[l + 1]` the output of hidden layer `l`.
    activations: Vec<Vec<T>>,
    q: Vec<T>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// All Q-values, row-major `batch x n_actions`.
    pub fn q_values(&self) -> &[T] {
        &self.q
    }

    pub fn q_row(&self, i: usize) -> &[T] {
        let n = self.q.len() / self.batch.max(1);
        &self.q[i * n..(i + 1) * n]
    }
}

// four independent partial sums so the loop vectorizes
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            lanes[k] = lanes[k] + x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail = tail + *x * *y;
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

// out = b + sum_i x[i] w[i, :], skipping zero inputs (one-hot features, dead ReLUs)
fn dense_forward<T: Scalar>(params: &[T], layer: &Dense, x: &[T], out: &mut [T]) {
    out.copy_from_slice(&params[layer.bias()]);
    for (&xi, col) in x.iter().zip(params[layer.weights()].chunks_exact(layer.outputs)) {
        if xi != T::zero() {
            for (acc, &w) in out.iter_mut().zip(col) {
                *acc = *acc + w * xi;
            }
        }
    }
}

// accumulate dW += x (x) d, db += d, and optionally dx = W d. dx is left 0
// where x is 0: every caller feeds x from a ReLU, which gates those entries.
fn dense_backward<T: Scalar>(params: &[T], layer: &Dense, x: &[T], d: &[T], grads: &mut [T], dx: Option<&mut [T]>) {
    let wr = layer.weights();
    for (&xi, g) in x.iter().zip(grads[wr.clone()].chunks_exact_mut(layer.outputs)) {
        if xi != T::zero() {
            for (g, &dout) in g.iter_mut().zip(d) {
                *g = *g + dout * xi;
            }
        }
    }
    for (g, &dout) in grads[layer.bias()].iter_mut().zip(d) {
        *g = *g + dout;
    }
    if let Some(dx) = dx {
        for ((acc, &xi), col) in dx.iter_mut().zip(x).zip(params[wr].chunks_exact(layer.outputs)) {
            *acc = if xi != T::zero() { dot(col, d) } else { T::zero() };
        }
    }
}

fn param_name(layout: &Layout, dueling: bool, index: usize) -> String {
    let named = layout
        .hidden
        .iter()
        .enumerate()
        .map(|(l, d)| (format!("hidden{l}"), *d))
        .chain(std::iter::once((
            if dueling { "advantage" } else { "output" }.to_string(),
            layout.head,
        )))
        .chain(layout.value.map(|d| ("value".to_string(), d)));
    for (name, d) in named {
        if d.weights().contains(&index) {
            let k = index - d.offset;
            return format!("{name}.weight[{},{}]", k % d.outputs, k / d.outputs);
        }
        if d.bias().contains(&index) {
            return format!("{name}.bias[{}]", index - d.bias().start);
        }
    }
    format!("param[{index}]")
}

impl<T: Scalar> Network<T> {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let params = vec![T::zero(); layout.len];
        Ok(Self { arch, layout, params })
    }

    /// He-uniform hidden layers, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` heads, zero biases.
    pub fn random(arch: Architecture, rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        let hidden = net.layout.hidden.clone();
        for layer in &hidden {
            let bound = (6.0 / layer.inputs as f64).sqrt();
            for p in &mut net.params[layer.weights()] {
                *p = T::of(rng.gen_range(-bound..=bound));
            }
        }
        let heads: Vec<Dense> = std::iter::once(net.layout.head).chain(net.layout.value).collect();
        for layer in heads {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for p in &mut net.params[layer.weights()] {
                *p = T::of(rng.gen_range(-bound..=bound));
            }
        }
        Ok(net)
    }

    pub fn from_params(arch: Architecture, params: Vec<T>) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        if params.len() != net.params.len() {
            return Err(Error::invalid(format!(
                "architecture needs {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn zero_grads(&self) -> Vec<T> {
        vec![T::zero(); self.params.len()]
    }

    /// Human-readable name of a flat parameter index, e.g. `hidden1.weight[3,7]`.
    pub fn param_name(&self, index: usize) -> String {
        param_name(&self.layout, self.arch.dueling, index)
    }

    /// Owned version of [`Network::param_name`], usable while the parameters are borrowed.
    pub fn namer(&self) -> impl Fn(usize) -> String {
        let layout = self.layout.clone();
        let dueling = self.arch.dueling;
        move |i| param_name(&layout, dueling, i)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Q-values for one feature vector.
    pub fn forward(&self, features: &[T]) -> Result<Vec<T>> {
        Ok(self.forward_batch(features, 1)?.q)
    }

    /// Forward pass over `batch` feature rows stored back to back.
    pub fn forward_batch(&self, inputs: &[T], batch: usize) -> Result<ForwardCache<T>> {
        if inputs.len() != batch * self.arch.input_dim {
            return Err(Error::invalid(format!(
                "expected {batch} x {} features, got {} values",
                self.arch.input_dim,
                inputs.len()
            )));
        }
        let mut activations = Vec::with_capacity(self.layout.hidden.len() + 1);
        activations.push(inputs.to_vec());
        for layer in &self.layout.hidden {
            let x = activations.last().expect("input is present");
            let mut out = vec![T::zero(); batch * layer.outputs];
            for i in 0..batch {
                let row = &mut out[i * layer.outputs..(i + 1) * layer.outputs];
                dense_forward(&self.params, layer, &x[i * layer.inputs..(i + 1) * layer.inputs], row);
                row.iter_mut().for_each(|v| *v = v.max(T::zero()));
            }
            activations.push(out);
        }
        let features = activations.last().expect("input is present");
        let width = self.layout.head.inputs;
        let n = self.arch.n_actions;
        let mut q = vec![T::zero(); batch * n];
        let mut value = [T::zero()];
        for i in 0..batch {
            let x = &features[i * width..(i + 1) * width];
            let row = &mut q[i * n..(i + 1) * n];
            dense_forward(&self.params, &self.layout.head, x, row);
            if let Some(v) = &self.layout.value {
                dense_forward(&self.params, v, x, &mut value);
                let mean = row.iter().copied().sum::<T>() / T::of(n as f64);
                row.iter_mut().for_each(|a| *a = value[0] + *a - mean);
            }
        }
        Ok(ForwardCache { batch, activations, q })
    }

    /// Accumulates into `grads` the gradient of `sum_{i,a} dq[i,a] * Q(x_i, a)`,
    /// i.e. back-propagates the loss gradient `dq` with respect to the outputs.
    pub fn backward(&self, cache: &ForwardCache<T>, dq: &[T], grads: &mut [T]) -> Result<()> {
        let n = self.arch.n_actions;
        if dq.len() != cache.batch * n || grads.len() != self.params.len() {
            return Err(Error::invalid("backward: gradient shapes do not match the network"));
        }
        let batch = cache.batch;
        let depth = self.layout.hidden.len();
        let width = self.layout.head.inputs;
        let features = &cache.activations[depth];
        let mut delta = vec![T::zero(); batch * width];
        let mut d_adv = vec![T::zero(); n];
        let mut scratch = vec![T::zero(); width];
        for i in 0..batch {
            let x = &features[i * width..(i + 1) * width];
            let d_out = &dq[i * n..(i + 1) * n];
            let dx = &mut delta[i * width..(i + 1) * width];
            match &self.layout.value {
                None => dense_backward(&self.params, &self.layout.head, x, d_out, grads, Some(dx)),
                Some(v) => {
                    // Q_a = V + A_a - mean(A): dV = sum dq, dA_a = dq_a - mean(dq)
                    let total: T = d_out.iter().copied().sum();
                    let mean = total / T::of(n as f64);
                    for (da, &d) in d_adv.iter_mut().zip(d_out) {
                        *da = d - mean;
                    }
                    dense_backward(&self.params, &self.layout.head, x, &d_adv, grads, Some(dx));
                    dense_backward(&self.params, v, x, &[total], grads, Some(&mut scratch));
                    for (a, b) in dx.iter_mut().zip(&scratch) {
                        *a = *a + *b;
                    }
                }
            }
        }
        for l in (0..depth).rev() {
            let layer = self.layout.hidden[l];
            let out = &cache.activations[l + 1];
            let x = &cache.activations[l];
            // ReLU gate
            for (d, &o) in delta.iter_mut().zip(out) {
                if o <= T::zero() {
                    *d = T::zero();
                }
            }
            let mut prev = if l > 0 { vec![T::zero(); batch * layer.inputs] } else { Vec::new() };
            for i in 0..batch {
                let d = &delta[i * layer.outputs..(i + 1) * layer.outputs];
                let xi = &x[i * layer.inputs..(i + 1) * layer.inputs];
                let dx = (l > 0).then(|| &mut prev[i * layer.inputs..(i + 1) * layer.inputs]);
                dense_backward(&self.params, &layer, xi, d, grads, dx);
            }
            delta = prev;
        }
        Ok(())
    }

    pub fn snapshot(&self, tag: u64) -> ParamSnapshot<T> {
        ParamSnapshot {
            tag,
            network: Arc::new(self.clone()),
        }
    }

    /// Same network with parameters converted to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            arch: self.arch.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|p| U::of(p.as_f64())).collect(),
        }
    }
}

/// Frozen copy of the parameters tagged with an iteration counter. Cloning
/// shares the same immutable network.
#[derive(Clone, Debug)]
pub struct ParamSnapshot<T> {
    tag: u64,
    network: Arc<Network<T>>,
}

impl<T: Scalar> ParamSnapshot<T> {
    pub fn tag(&self) -> u64 {
        self.tag
    }

    pub fn network(&self) -> &Network<T> {
        &self.network
    }

    pub fn forward(&self, features: &[T]) -> Result<Vec<T>> {
        self.network.forward(features)
    }
}

/// Latest published snapshot; publishing swaps the shared reference atomically.
#[derive(Clone, Debug)]
pub struct SnapshotCell<T>(Arc<RwLock<Arc<ParamSnapshot<T>>>>);

impl<T: Scalar> SnapshotCell<T> {
    pub fn new(snapshot: ParamSnapshot<T>) -> Self {
        Self(Arc::new(RwLock::new(Arc::new(snapshot))))
    }

    pub fn publish(&self, snapshot: ParamSnapshot<T>) {
        *self.0.write() = Arc::new(snapshot);
    }

    pub fn latest(&self) -> Arc<ParamSnapshot<T>> {
        self.0.read().clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn arch(hidden: Vec<usize>, dueling: bool) -> Architecture {
        Architecture {
            input_dim: 3,
            hidden,
            n_actions: 2,
            dueling,
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        for dueling in [false, true] {
            let net = Network::<f64>::zeros(arch(vec![4], dueling)).unwrap();
            assert_eq!(net.forward(&[1.0, -2.0, 0.5]).unwrap(), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn hand_set_two_layer_net() {
        // hidden: h0 = relu(x0 - x1), h1 = relu(2 x2 + 1); output q0 = h0 + h1, q1 = 3 h1 - 1
        let a = Architecture {
            input_dim: 3,
            hidden: vec![2],
            n_actions: 2,
            dueling: false,
        };
        let params = vec![
            1.0, 0.0, -1.0, 0.0, 0.0, 2.0, // hidden weights, w[i, o]
            0.0, 1.0, // hidden bias
            1.0, 0.0, 1.0, 3.0, // output weights
            0.0, -1.0, // output bias
        ];
        let net = Network::from_params(a, params).unwrap();
        // x = (2, 1, 0.5): h = (1, 2), q = (3, 5)
        assert_eq!(net.forward(&[2.0, 1.0, 0.5]).unwrap(), vec![3.0, 5.0]);
        // x = (0, 1, -1): h = (0, 0), q = (0, -1)
        assert_eq!(net.forward(&[0.0, 1.0, -1.0]).unwrap(), vec![0.0, -1.0]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let net = Network::<f64>::zeros(arch(vec![], false)).unwrap();
        assert!(net.forward(&[1.0]).is_err());
        assert!(Network::<f64>::from_params(arch(vec![], false), vec![0.0; 3]).is_err());
    }

    #[test]
    fn linear_layer_gradient_by_hand() {
        // single linear layer, loss = 0.5 (q0 - y)^2 with dq = q0 - y
        let a = Architecture {
            input_dim: 2,
            hidden: vec![],
            n_actions: 1,
            dueling: false,
        };
        let net = Network::from_params(a, vec![0.5, -1.0, 0.25]).unwrap();
        let x = [2.0, 3.0];
        let cache = net.forward_batch(&x, 1).unwrap();
        let q = cache.q_values()[0];
        assert_eq!(q, 0.5 * 2.0 - 3.0 + 0.25);
        let y = 1.0;
        let mut g = net.zero_grads();
        net.backward(&cache, &[q - y], &mut g).unwrap();
        let r = q - y;
        assert_eq!(g, vec![r * 2.0, r * 3.0, r]);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::<f64>::random(arch(vec![5, 4], true), &mut rng).unwrap();
        let cache = net.forward_batch(&[0.1, 0.2, 0.3, 1.0, 0.0, 0.0], 2).unwrap();
        let mut g = net.zero_grads();
        net.backward(&cache, &[0.0; 4], &mut g).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn snapshot_is_isolated_from_later_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Network::<f64>::random(arch(vec![4], false), &mut rng).unwrap();
        let snap = net.snapshot(3);
        let before = snap.forward(&[1.0, 0.0, 0.0]).unwrap();
        net.params_mut().iter_mut().for_each(|p| *p += 1.0);
        assert_eq!(snap.forward(&[1.0, 0.0, 0.0]).unwrap(), before);
        assert_eq!(snap.tag(), 3);
        let zero = Network::<f64>::zeros(arch(vec![4], true)).unwrap().snapshot(0);
        assert_eq!(zero.forward(&[1.0, 1.0, 1.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn snapshot_cell_swaps() {
        let net = Network::<f64>::zeros(arch(vec![], false)).unwrap();
        let cell = SnapshotCell::new(net.snapshot(0));
        let held = cell.latest();
        cell.publish(net.snapshot(1));
        assert_eq!(held.tag(), 0);
        assert_eq!(cell.latest().tag(), 1);
    }

    #[test]
    fn param_names() {
        let net = Network::<f64>::zeros(arch(vec![4], true)).unwrap();
        assert_eq!(net.param_name(0), "hidden0.weight[0,0]");
        assert_eq!(net.param_name(12), "hidden0.bias[0]");
        assert_eq!(net.param_name(16), "advantage.weight[0,0]");
        assert_eq!(net.param_name(net.num_params() - 1), "value.bias[0]");
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..100 {
            let dueling = trial % 2 == 0;
            let hidden = match trial % 3 {
                0 => vec![],
                1 => vec![6],
                _ => vec![5, 4],
            };
            let a = arch(hidden, dueling);
            let net = Network::<f64>::random(a, &mut rng).unwrap();
            let batch = 3;
            let x: Vec<f64> = (0..batch * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dq: Vec<f64> = (0..batch * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let loss = |n: &Network<f64>| -> f64 {
                let c = n.forward_batch(&x, batch).unwrap();
                c.q_values().iter().zip(&dq).map(|(q, d)| q * d).sum()
            };
            let cache = net.forward_batch(&x, batch).unwrap();
            let mut g = net.zero_grads();
            net.backward(&cache, &dq, &mut g).unwrap();
            let step = 1e-6;
            for i in 0..net.num_params() {
                let mut plus = net.clone();
                plus.params_mut()[i] += step;
                let mut minus = net.clone();
                minus.params_mut()[i] -= step;
                let (up, down, here) = (loss(&plus), loss(&minus), loss(&net));
                let (right, left) = ((up - here) / step, (here - down) / step);
                if (right - left).abs() > 1e-3 * right.abs().max(left.abs()).max(1.0) {
                    // ReLU kink: one-sided slopes differ
                    continue;
                }
                let numeric = (up - down) / (2.0 * step);
                let err = (numeric - g[i]).abs() / numeric.abs().max(g[i].abs()).max(1e-4);
                assert!(err < 1e-4, "trial {trial} {}: {numeric} vs {}", net.param_name(i), g[i]);
            }
        }
    }

    proptest! {
        #[test]
        fn advantage_shift_leaves_q_unchanged(c in -10.0f64..10.0, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut net = Network::<f64>::random(arch(vec![4], true), &mut rng).unwrap();
            let x = [0.3, -0.7, 1.1];
            let before = net.forward(&x).unwrap();
            let bias = net.layout.head.bias();
            net.params_mut()[bias].iter_mut().for_each(|b| *b += c);
            let after = net.forward(&x).unwrap();
            for (a, b) in before.iter().zip(&after) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
