use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::{NUM_ACTIONS, OBS_DIM};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Shape of the shared-trunk actor-critic network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub actions: usize,
}

impl Default for Arch {
    fn default() -> Self {
        Self {
            input: OBS_DIM,
            hidden: vec![64, 64],
            actions: NUM_ACTIONS,
        }
    }
}

impl Arch {
    /// `(out, in)` of every layer: hidden layers, then policy head, then
    /// value head.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden.len() + 2);
        let mut fan_in = self.input;
        for &h in &self.hidden {
            shapes.push((h, fan_in));
            fan_in = h;
        }
        shapes.push((self.actions, fan_in));
        shapes.push((1, fan_in));
        shapes
    }

    fn trunk_width(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.input)
    }
}

/// Dense layer with a row-major `out × in` weight matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    #[serde(skip)]
    rows: usize,
    #[serde(skip)]
    cols: usize,
}

impl Layer {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            w: vec![0.0; rows * cols],
            b: vec![0.0; rows],
            rows,
            cols,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    fn affine(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, &b)) in out.iter_mut().zip(self.w.chunks_exact(self.cols).zip(&self.b)) {
            *o = b + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
        }
    }
}

/// Parameters of the policy/value network. The same type doubles as the
/// gradient container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub arch: Arch,
    pub layers: Vec<Layer>,
    pub version: u32,
}

/// Activations recorded by [`PolicyParams::forward_into`].
#[derive(Clone, Debug, Default)]
pub struct ForwardCache {
    input: Vec<f64>,
    hidden: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub value: f64,
    // Backward scratch.
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl ForwardCache {
    pub fn new(arch: &Arch) -> Self {
        let widest = arch.hidden.iter().copied().max().unwrap_or(0).max(arch.input);
        Self {
            input: vec![0.0; arch.input],
            hidden: arch.hidden.iter().map(|&h| vec![0.0; h]).collect(),
            logits: vec![0.0; arch.actions],
            value: 0.0,
            delta: vec![0.0; widest],
            delta_prev: vec![0.0; widest],
        }
    }

    fn matches(&self, arch: &Arch) -> bool {
        self.input.len() == arch.input
            && self.logits.len() == arch.actions
            && self.hidden.len() == arch.hidden.len()
            && self.hidden.iter().zip(&arch.hidden).all(|(a, &h)| a.len() == h)
    }
}

impl PolicyParams {
    pub fn zeros(arch: Arch) -> Self {
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(r, c)| Layer::zeros(r, c))
            .collect();
        Self {
            arch,
            layers,
            version: CHECKPOINT_VERSION,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.arch.clone())
    }

    /// Orthogonal weights (gain √2 for hidden layers, 0.01 for the policy
    /// head, 1 for the value head) and zero biases.
    pub fn init_orthogonal<R: Rng + ?Sized>(arch: Arch, rng: &mut R) -> Self {
        let mut p = Self::zeros(arch);
        let n = p.layers.len();
        for (k, layer) in p.layers.iter_mut().enumerate() {
            let gain = if k + 2 < n {
                std::f64::consts::SQRT_2
            } else if k + 2 == n {
                0.01
            } else {
                1.0
            };
            layer.w = orthogonal(layer.rows, layer.cols, gain, rng);
        }
        p
    }

    /// Gaussian weights and biases of standard deviation `scale`.
    pub fn init_gaussian<R: Rng + ?Sized>(arch: Arch, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(arch);
        for t in p.tensors_mut() {
            for x in t.iter_mut() {
                *x = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        p
    }

    pub fn hidden_layers(&self) -> &[Layer] {
        &self.layers[..self.layers.len() - 2]
    }

    pub fn policy_head(&self) -> &Layer {
        &self.layers[self.layers.len() - 2]
    }

    pub fn value_head(&self) -> &Layer {
        &self.layers[self.layers.len() - 1]
    }

    /// Every weight and bias vector, in checkpoint order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.w.as_slice(), l.b.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.w.as_mut_slice(), l.b.as_mut_slice()])
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn fill(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.fill(value);
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &PolicyParams, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    fn check_shapes(&self) -> Result<()> {
        let shapes = self.arch.layer_shapes();
        if shapes.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "expected {} layers, found {}",
                shapes.len(),
                self.layers.len()
            )));
        }
        for (k, ((r, c), l)) in shapes.iter().zip(&self.layers).enumerate() {
            if l.w.len() != r * c || l.b.len() != *r {
                return Err(Error::Shape(format!(
                    "layer {k}: expected {r}x{c} weights and {r} biases, found {} and {}",
                    l.w.len(),
                    l.b.len()
                )));
            }
        }
        Ok(())
    }

    fn restore_dims(&mut self) {
        for ((r, c), l) in self.arch.layer_shapes().into_iter().zip(&mut self.layers) {
            l.rows = r;
            l.cols = c;
        }
    }

    /// Runs the network, writing activations into `cache`.
    pub fn forward_into(&self, obs: &[f64], cache: &mut ForwardCache) -> Result<()> {
        if obs.len() != self.arch.input {
            return Err(Error::Shape(format!(
                "observation has {} elements, network expects {}",
                obs.len(),
                self.arch.input
            )));
        }
        if !cache.matches(&self.arch) {
            *cache = ForwardCache::new(&self.arch);
        }
        cache.input.copy_from_slice(obs);
        let n_hidden = self.arch.hidden.len();
        for k in 0..n_hidden {
            let (before, rest) = cache.hidden.split_at_mut(k);
            let x: &[f64] = if k == 0 { &cache.input } else { &before[k - 1] };
            let out = &mut rest[0];
            self.layers[k].affine(x, out);
            for v in out.iter_mut() {
                *v = v.tanh();
            }
        }
        let trunk: &[f64] = cache.hidden.last().map_or(&cache.input, |h| h.as_slice());
        self.policy_head().affine(trunk, &mut cache.logits);
        let mut v = [0.0];
        self.value_head().affine(trunk, &mut v);
        cache.value = v[0];
        Ok(())
    }

    /// Convenience forward returning `(logits, value, cache)`.
    pub fn forward(&self, obs: &[f64]) -> Result<(Vec<f64>, f64, ForwardCache)> {
        let mut cache = ForwardCache::new(&self.arch);
        self.forward_into(obs, &mut cache)?;
        Ok((cache.logits.clone(), cache.value, cache))
    }

    /// Accumulates into `grads` the gradient of a scalar loss whose partial
    /// derivatives with respect to the logits and the value are given.
    pub fn backward_into(
        &self,
        cache: &mut ForwardCache,
        grad_logits: &[f64],
        grad_value: f64,
        grads: &mut PolicyParams,
    ) -> Result<()> {
        if !cache.matches(&self.arch) || grads.arch != self.arch {
            return Err(Error::Shape("cache or gradient does not match network".into()));
        }
        if grad_logits.len() != self.arch.actions {
            return Err(Error::Shape(format!(
                "expected {} logit gradients, found {}",
                self.arch.actions,
                grad_logits.len()
            )));
        }
        let n = self.layers.len();
        let width = self.arch.trunk_width();
        let ForwardCache {
            input,
            hidden,
            delta,
            delta_prev,
            ..
        } = cache;
        let trunk: &[f64] = hidden.last().map_or(input.as_slice(), |h| h.as_slice());

        // Heads: accumulate weight grads and the trunk gradient.
        let dtrunk = &mut delta[..width];
        dtrunk.fill(0.0);
        {
            let head = &self.layers[n - 2];
            let g = &mut grads.layers[n - 2];
            for (o, &go) in grad_logits.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                g.b[o] += go;
                let row = o * width;
                for i in 0..width {
                    g.w[row + i] += go * trunk[i];
                    dtrunk[i] += go * head.w[row + i];
                }
            }
            let vh = &self.layers[n - 1];
            let g = &mut grads.layers[n - 1];
            if grad_value != 0.0 {
                g.b[0] += grad_value;
                for i in 0..width {
                    g.w[i] += grad_value * trunk[i];
                    dtrunk[i] += grad_value * vh.w[i];
                }
            }
        }

        // Hidden layers, last to first.
        for k in (0..self.arch.hidden.len()).rev() {
            let out = &hidden[k];
            let x: &[f64] = if k == 0 { input } else { &hidden[k - 1] };
            let layer = &self.layers[k];
            let (rows, cols) = (layer.rows, layer.cols);
            // Through tanh.
            for (d, &a) in delta[..rows].iter_mut().zip(out.iter()) {
                *d *= 1.0 - a * a;
            }
            let g = &mut grads.layers[k];
            delta_prev[..cols].fill(0.0);
            for o in 0..rows {
                let d = delta[o];
                g.b[o] += d;
                let wrow = &layer.w[o * cols..(o + 1) * cols];
                let grow = &mut g.w[o * cols..(o + 1) * cols];
                for i in 0..cols {
                    grow[i] += d * x[i];
                    delta_prev[i] += d * wrow[i];
                }
            }
            std::mem::swap(delta, delta_prev);
        }
        Ok(())
    }

    /// Gradient of the loss whose output partials are given, as a fresh
    /// parameter-shaped value.
    pub fn backward(
        &self,
        cache: &mut ForwardCache,
        grad_logits: &[f64],
        grad_value: f64,
    ) -> Result<PolicyParams> {
        let mut g = self.zeros_like();
        self.backward_into(cache, grad_logits, grad_value, &mut g)?;
        Ok(g)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut p: PolicyParams = serde_json::from_str(text)?;
        if p.version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported checkpoint version {}",
                p.version
            )));
        }
        p.check_shapes()?;
        if !p.all_finite() {
            return Err(Error::NonFinite("checkpoint parameters".into()));
        }
        p.restore_dims();
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&crate::io::read_to_string(path)?)
    }
}

/// `rows × cols` matrix with orthonormal rows or columns (whichever is
/// fewer), scaled by `gain`.
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    // Columns of a tall Gaussian matrix, orthonormalized by modified
    // Gram–Schmidt.
    let mut q: Vec<Vec<f64>> = (0..short)
        .map(|_| (0..tall).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    for j in 0..short {
        for k in 0..j {
            let dot: f64 = q[j].iter().zip(&q[k]).map(|(a, b)| a * b).sum();
            let (head, tail) = q.split_at_mut(j);
            for (a, b) in tail[0].iter_mut().zip(&head[k]) {
                *a -= dot * b;
            }
        }
        let norm = q[j].iter().map(|a| a * a).sum::<f64>().sqrt();
        for a in q[j].iter_mut() {
            *a /= norm;
        }
    }
    let mut w = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            w[r * cols + c] = gain * if rows >= cols { q[c][r] } else { q[r][c] };
        }
    }
    w
}
