//! Feedforward network with hand-written backpropagation, and an
//! adaptive-moment optimizer with global-norm gradient clipping.
//!
//! Parameters live in one flat vector, layer by layer: the weight matrix
//! (row-major, `out x in`) followed by the bias vector. Gradients use the
//! same layout.

use rand::Rng;

use crate::checkpoint::{Reader, Writer};
use crate::error::{Error, Result};

pub const CLIP_NORM: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Per-layer activations from a forward pass; `acts[0]` is the input and
/// `acts.last()` the output.
#[derive(Clone, Debug)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("non-empty trace")
    }
}

impl Mlp {
    /// Rectifier hidden layers, identity output, weights and biases uniform
    /// in `±1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0), "bad layer sizes {sizes:?}");
        let count = Self::param_count_for(sizes);
        let mut params = Vec::with_capacity(count);
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out + fan_out {
                params.push(rng.gen_range(-bound..bound));
            }
        }
        Mlp {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        Mlp {
            sizes: sizes.to_vec(),
            params: vec![0.0; Self::param_count_for(sizes)],
        }
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        let expected = Self::param_count_for(sizes);
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: params.len(),
            });
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            params,
        })
    }

    fn param_count_for(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_traced(input)?.acts.pop().unwrap())
    }

    pub fn forward_traced(&self, input: &[f64]) -> Result<Trace> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(input.to_vec());
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let x = &acts[l];
            let mut y: Vec<f64> = b.to_vec();
            for (o, yo) in y.iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                *yo += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
            if l + 1 < layers {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(y);
        }
        Ok(Trace { acts })
    }

    /// Accumulates `d(out_grad . output)/d(params)` into `grad`.
    pub fn backward(&self, trace: &Trace, out_grad: &[f64], grad: &mut [f64]) {
        assert_eq!(out_grad.len(), self.output_dim());
        assert_eq!(grad.len(), self.params.len());
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut delta = out_grad.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let x = &trace.acts[l];
            {
                let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    for (g, xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[off..off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (p, wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *p += d * wi;
                }
            }
            // rectifier derivative at the previous layer's output
            for (p, a) in prev.iter_mut().zip(x) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }

    pub fn write_to(&self, w: &mut Writer) {
        w.tag("mlp").usize(self.sizes.len());
        for &s in &self.sizes {
            w.usize(s);
        }
        w.newline().tag("params").f64s(&self.params);
    }

    pub fn read_from(r: &mut Reader<'_>) -> Result<Self> {
        r.expect("mlp")?;
        let n = r.usize()?;
        let sizes = (0..n).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Checkpoint(format!("bad layer sizes {sizes:?}")));
        }
        r.expect("params")?;
        Mlp::from_params(&sizes, r.f64s()?)
    }
}

/// Global 2-norm over several gradient slices.
pub fn global_norm(grads: &[&[f64]]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all slices together so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    skipped: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepOutcome {
    /// Gradient norm before clipping.
    Applied { grad_norm: f64 },
    Skipped,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            skipped: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn note_skipped(&mut self) {
        self.skipped += 1;
    }

    /// Moment update without clipping; callers clip across parameter groups.
    pub fn apply(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    /// Clip to `clip_norm`, then update. Non-finite gradients skip the step.
    pub fn step(&mut self, params: &mut [f64], grads: &mut [f64], clip_norm: f64) -> StepOutcome {
        if grads.iter().any(|g| !g.is_finite()) {
            self.skipped += 1;
            log::warn!("non-finite gradient; skipping optimizer step ({} skipped so far)", self.skipped);
            return StepOutcome::Skipped;
        }
        let grad_norm = clip_global_norm(&mut [grads], clip_norm);
        self.apply(params, grads);
        StepOutcome::Applied { grad_norm }
    }

    pub fn write_to(&self, w: &mut Writer) {
        w.tag("adam")
            .f64(self.lr)
            .f64(self.beta1)
            .f64(self.beta2)
            .f64(self.eps)
            .u64(self.t)
            .u64(self.skipped)
            .newline();
        w.tag("m").f64s(&self.m);
        w.tag("v").f64s(&self.v);
    }

    pub fn read_from(r: &mut Reader<'_>) -> Result<Self> {
        r.expect("adam")?;
        let (lr, beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        let (t, skipped) = (r.u64()?, r.u64()?);
        r.expect("m")?;
        let m = r.f64s()?;
        r.expect("v")?;
        let v = r.f64s()?;
        if m.len() != v.len() {
            return Err(Error::Checkpoint("moment lengths differ".into()));
        }
        Ok(Adam {
            lr,
            beta1,
            beta2,
            eps,
            m,
            v,
            t,
            skipped,
        })
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}
