//! Two-hidden-layer conditioner network (SiLU activations) operating on a
//! flat parameter slab, plus the Adam optimizer that trains it. Weights for
//! all flow layers live in one contiguous vector so the optimizer, finite
//! difference checks, and serialization all see a single array.

use rand::Rng;

/// Offsets of one conditioner's tensors inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerLayout {
    pub n_ctx: usize,
    pub hidden: usize,
    pub n_out: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub w3: usize,
    pub b3: usize,
    pub end: usize,
}

impl LayerLayout {
    pub fn new(start: usize, n_ctx: usize, hidden: usize, n_out: usize) -> Self {
        let w1 = start;
        let b1 = w1 + hidden * n_ctx;
        let w2 = b1 + hidden;
        let b2 = w2 + hidden * hidden;
        let w3 = b2 + hidden;
        let b3 = w3 + n_out * hidden;
        let end = b3 + n_out;
        Self { n_ctx, hidden, n_out, w1, b1, w2, b2, w3, b3, end }
    }

    /// Hidden layers get uniform fan-in initialization; the output layer is
    /// zeroed so the flow starts as the identity.
    pub fn init(&self, params: &mut [f64], rng: &mut impl Rng) {
        let mut fill = |off: usize, len: usize, fan_in: usize| {
            let a = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[off..off + len] {
                *p = rng.gen_range(-a..a);
            }
        };
        fill(self.w1, self.hidden * self.n_ctx, self.n_ctx);
        fill(self.b1, self.hidden, self.n_ctx);
        fill(self.w2, self.hidden * self.hidden, self.hidden);
        fill(self.b2, self.hidden, self.hidden);
        for p in &mut params[self.w3..self.end] {
            *p = 0.0;
        }
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let sig = 1.0 / (1.0 + (-x).exp());
    sig * (1.0 + x * (1.0 - sig))
}

/// y = W x + b with W row-major [n_out x n_in].
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (row, o) in out.iter_mut().enumerate() {
        let wr = &w[row * n_in..(row + 1) * n_in];
        // 4-wide accumulators keep the dot product fast without vector
        // intrinsics and fix the summation order.
        let mut acc = [0.0f64; 4];
        let chunks = n_in / 4;
        for c in 0..chunks {
            let i = c * 4;
            acc[0] += wr[i] * x[i];
            acc[1] += wr[i + 1] * x[i + 1];
            acc[2] += wr[i + 2] * x[i + 2];
            acc[3] += wr[i + 3] * x[i + 3];
        }
        let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
        for i in chunks * 4..n_in {
            sum += wr[i] * x[i];
        }
        *o = sum + b[row];
    }
}

/// Forward activations cached for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub z1: Vec<f64>,
    pub a1: Vec<f64>,
    pub z2: Vec<f64>,
    pub a2: Vec<f64>,
}

impl MlpCache {
    pub fn new(hidden: usize) -> Self {
        Self {
            z1: vec![0.0; hidden],
            a1: vec![0.0; hidden],
            z2: vec![0.0; hidden],
            a2: vec![0.0; hidden],
        }
    }
}

pub fn mlp_forward(
    layout: &LayerLayout,
    params: &[f64],
    ctx: &[f64],
    cache: &mut MlpCache,
    out: &mut [f64],
) {
    let l = layout;
    affine(
        &params[l.w1..l.b1],
        &params[l.b1..l.w2],
        ctx,
        &mut cache.z1,
    );
    for i in 0..l.hidden {
        cache.a1[i] = silu(cache.z1[i]);
    }
    affine(
        &params[l.w2..l.b2],
        &params[l.b2..l.w3],
        &cache.a1,
        &mut cache.z2,
    );
    for i in 0..l.hidden {
        cache.a2[i] = silu(cache.z2[i]);
    }
    affine(&params[l.w3..l.b3], &params[l.b3..l.end], &cache.a2, out);
}

/// Accumulate parameter gradients for one sample; the context is an input,
/// so no gradient flows to it.
pub fn mlp_backward(
    layout: &LayerLayout,
    params: &[f64],
    ctx: &[f64],
    cache: &MlpCache,
    g_out: &[f64],
    grad: &mut [f64],
) {
    let l = layout;
    let h = l.hidden;
    // Output layer.
    for (row, &g) in g_out.iter().enumerate() {
        grad[l.b3 + row] += g;
        if g == 0.0 {
            continue;
        }
        let wrow = l.w3 + row * h;
        for i in 0..h {
            grad[wrow + i] += g * cache.a2[i];
        }
    }
    let mut g_a2 = vec![0.0; h];
    for (row, &g) in g_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let wrow = &params[l.w3 + row * h..l.w3 + (row + 1) * h];
        for i in 0..h {
            g_a2[i] += g * wrow[i];
        }
    }
    let mut g_z2 = vec![0.0; h];
    for i in 0..h {
        g_z2[i] = g_a2[i] * silu_grad(cache.z2[i]);
    }
    // Second hidden layer.
    for row in 0..h {
        let g = g_z2[row];
        grad[l.b2 + row] += g;
        if g == 0.0 {
            continue;
        }
        let wrow = l.w2 + row * h;
        for i in 0..h {
            grad[wrow + i] += g * cache.a1[i];
        }
    }
    let mut g_a1 = vec![0.0; h];
    for row in 0..h {
        let g = g_z2[row];
        if g == 0.0 {
            continue;
        }
        let wrow = &params[l.w2 + row * h..l.w2 + (row + 1) * h];
        for i in 0..h {
            g_a1[i] += g * wrow[i];
        }
    }
    // First hidden layer.
    let n_ctx = l.n_ctx;
    for row in 0..h {
        let g = g_a1[row] * silu_grad(cache.z1[row]);
        grad[l.b1 + row] += g;
        if g == 0.0 {
            continue;
        }
        let wrow = l.w1 + row * n_ctx;
        for i in 0..n_ctx {
            grad[wrow + i] += g * ctx[i];
        }
    }
}

/// Standard Adam with bias correction.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}
