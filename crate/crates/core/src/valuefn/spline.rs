//! Monotone rational-quadratic spline transform on [-bound, bound] with
//! identity tails. One scalar passes through per call; bin widths, heights,
//! and interior knot derivatives come from a conditioner network.
//!
//! Raw parameter layout (3K - 1 values for K bins): K width logits, K height
//! logits, K - 1 derivative pre-activations. Widths and heights go through a
//! floored softmax; derivatives through softplus shifted so a zero raw value
//! yields exactly slope one, which makes a zero-initialized conditioner an
//! exact identity map.

/// softplus(SOFTPLUS_SHIFT) = 1, i.e. ln(e - 1).
pub const SOFTPLUS_SHIFT: f64 = 0.541_324_854_612_918_1;

#[derive(Debug, Clone)]
pub struct SplineParams {
    pub bins: usize,
    pub bound: f64,
    pub widths: Vec<f64>,
    pub heights: Vec<f64>,
    /// K + 1 knot derivatives; both ends pinned to 1 for the linear tails.
    pub derivs: Vec<f64>,
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    // Softmax outputs and derivative sigmoids retained for the backward pass.
    sm_w: Vec<f64>,
    sm_h: Vec<f64>,
    sig_d: Vec<f64>,
    scale: f64,
}

fn softmax(raw: &[f64]) -> Vec<f64> {
    let m = raw.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = raw.iter().map(|r| (r - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn build_params(raw: &[f64], bins: usize, bound: f64, min_bin: f64) -> SplineParams {
    debug_assert_eq!(raw.len(), 3 * bins - 1);
    let sm_w = softmax(&raw[..bins]);
    let sm_h = softmax(&raw[bins..2 * bins]);
    let scale = 2.0 * bound * (1.0 - bins as f64 * min_bin);
    let widths: Vec<f64> = sm_w.iter().map(|s| scale * s + 2.0 * bound * min_bin).collect();
    let heights: Vec<f64> = sm_h.iter().map(|s| scale * s + 2.0 * bound * min_bin).collect();

    let mut derivs = vec![1.0; bins + 1];
    let mut sig_d = vec![0.0; bins - 1];
    for i in 0..bins - 1 {
        let r = raw[2 * bins + i] + SOFTPLUS_SHIFT;
        // softplus with the usual overflow guard
        derivs[i + 1] = if r > 30.0 { r } else { r.exp().ln_1p() };
        sig_d[i] = 1.0 / (1.0 + (-r).exp());
    }

    let mut x_edges = vec![-bound; bins + 1];
    let mut y_edges = vec![-bound; bins + 1];
    for i in 0..bins {
        x_edges[i + 1] = x_edges[i] + widths[i];
        y_edges[i + 1] = y_edges[i] + heights[i];
    }
    // Pin the outer edges so the tails join exactly.
    x_edges[bins] = bound;
    y_edges[bins] = bound;

    SplineParams {
        bins,
        bound,
        widths,
        heights,
        derivs,
        x_edges,
        y_edges,
        sm_w,
        sm_h,
        sig_d,
        scale,
    }
}

/// Saved intermediates of one forward evaluation.
#[derive(Debug, Clone, Copy)]
pub struct SplineCache {
    pub inside: bool,
    bin: usize,
    theta: f64,
    s: f64,
    q: f64,
    numer: f64,
    denom: f64,
    p: f64,
}

/// Forward transform: returns (output, log-derivative, cache).
pub fn forward(params: &SplineParams, xi: f64) -> (f64, f64, SplineCache) {
    let b = params.bound;
    if !((-b..=b).contains(&xi)) {
        return (
            xi,
            0.0,
            SplineCache {
                inside: false,
                bin: 0,
                theta: 0.0,
                s: 1.0,
                q: 0.0,
                numer: 0.0,
                denom: 1.0,
                p: 1.0,
            },
        );
    }
    let k = locate(&params.x_edges, xi);
    let w = params.widths[k];
    let h = params.heights[k];
    let s = h / w;
    let d0 = params.derivs[k];
    let d1 = params.derivs[k + 1];
    let theta = ((xi - params.x_edges[k]) / w).clamp(0.0, 1.0);
    let q = theta * (1.0 - theta);
    let numer = h * (s * theta * theta + d0 * q);
    let denom = s + (d1 + d0 - 2.0 * s) * q;
    let y = params.y_edges[k] + numer / denom;
    let p = d1 * theta * theta + 2.0 * s * q + d0 * (1.0 - theta) * (1.0 - theta);
    let log_deriv = 2.0 * s.ln() + p.ln() - 2.0 * denom.ln();
    (
        y,
        log_deriv,
        SplineCache { inside: true, bin: k, theta, s, q, numer, denom, p },
    )
}

/// Reverse-mode partials: given dL/dy and dL/dlog_deriv, accumulate the raw
/// parameter gradient into `g_raw` and return dL/dxi.
pub fn backward(
    params: &SplineParams,
    cache: &SplineCache,
    g_y: f64,
    g_ld: f64,
    g_raw: &mut [f64],
) -> f64 {
    if !cache.inside {
        return g_y;
    }
    let k = cache.bin;
    let (theta, s, q, numer, denom, p) =
        (cache.theta, cache.s, cache.q, cache.numer, cache.denom, cache.p);
    let w = params.widths[k];
    let h = params.heights[k];
    let d0 = params.derivs[k];
    let d1 = params.derivs[k + 1];

    // y = y_k + N / D, ld = 2 ln s + ln P - 2 ln D.
    let g_n = g_y / denom;
    let mut g_d = -g_y * numer / (denom * denom);
    let mut g_s = g_ld * 2.0 / s;
    let g_p = g_ld / p;
    g_d += -2.0 * g_ld / denom;

    // P = d1 t^2 + 2 s q + d0 (1-t)^2
    let mut g_d1 = g_p * theta * theta;
    let mut g_d0 = g_p * (1.0 - theta) * (1.0 - theta);
    g_s += 2.0 * q * g_p;
    let mut g_theta = g_p * (2.0 * d1 * theta + 2.0 * s * (1.0 - 2.0 * theta)
        - 2.0 * d0 * (1.0 - theta));

    // N = h (s t^2 + d0 q)
    let mut g_h = g_n * (s * theta * theta + d0 * q);
    g_s += g_n * h * theta * theta;
    g_d0 += g_n * h * q;
    g_theta += g_n * h * (2.0 * s * theta + d0 * (1.0 - 2.0 * theta));

    // D = s + (d1 + d0 - 2s) q
    g_s += g_d * (1.0 - 2.0 * q);
    g_d0 += g_d * q;
    g_d1 += g_d * q;
    g_theta += g_d * (d1 + d0 - 2.0 * s) * (1.0 - 2.0 * theta);

    // s = h / w, theta = (xi - x_k) / w
    g_h += g_s / w;
    let mut g_w = -g_s * s / w;
    let g_xi = g_theta / w;
    let g_xk = -g_theta / w;
    g_w += -g_theta * theta / w;
    let g_yk = g_y;

    // Scatter to the width/height vectors: the bin edge is the sum of all
    // earlier widths, so its gradient spreads over them.
    let bins = params.bins;
    let mut g_widths = vec![0.0; bins];
    let mut g_heights = vec![0.0; bins];
    g_widths[k] += g_w;
    g_heights[k] += g_h;
    for j in 0..k {
        g_widths[j] += g_xk;
        g_heights[j] += g_yk;
    }

    // Floored softmax backward for widths and heights.
    let chain_softmax = |g_vec: &[f64], sm: &[f64], scale: f64, out: &mut [f64]| {
        let mut inner = 0.0;
        for (g, smi) in g_vec.iter().zip(sm) {
            inner += g * scale * smi;
        }
        for i in 0..g_vec.len() {
            out[i] += g_vec[i] * scale * sm[i] - sm[i] * inner;
        }
    };
    chain_softmax(&g_widths, &params.sm_w, params.scale, &mut g_raw[..bins]);
    chain_softmax(&g_heights, &params.sm_h, params.scale, &mut g_raw[bins..2 * bins]);

    // Interior derivatives through softplus.
    if k > 0 {
        g_raw[2 * bins + k - 1] += g_d0 * params.sig_d[k - 1];
    }
    if k + 1 < bins {
        g_raw[2 * bins + k] += g_d1 * params.sig_d[k];
    }
    g_xi
}

/// Closed-form inverse of the forward transform.
pub fn inverse(params: &SplineParams, y: f64) -> f64 {
    let b = params.bound;
    if !((-b..=b).contains(&y)) {
        return y;
    }
    let k = locate(&params.y_edges, y);
    let w = params.widths[k];
    let h = params.heights[k];
    let s = h / w;
    let d0 = params.derivs[k];
    let d1 = params.derivs[k + 1];
    let delta = y - params.y_edges[k];
    let term = delta * (d1 + d0 - 2.0 * s);
    let a = h * (s - d0) + term;
    let bq = h * d0 - term;
    let cq = -s * delta;
    let disc = (bq * bq - 4.0 * a * cq).max(0.0);
    let theta = (2.0 * cq / (-bq - disc.sqrt())).clamp(0.0, 1.0);
    params.x_edges[k] + theta * w
}

fn locate(edges: &[f64], v: f64) -> usize {
    let n_bins = edges.len() - 1;
    let mut k = edges.partition_point(|e| *e <= v);
    k = k.saturating_sub(1);
    k.min(n_bins - 1)
}
