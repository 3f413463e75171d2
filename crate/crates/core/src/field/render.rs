//! Volume rendering along one ray and its exact backward pass.

use super::sampler::RaySamples;

pub const DEPTH_EPS: f32 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub rgb: [f32; 3],
    pub depth: f32,
    pub weights: Vec<f32>,
    pub accumulation: f32,
}

/// Compositing weights `w_i = T_i (1 − exp(−σ_i δ_i))`.
pub fn compositing_weights(samples: &RaySamples, sigmas: &[f32]) -> Vec<f32> {
    let n = samples.len();
    debug_assert_eq!(sigmas.len(), n);
    let mut w = Vec::with_capacity(n);
    let mut optical = 0.0f32;
    for i in 0..n {
        let tau = sigmas[i] * samples.delta(i);
        let t_i = (-optical).exp();
        optical += tau;
        w.push(t_i - (-optical).exp().min(t_i));
    }
    w
}

fn expected_depth(samples: &RaySamples, w: &[f32]) -> (f32, f32) {
    let acc: f32 = w.iter().sum();
    let num: f32 = w.iter().enumerate().map(|(i, wi)| wi * samples.t_mid(i)).sum();
    (num / acc.max(DEPTH_EPS), acc)
}

pub fn volume_render(samples: &RaySamples, sigmas: &[f32], colors: &[[f32; 3]]) -> RenderOutput {
    let weights = compositing_weights(samples, sigmas);
    let mut rgb = [0.0f32; 3];
    for (w, c) in weights.iter().zip(colors) {
        for k in 0..3 {
            rgb[k] += w * c[k];
        }
    }
    let (depth, accumulation) = expected_depth(samples, &weights);
    RenderOutput {
        rgb,
        depth,
        weights,
        accumulation,
    }
}

/// Gradient of `depth` with respect to each weight.
pub fn depth_weight_grad(samples: &RaySamples, out: &RenderOutput, d_depth: f32, g: &mut [f32]) {
    if d_depth == 0.0 {
        return;
    }
    let acc = out.accumulation.max(DEPTH_EPS);
    let excess = if out.accumulation > DEPTH_EPS { out.depth } else { 0.0 };
    for (i, gi) in g.iter_mut().enumerate() {
        *gi += d_depth * (samples.t_mid(i) - excess) / acc;
    }
}

/// Backpropagates a gradient `g_w` on the weights into the densities:
/// `dL/dσ_k = δ_k (g_k T_{k+1} − Σ_{i>k} g_i w_i)`.
pub fn weights_backward(samples: &RaySamples, sigmas: &[f32], weights: &[f32], g_w: &[f32], d_sigma: &mut [f32]) {
    let n = weights.len();
    let mut optical = 0.0f32;
    let mut t_next = Vec::with_capacity(n);
    for i in 0..n {
        optical += sigmas[i] * samples.delta(i);
        t_next.push((-optical).exp());
    }
    let mut suffix = 0.0f32;
    for k in (0..n).rev() {
        d_sigma[k] += samples.delta(k) * (g_w[k] * t_next[k] - suffix);
        suffix += g_w[k] * weights[k];
    }
}

/// Full backward of [`volume_render`] given upstream gradients on rgb, depth
/// and (optionally) directly on the weights. Returns `(dσ, dc)`.
pub fn volume_render_backward(
    samples: &RaySamples,
    sigmas: &[f32],
    colors: &[[f32; 3]],
    out: &RenderOutput,
    d_rgb: [f32; 3],
    d_depth: f32,
    d_weights: Option<&[f32]>,
) -> (Vec<f32>, Vec<[f32; 3]>) {
    let n = sigmas.len();
    let mut g = match d_weights {
        Some(d) => d.to_vec(),
        None => vec![0.0; n],
    };
    let mut d_colors = vec![[0.0f32; 3]; n];
    for i in 0..n {
        let c = colors[i];
        g[i] += d_rgb[0] * c[0] + d_rgb[1] * c[1] + d_rgb[2] * c[2];
        for k in 0..3 {
            d_colors[i][k] = d_rgb[k] * out.weights[i];
        }
    }
    depth_weight_grad(samples, out, d_depth, &mut g);
    let mut d_sigma = vec![0.0f32; n];
    weights_backward(samples, sigmas, &out.weights, &g, &mut d_sigma);
    (d_sigma, d_colors)
}
