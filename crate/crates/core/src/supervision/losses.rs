//! Per-ray loss terms with their gradients. Every `*_grad` output has the
//! same length as the weights it differentiates.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

use super::curriculum::CurriculumState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SightMode {
    /// Exact interval mass from the normal CDF.
    #[default]
    Cdf,
    /// Density at the interval midpoint times its width.
    Midpoint,
}

impl std::str::FromStr for SightMode {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cdf" => Ok(Self::Cdf),
            "midpoint" => Ok(Self::Midpoint),
            _ => invalid(format!("unknown line-of-sight mode '{s}' (cdf | midpoint)")),
        }
    }
}

/// Standard normal CDF, using `erfc` on the far side so tails keep their
/// relative precision.
pub fn normal_cdf(z: f64) -> f64 {
    if z < 0.0 {
        0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
    } else {
        1.0 - 0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
    }
}

/// Mass of `N(mu, sigma²)` on `[t0, t1]`.
pub fn gaussian_interval_mass(t0: f64, t1: f64, mu: f64, sigma: f64, mode: SightMode) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return invalid(format!("gaussian width must be positive, got {sigma}"));
    }
    Ok(match mode {
        SightMode::Cdf => {
            let (a, b) = ((t0 - mu) / sigma, (t1 - mu) / sigma);
            // difference of upper tails when both are right of the mean
            if a > 0.0 {
                0.5 * (libm::erfc(a / std::f64::consts::SQRT_2) - libm::erfc(b / std::f64::consts::SQRT_2))
            } else {
                normal_cdf(b) - normal_cdf(a)
            }
        }
        SightMode::Midpoint => {
            let z = (0.5 * (t0 + t1) - mu) / sigma;
            (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt()) * (t1 - t0)
        }
    })
}

/// Hard occlusion-aware selection: keep `D` iff `D ≤ ε_t` and `D ≤ D̂ + ε_o`.
#[inline]
pub fn is_reliable(gt: f32, rendered: f32, state: &CurriculumState) -> bool {
    let (d, dh) = (gt as f64, rendered as f64);
    d <= state.eps_t && d <= dh + state.eps_o
}

pub fn select_reliable(gt: &[f32], rendered: &[f32], state: &CurriculumState) -> Vec<bool> {
    gt.iter().zip(rendered).map(|(&d, &dh)| is_reliable(d, dh, state)).collect()
}

/// Mean squared depth error over the masked samples and its gradient on
/// the rendered depths (zero outside the mask).
pub fn l2_depth_loss(rendered: &[f32], gt: &[f32], mask: &[bool]) -> (f64, Vec<f32>) {
    let n = mask.iter().filter(|m| **m).count();
    let mut grad = vec![0.0f32; rendered.len()];
    if n == 0 {
        return (0.0, grad);
    }
    let mut sum = 0.0f64;
    for i in 0..rendered.len() {
        if mask[i] {
            let e = rendered[i] as f64 - gt[i] as f64;
            sum += e * e;
            grad[i] = (2.0 * e / n as f64) as f32;
        }
    }
    (sum / n as f64, grad)
}

/// Per-interval target masses for one ray with metric edges `t_edges`.
pub fn sight_targets(t_edges: &[f32], gt: f32, eps_n: f64, mode: SightMode) -> Result<Vec<f64>> {
    t_edges
        .windows(2)
        .map(|e| gaussian_interval_mass(e[0] as f64, e[1] as f64, gt as f64, eps_n, mode))
        .collect()
}

/// `Σᵢ (wᵢ − Nᵢ)²` for one ray, with its gradient on `w`.
pub fn line_of_sight_loss(weights: &[f32], t_edges: &[f32], gt: f32, eps_n: f64, mode: SightMode) -> Result<(f64, Vec<f32>)> {
    if t_edges.len() != weights.len() + 1 {
        return invalid("line-of-sight loss needs one more edge than weights");
    }
    let target = sight_targets(t_edges, gt, eps_n, mode)?;
    let mut loss = 0.0;
    let grad = weights
        .iter()
        .zip(&target)
        .map(|(&w, &nm)| {
            let e = w as f64 - nm;
            loss += e * e;
            (2.0 * e) as f32
        })
        .collect();
    Ok((loss, grad))
}

/// Distortion of one ray's weights on intervals with normalized edges
/// `s_edges`: `Σᵢⱼ wᵢwⱼ|s̄ᵢ − s̄ⱼ| + ⅓ Σᵢ wᵢ² Δsᵢ`.
pub fn distortion_loss(weights: &[f32], s_edges: &[f32]) -> (f64, Vec<f32>) {
    let n = weights.len();
    debug_assert_eq!(s_edges.len(), n + 1);
    let mid: Vec<f64> = (0..n).map(|i| 0.5 * (s_edges[i] as f64 + s_edges[i + 1] as f64)).collect();
    let w: Vec<f64> = weights.iter().map(|&v| v as f64).collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0f32; n];
    for i in 0..n {
        let ds = s_edges[i + 1] as f64 - s_edges[i] as f64;
        let mut inter = 0.0;
        for j in 0..n {
            inter += w[j] * (mid[i] - mid[j]).abs();
        }
        loss += w[i] * inter + w[i] * w[i] * ds / 3.0;
        grad[i] = (2.0 * inter + 2.0 * w[i] * ds / 3.0) as f32;
    }
    (loss, grad)
}

/// For each target interval, the summed `env` weight over the envelope
/// intervals that overlap it, plus the inclusive index range summed.
fn outer_ranges(target_edges: &[f32], env_edges: &[f32], env_w: &[f32]) -> Vec<(f64, usize, usize)> {
    let m = env_w.len();
    let mut cum = Vec::with_capacity(m + 1);
    cum.push(0.0f64);
    for &w in env_w {
        cum.push(cum.last().unwrap() + w as f64);
    }
    let starts = &env_edges[..m];
    let ends = &env_edges[1..];
    target_edges
        .windows(2)
        .map(|e| {
            let lo = starts.partition_point(|&s| s <= e[0]).saturating_sub(1).min(m - 1);
            let hi = ends.partition_point(|&s| s <= e[1]).min(m - 1);
            if hi < lo {
                (0.0, lo, lo.saturating_sub(1))
            } else {
                (cum[hi + 1] - cum[lo], lo, hi)
            }
        })
        .collect()
}

const INTERLEVEL_EPS: f64 = 1e-7;

/// Interlevel loss of one proposal histogram against the final one, both in
/// normalized spacing: the final weights are treated as constants and each
/// final interval pays `max(0, w − w_outer)² / (w + ε)`, where `w_outer` is the
/// proposal mass over the intervals overlapping it. Returns the summed loss,
/// and its gradient on the proposal weights.
pub fn interlevel_loss(final_edges: &[f32], final_w: &[f32], prop_edges: &[f32], prop_w: &[f32]) -> (f64, Vec<f32>) {
    let mut grad = vec![0.0f32; prop_w.len()];
    if prop_w.is_empty() {
        return (0.0, grad);
    }
    let outer = outer_ranges(final_edges, prop_edges, prop_w);
    let mut loss = 0.0;
    for (&w, &(wo, lo, hi)) in final_w.iter().zip(&outer) {
        let w = w as f64;
        let gap = (w - wo).max(0.0);
        loss += gap * gap / (w + INTERLEVEL_EPS);
        if gap > 0.0 && hi >= lo {
            let d = (-2.0 * gap / (w + INTERLEVEL_EPS)) as f32;
            for g in &mut grad[lo..=hi] {
                *g += d;
            }
        }
    }
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selftest::fd::{check_input_gradient, FdConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Composite Simpson quadrature of the normal pdf, as an oracle.
    fn simpson_mass(t0: f64, t1: f64, mu: f64, sigma: f64) -> f64 {
        let n = 20_000;
        let h = (t1 - t0) / n as f64;
        let pdf = |t: f64| (-0.5 * ((t - mu) / sigma).powi(2)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        let mut s = pdf(t0) + pdf(t1);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(t0 + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn mass_examples() {
        let st = |t0, t1, mode| gaussian_interval_mass(t0, t1, 1.0, 1.0, mode).unwrap();
        assert!((st(1.0, 9.0, SightMode::Cdf) - 0.5).abs() < 1e-12);
        assert!((st(0.0, 2.0, SightMode::Cdf) - 0.68269).abs() < 1e-4);
        assert!((st(0.0, 2.0, SightMode::Cdf) - simpson_mass(0.0, 2.0, 1.0, 1.0)).abs() < 1e-10);
        let mid = st(0.9, 1.1, SightMode::Midpoint);
        let cdf = st(0.9, 1.1, SightMode::Cdf);
        assert!((mid - 0.0797885).abs() < 1e-6, "{mid}");
        assert!((cdf - 0.0796557).abs() < 1e-6, "{cdf}");
        assert!((cdf - simpson_mass(0.9, 1.1, 1.0, 1.0)).abs() < 1e-12);
        assert!(gaussian_interval_mass(0.0, 1.0, 0.0, 0.0, SightMode::Cdf).is_err());
        assert!(gaussian_interval_mass(0.0, 1.0, 0.0, -1.0, SightMode::Midpoint).is_err());
    }

    #[test]
    fn tail_masses_keep_precision() {
        let far = gaussian_interval_mass(9.0, 10.0, 0.0, 1.0, SightMode::Cdf).unwrap();
        let oracle = simpson_mass(9.0, 10.0, 0.0, 1.0);
        assert!((far - oracle).abs() <= 1e-6 * oracle, "{far} vs {oracle}");
    }

    #[test]
    fn cdf_partition_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let (mu, sigma) = (rng.random_range(-5.0..5.0), rng.random_range(0.05..3.0));
            let k = rng.random_range(1..40);
            let mut cuts: Vec<f64> = (0..k).map(|_| rng.random_range(-8.0..8.0)).collect();
            cuts.push(-8.0);
            cuts.push(8.0);
            cuts.sort_by(f64::total_cmp);
            let total: f64 = cuts
                .windows(2)
                .map(|c| gaussian_interval_mass(mu + c[0] * sigma, mu + c[1] * sigma, mu, sigma, SightMode::Cdf).unwrap())
                .sum();
            assert!((total - 1.0).abs() < 1e-6, "{total}");
        }
    }

    fn total_gap(width: f64) -> f64 {
        let n = (4.0 / width).round() as usize;
        (0..n)
            .map(|i| {
                let t0 = -2.0 + i as f64 * width;
                let a = gaussian_interval_mass(t0, t0 + width, 0.3, 1.0, SightMode::Cdf).unwrap();
                let b = gaussian_interval_mass(t0, t0 + width, 0.3, 1.0, SightMode::Midpoint).unwrap();
                (a - b).abs()
            })
            .sum()
    }

    #[test]
    fn midpoint_converges_second_order() {
        let mut w = 0.5;
        for _ in 0..5 {
            let ratio = total_gap(w) / total_gap(w / 2.0);
            assert!(ratio >= 3.5, "width {w}: ratio {ratio}");
            w /= 2.0;
        }
    }

    #[test]
    fn discretizations_agree_for_fine_intervals() {
        let eps_n = 0.15;
        // widest interval just under ε_n / 4
        let width = 0.9 * eps_n as f32 / 4.0;
        let edges: Vec<f32> = (0..=60).map(|i| 8.9 + i as f32 * width).collect();
        let a = sight_targets(&edges, 10.0, eps_n, SightMode::Cdf).unwrap();
        let b = sight_targets(&edges, 10.0, eps_n, SightMode::Midpoint).unwrap();
        let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
        assert!((sa - sb).abs() <= 0.02 * sa);
        let zeros = vec![0.0f32; 60];
        let la = line_of_sight_loss(&zeros, &edges, 10.0, eps_n, SightMode::Cdf).unwrap().0;
        let lb = line_of_sight_loss(&zeros, &edges, 10.0, eps_n, SightMode::Midpoint).unwrap().0;
        assert!((la - lb).abs() <= 0.02 * la, "{la} vs {lb}");
        for (x, y) in a.iter().zip(&b) {
            if *x > 1e-2 {
                assert!((x - y).abs() <= 0.02 * x, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn selection_examples_and_monotonicity() {
        let s = |eps_t, eps_o| CurriculumState { eps_t, eps_o, iteration: 0 };
        assert!(is_reliable(5.0, 4.9, &s(10.0, 1.0)));
        assert!(!is_reliable(12.0, 100.0, &s(10.0, 1.0)));
        assert!(!is_reliable(6.0, 4.0, &s(10.0, 1.0)));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gt: Vec<f32> = (0..500).map(|_| rng.random_range(0.5..120.0)).collect();
        let dh: Vec<f32> = (0..500).map(|_| rng.random_range(0.5..120.0)).collect();
        let a = select_reliable(&gt, &dh, &s(20.0, 0.5));
        let b = select_reliable(&gt, &dh, &s(40.0, 0.9));
        assert!(a.iter().zip(&b).all(|(x, y)| !x || *y));
    }

    #[test]
    fn depth_loss_examples() {
        assert_eq!(l2_depth_loss(&[3.0, 4.0], &[3.0, 4.0], &[true, true]).0, 0.0);
        assert_eq!(l2_depth_loss(&[5.0], &[3.0], &[true]).0, 4.0);
        let (l, g) = l2_depth_loss(&[5.0, 1.0], &[3.0, 9.0], &[true, false]);
        assert_eq!((l, g), (4.0, vec![4.0, 0.0]));
        assert_eq!(l2_depth_loss(&[5.0], &[3.0], &[false]).0, 0.0);
    }

    #[test]
    fn sight_loss_examples() {
        let edges = [9.5f32, 9.9, 10.0, 10.1, 10.5];
        let n = sight_targets(&edges, 10.0, 0.15, SightMode::Cdf).unwrap();
        let w: Vec<f32> = n.iter().map(|&v| v as f32).collect();
        assert!(line_of_sight_loss(&w, &edges, 10.0, 0.15, SightMode::Cdf).unwrap().0 < 1e-12);
        let (l, _) = line_of_sight_loss(&[0.0; 4], &edges, 10.0, 0.15, SightMode::Cdf).unwrap();
        assert!((l - n.iter().map(|v| v * v).sum::<f64>()).abs() < 1e-12 && l > 0.0);
    }

    #[test]
    fn distortion_examples() {
        let (l, _) = distortion_loss(&[0.0, 1.0, 0.0], &[0.0, 0.2, 0.2, 0.5]);
        assert_eq!(l, 0.0);
        let (l, _) = distortion_loss(&[0.5, 0.0, 0.5], &[0.0, 0.0, 1.0, 1.0]);
        assert!((l - 0.5).abs() < 1e-12);
    }

    #[test]
    fn interlevel_examples() {
        let e = [0.0f32, 0.1, 0.3, 0.35, 0.8];
        let w = [0.2f32, 0.5, 0.1, 0.2];
        assert_eq!(interlevel_loss(&e, &w, &e, &w).0, 0.0);
        // a proposal that misses the mass is penalized, and pushed up there
        let (l, g) = interlevel_loss(&e, &w, &e, &[0.2, 0.0, 0.1, 0.2]);
        assert!(l > 0.0 && g[1] < 0.0);
        // a coarse proposal covering everything is never penalized
        let (l, _) = interlevel_loss(&e, &w, &[0.0, 0.8], &[1.0]);
        assert_eq!(l, 0.0);
    }

    /// Brute-force envelope: proposal mass over every interval that overlaps
    /// the target interval, straight from the definition.
    #[test]
    fn interlevel_matches_overlap_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let mut pe: Vec<f32> = (0..9).map(|_| rng.random_range(0.0..1.0)).collect();
            let mut fe: Vec<f32> = (0..13).map(|_| rng.random_range(0.05..0.95)).collect();
            pe.extend([0.0, 1.0]);
            pe.sort_by(f32::total_cmp);
            fe.sort_by(f32::total_cmp);
            let pw: Vec<f32> = (0..pe.len() - 1).map(|_| rng.random_range(0.0..0.2)).collect();
            let fw: Vec<f32> = (0..fe.len() - 1).map(|_| rng.random_range(0.0..0.2)).collect();
            let mut oracle = 0.0;
            for i in 0..fw.len() {
                let wo: f64 =
                    (0..pw.len()).filter(|&j| pe[j] <= fe[i] && pe[j + 1] > fe[i] || pe[j] > fe[i] && pe[j] < fe[i + 1]).map(|j| pw[j] as f64).sum();
                let gap = (fw[i] as f64 - wo).max(0.0);
                oracle += gap * gap / (fw[i] as f64 + INTERLEVEL_EPS);
            }
            let (l, _) = interlevel_loss(&fe, &fw, &pe, &pw);
            assert!((l - oracle).abs() <= 1e-9 + 1e-6 * oracle, "{l} vs {oracle}");
        }
    }

    fn random_edges(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
        let mut e: Vec<f32> = (0..n - 2).map(|_| rng.random_range(lo..hi)).collect();
        e.extend([lo, hi]);
        e.sort_by(f32::total_cmp);
        e
    }

    #[test]
    fn distortion_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let e = random_edges(&mut rng, 17, 0.1, 0.9);
        let w: Vec<f32> = (0..16).map(|_| rng.random_range(0.0..0.2)).collect();
        let (_, g) = distortion_loss(&w, &e);
        let r = check_input_gradient(&w, &g, |v| distortion_loss(v, &e).0, &FdConfig::default(), &mut rng);
        assert!(r.passed() && r.probes >= 20, "{r:?}");
    }

    #[test]
    fn interlevel_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let fe = random_edges(&mut rng, 17, 0.1, 0.9);
        let pe = random_edges(&mut rng, 33, 0.1, 0.9);
        let fw: Vec<f32> = (0..16).map(|_| rng.random_range(0.0..0.2)).collect();
        let pw: Vec<f32> = (0..32).map(|_| rng.random_range(0.0..0.02)).collect();
        let (_, g) = interlevel_loss(&fe, &fw, &pe, &pw);
        let r = check_input_gradient(&pw, &g, |v| interlevel_loss(&fe, &fw, &pe, v).0, &FdConfig::default(), &mut rng);
        assert!(r.passed() && r.probes >= 20, "{r:?}");
    }

    #[test]
    fn sight_gradient_matches_fd_in_both_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for mode in [SightMode::Cdf, SightMode::Midpoint] {
            let e = random_edges(&mut rng, 25, 9.0, 11.0);
            let w: Vec<f32> = (0..24).map(|_| rng.random_range(0.0..0.1)).collect();
            let (_, g) = line_of_sight_loss(&w, &e, 10.0, 0.15, mode).unwrap();
            let r = check_input_gradient(&w, &g, |v| line_of_sight_loss(v, &e, 10.0, 0.15, mode).unwrap().0, &FdConfig::default(), &mut rng);
            assert!(r.passed() && r.probes >= 20, "{r:?}");
        }
    }

    #[test]
    fn depth_losses_backpropagate_to_densities() {
        use crate::field::{render::depth_weight_grad, volume_render, weights_backward, RaySamples};
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for mode in [SightMode::Cdf, SightMode::Midpoint] {
            let t = random_edges(&mut rng, 33, 8.0, 12.0);
            let s = RaySamples {
                s_edges: t.clone(),
                t_edges: t.clone(),
            };
            let sig: Vec<f32> = (0..32).map(|_| rng.random_range(0.0..1.5)).collect();
            let col = vec![[0.5f32; 3]; 32];
            let loss = |sg: &[f32]| {
                let o = volume_render(&s, sg, &col);
                let l = line_of_sight_loss(&o.weights, &t, 10.0, 0.15, mode).unwrap().0;
                l + l2_depth_loss(&[o.depth], &[10.0], &[true]).0
            };
            let o = volume_render(&s, &sig, &col);
            let (_, mut gw) = line_of_sight_loss(&o.weights, &t, 10.0, 0.15, mode).unwrap();
            let (_, gd) = l2_depth_loss(&[o.depth], &[10.0], &[true]);
            depth_weight_grad(&s, &o, gd[0], &mut gw);
            let mut ds = vec![0.0f32; 32];
            weights_backward(&s, &sig, &o.weights, &gw, &mut ds);
            let r = check_input_gradient(&sig, &ds, loss, &FdConfig::default(), &mut rng);
            assert!(r.passed() && r.probes >= 20, "{r:?}");
        }
    }
}
