//! Ray sampling in normalized spacing `s ∈ [0, 1)`: stratified bins for the
//! first proposal stage, then inverse-CDF resampling of each stage's weight
//! histogram.
//!
//! The spacing is linear in distance out to the scene radius and linear in
//! inverse distance beyond it, mirroring the scene contraction.

use rand::Rng;

use crate::error::{invalid, Result};

/// `s(t)` for distance `t` and scene radius `radius`.
#[inline]
pub fn spacing(t: f64, radius: f64) -> f64 {
    let u = t / radius;
    if u < 1.0 {
        0.5 * u
    } else {
        1.0 - 0.5 / u
    }
}

/// Inverse of [`spacing`]; `s` must lie in `[0, 1)`.
#[inline]
pub fn spacing_inv(s: f64, radius: f64) -> f64 {
    let u = if s < 0.5 { 2.0 * s } else { 0.5 / (1.0 - s) };
    u * radius
}

/// Contiguous sample intervals of one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RaySamples {
    /// Interval edges in normalized spacing, strictly increasing.
    pub s_edges: Vec<f32>,
    /// The same edges as metric distances along the ray.
    pub t_edges: Vec<f32>,
}

impl RaySamples {
    pub fn from_s_edges(s_edges: Vec<f32>, radius: f64) -> Self {
        let t_edges = s_edges.iter().map(|&s| spacing_inv(s as f64, radius) as f32).collect();
        Self { s_edges, t_edges }
    }

    pub fn len(&self) -> usize {
        self.s_edges.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn t_mid(&self, i: usize) -> f32 {
        0.5 * (self.t_edges[i] + self.t_edges[i + 1])
    }

    #[inline]
    pub fn delta(&self, i: usize) -> f32 {
        self.t_edges[i + 1] - self.t_edges[i]
    }
}

/// Validated `s` range for a ray between `t_near` and `t_far`.
pub fn s_range(t_near: f64, t_far: f64, radius: f64) -> Result<(f64, f64)> {
    if !(t_near >= 0.0 && t_near < t_far && t_far.is_finite() && radius > 0.0) {
        return invalid(format!("degenerate ray range [{t_near}, {t_far}]"));
    }
    Ok((spacing(t_near, radius), spacing(t_far, radius)))
}

/// `n` equal bins over `[s0, s1]`, every interior edge jittered within its
/// stratum when `rng` is given.
pub fn stratified<R: Rng + ?Sized>(s0: f64, s1: f64, n: usize, radius: f64, rng: Option<&mut R>) -> RaySamples {
    let mut edges: Vec<f32> = (0..=n).map(|i| (s0 + (s1 - s0) * i as f64 / n as f64) as f32).collect();
    if let Some(rng) = rng {
        let w = (s1 - s0) / n as f64;
        // one jittered point per stratum, then edges at the stratum midpoints
        let pts: Vec<f64> = (0..n).map(|i| s0 + w * (i as f64 + rng.random::<f64>())).collect();
        for i in 1..n {
            edges[i] = (0.5 * (pts[i - 1] + pts[i])) as f32;
        }
    }
    RaySamples::from_s_edges(edges, radius)
}

/// Resamples `n` intervals (`n + 1` edges) from the piecewise-constant
/// density given by `weights` on `prev`'s bins. `padding` is added to every
/// bin weight before normalizing.
pub fn resample<R: Rng + ?Sized>(prev: &RaySamples, weights: &[f32], n: usize, padding: f32, radius: f64, rng: Option<&mut R>) -> RaySamples {
    let bins = prev.len();
    debug_assert_eq!(weights.len(), bins);
    let mut cdf = Vec::with_capacity(bins + 1);
    cdf.push(0.0f64);
    let total: f64 = weights.iter().map(|&w| (w.max(0.0) + padding) as f64).sum();
    let mut acc = 0.0;
    for &w in weights {
        acc += (w.max(0.0) + padding) as f64 / total;
        cdf.push(acc);
    }
    cdf[bins] = 1.0;
    let m = n + 1;
    let us: Vec<f64> = match rng {
        Some(rng) => {
            let step = 1.0 / m as f64;
            let jitter: f64 = rng.random();
            (0..m).map(|j| (j as f64 * step + jitter * step).min(1.0)).collect()
        }
        // the midpoint of the jittered draw
        None => (0..m).map(|j| (j as f64 + 0.5) / m as f64).collect(),
    };
    let s0 = prev.s_edges[0] as f64;
    let s_end = prev.s_edges[bins] as f64;
    let mut edges = Vec::with_capacity(m);
    let mut i = 0;
    for u in us {
        while i + 1 < bins && cdf[i + 1] <= u {
            i += 1;
        }
        let (c0, c1) = (cdf[i], cdf[i + 1]);
        let (a, b) = (prev.s_edges[i] as f64, prev.s_edges[i + 1] as f64);
        let f = if c1 > c0 { ((u - c0) / (c1 - c0)).clamp(0.0, 1.0) } else { 0.0 };
        edges.push((a + f * (b - a)).clamp(s0, s_end) as f32);
    }
    // keep the intervals strictly increasing
    for j in 1..edges.len() {
        if edges[j] <= edges[j - 1] {
            edges[j] = next_up(edges[j - 1]);
        }
    }
    RaySamples::from_s_edges(edges, radius)
}

fn next_up(x: f32) -> f32 {
    if x >= 0.0 {
        f32::from_bits(x.to_bits() + 1)
    } else {
        f32::from_bits(x.to_bits() - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spacing_round_trip_and_continuity() {
        for &t in &[0.0, 0.3, 5.0, 9.999, 10.0, 10.001, 40.0, 1e5] {
            assert!((spacing_inv(spacing(t, 10.0), 10.0) - t).abs() <= 1e-9 * t.max(1.0));
        }
        assert!((spacing(10.0 - 1e-9, 10.0) - 0.5).abs() < 1e-9);
        assert!((spacing(10.0 + 1e-9, 10.0) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn degenerate_range_is_error() {
        assert!(s_range(5.0, 5.0, 10.0).is_err());
        assert!(s_range(6.0, 5.0, 10.0).is_err());
        assert!(s_range(0.1, 100.0, 10.0).is_ok());
    }

    #[test]
    fn stratified_intervals_are_sorted_within_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (s0, s1) = s_range(0.1, 500.0, 20.0).unwrap();
        let r = stratified(s0, s1, 64, 20.0, Some(&mut rng));
        assert_eq!(r.len(), 64);
        assert!(r.t_edges.windows(2).all(|w| w[0] < w[1]));
        assert!((r.t_edges[0] - 0.1).abs() < 1e-5 && (r.t_edges[64] - 500.0).abs() < 1e-2);
    }

    #[test]
    fn uniform_histogram_resamples_uniformly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let prev = stratified::<ChaCha8Rng>(0.0, 0.8, 32, 1.0, None);
        let w = vec![1.0 / 32.0; 32];
        let mut draws = Vec::new();
        while draws.len() < 10_000 {
            let r = resample(&prev, &w, 16, 1e-3, 1.0, Some(&mut rng));
            assert!(r.s_edges.windows(2).all(|p| p[0] < p[1]));
            draws.extend(r.s_edges.iter().map(|&s| s as f64 / 0.8));
        }
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = draws.len() as f64;
        let ks = draws
            .iter()
            .enumerate()
            .map(|(i, &x)| (x - i as f64 / n).abs().max((x - (i + 1) as f64 / n).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.1, "KS statistic {ks}");
    }

    #[test]
    fn concentrated_histogram_concentrates_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let prev = stratified::<ChaCha8Rng>(0.0, 0.9, 64, 1.0, None);
        let mut w = vec![0.0; 64];
        w[20] = 1.0;
        let (lo, hi) = (prev.s_edges[20], prev.s_edges[21]);
        let mut inside = 0;
        let mut total = 0;
        for _ in 0..200 {
            let r = resample(&prev, &w, 32, 1e-3, 1.0, Some(&mut rng));
            for i in 0..r.len() {
                let mid = 0.5 * (r.s_edges[i] + r.s_edges[i + 1]);
                inside += (mid >= lo && mid <= hi) as usize;
                total += 1;
            }
        }
        assert!(inside as f64 >= 0.9 * total as f64, "{inside}/{total}");
    }

    #[test]
    fn deterministic_resampling_without_rng() {
        let prev = stratified::<ChaCha8Rng>(0.0, 0.9, 8, 1.0, None);
        let w = [0.1, 0.3, 0.0, 0.2, 0.0, 0.0, 0.1, 0.05];
        assert_eq!(resample::<ChaCha8Rng>(&prev, &w, 6, 1e-3, 1.0, None), resample::<ChaCha8Rng>(&prev, &w, 6, 1e-3, 1.0, None));
    }
}
