//! Depth supervision and the composite training loss.
//!
//! `total = L_rgb + λ3 L_dist + λ4 L_interlevel + λ1 (L_depth + L_sight)
//!        + λ2 (L_rgb_aug + λ1 (L_depth_aug + L_sight_aug))`
//!
//! Real-view and augmented-view rays are normalized separately. Distortion
//! and interlevel terms are averaged over every ray of the batch.

pub mod curriculum;
pub mod losses;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::field::{RayGrads, RayRender};

pub use curriculum::{CurriculumConfig, CurriculumState};
pub use losses::{
    distortion_loss, gaussian_interval_mass, interlevel_loss, is_reliable, l2_depth_loss, line_of_sight_loss, select_reliable, sight_targets,
    SightMode,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Augmented,
}

/// Supervision attached to one rendered ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayTarget {
    pub rgb: [f32; 3],
    /// Lidar depth along the ray (metric ray distance), when the pixel has one.
    pub depth: Option<f32>,
    pub source: Source,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// λ1, depth supervision.
    pub depth: f64,
    /// λ2, augmented views.
    pub aug: f64,
    /// λ3, distortion.
    pub distortion: f64,
    /// λ4, interlevel.
    pub interlevel: f64,
    /// Width of the line-of-sight target (m).
    pub eps_n: f64,
    pub sight_mode: SightMode,
    /// Apply the curriculum selector; otherwise every depth sample is used.
    pub robust: bool,
    /// Measure `L_depth` in scene-radius units instead of metres.
    pub normalized_depth: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            depth: 0.0005,
            aug: 1.0,
            distortion: 0.005,
            interlevel: 1.0,
            eps_n: 0.15,
            sight_mode: SightMode::Cdf,
            robust: true,
            normalized_depth: true,
        }
    }
}

impl LossWeights {
    /// Plain photometric training.
    pub fn baseline() -> Self {
        Self {
            depth: 0.0,
            aug: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = [self.depth, self.aug, self.distortion, self.interlevel];
        if l.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return invalid(format!("loss weights must be finite and non-negative: {l:?}"));
        }
        if !(self.eps_n > 0.0) || !self.eps_n.is_finite() {
            return invalid(format!("eps_n must be positive, got {}", self.eps_n));
        }
        Ok(())
    }
}

/// Depth-sample counts of one source.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionStats {
    pub samples: usize,
    pub reliable: usize,
}

impl SelectionStats {
    pub fn fraction(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.reliable as f64 / self.samples as f64
        }
    }
}

/// Unweighted terms; `None` marks a term switched off by configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rgb: f64,
    pub distortion: f64,
    pub interlevel: f64,
    pub depth: Option<f64>,
    pub sight: Option<f64>,
    pub rgb_aug: Option<f64>,
    pub depth_aug: Option<f64>,
    pub sight_aug: Option<f64>,
    pub total: f64,
    pub real: SelectionStats,
    pub augmented: SelectionStats,
}

pub const CSV_HEADER: &str = "iteration,rgb,distortion,interlevel,depth,sight,rgb_aug,depth_aug,sight_aug,total,eps_t,eps_o,reliable_fraction";

impl LossBreakdown {
    /// Each present term multiplied by its coefficient in the total.
    pub fn weighted_terms(&self, w: &LossWeights) -> Vec<(&'static str, f64)> {
        let mut v = vec![("rgb", self.rgb), ("distortion", w.distortion * self.distortion), ("interlevel", w.interlevel * self.interlevel)];
        let opt = [
            ("depth", self.depth, w.depth),
            ("sight", self.sight, w.depth),
            ("rgb_aug", self.rgb_aug, w.aug),
            ("depth_aug", self.depth_aug, w.aug * w.depth),
            ("sight_aug", self.sight_aug, w.aug * w.depth),
        ];
        v.extend(opt.iter().filter_map(|(n, t, c)| t.map(|t| (*n, c * t))));
        v
    }

    /// Names of the terms present.
    pub fn present_terms(&self) -> Vec<&'static str> {
        self.weighted_terms(&LossWeights::default()).into_iter().map(|(n, _)| n).collect()
    }

    pub fn reliable_fraction(&self) -> f64 {
        let s = self.real.samples + self.augmented.samples;
        if s == 0 {
            0.0
        } else {
            (self.real.reliable + self.augmented.reliable) as f64 / s as f64
        }
    }

    pub fn csv_row(&self, iteration: u64, state: &CurriculumState) -> String {
        let o = |v: Option<f64>| v.map(|x| format!("{x:.9e}")).unwrap_or_default();
        format!(
            "{iteration},{:.9e},{:.9e},{:.9e},{},{},{},{},{},{:.9e},{},{},{:.6}",
            self.rgb,
            self.distortion,
            self.interlevel,
            o(self.depth),
            o(self.sight),
            o(self.rgb_aug),
            o(self.depth_aug),
            o(self.sight_aug),
            self.total,
            state.eps_t,
            state.eps_o,
            self.reliable_fraction()
        )
    }
}

#[derive(Debug, Clone)]
pub struct LossResult {
    pub breakdown: LossBreakdown,
    pub grads: Vec<RayGrads>,
    /// Per ray: `Some(selected)` for rays carrying depth.
    pub reliable: Vec<Option<bool>>,
}

#[derive(Default)]
struct Group {
    rays: Vec<usize>,
    depth: Vec<usize>,
}

/// Evaluates the composite loss on a rendered batch and the upstream
/// gradients for `RadianceField::backward`.
/// `depth_unit` is the length in metres of one unit of `L_depth` (the scene
/// radius when depths are normalized); selection always compares metres.
pub fn total_loss(rays: &[RayRender], targets: &[RayTarget], state: &CurriculumState, w: &LossWeights, depth_unit: f64) -> Result<LossResult> {
    if rays.len() != targets.len() {
        return invalid("one target per rendered ray is required");
    }
    w.validate()?;
    if !(depth_unit > 0.0) || !depth_unit.is_finite() {
        return invalid(format!("depth unit must be positive, got {depth_unit}"));
    }
    let n_stages = rays.first().map_or(0, |r| r.stages.len());
    let mut grads: Vec<RayGrads> = rays
        .iter()
        .map(|r| RayGrads {
            d_weights: Some(vec![0.0; r.render.weights.len()]),
            d_proposal_weights: vec![None; r.stages.len().saturating_sub(1)],
            ..Default::default()
        })
        .collect();
    let mut reliable = vec![None; rays.len()];
    let mut real = Group::default();
    let mut aug = Group::default();
    for (i, t) in targets.iter().enumerate() {
        let g = if t.source == Source::Real { &mut real } else { &mut aug };
        g.rays.push(i);
        if let Some(d) = t.depth {
            if !(d > 0.0) || !d.is_finite() {
                return invalid(format!("depth target {d} on ray {i} is not positive"));
            }
            let keep = !w.robust || is_reliable(d, rays[i].render.depth, state);
            reliable[i] = Some(keep);
            if keep {
                g.depth.push(i);
            }
        }
    }
    let mut b = LossBreakdown::default();
    let stats = |g: &Group| SelectionStats {
        samples: g.rays.iter().filter(|&&i| targets[i].depth.is_some()).count(),
        reliable: g.depth.len(),
    };
    b.real = stats(&real);
    b.augmented = stats(&aug);

    let mut total = 0.0f64;
    // photometric terms
    let rgb_term = |g: &Group, coef: f64, grads: &mut [RayGrads]| -> f64 {
        if g.rays.is_empty() {
            return 0.0;
        }
        let denom = 3.0 * g.rays.len() as f64;
        let mut sum = 0.0;
        for &i in &g.rays {
            for k in 0..3 {
                let e = rays[i].render.rgb[k] as f64 - targets[i].rgb[k] as f64;
                sum += e * e;
                grads[i].d_rgb[k] += (coef * 2.0 * e / denom) as f32;
            }
        }
        sum / denom
    };
    b.rgb = rgb_term(&real, 1.0, &mut grads);
    total += b.rgb;
    if w.aug > 0.0 {
        let v = rgb_term(&aug, w.aug, &mut grads);
        b.rgb_aug = Some(v);
        total += w.aug * v;
    }

    // depth terms over the selected samples
    let depth_terms = |g: &Group, coef: f64, grads: &mut [RayGrads]| -> Result<(f64, f64)> {
        let n = g.depth.len();
        if n == 0 {
            return Ok((0.0, 0.0));
        }
        let gt: Vec<f32> = g.depth.iter().map(|&i| targets[i].depth.unwrap_or(0.0)).collect();
        let unit = depth_unit as f32;
        let rendered_u: Vec<f32> = g.depth.iter().map(|&i| rays[i].render.depth / unit).collect();
        let gt_u: Vec<f32> = gt.iter().map(|d| d / unit).collect();
        let (ld, gd) = l2_depth_loss(&rendered_u, &gt_u, &vec![true; n]);
        let mut ls = 0.0;
        for (k, &i) in g.depth.iter().enumerate() {
            grads[i].d_depth += (coef * gd[k] as f64 / depth_unit) as f32;
            let main = rays[i].stages.last().expect("rendered rays have stages");
            let (l, gw) = line_of_sight_loss(&rays[i].render.weights, &main.t_edges, gt[k], w.eps_n, w.sight_mode)?;
            ls += l;
            let dw = grads[i].d_weights.as_mut().expect("allocated above");
            for (a, v) in dw.iter_mut().zip(&gw) {
                *a += (coef * *v as f64 / n as f64) as f32;
            }
        }
        Ok((ld, ls / n as f64))
    };
    if w.depth > 0.0 {
        let (ld, ls) = depth_terms(&real, w.depth, &mut grads)?;
        b.depth = Some(ld);
        b.sight = Some(ls);
        total += w.depth * (ld + ls);
        if w.aug > 0.0 {
            let (ld, ls) = depth_terms(&aug, w.aug * w.depth, &mut grads)?;
            b.depth_aug = Some(ld);
            b.sight_aug = Some(ls);
            total += w.aug * w.depth * (ld + ls);
        }
    }

    // regularizers over the whole batch
    let nr = rays.len().max(1) as f64;
    if w.distortion > 0.0 || w.interlevel > 0.0 {
        for (i, r) in rays.iter().enumerate() {
            let main = r.stages.last().expect("rendered rays have stages");
            let (ld, gd) = distortion_loss(&r.render.weights, &main.s_edges);
            b.distortion += ld / nr;
            let dw = grads[i].d_weights.as_mut().expect("allocated above");
            for (a, v) in dw.iter_mut().zip(&gd) {
                *a += (w.distortion * *v as f64 / nr) as f32;
            }
            let per = nr * r.render.weights.len().max(1) as f64;
            for k in 0..n_stages.saturating_sub(1) {
                let (li, gi) = interlevel_loss(&main.s_edges, &r.render.weights, &r.stages[k].s_edges, &r.stage_weights[k]);
                b.interlevel += li / per;
                grads[i].d_proposal_weights[k] = Some(gi.iter().map(|v| (w.interlevel * *v as f64 / per) as f32).collect());
            }
        }
    }
    total += w.distortion * b.distortion + w.interlevel * b.interlevel;
    b.total = total;
    Ok(LossResult {
        breakdown: b,
        grads,
        reliable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{volume_render, RaySamples};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ray(rng: &mut ChaCha8Rng, stages: usize) -> (RayRender, Vec<Vec<f32>>) {
        let mut st = Vec::new();
        let mut sig = Vec::new();
        let mut sw = Vec::new();
        for k in 0..stages {
            let n = 8 + 4 * (stages - k);
            let mut s: Vec<f32> = (0..n - 1).map(|_| rng.random_range(0.05..0.7)).collect();
            s.extend([0.05, 0.7]);
            s.sort_by(f32::total_cmp);
            let rs = RaySamples::from_s_edges(s, 10.0);
            let sg: Vec<f32> = (0..n).map(|_| rng.random_range(0.0..0.5)).collect();
            let w = crate::field::compositing_weights(&rs, &sg);
            st.push(rs);
            sw.push(w);
            sig.push(sg);
        }
        let main = st.last().unwrap();
        let col: Vec<[f32; 3]> = (0..main.len()).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let render = volume_render(main, sig.last().unwrap(), &col);
        (
            RayRender {
                stages: st,
                stage_weights: sw,
                render,
            },
            sig,
        )
    }

    fn batch(seed: u64) -> (Vec<RayRender>, Vec<RayTarget>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rays = Vec::new();
        let mut tg = Vec::new();
        for i in 0..12 {
            let (r, _) = ray(&mut rng, 3);
            let depth = (i % 3 != 0).then(|| rng.random_range(1.0..30.0));
            rays.push(r);
            tg.push(RayTarget {
                rgb: [rng.random(), rng.random(), rng.random()],
                depth,
                source: if i < 8 { Source::Real } else { Source::Augmented },
            });
        }
        (rays, tg)
    }

    #[test]
    fn terms_sum_to_total() {
        let (rays, tg) = batch(1);
        let st = CurriculumState {
            eps_t: 20.0,
            eps_o: 5.0,
            iteration: 0,
        };
        for w in [LossWeights::default(), LossWeights::baseline(), LossWeights { robust: false, ..Default::default() }] {
            let r = total_loss(&rays, &tg, &st, &w, 1.0).unwrap();
            let s: f64 = r.breakdown.weighted_terms(&w).iter().map(|t| t.1).sum();
            assert!((s - r.breakdown.total).abs() <= 1e-6, "{s} vs {}", r.breakdown.total);
        }
    }

    #[test]
    fn baseline_has_only_photometric_terms() {
        let (rays, tg) = batch(2);
        let st = CurriculumState::new(&CurriculumConfig::default());
        let r = total_loss(&rays, &tg, &st, &LossWeights::baseline(), 1.0).unwrap();
        assert_eq!(r.breakdown.present_terms(), vec!["rgb", "distortion", "interlevel"]);
        assert!(r.grads.iter().all(|g| g.d_depth == 0.0));
        let full = total_loss(&rays, &tg, &st, &LossWeights::default(), 1.0).unwrap();
        assert_eq!(full.breakdown.present_terms().len(), 8);
        // the baseline total equals the full total without the optional terms
        assert!((full.breakdown.rgb - r.breakdown.rgb).abs() < 1e-15);
    }

    #[test]
    fn selection_follows_curriculum() {
        let (rays, tg) = batch(3);
        let tight = CurriculumState {
            eps_t: 0.5,
            eps_o: 0.1,
            iteration: 0,
        };
        let r = total_loss(&rays, &tg, &tight, &LossWeights::default(), 1.0).unwrap();
        assert_eq!(r.breakdown.real.reliable + r.breakdown.augmented.reliable, 0);
        assert_eq!(r.breakdown.depth, Some(0.0));
        let plain = total_loss(&rays, &tg, &tight, &LossWeights { robust: false, ..Default::default() }, 1.0).unwrap();
        assert_eq!(plain.breakdown.real.reliable, plain.breakdown.real.samples);
        for (i, t) in tg.iter().enumerate() {
            assert_eq!(plain.reliable[i].is_some(), t.depth.is_some());
        }
    }

    #[test]
    fn csv_row_has_header_arity() {
        let (rays, tg) = batch(4);
        let st = CurriculumState::new(&CurriculumConfig::default());
        let r = total_loss(&rays, &tg, &st, &LossWeights::baseline(), 1.0).unwrap();
        let row = r.breakdown.csv_row(3, &st);
        assert_eq!(row.split(',').count(), CSV_HEADER.split(',').count());
        assert!(row.starts_with("3,"));
    }

    /// Every gradient the total loss emits, checked against central
    /// differences of the total under perturbed rendered outputs.
    #[test]
    fn gradients_match_perturbed_totals() {
        let (rays, tg) = batch(5);
        let st = CurriculumState {
            eps_t: 40.0,
            eps_o: 40.0,
            iteration: 0,
        };
        let w = LossWeights {
            depth: 0.3,
            aug: 0.7,
            // the interlevel term holds the final weights constant
            interlevel: 0.0,
            ..Default::default()
        };
        let r = total_loss(&rays, &tg, &st, &w, 1.0).unwrap();
        let eval = |rs: &[RayRender]| total_loss(rs, &tg, &st, &w, 1.0).unwrap().breakdown.total;
        let h = 1e-3f32;
        let check = |analytic: f32, plus: f64, minus: f64| {
            let num = (plus - minus) / (2.0 * h as f64);
            assert!((analytic as f64 - num).abs() <= 1e-3 * num.abs().max(1e-2), "{analytic} vs {num}");
        };
        for i in [0usize, 4, 9] {
            for k in 0..3 {
                let mut p = rays.clone();
                p[i].render.rgb[k] += h;
                let mut m = rays.clone();
                m[i].render.rgb[k] -= h;
                check(r.grads[i].d_rgb[k], eval(&p), eval(&m));
            }
            if tg[i].depth.is_some() {
                let mut p = rays.clone();
                p[i].render.depth += h;
                let mut m = rays.clone();
                m[i].render.depth -= h;
                check(r.grads[i].d_depth, eval(&p), eval(&m));
            }
            for j in [0usize, 5] {
                let mut p = rays.clone();
                p[i].render.weights[j] += h;
                let mut m = rays.clone();
                m[i].render.weights[j] -= h;
                check(r.grads[i].d_weights.as_ref().unwrap()[j], eval(&p), eval(&m));
            }
        }
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let (rays, mut tg) = batch(6);
        let st = CurriculumState::new(&CurriculumConfig::default());
        assert!(total_loss(&rays[..3], &tg, &st, &LossWeights::default(), 1.0).is_err());
        tg[1].depth = Some(-1.0);
        assert!(total_loss(&rays, &tg, &st, &LossWeights::default(), 1.0).is_err());
        let bad = LossWeights {
            eps_n: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
