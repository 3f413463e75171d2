//! Near-to-far depth curriculum: the valid depth threshold grows and the
//! occlusion offset shrinks geometrically until they reach their caps.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurriculumConfig {
    /// Initial valid depth threshold (m).
    pub eps_t0: f64,
    /// Maximum valid depth threshold (m).
    pub eps_t_max: f64,
    pub alpha_t: f64,
    /// Initial occlusion offset (m).
    pub eps_o0: f64,
    /// Minimum occlusion offset (m).
    pub eps_o_min: f64,
    pub alpha_o: f64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            eps_t0: 10.0,
            eps_t_max: 100.0,
            alpha_t: 1.00004,
            eps_o0: 1.0,
            eps_o_min: 0.15,
            alpha_o: 0.99995,
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.eps_t0 > 0.0
            && self.eps_t0 <= self.eps_t_max
            && self.alpha_t > 1.0
            && self.eps_o_min > 0.0
            && self.eps_o_min <= self.eps_o0
            && self.alpha_o > 0.0
            && self.alpha_o < 1.0
            && [self.eps_t0, self.eps_t_max, self.alpha_t, self.eps_o0, self.eps_o_min, self.alpha_o].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            invalid(format!("bad curriculum {self:?}"))
        }
    }

    /// First iteration at which the threshold sits at its cap, in closed form.
    pub fn threshold_cap_step(&self) -> u64 {
        ((self.eps_t_max / self.eps_t0).ln() / self.alpha_t.ln()).ceil().max(0.0) as u64
    }

    /// First iteration at which the offset sits at its floor, in closed form.
    pub fn offset_floor_step(&self) -> u64 {
        ((self.eps_o_min / self.eps_o0).ln() / self.alpha_o.ln()).ceil().max(0.0) as u64
    }

    /// State after `m` steps, without iterating.
    pub fn state_at(&self, m: u64) -> CurriculumState {
        let mi = m.min(i32::MAX as u64) as i32;
        CurriculumState {
            eps_t: (self.eps_t0 * self.alpha_t.powi(mi)).min(self.eps_t_max),
            eps_o: (self.eps_o0 * self.alpha_o.powi(mi)).max(self.eps_o_min),
            iteration: m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub eps_t: f64,
    pub eps_o: f64,
    pub iteration: u64,
}

impl CurriculumState {
    pub fn new(cfg: &CurriculumConfig) -> Self {
        Self {
            eps_t: cfg.eps_t0,
            eps_o: cfg.eps_o0,
            iteration: 0,
        }
    }

    pub fn step(&mut self, cfg: &CurriculumConfig) {
        self.eps_t = (cfg.alpha_t * self.eps_t).min(cfg.eps_t_max);
        self.eps_o = (cfg.alpha_o * self.eps_o).max(cfg.eps_o_min);
        self.iteration += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_step_from_defaults() {
        let cfg = CurriculumConfig::default();
        let mut s = CurriculumState::new(&cfg);
        s.step(&cfg);
        assert!((s.eps_t - 10.0004).abs() < 1e-12);
        assert!((s.eps_o - 0.99995).abs() < 1e-12);
        assert_eq!(s.iteration, 1);
    }

    #[test]
    fn caps_bind() {
        let cfg = CurriculumConfig::default();
        let mut s = CurriculumState {
            eps_t: 100.0,
            eps_o: 0.15,
            iteration: 7,
        };
        s.step(&cfg);
        assert_eq!(s.eps_t, 100.0);
        assert_eq!(s.eps_o, 0.15);
    }

    #[test]
    fn iterated_schedule_matches_closed_form() {
        let cfg = CurriculumConfig::default();
        let mut s = CurriculumState::new(&cfg);
        let (mut hit_t, mut hit_o) = (None, None);
        let mut prev = s;
        while hit_t.is_none() || hit_o.is_none() {
            s.step(&cfg);
            assert!(s.eps_t >= prev.eps_t && s.eps_o <= prev.eps_o);
            assert!(s.eps_o >= cfg.eps_o_min && s.eps_t <= cfg.eps_t_max);
            if hit_t.is_none() && s.eps_t == cfg.eps_t_max {
                hit_t = Some(s.iteration);
            }
            if hit_o.is_none() && s.eps_o == cfg.eps_o_min {
                hit_o = Some(s.iteration);
            }
            prev = s;
        }
        let (t, o) = (hit_t.unwrap() as i64, hit_o.unwrap() as i64);
        assert!((t - cfg.threshold_cap_step() as i64).abs() <= 1, "{t}");
        assert!((o - cfg.offset_floor_step() as i64).abs() <= 1, "{o}");
        let late = cfg.state_at(30_000);
        let mut it = CurriculumState::new(&cfg);
        (0..30_000).for_each(|_| it.step(&cfg));
        assert!((late.eps_t - it.eps_t).abs() < 1e-9 && (late.eps_o - it.eps_o).abs() < 1e-9);
    }

    #[test]
    fn invalid_rates_are_rejected() {
        let mut c = CurriculumConfig::default();
        c.alpha_t = 0.9;
        assert!(c.validate().is_err());
        let mut c = CurriculumConfig::default();
        c.eps_o_min = 2.0;
        assert!(c.validate().is_err());
    }
}
