//! Central finite-difference gradient oracle. It only evaluates forward
//! passes, so it is independent of every backward implementation it checks.

use rand::Rng;

use crate::nn::{ParamId, ParamStore};

#[derive(Debug, Clone)]
pub struct FdConfig {
    pub probes: usize,
    /// Step relative to `max(1, |θ|)`.
    pub step: f32,
    pub rel_tol: f64,
    /// Relative errors are computed against `max(|analytic|, |numeric|, abs_floor)`.
    pub abs_floor: f64,
    /// Probes are drawn from entries whose gradient is at least this fraction
    /// of the block's largest; smaller ones are dominated by f32 rounding.
    pub min_grad_fraction: f32,
    /// Restrict probes to these blocks (all blocks when empty).
    pub blocks: Vec<ParamId>,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            probes: 24,
            step: 1e-2,
            rel_tol: 1e-3,
            abs_floor: 1e-4,
            min_grad_fraction: 0.05,
            blocks: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FdReport {
    pub probes: usize,
    /// Probes whose two step sizes disagreed (a kink was crossed) and were redrawn.
    pub non_smooth: usize,
    pub max_rel_err: f64,
    pub failures: Vec<FdFailure>,
    pub rel_tol: f64,
    /// Relative error of every certified probe, in probe order.
    pub rel_errors: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FdFailure {
    pub block: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.probes > 0 && self.failures.is_empty()
    }

    /// The `q`-quantile of the relative errors (`q` in `[0, 1]`).
    pub fn quantile(&self, q: f64) -> f64 {
        let mut v = self.rel_errors.clone();
        if v.is_empty() {
            return f64::INFINITY;
        }
        v.sort_by(f64::total_cmp);
        v[((v.len() - 1) as f64 * q).round() as usize]
    }
}

const KINK_TOL: f64 = 1e-3;

/// Richardson-extrapolated central difference at `h`, or `None` when the
/// samples at h, h/2 and h/4 cannot certify it to `0.3 rel_tol`, including
/// when the loss change is too small to resolve in f32. Besides the
/// agreement of the two extrapolations, second differences must scale with
/// `h²`; a kink inside the stencil makes them scale with `h`.
fn probe(mut eval: impl FnMut(f32) -> f64, h: f32, rel_tol: f64) -> Option<f64> {
    let f0 = eval(0.0);
    let steps = [h, 0.5 * h, 0.25 * h];
    let mut n = [0.0f64; 3];
    let mut s = [0.0f64; 3];
    for (k, &hk) in steps.iter().enumerate() {
        let (fp, fm) = (eval(hk), eval(-hk));
        n[k] = (fp - fm) / (2.0 * hk as f64);
        s[k] = fp + fm - 2.0 * f0;
    }
    let scale = n.iter().fold(1e-12, |m: f64, v| m.max(v.abs()));
    // differences below this are rounding of an f32 forward pass
    let noise = 32.0 * f32::EPSILON as f64 * f0.abs().max(1e-3);
    // the smallest step must still move the loss far above its rounding
    if 2.0 * steps[2] as f64 * scale * 0.3 * rel_tol < f32::EPSILON as f64 * f0.abs() {
        return None;
    }
    for k in 0..2 {
        let c = (s[k] - 4.0 * s[k + 1]).abs();
        if c > noise && c / (2.0 * steps[k] as f64) / scale > KINK_TOL {
            return None;
        }
    }
    let r1 = (4.0 * n[1] - n[0]) / 3.0;
    let r2 = (4.0 * n[2] - n[1]) / 3.0;
    if (r1 - r2).abs() > 0.3 * rel_tol * scale {
        return None;
    }
    Some(r2)
}

/// Tries steps from `10 h` down to `h / 10` and keeps the first certified
/// estimate: large steps average out rounding, small ones avoid kinks.
fn probe_ladder(mut eval: impl FnMut(f32) -> f64, h: f32, rel_tol: f64) -> Option<f64> {
    [10.0, 3.0, 1.0, 1.0 / 3.0, 0.1].iter().find_map(|f| probe(&mut eval, h * f, rel_tol))
}

fn record(report: &mut FdReport, cfg: &FdConfig, block: &str, index: usize, analytic: f64, numeric: f64) {
    let denom = analytic.abs().max(numeric.abs()).max(cfg.abs_floor);
    let rel = (analytic - numeric).abs() / denom;
    report.max_rel_err = report.max_rel_err.max(rel);
    report.rel_errors.push(rel);
    report.probes += 1;
    if rel >= cfg.rel_tol {
        report.failures.push(FdFailure {
            block: block.to_string(),
            index,
            analytic,
            numeric,
        });
    }
}

fn significant(g: &[f32], fraction: f32) -> Vec<usize> {
    let gmax = g.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    let picked: Vec<usize> = (0..g.len()).filter(|&i| gmax > 0.0 && g[i].abs() >= fraction * gmax).collect();
    if picked.is_empty() {
        (0..g.len()).collect()
    } else {
        picked
    }
}

/// Compares `store`'s accumulated gradients (already filled by an analytic
/// backward pass of `loss`) with central differences of `loss`.
pub fn check_gradients(store: &ParamStore, mut loss: impl FnMut(&ParamStore) -> f64, cfg: &FdConfig, rng: &mut impl Rng) -> FdReport {
    let blocks: Vec<ParamId> = if cfg.blocks.is_empty() {
        store.ids().filter(|id| !store.value(*id).is_empty()).collect()
    } else {
        cfg.blocks.clone()
    };
    let mut candidates: Vec<(ParamId, usize)> = Vec::new();
    for &id in &blocks {
        candidates.extend(significant(store.grad(id), cfg.min_grad_fraction).into_iter().map(|i| (id, i)));
    }
    let mut report = FdReport {
        rel_tol: cfg.rel_tol,
        ..Default::default()
    };
    if candidates.is_empty() {
        return report;
    }
    let mut work = store.clone();
    let mut attempts = 0;
    while report.probes < cfg.probes && attempts < cfg.probes * 20 {
        attempts += 1;
        let (id, i) = candidates[rng.random_range(0..candidates.len())];
        let orig = store.value(id)[i];
        let h = cfg.step * orig.abs().max(1.0);
        let eval = |delta: f32| {
            work.value_mut(id)[i] = orig + delta;
            let v = loss(&work);
            work.value_mut(id)[i] = orig;
            v
        };
        match probe_ladder(eval, h, cfg.rel_tol) {
            Some(numeric) => record(&mut report, cfg, &store.block(id).name, i, store.grad(id)[i] as f64, numeric),
            None => report.non_smooth += 1,
        }
    }
    report
}

/// Finite-difference check of the gradient of `loss` with respect to a plain
/// input vector `x`, with the same probe and kink-rejection policy as
/// [`check_gradients`].
pub fn check_input_gradient(
    x: &[f32],
    analytic: &[f32],
    mut loss: impl FnMut(&[f32]) -> f64,
    cfg: &FdConfig,
    rng: &mut impl Rng,
) -> FdReport {
    assert_eq!(x.len(), analytic.len());
    let candidates = significant(analytic, cfg.min_grad_fraction);
    let mut report = FdReport {
        rel_tol: cfg.rel_tol,
        ..Default::default()
    };
    if candidates.is_empty() {
        return report;
    }
    let mut work = x.to_vec();
    let mut attempts = 0;
    while report.probes < cfg.probes && attempts < cfg.probes * 20 {
        attempts += 1;
        let i = candidates[rng.random_range(0..candidates.len())];
        let orig = x[i];
        let h = cfg.step * orig.abs().max(1.0);
        let eval = |delta: f32| {
            work[i] = orig + delta;
            let v = loss(&work);
            work[i] = orig;
            v
        };
        match probe_ladder(eval, h, cfg.rel_tol) {
            Some(numeric) => record(&mut report, cfg, "input", i, analytic[i] as f64, numeric),
            None => report.non_smooth += 1,
        }
    }
    report
}

/// Directional check: a random handful of entries with significant gradient
/// are moved together along the sign of their gradient and `g·v` is compared with the
/// central difference. Useful when each entry alone has a gradient close to
/// the rounding floor of the loss.
pub fn check_directional(store: &ParamStore, mut loss: impl FnMut(&ParamStore) -> f64, cfg: &FdConfig, rng: &mut impl Rng) -> FdReport {
    const SUPPORT: usize = 16;
    let blocks: Vec<ParamId> = if cfg.blocks.is_empty() {
        store.ids().filter(|id| !store.value(*id).is_empty()).collect()
    } else {
        cfg.blocks.clone()
    };
    let mut candidates: Vec<(ParamId, usize)> = Vec::new();
    for &id in &blocks {
        candidates.extend(significant(store.grad(id), cfg.min_grad_fraction).into_iter().map(|i| (id, i)));
    }
    let mut report = FdReport {
        rel_tol: cfg.rel_tol,
        ..Default::default()
    };
    if candidates.is_empty() {
        return report;
    }
    let mut work = store.clone();
    let mut attempts = 0;
    while report.probes < cfg.probes && attempts < cfg.probes * 20 {
        attempts += 1;
        let picks: Vec<(ParamId, usize, f32)> = rand::seq::index::sample(rng, candidates.len(), SUPPORT.min(candidates.len()))
            .into_iter()
            .map(|c| {
                let (id, i) = candidates[c];
                (id, i, store.grad(id)[i].signum())
            })
            .collect();
        let analytic: f64 = picks.iter().map(|&(id, i, s)| (store.grad(id)[i] * s) as f64).sum();
        let eval = |delta: f32| {
            for &(id, i, s) in &picks {
                work.value_mut(id)[i] = store.value(id)[i] + delta * s;
            }
            let v = loss(&work);
            for &(id, i, _) in &picks {
                work.value_mut(id)[i] = store.value(id)[i];
            }
            v
        };
        match probe_ladder(eval, cfg.step, cfg.rel_tol) {
            Some(numeric) => record(&mut report, cfg, "direction", attempts, analytic, numeric),
            None => report.non_smooth += 1,
        }
    }
    report
}
