//! The optimization loop, checkpoints and held-out evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::prepare::{PreparedData, RayPool};
use super::TrainingConfig;
use crate::data::{pixel_ray, Dataset};
use crate::error::{invalid, Error, Result};
use crate::field::{LidarScene, RadianceField, Ray};
use crate::geometry::SE3Pose;
use crate::image_buf::RgbImage;
use crate::metrics::{psnr, ssim};
use crate::nn::{config_hash, BlockMeta, Checkpoint, OptimizerState, ParamStore, StepOutcome};
use crate::supervision::{total_loss, CurriculumState, LossBreakdown, SelectionStats, Source};
use crate::synthesis::SparseDepthMap;

/// Depth error separating ghost samples from clean ones (m).
pub const GHOST_THRESHOLD: f32 = 1.0;
const RENDER_CHUNK: usize = 4096;

fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(s);
    r
}

pub struct TrainState {
    pub store: ParamStore,
    pub optimizer: OptimizerState,
    pub curriculum: CurriculumState,
    pub iteration: u64,
    pub batch_rng: ChaCha8Rng,
    pub jitter_rng: ChaCha8Rng,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Iteration the step ran at (before advancing).
    pub iteration: u64,
    pub breakdown: LossBreakdown,
    pub skipped: bool,
    pub lr: f64,
    /// Real-view depth samples whose target is off the reference by more
    /// than [`GHOST_THRESHOLD`], and their selection.
    pub ghost: SelectionStats,
    pub clean: SelectionStats,
    /// Curriculum state used by this step.
    pub eps_t: f64,
    pub eps_o: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub frame: usize,
    pub psnr: f64,
    pub ssim: f64,
    /// Mean absolute rendered depth error over pixels with reference depth.
    pub depth_mae: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RenderedView {
    pub image: RgbImage,
    /// Expected ray distance per pixel.
    pub depth: Vec<f32>,
}

impl RenderedView {
    pub fn depth_map(&self) -> Result<SparseDepthMap> {
        SparseDepthMap::from_depth(self.image.width, self.image.height, self.depth.iter().map(|d| d.max(0.0)).collect())
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub views: Vec<ViewMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_depth_mae: Option<f64>,
    pub renders: Vec<RenderedView>,
}

pub struct Trainer {
    pub config: TrainingConfig,
    pub data: PreparedData,
    pub field: RadianceField,
    pub lidar: Option<LidarScene>,
    pub state: TrainState,
    pool: RayPool,
}

impl Trainer {
    /// Prepares `train` frames of `dataset` and initializes the field.
    pub fn new(config: TrainingConfig, dataset: &Dataset, train: &[usize]) -> Result<Self> {
        config.validate()?;
        dataset.validate()?;
        let data = PreparedData::build(dataset, train, &config, &mut stream(config.seed, 12))?;
        let pool = RayPool::new(&data)?;
        let lidar = if config.field.uses_lidar() {
            Some(LidarScene::build(&data.lidar_points, &config.field.encoder, &config.field.lidar)?)
        } else {
            None
        };
        let mut store = ParamStore::new();
        let field = RadianceField::new(&mut store, config.field.clone(), data.bounds, config.seed)?;
        let mut opt_cfg = config.optimizer;
        opt_cfg.schedule.horizon = config.iterations;
        let optimizer = OptimizerState::new(opt_cfg, &store);
        let state = TrainState {
            store,
            optimizer,
            curriculum: CurriculumState::new(&config.curriculum),
            iteration: 0,
            batch_rng: stream(config.seed, 10),
            jitter_rng: stream(config.seed, 11),
        };
        log::info!(
            "training on {} views ({} augmented), {} pixels in the pool, {} lidar points",
            data.views.len(),
            data.augmented.len(),
            pool.len(),
            data.lidar_points.len()
        );
        Ok(Self {
            config,
            data,
            field,
            lidar,
            state,
            pool,
        })
    }

    pub fn pool(&self) -> &RayPool {
        &self.pool
    }

    fn advance(&mut self) {
        self.state.curriculum.step(&self.config.curriculum);
        self.state.iteration += 1;
    }

    pub fn step(&mut self) -> Result<StepReport> {
        let st = &mut self.state;
        let batch = self.pool.sample(&self.data, self.config.rays_per_batch, &mut st.batch_rng);
        let out = self.field.forward(&st.store, self.lidar.as_ref(), &batch.rays, Some(&mut st.jitter_rng))?;
        let cur = st.curriculum;
        let unit = if self.config.loss.normalized_depth { self.data.bounds.radius } else { 1.0 };
        let res = total_loss(&out.rays, &batch.targets, &cur, &self.config.loss, unit)?;
        let mut report = StepReport {
            iteration: st.iteration,
            breakdown: res.breakdown,
            skipped: false,
            lr: st.optimizer.current_lr(),
            ghost: SelectionStats::default(),
            clean: SelectionStats::default(),
            eps_t: cur.eps_t,
            eps_o: cur.eps_o,
        };
        for ((t, gt), sel) in batch.targets.iter().zip(&batch.gt_depth).zip(&res.reliable) {
            if let (Source::Real, Some(d), Some(g), Some(keep)) = (t.source, t.depth, gt, sel) {
                let s = if (d - g).abs() > GHOST_THRESHOLD { &mut report.ghost } else { &mut report.clean };
                s.samples += 1;
                s.reliable += usize::from(*keep);
            }
        }
        if !report.breakdown.total.is_finite() {
            log::warn!("iteration {}: non-finite loss, step skipped", st.iteration);
            st.optimizer.step += 1;
            report.skipped = true;
            self.advance();
            return Ok(report);
        }
        st.store.zero_grads();
        self.field.backward(&mut st.store, self.lidar.as_ref(), &out, &res.grads)?;
        if st.optimizer.step(&mut st.store) == StepOutcome::SkippedNonFinite {
            log::warn!("iteration {}: non-finite gradient, update skipped", st.iteration);
            report.skipped = true;
        }
        self.advance();
        Ok(report)
    }

    /// Runs until `config.iterations`, calling `on_step` after each step.
    pub fn run(&mut self, mut on_step: impl FnMut(&Trainer, &StepReport) -> Result<()>) -> Result<()> {
        while self.state.iteration < self.config.iterations {
            let r = self.step()?;
            if self.config.log_every > 0 && (r.iteration + 1) % self.config.log_every == 0 {
                log::info!(
                    "iter {} total {:.5} rgb {:.5} eps_t {:.3} eps_o {:.3} kept {:.3}",
                    r.iteration + 1,
                    r.breakdown.total,
                    r.breakdown.rgb,
                    r.eps_t,
                    r.eps_o,
                    r.breakdown.reliable_fraction()
                );
            }
            on_step(self, &r)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let st = &self.state;
        let mut blocks = Vec::new();
        for (k, b) in st.store.blocks().iter().enumerate() {
            let meta = |prefix: &str| BlockMeta {
                name: format!("{prefix}{}", b.name),
                shape: b.shape.clone(),
            };
            blocks.push((meta(""), b.value.clone()));
            blocks.push((meta("adam_m/"), st.optimizer.m[k].clone()));
            blocks.push((meta("adam_v/"), st.optimizer.v[k].clone()));
        }
        Ok(Checkpoint {
            step: st.iteration,
            config_hash: config_hash(&self.config)?,
            blocks,
            extra: json!({
                "optimizer_step": st.optimizer.step,
                "optimizer_applied": st.optimizer.applied,
                "curriculum": st.curriculum,
                "batch_rng": st.batch_rng.get_word_pos().to_string(),
                "jitter_rng": st.jitter_rng.get_word_pos().to_string(),
            }),
        })
    }

    /// Restores parameters, optimizer moments, schedule and RNG positions.
    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        if ck.config_hash != config_hash(&self.config)? {
            return invalid("checkpoint was written for a different configuration");
        }
        let bad = |what: &str| Error::InvalidInput(format!("checkpoint: {what}"));
        let st = &mut self.state;
        for (k, b) in st.store.blocks_mut().iter_mut().enumerate() {
            let len = b.value.len();
            let get = |name: String| -> Result<Vec<f32>> {
                let v = ck.block(&name).ok_or_else(|| bad(&format!("missing block {name}")))?;
                if v.len() != len {
                    return Err(bad(&format!("block {name} has the wrong size")));
                }
                Ok(v.to_vec())
            };
            b.value = get(b.name.clone())?;
            st.optimizer.m[k] = get(format!("adam_m/{}", b.name))?;
            st.optimizer.v[k] = get(format!("adam_v/{}", b.name))?;
        }
        let e = &ck.extra;
        let u = |key: &str| e[key].as_u64().ok_or_else(|| bad(key));
        let pos = |key: &str| -> Result<u128> { e[key].as_str().and_then(|s| s.parse().ok()).ok_or_else(|| bad(key)) };
        st.optimizer.step = u("optimizer_step")?;
        st.optimizer.applied = u("optimizer_applied")?;
        st.curriculum = serde_json::from_value(e["curriculum"].clone()).map_err(|_| bad("curriculum"))?;
        st.batch_rng.set_word_pos(pos("batch_rng")?);
        st.jitter_rng.set_word_pos(pos("jitter_rng")?);
        st.iteration = ck.step;
        if st.curriculum.iteration != st.iteration || st.optimizer.step != st.iteration {
            return Err(bad("iteration counters disagree"));
        }
        Ok(())
    }

    /// Deterministic full-frame render.
    pub fn render(&self, world_to_camera: &SE3Pose) -> Result<RenderedView> {
        let cam = &self.data.camera;
        let rays: Vec<Ray> = (0..cam.num_pixels()).map(|p| pixel_ray(cam, world_to_camera, p % cam.width, p / cam.width)).collect();
        let mut image = RgbImage::new(cam.width, cam.height);
        let mut depth = Vec::with_capacity(rays.len());
        for (c, chunk) in rays.chunks(RENDER_CHUNK).enumerate() {
            let out = self.field.forward(&self.state.store, self.lidar.as_ref(), chunk, None)?;
            for (k, r) in out.rays.iter().enumerate() {
                image.data[c * RENDER_CHUNK + k] = r.render.rgb;
                depth.push(r.render.depth);
            }
        }
        Ok(RenderedView { image, depth })
    }

    /// Renders `views` of `dataset` and scores them; masked pixels are excluded.
    pub fn evaluate(&self, dataset: &Dataset, views: &[usize]) -> Result<EvalReport> {
        let trained: Vec<usize> = self.data.views.iter().map(|v| v.frame).collect();
        if views.iter().any(|v| trained.contains(v)) {
            log::warn!("evaluation views overlap the training views");
        }
        let mut metrics = Vec::with_capacity(views.len());
        let mut renders = Vec::with_capacity(views.len());
        for &i in views {
            let f = dataset.frames.get(i).ok_or_else(|| Error::InvalidInput(format!("evaluation view {i} out of range")))?;
            let r = self.render(&f.world_to_camera)?;
            let depth_mae = f.gt_depth.as_ref().and_then(|gt| {
                let (mut sum, mut n) = (0.0, 0usize);
                for (p, (&g, &d)) in gt.depth.iter().zip(&r.depth).enumerate() {
                    if g > 0.0 && !f.mask.excluded[p] {
                        sum += (d as f64 - g as f64).abs();
                        n += 1;
                    }
                }
                (n > 0).then(|| sum / n as f64)
            });
            metrics.push(ViewMetrics {
                frame: i,
                psnr: psnr(&r.image, &f.image, Some(&f.mask))?,
                ssim: ssim(&r.image, &f.image, Some(&f.mask))?,
                depth_mae,
            });
            renders.push(r);
        }
        let n = metrics.len().max(1) as f64;
        let maes: Vec<f64> = metrics.iter().filter_map(|m| m.depth_mae).collect();
        Ok(EvalReport {
            mean_psnr: metrics.iter().map(|m| m.psnr).sum::<f64>() / n,
            mean_ssim: metrics.iter().map(|m| m.ssim).sum::<f64>() / n,
            mean_depth_mae: (!maes.is_empty()).then(|| maes.iter().sum::<f64>() / maes.len() as f64),
            views: metrics,
            renders,
        })
    }
}
