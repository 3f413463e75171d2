//! The hybrid radiance field: proposal stages, Lidar feature fusion, decoding
//! and volume rendering over a batch of rays, with the matching backward.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::density::{ColorCache, ColorNet, DensityCache, DensityNet, LidarInput};
use super::lidar_feature::{LidarFeatureCache, LidarFeatureNet, LidarFieldConfig, NeighborSets};
use super::render::{compositing_weights, volume_render, volume_render_backward, weights_backward, RenderOutput};
use super::sampler::{resample, s_range, stratified, RaySamples};
use crate::error::{invalid, Result};
use crate::geometry::{contract, SceneBounds, Vec3};
use crate::lidar::{voxelize, EncoderCache, EncoderInput, EncoderKind, FrnnIndex, GridBounds, LidarEncoder, LidarEncoderConfig, VoxelGrid};
use crate::nn::{sh_dim, sh_encode, HashEncodingConfig, Matrix, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldConfig {
    pub hash: HashEncodingConfig,
    pub hidden: usize,
    /// Width of the density embedding h.
    pub geo_feat_dim: usize,
    pub color_hidden: usize,
    pub sh_bands: usize,
    /// One hash grid per proposal stage.
    pub proposal_hash: Vec<HashEncodingConfig>,
    pub proposal_hidden: usize,
    /// Intervals per stage; the last entry feeds the main field.
    pub samples: Vec<usize>,
    pub histogram_padding: f32,
    pub near: f64,
    /// Far plane in multiples of the scene radius.
    pub far_factor: f64,
    /// Raw density is clamped here before the exponential.
    pub max_log_density: f32,
    pub encoder: LidarEncoderConfig,
    pub lidar: LidarFieldConfig,
}

fn proposal_hash(max_resolution: u32) -> HashEncodingConfig {
    HashEncodingConfig {
        levels: 5,
        features_per_level: 2,
        min_resolution: 16,
        max_resolution,
        log2_table_size: 14,
    }
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            hash: HashEncodingConfig::default(),
            hidden: 64,
            geo_feat_dim: 15,
            color_hidden: 64,
            sh_bands: 4,
            proposal_hash: vec![proposal_hash(128), proposal_hash(256)],
            proposal_hidden: 16,
            samples: vec![64, 32, 16],
            histogram_padding: 1e-3,
            near: 0.05,
            far_factor: 1000.0,
            max_log_density: 15.0,
            encoder: LidarEncoderConfig::default(),
            lidar: LidarFieldConfig::default(),
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples.len() != self.proposal_hash.len() + 1 {
            return invalid("field needs one proposal hash config per proposal stage");
        }
        if self.samples.iter().any(|&n| n == 0) {
            return invalid("every sampling stage needs at least one interval");
        }
        if self.hidden == 0 || self.color_hidden == 0 || self.proposal_hidden == 0 {
            return invalid("hidden widths must be positive");
        }
        if !(self.near > 0.0 && self.far_factor > 0.0) {
            return invalid("near plane and far factor must be positive");
        }
        if self.histogram_padding < 0.0 {
            return invalid("histogram padding must be non-negative");
        }
        if self.lidar.k == 0 || !(self.lidar.radius > 0.0) {
            return invalid("lidar query needs K >= 1 and R > 0");
        }
        self.hash.validate()?;
        for h in &self.proposal_hash {
            h.validate()?;
        }
        self.encoder.validate()
    }

    pub fn uses_lidar(&self) -> bool {
        self.encoder.kind != EncoderKind::None
    }
}

/// Voxelized Lidar embeddings positions with their neighbor index.
#[derive(Debug, Clone)]
pub struct LidarScene {
    pub grid: VoxelGrid,
    pub input: EncoderInput,
    pub index: FrnnIndex,
}

impl LidarScene {
    pub fn build(points: &[Vec3], encoder: &LidarEncoderConfig, lidar: &LidarFieldConfig) -> Result<Self> {
        let bounds = GridBounds::enclosing(points, 0.01).unwrap_or(GridBounds {
            origin: [0.0; 3],
            extent: 1.0,
        });
        let grid = voxelize(points, encoder.voxel_resolution, &bounds)?;
        let input = EncoderInput::from_grid(&grid);
        let index = FrnnIndex::build(&input.positions, lidar.k, lidar.radius)?;
        Ok(Self { grid, input, index })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit direction.
    pub direction: Vec3,
}

#[derive(Debug, Clone)]
pub struct RayRender {
    /// Intervals of every stage, proposals first.
    pub stages: Vec<RaySamples>,
    /// Compositing weights of every stage.
    pub stage_weights: Vec<Vec<f32>>,
    pub render: RenderOutput,
}

struct LidarStage {
    sets: NeighborSets,
    phi: Matrix,
    present: Vec<bool>,
    cache: LidarFeatureCache,
}

struct StageCache {
    n: usize,
    sigmas: Vec<f32>,
    clamped: Vec<bool>,
    density: DensityCache,
    lidar: Option<LidarStage>,
}

pub struct FieldOutput {
    pub rays: Vec<RayRender>,
    stages: Vec<StageCache>,
    colors: Vec<[f32; 3]>,
    color: ColorCache,
    encoder: Option<EncoderCache>,
    /// Number of main-field samples with a non-empty Lidar feature.
    pub lidar_hits: usize,
}

/// Upstream gradients for one ray.
#[derive(Debug, Clone, Default)]
pub struct RayGrads {
    pub d_rgb: [f32; 3],
    pub d_depth: f32,
    /// On the main-field weights.
    pub d_weights: Option<Vec<f32>>,
    /// On each proposal stage's weights.
    pub d_proposal_weights: Vec<Option<Vec<f32>>>,
}

#[derive(Debug, Clone)]
pub struct RadianceField {
    pub config: FieldConfig,
    pub bounds: SceneBounds,
    pub proposals: Vec<DensityNet>,
    pub density: DensityNet,
    pub color: ColorNet,
    pub lidar_net: Option<LidarFeatureNet>,
    pub encoder: Option<LidarEncoder>,
}

fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(s);
    r
}

impl RadianceField {
    /// Every component draws its initial weights from its own RNG stream, so
    /// enabling the Lidar branch leaves all other weights unchanged.
    pub fn new(store: &mut ParamStore, config: FieldConfig, bounds: SceneBounds, seed: u64) -> Result<Self> {
        config.validate()?;
        if !(bounds.radius > 0.0) {
            return invalid("scene radius must be positive");
        }
        let mut r_main = stream(seed, 0);
        let mut r_prop = stream(seed, 1);
        let mut r_lidar_in = stream(seed, 2);
        let mut r_lidar = stream(seed, 3);
        let n = if config.uses_lidar() { config.encoder.feature_dim } else { 0 };
        let prop_lidar = if config.lidar.on_proposals { n } else { 0 };
        let mut proposals = Vec::new();
        for (k, h) in config.proposal_hash.iter().enumerate() {
            proposals.push(DensityNet::new(
                store,
                &format!("proposal{k}"),
                h.clone(),
                config.proposal_hidden,
                1,
                prop_lidar,
                &mut r_prop,
                &mut r_lidar_in,
            )?);
        }
        let density = DensityNet::new(
            store,
            "density",
            config.hash.clone(),
            config.hidden,
            1 + config.geo_feat_dim,
            n,
            &mut r_main,
            &mut r_lidar_in,
        )?;
        let color = ColorNet::new(store, "color", config.geo_feat_dim + sh_dim(config.sh_bands), config.color_hidden, &mut r_main);
        let (lidar_net, encoder) = if n > 0 {
            let f = LidarFeatureNet::new(store, "lidar_feature", n, config.lidar.hidden, &mut r_lidar);
            let e = LidarEncoder::new(store, "lidar_encoder", &config.encoder, &mut r_lidar)?;
            (Some(f), e)
        } else {
            (None, None)
        };
        Ok(Self {
            config,
            bounds,
            proposals,
            density,
            color,
            lidar_net,
            encoder,
        })
    }

    pub fn far(&self) -> f64 {
        self.config.far_factor * self.bounds.radius
    }

    fn density_scale(&self) -> f32 {
        (1.0 / self.bounds.radius) as f32
    }

    /// Hash-grid coordinates in `[0,1]³` of a world point.
    pub fn grid_coord(&self, x: &Vec3) -> [f32; 3] {
        let c = contract(x, &self.bounds);
        [((c.x + 2.0) * 0.25) as f32, ((c.y + 2.0) * 0.25) as f32, ((c.z + 2.0) * 0.25) as f32]
    }

    fn positions(rays: &[Ray], samples: &[RaySamples]) -> Vec<Vec3> {
        let mut out = Vec::with_capacity(samples.iter().map(|s| s.len()).sum());
        for (ray, s) in rays.iter().zip(samples) {
            for i in 0..s.len() {
                out.push(ray.origin + ray.direction * s.t_mid(i) as f64);
            }
        }
        out
    }

    fn lidar_stage(&self, store: &ParamStore, features: &Matrix, sets: NeighborSets) -> LidarStage {
        let net = self.lidar_net.as_ref().expect("lidar branch enabled");
        let (phi, cache) = net.forward(store, &sets, features);
        let present = (0..sets.num_queries()).map(|q| sets.has_feature(q)).collect();
        LidarStage { sets, phi, present, cache }
    }

    fn eval_stage(&self, store: &ParamStore, net: &DensityNet, points: &[Vec3], lidar: Option<LidarStage>, n: usize) -> (Matrix, StageCache) {
        let xs: Vec<[f32; 3]> = points.iter().map(|p| self.grid_coord(p)).collect();
        let input = lidar.as_ref().map(|l| LidarInput {
            phi: &l.phi,
            present: &l.present,
        });
        let (raw, density) = net.forward(store, xs, input);
        let scale = self.density_scale();
        let cols = raw.cols;
        let mut sigmas = Vec::with_capacity(raw.rows);
        let mut clamped = Vec::with_capacity(raw.rows);
        for r in 0..raw.rows {
            let v = raw.data[r * cols];
            let c = v > self.config.max_log_density;
            clamped.push(c);
            sigmas.push(v.min(self.config.max_log_density).exp() * scale);
        }
        (
            raw,
            StageCache {
                n,
                sigmas,
                clamped,
                density,
                lidar,
            },
        )
    }

    /// Renders `rays`. Training passes an RNG for stratified jitter; without
    /// one, sampling is deterministic.
    pub fn forward(&self, store: &ParamStore, lidar: Option<&LidarScene>, rays: &[Ray], mut rng: Option<&mut dyn RngCore>) -> Result<FieldOutput> {
        let lidar = if self.lidar_net.is_some() { lidar } else { None };
        if self.lidar_net.is_some() && lidar.is_none() {
            return invalid("field has a Lidar branch but no Lidar scene was given");
        }
        let (s0, s1) = s_range(self.config.near, self.far(), self.bounds.radius)?;
        let radius = self.bounds.radius;
        let stages_n = &self.config.samples;
        let last = stages_n.len() - 1;
        let mut samples: Vec<RaySamples> = rays.iter().map(|_| stratified(s0, s1, stages_n[0], radius, rng.as_deref_mut())).collect();
        let mut all_samples: Vec<Vec<RaySamples>> = vec![Vec::new(); rays.len()];
        let mut all_weights: Vec<Vec<Vec<f32>>> = vec![Vec::new(); rays.len()];
        let mut caches = Vec::with_capacity(stages_n.len());

        // encoder output: all cells when proposals also use Lidar, otherwise
        // only the cells the main-field samples reach
        let mut encoder_state: Option<(Matrix, EncoderCache)> = None;
        if let (Some(scene), Some(enc)) = (lidar, self.encoder.as_ref()) {
            if self.config.lidar.on_proposals {
                encoder_state = Some(enc.forward(store, &scene.input, None));
            }
        }

        for (k, &n) in stages_n.iter().enumerate() {
            let points = Self::positions(rays, &samples);
            let use_lidar = lidar.is_some() && (k == last || self.config.lidar.on_proposals);
            let lidar_stage = if use_lidar {
                let scene = lidar.unwrap();
                let sets = NeighborSets::query(&scene.index, &points, self.config.lidar.min_neighbors);
                if encoder_state.is_none() {
                    let enc = self.encoder.as_ref().expect("encoder present with lidar branch");
                    encoder_state = Some(enc.forward(store, &scene.input, Some(&sets.referenced())));
                }
                let features = &encoder_state.as_ref().unwrap().0;
                Some(self.lidar_stage(store, features, sets))
            } else {
                None
            };
            let net = if k == last { &self.density } else { &self.proposals[k] };
            let (raw, cache) = self.eval_stage(store, net, &points, lidar_stage, n);
            for (r, s) in samples.iter().enumerate() {
                let w = compositing_weights(s, &cache.sigmas[r * n..(r + 1) * n]);
                all_weights[r].push(w);
                all_samples[r].push(s.clone());
            }
            if k < last {
                let next = stages_n[k + 1];
                for (r, s) in samples.iter_mut().enumerate() {
                    *s = resample(s, &all_weights[r][k], next, self.config.histogram_padding, radius, rng.as_deref_mut());
                }
                caches.push(cache);
                continue;
            }
            // main field: color and compositing
            let g = self.config.geo_feat_dim;
            let shd = sh_dim(self.config.sh_bands);
            let mut cin = Matrix::zeros(raw.rows, g + shd);
            let mut sh = vec![0.0f32; shd];
            for (r, ray) in rays.iter().enumerate() {
                let d = ray.direction;
                sh_encode([d.x as f32, d.y as f32, d.z as f32], self.config.sh_bands, &mut sh)?;
                for i in 0..n {
                    let row = cin.row_mut(r * n + i);
                    row[..g].copy_from_slice(&raw.row(r * n + i)[1..1 + g]);
                    row[g..].copy_from_slice(&sh);
                }
            }
            let (rgb, color_cache) = self.color.forward(store, cin);
            let colors: Vec<[f32; 3]> = (0..rgb.rows).map(|r| [rgb.data[3 * r], rgb.data[3 * r + 1], rgb.data[3 * r + 2]]).collect();
            let renders: Vec<RenderOutput> = samples
                .iter()
                .enumerate()
                .map(|(r, s)| volume_render(s, &cache.sigmas[r * n..(r + 1) * n], &colors[r * n..(r + 1) * n]))
                .collect();
            let lidar_hits = cache.lidar.as_ref().map(|l| l.present.iter().filter(|p| **p).count()).unwrap_or(0);
            caches.push(cache);
            let rays_out = renders
                .into_iter()
                .zip(all_samples.into_iter().zip(all_weights))
                .map(|(render, (stages, stage_weights))| RayRender {
                    stages,
                    stage_weights,
                    render,
                })
                .collect();
            return Ok(FieldOutput {
                rays: rays_out,
                stages: caches,
                colors,
                color: color_cache,
                encoder: encoder_state.map(|(_, c)| c),
                lidar_hits,
            });
        }
        unreachable!("sampling stages are non-empty")
    }

    /// Accumulates parameter gradients for per-ray upstream gradients.
    pub fn backward(&self, store: &mut ParamStore, lidar: Option<&LidarScene>, out: &FieldOutput, grads: &[RayGrads]) -> Result<()> {
        if grads.len() != out.rays.len() {
            return invalid("one gradient record per rendered ray is required");
        }
        let lidar = if self.lidar_net.is_some() { lidar } else { None };
        let last = self.config.samples.len() - 1;
        let mut d_features = match (lidar, self.encoder.as_ref()) {
            (Some(scene), Some(enc)) => Some(Matrix::zeros(scene.input.len(), enc.feature_dim())),
            _ => None,
        };
        for (k, cache) in out.stages.iter().enumerate() {
            let n = cache.n;
            let rows = cache.sigmas.len();
            let net = if k == last { &self.density } else { &self.proposals[k] };
            let mut d_raw = Matrix::zeros(rows, net.out_dim());
            let mut any = false;
            if k == last {
                let mut d_rgb_rows = Matrix::zeros(rows, 3);
                for (r, (ray, g)) in out.rays.iter().zip(grads).enumerate() {
                    let s = &ray.stages[k];
                    let (ds, dc) = volume_render_backward(
                        s,
                        &cache.sigmas[r * n..(r + 1) * n],
                        &out.colors[r * n..(r + 1) * n],
                        &ray.render,
                        g.d_rgb,
                        g.d_depth,
                        g.d_weights.as_deref(),
                    );
                    for i in 0..n {
                        let row = r * n + i;
                        if !cache.clamped[row] {
                            d_raw.data[row * d_raw.cols] = ds[i] * cache.sigmas[row];
                        }
                        d_rgb_rows.row_mut(row).copy_from_slice(&dc[i]);
                    }
                }
                let dx = self.color.backward(store, &out.color, &d_rgb_rows);
                let g = self.config.geo_feat_dim;
                for row in 0..rows {
                    d_raw.row_mut(row)[1..1 + g].copy_from_slice(&dx.row(row)[..g]);
                }
                any = true;
            } else {
                for (r, (ray, g)) in out.rays.iter().zip(grads).enumerate() {
                    let Some(gw) = g.d_proposal_weights.get(k).and_then(|v| v.as_deref()) else {
                        continue;
                    };
                    let mut ds = vec![0.0f32; n];
                    weights_backward(&ray.stages[k], &cache.sigmas[r * n..(r + 1) * n], &ray.stage_weights[k], gw, &mut ds);
                    for i in 0..n {
                        let row = r * n + i;
                        if !cache.clamped[row] {
                            d_raw.data[row] = ds[i] * cache.sigmas[row];
                        }
                    }
                    any = true;
                }
            }
            if !any {
                continue;
            }
            let input = cache.lidar.as_ref().map(|l| LidarInput {
                phi: &l.phi,
                present: &l.present,
            });
            let d_phi = net.backward(store, &cache.density, &d_raw, input);
            if let (Some(d_phi), Some(l), Some(df)) = (d_phi, cache.lidar.as_ref(), d_features.as_mut()) {
                let fnet = self.lidar_net.as_ref().expect("lidar branch");
                fnet.backward(store, &l.sets, &l.cache, &d_phi, df);
            }
        }
        if let (Some(scene), Some(enc), Some(df), Some(ec)) = (lidar, self.encoder.as_ref(), d_features.as_ref(), out.encoder.as_ref()) {
            enc.backward(store, &scene.input, ec, df);
        }
        Ok(())
    }
}
