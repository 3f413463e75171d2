//! Learned per-voxel Lidar features: a small sparse 3×3×3 convolution stack
//! with an input skip, or a pointwise MLP.
//!
//! Both encoders can evaluate only the cells a batch needs. Because FRNN
//! neighbors depend on positions alone, the needed output cells are known
//! before any feature is computed; the conv stack widens that set by one
//! stencil ring per layer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::voxel::{VoxelGrid, NO_NEIGHBOR};
use crate::error::{invalid, Result};
use crate::geometry::Vec3;
use crate::nn::{axpy, dot, Activation, Linear, Matrix, Mlp, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    None,
    Mlp,
    SparseConv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarEncoderConfig {
    pub kind: EncoderKind,
    /// Output feature width n.
    pub feature_dim: usize,
    pub voxel_resolution: u32,
    pub conv_layers: usize,
    pub conv_channels: usize,
    pub mlp_hidden: Vec<usize>,
}

impl Default for LidarEncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::SparseConv,
            feature_dim: 16,
            voxel_resolution: 128,
            conv_layers: 2,
            conv_channels: 16,
            mlp_hidden: vec![64, 96, 128],
        }
    }
}

impl LidarEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kind == EncoderKind::None {
            return Ok(());
        }
        if self.feature_dim == 0 || self.voxel_resolution == 0 {
            return invalid("lidar encoder feature width and voxel resolution must be positive");
        }
        if self.kind == EncoderKind::SparseConv && (self.conv_layers == 0 || self.conv_channels == 0) {
            return invalid("sparse conv encoder needs at least one layer and one channel");
        }
        Ok(())
    }
}

/// Lidar embeddings: positions p_i with n-dim features f_i.
#[derive(Debug, Clone)]
pub struct LidarEmbeddingSet {
    pub positions: Vec<Vec3>,
    pub features: Matrix,
}

impl LidarEmbeddingSet {
    pub fn feature_dim(&self) -> usize {
        self.features.cols
    }
}

/// Per-cell encoder inputs derived once from a voxel grid.
#[derive(Debug, Clone)]
pub struct EncoderInput {
    pub positions: Vec<Vec3>,
    /// `(mean − cell_center) / cell_size`, translation invariant.
    pub offsets: Matrix,
    /// Offsets followed by the normalized cell coordinate in (0, 1).
    pub mlp_inputs: Matrix,
    pub neighbors: Vec<[u32; 27]>,
}

impl EncoderInput {
    pub fn from_grid(grid: &VoxelGrid) -> Self {
        let n = grid.len();
        let mut offsets = Matrix::zeros(n, 3);
        let mut mlp_inputs = Matrix::zeros(n, 6);
        let res = grid.resolution as f64;
        for (i, c) in grid.cells.iter().enumerate() {
            let center = grid.cell_center(c.coord);
            for a in 0..3 {
                let off = ((c.mean[a] - center[a]) / grid.cell_size) as f32;
                offsets.row_mut(i)[a] = off;
                mlp_inputs.row_mut(i)[a] = off;
                mlp_inputs.row_mut(i)[3 + a] = ((c.coord[a] as f64 + 0.5) / res) as f32;
            }
        }
        Self {
            positions: grid.cells.iter().map(|c| c.mean).collect(),
            offsets,
            mlp_inputs,
            neighbors: grid.neighbor_table(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Sparse 3×3×3 convolution. Weight layout `[tap][out][in]`.
#[derive(Debug, Clone)]
pub struct SparseConv3 {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl SparseConv3 {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        // typical surface cells see about a third of their taps occupied
        let bound = (6.0 / (9 * in_dim + out_dim) as f32).sqrt();
        let w = (0..27 * in_dim * out_dim).map(|_| rng.random_range(-bound..bound)).collect();
        Self::from_values(store, name, in_dim, out_dim, w, vec![0.0; out_dim])
    }

    pub fn from_values(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, w: Vec<f32>, b: Vec<f32>) -> Self {
        let weight = store.add(format!("{name}.weight"), vec![27, out_dim, in_dim], w);
        let bias = store.add(format!("{name}.bias"), vec![out_dim], b);
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    /// ReLU(conv(x)) at the `rows` cells, written into `out`.
    fn forward_rows(&self, store: &ParamStore, neighbors: &[[u32; 27]], x: &Matrix, rows: &[u32], out: &mut Matrix) {
        let w = store.value(self.weight);
        let b = store.value(self.bias);
        let (ni, no) = (self.in_dim, self.out_dim);
        for &c in rows {
            let y = out.row_mut(c as usize);
            y.copy_from_slice(b);
            for (k, &j) in neighbors[c as usize].iter().enumerate() {
                if j == NO_NEIGHBOR {
                    continue;
                }
                let xj = x.row(j as usize);
                let wk = &w[k * no * ni..(k + 1) * no * ni];
                for o in 0..no {
                    y[o] += dot(&wk[o * ni..(o + 1) * ni], xj);
                }
            }
            y.iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }

    /// Backward through ReLU(conv(x)). `dy` is consumed (masked in place);
    /// `dx`, when given, receives the input gradient.
    fn backward_rows(
        &self,
        store: &mut ParamStore,
        neighbors: &[[u32; 27]],
        x: &Matrix,
        y: &Matrix,
        rows: &[u32],
        dy: &mut Matrix,
        mut dx: Option<&mut Matrix>,
    ) {
        let (ni, no) = (self.in_dim, self.out_dim);
        for &c in rows {
            let d = dy.row_mut(c as usize);
            for (dv, yv) in d.iter_mut().zip(y.row(c as usize)) {
                if *yv <= 0.0 {
                    *dv = 0.0;
                }
            }
        }
        {
            let gb = store.grad_mut(self.bias);
            for &c in rows {
                for (g, d) in gb.iter_mut().zip(dy.row(c as usize)) {
                    *g += d;
                }
            }
        }
        {
            let gw = store.grad_mut(self.weight);
            for &c in rows {
                let d = dy.row(c as usize);
                if d.iter().all(|v| *v == 0.0) {
                    continue;
                }
                for (k, &j) in neighbors[c as usize].iter().enumerate() {
                    if j == NO_NEIGHBOR {
                        continue;
                    }
                    let xj = x.row(j as usize);
                    let gk = &mut gw[k * no * ni..(k + 1) * no * ni];
                    for (o, &dv) in d.iter().enumerate() {
                        if dv != 0.0 {
                            axpy(dv, xj, &mut gk[o * ni..(o + 1) * ni]);
                        }
                    }
                }
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            let w = store.value(self.weight);
            for &c in rows {
                let d = dy.row(c as usize);
                if d.iter().all(|v| *v == 0.0) {
                    continue;
                }
                for (k, &j) in neighbors[c as usize].iter().enumerate() {
                    if j == NO_NEIGHBOR {
                        continue;
                    }
                    let wk = &w[k * no * ni..(k + 1) * no * ni];
                    let dxj = dx.row_mut(j as usize);
                    for (o, &dv) in d.iter().enumerate() {
                        if dv != 0.0 {
                            axpy(dv, &wk[o * ni..(o + 1) * ni], dxj);
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SparseConvEncoder {
    pub layers: Vec<SparseConv3>,
    pub skip: Linear,
}

#[derive(Debug, Clone)]
pub struct MlpEncoder {
    pub mlp: Mlp,
}

#[derive(Debug, Clone)]
pub enum LidarEncoder {
    Mlp(MlpEncoder),
    SparseConv(SparseConvEncoder),
}

/// Forward state kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    /// Cells evaluated at each level; the last entry is the output set.
    active: Vec<Vec<u32>>,
    /// Post-activation conv outputs per layer (dense rows, valid on `active`).
    hidden: Vec<Matrix>,
    mlp: Option<crate::nn::MlpCache>,
}

impl LidarEncoder {
    /// `None` for [`EncoderKind::None`].
    pub fn new(store: &mut ParamStore, name: &str, cfg: &LidarEncoderConfig, rng: &mut impl Rng) -> Result<Option<Self>> {
        cfg.validate()?;
        Ok(match cfg.kind {
            EncoderKind::None => None,
            EncoderKind::Mlp => {
                let mut dims = vec![6];
                dims.extend(&cfg.mlp_hidden);
                dims.push(cfg.feature_dim);
                let mlp = Mlp::new(store, &format!("{name}.mlp"), &dims, Activation::Relu, Activation::Identity, rng);
                Some(LidarEncoder::Mlp(MlpEncoder { mlp }))
            }
            EncoderKind::SparseConv => {
                let mut layers = Vec::with_capacity(cfg.conv_layers);
                let mut width = 3;
                for l in 0..cfg.conv_layers {
                    let out = if l + 1 == cfg.conv_layers { cfg.feature_dim } else { cfg.conv_channels };
                    layers.push(SparseConv3::new(store, &format!("{name}.conv{l}"), width, out, rng));
                    width = out;
                }
                let skip = Linear::new(store, &format!("{name}.skip"), 3, cfg.feature_dim, rng);
                Some(LidarEncoder::SparseConv(SparseConvEncoder { layers, skip }))
            }
        })
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            LidarEncoder::Mlp(e) => e.mlp.out_dim(),
            LidarEncoder::SparseConv(e) => e.skip.out_dim,
        }
    }

    /// Features for every cell.
    pub fn encode(&self, store: &ParamStore, input: &EncoderInput) -> LidarEmbeddingSet {
        let (features, _) = self.forward(store, input, None);
        LidarEmbeddingSet {
            positions: input.positions.clone(),
            features,
        }
    }

    /// Computes features at the `wanted` cells (all cells when `None`). The
    /// returned matrix has one row per cell; rows outside `wanted` are zero.
    pub fn forward(&self, store: &ParamStore, input: &EncoderInput, wanted: Option<&[u32]>) -> (Matrix, EncoderCache) {
        let n = input.len();
        let out_set: Vec<u32> = match wanted {
            Some(w) => {
                let mut w = w.to_vec();
                w.sort_unstable();
                w.dedup();
                w
            }
            None => (0..n as u32).collect(),
        };
        match self {
            LidarEncoder::Mlp(e) => {
                let mut x = Matrix::zeros(out_set.len(), 6);
                for (r, &c) in out_set.iter().enumerate() {
                    x.row_mut(r).copy_from_slice(input.mlp_inputs.row(c as usize));
                }
                let cache = e.mlp.forward(store, x).expect("mlp encoder input width is fixed");
                let mut features = Matrix::zeros(n, e.mlp.out_dim());
                for (r, &c) in out_set.iter().enumerate() {
                    features.row_mut(c as usize).copy_from_slice(cache.output().row(r));
                }
                let cache = EncoderCache {
                    active: vec![out_set],
                    hidden: Vec::new(),
                    mlp: Some(cache),
                };
                (features, cache)
            }
            LidarEncoder::SparseConv(e) => {
                let layers = e.layers.len();
                // active[l] = cells where the output of layer l is needed
                let mut active = vec![Vec::new(); layers];
                active[layers - 1] = out_set;
                for l in (0..layers - 1).rev() {
                    let mut mark = vec![false; n];
                    for &c in &active[l + 1] {
                        for &j in &input.neighbors[c as usize] {
                            if j != NO_NEIGHBOR {
                                mark[j as usize] = true;
                            }
                        }
                    }
                    active[l] = (0..n as u32).filter(|&c| mark[c as usize]).collect();
                }
                let mut hidden: Vec<Matrix> = Vec::with_capacity(layers);
                for (l, layer) in e.layers.iter().enumerate() {
                    let mut y = Matrix::zeros(n, layer.out_dim);
                    let x = if l == 0 { &input.offsets } else { &hidden[l - 1] };
                    layer.forward_rows(store, &input.neighbors, x, &active[l], &mut y);
                    hidden.push(y);
                }
                let mut features = hidden[layers - 1].clone();
                let ws = store.value(e.skip.weight);
                let bs = store.value(e.skip.bias);
                for &c in &active[layers - 1] {
                    let x0 = input.offsets.row(c as usize);
                    let f = features.row_mut(c as usize);
                    for o in 0..e.skip.out_dim {
                        f[o] += bs[o] + dot(&ws[o * 3..(o + 1) * 3], x0);
                    }
                }
                let cache = EncoderCache {
                    active,
                    hidden,
                    mlp: None,
                };
                (features, cache)
            }
        }
    }

    /// Accumulates parameter gradients for the feature gradient `dfeatures`
    /// (one row per cell, rows outside the forward's output set ignored).
    pub fn backward(&self, store: &mut ParamStore, input: &EncoderInput, cache: &EncoderCache, dfeatures: &Matrix) {
        match self {
            LidarEncoder::Mlp(e) => {
                let rows = &cache.active[0];
                let mlp_cache = cache.mlp.as_ref().expect("mlp cache");
                let mut dy = Matrix::zeros(rows.len(), e.mlp.out_dim());
                for (r, &c) in rows.iter().enumerate() {
                    dy.row_mut(r).copy_from_slice(dfeatures.row(c as usize));
                }
                e.mlp.backward(store, mlp_cache, &dy, false).expect("shapes match forward");
            }
            LidarEncoder::SparseConv(e) => {
                let layers = e.layers.len();
                let top = &cache.active[layers - 1];
                {
                    let (gw, gb) = (e.skip.weight, e.skip.bias);
                    for &c in top {
                        let d = dfeatures.row(c as usize);
                        let x0 = input.offsets.row(c as usize);
                        let g = store.grad_mut(gw);
                        for (o, &dv) in d.iter().enumerate() {
                            axpy(dv, x0, &mut g[o * 3..(o + 1) * 3]);
                        }
                        for (g, dv) in store.grad_mut(gb).iter_mut().zip(d) {
                            *g += dv;
                        }
                    }
                }
                let mut dy = Matrix::zeros(dfeatures.rows, dfeatures.cols);
                for &c in top {
                    dy.row_mut(c as usize).copy_from_slice(dfeatures.row(c as usize));
                }
                for l in (0..layers).rev() {
                    let layer = &e.layers[l];
                    let x = if l == 0 { &input.offsets } else { &cache.hidden[l - 1] };
                    if l == 0 {
                        layer.backward_rows(store, &input.neighbors, x, &cache.hidden[l], &cache.active[l], &mut dy, None);
                    } else {
                        let mut dx = Matrix::zeros(input.len(), layer.in_dim);
                        layer.backward_rows(store, &input.neighbors, x, &cache.hidden[l], &cache.active[l], &mut dy, Some(&mut dx));
                        dy = dx;
                    }
                }
            }
        }
    }
}
