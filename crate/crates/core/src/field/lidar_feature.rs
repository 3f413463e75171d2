//! Per-sample Lidar feature: each neighbor feature is passed with the
//! relative offset through a small MLP, then the results are blended by
//! inverse distance.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::lidar::FrnnIndex;
use crate::nn::{Activation, Matrix, Mlp, MlpCache, ParamStore};

/// Lower clamp on neighbor distance in the inverse-distance weights (meters).
pub const MIN_WEIGHT_DISTANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarFieldConfig {
    pub k: usize,
    pub radius: f64,
    /// Fewer neighbors than this within the radius gives an empty feature.
    pub min_neighbors: usize,
    pub hidden: usize,
    /// Also feed the Lidar feature to the proposal networks.
    pub on_proposals: bool,
}

impl Default for LidarFieldConfig {
    fn default() -> Self {
        Self {
            k: 6,
            radius: 0.3,
            min_neighbors: 1,
            hidden: 32,
            on_proposals: false,
        }
    }
}

/// Neighbors of a batch of query points in CSR layout.
#[derive(Debug, Clone, Default)]
pub struct NeighborSets {
    /// Row `q` owns entries `offsets[q]..offsets[q + 1]`.
    pub offsets: Vec<u32>,
    pub ids: Vec<u32>,
    /// Normalized inverse-distance weight of each entry.
    pub weights: Vec<f32>,
    /// `(x − p_i) / R` of each entry.
    pub rel: Vec<[f32; 3]>,
}

impl NeighborSets {
    pub fn query(index: &FrnnIndex, points: &[Vec3], min_neighbors: usize) -> Self {
        let mut s = NeighborSets {
            offsets: Vec::with_capacity(points.len() + 1),
            ..Default::default()
        };
        s.offsets.push(0);
        let mut found = Vec::with_capacity(index.k);
        let inv_r = 1.0 / index.radius;
        for x in points {
            index.query_into(x, &mut found);
            if !found.is_empty() && found.len() >= min_neighbors {
                let inv: Vec<f64> = found.iter().map(|n| 1.0 / n.distance.max(MIN_WEIGHT_DISTANCE)).collect();
                let total: f64 = inv.iter().sum();
                for (n, w) in found.iter().zip(inv) {
                    let p = index.positions()[n.id as usize];
                    s.ids.push(n.id);
                    s.weights.push((w / total) as f32);
                    s.rel.push([((x.x - p.x) * inv_r) as f32, ((x.y - p.y) * inv_r) as f32, ((x.z - p.z) * inv_r) as f32]);
                }
            }
            s.offsets.push(s.ids.len() as u32);
        }
        s
    }

    pub fn num_queries(&self) -> usize {
        self.offsets.len() - 1
    }

    #[inline]
    pub fn range(&self, q: usize) -> std::ops::Range<usize> {
        self.offsets[q] as usize..self.offsets[q + 1] as usize
    }

    pub fn has_feature(&self, q: usize) -> bool {
        self.offsets[q + 1] > self.offsets[q]
    }

    /// Distinct embedding ids referenced by any query, ascending.
    pub fn referenced(&self) -> Vec<u32> {
        let mut v = self.ids.clone();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// The MLP `F([f_i, x − p_i])`.
#[derive(Debug, Clone)]
pub struct LidarFeatureNet {
    pub mlp: Mlp,
    pub feature_dim: usize,
}

#[derive(Debug, Clone)]
pub struct LidarFeatureCache {
    mlp: MlpCache,
}

impl LidarFeatureNet {
    pub fn new(store: &mut ParamStore, name: &str, feature_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mlp = Mlp::new(
            store,
            name,
            &[feature_dim + 3, hidden, feature_dim],
            Activation::Relu,
            Activation::Identity,
            rng,
        );
        Self { mlp, feature_dim }
    }

    /// φ_L for every query (zero rows for empty neighbor sets).
    pub fn forward(&self, store: &ParamStore, sets: &NeighborSets, features: &Matrix) -> (Matrix, LidarFeatureCache) {
        let n = self.feature_dim;
        let mut x = Matrix::zeros(sets.ids.len(), n + 3);
        for (e, &id) in sets.ids.iter().enumerate() {
            let row = x.row_mut(e);
            row[..n].copy_from_slice(features.row(id as usize));
            row[n..].copy_from_slice(&sets.rel[e]);
        }
        let cache = self.mlp.forward(store, x).expect("lidar feature width fixed at construction");
        let out = cache.output();
        let mut phi = Matrix::zeros(sets.num_queries(), n);
        for q in 0..sets.num_queries() {
            let dst = phi.row_mut(q);
            for e in sets.range(q) {
                let w = sets.weights[e];
                for (d, v) in dst.iter_mut().zip(out.row(e)) {
                    *d += w * v;
                }
            }
        }
        (phi, LidarFeatureCache { mlp: cache })
    }

    /// Accumulates parameter gradients and adds the embedding-feature
    /// gradient into `d_features` (one row per embedding).
    pub fn backward(&self, store: &mut ParamStore, sets: &NeighborSets, cache: &LidarFeatureCache, d_phi: &Matrix, d_features: &mut Matrix) {
        let n = self.feature_dim;
        let mut dy = Matrix::zeros(sets.ids.len(), n);
        for q in 0..sets.num_queries() {
            let g = d_phi.row(q);
            for e in sets.range(q) {
                let w = sets.weights[e];
                for (d, v) in dy.row_mut(e).iter_mut().zip(g) {
                    *d = w * v;
                }
            }
        }
        let dx = self.mlp.backward(store, &cache.mlp, &dy, true).expect("shapes match forward").expect("input gradient requested");
        for (e, &id) in sets.ids.iter().enumerate() {
            let src = &dx.row(e)[..n];
            for (d, v) in d_features.row_mut(id as usize).iter_mut().zip(src) {
                *d += v;
            }
        }
    }
}
