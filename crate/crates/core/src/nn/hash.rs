//! Multiresolution hash grid encoding.
//!
//! Each level holds a table of `features_per_level`-wide entries. Coarse
//! levels whose vertex count fits in the table are indexed densely, finer
//! levels through the XOR-of-primes spatial hash.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashEncodingConfig {
    pub levels: usize,
    pub features_per_level: usize,
    pub min_resolution: u32,
    pub max_resolution: u32,
    pub log2_table_size: u32,
}

impl Default for HashEncodingConfig {
    fn default() -> Self {
        Self {
            levels: 16,
            features_per_level: 2,
            min_resolution: 16,
            max_resolution: 4096,
            log2_table_size: 15,
        }
    }
}

impl HashEncodingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.features_per_level == 0 {
            return invalid("hash encoding needs at least one level and one feature");
        }
        if self.min_resolution == 0 || self.max_resolution < self.min_resolution {
            return invalid("hash encoding resolutions must satisfy 1 <= min <= max");
        }
        if self.log2_table_size == 0 || self.log2_table_size > 26 {
            return invalid("hash table size out of range");
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.levels * self.features_per_level
    }

    /// Geometric progression of per-level resolutions from min to max.
    pub fn resolutions(&self) -> Vec<u32> {
        if self.levels == 1 {
            return vec![self.min_resolution];
        }
        let growth = ((self.max_resolution as f64).ln() - (self.min_resolution as f64).ln()) / (self.levels - 1) as f64;
        (0..self.levels)
            .map(|l| ((self.min_resolution as f64) * (growth * l as f64).exp() + 1e-6).floor() as u32)
            .collect()
    }
}

const PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Debug, Clone)]
struct Level {
    resolution: u32,
    dense: bool,
    /// Entries in this level (dense vertex count or the table size).
    entries: usize,
    /// Offset of this level's first entry in the flat table.
    offset: usize,
}

#[derive(Debug, Clone)]
pub struct HashEncoding {
    pub config: HashEncodingConfig,
    pub table: ParamId,
    levels: Vec<Level>,
}

/// Corner indices and trilinear weights for one level.
#[derive(Debug, Clone, Copy)]
struct Corners {
    index: [usize; 8],
    weight: [f32; 8],
}

impl HashEncoding {
    /// Table entries initialized uniformly in `[-1e-4, 1e-4]`.
    pub fn new(store: &mut ParamStore, name: &str, config: HashEncodingConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let t = 1usize << config.log2_table_size;
        let mut levels = Vec::with_capacity(config.levels);
        let mut offset = 0;
        for res in config.resolutions() {
            let dense_count = (res as usize + 1).pow(3);
            let dense = dense_count <= t;
            let entries = if dense { dense_count } else { t };
            levels.push(Level {
                resolution: res,
                dense,
                entries,
                offset,
            });
            offset += entries;
        }
        let n = offset * config.features_per_level;
        let init: Vec<f32> = (0..n).map(|_| rng.random_range(-1e-4..1e-4)).collect();
        let table = store.add(format!("{name}.table"), vec![offset, config.features_per_level], init);
        Ok(Self { config, table, levels })
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    #[inline]
    fn corners(&self, level: &Level, x: &[f32; 3]) -> Corners {
        let res = level.resolution;
        let mut base = [0u32; 3];
        let mut frac = [0f32; 3];
        for a in 0..3 {
            let p = x[a].clamp(0.0, 1.0) * res as f32;
            let f = (p.floor() as u32).min(res - 1);
            base[a] = f;
            frac[a] = p - f as f32;
        }
        let mut c = Corners {
            index: [0; 8],
            weight: [0.0; 8],
        };
        let stride = res as usize + 1;
        for k in 0..8 {
            let d = [(k & 1) as u32, ((k >> 1) & 1) as u32, ((k >> 2) & 1) as u32];
            let v = [base[0] + d[0], base[1] + d[1], base[2] + d[2]];
            let mut w = 1.0f32;
            for a in 0..3 {
                w *= if d[a] == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            let local = if level.dense {
                v[0] as usize + stride * (v[1] as usize + stride * v[2] as usize)
            } else {
                let h = v[0].wrapping_mul(PRIMES[0]) ^ v[1].wrapping_mul(PRIMES[1]) ^ v[2].wrapping_mul(PRIMES[2]);
                (h as usize) & (level.entries - 1)
            };
            c.index[k] = level.offset + local;
            c.weight[k] = w;
        }
        c
    }

    /// Encodes `x ∈ [0,1]³` (clamped) into `out` of width `levels * features`.
    pub fn encode(&self, store: &ParamStore, x: &[f32; 3], out: &mut [f32]) {
        let f = self.config.features_per_level;
        let table = store.value(self.table);
        for (l, level) in self.levels.iter().enumerate() {
            let c = self.corners(level, x);
            let o = &mut out[l * f..(l + 1) * f];
            o.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..8 {
                let e = &table[c.index[k] * f..(c.index[k] + 1) * f];
                for j in 0..f {
                    o[j] += c.weight[k] * e[j];
                }
            }
        }
    }

    /// Scatters `dout` (gradient of the encoding at `x`) into the table gradient.
    pub fn backward(&self, store: &mut ParamStore, x: &[f32; 3], dout: &[f32]) {
        let f = self.config.features_per_level;
        let grad = store.grad_mut(self.table);
        for (l, level) in self.levels.iter().enumerate() {
            let d = &dout[l * f..(l + 1) * f];
            if d.iter().all(|v| *v == 0.0) {
                continue;
            }
            let c = self.corners(level, x);
            for k in 0..8 {
                let g = &mut grad[c.index[k] * f..(c.index[k] + 1) * f];
                for j in 0..f {
                    g[j] += c.weight[k] * d[j];
                }
            }
        }
    }

    /// Batched encode of row-major `xs` into an `n x output_dim` buffer.
    pub fn encode_batch(&self, store: &ParamStore, xs: &[[f32; 3]]) -> super::Matrix {
        let dim = self.output_dim();
        let mut out = super::Matrix::zeros(xs.len(), dim);
        for (r, x) in xs.iter().enumerate() {
            self.encode(store, x, out.row_mut(r));
        }
        out
    }

    pub fn backward_batch(&self, store: &mut ParamStore, xs: &[[f32; 3]], dout: &super::Matrix) {
        for (r, x) in xs.iter().enumerate() {
            self.backward(store, x, dout.row(r));
        }
    }

    pub fn level_resolutions(&self) -> Vec<u32> {
        self.levels.iter().map(|l| l.resolution).collect()
    }
}
