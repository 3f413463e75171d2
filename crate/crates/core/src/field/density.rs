//! Density network `[φ_L, φ_h] → (raw density, embedding)` and the color
//! network `[h, SH(d)] → rgb`.
//!
//! The first density layer keeps the hash and Lidar input blocks separate so
//! a sample without a Lidar feature runs exactly the hash-only arithmetic.

use rand::Rng;

use crate::nn::{axpy, dot, Activation, HashEncoding, HashEncodingConfig, Linear, Matrix, Mlp, MlpCache, ParamId, ParamStore};
use crate::Result;

#[derive(Debug, Clone)]
pub struct DensityNet {
    pub hash: HashEncoding,
    pub in_hash: Linear,
    /// Weight-only `[hidden][lidar_dim]` block.
    pub in_lidar: Option<ParamId>,
    pub lidar_dim: usize,
    pub hidden: usize,
    pub head: Mlp,
}

#[derive(Debug, Clone)]
pub struct DensityCache {
    xs: Vec<[f32; 3]>,
    enc: Matrix,
    head: MlpCache,
}

/// Optional Lidar input: features and a per-row "has feature" flag.
#[derive(Clone, Copy)]
pub struct LidarInput<'a> {
    pub phi: &'a Matrix,
    pub present: &'a [bool],
}

impl DensityNet {
    /// `rng_lidar` initializes the Lidar block only, so the remaining weights
    /// do not depend on whether Lidar input is enabled.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        hash: HashEncodingConfig,
        hidden: usize,
        out_dim: usize,
        lidar_dim: usize,
        rng: &mut impl Rng,
        rng_lidar: &mut impl Rng,
    ) -> Result<Self> {
        let hash = HashEncoding::new(store, &format!("{name}.hash"), hash, rng)?;
        let in_hash = Linear::new(store, &format!("{name}.in_hash"), hash.output_dim(), hidden, rng);
        let head = Mlp::new(store, &format!("{name}.head"), &[hidden, out_dim], Activation::Relu, Activation::Identity, rng);
        let in_lidar = (lidar_dim > 0).then(|| {
            let bound = (6.0 / (hash.output_dim() + lidar_dim + hidden) as f32).sqrt();
            let w = (0..hidden * lidar_dim).map(|_| rng_lidar.random_range(-bound..bound)).collect();
            store.add(format!("{name}.in_lidar.weight"), vec![hidden, lidar_dim], w)
        });
        Ok(Self {
            hash,
            in_hash,
            in_lidar,
            lidar_dim,
            hidden,
            head,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.head.out_dim()
    }

    /// Raw outputs for positions `xs` in `[0,1]³`.
    pub fn forward(&self, store: &ParamStore, xs: Vec<[f32; 3]>, lidar: Option<LidarInput<'_>>) -> (Matrix, DensityCache) {
        let enc = self.hash.encode_batch(store, &xs);
        let w = store.value(self.in_hash.weight);
        let b = store.value(self.in_hash.bias);
        let ni = self.in_hash.in_dim;
        let mut h = Matrix::zeros(xs.len(), self.hidden);
        for r in 0..xs.len() {
            let er = enc.row(r);
            let hr = h.row_mut(r);
            for o in 0..self.hidden {
                hr[o] = b[o] + dot(&w[o * ni..(o + 1) * ni], er);
            }
        }
        if let (Some(lid), Some(wl)) = (lidar, self.in_lidar) {
            let wl = store.value(wl);
            let nl = self.lidar_dim;
            for r in 0..xs.len() {
                if !lid.present[r] {
                    continue;
                }
                let pr = lid.phi.row(r);
                let hr = h.row_mut(r);
                for o in 0..self.hidden {
                    hr[o] += dot(&wl[o * nl..(o + 1) * nl], pr);
                }
            }
        }
        h.data.iter_mut().for_each(|v| *v = v.max(0.0));
        let head = self.head.forward(store, h).expect("density head width fixed");
        let out = head.output().clone();
        (out, DensityCache { xs, enc, head })
    }

    /// Accumulates parameter gradients for `d_out`; returns dφ_L rows when
    /// Lidar input was used.
    pub fn backward(&self, store: &mut ParamStore, cache: &DensityCache, d_out: &Matrix, lidar: Option<LidarInput<'_>>) -> Option<Matrix> {
        let mut dh = self.head.backward(store, &cache.head, d_out, true).expect("shapes match").expect("input grad");
        let h = &cache.head.acts[0];
        for (d, v) in dh.data.iter_mut().zip(&h.data) {
            if *v <= 0.0 {
                *d = 0.0;
            }
        }
        let rows = cache.xs.len();
        let ni = self.in_hash.in_dim;
        {
            let gb = store.grad_mut(self.in_hash.bias);
            for r in 0..rows {
                for (g, d) in gb.iter_mut().zip(dh.row(r)) {
                    *g += d;
                }
            }
            let gw = store.grad_mut(self.in_hash.weight);
            for r in 0..rows {
                let er = cache.enc.row(r);
                for (o, &d) in dh.row(r).iter().enumerate() {
                    if d != 0.0 {
                        axpy(d, er, &mut gw[o * ni..(o + 1) * ni]);
                    }
                }
            }
        }
        let mut d_enc = Matrix::zeros(rows, ni);
        {
            let w = store.value(self.in_hash.weight);
            for r in 0..rows {
                let dr = dh.row(r);
                let der = d_enc.row_mut(r);
                for (o, &d) in dr.iter().enumerate() {
                    if d != 0.0 {
                        axpy(d, &w[o * ni..(o + 1) * ni], der);
                    }
                }
            }
        }
        self.hash.backward_batch(store, &cache.xs, &d_enc);
        let (Some(lid), Some(wl)) = (lidar, self.in_lidar) else {
            return None;
        };
        let nl = self.lidar_dim;
        let mut d_phi = Matrix::zeros(rows, nl);
        {
            let gw = store.grad_mut(wl);
            for r in 0..rows {
                if !lid.present[r] {
                    continue;
                }
                let pr = lid.phi.row(r);
                for (o, &d) in dh.row(r).iter().enumerate() {
                    if d != 0.0 {
                        axpy(d, pr, &mut gw[o * nl..(o + 1) * nl]);
                    }
                }
            }
        }
        let w = store.value(wl);
        for r in 0..rows {
            if !lid.present[r] {
                continue;
            }
            let dr = dh.row(r);
            let dpr = d_phi.row_mut(r);
            for (o, &d) in dr.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, &w[o * nl..(o + 1) * nl], dpr);
                }
            }
        }
        Some(d_phi)
    }
}

/// `[h, SH(d)] → sigmoid(MLP)`.
#[derive(Debug, Clone)]
pub struct ColorNet {
    pub mlp: Mlp,
}

#[derive(Debug, Clone)]
pub struct ColorCache {
    mlp: MlpCache,
    rgb: Matrix,
}

#[inline]
pub fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

impl ColorNet {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            mlp: Mlp::new(store, name, &[in_dim, hidden, 3], Activation::Relu, Activation::Identity, rng),
        }
    }

    pub fn forward(&self, store: &ParamStore, x: Matrix) -> (Matrix, ColorCache) {
        let mlp = self.mlp.forward(store, x).expect("color input width fixed");
        let mut rgb = mlp.output().clone();
        rgb.data.iter_mut().for_each(|v| *v = sigmoid(*v));
        (rgb.clone(), ColorCache { mlp, rgb })
    }

    /// Returns the gradient with respect to the network input.
    pub fn backward(&self, store: &mut ParamStore, cache: &ColorCache, d_rgb: &Matrix) -> Matrix {
        let mut dz = d_rgb.clone();
        for (d, c) in dz.data.iter_mut().zip(&cache.rgb.data) {
            *d *= c * (1.0 - c);
        }
        self.mlp.backward(store, &cache.mlp, &dz, true).expect("shapes match").expect("input grad")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selftest::fd::{check_gradients, check_input_gradient, FdConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_hash() -> HashEncodingConfig {
        HashEncodingConfig {
            levels: 3,
            features_per_level: 2,
            min_resolution: 4,
            max_resolution: 16,
            log2_table_size: 8,
        }
    }

    fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        for b in store.blocks_mut() {
            if b.name.contains("hash") || b.name.ends_with("bias") {
                b.value.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
            }
        }
    }

    #[test]
    fn absent_lidar_matches_hash_only_bitwise() {
        let xs: Vec<[f32; 3]> = vec![[0.2, 0.4, 0.6], [0.9, 0.1, 0.5]];
        let build = |lidar_dim| {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let mut rl = ChaCha8Rng::seed_from_u64(2);
            let net = DensityNet::new(&mut store, "d", tiny_hash(), 8, 4, lidar_dim, &mut rng, &mut rl).unwrap();
            randomize(&mut store, &mut ChaCha8Rng::seed_from_u64(3));
            (store, net)
        };
        let (sa, a) = build(0);
        let (sb, b) = build(5);
        let phi = Matrix::from_vec(2, 5, vec![0.0; 10]);
        let present = [false, false];
        let (oa, _) = a.forward(&sa, xs.clone(), None);
        let (ob, _) = b.forward(&sb, xs, Some(LidarInput { phi: &phi, present: &present }));
        assert_eq!(oa, ob);
    }

    #[test]
    fn density_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut rl = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let net = DensityNet::new(&mut store, "d", tiny_hash(), 8, 4, 3, &mut rng, &mut rl).unwrap();
        randomize(&mut store, &mut rng);
        let xs: Vec<[f32; 3]> = (0..10).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let phi = Matrix::from_vec(10, 3, (0..30).map(|_| rng.random_range(-1.0..1.0)).collect());
        let present: Vec<bool> = (0..10).map(|i| i % 3 != 0).collect();
        let r: Vec<f32> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |s: &ParamStore, phi: &Matrix| -> f64 {
            let (o, _) = net.forward(s, xs.clone(), Some(LidarInput { phi, present: &present }));
            o.data.iter().zip(&r).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
        };
        let lid = LidarInput { phi: &phi, present: &present };
        let (_, cache) = net.forward(&store, xs.clone(), Some(lid));
        let d_phi = net.backward(&mut store, &cache, &Matrix::from_vec(10, 4, r.clone()), Some(lid)).unwrap();
        let report = check_gradients(&store, |s| loss(s, &phi), &FdConfig::default(), &mut rng);
        assert!(report.passed(), "{report:?}");
        let rx = check_input_gradient(&phi.data, &d_phi.data, |v| loss(&store, &Matrix::from_vec(10, 3, v.to_vec())), &FdConfig::default(), &mut rng);
        assert!(rx.passed(), "{rx:?}");
        for r in 0..10 {
            if !present[r] {
                assert!(d_phi.row(r).iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn color_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let net = ColorNet::new(&mut store, "c", 5, 8, &mut rng);
        let x = Matrix::from_vec(6, 5, (0..30).map(|_| rng.random_range(-1.0..1.0)).collect());
        let r: Vec<f32> = (0..18).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |s: &ParamStore, x: &Matrix| -> f64 {
            let (o, _) = net.forward(s, x.clone());
            assert!(o.data.iter().all(|v| (0.0..=1.0).contains(v)));
            o.data.iter().zip(&r).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
        };
        let (_, cache) = net.forward(&store, x.clone());
        let dx = net.backward(&mut store, &cache, &Matrix::from_vec(6, 3, r.clone()));
        let report = check_gradients(&store, |s| loss(s, &x), &FdConfig::default(), &mut rng);
        assert!(report.passed(), "{report:?}");
        let rx = check_input_gradient(&x.data, &dx.data, |v| loss(&store, &Matrix::from_vec(6, 5, v.to_vec())), &FdConfig::default(), &mut rng);
        assert!(rx.passed(), "{rx:?}");
    }
}
