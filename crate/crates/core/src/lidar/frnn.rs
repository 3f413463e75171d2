//! Fixed-radius K-nearest-neighbor search on a uniform grid whose cell edge
//! equals the search radius, so every query inspects 27 cells.

use std::collections::HashMap;

use crate::error::{invalid, Result};
use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: u32,
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct FrnnIndex {
    pub k: usize,
    pub radius: f64,
    positions: Vec<Vec3>,
    /// Point ids grouped by cell; `cells` maps a cell key to its slice.
    sorted_ids: Vec<u32>,
    cells: HashMap<[i64; 3], (u32, u32)>,
}

impl FrnnIndex {
    pub fn build(positions: &[Vec3], k: usize, radius: f64) -> Result<Self> {
        if k == 0 {
            return invalid("FRNN neighbor cap K must be at least 1");
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return invalid("FRNN radius must be positive");
        }
        let key_of = |p: &Vec3| [(p.x / radius).floor() as i64, (p.y / radius).floor() as i64, (p.z / radius).floor() as i64];
        let mut keyed: Vec<([i64; 3], u32)> = positions.iter().enumerate().map(|(i, p)| (key_of(p), i as u32)).collect();
        keyed.sort();
        let mut cells = HashMap::new();
        let mut start = 0;
        while start < keyed.len() {
            let key = keyed[start].0;
            let mut end = start;
            while end < keyed.len() && keyed[end].0 == key {
                end += 1;
            }
            cells.insert(key, (start as u32, end as u32));
            start = end;
        }
        Ok(Self {
            k,
            radius,
            positions: positions.to_vec(),
            sorted_ids: keyed.into_iter().map(|(_, i)| i).collect(),
            cells,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    /// Up to `K` points within `R` of `x`, ascending by distance then id.
    pub fn query(&self, x: &Vec3) -> Vec<Neighbor> {
        let mut out = Vec::with_capacity(self.k);
        self.query_into(x, &mut out);
        out
    }

    pub fn query_into(&self, x: &Vec3, out: &mut Vec<Neighbor>) {
        out.clear();
        if self.positions.is_empty() || !(x.x.is_finite() && x.y.is_finite() && x.z.is_finite()) {
            return;
        }
        let r2 = self.radius * self.radius;
        let base = [
            (x.x / self.radius).floor() as i64,
            (x.y / self.radius).floor() as i64,
            (x.z / self.radius).floor() as i64,
        ];
        // (squared distance, id), kept sorted, at most k long
        let mut best: Vec<(f64, u32)> = Vec::with_capacity(self.k + 1);
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let Some(&(s, e)) = self.cells.get(&[base[0] + dx, base[1] + dy, base[2] + dz]) else {
                        continue;
                    };
                    for &id in &self.sorted_ids[s as usize..e as usize] {
                        let d2 = (self.positions[id as usize] - x).norm_squared();
                        if d2 > r2 {
                            continue;
                        }
                        if best.len() == self.k {
                            let last = best[self.k - 1];
                            if (d2, id) >= last {
                                continue;
                            }
                            best.pop();
                        }
                        let pos = best.partition_point(|&b| b < (d2, id));
                        best.insert(pos, (d2, id));
                    }
                }
            }
        }
        out.extend(best.into_iter().map(|(d2, id)| Neighbor { id, distance: d2.sqrt() }));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn brute_force(points: &[Vec3], x: &Vec3, k: usize, r: f64) -> Vec<(u32, f64)> {
        let mut all: Vec<(f64, u32)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| ((p - x).norm_squared(), i as u32))
            .filter(|(d2, _)| *d2 <= r * r)
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        all.truncate(k);
        all.into_iter().map(|(d2, i)| (i, d2.sqrt())).collect()
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vec3> = (0..1000)
            .map(|_| Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0)))
            .collect();
        let idx = FrnnIndex::build(&pts, 6, 0.3).unwrap();
        let mut nonempty = 0;
        for _ in 0..100 {
            let q = Vec3::new(rng.random_range(-2.2..2.2), rng.random_range(-2.2..2.2), rng.random_range(-1.2..1.2));
            let got: Vec<(u32, f64)> = idx.query(&q).into_iter().map(|n| (n.id, n.distance)).collect();
            assert_eq!(got, brute_force(&pts, &q, 6, 0.3));
            nonempty += (!got.is_empty()) as usize;
        }
        assert!(nonempty > 50);
    }

    #[test]
    fn query_at_indexed_point_returns_it_first() {
        let pts = vec![Vec3::new(0.1, 0.2, 0.3), Vec3::new(0.15, 0.2, 0.3), Vec3::new(5.0, 5.0, 5.0)];
        let idx = FrnnIndex::build(&pts, 6, 0.3).unwrap();
        let n = idx.query(&pts[0]);
        assert_eq!(n[0], Neighbor { id: 0, distance: 0.0 });
        assert_eq!(n.len(), 2);
        assert!(idx.query(&Vec3::new(-3.0, 0.0, 0.0)).is_empty());
    }

    #[test]
    fn ties_break_by_id() {
        let pts = vec![Vec3::new(0.1, 0.0, 0.0), Vec3::new(-0.1, 0.0, 0.0), Vec3::new(0.0, 0.1, 0.0)];
        let idx = FrnnIndex::build(&pts, 2, 0.3).unwrap();
        let ids: Vec<u32> = idx.query(&Vec3::zeros()).iter().map(|n| n.id).collect();
        assert_eq!(ids, vec![0, 1]);
    }

    #[test]
    fn empty_index_and_bad_config() {
        let idx = FrnnIndex::build(&[], 6, 0.3).unwrap();
        assert!(idx.query(&Vec3::zeros()).is_empty());
        assert!(FrnnIndex::build(&[], 0, 0.3).is_err());
        assert!(FrnnIndex::build(&[], 6, 0.0).is_err());
    }

    #[test]
    fn rebuild_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<Vec3> = (0..200).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let a = FrnnIndex::build(&pts, 6, 0.3).unwrap();
        let b = FrnnIndex::build(&pts, 6, 0.3).unwrap();
        let q = Vec3::new(0.5, 0.5, 0.5);
        assert_eq!(a.query(&q), b.query(&q));
    }
}
