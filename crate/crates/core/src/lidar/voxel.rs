//! Sparse voxel grid holding the mean position of the points in each cell.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::Vec3;

/// Axis-aligned cube split into `resolution³` cubic cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridBounds {
    pub origin: [f64; 3],
    pub extent: f64,
}

impl GridBounds {
    /// Smallest cube containing every point, grown by `margin` on each side.
    pub fn enclosing(points: &[Vec3], margin: f64) -> Option<Self> {
        let first = points.first()?;
        let mut lo = *first;
        let mut hi = *first;
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max) + 2.0 * margin;
        Some(Self {
            origin: [lo[0] - margin, lo[1] - margin, lo[2] - margin],
            extent: extent.max(1e-3),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelCell {
    pub coord: [i32; 3],
    pub mean: Vec3,
    pub count: usize,
}

/// Neighbor slot marker for an unoccupied tap.
pub const NO_NEIGHBOR: u32 = u32::MAX;

/// Offsets of the 27 taps of a 3×3×3 stencil, x fastest.
pub fn stencil_offsets() -> [[i32; 3]; 27] {
    let mut out = [[0; 3]; 27];
    for (k, o) in out.iter_mut().enumerate() {
        let k = k as i32;
        *o = [k % 3 - 1, (k / 3) % 3 - 1, k / 9 - 1];
    }
    out
}

#[derive(Debug, Clone)]
pub struct VoxelGrid {
    pub resolution: u32,
    pub cell_size: f64,
    pub origin: Vec3,
    /// Occupied cells sorted by `(z, y, x)`.
    pub cells: Vec<VoxelCell>,
    lookup: HashMap<[i32; 3], usize>,
}

impl VoxelGrid {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn find(&self, coord: [i32; 3]) -> Option<usize> {
        self.lookup.get(&coord).copied()
    }

    pub fn cell_center(&self, coord: [i32; 3]) -> Vec3 {
        Vec3::new(
            self.origin[0] + (coord[0] as f64 + 0.5) * self.cell_size,
            self.origin[1] + (coord[1] as f64 + 0.5) * self.cell_size,
            self.origin[2] + (coord[2] as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn total_count(&self) -> usize {
        self.cells.iter().map(|c| c.count).sum()
    }

    /// For every cell, the index of the occupied cell at each stencil tap, or
    /// [`NO_NEIGHBOR`].
    pub fn neighbor_table(&self) -> Vec<[u32; 27]> {
        let offsets = stencil_offsets();
        self.cells
            .iter()
            .map(|c| {
                let mut row = [NO_NEIGHBOR; 27];
                for (k, o) in offsets.iter().enumerate() {
                    let n = [c.coord[0] + o[0], c.coord[1] + o[1], c.coord[2] + o[2]];
                    if let Some(j) = self.find(n) {
                        row[k] = j as u32;
                    }
                }
                row
            })
            .collect()
    }
}

/// Groups points into cells by floor division and averages their positions.
/// Points outside the bounds are ignored.
pub fn voxelize(points: &[Vec3], resolution: u32, bounds: &GridBounds) -> Result<VoxelGrid> {
    if resolution == 0 {
        return invalid("voxel resolution must be at least 1");
    }
    if !(bounds.extent > 0.0 && bounds.extent.is_finite()) {
        return invalid("voxel grid extent must be positive");
    }
    let cell_size = bounds.extent / resolution as f64;
    let origin = Vec3::from(bounds.origin);
    let mut sums: HashMap<[i32; 3], (Vec3, usize)> = HashMap::new();
    for p in points {
        let mut coord = [0i32; 3];
        let mut inside = true;
        for a in 0..3 {
            let c = ((p[a] - origin[a]) / cell_size).floor();
            if !(c >= 0.0 && c < resolution as f64) {
                inside = false;
                break;
            }
            coord[a] = c as i32;
        }
        if !inside {
            continue;
        }
        let e = sums.entry(coord).or_insert((Vec3::zeros(), 0));
        e.0 += p;
        e.1 += 1;
    }
    let mut cells: Vec<VoxelCell> = sums
        .into_iter()
        .map(|(coord, (sum, count))| VoxelCell {
            coord,
            mean: sum / count as f64,
            count,
        })
        .collect();
    cells.sort_by_key(|c| [c.coord[2], c.coord[1], c.coord[0]]);
    let lookup = cells.iter().enumerate().map(|(i, c)| (c.coord, i)).collect();
    Ok(VoxelGrid {
        resolution,
        cell_size,
        origin,
        cells,
        lookup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn unit() -> GridBounds {
        GridBounds {
            origin: [0.0; 3],
            extent: 4.0,
        }
    }

    #[test]
    fn single_point_single_cell() {
        let p = Vec3::new(1.3, 2.7, 0.2);
        let g = voxelize(&[p], 4, &unit()).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.cells[0].coord, [1, 2, 0]);
        assert_eq!(g.cells[0].mean, p);
    }

    #[test]
    fn two_points_one_cell_are_averaged() {
        let a = Vec3::new(1.1, 1.2, 1.3);
        let b = Vec3::new(1.9, 1.4, 1.5);
        let g = voxelize(&[a, b], 4, &unit()).unwrap();
        assert_eq!(g.len(), 1);
        assert!((g.cells[0].mean - (a + b) / 2.0).norm() < 1e-12);
        assert_eq!(g.cells[0].count, 2);
    }

    #[test]
    fn empty_input_is_empty_grid() {
        assert!(voxelize(&[], 8, &unit()).unwrap().is_empty());
        assert!(voxelize(&[], 0, &unit()).is_err());
    }

    #[test]
    fn matches_grouping_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec3> = (0..3000)
            .map(|_| Vec3::new(rng.random_range(-0.5..4.5), rng.random_range(-0.5..4.5), rng.random_range(-0.5..4.5)))
            .collect();
        let g = voxelize(&pts, 7, &unit()).unwrap();
        let cs = 4.0 / 7.0;
        let mut groups: BTreeMap<[i64; 3], Vec<Vec3>> = BTreeMap::new();
        let mut inside = 0;
        for p in &pts {
            let c = [(p.x / cs).floor() as i64, (p.y / cs).floor() as i64, (p.z / cs).floor() as i64];
            if c.iter().all(|v| (0..7).contains(v)) {
                groups.entry(c).or_default().push(*p);
                inside += 1;
            }
        }
        assert_eq!(g.total_count(), inside);
        assert_eq!(g.len(), groups.len());
        for (c, ps) in groups {
            let i = g.find([c[0] as i32, c[1] as i32, c[2] as i32]).unwrap();
            let mean = ps.iter().fold(Vec3::zeros(), |s, p| s + p) / ps.len() as f64;
            assert!((g.cells[i].mean - mean).norm() < 1e-6);
            assert_eq!(g.cells[i].count, ps.len());
            let center = g.cell_center(g.cells[i].coord);
            assert!((0..3).all(|a| (g.cells[i].mean[a] - center[a]).abs() <= cs / 2.0 + 1e-12));
        }
    }

    #[test]
    fn neighbor_table_links_adjacent_cells() {
        let pts = [Vec3::new(0.5, 0.5, 0.5), Vec3::new(1.5, 0.5, 0.5), Vec3::new(3.5, 3.5, 3.5)];
        let g = voxelize(&pts, 4, &unit()).unwrap();
        let t = g.neighbor_table();
        let a = g.find([0, 0, 0]).unwrap();
        let b = g.find([1, 0, 0]).unwrap();
        assert_eq!(t[a][13], a as u32);
        assert_eq!(t[a][14], b as u32);
        assert_eq!(t[b][12], a as u32);
        let far = g.find([3, 3, 3]).unwrap();
        assert_eq!(t[far].iter().filter(|v| **v != NO_NEIGHBOR).count(), 1);
    }
}
