//! k-nearest-neighbor search over 3D points: a brute-force reference and a
//! uniform-grid accelerated search that returns identical neighbor lists.
//!
//! Neighbors are ordered by squared distance, ties by index, so a point is
//! its own first neighbor unless it duplicates an earlier one. `k` larger
//! than the cloud clamps to its size.

/// Flat N x k neighbor table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighbors {
    k: usize,
    indices: Vec<u32>,
}

impl Neighbors {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.indices.len() / self.k
        }
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn take_k(cands: &mut [(f64, u32)], k: usize, out: &mut Vec<u32>) {
    cands.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    out.extend(cands[..k].iter().map(|c| c.1));
}

pub fn knn_brute(points: &[[f64; 3]], k: usize) -> Neighbors {
    let k = k.min(points.len());
    let mut indices = Vec::with_capacity(points.len() * k);
    let mut cands = Vec::with_capacity(points.len());
    for p in points {
        cands.clear();
        cands.extend(points.iter().enumerate().map(|(j, q)| (dist2(p, q), j as u32)));
        take_k(&mut cands, k, &mut indices);
    }
    Neighbors { k, indices }
}

pub fn knn_grid(points: &[[f64; 3]], k: usize) -> Neighbors {
    let n = points.len();
    let k = k.min(n);
    if k == 0 {
        return Neighbors { k, indices: vec![] };
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let extent: Vec<f64> = (0..3).map(|a| hi[a] - lo[a]).collect();
    // Aim for roughly k points per occupied cell, using the non-degenerate axes.
    let spans: Vec<f64> = extent.iter().copied().filter(|&e| e > 0.0).collect();
    let cell = if spans.is_empty() {
        1.0
    } else {
        let measure: f64 = spans.iter().product();
        (measure * k as f64 / n as f64).powf(1.0 / spans.len() as f64).max(1e-9)
    };
    let max_extent = extent.iter().cloned().fold(0.0, f64::max);
    let mut cell = cell.max(max_extent / 1000.0);
    let dims_for = |cell: f64| -> [usize; 3] { std::array::from_fn(|a| (extent[a] / cell).floor() as usize + 1) };
    while dims_for(cell).iter().product::<usize>() > 8 * n + 64 {
        cell *= 1.5;
    }
    let dims = dims_for(cell);
    let cell_of = |p: &[f64; 3]| -> [usize; 3] {
        std::array::from_fn(|a| (((p[a] - lo[a]) / cell).floor() as usize).min(dims[a] - 1))
    };
    let flat = |c: [usize; 3]| (c[2] * dims[1] + c[1]) * dims[0] + c[0];

    // Counting sort of points into cells.
    let mut start = vec![0u32; dims[0] * dims[1] * dims[2] + 1];
    let cells: Vec<usize> = points.iter().map(|p| flat(cell_of(p))).collect();
    for &c in &cells {
        start[c + 1] += 1;
    }
    for i in 1..start.len() {
        start[i] += start[i - 1];
    }
    let mut fill = start.clone();
    let mut sorted = vec![0u32; n];
    for (i, &c) in cells.iter().enumerate() {
        sorted[fill[c] as usize] = i as u32;
        fill[c] += 1;
    }

    let max_ring = *dims.iter().max().unwrap();
    let mut indices = Vec::with_capacity(n * k);
    let mut cands: Vec<(f64, u32)> = Vec::new();
    for p in points {
        cands.clear();
        let c = cell_of(p);
        let mut ring = 0usize;
        loop {
            // Visit the shell of cells at Chebyshev distance `ring`.
            let r = ring as isize;
            for dz in -r..=r {
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                            continue;
                        }
                        let cc = [c[0] as isize + dx, c[1] as isize + dy, c[2] as isize + dz];
                        if (0..3).any(|a| cc[a] < 0 || cc[a] >= dims[a] as isize) {
                            continue;
                        }
                        let id = flat([cc[0] as usize, cc[1] as usize, cc[2] as usize]);
                        for &j in &sorted[start[id] as usize..start[id + 1] as usize] {
                            cands.push((dist2(p, &points[j as usize]), j));
                        }
                    }
                }
            }
            if ring >= max_ring {
                break;
            }
            if cands.len() >= k {
                // Any point outside the visited shells is at least ring * cell away.
                cands.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let bound = ring as f64 * cell;
                if cands[k - 1].0 < bound * bound {
                    break;
                }
            }
            ring += 1;
        }
        take_k(&mut cands, k, &mut indices);
    }
    Neighbors { k, indices }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn self_is_first_neighbor() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [5.0, 0.0, 0.0]];
        let nb = knn_brute(&pts, 2);
        assert_eq!(nb.row(0), &[0, 1]);
        assert_eq!(nb.row(2), &[2, 1]);
    }

    #[test]
    fn k_clamps_to_n() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        assert_eq!(knn_grid(&pts, 16).k(), 2);
        assert_eq!(knn_brute(&pts, 16).row(1), &[1, 0]);
    }

    #[test]
    fn duplicate_points_tie_by_index() {
        let pts = [[1.0, 1.0, 1.0]; 4];
        let nb = knn_grid(&pts, 3);
        assert_eq!(nb.row(2), &[0, 1, 2]);
        assert_eq!(nb, knn_brute(&pts, 3));
    }

    #[test]
    fn grid_matches_brute_on_planar_and_clustered_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let planar: Vec<[f64; 3]> = (0..300).map(|_| [rng.random::<f64>() * 4.0, rng.random::<f64>(), 0.0]).collect();
        assert_eq!(knn_grid(&planar, 8), knn_brute(&planar, 8));
        let clustered: Vec<[f64; 3]> = (0..300)
            .map(|i| {
                let c = if i % 2 == 0 { 0.0 } else { 10.0 };
                [c + rng.random::<f64>() * 0.1, rng.random::<f64>() * 0.1, c]
            })
            .collect();
        assert_eq!(knn_grid(&clustered, 16), knn_brute(&clustered, 16));
    }
}
