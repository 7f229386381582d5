//! Input encodings: sinusoidal positional features and the multi-resolution
//! hash grid.

use std::f64::consts::PI;

use super::{HashConfig, ParamVector};

/// Second prime of the spatial hash; the first dimension uses 1.
pub const HASH_PRIME: u32 = 2_654_435_761;

/// `[sin(2^k π p), cos(2^k π p)]` for `k = 0..m`, `p = u` then `p = v`.
pub fn encode_positional(coord: [f64; 2], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; 4 * m];
    positional_into(coord, m, &mut out);
    out
}

pub(crate) fn positional_into(coord: [f64; 2], m: usize, out: &mut [f64]) {
    let mut i = 0;
    for p in coord {
        let mut freq = PI;
        for _ in 0..m {
            let (s, c) = (freq * p).sin_cos();
            out[i] = s;
            out[i + 1] = c;
            i += 2;
            freq *= 2.0;
        }
    }
}

/// Table slot of integer grid vertex `(x, y)`.
#[inline]
pub fn hash_corner_index(x: u32, y: u32, table_log2: u32) -> usize {
    let mask = if table_log2 >= 32 { u32::MAX } else { (1u32 << table_log2) - 1 };
    ((x ^ y.wrapping_mul(HASH_PRIME)) & mask) as usize
}

/// Corner vertices of the cell containing `coord` at grid resolution `res`, and
/// their bilinear weights, ordered `(x0,y0), (x0+1,y0), (x0,y0+1), (x0+1,y0+1)`.
#[inline]
pub fn bilinear_corners(coord: [f64; 2], res: usize) -> ([[u32; 2]; 4], [f64; 4]) {
    let x = coord[0] * res as f64;
    let y = coord[1] * res as f64;
    let (x0, y0) = (x.floor(), y.floor());
    cell_corners(x0 as u32, y0 as u32, x - x0, y - y0)
}

#[inline]
pub(crate) fn cell_corners(x0: u32, y0: u32, fx: f64, fy: f64) -> ([[u32; 2]; 4], [f64; 4]) {
    (
        [[x0, y0], [x0 + 1, y0], [x0, y0 + 1], [x0 + 1, y0 + 1]],
        [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy],
    )
}

/// Interpolated features of one level, evaluating the bilinear interpolant of
/// cell `(cx, cy)` at level-space point `(x, y)`.
#[cfg(test)]
pub(crate) fn interpolate_in_cell(
    table: &[f64],
    cfg: &HashConfig,
    cell: [u32; 2],
    point: [f64; 2],
) -> Vec<f64> {
    let fx = point[0] - cell[0] as f64;
    let fy = point[1] - cell[1] as f64;
    let (corners, weights) = cell_corners(cell[0], cell[1], fx, fy);
    let f = cfg.feat_dim;
    let mut out = vec![0.0; f];
    for (c, w) in corners.iter().zip(weights) {
        let slot = hash_corner_index(c[0], c[1], cfg.table_log2);
        for k in 0..f {
            out[k] += w * table[slot * f + k];
        }
    }
    out
}

/// Concatenated per-level interpolated features, length `levels · feat_dim`.
pub fn encode_hash(coord: [f64; 2], params: &ParamVector, cfg: &HashConfig) -> Vec<f64> {
    let f = cfg.feat_dim;
    let mut out = vec![0.0; cfg.levels * f];
    for l in 0..cfg.levels {
        let table = params.slice(&format!("hash.level{l}")).expect("hash table slice");
        let (corners, weights) = bilinear_corners(coord, cfg.resolution(l));
        for (c, w) in corners.iter().zip(weights) {
            let slot = hash_corner_index(c[0], c[1], cfg.table_log2);
            for k in 0..f {
                out[l * f + k] += w * table[slot * f + k];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_params, ArchSpec};

    fn approx(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-15
    }

    #[test]
    fn positional_examples() {
        let e = encode_positional([0.5, 0.0], 1);
        assert!(approx(e[0], 1.0) && approx(e[1], 0.0));
        let e = encode_positional([0.0, 0.0], 4);
        for pair in e.chunks(2) {
            assert_eq!(pair, &[0.0, 1.0]);
        }
        let e = encode_positional([0.25, 0.0], 2);
        assert!(approx(e[2], 1.0) && approx(e[3], 0.0));
        assert_eq!(encode_positional([0.1, 0.2], 5).len(), 20);
    }

    fn small_hash() -> (HashConfig, ParamVector) {
        let cfg = HashConfig { levels: 3, base_res: 4, growth: 2.0, table_log2: 10, ..HashConfig::default() };
        let p = init_params(&ArchSpec::HashMlp(cfg), 9);
        (cfg, p)
    }

    #[test]
    fn hash_vertex_returns_stored_feature() {
        let (cfg, p) = small_hash();
        // (0.5, 0.25) is a vertex at resolutions 4, 8 and 16.
        let out = encode_hash([0.5, 0.25], &p, &cfg);
        for l in 0..cfg.levels {
            let res = cfg.resolution(l) as f64;
            let (x, y) = ((0.5 * res) as u32, (0.25 * res) as u32);
            let slot = hash_corner_index(x, y, cfg.table_log2);
            let table = p.slice(&format!("hash.level{l}")).unwrap();
            for k in 0..cfg.feat_dim {
                assert_eq!(out[l * cfg.feat_dim + k], table[slot * cfg.feat_dim + k]);
            }
        }
    }

    #[test]
    fn hash_cell_center_is_corner_mean() {
        let (cfg, p) = small_hash();
        let res = cfg.resolution(0) as f64;
        let out = encode_hash([1.5 / res, 2.5 / res], &p, &cfg);
        let table = p.slice("hash.level0").unwrap();
        for k in 0..cfg.feat_dim {
            let mean: f64 = [[1, 2], [2, 2], [1, 3], [2, 3]]
                .iter()
                .map(|c| table[hash_corner_index(c[0], c[1], cfg.table_log2) * cfg.feat_dim + k])
                .sum::<f64>()
                / 4.0;
            assert!((out[k] - mean).abs() < 1e-18);
        }
    }

    #[test]
    fn bilinear_weights_partition_unity() {
        for (u, v) in [(0.0, 0.0), (0.123, 0.987), (0.5, 0.5), (0.999, 0.001)] {
            for res in [3, 8, 91] {
                let (_, w) = bilinear_corners([u, v], res);
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
                assert!(w.iter().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn adjacent_cells_agree_on_shared_edge() {
        let (cfg, p) = small_hash();
        let table = p.slice("hash.level1").unwrap();
        // Vertical edge x = 3 between cells (2, 5) and (3, 5).
        let point = [3.0, 5.37];
        let left = interpolate_in_cell(table, &cfg, [2, 5], point);
        let right = interpolate_in_cell(table, &cfg, [3, 5], point);
        // Horizontal edge y = 6 between cells (4, 5) and (4, 6).
        let point2 = [4.81, 6.0];
        let below = interpolate_in_cell(table, &cfg, [4, 5], point2);
        let above = interpolate_in_cell(table, &cfg, [4, 6], point2);
        for k in 0..cfg.feat_dim {
            assert!((left[k] - right[k]).abs() < 1e-12);
            assert!((below[k] - above[k]).abs() < 1e-12);
        }
    }
}
