//! Minimal row-major f64 matrix with the three product shapes the model
//! needs. All parallel variants partition output rows, so every output
//! element is accumulated by exactly one thread in a fixed order and results
//! are bit-identical for any worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len());
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Minimum number of output rows per rayon task; keeps tiny products
/// single-threaded.
const PAR_ROW_CHUNK: usize = 16;

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Independent fused accumulators so the loop vectorizes to FMA chains
    // without reassociating a single serial dependency.
    let n = a.len().min(b.len());
    let mut acc = [0.0f64; 8];
    let chunks = n / 8;
    for i in 0..chunks {
        let j = i * 8;
        acc[0] = a[j].mul_add(b[j], acc[0]);
        acc[1] = a[j + 1].mul_add(b[j + 1], acc[1]);
        acc[2] = a[j + 2].mul_add(b[j + 2], acc[2]);
        acc[3] = a[j + 3].mul_add(b[j + 3], acc[3]);
        acc[4] = a[j + 4].mul_add(b[j + 4], acc[4]);
        acc[5] = a[j + 5].mul_add(b[j + 5], acc[5]);
        acc[6] = a[j + 6].mul_add(b[j + 6], acc[6]);
        acc[7] = a[j + 7].mul_add(b[j + 7], acc[7]);
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for j in chunks * 8..n {
        s = a[j].mul_add(b[j], s);
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi = alpha.mul_add(*xi, *yi);
    }
}

/// Four simultaneous dot products of one row against four contiguous
/// weight rows; shares the `a` loads and keeps four FMA chains in flight.
#[inline]
fn dot4(a: &[f64], b0: &[f64], b1: &[f64], b2: &[f64], b3: &[f64]) -> [f64; 4] {
    let n = a.len();
    let mut acc = [[0.0f64; 4]; 4];
    let chunks = n / 4;
    for i in 0..chunks {
        let j = i * 4;
        for l in 0..4 {
            let av = a[j + l];
            acc[0][l] = av.mul_add(b0[j + l], acc[0][l]);
            acc[1][l] = av.mul_add(b1[j + l], acc[1][l]);
            acc[2][l] = av.mul_add(b2[j + l], acc[2][l]);
            acc[3][l] = av.mul_add(b3[j + l], acc[3][l]);
        }
    }
    let mut out = [0.0f64; 4];
    for (o, lanes) in out.iter_mut().zip(&acc) {
        *o = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    }
    for j in chunks * 4..n {
        let av = a[j];
        out[0] = av.mul_add(b0[j], out[0]);
        out[1] = av.mul_add(b1[j], out[1]);
        out[2] = av.mul_add(b2[j], out[2]);
        out[3] = av.mul_add(b3[j], out[3]);
    }
    out
}

/// Two rows against four weight rows with shared loads; the per-pair
/// accumulation order (lanes mod 4, reduce (0+1)+(2+3), scalar tail in k
/// order) matches `dot4` exactly, so an element's bits do not depend on
/// whether its row was processed alone or as part of a pair.
#[allow(clippy::too_many_arguments)]
#[inline]
fn dot4x2(a0: &[f64], a1: &[f64], b0: &[f64], b1: &[f64], b2: &[f64], b3: &[f64]) -> [[f64; 4]; 2] {
    let n = a0.len();
    let mut acc = [[[0.0f64; 4]; 4]; 2]; // [a][b][lane]
    let chunks = n / 4;
    for i in 0..chunks {
        let j = i * 4;
        for l in 0..4 {
            let av0 = a0[j + l];
            let av1 = a1[j + l];
            acc[0][0][l] = av0.mul_add(b0[j + l], acc[0][0][l]);
            acc[0][1][l] = av0.mul_add(b1[j + l], acc[0][1][l]);
            acc[0][2][l] = av0.mul_add(b2[j + l], acc[0][2][l]);
            acc[0][3][l] = av0.mul_add(b3[j + l], acc[0][3][l]);
            acc[1][0][l] = av1.mul_add(b0[j + l], acc[1][0][l]);
            acc[1][1][l] = av1.mul_add(b1[j + l], acc[1][1][l]);
            acc[1][2][l] = av1.mul_add(b2[j + l], acc[1][2][l]);
            acc[1][3][l] = av1.mul_add(b3[j + l], acc[1][3][l]);
        }
    }
    let mut out = [[0.0f64; 4]; 2];
    for (o, lanes) in out.iter_mut().zip(&acc) {
        for (ob, lb) in o.iter_mut().zip(lanes) {
            *ob = (lb[0] + lb[1]) + (lb[2] + lb[3]);
        }
    }
    for j in chunks * 4..n {
        let av0 = a0[j];
        let av1 = a1[j];
        out[0][0] = av0.mul_add(b0[j], out[0][0]);
        out[0][1] = av0.mul_add(b1[j], out[0][1]);
        out[0][2] = av0.mul_add(b2[j], out[0][2]);
        out[0][3] = av0.mul_add(b3[j], out[0][3]);
        out[1][0] = av1.mul_add(b0[j], out[1][0]);
        out[1][1] = av1.mul_add(b1[j], out[1][1]);
        out[1][2] = av1.mul_add(b2[j], out[1][2]);
        out[1][3] = av1.mul_add(b3[j], out[1][3]);
    }
    out
}

/// Rows of `b` that fit comfortably in L2 alongside a tile of `a` rows.
const PANEL: usize = 256;
const A_TILE: usize = 32;

/// `out = a * b^T` where `a` is n x k and `b` is m x k; result n x m.
pub fn matmul_nt(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.cols);
    matmul_nt_rect(a, b, b.rows)
}

/// `a * b^T` restricted to the first `b_rows` rows of `b` with dot length
/// `a.cols` (which may be shorter than `b.cols`), so callers can evaluate a
/// leading submatrix of a wider weight matrix in place. Tiled so a panel of
/// `b` rows stays cache-resident across a tile of `a` rows.
pub fn matmul_nt_rect(a: &Mat, b: &Mat, b_rows: usize) -> Mat {
    assert!(a.cols <= b.cols);
    assert!(b_rows <= b.rows);
    let k = a.cols;
    let mut out = Mat::zeros(a.rows, b_rows);
    if b_rows == 0 || a.rows == 0 {
        return out;
    }
    let tile_body = |(tile_idx, out_tile): (usize, &mut [f64])| {
        let r0 = tile_idx * A_TILE;
        let rows = out_tile.len() / b_rows;
        for j0 in (0..b_rows).step_by(PANEL) {
            let j1 = (j0 + PANEL).min(b_rows);
            let mut row_iter = out_tile.chunks_mut(b_rows).enumerate().take(rows);
            // Row pairs share the weight-row loads.
            loop {
                let Some((r_a, out_a)) = row_iter.next() else {
                    break;
                };
                match row_iter.next() {
                    Some((r_b, out_b)) => {
                        let row_a = &a.row(r0 + r_a)[..k];
                        let row_b = &a.row(r0 + r_b)[..k];
                        let mut j = j0;
                        while j + 4 <= j1 {
                            let q = dot4x2(
                                row_a,
                                row_b,
                                &b.row(j)[..k],
                                &b.row(j + 1)[..k],
                                &b.row(j + 2)[..k],
                                &b.row(j + 3)[..k],
                            );
                            out_a[j..j + 4].copy_from_slice(&q[0]);
                            out_b[j..j + 4].copy_from_slice(&q[1]);
                            j += 4;
                        }
                        while j < j1 {
                            out_a[j] = dot(row_a, &b.row(j)[..k]);
                            out_b[j] = dot(row_b, &b.row(j)[..k]);
                            j += 1;
                        }
                    }
                    None => {
                        let a_row = &a.row(r0 + r_a)[..k];
                        let mut j = j0;
                        while j + 4 <= j1 {
                            let q = dot4(
                                a_row,
                                &b.row(j)[..k],
                                &b.row(j + 1)[..k],
                                &b.row(j + 2)[..k],
                                &b.row(j + 3)[..k],
                            );
                            out_a[j..j + 4].copy_from_slice(&q);
                            j += 4;
                        }
                        while j < j1 {
                            out_a[j] = dot(a_row, &b.row(j)[..k]);
                            j += 1;
                        }
                    }
                }
            }
        }
    };
    if a.rows >= PAR_ROW_CHUNK * 2 {
        out.data
            .par_chunks_mut(b_rows * A_TILE)
            .enumerate()
            .for_each(tile_body);
    } else {
        out.data
            .chunks_mut(b_rows * A_TILE)
            .enumerate()
            .for_each(tile_body);
    }
    out
}

/// `out = a * b` where `a` is n x k and `b` is k x m; result n x m.
/// Row accumulation (`out[i] += a[i][k] * b[k]`) tiled so a panel of `b`
/// rows stays cache-resident across a tile of output rows; the k-order per
/// output element is unchanged by the tiling.
pub fn matmul_nn(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.rows);
    let mut out = Mat::zeros(a.rows, b.cols);
    if a.rows == 0 || b.cols == 0 {
        return out;
    }
    let cols = out.cols;
    let tile_body = |(tile_idx, out_tile): (usize, &mut [f64])| {
        let r0 = tile_idx * A_TILE;
        for k0 in (0..a.cols).step_by(PANEL) {
            let k1 = (k0 + PANEL).min(a.cols);
            for (ri, out_row) in out_tile.chunks_mut(cols).enumerate() {
                let a_row = a.row(r0 + ri);
                for (k, &av) in a_row.iter().enumerate().take(k1).skip(k0) {
                    if av != 0.0 {
                        axpy(av, b.row(k), out_row);
                    }
                }
            }
        }
    };
    if a.rows >= PAR_ROW_CHUNK * 2 {
        out.data
            .par_chunks_mut(cols * A_TILE)
            .enumerate()
            .for_each(tile_body);
    } else {
        out.data
            .chunks_mut(cols * A_TILE)
            .enumerate()
            .for_each(tile_body);
    }
    out
}

/// `out = a^T * b` where `a` is n x k and `b` is n x m; result k x m.
/// Used for weight gradients; output row j accumulates over the batch in
/// ascending batch order regardless of tiling.
pub fn matmul_tn(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.rows, b.rows);
    let mut out = Mat::zeros(a.cols, b.cols);
    if a.cols == 0 || b.cols == 0 {
        return out;
    }
    let cols = out.cols;
    let tile_body = |(tile_idx, out_tile): (usize, &mut [f64])| {
        let j0 = tile_idx * A_TILE;
        for i0 in (0..a.rows).step_by(PANEL) {
            let i1 = (i0 + PANEL).min(a.rows);
            for (ji, out_row) in out_tile.chunks_mut(cols).enumerate() {
                let j = j0 + ji;
                for i in i0..i1 {
                    let av = a.row(i)[j];
                    if av != 0.0 {
                        axpy(av, b.row(i), out_row);
                    }
                }
            }
        }
    };
    if out.rows >= PAR_ROW_CHUNK * 2 {
        out.data
            .par_chunks_mut(cols * A_TILE)
            .enumerate()
            .for_each(tile_body);
    } else {
        out.data
            .chunks_mut(cols * A_TILE)
            .enumerate()
            .for_each(tile_body);
    }
    out
}
