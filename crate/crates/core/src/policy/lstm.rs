// Single-layer LSTM cell with gate order (input, forget, output, candidate)
// and weights laid out row-major as `4H x (X + H)` over `[x; h_prev]`.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{sigmoid, tanh};

#[derive(Clone, Debug)]
pub(crate) struct Cache {
    xh: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

pub(crate) fn forward(w: &[f64], b: &[f64], x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Cache {
    let hn = h_prev.len();
    let cols = x.len() + hn;
    debug_assert_eq!(w.len(), 4 * hn * cols);
    let mut xh = Vec::with_capacity(cols);
    xh.extend_from_slice(x);
    xh.extend_from_slice(h_prev);
    let mut z = b.to_vec();
    for (r, zr) in z.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *zr += dot(row, &xh);
    }
    let i: Vec<f64> = z[..hn].iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<f64> = z[hn..2 * hn].iter().map(|&v| sigmoid(v)).collect();
    let o: Vec<f64> = z[2 * hn..3 * hn].iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<f64> = z[3 * hn..].iter().map(|&v| tanh(v)).collect();
    let c: Vec<f64> = (0..hn).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|&v| tanh(v)).collect();
    let h = (0..hn).map(|k| o[k] * tanh_c[k]).collect();
    Cache {
        xh,
        i,
        f,
        o,
        g,
        c_prev: c_prev.to_vec(),
        tanh_c,
        h,
        c,
    }
}

/// Backpropagates `dh`, `dc` through one step, accumulating weight gradients.
/// Returns `(dx, dh_prev, dc_prev)`.
pub(crate) fn backward(
    w: &[f64],
    cache: &Cache,
    dh: &[f64],
    dc: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hn = dh.len();
    let cols = cache.xh.len();
    let xn = cols - hn;
    let mut dz = vec![0.0; 4 * hn];
    let mut dc_prev = vec![0.0; hn];
    for k in 0..hn {
        let do_ = dh[k] * cache.tanh_c[k];
        let dct = dc[k] + dh[k] * cache.o[k] * (1.0 - cache.tanh_c[k] * cache.tanh_c[k]);
        let di = dct * cache.g[k];
        let df = dct * cache.c_prev[k];
        let dg = dct * cache.i[k];
        dc_prev[k] = dct * cache.f[k];
        dz[k] = di * cache.i[k] * (1.0 - cache.i[k]);
        dz[hn + k] = df * cache.f[k] * (1.0 - cache.f[k]);
        dz[2 * hn + k] = do_ * cache.o[k] * (1.0 - cache.o[k]);
        dz[3 * hn + k] = dg * (1.0 - cache.g[k] * cache.g[k]);
    }
    let mut dxh = vec![0.0; cols];
    for (r, &d) in dz.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        gb[r] += d;
        let row = &w[r * cols..(r + 1) * cols];
        let grow = &mut gw[r * cols..(r + 1) * cols];
        for c in 0..cols {
            grow[c] += d * cache.xh[c];
            dxh[c] += d * row[c];
        }
    }
    let dh_prev = dxh.split_off(xn);
    (dxh, dh_prev, dc_prev)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
