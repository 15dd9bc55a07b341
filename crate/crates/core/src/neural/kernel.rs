//! Dense kernels shared by single-row and batched paths.
//!
//! Every output element is accumulated in the same order (bias first, then
//! inputs in ascending index) whatever the batch size, so batching never
//! changes a single bit of the result.

/// `out[r] = bias + Σ_k x[r][k] · w[k, ..]` for every row `r`, with `w`
/// stored row-major as `x_len × cols`.
pub(crate) fn affine_rows(xs: &[&[f64]], w: &[f64], bias: &[f64], out: &mut [Vec<f64>]) {
    if xs.is_empty() {
        return;
    }
    let cols = bias.len();
    let k_len = xs[0].len();
    debug_assert_eq!(w.len(), k_len * cols);
    for row in out.iter_mut() {
        row.clear();
        row.extend_from_slice(bias);
    }
    for k in 0..k_len {
        let wk = &w[k * cols..(k + 1) * cols];
        for (x, row) in xs.iter().zip(out.iter_mut()) {
            let a = x[k];
            if a == 0.0 {
                continue;
            }
            for (o, &wv) in row.iter_mut().zip(wk) {
                *o += a * wv;
            }
        }
    }
}

pub(crate) fn affine(x: &[f64], w: &[f64], bias: &[f64]) -> Vec<f64> {
    let mut out = [Vec::with_capacity(bias.len())];
    affine_rows(&[x], w, bias, &mut out);
    let [o] = out;
    o
}

/// `dx[k] += Σ_j w[k, j] · dy[j]`.
pub(crate) fn backprop_input(w: &[f64], dy: &[f64], dx: &mut [f64]) {
    let cols = dy.len();
    for (k, d) in dx.iter_mut().enumerate() {
        let wk = &w[k * cols..(k + 1) * cols];
        let mut s = 0.0;
        for (&wv, &g) in wk.iter().zip(dy) {
            s += wv * g;
        }
        *d += s;
    }
}

/// `dw[k, j] += x[k] · dy[j]`.
pub(crate) fn outer_add(x: &[f64], dy: &[f64], dw: &mut [f64]) {
    let cols = dy.len();
    for (k, &a) in x.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let row = &mut dw[k * cols..(k + 1) * cols];
        for (o, &g) in row.iter_mut().zip(dy) {
            *o += a * g;
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
