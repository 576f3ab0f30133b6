//! Row-major dense kernels with matching backward passes.

/// `y[r, o] = b[o] + sum_i x[r, i] * w[i, o]`
pub fn affine(x: &[f64], rows: usize, d_in: usize, w: &[f64], b: &[f64], d_out: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(rows * d_out);
    for r in 0..rows {
        y.extend_from_slice(b);
        let yr = &mut y[r * d_out..];
        for (i, &xi) in x[r * d_in..(r + 1) * d_in].iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let wi = &w[i * d_out..(i + 1) * d_out];
            for (yo, wo) in yr[..d_out].iter_mut().zip(wi) {
                *yo += xi * wo;
            }
        }
    }
    y
}

/// `y[o] += sum_i x[i] * w[i, o]` for a single row.
pub fn accumulate_vec_mat(y: &mut [f64], x: &[f64], w: &[f64]) {
    let d_out = y.len();
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (yo, wo) in y.iter_mut().zip(&w[i * d_out..(i + 1) * d_out]) {
            *yo += xi * wo;
        }
    }
}

/// Backward of `affine`: accumulates `dw`, `db` and (optionally) `dx`.
#[allow(clippy::too_many_arguments)]
pub fn affine_backward(
    x: &[f64],
    rows: usize,
    d_in: usize,
    w: &[f64],
    dy: &[f64],
    d_out: usize,
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    for r in 0..rows {
        let dyr = &dy[r * d_out..(r + 1) * d_out];
        for (b, g) in db.iter_mut().zip(dyr) {
            *b += g;
        }
        for (i, &xi) in x[r * d_in..(r + 1) * d_in].iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (d, g) in dw[i * d_out..(i + 1) * d_out].iter_mut().zip(dyr) {
                *d += xi * g;
            }
        }
    }
    if let Some(dx) = dx {
        for r in 0..rows {
            let dyr = &dy[r * d_out..(r + 1) * d_out];
            for i in 0..d_in {
                let wi = &w[i * d_out..(i + 1) * d_out];
                dx[r * d_in + i] += wi.iter().zip(dyr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
}

/// Single-row backward without bias: `dw += x^T dy`, `dx += dy w^T`.
pub fn vec_mat_backward(x: &[f64], w: &[f64], dy: &[f64], dw: &mut [f64], dx: &mut [f64]) {
    let d_out = dy.len();
    for (i, &xi) in x.iter().enumerate() {
        let wi = &w[i * d_out..(i + 1) * d_out];
        let mut acc = 0.0;
        for ((d, g), wv) in dw[i * d_out..(i + 1) * d_out].iter_mut().zip(dy).zip(wi) {
            *d += xi * g;
            acc += wv * g;
        }
        dx[i] += acc;
    }
}

/// Same-length dilated 1-D convolution over time. `w` is `[k, d_in, d_out]`.
pub fn conv1d(
    x: &[f64],
    steps: usize,
    d_in: usize,
    w: &[f64],
    b: &[f64],
    d_out: usize,
    width: usize,
    dilation: usize,
) -> Vec<f64> {
    let half = (width / 2) as isize;
    let mut y = Vec::with_capacity(steps * d_out);
    for t in 0..steps {
        y.extend_from_slice(b);
        for k in 0..width {
            let src = t as isize + (k as isize - half) * dilation as isize;
            if src < 0 || src >= steps as isize {
                continue;
            }
            let src = src as usize;
            let wk = &w[k * d_in * d_out..(k + 1) * d_in * d_out];
            accumulate_vec_mat(
                &mut y[t * d_out..(t + 1) * d_out],
                &x[src * d_in..(src + 1) * d_in],
                wk,
            );
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward(
    x: &[f64],
    steps: usize,
    d_in: usize,
    w: &[f64],
    dy: &[f64],
    d_out: usize,
    width: usize,
    dilation: usize,
    dw: &mut [f64],
    db: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    let half = (width / 2) as isize;
    for t in 0..steps {
        let dyt = &dy[t * d_out..(t + 1) * d_out];
        for (b, g) in db.iter_mut().zip(dyt) {
            *b += g;
        }
        for k in 0..width {
            let src = t as isize + (k as isize - half) * dilation as isize;
            if src < 0 || src >= steps as isize {
                continue;
            }
            let src = src as usize;
            let off = k * d_in * d_out;
            let wk = &w[off..off + d_in * d_out];
            let dwk = &mut dw[off..off + d_in * d_out];
            match dx.as_deref_mut() {
                Some(dx) => vec_mat_backward(
                    &x[src * d_in..(src + 1) * d_in],
                    wk,
                    dyt,
                    dwk,
                    &mut dx[src * d_in..(src + 1) * d_in],
                ),
                None => {
                    for (i, &xi) in x[src * d_in..(src + 1) * d_in].iter().enumerate() {
                        for (d, g) in dwk[i * d_out..(i + 1) * d_out].iter_mut().zip(dyt) {
                            *d += xi * g;
                        }
                    }
                }
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// Tanh-form GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub const LN_EPS: f64 = 1e-5;

/// Per-row layer normalization. Returns `(y, xhat, inv_std)`.
pub fn layer_norm(x: &[f64], rows: usize, d: usize, g: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; rows * d];
    let mut xhat = vec![0.0; rows * d];
    let mut inv = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv[r] = is;
        for j in 0..d {
            let h = (xr[j] - mean) * is;
            xhat[r * d + j] = h;
            y[r * d + j] = g[j] * h + b[j];
        }
    }
    (y, xhat, inv)
}

#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward(
    xhat: &[f64],
    inv: &[f64],
    rows: usize,
    d: usize,
    g: &[f64],
    dy: &[f64],
    dg: &mut [f64],
    db: &mut [f64],
    dx: &mut [f64],
) {
    let n = d as f64;
    for r in 0..rows {
        let mut sum_dh = 0.0;
        let mut sum_dh_h = 0.0;
        let mut dh = vec![0.0; d];
        for j in 0..d {
            let k = r * d + j;
            dg[j] += dy[k] * xhat[k];
            db[j] += dy[k];
            dh[j] = dy[k] * g[j];
            sum_dh += dh[j];
            sum_dh_h += dh[j] * xhat[k];
        }
        for j in 0..d {
            let k = r * d + j;
            dx[k] += inv[r] / n * (n * dh[j] - sum_dh - xhat[k] * sum_dh_h);
        }
    }
}
