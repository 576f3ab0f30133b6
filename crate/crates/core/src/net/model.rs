use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{
    accumulate_vec_mat, affine, affine_backward, conv1d, conv1d_backward, gelu, gelu_grad,
    layer_norm, layer_norm_backward, sigmoid, vec_mat_backward,
};
use super::params::*;
use super::NetConfig;
use crate::error::{Error, Result};

/// Cached activations of one GRU direction, indexed by input time step.
#[derive(Debug, Clone, PartialEq)]
pub struct GruCache {
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub cand: Vec<f64>,
    pub r_h: Vec<f64>,
}

/// Everything one sample's backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTrace {
    pub x: Vec<f64>,
    pub pre1: Vec<f64>,
    pub h1: Vec<f64>,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// `heads x steps x steps` attention weights; each row sums to one.
    pub attn: Vec<f64>,
    pub ctx: Vec<f64>,
    pub a: Vec<f64>,
    pub pre2: Vec<f64>,
    pub h2: Vec<f64>,
    pub z1: Vec<f64>,
    pub norm1_hat: Vec<f64>,
    pub norm1_inv: Vec<f64>,
    pub fc_pre: Vec<f64>,
    pub fc_act: Vec<f64>,
    pub dropout_mask: Vec<f64>,
    pub o: Vec<f64>,
    pub norm2_hat: Vec<f64>,
    pub norm2_inv: Vec<f64>,
    pub gru_in: Vec<f64>,
    pub gru1: [GruCache; 2],
    pub g1: Vec<f64>,
    pub gru2: [GruCache; 2],
    pub g2: Vec<f64>,
    pub output: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub samples: Vec<SampleTrace>,
    pub steps: usize,
    pub train_mode: bool,
    params_fingerprint: u64,
}

fn check_finite(layer: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(layer, "non-finite activation"))
    }
}

fn gru_direction(
    p: &NetParams,
    base: usize,
    x: &[f64],
    steps: usize,
    d_in: usize,
    hidden: usize,
    reverse: bool,
    out: &mut [f64],
    out_stride: usize,
    out_offset: usize,
) -> GruCache {
    let mut cache = GruCache {
        h_prev: vec![0.0; steps * hidden],
        z: vec![0.0; steps * hidden],
        r: vec![0.0; steps * hidden],
        cand: vec![0.0; steps * hidden],
        r_h: vec![0.0; steps * hidden],
    };
    let mut h = vec![0.0; hidden];
    let order: Vec<usize> = if reverse {
        (0..steps).rev().collect()
    } else {
        (0..steps).collect()
    };
    for t in order {
        let xt = &x[t * d_in..(t + 1) * d_in];
        let mut az = p.get(base + BZ).to_vec();
        accumulate_vec_mat(&mut az, xt, p.get(base + WZ));
        accumulate_vec_mat(&mut az, &h, p.get(base + UZ));
        let mut ar = p.get(base + BR).to_vec();
        accumulate_vec_mat(&mut ar, xt, p.get(base + WR));
        accumulate_vec_mat(&mut ar, &h, p.get(base + UR));
        let z: Vec<f64> = az.iter().map(|v| sigmoid(*v)).collect();
        let r: Vec<f64> = ar.iter().map(|v| sigmoid(*v)).collect();
        let r_h: Vec<f64> = r.iter().zip(&h).map(|(a, b)| a * b).collect();
        let mut ah = p.get(base + BH).to_vec();
        accumulate_vec_mat(&mut ah, xt, p.get(base + WH));
        accumulate_vec_mat(&mut ah, &r_h, p.get(base + UH));
        let cand: Vec<f64> = ah.iter().map(|v| v.tanh()).collect();
        let span = t * hidden..(t + 1) * hidden;
        cache.h_prev[span.clone()].copy_from_slice(&h);
        for j in 0..hidden {
            h[j] = (1.0 - z[j]) * h[j] + z[j] * cand[j];
        }
        cache.z[span.clone()].copy_from_slice(&z);
        cache.r[span.clone()].copy_from_slice(&r);
        cache.cand[span.clone()].copy_from_slice(&cand);
        cache.r_h[span].copy_from_slice(&r_h);
        out[t * out_stride + out_offset..t * out_stride + out_offset + hidden].copy_from_slice(&h);
    }
    cache
}

#[allow(clippy::too_many_arguments)]
fn gru_direction_backward(
    p: &NetParams,
    g: &mut NetParams,
    base: usize,
    cache: &GruCache,
    x: &[f64],
    steps: usize,
    d_in: usize,
    hidden: usize,
    reverse: bool,
    d_out: &[f64],
    out_stride: usize,
    out_offset: usize,
    dx: &mut [f64],
) {
    let mut carry = vec![0.0; hidden];
    let order: Vec<usize> = if reverse {
        (0..steps).collect()
    } else {
        (0..steps).rev().collect()
    };
    for t in order {
        let span = t * hidden..(t + 1) * hidden;
        let (h_prev, z, r, cand, r_h) = (
            &cache.h_prev[span.clone()],
            &cache.z[span.clone()],
            &cache.r[span.clone()],
            &cache.cand[span.clone()],
            &cache.r_h[span],
        );
        let xt = &x[t * d_in..(t + 1) * d_in];
        let dxt = &mut dx[t * d_in..(t + 1) * d_in];
        let dh: Vec<f64> = (0..hidden)
            .map(|j| d_out[t * out_stride + out_offset + j] + carry[j])
            .collect();
        let mut dh_prev: Vec<f64> = (0..hidden).map(|j| dh[j] * (1.0 - z[j])).collect();
        let d_ah: Vec<f64> = (0..hidden)
            .map(|j| dh[j] * z[j] * (1.0 - cand[j] * cand[j]))
            .collect();
        let d_az: Vec<f64> = (0..hidden)
            .map(|j| dh[j] * (cand[j] - h_prev[j]) * z[j] * (1.0 - z[j]))
            .collect();

        for (j, d) in d_ah.iter().enumerate() {
            g.get_mut(base + BH)[j] += d;
        }
        vec_mat_backward(xt, p.get(base + WH), &d_ah, g.get_mut(base + WH), dxt);
        let mut d_rh = vec![0.0; hidden];
        vec_mat_backward(r_h, p.get(base + UH), &d_ah, g.get_mut(base + UH), &mut d_rh);
        let d_ar: Vec<f64> = (0..hidden)
            .map(|j| d_rh[j] * h_prev[j] * r[j] * (1.0 - r[j]))
            .collect();
        for j in 0..hidden {
            dh_prev[j] += d_rh[j] * r[j];
        }
        for (j, d) in d_ar.iter().enumerate() {
            g.get_mut(base + BR)[j] += d;
        }
        vec_mat_backward(xt, p.get(base + WR), &d_ar, g.get_mut(base + WR), dxt);
        vec_mat_backward(h_prev, p.get(base + UR), &d_ar, g.get_mut(base + UR), &mut dh_prev);
        for (j, d) in d_az.iter().enumerate() {
            g.get_mut(base + BZ)[j] += d;
        }
        vec_mat_backward(xt, p.get(base + WZ), &d_az, g.get_mut(base + WZ), dxt);
        vec_mat_backward(h_prev, p.get(base + UZ), &d_az, g.get_mut(base + UZ), &mut dh_prev);
        carry = dh_prev;
    }
}

struct Attention {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn: Vec<f64>,
    ctx: Vec<f64>,
    a: Vec<f64>,
}

/// Multi-head scaled dot-product self-attention over the time steps of `h`.
fn attention(p: &NetParams, cfg: &NetConfig, h: &[f64], steps: usize) -> Attention {
    let c = cfg.conv_channels;
    let q = affine(h, steps, c, p.get(WQ), p.get(BQ), c);
    let k = affine(h, steps, c, p.get(WK), p.get(BK), c);
    let v = affine(h, steps, c, p.get(WV), p.get(BV), c);
    let d = cfg.head_size;
    let scale = 1.0 / (d as f64).sqrt();
    let mut attn = vec![0.0; cfg.heads * steps * steps];
    let mut ctx = vec![0.0; steps * c];
    for head in 0..cfg.heads {
        let off = head * d;
        for t in 0..steps {
            let row = &mut attn[(head * steps + t) * steps..(head * steps + t + 1) * steps];
            for (u, s) in row.iter_mut().enumerate() {
                *s = scale
                    * (0..d)
                        .map(|j| q[t * c + off + j] * k[u * c + off + j])
                        .sum::<f64>();
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for s in row.iter_mut() {
                *s = (*s - max).exp();
                total += *s;
            }
            for s in row.iter_mut() {
                *s /= total;
            }
            for (u, w) in row.iter().enumerate() {
                for j in 0..d {
                    ctx[t * c + off + j] += w * v[u * c + off + j];
                }
            }
        }
    }
    let a = affine(&ctx, steps, c, p.get(WO), p.get(BO), c);
    Attention { q, k, v, attn, ctx, a }
}

fn sample_forward(
    p: &NetParams,
    cfg: &NetConfig,
    x: &[f64],
    steps: usize,
    mask: Vec<f64>,
) -> Result<SampleTrace> {
    let m = cfg.n_features;
    let c = cfg.conv_channels;
    let (kw, dil) = (cfg.kernel_width, cfg.dilation);

    let pre1 = conv1d(x, steps, m, p.get(CONV1_W), p.get(CONV1_B), c, kw, dil);
    let h1: Vec<f64> = pre1.iter().map(|v| gelu(*v)).collect();
    check_finite("conv1", &h1)?;

    let Attention { q, k, v, attn, ctx, a } = attention(p, cfg, &h1, steps);
    check_finite("attention", &a)?;

    let pre2 = conv1d(&a, steps, c, p.get(CONV2_W), p.get(CONV2_B), c, kw, dil);
    let h2: Vec<f64> = pre2.iter().map(|v| gelu(*v)).collect();
    check_finite("conv2", &h2)?;

    let z1: Vec<f64> = h1.iter().zip(&h2).map(|(a, b)| a + b).collect();
    let (n1, norm1_hat, norm1_inv) = layer_norm(&z1, steps, c, p.get(LN1_G), p.get(LN1_B));
    check_finite("norm1", &n1)?;

    let fw = cfg.fc_width;
    let fc_pre = affine(&z1, steps, c, p.get(FC1_W), p.get(FC1_B), fw);
    let fc_act: Vec<f64> = fc_pre.iter().map(|v| gelu(*v)).collect();
    let o: Vec<f64> = n1
        .iter()
        .zip(fc_act.iter().zip(&mask))
        .map(|(n, (f, k))| n + f * k)
        .collect();
    check_finite("fc1", &o)?;
    let (gru_in, norm2_hat, norm2_inv) = layer_norm(&o, steps, c, p.get(LN2_G), p.get(LN2_B));
    check_finite("norm2", &gru_in)?;

    let h1u = cfg.gru1_units;
    let mut g1 = vec![0.0; steps * 2 * h1u];
    let f1 = gru_direction(p, GRU1_FWD, &gru_in, steps, c, h1u, false, &mut g1, 2 * h1u, 0);
    let b1 = gru_direction(p, GRU1_BWD, &gru_in, steps, c, h1u, true, &mut g1, 2 * h1u, h1u);
    check_finite("gru1", &g1)?;

    let h2u = cfg.gru2_units;
    let mut g2 = vec![0.0; steps * 2 * h2u];
    let f2 = gru_direction(p, GRU2_FWD, &g1, steps, 2 * h1u, h2u, false, &mut g2, 2 * h2u, 0);
    let b2 = gru_direction(p, GRU2_BWD, &g1, steps, 2 * h1u, h2u, true, &mut g2, 2 * h2u, h2u);
    check_finite("gru2", &g2)?;

    let last = &g2[(steps - 1) * 2 * h2u..];
    let output = p.get(FC2_B)[0]
        + last
            .iter()
            .zip(p.get(FC2_W))
            .map(|(a, b)| a * b)
            .sum::<f64>();
    if !output.is_finite() {
        return Err(Error::numeric("fc2", "non-finite output"));
    }

    Ok(SampleTrace {
        x: x.to_vec(),
        pre1,
        h1,
        q,
        k,
        v,
        attn,
        ctx,
        a,
        pre2,
        h2,
        z1,
        norm1_hat,
        norm1_inv,
        fc_pre,
        fc_act,
        dropout_mask: mask,
        o,
        norm2_hat,
        norm2_inv,
        gru_in,
        gru1: [f1, b1],
        g1,
        gru2: [f2, b2],
        g2,
        output,
    })
}

fn sample_backward(
    p: &NetParams,
    cfg: &NetConfig,
    tr: &SampleTrace,
    steps: usize,
    d_output: f64,
    g: &mut NetParams,
) {
    let m = cfg.n_features;
    let c = cfg.conv_channels;
    let (kw, dil) = (cfg.kernel_width, cfg.dilation);
    let h1u = cfg.gru1_units;
    let h2u = cfg.gru2_units;

    // head
    g.get_mut(FC2_B)[0] += d_output;
    let last_off = (steps - 1) * 2 * h2u;
    let mut d_g2 = vec![0.0; steps * 2 * h2u];
    for j in 0..2 * h2u {
        g.get_mut(FC2_W)[j] += tr.g2[last_off + j] * d_output;
        d_g2[last_off + j] = p.get(FC2_W)[j] * d_output;
    }

    // recurrent stack
    let mut d_g1 = vec![0.0; steps * 2 * h1u];
    gru_direction_backward(p, g, GRU2_FWD, &tr.gru2[0], &tr.g1, steps, 2 * h1u, h2u, false, &d_g2, 2 * h2u, 0, &mut d_g1);
    gru_direction_backward(p, g, GRU2_BWD, &tr.gru2[1], &tr.g1, steps, 2 * h1u, h2u, true, &d_g2, 2 * h2u, h2u, &mut d_g1);
    let mut d_gru_in = vec![0.0; steps * c];
    gru_direction_backward(p, g, GRU1_FWD, &tr.gru1[0], &tr.gru_in, steps, c, h1u, false, &d_g1, 2 * h1u, 0, &mut d_gru_in);
    gru_direction_backward(p, g, GRU1_BWD, &tr.gru1[1], &tr.gru_in, steps, c, h1u, true, &d_g1, 2 * h1u, h1u, &mut d_gru_in);

    // O = norm1(Z1) + dropout(gelu(fc1(Z1))), then norm2
    let mut d_o = vec![0.0; steps * c];
    {
        let (dg, db) = two_mut(g, LN2_G, LN2_B);
        layer_norm_backward(&tr.norm2_hat, &tr.norm2_inv, steps, c, p.get(LN2_G), &d_gru_in, dg, db, &mut d_o);
    }
    let mut d_z1 = vec![0.0; steps * c];
    let d_fc_pre: Vec<f64> = (0..d_o.len())
        .map(|i| d_o[i] * tr.dropout_mask[i] * gelu_grad(tr.fc_pre[i]))
        .collect();
    {
        let (dw, db) = two_mut(g, FC1_W, FC1_B);
        affine_backward(&tr.z1, steps, c, p.get(FC1_W), &d_fc_pre, cfg.fc_width, dw, db, Some(&mut d_z1));
    }
    {
        let (dg, db) = two_mut(g, LN1_G, LN1_B);
        layer_norm_backward(&tr.norm1_hat, &tr.norm1_inv, steps, c, p.get(LN1_G), &d_o, dg, db, &mut d_z1);
    }

    // Z1 = H1 + H2
    let mut d_h1 = d_z1.clone();
    let d_pre2: Vec<f64> = d_z1
        .iter()
        .zip(&tr.pre2)
        .map(|(d, x)| d * gelu_grad(*x))
        .collect();
    let mut d_a = vec![0.0; steps * c];
    {
        let (dw, db) = two_mut(g, CONV2_W, CONV2_B);
        conv1d_backward(&tr.a, steps, c, p.get(CONV2_W), &d_pre2, c, kw, dil, dw, db, Some(&mut d_a));
    }

    // attention
    let mut d_ctx = vec![0.0; steps * c];
    {
        let (dw, db) = two_mut(g, WO, BO);
        affine_backward(&tr.ctx, steps, c, p.get(WO), &d_a, c, dw, db, Some(&mut d_ctx));
    }
    let d = cfg.head_size;
    let scale = 1.0 / (d as f64).sqrt();
    let mut d_q = vec![0.0; steps * c];
    let mut d_k = vec![0.0; steps * c];
    let mut d_v = vec![0.0; steps * c];
    for head in 0..cfg.heads {
        let off = head * d;
        for t in 0..steps {
            let w = &tr.attn[(head * steps + t) * steps..(head * steps + t + 1) * steps];
            let d_w: Vec<f64> = (0..steps)
                .map(|u| {
                    (0..d)
                        .map(|j| d_ctx[t * c + off + j] * tr.v[u * c + off + j])
                        .sum::<f64>()
                })
                .collect();
            for u in 0..steps {
                for j in 0..d {
                    d_v[u * c + off + j] += w[u] * d_ctx[t * c + off + j];
                }
            }
            let dot: f64 = w.iter().zip(&d_w).map(|(a, b)| a * b).sum();
            for u in 0..steps {
                let ds = w[u] * (d_w[u] - dot) * scale;
                for j in 0..d {
                    d_q[t * c + off + j] += ds * tr.k[u * c + off + j];
                    d_k[u * c + off + j] += ds * tr.q[t * c + off + j];
                }
            }
        }
    }
    for (w, b, dy) in [(WQ, BQ, &d_q), (WK, BK, &d_k), (WV, BV, &d_v)] {
        let (dw, db) = two_mut(g, w, b);
        affine_backward(&tr.h1, steps, c, p.get(w), dy, c, dw, db, Some(&mut d_h1));
    }

    let d_pre1: Vec<f64> = d_h1
        .iter()
        .zip(&tr.pre1)
        .map(|(d, x)| d * gelu_grad(*x))
        .collect();
    let (dw, db) = two_mut(g, CONV1_W, CONV1_B);
    conv1d_backward(&tr.x, steps, m, p.get(CONV1_W), &d_pre1, c, kw, dil, dw, db, None);
}

/// Disjoint mutable borrows of two tensor slots (`a < b`).
fn two_mut(g: &mut NetParams, a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a < b);
    let (lo, hi) = g.tensors.split_at_mut(b);
    (&mut lo[a].data, &mut hi[0].data)
}

fn check_blocks(cfg: &NetConfig, blocks: &[&[f64]], steps: usize) -> Result<()> {
    if blocks.is_empty() {
        return Err(Error::argument("batch must contain at least one block"));
    }
    if steps == 0 {
        return Err(Error::argument("sequence length must be positive"));
    }
    if let Some(b) = blocks.iter().find(|b| b.len() != steps * cfg.n_features) {
        return Err(Error::argument(format!(
            "block of {} values does not match {steps} steps x {} features",
            b.len(),
            cfg.n_features
        )));
    }
    Ok(())
}

/// Forward pass over a batch of `steps x n_features` blocks (time-major).
///
/// In train mode, dropout masks are drawn from `seed`; otherwise the
/// feed-forward branch is used as is.
pub fn forward(
    params: &NetParams,
    cfg: &NetConfig,
    blocks: &[&[f64]],
    steps: usize,
    train_mode: bool,
    seed: u64,
) -> Result<(Vec<f64>, ForwardTrace)> {
    cfg.validate()?;
    check_blocks(cfg, blocks, steps)?;
    if params.get(CONV1_W).len() != cfg.kernel_width * cfg.n_features * cfg.conv_channels {
        return Err(Error::argument("parameters do not match the network configuration"));
    }
    let width = steps * cfg.fc_width;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 - cfg.dropout;
    let mut samples = Vec::with_capacity(blocks.len());
    for x in blocks {
        let mask: Vec<f64> = if train_mode && cfg.dropout > 0.0 {
            (0..width)
                .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect()
        } else {
            vec![1.0; width]
        };
        samples.push(sample_forward(params, cfg, x, steps, mask)?);
    }
    let predictions = samples.iter().map(|s| s.output).collect();
    Ok((
        predictions,
        ForwardTrace {
            samples,
            steps,
            train_mode,
            params_fingerprint: params.fingerprint(),
        },
    ))
}

/// Mean-absolute-error loss and its exact gradient for a traced batch.
/// The subgradient at a zero residual is taken as zero.
pub fn backward(
    params: &NetParams,
    cfg: &NetConfig,
    trace: &ForwardTrace,
    blocks: &[&[f64]],
    targets: &[f64],
) -> Result<(f64, NetParams)> {
    if trace.params_fingerprint != params.fingerprint() {
        return Err(Error::Contract("trace was produced with different parameters".into()));
    }
    if blocks.len() != trace.samples.len()
        || targets.len() != blocks.len()
        || blocks.iter().zip(&trace.samples).any(|(b, s)| *b != s.x.as_slice())
    {
        return Err(Error::Contract("trace does not match the supplied batch".into()));
    }
    let n = blocks.len() as f64;
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    for (s, y) in trace.samples.iter().zip(targets) {
        let r = s.output - y;
        loss += r.abs();
        let d = if r > 0.0 {
            1.0 / n
        } else if r < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
        if d != 0.0 {
            sample_backward(params, cfg, s, trace.steps, d, &mut grads);
        }
    }
    Ok((loss / n, grads))
}

/// Inference: forward pass with dropout disabled.
pub fn predict(params: &NetParams, cfg: &NetConfig, blocks: &[&[f64]], steps: usize) -> Result<Vec<f64>> {
    forward(params, cfg, blocks, steps, false, 0).map(|(p, _)| p)
}
