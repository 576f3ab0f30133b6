use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::NetConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

// Tensor slots. Each GRU direction occupies nine consecutive slots.
pub(crate) const CONV1_W: usize = 0;
pub(crate) const CONV1_B: usize = 1;
pub(crate) const WQ: usize = 2;
pub(crate) const BQ: usize = 3;
pub(crate) const WK: usize = 4;
pub(crate) const BK: usize = 5;
pub(crate) const WV: usize = 6;
pub(crate) const BV: usize = 7;
pub(crate) const WO: usize = 8;
pub(crate) const BO: usize = 9;
pub(crate) const CONV2_W: usize = 10;
pub(crate) const CONV2_B: usize = 11;
pub(crate) const LN1_G: usize = 12;
pub(crate) const LN1_B: usize = 13;
pub(crate) const FC1_W: usize = 14;
pub(crate) const FC1_B: usize = 15;
pub(crate) const LN2_G: usize = 16;
pub(crate) const LN2_B: usize = 17;
pub(crate) const GRU1_FWD: usize = 18;
pub(crate) const GRU1_BWD: usize = 27;
pub(crate) const GRU2_FWD: usize = 36;
pub(crate) const GRU2_BWD: usize = 45;
pub(crate) const FC2_W: usize = 54;
pub(crate) const FC2_B: usize = 55;
const N_TENSORS: usize = 56;

// offsets inside a GRU direction block
pub(crate) const WZ: usize = 0;
pub(crate) const UZ: usize = 1;
pub(crate) const BZ: usize = 2;
pub(crate) const WR: usize = 3;
pub(crate) const UR: usize = 4;
pub(crate) const BR: usize = 5;
pub(crate) const WH: usize = 6;
pub(crate) const UH: usize = 7;
pub(crate) const BH: usize = 8;

const GRU_NAMES: [&str; 9] = ["w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h"];

fn tensor_names() -> Vec<String> {
    let mut names: Vec<String> = [
        "conv1.w", "conv1.b", "attn.w_q", "attn.b_q", "attn.w_k", "attn.b_k", "attn.w_v",
        "attn.b_v", "attn.w_o", "attn.b_o", "conv2.w", "conv2.b", "norm1.scale", "norm1.shift",
        "fc1.w", "fc1.b", "norm2.scale", "norm2.shift",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for layer in ["gru1.fwd", "gru1.bwd", "gru2.fwd", "gru2.bwd"] {
        names.extend(GRU_NAMES.iter().map(|g| format!("{layer}.{g}")));
    }
    names.push("fc2.w".into());
    names.push("fc2.b".into());
    names
}

/// All trainable arrays, stored in a fixed slot order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl NetParams {
    /// Every tensor at zero, shaped for `cfg`.
    pub fn zeros(cfg: &NetConfig) -> Self {
        let c = cfg.conv_channels;
        let k = cfg.kernel_width;
        let m = cfg.n_features;
        let mut tensors = vec![Tensor::zeros(&[0]); N_TENSORS];
        tensors[CONV1_W] = Tensor::zeros(&[k, m, c]);
        tensors[CONV1_B] = Tensor::zeros(&[c]);
        for (w, b) in [(WQ, BQ), (WK, BK), (WV, BV), (WO, BO)] {
            tensors[w] = Tensor::zeros(&[c, c]);
            tensors[b] = Tensor::zeros(&[c]);
        }
        tensors[CONV2_W] = Tensor::zeros(&[k, c, c]);
        tensors[CONV2_B] = Tensor::zeros(&[c]);
        for (g, b) in [(LN1_G, LN1_B), (LN2_G, LN2_B)] {
            tensors[g] = Tensor::zeros(&[c]);
            tensors[b] = Tensor::zeros(&[c]);
        }
        tensors[FC1_W] = Tensor::zeros(&[c, cfg.fc_width]);
        tensors[FC1_B] = Tensor::zeros(&[cfg.fc_width]);
        let h1 = cfg.gru1_units;
        let h2 = cfg.gru2_units;
        for (base, d_in, h) in [
            (GRU1_FWD, c, h1),
            (GRU1_BWD, c, h1),
            (GRU2_FWD, 2 * h1, h2),
            (GRU2_BWD, 2 * h1, h2),
        ] {
            for (w, u, b) in [(WZ, UZ, BZ), (WR, UR, BR), (WH, UH, BH)] {
                tensors[base + w] = Tensor::zeros(&[d_in, h]);
                tensors[base + u] = Tensor::zeros(&[h, h]);
                tensors[base + b] = Tensor::zeros(&[h]);
            }
        }
        tensors[FC2_W] = Tensor::zeros(&[2 * h2, 1]);
        tensors[FC2_B] = Tensor::zeros(&[1]);
        Self {
            names: tensor_names(),
            tensors,
        }
    }

    /// Seeded fan-in uniform initialization: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
    /// biases zero, norm scales one.
    pub fn init(cfg: &NetConfig, seed: u64) -> Self {
        let mut p = Self::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (i, t) in p.tensors.iter_mut().enumerate() {
            if i == LN1_G || i == LN2_G {
                t.data.iter_mut().for_each(|v| *v = 1.0);
                continue;
            }
            if t.shape.len() < 2 {
                continue;
            }
            // conv weights are [k, in, out]; dense [in, out]
            let fan_in: usize = t.shape[..t.shape.len() - 1].iter().product();
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut t.data {
                *v = rng.random_range(-bound..bound);
            }
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(&t.shape))
                .collect(),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, slot: usize) -> &[f64] {
        &self.tensors[slot].data
    }

    pub fn get_mut(&mut self, slot: usize) -> &mut [f64] {
        &mut self.tensors[slot].data
    }

    pub fn n_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().flat_map(|t| &t.data).all(|v| v.is_finite())
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| &t.data)
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        self.tensors
            .iter_mut()
            .flat_map(|t| t.data.iter_mut())
            .for_each(|v| *v *= k);
    }

    /// `self += k * other`
    pub fn add_scaled(&mut self, other: &NetParams, k: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += k * y;
            }
        }
    }

    /// FNV-1a over the bit patterns of every value.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.tensors.iter().flat_map(|t| &t.data) {
            for byte in v.to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    /// Checkpoint text: one line per tensor, `name<TAB>d0xd1..<TAB>v0 v1 ...`,
    /// values row-major in round-trip precision.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        for (name, t) in self.names.iter().zip(&self.tensors) {
            let shape: Vec<String> = t.shape.iter().map(usize::to_string).collect();
            let values: Vec<String> = t.data.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{name}\t{}\t{}", shape.join("x"), values.join(" "));
        }
        out
    }

    pub fn from_checkpoint(cfg: &NetConfig, text: &str) -> Result<Self> {
        let mut p = Self::zeros(cfg);
        let mut seen = 0;
        for (ln, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parse_err = |msg: String| Error::Parse { line: ln + 1, message: msg };
            let mut parts = line.split('\t');
            let name = parts.next().unwrap_or_default();
            let shape = parts.next().ok_or_else(|| parse_err("missing shape".into()))?;
            let values = parts.next().unwrap_or_default();
            let slot = p
                .names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| parse_err(format!("unknown tensor `{name}`")))?;
            let shape: Vec<usize> = shape
                .split('x')
                .map(|s| s.parse().map_err(|_| parse_err(format!("bad shape `{s}`"))))
                .collect::<Result<_>>()?;
            if shape != p.tensors[slot].shape {
                return Err(parse_err(format!(
                    "tensor `{name}` has shape {shape:?}, config expects {:?}",
                    p.tensors[slot].shape
                )));
            }
            let data: Vec<f64> = values
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| parse_err(format!("bad value `{s}`"))))
                .collect::<Result<_>>()?;
            if data.len() != p.tensors[slot].len() {
                return Err(parse_err(format!("tensor `{name}` has {} values", data.len())));
            }
            p.tensors[slot].data = data;
            seen += 1;
        }
        if seen != N_TENSORS {
            return Err(Error::Parse {
                line: 0,
                message: format!("checkpoint lists {seen} of {N_TENSORS} tensors"),
            });
        }
        Ok(p)
    }
}
