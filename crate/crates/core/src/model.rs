//! The workload: one BitNet-style decoder layer with ternary projections,
//! INT8 attention and a SiLU-gated FFN, plus a full-precision reference
//! that never quantizes activations.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arith::TernaryTensor;
use crate::error::{Error, Result};
use crate::quant::{streaming_rms_norm, streaming_softmax, RMS_EPS};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayerConfig {
    pub d_model: usize,
    pub num_heads: usize,
    pub d_head: usize,
    pub d_ffn: usize,
    pub seq_capacity: usize,
    pub top_k: usize,
    pub buckets: usize,
    pub seed: u64,
}

impl Default for LayerConfig {
    fn default() -> Self {
        Self {
            d_model: 256,
            num_heads: 4,
            d_head: 64,
            d_ffn: 688,
            seq_capacity: 256,
            top_k: 32,
            buckets: crate::lop::DEFAULT_BUCKETS,
            seed: 0,
        }
    }
}

impl LayerConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_model", self.d_model),
            ("num_heads", self.num_heads),
            ("d_head", self.d_head),
            ("d_ffn", self.d_ffn),
            ("seq_capacity", self.seq_capacity),
            ("top_k", self.top_k),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be at least 1")));
        }
        if self.num_heads * self.d_head != self.d_model {
            return Err(Error::invalid(format!(
                "num_heads ({}) x d_head ({}) != d_model ({})",
                self.num_heads, self.d_head, self.d_model
            )));
        }
        if self.buckets < 2 {
            return Err(Error::invalid("buckets must be at least 2"));
        }
        Ok(())
    }
}

/// Projection weights laid out `[d_in x d_out]`, so `y = x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub wq: TernaryTensor,
    pub wk: TernaryTensor,
    pub wv: TernaryTensor,
    pub wo: TernaryTensor,
    pub w_up: TernaryTensor,
    pub w_gate: TernaryTensor,
    pub w_down: TernaryTensor,
    pub attn_norm: Vec<f64>,
    pub ffn_norm: Vec<f64>,
}

pub const WEIGHT_NAMES: [&str; 7] = ["wq", "wk", "wv", "wo", "w_up", "w_gate", "w_down"];

impl LayerWeights {
    pub fn tensors(&self) -> [&TernaryTensor; 7] {
        [&self.wq, &self.wk, &self.wv, &self.wo, &self.w_up, &self.w_gate, &self.w_down]
    }

    pub fn check_shapes(&self, cfg: &LayerConfig) -> Result<()> {
        let (d, f) = (cfg.d_model, cfg.d_ffn);
        let want = [(d, d), (d, d), (d, d), (d, d), (d, f), (d, f), (f, d)];
        for ((name, t), (r, c)) in WEIGHT_NAMES.iter().zip(self.tensors()).zip(want) {
            if (t.rows(), t.cols()) != (r, c) {
                return Err(Error::invalid(format!("{name} is {}x{}, expected {r}x{c}", t.rows(), t.cols())));
            }
        }
        if self.attn_norm.len() != d || self.ffn_norm.len() != d {
            return Err(Error::invalid("RMSNorm gains must have d_model entries"));
        }
        Ok(())
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for (name, t) in WEIGHT_NAMES.iter().zip(self.tensors()) {
            t.write_to(dir.join(format!("{name}.tt")))?;
        }
        let norms = NormFile { attn_norm: self.attn_norm.clone(), ffn_norm: self.ffn_norm.clone() };
        fs::write(dir.join("norms.json"), serde_json::to_vec_pretty(&norms)?)?;
        Ok(())
    }

    /// Load `<name>.tt` for each projection, falling back to a float matrix
    /// `<name>.f32` with a `<name>.json` shape sidecar that is ternarized on
    /// import. Missing `norms.json` means unit gains.
    pub fn load_dir(dir: impl AsRef<Path>, cfg: &LayerConfig) -> Result<Self> {
        let dir = dir.as_ref();
        let mut tensors = Vec::with_capacity(7);
        for name in WEIGHT_NAMES {
            let tt = dir.join(format!("{name}.tt"));
            let t = if tt.exists() {
                TernaryTensor::read_from(tt)?
            } else {
                let (rows, cols, data) = read_float_matrix(dir, name)?;
                ternary_quantize_weights(&data, rows, cols)?
            };
            tensors.push(t);
        }
        let norms_path = dir.join("norms.json");
        let norms = if norms_path.exists() {
            serde_json::from_slice(&fs::read(norms_path)?)?
        } else {
            NormFile { attn_norm: vec![1.0; cfg.d_model], ffn_norm: vec![1.0; cfg.d_model] }
        };
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("seven tensors");
        let w = LayerWeights {
            wq: next(),
            wk: next(),
            wv: next(),
            wo: next(),
            w_up: next(),
            w_gate: next(),
            w_down: next(),
            attn_norm: norms.attn_norm,
            ffn_norm: norms.ffn_norm,
        };
        w.check_shapes(cfg)?;
        Ok(w)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct NormFile {
    attn_norm: Vec<f64>,
    ffn_norm: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MatrixShape {
    pub rows: usize,
    pub cols: usize,
}

/// Raw little-endian f32 matrix with a JSON shape sidecar.
pub fn read_float_matrix(dir: &Path, name: &str) -> Result<(usize, usize, Vec<f64>)> {
    let shape: MatrixShape = serde_json::from_slice(&fs::read(dir.join(format!("{name}.json")))?)?;
    let raw = fs::read(dir.join(format!("{name}.f32")))?;
    if raw.len() != shape.rows * shape.cols * 4 {
        return Err(Error::invalid(format!(
            "{name}.f32 holds {} bytes, shape needs {}",
            raw.len(),
            shape.rows * shape.cols * 4
        )));
    }
    let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    Ok((shape.rows, shape.cols, data))
}

pub fn write_float_matrix(dir: &Path, name: &str, rows: usize, cols: usize, data: &[f32]) -> Result<()> {
    if data.len() != rows * cols {
        return Err(Error::invalid("float matrix length does not match shape"));
    }
    fs::create_dir_all(dir)?;
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(dir.join(format!("{name}.f32")), bytes)?;
    fs::write(dir.join(format!("{name}.json")), serde_json::to_vec(&MatrixShape { rows, cols })?)?;
    Ok(())
}

fn sample_ternary(rng: &mut ChaCha8Rng, rows: usize, cols: usize, zero_fraction: f64) -> TernaryTensor {
    let values: Vec<i8> = (0..rows * cols)
        .map(|_| {
            let u: f64 = rng.gen();
            if u < zero_fraction {
                0
            } else if rng.gen::<bool>() {
                1
            } else {
                -1
            }
        })
        .collect();
    TernaryTensor::pack(rows, cols, &values, fan_in_scale(rows, zero_fraction)).expect("sampled values are ternary")
}

/// Tensor scale that keeps a projection's output variance equal to its
/// input variance: `1 / sqrt(fan_in * (1 - zero_fraction))`.
pub fn fan_in_scale(fan_in: usize, zero_fraction: f64) -> f64 {
    let live = fan_in as f64 * (1.0 - zero_fraction);
    if live <= 0.0 {
        1.0
    } else {
        1.0 / live.sqrt()
    }
}

/// Deterministic synthetic ternary weights with unit RMSNorm gains. Tensor
/// scales come from [`fan_in_scale`]; with a unit scale the attention logits
/// of the default config reach the hundreds and softmax degenerates to argmax.
pub fn generate_weights(cfg: &LayerConfig, seed: u64, zero_fraction: f64) -> Result<LayerWeights> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&zero_fraction) {
        return Err(Error::invalid(format!("zero fraction {zero_fraction} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, f) = (cfg.d_model, cfg.d_ffn);
    let mut gen = |r, c| sample_ternary(&mut rng, r, c, zero_fraction);
    Ok(LayerWeights {
        wq: gen(d, d),
        wk: gen(d, d),
        wv: gen(d, d),
        wo: gen(d, d),
        w_up: gen(d, f),
        w_gate: gen(d, f),
        w_down: gen(f, d),
        attn_norm: vec![1.0; d],
        ffn_norm: vec![1.0; d],
    })
}

/// Absmean ternarization: `beta` is the mean magnitude of the nonzero
/// entries and each weight snaps to the nearest of {-beta, 0, +beta}.
pub fn ternary_quantize_weights(w: &[f64], rows: usize, cols: usize) -> Result<TernaryTensor> {
    if w.len() != rows * cols {
        return Err(Error::invalid(format!("{} weights for a {rows}x{cols} matrix", w.len())));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite weight"));
    }
    let (sum, count) = w.iter().filter(|v| **v != 0.0).fold((0.0, 0usize), |(s, n), v| (s + v.abs(), n + 1));
    if count == 0 {
        return TernaryTensor::pack(rows, cols, &vec![0; w.len()], 1.0);
    }
    let beta = sum / count as f64;
    let codes: Vec<i8> = w.iter().map(|v| (v / beta).round().clamp(-1.0, 1.0) as i8).collect();
    TernaryTensor::pack(rows, cols, &codes, beta)
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// `x W` in full precision with dequantized ternary weights.
pub fn float_matvec(x: &[f64], w: &TernaryTensor) -> Result<Vec<f64>> {
    if x.len() != w.rows() {
        return Err(Error::invalid(format!("vector of {} against {}x{} weights", x.len(), w.rows(), w.cols())));
    }
    Ok(DenseMatrix::from_ternary(w).matvec(x))
}

/// Row-major dequantized weights, so the reference does not decode
/// 2-bit codes in its inner loop.
#[derive(Debug, Clone)]
struct DenseMatrix {
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    fn from_ternary(w: &TernaryTensor) -> Self {
        let s = w.scale();
        Self { cols: w.cols(), data: w.unpack().iter().map(|&c| c as f64 * s).collect() }
    }

    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (row, &xv) in self.data.chunks_exact(self.cols).zip(x) {
            for (o, &w) in out.iter_mut().zip(row) {
                *o += xv * w;
            }
        }
        out
    }
}

/// Full-precision reference for a token stream through one layer.
#[derive(Debug, Clone)]
pub struct FloatLayer<'a> {
    cfg: &'a LayerConfig,
    weights: &'a LayerWeights,
    /// wq, wk, wv, wo, w_up, w_gate, w_down
    dense: Vec<DenseMatrix>,
    keys: Vec<Vec<Vec<f64>>>,
    values: Vec<Vec<Vec<f64>>>,
}

impl<'a> FloatLayer<'a> {
    pub fn new(cfg: &'a LayerConfig, weights: &'a LayerWeights) -> Result<Self> {
        cfg.validate()?;
        weights.check_shapes(cfg)?;
        Ok(Self {
            cfg,
            weights,
            dense: weights.tensors().iter().map(|t| DenseMatrix::from_ternary(t)).collect(),
            keys: vec![Vec::new(); cfg.num_heads],
            values: vec![Vec::new(); cfg.num_heads],
        })
    }

    pub fn cached_tokens(&self) -> usize {
        self.keys[0].len()
    }

    /// Process one token. `kept[h]` optionally restricts head `h`'s
    /// attention to those cache rows (the current token included).
    pub fn step(&mut self, x: &[f64], kept: Option<&[Vec<usize>]>) -> Result<Vec<f64>> {
        let cfg = self.cfg;
        let w = self.weights;
        if x.len() != cfg.d_model {
            return Err(Error::invalid("input width differs from d_model"));
        }
        let xn = streaming_rms_norm(x.iter().copied(), &w.attn_norm, RMS_EPS)?;
        let q = self.dense[0].matvec(&xn);
        let k = self.dense[1].matvec(&xn);
        let v = self.dense[2].matvec(&xn);
        let dh = cfg.d_head;
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        let mut attn = vec![0.0; cfg.d_model];
        for h in 0..cfg.num_heads {
            let span = h * dh..(h + 1) * dh;
            self.keys[h].push(k[span.clone()].to_vec());
            self.values[h].push(v[span.clone()].to_vec());
            let m = self.keys[h].len();
            let rows: Vec<usize> = match kept {
                Some(sets) => sets[h].clone(),
                None => (0..m).collect(),
            };
            if rows.iter().any(|&t| t >= m) {
                return Err(Error::invalid("kept set reaches past the cache"));
            }
            if rows.is_empty() {
                continue;
            }
            let qh = &q[span.clone()];
            let scores =
                rows.iter().map(|&t| qh.iter().zip(&self.keys[h][t]).map(|(a, b)| a * b).sum::<f64>() * inv_sqrt);
            let p = streaming_softmax(scores)?;
            for (&t, pt) in rows.iter().zip(&p) {
                for (o, vv) in attn[span.clone()].iter_mut().zip(&self.values[h][t]) {
                    *o += pt * vv;
                }
            }
        }
        let attn_out = self.dense[3].matvec(&attn);
        let h1: Vec<f64> = x.iter().zip(&attn_out).map(|(a, b)| a + b).collect();
        let hn = streaming_rms_norm(h1.iter().copied(), &w.ffn_norm, RMS_EPS)?;
        let up = self.dense[4].matvec(&hn);
        let gate = self.dense[5].matvec(&hn);
        let mid: Vec<f64> = up.iter().zip(&gate).map(|(u, g)| u * silu(*g)).collect();
        let down = self.dense[6].matvec(&mid);
        Ok(h1.iter().zip(&down).map(|(a, b)| a + b).collect())
    }
}

/// Run the reference over a token sequence. `kept[t][h]`, when given,
/// restricts token `t`'s attention in head `h`.
pub fn float_oracle_layer(
    xs: &[Vec<f64>],
    weights: &LayerWeights,
    cfg: &LayerConfig,
    kept: Option<&[Vec<Vec<usize>>]>,
) -> Result<Vec<Vec<f64>>> {
    let mut layer = FloatLayer::new(cfg, weights)?;
    xs.iter().enumerate().map(|(t, x)| layer.step(x, kept.map(|k| k[t].as_slice()))).collect()
}
