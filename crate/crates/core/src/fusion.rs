//! Fine-grained fusion attention and the cross-granularity block.
//!
//! Vectors on the tape are rank-1 `[d]`; token and timestamp matrices are
//! `rows × width`.

use mug_diffcore::{Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoders::glorot;
use crate::{MugError, Result};

const LN_EPS: f64 = 1e-5;

fn as_row(tape: &mut Tape, v: Var) -> Result<Var> {
    let d = tape.value(v)?.len();
    Ok(tape.reshape(v, vec![1, d])?)
}

fn as_vector(tape: &mut Tape, v: Var) -> Result<Var> {
    let d = tape.value(v)?.len();
    Ok(tape.reshape(v, vec![d])?)
}

/// Max-pooled query attending over the timestamp rows of `v` (`j × d`).
/// Returns the fused `[d]` vector and the `1 × j` attention weights.
pub fn fine_fuse_with_weights(tape: &mut Tape, v: Var) -> Result<(Var, Var)> {
    let d = tape.value(v)?.cols();
    let q = tape.max_rows(v)?;
    let q = as_row(tape, q)?;
    let vt = tape.transpose(v)?;
    let scores = tape.matmul(q, vt)?;
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt())?;
    let weights = tape.softmax(scores)?;
    let fused = tape.matmul(weights, v)?;
    Ok((as_vector(tape, fused)?, weights))
}

pub fn fine_fuse(tape: &mut Tape, v: Var) -> Result<Var> {
    Ok(fine_fuse_with_weights(tape, v)?.0)
}

/// Single-head attention with the fine vector as query and coarse tokens as
/// keys and values: `softmax(Q Kᵀ / √d_k) V`, returned as a `[d]` vector.
pub fn cross_attention(tape: &mut Tape, v_x: Var, tokens: Var, w_q: Var, w_k: Var, w_v: Var) -> Result<Var> {
    let d = tape.value(v_x)?.len();
    let (dq, dk) = (tape.value(w_q)?.rows(), tape.value(w_q)?.cols());
    let (tok_w, kk) = (tape.value(w_k)?.rows(), tape.value(w_k)?.cols());
    let (vv, dv) = (tape.value(w_v)?.rows(), tape.value(w_v)?.cols());
    let tokens_t = tape.value(tokens)?;
    if tokens_t.rank() != 2 || dq != d || dk != kk || tok_w != tokens_t.cols() || vv != tok_w || dv != d {
        return Err(MugError::contract(format!(
            "cross attention dimensions disagree: v_x [{d}], tokens {:?}, W_Q [{dq}, {dk}], W_K [{tok_w}, {kk}], W_V [{vv}, {dv}]",
            tokens_t.shape()
        )));
    }
    let x = as_row(tape, v_x)?;
    let q = tape.matmul(x, w_q)?;
    let k = tape.matmul(tokens, w_k)?;
    let v = tape.matmul(tokens, w_v)?;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (dk as f64).sqrt())?;
    let weights = tape.softmax(scores)?;
    let out = tape.matmul(weights, v)?;
    as_vector(tape, out)
}

/// Parameters of the cross-granularity block.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

/// [`FusionParams`] registered on a tape.
#[derive(Clone, Copy, Debug)]
pub struct FusionVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
}

const NAMES: [&str; 11] = [
    "w_q", "w_k", "w_v", "ln1_gain", "ln1_bias", "w1", "b1", "w2", "b2", "ln2_gain", "ln2_bias",
];

impl FusionParams {
    /// `d`: fine width, `d_s`: token width, `d_k`: key width, `ff`: hidden width.
    pub fn new(d: usize, d_s: usize, d_k: usize, ff: usize, seed: u64) -> Result<Self> {
        if [d, d_s, d_k, ff].contains(&0) {
            return Err(MugError::config("fusion dimensions must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            w_q: glorot(&mut rng, d, d_k),
            w_k: glorot(&mut rng, d_s, d_k),
            w_v: glorot(&mut rng, d_s, d),
            ln1_gain: Tensor::full(&[d], 1.0),
            ln1_bias: Tensor::zeros(&[d]),
            w1: glorot(&mut rng, d, ff),
            b1: Tensor::zeros(&[ff]),
            w2: glorot(&mut rng, ff, d),
            b2: Tensor::zeros(&[d]),
            ln2_gain: Tensor::full(&[d], 1.0),
            ln2_bias: Tensor::zeros(&[d]),
        })
    }

    pub fn model_dim(&self) -> usize {
        self.w_q.rows()
    }

    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        let t = [
            &self.w_q,
            &self.w_k,
            &self.w_v,
            &self.ln1_gain,
            &self.ln1_bias,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.ln2_gain,
            &self.ln2_bias,
        ];
        NAMES.iter().zip(t).map(|(n, t)| (n.to_string(), t)).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_q,
            &mut self.w_k,
            &mut self.w_v,
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
        ]
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> FusionVars {
        let v: Vec<Var> = self
            .parameters()
            .into_iter()
            .map(|(_, t)| tape.leaf(t.clone(), trainable))
            .collect();
        FusionVars::from_slice(&v).expect("eleven parameters")
    }
}

impl FusionVars {
    pub fn from_slice(v: &[Var]) -> Result<Self> {
        let &[w_q, w_k, w_v, ln1_gain, ln1_bias, w1, b1, w2, b2, ln2_gain, ln2_bias] = v else {
            return Err(MugError::contract(format!(
                "fusion block takes 11 parameters, got {}",
                v.len()
            )));
        };
        Ok(Self {
            w_q,
            w_k,
            w_v,
            ln1_gain,
            ln1_bias,
            w1,
            b1,
            w2,
            b2,
            ln2_gain,
            ln2_bias,
        })
    }

    pub fn to_vec(&self) -> Vec<Var> {
        vec![
            self.w_q,
            self.w_k,
            self.w_v,
            self.ln1_gain,
            self.ln1_bias,
            self.w1,
            self.b1,
            self.w2,
            self.b2,
            self.ln2_gain,
            self.ln2_bias,
        ]
    }
}

fn norm(tape: &mut Tape, x: Var, gain: Var, bias: Var) -> Result<Var> {
    let n = tape.layer_norm(x, LN_EPS)?;
    let n = tape.mul(n, gain)?;
    Ok(tape.add(n, bias)?)
}

/// `z = LN(v_x + attn)`, `out = LN(z + FF(z))` with a GELU feed-forward.
pub fn cross_granularity_block(tape: &mut Tape, v_x: Var, tokens: Var, p: &FusionVars) -> Result<Var> {
    let att = cross_attention(tape, v_x, tokens, p.w_q, p.w_k, p.w_v)?;
    let s = tape.add(v_x, att)?;
    let z = norm(tape, s, p.ln1_gain, p.ln1_bias)?;
    let zr = as_row(tape, z)?;
    let h = tape.matmul(zr, p.w1)?;
    let h = tape.add_row(h, p.b1)?;
    let h = tape.gelu(h)?;
    let h = tape.matmul(h, p.w2)?;
    let h = tape.add_row(h, p.b2)?;
    let h = as_vector(tape, h)?;
    let s = tape.add(z, h)?;
    norm(tape, s, p.ln2_gain, p.ln2_bias)
}

/// Multi-granularity representation of one series: the per-segment block
/// outputs and their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiGranRepr {
    pub segments: Vec<Vec<f64>>,
    pub series: Vec<f64>,
}

impl MultiGranRepr {
    pub fn from_segments(segments: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = segments.first() else {
            return Err(MugError::contract("a representation needs at least one segment"));
        };
        let mut series = vec![0.0; first.len()];
        for s in &segments {
            for (m, v) in series.iter_mut().zip(s) {
                *m += v;
            }
        }
        let k = segments.len() as f64;
        series.iter_mut().for_each(|m| *m /= k);
        Ok(Self { segments, series })
    }
}
