use mug_diffcore::{Tape, Tensor, Var};
use mug_tsdata::Segment;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{dropout, glorot, parse_config, Mode, SegmentEncoder};
use crate::{MugError, Result};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FineEncoderConfig {
    /// Input channels `m`. Overridden by the data's dimensionality.
    pub input_dim: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub positional_encoding: bool,
}

impl Default for FineEncoderConfig {
    fn default() -> Self {
        Self {
            input_dim: 1,
            model_dim: 64,
            heads: 4,
            layers: 2,
            ff_dim: 128,
            dropout: 0.1,
            max_len: 1024,
            positional_encoding: true,
        }
    }
}

impl FineEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.input_dim,
            self.model_dim,
            self.heads,
            self.layers,
            self.ff_dim,
            self.max_len,
        ];
        if dims.contains(&0) {
            return Err(MugError::config(format!(
                "fine encoder dimensions must be >= 1: {self:?}"
            )));
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return Err(MugError::config(format!(
                "model_dim {} is not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(MugError::config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Layer {
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
    bq: Tensor,
    bk: Tensor,
    bv: Tensor,
    bo: Tensor,
    ln1_gain: Tensor,
    ln1_bias: Tensor,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
    ln2_gain: Tensor,
    ln2_bias: Tensor,
}

const LAYER_PARAMS: usize = 16;

impl Layer {
    fn new(rng: &mut ChaCha8Rng, d: usize, ff: usize) -> Self {
        Self {
            wq: glorot(rng, d, d),
            wk: glorot(rng, d, d),
            wv: glorot(rng, d, d),
            wo: glorot(rng, d, d),
            bq: Tensor::zeros(&[d]),
            bk: Tensor::zeros(&[d]),
            bv: Tensor::zeros(&[d]),
            bo: Tensor::zeros(&[d]),
            ln1_gain: Tensor::full(&[d], 1.0),
            ln1_bias: Tensor::zeros(&[d]),
            w1: glorot(rng, d, ff),
            b1: Tensor::zeros(&[ff]),
            w2: glorot(rng, ff, d),
            b2: Tensor::zeros(&[d]),
            ln2_gain: Tensor::full(&[d], 1.0),
            ln2_bias: Tensor::zeros(&[d]),
        }
    }

    fn tensors(&self) -> [(&'static str, &Tensor); LAYER_PARAMS] {
        [
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
            ("bq", &self.bq),
            ("bk", &self.bk),
            ("bv", &self.bv),
            ("bo", &self.bo),
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; LAYER_PARAMS] {
        [
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.bq,
            &mut self.bk,
            &mut self.bv,
            &mut self.bo,
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
}

/// Timestamp-level encoder: input projection, sinusoidal positions, then
/// post-norm transformer blocks (multi-head self-attention and a GELU
/// feed-forward, each followed by add & layer norm).
#[derive(Clone, Debug)]
pub struct TransformerEncoder {
    config: FineEncoderConfig,
    w_in: Tensor,
    b_in: Tensor,
    layers: Vec<Layer>,
}

impl TransformerEncoder {
    pub fn new(config: FineEncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.model_dim;
        let w_in = glorot(&mut rng, config.input_dim, d);
        let layers = (0..config.layers)
            .map(|_| Layer::new(&mut rng, d, config.ff_dim))
            .collect();
        Ok(Self {
            b_in: Tensor::zeros(&[d]),
            w_in,
            layers,
            config,
        })
    }

    pub fn from_config(value: &serde_json::Value, input_dims: usize, seed: u64) -> Result<Box<dyn SegmentEncoder>> {
        let mut config: FineEncoderConfig = parse_config(value)?;
        config.input_dim = input_dims;
        Ok(Box::new(Self::new(config, seed)?))
    }

    pub fn fine_config(&self) -> &FineEncoderConfig {
        &self.config
    }

    /// Fixed sinusoidal position table, `len × d`.
    pub fn positional_encoding(len: usize, d: usize) -> Tensor {
        let mut data = vec![0.0; len * d];
        for pos in 0..len {
            for i in 0..d {
                let pair = (i / 2) as f64;
                let angle = pos as f64 / 10_000f64.powf(2.0 * pair / d as f64);
                data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            }
        }
        Tensor::matrix(len, d, data).expect("shape matches")
    }

    fn attention(&self, tape: &mut Tape, x: Var, p: &[Var], mode: &mut Mode<'_>) -> Result<Var> {
        let heads = self.config.heads;
        let dh = self.config.model_dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let proj = |tape: &mut Tape, w: Var, b: Var| -> Result<Var> {
            let y = tape.matmul(x, w)?;
            Ok(tape.add_row(y, b)?)
        };
        let q = proj(tape, p[0], p[4])?;
        let k = proj(tape, p[1], p[5])?;
        let v = proj(tape, p[2], p[6])?;
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (s, e) = (h * dh, (h + 1) * dh);
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, s, e)?,
                    tape.slice_cols(k, s, e)?,
                    tape.slice_cols(v, s, e)?,
                )
            };
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale)?;
            let weights = tape.softmax(scores)?;
            let weights = dropout(tape, weights, self.config.dropout, mode)?;
            outs.push(tape.matmul(weights, vh)?);
        }
        let joined = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
        let o = tape.matmul(joined, p[3])?;
        Ok(tape.add_row(o, p[7])?)
    }
}

fn add_norm(tape: &mut Tape, x: Var, y: Var, gain: Var, bias: Var) -> Result<Var> {
    let s = tape.add(x, y)?;
    let n = tape.layer_norm(s, LN_EPS)?;
    let n = tape.mul_row(n, gain)?;
    Ok(tape.add_row(n, bias)?)
}

impl SegmentEncoder for TransformerEncoder {
    fn kind(&self) -> &'static str {
        "transformer"
    }

    fn output_dim(&self) -> usize {
        self.config.model_dim
    }

    fn config(&self) -> serde_json::Value {
        serde_json::to_value(&self.config).expect("config serializes")
    }

    fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("w_in".to_string(), &self.w_in), ("b_in".to_string(), &self.b_in)];
        for (l, layer) in self.layers.iter().enumerate() {
            out.extend(layer.tensors().into_iter().map(|(n, t)| (format!("layer{l}.{n}"), t)));
        }
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.w_in, &mut self.b_in];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out
    }

    fn encode(&self, tape: &mut Tape, params: &[Var], segment: &Segment, mode: &mut Mode<'_>) -> Result<Var> {
        let (j, m, d) = (segment.len(), segment.dims(), self.config.model_dim);
        if j > self.config.max_len {
            return Err(MugError::contract(format!(
                "segment length {j} exceeds the encoder's max length {}",
                self.config.max_len
            )));
        }
        if m != self.config.input_dim {
            return Err(MugError::contract(format!(
                "segment has {m} channels, encoder expects {}",
                self.config.input_dim
            )));
        }
        if params.len() != 2 + LAYER_PARAMS * self.layers.len() {
            return Err(MugError::contract("parameter binding does not match the encoder"));
        }
        let input = tape.constant(Tensor::matrix(j, m, segment.to_row_major())?);
        let x = tape.matmul(input, params[0])?;
        let mut x = tape.add_row(x, params[1])?;
        if self.config.positional_encoding {
            let pe = tape.constant(Self::positional_encoding(j, d));
            x = tape.add(x, pe)?;
        }
        for l in 0..self.layers.len() {
            let p = &params[2 + l * LAYER_PARAMS..2 + (l + 1) * LAYER_PARAMS];
            let att = self.attention(tape, x, p, mode)?;
            let att = dropout(tape, att, self.config.dropout, mode)?;
            x = add_norm(tape, x, att, p[8], p[9])?;
            let h = tape.matmul(x, p[10])?;
            let h = tape.add_row(h, p[11])?;
            let h = tape.gelu(h)?;
            let h = tape.matmul(h, p[12])?;
            let h = tape.add_row(h, p[13])?;
            let h = dropout(tape, h, self.config.dropout, mode)?;
            x = add_norm(tape, x, h, p[14], p[15])?;
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(pe: bool) -> TransformerEncoder {
        TransformerEncoder::new(
            FineEncoderConfig {
                input_dim: 2,
                model_dim: 8,
                heads: 2,
                layers: 2,
                ff_dim: 16,
                dropout: 0.0,
                max_len: 16,
                positional_encoding: pe,
            },
            3,
        )
        .unwrap()
    }

    fn segment(rows: &[[f64; 2]]) -> Segment {
        let ch0 = rows.iter().map(|r| r[0]).collect();
        let ch1 = rows.iter().map(|r| r[1]).collect();
        Segment::from_channels("s", 0, vec![ch0, ch1]).unwrap()
    }

    fn encode(enc: &TransformerEncoder, seg: &Segment) -> Tensor {
        let mut tape = Tape::new();
        let p = enc.bind(&mut tape, false);
        let out = enc.encode(&mut tape, &p, seg, &mut Mode::Eval).unwrap();
        tape.value(out).unwrap().clone()
    }

    #[test]
    fn output_shape_is_rows_by_model_dim() {
        let enc = small(true);
        for j in 1..6 {
            let rows: Vec<[f64; 2]> = (0..j).map(|t| [t as f64, -(t as f64)]).collect();
            assert_eq!(encode(&enc, &segment(&rows)).shape(), &[j, 8]);
        }
    }

    #[test]
    fn without_positions_permuting_timestamps_permutes_rows() {
        let enc = small(false);
        let rows = [[0.3, -1.0], [1.2, 0.5], [-0.7, 2.0], [0.0, 0.1]];
        let mut swapped = rows;
        swapped.swap(0, 2);
        let a = encode(&enc, &segment(&rows));
        let b = encode(&enc, &segment(&swapped));
        for (ra, rb) in [(0, 2), (2, 0), (1, 1), (3, 3)] {
            for (x, y) in a.row(ra).iter().zip(b.row(rb)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_overlong_segments() {
        let enc = small(true);
        let rows: Vec<[f64; 2]> = (0..17).map(|t| [t as f64, 0.0]).collect();
        let mut tape = Tape::new();
        let p = enc.bind(&mut tape, false);
        assert!(matches!(
            enc.encode(&mut tape, &p, &segment(&rows), &mut Mode::Eval),
            Err(MugError::Contract(_))
        ));
    }

    #[test]
    fn heads_must_divide_model_dim() {
        let cfg = FineEncoderConfig {
            model_dim: 10,
            heads: 4,
            ..FineEncoderConfig::default()
        };
        assert!(TransformerEncoder::new(cfg, 0).is_err());
    }

    #[test]
    fn dropout_only_in_training() {
        let mut cfg = small(true).config.clone();
        cfg.dropout = 0.5;
        let enc = TransformerEncoder::new(cfg, 1).unwrap();
        let seg = segment(&[[0.1, 0.2], [0.3, -0.4], [1.0, 0.0]]);
        assert_eq!(encode(&enc, &seg), encode(&enc, &seg));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new();
        let p = enc.bind(&mut tape, false);
        let out = enc.encode(&mut tape, &p, &seg, &mut Mode::Train(&mut rng)).unwrap();
        assert_ne!(tape.value(out).unwrap(), &encode(&enc, &seg));
    }
}
