#![allow(dead_code)]

use mug_core::encoders::{FineEncoderConfig, SaxConfig};
use mug_core::{EncoderSpec, MugConfig};
use mug_diffcore::{Tape, Tensor, Var};
use mug_tsdata::{synthetic_dataset, Dataset, Segment, Waveform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn random_segment(rng: &mut ChaCha8Rng, len: usize, dims: usize) -> Segment {
    let channels = (0..dims)
        .map(|_| (0..len).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    Segment::from_channels("toy", 0, channels).unwrap()
}

/// `Σ c ⊙ x` for a fixed random `c`, turning any output into a scalar with
/// every entry contributing.
pub fn project(tape: &mut Tape, x: Var, seed: u64) -> mug_core::Result<Var> {
    let shape = tape.value(x)?.shape().to_vec();
    let c = tape.constant(random_tensor(&mut rng(seed ^ 0x5eed), &shape, 1.0));
    let p = tape.mul(x, c)?;
    Ok(tape.sum(p)?)
}

/// Two-segment model small enough for exhaustive finite differences.
pub fn tiny_config(segments: usize) -> MugConfig {
    MugConfig {
        segments,
        fine: EncoderSpec::new(
            "transformer",
            FineEncoderConfig {
                model_dim: 8,
                heads: 2,
                layers: 1,
                ff_dim: 8,
                dropout: 0.0,
                ..FineEncoderConfig::default()
            },
        ),
        coarse: EncoderSpec::new(
            "sax",
            SaxConfig {
                alphabet: 4,
                word_length: 3,
                embed_dim: 6,
            },
        ),
        ..MugConfig::default()
    }
}

pub fn waveforms() -> [Waveform; 3] {
    [Waveform::Sine, Waveform::Square, Waveform::Sawtooth]
}

pub fn small_synthetic(n: usize, length: usize, seed: u64) -> Dataset {
    synthetic_dataset(&waveforms(), n, length, seed).unwrap()
}

/// `|a − n| / max(|a|, |n|, 1)`.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1.0)
}
