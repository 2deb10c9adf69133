use mug_diffcore::{Tape, Tensor, Var};
use mug_tsdata::{near_equal_bounds, Segment};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{parse_config, Mode, SegmentEncoder};
use crate::{MugError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaxConfig {
    /// Alphabet size `a`.
    pub alphabet: usize,
    /// PAA frames per segment `L`.
    pub word_length: usize,
    /// Token embedding width `d_S`.
    pub embed_dim: usize,
}

impl Default for SaxConfig {
    fn default() -> Self {
        Self {
            alphabet: 5,
            word_length: 8,
            embed_dim: 64,
        }
    }
}

impl SaxConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=16).contains(&self.alphabet) {
            return Err(MugError::config(format!(
                "alphabet must lie in 2..=16, got {}",
                self.alphabet
            )));
        }
        if self.word_length == 0 || self.embed_dim == 0 {
            return Err(MugError::config("word_length and embed_dim must be >= 1"));
        }
        Ok(())
    }
}

/// The `a − 1` standard-normal quantiles at `k/a`, ascending.
pub fn gaussian_breakpoints(alphabet: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (1..alphabet)
        .map(|k| {
            // The middle quantile of an even alphabet is exactly zero; avoid
            // the inverse-CDF rounding there so 0.0 lands in the upper bin.
            if 2 * k == alphabet {
                0.0
            } else {
                normal.inverse_cdf(k as f64 / alphabet as f64)
            }
        })
        .collect()
}

/// Frame means over `frames` near-equal contiguous frames.
pub fn paa(values: &[f64], frames: usize) -> Result<Vec<f64>> {
    if frames == 0 || frames > values.len() {
        return Err(MugError::contract(format!(
            "cannot split {} values into {frames} PAA frames",
            values.len()
        )));
    }
    Ok(near_equal_bounds(values.len(), frames)
        .into_iter()
        .map(|(s, l)| values[s..s + l].iter().sum::<f64>() / l as f64)
        .collect())
}

/// Bin index of each value; bins are closed on the left.
pub fn sax_symbolize(values: &[f64], alphabet: usize) -> Vec<usize> {
    let cuts = gaussian_breakpoints(alphabet);
    values.iter().map(|&v| cuts.partition_point(|&c| c <= v)).collect()
}

/// SAX word of a segment plus its embedded token matrix (`L × d_S`).
#[derive(Clone, Debug, PartialEq)]
pub struct CoarseTokens {
    pub symbols: Vec<usize>,
    pub matrix: Tensor,
}

/// SAX word of a (multivariate) segment: channel PAAs are averaged before
/// symbolization.
pub fn sax_word(segment: &Segment, config: &SaxConfig) -> Result<Vec<usize>> {
    let mut mean = vec![0.0; config.word_length];
    for channel in segment.channels() {
        for (m, v) in mean.iter_mut().zip(paa(channel, config.word_length)?) {
            *m += v;
        }
    }
    let dims = segment.dims() as f64;
    mean.iter_mut().for_each(|m| *m /= dims);
    Ok(sax_symbolize(&mean, config.alphabet))
}

/// Looks a segment's SAX word up in an `a × d_S` embedding table.
pub fn coarse_tokens(segment: &Segment, config: &SaxConfig, table: &Tensor) -> Result<CoarseTokens> {
    if table.shape() != [config.alphabet, config.embed_dim] {
        return Err(MugError::contract(format!(
            "embedding table has shape {:?}, expected [{}, {}]",
            table.shape(),
            config.alphabet,
            config.embed_dim
        )));
    }
    let symbols = sax_word(segment, config)?;
    let rows: Vec<&[f64]> = symbols.iter().map(|&s| table.row(s)).collect();
    Ok(CoarseTokens {
        matrix: Tensor::from_rows(&rows)?,
        symbols,
    })
}

/// Symbol-level encoder: SAX word through a learned embedding table.
#[derive(Clone, Debug)]
pub struct SaxEncoder {
    config: SaxConfig,
    table: Tensor,
}

impl SaxEncoder {
    pub fn new(config: SaxConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // unit-variance uniform entries
        let bound = 3f64.sqrt();
        let data = (0..config.alphabet * config.embed_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let table = Tensor::matrix(config.alphabet, config.embed_dim, data)?;
        Ok(Self { config, table })
    }

    pub fn from_config(value: &serde_json::Value, _input_dims: usize, seed: u64) -> Result<Box<dyn SegmentEncoder>> {
        Ok(Box::new(Self::new(parse_config(value)?, seed)?))
    }

    pub fn sax_config(&self) -> &SaxConfig {
        &self.config
    }

    pub fn table(&self) -> &Tensor {
        &self.table
    }
}

impl SegmentEncoder for SaxEncoder {
    fn kind(&self) -> &'static str {
        "sax"
    }

    fn output_dim(&self) -> usize {
        self.config.embed_dim
    }

    fn config(&self) -> serde_json::Value {
        serde_json::to_value(&self.config).expect("config serializes")
    }

    fn parameters(&self) -> Vec<(String, &Tensor)> {
        vec![("table".to_string(), &self.table)]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.table]
    }

    fn encode(&self, tape: &mut Tape, params: &[Var], segment: &Segment, _mode: &mut Mode<'_>) -> Result<Var> {
        let [table] = params else {
            return Err(MugError::contract("parameter binding does not match the encoder"));
        };
        let symbols = sax_word(segment, &self.config)?;
        Ok(tape.gather_rows(*table, &symbols)?)
    }
}
