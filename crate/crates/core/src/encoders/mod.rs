//! Segment encoders for the two granularities.
//!
//! Every encoder maps a [`Segment`] to a representation matrix and owns its
//! parameters. Implementations are registered by name in an
//! [`EncoderRegistry`] and selected from configuration, so the fusion and
//! training code never depends on a concrete encoder.

mod sax;
mod transformer;

use std::collections::BTreeMap;
use std::fmt;

use mug_diffcore::{Tape, Tensor, Var};
use mug_tsdata::Segment;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use sax::{coarse_tokens, gaussian_breakpoints, paa, sax_symbolize, CoarseTokens, SaxConfig, SaxEncoder};
pub use transformer::{FineEncoderConfig, TransformerEncoder};

use crate::config::EncoderSpec;
use crate::{MugError, Result};

/// Forward-pass mode. Training mode carries the generator for dropout masks.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

pub trait SegmentEncoder: Send + Sync + fmt::Debug {
    /// Registry name.
    fn kind(&self) -> &'static str;

    /// Width of each output row.
    fn output_dim(&self) -> usize;

    /// Serialized configuration, enough for the registry to rebuild the
    /// encoder's parameter shapes.
    fn config(&self) -> serde_json::Value;

    /// Parameters in declared order, with names.
    fn parameters(&self) -> Vec<(String, &Tensor)>;

    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;

    /// Encodes one segment into a `rows × output_dim` matrix. `params` are
    /// this encoder's parameters registered on `tape`, in declared order.
    fn encode(&self, tape: &mut Tape, params: &[Var], segment: &Segment, mode: &mut Mode<'_>) -> Result<Var>;

    /// Registers the parameters on `tape`, trainable or constant.
    fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.parameters()
            .into_iter()
            .map(|(_, t)| tape.leaf(t.clone(), trainable))
            .collect()
    }
}

/// Builds an encoder from its JSON config, the input channel count and an
/// initialization seed.
pub type EncoderFactory = fn(&serde_json::Value, usize, u64) -> Result<Box<dyn SegmentEncoder>>;

#[derive(Clone)]
pub struct EncoderRegistry {
    factories: BTreeMap<String, EncoderFactory>,
}

impl fmt::Debug for EncoderRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

impl Default for EncoderRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl EncoderRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// `transformer` (timestamp-level) and `sax` (symbol-level).
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("transformer", TransformerEncoder::from_config);
        r.register("sax", SaxEncoder::from_config);
        r
    }

    pub fn register(&mut self, name: &str, factory: EncoderFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn create(&self, spec: &EncoderSpec, input_dims: usize, seed: u64) -> Result<Box<dyn SegmentEncoder>> {
        let factory = self
            .factories
            .get(&spec.kind)
            .ok_or_else(|| MugError::UnknownStrategy {
                registry: "encoder",
                name: spec.kind.clone(),
                available: self.names().join(", "),
            })?;
        factory(&spec.config, input_dims, seed)
    }
}

/// Parses an encoder config, treating `null` as all defaults.
pub(crate) fn parse_config<T: serde::de::DeserializeOwned + Default>(value: &serde_json::Value) -> Result<T> {
    if value.is_null() {
        return Ok(T::default());
    }
    serde_json::from_value(value.clone()).map_err(|e| MugError::config(e.to_string()))
}

/// Glorot-uniform `rows × cols` matrix.
pub(crate) fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::matrix(rows, cols, data).expect("shape matches")
}

/// Multiplies by a fresh inverted-dropout mask in training mode.
pub(crate) fn dropout(tape: &mut Tape, x: Var, rate: f64, mode: &mut Mode<'_>) -> Result<Var> {
    let Mode::Train(rng) = mode else {
        return Ok(x);
    };
    if rate <= 0.0 {
        return Ok(x);
    }
    let shape = tape.value(x)?.shape().to_vec();
    let n = shape.iter().product();
    let keep = 1.0 / (1.0 - rate);
    let mask = (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let mask = tape.constant(Tensor::new(shape, mask)?);
    Ok(tape.mul(x, mask)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_encoder_lists_alternatives() {
        let r = EncoderRegistry::builtin();
        let err = r.create(&EncoderSpec::new("shapenet", ()), 1, 0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("shapenet") && msg.contains("sax") && msg.contains("transformer"));
    }

    #[test]
    fn custom_encoders_can_be_registered() {
        fn tiny(_: &serde_json::Value, _: usize, seed: u64) -> Result<Box<dyn SegmentEncoder>> {
            SaxEncoder::from_config(
                &serde_json::json!({"alphabet": 3, "word_length": 2, "embed_dim": 4}),
                1,
                seed,
            )
        }
        let mut r = EncoderRegistry::builtin();
        r.register("tiny-sax", tiny);
        let enc = r.create(&EncoderSpec::new("tiny-sax", ()), 1, 0).unwrap();
        assert_eq!(enc.output_dim(), 4);
    }
}
