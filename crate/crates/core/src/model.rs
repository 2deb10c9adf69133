use mug_diffcore::{Tape, Tensor, Var};
use mug_tsdata::{segment_series, znormalize, Segment, TimeSeries};
use sha2::{Digest, Sha256};

use crate::config::{EncoderSpec, MugConfig};
use crate::encoders::{EncoderRegistry, Mode, SegmentEncoder};
use crate::fusion::{cross_granularity_block, fine_fuse, FusionParams, FusionVars, MultiGranRepr};
use crate::{MugError, Result};

/// Which representation a model hands to downstream tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Granularity {
    /// Cross-granularity block output.
    Multi,
    /// Fused timestamp embeddings alone.
    Fine,
    /// Mean of the embedded SAX tokens.
    Coarse,
}

/// Fine encoder, coarse encoder and fusion block.
#[derive(Debug)]
pub struct MugModel {
    config: MugConfig,
    input_dims: usize,
    fine: Box<dyn SegmentEncoder>,
    coarse: Box<dyn SegmentEncoder>,
    fusion: FusionParams,
}

/// Every parameter of a model registered on one tape.
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub fine: Vec<Var>,
    pub coarse: Vec<Var>,
    pub fusion: FusionVars,
}

impl BoundModel {
    /// All parameter handles in the model's declared order.
    pub fn all(&self) -> Vec<Var> {
        let mut out = self.fine.clone();
        out.extend(&self.coarse);
        out.extend(self.fusion.to_vec());
        out
    }
}

/// Tape handles produced by one segment's forward pass.
#[derive(Clone, Copy, Debug)]
pub struct SegmentForward {
    /// `j × d` timestamp embeddings.
    pub fine: Var,
    /// Fused fine vector `[d]`.
    pub fused: Var,
    /// `L × d_S` token matrix.
    pub tokens: Var,
    /// Average-pooled fine embeddings `[d]`, the retrieval query.
    pub query: Var,
    /// Cross-granularity output `[d]`.
    pub multi: Var,
}

impl MugModel {
    pub fn new(config: MugConfig, input_dims: usize) -> Result<Self> {
        Self::with_registry(config, input_dims, &EncoderRegistry::builtin())
    }

    pub fn with_registry(config: MugConfig, input_dims: usize, registry: &EncoderRegistry) -> Result<Self> {
        config.validate()?;
        if input_dims == 0 {
            return Err(MugError::config("input_dims must be >= 1"));
        }
        let fine = registry.create(&config.fine, input_dims, config.seed)?;
        let coarse = registry.create(&config.coarse, input_dims, config.seed.wrapping_add(1))?;
        let d = fine.output_dim();
        let d_k = config.fusion.key_dim.unwrap_or(d);
        let fusion = FusionParams::new(
            d,
            coarse.output_dim(),
            d_k,
            config.fusion.ff_dim,
            config.seed.wrapping_add(2),
        )?;
        // Record the resolved encoder configs so the model can be rebuilt exactly.
        let mut config = config;
        config.fine = EncoderSpec {
            kind: config.fine.kind.clone(),
            config: fine.config(),
        };
        config.coarse = EncoderSpec {
            kind: config.coarse.kind.clone(),
            config: coarse.config(),
        };
        Ok(Self {
            config,
            input_dims,
            fine,
            coarse,
            fusion,
        })
    }

    pub fn config(&self) -> &MugConfig {
        &self.config
    }

    pub fn input_dims(&self) -> usize {
        self.input_dims
    }

    pub fn model_dim(&self) -> usize {
        self.fine.output_dim()
    }

    pub fn fine_encoder(&self) -> &dyn SegmentEncoder {
        self.fine.as_ref()
    }

    pub fn coarse_encoder(&self) -> &dyn SegmentEncoder {
        self.coarse.as_ref()
    }

    pub fn fusion(&self) -> &FusionParams {
        &self.fusion
    }

    pub fn fusion_mut(&mut self) -> &mut FusionParams {
        &mut self.fusion
    }

    /// Named parameters: `fine.*`, then `coarse.*`, then `fusion.*`.
    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        out.extend(
            self.fine
                .parameters()
                .into_iter()
                .map(|(n, t)| (format!("fine.{n}"), t)),
        );
        out.extend(
            self.coarse
                .parameters()
                .into_iter()
                .map(|(n, t)| (format!("coarse.{n}"), t)),
        );
        out.extend(
            self.fusion
                .parameters()
                .into_iter()
                .map(|(n, t)| (format!("fusion.{n}"), t)),
        );
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.fine.parameters_mut();
        out.extend(self.coarse.parameters_mut());
        out.extend(self.fusion.parameters_mut());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.len()).sum()
    }

    /// SHA-256 over parameter names, shapes and bit patterns.
    pub fn parameter_digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.parameters() {
            h.update(name.as_bytes());
            for &s in t.shape() {
                h.update((s as u64).to_le_bytes());
            }
            for &v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundModel {
        BoundModel {
            fine: self.fine.bind(tape, trainable),
            coarse: self.coarse.bind(tape, trainable),
            fusion: self.fusion.bind(tape, trainable),
        }
    }

    /// Z-normalizes a series and cuts it into the configured segments.
    pub fn segments(&self, ts: &TimeSeries) -> Result<Vec<Segment>> {
        if ts.dims() != self.input_dims {
            return Err(MugError::contract(format!(
                "series {} has {} channels, model expects {}",
                ts.id,
                ts.dims(),
                self.input_dims
            )));
        }
        Ok(segment_series(&znormalize(ts), self.config.segments)?)
    }

    pub fn forward_segment(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        segment: &Segment,
        mode: &mut Mode<'_>,
    ) -> Result<SegmentForward> {
        let fine = self.fine.encode(tape, &bound.fine, segment, mode)?;
        let fused = fine_fuse(tape, fine)?;
        let tokens = self.coarse.encode(tape, &bound.coarse, segment, mode)?;
        let query = tape.mean_rows(fine)?;
        let multi = cross_granularity_block(tape, fused, tokens, &bound.fusion)?;
        Ok(SegmentForward {
            fine,
            fused,
            tokens,
            query,
            multi,
        })
    }

    /// Evaluation-mode vector of one segment at the given granularity.
    pub fn segment_vector(&self, segment: &Segment, granularity: Granularity) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let out = match granularity {
            Granularity::Multi => self.forward_segment(&mut tape, &bound, segment, &mut Mode::Eval)?.multi,
            Granularity::Fine => {
                let fine = self.fine.encode(&mut tape, &bound.fine, segment, &mut Mode::Eval)?;
                fine_fuse(&mut tape, fine)?
            }
            Granularity::Coarse => {
                let tokens = self.coarse.encode(&mut tape, &bound.coarse, segment, &mut Mode::Eval)?;
                tape.mean_rows(tokens)?
            }
        };
        let v = tape.value(out)?;
        if !v.is_finite() {
            return Err(MugError::Numeric(format!(
                "non-finite representation for segment of {}",
                segment.parent_id
            )));
        }
        Ok(v.data().to_vec())
    }

    /// Per-segment vectors and their mean for one series.
    pub fn represent_with(&self, ts: &TimeSeries, granularity: Granularity) -> Result<MultiGranRepr> {
        let segs = self
            .segments(ts)?
            .iter()
            .map(|s| self.segment_vector(s, granularity))
            .collect::<Result<Vec<_>>>()?;
        MultiGranRepr::from_segments(segs)
    }

    /// Multi-granularity representation of a series.
    pub fn represent(&self, ts: &TimeSeries) -> Result<MultiGranRepr> {
        self.represent_with(ts, Granularity::Multi)
    }

    /// Series-level vectors for every series, in order.
    pub fn represent_all(&self, series: &[TimeSeries], granularity: Granularity) -> Result<Vec<Vec<f64>>> {
        use rayon::prelude::*;
        series
            .par_iter()
            .map(|ts| Ok(self.represent_with(ts, granularity)?.series))
            .collect()
    }

    /// Overwrites the parameters from tensors in declared order.
    pub fn load_parameters(&mut self, values: Vec<(String, Tensor)>) -> Result<()> {
        let expected: Vec<(String, Vec<usize>)> = self
            .parameters()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if expected.len() != values.len() {
            return Err(MugError::CheckpointFormat(format!(
                "model has {} parameter tensors, got {}",
                expected.len(),
                values.len()
            )));
        }
        for ((en, es), (n, t)) in expected.iter().zip(&values) {
            if en != n || es.as_slice() != t.shape() {
                return Err(MugError::CheckpointFormat(format!(
                    "parameter {n} {:?} does not match expected {en} {es:?}",
                    t.shape()
                )));
            }
        }
        for (slot, (_, t)) in self.parameters_mut().into_iter().zip(values) {
            *slot = t;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::tiny_config;

    fn series(values: Vec<f64>) -> TimeSeries {
        TimeSeries::univariate("t", Some(0), values).unwrap()
    }

    #[test]
    fn single_segment_representation_is_its_segment() {
        let m = MugModel::new(tiny_config(1), 1).unwrap();
        let ts = series((0..12).map(|t| (t as f64 * 0.7).sin()).collect());
        let r = m.represent(&ts).unwrap();
        assert_eq!(r.segments.len(), 1);
        assert_eq!(r.series, r.segments[0]);
        assert_eq!(r.series.len(), 8);
        assert_eq!(r, m.represent(&ts.clone()).unwrap());
    }

    #[test]
    fn parameter_order_and_digest() {
        let m = MugModel::new(tiny_config(2), 1).unwrap();
        let names: Vec<String> = m.parameters().into_iter().map(|(n, _)| n).collect();
        assert!(names[0].starts_with("fine."));
        assert!(names.iter().any(|n| n == "coarse.table"));
        assert!(names.last().unwrap().starts_with("fusion."));
        let same = MugModel::new(tiny_config(2), 1).unwrap();
        assert_eq!(m.parameter_digest(), same.parameter_digest());
        let mut cfg = tiny_config(2);
        cfg.seed = 9;
        assert_ne!(m.parameter_digest(), MugModel::new(cfg, 1).unwrap().parameter_digest());
    }

    #[test]
    fn channel_mismatch_is_a_contract_error() {
        let m = MugModel::new(tiny_config(2), 2).unwrap();
        let ts = series(vec![0.0; 12]);
        assert!(matches!(m.represent(&ts), Err(MugError::Contract(_))));
    }
}
