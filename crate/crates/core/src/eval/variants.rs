use std::collections::BTreeMap;
use std::fmt;

use mug_tsdata::Dataset;

use super::knn::knn_predict;
use super::probe::{fit_linear_probe, ProbeConfig};
use crate::model::{Granularity, MugModel};
use crate::{MugError, Result};

/// Inputs shared by every evaluation variant.
pub struct EvalContext<'a> {
    /// Trained model; variants that do not need one ignore it.
    pub model: Option<&'a MugModel>,
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub probe: &'a ProbeConfig,
    pub seed: u64,
}

/// Correct-count over total for one variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Score {
    pub correct: usize,
    pub total: usize,
}

impl Score {
    pub fn from_predictions(pred: &[usize], truth: &[usize]) -> Self {
        Self {
            correct: pred.iter().zip(truth).filter(|(a, b)| a == b).count(),
            total: truth.len(),
        }
    }

    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

pub trait EvalVariant: Send + Sync {
    fn name(&self) -> &str;

    /// Whether the variant reads learned representations.
    fn needs_model(&self) -> bool;

    fn evaluate(&self, ctx: &EvalContext<'_>) -> Result<Score>;
}

fn labels_of(ds: &Dataset) -> Result<Vec<usize>> {
    ds.labels()
        .ok_or_else(|| MugError::contract(format!("dataset {} has unlabeled series", ds.name)))
}

/// Linear probe over frozen series representations at one granularity.
#[derive(Debug)]
pub struct ProbeVariant {
    name: String,
    granularity: Granularity,
}

impl ProbeVariant {
    pub fn new(name: &str, granularity: Granularity) -> Self {
        Self {
            name: name.to_string(),
            granularity,
        }
    }
}

impl EvalVariant for ProbeVariant {
    fn name(&self) -> &str {
        &self.name
    }

    fn needs_model(&self) -> bool {
        true
    }

    fn evaluate(&self, ctx: &EvalContext<'_>) -> Result<Score> {
        let model = ctx
            .model
            .ok_or_else(|| MugError::contract(format!("variant {} needs a trained model", self.name)))?;
        let train_y = labels_of(ctx.train)?;
        let test_y = labels_of(ctx.test)?;
        let train_x = model.represent_all(&ctx.train.series, self.granularity)?;
        let test_x = model.represent_all(&ctx.test.series, self.granularity)?;
        let probe = fit_linear_probe(&train_x, &train_y, ctx.train.class_count(), ctx.seed, ctx.probe)?;
        let pred = test_x.iter().map(|r| probe.predict(r)).collect::<Result<Vec<_>>>()?;
        Ok(Score::from_predictions(&pred, &test_y))
    }
}

/// 1-NN on the raw z-normalized series.
#[derive(Debug)]
pub struct KnnVariant;

impl EvalVariant for KnnVariant {
    fn name(&self) -> &str {
        "knn"
    }

    fn needs_model(&self) -> bool {
        false
    }

    fn evaluate(&self, ctx: &EvalContext<'_>) -> Result<Score> {
        let pred = knn_predict(ctx.train, ctx.test)?;
        Ok(Score::from_predictions(&pred, &labels_of(ctx.test)?))
    }
}

/// Evaluation variants by name.
pub struct VariantRegistry {
    variants: BTreeMap<String, Box<dyn EvalVariant>>,
}

impl fmt::Debug for VariantRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.variants.keys()).finish()
    }
}

impl Default for VariantRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl VariantRegistry {
    pub fn empty() -> Self {
        Self {
            variants: BTreeMap::new(),
        }
    }

    /// `multi`, `fine`, `coarse` (linear probes) and `knn`.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(ProbeVariant::new("multi", Granularity::Multi)));
        r.register(Box::new(ProbeVariant::new("fine", Granularity::Fine)));
        r.register(Box::new(ProbeVariant::new("coarse", Granularity::Coarse)));
        r.register(Box::new(KnnVariant));
        r
    }

    pub fn register(&mut self, variant: Box<dyn EvalVariant>) {
        self.variants.insert(variant.name().to_string(), variant);
    }

    pub fn names(&self) -> Vec<&str> {
        self.variants.keys().map(String::as_str).collect()
    }

    pub fn get(&self, name: &str) -> Result<&dyn EvalVariant> {
        self.variants
            .get(name)
            .map(Box::as_ref)
            .ok_or_else(|| MugError::UnknownStrategy {
                registry: "variant",
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }

    /// Resolves a list of names, failing on the first unknown one.
    pub fn resolve(&self, names: &[String]) -> Result<Vec<&dyn EvalVariant>> {
        names.iter().map(|n| self.get(n)).collect()
    }
}
