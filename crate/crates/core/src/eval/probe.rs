use mug_diffcore::{AdamConfig, AdamState, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{MugError, Result};

/// Linear softmax classifier over frozen representations.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeParams {
    /// `d × C`.
    pub weights: Tensor,
    /// `[C]`.
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    /// Full-batch Adam steps.
    pub steps: usize,
    pub learning_rate: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            learning_rate: 0.05,
        }
    }
}

impl ProbeParams {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        if weights.rank() != 2 || bias.rank() != 1 || weights.cols() != bias.len() {
            return Err(MugError::contract(format!(
                "probe weights {:?} and bias {:?} disagree",
                weights.shape(),
                bias.shape()
            )));
        }
        Ok(Self { weights, bias })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn classes(&self) -> usize {
        self.bias.len()
    }

    pub fn predict(&self, representation: &[f64]) -> Result<usize> {
        let p = classify(self, representation)?;
        Ok(argmax(&p))
    }
}

/// First index of the largest value.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// Fits a linear probe by full-batch Adam on mean softmax cross-entropy.
pub fn fit_linear_probe(
    representations: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    seed: u64,
    config: &ProbeConfig,
) -> Result<ProbeParams> {
    let n = representations.len();
    if labels.len() != n {
        return Err(MugError::contract(format!(
            "{n} representations but {} labels",
            labels.len()
        )));
    }
    let d = representations.first().map_or(0, Vec::len);
    if d == 0 {
        return Err(MugError::contract("representations must have dimension >= 1"));
    }
    if classes < 2 || n < classes {
        return Err(MugError::contract(format!(
            "{n} examples cannot train a {classes}-class probe"
        )));
    }
    let mut seen = vec![false; classes];
    for &y in labels {
        *seen
            .get_mut(y)
            .ok_or_else(|| MugError::contract(format!("label {y} outside {classes} classes")))? = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(MugError::contract(format!("class {missing} has no training examples")));
    }
    // Optimize on standardized features, then fold the scaling back into the
    // weights so the probe applies to raw representations.
    let mut mean = vec![0.0; d];
    for r in representations {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n as f64;
        }
    }
    let mut scale = vec![0.0; d];
    for r in representations {
        for ((s, v), m) in scale.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m) / n as f64;
        }
    }
    let scale: Vec<f64> = scale
        .iter()
        .map(|v| if *v > 1e-24 { 1.0 / v.sqrt() } else { 0.0 })
        .collect();
    let rows: Vec<Vec<f64>> = representations
        .iter()
        .map(|r| r.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) * s).collect())
        .collect();
    let x = Tensor::from_rows(&rows)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 0.01;
    let w0 = (0..d * classes).map(|_| rng.random_range(-bound..bound)).collect();
    let mut weights = Tensor::matrix(d, classes, w0)?;
    let mut bias = Tensor::zeros(&[classes]);
    let mut adam = AdamState::new(AdamConfig::with_learning_rate(config.learning_rate), [&weights, &bias]);
    for _ in 0..config.steps {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.param(weights.clone());
        let bv = tape.param(bias.clone());
        let logits = tape.matmul(xv, wv)?;
        let logits = tape.add_row(logits, bv)?;
        let loss = tape.cross_entropy(logits, labels)?;
        if !tape.value(loss)?.is_finite() {
            return Err(MugError::Numeric("probe loss is not finite".into()));
        }
        let g = tape.backward(loss)?;
        adam.step(&mut [&mut weights, &mut bias], &[g.get(wv), g.get(bv)])?;
    }
    let mut folded = weights.clone();
    let mut shift = bias.data().to_vec();
    for (i, s) in scale.iter().enumerate().take(d) {
        for (c, sh) in shift.iter_mut().enumerate() {
            let w = weights.get(i, c) * s;
            folded.data_mut()[i * classes + c] = w;
            *sh -= w * mean[i];
        }
    }
    ProbeParams::new(folded, Tensor::vector(shift))
}

/// `softmax(Wᵀ r + b)`.
pub fn classify(probe: &ProbeParams, representation: &[f64]) -> Result<Vec<f64>> {
    if representation.len() != probe.input_dim() {
        return Err(MugError::contract(format!(
            "representation has dimension {}, probe expects {}",
            representation.len(),
            probe.input_dim()
        )));
    }
    let c = probe.classes();
    let mut logits = probe.bias.data().to_vec();
    for (i, &r) in representation.iter().enumerate() {
        for (l, w) in logits.iter_mut().zip(probe.weights.row(i)) {
            *l += r * w;
        }
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        z += *l;
    }
    debug_assert_eq!(logits.len(), c);
    logits.iter_mut().for_each(|l| *l /= z);
    Ok(logits)
}
