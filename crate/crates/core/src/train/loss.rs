use mug_diffcore::{Tape, Tensor, Var};

use crate::config::TrainConfig;
use crate::{MugError, Result};

/// Loss from a `B × n` matrix of soft ranks where `ranks[i][i]` is the rank
/// of query `i`'s own target and every other column is a distractor.
///
/// Per query: `−ln S_ii + λ · mean_{j≠i} −ln(1 − S_ij)` with
/// `S = (n − R)/(n − 1)` clamped to `[ε, 1 − ε]`; averaged over queries.
pub fn loss_from_ranks(tape: &mut Tape, ranks: Var, config: &TrainConfig) -> Result<Var> {
    let shape = tape.value(ranks)?.shape().to_vec();
    let [b, n] = shape[..] else {
        return Err(MugError::contract(format!("rank matrix must be B×n, got {shape:?}")));
    };
    if n < 2 || b != n {
        return Err(MugError::contract(format!(
            "retrieval needs a square batch with B >= 2, got {b}×{n}"
        )));
    }
    let nf = n as f64;
    let sim = tape.affine(ranks, -1.0 / (nf - 1.0), nf / (nf - 1.0))?;
    let eps = config.clamp_eps;
    let sim = tape.clamp(sim, eps, 1.0 - eps)?;
    let log_pos = tape.ln(sim)?;
    let miss = tape.affine(sim, -1.0, 1.0)?;
    let log_neg = tape.ln(miss)?;

    let diag = tape.constant(Tensor::identity(n));
    let off = tape.constant(Tensor::identity(n).map(|x| 1.0 - x));
    let pos = tape.mul(log_pos, diag)?;
    let pos = tape.sum(pos)?;
    let pos = tape.scale(pos, -1.0 / b as f64)?;
    let neg = tape.mul(log_neg, off)?;
    let neg = tape.sum(neg)?;
    let neg = tape.scale(neg, -config.distractor_weight / (b as f64 * (nf - 1.0)))?;
    Ok(tape.add(pos, neg)?)
}

/// Retrieval loss of `B × d` queries against the `B × d` targets of the same
/// segments, using in-batch targets as distractors.
pub fn retrieval_loss(tape: &mut Tape, queries: Var, targets: Var, config: &TrainConfig) -> Result<Var> {
    let dist = tape.pairwise_dist(queries, targets)?;
    let ranks = tape.soft_rank(dist, config.temperature)?;
    loss_from_ranks(tape, ranks, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loss_of(ranks: Tensor, config: &TrainConfig) -> f64 {
        let mut tape = Tape::new();
        let r = tape.constant(ranks);
        let l = loss_from_ranks(&mut tape, r, config).unwrap();
        tape.value(l).unwrap().item().unwrap()
    }

    #[test]
    fn positive_term_values() {
        let cfg = TrainConfig {
            distractor_weight: 0.0,
            ..TrainConfig::default()
        };
        let worst = loss_of(Tensor::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap(), &cfg);
        assert!((worst - 16.118_095_650_958_32).abs() < 1e-9);
        let perfect = loss_of(Tensor::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap(), &cfg);
        assert!(perfect.abs() < 1e-6);
    }

    #[test]
    fn rejects_degenerate_batches() {
        let mut tape = Tape::new();
        let r = tape.constant(Tensor::from_rows(&[[1.0]]).unwrap());
        assert!(matches!(
            loss_from_ranks(&mut tape, r, &TrainConfig::default()),
            Err(MugError::Contract(_))
        ));
    }
}
