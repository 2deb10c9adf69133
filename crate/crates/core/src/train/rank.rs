use crate::{MugError, Result};

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `1 + #{j : d(q, t) ≥ d(q, y_j)}` under Euclidean distance. Ties count
/// against the target.
pub fn hard_rank(query: &[f64], target: &[f64], distractors: &[&[f64]]) -> usize {
    let dt = euclidean(query, target);
    1 + distractors.iter().filter(|y| dt >= euclidean(query, y)).count()
}

/// `1 + Σ_j σ((d(q, t) − d(q, y_j)) / τ)`.
pub fn soft_rank(query: &[f64], target: &[f64], distractors: &[&[f64]], temperature: f64) -> Result<f64> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(MugError::contract(format!(
            "temperature must be > 0, got {temperature}"
        )));
    }
    let dt = euclidean(query, target);
    Ok(1.0
        + distractors
            .iter()
            .map(|y| sigmoid((dt - euclidean(query, y)) / temperature))
            .sum::<f64>())
}

/// `(n − π) / (n − 1)`.
pub fn spearman_similarity(rank: f64, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(MugError::contract(format!(
            "similarity needs n >= 2 candidates, got {n}"
        )));
    }
    if !(1.0..=n as f64).contains(&rank) {
        return Err(MugError::contract(format!("rank {rank} outside [1, {n}]")));
    }
    Ok((n as f64 - rank) / (n as f64 - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumerated_ranks() {
        let q = [0.0];
        assert_eq!(hard_rank(&q, &[0.5], &[]), 1);
        assert_eq!(hard_rank(&q, &[0.5], &[&[0.2], &[0.9]]), 2);
        assert_eq!(hard_rank(&q, &[0.5], &[&[-0.5]]), 2);
        assert_eq!(hard_rank(&q, &[0.0], &[&[1.0], &[-2.0]]), 1);
        assert_eq!(soft_rank(&q, &[0.5], &[&[-0.5]], 0.3).unwrap(), 1.5);
    }

    #[test]
    fn similarity_endpoints() {
        assert_eq!(spearman_similarity(1.0, 7).unwrap(), 1.0);
        assert_eq!(spearman_similarity(7.0, 7).unwrap(), 0.0);
        assert!((spearman_similarity(3.0, 11).unwrap() - 0.8).abs() < 1e-15);
        assert!(spearman_similarity(1.0, 1).is_err());
    }
}
