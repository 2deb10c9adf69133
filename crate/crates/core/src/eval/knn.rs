use mug_tsdata::{znormalize, Dataset, TimeSeries};

use crate::train::euclidean;
use crate::{MugError, Result};

fn flat(ts: &TimeSeries) -> Vec<f64> {
    znormalize(ts).to_row_major()
}

/// 1-NN predictions under Euclidean distance on z-normalized series. Ties go
/// to the lowest training index.
pub fn knn_predict(train: &Dataset, test: &Dataset) -> Result<Vec<usize>> {
    let shape = |d: &Dataset| (d.series_length(), d.dims());
    if train.is_empty() || shape(train) != shape(test) || shape(train).0.is_none() {
        return Err(MugError::contract(format!(
            "1-NN needs equal-length series with matching channels: train {:?}, test {:?}",
            shape(train),
            shape(test)
        )));
    }
    let labels = train
        .labels()
        .ok_or_else(|| MugError::contract("1-NN training series must be labeled"))?;
    let reference: Vec<Vec<f64>> = train.series.iter().map(flat).collect();
    Ok(test
        .series
        .iter()
        .map(|ts| {
            let x = flat(ts);
            let mut best = (f64::INFINITY, 0);
            for (k, r) in reference.iter().enumerate() {
                let d = euclidean(&x, r);
                if d < best.0 {
                    best = (d, k);
                }
            }
            labels[best.1]
        })
        .collect())
}

/// Fraction of test series whose 1-NN label matches their own.
pub fn knn_baseline(train: &Dataset, test: &Dataset) -> Result<f64> {
    let truth = test
        .labels()
        .ok_or_else(|| MugError::contract("1-NN test series must be labeled"))?;
    let pred = knn_predict(train, test)?;
    let correct = pred.iter().zip(&truth).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / truth.len() as f64)
}
