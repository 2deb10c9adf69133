use crate::{Result, Segment, TimeSeries, TsError};

/// Splits `len` items into `parts` contiguous near-equal runs; the remainder
/// goes to the leading runs. Returns `(start, length)` pairs.
pub fn near_equal_bounds(len: usize, parts: usize) -> Vec<(usize, usize)> {
    if parts == 0 {
        return Vec::new();
    }
    let (base, extra) = (len / parts, len % parts);
    let mut start = 0;
    (0..parts)
        .map(|k| {
            let l = base + usize::from(k < extra);
            let out = (start, l);
            start += l;
            out
        })
        .collect()
}

/// Per-channel shift to mean 0 and scale to population std 1. Constant
/// channels become all zeros.
pub fn znormalize(ts: &TimeSeries) -> TimeSeries {
    let channels = ts
        .channels()
        .iter()
        .map(|c| {
            let n = c.len() as f64;
            let mean = c.iter().sum::<f64>() / n;
            let var = c.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            if std <= 1e-12 * mean.abs().max(1.0) {
                vec![0.0; c.len()]
            } else {
                c.iter().map(|x| (x - mean) / std).collect()
            }
        })
        .collect();
    ts.with_channels(channels).expect("shape preserved")
}

/// `K` contiguous, non-overlapping segments covering the series.
pub fn segment_series(ts: &TimeSeries, num_segments: usize) -> Result<Vec<Segment>> {
    if num_segments == 0 || num_segments > ts.len() {
        return Err(TsError::contract(format!(
            "cannot cut a series of length {} into {num_segments} segments",
            ts.len()
        )));
    }
    near_equal_bounds(ts.len(), num_segments)
        .into_iter()
        .map(|(start, len)| ts.segment(start, len))
        .collect()
}

/// Linear interpolation onto `target_length` uniformly spaced points that
/// keep both endpoints.
pub fn resample_length(ts: &TimeSeries, target_length: usize) -> Result<TimeSeries> {
    if target_length < 2 {
        return Err(TsError::contract(format!(
            "resample target length must be at least 2, got {target_length}"
        )));
    }
    if target_length == ts.len() {
        return Ok(ts.clone());
    }
    let channels = ts
        .channels()
        .iter()
        .map(|c| resample_channel(c, target_length))
        .collect();
    ts.with_channels(channels)
}

fn resample_channel(values: &[f64], target: usize) -> Vec<f64> {
    let w = values.len();
    if w == 1 {
        return vec![values[0]; target];
    }
    let span = (w - 1) as f64;
    let steps = (target - 1) as f64;
    (0..target)
        .map(|k| {
            if k == target - 1 {
                return values[w - 1];
            }
            let pos = (k * (w - 1)) as f64 / steps;
            let i = (pos.floor() as usize).min(w - 2);
            let frac = pos - i as f64;
            debug_assert!(pos <= span);
            if frac == 0.0 {
                values[i]
            } else {
                values[i] + frac * (values[i + 1] - values[i])
            }
        })
        .collect()
}
