//! Simulated real-world corruption: additive Gaussian noise and replacement
//! of windows by segments copied from series of other classes.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Dataset, Result, TimeSeries, TsError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    /// Noise standard deviation as a fraction of each channel's std.
    pub noise_sigma: f64,
    /// Fraction of the series length replaced by donor windows.
    pub splice_fraction: f64,
    pub splice_count: usize,
    pub rng_seed: u64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            noise_sigma: 0.2,
            splice_fraction: 0.25,
            splice_count: 1,
            rng_seed: 0,
        }
    }
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.noise_sigma.is_nan() || self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(TsError::contract(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if !(0.0..1.0).contains(&self.splice_fraction) {
            return Err(TsError::contract(format!(
                "splice_fraction must lie in [0, 1), got {}",
                self.splice_fraction
            )));
        }
        Ok(())
    }

    /// Length of each spliced window for a series of length `w`.
    pub fn window_length(&self, w: usize) -> usize {
        if self.splice_count == 0 {
            return 0;
        }
        (self.splice_fraction * w as f64 / self.splice_count as f64).round() as usize
    }
}

/// Adds i.i.d. zero-mean Gaussian noise with std `noise_sigma × channel std`.
pub fn inject_gaussian_noise(ts: &TimeSeries, spec: &CorruptionSpec) -> Result<TimeSeries> {
    spec.validate()?;
    if spec.noise_sigma == 0.0 {
        return Ok(ts.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let channels = ts
        .channels()
        .iter()
        .map(|c| {
            let n = c.len() as f64;
            let mean = c.iter().sum::<f64>() / n;
            let std = (c.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
            let sd = spec.noise_sigma * std;
            if sd == 0.0 {
                return c.clone();
            }
            let normal = Normal::new(0.0, sd).expect("finite positive std");
            c.iter().map(|x| x + normal.sample(&mut rng)).collect()
        })
        .collect();
    ts.with_channels(channels)
}

/// Where one spliced window came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpliceRecord {
    pub offset: usize,
    pub length: usize,
    pub donor_index: usize,
    pub donor_id: String,
    pub donor_offset: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplicedSeries {
    pub series: TimeSeries,
    pub records: Vec<SpliceRecord>,
}

/// Replaces `splice_count` non-overlapping windows of `ts` with same-length
/// windows copied from uniformly chosen donors of a different class.
pub fn splice_confusion(ts: &TimeSeries, donors: &Dataset, spec: &CorruptionSpec) -> Result<SplicedSeries> {
    spec.validate()?;
    let w = ts.len();
    let window = spec.window_length(w);
    if window == 0 {
        return Ok(SplicedSeries {
            series: ts.clone(),
            records: Vec::new(),
        });
    }
    if window * spec.splice_count > w {
        return Err(TsError::contract(format!(
            "{} windows of length {window} do not fit in a series of length {w}",
            spec.splice_count
        )));
    }
    let Some(label) = ts.label else {
        return Err(TsError::contract(format!(
            "series {} has no label to splice against",
            ts.id
        )));
    };
    let eligible: Vec<usize> = donors
        .series
        .iter()
        .enumerate()
        .filter(|(_, d)| d.label.is_some_and(|l| l != label) && d.len() >= window && d.dims() == ts.dims())
        .map(|(i, _)| i)
        .collect();
    if eligible.is_empty() {
        return Err(TsError::contract(format!(
            "no donor with a class other than {label} and length >= {window}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let free = w - window * spec.splice_count;
    let mut slots: Vec<usize> = (0..spec.splice_count).map(|_| rng.random_range(0..=free)).collect();
    slots.sort_unstable();

    let mut channels = ts.channels().to_vec();
    let mut records = Vec::with_capacity(slots.len());
    for (k, slot) in slots.into_iter().enumerate() {
        let offset = slot + k * window;
        let donor_index = eligible[rng.random_range(0..eligible.len())];
        let donor = &donors.series[donor_index];
        let donor_offset = rng.random_range(0..=donor.len() - window);
        for (dst, src) in channels.iter_mut().zip(donor.channels()) {
            dst[offset..offset + window].copy_from_slice(&src[donor_offset..donor_offset + window]);
        }
        records.push(SpliceRecord {
            offset,
            length: window,
            donor_index,
            donor_id: donor.id.clone(),
            donor_offset,
        });
    }
    Ok(SplicedSeries {
        series: ts.with_channels(channels)?,
        records,
    })
}

/// Sidecar describing how a corrupted dataset was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionManifest {
    pub source: String,
    pub spec: CorruptionSpec,
    /// Splice provenance per series, in dataset order.
    pub splices: Vec<Vec<SpliceRecord>>,
}

/// Splices then adds noise to every series, with per-series seeds drawn
/// from `spec.rng_seed`. Donors come from the dataset itself.
pub fn corrupt_dataset(ds: &Dataset, spec: &CorruptionSpec) -> Result<(Dataset, CorruptionManifest)> {
    spec.validate()?;
    let mut seeds = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut series = Vec::with_capacity(ds.len());
    let mut splices = Vec::with_capacity(ds.len());
    for ts in &ds.series {
        let splice_spec = CorruptionSpec {
            rng_seed: seeds.next_u64(),
            ..*spec
        };
        let noise_spec = CorruptionSpec {
            rng_seed: seeds.next_u64(),
            ..*spec
        };
        let spliced = splice_confusion(ts, ds, &splice_spec)?;
        series.push(inject_gaussian_noise(&spliced.series, &noise_spec)?);
        splices.push(spliced.records);
    }
    let out = Dataset { series, ..ds.clone() };
    let manifest = CorruptionManifest {
        source: ds.name.clone(),
        spec: *spec,
        splices,
    };
    Ok((out, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class() -> Dataset {
        let series = (0..6)
            .map(|i| {
                let values = (0..100).map(|t| (i * 1000 + t) as f64).collect();
                TimeSeries::univariate(format!("s{i}"), Some(i % 2), values).unwrap()
            })
            .collect();
        Dataset::new("toy", "train", series, vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn zero_parameters_are_identity() {
        let ds = two_class();
        let spec = CorruptionSpec {
            noise_sigma: 0.0,
            splice_fraction: 0.0,
            splice_count: 1,
            rng_seed: 9,
        };
        let ts = &ds.series[0];
        assert_eq!(&inject_gaussian_noise(ts, &spec).unwrap(), ts);
        assert_eq!(&splice_confusion(ts, &ds, &spec).unwrap().series, ts);
        assert_eq!(corrupt_dataset(&ds, &spec).unwrap().0, ds);
    }

    #[test]
    fn single_splice_replaces_exactly_a_quarter() {
        let ds = two_class();
        let spec = CorruptionSpec {
            noise_sigma: 0.0,
            splice_fraction: 0.25,
            splice_count: 1,
            rng_seed: 3,
        };
        let ts = &ds.series[0];
        let out = splice_confusion(ts, &ds, &spec).unwrap();
        let changed: Vec<usize> = (0..100)
            .filter(|&t| out.series.channel(0)[t] != ts.channel(0)[t])
            .collect();
        assert_eq!(changed.len(), 25);
        assert!(changed.windows(2).all(|p| p[1] == p[0] + 1));
        let rec = &out.records[0];
        assert_eq!(rec.offset, changed[0]);
        let donor = &ds.series[rec.donor_index];
        assert_ne!(donor.label, ts.label);
        assert_eq!(
            &out.series.channel(0)[rec.offset..rec.offset + 25],
            &donor.channel(0)[rec.donor_offset..rec.donor_offset + 25]
        );
        assert_eq!(out.series.label, ts.label);
    }

    #[test]
    fn multiple_windows_do_not_overlap() {
        let ds = two_class();
        for seed in 0..50 {
            let spec = CorruptionSpec {
                noise_sigma: 0.0,
                splice_fraction: 0.6,
                splice_count: 3,
                rng_seed: seed,
            };
            let out = splice_confusion(&ds.series[1], &ds, &spec).unwrap();
            for pair in out.records.windows(2) {
                assert!(pair[0].offset + pair[0].length <= pair[1].offset);
            }
            assert!(out.records.last().is_none_or(|r| r.offset + r.length <= 100));
        }
    }

    #[test]
    fn no_other_class_donor_is_an_error() {
        let mut ds = two_class();
        ds.series.retain(|s| s.label == Some(0));
        let spec = CorruptionSpec::default();
        assert!(matches!(
            splice_confusion(&ds.series[0], &ds, &spec),
            Err(TsError::Contract(_))
        ));
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let ds = two_class();
        let bad = CorruptionSpec {
            splice_fraction: 1.0,
            ..CorruptionSpec::default()
        };
        assert!(splice_confusion(&ds.series[0], &ds, &bad).is_err());
        let bad = CorruptionSpec {
            noise_sigma: -0.1,
            ..CorruptionSpec::default()
        };
        assert!(inject_gaussian_noise(&ds.series[0], &bad).is_err());
    }
}
