use std::f64::consts::TAU;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{Dataset, Result, TimeSeries, TsError};

/// Cycles per series in generated data.
const CYCLES: f64 = 4.0;
const NOISE_STD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Waveform {
    Sine,
    Square,
    Sawtooth,
}

impl FromStr for Waveform {
    type Err = TsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sine" => Ok(Self::Sine),
            "square" => Ok(Self::Square),
            "sawtooth" => Ok(Self::Sawtooth),
            other => Err(TsError::contract(format!("unknown waveform {other:?}"))),
        }
    }
}

impl Waveform {
    /// Unit-amplitude value at `phase` cycles.
    fn at(self, phase: f64) -> f64 {
        let frac = phase.rem_euclid(1.0);
        match self {
            Self::Sine => (TAU * frac).sin(),
            Self::Square => {
                if frac < 0.5 {
                    1.0
                } else {
                    -1.0
                }
            }
            Self::Sawtooth => 2.0 * frac - 1.0,
        }
    }
}

/// `n` labeled series of length `length`; series `i` has class `i % C`, a
/// uniformly random phase and Gaussian observation noise of std 0.1.
/// Class names are the class indices as strings.
pub fn synthetic_dataset(classes: &[Waveform], n: usize, length: usize, seed: u64) -> Result<Dataset> {
    if classes.is_empty() || length == 0 {
        return Err(TsError::contract(
            "synthetic data needs at least one class and a positive length",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, NOISE_STD).expect("valid std");
    let series = (0..n)
        .map(|i| {
            let class = i % classes.len();
            let phase: f64 = rng.random();
            let values = (0..length)
                .map(|t| {
                    let cycles = CYCLES * t as f64 / length as f64 + phase;
                    classes[class].at(cycles) + noise.sample(&mut rng)
                })
                .collect();
            TimeSeries::new(format!("synth-{i}"), Some(class), format!("synth:{seed}"), vec![values])
        })
        .collect::<Result<Vec<_>>>()?;
    let names = (0..classes.len()).map(|c| c.to_string()).collect();
    Dataset::new("synthetic", "all", series, names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_deterministic() {
        let classes = [Waveform::Sine, Waveform::Square, Waveform::Sawtooth];
        let a = synthetic_dataset(&classes, 30, 128, 5).unwrap();
        assert_eq!(a.class_histogram(), vec![10, 10, 10]);
        assert_eq!(a.series_length(), Some(128));
        assert_eq!(a, synthetic_dataset(&classes, 30, 128, 5).unwrap());
        assert_ne!(a, synthetic_dataset(&classes, 30, 128, 6).unwrap());
    }

    #[test]
    fn waveforms_are_unit_amplitude() {
        for w in [Waveform::Sine, Waveform::Square, Waveform::Sawtooth] {
            for k in 0..100 {
                assert!(w.at(k as f64 / 37.0).abs() <= 1.0);
            }
        }
        assert!("triangle".parse::<Waveform>().is_err());
    }
}
