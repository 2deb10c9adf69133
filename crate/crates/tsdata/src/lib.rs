//! Time-series data model and the dataset plumbing around it: UCR/UEA file
//! formats, z-normalization, segmentation, resampling, corruption (noise and
//! cross-class splicing) and dataset combination.

mod combine;
mod corrupt;
mod error;
mod io;
mod series;
mod synth;
mod transform;

pub use combine::{combine_datasets, LabelMap};
pub use corrupt::{
    corrupt_dataset, inject_gaussian_noise, splice_confusion, CorruptionManifest, CorruptionSpec, SpliceRecord,
    SplicedSeries,
};
pub use error::TsError;
pub use io::{load_dataset, parse_dataset, render_dataset, save_dataset, Format};
pub use series::{Dataset, Segment, TimeSeries};
pub use synth::{synthetic_dataset, Waveform};
pub use transform::{near_equal_bounds, resample_length, segment_series, znormalize};

pub type Result<T, E = TsError> = std::result::Result<T, E>;
