use serde::{Deserialize, Serialize};

use crate::{Result, TsError};

/// A labeled series of `w` timestamps over `m` variables, stored channel-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub id: String,
    pub label: Option<usize>,
    /// Provenance tag (source file, generator, or parent dataset).
    pub source: String,
    channels: Vec<Vec<f64>>,
}

impl TimeSeries {
    pub fn new(
        id: impl Into<String>,
        label: Option<usize>,
        source: impl Into<String>,
        channels: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let Some(first) = channels.first() else {
            return Err(TsError::Structure("series needs at least one channel".into()));
        };
        let w = first.len();
        if w == 0 {
            return Err(TsError::Structure("series needs at least one timestamp".into()));
        }
        if channels.iter().any(|c| c.len() != w) {
            return Err(TsError::Structure("channels of one series differ in length".into()));
        }
        Ok(Self {
            id: id.into(),
            label,
            source: source.into(),
            channels,
        })
    }

    pub fn univariate(id: impl Into<String>, label: Option<usize>, values: Vec<f64>) -> Result<Self> {
        Self::new(id, label, "", vec![values])
    }

    /// Number of timestamps `w`.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of variables `m`.
    pub fn dims(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn with_channels(&self, channels: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(self.id.clone(), self.label, self.source.clone(), channels)
    }

    /// Row-major `w×m` copy of the values.
    pub fn to_row_major(&self) -> Vec<f64> {
        let (w, m) = (self.len(), self.dims());
        let mut out = Vec::with_capacity(w * m);
        for t in 0..w {
            for c in 0..m {
                out.push(self.channels[c][t]);
            }
        }
        out
    }

    pub fn segment(&self, start: usize, len: usize) -> Result<Segment> {
        if len == 0 || start + len > self.len() {
            return Err(TsError::contract(format!(
                "segment {start}+{len} outside series of length {}",
                self.len()
            )));
        }
        Ok(Segment {
            parent_id: self.id.clone(),
            start,
            channels: self.channels.iter().map(|c| c[start..start + len].to_vec()).collect(),
        })
    }
}

/// A contiguous window `[start, start + len)` of a parent series.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub parent_id: String,
    pub start: usize,
    channels: Vec<Vec<f64>>,
}

impl Segment {
    /// Builds a free-standing segment, mostly for tests and tooling.
    pub fn from_channels(parent_id: impl Into<String>, start: usize, channels: Vec<Vec<f64>>) -> Result<Self> {
        let ts = TimeSeries::new(parent_id, None, "", channels)?;
        Ok(Self {
            parent_id: ts.id,
            start,
            channels: ts.channels,
        })
    }

    /// Segment length `j`.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dims(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    /// Row-major `j×m` copy of the values.
    pub fn to_row_major(&self) -> Vec<f64> {
        let (j, m) = (self.len(), self.dims());
        let mut out = Vec::with_capacity(j * m);
        for t in 0..j {
            for c in 0..m {
                out.push(self.channels[c][t]);
            }
        }
        out
    }
}

/// One split of a classification dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub split: String,
    pub series: Vec<TimeSeries>,
    /// Original label strings; class index `k` is `class_names[k]`.
    pub class_names: Vec<String>,
    /// Field delimiter to use when written back as ucr-csv.
    pub delimiter: char,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        split: impl Into<String>,
        series: Vec<TimeSeries>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            split: split.into(),
            series,
            class_names,
            delimiter: ',',
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(first) = self.series.first() {
            let m = first.dims();
            if let Some(bad) = self.series.iter().find(|s| s.dims() != m) {
                return Err(TsError::Structure(format!(
                    "series {} has {} dimensions, expected {m}",
                    bad.id,
                    bad.dims()
                )));
            }
        }
        let c = self.class_count();
        if let Some(bad) = self.series.iter().find(|s| s.label.is_some_and(|l| l >= c)) {
            return Err(TsError::Structure(format!(
                "series {} has label {:?} outside {c} classes",
                bad.id, bad.label
            )));
        }
        Ok(())
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn dims(&self) -> Option<usize> {
        self.series.first().map(TimeSeries::dims)
    }

    /// Common series length, if every series has the same one.
    pub fn series_length(&self) -> Option<usize> {
        let w = self.series.first()?.len();
        self.series.iter().all(|s| s.len() == w).then_some(w)
    }

    pub fn labels(&self) -> Option<Vec<usize>> {
        self.series.iter().map(|s| s.label).collect()
    }

    /// Per-class series counts.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count()];
        for l in self.series.iter().filter_map(|s| s.label) {
            h[l] += 1;
        }
        h
    }
}
