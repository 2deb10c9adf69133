//! ucr-csv and sktime-ts readers and writers.
//!
//! ucr-csv holds one univariate series per line: the class label followed by
//! the values, separated by commas or tabs. sktime-ts support covers the
//! `@problemName`, `@univariate`, `@classLabel` and `@data` headers; each data
//! line lists the dimensions separated by `:` with the label last.
//!
//! Missing values (`?`, `NaN`, or empty fields) are filled by linear
//! interpolation inside the series and by the nearest observed value at the
//! ends.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::{Dataset, Result, TimeSeries, TsError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    UcrCsv,
    SktimeTs,
}

impl FromStr for Format {
    type Err = TsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ucr-csv" | "ucr" | "csv" => Ok(Self::UcrCsv),
            "sktime-ts" | "ts" => Ok(Self::SktimeTs),
            other => Err(TsError::contract(format!(
                "unknown format {other:?}, expected ucr-csv or sktime-ts"
            ))),
        }
    }
}

impl Format {
    pub fn name(self) -> &'static str {
        match self {
            Self::UcrCsv => "ucr-csv",
            Self::SktimeTs => "sktime-ts",
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>, format: Format) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| TsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    let (name, split) = split_stem(stem);
    let mut ds = parse_dataset(&text, format, &name)?;
    ds.split = split;
    for ts in &mut ds.series {
        ts.source = path.display().to_string();
    }
    Ok(ds)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>, format: Format) -> Result<()> {
    let path = path.as_ref();
    let text = render_dataset(ds, format)?;
    std::fs::write(path, text).map_err(|source| TsError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `ECG200_TRAIN` → (`ECG200`, `train`).
fn split_stem(stem: &str) -> (String, String) {
    for (suffix, split) in [
        ("_TRAIN", "train"),
        ("_TEST", "test"),
        ("_train", "train"),
        ("_test", "test"),
    ] {
        if let Some(name) = stem.strip_suffix(suffix) {
            return (name.to_string(), split.to_string());
        }
    }
    (stem.to_string(), "all".to_string())
}

pub fn parse_dataset(text: &str, format: Format, name: &str) -> Result<Dataset> {
    match format {
        Format::UcrCsv => parse_ucr(text, name),
        Format::SktimeTs => parse_ts(text, name),
    }
}

pub fn render_dataset(ds: &Dataset, format: Format) -> Result<String> {
    match format {
        Format::UcrCsv => render_ucr(ds),
        Format::SktimeTs => render_ts(ds),
    }
}

fn parse_value(field: &str, line: usize) -> Result<f64> {
    match field {
        "" | "?" | "NaN" | "nan" | "NA" => Ok(f64::NAN),
        f => {
            let v: f64 = f
                .parse()
                .map_err(|_| TsError::parse(line, format!("not a number: {f:?}")))?;
            if v.is_infinite() {
                return Err(TsError::parse(line, format!("infinite value {f:?}")));
            }
            Ok(v)
        }
    }
}

/// Resolves NaN markers in place.
pub(crate) fn fill_missing(values: &mut [f64]) -> std::result::Result<(), &'static str> {
    let observed: Vec<usize> = (0..values.len()).filter(|&i| !values[i].is_nan()).collect();
    let (Some(&first), Some(&last)) = (observed.first(), observed.last()) else {
        return Err("channel has no observed values");
    };
    if observed.len() == values.len() {
        return Ok(());
    }
    let (head, tail) = (values[first], values[last]);
    values[..first].iter_mut().for_each(|v| *v = head);
    values[last + 1..].iter_mut().for_each(|v| *v = tail);
    for pair in observed.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (va, vb) = (values[a], values[b]);
        for (i, v) in values.iter_mut().enumerate().take(b).skip(a + 1) {
            let frac = (i - a) as f64 / (b - a) as f64;
            *v = va + frac * (vb - va);
        }
    }
    Ok(())
}

/// Numeric order when every label parses as a number, lexicographic otherwise.
pub(crate) fn sort_class_names(mut names: Vec<String>) -> Vec<String> {
    names.sort();
    names.dedup();
    let numeric: Option<Vec<f64>> = names.iter().map(|n| n.parse::<f64>().ok()).collect();
    if let Some(values) = numeric {
        let mut paired: Vec<(f64, String)> = values.into_iter().zip(names).collect();
        paired.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        return paired.into_iter().map(|(_, n)| n).collect();
    }
    names
}

fn index_of(names: &[String], label: &str) -> Option<usize> {
    names.iter().position(|n| n == label)
}

fn parse_ucr(text: &str, name: &str) -> Result<Dataset> {
    let mut rows: Vec<(usize, String, Vec<f64>)> = Vec::new();
    let mut delimiter = None;
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let delim = if trimmed.contains('\t') { '\t' } else { ',' };
        delimiter.get_or_insert(delim);
        let mut fields = trimmed.split(delim).map(str::trim);
        let label = fields.next().unwrap_or_default();
        if label.is_empty() {
            return Err(TsError::parse(line, "missing class label"));
        }
        let mut values = fields.map(|f| parse_value(f, line)).collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(TsError::parse(line, "series has no values"));
        }
        fill_missing(&mut values).map_err(|m| TsError::parse(line, m))?;
        rows.push((line, label.to_string(), values));
    }
    let class_names = sort_class_names(rows.iter().map(|r| r.1.clone()).collect());
    let series = rows
        .into_iter()
        .enumerate()
        .map(|(i, (_, label, values))| {
            let idx = index_of(&class_names, &label);
            TimeSeries::new(format!("{name}-{i}"), idx, "", vec![values])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ds = Dataset::new(name, "all", series, class_names)?;
    ds.delimiter = delimiter.unwrap_or(',');
    Ok(ds)
}

fn render_ucr(ds: &Dataset) -> Result<String> {
    let mut out = String::new();
    let delim = ds.delimiter;
    for ts in &ds.series {
        if ts.dims() != 1 {
            return Err(TsError::Structure(format!(
                "ucr-csv holds univariate series only; {} has {} dimensions",
                ts.id,
                ts.dims()
            )));
        }
        let label = ts
            .label
            .and_then(|l| ds.class_names.get(l))
            .ok_or_else(|| TsError::Structure(format!("series {} has no class label", ts.id)))?;
        out.push_str(label);
        for v in ts.channel(0) {
            let _ = write!(out, "{delim}{v}");
        }
        out.push('\n');
    }
    Ok(out)
}

fn parse_bool(value: Option<&str>, line: usize) -> Result<bool> {
    match value.map(str::to_ascii_lowercase).as_deref() {
        Some("true") => Ok(true),
        Some("false") => Ok(false),
        other => Err(TsError::parse(line, format!("expected true or false, got {other:?}"))),
    }
}

fn parse_ts(text: &str, fallback_name: &str) -> Result<Dataset> {
    let mut name = fallback_name.to_string();
    let mut univariate: Option<bool> = None;
    let mut class_labels: Option<Vec<String>> = None;
    let mut in_data = false;
    let mut rows: Vec<(usize, Option<String>, Vec<Vec<f64>>)> = Vec::new();

    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if !in_data {
            let Some(header) = trimmed.strip_prefix('@') else {
                return Err(TsError::parse(line, "data before @data"));
            };
            let mut words = header.split_whitespace();
            let tag = words.next().unwrap_or_default().to_ascii_lowercase();
            match tag.as_str() {
                "problemname" => name = words.collect::<Vec<_>>().join(" "),
                "univariate" => univariate = Some(parse_bool(words.next(), line)?),
                "classlabel" => {
                    if parse_bool(words.next(), line)? {
                        let labels: Vec<String> = words.map(str::to_string).collect();
                        if labels.is_empty() {
                            return Err(TsError::parse(line, "@classLabel true lists no classes"));
                        }
                        class_labels = Some(labels);
                    }
                }
                "timestamps" => {
                    if parse_bool(words.next(), line)? {
                        return Err(TsError::parse(line, "timestamped series are not supported"));
                    }
                }
                "data" => in_data = true,
                _ => {}
            }
            continue;
        }
        let mut parts: Vec<&str> = trimmed.split(':').collect();
        let label = if class_labels.is_some() {
            let l = parts.pop().map(str::trim).unwrap_or_default();
            if parts.is_empty() {
                return Err(TsError::parse(line, "line has a label but no values"));
            }
            Some(l.to_string())
        } else {
            None
        };
        let mut channels = Vec::with_capacity(parts.len());
        for part in parts {
            let mut values = part
                .split(',')
                .map(|f| parse_value(f.trim(), line))
                .collect::<Result<Vec<f64>>>()?;
            fill_missing(&mut values).map_err(|m| TsError::parse(line, m))?;
            channels.push(values);
        }
        rows.push((line, label, channels));
    }
    if !in_data {
        return Err(TsError::parse(text.lines().count().max(1), "missing @data section"));
    }

    if let Some(first) = rows.first() {
        let m = first.2.len();
        if let Some(bad) = rows.iter().find(|r| r.2.len() != m) {
            return Err(TsError::Structure(format!(
                "line {} has {} dimensions, expected {m}",
                bad.0,
                bad.2.len()
            )));
        }
        if univariate == Some(true) && m != 1 {
            return Err(TsError::Structure(format!(
                "@univariate true but series have {m} dimensions"
            )));
        }
    }

    let class_names = class_labels.map(sort_class_names).unwrap_or_default();
    let mut series = Vec::with_capacity(rows.len());
    for (i, (line, label, channels)) in rows.into_iter().enumerate() {
        let idx = match label {
            Some(l) => Some(
                index_of(&class_names, &l)
                    .ok_or_else(|| TsError::parse(line, format!("label {l:?} not declared in @classLabel")))?,
            ),
            None => None,
        };
        let ts = TimeSeries::new(format!("{name}-{i}"), idx, "", channels)
            .map_err(|e| TsError::parse(line, e.to_string()))?;
        series.push(ts);
    }
    Dataset::new(name, "all", series, class_names)
}

fn render_ts(ds: &Dataset) -> Result<String> {
    let mut out = String::new();
    let univariate = ds.dims().unwrap_or(1) == 1;
    let labeled = !ds.class_names.is_empty();
    let _ = writeln!(out, "@problemName {}", ds.name);
    let _ = writeln!(out, "@univariate {univariate}");
    if labeled {
        let _ = writeln!(out, "@classLabel true {}", ds.class_names.join(" "));
    } else {
        out.push_str("@classLabel false\n");
    }
    out.push_str("@data\n");
    for ts in &ds.series {
        let dims: Vec<String> = ts
            .channels()
            .iter()
            .map(|c| c.iter().map(f64::to_string).collect::<Vec<_>>().join(","))
            .collect();
        out.push_str(&dims.join(":"));
        if labeled {
            let label = ts
                .label
                .and_then(|l| ds.class_names.get(l))
                .ok_or_else(|| TsError::Structure(format!("series {} has no class label", ts.id)))?;
            let _ = write!(out, ":{label}");
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ucr_line_maps_label_and_values() {
        let ds = parse_dataset("1,0.5,0.3,0.1\n", Format::UcrCsv, "mini").unwrap();
        assert_eq!(ds.class_names, vec!["1".to_string()]);
        assert_eq!(ds.series[0].label, Some(0));
        assert_eq!(ds.series[0].channel(0), &[0.5, 0.3, 0.1]);
    }

    #[test]
    fn labels_remap_in_numeric_order() {
        let ds = parse_dataset("10,1\n-1,2\n2,3\n", Format::UcrCsv, "x").unwrap();
        assert_eq!(ds.class_names, vec!["-1", "2", "10"]);
        let labels: Vec<_> = ds.series.iter().map(|s| s.label.unwrap()).collect();
        assert_eq!(labels, vec![2, 0, 1]);
    }

    #[test]
    fn tab_delimited_ucr_is_accepted() {
        let ds = parse_dataset("a\t1\t2\nb\t3\t4\n", Format::UcrCsv, "x").unwrap();
        assert_eq!(ds.delimiter, '\t');
        assert_eq!(ds.series[1].channel(0), &[3.0, 4.0]);
        assert_eq!(render_dataset(&ds, Format::UcrCsv).unwrap(), "a\t1\t2\nb\t3\t4\n");
    }

    #[test]
    fn malformed_value_reports_line_number() {
        let err = parse_dataset("1,0.5\n\n2,abc\n", Format::UcrCsv, "x").unwrap_err();
        match err {
            TsError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_values_are_interpolated() {
        let ds = parse_dataset("1,?,1,?,?,4,NaN\n", Format::UcrCsv, "x").unwrap();
        assert_eq!(ds.series[0].channel(0), &[1.0, 1.0, 2.0, 3.0, 4.0, 4.0]);
        assert!(parse_dataset("1,?,?\n", Format::UcrCsv, "x").is_err());
    }

    #[test]
    fn ts_multivariate_parses() {
        let text = "@problemName Demo\n@univariate false\n@classLabel true a b\n@data\n1,2,3:4,5,6:b\n0,0,1:1,1,0:a\n";
        let ds = parse_dataset(text, Format::SktimeTs, "x").unwrap();
        assert_eq!(ds.name, "Demo");
        assert_eq!(ds.dims(), Some(2));
        assert_eq!(ds.series[0].label, Some(1));
        assert_eq!(ds.series[0].channel(1), &[4.0, 5.0, 6.0]);
        assert_eq!(render_dataset(&ds, Format::SktimeTs).unwrap(), text);
    }

    #[test]
    fn ts_inconsistent_dimensions_is_structural() {
        let text = "@classLabel true a\n@data\n1,2:3,4:a\n1,2:a\n";
        assert!(matches!(
            parse_dataset(text, Format::SktimeTs, "x"),
            Err(TsError::Structure(_))
        ));
    }

    #[test]
    fn ts_undeclared_label_is_a_parse_error() {
        let text = "@classLabel true a\n@data\n1,2:z\n";
        assert!(matches!(
            parse_dataset(text, Format::SktimeTs, "x"),
            Err(TsError::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn stem_split_names() {
        assert_eq!(split_stem("ECG200_TRAIN"), ("ECG200".into(), "train".into()));
        assert_eq!(split_stem("foo"), ("foo".into(), "all".into()));
    }
}
