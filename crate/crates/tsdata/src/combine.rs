use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::io::sort_class_names;
use crate::transform::resample_length;
use crate::{Dataset, Result, TsError};

/// Maps each source dataset's original label strings onto shared class names.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub a: BTreeMap<String, String>,
    pub b: BTreeMap<String, String>,
}

impl LabelMap {
    pub fn identity(ds: &Dataset) -> Self {
        let m: BTreeMap<String, String> = ds.class_names.iter().map(|c| (c.clone(), c.clone())).collect();
        Self { a: m.clone(), b: m }
    }
}

/// Pools two univariate datasets, resamples every series to `target_length`
/// and shuffles the union deterministically by `seed`.
pub fn combine_datasets(
    a: &Dataset,
    b: &Dataset,
    mapping: &LabelMap,
    target_length: usize,
    seed: u64,
) -> Result<Dataset> {
    for (ds, map, side) in [(a, &mapping.a, "a"), (b, &mapping.b, "b")] {
        if ds.dims().is_some_and(|m| m != 1) {
            return Err(TsError::contract(format!("dataset {} is not univariate", ds.name)));
        }
        if let Some(missing) = ds.class_names.iter().find(|c| !map.contains_key(*c)) {
            return Err(TsError::contract(format!(
                "label mapping for side {side} ({}) has no entry for class {missing:?}",
                ds.name
            )));
        }
    }
    let class_names = sort_class_names(mapping.a.values().chain(mapping.b.values()).cloned().collect());

    let mut pooled = Vec::with_capacity(a.len() + b.len());
    for (ds, map) in [(a, &mapping.a), (b, &mapping.b)] {
        for ts in &ds.series {
            let mut out = resample_length(ts, target_length)?;
            out.label = match ts.label {
                Some(l) => {
                    let target = &map[&ds.class_names[l]];
                    class_names.iter().position(|c| c == target)
                }
                None => None,
            };
            out.source = format!("{}:{}", ds.name, ts.id);
            pooled.push(out);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pooled.shuffle(&mut rng);

    let split = if a.split == b.split {
        a.split.clone()
    } else {
        format!("{}+{}", a.split, b.split)
    };
    let mut out = Dataset::new(format!("{}+{}", a.name, b.name), split, pooled, class_names)?;
    out.delimiter = a.delimiter;
    Ok(out)
}
