//! Labeled CSV datasets and the train / unlabeled / test split.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub features: Vec<String>,
    pub label: String,
    #[serde(default)]
    pub group: Option<String>,
}

/// Labels and groups are re-indexed to `0..K` and `0..S`; `label_names` and
/// `group_names` keep the original values in index order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub label_names: Vec<String>,
    pub groups: Option<Vec<usize>>,
    pub group_names: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn num_groups(&self) -> usize {
        self.group_names.len()
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::MissingColumn(name.to_owned()))
}

/// Categories sorted numerically when all parse as numbers, else lexically.
fn categories(values: &[String]) -> Vec<String> {
    let set: BTreeSet<&String> = values.iter().collect();
    let mut v: Vec<String> = set.into_iter().cloned().collect();
    if v.iter().all(|s| s.parse::<f64>().is_ok()) {
        v.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    }
    v
}

fn encode(values: &[String], names: &[String]) -> Vec<usize> {
    values.iter().map(|v| names.iter().position(|n| n == v).expect("value drawn from names")).collect()
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    if schema.features.is_empty() {
        return Err(invalid("features", "at least one feature column is required"));
    }
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(Error::EmptyFile);
    }
    let fcols = schema.features.iter().map(|f| column(&headers, f)).collect::<Result<Vec<_>>>()?;
    let lcol = column(&headers, &schema.label)?;
    let gcol = schema.group.as_deref().map(|g| column(&headers, g)).transpose()?;

    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    let mut raw_groups = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let x = fcols
            .iter()
            .zip(&schema.features)
            .map(|(&c, name)| {
                let v = rec[c].trim();
                match v.parse::<f64>() {
                    Ok(f) if f.is_finite() => Ok(f),
                    _ => Err(Error::NonNumeric { row, column: name.clone(), value: v.to_owned() }),
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        features.push(x);
        raw_labels.push(rec[lcol].trim().to_owned());
        if let Some(g) = gcol {
            raw_groups.push(rec[g].trim().to_owned());
        }
    }
    if features.is_empty() {
        return Err(Error::EmptyFile);
    }
    let label_names = categories(&raw_labels);
    let labels = encode(&raw_labels, &label_names);
    let (groups, group_names) = match gcol {
        Some(_) => {
            let names = categories(&raw_groups);
            (Some(encode(&raw_groups, &names)), names)
        }
        None => (None, Vec::new()),
    };
    Ok(Dataset { features, labels, label_names, groups, group_names })
}

/// Row indices of the three parts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub test: Vec<usize>,
}

pub const DEFAULT_PROPORTIONS: [f64; 3] = [0.4, 0.4, 0.2];

/// Shuffle `0..n` with `seed` and cut it by `proportions` (train and
/// unlabeled sizes are rounded, the test part takes the rest).
pub fn split(n: usize, proportions: [f64; 3], seed: u64) -> Result<Split> {
    if proportions.iter().any(|p| !(*p >= 0.0)) || (proportions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(invalid("split", format!("proportions {proportions:?} must be nonnegative and sum to 1")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let a = ((n as f64) * proportions[0]).round() as usize;
    let b = (((n as f64) * proportions[1]).round() as usize).min(n - a);
    let test = idx.split_off(a + b);
    let unlabeled = idx.split_off(a);
    Ok(Split { train: idx, unlabeled, test })
}
