//! Tabular classification data: CSV ingestion, label encoding and
//! stratified train/test splitting.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Feature matrix with dense integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTable {
    /// Row-major, `n_samples × n_features`.
    pub features: Vec<Vec<f64>>,
    pub feature_names: Vec<String>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl LabeledTable {
    /// Builds a table and checks its invariants.
    pub fn new(
        features: Vec<Vec<f64>>,
        feature_names: Vec<String>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let table = Self {
            features,
            feature_names,
            labels,
            class_names,
        };
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Data("table has no samples".into()));
        }
        if self.labels.len() != self.features.len() {
            return Err(Error::Data(format!(
                "{} label(s) for {} sample(s)",
                self.labels.len(),
                self.features.len()
            )));
        }
        let arity = self.feature_names.len();
        for (i, row) in self.features.iter().enumerate() {
            if row.len() != arity {
                return Err(Error::Data(format!(
                    "sample {i} has {} feature(s), expected {arity}",
                    row.len()
                )));
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "sample {i}, feature {j} is not finite"
                )));
            }
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.class_names.len()) {
            return Err(Error::Data(format!(
                "label id {bad} out of range for {} class(es)",
                self.class_names.len()
            )));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.features.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// One-hot row for sample `i`.
    pub fn one_hot(&self, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n_classes()];
        v[self.labels[i]] = 1.0;
        v
    }

    /// Column `j` as an owned vector.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.features.iter().map(|r| r[j]).collect()
    }

    /// Sub-table of the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> LabeledTable {
        LabeledTable {
            features: rows.iter().map(|&i| self.features[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }
}

/// Reads a headered CSV. Every column other than `label_column` is a real
/// feature; labels get dense ids in order of first appearance.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<LabeledTable> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Data(format!("{}: {other:?}", path.display())),
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: bad header: {e}", path.display())))?
        .clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Parse {
            path: path.into(),
            row: 1,
            column: label_column.to_string(),
            message: "label column not found in header".into(),
        })?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut class_names: Vec<String> = Vec::new();
    let mut class_ids: HashMap<String, usize> = HashMap::new();

    for (k, record) in reader.records().enumerate() {
        // header is line 1
        let line = k + 2;
        let record = record.map_err(|e| Error::Parse {
            path: path.into(),
            row: line,
            column: String::new(),
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                path: path.into(),
                row: line,
                column: String::new(),
                message: format!("{} field(s), header has {}", record.len(), headers.len()),
            });
        }
        let mut row = Vec::with_capacity(feature_names.len());
        for (i, cell) in record.iter().enumerate() {
            if i == label_idx {
                continue;
            }
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.into(),
                row: line,
                column: headers[i].to_string(),
                message: format!("cannot parse {cell:?} as a real number"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    path: path.into(),
                    row: line,
                    column: headers[i].to_string(),
                    message: format!("non-finite value {cell:?}"),
                });
            }
            row.push(value);
        }
        let label = &record[label_idx];
        let id = *class_ids.entry(label.to_string()).or_insert_with(|| {
            class_names.push(label.to_string());
            class_names.len() - 1
        });
        features.push(row);
        labels.push(id);
    }

    LabeledTable::new(features, feature_names, labels, class_names)
}

/// Per-feature min-max scaling fitted on one table and applied to others.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxScaler {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(table: &LabeledTable) -> Self {
        let n = table.n_features();
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for row in &table.features {
            for (j, &v) in row.iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        Self { lo, hi }
    }

    /// Maps the fitted range onto [0, 1]; constant features map to 0.
    /// Values outside the fitted range land outside [0, 1].
    pub fn transform(&self, table: &LabeledTable) -> Result<LabeledTable> {
        if table.n_features() != self.lo.len() {
            return Err(Error::Shape(format!(
                "scaler fitted on {} feature(s), table has {}",
                self.lo.len(),
                table.n_features()
            )));
        }
        let mut out = table.clone();
        for row in &mut out.features {
            for (j, v) in row.iter_mut().enumerate() {
                let span = self.hi[j] - self.lo[j];
                *v = if span > 0.0 {
                    (*v - self.lo[j]) / span
                } else {
                    0.0
                };
            }
        }
        Ok(out)
    }
}

/// Train fraction and shuffle seed for [`split`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 7,
        }
    }
}

/// Stratified, seeded split into (train, test) row indices, each sorted
/// ascending. The train side has `round(train_fraction * n)` rows; the
/// per-class quotas are allocated by largest remainder.
pub fn split_indices(table: &LabeledTable, spec: SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction {} must lie in (0, 1)",
            spec.train_fraction
        )));
    }
    let n = table.n_samples();
    let n_train = (spec.train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::Data(format!(
            "split of {n} sample(s) at fraction {} leaves an empty side",
            spec.train_fraction
        )));
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); table.n_classes()];
    for (i, &l) in table.labels.iter().enumerate() {
        by_class[l].push(i);
    }

    let exact: Vec<f64> = by_class
        .iter()
        .map(|c| spec.train_fraction * c.len() as f64)
        .collect();
    let mut quota: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut short = n_train - quota.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..by_class.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &c in order.iter().cycle().take(order.len() * 2) {
        if short == 0 {
            break;
        }
        if quota[c] < by_class[c].len() {
            quota[c] += 1;
            short -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(n - n_train);
    for (members, &q) in by_class.iter_mut().zip(&quota) {
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..q]);
        test.extend_from_slice(&members[q..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Stratified, seeded (train, test) split.
pub fn split(table: &LabeledTable, spec: SplitSpec) -> Result<(LabeledTable, LabeledTable)> {
    let (train, test) = split_indices(table, spec)?;
    Ok((table.select(&train), table.select(&test)))
}
