//! Path scoring: per-output path scores composed from edge coefficients,
//! their variance across outputs, path ranking, and edge/feature
//! importance aggregation.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::Serialize;

use crate::depstats::{Coefficient, LayerCorrelation};
use crate::error::{Error, Result};
use crate::par;

/// Node indices from an input node through every hidden layer. The output
/// node is not part of the base path; each base path branches into one
/// extended path per output.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BasePath {
    pub nodes: Vec<usize>,
}

impl BasePath {
    pub fn input(&self) -> usize {
        self.nodes[0]
    }

    pub fn last_hidden(&self) -> usize {
        *self.nodes.last().unwrap()
    }
}

/// Formats a node as `x_i`, `h{l}_j` or `pred_m`.
pub fn node_name(layer: usize, index: usize, n_layers: usize) -> String {
    if layer == 0 {
        format!("x_{index}")
    } else if layer + 1 == n_layers {
        format!("pred_{index}")
    } else {
        format!("h{}_{index}", layer - 1)
    }
}

impl fmt::Display for BasePath {
    /// `x_2>h0_5>h1_1`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (layer, &i) in self.nodes.iter().enumerate() {
            if layer > 0 {
                f.write_str(">")?;
            }
            // base paths never contain the output layer
            f.write_str(&node_name(layer, i, usize::MAX))?;
        }
        Ok(())
    }
}

/// All base paths for a network, in lexicographic order.
pub fn enumerate_paths(layer_widths: &[usize]) -> Result<Vec<BasePath>> {
    if layer_widths.len() < 3 {
        return Err(Error::Shape(format!(
            "paths need an input and at least one hidden layer before the output, got widths {layer_widths:?}"
        )));
    }
    let widths = &layer_widths[..layer_widths.len() - 1];
    if widths.contains(&0) {
        return Err(Error::Shape(format!(
            "zero-width layer in {layer_widths:?}"
        )));
    }
    let total: usize = widths.iter().product();
    let mut paths = Vec::with_capacity(total);
    let mut current = vec![0usize; widths.len()];
    for _ in 0..total {
        paths.push(BasePath {
            nodes: current.clone(),
        });
        for pos in (0..widths.len()).rev() {
            current[pos] += 1;
            if current[pos] < widths[pos] {
                break;
            }
            current[pos] = 0;
        }
    }
    Ok(paths)
}

/// Turns the edge coefficients along one input-to-output path into a scalar
/// path score.
pub trait PathComposition: Sync {
    fn compose(&self, edge_coefficients: &[f64]) -> f64;
}

/// Serial composition by multiplication.
#[derive(Debug, Clone, Copy, Default)]
pub struct Product;

impl PathComposition for Product {
    fn compose(&self, edge_coefficients: &[f64]) -> f64 {
        edge_coefficients.iter().product()
    }
}

fn edge(mats: &[LayerCorrelation], layer: usize, src: usize, dst: usize) -> Result<Coefficient> {
    let m = mats
        .iter()
        .find(|m| m.source_layer == layer)
        .ok_or_else(|| Error::Shape(format!("no correlation matrix for layer {layer}")))?;
    m.get(src, dst).ok_or_else(|| {
        Error::Shape(format!(
            "correlation matrix {layer} has no entry ({src}, {dst})"
        ))
    })
}

/// Score of the extended path `path + output`, undefined when any edge
/// coefficient is.
pub fn ccc_with(
    composition: &dyn PathComposition,
    path: &BasePath,
    output: usize,
    mats: &[LayerCorrelation],
) -> Result<Coefficient> {
    let mut coeffs = Vec::with_capacity(path.nodes.len());
    let mut undefined = None;
    let nodes = path.nodes.iter().copied().chain(std::iter::once(output));
    let pairs = path.nodes.iter().copied().zip(nodes.skip(1));
    for (layer, (src, dst)) in pairs.enumerate() {
        match edge(mats, layer, src, dst)? {
            Coefficient::Defined(v) => coeffs.push(v),
            Coefficient::Undefined(r) => undefined = Some(r),
        }
    }
    Ok(match undefined {
        Some(r) => Coefficient::Undefined(r),
        None => Coefficient::Defined(composition.compose(&coeffs)),
    })
}

/// [`ccc_with`] using the product composition.
pub fn ccc(path: &BasePath, output: usize, mats: &[LayerCorrelation]) -> Result<Coefficient> {
    ccc_with(&Product, path, output, mats)
}

/// Unbiased sample variance (divisor `n - 1`).
pub fn var_ccc(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::Data(format!(
            "variance needs at least 2 values, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Ok(values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub base_path: BasePath,
    /// One score per output class; `None` where an edge was undefined.
    pub ccc_per_output: Vec<Option<f64>>,
    /// Variance of the scores across outputs; `None` if any score is undefined.
    pub var_ccc: Option<f64>,
}

impl PathRecord {
    pub fn defined(&self) -> bool {
        self.var_ccc.is_some()
    }
}

/// Scores every base path against every output node.
pub fn compute_records(
    layer_widths: &[usize],
    mats: &[LayerCorrelation],
    composition: &dyn PathComposition,
) -> Result<Vec<PathRecord>> {
    let paths = enumerate_paths(layer_widths)?;
    let n_out = *layer_widths.last().unwrap();
    par::map(&paths, |p| {
        let ccc = (0..n_out)
            .map(|m| ccc_with(composition, p, m, mats).map(Coefficient::value))
            .collect::<Result<Vec<_>>>()?;
        let var = match ccc.iter().copied().collect::<Option<Vec<f64>>>() {
            Some(vals) => Some(var_ccc(&vals)?),
            None => None,
        };
        Ok(PathRecord {
            base_path: p.clone(),
            ccc_per_output: ccc,
            var_ccc: var,
        })
    })
    .into_iter()
    .collect()
}

/// Descending variance; ties by base path; undefined records last.
pub fn rank_paths(mut records: Vec<PathRecord>) -> Vec<PathRecord> {
    records.sort_by(|a, b| match (a.var_ccc, b.var_ccc) {
        (Some(x), Some(y)) => y.total_cmp(&x).then_with(|| a.base_path.cmp(&b.base_path)),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.base_path.cmp(&b.base_path),
    });
    records
}

/// Summed path variance per edge, `layers[l][src][dst]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeImportance {
    pub layer_widths: Vec<usize>,
    pub layers: Vec<Vec<Vec<f64>>>,
}

impl EdgeImportance {
    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize, usize), f64)> + '_ {
        self.layers.iter().enumerate().flat_map(|(l, m)| {
            m.iter()
                .enumerate()
                .flat_map(move |(i, row)| row.iter().enumerate().map(move |(j, &v)| ((l, i, j), v)))
        })
    }
}

/// Each edge accumulates the variance of every defined base path through it.
/// Edges into the output layer receive the variance of every base path that
/// ends at their source node, since each base path branches to all outputs.
pub fn edge_importance(layer_widths: &[usize], records: &[PathRecord]) -> EdgeImportance {
    let mut layers: Vec<Vec<Vec<f64>>> = layer_widths
        .windows(2)
        .map(|w| vec![vec![0.0; w[1]]; w[0]])
        .collect();
    let last = layers.len() - 1;
    for r in records {
        let Some(v) = r.var_ccc else { continue };
        for (l, pair) in r.base_path.nodes.windows(2).enumerate() {
            layers[l][pair[0]][pair[1]] += v;
        }
        for e in layers[last][r.base_path.last_hidden()].iter_mut() {
            *e += v;
        }
    }
    EdgeImportance {
        layer_widths: layer_widths.to_vec(),
        layers,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureImportance {
    /// Mean variance over defined base paths starting at each feature.
    pub mean_var_ccc: Vec<f64>,
    /// `mean_var_ccc` normalized to sum to 1.
    pub normalized: Vec<f64>,
    /// Undefined base paths left out of the means.
    pub excluded_paths: usize,
    /// Features with no defined base path at all (their mean is taken as 0).
    pub features_without_paths: Vec<usize>,
}

/// Expected path variance per input feature, normalized across features.
pub fn feature_importance(n_features: usize, records: &[PathRecord]) -> Result<FeatureImportance> {
    let mut sums = vec![0.0; n_features];
    let mut counts = vec![0usize; n_features];
    let mut excluded = 0;
    for r in records {
        let i = r.base_path.input();
        if i >= n_features {
            return Err(Error::Shape(format!("path starts at unknown feature {i}")));
        }
        match r.var_ccc {
            Some(v) => {
                sums[i] += v;
                counts[i] += 1;
            }
            None => excluded += 1,
        }
    }
    let mean: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let total: f64 = mean.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::Numeric(
            "all path variances are zero or undefined; feature importance is undefined".into(),
        ));
    }
    Ok(FeatureImportance {
        normalized: mean.iter().map(|m| m / total).collect(),
        mean_var_ccc: mean,
        excluded_paths: excluded,
        features_without_paths: (0..n_features).filter(|&i| counts[i] == 0).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceReport {
    pub ranked: Vec<PathRecord>,
    pub edges: EdgeImportance,
    pub features: FeatureImportance,
    pub warnings: Vec<String>,
    /// Free-form provenance (seeds, bins, correlation kind, ...).
    pub metadata: BTreeMap<String, String>,
}

/// Runs scoring, ranking and aggregation end to end.
pub fn build_report(
    layer_widths: &[usize],
    mats: &[LayerCorrelation],
    composition: &dyn PathComposition,
) -> Result<ImportanceReport> {
    let records = compute_records(layer_widths, mats, composition)?;
    let ranked = rank_paths(records);
    let edges = edge_importance(layer_widths, &ranked);
    let features = feature_importance(layer_widths[0], &ranked)?;
    let mut warnings = Vec::new();
    let undefined_edges: usize = mats.iter().map(LayerCorrelation::undefined_count).sum();
    if undefined_edges > 0 {
        warnings.push(format!(
            "{undefined_edges} correlation(s) undefined (constant margin); {} of {} base path(s) excluded",
            features.excluded_paths,
            ranked.len()
        ));
    }
    if !features.features_without_paths.is_empty() {
        warnings.push(format!(
            "feature(s) {:?} have no defined path; importance set to 0",
            features.features_without_paths
        ));
    }
    Ok(ImportanceReport {
        ranked,
        edges,
        features,
        warnings,
        metadata: BTreeMap::new(),
    })
}

/// `rank,path,ccc_<class>...,var_ccc,defined`; undefined values are empty.
pub fn write_ranking_csv<W: Write>(
    out: W,
    ranked: &[PathRecord],
    class_names: &[String],
) -> Result<()> {
    let err = |e: csv::Error| Error::Data(format!("writing ranking csv: {e}"));
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["rank".to_string(), "path".to_string()];
    header.extend(class_names.iter().map(|c| format!("ccc_{c}")));
    header.extend(["var_ccc".to_string(), "defined".to_string()]);
    w.write_record(&header).map_err(err)?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (k, r) in ranked.iter().enumerate() {
        if r.ccc_per_output.len() != class_names.len() {
            return Err(Error::Shape(format!(
                "{} output score(s) for {} class name(s)",
                r.ccc_per_output.len(),
                class_names.len()
            )));
        }
        let mut row = vec![(k + 1).to_string(), r.base_path.to_string()];
        row.extend(r.ccc_per_output.iter().map(|&c| fmt(c)));
        row.push(fmt(r.var_ccc));
        row.push(r.defined().to_string());
        w.write_record(&row).map_err(err)?;
    }
    w.flush()
        .map_err(|e| Error::Data(format!("writing ranking csv: {e}")))?;
    Ok(())
}
