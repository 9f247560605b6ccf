//! Marginal CDFs, pseudo-observations and dependence coefficients between
//! adjacent layers.
//!
//! Activations are first mapped through per-node empirical CDFs (the copula
//! scale), then a rank or linear correlation is taken between every node of a
//! layer and every node of the next layer.

use std::cmp::Ordering;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuralnet::{ActivationTrace, NodeId};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CdfMode {
    Histogram,
    ExactEcdf,
}

impl fmt::Display for CdfMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CdfMode::Histogram => "histogram",
            CdfMode::ExactEcdf => "exact_ecdf",
        })
    }
}

impl FromStr for CdfMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "histogram" => Ok(CdfMode::Histogram),
            "exact_ecdf" | "exact" => Ok(CdfMode::ExactEcdf),
            _ => Err(format!("unknown cdf mode {s:?} (histogram | exact_ecdf)")),
        }
    }
}

/// Empirical marginal distribution of one node.
#[derive(Debug, Clone, PartialEq)]
pub enum EmpiricalCdf {
    /// Cumulative bin mass over `bins` uniform bins spanning the observed range.
    Histogram {
        lo: f64,
        hi: f64,
        /// `cumulative[k]` = fraction of samples in bins `0..=k`; the last entry is 1.
        cumulative: Vec<f64>,
        /// Set when the sample had zero range and collapsed to a single bin.
        degenerate: bool,
    },
    /// Right-continuous step ECDF over the sorted sample.
    Exact { sorted: Vec<f64> },
}

fn check_sample(values: &[f64]) -> Result<()> {
    if values.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 samples, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite sample value".into()));
    }
    Ok(())
}

/// Fits a marginal CDF to one node's values.
pub fn fit_cdf(values: &[f64], mode: CdfMode, bins: usize) -> Result<EmpiricalCdf> {
    check_sample(values)?;
    match mode {
        CdfMode::ExactEcdf => {
            let mut sorted = values.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            Ok(EmpiricalCdf::Exact { sorted })
        }
        CdfMode::Histogram => {
            if bins == 0 {
                return Err(Error::Config("bins must be positive".into()));
            }
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi == lo {
                return Ok(EmpiricalCdf::Histogram {
                    lo,
                    hi,
                    cumulative: vec![1.0],
                    degenerate: true,
                });
            }
            let mut counts = vec![0usize; bins];
            for &v in values {
                counts[histogram_bin(v, lo, hi, bins)] += 1;
            }
            let n = values.len() as f64;
            let cumulative = counts
                .iter()
                .scan(0usize, |acc, c| {
                    *acc += c;
                    Some(*acc as f64 / n)
                })
                .collect();
            Ok(EmpiricalCdf::Histogram {
                lo,
                hi,
                cumulative,
                degenerate: false,
            })
        }
    }
}

fn histogram_bin(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let width = (hi - lo) / bins as f64;
    (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1)
}

impl EmpiricalCdf {
    pub fn evaluate(&self, x: f64) -> f64 {
        match self {
            EmpiricalCdf::Histogram {
                lo, hi, cumulative, ..
            } => {
                if x < *lo {
                    0.0
                } else if x >= *hi {
                    1.0
                } else {
                    cumulative[histogram_bin(x, *lo, *hi, cumulative.len())]
                }
            }
            EmpiricalCdf::Exact { sorted } => {
                sorted.partition_point(|&v| v <= x) as f64 / sorted.len() as f64
            }
        }
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            EmpiricalCdf::Histogram {
                degenerate: true,
                ..
            }
        )
    }

    /// Step points `(x, F(x))`: bin upper edges for histograms, distinct
    /// sample values for the exact ECDF.
    pub fn knots(&self) -> Vec<(f64, f64)> {
        match self {
            EmpiricalCdf::Histogram {
                lo, hi, cumulative, ..
            } => {
                let width = (hi - lo) / cumulative.len() as f64;
                cumulative
                    .iter()
                    .enumerate()
                    .map(|(k, &c)| {
                        let edge = if k + 1 == cumulative.len() {
                            *hi
                        } else {
                            lo + width * (k + 1) as f64
                        };
                        (edge, c)
                    })
                    .collect()
            }
            EmpiricalCdf::Exact { sorted } => {
                let mut out: Vec<(f64, f64)> = Vec::new();
                for &v in sorted {
                    if out.last().map(|&(x, _)| x == v) != Some(true) {
                        out.push((v, self.evaluate(v)));
                    }
                }
                out
            }
        }
    }
}

/// One CDF per trace column.
pub fn fit_cdfs(trace: &ActivationTrace, mode: CdfMode, bins: usize) -> Result<Vec<EmpiricalCdf>> {
    par::map_range(trace.n_nodes(), |c| fit_cdf(&trace.column(c), mode, bins))
        .into_iter()
        .collect()
}

/// CDF-transformed activations, stored column-wise (one vector per node).
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoObservations {
    pub layer_widths: Vec<usize>,
    pub columns: Vec<Vec<f64>>,
}

impl PseudoObservations {
    pub fn n_samples(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn node(&self, id: NodeId) -> &[f64] {
        let offset: usize = self.layer_widths[..id.layer].iter().sum();
        &self.columns[offset + id.index]
    }

    pub fn get(&self, sample: usize, column: usize) -> f64 {
        self.columns[column][sample]
    }
}

/// Maps every trace value through its node's CDF.
pub fn pseudo_observations(
    trace: &ActivationTrace,
    cdfs: &[EmpiricalCdf],
) -> Result<PseudoObservations> {
    if cdfs.len() != trace.n_nodes() {
        return Err(Error::Shape(format!(
            "{} CDF(s) for {} trace node(s)",
            cdfs.len(),
            trace.n_nodes()
        )));
    }
    let columns = par::map_range(trace.n_nodes(), |c| {
        trace
            .values
            .iter()
            .map(|row| cdfs[c].evaluate(row[c]))
            .collect()
    });
    Ok(PseudoObservations {
        layer_widths: trace.layer_widths.clone(),
        columns,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationKind {
    KendallTauB,
    Spearman,
    Pearson,
}

impl fmt::Display for CorrelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorrelationKind::KendallTauB => "kendall_tau_b",
            CorrelationKind::Spearman => "spearman",
            CorrelationKind::Pearson => "pearson",
        })
    }
}

impl FromStr for CorrelationKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "kendall_tau_b" | "kendall" => Ok(CorrelationKind::KendallTauB),
            "spearman" => Ok(CorrelationKind::Spearman),
            "pearson" => Ok(CorrelationKind::Pearson),
            _ => Err(format!(
                "unknown correlation kind {s:?} (kendall_tau_b | spearman | pearson)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UndefinedReason {
    /// At least one of the two variables never varies.
    ConstantMargin,
}

/// A dependence coefficient, or the reason it could not be computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coefficient {
    Defined(f64),
    Undefined(UndefinedReason),
}

impl Coefficient {
    pub fn value(self) -> Option<f64> {
        match self {
            Coefficient::Defined(v) => Some(v),
            Coefficient::Undefined(_) => None,
        }
    }

    pub fn is_defined(self) -> bool {
        matches!(self, Coefficient::Defined(_))
    }
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    check_sample(x)?;
    check_sample(y)
}

fn cmp(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).expect("finite values")
}

/// Sum of `t (t - 1) / 2` over runs of equal adjacent values.
fn tied_pairs<T: PartialEq>(sorted: impl Iterator<Item = T>) -> u64 {
    let mut total = 0u64;
    let mut run = 0u64;
    let mut prev: Option<T> = None;
    for v in sorted {
        if prev.as_ref() == Some(&v) {
            run += 1;
        } else {
            total += run * (run + 1) / 2;
            run = 0;
        }
        prev = Some(v);
    }
    total + run * (run + 1) / 2
}

/// Stable merge sort on `v` returning the number of strict inversions.
fn sort_counting_swaps(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = sort_counting_swaps(&mut v[..mid], &mut buf[..mid]);
    swaps += sort_counting_swaps(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if cmp(v[j], v[i]) == Ordering::Less {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    let k = k + mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Tie-corrected Kendall τ-b in O(n log n).
///
/// `(C - D) / sqrt((n0 - n1)(n0 - n2))`, where `n0` is the number of pairs and
/// `n1`, `n2` count pairs tied in `x` and `y` respectively. Undefined when
/// either variable is constant.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<Coefficient> {
    check_pair(x, y)?;
    let n = x.len() as u64;
    let n0 = n * (n - 1) / 2;

    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| cmp(x[a], x[b]).then(cmp(y[a], y[b])));

    let n1 = tied_pairs(idx.iter().map(|&i| x[i]));
    let n3 = tied_pairs(idx.iter().map(|&i| (x[i], y[i])));

    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut buf = vec![0.0; ys.len()];
    let swaps = sort_counting_swaps(&mut ys, &mut buf);
    let n2 = tied_pairs(ys.iter().copied());

    if n0 == n1 || n0 == n2 {
        return Ok(Coefficient::Undefined(UndefinedReason::ConstantMargin));
    }
    let s = n0 as i64 - n1 as i64 - n2 as i64 + n3 as i64 - 2 * swaps as i64;
    Ok(Coefficient::Defined(tau_b_from_counts(s, n0, n1, n2)))
}

/// Shared final step of τ-b, kept separate so brute-force oracles can reuse
/// the exact floating-point expression.
pub fn tau_b_from_counts(concordant_minus_discordant: i64, n0: u64, n1: u64, n2: u64) -> f64 {
    concordant_minus_discordant as f64 / (((n0 - n1) as f64) * ((n0 - n2) as f64)).sqrt()
}

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Coefficient> {
    check_pair(x, y)?;
    Ok(pearson_unchecked(x, y))
}

fn pearson_unchecked(x: &[f64], y: &[f64]) -> Coefficient {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Coefficient::Undefined(UndefinedReason::ConstantMargin);
    }
    Coefficient::Defined((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| cmp(x[a], x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && x[idx[end]] == x[idx[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman ρ: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Coefficient> {
    check_pair(x, y)?;
    Ok(pearson_unchecked(&average_ranks(x), &average_ranks(y)))
}

pub fn correlate(kind: CorrelationKind, x: &[f64], y: &[f64]) -> Result<Coefficient> {
    match kind {
        CorrelationKind::KendallTauB => kendall_tau(x, y),
        CorrelationKind::Spearman => spearman(x, y),
        CorrelationKind::Pearson => pearson(x, y),
    }
}

/// Coefficients between every node of `source_layer` and every node of
/// `target_layer = source_layer + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCorrelation {
    pub source_layer: usize,
    pub target_layer: usize,
    pub kind: CorrelationKind,
    /// `n_source × n_target`.
    pub matrix: Vec<Vec<Coefficient>>,
}

impl LayerCorrelation {
    pub fn get(&self, source: usize, target: usize) -> Option<Coefficient> {
        self.matrix.get(source).and_then(|r| r.get(target)).copied()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.matrix.len(), self.matrix.first().map_or(0, Vec::len))
    }

    pub fn undefined_count(&self) -> usize {
        self.matrix
            .iter()
            .flatten()
            .filter(|c| !c.is_defined())
            .count()
    }
}

pub fn correlation_matrix(
    pseudo: &PseudoObservations,
    source_layer: usize,
    target_layer: usize,
    kind: CorrelationKind,
) -> Result<LayerCorrelation> {
    let n_layers = pseudo.layer_widths.len();
    if target_layer != source_layer + 1 || target_layer >= n_layers {
        return Err(Error::Shape(format!(
            "layers {source_layer} and {target_layer} are not adjacent in a {n_layers}-layer network"
        )));
    }
    let (ns, nt) = (
        pseudo.layer_widths[source_layer],
        pseudo.layer_widths[target_layer],
    );
    let entries = par::map_range(ns * nt, |k| {
        let s = NodeId {
            layer: source_layer,
            index: k / nt,
        };
        let t = NodeId {
            layer: target_layer,
            index: k % nt,
        };
        correlate(kind, pseudo.node(s), pseudo.node(t))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(LayerCorrelation {
        source_layer,
        target_layer,
        kind,
        matrix: entries.chunks(nt).map(<[Coefficient]>::to_vec).collect(),
    })
}

/// Matrices for every adjacent layer pair, in layer order.
pub fn adjacent_correlations(
    pseudo: &PseudoObservations,
    kind: CorrelationKind,
) -> Result<Vec<LayerCorrelation>> {
    (0..pseudo.layer_widths.len().saturating_sub(1))
        .map(|l| correlation_matrix(pseudo, l, l + 1, kind))
        .collect()
}

pub const CORRELATION_CSV_HEADER: [&str; 7] = [
    "source_layer",
    "source_node",
    "target_layer",
    "target_node",
    "kind",
    "value",
    "defined",
];

/// Writes matrices as `source_layer,source_node,target_layer,target_node,kind,value,defined`.
/// Undefined entries have an empty value.
pub fn write_correlations_csv<W: Write>(out: W, mats: &[LayerCorrelation]) -> Result<()> {
    let err = |e: csv::Error| Error::Data(format!("writing correlation csv: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CORRELATION_CSV_HEADER).map_err(err)?;
    for m in mats {
        for (i, row) in m.matrix.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                let (value, defined) = match c {
                    Coefficient::Defined(v) => (v.to_string(), "true"),
                    Coefficient::Undefined(_) => (String::new(), "false"),
                };
                w.write_record(&[
                    m.source_layer.to_string(),
                    i.to_string(),
                    m.target_layer.to_string(),
                    j.to_string(),
                    m.kind.to_string(),
                    value,
                    defined.to_string(),
                ])
                .map_err(err)?;
            }
        }
    }
    w.flush()
        .map_err(|e| Error::Data(format!("writing correlation csv: {e}")))?;
    Ok(())
}

/// Reads matrices written by [`write_correlations_csv`] for a network of the
/// given widths. `#` lines are skipped.
pub fn read_correlations_csv<R: Read>(
    input: R,
    layer_widths: &[usize],
) -> Result<Vec<LayerCorrelation>> {
    let n_mats = layer_widths.len().saturating_sub(1);
    let mut slots: Vec<Vec<Vec<Option<Coefficient>>>> = (0..n_mats)
        .map(|l| vec![vec![None; layer_widths[l + 1]]; layer_widths[l]])
        .collect();
    let mut kind: Option<CorrelationKind> = None;
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input);
    for (k, rec) in r.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::Data(format!("correlation csv row {line}: {e}")))?;
        let bad = |what: &str| Error::Data(format!("correlation csv row {line}: bad {what}"));
        let field = |i: usize| rec.get(i).unwrap_or("");
        let sl: usize = field(0).parse().map_err(|_| bad("source_layer"))?;
        let si: usize = field(1).parse().map_err(|_| bad("source_node"))?;
        let tl: usize = field(2).parse().map_err(|_| bad("target_layer"))?;
        let ti: usize = field(3).parse().map_err(|_| bad("target_node"))?;
        let kd: CorrelationKind = field(4).parse().map_err(|_| bad("kind"))?;
        if *kind.get_or_insert(kd) != kd {
            return Err(bad("kind (mixed kinds)"));
        }
        let defined: bool = field(6).parse().map_err(|_| bad("defined"))?;
        let coef = if defined {
            Coefficient::Defined(field(5).parse().map_err(|_| bad("value"))?)
        } else {
            Coefficient::Undefined(UndefinedReason::ConstantMargin)
        };
        if tl != sl + 1 || sl >= n_mats || si >= layer_widths[sl] || ti >= layer_widths[tl] {
            return Err(bad("node id"));
        }
        slots[sl][si][ti] = Some(coef);
    }
    let kind = kind.ok_or_else(|| Error::Data("correlation csv is empty".into()))?;
    slots
        .into_iter()
        .enumerate()
        .map(|(l, m)| {
            let matrix = m
                .into_iter()
                .map(|row| row.into_iter().collect::<Option<Vec<_>>>())
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| {
                    Error::Data(format!("correlation csv is missing entries for layer {l}"))
                })?;
            Ok(LayerCorrelation {
                source_layer: l,
                target_layer: l + 1,
                kind,
                matrix,
            })
        })
        .collect()
}
