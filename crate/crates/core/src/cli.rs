//! Run configuration and the staged pipeline behind the `cvt` binary.
//!
//! Each stage reads the artifacts of the stage before it from the output
//! directory, so stages can be run one at a time or all together. Every
//! artifact carries a provenance line (tool version, config hash, seeds).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{self, LabeledTable, MinMaxScaler, SplitSpec};
use crate::depstats::{self, CdfMode, CorrelationKind};
use crate::error::{Error, Result};
use crate::forest::{self, ForestConfig, MaxFeatures};
use crate::neuralnet::{self, ActivationTrace, MlpModel, MlpSpec, TrainConfig};
use crate::pathrank::{self, EdgeImportance, Product};
use crate::render::{self, RenderSpec, Rgb};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable that overrides `output_dir` from the config file.
pub const OUTPUT_DIR_ENV: &str = "CVT_OUTPUT_DIR";

pub mod artifacts {
    pub const CONFIG: &str = "config.txt";
    pub const MODEL: &str = "model.json";
    pub const TRAIN_SUMMARY: &str = "train_summary.json";
    pub const TRACES: &str = "traces.csv";
    pub const CDFS: &str = "cdfs.csv";
    pub const CORRELATIONS: &str = "correlations.csv";
    pub const RANKING: &str = "ranking.csv";
    pub const EDGE_IMPORTANCE: &str = "edge_importance.csv";
    pub const IMPORTANCE: &str = "importance.json";
    pub const FOREST_SUMMARY: &str = "forest_summary.json";
    pub const FEATURE_IMPORTANCE: &str = "feature_importance.csv";
    pub const DOT: &str = "network.dot";
    pub const SVG: &str = "network.svg";
    pub const BARS: &str = "bars.csv";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Train,
    Analyze,
    Rank,
    CompareRf,
    Render,
    All,
}

impl std::str::FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "train" => Stage::Train,
            "analyze" => Stage::Analyze,
            "rank" => Stage::Rank,
            "compare-rf" => Stage::CompareRf,
            "render" => Stage::Render,
            "all" => Stage::All,
            _ => return Err(format!("unknown subcommand {s:?}")),
        })
    }
}

/// Every knob of an experiment. Parsed from a flat `key = value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: PathBuf,
    pub label_column: String,
    pub split: SplitSpec,
    pub normalize: bool,
    pub hidden_layers: Vec<usize>,
    pub model_seed: u64,
    pub train: TrainConfig,
    pub cdf_mode: CdfMode,
    pub bins: usize,
    pub correlation: CorrelationKind,
    pub forest: ForestConfig,
    pub render: RenderSpec,
    /// Where artifacts go. Not part of the config hash.
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data/iris.csv"),
            label_column: "species".into(),
            split: SplitSpec::default(),
            normalize: true,
            hidden_layers: vec![6, 6],
            model_seed: 0,
            train: TrainConfig::default(),
            cdf_mode: CdfMode::Histogram,
            bins: 20,
            correlation: CorrelationKind::KendallTauB,
            forest: ForestConfig::default(),
            render: RenderSpec::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "data",
    "label_column",
    "train_fraction",
    "split_seed",
    "normalize",
    "hidden_layers",
    "model_seed",
    "learning_rate",
    "momentum",
    "epochs",
    "batch_size",
    "train_seed",
    "cdf_mode",
    "bins",
    "correlation",
    "n_trees",
    "max_features",
    "bootstrap",
    "forest_seed",
    "min_samples_split",
    "threshold_quantile",
    "color_low",
    "color_high",
    "output_dir",
];

fn strip_comment(line: &str) -> &str {
    let bytes = line.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        let at_start = line[..i].trim().is_empty();
        let before_blank = bytes.get(i + 1).is_none_or(|c| c.is_ascii_whitespace());
        if b == b'#' && (at_start || before_blank) {
            return &line[..i];
        }
    }
    line
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("key `{key}`: cannot parse {value:?}: {e}")))
}

impl RunConfig {
    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data" => self.data = PathBuf::from(value),
            "label_column" => self.label_column = value.to_string(),
            "train_fraction" => self.split.train_fraction = parse_value(key, value)?,
            "split_seed" => self.split.seed = parse_value(key, value)?,
            "normalize" => self.normalize = parse_value(key, value)?,
            "hidden_layers" => {
                self.hidden_layers = value
                    .split(',')
                    .map(|w| parse_value(key, w.trim()))
                    .collect::<Result<_>>()?
            }
            "model_seed" => self.model_seed = parse_value(key, value)?,
            "learning_rate" => self.train.learning_rate = parse_value(key, value)?,
            "momentum" => self.train.momentum = parse_value(key, value)?,
            "epochs" => self.train.epochs = parse_value(key, value)?,
            "batch_size" => self.train.batch_size = parse_value(key, value)?,
            "train_seed" => self.train.seed = parse_value(key, value)?,
            "cdf_mode" => self.cdf_mode = parse_value(key, value)?,
            "bins" => self.bins = parse_value(key, value)?,
            "correlation" => self.correlation = parse_value(key, value)?,
            "n_trees" => self.forest.n_trees = parse_value(key, value)?,
            "max_features" => self.forest.max_features = parse_value::<MaxFeatures>(key, value)?,
            "bootstrap" => self.forest.bootstrap = parse_value(key, value)?,
            "forest_seed" => self.forest.seed = parse_value(key, value)?,
            "min_samples_split" => self.forest.min_samples_split = parse_value(key, value)?,
            "threshold_quantile" => self.render.threshold_quantile = parse_value(key, value)?,
            "color_low" => self.render.color_low = parse_value::<Rgb>(key, value)?,
            "color_high" => self.render.color_high = parse_value::<Rgb>(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Range checks, each error naming the offending key.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: String| Err(Error::Config(format!("key `{key}`: {why}")));
        let f = self.split.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return bad("train_fraction", format!("{f} must lie in (0, 1)"));
        }
        if self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return bad(
                "hidden_layers",
                "need at least one hidden layer, all widths positive".into(),
            );
        }
        let lr = self.train.learning_rate;
        if !(lr > 0.0 && lr.is_finite()) {
            return bad("learning_rate", format!("{lr} must be positive"));
        }
        if !(0.0..1.0).contains(&self.train.momentum) {
            return bad(
                "momentum",
                format!("{} must lie in [0, 1)", self.train.momentum),
            );
        }
        if self.train.batch_size == 0 {
            return bad("batch_size", "must be positive".into());
        }
        if self.bins == 0 {
            return bad("bins", "must be positive".into());
        }
        if self.forest.n_trees == 0 {
            return bad("n_trees", "must be at least 1".into());
        }
        if self.forest.min_samples_split < 2 {
            return bad("min_samples_split", "must be at least 2".into());
        }
        let q = self.render.threshold_quantile;
        if !(0.0..=1.0).contains(&q) {
            return bad("threshold_quantile", format!("{q} must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Parses `key = value` lines. A `#` at the start of a line, or one
    /// followed by whitespace, starts a comment, so colours like `#1f4ed8`
    /// survive. Unset keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected `key = value`, got {raw:?}",
                    n + 1
                ))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn value_of(&self, key: &str) -> String {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        match key {
            "data" => self.data.display().to_string(),
            "label_column" => self.label_column.clone(),
            "train_fraction" => self.split.train_fraction.to_string(),
            "split_seed" => self.split.seed.to_string(),
            "normalize" => self.normalize.to_string(),
            "hidden_layers" => join(&self.hidden_layers),
            "model_seed" => self.model_seed.to_string(),
            "learning_rate" => self.train.learning_rate.to_string(),
            "momentum" => self.train.momentum.to_string(),
            "epochs" => self.train.epochs.to_string(),
            "batch_size" => self.train.batch_size.to_string(),
            "train_seed" => self.train.seed.to_string(),
            "cdf_mode" => self.cdf_mode.to_string(),
            "bins" => self.bins.to_string(),
            "correlation" => self.correlation.to_string(),
            "n_trees" => self.forest.n_trees.to_string(),
            "max_features" => self.forest.max_features.to_string(),
            "bootstrap" => self.forest.bootstrap.to_string(),
            "forest_seed" => self.forest.seed.to_string(),
            "min_samples_split" => self.forest.min_samples_split.to_string(),
            "threshold_quantile" => self.render.threshold_quantile.to_string(),
            "color_low" => self.render.color_low.to_string(),
            "color_high" => self.render.color_high.to_string(),
            "output_dir" => self.output_dir.display().to_string(),
            _ => unreachable!("unlisted key {key}"),
        }
    }

    /// Normalized echo of every experiment key (everything except
    /// `output_dir`), one `key = value` per line in fixed order.
    pub fn to_text(&self) -> String {
        CONFIG_KEYS
            .iter()
            .filter(|&&k| k != "output_dir")
            .map(|k| format!("{k} = {}\n", self.value_of(k)))
            .collect()
    }

    /// First 16 hex digits of the SHA-256 of [`RunConfig::to_text`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn meta(&self) -> Meta {
        Meta {
            tool: "cvt".into(),
            version: VERSION.into(),
            config_hash: self.hash(),
            split_seed: self.split.seed,
            model_seed: self.model_seed,
            train_seed: self.train.seed,
            forest_seed: self.forest.seed,
        }
    }
}

/// Provenance embedded in every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub split_seed: u64,
    pub model_seed: u64,
    pub train_seed: u64,
    pub forest_seed: u64,
}

impl Meta {
    fn line(&self) -> String {
        format!(
            "{} {} config={} split_seed={} model_seed={} train_seed={} forest_seed={}",
            self.tool,
            self.version,
            self.config_hash,
            self.split_seed,
            self.model_seed,
            self.train_seed,
            self.forest_seed
        )
    }
}

/// Maps an error onto the process exit code: 1 usage/config, 2 data,
/// 3 numeric.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 1,
        Error::Numeric(_) => 3,
        Error::Io { .. }
        | Error::Parse { .. }
        | Error::Data(_)
        | Error::MissingArtifact(_)
        | Error::Shape(_) => 2,
    }
}

/// One-line, machine-parseable error report.
pub fn error_line(err: &Error) -> String {
    let kind = match exit_code(err) {
        1 => "usage",
        3 => "numeric",
        _ => "data",
    };
    format!(
        "cvt: error code={} kind={kind} message={:?}",
        exit_code(err),
        err.to_string()
    )
}

/// Artifacts written by one invocation, removed again if it fails.
struct Writer {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        if !self.written.contains(&path) {
            self.written.push(path);
        }
        Ok(())
    }

    fn rollback(&self) {
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
    }
}

fn csv_bytes(meta: &Meta, body: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = format!("# {}\n", meta.line()).into_bytes();
    body(&mut buf)?;
    Ok(buf)
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)
        .map_err(|e| Error::Data(format!("serializing json: {e}")))?;
    v.push(b'\n');
    Ok(v)
}

fn read_artifact(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    fs::read(&path).map_err(|e| Error::io(&path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(dir: &Path, name: &str) -> Result<T> {
    let bytes = read_artifact(dir, name)?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::Data(format!("{}: {e}", dir.join(name).display())))
}

/// Train/test tables as the network sees them.
pub struct Prepared {
    pub train: LabeledTable,
    pub test: LabeledTable,
}

pub fn prepare_data(cfg: &RunConfig) -> Result<Prepared> {
    let table = dataset::load_csv(&cfg.data, &cfg.label_column)?;
    let (train, test) = dataset::split(&table, cfg.split)?;
    if cfg.normalize {
        let scaler = MinMaxScaler::fit(&train);
        Ok(Prepared {
            train: scaler.transform(&train)?,
            test: scaler.transform(&test)?,
        })
    } else {
        Ok(Prepared { train, test })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    meta: Meta,
    train_seed: u64,
    #[serde(flatten)]
    model: MlpModel,
}

#[derive(Serialize)]
struct TrainSummary {
    meta: Meta,
    n_train: usize,
    n_test: usize,
    epochs: usize,
    final_loss: Option<f64>,
    train_accuracy: f64,
    test_accuracy: f64,
}

#[derive(Serialize, Deserialize)]
struct ImportanceDoc {
    meta: Meta,
    layer_widths: Vec<usize>,
    feature_names: Vec<String>,
    class_names: Vec<String>,
    correlation: String,
    cdf_mode: String,
    bins: usize,
    cvt_importance: Vec<f64>,
    mean_var_ccc: Vec<f64>,
    defined_paths: usize,
    excluded_paths: usize,
    warnings: Vec<String>,
    edge_importance: Vec<Vec<Vec<f64>>>,
}

#[derive(Serialize)]
struct ForestSummary {
    meta: Meta,
    n_trees: usize,
    max_features: String,
    bootstrap: bool,
    min_samples_split: usize,
    seed: u64,
    train_accuracy: f64,
    test_accuracy: f64,
    importance_defined: bool,
    rf_importance: Option<Vec<f64>>,
}

/// What an invocation produced.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Outcome {
    pub artifacts: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

fn load_model(dir: &Path) -> Result<MlpModel> {
    let doc: ModelDoc = read_json(dir, artifacts::MODEL)?;
    doc.model.validate()?;
    Ok(doc.model)
}

fn stage_train(cfg: &RunConfig, w: &mut Writer) -> Result<()> {
    let data = prepare_data(cfg)?;
    let mut widths = vec![data.train.n_features()];
    widths.extend(&cfg.hidden_layers);
    widths.push(data.train.n_classes());
    let model = MlpModel::init(MlpSpec::new(widths, cfg.model_seed))?;
    let (model, report) = neuralnet::train(&model, &data.train, &cfg.train)?;
    let meta = cfg.meta();
    let summary = TrainSummary {
        meta: meta.clone(),
        n_train: data.train.n_samples(),
        n_test: data.test.n_samples(),
        epochs: cfg.train.epochs,
        final_loss: report.epoch_losses.last().copied(),
        train_accuracy: report.train_accuracy,
        test_accuracy: model.accuracy(&data.test)?,
    };
    let doc = ModelDoc {
        meta,
        train_seed: cfg.train.seed,
        model,
    };
    w.put(artifacts::MODEL, &json_bytes(&doc)?)?;
    w.put(artifacts::TRAIN_SUMMARY, &json_bytes(&summary)?)
}

fn stage_analyze(cfg: &RunConfig, w: &mut Writer) -> Result<()> {
    let model = load_model(&w.dir)?;
    let data = prepare_data(cfg)?;
    let trace = neuralnet::capture_traces(&model, &data.train)?;
    let cdfs = depstats::fit_cdfs(&trace, cfg.cdf_mode, cfg.bins)?;
    let pseudo = depstats::pseudo_observations(&trace, &cdfs)?;
    let mats = depstats::adjacent_correlations(&pseudo, cfg.correlation)?;
    let meta = cfg.meta();

    w.put(
        artifacts::TRACES,
        &csv_bytes(&meta, |b| trace.write_csv(b))?,
    )?;
    let cdf_csv = csv_bytes(&meta, |b| {
        let mut text = String::from("layer,node,mode,x,cdf,degenerate\n");
        for (id, cdf) in trace.node_ids().iter().zip(&cdfs) {
            for (x, f) in cdf.knots() {
                let _ = writeln!(
                    text,
                    "{},{},{},{x},{f},{}",
                    id.layer,
                    id.index,
                    cfg.cdf_mode,
                    cdf.is_degenerate()
                );
            }
        }
        b.extend_from_slice(text.as_bytes());
        Ok(())
    })?;
    w.put(artifacts::CDFS, &cdf_csv)?;
    w.put(
        artifacts::CORRELATIONS,
        &csv_bytes(&meta, |b| depstats::write_correlations_csv(b, &mats))?,
    )
}

fn stage_rank(cfg: &RunConfig, w: &mut Writer) -> Result<Vec<String>> {
    let model = load_model(&w.dir)?;
    let widths = model.spec.layer_widths.clone();
    let corr_bytes = read_artifact(&w.dir, artifacts::CORRELATIONS)?;
    let mats = depstats::read_correlations_csv(&corr_bytes[..], &widths)?;
    let table = dataset::load_csv(&cfg.data, &cfg.label_column)?;
    if table.n_features() != widths[0] || table.n_classes() != *widths.last().unwrap() {
        return Err(Error::Shape(format!(
            "data has {} feature(s) and {} class(es), model widths are {widths:?}",
            table.n_features(),
            table.n_classes()
        )));
    }

    let report = pathrank::build_report(&widths, &mats, &Product)?;
    let meta = cfg.meta();
    w.put(
        artifacts::RANKING,
        &csv_bytes(&meta, |b| {
            pathrank::write_ranking_csv(b, &report.ranked, &table.class_names)
        })?,
    )?;
    let edge_csv = csv_bytes(&meta, |b| {
        let mut text =
            String::from("source_layer,source_node,target_layer,target_node,importance\n");
        for ((l, i, j), v) in report.edges.iter() {
            let _ = writeln!(text, "{l},{i},{},{j},{v}", l + 1);
        }
        b.extend_from_slice(text.as_bytes());
        Ok(())
    })?;
    w.put(artifacts::EDGE_IMPORTANCE, &edge_csv)?;

    let doc = ImportanceDoc {
        meta,
        layer_widths: widths,
        feature_names: table.feature_names.clone(),
        class_names: table.class_names.clone(),
        correlation: mats[0].kind.to_string(),
        cdf_mode: cfg.cdf_mode.to_string(),
        bins: cfg.bins,
        cvt_importance: report.features.normalized.clone(),
        mean_var_ccc: report.features.mean_var_ccc.clone(),
        defined_paths: report.ranked.len() - report.features.excluded_paths,
        excluded_paths: report.features.excluded_paths,
        warnings: report.warnings.clone(),
        edge_importance: report.edges.layers.clone(),
    };
    w.put(artifacts::IMPORTANCE, &json_bytes(&doc)?)?;
    Ok(report.warnings)
}

fn feature_labels(names: &[String]) -> Vec<String> {
    (0..names.len()).map(|i| format!("x_{i}")).collect()
}

fn stage_compare_rf(cfg: &RunConfig, w: &mut Writer) -> Result<Vec<String>> {
    let imp: ImportanceDoc = read_json(&w.dir, artifacts::IMPORTANCE)?;
    let data = prepare_data(cfg)?;
    let forest = forest::fit_forest(&data.train, &cfg.forest)?;
    let rf = forest.feature_importances();
    let meta = cfg.meta();
    let summary = ForestSummary {
        meta: meta.clone(),
        n_trees: cfg.forest.n_trees,
        max_features: cfg.forest.max_features.to_string(),
        bootstrap: cfg.forest.bootstrap,
        min_samples_split: cfg.forest.min_samples_split,
        seed: cfg.forest.seed,
        train_accuracy: forest.accuracy(&data.train),
        test_accuracy: forest.accuracy(&data.test),
        importance_defined: rf.is_some(),
        rf_importance: rf.clone(),
    };
    w.put(artifacts::FOREST_SUMMARY, &json_bytes(&summary)?)?;
    let Some(rf) = rf else {
        return Ok(vec!["forest never split; RF importance undefined".into()]);
    };
    let labels = feature_labels(&imp.feature_names);
    let rows = render::importance_bars(
        &labels
            .iter()
            .cloned()
            .zip(imp.cvt_importance.iter().copied())
            .collect::<Vec<_>>(),
        &labels.iter().cloned().zip(rf).collect::<Vec<_>>(),
    )?;
    w.put(
        artifacts::FEATURE_IMPORTANCE,
        &csv_bytes(&meta, |b| render::write_bars_csv(b, &rows))?,
    )?;
    Ok(Vec::new())
}

fn stage_render(cfg: &RunConfig, w: &mut Writer) -> Result<()> {
    let imp: ImportanceDoc = read_json(&w.dir, artifacts::IMPORTANCE)?;
    let widths = imp.layer_widths.clone();
    let edges = EdgeImportance {
        layer_widths: widths.clone(),
        layers: imp.edge_importance.clone(),
    };
    let mut labels: Vec<Vec<String>> = vec![Vec::new(); widths.len()];
    labels[0] = imp.feature_names.clone();
    *labels.last_mut().unwrap() = imp.class_names.clone();
    let spec = RenderSpec {
        node_labels: Some(labels),
        ..cfg.render.clone()
    };
    let meta = cfg.meta();
    let dot = render::to_dot(&widths, &edges, &spec)?;
    w.put(
        artifacts::DOT,
        format!("// {}\n{dot}", meta.line()).as_bytes(),
    )?;
    let svg = render::to_svg(&widths, &edges, &spec)?;
    w.put(
        artifacts::SVG,
        format!("<!-- {} -->\n{svg}", meta.line()).as_bytes(),
    )?;

    // bar data needs the forest comparison; skip quietly when it has not run
    let fi_path = w.dir.join(artifacts::FEATURE_IMPORTANCE);
    if fi_path.exists() {
        let bytes = fs::read(&fi_path).map_err(|e| Error::io(&fi_path, e))?;
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(&bytes[..]);
        let rows: Vec<render::BarRow> = r
            .records()
            .map(|rec| {
                let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", fi_path.display())))?;
                let num = |i: usize| -> Result<f64> {
                    rec.get(i)
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::Data(format!("{}: bad row", fi_path.display())))
                };
                Ok(render::BarRow {
                    feature: rec.get(0).unwrap_or("").to_string(),
                    cvt_importance: num(1)?,
                    rf_importance: num(2)?,
                })
            })
            .collect::<Result<_>>()?;
        let cvt: Vec<_> = rows
            .iter()
            .map(|r| (r.feature.clone(), r.cvt_importance))
            .collect();
        let rf: Vec<_> = rows
            .iter()
            .map(|r| (r.feature.clone(), r.rf_importance))
            .collect();
        let bars = render::importance_bars(&cvt, &rf)?;
        w.put(
            artifacts::BARS,
            &csv_bytes(&meta, |b| render::write_bars_csv(b, &bars))?,
        )?;
    }
    Ok(())
}

/// Runs one stage (or all of them) and writes its artifacts. On failure the
/// artifacts written by this call are removed.
pub fn run(stage: Stage, cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let mut w = Writer::new(&cfg.output_dir)?;
    let result = run_stages(stage, cfg, &mut w);
    match result {
        Ok(warnings) => Ok(Outcome {
            artifacts: w.written,
            warnings,
        }),
        Err(e) => {
            w.rollback();
            Err(e)
        }
    }
}

fn run_stages(stage: Stage, cfg: &RunConfig, w: &mut Writer) -> Result<Vec<String>> {
    w.put(
        artifacts::CONFIG,
        format!("# {}\n{}", cfg.meta().line(), cfg.to_text()).as_bytes(),
    )?;
    let mut warnings = Vec::new();
    let stages: &[Stage] = match stage {
        Stage::All => &[
            Stage::Train,
            Stage::Analyze,
            Stage::Rank,
            Stage::CompareRf,
            Stage::Render,
        ],
        _ => std::slice::from_ref(&stage),
    };
    for s in stages {
        match s {
            Stage::Train => stage_train(cfg, w)?,
            Stage::Analyze => stage_analyze(cfg, w)?,
            Stage::Rank => warnings.extend(stage_rank(cfg, w)?),
            Stage::CompareRf => warnings.extend(stage_compare_rf(cfg, w)?),
            Stage::Render => stage_render(cfg, w)?,
            Stage::All => unreachable!(),
        }
    }
    Ok(warnings)
}

/// Reads a trace artifact back, for callers that want the raw activations.
pub fn load_traces(dir: &Path) -> Result<ActivationTrace> {
    let model = load_model(dir)?;
    let bytes = read_artifact(dir, artifacts::TRACES)?;
    ActivationTrace::read_csv(&bytes[..], &model.spec.layer_widths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let text = cfg.to_text();
        for key in CONFIG_KEYS.iter().filter(|&&k| k != "output_dir") {
            assert!(text.contains(&format!("{key} = ")), "missing {key}");
        }
    }

    #[test]
    fn echo_parses_back() {
        let cfg = RunConfig::parse("bins = 7\ncorrelation = spearman\nhidden_layers = 3, 4, 5\n")
            .unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(cfg.hidden_layers, vec![3, 4, 5]);
        assert_eq!(cfg.correlation, CorrelationKind::Spearman);
    }

    #[test]
    fn range_and_key_errors_name_the_key() {
        let err = RunConfig::parse("bins = 0").unwrap_err();
        assert!(err.to_string().contains("bins"), "{err}");
        assert_eq!(exit_code(&err), 1);
        let err = RunConfig::parse("binz = 3").unwrap_err();
        assert!(err.to_string().contains("binz"));
        let err = RunConfig::parse("momentum = 1.0").unwrap_err();
        assert!(err.to_string().contains("momentum"));
        let err = RunConfig::parse("epochs = many").unwrap_err();
        assert!(err.to_string().contains("epochs"));
        assert!(RunConfig::parse("just words").is_err());
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg =
            RunConfig::parse("# header\n\nn_trees = 5 # fewer\n#bins = 3\ncolor_low = #000000 #\n")
                .unwrap();
        assert_eq!(cfg.forest.n_trees, 5);
        assert_eq!(cfg.bins, 20);
        assert_eq!(cfg.render.color_low, Rgb(0, 0, 0));
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = RunConfig::parse("output_dir = a").unwrap();
        let b = RunConfig::parse("output_dir = b").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig::parse("bins = 21").unwrap();
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn error_line_is_single_line() {
        let line = error_line(&Error::MissingArtifact(PathBuf::from("out/x.csv")));
        assert!(line.starts_with("cvt: error code=2 kind=data message="));
        assert!(!line.contains('\n'));
    }
}
