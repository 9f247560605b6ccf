//! Fully connected ReLU/softmax classifier trained by mini-batch SGD with
//! momentum, plus per-node activation capture.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HiddenActivation {
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width first, class count last.
    pub layer_widths: Vec<usize>,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
    pub seed: u64,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, seed: u64) -> Self {
        Self {
            layer_widths,
            hidden_activation: HiddenActivation::Relu,
            output_activation: OutputActivation::Softmax,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::Config(format!(
                "network needs at least input and output layers, got widths {:?}",
                self.layer_widths
            )));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::Config(format!(
                "layer widths must be positive, got {:?}",
                self.layer_widths
            )));
        }
        Ok(())
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn total_nodes(&self) -> usize {
        self.layer_widths.iter().sum()
    }
}

/// Weights are stored row-major with one row per destination node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    #[serde(flatten)]
    pub spec: MlpSpec,
    /// `weights[l][dst][src]` connects layer `l` to layer `l + 1`.
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
}

/// Gradients with the same shapes as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(model: &MlpModel) -> Self {
        Self {
            weights: model
                .weights
                .iter()
                .map(|w| w.iter().map(|r| vec![0.0; r.len()]).collect())
                .collect(),
            biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }
}

/// Output of a single forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub probabilities: Vec<f64>,
    /// Post-activation value of every node, inputs first.
    pub trace_row: Vec<f64>,
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

struct Pass {
    /// Pre-activations per non-input layer.
    pre: Vec<Vec<f64>>,
    /// Activations per layer, inputs included.
    post: Vec<Vec<f64>>,
}

impl MlpModel {
    /// He-normal weights under the spec seed, zero biases.
    pub fn init(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in spec.layer_widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                .expect("positive standard deviation");
            weights.push(
                (0..fan_out)
                    .map(|_| (0..fan_in).map(|_| normal.sample(&mut rng)).collect())
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            spec,
            weights,
            biases,
        })
    }

    /// Checks parameter shapes and finiteness.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let widths = &self.spec.layer_widths;
        if self.weights.len() != widths.len() - 1 || self.biases.len() != widths.len() - 1 {
            return Err(Error::Shape(format!(
                "{} weight and {} bias layer(s) for widths {widths:?}",
                self.weights.len(),
                self.biases.len()
            )));
        }
        for (l, pair) in widths.windows(2).enumerate() {
            let w = &self.weights[l];
            if w.len() != pair[1] || w.iter().any(|r| r.len() != pair[0]) {
                return Err(Error::Shape(format!(
                    "weight matrix {l} is not {}x{}",
                    pair[1], pair[0]
                )));
            }
            if self.biases[l].len() != pair[1] {
                return Err(Error::Shape(format!(
                    "bias vector {l} is not length {}",
                    pair[1]
                )));
            }
        }
        let finite = self
            .weights
            .iter()
            .flatten()
            .flatten()
            .all(|v| v.is_finite())
            && self.biases.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Numeric("model has non-finite parameters".into()));
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.spec.layer_widths.len()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.n_inputs() {
            return Err(Error::Shape(format!(
                "input has {} value(s), network expects {}",
                x.len(),
                self.spec.n_inputs()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite input".into()));
        }
        Ok(())
    }

    fn pass(&self, x: &[f64]) -> Pass {
        let last = self.weights.len() - 1;
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut post = Vec::with_capacity(self.n_layers());
        post.push(x.to_vec());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let input = post.last().unwrap();
            let z: Vec<f64> = w
                .iter()
                .zip(b)
                .map(|(row, bias)| row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>() + bias)
                .collect();
            let a = if l == last {
                softmax(&z)
            } else {
                z.iter().map(|v| v.max(0.0)).collect()
            };
            pre.push(z);
            post.push(a);
        }
        Pass { pre, post }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        self.check_input(x)?;
        let pass = self.pass(x);
        let probabilities = pass.post.last().unwrap().clone();
        let trace_row = pass.post.into_iter().flatten().collect();
        Ok(Forward {
            probabilities,
            trace_row,
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let f = self.forward(x)?;
        Ok(argmax(&f.probabilities))
    }

    pub fn accuracy(&self, data: &LabeledTable) -> Result<f64> {
        let mut correct = 0usize;
        for (x, &y) in data.features.iter().zip(&data.labels) {
            if self.predict(x)? == y {
                correct += 1;
            }
        }
        Ok(correct as f64 / data.n_samples() as f64)
    }

    /// Mean cross-entropy over a batch.
    pub fn loss(&self, inputs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
        check_batch(inputs, labels)?;
        let mut total = 0.0;
        for (x, &y) in inputs.iter().zip(labels) {
            self.check_input(x)?;
            let pass = self.pass(x);
            total -= pass.post.last().unwrap()[y].ln();
        }
        Ok(total / inputs.len() as f64)
    }

    /// Backprop gradients of the mean cross-entropy over a batch.
    pub fn gradients(&self, inputs: &[Vec<f64>], labels: &[usize]) -> Result<Gradients> {
        check_batch(inputs, labels)?;
        let mut grads = Gradients::zeros_like(self);
        let scale = 1.0 / inputs.len() as f64;
        for (x, &y) in inputs.iter().zip(labels) {
            self.check_input(x)?;
            if y >= self.spec.n_outputs() {
                return Err(Error::Shape(format!("label {y} out of range")));
            }
            let pass = self.pass(x);
            // dL/dz at the softmax layer
            let mut delta: Vec<f64> = pass.post.last().unwrap().clone();
            delta[y] -= 1.0;
            for l in (0..self.weights.len()).rev() {
                let input = &pass.post[l];
                for (j, d) in delta.iter().enumerate() {
                    grads.biases[l][j] += scale * d;
                    for (g, a) in grads.weights[l][j].iter_mut().zip(input) {
                        *g += scale * d * a;
                    }
                }
                if l == 0 {
                    break;
                }
                let below = &pass.pre[l - 1];
                delta = (0..input.len())
                    .map(|i| {
                        if below[i] > 0.0 {
                            self.weights[l]
                                .iter()
                                .zip(&delta)
                                .map(|(row, d)| row[i] * d)
                                .sum()
                        } else {
                            0.0
                        }
                    })
                    .collect();
            }
        }
        Ok(grads)
    }

    /// Visits every scalar parameter mutably, weights first then biases.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .flatten()
            .flatten()
            .chain(self.biases.iter_mut().flatten())
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .flatten()
            .flatten()
            .chain(self.biases.iter().flatten())
    }
}

impl Gradients {
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .flatten()
            .flatten()
            .chain(self.biases.iter().flatten())
    }
}

fn check_batch(inputs: &[Vec<f64>], labels: &[usize]) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    if inputs.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} input(s) for {} label(s)",
            inputs.len(),
            labels.len()
        )));
    }
    Ok(())
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.02,
            momentum: 0.9,
            epochs: 1000,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum {} must lie in [0, 1)",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean batch loss per epoch, measured before each update.
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
}

/// Mini-batch SGD with momentum on mean cross-entropy. Sample order is
/// reshuffled every epoch from `cfg.seed`.
pub fn train(
    model: &MlpModel,
    data: &LabeledTable,
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainReport)> {
    cfg.validate()?;
    model.validate()?;
    if data.n_features() != model.spec.n_inputs() {
        return Err(Error::Shape(format!(
            "data has {} feature(s), network expects {}",
            data.n_features(),
            model.spec.n_inputs()
        )));
    }
    if data.n_classes() > model.spec.n_outputs() {
        return Err(Error::Shape(format!(
            "data has {} class(es), network has {} output(s)",
            data.n_classes(),
            model.spec.n_outputs()
        )));
    }

    let mut model = model.clone();
    let mut velocity = Gradients::zeros_like(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.n_samples()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let inputs: Vec<Vec<f64>> = chunk.iter().map(|&i| data.features[i].clone()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            loss_sum += model.loss(&inputs, &labels)?;
            n_batches += 1;
            let grads = model.gradients(&inputs, &labels)?;
            let steps = velocity
                .weights
                .iter_mut()
                .flatten()
                .flatten()
                .chain(velocity.biases.iter_mut().flatten());
            for ((v, g), p) in steps.zip(grads.values()).zip(model.params_mut()) {
                *v = cfg.momentum * *v - cfg.learning_rate * g;
                *p += *v;
            }
        }
        let epoch_loss = loss_sum / n_batches as f64;
        if !epoch_loss.is_finite() || model.params().any(|p| !p.is_finite()) {
            return Err(Error::Numeric(format!(
                "training diverged at epoch {epoch} (loss {epoch_loss})"
            )));
        }
        epoch_losses.push(epoch_loss);
    }

    let train_accuracy = model.accuracy(data)?;
    Ok((
        model,
        TrainReport {
            epoch_losses,
            train_accuracy,
        },
    ))
}

/// Identifies a node by layer and position within the layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId {
    pub layer: usize,
    pub index: usize,
}

/// Post-activation value of every node for every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub layer_widths: Vec<usize>,
    /// `n_samples × total_nodes`, columns ordered layer by layer.
    pub values: Vec<Vec<f64>>,
}

impl ActivationTrace {
    pub fn n_samples(&self) -> usize {
        self.values.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.layer_widths.iter().sum()
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        self.layer_widths
            .iter()
            .enumerate()
            .flat_map(|(layer, &w)| (0..w).map(move |index| NodeId { layer, index }))
            .collect()
    }

    /// Flat column of the first node of `layer`.
    pub fn layer_offset(&self, layer: usize) -> usize {
        self.layer_widths[..layer].iter().sum()
    }

    pub fn column_of(&self, node: NodeId) -> usize {
        self.layer_offset(node.layer) + node.index
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[col]).collect()
    }

    /// Long-format CSV: `sample_id,layer,node,value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let ids = self.node_ids();
        let csv_err = |e: csv::Error| Error::Data(format!("writing trace csv: {e}"));
        w.write_record(["sample_id", "layer", "node", "value"])
            .map_err(csv_err)?;
        for (s, row) in self.values.iter().enumerate() {
            for (id, v) in ids.iter().zip(row) {
                w.write_record(&[
                    s.to_string(),
                    id.layer.to_string(),
                    id.index.to_string(),
                    v.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()
            .map_err(|e| Error::Data(format!("writing trace csv: {e}")))?;
        Ok(())
    }

    /// Reads the long-format CSV back. Lines starting with `#` are skipped.
    pub fn read_csv<R: Read>(input: R, layer_widths: &[usize]) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(input);
        let total: usize = layer_widths.iter().sum();
        let offsets: Vec<usize> = layer_widths
            .iter()
            .scan(0, |acc, w| {
                let o = *acc;
                *acc += w;
                Some(o)
            })
            .collect();
        let mut values: Vec<Vec<f64>> = Vec::new();
        for (k, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::Data(format!("trace csv row {}: {e}", k + 2)))?;
            let field = |i: usize| rec.get(i).unwrap_or("");
            let bad = |what: &str| Error::Data(format!("trace csv row {}: bad {what}", k + 2));
            let s: usize = field(0).parse().map_err(|_| bad("sample_id"))?;
            let layer: usize = field(1).parse().map_err(|_| bad("layer"))?;
            let node: usize = field(2).parse().map_err(|_| bad("node"))?;
            let v: f64 = field(3).parse().map_err(|_| bad("value"))?;
            if layer >= layer_widths.len() || node >= layer_widths[layer] {
                return Err(bad("node id"));
            }
            while values.len() <= s {
                values.push(vec![f64::NAN; total]);
            }
            values[s][offsets[layer] + node] = v;
        }
        if values.iter().flatten().any(|v| v.is_nan()) {
            return Err(Error::Data("trace csv is missing entries".into()));
        }
        Ok(Self {
            layer_widths: layer_widths.to_vec(),
            values,
        })
    }
}

/// One trace row per sample, inputs first.
pub fn capture_traces(model: &MlpModel, data: &LabeledTable) -> Result<ActivationTrace> {
    let values = data
        .features
        .iter()
        .map(|x| model.forward(x).map(|f| f.trace_row))
        .collect::<Result<Vec<_>>>()?;
    Ok(ActivationTrace {
        layer_widths: model.spec.layer_widths.clone(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_model(widths: Vec<usize>) -> MlpModel {
        let mut m = MlpModel::init(MlpSpec::new(widths, 0)).unwrap();
        m.params_mut().for_each(|p| *p = 0.0);
        m
    }

    #[test]
    fn init_is_deterministic_and_finite() {
        let a = MlpModel::init(MlpSpec::new(vec![4, 6, 6, 3], 1)).unwrap();
        let b = MlpModel::init(MlpSpec::new(vec![4, 6, 6, 3], 1)).unwrap();
        let bits = |m: &MlpModel| m.params().map(|p| p.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert!(a.params().all(|p| p.is_finite()));
        assert!(a.biases.iter().flatten().all(|&b| b == 0.0));
        let c = MlpModel::init(MlpSpec::new(vec![4, 6, 6, 3], 2)).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn init_shapes() {
        let m = MlpModel::init(MlpSpec::new(vec![2, 2], 3)).unwrap();
        assert_eq!(m.weights.len(), 1);
        assert_eq!(m.weights[0].len(), 2);
        assert_eq!(m.weights[0][0].len(), 2);
        assert_eq!(m.biases, vec![vec![0.0, 0.0]]);
        assert!(MlpModel::init(MlpSpec::new(vec![3], 0)).is_err());
        assert!(MlpModel::init(MlpSpec::new(vec![3, 0, 2], 0)).is_err());
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = zero_model(vec![4, 6, 6, 3]);
        let f = m.forward(&[5.1, 3.5, 1.4, 0.2]).unwrap();
        for p in f.probabilities {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_built_forward() {
        // 2-2-2: hidden = relu(W1 x + b1), out = softmax(W2 h + b2)
        let mut m = zero_model(vec![2, 2, 2]);
        m.weights[0] = vec![vec![1.0, -2.0], vec![0.5, 0.25]];
        m.biases[0] = vec![0.5, -0.1];
        m.weights[1] = vec![vec![2.0, -1.0], vec![-0.5, 1.5]];
        m.biases[1] = vec![0.1, 0.2];
        let x = [1.0, 2.0];
        // h0 = relu(1 - 4 + 0.5) = 0, h1 = relu(0.5 + 0.5 - 0.1) = 0.9
        let (h0, h1): (f64, f64) = (0.0, 0.9);
        let z0 = 2.0 * h0 - 1.0 * h1 + 0.1;
        let z1 = -0.5 * h0 + 1.5 * h1 + 0.2;
        let p1 = z1.exp() / (z0.exp() + z1.exp());
        let f = m.forward(&x).unwrap();
        assert!((f.probabilities[1] - p1).abs() < 1e-12);
        assert!((f.probabilities[0] - (1.0 - p1)).abs() < 1e-12);
        assert_eq!(&f.trace_row[..4], &[1.0, 2.0, 0.0, 0.9]);
    }

    #[test]
    fn forward_errors() {
        let m = zero_model(vec![2, 2]);
        assert!(matches!(m.forward(&[1.0]), Err(Error::Shape(_))));
        assert!(matches!(
            m.forward(&[1.0, f64::NAN]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn softmax_shift_invariance() {
        let z = [0.3, -1.2, 4.0];
        let a = softmax(&z);
        let b = softmax(&z.map(|v| v + 123.4));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn output_bias_gradient_at_uniform_point() {
        let m = zero_model(vec![2, 3, 3]);
        let inputs = vec![vec![1.0, 2.0], vec![0.5, -1.0], vec![3.0, 0.0]];
        let labels = vec![0, 1, 2];
        let g = m.gradients(&inputs, &labels).unwrap();
        // mean(softmax - onehot) with softmax = 1/3 and one label per class
        for v in &g.biases[1] {
            assert!((v - 0.0).abs() < 1e-15);
        }
        let g = m.gradients(&inputs[..1], &labels[..1]).unwrap();
        assert!((g.biases[1][0] - (1.0 / 3.0 - 1.0)).abs() < 1e-15);
        assert!((g.biases[1][1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn duplicated_sample_same_gradient() {
        let m = MlpModel::init(MlpSpec::new(vec![3, 4, 2], 5)).unwrap();
        let x = vec![0.3, -0.7, 1.1];
        let one = m.gradients(std::slice::from_ref(&x), &[1]).unwrap();
        let two = m.gradients(&[x.clone(), x], &[1, 1]).unwrap();
        for (a, b) in one.values().zip(two.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_epochs_is_identity() {
        let m = MlpModel::init(MlpSpec::new(vec![1, 2, 2], 5)).unwrap();
        let t = LabeledTable::new(
            vec![vec![0.0], vec![1.0]],
            vec!["x".into()],
            vec![0, 1],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let (trained, report) = train(&m, &t, &cfg).unwrap();
        assert_eq!(trained, m);
        assert!(report.epoch_losses.is_empty());
    }

    fn two_blobs() -> LabeledTable {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            let jitter = (i as f64 * 0.37).sin() * 0.2;
            features.push(vec![-1.0 + jitter, 0.5 - jitter]);
            labels.push(0);
            features.push(vec![1.0 - jitter, -0.5 + jitter]);
            labels.push(1);
        }
        LabeledTable::new(
            features,
            vec!["a".into(), "b".into()],
            labels,
            vec!["left".into(), "right".into()],
        )
        .unwrap()
    }

    #[test]
    fn separable_blobs_are_learned() {
        let m = MlpModel::init(MlpSpec::new(vec![2, 4, 2], 1)).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            ..Default::default()
        };
        let (_, report) = train(&m, &two_blobs(), &cfg).unwrap();
        assert_eq!(report.train_accuracy, 1.0);
        assert!(report.epoch_losses.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn training_is_deterministic() {
        let m = MlpModel::init(MlpSpec::new(vec![2, 3, 2], 4)).unwrap();
        let cfg = TrainConfig {
            epochs: 20,
            seed: 11,
            ..Default::default()
        };
        let a = train(&m, &two_blobs(), &cfg).unwrap();
        let b = train(&m, &two_blobs(), &cfg).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.epoch_losses, b.1.epoch_losses);
    }

    #[test]
    fn divergence_is_reported() {
        let m = MlpModel::init(MlpSpec::new(vec![1, 2], 5)).unwrap();
        let t = LabeledTable::new(
            vec![vec![1e6], vec![-1e6], vec![2e6], vec![-3e6]],
            vec!["x".into()],
            vec![0, 1, 0, 1],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e6,
            momentum: 0.99,
            epochs: 200,
            batch_size: 2,
            seed: 0,
        };
        assert!(matches!(train(&m, &t, &cfg), Err(Error::Numeric(_))));
    }

    #[test]
    fn trace_csv_round_trip() {
        let m = MlpModel::init(MlpSpec::new(vec![2, 3, 2], 9)).unwrap();
        let t = LabeledTable::new(
            vec![vec![0.1, 0.2], vec![1.0 / 3.0, -4.0]],
            vec!["a".into(), "b".into()],
            vec![0, 1],
            vec!["p".into(), "q".into()],
        )
        .unwrap();
        let trace = capture_traces(&m, &t).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"sample_id,layer,node,value\n"));
        let back = ActivationTrace::read_csv(&buf[..], &[2, 3, 2]).unwrap();
        assert_eq!(back, trace);
    }

    #[test]
    fn model_json_round_trip() {
        let m = MlpModel::init(MlpSpec::new(vec![4, 6, 6, 3], 11)).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("\"layer_widths\""));
        let back: MlpModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }
}
