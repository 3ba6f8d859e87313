//! Fully connected ReLU network: forward pass exposing penultimate features
//! and logits, backpropagation of the temperature-scaled cross-entropy, and
//! deterministic minibatch SGD.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::data::LabeledSample;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Rng, Vector};
use crate::persist::{write_doc, Doc, DocWriter};

/// Stream tags for [`Rng::derived`].
pub const INIT_STREAM: u64 = 1;
pub const SHUFFLE_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("relu")
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "relu" => Ok(Activation::Relu),
            other => Err(format!("unsupported activation `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpArch {
    /// Input width, hidden widths, number of classes.
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation,
}

impl MlpArch {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        let arch = MlpArch {
            layer_sizes,
            hidden_activation: Activation::Relu,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 || self.layer_sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "architecture needs at least two non-zero layer sizes, got {:?}",
                self.layer_sizes
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn penultimate_dim(&self) -> usize {
        self.layer_sizes[self.layer_sizes.len() - 2]
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Mean cross-entropy over the training set after the last epoch.
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub arch: MlpArch,
    /// `weights[l]` is `layer_sizes[l + 1] × layer_sizes[l]`.
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vector>,
    pub train_meta: Option<TrainMeta>,
}

/// Glorot-uniform weights, zero biases.
pub fn init_mlp(arch: &MlpArch, seed: u64) -> Result<MlpModel> {
    arch.validate()?;
    let mut rng = Rng::derived(seed, INIT_STREAM);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for pair in arch.layer_sizes.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.uniform(-limit, limit)).collect();
        weights.push(Matrix::new(fan_out, fan_in, data)?);
        biases.push(Vector::zeros(fan_out)?);
    }
    Ok(MlpModel {
        arch: arch.clone(),
        weights,
        biases,
        train_meta: None,
    })
}

/// Every intermediate of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `pre_activations[l] = W_l · activations[l] + b_l`.
    pub pre_activations: Vec<Vec<f64>>,
    /// `activations[0]` is the input; the last entry is the logits.
    pub activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    /// Input to the final linear layer.
    pub fn penultimate(&self) -> &[f64] {
        &self.activations[self.activations.len() - 2]
    }

    pub fn logits(&self) -> &[f64] {
        self.activations.last().unwrap()
    }
}

/// Per-layer parameter gradients, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Gradients {
            weights: model
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()).expect("model shapes are non-empty"))
                .collect(),
            biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    fn reset(&mut self) {
        self.weights.iter_mut().for_each(|w| w.data_mut().fill(0.0));
        self.biases.iter_mut().for_each(|b| b.fill(0.0));
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.data().iter())
            .chain(self.biases.iter().flatten())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl MlpModel {
    pub fn num_classes(&self) -> usize {
        self.arch.num_classes()
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        if x.len() != self.arch.input_dim() {
            return Err(Error::dims(
                "forward",
                format!("input dim {}", self.arch.input_dim()),
                x.len(),
            ));
        }
        let last = self.weights.len() - 1;
        let mut pre_activations = Vec::with_capacity(self.weights.len());
        let mut activations = Vec::with_capacity(self.weights.len() + 1);
        activations.push(x.to_vec());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = linalg::matvec(w, &activations[l])?;
            z.iter_mut().zip(b.iter()).for_each(|(zi, bi)| *zi += bi);
            let a = if l == last {
                z.clone()
            } else {
                z.iter().map(|&v| v.max(0.0)).collect()
            };
            pre_activations.push(z);
            activations.push(a);
        }
        Ok(ForwardTrace {
            pre_activations,
            activations,
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        linalg::argmax(self.forward(x)?.logits())
    }

    /// Adds the gradient of `-log softmax(z / t)[label]` for this trace into
    /// `acc` and returns the loss.
    fn backprop_into(&self, trace: &ForwardTrace, label: usize, t: f64, acc: &mut Gradients) -> Result<f64> {
        let z = trace.logits();
        if label >= z.len() {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range [0, {})",
                z.len()
            )));
        }
        let p = linalg::softmax(z, t)?;
        let scaled: Vec<f64> = z.iter().map(|v| v / t).collect();
        let loss = linalg::log_sum_exp(&scaled)? - scaled[label];

        // dL/dz = (p - y) / t
        let mut delta: Vec<f64> = p.iter().map(|pi| pi / t).collect();
        delta[label] -= 1.0 / t;

        for l in (0..self.weights.len()).rev() {
            let input = &trace.activations[l];
            let gw = &mut acc.weights[l];
            for (j, &dj) in delta.iter().enumerate() {
                for (g, &a) in gw.row_mut(j).iter_mut().zip(input) {
                    *g += dj * a;
                }
            }
            acc.biases[l].iter_mut().zip(&delta).for_each(|(g, d)| *g += d);
            if l > 0 {
                let mut back = linalg::matvec_transposed(&self.weights[l], &delta)?;
                for (bk, &pre) in back.iter_mut().zip(&trace.pre_activations[l - 1]) {
                    if pre <= 0.0 {
                        *bk = 0.0;
                    }
                }
                delta = back;
            }
        }
        Ok(loss)
    }

    /// Loss and all-layer gradients for one labeled input at temperature `t`.
    pub fn loss_and_grads(&self, x: &[f64], label: usize, t: f64) -> Result<(f64, Gradients)> {
        let trace = self.forward(x)?;
        let mut grads = Gradients::zeros_like(self);
        let loss = self.backprop_into(&trace, label, t, &mut grads)?;
        Ok((loss, grads))
    }

    pub fn loss(&self, x: &[f64], label: usize, t: f64) -> Result<f64> {
        let z = self.forward(x)?.logits().to_vec();
        if label >= z.len() {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range [0, {})",
                z.len()
            )));
        }
        let scaled: Vec<f64> = z.iter().map(|v| v / t).collect();
        Ok(linalg::log_sum_exp(&scaled)? - scaled[label])
    }

    pub fn mean_loss(&self, data: &[LabeledSample]) -> Result<f64> {
        let mut total = 0.0;
        for s in data {
            total += self.loss(&s.features, s.label, 1.0)?;
        }
        Ok(total / data.len() as f64)
    }

    pub fn accuracy(&self, data: &[LabeledSample]) -> Result<f64> {
        let mut hits = 0usize;
        for s in data {
            hits += usize::from(self.predict(&s.features)? == s.label);
        }
        Ok(hits as f64 / data.len() as f64)
    }

    fn check_finite(&self) -> Result<()> {
        let finite = self
            .weights
            .iter()
            .flat_map(|w| w.data().iter())
            .chain(self.biases.iter().flat_map(|b| b.iter()))
            .all(|v| v.is_finite());
        if finite {
            Ok(())
        } else {
            Err(Error::NonFinite(
                "model parameters after training (learning rate too high?)".into(),
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.05,
            epochs: 200,
            batch_size: 32,
            seed: 42,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be non-negative, got {}",
                self.lr
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_dataset(model: &MlpModel, data: &[LabeledSample]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let (d, k) = (model.arch.input_dim(), model.num_classes());
    for (i, s) in data.iter().enumerate() {
        if s.features.len() != d {
            return Err(Error::dims(
                "train",
                format!("input dim {d}"),
                format!("sample {i} with {} features", s.features.len()),
            ));
        }
        if s.label >= k {
            return Err(Error::InvalidArgument(format!(
                "sample {i}: label {} out of range [0, {k})",
                s.label
            )));
        }
    }
    Ok(())
}

/// Minibatch SGD at temperature 1. Returns the trained model and the mean
/// per-sample loss seen during each epoch (measured before each batch's
/// update).
pub fn train_with_history(model: &MlpModel, data: &[LabeledSample], cfg: &TrainConfig) -> Result<(MlpModel, Vec<f64>)> {
    cfg.validate()?;
    check_dataset(model, data)?;
    let mut net = model.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = Rng::derived(cfg.seed, SHUFFLE_STREAM);
    let mut grads = Gradients::zeros_like(&net);
    let mut history = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        if cfg.shuffle {
            rng.shuffle(&mut order);
        }
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.reset();
            for &i in batch {
                let s = &data[i];
                let trace = net.forward(&s.features)?;
                epoch_loss += net.backprop_into(&trace, s.label, 1.0, &mut grads)?;
            }
            let step = cfg.lr / batch.len() as f64;
            for (w, g) in net.weights.iter_mut().zip(&grads.weights) {
                w.data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .for_each(|(p, gi)| *p -= step * gi);
            }
            for (b, g) in net.biases.iter_mut().zip(&grads.biases) {
                b.as_mut_slice().iter_mut().zip(g).for_each(|(p, gi)| *p -= step * gi);
            }
        }
        history.push(epoch_loss / data.len() as f64);
    }
    net.check_finite()?;
    net.train_meta = Some(TrainMeta {
        seed: cfg.seed,
        epochs: cfg.epochs,
        lr: cfg.lr,
        batch_size: cfg.batch_size,
        final_loss: net.mean_loss(data)?,
    });
    Ok((net, history))
}

pub fn train(model: &MlpModel, data: &[LabeledSample], cfg: &TrainConfig) -> Result<MlpModel> {
    train_with_history(model, data, cfg).map(|(m, _)| m)
}

const MODEL_KIND: &str = "mlp_model";

pub fn model_to_text(model: &MlpModel) -> String {
    let mut w = DocWriter::new(MODEL_KIND);
    w.put_counts("layer_sizes", &model.arch.layer_sizes);
    w.put("hidden_activation", model.arch.hidden_activation);
    match &model.train_meta {
        None => w.put("train_meta", "none"),
        Some(m) => {
            w.put("train_meta", "present");
            w.put("train_meta.seed", m.seed);
            w.put("train_meta.epochs", m.epochs);
            w.put_real("train_meta.lr", m.lr);
            w.put("train_meta.batch_size", m.batch_size);
            w.put_real("train_meta.final_loss", m.final_loss);
        }
    }
    for (l, (wm, b)) in model.weights.iter().zip(&model.biases).enumerate() {
        w.put_counts(&format!("layer.{l}.weight.shape"), &[wm.rows(), wm.cols()]);
        w.put_reals(&format!("layer.{l}.weight"), wm.data());
        w.put_counts(&format!("layer.{l}.bias.shape"), &[b.len()]);
        w.put_reals(&format!("layer.{l}.bias"), b);
    }
    w.finish(MODEL_KIND)
}

pub fn model_from_doc(doc: &Doc) -> Result<MlpModel> {
    let layer_sizes: Vec<usize> = doc.list("layer_sizes")?;
    let hidden_activation: Activation = doc
        .get("hidden_activation")?
        .parse()
        .map_err(|e: String| doc.malformed(e))?;
    let arch = MlpArch {
        layer_sizes,
        hidden_activation,
    };
    arch.validate().map_err(|e| doc.shape_error(e.to_string()))?;

    let train_meta = match doc.get("train_meta")? {
        "none" => None,
        "present" => Some(TrainMeta {
            seed: doc.parse_value("train_meta.seed")?,
            epochs: doc.parse_value("train_meta.epochs")?,
            lr: doc.parse_value("train_meta.lr")?,
            batch_size: doc.parse_value("train_meta.batch_size")?,
            final_loss: doc.parse_value("train_meta.final_loss")?,
        }),
        other => return Err(doc.malformed(format!("train_meta: unexpected value `{other}`"))),
    };

    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for (l, pair) in arch.layer_sizes.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let w = doc.array(&format!("layer.{l}.weight"), &[fan_out, fan_in])?;
        let b = doc.array(&format!("layer.{l}.bias"), &[fan_out])?;
        weights.push(Matrix::new(fan_out, fan_in, w)?);
        biases.push(Vector::new(b)?);
    }
    Ok(MlpModel {
        arch,
        weights,
        biases,
        train_meta,
    })
}

pub fn save_model(model: &MlpModel, path: &Path) -> Result<()> {
    write_doc(path, &model_to_text(model))
}

pub fn load_model(path: &Path) -> Result<MlpModel> {
    model_from_doc(&Doc::read(path, MODEL_KIND)?)
}
