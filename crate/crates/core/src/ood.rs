//! Open-set detection scores layered on a trained classifier.
//!
//! * `thinkback`: treat the network's own prediction as ground truth, form the
//!   gradient of the temperature-scaled cross-entropy with respect to the
//!   final linear layer, and sum its squared entries, each divided by
//!   `ε + E[δw² | in-distribution training data]`.
//! * `softmax`: negated maximum softmax probability.
//! * `energy`: `−T · log Σ exp(z / T)`.
//!
//! Every score follows the same convention: higher means more likely OOD.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::data::{ExternalScoreTable, LabeledSample};
use crate::error::{Error, Result};
use crate::linalg::{self, ExactSum, Matrix};
use crate::network::MlpModel;
use crate::persist::{write_doc, Doc, DocWriter};

pub const DEFAULT_EPSILON: f64 = 1e-16;
pub const DEFAULT_TEMPERATURES: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Softmax,
    Energy,
    Thinkback,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Softmax, Method::Energy, Method::Thinkback];

    /// Name used in reports.
    pub fn title(self) -> &'static str {
        match self {
            Method::Softmax => "Softmax",
            Method::Energy => "Energy",
            Method::Thinkback => "Thinkback",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Softmax => "softmax",
            Method::Energy => "energy",
            Method::Thinkback => "thinkback",
        })
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "softmax" | "msp" => Ok(Method::Softmax),
            "energy" => Ok(Method::Energy),
            "thinkback" => Ok(Method::Thinkback),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

/// Which label the normalizer's training gradients are taken against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSource {
    Predicted,
    True,
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelSource::Predicted => "predicted",
            LabelSource::True => "true",
        })
    }
}

impl FromStr for LabelSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "predicted" => Ok(LabelSource::Predicted),
            "true" => Ok(LabelSource::True),
            other => Err(format!(
                "unknown label source `{other}` (expected `predicted` or `true`)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreConfig {
    pub method: Method,
    pub temperature: f64,
    pub include_bias: bool,
}

impl ScoreConfig {
    pub fn new(method: Method, temperature: f64) -> Self {
        ScoreConfig {
            method,
            temperature,
            include_bias: false,
        }
    }
}

/// Gradient of the pseudo-label loss with respect to the final layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LastLayerGrad {
    /// `K × d`.
    pub dw: Matrix,
    pub db: Vec<f64>,
    pub temperature: f64,
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("temperature must be positive, got {t}")))
    }
}

/// The network's prediction, lowest index on ties.
pub fn pseudo_label(z: &[f64]) -> Result<usize> {
    if z.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 logits, got {}",
            z.len()
        )));
    }
    linalg::argmax(z)
}

/// `dW[j][k] = (p_j − y_j)·h_k / T` and `db[j] = (p_j − y_j) / T` with
/// `p = softmax(z / T)` and `y = one_hot(label)`.
pub fn last_layer_grad(z: &[f64], h: &[f64], t: f64, label: usize) -> Result<LastLayerGrad> {
    check_temperature(t)?;
    if label >= z.len() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range [0, {})",
            z.len()
        )));
    }
    if h.is_empty() {
        return Err(Error::Empty("last_layer_grad features"));
    }
    let mut db = linalg::softmax(z, t)?;
    db[label] -= 1.0;
    db.iter_mut().for_each(|v| *v /= t);
    let mut dw = Vec::with_capacity(z.len() * h.len());
    for &dj in &db {
        dw.extend(h.iter().map(|hk| dj * hk));
    }
    Ok(LastLayerGrad {
        dw: Matrix::new(z.len(), h.len(), dw)?,
        db,
        temperature: t,
    })
}

/// `Σ dW²` (plus `Σ db²` when `include_bias`).
pub fn thinkback_raw(g: &LastLayerGrad, include_bias: bool) -> f64 {
    let w: f64 = g.dw.data().iter().map(|v| v * v).sum();
    if include_bias {
        w + g.db.iter().map(|v| v * v).sum::<f64>()
    } else {
        w
    }
}

/// Per-coordinate mean squared final-layer gradient over in-distribution
/// training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean_sq_grad: Matrix,
    pub mean_sq_bias: Vec<f64>,
    pub epsilon: f64,
    pub temperature: f64,
    pub n_samples: usize,
    pub label_source: LabelSource,
}

/// One training observation for [`fit_normalizer_from_logits`]:
/// logits, penultimate features and, optionally, the true label.
pub type LogitSample<'a> = (&'a [f64], &'a [f64], Option<usize>);

/// Fits the normalizer from precomputed logits and features. Sums are exact,
/// so the result does not depend on sample order or on duplicating the set.
pub fn fit_normalizer_from_logits<'a, I>(
    samples: I,
    t: f64,
    epsilon: f64,
    label_source: LabelSource,
) -> Result<Normalizer>
where
    I: IntoIterator<Item = LogitSample<'a>>,
{
    check_temperature(t)?;
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let mut shape: Option<(usize, usize)> = None;
    let mut w_acc: Vec<ExactSum> = Vec::new();
    let mut b_acc: Vec<ExactSum> = Vec::new();
    let mut n = 0usize;

    for (i, (z, h, truth)) in samples.into_iter().enumerate() {
        let label = match label_source {
            LabelSource::Predicted => pseudo_label(z)?,
            LabelSource::True => truth
                .ok_or_else(|| Error::InvalidArgument(format!("sample {i} has no true label for label_source=true")))?,
        };
        let g = last_layer_grad(z, h, t, label)?;
        match shape {
            None => {
                shape = Some(g.dw.shape());
                w_acc = vec![ExactSum::new(); g.dw.data().len()];
                b_acc = vec![ExactSum::new(); g.db.len()];
            }
            Some(s) if s != g.dw.shape() => {
                return Err(Error::dims(
                    "fit_normalizer",
                    format!("{s:?}"),
                    format!("sample {i}: {:?}", g.dw.shape()),
                ));
            }
            Some(_) => {}
        }
        w_acc.iter_mut().zip(g.dw.data()).for_each(|(a, v)| a.add(v * v));
        b_acc.iter_mut().zip(&g.db).for_each(|(a, v)| a.add(v * v));
        n += 1;
    }
    let (k, d) = shape.ok_or(Error::Empty("fit_normalizer"))?;
    let mean = |acc: &[ExactSum]| acc.iter().map(|a| a.value() / n as f64).collect::<Vec<f64>>();
    Ok(Normalizer {
        mean_sq_grad: Matrix::new(k, d, mean(&w_acc))?,
        mean_sq_bias: mean(&b_acc),
        epsilon,
        temperature: t,
        n_samples: n,
        label_source,
    })
}

/// Runs the model over `train_in` and fits the normalizer at temperature `t`.
pub fn fit_normalizer(
    model: &MlpModel,
    train_in: &[LabeledSample],
    t: f64,
    epsilon: f64,
    label_source: LabelSource,
) -> Result<Normalizer> {
    if train_in.is_empty() {
        return Err(Error::Empty("fit_normalizer"));
    }
    let traces = train_in
        .iter()
        .map(|s| model.forward(&s.features))
        .collect::<Result<Vec<_>>>()?;
    fit_normalizer_from_logits(
        traces
            .iter()
            .zip(train_in)
            .map(|(tr, s)| (tr.logits(), tr.penultimate(), Some(s.label))),
        t,
        epsilon,
        label_source,
    )
}

/// `Σ δw² / (ε + E[δw²])` over final-layer weight coordinates.
pub fn thinkback_score(g: &LastLayerGrad, n: &Normalizer, include_bias: bool) -> Result<f64> {
    if g.dw.shape() != n.mean_sq_grad.shape() {
        return Err(Error::dims(
            "thinkback_score",
            format!("gradient {:?}", g.dw.shape()),
            format!("normalizer {:?}", n.mean_sq_grad.shape()),
        ));
    }
    if g.temperature != n.temperature {
        return Err(Error::InvalidArgument(format!(
            "gradient temperature {} does not match normalizer temperature {}",
            g.temperature, n.temperature
        )));
    }
    let ratio = |(v, m): (&f64, &f64)| v * v / (n.epsilon + m);
    let mut score: f64 = g.dw.data().iter().zip(n.mean_sq_grad.data()).map(ratio).sum();
    if include_bias {
        score += g.db.iter().zip(&n.mean_sq_bias).map(ratio).sum::<f64>();
    }
    Ok(score)
}

/// `−max softmax(z)`.
pub fn msp_score(z: &[f64]) -> Result<f64> {
    let p = linalg::softmax(z, 1.0)?;
    Ok(-linalg::max(&p)?)
}

/// `−T · log Σ exp(z / T)`.
pub fn energy_score(z: &[f64], t: f64) -> Result<f64> {
    check_temperature(t)?;
    let scaled: Vec<f64> = z.iter().map(|v| v / t).collect();
    Ok(-t * linalg::log_sum_exp(&scaled)?)
}

/// Scores one sample from its logits and penultimate features.
pub fn score_logits(z: &[f64], h: &[f64], cfg: &ScoreConfig, normalizer: Option<&Normalizer>) -> Result<f64> {
    match cfg.method {
        Method::Softmax => msp_score(z),
        Method::Energy => energy_score(z, cfg.temperature),
        Method::Thinkback => {
            let n = normalizer.ok_or_else(missing_normalizer)?;
            let g = last_layer_grad(z, h, cfg.temperature, pseudo_label(z)?)?;
            thinkback_score(&g, n, cfg.include_bias)
        }
    }
}

fn missing_normalizer() -> Error {
    Error::InvalidArgument("thinkback scoring requires a fitted normalizer".into())
}

fn check_batch_config(cfg: &ScoreConfig, normalizer: Option<&Normalizer>) -> Result<()> {
    check_temperature(cfg.temperature)?;
    if cfg.method == Method::Thinkback && normalizer.is_none() {
        return Err(missing_normalizer());
    }
    Ok(())
}

/// Scores every sample independently, in parallel. Output order matches
/// input order and the values do not depend on scheduling.
pub fn score_batch(
    model: &MlpModel,
    samples: &[Vec<f64>],
    cfg: &ScoreConfig,
    normalizer: Option<&Normalizer>,
) -> Result<Vec<f64>> {
    check_batch_config(cfg, normalizer)?;
    samples
        .par_iter()
        .map(|x| {
            let tr = model.forward(x)?;
            score_logits(tr.logits(), tr.penultimate(), cfg, normalizer)
        })
        .collect()
}

/// Scores every row of an externally produced table, in row order.
pub fn score_external(
    table: &ExternalScoreTable,
    cfg: &ScoreConfig,
    normalizer: Option<&Normalizer>,
) -> Result<Vec<f64>> {
    check_batch_config(cfg, normalizer)?;
    table
        .rows
        .par_iter()
        .map(|r| score_logits(&r.logits, &r.penultimate, cfg, normalizer))
        .collect()
}

/// Population standard deviation.
pub fn population_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureSelection {
    pub selected: f64,
    /// `(T, std of validation scores)` in candidate order.
    pub per_candidate: Vec<(f64, f64)>,
}

/// Picks the candidate temperature whose Thinkback scores on `val_in` have
/// the smallest population standard deviation. `build_normalizer` fits the
/// normalizer for a given temperature. Ties go to the smaller temperature.
pub fn select_temperature<F>(
    model: &MlpModel,
    val_in: &[Vec<f64>],
    candidates: &[f64],
    include_bias: bool,
    mut build_normalizer: F,
) -> Result<TemperatureSelection>
where
    F: FnMut(f64) -> Result<Normalizer>,
{
    if val_in.is_empty() {
        return Err(Error::Empty("select_temperature validation set"));
    }
    if candidates.is_empty() {
        return Err(Error::Empty("select_temperature candidates"));
    }
    let mut per_candidate = Vec::with_capacity(candidates.len());
    let mut best: Option<(f64, f64)> = None;
    for &t in candidates {
        check_temperature(t)?;
        let n = build_normalizer(t)?;
        let cfg = ScoreConfig {
            method: Method::Thinkback,
            temperature: t,
            include_bias,
        };
        let scores = score_batch(model, val_in, &cfg, Some(&n))?;
        let std = population_std(&scores);
        if !std.is_finite() {
            return Err(Error::NonFinite(format!("validation score spread at T = {t}")));
        }
        per_candidate.push((t, std));
        best = match best {
            Some((bt, bs)) if bs < std || (bs == std && bt <= t) => Some((bt, bs)),
            _ => Some((t, std)),
        };
    }
    Ok(TemperatureSelection {
        selected: best.expect("candidates are non-empty").0,
        per_candidate,
    })
}

const NORMALIZER_KIND: &str = "normalizer";

pub fn normalizer_to_text(n: &Normalizer) -> String {
    let mut w = DocWriter::new(NORMALIZER_KIND);
    w.put_real("temperature", n.temperature);
    w.put_real("epsilon", n.epsilon);
    w.put("label_source", n.label_source);
    w.put("n_samples", n.n_samples);
    let (k, d) = n.mean_sq_grad.shape();
    w.put_counts("mean_sq_grad.shape", &[k, d]);
    w.put_reals("mean_sq_grad", n.mean_sq_grad.data());
    w.put_counts("mean_sq_bias.shape", &[k]);
    w.put_reals("mean_sq_bias", &n.mean_sq_bias);
    w.finish(NORMALIZER_KIND)
}

pub fn normalizer_from_doc(doc: &Doc) -> Result<Normalizer> {
    let shape: Vec<usize> = doc.list("mean_sq_grad.shape")?;
    let [k, d] = shape[..] else {
        return Err(doc.shape_error(format!("mean_sq_grad.shape must have two entries, got {shape:?}")));
    };
    let grad = doc.array("mean_sq_grad", &[k, d])?;
    let bias = doc.array("mean_sq_bias", &[k])?;
    let n = Normalizer {
        mean_sq_grad: Matrix::new(k, d, grad).map_err(|e| doc.shape_error(e.to_string()))?,
        mean_sq_bias: bias,
        epsilon: doc.parse_value("epsilon")?,
        temperature: doc.parse_value("temperature")?,
        n_samples: doc.parse_value("n_samples")?,
        label_source: doc.get("label_source")?.parse().map_err(|e: String| doc.malformed(e))?,
    };
    let negative = n.mean_sq_grad.data().iter().chain(&n.mean_sq_bias).any(|&v| v < 0.0);
    if negative || !(n.epsilon > 0.0) || !(n.temperature > 0.0) || n.n_samples == 0 {
        return Err(doc.malformed("normalizer values out of range"));
    }
    Ok(n)
}

pub fn save_normalizer(n: &Normalizer, path: &Path) -> Result<()> {
    write_doc(path, &normalizer_to_text(n))
}

pub fn load_normalizer(path: &Path) -> Result<Normalizer> {
    normalizer_from_doc(&Doc::read(path, NORMALIZER_KIND)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Rng;
    use crate::network::{init_mlp, MlpArch};

    fn rand_vec(rng: &mut Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| rng.uniform(lo, hi)).collect()
    }

    /// `−log softmax(W h / T)[label]` computed directly.
    fn pseudo_loss(w: &Matrix, h: &[f64], t: f64, label: usize) -> f64 {
        let z: Vec<f64> = (0..w.rows())
            .map(|j| w.row(j).iter().zip(h).map(|(a, b)| a * b).sum::<f64>() / t)
            .collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        lse - z[label]
    }

    fn symmetric() -> LastLayerGrad {
        last_layer_grad(&[0.0, 0.0], &[1.0, 0.0], 1.0, 0).unwrap()
    }

    #[test]
    fn pseudo_label_cases() {
        assert_eq!(pseudo_label(&[0.2, 0.9, 0.1]).unwrap(), 1);
        assert_eq!(pseudo_label(&[1.0, 1.0]).unwrap(), 0);
        assert!(pseudo_label(&[1.0]).is_err());
        let mut rng = Rng::new(2);
        for _ in 0..100 {
            let z: Vec<f64> = (0..5).map(|_| rng.below(3) as f64).collect();
            let scan = (0..z.len()).fold(0, |b, i| if z[i] > z[b] { i } else { b });
            assert_eq!(pseudo_label(&z).unwrap(), scan);
        }
    }

    #[test]
    fn symmetric_gradient_by_hand() {
        let g = symmetric();
        assert_eq!(g.dw.data(), &[-0.5, 0.0, 0.5, 0.0]);
        assert_eq!(thinkback_raw(&g, false), 0.5);

        let g5 = last_layer_grad(&[0.0, 0.0], &[1.0, 0.0], 5.0, 0).unwrap();
        let want = [-0.1, 0.0, 0.1, 0.0];
        for (a, b) in g5.dw.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(last_layer_grad(&[0.0, 0.0], &[1.0], 0.0, 0).is_err());
        assert!(last_layer_grad(&[0.0, 0.0], &[1.0], 1.0, 2).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::new(21);
        for _ in 0..20 {
            let (k, d) = (2 + rng.below(5), 1 + rng.below(8));
            let w = Matrix::new(k, d, rand_vec(&mut rng, k * d, -1.0, 1.0)).unwrap();
            let h = rand_vec(&mut rng, d, -2.0, 2.0);
            let z = linalg::matvec(&w, &h).unwrap();
            let t = rng.uniform(1.0, 5.0);
            let label = rng.below(k);
            let g = last_layer_grad(&z, &h, t, label).unwrap();
            let mut probe = w.clone();
            for i in 0..k * d {
                let orig = w.data()[i];
                probe.data_mut()[i] = orig + 1e-6;
                let up = pseudo_loss(&probe, &h, t, label);
                probe.data_mut()[i] = orig - 1e-6;
                let down = pseudo_loss(&probe, &h, t, label);
                probe.data_mut()[i] = orig;
                assert!(((up - down) / 2e-6 - g.dw.data()[i]).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn raw_score_laws() {
        let mut rng = Rng::new(5);
        let h: Vec<f64> = rand_vec(&mut rng, 4, -1.0, 1.0);
        let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        let h: Vec<f64> = h.iter().map(|v| v / norm).collect();
        let g = last_layer_grad(&[100.0, 0.0], &h, 1.0, 0).unwrap();
        assert!(thinkback_raw(&g, false) <= 1e-40);

        let z = [0.3, -1.2, 2.0];
        let base = thinkback_raw(&last_layer_grad(&z, &h, 2.0, 1).unwrap(), false);
        let h3: Vec<f64> = h.iter().map(|v| v * 3.0).collect();
        let scaled = thinkback_raw(&last_layer_grad(&z, &h3, 2.0, 1).unwrap(), false);
        assert!((scaled - 9.0 * base).abs() <= 1e-12 * scaled);
    }

    #[test]
    fn saturated_logits_bound() {
        // Σ_j (p_j − y_j)² ≤ 2 (K−1)² e^{−2m} for margin m.
        let mut rng = Rng::new(8);
        for _ in 0..200 {
            let k = 2 + rng.below(9);
            let margin = rng.uniform(30.0, 60.0);
            let mut z = rand_vec(&mut rng, k, -5.0, 0.0);
            z[0] = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + margin;
            let h = rand_vec(&mut rng, 6, -1.0, 1.0);
            let h2: f64 = h.iter().map(|v| v * v).sum();
            let raw = thinkback_raw(&last_layer_grad(&z, &h, 1.0, 0).unwrap(), false);
            let exact = 2.0 * ((k - 1) as f64).powi(2) * (-2.0 * margin).exp() * h2;
            // each p_j − y_j carries up to one ulp of 1.0 of rounding error
            let slack = (k as f64).sqrt() * f64::EPSILON * h2.sqrt();
            let bound = (exact.sqrt() + slack).powi(2);
            assert!(raw <= bound, "{raw} > {bound}");
            if margin >= 40.0 {
                assert!(raw <= 1e-30 * h2);
            }
        }
    }

    #[test]
    fn column_sums_vanish() {
        let mut rng = Rng::new(6);
        for _ in 0..50 {
            let k = 2 + rng.below(8);
            let z = rand_vec(&mut rng, k, -10.0, 10.0);
            let h = rand_vec(&mut rng, 5, -3.0, 3.0);
            let g = last_layer_grad(&z, &h, rng.uniform(1.0, 5.0), rng.below(k)).unwrap();
            for c in 0..5 {
                let s: f64 = (0..k).map(|j| g.dw.get(j, c)).sum();
                assert!(s.abs() <= 1e-12, "{s}");
            }
        }
    }

    fn toy_model() -> MlpModel {
        init_mlp(&MlpArch::new(vec![3, 6, 4]).unwrap(), 13).unwrap()
    }

    fn toy_samples(n: usize, seed: u64) -> Vec<LabeledSample> {
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|_| LabeledSample::new(rand_vec(&mut rng, 3, -2.0, 2.0), rng.below(4)))
            .collect()
    }

    #[test]
    fn normalizer_single_sample_and_duplicates() {
        let m = toy_model();
        let one = toy_samples(1, 1);
        let n1 = fit_normalizer(&m, &one, 2.0, DEFAULT_EPSILON, LabelSource::Predicted).unwrap();
        let tr = m.forward(&one[0].features).unwrap();
        let g = last_layer_grad(tr.logits(), tr.penultimate(), 2.0, pseudo_label(tr.logits()).unwrap()).unwrap();
        let sq: Vec<f64> = g.dw.data().iter().map(|v| v * v).collect();
        assert_eq!(n1.mean_sq_grad.data(), &sq[..]);
        assert_eq!(n1.n_samples, 1);

        let set = toy_samples(25, 2);
        let doubled: Vec<LabeledSample> = set.iter().flat_map(|s| [s.clone(), s.clone()]).collect();
        let mut reversed = set.clone();
        reversed.reverse();
        let a = fit_normalizer(&m, &set, 3.0, DEFAULT_EPSILON, LabelSource::True).unwrap();
        let b = fit_normalizer(&m, &doubled, 3.0, DEFAULT_EPSILON, LabelSource::True).unwrap();
        let c = fit_normalizer(&m, &reversed, 3.0, DEFAULT_EPSILON, LabelSource::True).unwrap();
        assert_eq!(a.mean_sq_grad, b.mean_sq_grad);
        assert_eq!(a.mean_sq_bias, b.mean_sq_bias);
        assert_eq!(a.mean_sq_grad, c.mean_sq_grad);

        assert!(fit_normalizer(&m, &[], 1.0, DEFAULT_EPSILON, LabelSource::Predicted).is_err());
        assert!(fit_normalizer(&m, &set, 1.0, 0.0, LabelSource::Predicted).is_err());
    }

    #[test]
    fn normalizer_matches_two_pass_mean() {
        let m = toy_model();
        let set = toy_samples(10, 3);
        let n = fit_normalizer(&m, &set, 1.5, DEFAULT_EPSILON, LabelSource::Predicted).unwrap();
        let grads: Vec<Vec<f64>> = set
            .iter()
            .map(|s| {
                let tr = m.forward(&s.features).unwrap();
                let label = pseudo_label(tr.logits()).unwrap();
                last_layer_grad(tr.logits(), tr.penultimate(), 1.5, label)
                    .unwrap()
                    .dw
                    .data()
                    .to_vec()
            })
            .collect();
        for i in 0..grads[0].len() {
            let mean = grads.iter().map(|g| g[i] * g[i]).sum::<f64>() / grads.len() as f64;
            assert!((n.mean_sq_grad.data()[i] - mean).abs() <= 1e-12);
        }
    }

    fn normalizer_with(mean: Vec<f64>, k: usize, d: usize, t: f64) -> Normalizer {
        Normalizer {
            mean_sq_grad: Matrix::new(k, d, mean).unwrap(),
            mean_sq_bias: vec![1.0; k],
            epsilon: DEFAULT_EPSILON,
            temperature: t,
            n_samples: 1,
            label_source: LabelSource::Predicted,
        }
    }

    #[test]
    fn normalized_score_cases() {
        let mut rng = Rng::new(4);
        let z = [0.5, -0.3, 0.1];
        let h = rand_vec(&mut rng, 4, 0.5, 1.5);
        let g = last_layer_grad(&z, &h, 2.0, 0).unwrap();
        let same: Vec<f64> = g.dw.data().iter().map(|v| v * v).collect();
        let n = normalizer_with(same, 3, 4, 2.0);
        let s = thinkback_score(&g, &n, false).unwrap();
        assert!((s - 12.0).abs() <= 1e-6 * 12.0);

        let zero = LastLayerGrad {
            dw: Matrix::zeros(3, 4).unwrap(),
            db: vec![0.0; 3],
            temperature: 2.0,
        };
        assert_eq!(thinkback_score(&zero, &n, true).unwrap(), 0.0);

        let wrong_t = last_layer_grad(&z, &h, 1.0, 0).unwrap();
        assert!(thinkback_score(&wrong_t, &n, false).is_err());
        let wrong_shape = last_layer_grad(&z, &h[..3], 2.0, 0).unwrap();
        assert!(thinkback_score(&wrong_shape, &n, false).is_err());
    }

    #[test]
    fn normalized_score_matches_loop() {
        let mut rng = Rng::new(10);
        for _ in 0..20 {
            let z = rand_vec(&mut rng, 5, -3.0, 3.0);
            let h = rand_vec(&mut rng, 7, -2.0, 2.0);
            let g = last_layer_grad(&z, &h, 3.0, rng.below(5)).unwrap();
            let n = normalizer_with(rand_vec(&mut rng, 35, 0.0, 0.1), 5, 7, 3.0);
            let mut want = 0.0;
            for j in 0..5 {
                for k in 0..7 {
                    want += g.dw.get(j, k).powi(2) / (n.epsilon + n.mean_sq_grad.get(j, k));
                }
            }
            assert!((thinkback_score(&g, &n, false).unwrap() - want).abs() <= 1e-12 * want.max(1.0));
        }
    }

    #[test]
    fn baseline_scores() {
        assert!((msp_score(&[0.0; 10]).unwrap() + 0.1).abs() < 1e-15);
        assert!((msp_score(&[100.0, 0.0]).unwrap() + 1.0).abs() < 1e-15);
        let z = [0.4, -1.0, 2.5];
        for c in [-100.0, 1000.0] {
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            assert!((msp_score(&shifted).unwrap() - msp_score(&z).unwrap()).abs() <= 1e-12);
        }

        assert!((energy_score(&[0.0; 10], 1.0).unwrap() + 10f64.ln()).abs() < 1e-12);
        assert!(energy_score(&z, 0.0).is_err());

        let mut rng = Rng::new(30);
        for _ in 0..50 {
            let z = rand_vec(&mut rng, 6, -10.0, 10.0);
            let t = rng.uniform(0.5, 5.0);
            let mut acc = ExactSum::new();
            z.iter().for_each(|v| acc.add((v / t).exp()));
            let direct = -t * acc.value().ln();
            assert!((energy_score(&z, t).unwrap() - direct).abs() <= 1e-10);
        }
    }

    #[test]
    fn batch_scoring_laws() {
        let m = toy_model();
        let train = toy_samples(30, 4);
        let n = fit_normalizer(&m, &train, 2.0, DEFAULT_EPSILON, LabelSource::Predicted).unwrap();
        let xs: Vec<Vec<f64>> = toy_samples(12, 5).into_iter().map(|s| s.features).collect();
        for method in Method::ALL {
            let cfg = ScoreConfig::new(method, 2.0);
            let batch = score_batch(&m, &xs, &cfg, Some(&n)).unwrap();
            let looped: Vec<f64> = xs
                .iter()
                .map(|x| {
                    let tr = m.forward(x).unwrap();
                    score_logits(tr.logits(), tr.penultimate(), &cfg, Some(&n)).unwrap()
                })
                .collect();
            assert_eq!(batch, looped);
            assert_eq!(score_batch(&m, &xs[3..4], &cfg, Some(&n)).unwrap(), vec![batch[3]]);
            let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
            let mut back = score_batch(&m, &rev, &cfg, Some(&n)).unwrap();
            back.reverse();
            assert_eq!(back, batch);
        }
        let cfg = ScoreConfig::new(Method::Thinkback, 2.0);
        assert!(score_batch(&m, &xs, &cfg, None).is_err());
    }

    #[test]
    fn temperature_selection_basics() {
        let m = toy_model();
        let train = toy_samples(30, 6);
        let val: Vec<Vec<f64>> = toy_samples(20, 7).into_iter().map(|s| s.features).collect();
        let build = |t| fit_normalizer(&m, &train, t, DEFAULT_EPSILON, LabelSource::Predicted);
        let one = select_temperature(&m, &val, &[3.0], false, build).unwrap();
        assert_eq!(one.selected, 3.0);
        let all = select_temperature(&m, &val, &DEFAULT_TEMPERATURES, false, build).unwrap();
        assert!(DEFAULT_TEMPERATURES.contains(&all.selected));
        let best = all.per_candidate.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let first_best = all.per_candidate.iter().find(|p| p.1 == best).unwrap().0;
        assert_eq!(all.selected, first_best);
        assert_eq!(
            all,
            select_temperature(&m, &val, &DEFAULT_TEMPERATURES, false, build).unwrap()
        );
        assert!(select_temperature(&m, &[], &[1.0], false, build).is_err());
        assert!(select_temperature(&m, &val, &[], false, build).is_err());
    }

    #[test]
    fn normalizer_persistence() {
        let m = toy_model();
        let n = fit_normalizer(&m, &toy_samples(8, 9), 4.0, DEFAULT_EPSILON, LabelSource::True).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n.txt");
        save_normalizer(&n, &p).unwrap();
        assert_eq!(load_normalizer(&p).unwrap(), n);
        let text = std::fs::read_to_string(&p).unwrap();
        std::fs::write(&p, text.replace("mean_sq_grad.shape = 4 6", "mean_sq_grad.shape = 4 5")).unwrap();
        assert!(matches!(load_normalizer(&p), Err(Error::ShapeInconsistency { .. })));
    }
}
