//! Batch commands behind the `oodkit` binary.
//!
//! Every command takes a [`RunConfig`] built from defaults, then an optional
//! `key = value` config file, then command-line overrides. Outputs go to
//! `out` through an atomic rename, or to stdout when no path is set.
//! Timings and throughput go to stderr so report files stay reproducible.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::data::{
    csv_error, csv_reader, fmt_f64, gen_blobs, load_external_rows, load_external_scores, load_labeled_csv, parse_real,
    read_err, write_atomically, BlobConfig, DatasetSplit, ExternalScoreTable, LabeledSample, Partition,
};
use crate::error::{Error, Result};
use crate::metrics::{MetricRow, ScoreSet};
use crate::network::{init_mlp, load_model, save_model, train, MlpArch, MlpModel, TrainConfig};
use crate::ood::{
    fit_normalizer, fit_normalizer_from_logits, load_normalizer, save_normalizer, score_batch, score_external,
    select_temperature, LabelSource, Method, Normalizer, ScoreConfig, TemperatureSelection, DEFAULT_EPSILON,
    DEFAULT_TEMPERATURES,
};
use crate::report::{EvalReport, Format, ReportMeta};

/// Labeled CSV inputs, used instead of the blob generator when any is set.
/// OOD rows use the same `label,f0,...` layout; their labels are ignored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataFiles {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test_in: Option<PathBuf>,
    pub test_ood: Option<PathBuf>,
}

impl DataFiles {
    fn any(&self) -> bool {
        self.train.is_some() || self.val.is_some() || self.test_in.is_some() || self.test_ood.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub blob: BlobConfig,
    pub files: DataFiles,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub methods: Vec<Method>,
    /// Fixed Thinkback temperature; when unset it is selected on validation data.
    pub temperature: Option<f64>,
    pub temperature_candidates: Vec<f64>,
    pub energy_temperature: f64,
    pub epsilon: f64,
    pub include_bias: bool,
    pub label_source: LabelSource,
    pub model: Option<PathBuf>,
    pub normalizer: Option<PathBuf>,
    pub external: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub format: Format,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            blob: BlobConfig::default(),
            files: DataFiles::default(),
            hidden: vec![32, 32],
            train: TrainConfig::default(),
            methods: Method::ALL.to_vec(),
            temperature: None,
            temperature_candidates: DEFAULT_TEMPERATURES.to_vec(),
            energy_temperature: 1.0,
            epsilon: DEFAULT_EPSILON,
            include_bias: false,
            label_source: LabelSource::Predicted,
            model: None,
            normalizer: None,
            external: None,
            scores: None,
            out: None,
            format: Format::Text,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

pub fn parse_methods(value: &str) -> Result<Vec<Method>> {
    if value == "all" {
        return Ok(Method::ALL.to_vec());
    }
    let mut out: Vec<Method> = Vec::new();
    for part in value.split(',').map(str::trim) {
        let m: Method = part.parse().map_err(Error::Config)?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("`method`: empty list".into()));
    }
    Ok(out)
}

impl RunConfig {
    /// Applies one setting. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let path = || Some(PathBuf::from(value));
        match key {
            "seed" => {
                let s: u64 = parse(key, value)?;
                self.blob.seed = s;
                self.train.seed = s;
            }
            "data_seed" => self.blob.seed = parse(key, value)?,
            "train_seed" => self.train.seed = parse(key, value)?,
            "k_in" => self.blob.k_in = parse(key, value)?,
            "k_ood" => self.blob.k_ood = parse(key, value)?,
            "dim" => self.blob.dim = parse(key, value)?,
            "n_per_class" => self.blob.n_per_class = parse(key, value)?,
            "spread" => self.blob.in_class_spread = parse(key, value)?,
            "ood_offset" => self.blob.ood_offset = parse(key, value)?,
            "split" => match parse_list::<f64>(key, value)?.as_slice() {
                &[a, b, c] => self.blob.split_fractions = (a, b, c),
                _ => return Err(Error::Config("`split`: expected three fractions".into())),
            },
            "train_csv" => self.files.train = path(),
            "val_csv" => self.files.val = path(),
            "test_in_csv" => self.files.test_in = path(),
            "test_ood_csv" => self.files.test_ood = path(),
            "hidden" => self.hidden = parse_list(key, value)?,
            "lr" => self.train.lr = parse(key, value)?,
            "epochs" => self.train.epochs = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "shuffle" => self.train.shuffle = parse_bool(key, value)?,
            "method" => self.methods = parse_methods(value)?,
            "temperature" => self.temperature = Some(parse(key, value)?),
            "temperatures" => self.temperature_candidates = parse_list(key, value)?,
            "energy_temperature" => self.energy_temperature = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "include_bias" => self.include_bias = parse_bool(key, value)?,
            "label_source" => self.label_source = value.parse().map_err(Error::Config)?,
            "model" => self.model = path(),
            "normalizer" => self.normalizer = path(),
            "external" => self.external = path(),
            "scores" => self.scores = path(),
            "out" => self.out = path(),
            "format" => self.format = value.parse().map_err(Error::Config)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{}:{}: expected `key = value`", origin.display(), i + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("{}:{}: {e}", origin.display(), i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.blob.validate()?;
        self.train.validate()?;
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("`{name}` must be positive, got {v}")))
            }
        };
        if let Some(t) = self.temperature {
            positive("temperature", t)?;
        }
        if self.temperature_candidates.is_empty() {
            return Err(Error::Config("`temperatures` must not be empty".into()));
        }
        for &t in &self.temperature_candidates {
            positive("temperatures", t)?;
        }
        positive("energy_temperature", self.energy_temperature)?;
        positive("epsilon", self.epsilon)?;
        Ok(())
    }

    pub fn dataset_name(&self) -> &'static str {
        if self.files.any() {
            "csv"
        } else {
            "blobs"
        }
    }

    fn required<'a>(&self, p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        p.as_deref()
            .ok_or_else(|| Error::Config(format!("`{key}` is required for this command")))
    }
}

/// The splits a command asks for. Missing files are a config error only when
/// the command needs them.
#[derive(Clone, Copy)]
struct Need {
    train: bool,
    val: bool,
    test: bool,
}

/// Generates blobs or reads the configured CSV files.
pub fn load_dataset(cfg: &RunConfig) -> Result<DatasetSplit> {
    load_needed(
        cfg,
        Need {
            train: true,
            val: true,
            test: true,
        },
    )
}

fn load_needed(cfg: &RunConfig, need: Need) -> Result<DatasetSplit> {
    if !cfg.files.any() {
        return gen_blobs(&cfg.blob);
    }
    let k = cfg.blob.k_in;
    let f = &cfg.files;
    let mut dim: Option<usize> = None;
    let mut labeled =
        |p: &Option<PathBuf>, key: &str, needed: bool, classes: Option<usize>| -> Result<Vec<LabeledSample>> {
            if !needed {
                return Ok(Vec::new());
            }
            let path = cfg.required(p, key)?;
            let rows = load_labeled_csv(path, dim, classes)?;
            if let Some(first) = rows.first() {
                dim = Some(first.features.len());
            }
            Ok(rows)
        };
    let train_in = labeled(&f.train, "train_csv", need.train, Some(k))?;
    let val_in = labeled(&f.val, "val_csv", need.val, Some(k))?;
    let test_in = labeled(&f.test_in, "test_in_csv", need.test, Some(k))?;
    let test_ood = labeled(&f.test_ood, "test_ood_csv", need.test, None)?
        .into_iter()
        .map(|s| s.features)
        .collect();
    Ok(DatasetSplit {
        train_in,
        val_in,
        test_in,
        test_ood,
        feature_dim: dim.unwrap_or(cfg.blob.dim),
        k_in: k,
    })
}

fn features(samples: &[LabeledSample]) -> Vec<Vec<f64>> {
    samples.iter().map(|s| s.features.clone()).collect()
}

/// Writes to `out`, or prints when no path is configured.
fn emit(cfg: &RunConfig, text: &str) -> Result<()> {
    match &cfg.out {
        Some(p) => write_atomically(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

fn fit_and_train(cfg: &RunConfig, data: &DatasetSplit) -> Result<MlpModel> {
    let mut sizes = vec![data.feature_dim];
    sizes.extend(&cfg.hidden);
    sizes.push(data.k_in);
    let arch = MlpArch::new(sizes)?;
    let init = init_mlp(&arch, cfg.train.seed)?;
    train(&init, &data.train_in, &cfg.train)
}

/// Uses the configured temperature, or selects one on `val_in` with
/// normalizers fitted on `train_in`.
fn resolve_temperature(
    cfg: &RunConfig,
    model: &MlpModel,
    data: &DatasetSplit,
) -> Result<(f64, Option<TemperatureSelection>)> {
    if let Some(t) = cfg.temperature {
        return Ok((t, None));
    }
    let sel = run_selection(cfg, model, data)?;
    Ok((sel.selected, Some(sel)))
}

fn run_selection(cfg: &RunConfig, model: &MlpModel, data: &DatasetSplit) -> Result<TemperatureSelection> {
    let val = features(&data.val_in);
    select_temperature(model, &val, &cfg.temperature_candidates, cfg.include_bias, |t| {
        fit_normalizer(model, &data.train_in, t, cfg.epsilon, cfg.label_source)
    })
}

fn score_config(cfg: &RunConfig, method: Method, normalizer: Option<&Normalizer>) -> Result<ScoreConfig> {
    let temperature = match method {
        Method::Softmax => 1.0,
        Method::Energy => cfg.energy_temperature,
        Method::Thinkback => {
            let n = normalizer.ok_or_else(|| Error::Config("thinkback scoring needs a normalizer".into()))?;
            if let Some(t) = cfg.temperature {
                if t != n.temperature {
                    return Err(Error::Config(format!(
                        "temperature {t} differs from the normalizer's temperature {}",
                        n.temperature
                    )));
                }
            }
            n.temperature
        }
    };
    Ok(ScoreConfig {
        method,
        temperature,
        include_bias: cfg.include_bias,
    })
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub report: EvalReport,
    pub rendered: String,
    pub selection: Option<TemperatureSelection>,
    pub timings: Vec<(&'static str, Duration)>,
}

/// Data, training, temperature selection, normalizer, scoring and metrics.
/// Writes nothing.
pub fn run_bench(cfg: &RunConfig) -> Result<BenchOutcome> {
    cfg.validate()?;
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &'static str, timings: &mut Vec<(&'static str, Duration)>| {
        timings.push((name, clock.elapsed()));
        clock = Instant::now();
    };

    let data = stage("data", load_dataset(cfg))?;
    lap("data", &mut timings);
    let model = stage("train", fit_and_train(cfg, &data))?;
    lap("train", &mut timings);
    let (t, selection) = stage("select-temperature", resolve_temperature(cfg, &model, &data))?;
    lap("select-temperature", &mut timings);
    let normalizer = stage(
        "fit-normalizer",
        fit_normalizer(&model, &data.train_in, t, cfg.epsilon, cfg.label_source),
    )?;
    lap("fit-normalizer", &mut timings);

    let test_in = data.test_in_features();
    let mut results = Vec::new();
    for &method in &cfg.methods {
        let sc = score_config(cfg, method, Some(&normalizer))?;
        let set = stage(
            "score",
            (|| {
                let a = score_batch(&model, &test_in, &sc, Some(&normalizer))?;
                let b = score_batch(&model, &data.test_ood, &sc, Some(&normalizer))?;
                ScoreSet::new(a, b)
            })(),
        )?;
        results.push((method, MetricRow::evaluate(&set)));
    }
    lap("score+metrics", &mut timings);

    let meta = ReportMeta {
        seed: Some(cfg.train.seed),
        thinkback_temperature: cfg.methods.contains(&Method::Thinkback).then_some(t),
        energy_temperature: cfg.methods.contains(&Method::Energy).then_some(cfg.energy_temperature),
        epsilon: cfg.methods.contains(&Method::Thinkback).then_some(cfg.epsilon),
    };
    let report = EvalReport::new(cfg.dataset_name(), &results, meta);
    let rendered = report.render(cfg.format);
    Ok(BenchOutcome {
        report,
        rendered,
        selection,
        timings,
    })
}

pub fn cmd_bench(cfg: &RunConfig) -> Result<BenchOutcome> {
    let outcome = run_bench(cfg)?;
    emit(cfg, &outcome.rendered)?;
    if let Some(sel) = &outcome.selection {
        eprintln!(
            "selected temperature {} (candidate std: {})",
            sel.selected,
            format_candidates(sel)
        );
    }
    for (name, d) in &outcome.timings {
        eprintln!("timing {name}: {:.3} s", d.as_secs_f64());
    }
    Ok(outcome)
}

fn format_candidates(sel: &TemperatureSelection) -> String {
    let parts: Vec<String> = sel
        .per_candidate
        .iter()
        .map(|(t, s)| format!("T={t}: {s:.6e}"))
        .collect();
    parts.join(", ")
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub final_loss: f64,
    pub train_accuracy: f64,
}

/// Trains on `train_in` and saves the model to `out` (or `model`).
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dest = cfg
        .out
        .as_deref()
        .or(cfg.model.as_deref())
        .ok_or_else(|| Error::Config("train needs an output path (`--out` or `model`)".into()))?;
    let data = stage(
        "data",
        load_needed(
            cfg,
            Need {
                train: true,
                val: false,
                test: false,
            },
        ),
    )?;
    let model = stage("train", fit_and_train(cfg, &data))?;
    let final_loss = model.train_meta.as_ref().map_or(f64::NAN, |m| m.final_loss);
    let train_accuracy = model.accuracy(&data.train_in)?;
    save_model(&model, dest)?;
    println!("final_loss = {}", fmt_f64(final_loss));
    println!("train_accuracy = {train_accuracy:.4}");
    Ok(TrainOutcome {
        model,
        final_loss,
        train_accuracy,
    })
}

/// Fits the Thinkback normalizer and saves it to `out` (or `normalizer`).
///
/// With `external` set, the `in` rows of that table are the training set and
/// `temperature` must be given. Otherwise the model runs over `train_in`, and
/// the temperature is selected on `val_in` unless fixed.
pub fn cmd_fit_normalizer(cfg: &RunConfig) -> Result<Normalizer> {
    cfg.validate()?;
    let dest = cfg
        .out
        .as_deref()
        .or(cfg.normalizer.as_deref())
        .ok_or_else(|| Error::Config("fit-normalizer needs an output path (`--out` or `normalizer`)".into()))?;
    let n = if let Some(ext) = &cfg.external {
        let t = cfg
            .temperature
            .ok_or_else(|| Error::Config("external normalizer fitting needs `temperature`".into()))?;
        if cfg.label_source == LabelSource::True {
            return Err(Error::Config(
                "external tables carry no labels; use label_source = predicted".into(),
            ));
        }
        let rows = stage("data", load_external_rows(ext))?;
        let train: Vec<_> = rows.iter().filter(|r| r.partition == Partition::In).collect();
        stage(
            "fit-normalizer",
            fit_normalizer_from_logits(
                train
                    .iter()
                    .map(|r| (r.logits.as_slice(), r.penultimate.as_slice(), None)),
                t,
                cfg.epsilon,
                cfg.label_source,
            ),
        )?
    } else {
        let model = load_model(cfg.required(&cfg.model, "model")?)?;
        let need_val = cfg.temperature.is_none();
        let data = stage(
            "data",
            load_needed(
                cfg,
                Need {
                    train: true,
                    val: need_val,
                    test: false,
                },
            ),
        )?;
        let (t, sel) = stage("select-temperature", resolve_temperature(cfg, &model, &data))?;
        if let Some(sel) = sel {
            eprintln!(
                "selected temperature {} (candidate std: {})",
                sel.selected,
                format_candidates(&sel)
            );
        }
        stage(
            "fit-normalizer",
            fit_normalizer(&model, &data.train_in, t, cfg.epsilon, cfg.label_source),
        )?
    };
    save_normalizer(&n, dest)?;
    println!("temperature = {}", n.temperature);
    println!("n_samples = {}", n.n_samples);
    Ok(n)
}

/// One line of a scores file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub id: String,
    pub partition: Partition,
    pub method: Method,
    pub score: f64,
}

pub fn render_scores(records: &[ScoreRecord]) -> String {
    let mut out = String::from("id,partition,method,score\n");
    for r in records {
        out.push_str(&format!("{},{},{},{}\n", r.id, r.partition, r.method, fmt_f64(r.score)));
    }
    out
}

pub fn load_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    let mut reader = csv_reader(path)?;
    let header = reader.headers().map_err(|e| read_err(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != ["id", "partition", "method", "score"] {
        return Err(csv_error(path, 1, "header must be `id,partition,method,score`"));
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| read_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 4 {
            return Err(csv_error(
                path,
                line,
                format!("expected 4 cells, found {}", record.len()),
            ));
        }
        out.push(ScoreRecord {
            id: record[0].to_string(),
            partition: record[1].parse().map_err(|e: String| csv_error(path, line, e))?,
            method: record[2].parse().map_err(|e: String| csv_error(path, line, e))?,
            score: parse_real(path, line, "score", &record[3])?,
        });
    }
    Ok(out)
}

fn external_records(table: &ExternalScoreTable, method: Method, scores: Vec<f64>) -> Vec<ScoreRecord> {
    table
        .rows
        .iter()
        .zip(scores)
        .map(|(r, score)| ScoreRecord {
            id: r.id.clone(),
            partition: r.partition,
            method,
            score,
        })
        .collect()
}

/// Scores test data with every configured method, method by method, `in`
/// rows before `ood` rows (model mode) or in table order (external mode).
pub fn cmd_score(cfg: &RunConfig) -> Result<Vec<ScoreRecord>> {
    cfg.validate()?;
    let normalizer = match &cfg.normalizer {
        Some(p) => Some(load_normalizer(p)?),
        None => None,
    };
    let started = Instant::now();
    let mut records = Vec::new();
    let mut n_samples = 0;

    if let Some(ext) = &cfg.external {
        let table = stage("data", load_external_scores(ext))?;
        n_samples = table.rows.len();
        for &method in &cfg.methods {
            let sc = score_config(cfg, method, normalizer.as_ref())?;
            let scores = stage("score", score_external(&table, &sc, normalizer.as_ref()))?;
            records.extend(external_records(&table, method, scores));
        }
    } else {
        let model = load_model(cfg.required(&cfg.model, "model")?)?;
        let data = stage(
            "data",
            load_needed(
                cfg,
                Need {
                    train: false,
                    val: false,
                    test: true,
                },
            ),
        )?;
        let parts = [
            (Partition::In, data.test_in_features()),
            (Partition::Ood, data.test_ood.clone()),
        ];
        for &method in &cfg.methods {
            let sc = score_config(cfg, method, normalizer.as_ref())?;
            for (partition, xs) in &parts {
                let scores = stage("score", score_batch(&model, xs, &sc, normalizer.as_ref()))?;
                n_samples += xs.len();
                records.extend(scores.into_iter().enumerate().map(|(i, score)| ScoreRecord {
                    id: format!("{partition}-{i}"),
                    partition: *partition,
                    method,
                    score,
                }));
            }
        }
        n_samples /= cfg.methods.len();
    }

    let elapsed = started.elapsed().as_secs_f64();
    emit(cfg, &render_scores(&records))?;
    eprintln!(
        "scored {n_samples} samples x {} methods in {:.3} s ({:.1} us/sample/method)",
        cfg.methods.len(),
        elapsed,
        1e6 * elapsed / (n_samples * cfg.methods.len()).max(1) as f64
    );
    Ok(records)
}

/// Metrics per method from a scores file, with deltas when Softmax is present.
pub fn eval_records(records: &[ScoreRecord], dataset: &str, path: &Path) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            reason: "no score rows".into(),
        });
    }
    let mut results = Vec::new();
    for method in Method::ALL {
        let of = |p: Partition| -> Vec<f64> {
            records
                .iter()
                .filter(|r| r.method == method && r.partition == p)
                .map(|r| r.score)
                .collect()
        };
        let (a, b) = (of(Partition::In), of(Partition::Ood));
        if a.is_empty() && b.is_empty() {
            continue;
        }
        if a.is_empty() || b.is_empty() {
            let missing = if a.is_empty() { Partition::In } else { Partition::Ood };
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                reason: format!("method `{method}` has no `{missing}` rows"),
            });
        }
        results.push((method, MetricRow::evaluate(&ScoreSet::new(a, b)?)));
    }
    Ok(EvalReport::new(dataset, &results, ReportMeta::default()))
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    let path = cfg.required(&cfg.scores, "scores")?;
    let records = load_scores(path)?;
    let dataset = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scores");
    let report = eval_records(&records, dataset, path)?;
    emit(cfg, &report.render(cfg.format))?;
    Ok(report)
}

pub fn render_selection(sel: &TemperatureSelection) -> String {
    let mut out = String::from("temperature,std\n");
    for (t, s) in &sel.per_candidate {
        out.push_str(&format!("{t},{}\n", fmt_f64(*s)));
    }
    out.push_str(&format!("# selected temperature = {}\n", sel.selected));
    out
}

/// Prints the validation spread per candidate and the selected temperature.
pub fn cmd_select_temp(cfg: &RunConfig) -> Result<TemperatureSelection> {
    cfg.validate()?;
    let model = load_model(cfg.required(&cfg.model, "model")?)?;
    let data = stage(
        "data",
        load_needed(
            cfg,
            Need {
                train: true,
                val: true,
                test: false,
            },
        ),
    )?;
    let sel = stage("select-temperature", run_selection(cfg, &model, &data))?;
    emit(cfg, &render_selection(&sel))?;
    Ok(sel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{write_external_scores, ExternalRow};

    fn small() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.blob.n_per_class = 40;
        cfg.train.epochs = 5;
        cfg.hidden = vec![8];
        cfg
    }

    #[test]
    fn config_text_and_overrides() {
        let mut cfg = RunConfig::default();
        cfg.apply_text(
            "# comment\nseed = 7\nhidden = 16, 16\nmethod = softmax,thinkback\nformat = csv\n",
            Path::new("x"),
        )
        .unwrap();
        assert_eq!((cfg.blob.seed, cfg.train.seed), (7, 7));
        assert_eq!(cfg.hidden, vec![16, 16]);
        assert_eq!(cfg.methods, vec![Method::Softmax, Method::Thinkback]);
        assert_eq!(cfg.format, Format::Csv);
        cfg.set("seed", "9").unwrap();
        assert_eq!(cfg.train.seed, 9);

        let e = cfg.apply_text("nonsense = 1\n", Path::new("x")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(cfg.apply_text("no equals sign\n", Path::new("x")).is_err());
        assert!(cfg.set("epochs", "many").is_err());
        assert!(cfg.set("split", "0.5,0.5").is_err());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let mut cfg = RunConfig::default();
        cfg.set("epsilon", "0").unwrap();
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        let mut cfg = RunConfig::default();
        cfg.set("temperatures", "").unwrap();
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn bench_schema_and_stage_errors() {
        let out = run_bench(&small()).unwrap();
        assert_eq!(out.report.rows.len(), 3);
        for m in Method::ALL {
            assert!(out.report.row("blobs", m).is_some());
        }
        assert!(out.rendered.contains("TPR10") && out.rendered.contains("AUPR"));

        let mut bad = small();
        bad.blob.dim = 1;
        bad.blob.k_in = 3;
        match run_bench(&bad).unwrap_err() {
            Error::Stage { stage, .. } => assert_eq!(stage, "data"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn score_requires_normalizer_for_thinkback() {
        let cfg = RunConfig::default();
        assert!(score_config(&cfg, Method::Thinkback, None).is_err());
        assert!(score_config(&cfg, Method::Energy, None).is_ok());
    }

    #[test]
    fn eval_reports_missing_partition() {
        let rec = |p, m, s| ScoreRecord {
            id: "a".into(),
            partition: p,
            method: m,
            score: s,
        };
        let recs = vec![
            rec(Partition::In, Method::Softmax, 0.0),
            rec(Partition::Ood, Method::Softmax, 1.0),
            rec(Partition::In, Method::Energy, 0.0),
        ];
        let e = eval_records(&recs, "x", Path::new("s.csv")).unwrap_err();
        assert_eq!(e.exit_code(), 3);
        let rep = eval_records(&recs[..2], "x", Path::new("s.csv")).unwrap();
        assert_eq!(rep.rows[0].percents[2].to_string(), "100.00");
        assert_eq!(rep.rows[0].percents[1].to_string(), "0.00");
    }

    #[test]
    fn external_normalizer_from_in_rows_only() {
        let dir = tempfile::tempdir().unwrap();
        let table = ExternalScoreTable::new(vec![
            ExternalRow {
                id: "a".into(),
                partition: Partition::In,
                logits: vec![2.0, 0.0],
                penultimate: vec![1.0],
            },
            ExternalRow {
                id: "b".into(),
                partition: Partition::Ood,
                logits: vec![0.0, 0.0],
                penultimate: vec![5.0],
            },
        ])
        .unwrap();
        let ext = dir.path().join("t.csv");
        write_external_scores(&ext, &table).unwrap();
        let mut cfg = RunConfig::default();
        cfg.external = Some(ext);
        cfg.out = Some(dir.path().join("n.txt"));
        assert_eq!(cmd_fit_normalizer(&cfg).unwrap_err().exit_code(), 2);
        cfg.temperature = Some(1.0);
        let n = cmd_fit_normalizer(&cfg).unwrap();
        assert_eq!(n.n_samples, 1);
        let p = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((n.mean_sq_grad.get(0, 0) - (p - 1.0).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn missing_files_are_reported() {
        let mut cfg = small();
        cfg.files.train = Some(PathBuf::from("/nonexistent/train.csv"));
        cfg.out = Some(std::env::temp_dir().join("oodkit-never-written.txt"));
        let e = cmd_train(&cfg).unwrap_err();
        assert_eq!(e.exit_code(), 3);
        assert!(!cfg.out.as_ref().unwrap().exists());
    }
}
