//! Synthetic Gaussian-blob benchmarks with held-out OOD clusters, and CSV
//! ingestion of labeled features and externally exported logits/features.
//!
//! CSV layouts (UTF-8, comma separated, `\n` line endings, no quoting):
//!
//! * labeled features: `label,f0,f1,...,f{d-1}`
//! * external scores:  `id,partition,z0,...,z{K-1},h0,...,h{d-1}` with
//!   `partition` one of `in` / `ood`

use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: usize,
}

impl LabeledSample {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        LabeledSample { features, label }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train_in: Vec<LabeledSample>,
    pub val_in: Vec<LabeledSample>,
    pub test_in: Vec<LabeledSample>,
    pub test_ood: Vec<Vec<f64>>,
    pub feature_dim: usize,
    pub k_in: usize,
}

impl DatasetSplit {
    pub fn test_in_features(&self) -> Vec<Vec<f64>> {
        self.test_in.iter().map(|s| s.features.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlobConfig {
    pub k_in: usize,
    pub k_ood: usize,
    pub dim: usize,
    pub n_per_class: usize,
    /// Per-class standard deviation σ.
    pub in_class_spread: f64,
    /// Distance of OOD centers from the in-distribution centroid, in σ.
    pub ood_offset: f64,
    pub seed: u64,
    /// (train, val, test) fractions of each in-distribution class.
    pub split_fractions: (f64, f64, f64),
}

impl Default for BlobConfig {
    fn default() -> Self {
        BlobConfig {
            k_in: 4,
            k_ood: 2,
            dim: 2,
            n_per_class: 300,
            in_class_spread: 1.0,
            ood_offset: 8.0,
            seed: 42,
            split_fractions: (0.6, 0.2, 0.2),
        }
    }
}

/// Minimum pairwise distance between in-distribution centers, in σ.
pub const CENTER_SEPARATION: f64 = 4.0;
/// Minimum distance from an OOD center to any in-distribution center, as a
/// fraction of `ood_offset`.
pub const OOD_CLEARANCE_RATIO: f64 = 0.75;
/// Unit directions closer than this are redrawn before scaling, which caps
/// the in-distribution radius at `CENTER_SEPARATION / MIN_UNIT_SEPARATION` σ.
const MIN_UNIT_SEPARATION: f64 = 0.5;
const OUTER_ATTEMPTS: usize = 1000;
const DIRECTION_ATTEMPTS: usize = 1000;

impl BlobConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.split_fractions;
        let bad = |msg: &str| Err(Error::Config(format!("blob config: {msg}")));
        if self.k_in < 2 {
            return bad("k_in must be at least 2");
        }
        if self.k_ood < 1 {
            return bad("k_ood must be at least 1");
        }
        if self.dim < 1 || self.n_per_class < 1 {
            return bad("dim and n_per_class must be positive");
        }
        if !(self.in_class_spread > 0.0) || !(self.ood_offset > 0.0) {
            return bad("spread and ood_offset must be positive");
        }
        if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return bad("split fractions must be positive and sum to 1");
        }
        Ok(())
    }

    /// Per-class partition sizes `(train, val, test)`.
    fn partition_sizes(&self) -> (usize, usize, usize) {
        let n = self.n_per_class;
        let train = (n as f64 * self.split_fractions.0).round() as usize;
        let val = ((n as f64 * self.split_fractions.1).round() as usize).min(n - train.min(n));
        (train.min(n), val, n - train.min(n) - val)
    }

    /// Samples drawn per OOD cluster: one class's test share.
    fn ood_per_class(&self) -> usize {
        self.partition_sizes().2
    }
}

fn unit_direction(rng: &mut Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn min_pairwise(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            best = best.min(distance(&points[i], &points[j]));
        }
    }
    best
}

/// Cluster centers `(in_centers, ood_centers)` for `cfg`.
pub fn blob_centers(cfg: &BlobConfig, rng: &mut Rng) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let sigma = cfg.in_class_spread;
    let offset = cfg.ood_offset * sigma;
    let clearance = OOD_CLEARANCE_RATIO * offset;

    'outer: for _ in 0..OUTER_ATTEMPTS {
        let units: Vec<Vec<f64>> = (0..cfg.k_in).map(|_| unit_direction(rng, cfg.dim)).collect();
        let d_min = min_pairwise(&units);
        if d_min < MIN_UNIT_SEPARATION {
            continue;
        }
        let scale = CENTER_SEPARATION * sigma / d_min;
        let in_centers: Vec<Vec<f64>> = units.iter().map(|u| u.iter().map(|x| x * scale).collect()).collect();
        let centroid: Vec<f64> = (0..cfg.dim)
            .map(|j| in_centers.iter().map(|c| c[j]).sum::<f64>() / cfg.k_in as f64)
            .collect();

        let mut ood_centers: Vec<Vec<f64>> = Vec::with_capacity(cfg.k_ood);
        for _ in 0..cfg.k_ood {
            let found = (0..DIRECTION_ATTEMPTS).find_map(|_| {
                let u = unit_direction(rng, cfg.dim);
                let c: Vec<f64> = centroid.iter().zip(&u).map(|(m, d)| m + offset * d).collect();
                let clear_in = in_centers.iter().all(|ic| distance(ic, &c) >= clearance);
                let clear_ood = ood_centers
                    .iter()
                    .all(|oc| distance(oc, &c) >= CENTER_SEPARATION * sigma);
                (clear_in && clear_ood).then_some(c)
            });
            match found {
                Some(c) => ood_centers.push(c),
                None => continue 'outer,
            }
        }
        return Ok((in_centers, ood_centers));
    }
    Err(Error::InvalidArgument(format!(
        "could not place {} in-distribution and {} OOD centers in dimension {} after {} attempts",
        cfg.k_in, cfg.k_ood, cfg.dim, OUTER_ATTEMPTS
    )))
}

fn sample_around(rng: &mut Rng, center: &[f64], sigma: f64) -> Vec<f64> {
    center.iter().map(|c| c + sigma * rng.normal()).collect()
}

/// Generates the blob benchmark. Pure function of `cfg`.
pub fn gen_blobs(cfg: &BlobConfig) -> Result<DatasetSplit> {
    cfg.validate()?;
    let (n_train, n_val, n_test) = cfg.partition_sizes();
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Config(format!(
            "n_per_class = {} leaves an empty partition under split {:?}",
            cfg.n_per_class, cfg.split_fractions
        )));
    }
    let mut rng = Rng::new(cfg.seed);
    let (in_centers, ood_centers) = blob_centers(cfg, &mut rng)?;
    let sigma = cfg.in_class_spread;

    let mut split = DatasetSplit {
        train_in: Vec::new(),
        val_in: Vec::new(),
        test_in: Vec::new(),
        test_ood: Vec::new(),
        feature_dim: cfg.dim,
        k_in: cfg.k_in,
    };
    for (label, center) in in_centers.iter().enumerate() {
        for i in 0..cfg.n_per_class {
            let s = LabeledSample::new(sample_around(&mut rng, center, sigma), label);
            if i < n_train {
                split.train_in.push(s);
            } else if i < n_train + n_val {
                split.val_in.push(s);
            } else {
                split.test_in.push(s);
            }
        }
    }
    for center in &ood_centers {
        for _ in 0..cfg.ood_per_class() {
            split.test_ood.push(sample_around(&mut rng, center, sigma));
        }
    }
    Ok(split)
}

/// 17 significant digits in scientific notation; parses back to the
/// identical `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::None)
        .from_reader(file))
}

pub(crate) fn csv_error(path: &Path, line: u64, reason: impl Into<String>) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

pub(crate) fn read_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    csv_error(path, line, e.to_string())
}

pub(crate) fn parse_cell<T: FromStr>(path: &Path, line: u64, col: &str, cell: &str) -> Result<T> {
    cell.parse()
        .map_err(|_| csv_error(path, line, format!("column `{col}`: cannot parse `{cell}`")))
}

pub(crate) fn parse_real(path: &Path, line: u64, col: &str, cell: &str) -> Result<f64> {
    let v: f64 = parse_cell(path, line, col, cell)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(csv_error(
            path,
            line,
            format!("column `{col}`: non-finite value `{cell}`"),
        ))
    }
}

/// Reads `label,f0,...` rows. `expect_dim` checks the feature width and
/// `num_classes` bounds the labels.
pub fn load_labeled_csv(
    path: &Path,
    expect_dim: Option<usize>,
    num_classes: Option<usize>,
) -> Result<Vec<LabeledSample>> {
    let mut reader = csv_reader(path)?;
    let header = reader.headers().map_err(|e| read_err(path, e))?.clone();
    let width = header.len();
    if width < 2 || &header[0] != "label" {
        return Err(csv_error(
            path,
            1,
            "header must start with `label` followed by feature columns",
        ));
    }
    for (j, name) in header.iter().skip(1).enumerate() {
        if name != format!("f{j}") {
            return Err(csv_error(path, 1, format!("expected column `f{j}`, found `{name}`")));
        }
    }
    if let Some(d) = expect_dim {
        if width - 1 != d {
            return Err(csv_error(
                path,
                1,
                format!("expected {d} features, header has {}", width - 1),
            ));
        }
    }

    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| read_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(csv_error(
                path,
                line,
                format!("ragged row: {} cells, header has {width}", record.len()),
            ));
        }
        let label: usize = parse_cell(path, line, "label", &record[0])?;
        if let Some(k) = num_classes {
            if label >= k {
                return Err(csv_error(path, line, format!("label {label} out of range [0, {k})")));
            }
        }
        let features = record
            .iter()
            .skip(1)
            .enumerate()
            .map(|(j, cell)| parse_real(path, line, &header[j + 1], cell))
            .collect::<Result<Vec<f64>>>()?;
        out.push(LabeledSample { features, label });
    }
    Ok(out)
}

pub fn write_labeled_csv(path: &Path, samples: &[LabeledSample]) -> Result<()> {
    let dim = samples.first().map_or(0, |s| s.features.len());
    let mut text = String::from("label");
    for j in 0..dim {
        text.push_str(&format!(",f{j}"));
    }
    text.push('\n');
    for s in samples {
        if s.features.len() != dim {
            return Err(Error::dims("write_labeled_csv", dim, s.features.len()));
        }
        text.push_str(&s.label.to_string());
        for v in &s.features {
            text.push(',');
            text.push_str(&fmt_f64(*v));
        }
        text.push('\n');
    }
    write_atomically(path, text.as_bytes())
}

/// Writes through a temporary sibling file and renames it into place, so a
/// failed write never leaves partial output behind.
pub fn write_atomically(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Partition {
    In,
    Ood,
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partition::In => "in",
            Partition::Ood => "ood",
        })
    }
}

impl FromStr for Partition {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "in" => Ok(Partition::In),
            "ood" => Ok(Partition::Ood),
            other => Err(format!("unknown partition tag `{other}` (expected `in` or `ood`)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalRow {
    pub id: String,
    pub partition: Partition,
    pub logits: Vec<f64>,
    pub penultimate: Vec<f64>,
}

/// Logits and penultimate features exported from an arbitrary model.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalScoreTable {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub rows: Vec<ExternalRow>,
}

impl ExternalScoreTable {
    pub fn new(rows: Vec<ExternalRow>) -> Result<Self> {
        let first = rows.first().ok_or(Error::Empty("ExternalScoreTable"))?;
        let (k, d) = (first.logits.len(), first.penultimate.len());
        if k < 2 || d < 1 {
            return Err(Error::InvalidArgument(format!(
                "external table needs at least 2 logits and 1 feature, got K={k}, d={d}"
            )));
        }
        if let Some(r) = rows.iter().find(|r| r.logits.len() != k || r.penultimate.len() != d) {
            return Err(Error::dims(
                "ExternalScoreTable",
                format!("K={k}, d={d}"),
                format!("row `{}` with K={}, d={}", r.id, r.logits.len(), r.penultimate.len()),
            ));
        }
        let table = ExternalScoreTable {
            num_classes: k,
            feature_dim: d,
            rows,
        };
        for p in [Partition::In, Partition::Ood] {
            if table.rows.iter().all(|r| r.partition != p) {
                return Err(Error::InvalidArgument(format!("external table has no `{p}` rows")));
            }
        }
        Ok(table)
    }
}

/// Reads the external score layout. Every row must agree with the header's
/// `z*` and `h*` column counts, and both partitions must be present.
pub fn load_external_scores(path: &Path) -> Result<ExternalScoreTable> {
    ExternalScoreTable::new(load_external_rows(path)?).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Same layout as [`load_external_scores`] without the partition check, for
/// training-set exports that hold only `in` rows.
pub fn load_external_rows(path: &Path) -> Result<Vec<ExternalRow>> {
    let mut reader = csv_reader(path)?;
    let header = reader.headers().map_err(|e| read_err(path, e))?.clone();
    if header.len() < 2 || &header[0] != "id" || &header[1] != "partition" {
        return Err(csv_error(path, 1, "header must start with `id,partition`"));
    }
    let k = header.iter().skip(2).take_while(|c| c.starts_with('z')).count();
    let d = header.len() - 2 - k;
    for j in 0..k {
        if header[2 + j] != format!("z{j}") {
            return Err(csv_error(
                path,
                1,
                format!("expected column `z{j}`, found `{}`", &header[2 + j]),
            ));
        }
    }
    for j in 0..d {
        if header[2 + k + j] != format!("h{j}") {
            return Err(csv_error(
                path,
                1,
                format!("expected column `h{j}`, found `{}`", &header[2 + k + j]),
            ));
        }
    }
    if k < 2 || d < 1 {
        return Err(csv_error(
            path,
            1,
            format!("need at least z0,z1 and h0 columns (found K={k}, d={d})"),
        ));
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| read_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(csv_error(
                path,
                line,
                format!(
                    "inconsistent dimensions: {} cells, header declares K={k}, d={d} ({} cells)",
                    record.len(),
                    header.len()
                ),
            ));
        }
        let partition: Partition = record[1].parse().map_err(|e: String| csv_error(path, line, e))?;
        let reals = |range: std::ops::Range<usize>| {
            range
                .map(|c| parse_real(path, line, &header[c], &record[c]))
                .collect::<Result<Vec<f64>>>()
        };
        rows.push(ExternalRow {
            id: record[0].to_string(),
            partition,
            logits: reals(2..2 + k)?,
            penultimate: reals(2 + k..2 + k + d)?,
        });
    }
    if rows.is_empty() {
        return Err(csv_error(path, 2, "no data rows"));
    }
    Ok(rows)
}

pub fn write_external_scores(path: &Path, table: &ExternalScoreTable) -> Result<()> {
    let mut text = String::from("id,partition");
    for j in 0..table.num_classes {
        text.push_str(&format!(",z{j}"));
    }
    for j in 0..table.feature_dim {
        text.push_str(&format!(",h{j}"));
    }
    text.push('\n');
    for row in &table.rows {
        text.push_str(&format!("{},{}", row.id, row.partition));
        for v in row.logits.iter().chain(&row.penultimate) {
            text.push(',');
            text.push_str(&fmt_f64(*v));
        }
        text.push('\n');
    }
    write_atomically(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn blobs_are_deterministic() {
        let cfg = BlobConfig::default();
        assert_eq!(gen_blobs(&cfg).unwrap(), gen_blobs(&cfg).unwrap());
        let other = BlobConfig {
            seed: 43,
            ..cfg.clone()
        };
        assert_ne!(gen_blobs(&cfg).unwrap(), gen_blobs(&other).unwrap());
    }

    #[test]
    fn blobs_are_stratified_and_sized() {
        let cfg = BlobConfig::default();
        let split = gen_blobs(&cfg).unwrap();
        let mut hist = vec![0usize; cfg.k_in];
        split.train_in.iter().for_each(|s| hist[s.label] += 1);
        let (lo, hi) = (hist.iter().min().unwrap(), hist.iter().max().unwrap());
        assert!(hi - lo <= 1, "{hist:?}");
        assert_eq!(split.train_in.len(), 720);
        assert_eq!(split.val_in.len(), 240);
        assert_eq!(split.test_in.len(), 240);
        assert_eq!(split.test_ood.len(), 120);
        let total = split.train_in.len() + split.val_in.len() + split.test_in.len();
        assert_eq!(total, cfg.k_in * cfg.n_per_class);
    }

    #[test]
    fn centers_respect_separation() {
        let cfg = BlobConfig {
            dim: 3,
            k_in: 5,
            k_ood: 3,
            ..Default::default()
        };
        let (ins, oods) = blob_centers(&cfg, &mut Rng::new(1)).unwrap();
        assert!(min_pairwise(&ins) >= CENTER_SEPARATION - 1e-9);
        for o in &oods {
            for i in &ins {
                assert!(distance(o, i) >= OOD_CLEARANCE_RATIO * cfg.ood_offset - 1e-9);
            }
        }
    }

    #[test]
    fn impossible_geometry_errors() {
        let cfg = BlobConfig {
            dim: 1,
            k_in: 3,
            ..Default::default()
        };
        assert!(gen_blobs(&cfg).is_err());
    }

    #[test]
    fn nearest_centroid_separates_ood() {
        let cfg = BlobConfig::default();
        let split = gen_blobs(&cfg).unwrap();
        let dim = split.feature_dim;
        let mean = |pts: Vec<&Vec<f64>>| -> Vec<f64> {
            let n = pts.len() as f64;
            (0..dim).map(|j| pts.iter().map(|p| p[j]).sum::<f64>() / n).collect()
        };
        let mut in_centroids = Vec::new();
        for k in 0..split.k_in {
            in_centroids.push(mean(
                split
                    .train_in
                    .iter()
                    .filter(|s| s.label == k)
                    .map(|s| &s.features)
                    .collect(),
            ));
        }
        // OOD samples are stored cluster by cluster.
        let ood_centroids: Vec<Vec<f64>> = split
            .test_ood
            .chunks(split.test_ood.len() / cfg.k_ood)
            .map(|chunk| mean(chunk.iter().collect()))
            .collect();
        let is_ood = |x: &[f64]| {
            let d_in = in_centroids
                .iter()
                .map(|c| distance(c, x))
                .fold(f64::INFINITY, f64::min);
            let d_ood = ood_centroids
                .iter()
                .map(|c| distance(c, x))
                .fold(f64::INFINITY, f64::min);
            d_ood < d_in
        };
        let correct = split.test_in.iter().filter(|s| !is_ood(&s.features)).count()
            + split.test_ood.iter().filter(|x| is_ood(x)).count();
        let acc = correct as f64 / (split.test_in.len() + split.test_ood.len()) as f64;
        assert!(acc >= 0.99, "nearest-centroid accuracy {acc}");
    }

    #[test]
    fn labeled_csv_reads_hand_written_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "label,f0,f1\n0,1.5,-2\n2,0,3e-3\n1,7,8\n");
        let got = load_labeled_csv(&p, Some(2), Some(3)).unwrap();
        assert_eq!(
            got,
            vec![
                LabeledSample::new(vec![1.5, -2.0], 0),
                LabeledSample::new(vec![0.0, 3e-3], 2),
                LabeledSample::new(vec![7.0, 8.0], 1),
            ]
        );
    }

    #[test]
    fn labeled_csv_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "r.csv", "label,f0,f1\n0,1,2\n1,3\n");
        let err = load_labeled_csv(&p, None, None).unwrap_err();
        assert!(matches!(err, Error::Csv { line: 3, .. }), "{err}");

        let p = write(&dir, "n.csv", "label,f0\n0,abc\n");
        let err = load_labeled_csv(&p, None, None).unwrap_err();
        assert!(matches!(err, Error::Csv { line: 2, .. }), "{err}");

        let p = write(&dir, "l.csv", "label,f0\n0,1\n5,1\n");
        let err = load_labeled_csv(&p, None, Some(3)).unwrap_err();
        assert!(matches!(err, Error::Csv { line: 3, .. }), "{err}");

        let err = load_labeled_csv(&dir.path().join("missing.csv"), None, None).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn labeled_csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.csv");
        let mut rng = Rng::new(17);
        let samples: Vec<LabeledSample> = (0..50)
            .map(|_| {
                let f = (0..3)
                    .map(|_| rng.normal() * 10f64.powi(rng.below(20) as i32 - 10))
                    .collect();
                LabeledSample::new(f, rng.below(4))
            })
            .collect();
        write_labeled_csv(&p, &samples).unwrap();
        assert_eq!(load_labeled_csv(&p, Some(3), Some(4)).unwrap(), samples);
    }

    #[test]
    fn external_table_minimal_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "ok.csv", "id,partition,z0,z1,h0\na,in,1,0,0.5\nb,ood,0,0,2\n");
        let t = load_external_scores(&p).unwrap();
        assert_eq!((t.num_classes, t.feature_dim, t.rows.len()), (2, 1, 2));
        assert_eq!(t.rows[1].partition, Partition::Ood);

        let p = write(&dir, "k.csv", "id,partition,z0,z1,h0\na,in,1,0,0.5\nb,ood,0,0,1,2\n");
        let err = load_external_scores(&p).unwrap_err();
        assert!(err.to_string().contains("inconsistent dimensions"), "{err}");

        let p = write(&dir, "tag.csv", "id,partition,z0,z1,h0\na,in,1,0,0.5\nb,test,0,0,1\n");
        let err = load_external_scores(&p).unwrap_err();
        assert!(err.to_string().contains("unknown partition"), "{err}");

        let p = write(&dir, "one.csv", "id,partition,z0,z1,h0\na,in,1,0,0.5\n");
        assert!(load_external_scores(&p).is_err());
    }
}
