//! Accuracy metrics, baselines and report files.
//!
//! `metrics.csv` columns:
//!
//! ```text
//! method,seed,client,overall,head,mid,tail,acc_class_0,…,acc_class_{C-1}
//! ```
//!
//! `client` is a client id, `mean` (macro average over clients) or `pooled`
//! (all clients' test samples counted together). Accuracies are fractions
//! in `[0, 1]`; `NaN` marks a class or group with no test samples.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::Serialize;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nncore::{init_model, train_epochs, ArchSpec, LossKind, Matrix, ModelParams, OptState, SgdHyper, TrainSpec};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ClientTag {
    Id(usize),
    Mean,
    Pooled,
}

impl fmt::Display for ClientTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClientTag::Id(k) => write!(f, "{k}"),
            ClientTag::Mean => f.write_str("mean"),
            ClientTag::Pooled => f.write_str("pooled"),
        }
    }
}

impl std::str::FromStr for ClientTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(ClientTag::Mean),
            "pooled" => Ok(ClientTag::Pooled),
            _ => s
                .parse()
                .map(ClientTag::Id)
                .map_err(|_| Error::InvalidArgument(format!("bad client tag `{s}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MetricsRecord {
    pub method: String,
    pub seed: u64,
    pub client: ClientTag,
    pub overall: f64,
    pub head: f64,
    pub mid: f64,
    pub tail: f64,
    pub per_class: Vec<f64>,
}

fn same_float(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan())
}

impl PartialEq for MetricsRecord {
    fn eq(&self, other: &Self) -> bool {
        self.method == other.method
            && self.seed == other.seed
            && self.client == other.client
            && same_float(self.overall, other.overall)
            && same_float(self.head, other.head)
            && same_float(self.mid, other.mid)
            && same_float(self.tail, other.tail)
            && self.per_class.len() == other.per_class.len()
            && self
                .per_class
                .iter()
                .zip(&other.per_class)
                .all(|(a, b)| same_float(*a, *b))
    }
}

/// Head / mid / tail thirds of the classes ordered by descending count
/// (ties by index); remainder classes go to the head, then the mid group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassGroups {
    pub head: Vec<usize>,
    pub mid: Vec<usize>,
    pub tail: Vec<usize>,
}

impl ClassGroups {
    pub fn from_counts(counts: &[usize]) -> Self {
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        let c = counts.len();
        let head_len = c / 3 + usize::from(!c.is_multiple_of(3));
        let mid_len = c / 3 + usize::from(c % 3 > 1);
        ClassGroups {
            head: order[..head_len].to_vec(),
            mid: order[head_len..head_len + mid_len].to_vec(),
            tail: order[head_len + mid_len..].to_vec(),
        }
    }
}

/// Per-class correct / total counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tally {
    pub correct: Vec<usize>,
    pub total: Vec<usize>,
}

impl Tally {
    pub fn new(num_classes: usize) -> Self {
        Tally {
            correct: vec![0; num_classes],
            total: vec![0; num_classes],
        }
    }

    pub fn add(&mut self, other: &Tally) {
        for (a, b) in self.correct.iter_mut().zip(&other.correct) {
            *a += b;
        }
        for (a, b) in self.total.iter_mut().zip(&other.total) {
            *a += b;
        }
    }

    fn ratio(&self, classes: impl IntoIterator<Item = usize>) -> f64 {
        let (mut ok, mut n) = (0, 0);
        for c in classes {
            ok += self.correct[c];
            n += self.total[c];
        }
        if n == 0 {
            f64::NAN
        } else {
            ok as f64 / n as f64
        }
    }

    pub fn record(&self, method: &str, seed: u64, client: ClientTag, groups: &ClassGroups) -> MetricsRecord {
        let c = self.total.len();
        MetricsRecord {
            method: method.to_string(),
            seed,
            client,
            overall: self.ratio(0..c),
            head: self.ratio(groups.head.iter().copied()),
            mid: self.ratio(groups.mid.iter().copied()),
            tail: self.ratio(groups.tail.iter().copied()),
            per_class: (0..c).map(|k| self.ratio([k])).collect(),
        }
    }
}

/// Counts correct predictions of `predict` on `test`, overall and per class.
pub fn evaluate<F>(test: &LabeledDataset, mut predict: F) -> Result<Tally>
where
    F: FnMut(&Matrix) -> Result<Vec<usize>>,
{
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let preds = predict(test.features())?;
    if preds.len() != test.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} samples",
            preds.len(),
            test.len()
        )));
    }
    let mut tally = Tally::new(test.num_classes());
    for (&y, &p) in test.labels().iter().zip(&preds) {
        tally.total[y] += 1;
        if p == y {
            tally.correct[y] += 1;
        }
    }
    Ok(tally)
}

/// Argmax predictions of a single model.
pub fn model_predictions(model: &ModelParams, inputs: &Matrix) -> Result<Vec<usize>> {
    let logits = model.forward(inputs)?;
    Ok((0..logits.rows()).map(|b| crate::ecl::argmax(logits.row(b))).collect())
}

fn nan_mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values
        .into_iter()
        .filter(|v| !v.is_nan())
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Macro average over client records, ignoring NaN entries.
pub fn mean_record(method: &str, seed: u64, records: &[MetricsRecord], num_classes: usize) -> MetricsRecord {
    MetricsRecord {
        method: method.to_string(),
        seed,
        client: ClientTag::Mean,
        overall: nan_mean(records.iter().map(|r| r.overall)),
        head: nan_mean(records.iter().map(|r| r.head)),
        mid: nan_mean(records.iter().map(|r| r.mid)),
        tail: nan_mean(records.iter().map(|r| r.tail)),
        per_class: (0..num_classes)
            .map(|c| nan_mean(records.iter().map(|r| r.per_class[c])))
            .collect(),
    }
}

/// Optimizer settings for a baseline's per-client training.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl BaselineConfig {
    fn hyper(&self) -> SgdHyper {
        SgdHyper {
            learning_rate: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }
}

fn fit(model: &mut ModelParams, data: &LabeledDataset, config: &BaselineConfig, shuffle_seed: u64) -> Result<()> {
    if data.is_empty() || config.epochs == 0 {
        return Ok(());
    }
    let mut opt = OptState::new(model, config.hyper())?;
    let spec = TrainSpec {
        epochs: config.epochs,
        loss: LossKind::CrossEntropy,
        batch_size: config.batch_size,
        shuffle_seed,
    };
    train_epochs(model, data, &spec, &mut opt)?;
    Ok(())
}

/// Local-only baseline: one model per client, trained from a fresh
/// initialization on that client's data alone. Empty clients keep the
/// untrained model.
pub fn run_baseline_local(
    clients: &[LabeledDataset],
    arch: &ArchSpec,
    config: &BaselineConfig,
) -> Result<Vec<ModelParams>> {
    clients
        .iter()
        .enumerate()
        .map(|(k, data)| {
            let mut a = arch.clone();
            a.init_seed = derive_seed(config.seed, "local-init", k as u64);
            let mut model = init_model(&a)?;
            fit(
                &mut model,
                data,
                config,
                derive_seed(config.seed, "local-train", k as u64),
            )?;
            Ok(model)
        })
        .collect()
}

/// FedAvg-FT baseline: the global model fine-tuned end to end on each
/// client's data with cross-entropy.
pub fn run_baseline_fedavg_ft(
    global: &ModelParams,
    clients: &[LabeledDataset],
    config: &BaselineConfig,
) -> Result<Vec<ModelParams>> {
    clients
        .iter()
        .enumerate()
        .map(|(k, data)| {
            let mut model = global.clone();
            model.unfreeze_all();
            fit(
                &mut model,
                data,
                config,
                derive_seed(config.seed, "fedavg-ft", k as u64),
            )?;
            Ok(model)
        })
        .collect()
}

fn metrics_header(num_classes: usize) -> String {
    let mut h = String::from("method,seed,client,overall,head,mid,tail");
    for c in 0..num_classes {
        h.push_str(&format!(",acc_class_{c}"));
    }
    h
}

/// CSV text for `records`; floats use the shortest exact representation.
pub fn metrics_csv(records: &[MetricsRecord], num_classes: usize) -> String {
    let mut out = metrics_header(num_classes);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}",
            r.method, r.seed, r.client, r.overall, r.head, r.mid, r.tail
        ));
        for v in &r.per_class {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

pub fn read_metrics_csv(path: &Path) -> Result<(Vec<MetricsRecord>, usize)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics_csv(&text)
}

/// Parses metrics CSV text, returning the records and the class count.
pub fn parse_metrics_csv(text: &str) -> Result<(Vec<MetricsRecord>, usize)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::Parse {
        row: 1,
        message: "missing header".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 7 || cols[..7] != ["method", "seed", "client", "overall", "head", "mid", "tail"] {
        return Err(Error::Parse {
            row: 1,
            message: "unexpected metrics header".into(),
        });
    }
    let num_classes = cols.len() - 7;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(Error::Parse {
                row,
                message: format!("{} fields, expected {}", f.len(), cols.len()),
            });
        }
        let num = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Parse {
                row,
                message: format!("`{s}` is not a number"),
            })
        };
        records.push(MetricsRecord {
            method: f[0].to_string(),
            seed: f[1].parse().map_err(|_| Error::Parse {
                row,
                message: format!("bad seed `{}`", f[1]),
            })?,
            client: f[2].parse().map_err(|e: Error| Error::Parse {
                row,
                message: e.to_string(),
            })?,
            overall: num(f[3])?,
            head: num(f[4])?,
            mid: num(f[5])?,
            tail: num(f[6])?,
            per_class: f[7..].iter().map(|s| num(s)).collect::<Result<_>>()?,
        });
    }
    Ok((records, num_classes))
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Stat {
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl Stat {
    /// Mean and sample standard deviation (n−1; 0 for a single value) of the
    /// non-NaN values.
    fn of(values: &[f64]) -> Stat {
        let v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
        if v.is_empty() {
            return Stat { mean: None, std: None };
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let std = if v.len() < 2 {
            0.0
        } else {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        };
        Stat {
            mean: Some(mean),
            std: Some(std),
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MethodSummary {
    pub seeds: Vec<u64>,
    pub overall: Stat,
    pub head: Stat,
    pub mid: Stat,
    pub tail: Stat,
    pub pooled_overall: Stat,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Summary {
    pub methods: BTreeMap<String, MethodSummary>,
}

/// Per-method statistics across seeds of the `mean` rows (and the `pooled`
/// rows for `pooled_overall`).
pub fn summarize(records: &[MetricsRecord]) -> Summary {
    let mut by_method: BTreeMap<String, (Vec<&MetricsRecord>, Vec<&MetricsRecord>)> = BTreeMap::new();
    for r in records {
        let entry = by_method.entry(r.method.clone()).or_default();
        match r.client {
            ClientTag::Mean => entry.0.push(r),
            ClientTag::Pooled => entry.1.push(r),
            ClientTag::Id(_) => {}
        }
    }
    let methods = by_method
        .into_iter()
        .map(|(name, (means, pooled))| {
            let col = |f: fn(&MetricsRecord) -> f64| Stat::of(&means.iter().map(|r| f(r)).collect::<Vec<_>>());
            let mut seeds: Vec<u64> = means.iter().map(|r| r.seed).collect();
            seeds.sort_unstable();
            seeds.dedup();
            let summary = MethodSummary {
                seeds,
                overall: col(|r| r.overall),
                head: col(|r| r.head),
                mid: col(|r| r.mid),
                tail: col(|r| r.tail),
                pooled_overall: Stat::of(&pooled.iter().map(|r| r.overall).collect::<Vec<_>>()),
            };
            (name, summary)
        })
        .collect();
    Summary { methods }
}

pub fn summary_json(records: &[MetricsRecord]) -> String {
    let mut s = serde_json::to_string_pretty(&summarize(records)).expect("summary serializes");
    s.push('\n');
    s
}

/// Writes `metrics.csv` and `summary.json` into `dir`.
pub fn emit_report(records: &[MetricsRecord], num_classes: usize, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join("metrics.csv");
    std::fs::write(&csv_path, metrics_csv(records, num_classes)).map_err(|e| Error::io(&csv_path, e))?;
    let json_path = dir.join("summary.json");
    std::fs::write(&json_path, summary_json(records)).map_err(|e| Error::io(&json_path, e))
}
