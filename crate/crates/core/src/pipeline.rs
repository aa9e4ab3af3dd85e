//! End-to-end experiment: data preparation, both training phases, the
//! baselines, checkpoint files and evaluation.
//!
//! Output directory layout:
//!
//! ```text
//! partition.csv            client,class,count
//! imbalance.csv            client,size,present_classes,imbalance_factor
//! round_log.csv            round,client,loss
//! checkpoints/global.fecl
//! checkpoints/client_000.fecs     personalized state per client
//! checkpoints/local_000.fecl      local-only baseline per client
//! checkpoints/fedavg_ft_000.fecl  fine-tuned baseline per client
//! metrics.csv
//! summary.json
//! ```
//!
//! Every model is stored with `f32` weights, and an in-process run passes its
//! models through the same encoding before evaluation, so `train` followed by
//! `eval` reports exactly what a single [`run_experiment`] call reports.

use std::path::{Path, PathBuf};

use crate::checkpoint::{decode_state, encode_state};
use crate::config::{DataSource, ExperimentConfig};
use crate::data::{
    build_client_testset, class_means, dirichlet_partition, load_csv, sample_gaussian_classes, shape_longtail,
    write_partition_csv, LabeledDataset,
};
use crate::ecl::{run_phase2, PersonalizedState};
use crate::error::{Error, Result};
use crate::eval::{
    emit_report, evaluate, mean_record, model_predictions, read_metrics_csv, run_baseline_fedavg_ft,
    run_baseline_local, summary_json, ClassGroups, ClientTag, MetricsRecord, Tally,
};
use crate::fed::{round_log_csv, run_phase1, RoundLog};
use crate::nncore::{deserialize, serialize, Matrix, ModelParams};

#[derive(Debug, Clone)]
pub struct PreparedData {
    /// Long-tail shaped training set before partitioning.
    pub train: LabeledDataset,
    pub clients: Vec<LabeledDataset>,
    /// Balanced test pool; every client's model is scored on all of it.
    pub test_pool: LabeledDataset,
    /// Distribution-matched test set per client; `None` for empty clients.
    pub client_tests: Vec<Option<LabeledDataset>>,
}

impl PreparedData {
    /// Head / mid / tail split by the global training counts.
    pub fn class_groups(&self) -> ClassGroups {
        ClassGroups::from_counts(self.train.class_counts())
    }
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let d = &cfg.dataset;
    let (raw, pool) = match d.source {
        DataSource::Synthetic => {
            let means = class_means(d.num_classes, d.input_dim, cfg.sub_seed("class-means", 0));
            let train = sample_gaussian_classes(&means, d.per_class, d.spread, cfg.sub_seed("synth-train", 0))?;
            let pool = sample_gaussian_classes(&means, d.test_pool_per_class, d.spread, cfg.sub_seed("synth-test", 0))?;
            (train, pool)
        }
        DataSource::Csv => {
            let train_path = d
                .train_csv
                .as_deref()
                .ok_or_else(|| Error::config("dataset.train_csv", "missing"))?;
            let test_path = d
                .test_csv
                .as_deref()
                .ok_or_else(|| Error::config("dataset.test_csv", "missing"))?;
            let train = load_csv(train_path, Some(d.num_classes))?;
            let pool = load_csv(test_path, Some(d.num_classes))?;
            for (name, set) in [("dataset.train_csv", &train), ("dataset.test_csv", &pool)] {
                if set.dim() != d.input_dim {
                    return Err(Error::config(
                        name,
                        format!("{} features per row, dataset.input_dim is {}", set.dim(), d.input_dim),
                    ));
                }
            }
            (train, pool)
        }
    };
    let train = shape_longtail(&raw, d.imbalance_factor, cfg.sub_seed("longtail", 0))?;
    let clients = dirichlet_partition(&train, &cfg.partition_spec())?;
    let client_tests = clients
        .iter()
        .enumerate()
        .map(|(k, c)| {
            if c.is_empty() {
                Ok(None)
            } else {
                build_client_testset(
                    &pool,
                    c.class_counts(),
                    d.client_test_size,
                    cfg.sub_seed("client-test", k as u64),
                )
                .map(Some)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedData {
        train,
        clients,
        test_pool: pool,
        client_tests,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub global: ModelParams,
    pub round_logs: Vec<RoundLog>,
    pub states: Vec<PersonalizedState>,
    pub local: Option<Vec<ModelParams>>,
    pub fedavg_ft: Option<Vec<ModelParams>>,
}

/// Trains the global model, the personalized states and the enabled
/// baselines. Phase II and the fine-tuning baseline start from the global
/// model as it is stored on disk.
pub fn train(cfg: &ExperimentConfig, data: &PreparedData) -> Result<Artifacts> {
    let (mut global, round_logs) = run_phase1(&cfg.fed_config(), &data.clients, &cfg.arch_spec())?;
    global.quantize_f32();
    let states = run_phase2(&global, &data.clients, &cfg.phase2_config())?;
    let local = if cfg.baselines.local {
        Some(run_baseline_local(
            &data.clients,
            &cfg.arch_spec(),
            &cfg.local_baseline(),
        )?)
    } else {
        None
    };
    let fedavg_ft = if cfg.baselines.fedavg_ft {
        Some(run_baseline_fedavg_ft(
            &global,
            &data.clients,
            &cfg.fedavg_ft_baseline(),
        )?)
    } else {
        None
    };
    Ok(Artifacts {
        global,
        round_logs,
        states,
        local,
        fedavg_ft,
    })
}

fn models_bytes(models: &Option<Vec<ModelParams>>) -> Option<Vec<Vec<u8>>> {
    models.as_ref().map(|ms| ms.iter().map(serialize).collect())
}

/// Checkpoint bytes of every artifact.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedArtifacts {
    pub global: Vec<u8>,
    pub states: Vec<Vec<u8>>,
    pub local: Option<Vec<Vec<u8>>>,
    pub fedavg_ft: Option<Vec<Vec<u8>>>,
}

impl EncodedArtifacts {
    pub fn encode(a: &Artifacts) -> Self {
        EncodedArtifacts {
            global: serialize(&a.global),
            states: a.states.iter().map(encode_state).collect(),
            local: models_bytes(&a.local),
            fedavg_ft: models_bytes(&a.fedavg_ft),
        }
    }

    /// Decodes everything; round logs are not part of the checkpoints.
    pub fn decode(&self) -> Result<Artifacts> {
        let models = |v: &Option<Vec<Vec<u8>>>| -> Result<Option<Vec<ModelParams>>> {
            v.as_ref()
                .map(|bs| bs.iter().map(|b| deserialize(b)).collect())
                .transpose()
        };
        Ok(Artifacts {
            global: deserialize(&self.global)?,
            round_logs: Vec::new(),
            states: self.states.iter().map(|b| decode_state(b)).collect::<Result<_>>()?,
            local: models(&self.local)?,
            fedavg_ft: models(&self.fedavg_ft)?,
        })
    }
}

fn checkpoint_dir(out: &Path) -> PathBuf {
    out.join("checkpoints")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn save_artifacts(out: &Path, encoded: &EncodedArtifacts) -> Result<()> {
    let dir = checkpoint_dir(out);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_file(&dir.join("global.fecl"), &encoded.global)?;
    for (k, b) in encoded.states.iter().enumerate() {
        write_file(&dir.join(format!("client_{k:03}.fecs")), b)?;
    }
    for (prefix, set) in [("local", &encoded.local), ("fedavg_ft", &encoded.fedavg_ft)] {
        for (k, b) in set.iter().flatten().enumerate() {
            write_file(&dir.join(format!("{prefix}_{k:03}.fecl")), b)?;
        }
    }
    Ok(())
}

pub fn load_artifacts(out: &Path, cfg: &ExperimentConfig) -> Result<EncodedArtifacts> {
    let dir = checkpoint_dir(out);
    let k = cfg.partition.num_clients;
    let per_client = |prefix: &str, ext: &str| -> Result<Vec<Vec<u8>>> {
        (0..k)
            .map(|i| read_file(&dir.join(format!("{prefix}_{i:03}.{ext}"))))
            .collect()
    };
    Ok(EncodedArtifacts {
        global: read_file(&dir.join("global.fecl"))?,
        states: per_client("client", "fecs")?,
        local: if cfg.baselines.local {
            Some(per_client("local", "fecl")?)
        } else {
            None
        },
        fedavg_ft: if cfg.baselines.fedavg_ft {
            Some(per_client("fedavg_ft", "fecl")?)
        } else {
            None
        },
    })
}

/// Per-client records on the balanced pool plus `mean` and `pooled` rows,
/// and the same on the distribution-matched test sets under
/// `<method>/matched` when enabled. Clients without data are skipped.
fn evaluate_method<F>(
    method: &str,
    cfg: &ExperimentConfig,
    data: &PreparedData,
    groups: &ClassGroups,
    mut predict: F,
) -> Result<Vec<MetricsRecord>>
where
    F: FnMut(usize, &Matrix) -> Result<Vec<usize>>,
{
    let c = cfg.dataset.num_classes;
    let matched_name = format!("{method}/matched");
    let mut balanced = (Vec::new(), Tally::new(c));
    let mut matched = (Vec::new(), Tally::new(c));
    for (k, test) in data.client_tests.iter().enumerate() {
        let Some(test) = test else { continue };
        let tally = evaluate(&data.test_pool, |x| predict(k, x))?;
        balanced.1.add(&tally);
        balanced
            .0
            .push(tally.record(method, cfg.seed, ClientTag::Id(k), groups));
        if cfg.eval.matched {
            let tally = evaluate(test, |x| predict(k, x))?;
            matched.1.add(&tally);
            matched
                .0
                .push(tally.record(&matched_name, cfg.seed, ClientTag::Id(k), groups));
        }
    }
    let mut out = Vec::new();
    let mut families = vec![(method, balanced)];
    if cfg.eval.matched {
        families.push((matched_name.as_str(), matched));
    }
    for (name, (per_client, pooled)) in families {
        out.push(mean_record(name, cfg.seed, &per_client, c));
        out.push(pooled.record(name, cfg.seed, ClientTag::Pooled, groups));
        out.extend(per_client);
    }
    Ok(out)
}

fn fmt_lambda(l: f64) -> String {
    format!("{l}")
}

/// Metrics of every method. `ecl` uses the stored λ and scaling; sweep
/// entries are reported as `ecl[lambda=…]` and `ecl[scaling=…]`.
pub fn evaluate_all(cfg: &ExperimentConfig, data: &PreparedData, a: &Artifacts) -> Result<Vec<MetricsRecord>> {
    if a.states.len() != data.clients.len() {
        return Err(Error::Shape(format!(
            "{} personalized states for {} clients",
            a.states.len(),
            data.clients.len()
        )));
    }
    let groups = data.class_groups();
    let mut records = Vec::new();
    records.extend(evaluate_method("ecl", cfg, data, &groups, |k, x| {
        a.states[k].predict_batch(x)
    })?);
    for &l in &cfg.eval.lambda_sweep {
        let states = a.states.iter().map(|s| s.with_lambda(l)).collect::<Result<Vec<_>>>()?;
        let name = format!("ecl[lambda={}]", fmt_lambda(l));
        records.extend(evaluate_method(&name, cfg, data, &groups, |k, x| {
            states[k].predict_batch(x)
        })?);
    }
    for &s in &cfg.eval.scaling_sweep {
        let states: Vec<_> = a.states.iter().map(|st| st.with_scaling(s)).collect();
        let name = format!("ecl[scaling={}]", s.as_str());
        records.extend(evaluate_method(&name, cfg, data, &groups, |k, x| {
            states[k].predict_batch(x)
        })?);
    }
    records.extend(evaluate_method("retrained_global", cfg, data, &groups, |k, x| {
        model_predictions(&a.states[k].retrained_global, x)
    })?);
    records.extend(evaluate_method("fedavg", cfg, data, &groups, |_, x| {
        model_predictions(&a.global, x)
    })?);
    if let Some(ms) = &a.fedavg_ft {
        records.extend(evaluate_method("fedavg_ft", cfg, data, &groups, |k, x| {
            model_predictions(&ms[k], x)
        })?);
    }
    if let Some(ms) = &a.local {
        records.extend(evaluate_method("local", cfg, data, &groups, |k, x| {
            model_predictions(&ms[k], x)
        })?);
    }
    Ok(records)
}

/// Train and evaluate without touching the filesystem.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<MetricsRecord>> {
    let data = prepare_data(cfg)?;
    let trained = train(cfg, &data)?;
    let stored = EncodedArtifacts::encode(&trained).decode()?;
    evaluate_all(cfg, &data, &stored)
}

/// Local imbalance ratio `max / min` over the classes a client holds.
pub fn local_imbalance(counts: &[usize]) -> Option<f64> {
    let present = counts.iter().copied().filter(|&n| n > 0);
    let max = present.clone().max()?;
    let min = present.min()?;
    Some(max as f64 / min as f64)
}

fn write_partition_files(out: &Path, data: &PreparedData) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_partition_csv(&out.join("partition.csv"), &data.clients)?;
    let mut text = String::from("client,size,present_classes,imbalance_factor\n");
    for (k, c) in data.clients.iter().enumerate() {
        let ratio = local_imbalance(c.class_counts()).unwrap_or(f64::NAN);
        text.push_str(&format!("{k},{},{},{ratio}\n", c.len(), c.present_classes().len()));
    }
    write_file(&out.join("imbalance.csv"), text.as_bytes())
}

/// `partition`: writes the per-client class histograms.
pub fn cmd_partition(cfg: &ExperimentConfig, out: &Path) -> Result<PreparedData> {
    let data = prepare_data(cfg)?;
    write_partition_files(out, &data)?;
    Ok(data)
}

/// `train`: runs both phases and the baselines and writes checkpoints.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<Artifacts> {
    let data = cmd_partition(cfg, out)?;
    let trained = train(cfg, &data)?;
    write_file(
        &out.join("round_log.csv"),
        round_log_csv(&trained.round_logs).as_bytes(),
    )?;
    save_artifacts(out, &EncodedArtifacts::encode(&trained))?;
    Ok(trained)
}

/// `eval`: loads checkpoints from `out` and writes the metrics files.
pub fn cmd_eval(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<MetricsRecord>> {
    let data = prepare_data(cfg)?;
    let stored = load_artifacts(out, cfg)?.decode()?;
    let records = evaluate_all(cfg, &data, &stored)?;
    emit_report(&records, cfg.dataset.num_classes, out)?;
    Ok(records)
}

/// `report`: rebuilds `summary.json` from `metrics.csv`.
pub fn cmd_report(out: &Path) -> Result<()> {
    let (records, _) = read_metrics_csv(&out.join("metrics.csv"))?;
    write_file(&out.join("summary.json"), summary_json(&records).as_bytes())
}
