//! FedAvg training of the shared global model.

use rand::seq::index;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nncore::{init_model, train_epochs, ArchSpec, LossKind, ModelParams, OptState, SgdHyper, TrainSpec};
use crate::seed::{derive_rng, derive_seed};

#[derive(Debug, Clone, PartialEq)]
pub struct FedConfig {
    pub rounds: usize,
    pub clients_total: usize,
    pub clients_per_round: usize,
    pub local_epochs: usize,
    pub lr: f64,
    pub lr_milestone_round: usize,
    pub lr_after_milestone: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clients_total == 0 {
            return Err(Error::InvalidArgument("clients_total must be >= 1".into()));
        }
        if self.clients_per_round == 0 || self.clients_per_round > self.clients_total {
            return Err(Error::InvalidArgument(format!(
                "clients_per_round {} must lie in [1, {}]",
                self.clients_per_round, self.clients_total
            )));
        }
        if self.lr_milestone_round > self.rounds {
            return Err(Error::InvalidArgument(format!(
                "lr_milestone_round {} exceeds rounds {}",
                self.lr_milestone_round, self.rounds
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        self.hyper(self.lr).validate()?;
        self.hyper(self.lr_after_milestone).validate()
    }

    /// Learning rate used in round `t`.
    pub fn lr_at(&self, round: usize) -> f64 {
        if round < self.lr_milestone_round {
            self.lr
        } else {
            self.lr_after_milestone
        }
    }

    fn hyper(&self, lr: f64) -> SgdHyper {
        SgdHyper {
            learning_rate: lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    /// Shuffle seed of client `k`'s local update in round `t`.
    pub fn local_seed(&self, round: usize, client: usize) -> u64 {
        derive_seed(
            derive_seed(self.seed, "local-update", round as u64),
            "client",
            client as u64,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    pub round: usize,
    pub lr: f64,
    pub sampled: Vec<usize>,
    /// `(client, final local epoch loss)`; NaN when no local epoch ran.
    pub losses: Vec<(usize, f64)>,
}

/// Uniform sample without replacement of `clients_per_round` ids from
/// `eligible`, drawn from the `("sample-clients", t)` stream and returned in
/// ascending order. Takes every eligible client if there are too few.
pub fn sample_clients(round: usize, config: &FedConfig, eligible: &[usize]) -> Vec<usize> {
    let n = config.clients_per_round.min(eligible.len());
    let mut rng = derive_rng(config.seed, "sample-clients", round as u64);
    let mut picked: Vec<usize> = index::sample(&mut rng, eligible.len(), n)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// Trains a copy of `global` for `local_epochs` epochs of cross-entropy SGD
/// with fresh momentum buffers. The global model is not touched.
pub fn local_update(
    global: &ModelParams,
    data: &LabeledDataset,
    config: &FedConfig,
    lr: f64,
    shuffle_seed: u64,
) -> Result<(ModelParams, Option<f64>)> {
    let mut model = global.clone();
    model.unfreeze_all();
    let mut opt = OptState::new(&model, config.hyper(lr))?;
    let spec = TrainSpec {
        epochs: config.local_epochs,
        loss: LossKind::CrossEntropy,
        batch_size: config.batch_size,
        shuffle_seed,
    };
    let loss = train_epochs(&mut model, data, &spec, &mut opt)?;
    Ok((model, loss))
}

/// Dataset-size weighted average, accumulated in the given order.
pub fn aggregate(models: &[&ModelParams], sizes: &[usize]) -> Result<ModelParams> {
    let first = *models
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to aggregate".into()))?;
    if models.len() != sizes.len() {
        return Err(Error::Shape(format!(
            "{} models but {} sizes",
            models.len(),
            sizes.len()
        )));
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidArgument(
            "aggregation weights need positive dataset sizes".into(),
        ));
    }
    if let Some(m) = models.iter().find(|m| !m.same_shape(first) || m.arch() != first.arch()) {
        return Err(Error::Shape(format!(
            "architecture {:?} differs from {:?}",
            m.arch(),
            first.arch()
        )));
    }
    let total: usize = sizes.iter().sum();
    let mut out = first.clone();
    out.unfreeze_all();
    out.values_mut().for_each(|v| *v = 0.0);
    for (m, &n) in models.iter().zip(sizes) {
        let w = n as f64 / total as f64;
        for (acc, v) in out.values_mut().zip(m.values()) {
            *acc += w * v;
        }
    }
    Ok(out)
}

/// FedAvg for `config.rounds` rounds starting from `init_model(arch)`.
/// Clients with no data are never sampled. Participants are aggregated in
/// ascending client id order.
pub fn run_phase1(
    config: &FedConfig,
    clients: &[LabeledDataset],
    arch: &ArchSpec,
) -> Result<(ModelParams, Vec<RoundLog>)> {
    config.validate()?;
    if clients.len() != config.clients_total {
        return Err(Error::InvalidArgument(format!(
            "{} client datasets for clients_total = {}",
            clients.len(),
            config.clients_total
        )));
    }
    let eligible: Vec<usize> = (0..clients.len()).filter(|&k| !clients[k].is_empty()).collect();
    let mut global = init_model(arch)?;
    let mut logs = Vec::with_capacity(config.rounds);
    if config.rounds > 0 && eligible.is_empty() {
        return Err(Error::InvalidArgument("every client dataset is empty".into()));
    }
    for t in 0..config.rounds {
        let lr = config.lr_at(t);
        let sampled = sample_clients(t, config, &eligible);
        let mut updates = Vec::with_capacity(sampled.len());
        let mut losses = Vec::with_capacity(sampled.len());
        for &k in &sampled {
            let (model, loss) = local_update(&global, &clients[k], config, lr, config.local_seed(t, k))?;
            losses.push((k, loss.unwrap_or(f64::NAN)));
            updates.push(model);
        }
        let sizes: Vec<usize> = sampled.iter().map(|&k| clients[k].len()).collect();
        global = aggregate(&updates.iter().collect::<Vec<_>>(), &sizes)?;
        logs.push(RoundLog {
            round: t,
            lr,
            sampled,
            losses,
        });
    }
    Ok((global, logs))
}

/// Round log CSV: `round,client,loss`.
pub fn round_log_csv(logs: &[RoundLog]) -> String {
    let mut out = String::from("round,client,loss\n");
    for log in logs {
        for (k, loss) in &log.losses {
            out.push_str(&format!("{},{k},{loss}\n", log.round));
        }
    }
    out
}
