//! Per-client personalization with multiple experts.
//!
//! For each client the FedAvg model's classifier is retrained with
//! balanced-softmax loss on the full local set, and `M` experts copied from
//! the global model are each trained on one contiguous group of the client's
//! count-sorted classes. At inference every present class takes its logit
//! from the owning expert, rescaled by the squared ratio of expert to global
//! classifier row norms, and mixes it with the retrained global logit:
//! `o_c = λ·z̄_c + (1−λ)·z0_c`. Classes absent from the client use `z0_c`.

use serde::{Deserialize, Serialize};

use crate::data::{balance_subset, sort_and_group, ExpertAssignment, LabeledDataset};
use crate::error::{Error, Result};
use crate::nncore::{init_model, train_epochs, LossKind, Matrix, ModelParams, OptState, SgdHyper, TrainSpec};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingScheme {
    /// Per-class ratio `‖u_c‖² / ‖u0_c‖²` of classifier weight rows.
    EclScaling,
    /// Whole-matrix ratio `‖U‖²_F / ‖U0‖²_F`.
    EclScalingMatrix,
    NoScaling,
}

impl ScalingScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            ScalingScheme::EclScaling => "ecl_scaling",
            ScalingScheme::EclScalingMatrix => "ecl_scaling_matrix",
            ScalingScheme::NoScaling => "no_scaling",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            ScalingScheme::EclScaling => 0,
            ScalingScheme::EclScalingMatrix => 1,
            ScalingScheme::NoScaling => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ScalingScheme::EclScaling),
            1 => Some(ScalingScheme::EclScalingMatrix),
            2 => Some(ScalingScheme::NoScaling),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase2Config {
    pub num_experts: usize,
    pub lambda: f64,
    pub scaling: ScalingScheme,
    pub classifier_epochs: usize,
    pub expert_epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Re-initialize expert classifiers instead of copying the global one.
    pub reinit_expert_classifier: bool,
    pub seed: u64,
}

impl Phase2Config {
    pub fn validate(&self) -> Result<()> {
        if self.num_experts == 0 {
            return Err(Error::InvalidArgument("num_experts must be >= 1".into()));
        }
        check_lambda(self.lambda)?;
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        self.hyper().validate()
    }

    pub fn hyper(&self) -> SgdHyper {
        SgdHyper {
            learning_rate: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    fn client_seed(&self, client: usize, role: &str, index: usize) -> u64 {
        derive_seed(derive_seed(self.seed, "phase2", client as u64), role, index as u64)
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("lambda {lambda} must lie in [0, 1]")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonalizedState {
    pub retrained_global: ModelParams,
    /// Index-aligned with `assignment.groups`; experts of empty groups are
    /// kept untrained and ignored at inference.
    pub experts: Vec<ModelParams>,
    pub assignment: ExpertAssignment,
    pub lambda: f64,
    pub scaling: ScalingScheme,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Expert(usize),
    GlobalOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedLogits {
    pub logits: Vec<f64>,
    pub provenance: Vec<Provenance>,
}

impl AggregatedLogits {
    pub fn argmax(&self) -> usize {
        argmax(&self.logits)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn train_copy(
    model: &ModelParams,
    data: &LabeledDataset,
    loss: LossKind,
    epochs: usize,
    config: &Phase2Config,
    shuffle_seed: u64,
) -> Result<ModelParams> {
    let mut m = model.clone();
    if epochs > 0 {
        let mut opt = OptState::new(&m, config.hyper())?;
        let spec = TrainSpec {
            epochs,
            loss,
            batch_size: config.batch_size,
            shuffle_seed,
        };
        train_epochs(&mut m, data, &spec, &mut opt)?;
    }
    m.unfreeze_all();
    Ok(m)
}

/// Retrains only the classifier of `global` on the client's full data with
/// balanced-softmax loss weighted by the client's class counts.
pub fn retrain_global_classifier(
    global: &ModelParams,
    data: &LabeledDataset,
    epochs: usize,
    config: &Phase2Config,
    shuffle_seed: u64,
) -> Result<ModelParams> {
    if data.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot retrain on an empty client dataset".into(),
        ));
    }
    let mut m = global.clone();
    m.train_classifier_only();
    train_copy(&m, data, LossKind::BalancedSoftmax, epochs, config, shuffle_seed)
}

/// `M` independent deep copies of the global model.
pub fn init_experts(global: &ModelParams, num_experts: usize) -> Result<Vec<ModelParams>> {
    if num_experts == 0 {
        return Err(Error::InvalidArgument("num_experts must be >= 1".into()));
    }
    Ok(vec![global.clone(); num_experts])
}

/// Trains expert `index` (0-based) of `num_experts` on `group`.
///
/// Experts before the last update their last block and classifier with
/// cross-entropy on the raw samples of their classes. The last expert updates
/// only its classifier on a class-balanced resample of its classes.
pub fn train_expert(
    expert: &ModelParams,
    index: usize,
    num_experts: usize,
    data: &LabeledDataset,
    group: &[usize],
    config: &Phase2Config,
    seeds: (u64, u64),
) -> Result<ModelParams> {
    if group.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "expert {index} has an empty class group"
        )));
    }
    let (shuffle_seed, balance_seed) = seeds;
    let mut m = expert.clone();
    let subset = if index + 1 < num_experts {
        m.train_last_block_and_classifier();
        data.restrict_to(group)
    } else {
        m.train_classifier_only();
        balance_subset(data, group, balance_seed)?
    };
    assert!(
        group.iter().all(|&c| subset.class_counts()[c] > 0),
        "expert group contains a class without samples"
    );
    train_copy(
        &m,
        &subset,
        LossKind::CrossEntropy,
        config.expert_epochs,
        config,
        shuffle_seed,
    )
}

/// `z̄ = (‖u‖² / ‖u0‖²) · z` for one class, with `u`/`u0` the expert and
/// global classifier weight rows of that class.
pub fn scale_logit(z: f64, expert_row: &[f64], global_row: &[f64]) -> Result<f64> {
    let u0: f64 = global_row.iter().map(|w| w * w).sum();
    if u0.is_nan() || u0 <= 0.0 {
        return Err(Error::Domain("global classifier row has zero norm".into()));
    }
    let u: f64 = expert_row.iter().map(|w| w * w).sum();
    Ok(u / u0 * z)
}

/// `o_c = λ·z̄_c + (1−λ)·z0_c` for owned classes and `o_c = z0_c` otherwise.
/// `scaled[c]` is read only where `owners[c]` is set.
pub fn aggregate_logits(scaled: &[f64], owners: &[Option<usize>], z0: &[f64], lambda: f64) -> Result<AggregatedLogits> {
    check_lambda(lambda)?;
    if scaled.len() != z0.len() || owners.len() != z0.len() {
        return Err(Error::Shape("logit vectors must cover the same classes".into()));
    }
    let mut logits = Vec::with_capacity(z0.len());
    let mut provenance = Vec::with_capacity(z0.len());
    for c in 0..z0.len() {
        match owners[c] {
            Some(m) => {
                logits.push(lambda * scaled[c] + (1.0 - lambda) * z0[c]);
                provenance.push(Provenance::Expert(m));
            }
            None => {
                logits.push(z0[c]);
                provenance.push(Provenance::GlobalOnly);
            }
        }
    }
    Ok(AggregatedLogits { logits, provenance })
}

impl PersonalizedState {
    pub fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)?;
        if self.experts.len() != self.assignment.num_experts() {
            return Err(Error::Shape(format!(
                "{} experts for {} class groups",
                self.experts.len(),
                self.assignment.num_experts()
            )));
        }
        let c = self.retrained_global.num_classes();
        if let Some(e) = self.experts.iter().find(|e| !e.same_shape(&self.retrained_global)) {
            return Err(Error::Shape(format!(
                "expert architecture {:?} differs from global",
                e.arch()
            )));
        }
        if self.assignment.groups.iter().flatten().any(|&k| k >= c) {
            return Err(Error::Shape("assignment references a class out of range".into()));
        }
        Ok(())
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(PersonalizedState { lambda, ..self.clone() })
    }

    pub fn with_scaling(&self, scaling: ScalingScheme) -> Self {
        PersonalizedState {
            scaling,
            ..self.clone()
        }
    }

    pub fn num_classes(&self) -> usize {
        self.retrained_global.num_classes()
    }

    pub fn owners(&self) -> Vec<Option<usize>> {
        self.assignment.owners(self.num_classes())
    }

    /// Multiplier applied to each class's expert logit (1 for unowned classes).
    pub fn scale_factors(&self) -> Result<Vec<f64>> {
        let owners = self.owners();
        let global = &self.retrained_global;
        let mut factors = vec![1.0; owners.len()];
        for (c, owner) in owners.iter().enumerate() {
            let Some(m) = *owner else { continue };
            let expert = &self.experts[m];
            factors[c] = match self.scaling {
                ScalingScheme::NoScaling => 1.0,
                ScalingScheme::EclScaling => {
                    let u0 = global.classifier_row_norm_sq(c);
                    if u0.is_nan() || u0 <= 0.0 {
                        return Err(Error::Domain(format!("global classifier row {c} has zero norm")));
                    }
                    expert.classifier_row_norm_sq(c) / u0
                }
                ScalingScheme::EclScalingMatrix => {
                    let u0 = global.classifier_norm_sq();
                    if u0.is_nan() || u0 <= 0.0 {
                        return Err(Error::Domain("global classifier has zero norm".into()));
                    }
                    expert.classifier_norm_sq() / u0
                }
            };
        }
        Ok(factors)
    }

    /// Aggregated logits for every input row, plus the per-class provenance
    /// (identical for all rows).
    pub fn aggregate_batch(&self, inputs: &Matrix) -> Result<(Matrix, Vec<Provenance>)> {
        let owners = self.owners();
        let factors = self.scale_factors()?;
        let z0 = self.retrained_global.forward(inputs)?;
        let mut expert_logits: Vec<Option<Matrix>> = Vec::with_capacity(self.experts.len());
        for (m, expert) in self.experts.iter().enumerate() {
            expert_logits.push(if self.assignment.is_skipped(m) {
                None
            } else {
                Some(expert.forward(inputs)?)
            });
        }
        let c = self.num_classes();
        let mut out = Matrix::zeros(inputs.rows(), c);
        let mut provenance = Vec::new();
        let mut scaled = vec![0.0; c];
        for b in 0..inputs.rows() {
            for k in 0..c {
                if let Some(m) = owners[k] {
                    let z = expert_logits[m].as_ref().expect("owning expert is trained").get(b, k);
                    scaled[k] = factors[k] * z;
                }
            }
            let agg = aggregate_logits(&scaled, &owners, z0.row(b), self.lambda)?;
            out.row_mut(b).copy_from_slice(&agg.logits);
            if b == 0 {
                provenance = agg.provenance;
            }
        }
        if provenance.is_empty() {
            provenance = owners
                .iter()
                .map(|o| o.map_or(Provenance::GlobalOnly, Provenance::Expert))
                .collect();
        }
        Ok((out, provenance))
    }

    pub fn predict(&self, x: &[f64]) -> Result<(usize, AggregatedLogits)> {
        let inputs = Matrix::from_vec(1, x.len(), x.to_vec())?;
        let (logits, provenance) = self.aggregate_batch(&inputs)?;
        let agg = AggregatedLogits {
            logits: logits.into_vec(),
            provenance,
        };
        Ok((agg.argmax(), agg))
    }

    pub fn predict_batch(&self, inputs: &Matrix) -> Result<Vec<usize>> {
        let (logits, _) = self.aggregate_batch(inputs)?;
        Ok((0..logits.rows()).map(|b| argmax(logits.row(b))).collect())
    }
}

/// Full personalization of one client. A client without data gets the
/// global model as its retrained model and untrained experts over empty
/// groups, so every class is predicted by the global model.
pub fn personalize_client(
    global: &ModelParams,
    client: usize,
    data: &LabeledDataset,
    config: &Phase2Config,
) -> Result<PersonalizedState> {
    config.validate()?;
    let m_total = config.num_experts;
    let mut global = global.clone();
    global.unfreeze_all();
    if data.is_empty() {
        return Ok(PersonalizedState {
            experts: init_experts(&global, m_total)?,
            retrained_global: global,
            assignment: ExpertAssignment::empty(m_total),
            lambda: config.lambda,
            scaling: config.scaling,
        });
    }
    let assignment = sort_and_group(data.class_counts(), m_total)?;
    let mut experts = init_experts(&global, m_total)?;
    if config.reinit_expert_classifier {
        for (m, e) in experts.iter_mut().enumerate() {
            let mut arch = e.arch().clone();
            arch.init_seed = config.client_seed(client, "reinit", m);
            e.classifier = init_model(&arch)?.classifier;
        }
    }
    let retrained = retrain_global_classifier(
        &global,
        data,
        config.classifier_epochs,
        config,
        config.client_seed(client, "retrain", 0),
    )?;
    for (m, expert) in experts.iter_mut().enumerate() {
        if assignment.is_skipped(m) {
            continue;
        }
        let seeds = (
            config.client_seed(client, "expert", m),
            config.client_seed(client, "balance", m),
        );
        *expert = train_expert(expert, m, m_total, data, &assignment.groups[m], config, seeds)?;
    }
    let state = PersonalizedState {
        retrained_global: retrained,
        experts,
        assignment,
        lambda: config.lambda,
        scaling: config.scaling,
    };
    state.validate()?;
    Ok(state)
}

/// Personalizes every client independently.
pub fn run_phase2(
    global: &ModelParams,
    clients: &[LabeledDataset],
    config: &Phase2Config,
) -> Result<Vec<PersonalizedState>> {
    clients
        .iter()
        .enumerate()
        .map(|(k, d)| personalize_client(global, k, d, config))
        .collect()
}
