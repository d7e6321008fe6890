//! Adam and the training loop: sampler, encoders, mining and parameter
//! update, with optional branch freezing and validation-based model
//! selection.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::encoder::{
    classification_head_backward, init_params, EncoderParams, EncoderSpec, Linear, Side, TensorOwner,
};
use crate::error::{Error, Result};
use crate::eval::{encode_dataset, medr, ranks_both_directions};
use crate::loss::{classification_ce_loss, LossConfig};
use crate::math::{Rng, RngSeed};
use crate::mining::{pairwise_term, Batch, BatchForward, Strategy, TermWeights, TripletPlan, TripletSums};
use crate::sampling::build_epoch_batches;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &EncoderParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.data.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam step. Tensors of the `frozen` branch keep their
/// values and moments.
pub fn adam_step(
    params: &mut EncoderParams,
    grads: &EncoderParams,
    state: &mut AdamState,
    lr: f64,
    frozen: Option<Side>,
) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    let grad_tensors = grads.tensors();
    for (((owner, p), g), (m, v)) in params
        .tensors_mut()
        .into_iter()
        .zip(&grad_tensors)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if matches!((owner, frozen), (TensorOwner::Branch(s), Some(f)) if s == f) {
            continue;
        }
        for i in 0..p.len() {
            let gi = g.data[i];
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
        }
    }
}

/// Training scenarios: the full model and its ablations / baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Instance + semantic triplets, adaptive aggregation.
    #[default]
    Adamine,
    /// Instance triplets only.
    AdamineIns,
    /// Semantic triplets only.
    AdamineSem,
    /// Instance triplets plus a classification head.
    AdamineInsCls,
    /// Instance + semantic triplets, average aggregation.
    AdamineAvg,
    /// Pairwise loss with positive and negative margins, average aggregation.
    Pwpp,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::Adamine,
        Scenario::AdamineIns,
        Scenario::AdamineSem,
        Scenario::AdamineInsCls,
        Scenario::AdamineAvg,
        Scenario::Pwpp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Adamine => "adamine",
            Scenario::AdamineIns => "adamine_ins",
            Scenario::AdamineSem => "adamine_sem",
            Scenario::AdamineInsCls => "adamine_ins_cls",
            Scenario::AdamineAvg => "adamine_avg",
            Scenario::Pwpp => "pwpp",
        }
    }

    pub fn needs_labels(self) -> bool {
        let t = scenario_losses(self);
        t.semantic || t.classification
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL.into_iter().find(|sc| sc.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Scenario::ALL.iter().map(|s| s.name()).collect();
            Error::Config(format!("unknown scenario {s:?}; valid names: {}", names.join(", ")))
        })
    }
}

/// Which terms a scenario optimizes and how triplet gradients are aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScenarioTerms {
    pub instance: bool,
    pub semantic: bool,
    pub classification: bool,
    pub pairwise: bool,
    pub strategy: Strategy,
}

pub fn scenario_losses(scenario: Scenario) -> ScenarioTerms {
    let t = |instance, semantic, classification, pairwise, strategy| ScenarioTerms {
        instance,
        semantic,
        classification,
        pairwise,
        strategy,
    };
    match scenario {
        Scenario::Adamine => t(true, true, false, false, Strategy::Adaptive),
        Scenario::AdamineIns => t(true, false, false, false, Strategy::Adaptive),
        Scenario::AdamineSem => t(false, true, false, false, Strategy::Adaptive),
        Scenario::AdamineInsCls => t(true, false, true, false, Strategy::Adaptive),
        Scenario::AdamineAvg => t(true, true, false, false, Strategy::Average),
        Scenario::Pwpp => t(false, false, false, true, Strategy::Average),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FreezeBranch {
    #[default]
    None,
    A,
    B,
}

impl FreezeBranch {
    pub fn side(self) -> Option<Side> {
        match self {
            FreezeBranch::None => None,
            FreezeBranch::A => Some(Side::A),
            FreezeBranch::B => Some(Side::B),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub scenario: Scenario,
    pub loss: LossConfig,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub labeled_fraction: f64,
    pub freeze_branch: FreezeBranch,
    /// First epoch (1-based) in which the frozen branch is trained.
    pub unfreeze_epoch: usize,
    pub eval_every: usize,
    /// Validation subset size, clamped to the validation set size.
    pub validation_subset: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            scenario: Scenario::Adamine,
            loss: LossConfig::default(),
            learning_rate: 1e-4,
            epochs: 50,
            batch_size: 100,
            labeled_fraction: 0.5,
            freeze_branch: FreezeBranch::None,
            unfreeze_epoch: 0,
            eval_every: 1,
            validation_subset: 1000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.labeled_fraction) {
            return Err(Error::Config("labeled_fraction must be in [0, 1]".into()));
        }
        if self.validation_subset == 0 {
            return Err(Error::Config("validation_subset must be >= 1".into()));
        }
        Ok(())
    }

    fn frozen_side(&self, epoch: usize) -> Option<Side> {
        self.freeze_branch.side().filter(|_| epoch < self.unfreeze_epoch)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean normalized batch objective.
    pub loss: f64,
    /// Mean active instance triplets per batch.
    pub beta_r: f64,
    /// Mean active semantic triplets per batch.
    pub beta_s: f64,
    /// Mean norm of the applied update per batch.
    pub update_norm: f64,
    pub val_medr_ab: Option<f64>,
    pub val_medr_ba: Option<f64>,
}

impl EpochRecord {
    pub const LOG_HEADER: &'static str = "epoch\tloss\tbeta_r\tbeta_s\tupdate_norm\tval_medr_ab\tval_medr_ba";

    pub fn val_medr(&self) -> Option<f64> {
        Some((self.val_medr_ab? + self.val_medr_ba?) / 2.0)
    }

    /// `epoch<TAB>loss<TAB>beta_r<TAB>beta_s<TAB>update_norm<TAB>val_medr_ab<TAB>val_medr_ba`;
    /// unevaluated MedR columns are `-`.
    pub fn log_line(&self) -> String {
        let medr = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |m| format!("{m:.1}"));
        format!(
            "{}\t{:.6}\t{:.2}\t{:.2}\t{:.6}\t{}\t{}",
            self.epoch,
            self.loss,
            self.beta_r,
            self.beta_s,
            self.update_norm,
            medr(self.val_medr_ab),
            medr(self.val_medr_ba)
        )
    }
}

/// Statistics of a single optimization step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub loss: f64,
    pub beta_r: usize,
    pub beta_s: usize,
    pub update_norm: f64,
    pub adaptive_norm: f64,
    pub average_norm: f64,
}

impl StepRecord {
    /// Adaptive over average update norm; 1 when both vanish.
    pub fn norm_ratio(&self) -> f64 {
        if self.average_norm == 0.0 {
            1.0
        } else {
            self.adaptive_norm / self.average_norm
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn to_log(&self) -> String {
        let mut s = String::from(EpochRecord::LOG_HEADER);
        s.push('\n');
        for r in &self.epochs {
            s.push_str(&r.log_line());
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    pub history: TrainHistory,
}

/// Update contributions of one batch.
struct StepTerms {
    applied: EncoderParams,
    record: StepRecord,
}

/// Random streams of a run, kept separate so that e.g. the batch sequence
/// does not depend on the scenario.
mod stream {
    pub const INIT: u64 = 0;
    pub const SAMPLING: u64 = 1;
    pub const MINING: u64 = 2;
    pub const VALIDATION: u64 = 3;
}

fn check_dataset(name: &str, ds: &Dataset, spec: &EncoderSpec) -> Result<()> {
    if ds.dim_a != spec.input_dim_a || ds.dim_b != spec.input_dim_b {
        return Err(Error::Config(format!(
            "{name} set has dims {}/{}, encoder expects {}/{}",
            ds.dim_a, ds.dim_b, spec.input_dim_a, spec.input_dim_b
        )));
    }
    Ok(())
}

/// Checks that config, architecture and datasets fit together.
pub fn check_training_inputs(
    config: &TrainConfig,
    spec: &EncoderSpec,
    train: &Dataset,
    validation: &Dataset,
) -> Result<()> {
    config.validate()?;
    spec.validate()?;
    check_dataset("training", train, spec)?;
    check_dataset("validation", validation, spec)?;
    if train.len() < config.batch_size {
        return Err(Error::Config(format!(
            "training set has {} pairs, fewer than one batch of {}",
            train.len(),
            config.batch_size
        )));
    }
    if validation.len() < 2 {
        return Err(Error::Config("validation set needs at least 2 pairs".into()));
    }
    if config.scenario.needs_labels() {
        if train.labeled_count() == 0 {
            return Err(Error::Config(format!(
                "scenario {} needs class labels but the training set has none",
                config.scenario
            )));
        }
        if config.labeled_fraction == 0.0 {
            return Err(Error::Config(format!(
                "scenario {} needs labeled pairs in each batch but labeled_fraction is 0",
                config.scenario
            )));
        }
    }
    Ok(())
}

/// Fixed validation subset, evaluated after selected epochs.
struct Validator {
    dataset: Dataset,
}

impl Validator {
    fn new(validation: &Dataset, subset: usize, seed: RngSeed) -> Self {
        let size = subset.min(validation.len());
        let mut rng = seed.rng();
        let mut idx = rand::seq::index::sample(&mut rng, validation.len(), size).into_vec();
        idx.sort_unstable();
        let mut dataset = Dataset::new(validation.dim_a, validation.dim_b, validation.n_classes);
        dataset.samples = idx.into_iter().map(|i| validation.samples[i].clone()).collect();
        Validator { dataset }
    }

    fn medr(&self, params: &EncoderParams) -> Result<(f64, f64)> {
        let (a, b) = encode_dataset(params, &self.dataset)?;
        let (ab, ba) = ranks_both_directions(&a, &b)?;
        Ok((medr(&ab), medr(&ba)))
    }
}

fn batch_step(
    params: &EncoderParams,
    config: &TrainConfig,
    batch: &Batch<'_>,
    mining_rng: &mut Rng,
) -> Result<StepTerms> {
    let terms = scenario_losses(config.scenario);
    let lambda = config.loss.lambda;
    let fwd = BatchForward::new(params, batch)?;

    let mut adaptive = params.zeros_like();
    let mut average = params.zeros_like();
    let mut loss = 0.0;
    let mut beta_r = 0;
    let mut beta_s = 0;

    if terms.instance || terms.semantic {
        let plan = TripletPlan::build(&batch.labels, terms.instance, terms.semantic, mining_rng);
        let sums = TripletSums::compute(params, &fwd, &plan, config.loss.alpha)?;
        let weights = TermWeights {
            instance: if terms.instance { 1.0 } else { 0.0 },
            semantic: if terms.semantic { lambda } else { 0.0 },
        };
        adaptive = sums.update(Strategy::Adaptive, weights);
        average = sums.update(Strategy::Average, weights);
        loss += sums.loss(terms.strategy, weights);
        beta_r = sums.instance_stats.active;
        beta_s = sums.semantic_stats.active;
    }

    if terms.pairwise {
        let (sum, stats) = pairwise_term(params, &fwd, config.loss.alpha_pos, config.loss.alpha_neg)?;
        let divisor = stats.divisor(terms.strategy);
        if let Some(d) = divisor {
            adaptive.add_scaled(1.0 / d, &sum);
            average.add_scaled(1.0 / d, &sum);
            loss += stats.loss_sum / d;
        }
    }

    if terms.classification {
        let (cls, cls_loss) = classification_term(params, &fwd, batch)?;
        adaptive.add_scaled(lambda, &cls);
        average.add_scaled(lambda, &cls);
        loss += lambda * cls_loss;
    }

    let (adaptive_norm, average_norm) = (adaptive.norm(), average.norm());
    let (applied, update_norm) = match terms.strategy {
        Strategy::Adaptive => (adaptive, adaptive_norm),
        Strategy::Average => (average, average_norm),
    };
    Ok(StepTerms {
        applied,
        record: StepRecord {
            loss,
            beta_r,
            beta_s,
            update_norm,
            adaptive_norm,
            average_norm,
        },
    })
}

/// Mean cross-entropy of the classification head over the labeled items of
/// both modalities, and its parameter gradient.
pub fn classification_term(
    params: &EncoderParams,
    fwd: &BatchForward,
    batch: &Batch<'_>,
) -> Result<(EncoderParams, f64)> {
    let head = params.head.as_ref().ok_or(Error::MissingHead)?;
    let dim = params.latent_dim();
    let mut head_grads = Linear::zeros(head.fan_in(), head.fan_out());
    let mut latent_a = vec![vec![0.0; dim]; batch.len()];
    let mut latent_b = vec![vec![0.0; dim]; batch.len()];
    let mut loss = 0.0;
    let mut count = 0usize;
    for (i, label) in batch.labels.iter().enumerate() {
        let Some(label) = *label else { continue };
        for (side, out) in [(Side::A, &mut latent_a[i]), (Side::B, &mut latent_b[i])] {
            let z = fwd.latent(side, i);
            let (l, g) = classification_ce_loss(&head.forward(z), label)?;
            loss += l;
            count += 1;
            *out = classification_head_backward(head, z, &g, &mut head_grads);
        }
    }
    if count == 0 {
        return Ok((params.zeros_like(), 0.0));
    }
    let mut grads = fwd.backprop(params, &latent_a, &latent_b)?;
    grads.head = Some(head_grads);
    let mut scaled = params.zeros_like();
    scaled.add_scaled(1.0 / count as f64, &grads);
    Ok((scaled, loss / count as f64))
}

/// Trains from a fresh initialization.
pub fn train(config: &TrainConfig, spec: &EncoderSpec, train: &Dataset, validation: &Dataset) -> Result<TrainOutcome> {
    train_with_observer(config, spec, train, validation, |_, _| {})
}

/// Parameters a run starts from.
pub fn initial_params(config: &TrainConfig, spec: &EncoderSpec, train: &Dataset) -> Result<EncoderParams> {
    let n_classes = scenario_losses(config.scenario)
        .classification
        .then_some(train.n_classes);
    init_params(spec, n_classes, RngSeed(config.seed).derive(stream::INIT))
}

/// Same as [`train`], calling `observer` with the record and the current
/// parameters after every epoch.
pub fn train_with_observer(
    config: &TrainConfig,
    spec: &EncoderSpec,
    train: &Dataset,
    validation: &Dataset,
    mut observer: impl FnMut(&EpochRecord, &EncoderParams),
) -> Result<TrainOutcome> {
    check_training_inputs(config, spec, train, validation)?;
    let seed = RngSeed(config.seed);
    let mut params = initial_params(config, spec, train)?;
    let mut adam = AdamState::new(&params);
    let mut sampling_rng = seed.derive(stream::SAMPLING).rng();
    let mut mining_rng = seed.derive(stream::MINING).rng();
    let validator = Validator::new(validation, config.validation_subset, seed.derive(stream::VALIDATION));
    let labels = train.labels();

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, EncoderParams)> = None;

    for epoch in 1..=config.epochs {
        let frozen = config.frozen_side(epoch);
        let batches = build_epoch_batches(&labels, config.batch_size, config.labeled_fraction, &mut sampling_rng)?;
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        for mb in &batches {
            let batch = Batch {
                features_a: mb
                    .pair_indices
                    .iter()
                    .map(|&i| train.samples[i].features_a.as_slice())
                    .collect(),
                features_b: mb
                    .pair_indices
                    .iter()
                    .map(|&i| train.samples[i].features_b.as_slice())
                    .collect(),
                labels: mb.pair_indices.iter().map(|&i| labels[i]).collect(),
            };
            let step = batch_step(&params, config, &batch, &mut mining_rng)?;
            adam_step(&mut params, &step.applied, &mut adam, config.learning_rate, frozen);
            if !params.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            let r = step.record;
            sums.0 += r.loss;
            sums.1 += r.beta_r as f64;
            sums.2 += r.beta_s as f64;
            sums.3 += r.update_norm;
            history.steps.push(r);
        }
        let nb = batches.len().max(1) as f64;
        let evaluate = (epoch - 1) % config.eval_every == 0 || epoch == config.epochs;
        let (val_medr_ab, val_medr_ba) = if evaluate {
            let (ab, ba) = validator.medr(&params)?;
            (Some(ab), Some(ba))
        } else {
            (None, None)
        };
        let record = EpochRecord {
            epoch,
            loss: sums.0 / nb,
            beta_r: sums.1 / nb,
            beta_s: sums.2 / nb,
            update_norm: sums.3 / nb,
            val_medr_ab,
            val_medr_ba,
        };
        if let Some(m) = record.val_medr() {
            if best.as_ref().is_none_or(|(b, _, _)| m < *b) {
                best = Some((m, epoch, params.clone()));
            }
        }
        observer(&record, &params);
        history.epochs.push(record);
    }

    let (_, best_epoch, best_params) = best.expect("the last epoch is always evaluated");
    history.best_epoch = best_epoch;
    Ok(TrainOutcome {
        params: best_params,
        history,
    })
}
