//! Multi-run experiments: scenario comparisons and λ sweeps.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::encoder::{EncoderParams, EncoderSpec};
use crate::error::Result;
use crate::eval::{subset_protocol, RetrievalReport};
use crate::math::RngSeed;
use crate::optim::{train, Scenario, TrainConfig, TrainHistory};

/// Test-time subset protocol settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub subset_size: usize,
    pub n_subsets: usize,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            subset_size: 1000,
            n_subsets: 10,
            seed: 0,
        }
    }
}

/// Evaluates with `settings`, shrinking the subset to the dataset size when
/// the dataset is smaller.
pub fn evaluate_clamped(params: &EncoderParams, dataset: &Dataset, settings: EvalSettings) -> Result<RetrievalReport> {
    let size = settings.subset_size.min(dataset.len());
    if size < settings.subset_size {
        log::info!(
            "evaluation subset clamped from {} to the {} available pairs",
            settings.subset_size,
            size
        );
    }
    subset_protocol(params, dataset, size, settings.n_subsets, RngSeed(settings.seed))
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub scenario: Scenario,
    pub params: EncoderParams,
    pub history: TrainHistory,
    pub report: RetrievalReport,
}

/// Trains every scenario from the same base configuration and seed and
/// evaluates the selected models on `test`.
pub fn compare_scenarios(
    base: &TrainConfig,
    spec: &EncoderSpec,
    scenarios: &[Scenario],
    train_set: &Dataset,
    validation: &Dataset,
    test: &Dataset,
    settings: EvalSettings,
) -> Result<Vec<ScenarioRun>> {
    scenarios
        .iter()
        .map(|&scenario| {
            let config = TrainConfig {
                scenario,
                ..base.clone()
            };
            log::info!("training scenario {scenario}");
            let out = train(&config, spec, train_set, validation)?;
            let report = evaluate_clamped(&out.params, test, settings)?;
            Ok(ScenarioRun {
                scenario,
                params: out.params,
                history: out.history,
                report,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaPoint {
    pub lambda: f64,
    pub best_epoch: usize,
    pub val_medr_ab: f64,
    pub val_medr_ba: f64,
}

impl LambdaPoint {
    pub const TSV_HEADER: &'static str = "lambda\tval_medr_ab\tval_medr_ba\tval_medr\tbest_epoch";

    pub fn val_medr(&self) -> f64 {
        (self.val_medr_ab + self.val_medr_ba) / 2.0
    }

    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.lambda,
            self.val_medr_ab,
            self.val_medr_ba,
            self.val_medr(),
            self.best_epoch
        )
    }
}

/// Trains once per λ value and reports the validation MedR of the selected
/// model.
pub fn sweep_lambda(
    base: &TrainConfig,
    spec: &EncoderSpec,
    lambdas: &[f64],
    train_set: &Dataset,
    validation: &Dataset,
) -> Result<Vec<LambdaPoint>> {
    lambdas
        .iter()
        .map(|&lambda| {
            let mut config = base.clone();
            config.loss.lambda = lambda;
            log::info!("training with lambda = {lambda}");
            let out = train(&config, spec, train_set, validation)?;
            let best = &out.history.epochs[out.history.best_epoch - 1];
            Ok(LambdaPoint {
                lambda,
                best_epoch: best.epoch,
                val_medr_ab: best.val_medr_ab.expect("selected epochs are evaluated"),
                val_medr_ba: best.val_medr_ba.expect("selected epochs are evaluated"),
            })
        })
        .collect()
}
