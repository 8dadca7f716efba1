//! The three-phase training driver: warmup at the training prior, minimax
//! epochs that alternate a model epoch with a prior update, and fine-tuning
//! on all training data at the final prior.
//!
//! One "iteration" is one mini-batch epoch. The loss is always instantiated
//! from the class counts of the full training set, so at `π^t = π^train`
//! the targeted losses coincide with cross-entropy exactly.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ascent::{estimate_class_risks, AscentConfig, AscentMethod, AscentState, ClassRisks};
use crate::data::{partition_dataset, LabeledDataset};
use crate::error::{Error, Result};
use crate::losses::{spec_from_variant, LossHyper, LossVariant};
use crate::metrics::{accuracy_summary, AccuracySummary};
use crate::model::{train_epoch, Architecture, ModelParams, OptimizerState, TrainConfig};
use crate::prior::Prior;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinimaxConfig {
    pub t0: usize,
    pub t1: usize,
    pub t2: usize,
    pub loss: LossVariant,
    pub hyper: LossHyper,
    pub ascent: AscentConfig,
    pub train: TrainConfig,
    pub architecture: Architecture,
    pub model_fraction: f64,
    pub partition_seed: u64,
    pub init_seed: u64,
}

impl Default for MinimaxConfig {
    fn default() -> Self {
        MinimaxConfig {
            t0: 5,
            t1: 95,
            t2: 20,
            loss: LossVariant::Tla,
            hyper: LossHyper::default(),
            ascent: AscentConfig::default(),
            train: TrainConfig::default(),
            architecture: Architecture::Linear,
            model_fraction: 0.8,
            partition_seed: 0,
            init_seed: 0,
        }
    }
}

impl MinimaxConfig {
    pub fn total_epochs(&self) -> usize {
        self.t0 + self.t1 + self.t2
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if !(self.model_fraction > 0.0 && self.model_fraction < 1.0) {
            return Err(Error::config("minimax.model_fraction", "must lie in (0, 1)"));
        }
        if self.total_epochs() == 0 {
            return Err(Error::config("minimax", "t0 + t1 + t2 must be positive"));
        }
        self.train.validate()?;
        self.ascent.validate(k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Minimax,
    FineTune,
    Baseline,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::Minimax => "minimax",
            Phase::FineTune => "fine_tune",
            Phase::Baseline => "baseline",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub phase: Phase,
    pub mean_loss: f64,
    /// Target prior at the end of the epoch (after the update in minimax
    /// epochs).
    pub prior: Prior,
    /// Error rates on the prior part, measured after the epoch's training.
    pub prior_risks: ClassRisks,
    /// Zero-based class with the highest risk on the prior part.
    pub worst_class: usize,
    pub worst_risk: f64,
    /// Number of classes moved toward in this epoch's update (minimax only).
    pub ascent_m: Option<usize>,
    pub eval: Option<AccuracySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: MinimaxConfig,
    pub class_count: usize,
    pub train_counts: Vec<usize>,
    pub model_counts: Vec<usize>,
    pub prior_counts: Vec<usize>,
    pub epochs: Vec<EpochRecord>,
    pub final_prior: Prior,
    pub final_eval: Option<AccuracySummary>,
}

impl RunReport {
    /// Target-prior mass on the class that is worst on the evaluation set,
    /// or on the prior part when there is no evaluation set.
    pub fn worst_class_prior(&self) -> f64 {
        let y = match &self.final_eval {
            Some(e) => e.worst_class,
            None => self.epochs.last().map_or(0, |r| r.worst_class),
        };
        self.final_prior[y]
    }
}

/// A finished run: the report and the trained parameters.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub params: ModelParams,
}

fn phase_error(phase: Phase, epoch: usize) -> impl FnOnce(Error) -> Error {
    let name = phase.name();
    move |e| Error::Phase {
        phase: name,
        epoch,
        source: Box::new(e),
    }
}

struct Driver<'a> {
    config: &'a MinimaxConfig,
    train_counts: Vec<usize>,
    eval_set: Option<&'a LabeledDataset>,
    params: ModelParams,
    opt: OptimizerState,
    epochs: Vec<EpochRecord>,
}

impl Driver<'_> {
    fn epoch(
        &mut self,
        epoch: usize,
        phase: Phase,
        data: &LabeledDataset,
        risk_data: &LabeledDataset,
        ascent: Option<&mut AscentState>,
        target: &Prior,
    ) -> Result<Prior> {
        let spec = spec_from_variant(self.config.loss, &self.train_counts, target, &self.config.hyper, epoch)?;
        let mean_loss = train_epoch(&mut self.params, &mut self.opt, data, &spec, &self.config.train, epoch)?;
        let risks = estimate_class_risks(&self.params, risk_data)?;
        let (prior, ascent_m) = match ascent {
            Some(state) => {
                let (p, m) = state.step(&risks)?;
                (p, Some(m))
            }
            None => (target.clone(), None),
        };
        let (worst_class, worst_risk) = risks.worst();
        let eval = self.eval_set.map(|e| accuracy_summary(&self.params, e)).transpose()?;
        self.epochs.push(EpochRecord {
            epoch,
            phase,
            mean_loss,
            prior: prior.clone(),
            prior_risks: risks,
            worst_class,
            worst_risk,
            ascent_m,
            eval,
        });
        Ok(prior)
    }
}

fn check_eval(eval_set: Option<&LabeledDataset>, k: usize, dim: usize) -> Result<()> {
    if let Some(e) = eval_set {
        if e.class_count() != k || e.dim() != dim {
            return Err(Error::invalid("evaluation set must match the training classes and dimension"));
        }
        e.require_all_classes()?;
    }
    Ok(())
}

/// Runs warmup (`t0` epochs on the model part at `π^train`), minimax (`t1`
/// epochs on the model part, each followed by risks on the prior part and
/// one ascent step) and fine-tuning (`t2` epochs on all data at the final
/// prior).
pub fn run_minimax(config: &MinimaxConfig, dataset: &LabeledDataset, eval_set: Option<&LabeledDataset>) -> Result<RunOutcome> {
    let k = dataset.class_count();
    config.validate(k)?;
    dataset.require_all_classes()?;
    check_eval(eval_set, k, dataset.dim())?;
    let split = partition_dataset(dataset, config.model_fraction, config.partition_seed)?;
    let train_counts = dataset.per_class_counts();
    let pi_train = Prior::from_counts(&train_counts)?;
    let params = ModelParams::init(config.architecture, dataset.dim(), k, config.init_seed)?;
    let mut driver = Driver {
        config,
        train_counts: train_counts.clone(),
        eval_set,
        opt: OptimizerState::new(&params),
        params,
        epochs: Vec::with_capacity(config.total_epochs()),
    };
    let mut ascent = AscentState::new(pi_train.clone(), config.ascent.clone())?;
    let mut target = pi_train;
    let mut epoch = 0;
    for _ in 0..config.t0 {
        epoch += 1;
        driver
            .epoch(epoch, Phase::Warmup, &split.model_part, &split.prior_part, None, &target)
            .map_err(phase_error(Phase::Warmup, epoch))?;
    }
    for _ in 0..config.t1 {
        epoch += 1;
        let used = target.clone();
        target = driver
            .epoch(epoch, Phase::Minimax, &split.model_part, &split.prior_part, Some(&mut ascent), &used)
            .map_err(phase_error(Phase::Minimax, epoch))?;
    }
    for _ in 0..config.t2 {
        epoch += 1;
        driver
            .epoch(epoch, Phase::FineTune, dataset, &split.prior_part, None, &target)
            .map_err(phase_error(Phase::FineTune, epoch))?;
    }
    let final_eval = eval_set.map(|e| accuracy_summary(&driver.params, e)).transpose()?;
    Ok(RunOutcome {
        report: RunReport {
            config: config.clone(),
            class_count: k,
            train_counts,
            model_counts: split.model_part.per_class_counts(),
            prior_counts: split.prior_part.per_class_counts(),
            epochs: driver.epochs,
            final_prior: target,
            final_eval,
        },
        params: driver.params,
    })
}

/// Fixed-loss training on all data for `t0 + t1 + t2` epochs at `π^train`,
/// reported in the same schema. Risks are still measured on the prior part
/// of the same partition so the trajectories are comparable.
pub fn run_baseline(config: &MinimaxConfig, dataset: &LabeledDataset, eval_set: Option<&LabeledDataset>) -> Result<RunOutcome> {
    let k = dataset.class_count();
    config.validate(k)?;
    dataset.require_all_classes()?;
    check_eval(eval_set, k, dataset.dim())?;
    let split = partition_dataset(dataset, config.model_fraction, config.partition_seed)?;
    let train_counts = dataset.per_class_counts();
    let target = Prior::from_counts(&train_counts)?;
    let params = ModelParams::init(config.architecture, dataset.dim(), k, config.init_seed)?;
    let mut driver = Driver {
        config,
        train_counts: train_counts.clone(),
        eval_set,
        opt: OptimizerState::new(&params),
        params,
        epochs: Vec::with_capacity(config.total_epochs()),
    };
    for epoch in 1..=config.total_epochs() {
        driver
            .epoch(epoch, Phase::Baseline, dataset, &split.prior_part, None, &target)
            .map_err(phase_error(Phase::Baseline, epoch))?;
    }
    let final_eval = eval_set.map(|e| accuracy_summary(&driver.params, e)).transpose()?;
    Ok(RunOutcome {
        report: RunReport {
            config: config.clone(),
            class_count: k,
            train_counts,
            model_counts: split.model_part.per_class_counts(),
            prior_counts: split.prior_part.per_class_counts(),
            epochs: driver.epochs,
            final_prior: target,
            final_eval,
        },
        params: driver.params,
    })
}

/// One cell of the loss × ascent ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub name: String,
    pub loss: LossVariant,
    pub method: AscentMethod,
    pub config: MinimaxConfig,
}

/// The four {TLA, TWCE} × {linear, EGA} variants of `base`. Only the loss
/// and ascent rule change; an explicit `alpha` is kept only for cells using
/// the base config's ascent rule.
pub fn swap_components(base: &MinimaxConfig) -> Vec<AblationCell> {
    let mut out = Vec::with_capacity(4);
    for loss in [LossVariant::Tla, LossVariant::Twce] {
        for method in [AscentMethod::Linear, AscentMethod::Ega] {
            let mut config = base.clone();
            config.loss = loss;
            if method != base.ascent.method {
                config.ascent.method = method;
                config.ascent.alpha = None;
            }
            out.push(AblationCell {
                name: format!("{}_{}", loss.name(), method.name()),
                loss,
                method,
                config,
            });
        }
    }
    out
}
