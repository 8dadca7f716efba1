//! Experiment configuration, presets, and artifact emission.
//!
//! A run reads one TOML file with the sections `dataset`, `model`, `loss`,
//! `ascent`, `minimax`, `eval`, `ablate`, `theory`, `mc` and `oracle`, and
//! writes JSON reports, CSV tables, checkpoints and a `manifest.json` into an
//! output directory. CSV numbers use 17 significant digits.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ascent::AscentConfig;
use crate::data::{
    format_real, load_csv_dataset, make_imbalance_counts, sample_mixture, CsvSchema, ImbalanceKind, ImbalanceProfile,
    LabeledDataset, MixtureSpec,
};
use crate::error::{Error, Result};
use crate::losses::{LossHyper, LossVariant};
use crate::mc::{mc_ega_mse, mc_worst_class_failure, DEFAULT_TRIALS};
use crate::metrics::inter_intra_ratio;
use crate::minimax::{run_minimax, swap_components, MinimaxConfig, RunOutcome, RunReport};
use crate::model::{config_hash, extract_features, Architecture, Checkpoint, TrainConfig};
use crate::oracle::{adversarial_prior_search, BayesOracle, SearchStrategy, DEFAULT_MC_SAMPLES};
use crate::prior::Prior;
use crate::seed::{self, tags};
use crate::theory::{comparator_factors, ega_estimate_mse, prob_find_worst, SumStart};

/// Per-class error probabilities of a trained ten-class network, used as the
/// default input of the theory and Monte Carlo experiments.
pub const REFERENCE_ERROR_VECTOR: [f64; 10] = [0.75, 0.67, 0.86, 0.96, 0.89, 0.06, 0.03, 0.05, 0.02, 0.03];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Train,
    Ablate,
    Theory,
    Mc,
    Oracle,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Train => "train",
            ExperimentKind::Ablate => "ablate",
            ExperimentKind::Theory => "theory",
            ExperimentKind::Mc => "mc",
            ExperimentKind::Oracle => "oracle",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// `classes` unit-covariance Gaussians with means on a circle.
    Circle,
    /// Two 1-D unit-variance Gaussians at −1 and +1.
    Line,
    /// Isotropic Gaussians at the listed `means` with common `variance`.
    Gaussian,
    /// Features and 1-based labels read from `path`.
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub source: DatasetSource,
    pub classes: usize,
    pub radius: f64,
    pub means: Vec<Vec<f64>>,
    pub variance: f64,
    pub imbalance: ImbalanceProfile,
    pub path: Option<PathBuf>,
    pub header: bool,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            source: DatasetSource::Circle,
            classes: 10,
            radius: 2.0,
            means: Vec::new(),
            variance: 1.0,
            imbalance: ImbalanceProfile {
                kind: ImbalanceKind::Step,
                ratio: 0.01,
                base_count: 4000,
            },
            path: None,
            header: false,
        }
    }
}

impl DatasetSection {
    /// The generating mixture, or `None` for CSV data.
    pub fn mixture(&self) -> Result<Option<MixtureSpec>> {
        Ok(match self.source {
            DatasetSource::Circle => Some(MixtureSpec::circle(self.classes, self.radius)?),
            DatasetSource::Line => Some(MixtureSpec::two_class_line()),
            DatasetSource::Gaussian => {
                if self.means.len() < 2 {
                    return Err(Error::config("dataset.means", "need at least two class means"));
                }
                Some(MixtureSpec::isotropic(self.means.clone(), self.variance)?)
            }
            DatasetSource::Csv => None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchitectureKind {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub architecture: ArchitectureKind,
    pub hidden: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub warmup_epochs: usize,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        ModelSection {
            architecture: ArchitectureKind::Linear,
            hidden: 64,
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            warmup_epochs: t.warmup_epochs,
            decay_epochs: t.decay_epochs,
            decay_factor: t.decay_factor,
        }
    }
}

impl ModelSection {
    pub fn architecture(&self) -> Architecture {
        match self.architecture {
            ArchitectureKind::Linear => Architecture::Linear,
            ArchitectureKind::Mlp => Architecture::Mlp { hidden: self.hidden },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub variant: String,
    /// Unset values fall back to the preset, then to the built-in default.
    pub tau: Option<f64>,
    pub gamma: Option<f64>,
    pub beta: f64,
    pub ldam_max_margin: f64,
    pub drw_start_epoch: usize,
}

impl Default for LossSection {
    fn default() -> Self {
        let h = LossHyper::default();
        LossSection {
            variant: "tla".into(),
            tau: None,
            gamma: None,
            beta: h.beta,
            ldam_max_margin: h.ldam_max_margin,
            drw_start_epoch: h.drw_start_epoch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinimaxSection {
    pub t0: usize,
    pub t1: usize,
    pub t2: usize,
    pub model_fraction: f64,
}

impl Default for MinimaxSection {
    fn default() -> Self {
        MinimaxSection {
            t0: 5,
            t1: 95,
            t2: 20,
            model_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Fresh balanced samples per class drawn from the mixture.
    pub per_class: usize,
    /// Evaluation CSV for CSV datasets.
    pub path: Option<PathBuf>,
    pub neighbor_count: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            per_class: 1000,
            path: None,
            neighbor_count: 3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    /// Seeds swept in every cell; empty means the top-level seed only.
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheorySection {
    /// Per-class error probabilities in any order; sorted internally.
    pub error_vector: Vec<f64>,
    pub m: usize,
    pub ns: Vec<usize>,
    pub p_values: Vec<f64>,
    pub sum_start: SumStart,
}

impl Default for TheorySection {
    fn default() -> Self {
        TheorySection {
            error_vector: REFERENCE_ERROR_VECTOR.to_vec(),
            m: 3,
            ns: vec![2, 4, 8, 16, 32, 64],
            p_values: (1..=9).map(|i| i as f64 / 10.0).collect(),
            sum_start: SumStart::Zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSection {
    pub trials: usize,
}

impl Default for McSection {
    fn default() -> Self {
        McSection { trials: DEFAULT_TRIALS }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Auto,
    Grid,
    Supergradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub mc_samples: usize,
    pub strategy: StrategyKind,
    pub resolution: f64,
    pub iterations: usize,
    pub step_scale: f64,
    pub tolerance: f64,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection {
            mc_samples: DEFAULT_MC_SAMPLES,
            strategy: StrategyKind::Auto,
            resolution: 1e-3,
            iterations: 2000,
            step_scale: 0.1,
            tolerance: 1e-7,
        }
    }
}

impl OracleSection {
    pub fn strategy(&self, k: usize) -> SearchStrategy {
        let grid = SearchStrategy::Grid {
            resolution: self.resolution,
        };
        let sg = SearchStrategy::Supergradient {
            iterations: self.iterations,
            step_scale: self.step_scale,
            tolerance: self.tolerance,
        };
        match self.strategy {
            StrategyKind::Grid => grid,
            StrategyKind::Supergradient => sg,
            StrategyKind::Auto if k <= 3 => grid,
            StrategyKind::Auto => sg,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<ExperimentKind>,
    pub seed: u64,
    pub preset: Option<String>,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub loss: LossSection,
    pub ascent: AscentConfig,
    pub minimax: MinimaxSection,
    pub eval: EvalSection,
    pub ablate: AblateSection,
    pub theory: TheorySection,
    pub mc: McSection,
    pub oracle: OracleSection,
}

/// Offset and scale hyperparameters tuned for one benchmark profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: &'static str,
    pub la_tau: f64,
    pub vs_tau: f64,
    pub vs_gamma: f64,
    pub tla_tau: f64,
}

pub const PRESETS: [Preset; 4] = [
    Preset {
        name: "cifar10-lt",
        la_tau: 2.25,
        vs_tau: 1.25,
        vs_gamma: 0.15,
        tla_tau: 2.25,
    },
    Preset {
        name: "cifar10-step",
        la_tau: 2.25,
        vs_tau: 1.5,
        vs_gamma: 0.2,
        tla_tau: 2.25,
    },
    Preset {
        name: "cifar100-lt",
        la_tau: 1.375,
        vs_tau: 0.75,
        vs_gamma: 0.05,
        tla_tau: 1.375,
    },
    Preset {
        name: "cifar100-step",
        la_tau: 0.875,
        vs_tau: 0.5,
        vs_gamma: 0.05,
        tla_tau: 0.875,
    },
];

pub fn preset(name: &str) -> Result<Preset> {
    PRESETS.iter().copied().find(|p| p.name == name).ok_or_else(|| {
        let allowed: Vec<_> = PRESETS.iter().map(|p| p.name).collect();
        Error::config("preset", format!("unknown preset `{name}`; allowed: {}", allowed.join(", ")))
    })
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let span = e.span().map(|s| format!(" at byte {}", s.start)).unwrap_or_default();
            Error::config("config", format!("{}{span}", e.message()))
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn loss_variant(&self) -> Result<LossVariant> {
        self.loss.variant.parse()
    }

    /// Loss hyperparameters for `variant` after applying the preset.
    pub fn loss_hyper(&self, variant: LossVariant) -> Result<LossHyper> {
        let p = self.preset.as_deref().map(preset).transpose()?;
        let (preset_tau, preset_gamma) = match (p, variant) {
            (Some(p), LossVariant::La) => (Some(p.la_tau), None),
            (Some(p), LossVariant::Vs) => (Some(p.vs_tau), Some(p.vs_gamma)),
            (Some(p), LossVariant::Tla) => (Some(p.tla_tau), None),
            _ => (None, None),
        };
        let d = LossHyper::default();
        Ok(LossHyper {
            tau: self.loss.tau.or(preset_tau).unwrap_or(d.tau),
            gamma: self.loss.gamma.or(preset_gamma).unwrap_or(d.gamma),
            beta: self.loss.beta,
            ldam_max_margin: self.loss.ldam_max_margin,
            drw_start_epoch: self.loss.drw_start_epoch,
        })
    }

    /// Training config for seed `seed`.
    pub fn minimax_config(&self, seed: u64) -> Result<MinimaxConfig> {
        let loss = self.loss_variant()?;
        let m = &self.model;
        Ok(MinimaxConfig {
            t0: self.minimax.t0,
            t1: self.minimax.t1,
            t2: self.minimax.t2,
            loss,
            hyper: self.loss_hyper(loss)?,
            ascent: AscentConfig {
                tie_seed: seed,
                ..self.ascent.clone()
            },
            train: TrainConfig {
                learning_rate: m.learning_rate,
                momentum: m.momentum,
                weight_decay: m.weight_decay,
                batch_size: m.batch_size,
                epochs: self.minimax.t0 + self.minimax.t1 + self.minimax.t2,
                warmup_epochs: m.warmup_epochs,
                decay_epochs: m.decay_epochs.clone(),
                decay_factor: m.decay_factor,
                seed,
            },
            architecture: m.architecture(),
            model_fraction: self.minimax.model_fraction,
            partition_seed: seed,
            init_seed: seed,
        })
    }

    /// Checks everything the chosen experiment will use.
    pub fn validate(&self, kind: ExperimentKind) -> Result<()> {
        if let Some(p) = &self.preset {
            preset(p)?;
        }
        match kind {
            ExperimentKind::Train | ExperimentKind::Ablate => {
                let k = match self.dataset.mixture()? {
                    Some(spec) => spec.class_count(),
                    None => {
                        if self.dataset.path.is_none() {
                            return Err(Error::config("dataset.path", "required for csv datasets"));
                        }
                        2
                    }
                };
                self.minimax_config(self.seed)?.validate(k)?;
            }
            ExperimentKind::Theory | ExperimentKind::Mc => {
                if self.theory.ns.is_empty() || self.theory.ns.contains(&0) {
                    return Err(Error::config("theory.ns", "must be a nonempty list of positive sample counts"));
                }
                if self.theory.m == 0 || self.theory.m > self.theory.error_vector.len() {
                    return Err(Error::config("theory.m", "must lie in [1, K]"));
                }
            }
            ExperimentKind::Oracle => {
                if self.dataset.mixture()?.is_none() {
                    return Err(Error::config("dataset.source", "the oracle needs a Gaussian mixture"));
                }
            }
        }
        Ok(())
    }
}

/// Training and evaluation data for one seed.
pub fn build_datasets(config: &ExperimentConfig, seed: u64) -> Result<(LabeledDataset, Option<LabeledDataset>)> {
    let ds = &config.dataset;
    match ds.mixture()? {
        Some(spec) => {
            let counts = make_imbalance_counts(&ds.imbalance, spec.class_count())
                .map_err(|e| Error::config("dataset.imbalance", e.to_string()))?;
            let train = sample_mixture(&spec, &counts, seed)?;
            let eval = if config.eval.per_class > 0 {
                let counts = vec![config.eval.per_class; spec.class_count()];
                Some(sample_mixture(&spec, &counts, seed::derive(seed, tags::EVAL, 0))?)
            } else {
                None
            };
            Ok((train, eval))
        }
        None => {
            let schema = CsvSchema { header: ds.header };
            let path = ds
                .path
                .as_ref()
                .ok_or_else(|| Error::config("dataset.path", "required for csv datasets"))?;
            let train = load_csv_dataset(path, &schema)?;
            let eval = config.eval.path.as_ref().map(|p| load_csv_dataset(p, &schema)).transpose()?;
            Ok((train, eval))
        }
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(File::create(path)?)))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// `epoch, pi_1..pi_K, worst_class, worst_risk`; classes are 1-based.
pub fn write_trajectory_csv<W: Write>(report: &RunReport, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    let mut header = vec!["epoch".to_string()];
    header.extend((1..=report.class_count).map(|y| format!("pi_{y}")));
    header.push("worst_class".into());
    header.push("worst_risk".into());
    w.write_record(&header)?;
    for e in &report.epochs {
        let mut row = vec![e.epoch.to_string()];
        row.extend(e.prior.as_slice().iter().map(|&p| format_real(p)));
        row.push((e.worst_class + 1).to_string());
        row.push(format_real(e.worst_risk));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-epoch loss and accuracy table.
pub fn write_epochs_csv<W: Write>(report: &RunReport, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    w.write_record([
        "epoch",
        "phase",
        "mean_loss",
        "ascent_m",
        "eval_worst_class",
        "eval_worst_accuracy",
        "eval_balanced_accuracy",
    ])?;
    for e in &report.epochs {
        let (wc, wa, ba) = match &e.eval {
            Some(s) => (
                (s.worst_class + 1).to_string(),
                format_real(s.worst_accuracy),
                format_real(s.balanced_accuracy),
            ),
            None => (String::new(), String::new(), String::new()),
        };
        w.write_record([
            e.epoch.to_string(),
            e.phase.name().to_string(),
            format_real(e.mean_loss),
            e.ascent_m.map(|m| m.to_string()).unwrap_or_default(),
            wc,
            wa,
            ba,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// A theory or Monte Carlo curve point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub n: usize,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// `N, value, ci_low, ci_high`.
pub fn write_curve_csv<W: Write>(rows: &[CurveRow], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    w.write_record(["N", "value", "ci_low", "ci_high"])?;
    for r in rows {
        w.write_record([r.n.to_string(), format_real(r.value), format_real(r.ci_low), format_real(r.ci_high)])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the plot tables of a run report into `dir`.
pub fn emit_plot_data(report: &RunReport, dir: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    write_trajectory_csv(report, BufWriter::new(File::create(dir.join("trajectory.csv"))?))?;
    write_epochs_csv(report, BufWriter::new(File::create(dir.join("epochs.csv"))?))?;
    Ok(vec!["trajectory.csv".into(), "epochs.csv".into()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: ExperimentKind,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub crate_name: String,
    pub crate_version: String,
    pub files: Vec<String>,
}

fn canonical_hash(config: &ExperimentConfig) -> Result<String> {
    Ok(config_hash(&serde_json::to_string(config)?))
}

fn write_run(outcome: &RunOutcome, dir: &Path, hash: &str, seed: u64, eval: Option<&LabeledDataset>, neighbors: usize) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let report = &outcome.report;
    write_json(&dir.join("report.json"), report)?;
    let ck = Checkpoint::from_params(&outcome.params, hash.to_string(), seed);
    write_json(&dir.join("checkpoint.json"), &ck)?;
    let mut files = vec!["report.json".to_string(), "checkpoint.json".to_string()];
    files.extend(emit_plot_data(report, dir)?);

    let mut w = csv_writer(&dir.join("summary.csv"))?;
    w.write_record(["metric", "value"])?;
    if let Some(e) = &report.final_eval {
        w.write_record(["worst_class", &(e.worst_class + 1).to_string()])?;
        w.write_record(["worst_class_accuracy", &format_real(e.worst_accuracy)])?;
        w.write_record(["balanced_accuracy", &format_real(e.balanced_accuracy)])?;
        w.write_record(["worst_class_prior", &format_real(report.worst_class_prior())])?;
    }
    for (y, p) in report.final_prior.as_slice().iter().enumerate() {
        w.write_record([format!("final_pi_{}", y + 1), format_real(*p)])?;
    }
    w.flush()?;
    files.push("summary.csv".into());

    if let Some(eval) = eval {
        let feats = extract_features(&outcome.params, eval.features())?;
        let ratios = inter_intra_ratio(&feats, eval.labels(), eval.class_count(), neighbors)?;
        let mut w = csv_writer(&dir.join("inter_intra.csv"))?;
        w.write_record(["class", "d_inter", "d_intra", "ratio"])?;
        for (y, r) in ratios.iter().enumerate() {
            w.write_record([(y + 1).to_string(), format_real(r.d_inter), format_real(r.d_intra), format_real(r.ratio)])?;
        }
        w.flush()?;
        files.push("inter_intra.csv".into());
    }
    Ok(files)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// One cell of an ablation comparison, medians over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub cell: String,
    pub loss: String,
    pub ascent: String,
    pub runs: usize,
    pub worst_class_accuracy: f64,
    pub worst_class_prior: f64,
    pub balanced_accuracy: f64,
}

fn run_train(config: &ExperimentConfig, out: &Path, hash: &str) -> Result<Vec<String>> {
    let (train, eval) = build_datasets(config, config.seed)?;
    let mc = config.minimax_config(config.seed)?;
    let outcome = run_minimax(&mc, &train, eval.as_ref())?;
    let mut files = write_run(&outcome, out, hash, config.seed, eval.as_ref(), config.eval.neighbor_count)?;
    if mc.loss.is_targeted() {
        let tau = if mc.loss == crate::losses::LossVariant::Tla { mc.hyper.tau } else { 1.0 };
        let factors = comparator_factors(&outcome.params, &train, &outcome.report.final_prior, tau)?;
        let mut w = csv_writer(&out.join("bound_factors.csv"))?;
        w.write_record(["class", "pi_train", "pi_final", "tla_factor", "twce_factor", "psi_tla", "psi_twce"])?;
        let pi_train = Prior::from_counts(&outcome.report.train_counts)?;
        for f in &factors {
            w.write_record([
                (f.class + 1).to_string(),
                format_real(pi_train[f.class]),
                format_real(outcome.report.final_prior[f.class]),
                format_real(f.tla_factor),
                format_real(f.twce_factor),
                format_real(f.psi_tla),
                format_real(f.psi_twce),
            ])?;
        }
        w.flush()?;
        files.push("bound_factors.csv".into());
    }
    Ok(files)
}

/// Runs the four loss × ascent cells for every seed and returns the medians.
pub fn run_ablation(config: &ExperimentConfig, out: Option<&Path>, hash: &str) -> Result<(Vec<ComparisonRow>, Vec<String>)> {
    let seeds = if config.ablate.seeds.is_empty() {
        vec![config.seed]
    } else {
        config.ablate.seeds.clone()
    };
    let mut files = Vec::new();
    let mut per_cell: Vec<(String, String, String, Vec<(f64, f64, f64)>)> = Vec::new();
    for &seed in &seeds {
        let (train, eval) = build_datasets(config, seed)?;
        let eval = eval.ok_or_else(|| Error::config("eval", "the ablation needs an evaluation set"))?;
        let base = config.minimax_config(seed)?;
        let cells = swap_components(&base);
        let outcomes: Vec<Result<RunOutcome>> = {
            use rayon::prelude::*;
            cells.par_iter().map(|c| run_minimax(&c.config, &train, Some(&eval))).collect()
        };
        for (cell, outcome) in cells.iter().zip(outcomes) {
            let outcome = outcome?;
            if let Some(out) = out {
                let rel = format!("{}/seed-{seed}", cell.name);
                for f in write_run(&outcome, &out.join(&rel), hash, seed, Some(&eval), config.eval.neighbor_count)? {
                    files.push(format!("{rel}/{f}"));
                }
            }
            let e = outcome.report.final_eval.as_ref().expect("evaluation set given");
            let row = (e.worst_accuracy, outcome.report.worst_class_prior(), e.balanced_accuracy);
            match per_cell.iter_mut().find(|c| c.0 == cell.name) {
                Some(c) => c.3.push(row),
                None => per_cell.push((cell.name.clone(), cell.loss.name().into(), cell.method.name().into(), vec![row])),
            }
        }
    }
    let rows: Vec<ComparisonRow> = per_cell
        .into_iter()
        .map(|(cell, loss, ascent, runs)| ComparisonRow {
            cell,
            loss,
            ascent,
            runs: runs.len(),
            worst_class_accuracy: median(runs.iter().map(|r| r.0).collect()),
            worst_class_prior: median(runs.iter().map(|r| r.1).collect()),
            balanced_accuracy: median(runs.iter().map(|r| r.2).collect()),
        })
        .collect();
    if let Some(out) = out {
        let mut w = csv_writer(&out.join("comparison.csv"))?;
        w.write_record(["cell", "loss", "ascent", "runs", "worst_class_accuracy", "worst_class_prior", "balanced_accuracy"])?;
        for r in &rows {
            w.write_record([
                r.cell.clone(),
                r.loss.clone(),
                r.ascent.clone(),
                r.runs.to_string(),
                format_real(r.worst_class_accuracy),
                format_real(r.worst_class_prior),
                format_real(r.balanced_accuracy),
            ])?;
        }
        w.flush()?;
        files.push("comparison.csv".into());
    }
    Ok((rows, files))
}

fn sorted_errors(config: &ExperimentConfig) -> Vec<f64> {
    let mut e = config.theory.error_vector.clone();
    e.sort_by(|a, b| b.total_cmp(a));
    e
}

fn run_theory(config: &ExperimentConfig, out: &Path) -> Result<Vec<String>> {
    let t = &config.theory;
    let errors = sorted_errors(config);
    let mut w = csv_writer(&out.join("find_worst.csv"))?;
    w.write_record(["N", "prob_find_worst", "failure_bound"])?;
    for &n in &t.ns {
        let p = prob_find_worst(&errors, t.m, n)?;
        w.write_record([n.to_string(), format_real(p), format_real(1.0 - p)])?;
    }
    w.flush()?;
    let mut w = csv_writer(&out.join("mse.csv"))?;
    w.write_record(["P", "N", "mse"])?;
    for &p in &t.p_values {
        for &n in &t.ns {
            w.write_record([format_real(p), n.to_string(), format_real(ega_estimate_mse(p, n, t.sum_start)?)])?;
        }
    }
    w.flush()?;
    Ok(vec!["find_worst.csv".into(), "mse.csv".into()])
}

fn run_mc(config: &ExperimentConfig, out: &Path) -> Result<Vec<String>> {
    let t = &config.theory;
    let trials = config.mc.trials;
    let errors = sorted_errors(config);
    let mut w = csv_writer(&out.join("find_worst_mc.csv"))?;
    w.write_record(["N", "theory_value", "mc_value", "ci_low", "ci_high"])?;
    for (i, &n) in t.ns.iter().enumerate() {
        let bound = 1.0 - prob_find_worst(&errors, t.m, n)?;
        let r = mc_worst_class_failure(&errors, t.m, n, trials, seed::derive(config.seed, tags::MC_TRIAL, i as u64))?;
        w.write_record([n.to_string(), format_real(bound), format_real(r.frequency), format_real(r.ci_low), format_real(r.ci_high)])?;
    }
    w.flush()?;
    let mut w = csv_writer(&out.join("mse_mc.csv"))?;
    w.write_record(["P", "N", "theory_value", "mc_value", "ci_low", "ci_high"])?;
    for (i, &p) in t.p_values.iter().enumerate() {
        for (j, &n) in t.ns.iter().enumerate() {
            let exact = ega_estimate_mse(p, n, t.sum_start)?;
            let stream = seed::derive(config.seed, tags::MC_TRIAL, 1_000 + (i * t.ns.len() + j) as u64);
            let r = mc_ega_mse(p, n, trials, stream)?;
            let (lo, hi) = r.interval();
            w.write_record([format_real(p), n.to_string(), format_real(exact), format_real(r.mean), format_real(lo), format_real(hi)])?;
        }
    }
    w.flush()?;
    Ok(vec!["find_worst_mc.csv".into(), "mse_mc.csv".into()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub prior: Prior,
    pub value: f64,
    pub converged: bool,
    pub evaluations: usize,
    pub exact: bool,
    pub risks: Vec<f64>,
    pub std_errors: Vec<f64>,
}

fn run_oracle(config: &ExperimentConfig, out: &Path) -> Result<Vec<String>> {
    let spec = config
        .dataset
        .mixture()?
        .ok_or_else(|| Error::config("dataset.source", "the oracle needs a Gaussian mixture"))?;
    let k = spec.class_count();
    let oracle = BayesOracle::new(spec, config.oracle.mc_samples, config.seed)?;
    let found = adversarial_prior_search(&oracle, config.oracle.strategy(k))?;
    let risks = oracle.class_risks(&found.prior)?;
    let report = OracleReport {
        prior: found.prior.clone(),
        value: found.value,
        converged: found.converged,
        evaluations: found.evaluations,
        exact: risks.exact,
        risks: risks.risks.clone(),
        std_errors: risks.std_errors.clone(),
    };
    write_json(&out.join("oracle.json"), &report)?;
    let mut w = csv_writer(&out.join("oracle_risks.csv"))?;
    w.write_record(["class", "prior", "risk", "std_error"])?;
    for y in 0..k {
        w.write_record([
            (y + 1).to_string(),
            format_real(found.prior[y]),
            format_real(risks.risks[y]),
            format_real(risks.std_errors[y]),
        ])?;
    }
    w.flush()?;
    Ok(vec!["oracle.json".into(), "oracle_risks.csv".into()])
}

/// Machine-readable record of a failed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub status: String,
    pub experiment: String,
    pub kind: String,
    pub message: String,
}

impl FailureRecord {
    pub fn new(kind: Option<ExperimentKind>, err: &Error) -> Self {
        FailureRecord {
            status: "failed".into(),
            experiment: kind.map(|k| k.name().to_string()).unwrap_or_default(),
            kind: err.kind().into(),
            message: err.to_string(),
        }
    }
}

/// Runs `kind` and writes every artifact plus `manifest.json` into `out`. On
/// failure, artifacts written so far are kept and `failure.json` is added.
pub fn run_experiment(config: &ExperimentConfig, kind: ExperimentKind, out: &Path) -> Result<Manifest> {
    fs::create_dir_all(out)?;
    let result = run_inner(config, kind, out);
    if let Err(e) = &result {
        // best effort: the original error matters more than a write failure
        let _ = write_json(&out.join("failure.json"), &FailureRecord::new(Some(kind), e));
    }
    result
}

fn run_inner(config: &ExperimentConfig, kind: ExperimentKind, out: &Path) -> Result<Manifest> {
    config.validate(kind)?;
    let mut config = config.clone();
    config.experiment = Some(kind);
    let hash = canonical_hash(&config)?;
    let mut files = match kind {
        ExperimentKind::Train => run_train(&config, out, &hash)?,
        ExperimentKind::Ablate => run_ablation(&config, Some(out), &hash)?.1,
        ExperimentKind::Theory => run_theory(&config, out)?,
        ExperimentKind::Mc => run_mc(&config, out)?,
        ExperimentKind::Oracle => run_oracle(&config, out)?,
    };
    files.push("manifest.json".into());
    let seeds = if kind == ExperimentKind::Ablate && !config.ablate.seeds.is_empty() {
        config.ablate.seeds.clone()
    } else {
        vec![config.seed]
    };
    let manifest = Manifest {
        experiment: kind,
        config_hash: hash,
        seeds,
        crate_name: env!("CARGO_PKG_NAME").into(),
        crate_version: env!("CARGO_PKG_VERSION").into(),
        files,
        config,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Re-emits the plot tables of a saved `report.json`.
pub fn report_from_file(report_path: &Path, out: &Path) -> Result<Vec<String>> {
    let report: RunReport = serde_json::from_reader(File::open(report_path)?)?;
    emit_plot_data(&report, out)
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(ExperimentKind::Train),
            "ablate" => Ok(ExperimentKind::Ablate),
            "theory" => Ok(ExperimentKind::Theory),
            "mc" => Ok(ExperimentKind::Mc),
            "oracle" => Ok(ExperimentKind::Oracle),
            _ => Err(Error::config("experiment", format!("unknown experiment `{s}`; allowed: train, ablate, theory, mc, oracle"))),
        }
    }
}
