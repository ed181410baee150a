//! Domain-adaptation and fusion ablations on synthetic source/target data.
//!
//! Every arm of one run starts from the same initial weights and sees the
//! same source batch order; arms differ only in what is being ablated.

use crate::data::{generate_dataset, Dataset, Domain, DomainSpec, SceneSpec};
use crate::error::Result;
use crate::metrics::{evaluate, format_table, MetricReport, ShufflePool};
use crate::model::{FusionMode, ModelConfig, SaliencyModel};
use crate::train::{fit, DaMode, FitOutputs, LossLog, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub model: ModelConfig,
    pub scene: SceneSpec,
    pub source: DomainSpec,
    pub target: DomainSpec,
    pub source_clips: usize,
    /// Unlabelled target clips seen during adaptation.
    pub target_clips: usize,
    /// Held-out target clips used for evaluation.
    pub test_clips: usize,
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub lambda: f64,
    pub lambda_ramp: bool,
}

impl Default for Experiment {
    fn default() -> Self {
        Experiment {
            model: ModelConfig::small(),
            scene: SceneSpec::default(),
            source: DomainSpec::source(),
            target: DomainSpec::target(),
            source_clips: 16,
            target_clips: 16,
            test_clips: 16,
            steps: 800,
            lr: 1e-4,
            batch: 4,
            lambda: 1.0,
            lambda_ramp: false,
        }
    }
}

pub struct Datasets {
    pub source: Dataset,
    pub target: Dataset,
    pub test: Dataset,
}

#[derive(Clone, Debug)]
pub struct ArmResult {
    pub label: String,
    pub report: MetricReport,
    pub log: LossLog,
}

impl Experiment {
    pub fn datasets(&self, seed: u64) -> Result<Datasets> {
        let base = seed.wrapping_mul(1000);
        Ok(Datasets {
            source: generate_dataset(&self.source, &self.scene, Domain::Source, self.source_clips, base + 1)?,
            target: generate_dataset(&self.target, &self.scene, Domain::Target, self.target_clips, base + 2)?,
            test: generate_dataset(&self.target, &self.scene, Domain::Target, self.test_clips, base + 3)?,
        })
    }

    pub fn train_config(&self, da: DaMode, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch: self.batch,
            steps: self.steps,
            lambda: self.lambda,
            lambda_ramp: self.lambda_ramp,
            seed,
            ..TrainConfig::for_mode(da)
        }
    }

    fn run_arm(&self, data: &Datasets, model: ModelConfig, da: DaMode, seed: u64) -> Result<(MetricReport, LossLog)> {
        let mut net = SaliencyModel::<f32>::new(model, seed)?;
        let cfg = self.train_config(da, seed);
        let log = fit(&mut net, &data.source, Some(&data.target), &cfg, &FitOutputs::default(), |_, _| {})?;
        let report = evaluate(&net, &data.test, ShufflePool::WithinDataset, seed)?;
        Ok((report, log))
    }

    /// Trains the three adaptation arms and scores each on held-out target clips.
    pub fn run_da_ablation(&self, seed: u64) -> Result<Vec<ArmResult>> {
        let data = self.datasets(seed)?;
        DaMode::ALL
            .iter()
            .map(|&da| {
                let (report, log) = self.run_arm(&data, self.model.clone(), da, seed)?;
                Ok(ArmResult {
                    label: da.label().to_string(),
                    report,
                    log,
                })
            })
            .collect()
    }

    /// Trains each fusion variant without adaptation and scores it on
    /// held-out target clips.
    pub fn run_fusion_ablation(&self, seed: u64) -> Result<Vec<ArmResult>> {
        let data = self.datasets(seed)?;
        FusionMode::ALL
            .iter()
            .map(|&fusion| {
                let model = ModelConfig {
                    fusion,
                    ..self.model.clone()
                };
                let (report, log) = self.run_arm(&data, model, DaMode::None, seed)?;
                Ok(ArmResult {
                    label: fusion.label().to_string(),
                    report,
                    log,
                })
            })
            .collect()
    }
}

pub fn results_table(arms: &[ArmResult]) -> String {
    let rows: Vec<_> = arms.iter().map(|a| (a.label.clone(), a.report.mean)).collect();
    format_table(&rows)
}
