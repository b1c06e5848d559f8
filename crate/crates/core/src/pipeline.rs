//! End-to-end orchestration shared by the CLI and the service: training a
//! radio map from survey samples, and the seeded synthetic benchmark.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distribution::{fit_distributions, FitError, SparseRadioMap, DEFAULT_MIN_PRESENCE};
use crate::localizer::{evaluate, AccuracySummary, Evaluation, LocalizeError, LocalizerConfig, TruthObservation};
use crate::model::{AccessPointId, FingerprintSample, Heading, SurveyArea};
use crate::radiomap::{densify, DenseRadioMap, DensifyError, HyperPolicy, SkippedSurface, SurfaceHyperparams};
use crate::simulator::{simulate_at_points, simulate_survey, simulate_test_points, SimError, SimScenario};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Densify(#[from] DensifyError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Localize(#[from] LocalizeError),
}

impl PipelineError {
    /// Short machine-readable name of the failure.
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::InvalidConfig(_) => "InvalidConfig",
            PipelineError::Fit(FitError::EmptyInput) => "EmptyInput",
            PipelineError::Fit(FitError::UnknownReferencePoint { .. }) => "UnknownReferencePoint",
            PipelineError::Densify(_) => "DensifyFailed",
            PipelineError::Simulation(_) => "SimulationFailed",
            PipelineError::Localize(LocalizeError::InsufficientOverlap { .. }) => "InsufficientOverlap",
            PipelineError::Localize(LocalizeError::EmptyInput) => "EmptyInput",
            PipelineError::Localize(_) => "LocalizeFailed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    #[serde(default)]
    pub hyper_policy: HyperPolicy,
    #[serde(default = "default_min_presence")]
    pub min_presence: f64,
}

fn default_spacing() -> f64 {
    1.0
}

fn default_min_presence() -> f64 {
    DEFAULT_MIN_PRESENCE
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { spacing: 1.0, hyper_policy: HyperPolicy::Fixed, min_presence: DEFAULT_MIN_PRESENCE }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.spacing.is_finite() && self.spacing > 0.0) {
            return Err(PipelineError::InvalidConfig(format!("spacing must be positive, got {}", self.spacing)));
        }
        if !(0.0..=1.0).contains(&self.min_presence) {
            return Err(PipelineError::InvalidConfig(format!(
                "min_presence must be within [0, 1], got {}",
                self.min_presence
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceReport {
    pub heading: Heading,
    pub ap: AccessPointId,
    pub hyperparams: SurfaceHyperparams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub config: TrainConfig,
    pub sample_count: usize,
    pub reference_points: usize,
    pub fitted_cells: usize,
    pub access_points: usize,
    pub grid: crate::radiomap::GridSpec,
    pub surfaces: Vec<SurfaceReport>,
    pub skipped: Vec<SkippedSurface>,
    pub elapsed_ms: u128,
}

#[derive(Debug, Clone)]
pub struct TrainedArtifacts {
    pub sparse: SparseRadioMap,
    pub dense: DenseRadioMap,
    pub report: TrainingReport,
}

/// Fits per-cell distributions and densifies them into a radio map.
pub fn train(samples: &[FingerprintSample], area: &SurveyArea, config: TrainConfig) -> Result<TrainedArtifacts, PipelineError> {
    config.validate()?;
    let started = Instant::now();
    let sparse = fit_distributions(samples, area, config.min_presence)?;
    let dense = densify(&sparse, config.spacing, config.hyper_policy)?;
    let report = TrainingReport {
        config,
        sample_count: samples.len(),
        reference_points: area.reference_points.len(),
        fitted_cells: sparse.cells.len(),
        access_points: sparse.ap_index.len(),
        grid: dense.map.grid,
        surfaces: dense
            .map
            .surfaces
            .iter()
            .map(|s| SurfaceReport { heading: s.heading, ap: s.ap(), hyperparams: s.hyperparams })
            .collect(),
        skipped: dense.skipped,
        elapsed_ms: started.elapsed().as_millis(),
    };
    Ok(TrainedArtifacts { sparse, dense: dense.map, report })
}

/// Where benchmark test observations are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestPlacement {
    /// Uniformly random positions and headings.
    #[default]
    Random,
    /// Every reference point at every heading.
    ReferencePoints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    /// Path of a scenario file; the built-in benchmark room when absent.
    pub scenario: Option<String>,
    pub rp_spacing: f64,
    pub scans_per_cell: usize,
    pub test_point_count: usize,
    pub grid_spacing: f64,
    pub hyper_policy: HyperPolicy,
    pub seed: u64,
    pub min_presence: f64,
    pub k: usize,
    pub min_match: usize,
    /// Overrides every AP's shadowing σ when set.
    pub shadowing_std: Option<f64>,
    /// Overrides the scenario's dropout switch when set.
    pub dropout: Option<bool>,
    pub heading_known: bool,
    pub placement: TestPlacement,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            scenario: None,
            rp_spacing: 1.0,
            scans_per_cell: 50,
            test_point_count: 200,
            grid_spacing: 1.0,
            hyper_policy: HyperPolicy::GridSearch,
            seed: 0,
            min_presence: DEFAULT_MIN_PRESENCE,
            k: crate::localizer::DEFAULT_TOP_K,
            min_match: crate::localizer::DEFAULT_MIN_MATCH,
            shadowing_std: None,
            dropout: None,
            heading_known: false,
            placement: TestPlacement::Random,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::InvalidConfig(m.to_string()));
        if !(self.rp_spacing.is_finite() && self.rp_spacing > 0.0) {
            return bad("rp_spacing must be positive");
        }
        if !(self.grid_spacing.is_finite() && self.grid_spacing > 0.0) {
            return bad("grid_spacing must be positive");
        }
        if self.scans_per_cell == 0 {
            return bad("scans_per_cell must be at least 1");
        }
        if self.test_point_count == 0 && self.placement == TestPlacement::Random {
            return bad("test_point_count must be at least 1");
        }
        if self.k == 0 || self.min_match == 0 {
            return bad("k and min_match must be at least 1");
        }
        if let Some(s) = self.shadowing_std {
            if !(s.is_finite() && s >= 0.0) {
                return bad("shadowing_std must be non-negative");
            }
        }
        Ok(())
    }

    /// Scenario with the benchmark's seed, shadowing and RP grid applied.
    pub fn prepare_scenario(&self, base: &SimScenario) -> Result<SimScenario, PipelineError> {
        let mut scenario = base.clone();
        scenario.rng_seed = self.seed;
        if let Some(s) = self.shadowing_std {
            scenario = scenario.with_shadowing(s);
        }
        if let Some(d) = self.dropout {
            scenario.dropout = d;
        }
        scenario.area = SurveyArea::with_interior_grid(scenario.area.width, scenario.area.height, self.rp_spacing);
        scenario.validate()?;
        Ok(scenario)
    }
}

/// The metrics document that acceptance checks read.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkMetrics {
    pub mean_error_m: Option<f64>,
    pub std_error_m: f64,
    pub n: usize,
    pub skipped: usize,
}

impl From<AccuracySummary> for BenchmarkMetrics {
    fn from(s: AccuracySummary) -> Self {
        BenchmarkMetrics { mean_error_m: s.mean_error_m, std_error_m: s.std_error_m, n: s.n, skipped: s.skipped }
    }
}

impl BenchmarkMetrics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkRun {
    pub metrics: BenchmarkMetrics,
    pub evaluation: Evaluation,
    pub report: TrainingReport,
    /// Fraction of localized observations whose best cell contains the truth.
    pub correct_cell_rate: f64,
    pub sample_count: usize,
}

/// Simulate a survey, train, simulate fresh test observations and evaluate.
pub fn run_benchmark(base: &SimScenario, config: &BenchmarkConfig) -> Result<BenchmarkRun, PipelineError> {
    config.validate()?;
    let scenario = config.prepare_scenario(base)?;
    let samples = simulate_survey(&scenario, &scenario.area.reference_points, config.scans_per_cell)?;
    let trained = train(
        &samples,
        &scenario.area,
        TrainConfig { spacing: config.grid_spacing, hyper_policy: config.hyper_policy, min_presence: config.min_presence },
    )?;

    let tests: Vec<TruthObservation> = match config.placement {
        TestPlacement::Random => simulate_test_points(&scenario, config.test_point_count, config.heading_known)?,
        TestPlacement::ReferencePoints => simulate_at_points(&scenario, &scenario.area.reference_points)?
            .into_iter()
            .map(|(mut t, _)| {
                if !config.heading_known {
                    t.observation.heading_hint = None;
                }
                t
            })
            .collect(),
    };

    let evaluation = evaluate(&tests, &trained.dense, LocalizerConfig { k: config.k, min_match: config.min_match })?;
    let grid = trained.dense.grid;
    let hits = evaluation
        .records
        .iter()
        .filter(|r| r.estimate.top_cells[0].cell == grid.cell_at(r.ground_truth.0, r.ground_truth.1))
        .count();
    let correct_cell_rate = if evaluation.records.is_empty() {
        0.0
    } else {
        hits as f64 / evaluation.records.len() as f64
    };

    Ok(BenchmarkRun {
        metrics: evaluation.summary.into(),
        report: trained.report,
        evaluation,
        correct_cell_rate,
        sample_count: samples.len(),
    })
}
