//! Infrastructure-free indoor positioning from dual-band WiFi RSSI
//! fingerprints.
//!
//! The offline phase fits a normal distribution to the RSS of every access
//! point at every surveyed reference point and heading
//! ([`distribution::fit_distributions`]), then densifies those Gaussians onto
//! a regular grid with Gaussian process regression ([`radiomap::densify`]).
//! The online phase scores a live scan against every grid cell and heading
//! and returns a maximum-likelihood estimate ([`localizer::localize`]).
//!
//! [`simulator`] generates reproducible scans from a virtual room so the
//! whole pipeline can be exercised without hardware, and [`pipeline`] wires
//! the stages together.

pub mod distribution;
pub mod gpr;
pub mod jsonl;
pub mod localizer;
pub mod model;
pub mod pipeline;
pub mod radiomap;
pub mod simulator;

pub use distribution::{
    coverage_report, fit_distributions, CellDistribution, CellKey, CoverageReport, FitError, SparseRadioMap,
    SIGMA_FLOOR_DB,
};
pub use gpr::{gpr_fit, gpr_predict, select_hyperparams, GprError, GprHyperparams, GprModel, Prediction};
pub use jsonl::{read_jsonl, write_jsonl, JsonlError};
pub use localizer::{
    evaluate, localize, score_cell, AccuracyRecord, AccuracySummary, Evaluation, LocalizeError, LocalizerConfig,
    Observation, PositionEstimate, ScoredCell, TruthObservation,
};
pub use model::{
    validate_sample, AccessPointId, Band, Bssid, FingerprintSample, Heading, Readings, ReferencePoint, SurveyArea,
    ValidationError,
};
pub use pipeline::{
    run_benchmark, train, BenchmarkConfig, BenchmarkMetrics, BenchmarkRun, PipelineError, TestPlacement,
    TrainConfig, TrainedArtifacts, TrainingReport,
};
pub use radiomap::{densify, DenseRadioMap, DensifyError, DensifyOutput, GridSpec, HyperPolicy, Surface};
pub use simulator::{
    simulate_rssi, simulate_survey, simulate_test_points, simulate_walk, PathLossParams, SimError, SimScenario,
    VirtualAp, WalkStep,
};
