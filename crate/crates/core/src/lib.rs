//! Streaming detection, classification, and recovery for unobservable
//! false-data-injection attacks on synchrophasor measurement streams.
//!
//! The crate is organized around one dataflow:
//!
//! - [`grid`] synthesizes clean PMU measurements from a linear bus model and
//!   provides the residual-based bad-data detector those attacks bypass;
//! - [`attack`] builds unobservable corruption schedules and injects them;
//! - [`circle`] fits least-squares circles to sliding windows;
//! - [`detect`] turns center deviations into intrusion flags and attack
//!   patterns;
//! - [`classify`] clusters patterns online with cross-correlation symmetry;
//! - [`retrieve`] subtracts the estimated injection sample by sample;
//! - [`eval`] runs full scenarios against ground truth and scores them.
//!
//! Domain types live in [`model`]; file formats in [`io`]; scenario presets
//! in [`scenario`]; the lockstep driver in [`pipeline`].

pub mod attack;
pub mod circle;
pub mod classify;
pub mod detect;
pub mod error;
pub mod eval;
pub mod grid;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod retrieve;
pub mod scenario;

pub use attack::{build_plan, inject, AttackPlan, ClassInterval, LabelTrack, Strategy};
pub use circle::{fit_circle, fit_circle_fast, CircleFit};
pub use classify::{
    calibrate_gamma, cross_correlation, pattern_similarity, similarity, ClassMemory, Ensemble, SimilarityMode,
};
pub use detect::{calibrate_channels, ChannelDetector, DetectionEvent, DetectorParams};
pub use error::{Error, Result};
pub use eval::{
    detection_latency, noise_sweep, onset_patterns, run_scenario, run_scenario_with_sweep, score_detection,
    score_rmse, MetricsReport,
};
pub use grid::{generate_clean, repeat_cycles, GridModel, GridSynthParams, MagnitudeStep, ResidualReport};
pub use io::{load_stream, save_stream, StreamFormat};
pub use model::{
    AttackPattern, ChannelKind, ChannelMeta, ComplexSample, DeviationQueue, MeasurementMatrix, SlidingWindow,
};
pub use pipeline::{ClassificationRecord, PipelineOutput};
pub use retrieve::{retrieve_sample, retrieve_stream, RetrievalContext, RetrievalDiagnostics};
pub use scenario::ScenarioConfig;
