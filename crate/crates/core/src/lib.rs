//! macsim — a Markov-chain simulation toolkit for assessing record-linkage
//! accuracy.
//!
//! Given two linked files, the toolkit re-samples the block-level ternary
//! agreement matrix with a stationarity-preserving Markov chain, re-links
//! every retained sample with the same Fellegi–Sunter weighting and greedy
//! one-to-one assignment that produced the observed links, and reports how
//! often each record re-links to its observed partner. The crate also ships
//! a synthetic two-file population generator with configurable error
//! injection so the whole procedure can be exercised end to end without
//! real data.
//!
//! Module map:
//! * [`model`] — ternary cells, agreement blocks, linkage probabilities and
//!   kernel transition parameters;
//! * [`kernel`] — the resampling Markov chain, its sample stream and
//!   distance diagnostic;
//! * [`store`] — bit-packed binary persistence for sample streams;
//! * [`synth`] — synthetic population generation and error injection;
//! * [`blocking`] — block partitioning of two files and per-block
//!   agreement matrices;
//! * [`estimation`] — linkage-probability estimation from a truth-labelled
//!   block;
//! * [`linker`] — composite log-likelihood weights and greedy one-to-one
//!   assignment;
//! * [`analytics`] — correct re-link proportions, histograms, and chain
//!   diagnostics;
//! * [`pipeline`] — end-to-end orchestration from one seeded configuration
//!   to a directory of reports.

pub mod analytics;
pub mod blocking;
pub mod estimation;
pub mod kernel;
pub mod linker;
pub mod model;
pub mod pipeline;
pub mod store;
pub mod synth;

pub use analytics::{
    batch_means_se, bin_report, coarse_edges, correct_relink, distance_series, fine_edges,
    relink_samples, AccuracyReport, AnalyticsError, Bin, BinnedReport, RecordAccuracy,
    SampleAccuracy,
};
pub use blocking::{
    build_agreement, partition, Block, BlockError, BlockMatrix, BlockSet, BlockingSpec,
};
pub use estimation::{
    estimate_params, estimate_with_options, EstimationError, EstimationOptions, Estimates,
};
pub use kernel::{
    block_seed, distance, kernel_step, run_chain, ternary_counts, Chain, ChainConfig,
    KernelError, SampleStream, StepOutcome, StepTrace, TernaryCounts,
};
pub use linker::{
    composite_weights, composite_weights_raw, field_weights, greedy_link, FieldWeights, Link,
    LinkError, LinkSet, WeightMatrix, DEFAULT_WEIGHT_CAP,
};
pub use model::{
    transition_params, w_from_g, AgreementBlock, FieldParams, ModelError, Ternary,
    TransitionParams, FROZEN_EPS,
};
pub use pipeline::{
    build_config, parse_config_text, parse_fields, run_assessment, run_to, InputSource,
    PipelineError, RunConfig, RunSummary, Stage,
};
pub use store::{load_samples, save_samples, SampleWriter, StoreError, StreamHeader};
pub use synth::{
    country_table, generate_population, inject_errors, read_person_csv, read_truth_csv,
    write_person_csv, write_truth_csv, ErrorSpec, Field, Generated, GeneratorConfig,
    PersonFile, PersonRecord, SynthError, SynthLayout, TruthStore, ALL_FIELDS,
    AUSTRALIA_CODE,
};
