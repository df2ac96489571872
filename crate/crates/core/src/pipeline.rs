//! End-to-end orchestration: run configuration, seeded dataset
//! preparation, block partitioning, per-block estimation, observed
//! linking, chain simulation with streamed sample persistence,
//! re-linking of every retained sample, and report emission.
//!
//! A run is driven by one master seed. Purpose-specific seeds are derived
//! from it by hashing a label ("population", "errors", "chain.<key>"), so
//! per-block work can be scheduled in any order — or in parallel — without
//! changing any output. Reports are written in block-key order and are
//! byte-identical across reruns of the same configuration; the manifest
//! additionally carries wall-clock timings and is the one file excluded
//! from that guarantee.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::analytics::{
    bin_report, coarse_edges, correct_relink, fine_edges, AccuracyReport, AnalyticsError,
    BinnedReport,
};
use crate::blocking::{build_agreement, partition, BlockError, BlockingSpec};
use crate::estimation::{estimate_with_options, EstimationError, EstimationOptions};
use crate::kernel::{
    block_seed, distance, ternary_counts, Chain, ChainConfig, KernelError, TernaryCounts,
};
use crate::linker::{
    composite_weights, composite_weights_raw, field_weights, greedy_link, FieldWeights,
    LinkError, LinkSet, DEFAULT_WEIGHT_CAP,
};
use crate::model::{FieldParams, ModelError};
use crate::store::{load_samples, SampleWriter, StoreError, StreamHeader};
use crate::synth::{
    generate_population, inject_errors, read_person_csv, read_truth_csv, write_person_csv,
    write_truth_csv, ErrorSpec, Field, GeneratorConfig, PersonFile, SynthError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Block(#[from] BlockError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("saved samples for block {key} do not match its agreement matrix")]
    SavedSamplesMismatch { key: String },
    #[error("all {0} selected blocks failed")]
    AllBlocksFailed(usize),
}

/// Where the two files come from.
#[derive(Debug, Clone, PartialEq)]
pub enum InputSource {
    /// Generate a synthetic pair with the default error profile.
    Generate { y_count: usize, scale: f64 },
    /// Read previously written CSVs (X, Y, and the truth sidecar).
    Files { x: PathBuf, y: PathBuf, truth: PathBuf },
}

/// Everything one run needs. Build it directly, or from key=value pairs
/// via [`build_config`] (config file first, then flag overrides).
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: InputSource,
    /// Fields whose values form the block key; the remaining fields are
    /// compared.
    pub blocking: Vec<Field>,
    /// Composite-weight threshold for the observed link and every re-link.
    pub cutoff: f64,
    pub steps: u64,
    pub thin: u64,
    pub burn_in: u64,
    /// Master seed; all other seeds are derived from it.
    pub seed: u64,
    /// Laplace smoothing mass for estimation (0 keeps raw ratios).
    pub smoothing: f64,
    pub weight_cap: f64,
    pub out_dir: PathBuf,
    /// Only process these block keys (all blocks when empty).
    pub block_filter: Vec<String>,
    /// Reuse sample streams from this directory instead of running chains.
    pub saved_samples: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(input: InputSource, out_dir: impl Into<PathBuf>) -> RunConfig {
        RunConfig {
            input,
            blocking: vec![Field::Sa1],
            cutoff: 0.0,
            steps: 1_000_000,
            thin: 1_000,
            burn_in: 0,
            seed: 1,
            smoothing: 0.0,
            weight_cap: DEFAULT_WEIGHT_CAP,
            out_dir: out_dir.into(),
            block_filter: Vec::new(),
            saved_samples: None,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if let InputSource::Generate { y_count, scale } = &self.input {
            if *y_count == 0 || *scale <= 0.0 {
                return Err(PipelineError::Config(
                    "generation needs a positive record count and scale".into(),
                ));
            }
        }
        if self.blocking.is_empty() {
            return Err(PipelineError::Config("at least one blocking field".into()));
        }
        if self.steps == 0 || self.thin == 0 || self.steps / self.thin == 0 {
            return Err(PipelineError::Config(
                "steps and thin must be positive with steps/thin >= 1".into(),
            ));
        }
        if self.burn_in >= self.steps / self.thin {
            return Err(PipelineError::Config(
                "burn-in must leave at least one usable sample".into(),
            ));
        }
        if !(self.weight_cap > 0.0) || !self.cutoff.is_finite() || self.smoothing < 0.0 {
            return Err(PipelineError::Config(
                "cutoff must be finite, weight cap positive, smoothing non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Parses flat `key=value` configuration text: one pair per line, `#`
/// comments, blank lines ignored. Order is preserved so later pairs (and
/// appended flag overrides) win.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, PipelineError> {
    let mut pairs = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            PipelineError::Config(format!("line {}: expected key=value, got {raw:?}", ln + 1))
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, PipelineError> {
    value
        .parse()
        .map_err(|_| PipelineError::Config(format!("{key}: cannot parse {value:?}")))
}

/// Parses a comma-separated field list (names as in the CSV header, case
/// insensitive).
pub fn parse_fields(value: &str) -> Result<Vec<Field>, PipelineError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|name| {
            Field::from_name(&name.to_uppercase())
                .ok_or_else(|| PipelineError::Config(format!("unknown field {name:?}")))
        })
        .collect()
}

/// Builds a [`RunConfig`] from ordered key=value pairs on top of the
/// defaults (generate 40,000 records at scale 1, block on SA1, 10^6 steps
/// thinned by 1,000, cutoff 0, seed 1, output to `macsim-out`).
pub fn build_config(pairs: &[(String, String)]) -> Result<RunConfig, PipelineError> {
    let mut cfg = RunConfig::new(
        InputSource::Generate { y_count: 40_000, scale: 1.0 },
        "macsim-out",
    );
    let (mut x_path, mut y_path, mut truth_path) = (None, None, None);
    let (mut y_count, mut scale) = (40_000usize, 1.0f64);
    for (key, value) in pairs {
        match key.as_str() {
            "y_count" => y_count = parse_num(key, value)?,
            "scale" => scale = parse_num(key, value)?,
            "x_path" => x_path = Some(PathBuf::from(value)),
            "y_path" => y_path = Some(PathBuf::from(value)),
            "truth_path" => truth_path = Some(PathBuf::from(value)),
            "blocking" => cfg.blocking = parse_fields(value)?,
            "cutoff" => cfg.cutoff = parse_num(key, value)?,
            "steps" => cfg.steps = parse_num(key, value)?,
            "thin" => cfg.thin = parse_num(key, value)?,
            "burn_in" => cfg.burn_in = parse_num(key, value)?,
            "seed" => cfg.seed = parse_num(key, value)?,
            "smoothing" => cfg.smoothing = parse_num(key, value)?,
            "weight_cap" => cfg.weight_cap = parse_num(key, value)?,
            "out" => cfg.out_dir = PathBuf::from(value),
            "blocks" => {
                cfg.block_filter = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect()
            }
            "use_saved_samples" => cfg.saved_samples = Some(PathBuf::from(value)),
            other => {
                return Err(PipelineError::Config(format!("unknown key {other:?}")));
            }
        }
    }
    cfg.input = match (x_path, y_path, truth_path) {
        (None, None, None) => InputSource::Generate { y_count, scale },
        (Some(x), Some(y), Some(truth)) => InputSource::Files { x, y, truth },
        _ => {
            return Err(PipelineError::Config(
                "file input needs x_path, y_path and truth_path together".into(),
            ))
        }
    };
    Ok(cfg)
}

/// How far to take the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    /// Prepare the input pair (generate or read) and stop.
    Prepare,
    /// …plus the block table.
    Partition,
    /// …plus per-block probability estimates.
    Estimation,
    /// …plus the observed links.
    Linking,
    /// …plus chain simulation and persisted sample streams.
    Simulation,
    /// The full assessment with accuracy reports.
    Assessment,
}

/// Aggregate outcome of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub blocks_total: usize,
    pub blocks_selected: usize,
    pub blocks_completed: usize,
    pub blocks_failed: usize,
    /// X records across the selected blocks.
    pub record_total: usize,
    pub linked_records: usize,
    pub unlinked_records: usize,
    /// Grand mean correct re-link proportion over all completed blocks
    /// (exact ratio of aggregated integer tallies; 0 before Assessment).
    pub overall_mean: f64,
    /// Records whose per-record proportion exceeds 0.90.
    pub records_above_090: usize,
}

struct BlockOutput {
    x_recids: Vec<String>,
    y_recids: Vec<String>,
    field_names: Vec<&'static str>,
    params: Vec<FieldParams>,
    observed: Option<LinkSet>,
    report: Option<AccuracyReport>,
    distances: Vec<f64>,
    counts: Vec<TernaryCounts>,
    timings: Vec<(&'static str, u128)>,
}

fn process_block(
    x: &PersonFile,
    y: &PersonFile,
    block: &crate::blocking::Block,
    spec: &BlockingSpec,
    cfg: &RunConfig,
    stage: Stage,
    samples_dir: &Path,
) -> Result<BlockOutput, PipelineError> {
    let mut timings = Vec::new();
    let mut t = Instant::now();
    let mut lap = |timings: &mut Vec<(&'static str, u128)>, name: &'static str| {
        timings.push((name, t.elapsed().as_millis()));
        t = Instant::now();
    };

    let matrix = build_agreement(x, y, block, spec, true)?;
    lap(&mut timings, "build");
    let opts = EstimationOptions { smoothing: cfg.smoothing, drop_invalid_fields: false };
    let params = estimate_with_options(&matrix.agreement, &opts)?.params;
    lap(&mut timings, "estimate");

    let mut out = BlockOutput {
        x_recids: matrix.x_rows.iter().map(|&i| x.records[i].recid.clone()).collect(),
        y_recids: matrix.y_cols.iter().map(|&j| y.records[j].recid.clone()).collect(),
        field_names: spec.linking_fields.iter().map(|f| f.name()).collect(),
        params,
        observed: None,
        report: None,
        distances: Vec::new(),
        counts: Vec::new(),
        timings: Vec::new(),
    };
    if stage < Stage::Linking {
        out.timings = timings;
        return Ok(out);
    }

    let w0 = composite_weights(&matrix.agreement, &out.params, cfg.weight_cap)?;
    let observed = greedy_link(&w0, cfg.cutoff);
    lap(&mut timings, "link");
    if stage < Stage::Simulation {
        out.observed = Some(observed);
        out.timings = timings;
        return Ok(out);
    }

    let a = &matrix.agreement;
    let (x_size, y_size) = (a.x_size(), a.y_size());
    let fws: Vec<FieldWeights> = out
        .params
        .iter()
        .map(|p| field_weights(p, cfg.weight_cap))
        .collect::<Result<_, _>>()?;
    let mut links: Vec<LinkSet> = Vec::new();
    let mut relink_ms = 0u128;
    let mut relink = |cells: &[crate::model::Ternary],
                      links: &mut Vec<LinkSet>|
     -> Result<(), PipelineError> {
        let t = Instant::now();
        let wm = composite_weights_raw(x_size, y_size, cells, &fws)?;
        links.push(greedy_link(&wm, cfg.cutoff));
        relink_ms += t.elapsed().as_millis();
        Ok(())
    };

    match &cfg.saved_samples {
        Some(dir) => {
            let stream = load_samples(&dir.join(format!("{}.macs", block.key)))?;
            let shape_ok = stream.x_size == x_size
                && stream.y_size == y_size
                && stream.field_count == a.field_count()
                && stream.initial() == a.cells();
            if !shape_ok {
                return Err(PipelineError::SavedSamplesMismatch { key: block.key.clone() });
            }
            for (s, cells) in stream.samples().enumerate() {
                out.distances.push(distance(cells, stream.initial())?);
                out.counts.push(ternary_counts(cells));
                if stage == Stage::Assessment && s as u64 >= stream.burn_in {
                    relink(cells, &mut links)?;
                }
            }
            lap(&mut timings, "simulate");
        }
        None => {
            let chain_cfg = ChainConfig::new(
                cfg.steps,
                cfg.thin,
                cfg.burn_in,
                block_seed(cfg.seed, &format!("chain.{}", block.key)),
            )?;
            let tps = out.params.iter().map(crate::model::transition_params).collect();
            let header = StreamHeader {
                x_size: x_size as u32,
                y_size: y_size as u32,
                field_count: a.field_count() as u32,
                samples: chain_cfg.retained() as u32,
                burn_in: cfg.burn_in as u32,
                thin: cfg.thin as u32,
                seed: chain_cfg.seed,
            };
            let initial = a.cells().to_vec();
            let mut chain = Chain::new(matrix.agreement.clone(), tps, chain_cfg)?;
            let mut writer =
                SampleWriter::create(&samples_dir.join(format!("{}.macs", block.key)), header)?;
            writer.write_state(&initial)?;
            let mut emitted = 0u64;
            while let Some(state) = chain.advance() {
                let cells = state.cells();
                writer.write_state(cells)?;
                out.distances.push(distance(cells, &initial)?);
                out.counts.push(ternary_counts(cells));
                emitted += 1;
                if stage == Stage::Assessment && emitted > cfg.burn_in {
                    relink(cells, &mut links)?;
                }
            }
            writer.finish()?;
            lap(&mut timings, "simulate");
        }
    }
    // re-link time accumulated inside the simulate lap; report it on its own
    if let Some(sim) = timings.iter_mut().find(|(n, _)| *n == "simulate") {
        sim.1 = sim.1.saturating_sub(relink_ms);
    }
    timings.push(("relink", relink_ms));

    if stage == Stage::Assessment {
        let report = correct_relink(&observed, &links, x_size, Some(a.truth_map()));
        timings.push(("report", t.elapsed().as_millis()));
        out.report = Some(report);
    }
    out.observed = Some(observed);
    out.timings = timings;
    Ok(out)
}

struct Manifest {
    lines: Vec<(String, String)>,
}

impl Manifest {
    fn new() -> Manifest {
        Manifest { lines: Vec::new() }
    }
    fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.lines.push((key.into(), value.to_string()));
    }
    fn write(&self, path: &Path) -> Result<(), PipelineError> {
        let mut w = BufWriter::new(File::create(path)?);
        for (k, v) in &self.lines {
            writeln!(w, "{k}={v}")?;
        }
        w.flush()?;
        Ok(())
    }
}

fn echo_config(m: &mut Manifest, cfg: &RunConfig, stage: Stage) {
    m.push("run.stage", format!("{stage:?}"));
    m.push("run.seed", cfg.seed);
    match &cfg.input {
        InputSource::Generate { y_count, scale } => {
            m.push("input.mode", "generate");
            m.push("input.y_count", y_count);
            m.push("input.scale", scale);
        }
        InputSource::Files { x, y, truth } => {
            m.push("input.mode", "files");
            m.push("input.x_path", x.display());
            m.push("input.y_path", y.display());
            m.push("input.truth_path", truth.display());
        }
    }
    let blocking: Vec<&str> = cfg.blocking.iter().map(|f| f.name()).collect();
    m.push("run.blocking", blocking.join(","));
    m.push("run.cutoff", cfg.cutoff);
    m.push("run.steps", cfg.steps);
    m.push("run.thin", cfg.thin);
    m.push("run.burn_in", cfg.burn_in);
    m.push("run.smoothing", cfg.smoothing);
    m.push("run.weight_cap", cfg.weight_cap);
    if !cfg.block_filter.is_empty() {
        m.push("run.blocks", cfg.block_filter.join(","));
    }
    if let Some(dir) = &cfg.saved_samples {
        m.push("run.use_saved_samples", dir.display());
    }
}

fn write_csv(
    path: &Path,
    header: &str,
    rows: impl IntoIterator<Item = String>,
) -> Result<(), PipelineError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header}")?;
    for row in rows {
        writeln!(w, "{row}")?;
    }
    w.flush()?;
    Ok(())
}

fn bin_rows(panel: &str, binned: &BinnedReport, out: &mut Vec<String>) {
    for b in &binned.bins {
        out.push(format!("{panel},{},{},{},{}", b.upper, b.lower, b.count, b.percent));
    }
}

/// Runs the pipeline to completion: every stage, all reports.
pub fn run_assessment(cfg: &RunConfig) -> Result<RunSummary, PipelineError> {
    run_to(cfg, Stage::Assessment)
}

/// Runs the pipeline up to `stage`, writing that stage's outputs and the
/// manifest. Per-block failures are isolated: the block is recorded as
/// skipped in the manifest and the run fails only if every selected block
/// failed.
pub fn run_to(cfg: &RunConfig, stage: Stage) -> Result<RunSummary, PipelineError> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    let t_total = Instant::now();
    let mut manifest = Manifest::new();
    echo_config(&mut manifest, cfg, stage);

    // input files
    let t = Instant::now();
    let (x, y, truth) = match &cfg.input {
        InputSource::Generate { y_count, scale } => {
            let generated = generate_population(&GeneratorConfig {
                y_count: *y_count,
                scale: *scale,
                seed: block_seed(cfg.seed, "population"),
            })?;
            let spec = ErrorSpec::defaults(block_seed(cfg.seed, "errors"));
            let (x, truth) = inject_errors(&generated.x, &spec, &generated.layout)?;
            write_person_csv(&x, &cfg.out_dir.join("x.csv"))?;
            write_person_csv(&generated.y, &cfg.out_dir.join("y.csv"))?;
            write_truth_csv(&x, &truth, &cfg.out_dir.join("truth.csv"))?;
            (x, generated.y, truth)
        }
        InputSource::Files { x, y, truth } => {
            let xf = read_person_csv(x)?;
            let yf = read_person_csv(y)?;
            let tr = read_truth_csv(truth, &xf)?;
            (xf, yf, tr)
        }
    };
    manifest.push("input.x_records", x.len());
    manifest.push("input.y_records", y.len());
    manifest.push("time.input_ms", t.elapsed().as_millis());
    if stage == Stage::Prepare {
        manifest.push("time.total_ms", t_total.elapsed().as_millis());
        manifest.write(&cfg.out_dir.join("manifest.txt"))?;
        return Ok(RunSummary {
            out_dir: cfg.out_dir.clone(),
            blocks_total: 0,
            blocks_selected: 0,
            blocks_completed: 0,
            blocks_failed: 0,
            record_total: x.len(),
            linked_records: 0,
            unlinked_records: 0,
            overall_mean: 0.0,
            records_above_090: 0,
        });
    }

    // partition
    let t = Instant::now();
    let spec = BlockingSpec::on(&cfg.blocking);
    let set = partition(&x, &y, Some(&truth), &spec)?;
    write_csv(
        &cfg.out_dir.join("blocks.csv"),
        "block,x_records,y_records",
        set.blocks
            .iter()
            .map(|b| format!("{},{},{}", b.key, b.x_indices.len(), b.y_indices.len())),
    )?;
    manifest.push("blocks.total", set.blocks.len());
    manifest.push("blocks.unblocked_x", set.unblocked_x.len());
    manifest.push("blocks.unblocked_y", set.unblocked_y.len());
    manifest.push("time.partition_ms", t.elapsed().as_millis());

    let mut summary = RunSummary {
        out_dir: cfg.out_dir.clone(),
        blocks_total: set.blocks.len(),
        blocks_selected: 0,
        blocks_completed: 0,
        blocks_failed: 0,
        record_total: 0,
        linked_records: 0,
        unlinked_records: 0,
        overall_mean: 0.0,
        records_above_090: 0,
    };
    if stage == Stage::Partition {
        manifest.push("time.total_ms", t_total.elapsed().as_millis());
        manifest.write(&cfg.out_dir.join("manifest.txt"))?;
        return Ok(summary);
    }

    // selection
    let selected: Vec<&crate::blocking::Block> = if cfg.block_filter.is_empty() {
        set.blocks.iter().collect()
    } else {
        let mut picked = Vec::new();
        for key in &cfg.block_filter {
            match set.block(key) {
                Some(b) => picked.push(b),
                None => {
                    return Err(PipelineError::Config(format!("no block with key {key:?}")))
                }
            }
        }
        picked.sort_by(|a, b| a.key.cmp(&b.key));
        picked
    };
    summary.blocks_selected = selected.len();
    summary.record_total = selected.iter().map(|b| b.x_indices.len()).sum();

    let samples_dir = cfg.out_dir.join("samples");
    if stage >= Stage::Simulation && cfg.saved_samples.is_none() {
        fs::create_dir_all(&samples_dir)?;
    }

    // per-block work, scheduled in parallel, collected in key order
    let t = Instant::now();
    let results: Vec<(String, Result<BlockOutput, String>)> = selected
        .par_iter()
        .map(|b| {
            let r = process_block(&x, &y, b, &spec, cfg, stage, &samples_dir)
                .map_err(|e| e.to_string());
            (b.key.clone(), r)
        })
        .collect();
    manifest.push("time.blocks_ms", t.elapsed().as_millis());

    // reports
    let mut params_rows = Vec::new();
    let mut observed_rows = Vec::new();
    let mut unlinked_rows = Vec::new();
    let mut record_rows = Vec::new();
    let mut sample_rows = Vec::new();
    let mut distance_rows = Vec::new();
    let mut count_rows = Vec::new();
    let mut all_props: Vec<f64> = Vec::new();
    let mut total_correct = 0u64;
    let mut total_cells = 0u64;

    for (key, result) in &results {
        match result {
            Err(reason) => {
                summary.blocks_failed += 1;
                manifest.push(format!("block.{key}.status"), "skipped");
                manifest.push(format!("block.{key}.reason"), reason);
            }
            Ok(out) => {
                summary.blocks_completed += 1;
                manifest.push(format!("block.{key}.status"), "completed");
                manifest.push(format!("block.{key}.x_records"), out.x_recids.len());
                for (name, ms) in &out.timings {
                    manifest.push(format!("block.{key}.time.{name}_ms"), ms);
                }
                for (l, p) in out.params.iter().enumerate() {
                    params_rows.push(format!(
                        "{key},{},{},{},{},{}",
                        out.field_names[l], p.m, p.u, p.g, p.w
                    ));
                }
                if let Some(observed) = &out.observed {
                    for link in &observed.links {
                        observed_rows.push(format!(
                            "{key},{},{},{}",
                            out.x_recids[link.x], out.y_recids[link.y], link.weight
                        ));
                    }
                    for (i, recid) in out.x_recids.iter().enumerate() {
                        if observed.y_of(i).is_none() {
                            unlinked_rows.push(format!("{key},{recid}"));
                        }
                    }
                }
                for (s, d) in out.distances.iter().enumerate() {
                    distance_rows.push(format!("{key},{},{d}", s + 1));
                }
                for (s, c) in out.counts.iter().enumerate() {
                    count_rows.push(format!(
                        "{key},{},{},{},{}",
                        s + 1,
                        c.agree,
                        c.disagree,
                        c.missing
                    ));
                }
                if let Some(report) = &out.report {
                    summary.linked_records += report.linked_count;
                    summary.unlinked_records += report.unlinked_x.len();
                    total_correct += report.total_correct;
                    total_cells +=
                        report.sample_count as u64 * report.linked_count as u64;
                    for r in &report.per_record {
                        let truth_col = match r.observed_is_true {
                            Some(true) => "1",
                            Some(false) => "0",
                            None => "",
                        };
                        record_rows.push(format!(
                            "{key},{},{},{},{},{},{truth_col}",
                            out.x_recids[r.x],
                            out.y_recids[r.observed_y],
                            r.correct,
                            r.samples,
                            r.proportion
                        ));
                        all_props.push(r.proportion);
                    }
                    for s in &report.per_sample {
                        sample_rows.push(format!(
                            "{key},{},{},{},{}",
                            s.sample, s.correct, s.linked, s.proportion
                        ));
                    }
                }
            }
        }
    }

    write_csv(
        &cfg.out_dir.join("params.csv"),
        "block,field,m,u,g,w",
        params_rows,
    )?;
    if stage >= Stage::Linking {
        write_csv(
            &cfg.out_dir.join("observed_links.csv"),
            "block,x_recid,y_recid,weight",
            observed_rows,
        )?;
        write_csv(&cfg.out_dir.join("unlinked.csv"), "block,x_recid", unlinked_rows)?;
    }
    if stage >= Stage::Simulation {
        write_csv(
            &cfg.out_dir.join("distance.csv"),
            "block,sample,distance",
            distance_rows,
        )?;
        write_csv(
            &cfg.out_dir.join("counts.csv"),
            "block,sample,agree,disagree,missing",
            count_rows,
        )?;
    }
    if stage == Stage::Assessment {
        write_csv(
            &cfg.out_dir.join("per_record.csv"),
            "block,x_recid,observed_y_recid,correct,samples,proportion,observed_matches_truth",
            record_rows,
        )?;
        write_csv(
            &cfg.out_dir.join("per_sample.csv"),
            "block,sample,correct,linked,proportion",
            sample_rows,
        )?;
        let mut bins = Vec::new();
        let coarse = bin_report(&all_props, &coarse_edges())?;
        bin_rows("coarse", &coarse, &mut bins);
        let fine = bin_report(&all_props, &fine_edges())?;
        bin_rows("fine", &fine, &mut bins);
        bins.push(format!("fine_rest,0.9,0,{},{}", fine.below_count, if fine.total == 0 {
            0.0
        } else {
            100.0 * fine.below_count as f64 / fine.total as f64
        }));
        write_csv(&cfg.out_dir.join("bins.csv"), "panel,upper,lower,count,percent", bins)?;

        summary.overall_mean = if total_cells == 0 {
            0.0
        } else {
            total_correct as f64 / total_cells as f64
        };
        summary.records_above_090 = all_props.iter().filter(|&&p| p > 0.90).count();
        manifest.push("summary.overall_mean", summary.overall_mean);
        manifest.push("summary.linked_records", summary.linked_records);
        manifest.push("summary.unlinked_records", summary.unlinked_records);
        manifest.push("summary.records_above_0.90", summary.records_above_090);
        manifest.push("summary.record_total", summary.record_total);
    }
    manifest.push("blocks.selected", summary.blocks_selected);
    manifest.push("blocks.completed", summary.blocks_completed);
    manifest.push("blocks.skipped", summary.blocks_failed);
    manifest.push("time.total_ms", t_total.elapsed().as_millis());
    manifest.write(&cfg.out_dir.join("manifest.txt"))?;

    if summary.blocks_completed == 0 && !results.is_empty() {
        return Err(PipelineError::AllBlocksFailed(results.len()));
    }
    Ok(summary)
}
