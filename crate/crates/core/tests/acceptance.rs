//! Acceptance gate: one test per release-checklist criterion, each
//! printing a single pass/fail line.
//!
//! Run with `cargo test --test acceptance -- --nocapture --test-threads=1`
//! to see the lines in order. Statistical criteria run real chains on the
//! regenerated dataset under the frozen master seed, so every number below
//! is reproducible bit for bit.

use std::sync::OnceLock;
use std::time::Instant;

use macsim::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const MASTER_SEED: u64 = 1;
const CHAIN_STEPS: u64 = 1_000_000;
const CHAIN_THIN: u64 = 1_000;

fn verdict(criterion: &str, pass: bool) -> bool {
    println!("criterion {criterion}: {}", if pass { "PASS" } else { "FAIL" });
    pass
}

// ---------------------------------------------------------------- fixtures

struct Pair {
    x: PersonFile,
    y: PersonFile,
    truth: TruthStore,
}

/// Full-size synthetic pair under the frozen master seed.
fn full_pair() -> &'static Pair {
    static PAIR: OnceLock<Pair> = OnceLock::new();
    PAIR.get_or_init(|| {
        let generated = generate_population(&GeneratorConfig {
            y_count: 400_000,
            scale: 1.0,
            seed: block_seed(MASTER_SEED, "population"),
        })
        .expect("full-size generation");
        let spec = ErrorSpec::defaults(block_seed(MASTER_SEED, "errors"));
        let (x, truth) =
            inject_errors(&generated.x, &spec, &generated.layout).expect("error injection");
        Pair { x, y: generated.y, truth }
    })
}

struct ChainRun {
    matrix: BlockMatrix,
    params: Vec<FieldParams>,
    field_names: Vec<&'static str>,
    stream: SampleStream,
    chain_secs: f64,
}

fn run_block(pair: &Pair, blocking: &[Field], key: &str) -> ChainRun {
    let spec = BlockingSpec::on(blocking);
    let set = partition(&pair.x, &pair.y, Some(&pair.truth), &spec).expect("partition");
    let block = set.block(key).expect("fixture block exists");
    let matrix = build_agreement(&pair.x, &pair.y, block, &spec, true).expect("agreement");
    let params = estimate_params(&matrix.agreement).expect("estimation");
    let tp: Vec<TransitionParams> = params.iter().map(transition_params).collect();
    let cfg = ChainConfig::new(
        CHAIN_STEPS,
        CHAIN_THIN,
        0,
        block_seed(MASTER_SEED, &format!("chain.{key}")),
    )
    .expect("chain config");
    let t0 = Instant::now();
    let stream = run_chain(&matrix.agreement, &tp, cfg).expect("chain run");
    ChainRun {
        matrix,
        params,
        field_names: spec.linking_fields.iter().map(|f| f.name()).collect(),
        stream,
        chain_secs: t0.elapsed().as_secs_f64(),
    }
}

/// The first single-field block of the full-size pair, simulated once and
/// shared by the stationarity, convergence, and accuracy criteria.
fn first_block_run() -> &'static ChainRun {
    static RUN: OnceLock<ChainRun> = OnceLock::new();
    RUN.get_or_init(|| run_block(full_pair(), &[Field::Sa1], "10001"))
}

/// Per-sample agree frequency of one field over the matched or non-matched
/// cells.
fn agree_series(stream: &SampleStream, truth_map: &[usize], field: usize, matched: bool) -> Vec<f64> {
    let (x, y, f) = (stream.x_size, stream.y_size, stream.field_count);
    stream
        .samples()
        .map(|cells| {
            let mut agree = 0u64;
            let mut total = 0u64;
            for i in 0..x {
                for j in 0..y {
                    if (j == truth_map[i]) != matched {
                        continue;
                    }
                    total += 1;
                    if cells[(i * y + j) * f + field] == Ternary::Agree {
                        agree += 1;
                    }
                }
            }
            agree as f64 / total as f64
        })
        .collect()
}

/// Over-fields marginal check: |mean − target| within four Monte Carlo
/// standard errors (batch means, 20 batches), with a small absolute floor
/// so constant series survive floating-point summation noise.
fn marginal_failures(run: &ChainRun, matched: bool) -> Vec<String> {
    let tm = run.matrix.agreement.truth_map();
    let mut failures = Vec::new();
    for (l, name) in run.field_names.iter().enumerate() {
        let target = if matched { run.params[l].m } else { run.params[l].u };
        let series = agree_series(&run.stream, tm, l, matched);
        let (mean, se) = batch_means_se(&series, 20).expect("batch means");
        if (mean - target).abs() > 4.0 * se + 1e-9 {
            failures.push(format!(
                "{name}: mean {mean:.6} vs target {target:.6} (se {se:.2e})"
            ));
        }
    }
    failures
}

fn plateau_and_onset(dist: &[f64]) -> (f64, usize) {
    let tail = &dist[dist.len() / 2..];
    let plateau = tail.iter().sum::<f64>() / tail.len() as f64;
    let onset = dist
        .iter()
        .position(|&d| d >= 0.95 * plateau)
        .map_or(usize::MAX, |p| p + 1);
    (plateau, onset)
}

fn accuracy_report(run: &ChainRun) -> AccuracyReport {
    let w = composite_weights(&run.matrix.agreement, &run.params, DEFAULT_WEIGHT_CAP)
        .expect("observed weights");
    let observed = greedy_link(&w, 0.0);
    let relinked =
        relink_samples(&run.stream, &run.params, 0.0, DEFAULT_WEIGHT_CAP).expect("re-link");
    correct_relink(
        &observed,
        &relinked,
        run.matrix.agreement.x_size(),
        Some(run.matrix.agreement.truth_map()),
    )
}

// ------------------------------------------------------------ criterion 1

#[test]
fn criterion_1_matched_marginal_stationarity() {
    let run = first_block_run();
    let failures = marginal_failures(run, true);
    let in_budget = run.chain_secs <= 300.0;
    let pass = verdict("1 (matched-marginal stationarity)", failures.is_empty() && in_budget);
    assert!(
        pass,
        "matched agree-frequency off target: {failures:?}; chain took {:.1}s (budget 300s)",
        run.chain_secs
    );
}

// ------------------------------------------------------------ criterion 2

/// A one-field block whose estimated u lands above 0.5(1−g), forcing the
/// high-u transition branch.
fn high_u_run() -> (FieldParams, SampleStream, Vec<usize>) {
    let (m, u) = (0.8, 0.6);
    let (x, y) = (40usize, 200usize);
    let mut rng = ChaCha20Rng::seed_from_u64(97);
    let mut cells = Vec::with_capacity(x * y);
    for i in 0..x {
        for j in 0..y {
            let target = if j == i { m } else { u };
            cells.push(if rng.random::<f64>() < target {
                Ternary::Agree
            } else {
                Ternary::Disagree
            });
        }
    }
    let truth_map: Vec<usize> = (0..x).collect();
    let block =
        AgreementBlock::new(x, y, 1, cells, truth_map.clone()).expect("high-u fixture block");
    let params = estimate_params(&block).expect("high-u estimation");
    let p = params[0];
    assert!(
        p.u > 0.5 * (1.0 - p.g),
        "fixture must land in the high-u branch (estimated u {:.4})",
        p.u
    );
    let tp: Vec<TransitionParams> = params.iter().map(transition_params).collect();
    let cfg = ChainConfig::new(
        CHAIN_STEPS,
        CHAIN_THIN,
        0,
        block_seed(MASTER_SEED, "chain.high-u"),
    )
    .expect("chain config");
    let stream = run_chain(&block, &tp, cfg).expect("high-u chain");
    (p, stream, truth_map)
}

#[test]
fn criterion_2_non_matched_marginal_stationarity() {
    // real-data fields (all in the low-u branch)
    let run = first_block_run();
    let mut failures = marginal_failures(run, false);

    // forced high-u branch on a synthetic field
    let (p, stream, truth_map) = high_u_run();
    let series = agree_series(&stream, &truth_map, 0, false);
    let matched_series = agree_series(&stream, &truth_map, 0, true);
    let (mean_u, se_u) = batch_means_se(&series, 20).expect("batch means");
    let (mean_m, se_m) = batch_means_se(&matched_series, 20).expect("batch means");
    if (mean_m - p.m).abs() > 4.0 * se_m + 1e-9 {
        failures.push(format!(
            "high-u matched: mean {mean_m:.6} vs target {:.6} (se {se_m:.2e})",
            p.m
        ));
    }
    if (mean_u - p.u).abs() > 4.0 * se_u + 1e-9 {
        failures.push(format!(
            "high-u non-matched: mean {mean_u:.4} vs target {:.4} (se {se_u:.2e}); \
             the level it settles at equals 1-m-g = {:.4}, the deterministic \
             complement of the matched marginal, because with q1=q2=q3=1 every \
             cascade rewrites the whole slice as the exact opposite of the \
             matched cell and the agree/disagree mix locks to it",
            p.u,
            1.0 - p.m - p.g
        ));
    }

    let pass = verdict("2 (non-matched-marginal stationarity)", failures.is_empty());
    assert!(pass, "non-matched agree-frequency off target: {failures:?}");
}

// ------------------------------------------------------------ criterion 3

/// Expected stationary distance contribution of one field, per cell.
fn predicted_distance(p: &FieldParams) -> f64 {
    if p.is_frozen() {
        return 0.0;
    }
    let (m, u, g) = (p.m, p.u, p.g);
    if u <= 0.5 * (1.0 - g) {
        let pi = u / (1.0 - g);
        2.0 * pi * (1.0 - pi) * (1.0 - g)
    } else {
        let c_agree = (1.0 - m - g) / (1.0 - g);
        let u_nm = u / (1.0 - g);
        (1.0 - g) * (c_agree * (1.0 - u_nm) + (1.0 - c_agree) * u_nm)
    }
}

/// First two-field block (in key order) whose MB, EYE and COB all carry
/// weight and whose predicted plateau sits mid-window.
fn second_fixture_key() -> String {
    let pair = full_pair();
    let spec = BlockingSpec::on(&[Field::Sa1, Field::Sex]);
    let set = partition(&pair.x, &pair.y, Some(&pair.truth), &spec).expect("partition");
    for b in &set.blocks {
        if b.x_indices.is_empty() {
            continue;
        }
        let matrix = match build_agreement(&pair.x, &pair.y, b, &spec, true) {
            Ok(m) => m,
            Err(_) => continue,
        };
        let params = match estimate_params(&matrix.agreement) {
            Ok(p) => p,
            Err(_) => continue,
        };
        // linking fields here are MB, BDAY, BYEAR, EYE, COB
        if params[0].is_frozen() || params[3].is_frozen() || params[4].is_frozen() {
            continue;
        }
        let predicted =
            params.iter().map(predicted_distance).sum::<f64>() / params.len() as f64;
        if (0.20..=0.28).contains(&predicted) {
            return b.key.clone();
        }
    }
    panic!("no two-field fixture block matched the selection rule");
}

#[test]
fn criterion_3_distance_convergence() {
    let run = first_block_run();
    let dist = distance_series(&run.stream).expect("distance series");
    let (plateau1, onset1) = plateau_and_onset(&dist);

    let key2 = second_fixture_key();
    let run2 = run_block(full_pair(), &[Field::Sa1, Field::Sex], &key2);
    let dist2 = distance_series(&run2.stream).expect("distance series");
    let (plateau2, _) = plateau_and_onset(&dist2);

    let pass = verdict(
        "3 (distance convergence)",
        (0.08..=0.14).contains(&plateau1) && onset1 <= 100 && (0.19..=0.29).contains(&plateau2),
    );
    assert!(
        pass,
        "single-field block plateau {plateau1:.4} (window 0.08..0.14), onset {onset1} \
         (limit 100); two-field block {key2} plateau {plateau2:.4} (window 0.19..0.29)"
    );
}

// ------------------------------------------------------------ criterion 4

#[test]
fn criterion_4_single_block_accuracy() {
    let run = first_block_run();
    let report = accuracy_report(run);
    let min_prop = report
        .per_record
        .iter()
        .map(|r| r.proportion)
        .fold(f64::INFINITY, f64::min);
    let pass = verdict(
        "4 (single-block accuracy)",
        report.sample_count == 1_000
            && report.overall_mean >= 0.97
            && min_prop >= 0.90
            && report.unlinked_x.is_empty(),
    );
    assert!(
        pass,
        "mean {:.4} (floor 0.97), min per-record {:.4} (floor 0.90), {} samples, {} unlinked",
        report.overall_mean,
        min_prop,
        report.sample_count,
        report.unlinked_x.len()
    );
}

// ------------------------------------------------------------ criterion 5

#[test]
fn criterion_5_scaled_pipeline_run() {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut cfg = pipeline::RunConfig::new(
        pipeline::InputSource::Generate { y_count: 40_000, scale: 1.0 },
        dir.path().join("run"),
    );
    cfg.seed = MASTER_SEED;
    cfg.steps = CHAIN_STEPS;
    cfg.thin = CHAIN_THIN;
    let t0 = Instant::now();
    let summary = pipeline::run_assessment(&cfg).expect("scaled run");
    let elapsed = t0.elapsed().as_secs_f64();

    let share_above = summary.records_above_090 as f64 / summary.record_total as f64;
    let pass = verdict(
        "5 (scaled full-pipeline run)",
        summary.blocks_total == 100
            && summary.blocks_failed == 0
            && summary.record_total == 5_000
            && summary.overall_mean >= 0.97
            && share_above >= 0.95
            && elapsed <= 6_000.0,
    );
    assert!(
        pass,
        "{} blocks ({} failed), {} records, mean {:.4} (floor 0.97), {:.2}% above 0.90 \
         (floor 95%), {elapsed:.0}s (budget 6000s)",
        summary.blocks_total,
        summary.blocks_failed,
        summary.record_total,
        summary.overall_mean,
        100.0 * share_above
    );
}

// ------------------------------------------------------------ criterion 6

/// Reference linker: repeatedly scan for the highest remaining eligible
/// weight (first hit in row-major order on ties), link it, and retire its
/// row and column.
fn reference_link(w: &WeightMatrix, cutoff: f64) -> Vec<(usize, usize, f64)> {
    let mut x_free = vec![true; w.x_size];
    let mut y_free = vec![true; w.y_size];
    let mut out = Vec::new();
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..w.x_size {
            if !x_free[i] {
                continue;
            }
            for j in 0..w.y_size {
                if !y_free[j] {
                    continue;
                }
                let weight = w.get(i, j);
                if weight > cutoff && best.is_none_or(|(_, _, b)| weight > b) {
                    best = Some((i, j, weight));
                }
            }
        }
        let Some((i, j, weight)) = best else { break };
        x_free[i] = false;
        y_free[j] = false;
        out.push((i, j, weight));
    }
    out.sort_by_key(|&(i, _, _)| i);
    out
}

fn links_match(w: &WeightMatrix, cutoff: f64) -> bool {
    let fast = greedy_link(w, cutoff);
    let slow = reference_link(w, cutoff);
    fast.links.len() == slow.len()
        && fast
            .links
            .iter()
            .zip(&slow)
            .all(|(l, &(i, j, weight))| l.x == i && l.y == j && l.weight == weight)
}

#[test]
fn criterion_6_greedy_linker_reference_equivalence() {
    const VALUES: [f64; 5] = [-1.0, 0.0, 0.5, 1.0, 2.0];
    let mut mismatches = 0u64;
    let mut checked = 0u64;

    // exhaustive over every shape up to 4x4 with at most 9 cells
    for x_size in 1..=4usize {
        for y_size in 1..=4usize {
            let cells = x_size * y_size;
            if cells > 9 {
                continue;
            }
            let combos = 5u64.pow(cells as u32);
            for mut code in 0..combos {
                let mut rows = vec![vec![0.0; y_size]; x_size];
                for cell in rows.iter_mut().flat_map(|r| r.iter_mut()) {
                    *cell = VALUES[(code % 5) as usize];
                    code /= 5;
                }
                let w = WeightMatrix::from_rows(rows);
                for cutoff in [0.0, -1.5] {
                    checked += 1;
                    if !links_match(&w, cutoff) {
                        mismatches += 1;
                    }
                }
            }
        }
    }

    // the remaining shapes have too many grids to enumerate; drive each with
    // a million seeded draws instead
    for (x_size, y_size, seed) in [(3usize, 4usize, 31u64), (4, 3, 32), (4, 4, 33)] {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        for _ in 0..1_000_000 {
            let rows: Vec<Vec<f64>> = (0..x_size)
                .map(|_| (0..y_size).map(|_| VALUES[rng.random_range(0..5)]).collect())
                .collect();
            let w = WeightMatrix::from_rows(rows);
            checked += 1;
            if !links_match(&w, 0.0) {
                mismatches += 1;
            }
        }
    }

    let pass = verdict("6 (greedy-linker reference equivalence)", mismatches == 0);
    assert!(pass, "{mismatches} mismatches out of {checked} weight matrices");
}

// ------------------------------------------------------------ criterion 7

fn missing_cells(cells: &[Ternary]) -> Vec<usize> {
    cells
        .iter()
        .enumerate()
        .filter_map(|(k, &c)| (c == Ternary::Missing).then_some(k))
        .collect()
}

/// Runs instrumented steps and checks the slice rewrite rules against a
/// before-snapshot on every step.
fn cascade_violations(p: FieldParams, seed: u64) -> (u64, Vec<String>) {
    let (x, y) = (6usize, 8usize);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let cells: Vec<Ternary> = (0..x * y)
        .map(|k| {
            let matched = k / y == k % y;
            let target = if matched { p.m } else { p.u };
            let roll: f64 = rng.random();
            if roll < target {
                Ternary::Agree
            } else if roll < target + p.g {
                Ternary::Missing
            } else {
                Ternary::Disagree
            }
        })
        .collect();
    let mut state =
        AgreementBlock::new(x, y, 1, cells, (0..x).collect()).expect("cascade fixture");
    let tp = vec![transition_params(&p)];
    let mut flips = 0u64;
    let mut violations = Vec::new();
    for step in 0..20_000u32 {
        let before = state.cells().to_vec();
        let trace = kernel_step(&mut state, &tp, &mut rng);
        let (i, t) = (trace.record, state.truth_of(trace.record));
        let mut complain = |msg: String| {
            if violations.len() < 5 {
                violations.push(format!("step {step}: {msg}"));
            }
        };
        // cells outside the proposed slice must never move
        for (k, (&was, &now)) in before.iter().zip(state.cells()).enumerate() {
            if k / y != i && was != now {
                complain(format!("cell {k} outside slice {i} changed"));
            }
        }
        let cascaded = matches!(
            trace.outcome,
            StepOutcome::FlippedToDisagree | StepOutcome::FlippedToAgree
        );
        if cascaded {
            flips += 1;
        }
        for j in 0..y {
            let (was, now) = (before[i * y + j], state.get(i, j, 0));
            if j == t {
                continue;
            }
            match (trace.outcome, was) {
                // a matched-cell flip rewrites every agreeing cell of the
                // slice to disagree, deterministically
                (_, Ternary::Agree) if cascaded && now != Ternary::Disagree => {
                    complain(format!("agreeing cell {j} survived a matched flip"));
                }
                // a matched cell that stays disagreeing only promotes
                // disagreements; agreeing cells are untouched
                (StepOutcome::StayedDisagree, Ternary::Agree) if now != Ternary::Agree => {
                    complain(format!("agreeing cell {j} moved on a stay-disagree step"));
                }
                (StepOutcome::StayedAgree | StepOutcome::MatchedMissing, _) if was != now => {
                    complain(format!("cell {j} moved on a no-cascade step"));
                }
                (_, Ternary::Missing) if now != Ternary::Missing => {
                    complain(format!("missing cell {j} came back"));
                }
                _ => {}
            }
        }
    }
    (flips, violations)
}

/// Draws a triple from the domain where marginal-preserving flip rates
/// exist: besides `m > u`, the matched agree mass must dominate the matched
/// disagree mass (`m >= 0.5 * (1 - g)`), otherwise the agree->disagree rate
/// that balances `p2 <= 1` already exceeds one. A field that weak carries
/// no linking signal, and `transition_params` documents it as unsupported.
fn random_valid_params(rng: &mut ChaCha20Rng) -> FieldParams {
    loop {
        let g: f64 = rng.random_range(0.0..0.6);
        let u = rng.random_range(0.0..1.0 - g);
        let floor = (0.5 * (1.0 - g)).max(u);
        let m = rng.random_range(floor..1.0 - g);
        if m > u {
            if let Ok(p) = FieldParams::new(m, u, g) {
                return p;
            }
        }
    }
}

/// One kernel step's expected agree probability for a non-matched cell that
/// currently agrees with probability `u`, given the matched cell sits at its
/// own stationary marginal.
fn one_step_non_matched_agree(p: &FieldParams, tp: &TransitionParams) -> f64 {
    let (m, u, g) = (p.m, p.u, p.g);
    let d = 1.0 - m - g;
    let nm_disagree = 1.0 - u - g;
    g * u
        + m * (tp.p1 * nm_disagree * tp.q1 + (1.0 - tp.p1) * u)
        + d * (tp.p2 * nm_disagree * tp.q2 + (1.0 - tp.p2) * (u + nm_disagree * tp.q3))
}

#[test]
fn criterion_7_kernel_property_suite() {
    let mut failures: Vec<String> = Vec::new();

    // (a) the missing-cell set never changes across retained samples
    let run = first_block_run();
    let initial_missing = missing_cells(run.stream.initial());
    for (s, cells) in run.stream.samples().enumerate() {
        if missing_cells(cells) != initial_missing {
            failures.push(format!("missing-cell set moved at sample {}", s + 1));
            break;
        }
    }

    // (b) instrumented steps: deterministic slice rewrite on matched flips,
    // in both transition branches
    for (p, seed) in [
        (FieldParams::new(0.8, 0.2, 0.1).unwrap(), 301),
        (FieldParams::new(0.8, 0.6, 0.0).unwrap(), 302),
    ] {
        let (flips, violations) = cascade_violations(p, seed);
        if flips == 0 {
            failures.push(format!("no matched flips observed for u={}", p.u));
        }
        failures.extend(violations);
    }

    // (c) the two accuracy averages are the same number, exactly
    let report = accuracy_report(run);
    if report.mean_from_records() != report.mean_from_samples()
        || report.mean_from_records() != report.overall_mean
    {
        failures.push(format!(
            "per-record mean {} != per-sample mean {}",
            report.mean_from_records(),
            report.mean_from_samples()
        ));
    }

    // (d) transition-parameter identities on 10^4 random valid triples
    let mut rng = ChaCha20Rng::seed_from_u64(1201);
    for k in 0..10_000 {
        let p = random_valid_params(&mut rng);
        let tp = transition_params(&p);
        let d = 1.0 - p.m - p.g;
        for (what, v) in [("p1", tp.p1), ("p2", tp.p2), ("q1", tp.q1), ("q2", tp.q2), ("q3", tp.q3)]
        {
            if !(0.0..=1.0).contains(&v) {
                failures.push(format!("triple {k}: {what}={v} outside [0,1]"));
            }
        }
        if !p.is_frozen() && (tp.p2 * d - tp.p1 * p.m).abs() > 1e-12 {
            failures.push(format!("triple {k}: flow balance off by {:.2e}", tp.p2 * d - tp.p1 * p.m));
        }
        let matched_next = (1.0 - tp.p1) * p.m + tp.p2 * d;
        if (matched_next - p.m).abs() > 1e-10 {
            failures.push(format!("triple {k}: matched marginal moves to {matched_next}"));
        }
        let u_next = one_step_non_matched_agree(&p, &tp);
        if (u_next - p.u).abs() > 1e-10 {
            failures.push(format!(
                "triple {k}: non-matched one-step marginal {u_next} vs {} (m={} u={} g={})",
                p.u, p.m, p.u, p.g
            ));
        }
        if failures.len() > 8 {
            break;
        }
    }

    // (d) continued: both branch formulas agree exactly on the boundary
    for k in 0..100 {
        let mut rng = ChaCha20Rng::seed_from_u64(3000 + k);
        let g: f64 = rng.random_range(0.0..0.5);
        let u = 0.5 * (1.0 - g);
        let m = rng.random_range((u + 0.05).min(1.0 - g)..1.0 - g);
        let Ok(p) = FieldParams::new(m, u, g) else { continue };
        let low_p1 = (1.0 - m - g) / m;
        let high_p1 = (1.0 - m - g) * (1.0 - u - g) / (m * (3.0 * u + g - 1.0));
        let tp = transition_params(&p);
        if (low_p1 - high_p1).abs() > 1e-12
            || (tp.p1 - low_p1).abs() > 1e-12
            || (tp.q1 - 1.0).abs() > 1e-12
            || (tp.q2 - 1.0).abs() > 1e-12
        {
            failures.push(format!("branch mismatch at the u=0.5(1-g) boundary, case {k}"));
        }
    }

    let pass = verdict("7 (kernel property suite)", failures.is_empty());
    assert!(pass, "kernel property failures: {failures:?}");
}

// ------------------------------------------------------------ criterion 8

#[test]
fn criterion_8_persistence_round_trip() {
    let mut failures: Vec<String> = Vec::new();
    let dir = tempfile::tempdir().expect("tempdir");

    // bit-exact save/load on randomized streams
    let mut rng = ChaCha20Rng::seed_from_u64(4001);
    for case in 0..50 {
        let x = rng.random_range(1..6usize);
        let y = rng.random_range(x.max(2)..9usize);
        let f = rng.random_range(1..4usize);
        let samples = rng.random_range(1..6usize);
        let burn_in = rng.random_range(0..samples as u64);
        let thin = rng.random_range(1..2_000u64);
        let states: Vec<Vec<Ternary>> = (0..=samples)
            .map(|_| {
                (0..x * y * f)
                    .map(|_| match rng.random_range(0..3u8) {
                        0 => Ternary::Missing,
                        1 => Ternary::Agree,
                        _ => Ternary::Disagree,
                    })
                    .collect()
            })
            .collect();
        let stream = SampleStream::from_states(x, y, f, thin, burn_in, rng.random(), states)
            .expect("stream");
        let path = dir.path().join(format!("case{case}.macs"));
        save_samples(&stream, &path).expect("save");
        let loaded = load_samples(&path).expect("load");
        let meta_equal = loaded.x_size == stream.x_size
            && loaded.y_size == stream.y_size
            && loaded.field_count == stream.field_count
            && loaded.thin == stream.thin
            && loaded.burn_in == stream.burn_in
            && loaded.seed == stream.seed
            && loaded.sample_count() == stream.sample_count();
        let cells_equal = loaded.initial() == stream.initial()
            && stream.samples().zip(loaded.samples()).all(|(a, b)| a == b);
        if !meta_equal || !cells_equal {
            failures.push(format!("case {case}: round-trip not bit-exact"));
        }
    }

    // a rerun and a saved-samples rerun both reproduce the reports byte for
    // byte
    let mut cfg_a = pipeline::RunConfig::new(
        pipeline::InputSource::Generate { y_count: 1_600, scale: 0.05 },
        dir.path().join("a"),
    );
    cfg_a.steps = 20_000;
    cfg_a.block_filter = vec!["10001".into(), "10002".into(), "10003".into()];
    let mut cfg_b = cfg_a.clone();
    cfg_b.out_dir = dir.path().join("b");
    let mut cfg_c = cfg_a.clone();
    cfg_c.out_dir = dir.path().join("c");
    cfg_c.saved_samples = Some(cfg_a.out_dir.join("samples"));
    pipeline::run_assessment(&cfg_a).expect("run a");
    pipeline::run_assessment(&cfg_b).expect("run b");
    pipeline::run_assessment(&cfg_c).expect("run c");
    for name in ["per_record.csv", "per_sample.csv", "bins.csv", "params.csv", "observed_links.csv"]
    {
        let a = std::fs::read(cfg_a.out_dir.join(name)).expect("read a");
        let b = std::fs::read(cfg_b.out_dir.join(name)).expect("read b");
        let c = std::fs::read(cfg_c.out_dir.join(name)).expect("read c");
        if a != b {
            failures.push(format!("{name}: rerun differs"));
        }
        if a != c {
            failures.push(format!("{name}: saved-samples rerun differs"));
        }
    }

    let pass = verdict("8 (persistence round-trip)", failures.is_empty());
    assert!(pass, "persistence failures: {failures:?}");
}

// ------------------------------------------------------------ criterion 9

#[test]
fn criterion_9_synthetic_data_conformance() {
    let pair = full_pair();
    let mut failures: Vec<String> = Vec::new();

    if pair.y.len() != 400_000 {
        failures.push(format!("reference file has {} records", pair.y.len()));
    }
    if pair.x.len() != 50_000 {
        failures.push(format!("linked file has {} records", pair.x.len()));
    }

    // geography: 1,000 areas of exactly 400 records, each split into 5
    // meshblocks of exactly 80, with consistent prefixes
    let mut by_sa1: std::collections::BTreeMap<u32, Vec<&PersonRecord>> =
        std::collections::BTreeMap::new();
    for r in &pair.y.records {
        by_sa1.entry(r.values[0].expect("sa1 present")).or_default().push(r);
    }
    if by_sa1.len() != 1_000 {
        failures.push(format!("{} distinct areas", by_sa1.len()));
    }
    for (sa1, records) in &by_sa1 {
        if records.len() != 400 {
            failures.push(format!("area {sa1}: {} records", records.len()));
            break;
        }
        let mut mb_counts: std::collections::BTreeMap<u32, usize> =
            std::collections::BTreeMap::new();
        for r in records {
            let mb = r.values[1].expect("mb present");
            if mb / 100 != *sa1 {
                failures.push(format!("area {sa1}: meshblock {mb} prefix mismatch"));
                break;
            }
            *mb_counts.entry(mb).or_default() += 1;
        }
        if mb_counts.len() != 5 || mb_counts.values().any(|&c| c != 80) {
            failures.push(format!("area {sa1}: meshblock split {mb_counts:?}"));
            break;
        }
    }

    // exact 50/50 sex split
    let males = pair.y.records.iter().filter(|r| r.values[4] == Some(1)).count();
    let females = pair.y.records.iter().filter(|r| r.values[4] == Some(2)).count();
    if males != 200_000 || females != 200_000 {
        failures.push(format!("sex split {males}/{females}"));
    }

    // exact perturbation counts on the linked file
    let bday_missing = pair
        .x
        .records
        .iter()
        .enumerate()
        .filter(|(i, r)| {
            r.values[Field::Bday.index()].is_none()
                && pair.truth.original(*i, Field::Bday).is_some()
        })
        .count();
    if bday_missing != 4_000 {
        failures.push(format!("{bday_missing} day-of-year blanks (want 4000)"));
    }

    let sex_flips = pair
        .x
        .records
        .iter()
        .enumerate()
        .filter(|(i, r)| {
            pair.truth
                .original(*i, Field::Sex)
                .is_some_and(|old| Some(old) != r.values[Field::Sex.index()])
        })
        .count();
    if sex_flips != 50 {
        failures.push(format!("{sex_flips} sex flips (want 50)"));
    }

    let mut sa1_moves = 0usize;
    for (i, r) in pair.x.records.iter().enumerate() {
        let Some(old) = pair.truth.original(i, Field::Sa1) else { continue };
        let now = r.values[Field::Sa1.index()].expect("sa1 present");
        if now == old {
            continue;
        }
        sa1_moves += 1;
        if now.abs_diff(old) != 1 {
            failures.push(format!("record {i}: area moved {old} -> {now}, not adjacent"));
            break;
        }
        let mb = r.values[Field::Mb.index()].expect("mb present");
        if mb / 100 != now {
            failures.push(format!("record {i}: meshblock {mb} not realigned to area {now}"));
            break;
        }
    }
    if sa1_moves != 500 {
        failures.push(format!("{sa1_moves} area moves (want 500)"));
    }

    let pass = verdict("9 (synthetic-data conformance)", failures.is_empty());
    assert!(pass, "conformance failures: {failures:?}");
}
