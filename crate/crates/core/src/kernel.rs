//! Stationary resampling kernel for agreement matrices.
//!
//! The kernel walks a Markov chain over ternary agreement matrices whose
//! per-cell marginals match the block's estimated field probabilities. Each
//! step proposes one matched cell (uniform X record and field), flips it
//! according to [`TransitionParams`], and cascades the non-matched cells of
//! the same record/field slice so the chain leaves the marginals invariant.
//! Missing cells never change: the missingness pattern of the initial matrix
//! is preserved exactly.
//!
//! Determinism: a chain draws from a ChaCha20 stream seeded by
//! [`ChainConfig::seed`]. Per step it draws the record index, then the field
//! index, then (for a non-missing matched cell) one uniform for the matched
//! flip, then one uniform per non-matched *disagreeing* cell in ascending Y
//! order. Identical inputs therefore produce identical sample streams, in
//! both streaming and materialised form.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{AgreementBlock, Ternary, TransitionParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("thin interval must be positive")]
    ZeroThin,
    #[error("total_steps = {total_steps} is not a positive multiple of thin = {thin}")]
    ThinNotDividing { total_steps: u64, thin: u64 },
    #[error("burn_in = {burn_in} must be smaller than the retained sample count {retained}")]
    BurnInTooLarge { burn_in: u64, retained: u64 },
    #[error("{params} field parameter sets supplied for a block with {fields} fields")]
    ParamCount { params: usize, fields: usize },
    #[error("dimension mismatch: {left} vs {right} cells")]
    DimensionMismatch { left: usize, right: usize },
}

/// Chain length, thinning and seeding for one block's simulation.
///
/// The chain runs `total_steps` kernel steps and retains every `thin`-th
/// state, giving `total_steps / thin` retained samples; the first `burn_in`
/// retained samples are excluded from downstream accuracy use but stay in
/// the stream for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainConfig {
    pub total_steps: u64,
    pub thin: u64,
    pub burn_in: u64,
    pub seed: u64,
}

impl ChainConfig {
    pub fn new(total_steps: u64, thin: u64, burn_in: u64, seed: u64) -> Result<Self, KernelError> {
        let cfg = ChainConfig { total_steps, thin, burn_in, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if self.thin == 0 {
            return Err(KernelError::ZeroThin);
        }
        if self.total_steps == 0 || self.total_steps % self.thin != 0 {
            return Err(KernelError::ThinNotDividing {
                total_steps: self.total_steps,
                thin: self.thin,
            });
        }
        let retained = self.total_steps / self.thin;
        if self.burn_in >= retained {
            return Err(KernelError::BurnInTooLarge { burn_in: self.burn_in, retained });
        }
        Ok(())
    }

    /// Number of retained samples, excluding the initial state.
    pub fn retained(&self) -> u64 {
        self.total_steps / self.thin
    }
}

/// What one kernel step did to its proposed matched cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    /// Matched cell is missing; the step is a no-op and consumes no further
    /// randomness.
    MatchedMissing,
    /// Matched cell agreed and stayed agreeing; no cascade.
    StayedAgree,
    /// Matched cell flipped agree -> disagree; cascade ran with `q1`.
    FlippedToDisagree,
    /// Matched cell flipped disagree -> agree; cascade ran with `q2`.
    FlippedToAgree,
    /// Matched cell disagreed and stayed; cascade ran with `q3`.
    StayedDisagree,
}

/// Record/field slice proposed by a step, and what happened to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepTrace {
    pub record: usize,
    pub field: usize,
    pub outcome: StepOutcome,
}

/// Runs one kernel step in place and reports the proposed slice.
pub fn kernel_step(
    state: &mut AgreementBlock,
    params: &[TransitionParams],
    rng: &mut impl Rng,
) -> StepTrace {
    debug_assert_eq!(params.len(), state.field_count());
    let i = rng.random_range(0..state.x_size());
    let l = rng.random_range(0..state.field_count());
    let t = state.truth_of(i);
    let p = &params[l];

    let outcome = match state.get(i, t, l) {
        Ternary::Missing => StepOutcome::MatchedMissing,
        Ternary::Agree => {
            if rng.random::<f64>() < p.p1 {
                state.set(i, t, l, Ternary::Disagree);
                cascade(state, i, t, l, true, p.q1, rng);
                StepOutcome::FlippedToDisagree
            } else {
                StepOutcome::StayedAgree
            }
        }
        Ternary::Disagree => {
            if rng.random::<f64>() < p.p2 {
                state.set(i, t, l, Ternary::Agree);
                cascade(state, i, t, l, true, p.q2, rng);
                StepOutcome::FlippedToAgree
            } else {
                cascade(state, i, t, l, false, p.q3, rng);
                StepOutcome::StayedDisagree
            }
        }
    };
    StepTrace { record: i, field: l, outcome }
}

/// Rewrites the non-matched cells of slice `(i, *, l)` after a matched-cell
/// decision. With `flip_agrees` every agreeing cell becomes disagreeing;
/// disagreeing cells flip to agree with probability `q`, drawn in ascending
/// `j` order. Missing cells are untouched.
fn cascade(
    state: &mut AgreementBlock,
    i: usize,
    t: usize,
    l: usize,
    flip_agrees: bool,
    q: f64,
    rng: &mut impl Rng,
) {
    for j in 0..state.y_size() {
        if j == t {
            continue;
        }
        match state.get(i, j, l) {
            Ternary::Agree if flip_agrees => state.set(i, j, l, Ternary::Disagree),
            Ternary::Disagree => {
                if rng.random::<f64>() < q {
                    state.set(i, j, l, Ternary::Agree);
                }
            }
            _ => {}
        }
    }
}

/// Materialised chain output: the initial state plus every retained sample,
/// with the settings that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStream {
    pub x_size: usize,
    pub y_size: usize,
    pub field_count: usize,
    pub thin: u64,
    pub burn_in: u64,
    pub seed: u64,
    states: Vec<Vec<Ternary>>,
}

impl SampleStream {
    /// Assembles a stream from raw state buffers; `states[0]` is the initial
    /// matrix and each buffer must hold `x_size * y_size * field_count`
    /// cells.
    pub fn from_states(
        x_size: usize,
        y_size: usize,
        field_count: usize,
        thin: u64,
        burn_in: u64,
        seed: u64,
        states: Vec<Vec<Ternary>>,
    ) -> Result<Self, KernelError> {
        let expected = x_size * y_size * field_count;
        if states.is_empty() {
            return Err(KernelError::DimensionMismatch { left: 0, right: expected });
        }
        for s in &states {
            if s.len() != expected {
                return Err(KernelError::DimensionMismatch { left: s.len(), right: expected });
            }
        }
        Ok(SampleStream { x_size, y_size, field_count, thin, burn_in, seed, states })
    }

    pub fn cell_count(&self) -> usize {
        self.x_size * self.y_size * self.field_count
    }

    /// Retained sample count, excluding the initial state.
    pub fn sample_count(&self) -> usize {
        self.states.len() - 1
    }

    /// The initial matrix the chain started from.
    pub fn initial(&self) -> &[Ternary] {
        &self.states[0]
    }

    /// Retained sample `s`, 1-based to match the chain's numbering.
    pub fn sample(&self, s: usize) -> &[Ternary] {
        &self.states[s]
    }

    /// All retained samples in order, excluding the initial state.
    pub fn samples(&self) -> impl Iterator<Item = &[Ternary]> {
        self.states[1..].iter().map(Vec::as_slice)
    }

    /// Retained samples with the first `burn_in` dropped.
    pub fn usable(&self) -> impl Iterator<Item = &[Ternary]> {
        let skip = self.burn_in as usize;
        self.states[1..].iter().skip(skip).map(Vec::as_slice)
    }

    pub fn usable_count(&self) -> usize {
        self.sample_count() - self.burn_in as usize
    }
}

/// A running chain that yields retained samples one at a time.
///
/// `advance` performs `thin` kernel steps and returns a borrow of the new
/// retained state, or `None` once all samples have been produced. Streaming
/// consumption and [`run_chain`] expose the identical state sequence.
pub struct Chain {
    state: AgreementBlock,
    params: Vec<TransitionParams>,
    rng: ChaCha20Rng,
    cfg: ChainConfig,
    emitted: u64,
}

impl Chain {
    pub fn new(
        initial: AgreementBlock,
        params: Vec<TransitionParams>,
        cfg: ChainConfig,
    ) -> Result<Self, KernelError> {
        cfg.validate()?;
        if params.len() != initial.field_count() {
            return Err(KernelError::ParamCount {
                params: params.len(),
                fields: initial.field_count(),
            });
        }
        let rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        Ok(Chain { state: initial, params, rng, cfg, emitted: 0 })
    }

    pub fn config(&self) -> &ChainConfig {
        &self.cfg
    }

    /// Current state: the initial matrix before the first `advance`, then
    /// the most recently retained sample.
    pub fn state(&self) -> &AgreementBlock {
        &self.state
    }

    /// 1-based index of the most recently retained sample (0 = none yet).
    pub fn emitted(&self) -> u64 {
        self.emitted
    }

    /// Runs `thin` steps and returns the next retained sample.
    pub fn advance(&mut self) -> Option<&AgreementBlock> {
        if self.emitted >= self.cfg.retained() {
            return None;
        }
        for _ in 0..self.cfg.thin {
            kernel_step(&mut self.state, &self.params, &mut self.rng);
        }
        self.emitted += 1;
        Some(&self.state)
    }
}

/// Runs a full chain and materialises every retained state.
pub fn run_chain(
    initial: &AgreementBlock,
    params: &[TransitionParams],
    cfg: ChainConfig,
) -> Result<SampleStream, KernelError> {
    let mut chain = Chain::new(initial.clone(), params.to_vec(), cfg)?;
    let mut states = Vec::with_capacity(cfg.retained() as usize + 1);
    states.push(initial.cells().to_vec());
    while let Some(sample) = chain.advance() {
        states.push(sample.cells().to_vec());
    }
    SampleStream::from_states(
        initial.x_size(),
        initial.y_size(),
        initial.field_count(),
        cfg.thin,
        cfg.burn_in,
        cfg.seed,
        states,
    )
}

/// Fraction of cells on which two equally shaped states differ.
pub fn distance(a: &[Ternary], b: &[Ternary]) -> Result<f64, KernelError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(KernelError::DimensionMismatch { left: a.len(), right: b.len() });
    }
    let changed = a.iter().zip(b).filter(|(x, y)| x != y).count();
    Ok(changed as f64 / a.len() as f64)
}

/// Cell tallies of one state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TernaryCounts {
    pub agree: u64,
    pub disagree: u64,
    pub missing: u64,
}

/// Counts agree / disagree / missing cells of a state.
pub fn ternary_counts(cells: &[Ternary]) -> TernaryCounts {
    let mut counts = TernaryCounts::default();
    for c in cells {
        match c {
            Ternary::Agree => counts.agree += 1,
            Ternary::Disagree => counts.disagree += 1,
            Ternary::Missing => counts.missing += 1,
        }
    }
    counts
}

/// Derives the chain seed for one block from the run's master seed, by
/// SHA-256 over a domain tag, the little-endian master seed and the block
/// key. Blocks can therefore run in any order, or in parallel, without
/// changing their streams.
pub fn block_seed(master_seed: u64, block_key: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(b"macsim.block.v1");
    hasher.update(master_seed.to_le_bytes());
    hasher.update(block_key.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}
