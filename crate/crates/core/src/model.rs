//! Core domain types: ternary agreement cells, per-block agreement matrices,
//! per-field linkage probabilities and the closed-form transition
//! probabilities used by the resampling kernel.

use thiserror::Error;

/// Tolerance below which a matched-disagreement mass is treated as zero and
/// the field is held frozen by the kernel.
pub const FROZEN_EPS: f64 = 1e-12;

/// Comparison outcome for one linking field of one record pair.
///
/// `Missing` means at least one of the two values is absent, `Agree` that
/// both are present and equal, `Disagree` that both are present and unequal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(i8)]
pub enum Ternary {
    Missing = 0,
    Agree = 1,
    Disagree = -1,
}

impl Ternary {
    /// Numeric code: 1 for agree, -1 for disagree, 0 for missing.
    pub fn code(self) -> i8 {
        self as i8
    }

    pub fn from_code(code: i8) -> Option<Self> {
        match code {
            0 => Some(Ternary::Missing),
            1 => Some(Ternary::Agree),
            -1 => Some(Ternary::Disagree),
            _ => None,
        }
    }

    pub fn is_missing(self) -> bool {
        self == Ternary::Missing
    }
}

/// Errors raised while building or validating core model values.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("probability `{name}` = {value} is outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("m + g = {sum} exceeds 1 (m = {m}, g = {g})")]
    MatchedMassExceedsOne { m: f64, g: f64, sum: f64 },
    #[error("u + g = {sum} exceeds 1 (u = {u}, g = {g})")]
    UnmatchedMassExceedsOne { u: f64, g: f64, sum: f64 },
    #[error("m = {m} is not greater than u = {u}; field carries no linking information")]
    MNotAboveU { m: f64, u: f64 },
    #[error("block has {x_size} X records but only {y_size} Y records")]
    XLargerThanY { x_size: usize, y_size: usize },
    #[error("truth map length {len} does not match x_size {x_size}")]
    TruthMapLength { len: usize, x_size: usize },
    #[error("truth map entry {value} for X record {x} is outside the Y range {y_size}")]
    TruthMapOutOfRange { x: usize, value: usize, y_size: usize },
    #[error("truth map maps X records {a} and {b} to the same Y record {y}")]
    TruthMapNotInjective { a: usize, b: usize, y: usize },
    #[error("cell buffer holds {len} values, expected {expected}")]
    CellCount { len: usize, expected: usize },
    #[error("block needs at least one X record and two Y records, got {x_size}x{y_size}")]
    DegenerateBlock { x_size: usize, y_size: usize },
}

fn check_unit(name: &'static str, value: f64) -> Result<(), ModelError> {
    if value.is_finite() && (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(ModelError::OutOfRange { name, value })
    }
}

/// Per-record missing-value probability implied by a pair-level missing
/// probability `g`, assuming the two records go missing independently:
/// `(1 - w)^2 = 1 - g`.
pub fn w_from_g(g: f64) -> Result<f64, ModelError> {
    check_unit("g", g)?;
    Ok(1.0 - (1.0 - g).sqrt())
}

/// Per-field linkage probabilities estimated on (or supplied for) one block.
///
/// * `m` — probability that a truly matched pair agrees on the field,
/// * `u` — probability that a non-matched pair agrees on the field,
/// * `g` — probability that the pair's comparison is missing,
/// * `w` — per-record missing probability derived from `g`.
///
/// All three of `m`, `u`, `g` are unconditional over all pairs, so missing
/// pairs count toward their denominators and `m + g <= 1`, `u + g <= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldParams {
    pub m: f64,
    pub u: f64,
    pub g: f64,
    pub w: f64,
}

impl FieldParams {
    /// Validates the probability triple and derives `w`.
    ///
    /// Rejects out-of-range values, `m + g > 1`, `u + g > 1`, and `m <= u`
    /// (a field that agrees no more often on matches than on non-matches
    /// cannot drive a linkage decision). Probabilities estimated as ratios
    /// of integer counts can overshoot the mass constraints by a rounding
    /// ulp; overshoots below `SUM_SLACK` are snapped back instead of
    /// rejected.
    pub fn new(m: f64, u: f64, g: f64) -> Result<Self, ModelError> {
        const SUM_SLACK: f64 = 1e-9;
        check_unit("m", m)?;
        check_unit("u", u)?;
        check_unit("g", g)?;
        if m + g > 1.0 + SUM_SLACK {
            return Err(ModelError::MatchedMassExceedsOne { m, g, sum: m + g });
        }
        if u + g > 1.0 + SUM_SLACK {
            return Err(ModelError::UnmatchedMassExceedsOne { u, g, sum: u + g });
        }
        let g = g.min(1.0 - m);
        let u = u.min(1.0 - g);
        if m <= u {
            return Err(ModelError::MNotAboveU { m, u });
        }
        let w = w_from_g(g)?;
        Ok(FieldParams { m, u, g, w })
    }

    /// Matched-disagreement mass `1 - m - g`, clamped at zero.
    pub fn matched_disagree(&self) -> f64 {
        (1.0 - self.m - self.g).max(0.0)
    }

    /// True when matched pairs never disagree on this field, in which case
    /// the kernel never moves its matched cells.
    pub fn is_frozen(&self) -> bool {
        1.0 - self.m - self.g <= FROZEN_EPS
    }
}

/// Flip probabilities for one field of the stationary resampling kernel.
///
/// Per kernel step one matched cell is proposed:
/// * agree -> disagree with probability `p1`,
/// * disagree -> agree with probability `p2`,
///
/// and every non-matched cell in the same X-record/field slice is then
/// cascaded. When the matched cell leaves the agree state, non-matched
/// agreements always flip to disagree and disagreements flip to agree with
/// probability `q1`; when it enters the agree state the same happens with
/// `q2`; when it stays in the disagree state, disagreements flip to agree
/// with probability `q3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionParams {
    pub p1: f64,
    pub p2: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

/// Closed-form transition probabilities that leave the per-cell agree /
/// disagree / missing marginals of `params` invariant.
///
/// Two regimes split on `u <= (1 - g) / 2`. In the low-`u` regime the
/// matched disagree state always flips back (`p2 = 1`) and cascading
/// disagreements flip with odds `u / (1 - u - g)`. In the high-`u` regime
/// every cascaded disagreement flips (`q1 = q2 = q3 = 1`) and the matched
/// flip rates shrink so the marginals still balance. A field whose matched
/// pairs never disagree (`1 - m - g <= FROZEN_EPS`) keeps `p1 = p2 = 0` and
/// never moves.
///
/// The closed forms yield probabilities only while the matched agree mass
/// dominates the matched disagree mass, `m >= 0.5 * (1 - g)` — below that
/// the rate that balances the agree/disagree flow already exceeds one. A
/// field that weak agrees on fewer than half of its observed matched pairs
/// and carries no usable linking signal; passing one here is a caller bug,
/// caught by a debug assertion rather than an error path.
pub fn transition_params(params: &FieldParams) -> TransitionParams {
    let m = params.m;
    let u = params.u;
    let g = params.g;
    let keep = 1.0 - m - g;
    let low_u = u <= 0.5 * (1.0 - g);

    let (p1, p2) = if keep <= FROZEN_EPS {
        (0.0, 0.0)
    } else if low_u {
        (keep / m, 1.0)
    } else {
        let p1 = keep * (1.0 - u - g) / (m * (3.0 * u + g - 1.0));
        (p1, p1 * m / keep)
    };

    let (q1, q2) = if low_u {
        let stay = 1.0 - u - g;
        let q = if stay > 0.0 { u / stay } else { 1.0 };
        (q, q)
    } else {
        (1.0, 1.0)
    };

    let raw = [p1, p2, q1, q2, 1.0];
    debug_assert!(
        raw.iter().all(|p| (-1e-9..=1.0 + 1e-9).contains(p)),
        "transition probabilities left [0, 1]: {raw:?} from {params:?}"
    );
    // Snap rounding spill back into the unit interval so probability draws
    // never see a value like 1 + 1ulp.
    let clamp = |p: f64| p.clamp(0.0, 1.0);
    TransitionParams { p1: clamp(p1), p2: clamp(p2), q1: clamp(q1), q2: clamp(q2), q3: 1.0 }
}

/// Dense ternary agreement matrix for one block.
///
/// Cells are stored row-major in `(x record, y record, field)` order, so the
/// field axis is contiguous. `truth_map[i]` names the Y record that is the
/// true match of X record `i`; the map is injective and every X record has
/// exactly one true match inside the block.
#[derive(Debug, Clone, PartialEq)]
pub struct AgreementBlock {
    x_size: usize,
    y_size: usize,
    field_count: usize,
    cells: Vec<Ternary>,
    truth_map: Vec<usize>,
}

impl AgreementBlock {
    pub fn new(
        x_size: usize,
        y_size: usize,
        field_count: usize,
        cells: Vec<Ternary>,
        truth_map: Vec<usize>,
    ) -> Result<Self, ModelError> {
        if x_size == 0 || y_size < 2 || field_count == 0 {
            return Err(ModelError::DegenerateBlock { x_size, y_size });
        }
        if x_size > y_size {
            return Err(ModelError::XLargerThanY { x_size, y_size });
        }
        if truth_map.len() != x_size {
            return Err(ModelError::TruthMapLength { len: truth_map.len(), x_size });
        }
        let expected = x_size * y_size * field_count;
        if cells.len() != expected {
            return Err(ModelError::CellCount { len: cells.len(), expected });
        }
        let mut seen = vec![usize::MAX; y_size];
        for (i, &t) in truth_map.iter().enumerate() {
            if t >= y_size {
                return Err(ModelError::TruthMapOutOfRange { x: i, value: t, y_size });
            }
            if seen[t] != usize::MAX {
                return Err(ModelError::TruthMapNotInjective { a: seen[t], b: i, y: t });
            }
            seen[t] = i;
        }
        Ok(AgreementBlock { x_size, y_size, field_count, cells, truth_map })
    }

    /// Builds a block by evaluating `f(i, j, l)` for every cell.
    pub fn from_fn(
        x_size: usize,
        y_size: usize,
        field_count: usize,
        truth_map: Vec<usize>,
        mut f: impl FnMut(usize, usize, usize) -> Ternary,
    ) -> Result<Self, ModelError> {
        let mut cells = Vec::with_capacity(x_size * y_size * field_count);
        for i in 0..x_size {
            for j in 0..y_size {
                for l in 0..field_count {
                    cells.push(f(i, j, l));
                }
            }
        }
        Self::new(x_size, y_size, field_count, cells, truth_map)
    }

    pub fn x_size(&self) -> usize {
        self.x_size
    }

    pub fn y_size(&self) -> usize {
        self.y_size
    }

    pub fn field_count(&self) -> usize {
        self.field_count
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, l: usize) -> usize {
        debug_assert!(i < self.x_size && j < self.y_size && l < self.field_count);
        (i * self.y_size + j) * self.field_count + l
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, l: usize) -> Ternary {
        self.cells[self.idx(i, j, l)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, l: usize, value: Ternary) {
        let idx = self.idx(i, j, l);
        self.cells[idx] = value;
    }

    /// Y record that is the true match of X record `i`.
    #[inline]
    pub fn truth_of(&self, i: usize) -> usize {
        self.truth_map[i]
    }

    pub fn truth_map(&self) -> &[usize] {
        &self.truth_map
    }

    /// Agreement value of the matched cell for X record `i`, field `l`.
    #[inline]
    pub fn matched(&self, i: usize, l: usize) -> Ternary {
        self.get(i, self.truth_map[i], l)
    }

    /// Raw cells in `(i, j, l)` row-major order.
    pub fn cells(&self) -> &[Ternary] {
        &self.cells
    }

    /// Replaces the cell buffer, keeping dimensions and truth map.
    pub fn with_cells(&self, cells: Vec<Ternary>) -> Result<Self, ModelError> {
        Self::new(self.x_size, self.y_size, self.field_count, cells, self.truth_map.clone())
    }

    /// Copies out a block restricted to the fields where `keep` is true.
    pub fn retain_fields(&self, keep: &[bool]) -> Result<Self, ModelError> {
        assert_eq!(keep.len(), self.field_count, "keep mask length mismatch");
        let kept: Vec<usize> =
            (0..self.field_count).filter(|&l| keep[l]).collect();
        let mut cells = Vec::with_capacity(self.x_size * self.y_size * kept.len());
        for i in 0..self.x_size {
            for j in 0..self.y_size {
                for &l in &kept {
                    cells.push(self.get(i, j, l));
                }
            }
        }
        Self::new(self.x_size, self.y_size, kept.len(), cells, self.truth_map.clone())
    }
}
