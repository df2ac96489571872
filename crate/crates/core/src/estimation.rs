//! Estimation of per-field linkage probabilities from an agreement block
//! with known match status.
//!
//! For each field the block yields three count ratios: `m` is the fraction
//! of matched pairs that agree, `u` the fraction of non-matched pairs that
//! agree, and `g` the fraction of all pairs whose comparison is missing.
//! Every denominator counts all pairs of its class, missing-valued ones
//! included, so `m + g <= 1` and `u + g <= 1` hold by construction.

use thiserror::Error;

use crate::model::{AgreementBlock, FieldParams, ModelError, Ternary};

#[derive(Debug, Error)]
pub enum EstimationError {
    #[error("block too small to estimate from: {0}")]
    Degenerate(ModelError),
    #[error("field {field} yields unusable probabilities: {source}")]
    InvalidField { field: usize, source: ModelError },
    #[error("no field yields usable probabilities")]
    AllFieldsInvalid,
}

/// Tuning knobs for [`estimate_with_options`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimationOptions {
    /// Laplace-style smoothing mass added to the agree counts
    /// (`(count + e) / (denom + 2e)`); `0` keeps the raw ratios.
    pub smoothing: f64,
    /// Drop fields whose probabilities fail validation instead of failing
    /// the whole block.
    pub drop_invalid_fields: bool,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        EstimationOptions { smoothing: 0.0, drop_invalid_fields: false }
    }
}

/// The per-field estimates plus the retention mask when invalid fields are
/// dropped (`kept[l]` is false for dropped fields; `params` holds the kept
/// fields in order).
#[derive(Debug, Clone, PartialEq)]
pub struct Estimates {
    pub params: Vec<FieldParams>,
    pub kept: Vec<bool>,
}

struct FieldCounts {
    matched_agree: u64,
    total_agree: u64,
    missing: u64,
}

fn count_fields(a: &AgreementBlock) -> Vec<FieldCounts> {
    let field_count = a.field_count();
    let mut counts: Vec<FieldCounts> = (0..field_count)
        .map(|_| FieldCounts { matched_agree: 0, total_agree: 0, missing: 0 })
        .collect();
    let mut l = 0;
    for &cell in a.cells() {
        match cell {
            Ternary::Agree => counts[l].total_agree += 1,
            Ternary::Missing => counts[l].missing += 1,
            Ternary::Disagree => {}
        }
        l += 1;
        if l == field_count {
            l = 0;
        }
    }
    for i in 0..a.x_size() {
        for (l, c) in counts.iter_mut().enumerate() {
            if a.matched(i, l) == Ternary::Agree {
                c.matched_agree += 1;
            }
        }
    }
    counts
}

/// Estimates `m`, `u`, `g` (and derived `w`) for every field of the block;
/// any field with unusable probabilities fails the whole call.
pub fn estimate_params(a: &AgreementBlock) -> Result<Vec<FieldParams>, EstimationError> {
    let est = estimate_with_options(a, &EstimationOptions::default())?;
    Ok(est.params)
}

/// Estimates with smoothing and invalid-field handling options.
pub fn estimate_with_options(
    a: &AgreementBlock,
    opts: &EstimationOptions,
) -> Result<Estimates, EstimationError> {
    let x = a.x_size() as f64;
    let y = a.y_size() as f64;
    if a.y_size() < 2 {
        return Err(EstimationError::Degenerate(ModelError::DegenerateBlock {
            x_size: a.x_size(),
            y_size: a.y_size(),
        }));
    }
    let e = opts.smoothing.max(0.0);
    let m_den = x;
    let u_den = x * (y - 1.0);
    let all_den = x * y;

    let mut params = Vec::with_capacity(a.field_count());
    let mut kept = Vec::with_capacity(a.field_count());
    for (l, c) in count_fields(a).into_iter().enumerate() {
        let m = (c.matched_agree as f64 + e) / (m_den + 2.0 * e);
        let u = ((c.total_agree - c.matched_agree) as f64 + e) / (u_den + 2.0 * e);
        let g = c.missing as f64 / all_den;
        match FieldParams::new(m, u, g) {
            Ok(p) => {
                params.push(p);
                kept.push(true);
            }
            Err(source) if opts.drop_invalid_fields => {
                kept.push(false);
                let _ = source;
            }
            Err(source) => return Err(EstimationError::InvalidField { field: l, source }),
        }
    }
    if params.is_empty() {
        return Err(EstimationError::AllFieldsInvalid);
    }
    Ok(Estimates { params, kept })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Ternary::*;

    fn block(
        x_size: usize,
        y_size: usize,
        field_count: usize,
        cells: Vec<Ternary>,
        truth: Vec<usize>,
    ) -> AgreementBlock {
        AgreementBlock::new(x_size, y_size, field_count, cells, truth).unwrap()
    }

    #[test]
    fn hand_counted_two_by_two() {
        // matched cells {agree, disagree}, non-matched cells {missing,
        // disagree}: m = 1/2, u = 0, g = 1/4
        let a = block(
            2,
            2,
            1,
            vec![Agree, Missing, Disagree, Disagree],
            vec![0, 1],
        );
        let p = &estimate_params(&a).unwrap()[0];
        assert_eq!(p.m, 0.5);
        assert_eq!(p.u, 0.0);
        assert_eq!(p.g, 0.25);
    }

    #[test]
    fn all_matched_agree_gives_m_one() {
        let a = block(
            2,
            3,
            1,
            vec![Agree, Disagree, Disagree, Disagree, Agree, Disagree],
            vec![0, 1],
        );
        let p = &estimate_params(&a).unwrap()[0];
        assert_eq!(p.m, 1.0);
        assert_eq!(p.u, 0.0);
        assert_eq!(p.g, 0.0);
        assert_eq!(p.w, 0.0);
    }

    #[test]
    fn missing_counts_in_denominators() {
        // 2 x 4, one field; the second X record's value is missing, which
        // blanks its whole row. Denominators still count those pairs.
        let a = block(
            2,
            4,
            1,
            vec![Agree, Agree, Disagree, Disagree, Missing, Missing, Missing, Missing],
            vec![0, 1],
        );
        let p = &estimate_params(&a).unwrap()[0];
        assert_eq!(p.m, 0.5);
        assert_eq!(p.u, 1.0 / 6.0);
        assert_eq!(p.g, 0.5);
    }

    #[test]
    fn invalid_field_is_named_or_dropped() {
        // field 0 fine; field 1 has m = 0 <= u
        let cells = vec![
            Agree, Disagree, Disagree, Agree, Disagree, Agree, Agree, Disagree,
        ];
        let a = block(2, 2, 2, cells, vec![0, 1]);
        let err = estimate_params(&a).unwrap_err();
        match err {
            EstimationError::InvalidField { field, .. } => assert_eq!(field, 1),
            other => panic!("unexpected: {other}"),
        }
        let est = estimate_with_options(
            &a,
            &EstimationOptions { drop_invalid_fields: true, ..Default::default() },
        )
        .unwrap();
        assert_eq!(est.kept, vec![true, false]);
        assert_eq!(est.params.len(), 1);
    }

    #[test]
    fn smoothing_lifts_zero_u() {
        let a = block(
            2,
            3,
            1,
            vec![Agree, Disagree, Disagree, Disagree, Agree, Disagree],
            vec![0, 1],
        );
        let est = estimate_with_options(
            &a,
            &EstimationOptions { smoothing: 0.5, ..Default::default() },
        )
        .unwrap();
        let p = &est.params[0];
        assert!(p.u > 0.0);
        assert!(p.m < 1.0);
        // raw counts: matched 2/2 agree, non-matched 0/4 agree
        assert_eq!(p.m, 2.5 / 3.0);
        assert_eq!(p.u, 0.5 / 5.0);
    }

    #[test]
    fn single_y_record_is_degenerate() {
        let err = AgreementBlock::new(1, 1, 1, vec![Agree], vec![0]).unwrap_err();
        assert!(matches!(err, ModelError::DegenerateBlock { .. }));
    }

    #[test]
    fn estimates_recover_generating_probabilities() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(99);
        let (m, u, g) = (0.9, 0.2, 0.05);
        let (x_size, y_size) = (40, 200);
        let truth: Vec<usize> = (0..x_size).collect();
        let mut cells = Vec::new();
        for i in 0..x_size {
            // row-wise missingness: a missing X value blanks the whole row
            let row_missing = rng.random_bool(g);
            for j in 0..y_size {
                if row_missing {
                    cells.push(Missing);
                } else if j == truth[i] {
                    cells.push(if rng.random_bool(m / (1.0 - g)) { Agree } else { Disagree });
                } else {
                    cells.push(if rng.random_bool(u / (1.0 - g)) { Agree } else { Disagree });
                }
            }
        }
        let a = AgreementBlock::new(x_size, y_size, 1, cells, truth).unwrap();
        let p = &estimate_params(&a).unwrap()[0];
        assert!((p.m - m).abs() < 0.08, "m: {}", p.m);
        assert!((p.u - u).abs() < 0.03, "u: {}", p.u);
        assert!((p.g - g).abs() < 0.08, "g: {}", p.g);
    }
}
