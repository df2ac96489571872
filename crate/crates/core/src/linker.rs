//! Fellegi–Sunter cell weights, composite pair weights, and greedy
//! one-to-one link assignment.
//!
//! A pair's composite weight is the sum over linking fields of the
//! log-likelihood-ratio weight of its cell: `log2(m/u)` on agreement,
//! `log2((1-m-g)/(1-u-g))` on disagreement, and zero on a missing
//! comparison. Degenerate ratios (a zero numerator or denominator) are
//! capped at a configurable magnitude so arithmetic stays finite while the
//! ordering of evidence is preserved.
//!
//! Linking walks all pairs from the heaviest weight down, accepting a pair
//! whenever its weight exceeds the cut-off and neither record is already
//! linked; ties break deterministically toward the lower record indices.

use thiserror::Error;

use crate::model::{AgreementBlock, FieldParams, Ternary};

/// Default magnitude cap for degenerate log-ratio weights.
pub const DEFAULT_WEIGHT_CAP: f64 = 30.0;

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("{params} field parameter sets for {fields} fields")]
    ParamCount { params: usize, fields: usize },
    #[error("cell buffer holds {len} cells, expected {expected}")]
    CellCount { len: usize, expected: usize },
    #[error("weight cap must be positive and finite, got {0}")]
    BadCap(f64),
}

/// Agreement and disagreement weights of one field, with missing fixed at
/// zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldWeights {
    pub agree: f64,
    pub disagree: f64,
}

/// Derives a field's weights, capping degenerate ratios at `±cap`.
///
/// `u = 0` makes agreement conclusive evidence for a match (`+cap`);
/// `1-m-g = 0` makes disagreement conclusive evidence against (`-cap`);
/// when both masses of a ratio vanish the weight is zero (the field can
/// never show that outcome).
pub fn field_weights(p: &FieldParams, cap: f64) -> Result<FieldWeights, LinkError> {
    if !(cap.is_finite() && cap > 0.0) {
        return Err(LinkError::BadCap(cap));
    }
    let agree = if p.m <= 0.0 && p.u <= 0.0 {
        0.0
    } else if p.u <= 0.0 {
        cap
    } else {
        (p.m / p.u).log2().clamp(-cap, cap)
    };
    let md = p.matched_disagree();
    let ud = (1.0 - p.u - p.g).max(0.0);
    let disagree = if md <= 0.0 && ud <= 0.0 {
        0.0
    } else if md <= 0.0 {
        -cap
    } else if ud <= 0.0 {
        cap
    } else {
        (md / ud).log2().clamp(-cap, cap)
    };
    Ok(FieldWeights { agree, disagree })
}

/// Weight of one ternary cell under one field's weights.
pub fn cell_weight(value: Ternary, fw: &FieldWeights) -> f64 {
    match value {
        Ternary::Agree => fw.agree,
        Ternary::Disagree => fw.disagree,
        Ternary::Missing => 0.0,
    }
}

/// Composite pair weights of one block, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub x_size: usize,
    pub y_size: usize,
    weights: Vec<f64>,
}

impl WeightMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> WeightMatrix {
        let x_size = rows.len();
        let y_size = rows.first().map_or(0, Vec::len);
        let mut weights = Vec::with_capacity(x_size * y_size);
        for row in rows {
            assert_eq!(row.len(), y_size, "ragged weight matrix");
            weights.extend(row);
        }
        WeightMatrix { x_size, y_size, weights }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.y_size + j]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Sums per-field cell weights over a raw cell buffer in `(i, j, l)`
/// row-major order.
pub fn composite_weights_raw(
    x_size: usize,
    y_size: usize,
    cells: &[Ternary],
    field_weights: &[FieldWeights],
) -> Result<WeightMatrix, LinkError> {
    let field_count = field_weights.len();
    let expected = x_size * y_size * field_count;
    if cells.len() != expected {
        return Err(LinkError::CellCount { len: cells.len(), expected });
    }
    let mut weights = Vec::with_capacity(x_size * y_size);
    for pair in cells.chunks_exact(field_count) {
        let mut w = 0.0;
        for (cell, fw) in pair.iter().zip(field_weights) {
            w += cell_weight(*cell, fw);
        }
        weights.push(w);
    }
    Ok(WeightMatrix { x_size, y_size, weights })
}

/// Composite pair weights of an agreement block.
pub fn composite_weights(
    a: &AgreementBlock,
    params: &[FieldParams],
    cap: f64,
) -> Result<WeightMatrix, LinkError> {
    if params.len() != a.field_count() {
        return Err(LinkError::ParamCount { params: params.len(), fields: a.field_count() });
    }
    let fws: Vec<FieldWeights> =
        params.iter().map(|p| field_weights(p, cap)).collect::<Result<_, _>>()?;
    composite_weights_raw(a.x_size(), a.y_size(), a.cells(), &fws)
}

/// One accepted link: row, column, and the composite weight that won it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub x: usize,
    pub y: usize,
    pub weight: f64,
}

/// A conflict-free one-to-one link set above a weight cut-off.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkSet {
    /// Accepted links in ascending `x` order.
    pub links: Vec<Link>,
    pub cutoff: f64,
}

impl LinkSet {
    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// The Y record linked to X record `x`, if any.
    pub fn y_of(&self, x: usize) -> Option<usize> {
        self.links
            .binary_search_by_key(&x, |l| l.x)
            .ok()
            .map(|k| self.links[k].y)
    }
}

/// Greedy one-to-one assignment: pairs are visited from the heaviest
/// weight down (ties toward ascending `(x, y)`) and accepted when the
/// weight exceeds `cutoff` and both records are still free.
pub fn greedy_link(w: &WeightMatrix, cutoff: f64) -> LinkSet {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..w.x_size {
        for j in 0..w.y_size {
            let weight = w.get(i, j);
            if weight > cutoff {
                candidates.push((weight, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)).then_with(|| a.2.cmp(&b.2))
    });

    let mut used_x = vec![false; w.x_size];
    let mut used_y = vec![false; w.y_size];
    let mut links = Vec::new();
    for (weight, i, j) in candidates {
        if !used_x[i] && !used_y[j] {
            used_x[i] = true;
            used_y[j] = true;
            links.push(Link { x: i, y: j, weight });
        }
    }
    links.sort_by_key(|l| l.x);
    LinkSet { links, cutoff }
}
