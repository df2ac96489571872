//! Deterministic fixtures shared by the criterion benches: a block of
//! realistic size filled from typical per-field probabilities.

use macsim::{AgreementBlock, FieldParams, Ternary};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Six fields spanning strong and weak discriminators.
pub fn typical_params() -> Vec<FieldParams> {
    [
        (0.98, 0.20, 0.02),
        (0.90, 0.003, 0.10),
        (0.95, 0.013, 0.02),
        (0.999, 0.50, 0.001),
        (0.96, 0.33, 0.01),
        (0.97, 0.45, 0.02),
    ]
    .into_iter()
    .map(|(m, u, g)| FieldParams::new(m, u, g).expect("valid fixture params"))
    .collect()
}

/// Fills an `x_size` by `y_size` block whose cells are drawn from the
/// matched and unmatched marginals of [`typical_params`], with row `i`
/// matched to column `i`.
pub fn typical_block(x_size: usize, y_size: usize, seed: u64) -> AgreementBlock {
    let params = typical_params();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let field_count = params.len();
    let mut cells = Vec::with_capacity(x_size * y_size * field_count);
    for i in 0..x_size {
        for j in 0..y_size {
            for p in &params {
                let agree = if j == i { p.m } else { p.u };
                let roll: f64 = rng.random();
                cells.push(if roll < agree {
                    Ternary::Agree
                } else if roll < agree + p.g {
                    Ternary::Missing
                } else {
                    Ternary::Disagree
                });
            }
        }
    }
    let truth_map = (0..x_size).collect();
    AgreementBlock::new(x_size, y_size, field_count, cells, truth_map)
        .expect("valid fixture block")
}
