//! Partitioning of a linked file pair into comparison blocks and
//! construction of per-block ternary agreement matrices.
//!
//! Records are grouped by equality on one or more blocking fields; only
//! pairs inside the same block are ever compared. The X side can be keyed
//! on pre-error values (via the truth sidecar) so that every X record's
//! true counterpart is guaranteed to share its block, which is the mode the
//! simulation requires; keying on observed values is also supported for
//! studying blocking leakage, in which case X records whose counterpart
//! fell outside the block are dropped from the matrix and reported.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{AgreementBlock, ModelError, Ternary};
use crate::synth::{Field, PersonFile, TruthStore, ALL_FIELDS};

#[derive(Debug, Error)]
pub enum BlockError {
    #[error("blocking needs at least one blocking field")]
    NoBlockingFields,
    #[error("blocking needs at least one linking field")]
    NoLinkingFields,
    #[error("field {0} appears twice in the blocking specification")]
    DuplicateField(&'static str),
    #[error("keying on pre-error values requires a truth sidecar")]
    TruthRequired,
    #[error("X record {recid} has no Y counterpart in block {key}")]
    CounterpartMissing { recid: String, key: String },
    #[error("block {key}: all {} X records lost their counterpart", dropped.len())]
    AllRowsDropped { key: String, dropped: Vec<usize> },
    #[error("block {key} cannot form an agreement matrix: {source}")]
    Model { key: String, source: ModelError },
}

/// How to partition the pair of files and which fields to compare.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockingSpec {
    /// Fields whose value tuple forms the block key.
    pub blocking_fields: Vec<Field>,
    /// Fields compared inside each block. Defaults to every field that is
    /// not a blocking field.
    pub linking_fields: Vec<Field>,
    /// Key X records on their pre-error values (requires the truth
    /// sidecar) so every true counterpart shares the block.
    pub use_truth_values: bool,
}

impl BlockingSpec {
    /// Blocks on `blocking` (keyed on pre-error X values) and links on all
    /// remaining fields.
    pub fn on(blocking: &[Field]) -> BlockingSpec {
        let linking =
            ALL_FIELDS.iter().copied().filter(|f| !blocking.contains(f)).collect();
        BlockingSpec {
            blocking_fields: blocking.to_vec(),
            linking_fields: linking,
            use_truth_values: true,
        }
    }

    /// Same blocks, custom comparison fields (overlap with the blocking
    /// fields is allowed when explicitly requested this way).
    pub fn with_linking_fields(mut self, linking: &[Field]) -> BlockingSpec {
        self.linking_fields = linking.to_vec();
        self
    }

    pub fn validate(&self) -> Result<(), BlockError> {
        if self.blocking_fields.is_empty() {
            return Err(BlockError::NoBlockingFields);
        }
        if self.linking_fields.is_empty() {
            return Err(BlockError::NoLinkingFields);
        }
        for list in [&self.blocking_fields, &self.linking_fields] {
            for (k, f) in list.iter().enumerate() {
                if list[..k].contains(f) {
                    return Err(BlockError::DuplicateField(f.name()));
                }
            }
        }
        Ok(())
    }
}

/// One block: its key string and the positions of its records in the X and
/// Y files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub key: String,
    pub x_indices: Vec<usize>,
    pub y_indices: Vec<usize>,
}

/// The complete partition: blocks in ascending key order plus the records
/// that could not be keyed (missing blocking-field value).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BlockSet {
    pub blocks: Vec<Block>,
    pub unblocked_x: Vec<usize>,
    pub unblocked_y: Vec<usize>,
}

impl BlockSet {
    pub fn block(&self, key: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.key == key)
    }
}

fn block_key(
    record: &crate::synth::PersonRecord,
    idx: usize,
    fields: &[Field],
    truth: Option<&TruthStore>,
) -> Option<String> {
    let mut parts = Vec::with_capacity(fields.len());
    for &f in fields {
        let observed = record.value(f);
        let value = match truth {
            Some(t) => t.true_value(idx, f, observed),
            None => observed,
        }?;
        parts.push(value.to_string());
    }
    Some(parts.join("_"))
}

/// Groups both files by their blocking-key tuples.
///
/// Y records always key on observed values (the Y file is taken as the
/// reference file); X records key on pre-error values when
/// `use_truth_values` is set. Records with a missing key component land in
/// the unblocked residual lists.
pub fn partition(
    x: &PersonFile,
    y: &PersonFile,
    truth: Option<&TruthStore>,
    spec: &BlockingSpec,
) -> Result<BlockSet, BlockError> {
    spec.validate()?;
    let x_truth = if spec.use_truth_values {
        Some(truth.ok_or(BlockError::TruthRequired)?)
    } else {
        None
    };

    let mut keyed: BTreeMap<String, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    let mut out = BlockSet::default();
    for (i, r) in x.records.iter().enumerate() {
        match block_key(r, i, &spec.blocking_fields, x_truth) {
            Some(key) => keyed.entry(key).or_default().0.push(i),
            None => out.unblocked_x.push(i),
        }
    }
    for (j, r) in y.records.iter().enumerate() {
        match block_key(r, j, &spec.blocking_fields, None) {
            Some(key) => keyed.entry(key).or_default().1.push(j),
            None => out.unblocked_y.push(j),
        }
    }
    out.blocks = keyed
        .into_iter()
        .map(|(key, (x_indices, y_indices))| Block { key, x_indices, y_indices })
        .collect();
    Ok(out)
}

/// A block's agreement matrix together with the file positions behind its
/// axes.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix {
    pub agreement: AgreementBlock,
    /// X-file position of each matrix row.
    pub x_rows: Vec<usize>,
    /// Y-file position of each matrix column.
    pub y_cols: Vec<usize>,
    /// X records excluded because their counterpart is outside the block
    /// (only possible when blocking on observed values).
    pub dropped_x: Vec<usize>,
}

fn compare(a: Option<u32>, b: Option<u32>) -> Ternary {
    match (a, b) {
        (Some(a), Some(b)) if a == b => Ternary::Agree,
        (Some(_), Some(_)) => Ternary::Disagree,
        _ => Ternary::Missing,
    }
}

/// Builds the ternary agreement matrix of one block.
///
/// Rows are the block's X records, columns its Y records, the field axis is
/// `spec.linking_fields` in order. The truth map pairs each row with the
/// column carrying the same record identifier; with `strict_counterparts`
/// a missing counterpart is an error, otherwise the row is dropped and
/// reported in `dropped_x`.
pub fn build_agreement(
    x: &PersonFile,
    y: &PersonFile,
    block: &Block,
    spec: &BlockingSpec,
    strict_counterparts: bool,
) -> Result<BlockMatrix, BlockError> {
    let y_cols = block.y_indices.clone();
    let mut col_of = std::collections::HashMap::with_capacity(y_cols.len());
    for (col, &j) in y_cols.iter().enumerate() {
        col_of.insert(y.records[j].recid.as_str(), col);
    }

    let mut x_rows = Vec::with_capacity(block.x_indices.len());
    let mut truth_map = Vec::with_capacity(block.x_indices.len());
    let mut dropped_x = Vec::new();
    for &i in &block.x_indices {
        match col_of.get(x.records[i].recid.as_str()) {
            Some(&col) => {
                x_rows.push(i);
                truth_map.push(col);
            }
            None if strict_counterparts => {
                return Err(BlockError::CounterpartMissing {
                    recid: x.records[i].recid.clone(),
                    key: block.key.clone(),
                });
            }
            None => dropped_x.push(i),
        }
    }
    if x_rows.is_empty() && !dropped_x.is_empty() {
        return Err(BlockError::AllRowsDropped { key: block.key.clone(), dropped: dropped_x });
    }

    let fields = &spec.linking_fields;
    let mut cells = Vec::with_capacity(x_rows.len() * y_cols.len() * fields.len());
    for &i in &x_rows {
        let xr = &x.records[i];
        for &j in &y_cols {
            let yr = &y.records[j];
            for &f in fields {
                cells.push(compare(xr.value(f), yr.value(f)));
            }
        }
    }
    let agreement =
        AgreementBlock::new(x_rows.len(), y_cols.len(), fields.len(), cells, truth_map)
            .map_err(|source| BlockError::Model { key: block.key.clone(), source })?;
    Ok(BlockMatrix { agreement, x_rows, y_cols, dropped_x })
}
