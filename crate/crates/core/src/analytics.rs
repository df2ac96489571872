//! Accuracy metrics over observed and re-simulated link sets, plus the
//! summary artifacts built from them: per-record and per-sample correct
//! re-link proportions, their grand mean, binned histograms, the chain
//! distance diagnostic, and a batch-means Monte Carlo standard error
//! helper.

use rayon::prelude::*;
use thiserror::Error;

use crate::kernel::{distance, KernelError, SampleStream};
use crate::linker::{
    composite_weights_raw, field_weights, greedy_link, FieldWeights, LinkError, LinkSet,
};
use crate::model::FieldParams;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("bin edges must start at 1.0, got {0}")]
    EdgesMustStartAtOne(f64),
    #[error("bin edges must be strictly decreasing (edge {index} = {value})")]
    EdgesNotDecreasing { index: usize, value: f64 },
    #[error("bin edges need at least two entries")]
    TooFewEdges,
    #[error("proportion {value} at index {index} is outside [0, 1]")]
    BadProportion { index: usize, value: f64 },
    #[error("series is empty")]
    EmptySeries,
}

/// Re-links every usable retained sample with the same weights and cut-off
/// used for the observed link. Samples are processed in parallel; the
/// returned order matches the sample order.
pub fn relink_samples(
    stream: &SampleStream,
    params: &[FieldParams],
    cutoff: f64,
    cap: f64,
) -> Result<Vec<LinkSet>, AnalyticsError> {
    let fws: Vec<FieldWeights> =
        params.iter().map(|p| field_weights(p, cap)).collect::<Result<_, _>>()?;
    let states: Vec<_> = stream.usable().collect();
    states
        .into_par_iter()
        .map(|cells| {
            let w = composite_weights_raw(stream.x_size, stream.y_size, cells, &fws)?;
            Ok(greedy_link(&w, cutoff))
        })
        .collect()
}

/// One observed-linked record's re-link tally.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordAccuracy {
    /// Row index within the block.
    pub x: usize,
    /// The record's observed link target.
    pub observed_y: usize,
    /// Samples in which the re-link reproduced the observed target.
    pub correct: u64,
    /// Total samples examined.
    pub samples: u64,
    /// `correct / samples` (0 when no samples).
    pub proportion: f64,
    /// Whether the observed link equals the true counterpart, when truth
    /// is known. This is diagnostic only; `correct` always counts
    /// agreement with the observed link.
    pub observed_is_true: Option<bool>,
}

/// One retained sample's re-link tally over the observed-linked records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleAccuracy {
    /// 1-based retained-sample position (after burn-in).
    pub sample: usize,
    pub correct: u64,
    pub linked: u64,
    pub proportion: f64,
}

/// Correct re-link proportions of one block.
///
/// Records left unlinked by the observed pass have no re-link target; they
/// are listed in `unlinked_x` and excluded from every denominator. The
/// grand mean is the exact ratio `total_correct / (samples * linked)`, and
/// [`AccuracyReport::mean_from_records`] /
/// [`AccuracyReport::mean_from_samples`] recompute the same ratio from the
/// two margins, so the three agree exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub per_record: Vec<RecordAccuracy>,
    pub per_sample: Vec<SampleAccuracy>,
    pub unlinked_x: Vec<usize>,
    pub total_correct: u64,
    pub sample_count: usize,
    pub linked_count: usize,
    pub overall_mean: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl AccuracyReport {
    /// Grand mean recomputed from the per-record tallies.
    pub fn mean_from_records(&self) -> f64 {
        let correct: u64 = self.per_record.iter().map(|r| r.correct).sum();
        ratio(correct, self.sample_count as u64 * self.linked_count as u64)
    }

    /// Grand mean recomputed from the per-sample tallies.
    pub fn mean_from_samples(&self) -> f64 {
        let correct: u64 = self.per_sample.iter().map(|s| s.correct).sum();
        ratio(correct, self.sample_count as u64 * self.linked_count as u64)
    }

    /// Per-record proportions, in row order.
    pub fn proportions(&self) -> Vec<f64> {
        self.per_record.iter().map(|r| r.proportion).collect()
    }
}

/// Tallies how often each observed link is reproduced by the simulated
/// link sets.
///
/// A record is correct in a sample iff that sample links it to the same Y
/// record as the observed pass; a record the sample leaves unlinked is
/// incorrect for that sample. `truth_map`, when given, fills the
/// diagnostic `observed_is_true` flags.
pub fn correct_relink(
    observed: &LinkSet,
    simulated: &[LinkSet],
    x_size: usize,
    truth_map: Option<&[usize]>,
) -> AccuracyReport {
    let sample_count = simulated.len();
    let mut per_record = Vec::new();
    let mut unlinked_x = Vec::new();
    for x in 0..x_size {
        match observed.y_of(x) {
            Some(y) => per_record.push(RecordAccuracy {
                x,
                observed_y: y,
                correct: 0,
                samples: sample_count as u64,
                proportion: 0.0,
                observed_is_true: truth_map.map(|tm| tm[x] == y),
            }),
            None => unlinked_x.push(x),
        }
    }
    let linked_count = per_record.len();

    let mut per_sample = Vec::with_capacity(sample_count);
    let mut total_correct = 0u64;
    for (s, sim) in simulated.iter().enumerate() {
        let mut correct_here = 0u64;
        for r in per_record.iter_mut() {
            if sim.y_of(r.x) == Some(r.observed_y) {
                r.correct += 1;
                correct_here += 1;
            }
        }
        total_correct += correct_here;
        per_sample.push(SampleAccuracy {
            sample: s + 1,
            correct: correct_here,
            linked: linked_count as u64,
            proportion: ratio(correct_here, linked_count as u64),
        });
    }
    for r in per_record.iter_mut() {
        r.proportion = ratio(r.correct, r.samples);
    }

    AccuracyReport {
        overall_mean: ratio(total_correct, sample_count as u64 * linked_count as u64),
        per_record,
        per_sample,
        unlinked_x,
        total_correct,
        sample_count,
        linked_count,
    }
}

/// One histogram bin `[lower, upper)`; the topmost bin is closed at 1.0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bin {
    pub upper: f64,
    pub lower: f64,
    pub count: usize,
    /// Share of all tallied proportions, in percent of the full input
    /// (values below the last edge count toward the total but live in
    /// `below_count`).
    pub percent: f64,
}

/// Binned per-record proportions, top bin first.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedReport {
    pub bins: Vec<Bin>,
    /// Proportions below the lowest edge (possible when the edge list
    /// covers only the top of the range).
    pub below_count: usize,
    pub total: usize,
}

/// Bins proportions over descending edges; each value lands in the first
/// bin whose lower edge it reaches (lower-inclusive, upper-exclusive, top
/// bin closed at 1.0).
pub fn bin_report(proportions: &[f64], edges: &[f64]) -> Result<BinnedReport, AnalyticsError> {
    if edges.len() < 2 {
        return Err(AnalyticsError::TooFewEdges);
    }
    if edges[0] != 1.0 {
        return Err(AnalyticsError::EdgesMustStartAtOne(edges[0]));
    }
    for (k, &e) in edges.iter().enumerate().skip(1) {
        if !(e.is_finite() && e >= 0.0 && e < edges[k - 1]) {
            return Err(AnalyticsError::EdgesNotDecreasing { index: k, value: e });
        }
    }
    for (index, &p) in proportions.iter().enumerate() {
        if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
            return Err(AnalyticsError::BadProportion { index, value: p });
        }
    }

    let mut counts = vec![0usize; edges.len() - 1];
    let mut below_count = 0usize;
    'outer: for &p in proportions {
        for (k, c) in counts.iter_mut().enumerate() {
            if p >= edges[k + 1] {
                *c += 1;
                continue 'outer;
            }
        }
        below_count += 1;
    }

    let total = proportions.len();
    let percent = |count: usize| if total == 0 { 0.0 } else { 100.0 * count as f64 / total as f64 };
    let bins = counts
        .iter()
        .enumerate()
        .map(|(k, &count)| Bin {
            upper: edges[k],
            lower: edges[k + 1],
            count,
            percent: percent(count),
        })
        .collect();
    Ok(BinnedReport { bins, below_count, total })
}

/// Descending 0.1-wide edges over the whole unit interval.
pub fn coarse_edges() -> Vec<f64> {
    (0..=10).rev().map(|k| k as f64 / 10.0).collect()
}

/// Descending 0.01-wide edges over the top decile.
pub fn fine_edges() -> Vec<f64> {
    (90..=100).rev().map(|k| k as f64 / 100.0).collect()
}

/// Distance of every retained sample from the initial state, in sample
/// order (burn-in included — the series is the convergence diagnostic).
pub fn distance_series(stream: &SampleStream) -> Result<Vec<f64>, AnalyticsError> {
    let initial = stream.initial();
    (1..=stream.sample_count())
        .map(|s| Ok(distance(stream.sample(s), initial)?))
        .collect()
}

/// Batch-means estimate of a series mean and its Monte Carlo standard
/// error: the series is cut into `batch_count` equal batches (tail
/// remainder dropped) and the spread of batch means yields the error.
pub fn batch_means_se(series: &[f64], batch_count: usize) -> Result<(f64, f64), AnalyticsError> {
    if series.is_empty() || batch_count < 2 || series.len() < batch_count {
        return Err(AnalyticsError::EmptySeries);
    }
    let batch_len = series.len() / batch_count;
    let used = batch_len * batch_count;
    let mean = series[..used].iter().sum::<f64>() / used as f64;
    let batch_means: Vec<f64> = series[..used]
        .chunks_exact(batch_len)
        .map(|b| b.iter().sum::<f64>() / batch_len as f64)
        .collect();
    let var = batch_means.iter().map(|b| (b - mean).powi(2)).sum::<f64>()
        / (batch_count - 1) as f64;
    Ok((mean, (var / batch_count as f64).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linker::Link;

    fn link_set(pairs: &[(usize, usize)]) -> LinkSet {
        LinkSet {
            links: pairs.iter().map(|&(x, y)| Link { x, y, weight: 1.0 }).collect(),
            cutoff: 0.0,
        }
    }

    #[test]
    fn correct_relink_hand_case() {
        let observed = link_set(&[(0, 0), (1, 1)]);
        let sims = vec![
            link_set(&[(0, 0), (1, 1)]),
            link_set(&[(0, 0), (1, 2)]),
            link_set(&[(1, 1)]),
        ];
        let r = correct_relink(&observed, &sims, 3, Some(&[0, 1, 2]));
        assert_eq!(r.linked_count, 2);
        assert_eq!(r.unlinked_x, vec![2]);
        assert_eq!(r.sample_count, 3);

        let rec0 = &r.per_record[0];
        assert_eq!((rec0.correct, rec0.samples), (2, 3));
        let rec1 = &r.per_record[1];
        assert_eq!((rec1.correct, rec1.samples), (2, 3));
        assert_eq!(rec0.observed_is_true, Some(true));

        assert_eq!(r.per_sample[0].correct, 2);
        assert_eq!(r.per_sample[1].correct, 1);
        assert_eq!(r.per_sample[2].correct, 1);

        assert_eq!(r.total_correct, 4);
        assert_eq!(r.overall_mean, 4.0 / 6.0);
        assert_eq!(r.mean_from_records(), r.overall_mean);
        assert_eq!(r.mean_from_samples(), r.overall_mean);
    }

    #[test]
    fn all_reproduced_means_one() {
        let observed = link_set(&[(0, 3), (1, 0)]);
        let sims = vec![observed.clone(), observed.clone()];
        let r = correct_relink(&observed, &sims, 2, None);
        assert!(r.per_record.iter().all(|rec| rec.proportion == 1.0));
        assert_eq!(r.overall_mean, 1.0);
        assert!(r.per_record[0].observed_is_true.is_none());
    }

    #[test]
    fn zero_samples_is_well_defined() {
        let observed = link_set(&[(0, 0)]);
        let r = correct_relink(&observed, &[], 1, None);
        assert_eq!(r.sample_count, 0);
        assert_eq!(r.overall_mean, 0.0);
        assert_eq!(r.per_record[0].proportion, 0.0);
    }

    #[test]
    fn binning_hand_cases() {
        let r = bin_report(&[0.95, 0.85], &coarse_edges()).unwrap();
        assert_eq!(r.bins[0].count, 1);
        assert_eq!(r.bins[1].count, 1);
        assert_eq!(r.bins[2].count, 0);
        assert_eq!(r.below_count, 0);

        // lower-inclusive boundaries, top bin closed
        let r = bin_report(&[1.0, 0.9, 0.85], &coarse_edges()).unwrap();
        assert_eq!(r.bins[0].count, 2);
        assert_eq!(r.bins[1].count, 1);

        let all_top = bin_report(&[1.0; 7], &coarse_edges()).unwrap();
        assert_eq!(all_top.bins[0].count, 7);
        assert_eq!(all_top.bins[0].percent, 100.0);
    }

    #[test]
    fn fine_panel_reports_below_range() {
        let r = bin_report(&[0.995, 0.91, 0.45], &fine_edges()).unwrap();
        assert_eq!(r.bins[0].count, 1);
        assert_eq!(r.below_count, 1);
        assert_eq!(r.total, 3);
        let in_bins: usize = r.bins.iter().map(|b| b.count).sum();
        assert_eq!(in_bins + r.below_count, r.total);
    }

    #[test]
    fn bin_edges_are_validated() {
        assert!(bin_report(&[], &[1.0]).is_err());
        assert!(bin_report(&[], &[0.9, 0.5]).is_err());
        assert!(bin_report(&[], &[1.0, 0.5, 0.5]).is_err());
        assert!(bin_report(&[1.5], &coarse_edges()).is_err());
    }

    #[test]
    fn batch_means_of_constant_series_has_zero_error() {
        let (mean, se) = batch_means_se(&[0.25; 100], 10).unwrap();
        assert_eq!(mean, 0.25);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn batch_means_respects_batch_structure() {
        // alternating series: every batch of 10 has the same mean
        let series: Vec<f64> = (0..100).map(|k| (k % 2) as f64).collect();
        let (mean, se) = batch_means_se(&series, 10).unwrap();
        assert_eq!(mean, 0.5);
        assert_eq!(se, 0.0);
        assert!(batch_means_se(&series, 101).is_err());
    }
}
