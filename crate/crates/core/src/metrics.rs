//! Frame- and video-level accuracy and ROC-AUC.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// One scored frame (or one aggregated video).
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSample {
    /// Probability of the "manipulated" class, in `[0, 1]`.
    pub score: f64,
    /// 0 = original, 1 = manipulated.
    pub label: u8,
    pub video_id: String,
}

impl ScoredSample {
    pub fn new(score: f64, label: u8, video_id: impl Into<String>) -> Self {
        ScoredSample {
            score,
            label,
            video_id: video_id.into(),
        }
    }
}

/// Area under the ROC curve via the Mann-Whitney rank statistic: the
/// probability that a random positive outscores a random negative, ties
/// counted as one half.
pub fn roc_auc(samples: &[ScoredSample]) -> Result<f64> {
    let positives = samples.iter().filter(|s| s.label == 1).count();
    let negatives = samples.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Metric(format!(
            "ROC-AUC needs both classes, got {positives} positive and {negatives} negative"
        )));
    }
    if samples.iter().any(|s| s.score.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].score.total_cmp(&samples[b].score));

    // Twice the rank sum of the positives, so tied (half-integer) ranks stay integral.
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && samples[order[j + 1]].score == samples[order[i]].score {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let twice_avg = (i + 1 + j + 1) as u64;
        let tied_pos = order[i..=j].iter().filter(|&&k| samples[k].label == 1).count() as u64;
        twice_rank_sum += twice_avg * tied_pos;
        i = j + 1;
    }
    let p = positives as u64;
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * positives * negatives) as f64)
}

/// Fraction of samples with `(score >= threshold) == (label == 1)`.
pub fn accuracy(samples: &[ScoredSample], threshold: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Metric("accuracy of an empty sample set".into()));
    }
    let correct = samples
        .iter()
        .filter(|s| (s.score >= threshold) == (s.label == 1))
        .count();
    Ok(correct as f64 / samples.len() as f64)
}

/// Collapses frames to one sample per video: mean frame score, shared label.
/// Output is ordered by video id.
pub fn video_level(samples: &[ScoredSample]) -> Result<Vec<ScoredSample>> {
    let mut groups: BTreeMap<&str, (u8, f64, usize)> = BTreeMap::new();
    for s in samples {
        let entry = groups.entry(&s.video_id).or_insert((s.label, 0.0, 0));
        if entry.0 != s.label {
            return Err(Error::Metric(format!(
                "video {} has conflicting frame labels",
                s.video_id
            )));
        }
        entry.1 += s.score;
        entry.2 += 1;
    }
    Ok(groups
        .into_iter()
        .map(|(id, (label, sum, n))| ScoredSample::new(sum / n as f64, label, id))
        .collect())
}
