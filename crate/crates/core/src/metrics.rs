//! Ranking and accuracy metrics over model logits.

use ndarray::ArrayView1;

use crate::error::{Error, Result};
use crate::ingest::SequenceExample;
use crate::model::{forward, pad_examples, pad_histories, ModelParams};
use crate::scalar::Scalar;

/// Evaluation batch width; purely a throughput knob, results do not depend
/// on it.
const EVAL_BATCH: usize = 512;

/// Recommendation list, best first. At most 50 items, padding excluded,
/// ties broken by ascending item index.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedRecommendations<S: Scalar> {
    pub items: Vec<u32>,
    pub scores: Vec<S>,
}

pub const MAX_RECOMMENDATIONS: usize = 50;

/// Rank all real items for one history and keep the top 50.
pub fn rank_items<S: Scalar>(
    params: &ModelParams<S>,
    history: &[u32],
) -> Result<RankedRecommendations<S>> {
    if history.is_empty() {
        return Err(Error::EmptyInput("history must be non-empty".into()));
    }
    let padded = pad_histories(&[history], params.config.lookback);
    let logits = forward(params, &padded.view())?;
    let row = logits.row(0);

    let mut order: Vec<u32> = (1..=params.config.n_items as u32).collect();
    order.sort_by(|&a, &b| {
        row[b as usize]
            .partial_cmp(&row[a as usize])
            .expect("finite logits")
            .then(a.cmp(&b))
    });
    order.truncate(MAX_RECOMMENDATIONS);
    let scores = order.iter().map(|&i| row[i as usize]).collect();
    Ok(RankedRecommendations {
        items: order,
        scores,
    })
}

/// 1-based rank of `target` among all real items: one plus the number of
/// items scoring strictly higher, plus equal-scored items with a lower
/// index. Matches the [`rank_items`] tie order without sorting.
pub fn target_rank<S: Scalar>(logits_row: &ArrayView1<S>, target: u32) -> usize {
    let target_score = logits_row[target as usize];
    let mut rank = 1;
    for (idx, &score) in logits_row.iter().enumerate().skip(1) {
        let idx = idx as u32;
        if idx == target {
            continue;
        }
        if score > target_score || (score == target_score && idx < target) {
            rank += 1;
        }
    }
    rank
}

fn ranks_of_targets<S: Scalar>(
    params: &ModelParams<S>,
    examples: &[SequenceExample],
) -> Result<Vec<usize>> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("evaluation set is empty".into()));
    }
    let mut ranks = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(EVAL_BATCH) {
        let refs: Vec<&SequenceExample> = chunk.iter().collect();
        let (padded, targets) = pad_examples(&refs, params.config.lookback);
        let logits = forward(params, &padded.view())?;
        for (row, &t) in logits.rows().into_iter().zip(&targets) {
            ranks.push(target_rank(&row, t));
        }
    }
    Ok(ranks)
}

/// Mean reciprocal rank of the ground-truth item over the full ranking.
pub fn mrr<S: Scalar>(params: &ModelParams<S>, examples: &[SequenceExample]) -> Result<f64> {
    let ranks = ranks_of_targets(params, examples)?;
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

/// Fraction of examples whose ground-truth item ranks in the top `k`.
pub fn recall_at_k<S: Scalar>(
    params: &ModelParams<S>,
    examples: &[SequenceExample],
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let ranks = ranks_of_targets(params, examples)?;
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}
