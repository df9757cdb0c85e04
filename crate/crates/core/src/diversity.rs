//! Gini-Simpson diversity over community labels and the
//! history-versus-recommendation filter-bubble analysis.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::community::CommunityMap;
use crate::error::{Error, Result};
use crate::ingest::SequenceExample;
use crate::metrics::rank_items;
use crate::model::ModelParams;
use crate::scalar::Scalar;

/// Diversity of a label list; 1 is maximally diverse, 0 means a single
/// community. Singleton lists always score 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiversityScore {
    pub value: f64,
    pub list_length: usize,
}

/// Gini-Simpson index: 1 - sum of squared label proportions, the
/// probability that two draws with replacement land in different
/// communities.
pub fn gini_simpson(labels: &[u32]) -> Result<DiversityScore> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("gini_simpson needs a non-empty list".into()));
    }
    let mut counts: HashMap<u32, usize> = HashMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let n = labels.len() as f64;
    let sum_p2: f64 = counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            p * p
        })
        .sum();
    Ok(DiversityScore {
        value: 1.0 - sum_p2,
        list_length: labels.len(),
    })
}

/// Element-wise community lookup, order preserving.
pub fn items_to_communities(items: &[u32], map: &CommunityMap) -> Result<Vec<u32>> {
    if items.is_empty() {
        return Err(Error::EmptyInput("community lookup needs a non-empty list".into()));
    }
    items
        .iter()
        .map(|&i| map.community_of(i).ok_or(Error::UnmappedItem(i)))
        .collect()
}

/// History diversity of an example under a community map.
pub fn history_diversity(example: &SequenceExample, map: &CommunityMap) -> Result<f64> {
    Ok(gini_simpson(&items_to_communities(&example.history, map)?)?.value)
}

/// Per-lookback comparison of recommendation diversity against history
/// diversity; one row per requested lookback.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BubbleRow {
    pub lookback: usize,
    /// Fraction of examples whose recommendations are less diverse than
    /// their truncated history.
    pub frac_less_diverse: f64,
    pub frac_more_diverse: f64,
    pub mean_history_diversity: f64,
    pub mean_rec_diversity: f64,
    pub n_examples: usize,
}

/// For each lookback L, truncate every eligible history to its most recent
/// L items, rank recommendations from the truncated history, and compare
/// the Gini-Simpson diversity of the top-L recommendations against the
/// truncated history itself.
pub fn bubble_report<S: Scalar>(
    params: &ModelParams<S>,
    examples: &[SequenceExample],
    map: &CommunityMap,
    lookbacks: &[usize],
) -> Result<Vec<BubbleRow>> {
    for &l in lookbacks {
        if !(1..=50).contains(&l) {
            return Err(Error::InvalidArgument(format!(
                "lookback {l} outside [1, 50]"
            )));
        }
        if l > params.config.lookback {
            return Err(Error::InvalidArgument(format!(
                "lookback {l} exceeds the model lookback {}",
                params.config.lookback
            )));
        }
    }

    let mut rows = Vec::with_capacity(lookbacks.len());
    for &l in lookbacks {
        let mut n = 0usize;
        let mut less = 0usize;
        let mut more = 0usize;
        let mut hist_sum = 0.0;
        let mut rec_sum = 0.0;
        for e in examples {
            if e.history_len() < l {
                continue;
            }
            let truncated = &e.history[e.history_len() - l..];
            let hist_div = gini_simpson(&items_to_communities(truncated, map)?)?.value;
            let recs = rank_items(params, truncated)?;
            let top: Vec<u32> = recs.items.iter().take(l).copied().collect();
            let rec_div = gini_simpson(&items_to_communities(&top, map)?)?.value;

            n += 1;
            hist_sum += hist_div;
            rec_sum += rec_div;
            if rec_div < hist_div {
                less += 1;
            } else if rec_div > hist_div {
                more += 1;
            }
        }
        let denom = n.max(1) as f64;
        rows.push(BubbleRow {
            lookback: l,
            frac_less_diverse: less as f64 / denom,
            frac_more_diverse: more as f64 / denom,
            mean_history_diversity: hist_sum / denom,
            mean_rec_diversity: rec_sum / denom,
            n_examples: n,
        });
    }
    Ok(rows)
}

pub fn write_bubble_csv(rows: &[BubbleRow], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(
        f,
        "lookback,frac_less_diverse,frac_more_diverse,mean_history_div,mean_rec_div,n_examples"
    )?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{}",
            r.lookback,
            r.frac_less_diverse,
            r.frac_more_diverse,
            r.mean_history_diversity,
            r.mean_rec_diversity,
            r.n_examples
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Split;
    use crate::model::ModelConfig;
    use ndarray::Array1;
    use proptest::prelude::*;
    use rand::Rng;
    use std::collections::BTreeMap;

    #[test]
    fn gini_reference_values() {
        assert_eq!(gini_simpson(&[1, 1, 1, 1]).unwrap().value, 0.0);
        assert!((gini_simpson(&[1, 2]).unwrap().value - 0.5).abs() < 1e-12);
        assert!((gini_simpson(&[1, 1, 2, 3]).unwrap().value - 0.625).abs() < 1e-12);
        assert!(gini_simpson(&[]).is_err());
        assert_eq!(gini_simpson(&[9]).unwrap().value, 0.0);
    }

    #[test]
    fn gini_monte_carlo_agreement() {
        let mut rng = crate::rng::stream_rng(5, "gini-mc");
        let labels: Vec<u32> = (0..40).map(|_| rng.gen_range(0..5)).collect();
        let exact = gini_simpson(&labels).unwrap().value;
        let n = 100_000;
        let mut diff = 0usize;
        for _ in 0..n {
            let a = labels[rng.gen_range(0..labels.len())];
            let b = labels[rng.gen_range(0..labels.len())];
            if a != b {
                diff += 1;
            }
        }
        let estimate = diff as f64 / n as f64;
        assert!((estimate - exact).abs() < 1e-2, "{estimate} vs {exact}");
    }

    #[test]
    fn community_lookup_preserves_order_and_names_missing_items() {
        let map = CommunityMap::new(BTreeMap::from([(1, 0), (2, 1)]), 0.0);
        assert_eq!(items_to_communities(&[1, 2, 1], &map).unwrap(), vec![0, 1, 0]);
        match items_to_communities(&[1, 9], &map) {
            Err(Error::UnmappedItem(9)) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(items_to_communities(&[], &map).is_err());
    }

    /// Community map splitting items evenly into `k` blocks.
    fn block_map(n_items: u32, k: u32) -> CommunityMap {
        let block = n_items / k;
        CommunityMap::new(
            (1..=n_items).map(|i| (i, (i - 1) / block)).collect(),
            0.0,
        )
    }

    #[test]
    fn degenerate_model_recommends_one_community() {
        // Output bias strongly favors items 1..4, all of community 0, so
        // every mixed-history example sees less diverse recommendations.
        let n_items = 12;
        let map = block_map(n_items, 3);
        let cfg = ModelConfig::new(n_items as usize, 2, 2, 8);
        let mut params = ModelParams::<f64>::zeros(cfg);
        let mut bias = vec![0.0; n_items as usize + 1];
        for (i, b) in bias.iter_mut().enumerate().skip(1) {
            if i <= 4 {
                *b = 100.0 - i as f64;
            } else {
                *b = -(i as f64);
            }
        }
        params.output_bias = Array1::from(bias);

        let examples: Vec<SequenceExample> = (0..6)
            .map(|k| SequenceExample {
                user: k,
                history: vec![1 + k % 3, 5 + k % 3, 9 + k % 3, 2],
                target: 1,
                split: Split::Validation,
            })
            .collect();
        let rows = bubble_report(&params, &examples, &map, &[4]).unwrap();
        assert_eq!(rows[0].n_examples, 6);
        assert_eq!(rows[0].frac_less_diverse, 1.0);
        assert_eq!(rows[0].frac_more_diverse, 0.0);
        assert_eq!(rows[0].mean_rec_diversity, 0.0);
    }

    #[test]
    fn lookback_one_pins_both_diversities_to_zero() {
        let map = block_map(6, 2);
        let cfg = ModelConfig::new(6, 2, 2, 4);
        let params = ModelParams::<f64>::zeros(cfg);
        let examples = vec![SequenceExample {
            user: 0,
            history: vec![1, 4],
            target: 2,
            split: Split::Validation,
        }];
        let rows = bubble_report(&params, &examples, &map, &[1]).unwrap();
        assert_eq!(rows[0].frac_less_diverse, 0.0);
        assert_eq!(rows[0].frac_more_diverse, 0.0);
        assert_eq!(rows[0].mean_history_diversity, 0.0);
        assert_eq!(rows[0].mean_rec_diversity, 0.0);
    }

    #[test]
    fn bubble_report_validates_lookbacks() {
        let map = block_map(6, 2);
        let params = ModelParams::<f64>::zeros(ModelConfig::new(6, 2, 2, 4));
        assert!(bubble_report(&params, &[], &map, &[0]).is_err());
        assert!(bubble_report(&params, &[], &map, &[51]).is_err());
        // Larger than the model lookback.
        assert!(bubble_report(&params, &[], &map, &[5]).is_err());
    }

    proptest! {
        #[test]
        fn gini_permutation_and_renaming_invariant(
            labels in proptest::collection::vec(0u32..6, 1..40),
            seed in 0u64..100,
        ) {
            let base = gini_simpson(&labels).unwrap().value;

            let mut shuffled = labels.clone();
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut crate::rng::stream_rng(seed, "perm"));
            prop_assert!((gini_simpson(&shuffled).unwrap().value - base).abs() < 1e-15);

            // Bijective relabeling.
            let renamed: Vec<u32> = labels.iter().map(|&l| 1000 - l * 7).collect();
            prop_assert!((gini_simpson(&renamed).unwrap().value - base).abs() < 1e-15);
        }

        #[test]
        fn gini_equal_frequency_is_one_minus_inverse_k(k in 1usize..12, reps in 1usize..5) {
            let labels: Vec<u32> = (0..k as u32).flat_map(|c| std::iter::repeat(c).take(reps)).collect();
            let expected = 1.0 - 1.0 / k as f64;
            prop_assert!((gini_simpson(&labels).unwrap().value - expected).abs() < 1e-12);
        }
    }
}
