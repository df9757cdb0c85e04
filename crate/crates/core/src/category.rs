//! Partition training points and validation-time prediction points into
//! diversity categories: Diverse, FilterBubble, BreakingBubble, Other.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::community::CommunityMap;
use crate::diversity::{gini_simpson, items_to_communities};
use crate::error::{Error, Result};
use crate::ingest::{SequenceExample, Split};
use crate::metrics::rank_items;
use crate::model::ModelParams;
use crate::scalar::Scalar;

pub const DEFAULT_BAND_PERCENTILE: f64 = 0.125;
pub const VALIDATION_TOP_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CategoryLabel {
    /// History diversity in the top band.
    Diverse,
    /// Bottom-band history whose target sits in a history-majority community.
    FilterBubble,
    /// Bottom-band history whose target community never occurs in the history.
    BreakingBubble,
    Other,
}

impl CategoryLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            CategoryLabel::Diverse => "diverse",
            CategoryLabel::FilterBubble => "filter_bubble",
            CategoryLabel::BreakingBubble => "breaking_bubble",
            CategoryLabel::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "diverse" => Ok(CategoryLabel::Diverse),
            "filter_bubble" => Ok(CategoryLabel::FilterBubble),
            "breaking_bubble" => Ok(CategoryLabel::BreakingBubble),
            "other" => Ok(CategoryLabel::Other),
            other => Err(Error::InvalidArgument(format!("unknown category {other:?}"))),
        }
    }
}

/// Labels aligned with the examples they were computed from, plus the band
/// cuts that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct CategorizedDataset {
    pub labels: Vec<CategoryLabel>,
    pub history_diversities: Vec<f64>,
    /// Bottom-band cut: the diversity value at the `percentile` nearest rank.
    pub low_cut: f64,
    /// Top-band cut at the mirrored percentile.
    pub high_cut: f64,
    pub percentile: f64,
}

impl CategorizedDataset {
    /// Rebuild from persisted labels and diversities; band cuts are
    /// recomputed with the same nearest-rank rule that produced them.
    pub fn from_parts(
        labels: Vec<CategoryLabel>,
        history_diversities: Vec<f64>,
        percentile: f64,
    ) -> Result<Self> {
        if labels.len() != history_diversities.len() || labels.is_empty() {
            return Err(Error::InvalidArgument(
                "labels and diversities must align and be non-empty".into(),
            ));
        }
        let mut sorted = history_diversities.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let low_cut = nearest_rank(&sorted, percentile);
        let high_cut = nearest_rank(&sorted, 1.0 - percentile);
        Ok(CategorizedDataset {
            labels,
            history_diversities,
            low_cut,
            high_cut,
            percentile,
        })
    }

    pub fn indices_of(&self, label: CategoryLabel) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count(&self, label: CategoryLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// Nearest-rank quantile of a sorted sample.
fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = (q * n as f64).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

/// Communities with the maximal count in `communities` (ties all count as
/// majority).
fn majority_set(communities: &[u32]) -> Vec<u32> {
    let mut counts: HashMap<u32, usize> = HashMap::new();
    for &c in communities {
        *counts.entry(c).or_default() += 1;
    }
    let max = counts.values().copied().max().unwrap_or(0);
    let mut majority: Vec<u32> = counts
        .into_iter()
        .filter(|&(_, n)| n == max)
        .map(|(c, _)| c)
        .collect();
    majority.sort_unstable();
    majority
}

fn label_point(
    history_communities: &[u32],
    target_community: u32,
    diversity: f64,
    low_cut: f64,
    high_cut: f64,
) -> CategoryLabel {
    if diversity >= high_cut {
        return CategoryLabel::Diverse;
    }
    if diversity <= low_cut {
        if majority_set(history_communities).contains(&target_community) {
            return CategoryLabel::FilterBubble;
        }
        if !history_communities.contains(&target_community) {
            return CategoryLabel::BreakingBubble;
        }
    }
    CategoryLabel::Other
}

/// Label every training example by its history diversity band and the
/// relation of its target community to the history.
///
/// Band cuts are nearest-rank percentiles of this population's own history
/// diversities; values exactly at a cut fall inside the band. The top band
/// wins if a degenerate population puts a point in both.
pub fn categorize_training(
    examples: &[SequenceExample],
    map: &CommunityMap,
    percentile: f64,
) -> Result<CategorizedDataset> {
    if examples.len() < 8 {
        return Err(Error::InvalidArgument(format!(
            "categorization needs at least 8 examples, found {}",
            examples.len()
        )));
    }
    if !(0.0..=0.5).contains(&percentile) || percentile == 0.0 {
        return Err(Error::InvalidArgument(format!(
            "band percentile {percentile} outside (0, 0.5]"
        )));
    }

    let mut history_communities = Vec::with_capacity(examples.len());
    let mut diversities = Vec::with_capacity(examples.len());
    for e in examples {
        let comms = items_to_communities(&e.history, map)?;
        diversities.push(gini_simpson(&comms)?.value);
        history_communities.push(comms);
    }

    let mut sorted = diversities.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let low_cut = nearest_rank(&sorted, percentile);
    let high_cut = nearest_rank(&sorted, 1.0 - percentile);

    let labels = examples
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let target_comm = map.community_of(e.target).ok_or(Error::UnmappedItem(e.target))?;
            Ok(label_point(
                &history_communities[i],
                target_comm,
                diversities[i],
                low_cut,
                high_cut,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(CategorizedDataset {
        labels,
        history_diversities: diversities,
        low_cut,
        high_cut,
        percentile,
    })
}

/// Validation-side categorization: one point per (bottom-band example,
/// top-10 predicted item) pair, materialized as a sequence example whose
/// target is the predicted item.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationCategories {
    pub filter: Vec<SequenceExample>,
    pub breaking: Vec<SequenceExample>,
    /// Uniform control sample over all (example, predicted item) pairs.
    pub random: Vec<SequenceExample>,
    pub low_cut: f64,
}

/// Categorize the model's top-10 predictions on bottom-band validation
/// points, and draw a uniform random (example, prediction) control pool.
/// The band cut comes from the validation population's own history
/// diversities.
pub fn categorize_validation<S: Scalar, R: Rng>(
    params: &ModelParams<S>,
    examples: &[SequenceExample],
    map: &CommunityMap,
    percentile: f64,
    random_pool_size: usize,
    rng: &mut R,
) -> Result<ValidationCategories> {
    if examples.len() < 8 {
        return Err(Error::InvalidArgument(format!(
            "categorization needs at least 8 examples, found {}",
            examples.len()
        )));
    }

    let mut history_communities = Vec::with_capacity(examples.len());
    let mut diversities = Vec::with_capacity(examples.len());
    for e in examples {
        let comms = items_to_communities(&e.history, map)?;
        diversities.push(gini_simpson(&comms)?.value);
        history_communities.push(comms);
    }
    let mut sorted = diversities.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let low_cut = nearest_rank(&sorted, percentile);

    let as_point = |e: &SequenceExample, predicted: u32| SequenceExample {
        user: e.user,
        history: e.history.clone(),
        target: predicted,
        split: Split::Validation,
    };

    let mut filter = Vec::new();
    let mut breaking = Vec::new();
    let mut universe: Vec<(usize, u32)> = Vec::new();
    for (i, e) in examples.iter().enumerate() {
        let recs = rank_items(params, &e.history)?;
        let top: Vec<u32> = recs.items.iter().take(VALIDATION_TOP_K).copied().collect();
        for &pred in &top {
            universe.push((i, pred));
        }
        if diversities[i] > low_cut {
            continue;
        }
        let majority = majority_set(&history_communities[i]);
        for &pred in &top {
            let pred_comm = map.community_of(pred).ok_or(Error::UnmappedItem(pred))?;
            if majority.contains(&pred_comm) {
                filter.push(as_point(e, pred));
            } else if !history_communities[i].contains(&pred_comm) {
                breaking.push(as_point(e, pred));
            }
        }
    }

    let n_random = random_pool_size.min(universe.len());
    let random = universe
        .choose_multiple(rng, n_random)
        .map(|&(i, pred)| as_point(&examples[i], pred))
        .collect();

    Ok(ValidationCategories {
        filter,
        breaking,
        random,
        low_cut,
    })
}

/// Category assignment CSV: example id, label, history diversity, target
/// community.
pub fn write_category_csv(
    categorized: &CategorizedDataset,
    examples: &[SequenceExample],
    map: &CommunityMap,
    path: &Path,
) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "example_id,label,history_diversity,target_community")?;
    for (i, (label, div)) in categorized
        .labels
        .iter()
        .zip(&categorized.history_diversities)
        .enumerate()
    {
        let target_comm = map
            .community_of(examples[i].target)
            .ok_or(Error::UnmappedItem(examples[i].target))?;
        writeln!(f, "{i},{},{div},{target_comm}", label.as_str())?;
    }
    Ok(())
}

/// Read back the label and history-diversity columns of a category CSV.
pub fn read_category_csv(path: &Path) -> Result<(Vec<CategoryLabel>, Vec<f64>)> {
    let text = std::fs::read_to_string(path)?;
    let mut labels = Vec::new();
    let mut diversities = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 {
            if line != "example_id,label,history_diversity,target_community" {
                return Err(Error::Format("bad category csv header".into()));
            }
            continue;
        }
        let mut fields = line.split(',');
        let label = fields.nth(1).ok_or_else(|| Error::Parse {
            line: idx + 1,
            msg: "missing label column".into(),
        })?;
        labels.push(CategoryLabel::parse(label)?);
        let div: f64 = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse {
                line: idx + 1,
                msg: "missing history_diversity column".into(),
            })?;
        diversities.push(div);
    }
    Ok((labels, diversities))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::rng::stream_rng;
    use ndarray::Array1;
    use std::collections::BTreeMap;

    /// Items 1..=n, communities of `block` consecutive items.
    fn block_map(n_items: u32, block: u32) -> CommunityMap {
        CommunityMap::new(
            (1..=n_items).map(|i| (i, (i - 1) / block)).collect(),
            0.0,
        )
    }

    fn ex(history: Vec<u32>, target: u32) -> SequenceExample {
        SequenceExample {
            user: 0,
            history,
            target,
            split: Split::Train,
        }
    }

    /// Eight-example population: two homogeneous histories at diversity 0
    /// in the bottom band, mixed ones in the middle, diverse ones on top.
    /// Communities: 1,2 -> 0; 3,4 -> 1; 5,6 -> 2.
    fn fixture() -> (Vec<SequenceExample>, CommunityMap) {
        let map = block_map(6, 2);
        let examples = vec![
            ex(vec![1, 1, 1, 1], 2),    // div 0, target community 0 = majority
            ex(vec![1, 1, 1, 1], 3),    // div 0, target community 1 unseen
            ex(vec![1, 1, 3, 1], 2),    // div 0.375
            ex(vec![1, 1, 3, 1], 4),    // div 0.375
            ex(vec![1, 1, 3, 3], 2),    // div 0.5
            ex(vec![1, 1, 3, 3], 5),    // div 0.5
            ex(vec![1, 3, 5, 1], 2),    // div 0.625
            ex(vec![1, 3, 5, 5], 2),    // div 0.625
        ];
        (examples, map)
    }

    #[test]
    fn training_categorization_reference_labels() {
        let (examples, map) = fixture();
        let cat = categorize_training(&examples, &map, 0.125).unwrap();
        assert_eq!(cat.low_cut, 0.0);
        assert_eq!(cat.high_cut, 0.625);
        assert_eq!(cat.labels[0], CategoryLabel::FilterBubble);
        assert_eq!(cat.labels[1], CategoryLabel::BreakingBubble);
        assert_eq!(cat.labels[2], CategoryLabel::Other);
        assert_eq!(cat.labels[6], CategoryLabel::Diverse);
        assert_eq!(cat.labels[7], CategoryLabel::Diverse);
        assert_eq!(cat.count(CategoryLabel::Diverse), 2);
    }

    #[test]
    fn bottom_band_minority_present_target_is_other() {
        // Population with diversities {0.375 x3, 0.5 x3, 0.625 x2} puts the
        // low cut at 0.375, so the first three examples sit in the band.
        let map = block_map(6, 2);
        let mut examples = vec![
            ex(vec![1, 1, 1, 3], 3), // div 0.375, target community 1: present, minority
            ex(vec![1, 1, 1, 3], 1), // div 0.375, target community 0: majority
            ex(vec![1, 1, 1, 3], 5), // div 0.375, target community 2: unseen
        ];
        for _ in 0..3 {
            examples.push(ex(vec![1, 1, 3, 3], 2)); // div 0.5
        }
        for _ in 0..2 {
            examples.push(ex(vec![1, 3, 5, 1], 2)); // div 0.625
        }
        let cat = categorize_training(&examples, &map, 0.125).unwrap();
        assert_eq!(cat.low_cut, 0.375);
        assert_eq!(cat.labels[0], CategoryLabel::Other);
        assert_eq!(cat.labels[1], CategoryLabel::FilterBubble);
        assert_eq!(cat.labels[2], CategoryLabel::BreakingBubble);
    }

    #[test]
    fn majority_ties_count_as_majority() {
        // History [1,1,3,3]: communities 0 and 1 tie at two each.
        let map = block_map(6, 2);
        let mut examples = vec![
            ex(vec![1, 1, 3, 3], 4), // target community 1, tied majority
        ];
        for _ in 0..5 {
            examples.push(ex(vec![1, 3, 5, 1], 2)); // div 0.625
        }
        examples.push(ex(vec![1, 3, 5, 2], 2));
        examples.push(ex(vec![1, 3, 5, 4], 2));
        let cat = categorize_training(&examples, &map, 0.125).unwrap();
        assert_eq!(cat.labels[0], CategoryLabel::FilterBubble);
    }

    #[test]
    fn categorization_needs_eight_examples_and_valid_percentile() {
        let (examples, map) = fixture();
        assert!(categorize_training(&examples[..7], &map, 0.125).is_err());
        assert!(categorize_training(&examples, &map, 0.0).is_err());
        assert!(categorize_training(&examples, &map, 0.7).is_err());
    }

    #[test]
    fn labels_stable_under_community_relabeling() {
        let (examples, map) = fixture();
        let original = categorize_training(&examples, &map, 0.125).unwrap();
        // Bijective renaming of community ids.
        let renamed = CommunityMap::new(
            map.iter().map(|(item, c)| (item, 2 - c)).collect::<BTreeMap<_, _>>(),
            0.0,
        );
        let relabeled = categorize_training(&examples, &renamed, 0.125).unwrap();
        assert_eq!(original.labels, relabeled.labels);
    }

    #[test]
    fn no_point_is_both_filter_and_breaking() {
        let (examples, map) = fixture();
        let cat = categorize_training(&examples, &map, 0.25).unwrap();
        // Labels are single-valued by construction; spot-check counts add up.
        let total: usize = [
            CategoryLabel::Diverse,
            CategoryLabel::FilterBubble,
            CategoryLabel::BreakingBubble,
            CategoryLabel::Other,
        ]
        .iter()
        .map(|&l| cat.count(l))
        .sum();
        assert_eq!(total, examples.len());
    }

    /// Model whose ranking is the fixed bias order for every input.
    fn bias_model(n_items: usize, favored: &[u32]) -> ModelParams<f64> {
        let cfg = ModelConfig::new(n_items, 2, 2, 6);
        let mut params = ModelParams::zeros(cfg);
        let mut bias = vec![0.0; n_items + 1];
        for (rank, &item) in favored.iter().enumerate() {
            bias[item as usize] = 1000.0 - rank as f64;
        }
        for (i, b) in bias.iter_mut().enumerate().skip(1) {
            if *b == 0.0 {
                *b = -(i as f64);
            }
        }
        params.output_bias = Array1::from(bias);
        params
    }

    fn validation_population() -> Vec<SequenceExample> {
        // First example: homogeneous community-0 history, diversity 0.
        let mut examples = vec![ex(vec![1, 2, 3, 4], 1)];
        // Seven spread examples keep the band cut at 0.
        for k in 0..7u32 {
            examples.push(ex(vec![1, 11, 21, 1 + k], 1));
        }
        examples
    }

    #[test]
    fn homogeneous_history_with_same_community_predictions_is_all_filter() {
        // 30 items, 10 per community; predictions are items 1..=10, all
        // community 0 like the first history.
        let map = block_map(30, 10);
        let params = bias_model(30, &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10]);
        let cats = categorize_validation(
            &params,
            &validation_population(),
            &map,
            0.125,
            5,
            &mut stream_rng(1, "val"),
        )
        .unwrap();
        assert_eq!(cats.low_cut, 0.0);
        assert_eq!(cats.filter.len(), 10);
        assert!(cats.breaking.is_empty());
        assert_eq!(cats.random.len(), 5);
        assert!(cats.filter.iter().all(|p| p.history == vec![1, 2, 3, 4]));
    }

    #[test]
    fn unseen_community_prediction_becomes_breaking() {
        let map = block_map(30, 10);
        // Nine community-0 predictions plus item 11 from unseen community 1.
        let params = bias_model(30, &[1, 2, 3, 4, 5, 6, 7, 8, 9, 11]);
        let cats = categorize_validation(
            &params,
            &validation_population(),
            &map,
            0.125,
            5,
            &mut stream_rng(1, "val"),
        )
        .unwrap();
        assert_eq!(cats.filter.len(), 9);
        assert_eq!(cats.breaking.len(), 1);
        assert_eq!(cats.breaking[0].target, 11);
    }

    #[test]
    fn outside_band_examples_contribute_no_points() {
        let map = block_map(30, 10);
        let params = bias_model(30, &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10]);
        let cats = categorize_validation(
            &params,
            &validation_population(),
            &map,
            0.125,
            0,
            &mut stream_rng(2, "val"),
        )
        .unwrap();
        // Only the single diversity-0 example is in the band; the mixed
        // histories contribute nothing even though they get predictions.
        assert_eq!(cats.filter.len(), 10);
        assert_eq!(cats.random.len(), 0);
    }

    #[test]
    fn category_csv_roundtrip() {
        let (examples, map) = fixture();
        let cat = categorize_training(&examples, &map, 0.125).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("categories.csv");
        write_category_csv(&cat, &examples, &map, &path).unwrap();
        let (labels, diversities) = read_category_csv(&path).unwrap();
        let rebuilt = CategorizedDataset::from_parts(labels, diversities, 0.125).unwrap();
        assert_eq!(rebuilt, cat);
    }
}
