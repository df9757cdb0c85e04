//! Training-data cleansing and augmentation experiments: apply a
//! modification plan, retrain several times, and evaluate accuracy and
//! recommendation diversity on the untouched test split.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::category::{CategorizedDataset, CategoryLabel};
use crate::community::CommunityMap;
use crate::diversity::{gini_simpson, items_to_communities};
use crate::error::{Error, Result};
use crate::ingest::SequenceExample;
use crate::metrics::{mrr, rank_items, recall_at_k, MAX_RECOMMENDATIONS};
use crate::model::{train, Hyperparams, ModelConfig, ModelParams};
use crate::rng::stream_rng;
use crate::scalar::Scalar;

/// The six training-set variants: the original data, two random baselines
/// matched in size to the category-driven edits, and the three
/// category-driven edits themselves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Plan {
    Original,
    RemoveRandom,
    AddRandom,
    RemoveFilter,
    AddBreaking,
    RemoveAndAdd,
}

impl Plan {
    pub const ALL: [Plan; 6] = [
        Plan::Original,
        Plan::RemoveRandom,
        Plan::AddRandom,
        Plan::RemoveFilter,
        Plan::AddBreaking,
        Plan::RemoveAndAdd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Plan::Original => "original",
            Plan::RemoveRandom => "remove_random",
            Plan::AddRandom => "add_random",
            Plan::RemoveFilter => "remove_filter",
            Plan::AddBreaking => "add_breaking",
            Plan::RemoveAndAdd => "remove_and_add",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Plan::Original),
            "remove_random" => Ok(Plan::RemoveRandom),
            "add_random" => Ok(Plan::AddRandom),
            "remove_filter" => Ok(Plan::RemoveFilter),
            "add_breaking" => Ok(Plan::AddBreaking),
            "remove_and_add" => Ok(Plan::RemoveAndAdd),
            other => Err(Error::InvalidArgument(format!("unknown plan {other:?}"))),
        }
    }
}

/// Build the modified training set for one plan.
///
/// `remove_filter` drops every FilterBubble point; `add_breaking` appends
/// one extra copy of every BreakingBubble point; `remove_and_add` does
/// both. The random baselines remove or duplicate a uniform subset of
/// exactly the same cardinality as the matching category.
pub fn apply_plan<R: Rng>(
    train_examples: &[SequenceExample],
    categorized: &CategorizedDataset,
    plan: Plan,
    rng: &mut R,
) -> Vec<SequenceExample> {
    assert_eq!(
        train_examples.len(),
        categorized.labels.len(),
        "categories must align with the training set"
    );
    let filter_idx = categorized.indices_of(CategoryLabel::FilterBubble);
    let breaking_idx = categorized.indices_of(CategoryLabel::BreakingBubble);

    match plan {
        Plan::Original => train_examples.to_vec(),
        Plan::RemoveFilter => {
            let drop: std::collections::HashSet<usize> = filter_idx.into_iter().collect();
            train_examples
                .iter()
                .enumerate()
                .filter(|(i, _)| !drop.contains(i))
                .map(|(_, e)| e.clone())
                .collect()
        }
        Plan::AddBreaking => {
            let mut out = train_examples.to_vec();
            out.extend(breaking_idx.iter().map(|&i| train_examples[i].clone()));
            out
        }
        Plan::RemoveAndAdd => {
            let drop: std::collections::HashSet<usize> = filter_idx.into_iter().collect();
            let mut out: Vec<SequenceExample> = train_examples
                .iter()
                .enumerate()
                .filter(|(i, _)| !drop.contains(i))
                .map(|(_, e)| e.clone())
                .collect();
            out.extend(breaking_idx.iter().map(|&i| train_examples[i].clone()));
            out
        }
        Plan::RemoveRandom => {
            let all: Vec<usize> = (0..train_examples.len()).collect();
            let drop: std::collections::HashSet<usize> = all
                .choose_multiple(rng, filter_idx.len())
                .copied()
                .collect();
            train_examples
                .iter()
                .enumerate()
                .filter(|(i, _)| !drop.contains(i))
                .map(|(_, e)| e.clone())
                .collect()
        }
        Plan::AddRandom => {
            let all: Vec<usize> = (0..train_examples.len()).collect();
            let mut dup: Vec<usize> = all
                .choose_multiple(rng, breaking_idx.len())
                .copied()
                .collect();
            dup.sort_unstable();
            let mut out = train_examples.to_vec();
            out.extend(dup.iter().map(|&i| train_examples[i].clone()));
            out
        }
    }
}

/// Mean Gini-Simpson diversity of the top-m recommendations over the
/// evaluation set, with m = min(history length, 50).
pub fn mean_recommendation_diversity<S: Scalar>(
    params: &ModelParams<S>,
    examples: &[SequenceExample],
    map: &CommunityMap,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("evaluation set is empty".into()));
    }
    let mut sum = 0.0;
    for e in examples {
        let m = e.history_len().min(MAX_RECOMMENDATIONS);
        let recs = rank_items(params, &e.history)?;
        let top: Vec<u32> = recs.items.iter().take(m).copied().collect();
        sum += gini_simpson(&items_to_communities(&top, map)?)?.value;
    }
    Ok(sum / examples.len() as f64)
}

/// One retrain cell of the suite.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ExperimentRow {
    pub plan: String,
    pub run: usize,
    pub seed: u64,
    pub recall_at_10: Option<f64>,
    pub mrr: Option<f64>,
    pub mean_rec_diversity: Option<f64>,
    pub diverged: bool,
}

/// Per-plan mean and standard deviation over the completed runs.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PlanSummary {
    pub plan: String,
    pub runs: usize,
    pub mean_recall_at_10: f64,
    pub sd_recall_at_10: f64,
    pub mean_mrr: f64,
    pub sd_mrr: f64,
    pub mean_diversity: f64,
    pub sd_diversity: f64,
    /// Relative diversity change against the original plan, when present.
    pub diversity_change_vs_original: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ExperimentReport {
    pub rows: Vec<ExperimentRow>,
    pub summaries: Vec<PlanSummary>,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (m, 0.0);
    }
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

/// Run every plan `retrains_per_plan` times and evaluate on the test
/// split.
///
/// Categories are computed once on the original training set and shared
/// by all plans; retrain seeds are paired across plans (base seed plus run
/// index) so plan comparisons see the same initialization and shuffle
/// stream. A diverging run is flagged and the suite continues.
#[allow(clippy::too_many_arguments)]
pub fn run_experiment_suite<S: Scalar>(
    train_examples: &[SequenceExample],
    test_examples: &[SequenceExample],
    categorized: &CategorizedDataset,
    map: &CommunityMap,
    model_config: &ModelConfig,
    hyperparams: &Hyperparams,
    plans: &[Plan],
    retrains_per_plan: usize,
    seed: u64,
) -> Result<ExperimentReport> {
    if retrains_per_plan == 0 {
        return Err(Error::InvalidArgument("retrains_per_plan must be positive".into()));
    }
    if test_examples.is_empty() {
        return Err(Error::EmptyInput("test split is empty".into()));
    }

    let mut rows = Vec::with_capacity(plans.len() * retrains_per_plan);
    for &plan in plans {
        for run in 0..retrains_per_plan {
            let mut plan_rng = stream_rng(seed, &format!("plan-{}-run{run}", plan.as_str()));
            let modified = apply_plan(train_examples, categorized, plan, &mut plan_rng);
            let run_seed = seed.wrapping_add(run as u64);
            let hp = Hyperparams {
                seed: run_seed,
                ..hyperparams.clone()
            };
            match train::<S>(&modified, model_config.clone(), &hp) {
                Ok(result) => {
                    let params = result.final_params();
                    rows.push(ExperimentRow {
                        plan: plan.as_str().to_string(),
                        run,
                        seed: run_seed,
                        recall_at_10: Some(recall_at_k(params, test_examples, 10)?),
                        mrr: Some(mrr(params, test_examples)?),
                        mean_rec_diversity: Some(mean_recommendation_diversity(
                            params,
                            test_examples,
                            map,
                        )?),
                        diverged: false,
                    });
                }
                Err(Error::Diverged { .. }) => {
                    rows.push(ExperimentRow {
                        plan: plan.as_str().to_string(),
                        run,
                        seed: run_seed,
                        recall_at_10: None,
                        mrr: None,
                        mean_rec_diversity: None,
                        diverged: true,
                    });
                }
                Err(e) => return Err(e),
            }
        }
    }

    let mut by_plan: HashMap<&str, Vec<&ExperimentRow>> = HashMap::new();
    for row in &rows {
        by_plan.entry(row.plan.as_str()).or_default().push(row);
    }
    let original_mean = by_plan.get(Plan::Original.as_str()).map(|rows| {
        let divs: Vec<f64> = rows
            .iter()
            .filter_map(|r| r.mean_rec_diversity)
            .collect();
        mean_sd(&divs).0
    });

    let mut summaries = Vec::new();
    for &plan in plans {
        let plan_rows = &by_plan[plan.as_str()];
        let completed: Vec<&&ExperimentRow> =
            plan_rows.iter().filter(|r| !r.diverged).collect();
        let recalls: Vec<f64> = completed.iter().filter_map(|r| r.recall_at_10).collect();
        let mrrs: Vec<f64> = completed.iter().filter_map(|r| r.mrr).collect();
        let divs: Vec<f64> = completed
            .iter()
            .filter_map(|r| r.mean_rec_diversity)
            .collect();
        if recalls.is_empty() {
            summaries.push(PlanSummary {
                plan: plan.as_str().to_string(),
                runs: 0,
                mean_recall_at_10: f64::NAN,
                sd_recall_at_10: f64::NAN,
                mean_mrr: f64::NAN,
                sd_mrr: f64::NAN,
                mean_diversity: f64::NAN,
                sd_diversity: f64::NAN,
                diversity_change_vs_original: None,
            });
            continue;
        }
        let (mr, sr) = mean_sd(&recalls);
        let (mm, sm) = mean_sd(&mrrs);
        let (md, sd) = mean_sd(&divs);
        summaries.push(PlanSummary {
            plan: plan.as_str().to_string(),
            runs: completed.len(),
            mean_recall_at_10: mr,
            sd_recall_at_10: sr,
            mean_mrr: mm,
            sd_mrr: sm,
            mean_diversity: md,
            sd_diversity: sd,
            diversity_change_vs_original: original_mean
                .filter(|&o| o > 0.0)
                .map(|o| (md - o) / o),
        });
    }

    Ok(ExperimentReport { rows, summaries })
}

impl ExperimentReport {
    pub fn summary_for(&self, plan: Plan) -> Option<&PlanSummary> {
        self.summaries.iter().find(|s| s.plan == plan.as_str())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "plan,run,seed,recall_at_10,mrr,mean_rec_diversity,diverged")?;
        for r in &self.rows {
            writeln!(
                f,
                "{},{},{},{},{},{},{}",
                r.plan,
                r.run,
                r.seed,
                r.recall_at_10.map(|v| v.to_string()).unwrap_or_default(),
                r.mrr.map(|v| v.to_string()).unwrap_or_default(),
                r.mean_rec_diversity.map(|v| v.to_string()).unwrap_or_default(),
                r.diverged
            )?;
        }
        Ok(())
    }

    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(
            f,
            "plan,runs,mean_recall_at_10,sd_recall_at_10,mean_mrr,sd_mrr,mean_diversity,sd_diversity,diversity_change_vs_original"
        )?;
        for s in &self.summaries {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{}",
                s.plan,
                s.runs,
                s.mean_recall_at_10,
                s.sd_recall_at_10,
                s.mean_mrr,
                s.sd_mrr,
                s.mean_diversity,
                s.sd_diversity,
                s.diversity_change_vs_original
                    .map(|v| v.to_string())
                    .unwrap_or_default()
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Split;
    use crate::rng::stream_rng;
    use std::collections::BTreeMap;

    fn ex(history: Vec<u32>, target: u32) -> SequenceExample {
        SequenceExample {
            user: 0,
            history,
            target,
            split: Split::Train,
        }
    }

    /// Twelve examples: 2 filter, 3 breaking, rest other/diverse.
    fn fixture() -> (Vec<SequenceExample>, CategorizedDataset) {
        let examples: Vec<SequenceExample> =
            (0..12).map(|i| ex(vec![1 + i % 4], 1 + (i + 1) % 4)).collect();
        let mut labels = vec![CategoryLabel::Other; 12];
        labels[0] = CategoryLabel::FilterBubble;
        labels[5] = CategoryLabel::FilterBubble;
        labels[1] = CategoryLabel::BreakingBubble;
        labels[7] = CategoryLabel::BreakingBubble;
        labels[9] = CategoryLabel::BreakingBubble;
        labels[2] = CategoryLabel::Diverse;
        let categorized = CategorizedDataset {
            labels,
            history_diversities: vec![0.0; 12],
            low_cut: 0.0,
            high_cut: 0.0,
            percentile: 0.125,
        };
        (examples, categorized)
    }

    #[test]
    fn original_plan_is_identity() {
        let (examples, cat) = fixture();
        let out = apply_plan(&examples, &cat, Plan::Original, &mut stream_rng(0, "p"));
        assert_eq!(out, examples);
    }

    #[test]
    fn add_breaking_appends_exact_copies() {
        let (examples, cat) = fixture();
        let out = apply_plan(&examples, &cat, Plan::AddBreaking, &mut stream_rng(0, "p"));
        assert_eq!(out.len(), examples.len() + 3);
        assert_eq!(out[..12], examples[..]);
        assert_eq!(out[12], examples[1]);
        assert_eq!(out[13], examples[7]);
        assert_eq!(out[14], examples[9]);
    }

    #[test]
    fn remove_filter_drops_exactly_the_category() {
        let (examples, cat) = fixture();
        let out = apply_plan(&examples, &cat, Plan::RemoveFilter, &mut stream_rng(0, "p"));
        assert_eq!(out.len(), 10);
        assert!(!out.contains(&examples[0]) || examples.iter().filter(|e| **e == examples[0]).count() > 1);
    }

    #[test]
    fn random_baselines_match_category_cardinalities() {
        let (examples, cat) = fixture();
        let removed = apply_plan(&examples, &cat, Plan::RemoveRandom, &mut stream_rng(1, "p"));
        assert_eq!(removed.len(), examples.len() - 2);
        let added = apply_plan(&examples, &cat, Plan::AddRandom, &mut stream_rng(1, "p"));
        assert_eq!(added.len(), examples.len() + 3);
        // The duplicated tail consists of copies of existing examples.
        for e in &added[12..] {
            assert!(examples.contains(e));
        }
        // Deterministic under a fixed rng stream.
        let removed2 = apply_plan(&examples, &cat, Plan::RemoveRandom, &mut stream_rng(1, "p"));
        assert_eq!(removed, removed2);
    }

    #[test]
    fn remove_and_add_does_both() {
        let (examples, cat) = fixture();
        let out = apply_plan(&examples, &cat, Plan::RemoveAndAdd, &mut stream_rng(0, "p"));
        assert_eq!(out.len(), 12 - 2 + 3);
    }

    #[test]
    fn plan_names_roundtrip_and_reject_unknown() {
        for plan in Plan::ALL {
            assert_eq!(Plan::parse(plan.as_str()).unwrap(), plan);
        }
        assert!(Plan::parse("delete_everything").is_err());
    }

    fn block_map(n_items: u32, block: u32) -> CommunityMap {
        CommunityMap::new(
            (1..=n_items).map(|i| (i, (i - 1) / block)).collect::<BTreeMap<_, _>>(),
            0.0,
        )
    }

    fn suite_hyperparams() -> Hyperparams {
        Hyperparams {
            batch_size: 12,
            epochs: 4,
            learning_rate: 0.1,
            momentum: 0.9,
            checkpoint_interval: 4,
            seed: 0,
        }
    }

    #[test]
    fn suite_original_only_equals_plain_evaluation() {
        let (examples, cat) = fixture();
        let test: Vec<SequenceExample> =
            (0..6).map(|i| ex(vec![1 + i % 4, 2], 1 + i % 4)).collect();
        let map = block_map(4, 2);
        let cfg = ModelConfig::new(4, 3, 2, 4);
        let hp = suite_hyperparams();
        let report = run_experiment_suite::<f64>(
            &examples,
            &test,
            &cat,
            &map,
            &cfg,
            &hp,
            &[Plan::Original],
            2,
            99,
        )
        .unwrap();
        assert_eq!(report.rows.len(), 2);

        // Reproduce run 0 by hand.
        let hp0 = Hyperparams { seed: 99, ..hp };
        let result = train::<f64>(&examples, cfg, &hp0).unwrap();
        let params = result.final_params();
        assert_eq!(
            report.rows[0].recall_at_10,
            Some(recall_at_k(params, &test, 10).unwrap())
        );
        assert_eq!(report.rows[0].mrr, Some(mrr(params, &test).unwrap()));
        assert_eq!(
            report.rows[0].mean_rec_diversity,
            Some(mean_recommendation_diversity(params, &test, &map).unwrap())
        );
    }

    #[test]
    fn suite_is_deterministic_and_covers_all_cells() {
        let (examples, cat) = fixture();
        let test: Vec<SequenceExample> = (0..6).map(|i| ex(vec![1 + i % 4], 1 + i % 4)).collect();
        let map = block_map(4, 2);
        let cfg = ModelConfig::new(4, 3, 2, 4);
        let hp = suite_hyperparams();
        let a = run_experiment_suite::<f64>(
            &examples, &test, &cat, &map, &cfg, &hp, &Plan::ALL, 2, 7,
        )
        .unwrap();
        let b = run_experiment_suite::<f64>(
            &examples, &test, &cat, &map, &cfg, &hp, &Plan::ALL, 2, 7,
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 12);
        assert_eq!(a.summaries.len(), 6);
        let orig = a.summary_for(Plan::Original).unwrap();
        // Zero-baseline diversity leaves the relative change undefined.
        if let Some(v) = orig.diversity_change_vs_original {
            assert!(v.abs() < 1e-12);
        }
        // Paired seeds across plans.
        assert_eq!(a.rows[0].seed, a.rows[2].seed);
    }
}
