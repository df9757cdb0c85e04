//! Batched training-data influence over saved checkpoints, plus the
//! self-versus-random and cross-category experiments with Welch t-test
//! significance analysis.
//!
//! The influence of batch z' on batch z at one checkpoint is the
//! learning-rate-weighted inner product of the two mean-loss gradients,
//! scaled by 1/b; scores are averaged across checkpoints.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::category::{CategorizedDataset, CategoryLabel, ValidationCategories};
use crate::error::{Error, Result};
use crate::ingest::SequenceExample;
use crate::model::{backward, pad_examples, Checkpoint};
use crate::rng::stream_rng;
use crate::scalar::Scalar;
use crate::stats::{mean, welch_t_test, TTestResult};

/// Gradient of the mean cross-entropy loss over `batch` with respect to
/// every parameter, flattened in canonical tensor order.
pub fn batch_gradient<S: Scalar>(
    checkpoint: &Checkpoint<S>,
    batch: &[SequenceExample],
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("gradient batch is empty".into()));
    }
    let refs: Vec<&SequenceExample> = batch.iter().collect();
    let (padded, targets) = pad_examples(&refs, checkpoint.params.config.lookback);
    let (grads, _) = backward(&checkpoint.params, &padded.view(), &targets)?;
    Ok(grads.flatten())
}

/// How per-checkpoint scores aggregate into one influence value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointReduction {
    Mean,
    Sum,
}

/// The scalar reduction behind the batched influence score: combine
/// per-checkpoint gradient inner products `dots` with their learning rates
/// as eta_i * dot_i / b, then reduce across checkpoints.
pub fn combine_influence(
    etas: &[f64],
    dots: &[f64],
    batch_size: usize,
    reduction: CheckpointReduction,
) -> f64 {
    assert_eq!(etas.len(), dots.len(), "one learning rate per checkpoint");
    let total: f64 = etas
        .iter()
        .zip(dots)
        .map(|(&eta, &dot)| eta * dot / batch_size as f64)
        .sum();
    match reduction {
        CheckpointReduction::Mean => total / etas.len() as f64,
        CheckpointReduction::Sum => total,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Batched influence of `zprime_batch` on `z_batch`, averaged across the
/// given checkpoints. Both batches must share one batch size.
pub fn tracin_batched<S: Scalar>(
    checkpoints: &[Checkpoint<S>],
    z_batch: &[SequenceExample],
    zprime_batch: &[SequenceExample],
) -> Result<f64> {
    tracin_batched_reduced(checkpoints, z_batch, zprime_batch, CheckpointReduction::Mean)
}

pub fn tracin_batched_reduced<S: Scalar>(
    checkpoints: &[Checkpoint<S>],
    z_batch: &[SequenceExample],
    zprime_batch: &[SequenceExample],
    reduction: CheckpointReduction,
) -> Result<f64> {
    if checkpoints.is_empty() {
        return Err(Error::EmptyInput("influence needs at least one checkpoint".into()));
    }
    if z_batch.is_empty() || zprime_batch.is_empty() {
        return Err(Error::EmptyInput("influence batches must be non-empty".into()));
    }
    if z_batch.len() != zprime_batch.len() {
        return Err(Error::InvalidArgument(format!(
            "batch sizes differ: {} vs {}",
            z_batch.len(),
            zprime_batch.len()
        )));
    }
    let n_params = checkpoints[0].params.n_params();
    if checkpoints.iter().any(|c| c.params.n_params() != n_params) {
        return Err(Error::InvalidArgument(
            "checkpoints disagree on parameter count".into(),
        ));
    }

    let self_influence = std::ptr::eq(z_batch, zprime_batch);
    let mut etas = Vec::with_capacity(checkpoints.len());
    let mut dots = Vec::with_capacity(checkpoints.len());
    for ck in checkpoints {
        let g = batch_gradient(ck, z_batch)?;
        let d = if self_influence {
            dot(&g, &g)
        } else {
            let gp = batch_gradient(ck, zprime_batch)?;
            dot(&g, &gp)
        };
        etas.push(ck.learning_rate);
        dots.push(d);
    }
    Ok(combine_influence(&etas, &dots, z_batch.len(), reduction))
}

/// Drop the epoch-0 (initialization) checkpoint, which predates any
/// training signal.
pub fn exclude_initial<S: Scalar>(checkpoints: Vec<Checkpoint<S>>) -> Vec<Checkpoint<S>> {
    checkpoints.into_iter().filter(|c| c.epoch > 0).collect()
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SelfVsRandomConfig {
    pub subset_size: usize,
    pub repetitions: usize,
    pub batch_size: usize,
}

impl Default for SelfVsRandomConfig {
    fn default() -> Self {
        SelfVsRandomConfig {
            subset_size: 3000,
            repetitions: 20,
            batch_size: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SelfVsRandomResult {
    pub mean_self: f64,
    pub mean_random: f64,
    pub t_statistic: f64,
    pub degrees_of_freedom: f64,
    pub p_value: f64,
    pub self_series: Vec<f64>,
    pub random_series: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Per repetition: sample a subset, measure the mean influence of its
/// batches on themselves, and against independently sampled disjoint
/// batches as the control; then Welch-test the two repetition series.
pub fn self_vs_random_experiment<S: Scalar>(
    checkpoints: &[Checkpoint<S>],
    train_examples: &[SequenceExample],
    config: &SelfVsRandomConfig,
    seed: u64,
) -> Result<SelfVsRandomResult> {
    if config.repetitions < 2 {
        return Err(Error::InvalidArgument("need at least 2 repetitions".into()));
    }
    if train_examples.is_empty() {
        return Err(Error::EmptyInput("training set is empty".into()));
    }
    let mut warnings = Vec::new();
    let subset_size = if config.subset_size > train_examples.len() {
        warnings.push(format!(
            "subset_size {} clipped to training population {}",
            config.subset_size,
            train_examples.len()
        ));
        train_examples.len()
    } else {
        config.subset_size
    };
    let batch_size = config.batch_size.min(subset_size).max(1);

    let all_indices: Vec<usize> = (0..train_examples.len()).collect();
    let mut self_series = Vec::with_capacity(config.repetitions);
    let mut random_series = Vec::with_capacity(config.repetitions);

    for rep in 0..config.repetitions {
        let mut rng = stream_rng(seed, &format!("self-vs-random-rep{rep}"));
        let subset: Vec<usize> = all_indices
            .choose_multiple(&mut rng, subset_size)
            .copied()
            .collect();
        let in_subset: std::collections::HashSet<usize> = subset.iter().copied().collect();
        let complement: Vec<usize> = all_indices
            .iter()
            .copied()
            .filter(|i| !in_subset.contains(i))
            .collect();

        let mut self_scores = Vec::new();
        let mut random_scores = Vec::new();
        for chunk in subset.chunks(batch_size) {
            let batch: Vec<SequenceExample> =
                chunk.iter().map(|&i| train_examples[i].clone()).collect();
            self_scores.push(tracin_batched(checkpoints, &batch, &batch)?);

            // Control batch disjoint from the subset when the population
            // allows, otherwise drawn from the full training set.
            let pool = if complement.len() >= chunk.len() {
                &complement
            } else {
                if rep == 0 && random_scores.is_empty() {
                    warnings.push(
                        "population too small for disjoint control batches; sampling from all of train"
                            .into(),
                    );
                }
                &all_indices
            };
            let control: Vec<SequenceExample> = pool
                .choose_multiple(&mut rng, chunk.len())
                .map(|&i| train_examples[i].clone())
                .collect();
            random_scores.push(tracin_batched(checkpoints, &batch, &control)?);
        }
        self_series.push(mean(&self_scores));
        random_series.push(mean(&random_scores));
    }

    let t = welch_t_test(&self_series, &random_series)?;
    Ok(SelfVsRandomResult {
        mean_self: mean(&self_series),
        mean_random: mean(&random_series),
        t_statistic: t.t_statistic,
        degrees_of_freedom: t.degrees_of_freedom,
        p_value: t.p_value,
        self_series,
        random_series,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TrainCategory {
    Random,
    Diverse,
    Filter,
    Breaking,
}

impl TrainCategory {
    pub const ALL: [TrainCategory; 4] = [
        TrainCategory::Random,
        TrainCategory::Diverse,
        TrainCategory::Filter,
        TrainCategory::Breaking,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TrainCategory::Random => "random",
            TrainCategory::Diverse => "diverse",
            TrainCategory::Filter => "filter",
            TrainCategory::Breaking => "breaking",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ValidationCategory {
    Random,
    Breaking,
    Filter,
}

impl ValidationCategory {
    pub const ALL: [ValidationCategory; 3] = [
        ValidationCategory::Random,
        ValidationCategory::Breaking,
        ValidationCategory::Filter,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ValidationCategory::Random => "random",
            ValidationCategory::Breaking => "breaking",
            ValidationCategory::Filter => "filter",
        }
    }
}

/// Sample pools for the cross-category experiment, one per category on
/// each side.
#[derive(Debug, Clone)]
pub struct CategoryPools {
    pub train: Vec<(TrainCategory, Vec<SequenceExample>)>,
    pub validation: Vec<(ValidationCategory, Vec<SequenceExample>)>,
}

impl CategoryPools {
    /// Assemble pools from the categorized training set and the
    /// categorized validation predictions. The random training pool is
    /// the whole training set.
    pub fn build(
        train_examples: &[SequenceExample],
        categorized: &CategorizedDataset,
        validation: &ValidationCategories,
    ) -> Self {
        let pick = |label: CategoryLabel| -> Vec<SequenceExample> {
            categorized
                .indices_of(label)
                .into_iter()
                .map(|i| train_examples[i].clone())
                .collect()
        };
        CategoryPools {
            train: vec![
                (TrainCategory::Random, train_examples.to_vec()),
                (TrainCategory::Diverse, pick(CategoryLabel::Diverse)),
                (TrainCategory::Filter, pick(CategoryLabel::FilterBubble)),
                (TrainCategory::Breaking, pick(CategoryLabel::BreakingBubble)),
            ],
            validation: vec![
                (ValidationCategory::Random, validation.random.clone()),
                (ValidationCategory::Breaking, validation.breaking.clone()),
                (ValidationCategory::Filter, validation.filter.clone()),
            ],
        }
    }

    fn validate_non_empty(&self) -> Result<()> {
        for (cat, pool) in &self.train {
            if pool.is_empty() {
                return Err(Error::EmptyCategory(format!("train {}", cat.as_str())));
            }
        }
        for (cat, pool) in &self.validation {
            if pool.is_empty() {
                return Err(Error::EmptyCategory(format!("validation {}", cat.as_str())));
            }
        }
        Ok(())
    }

    fn min_pool(&self) -> usize {
        self.train
            .iter()
            .map(|(_, p)| p.len())
            .chain(self.validation.iter().map(|(_, p)| p.len()))
            .min()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CrossCategoryConfig {
    pub samples_per_category: usize,
    pub repetitions: usize,
    pub batch_size: usize,
}

impl Default for CrossCategoryConfig {
    fn default() -> Self {
        CrossCategoryConfig {
            samples_per_category: 100,
            repetitions: 25,
            batch_size: 4096,
        }
    }
}

/// Influence of one training category on one validation category.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct InfluenceResult {
    pub train_category: String,
    pub validation_category: String,
    pub per_repetition_means: Vec<f64>,
    pub grand_mean: f64,
    pub n_repetitions: usize,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CrossCategoryResult {
    /// 12 combinations in (train category, validation category) order.
    pub results: Vec<InfluenceResult>,
    /// Pairwise Welch p-values between the 12 repetition series; symmetric
    /// with unit diagonal, indexed like `results`.
    pub p_matrix: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

impl CrossCategoryResult {
    pub fn cell(&self, train: TrainCategory, val: ValidationCategory) -> &InfluenceResult {
        self.results
            .iter()
            .find(|r| {
                r.train_category == train.as_str() && r.validation_category == val.as_str()
            })
            .expect("all 12 combinations present")
    }

    pub fn combo_names(&self) -> Vec<String> {
        self.results
            .iter()
            .map(|r| format!("{}->{}", r.train_category, r.validation_category))
            .collect()
    }
}

/// For every (train category, validation category) pair: per repetition,
/// sample `samples_per_category` points from each side and measure the
/// batched influence; afterwards Welch-test all 12 repetition series
/// against each other.
pub fn cross_category_experiment<S: Scalar>(
    checkpoints: &[Checkpoint<S>],
    pools: &CategoryPools,
    config: &CrossCategoryConfig,
    seed: u64,
) -> Result<CrossCategoryResult> {
    if config.repetitions < 2 {
        return Err(Error::InvalidArgument("need at least 2 repetitions".into()));
    }
    pools.validate_non_empty()?;

    let mut warnings = Vec::new();
    let mut samples = config.samples_per_category;
    let min_pool = pools.min_pool();
    if samples > min_pool {
        warnings.push(format!(
            "samples_per_category {samples} clipped to smallest category pool {min_pool}"
        ));
        samples = min_pool;
    }
    let mut batch_size = config.batch_size;
    if batch_size > samples {
        warnings.push(format!(
            "batch_size {batch_size} clipped to {samples} available samples"
        ));
        batch_size = samples;
    }

    let n_combos = TrainCategory::ALL.len() * ValidationCategory::ALL.len();
    let mut series: Vec<Vec<f64>> = vec![Vec::with_capacity(config.repetitions); n_combos];

    for rep in 0..config.repetitions {
        let mut rng = stream_rng(seed, &format!("cross-category-rep{rep}"));
        let draw = |pool: &[SequenceExample], rng: &mut rand_chacha::ChaCha8Rng| {
            pool.choose_multiple(rng, samples).cloned().collect::<Vec<_>>()
        };
        // Fixed draw order keeps the rng stream stable.
        let train_samples: Vec<Vec<SequenceExample>> = pools
            .train
            .iter()
            .map(|(_, pool)| draw(pool, &mut rng))
            .collect();
        let val_samples: Vec<Vec<SequenceExample>> = pools
            .validation
            .iter()
            .map(|(_, pool)| draw(pool, &mut rng))
            .collect();

        // One gradient per (checkpoint, category batch chunk), reused
        // across the 12 combinations.
        let mut etas = Vec::with_capacity(checkpoints.len());
        let mut combo_dots: Vec<Vec<Vec<f64>>> =
            vec![Vec::with_capacity(checkpoints.len()); n_combos];
        for ck in checkpoints {
            etas.push(ck.learning_rate);
            let grads_of = |sample: &Vec<SequenceExample>| -> Result<Vec<Vec<f64>>> {
                sample
                    .chunks(batch_size)
                    .map(|chunk| batch_gradient(ck, chunk))
                    .collect()
            };
            let train_grads: Vec<Vec<Vec<f64>>> =
                train_samples.iter().map(grads_of).collect::<Result<_>>()?;
            let val_grads: Vec<Vec<Vec<f64>>> =
                val_samples.iter().map(grads_of).collect::<Result<_>>()?;

            for (ti, tg) in train_grads.iter().enumerate() {
                for (vi, vg) in val_grads.iter().enumerate() {
                    let dots: Vec<f64> =
                        tg.iter().zip(vg).map(|(a, b)| dot(a, b)).collect();
                    combo_dots[ti * ValidationCategory::ALL.len() + vi].push(dots);
                }
            }
        }

        // Aligned chunks share a size, so average the per-chunk influences.
        for (combo, per_ck_dots) in combo_dots.iter().enumerate() {
            let n_chunks = per_ck_dots[0].len();
            let mut score = 0.0;
            for chunk_idx in 0..n_chunks {
                let chunk_len = train_samples[combo / 3].chunks(batch_size).nth(chunk_idx).unwrap().len();
                let dots: Vec<f64> = per_ck_dots.iter().map(|d| d[chunk_idx]).collect();
                score += combine_influence(&etas, &dots, chunk_len, CheckpointReduction::Mean);
            }
            series[combo].push(score / n_chunks as f64);
        }
    }

    let mut results = Vec::with_capacity(n_combos);
    for (ti, tc) in TrainCategory::ALL.iter().enumerate() {
        for (vi, vc) in ValidationCategory::ALL.iter().enumerate() {
            let s = &series[ti * ValidationCategory::ALL.len() + vi];
            results.push(InfluenceResult {
                train_category: tc.as_str().to_string(),
                validation_category: vc.as_str().to_string(),
                per_repetition_means: s.clone(),
                grand_mean: mean(s),
                n_repetitions: s.len(),
            });
        }
    }

    let mut p_matrix = vec![vec![1.0; n_combos]; n_combos];
    for a in 0..n_combos {
        for b in a + 1..n_combos {
            let t = welch_t_test(&series[a], &series[b])?;
            p_matrix[a][b] = t.p_value;
            p_matrix[b][a] = t.p_value;
        }
    }

    Ok(CrossCategoryResult {
        results,
        p_matrix,
        warnings,
    })
}

/// Welch test of one cross-category cell against another, for directional
/// claims about specific combinations.
pub fn compare_cells(result: &CrossCategoryResult, a: (TrainCategory, ValidationCategory), b: (TrainCategory, ValidationCategory)) -> Result<TTestResult> {
    welch_t_test(
        &result.cell(a.0, a.1).per_repetition_means,
        &result.cell(b.0, b.1).per_repetition_means,
    )
}

pub fn write_influence_matrix_csv(result: &CrossCategoryResult, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "train_category,val_category,rep_index,mean_influence")?;
    for r in &result.results {
        for (rep, v) in r.per_repetition_means.iter().enumerate() {
            writeln!(f, "{},{},{rep},{v}", r.train_category, r.validation_category)?;
        }
    }
    Ok(())
}

pub fn write_heatmap_csv(result: &CrossCategoryResult, path: &Path) -> Result<()> {
    let names = result.combo_names();
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "combo_a,combo_b,p_value")?;
    for (i, a) in names.iter().enumerate() {
        for (j, b) in names.iter().enumerate() {
            writeln!(f, "{a},{b},{}", result.p_matrix[i][j])?;
        }
    }
    Ok(())
}
