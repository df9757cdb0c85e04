//! The pipeline subcommands. Each one validates its upstream artifacts,
//! computes its stage, and writes that stage's report files into the
//! workspace.

use std::fs::File;
use std::io::BufReader;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use recdiv_core::category::{
    categorize_training, categorize_validation, read_category_csv, write_category_csv,
    CategorizedDataset,
};
use recdiv_core::community::{
    community_size_report, community_sweep, degree_filter, louvain, project_items,
    write_sweep_csv, BipartiteGraph, CommunityMap,
};
use recdiv_core::diversity::{bubble_report, write_bubble_csv};
use recdiv_core::influence::{
    cross_category_experiment, exclude_initial, self_vs_random_experiment, write_heatmap_csv,
    write_influence_matrix_csv, CategoryPools, CrossCategoryConfig, SelfVsRandomConfig,
};
use recdiv_core::ingest::{
    filter_dataset, generate_synthetic, interaction_stats, parse_interactions, sample_users,
    Dataset, InteractionRecord, InteractionStats, Split,
};
use recdiv_core::model::{train, write_loss_trace, Hyperparams, ModelConfig};
use recdiv_core::modify::run_experiment_suite;
use recdiv_core::rng::{fnv1a64, stream_rng, stream_seed};
use recdiv_core::Checkpoint64;

use crate::config::PipelineConfig;
use crate::workspace::Workspace;

pub fn cmd_ingest(
    config: &PipelineConfig,
    ws: &Workspace,
    seed: u64,
    synthetic: bool,
) -> anyhow::Result<()> {
    ws.guard_outputs(&[ws.dataset(), ws.ingest_stats()])?;

    let raw: Vec<InteractionRecord> = if synthetic {
        let syn = config
            .ingest
            .synthetic
            .as_ref()
            .context("--synthetic requires an [ingest.synthetic] config section")?;
        generate_synthetic(syn, &mut stream_rng(seed, "ingest-synthetic"))?
    } else {
        let path = config
            .paths
            .raw_csv
            .as_ref()
            .context("config paths.raw_csv is required without --synthetic")?;
        let file = File::open(path)
            .with_context(|| format!("cannot open raw interactions {}", path.display()))?;
        parse_interactions(BufReader::new(file), config.paths.has_header)?
    };

    let before = interaction_stats(&raw);
    let filtered = filter_dataset(
        raw,
        config.ingest.min_item_interactions,
        config.ingest.min_user_interactions,
    );
    let sampled = if config.ingest.n_users > 0 {
        sample_users(
            &filtered,
            config.ingest.n_users,
            &mut stream_rng(seed, "ingest-sample"),
        )?
    } else {
        filtered
    };
    let after = interaction_stats(&sampled);
    if sampled.is_empty() {
        bail!("no records survive filtering; relax the ingest thresholds");
    }

    let dataset = Dataset::build(&sampled, config.ingest.lookback);
    dataset.write_to(&ws.dataset())?;
    write_stats_csv(&before, &after, ws)?;

    println!("statistic                     original        final");
    println!("users                         {:<15} {}", before.n_users, after.n_users);
    println!("items                         {:<15} {}", before.n_items, after.n_items);
    println!(
        "mean interactions per user    {:<15.3} {:.3}",
        before.mean_interactions_per_user, after.mean_interactions_per_user
    );
    println!(
        "mean unique items per user    {:<15.3} {:.3}",
        before.mean_unique_items_per_user, after.mean_unique_items_per_user
    );
    println!(
        "dataset: {} records, {} examples -> {}",
        dataset.records.len(),
        dataset.examples.len(),
        ws.dataset().display()
    );
    Ok(())
}

fn write_stats_csv(
    before: &InteractionStats,
    after: &InteractionStats,
    ws: &Workspace,
) -> anyhow::Result<()> {
    let mut out = String::from("statistic,original,final\n");
    out.push_str(&format!("users,{},{}\n", before.n_users, after.n_users));
    out.push_str(&format!("items,{},{}\n", before.n_items, after.n_items));
    out.push_str(&format!(
        "mean_interactions_per_user,{},{}\n",
        before.mean_interactions_per_user, after.mean_interactions_per_user
    ));
    out.push_str(&format!(
        "mean_unique_items_per_user,{},{}\n",
        before.mean_unique_items_per_user, after.mean_unique_items_per_user
    ));
    std::fs::write(ws.ingest_stats(), out)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct CommunityMeta {
    modularity: f64,
    n_communities: usize,
    threshold: u64,
}

pub fn cmd_communities(config: &PipelineConfig, ws: &Workspace, seed: u64) -> anyhow::Result<()> {
    ws.require(&ws.dataset(), "ingest")?;
    ws.guard_outputs(&[
        ws.community_map(),
        ws.community_meta(),
        ws.community_sweep(),
        ws.community_sizes(),
    ])?;
    let dataset = Dataset::read_from(&ws.dataset())?;

    let selected = config.community.selected_threshold;
    if !config.community.thresholds.contains(&selected) {
        bail!("selected_threshold {selected} is not in the sweep threshold list");
    }

    let sweep_seed = stream_seed(seed, "communities");
    let rows = community_sweep(
        &dataset.records,
        &config.community.thresholds,
        config.community.projection,
        sweep_seed,
    )?;
    write_sweep_csv(&rows, &ws.community_sweep())?;

    println!("min_degree  n_items  modularity  median_size  n_communities");
    for r in &rows {
        println!(
            "{:<11} {:<8} {:<11} {:<12} {}",
            r.min_item_degree,
            r.n_items,
            r.modularity.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
            r.median_community_size
                .map(|v| format!("{v}"))
                .unwrap_or_else(|| "-".into()),
            r.n_communities.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
        );
    }

    // Rebuild the selected partition with the exact stream the sweep used.
    let graph = BipartiteGraph::from_records(&dataset.records);
    let filtered = degree_filter(&graph, selected);
    if filtered.n_items() == 0 {
        bail!("threshold {selected} leaves an empty item graph");
    }
    let projected = project_items(&filtered, config.community.projection);
    let map = louvain(
        &projected,
        stream_seed(sweep_seed, &format!("louvain-{selected}")),
    )?;
    map.write_csv(&ws.community_map())?;
    let meta = CommunityMeta {
        modularity: map.modularity_score,
        n_communities: map.n_communities(),
        threshold: selected,
    };
    std::fs::write(
        ws.community_meta(),
        serde_json::to_string_pretty(&meta)? + "\n",
    )?;

    let mut sizes = String::from("community_id,n_items,weighted_degree\n");
    for (c, n, d) in community_size_report(&map, &projected) {
        sizes.push_str(&format!("{c},{n},{d}\n"));
    }
    std::fs::write(ws.community_sizes(), sizes)?;

    println!(
        "selected threshold {selected}: {} items, {} communities, modularity {:.4}",
        map.len(),
        map.n_communities(),
        map.modularity_score
    );
    Ok(())
}

fn model_config(config: &PipelineConfig, dataset: &Dataset) -> ModelConfig {
    ModelConfig {
        n_items: dataset.n_items(),
        embedding_dim: config.model.embedding_dim,
        hidden_dim: config.model.hidden_dim,
        lookback: dataset.lookback as usize,
        final_state_only: config.model.final_state_only,
    }
}

fn hyperparams(config: &PipelineConfig, seed: u64) -> Hyperparams {
    Hyperparams {
        batch_size: config.model.batch_size,
        epochs: config.model.epochs,
        learning_rate: config.model.learning_rate,
        momentum: config.model.momentum,
        checkpoint_interval: config.model.checkpoint_interval,
        seed,
    }
}

pub fn cmd_train(config: &PipelineConfig, ws: &Workspace, seed: u64) -> anyhow::Result<()> {
    ws.require(&ws.dataset(), "ingest")?;
    let ckpt_dir = ws.checkpoints_dir();
    let existing: Vec<_> = if ckpt_dir.exists() {
        ws.checkpoint_files()?
    } else {
        Vec::new()
    };
    ws.guard_outputs(
        &existing
            .iter()
            .cloned()
            .chain([ws.loss_trace()])
            .collect::<Vec<_>>(),
    )?;
    for stale in &existing {
        std::fs::remove_file(stale)?;
    }
    std::fs::create_dir_all(&ckpt_dir)?;

    let dataset = Dataset::read_from(&ws.dataset())?;
    let train_examples = dataset.examples_in(Split::Train);
    let cfg = model_config(config, &dataset);
    let hp = hyperparams(config, stream_seed(seed, "train"));

    println!(
        "training on {} examples ({} items, embedding {}, hidden {}, lookback {})",
        train_examples.len(),
        cfg.n_items,
        cfg.embedding_dim,
        cfg.hidden_dim,
        cfg.lookback
    );
    let result = train::<f64>(&train_examples, cfg, &hp)?;
    for ck in &result.checkpoints {
        ck.write_to(&ckpt_dir.join(format!("checkpoint_ep{:05}.ckpt", ck.epoch)))?;
    }
    write_loss_trace(&result.loss_trace, &ws.loss_trace())?;

    let (first, last) = (
        result.loss_trace.first().map(|x| x.1).unwrap_or(f64::NAN),
        result.loss_trace.last().map(|x| x.1).unwrap_or(f64::NAN),
    );
    println!(
        "trained {} epochs: loss {first:.4} -> {last:.4}; {} checkpoints in {}",
        hp.epochs,
        result.checkpoints.len(),
        ckpt_dir.display()
    );
    Ok(())
}

fn load_checkpoints(ws: &Workspace) -> anyhow::Result<Vec<Checkpoint64>> {
    ws.require(&ws.checkpoints_dir(), "train")?;
    let files = ws.checkpoint_files()?;
    if files.is_empty() {
        bail!("checkpoints not found: run `recdiv train` first");
    }
    let mut checkpoints = Vec::with_capacity(files.len());
    for f in files {
        checkpoints
            .push(Checkpoint64::read_from(&f).with_context(|| format!("loading {}", f.display()))?);
    }
    checkpoints.sort_by_key(|c| c.epoch);
    Ok(checkpoints)
}

fn load_community_map(ws: &Workspace) -> anyhow::Result<CommunityMap> {
    ws.require(&ws.community_map(), "communities")?;
    ws.require(&ws.community_meta(), "communities")?;
    let meta: CommunityMeta = serde_json::from_str(&std::fs::read_to_string(ws.community_meta())?)
        .context("bad community_map.json")?;
    Ok(CommunityMap::read_csv(&ws.community_map(), meta.modularity)?)
}

pub fn cmd_bubble(config: &PipelineConfig, ws: &Workspace, _seed: u64) -> anyhow::Result<()> {
    ws.require(&ws.dataset(), "ingest")?;
    ws.guard_outputs(&[ws.bubble_report()])?;
    let dataset = Dataset::read_from(&ws.dataset())?;
    let map = load_community_map(ws)?;
    let checkpoints = load_checkpoints(ws)?;
    let params = &checkpoints.last().expect("non-empty").params;

    let validation = dataset.examples_in(Split::Validation);
    let lookbacks: Vec<usize> = config
        .bubble
        .lookbacks
        .iter()
        .copied()
        .filter(|&l| l <= params.config.lookback)
        .collect();
    if lookbacks.is_empty() {
        bail!("no bubble lookbacks fit the model lookback {}", params.config.lookback);
    }
    let rows = bubble_report(params, &validation, &map, &lookbacks)?;
    write_bubble_csv(&rows, &ws.bubble_report())?;

    println!("lookback  frac_less  frac_more  mean_hist_div  mean_rec_div  n");
    for r in &rows {
        println!(
            "{:<9} {:<10.4} {:<10.4} {:<14.4} {:<13.4} {}",
            r.lookback,
            r.frac_less_diverse,
            r.frac_more_diverse,
            r.mean_history_diversity,
            r.mean_rec_diversity,
            r.n_examples
        );
    }
    Ok(())
}

pub fn cmd_influence(config: &PipelineConfig, ws: &Workspace, seed: u64) -> anyhow::Result<()> {
    ws.require(&ws.dataset(), "ingest")?;
    ws.guard_outputs(&[
        ws.categories_train(),
        ws.self_vs_random(),
        ws.influence_matrix(),
        ws.influence_heatmap(),
    ])?;
    let dataset = Dataset::read_from(&ws.dataset())?;
    let map = load_community_map(ws)?;
    let all_checkpoints = load_checkpoints(ws)?;
    let final_params = all_checkpoints.last().expect("non-empty").params.clone();
    let checkpoints = if config.influence.include_initial_checkpoint {
        all_checkpoints
    } else {
        exclude_initial(all_checkpoints)
    };
    if checkpoints.is_empty() {
        bail!("no post-initialization checkpoints available for influence tracing");
    }

    let train_examples = dataset.examples_in(Split::Train);
    let validation = dataset.examples_in(Split::Validation);

    let categorized = categorize_training(&train_examples, &map, config.category.percentile)?;
    write_category_csv(&categorized, &train_examples, &map, &ws.categories_train())?;
    println!(
        "training categories: {} diverse, {} filter, {} breaking, {} other (cuts {:.4} / {:.4})",
        categorized.count(recdiv_core::category::CategoryLabel::Diverse),
        categorized.count(recdiv_core::category::CategoryLabel::FilterBubble),
        categorized.count(recdiv_core::category::CategoryLabel::BreakingBubble),
        categorized.count(recdiv_core::category::CategoryLabel::Other),
        categorized.low_cut,
        categorized.high_cut,
    );

    let val_categories = categorize_validation(
        &final_params,
        &validation,
        &map,
        config.category.percentile,
        config.category.random_pool_size,
        &mut stream_rng(seed, "influence-valcat"),
    )?;
    println!(
        "validation prediction points: {} filter, {} breaking, {} random",
        val_categories.filter.len(),
        val_categories.breaking.len(),
        val_categories.random.len()
    );

    let svr_config = SelfVsRandomConfig {
        subset_size: config.influence.subset_size,
        repetitions: config.influence.self_repetitions,
        batch_size: config.influence.self_batch_size,
    };
    let svr = self_vs_random_experiment(
        &checkpoints,
        &train_examples,
        &svr_config,
        stream_seed(seed, "influence-self"),
    )?;
    for w in &svr.warnings {
        eprintln!("warning: {w}");
    }
    std::fs::write(
        ws.self_vs_random(),
        serde_json::to_string_pretty(&svr)? + "\n",
    )?;
    println!(
        "self influence {:.6} vs random {:.6} (t = {:.3}, p = {:.3e})",
        svr.mean_self, svr.mean_random, svr.t_statistic, svr.p_value
    );

    let pools = CategoryPools::build(&train_examples, &categorized, &val_categories);
    let cross_config = CrossCategoryConfig {
        samples_per_category: config.influence.samples_per_category,
        repetitions: config.influence.cross_repetitions,
        batch_size: config.influence.cross_batch_size,
    };
    let cross = cross_category_experiment(
        &checkpoints,
        &pools,
        &cross_config,
        stream_seed(seed, "influence-cross"),
    )?;
    for w in &cross.warnings {
        eprintln!("warning: {w}");
    }
    write_influence_matrix_csv(&cross, &ws.influence_matrix())?;
    write_heatmap_csv(&cross, &ws.influence_heatmap())?;

    println!("train_category  val_category  mean_influence");
    for r in &cross.results {
        println!(
            "{:<15} {:<13} {:+.6}",
            r.train_category, r.validation_category, r.grand_mean
        );
    }
    Ok(())
}

pub fn cmd_modify(config: &PipelineConfig, ws: &Workspace, seed: u64) -> anyhow::Result<()> {
    ws.require(&ws.dataset(), "ingest")?;
    ws.require(&ws.categories_train(), "influence")?;
    ws.guard_outputs(&[
        ws.modification_report(),
        ws.modification_summary(),
        ws.modification_summary_json(),
    ])?;
    let dataset = Dataset::read_from(&ws.dataset())?;
    let map = load_community_map(ws)?;

    let train_examples = dataset.examples_in(Split::Train);
    let test_examples = dataset.examples_in(Split::Test);
    let (labels, diversities) = read_category_csv(&ws.categories_train())?;
    if labels.len() != train_examples.len() {
        bail!(
            "categories_train.csv has {} rows but the training split has {}; rerun `recdiv influence`",
            labels.len(),
            train_examples.len()
        );
    }
    let categorized =
        CategorizedDataset::from_parts(labels, diversities, config.category.percentile)?;

    let cfg = model_config(config, &dataset);
    let hp = hyperparams(config, 0);
    let plans = config.parsed_plans();
    println!(
        "retraining {} plans x {} runs on {} train / {} test examples",
        plans.len(),
        config.modify.retrains_per_plan,
        train_examples.len(),
        test_examples.len()
    );

    let report = run_experiment_suite::<f64>(
        &train_examples,
        &test_examples,
        &categorized,
        &map,
        &cfg,
        &hp,
        &plans,
        config.modify.retrains_per_plan,
        stream_seed(seed, "modify"),
    )?;
    report.write_csv(&ws.modification_report())?;
    report.write_summary_csv(&ws.modification_summary())?;
    std::fs::write(
        ws.modification_summary_json(),
        serde_json::to_string_pretty(&report.summaries)? + "\n",
    )?;

    println!("plan            recall@10  mrr      diversity  vs_original");
    for s in &report.summaries {
        println!(
            "{:<15} {:<10.3} {:<8.3} {:<10.3} {}",
            s.plan,
            s.mean_recall_at_10,
            s.mean_mrr,
            s.mean_diversity,
            s.diversity_change_vs_original
                .map(|v| format!("{:+.1}%", 100.0 * v))
                .unwrap_or_else(|| "-".into())
        );
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ManifestEntry {
    file: String,
    bytes: u64,
    fnv1a64: String,
}

#[derive(Debug, Serialize)]
struct Manifest {
    artifacts: Vec<ManifestEntry>,
    missing: Vec<String>,
    dataset_schema_version: u32,
    checkpoint_schema_version: u32,
}

pub fn cmd_report(_config: &PipelineConfig, ws: &Workspace) -> anyhow::Result<()> {
    ws.guard_outputs(&[ws.manifest()])?;
    let mut expected: Vec<std::path::PathBuf> = vec![
        ws.dataset(),
        ws.ingest_stats(),
        ws.community_map(),
        ws.community_meta(),
        ws.community_sweep(),
        ws.community_sizes(),
        ws.loss_trace(),
        ws.bubble_report(),
        ws.categories_train(),
        ws.self_vs_random(),
        ws.influence_matrix(),
        ws.influence_heatmap(),
        ws.modification_report(),
        ws.modification_summary(),
        ws.modification_summary_json(),
    ];
    if ws.checkpoints_dir().exists() {
        expected.extend(ws.checkpoint_files()?);
    }

    let mut artifacts = Vec::new();
    let mut missing = Vec::new();
    for path in expected {
        let name = path
            .strip_prefix(&ws.dir)
            .unwrap_or(&path)
            .to_string_lossy()
            .replace('\\', "/");
        if path.exists() {
            let bytes = std::fs::read(&path)?;
            artifacts.push(ManifestEntry {
                file: name,
                bytes: bytes.len() as u64,
                fnv1a64: format!("{:016x}", fnv1a64(&bytes)),
            });
        } else {
            missing.push(name);
        }
    }

    let manifest = Manifest {
        artifacts,
        missing,
        dataset_schema_version: 1,
        checkpoint_schema_version: 1,
    };
    std::fs::write(
        ws.manifest(),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    println!(
        "manifest: {} artifacts, {} missing -> {}",
        manifest.artifacts.len(),
        manifest.missing.len(),
        ws.manifest().display()
    );
    for m in &manifest.missing {
        println!("  missing: {m}");
    }
    Ok(())
}
