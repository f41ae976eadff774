//! The end-to-end experiment pipeline and its config file.
//!
//! A run executes three steps on a dataset: fit a CF model on the
//! binarized training matrix and keep each user's top `l` candidates;
//! fit survival models on time-to-completion and time-to-dropout and rank
//! every candidate by predicted risk; re-order the CF candidates by the
//! survival ranking and keep the top `k`. Metrics (NDCG@k, NDCG-t@k) are
//! reported for the baseline and every re-ranking variant.
//!
//! Configs are key-value text (`key = value`, `#` comments). All
//! randomness derives from the single `seed` through stage-name-keyed
//! sub-seeds, so identical configs produce byte-identical outputs and any
//! stage can be re-run in isolation.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cf::{self, CfConfig, CfKind, FittedRecommender};
use crate::data::{self, DatasetSplit, EventKind, InteractionMatrix};
use crate::error::{Error, Result};
use crate::eval::{self, MetricRow};
use crate::features::{EventDefinition, FeatureSpace};
use crate::rerank::{self, RankDirection, RankedList};
use crate::survival::{self, FittedSurvivalModel, SurvivalConfig, SurvivalKind};
use crate::tuning::{self, SampledParams};

/// Sub-seed for a named stage: FNV-1a over the stage name, mixed with the
/// master seed by splitmix64. Documented so stages can be re-run
/// independently yet reproducibly.
pub fn stage_seed(master: u64, stage: &str) -> u64 {
    let mut hash: u64 = 0xCBF2_9CE4_8422_2325;
    for b in stage.bytes() {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    let mut z = master ^ hash;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Which survival ranking re-orders the CF candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RerankVariant {
    Baseline,
    Dropout,
    Completion,
    DropoutCompletion,
}

impl RerankVariant {
    pub const ALL: [RerankVariant; 4] = [
        RerankVariant::Baseline,
        RerankVariant::Dropout,
        RerankVariant::Completion,
        RerankVariant::DropoutCompletion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RerankVariant::Baseline => "baseline",
            RerankVariant::Dropout => "d",
            RerankVariant::Completion => "c",
            RerankVariant::DropoutCompletion => "dc",
        }
    }

    /// Table-style label.
    pub fn label(self) -> &'static str {
        match self {
            RerankVariant::Baseline => "Baseline",
            RerankVariant::Dropout => "+D",
            RerankVariant::Completion => "+C",
            RerankVariant::DropoutCompletion => "+DC",
        }
    }

    pub fn parse(name: &str) -> Option<RerankVariant> {
        match name.to_ascii_lowercase().as_str() {
            "baseline" => Some(RerankVariant::Baseline),
            "d" | "+d" | "dropout" => Some(RerankVariant::Dropout),
            "c" | "+c" | "completion" => Some(RerankVariant::Completion),
            "dc" | "+dc" | "dropout-completion" => Some(RerankVariant::DropoutCompletion),
            _ => None,
        }
    }
}

/// A model choice: explicit hyperparameters (falling back to per-model
/// defaults) or tuned from the default search space.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSetting {
    Fixed(BTreeMap<String, f64>),
    Tune,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub output: PathBuf,
    pub seed: u64,
    /// Final recommendation list length.
    pub k: usize,
    /// Initial CF candidate list length; defaults to `3 * k`.
    pub l: usize,
    pub cf_kind: CfKind,
    pub cf_setting: ModelSetting,
    pub sa_kind: SurvivalKind,
    pub sa_setting: ModelSetting,
    pub variant: RerankVariant,
    /// NDCG cutoffs; every cutoff must be <= k.
    pub eval_ks: Vec<usize>,
    pub tune_budget: usize,
    pub min_interactions: usize,
    pub min_completions: usize,
}

impl ExperimentConfig {
    pub fn new(dataset: PathBuf, output: PathBuf, seed: u64, k: usize) -> ExperimentConfig {
        let mut eval_ks = vec![3.min(k), k];
        eval_ks.dedup();
        ExperimentConfig {
            dataset,
            output,
            seed,
            k,
            l: 3 * k,
            cf_kind: CfKind::Ease,
            cf_setting: ModelSetting::Fixed(BTreeMap::new()),
            sa_kind: SurvivalKind::XgbCox,
            sa_setting: ModelSetting::Fixed(BTreeMap::new()),
            variant: RerankVariant::DropoutCompletion,
            eval_ks,
            tune_budget: 50,
            min_interactions: 5,
            min_completions: 3,
        }
    }

    /// Parse the key-value config format. Later keys override earlier
    /// ones, which is also how CLI flag overrides are applied.
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let mut pairs = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", idx + 1))
            })?;
            pairs.push((key.trim().to_string(), value.trim().to_string()));
        }
        ExperimentConfig::from_pairs(&pairs)
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<ExperimentConfig> {
        let lookup: BTreeMap<&str, &str> = pairs
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_str()))
            .collect();
        let required = |key: &str| -> Result<&str> {
            lookup
                .get(key)
                .copied()
                .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
        };
        let parse_u64 = |key: &str, v: &str| -> Result<u64> {
            v.parse()
                .map_err(|_| Error::Config(format!("`{key}` must be an integer, got `{v}`")))
        };

        let dataset = PathBuf::from(required("dataset")?);
        let output = PathBuf::from(required("output")?);
        let seed = parse_u64("seed", required("seed")?)?;
        let k = parse_u64("k", lookup.get("k").copied().unwrap_or("5"))? as usize;
        if k < 1 {
            return Err(Error::Config("k must be >= 1".to_string()));
        }
        let mut config = ExperimentConfig::new(dataset, output, seed, k);
        if let Some(v) = lookup.get("l") {
            config.l = parse_u64("l", v)? as usize;
        }
        if config.l < config.k {
            return Err(Error::Config(format!(
                "l ({}) must be >= k ({})",
                config.l, config.k
            )));
        }
        if let Some(v) = lookup.get("cf") {
            config.cf_kind =
                CfKind::parse(v).ok_or_else(|| Error::Config(format!("unknown cf model `{v}`")))?;
        }
        if let Some(v) = lookup.get("sa") {
            config.sa_kind = SurvivalKind::parse(v)
                .ok_or_else(|| Error::Config(format!("unknown sa model `{v}`")))?;
        }
        if let Some(v) = lookup.get("rerank") {
            config.variant = RerankVariant::parse(v)
                .ok_or_else(|| Error::Config(format!("unknown rerank variant `{v}`")))?;
        }
        if let Some(v) = lookup.get("tune.budget") {
            config.tune_budget = parse_u64("tune.budget", v)? as usize;
        }
        if let Some(v) = lookup.get("eval.ks") {
            let mut ks = Vec::new();
            for piece in v.split(',') {
                ks.push(parse_u64("eval.ks", piece.trim())? as usize);
            }
            ks.sort_unstable();
            ks.dedup();
            config.eval_ks = ks;
        }
        if let Some(bad) = config.eval_ks.iter().find(|&&ks| ks > config.k || ks < 1) {
            return Err(Error::Config(format!(
                "eval cutoff {bad} outside 1..=k ({})",
                config.k
            )));
        }
        if let Some(v) = lookup.get("filter.min_interactions") {
            config.min_interactions = parse_u64("filter.min_interactions", v)? as usize;
        }
        if let Some(v) = lookup.get("filter.min_completions") {
            config.min_completions = parse_u64("filter.min_completions", v)? as usize;
        }

        // Model hyperparameters: `cf.tune = true` or `cf.<param> = value`.
        let mut cf_params = BTreeMap::new();
        let mut sa_params = BTreeMap::new();
        let mut cf_tune = false;
        let mut sa_tune = false;
        for (key, value) in pairs {
            if let Some(param) = key.strip_prefix("cf.") {
                if param == "tune" {
                    cf_tune = value == "true";
                } else {
                    let v: f64 = value.parse().map_err(|_| {
                        Error::Config(format!("`{key}` must be numeric, got `{value}`"))
                    })?;
                    cf_params.insert(param.to_string(), v);
                }
            } else if let Some(param) = key.strip_prefix("sa.") {
                if param == "tune" {
                    sa_tune = value == "true";
                } else {
                    let v: f64 = value.parse().map_err(|_| {
                        Error::Config(format!("`{key}` must be numeric, got `{value}`"))
                    })?;
                    sa_params.insert(param.to_string(), v);
                }
            }
        }
        config.cf_setting = if cf_tune {
            ModelSetting::Tune
        } else {
            ModelSetting::Fixed(cf_params)
        };
        config.sa_setting = if sa_tune {
            ModelSetting::Tune
        } else {
            ModelSetting::Fixed(sa_params)
        };
        Ok(config)
    }

    pub fn parse_file(path: &Path) -> Result<ExperimentConfig> {
        ExperimentConfig::parse(&std::fs::read_to_string(path)?)
    }
}

/// Fallback hyperparameters used when a config fixes a model but omits
/// some of its parameters.
pub fn default_params(model: &str) -> BTreeMap<String, f64> {
    let pairs: &[(&str, f64)] = match model {
        "uknn" | "iknn" => &[("n_neighbors", 100.0), ("shrink", 100.0)],
        "svd" => &[("n_factors", 10.0)],
        "nmf" => &[("n_factors", 50.0), ("l1_ratio", 0.5)],
        "wrmf" => &[
            ("n_factors", 40.0),
            ("regularization", 0.01),
            ("epochs", 30.0),
            ("confidence_weight", 40.0),
        ],
        "ease" => &[("l2_norm", 100.0)],
        "slim" => &[("topk", 300.0), ("l1_norm", 1e-3), ("l2_norm", 1e-2)],
        "coxnet" => &[("alpha", 0.01), ("r", 0.5)],
        "rsf" => &[
            ("n_estimators", 50.0),
            ("min_samples_leaf", 10.0),
            ("min_samples_split", 10.0),
            ("max_depth", 6.0),
        ],
        "xgb" => &[
            ("learning_rate", 0.2),
            ("n_estimators", 100.0),
            ("min_samples_leaf", 10.0),
            ("min_samples_split", 10.0),
            ("max_depth", 4.0),
        ],
        _ => &[],
    };
    pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect()
}

/// Merge overrides onto the model's defaults, rejecting unknown names so
/// a misspelled hyperparameter cannot silently fall back to its default.
pub fn merged_params(model: &str, overrides: &BTreeMap<String, f64>) -> Result<SampledParams> {
    let mut params = default_params(model);
    for (k, v) in overrides {
        if !params.contains_key(k) {
            let known: Vec<&str> = params.keys().map(|s| s.as_str()).collect();
            return Err(Error::Config(format!(
                "unknown hyperparameter `{k}` for `{model}` (expected one of: {})",
                known.join(", ")
            )));
        }
        params.insert(k.clone(), *v);
    }
    Ok(SampledParams(params))
}

/// Write the split as three CSVs plus the full normalized dataset (the
/// axes and course metadata needed to reload them exactly).
pub fn write_split(dir: &Path, full: &InteractionMatrix, split: &DatasetSplit) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    data::write_matrix_csv_path(&split.train, &dir.join("train.csv"))?;
    data::write_matrix_csv_path(&split.validation, &dir.join("validation.csv"))?;
    data::write_matrix_csv_path(&split.test, &dir.join("test.csv"))?;
    let file = std::fs::File::create(dir.join("dataset.json"))?;
    serde_json::to_writer(std::io::BufWriter::new(file), full)?;
    Ok(())
}

pub fn read_split(dir: &Path) -> Result<(InteractionMatrix, DatasetSplit)> {
    let file = std::fs::File::open(dir.join("dataset.json"))?;
    let full: InteractionMatrix = serde_json::from_reader(std::io::BufReader::new(file))?;
    let read = |name: &str| -> Result<InteractionMatrix> {
        data::read_matrix_csv(std::fs::File::open(dir.join(name))?, &full)
    };
    Ok((
        full.clone(),
        DatasetSplit {
            train: read("train.csv")?,
            validation: read("validation.csv")?,
            test: read("test.csv")?,
        },
    ))
}

/// Load, filter, and normalize a raw interactions file.
pub fn preprocess(
    path: &Path,
    min_interactions: usize,
    min_completions: usize,
) -> Result<InteractionMatrix> {
    let records = data::load_interactions_path(path).map_err(|e| e.in_stage("load"))?;
    let kept = data::filter_cold_start(&records, min_interactions, min_completions)
        .map_err(|e| e.in_stage("filter"))?;
    data::normalize_times(&kept).map_err(|e| e.in_stage("normalize"))
}

/// Fit the configured CF model, tuning on validation NDCG@k if requested.
pub fn resolve_cf(
    config: &ExperimentConfig,
    split: &DatasetSplit,
) -> Result<(CfConfig, Option<tuning::SearchOutcome>)> {
    let seed = stage_seed(config.seed, "cf-fit");
    match &config.cf_setting {
        ModelSetting::Fixed(overrides) => {
            let params = merged_params(config.cf_kind.name(), overrides)?;
            Ok((tuning::cf_config_from(config.cf_kind, &params, seed)?, None))
        }
        ModelSetting::Tune => {
            let spaces = tuning::default_spaces();
            let space = &spaces[config.cf_kind.name()];
            let e = data::binarize(&split.train);
            let judgments = eval::RelevanceJudgments::binary(&split.validation);
            let k = config.k;
            let kind = config.cf_kind;
            let outcome = tuning::random_search(
                space,
                config.tune_budget,
                stage_seed(config.seed, "cf-tune"),
                |params, trial_seed| {
                    let cf_config = tuning::cf_config_from(kind, params, trial_seed)?;
                    let model = cf_config.fit(&e)?;
                    let scored = cf::score_unobserved(&model, &e)?;
                    let lists = cf::rank_top_l(&scored, k)?;
                    let mut total = 0.0;
                    let mut n = 0usize;
                    for u in 0..e.n_users() {
                        if let Some(s) = eval::ndcg_at_k(&lists[u], judgments.user(u), k) {
                            total += s;
                            n += 1;
                        }
                    }
                    if n == 0 {
                        return Err(Error::Parameter("no evaluable users".to_string()));
                    }
                    Ok(total / n as f64)
                },
            )?;
            let best = tuning::cf_config_from(kind, &outcome.best.params, seed)?;
            Ok((best, Some(outcome)))
        }
    }
}

/// Fit the configured survival model for one event definition, tuning by
/// 5-fold CV concordance if requested.
pub fn resolve_sa(
    config: &ExperimentConfig,
    ds: &crate::features::SurvivalDataset,
    event_definition: EventDefinition,
) -> Result<(SurvivalConfig, Option<tuning::SearchOutcome>)> {
    let stage = format!("sa-fit-{}", event_definition.name());
    let seed = stage_seed(config.seed, &stage);
    match &config.sa_setting {
        ModelSetting::Fixed(overrides) => {
            let params = merged_params(config.sa_kind.name(), overrides)?;
            Ok((
                tuning::survival_config_from(config.sa_kind, &params, seed)?,
                None,
            ))
        }
        ModelSetting::Tune => {
            let spaces = tuning::default_spaces();
            let space = &spaces[config.sa_kind.name()];
            let kind = config.sa_kind;
            let cv_seed = stage_seed(config.seed, &format!("sa-cv-{}", event_definition.name()));
            let outcome = tuning::random_search(
                space,
                config.tune_budget,
                stage_seed(config.seed, &format!("sa-tune-{}", event_definition.name())),
                |params, trial_seed| {
                    let sa_config = tuning::survival_config_from(kind, params, trial_seed)?;
                    Ok(survival::cv_c_index(ds, &sa_config, 5, cv_seed)?.mean)
                },
            )?;
            let best = tuning::survival_config_from(kind, &outcome.best.params, seed)?;
            Ok((best, Some(outcome)))
        }
    }
}

/// Survival rankings over each user's CF candidate set.
pub struct SurvivalRankings {
    pub completion: Vec<RankedList>,
    pub dropout: Vec<RankedList>,
    pub aggregated: Vec<RankedList>,
}

/// Score every unobserved pair with both survival models and rank
/// per user: completion descending, dropout ascending, plus the
/// average-rank aggregation.
pub fn survival_rankings(
    train: &InteractionMatrix,
    space: &FeatureSpace,
    sa_completion: &FittedSurvivalModel,
    sa_dropout: &FittedSurvivalModel,
) -> Result<SurvivalRankings> {
    let results: Vec<(RankedList, RankedList, RankedList)> = (0..train.n_users())
        .into_par_iter()
        .map(|u| -> Result<(RankedList, RankedList, RankedList)> {
            let enrolled: std::collections::HashSet<usize> =
                train.user_cells(u).iter().map(|&(c, _)| c).collect();
            let candidates: Vec<usize> = (0..train.n_courses())
                .filter(|c| !enrolled.contains(c))
                .collect();
            if candidates.is_empty() {
                let empty = RankedList::from_ordered(u, Vec::new());
                return Ok((empty.clone(), empty.clone(), empty));
            }
            let mut x = ndarray::Array2::zeros((candidates.len(), space.n_features()));
            for (row, &c) in candidates.iter().enumerate() {
                for (j, v) in space.pair_features(u, c).into_iter().enumerate() {
                    x[[row, j]] = v;
                }
            }
            let completion_risk = sa_completion.predict_risk(&x)?;
            let dropout_risk = sa_dropout.predict_risk(&x)?;
            let completion_pairs: Vec<(usize, f64)> =
                candidates.iter().copied().zip(completion_risk).collect();
            let dropout_pairs: Vec<(usize, f64)> =
                candidates.iter().copied().zip(dropout_risk).collect();
            let l_c = rerank::rank_by_risk(u, &completion_pairs, RankDirection::DescendingRisk);
            let l_d = rerank::rank_by_risk(u, &dropout_pairs, RankDirection::AscendingRisk);
            let l_cd = rerank::aggregate_ranks(&l_c, &l_d)?;
            Ok((l_c, l_d, l_cd))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut completion = Vec::with_capacity(results.len());
    let mut dropout = Vec::with_capacity(results.len());
    let mut aggregated = Vec::with_capacity(results.len());
    for (c, d, cd) in results {
        completion.push(c);
        dropout.push(d);
        aggregated.push(cd);
    }
    Ok(SurvivalRankings {
        completion,
        dropout,
        aggregated,
    })
}

/// Final per-user lists for one variant.
pub fn apply_variant(
    variant: RerankVariant,
    cf_lists: &[RankedList],
    rankings: Option<&SurvivalRankings>,
    k: usize,
) -> Result<Vec<RankedList>> {
    cf_lists
        .iter()
        .map(|cf_list| {
            if cf_list.is_empty() {
                return Ok(cf_list.clone());
            }
            match variant {
                RerankVariant::Baseline => Ok(cf_list.truncated(k)),
                _ => {
                    let rankings = rankings.ok_or_else(|| {
                        Error::Parameter("survival rankings required for re-ranking".to_string())
                    })?;
                    let u = cf_list.user;
                    let sa_list = match variant {
                        RerankVariant::Dropout => &rankings.dropout[u],
                        RerankVariant::Completion => &rankings.completion[u],
                        RerankVariant::DropoutCompletion => &rankings.aggregated[u],
                        RerankVariant::Baseline => unreachable!(),
                    };
                    rerank::re_rank(cf_list, sa_list, k)
                }
            }
        })
        .collect()
}

/// Export final lists: one row per entry with scores and rank provenance.
pub fn write_recommendations_csv<W: Write>(
    lists: &[RankedList],
    m: &InteractionMatrix,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "user_id",
        "position",
        "item_id",
        "cf_score",
        "dropout_rank",
        "completion_rank",
        "aggregate_rank",
    ])?;
    let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for list in lists {
        for entry in list.entries() {
            w.write_record([
                m.users()[list.user].as_str(),
                &entry.position.to_string(),
                m.courses()[entry.course].as_str(),
                &fmt_opt(entry.provenance.cf_score),
                &entry
                    .provenance
                    .dropout_rank
                    .map(|r| r.to_string())
                    .unwrap_or_default(),
                &entry
                    .provenance
                    .completion_rank
                    .map(|r| r.to_string())
                    .unwrap_or_default(),
                &fmt_opt(entry.provenance.aggregate_rank),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Metrics for every evaluated variant, in a fixed variant order.
pub type VariantMetrics = Vec<(RerankVariant, Vec<MetricRow>)>;

pub fn write_metrics_csv<W: Write>(metrics: &VariantMetrics, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variant", "k", "ndcg", "ndcg_t", "users", "excluded"])?;
    for (variant, rows) in metrics {
        for row in rows {
            w.write_record([
                variant.name(),
                &row.k.to_string(),
                &format!("{}", row.ndcg),
                &format!("{}", row.ndcg_t),
                &row.users.to_string(),
                &row.excluded.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Aligned plain-text table: one block per cutoff, variants as columns,
/// `ndcg` and `ndcg-t` column groups.
pub fn format_metrics_table(metrics: &VariantMetrics) -> String {
    let mut ks: Vec<usize> = metrics
        .iter()
        .flat_map(|(_, rows)| rows.iter().map(|r| r.k))
        .collect();
    ks.sort_unstable();
    ks.dedup();
    let variants: Vec<RerankVariant> = metrics.iter().map(|(v, _)| *v).collect();
    let width = variants
        .iter()
        .flat_map(|v| ["ndcg", "ndcg-t"].map(|g| format!("{g}:{}", v.label()).len()))
        .max()
        .unwrap_or(8)
        + 2;
    let mut out = String::new();
    let cell = |v: f64| format!("{v:.4}");
    out.push_str(&format!("{:<8}", ""));
    for group in ["ndcg", "ndcg-t"] {
        for v in &variants {
            out.push_str(&format!("{:>width$}", format!("{group}:{}", v.label())));
        }
    }
    out.push('\n');
    for &k in &ks {
        out.push_str(&format!("{:<8}", format!("Top {k}")));
        for decayed in [false, true] {
            for (_, rows) in metrics {
                let value = match rows.iter().find(|r| r.k == k) {
                    Some(r) if decayed => cell(r.ndcg_t),
                    Some(r) => cell(r.ndcg),
                    None => "-".to_string(),
                };
                out.push_str(&format!("{value:>width$}"));
            }
        }
        out.push('\n');
    }
    out
}

/// Everything a pipeline run produces.
pub struct PipelineOutcome {
    pub metrics: VariantMetrics,
    pub cf_config: CfConfig,
    pub sa_configs: Option<(SurvivalConfig, SurvivalConfig)>,
    pub final_lists: Vec<RankedList>,
}

/// Run the full three-step experiment described by the config: preprocess
/// and split the dataset, fit (or tune) the CF model and rank `l`
/// candidates per user, fit (or tune) the survival models and rank by
/// risk, re-rank, evaluate, and write every artifact into the output
/// directory.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<PipelineOutcome> {
    if !config.dataset.exists() {
        return Err(Error::Config(format!(
            "dataset `{}` does not exist",
            config.dataset.display()
        )));
    }
    std::fs::create_dir_all(&config.output)?;

    let full = preprocess(
        &config.dataset,
        config.min_interactions,
        config.min_completions,
    )?;
    let split =
        data::split(&full, stage_seed(config.seed, "split")).map_err(|e| e.in_stage("split"))?;
    write_split(&config.output.join("split"), &full, &split).map_err(|e| e.in_stage("split"))?;

    // Step 1: collaborative filtering.
    let e = data::binarize(&split.train);
    let (cf_config, cf_tuning) = resolve_cf(config, &split).map_err(|e| e.in_stage("cf"))?;
    if let Some(outcome) = &cf_tuning {
        let spaces = tuning::default_spaces();
        let file = std::fs::File::create(config.output.join("cf_trials.csv"))?;
        tuning::write_trial_log(&spaces[config.cf_kind.name()], &outcome.trials, file)
            .map_err(|e| e.in_stage("cf"))?;
    }
    let cf_model: FittedRecommender = cf_config.fit(&e).map_err(|e| e.in_stage("cf"))?;
    cf_model
        .save_json(&config.output.join("cf_model.json"))
        .map_err(|e| e.in_stage("cf"))?;
    let scored = cf::score_unobserved(&cf_model, &e).map_err(|e| e.in_stage("cf"))?;
    let cf_lists = cf::rank_top_l(&scored, config.l).map_err(|e| e.in_stage("cf"))?;

    // Step 2: survival analysis (skipped entirely for the baseline).
    let (rankings, sa_configs) = if config.variant == RerankVariant::Baseline {
        (None, None)
    } else {
        let space = FeatureSpace::fit(&split.train).map_err(|e| e.in_stage("features"))?;
        let observed: Vec<(usize, usize)> =
            split.train.iter_cells().map(|(u, c, _)| (u, c)).collect();
        let mut fitted = Vec::with_capacity(2);
        for event_definition in [
            EventDefinition::CompletionIsEvent,
            EventDefinition::DropoutIsEvent,
        ] {
            let ds = space
                .build(&split.train, &observed, event_definition)
                .map_err(|e| e.in_stage("features"))?;
            let (sa_config, sa_tuning) =
                resolve_sa(config, &ds, event_definition).map_err(|e| e.in_stage("sa"))?;
            if let Some(outcome) = &sa_tuning {
                let spaces = tuning::default_spaces();
                let name = format!("sa_{}_trials.csv", event_definition.name());
                let file = std::fs::File::create(config.output.join(name))?;
                tuning::write_trial_log(&spaces[config.sa_kind.name()], &outcome.trials, file)
                    .map_err(|e| e.in_stage("sa"))?;
            }
            let model = sa_config.fit(&ds).map_err(|e| e.in_stage("sa"))?;
            model
                .save_json(
                    &config
                        .output
                        .join(format!("sa_{}_model.json", event_definition.name())),
                )
                .map_err(|e| e.in_stage("sa"))?;
            fitted.push((sa_config, model));
        }
        let (completion_config, completion_model) = fitted.remove(0);
        let (dropout_config, dropout_model) = fitted.remove(0);
        let rankings = survival_rankings(&split.train, &space, &completion_model, &dropout_model)
            .map_err(|e| e.in_stage("risk"))?;
        (Some(rankings), Some((completion_config, dropout_config)))
    };

    // Step 3: re-rank and evaluate. Baseline is always reported; the
    // survival variants are reported whenever the models were fitted.
    let mut evaluated: VariantMetrics = Vec::new();
    let mut final_lists = None;
    for variant in RerankVariant::ALL {
        if variant != RerankVariant::Baseline && rankings.is_none() {
            continue;
        }
        let lists = apply_variant(variant, &cf_lists, rankings.as_ref(), config.k)
            .map_err(|e| e.in_stage("rerank"))?;
        let rows = eval::evaluate_run(&lists, &split, &config.eval_ks)
            .map_err(|e| e.in_stage("evaluate"))?;
        if variant == config.variant {
            let file = std::fs::File::create(
                config
                    .output
                    .join(format!("recommendations_{}.csv", variant.name())),
            )?;
            write_recommendations_csv(&lists, &split.train, file)
                .map_err(|e| e.in_stage("evaluate"))?;
            final_lists = Some(lists);
        }
        evaluated.push((variant, rows));
    }

    let metrics_file = std::fs::File::create(config.output.join("metrics.csv"))?;
    write_metrics_csv(&evaluated, metrics_file).map_err(|e| e.in_stage("evaluate"))?;
    std::fs::write(
        config.output.join("metrics.txt"),
        format_metrics_table(&evaluated),
    )?;

    Ok(PipelineOutcome {
        metrics: evaluated,
        cf_config,
        sa_configs,
        final_lists: final_lists.expect("configured variant evaluated"),
    })
}

/// Synthetic interaction record with its generator internals, for tests.
pub(crate) struct SynthCell {
    pub user: usize,
    pub course: usize,
    /// Engagement signal; read by generator self-checks.
    #[allow(dead_code)]
    pub affinity: f64,
    pub elapsed_days: f64,
    pub event: EventKind,
}

/// Latent-factor synthetic MOOC data.
///
/// One engagement signal per pair (user and course main effects plus a
/// low-rank interaction) drives everything. Enrollment observes it
/// through a single Bernoulli draw; times observe it through competing
/// exponential hazards (completion rate up, dropout rate down in the
/// signal) with mild noise. Binary enrollments are therefore a lossy view
/// of the same signal the time-to-event data carries in higher fidelity,
/// which is exactly the situation survival re-ranking exploits.
pub(crate) fn synth_cells(
    users: usize,
    courses: usize,
    latent_dim: usize,
    seed: u64,
) -> Vec<SynthCell> {
    fn normal(rng: &mut ChaCha8Rng) -> f64 {
        // Box-Muller
        let u1: f64 = rng.random::<f64>().max(1e-12);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factor_scale = 1.0 / (latent_dim as f64).sqrt();
    let user_bias: Vec<f64> = (0..users).map(|_| 0.6 * normal(&mut rng)).collect();
    let course_bias: Vec<f64> = (0..courses).map(|_| 0.6 * normal(&mut rng)).collect();
    let sample_matrix = |rng: &mut ChaCha8Rng, rows: usize| -> Vec<Vec<f64>> {
        (0..rows)
            .map(|_| {
                (0..latent_dim)
                    .map(|_| normal(rng) * factor_scale)
                    .collect()
            })
            .collect()
    };
    let user_factors = sample_matrix(&mut rng, users);
    let course_factors = sample_matrix(&mut rng, courses);

    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    let mut cells = Vec::new();
    for u in 0..users {
        for i in 0..courses {
            let engagement =
                user_bias[u] + course_bias[i] + 0.5 * dot(&user_factors[u], &course_factors[i]);
            let enroll_prob = 1.0 / (1.0 + (-(1.5 * engagement - 1.4)).exp());
            if !rng.random_bool(enroll_prob.clamp(1e-6, 1.0 - 1e-6)) {
                continue;
            }
            let pace = engagement + 0.1 * normal(&mut rng);
            // Centering on the enrolled-population mean pace keeps
            // completions and dropouts roughly balanced, as in real MOOC
            // data.
            let centered = pace - 0.55;
            let u1: f64 = rng.random::<f64>().max(1e-12);
            let u2: f64 = rng.random::<f64>().max(1e-12);
            let t_complete = -u1.ln() / (2.0 * centered).exp();
            let t_dropout = -u2.ln() / (-2.0 * centered).exp();
            let (event, t) = if t_complete <= t_dropout {
                (EventKind::Completed, t_complete)
            } else {
                (EventKind::Dropout, t_dropout)
            };
            let elapsed_days = (t * 20.0).min(90.0);
            cells.push(SynthCell {
                user: u,
                course: i,
                affinity: engagement,
                elapsed_days,
                event,
            });
        }
    }
    cells
}

/// Generate a synthetic interaction file in the standard schema. Output is
/// byte-identical for a fixed seed.
pub fn generate_synthetic(
    users: usize,
    courses: usize,
    latent_dim: usize,
    seed: u64,
) -> Result<String> {
    if users < 2 || courses < 2 || latent_dim < 1 {
        return Err(Error::Parameter(
            "users and courses must be >= 2 and latent_dim >= 1".to_string(),
        ));
    }
    let cells = synth_cells(users, courses, latent_dim, seed);
    let user_width = (users as f64).log10().ceil().max(1.0) as usize;
    let course_width = (courses as f64).log10().ceil().max(1.0) as usize;
    let mut out = String::from("user_id,item_id,elapsed_days,event\n");
    for cell in &cells {
        out.push_str(&format!(
            "u{:0w1$},c{:0w2$},{:.3},{}\n",
            cell.user,
            cell.course,
            cell.elapsed_days,
            cell.event.code(),
            w1 = user_width,
            w2 = course_width,
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_seeds_differ_by_stage_and_master() {
        let a = stage_seed(1, "split");
        let b = stage_seed(1, "cf-fit");
        let c = stage_seed(2, "split");
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, stage_seed(1, "split"));
    }

    #[test]
    fn config_parsing_defaults_and_overrides() {
        let text = "\
# experiment
dataset = data.csv
output = out
seed = 7
k = 5
cf = slim
cf.topk = 120
cf.l1_norm = 0.002
sa = xgb
sa.tune = true
rerank = dc
";
        let config = ExperimentConfig::parse(text).unwrap();
        assert_eq!(config.k, 5);
        assert_eq!(config.l, 15, "l defaults to 3k");
        assert_eq!(config.cf_kind, CfKind::Slim);
        assert_eq!(config.sa_kind, SurvivalKind::XgbCox);
        assert_eq!(config.variant, RerankVariant::DropoutCompletion);
        assert_eq!(config.eval_ks, vec![3, 5]);
        match &config.cf_setting {
            ModelSetting::Fixed(params) => {
                assert_eq!(params["topk"], 120.0);
                assert_eq!(params["l1_norm"], 0.002);
            }
            _ => panic!("cf should be fixed"),
        }
        assert_eq!(config.sa_setting, ModelSetting::Tune);
    }

    #[test]
    fn unknown_hyperparameter_names_are_rejected() {
        let mut overrides = BTreeMap::new();
        overrides.insert("topkk".to_string(), 5.0);
        let err = merged_params("slim", &overrides).unwrap_err();
        assert!(err.to_string().contains("topkk"), "{err}");
        assert!(
            err.to_string().contains("topk"),
            "error names the valid keys"
        );

        // Newly exposed knobs are accepted and flow into the configs.
        let mut wrmf = BTreeMap::new();
        wrmf.insert("confidence_weight".to_string(), 15.0);
        let params = merged_params("wrmf", &wrmf).unwrap();
        match tuning::cf_config_from(CfKind::Wrmf, &params, 1).unwrap() {
            CfConfig::Wrmf {
                confidence_weight, ..
            } => assert_eq!(confidence_weight, 15.0),
            other => panic!("{other:?}"),
        }
        let mut coxnet = BTreeMap::new();
        coxnet.insert("r".to_string(), 0.8);
        let params = merged_params("coxnet", &coxnet).unwrap();
        match tuning::survival_config_from(SurvivalKind::CoxNet, &params, 1).unwrap() {
            SurvivalConfig::CoxNet { r, .. } => assert_eq!(r, 0.8),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn config_rejects_l_below_k() {
        let text = "dataset = d.csv\noutput = o\nseed = 1\nk = 5\nl = 3\n";
        assert!(matches!(
            ExperimentConfig::parse(text),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn config_rejects_oversized_eval_cutoff() {
        let text = "dataset = d.csv\noutput = o\nseed = 1\nk = 3\neval.ks = 3,5\n";
        assert!(ExperimentConfig::parse(text).is_err());
    }

    #[test]
    fn synthetic_file_is_parseable_and_seed_stable() {
        let a = generate_synthetic(30, 12, 4, 9).unwrap();
        let b = generate_synthetic(30, 12, 4, 9).unwrap();
        assert_eq!(a, b, "fixed seed must be byte-identical");
        let records = data::load_interactions(a.as_bytes()).unwrap();
        assert!(!records.is_empty());
        let c = generate_synthetic(30, 12, 4, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synthetic_affinity_correlates_with_fast_completion() {
        let cells = synth_cells(200, 40, 5, 3);
        let completed: Vec<&SynthCell> = cells
            .iter()
            .filter(|c| c.event == EventKind::Completed)
            .collect();
        assert!(completed.len() > 200);
        // Spearman rank correlation between affinity and completion time.
        let rank = |values: &[f64]| -> Vec<f64> {
            let mut idx: Vec<usize> = (0..values.len()).collect();
            idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
            let mut r = vec![0.0; values.len()];
            for (pos, &i) in idx.iter().enumerate() {
                r[i] = pos as f64;
            }
            r
        };
        let affinities: Vec<f64> = completed.iter().map(|c| c.affinity).collect();
        let times: Vec<f64> = completed.iter().map(|c| c.elapsed_days).collect();
        let ra = rank(&affinities);
        let rt = rank(&times);
        let n = ra.len() as f64;
        let mean = (n - 1.0) / 2.0;
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vt = 0.0;
        for i in 0..ra.len() {
            cov += (ra[i] - mean) * (rt[i] - mean);
            va += (ra[i] - mean) * (ra[i] - mean);
            vt += (rt[i] - mean) * (rt[i] - mean);
        }
        let rho = cov / (va.sqrt() * vt.sqrt());
        assert!(rho < -0.1, "expected negative rank correlation, got {rho}");

        // Permutation check: the observed correlation should be extreme
        // against a shuffled null.
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut more_extreme = 0;
        for _ in 0..200 {
            let mut shuffled = rt.clone();
            shuffled.shuffle(&mut rng);
            let mut cov_p = 0.0;
            for i in 0..ra.len() {
                cov_p += (ra[i] - mean) * (shuffled[i] - mean);
            }
            let rho_p = cov_p / (va.sqrt() * vt.sqrt());
            if rho_p <= rho {
                more_extreme += 1;
            }
        }
        assert!(
            more_extreme <= 2,
            "permutation p too high: {more_extreme}/200"
        );
    }

    #[test]
    fn metrics_table_is_aligned() {
        let metrics: VariantMetrics = vec![
            (
                RerankVariant::Baseline,
                vec![MetricRow {
                    k: 3,
                    ndcg: 0.25,
                    ndcg_t: 0.24,
                    users: 10,
                    excluded: 0,
                }],
            ),
            (
                RerankVariant::DropoutCompletion,
                vec![MetricRow {
                    k: 3,
                    ndcg: 0.44,
                    ndcg_t: 0.43,
                    users: 10,
                    excluded: 0,
                }],
            ),
        ];
        let table = format_metrics_table(&metrics);
        assert!(table.contains("ndcg:Baseline"));
        assert!(table.contains("ndcg-t:+DC"));
        assert!(table.contains("Top 3"));
        assert!(table.contains("0.4400"));
    }
}
