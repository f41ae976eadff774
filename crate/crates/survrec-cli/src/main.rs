//! `survrec`: batch experiment runner for survival-aware course
//! recommendation.
//!
//! The `run` subcommand executes the whole pipeline from a config file;
//! the other subcommands expose the individual stages so intermediate
//! artifacts can be produced, inspected, and reused.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use survrec::cf::{self, CfKind};
use survrec::data;
use survrec::error::Error;
use survrec::eval;
use survrec::features::{EventDefinition, FeatureSpace};
use survrec::pipeline::{self, ExperimentConfig, RerankVariant};
use survrec::rerank::{Provenance, RankedList};
use survrec::survival::{self, SurvivalKind};
use survrec::tuning;

#[derive(Parser)]
#[command(
    name = "survrec",
    version,
    about = "Course recommendations re-ranked by time-to-event risk"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, cold-start-filter, and normalize a raw interactions file.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        /// Output CSV (input schema plus a normalized_time column).
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 5)]
        min_interactions: usize,
        #[arg(long, default_value_t = 3)]
        min_completions: usize,
    },
    /// Preprocess and split into train/validation/test files.
    Split {
        #[arg(long)]
        input: PathBuf,
        /// Directory for train.csv, validation.csv, test.csv, dataset.json.
        #[arg(long)]
        outdir: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        min_interactions: usize,
        #[arg(long, default_value_t = 3)]
        min_completions: usize,
    },
    /// Fit a collaborative-filtering model on a split's training matrix.
    FitCf {
        #[arg(long)]
        split: PathBuf,
        /// One of uknn, iknn, svd, nmf, wrmf, ease, slim.
        #[arg(long)]
        model: String,
        /// Hyperparameter overrides, repeatable: --param l2_norm=100
        #[arg(long = "param", value_parser = parse_key_value)]
        params: Vec<(String, f64)>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a survival model on a split's training interactions.
    FitSa {
        #[arg(long)]
        split: PathBuf,
        /// One of coxnet, rsf, xgb.
        #[arg(long)]
        model: String,
        /// Event definition: completion or dropout.
        #[arg(long)]
        event: String,
        #[arg(long = "param", value_parser = parse_key_value)]
        params: Vec<(String, f64)>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also export the training feature matrix for inspection.
        #[arg(long)]
        export_features: Option<PathBuf>,
    },
    /// Produce final top-k recommendation lists from fitted models.
    Recommend {
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        cf_model: PathBuf,
        /// Required for any variant other than baseline.
        #[arg(long)]
        sa_completion: Option<PathBuf>,
        #[arg(long)]
        sa_dropout: Option<PathBuf>,
        /// baseline, d, c, or dc.
        #[arg(long, default_value = "baseline")]
        variant: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// CF candidate pool size; defaults to 3k.
        #[arg(long)]
        l: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score exported recommendation lists against a split's test cells.
    Evaluate {
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        recommendations: PathBuf,
        /// Comma-separated cutoffs.
        #[arg(long, default_value = "3,5")]
        ks: String,
        /// Metrics CSV destination (a readable table goes to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random-search hyperparameters for one model.
    Tune {
        #[arg(long)]
        split: PathBuf,
        /// CF kinds tune on validation NDCG@k; survival kinds on 5-fold
        /// cross-validated C-index.
        #[arg(long)]
        model: String,
        /// Event definition for survival models.
        #[arg(long, default_value = "dropout")]
        event: String,
        #[arg(long, default_value_t = 50)]
        budget: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Trial log CSV.
        #[arg(long)]
        trials_out: Option<PathBuf>,
        /// Best configuration as a pipeline-consumable config fragment.
        #[arg(long)]
        config_out: Option<PathBuf>,
        /// Per-fold CV report for the winning survival configuration.
        #[arg(long)]
        cv_report: Option<PathBuf>,
    },
    /// Run the full three-step pipeline from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Config overrides, repeatable: --set seed=9 --set rerank=dc
        #[arg(long = "set", value_parser = parse_override)]
        overrides: Vec<(String, String)>,
    },
    /// Generate a synthetic interaction file in the standard schema.
    Synth {
        #[arg(long, default_value_t = 500)]
        users: usize,
        #[arg(long, default_value_t = 60)]
        courses: usize,
        #[arg(long, default_value_t = 5)]
        latent_dim: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_key_value(s: &str) -> Result<(String, f64), String> {
    let (key, value) = s
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    let value: f64 = value
        .parse()
        .map_err(|_| format!("`{value}` is not a number"))?;
    Ok((key.trim().to_string(), value))
}

fn parse_override(s: &str) -> Result<(String, String), String> {
    let (key, value) = s
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    Ok((key.trim().to_string(), value.trim().to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> survrec::Result<()> {
    match command {
        Command::Preprocess {
            input,
            output,
            min_interactions,
            min_completions,
        } => {
            let m = pipeline::preprocess(&input, min_interactions, min_completions)?;
            data::write_matrix_csv_path(&m, &output)?;
            println!(
                "{} users, {} courses, {} interactions, sparsity {:.4}",
                m.n_users(),
                m.n_courses(),
                m.n_cells(),
                m.sparsity()
            );
            Ok(())
        }
        Command::Split {
            input,
            outdir,
            seed,
            min_interactions,
            min_completions,
        } => {
            let m = pipeline::preprocess(&input, min_interactions, min_completions)?;
            let split = data::split(&m, seed)?;
            pipeline::write_split(&outdir, &m, &split)?;
            println!(
                "split written to {} (train {} / validation {} / test {})",
                outdir.display(),
                split.train.n_cells(),
                split.validation.n_cells(),
                split.test.n_cells()
            );
            Ok(())
        }
        Command::FitCf {
            split,
            model,
            params,
            seed,
            out,
        } => {
            let kind = CfKind::parse(&model)
                .ok_or_else(|| Error::Config(format!("unknown cf model `{model}`")))?;
            let (_, ds) = pipeline::read_split(&split)?;
            let e = data::binarize(&ds.train);
            let merged = merge_params(kind.name(), &params)?;
            let config = tuning::cf_config_from(kind, &merged, seed)?;
            let fitted = config.fit(&e)?;
            fitted.save_json(&out)?;
            println!("fitted {} -> {}", kind.name(), out.display());
            Ok(())
        }
        Command::FitSa {
            split,
            model,
            event,
            params,
            seed,
            out,
            export_features,
        } => {
            let kind = SurvivalKind::parse(&model)
                .ok_or_else(|| Error::Config(format!("unknown sa model `{model}`")))?;
            let event_definition = parse_event(&event)?;
            let (_, ds) = pipeline::read_split(&split)?;
            let space = FeatureSpace::fit(&ds.train)?;
            let observed: Vec<(usize, usize)> =
                ds.train.iter_cells().map(|(u, c, _)| (u, c)).collect();
            let dataset = space.build(&ds.train, &observed, event_definition)?;
            if let Some(path) = export_features {
                let file = std::fs::File::create(&path)?;
                dataset.export_csv(&ds.train, file)?;
            }
            let merged = merge_params(kind.name(), &params)?;
            let config = tuning::survival_config_from(kind, &merged, seed)?;
            let fitted = config.fit(&dataset)?;
            if !fitted.converged() {
                eprintln!("warning: fit did not converge within the iteration cap");
            }
            fitted.save_json(&out)?;
            println!(
                "fitted {} ({}) -> {}",
                kind.name(),
                event_definition.name(),
                out.display()
            );
            Ok(())
        }
        Command::Recommend {
            split,
            cf_model,
            sa_completion,
            sa_dropout,
            variant,
            k,
            l,
            out,
        } => {
            let variant = RerankVariant::parse(&variant)
                .ok_or_else(|| Error::Config(format!("unknown variant `{variant}`")))?;
            let l = l.unwrap_or(3 * k);
            if l < k {
                return Err(Error::Config(format!("l ({l}) must be >= k ({k})")));
            }
            let (_, ds) = pipeline::read_split(&split)?;
            let e = data::binarize(&ds.train);
            let cf_fitted = cf::FittedRecommender::load_json(&cf_model)?;
            let scored = cf::score_unobserved(&cf_fitted, &e)?;
            let cf_lists = cf::rank_top_l(&scored, l)?;
            let rankings = if variant == RerankVariant::Baseline {
                None
            } else {
                let (Some(c_path), Some(d_path)) = (sa_completion, sa_dropout) else {
                    return Err(Error::Config(
                        "--sa-completion and --sa-dropout are required for survival re-ranking"
                            .to_string(),
                    ));
                };
                let sa_c = survival::FittedSurvivalModel::load_json(&c_path)?;
                let sa_d = survival::FittedSurvivalModel::load_json(&d_path)?;
                let space = FeatureSpace::fit(&ds.train)?;
                Some(pipeline::survival_rankings(
                    &ds.train, &space, &sa_c, &sa_d,
                )?)
            };
            let lists = pipeline::apply_variant(variant, &cf_lists, rankings.as_ref(), k)?;
            let file = std::fs::File::create(&out)?;
            pipeline::write_recommendations_csv(&lists, &ds.train, file)?;
            println!("wrote {} lists -> {}", lists.len(), out.display());
            Ok(())
        }
        Command::Evaluate {
            split,
            recommendations,
            ks,
            out,
        } => {
            let (full, ds) = pipeline::read_split(&split)?;
            let lists = read_recommendations(&recommendations, &full)?;
            let ks: Vec<usize> = ks
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad cutoff `{s}`")))
                })
                .collect::<survrec::Result<_>>()?;
            let rows = eval::evaluate_run(&lists, &ds, &ks)?;
            for row in &rows {
                println!(
                    "k={}: ndcg {:.4}, ndcg-t {:.4} ({} users, {} excluded)",
                    row.k, row.ndcg, row.ndcg_t, row.users, row.excluded
                );
            }
            if let Some(path) = out {
                let metrics = vec![(RerankVariant::Baseline, rows)];
                let file = std::fs::File::create(&path)?;
                pipeline::write_metrics_csv(&metrics, file)?;
            }
            Ok(())
        }
        Command::Tune {
            split,
            model,
            event,
            budget,
            seed,
            k,
            trials_out,
            config_out,
            cv_report,
        } => {
            let (_, ds) = pipeline::read_split(&split)?;
            let spaces = tuning::default_spaces();
            let mut best_cv = None;
            let outcome = if let Some(kind) = CfKind::parse(&model) {
                let space = spaces
                    .get(kind.name())
                    .ok_or_else(|| Error::Config(format!("no search space for `{model}`")))?;
                let e = data::binarize(&ds.train);
                let judgments = eval::RelevanceJudgments::binary(&ds.validation);
                tuning::random_search(space, budget, seed, |params, trial_seed| {
                    let config = tuning::cf_config_from(kind, params, trial_seed)?;
                    let fitted = config.fit(&e)?;
                    let scored = cf::score_unobserved(&fitted, &e)?;
                    let lists = cf::rank_top_l(&scored, k)?;
                    let mut total = 0.0;
                    let mut n = 0usize;
                    for (u, list) in lists.iter().enumerate() {
                        if let Some(s) = eval::ndcg_at_k(list, judgments.user(u), k) {
                            total += s;
                            n += 1;
                        }
                    }
                    if n == 0 {
                        return Err(Error::Parameter("no evaluable users".to_string()));
                    }
                    Ok(total / n as f64)
                })?
            } else if let Some(kind) = SurvivalKind::parse(&model) {
                let space = spaces
                    .get(kind.name())
                    .ok_or_else(|| Error::Config(format!("no search space for `{model}`")))?;
                let event_definition = parse_event(&event)?;
                let space_features = FeatureSpace::fit(&ds.train)?;
                let observed: Vec<(usize, usize)> =
                    ds.train.iter_cells().map(|(u, c, _)| (u, c)).collect();
                let dataset = space_features.build(&ds.train, &observed, event_definition)?;
                let outcome = tuning::random_search(space, budget, seed, |params, trial_seed| {
                    let config = tuning::survival_config_from(kind, params, trial_seed)?;
                    Ok(survival::cv_c_index(&dataset, &config, 5, seed)?.mean)
                })?;
                let winner =
                    tuning::survival_config_from(kind, &outcome.best.params, outcome.best.seed)?;
                best_cv = Some(survival::cv_c_index(&dataset, &winner, 5, seed)?);
                outcome
            } else {
                return Err(Error::Config(format!("unknown model `{model}`")));
            };

            println!(
                "best trial #{} objective {:.4}",
                outcome.best.index,
                outcome.best.objective.unwrap_or(f64::NAN)
            );
            for (name, value) in &outcome.best.params.0 {
                println!("  {name} = {value}");
            }
            if let Some(path) = trials_out {
                let space = spaces.get(model.as_str()).expect("space checked above");
                let file = std::fs::File::create(&path)?;
                tuning::write_trial_log(space, &outcome.trials, file)?;
            }
            if let Some(path) = config_out {
                let prefix = if CfKind::parse(&model).is_some() {
                    "cf"
                } else {
                    "sa"
                };
                let mut text = format!("{prefix} = {model}\n");
                for (name, value) in &outcome.best.params.0 {
                    text.push_str(&format!("{prefix}.{name} = {value}\n"));
                }
                std::fs::write(&path, text)?;
            }
            if let Some(path) = cv_report {
                match &best_cv {
                    Some(cv) => {
                        let file = std::fs::File::create(&path)?;
                        survival::write_cv_report(cv, file)?;
                    }
                    None => {
                        return Err(Error::Config(
                            "--cv-report applies to survival models only".to_string(),
                        ));
                    }
                }
            }
            Ok(())
        }
        Command::Run { config, overrides } => {
            let mut pairs = config_pairs(&config)?;
            pairs.extend(overrides);
            let config = ExperimentConfig::from_pairs(&pairs)?;
            let outcome = pipeline::run_pipeline(&config)?;
            print!("{}", pipeline::format_metrics_table(&outcome.metrics));
            println!("artifacts in {}", config.output.display());
            Ok(())
        }
        Command::Synth {
            users,
            courses,
            latent_dim,
            seed,
            out,
        } => {
            let csv = pipeline::generate_synthetic(users, courses, latent_dim, seed)?;
            std::fs::write(&out, csv)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn parse_event(name: &str) -> survrec::Result<EventDefinition> {
    match name.to_ascii_lowercase().as_str() {
        "completion" | "c" => Ok(EventDefinition::CompletionIsEvent),
        "dropout" | "d" => Ok(EventDefinition::DropoutIsEvent),
        other => Err(Error::Config(format!(
            "unknown event definition `{other}` (use completion or dropout)"
        ))),
    }
}

fn merge_params(
    model: &str,
    overrides: &[(String, f64)],
) -> survrec::Result<tuning::SampledParams> {
    let map: BTreeMap<String, f64> = overrides.iter().cloned().collect();
    pipeline::merged_params(model, &map)
}

fn config_pairs(path: &PathBuf) -> survrec::Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", idx + 1)))?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Rebuild per-user ranked lists from an exported recommendations CSV.
fn read_recommendations(
    path: &PathBuf,
    axes: &survrec::data::InteractionMatrix,
) -> survrec::Result<Vec<RankedList>> {
    let mut reader = csv::Reader::from_reader(std::fs::File::open(path)?);
    let mut by_user: BTreeMap<usize, Vec<(usize, usize, Provenance)>> = BTreeMap::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let bad = |message: String| Error::Load { line, message };
        let user = axes
            .user_index(&row[0])
            .ok_or_else(|| bad(format!("unknown user `{}`", &row[0])))?;
        let position: usize = row[1]
            .parse()
            .map_err(|_| bad(format!("bad position `{}`", &row[1])))?;
        let course = axes
            .course_index(&row[2])
            .ok_or_else(|| bad(format!("unknown course `{}`", &row[2])))?;
        let parse_opt = |s: &str| -> Option<f64> { s.parse().ok() };
        let provenance = Provenance {
            cf_score: parse_opt(&row[3]),
            dropout_rank: row[4].parse().ok(),
            completion_rank: row[5].parse().ok(),
            aggregate_rank: parse_opt(&row[6]),
        };
        by_user
            .entry(user)
            .or_default()
            .push((position, course, provenance));
    }
    let mut lists: Vec<RankedList> = Vec::with_capacity(axes.n_users());
    for u in 0..axes.n_users() {
        let mut entries = by_user.remove(&u).unwrap_or_default();
        entries.sort_by_key(|&(position, _, _)| position);
        lists.push(RankedList::from_ordered(
            u,
            entries
                .into_iter()
                .map(|(_, course, provenance)| (course, provenance))
                .collect(),
        ));
    }
    Ok(lists)
}
