use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bggn::attrspace::{
    read_group_csv, split_by_group, write_group_csv, GroupBiasTable, GroupCsvOptions,
    SyntheticLandscape,
};
use bggn::metrics::evaluate_lenient;
use bggn::model::{
    finetune, generate, pretrain, write_finetune_log, GeneratedSet, GenerativeModel, PretrainConfig,
};
use bggn::pipeline::{
    compare_report, load_metrics, parse_list, run_pipeline, write_atomic, write_report_files,
    DataSource, Method, RelaxedEstimator, RunConfig, Threshold,
};
use bggn::predictor::{BiasPredictor, PredictorConfig};
use bggn::rng::derive_seed;
use bggn::search::{
    enumerate_discover, fit_tree, relaxed_search, search_tree, BiasSource, SearchEstimator,
};
use bggn::{Error, Result};

/// Discover high-bias intersectional subgroups with a bias-guided generative network.
#[derive(Parser)]
#[command(name = "bggn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON); stage commands read their section from it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed; stage seeds are derived from it.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a planted-cohort landscape and a noisy group table sampled from it.
    Landscape {
        #[arg(long, default_value_t = 10)]
        dimension: usize,
        #[arg(long, default_value_t = 3)]
        cohorts: usize,
        #[arg(long, default_value_t = 1024)]
        n_groups: usize,
        #[arg(long, default_value_t = 4)]
        samples_per_group: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a group table into observation and holdout groups.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        fraction: f64,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the bias predictor on an observation table.
    TrainPredictor {
        #[arg(long)]
        observation: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the generative model as a VAE.
    Pretrain {
        #[arg(long)]
        observation: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bias-guided fine-tuning of a pretrained model.
    Finetune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        predictor: PathBuf,
        #[arg(long)]
        observation: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw attribute vectors from a model.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        predictor: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n_samples: usize,
        /// Keep only draws with predicted bias at least this value.
        #[arg(long)]
        tau: Option<f64>,
        /// Group table used to annotate reference bias.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// Output JSON; a CSV with the same stem is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Search Tree or Relaxed Search Tree over an observation table.
    Search {
        #[arg(long)]
        observation: PathBuf,
        /// Comma-separated thresholds; `qP` is the P quantile of observation bias.
        #[arg(long)]
        tau: String,
        /// `search_tree` or `relaxed:N`.
        #[arg(long, default_value = "search_tree")]
        method: String,
        /// Predictor used to score relaxed completions (otherwise the leaf value).
        #[arg(long)]
        predictor: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Every group at or above each threshold, from a landscape or a table.
    Enumerate {
        #[arg(long, conflicts_with = "groups", required_unless_present = "groups")]
        landscape: Option<PathBuf>,
        #[arg(long)]
        groups: Option<PathBuf>,
        /// Comma-separated thresholds; `qP` is the P quantile of `--groups` bias.
        #[arg(long)]
        tau: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a generated set against a reference table.
    Evaluate {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Comma-separated absolute thresholds.
        #[arg(long)]
        tau: String,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Comparison table and plot data for a finished run.
    Report {
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        method: Option<String>,
        /// Threshold index within the run (default: all).
        #[arg(long)]
        tau: Option<usize>,
    },
    /// End-to-end pipeline.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tau: Option<String>,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        n_samples: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Config for stage commands: the file if given, otherwise defaults.
fn stage_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::new(DataSource::Groups {
            path: PathBuf::new(),
        }),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

/// Parses a threshold list. Quantiles resolve against `base` when given.
fn taus(s: &str, base: Option<&GroupBiasTable>) -> Result<Vec<f64>> {
    parse_list::<Threshold>(s)?
        .into_iter()
        .map(|t| match (t, base) {
            (Threshold::Value(v), _) if v >= 0.0 => Ok(v),
            (Threshold::Value(v), _) => Err(Error::Config(format!("threshold {v} must be ≥ 0"))),
            (Threshold::Quantile { quantile }, Some(table)) if (0.0..=1.0).contains(&quantile) => {
                t.resolve(table)
            }
            (Threshold::Quantile { quantile }, Some(_)) => Err(Error::Config(format!(
                "threshold quantile {quantile} must lie in [0, 1]"
            ))),
            (Threshold::Quantile { .. }, None) => Err(Error::Config(
                "quantile thresholds need a group table to resolve against".into(),
            )),
        })
        .collect()
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Landscape {
            dimension,
            cohorts,
            n_groups,
            samples_per_group,
            seed,
            out,
        } => {
            ensure_dir(&out)?;
            let landscape = SyntheticLandscape::planted(dimension, cohorts, seed);
            let n = if dimension < 63 {
                n_groups.min(1usize << dimension)
            } else {
                n_groups
            };
            let table = landscape.sample_dataset(n, samples_per_group)?;
            write_atomic(&out.join("landscape.json"), landscape.to_json()?.as_bytes())?;
            write_group_csv(
                &out.join("groups.csv"),
                &table,
                GroupCsvOptions { with_count: true },
            )?;
            println!(
                "wrote {} groups over d = {dimension} to {}",
                table.len(),
                out.display()
            );
        }
        Command::Split {
            input,
            fraction,
            common,
            out,
        } => {
            let cfg = stage_config(&common)?;
            let table = read_group_csv(&input)?;
            let split = split_by_group(&table, fraction, derive_seed(cfg.seed, "split"))?;
            ensure_dir(&out)?;
            let opts = GroupCsvOptions { with_count: true };
            write_group_csv(&out.join("observation.csv"), &split.observation, opts)?;
            write_group_csv(&out.join("holdout.csv"), &split.holdout, opts)?;
            println!(
                "observation {} groups, holdout {} groups",
                split.observation.len(),
                split.holdout.len()
            );
        }
        Command::TrainPredictor {
            observation,
            common,
            out,
        } => {
            let cfg = stage_config(&common)?;
            ensure_parent(&out)?;
            let table = read_group_csv(&observation)?;
            let pcfg = PredictorConfig {
                seed: derive_seed(cfg.seed, "predictor"),
                ..cfg.predictor
            };
            let predictor = BiasPredictor::train(&table, &pcfg)?;
            predictor.save(&out)?;
            println!("best epoch {}", predictor.summary.best_epoch);
        }
        Command::Pretrain {
            observation,
            common,
            out,
        } => {
            let cfg = stage_config(&common)?;
            ensure_parent(&out)?;
            let table = read_group_csv(&observation)?;
            let mut model = GenerativeModel::new(
                table.dimension(),
                &cfg.model,
                derive_seed(cfg.seed, "model-init"),
            )?;
            let pcfg = PretrainConfig {
                seed: derive_seed(cfg.seed, "pretrain"),
                ..cfg.pretrain
            };
            let summary = pretrain(&mut model, &table, &pcfg)?;
            model.save(&out)?;
            println!(
                "final ELBO {:.4}",
                summary.epoch_elbos.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Finetune {
            model,
            predictor,
            observation,
            log,
            common,
            out,
        } => {
            let cfg = stage_config(&common)?;
            ensure_parent(&out)?;
            let mut model = GenerativeModel::load(&model)?;
            let predictor = BiasPredictor::load(&predictor)?;
            let table = read_group_csv(&observation)?;
            let mut fcfg = cfg.finetune;
            fcfg.seed = derive_seed(cfg.seed, "finetune");
            let entries = finetune(&mut model, &predictor, &table, &fcfg)?;
            model.save(&out)?;
            if let Some(path) = log {
                ensure_parent(&path)?;
                write_finetune_log(&path, &entries)?;
            }
            if let Some(last) = entries.last() {
                println!(
                    "final mean reward {:.4}, mean predicted bias {:.4}",
                    last.mean_reward, last.mean_predicted_bias
                );
            }
        }
        Command::Sample {
            model,
            predictor,
            n_samples,
            tau,
            reference,
            common,
            out,
        } => {
            let cfg = stage_config(&common)?;
            ensure_parent(&out)?;
            let model = GenerativeModel::load(&model)?;
            let predictor = BiasPredictor::load(&predictor)?;
            let reference = reference.map(|p| read_group_csv(&p)).transpose()?;
            let set = generate(
                &model,
                n_samples,
                &predictor,
                tau,
                reference.as_ref(),
                derive_seed(cfg.seed, "sample"),
            )?;
            set.save(&out)?;
            set.write_csv(&out.with_extension("csv"), model.dimension())?;
            println!("kept {} of {n_samples} draws", set.len());
        }
        Command::Search {
            observation,
            tau,
            method,
            predictor,
            common,
            out,
        } => {
            let cfg = stage_config(&common)?;
            let table = read_group_csv(&observation)?;
            let taus = taus(&tau, Some(&table))?;
            let method: Method = method.parse()?;
            if !matches!(method, Method::SearchTree | Method::Relaxed(_)) {
                return Err(Error::Config(format!(
                    "`search` runs search_tree or relaxed:N, not {method}"
                )));
            }
            let tree = fit_tree(&table, &cfg.tree)?;
            let predictor = predictor.map(|p| BiasPredictor::load(&p)).transpose()?;
            ensure_dir(&out)?;
            for (i, tau) in taus.into_iter().enumerate() {
                let result = match method {
                    Method::SearchTree => search_tree(&tree, tau),
                    Method::Relaxed(n) => {
                        let estimator = match (&predictor, cfg.relaxed_estimator) {
                            (Some(p), RelaxedEstimator::Predictor) => SearchEstimator::Predictor(p),
                            _ => SearchEstimator::Tree,
                        };
                        relaxed_search(&tree, tau, n, estimator)?
                    }
                    _ => unreachable!("checked above"),
                };
                let stem = format!("{}_tau{i}", method.slug());
                result.write_csv(&out.join(format!("{stem}.csv")))?;
                result.write_summary(&out.join(format!("{stem}.summary.json")))?;
                println!("tau {tau}: {} attribute vectors", result.len());
            }
        }
        Command::Enumerate {
            landscape,
            groups,
            tau,
            out,
        } => {
            let landscape = landscape
                .map(|p| SyntheticLandscape::load(&p))
                .transpose()?;
            let table = groups.map(|p| read_group_csv(&p)).transpose()?;
            let taus = taus(&tau, table.as_ref())?;
            ensure_dir(&out)?;
            for (i, tau) in taus.into_iter().enumerate() {
                let source = match (&landscape, &table) {
                    (Some(l), _) => BiasSource::Landscape(l),
                    (None, Some(t)) => BiasSource::Table(t),
                    (None, None) => unreachable!("clap requires one source"),
                };
                let result = enumerate_discover(source, tau)?;
                result.write_csv(&out.join(format!("enumerate_tau{i}.csv")))?;
                result.write_summary(&out.join(format!("enumerate_tau{i}.summary.json")))?;
                println!("tau {tau}: {} attribute vectors", result.len());
            }
        }
        Command::Evaluate {
            generated,
            reference,
            tau,
            common,
            out,
        } => {
            let cfg = stage_config(&common)?;
            let taus = taus(&tau, None)?;
            let set = GeneratedSet::load(&generated)?;
            let table = read_group_csv(&reference)?;
            ensure_parent(&out)?;
            let reports = taus
                .into_iter()
                .map(|t| evaluate_lenient(&set, &table, t, &cfg.metrics))
                .collect::<Result<Vec<_>>>()?;
            write_atomic(&out, serde_json::to_string_pretty(&reports)?.as_bytes())?;
            for r in &reports {
                let cells: Vec<String> = r
                    .scalar_metrics()
                    .into_iter()
                    .map(|(n, v)| {
                        let cell = match v {
                            Some(x) if n == "bias_number" => format!("{x:.0}"),
                            Some(x) => format!("{x:.4}"),
                            None => "n/a".into(),
                        };
                        format!("{n}={cell}")
                    })
                    .collect();
                println!("tau {}: {}", r.tau, cells.join(" "));
            }
        }
        Command::Report { out, method, tau } => {
            let doc = load_metrics(&out)?;
            let methods = match method {
                Some(m) => parse_list::<Method>(&m)?,
                None => doc.methods(),
            };
            let rows = compare_report(&doc, &methods, tau)?;
            write_report_files(&out.join("reports"), &doc, &methods)?;
            print_rows(&rows);
        }
        Command::Run {
            common,
            tau,
            method,
            n_samples,
            out,
        } => {
            let Some(path) = &common.config else {
                return Err(Error::Config("`run` needs --config".into()));
            };
            let mut cfg = RunConfig::load(path)?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            if let Some(t) = tau {
                cfg.tau = parse_list(&t)?;
            }
            if let Some(m) = method {
                cfg.methods = parse_list(&m)?;
            }
            if let Some(n) = n_samples {
                cfg.n_samples = n;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let manifest = run_pipeline(&cfg)?;
            for s in &manifest.stages {
                eprintln!(
                    "{:<10} {:>8.2}s{}",
                    s.stage,
                    s.wall_time_secs,
                    if s.reused { " (reused)" } else { "" }
                );
            }
            let doc = load_metrics(&cfg.output_dir)?;
            print_rows(&compare_report(&doc, &manifest.methods, Some(0))?);
            println!(
                "manifest: {}",
                cfg.output_dir.join("manifest.json").display()
            );
        }
    }
    Ok(())
}

fn print_rows(rows: &[bggn::pipeline::ComparisonRow]) {
    println!(
        "{:<14} {:<12} {:>8} {:<22} {:>10} {:>10}",
        "method", "reference", "tau", "metric", "mean", "std"
    );
    for r in rows {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into());
        println!(
            "{:<14} {:<12} {:>8.4} {:<22} {:>10} {:>10}",
            r.method.to_string(),
            r.reference.to_string(),
            r.tau,
            r.metric,
            f(r.mean),
            f(r.std)
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
