//! Staged, resumable end-to-end runs.
//!
//! Each stage has a fingerprint chained from the previous stage's fingerprint
//! and its own configuration. A stage is skipped when its stamp file records
//! the same fingerprint and every artifact it produced still hashes to the
//! recorded value; downstream stages always read their inputs back from disk,
//! so fresh and resumed runs see identical data.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::config::{DataSource, Method, RelaxedEstimator, RunConfig};
use super::report::{
    discover_unseen, unseen_prompt_lines, write_report_files, write_unseen_csv, Evaluation,
    MetricsDocument, Reference,
};
use super::write_atomic;
use crate::attrspace::{
    read_group_csv, split_by_group, table_from_samples, write_group_csv, GroupBiasTable,
    GroupCsvOptions, SyntheticLandscape,
};
use crate::error::{Error, Result};
use crate::metrics::evaluate_lenient;
use crate::model::{
    finetune, generate, pretrain, write_finetune_log, GeneratedSet, GenerativeModel, PretrainConfig,
};
use crate::predictor::{BiasPredictor, PredictorConfig};
use crate::rng::derive_seed;
use crate::search::{
    enumerate_discover, fit_tree, relaxed_search, search_tree, BiasSource, RegressionTree,
    SearchEstimator,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub name: String,
    /// Relative to the run directory.
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub wall_time_secs: f64,
    /// True when the stage was skipped in favour of existing artifacts.
    pub reused: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub dimension: usize,
    pub taus: Vec<f64>,
    pub methods: Vec<Method>,
    pub artifacts: Vec<Artifact>,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn artifact(&self, name: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.name == name)
    }

    /// Artifacts whose name starts with `prefix`.
    pub fn artifacts_with_prefix<'a>(
        &'a self,
        prefix: &'a str,
    ) -> impl Iterator<Item = &'a Artifact> + 'a {
        self.artifacts
            .iter()
            .filter(move |a| a.name.starts_with(prefix))
    }

    /// Checks every artifact exists and matches its recorded hash.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for a in &self.artifacts {
            let actual = file_sha256(&dir.join(&a.path))?;
            if actual != a.sha256 {
                return Err(Error::invalid(format!(
                    "artifact {} does not match its recorded hash",
                    a.path.display()
                )));
            }
        }
        Ok(())
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Serialize, Deserialize)]
struct Stamp {
    fingerprint: String,
    artifacts: Vec<Artifact>,
}

struct Runner {
    dir: PathBuf,
    fingerprint: String,
    artifacts: Vec<Artifact>,
    stages: Vec<StageRecord>,
}

fn in_stage<T>(stage: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Stage { .. } => e,
        other => Error::Stage {
            stage: stage.to_string(),
            source: Box::new(other),
        },
    })
}

impl Runner {
    fn stamp_valid(&self, stamp_path: &Path, fingerprint: &str) -> Option<Vec<Artifact>> {
        let text = std::fs::read_to_string(stamp_path).ok()?;
        let stamp: Stamp = serde_json::from_str(&text).ok()?;
        if stamp.fingerprint != fingerprint {
            return None;
        }
        let intact = stamp
            .artifacts
            .iter()
            .all(|a| file_sha256(&self.dir.join(&a.path)).is_ok_and(|h| h == a.sha256));
        intact.then_some(stamp.artifacts)
    }

    /// Runs `compute` unless a valid stamp exists. `compute` returns
    /// `(artifact name, path relative to the run directory)` pairs.
    fn stage(
        &mut self,
        name: &str,
        key: serde_json::Value,
        compute: impl FnOnce(&Path) -> Result<Vec<(String, PathBuf)>>,
    ) -> Result<()> {
        let mut hasher = Sha256::new();
        hasher.update(self.fingerprint.as_bytes());
        hasher.update(name.as_bytes());
        hasher.update(key.to_string().as_bytes());
        let fingerprint = hex::encode(hasher.finalize());
        self.fingerprint = fingerprint.clone();
        let stamp_path = self.dir.join("stamps").join(format!("{name}.json"));
        let start = Instant::now();
        let (artifacts, reused) = match self.stamp_valid(&stamp_path, &fingerprint) {
            Some(a) => (a, true),
            None => {
                let _ = std::fs::remove_file(&stamp_path);
                let produced = in_stage(name, compute(&self.dir))?;
                let artifacts = in_stage(
                    name,
                    produced
                        .into_iter()
                        .map(|(name, path)| {
                            let sha256 = file_sha256(&self.dir.join(&path))?;
                            Ok(Artifact { name, path, sha256 })
                        })
                        .collect::<Result<Vec<_>>>(),
                )?;
                let stamp = Stamp {
                    fingerprint,
                    artifacts: artifacts.clone(),
                };
                in_stage(
                    name,
                    write_atomic(
                        &stamp_path,
                        serde_json::to_string_pretty(&stamp)?.as_bytes(),
                    ),
                )?;
                (artifacts, false)
            }
        };
        self.artifacts.extend(artifacts);
        self.stages.push(StageRecord {
            stage: name.to_string(),
            wall_time_secs: start.elapsed().as_secs_f64(),
            reused,
        });
        Ok(())
    }
}

fn rel(s: &str) -> PathBuf {
    PathBuf::from(s)
}

fn data_key(data: &DataSource) -> Result<serde_json::Value> {
    let file_hash = match data {
        DataSource::Planted { .. } => None,
        DataSource::Landscape { path, .. }
        | DataSource::Groups { path }
        | DataSource::Samples { path } => Some(file_sha256(path)?),
    };
    Ok(json!({ "data": data, "file_sha256": file_hash }))
}

fn stage_seed(seed: u64, stage: &str) -> u64 {
    derive_seed(seed, stage)
}

/// Executes every stage the configured methods need, writing artifacts under
/// `config.output_dir`, and returns the manifest (also written to
/// `manifest.json`).
pub fn run_pipeline(config: &RunConfig) -> Result<RunManifest> {
    config.validate()?;
    let dir = config.output_dir.clone();
    for sub in [
        "data",
        "models",
        "logs",
        "generated",
        "search",
        "reports",
        "stamps",
    ] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let seed = config.seed;
    let mut runner = Runner {
        dir: dir.clone(),
        fingerprint: String::new(),
        artifacts: Vec::new(),
        stages: Vec::new(),
    };

    write_atomic(
        &dir.join("config.json"),
        serde_json::to_string_pretty(config)?.as_bytes(),
    )?;

    // data
    let key = in_stage("data", data_key(&config.data))?;
    runner.stage("data", key, |dir| {
        let landscape = match &config.data {
            DataSource::Planted {
                dimension,
                cohorts,
                landscape_seed,
                ..
            } => Some(SyntheticLandscape::planted(
                *dimension,
                *cohorts,
                *landscape_seed,
            )),
            DataSource::Landscape { path, .. } => Some(SyntheticLandscape::load(path)?),
            _ => None,
        };
        let table = match (&config.data, &landscape) {
            (
                DataSource::Planted {
                    n_groups,
                    samples_per_group,
                    ..
                },
                Some(l),
            )
            | (
                DataSource::Landscape {
                    n_groups,
                    samples_per_group,
                    ..
                },
                Some(l),
            ) => l.sample_dataset(*n_groups, *samples_per_group)?,
            (DataSource::Groups { path }, _) => read_group_csv(path)?,
            (DataSource::Samples { path }, _) => table_from_samples(path)?,
            _ => unreachable!("landscape sources always build a landscape"),
        };
        write_group_csv(
            &dir.join("data/groups.csv"),
            &table,
            GroupCsvOptions { with_count: true },
        )?;
        let mut out = vec![("table:all".to_string(), rel("data/groups.csv"))];
        if let Some(l) = landscape {
            write_atomic(&dir.join("data/landscape.json"), l.to_json()?.as_bytes())?;
            out.push(("landscape".to_string(), rel("data/landscape.json")));
        }
        Ok(out)
    })?;
    let table = in_stage("data", read_group_csv(&dir.join("data/groups.csv")))?;
    let landscape = match runner.artifacts.iter().any(|a| a.name == "landscape") {
        true => Some(in_stage(
            "data",
            SyntheticLandscape::load(&dir.join("data/landscape.json")),
        )?),
        false => None,
    };
    let d = table.dimension();
    let names: Vec<String> = match config
        .attribute_names
        .clone()
        .or_else(|| landscape.as_ref().and_then(|l| l.attribute_names.clone()))
    {
        Some(n) if n.len() == d => n,
        Some(n) => {
            return Err(Error::Config(format!(
                "{} attribute names for dimension {d}",
                n.len()
            )))
        }
        None => (0..d).map(|i| format!("a{i}")).collect(),
    };
    for m in &config.methods {
        if let Method::Relaxed(n) = m {
            if *n > d {
                return Err(Error::Config(format!(
                    "relaxation number {n} exceeds dimension {d}"
                )));
            }
        }
    }

    // split
    let split_seed = stage_seed(seed, "split");
    runner.stage(
        "split",
        json!({ "holdout_fraction": config.holdout_fraction, "seed": split_seed }),
        |dir| {
            let split = split_by_group(&table, config.holdout_fraction, split_seed)?;
            let opts = GroupCsvOptions { with_count: true };
            write_group_csv(&dir.join("data/observation.csv"), &split.observation, opts)?;
            write_group_csv(&dir.join("data/holdout.csv"), &split.holdout, opts)?;
            Ok(vec![
                ("table:observation".into(), rel("data/observation.csv")),
                ("table:holdout".into(), rel("data/holdout.csv")),
            ])
        },
    )?;
    let observation = in_stage("split", read_group_csv(&dir.join("data/observation.csv")))?;
    let holdout = in_stage("split", read_group_csv(&dir.join("data/holdout.csv")))?;
    let union = in_stage("split", observation.union(&holdout))?;
    let taus: Vec<f64> = in_stage(
        "split",
        config.tau.iter().map(|t| t.resolve(&observation)).collect(),
    )?;

    // predictor
    let predictor = if config.needs_predictor() {
        let cfg = PredictorConfig {
            seed: stage_seed(seed, "predictor"),
            ..config.predictor.clone()
        };
        runner.stage("predictor", json!(cfg), |dir| {
            BiasPredictor::train(&observation, &cfg)?.save(&dir.join("models/predictor.json"))?;
            Ok(vec![(
                "checkpoint:predictor".into(),
                rel("models/predictor.json"),
            )])
        })?;
        Some(in_stage(
            "predictor",
            BiasPredictor::load(&dir.join("models/predictor.json")),
        )?)
    } else {
        None
    };

    // pretraining, then fine-tuning from the vanilla snapshot
    let mut models: Vec<(Method, GenerativeModel)> = Vec::new();
    if config.needs_pretrain() {
        let init_seed = stage_seed(seed, "model-init");
        let cfg = PretrainConfig {
            seed: stage_seed(seed, "pretrain"),
            ..config.pretrain.clone()
        };
        runner.stage(
            "pretrain",
            json!({ "model": config.model, "pretrain": cfg, "init_seed": init_seed }),
            |dir| {
                let mut model = GenerativeModel::new(d, &config.model, init_seed)?;
                let summary = pretrain(&mut model, &observation, &cfg)?;
                model.save(&dir.join("models/vanilla.json"))?;
                write_atomic(
                    &dir.join("logs/pretrain.json"),
                    serde_json::to_string_pretty(&summary)?.as_bytes(),
                )?;
                Ok(vec![
                    ("checkpoint:vanilla".into(), rel("models/vanilla.json")),
                    ("log:pretrain".into(), rel("logs/pretrain.json")),
                ])
            },
        )?;
        let vanilla = in_stage(
            "pretrain",
            GenerativeModel::load(&dir.join("models/vanilla.json")),
        )?;
        if config.methods.contains(&Method::Bggn) {
            let predictor = predictor.as_ref().expect("bggn needs the predictor");
            let mut cfg = config.finetune.clone();
            cfg.seed = stage_seed(seed, "finetune");
            runner.stage("finetune", json!(cfg), |dir| {
                let mut model = vanilla.clone();
                let log = finetune(&mut model, predictor, &observation, &cfg)?;
                model.save(&dir.join("models/bggn.json"))?;
                write_finetune_log(&dir.join("logs/finetune.jsonl"), &log)?;
                Ok(vec![
                    ("checkpoint:bggn".into(), rel("models/bggn.json")),
                    ("log:finetune".into(), rel("logs/finetune.jsonl")),
                ])
            })?;
            models.push((
                Method::Bggn,
                in_stage(
                    "finetune",
                    GenerativeModel::load(&dir.join("models/bggn.json")),
                )?,
            ));
        }
        if config.methods.contains(&Method::Vanilla) {
            models.push((Method::Vanilla, vanilla));
        }
    }

    // sampling
    let generated_path = |m: Method, k: usize| rel(&format!("generated/{}_{k}.json", m.slug()));
    if !models.is_empty() {
        let predictor = predictor.as_ref().expect("generation needs the predictor");
        let methods: Vec<Method> = models.iter().map(|(m, _)| *m).collect();
        runner.stage(
            "generate",
            json!({ "methods": methods, "n_samples": config.n_samples, "repeats": config.repeats }),
            |dir| {
                let mut out = Vec::new();
                for (m, model) in &models {
                    for k in 0..config.repeats {
                        let s = stage_seed(seed, &format!("generate/{m}/{k}"));
                        let set =
                            generate(model, config.n_samples, predictor, None, Some(&union), s)?;
                        let path = generated_path(*m, k);
                        set.save(&dir.join(&path))?;
                        let csv = path.with_extension("csv");
                        set.write_csv(&dir.join(&csv), d)?;
                        out.push((format!("generated:{m}:{k}"), path));
                        out.push((format!("generated_csv:{m}:{k}"), csv));
                    }
                }
                Ok(out)
            },
        )?;
    }

    // baselines
    let search_methods = config.search_methods();
    let search_path = |m: Method, i: usize| rel(&format!("search/{}_tau{i}.json", m.slug()));
    if !search_methods.is_empty() {
        runner.stage(
            "search",
            json!({ "methods": search_methods, "tree": config.tree, "taus": taus, "relaxed_estimator": config.relaxed_estimator }),
            |dir| {
                let mut out = Vec::new();
                let tree: Option<RegressionTree> = if config.needs_tree() {
                    let tree = fit_tree(&observation, &config.tree)?;
                    write_atomic(&dir.join("models/tree.json"), serde_json::to_string_pretty(&tree)?.as_bytes())?;
                    out.push(("checkpoint:tree".to_string(), rel("models/tree.json")));
                    Some(tree)
                } else {
                    None
                };
                for &m in &search_methods {
                    for (i, &tau) in taus.iter().enumerate() {
                        let result = match m {
                            Method::SearchTree => search_tree(tree.as_ref().expect("tree"), tau),
                            Method::Relaxed(n) => {
                                let estimator = match config.relaxed_estimator {
                                    RelaxedEstimator::Tree => SearchEstimator::Tree,
                                    RelaxedEstimator::Predictor => {
                                        SearchEstimator::Predictor(predictor.as_ref().expect("predictor"))
                                    }
                                };
                                relaxed_search(tree.as_ref().expect("tree"), tau, n, estimator)?
                            }
                            Method::Enumerate => match &landscape {
                                Some(l) => enumerate_discover(BiasSource::Landscape(l), tau)?,
                                None => enumerate_discover(BiasSource::Table(&observation), tau)?,
                            },
                            Method::Bggn | Method::Vanilla => unreachable!("generative methods are sampled"),
                        };
                        let path = search_path(m, i);
                        result.to_generated_set(Some(&union)).save(&dir.join(&path))?;
                        let csv = path.with_extension("csv");
                        result.write_csv(&dir.join(&csv))?;
                        let summary = PathBuf::from(format!("search/{}_tau{i}.summary.json", m.slug()));
                        result.write_summary(&dir.join(&summary))?;
                        out.push((format!("search_result:{m}:{i}"), path));
                        out.push((format!("search_csv:{m}:{i}"), csv));
                        out.push((format!("search_summary:{m}:{i}"), summary));
                    }
                }
                Ok(out)
            },
        )?;
    }

    // evaluation against both references at every threshold
    let mut methods: Vec<Method> = config.methods.clone();
    methods.sort();
    methods.dedup();
    let config_hash = config.hash();
    runner.stage(
        "evaluate",
        json!({ "metrics": config.metrics, "taus": taus }),
        |dir| {
            let mut evaluations = Vec::new();
            for (i, &tau) in taus.iter().enumerate() {
                for (reference, table) in [
                    (Reference::Observation, &observation),
                    (Reference::Holdout, &holdout),
                ] {
                    for &m in &methods {
                        let paths: Vec<PathBuf> = if m.is_generative() {
                            (0..config.repeats).map(|k| generated_path(m, k)).collect()
                        } else {
                            vec![search_path(m, i)]
                        };
                        let mut reports = Vec::new();
                        for (k, p) in paths.iter().enumerate() {
                            let set = GeneratedSet::load(&dir.join(p))?;
                            let mut r = evaluate_lenient(&set, table, tau, &config.metrics)?;
                            r.metadata.insert("method".into(), m.to_string());
                            r.metadata.insert("reference".into(), reference.to_string());
                            r.metadata.insert("repeat".into(), k.to_string());
                            reports.push(r);
                        }
                        evaluations.push(Evaluation::new(m, reference, i, tau, reports));
                    }
                }
            }
            let doc = MetricsDocument {
                config_hash: config_hash.clone(),
                taus: taus.clone(),
                evaluations,
            };
            doc.save(&dir.join("reports/metrics.json"))?;
            Ok(vec![("metrics".into(), rel("reports/metrics.json"))])
        },
    )?;

    // plot data and unseen discoveries
    runner.stage(
        "report",
        json!({ "render_negated": config.render_negated, "names": names }),
        |dir| {
            let doc = MetricsDocument::load(&dir.join("reports/metrics.json"))?;
            let mut out: Vec<(String, PathBuf)> =
                write_report_files(&dir.join("reports"), &doc, &methods)?
                    .into_iter()
                    .map(|(n, p)| (format!("report:{n}"), PathBuf::from("reports").join(p)))
                    .collect();
            let source = [Method::Bggn, Method::Vanilla]
                .into_iter()
                .find(|m| methods.contains(m));
            if let Some(m) = source {
                let sets = (0..config.repeats)
                    .map(|k| GeneratedSet::load(&dir.join(generated_path(m, k))))
                    .collect::<Result<Vec<_>>>()?;
                let unseen = discover_unseen(&sets, &union);
                write_unseen_csv(
                    &dir.join("reports/unseen.csv"),
                    &unseen,
                    &names,
                    config.render_negated,
                )?;
                let prompts = if unseen.is_empty() {
                    format!("(every attribute vector generated by {m} is in the observation or holdout table)\n")
                } else {
                    unseen_prompt_lines(&unseen, &names, config.render_negated)
                };
                write_atomic(&dir.join("reports/unseen_prompts.txt"), prompts.as_bytes())?;
                out.push(("unseen".into(), rel("reports/unseen.csv")));
                out.push(("unseen_prompts".into(), rel("reports/unseen_prompts.txt")));
            }
            Ok(out)
        },
    )?;

    let mut artifacts = vec![Artifact {
        name: "config".into(),
        path: rel("config.json"),
        sha256: file_sha256(&dir.join("config.json"))?,
    }];
    artifacts.extend(runner.artifacts);
    let manifest = RunManifest {
        version: VERSION.to_string(),
        config_hash,
        seed,
        dimension: d,
        taus,
        methods,
        artifacts,
        stages: runner.stages,
    };
    write_atomic(
        &dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;
    Ok(manifest)
}

/// Reads the metrics document of a finished run.
pub fn load_metrics(dir: &Path) -> Result<MetricsDocument> {
    MetricsDocument::load(&dir.join("reports/metrics.json"))
}

/// Reference tables of a finished run: observation, holdout.
pub fn load_split(dir: &Path) -> Result<(GroupBiasTable, GroupBiasTable)> {
    Ok((
        read_group_csv(&dir.join("data/observation.csv"))?,
        read_group_csv(&dir.join("data/holdout.csv"))?,
    ))
}
