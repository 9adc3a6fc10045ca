//! Command bodies. Each writes its artifacts under the run directory and
//! its human-readable summary to `out`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crossgr::data::{compute_stats, parse_interactions, prepare_split, SplitDataset, StatsReport};
use crossgr::eval::{
    build_candidates, evaluate_entry, CandidateMode, CandidateSet, EvalReport, EvalSplit,
};
use crossgr::graph::{graph_from_split, EdgeWeighting, InteractionGraph};
use crossgr::kernel::checkpoint::{load_params, save_params};
use crossgr::registry::{
    config_digest, train_model, Model, ModelKind, ModelSidecar, SIDECAR_VERSION,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const SIDECAR_FILE: &str = "checkpoint.json";
pub const EPOCH_LOG: &str = "epochs.log";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

fn say(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|source| CliError::Output {
            path: PathBuf::from("<stdout>"),
            source,
        })
}

/// Parsed markets, split and training graph for one run.
pub struct Prepared {
    pub split: SplitDataset,
    pub graph: InteractionGraph,
}

pub fn prepare(config: &RunConfig) -> Result<Prepared, CliError> {
    let target = parse_interactions(&config.data[&config.target], &config.target)?;
    let sources = config
        .sources
        .iter()
        .map(|m| parse_interactions(&config.data[m], m))
        .collect::<crossgr::Result<Vec<_>>>()?;
    let split = prepare_split(&target, &sources, config.seed)?;
    let graph = graph_from_split(&split, EdgeWeighting::Binary)?;
    log::info!(
        "{} users, {} items, {} train pairs, {} test users ({} excluded)",
        split.num_users(),
        split.num_items(),
        split.train.len(),
        split.test.len(),
        split.excluded_users.len()
    );
    Ok(Prepared { split, graph })
}

pub fn test_candidates(config: &RunConfig, split: &SplitDataset) -> Vec<CandidateSet> {
    let mode = if config.eval.full_catalog {
        CandidateMode::FullCatalog
    } else {
        CandidateMode::Sampled(config.eval.negatives)
    };
    let candidates = build_candidates(split, EvalSplit::Test, mode, config.seed);
    let truncated = candidates.iter().filter(|c| c.truncated).count();
    if truncated > 0 {
        log::warn!(
            "{truncated} of {} test users have fewer than {} unseen items; their candidate sets are truncated",
            candidates.len(),
            config.eval.negatives
        );
    }
    candidates
}

pub fn stats(config: &RunConfig, out: &mut dyn Write) -> Result<StatsReport, CliError> {
    let sets = config
        .data
        .iter()
        .map(|(market, path)| parse_interactions(path, market))
        .collect::<crossgr::Result<Vec<_>>>()?;
    let report = compute_stats(&sets);
    let dir = config.run_dir();
    create_dir(&dir)?;
    write_file(&dir.join("stats.json"), report.to_json())?;
    write_file(&dir.join("stats.txt"), report.to_table())?;
    say(out, &report.to_table())?;
    Ok(report)
}

/// Trains (or fits) `kind` and writes config snapshot, epoch log, checkpoint
/// and sidecar into `dir`.
pub fn train_into(
    config: &RunConfig,
    kind: ModelKind,
    prepared: &Prepared,
    dir: &Path,
) -> Result<(Model, ModelSidecar), CliError> {
    create_dir(dir)?;
    write_file(&dir.join(CONFIG_FILE), config.to_toml())?;
    let log_path = dir.join(EPOCH_LOG);
    let file = File::create(&log_path).map_err(|source| CliError::Output {
        path: log_path.clone(),
        source,
    })?;
    let mut log = BufWriter::new(file);
    let mut log_error = None;
    let started = Instant::now();
    let mut on_epoch = |record: &crossgr::train::EpochRecord| {
        log::info!(
            "{kind} epoch {} loss {} valid ndcg {} ({} ms)",
            record.epoch,
            record.loss.map_or("-".into(), |l| format!("{l:.5}")),
            record.valid_ndcg.map_or("-".into(), |n| format!("{n:.4}")),
            record.elapsed_ms
        );
        if log_error.is_none() {
            if let Err(e) = writeln!(log, "{}", record.log_line()) {
                log_error = Some(e);
            }
        }
    };
    let (model, state) = train_model(
        kind,
        &config.model,
        &prepared.split,
        &prepared.graph,
        &config.train,
        &mut on_epoch,
    )?;
    if let Some(source) = log_error.take() {
        return Err(CliError::Output {
            path: log_path,
            source,
        });
    }
    log.flush().map_err(|source| CliError::Output {
        path: log_path.clone(),
        source,
    })?;
    log::info!("{kind} finished in {:.1}s", started.elapsed().as_secs_f64());

    let ckpt = dir.join(CHECKPOINT_FILE);
    save_params(&model.params(), &ckpt).map_err(|e| match e {
        crossgr::Error::Io { path, source } => CliError::Output { path, source },
        other => other.into(),
    })?;
    let sidecar = ModelSidecar {
        version: SIDECAR_VERSION,
        kind,
        settings: config.model.clone(),
        train: config.train.clone(),
        target_market: config.target.clone(),
        source_markets: config.sources.clone(),
        vocab_digest: prepared.split.vocab.digest(),
        num_users: prepared.split.num_users(),
        num_items: prepared.split.num_items(),
        split_seed: config.seed,
        best_epoch: state.as_ref().map(|s| s.best_epoch),
        best_valid_ndcg: state.as_ref().map(|s| s.best_valid_ndcg),
    };
    write_file(&dir.join(SIDECAR_FILE), sidecar.to_json())?;
    Ok((model, sidecar))
}

pub fn train(
    config: &RunConfig,
    kind: ModelKind,
    out: &mut dyn Write,
) -> Result<ModelSidecar, CliError> {
    let prepared = prepare(config)?;
    let dir = config.run_dir();
    let (_, sidecar) = train_into(config, kind, &prepared, &dir)?;
    let summary = match (sidecar.best_epoch, sidecar.best_valid_ndcg) {
        (Some(epoch), Some(ndcg)) => format!(
            "{kind}: best epoch {epoch}, valid NDCG@{} {ndcg:.4}; checkpoint {}\n",
            config.train.eval_k,
            dir.join(CHECKPOINT_FILE).display()
        ),
        _ => format!(
            "{kind}: fitted; checkpoint {}\n",
            dir.join(CHECKPOINT_FILE).display()
        ),
    };
    say(out, &summary)?;
    Ok(sidecar)
}

fn write_report(
    config: &RunConfig,
    report: &EvalReport,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let dir = config.run_dir();
    create_dir(&dir)?;
    write_file(&dir.join(REPORT_JSON), report.to_json())?;
    write_file(&dir.join(REPORT_TXT), report.to_table())?;
    say(out, &report.to_table())
}

fn unique_name(report: &EvalReport, base: &str, path: &Path) -> String {
    if report.entries.iter().any(|e| e.model == base) {
        format!("{base}:{}", path.display())
    } else {
        base.to_string()
    }
}

pub fn eval(
    config: &RunConfig,
    checkpoints: &[PathBuf],
    out: &mut dyn Write,
) -> Result<EvalReport, CliError> {
    let prepared = prepare(config)?;
    let candidates = test_candidates(config, &prepared.split);
    let digest = config_digest(&config.to_toml());
    let default = [config.run_dir().join(CHECKPOINT_FILE)];
    let paths = if checkpoints.is_empty() {
        &default[..]
    } else {
        checkpoints
    };
    let mut report = EvalReport::default();
    for path in paths {
        let sidecar = ModelSidecar::load(path.with_extension("json"))?;
        sidecar.check_compatible(&prepared.split, config.seed)?;
        let params = load_params(path)?;
        let mut model = Model::build(
            sidecar.kind,
            &sidecar.settings,
            &prepared.graph,
            sidecar.train.seed,
        )?;
        model.load_params(&params)?;
        let name = unique_name(&report, sidecar.kind.token(), path);
        let scorer = model.scorer()?;
        let entry = evaluate_entry(
            &name,
            scorer.as_ref(),
            &prepared.split,
            &candidates,
            &config.eval.ks,
            config.seed,
            &digest,
        )?;
        report.push(entry);
    }
    write_report(config, &report, out)?;
    Ok(report)
}

pub fn compare(
    config: &RunConfig,
    kinds: &[ModelKind],
    out: &mut dyn Write,
) -> Result<EvalReport, CliError> {
    if kinds.is_empty() {
        return Err(CliError::Config("no models to compare".into()));
    }
    let prepared = prepare(config)?;
    let candidates = test_candidates(config, &prepared.split);
    let digest = config_digest(&config.to_toml());
    let mut report = EvalReport::default();
    let mut failures = Vec::new();
    for &kind in kinds {
        let dir = config.run_dir().join(kind.token());
        let result = train_into(config, kind, &prepared, &dir).and_then(|(model, _)| {
            let scorer = model.scorer()?;
            Ok(evaluate_entry(
                kind.token(),
                scorer.as_ref(),
                &prepared.split,
                &candidates,
                &config.eval.ks,
                config.seed,
                &digest,
            )?)
        });
        match result {
            Ok(entry) => report.push(entry),
            Err(e) => {
                log::error!("{kind}: {e}");
                failures.push(format!("{kind}: {e}"));
            }
        }
    }
    write_report(config, &report, out)?;
    if failures.is_empty() {
        Ok(report)
    } else {
        Err(CliError::Partial {
            failed: failures.len(),
            total: kinds.len(),
            detail: failures.join("; "),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub latent_dim: usize,
    pub num_gin_layers: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub negatives_per_positive: usize,
    pub best_epoch: usize,
    pub valid_ndcg: f64,
}

fn or_base<T: Clone>(list: &[T], base: T) -> Vec<T> {
    if list.is_empty() {
        vec![base]
    } else {
        list.to_vec()
    }
}

/// Trains one model per grid point (no checkpoints) and writes `grid.json`
/// with every point's best validation NDCG, best first.
pub fn grid(
    config: &RunConfig,
    kind: ModelKind,
    out: &mut dyn Write,
) -> Result<Vec<GridPoint>, CliError> {
    if !kind.is_trainable() {
        return Err(CliError::Config(format!(
            "{kind} has no hyper-parameters to search"
        )));
    }
    let prepared = prepare(config)?;
    let g = &config.grid;
    let base = &config.model.crossgr;
    let mut points = Vec::new();
    for &d in &or_base(&g.latent_dim, base.latent_dim) {
        for &layers in &or_base(&g.num_gin_layers, base.num_gin_layers) {
            for &lr in &or_base(&g.learning_rate, config.train.learning_rate) {
                for &wd in &or_base(&g.weight_decay, config.train.weight_decay) {
                    for &neg in &or_base(
                        &g.negatives_per_positive,
                        config.train.negatives_per_positive,
                    ) {
                        let mut c = config.clone();
                        c.model.crossgr.latent_dim = d;
                        c.model.crossgr.gin_mlp_hidden = d;
                        c.model.crossgr.scorer_hidden = 4 * d;
                        c.model.crossgr.num_gin_layers = layers;
                        c.train.learning_rate = lr;
                        c.train.weight_decay = wd;
                        c.train.negatives_per_positive = neg;
                        c.train.validate()?;
                        c.model.crossgr.validate()?;
                        let (_, state) = train_model(
                            kind,
                            &c.model,
                            &prepared.split,
                            &prepared.graph,
                            &c.train,
                            &mut |_| {},
                        )?;
                        let state = state.expect("trainable kind");
                        log::info!(
                            "grid d={d} layers={layers} lr={lr} wd={wd} neg={neg}: {:.4}",
                            state.best_valid_ndcg
                        );
                        points.push(GridPoint {
                            latent_dim: d,
                            num_gin_layers: layers,
                            learning_rate: lr,
                            weight_decay: wd,
                            negatives_per_positive: neg,
                            best_epoch: state.best_epoch,
                            valid_ndcg: state.best_valid_ndcg,
                        });
                    }
                }
            }
        }
    }
    points.sort_by(|a, b| b.valid_ndcg.total_cmp(&a.valid_ndcg));
    let dir = config.run_dir();
    create_dir(&dir)?;
    write_file(
        &dir.join("grid.json"),
        serde_json::to_string_pretty(&points).expect("grid serializes"),
    )?;
    let mut text = format!(
        "{:>4} {:>6} {:>8} {:>9} {:>4} {:>6} {:>8}\n",
        "d", "layers", "lr", "wd", "neg", "epoch", "ndcg"
    );
    for p in &points {
        text.push_str(&format!(
            "{:>4} {:>6} {:>8} {:>9} {:>4} {:>6} {:>8.4}\n",
            p.latent_dim,
            p.num_gin_layers,
            p.learning_rate,
            p.weight_decay,
            p.negatives_per_positive,
            p.best_epoch,
            p.valid_ndcg
        ));
    }
    say(out, &text)?;
    Ok(points)
}
