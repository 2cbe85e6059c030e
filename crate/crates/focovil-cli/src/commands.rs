//! The four pipeline commands: corpus generation, training, evaluation,
//! and the ablation experiment.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use focovil_core::evaluation::{
    extract_embeddings, full_report, split_cross_view, split_scene_disjoint,
};
use focovil_core::model::{ModelHyper, ModelParams};
use focovil_core::skeleton::{preprocess_corpus, MultiViewCorpus};
use focovil_core::synth::generate_corpus;
use focovil_core::training::{
    self, run_ablation_single, summarize_ablation, Ablation, AblationConfig, AblationRow,
    AdamState,
};

use crate::checkpoint::{self, Checkpoint};
use crate::config::{self, RunConfig};
use crate::corpus_io;
use crate::errors::{CliError, CliResult};
use crate::report;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_LOG_FILE: &str = "train-log.jsonl";

/// `gen-data`: generate the configured corpus and write it out.
pub fn gen_data(config_path: &Path, out: &Path) -> CliResult<()> {
    let cfg = RunConfig::load(config_path)?;
    let corpus = generate_corpus(&cfg.generator)?;
    let n = corpus_io::write_corpus(out, &corpus)?;
    println!("wrote {n} records to {}", out.display());
    Ok(())
}

pub struct TrainArgs {
    pub config: PathBuf,
    pub data: PathBuf,
    pub out: PathBuf,
    /// Overrides `train.ablation` from the config document.
    pub ablation: Option<String>,
    pub resume: Option<PathBuf>,
    /// Drop this view from the training corpus (the cross-view
    /// protocol's held-out view).
    pub exclude_view: Option<u32>,
}

/// `train`: fit one variant and leave a checkpoint, an epoch log, and a
/// resolved-config snapshot in the output directory.
pub fn train(args: &TrainArgs, command_line: &str) -> CliResult<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(name) = &args.ablation {
        cfg.train.ablation = Ablation::parse(name)?;
    }
    let variant = cfg.train.ablation;

    let corpus = corpus_io::read_corpus(&args.data)?;
    let corpus = match args.exclude_view {
        Some(v) => corpus.filter_views(|x| x != v)?,
        None => corpus,
    };
    let preprocessed = preprocess_corpus(&corpus, cfg.model.target_len, variant.aligns_views())?;
    let set = training::TrainingSet::from_corpus(&preprocessed)?;
    let hyper = ModelHyper::new(set.input_dim(), cfg.model.hidden_dim, cfg.model.n_layers)?;

    let (params, adam, start_epoch) = match &args.resume {
        Some(path) => resume_state(path, &cfg, &hyper, variant)?,
        None => {
            let params = ModelParams::init(&hyper, cfg.train.seed)?;
            let adam = AdamState::new(&params);
            (params, adam, 0)
        }
    };
    if cfg.train.epochs < start_epoch {
        return Err(CliError::Config(format!(
            "checkpoint already holds {start_epoch} epoch(s); config asks for {}",
            cfg.train.epochs
        )));
    }

    std::fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    config::write_snapshot(&args.out, &cfg, command_line)?;

    let log_path = args.out.join(TRAIN_LOG_FILE);
    let log_file = std::fs::File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?;
    let mut log_writer = std::io::BufWriter::new(log_file);

    // One epoch per call so the log flushes as training progresses; the
    // shuffle stream and learning rate are keyed by the absolute epoch
    // index, so this matches a single uninterrupted call bit for bit.
    let mut params = params;
    let mut adam = adam;
    for epoch in start_epoch..cfg.train.epochs {
        let mut epoch_cfg = cfg.train.clone();
        epoch_cfg.epochs = epoch + 1;
        let outcome = training::train_from(&set, params, adam, epoch, &epoch_cfg)?;
        params = outcome.params;
        adam = outcome.adam;
        for stats in &outcome.log {
            writeln!(log_writer, "{}", report::epoch_log_line(stats))
                .map_err(|e| CliError::io(&log_path, e))?;
            println!("{}", training::format_epoch(stats));
        }
        log_writer.flush().map_err(|e| CliError::io(&log_path, e))?;
    }

    let ck = Checkpoint::new(
        hyper,
        variant,
        cfg.model.target_len,
        cfg.train.seed,
        cfg.train.epochs,
        params,
        adam,
    );
    let ck_path = args.out.join(CHECKPOINT_FILE);
    checkpoint::save(&ck_path, &ck)?;
    println!(
        "trained {} to epoch {}; checkpoint at {}",
        variant.name(),
        cfg.train.epochs,
        ck_path.display()
    );
    Ok(())
}

/// Loads a checkpoint for resuming and cross-checks it against the
/// resolved configuration.
fn resume_state(
    path: &Path,
    cfg: &RunConfig,
    hyper: &ModelHyper,
    variant: Ablation,
) -> CliResult<(ModelParams, AdamState, usize)> {
    let ck = checkpoint::load(path)?;
    if ck.hyper != *hyper {
        return Err(CliError::Shape(format!(
            "checkpoint {} was trained with {:?}, this run needs {:?}",
            path.display(),
            ck.hyper,
            hyper
        )));
    }
    let mismatch = |what: &str, ck_val: String, cfg_val: String| {
        CliError::Config(format!(
            "checkpoint {} disagrees with the config on {what}: {ck_val} vs {cfg_val}",
            path.display()
        ))
    };
    if ck.ablation != variant {
        return Err(mismatch(
            "the training variant",
            ck.ablation.name().to_string(),
            variant.name().to_string(),
        ));
    }
    if ck.seed != cfg.train.seed {
        return Err(mismatch(
            "the seed",
            ck.seed.to_string(),
            cfg.train.seed.to_string(),
        ));
    }
    if ck.target_len != cfg.model.target_len {
        return Err(mismatch(
            "the resample length",
            ck.target_len.to_string(),
            cfg.model.target_len.to_string(),
        ));
    }
    Ok((ck.params, ck.adam, ck.epochs_done))
}

/// Which rows form the held-out test side of an evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Split {
    /// Test on one view, train on the rest.
    CrossView(u32),
    /// Hold out whole scenes; the fraction is the test share.
    SceneDisjoint(f64),
}

impl Split {
    /// Accepts `cross-view:ID` and `scene-disjoint:FRACTION`.
    pub fn parse(s: &str) -> CliResult<Split> {
        let (kind, value) = s.split_once(':').ok_or_else(|| {
            CliError::Config(format!(
                "split {s:?} must look like cross-view:ID or scene-disjoint:FRACTION"
            ))
        })?;
        match kind {
            "cross-view" => value
                .parse::<u32>()
                .map(Split::CrossView)
                .map_err(|e| CliError::Config(format!("bad view id {value:?}: {e}"))),
            "scene-disjoint" => value
                .parse::<f64>()
                .map(Split::SceneDisjoint)
                .map_err(|e| CliError::Config(format!("bad test fraction {value:?}: {e}"))),
            other => Err(CliError::Config(format!(
                "unknown split kind {other:?}; use cross-view or scene-disjoint"
            ))),
        }
    }
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub split: String,
    pub report: PathBuf,
    /// Optional config for probe/clustering settings; defaults apply
    /// without it.
    pub config: Option<PathBuf>,
    /// Optional embedding export destination.
    pub embeddings: Option<PathBuf>,
}

/// `eval`: embed a corpus with a trained checkpoint, split it, and
/// report classification and clustering quality.
pub fn eval(args: &EvalArgs) -> CliResult<()> {
    let split = Split::parse(&args.split)?;
    let (probe, cluster_seed, split_seed) = match &args.config {
        Some(path) => {
            let cfg = RunConfig::load(path)?;
            (cfg.probe, cfg.eval.cluster_seed, cfg.eval.split_seed)
        }
        None => (Default::default(), 0, 0),
    };
    let ck = checkpoint::load(&args.checkpoint)?;
    let corpus = corpus_io::read_corpus(&args.data)?;
    let expected_input = 3 * corpus.topology().n_joints;
    if expected_input != ck.hyper.input_dim {
        return Err(CliError::Shape(format!(
            "checkpoint {} expects input dimension {}, corpus {} provides {}",
            args.checkpoint.display(),
            ck.hyper.input_dim,
            args.data.display(),
            expected_input
        )));
    }
    let preprocessed = preprocess_corpus(&corpus, ck.target_len, ck.ablation.aligns_views())?;
    let embeddings = extract_embeddings(&preprocessed, &ck.params)?;
    let (train_set, test_set) = match split {
        Split::CrossView(v) => split_cross_view(&embeddings, v)?,
        Split::SceneDisjoint(frac) => split_scene_disjoint(&embeddings, frac, split_seed)?,
    };
    let metrics = full_report(&train_set, &test_set, &probe, cluster_seed)?;
    report::write_metrics_report(&args.report, &metrics)?;
    if let Some(path) = &args.embeddings {
        report::write_embeddings_csv(path, &embeddings)?;
    }
    print!("{}", report::render_metrics(&metrics));
    println!("report written to {}", args.report.display());
    Ok(())
}

/// `ablate`: run the configured variant × seed grid, write the table and
/// its machine-readable twin, and print the trend verdict.
pub fn ablate(
    config_path: &Path,
    data: &Path,
    out: &Path,
    threads: Option<usize>,
    command_line: &str,
) -> CliResult<()> {
    let cfg = RunConfig::load(config_path)?;
    let ab_cfg = cfg.ablation_config();
    ab_cfg.validate()?;
    let corpus = corpus_io::read_corpus(data)?;
    let threads = threads.unwrap_or_else(|| {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    });
    let rows = run_ablation_parallel(&corpus, &ab_cfg, threads)?;
    let summary = summarize_ablation(&rows);
    let trend = report::check_trend(&summary);
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    config::write_snapshot(out, &cfg, command_line)?;
    let table = report::write_ablation_artifacts(out, &rows, &summary, &trend)?;
    print!("{table}");
    Ok(())
}

/// Fans the (variant, seed) grid out over a fixed-size thread pool.
/// Each run only depends on its own pair, so the schedule cannot change
/// any result; rows come back in grid order.
pub fn run_ablation_parallel(
    corpus: &MultiViewCorpus,
    cfg: &AblationConfig,
    threads: usize,
) -> CliResult<Vec<AblationRow>> {
    let pairs: Vec<(Ablation, u64)> = cfg
        .variants
        .iter()
        .flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let n = pairs.len();
    let workers = threads.clamp(1, n.max(1));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<focovil_core::Result<AblationRow>>>> =
        (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let (variant, seed) = pairs[i];
                let started = std::time::Instant::now();
                let res = run_ablation_single(corpus, variant, seed, cfg);
                if let Ok(row) = &res {
                    println!(
                        "finished {} seed {}: 1-nn {:.4} purity {:.4} ({:.1?})",
                        variant.name(),
                        seed,
                        row.one_nn_accuracy,
                        row.gmm_purity,
                        started.elapsed()
                    );
                }
                *slots[i].lock().expect("slot lock") = Some(res);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| {
            slot.into_inner()
                .expect("slot lock")
                .expect("worker filled every slot")
                .map_err(CliError::from)
        })
        .collect()
}
