mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use rlsum::classifier::{accuracy, train_classifier, ClassifierModel};
use rlsum::dataset::{generate_synthetic, load_manifest, make_folds, save_dataset, Dataset, Fold, LoadOptions};
use rlsum::qnet::QNetwork;
use rlsum::summary::{evaluate, evaluate_summaries, summarize_all, Summary};
use rlsum::trainer::train_dqsn;

use config::{Overrides, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "rlsum", version, about = "Weakly-supervised sequence summarisation with deep Q-learning")]
struct Cli {
    /// Flat JSON config; explicit flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic labelled dataset (manifest + feature files).
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train and freeze the sequence classifier.
    TrainClassifier {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        split: SplitArgs,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train the summarisation Q-network.
    TrainDqsn {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Frozen classifier checkpoint directory (needed for rewards g and l).
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[command(flatten)]
        split: SplitArgs,
        /// Also write every transition of every episode to episodes.jsonl.
        #[arg(long)]
        log_transitions: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Write one summary JSON per video.
    Summarize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score summaries against human summaries.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory with fold-K checkpoints and folds.json, or one checkpoint with --no-cv.
        #[arg(long, conflicts_with = "summaries")]
        models: Option<PathBuf>,
        /// Evaluate existing summary files instead of generating them.
        #[arg(long)]
        summaries: Option<PathBuf>,
        #[arg(long)]
        no_cv: bool,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print checkpoint, manifest or feature-file metadata.
    Inspect { path: PathBuf },
}

#[derive(Args, Debug, Clone)]
struct SplitArgs {
    /// Train on the training split of this fold.
    #[arg(long, conflicts_with_all = ["cv", "all"])]
    fold: Option<usize>,
    /// Train one model per fold into fold-K subdirectories.
    #[arg(long, conflicts_with = "all")]
    cv: bool,
    /// Train on every video.
    #[arg(long)]
    all: bool,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn classify(e: anyhow::Error) -> Self {
        let usage = e.chain().any(|cause| {
            if let Some(err) = cause.downcast_ref::<rlsum::Error>() {
                return match err {
                    rlsum::Error::Config(_)
                    | rlsum::Error::Validation(_)
                    | rlsum::Error::Dimension { .. }
                    | rlsum::Error::Format { .. } => true,
                    rlsum::Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
                    _ => false,
                };
            }
            cause.downcast_ref::<serde_json::Error>().is_some()
        });
        if usage {
            Failure::Usage(e)
        } else {
            Failure::Runtime(e)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("RLSUM_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn resolve(cli_config: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, Failure> {
    RunConfig::resolve(cli_config, overrides).map_err(Failure::Usage)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg_path = cli.config.as_deref();
    match cli.command {
        Command::GenSynthetic { out, overrides } => {
            let cfg = resolve(cfg_path, &overrides)?;
            gen_synthetic(&cfg, &out).map_err(Failure::classify)
        }
        Command::TrainClassifier {
            manifest,
            out,
            split,
            overrides,
        } => {
            let cfg = resolve(cfg_path, &overrides)?;
            cmd_train_classifier(&cfg, &manifest, &out, &split).map_err(Failure::classify)
        }
        Command::TrainDqsn {
            manifest,
            out,
            classifier,
            split,
            log_transitions,
            overrides,
        } => {
            let cfg = resolve(cfg_path, &overrides)?;
            cmd_train_dqsn(&cfg, &manifest, &out, classifier.as_deref(), &split, log_transitions)
                .map_err(Failure::classify)
        }
        Command::Summarize {
            manifest,
            model,
            out,
            overrides,
        } => {
            let cfg = resolve(cfg_path, &overrides)?;
            cmd_summarize(&cfg, &manifest, &model, &out).map_err(Failure::classify)
        }
        Command::Evaluate {
            manifest,
            models,
            summaries,
            no_cv,
            out,
            overrides,
        } => {
            let cfg = resolve(cfg_path, &overrides)?;
            let source = match (models, summaries) {
                (Some(m), None) => Source::Models { dir: m, cv: !no_cv },
                (None, Some(s)) => Source::Summaries(s),
                _ => return Err(Failure::Usage(anyhow::anyhow!("pass exactly one of --models or --summaries"))),
            };
            cmd_evaluate(&cfg, &manifest, source, &out).map_err(Failure::classify)
        }
        Command::Inspect { path } => inspect(&path).map_err(Failure::classify),
    }
}

fn gen_synthetic(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let data = generate_synthetic(&cfg.synthetic())?;
    let manifest = save_dataset(&data.dataset, out)?;
    cfg.echo(out)?;
    println!("{}", manifest.display());
    Ok(())
}

/// Loads a manifest and unit-normalises its features.
fn load(manifest: &Path, cfg: &RunConfig) -> anyhow::Result<Dataset> {
    let (data, report) = load_manifest(
        manifest,
        LoadOptions {
            default_shot_length: cfg.shot_length,
        },
    )?;
    for issue in &report.issues {
        log::warn!("{}: {}: {}", issue.video_id.as_deref().unwrap_or("-"), issue.field, issue.message);
    }
    Ok(data.l2_normalised().0)
}

/// Test-fold membership by video id, stored next to fold checkpoints.
#[derive(Serialize, Deserialize)]
struct FoldFile {
    folds: Vec<Vec<String>>,
}

impl FoldFile {
    fn from_folds(data: &Dataset, folds: &[Fold]) -> Self {
        Self {
            folds: folds
                .iter()
                .map(|f| f.test.iter().map(|&i| data.videos[i].id.clone()).collect())
                .collect(),
        }
    }

    fn to_folds(&self, data: &Dataset) -> anyhow::Result<Vec<Fold>> {
        let mut folds = Vec::with_capacity(self.folds.len());
        for ids in &self.folds {
            let mut test = Vec::with_capacity(ids.len());
            for id in ids {
                match data.videos.iter().position(|v| &v.id == id) {
                    Some(i) => test.push(i),
                    None => bail!("fold file names video {id}, which is not in the manifest"),
                }
            }
            test.sort_unstable();
            let train = (0..data.len()).filter(|i| test.binary_search(i).is_err()).collect();
            folds.push(Fold { train, test });
        }
        Ok(folds)
    }
}

/// One training job: output directory, train and held-out indices.
struct Job {
    fold: Option<usize>,
    out: PathBuf,
    train: Vec<usize>,
    test: Vec<usize>,
}

fn jobs(cfg: &RunConfig, data: &Dataset, split: &SplitArgs, out: &Path) -> anyhow::Result<Vec<Job>> {
    if split.all {
        return Ok(vec![Job {
            fold: None,
            out: out.to_path_buf(),
            train: (0..data.len()).collect(),
            test: vec![],
        }]);
    }
    let folds = make_folds(data, cfg.folds, cfg.seed)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("folds.json"), &FoldFile::from_folds(data, &folds))?;
    let selected: Vec<usize> = if split.cv {
        (0..folds.len()).collect()
    } else {
        let k = split.fold.unwrap_or(0);
        if k >= folds.len() {
            return Err(rlsum::Error::Config(format!("fold {k} out of range for {} folds", folds.len())).into());
        }
        vec![k]
    };
    Ok(selected
        .into_iter()
        .map(|k| Job {
            fold: Some(k),
            out: if split.cv { out.join(format!("fold-{k}")) } else { out.to_path_buf() },
            train: folds[k].train.clone(),
            test: folds[k].test.clone(),
        })
        .collect())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn cmd_train_classifier(cfg: &RunConfig, manifest: &Path, out: &Path, split: &SplitArgs) -> anyhow::Result<()> {
    let data = load(manifest, cfg)?;
    cfg.echo(out)?;
    for job in jobs(cfg, &data, split, out)? {
        let train = data.subset(&job.train);
        let (model, log) = train_classifier(&train, &cfg.classifier())?;
        model.save(&job.out)?;
        cfg.echo(&job.out)?;
        let mut w = create(&job.out.join("classifier_log.jsonl"))?;
        for entry in &log {
            writeln!(w, "{}", serde_json::to_string(entry)?)?;
        }
        w.flush()?;
        let train_acc = accuracy(&model, &train)?;
        let label = job.fold.map_or("all".to_string(), |k| format!("fold {k}"));
        if job.test.is_empty() {
            println!("{label}: train accuracy {train_acc:.3}");
        } else {
            let test_acc = accuracy(&model, &data.subset(&job.test))?;
            println!("{label}: train accuracy {train_acc:.3}, held-out accuracy {test_acc:.3}");
        }
    }
    Ok(())
}

fn classifier_for(dir: &Path, fold: Option<usize>) -> anyhow::Result<ClassifierModel> {
    let per_fold = fold.map(|k| dir.join(format!("fold-{k}")));
    let chosen = match per_fold {
        Some(p) if p.join("classifier.json").exists() => p,
        _ => dir.to_path_buf(),
    };
    ClassifierModel::load(&chosen).with_context(|| format!("loading classifier from {}", chosen.display()))
}

fn cmd_train_dqsn(
    cfg: &RunConfig,
    manifest: &Path,
    out: &Path,
    classifier: Option<&Path>,
    split: &SplitArgs,
    log_transitions: bool,
) -> anyhow::Result<()> {
    let trainer = cfg.trainer()?;
    if trainer.rewards.needs_classifier() && classifier.is_none() {
        return Err(rlsum::Error::Config(format!(
            "rewards {:?} include g or l, which need --classifier",
            cfg.rewards
        ))
        .into());
    }
    let data = load(manifest, cfg)?;
    cfg.echo(out)?;
    for job in jobs(cfg, &data, split, out)? {
        let clf = match classifier {
            Some(dir) if trainer.rewards.needs_classifier() => Some(classifier_for(dir, job.fold)?),
            _ => None,
        };
        let train = data.subset(&job.train);
        std::fs::create_dir_all(&job.out).with_context(|| format!("creating {}", job.out.display()))?;
        cfg.echo(&job.out)?;
        let mut log = create(&job.out.join("train_log.jsonl"))?;
        let mut steps = if log_transitions {
            Some(create(&job.out.join("episodes.jsonl"))?)
        } else {
            None
        };
        let outcome = train_dqsn(&train, clf.as_ref(), &trainer, |entry, records, net| {
            let io = |e: std::io::Error| rlsum::Error::Io {
                path: job.out.clone(),
                source: e,
            };
            writeln!(log, "{}", serde_json::to_string(entry)?).map_err(io)?;
            if let Some(w) = steps.as_mut() {
                for r in records {
                    writeln!(w, "{}", serde_json::to_string(r)?).map_err(io)?;
                }
            }
            let done = entry.episode + 1;
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
                net.save(&job.out.join("checkpoints").join(format!("episode-{done}")))?;
            }
            Ok(())
        })?;
        log.flush()?;
        if let Some(mut w) = steps {
            w.flush()?;
        }
        outcome.network.save(&job.out)?;
        let n = outcome.log.len();
        let tail = &outcome.log[n - (n / 10).max(1).min(n)..];
        let mean_return = tail.iter().map(|e| e.episode_return).sum::<f64>() / tail.len().max(1) as f64;
        let label = job.fold.map_or("all".to_string(), |k| format!("fold {k}"));
        println!(
            "{label}: {n} episodes, {} updates, last-decile mean return {mean_return:.3}",
            outcome.updates
        );
    }
    Ok(())
}

fn load_qnet(dir: &Path, data: &Dataset) -> anyhow::Result<QNetwork> {
    let net = QNetwork::load(dir).with_context(|| format!("loading Q-network from {}", dir.display()))?;
    if let Some(d) = data.feature_dim() {
        if d != net.meta().feature_dim {
            return Err(rlsum::Error::Dimension {
                context: "checkpoint feature dimension vs manifest",
                expected: net.meta().feature_dim.to_string(),
                actual: d.to_string(),
            }
            .into());
        }
    }
    Ok(net)
}

fn write_summaries(dir: &Path, summaries: &[Summary]) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for s in summaries {
        write_json(&dir.join(format!("{}.json", s.video_id)), s)?;
    }
    Ok(())
}

fn cmd_summarize(cfg: &RunConfig, manifest: &Path, model: &Path, out: &Path) -> anyhow::Result<()> {
    let data = load(manifest, cfg)?;
    let net = load_qnet(model, &data)?;
    let videos: Vec<_> = data.videos.iter().collect();
    let summaries = summarize_all(&net, &videos, &cfg.summary()?, cfg.parallel)?;
    write_summaries(out, &summaries)?;
    cfg.echo(out)?;
    println!("wrote {} summaries to {}", summaries.len(), out.display());
    Ok(())
}

enum Source {
    Models { dir: PathBuf, cv: bool },
    Summaries(PathBuf),
}

fn cmd_evaluate(cfg: &RunConfig, manifest: &Path, source: Source, out: &Path) -> anyhow::Result<()> {
    let data = load(manifest, cfg)?;
    let (report, summaries) = match source {
        Source::Models { dir, cv: true } => {
            let fold_file = dir.join("folds.json");
            let folds = if fold_file.exists() {
                let text = std::fs::read_to_string(&fold_file).with_context(|| format!("reading {}", fold_file.display()))?;
                serde_json::from_str::<FoldFile>(&text)?.to_folds(&data)?
            } else {
                log::warn!("{} missing; recomputing folds from the seed", fold_file.display());
                make_folds(&data, cfg.folds, cfg.seed)?
            };
            let models = (0..folds.len())
                .map(|k| load_qnet(&dir.join(format!("fold-{k}")), &data))
                .collect::<anyhow::Result<Vec<_>>>()?;
            evaluate(&data, &models, &folds, &cfg.summary()?, cfg.parallel)?
        }
        Source::Models { dir, cv: false } => {
            let net = load_qnet(&dir, &data)?;
            let everything = vec![Fold {
                train: vec![],
                test: (0..data.len()).collect(),
            }];
            evaluate(&data, &[net], &everything, &cfg.summary()?, cfg.parallel)?
        }
        Source::Summaries(dir) => {
            let mut summaries = Vec::with_capacity(data.len());
            for v in &data.videos {
                let path = dir.join(format!("{}.json", v.id));
                let text = std::fs::read_to_string(&path).map_err(|e| rlsum::Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
                summaries.push(serde_json::from_str::<Summary>(&text)?);
            }
            let everything = vec![Fold {
                train: vec![],
                test: (0..data.len()).collect(),
            }];
            let report = evaluate_summaries(&data, &summaries, &everything)?;
            (report, summaries)
        }
    };
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("report.json"), &report)?;
    let table = report.to_table();
    std::fs::write(out.join("report.txt"), &table).with_context(|| format!("writing {}", out.display()))?;
    write_summaries(&out.join("summaries"), &summaries)?;
    cfg.echo(out)?;
    print!("{table}");
    Ok(())
}

fn inspect(path: &Path) -> anyhow::Result<()> {
    if path.is_dir() {
        let mut found = false;
        for (file, kind) in [("classifier.json", "classifier"), ("qnet.json", "Q-network")] {
            let p = path.join(file);
            if p.exists() {
                found = true;
                let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p)?)?;
                println!("{kind} checkpoint {}", path.display());
                println!("{}", serde_json::to_string_pretty(&meta)?);
            }
        }
        if path.join("manifest.json").exists() {
            found = true;
            inspect(&path.join("manifest.json"))?;
        }
        if !found {
            return Err(rlsum::Error::Config(format!("nothing to inspect in {}", path.display())).into());
        }
        return Ok(());
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("rlsn") => {
            let params = rlsum::neural::ParameterSet::load(path)?;
            for p in params.iter() {
                println!("{:<28} {}x{}", p.name, p.value.rows(), p.value.cols());
            }
        }
        Some("rlsf") => {
            let m = rlsum::dataset::read_features(path)?;
            println!("frames {} dim {}", m.rows(), m.cols());
        }
        _ => {
            let (data, report) = load_manifest(path, LoadOptions::default())?;
            let labelled = data.videos.iter().filter(|v| v.label.is_some()).count();
            println!("manifest {}", path.display());
            println!("categories {}: {}", data.num_classes(), data.categories.join(", "));
            println!("videos {} ({labelled} labelled)", data.len());
            if let Some(d) = data.feature_dim() {
                println!("feature dim {d}");
            }
            let frames: usize = data.videos.iter().map(|v| v.frames()).sum();
            println!("frames {frames}");
            print!("{report}");
        }
    }
    Ok(())
}
