//! `seeable` command-line tool.

mod plot;
mod preview;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use seeable::detector::{read_scores, write_scores, ScoreRow};
use seeable::factory::SubmaskScheme;
use seeable::losses::Objective;
use seeable::prototypes::make_simplex_prototypes;
use seeable::training::{
    evaluate_auc, read_log, synth_corpus, train, write_log, Checkpoint, CorpusSpec, Label,
    Manifest, Split, TrainConfig,
};
use seeable::Error;

#[derive(Debug, Parser)]
#[command(
    name = "seeable",
    version,
    about = "One-class deepfake detection on soft discrepancies"
)]
struct Cli {
    /// TrainConfig file (TOML). Its values replace the defaults; flags
    /// replace both.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a regular-simplex prototype set.
    Prototypes {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a contact sheet of synthesized soft discrepancies.
    FactoryPreview {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = SchemeArg::Grid)]
        scheme: SchemeArg,
        /// Number of sheet rows.
        #[arg(long, default_value_t = 8)]
        n: usize,
        /// Output PNG.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the synthetic face corpus and its manifest.
    SynthCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        videos: usize,
        #[arg(long, default_value_t = 20)]
        test_real: usize,
        #[arg(long, default_value_t = 20)]
        test_fake: usize,
        #[arg(long, default_value_t = 4)]
        frames: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Train a toy encoder on the real training videos of a manifest.
    Train(TrainArgs),
    /// Score the videos of a manifest split with a checkpoint.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Output score table (CSV).
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the AUC of a score table.
    Eval {
        #[arg(long)]
        scores: PathBuf,
    },
    /// Draw loss curves and score histograms as SVG.
    Plot {
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for `checkpoint.bin`, `train_log.csv` and
    /// `config.toml`.
    #[arg(long)]
    out: PathBuf,
    /// Starting point before the config file is applied.
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_start: Option<f64>,
    #[arg(long)]
    lr_end: Option<f64>,
    #[arg(long)]
    lambda_max: Option<f64>,
    #[arg(long, value_enum)]
    objective: Option<ObjectiveArg>,
    /// Synthesize batches inline instead of on a producer thread.
    #[arg(long)]
    strict: bool,
    /// Keep λ at its maximum from the first epoch.
    #[arg(long)]
    no_lambda_ramp: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SchemeArg {
    Grid,
    Meshgrid,
    Hull,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Paper,
    Desk,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Seeable,
    Supcon,
    CrossEntropy,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Seeable => Objective::Seeable,
            ObjectiveArg::Supcon => Objective::Supcon,
            ObjectiveArg::CrossEntropy => Objective::CrossEntropy,
        }
    }
}

/// Failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Dimension(_) | Error::Domain(_) => 1,
            Error::Numeric(_) => 3,
            _ => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Failure::usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::usage(e.to_string()))?;
    }
    match &cli.command {
        Command::Prototypes { dim, count, out } => cmd_prototypes(*dim, *count, out),
        Command::FactoryPreview {
            manifest,
            scheme,
            n,
            out,
        } => {
            require_file(manifest)?;
            require_parent(out)?;
            let cfg = base_config(&cli, Preset::Desk)?;
            let scheme = match scheme {
                SchemeArg::Grid => {
                    SubmaskScheme::grid(cfg.grid_rows, cfg.grid_cols, cfg.feather_sigma)
                }
                SchemeArg::Meshgrid => {
                    SubmaskScheme::meshgrid(cfg.grid_rows, cfg.grid_cols, cfg.feather_sigma)
                }
                SchemeArg::Hull => SubmaskScheme::convex_hull(cfg.feather_sigma),
            };
            if *n == 0 {
                return Err(Failure::usage("--n must be at least 1"));
            }
            let manifest = Manifest::load(manifest)?;
            preview::contact_sheet(
                &manifest,
                &scheme,
                &cfg.perturbation,
                *n,
                cli.seed.unwrap_or(0),
                out,
            )
        }
        Command::SynthCorpus {
            out,
            videos,
            test_real,
            test_fake,
            frames,
            size,
        } => {
            let spec = CorpusSpec {
                n_videos: *videos,
                n_test_real: *test_real,
                n_test_fake: *test_fake,
                frames_per_video: *frames,
                image_size: *size,
                seed: cli.seed.unwrap_or(0),
            };
            if spec.n_videos == 0 || spec.frames_per_video == 0 || spec.image_size < 16 {
                return Err(Failure::usage(
                    "need at least one video and frame, and images of 16 px or more",
                ));
            }
            let m = synth_corpus(&spec, out)?;
            println!(
                "wrote {} frames to {}",
                m.rows.len(),
                out.join("manifest.csv").display()
            );
            Ok(())
        }
        Command::Train(args) => cmd_train(&cli, args),
        Command::Score {
            checkpoint,
            manifest,
            split,
            out,
        } => {
            require_file(checkpoint)?;
            require_file(manifest)?;
            require_parent(out)?;
            cmd_score(checkpoint, manifest, *split, cli.seed, out)
        }
        Command::Eval { scores } => {
            require_file(scores)?;
            let rows = read_scores(scores)?;
            let pairs: Vec<(f64, bool)> =
                rows.iter().map(|r| (r.anomaly_score, r.is_fake)).collect();
            let auc = evaluate_auc(&pairs)?;
            println!("AUC {auc:.3}");
            println!("auc_exact {auc}");
            Ok(())
        }
        Command::Plot { log, scores, out } => {
            if log.is_none() && scores.is_none() {
                return Err(Failure::usage("plot needs --log, --scores or both"));
            }
            for p in log.iter().chain(scores.iter()) {
                require_file(p)?;
            }
            std::fs::create_dir_all(out)
                .map_err(|e| Failure::data(format!("{}: {e}", out.display())))?;
            if let Some(log) = log {
                let rows = read_log(log)?;
                let path = out.join("loss.svg");
                std::fs::write(&path, plot::loss_curves(&rows))
                    .map_err(|e| Failure::data(e.to_string()))?;
                println!("wrote {}", path.display());
            }
            if let Some(scores) = scores {
                let rows = read_scores(scores)?;
                let path = out.join("scores.svg");
                std::fs::write(&path, plot::score_histogram(&rows))
                    .map_err(|e| Failure::data(e.to_string()))?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}

fn require_file(p: &Path) -> CmdResult {
    if p.is_file() {
        Ok(())
    } else {
        Err(Failure::data(format!("{}: no such file", p.display())))
    }
}

fn require_parent(p: &Path) -> CmdResult {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() && !d.is_dir() => Err(Failure::data(format!(
            "{}: directory does not exist",
            d.display()
        ))),
        _ => Ok(()),
    }
}

/// Preset, then config file, then the global seed flag.
fn base_config(cli: &Cli, preset: Preset) -> std::result::Result<TrainConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            require_file(path)?;
            TrainConfig::load(path)?
        }
        None => match preset {
            Preset::Paper => TrainConfig::default(),
            Preset::Desk => TrainConfig::desk(),
        },
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn cmd_prototypes(dim: usize, count: usize, out: &Path) -> CmdResult {
    if count < 2 {
        return Err(Failure::usage("--count must be at least 2"));
    }
    require_parent(out)?;
    let p = make_simplex_prototypes(dim, count)?;
    p.save(out)?;
    println!(
        "wrote {count} prototypes of dimension {dim}; target dot {:.6}, max Gram deviation {:.3e}",
        p.target_dot(),
        p.gram_deviation()
    );
    Ok(())
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> CmdResult {
    require_file(&a.manifest)?;
    let mut cfg = base_config(cli, a.preset)?;
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr_start {
        cfg.lr_start = v;
    }
    if let Some(v) = a.lr_end {
        cfg.lr_end = v;
    }
    if let Some(v) = a.lambda_max {
        cfg.lambda_max = v;
    }
    if let Some(v) = a.objective {
        cfg.objective = v.into();
    }
    cfg.strict |= a.strict;
    if a.no_lambda_ramp {
        cfg.lambda_ramp = false;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&a.out)
        .map_err(|e| Failure::data(format!("{}: {e}", a.out.display())))?;
    let manifest = Manifest::load(&a.manifest)?;
    info!("training for {} epochs", cfg.epochs);
    let outcome = train(&manifest, &cfg)?;
    outcome.checkpoint.save(a.out.join("checkpoint.bin"))?;
    write_log(a.out.join("train_log.csv"), &outcome.log)?;
    cfg.save(a.out.join("config.toml"))?;
    let last = outcome.log.last().expect("at least one epoch");
    println!(
        "epoch {} total {:.6} bcr {:.6} guidance {:.6}; wrote {}",
        last.epoch,
        last.total,
        last.bcr,
        last.guidance,
        a.out.join("checkpoint.bin").display()
    );
    Ok(())
}

fn cmd_score(
    checkpoint: &Path,
    manifest: &Path,
    split: SplitArg,
    seed: Option<u64>,
    out: &Path,
) -> CmdResult {
    let ck = Checkpoint::load(checkpoint)?;
    let manifest = Manifest::load(manifest)?;
    let split = match split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let det = ck.detector(seed.unwrap_or(ck.config.seed))?;
    let videos = manifest.load_videos(Some(split), None)?;
    if videos.is_empty() {
        return Err(Failure::data("no videos in the requested split"));
    }
    let mut rows = Vec::with_capacity(videos.len());
    for v in &videos {
        let r = det.score_video(&v.frames)?;
        rows.push(ScoreRow {
            video_id: v.id.clone(),
            is_fake: v.label == Label::Fake,
            consistency_score: r.consistency_score(),
            anomaly_score: r.anomaly_score(),
            n_frames: r.frame_indices.len(),
        });
    }
    write_scores(out, &rows)?;
    println!("scored {} videos; wrote {}", rows.len(), out.display());
    Ok(())
}
