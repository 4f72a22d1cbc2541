use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lungseg::config::RunConfig;
use lungseg::pipeline;
use lungseg::slab::SlabMode;
use lungseg::Error;

#[derive(Parser, Debug)]
#[command(
    name = "lungseg",
    version,
    about = "2.5D lung segmentation of thoracic CT"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// `key = value` run configuration
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Slab channel order: rgb, bgr or gray
    #[arg(long, global = true)]
    mode: Option<SlabMode>,
    /// Probability threshold for lung voxels [default: 0.5]
    #[arg(long, global = true, value_name = "F")]
    threshold: Option<f64>,
    /// Scans processed concurrently
    #[arg(long, global = true, value_name = "N", default_value_t = 1)]
    jobs: usize,
    /// Seed for initialization, shuffling and fold assignment
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Calibrate and window CT volumes, writing MetaImage copies
    Preprocess {
        #[arg(required = true)]
        scans: Vec<PathBuf>,
    },
    /// Train on the configured dataset
    Train,
    /// k-fold cross-validation over the configured dataset
    Crossval,
    /// Segment CT volumes with trained weights
    Predict {
        #[arg(long, value_name = "PATH")]
        weights: PathBuf,
        #[arg(required = true)]
        scans: Vec<PathBuf>,
    },
    /// Score predicted masks against reference masks
    Evaluate {
        /// Prediction directory, optionally labelled as NAME=DIR (repeatable)
        #[arg(long = "pred", required = true, value_name = "[NAME=]DIR")]
        preds: Vec<String>,
        /// Reference directory, optionally labelled as NAME=DIR (repeatable)
        #[arg(long = "gt", required = true, value_name = "[NAME=]DIR")]
        gts: Vec<String>,
    },
    /// Render one slice as a PPM with TP blue, FP red and FN green
    Overlay {
        #[arg(long, value_name = "PATH")]
        ct: PathBuf,
        #[arg(long, value_name = "PATH")]
        pred: PathBuf,
        #[arg(long, value_name = "PATH")]
        gt: PathBuf,
        #[arg(long, value_name = "Z")]
        slice: usize,
    },
    /// Describe a volume, a weight container, or the configured network
    Info { path: Option<PathBuf> },
}

fn run_config(g: &GlobalArgs) -> Result<RunConfig, Error> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(mode) = g.mode {
        cfg.mode = mode;
    }
    if let Some(t) = g.threshold {
        cfg.train.threshold = t;
    }
    if let Some(seed) = g.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &g.out {
        cfg.out = out.clone();
    }
    cfg.train.validate()?;
    if g.jobs == 0 {
        return Err(Error::InvalidConfig("--jobs must be at least 1".into()));
    }
    Ok(cfg)
}

fn labelled(arg: &str, default: impl FnOnce(&Path) -> String) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((name, dir)) if !name.is_empty() => (name.to_string(), PathBuf::from(dir)),
        _ => {
            let dir = PathBuf::from(arg);
            (default(&dir), dir)
        }
    }
}

fn dir_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = run_config(&cli.global)?;
    let jobs = cli.global.jobs;
    match cli.command {
        Command::Preprocess { scans } => {
            for scan in &scans {
                let out = pipeline::cmd_preprocess(scan, &cfg.out)?;
                println!("{}", out.display());
            }
        }
        Command::Train => {
            let out = pipeline::cmd_train(&cfg, jobs)?;
            let last = out.history.epochs.last();
            println!("weights = {}", out.weights.display());
            println!("history = {}", out.history_file.display());
            println!("epochs = {}", out.history.epochs.len());
            println!("best_epoch = {}", out.history.best_epoch);
            if let Some(r) = last {
                println!("final_train_loss = {}", r.train_loss);
                println!("final_val_loss = {}", r.val_loss);
            }
        }
        Command::Crossval => {
            let out = pipeline::cmd_crossval(&cfg, jobs)?;
            for f in &out.folds {
                println!("fold {} = {}", f.fold, f.test_ids.join(","));
            }
            print!(
                "{}",
                lungseg::report::format_table(std::slice::from_ref(&out.pooled))
            );
        }
        Command::Predict { weights, scans } => {
            for p in pipeline::cmd_predict(&cfg, &scans, &weights, &cfg.out, jobs)? {
                println!("{}", p.mask.display());
            }
        }
        Command::Evaluate { preds, gts } => {
            let preds: Vec<_> = preds
                .iter()
                .map(|a| labelled(a, |d| pipeline::group_label(&dir_name(d))))
                .collect();
            let gts: Vec<_> = gts.iter().map(|a| labelled(a, dir_name)).collect();
            let reports = pipeline::cmd_evaluate(&cfg, &preds, &gts, &cfg.out, jobs)?;
            print!("{}", lungseg::report::format_table(&reports));
        }
        Command::Overlay {
            ct,
            pred,
            gt,
            slice,
        } => {
            let stem = ct
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let out = cfg.out.join(format!("{stem}_z{slice}.ppm"));
            let c = pipeline::cmd_overlay(&cfg, &ct, &pred, &gt, slice, &out)?;
            println!("{}", out.display());
            println!(
                "tp = {}\nfp = {}\nfn = {}\nbackground = {}",
                c.true_positive, c.false_positive, c.false_negative, c.background
            );
        }
        Command::Info { path } => print!("{}", pipeline::describe(&cfg, path.as_deref())?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or_default();
            eprintln!("error[UsageError]: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // single line, `error[Kind]: message`
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}
