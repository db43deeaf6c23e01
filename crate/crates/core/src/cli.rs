//! Subcommands of the `clenet` binary.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::Config;
use crate::data::{image_patches, patches_to_tensor, ImageLoader, Manifest, SynthConfig};
use crate::error::{Error, Result};
use crate::evaluate::{compare, evaluate, EvalReport, Fusion};
use crate::gradcheck::{self, Options};
use crate::network::{dump_activations, forward, load_checkpoint, Mode};
use crate::training::{make_splits, train, Outputs};

#[derive(Debug, Parser)]
#[command(name = "clenet", version, about = "Patch CNN with a sparse convolutional autoencoder branch")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic dataset with a manifest.
    Synth(SynthArgs),
    /// Train one model per split.
    Train(TrainArgs),
    /// Evaluate a checkpoint on every manifest image.
    Eval(EvalArgs),
    /// Finite-difference check of every backward pass.
    Gradcheck(GradcheckArgs),
    /// Side-by-side comparison of two CSV reports.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub patients: usize,
    #[arg(long, default_value_t = 40)]
    pub images_per_patient: usize,
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `key = value` file applied over the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Steps per epoch.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lambda_s: Option<f64>,
    #[arg(long)]
    pub w_rec: Option<f64>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub pool_stride: Option<usize>,
    #[arg(long)]
    pub augment: Option<bool>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "mean")]
    pub fusion: Fusion,
    /// `csv` or `md`.
    #[arg(long, default_value = "csv")]
    pub report: String,
    /// Report file; defaults to `report.csv` or `report.md`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write every stage of the first image's first patch as PGM.
    #[arg(long)]
    pub dump_activations: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    /// Perturb the analytic gradient of the named check.
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub report_a: PathBuf,
    #[arg(long)]
    pub report_b: PathBuf,
    #[arg(long, default_value = "baseline")]
    pub label_a: String,
    #[arg(long, default_value = "enhanced")]
    pub label_b: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Compare(a) => cmd_compare(&a),
    };
    match result {
        Ok(code) => code,
        Err(CmdError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CmdError::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[derive(Debug)]
enum CmdError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CmdError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => CmdError::Usage(m),
            e => CmdError::Runtime(e),
        }
    }
}

type CmdResult = std::result::Result<i32, CmdError>;

fn cmd_synth(a: &SynthArgs) -> CmdResult {
    let cfg = SynthConfig {
        seed: a.seed,
        patients: a.patients,
        images_per_patient: a.images_per_patient,
        size: a.size,
    };
    let m = crate::data::synth_dataset(&cfg, &a.out)?;
    println!("wrote {} images and manifest.csv to {}", m.rows.len(), a.out.display());
    Ok(0)
}

/// Defaults, then the config file, then explicit flags.
pub fn resolve_train_config(a: &TrainArgs) -> Result<Config> {
    let mut c = match &a.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let mut flags: Vec<(&str, String)> = Vec::new();
    let path = |p: &Path| p.display().to_string();
    if let Some(v) = &a.manifest {
        flags.push(("manifest", path(v)));
    }
    if let Some(v) = a.mode {
        flags.push(("mode", v.to_string()));
    }
    if let Some(v) = &a.split {
        flags.push(("split", v.clone()));
    }
    if let Some(v) = a.seed {
        flags.push(("seed", v.to_string()));
    }
    if let Some(v) = &a.out {
        flags.push(("out", path(v)));
    }
    for (k, v) in [
        ("epochs", a.epochs),
        ("steps_per_epoch", a.steps),
        ("batch", a.batch),
        ("patch", a.patch),
        ("pool_stride", a.pool_stride),
    ] {
        if let Some(v) = v {
            flags.push((k, v.to_string()));
        }
    }
    for (k, v) in [("lr", a.lr), ("lambda", a.lambda), ("lambda_s", a.lambda_s), ("w_rec", a.w_rec)] {
        if let Some(v) = v {
            flags.push((k, format!("{v:?}")));
        }
    }
    if let Some(v) = a.augment {
        flags.push(("augment", v.to_string()));
    }
    c.apply(flags.iter().map(|(k, v)| (*k, v.as_str())))?;
    Ok(c)
}

fn cmd_train(a: &TrainArgs) -> CmdResult {
    let c = resolve_train_config(a)?;
    let cfg = &c.training;
    if cfg.mode == Mode::Baseline {
        for (flag, given) in [("--lambda-s", a.lambda_s), ("--w-rec", a.w_rec), ("--lambda", a.lambda)] {
            if given.is_some() {
                eprintln!("warning: {flag} is ignored in baseline mode");
            }
        }
    }
    cfg.validate()?;
    let manifest_path = c
        .manifest
        .clone()
        .ok_or_else(|| CmdError::Usage("a manifest is required (--manifest or `manifest =` in --config)".into()))?;
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from("runs"));
    let m = Manifest::load(&manifest_path)?;
    let splits = make_splits(&m, c.split, cfg.seed)?;
    c.write_resolved(&out)?;
    for split in &splits {
        let dir = out.join(&split.name);
        c.write_resolved(&dir)?;
        let loader = ImageLoader::new();
        let outcome = train(
            &m,
            split,
            cfg,
            &loader,
            Some(Outputs {
                dir: &dir,
                epoch_checkpoints: true,
            }),
        )?;
        let report = evaluate(&outcome.params, &m, &split.test, Fusion::Mean, &loader)?;
        report.write(dir.join("test_report.csv"), "csv")?;
        let last = outcome.log.last().map(|l| l.loss.total).unwrap_or(f64::NAN);
        println!(
            "{}: {} train / {} test images, final loss {last:.6}, test accuracy {:.4}",
            split.name,
            split.train.len(),
            split.test.len(),
            report.overall.accuracy
        );
    }
    Ok(0)
}

fn cmd_eval(a: &EvalArgs) -> CmdResult {
    let format = match a.report.as_str() {
        "csv" => "csv",
        "md" | "markdown" => "markdown",
        other => return Err(CmdError::Usage(format!("unknown report format '{other}' (expected csv or md)"))),
    };
    let params = load_checkpoint(&a.model)?;
    let m = Manifest::load(&a.manifest)?;
    let ids: Vec<String> = m.rows.iter().map(|r| r.id().to_string()).collect();
    let loader = ImageLoader::new();
    let report = evaluate(&params, &m, &ids, a.fusion, &loader)?;
    let out = a.out.clone().unwrap_or_else(|| {
        PathBuf::from(if format == "csv" { "report.csv" } else { "report.md" })
    });
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    report.write(&out, format)?;
    if let Some(dir) = &a.dump_activations {
        let row = &m.rows[0];
        let raw = loader.load(&m, row)?;
        let patches = image_patches(&raw, params.arch().patch, row.id(), None)?;
        let x = patches_to_tensor(&[&patches[0]])?;
        let trace = forward(&params, &x)?;
        let files = dump_activations(&trace, dir)?;
        println!("wrote {} activation maps to {}", files.len(), dir.display());
    }
    let o = &report.overall;
    println!(
        "{} images, accuracy {:.4} ({:.4}..{:.4}), report {}",
        o.total,
        o.accuracy,
        o.ci.0,
        o.ci.1,
        out.display()
    );
    Ok(0)
}

fn cmd_gradcheck(a: &GradcheckArgs) -> CmdResult {
    let opts = Options {
        seeds: a.seeds,
        base_seed: a.seed,
        fault: a.inject_fault.clone(),
    };
    if let Some(f) = &opts.fault {
        if !gradcheck::check_names().contains(&f.as_str()) {
            return Err(CmdError::Usage(format!(
                "unknown check '{f}' (one of: {})",
                gradcheck::check_names().join(", ")
            )));
        }
    }
    let start = std::time::Instant::now();
    let reports = gradcheck::run_all(&opts)?;
    for r in &reports {
        println!("{r}");
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
    println!(
        "{} checks, {} failed, {:.2} s",
        reports.len(),
        failed.len(),
        start.elapsed().as_secs_f64()
    );
    if failed.is_empty() {
        Ok(0)
    } else {
        eprintln!("gradient check failed: {}", failed.join(", "));
        Ok(1)
    }
}

fn cmd_compare(a: &CompareArgs) -> CmdResult {
    let ra = EvalReport::read_csv(&a.report_a, Fusion::Mean)?;
    let rb = EvalReport::read_csv(&a.report_b, Fusion::Mean)?;
    let table = compare(&ra, &a.label_a, &rb, &a.label_b)?.to_markdown();
    match &a.out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            std::fs::write(p, &table).map_err(|e| Error::io(p, e))?;
            println!("wrote {}", p.display());
        }
        None => print!("{table}"),
    }
    Ok(0)
}
