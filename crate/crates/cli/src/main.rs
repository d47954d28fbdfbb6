use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sentibof::corpus::{load_manifest, Manifest, Modality, Split};
use sentibof::fusion::FusionMode;
use sentibof::pipeline::{write_synth_corpus, Pipeline, PipelineConfig, SynthConfig};

const DEFAULT_OUT_DIR: &str = "runs";

#[derive(Parser)]
#[command(name = "sentibof", version, about = "Bag-of-features multimodal sentiment pipeline")]
struct Cli {
    /// TOML configuration file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Ignore config hash mismatches and overwrite stale artifacts.
    #[arg(long, global = true)]
    force: bool,
    /// Artifact directory (the corpus directory for `synth`).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract descriptor files for every segment.
    Extract {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_enum, default_value_t = ModalityArg::Both)]
        modality: ModalityArg,
    },
    /// Train codebooks and classifiers on the training split.
    Train {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_enum, default_value_t = ModalityArg::Both)]
        modality: ModalityArg,
    },
    /// Score a labelled split and write metric reports.
    Evaluate {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value = "validation")]
        split: Split,
        #[command(flatten)]
        fusion: FusionArgs,
    },
    /// Write fused predictions; labels are not needed.
    Predict {
        #[command(flatten)]
        input: Input,
        /// Restrict to one split (all segments otherwise).
        #[arg(long)]
        split: Option<Split>,
        #[command(flatten)]
        fusion: FusionArgs,
    },
    /// Generate the synthetic two-class corpus.
    Synth {
        #[arg(long)]
        segments: Option<usize>,
        #[arg(long)]
        train: Option<usize>,
    },
    /// Print the configuration and any reports of a run.
    Report {
        /// Print the default configuration and exit.
        #[arg(long)]
        defaults: bool,
    },
}

#[derive(Args)]
struct Input {
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct FusionArgs {
    #[arg(long, value_enum)]
    fusion: Option<FusionArg>,
    /// Fixed score-level weight in [0, 1].
    #[arg(long)]
    theta: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModalityArg {
    Audio,
    Video,
    Both,
}

impl ModalityArg {
    fn modalities(self) -> &'static [Modality] {
        match self {
            ModalityArg::Audio => &[Modality::Audio],
            ModalityArg::Video => &[Modality::Video],
            ModalityArg::Both => &Modality::ALL,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FusionArg {
    Score,
    Output,
}

impl From<FusionArg> for FusionMode {
    fn from(f: FusionArg) -> Self {
        match f {
            FusionArg::Score => FusionMode::Score,
            FusionArg::Output => FusionMode::Output,
        }
    }
}

/// Failures that count as a bad invocation rather than a runtime error.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Usage(msg.into()).into())
}

enum Outcome {
    Ok,
    Partial,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let run = || -> Result<Outcome> {
        match cli.workers {
            Some(0) => usage("--workers must be positive"),
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .context("building worker pool")?
                .install(|| dispatch(&cli)),
            None => dispatch(&cli),
        }
    };
    match run() {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            match PipelineConfig::from_toml(&text) {
                Ok(cfg) => cfg,
                Err(e) => return usage(format!("{}: {e}", path.display())),
            }
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn manifest_for(input: &Input, cfg: &PipelineConfig) -> Result<Manifest> {
    let Some(path) = input.manifest.as_ref().or(cfg.paths.manifest.as_ref()) else {
        return usage("no manifest given (--manifest or paths.manifest)");
    };
    load_manifest(path).with_context(|| format!("loading manifest {}", path.display()))
}

fn pipeline(cli: &Cli, cfg: PipelineConfig) -> Result<Pipeline> {
    let out = cli
        .out_dir
        .clone()
        .or_else(|| cfg.paths.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    Ok(Pipeline::new(cfg, out, cli.force)?)
}

fn check_theta(theta: Option<f64>) -> Result<()> {
    match theta {
        Some(t) if !(0.0..=1.0).contains(&t) => usage(format!("--theta {t} outside [0, 1]")),
        _ => Ok(()),
    }
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Extract { input, modality } => {
            let manifest = manifest_for(input, &cfg)?;
            let p = pipeline(cli, cfg)?;
            let s = p.extract(&manifest, modality.modalities())?;
            println!("written {}\tskipped {}\tfailed {}", s.written, s.skipped, s.failed.len());
            for (id, msg) in &s.failed {
                eprintln!("failed {id}: {msg}");
            }
            Ok(if s.failed.is_empty() { Outcome::Ok } else { Outcome::Partial })
        }
        Command::Train { input, modality } => {
            let manifest = manifest_for(input, &cfg)?;
            let p = pipeline(cli, cfg)?;
            p.train(&manifest, modality.modalities())?;
            let run = p.load_run()?;
            for m in modality.modalities() {
                if let Some(rec) = run.models.get(m.as_str()) {
                    println!("{m}\tC {}\tsegments {}", rec.selected_c, rec.training_segments);
                }
            }
            Ok(Outcome::Ok)
        }
        Command::Evaluate { input, split, fusion } => {
            check_theta(fusion.theta)?;
            let manifest = manifest_for(input, &cfg)?;
            let mode = fusion.fusion.map_or(cfg.fusion.mode, Into::into);
            let p = pipeline(cli, cfg)?;
            let e = p.evaluate(&manifest, *split, mode, fusion.theta)?;
            if let Some(t) = e.theta {
                println!("theta {t}");
            }
            for r in [&e.audio, &e.video, &e.fused] {
                println!("{}", r.to_text());
            }
            Ok(Outcome::Ok)
        }
        Command::Predict { input, split, fusion } => {
            check_theta(fusion.theta)?;
            let manifest = manifest_for(input, &cfg)?;
            let mode = fusion.fusion.map_or(cfg.fusion.mode, Into::into);
            let p = pipeline(cli, cfg)?;
            let path = p.predict(&manifest, *split, mode, fusion.theta)?;
            println!("{}", path.display());
            Ok(Outcome::Ok)
        }
        Command::Synth { segments, train } => {
            let Some(dir) = &cli.out_dir else {
                return usage("synth needs --out-dir");
            };
            let mut sc = SynthConfig::default();
            if let Some(n) = segments {
                sc.segments = *n;
                sc.train = (n * 3) / 4;
            }
            if let Some(t) = train {
                sc.train = *t;
            }
            if sc.segments == 0 || sc.train > sc.segments {
                return usage("synth needs segments > 0 and train <= segments");
            }
            let m = write_synth_corpus(dir, &sc, cfg.seed)?;
            println!("{}\t{} segments", dir.join("manifest.jsonl").display(), m.len());
            Ok(Outcome::Ok)
        }
        Command::Report { defaults } => {
            if *defaults {
                print!("{}", PipelineConfig::default().to_toml());
                return Ok(Outcome::Ok);
            }
            print!("{}", cfg.to_toml());
            let p = pipeline(cli, cfg)?;
            report_run(&p)?;
            Ok(Outcome::Ok)
        }
    }
}

fn report_run(p: &Pipeline) -> Result<()> {
    if !p.run_path().exists() {
        return Ok(());
    }
    let run = p.load_run()?;
    println!("\n# run {}", p.out_dir.display());
    println!("root_seed {}", run.root_seed);
    for (m, rec) in &run.models {
        println!("{m}\tC {}\tsegments {}\thash {}", rec.selected_c, rec.training_segments, rec.config_hash);
    }
    if let Some(t) = run.theta {
        println!("theta {t}");
    }
    for split in Split::ALL {
        let path = p.eval_dir(split).join("report.txt");
        if path.exists() {
            println!("\n# {split}");
            print!("{}", read(&path)?);
        }
    }
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if text.is_empty() {
        bail!("{} is empty", path.display());
    }
    Ok(text)
}
