use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use repfuse_cli::{exit_code, run, write_comparison, RawConfig, RunSpec, KEYS, SEED_ENV};

#[derive(Parser)]
#[command(
    name = "repfuse",
    version,
    about = "Representative-based centralized and distributed training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write its artifacts.
    Run(Box<RunArgs>),
    /// Run two configurations and merge their metrics into one CSV.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Merged table path.
        #[arg(long)]
        out: PathBuf,
        /// Overrides applied to both runs.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// List configuration keys.
    Keys,
}

#[derive(Args)]
struct RunArgs {
    /// Flat key=value file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    images: Option<String>,
    #[arg(long)]
    labels: Option<String>,
    #[arg(long)]
    test_images: Option<String>,
    #[arg(long)]
    test_labels: Option<String>,
    #[arg(long)]
    csv: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    clients: Option<String>,
    #[arg(long)]
    participation: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    rounds: Option<String>,
    #[arg(long)]
    inner_epochs: Option<String>,
    #[arg(long)]
    eta_w: Option<String>,
    #[arg(long)]
    eta_delta: Option<String>,
    #[arg(long)]
    budget: Option<String>,
    #[arg(long)]
    residual: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    export_reps: bool,
    #[arg(long)]
    workers: Option<String>,
    /// Any other key, e.g. `--set local_steps=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    fn raw(&self) -> anyhow::Result<RawConfig> {
        let mut raw = match &self.config {
            Some(p) => RawConfig::read(p)?,
            None => RawConfig::default(),
        };
        for pair in &self.set {
            raw.set_pair(pair)?;
        }
        let flags = [
            ("mode", &self.mode),
            ("dataset", &self.dataset),
            ("images", &self.images),
            ("labels", &self.labels),
            ("test_images", &self.test_images),
            ("test_labels", &self.test_labels),
            ("csv", &self.csv),
            ("model", &self.model),
            ("clients", &self.clients),
            ("participation", &self.participation),
            ("batch", &self.batch),
            ("rounds", &self.rounds),
            ("inner_epochs", &self.inner_epochs),
            ("eta_w", &self.eta_w),
            ("eta_delta", &self.eta_delta),
            ("budget", &self.budget),
            ("residual", &self.residual),
            ("seed", &self.seed),
            ("out", &self.out),
            ("workers", &self.workers),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                raw.set(k, v)?;
            }
        }
        if self.export_reps {
            raw.set("export_reps", "true")?;
        }
        Ok(raw)
    }
}

fn resolve(raw: &RawConfig) -> anyhow::Result<RunSpec> {
    let env = std::env::var(SEED_ENV).ok();
    Ok(RunSpec::resolve(raw, env.as_deref())?)
}

fn stem(p: &std::path::Path) -> String {
    p.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned())
}

fn main_inner(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Keys => {
            for (k, help) in KEYS {
                println!("{k:<20} {help}");
            }
        }
        Command::Run(args) => {
            let spec = resolve(&args.raw()?)?;
            let outcome = run(&spec)?;
            println!(
                "{}: final accuracy {}",
                spec.out.display(),
                outcome
                    .metrics
                    .final_accuracy()
                    .map_or("n/a".into(), |a| format!("{a:.4}"))
            );
        }
        Command::Compare { a, b, out, set } => {
            let mut outcomes = Vec::new();
            for path in [&a, &b] {
                let mut raw = RawConfig::read(path)?;
                for pair in &set {
                    raw.set_pair(pair)?;
                }
                outcomes.push((stem(path), run(&resolve(&raw)?)?));
            }
            let refs: Vec<_> = outcomes.iter().map(|(n, o)| (n.clone(), o)).collect();
            let f = std::fs::File::create(&out).with_context(|| out.display().to_string())?;
            write_comparison(&refs, std::io::BufWriter::new(f))?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
