use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use steplens::pipeline::{self, Pipeline, PipelineConfig, PipelineError, Stage, StageStatus};

#[derive(Parser)]
#[command(name = "steplens", version, about = "Step-wise conformal labeling, probing and steering pipeline")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline config (TOML); defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Re-run stages even when cached artifacts are valid.
    #[arg(long, global = true)]
    force: bool,
    /// Success significance level
    #[arg(long, global = true)]
    eps_s: Option<f64>,
    /// Failure significance level
    #[arg(long, global = true)]
    eps_f: Option<f64>,
    /// Layer to steer, overriding the best-probe choice
    #[arg(long, global = true)]
    steer_layer: Option<u32>,
    /// Comma-separated intervention timesteps.
    #[arg(long, global = true, value_delimiter = ',')]
    steer_steps: Option<Vec<u32>>,
    /// Steering coefficient
    #[arg(long, global = true, allow_hyphen_values = true)]
    steer_coeff: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate episodes for every split.
    Generate,
    /// Estimate step rewards by Monte Carlo rollouts.
    Reward,
    /// Build the conformal calibration store.
    Calibrate,
    /// Label steps and audit error rates.
    Label,
    /// Train and evaluate the probe grid.
    Probe,
    /// Extract a steering direction and run the closed-loop evaluation.
    Steer,
    /// Write the report bundle.
    Report,
    /// Run every stage in order.
    Run,
    /// Validate a record file and register it as a named dataset.
    Ingest {
        path: PathBuf,
        /// Dataset name; defaults to the file stem.
        #[arg(long)]
        name: Option<String>,
    },
    /// Print the effective configuration as TOML.
    ShowConfig,
}

fn load_config(g: &Global) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &g.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(o) = &g.output {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = g.seed {
        cfg.master_seed = s;
    }
    if let Some(e) = g.eps_s {
        cfg.thresholds.eps_s = e;
    }
    if let Some(e) = g.eps_f {
        cfg.thresholds.eps_f = e;
    }
    if let Some(l) = g.steer_layer {
        cfg.intervention.layer = Some(l);
    }
    if let Some(ts) = &g.steer_steps {
        cfg.intervention.timesteps = ts.clone();
    }
    if let Some(c) = g.steer_coeff {
        cfg.intervention.coefficient = c;
    }
    Ok(cfg)
}

fn print_outcome(o: pipeline::StageOutcome) {
    let status = match o.status {
        StageStatus::Ran => "ran",
        StageStatus::CacheHit => "cached",
    };
    println!("{:<10} {status}", o.stage.as_str());
}

fn dispatch(cli: Cli) -> Result<(), PipelineError> {
    let cfg = load_config(&cli.global)?;
    let force = cli.global.force;
    let single = |stage: Stage| -> Result<(), PipelineError> {
        let p = Pipeline::new(&cfg)?;
        print_outcome(p.run_stage(stage, force)?);
        Ok(())
    };
    match cli.command {
        Command::Generate => single(Stage::Generate),
        Command::Reward => single(Stage::Reward),
        Command::Calibrate => single(Stage::Calibrate),
        Command::Label => single(Stage::Label),
        Command::Probe => single(Stage::Probe),
        Command::Steer => single(Stage::Steer),
        Command::Report => {
            single(Stage::Report)?;
            println!("report     {}", cfg.output_dir.join(Stage::Report.artifact()).display());
            Ok(())
        }
        Command::Run => {
            let p = Pipeline::new(&cfg)?;
            let (_, outcomes) = p.run(force)?;
            outcomes.into_iter().for_each(print_outcome);
            println!("manifest   {}", cfg.output_dir.join(pipeline::manifest::MANIFEST_FILE).display());
            Ok(())
        }
        Command::Ingest { path, name } => {
            let name = match name {
                Some(n) => n,
                None => path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .ok_or_else(|| PipelineError::Validation("cannot derive a dataset name".into()))?,
            };
            let (summary, target) = pipeline::ingest(&path, &cfg.output_dir, &name)?;
            print!("{summary}");
            println!("registered         {}", target.display());
            Ok(())
        }
        Command::ShowConfig => {
            cfg.validate()?;
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
