use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use compavatar::config::{self, PipelineConfig, Preset, ENDPOINT_ENV};
use compavatar::pipeline::{build_oracle, source_model, Event, Outcome, Pipeline, Reporter};
use compavatar::wire;
use compavatar::workspace::{Stage, Workspace};
use compavatar::{CliError, Result};

#[derive(Parser)]
#[command(
    name = "compavatar",
    version,
    about = "Compositional avatars: a textured parametric head with detachable radiance components"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Workspace directory holding every stage's artifacts.
    #[arg(long, short = 'w', global = true, default_value = "workspace")]
    workspace: PathBuf,
    /// JSON or TOML configuration file.
    #[arg(long, short = 'c', global = true)]
    config: Option<PathBuf>,
    /// Starting values before the file applies: `full` or `desk`.
    #[arg(long, global = true, default_value = "full")]
    preset: Preset,
    /// Override one key, e.g. `--set learn.train.iterations=500`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Machine-readable JSON-lines output on stdout.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the body model's shape to landmarks.
    Fit,
    /// Paint the UV texture view by view.
    Paint,
    /// Learn one latent radiance component per part.
    Learn,
    /// Refine the components in RGB.
    Refine,
    /// Assemble the avatar bundle.
    Compose,
    /// Render the bundle from the configured views.
    Render,
    /// Render an animation of the bundle.
    Animate,
    /// Run every stage in order.
    Run,
    /// Print the effective configuration.
    Config,
    /// Serve the synthetic oracle over HTTP.
    ServeOracle {
        /// Address to listen on.
        #[arg(long, default_value = "127.0.0.1:8765")]
        addr: String,
        /// Serve the critic target (component learning) instead of the bare
        /// textured subject.
        #[arg(long)]
        target: bool,
    },
}

struct Console {
    json: bool,
}

impl Reporter for Console {
    fn event(&mut self, event: &Event) {
        if self.json {
            println!(
                "{}",
                serde_json::to_string(event).expect("event serializes")
            );
        } else {
            eprintln!("[{}] {}", event.stage, event.message);
        }
    }
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    config::load(
        common.preset,
        common.config.as_deref(),
        std::env::var(ENDPOINT_ENV).ok(),
        &common.sets,
    )
}

fn run(cli: &Cli) -> Result<()> {
    let config = load_config(&cli.common)?;
    let mut console = Console {
        json: cli.common.json,
    };
    let stages: Vec<Stage> = match &cli.command {
        Command::Config => {
            println!("{}", config.to_json());
            return Ok(());
        }
        Command::ServeOracle { addr, target } => {
            let model = source_model(&config)?;
            let oracle: Arc<dyn compavatar_core::oracle::GuidanceOracle + Send + Sync> =
                Arc::from(build_oracle(&config, &model, *target)?);
            let server = wire::serve(oracle, addr, config.oracle.max_response_bytes)
                .map_err(|e| CliError::config(format!("cannot listen on {addr}: {e}")))?;
            eprintln!("serving the synthetic oracle at {}", server.url());
            server.join();
            return Ok(());
        }
        Command::Run => Stage::ALL.to_vec(),
        Command::Fit => vec![Stage::Fit],
        Command::Paint => vec![Stage::Paint],
        Command::Learn => vec![Stage::Learn],
        Command::Refine => vec![Stage::Refine],
        Command::Compose => vec![Stage::Compose],
        Command::Render => vec![Stage::Render],
        Command::Animate => vec![Stage::Animate],
    };
    let workspace = Workspace::open(&cli.common.workspace)?;
    let mut pipeline = Pipeline::new(&workspace, &config, &mut console);
    let mut results = Vec::new();
    for stage in stages {
        results.push((stage, pipeline.run_stage(stage)?));
    }
    for (stage, outcome) in results {
        let status = match &outcome {
            Outcome::Completed => "completed".to_string(),
            Outcome::UpToDate => "up to date".to_string(),
            Outcome::Skipped(why) => format!("skipped ({why})"),
        };
        if cli.common.json {
            println!(
                "{}",
                serde_json::json!({ "stage": stage, "outcome": status })
            );
        } else {
            eprintln!("{stage}: {status}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            if cli.common.json {
                println!(
                    "{}",
                    serde_json::json!({ "error": e.to_string(), "exit_code": code })
                );
            }
            eprintln!("error: {e}");
            ExitCode::from(code as u8)
        }
    }
}
