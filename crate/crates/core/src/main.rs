use std::io::{stdin, stdout, BufReader};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use duplexflat::cli::{
    cmd_eval, cmd_filter, cmd_flatten, cmd_infer, cmd_simulate, cmd_train, run_infer_stream,
    CliError, EvalKind,
};
use duplexflat::config::PipelineConfig;
use duplexflat::engine::DuplexMode;
use duplexflat::flatten::SampleFormat;
use duplexflat::predictor::NGramModel;

fn parse_format(s: &str) -> Result<SampleFormat, String> {
    s.parse()
}

fn parse_mode(s: &str) -> Result<DuplexMode, String> {
    s.parse()
}

fn parse_eval(s: &str) -> Result<EvalKind, String> {
    s.parse()
}

#[derive(Parser)]
#[command(
    name = "duplexflat",
    about = "Full-duplex dialogue data pipeline: filter, simulate, flatten, train, infer, eval"
)]
struct Args {
    /// Pipeline config file (.toml or .json); defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base seed; overrides the config's seeds for this run.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Screen dialogue scripts with the heuristic rules.
    Filter {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Rejects file; defaults to OUTPUT with a .rejects.jsonl extension.
        #[arg(long)]
        rejects: Option<PathBuf>,
    },
    /// Place accepted scripts onto two-lane timelines.
    Simulate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Serialize timelines into flattened samples.
    Flatten {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_parser = parse_format)]
        format: SampleFormat,
        #[arg(long)]
        output: PathBuf,
    },
    /// Count a sample file into an n-gram model.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Continue from an existing model (stage curriculum).
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Stream ground-truth user lanes through the model.
    Infer {
        #[arg(long)]
        model: PathBuf,
        /// Truth timelines whose user lanes drive the sessions.
        #[arg(long, required_unless_present = "stream")]
        input: Option<PathBuf>,
        #[arg(long, required_unless_present = "stream")]
        output: Option<PathBuf>,
        #[arg(long, value_parser = parse_mode, default_value = "3stream")]
        mode: DuplexMode,
        /// Read user chunks from stdin, one line of space-separated ids per
        /// chunk; emit TXT:/SPH: lines.
        #[arg(long)]
        stream: bool,
    },
    /// Score predictions against truth timelines.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_parser = parse_eval)]
        which: EvalKind,
        /// Write the report here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn run(args: Args) -> Result<(), CliError> {
    let cfg = match &args.config {
        Some(path) => PipelineConfig::load(path).map_err(|e| CliError::Usage(e.to_string()))?,
        None => PipelineConfig::default(),
    };
    // Resolved config is echoed for provenance on every run.
    eprintln!(
        "resolved config: {}",
        serde_json::to_string(&cfg).expect("config serializes")
    );

    match args.command {
        Command::Filter {
            input,
            output,
            rejects,
        } => {
            let summary = cmd_filter(&input, &output, rejects.as_deref(), &cfg)?;
            println!("{}", serde_json::to_string(&summary).unwrap());
        }
        Command::Simulate { input, output } => {
            let seed = args.seed.unwrap_or(cfg.sim.seed);
            let count = cmd_simulate(&input, &output, &cfg, seed)?;
            println!("{{\"timelines\":{count}}}");
        }
        Command::Flatten {
            input,
            format,
            output,
        } => {
            let count = cmd_flatten(&input, format, &output, &cfg)?;
            println!("{{\"samples\":{count}}}");
        }
        Command::Train {
            input,
            output,
            init,
            order,
            alpha,
        } => {
            let order = order.unwrap_or(cfg.predictor.order);
            let alpha = alpha.unwrap_or(cfg.predictor.alpha);
            let summary = cmd_train(&input, &output, init.as_deref(), order, alpha, &cfg)?;
            println!("{}", serde_json::to_string(&summary).unwrap());
        }
        Command::Infer {
            model,
            input,
            output,
            mode,
            stream,
        } => {
            let seed = args.seed.unwrap_or(cfg.predictor.seed);
            if stream {
                let layout = cfg
                    .resolve_layout()
                    .map_err(|e| CliError::Usage(e.to_string()))?;
                let model = NGramModel::load(&model, &layout)
                    .map_err(|e| CliError::Data(e.into()))?;
                run_infer_stream(
                    &model,
                    &layout,
                    &cfg,
                    mode,
                    seed,
                    BufReader::new(stdin().lock()),
                    stdout().lock(),
                )?;
            } else {
                let (input, output) = (input.expect("clap enforces"), output.expect("clap enforces"));
                let count = cmd_infer(&model, &input, &output, mode, &cfg, seed)?;
                println!("{{\"sessions\":{count}}}");
            }
        }
        Command::Eval {
            pred,
            truth,
            which,
            output,
        } => {
            let report = cmd_eval(&pred, &truth, which, &cfg)?;
            let rendered = serde_json::to_string_pretty(&report).unwrap();
            match output {
                Some(path) => std::fs::write(&path, rendered + "\n")
                    .map_err(|e| CliError::Data(e.into()))?,
                None => println!("{rendered}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(args) => args,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
