//! `ecforge` command-line interface.
//!
//! Exit codes: 0 success, 1 data error, 2 transport error, 3 config error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ecforge_core::clients::wire;
use ecforge_core::corpus::CorpusFormat;
use ecforge_core::pipeline::{self, Overrides, Pipeline, PipelineError, RunConfig};
use ecforge_core::MixRatio;

#[derive(Parser)]
#[command(
    name = "ecforge",
    version,
    about = "Emotion-cause instruction data pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Attach emotional knowledge to the train and test corpora.
    Annotate(RunArgs),
    /// Build one blended instruction dataset at the configured ratio.
    Blend(RunArgs),
    /// Build one blended dataset per sweep ratio.
    Sweep(RunArgs),
    /// Score predictions on the test corpus, generating them if none are given.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Predictions file (`{"doc_id", "output"}` per line).
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Run annotate, blend and evaluate in sequence.
    Run(RunArgs),
    /// Print a comparison table for several report.json files.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Check corpus files for structural problems.
    Validate {
        #[arg(long, conflicts_with = "files")]
        config: Option<PathBuf>,
        files: Vec<PathBuf>,
        #[arg(long, default_value = "canonical-jsonl")]
        format: CorpusFormat,
    },
    /// Seeded train/test split of an unsplit corpus.
    Split {
        input: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 0.1)]
        test_fraction: f64,
        #[arg(long)]
        output_dir: PathBuf,
        #[arg(long, default_value = "canonical-jsonl")]
        format: CorpusFormat,
    },
    /// Serve the mock clients over the HTTP protocol.
    ServeMock {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8731")]
        addr: String,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Mix ratio such as `1:5` for blend and evaluate.
    #[arg(long)]
    ratio: Option<MixRatio>,
    /// Comma-separated ratios for sweep.
    #[arg(long, value_delimiter = ',')]
    ratios: Vec<MixRatio>,
    #[arg(long)]
    run_id: Option<String>,
    #[arg(long)]
    no_emotional_knowledge: bool,
    #[arg(long)]
    no_causal_knowledge: bool,
}

impl RunArgs {
    fn pipeline(&self) -> Result<Pipeline, PipelineError> {
        let mut config = RunConfig::load(&self.config)?;
        config.apply(Overrides {
            seed: self.seed,
            workers: self.workers,
            output_dir: self.output_dir.clone(),
            ratio: self.ratio,
            sweep_ratios: (!self.ratios.is_empty()).then(|| self.ratios.clone()),
            run_id: self.run_id.clone(),
            no_emotional_knowledge: self.no_emotional_knowledge,
            no_causal_knowledge: self.no_causal_knowledge,
        });
        Pipeline::new(config)
    }
}

fn annotate(p: &Pipeline) -> Result<(), PipelineError> {
    let summary = p.annotate()?;
    if summary.skipped {
        println!("annotate: skipped (emotional knowledge disabled)");
    }
    for (split, s) in &summary.stats {
        let rate = s
            .none_rate
            .map(|r| format!("{r:.4}"))
            .unwrap_or_else(|| "n/a".into());
        println!(
            "annotate {split}: {} documents, none-rate {rate}, cache hits {}",
            s.annotated, s.cache_hits
        );
    }
    Ok(())
}

fn print_blends(outputs: &[pipeline::BlendOutput]) {
    for o in outputs {
        print!(
            "blend {}: {} ecpe + {} causal = {} records -> {}",
            o.ratio,
            o.stats.ecpe,
            o.stats.causal,
            o.stats.total,
            o.path.display()
        );
        match &o.shortfall {
            Some(s) => println!(" (shortfall: {} of {} requested)", s.selected, s.requested),
            None => println!(),
        }
    }
}

fn evaluate(p: &Pipeline, predictions: Option<&std::path::Path>) -> Result<(), PipelineError> {
    let report = p.evaluate(predictions)?;
    print!("{}", report.summary());
    Ok(())
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Annotate(args) => annotate(&args.pipeline()?),
        Command::Blend(args) => {
            print_blends(&[args.pipeline()?.blend()?]);
            Ok(())
        }
        Command::Sweep(args) => {
            print_blends(&args.pipeline()?.sweep()?);
            Ok(())
        }
        Command::Evaluate { run, predictions } => {
            evaluate(&run.pipeline()?, predictions.as_deref())
        }
        Command::Run(args) => {
            let p = args.pipeline()?;
            annotate(&p)?;
            print_blends(&[p.blend()?]);
            evaluate(&p, None)
        }
        Command::Compare { reports, json } => {
            let table = pipeline::compare_files(&reports)?;
            if json {
                println!("{}", table.to_json());
            } else {
                print!("{}", table.render_text());
            }
            Ok(())
        }
        Command::Validate {
            config,
            files,
            format,
        } => {
            let results = match config {
                Some(path) => Pipeline::new(RunConfig::load(&path)?)?.validate()?,
                None if files.is_empty() => {
                    return Err(PipelineError::Config(
                        "give corpus files or --config".into(),
                    ))
                }
                None => files
                    .iter()
                    .map(|f| {
                        pipeline::validate_file(f, format).map(|v| (f.display().to_string(), v))
                    })
                    .collect::<Result<_, _>>()?,
            };
            let mut bad = 0;
            for (name, violations) in &results {
                if violations.is_empty() {
                    println!("{name}: ok");
                }
                for v in violations {
                    println!("{name}: {v}");
                }
                bad += violations.len();
            }
            if bad > 0 {
                return Err(PipelineError::Data(format!("{bad} violation(s)")));
            }
            Ok(())
        }
        Command::Split {
            input,
            seed,
            test_fraction,
            output_dir,
            format,
        } => {
            let (train, test) =
                pipeline::split_file(&input, format, test_fraction, seed, &output_dir)?;
            println!(
                "split: {train} train, {test} test -> {}",
                output_dir.display()
            );
            Ok(())
        }
        Command::ServeMock { config, addr } => {
            let p = Pipeline::new(RunConfig::load(&config)?)?;
            let workers = p.config().workers;
            let handle = wire::serve(&addr, p.clients().clone(), workers)
                .map_err(|e| PipelineError::Config(format!("binding {addr}: {e}")))?;
            println!("serving on {}", handle.base_url());
            handle.join();
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
