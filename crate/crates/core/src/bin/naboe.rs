use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use naboe::config::PipelineConfig;
use naboe::eval_analysis::DEFAULT_TOP_N;
use naboe::kb_ingest::{DEFAULT_COMMONNESS_THRESHOLD, DEFAULT_LINK_PROBABILITY_THRESHOLD};
use naboe::pipeline;
use naboe::{Error, Result};

/// Reference dictionary size for a full English Wikipedia dump.
const REFERENCE_NAMES: u64 = 18_785_550;
const REFERENCE_MEAN_CANDIDATES: f64 = 1.14;

#[derive(Parser, Debug)]
#[command(
    name = "naboe",
    version,
    about = "Attention-weighted bag-of-entities text classification"
)]
struct Cli {
    /// Pipeline config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for training (1 is deterministic and the default).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Prints the effective config as TOML and exits.
    #[arg(long, global = true)]
    dump_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Collects anchor and occurrence statistics from wikitext files.
    ExtractAnchors {
        #[arg(long, default_value = "anchors.tsv")]
        anchors_out: PathBuf,
        #[arg(long, default_value = "occurrences.tsv")]
        occurrences_out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Builds the entity dictionary from anchor statistics.
    BuildDict {
        #[arg(long)]
        anchors: PathBuf,
        #[arg(long)]
        occurrences: PathBuf,
        #[arg(long, default_value_t = DEFAULT_LINK_PROBABILITY_THRESHOLD)]
        lp_threshold: f64,
        #[arg(long, default_value_t = DEFAULT_COMMONNESS_THRESHOLD)]
        commonness_threshold: f64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Writes detected mentions and candidates as JSON lines.
    Detect {
        /// Dictionary file; defaults to the config's.
        #[arg(long)]
        dictionary: Option<PathBuf>,
        /// Text file, one document per line (optionally `label<TAB>text`).
        #[arg(long)]
        input: PathBuf,
        /// Output file; defaults to stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Trains a model; writes the epoch log and best checkpoint.
    Train,
    /// Evaluates a checkpoint on the test set.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Influential-entity table and, optionally, the ablation grid.
    Analyze {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TOP_N)]
        top_n: usize,
        /// Also trains and evaluates every representation/attention/init combination.
        #[arg(long)]
        ablations: bool,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("this command needs --config".into()))?;
    let mut config = PipelineConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(threads) = cli.threads {
        config.threads = threads;
    }
    config.validate()?;
    Ok(config)
}

/// Writes to stdout; a closed pipe (e.g. `| head`) ends the process quietly.
fn emit(text: &str) {
    let mut out = io::stdout().lock();
    if let Err(e) = out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        if e.kind() == io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        eprintln!("error: writing to stdout: {e}");
        std::process::exit(2);
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    emit(&(serde_json::to_string_pretty(value).expect("serializable") + "\n"));
}

fn detect(cli: &Cli, dictionary: Option<&Path>, input: &Path, output: Option<&Path>) -> Result<()> {
    let dictionary = match dictionary {
        Some(p) => p.to_path_buf(),
        None => {
            let config = load_config(cli)?;
            config.existing(&config.paths.dictionary)?
        }
    };
    let count = match output {
        Some(path) => {
            let mut file =
                io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
            let n = pipeline::detect_cmd(&dictionary, input, &mut file)?;
            file.flush().map_err(|e| Error::io(path, e))?;
            n
        }
        None => pipeline::detect_cmd(&dictionary, input, &mut io::stdout().lock())?,
    };
    eprintln!("processed {count} documents");
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if cli.dump_config {
        emit(&load_config(cli)?.to_toml());
        return Ok(());
    }
    let Some(command) = &cli.command else {
        return Err(Error::Config("no subcommand given (see --help)".into()));
    };
    match command {
        Command::ExtractAnchors {
            anchors_out,
            occurrences_out,
            inputs,
        } => {
            let summary = pipeline::extract_anchors_cmd(inputs, anchors_out, occurrences_out)?;
            print_json(&summary);
        }
        Command::BuildDict {
            anchors,
            occurrences,
            lp_threshold,
            commonness_threshold,
            output,
        } => {
            let summary = pipeline::build_dict_cmd(
                anchors,
                occurrences,
                *lp_threshold,
                *commonness_threshold,
                output,
            )?;
            print_json(&summary);
            eprintln!(
                "full-dump reference: {REFERENCE_NAMES} names, {REFERENCE_MEAN_CANDIDATES} candidates per name"
            );
        }
        Command::Detect {
            dictionary,
            input,
            output,
        } => detect(cli, dictionary.as_deref(), input, output.as_deref())?,
        Command::Train => {
            let summary = pipeline::train_cmd(&load_config(cli)?)?;
            print_json(&summary);
        }
        Command::Eval { checkpoint } => {
            let report = pipeline::eval_cmd(&load_config(cli)?, checkpoint.as_deref())?;
            emit(&pipeline::report_json(&report));
        }
        Command::Analyze {
            checkpoint,
            top_n,
            ablations,
        } => {
            let out = pipeline::analyze_cmd(
                &load_config(cli)?,
                checkpoint.as_deref(),
                *top_n,
                *ablations,
            )?;
            if let Some(table) = &out.influence {
                print_json(table);
            }
            if let Some(matrix) = &out.ablations {
                emit(&matrix.render_table());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
