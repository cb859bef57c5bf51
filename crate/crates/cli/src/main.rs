use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use verisearch_core::bench::{
    load_corpus, records_to_jsonl, run_benchmark, CorpusError, VerdictRecord,
};
use verisearch_core::domain::NewsItem;
use verisearch_core::profile::{Profile, ProfileError, RunOptions};
use verisearch_core::reasoner::ReasonerError;
use verisearch_core::search::EngineError;
use verisearch_core::selector::{select_tools, SelectionError, SelectionReport};

const EXIT_ITEM_ERROR: u8 = 2;
const EXIT_REPLAY_MISS: u8 = 3;
const EXIT_USAGE: u8 = 64;
const EXIT_DATA: u8 = 65;
const EXIT_CONFIG: u8 = 78;

/// Multi-source misinformation verification by tree search over tools.
#[derive(Debug, Parser)]
#[command(name = "verisearch", version)]
struct Cli {
    /// Record every reasoner call to this transcript (tool observations go to <stem>.tools/)
    #[arg(
        long,
        global = true,
        value_name = "TRANSCRIPT",
        conflicts_with = "replay",
        help_heading = "Global options"
    )]
    record: Option<PathBuf>,
    /// Serve reasoner calls from a recorded transcript; a request not in it exits with code 3
    #[arg(
        long,
        global = true,
        value_name = "TRANSCRIPT",
        help_heading = "Global options"
    )]
    replay: Option<PathBuf>,
    /// More log output on stderr (repeat for more)
    #[arg(short, long, global = true, action = clap::ArgAction::Count, help_heading = "Global options")]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Verify news items and print one verdict record per item
    Detect(DetectArgs),
    /// Run a labeled corpus and report accuracy, macro-F1, iterations and cost
    Bench(BenchArgs),
    /// Greedily pick the tools that improve accuracy on a development corpus
    SelectTools(SelectArgs),
}

#[derive(Debug, Args)]
struct DetectArgs {
    /// Run profile (TOML)
    #[arg(long)]
    profile: PathBuf,
    /// News text of a single item
    #[arg(long, required_unless_present = "input", conflicts_with = "input")]
    text: Option<String>,
    /// Image of the single item
    #[arg(long, requires = "text")]
    image: Option<PathBuf>,
    /// Identifier of the single item
    #[arg(long, default_value = "item", requires = "text")]
    id: String,
    /// JSONL file of items, one per line
    #[arg(long)]
    input: Option<PathBuf>,
    /// Write the search logs of every item to this JSONL file
    #[arg(long)]
    log: Option<PathBuf>,
    /// Override the profile's random seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Labeled corpus (JSONL)
    #[arg(long)]
    corpus: PathBuf,
    /// Run profile (TOML)
    #[arg(long)]
    profile: PathBuf,
    /// Worker threads
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    parallel: u16,
    /// Directory for verdicts.jsonl and metrics.json
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the profile's random seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SelectArgs {
    /// Development corpus (JSONL)
    #[arg(long)]
    corpus: PathBuf,
    /// Run profile (TOML)
    #[arg(long)]
    profile: PathBuf,
    /// Candidate tools in evaluation order, comma separated
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    candidates: Vec<String>,
    /// Tools always enabled, comma separated; defaults to the profile's tools that are not candidates
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    base: Option<Vec<String>>,
    /// Worker threads per evaluation
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    parallel: u16,
    /// Write the profile with the selected tools here
    #[arg(long)]
    export: Option<PathBuf>,
    /// Write the selection report (JSON) here
    #[arg(long)]
    report: Option<PathBuf>,
    /// Override the profile's random seed
    #[arg(long)]
    seed: Option<u64>,
}

/// Error carrying its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<ProfileError> for Failure {
    fn from(e: ProfileError) -> Self {
        Failure::new(EXIT_CONFIG, format!("configuration error: {e}"))
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        Failure::new(EXIT_DATA, format!("corpus error: {e}"))
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(EXIT_CONFIG, format!("cannot write {}: {e}", path.display()))
}

fn options(cli: &Cli, seed: Option<u64>, tools: Option<Vec<String>>) -> RunOptions {
    RunOptions {
        record: cli.record.clone(),
        replay: cli.replay.clone(),
        seed,
        tools,
    }
}

fn replay_miss(e: &EngineError) -> Option<String> {
    match e {
        EngineError::Reasoner(ReasonerError::ReplayMiss { role, digest }) => {
            Some(format!("{role} request {digest}"))
        }
        _ => None,
    }
}

/// Unreadable images are configuration errors, reported before any work starts.
fn validate_items(items: &[NewsItem]) -> Result<(), Failure> {
    for item in items {
        item.validate()
            .map_err(|e| Failure::new(EXIT_CONFIG, format!("configuration error: {e}")))?;
    }
    Ok(())
}

fn detect(cli: &Cli, args: &DetectArgs) -> Result<(), Failure> {
    let profile = Profile::load(&args.profile)?;
    let taxonomy = profile.taxonomy()?;
    let items = match (&args.input, &args.text) {
        (Some(path), _) => load_corpus(path, &taxonomy)?,
        (None, Some(text)) => {
            let mut item = NewsItem::new(args.id.clone(), text.clone());
            if let Some(img) = &args.image {
                item = item.with_image(img.clone());
            }
            vec![item]
        }
        (None, None) => unreachable!("clap requires --text or --input"),
    };
    validate_items(&items)?;
    let engine = profile.build_engine(&options(cli, args.seed, None))?;

    let mut log_out = String::new();
    let mut errored = 0;
    let stdout = std::io::stdout();
    for item in &items {
        let record = match engine.run_episode(item) {
            Ok(ep) => {
                log_out.push_str(&ep.log.to_jsonl());
                VerdictRecord::from_verdict(
                    &item.id,
                    &ep.verdict,
                    ep.label,
                    ep.iterations,
                    ep.usage,
                )
            }
            Err(e) => {
                if let Some(miss) = replay_miss(&e) {
                    return Err(Failure::new(
                        EXIT_REPLAY_MISS,
                        format!("replay miss: {miss}"),
                    ));
                }
                log::error!("item {}: {e}", item.id);
                errored += 1;
                VerdictRecord::errored(&item.id, e.to_string())
            }
        };
        let mut out = stdout.lock();
        let _ = writeln!(
            out,
            "{}",
            serde_json::to_string(&record).expect("verdict record serializes")
        );
    }
    if let Some(path) = &args.log {
        fs::write(path, log_out).map_err(|e| io_failure(path, e))?;
    }
    if errored > 0 {
        return Err(Failure::new(
            EXIT_ITEM_ERROR,
            format!("{errored} of {} items failed", items.len()),
        ));
    }
    Ok(())
}

fn bench(cli: &Cli, args: &BenchArgs) -> Result<(), Failure> {
    let profile = Profile::load(&args.profile)?;
    let taxonomy = profile.taxonomy()?;
    let items = load_corpus(&args.corpus, &taxonomy)?;
    validate_items(&items)?;
    let prices = profile.price_table()?;
    let engine = profile.build_engine(&options(cli, args.seed, None))?;
    let run = run_benchmark(&engine, &items, args.parallel as usize, Some(&prices))
        .map_err(|e| Failure::new(EXIT_CONFIG, format!("configuration error: {e}")))?;

    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
        let verdicts = dir.join("verdicts.jsonl");
        fs::write(&verdicts, records_to_jsonl(&run.records))
            .map_err(|e| io_failure(&verdicts, e))?;
        let metrics = dir.join("metrics.json");
        let json = serde_json::to_string_pretty(&run.report).expect("metrics serialize");
        fs::write(&metrics, json + "\n").map_err(|e| io_failure(&metrics, e))?;
    }
    print!("{}", run.report.render_table(&taxonomy));

    if let Some(miss) = run.replay_miss {
        return Err(Failure::new(EXIT_REPLAY_MISS, miss));
    }
    if run.report.errored > 0 {
        return Err(Failure::new(
            EXIT_ITEM_ERROR,
            format!(
                "{} of {} items failed",
                run.report.errored, run.report.items
            ),
        ));
    }
    Ok(())
}

fn select(cli: &Cli, args: &SelectArgs) -> Result<(), Failure> {
    let profile = Profile::load(&args.profile)?;
    let taxonomy = profile.taxonomy()?;
    let corpus = load_corpus(&args.corpus, &taxonomy)?;
    let candidates = profile.cards(Some(&args.candidates))?;
    let base = match &args.base {
        Some(names) => profile.cards(Some(names))?,
        None => profile
            .cards(None)?
            .into_iter()
            .filter(|c| !candidates.iter().any(|k| k.name == c.name))
            .collect(),
    };

    let mut miss = None;
    let evaluate =
        |tools: &[verisearch_core::toolkit::ToolCard], items: &[NewsItem]| -> Result<f64, String> {
            let names: Vec<String> = tools.iter().map(|c| c.name.clone()).collect();
            let engine = profile
                .build_engine(&options(cli, args.seed, Some(names.clone())))
                .map_err(|e| e.to_string())?;
            let run = run_benchmark(&engine, items, args.parallel as usize, None)
                .map_err(|e| e.to_string())?;
            if let Some(m) = run.replay_miss {
                miss = Some(m.clone());
                return Err(m);
            }
            if run.report.errored > 0 {
                return Err(format!(
                    "{} items failed with tools {{{}}}",
                    run.report.errored,
                    names.join(", ")
                ));
            }
            Ok(run.report.accuracy)
        };
    let result = select_tools(&candidates, &base, &corpus, evaluate);

    let write_report = |report: &SelectionReport| -> Result<(), Failure> {
        print!("{}", report.render_table());
        if let Some(path) = &args.report {
            let json = serde_json::to_string_pretty(report).expect("report serializes");
            fs::write(path, json + "\n").map_err(|e| io_failure(path, e))?;
        }
        Ok(())
    };
    match result {
        Ok(report) => {
            write_report(&report)?;
            if let Some(path) = &args.export {
                let mut tools = report.base.clone();
                tools.extend(report.accepted.iter().cloned());
                let text = profile.export_with_tools(&tools)?;
                fs::write(path, text).map_err(|e| io_failure(path, e))?;
            }
            Ok(())
        }
        Err(SelectionError::EvaluatorFailure { message, partial }) => {
            write_report(&partial)?;
            let code = if miss.is_some() {
                EXIT_REPLAY_MISS
            } else {
                EXIT_ITEM_ERROR
            };
            Err(Failure::new(code, format!("evaluator failed: {message}")))
        }
        Err(SelectionError::EmptyCorpus) => {
            Err(Failure::new(EXIT_DATA, "development corpus is empty"))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();

    let result = match &cli.command {
        Command::Detect(a) => detect(&cli, a),
        Command::Bench(a) => bench(&cli, a),
        Command::SelectTools(a) => select(&cli, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("verisearch: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
