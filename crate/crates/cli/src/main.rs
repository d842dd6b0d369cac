use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use semcx_core::filtration::{random_subsample, FiltrationConfig};
use semcx_core::reporting::{
    correlate, filtration_report_trace, parse_accuracy_file, read_reports_keyed, render,
    write_trace_dir, Analyzer, ComplexityReport, EncoderSpec, LdaSettings, MeasureConfig,
    OutputFormat, Record, DEFAULT_MAX_GEOMETRIC_POINTS,
};
use semcx_core::{load_dataset, Dataset, InputFormat, NormalizationPolicy, Scope};

const THREADS_VAR: &str = "SEMCX_THREADS";

#[derive(Parser)]
#[command(
    name = "semcx",
    version,
    about = "Semantic complexity of labeled utterance datasets"
)]
struct Cli {
    /// Exit with status 2 when a degenerate computation was flagged.
    #[arg(long, global = true)]
    strict: bool,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Measure one dataset.
    Analyze {
        dataset: PathBuf,
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        measures: MeasureArgs,
        #[arg(
            long,
            default_value = "human-table",
            value_name = "human-table|machine-record|plot-data"
        )]
        format: OutputFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the least-frequent n-gram filtration and report every step.
    Filter {
        dataset: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 3)]
        ngram_order: usize,
        #[arg(long, default_value_t = 0.10)]
        removal_fraction: f64,
        /// Scope used to rank n-grams by frequency.
        #[arg(long, default_value = "unique", value_name = "unique|all")]
        rank_scope: Scope,
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        measures: MeasureArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a seeded random subsample and report it.
    Subsample {
        dataset: PathBuf,
        #[arg(long)]
        keep_fraction: f64,
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        measures: MeasureArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit accuracy against a complexity column.
    Correlate {
        #[arg(long)]
        complexity_col: String,
        /// A filtration trace directory or a directory of report records.
        reports: PathBuf,
        #[arg(long)]
        accuracy_file: PathBuf,
        /// Divide accuracies by the accuracy at the lowest complexity.
        #[arg(long)]
        relative: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a machine record.
    Report {
        record: PathBuf,
        #[arg(
            long,
            default_value = "human-table",
            value_name = "human-table|machine-record|plot-data"
        )]
        format: OutputFormat,
    },
}

#[derive(Args)]
struct InputArgs {
    #[arg(long, value_enum)]
    input_format: Option<InputFormatArg>,
    #[arg(long)]
    keep_case: bool,
    #[arg(long)]
    keep_punctuation: bool,
    #[arg(long)]
    no_collapse_whitespace: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum InputFormatArg {
    Delimited,
    Records,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum EncoderArg {
    Lda,
    External,
}

#[derive(Args)]
struct MeasureArgs {
    #[arg(long, default_value = "unique", value_name = "unique|all")]
    scope: Scope,
    #[arg(long, value_enum, value_delimiter = ',')]
    encoders: Vec<EncoderArg>,
    /// Precomputed embeddings (`id<TAB>v1,v2,...`); repeat for several encoders.
    #[arg(long)]
    embeddings: Vec<PathBuf>,
    #[arg(long)]
    lda_topics: Option<usize>,
    #[arg(long)]
    lda_alpha: Option<f64>,
    #[arg(long)]
    lda_beta: Option<f64>,
    #[arg(long)]
    lda_iters: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_GEOMETRIC_POINTS)]
    max_geometric_points: usize,
}

impl InputArgs {
    fn load(&self, path: &Path) -> anyhow::Result<Dataset> {
        let format = match self.input_format {
            Some(InputFormatArg::Delimited) => InputFormat::DelimitedColumns,
            Some(InputFormatArg::Records) => InputFormat::LineDelimitedRecords,
            None => InputFormat::from_path(path),
        };
        let policy = NormalizationPolicy {
            lowercase: !self.keep_case,
            strip_punctuation: !self.keep_punctuation,
            collapse_whitespace: !self.no_collapse_whitespace,
        };
        let d = load_dataset(path, format, policy)?;
        let dropped = d.summary().dropped_empty.len();
        if dropped > 0 {
            log::warn!(
                "{}: dropped {dropped} examples with empty transcripts",
                path.display()
            );
        }
        Ok(d)
    }
}

impl MeasureArgs {
    fn config(&self) -> anyhow::Result<MeasureConfig> {
        let mut encoders = Vec::new();
        if self.encoders.contains(&EncoderArg::Lda) {
            encoders.push(EncoderSpec::Lda);
        }
        if self.encoders.contains(&EncoderArg::External) && self.embeddings.is_empty() {
            bail!("--encoders external needs --embeddings <path>");
        }
        for path in &self.embeddings {
            encoders.push(EncoderSpec::External { path: path.clone() });
        }
        if self.max_geometric_points < 2 {
            bail!("--max-geometric-points must be at least 2");
        }
        Ok(MeasureConfig {
            scope: self.scope,
            encoders,
            lda: LdaSettings {
                topics: self.lda_topics,
                alpha: self.lda_alpha,
                beta: self.lda_beta,
                iterations: self.lda_iters,
            },
            seed: self.seed,
            max_geometric_points: self.max_geometric_points,
        })
    }
}

/// Outcome of a command: whether a degenerate computation was flagged.
struct Outcome {
    degenerate: bool,
}

fn stamp(mut r: ComplexityReport) -> ComplexityReport {
    r.generated_at = std::env::var("SOURCE_DATE_EPOCH").ok();
    r
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_all_formats(dir: &Path, stem: &str, record: &Record) -> anyhow::Result<()> {
    create_dir(dir)?;
    write(&dir.join(format!("{stem}.rec")), &record.to_machine()?)?;
    write(
        &dir.join(format!("{stem}.txt")),
        &render(record, OutputFormat::HumanTable)?,
    )?;
    write(
        &dir.join(format!("{stem}.csv")),
        &render(record, OutputFormat::PlotData)?,
    )
}

fn run(command: Command) -> anyhow::Result<Outcome> {
    match command {
        Command::Analyze {
            dataset,
            input,
            measures,
            format,
            out,
        } => {
            let d = input.load(&dataset)?;
            let report = stamp(Analyzer::new(measures.config()?).report(&d)?);
            let degenerate = report.is_degenerate();
            let record = Record::ComplexityReport(report);
            if let Some(dir) = out {
                write_all_formats(&dir, "report", &record)?;
            }
            print!("{}", render(&record, format)?);
            Ok(Outcome { degenerate })
        }
        Command::Filter {
            dataset,
            steps,
            ngram_order,
            removal_fraction,
            rank_scope,
            input,
            measures,
            out,
        } => {
            let d = input.load(&dataset)?;
            let cfg = FiltrationConfig {
                ngram_order,
                removal_fraction,
                steps,
                scope: rank_scope,
                seed: measures.seed,
            };
            let mut trace = filtration_report_trace(&d, &cfg, &measures.config()?)?;
            for s in &mut trace.steps {
                s.report = stamp(s.report.clone());
            }
            write_trace_dir(&trace, &out)?;
            let degenerate = trace.steps.iter().any(|s| s.report.is_degenerate());
            let record = Record::FiltrationTrace(trace);
            write(
                &out.join("trace.txt"),
                &render(&record, OutputFormat::HumanTable)?,
            )?;
            write(
                &out.join("trace.csv"),
                &render(&record, OutputFormat::PlotData)?,
            )?;
            print!("{}", render(&record, OutputFormat::HumanTable)?);
            Ok(Outcome { degenerate })
        }
        Command::Subsample {
            dataset,
            keep_fraction,
            input,
            measures,
            out,
        } => {
            let d = input.load(&dataset)?;
            let sample = random_subsample(&d, keep_fraction, measures.seed)?;
            create_dir(&out)?;
            sample.write_records(&out.join("dataset.jsonl"))?;
            let mut ids = sample.ids().join("\n");
            ids.push('\n');
            write(&out.join("ids.txt"), &ids)?;
            let report = stamp(Analyzer::new(measures.config()?).report(&sample)?);
            let degenerate = report.is_degenerate();
            let record = Record::ComplexityReport(report);
            write_all_formats(&out, "report", &record)?;
            println!("kept {} of {} examples", sample.len(), d.len());
            print!("{}", render(&record, OutputFormat::HumanTable)?);
            Ok(Outcome { degenerate })
        }
        Command::Correlate {
            complexity_col,
            reports,
            accuracy_file,
            relative,
            out,
        } => {
            let keyed = read_reports_keyed(&reports)?;
            let text = fs::read_to_string(&accuracy_file)
                .with_context(|| format!("reading {}", accuracy_file.display()))?;
            let accuracies = parse_accuracy_file(&text)?;
            let fit = correlate(&keyed, &accuracies, &complexity_col, relative)?;
            let degenerate = fit.degenerate;
            let record = Record::Correlation(fit);
            write_all_formats(&out, "correlation", &record)?;
            print!("{}", render(&record, OutputFormat::HumanTable)?);
            Ok(Outcome { degenerate })
        }
        Command::Report { record, format } => {
            let parsed = Record::read(&record)?;
            let degenerate = match &parsed {
                Record::ComplexityReport(r) => r.is_degenerate(),
                Record::FiltrationTrace(t) => t.steps.iter().any(|s| s.report.is_degenerate()),
                Record::TraceManifest(m) => m.steps.iter().any(|s| !s.flags.is_empty()),
                Record::Correlation(c) => c.degenerate,
            };
            print!("{}", render(&parsed, format)?);
            Ok(Outcome { degenerate })
        }
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("{THREADS_VAR} must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the thread pool")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors are input errors; status 2 is reserved for --strict
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = configure_threads().and_then(|()| run(cli.command));
    match result {
        Ok(outcome) if outcome.degenerate && cli.strict => {
            eprintln!("semcx: degenerate computation flagged (--strict)");
            ExitCode::from(2)
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("semcx: {e:#}");
            ExitCode::from(1)
        }
    }
}
