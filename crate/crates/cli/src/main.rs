use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stereo_audit::analysis::PairingMode;
use stereo_audit::pipeline::{
    self, run_analyze, run_pipeline, run_pmi, run_report, run_score, stage_collect, stage_validate, PipelineError,
    RunConfig,
};
use stereo_audit::stats::Correction;

#[derive(Parser)]
#[command(name = "stereo-audit", version, about = "Audit image descriptions for attribute stereotypes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the manifest grid and image tones.
    Validate(Common),
    /// Collect descriptions from the configured endpoints.
    Collect(Common),
    /// Compute sentiment, warmth and competence for stored descriptions.
    Score(Common),
    /// Run the paired t-test battery and correlations.
    Analyze(Common),
    /// Build PMI word tables.
    Pmi(Common),
    /// Render the t-statistic table from battery results.
    Report(Common),
    /// All stages in order.
    Run(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum PairingArg {
    Strict,
    Lenient,
}

#[derive(Clone, Copy, ValueEnum)]
enum CorrectionArg {
    None,
    Bonferroni,
    Holm,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    image_root: Option<PathBuf>,
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    prompt: Option<String>,
    #[arg(long)]
    retry_limit: Option<u32>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    cosine_threshold: Option<f64>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long, value_enum)]
    pairing: Option<PairingArg>,
    #[arg(long, value_enum)]
    correction: Option<CorrectionArg>,
    /// Comma-separated warmth words.
    #[arg(long, value_delimiter = ',')]
    warmth_words: Option<Vec<String>>,
    /// Comma-separated competence words.
    #[arg(long, value_delimiter = ',')]
    competence_words: Option<Vec<String>>,
}

impl Common {
    fn config(&self) -> Result<RunConfig, PipelineError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_toml_path(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.manifest {
            c.manifest = v.clone();
        }
        if let Some(v) = &self.image_root {
            c.image_root = Some(v.clone());
        }
        if let Some(v) = &self.output_dir {
            c.output_dir = v.clone();
        }
        if let Some(v) = &self.prompt {
            c.collector.prompt = v.clone();
        }
        if let Some(v) = self.retry_limit {
            c.collector.retry_limit = v;
        }
        if let Some(v) = self.concurrency {
            c.collector.concurrency = v;
        }
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.cosine_threshold {
            c.cosine_threshold = v;
        }
        if let Some(v) = self.top_k {
            c.top_k = v;
        }
        if let Some(v) = self.pairing {
            c.pairing = match v {
                PairingArg::Strict => PairingMode::Strict,
                PairingArg::Lenient => PairingMode::Lenient,
            };
        }
        if let Some(v) = self.correction {
            c.correction = match v {
                CorrectionArg::None => Correction::None,
                CorrectionArg::Bonferroni => Correction::Bonferroni,
                CorrectionArg::Holm => Correction::Holm,
            };
        }
        if let Some(v) = &self.warmth_words {
            c.warmth_words = v.clone();
        }
        if let Some(v) = &self.competence_words {
            c.competence_words = v.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

/// Exit status: 0 clean, 1 findings or failures, 2 bad configuration.
fn execute(command: Command) -> Result<u8, PipelineError> {
    match command {
        Command::Validate(args) => {
            let config = args.config()?;
            let v = stage_validate(&config)?;
            print!(
                "{}",
                std::fs::read_to_string(config.output_dir.join(pipeline::files::MANIFEST_TEXT)).unwrap_or_default()
            );
            Ok(u8::from(!v.report.is_clean()))
        }
        Command::Collect(args) => {
            let config = args.config()?;
            let endpoints = config.endpoints()?;
            if endpoints.is_empty() {
                return Err(PipelineError::Config("no models configured".into()));
            }
            let v = stage_validate(&config)?;
            let s = stage_collect(&config, &v.records, &endpoints)?;
            println!("completed {}  cached {}  failed {}", s.completed, s.cached, s.failed);
            for f in &s.failures {
                println!("failed {} {}: {}", f.model_id, f.image_id, f.error);
            }
            Ok(u8::from(s.failed > 0))
        }
        Command::Score(args) => {
            let scores = run_score(&args.config()?)?;
            println!("scored {} descriptions", scores.len());
            Ok(0)
        }
        Command::Analyze(args) => {
            let a = run_analyze(&args.config()?)?;
            for (model, counts) in &a.significance {
                let cells: Vec<String> = counts.iter().map(|(m, c)| format!("{m} {c}")).collect();
                println!("{model}: {}", cells.join(", "));
            }
            Ok(0)
        }
        Command::Pmi(args) => {
            let r = run_pmi(&args.config()?)?;
            println!("{} PMI tables", r.tables.len());
            Ok(0)
        }
        Command::Report(args) => {
            print!("{}", run_report(&args.config()?)?);
            Ok(0)
        }
        Command::Run(args) => {
            let config = args.config()?;
            let s = run_pipeline(&config, None)?;
            print!(
                "{}",
                std::fs::read_to_string(config.output_dir.join(pipeline::files::BATTERY_TABLE)).unwrap_or_default()
            );
            println!(
                "scored {}  manifest findings {}  failed collections {}",
                s.scored, s.manifest_findings, s.collection.failed
            );
            Ok(u8::from(s.findings() > 0))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e @ PipelineError::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
