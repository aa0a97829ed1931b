use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use halluguard::batch::{self, JudgeMode, Manifest, CONFIG_SNAPSHOT_FILE};
use halluguard::enhancement::default_allowlist;
use halluguard::gateway::fixture::{load_scenarios, TextGenFixture};
use halluguard::pipeline::{Mode, Pipeline, PipelineConfig};
use halluguard::pope::{self, GroundTruthCorpus, Strategy};
use halluguard::synth::{SynthOptions, SynthWorld};
use halluguard::Endpoint;

#[derive(Parser)]
#[command(name = "halluguard", version, about = "Caption hallucination correction and object-probing evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Full,
    Hcnet,
    EnhanceOnly,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => Mode::Full,
            ModeArg::Hcnet => Mode::Hcnet,
            ModeArg::EnhanceOnly => Mode::EnhanceOnly,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Random,
    Popular,
    Adversarial,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Random => Strategy::Random,
            StrategyArg::Popular => Strategy::Popular,
            StrategyArg::Adversarial => Strategy::Adversarial,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Correct every caption in a manifest and write a run directory.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, env = "HALLU_CONFIG")]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "parallel")]
        parallel: Option<usize>,
        #[arg(long, default_value = "run")]
        run_dir: PathBuf,
    },
    /// Score a run's before and after captions against probing questions.
    Eval {
        #[arg(long = "run")]
        run_dir: PathBuf,
        #[arg(long)]
        questions: PathBuf,
        /// Backend id in the config that answers the questions.
        #[arg(long)]
        judge: String,
        /// Config holding the judge; defaults to the run's config snapshot.
        #[arg(long, env = "HALLU_CONFIG")]
        config: Option<PathBuf>,
        /// Ask a vision backend about the image instead of judging captions.
        #[arg(long)]
        direct_vqa: bool,
    },
    /// Write annotation records for every successfully corrected image.
    Export {
        #[arg(long = "run")]
        run_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate balanced yes/no questions from a ground-truth corpus.
    GenQuestions {
        #[arg(long)]
        stats: PathBuf,
        #[arg(long, value_enum)]
        strategy: StrategyArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep only traffic-relevant objects.
        #[arg(long)]
        traffic_only: bool,
    },
    /// Fixture utilities.
    Fixtures {
        #[command(subcommand)]
        command: FixturesCommand,
    },
}

#[derive(Subcommand)]
enum FixturesCommand {
    /// Check a scene file or text-model script.
    Validate { file: PathBuf },
    /// Write a synthetic world: scenes, script, manifest, ground truth and config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        images: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Answer-flip rate for verifier A.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
    },
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(
    manifest: &Path,
    config: &Path,
    mode: Option<Mode>,
    seed: Option<u64>,
    parallel: Option<usize>,
    run_dir: &Path,
) -> Result<ExitCode> {
    let mut cfg = PipelineConfig::load(config)?;
    if let Some(mode) = mode {
        cfg.mode = mode;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(p) = parallel {
        cfg.parallelism = p;
    }
    cfg.validate()?;
    let pipeline = Pipeline::from_config(&cfg)?;
    let manifest = Manifest::load(manifest)?;
    let summary = batch::run_batch(&pipeline, &cfg, &manifest, cfg.parallelism, run_dir)?;
    print_json(&summary)?;
    Ok(if summary.failed > 0 { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn eval(run_dir: &Path, questions: &Path, judge: &str, config: Option<&Path>, direct_vqa: bool) -> Result<()> {
    let cfg = match config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::load(run_dir.join(CONFIG_SNAPSHOT_FILE))?,
    };
    let spec = cfg.backend(judge).with_context(|| format!("no backend with id {judge:?}"))?;
    let endpoint = Endpoint::connect(spec.clone())?;
    let questions = pope::read_questions(questions)?;
    let mode = if direct_vqa { JudgeMode::DirectVqa } else { JudgeMode::Caption };
    let outcome = batch::evaluate(run_dir, &questions, &endpoint, mode)?;
    for id in &outcome.missing_images {
        eprintln!("warning: no successful result for image {id}");
    }
    let summary: serde_json::Map<String, serde_json::Value> = outcome
        .reports
        .iter()
        .map(|(name, r)| (name.clone(), serde_json::to_value(r.percent).expect("numbers serialize")))
        .collect();
    print_json(&summary)
}

fn gen_questions(stats: &Path, strategy: Strategy, seed: u64, out: Option<&Path>, traffic_only: bool) -> Result<()> {
    let mut corpus = GroundTruthCorpus::load(stats)?;
    if traffic_only {
        corpus = corpus.restricted_to(&default_allowlist());
    }
    let questions = corpus.questions(strategy, seed)?;
    match out {
        Some(path) => {
            let file = std::fs::File::create(path).with_context(|| path.display().to_string())?;
            pope::write_questions(std::io::BufWriter::new(file), &questions)?;
            eprintln!("wrote {} questions to {}", questions.len(), path.display());
        }
        None => pope::write_questions(std::io::stdout().lock(), &questions)?,
    }
    Ok(())
}

fn validate_fixture(file: &Path) -> Result<ExitCode> {
    let raw = std::fs::read_to_string(file).with_context(|| file.display().to_string())?;
    let value: serde_json::Value = serde_json::from_str(&raw).with_context(|| file.display().to_string())?;
    let issues: Vec<String> = if value.is_array() {
        let scenarios = load_scenarios(file)?;
        let mut issues: Vec<String> = scenarios.iter().flat_map(|s| s.issues()).collect();
        let mut ids = std::collections::BTreeSet::new();
        issues.extend(
            scenarios
                .iter()
                .filter(|s| !ids.insert(&s.image_id))
                .map(|s| format!("duplicate image id {:?}", s.image_id)),
        );
        println!("{} scenarios", scenarios.len());
        issues
    } else if value.get("backends").is_some() {
        let cfg = PipelineConfig::load(file)?;
        cfg.validate().err().map(|e| e.to_string()).into_iter().collect()
    } else if value.get("mode").is_some() {
        TextGenFixture::load(file)?;
        Vec::new()
    } else {
        bail!("{}: not a scene file, text-model script or config", file.display());
    };
    for issue in &issues {
        println!("issue: {issue}");
    }
    if issues.is_empty() {
        println!("ok");
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(1))
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { manifest, config, mode, seed, parallel, run_dir } => {
            run(&manifest, &config, mode.map(Into::into), seed, parallel, &run_dir)
        }
        Command::Eval { run_dir, questions, judge, config, direct_vqa } => {
            eval(&run_dir, &questions, &judge, config.as_deref(), direct_vqa).map(|_| ExitCode::SUCCESS)
        }
        Command::Export { run_dir, out } => {
            let summary = batch::export_dataset(&run_dir, &out)?;
            print_json(&summary)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::GenQuestions { stats, strategy, seed, out, traffic_only } => {
            gen_questions(&stats, strategy.into(), seed, out.as_deref(), traffic_only).map(|_| ExitCode::SUCCESS)
        }
        Command::Fixtures { command: FixturesCommand::Validate { file } } => validate_fixture(&file),
        Command::Fixtures { command: FixturesCommand::Synth { out, images, seed, noise } } => {
            if !(0.0..1.0).contains(&noise) {
                bail!("noise must lie in [0, 1)");
            }
            let world =
                SynthWorld::generate(SynthOptions { images, seed, verifier_a_error_rate: noise, ..Default::default() });
            let files = world.write(&out)?;
            println!("{}", files.config.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
