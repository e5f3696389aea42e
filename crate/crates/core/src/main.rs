use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;

use kwseq::acoustic::FrameClassifier;
use kwseq::criteria::CriterionKind;
use kwseq::evalcli::{
    align_split, gen_corpus, model_topology, report_from_results, train_system, with_threads, write_roc_csv, Corpus,
    Decoder, ExperimentConfig, PostMode, Split, System,
};
use kwseq::postproc::write_detections;
use kwseq::topology::TopologyKind;
use kwseq::KwsError;

#[derive(Parser, Debug)]
#[command(name = "kwseq", version, about = "Sequence-trained keyword spotting on synthetic corpora")]
struct Cli {
    /// Experiment configuration (JSON); flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    criterion: Option<CriterionKind>,
    #[arg(long, global = true)]
    topology: Option<TopologyKind>,
    #[arg(long, global = true)]
    post: Option<PostMode>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Corpus directory written by `gen-data`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Output file; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an acoustic model.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Forced-align a split with a trained model.
    Align {
        #[command(flatten)]
        io: ModelArgs,
        #[arg(long, default_value = "dev")]
        split: String,
    },
    /// Write keyword detections for a split as CSV.
    Decode {
        #[command(flatten)]
        io: ModelArgs,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Score the test split and print the metrics report as JSON.
    Eval {
        #[command(flatten)]
        io: ModelArgs,
        /// Also write the ROC as CSV.
        #[arg(long)]
        roc: Option<PathBuf>,
    },
    /// Sweep the shared threshold offset and print the ROC as CSV.
    Sweep {
        #[command(flatten)]
        io: ModelArgs,
    },
}

/// Failures split by exit code: 2 for configuration, 3 for data.
enum Failure {
    Config(anyhow::Error),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<KwsError>() {
            Some(KwsError::Config(_)) => Failure::Config(e),
            _ => Failure::Data(e),
        }
    }
}

impl From<KwsError> for Failure {
    fn from(e: KwsError) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(Failure::Config)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.synth.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    if let Some(k) = cli.criterion {
        cfg.criterion.kind = k;
    }
    if let Some(t) = cli.topology {
        cfg.topology = t;
    }
    if let Some(p) = cli.post {
        cfg.post = p;
    }
    cfg.validate().map_err(|e| Failure::Config(e.into()))?;
    Ok(cfg)
}

fn output(path: &Option<PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_corpus(dir: &Path) -> anyhow::Result<Corpus> {
    Corpus::load(dir).with_context(|| format!("loading corpus from {}", dir.display()))
}

/// Loads a model and rebuilds the system it was trained for.
fn load_system(io: &ModelArgs) -> anyhow::Result<(Corpus, System, FrameClassifier)> {
    let corpus = load_corpus(&io.data)?;
    let model = FrameClassifier::load(&io.model).with_context(|| format!("loading model {}", io.model.display()))?;
    let system = System::new(&corpus, model_topology(&model)?)?;
    Ok((corpus, system, model))
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    let res: anyhow::Result<()> = with_threads(cfg.threads, || match &cli.command {
        Command::GenData { out } => {
            let corpus = gen_corpus(&cfg.synth)?;
            corpus.save(out).with_context(|| format!("writing corpus to {}", out.display()))?;
            info!("wrote {} / {} / {} utterances", corpus.train.len(), corpus.dev.len(), corpus.test.len());
            Ok(())
        }
        Command::Train { data, out } => {
            let corpus = load_corpus(data)?;
            let system = System::new(&corpus, cfg.topology)?;
            let trained = train_system(&corpus, &system, &cfg)?;
            trained.model.save(out).with_context(|| format!("writing model {}", out.display()))?;
            Ok(())
        }
        Command::Align { io, split } => {
            let split: Split = split.parse()?;
            let (corpus, system, model) = load_system(io)?;
            let utts = corpus.split(split);
            let mut w = output(&io.out)?;
            for (u, a) in utts.iter().zip(align_split(&model, &system, utts)?) {
                match a {
                    Some(a) => {
                        let names: Vec<String> = a.iter().map(|&c| system.topology.class_name(c)).collect();
                        writeln!(w, "{}\t{}", u.id, names.join(" "))?;
                    }
                    None => log::warn!("no alignment for {}", u.id),
                }
            }
            w.flush()?;
            Ok(())
        }
        Command::Decode { io, split } => {
            let split: Split = split.parse()?;
            let (corpus, system, model) = load_system(io)?;
            let decoder = Decoder::prepare(cfg.post, &system, &model, &corpus.dev, &cfg)?;
            let (results, _) = decoder.decode_split(corpus.split(split), cfg.peak)?;
            let rows: Vec<_> =
                results.into_iter().flat_map(|r| r.detections.into_iter().map(move |d| (r.id.clone(), d))).collect();
            let mut w = output(&io.out)?;
            write_detections(&mut w, &rows)?;
            w.flush()?;
            Ok(())
        }
        Command::Eval { io, roc } => {
            let (corpus, system, model) = load_system(io)?;
            let decoder = Decoder::prepare(cfg.post, &system, &model, &corpus.dev, &cfg)?;
            let (results, secs) = decoder.decode_split(&corpus.test, cfg.peak)?;
            let report = report_from_results(&corpus, &results, secs, cfg.post)?;
            let mut w = output(&io.out)?;
            w.write_all(report.to_json()?.as_bytes())?;
            w.flush()?;
            if let Some(path) = roc {
                write_roc_csv(BufWriter::new(File::create(path)?), &report.roc)?;
            }
            Ok(())
        }
        Command::Sweep { io } => {
            let (corpus, system, model) = load_system(io)?;
            let decoder = Decoder::prepare(cfg.post, &system, &model, &corpus.dev, &cfg)?;
            let (results, secs) = decoder.decode_split(&corpus.test, cfg.peak)?;
            let report = report_from_results(&corpus, &results, secs, cfg.post)?;
            let mut w = output(&io.out)?;
            write_roc_csv(&mut w, &report.roc)?;
            w.flush()?;
            Ok(())
        }
    })?;
    res.map_err(Failure::from)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
