//! Command-line driver.
//!
//! Settings are layered: command-line flags override keys of the optional
//! `--config` TOML file, which override built-in defaults. Every report starts
//! with a header line carrying the tool version, seed, a digest of the
//! effective settings and digests of the input files, and contains nothing
//! else that varies between runs.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::check::{composite_grad_check, CheckSettings};
use crate::corpus::{generate_synthetic, quality_gate, Corpus, SynthConfig};
use crate::diarization::{self, build_benchmark, evaluate_conversations, label_records, rttm_write};
use crate::encoder::{Encoder, OneHotVoice, PassThrough, Table, Trained};
use crate::error::Error;
use crate::gap::{self, embed_corpus, gap_report, GapSettings};
use crate::model::checkpoint::Checkpoint;
use crate::model::{ModelConfig, ModelParams};
use crate::numerics::{rng::streams, Coverage, Rng};
use crate::objective::LossConfig;
use crate::optimizer::OptimConfig;
use crate::trainer::{read_history, train_from, write_history, TrainConfig, TrainState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "lase", version, about = "Language-adversarial speaker encoder toolkit")]
struct Cli {
    /// TOML file with flat keys; flags take precedence over it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic entangled-feature corpus.
    GenSynth(GenSynthArgs),
    /// Filter a corpus by cosine similarity to each voice's English reference.
    Gate(GateArgs),
    /// Train the projection head and language classifier.
    Train(TrainArgs),
    /// Within-script / cross-script / across-speaker gap report.
    EvalGap(EvalGapArgs),
    /// Code-switching diarisation benchmark.
    Diar(DiarArgs),
    /// Finite-difference check of the full training graph.
    GradCheck(GradCheckArgs),
}

#[derive(Args, Debug)]
struct GenSynthArgs {
    /// Output corpus file (JSON lines).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed [default: 1337]
    #[arg(long)]
    seed: Option<u64>,
    /// Number of voices [default: 8]
    #[arg(long)]
    voices: Option<usize>,
    /// Clips per voice per language [default: 50]
    #[arg(long)]
    clips_per_lang: Option<usize>,
    /// Frame feature dimension [default: 768]
    #[arg(long)]
    feature_dim: Option<usize>,
    /// Speaker direction scale [default: 1.0]
    #[arg(long)]
    speaker_scale: Option<f64>,
    /// Language direction scale α [default: 0.3]
    #[arg(long)]
    language_scale: Option<f64>,
    /// Per-frame noise norm [default: 0.1]
    #[arg(long)]
    noise_scale: Option<f64>,
}

#[derive(Args, Debug)]
struct GateArgs {
    /// Input corpus file.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output directory for the gated corpus and the report.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Minimum cosine to the voice's reference clip [default: 0.90]
    #[arg(long, allow_hyphen_values = true)]
    threshold: Option<f64>,
    /// Gate with a trained checkpoint instead of pooled raw features.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training corpus file.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output directory for checkpoint.bin, history.jsonl and the report.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from a checkpoint; its history.jsonl must sit beside it.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Random seed [default: 1337]
    #[arg(long)]
    seed: Option<u64>,
    /// Optimizer steps [default: 1000]
    #[arg(long)]
    steps: Option<u64>,
    /// Batch size [default: 16]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Distinct voices per batch [default: 4]
    #[arg(long)]
    voices_per_batch: Option<usize>,
    /// AdamW learning rate [default: 1e-4]
    #[arg(long)]
    learning_rate: Option<f64>,
    /// AdamW decoupled weight decay [default: 0.01]
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Global gradient-norm clip [default: 1.0]
    #[arg(long)]
    clip_norm: Option<f64>,
    /// SupCon temperature [default: 0.07]
    #[arg(long)]
    temperature: Option<f64>,
    /// Steps with zero reversal strength [default: 200]
    #[arg(long)]
    warmup_steps: Option<u64>,
    /// Steps of linear ramp after warmup [default: 500]
    #[arg(long)]
    ramp_steps: Option<u64>,
    /// Final reversal strength [default: 0.1]
    #[arg(long)]
    lambda_max: Option<f64>,
    /// Projection hidden width [default: 512]
    #[arg(long)]
    hidden_dim: Option<usize>,
    /// Embedding dimension [default: 256]
    #[arg(long)]
    embed_dim: Option<usize>,
    /// Language classifier hidden width [default: 128]
    #[arg(long)]
    classifier_hidden: Option<usize>,
    /// Dropout after the projection hidden layer [default: 0.1]
    #[arg(long)]
    dropout: Option<f64>,
}

#[derive(Args, Debug)]
struct EvalGapArgs {
    /// Corpus file.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output directory for the reports.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trained checkpoint to evaluate alongside the pass-through baseline.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// External embedding table (JSON lines of clip_id, vector); repeatable.
    #[arg(long)]
    embeddings: Vec<PathBuf>,
    /// Pairs sampled per bucket [default: 200]
    #[arg(long)]
    pairs: Option<usize>,
    /// Bootstrap iterations [default: 1000]
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Confidence level [default: 0.95]
    #[arg(long)]
    level: Option<f64>,
    /// Random seed [default: 1337]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct DiarArgs {
    /// Corpus file the conversations are drawn from.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output directory for RTTM files, labels and reports.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trained checkpoint to evaluate alongside the pass-through baseline.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Also evaluate one-hot voice embeddings (an upper bound).
    #[arg(long)]
    oracle: bool,
    /// Number of conversations [default: 50]
    #[arg(long)]
    conversations: Option<usize>,
    /// Random seed [default: 1337]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct GradCheckArgs {
    /// Central-difference step [default: 1e-5]
    #[arg(long)]
    epsilon: Option<f64>,
    /// Random seed [default: 1337]
    #[arg(long)]
    seed: Option<u64>,
    /// Reversal strength used in the check [default: 0.1]
    #[arg(long)]
    lambda: Option<f64>,
    /// Coordinates probed per parameter tensor, 0 for all [default: 24]
    #[arg(long)]
    coords: Option<usize>,
    /// Input feature dimension [default: 768]
    #[arg(long)]
    feature_dim: Option<usize>,
}

/// Keys accepted in the `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    voices: Option<usize>,
    clips_per_lang: Option<usize>,
    feature_dim: Option<usize>,
    speaker_scale: Option<f64>,
    language_scale: Option<f64>,
    noise_scale: Option<f64>,
    threshold: Option<f64>,
    steps: Option<u64>,
    batch_size: Option<usize>,
    voices_per_batch: Option<usize>,
    learning_rate: Option<f64>,
    weight_decay: Option<f64>,
    clip_norm: Option<f64>,
    temperature: Option<f64>,
    warmup_steps: Option<u64>,
    ramp_steps: Option<u64>,
    lambda_max: Option<f64>,
    hidden_dim: Option<usize>,
    embed_dim: Option<usize>,
    classifier_hidden: Option<usize>,
    dropout: Option<f64>,
    pairs: Option<usize>,
    bootstrap: Option<usize>,
    level: Option<f64>,
    conversations: Option<usize>,
    epsilon: Option<f64>,
    lambda: Option<f64>,
    coords: Option<usize>,
    corpus: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_DATA
            }
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<FileConfig>(&text).map_err(|e| Error::Parse {
                path: p.clone(),
                line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
                msg: e.message().to_string(),
            })?
        }
        None => FileConfig::default(),
    };
    match cli.command {
        Command::GenSynth(a) => gen_synth(a, &file),
        Command::Gate(a) => gate(a, &file),
        Command::Train(a) => train(a, &file),
        Command::EvalGap(a) => eval_gap(a, &file),
        Command::Diar(a) => diar(a, &file),
        Command::GradCheck(a) => grad_check(a, &file),
    }
}

fn required(flag: Option<PathBuf>, file: &Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
    required_as(flag, file, name, name)
}

fn required_as(flag: Option<PathBuf>, file: &Option<PathBuf>, name: &str, key: &str) -> CliResult<PathBuf> {
    flag.or_else(|| file.clone())
        .ok_or_else(|| Failure::Usage(format!("missing --{name} (or `{key}` in the config file)")))
}

fn optional(flag: Option<PathBuf>, file: &Option<PathBuf>) -> Option<PathBuf> {
    flag.or_else(|| file.clone())
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_digest(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

/// `# lase <version> <command> seed=<seed> config=<digest> <input>=<digest>...`
fn header(command: &str, seed: u64, settings: &impl Serialize, inputs: &[&Path]) -> CliResult<String> {
    let json = serde_json::to_string(settings).map_err(Error::from)?;
    let mut h = format!(
        "# lase {} {command} seed={seed} config=sha256:{}",
        env!("CARGO_PKG_VERSION"),
        &sha256_hex(json.as_bytes())[..16]
    );
    for p in inputs {
        write!(h, " {}=sha256:{}", file_name(p), file_digest(p)?).expect("string write");
    }
    Ok(h)
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e).into())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e).into())
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(Error::from)?;
    s.push('\n');
    write_file(path, s)
}

fn load_trained(path: &Path, corpus: &Corpus) -> CliResult<Trained> {
    let ck = Checkpoint::load(path)?;
    if ck.config.input_dim != corpus.feature_dim() {
        return Err(Error::shape(
            "checkpoint",
            format!(
                "model input_dim {} vs corpus feature_dim {}",
                ck.config.input_dim,
                corpus.feature_dim()
            ),
        )
        .into());
    }
    Ok(Trained {
        name: "lase".into(),
        params: ck.params,
        config: ck.config,
    })
}

fn gen_synth(a: GenSynthArgs, f: &FileConfig) -> CliResult<()> {
    let out = required_as(a.out, &f.corpus, "out", "corpus")?;
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        seed: a.seed.or(f.seed).unwrap_or(d.seed),
        num_voices: a.voices.or(f.voices).unwrap_or(d.num_voices),
        clips_per_voice_per_lang: a.clips_per_lang.or(f.clips_per_lang).unwrap_or(d.clips_per_voice_per_lang),
        feature_dim: a.feature_dim.or(f.feature_dim).unwrap_or(d.feature_dim),
        speaker_scale: a.speaker_scale.or(f.speaker_scale).unwrap_or(d.speaker_scale),
        language_scale: a.language_scale.or(f.language_scale).unwrap_or(d.language_scale),
        noise_scale: a.noise_scale.or(f.noise_scale).unwrap_or(d.noise_scale),
        ..d
    };
    let corpus = generate_synthetic(&cfg)?;
    corpus.write(&out)?;
    println!("wrote {} clips ({} voices) to {}", corpus.len(), cfg.num_voices, out.display());
    Ok(())
}

#[derive(Serialize)]
struct GateSettings {
    threshold: f64,
    encoder: String,
}

fn gate(a: GateArgs, f: &FileConfig) -> CliResult<()> {
    let corpus_path = required(a.corpus, &f.corpus, "corpus")?;
    let out = required(a.out, &f.out, "out")?;
    let threshold = a.threshold.or(f.threshold).unwrap_or(0.90);
    let corpus = Corpus::read(&corpus_path)?;
    let checkpoint = a.checkpoint;
    let encoder: Box<dyn Encoder> = match &checkpoint {
        Some(p) => Box::new(load_trained(p, &corpus)?),
        None => Box::new(PassThrough),
    };
    let (gated, report) = quality_gate(&corpus, encoder.as_ref(), threshold)?;
    create_dir(&out)?;
    gated.write(&out.join("gated.jsonl"))?;

    let settings = GateSettings {
        threshold,
        encoder: encoder.name().to_string(),
    };
    let mut inputs = vec![corpus_path.as_path()];
    inputs.extend(checkpoint.as_deref());
    let mut text = header("gate", corpus.manifest.seed.unwrap_or(0), &settings, &inputs)?;
    writeln!(text).expect("string write");
    writeln!(text, "encoder {}", report.encoder).expect("string write");
    writeln!(text, "threshold {threshold:.2}").expect("string write");
    writeln!(text, "voice  lang  passed  total").expect("string write");
    for c in &report.cells {
        writeln!(text, "{}  {}  {}  {}", c.voice, c.lang, c.passed, c.total).expect("string write");
    }
    writeln!(
        text,
        "overall  {} / {}  pass rate {} ({})",
        report.passed,
        report.total,
        report.pass_rate_display(),
        report.pass_rate_percent()
    )
    .expect("string write");
    write_file(&out.join("gate_report.txt"), &text)?;
    write_json(&out.join("gate_report.json"), &report)?;
    print!("{text}");
    Ok(())
}

fn train(a: TrainArgs, f: &FileConfig) -> CliResult<()> {
    let corpus_path = required(a.corpus, &f.corpus, "corpus")?;
    let out = required(a.out, &f.out, "out")?;
    let corpus = Corpus::read(&corpus_path)?;
    let (dm, dl, doo, dt) = (
        ModelConfig::default(),
        LossConfig::default(),
        OptimConfig::default(),
        TrainConfig::default(),
    );
    let config = TrainConfig {
        steps: a.steps.or(f.steps).unwrap_or(dt.steps),
        batch_size: a.batch_size.or(f.batch_size).unwrap_or(dt.batch_size),
        voices_per_batch: a.voices_per_batch.or(f.voices_per_batch).unwrap_or(dt.voices_per_batch),
        seed: a.seed.or(f.seed).unwrap_or(dt.seed),
        model: ModelConfig {
            input_dim: corpus.feature_dim(),
            hidden_dim: a.hidden_dim.or(f.hidden_dim).unwrap_or(dm.hidden_dim),
            embed_dim: a.embed_dim.or(f.embed_dim).unwrap_or(dm.embed_dim),
            classifier_hidden: a.classifier_hidden.or(f.classifier_hidden).unwrap_or(dm.classifier_hidden),
            num_languages: dm.num_languages,
            dropout_rate: a.dropout.or(f.dropout).unwrap_or(dm.dropout_rate),
        },
        loss: LossConfig {
            temperature: a.temperature.or(f.temperature).unwrap_or(dl.temperature),
            warmup_steps: a.warmup_steps.or(f.warmup_steps).unwrap_or(dl.warmup_steps),
            ramp_steps: a.ramp_steps.or(f.ramp_steps).unwrap_or(dl.ramp_steps),
            lambda_max: a.lambda_max.or(f.lambda_max).unwrap_or(dl.lambda_max),
            ..dl
        },
        optim: OptimConfig {
            learning_rate: a.learning_rate.or(f.learning_rate).unwrap_or(doo.learning_rate),
            weight_decay: a.weight_decay.or(f.weight_decay).unwrap_or(doo.weight_decay),
            clip_norm: a.clip_norm.or(f.clip_norm).unwrap_or(doo.clip_norm),
            ..doo
        },
        freeze_classifier: false,
    };
    config.validate()?;

    let state = match &a.resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if ck.config != config.model {
                return Err(Error::invalid("checkpoint model config differs from the requested one").into());
            }
            let hist_path = p.with_file_name("history.jsonl");
            TrainState::from_checkpoint(ck, read_history(&hist_path)?)?
        }
        None => TrainState::init(&config)?,
    };
    let state = train_from(&corpus, &config, state)?;

    create_dir(&out)?;
    state.to_checkpoint(&config.model).save(&out.join("checkpoint.bin"))?;
    write_history(&out.join("history.jsonl"), &state.history)?;

    let mut inputs = vec![corpus_path.as_path()];
    inputs.extend(a.resume.as_deref());
    let mut text = header("train", config.seed, &config, &inputs)?;
    writeln!(text).expect("string write");
    let h = &state.history;
    let mean = |r: &[crate::trainer::StepRecord], f: fn(&crate::trainer::StepRecord) -> f64| {
        r.iter().map(f).sum::<f64>() / r.len() as f64
    };
    let first = &h[..h.len().min(10)];
    let last = &h[h.len().saturating_sub(100)..];
    writeln!(text, "steps {}", state.step).expect("string write");
    writeln!(text, "l_spk first-10 mean {:.4}", mean(first, |r| r.l_spk)).expect("string write");
    writeln!(text, "l_spk last-100 mean {:.4}", mean(last, |r| r.l_spk)).expect("string write");
    writeln!(text, "l_lang last-100 mean {:.4} (ln 4 = {:.4})", mean(last, |r| r.l_lang), 4f64.ln())
        .expect("string write");
    write_file(&out.join("train_report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn eval_gap(a: EvalGapArgs, f: &FileConfig) -> CliResult<()> {
    let corpus_path = required(a.corpus, &f.corpus, "corpus")?;
    let out = required(a.out, &f.out, "out")?;
    let checkpoint = optional(a.checkpoint, &f.checkpoint);
    let d = GapSettings::default();
    let settings = GapSettings {
        n_pairs: a.pairs.or(f.pairs).unwrap_or(d.n_pairs),
        bootstrap_iterations: a.bootstrap.or(f.bootstrap).unwrap_or(d.bootstrap_iterations),
        level: a.level.or(f.level).unwrap_or(d.level),
        seed: a.seed.or(f.seed).unwrap_or(d.seed),
    };
    let corpus = Corpus::read(&corpus_path)?;

    let mut encoders: Vec<Box<dyn Encoder>> = vec![Box::new(PassThrough)];
    for p in &a.embeddings {
        let name = p
            .file_stem()
            .map_or_else(|| "table".into(), |s| s.to_string_lossy().into_owned());
        encoders.push(Box::new(Table::read(p, name, None)?));
    }
    if let Some(p) = &checkpoint {
        encoders.push(Box::new(load_trained(p, &corpus)?));
    }

    let mut inputs = vec![corpus_path.as_path()];
    inputs.extend(a.embeddings.iter().map(PathBuf::as_path));
    inputs.extend(checkpoint.as_deref());
    let mut text = header("eval-gap", settings.seed, &settings, &inputs)?;
    writeln!(text).expect("string write");
    writeln!(
        text,
        "pairs per bucket {}, bootstrap {} iterations, {:.0}% percentile intervals",
        settings.n_pairs,
        settings.bootstrap_iterations,
        100.0 * settings.level
    )
    .expect("string write");
    writeln!(
        text,
        "Δ and M are differences of unrounded medians; recomputing them from the rounded columns can be off by 0.001."
    )
    .expect("string write");
    writeln!(text, "{}", gap::TABLE_HEADER).expect("string write");
    create_dir(&out)?;
    for enc in &encoders {
        let items = embed_corpus(&corpus, enc.as_ref())?;
        let report = gap_report(enc.name(), &items, &settings)?;
        writeln!(text, "{}", report.table_row()).expect("string write");
        for (bucket, info) in ["within", "cross", "floor"].iter().zip(&report.buckets) {
            if info.shortfall {
                writeln!(
                    text,
                    "  {}: only {} {bucket} pairs available (requested {})",
                    report.encoder_name, info.available, settings.n_pairs
                )
                .expect("string write");
            }
        }
        write_json(&out.join(format!("gap_{}.json", enc.name())), &report)?;
    }
    write_file(&out.join("gap_report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

#[derive(Serialize)]
struct DiarSettings {
    conversations: usize,
    seed: u64,
    oracle: bool,
}

fn diar(a: DiarArgs, f: &FileConfig) -> CliResult<()> {
    let corpus_path = required(a.corpus, &f.corpus, "corpus")?;
    let out = required(a.out, &f.out, "out")?;
    let checkpoint = optional(a.checkpoint, &f.checkpoint);
    let settings = DiarSettings {
        conversations: a
            .conversations
            .or(f.conversations)
            .unwrap_or(diarization::benchmark::DEFAULT_CONVERSATIONS),
        seed: a.seed.or(f.seed).unwrap_or(1337),
        oracle: a.oracle,
    };
    let corpus = Corpus::read(&corpus_path)?;
    let conversations = build_benchmark(
        &corpus,
        settings.conversations,
        &mut Rng::with_stream(settings.seed, streams::DIAR),
    )?;

    let mut encoders: Vec<Box<dyn Encoder>> = vec![Box::new(PassThrough)];
    if let Some(p) = &checkpoint {
        encoders.push(Box::new(load_trained(p, &corpus)?));
    }
    if settings.oracle {
        encoders.push(Box::new(OneHotVoice::new(corpus.voices())));
    }

    create_dir(&out.join("rttm"))?;
    for c in &conversations {
        rttm_write(std::slice::from_ref(c), &out.join("rttm").join(format!("{}.rttm", c.id)))?;
    }
    let mut inputs = vec![corpus_path.as_path()];
    inputs.extend(checkpoint.as_deref());
    let mut text = header("diar", settings.seed, &settings, &inputs)?;
    writeln!(text).expect("string write");
    let segments: usize = conversations.iter().map(|c| c.segments.len()).sum();
    let minutes: f64 = conversations
        .iter()
        .flat_map(|c| &c.segments)
        .map(|s| s.duration_s)
        .sum::<f64>()
        / 60.0;
    writeln!(
        text,
        "{} conversations, {} segments, {:.1} minutes of speech",
        conversations.len(),
        segments,
        minutes
    )
    .expect("string write");
    writeln!(text, "{}", diarization::TABLE_HEADER).expect("string write");
    for enc in &encoders {
        let (report, predicted) = evaluate_conversations(&corpus, enc.as_ref(), &conversations)?;
        writeln!(text, "{}", report.table_row()).expect("string write");
        if report.cs_recall_vacuous {
            writeln!(text, "  {}: no speaker switched language; cs_recall is vacuous", enc.name())
                .expect("string write");
        }
        let mut labels = String::new();
        for r in label_records(&conversations, &predicted) {
            labels.push_str(&serde_json::to_string(&r).map_err(Error::from)?);
            labels.push('\n');
        }
        write_file(&out.join(format!("labels_{}.jsonl", enc.name())), labels)?;
        write_json(&out.join(format!("diar_{}.json", enc.name())), &report)?;
    }
    write_file(&out.join("diar_report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

#[derive(Serialize)]
struct GradCheckSettings {
    epsilon: f64,
    lambda: f64,
    coords: usize,
    feature_dim: usize,
}

fn grad_check(a: GradCheckArgs, f: &FileConfig) -> CliResult<()> {
    let seed = a.seed.or(f.seed).unwrap_or(1337);
    let s = GradCheckSettings {
        epsilon: a.epsilon.or(f.epsilon).unwrap_or(crate::numerics::gradcheck::DEFAULT_EPSILON),
        lambda: a.lambda.or(f.lambda).unwrap_or(0.1),
        coords: a.coords.or(f.coords).unwrap_or(24),
        feature_dim: a.feature_dim.or(f.feature_dim).unwrap_or(768),
    };
    let config = ModelConfig {
        input_dim: s.feature_dim,
        dropout_rate: 0.0,
        ..ModelConfig::default()
    };
    let params = ModelParams::init(&config, &mut Rng::with_stream(seed, streams::INIT))?;
    let settings = CheckSettings {
        epsilon: s.epsilon,
        lambda: s.lambda,
        coverage: if s.coords == 0 {
            Coverage::All
        } else {
            Coverage::Sample {
                per_tensor: s.coords,
                seed,
            }
        },
        seed,
        ..CheckSettings::default()
    };
    let r = composite_grad_check(&params, &config, &LossConfig::default(), &settings)?;
    println!("{}", header("grad-check", seed, &s, &[])?);
    println!(
        "checked {} coordinates (head {}, classifier {})",
        r.coordinates_checked(),
        r.head.coordinates_checked,
        r.classifier.coordinates_checked
    );
    println!("skipped {} probes straddling a ReLU kink", r.kinks_skipped());
    println!("head max relative error {:.3e}", r.head.max_relative_error);
    println!("classifier max relative error {:.3e}", r.classifier.max_relative_error);
    println!("max relative error {:.3e}", r.max_relative_error());
    if r.max_relative_error() > GRAD_CHECK_TOLERANCE {
        return Err(Error::CheckFailed(format!(
            "max relative error {:.3e} exceeds {GRAD_CHECK_TOLERANCE:e}",
            r.max_relative_error()
        ))
        .into());
    }
    println!("ok");
    Ok(())
}
