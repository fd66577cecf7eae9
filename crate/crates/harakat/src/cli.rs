use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use harakat_core::audio::{compute_log_mel, FeatureConfig};
use harakat_core::data::{build_vocab, synth_toy_corpus, Example, SynthConfig};
use harakat_core::eval::{evaluate, AllNone, EvalMode, GoldOracle, MetricsReport};
use harakat_core::fusion::{FusionMode, FusionModel};
use harakat_core::gradcheck;
use harakat_core::text::{
    apply_diacritics, strip_diacritics_with_report, CharVocab, DiacriticLabel, LabeledText,
};
use harakat_core::train::{EpochSummary, TrainObserver, Trainer};
use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{parse_override, RunConfig};
use crate::error::{AppError, Result};
use crate::manifest::{load_examples, load_manifest, write_manifest, Manifest, ManifestRecord};
use crate::report::{render_table, EvaluationOutput};
use crate::wav::{read_wav, write_wav};

#[derive(Debug, Parser)]
#[command(name = "harakat", version, about = "Arabic diacritic restoration from text, optionally guided by speech")]
pub struct Cli {
    /// Seed for every random choice; falls back to the CW_SEED variable
    #[arg(long, global = true, env = "CW_SEED", hide_env_values = true)]
    pub seed: Option<u64>,
    /// Log more detail (repeat for more)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train with the two-phase schedule, writing a checkpoint per epoch
    Train(TrainArgs),
    /// Score a checkpoint on a manifest (WER/CER)
    Evaluate(EvaluateArgs),
    /// Diacritize one sentence
    Predict(PredictArgs),
    /// Remove diacritics, optionally dumping per-character labels
    Strip(StripArgs),
    /// Rebuild diacritized text from a label dump written by `strip --labels`
    Apply(ApplyArgs),
    /// Write the synthetic toy corpus (WAVs, manifest and a toy config)
    SynthCorpus(SynthArgs),
    /// Run the finite-difference gradient checks
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run configuration
    #[arg(long)]
    pub config: PathBuf,
    /// Fusion strategy, overriding the config
    #[arg(long, value_enum)]
    pub fusion: Option<FusionArg>,
    /// Output directory, overriding the config
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Config override as dotted key=value, e.g. train.lr=0.001 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Continue from a checkpoint directory with its stored configuration
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FusionArg {
    Early,
    #[value(name = "cross_attention", alias = "cross")]
    CrossAttention,
}

impl From<FusionArg> for FusionMode {
    fn from(f: FusionArg) -> Self {
        match f {
            FusionArg::Early => FusionMode::Early,
            FusionArg::CrossAttention => FusionMode::CrossAttention,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    #[value(name = "text_only")]
    TextOnly,
    #[value(name = "text_speech")]
    TextSpeech,
    Both,
}

impl ModeArg {
    fn modes(self) -> Vec<EvalMode> {
        match self {
            ModeArg::TextOnly => vec![EvalMode::TextOnly],
            ModeArg::TextSpeech => vec![EvalMode::TextSpeech],
            ModeArg::Both => vec![EvalMode::TextOnly, EvalMode::TextSpeech],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineArg {
    /// Gold labels (checks the scoring path; WER is 0)
    Oracle,
    /// No diacritics anywhere
    None,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Checkpoint directory
    #[arg(long, required_unless_present = "baseline")]
    pub checkpoint: Option<PathBuf>,
    /// JSONL manifest to score
    #[arg(long)]
    pub manifest: PathBuf,
    /// Only score records with this split tag
    #[arg(long)]
    pub split: Option<String>,
    /// Which inputs the model sees
    #[arg(long, value_enum, default_value = "both")]
    pub mode: ModeArg,
    /// Score a fixed predictor instead of a checkpoint
    #[arg(long, value_enum, conflicts_with = "checkpoint")]
    pub baseline: Option<BaselineArg>,
    /// Print one JSON object instead of a table
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Checkpoint directory
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Input sentence; existing diacritics are removed first
    #[arg(long)]
    pub text: String,
    /// WAV recording of the sentence
    #[arg(long)]
    pub audio: Option<PathBuf>,
    /// Print a JSON object with the labels
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["text", "file"])))]
pub struct StripArgs {
    /// Text to strip
    #[arg(long)]
    pub text: Option<String>,
    /// File to strip line by line (`-` for stdin)
    #[arg(long)]
    pub file: Option<PathBuf>,
    /// Print `char<TAB>id<TAB>label` per character, a blank line per sentence
    #[arg(long)]
    pub labels: bool,
}

#[derive(Debug, Args)]
pub struct ApplyArgs {
    /// Label dump to read (`-` for stdin)
    #[arg(long, default_value = "-")]
    pub file: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Number of sentences
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    /// 10 ms frames of tone per character
    #[arg(long, default_value_t = 20)]
    pub frames_per_char: usize,
    /// Split tag written on every record
    #[arg(long, default_value = "train")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Print the reports as JSON
    #[arg(long)]
    pub json: bool,
}

pub fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

/// Runs a parsed command line and returns the process exit status.
pub fn run(cli: Cli) -> Result<i32> {
    let out = &mut io::stdout().lock();
    match cli.command {
        Command::Train(a) => cmd_train(a, cli.seed, out),
        Command::Evaluate(a) => cmd_evaluate(a, out),
        Command::Predict(a) => cmd_predict(a, out),
        Command::Strip(a) => cmd_strip(a, out),
        Command::Apply(a) => cmd_apply(a, out),
        Command::SynthCorpus(a) => cmd_synth(a, cli.seed.unwrap_or(0), out),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
    }
}

fn write_out(out: &mut dyn Write, s: &str) -> Result<()> {
    out.write_all(s.as_bytes())
        .map_err(|e| AppError::io("<stdout>", e))
}

fn load_split(manifest: &Manifest, split: Option<&str>, features: &FeatureConfig) -> Result<Vec<Example>> {
    let records = manifest.select(split);
    let (examples, skipped) = load_examples(manifest, &records, features)?;
    if !skipped.is_empty() {
        log::warn!("{} record(s) skipped for unreadable audio", skipped.len());
    }
    Ok(examples)
}

/// Examples without audio features.
fn text_examples(manifest: &Manifest, split: Option<&str>) -> Result<Vec<Example>> {
    manifest
        .select(split)
        .iter()
        .map(|r| {
            Example::new(r.id.clone(), r.text.clone(), None).map_err(|e| AppError::Data {
                path: manifest.path.clone(),
                msg: format!("record {:?}: {e}", r.id),
            })
        })
        .collect()
}

fn vocab_of(manifest: &Manifest, split: Option<&str>) -> Result<CharVocab> {
    Ok(build_vocab(&text_examples(manifest, split)?))
}

struct RunLog<'a> {
    output_dir: PathBuf,
    vocab: &'a CharVocab,
    metrics: fs::File,
}

impl TrainObserver for RunLog<'_> {
    type Error = AppError;

    fn on_epoch_end(&mut self, trainer: &Trainer, s: &EpochSummary) -> Result<()> {
        let line = serde_json::to_string(s).expect("summary serializes");
        let path = self.output_dir.join("metrics.jsonl");
        writeln!(self.metrics, "{line}").map_err(|e| AppError::io(&path, e))?;
        let dir = self.output_dir.join(format!("epoch-{:03}", s.epoch + 1));
        save_checkpoint(&dir, &trainer.to_checkpoint(), self.vocab)?;
        let dev = match (s.dev_wer, s.dev_cer) {
            (Some(w), Some(c)) => format!(", dev WER {w:.4} CER {c:.4}"),
            _ => String::new(),
        };
        log::info!(
            "epoch {} ({:?}): {} steps, mean loss {:.4}{dev}",
            s.epoch + 1,
            s.phase,
            s.steps,
            s.mean_loss
        );
        Ok(())
    }
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    fusion: &'static str,
    epochs: u32,
    steps: u64,
    final_checkpoint: String,
    train: &'a MetricsReport,
}

fn cmd_train(a: TrainArgs, seed: Option<u64>, out: &mut dyn Write) -> Result<i32> {
    let mut overrides = a
        .overrides
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>>>()?;
    if let Some(f) = a.fusion {
        overrides.push(("fusion".into(), toml::Value::String(FusionMode::from(f).as_str().into())));
    }
    if let Some(dir) = &a.output_dir {
        overrides.push(("output_dir".into(), toml::Value::String(dir.to_string_lossy().into())));
    }
    if let Some(s) = seed {
        overrides.push(("train.seed".into(), toml::Value::Integer(s as i64)));
    }
    let cfg = RunConfig::load(&a.config, &overrides)?;
    cfg.validate_paths()?;

    let (mut trainer, vocab) = match &a.resume {
        Some(dir) => {
            let (ckpt, vocab) = load_checkpoint(dir)?;
            (Trainer::from_checkpoint(&ckpt)?, vocab)
        }
        None => {
            let manifest = load_manifest(&cfg.train_manifest)?;
            let vocab = vocab_of(&manifest, cfg.train_split.as_deref())?;
            let train_cfg = cfg.train_config();
            let model = FusionModel::new(cfg.model_config(vocab.len()), train_cfg.seed)?;
            (Trainer::new(model, train_cfg)?, vocab)
        }
    };
    let features = FeatureConfig::with_frames(trainer.model.config.mel_frames);
    let manifest = load_manifest(&cfg.train_manifest)?;
    let train = load_split(&manifest, cfg.train_split.as_deref(), &features)?;
    if train.is_empty() {
        return Err(AppError::Data {
            path: cfg.train_manifest.clone(),
            msg: "no training records".into(),
        });
    }
    let dev = match (&cfg.dev_manifest, &cfg.dev_split) {
        (Some(p), split) => Some(load_split(&load_manifest(p)?, split.as_deref(), &features)?),
        (None, Some(split)) => Some(load_split(&manifest, Some(split), &features)?),
        (None, None) => None,
    };
    log::info!(
        "training {} fusion on {} examples ({} with audio), {} parameters",
        trainer.model.mode().as_str(),
        train.len(),
        train.iter().filter(|e| e.mel.is_some()).count(),
        trainer.model.store.num_values()
    );

    fs::create_dir_all(&cfg.output_dir).map_err(|e| AppError::io(&cfg.output_dir, e))?;
    let metrics_path = cfg.output_dir.join("metrics.jsonl");
    let metrics = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)
        .map_err(|e| AppError::io(&metrics_path, e))?;
    let mut observer = RunLog {
        output_dir: cfg.output_dir.clone(),
        vocab: &vocab,
        metrics,
    };
    trainer
        .fit(&train, dev.as_deref(), &vocab, &mut observer)
        .map_err(|e| match e {
            harakat_core::train::FitError::Train(e) => AppError::Core(e),
            harakat_core::train::FitError::Observer(e) => e,
        })?;

    let final_dir = cfg.output_dir.join("final");
    save_checkpoint(&final_dir, &trainer.to_checkpoint(), &vocab)?;
    let report = evaluate(&trainer.model, &train, &vocab, EvalMode::TextSpeech);
    let summary = TrainSummary {
        fusion: trainer.model.mode().as_str(),
        epochs: trainer.epoch(),
        steps: trainer.step(),
        final_checkpoint: final_dir.to_string_lossy().into(),
        train: &report,
    };
    let path = cfg.output_dir.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary).expect("serializes"))
        .map_err(|e| AppError::io(&path, e))?;
    write_out(
        out,
        &format!(
            "final train WER {:.4} CER {:.4} after {} steps; checkpoint {}\n",
            report.wer,
            report.cer,
            trainer.step(),
            final_dir.display()
        ),
    )?;
    Ok(0)
}

fn cmd_evaluate(a: EvaluateArgs, out: &mut dyn Write) -> Result<i32> {
    let manifest = load_manifest(&a.manifest)?;
    let modes = a.mode.modes();
    let reports: Vec<MetricsReport> = match (&a.checkpoint, a.baseline) {
        (_, Some(baseline)) => {
            let examples = text_examples(&manifest, a.split.as_deref())?;
            let vocab = build_vocab(&examples);
            modes
                .iter()
                .map(|&m| match baseline {
                    BaselineArg::Oracle => evaluate(&GoldOracle, &examples, &vocab, m),
                    BaselineArg::None => evaluate(&AllNone, &examples, &vocab, m),
                })
                .collect()
        }
        (Some(dir), None) => {
            let (ckpt, vocab) = load_checkpoint(dir)?;
            let model = ckpt.to_model()?;
            let features = FeatureConfig::with_frames(model.config.mel_frames);
            let examples = load_split(&manifest, a.split.as_deref(), &features)?;
            modes
                .iter()
                .map(|&m| evaluate(&model, &examples, &vocab, m))
                .collect()
        }
        (None, None) => unreachable!("clap requires --checkpoint or --baseline"),
    };
    if a.json {
        let doc = EvaluationOutput {
            checkpoint: a.checkpoint.as_ref().map(|p| p.to_string_lossy().into()),
            manifest: a.manifest.to_string_lossy().into(),
            reports: &reports,
        };
        write_out(out, &(serde_json::to_string(&doc).expect("serializes") + "\n"))?;
    } else {
        write_out(out, &render_table(&reports))?;
    }
    Ok(0)
}

#[derive(Serialize)]
struct Prediction<'a> {
    input: &'a str,
    output: String,
    used_speech: bool,
    labels: Vec<&'static str>,
}

fn cmd_predict(a: PredictArgs, out: &mut dyn Write) -> Result<i32> {
    if a.text.trim().is_empty() {
        return Err(AppError::Config("--text must not be empty".into()));
    }
    let (ckpt, vocab) = load_checkpoint(&a.checkpoint)?;
    let model = ckpt.to_model()?;
    let mel = match &a.audio {
        Some(p) => {
            let wave = read_wav(p)?;
            let features = FeatureConfig::with_frames(model.config.mel_frames);
            Some(compute_log_mel(&wave, &features).map_err(|e| AppError::Data {
                path: p.clone(),
                msg: e.to_string(),
            })?)
        }
        None => None,
    };
    let (stripped, _) = strip_diacritics_with_report(&a.text).map_err(|e| AppError::Config(e.to_string()))?;
    let ids = vocab.encode(stripped.base());
    let labels = model.predict(&ids, mel.as_ref())?;
    let lt = stripped.with_predicted(&labels)?;
    let output = apply_diacritics(&lt);
    if a.json {
        let p = Prediction {
            input: &a.text,
            output,
            used_speech: mel.is_some(),
            labels: lt.labels().iter().map(|l| l.name()).collect(),
        };
        write_out(out, &(serde_json::to_string(&p).expect("serializes") + "\n"))?;
    } else {
        write_out(out, &(output + "\n"))?;
    }
    Ok(0)
}

fn read_input(path: &Path) -> Result<String> {
    if path == Path::new("-") {
        let mut s = String::new();
        io::stdin()
            .read_to_string(&mut s)
            .map_err(|e| AppError::io("<stdin>", e))?;
        Ok(s)
    } else {
        fs::read_to_string(path).map_err(|e| AppError::io(path, e))
    }
}

/// Character column of a label dump: the character itself, or `U+XXXX`
/// for whitespace other than a plain space.
fn dump_char(c: char) -> String {
    if c.is_whitespace() && c != ' ' {
        format!("U+{:04X}", c as u32)
    } else {
        c.to_string()
    }
}

fn parse_dump_char(field: &str) -> Option<char> {
    let mut it = field.chars();
    match (it.next(), it.next()) {
        (Some(c), None) => Some(c),
        _ => field
            .strip_prefix("U+")
            .and_then(|h| u32::from_str_radix(h, 16).ok())
            .and_then(char::from_u32),
    }
}

fn cmd_strip(a: StripArgs, out: &mut dyn Write) -> Result<i32> {
    let (body, path) = match (&a.text, &a.file) {
        (Some(t), _) => (t.clone(), PathBuf::from("<text>")),
        (None, Some(p)) => (read_input(p)?, p.clone()),
        (None, None) => unreachable!("clap requires one input"),
    };
    let mut s = String::new();
    for (i, line) in body.lines().enumerate() {
        let (lt, dropped) = strip_diacritics_with_report(line).map_err(|e| AppError::Data {
            path: path.clone(),
            msg: format!("line {}: {e}", i + 1),
        })?;
        for d in dropped {
            log::warn!("line {}: dropped U+{:04X} at offset {}", i + 1, d.mark as u32, d.offset);
        }
        if a.labels {
            for (c, l) in lt.base().iter().zip(lt.labels()) {
                s.push_str(&format!("{}\t{}\t{}\n", dump_char(*c), l.id(), l.name()));
            }
            s.push('\n');
        } else {
            s.push_str(&lt.base_string());
            s.push('\n');
        }
    }
    write_out(out, &s)?;
    Ok(0)
}

fn cmd_apply(a: ApplyArgs, out: &mut dyn Write) -> Result<i32> {
    let body = read_input(&a.file)?;
    let err = |line: usize, msg: String| AppError::Data {
        path: a.file.clone(),
        msg: format!("line {line}: {msg}"),
    };
    let mut s = String::new();
    let (mut base, mut labels) = (Vec::new(), Vec::new());
    let flush = |base: &mut Vec<char>, labels: &mut Vec<DiacriticLabel>, s: &mut String| -> harakat_core::Result<()> {
        let lt = LabeledText::new(std::mem::take(base), std::mem::take(labels))?;
        s.push_str(&apply_diacritics(&lt));
        s.push('\n');
        Ok(())
    };
    let mut pending = false;
    for (i, line) in body.lines().enumerate() {
        if line.is_empty() {
            flush(&mut base, &mut labels, &mut s).map_err(|e| err(i + 1, e.to_string()))?;
            pending = false;
            continue;
        }
        let mut fields = line.split('\t');
        let c = fields
            .next()
            .and_then(parse_dump_char)
            .ok_or_else(|| err(i + 1, "bad character column".into()))?;
        let id: u8 = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| err(i + 1, "bad label id".into()))?;
        base.push(c);
        labels.push(DiacriticLabel::new(id).map_err(|e| err(i + 1, e.to_string()))?);
        pending = true;
    }
    if pending {
        flush(&mut base, &mut labels, &mut s).map_err(|e| err(body.lines().count(), e.to_string()))?;
    }
    write_out(out, &s)?;
    Ok(0)
}

const TOY_CONFIG: &str = r#"# Toy run over the synthetic corpus in this directory.
train_manifest = "manifest.jsonl"
output_dir = "run"
preset = "toy"
fusion = "early"

[model]
dropout = 0.0

[train]
batch_size = 16
lr = 0.001
weight_decay = 0.0
epochs_phase1 = 0
epochs_phase2 = 400
speech_drop_prob = 0.0
augment = false
"#;

fn cmd_synth(a: SynthArgs, seed: u64, out: &mut dyn Write) -> Result<i32> {
    if a.n == 0 {
        return Err(AppError::Config("--n must be at least 1".into()));
    }
    let cfg = SynthConfig {
        frames_per_char: a.frames_per_char,
        ..SynthConfig::default()
    };
    let wav_dir = a.out.join("wavs");
    fs::create_dir_all(&wav_dir).map_err(|e| AppError::io(&wav_dir, e))?;
    let mut records = Vec::with_capacity(a.n);
    for r in synth_toy_corpus(a.n, seed, &cfg) {
        let rel = PathBuf::from("wavs").join(format!("{}.wav", r.id));
        write_wav(&a.out.join(&rel), &r.waveform())?;
        records.push(ManifestRecord {
            id: r.id,
            text: r.text,
            audio: Some(rel),
            split: Some(a.split.clone()),
        });
    }
    let manifest = a.out.join("manifest.jsonl");
    write_manifest(&manifest, &records)?;
    let config = a.out.join("config.toml");
    fs::write(&config, TOY_CONFIG).map_err(|e| AppError::io(&config, e))?;
    write_out(
        out,
        &format!("wrote {} records to {}\n", records.len(), manifest.display()),
    )?;
    Ok(0)
}

fn cmd_gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let reports = gradcheck::suite()?;
    if a.json {
        write_out(out, &(serde_json::to_string(&reports).expect("serializes") + "\n"))?;
    } else {
        let mut s = format!("{:<40} {:>10} {:>10} {:>6} {:>8}  result\n", "check", "max rel", "max abs", "n", "tol");
        for r in &reports {
            s.push_str(&format!(
                "{:<40} {:>10.2e} {:>10.2e} {:>6} {:>8.0e}  {}\n",
                r.name,
                r.max_rel_err,
                r.max_abs_err,
                r.checked,
                r.tol,
                if r.passed { "pass" } else { "FAIL" }
            ));
        }
        write_out(out, &s)?;
    }
    Ok(if reports.iter().all(|r| r.passed) { 0 } else { 1 })
}
