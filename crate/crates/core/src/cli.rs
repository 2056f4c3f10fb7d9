//! Command-line entry point. [`run`] returns the process exit code: 0 on
//! success, 1 on any error or split violation, 2 on usage errors.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::audio::{read_wav, trim_silence, write_wav, TrimParams};
use crate::config::{read_kv, KeyValues, Provenance};
use crate::dataset::{
    build_pairs, read_annotations, read_manifest, read_pairs, speaker_map, split_check, write_manifest, write_pairs,
    AttributeRegistry, Grouping, PairExample, PairOptions, Protocol, UtteranceRecord,
};
use crate::diffnet::Variant;
use crate::error::{Error, Result};
use crate::eval::{aggregate, attribute_results, score_pairs, DEFAULT_THRESHOLD};
use crate::features::{
    feature_file_name, write_layer_stack, BackendConfig, ExtractRequest, FeatureStore, Provider, ProviderConfig,
    SyntheticProfile, ENCODER_DIM, ENCODER_LAYERS,
};
use crate::fixture::{write_fixture, FixtureSpec};
use crate::model::StackCache;
use crate::train::{
    config_fingerprint, load_checkpoint, load_stacks, save_checkpoint, train, LoadOptions, LossReduction, Scheduler,
    TrainConfig, TrainOptions,
};

#[derive(Parser, Debug)]
#[command(name = "vtad", version, about = "Voice timbre attribute detection pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Strip leading and trailing silence from one file or a whole manifest.
    Trim(TrimArgs),
    /// Produce per-layer utterance embeddings for every manifest entry.
    Extract(ExtractArgs),
    /// Expand speaker-pair annotations into utterance-pair examples.
    BuildPairs(BuildPairsArgs),
    /// Train pooling and comparison head on utterance pairs.
    Train(TrainArgs),
    /// Score pairs and report accuracy and EER per attribute.
    Eval(EvalArgs),
    /// Print the 34 attribute scores for one ordered utterance pair.
    Predict(PredictArgs),
    /// Check a train/eval split for speaker-pair and speaker leakage.
    SplitCheck(SplitCheckArgs),
    /// Write a small synthetic corpus (audio, manifest, annotations).
    SynthFixture(SynthFixtureArgs),
}

#[derive(Args, Debug)]
pub struct TrimArgs {
    /// Single input WAV (mono 16-bit PCM).
    #[arg(long, conflicts_with = "manifest", requires = "output")]
    pub input: Option<PathBuf>,
    /// Output WAV for --input.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Utterance manifest; paths resolve against its directory.
    #[arg(long, requires = "out_dir")]
    pub manifest: Option<PathBuf>,
    /// Output directory for manifest mode (trimmed audio plus a new manifest.tsv).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Frames this many dB below the loudest frame are silence.
    #[arg(long, default_value_t = 40.0)]
    pub threshold_db: f64,
    /// Leave the file untouched when less than this much would remain.
    #[arg(long, default_value_t = 100.0)]
    pub min_keep_ms: f64,
    #[arg(long, default_value_t = 25.0)]
    pub window_ms: f64,
    #[arg(long, default_value_t = 10.0)]
    pub hop_ms: f64,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    /// Deterministic stacks carrying the synthetic speakers' latent signal.
    Synthetic,
    /// Run an external encoder program per utterance.
    External,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Feature directory to create (LSTK files plus features.tsv).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = BackendKind::Synthetic)]
    pub backend: BackendKind,
    #[arg(long, default_value_t = crate::seed::DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = ENCODER_LAYERS)]
    pub layers: usize,
    #[arg(long, default_value_t = ENCODER_DIM)]
    pub dim: usize,
    /// Synthetic signal gain.
    #[arg(long, default_value_t = SyntheticProfile::default().gain)]
    pub gain: f64,
    /// Synthetic noise standard deviation.
    #[arg(long, default_value_t = SyntheticProfile::default().noise_std)]
    pub noise_std: f64,
    /// Encoder program for --backend external; called as `PROGRAM [ARGS] UTT_ID WAV OUT.lstk`.
    #[arg(long)]
    pub program: Option<PathBuf>,
    /// Extra argument passed to the encoder program (repeatable).
    #[arg(long = "program-arg", allow_hyphen_values = true)]
    pub program_args: Vec<String>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GroupingArg {
    SpeakerPair,
    SpeakerPairDescriptor,
}

#[derive(Args, Debug)]
pub struct BuildPairsArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Examples per annotated group (even when reverse pairs are included).
    #[arg(long, default_value_t = 40)]
    pub pairs_per: usize,
    /// Do not add the reversed copy of each sampled pair.
    #[arg(long)]
    pub no_reverse: bool,
    #[arg(long, value_enum, default_value_t = GroupingArg::SpeakerPair)]
    pub grouping: GroupingArg,
    #[arg(long, default_value_t = crate::seed::DEFAULT_SEED)]
    pub seed: u64,
    /// Descriptor registry file (17 names, one per line).
    #[arg(long)]
    pub registry: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// key=value file with training settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub val_pairs: Option<PathBuf>,
    /// Feature directory written by `extract`.
    #[arg(long)]
    pub features: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch JSON-lines log (default: OUT with extension .log.jsonl).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Accept a checkpoint whose fingerprint does not match.
    #[arg(long)]
    pub force: bool,
    /// Stop after this epoch without changing the schedule.
    #[arg(long)]
    pub stop_after_epoch: Option<usize>,
    #[arg(long)]
    pub registry: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, visible_alias = "batch", default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, visible_alias = "lr", default_value = "1e-4")]
    pub learning_rate: f64,
    #[arg(long, visible_alias = "wd", default_value_t = 0.01)]
    pub weight_decay: f64,
    #[arg(long, default_value = "cosine")]
    pub scheduler: String,
    #[arg(long, default_value_t = 0.0)]
    pub eta_min: f64,
    #[arg(long, default_value_t = crate::seed::DEFAULT_SEED)]
    pub seed: u64,
    /// ffn or se-resffn.
    #[arg(long, default_value = "ffn")]
    pub variant: String,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub astp_trainable: bool,
    /// sample (per-pair mean, then batch mean) or pooled.
    #[arg(long, default_value = "sample")]
    pub loss_reduction: String,
    #[arg(long, default_value_t = crate::astp::DEFAULT_HEADS)]
    pub astp_heads: usize,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// JSON-lines report; a text table is written next to it with extension .txt.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub registry: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub utt_a: String,
    #[arg(long)]
    pub utt_b: String,
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub registry: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    Seen,
    Unseen,
}

#[derive(Args, Debug)]
pub struct SplitCheckArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub eval: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum)]
    pub protocol: ProtocolArg,
}

#[derive(Args, Debug)]
pub struct SynthFixtureArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = crate::seed::DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = FixtureSpec::default().speakers_per_gender)]
    pub speakers_per_gender: usize,
    #[arg(long, default_value_t = FixtureSpec::default().utterances_per_speaker)]
    pub utterances_per_speaker: usize,
    #[arg(long, default_value_t = FixtureSpec::default().descriptors_per_pair)]
    pub descriptors_per_pair: usize,
    #[arg(long, default_value_t = FixtureSpec::default().margin)]
    pub margin: f64,
    /// Only annotate this descriptor (repeatable).
    #[arg(long = "descriptor")]
    pub descriptors: Vec<String>,
    #[arg(long)]
    pub registry: Option<PathBuf>,
}

/// Parse `argv` (program name first) and run the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    let sub = matches
        .subcommand()
        .map(|(_, m)| m.clone())
        .expect("subcommand is required");
    match dispatch(cli.command, &sub) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(command: Command, matches: &ArgMatches) -> Result<i32> {
    match command {
        Command::Trim(a) => cmd_trim(a).map(|_| 0),
        Command::Extract(a) => cmd_extract(a).map(|_| 0),
        Command::BuildPairs(a) => cmd_build_pairs(a).map(|_| 0),
        Command::Train(a) => cmd_train(a, matches).map(|_| 0),
        Command::Eval(a) => cmd_eval(a).map(|_| 0),
        Command::Predict(a) => cmd_predict(a).map(|_| 0),
        Command::SplitCheck(a) => cmd_split_check(a),
        Command::SynthFixture(a) => cmd_synth_fixture(a).map(|_| 0),
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Environment(format!("cannot start worker threads: {e}")))
}

fn registry(path: Option<&Path>) -> Result<AttributeRegistry> {
    match path {
        None => Ok(AttributeRegistry::default()),
        Some(p) => AttributeRegistry::parse(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
    }
}

fn settings(entries: &[(&str, String)]) -> KeyValues {
    entries.iter().map(|(k, v)| ((*k).to_owned(), v.clone())).collect()
}

fn base_dir(file: &Path) -> PathBuf {
    file.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn cmd_trim(a: TrimArgs) -> Result<()> {
    let params = TrimParams {
        threshold_db: a.threshold_db,
        min_keep_ms: a.min_keep_ms,
        window_ms: a.window_ms,
        hop_ms: a.hop_ms,
    };
    if let (Some(input), Some(output)) = (&a.input, &a.output) {
        return write_wav(&trim_silence(&read_wav(input)?, &params)?, output);
    }
    let (Some(manifest), Some(out_dir)) = (&a.manifest, &a.out_dir) else {
        return Err(Error::config("trim needs --input/--output or --manifest/--out-dir"));
    };
    let records = read_manifest(manifest)?;
    let root = base_dir(manifest);
    create_dir(out_dir)?;
    let out: Vec<UtteranceRecord> = pool(a.jobs)?.install(|| {
        records
            .par_iter()
            .map(|r| {
                let trimmed = trim_silence(&read_wav(&root.join(&r.path))?, &params)?;
                let rel = format!(
                    "wav/{}.wav",
                    feature_file_name(&r.utterance_id).trim_end_matches(".lstk")
                );
                let dst = out_dir.join(&rel);
                if let Some(parent) = dst.parent() {
                    create_dir(parent)?;
                }
                write_wav(&trimmed, &dst)?;
                Ok(UtteranceRecord { path: rel, ..r.clone() })
            })
            .collect::<Result<_>>()
    })?;
    let prov = Provenance::new(
        "trim",
        settings(&[
            ("threshold_db", a.threshold_db.to_string()),
            ("min_keep_ms", a.min_keep_ms.to_string()),
            ("window_ms", a.window_ms.to_string()),
            ("hop_ms", a.hop_ms.to_string()),
            ("manifest", manifest.display().to_string()),
        ]),
    );
    write_manifest(&out_dir.join("manifest.tsv"), &out, &prov.comment_lines())
}

fn cmd_extract(a: ExtractArgs) -> Result<()> {
    let backend = match a.backend {
        BackendKind::Synthetic => BackendConfig::Synthetic {
            seed: a.seed,
            profile: SyntheticProfile {
                gain: a.gain,
                noise_std: a.noise_std,
            },
        },
        BackendKind::External => BackendConfig::ExternalEncoder {
            program: a
                .program
                .clone()
                .ok_or_else(|| Error::config("--backend external needs --program"))?,
            args: a.program_args.clone(),
        },
    };
    let provider = Provider::from_config(&ProviderConfig {
        backend,
        expected_layers: a.layers,
        expected_dim: a.dim,
    })?;
    let records = read_manifest(&a.manifest)?;
    let root = base_dir(&a.manifest);
    create_dir(&a.out)?;
    let jobs = if provider.reentrant() { a.jobs } else { 1 };
    let entries: Vec<(String, String)> = pool(jobs)?.install(|| {
        records
            .par_iter()
            .map(|r| {
                let audio = root.join(&r.path);
                let req = ExtractRequest {
                    utterance_id: &r.utterance_id,
                    speaker_id: &r.speaker_id,
                    gender: r.gender,
                    waveform: None,
                    audio_path: Some(&audio),
                };
                let stack = provider.extract(&req)?;
                let name = feature_file_name(&r.utterance_id);
                write_layer_stack(&stack, &a.out.join(&name))?;
                Ok((r.utterance_id.clone(), name))
            })
            .collect::<Result<_>>()
    })?;
    let mut kv = settings(&[
        ("backend", format!("{:?}", a.backend).to_ascii_lowercase()),
        ("layers", a.layers.to_string()),
        ("dim", a.dim.to_string()),
        ("manifest", a.manifest.display().to_string()),
    ]);
    match a.backend {
        BackendKind::Synthetic => {
            kv.insert("seed".into(), a.seed.to_string());
            kv.insert("gain".into(), a.gain.to_string());
            kv.insert("noise_std".into(), a.noise_std.to_string());
        }
        BackendKind::External => {
            kv.insert("program".into(), a.program.unwrap_or_default().display().to_string());
            kv.insert("program_args".into(), a.program_args.join(" "));
        }
    }
    FeatureStore::write_manifest(&a.out, &entries, &Provenance::new("extract", kv).comment_lines())
}

fn cmd_build_pairs(a: BuildPairsArgs) -> Result<()> {
    let reg = registry(a.registry.as_deref())?;
    let opts = PairOptions {
        pairs_per_speaker_pair: a.pairs_per,
        include_reverse: !a.no_reverse,
        seed: a.seed,
        grouping: match a.grouping {
            GroupingArg::SpeakerPair => Grouping::SpeakerPair,
            GroupingArg::SpeakerPairDescriptor => Grouping::SpeakerPairDescriptor,
        },
    };
    let pairs = build_pairs(
        &read_annotations(&a.annotations)?,
        &read_manifest(&a.manifest)?,
        &reg,
        &opts,
    )?;
    let prov = Provenance::new(
        "build-pairs",
        settings(&[
            ("annotations", a.annotations.display().to_string()),
            ("manifest", a.manifest.display().to_string()),
            ("pairs_per", a.pairs_per.to_string()),
            ("include_reverse", (!a.no_reverse).to_string()),
            ("grouping", format!("{:?}", a.grouping)),
            ("seed", a.seed.to_string()),
        ]),
    );
    write_pairs(&a.out, &pairs, &prov.comment_lines())
}

/// Defaults, then the config file, then flags given on the command line.
pub fn resolve_train_config(a: &TrainArgs, matches: &ArgMatches) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &a.config {
        for (k, v) in read_kv(path)? {
            cfg.set(&k, &v)?;
        }
    }
    let flags: [(&str, String); 11] = [
        ("epochs", a.epochs.to_string()),
        ("batch_size", a.batch_size.to_string()),
        ("learning_rate", a.learning_rate.to_string()),
        ("weight_decay", a.weight_decay.to_string()),
        ("scheduler", a.scheduler.clone()),
        ("eta_min", a.eta_min.to_string()),
        ("seed", a.seed.to_string()),
        ("variant", a.variant.clone()),
        ("astp_trainable", a.astp_trainable.to_string()),
        ("loss_reduction", a.loss_reduction.clone()),
        ("astp_heads", a.astp_heads.to_string()),
    ];
    for (key, value) in flags {
        if matches.value_source(key) == Some(ValueSource::CommandLine) {
            cfg.set(key, &value)?;
        }
    }
    // flag spellings still have to parse when left at their defaults
    a.scheduler.parse::<Scheduler>()?;
    a.variant.parse::<Variant>()?;
    a.loss_reduction.parse::<LossReduction>()?;
    cfg.validate()?;
    Ok(cfg)
}

/// File-backed provider whose shape is taken from the first listed utterance.
fn store_provider(dir: &Path, probe: &str) -> Result<Provider> {
    let store = FeatureStore::open(dir)?;
    let first = store.load(probe)?;
    let (l, d) = (first.num_layers(), first.dim());
    Ok(Provider::new(Box::new(store), l, d))
}

fn first_utterance(pairs: &[PairExample], what: &Path) -> Result<String> {
    pairs
        .first()
        .map(|p| p.utt_a.clone())
        .ok_or_else(|| Error::input(format!("{} holds no pairs", what.display())))
}

fn cmd_train(a: TrainArgs, matches: &ArgMatches) -> Result<()> {
    let cfg = resolve_train_config(&a, matches)?;
    let reg = registry(a.registry.as_deref())?;
    let train_pairs = read_pairs(&a.pairs)?;
    let val_pairs = match &a.val_pairs {
        Some(p) => read_pairs(p)?,
        None => Vec::new(),
    };
    let provider = store_provider(&a.features, &first_utterance(&train_pairs, &a.pairs)?)?;
    let resume = match &a.resume {
        Some(p) => Some(load_checkpoint(
            p,
            LoadOptions {
                expected: Some(config_fingerprint(&cfg, &reg)),
                force: a.force,
            },
        )?),
        None => None,
    };
    let log_path = a.log.clone().unwrap_or_else(|| a.out.with_extension("log.jsonl"));
    let mut kv = cfg.to_kv();
    kv.insert("pairs".into(), a.pairs.display().to_string());
    if let Some(v) = &a.val_pairs {
        kv.insert("val_pairs".into(), v.display().to_string());
    }
    kv.insert("features".into(), a.features.display().to_string());
    let prov = Provenance::new("train", kv);
    let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut sink = BufWriter::new(file);
    writeln!(sink, "{}", prov.to_json()).map_err(|e| Error::io(&log_path, e))?;
    let outcome = train(
        &cfg,
        &reg,
        &train_pairs,
        &val_pairs,
        &provider,
        TrainOptions {
            resume,
            stop_after_epoch: a.stop_after_epoch,
            log_sink: Some(&mut sink),
            manifest: None,
        },
    )?;
    sink.flush().map_err(|e| Error::io(&log_path, e))?;
    save_checkpoint(&outcome.checkpoint, &a.out)?;
    for rec in &outcome.log {
        println!("{}", rec.to_json_line());
    }
    Ok(())
}

fn load_for_inference(ckpt: &Path, force: bool, reg: &AttributeRegistry) -> Result<crate::train::Checkpoint> {
    let c = load_checkpoint(ckpt, LoadOptions { expected: None, force })?;
    if c.registry != reg.names() && !force {
        return Err(Error::config(format!(
            "{} was trained against a different descriptor registry",
            ckpt.display()
        )));
    }
    Ok(c)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let reg = registry(a.registry.as_deref())?;
    let ck = load_for_inference(&a.ckpt, a.force, &reg)?;
    let pairs = read_pairs(&a.pairs)?;
    let provider = store_provider(&a.features, &first_utterance(&pairs, &a.pairs)?)?;
    let (_, dim) = provider.expected_shape();
    if dim != ck.model.astp.config.dim {
        return Err(Error::contract(format!(
            "features are {dim}-dimensional, checkpoint expects {}",
            ck.model.astp.config.dim
        )));
    }
    let report = pool(a.jobs)?.install(|| -> Result<_> {
        let stacks = load_stacks(&pairs, &provider, None)?;
        let trials = score_pairs(&ck.model, &pairs, &stacks)?;
        Ok(aggregate(attribute_results(&trials, &reg, a.threshold)))
    })?;
    let prov = Provenance::new(
        "eval",
        settings(&[
            ("ckpt", a.ckpt.display().to_string()),
            ("ckpt_fingerprint", ck.fingerprint_hex()),
            ("pairs", a.pairs.display().to_string()),
            ("features", a.features.display().to_string()),
            ("threshold", a.threshold.to_string()),
        ]),
    );
    std::fs::write(&a.report, report.to_jsonl(&prov)).map_err(|e| Error::io(&a.report, e))?;
    let table_path = a.report.with_extension("txt");
    let table = report.to_table(&reg, &prov);
    std::fs::write(&table_path, &table).map_err(|e| Error::io(&table_path, e))?;
    print!(
        "{}",
        table
            .lines()
            .filter(|l| !l.starts_with('#'))
            .map(|l| format!("{l}\n"))
            .collect::<String>()
    );
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let reg = registry(a.registry.as_deref())?;
    let ck = load_for_inference(&a.ckpt, a.force, &reg)?;
    let provider = store_provider(&a.features, &a.utt_a)?;
    let pair = [PairExample {
        utt_a: a.utt_a.clone(),
        utt_b: a.utt_b.clone(),
        gender: crate::dataset::Gender::Male,
        labels: 0,
        mask: 1,
    }];
    let stacks: StackCache = load_stacks(&pair, &provider, None)?;
    let y = ck
        .model
        .predict_stacks(stacks[&a.utt_a].view(), stacks[&a.utt_b].view())?;
    for (i, s) in y.iter().enumerate() {
        println!("{i:02}\t{}\t{s:.6}", reg.label(i));
    }
    Ok(())
}

fn cmd_split_check(a: SplitCheckArgs) -> Result<i32> {
    let records = read_manifest(&a.manifest)?;
    let report = split_check(
        &read_pairs(&a.train)?,
        &read_pairs(&a.eval)?,
        &speaker_map(&records),
        match a.protocol {
            ProtocolArg::Seen => Protocol::Seen,
            ProtocolArg::Unseen => Protocol::Unseen,
        },
    );
    if report.is_clean() {
        println!("clean");
        return Ok(0);
    }
    for v in &report.violations {
        println!("violation: {v}");
    }
    eprintln!("{} violation(s)", report.violations.len());
    Ok(1)
}

fn cmd_synth_fixture(a: SynthFixtureArgs) -> Result<()> {
    let reg = registry(a.registry.as_deref())?;
    let spec = FixtureSpec {
        seed: a.seed,
        speakers_per_gender: a.speakers_per_gender,
        utterances_per_speaker: a.utterances_per_speaker,
        descriptors_per_pair: a.descriptors_per_pair,
        margin: a.margin,
        descriptors: a.descriptors.clone(),
        ..FixtureSpec::default()
    };
    let prov = Provenance::new(
        "synth-fixture",
        settings(&[
            ("seed", a.seed.to_string()),
            ("speakers_per_gender", a.speakers_per_gender.to_string()),
            ("utterances_per_speaker", a.utterances_per_speaker.to_string()),
            ("descriptors_per_pair", a.descriptors_per_pair.to_string()),
            ("margin", a.margin.to_string()),
            ("descriptors", a.descriptors.join(",")),
        ]),
    );
    create_dir(&a.out)?;
    let f = write_fixture(&a.out, &spec, &reg, &prov.comment_lines())?;
    println!("{} utterances, {} annotations", f.records.len(), f.annotations.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn train_matches(args: &[&str]) -> (TrainArgs, ArgMatches) {
        let mut argv = vec!["vtad", "train", "--pairs", "p", "--features", "f", "--out", "o"];
        argv.extend_from_slice(args);
        let m = Cli::command().try_get_matches_from(argv).unwrap();
        let cli = Cli::from_arg_matches(&m).unwrap();
        let Command::Train(a) = cli.command else { panic!() };
        let sub = m.subcommand_matches("train").unwrap().clone();
        (a, sub)
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("train.cfg");
        std::fs::write(&cfg_path, "epochs=3\nseed=7\nlearning_rate=5e-4\n").unwrap();
        let c = cfg_path.to_str().unwrap();

        let (a, m) = train_matches(&["--config", c, "--seed", "9"]);
        let cfg = resolve_train_config(&a, &m).unwrap();
        assert_eq!(cfg.epochs, 3); // file
        assert_eq!(cfg.seed, 9); // flag over file
        assert_eq!(cfg.learning_rate, 5e-4);
        assert_eq!(cfg.batch_size, 16); // default

        let (a, m) = train_matches(&["--lr", "2e-4", "--batch", "8"]);
        let cfg = resolve_train_config(&a, &m).unwrap();
        assert_eq!((cfg.learning_rate, cfg.batch_size, cfg.epochs), (2e-4, 8, 10));
    }

    #[test]
    fn unknown_subcommand_is_usage_error() {
        assert_eq!(run(["vtad", "frobnicate"]), 2);
        assert_eq!(run(["vtad", "train", "--bogus"]), 2);
    }
}
