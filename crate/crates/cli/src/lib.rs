//! Argument parsing and workflows behind the `lszone` binary.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lszone::eval::{compute_fir_with, measure_rtf, report_macs, TranscriptSet};
use lszone::gradcheck::{end_to_end, primitive_suite, GradReport};
use lszone::model::{build_model, infer_config, load_weights, read_weights, ModelConfig};
use lszone::sim::dataset::{build_dataset, read_manifest, Split};
use lszone::spaiec::GateMode;
use lszone::train::train;
use lszone::wav::{read_wav, write_wav, SampleFormat};
use lszone::ModelF32;
use serde::Serialize;

pub mod config;

pub use config::{BenchConfig, CliConfig};

pub const PRIMITIVE_TOL: f64 = 1e-6;
pub const END_TO_END_TOL: f64 = 1e-5;
/// Published single-core RTF, shown next to local measurements.
pub const REFERENCE_RTF: f64 = 0.37;

#[derive(Parser, Debug)]
#[command(name = "lszone", version, about = "Multi-zone in-car speech separation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Worker threads (simulate defaults to all cores, everything else to 1).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ModelArgs {
    #[arg(long)]
    pub zones: Option<usize>,
    #[arg(long)]
    pub n_mel: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub hidden_units: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub kernel: Option<usize>,
    #[arg(long)]
    pub groups: Option<usize>,
    /// convex | mel-only
    #[arg(long)]
    pub gate_mode: Option<GateMode>,
}

impl ModelArgs {
    pub fn apply(&self, m: &mut ModelConfig) {
        let set = |dst: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut m.zones, self.zones);
        set(&mut m.n_mel, self.n_mel);
        set(&mut m.hidden, self.hidden);
        set(&mut m.hidden_units, self.hidden_units);
        set(&mut m.blocks, self.blocks);
        set(&mut m.kernel, self.kernel);
        set(&mut m.groups, self.groups);
        if let Some(g) = self.gate_mode {
            m.gate_mode = g;
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic cabin dataset.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// train | val | test
        #[arg(long)]
        split: Option<Split>,
        #[arg(long)]
        clip_seconds: Option<f64>,
        /// pcm16 | float32
        #[arg(long)]
        format: Option<SampleFormat>,
        /// Take speech from WAV files in this directory.
        #[arg(long)]
        wav_dir: Option<PathBuf>,
    },
    /// Train on a simulated dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr0: Option<f64>,
        #[arg(long)]
        decay: Option<f64>,
        #[arg(long)]
        clip_seconds: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Start from these weights instead of a seeded initialization.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Separate a multichannel recording into per-zone signals.
    Separate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// One multichannel file instead of zone<N>.wav per zone.
        #[arg(long)]
        multichannel: bool,
        #[arg(long)]
        format: Option<SampleFormat>,
        #[arg(long)]
        gate_mode: Option<GateMode>,
    },
    /// Streaming real-time factor.
    BenchRtf {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analytic multiply-accumulate report.
    Macs {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// False intrusion rate from ASR transcripts.
    EvalFir {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        transcripts: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Count clips instead of (clip, zone) pairs.
        #[arg(long)]
        per_clip: bool,
        #[arg(long)]
        zones: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient verification.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Parameters sampled for the end-to-end check.
        #[arg(long, default_value_t = 24)]
        count: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Simulate { common, .. }
            | Command::Train { common, .. }
            | Command::Separate { common, .. }
            | Command::BenchRtf { common, .. }
            | Command::Macs { common, .. }
            | Command::EvalFir { common, .. }
            | Command::Gradcheck { common, .. } => common,
        }
    }
}

fn set<T>(dst: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *dst = v;
    }
}

/// Effective configuration: built-in defaults, then the file, then flags.
pub fn resolve_config(cmd: &Command) -> Result<CliConfig> {
    let mut cfg = CliConfig::load_or_default(cmd.common().config.as_deref())?;
    match cmd {
        Command::Simulate {
            count,
            seed,
            split,
            clip_seconds,
            format,
            wav_dir,
            ..
        } => {
            let s = &mut cfg.simulate;
            set(&mut s.count, *count);
            set(&mut s.seed, *seed);
            set(&mut s.split, *split);
            set(&mut s.clip_seconds, *clip_seconds);
            set(&mut s.format, *format);
            if wav_dir.is_some() {
                s.wav_dir = wav_dir.clone();
            }
        }
        Command::Train {
            model,
            epochs,
            batch_size,
            lr0,
            decay,
            clip_seconds,
            seed,
            ..
        } => {
            model.apply(&mut cfg.model);
            let t = &mut cfg.train;
            set(&mut t.epochs, *epochs);
            set(&mut t.batch_size, *batch_size);
            set(&mut t.lr0, *lr0);
            set(&mut t.decay, *decay);
            set(&mut t.clip_seconds, *clip_seconds);
            set(&mut t.seed, *seed);
        }
        Command::Separate { format, gate_mode, .. } => {
            set(&mut cfg.simulate.format, *format);
            set(&mut cfg.model.gate_mode, *gate_mode);
        }
        Command::BenchRtf {
            model,
            duration,
            repeats,
            seed,
            common,
            ..
        } => {
            model.apply(&mut cfg.model);
            set(&mut cfg.bench.duration_s, *duration);
            set(&mut cfg.bench.repeats, *repeats);
            set(&mut cfg.bench.seed, *seed);
            set(&mut cfg.bench.threads, common.threads);
        }
        Command::Macs { model, .. } => model.apply(&mut cfg.model),
        Command::EvalFir { zones, .. } => set(&mut cfg.model.zones, *zones),
        Command::Gradcheck { .. } => {}
    }
    Ok(cfg)
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("{}", p.display())),
        None => {
            use std::io::Write;
            match writeln!(std::io::stdout().lock(), "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
                _ => Ok(()),
            }
        }
    }
}

#[derive(Serialize)]
struct RtfOutput {
    #[serde(flatten)]
    stats: lszone::eval::RtfStats,
    zones: usize,
    blocks: usize,
    reference_rtf: f64,
}

#[derive(Serialize)]
struct GradcheckOutput<'a> {
    passed: bool,
    primitive_tol: f64,
    end_to_end_tol: f64,
    primitives: &'a [GradReport],
    end_to_end: &'a GradReport,
}

fn load_model(path: &Path, gate_mode: GateMode) -> Result<ModelF32> {
    let bytes = std::fs::read(path).with_context(|| format!("{}", path.display()))?;
    let tensors = read_weights(&bytes).with_context(|| format!("{}", path.display()))?;
    let (mc, stft) = infer_config(&tensors, gate_mode)?;
    Ok(load_weights(path, &mc, &stft)?)
}

/// Executes one parsed command.
pub fn run(cmd: &Command) -> Result<()> {
    let cfg = resolve_config(cmd)?;
    match cmd {
        Command::Simulate { out, .. } => {
            let manifests = build_dataset(&cfg.simulate, out)?;
            eprintln!("wrote {} clips to {}", manifests.len(), out.display());
        }
        Command::Train { data, out, init, .. } => {
            let mut model: ModelF32 = match init {
                Some(p) => load_model(p, cfg.model.gate_mode)?,
                None => build_model(&cfg.model, &cfg.stft, cfg.train.seed)?,
            };
            let curve = train(&mut model, data, &cfg.train, out)?;
            if let Some(last) = curve.last() {
                eprintln!("epoch {} loss {:.6e}", last.epoch, last.mean_loss);
            }
        }
        Command::Separate {
            weights,
            input,
            out_dir,
            multichannel,
            ..
        } => {
            let model = load_model(weights, cfg.model.gate_mode)?;
            let wave = read_wav(input)?;
            let zones = model.separate(&wave)?;
            std::fs::create_dir_all(out_dir).with_context(|| format!("{}", out_dir.display()))?;
            let format = cfg.simulate.format;
            if *multichannel {
                write_wav(&out_dir.join("separated.wav"), &zones, format)?;
            } else {
                for (z, ch) in zones.iter().enumerate() {
                    write_wav(&out_dir.join(format!("zone{z}.wav")), std::slice::from_ref(ch), format)?;
                }
            }
        }
        Command::BenchRtf { weights, out, .. } => {
            let model: ModelF32 = match weights {
                Some(p) => load_model(p, cfg.model.gate_mode)?,
                None => build_model(&cfg.model, &cfg.stft, cfg.bench.seed)?,
            };
            let b = &cfg.bench;
            let stats = measure_rtf(&model, b.duration_s, b.repeats, b.threads, b.seed)?;
            let report = RtfOutput {
                stats,
                zones: model.config().zones,
                blocks: model.config().blocks,
                reference_rtf: REFERENCE_RTF,
            };
            emit(&report, out.as_deref())?;
        }
        Command::Macs { out, .. } => emit(&report_macs(&cfg.model, &cfg.stft)?, out.as_deref())?,
        Command::EvalFir {
            transcripts,
            manifest,
            per_clip,
            out,
            ..
        } => {
            let t = TranscriptSet::read_jsonl(transcripts)?;
            let m = read_manifest(manifest)?;
            emit(&compute_fir_with(&t, &m, cfg.model.zones, *per_clip)?, out.as_deref())?;
        }
        Command::Gradcheck { seed, count, out, .. } => {
            let prim = primitive_suite(*seed)?;
            let e2e = end_to_end(*seed, *count)?;
            let passed = prim.iter().all(|r| r.passed(PRIMITIVE_TOL)) && e2e.passed(END_TO_END_TOL);
            emit(
                &GradcheckOutput {
                    passed,
                    primitive_tol: PRIMITIVE_TOL,
                    end_to_end_tol: END_TO_END_TOL,
                    primitives: &prim,
                    end_to_end: &e2e,
                },
                out.as_deref(),
            )?;
            if !passed {
                bail!("gradient check failed");
            }
        }
    }
    Ok(())
}

fn pool(cmd: &Command) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    match (cmd.common().threads, cmd) {
        (Some(0), _) => bail!("--threads must be positive"),
        (Some(n), _) => b = b.num_threads(n),
        (None, Command::Simulate { .. }) => {}
        (None, _) => b = b.num_threads(1),
    }
    Ok(b.build()?)
}

/// Parses `argv` and runs it. Usage errors exit 2, runtime errors 1.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = pool(&cli.command).and_then(|p| p.install(|| run(&cli.command)));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            1
        }
    }
}
