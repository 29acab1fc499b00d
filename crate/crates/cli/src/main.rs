use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vtc_cli::bench::{bench, BenchSpec};
use vtc_cli::replay::{available_steps, replay_trace, trace_dims};
use vtc_cli::report::{write_jsonl, ReportFormat, RunReport};
use vtc_cli::simulate::simulate;
use vtc_cli::sweep::{sweep, write_sweep_csv, SweepGrid};
use vtc_cli::{HarnessError, RunSpec, Source};
use vtc_core::attention_sim::{ModelDims, ModelPreset, PrefillMode};
use vtc_core::costmodel::{cost_report, DEFAULT_STEPS};
use vtc_core::dyn_kv::Strategy;
use vtc_core::tokenstream::{load_trace, CompressionConfig, MergeMode, ScoreScale, DEFAULT_PERTURBATION};
use vtc_core::ttm::retained_count;

/// Prompt length up to which `--prefill auto` runs the exact causal pass.
const AUTO_EXACT_PREFILL_MAX: usize = 1024;

#[derive(Debug, Parser)]
#[command(name = "vtc", version = concat!(env!("CARGO_PKG_VERSION"), "+", env!("VTC_BUILD_STAMP")), about = "Visual token compression harness for video LLM decoding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Temporal merging, prefill and cached decode on a synthetic video.
    Simulate(SimulateArgs),
    /// Cross product of K, L and P values, one CSV row per cell.
    Sweep(SweepArgs),
    /// Drive pruning from attention rows recorded in a trace file.
    Replay(ReplayArgs),
    /// Analytical FLOPs and retained ratios.
    Cost(CostArgs),
    /// Decode-step latency of a baseline against a candidate strategy.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelChoice {
    #[value(name = "0.5b")]
    Small,
    #[value(name = "7b")]
    Medium,
    #[value(name = "72b")]
    Large,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PrefillChoice {
    Auto,
    Exact,
    Projected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatChoice {
    Json,
    Csv,
}

impl From<FormatChoice> for ReportFormat {
    fn from(f: FormatChoice) -> Self {
        match f {
            FormatChoice::Json => ReportFormat::Json,
            FormatChoice::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Dimension preset; explicit size flags override its values.
    #[arg(long, value_enum)]
    model: Option<ModelChoice>,
    /// Hidden size (also the synthetic token dimension).
    #[arg(long = "dim", visible_alias = "d")]
    dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    /// Feed-forward inner width.
    #[arg(long = "ffn", visible_alias = "m")]
    ffn: Option<usize>,
}

impl ModelArgs {
    fn resolve(&self, default: ModelChoice) -> Result<ModelDims, HarnessError> {
        let base = match self.model.unwrap_or(default) {
            ModelChoice::Small => ModelDims::preset(ModelPreset::Small),
            ModelChoice::Medium => ModelDims::preset(ModelPreset::Medium),
            ModelChoice::Large => ModelDims::preset(ModelPreset::Large),
            ModelChoice::Custom => {
                let hidden = self.dim.unwrap_or(896);
                ModelDims {
                    layers: 4,
                    hidden,
                    ffn_inner: 4 * hidden,
                    heads: 4,
                }
            }
        };
        Ok(ModelDims::new(
            self.layers.unwrap_or(base.layers),
            self.dim.unwrap_or(base.hidden),
            self.ffn.unwrap_or(base.ffn_inner),
            self.heads.unwrap_or(base.heads),
        )?)
    }
}

#[derive(Debug, Args)]
struct CompressionArgs {
    /// Stage-1 (temporal merging) pruning rate.
    #[arg(short = 'K', long = "k-rate", default_value_t = 0.7)]
    k_rate: f64,
    /// Evaluation layer for stage-2 decisions.
    #[arg(short = 'L', long = "eval-layer", default_value_t = 3)]
    eval_layer: usize,
    /// Stage-2 (KV cache) pruning rate.
    #[arg(short = 'P', long = "p-rate", default_value_t = 0.7)]
    p_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "window", default_value_t = 4)]
    window_len: usize,
    #[arg(long = "merge-mode", default_value = "drop")]
    merge_mode: MergeMode,
    /// Attention score scale: per-head (`head`) or hidden-size (`full`) square root.
    #[arg(long, default_value = "head")]
    scale: ScoreScale,
}

impl CompressionArgs {
    fn config(&self, heads: usize) -> CompressionConfig {
        CompressionConfig {
            k_rate: self.k_rate,
            eval_layer: self.eval_layer,
            p_rate: self.p_rate,
            window_len: self.window_len,
            heads,
            seed: self.seed,
            merge_mode: self.merge_mode,
            scale: self.scale,
        }
    }
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Report file; standard output when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatChoice,
    /// JSON-lines file receiving one retention decision per line.
    #[arg(long = "audit-log")]
    audit_log: Option<PathBuf>,
    /// JSON-lines file receiving one temporal-merge record per line.
    #[arg(long = "merge-log")]
    merge_log: Option<PathBuf>,
}

impl OutputArgs {
    fn emit(&self, report: &RunReport) -> Result<(), HarnessError> {
        if let Some(p) = &self.audit_log {
            write_jsonl(p, &report.audit_log)?;
        }
        if let Some(p) = &self.merge_log {
            write_jsonl(p, &report.merge_records)?;
        }
        report.write(self.report.as_deref(), self.format.into())
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long, default_value_t = 32)]
    frames: usize,
    #[arg(long = "tokens-per-frame", default_value_t = 196)]
    tokens_per_frame: usize,
    #[arg(long = "text-tokens", default_value_t = 0)]
    text_tokens: usize,
    /// Frame-to-frame noise of the synthetic video.
    #[arg(long, default_value_t = DEFAULT_PERTURBATION)]
    perturbation: f64,
    /// Decode steps.
    #[arg(short = 'R', long = "steps", default_value_t = DEFAULT_STEPS as usize)]
    steps: usize,
    #[arg(long, default_value = "dycoke")]
    strategy: Strategy,
    #[arg(long, value_enum, default_value = "auto")]
    prefill: PrefillChoice,
    /// Record per-step wall-clock latency in the report.
    #[arg(long)]
    timing: bool,
    /// Skip the cache invariant checks after every decision.
    #[arg(long = "no-invariants")]
    no_invariants: bool,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    compression: CompressionArgs,
}

impl RunArgs {
    /// Spec from the flags without validating the compression settings, which
    /// sweep cells override.
    fn unchecked_spec(&self) -> Result<RunSpec, HarnessError> {
        let dims = self.model.resolve(ModelChoice::Custom)?;
        let config = self.compression.config(dims.heads);
        let prefill = match self.prefill {
            PrefillChoice::Exact => PrefillMode::Exact,
            PrefillChoice::Projected => PrefillMode::Projected,
            PrefillChoice::Auto => {
                let shape_ok = self.frames > 0 && self.tokens_per_frame > 0 && config.validate().is_ok();
                let prompt = if shape_ok {
                    retained_count(self.frames, self.tokens_per_frame, config.window_len, config.k_rate)
                } else {
                    0
                };
                if prompt + self.text_tokens <= AUTO_EXACT_PREFILL_MAX {
                    PrefillMode::Exact
                } else {
                    PrefillMode::Projected
                }
            }
        };
        Ok(RunSpec {
            source: Source::Synthetic {
                frames: self.frames,
                tokens_per_frame: self.tokens_per_frame,
                dim: dims.hidden,
                text_tokens: self.text_tokens,
                perturbation: self.perturbation,
            },
            config,
            dims,
            steps: self.steps,
            strategy: self.strategy,
            prefill,
            timing: self.timing,
            check_invariants: !self.no_invariants,
        })
    }

    fn spec(&self) -> Result<RunSpec, HarnessError> {
        let spec = self.unchecked_spec()?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated K values; defaults to `-K`, an empty string sweeps nothing.
    #[arg(long = "grid-k")]
    grid_k: Option<String>,
    /// Comma-separated evaluation layers; defaults to `-L`.
    #[arg(long = "grid-l")]
    grid_l: Option<String>,
    /// Comma-separated P values; defaults to `-P`.
    #[arg(long = "grid-p")]
    grid_p: Option<String>,
    /// Table file; standard output when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatChoice,
}

fn parse_list<T: std::str::FromStr>(raw: Option<&str>, default: T, axis: &str) -> Result<Vec<T>, HarnessError> {
    let Some(raw) = raw else {
        return Ok(vec![default]);
    };
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| HarnessError::Config(format!("bad {axis} value '{s}'")))
        })
        .collect()
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Steps to replay; defaults to every consecutive step recorded at the evaluation layer.
    #[arg(short = 'R', long = "steps")]
    steps: Option<usize>,
    #[arg(long, default_value = "dycoke")]
    strategy: Strategy,
    #[arg(long = "no-invariants")]
    no_invariants: bool,
    /// Feed-forward inner width used for the FLOPs estimate.
    #[arg(long = "ffn", visible_alias = "m")]
    ffn: Option<usize>,
    #[command(flatten)]
    compression: CompressionArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct CostArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 32)]
    frames: usize,
    #[arg(long = "tokens-per-frame", default_value_t = 196)]
    tokens_per_frame: usize,
    #[arg(long = "text-tokens", default_value_t = 0)]
    text_tokens: u64,
    #[arg(short = 'K', long = "k-rate", default_value_t = 0.7)]
    k_rate: f64,
    #[arg(short = 'P', long = "p-rate", default_value_t = 0.7)]
    p_rate: f64,
    #[arg(long = "window", default_value_t = 4)]
    window_len: usize,
    #[arg(short = 'R', long = "steps", default_value_t = DEFAULT_STEPS)]
    steps: u64,
    #[arg(long)]
    report: Option<PathBuf>,
}

/// Without `--layers` the model keeps only two layers; the evaluation layer is
/// clamped so that at least one layer lies deeper.
#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    compression: CompressionArgs,
    #[arg(long, default_value_t = 32)]
    frames: usize,
    #[arg(long = "tokens-per-frame", default_value_t = 196)]
    tokens_per_frame: usize,
    #[arg(long = "text-tokens", default_value_t = 0)]
    text_tokens: usize,
    #[arg(long, default_value = "none")]
    baseline: Strategy,
    #[arg(long, default_value = "dycoke")]
    candidate: Strategy,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    #[arg(long, default_value_t = 5)]
    batches: usize,
    #[arg(long = "steps-per-batch", default_value_t = 4)]
    steps_per_batch: usize,
    #[arg(long)]
    report: Option<PathBuf>,
}

fn write_json<S: serde::Serialize>(path: Option<&Path>, value: &S) -> Result<(), HarnessError> {
    let mut out: Box<dyn Write> = match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    };
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Simulate(args) => {
            let report = simulate(&args.run.spec()?)?;
            args.output.emit(&report)
        }
        Command::Sweep(args) => {
            let mut base = args.run.unchecked_spec()?;
            let c = &base.config;
            let grid = SweepGrid {
                k_rates: parse_list(args.grid_k.as_deref(), c.k_rate, "K")?,
                eval_layers: parse_list(args.grid_l.as_deref(), c.eval_layer, "L")?,
                p_rates: parse_list(args.grid_p.as_deref(), c.p_rate, "P")?,
            };
            base.timing = true;
            let rows = sweep(&base, &grid);
            match args.format {
                FormatChoice::Json => write_json(args.report.as_deref(), &rows),
                FormatChoice::Csv => match &args.report {
                    Some(p) => write_sweep_csv(BufWriter::new(File::create(p)?), &rows),
                    None => write_sweep_csv(io::stdout().lock(), &rows),
                },
            }
        }
        Command::Replay(args) => {
            let trace = load_trace(&args.trace)?;
            let dims = trace_dims(&trace, args.ffn)?;
            let config = args.compression.config(dims.heads);
            let steps = args
                .steps
                .unwrap_or_else(|| available_steps(&trace, config.eval_layer as u32).max(1));
            let spec = RunSpec {
                source: Source::Trace {
                    path: args.trace.clone(),
                },
                config,
                dims,
                steps,
                strategy: args.strategy,
                prefill: PrefillMode::Projected,
                timing: false,
                check_invariants: !args.no_invariants,
            };
            let report = replay_trace(&spec, &trace)?;
            args.output.emit(&report)
        }
        Command::Cost(args) => {
            let dims = args.model.resolve(ModelChoice::Medium)?;
            let config = CompressionConfig {
                k_rate: args.k_rate,
                p_rate: args.p_rate,
                window_len: args.window_len,
                heads: dims.heads,
                eval_layer: 0,
                ..CompressionConfig::default()
            };
            config.validate()?;
            let report = cost_report(
                &config,
                &dims,
                args.frames,
                args.tokens_per_frame,
                args.text_tokens,
                args.steps,
            )?;
            write_json(args.report.as_deref(), &report)
        }
        Command::Bench(args) => {
            let mut dims = args.model.resolve(ModelChoice::Medium)?;
            if args.model.layers.is_none() {
                dims.layers = 2;
            }
            let mut config = args.compression.config(dims.heads);
            config.eval_layer = config.eval_layer.min(dims.layers.saturating_sub(2));
            let spec = BenchSpec {
                dims,
                config,
                frames: args.frames,
                tokens_per_frame: args.tokens_per_frame,
                text_tokens: args.text_tokens,
                baseline: args.baseline,
                candidate: args.candidate,
                warmup_steps: args.warmup,
                batches: args.batches,
                steps_per_batch: args.steps_per_batch,
            };
            let report = bench(&spec)?;
            write_json(args.report.as_deref(), &report)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let HarnessError::Invariant(v) = &e {
                if let Ok(dump) = serde_json::to_string(v) {
                    eprintln!("{dump}");
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
