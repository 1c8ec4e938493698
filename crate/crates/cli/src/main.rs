//! Command-line surface over the engine: whole-clip inference, streaming
//! inference over newline-delimited JSON skeleton frames, configuration
//! conversion, the clip/step equivalence checker, the analytical cost
//! report, the relative throughput benchmark, and a synthetic weight
//! generator so everything runs without trained checkpoints.
//!
//! Exit codes: 0 success, 1 verification failure, 2 validation error
//! (malformed arguments, files, configurations, or shapes), 3 mode misuse
//! (an operation that needs a continual configuration was given a padded
//! one — run `convert` first).

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use skelstream_core::bench::bench_compare;
use skelstream_core::continual::WarmupPolicy;
use skelstream_core::flops;
use skelstream_core::io::{
    derive_modality_clip, frame_to_tensor, load_weights, open_stream, read_clip, save_weights,
    ModalityKind, ModalityStream,
};
use skelstream_core::blocks::AttentionScope;
use skelstream_core::network::{
    convert, preset, random_weights, BlockSpec, GraphSpec, HeadSpec, Model, NetworkConfig,
    PaddingMode, PresetKind, ResidualKind, SpatialKind, Variant,
};
use skelstream_core::tensor::Tensor;
use skelstream_core::Error as CoreError;

#[derive(Parser)]
#[command(
    name = "skelstream",
    version,
    about = "Clip and streaming inference over skeleton-sequence graph networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one whole clip through a model and print the top classes.
    InferClip(InferClipArgs),
    /// Stream skeleton frames and emit one JSON line per prediction.
    InferStream(InferStreamArgs),
    /// Rewrite a padded configuration into a streamable one.
    Convert(ConvertArgs),
    /// Check clip/step output equivalence per block kind.
    Verify(VerifyArgs),
    /// Print the analytical cost report for a configuration.
    Flops(FlopsArgs),
    /// Measure relative throughput of the two modes on this host.
    Bench(BenchArgs),
    /// Write seeded random weights shaped for a configuration.
    InitRandom(InitRandomArgs),
}

#[derive(Args)]
struct InferClipArgs {
    /// Configuration: a JSON file path or a preset name like `stgcn:reg`.
    #[arg(long)]
    config: String,
    /// Weight container (.cosg).
    #[arg(long)]
    weights: PathBuf,
    /// Clip container holding one `[C, T, V, M]` tensor.
    #[arg(long)]
    clip: PathBuf,
    /// Derive this modality from the raw clip before inference.
    #[arg(long, value_enum)]
    modality: Option<ModalityArg>,
    /// How many classes to print.
    #[arg(long, default_value_t = 5)]
    top: usize,
}

#[derive(Args)]
struct InferStreamArgs {
    /// Configuration: a JSON file path or a preset name like `stgcn:co`.
    #[arg(long)]
    config: String,
    /// Weight container (.cosg).
    #[arg(long)]
    weights: PathBuf,
    /// Read frames from standard input (the default).
    #[arg(long, conflicts_with = "file")]
    stdin: bool,
    /// Read frames from this newline-delimited JSON file.
    #[arg(long)]
    file: Option<PathBuf>,
    /// Output format for predictions.
    #[arg(long, value_enum, default_value = "jsonl")]
    emit: EmitFormat,
    /// Emit only the top-k classes per prediction instead of full logits.
    #[arg(long)]
    top: Option<usize>,
    /// Warm-up policy: wait for a full receptive field, or assume zeros.
    #[arg(long, value_enum, default_value = "strict")]
    policy: PolicyArg,
    /// Derive this modality from the raw frames before inference.
    #[arg(long, value_enum)]
    modality: Option<ModalityArg>,
}

#[derive(Args)]
struct ConvertArgs {
    /// Configuration to convert: a JSON file path or a preset name.
    #[arg(long)]
    config: String,
    /// Conversion target.
    #[arg(long)]
    target: String,
    /// Where to write the converted configuration JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Which preset's block kinds to check: stgcn, agcn, or str.
    #[arg(long, default_value = "stgcn")]
    preset: String,
    /// Seed for weights and the synthetic clip.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Problem size of the reduced networks.
    #[arg(long, value_enum, default_value = "tiny")]
    scale: ScaleArg,
    /// Deliberately misalign one residual delay (negative control).
    #[arg(long, hide = true)]
    corrupt_delay: bool,
}

#[derive(Args)]
struct FlopsArgs {
    /// Stock topology: stgcn, agcn, or str.
    #[arg(long, required_unless_present = "config", conflicts_with = "config")]
    preset: Option<String>,
    /// Variant of the preset.
    #[arg(long, default_value = "reg")]
    variant: String,
    /// Configuration JSON file (alternative to --preset).
    #[arg(long)]
    config: Option<String>,
    /// Clip length for the clip-mode cost (defaults to the configuration's
    /// reference length).
    #[arg(long = "T")]
    t: Option<usize>,
    /// Print the report as JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Stock topology: stgcn, agcn, or str.
    #[arg(long, default_value = "stgcn")]
    preset: String,
    /// Streaming variant to measure (co or co_star).
    #[arg(long, default_value = "co")]
    variant: String,
    /// Timed steady-state frames per streaming repetition.
    #[arg(long, default_value_t = 100)]
    frames: usize,
    /// Repetitions behind each median.
    #[arg(long, default_value_t = 5)]
    reps: usize,
    /// Seed for weights and synthetic input.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Print the report as JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct InitRandomArgs {
    /// Configuration: a JSON file path or a preset name like `stgcn:co`.
    #[arg(long)]
    config: String,
    /// Where to write the weight container.
    #[arg(long)]
    out: PathBuf,
    /// Seed; the same seed always writes identical bytes.
    #[arg(long)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModalityArg {
    Joints,
    Bones,
    #[value(name = "joint_motion")]
    JointMotion,
    #[value(name = "bone_motion")]
    BoneMotion,
}

impl From<ModalityArg> for ModalityKind {
    fn from(arg: ModalityArg) -> Self {
        match arg {
            ModalityArg::Joints => ModalityKind::Joints,
            ModalityArg::Bones => ModalityKind::Bones,
            ModalityArg::JointMotion => ModalityKind::JointMotion,
            ModalityArg::BoneMotion => ModalityKind::BoneMotion,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Strict,
    Zeros,
}

impl From<PolicyArg> for WarmupPolicy {
    fn from(arg: PolicyArg) -> Self {
        match arg {
            PolicyArg::Strict => WarmupPolicy::Strict,
            PolicyArg::Zeros => WarmupPolicy::Zeros,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Tiny,
    Small,
}

#[derive(Clone, Copy, ValueEnum)]
enum EmitFormat {
    Jsonl,
}

/// Marker for equivalence-check failures so they exit with code 1.
#[derive(Debug)]
struct VerifyFailure {
    kind: &'static str,
    diff: f32,
}

impl fmt::Display for VerifyFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "clip/step divergence in {} block: max abs diff {:e} exceeds 1e-4",
            self.kind, self.diff
        )
    }
}

impl std::error::Error for VerifyFailure {}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code(&err));
    }
}

fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<VerifyFailure>().is_some() {
        return 1;
    }
    for cause in err.chain() {
        if let Some(CoreError::Mode(_)) = cause.downcast_ref::<CoreError>() {
            return 3;
        }
    }
    2
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::InferClip(args) => infer_clip(args),
        Command::InferStream(args) => infer_stream(args),
        Command::Convert(args) => convert_config(args),
        Command::Verify(args) => verify(args),
        Command::Flops(args) => flops_report(args),
        Command::Bench(args) => bench(args),
        Command::InitRandom(args) => init_random(args),
    }
}

/// Loads a configuration from a JSON file, or builds a stock one from a
/// `name:variant` shorthand (`stgcn:co`) when no such file exists.
fn load_config(spec: &str) -> Result<NetworkConfig> {
    if Path::new(spec).exists() {
        let text = std::fs::read_to_string(spec)
            .with_context(|| format!("reading configuration {spec}"))?;
        return Ok(NetworkConfig::from_json(&text)?);
    }
    if let Some((name, variant)) = spec.split_once(':') {
        let kind: PresetKind = name.parse::<PresetKind>()?;
        let var: Variant = variant.parse::<Variant>()?;
        return Ok(preset(kind, var));
    }
    anyhow::bail!(
        "configuration '{spec}' is neither an existing file nor a preset shorthand \
         like 'stgcn:co'"
    );
}

fn load_model(config_spec: &str, weights: &Path) -> Result<Model> {
    let config = load_config(config_spec)?;
    let store = load_weights(weights)
        .with_context(|| format!("reading weights {}", weights.display()))?;
    Ok(Model::from_store(config, &store)?)
}

/// Class indices ordered by descending logit (ties to the lower index).
fn ranked(logits: &Tensor) -> Vec<usize> {
    let data = logits.data();
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| data[b].total_cmp(&data[a]).then(a.cmp(&b)));
    order
}

fn infer_clip(args: InferClipArgs) -> Result<()> {
    let model = load_model(&args.config, &args.weights)?;
    let mut clip = read_clip(&args.clip)
        .with_context(|| format!("reading clip {}", args.clip.display()))?;
    if let Some(modality) = args.modality {
        clip = derive_modality_clip(&clip, modality.into(), &model.graph)?;
    }
    let logits = model.forward_clip(&clip)?;
    let k = args.top.min(logits.numel());
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "rank class logit")?;
    for (rank, &class) in ranked(&logits)[..k].iter().enumerate() {
        writeln!(out, "{} {} {}", rank + 1, class, logits.data()[class])?;
    }
    Ok(())
}

fn infer_stream(args: InferStreamArgs) -> Result<()> {
    let model = load_model(&args.config, &args.weights)?;
    let mut state = model.init_stream(args.policy.into())?;
    let mut modality = args
        .modality
        .map(|m| ModalityStream::new(m.into(), &model.graph));
    let _ = args.emit; // jsonl is the only format

    let reader: Box<dyn BufRead> = match &args.file {
        Some(path) => Box::new(BufReader::new(
            std::fs::File::open(path)
                .with_context(|| format!("opening stream {}", path.display()))?,
        )),
        None => Box::new(std::io::stdin().lock()),
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();

    let v = model.graph.num_joints();
    let persons = model.config.persons;
    let mut stream = open_stream(reader, v);
    let mut emitted = 0u64;
    while let Some(frame) = stream.next() {
        let frame = frame?;
        let mut tensor = frame_to_tensor(&frame, v, persons)?;
        if let Some(modality) = modality.as_mut() {
            tensor = modality.step(&tensor)?;
        }
        if let Some(pred) = model.forward_step(&mut state, &tensor)? {
            let line = match args.top {
                None => serde_json::json!({
                    "frame_index": pred.frame_index,
                    "logits": pred.logits.data(),
                }),
                Some(k) => {
                    let k = k.min(pred.logits.numel());
                    let top: Vec<serde_json::Value> = ranked(&pred.logits)[..k]
                        .iter()
                        .map(|&class| {
                            serde_json::json!({
                                "class": class,
                                "logit": pred.logits.data()[class],
                            })
                        })
                        .collect();
                    serde_json::json!({ "frame_index": pred.frame_index, "top": top })
                }
            };
            writeln!(out, "{line}")?;
            out.flush()?;
            emitted += 1;
        }
    }
    log::info!(
        "stream ended: {} frames seen, {} skipped, {} predictions",
        state.frames_seen(),
        stream.skipped(),
        emitted
    );
    Ok(())
}

fn convert_config(args: ConvertArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let target: Variant = args.target.parse::<Variant>()?;
    let (converted, report) = convert(&config, target)?;
    let text = serde_json::to_string_pretty(&converted)?;
    std::fs::write(&args.out, text + "\n")
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!("block kernel dilation padding_removed delay");
    for d in &report.block_delays {
        println!(
            "{} {} {} {} {}",
            d.block, d.kernel, d.dilation, d.padding_removed, d.delay
        );
    }
    println!("total_delay {}", report.total_delay);
    for w in &report.warnings {
        println!("warning: {w}");
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

/// A 3-block reduced network of one spatial kind, in padded (clip) form.
fn reduced_config(kind: &SpatialKind, scale: ScaleArg) -> NetworkConfig {
    let (graph, kernel, channels, t_ref) = match scale {
        ScaleArg::Tiny => (
            GraphSpec::Custom {
                num_joints: 5,
                edges: vec![(0, 1), (1, 2), (2, 3), (3, 4)],
                center: 2,
            },
            5usize,
            [8usize, 8, 16],
            48usize,
        ),
        ScaleArg::Small => (
            GraphSpec::Preset("ntu25".into()),
            9,
            [16, 16, 32],
            96,
        ),
    };
    let strides = [1usize, 2, 1];
    let mut blocks = Vec::new();
    let mut c_in = 3usize;
    for i in 0..3 {
        blocks.push(BlockSpec {
            spatial: kind.clone(),
            in_channels: c_in,
            out_channels: channels[i],
            kernel,
            stride: strides[i],
            dilation: 1,
            padding: PaddingMode::Equal,
            residual: if i == 0 {
                ResidualKind::None
            } else if c_in != channels[i] {
                ResidualKind::Projection
            } else {
                ResidualKind::Identity
            },
            residual_delay: None,
        });
        c_in = channels[i];
    }
    NetworkConfig {
        graph,
        num_classes: 11,
        t_ref,
        in_channels: 3,
        persons: 1,
        input_bn: true,
        blocks,
        head: HeadSpec::default(),
    }
}

fn verify(args: VerifyArgs) -> Result<()> {
    let preset_kind: PresetKind = args.preset.parse::<PresetKind>()?;
    let kinds: Vec<(&'static str, SpatialKind)> = match preset_kind {
        PresetKind::Stgcn => vec![("gc", SpatialKind::Gc)],
        PresetKind::Agcn => vec![(
            "agc",
            SpatialKind::Agc {
                attention_scope: AttentionScope::Frame,
            },
        )],
        PresetKind::Str => vec![
            ("gc", SpatialKind::Gc),
            ("ssa", SpatialKind::Ssa { heads: 2 }),
        ],
    };
    let tolerance = 1e-4f32;
    let mut failure: Option<VerifyFailure> = None;
    for (name, kind) in &kinds {
        let reg = reduced_config(kind, args.scale);
        let (co, _) = convert(&reg, Variant::Co)?;
        let store = random_weights(&co, args.seed)?;
        let clip_model = Model::from_store(co.clone(), &store)?;
        let step_model = if args.corrupt_delay {
            // Misalign one residual only on the streaming side, so the clip
            // reference stays correct and the divergence must surface.
            let mut bad = co.clone();
            let delay = bad.blocks[1].residual_delay.unwrap_or(0);
            bad.blocks[1].residual_delay = Some(if delay > 0 { delay - 1 } else { delay + 1 });
            Model::from_store(bad, &store)?
        } else {
            Model::from_store(co.clone(), &store)?
        };
        let (diff, preds) =
            stream_vs_clip_diff(&step_model, &clip_model, args.seed ^ 0x5eed, co.t_ref)?;
        let pass = diff <= tolerance;
        println!(
            "{name}: {preds} predictions, max abs diff {diff:e} {}",
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass && failure.is_none() {
            failure = Some(VerifyFailure { kind: name, diff });
        }
    }
    match failure {
        None => Ok(()),
        Some(f) => Err(f.into()),
    }
}

/// Streams a synthetic clip through `step_model` and compares every
/// prediction against `clip_model` run on the frames seen so far; returns
/// the worst difference and the prediction count.
fn stream_vs_clip_diff(
    step_model: &Model,
    clip_model: &Model,
    seed: u64,
    t: usize,
) -> Result<(f32, usize)> {
    use rand::{Rng, SeedableRng};
    let c = step_model.config.in_channels;
    let v = step_model.graph.num_joints();
    let m = step_model.config.persons;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let frames: Vec<Tensor> = (0..t)
        .map(|_| {
            let data = (0..c * v * m).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            Tensor::new(vec![c, v, m], data)
        })
        .collect::<skelstream_core::Result<_>>()?;

    let clip_of = |len: usize| -> skelstream_core::Result<Tensor> {
        let mut data = vec![0.0f32; c * len * v * m];
        for (ti, frame) in frames[..len].iter().enumerate() {
            for ci in 0..c {
                for vi in 0..v {
                    for mi in 0..m {
                        data[((ci * len + ti) * v + vi) * m + mi] =
                            frame.data()[(ci * v + vi) * m + mi];
                    }
                }
            }
        }
        Tensor::new(vec![c, len, v, m], data)
    };

    let mut state = step_model.init_stream(WarmupPolicy::Strict)?;
    let mut worst = 0.0f32;
    let mut preds = 0usize;
    for (ti, frame) in frames.iter().enumerate() {
        if let Some(pred) = step_model.forward_step(&mut state, frame)? {
            let want = clip_model.forward_clip(&clip_of(ti + 1)?)?;
            for (a, b) in pred.logits.data().iter().zip(want.data()) {
                worst = worst.max((a - b).abs());
            }
            preds += 1;
        }
    }
    Ok((worst, preds))
}

fn flops_report(args: FlopsArgs) -> Result<()> {
    let config = match (&args.config, &args.preset) {
        (Some(path), _) => load_config(path)?,
        (None, Some(name)) => {
            let kind: PresetKind = name.parse::<PresetKind>()?;
            let variant: Variant = args.variant.parse::<Variant>()?;
            preset(kind, variant)
        }
        (None, None) => unreachable!("clap enforces one of --config/--preset"),
    };
    let mut report = flops::report(&config)?;
    if let Some(t) = args.t {
        report.clip_flops = flops::count_clip(&config, t)? as f64;
        report.reduction_factor = report
            .step_flops_per_pred
            .map(|step| report.clip_flops / step);
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    let t_used = args.t.unwrap_or(config.t_ref);
    println!("{:<22}{}", "params", report.params);
    println!("{:<22}{:.4e}  (T={t_used})", "clip_flops", report.clip_flops);
    match report.step_flops_per_pred {
        Some(step) => {
            println!("{:<22}{step:.4e}", "step_flops_per_pred");
            println!(
                "{:<22}{}",
                "frames_per_pred",
                report.frames_per_pred.unwrap_or(0)
            );
            println!(
                "{:<22}{:.1}x",
                "reduction_factor",
                report.reduction_factor.unwrap_or(0.0)
            );
        }
        None => println!(
            "{:<22}{}",
            "step_flops_per_pred", "n/a (clip-only configuration; run convert)"
        ),
    }
    println!("{:<22}{}", "state_bytes", report.state_bytes);
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let kind: PresetKind = args.preset.parse::<PresetKind>()?;
    let variant: Variant = args.variant.parse::<Variant>()?;
    if variant == Variant::Reg {
        anyhow::bail!(CoreError::Config(
            "the benchmark streams a continual variant; pass --variant co or co_star".into()
        ));
    }
    let clip_config = preset(kind, Variant::Reg);
    let step_config = preset(kind, variant);
    let clip_model = Model::from_store(clip_config.clone(), &random_weights(&clip_config, args.seed)?)?;
    let step_model = Model::from_store(step_config.clone(), &random_weights(&step_config, args.seed)?)?;
    let report = bench_compare(
        &clip_model,
        clip_config.t_ref,
        &step_model,
        args.frames,
        args.reps,
        args.seed,
    )?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    println!("{:<22}{:.4}", "clip_sec_per_pred", report.clip_seconds_per_pred);
    println!("{:<22}{:.6}", "step_sec_per_pred", report.step_seconds_per_pred);
    println!("{:<22}{:.2}", "clip_preds_per_sec", report.clip_preds_per_sec);
    println!("{:<22}{:.2}", "step_preds_per_sec", report.step_preds_per_sec);
    println!("{:<22}{:.1}x", "speedup", report.speedup);
    println!(
        "{:<22}{} reps, {} clip frames, {} timed stream frames, {} preds/rep",
        "sample", report.reps, report.clip_frames, report.stream_frames, report.stream_preds
    );
    Ok(())
}

fn init_random(args: InitRandomArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let store = random_weights(&config, args.seed)?;
    save_weights(&store, &args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    let params: usize = store.iter().map(|(_, t)| t.numel()).sum();
    println!(
        "wrote {} tensors ({} parameters) to {}",
        store.len(),
        params,
        args.out.display()
    );
    Ok(())
}
