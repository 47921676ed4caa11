use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use abs6d::energynet::{init_params, EnergyNet, EnergyNetParams};
use abs6d::harness::config::{self, KeyValues};
use abs6d::harness::dataset::{load_dataset, save_dataset, SceneRecord};
use abs6d::harness::report::{read_results_csv, run_inference, write_results_csv, Report};
use abs6d::harness::synth::{builtin_mesh, generate_split, BenchmarkConfig};
use abs6d::infer::{estimate, InferConfig};
use abs6d::observation::NoiseParams;
use abs6d::posterior::{run_chain, write_chain_csv, GibbsPosterior, ProposalConfig};
use abs6d::render::TriangleMesh;
use abs6d::seed::substream;
use abs6d::train::{sgd_train, write_log_csv, LogRecord, TrainConfig};

#[derive(Debug, Error)]
enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("model error: {0}")]
    Model(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Model(_) => 4,
        }
    }
}

fn config_err(e: impl ToString) -> CliError {
    CliError::Config(e.to_string())
}

fn data_err(e: impl ToString) -> CliError {
    CliError::Data(e.to_string())
}

#[derive(Parser)]
#[command(name = "abs6d", version, about = "Learned analysis-by-synthesis 6D pose estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene set.
    Synth(SynthArgs),
    /// Train the energy network.
    Train(TrainArgs),
    /// Estimate poses for a scene set and write results.csv.
    Infer(InferArgs),
    /// Aggregate results into per-sequence and per-occlusion accuracy.
    Eval(EvalArgs),
    /// Dump one Metropolis chain for a scene.
    Chain(ChainArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    scenes: Option<usize>,
    /// Comma-separated builtin names or OBJ paths (mm).
    #[arg(long)]
    meshes: Option<String>,
    #[arg(long)]
    noise_preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Scene id prefix.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct InferFlags {
    #[arg(long)]
    hypotheses: Option<usize>,
    #[arg(long)]
    refine_top_k: Option<usize>,
    #[arg(long)]
    refine_rounds: Option<usize>,
    #[arg(long)]
    inlier_threshold: Option<f64>,
    #[arg(long)]
    min_correspondences: Option<usize>,
}

impl InferFlags {
    fn overlay(&self, kv: &mut KeyValues) {
        set_opt(kv, "hypotheses", self.hypotheses);
        set_opt(kv, "refine_top_k", self.refine_top_k);
        set_opt(kv, "refine_rounds", self.refine_rounds);
        set_opt(kv, "inlier_threshold", self.inlier_threshold);
        set_opt(kv, "min_correspondences", self.min_correspondences);
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from these weights instead of a fresh initialization.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Training log CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Directory for one weight file per validation.
    #[arg(long)]
    checkpoints: Option<PathBuf>,
    #[arg(long)]
    gamma0: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    rate_scale: Option<f64>,
    #[arg(long)]
    validate_every: Option<usize>,
    #[arg(long)]
    chain_iterations: Option<usize>,
    #[arg(long)]
    chain_burn_in: Option<usize>,
    #[arg(long)]
    sigma_t: Option<f64>,
    #[arg(long)]
    sigma_r: Option<f64>,
    #[command(flatten)]
    infer: InferFlags,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    infer: InferFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct ChainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    scene: String,
    #[arg(long)]
    dump: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn set_opt<T: std::fmt::Display>(kv: &mut KeyValues, key: &str, v: Option<T>) {
    if let Some(v) = v {
        kv.set(key, v);
    }
}

fn load_config(path: Option<&Path>) -> Result<KeyValues, CliError> {
    match path {
        Some(p) => KeyValues::load(p).map_err(config_err),
        None => Ok(KeyValues::new()),
    }
}

fn load_model(path: &Path) -> Result<EnergyNetParams, CliError> {
    EnergyNetParams::load(path).map_err(|e| CliError::Model(e.to_string()))
}

fn load_scenes(dir: &Path) -> Result<Vec<SceneRecord>, CliError> {
    let scenes = load_dataset(dir).map_err(data_err)?;
    if scenes.is_empty() {
        return Err(CliError::Data(format!("{} holds no scenes", dir.display())));
    }
    Ok(scenes)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| data_err(format!("{}: {e}", path.display())))
}

fn synth(args: SynthArgs) -> Result<(), CliError> {
    let mut kv = load_config(args.config.as_deref())?;
    set_opt(&mut kv, "scenes", args.scenes);
    set_opt(&mut kv, "meshes", args.meshes);
    set_opt(&mut kv, "noise_preset", args.noise_preset);
    set_opt(&mut kv, "seed", args.seed);
    set_opt(&mut kv, "split", args.split);
    let mut known = vec![
        "scenes",
        "meshes",
        "seed",
        "split",
        "occlusion_min",
        "occlusion_max",
        "distance_min",
        "distance_max",
    ];
    known.extend(config::NOISE_KEYS);
    kv.check_known(&known).map_err(config_err)?;

    let mut cfg = BenchmarkConfig {
        noise: config::noise_params(&kv, NoiseParams::default()).map_err(config_err)?,
        ..Default::default()
    };
    if let Some(list) = kv.get_str("meshes") {
        cfg.meshes = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|name| -> Result<(String, Arc<TriangleMesh>), CliError> {
                if let Some(m) = builtin_mesh(name) {
                    return Ok((name.to_string(), Arc::new(m)));
                }
                let path = Path::new(name);
                let mesh = TriangleMesh::load_obj(path, 1.0).map_err(data_err)?;
                let stem = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "mesh".into());
                Ok((stem, Arc::new(mesh)))
            })
            .collect::<Result<_, _>>()?;
        if cfg.meshes.is_empty() {
            return Err(CliError::Config("empty mesh list".into()));
        }
    }
    let get = |k: &str, d: f64| kv.get(k).map(|v| v.unwrap_or(d)).map_err(config_err);
    cfg.occlusion = (get("occlusion_min", cfg.occlusion.0)?, get("occlusion_max", cfg.occlusion.1)?);
    cfg.distance = (get("distance_min", cfg.distance.0)?, get("distance_max", cfg.distance.1)?);
    if !(0.0 <= cfg.occlusion.0 && cfg.occlusion.0 <= cfg.occlusion.1 && cfg.occlusion.1 < 1.0) {
        return Err(CliError::Config("occlusion range must satisfy 0 <= min <= max < 1".into()));
    }
    if !(0.0 < cfg.distance.0 && cfg.distance.0 <= cfg.distance.1) {
        return Err(CliError::Config("distance range must be positive and ordered".into()));
    }
    let count: usize = kv.get("scenes").map_err(config_err)?.unwrap_or(20);
    let seed: u64 = kv.get("seed").map_err(config_err)?.unwrap_or(0);
    let split = kv.get_str("split").unwrap_or("scene").to_string();
    if split.is_empty() || split.contains(['/', '\\']) {
        return Err(CliError::Config(format!("invalid split name {split:?}")));
    }
    let scenes = generate_split(&cfg, seed, &split, count);
    save_dataset(&args.out, &scenes).map_err(data_err)?;
    eprintln!("wrote {count} scenes to {}", args.out.display());
    Ok(())
}

fn train(args: TrainArgs) -> Result<(), CliError> {
    let mut kv = load_config(args.config.as_deref())?;
    set_opt(&mut kv, "max_steps", args.max_steps);
    set_opt(&mut kv, "seed", args.seed);
    set_opt(&mut kv, "gamma0", args.gamma0);
    set_opt(&mut kv, "lambda", args.lambda);
    set_opt(&mut kv, "rate_scale", args.rate_scale);
    set_opt(&mut kv, "validate_every", args.validate_every);
    set_opt(&mut kv, "chain_iterations", args.chain_iterations);
    set_opt(&mut kv, "chain_burn_in", args.chain_burn_in);
    set_opt(&mut kv, "sigma_t", args.sigma_t);
    set_opt(&mut kv, "sigma_r", args.sigma_r);
    args.infer.overlay(&mut kv);
    let known: Vec<&str> = config::TRAIN_KEYS.iter().chain(&config::INFER_KEYS).copied().collect();
    kv.check_known(&known).map_err(config_err)?;
    let cfg = config::train_config(&kv, TrainConfig::default()).map_err(config_err)?;

    let train_set: Vec<_> = load_scenes(&args.data)?.iter().map(SceneRecord::training_sample).collect();
    let val_set: Vec<_> = load_scenes(&args.val)?.iter().map(SceneRecord::training_sample).collect();
    let initial = match &args.init {
        Some(p) => load_model(p)?,
        None => init_params(&mut substream(cfg.seed, "init", 0)),
    };
    if let Some(dir) = &args.checkpoints {
        std::fs::create_dir_all(dir).map_err(|e| data_err(format!("{}: {e}", dir.display())))?;
    }
    let mut checkpoint_error = None;
    let outcome = sgd_train(initial, &train_set, &val_set, &cfg, |step, score, params| {
        eprintln!("step {step}: validation {}/{} correct", score.correct, score.total);
        if let Some(dir) = &args.checkpoints {
            let path = dir.join(format!("step{step:05}_score{:.2}.enet", score.percent()));
            if let Err(e) = params.save(&path) {
                checkpoint_error.get_or_insert(e);
            }
        }
    });
    if let Some(e) = checkpoint_error {
        return Err(CliError::Model(e.to_string()));
    }
    let skipped = outcome
        .log
        .iter()
        .filter(|r| matches!(r, LogRecord::Step { outcome: Err(_), .. }))
        .count();
    outcome
        .best
        .save(&args.out)
        .map_err(|e| CliError::Model(e.to_string()))?;
    if let Some(path) = &args.log {
        let mut w = create(path)?;
        write_log_csv(&outcome.log, &mut w)
            .and_then(|_| w.flush())
            .map_err(data_err)?;
    }
    eprintln!(
        "best validation {:.2}% at step {} ({} skipped steps); wrote {}",
        outcome.best_score.percent(),
        outcome.best_step,
        skipped,
        args.out.display()
    );
    Ok(())
}

fn infer_config(kv: &KeyValues) -> Result<InferConfig, CliError> {
    config::infer_config(kv, InferConfig::default()).map_err(config_err)
}

fn infer(args: InferArgs) -> Result<(), CliError> {
    let mut kv = load_config(args.config.as_deref())?;
    set_opt(&mut kv, "seed", args.seed);
    args.infer.overlay(&mut kv);
    let mut known = config::INFER_KEYS.to_vec();
    known.push("seed");
    kv.check_known(&known).map_err(config_err)?;
    let cfg = infer_config(&kv)?;
    let seed: u64 = kv.get("seed").map_err(config_err)?.unwrap_or(0);

    let net = EnergyNet::new(load_model(&args.model)?);
    let scenes = load_scenes(&args.data)?;
    let rows = run_inference(&scenes, &net, &cfg, seed);
    let mut w = create(&args.out)?;
    write_results_csv(&rows, &mut w)
        .and_then(|_| w.flush())
        .map_err(data_err)?;
    let correct = rows.iter().filter(|r| r.correct).count();
    eprintln!("{correct}/{} correct; wrote {}", rows.len(), args.out.display());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), CliError> {
    let file = File::open(&args.results).map_err(|e| data_err(format!("{}: {e}", args.results.display())))?;
    let rows = read_results_csv(BufReader::new(file))
        .map_err(|e| data_err(format!("{}: {e}", args.results.display())))?;
    let report = Report::from_results(&rows);
    let mut w = create(&args.report)?;
    report.write_csv(&mut w).and_then(|_| w.flush()).map_err(data_err)?;
    eprintln!(
        "{}/{} correct ({:.2}%)",
        report.correct,
        report.total,
        100.0 * report.accuracy()
    );
    for b in &report.bins {
        eprintln!(
            "  occlusion [{:.1}, {:.1}): {}/{}",
            b.lo, b.hi, b.correct, b.total
        );
    }
    Ok(())
}

fn chain(args: ChainArgs) -> Result<(), CliError> {
    let mut kv = load_config(args.config.as_deref())?;
    set_opt(&mut kv, "seed", args.seed);
    let known: Vec<&str> = config::TRAIN_KEYS.iter().chain(&config::INFER_KEYS).copied().collect();
    kv.check_known(&known).map_err(config_err)?;
    let cfg = config::train_config(&kv, TrainConfig::default()).map_err(config_err)?;

    let net = EnergyNet::new(load_model(&args.model)?);
    let scenes = load_scenes(&args.data)?;
    let scene = scenes
        .iter()
        .find(|s| s.id == args.scene)
        .ok_or_else(|| CliError::Data(format!("no scene {} in {}", args.scene, args.data.display())))?;
    let posterior = GibbsPosterior::new(&scene.observation, &scene.mesh, &net);
    let mut rng = substream(cfg.seed, "chain", 0);
    let init = estimate(&scene.observation, &scene.mesh, &posterior, &cfg.infer, &mut rng).map_err(data_err)?;
    let proposal = cfg
        .proposal
        .unwrap_or_else(|| ProposalConfig::for_diameter(scene.mesh.diameter()));
    let chain = run_chain(&posterior, init.pose, &proposal, &cfg.chain, &mut rng);
    let mut w = create(&args.dump)?;
    write_chain_csv(&chain, &mut w)
        .and_then(|_| w.flush())
        .map_err(data_err)?;
    eprintln!(
        "{} iterations, acceptance {:.3}; wrote {}",
        chain.steps.len(),
        chain.acceptance_rate(),
        args.dump.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::Chain(a) => chain(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
