//! Command-line front end.
//!
//! Configuration is resolved as built-in defaults, overlaid by the JSON file
//! given with `--config`, overlaid by flags. The resolved configuration is
//! printed and written to `resolved_config.json` in every output directory.
//! The global seed drives every random stream: training uses it directly and
//! CMA-ES uses `seed, seed + 1, ...`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cmaes::{history_csv, optimize, CmaesConfig};
use crate::dataset::{generate, Dataset, DatasetMeta, SplitSpec, DEFAULT_SPLIT};
use crate::diffusion::{train, TrainOptions, TrainSettings, TrainedModel};
use crate::error::Error;
use crate::evaluation::{
    checkpoint_csv, checkpoint_eval, checkpoints_in, compare, comparison_csv, ood_eval, score_designs, target_hash,
    TargetSpec,
};
use crate::geometry::{GeometryFile, GridSpec};
use crate::scattering::{AngleGrid, Illumination};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "metagen",
    version,
    about = "Inverse design of sphere metasurfaces with a conditional diffusion model"
)]
pub struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: available parallelism). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a (geometry, DSCS) dataset.
    GenDataset(GenDatasetArgs),
    /// Train the conditional denoiser.
    Train(TrainArgs),
    /// Sample designs for a target.
    Sample(SampleArgs),
    /// Score checkpoints over training or run the out-of-distribution test.
    Evaluate(EvaluateArgs),
    /// Inverse design with CMA-ES.
    Cmaes(CmaesArgs),
    /// Diffusion vs CMA-ES on one target.
    Compare(CompareArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenDatasetArgs {
    #[arg(long)]
    pub count: Option<usize>,
    /// Comma-separated partition fractions, training first.
    #[arg(long, value_delimiter = ',')]
    pub split: Option<Vec<f64>>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Path to dataset.jsonl.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub count_limit: Option<usize>,
    #[arg(long)]
    pub checkpoint_interval: Option<u64>,
    #[arg(long)]
    pub ema_decay: Option<f64>,
    #[arg(long)]
    pub timesteps: Option<usize>,
    /// Continue from the newest checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Stop once this step is reached, without a final checkpoint.
    #[arg(long, hide = true)]
    pub stop_after: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Target file: `{"dscs": [...]}` or a geometry file.
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Every checkpoint in a directory → mpe_over_training.csv.
    Training,
    /// One checkpoint, many samples → ood_report.json.
    Ood,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long, value_enum, default_value = "ood")]
    pub mode: EvalMode,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Directory of ckpt_<step>.bin files (training mode).
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct CmaesArgs {
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub population: Option<usize>,
    #[arg(long)]
    pub sigma0: Option<f64>,
    /// Number of independent seeds.
    #[arg(long)]
    pub seeds: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct CompareArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub population: Option<usize>,
    #[arg(long)]
    pub seeds: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub count: usize,
    pub split: Vec<f64>,
    pub path: Option<PathBuf>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            count: 11_000,
            split: DEFAULT_SPLIT.to_vec(),
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSection {
    /// Samples per target for `sample`, `evaluate --mode ood` and `compare`.
    pub n: usize,
    /// Samples per checkpoint for `evaluate --mode training`.
    pub checkpoint_n: usize,
    pub checkpoint: Option<PathBuf>,
    pub checkpoints: Option<PathBuf>,
    pub target: Option<PathBuf>,
}

impl Default for SamplingSection {
    fn default() -> Self {
        Self {
            n: 40,
            checkpoint_n: 10,
            checkpoint: None,
            checkpoints: None,
            target: None,
        }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub grid: GridSpec,
    pub angles: AngleGrid,
    pub illumination: Illumination,
    pub dataset: DatasetSection,
    pub train: TrainSettings,
    pub sampling: SamplingSection,
    pub cmaes: CmaesConfig,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl<E: Into<Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        Self::Runtime(e.into())
    }
}

fn usage(m: impl Into<String>) -> CliError {
    CliError::Usage(m.into())
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn set(root: &mut Value, path: &[&str], value: Value) {
    let mut cur = root;
    for key in &path[..path.len() - 1] {
        cur = cur
            .as_object_mut()
            .expect("config sections are objects")
            .entry(key.to_string())
            .or_insert_with(|| json!({}));
    }
    cur.as_object_mut()
        .expect("config sections are objects")
        .insert(path[path.len() - 1].to_string(), value);
}

fn flag_overrides(cli: &Cli) -> Vec<(Vec<&'static str>, Value)> {
    let mut o: Vec<(Vec<&'static str>, Value)> = vec![];
    let mut put = |path: &[&'static str], v: Option<Value>| {
        if let Some(v) = v {
            o.push((path.to_vec(), v));
        }
    };
    put(&["seed"], cli.seed.map(Value::from));
    put(&["threads"], cli.threads.map(Value::from));
    put(&["out"], cli.out.as_ref().map(|p| json!(p)));
    match &cli.command {
        Command::GenDataset(a) => {
            put(&["dataset", "count"], a.count.map(Value::from));
            put(&["dataset", "split"], a.split.as_ref().map(|s| json!(s)));
        }
        Command::Train(a) => {
            put(&["dataset", "path"], a.dataset.as_ref().map(|p| json!(p)));
            put(&["train", "epochs"], a.epochs.map(Value::from));
            put(&["train", "lr"], a.lr.map(Value::from));
            put(&["train", "batch_size"], a.batch_size.map(Value::from));
            put(&["train", "count_limit"], a.count_limit.map(Value::from));
            put(
                &["train", "checkpoint_interval"],
                a.checkpoint_interval.map(Value::from),
            );
            put(&["train", "ema_decay"], a.ema_decay.map(Value::from));
            put(&["train", "timesteps"], a.timesteps.map(Value::from));
        }
        Command::Sample(a) => {
            put(&["sampling", "checkpoint"], a.checkpoint.as_ref().map(|p| json!(p)));
            put(&["sampling", "target"], a.target.as_ref().map(|p| json!(p)));
            put(&["sampling", "n"], a.n.map(Value::from));
        }
        Command::Evaluate(a) => {
            put(&["sampling", "checkpoint"], a.checkpoint.as_ref().map(|p| json!(p)));
            put(&["sampling", "checkpoints"], a.checkpoints.as_ref().map(|p| json!(p)));
            put(&["sampling", "target"], a.target.as_ref().map(|p| json!(p)));
            let key = match a.mode {
                EvalMode::Training => "checkpoint_n",
                EvalMode::Ood => "n",
            };
            if let Some(n) = a.n {
                o.push((vec!["sampling", key], Value::from(n)));
            }
        }
        Command::Cmaes(a) => {
            put(&["sampling", "target"], a.target.as_ref().map(|p| json!(p)));
            put(&["cmaes", "iterations"], a.iterations.map(Value::from));
            put(&["cmaes", "population"], a.population.map(Value::from));
            put(&["cmaes", "sigma0"], a.sigma0.map(Value::from));
            put(&["cmaes", "seeds"], a.seeds.map(|n| json!(vec![0u64; n])));
        }
        Command::Compare(a) => {
            put(&["sampling", "checkpoint"], a.checkpoint.as_ref().map(|p| json!(p)));
            put(&["sampling", "target"], a.target.as_ref().map(|p| json!(p)));
            put(&["sampling", "n"], a.n.map(Value::from));
            put(&["cmaes", "iterations"], a.iterations.map(Value::from));
            put(&["cmaes", "population"], a.population.map(Value::from));
            put(&["cmaes", "seeds"], a.seeds.map(|n| json!(vec![0u64; n])));
        }
    }
    o
}

fn config_object(text: &str) -> Result<Value, String> {
    let file: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    if !file.is_object() {
        return Err("expected a JSON object".into());
    }
    Ok(file)
}

impl RunConfig {
    /// Defaults overlaid with the contents of a config file.
    pub fn parse(text: &str) -> Result<Self, Error> {
        let mut value = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
        merge(&mut value, config_object(text).map_err(Error::Config)?);
        serde_json::from_value(value).map_err(|e| Error::Config(format!("invalid configuration: {e}")))
    }
}

/// Defaults, then the config file, then flags.
pub fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut value = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    if let Some(path) = &cli.config {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let file = config_object(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        merge(&mut value, file);
    }
    for (path, v) in flag_overrides(cli) {
        set(&mut value, &path, v);
    }
    let mut cfg: RunConfig =
        serde_json::from_value(value).map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
    cfg.train.seed = cfg.seed;
    let n_seeds = cfg.cmaes.seeds.len() as u64;
    cfg.cmaes.seeds = (0..n_seeds).map(|i| cfg.seed.wrapping_add(i)).collect();
    Ok(cfg)
}

fn required<'a>(v: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    v.as_deref().ok_or_else(|| usage(format!("missing {what}")))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn say(msg: impl AsRef<str>) {
    println!("{}", msg.as_ref());
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve(cli)?;
    let out = required(&cfg.out, "output directory (--out)")?.to_path_buf();
    if let Some(n) = cfg.threads {
        if n == 0 {
            return Err(usage("--threads must be positive"));
        }
        // a second build (e.g. repeated in-process runs) keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let resolved = json!({ "command": cli.command, "config": cfg });
    say(serde_json::to_string_pretty(&resolved).expect("config serializes"));
    match &cli.command {
        Command::Train(a) => {
            required(&cfg.dataset.path, "dataset path (--dataset)")?;
            fs::create_dir_all(&out)?;
            write_json(&out.join("resolved_config.json"), &resolved)?;
            cmd_train(&cfg, &out, a)
        }
        cmd => {
            match cmd {
                Command::Sample(_) | Command::Compare(_) => {
                    required(&cfg.sampling.checkpoint, "checkpoint (--checkpoint)")?;
                    required(&cfg.sampling.target, "target (--target)")?;
                }
                Command::Cmaes(_) => {
                    required(&cfg.sampling.target, "target (--target)")?;
                }
                Command::Evaluate(a) => {
                    required(&cfg.sampling.target, "target (--target)")?;
                    match a.mode {
                        EvalMode::Training => {
                            required(&cfg.sampling.checkpoints, "checkpoint directory (--checkpoints)")?
                        }
                        EvalMode::Ood => required(&cfg.sampling.checkpoint, "checkpoint (--checkpoint)")?,
                    };
                }
                _ => {}
            }
            fs::create_dir_all(&out)?;
            write_json(&out.join("resolved_config.json"), &resolved)?;
            match cmd {
                Command::GenDataset(_) => cmd_gen_dataset(&cfg, &out),
                Command::Sample(_) => cmd_sample(&cfg, &out),
                Command::Evaluate(a) => cmd_evaluate(&cfg, &out, a.mode),
                Command::Cmaes(_) => cmd_cmaes(&cfg, &out),
                Command::Compare(_) => cmd_compare(&cfg, &out),
                Command::Train(_) => unreachable!("handled above"),
            }
        }
    }
}

fn cmd_gen_dataset(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    cfg.grid.check()?;
    cfg.angles.check()?;
    cfg.illumination.check()?;
    let records = generate(cfg.dataset.count, cfg.seed, &cfg.grid, &cfg.angles, &cfg.illumination)?;
    let split = SplitSpec {
        fractions: cfg.dataset.split.clone(),
        seed: cfg.seed,
    };
    let meta = DatasetMeta::build(
        &records,
        cfg.seed,
        cfg.grid,
        cfg.angles.clone(),
        cfg.illumination.clone(),
        split,
    )?;
    let path = Dataset { meta, records }.save(out)?;
    say(format!("wrote {} records to {}", cfg.dataset.count, path.display()));
    Ok(())
}

fn cmd_train(cfg: &RunConfig, out: &Path, args: &TrainArgs) -> Result<(), CliError> {
    let path = required(&cfg.dataset.path, "dataset path (--dataset)")?;
    let dataset = Dataset::load(path)?;
    let options = TrainOptions {
        resume: args.resume,
        stop_after: args.stop_after,
    };
    let summary = train(&dataset, &cfg.train, out, &options)?;
    write_json(
        &out.join("train_summary.json"),
        &json!({
            "start_step": summary.start_step,
            "final_step": summary.final_step,
            "total_steps": summary.total_steps,
            "last_loss": summary.last_loss,
            "smoothed_loss": summary.smoothed_loss,
            "wall_clock_s": summary.wall_clock_s,
        }),
    )?;
    say(format!(
        "trained steps {}..{} of {}; {} checkpoints written",
        summary.start_step,
        summary.final_step,
        summary.total_steps,
        summary.checkpoints.len()
    ));
    Ok(())
}

fn load_target(cfg: &RunConfig) -> Result<TargetSpec, CliError> {
    Ok(TargetSpec::load(required(&cfg.sampling.target, "target (--target)")?)?)
}

fn cmd_sample(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let model = TrainedModel::load(required(&cfg.sampling.checkpoint, "checkpoint (--checkpoint)")?)?;
    let target = load_target(cfg)?;
    let profile = target.resolve(&model.meta.grid, &model.meta.angles, &model.meta.illumination)?;
    let started = std::time::Instant::now();
    let designs = model.sample(&profile.values, cfg.sampling.n, cfg.seed)?;
    let wall = started.elapsed().as_secs_f64();
    let report = score_designs(&designs, &profile, &model.meta.illumination)?;
    let geometries: Vec<GeometryFile> = designs.iter().map(GeometryFile::from_vector).collect();
    write_json(
        &out.join("samples.json"),
        &json!({
            "checkpoint_step": model.meta.step,
            "seed": cfg.seed,
            "target": profile,
            "target_hash": target_hash(&profile),
            "geometries": geometries,
            "report": report,
        }),
    )?;
    write_json(&out.join("timing.json"), &json!({ "sampling_wall_clock_s": wall }))?;
    say(format!(
        "{} samples: best MPE {:.3}%, median {:.3}%",
        designs.len(),
        report.best_mpe(),
        report.summary.median
    ));
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, out: &Path, mode: EvalMode) -> Result<(), CliError> {
    let target = load_target(cfg)?;
    match mode {
        EvalMode::Training => {
            let dir = required(&cfg.sampling.checkpoints, "checkpoint directory (--checkpoints)")?;
            let rows = checkpoint_eval(&checkpoints_in(dir)?, &target, cfg.sampling.checkpoint_n, cfg.seed)?;
            fs::write(out.join("mpe_over_training.csv"), checkpoint_csv(&rows))?;
            write_json(&out.join("mpe_over_training.json"), &rows)?;
            say(format!("evaluated {} checkpoints", rows.len()));
        }
        EvalMode::Ood => {
            let model = TrainedModel::load(required(&cfg.sampling.checkpoint, "checkpoint (--checkpoint)")?)?;
            let report = ood_eval(&model, &target, cfg.sampling.n, cfg.seed)?;
            write_json(&out.join("ood_report.json"), &report)?;
            say(format!(
                "best-of-{} MPE {:.3}%, median {:.3}%",
                cfg.sampling.n,
                report.report.best_mpe(),
                report.report.summary.median
            ));
        }
    }
    Ok(())
}

fn cmd_cmaes(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    cfg.grid.check()?;
    cfg.angles.check()?;
    cfg.illumination.check()?;
    let target = load_target(cfg)?.resolve(&cfg.grid, &cfg.angles, &cfg.illumination)?;
    let results = optimize(&target, &cfg.grid, &cfg.illumination, &cfg.cmaes)?;
    fs::write(out.join("cmaes_history.csv"), history_csv(&results))?;
    let summary: Vec<Value> = results
        .iter()
        .map(|r| {
            json!({
                "seed": r.seed,
                "best_mpe": r.best_value,
                "best_geometry": GeometryFile { grid: cfg.grid, vector: r.best_vector.clone() },
                "evals": r.evals,
            })
        })
        .collect();
    write_json(
        &out.join("cmaes_results.json"),
        &json!({ "target": target, "target_hash": target_hash(&target), "runs": summary }),
    )?;
    for r in &results {
        say(format!(
            "seed {}: best MPE {:.3}% after {} evaluations",
            r.seed, r.best_value, r.evals
        ));
    }
    Ok(())
}

fn cmd_compare(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let ckpt = required(&cfg.sampling.checkpoint, "checkpoint (--checkpoint)")?;
    let model = TrainedModel::load(ckpt)?;
    let target = load_target(cfg)?;
    let train_s = ckpt
        .parent()
        .map(|d| d.join("train_summary.json"))
        .and_then(|p| fs::read_to_string(p).ok())
        .and_then(|t| serde_json::from_str::<Value>(&t).ok())
        .and_then(|v| v.get("wall_clock_s").and_then(Value::as_f64));
    let c = compare(&model, &target, cfg.sampling.n, cfg.seed, &cfg.cmaes, train_s)?;
    fs::write(out.join("comparison.csv"), comparison_csv(&c))?;
    write_json(&out.join("comparison.json"), &c)?;
    say(format!(
        "diffusion best {:.3}% with {} solver calls; CMA-ES best {:.3}% with {} solver calls",
        c.diffusion.best_mpe, c.diffusion.solver_calls, c.cmaes.best_mpe, c.cmaes.solver_calls
    ));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("metagen").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn defaults_match_reference_tables() {
        let cfg = resolve(&parse(&["train"])).unwrap();
        assert_eq!(cfg.train.lr, 4e-6);
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.train.epochs, 116);
        assert_eq!(cfg.train.timesteps, 1000);
        assert_eq!(cfg.train.ema_decay, 0.995);
        assert_eq!(cfg.cmaes, CmaesConfig::default());
        assert_eq!(cfg.dataset.count, 11_000);
        assert_eq!(cfg.sampling.n, 40);
    }

    #[test]
    fn precedence_flags_over_file_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(
            &path,
            r#"{"seed": 5, "train": {"epochs": 3, "lr": 0.01}, "cmaes": {"iterations": 7}}"#,
        )
        .unwrap();
        let p = path.to_str().unwrap();
        let cfg = resolve(&parse(&["--config", p, "train", "--epochs", "9"])).unwrap();
        assert_eq!(cfg.train.epochs, 9);
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.train.seed, 5);
        assert_eq!(cfg.cmaes.iterations, 7);
        assert_eq!(cfg.cmaes.seeds, vec![5, 6, 7, 8]);
        let cfg = resolve(&parse(&["--config", p, "--seed", "1", "cmaes", "--seeds", "2"])).unwrap();
        assert_eq!(cfg.cmaes.seeds, vec![1, 2]);
    }

    #[test]
    fn unknown_config_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"train": {"epoch": 3}}"#).unwrap();
        assert!(resolve(&parse(&["--config", path.to_str().unwrap(), "train"])).is_err());
        fs::write(&path, "[1]").unwrap();
        assert!(resolve(&parse(&["--config", path.to_str().unwrap(), "train"])).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(["metagen", "gen-dataset", "--count", "2"]), EXIT_USAGE);
        assert_eq!(run(["metagen", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["metagen", "gen-dataset", "--count", "abc"]), EXIT_USAGE);
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(run(["metagen", "--out", out, "train"]), EXIT_USAGE);
        assert_eq!(
            run(["metagen", "--out", out, "train", "--dataset", "/nonexistent/d.jsonl"]),
            EXIT_FAILURE
        );
        assert_eq!(
            run(["metagen", "--out", out, "gen-dataset", "--count", "0"]),
            EXIT_FAILURE
        );
    }

    #[test]
    fn gen_dataset_smoke() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("ds");
        let code = run([
            "metagen",
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "3",
            "gen-dataset",
            "--count",
            "10",
        ]);
        assert_eq!(code, EXIT_OK);
        let text = fs::read_to_string(out.join("dataset.jsonl")).unwrap();
        assert_eq!(text.lines().count(), 10);
        assert!(out.join("dataset.meta.json").exists());
        let resolved: Value =
            serde_json::from_str(&fs::read_to_string(out.join("resolved_config.json")).unwrap()).unwrap();
        assert_eq!(resolved["config"]["seed"], 3);
    }
}
