use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use pvcast::carbon::{
    carbon_report, AvertedSpec, DeploymentSpec, DisplacementPreset, PowerPreset,
};
use pvcast::data::{
    generate_synthetic, horizon_steps_for_minutes, read_dataset, split, write_dataset, Dataset,
    Sample, SplitSpec, SynthConfig, CADENCE_MINUTES, GRID, HORIZON_STEPS,
};
use pvcast::eval::{
    activation_maps, evaluate_suite, predict_samples, table1_text, write_activation_maps,
    write_error_reports, write_table1,
};
use pvcast::models::{
    build, load_checkpoint, save_checkpoint, Batch, Family, ForecastModel, ModelConfig,
};
use pvcast::tensor::Tensor;
use pvcast::train::{
    record_timings, single_period_sets, train, Timings, TrainOptions, TrainResult,
    CONV3D_REFERENCE, CONVLSTM_REFERENCE,
};
use pvcast::tune::{append_trial_log, tune_model, Strategy, TuneOptions};
use pvcast::{Error, Result};

/// Environment variable naming the default output root.
const OUT_ROOT_VAR: &str = "PVCAST_OUT";
const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Parser, Debug)]
#[command(name = "pvcast", version, about = "Solar PV nowcasting pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "lowercase")]
enum Command {
    /// Write a seeded synthetic dataset.
    Generate(GenerateArgs),
    /// Train (optionally tune) one model and save its checkpoint.
    Train(TrainArgs),
    /// Score checkpoints against persistence on the test days.
    Evaluate(EvaluateArgs),
    /// Export per-layer activation maps of a single_period checkpoint.
    Activations(ActivationArgs),
    /// Emissions generated and averted.
    Carbon(CarbonArgs),
    /// Re-run the command recorded in a run manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct Common {
    /// Output directory [default: $PVCAST_OUT/<subcommand> or ./pvcast-out/<subcommand>]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    #[serde(default)]
    force: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct GenerateArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    months: u32,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// pv_cnn, pv_lstm, conv3d, convlstm or single_period.
    #[arg(long)]
    family: Option<String>,
    /// Forecast horizon in minutes: 60, 120, 180 or 240.
    #[arg(long)]
    horizon: Option<u32>,
    /// JSON model configuration; its family and horizon win over the flags.
    #[arg(long, conflicts_with = "tune")]
    config: Option<PathBuf>,
    /// Search the hyperparameter grid instead of training one config.
    #[arg(long)]
    #[serde(default)]
    tune: bool,
    #[arg(long, default_value_t = 24)]
    budget: usize,
    #[arg(long, default_value_t = 8)]
    init_random: usize,
    /// bayesian or random.
    #[arg(long, default_value = "bayesian")]
    strategy: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Defaults to 200, or 10 for single_period.
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    /// Training frames for single_period.
    #[arg(long, default_value_t = 1000)]
    frames: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, num_args = 0..)]
    #[serde(default)]
    checkpoints: Vec<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct ActivationArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset supplying the frame.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    frame_index: usize,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct CarbonArgs {
    /// JSON timings files written by `train`; the published reference
    /// timings are used when none are given.
    #[arg(long, num_args = 0..)]
    #[serde(default)]
    timings: Vec<PathBuf>,
    /// t4-nameplate or paper-implied.
    #[arg(long, default_value = "paper-implied")]
    power_preset: String,
    /// paper-arithmetic or paper-prose.
    #[arg(long, default_value = "paper-arithmetic")]
    displacement_preset: String,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Write somewhere other than the recorded output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(default)]
    force: bool,
}

/// Written to the output directory before any long computation.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunManifest {
    tool_version: String,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    output: PathBuf,
    /// Fully resolved command, defaults included.
    command: Command,
}

/// Timings of one trained model, as written by `train`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct NamedTimings {
    model: String,
    train_seconds: f64,
    inference_seconds: f64,
}

fn default_out(sub: &str) -> PathBuf {
    std::env::var_os(OUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("pvcast-out"))
        .join(sub)
}

fn prepare_out(common: &mut Common, sub: &str) -> Result<PathBuf> {
    let out = common.out.clone().unwrap_or_else(|| default_out(sub));
    common.out = Some(out.clone());
    if let Ok(mut entries) = std::fs::read_dir(&out) {
        if entries.next().is_some() && !common.force {
            return Err(Error::Usage(format!(
                "output directory {} is not empty; pass --force to write into it",
                out.display()
            )));
        }
    }
    std::fs::create_dir_all(&out).map_err(|e| Error::Io {
        path: out.clone(),
        source: e,
    })?;
    Ok(out)
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Usage(format!("serialize: {e}")))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        blob: path.display().to_string(),
        offset: e.column() as u64,
        msg: e.to_string(),
    })
}

fn write_manifest(out: &Path, seed: Option<u64>, inputs: Vec<PathBuf>, command: &Command) -> Result<()> {
    let m = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        inputs,
        output: out.to_path_buf(),
        command: command.clone(),
    };
    write_file(&out.join(RUN_MANIFEST), to_json(&m)?)
}

fn generate(mut a: GenerateArgs) -> Result<()> {
    let out = prepare_out(&mut a.common, "generate")?;
    write_manifest(&out, Some(a.seed), vec![], &Command::Generate(a.clone()))?;
    let ds = generate_synthetic(&SynthConfig::new(a.seed, a.months))?;
    write_dataset(&out, &ds)?;
    println!(
        "wrote {} frames ({} months, seed {}) to {}",
        ds.frames.len(),
        a.months,
        a.seed,
        out.display()
    );
    Ok(())
}

fn history_csv(r: &TrainResult) -> String {
    let mut s = String::from("epoch,train_mse,val_mse\n");
    for h in &r.history {
        s.push_str(&format!("{},{},{}\n", h.epoch, h.train_mse, h.val_mse));
    }
    s
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    config: &'a ModelConfig,
    best_val_mse: f64,
    best_epoch: usize,
    epochs_run: usize,
    test_mse: f64,
}

fn resolve_family(a: &TrainArgs) -> Result<ModelConfig> {
    if let Some(path) = &a.config {
        let cfg: ModelConfig = read_json(path)?;
        if let Some(f) = &a.family {
            if f.parse::<Family>()? != cfg.family {
                return Err(Error::Usage(format!("--family {f} disagrees with {}", path.display())));
            }
        }
        if let Some(h) = a.horizon {
            if horizon_steps_for_minutes(h)? != cfg.horizon_steps {
                return Err(Error::Usage(format!("--horizon {h} disagrees with {}", path.display())));
            }
        }
        cfg.validate()?;
        return Ok(cfg);
    }
    let family: Family = a
        .family
        .as_deref()
        .ok_or_else(|| Error::Usage("--family is required without --config".into()))?
        .parse()?;
    let steps = match (family, a.horizon) {
        (Family::SinglePeriod, None) => 1,
        (Family::SinglePeriod, Some(_)) => {
            return Err(Error::Usage("single_period predicts the current reading; drop --horizon".into()))
        }
        (_, Some(h)) => horizon_steps_for_minutes(h)?,
        (_, None) => return Err(Error::Usage("--horizon is required".into())),
    };
    let mut cfg = ModelConfig::new(family, steps);
    cfg.seed = a.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn run_train(mut a: TrainArgs) -> Result<()> {
    let base = resolve_family(&a)?;
    let strategy: Strategy = a.strategy.parse()?;
    if a.tune && base.family == Family::SinglePeriod {
        return Err(Error::Usage("single_period has no tuning grid".into()));
    }
    let max_epochs = a
        .max_epochs
        .unwrap_or(if base.family == Family::SinglePeriod { 10 } else { 200 });
    a.max_epochs = Some(max_epochs);
    let out = prepare_out(&mut a.common, "train")?;
    // fail on a bad dataset path before recording anything long-running
    let ds = read_dataset(&a.data)?;
    write_manifest(&out, Some(a.seed), vec![a.data.clone()], &Command::Train(a.clone()))?;
    let opts = TrainOptions {
        max_epochs,
        patience: a.patience,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    let spec = SplitSpec::default();
    let (result, test) = if base.family == Family::SinglePeriod {
        let (tr, va, te) = single_period_sets(&ds, &spec, a.frames, base.frame_pool, a.seed)?;
        (train(build(&base)?, &tr, &va, &opts)?, te)
    } else {
        let (tr, va, te) = split(ds.samples(base.horizon_steps)?, &spec);
        if tr.is_empty() || va.is_empty() || te.is_empty() {
            return Err(Error::Usage(format!(
                "dataset {} has an empty split partition at this horizon",
                a.data.display()
            )));
        }
        let result = if a.tune {
            let topts = TuneOptions {
                budget: a.budget,
                init_random: a.init_random.min(a.budget),
                seed: a.seed,
                strategy,
                workers: a.workers,
            };
            let (tuned, result) = tune_model(base.family, base.horizon_steps, &tr, &va, &topts, &opts)?;
            append_trial_log(&out.join("trials.csv"), &tuned.trials)?;
            let failed = tuned.trials.iter().filter(|t| t.note.is_some()).count();
            println!("tuned {} trials ({failed} failed)", tuned.trials.len());
            result
        } else {
            let tr_b = Batch::from_samples(&tr, &base)?;
            let va_b = Batch::from_samples(&va, &base)?;
            train(build(&base)?, &tr_b, &va_b, &opts)?
        };
        (result, Batch::from_samples(&te, &base)?)
    };
    let model = &result.final_model;
    save_checkpoint(model, &out.join("checkpoint"))?;
    write_file(&out.join("history.csv"), history_csv(&result))?;
    let test_mse = pvcast::train::mse(model, &test)?;
    let summary = TrainSummary {
        config: &model.config,
        best_val_mse: result.best_val_mse,
        best_epoch: result.best_epoch,
        epochs_run: result.epochs_run,
        test_mse,
    };
    write_file(&out.join("result.json"), to_json(&summary)?)?;
    let t = record_timings(&result, &test)?;
    let named = NamedTimings {
        model: model.config.family.name().to_string(),
        train_seconds: t.train_seconds,
        inference_seconds: t.inference_seconds,
    };
    write_file(&out.join("timings.json"), to_json(&named)?)?;
    println!(
        "{}: best val mse {:.6} at epoch {} of {}, test mse {:.6}; checkpoint in {}",
        model.config.family,
        result.best_val_mse,
        result.best_epoch,
        result.epochs_run,
        test_mse,
        out.join("checkpoint").display()
    );
    Ok(())
}

fn test_samples(ds: &Dataset, steps: usize) -> Result<Vec<Sample>> {
    let (_, _, test) = split(ds.samples(steps)?, &SplitSpec::default());
    if test.is_empty() {
        return Err(Error::Usage(format!(
            "no test samples at horizon {} min; persistence cannot be computed",
            steps as i64 * CADENCE_MINUTES
        )));
    }
    Ok(test)
}

fn evaluate(mut a: EvaluateArgs) -> Result<()> {
    let out = prepare_out(&mut a.common, "evaluate")?;
    let ds = read_dataset(&a.data)?;
    let models: Vec<ForecastModel> = a
        .checkpoints
        .iter()
        .map(|p| load_checkpoint(p))
        .collect::<Result<_>>()?;
    if let Some(m) = models.iter().find(|m| m.config.family == Family::SinglePeriod) {
        return Err(Error::Usage(format!(
            "{} checkpoints are not forecasters",
            m.config.family
        )));
    }
    let mut inputs = vec![a.data.clone()];
    inputs.extend(a.checkpoints.iter().cloned());
    write_manifest(&out, None, inputs, &Command::Evaluate(a.clone()))?;
    let mut horizons: Vec<usize> = models.iter().map(|m| m.horizon()).collect();
    if horizons.is_empty() {
        horizons = HORIZON_STEPS.to_vec();
    }
    horizons.sort_unstable();
    horizons.dedup();
    let sets: Vec<(usize, Vec<Sample>)> = horizons
        .iter()
        .map(|&l| Ok((l, test_samples(&ds, l)?)))
        .collect::<Result<_>>()?;
    let refs: Vec<&ForecastModel> = models.iter().collect();
    let reports = evaluate_suite(&refs, &sets, a.workers)?;
    write_table1(&out.join("table1.csv"), &reports)?;
    write_file(&out.join("reports.json"), to_json(&reports)?)?;
    let text = table1_text(&reports);
    write_file(&out.join("table1.txt"), &text)?;
    for m in &models {
        let samples = &sets.iter().find(|(l, _)| *l == m.horizon()).expect("set per horizon").1;
        let preds = predict_samples(m, samples, a.workers)?;
        let dir = out.join(format!(
            "{}_{}min",
            m.config.family,
            m.horizon() as i64 * CADENCE_MINUTES
        ));
        write_error_reports(&dir, samples, &preds)?;
    }
    print!("{text}");
    Ok(())
}

fn activations(mut a: ActivationArgs) -> Result<()> {
    let out = prepare_out(&mut a.common, "activations")?;
    let model = load_checkpoint(&a.checkpoint)?;
    let ds = read_dataset(&a.data)?;
    if a.frame_index >= ds.frames.len() {
        return Err(Error::Usage(format!(
            "frame index {} out of range (dataset has {} frames)",
            a.frame_index,
            ds.frames.len()
        )));
    }
    write_manifest(
        &out,
        None,
        vec![a.checkpoint.clone(), a.data.clone()],
        &Command::Activations(a.clone()),
    )?;
    let frame = Tensor::new(vec![GRID, GRID], ds.frames.frame(a.frame_index).to_vec())?;
    let grids = activation_maps(&model, &frame)?;
    write_activation_maps(&out, &grids)?;
    for g in &grids {
        println!(
            "layer {}: {} maps of {}x{} -> activations_layer{}.pgm",
            g.layer, g.maps, g.map_height, g.map_width, g.layer
        );
    }
    Ok(())
}

fn carbon(mut a: CarbonArgs) -> Result<()> {
    let power: PowerPreset = a.power_preset.parse()?;
    let displacement: DisplacementPreset = a.displacement_preset.parse()?;
    let out = prepare_out(&mut a.common, "carbon")?;
    let timings: Vec<(String, Timings)> = if a.timings.is_empty() {
        vec![
            ("conv3d".into(), CONV3D_REFERENCE),
            ("convlstm".into(), CONVLSTM_REFERENCE),
        ]
    } else {
        a.timings
            .iter()
            .map(|p| {
                let t: NamedTimings = read_json(p)?;
                Ok((
                    t.model,
                    Timings {
                        train_seconds: t.train_seconds,
                        inference_seconds: t.inference_seconds,
                    },
                ))
            })
            .collect::<Result<_>>()?
    };
    write_manifest(&out, None, a.timings.clone(), &Command::Carbon(a.clone()))?;
    let report = carbon_report(
        &timings,
        &DeploymentSpec::with_power(power),
        &AvertedSpec::with_displacement(displacement),
    )?;
    report.write(&out.join("carbon.json"))?;
    let text = report.text_table();
    write_file(&out.join("carbon.txt"), &text)?;
    for w in &report.warnings {
        eprintln!("{w}");
    }
    print!("{text}");
    Ok(())
}

fn replay(a: ReplayArgs) -> Result<()> {
    let m: RunManifest = read_json(&a.manifest)?;
    let mut command = m.command;
    let common = match &mut command {
        Command::Generate(x) => &mut x.common,
        Command::Train(x) => &mut x.common,
        Command::Evaluate(x) => &mut x.common,
        Command::Activations(x) => &mut x.common,
        Command::Carbon(x) => &mut x.common,
        Command::Replay(_) => return Err(Error::Usage("a manifest cannot record a replay".into())),
    };
    if let Some(out) = a.out {
        common.out = Some(out);
    }
    common.force = a.force;
    dispatch(command)
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => run_train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Activations(a) => activations(a),
        Command::Carbon(a) => carbon(a),
        Command::Replay(a) => replay(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
