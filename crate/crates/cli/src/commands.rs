//! Verb implementations. Each writes its artifacts under the output
//! directory and prints a one-line summary.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use eskin_core::classifier::baselines::{self, LogisticConfig};
use eskin_core::classifier::gradcheck;
use eskin_core::classifier::tsne;
use eskin_core::classifier::{self, CnnModel};
use eskin_core::interference;
use eskin_core::sensing::{self, AcquisitionConfig, ObjectClass, TactileWindow, TRAIN_FRACTION};
use eskin_core::skin::MagneticFilm;
use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::script::{self, DuplexReport};
use crate::{live, weigh, CliError};

#[derive(Debug, Parser)]
#[command(name = "eskin", version, about = "Dual-modal e-skin simulator")]
pub struct Cli {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON scenario config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides the config file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic tactile dataset.
    Dataset {
        #[arg(long)]
        per_class: Option<usize>,
    },
    /// Train the CNN.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Embed learned features of the test split in 2-D.
    Tsne {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Use at most this many windows.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Weighing experiments: ε comparison and the nine combinations.
    Weigh {
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        /// Material for the ε comparison.
        #[arg(long, default_value = "flour")]
        epsilon_material: String,
        /// Materials for the nine-combination runs.
        #[arg(long, value_delimiter = ',', default_value = "sugar,sesame")]
        combo_materials: Vec<String>,
    },
    /// Motor interference versus a vertical press.
    Interference {
        #[arg(long, default_value_t = 4.0)]
        force: f64,
    },
    /// Run the duplex session: live over WebSocket, or headless from a script.
    Serve {
        /// Operator script (JSON lines); `happy-path` selects the bundled one.
        #[arg(long)]
        script: Option<String>,
        /// Scripted runs on consecutive seeds.
        #[arg(long, default_value_t = 1)]
        runs: usize,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Existing dataset file; generated from the config when absent.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Also score the kNN and logistic baselines.
    #[arg(long)]
    pub baselines: bool,
    /// Finite-difference check of the gradient before training.
    #[arg(long)]
    pub grad_check: bool,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(o) = cli.out {
        config.output_dir = o;
    }
    fs::create_dir_all(&config.output_dir)?;
    match cli.command {
        Command::Dataset { per_class } => cmd_dataset(&config, per_class),
        Command::Train(args) => cmd_train(&config, &args),
        Command::Eval { model, dataset } => cmd_eval(&config, &model, dataset.as_deref()),
        Command::Tsne { model, dataset, limit } => cmd_tsne(&config, &model, dataset.as_deref(), limit),
        Command::Weigh { seeds, epsilon_material, combo_materials } => cmd_weigh(&config, seeds, &epsilon_material, &combo_materials),
        Command::Interference { force } => cmd_interference(&config, force),
        Command::Serve { script, runs } => cmd_serve(&config, script.as_deref(), runs),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Failed(e.to_string()))?;
    writeln!(w)?;
    Ok(())
}

pub fn build_dataset(config: &ScenarioConfig, per_class: usize) -> Result<sensing::Dataset, CliError> {
    let geom = config.geometry()?;
    let film = MagneticFilm::new(&geom).map_err(|e| CliError::Config(e.to_string()))?;
    let acq = AcquisitionConfig { noise: Some(config.noise), ..AcquisitionConfig::default() };
    Ok(sensing::build_dataset(&ObjectClass::defaults(), per_class, config.seed, &geom, &film, &acq)?)
}

/// A dataset file holds the shuffled windows; the split is positional.
fn load_split(config: &ScenarioConfig, path: Option<&Path>) -> Result<(Vec<TactileWindow>, usize), CliError> {
    match path {
        Some(p) => {
            let windows = sensing::read_dataset(File::open(p)?)?;
            let n = sensing::train_split_size(windows.len());
            Ok((windows, n))
        }
        None => {
            let ds = build_dataset(config, config.per_class)?;
            Ok((ds.windows, ds.n_train))
        }
    }
}

#[derive(Serialize)]
struct DatasetSummary {
    windows: usize,
    train: usize,
    test: usize,
    channels: usize,
    steps: usize,
    seed: u64,
}

pub fn cmd_dataset(config: &ScenarioConfig, per_class: Option<usize>) -> Result<(), CliError> {
    let ds = build_dataset(config, per_class.unwrap_or(config.per_class))?;
    let path = config.output_dir.join("dataset.eskd");
    sensing::write_dataset(BufWriter::new(File::create(&path)?), &ds.windows)?;
    let s = DatasetSummary {
        windows: ds.len(),
        train: ds.n_train,
        test: ds.len() - ds.n_train,
        channels: eskin_core::CHANNELS,
        steps: sensing::WINDOW_STEPS,
        seed: config.seed,
    };
    write_json(&config.output_dir.join("dataset.json"), &s)?;
    println!("dataset: {} windows ({} train / {} test, split {TRAIN_FRACTION}) -> {}", s.windows, s.train, s.test, path.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainMetrics {
    epochs: usize,
    train_acc: Vec<f64>,
    test_acc: Vec<Option<f64>>,
    train_loss: Vec<f64>,
    final_test_acc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    knn_k5: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    logistic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grad_check_max_rel_error: Option<f64>,
}

pub fn cmd_train(config: &ScenarioConfig, args: &TrainArgs) -> Result<(), CliError> {
    let (windows, n_train) = load_split(config, args.dataset.as_deref())?;
    let (train_set, test_set) = windows.split_at(n_train);
    let mut cfg = config.train;
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    let grad = if args.grad_check {
        let mut m = CnnModel::<f64>::init(cfg.seed);
        let r = gradcheck::grad_check(&mut m, &train_set[..train_set.len().min(8)], 1e-6, 240, cfg.seed)?;
        println!("grad check: max relative error {:.3e} over {} parameters", r.max_relative_error, r.checked);
        Some(r.max_relative_error)
    } else {
        None
    };
    let (model, history) = classifier::cnn::train_with_callback(train_set, Some(test_set), &cfg, |epoch, h| {
        let test = h.test_acc.last().copied().flatten().map_or("-".into(), |a| format!("{a:.4}"));
        println!("epoch {epoch}: loss {:.4} train {:.4} test {test}", h.train_loss[epoch - 1], h.train_acc[epoch - 1]);
    })?;
    let out = &config.output_dir;
    classifier::save_checkpoint(BufWriter::new(File::create(out.join("model.eskm"))?), &model)?;
    fs::write(out.join("history.jsonl"), history.to_jsonl())?;
    let final_test_acc = classifier::evaluate(&model, test_set)?.accuracy;
    let (knn_k5, logistic) = if args.baselines {
        (
            Some(baselines::knn_baseline(train_set, test_set, 5)?),
            Some(baselines::logistic_baseline(train_set, test_set, &LogisticConfig::default())?),
        )
    } else {
        (None, None)
    };
    let m = TrainMetrics {
        epochs: cfg.epochs,
        train_acc: history.train_acc.clone(),
        test_acc: history.test_acc.clone(),
        train_loss: history.train_loss.clone(),
        final_test_acc,
        knn_k5,
        logistic,
        grad_check_max_rel_error: grad,
    };
    write_json(&out.join("train_metrics.json"), &m)?;
    println!("train: test accuracy {final_test_acc:.4} -> {}", out.join("model.eskm").display());
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    accuracy: f64,
    n: usize,
    confusion: Vec<Vec<u32>>,
}

pub fn cmd_eval(config: &ScenarioConfig, model: &Path, dataset: Option<&Path>) -> Result<(), CliError> {
    let model = classifier::load_checkpoint(File::open(model)?)?;
    let (windows, n_train) = load_split(config, dataset)?;
    let test = &windows[n_train..];
    let e = classifier::evaluate(&model, test)?;
    let r = EvalReport { accuracy: e.accuracy, n: test.len(), confusion: e.confusion.iter().map(|r| r.to_vec()).collect() };
    write_json(&config.output_dir.join("eval.json"), &r)?;
    println!("eval: accuracy {:.4} on {} windows", r.accuracy, r.n);
    Ok(())
}

#[derive(Serialize)]
struct TsneSummary {
    n: usize,
    kl_divergence: f64,
    silhouette_by_label: f64,
}

pub fn cmd_tsne(config: &ScenarioConfig, model: &Path, dataset: Option<&Path>, limit: Option<usize>) -> Result<(), CliError> {
    let model = classifier::load_checkpoint(File::open(model)?)?.cast::<f64>();
    let (windows, n_train) = load_split(config, dataset)?;
    let test = &windows[n_train..];
    let test = &test[..limit.unwrap_or(test.len()).min(test.len())];
    let features: Vec<Vec<f64>> = test.iter().map(|w| model.features(&w.data)).collect();
    let cfg = tsne::TsneConfig { seed: config.seed, ..config.tsne };
    let r = tsne::tsne_embed(&features, &cfg)?;
    let labels: Vec<Option<u8>> = test.iter().map(|w| w.label).collect();
    classifier::write_embedding_csv(BufWriter::new(File::create(config.output_dir.join("embedding.csv"))?), &labels, &r.embedding)?;
    let ids: Vec<usize> = labels.iter().map(|l| l.map_or(0, usize::from)).collect();
    let s = TsneSummary { n: test.len(), kl_divergence: r.kl_divergence, silhouette_by_label: tsne::silhouette(&r.embedding, &ids) };
    write_json(&config.output_dir.join("tsne.json"), &s)?;
    println!("tsne: {} points, KL {:.4}, silhouette {:.3}", s.n, s.kl_divergence, s.silhouette_by_label);
    Ok(())
}

#[derive(Serialize)]
struct WeighReport {
    epsilon: weigh::EpsilonReport,
    combos: Vec<weigh::TrendReport>,
}

pub fn cmd_weigh(config: &ScenarioConfig, seeds: usize, eps_material: &str, combo_materials: &[String]) -> Result<(), CliError> {
    if seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let dir = config.output_dir.join("weigh");
    fs::create_dir_all(&dir)?;
    let eps = weigh::epsilon_comparison(&config.material(eps_material)?, seeds, config.seed)?;
    for (name, traces) in [("no_vibration", &eps.traces.0), ("vibration", &eps.traces.1)] {
        for (k, t) in traces.iter().enumerate() {
            t.write_csv(BufWriter::new(File::create(dir.join(format!("{eps_material}_{name}_{k}.csv")))?))?;
        }
    }
    println!(
        "weigh: {eps_material} mean eps {:.4} g without vibration, {:.4} g with, ratio {:.2}",
        eps.no_vibration, eps.vibration, eps.ratio
    );
    let mut combos = Vec::new();
    for name in combo_materials {
        let (r, fams) = weigh::nine_combo(&config.material(name)?, seeds, config.seed)?;
        for f in &fams {
            for (k, t) in f.traces.iter().enumerate() {
                t.write_csv(BufWriter::new(File::create(dir.join(format!("{name}_combo{}_{k}.csv", f.label)))?))?;
            }
        }
        println!("weigh: {name} nine-combination trends {}", if r.all_hold { "hold" } else { "BROKEN" });
        combos.push(r);
    }
    write_json(&config.output_dir.join("weigh_report.json"), &WeighReport { epsilon: eps, combos })?;
    Ok(())
}

#[derive(Serialize)]
struct InterferenceSummary {
    force_n: f64,
    probed_sensor: usize,
    stage_max_ut: [f64; 3],
    ratio: f64,
    rows: usize,
}

pub fn cmd_interference(config: &ScenarioConfig, force: f64) -> Result<(), CliError> {
    let geom = config.geometry()?;
    let film = MagneticFilm::new(&geom).map_err(|e| CliError::Config(e.to_string()))?;
    let cfg = interference::InterferenceConfig { noise: config.noise, ..config.interference };
    let t = interference::interference_experiment(&geom, &film, &config.motor, force, &cfg)?;
    interference::write_trace_csv(BufWriter::new(File::create(config.output_dir.join("interference.csv"))?), &t)?;
    let s = InterferenceSummary { force_n: force, probed_sensor: t.probed_sensor, stage_max_ut: t.stage_max, ratio: t.ratio(), rows: t.samples.len() };
    write_json(&config.output_dir.join("interference.json"), &s)?;
    println!(
        "interference: motors {:.3} uT vs {force} N press {:.3} uT at sensor {}, ratio {:.3}",
        s.stage_max_ut[1], s.stage_max_ut[2], s.probed_sensor, s.ratio
    );
    Ok(())
}

#[derive(Serialize)]
struct ServeSummary {
    runs: usize,
    completed: usize,
    within_005g: usize,
    reports: Vec<DuplexReport>,
}

pub fn cmd_serve(config: &ScenarioConfig, script_arg: Option<&str>, runs: usize) -> Result<(), CliError> {
    let Some(script_arg) = script_arg else {
        let listener = live::bind(config)?;
        println!("serve: operator gateway on ws://{}", listener.local_addr()?);
        let outcome = live::serve(config, &listener, config.seed)?;
        outcome.duplex.write_log(BufWriter::new(File::create(config.output_dir.join("events.jsonl"))?))?;
        if outcome.operator_disconnected {
            return Err(CliError::Failed("operator disconnected; session safe-stopped".into()));
        }
        println!("serve: session confirmed at {:.2} g", outcome.duplex.robot.mass());
        return Ok(());
    };
    if runs == 0 {
        return Err(CliError::Usage("--runs must be at least 1".into()));
    }
    let text = if script_arg == "happy-path" { script::HAPPY_PATH.to_string() } else { fs::read_to_string(script_arg)? };
    let steps = script::parse_script(&text)?;
    let mut reports = Vec::with_capacity(runs);
    for k in 0..runs as u64 {
        let seed = config.seed + k;
        let run = script::run_script(config, &steps, seed)?;
        let name = if runs == 1 { "events.jsonl".to_string() } else { format!("events_{seed}.jsonl") };
        run.duplex.write_log(BufWriter::new(File::create(config.output_dir.join(name))?))?;
        let r = run.report;
        println!(
            "serve: seed {seed} stage {} mass {:.3} g target {} collisions {}/{} relayed{}",
            r.final_stage,
            r.final_mass_g,
            r.target_g.map_or("-".into(), |t| format!("{t:.2} g")),
            r.collisions.relayed_once,
            r.collisions.active,
            r.aborted.as_ref().map_or(String::new(), |a| format!(" ({a})")),
        );
        reports.push(r);
    }
    let within = |r: &DuplexReport| r.completed && r.target_g.is_some_and(|t| (r.final_mass_g - t).abs() <= 0.05);
    let summary = ServeSummary {
        runs,
        completed: reports.iter().filter(|r| r.completed).count(),
        within_005g: reports.iter().filter(|r| within(r)).count(),
        reports,
    };
    write_json(&config.output_dir.join("duplex_report.json"), &summary)?;
    if summary.completed < runs {
        let why = summary.reports.iter().find_map(|r| r.aborted.clone()).unwrap_or_else(|| "stage 6 not reached".into());
        return Err(CliError::Failed(format!("{} of {runs} runs incomplete: {why}", runs - summary.completed)));
    }
    Ok(())
}
