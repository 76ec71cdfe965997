use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use labgan::cohortsim::{simulate_cohort, SimConfig};
use labgan::coredata::{
    read_dataset, read_diagnoses, read_json, read_observations, read_prescriptions, write_dataset,
    write_diagnoses, write_json, write_observations, write_prescriptions, Dataset, Provenance,
};
use labgan::evaluate::{compare_models, dle_test, predictivity_error, DleReport, DleScale, PredictivityReport};
use labgan::gan::{generate, read_model, train_gan, GanTrainConfig};
use labgan::preprocess::{build_exposure_eras, preprocess_pipeline, PreprocessConfig};
use labgan::report::{figures, run_experiment, table_csv, ClusterKind, ExperimentConfig, TableRow};
use labgan::stratify::{
    build_covariates, covariates_from_codes, stratify, Covariates, Stratification, StratifyConfig,
};

#[derive(Parser)]
#[command(name = "labgan", version, about = "Synthetic drug-exposed laboratory time series")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a cohort: observations, prescriptions, diagnoses and truth.
    Simulate(SimulateArgs),
    /// Build aligned, normalized series from raw CSVs.
    Preprocess(PreprocessArgs),
    /// Cluster patients from their pre-exposure covariates.
    Stratify(StratifyArgs),
    /// Train a GAN on a dataset or on one cluster of it.
    TrainGan(TrainGanArgs),
    /// Draw synthetic series from a trained model.
    Generate(GenerateArgs),
    /// Score a synthetic set against real series.
    Evaluate(EvaluateArgs),
    /// Compare a subGAN with a totalGAN on the same real series.
    Compare(CompareArgs),
    /// Run the full multi-seed experiment.
    RunExperiment(RunExperimentArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON simulation config; defaults are used for missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_patients: Option<usize>,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    observations: PathBuf,
    #[arg(long)]
    prescriptions: PathBuf,
    /// Diagnoses CSV; when given, covariates are attached to the dataset.
    #[arg(long)]
    diagnoses: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// ATC prefix selecting the exposure drug class.
    #[arg(long)]
    drug_prefix: Option<String>,
    #[arg(long)]
    max_gap: Option<i64>,
    #[arg(long)]
    lookback: Option<i64>,
    #[arg(long)]
    n_pre: Option<usize>,
    #[arg(long)]
    n_during: Option<usize>,
    #[arg(long)]
    central_mass: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StratifyArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// `patient_id,code` CSV; overrides covariates stored in the dataset.
    #[arg(long)]
    covariates: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also draw the t-SNE layout coloured by cluster.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct ClusterSelection {
    /// clusters.json from `stratify`.
    #[arg(long, requires = "cluster_id")]
    cluster_file: Option<PathBuf>,
    /// Restrict to this cluster.
    #[arg(long, requires = "cluster_file")]
    cluster_id: Option<usize>,
}

#[derive(Args)]
struct TrainGanArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    selection: ClusterSelection,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Loss log as CSV.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    real: PathBuf,
    #[arg(long)]
    synth: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Report the drug-laboratory effect in mg/dL instead of normalized units.
    #[arg(long)]
    mg_dl: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    real: PathBuf,
    #[command(flatten)]
    selection: ClusterSelection,
    #[arg(long)]
    sub_model: PathBuf,
    #[arg(long)]
    total_model: PathBuf,
    /// Size of the largest cluster; sets the synthetic pool size.
    #[arg(long)]
    largest: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the comparison as a results-table CSV row.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct RunExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Comma-separated seeds; overrides the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    n_patients: Option<usize>,
    #[arg(long)]
    no_figures: bool,
}

fn load_or_default<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => read_json(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(T::default()),
    }
}

fn save<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    write_json(value, path).with_context(|| format!("writing {}", path.display()))
}

fn select_cluster(ds: Dataset, sel: &ClusterSelection) -> Result<Dataset> {
    let (Some(path), Some(cluster)) = (&sel.cluster_file, sel.cluster_id) else {
        return Ok(ds);
    };
    let strat: Stratification = read_json(path).with_context(|| format!("reading {}", path.display()))?;
    if cluster >= strat.assignment.k {
        bail!("cluster {cluster} does not exist (k = {})", strat.assignment.k);
    }
    let ids: Vec<&str> = ds.series.iter().map(|s| s.patient_id.as_str()).collect();
    let members = strat.cluster_members(&ids, cluster);
    if members.is_empty() {
        bail!("cluster {cluster} has no series in the dataset");
    }
    Ok(ds.select(&members)?)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg: SimConfig = load_or_default(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.n_patients {
        cfg.n_patients = n;
    }
    let (cohort, truth) = simulate_cohort(&cfg)?;
    std::fs::create_dir_all(&a.out_dir)?;
    write_observations(&cohort.observations, a.out_dir.join("observations.csv"))?;
    write_prescriptions(&cohort.prescriptions, a.out_dir.join("prescriptions.csv"))?;
    write_diagnoses(&cohort.diagnoses, a.out_dir.join("diagnoses.csv"))?;
    save(&truth, &a.out_dir.join("truth.json"))?;
    log::info!(
        "{} patients, {} observations written to {}",
        truth.labels.len(),
        cohort.observations.len(),
        a.out_dir.display()
    );
    Ok(())
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let mut cfg: PreprocessConfig = load_or_default(a.config.as_deref())?;
    if let Some(v) = a.drug_prefix {
        cfg.drug_prefix = v;
    }
    if let Some(v) = a.max_gap {
        cfg.max_gap_days = v;
    }
    if let Some(v) = a.lookback {
        cfg.lookback_days = v;
    }
    if let Some(v) = a.n_pre {
        cfg.n_pre = v;
    }
    if let Some(v) = a.n_during {
        cfg.n_during = v;
    }
    if let Some(v) = a.central_mass {
        cfg.central_mass = v;
    }
    let observations = read_observations(&a.observations)?;
    let prescriptions = read_prescriptions(&a.prescriptions)?;
    let mut ds = preprocess_pipeline(&observations, &prescriptions, &cfg)?;
    if let Some(path) = &a.diagnoses {
        let diagnoses = read_diagnoses(path)?;
        let eras = build_exposure_eras(&prescriptions, &cfg.drug_prefix, cfg.max_gap_days);
        let ids: Vec<&str> = ds.series.iter().map(|s| s.patient_id.as_str()).collect();
        ds.covariates = Some(build_covariates(&prescriptions, &diagnoses, &eras).aligned_to(&ids));
    }
    ds.validate()?;
    write_dataset(&ds, &a.out)?;
    log::info!("{} aligned series written to {}", ds.len(), a.out.display());
    Ok(())
}

fn stratify_cmd(a: StratifyArgs) -> Result<()> {
    let mut cfg: StratifyConfig = load_or_default(a.config.as_deref())?;
    if let Some(k) = a.k {
        cfg.k = k;
    }
    let ds = read_dataset(&a.dataset)?;
    let ids: Vec<&str> = ds.series.iter().map(|s| s.patient_id.as_str()).collect();
    let covariates: Covariates = match (&a.covariates, &ds.covariates) {
        (Some(path), _) => covariates_from_codes(&labgan::coredata::read_covariate_codes(path)?, &ids),
        (None, Some(c)) => c.clone(),
        (None, None) => bail!("dataset has no covariates; pass --covariates"),
    };
    let strat = stratify(&covariates, &cfg, a.seed)?;
    save(&strat, &a.out)?;
    if let Some(path) = &a.plot {
        let points: Vec<[f64; 2]> = strat.coordinates.iter().map(|p| p.xy).collect();
        std::fs::write(path, figures::tsne_scatter(&points, &strat.assignment.labels))?;
    }
    log::info!("cluster sizes {:?}", strat.assignment.sizes());
    Ok(())
}

fn train_gan_cmd(a: TrainGanArgs) -> Result<()> {
    let mut cfg: GanTrainConfig = load_or_default(a.config.as_deref())?;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let ds = select_cluster(read_dataset(&a.dataset)?, &a.selection)?;
    let mut model = train_gan(&ds.series, ds.layout, &cfg)?;
    model.bounds = Some(ds.bounds);
    save(&model, &a.out)?;
    if let Some(path) = &a.log {
        std::fs::write(path, model.log.to_csv())?;
    }
    log::info!("trained on {} series", ds.len());
    Ok(())
}

fn generate_cmd(a: GenerateArgs) -> Result<()> {
    if a.n == 0 {
        bail!("--n must be positive");
    }
    let model = read_model(&a.model)?;
    let Some(bounds) = model.bounds else {
        bail!("model has no normalization bounds; train it with `train-gan`");
    };
    let series = generate(&model, a.n, a.seed)?;
    let ds = Dataset::new(model.layout, series, None, bounds, Provenance::Synthetic { seed: a.seed })?;
    write_dataset(&ds, &a.out)?;
    Ok(())
}

#[derive(Serialize)]
struct EvaluationOutput {
    predictivity: PredictivityReport,
    dle_real: Option<DleReport>,
    dle_synth: Option<DleReport>,
}

fn dle_or_warn(ds: &Dataset, scale: DleScale, what: &str) -> Option<DleReport> {
    match dle_test(&ds.series, ds.layout, scale) {
        Ok(r) => Some(r),
        Err(e) => {
            log::warn!("no drug-laboratory effect for {what}: {e}");
            None
        }
    }
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let real = read_dataset(&a.real)?;
    let synth = read_dataset(&a.synth)?;
    if real.layout != synth.layout {
        bail!("real and synthetic datasets use different layouts");
    }
    let predictivity = predictivity_error(&real.series, &synth.series, real.layout)?;
    let scale = |ds: &Dataset| if a.mg_dl { DleScale::Denormalized(ds.bounds) } else { DleScale::Normalized };
    let out = EvaluationOutput {
        dle_real: dle_or_warn(&real, scale(&real), "real series"),
        dle_synth: dle_or_warn(&synth, scale(&synth), "synthetic series"),
        predictivity,
    };
    println!("P_err {:.6} ± {:.6}", out.predictivity.p_err, out.predictivity.sd);
    save(&out, &a.out)
}

fn compare_cmd(a: CompareArgs) -> Result<()> {
    let real = select_cluster(read_dataset(&a.real)?, &a.selection)?;
    let sub = read_model(&a.sub_model)?;
    let total = read_model(&a.total_model)?;
    let cluster = a.selection.cluster_id.unwrap_or(0);
    let report = compare_models(cluster, &real.series, &sub, &total, a.largest, a.seed)?;
    println!(
        "subGAN {:.6} ± {:.6}  totalGAN {:.6} ± {:.6}  p = {:.3e}",
        report.sub.p_err, report.sub.sd, report.total.p_err, report.total.sd, report.p_value
    );
    save(&report, &a.out)?;
    if let Some(path) = &a.csv {
        let row = TableRow {
            kind: ClusterKind::Clinical,
            cluster,
            size: real.len(),
            sub_p_err: report.sub.p_err,
            sub_sd: report.sub.sd,
            total_p_err: report.total.p_err,
            total_sd: report.total.sd,
            p_value: report.p_value,
        };
        std::fs::write(path, table_csv(&[row]))?;
    }
    Ok(())
}

fn run_experiment_cmd(a: RunExperimentArgs) -> Result<()> {
    let mut cfg: ExperimentConfig = load_or_default(a.config.as_deref())?;
    if let Some(dir) = a.out_dir {
        cfg.out_dir = Some(dir);
    }
    if let Some(seeds) = a.seeds {
        cfg.seeds = seeds;
    }
    if let Some(n) = a.n_patients {
        cfg.sim.n_patients = n;
    }
    if a.no_figures {
        cfg.figures = false;
    }
    if cfg.out_dir.is_none() {
        bail!("no output directory: pass --out-dir or set out_dir in the config");
    }
    let summary = run_experiment(&cfg)?;
    print!("{}", summary.table_csv());
    println!(
        "subGAN better than totalGAN in {}/{} clusters; random worse than clinical in {}/{} sizes",
        summary.directional.sub_beats_total,
        summary.k,
        summary.directional.random_worse_than_clinical,
        summary.k
    );
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Stratify(a) => stratify_cmd(a),
        Command::TrainGan(a) => train_gan_cmd(a),
        Command::Generate(a) => generate_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Compare(a) => compare_cmd(a),
        Command::RunExperiment(a) => run_experiment_cmd(a),
    }
}
