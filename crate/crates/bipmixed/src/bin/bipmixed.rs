//! Command-line interface: simulate benchmark data, fit models, score new
//! rows, evaluate stored predictions, and run whole benchmark scenarios.
//!
//! Every command is a pure function of its config file, input files, and
//! seed: rerunning with the same inputs rewrites the same bytes. Exit codes:
//! 0 success, 1 bad input (flags, config, files, data), 2 internal failure.

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use bipmixed::baselines::{fit_method, Method, ModelArchive};
use bipmixed::config::{resolve_workers, RunConfig};
use bipmixed::data::scree_rank_suggestion;
use bipmixed::error::{Error, Result};
use bipmixed::hyper::Hyperparameters;
use bipmixed::metrics::{mse, score_selection, var_pred, MetricsReport, MetricsRow, PerViewRow};
use bipmixed::simulate::{gen_dataset, run_scenario, scenario, ScenarioRun, ScenarioSpec};
use bipmixed::{io, simulate::TruthBundle};

#[derive(Parser)]
#[command(
    name = "bipmixed",
    version,
    about = "Multi-view Bayesian factor analysis with nested random effects"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one synthetic replicate: train and test splits plus the truth.
    Simulate(SimulateArgs),
    /// Fit a model to a dataset manifest and archive it as JSON.
    Fit(FitArgs),
    /// Score a dataset with an archived model.
    Predict(PredictArgs),
    /// Compute benchmark metrics for stored predictions.
    Evaluate(EvaluateArgs),
    /// Run a whole benchmark scenario: methods x replicates, with a report.
    Scenario(ScenarioArgs),
}

/// Generator shape overrides shared by `simulate` and `scenario`.
#[derive(Args, Clone)]
struct SpecOverrides {
    /// Number of feature views.
    #[arg(long)]
    views: Option<usize>,
    /// Features per view.
    #[arg(long)]
    features: Option<usize>,
    /// Signal-bearing ten-feature blocks per view.
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    sites: Option<usize>,
    /// Families per site.
    #[arg(long)]
    families: Option<usize>,
    /// Members per family.
    #[arg(long)]
    family_size: Option<usize>,
    /// Latent rank of the generator.
    #[arg(long)]
    gen_rank: Option<usize>,
    /// Fixed-effect covariates to simulate into the outcome.
    #[arg(long)]
    covariates: Option<usize>,
}

impl SpecOverrides {
    fn apply(&self, spec: &mut ScenarioSpec) {
        if let Some(v) = self.views {
            spec.n_views = v;
        }
        if let Some(v) = self.features {
            spec.p_per_view = v;
        }
        if let Some(v) = self.blocks {
            spec.important_blocks = v;
        }
        if let Some(v) = self.sites {
            spec.n_sites = v;
        }
        if let Some(v) = self.families {
            spec.families_per_site = v;
        }
        if let Some(v) = self.family_size {
            spec.family_size = v;
        }
        if let Some(v) = self.gen_rank {
            spec.rank = v;
        }
        if let Some(v) = self.covariates {
            spec.n_covariates = v;
        }
    }
}

/// Config-file and sampler overrides shared by `fit` and `scenario`. Flags
/// beat the config file; the config file beats built-in defaults.
#[derive(Args, Clone)]
struct HyperOverrides {
    /// JSON config with data/model/mcmc/prediction/output sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// bipmixed, bip, or pca2step.
    #[arg(long)]
    method: Option<String>,
    /// Latent rank; when absent everywhere, `fit` uses the scree suggestion.
    #[arg(long, short = 'r')]
    rank: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burn: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker-pool size; falls back to the config file, then BIPMIXED_WORKERS.
    #[arg(long)]
    workers: Option<usize>,
    /// Standardize view and covariate columns before fitting.
    #[arg(long)]
    standardize: Option<bool>,
    /// Move covariates in as an extra view for the no-random-effects method.
    #[arg(long)]
    bip_covariates_as_view: bool,
    /// Collapse the two-step baseline to family-only intercepts.
    #[arg(long)]
    pca2step_family_only: bool,
}

impl HyperOverrides {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if self.method.is_some() {
            cfg.model.method = self.method.clone();
        }
        if self.rank.is_some() {
            cfg.model.rank = self.rank;
        }
        if self.iters.is_some() {
            cfg.mcmc.iters = self.iters;
        }
        if self.burn.is_some() {
            cfg.mcmc.burn = self.burn;
        }
        if self.thin.is_some() {
            cfg.mcmc.thin = self.thin;
        }
        if self.seed.is_some() {
            cfg.mcmc.seed = self.seed;
        }
        if self.workers.is_some() {
            cfg.mcmc.workers = self.workers;
        }
        if self.standardize.is_some() {
            cfg.data.standardize = self.standardize;
        }
        if self.bip_covariates_as_view {
            cfg.model.bip_covariates_as_view = Some(true);
        }
        if self.pca2step_family_only {
            cfg.model.pca2step_family_only = Some(true);
        }
        Ok(cfg)
    }

    /// Whether any source pinned the rank explicitly.
    fn rank_given(&self, cfg: &RunConfig) -> bool {
        self.rank.is_some() || cfg.model.rank.is_some()
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario id: 1 (no random effects), 2, or 3.
    #[arg(long)]
    scenario: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for train/, test/, and truth.json.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    spec: SpecOverrides,
}

#[derive(Args)]
struct FitArgs {
    /// Manifest of the training dataset.
    #[arg(long)]
    data: PathBuf,
    /// Where the model archive (JSON) is written.
    #[arg(long)]
    out: PathBuf,
    /// Also write kept-sweep traces next to the archive (<out>.trace.csv).
    #[arg(long)]
    trace: bool,
    #[command(flatten)]
    hyper: HyperOverrides,
}

#[derive(Args)]
struct PredictArgs {
    /// Archived model from `fit`.
    #[arg(long)]
    model: PathBuf,
    /// Manifest of the rows to score.
    #[arg(long)]
    data: PathBuf,
    /// Predictions CSV (row,site,family,y_hat).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predictions CSV from `predict`.
    #[arg(long)]
    pred: PathBuf,
    /// Manifest of the dataset the predictions score (for the outcome).
    #[arg(long)]
    data: PathBuf,
    /// Metrics CSV destination.
    #[arg(long)]
    out: PathBuf,
    /// Archived model; enables selection metrics when --truth is also given.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Truth JSON from `simulate`; enables selection metrics.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Labels stamped into the report rows.
    #[arg(long, default_value = "-")]
    scenario: String,
    #[arg(long)]
    method: Option<String>,
    #[arg(long, default_value = "1")]
    replicate: String,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario id: 1, 2, or 3.
    #[arg(long)]
    id: u32,
    #[arg(long, default_value_t = 1)]
    replicates: usize,
    /// Comma-separated methods to run.
    #[arg(long, default_value = "bipmixed,bip,pca2step", value_delimiter = ',')]
    methods: Vec<String>,
    /// Directory for per-replicate artifacts and the report.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    spec: SpecOverrides,
    #[command(flatten)]
    hyper: HyperOverrides,
}

fn init_workers(flag: Option<usize>, cfg: &RunConfig) -> Result<()> {
    if let Some(n) = resolve_workers(flag, cfg.mcmc.workers)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    }
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let mut spec = scenario(args.scenario)?;
    args.spec.apply(&mut spec);
    let (train, test, truth) = gen_dataset(&spec, args.seed)?;
    let train_manifest = io::write_dataset(&args.out.join("train"), &train)?;
    let test_manifest = io::write_dataset(&args.out.join("test"), &test)?;
    let truth_path = args.out.join("truth.json");
    io::write_json(&truth_path, &truth)?;
    println!("train: {}", train_manifest.display());
    println!("test: {}", test_manifest.display());
    println!("truth: {}", truth_path.display());
    Ok(())
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let cfg = args.hyper.run_config()?;
    init_workers(args.hyper.workers, &cfg)?;
    let data = io::load_dataset(&args.data)?;
    let mut hyper = cfg.hyperparameters()?;
    if !args.hyper.rank_given(&cfg) {
        let scree = scree_rank_suggestion(&data)?;
        eprintln!("rank not given; scree suggestion r = {}", scree.suggested_r);
        hyper.r = scree.suggested_r;
    }
    let method = cfg.method()?;
    let options = cfg.fit_options();
    let archive = if args.trace && method == Method::Bipmixed {
        let (model, trace) = bipmixed::fit_traced(&data, &hyper)?;
        io::write_trace_csv(&trace_path(&args.out), &trace)?;
        ModelArchive::Factor(model)
    } else {
        if args.trace {
            eprintln!("trace: only the full model records traces; skipping");
        }
        fit_method(method, &data, &hyper, &options)?
    };
    archive.save(&args.out)?;
    println!("model: {}", args.out.display());
    if args.trace && method == Method::Bipmixed {
        println!("trace: {}", trace_path(&args.out).display());
    }
    Ok(())
}

fn trace_path(out: &PathBuf) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(".trace.csv");
    out.with_file_name(name)
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let archive = ModelArchive::load(&args.model)?;
    let data = io::load_dataset(&args.data)?;
    let y_hat = archive.predict(&data)?;
    io::write_predictions(&args.out, &data.site, &data.family, &y_hat)?;
    println!("predictions: {}", args.out.display());
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let (_, _, y_hat) = io::read_predictions(&args.pred)?;
    let data = io::load_dataset(&args.data)?;
    let archive = args.model.as_deref().map(ModelArchive::load).transpose()?;
    let truth: Option<TruthBundle> = args.truth.as_deref().map(io::read_json).transpose()?;
    let method = match (&args.method, &archive) {
        (Some(name), _) => name.clone(),
        (None, Some(a)) => a.method().to_string(),
        (None, None) => "-".into(),
    };

    let mut report = MetricsReport::default();
    let mut row = MetricsRow {
        scenario: args.scenario.clone(),
        method,
        replicate: args.replicate.clone(),
        mse: mse(&data.outcome, &y_hat)?,
        var_yhat: var_pred(&y_hat)?,
        fpr: None,
        fnr: None,
        auc: None,
    };
    if let (Some(archive), Some(truth)) = (&archive, &truth) {
        if let Some(mpp) = archive.mpp_feature() {
            let collapse = match archive {
                ModelArchive::Factor(m) => m.hyper.importance_collapse,
                ModelArchive::TwoStep(m) => m.inner.hyper.importance_collapse,
            };
            let (views, avg) = score_selection(mpp, &truth.important, collapse, 0.5)?;
            for (m, v) in views.iter().enumerate() {
                report.per_view.push(PerViewRow {
                    scenario: row.scenario.clone(),
                    method: row.method.clone(),
                    replicate: row.replicate.clone(),
                    view: data
                        .view_names
                        .get(m)
                        .cloned()
                        .unwrap_or_else(|| format!("view{}", m + 1)),
                    fpr: v.fpr,
                    fnr: v.fnr,
                    auc: v.auc,
                });
            }
            row.fpr = Some(avg.fpr);
            row.fnr = Some(avg.fnr);
            row.auc = Some(avg.auc);
        }
    }
    println!(
        "mse {:.6}  var_yhat {:.6}  fpr {}  fnr {}  auc {}",
        row.mse,
        row.var_yhat,
        row.fpr.map_or("NA".into(), |v| format!("{v:.4}")),
        row.fnr.map_or("NA".into(), |v| format!("{v:.4}")),
        row.auc.map_or("NA".into(), |v| format!("{v:.4}")),
    );
    report.rows.push(row);
    io::write_report_csv(&args.out, &report)?;
    if !report.per_view.is_empty() {
        io::write_per_view_csv(&per_view_path(&args.out), &report.per_view)?;
    }
    println!("metrics: {}", args.out.display());
    Ok(())
}

fn per_view_path(out: &PathBuf) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(".per_view.csv");
    out.with_file_name(name)
}

fn cmd_scenario(args: &ScenarioArgs) -> Result<()> {
    let cfg = args.hyper.run_config()?;
    init_workers(args.hyper.workers, &cfg)?;
    let mut spec = scenario(args.id)?;
    args.spec.apply(&mut spec);
    let hyper: Hyperparameters = cfg.hyperparameters()?;
    let methods: Vec<Method> = args
        .methods
        .iter()
        .map(|name| Method::from_str(name))
        .collect::<Result<_>>()?;
    let run = ScenarioRun {
        spec,
        n_replicates: args.replicates,
        methods,
        hyper,
        options: cfg.fit_options(),
        master_seed: args.hyper.seed.or(cfg.mcmc.seed).unwrap_or(0),
        out_dir: Some(args.out.clone()),
    };
    let report = run_scenario(&run)?;
    for row in report.rows.iter().filter(|r| r.replicate == "mean") {
        println!(
            "scenario {} {} mean: mse {:.4} var_yhat {:.4} fpr {} fnr {} auc {}",
            row.scenario,
            row.method,
            row.mse,
            row.var_yhat,
            row.fpr.map_or("NA".into(), |v| format!("{v:.4}")),
            row.fnr.map_or("NA".into(), |v| format!("{v:.4}")),
            row.auc.map_or("NA".into(), |v| format!("{v:.4}")),
        );
    }
    println!("report: {}", args.out.join("report.csv").display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Scenario(args) => cmd_scenario(args),
    }
}

fn main() {
    let code = std::panic::catch_unwind(|| -> i32 {
        let cli = match Cli::try_parse() {
            Ok(cli) => cli,
            Err(e) => {
                use clap::error::ErrorKind;
                let code = match e.kind() {
                    ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                    _ => 1,
                };
                let _ = e.print();
                return code;
            }
        };
        match dispatch(cli) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: {e}");
                if e.user_facing() {
                    1
                } else {
                    2
                }
            }
        }
    })
    .unwrap_or(2);
    std::process::exit(code);
}
