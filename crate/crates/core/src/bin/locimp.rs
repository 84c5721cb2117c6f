use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use locimp::data::{apply_preprocess, load_csv};
use locimp::experiment::{self, DatasetSpec, ExperimentConfig, ExplainOptions, Method, MethodsConfig};
use locimp::forest::ForestParams;
use locimp::Result;

/// Local explanations of random-forest regressions: data generation,
/// training, single-instance explanations and full evaluation runs.
#[derive(Parser)]
#[command(name = "locimp", version)]
struct Cli {
    /// Global seed; every random stage derives its own stream from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Experiment config (TOML); command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and its true local coefficients as CSV.
    Generate {
        #[arg(long, default_value_t = 1)]
        dataset: u32,
        #[arg(long, default_value_t = experiment::DEFAULT_N)]
        n: usize,
        #[arg(long, default_value_t = experiment::DEFAULT_D)]
        d: usize,
    },
    /// Train the black-box forest on a CSV file.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long, value_delimiter = ',')]
        categorical: Vec<String>,
        /// Min-max scale continuous features before training.
        #[arg(long)]
        scale: bool,
        #[command(flatten)]
        forest: ForestArgs,
    },
    /// Explain one instance and print the explanation as JSON.
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long, value_delimiter = ',')]
        categorical: Vec<String>,
        /// Scaling written by `train --scale`.
        #[arg(long)]
        preprocess: Option<PathBuf>,
        #[arg(long, default_value = "varimp")]
        method: Method,
        #[arg(long)]
        index: usize,
        #[arg(long, default_value_t = 0.5)]
        bandwidth: f64,
    },
    /// Run the configured datasets and methods and write every artifact.
    Evaluate(RunArgs),
    /// Run all six synthetic datasets with every method.
    Sweep(RunArgs),
}

#[derive(Args)]
struct ForestArgs {
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    mtry: Option<usize>,
    #[arg(long)]
    node_size: Option<usize>,
}

impl ForestArgs {
    fn apply(&self, p: &mut ForestParams) {
        if let Some(t) = self.trees {
            p.n_trees = t;
        }
        if self.mtry.is_some() {
            p.mtry = self.mtry;
        }
        if let Some(s) = self.node_size {
            p.node_size = s;
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Synthetic dataset ids, replacing the configured datasets.
    #[arg(long = "dataset", value_delimiter = ',')]
    datasets: Vec<u32>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    methods: Vec<Method>,
    #[arg(long, value_delimiter = ',')]
    bandwidths: Vec<f64>,
    #[arg(long)]
    max_features: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[command(flatten)]
    forest: ForestArgs,
}

fn load_config(path: Option<&Path>) -> Result<Option<ExperimentConfig>> {
    path.map(ExperimentConfig::load).transpose()
}

fn build_run_config(cli: &Cli, args: &RunArgs, sweep: bool) -> Result<ExperimentConfig> {
    let n = args.n.unwrap_or(experiment::DEFAULT_N);
    let d = args.d.unwrap_or(experiment::DEFAULT_D);
    let mut cfg = match load_config(cli.config.as_deref())? {
        Some(c) => c,
        None if sweep => ExperimentConfig::full_sweep(n, d),
        None => ExperimentConfig::default(),
    };
    if sweep && args.datasets.is_empty() && cfg.datasets.is_empty() {
        cfg.datasets = ExperimentConfig::full_sweep(n, d).datasets;
    }
    if !args.datasets.is_empty() {
        cfg.datasets = args.datasets.iter().map(|&id| DatasetSpec::synthetic(id, n, d)).collect();
    }
    for ds in cfg.datasets.iter_mut().filter(|ds| ds.synthetic.is_some()) {
        if let Some(n) = args.n {
            ds.n = n;
        }
        if let Some(d) = args.d {
            ds.d = d;
        }
    }
    if !args.methods.is_empty() {
        cfg.methods.run = args.methods.clone();
    }
    if !args.bandwidths.is_empty() {
        cfg.methods.bandwidths = args.bandwidths.clone();
    }
    if args.max_features.is_some() {
        cfg.methods.max_features = args.max_features;
    }
    if let Some(k) = args.k_max {
        cfg.methods.k_max = k;
    }
    args.forest.apply(&mut cfg.black_box);
    args.forest.apply(&mut cfg.importance_forest);
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    match &cli.command {
        Command::Generate { dataset, n, d } => {
            for f in experiment::generate_files(&out, *dataset, *n, *d, seed.unwrap_or(0))? {
                println!("{}", f.display());
            }
        }
        Command::Train {
            data,
            target,
            categorical,
            scale,
            forest,
        } => {
            let mut params = load_config(cli.config.as_deref())?.map(|c| c.black_box).unwrap_or_default();
            forest.apply(&mut params);
            let seed = seed.unwrap_or(0);
            for f in experiment::train_files(data, target, categorical, *scale, &params, seed, &out)? {
                println!("{}", f.display());
            }
        }
        Command::Explain {
            model,
            data,
            target,
            categorical,
            preprocess,
            method,
            index,
            bandwidth,
        } => {
            let cfg = load_config(cli.config.as_deref())?;
            let forest = experiment::load_model(model).map_err(|e| e.in_stage("load model"))?;
            let mut table = load_csv(data, target, categorical).map_err(|e| e.in_stage("load data"))?.table;
            if let Some(p) = preprocess {
                let spec = experiment::load_preprocess(p)?;
                table = apply_preprocess(&spec, &table).map_err(|e| e.in_stage("preprocess"))?;
            }
            let opts = ExplainOptions {
                method: *method,
                index: *index,
                bandwidth: *bandwidth,
                methods: cfg.as_ref().map(|c| c.methods.clone()).unwrap_or_else(MethodsConfig::default),
                importance_forest: cfg.as_ref().map(|c| c.importance_forest).unwrap_or_default(),
                seed: seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0),
            };
            let report = experiment::explain_one(&forest, &table, &opts).map_err(|e| e.in_stage("explain"))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Evaluate(args) | Command::Sweep(args) => {
            let sweep = matches!(cli.command, Command::Sweep(_));
            let cfg = build_run_config(&cli, args, sweep)?;
            let result = experiment::run_experiment(&cfg)?;
            println!("{}", cfg.out.join(experiment::MANIFEST_FILE).display());
            log::info!("{} evaluation rows", result.reports.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("locimp: {e}");
            ExitCode::FAILURE
        }
    }
}
