//! Experiment orchestration behind the `locimp` binary.

mod config;
mod pipeline;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use config::{DatasetSpec, ExperimentConfig, Method, MethodsConfig, DEFAULT_BANDWIDTHS, DEFAULT_D, DEFAULT_N};
pub use pipeline::{
    best_bandwidth, load_dataset, prepare, run_shapley, run_supclus, scan_bandwidths, with_black_box, BandwidthRun,
    ClusterRun, Prepared, Seeds,
};

use crate::baselines::{explain_iml_style, LimeSampler, ShapleySampler};
use crate::data::{apply_preprocess, fit_preprocess, load_csv, DataTable, PreprocessSpec, Synthetic};
use crate::error::{Error, Result};
use crate::evalx::{slope_plot_data, write_reports_csv, write_slope_csv, EvalReport};
use crate::forest::{local_importance, train_forest, Forest, ForestParams, MODEL_FORMAT_VERSION};
use crate::model::Predictor;
use crate::supclus::{self, SpectralOptions};
use crate::varimp::{self, write_explanations_csv, LocalExplanation, LocalFitParams};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EVAL_CSV: &str = "eval.csv";
pub const EVAL_JSON: &str = "eval.json";

/// Writes files under one root and remembers their relative paths.
struct Artifacts {
    root: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, rel: &str, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        body(&mut w)?;
        w.flush().map_err(|e| Error::io(&path, e))?;
        self.files.push(rel.to_string());
        Ok(())
    }

    fn json<T: Serialize + ?Sized>(&mut self, rel: &str, value: &T) -> Result<()> {
        self.write(rel, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            w.write_all(b"\n").map_err(|e| Error::io(rel, e))
        })
    }
}

fn write_matrix_csv<W: Write>(m: &Array2<f64>, names: &[String], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["index".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (i, row) in m.rows().into_iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub seeds: Seeds,
    pub n_train: usize,
    pub n_explain: usize,
    pub d: usize,
    pub dropped_rows: usize,
    /// Selected bandwidth per kernel method.
    pub best_bandwidth: Vec<(Method, f64)>,
    pub selected_k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub model_format_version: u32,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub datasets: Vec<DatasetSummary>,
    pub config: ExperimentConfig,
    /// Every artifact, relative to the output directory.
    pub files: Vec<String>,
}

pub struct RunOutput {
    pub manifest: Manifest,
    pub reports: Vec<EvalReport>,
}

/// Runs every configured dataset and method and writes all artifacts under
/// `config.out`. Files already written are kept when a later stage fails.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let mut art = Artifacts::new(&config.out)?;
    let mut reports = Vec::new();
    let mut datasets = Vec::new();
    for spec in &config.datasets {
        let summary = run_dataset(config, spec, &mut art, &mut reports)
            .map_err(|e| Error::Stage {
                stage: format!("dataset {}", spec.name()),
                source: Box::new(e),
            })?;
        datasets.push(summary);
    }
    art.write(EVAL_CSV, |w| write_reports_csv(&reports, w))?;
    art.json(EVAL_JSON, &reports)?;
    let mut files = art.files.clone();
    files.push(MANIFEST_FILE.to_string());
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        model_format_version: MODEL_FORMAT_VERSION,
        seed: config.seed,
        methods: config.methods.run.clone(),
        datasets,
        config: config.clone(),
        files,
    };
    art.json(MANIFEST_FILE, &manifest)?;
    Ok(RunOutput { manifest, reports })
}

fn run_dataset(config: &ExperimentConfig, spec: &DatasetSpec, art: &mut Artifacts, reports: &mut Vec<EvalReport>) -> Result<DatasetSummary> {
    let cfg = &config.methods;
    let seeds = Seeds::derive(config.seed);
    let dir = spec.name();
    let p = prepare(spec, &config.black_box, &config.importance_forest, seeds)?;
    log::info!("{dir}: {} training rows, {} explained rows, d = {}", p.train.n(), p.explain.n(), p.explain.d());
    let names = p.explain.feature_names().to_vec();

    art.write(&format!("{dir}/model.json"), |w| p.black_box.save_json(w))?;
    if let Some(pre) = &p.preprocess {
        art.json(&format!("{dir}/preprocess.json"), pre)?;
    }
    art.write(&format!("{dir}/train.csv"), |w| p.train.write_csv(w))?;
    art.write(&format!("{dir}/explain.csv"), |w| p.explain.write_csv(w))?;
    if let Some(truth) = &p.truth {
        art.write(&format!("{dir}/truth.csv"), |w| truth.write_csv(&names, w))?;
    }
    art.write(&format!("{dir}/importance.csv"), |w| write_matrix_csv(&p.importance.normalized, &names, w))?;

    let ice = p.ice_effects(cfg.ice_grid)?;
    art.write(&format!("{dir}/ice_effects.csv"), |w| write_matrix_csv(&ice, &names, w))?;

    let mut best = Vec::new();
    let mut scan_rows = Vec::new();
    let mut varimp_best: Option<BandwidthRun> = None;
    for method in [Method::Varimp, Method::ImlStyle, Method::LimeStyle] {
        let needed = cfg.runs(method) || (method == Method::Varimp && cfg.runs(Method::Supclus));
        if !needed {
            continue;
        }
        let runs = scan_bandwidths(&p, method, cfg, Some(&ice))?;
        let b = best_bandwidth(&runs).unwrap_or(0);
        if cfg.runs(method) {
            for (idx, run) in runs.iter().enumerate() {
                art.write(&format!("{dir}/explanations/{method}_h{}.csv", run.bandwidth), |w| {
                    write_explanations_csv(&run.explanations, &names, w)
                })?;
                scan_rows.push((method, run.bandwidth, run.report.clone(), idx == b));
                reports.push(run.report.clone());
            }
            write_slopes(art, &dir, method.name(), &p, &runs[b].explanations, cfg)?;
            best.push((method, runs[b].bandwidth));
        }
        if method == Method::Varimp {
            varimp_best = runs.into_iter().nth(b);
        }
    }
    art.write(&format!("{dir}/bandwidth_scan.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["method", "h", "mse_coefficients", "ice_r", "prediction_r", "selected"])?;
        for (m, h, r, sel) in &scan_rows {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            c.write_record([
                m.name().to_string(),
                h.to_string(),
                opt(r.mse_coefficients),
                opt(r.ice_effect_correlation.map(|c| c.r)),
                opt(r.prediction_correlation.map(|c| c.r)),
                sel.to_string(),
            ])?;
        }
        c.flush().map_err(|e| Error::io("bandwidth_scan.csv", e))
    })?;

    let mut selected_k = None;
    if cfg.runs(Method::Supclus) {
        let source = varimp_best.as_ref().ok_or_else(|| Error::Empty("varimp coefficients for clustering"))?;
        let run = run_supclus(&p, source, cfg, Some(&ice))?;
        let bi = run.best_index();
        selected_k = Some(run.selection.best.k);
        for (sol, (ex, rep)) in run.selection.candidates.iter().zip(run.explanations.iter().zip(&run.reports)) {
            art.write(&format!("{dir}/explanations/supclus_k{}.csv", sol.k), |w| write_explanations_csv(ex, &names, w))?;
            reports.push(rep.clone());
        }
        art.write(&format!("{dir}/supclus_r2.csv"), |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["k", "weighted_r2", "repairs", "selected"])?;
            for sol in &run.selection.candidates {
                c.write_record([
                    sol.k.to_string(),
                    sol.weighted_r2.to_string(),
                    sol.repairs.to_string(),
                    (sol.k == run.selection.best.k).to_string(),
                ])?;
            }
            c.flush().map_err(|e| Error::io("supclus_r2.csv", e))
        })?;
        art.json(&format!("{dir}/supclus.json"), &supclus::solution_json(&run.selection.best, &names))?;
        write_slopes(art, &dir, "supclus", &p, &run.explanations[bi], cfg)?;
    }

    if cfg.runs(Method::Shapley) {
        let (values, report) = run_shapley(&p, cfg, Some(&ice))?;
        let locals: Vec<LocalExplanation> = values.iter().map(|v| v.to_local()).collect();
        art.write(&format!("{dir}/explanations/shapley.csv"), |w| write_explanations_csv(&locals, &names, w))?;
        reports.push(report);
    }

    Ok(DatasetSummary {
        name: dir,
        seeds,
        n_train: p.train.n(),
        n_explain: p.explain.n(),
        d: p.explain.d(),
        dropped_rows: p.dropped_rows,
        best_bandwidth: best,
        selected_k,
    })
}

fn write_slopes(art: &mut Artifacts, dir: &str, label: &str, p: &Prepared, ex: &[LocalExplanation], cfg: &MethodsConfig) -> Result<()> {
    let n_points = cfg.slope_points.min(p.explain.n());
    for &j in cfg.slope_features.iter().filter(|&&j| j < p.explain.d()) {
        let segs = slope_plot_data(&p.explain, ex, j, n_points, cfg.slope_halfwidth, p.seeds.slope_plot)?;
        let name = &p.explain.feature_names()[j];
        art.write(&format!("{dir}/slopes/{label}_{name}.csv"), |w| write_slope_csv(&segs, w))?;
    }
    Ok(())
}

/// Writes `data.csv` and `truth.csv` for one synthetic dataset.
pub fn generate_files(out: &Path, id: u32, n: usize, d: usize, seed: u64) -> Result<Vec<PathBuf>> {
    let (table, truth) = Synthetic::from_id(id)?.generate(n, d, seed)?;
    let mut art = Artifacts::new(out)?;
    art.write("data.csv", |w| table.write_csv(w))?;
    art.write("truth.csv", |w| truth.write_csv(table.feature_names(), w))?;
    Ok(art.files.iter().map(|f| out.join(f)).collect())
}

/// Trains a forest on a CSV file and writes `model.json` (plus
/// `preprocess.json` when scaling).
pub fn train_files(data: &Path, target: &str, categorical: &[String], scale: bool, params: &ForestParams, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    let load = load_csv(data, target, categorical).map_err(|e| e.in_stage("load"))?;
    let mut table = load.table;
    let mut art = Artifacts::new(out)?;
    if scale {
        let spec = fit_preprocess(&table);
        table = apply_preprocess(&spec, &table)?;
        art.json("preprocess.json", &spec)?;
    }
    let forest = train_forest(&table, params, seed).map_err(|e| e.in_stage("train"))?;
    art.write("model.json", |w| forest.save_json(w))?;
    Ok(art.files.iter().map(|f| out.join(f)).collect())
}

pub fn load_model(path: &Path) -> Result<Forest> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Forest::load_json(std::io::BufReader::new(file))
}

pub fn load_preprocess(path: &Path) -> Result<PreprocessSpec> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

/// What `explain_one` needs beyond the model and the data.
#[derive(Debug, Clone)]
pub struct ExplainOptions {
    pub method: Method,
    pub index: usize,
    pub bandwidth: f64,
    pub methods: MethodsConfig,
    pub importance_forest: ForestParams,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEffect {
    pub feature: String,
    pub value: f64,
    /// Absent for attribution methods without a local slope.
    pub coefficient: Option<f64>,
    pub effect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub method: Method,
    pub index: usize,
    pub intercept: f64,
    pub prediction: f64,
    pub local_prediction: f64,
    /// Sorted by decreasing absolute effect.
    pub effects: Vec<FeatureEffect>,
}

impl InstanceReport {
    pub fn new(method: Method, e: &LocalExplanation, table: &DataTable) -> Self {
        let x = table.row(e.index);
        let effects = e
            .effect_order()
            .into_iter()
            .map(|j| FeatureEffect {
                feature: table.feature_names()[j].clone(),
                value: x[j],
                coefficient: method.is_surrogate().then(|| e.coefficients[j]),
                effect: e.effects[j],
            })
            .collect();
        Self {
            method,
            index: e.index,
            intercept: e.intercept,
            prediction: e.black_box_prediction,
            local_prediction: e.local_prediction,
            effects,
        }
    }
}

/// Explains one row of `table` (features already on the model's scale) with
/// the given model.
pub fn explain_one(model: &Forest, table: &DataTable, opts: &ExplainOptions) -> Result<InstanceReport> {
    if model.n_features() != table.d() {
        return Err(Error::DimensionMismatch {
            context: "model features vs data columns",
            expected: model.n_features(),
            actual: table.d(),
        });
    }
    let n = table.n();
    if opts.index >= n {
        return Err(Error::IndexOutOfRange { index: opts.index, len: n });
    }
    let seeds = Seeds::derive(opts.seed);
    let f = model.predict_rows(table.features()).map_err(|e| e.in_stage("predict"))?;
    let table = table.with_target(f)?;
    let params = LocalFitParams {
        bandwidth: opts.bandwidth,
        stepwise: opts.methods.stepwise(table.d()),
    };
    let importance = || -> Result<_> {
        let forest = train_forest(&table, &opts.importance_forest, seeds.importance_forest)?;
        local_importance(&forest, &table, seeds.importance).map_err(|e| e.in_stage("importance"))
    };
    let i = opts.index;
    let e = match opts.method {
        Method::Varimp => varimp::explain_instance(&table, &importance()?, i, &params)?,
        Method::ImlStyle => explain_iml_style(&table, i, &params)?,
        Method::LimeStyle => {
            let sampler = LimeSampler::new(model, opts.methods.lime_samples, seeds.lime)?;
            sampler.explain(i, &table.row(i).to_vec(), table.target()[i], &params)?
        }
        Method::Supclus => {
            let (_, b) = varimp::explain_all(&table, &importance()?, &params)?;
            let options = SpectralOptions {
                standardize: opts.methods.standardize_coefficients,
                restarts: opts.methods.spectral_restarts,
                ..SpectralOptions::default()
            };
            let sel = supclus::select_k(&table, &b, &params.stepwise, &opts.methods.k_range(n), seeds.clustering, &options)?;
            supclus::explain_instance(&sel.best, &table, i)?
        }
        Method::Shapley => {
            let sampler = ShapleySampler::new(model, &table)?;
            sampler
                .explain(i, &table.row(i).to_vec(), opts.methods.shapley_permutations, seeds.shapley.wrapping_add(i as u64))?
                .to_local()
        }
    };
    Ok(InstanceReport::new(opts.method, &e, &table))
}
