//! The per-dataset protocol: split, train the black box on one half, explain
//! its predictions on the other half and score every explainer.

use ndarray::{Array1, Array2};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{DatasetSpec, Method, MethodsConfig};
use crate::baselines::{explain_iml_all, LimeSampler, ShapleyExplanation, ShapleySampler};
use crate::data::{apply_preprocess, fit_preprocess, load_csv, split_indices, DataTable, GroundTruth, PreprocessSpec, Synthetic};
use crate::error::{Error, Result};
use crate::evalx::{evaluate, EvalReport, References, RunMetadata};
use crate::forest::{local_importance, train_forest, Forest, ForestParams, ImportanceMatrix};
use crate::ice::ice_effects;
use crate::model::Predictor;
use crate::supclus::{self, KSelection, SpectralOptions};
use crate::varimp::{self, CoefficientMatrix, LocalExplanation, LocalFitParams};

/// Independent seeds for every random stage, all derived from one global seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub global: u64,
    pub data: u64,
    pub split: u64,
    pub black_box: u64,
    pub importance_forest: u64,
    pub importance: u64,
    pub lime: u64,
    pub shapley: u64,
    pub clustering: u64,
    pub slope_plot: u64,
}

impl Seeds {
    pub fn derive(global: u64) -> Self {
        let mut r = ChaCha8Rng::seed_from_u64(global);
        Self {
            global,
            data: r.next_u64(),
            split: r.next_u64(),
            black_box: r.next_u64(),
            importance_forest: r.next_u64(),
            importance: r.next_u64(),
            lime: r.next_u64(),
            shapley: r.next_u64(),
            clustering: r.next_u64(),
            slope_plot: r.next_u64(),
        }
    }
}

/// A dataset after splitting, scaling and black-box training.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub name: String,
    pub seeds: Seeds,
    /// Training half with observed targets.
    pub train: DataTable,
    /// Interpretation half; its target column holds the black-box predictions.
    pub explain: DataTable,
    /// Observed targets of the interpretation half.
    pub observed: Array1<f64>,
    pub truth: Option<GroundTruth>,
    pub preprocess: Option<PreprocessSpec>,
    pub dropped_rows: usize,
    pub black_box: Forest,
    pub importance_forest: Forest,
    pub importance: ImportanceMatrix,
}

/// Reads or generates the raw rows, splits them and applies scaling.
pub fn load_dataset(spec: &DatasetSpec, seeds: &Seeds) -> Result<(DataTable, DataTable, Option<GroundTruth>, Option<PreprocessSpec>, usize)> {
    let (all, truth, dropped) = match (&spec.synthetic, &spec.csv) {
        (Some(id), _) => {
            let (t, g) = Synthetic::from_id(*id)?.generate(2 * spec.n, spec.d, spec.seed.unwrap_or(seeds.data))?;
            (t, Some(g), 0)
        }
        (None, Some(path)) => {
            let target = spec.target.as_deref().ok_or_else(|| Error::Config("CSV dataset without target".into()))?;
            let load = load_csv(path, target, &spec.categorical)?;
            if load.dropped_rows > 0 {
                log::warn!("{}: dropped {} rows with missing values", path.display(), load.dropped_rows);
            }
            (load.table, None, load.dropped_rows)
        }
        (None, None) => return Err(Error::Config("dataset has no source".into())),
    };
    let (train_rows, explain_rows) = split_indices(all.n(), seeds.split)?;
    let mut train = all.select_rows(&train_rows);
    let mut explain = all.select_rows(&explain_rows);
    let truth = truth.map(|g| g.select_rows(&explain_rows));
    let preprocess = if spec.scaled() {
        let p = fit_preprocess(&train);
        train = apply_preprocess(&p, &train)?;
        explain = apply_preprocess(&p, &explain)?;
        Some(p)
    } else {
        None
    };
    Ok((train, explain, truth, preprocess, dropped))
}

pub fn prepare(spec: &DatasetSpec, black_box: &ForestParams, importance_forest: &ForestParams, seeds: Seeds) -> Result<Prepared> {
    let (train, explain_obs, truth, preprocess, dropped_rows) = load_dataset(spec, &seeds).map_err(|e| e.in_stage("load"))?;
    let forest = train_forest(&train, black_box, seeds.black_box).map_err(|e| e.in_stage("train"))?;
    let prepared = with_black_box(spec.name(), seeds, train, explain_obs, truth, forest, importance_forest)?;
    Ok(Prepared {
        preprocess,
        dropped_rows,
        ..prepared
    })
}

/// Labels the interpretation half with `black_box` and computes local importance.
pub fn with_black_box(
    name: String,
    seeds: Seeds,
    train: DataTable,
    explain_obs: DataTable,
    truth: Option<GroundTruth>,
    black_box: Forest,
    importance_params: &ForestParams,
) -> Result<Prepared> {
    let f = black_box.predict_rows(explain_obs.features()).map_err(|e| e.in_stage("predict"))?;
    let observed = explain_obs.target().clone();
    let explain = explain_obs.with_target(f)?;
    let importance_forest = train_forest(&explain, importance_params, seeds.importance_forest).map_err(|e| e.in_stage("importance"))?;
    let importance = local_importance(&importance_forest, &explain, seeds.importance).map_err(|e| e.in_stage("importance"))?;
    Ok(Prepared {
        name,
        seeds,
        train,
        explain,
        observed,
        truth,
        preprocess: None,
        dropped_rows: 0,
        black_box,
        importance_forest,
        importance,
    })
}

impl Prepared {
    pub fn ice_effects(&self, grid_size: usize) -> Result<Array2<f64>> {
        ice_effects(&self.black_box, &self.explain, grid_size)
            .map(|(_, effects)| effects)
            .map_err(|e| e.in_stage("ice"))
    }
}

/// Explanations of one method at one bandwidth, with their scores.
#[derive(Debug, Clone)]
pub struct BandwidthRun {
    pub method: Method,
    pub bandwidth: f64,
    pub explanations: Vec<LocalExplanation>,
    pub report: EvalReport,
}

fn metadata(p: &Prepared, stepwise_cap: usize) -> RunMetadata {
    RunMetadata {
        dataset: p.name.clone(),
        seed: p.seeds.global,
        max_features: Some(stepwise_cap),
        ..RunMetadata::default()
    }
}

/// Runs a kernel-weighted method (varimp, iml_style or lime_style) at every
/// bandwidth of the grid.
pub fn scan_bandwidths(p: &Prepared, method: Method, cfg: &MethodsConfig, ice: Option<&Array2<f64>>) -> Result<Vec<BandwidthRun>> {
    let stage = format!("{method}");
    let stepwise = cfg.stepwise(p.explain.d());
    let lime = match method {
        Method::LimeStyle => Some(LimeSampler::new(&p.black_box, cfg.lime_samples, p.seeds.lime).map_err(|e| e.in_stage(stage.clone()))?),
        Method::Varimp | Method::ImlStyle => None,
        other => return Err(Error::invalid("method", format!("{other} has no bandwidth"))),
    };
    cfg.bandwidths
        .iter()
        .map(|&h| {
            let params = LocalFitParams { bandwidth: h, stepwise };
            let explanations = match (&lime, method) {
                (Some(s), _) => s.explain_all(&p.explain, &params)?,
                (None, Method::Varimp) => varimp::explain_all(&p.explain, &p.importance, &params)?.0,
                (None, _) => explain_iml_all(&p.explain, &params)?,
            };
            let meta = RunMetadata {
                bandwidth: Some(h),
                samples: lime.as_ref().map(LimeSampler::n_samples),
                ..metadata(p, stepwise.max_features)
            };
            let report = evaluate(
                method.name(),
                &explanations,
                References {
                    truth: p.truth.as_ref(),
                    ice_effects: ice,
                },
                true,
                meta,
            )?;
            Ok(BandwidthRun {
                method,
                bandwidth: h,
                explanations,
                report,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage(format!("{stage} (bandwidth scan)")))
}

/// Lowest coefficient MSE when ground truth exists, else highest ICE-effect
/// correlation; earlier grid points win ties.
pub fn best_bandwidth(runs: &[BandwidthRun]) -> Option<usize> {
    let score = |r: &BandwidthRun| match (r.report.mse_coefficients, r.report.ice_effect_correlation) {
        (Some(mse), _) => Some(-mse),
        (None, Some(c)) => Some(c.r),
        (None, None) => None,
    };
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in runs.iter().enumerate() {
        if let Some(s) = score(r) {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    best.map(|(i, _)| i).or(if runs.is_empty() { None } else { Some(0) })
}

#[derive(Debug, Clone)]
pub struct ClusterRun {
    pub selection: KSelection,
    /// Per candidate k, in range order.
    pub explanations: Vec<Vec<LocalExplanation>>,
    pub reports: Vec<EvalReport>,
    /// Bandwidth of the VarImp coefficients that were clustered.
    pub source_bandwidth: f64,
}

impl ClusterRun {
    pub fn best_index(&self) -> usize {
        self.selection
            .candidates
            .iter()
            .position(|c| c.k == self.selection.best.k)
            .unwrap_or(0)
    }
}

/// Clusters VarImp coefficients for each k in the configured range.
pub fn run_supclus(p: &Prepared, source: &BandwidthRun, cfg: &MethodsConfig, ice: Option<&Array2<f64>>) -> Result<ClusterRun> {
    let stepwise = cfg.stepwise(p.explain.d());
    let b = CoefficientMatrix::from_explanations(&source.explanations);
    let options = SpectralOptions {
        standardize: cfg.standardize_coefficients,
        restarts: cfg.spectral_restarts,
        ..SpectralOptions::default()
    };
    let k_range = cfg.k_range(p.explain.n());
    let run = || -> Result<ClusterRun> {
        let selection = supclus::select_k(&p.explain, &b, &stepwise, &k_range, p.seeds.clustering, &options)?;
        let mut explanations = Vec::new();
        let mut reports = Vec::new();
        for sol in &selection.candidates {
            let ex = supclus::explain_all(sol, &p.explain)?;
            let meta = RunMetadata {
                bandwidth: Some(source.bandwidth),
                k: Some(sol.k),
                ..metadata(p, stepwise.max_features)
            };
            reports.push(evaluate(
                Method::Supclus.name(),
                &ex,
                References {
                    truth: p.truth.as_ref(),
                    ice_effects: ice,
                },
                true,
                meta,
            )?);
            explanations.push(ex);
        }
        Ok(ClusterRun {
            selection,
            explanations,
            reports,
            source_bandwidth: source.bandwidth,
        })
    };
    run().map_err(|e| e.in_stage("supclus"))
}

/// Monte-Carlo Shapley values of every instance against the interpretation half.
pub fn run_shapley(p: &Prepared, cfg: &MethodsConfig, ice: Option<&Array2<f64>>) -> Result<(Vec<ShapleyExplanation>, EvalReport)> {
    let run = || -> Result<(Vec<ShapleyExplanation>, EvalReport)> {
        let sampler = ShapleySampler::new(&p.black_box, &p.explain)?;
        let values = sampler.explain_all(&p.explain, cfg.shapley_permutations, p.seeds.shapley)?;
        let locals: Vec<LocalExplanation> = values.iter().map(ShapleyExplanation::to_local).collect();
        let meta = RunMetadata {
            dataset: p.name.clone(),
            seed: p.seeds.global,
            samples: Some(cfg.shapley_permutations),
            ..RunMetadata::default()
        };
        let report = evaluate(
            Method::Shapley.name(),
            &locals,
            References {
                truth: p.truth.as_ref(),
                ice_effects: ice,
            },
            false,
            meta,
        )?;
        Ok((values, report))
    };
    run().map_err(|e| e.in_stage("shapley"))
}
