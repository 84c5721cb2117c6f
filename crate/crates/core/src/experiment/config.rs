use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Synthetic;
use crate::error::{Error, Result};
use crate::forest::ForestParams;
use crate::locreg::StepwiseConfig;

pub const DEFAULT_BANDWIDTHS: [f64; 7] = [0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0];
pub const DEFAULT_N: usize = 1000;
pub const DEFAULT_D: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Varimp,
    Supclus,
    ImlStyle,
    LimeStyle,
    Shapley,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Varimp,
        Method::Supclus,
        Method::ImlStyle,
        Method::LimeStyle,
        Method::Shapley,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Varimp => "varimp",
            Method::Supclus => "supclus",
            Method::ImlStyle => "iml_style",
            Method::LimeStyle => "lime_style",
            Method::Shapley => "shapley",
        }
    }

    /// Methods that fit a local linear model with coefficients.
    pub fn is_surrogate(self) -> bool {
        self != Method::Shapley
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}` (expected one of varimp, supclus, iml_style, lime_style, shapley)")))
    }
}

/// One dataset: either a synthetic generator or a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub synthetic: Option<u32>,
    /// Rows per half for synthetic data.
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    /// Overrides the generator seed derived from the global seed.
    pub seed: Option<u64>,
    pub csv: Option<PathBuf>,
    pub target: Option<String>,
    #[serde(default)]
    pub categorical: Vec<String>,
    /// Min-max scaling fitted on the training half; defaults to on for CSV
    /// data and off for synthetic data, which is generated on the unit scale.
    pub scale: Option<bool>,
}

fn default_n() -> usize {
    DEFAULT_N
}

fn default_d() -> usize {
    DEFAULT_D
}

impl DatasetSpec {
    pub fn synthetic(id: u32, n: usize, d: usize) -> Self {
        Self {
            synthetic: Some(id),
            n,
            d,
            seed: None,
            csv: None,
            target: None,
            categorical: Vec::new(),
            scale: None,
        }
    }

    pub fn csv(path: impl Into<PathBuf>, target: &str, categorical: Vec<String>) -> Self {
        Self {
            synthetic: None,
            n: DEFAULT_N,
            d: DEFAULT_D,
            seed: None,
            csv: Some(path.into()),
            target: Some(target.to_string()),
            categorical,
            scale: None,
        }
    }

    pub fn name(&self) -> String {
        match (&self.synthetic, &self.csv) {
            (Some(id), _) => format!("synthetic_{id}"),
            (None, Some(p)) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "data".into()),
            (None, None) => "unnamed".into(),
        }
    }

    pub fn scaled(&self) -> bool {
        self.scale.unwrap_or(self.csv.is_some())
    }

    fn validate(&self) -> Result<()> {
        match (&self.synthetic, &self.csv) {
            (Some(_), Some(_)) => Err(Error::Config("a dataset is either `synthetic` or `csv`, not both".into())),
            (None, None) => Err(Error::Config("a dataset needs `synthetic = <id>` or `csv = <path>`".into())),
            (Some(id), None) => {
                let kind = Synthetic::from_id(*id)?;
                if self.d < kind.min_features() {
                    return Err(Error::Config(format!(
                        "synthetic dataset {id} needs d >= {}, got {}",
                        kind.min_features(),
                        self.d
                    )));
                }
                if self.n < 2 {
                    return Err(Error::Config(format!("n must be at least 2, got {}", self.n)));
                }
                Ok(())
            }
            (None, Some(_)) => {
                if self.target.is_none() {
                    return Err(Error::Config("a CSV dataset needs `target = <column>`".into()));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodsConfig {
    pub run: Vec<Method>,
    pub bandwidths: Vec<f64>,
    /// Stepwise feature cap; `None` means all features.
    pub max_features: Option<usize>,
    /// Stop stepwise once additions stop helping instead of always filling the cap.
    pub early_stopping: bool,
    pub k_min: usize,
    pub k_max: usize,
    pub spectral_restarts: usize,
    pub standardize_coefficients: bool,
    pub lime_samples: usize,
    pub shapley_permutations: usize,
    pub ice_grid: usize,
    pub slope_points: usize,
    pub slope_halfwidth: f64,
    pub slope_features: Vec<usize>,
}

impl Default for MethodsConfig {
    fn default() -> Self {
        Self {
            run: vec![Method::Varimp],
            bandwidths: DEFAULT_BANDWIDTHS.to_vec(),
            max_features: None,
            early_stopping: true,
            k_min: 1,
            k_max: 5,
            spectral_restarts: 20,
            standardize_coefficients: false,
            lime_samples: 1000,
            shapley_permutations: 50,
            ice_grid: crate::ice::DEFAULT_GRID_SIZE,
            slope_points: 100,
            slope_halfwidth: 0.05,
            slope_features: vec![0],
        }
    }
}

impl MethodsConfig {
    pub fn stepwise(&self, d: usize) -> StepwiseConfig {
        let m = self.max_features.unwrap_or(d).min(d);
        if self.early_stopping {
            StepwiseConfig::new(m)
        } else {
            StepwiseConfig::exhaustive(m)
        }
    }

    pub fn k_range(&self, n: usize) -> Vec<usize> {
        (self.k_min..=self.k_max.min(n)).collect()
    }

    pub fn runs(&self, m: Method) -> bool {
        self.run.contains(&m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub datasets: Vec<DatasetSpec>,
    /// The model being explained, trained on the training half.
    #[serde(default)]
    pub black_box: ForestParams,
    /// The forest fitted to the black-box predictions for local importance.
    #[serde(default)]
    pub importance_forest: ForestParams,
    #[serde(default)]
    pub methods: MethodsConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: default_out(),
            datasets: Vec::new(),
            black_box: ForestParams::default(),
            importance_forest: ForestParams::default(),
            methods: MethodsConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Every synthetic dataset with all five methods.
    pub fn full_sweep(n: usize, d: usize) -> Self {
        Self {
            datasets: Synthetic::ALL.iter().map(|s| DatasetSpec::synthetic(s.id(), n, d)).collect(),
            methods: MethodsConfig {
                run: Method::ALL.to_vec(),
                ..MethodsConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::Config("no datasets configured".into()));
        }
        for ds in &self.datasets {
            ds.validate()?;
        }
        let mut names: Vec<String> = self.datasets.iter().map(DatasetSpec::name).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("dataset names must be unique".into()));
        }
        let m = &self.methods;
        if m.run.is_empty() {
            return Err(Error::Config("no methods configured".into()));
        }
        if m.bandwidths.is_empty() || m.bandwidths.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(Error::Config(format!("bandwidths must be positive and finite, got {:?}", m.bandwidths)));
        }
        if m.runs(Method::Supclus) && (m.k_min == 0 || m.k_min > m.k_max) {
            return Err(Error::Config(format!("k range {}..={} must start at 1 or more and be nonempty", m.k_min, m.k_max)));
        }
        if m.max_features == Some(0) {
            return Err(Error::Config("max_features must be positive".into()));
        }
        if m.runs(Method::Shapley) && m.shapley_permutations == 0 {
            return Err(Error::Config("shapley_permutations must be positive".into()));
        }
        if !(m.slope_halfwidth.is_finite() && m.slope_halfwidth > 0.0) {
            return Err(Error::Config("slope_halfwidth must be positive".into()));
        }
        for p in [&self.black_box, &self.importance_forest] {
            if p.n_trees == 0 || p.node_size == 0 {
                return Err(Error::Config("forests need n_trees >= 1 and node_size >= 1".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_nested_sections() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            seed = 9
            out = "o"
            [[datasets]]
            synthetic = 2
            n = 50
            d = 4
            [black_box]
            n_trees = 20
            node_size = 5
            [methods]
            run = ["varimp", "lime_style"]
            bandwidths = [0.5, 1.0]
            "#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.datasets[0].name(), "synthetic_2");
        assert_eq!(cfg.black_box.n_trees, 20);
        assert_eq!(cfg.importance_forest, ForestParams::default());
        assert_eq!(cfg.methods.run, vec![Method::Varimp, Method::LimeStyle]);
        assert_eq!(cfg.methods.k_max, 5);
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        let base = ExperimentConfig::full_sweep(20, 4);
        base.validate().unwrap();
        let mut c = base.clone();
        c.methods.bandwidths = vec![0.5, -1.0];
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.datasets[0].d = 1;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.methods.k_min = 0;
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::from_toml("[methods]\nrun = [\"nope\"]").is_err());
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
    }
}
