//! Run configuration: one structured JSON document drives simulation,
//! estimation, and benchmarking. Flags override only `seed`, `threads`,
//! and the output path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::WSummary;
use crate::density::{DensityFitConfig, ExposureKind};
use crate::error::{Error, Result};
use crate::grid::BinStrategy;
use crate::individual::IndividualDensityConfig;
use crate::intervention::{InterventionSpec, NuSpec, TableStrata};
use crate::outcome::{FeaturePlan, LossKind, NeighborMap, OutcomeFitConfig, OutcomeLevel};
use crate::select::{default_candidates, CandidateKind};
use crate::simulate::DgpSpec;
use crate::tmle::{Level, TargetingConfig};

/// Exposure-density block.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    pub k_bins: Option<usize>,
    pub strategy: BinStrategy,
    pub candidates: Vec<CandidateKind>,
    pub cv_folds: usize,
    pub hazard_clip: f64,
    pub exposure: Option<ExposureKind>,
    pub w_summary: WSummary,
    /// Replaces the fit with a known covariate-free binary mechanism.
    pub fixed_binary_p: Option<f64>,
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig {
            k_bins: None,
            strategy: BinStrategy::EqualWidth,
            candidates: default_candidates(),
            cv_folds: 5,
            hazard_clip: 1e-6,
            exposure: None,
            w_summary: WSummary::AlphaMean,
            fixed_binary_p: None,
        }
    }
}

impl DensityConfig {
    pub fn fit_config(&self, fold_ids: Option<Vec<usize>>) -> DensityFitConfig {
        DensityFitConfig {
            k_bins: self.k_bins,
            strategy: self.strategy,
            candidates: self.candidates.clone(),
            cv_folds: self.cv_folds,
            hazard_clip: self.hazard_clip,
            exposure: self.exposure,
            fold_ids,
        }
    }
}

/// Outcome-regression block.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutcomeConfig {
    pub level: OutcomeLevel,
    pub loss: LossKind,
    pub candidates: Vec<CandidateKind>,
    pub cv_folds: usize,
    /// Defaults by level: community summaries, or each unit's own row.
    pub feature_plan: Option<FeaturePlan>,
    pub w_summary: WSummary,
    pub neighbor_map_path: Option<PathBuf>,
}

impl Default for OutcomeConfig {
    fn default() -> Self {
        OutcomeConfig {
            level: OutcomeLevel::Community,
            loss: LossKind::Bernoulli,
            candidates: default_candidates(),
            cv_folds: 5,
            feature_plan: None,
            w_summary: WSummary::AlphaMean,
            neighbor_map_path: None,
        }
    }
}

impl OutcomeConfig {
    pub fn fit_config(&self, base_dir: &Path) -> Result<OutcomeFitConfig> {
        let feature_plan = self.feature_plan.unwrap_or(match self.level {
            OutcomeLevel::Community => FeaturePlan::CommunitySummaries,
            OutcomeLevel::PooledIndividual => FeaturePlan::OwnW,
        });
        let neighbors = match &self.neighbor_map_path {
            None => None,
            Some(p) => {
                let text = std::fs::read_to_string(resolve(base_dir, p))?;
                Some(serde_json::from_str::<NeighborMap>(&text)?)
            }
        };
        Ok(OutcomeFitConfig {
            level: self.level,
            loss: self.loss,
            candidates: self.candidates.clone(),
            cv_folds: self.cv_folds,
            feature_plan,
            w_summary: self.w_summary,
            neighbors,
        })
    }
}

/// Intervention block; the table variant points at a CSV of
/// `stratum_key,a,prob` rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InterventionConfig {
    Static { name: String, a_star: f64 },
    Shift { name: String, nu: NuSpec },
    TruncatedShift {
        name: String,
        nu: NuSpec,
        /// Defaults to the minimum observed exposure.
        #[serde(default)]
        floor: Option<f64>,
    },
    Table {
        name: String,
        table_path: PathBuf,
        #[serde(default)]
        stratum_col: Option<usize>,
    },
}

impl InterventionConfig {
    pub fn name(&self) -> &str {
        match self {
            InterventionConfig::Static { name, .. }
            | InterventionConfig::Shift { name, .. }
            | InterventionConfig::TruncatedShift { name, .. }
            | InterventionConfig::Table { name, .. } => name,
        }
    }

    /// Resolves defaults and file references into a concrete spec.
    pub fn resolve(&self, observed_a: &[f64], base_dir: &Path) -> Result<InterventionSpec> {
        Ok(match self {
            InterventionConfig::Static { a_star, .. } => {
                InterventionSpec::Static { a_star: *a_star }
            }
            InterventionConfig::Shift { nu, .. } => InterventionSpec::Shift { nu: nu.clone() },
            InterventionConfig::TruncatedShift { nu, floor, .. } => {
                let floor = match floor {
                    Some(f) => *f,
                    None => observed_a.iter().cloned().fold(f64::INFINITY, f64::min),
                };
                InterventionSpec::TruncatedShift { nu: nu.clone(), floor }
            }
            InterventionConfig::Table { table_path, stratum_col, .. } => {
                InterventionSpec::Table {
                    strata: read_table(&resolve(base_dir, table_path))?,
                    stratum_col: *stratum_col,
                }
            }
        })
    }
}

fn read_table(path: &Path) -> Result<TableStrata> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["stratum_key", "a", "prob"] {
        return Err(Error::Schema("table header must be stratum_key,a,prob".into()));
    }
    let mut strata = TableStrata::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let a: f64 = rec[1]
            .trim()
            .parse()
            .map_err(|_| Error::Parse { line, msg: format!("bad a value {:?}", &rec[1]) })?;
        let prob: f64 = rec[2]
            .trim()
            .parse()
            .map_err(|_| Error::Parse { line, msg: format!("bad prob value {:?}", &rec[2]) })?;
        strata.entry(rec[0].trim().to_string()).or_default().push((a, prob));
    }
    Ok(strata)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Benchmark block: replicated estimation against the oracle.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub replicates: usize,
    #[serde(default = "default_oracle_draws")]
    pub oracle_draws: usize,
}

fn default_oracle_draws() -> usize {
    1_000_000
}

/// Top-level run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub dgp: Option<DgpSpec>,
    #[serde(default)]
    pub outcome_bounds: Option<(f64, f64)>,
    pub interventions: Vec<InterventionConfig>,
    #[serde(default)]
    pub contrasts: Vec<(String, String)>,
    #[serde(default)]
    pub density: DensityConfig,
    #[serde(default)]
    pub outcome: OutcomeConfig,
    #[serde(default)]
    pub targeting: TargetingConfig,
    #[serde(default)]
    pub individual: IndividualDensityConfig,
    #[serde(default)]
    pub benchmark: Option<BenchmarkConfig>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Serialize per-community influence-curve values into reports.
    #[serde(default)]
    pub emit_eic: bool,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.input, &self.dgp) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("give either input or dgp, not both".into()))
            }
            (None, None) => return Err(Error::Config("one of input or dgp is required".into())),
            _ => {}
        }
        if self.interventions.is_empty() {
            return Err(Error::Config("at least one intervention is required".into()));
        }
        let mut names: Vec<&str> = self.interventions.iter().map(|i| i.name()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.interventions.len() {
            return Err(Error::Config("intervention names must be unique".into()));
        }
        for (a, b) in &self.contrasts {
            for n in [a, b] {
                if !self.interventions.iter().any(|i| i.name() == n) {
                    return Err(Error::Config(format!("contrast references unknown intervention {n}")));
                }
            }
        }
        self.targeting.validate()?;
        if self.targeting.level == Level::Individual
            && self.outcome.level != OutcomeLevel::PooledIndividual
        {
            return Err(Error::Config(
                "individual-level targeting requires outcome.level = pooled_individual".into(),
            ));
        }
        if let Some(b) = &self.benchmark {
            if b.replicates == 0 {
                return Err(Error::Config("benchmark.replicates must be positive".into()));
            }
            if self.dgp.is_none() {
                return Err(Error::Config("benchmark requires a dgp block".into()));
            }
        }
        if let Some(p) = self.density.fixed_binary_p {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("fixed_binary_p {p} outside [0,1]")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> serde_json::Value {
        serde_json::json!({
            "dgp": {
                "j_communities": 20,
                "n_individuals": {"kind": "fixed", "n": 5},
                "f_w": [{"intercept": 0.0, "sd": 1.0}],
                "f_a": {"kind": "logistic", "intercept": 0.0},
                "f_y": {
                    "link": "expit", "intercept": 0.0, "a_coef": 0.5,
                    "noise": {"kind": "bernoulli"}
                }
            },
            "interventions": [{"kind": "static", "name": "treat", "a_star": 1.0}]
        })
    }

    #[test]
    fn minimal_config_parses_and_validates() {
        let cfg: RunConfig = serde_json::from_value(minimal_json()).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.interventions[0].name(), "treat");
        assert_eq!(cfg.density.cv_folds, 5);
    }

    #[test]
    fn both_input_and_dgp_rejected() {
        let mut v = minimal_json();
        v["input"] = serde_json::json!("data.csv");
        let cfg: RunConfig = serde_json::from_value(v).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_fields_rejected() {
        let mut v = minimal_json();
        v["tyop"] = serde_json::json!(1);
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
    }

    #[test]
    fn contrast_names_checked() {
        let mut v = minimal_json();
        v["contrasts"] = serde_json::json!([["treat", "nope"]]);
        let cfg: RunConfig = serde_json::from_value(v).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn individual_targeting_needs_pooled_outcome() {
        let mut v = minimal_json();
        v["targeting"] = serde_json::json!({"level": "individual"});
        let cfg: RunConfig = serde_json::from_value(v).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn truncated_shift_floor_defaults_to_min() {
        let ic = InterventionConfig::TruncatedShift {
            name: "t".into(),
            nu: NuSpec::Constant(0.5),
            floor: None,
        };
        let spec = ic.resolve(&[3.0, 1.5, 2.0], Path::new(".")).unwrap();
        match spec {
            InterventionSpec::TruncatedShift { floor, .. } => assert_eq!(floor, 1.5),
            _ => panic!(),
        }
    }
}
