//! Individual-level exposure densities for the restricted-model TMLE.
//!
//! The restricted model conditions the exposure on `(E, W_i)` only. The
//! base fit regresses the community exposure on `(E, W_i, summary of the
//! other members' covariates)`, then the other-members block is averaged
//! out against the empirical distribution of observed profiles. The
//! pooled plan (the default) draws profiles from all communities, which
//! encodes the independence of `W_{-i}` from `W_i`; the within plan
//! averages only over a community's own leave-one-out profiles.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::HierarchicalDataset;
use crate::density::{
    fit_exposure_density, ConditionalDensityModel, DensityFitConfig, ExposureDensity, Support,
};
use crate::error::{Error, Result};
use crate::grid::default_k;
use crate::intervention::{capped_ratio, CleverValue, InterventionSpec};
use crate::select::hashed_fold;

/// Which empirical distribution the other-members profiles come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginalPlan {
    /// Profiles pooled across all communities (default).
    EmpiricalPooled,
    /// Profiles restricted to the unit's own community.
    EmpiricalWithin,
}

impl Default for MarginalPlan {
    fn default() -> Self {
        MarginalPlan::EmpiricalPooled
    }
}

/// Marginalization settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndividualDensityConfig {
    #[serde(default)]
    pub plan: MarginalPlan,
    /// Cap on profile draws; defaults to exact averaging below the
    /// evaluation threshold and 200 Monte Carlo draws above it.
    #[serde(default)]
    pub m_profiles: Option<usize>,
}

impl Default for IndividualDensityConfig {
    fn default() -> Self {
        IndividualDensityConfig { plan: MarginalPlan::EmpiricalPooled, m_profiles: None }
    }
}

/// Exact averaging is used while the pooled profile count stays at or
/// below this; beyond it the marginal falls back to Monte Carlo draws.
pub const EXACT_PROFILE_LIMIT: usize = 100_000;
const MC_PROFILE_DRAWS: usize = 200;

/// Marginalized individual-level exposure density `g_I(a | e, w_i)`.
#[derive(Debug, Clone)]
pub struct IndividualDensityModel {
    pub base: ConditionalDensityModel,
    pub plan: MarginalPlan,
    /// Other-members summary dimension; zero when every community has a
    /// single member (nothing to marginalize).
    pub others_dim: usize,
    pub mc_subsampled: bool,
    pub warnings: Vec<String>,
    pooled_profiles: Vec<Vec<f64>>,
    within_profiles: Vec<Vec<Vec<f64>>>,
}

impl IndividualDensityModel {
    /// Density view for one community; the pooled plan ignores the index.
    pub fn view(&self, community: usize) -> IndividualDensityView<'_> {
        IndividualDensityView { model: self, community }
    }

    fn profiles_for(&self, community: usize) -> &[Vec<f64>] {
        match self.plan {
            MarginalPlan::EmpiricalPooled => &self.pooled_profiles,
            MarginalPlan::EmpiricalWithin => &self.within_profiles[community],
        }
    }

    fn marginal_masses(&self, profiles: &[Vec<f64>], e: &[f64], w_i: &[f64]) -> Vec<f64> {
        if self.others_dim == 0 || profiles.is_empty() {
            return self.base.cell_masses(e, w_i);
        }
        let mut acc = vec![0.0; self.base.support().n_cells()];
        let mut w_full = Vec::with_capacity(w_i.len() + self.others_dim);
        for prof in profiles {
            w_full.clear();
            w_full.extend_from_slice(w_i);
            w_full.extend_from_slice(prof);
            for (o, m) in acc.iter_mut().zip(self.base.cell_masses(e, &w_full)) {
                *o += m;
            }
        }
        let inv = 1.0 / profiles.len() as f64;
        for o in &mut acc {
            *o *= inv;
        }
        acc
    }
}

/// The pooled marginal is context-free in the community index, so the
/// model itself evaluates as an exposure density.
impl ExposureDensity for IndividualDensityModel {
    fn support(&self) -> &Support {
        self.base.support()
    }

    fn cell_masses(&self, e: &[f64], w_i: &[f64]) -> Vec<f64> {
        self.marginal_masses(&self.pooled_profiles, e, w_i)
    }
}

/// Community-scoped view used by the within plan.
pub struct IndividualDensityView<'a> {
    model: &'a IndividualDensityModel,
    community: usize,
}

impl ExposureDensity for IndividualDensityView<'_> {
    fn support(&self) -> &Support {
        self.model.base.support()
    }

    fn cell_masses(&self, e: &[f64], w_i: &[f64]) -> Vec<f64> {
        self.model
            .marginal_masses(self.model.profiles_for(self.community), e, w_i)
    }
}

fn others_summary(ds: &HierarchicalDataset, j: usize, i: usize) -> Vec<f64> {
    let c = &ds.communities[j];
    let p = ds.w_dim();
    let n = c.n();
    if n == 1 {
        // no other members: fall back to the unit's own row
        return c.individuals[i].w.clone();
    }
    let mut acc = vec![0.0; p];
    for (l, ind) in c.individuals.iter().enumerate() {
        if l != i {
            for (o, &w) in acc.iter_mut().zip(&ind.w) {
                *o += w;
            }
        }
    }
    let inv = 1.0 / (n - 1) as f64;
    for o in &mut acc {
        *o *= inv;
    }
    acc
}

/// Fits the base conditional density on `(E, W_i, others-summary)` rows
/// and prepares the marginalization profiles.
pub fn fit_individual_density(
    ds: &HierarchicalDataset,
    density_cfg: &DensityFitConfig,
    cfg: &IndividualDensityConfig,
    seed: u64,
) -> Result<IndividualDensityModel> {
    let mut warnings = Vec::new();
    if !ds.constant_n() {
        warnings.push(
            "community sizes vary; the restricted model assumes a constant number of individuals"
                .to_string(),
        );
    }
    let max_n = ds.communities.iter().map(|c| c.n()).max().unwrap_or(1);
    let others_dim = if max_n == 1 { 0 } else { ds.w_dim() };

    let mut a = Vec::new();
    let mut covs = Vec::new();
    let mut fold_ids = Vec::new();
    let mut pooled_profiles = Vec::new();
    let mut within_profiles: Vec<Vec<Vec<f64>>> = Vec::with_capacity(ds.j());
    for (j, c) in ds.communities.iter().enumerate() {
        let fold = hashed_fold(&c.id, density_cfg.cv_folds);
        let mut community_profiles = Vec::with_capacity(c.n());
        for i in 0..c.n() {
            let mut row = c.e.clone();
            row.extend_from_slice(&c.individuals[i].w);
            let prof = if others_dim > 0 {
                let s = others_summary(ds, j, i);
                row.extend_from_slice(&s);
                s
            } else {
                Vec::new()
            };
            a.push(c.a);
            covs.push(row);
            fold_ids.push(fold);
            pooled_profiles.push(prof.clone());
            community_profiles.push(prof);
        }
        within_profiles.push(community_profiles);
    }

    // Bin count keyed to the number of independent exposures, not rows.
    let resolved = DensityFitConfig {
        k_bins: Some(density_cfg.k_bins.unwrap_or_else(|| default_k(ds.j()))),
        fold_ids: Some(fold_ids),
        ..density_cfg.clone()
    };
    let base = fit_exposure_density(&a, &covs, &resolved)?;

    let mut mc_subsampled = false;
    if others_dim > 0 {
        let target = match cfg.m_profiles {
            Some(m) => {
                if m == 0 {
                    return Err(Error::Config("m_profiles must be positive".into()));
                }
                Some(m)
            }
            None if pooled_profiles.len() > EXACT_PROFILE_LIMIT => Some(MC_PROFILE_DRAWS),
            None => None,
        };
        if let Some(m) = target {
            if m < pooled_profiles.len() {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                pooled_profiles.shuffle(&mut rng);
                pooled_profiles.truncate(m);
                mc_subsampled = true;
            }
        }
    } else {
        pooled_profiles = vec![Vec::new()];
        within_profiles = vec![vec![Vec::new()]; ds.j()];
    }

    Ok(IndividualDensityModel {
        base,
        plan: cfg.plan,
        others_dim,
        mc_subsampled,
        warnings,
        pooled_profiles,
        within_profiles,
    })
}

/// Individual-level clever covariate `g*_I / g_I` at an observed
/// exposure, truncated at `cap`.
pub fn individual_clever_covariate(
    model: &IndividualDensityModel,
    community: usize,
    spec: &InterventionSpec,
    a: f64,
    e: &[f64],
    w_i: &[f64],
    cap: f64,
) -> Result<CleverValue> {
    let view = model.view(community);
    capped_ratio(spec, &view, a, e, w_i, cap)
}
