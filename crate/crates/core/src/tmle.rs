//! The targeting step and plug-in estimator.
//!
//! Targeting updates the initial outcome fit along a one-parameter
//! logistic fluctuation whose score is the outcome component of the
//! efficient influence curve, so the updated plug-in estimate solves the
//! influence-curve estimating equation. Two equivalent fluctuations are
//! provided: the clever-covariate submodel
//! `logit Q(eps) = logit Q + eps * H` with `H = g*/ghat` at the observed
//! exposure, and the weighted-intercept submodel
//! `logit Q(eps) = logit Q + eps` fitted with weights `H`, which is less
//! fragile under practical positivity violations. Both solve the same
//! score equation `sum w H (y - Q*) = 0`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{HierarchicalDataset, WSummary};
use crate::density::ExposureDensity;
use crate::error::{Error, Result};
use crate::individual::IndividualDensityModel;
use crate::intervention::{capped_ratio, gstar_atoms, gstar_sample, CleverValue, InterventionSpec};
use crate::outcome::{OutcomeModel, PREDICTION_CLIP};
use crate::regress::{bernoulli_nll, clamp_prob, expit, logit};

/// Fluctuation submodel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    CleverCovariate,
    WeightedIntercept,
}

impl Default for Variant {
    fn default() -> Self {
        Variant::CleverCovariate
    }
}

/// Whether targeting runs on community rows or pooled individual rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Community,
    Individual,
}

impl Default for Level {
    fn default() -> Self {
        Level::Community
    }
}

/// How the integral of the targeted regression against `g*` is computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Integration {
    /// Exact sum over the intervention's support atoms.
    BinSum,
    MonteCarlo { draws: usize, seed: u64 },
}

impl Default for Integration {
    fn default() -> Self {
        Integration::BinSum
    }
}

/// Targeting configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetingConfig {
    #[serde(default)]
    pub variant: Variant,
    #[serde(default)]
    pub level: Level,
    #[serde(default)]
    pub integration: Integration,
    #[serde(default = "default_ratio_cap")]
    pub ratio_cap: f64,
}

fn default_ratio_cap() -> f64 {
    50.0
}

impl Default for TargetingConfig {
    fn default() -> Self {
        TargetingConfig {
            variant: Variant::default(),
            level: Level::default(),
            integration: Integration::default(),
            ratio_cap: default_ratio_cap(),
        }
    }
}

impl TargetingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio_cap > 1.0) {
            return Err(Error::Config(format!(
                "ratio_cap must exceed 1, got {}",
                self.ratio_cap
            )));
        }
        if let Integration::MonteCarlo { draws, .. } = self.integration {
            if draws < 100 {
                return Err(Error::Config(format!(
                    "Monte Carlo integration needs at least 100 draws, got {draws}"
                )));
            }
        }
        Ok(())
    }
}

/// Reference density handle: the community-level fit, or the
/// marginalized individual-level fit (whose within-plan view depends on
/// the community).
pub enum GhatRef<'a> {
    Community(&'a dyn ExposureDensity),
    Individual(&'a IndividualDensityModel),
}

enum GhatView<'a> {
    Direct(&'a dyn ExposureDensity),
    Marginal(crate::individual::IndividualDensityView<'a>),
}

impl GhatRef<'_> {
    fn view(&self, community: usize) -> GhatView<'_> {
        match self {
            GhatRef::Community(g) => GhatView::Direct(*g),
            GhatRef::Individual(m) => GhatView::Marginal(m.view(community)),
        }
    }
}

impl ExposureDensity for GhatView<'_> {
    fn support(&self) -> &crate::density::Support {
        match self {
            GhatView::Direct(g) => g.support(),
            GhatView::Marginal(v) => v.support(),
        }
    }

    fn cell_masses(&self, e: &[f64], w: &[f64]) -> Vec<f64> {
        match self {
            GhatView::Direct(g) => g.cell_masses(e, w),
            GhatView::Marginal(v) => v.cell_masses(e, w),
        }
    }
}

/// Clever covariate `min(g*/ghat, cap)` at an observed exposure.
pub fn clever_covariate(
    spec: &InterventionSpec,
    ghat: &dyn ExposureDensity,
    a: f64,
    e: &[f64],
    w: &[f64],
    ratio_cap: f64,
) -> Result<CleverValue> {
    capped_ratio(spec, ghat, a, e, w, ratio_cap)
}

/// Integral of `predict` against `g*(. | e, w)`. The exact route sums
/// over the intervention's support atoms; the Monte Carlo route samples
/// and reports its standard error.
pub fn integrate_over_gstar(
    predict: &dyn Fn(f64) -> f64,
    spec: &InterventionSpec,
    ghat: Option<&dyn ExposureDensity>,
    e: &[f64],
    w: &[f64],
    integration: &Integration,
    unit_tag: u64,
) -> Result<(f64, Option<f64>)> {
    match integration {
        Integration::BinSum => {
            let atoms = gstar_atoms(spec, ghat, e, w)?;
            Ok((atoms.iter().map(|&(pt, m)| m * predict(pt)).sum(), None))
        }
        Integration::MonteCarlo { draws, seed } => {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed ^ unit_tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..*draws {
                let a = gstar_sample(spec, ghat, e, w, &mut rng)?;
                let q = predict(a);
                sum += q;
                sum_sq += q * q;
            }
            let n = *draws as f64;
            let mean = sum / n;
            let var = (sum_sq / n - mean * mean).max(0.0);
            Ok((mean, Some((var / n).sqrt())))
        }
    }
}

/// One targeting unit: a community, or one individual of one community.
#[derive(Debug, Clone)]
pub struct TargetUnit {
    pub community: usize,
    pub individual: Option<usize>,
    /// Scaled outcome.
    pub y: f64,
    /// Initial prediction at the observed exposure, clipped into (0, 1).
    pub q_init: f64,
    /// Clever covariate at the observed exposure.
    pub h: f64,
    /// Unit weight: 1 for communities, alpha for individuals.
    pub weight: f64,
}

/// Result of the fluctuation fit.
#[derive(Debug, Clone)]
pub struct TargetedFit {
    pub variant: Variant,
    pub level: Level,
    pub epsilon: f64,
    /// `sum_units weight * H * (y - Q*)` at the fitted epsilon.
    pub score_residual: f64,
    pub truncation_count: usize,
    pub zero_reference_count: usize,
    /// Epsilon came from the bracket/loss fallback rather than a clean
    /// Newton solve.
    pub epsilon_fallback: bool,
    pub units: Vec<TargetUnit>,
    /// Targeted prediction at each unit's observed exposure.
    pub qstar: Vec<f64>,
}

impl TargetedFit {
    /// Targeted prediction from an initial prediction and the clever
    /// covariate at the evaluation point.
    pub fn update(&self, q_init: f64, h_at_point: f64) -> f64 {
        let q = clamp_prob(q_init, PREDICTION_CLIP);
        match self.variant {
            Variant::CleverCovariate => expit(logit(q) + self.epsilon * h_at_point),
            Variant::WeightedIntercept => expit(logit(q) + self.epsilon),
        }
    }

    /// Weighted Bernoulli loss of the targeted predictions.
    pub fn empirical_loss(&self) -> f64 {
        loss_at(&self.units, self.variant, self.epsilon)
    }

    /// Weighted Bernoulli loss of the initial predictions.
    pub fn initial_loss(&self) -> f64 {
        loss_at(&self.units, self.variant, 0.0)
    }
}

fn fluct_prob(u: &TargetUnit, variant: Variant, eps: f64) -> f64 {
    let o = logit(clamp_prob(u.q_init, PREDICTION_CLIP));
    match variant {
        Variant::CleverCovariate => expit(o + eps * u.h),
        Variant::WeightedIntercept => expit(o + eps),
    }
}

/// Loss whose minimizer defines epsilon: the (H-weighted, for the
/// intercept variant) Bernoulli log-likelihood loss.
fn loss_at(units: &[TargetUnit], variant: Variant, eps: f64) -> f64 {
    units
        .iter()
        .map(|u| {
            let p = fluct_prob(u, variant, eps);
            let w = match variant {
                Variant::CleverCovariate => u.weight,
                Variant::WeightedIntercept => u.weight * u.h,
            };
            w * bernoulli_nll(u.y, p)
        })
        .sum()
}

/// Score in epsilon; both variants share the estimating equation
/// `sum w H (y - Q(eps))`.
fn score_at(units: &[TargetUnit], variant: Variant, eps: f64) -> f64 {
    units
        .iter()
        .map(|u| u.weight * u.h * (u.y - fluct_prob(u, variant, eps)))
        .sum()
}

fn dscore_at(units: &[TargetUnit], variant: Variant, eps: f64) -> f64 {
    -units
        .iter()
        .map(|u| {
            let p = fluct_prob(u, variant, eps);
            let slope = match variant {
                Variant::CleverCovariate => u.h * u.h,
                Variant::WeightedIntercept => u.h,
            };
            u.weight * slope * p * (1.0 - p)
        })
        .sum::<f64>()
}

const EPS_BOUND: f64 = 30.0;

/// Safeguarded Newton solve of the fluctuation score; falls back to the
/// loss-minimizing bracket endpoint when the score has no root.
fn solve_epsilon(units: &[TargetUnit], variant: Variant) -> Result<(f64, bool)> {
    let total_info: f64 = units.iter().map(|u| u.weight * u.h.abs()).sum();
    if total_info <= 0.0 {
        return Err(Error::AllWeightsZero);
    }
    let tol = 1e-12 * total_info.max(1.0);

    let s0 = score_at(units, variant, 0.0);
    if s0.abs() <= tol {
        return Ok((0.0, false));
    }
    // the score is nonincreasing in eps (H >= 0): bracket its sign change
    let (mut lo, mut hi) = if s0 > 0.0 {
        let mut hi = 1.0;
        while score_at(units, variant, hi) > 0.0 {
            if hi >= EPS_BOUND {
                // no root below the bound: the loss decreases all the way
                return Ok((EPS_BOUND, true));
            }
            hi = (hi * 2.0).min(EPS_BOUND);
        }
        (0.0, hi)
    } else {
        let mut lo = -1.0;
        while score_at(units, variant, lo) < 0.0 {
            if lo <= -EPS_BOUND {
                return Ok((-EPS_BOUND, true));
            }
            lo = (lo * 2.0).max(-EPS_BOUND);
        }
        (lo, 0.0)
    };

    let mut eps = 0.5 * (lo + hi);
    for _ in 0..200 {
        let s = score_at(units, variant, eps);
        if s.abs() <= tol {
            return Ok((eps, false));
        }
        if s > 0.0 {
            lo = eps;
        } else {
            hi = eps;
        }
        let d = dscore_at(units, variant, eps);
        let newton = if d < 0.0 { eps - s / d } else { f64::NAN };
        eps = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok((eps, true))
}

/// Builds the targeting units and fits the fluctuation parameter.
pub fn target(
    initial: &OutcomeModel,
    ghat: &GhatRef<'_>,
    spec: &InterventionSpec,
    ds: &HierarchicalDataset,
    cfg: &TargetingConfig,
    w_summary: WSummary,
) -> Result<TargetedFit> {
    cfg.validate()?;
    let mut units = Vec::new();
    let mut truncation_count = 0;
    let mut zero_reference_count = 0;
    let yc = ds.scaled_outcomes();

    for (j, c) in ds.communities.iter().enumerate() {
        let view = ghat.view(j);
        match cfg.level {
            Level::Community => {
                let w = c.w_summary(w_summary);
                let h = clever_covariate(spec, &view, c.a, &c.e, &w, cfg.ratio_cap)?;
                if h.truncated {
                    truncation_count += 1;
                }
                if h.zero_reference {
                    zero_reference_count += 1;
                }
                units.push(TargetUnit {
                    community: j,
                    individual: None,
                    y: yc[j],
                    q_init: clamp_prob(initial.predict_community(c, c.a), PREDICTION_CLIP),
                    h: h.value,
                    weight: 1.0,
                });
            }
            Level::Individual => {
                for (i, (ind, &al)) in c.individuals.iter().zip(&c.alpha).enumerate() {
                    let h = clever_covariate(spec, &view, c.a, &c.e, &ind.w, cfg.ratio_cap)?;
                    if h.truncated {
                        truncation_count += 1;
                    }
                    if h.zero_reference {
                        zero_reference_count += 1;
                    }
                    units.push(TargetUnit {
                        community: j,
                        individual: Some(i),
                        y: ds.bounds.scale(ind.y),
                        q_init: clamp_prob(initial.predict_individual(c, i, c.a), PREDICTION_CLIP),
                        h: h.value,
                        weight: al,
                    });
                }
            }
        }
    }

    let (epsilon, epsilon_fallback) = solve_epsilon(&units, cfg.variant)?;
    let qstar: Vec<f64> = units.iter().map(|u| fluct_prob(u, cfg.variant, epsilon)).collect();
    let score_residual = score_at(&units, cfg.variant, epsilon);

    Ok(TargetedFit {
        variant: cfg.variant,
        level: cfg.level,
        epsilon,
        score_residual,
        truncation_count,
        zero_reference_count,
        epsilon_fallback,
        units,
        qstar,
    })
}

/// Plug-in estimate and the per-community integrals feeding the
/// influence curve.
#[derive(Debug, Clone)]
pub struct PsiEstimate {
    pub psi: f64,
    /// Per community: `int Q*(a, .) g*(da | .)`, alpha-averaged over
    /// members at the individual level.
    pub community_integrals: Vec<f64>,
    /// Largest Monte Carlo standard error among unit integrals, when MC
    /// integration was used.
    pub max_mc_se: Option<f64>,
}

/// Substitution estimator: the mean over communities of the targeted
/// regression integrated against the intervention.
pub fn estimate_psi(
    targeted: &TargetedFit,
    initial: &OutcomeModel,
    ghat: &GhatRef<'_>,
    spec: &InterventionSpec,
    ds: &HierarchicalDataset,
    cfg: &TargetingConfig,
    w_summary: WSummary,
) -> Result<PsiEstimate> {
    let mut integrals = Vec::with_capacity(ds.j());
    let mut max_mc_se: Option<f64> = None;
    let track_se = |se: Option<f64>, max: &mut Option<f64>| {
        if let Some(s) = se {
            *max = Some(max.unwrap_or(0.0).max(s));
        }
    };

    for (j, c) in ds.communities.iter().enumerate() {
        let view = ghat.view(j);
        let integral = match cfg.level {
            Level::Community => {
                let w = c.w_summary(w_summary);
                let predict = |a: f64| -> f64 {
                    let h = capped_ratio(spec, &view, a, &c.e, &w, cfg.ratio_cap)
                        .map(|v| v.value)
                        .unwrap_or(cfg.ratio_cap);
                    targeted.update(initial.predict_community(c, a), h)
                };
                let (v, se) = integrate_over_gstar(
                    &predict,
                    spec,
                    Some(&view),
                    &c.e,
                    &w,
                    &cfg.integration,
                    j as u64,
                )?;
                track_se(se, &mut max_mc_se);
                v
            }
            Level::Individual => {
                let mut acc = 0.0;
                for (i, (ind, &al)) in c.individuals.iter().zip(&c.alpha).enumerate() {
                    let predict = |a: f64| -> f64 {
                        let h = capped_ratio(spec, &view, a, &c.e, &ind.w, cfg.ratio_cap)
                            .map(|v| v.value)
                            .unwrap_or(cfg.ratio_cap);
                        targeted.update(initial.predict_individual(c, i, a), h)
                    };
                    let tag = (j as u64) << 20 | i as u64;
                    let (v, se) = integrate_over_gstar(
                        &predict,
                        spec,
                        Some(&view),
                        &c.e,
                        &ind.w,
                        &cfg.integration,
                        tag,
                    )?;
                    track_se(se, &mut max_mc_se);
                    acc += al * v;
                }
                acc
            }
        };
        integrals.push(integral);
    }

    let psi = integrals.iter().sum::<f64>() / ds.j() as f64;
    Ok(PsiEstimate { psi, community_integrals: integrals, max_mc_se })
}
