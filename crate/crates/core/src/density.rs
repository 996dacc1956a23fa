//! Conditional density estimation for the exposure mechanism.
//!
//! Continuous exposures are discretized into bins; per-bin event
//! probabilities ("hazards") are fit by a pooled logistic regression on
//! long-format at-risk rows, and the conditional density is assembled by
//! chaining the hazards: `mass_k = h_k * prod_{t<k} (1 - h_t)`, with the
//! density at a point equal to its bin mass divided by the bin width.
//! Hazards are kept on the probability scale; the bandwidth enters only
//! at density evaluation. The last bin's hazard is fixed at 1 so the
//! masses always sum to one. Binary exposures skip binning and use a
//! direct logistic fit; categorical ones use the same hazard chaining
//! over their levels (a continuation-ratio factorization).

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::grid::{default_k, make_grid, BinGrid, BinStrategy};
use crate::regress::{bernoulli_nll, expit, fit_logistic, logit, LogisticOptions};
use crate::select::{default_candidates, index_folds, select_by_cv, CandidateKind};

/// Exposure support descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Support {
    Binary,
    Categorical { levels: Vec<f64> },
    Continuous { grid: BinGrid },
}

impl Support {
    /// Number of support cells (bins or levels).
    pub fn n_cells(&self) -> usize {
        match self {
            Support::Binary => 2,
            Support::Categorical { levels } => levels.len(),
            Support::Continuous { grid } => grid.k(),
        }
    }

    /// Representative exposure value per cell: levels, or bin midpoints.
    pub fn points(&self) -> Vec<f64> {
        match self {
            Support::Binary => vec![0.0, 1.0],
            Support::Categorical { levels } => levels.clone(),
            Support::Continuous { grid } => grid.midpoints(),
        }
    }

    /// Integration width of a cell: bin bandwidth, or 1 for discrete cells.
    pub fn cell_width(&self, k: usize) -> f64 {
        match self {
            Support::Continuous { grid } => grid.bandwidth(k),
            _ => 1.0,
        }
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(self, Support::Continuous { .. })
    }

    /// Cell index of an exposure value, or None outside the support.
    pub fn index_of(&self, a: f64) -> Option<usize> {
        match self {
            Support::Binary => match a {
                x if x == 0.0 => Some(0),
                x if x == 1.0 => Some(1),
                _ => None,
            },
            Support::Categorical { levels } => levels
                .iter()
                .position(|&l| (a - l).abs() <= 1e-9 * l.abs().max(1.0)),
            Support::Continuous { grid } => grid.index_of(a),
        }
    }
}

/// Conditional probability of the exposure mechanism, evaluable as cell
/// masses or as a density at a point. Implemented by the community-level
/// model here and by the marginalized individual-level model.
pub trait ExposureDensity {
    fn support(&self) -> &Support;

    /// Mass per support cell given covariates; sums to one.
    fn cell_masses(&self, e: &[f64], w: &[f64]) -> Vec<f64>;

    /// Mass of the cell containing `a`; 0 outside the support.
    fn mass_at(&self, a: f64, e: &[f64], w: &[f64]) -> f64 {
        match self.support().index_of(a) {
            Some(k) => self.cell_masses(e, w)[k],
            None => 0.0,
        }
    }

    /// Conditional density at `a`: cell mass over cell width for a
    /// continuous exposure, the cell mass itself for a discrete one.
    /// Returns 0 outside the support; callers treat that as a positivity
    /// warning.
    fn density_at(&self, a: f64, e: &[f64], w: &[f64]) -> f64 {
        match self.support().index_of(a) {
            Some(k) => self.cell_masses(e, w)[k] / self.support().cell_width(k),
            None => 0.0,
        }
    }
}

/// Pooled hazard regression over the non-terminal cells.
///
/// Coefficient layout: one intercept per fit cell, then the candidate's
/// covariate block (main terms, plus bin-position interactions for the
/// interaction candidate).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HazardModel {
    pub candidate: CandidateKind,
    pub coefs: Vec<f64>,
    n_cells: usize,
    n_cov: usize,
}

impl HazardModel {
    fn n_fit(&self) -> usize {
        self.n_cells - 1
    }

    /// Linear predictor for cell `k < n_cells - 1`.
    fn linear(&self, k: usize, cov: &[f64]) -> f64 {
        let mut lp = self.coefs[k];
        let base = self.n_fit();
        match self.candidate {
            CandidateKind::InterceptOnly => {}
            CandidateKind::MainTerms => {
                for (i, &c) in cov.iter().enumerate() {
                    lp += self.coefs[base + i] * c;
                }
            }
            CandidateKind::MainTermsInteractions => {
                let z = (k + 1) as f64 / self.n_cells as f64;
                for (i, &c) in cov.iter().enumerate() {
                    lp += self.coefs[base + i] * c;
                    lp += self.coefs[base + self.n_cov + i] * z * c;
                }
            }
        }
        lp
    }

    /// Clamped hazards for all cells; the last is 1.
    fn hazards(&self, cov: &[f64], clip: (f64, f64)) -> Vec<f64> {
        let mut h = Vec::with_capacity(self.n_cells);
        for k in 0..self.n_fit() {
            h.push(expit(self.linear(k, cov)).clamp(clip.0, clip.1));
        }
        h.push(1.0);
        h
    }
}

fn chain_masses(hazards: &[f64]) -> Vec<f64> {
    let mut masses = Vec::with_capacity(hazards.len());
    let mut surv = 1.0;
    for &h in hazards {
        masses.push(h * surv);
        surv *= 1.0 - h;
    }
    masses
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum DensityKind {
    /// Single-cell support: all mass in the one bin.
    Trivial,
    Hazard(HazardModel),
    BinaryLogit { candidate: CandidateKind, coefs: Vec<f64> },
    /// Covariate-free binary mechanism with known or imposed P(A=1).
    FixedBinary { p_one: f64 },
    /// Covariate-free hazards (empirical fallback or hand-set).
    FixedHazards { hazards: Vec<f64> },
}

/// Fitted (or imposed) conditional exposure density.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionalDensityModel {
    pub support: Support,
    kind: DensityKind,
    pub selected: Option<CandidateKind>,
    /// Mean held-out CV loss per candidate, in candidate order.
    pub cv_losses: Vec<(String, Option<f64>)>,
    pub clip: (f64, f64),
    pub fell_back_to_empirical: bool,
}

impl ExposureDensity for ConditionalDensityModel {
    fn support(&self) -> &Support {
        &self.support
    }

    fn cell_masses(&self, e: &[f64], w: &[f64]) -> Vec<f64> {
        let cov: Vec<f64> = e.iter().chain(w.iter()).copied().collect();
        match &self.kind {
            DensityKind::Trivial => vec![1.0],
            DensityKind::Hazard(h) => chain_masses(&h.hazards(&cov, self.clip)),
            DensityKind::BinaryLogit { candidate, coefs } => {
                let x = binary_features(*candidate, &cov);
                let p = expit(crate::regress::dot(&x, coefs)).clamp(self.clip.0, self.clip.1);
                vec![1.0 - p, p]
            }
            DensityKind::FixedBinary { p_one } => vec![1.0 - p_one, *p_one],
            DensityKind::FixedHazards { hazards } => chain_masses(hazards),
        }
    }
}

fn binary_features(candidate: CandidateKind, cov: &[f64]) -> Vec<f64> {
    let mut x = vec![1.0];
    match candidate {
        CandidateKind::InterceptOnly => {}
        CandidateKind::MainTerms => x.extend_from_slice(cov),
        CandidateKind::MainTermsInteractions => {
            x.extend_from_slice(cov);
            for i in 0..cov.len() {
                for j in (i + 1)..cov.len() {
                    x.push(cov[i] * cov[j]);
                }
            }
        }
    }
    x
}

/// One long-format at-risk row: observation `obs` still at risk at cell
/// `cell`, with `event` marking the cell the exposure landed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LongRow {
    pub obs: usize,
    pub cell: usize,
    pub event: bool,
}

/// Expands observations into the censored long format: observation `j`
/// with cell index `s_j` contributes rows `0..=s_j`, the last with
/// `event = true`.
pub fn long_format_rows(cell_index: &[usize]) -> Vec<LongRow> {
    let mut rows = Vec::new();
    for (obs, &s) in cell_index.iter().enumerate() {
        for cell in 0..=s {
            rows.push(LongRow { obs, cell, event: cell == s });
        }
    }
    rows
}

/// Forced exposure type, overriding autodetection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExposureKind {
    Binary,
    Categorical,
    Continuous,
}

/// Resolved fitting configuration for the exposure density.
#[derive(Debug, Clone)]
pub struct DensityFitConfig {
    pub k_bins: Option<usize>,
    pub strategy: BinStrategy,
    pub candidates: Vec<CandidateKind>,
    pub cv_folds: usize,
    pub hazard_clip: f64,
    pub exposure: Option<ExposureKind>,
    /// Fold membership per observation; defaults to index order. Callers
    /// fitting dataset rows pass hashed community folds to keep repeated
    /// exposures of one community in a single fold.
    pub fold_ids: Option<Vec<usize>>,
}

impl Default for DensityFitConfig {
    fn default() -> Self {
        DensityFitConfig {
            k_bins: None,
            strategy: BinStrategy::EqualWidth,
            candidates: default_candidates(),
            cv_folds: 5,
            hazard_clip: 1e-6,
            exposure: None,
            fold_ids: None,
        }
    }
}

fn detect_kind(a: &[f64], forced: Option<ExposureKind>) -> ExposureKind {
    if let Some(k) = forced {
        return k;
    }
    if a.iter().all(|&v| v == 0.0 || v == 1.0) {
        ExposureKind::Binary
    } else {
        ExposureKind::Continuous
    }
}

fn sorted_levels(a: &[f64]) -> Vec<f64> {
    let mut levels: Vec<f64> = a.to_vec();
    levels.sort_by(|x, y| x.partial_cmp(y).unwrap());
    levels.dedup();
    levels
}

/// Fits the exposure mechanism `g(A | covariates)`, dispatching on the
/// exposure type. `covs` holds one covariate row per observation.
pub fn fit_exposure_density(
    a: &[f64],
    covs: &[Vec<f64>],
    cfg: &DensityFitConfig,
) -> Result<ConditionalDensityModel> {
    if a.is_empty() || a.len() != covs.len() {
        return Err(Error::DimensionMismatch("exposure/covariate rows".into()));
    }
    let candidates = if cfg.candidates.is_empty() {
        default_candidates()
    } else {
        cfg.candidates.clone()
    };
    match detect_kind(a, cfg.exposure) {
        ExposureKind::Binary => fit_binary(a, covs, &candidates, cfg),
        ExposureKind::Categorical => {
            let support = Support::Categorical { levels: sorted_levels(a) };
            fit_hazard_support(a, covs, support, &candidates, cfg)
        }
        ExposureKind::Continuous => {
            let k = cfg.k_bins.unwrap_or_else(|| default_k(a.len()));
            let grid = make_grid(a, k, cfg.strategy)?;
            fit_hazard_support(a, covs, Support::Continuous { grid }, &candidates, cfg)
        }
    }
}

fn fit_binary(
    a: &[f64],
    covs: &[Vec<f64>],
    candidates: &[CandidateKind],
    cfg: &DensityFitConfig,
) -> Result<ConditionalDensityModel> {
    let clip = (cfg.hazard_clip, 1.0 - cfg.hazard_clip);
    let n = a.len();
    let fit = |cand: CandidateKind, idx: &[usize]| -> Result<Vec<f64>> {
        if cand == CandidateKind::InterceptOnly {
            let mean = idx.iter().map(|&i| a[i]).sum::<f64>() / idx.len() as f64;
            return Ok(vec![logit(mean.clamp(clip.0, clip.1))]);
        }
        let x: Vec<Vec<f64>> = idx.iter().map(|&i| binary_features(cand, &covs[i])).collect();
        let y: Vec<f64> = idx.iter().map(|&i| a[i]).collect();
        let w = vec![1.0; idx.len()];
        fit_logistic(&x, &y, &w, None, &LogisticOptions::default())
    };
    let loss = |coefs: &Vec<f64>, cand: CandidateKind, idx: &[usize]| -> (f64, f64) {
        let mut total = 0.0;
        for &i in idx {
            let x = binary_features(cand, &covs[i]);
            let p = expit(crate::regress::dot(&x, coefs)).clamp(clip.0, clip.1);
            total += bernoulli_nll(a[i], p);
        }
        (total, idx.len() as f64)
    };

    let fold_ids = cfg
        .fold_ids
        .clone()
        .unwrap_or_else(|| index_folds(n, cfg.cv_folds));
    match select_by_cv(
        candidates,
        &fold_ids,
        cfg.cv_folds,
        |cand, idx| fit(cand, idx).map(|c| (cand, c)),
        |m, idx| loss(&m.1, m.0, idx),
    ) {
        Ok(sel) => Ok(ConditionalDensityModel {
            support: Support::Binary,
            kind: DensityKind::BinaryLogit { candidate: sel.model.0, coefs: sel.model.1 },
            selected: Some(sel.winner),
            cv_losses: named_losses(candidates, &sel.cv_losses),
            clip,
            fell_back_to_empirical: false,
        }),
        Err(Error::NonConvergence(_)) | Err(Error::Separation(_)) => {
            // empirical proportion fallback
            let mean = a.iter().sum::<f64>() / n as f64;
            Ok(ConditionalDensityModel {
                support: Support::Binary,
                kind: DensityKind::FixedBinary { p_one: mean.clamp(clip.0, clip.1) },
                selected: None,
                cv_losses: Vec::new(),
                clip,
                fell_back_to_empirical: true,
            })
        }
        Err(e) => Err(e),
    }
}

/// Fits hazards over an explicit support (continuous bins or categorical
/// levels) via the long-format pooled regression.
pub fn fit_hazards(
    a: &[f64],
    covs: &[Vec<f64>],
    grid: BinGrid,
    candidates: &[CandidateKind],
    cv_folds: usize,
    hazard_clip: f64,
) -> Result<ConditionalDensityModel> {
    let cfg = DensityFitConfig {
        cv_folds,
        hazard_clip,
        ..DensityFitConfig::default()
    };
    fit_hazard_support(
        a,
        covs,
        Support::Continuous { grid },
        candidates,
        &cfg,
    )
}

fn fit_hazard_support(
    a: &[f64],
    covs: &[Vec<f64>],
    support: Support,
    candidates: &[CandidateKind],
    cfg: &DensityFitConfig,
) -> Result<ConditionalDensityModel> {
    let clip = (cfg.hazard_clip, 1.0 - cfg.hazard_clip);
    let cells = support.n_cells();
    let n_cov = covs[0].len();

    let cell_index: Vec<usize> = a
        .iter()
        .map(|&ai| {
            support
                .index_of(ai)
                .ok_or_else(|| Error::UnsupportedValue(format!("{ai} outside fitted support")))
        })
        .collect::<Result<_>>()?;

    if cells == 1 {
        return Ok(ConditionalDensityModel {
            support,
            kind: DensityKind::Trivial,
            selected: None,
            cv_losses: Vec::new(),
            clip,
            fell_back_to_empirical: false,
        });
    }

    let n_fit = cells - 1;
    let rows = long_format_rows(&cell_index);

    let empirical_hazards = |idx: &[usize]| -> Vec<f64> {
        let mut events: Vec<f64> = vec![0.0; n_fit];
        let mut at_risk: Vec<f64> = vec![0.0; n_fit];
        let in_idx: Vec<bool> = {
            let mut v = vec![false; a.len()];
            for &i in idx {
                v[i] = true;
            }
            v
        };
        for r in &rows {
            if r.cell < n_fit && in_idx[r.obs] {
                at_risk[r.cell] += 1.0;
                if r.event {
                    events[r.cell] += 1.0;
                }
            }
        }
        (0..n_fit)
            .map(|k| {
                if at_risk[k] == 0.0 {
                    // risk set never reached: no mass can survive past it
                    0.0
                } else {
                    (events[k] / at_risk[k]).clamp(clip.0, clip.1)
                }
            })
            .collect()
    };

    let hazard_row = |cand: CandidateKind, cell: usize, cov: &[f64]| -> Vec<f64> {
        let mut x = vec![0.0; n_fit];
        x[cell] = 1.0;
        match cand {
            CandidateKind::InterceptOnly => {}
            CandidateKind::MainTerms => x.extend_from_slice(cov),
            CandidateKind::MainTermsInteractions => {
                let z = (cell + 1) as f64 / cells as f64;
                x.extend_from_slice(cov);
                x.extend(cov.iter().map(|&c| z * c));
            }
        }
        x
    };

    let fit = |cand: CandidateKind, idx: &[usize]| -> Result<HazardModel> {
        if cand == CandidateKind::InterceptOnly {
            let hz = empirical_hazards(idx);
            let coefs: Vec<f64> = hz
                .iter()
                .map(|&h| logit(h.clamp(clip.0, clip.1)))
                .collect();
            return Ok(HazardModel { candidate: cand, coefs, n_cells: cells, n_cov });
        }
        let in_idx: Vec<bool> = {
            let mut v = vec![false; a.len()];
            for &i in idx {
                v[i] = true;
            }
            v
        };
        let mut x = Vec::new();
        let mut y = Vec::new();
        for r in &rows {
            if r.cell < n_fit && in_idx[r.obs] {
                x.push(hazard_row(cand, r.cell, &covs[r.obs]));
                y.push(if r.event { 1.0 } else { 0.0 });
            }
        }
        if x.is_empty() {
            return Err(Error::EmptyRiskSet(0));
        }
        let w = vec![1.0; x.len()];
        let coefs = fit_logistic(&x, &y, &w, None, &LogisticOptions::default())?;
        Ok(HazardModel { candidate: cand, coefs, n_cells: cells, n_cov })
    };

    let loss = |m: &HazardModel, idx: &[usize]| -> (f64, f64) {
        let mut total = 0.0;
        for &i in idx {
            let masses = chain_masses(&m.hazards(&covs[i], clip));
            total += -(masses[cell_index[i]].max(1e-300)).ln();
        }
        (total, idx.len() as f64)
    };

    let fold_ids = cfg
        .fold_ids
        .clone()
        .unwrap_or_else(|| index_folds(a.len(), cfg.cv_folds));
    match select_by_cv(candidates, &fold_ids, cfg.cv_folds, fit, loss) {
        Ok(sel) => Ok(ConditionalDensityModel {
            support,
            kind: DensityKind::Hazard(sel.model),
            selected: Some(sel.winner),
            cv_losses: named_losses(candidates, &sel.cv_losses),
            clip,
            fell_back_to_empirical: false,
        }),
        Err(Error::NonConvergence(_)) | Err(Error::Separation(_)) => {
            let all: Vec<usize> = (0..a.len()).collect();
            Ok(ConditionalDensityModel {
                support,
                kind: DensityKind::FixedHazards {
                    hazards: empirical_hazards(&all).into_iter().chain([1.0]).collect(),
                },
                selected: None,
                cv_losses: Vec::new(),
                clip,
                fell_back_to_empirical: true,
            })
        }
        Err(e) => Err(e),
    }
}

fn named_losses(candidates: &[CandidateKind], losses: &[f64]) -> Vec<(String, Option<f64>)> {
    candidates
        .iter()
        .zip(losses)
        .map(|(c, &l)| (c.name().to_string(), l.is_finite().then_some(l)))
        .collect()
}

impl ConditionalDensityModel {
    /// Known covariate-free binary mechanism, e.g. a randomized trial's
    /// assignment probability or a deliberately fixed density.
    pub fn fixed_binary(p_one: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_one) {
            return Err(Error::Config(format!("p_one {p_one} outside [0,1]")));
        }
        Ok(ConditionalDensityModel {
            support: Support::Binary,
            kind: DensityKind::FixedBinary { p_one },
            selected: None,
            cv_losses: Vec::new(),
            clip: (1e-6, 1.0 - 1e-6),
            fell_back_to_empirical: false,
        })
    }

    /// Covariate-free model from hand-set hazards (last entry may be any
    /// value; it is forced to 1).
    pub fn from_hazards(grid: BinGrid, mut hazards: Vec<f64>) -> Result<Self> {
        if hazards.len() != grid.k() {
            return Err(Error::DimensionMismatch(format!(
                "{} hazards for {} bins",
                hazards.len(),
                grid.k()
            )));
        }
        if let Some(last) = hazards.last_mut() {
            *last = 1.0;
        }
        Ok(ConditionalDensityModel {
            support: Support::Continuous { grid },
            kind: DensityKind::FixedHazards { hazards },
            selected: None,
            cv_losses: Vec::new(),
            clip: (1e-6, 1.0 - 1e-6),
            fell_back_to_empirical: false,
        })
    }

    /// JSON dump of the fitted structure for audit.
    pub fn audit_json(&self) -> serde_json::Value {
        let structure = match &self.kind {
            DensityKind::Trivial => json!({"type": "trivial"}),
            DensityKind::Hazard(h) => json!({
                "type": "hazard",
                "candidate": h.candidate.name(),
                "coefficients": h.coefs,
            }),
            DensityKind::BinaryLogit { candidate, coefs } => json!({
                "type": "binary_logit",
                "candidate": candidate.name(),
                "coefficients": coefs,
            }),
            DensityKind::FixedBinary { p_one } => json!({
                "type": "fixed_binary", "p_one": p_one,
            }),
            DensityKind::FixedHazards { hazards } => json!({
                "type": "fixed_hazards", "hazards": hazards,
            }),
        };
        let support = match &self.support {
            Support::Binary => json!({"type": "binary"}),
            Support::Categorical { levels } => json!({"type": "categorical", "levels": levels}),
            Support::Continuous { grid } => json!({"type": "continuous", "cutoffs": grid.cutoffs}),
        };
        json!({
            "support": support,
            "model": structure,
            "selected": self.selected.map(|c| c.name()),
            "cv_losses": self.cv_losses,
            "fell_back_to_empirical": self.fell_back_to_empirical,
        })
    }
}
