//! Initial (non-targeted) outcome regression.
//!
//! Either a community-level regression of the scaled community outcome on
//! `(A, E, W-summary)`, or a pooled individual-level regression of the
//! scaled individual outcomes on `(A, E, W_i)` with the community weights
//! `alpha` as row weights. The pooled route rests on the working model
//! that an individual's mean outcome depends on others' covariates not at
//! all, or only through a declared neighbor set whose covariates are
//! folded into the feature row.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{Community, HierarchicalDataset, WSummary};
use crate::error::{Error, Result};
use crate::regress::{bernoulli_nll, clamp_prob, expit, fit_logistic, fit_wls, logit, LogisticOptions};
use crate::select::{default_candidates, hashed_fold, select_by_cv, CandidateKind};

pub const PREDICTION_CLIP: f64 = 1e-6;

/// Which rows feed the regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeLevel {
    Community,
    PooledIndividual,
}

/// Loss used for fitting and cross-validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Negative Bernoulli log-likelihood on the scaled outcome; valid for
    /// any conditional mean in [0, 1].
    Bernoulli,
    SquaredError,
}

/// How individual covariates enter a pooled regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturePlan {
    /// Community-level summaries only (features constant within community).
    CommunitySummaries,
    /// Each individual's own covariate row.
    OwnW,
    /// Own row plus the weighted mean over a declared neighbor set.
    OwnWPlusNeighbors,
}

/// Explicit neighbor sets per community: `map[community_id][i]` lists the
/// individual indices whose covariates influence individual `i`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NeighborMap(pub HashMap<String, Vec<Vec<usize>>>);

impl NeighborMap {
    fn neighbors<'a>(&'a self, c: &Community, i: usize) -> Option<&'a [usize]> {
        self.0.get(&c.id).and_then(|v| v.get(i)).map(Vec::as_slice)
    }
}

/// Fitting configuration for the initial outcome regression.
#[derive(Debug, Clone)]
pub struct OutcomeFitConfig {
    pub level: OutcomeLevel,
    pub loss: LossKind,
    pub candidates: Vec<CandidateKind>,
    pub cv_folds: usize,
    pub feature_plan: FeaturePlan,
    pub w_summary: WSummary,
    pub neighbors: Option<NeighborMap>,
}

impl Default for OutcomeFitConfig {
    fn default() -> Self {
        OutcomeFitConfig {
            level: OutcomeLevel::Community,
            loss: LossKind::Bernoulli,
            candidates: default_candidates(),
            cv_folds: 5,
            feature_plan: FeaturePlan::CommunitySummaries,
            w_summary: WSummary::AlphaMean,
            neighbors: None,
        }
    }
}

/// Fitted outcome regression with its selection record.
#[derive(Debug, Clone)]
pub struct OutcomeModel {
    pub level: OutcomeLevel,
    pub loss: LossKind,
    pub feature_plan: FeaturePlan,
    pub w_summary: WSummary,
    pub selected: CandidateKind,
    pub coefs: Vec<f64>,
    pub cv_losses: Vec<(String, Option<f64>)>,
    pub fell_back_to_intercept: bool,
    neighbors: Option<NeighborMap>,
}

fn features(candidate: CandidateKind, a: f64, covs: &[f64]) -> Vec<f64> {
    match candidate {
        CandidateKind::InterceptOnly => vec![1.0],
        CandidateKind::MainTerms => {
            let mut x = Vec::with_capacity(2 + covs.len());
            x.push(1.0);
            x.push(a);
            x.extend_from_slice(covs);
            x
        }
        CandidateKind::MainTermsInteractions => {
            let mut x = Vec::with_capacity(2 + 2 * covs.len());
            x.push(1.0);
            x.push(a);
            x.extend_from_slice(covs);
            x.extend(covs.iter().map(|&c| a * c));
            x
        }
    }
}

impl OutcomeModel {
    /// Covariate row for a unit; `i = None` uses community summaries.
    pub fn covariates(&self, c: &Community, i: Option<usize>) -> Vec<f64> {
        let mut covs = c.e.clone();
        match (i, self.feature_plan) {
            (None, _) | (Some(_), FeaturePlan::CommunitySummaries) => {
                covs.extend(c.w_summary(self.w_summary));
            }
            (Some(i), FeaturePlan::OwnW) => {
                covs.extend_from_slice(&c.individuals[i].w);
            }
            (Some(i), FeaturePlan::OwnWPlusNeighbors) => {
                covs.extend_from_slice(&c.individuals[i].w);
                covs.extend(neighbor_mean(c, i, self.neighbors.as_ref()));
            }
        }
        covs
    }

    /// Mean prediction, clipped into `(0, 1)`.
    pub fn predict_mean(&self, a: f64, covs: &[f64]) -> f64 {
        let x = features(self.selected, a, covs);
        let lp = crate::regress::dot(&x, &self.coefs);
        let p = match self.loss {
            LossKind::Bernoulli => expit(lp),
            LossKind::SquaredError => lp,
        };
        clamp_prob(p, PREDICTION_CLIP)
    }

    /// Predicted individual mean at exposure `a`.
    pub fn predict_individual(&self, c: &Community, i: usize, a: f64) -> f64 {
        self.predict_mean(a, &self.covariates(c, Some(i)))
    }

    /// Predicted community-level mean at exposure `a`: direct for a
    /// community fit, alpha-weighted over members for a pooled fit.
    pub fn predict_community(&self, c: &Community, a: f64) -> f64 {
        match self.level {
            OutcomeLevel::Community => self.predict_mean(a, &self.covariates(c, None)),
            OutcomeLevel::PooledIndividual => c
                .individuals
                .iter()
                .enumerate()
                .zip(&c.alpha)
                .map(|((i, _), &al)| al * self.predict_individual(c, i, a))
                .sum(),
        }
    }
}

fn neighbor_mean(c: &Community, i: usize, map: Option<&NeighborMap>) -> Vec<f64> {
    let p = c.individuals[0].w.len();
    let idx: Vec<usize> = match map.and_then(|m| m.neighbors(c, i)) {
        Some(list) if !list.is_empty() => list.to_vec(),
        _ => vec![i],
    };
    let mut total = 0.0;
    let mut acc = vec![0.0; p];
    for &l in &idx {
        let al = c.alpha.get(l).copied().unwrap_or(0.0);
        total += al;
        if let Some(ind) = c.individuals.get(l) {
            for (o, &w) in acc.iter_mut().zip(&ind.w) {
                *o += al * w;
            }
        }
    }
    if total > 0.0 {
        for o in &mut acc {
            *o /= total;
        }
    }
    acc
}

struct UnitRows {
    /// (community index, individual index or None)
    units: Vec<(usize, Option<usize>)>,
    a: Vec<f64>,
    covs: Vec<Vec<f64>>,
    y: Vec<f64>,
    weight: Vec<f64>,
}

fn build_rows(ds: &HierarchicalDataset, cfg: &OutcomeFitConfig, probe: &OutcomeModel) -> UnitRows {
    let mut rows = UnitRows {
        units: Vec::new(),
        a: Vec::new(),
        covs: Vec::new(),
        y: Vec::new(),
        weight: Vec::new(),
    };
    let yc = ds.scaled_outcomes();
    for (j, c) in ds.communities.iter().enumerate() {
        match cfg.level {
            OutcomeLevel::Community => {
                rows.units.push((j, None));
                rows.a.push(c.a);
                rows.covs.push(probe.covariates(c, None));
                rows.y.push(yc[j]);
                rows.weight.push(1.0);
            }
            OutcomeLevel::PooledIndividual => {
                for (i, (ind, &al)) in c.individuals.iter().zip(&c.alpha).enumerate() {
                    rows.units.push((j, Some(i)));
                    rows.a.push(c.a);
                    rows.covs.push(probe.covariates(c, Some(i)));
                    rows.y.push(ds.bounds.scale(ind.y));
                    rows.weight.push(al);
                }
            }
        }
    }
    rows
}

/// Fits the initial outcome regression with discrete CV selection over
/// the candidate list; falls back to an intercept-only fit if every
/// candidate fails.
pub fn fit_initial_outcome(ds: &HierarchicalDataset, cfg: &OutcomeFitConfig) -> Result<OutcomeModel> {
    let candidates = if cfg.candidates.is_empty() {
        default_candidates()
    } else {
        cfg.candidates.clone()
    };
    if ds.j() < cfg.cv_folds {
        return Err(Error::InsufficientData(format!(
            "{} communities for {} folds",
            ds.j(),
            cfg.cv_folds
        )));
    }

    let probe = OutcomeModel {
        level: cfg.level,
        loss: cfg.loss,
        feature_plan: cfg.feature_plan,
        w_summary: cfg.w_summary,
        selected: CandidateKind::InterceptOnly,
        coefs: vec![0.0],
        cv_losses: Vec::new(),
        fell_back_to_intercept: false,
        neighbors: cfg.neighbors.clone(),
    };
    let rows = build_rows(ds, cfg, &probe);

    // CV folds are assigned per community so pooled rows stay together.
    let fold_ids: Vec<usize> = ds
        .communities
        .iter()
        .map(|c| hashed_fold(&c.id, cfg.cv_folds))
        .collect();
    let row_community: Vec<usize> = rows.units.iter().map(|(j, _)| *j).collect();

    let row_indices_of = |community_idx: &[usize]| -> Vec<usize> {
        let mut member = vec![false; ds.j()];
        for &j in community_idx {
            member[j] = true;
        }
        (0..rows.units.len()).filter(|&r| member[row_community[r]]).collect()
    };

    let fit = |cand: CandidateKind, community_idx: &[usize]| -> Result<Vec<f64>> {
        let idx = row_indices_of(community_idx);
        if cand == CandidateKind::InterceptOnly {
            return Ok(vec![intercept_fit(&rows, &idx, cfg.loss)]);
        }
        let x: Vec<Vec<f64>> = idx.iter().map(|&r| features(cand, rows.a[r], &rows.covs[r])).collect();
        let y: Vec<f64> = idx.iter().map(|&r| rows.y[r]).collect();
        let w: Vec<f64> = idx.iter().map(|&r| rows.weight[r]).collect();
        match cfg.loss {
            LossKind::Bernoulli => fit_logistic(&x, &y, &w, None, &LogisticOptions::default()),
            LossKind::SquaredError => fit_wls(&x, &y, &w),
        }
    };
    let loss = |coefs: &Vec<f64>, cand: CandidateKind, community_idx: &[usize]| -> (f64, f64) {
        let idx = row_indices_of(community_idx);
        let mut total = 0.0;
        let mut weight = 0.0;
        for &r in idx.iter() {
            let x = features(cand, rows.a[r], &rows.covs[r]);
            let lp = crate::regress::dot(&x, coefs);
            let pred = match cfg.loss {
                LossKind::Bernoulli => expit(lp),
                LossKind::SquaredError => lp,
            };
            let pred = clamp_prob(pred, PREDICTION_CLIP);
            let l = match cfg.loss {
                LossKind::Bernoulli => bernoulli_nll(rows.y[r], pred),
                LossKind::SquaredError => (rows.y[r] - pred) * (rows.y[r] - pred),
            };
            total += rows.weight[r] * l;
            weight += rows.weight[r];
        }
        (total, weight)
    };

    match select_by_cv(
        &candidates,
        &fold_ids,
        cfg.cv_folds,
        |cand, idx| fit(cand, idx).map(|c| (cand, c)),
        |m, idx| loss(&m.1, m.0, idx),
    ) {
        Ok(sel) => Ok(OutcomeModel {
            selected: sel.model.0,
            coefs: sel.model.1,
            cv_losses: candidates
                .iter()
                .zip(&sel.cv_losses)
                .map(|(c, &l)| (c.name().to_string(), l.is_finite().then_some(l)))
                .collect(),
            ..probe
        }),
        Err(Error::NonConvergence(_)) | Err(Error::Separation(_)) => {
            let all: Vec<usize> = (0..rows.units.len()).collect();
            Ok(OutcomeModel {
                selected: CandidateKind::InterceptOnly,
                coefs: vec![intercept_fit(&rows, &all, cfg.loss)],
                cv_losses: Vec::new(),
                fell_back_to_intercept: true,
                ..probe
            })
        }
        Err(e) => Err(e),
    }
}

fn intercept_fit(rows: &UnitRows, idx: &[usize], loss: LossKind) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for &r in idx {
        num += rows.weight[r] * rows.y[r];
        den += rows.weight[r];
    }
    let mean = clamp_prob(num / den, PREDICTION_CLIP);
    match loss {
        LossKind::Bernoulli => logit(mean),
        LossKind::SquaredError => mean,
    }
}
