//! Discrete cross-validated model selection.
//!
//! A fixed candidate list is scored by V-fold cross-validated loss and the
//! winner is refit on the full data. Fold membership is supplied by the
//! caller (hashed community ids for dataset fits, plain indices for raw
//! rows) so runs reproduce exactly and are invariant to row order.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regression candidates shared by the exposure and outcome fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateKind {
    InterceptOnly,
    MainTerms,
    MainTermsInteractions,
}

impl CandidateKind {
    pub fn name(&self) -> &'static str {
        match self {
            CandidateKind::InterceptOnly => "intercept_only",
            CandidateKind::MainTerms => "main_terms",
            CandidateKind::MainTermsInteractions => "main_terms_interactions",
        }
    }
}

pub fn default_candidates() -> Vec<CandidateKind> {
    vec![
        CandidateKind::InterceptOnly,
        CandidateKind::MainTerms,
        CandidateKind::MainTermsInteractions,
    ]
}

/// Fold id from a unit index.
pub fn index_folds(n_units: usize, folds: usize) -> Vec<usize> {
    (0..n_units).map(|i| i % folds.max(1)).collect()
}

/// Fold id from a stable key, invariant to unit order.
pub fn hashed_fold(key: &str, folds: usize) -> usize {
    let mut h = DefaultHasher::new();
    key.hash(&mut h);
    (h.finish() % folds.max(1) as u64) as usize
}

/// Outcome of a discrete CV selection.
pub struct Selection<M> {
    pub winner: CandidateKind,
    pub model: M,
    /// Mean held-out loss per candidate, aligned with the candidate list.
    pub cv_losses: Vec<f64>,
}

/// Runs V-fold CV over `candidates`. `fit` trains on the given unit
/// indices; `loss` returns the total held-out loss and a weight.
/// Candidates whose fit fails on any fold get infinite loss; ties break
/// toward the earlier candidate.
pub fn select_by_cv<M>(
    candidates: &[CandidateKind],
    fold_ids: &[usize],
    folds: usize,
    fit: impl Fn(CandidateKind, &[usize]) -> Result<M>,
    loss: impl Fn(&M, &[usize]) -> (f64, f64),
) -> Result<Selection<M>> {
    if candidates.is_empty() {
        return Err(Error::Config("empty candidate list".into()));
    }
    let n_units = fold_ids.len();
    if n_units < folds {
        return Err(Error::InsufficientData(format!(
            "{n_units} units for {folds} folds"
        )));
    }
    let all: Vec<usize> = (0..n_units).collect();

    let mut cv_losses = Vec::with_capacity(candidates.len());
    for &cand in candidates {
        let mut total = 0.0;
        let mut weight = 0.0;
        let mut failed = false;
        for v in 0..folds {
            let train: Vec<usize> = all.iter().copied().filter(|&i| fold_ids[i] != v).collect();
            let test: Vec<usize> = all.iter().copied().filter(|&i| fold_ids[i] == v).collect();
            if test.is_empty() || train.is_empty() {
                continue;
            }
            match fit(cand, &train) {
                Ok(m) => {
                    let (l, w) = loss(&m, &test);
                    if !l.is_finite() {
                        failed = true;
                        break;
                    }
                    total += l;
                    weight += w;
                }
                Err(_) => {
                    failed = true;
                    break;
                }
            }
        }
        cv_losses.push(if failed || weight == 0.0 { f64::INFINITY } else { total / weight });
    }

    let (best, _) = cv_losses
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap())
        .unwrap();
    if cv_losses[best].is_infinite() {
        return Err(Error::NonConvergence("every candidate failed cross-validation".into()));
    }
    let model = fit(candidates[best], &all)?;
    Ok(Selection { winner: candidates[best], model, cv_losses })
}
