//! Efficient-influence-curve inference.
//!
//! Per community, the influence-curve value splits into an outcome
//! residual part `H (Yc - Q*)` and a covariate part
//! `int Q* g* - psi`; at the individual level both parts are
//! alpha-weighted averages over members. Targeting zeroes the summed
//! residual part and the plug-in definition zeroes the covariate part,
//! so the values average to zero and their uncentered second moment
//! estimates the sampling variance.

use serde::{Deserialize, Serialize};

use crate::data::{unscale_estimate, HierarchicalDataset, OutcomeBounds};
use crate::error::{Error, Result};
use crate::intervention::PositivitySummary;
use crate::tmle::{Level, PsiEstimate, TargetedFit, Variant};

/// Per-community influence-curve values and their decomposition.
#[derive(Debug, Clone)]
pub struct EicVector {
    pub values: Vec<f64>,
    /// Outcome-residual component per community.
    pub d_y: Vec<f64>,
    /// Covariate-marginal component per community.
    pub d_ew: Vec<f64>,
    pub level: Level,
}

impl EicVector {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Influence-curve values at the targeted fit.
///
/// `psi_parts` must come from `estimate_psi` on the same fit so the
/// covariate component uses the same integrals as the estimate.
pub fn eic_values(
    targeted: &TargetedFit,
    psi_parts: &PsiEstimate,
    ds: &HierarchicalDataset,
) -> EicVector {
    let j = ds.j();
    let mut d_y = vec![0.0; j];
    for (u, q) in targeted.units.iter().zip(&targeted.qstar) {
        d_y[u.community] += u.weight * u.h * (u.y - q);
    }
    let d_ew: Vec<f64> = psi_parts
        .community_integrals
        .iter()
        .map(|int| int - psi_parts.psi)
        .collect();
    let values: Vec<f64> = d_y.iter().zip(&d_ew).map(|(a, b)| a + b).collect();
    EicVector { values, d_y, d_ew, level: targeted.level }
}

/// Variance pieces of the plug-in estimator: the uncentered second
/// moment of the influence curve, its scaling by `J`, and the Wald 95%
/// interval.
pub fn variance_and_ci(eic: &EicVector, psi_hat: f64) -> (f64, f64, (f64, f64)) {
    let j = eic.values.len() as f64;
    let sigma2 = eic.values.iter().map(|d| d * d).sum::<f64>() / j;
    let variance = sigma2 / j;
    let half = 1.96 * variance.sqrt();
    (sigma2, variance, (psi_hat - half, psi_hat + half))
}

/// Positivity and fitting diagnostics carried in a report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostics {
    pub positivity: PositivitySummary,
    pub truncation_count: usize,
    pub zero_reference_count: usize,
    pub epsilon_fallback: bool,
    pub score_residual: f64,
    pub cv_density_selected: Option<String>,
    pub cv_density_losses: Vec<(String, Option<f64>)>,
    pub cv_outcome_selected: Option<String>,
    pub cv_outcome_losses: Vec<(String, Option<f64>)>,
    pub density_audit: serde_json::Value,
    pub integration_mc_se: Option<f64>,
    pub warnings: Vec<String>,
}

/// Full estimate for one intervention.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    pub intervention: String,
    pub level: Level,
    pub variant: Variant,
    /// Estimate on the scaled [0, 1] outcome.
    pub psi_hat: f64,
    pub epsilon: f64,
    pub sigma2: f64,
    pub variance: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Estimate mapped back to the natural outcome scale.
    pub psi_natural: f64,
    pub se_natural: f64,
    pub ci_natural_lo: f64,
    pub ci_natural_hi: f64,
    pub outcome_bounds: (f64, f64),
    pub j_communities: usize,
    pub seed: u64,
    pub dataset_fingerprint: u64,
    pub diagnostics: Diagnostics,
    /// Per-community influence-curve values (always carried in memory;
    /// serialization may drop them via `strip_eic`).
    pub eic: Option<Vec<f64>>,
}

impl EstimateReport {
    /// Assembles a report from the targeting pieces.
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        intervention: impl Into<String>,
        targeted: &TargetedFit,
        psi_parts: &PsiEstimate,
        eic: EicVector,
        ds: &HierarchicalDataset,
        seed: u64,
        diagnostics: Diagnostics,
    ) -> Self {
        let (sigma2, variance, (ci_lo, ci_hi)) = variance_and_ci(&eic, psi_parts.psi);
        let se = variance.sqrt();
        let (psi_natural, se_natural) = unscale_estimate(psi_parts.psi, se, &ds.bounds);
        let (nat_lo, _) = unscale_estimate(ci_lo, 0.0, &ds.bounds);
        let (nat_hi, _) = unscale_estimate(ci_hi, 0.0, &ds.bounds);
        EstimateReport {
            intervention: intervention.into(),
            level: targeted.level,
            variant: targeted.variant,
            psi_hat: psi_parts.psi,
            epsilon: targeted.epsilon,
            sigma2,
            variance,
            ci_lo,
            ci_hi,
            psi_natural,
            se_natural,
            ci_natural_lo: nat_lo,
            ci_natural_hi: nat_hi,
            outcome_bounds: (ds.bounds.lo, ds.bounds.hi),
            j_communities: ds.j(),
            seed,
            dataset_fingerprint: ds.fingerprint(),
            diagnostics,
            eic: Some(eic.values),
        }
    }

    pub fn strip_eic(mut self) -> Self {
        self.eic = None;
        self
    }
}

/// Difference of two intervention estimates with covariance-aware
/// influence-curve inference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContrastReport {
    pub minuend: String,
    pub subtrahend: String,
    pub delta: f64,
    pub sigma2: f64,
    pub variance: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub delta_natural: f64,
    pub se_natural: f64,
    pub ci_natural_lo: f64,
    pub ci_natural_hi: f64,
}

/// Contrast `psi_2 - psi_1` from two reports of the same run. The
/// variance comes from the per-community differences of the influence
/// curves, which accounts for the covariance between the arms.
pub fn estimate_contrast(report2: &EstimateReport, report1: &EstimateReport) -> Result<ContrastReport> {
    if report1.dataset_fingerprint != report2.dataset_fingerprint
        || report1.j_communities != report2.j_communities
        || report1.outcome_bounds != report2.outcome_bounds
    {
        return Err(Error::MismatchedRuns(
            "reports come from different datasets".into(),
        ));
    }
    let (e1, e2) = match (&report1.eic, &report2.eic) {
        (Some(a), Some(b)) if a.len() == b.len() => (a, b),
        _ => {
            return Err(Error::MismatchedRuns(
                "reports lack aligned influence-curve values".into(),
            ))
        }
    };
    let j = e1.len() as f64;
    let delta = report2.psi_hat - report1.psi_hat;
    let sigma2 = e1
        .iter()
        .zip(e2)
        .map(|(a, b)| {
            let d = b - a;
            d * d
        })
        .sum::<f64>()
        / j;
    let variance = sigma2 / j;
    let half = 1.96 * variance.sqrt();
    let bounds = OutcomeBounds::new(report1.outcome_bounds.0, report1.outcome_bounds.1)?;
    let (_, se_natural) = unscale_estimate(0.0, variance.sqrt(), &bounds);
    let delta_natural = bounds.width() * delta;
    Ok(ContrastReport {
        minuend: report2.intervention.clone(),
        subtrahend: report1.intervention.clone(),
        delta,
        sigma2,
        variance,
        ci_lo: delta - half,
        ci_hi: delta + half,
        delta_natural,
        se_natural,
        ci_natural_lo: delta_natural - 1.96 * se_natural,
        ci_natural_hi: delta_natural + 1.96 * se_natural,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn eic(values: Vec<f64>) -> EicVector {
        let d_y = values.clone();
        let d_ew = vec![0.0; values.len()];
        EicVector { values, d_y, d_ew, level: Level::Community }
    }

    #[test]
    fn hand_fixture_arithmetic() {
        // D = H (Yc - Q*) + integral - psi = 2*0.25 + (0.6 - 0.5)
        let d = 2.0 * (1.0 - 0.75) + (0.6 - 0.5);
        assert_abs_diff_eq!(d, 0.6, epsilon = 1e-15);
    }

    #[test]
    fn zero_eic_gives_point_interval() {
        let (sigma2, var, (lo, hi)) = variance_and_ci(&eic(vec![0.0; 8]), 0.3);
        assert_eq!(sigma2, 0.0);
        assert_eq!(var, 0.0);
        assert_eq!((lo, hi), (0.3, 0.3));
    }

    #[test]
    fn two_point_eic_interval() {
        let (sigma2, var, (lo, hi)) = variance_and_ci(&eic(vec![1.0, -1.0]), 0.5);
        assert_abs_diff_eq!(sigma2, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(var, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(lo, 0.5 - 1.96 / 2.0_f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 0.5 + 1.96 / 2.0_f64.sqrt(), epsilon = 1e-12);
        assert!(lo <= 0.5 && 0.5 <= hi);
    }

    #[test]
    fn uncentered_minus_centered_is_mean_squared() {
        let values = vec![0.4, -0.2, 0.1, 0.35, -0.5, 0.22];
        let v = eic(values.clone());
        let j = values.len() as f64;
        let (sigma2, _, _) = variance_and_ci(&v, 0.0);
        let mean = v.mean();
        let centered = values.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / j;
        assert_abs_diff_eq!(sigma2 - centered, mean * mean, epsilon = 1e-12);
    }
}
