//! Hierarchical observed-data structures.
//!
//! One observation is a community: shared environment covariates `E`
//! (whose first entry is the community size), a community-level exposure
//! `A`, and per-individual covariate rows `W_i` with outcomes `Y_i`. The
//! community-level outcome is the `alpha`-weighted average of the
//! individual outcomes, rescaled to `[0, 1]`.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};

/// Tolerance for the per-community weight-sum invariant.
pub const ALPHA_SUM_TOL: f64 = 1e-12;

/// One sampled individual: baseline covariates and outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct IndividualRecord {
    pub w: Vec<f64>,
    pub y: f64,
}

/// One community: environment, exposure, members, and member weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Community {
    pub id: String,
    /// Community-level covariates; `e[0]` is the community size.
    pub e: Vec<f64>,
    pub a: f64,
    pub individuals: Vec<IndividualRecord>,
    /// Nonnegative weights summing to one; defaults to `1/N`.
    pub alpha: Vec<f64>,
}

impl Community {
    /// Builds a community with the default `1/N` weights.
    pub fn with_uniform_alpha(
        id: impl Into<String>,
        e: Vec<f64>,
        a: f64,
        individuals: Vec<IndividualRecord>,
    ) -> Self {
        let n = individuals.len();
        Community {
            id: id.into(),
            e,
            a,
            individuals,
            alpha: vec![1.0 / n as f64; n],
        }
    }

    pub fn n(&self) -> usize {
        self.individuals.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::Invariant(format!("community {} has no individuals", self.id)));
        }
        if self.e.is_empty() {
            return Err(Error::Invariant(format!("community {} has empty E", self.id)));
        }
        if self.e[0] != n as f64 {
            return Err(Error::Invariant(format!(
                "community {}: size covariate e[0]={} but {} individual rows",
                self.id, self.e[0], n
            )));
        }
        if self.alpha.len() != n {
            return Err(Error::Weight(format!(
                "community {}: {} weights for {} individuals",
                self.id,
                self.alpha.len(),
                n
            )));
        }
        if self.alpha.iter().any(|&a| !(a >= 0.0) || !a.is_finite()) {
            return Err(Error::Weight(format!("community {}: negative or non-finite weight", self.id)));
        }
        let sum: f64 = self.alpha.iter().sum();
        if (sum - 1.0).abs() > ALPHA_SUM_TOL {
            return Err(Error::Weight(format!(
                "community {}: weights sum to {sum}, expected 1",
                self.id
            )));
        }
        if !self.a.is_finite() || self.e.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!("community {}: non-finite exposure or E", self.id)));
        }
        for ind in &self.individuals {
            if !ind.y.is_finite() || ind.w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invariant(format!("community {}: non-finite W or Y", self.id)));
            }
        }
        Ok(())
    }

    /// Community-level summary of the `W` matrix used as a regression feature.
    pub fn w_summary(&self, kind: WSummary) -> Vec<f64> {
        let p = self.individuals.first().map_or(0, |i| i.w.len());
        let mut out = vec![0.0; p];
        match kind {
            WSummary::AlphaMean => {
                for (ind, &a) in self.individuals.iter().zip(&self.alpha) {
                    for (o, &w) in out.iter_mut().zip(&ind.w) {
                        *o += a * w;
                    }
                }
            }
            WSummary::Mean => {
                let inv = 1.0 / self.n() as f64;
                for ind in &self.individuals {
                    for (o, &w) in out.iter_mut().zip(&ind.w) {
                        *o += inv * w;
                    }
                }
            }
        }
        out
    }
}

/// How the individual-covariate matrix is collapsed to a fixed-length vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WSummary {
    /// Columnwise alpha-weighted means (default).
    AlphaMean,
    /// Unweighted columnwise means.
    Mean,
}

impl Default for WSummary {
    fn default() -> Self {
        WSummary::AlphaMean
    }
}

/// Known or empirical range of the individual outcomes.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OutcomeBounds {
    pub lo: f64,
    pub hi: f64,
}

impl OutcomeBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Invariant(format!("invalid outcome bounds [{lo}, {hi}]")));
        }
        Ok(OutcomeBounds { lo, hi })
    }

    /// Empirical min/max with a zero-width guard of one unit.
    pub fn empirical(ys: impl Iterator<Item = f64>) -> Result<Self> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for y in ys {
            lo = lo.min(y);
            hi = hi.max(y);
        }
        if !lo.is_finite() {
            return Err(Error::Invariant("no outcomes to derive bounds from".into()));
        }
        if lo == hi {
            hi = lo + 1.0;
        }
        OutcomeBounds::new(lo, hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn scale(&self, y: f64) -> f64 {
        (y - self.lo) / self.width()
    }

    pub fn unscale(&self, y01: f64) -> f64 {
        self.lo + self.width() * y01
    }
}

/// J i.i.d. communities plus the outcome range used for scaling.
#[derive(Debug, Clone)]
pub struct HierarchicalDataset {
    pub communities: Vec<Community>,
    pub bounds: OutcomeBounds,
}

impl HierarchicalDataset {
    /// Validates invariants and derives bounds empirically when not given.
    pub fn new(communities: Vec<Community>, bounds: Option<OutcomeBounds>) -> Result<Self> {
        if communities.len() < 2 {
            return Err(Error::Invariant(format!(
                "need at least 2 communities, got {}",
                communities.len()
            )));
        }
        let bounds = match bounds {
            Some(b) => b,
            None => OutcomeBounds::empirical(
                communities.iter().flat_map(|c| c.individuals.iter().map(|i| i.y)),
            )?,
        };
        let ds = HierarchicalDataset { communities, bounds };
        ds.validate()?;
        Ok(ds)
    }

    pub fn j(&self) -> usize {
        self.communities.len()
    }

    /// Individual covariate dimension `p` (uniform across the dataset).
    pub fn w_dim(&self) -> usize {
        self.communities[0].individuals[0].w.len()
    }

    pub fn e_dim(&self) -> usize {
        self.communities[0].e.len()
    }

    pub fn validate(&self) -> Result<()> {
        let e_dim = self.e_dim();
        let w_dim = self.w_dim();
        for c in &self.communities {
            c.validate()?;
            if c.e.len() != e_dim {
                return Err(Error::DimensionMismatch(format!(
                    "community {}: E has length {}, expected {e_dim}",
                    c.id,
                    c.e.len()
                )));
            }
            for ind in &c.individuals {
                if ind.w.len() != w_dim {
                    return Err(Error::DimensionMismatch(format!(
                        "community {}: W row has length {}, expected {w_dim}",
                        c.id,
                        ind.w.len()
                    )));
                }
                if ind.y < self.bounds.lo || ind.y > self.bounds.hi {
                    return Err(Error::OutcomeOutOfBounds {
                        value: ind.y,
                        lo: self.bounds.lo,
                        hi: self.bounds.hi,
                    });
                }
            }
        }
        Ok(())
    }

    /// Scaled community outcomes, one per community.
    pub fn scaled_outcomes(&self) -> Vec<f64> {
        self.communities
            .iter()
            .map(|c| community_outcome(c, &self.bounds).expect("validated dataset"))
            .collect()
    }

    /// Whether every community has the same number of individuals.
    pub fn constant_n(&self) -> bool {
        let n0 = self.communities[0].n();
        self.communities.iter().all(|c| c.n() == n0)
    }

    /// Stable content fingerprint, used to detect mismatched contrast runs.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.bounds.lo.to_bits().hash(&mut h);
        self.bounds.hi.to_bits().hash(&mut h);
        for c in &self.communities {
            c.id.hash(&mut h);
            c.a.to_bits().hash(&mut h);
            for &e in &c.e {
                e.to_bits().hash(&mut h);
            }
            for (ind, &a) in c.individuals.iter().zip(&c.alpha) {
                a.to_bits().hash(&mut h);
                ind.y.to_bits().hash(&mut h);
                for &w in &ind.w {
                    w.to_bits().hash(&mut h);
                }
            }
        }
        h.finish()
    }
}

/// Weighted average of the scaled individual outcomes of one community.
pub fn community_outcome(c: &Community, bounds: &OutcomeBounds) -> Result<f64> {
    if bounds.width() <= 0.0 {
        return Err(Error::Invariant("invalid bounds".into()));
    }
    c.validate_weights_only()?;
    let mut acc = 0.0;
    for (ind, &a) in c.individuals.iter().zip(&c.alpha) {
        if ind.y < bounds.lo || ind.y > bounds.hi {
            return Err(Error::OutcomeOutOfBounds {
                value: ind.y,
                lo: bounds.lo,
                hi: bounds.hi,
            });
        }
        acc += a * bounds.scale(ind.y);
    }
    Ok(acc)
}

impl Community {
    fn validate_weights_only(&self) -> Result<()> {
        if self.alpha.len() != self.individuals.len() {
            return Err(Error::Weight(format!(
                "community {}: {} weights for {} individuals",
                self.id,
                self.alpha.len(),
                self.individuals.len()
            )));
        }
        if self.alpha.iter().any(|&a| !(a >= 0.0)) {
            return Err(Error::Weight(format!("community {}: negative weight", self.id)));
        }
        let sum: f64 = self.alpha.iter().sum();
        if (sum - 1.0).abs() > ALPHA_SUM_TOL {
            return Err(Error::Weight(format!(
                "community {}: weights sum to {sum}, expected 1",
                self.id
            )));
        }
        Ok(())
    }
}

/// Maps a scaled estimate and standard error back to the natural outcome scale.
pub fn unscale_estimate(psi_scaled: f64, se_scaled: f64, bounds: &OutcomeBounds) -> (f64, f64) {
    (bounds.unscale(psi_scaled), bounds.width() * se_scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ind(w: Vec<f64>, y: f64) -> IndividualRecord {
        IndividualRecord { w, y }
    }

    fn community(id: &str, a: f64, ys: &[f64]) -> Community {
        let individuals: Vec<_> = ys.iter().map(|&y| ind(vec![0.0], y)).collect();
        let e = vec![ys.len() as f64];
        Community::with_uniform_alpha(id, e, a, individuals)
    }

    #[test]
    fn outcome_rescales_single_individual() {
        let c = community("1", 0.0, &[3.0]);
        let b = OutcomeBounds::new(1.0, 5.0).unwrap();
        assert_abs_diff_eq!(community_outcome(&c, &b).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn outcome_identity_bounds() {
        let c = community("1", 0.0, &[0.0, 1.0]);
        let b = OutcomeBounds::new(0.0, 1.0).unwrap();
        assert_abs_diff_eq!(community_outcome(&c, &b).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn outcome_weighted_average() {
        // (0.2 + 0.4 + 0.6) / 3
        let c = community("1", 0.0, &[2.0, 4.0, 6.0]);
        let b = OutcomeBounds::new(0.0, 10.0).unwrap();
        assert_abs_diff_eq!(community_outcome(&c, &b).unwrap(), 0.4, epsilon = 1e-12);
    }

    #[test]
    fn outcome_rejects_out_of_bounds() {
        let c = community("1", 0.0, &[7.0]);
        let b = OutcomeBounds::new(0.0, 5.0).unwrap();
        assert!(matches!(
            community_outcome(&c, &b),
            Err(Error::OutcomeOutOfBounds { .. })
        ));
    }

    #[test]
    fn outcome_rejects_bad_weights() {
        let mut c = community("1", 0.0, &[1.0, 2.0]);
        c.alpha = vec![0.9, 0.2];
        let b = OutcomeBounds::new(0.0, 5.0).unwrap();
        assert!(matches!(community_outcome(&c, &b), Err(Error::Weight(_))));
    }

    #[test]
    fn outcome_invariant_to_individual_order() {
        let c1 = community("1", 0.0, &[1.0, 2.0, 5.0]);
        let c2 = community("1", 0.0, &[5.0, 1.0, 2.0]);
        let b = OutcomeBounds::new(0.0, 5.0).unwrap();
        assert_eq!(
            community_outcome(&c1, &b).unwrap(),
            community_outcome(&c2, &b).unwrap()
        );
    }

    #[test]
    fn unscale_examples() {
        let id = OutcomeBounds::new(0.0, 1.0).unwrap();
        assert_eq!(unscale_estimate(0.5, 0.1, &id), (0.5, 0.1));
        let b = OutcomeBounds::new(1.0, 5.0).unwrap();
        let (psi, se) = unscale_estimate(0.5, 0.1, &b);
        assert_abs_diff_eq!(psi, 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(se, 0.4, epsilon = 1e-15);
        let b2 = OutcomeBounds::new(-2.0, 2.0).unwrap();
        assert_eq!(unscale_estimate(0.0, 0.0, &b2), (-2.0, 0.0));
    }

    #[test]
    fn scale_unscale_roundtrip() {
        let b = OutcomeBounds::new(-3.0, 11.0).unwrap();
        for y in [-3.0, 0.0, 2.5, 11.0] {
            assert_abs_diff_eq!(b.unscale(b.scale(y)), y, epsilon = 1e-12);
        }
    }

    #[test]
    fn empirical_bounds_zero_width_guard() {
        let b = OutcomeBounds::empirical([4.0, 4.0, 4.0].into_iter()).unwrap();
        assert_eq!((b.lo, b.hi), (4.0, 5.0));
    }

    #[test]
    fn dataset_rejects_single_community() {
        let c = community("1", 0.0, &[1.0]);
        assert!(matches!(
            HierarchicalDataset::new(vec![c], None),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn dataset_rejects_size_mismatch() {
        let mut c1 = community("1", 0.0, &[1.0, 2.0]);
        c1.e[0] = 0.0;
        let c2 = community("2", 1.0, &[3.0]);
        assert!(matches!(
            HierarchicalDataset::new(vec![c1, c2], None),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn alpha_sums_validated() {
        let c1 = community("1", 0.0, &[1.0, 2.0]);
        let c2 = community("2", 1.0, &[3.0]);
        let ds = HierarchicalDataset::new(vec![c1, c2], None).unwrap();
        for c in &ds.communities {
            let s: f64 = c.alpha.iter().sum();
            assert!((s - 1.0).abs() <= ALPHA_SUM_TOL);
        }
    }

    #[test]
    fn fingerprint_changes_with_data() {
        let ds1 = HierarchicalDataset::new(
            vec![community("1", 0.0, &[1.0]), community("2", 1.0, &[2.0])],
            Some(OutcomeBounds::new(0.0, 5.0).unwrap()),
        )
        .unwrap();
        let ds2 = HierarchicalDataset::new(
            vec![community("1", 0.0, &[1.0]), community("2", 1.0, &[2.5])],
            Some(OutcomeBounds::new(0.0, 5.0).unwrap()),
        )
        .unwrap();
        assert_ne!(ds1.fingerprint(), ds2.fingerprint());
        assert_eq!(ds1.fingerprint(), ds1.clone().fingerprint());
    }
}
