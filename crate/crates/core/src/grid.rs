//! Bin grids for discretizing a continuous exposure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cutoff placement strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinStrategy {
    EqualWidth,
    EqualMass,
    /// Blend of equal-width and equal-mass cutoffs with fixed weight 0.5.
    DenbyMallows,
}

impl Default for BinStrategy {
    fn default() -> Self {
        BinStrategy::EqualWidth
    }
}

/// Strictly increasing cutoffs `d_1 < ... < d_{K+1}` covering the observed
/// exposure range; bin `k` is `[d_k, d_{k+1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinGrid {
    pub cutoffs: Vec<f64>,
}

impl BinGrid {
    pub fn from_cutoffs(cutoffs: Vec<f64>) -> Result<Self> {
        if cutoffs.len() < 2 {
            return Err(Error::DegenerateSupport("need at least 2 cutoffs".into()));
        }
        if cutoffs.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::DegenerateSupport("cutoffs must be strictly increasing".into()));
        }
        Ok(BinGrid { cutoffs })
    }

    pub fn k(&self) -> usize {
        self.cutoffs.len() - 1
    }

    pub fn bandwidth(&self, bin: usize) -> f64 {
        self.cutoffs[bin + 1] - self.cutoffs[bin]
    }

    pub fn lo(&self) -> f64 {
        self.cutoffs[0]
    }

    pub fn hi(&self) -> f64 {
        *self.cutoffs.last().unwrap()
    }

    /// Index of the bin containing `a`, or None outside `[d_1, d_{K+1})`.
    pub fn index_of(&self, a: f64) -> Option<usize> {
        if a < self.lo() || a >= self.hi() {
            return None;
        }
        // partition_point: first cutoff strictly greater than a
        let idx = self.cutoffs.partition_point(|&c| c <= a);
        Some(idx - 1)
    }

    pub fn midpoint(&self, bin: usize) -> f64 {
        0.5 * (self.cutoffs[bin] + self.cutoffs[bin + 1])
    }

    pub fn midpoints(&self) -> Vec<f64> {
        (0..self.k()).map(|k| self.midpoint(k)).collect()
    }
}

/// Empirical quantile at probability `q` of sorted data (type-7 linear
/// interpolation).
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Builds a grid of (up to) `k` bins spanning the observed values.
///
/// Equal-mass cutoffs collapse ties, so the returned grid may have fewer
/// bins than requested. The top cutoff is nudged one ulp above the max so
/// every observation falls inside a half-open bin.
pub fn make_grid(a_values: &[f64], k: usize, strategy: BinStrategy) -> Result<BinGrid> {
    if a_values.is_empty() || k == 0 {
        return Err(Error::DegenerateSupport("empty values or k = 0".into()));
    }
    let mut sorted: Vec<f64> = a_values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (min, max) = (sorted[0], *sorted.last().unwrap());
    if min == max {
        if k > 1 {
            return Err(Error::DegenerateSupport(format!(
                "all values equal {min} but k = {k}"
            )));
        }
        return BinGrid::from_cutoffs(vec![min, min.next_up().max(min + f64::EPSILON)]);
    }

    let mut cutoffs: Vec<f64> = match strategy {
        BinStrategy::EqualWidth => (0..=k)
            .map(|i| min + (max - min) * i as f64 / k as f64)
            .collect(),
        BinStrategy::EqualMass => (0..=k)
            .map(|i| quantile_sorted(&sorted, i as f64 / k as f64))
            .collect(),
        BinStrategy::DenbyMallows => {
            let ew: Vec<f64> = (0..=k)
                .map(|i| min + (max - min) * i as f64 / k as f64)
                .collect();
            let em: Vec<f64> = (0..=k)
                .map(|i| quantile_sorted(&sorted, i as f64 / k as f64))
                .collect();
            ew.iter().zip(&em).map(|(a, b)| 0.5 * a + 0.5 * b).collect()
        }
    };

    // collapse ties (possible with equal-mass cutoffs on ties)
    cutoffs.dedup_by(|a, b| *a <= *b);
    if cutoffs.len() < 2 {
        cutoffs = vec![min, max];
    }
    *cutoffs.first_mut().unwrap() = min;
    *cutoffs.last_mut().unwrap() = max.next_up();
    BinGrid::from_cutoffs(cutoffs)
}

/// Default bin count: `max(2, floor(n^(1/3)))`, capped at 20.
pub fn default_k(n_obs: usize) -> usize {
    ((n_obs as f64).cbrt().floor() as usize).clamp(2, 20)
}
