//! End-to-end estimation runs: density fit, outcome fit, targeting,
//! inference, contrasts, and the replicated benchmark driver.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{InterventionConfig, RunConfig};
use crate::data::HierarchicalDataset;
use crate::density::{fit_exposure_density, ConditionalDensityModel, ExposureDensity};
use crate::error::{Error, Result};
use crate::individual::{fit_individual_density, IndividualDensityModel};
use crate::inference::{
    eic_values, estimate_contrast, ContrastReport, Diagnostics, EstimateReport,
};
use crate::intervention::{
    density_ratio, positivity_diagnostic, summarize_ratios, InterventionSpec, PositivitySummary,
};
use crate::io::load_dataset;
use crate::outcome::{fit_initial_outcome, OutcomeModel};
use crate::select::hashed_fold;
use crate::simulate::{generate, oracle_psi};
use crate::tmle::{estimate_psi, target, GhatRef, Level};

/// Reports for every configured intervention plus declared contrasts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOutput {
    pub reports: Vec<EstimateReport>,
    pub contrasts: Vec<ContrastReport>,
}

/// Loads the dataset named by the config: a CSV file, or a simulated
/// draw from the DGP block.
pub fn load_input(cfg: &RunConfig, seed: u64, base_dir: &Path) -> Result<HierarchicalDataset> {
    cfg.validate()?;
    let bounds = match cfg.outcome_bounds {
        Some((lo, hi)) => Some(crate::data::OutcomeBounds::new(lo, hi)?),
        None => None,
    };
    match (&cfg.input, &cfg.dgp) {
        (Some(path), None) => {
            let p = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
            load_dataset(p, bounds)
        }
        (None, Some(dgp)) => {
            let ds = generate(dgp, seed)?;
            match bounds {
                Some(b) => HierarchicalDataset::new(ds.communities, Some(b)),
                None => Ok(ds),
            }
        }
        _ => unreachable!("validated"),
    }
}

struct FittedNuisance {
    ghat: ConditionalDensityModel,
    individual: Option<IndividualDensityModel>,
    initial: OutcomeModel,
    warnings: Vec<String>,
}

fn fit_nuisance(ds: &HierarchicalDataset, cfg: &RunConfig, seed: u64, base_dir: &Path) -> Result<FittedNuisance> {
    let mut warnings = Vec::new();

    let a: Vec<f64> = ds.communities.iter().map(|c| c.a).collect();
    let covs: Vec<Vec<f64>> = ds
        .communities
        .iter()
        .map(|c| {
            let mut row = c.e.clone();
            row.extend(c.w_summary(cfg.density.w_summary));
            row
        })
        .collect();
    let fold_ids: Vec<usize> = ds
        .communities
        .iter()
        .map(|c| hashed_fold(&c.id, cfg.density.cv_folds))
        .collect();

    let ghat = match cfg.density.fixed_binary_p {
        Some(p) => {
            warnings.push(format!("exposure density fixed at P(A=1) = {p}, not fitted"));
            ConditionalDensityModel::fixed_binary(p)?
        }
        None => fit_exposure_density(&a, &covs, &cfg.density.fit_config(Some(fold_ids)))?,
    };

    let individual = if cfg.targeting.level == Level::Individual {
        let m = fit_individual_density(ds, &cfg.density.fit_config(None), &cfg.individual, seed)?;
        warnings.extend(m.warnings.clone());
        Some(m)
    } else {
        None
    };

    let initial = fit_initial_outcome(ds, &cfg.outcome.fit_config(base_dir)?)?;
    Ok(FittedNuisance { ghat, individual, initial, warnings })
}

fn positivity_for(
    ds: &HierarchicalDataset,
    cfg: &RunConfig,
    fitted: &FittedNuisance,
    spec: &InterventionSpec,
) -> Result<PositivitySummary> {
    match (cfg.targeting.level, &fitted.individual) {
        (Level::Individual, Some(model)) => {
            // community-scoped views so the within plan sees its own profiles
            let mut ratios = Vec::new();
            let mut n_zero = 0;
            for (j, c) in ds.communities.iter().enumerate() {
                let view = model.view(j);
                for ind in &c.individuals {
                    let r = density_ratio(spec, &view, c.a, &c.e, &ind.w)?;
                    if r.zero_reference {
                        n_zero += 1;
                        ratios.push(f64::INFINITY);
                    } else {
                        ratios.push(r.value);
                    }
                }
            }
            Ok(summarize_ratios(ratios, n_zero, cfg.targeting.ratio_cap))
        }
        _ => {
            let contexts: Vec<(f64, Vec<f64>, Vec<f64>)> = ds
                .communities
                .iter()
                .map(|c| (c.a, c.e.clone(), c.w_summary(cfg.density.w_summary)))
                .collect();
            positivity_diagnostic(
                spec,
                &fitted.ghat,
                contexts.iter().map(|(a, e, w)| (*a, e.as_slice(), w.as_slice())),
                cfg.targeting.ratio_cap,
            )
        }
    }
}

/// Runs the full estimation pipeline on a loaded dataset.
pub fn run_estimate(
    ds: &HierarchicalDataset,
    cfg: &RunConfig,
    seed: u64,
    base_dir: &Path,
) -> Result<RunOutput> {
    cfg.validate()?;
    let fitted = fit_nuisance(ds, cfg, seed, base_dir)?;
    let observed_a: Vec<f64> = ds.communities.iter().map(|c| c.a).collect();

    let ghat_ref = match (&cfg.targeting.level, &fitted.individual) {
        (Level::Individual, Some(m)) => GhatRef::Individual(m),
        _ => GhatRef::Community(&fitted.ghat),
    };

    let mut reports = Vec::new();
    for ic in &cfg.interventions {
        let spec = ic.resolve(&observed_a, base_dir)?;
        spec.validate(match &ghat_ref {
            GhatRef::Community(g) => g.support(),
            GhatRef::Individual(m) => m.support(),
        })?;

        let positivity = positivity_for(ds, cfg, &fitted, &spec)?;
        let targeted = target(
            &fitted.initial,
            &ghat_ref,
            &spec,
            ds,
            &cfg.targeting,
            cfg.density.w_summary,
        )?;
        let psi_parts = estimate_psi(
            &targeted,
            &fitted.initial,
            &ghat_ref,
            &spec,
            ds,
            &cfg.targeting,
            cfg.density.w_summary,
        )?;
        let eic = eic_values(&targeted, &psi_parts, ds);

        let diagnostics = Diagnostics {
            positivity,
            truncation_count: targeted.truncation_count,
            zero_reference_count: targeted.zero_reference_count,
            epsilon_fallback: targeted.epsilon_fallback,
            score_residual: targeted.score_residual,
            cv_density_selected: fitted.ghat.selected.map(|c| c.name().to_string()),
            cv_density_losses: fitted.ghat.cv_losses.clone(),
            cv_outcome_selected: Some(fitted.initial.selected.name().to_string()),
            cv_outcome_losses: fitted.initial.cv_losses.clone(),
            density_audit: fitted.ghat.audit_json(),
            integration_mc_se: psi_parts.max_mc_se,
            warnings: fitted.warnings.clone(),
        };
        reports.push(EstimateReport::assemble(
            ic.name(),
            &targeted,
            &psi_parts,
            eic,
            ds,
            seed,
            diagnostics,
        ));
    }

    let mut contrasts = Vec::new();
    for (a, b) in &cfg.contrasts {
        let ra = reports.iter().find(|r| &r.intervention == a).expect("validated");
        let rb = reports.iter().find(|r| &r.intervention == b).expect("validated");
        // pair (a, b) reads "a minus b"
        contrasts.push(estimate_contrast(ra, rb)?);
    }

    if !cfg.emit_eic {
        reports = reports.into_iter().map(EstimateReport::strip_eic).collect();
    }
    Ok(RunOutput { reports, contrasts })
}

/// One benchmark replicate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub replicate: usize,
    pub psi_hat: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub covered: u8,
    pub epsilon: f64,
    pub truncation_count: usize,
}

/// Replicated-simulation summary against the Monte Carlo oracle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkOutput {
    pub rows: Vec<BenchmarkRow>,
    pub psi0: f64,
    pub psi0_mc_se: f64,
    pub mean_psi_hat: f64,
    pub bias: f64,
    pub mean_se: f64,
    pub empirical_se: f64,
    pub coverage: f64,
    /// Monte Carlo standard error of the replicate mean.
    pub mc_se_of_mean: f64,
}

fn replicate_seed(seed: u64, replicate: usize) -> u64 {
    // splitmix-style mixing keeps replicate streams disjoint
    let mut z = seed.wrapping_add((replicate as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs the replicated benchmark for the first configured intervention:
/// per-replicate estimates plus bias, spread, and coverage against the
/// oracle value.
pub fn run_benchmark(cfg: &RunConfig, seed: u64, base_dir: &Path) -> Result<BenchmarkOutput> {
    cfg.validate()?;
    let bench = cfg
        .benchmark
        .as_ref()
        .ok_or_else(|| Error::Config("benchmark block missing".into()))?;
    let dgp = cfg.dgp.as_ref().expect("validated");
    let ic = &cfg.interventions[0];
    if let InterventionConfig::TruncatedShift { floor: None, .. } = ic {
        return Err(Error::Config(
            "benchmarking a truncated shift requires an explicit floor".into(),
        ));
    }
    let spec = ic.resolve(&[], base_dir)?;
    let (psi0, psi0_mc_se) = oracle_psi(dgp, &spec, bench.oracle_draws, replicate_seed(seed, 0))?;

    let rows: Vec<Result<BenchmarkRow>> = (0..bench.replicates)
        .into_par_iter()
        .map(|r| {
            let rep_seed = replicate_seed(seed, r + 1);
            let ds = generate(dgp, rep_seed)?;
            let out = run_estimate(&ds, cfg, rep_seed, base_dir)?;
            let rep = &out.reports[0];
            let covered = u8::from(rep.ci_lo <= psi0 && psi0 <= rep.ci_hi);
            Ok(BenchmarkRow {
                replicate: r,
                psi_hat: rep.psi_hat,
                se: rep.variance.sqrt(),
                ci_lo: rep.ci_lo,
                ci_hi: rep.ci_hi,
                covered,
                epsilon: rep.epsilon,
                truncation_count: rep.diagnostics.truncation_count,
            })
        })
        .collect();
    let rows: Vec<BenchmarkRow> = rows.into_iter().collect::<Result<_>>()?;

    let reps = rows.len() as f64;
    let mean_psi_hat = rows.iter().map(|r| r.psi_hat).sum::<f64>() / reps;
    let mean_se = rows.iter().map(|r| r.se).sum::<f64>() / reps;
    let emp_var = rows
        .iter()
        .map(|r| (r.psi_hat - mean_psi_hat) * (r.psi_hat - mean_psi_hat))
        .sum::<f64>()
        / reps;
    let coverage = rows.iter().map(|r| r.covered as f64).sum::<f64>() / reps;
    Ok(BenchmarkOutput {
        psi0,
        psi0_mc_se,
        mean_psi_hat,
        bias: mean_psi_hat - psi0,
        mean_se,
        empirical_se: emp_var.sqrt(),
        coverage,
        mc_se_of_mean: (emp_var / reps).sqrt(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::preset_well_specified;

    fn static_config(j: usize, n: usize) -> RunConfig {
        serde_json::from_value(serde_json::json!({
            "dgp": serde_json::to_value(preset_well_specified(j, n)).unwrap(),
            "interventions": [{"kind": "static", "name": "treat", "a_star": 1.0},
                              {"kind": "static", "name": "control", "a_star": 0.0}],
            "contrasts": [["treat", "control"]],
            "outcome": {"level": "pooled_individual"},
            "density": {"cv_folds": 3},
            "emit_eic": true
        }))
        .unwrap()
    }

    #[test]
    fn estimate_run_produces_reports_and_contrast() {
        let cfg = static_config(40, 6);
        let ds = load_input(&cfg, 5, Path::new(".")).unwrap();
        let out = run_estimate(&ds, &cfg, 5, Path::new(".")).unwrap();
        assert_eq!(out.reports.len(), 2);
        assert_eq!(out.contrasts.len(), 1);
        let r = &out.reports[0];
        assert!(r.psi_hat >= 0.0 && r.psi_hat <= 1.0);
        assert!(r.ci_lo <= r.psi_hat && r.psi_hat <= r.ci_hi);
        assert!(r.eic.is_some());
        let c = &out.contrasts[0];
        assert!((c.delta - (out.reports[0].psi_hat - out.reports[1].psi_hat)).abs() < 1e-12);
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = static_config(30, 5);
        let ds = load_input(&cfg, 11, Path::new(".")).unwrap();
        let o1 = run_estimate(&ds, &cfg, 11, Path::new(".")).unwrap();
        let o2 = run_estimate(&ds, &cfg, 11, Path::new(".")).unwrap();
        assert_eq!(
            serde_json::to_string(&o1).unwrap(),
            serde_json::to_string(&o2).unwrap()
        );
    }

    #[test]
    fn benchmark_rows_and_coverage_flags() {
        let mut cfg = static_config(40, 5);
        cfg.benchmark = Some(crate::config::BenchmarkConfig {
            replicates: 4,
            oracle_draws: 10_000,
        });
        let out = run_benchmark(&cfg, 3, Path::new(".")).unwrap();
        assert_eq!(out.rows.len(), 4);
        for r in &out.rows {
            assert!(r.covered == 0 || r.covered == 1);
        }
        assert!(out.coverage >= 0.0 && out.coverage <= 1.0);
        assert!(out.psi0 > 0.0 && out.psi0 < 1.0);
    }
}
