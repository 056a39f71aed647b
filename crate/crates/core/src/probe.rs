//! Genericity probe over perturbed domains
//!
//! Whether a located σ₁ crossing is a generic fold (simple kernel,
//! transversal mean) is a property that should survive small domain
//! perturbations. The probe runs the full branch tracer over a family of
//! seeded boundary perturbations and classifies what it finds. A branch
//! whose σ₁ never crosses zero is reported honestly as `NoFoldFound`
//! together with the positive minimum it maintained; the probe's assertion
//! is then that no *degenerate* crossing exists, not that folds occur.

use crate::continuation::{trace_branch, BranchStatus, ContinuationConfig, FoldRecord};
use crate::error::Result;
use crate::geometry::{build_mesh, perturb_domain, DomainSpec};
use crate::newton::PlasmaConfig;
use crate::operators::Operators;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub seeds: Vec<u64>,
    pub amplitude: f64,
    pub modes: Vec<u32>,
    pub resolution: u32,
    pub alpha_stop: f64,
    /// Gap σ₂ - σ₁ below this fraction of |σ₂| at a crossing marks a
    /// degenerate kernel.
    pub kernel_gap_rel: f64,
    /// |⟨φ₁⟩| / (m ⟨φ₁²⟩^{1/2}) below this marks a degenerate indicator.
    pub indicator_min: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            seeds: vec![1, 2, 3, 4, 5],
            amplitude: 0.05,
            modes: vec![2, 3],
            resolution: 32,
            alpha_stop: 1e-3,
            kernel_gap_rel: 1e-3,
            indicator_min: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeVerdict {
    GenericSimpleTransversal,
    DegenerateKernel,
    DegenerateIndicator,
    NoFoldFound,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeReport {
    pub seed: u64,
    pub verdict: ProbeVerdict,
    /// Minimum of σ₁ seen along the branch.
    pub min_sigma1: f64,
    /// λ at the classified crossing, when one exists.
    pub fold_lambda: Option<f64>,
    pub kernel_gap: Option<f64>,
    pub indicator: Option<f64>,
    pub detail: String,
}

fn classify(cfg: &ProbeConfig, _pcfg: &PlasmaConfig, fold: &FoldRecord) -> (ProbeVerdict, String) {
    let scale = fold.sigma2.abs().max(1e-300);
    if fold.kernel_gap < cfg.kernel_gap_rel * scale {
        return (
            ProbeVerdict::DegenerateKernel,
            format!(
                "gap σ₂ - σ₁ = {:.3e} sits within {:.1e} of a double kernel",
                fold.kernel_gap,
                cfg.kernel_gap_rel * scale
            ),
        );
    }
    if fold.indicator.abs() < cfg.indicator_min {
        return (
            ProbeVerdict::DegenerateIndicator,
            format!("transversality indicator {:.3e} below threshold", fold.indicator),
        );
    }
    (
        ProbeVerdict::GenericSimpleTransversal,
        format!(
            "simple kernel (σ₂ = {:.4e}) with transversal mean ({:.4e})",
            fold.sigma2, fold.indicator
        ),
    )
}

/// Trace one perturbed copy of the base domain and classify its branch.
pub fn probe_seed(
    base: &DomainSpec,
    pcfg: &PlasmaConfig,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ProbeReport> {
    let base_mesh = build_mesh(base, cfg.resolution)?;
    let mesh = perturb_domain(&base_mesh, cfg.amplitude, &cfg.modes, seed)?;
    let ops = Operators::assemble(&mesh)?;
    let ccfg = ContinuationConfig {
        alpha_stop: cfg.alpha_stop,
        eig_count: 4,
        ..ContinuationConfig::default()
    };
    let trace = trace_branch(&mesh, &ops, pcfg, &ccfg)?;
    if let Some(fold) = trace.folds.first() {
        let (verdict, detail) = classify(cfg, pcfg, fold);
        return Ok(ProbeReport {
            seed,
            verdict,
            min_sigma1: trace.min_sigma1,
            fold_lambda: Some(fold.lambda),
            kernel_gap: Some(fold.kernel_gap),
            indicator: Some(fold.indicator),
            detail,
        });
    }
    let detail = match &trace.status {
        BranchStatus::ReachedAlphaStop => format!(
            "branch completed to α = {:.1e} with min σ₁ = {:.6} > 0",
            cfg.alpha_stop, trace.min_sigma1
        ),
        other => format!(
            "no crossing before the branch ended with status {:?} (min σ₁ = {:.6})",
            other, trace.min_sigma1
        ),
    };
    Ok(ProbeReport {
        seed,
        verdict: ProbeVerdict::NoFoldFound,
        min_sigma1: trace.min_sigma1,
        fold_lambda: None,
        kernel_gap: None,
        indicator: None,
        detail,
    })
}

/// Run the probe over all configured seeds.
pub fn run_probe(
    base: &DomainSpec,
    pcfg: &PlasmaConfig,
    cfg: &ProbeConfig,
) -> Result<Vec<ProbeReport>> {
    cfg.seeds
        .iter()
        .map(|&seed| probe_seed(base, pcfg, cfg, seed))
        .collect()
}
