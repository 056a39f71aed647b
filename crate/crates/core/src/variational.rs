//! Free-energy minimization over unit-mass densities
//!
//! The variational route works with the functional
//!
//! ```text
//!   J_λ(ρ) = p/(p+1) ∫ρ^{1+1/p} - λ/2 ∫ρ G[ρ]
//! ```
//!
//! over the convex feasible set {ρ ≥ 0, ∫ρ = 1}. Minimizers satisfy the
//! Euler-Lagrange relation ρ = (α + λG[ρ])₊^p with the multiplier α fixed
//! by the mass constraint, which is the plasma problem again whenever
//! α ≥ 0. This module provides an independent solution route (damped
//! self-consistent sweeps with a projected-gradient fallback), the value
//! identity J = p/(p+1)·α + (p-1)/(p+1)·λE checked along branches, and the
//! threshold λ** where the minimizer's multiplier changes sign.

use crate::error::{Error, Result};
use crate::geometry::Mesh;
use crate::newton::{newton_solve, PlasmaConfig, PlasmaState};
use crate::operators::{integrate_quad, Field, Operators, QuadField};

#[derive(Clone, Debug)]
pub struct VariationalConfig {
    /// Initial damping of the self-consistent sweep.
    pub theta: f64,
    /// Stop when the L¹ defect ∫|ρ_EL - ρ| falls below this.
    pub tol: f64,
    pub max_iters: usize,
    /// Hand over to the constrained Newton solver once the defect is below
    /// this and the multiplier is safely positive.
    pub polish_threshold: f64,
}

impl Default for VariationalConfig {
    fn default() -> Self {
        VariationalConfig {
            theta: 0.8,
            tol: 1e-11,
            max_iters: 20000,
            polish_threshold: 1e-5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DensityIterate {
    pub rho: QuadField,
    /// Multiplier of the mass constraint at the Euler-Lagrange point.
    pub alpha: f64,
    pub psi: Field,
    pub j_value: f64,
    pub iterations: usize,
    /// L¹ distance between ρ and its Euler-Lagrange image at exit.
    pub defect: f64,
    pub newton_polished: bool,
}

/// J_λ(ρ) evaluated with ψ = G[ρ] supplied by the caller.
pub fn free_energy(
    mesh: &Mesh,
    p: f64,
    lambda: f64,
    rho: &QuadField,
    psi: &Field,
) -> f64 {
    let bulk = integrate_quad(mesh, &rho.map(|v| v.powf(1.0 + 1.0 / p)));
    let psi_q = QuadField::from_field(mesh, psi);
    let coupling = integrate_quad(mesh, &rho.zip(&psi_q, |a, b| a * b));
    p / (p + 1.0) * bulk - 0.5 * lambda * coupling
}

/// Multiplier solving ∫(α + λψ)₊^p = 1 for a given potential.
fn mass_multiplier(mesh: &Mesh, p: f64, lambda: f64, psi_q: &QuadField) -> f64 {
    let sup = psi_q.values().iter().fold(0.0f64, |m, v| m.max(*v));
    let mut lo = -lambda * sup - 1.0;
    let mut hi = 1.0;
    let mass_at = |a: f64| -> f64 {
        integrate_quad(mesh, &psi_q.map(|v| (a + lambda * v).max(0.0).powf(p)))
    };
    while mass_at(hi) < 1.0 {
        hi = hi * 2.0 + 1.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mass_at(mid) > 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Project a signed density onto {ρ ≥ 0, ∫ρ = 1} by the shift-and-clip rule
/// ρ ← (ρ + c)₊ with c fixed by the mass.
pub fn project_feasible(mesh: &Mesh, rho: &QuadField) -> QuadField {
    let sup = rho.values().iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let mut lo = -sup;
    let mut hi = -rho.min() + 1.0;
    while integrate_quad(mesh, &rho.map(|v| (v + hi).max(0.0))) < 1.0 {
        hi = hi * 2.0 + 1.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let mass = integrate_quad(mesh, &rho.map(|v| (v + mid).max(0.0)));
        if mass > 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let c = 0.5 * (lo + hi);
    rho.map(|v| (v + c).max(0.0))
}

/// Minimize J_λ over the feasible densities.
///
/// Damped Euler-Lagrange sweeps keep every iterate exactly feasible (the
/// update is a convex combination of two unit-mass densities). When the
/// multiplier is safely positive the constrained Newton solver finishes the
/// job; otherwise the sweep runs to tolerance, falling back to a monotone
/// projected-gradient pass whenever damping collapses.
pub fn minimize_free_energy(
    mesh: &Mesh,
    ops: &Operators,
    cfg: &PlasmaConfig,
    vcfg: &VariationalConfig,
    lambda: f64,
    rho0: Option<&QuadField>,
) -> Result<DensityIterate> {
    cfg.validate(mesh)?;
    if lambda < 0.0 {
        return Err(Error::Usage(format!("λ must be nonnegative, got {lambda}")));
    }
    let p = cfg.p;
    let mut rho = match rho0 {
        Some(r) => {
            let mass = integrate_quad(mesh, r);
            if !(mass > 0.0) {
                return Err(Error::VariationalFailure(
                    "starting density has no mass".into(),
                ));
            }
            r.map(|v| v.max(0.0) / mass)
        }
        None => QuadField::constant(mesh, 1.0),
    };
    let mut psi = ops.green_solve(mesh, &rho)?;
    let mut j = free_energy(mesh, p, lambda, &rho, &psi);
    let mut theta = vcfg.theta;
    let mut alpha = 0.0;
    let mut defect = f64::INFINITY;
    let mut iterations = 0;
    let mut stalls = 0;
    for iter in 1..=vcfg.max_iters {
        iterations = iter;
        let psi_q = QuadField::from_field(mesh, &psi);
        alpha = mass_multiplier(mesh, p, lambda, &psi_q);
        let rho_el = psi_q.map(|v| (alpha + lambda * v).max(0.0).powf(p));
        defect = integrate_quad(mesh, &rho.zip(&rho_el, |a, b| (a - b).abs()));
        if defect < vcfg.tol {
            break;
        }
        if defect < vcfg.polish_threshold && alpha > 1e-6 {
            // the (·)₊ truncation is inactive: finish with Newton
            let state = newton_solve(mesh, ops, cfg, lambda, alpha, psi.clone())?;
            let rho_q = state.rho.clone();
            let j_value = free_energy(mesh, p, lambda, &rho_q, &state.psi);
            let psi_q = QuadField::from_field(mesh, &state.psi);
            let rho_el =
                psi_q.map(|v| (state.alpha + lambda * v).max(0.0).powf(p));
            let final_defect =
                integrate_quad(mesh, &rho_q.zip(&rho_el, |a, b| (a - b).abs()));
            return Ok(DensityIterate {
                rho: rho_q,
                alpha: state.alpha,
                psi: state.psi,
                j_value,
                iterations: iter,
                defect: final_defect,
                newton_polished: true,
            });
        }
        let mut advanced = false;
        let mut theta_try = theta;
        while theta_try > 1e-4 {
            let cand = rho.zip(&rho_el, |a, b| a + theta_try * (b - a));
            let psi_cand = ops.green_solve(mesh, &cand)?;
            let j_cand = free_energy(mesh, p, lambda, &cand, &psi_cand);
            if j_cand <= j + 1e-13 * j.abs().max(1.0) {
                rho = cand;
                psi = psi_cand;
                j = j_cand;
                theta = (theta_try * 1.25).min(vcfg.theta);
                advanced = true;
                break;
            }
            theta_try *= 0.5;
        }
        if !advanced {
            // monotone projected-gradient pass on ∂J/∂ρ = ρ^{1/p} - λψ
            stalls += 1;
            let psi_q = QuadField::from_field(mesh, &psi);
            let grad = rho.zip(&psi_q, |r, v| r.powf(1.0 / p) - lambda * v);
            let gscale = grad
                .values()
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()))
                .max(1e-12);
            let mut eta = 1.0 / gscale;
            let mut moved = false;
            while eta > 1e-12 / gscale {
                let cand = project_feasible(mesh, &rho.zip(&grad, |r, g| r - eta * g));
                let psi_cand = ops.green_solve(mesh, &cand)?;
                let j_cand = free_energy(mesh, p, lambda, &cand, &psi_cand);
                if j_cand < j - 1e-15 {
                    rho = cand;
                    psi = psi_cand;
                    j = j_cand;
                    moved = true;
                    break;
                }
                eta *= 0.25;
            }
            if !moved || stalls > 50 {
                break;
            }
        }
    }
    Ok(DensityIterate {
        rho,
        alpha,
        psi,
        j_value: j,
        iterations,
        defect,
        newton_polished: false,
    })
}

/// Defect of the exact discrete value identity
/// J = p/(p+1)·α + (p-1)/(p+1)·λE at a solved state.
pub fn value_identity_defect(mesh: &Mesh, cfg: &PlasmaConfig, state: &PlasmaState) -> f64 {
    let p = cfg.p;
    let psi_q = QuadField::from_field(mesh, &state.psi);
    let bulk = integrate_quad(mesh, &state.rho.map(|v| v.powf(1.0 + 1.0 / p)));
    let coupling = integrate_quad(mesh, &state.rho.zip(&psi_q, |a, b| a * b));
    let j = p / (p + 1.0) * bulk - 0.5 * state.lambda * coupling;
    let predicted =
        p / (p + 1.0) * state.alpha + (p - 1.0) / (p + 1.0) * state.lambda * state.energy;
    j - predicted
}

#[derive(Clone, Debug)]
pub struct IdentityReport {
    /// Single additive constant fitted over the sample set.
    pub fitted_constant: f64,
    /// Largest residual after removing the fitted constant.
    pub max_defect: f64,
    pub samples: Vec<(f64, f64)>,
}

/// Fit one additive constant to the value-identity defect over a family of
/// states; both the constant and the residuals must vanish to solver
/// accuracy.
pub fn identity_suite(
    mesh: &Mesh,
    cfg: &PlasmaConfig,
    states: &[PlasmaState],
) -> Result<IdentityReport> {
    if states.is_empty() {
        return Err(Error::Usage("identity suite needs at least one state".into()));
    }
    let samples: Vec<(f64, f64)> = states
        .iter()
        .map(|s| (s.lambda, value_identity_defect(mesh, cfg, s)))
        .collect();
    let fitted_constant = samples.iter().map(|(_, d)| d).sum::<f64>() / samples.len() as f64;
    let max_defect = samples
        .iter()
        .map(|(_, d)| (d - fitted_constant).abs())
        .fold(0.0, f64::max);
    Ok(IdentityReport {
        fitted_constant,
        max_defect,
        samples,
    })
}

#[derive(Clone, Debug)]
pub struct LambdaStarStar {
    pub value: f64,
    pub bracket: (f64, f64),
    pub evaluations: usize,
}

/// Threshold λ** where the minimizer's multiplier α changes sign, located
/// by bisection on sign(α).
pub fn lambda_star_star(
    mesh: &Mesh,
    ops: &Operators,
    cfg: &PlasmaConfig,
    vcfg: &VariationalConfig,
    bracket_hint: Option<(f64, f64)>,
    rel_tol: f64,
) -> Result<LambdaStarStar> {
    let mut evals = 0usize;
    let mut warm: Option<QuadField> = None;
    let mut alpha_at = |lambda: f64, warm: &mut Option<QuadField>| -> Result<f64> {
        evals += 1;
        let it = minimize_free_energy(mesh, ops, cfg, vcfg, lambda, warm.as_ref())?;
        *warm = Some(it.rho.clone());
        Ok(it.alpha)
    };
    let (mut lo, mut hi) = bracket_hint.unwrap_or((1.0, 20.0));
    let mut a_lo = alpha_at(lo, &mut warm)?;
    while a_lo <= 0.0 {
        lo *= 0.5;
        if lo < 1e-6 {
            return Err(Error::VariationalFailure(
                "no positive-multiplier side found for λ**".into(),
            ));
        }
        a_lo = alpha_at(lo, &mut warm)?;
    }
    let mut a_hi = alpha_at(hi, &mut warm)?;
    let mut grow = 0;
    while a_hi > 0.0 {
        hi *= 1.5;
        grow += 1;
        if grow > 20 {
            return Err(Error::VariationalFailure(
                "multiplier never becomes negative; λ** bracket not found".into(),
            ));
        }
        a_hi = alpha_at(hi, &mut warm)?;
    }
    let _ = (a_lo, a_hi);
    while (hi - lo) > rel_tol * hi {
        let mid = 0.5 * (lo + hi);
        let a = alpha_at(mid, &mut warm)?;
        if a > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(LambdaStarStar {
        value: 0.5 * (lo + hi),
        bracket: (lo, hi),
        evaluations: evals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuation::{trace_branch, ContinuationConfig};
    use crate::geometry::{build_mesh, DomainSpec};

    fn setup(res: u32) -> (Mesh, Operators, PlasmaConfig) {
        let mesh = build_mesh(&DomainSpec::disk(), res).unwrap();
        let ops = Operators::assemble(&mesh).unwrap();
        (mesh, ops, PlasmaConfig::new(2.0))
    }

    #[test]
    fn lambda_zero_minimizer_is_uniform() {
        let (mesh, ops, cfg) = setup(16);
        let it = minimize_free_energy(&mesh, &ops, &cfg, &VariationalConfig::default(), 0.0, None)
            .unwrap();
        assert!((it.alpha - 1.0).abs() < 1e-10, "α = {}", it.alpha);
        let j_exact = cfg.p / (cfg.p + 1.0);
        assert!((it.j_value - j_exact).abs() < 1e-10, "J = {}", it.j_value);
        for v in it.rho.values() {
            assert!((v - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn minimizer_matches_the_newton_branch_point() {
        let (mesh, ops, cfg) = setup(20);
        let lambda = 1.0;
        let it = minimize_free_energy(&mesh, &ops, &cfg, &VariationalConfig::default(), lambda, None)
            .unwrap();
        assert!(it.newton_polished);
        let direct = crate::newton::newton_solve(
            &mesh,
            &ops,
            &cfg,
            lambda,
            1.0,
            Field::zeros(&mesh),
        )
        .unwrap();
        assert!(
            (it.alpha - direct.alpha).abs() < 1e-9,
            "α variational {} vs newton {}",
            it.alpha,
            direct.alpha
        );
        let state = PlasmaState::assemble(&mesh, &cfg, lambda, it.alpha, it.psi.clone()).unwrap();
        assert!(value_identity_defect(&mesh, &cfg, &state).abs() < 1e-12);
    }

    #[test]
    fn iterates_stay_exactly_feasible() {
        let (mesh, ops, cfg) = setup(16);
        let skewed = QuadField::from_fn(&mesh, |x| 1.0 + 0.3 * x[0]);
        let it = minimize_free_energy(
            &mesh,
            &ops,
            &cfg,
            &VariationalConfig {
                polish_threshold: 0.0,
                max_iters: 60,
                ..VariationalConfig::default()
            },
            1.5,
            Some(&skewed),
        )
        .unwrap();
        let mass = integrate_quad(&mesh, &it.rho);
        assert!((mass - 1.0).abs() < 1e-12, "mass drifted to {mass}");
        assert!(it.rho.min() >= 0.0);
    }

    #[test]
    fn value_identity_is_exact_along_a_branch() {
        let (mesh, ops, cfg) = setup(16);
        let ccfg = ContinuationConfig {
            lambda_cap: Some(2.5),
            ..ContinuationConfig::default()
        };
        let trace = trace_branch(&mesh, &ops, &cfg, &ccfg).unwrap();
        let states: Vec<PlasmaState> = trace
            .points
            .iter()
            .step_by(3)
            .map(|p| p.state(&mesh, &cfg).unwrap())
            .collect();
        let report = identity_suite(&mesh, &cfg, &states).unwrap();
        assert!(
            report.fitted_constant.abs() < 1e-10,
            "constant {}",
            report.fitted_constant
        );
        assert!(report.max_defect < 1e-10, "defect {}", report.max_defect);
    }

    #[test]
    fn minimum_value_is_non_increasing_in_lambda() {
        let (mesh, ops, cfg) = setup(16);
        let vcfg = VariationalConfig::default();
        let mut warm: Option<QuadField> = None;
        let mut last = f64::INFINITY;
        for lambda in [0.0, 0.5, 1.0, 1.5, 2.0] {
            let it =
                minimize_free_energy(&mesh, &ops, &cfg, &vcfg, lambda, warm.as_ref()).unwrap();
            assert!(
                it.j_value <= last + 1e-9,
                "J({lambda}) = {} after {}",
                it.j_value,
                last
            );
            last = it.j_value;
            warm = Some(it.rho);
        }
    }

    #[test]
    fn projection_is_exact_and_idempotent() {
        let (mesh, _, _) = setup(12);
        let raw = QuadField::from_fn(&mesh, |x| 0.4 - x[0] + 2.0 * x[1]);
        let proj = project_feasible(&mesh, &raw);
        assert!((integrate_quad(&mesh, &proj) - 1.0).abs() < 1e-12);
        assert!(proj.min() >= 0.0);
        let again = project_feasible(&mesh, &proj);
        let drift = proj
            .values()
            .iter()
            .zip(again.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(drift < 1e-12);
    }

    #[test]
    fn multiplier_threshold_agrees_with_the_branch_endpoint() {
        let (mesh, ops, cfg) = setup(12);
        let ccfg = ContinuationConfig {
            alpha_stop: 1e-4,
            lambda_cap: Some(60.0),
            ..ContinuationConfig::default()
        };
        let trace = trace_branch(&mesh, &ops, &cfg, &ccfg).unwrap();
        let lambda_inf = trace.endpoint.as_ref().unwrap().lambda_infinity;
        let vcfg = VariationalConfig {
            tol: 1e-9,
            ..VariationalConfig::default()
        };
        let lss = lambda_star_star(
            &mesh,
            &ops,
            &cfg,
            &vcfg,
            Some((0.8 * lambda_inf, 1.2 * lambda_inf)),
            1e-4,
        )
        .unwrap();
        let rel = (lss.value - lambda_inf).abs() / lambda_inf;
        assert!(
            rel < 0.02,
            "λ** = {} vs branch λ_∞ = {lambda_inf}",
            lss.value
        );
    }
}
