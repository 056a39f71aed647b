//! Branch continuation from λ = 0 to the vanishing-α endpoint
//!
//! The solution curve starts at the exact discrete state (α, ψ) = (1, G[1])
//! and is followed by pseudo-arclength (Keller) stepping in the product
//! metric dλ² + dα² + ∫dψ², with the first constrained eigenvalue σ₁
//! tracked along the way. A sign change of σ₁ between accepted points
//! triggers fold location and a diagnostic record. Once α falls below a
//! switch threshold the curve is reparametrized by α and driven onto exact
//! decade targets down to `alpha_stop`, from which the endpoint data
//! (λ_∞ and the endpoint energy) are extrapolated linearly in α.

use crate::error::{Error, Result};
use crate::geometry::Mesh;
use crate::newton::{
    base_state, newton_solve_constrained, nullspace_tangent, PlasmaConfig, PlasmaState,
    StepConstraint,
};
use crate::operators::{Field, Operators};
use crate::spectrum::{eigenpairs, sobolev_constant, EigenConfig, SpectrumResult};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuationConfig {
    pub ds_init: f64,
    pub ds_min: f64,
    pub ds_max: f64,
    /// Smallest α the branch is driven to.
    pub alpha_stop: f64,
    /// Hand over to α-parametrized stepping below this α.
    pub alpha_switch: f64,
    /// Abort guard on λ; computed from the domain when absent.
    pub lambda_cap: Option<f64>,
    pub max_steps: usize,
    /// Spectrum is evaluated at every k-th accepted point.
    pub eig_every: usize,
    pub eig_count: usize,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        ContinuationConfig {
            ds_init: 0.05,
            ds_min: 1e-7,
            ds_max: 0.3,
            alpha_stop: 1e-3,
            alpha_switch: 0.05,
            lambda_cap: None,
            max_steps: 5000,
            eig_every: 1,
            eig_count: 4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BranchPoint {
    /// Accumulated arclength in the product metric.
    pub s: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub energy: f64,
    pub mass_residual: f64,
    pub psi_sup: f64,
    pub sigma1: Option<f64>,
    pub sigma2: Option<f64>,
    /// λ-component of the unit tangent leaving this point.
    pub t_lambda: f64,
    pub is_fold: bool,
    pub psi: Field,
}

impl BranchPoint {
    /// Reassemble the full state this point was recorded from.
    pub fn state(&self, mesh: &Mesh, cfg: &PlasmaConfig) -> Result<PlasmaState> {
        PlasmaState::assemble(mesh, cfg, self.lambda, self.alpha, self.psi.clone())
    }
}

/// Diagnostics collected at a located σ₁ = 0 crossing.
#[derive(Clone, Debug)]
pub struct FoldRecord {
    pub s: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    /// Gap σ₂ - σ₁ separating the kernel from the rest of the spectrum.
    pub kernel_gap: f64,
    /// ⟨φ₁⟩_λ.
    pub mean_phi: f64,
    /// ⟨ψ [φ₁]⟩_λ.
    pub psi_projection: f64,
    /// Scale-invariant transversality measure ⟨φ₁⟩ / (m ⟨φ₁²⟩^{1/2}).
    pub indicator: f64,
    /// ⟨φ₁⟩ and ⟨ψ[φ₁]⟩ must share their sign at a fold.
    pub sign_consistent: bool,
    /// Relative defect of σ₁/λ'(s) against p⟨ψ[φ₁]⟩/⟨[φ₁]²⟩ at the
    /// nearest flanking point.
    pub ratio_defect: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BranchStatus {
    ReachedAlphaStop,
    ReachedLambdaCap,
    ReachedMaxSteps,
    Stalled(String),
}

#[derive(Clone, Debug)]
pub struct EndpointSummary {
    /// Linear-in-α extrapolation of λ to α = 0.
    pub lambda_infinity: f64,
    /// Same extrapolation of the energy.
    pub endpoint_energy: f64,
    /// Distance between the extrapolation and the last computed point,
    /// a crude error indicator.
    pub extrapolation_gap: f64,
    /// The exact-α states used, as (α, λ, E).
    pub targets: Vec<(f64, f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct BranchTrace {
    pub points: Vec<BranchPoint>,
    pub folds: Vec<FoldRecord>,
    pub status: BranchStatus,
    pub endpoint: Option<EndpointSummary>,
    /// First Dirichlet eigenvalue of the domain.
    pub lambda_one: f64,
    pub min_sigma1: f64,
    pub alpha_monotone: bool,
}

impl BranchTrace {
    pub fn max_lambda(&self) -> f64 {
        self.points.iter().fold(0.0, |m, p| m.max(p.lambda))
    }

    /// Nearest recorded point at or below the given α.
    pub fn point_at_alpha(&self, alpha: f64) -> Option<&BranchPoint> {
        self.points
            .iter()
            .filter(|p| (p.alpha - alpha).abs() < 1e-12 * alpha.max(1e-30))
            .next()
    }
}

struct Tangent {
    psi: Field,
    alpha: f64,
    lambda: f64,
}

fn metric_norm(ops: &Operators, psi: &Field, alpha: f64, lambda: f64) -> f64 {
    let mut mp = vec![0.0; psi.interior().len()];
    ops.mass.matvec(psi.interior(), &mut mp);
    let psi2: f64 = mp.iter().zip(psi.interior()).map(|(a, b)| a * b).sum();
    (psi2 + alpha * alpha + lambda * lambda).sqrt()
}

fn metric_row(mesh: &Mesh, ops: &Operators, t: &Tangent) -> Field {
    let mut row = vec![0.0; t.psi.interior().len()];
    ops.mass.matvec(t.psi.interior(), &mut row);
    Field::from_interior(mesh, row)
}

/// Unit tangent at `state`, oriented continuously against the previous one.
fn unit_tangent(
    mesh: &Mesh,
    ops: &Operators,
    cfg: &PlasmaConfig,
    state: &PlasmaState,
    prev: &Tangent,
) -> Result<Tangent> {
    let row = metric_row(mesh, ops, prev);
    let (psi, alpha, lambda) =
        nullspace_tangent(mesh, ops, cfg, state, &row, prev.alpha, prev.lambda)?;
    let nrm = metric_norm(ops, &psi, alpha, lambda);
    if !(nrm > 1e-300) {
        return Err(Error::NearFold("degenerate branch tangent".into()));
    }
    let mut psi = psi;
    psi.scale(1.0 / nrm);
    Ok(Tangent {
        psi,
        alpha: alpha / nrm,
        lambda: lambda / nrm,
    })
}

fn keller_solve(
    mesh: &Mesh,
    ops: &Operators,
    cfg: &PlasmaConfig,
    from: &PlasmaState,
    tangent: &Tangent,
    ds: f64,
) -> Result<PlasmaState> {
    let mut psi_pred = from.psi.clone();
    psi_pred.axpy(ds, &tangent.psi);
    let pred = PlasmaState::assemble(
        mesh,
        cfg,
        from.lambda + ds * tangent.lambda,
        from.alpha + ds * tangent.alpha,
        psi_pred,
    )?;
    let row = metric_row(mesh, ops, tangent);
    let constraint = StepConstraint::Keller {
        t_psi: &row,
        t_alpha: tangent.alpha,
        t_lambda: tangent.lambda,
        prev_psi: &from.psi,
        prev_alpha: from.alpha,
        prev_lambda: from.lambda,
        ds,
    };
    newton_solve_constrained(mesh, ops, cfg, pred, &constraint)
}

fn spectrum_at(
    mesh: &Mesh,
    ops: &Operators,
    cfg: &PlasmaConfig,
    ccfg: &ContinuationConfig,
    state: &PlasmaState,
    warm: Option<&SpectrumResult>,
) -> Result<SpectrumResult> {
    let ecfg = EigenConfig {
        count: ccfg.eig_count.max(2),
        ..EigenConfig::default()
    };
    eigenpairs(mesh, ops, cfg, &ecfg, state, warm)
}

fn make_point(
    s: f64,
    state: &PlasmaState,
    spec: Option<&SpectrumResult>,
    t_lambda: f64,
    is_fold: bool,
) -> BranchPoint {
    BranchPoint {
        s,
        lambda: state.lambda,
        alpha: state.alpha,
        energy: state.energy,
        mass_residual: (state.mass - 1.0).abs(),
        psi_sup: state.psi.interior().iter().fold(0.0f64, |m, v| m.max(*v)),
        sigma1: spec.map(|s| s.sigmas[0]),
        sigma2: spec.and_then(|s| s.sigmas.get(1).copied()),
        t_lambda,
        is_fold,
        psi: state.psi.clone(),
    }
}

/// Locate the σ₁ crossing between a flank state and the point `ds_ab`
/// further along the tangent, by safeguarded regula falsi in the step
/// fraction.
#[allow(clippy::too_many_arguments)]
fn locate_fold(
    mesh: &Mesh,
    ops: &Operators,
    cfg: &PlasmaConfig,
    ccfg: &ContinuationConfig,
    from: &PlasmaState,
    tangent: &Tangent,
    ds_ab: f64,
    sigma_a: f64,
    sigma_b: f64,
    flank_ratio: f64,
    warm: &SpectrumResult,
) -> Result<(PlasmaState, SpectrumResult, f64)> {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let (mut f_lo, mut f_hi) = (sigma_a, sigma_b);
    let tol = 1e-9 * (1.0 + from.lambda * cfg.p);
    let mut best: Option<(PlasmaState, SpectrumResult, f64)> = None;
    let mut side = 0i8;
    for _ in 0..40 {
        let mut frac = (f_lo * hi - f_hi * lo) / (f_lo - f_hi);
        let inset = 0.02 * (hi - lo);
        frac = frac.clamp(lo + inset, hi - inset);
        let state = keller_solve(mesh, ops, cfg, from, tangent, frac * ds_ab)?;
        let spec = spectrum_at(mesh, ops, cfg, ccfg, &state, Some(warm))?;
        let sigma = spec.sigmas[0];
        let done = sigma.abs() < tol || (hi - lo) * ds_ab < 1e-10;
        best = Some((state, spec, frac));
        if done {
            break;
        }
        if sigma.signum() == f_lo.signum() {
            lo = frac;
            f_lo = sigma;
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = frac;
            f_hi = sigma;
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        }
    }
    let (state, spec, frac) =
        best.ok_or_else(|| Error::NearFold("fold bisection produced no iterate".into()))?;
    let _ = flank_ratio;
    Ok((state, spec, frac))
}

fn fold_record(
    mesh: &Mesh,
    cfg: &PlasmaConfig,
    s: f64,
    state: &PlasmaState,
    spec: &SpectrumResult,
    flank_ratio: f64,
) -> FoldRecord {
    let sigma1 = spec.sigmas[0];
    let sigma2 = spec.sigmas.get(1).copied().unwrap_or(f64::INFINITY);
    let mean_phi = spec.means[0];
    let psi_projection = spec.psi_projections[0];
    // B-normalized modes have ⟨[φ]²⟩ = 1/m
    let centered_sq = 1.0 / state.m_lambda;
    let phi_norm = (centered_sq + mean_phi * mean_phi).sqrt();
    let indicator = mean_phi / (state.m_lambda * phi_norm);
    let predicted_ratio = cfg.p * psi_projection / centered_sq;
    let ratio_defect = if predicted_ratio.abs() > 1e-300 {
        (flank_ratio - predicted_ratio).abs() / predicted_ratio.abs()
    } else {
        f64::INFINITY
    };
    let _ = mesh;
    FoldRecord {
        s,
        lambda: state.lambda,
        alpha: state.alpha,
        sigma1,
        sigma2,
        kernel_gap: sigma2 - sigma1,
        mean_phi,
        psi_projection,
        indicator,
        sign_consistent: mean_phi * psi_projection > 0.0,
        ratio_defect,
    }
}

/// Follow the solution branch from λ = 0 until α reaches `alpha_stop` (or a
/// guard fires). Numerical stalls are reported in the returned status with
/// the partial trace intact; only setup failures surface as errors.
pub fn trace_branch(
    mesh: &Mesh,
    ops: &Operators,
    cfg: &PlasmaConfig,
    ccfg: &ContinuationConfig,
) -> Result<BranchTrace> {
    cfg.validate(mesh)?;
    if !(ccfg.alpha_stop > 0.0 && ccfg.alpha_stop < 1.0) {
        return Err(Error::Usage(format!(
            "alpha_stop = {} must lie in (0, 1)",
            ccfg.alpha_stop
        )));
    }
    let lambda_one = sobolev_constant(mesh, ops, 2.0)?.value;
    let lambda_cap = match ccfg.lambda_cap {
        Some(cap) => cap,
        None => {
            let l2p = sobolev_constant(mesh, ops, 2.0 * cfg.p)?.value;
            10.0 * l2p / cfg.p
        }
    };

    let state0 = base_state(mesh, ops, cfg)?;
    let spec0 = spectrum_at(mesh, ops, cfg, ccfg, &state0, None)?;
    let seed_tangent = Tangent {
        psi: Field::zeros(mesh),
        alpha: 0.0,
        lambda: 1.0,
    };
    let mut tangent = unit_tangent(mesh, ops, cfg, &state0, &seed_tangent)?;

    let mut points = vec![make_point(0.0, &state0, Some(&spec0), tangent.lambda, false)];
    let mut folds: Vec<FoldRecord> = Vec::new();
    let mut state = state0;
    let mut last_spec = spec0;
    let mut min_sigma1 = last_spec.sigmas[0];
    let mut alpha_monotone = true;
    let mut s = 0.0f64;
    let mut ds = ccfg.ds_init.min(ccfg.ds_max);
    let mut streak = 0usize;
    let mut status: Option<BranchStatus> = None;

    // pseudo-arclength phase
    let mut steps = 0usize;
    while state.alpha > ccfg.alpha_switch.max(ccfg.alpha_stop) {
        if state.lambda > lambda_cap {
            status = Some(BranchStatus::ReachedLambdaCap);
            break;
        }
        if steps >= ccfg.max_steps {
            status = Some(BranchStatus::ReachedMaxSteps);
            break;
        }
        steps += 1;
        match keller_solve(mesh, ops, cfg, &state, &tangent, ds) {
            Ok(next) => {
                let want_spec = steps % ccfg.eig_every.max(1) == 0 || next.alpha < 2.0 * ccfg.alpha_switch;
                let spec = if want_spec {
                    Some(spectrum_at(mesh, ops, cfg, ccfg, &next, Some(&last_spec))?)
                } else {
                    None
                };
                let new_tangent = unit_tangent(mesh, ops, cfg, &next, &tangent)?;
                if let Some(sp) = &spec {
                    let sigma_new = sp.sigmas[0];
                    min_sigma1 = min_sigma1.min(sigma_new);
                    let sigma_old = points.last().and_then(|p| p.sigma1);
                    if let Some(sigma_old) = sigma_old {
                        if sigma_old.signum() != sigma_new.signum() && sigma_old != 0.0 {
                            let flank_ratio = if tangent.lambda.abs() > 1e-300 {
                                sigma_old / tangent.lambda
                            } else {
                                f64::INFINITY
                            };
                            let (fstate, fspec, frac) = locate_fold(
                                mesh, ops, cfg, ccfg, &state, &tangent, ds, sigma_old, sigma_new,
                                flank_ratio, &last_spec,
                            )?;
                            let fs = s + frac * ds;
                            folds.push(fold_record(mesh, cfg, fs, &fstate, &fspec, flank_ratio));
                            points.push(make_point(fs, &fstate, Some(&fspec), tangent.lambda, true));
                            min_sigma1 = min_sigma1.min(fspec.sigmas[0]);
                        }
                    }
                }
                alpha_monotone &= next.alpha < state.alpha + 1e-12;
                s += ds;
                points.push(make_point(s, &next, spec.as_ref(), new_tangent.lambda, false));
                if let Some(sp) = spec {
                    last_spec = sp;
                }
                state = next;
                tangent = new_tangent;
                streak += 1;
                if streak >= 2 {
                    ds = (ds * 1.3).min(ccfg.ds_max);
                }
            }
            Err(Error::Usage(e)) => return Err(Error::Usage(e)),
            Err(_) => {
                streak = 0;
                ds *= 0.5;
                if ds < ccfg.ds_min {
                    status = Some(BranchStatus::Stalled(format!(
                        "arclength step collapsed below {} at λ = {:.6}, α = {:.6}",
                        ccfg.ds_min, state.lambda, state.alpha
                    )));
                    break;
                }
            }
        }
    }

    // α-parametrized endpoint phase
    let mut endpoint = None;
    if status.is_none() {
        let mut targets: Vec<f64> = [1e-2, 1e-3, 1e-4]
            .iter()
            .copied()
            .filter(|&t| t >= ccfg.alpha_stop && t < state.alpha)
            .collect();
        if targets.last() != Some(&ccfg.alpha_stop) {
            targets.push(ccfg.alpha_stop);
        }
        targets.sort_by(|a, b| b.partial_cmp(a).unwrap());
        targets.dedup();
        let mut reached: Vec<(f64, f64, f64)> = Vec::new();
        let mut queue: Vec<f64> = targets;
        let mut prev_for_slope: Option<(f64, f64, Field)> = None;
        'targets: while let Some(target) = queue.first().copied() {
            // linear predictor in α from the last solved pair
            let (lam_pred, psi_pred) = match &prev_for_slope {
                Some((a_prev, l_prev, psi_prev)) => {
                    let da = target - state.alpha;
                    let denom = state.alpha - a_prev;
                    let slope_l = (state.lambda - l_prev) / denom;
                    let mut psi = state.psi.clone();
                    let mut dpsi = state.psi.clone();
                    dpsi.axpy(-1.0, psi_prev);
                    psi.axpy(da / denom, &dpsi);
                    (state.lambda + slope_l * da, psi)
                }
                None => (state.lambda, state.psi.clone()),
            };
            let attempt = PlasmaState::assemble(mesh, cfg, lam_pred, target, psi_pred)
                .and_then(|start| {
                    newton_solve_constrained(mesh, ops, cfg, start, &StepConstraint::FixedAlpha)
                });
            match attempt {
                Ok(next) => {
                    queue.remove(0);
                    let spec = spectrum_at(mesh, ops, cfg, ccfg, &next, Some(&last_spec))?;
                    min_sigma1 = min_sigma1.min(spec.sigmas[0]);
                    let mut dpsi = next.psi.clone();
                    dpsi.axpy(-1.0, &state.psi);
                    s += metric_norm(
                        ops,
                        &dpsi,
                        next.alpha - state.alpha,
                        next.lambda - state.lambda,
                    );
                    alpha_monotone &= next.alpha < state.alpha + 1e-12;
                    points.push(make_point(s, &next, Some(&spec), 0.0, false));
                    reached.push((next.alpha, next.lambda, next.energy));
                    prev_for_slope = Some((state.alpha, state.lambda, state.psi.clone()));
                    last_spec = spec;
                    state = next;
                }
                Err(Error::Usage(e)) => return Err(Error::Usage(e)),
                Err(_) => {
                    // halve the decade geometrically and try again
                    let mid = (state.alpha * target).sqrt();
                    if mid / target < 1.02 {
                        status = Some(BranchStatus::Stalled(format!(
                            "α-targeting failed between {} and {target}",
                            state.alpha
                        )));
                        break 'targets;
                    }
                    queue.insert(0, mid);
                }
            }
        }
        if status.is_none() {
            let k = reached.len();
            if k >= 2 {
                let (a1, l1, e1) = reached[k - 2];
                let (a2, l2, e2) = reached[k - 1];
                let lambda_infinity = (a1 * l2 - a2 * l1) / (a1 - a2);
                let endpoint_energy = (a1 * e2 - a2 * e1) / (a1 - a2);
                endpoint = Some(EndpointSummary {
                    lambda_infinity,
                    endpoint_energy,
                    extrapolation_gap: (lambda_infinity - l2).abs(),
                    targets: reached,
                });
            }
            status = Some(BranchStatus::ReachedAlphaStop);
        }
    }

    Ok(BranchTrace {
        points,
        folds,
        status: status.unwrap_or(BranchStatus::ReachedMaxSteps),
        endpoint,
        lambda_one,
        min_sigma1,
        alpha_monotone,
    })
}
