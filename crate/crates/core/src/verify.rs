//! Acceptance suite: fifteen checks with pinned tolerances.
//!
//! The criteria share a set of traced branches, Sobolev tables, and a
//! radial shooting oracle so the whole suite finishes in a few minutes.
//! Each criterion reports its measured numbers next to the tolerance it is
//! held to; a failing computation becomes a failing criterion with the
//! error text, never a panic. Detail strings contain no timings, so the
//! written report is byte-stable across runs; wall times travel separately.

use crate::continuation::{trace_branch, BranchTrace, ContinuationConfig};
use crate::dual::{continuum_point, free_boundary_solution, rabinowitz_export};
use crate::error::{Error, Result};
use crate::geometry::{build_mesh, DomainKind, DomainSpec, Mesh};
use crate::newton::{base_state, newton_solve, residual, PlasmaConfig, PlasmaState};
use crate::operators::{Field, Operators, QuadField};
use crate::probe::{run_probe, ProbeConfig, ProbeVerdict};
use crate::report::{
    branch_csv, continuum_csv, dual_csv, mesh_stats_json, plot_script, probe_json, spectrum_json,
    summary_json, variational_csv, RunConfig,
};
use crate::spectrum::{dense_eigen_oracle, eigenpairs, sobolev_constant, EigenConfig};
use crate::variational::{
    identity_suite, lambda_star_star, minimize_free_energy, VariationalConfig,
};
use serde::Serialize;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

const J01: f64 = 2.404825557695773;

pub struct CriterionResult {
    pub index: usize,
    pub name: &'static str,
    pub passed: bool,
    /// Measured values and pinned tolerances; deterministic across runs.
    pub detail: String,
    pub wall_ms: f64,
}

struct Instance {
    mesh: Mesh,
    ops: Operators,
    pcfg: PlasmaConfig,
}

fn instance(spec: &DomainSpec, res: u32, p: f64) -> Result<Instance> {
    let mesh = build_mesh(spec, res)?;
    let ops = Operators::assemble(&mesh)?;
    let pcfg = PlasmaConfig::new(p);
    pcfg.validate(&mesh)?;
    Ok(Instance { mesh, ops, pcfg })
}

struct Bundle {
    inst: Instance,
    trace: BranchTrace,
}

fn bundle(
    spec: &DomainSpec,
    res: u32,
    p: f64,
    alpha_stop: f64,
    cap: Option<f64>,
) -> Result<Bundle> {
    let inst = instance(spec, res, p)?;
    let ccfg = ContinuationConfig {
        alpha_stop,
        lambda_cap: cap,
        ..ContinuationConfig::default()
    };
    let trace = trace_branch(&inst.mesh, &inst.ops, &inst.pcfg, &ccfg)?;
    Ok(Bundle { inst, trace })
}

fn l_shape() -> DomainSpec {
    DomainSpec::new(DomainKind::Polygon {
        vertices: vec![
            [0.0, 0.0],
            [2.0, 0.0],
            [2.0, 1.0],
            [1.0, 1.0],
            [1.0, 2.0],
            [0.0, 2.0],
        ],
    })
}

fn perturbed_disk() -> DomainSpec {
    DomainSpec::new(DomainKind::PerturbedDisk {
        amplitude: 0.05,
        modes: vec![2, 3],
        seed: 1,
    })
}

fn rel(measured: f64, target: f64) -> f64 {
    (measured - target).abs() / target.abs().max(1e-300)
}

/// Ground-state constant Λ(unit-area disk, t) from the radial profile
/// w'' + w'/r + w^{t-1} = 0, w(0) = 1, w'(0) = 0: with r₀ the first zero,
/// dilation invariance in two dimensions gives
/// Λ = (r₀ √π)^{4/t} · ∫w'² r dr / (∫w^t r dr)^{2/t} · (2π)^{1 - 2/t}.
fn disk_sobolev_shooting(t: f64) -> f64 {
    let rhs = |r: f64, w: f64, dw: f64| -> [f64; 2] { [dw, -w.max(0.0).powf(t - 1.0) - dw / r] };
    let rk4 = |r: f64, w: f64, dw: f64, h: f64| -> (f64, f64) {
        let k1 = rhs(r, w, dw);
        let k2 = rhs(r + 0.5 * h, w + 0.5 * h * k1[0], dw + 0.5 * h * k1[1]);
        let k3 = rhs(r + 0.5 * h, w + 0.5 * h * k2[0], dw + 0.5 * h * k2[1]);
        let k4 = rhs(r + h, w + h * k3[0], dw + h * k3[1]);
        (
            w + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            dw + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        )
    };
    // Taylor start w = 1 - r²/4 + c₄ r⁴ clears the coordinate singularity
    let c4 = (t - 1.0) / 64.0;
    let r_start = 1e-2;
    let mut r: f64 = r_start;
    let mut w = 1.0 - r * r / 4.0 + c4 * r.powi(4);
    let mut dw = -0.5 * r + 4.0 * c4 * r.powi(3);
    // closed-form contributions of [0, r_start] to both integrals
    let mut d_int = r.powi(4) / 16.0 - 2.0 * c4 / 3.0 * r.powi(6);
    let mut t_int = r * r / 2.0 - t * r.powi(4) / 16.0;
    let h = 1e-4;
    let d_f = |w: f64, dw: f64, r: f64| {
        let _ = w;
        dw * dw * r
    };
    let t_f = |w: f64, r: f64| w.max(0.0).powf(t) * r;
    loop {
        let (wn, dwn) = rk4(r, w, dw, h);
        if wn <= 0.0 {
            // bisect the final step width with single RK4 sub-steps
            let (mut lo, mut hi) = (0.0, h);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let (wm, _) = rk4(r, w, dw, mid);
                if wm > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let dr = 0.5 * (lo + hi);
            let (wz, dwz) = rk4(r, w, dw, dr);
            let r0 = r + dr;
            d_int += 0.5 * dr * (d_f(w, dw, r) + d_f(wz, dwz, r0));
            t_int += 0.5 * dr * (t_f(w, r) + t_f(wz.max(0.0), r0));
            let dd = 2.0 * PI * d_int;
            let tt = 2.0 * PI * t_int;
            return (r0 * PI.sqrt()).powf(4.0 / t) * dd / tt.powf(2.0 / t);
        }
        d_int += 0.5 * h * (d_f(w, dw, r) + d_f(wn, dwn, r + h));
        t_int += 0.5 * h * (t_f(w, r) + t_f(wn, r + h));
        r += h;
        w = wn;
        dw = dwn;
        if r > 20.0 {
            panic!("shooting profile for t = {t} found no zero below r = 20");
        }
    }
}

fn finish(
    index: usize,
    name: &'static str,
    started: Instant,
    outcome: Result<(bool, String)>,
) -> CriterionResult {
    let wall_ms = started.elapsed().as_secs_f64() * 1e3;
    match outcome {
        Ok((passed, detail)) => CriterionResult {
            index,
            name,
            passed,
            detail,
            wall_ms,
        },
        Err(e) => CriterionResult {
            index,
            name,
            passed: false,
            detail: format!("computation failed: {e}"),
            wall_ms,
        },
    }
}

fn note(progress: bool, msg: &str) {
    if progress {
        eprintln!("[verify] {msg}");
    }
}

fn criterion_1() -> Result<(bool, String)> {
    let catalog: Vec<(&str, DomainSpec, u32)> = vec![
        ("disk", DomainSpec::disk(), 24),
        ("square", DomainSpec::square(), 24),
        ("ball3d", DomainSpec::ball3d(), 32),
        ("polygon", l_shape(), 24),
        ("perturbed_disk", perturbed_disk(), 24),
    ];
    let mut passed = true;
    let mut detail = String::new();
    let mut worst = 0.0f64;
    for (label, spec, res) in &catalog {
        let inst = instance(spec, *res, 2.0)?;
        let state = newton_solve(&inst.mesh, &inst.ops, &inst.pcfg, 0.0, 0.7, Field::zeros(&inst.mesh))?;
        let (r, mass) = residual(&inst.mesh, &inst.ops, &state);
        let res_l2 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let torsion = inst.ops.green_solve(&inst.mesh, &QuadField::constant(&inst.mesh, 1.0))?;
        let mut diff = state.psi.clone();
        diff.axpy(-1.0, &torsion);
        let err = (state.alpha - 1.0)
            .abs()
            .max(res_l2)
            .max(mass.abs())
            .max(diff.norm_max());
        worst = worst.max(err);
        if err > 1e-10 {
            passed = false;
            let _ = write!(detail, "{label}: defect {err:.3e} > 1e-10; ");
        }
    }
    let _ = write!(detail, "catalog worst defect {worst:.3e} (tol 1e-10)");
    // center value of the torsion function on the unit-area disk
    let exact = 1.0 / (4.0 * PI);
    let mut errs = Vec::new();
    for res in [32u32, 64] {
        let inst = instance(&DomainSpec::disk(), res, 2.0)?;
        assert!(
            inst.mesh.nodes[0][0].abs() < 1e-12 && inst.mesh.nodes[0][1].abs() < 1e-12,
            "disk meshes put the center at node 0"
        );
        let state = newton_solve(&inst.mesh, &inst.ops, &inst.pcfg, 0.0, 1.0, Field::zeros(&inst.mesh))?;
        errs.push((state.psi.at_node(&inst.mesh, 0) - exact).abs());
    }
    let rel64 = errs[1] / exact;
    let ratio = errs[0] / errs[1].max(1e-300);
    if rel64 > 0.02 || ratio < 2.5 {
        passed = false;
    }
    let _ = write!(
        detail,
        "; psi(0) rel err {rel64:.3e} at res 64 (tol 2e-2), refinement ratio {ratio:.2} (need ≥ 2.5)"
    );
    Ok((passed, detail))
}

fn criterion_2() -> Result<(bool, String)> {
    let inst = instance(&DomainSpec::disk(), 96, 2.0)?;
    let state = base_state(&inst.mesh, &inst.ops, &inst.pcfg)?;
    let exact = 1.0 / (16.0 * PI);
    let r = rel(state.energy, exact);
    Ok((
        r <= 5e-3,
        format!(
            "E_0 = {:.8e} vs 1/(16π) = {exact:.8e}, rel {r:.3e} (tol 5e-3) at res 96",
            state.energy
        ),
    ))
}

fn criterion_3(disk64: &Bundle) -> Result<(bool, String)> {
    let endpoint = disk64
        .trace
        .endpoint
        .as_ref()
        .ok_or_else(|| Error::Internal("disk branch carries no endpoint data".into()))?;
    let exact = 3.0 / (16.0 * PI);
    // literal reading: extrapolate to α = 0 from the α = 1e-2 and 1e-3 targets
    let at = |a: f64| -> Result<(f64, f64, f64)> {
        endpoint
            .targets
            .iter()
            .find(|(al, _, _)| rel(*al, a) < 1e-9)
            .copied()
            .ok_or_else(|| Error::Internal(format!("missing α target {a}")))
    };
    let (a2, _, e2) = at(1e-2)?;
    let (a3, _, e3) = at(1e-3)?;
    let e_from_13 = e3 + (e3 - e2) * a3 / (a2 - a3);
    let e_endpoint = endpoint.endpoint_energy;
    let r13 = rel(e_from_13, exact);
    let r_end = rel(e_endpoint, exact);
    let ok = r13 <= 0.02 && r_end <= 0.02;
    Ok((
        ok,
        format!(
            "E extrapolated from α=1e-2/1e-3: {e_from_13:.8e} (rel {r13:.3e}), \
             from α=1e-3/1e-4: {e_endpoint:.8e} (rel {r_end:.3e}) vs 3/(16π) = {exact:.8e} (tol 2e-2)"
        ),
    ))
}

fn criterion_4(bundles: &[(&str, &Bundle)]) -> Result<(bool, String)> {
    let sigma_tol = 1e-6;
    let mut pairs = 0usize;
    let mut violations = 0usize;
    let mut detail = String::new();
    for (label, b) in bundles {
        let pts = &b.trace.points;
        for k in 0..pts.len().saturating_sub(1) {
            let (a, b2) = (&pts[k], &pts[k + 1]);
            let (s1a, s1b) = match (a.sigma1, b2.sigma1) {
                (Some(x), Some(y)) => (x, y),
                _ => continue,
            };
            if s1a <= sigma_tol || s1b <= sigma_tol {
                continue;
            }
            let dl = b2.lambda - a.lambda;
            if dl == 0.0 {
                continue;
            }
            pairs += 1;
            let da = b2.alpha - a.alpha;
            let de = b2.energy - a.energy;
            if da * dl >= 0.0 || de * dl <= 0.0 {
                violations += 1;
                let _ = write!(
                    detail,
                    "{label} step {k}: dλ {dl:.2e}, dα {da:.2e}, dE {de:.2e}; "
                );
            }
        }
    }
    let _ = write!(
        detail,
        "{pairs} accepted steps with σ1 > {sigma_tol:.0e} on both ends, {violations} violations (need 0)"
    );
    Ok((violations == 0 && pairs > 0, detail))
}

fn criterion_5(samples: &[(&str, &Bundle, f64)]) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    let mut count = 0usize;
    let ecfg = EigenConfig::default();
    for (_, b, frac) in samples {
        let pts = &b.trace.points;
        let idx = ((pts.len() - 1) as f64 * frac).round() as usize;
        let state = pts[idx].state(&b.inst.mesh, &b.inst.pcfg)?;
        let spec = eigenpairs(&b.inst.mesh, &b.inst.ops, &b.inst.pcfg, &ecfg, &state, None)?;
        for r in &spec.identity_rel_residuals {
            worst = worst.max(*r);
        }
        count += 1;
    }
    Ok((
        worst <= 1e-6 && count == 10,
        format!(
            "{count} states sampled (disk and square, p ∈ {{1.5, 2, 3}}), \
             worst relative identity residual {worst:.3e} (tol 1e-6)"
        ),
    ))
}

fn criterion_6() -> Result<(bool, String)> {
    let inst = instance(&DomainSpec::disk(), 16, 2.0)?;
    let n = inst.mesh.interior_count();
    if n > 400 {
        return Ok((false, format!("oracle mesh has {n} unknowns > 400")));
    }
    let base = base_state(&inst.mesh, &inst.ops, &inst.pcfg)?;
    let state = newton_solve(&inst.mesh, &inst.ops, &inst.pcfg, 1.0, base.alpha, base.psi)?;
    let spec = eigenpairs(
        &inst.mesh,
        &inst.ops,
        &inst.pcfg,
        &EigenConfig::default(),
        &state,
        None,
    )?;
    let dense = dense_eigen_oracle(&inst.mesh, &inst.ops, &state, 4)?;
    let lp = state.lambda * inst.pcfg.p;
    let mut worst = 0.0f64;
    for k in 0..4 {
        let sd = dense[k] - lp;
        worst = worst.max((spec.sigmas[k] - sd).abs() / sd.abs());
    }
    Ok((
        worst <= 1e-8,
        format!("σ1..σ4 vs dense oracle on {n} unknowns: worst rel diff {worst:.3e} (tol 1e-8)"),
    ))
}

fn criterion_7() -> Result<(bool, String)> {
    let vcfg = VariationalConfig::default();
    let ecfg = EigenConfig {
        count: 2,
        ..EigenConfig::default()
    };
    let mut worst_alpha = 0.0f64;
    let mut min_sigma = f64::INFINITY;
    let mut detail = String::new();
    for (label, spec) in [("disk", DomainSpec::disk()), ("square", DomainSpec::square())] {
        let inst = instance(&spec, 24, 2.0)?;
        let l2p = sobolev_constant(&inst.mesh, &inst.ops, 2.0 * inst.pcfg.p)?.value;
        let lambda_max = 0.9 * l2p / inst.pcfg.p;
        let mut newton_state = base_state(&inst.mesh, &inst.ops, &inst.pcfg)?;
        let mut warm: Option<QuadField> = None;
        for k in 1..=10 {
            let lambda = 0.999 * lambda_max * k as f64 / 10.0;
            newton_state = newton_solve(
                &inst.mesh,
                &inst.ops,
                &inst.pcfg,
                lambda,
                newton_state.alpha,
                newton_state.psi.clone(),
            )?;
            let it = minimize_free_energy(&inst.mesh, &inst.ops, &inst.pcfg, &vcfg, lambda, warm.as_ref())?;
            warm = Some(it.rho.clone());
            worst_alpha = worst_alpha.max((it.alpha - newton_state.alpha).abs());
            let var_state =
                PlasmaState::assemble(&inst.mesh, &inst.pcfg, lambda, it.alpha, it.psi.clone())?;
            let spec =
                eigenpairs(&inst.mesh, &inst.ops, &inst.pcfg, &ecfg, &var_state, None)?;
            min_sigma = min_sigma.min(spec.sigmas[0]);
        }
        let _ = write!(detail, "{label}: λ grid to {:.4}; ", 0.999 * lambda_max);
    }
    let ok = worst_alpha <= 1e-6 && min_sigma >= -1e-6;
    let _ = write!(
        detail,
        "worst |α_var - α_newton| = {worst_alpha:.3e} (tol 1e-6), \
         min σ1 of variational solutions = {min_sigma:.6} (need ≥ -1e-6)"
    );
    Ok((ok, detail))
}

fn criterion_8(disk32: &Bundle) -> Result<(bool, String)> {
    let endpoint = disk32
        .trace
        .endpoint
        .as_ref()
        .ok_or_else(|| Error::Internal("disk branch carries no endpoint data".into()))?;
    let lambda_inf = endpoint.lambda_infinity;
    let vcfg = VariationalConfig::default();
    let star = lambda_star_star(
        &disk32.inst.mesh,
        &disk32.inst.ops,
        &disk32.inst.pcfg,
        &vcfg,
        Some((0.7 * lambda_inf, 1.3 * lambda_inf)),
        1e-5,
    )?;
    let r_lambda = rel(star.value, lambda_inf);
    let q = disk32.inst.pcfg.q();
    let i_star = star.value.powf(q);
    let pt = disk32
        .trace
        .point_at_alpha(1e-4)
        .ok_or_else(|| Error::Internal("missing α = 1e-4 target".into()))?;
    let state = pt.state(&disk32.inst.mesh, &disk32.inst.pcfg)?;
    let fb = free_boundary_solution(&disk32.inst.mesh, &disk32.inst.pcfg, &state)?;
    let r_i = rel(fb.i_param, i_star);
    let ok = r_lambda <= 0.01 && r_i <= 0.01 && fb.gamma > 0.0;
    Ok((
        ok,
        format!(
            "λ** = {:.6} vs λ∞ = {lambda_inf:.6} (rel {r_lambda:.3e}, tol 1e-2); \
             I at α=1e-4 = {:.4} vs (λ**)^q = {i_star:.4} (rel {r_i:.3e}, tol 1e-2); γ = {:.3e} > 0",
            star.value, fb.i_param, fb.gamma
        ),
    ))
}

struct LambdaTable {
    disk3_48: f64,
    disk3_96: f64,
    disk4_48: f64,
    disk4_96: f64,
    disk2_96: f64,
    square2_96: f64,
    square3_48: f64,
    square3_96: f64,
}

fn lambda_table(progress: bool) -> Result<LambdaTable> {
    let sob = |spec: &DomainSpec, res: u32, t: f64| -> Result<f64> {
        let inst = instance(spec, res, 2.0)?;
        Ok(sobolev_constant(&inst.mesh, &inst.ops, t)?.value)
    };
    let disk = DomainSpec::disk();
    let square = DomainSpec::square();
    note(progress, "Sobolev table: disk t ∈ {2,3,4}, square t ∈ {2,3} at res 48 and 96");
    Ok(LambdaTable {
        disk3_48: sob(&disk, 48, 3.0)?,
        disk3_96: sob(&disk, 96, 3.0)?,
        disk4_48: sob(&disk, 48, 4.0)?,
        disk4_96: sob(&disk, 96, 4.0)?,
        disk2_96: sob(&disk, 96, 2.0)?,
        square2_96: sob(&square, 96, 2.0)?,
        square3_48: sob(&square, 48, 3.0)?,
        square3_96: sob(&square, 96, 3.0)?,
    })
}

fn criterion_9(
    table: &LambdaTable,
    disk32: &Bundle,
    disk64: &Bundle,
    square24: &Bundle,
    square48: &Bundle,
) -> Result<(bool, String)> {
    let p = 2.0;
    let lam_inf = |b: &Bundle| -> Result<f64> {
        b.trace
            .endpoint
            .as_ref()
            .map(|e| e.lambda_infinity)
            .ok_or_else(|| Error::Internal("branch carries no endpoint data".into()))
    };
    // Richardson in h (the resolution doubles between the paired runs)
    let rich = |coarse: f64, fine: f64| (fine + (fine - coarse) / 3.0, (fine - coarse).abs() / 3.0);
    let (ld, _) = rich(lam_inf(disk32)?, lam_inf(disk64)?);
    let (l3d, _) = rich(table.disk3_48, table.disk3_96);
    let lhs_disk = ld.powf(2.0 * p);
    let rhs_j = (8.0 * PI / (p + 1.0)).powf(p - 1.0) * l3d.powf(p + 1.0);
    let e_star = 3.0 / (16.0 * PI);
    let rhs_sandwich =
        ((p + 1.0) / (8.0 * PI)).powf(p + 1.0) / (2.0 * e_star).powf(2.0 * p) * l3d.powf(p + 1.0);
    let r_j = rel(lhs_disk, rhs_j);
    let r_s = rel(lhs_disk, rhs_sandwich);
    // square: strict inequality beyond the combined Richardson error bars
    let (lhs_sq, bar_lhs) = rich(
        lam_inf(square24)?.powf(2.0 * p),
        lam_inf(square48)?.powf(2.0 * p),
    );
    let coef = (8.0 * PI / (p + 1.0)).powf(p - 1.0);
    let (rhs_sq, bar_rhs) = rich(
        coef * table.square3_48.powf(p + 1.0),
        coef * table.square3_96.powf(p + 1.0),
    );
    let gap = lhs_sq - rhs_sq;
    let bars = bar_lhs + bar_rhs;
    let ok = r_j <= 0.02 && r_s <= 0.02 && gap > bars;
    Ok((
        ok,
        format!(
            "disk: λ∞^4 = {lhs_disk:.1} vs (8π/3)Λ³ = {rhs_j:.1} (rel {r_j:.3e}, tol 2e-2), \
             vs sandwich r.h.s. = {rhs_sandwich:.1} (rel {r_s:.3e}, tol 2e-2); \
             square: l.h.s. {lhs_sq:.1} > r.h.s. {rhs_sq:.1} by {gap:.1} with error bars {bars:.1}"
        ),
    ))
}

fn criterion_10(table: &LambdaTable) -> Result<(bool, String)> {
    let exact2 = PI * J01 * J01;
    let shoot2 = disk_sobolev_shooting(2.0);
    let oracle_self = rel(shoot2, exact2);
    let shoot3 = disk_sobolev_shooting(3.0);
    let shoot4 = disk_sobolev_shooting(4.0);
    let r_disk2 = rel(table.disk2_96, exact2);
    let r_sq2 = rel(table.square2_96, 2.0 * PI * PI);
    let r3_48 = rel(table.disk3_48, shoot3);
    let r3_96 = rel(table.disk3_96, shoot3);
    let r4_48 = rel(table.disk4_48, shoot4);
    let r4_96 = rel(table.disk4_96, shoot4);
    let worst_t = r3_48.max(r3_96).max(r4_48).max(r4_96);
    let ok = oracle_self <= 1e-6 && r_disk2 <= 5e-3 && r_sq2 <= 5e-3 && worst_t <= 5e-3;
    Ok((
        ok,
        format!(
            "Λ(D,2) = {:.6} vs πj01² (rel {r_disk2:.3e}); Λ(□,2) = {:.6} vs 2π² (rel {r_sq2:.3e}); \
             shooting Λ(D,3) = {shoot3:.6}, Λ(D,4) = {shoot4:.6}, FEM at res 48/96 within {worst_t:.3e} \
             (tol 5e-3 each); oracle self-check vs πj01²: {oracle_self:.3e} (tol 1e-6)",
            table.disk2_96, table.square2_96
        ),
    ))
}

fn criterion_11(ball: &Bundle) -> Result<(bool, String)> {
    let q = ball.inst.pcfg.q();
    let pts: Vec<_> = ball.trace.points.iter().filter(|pt| pt.lambda > 0.0).collect();
    if pts.len() < 5 {
        return Ok((false, format!("only {} positive-λ points traced", pts.len())));
    }
    let mut min_margin = f64::INFINITY;
    let mut detail = String::from("E ≤ (q/λ)(1-α) at λ = ");
    for frac in [0.2, 0.4, 0.6, 0.8, 0.95] {
        let idx = ((pts.len() - 1) as f64 * frac).round() as usize;
        let pt = pts[idx];
        let bound = q / pt.lambda * (1.0 - pt.alpha);
        let margin = bound - pt.energy;
        min_margin = min_margin.min(margin);
        let _ = write!(detail, "{:.3} (margin {margin:.3e}), ", pt.lambda);
    }
    let _ = write!(detail, "min margin {min_margin:.3e} (need > 0)");
    Ok((min_margin > 0.0, detail))
}

fn criterion_12() -> Result<(bool, String)> {
    let inst = instance(&DomainSpec::disk(), 16, 2.0)?;
    let l2p = sobolev_constant(&inst.mesh, &inst.ops, 2.0 * inst.pcfg.p)?.value;
    let lambda_max = 0.9 * l2p / inst.pcfg.p;
    let vcfg = VariationalConfig::default();
    let mut warm: Option<QuadField> = None;
    let mut j_prev = f64::INFINITY;
    let mut monotone = true;
    let mut states = Vec::new();
    for k in 0..20 {
        let lambda = lambda_max * k as f64 / 19.0;
        let it = minimize_free_energy(&inst.mesh, &inst.ops, &inst.pcfg, &vcfg, lambda, warm.as_ref())?;
        if it.j_value > j_prev + 1e-12 * (1.0 + j_prev.abs()) {
            monotone = false;
        }
        j_prev = it.j_value;
        states.push(PlasmaState::assemble(
            &inst.mesh,
            &inst.pcfg,
            lambda,
            it.alpha,
            it.psi.clone(),
        )?);
        warm = Some(it.rho.clone());
    }
    let report = identity_suite(&inst.mesh, &inst.pcfg, &states)?;
    let ok = monotone && report.max_defect <= 1e-8;
    Ok((
        ok,
        format!(
            "J non-increasing over 20 λ values to {lambda_max:.3}: {monotone}; \
             identity residual after fitting constant {:.3e}: {:.3e} (tol 1e-8)",
            report.fitted_constant, report.max_defect
        ),
    ))
}

fn criterion_13(disk64: &Bundle) -> Result<(bool, String)> {
    let mut residuals = Vec::new();
    for target in [1e-2, 1e-3, 1e-4] {
        let pt = disk64
            .trace
            .point_at_alpha(target)
            .ok_or_else(|| Error::Internal(format!("missing α target {target}")))?;
        let state = pt.state(&disk64.inst.mesh, &disk64.inst.pcfg)?;
        let cp = continuum_point(&disk64.inst.mesh, &disk64.inst.ops, &disk64.inst.pcfg, &state)?;
        residuals.push(cp.residual_limit_eq);
    }
    let ok = residuals[1] <= 0.05 && residuals[0] > residuals[1] && residuals[1] > residuals[2];
    Ok((
        ok,
        format!(
            "limit-equation residuals at α = 1e-2/1e-3/1e-4: {:.4e} / {:.4e} / {:.4e} \
             (α = 1e-3 tol 5e-2, strictly decreasing)",
            residuals[0], residuals[1], residuals[2]
        ),
    ))
}

fn criterion_14() -> Result<(bool, String)> {
    let cfg = ProbeConfig::default();
    let pcfg = PlasmaConfig::new(2.0);
    let reports = run_probe(&DomainSpec::disk(), &pcfg, &cfg)?;
    let mut degenerate = 0usize;
    let mut folds = 0usize;
    let mut detail = String::new();
    for r in &reports {
        match r.verdict {
            ProbeVerdict::GenericSimpleTransversal => {
                folds += 1;
                let _ = write!(
                    detail,
                    "seed {}: generic fold at λ = {:.4} (gap {:.3e}, indicator {:.3e}); ",
                    r.seed,
                    r.fold_lambda.unwrap_or(f64::NAN),
                    r.kernel_gap.unwrap_or(f64::NAN),
                    r.indicator.unwrap_or(f64::NAN)
                );
            }
            ProbeVerdict::DegenerateKernel | ProbeVerdict::DegenerateIndicator => {
                degenerate += 1;
                let _ = write!(detail, "seed {}: FLAGGED {}; ", r.seed, r.detail);
            }
            ProbeVerdict::NoFoldFound => {
                let _ = write!(
                    detail,
                    "seed {}: no fold, min σ1 = {:.4} > 0; ",
                    r.seed, r.min_sigma1
                );
            }
        }
    }
    let _ = write!(
        detail,
        "{} seeds, {folds} generic folds, {degenerate} degenerate verdicts (need 0)",
        reports.len()
    );
    Ok((degenerate == 0 && reports.len() == 5, detail))
}

fn reduced_artifacts(dir: &Path) -> Result<Vec<(String, String)>> {
    let cfg = RunConfig::with_p(2.0);
    let hash = cfg.hash();
    let inst = instance(&DomainSpec::disk(), 12, 2.0)?;
    let ccfg = ContinuationConfig {
        lambda_cap: Some(2.0),
        ..ContinuationConfig::default()
    };
    let trace = trace_branch(&inst.mesh, &inst.ops, &inst.pcfg, &ccfg)?;
    let mut files: Vec<(String, String)> = Vec::new();
    files.push(("branch.csv".into(), branch_csv(&hash, &trace)));
    files.push(("summary.json".into(), summary_json(&hash, &trace)));
    files.push(("mesh_stats.json".into(), mesh_stats_json(&hash, &inst.mesh)));
    let last = trace
        .points
        .last()
        .ok_or_else(|| Error::Internal("empty trace".into()))?;
    let state = last.state(&inst.mesh, &inst.pcfg)?;
    let spec = eigenpairs(
        &inst.mesh,
        &inst.ops,
        &inst.pcfg,
        &EigenConfig::default(),
        &state,
        None,
    )?;
    files.push((
        "spectrum.json".into(),
        spectrum_json(&hash, state.lambda, state.alpha, &spec),
    ));
    let vcfg = VariationalConfig::default();
    let mut rows = Vec::new();
    let mut warm: Option<QuadField> = None;
    for lambda in [0.4, 0.8, 1.2] {
        let it = minimize_free_energy(&inst.mesh, &inst.ops, &inst.pcfg, &vcfg, lambda, warm.as_ref())?;
        warm = Some(it.rho.clone());
        rows.push((lambda, it));
    }
    files.push(("variational.csv".into(), variational_csv(&hash, &rows)));
    let mut dual_rows = Vec::new();
    for pt in trace.points.iter().filter(|pt| pt.lambda > 0.0) {
        let st = pt.state(&inst.mesh, &inst.pcfg)?;
        dual_rows.push((pt.lambda, free_boundary_solution(&inst.mesh, &inst.pcfg, &st)?));
    }
    files.push(("dual.csv".into(), dual_csv(&hash, &dual_rows)));
    let continuum = rabinowitz_export(&inst.mesh, &inst.ops, &inst.pcfg, &trace)?;
    files.push(("continuum.csv".into(), continuum_csv(&hash, &continuum)));
    let probe_cfg = ProbeConfig {
        seeds: vec![1],
        resolution: 12,
        alpha_stop: 1e-2,
        ..ProbeConfig::default()
    };
    let reports = run_probe(&DomainSpec::disk(), &inst.pcfg, &probe_cfg)?;
    files.push(("probe.json".into(), probe_json(&hash, &probe_cfg, &reports)));
    let names: Vec<String> = files.iter().map(|(n, _)| n.clone()).collect();
    files.push(("plot.py".into(), plot_script(&hash, &names)));
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Internal(format!("creating {}: {e}", dir.display())))?;
    for (name, content) in &files {
        std::fs::write(dir.join(name), content)
            .map_err(|e| Error::Internal(format!("writing {name}: {e}")))?;
    }
    Ok(files)
}

fn criterion_15(scratch: &Path) -> Result<(bool, String)> {
    let a = reduced_artifacts(&scratch.join("determinism_a"))?;
    let b = reduced_artifacts(&scratch.join("determinism_b"))?;
    if a.len() != b.len() {
        return Ok((false, "the two runs produced different file sets".into()));
    }
    let mut mismatched = Vec::new();
    for ((name_a, content_a), (name_b, content_b)) in a.iter().zip(&b) {
        if name_a != name_b || content_a != content_b {
            mismatched.push(name_a.clone());
        }
    }
    let ok = mismatched.is_empty();
    Ok((
        ok,
        if ok {
            format!(
                "{} artifact files (CSV/JSON/script) byte-identical across two runs",
                a.len()
            )
        } else {
            format!("byte mismatch in: {}", mismatched.join(", "))
        },
    ))
}

/// Run the full acceptance suite. `scratch` receives the determinism
/// check's two output directories; `progress` prints stage notes to stderr.
pub fn run_all(scratch: &Path, progress: bool) -> Result<Vec<CriterionResult>> {
    let mut results = Vec::with_capacity(15);

    let t = Instant::now();
    note(progress, "criterion 1: λ = 0 exactness across the catalog");
    results.push(finish(1, "lambda-zero exactness", t, criterion_1()));

    let t = Instant::now();
    note(progress, "criterion 2: disk base energy at res 96");
    results.push(finish(2, "disk base energy", t, criterion_2()));

    note(progress, "tracing disk p=2 at res 64 to α = 1e-4");
    let disk64 = bundle(&DomainSpec::disk(), 64, 2.0, 1e-4, None)?;
    note(progress, "tracing disk p=2 at res 32 to α = 1e-4");
    let disk32 = bundle(&DomainSpec::disk(), 32, 2.0, 1e-4, None)?;
    note(progress, "tracing square p=2 at res 48 and 24 to α = 1e-4");
    let square48 = bundle(&DomainSpec::square(), 48, 2.0, 1e-4, None)?;
    let square24 = bundle(&DomainSpec::square(), 24, 2.0, 1e-4, None)?;
    note(progress, "tracing disk and square at p = 1.5 and 3 (res 24, λ ≤ 2)");
    let disk15 = bundle(&DomainSpec::disk(), 24, 1.5, 1e-3, Some(2.0))?;
    let disk3 = bundle(&DomainSpec::disk(), 24, 3.0, 1e-3, Some(2.0))?;
    let square15 = bundle(&DomainSpec::square(), 24, 1.5, 1e-3, Some(2.0))?;
    let square3 = bundle(&DomainSpec::square(), 24, 3.0, 1e-3, Some(2.0))?;
    note(progress, "tracing ball3d p=2 at res 128");
    let ball = bundle(&DomainSpec::ball3d(), 128, 2.0, 1e-3, None)?;

    let t = Instant::now();
    results.push(finish(3, "disk endpoint energy", t, criterion_3(&disk64)));

    let t = Instant::now();
    let all_bundles: Vec<(&str, &Bundle)> = vec![
        ("disk64", &disk64),
        ("disk32", &disk32),
        ("square48", &square48),
        ("square24", &square24),
        ("disk_p1.5", &disk15),
        ("disk_p3", &disk3),
        ("square_p1.5", &square15),
        ("square_p3", &square3),
        ("ball3d", &ball),
    ];
    results.push(finish(4, "branch monotonicity", t, criterion_4(&all_bundles)));

    let t = Instant::now();
    note(progress, "criterion 5: identity at eigenpairs of 10 sampled states");
    let samples: Vec<(&str, &Bundle, f64)> = vec![
        ("disk64", &disk64, 0.25),
        ("disk64", &disk64, 0.55),
        ("disk64", &disk64, 0.85),
        ("square48", &square48, 0.3),
        ("square48", &square48, 0.8),
        ("disk_p1.5", &disk15, 0.6),
        ("disk_p3", &disk3, 0.6),
        ("square_p1.5", &square15, 0.6),
        ("square_p3", &square3, 0.6),
        ("disk32", &disk32, 0.5),
    ];
    results.push(finish(5, "spectral mean identity", t, criterion_5(&samples)));

    let t = Instant::now();
    results.push(finish(6, "eigen solver vs dense oracle", t, criterion_6()));

    let t = Instant::now();
    note(progress, "criterion 7: variational vs newton on 10 λ per domain");
    results.push(finish(7, "variational-newton agreement", t, criterion_7()));

    let t = Instant::now();
    note(progress, "criterion 8: λ** bisection at res 32");
    results.push(finish(8, "threshold consistency", t, criterion_8(&disk32)));

    let table = lambda_table(progress)?;

    let t = Instant::now();
    results.push(finish(
        9,
        "disk equality and square strictness",
        t,
        criterion_9(&table, &disk32, &disk64, &square24, &square48),
    ));

    let t = Instant::now();
    results.push(finish(10, "sobolev constants", t, criterion_10(&table)));

    let t = Instant::now();
    results.push(finish(11, "ball energy bound", t, criterion_11(&ball)));

    let t = Instant::now();
    note(progress, "criterion 12: free-energy grid and value identity");
    results.push(finish(12, "free-energy monotonicity and identity", t, criterion_12()));

    let t = Instant::now();
    results.push(finish(13, "continuum limit residual", t, criterion_13(&disk64)));

    let t = Instant::now();
    note(progress, "criterion 14: genericity probe over 5 seeds");
    results.push(finish(14, "genericity probe", t, criterion_14()));

    let t = Instant::now();
    note(progress, "criterion 15: artifact determinism");
    results.push(finish(15, "artifact determinism", t, criterion_15(scratch)));

    Ok(results)
}

#[derive(Serialize)]
struct CriterionDoc<'a> {
    index: usize,
    name: &'a str,
    passed: bool,
    detail: &'a str,
}

#[derive(Serialize)]
struct VerifyDoc<'a> {
    config_hash: &'a str,
    passed: bool,
    criteria: Vec<CriterionDoc<'a>>,
}

/// Deterministic report document: criteria and details, no wall times.
pub fn verify_report_json(hash: &str, results: &[CriterionResult]) -> String {
    let doc = VerifyDoc {
        config_hash: hash,
        passed: results.iter().all(|r| r.passed),
        criteria: results
            .iter()
            .map(|r| CriterionDoc {
                index: r.index,
                name: r.name,
                passed: r.passed,
                detail: &r.detail,
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("report serializes");
    text.push('\n');
    text
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shooting_oracle_reproduces_the_linear_case() {
        let lam = disk_sobolev_shooting(2.0);
        let exact = PI * J01 * J01;
        assert!(
            rel(lam, exact) < 1e-7,
            "shooting Λ(D,2) = {lam} vs πj01² = {exact}"
        );
    }

    #[test]
    fn shooting_constants_decrease_in_t() {
        let l2 = disk_sobolev_shooting(2.0);
        let l3 = disk_sobolev_shooting(3.0);
        let l4 = disk_sobolev_shooting(4.0);
        assert!(l2 > l3 && l3 > l4, "chain broken: {l2}, {l3}, {l4}");
        assert!(l4 > 8.0, "Λ(D,4) = {l4} implausibly small");
    }

    #[test]
    fn shooting_matches_fem_on_the_disk() {
        let inst = instance(&DomainSpec::disk(), 48, 2.0).unwrap();
        let fem = sobolev_constant(&inst.mesh, &inst.ops, 3.0).unwrap().value;
        let shoot = disk_sobolev_shooting(3.0);
        assert!(
            rel(fem, shoot) < 5e-3,
            "FEM Λ(D,3) = {fem} vs shooting {shoot}"
        );
    }
}
