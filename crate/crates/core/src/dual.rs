//! Dual free-boundary form and the continuum limit diagram
//!
//! A solved state (λ, α, ψ) transforms to the free-boundary variables
//!
//! ```text
//!   I = λ^q,   γ = λ^{1/(p-1)} α,   v = γ + λ^q ψ = λ^{1/(p-1)}(α + λψ),
//! ```
//!
//! in which the equation reads -Δv = (v)₊^p with v = γ on the wall and the
//! total flux ∫(v)₊^p equals I. The inverse map is λ = I^{1/q},
//! α = I^{-1/p} γ, ψ = (v - γ)/I. The plasma region {v > 0} is measured by
//! clipping the linear interpolant cell by cell.
//!
//! The Gelfand-type normalization μ = λ α^{p-1}, u = (λ/α) ψ satisfies
//! -Δu = μ(1+u)^p; as α ↓ 0 the rescaled U = λ^q ψ approaches a positive
//! solution of the limit equation -ΔU = U^p, and the relative defect of
//! that equation is the continuum-limit residual reported per state.

use crate::error::{Error, Result};
use crate::geometry::{Mesh, MeshClass};
use crate::newton::{PlasmaConfig, PlasmaState};
use crate::operators::{Field, Operators, QuadField};
use std::f64::consts::PI;

/// Free-boundary image of a solved state.
#[derive(Clone, Debug)]
pub struct FreeBoundarySolution {
    /// I = λ^q.
    pub i_param: f64,
    /// Wall value γ = λ^{1/(p-1)} α.
    pub gamma: f64,
    /// v at every mesh node.
    pub v: Vec<f64>,
    /// |{v > 0}|.
    pub plasma_region_measure: f64,
    /// Length (planar) or area (radial) of the free boundary {v = 0},
    /// zero when the plasma fills the domain.
    pub interface_size: f64,
    /// |∫(v)₊^p - I| / I.
    pub flux_defect: f64,
}

/// Scalar part of the forward map: (λ, α) → (I, γ).
pub fn to_dual(cfg: &PlasmaConfig, lambda: f64, alpha: f64) -> (f64, f64) {
    let i_param = lambda.powf(cfg.q());
    let gamma = lambda.powf(1.0 / (cfg.p - 1.0)) * alpha;
    (i_param, gamma)
}

/// Inverse map (I, γ, v) → (λ, α, ψ-values); v is nodal over all nodes.
pub fn to_primal(cfg: &PlasmaConfig, i_param: f64, gamma: f64, v: &[f64]) -> (f64, f64, Vec<f64>) {
    let q = cfg.q();
    let lambda = i_param.powf(1.0 / q);
    let alpha = i_param.powf(-1.0 / cfg.p) * gamma;
    let psi: Vec<f64> = v.iter().map(|&x| (x - gamma) / i_param).collect();
    (lambda, alpha, psi)
}

/// Measures of {v > 0} and {v < 0} and the size of the interface {v = 0}
/// for a nodal field.
#[derive(Clone, Debug)]
pub struct PlasmaRegion {
    pub measure: f64,
    pub negative_measure: f64,
    pub interface_size: f64,
}

/// Clip the linear interpolant of `v` against {v > 0} cell by cell.
/// Nodal values within 1e-14 of zero (relative to the field scale) are
/// snapped to zero first, so grazing contacts do not flip cells.
pub fn plasma_region(mesh: &Mesh, v: &[f64]) -> Result<PlasmaRegion> {
    if v.len() != mesh.node_count() {
        return Err(Error::Usage(format!(
            "nodal field has {} entries for a mesh with {} nodes",
            v.len(),
            mesh.node_count()
        )));
    }
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    let snap = |x: f64| if x.abs() < 1e-14 * scale { 0.0 } else { x };
    match mesh.class {
        MeshClass::Planar => {
            let mut measure = 0.0;
            let mut total = 0.0;
            let mut interface = 0.0;
            for tri in &mesh.tris {
                let pts = [
                    mesh.nodes[tri[0]],
                    mesh.nodes[tri[1]],
                    mesh.nodes[tri[2]],
                ];
                let vals = [snap(v[tri[0]]), snap(v[tri[1]]), snap(v[tri[2]])];
                let (area, cut, tri_area) = clip_triangle(&pts, &vals);
                measure += area;
                total += tri_area;
                interface += cut;
            }
            Ok(PlasmaRegion {
                measure,
                negative_measure: (total - measure).max(0.0),
                interface_size: interface,
            })
        }
        MeshClass::Radial3d => {
            let mut measure = 0.0;
            let mut total = 0.0;
            let mut interface = 0.0;
            for seg in &mesh.segs {
                let (r0, r1) = (mesh.nodes[seg[0]][0], mesh.nodes[seg[1]][0]);
                let (a, b) = (snap(v[seg[0]]), snap(v[seg[1]]));
                let shell = |ra: f64, rb: f64| 4.0 * PI / 3.0 * (rb.powi(3) - ra.powi(3));
                total += shell(r0, r1);
                if a > 0.0 && b > 0.0 {
                    measure += shell(r0, r1);
                } else if a <= 0.0 && b <= 0.0 {
                    // nothing inside this shell
                } else {
                    let t = a / (a - b);
                    let rc = r0 + t * (r1 - r0);
                    if a > 0.0 {
                        measure += shell(r0, rc);
                    } else {
                        measure += shell(rc, r1);
                    }
                    interface += 4.0 * PI * rc * rc;
                }
            }
            Ok(PlasmaRegion {
                measure,
                negative_measure: (total - measure).max(0.0),
                interface_size: interface,
            })
        }
    }
}

/// Area of {v ≥ 0} within one triangle, the length of the zero chord, and
/// the full triangle area.
fn clip_triangle(pts: &[[f64; 2]; 3], vals: &[f64; 3]) -> (f64, f64, f64) {
    let tri_area = 0.5
        * ((pts[1][0] - pts[0][0]) * (pts[2][1] - pts[0][1])
            - (pts[2][0] - pts[0][0]) * (pts[1][1] - pts[0][1]))
            .abs();
    let pos = vals.iter().filter(|&&x| x > 0.0).count();
    let neg = vals.iter().filter(|&&x| x < 0.0).count();
    if neg == 0 {
        return (tri_area, 0.0, tri_area);
    }
    if pos == 0 {
        return (0.0, 0.0, tri_area);
    }
    // mixed: walk the edges collecting the positive-side polygon
    let mut poly: Vec<[f64; 2]> = Vec::with_capacity(5);
    let mut crossings: Vec<[f64; 2]> = Vec::with_capacity(2);
    for k in 0..3 {
        let (i, j) = (k, (k + 1) % 3);
        if vals[i] >= 0.0 {
            poly.push(pts[i]);
        }
        if (vals[i] > 0.0 && vals[j] < 0.0) || (vals[i] < 0.0 && vals[j] > 0.0) {
            let t = vals[i] / (vals[i] - vals[j]);
            let x = [
                pts[i][0] + t * (pts[j][0] - pts[i][0]),
                pts[i][1] + t * (pts[j][1] - pts[i][1]),
            ];
            poly.push(x);
            crossings.push(x);
        }
    }
    let mut area = 0.0;
    for k in 1..poly.len().saturating_sub(1) {
        area += 0.5
            * ((poly[k][0] - poly[0][0]) * (poly[k + 1][1] - poly[0][1])
                - (poly[k + 1][0] - poly[0][0]) * (poly[k][1] - poly[0][1]));
    }
    let cut = if crossings.len() == 2 {
        ((crossings[0][0] - crossings[1][0]).powi(2)
            + (crossings[0][1] - crossings[1][1]).powi(2))
        .sqrt()
    } else {
        0.0
    };
    (area.abs(), cut, tri_area)
}

/// Full free-boundary image of a solved state, with the flux identity and
/// plasma-region geometry evaluated.
pub fn free_boundary_solution(
    mesh: &Mesh,
    cfg: &PlasmaConfig,
    state: &PlasmaState,
) -> Result<FreeBoundarySolution> {
    let q = cfg.q();
    let i_param = state.lambda.powf(q);
    if !(i_param > 0.0) {
        return Err(Error::Usage(
            "the dual form needs λ > 0; the λ = 0 state maps to I = 0".into(),
        ));
    }
    let gamma = state.lambda.powf(1.0 / (cfg.p - 1.0)) * state.alpha;
    let v: Vec<f64> = (0..mesh.node_count())
        .map(|i| gamma + i_param * state.psi.at_node(mesh, i))
        .collect();
    let region = plasma_region(mesh, &v)?;
    // ∫(v)₊^p = I ∫ρ by construction, so the defect doubles as a mass check
    let vq = QuadField::from_field(mesh, &state.psi).map(|psi| gamma + i_param * psi);
    let flux = crate::operators::integrate_quad(mesh, &vq.map(|x| x.max(0.0).powf(cfg.p)));
    Ok(FreeBoundarySolution {
        i_param,
        gamma,
        v,
        plasma_region_measure: region.measure,
        interface_size: region.interface_size,
        flux_defect: (flux - i_param).abs() / i_param,
    })
}

/// One sample of the Gelfand-normalized diagram μ ↦ sup u together with the
/// continuum-limit defect of U = λ^q ψ.
#[derive(Clone, Debug)]
pub struct ContinuumPoint {
    pub lambda: f64,
    pub alpha: f64,
    /// μ = λ α^{p-1}.
    pub mu: f64,
    /// u = (λ/α) ψ, the solution of -Δu = μ(1+u)^p.
    pub u: Field,
    /// sup of u.
    pub sup_u: f64,
    /// U = λ^q ψ, the candidate for the limit equation -ΔU = U^p.
    pub u_limit: Field,
    /// ‖A U - b(U^p)‖ / ‖b(U^p)‖ with U = λ^q ψ.
    pub residual_limit_eq: f64,
}

pub fn continuum_point(
    mesh: &Mesh,
    ops: &Operators,
    cfg: &PlasmaConfig,
    state: &PlasmaState,
) -> Result<ContinuumPoint> {
    if !(state.alpha > 0.0 && state.lambda > 0.0) {
        return Err(Error::Usage(
            "the Gelfand normalization needs λ > 0 and α > 0".into(),
        ));
    }
    let q = cfg.q();
    let mu = state.lambda * state.alpha.powf(cfg.p - 1.0);
    let psi_sup = state.psi.interior().iter().fold(0.0f64, |m, v| m.max(*v));
    let sup_u = state.lambda / state.alpha * psi_sup;
    let mut u = state.psi.clone();
    u.scale(state.lambda / state.alpha);
    let iq = state.lambda.powf(q);
    let u_cap = QuadField::from_field(mesh, &state.psi).map(|psi| iq * psi);
    let mut au = vec![0.0; mesh.interior_count()];
    let mut u_int = state.psi.clone();
    u_int.scale(iq);
    ops.stiffness.matvec(u_int.interior(), &mut au);
    let b_up = ops.load_vector(mesh, &u_cap.map(|x| x.max(0.0).powf(cfg.p)));
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in au.iter().zip(&b_up) {
        num += (a - b) * (a - b);
        den += b * b;
    }
    Ok(ContinuumPoint {
        lambda: state.lambda,
        alpha: state.alpha,
        mu,
        u,
        sup_u,
        u_limit: u_int,
        residual_limit_eq: (num / den.max(1e-300)).sqrt(),
    })
}

/// The Gelfand diagram of a whole traced branch. The λ = 0 start maps to
/// (μ, u) = (0, 0), which satisfies the limit equation identically; points
/// whose stored α dipped to zero or below are skipped.
pub fn rabinowitz_export(
    mesh: &Mesh,
    ops: &Operators,
    cfg: &PlasmaConfig,
    trace: &crate::continuation::BranchTrace,
) -> Result<Vec<ContinuumPoint>> {
    let mut out = Vec::with_capacity(trace.points.len());
    for pt in &trace.points {
        if pt.lambda == 0.0 {
            out.push(ContinuumPoint {
                lambda: 0.0,
                alpha: pt.alpha,
                mu: 0.0,
                u: Field::zeros(mesh),
                sup_u: 0.0,
                u_limit: Field::zeros(mesh),
                residual_limit_eq: 0.0,
            });
            continue;
        }
        if pt.alpha <= 0.0 {
            continue;
        }
        let state = pt.state(mesh, cfg)?;
        out.push(continuum_point(mesh, ops, cfg, &state)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuation::{trace_branch, ContinuationConfig};
    use crate::geometry::{build_mesh, DomainSpec};
    use crate::newton::newton_solve;
    use crate::operators::Operators;

    #[test]
    fn dual_round_trip_is_exact() {
        let cfg = PlasmaConfig::new(2.0);
        let (lambda, alpha) = (4.0, 0.5);
        let (i_param, gamma) = to_dual(&cfg, lambda, alpha);
        assert_eq!(i_param, 16.0);
        assert_eq!(gamma, 2.0);
        let psi_vals = [0.0, 0.3, 1.7, 0.04];
        let v: Vec<f64> = psi_vals.iter().map(|&s| gamma + i_param * s).collect();
        let (l2, a2, psi2) = to_primal(&cfg, i_param, gamma, &v);
        assert!((l2 - lambda).abs() < 1e-14);
        assert!((a2 - alpha).abs() < 1e-14);
        for (orig, back) in psi_vals.iter().zip(&psi2) {
            assert!((orig - back).abs() < 1e-14);
        }
    }

    #[test]
    fn flux_identity_holds_on_solved_states() {
        let mesh = build_mesh(&DomainSpec::disk(), 20).unwrap();
        let ops = Operators::assemble(&mesh).unwrap();
        let cfg = PlasmaConfig::new(2.0);
        let state = newton_solve(&mesh, &ops, &cfg, 1.2, 1.0, Field::zeros(&mesh)).unwrap();
        let fb = free_boundary_solution(&mesh, &cfg, &state).unwrap();
        assert!(fb.flux_defect < 1e-10, "flux defect {}", fb.flux_defect);
        // α > 0 keeps v positive throughout, so the plasma fills the domain
        assert!((fb.plasma_region_measure - 1.0).abs() < 1e-10);
        assert_eq!(fb.interface_size, 0.0);
        assert!(fb.gamma > 0.0);
    }

    #[test]
    fn manufactured_circle_is_recovered() {
        // v = γ + A(R² - r²)/4 vanishes on the circle r₀ = √(R² + 4γ/A)
        let a_coef = 1.0;
        let gamma = -0.01;
        let r2 = 1.0 / std::f64::consts::PI;
        let r0sq = r2 + 4.0 * gamma / a_coef;
        let exact_measure = PI * r0sq;
        let exact_length = 2.0 * PI * r0sq.sqrt();
        let mut errs = Vec::new();
        for res in [32u32, 64] {
            let mesh = build_mesh(&DomainSpec::disk(), res).unwrap();
            let v: Vec<f64> = mesh
                .nodes
                .iter()
                .map(|p| gamma + a_coef * (r2 - p[0] * p[0] - p[1] * p[1]) / 4.0)
                .collect();
            let region = plasma_region(&mesh, &v).unwrap();
            let covered = region.measure + region.negative_measure;
            assert!(
                (covered - mesh.measure()).abs() < 1e-12,
                "positive and negative parts must tile the domain, got {covered}"
            );
            errs.push((
                (region.measure - exact_measure).abs(),
                (region.interface_size - exact_length).abs(),
            ));
        }
        assert!(errs[1].0 < 2e-3, "measure error {}", errs[1].0);
        assert!(errs[1].1 < 0.02 * exact_length, "length error {}", errs[1].1);
        assert!(errs[1].0 < errs[0].0, "no refinement gain: {errs:?}");
    }

    #[test]
    fn radial_shell_region_is_exact_to_interpolation() {
        let mesh = build_mesh(&DomainSpec::ball3d(), 64).unwrap();
        let r_out = mesh.nodes.last().unwrap()[0];
        let gamma = -0.004;
        let v: Vec<f64> = mesh
            .nodes
            .iter()
            .map(|p| gamma + (r_out * r_out - p[0] * p[0]) / 6.0)
            .collect();
        let r0sq = r_out * r_out + 6.0 * gamma;
        let exact = 4.0 * PI / 3.0 * r0sq.powf(1.5);
        let region = plasma_region(&mesh, &v).unwrap();
        assert!(
            (region.measure - exact).abs() < 2e-3,
            "measure {} vs {exact}",
            region.measure
        );
        assert!((region.interface_size - 4.0 * PI * r0sq).abs() < 0.05);
    }

    #[test]
    fn continuum_residual_decreases_toward_the_endpoint() {
        let mesh = build_mesh(&DomainSpec::disk(), 16).unwrap();
        let ops = Operators::assemble(&mesh).unwrap();
        let cfg = PlasmaConfig::new(2.0);
        let ccfg = ContinuationConfig {
            alpha_stop: 1e-4,
            lambda_cap: Some(60.0),
            ..ContinuationConfig::default()
        };
        let trace = trace_branch(&mesh, &ops, &cfg, &ccfg).unwrap();
        let mut residuals = Vec::new();
        for target in [1e-2, 1e-3, 1e-4] {
            let point = trace.point_at_alpha(target).expect("missing α target");
            let state = point.state(&mesh, &cfg).unwrap();
            let cp = continuum_point(&mesh, &ops, &cfg, &state).unwrap();
            residuals.push(cp.residual_limit_eq);
            assert!(cp.mu > 0.0 && cp.sup_u > 0.0);
        }
        assert!(
            residuals[0] > residuals[1] && residuals[1] > residuals[2],
            "residuals not decreasing: {residuals:?}"
        );
        assert!(
            residuals[1] < 0.05,
            "limit-equation residual {} at α = 1e-3",
            residuals[1]
        );
    }

    #[test]
    fn gelfand_parameter_rises_and_falls() {
        let mesh = build_mesh(&DomainSpec::disk(), 16).unwrap();
        let ops = Operators::assemble(&mesh).unwrap();
        let cfg = PlasmaConfig::new(2.0);
        let ccfg = ContinuationConfig {
            alpha_stop: 1e-3,
            lambda_cap: Some(60.0),
            ..ContinuationConfig::default()
        };
        let trace = trace_branch(&mesh, &ops, &cfg, &ccfg).unwrap();
        let mus: Vec<f64> = trace
            .points
            .iter()
            .filter(|pt| pt.lambda > 0.0 && pt.alpha > 0.0)
            .map(|pt| pt.lambda * pt.alpha.powf(cfg.p - 1.0))
            .collect();
        let max = mus.iter().cloned().fold(0.0, f64::max);
        let last = *mus.last().unwrap();
        assert!(max > 2.0 * last, "μ diagram did not turn: max {max}, last {last}");
        assert!(last < 0.1, "μ must collapse at the endpoint, got {last}");
    }
}
