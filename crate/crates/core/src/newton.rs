//! Constrained Newton solver for the plasma problem
//!
//! ```text
//!   -Δψ = (α + λψ)^p,   ∫ (α + λψ)^p = 1,
//! ```
//!
//! with unknowns (α, ψ). The linearized system is a sparse operator bordered
//! by one dense column (the α direction) and one dense row (the mass
//! constraint); steps come from Schur elimination of the border through two
//! banded solves, followed by one iterative-refinement pass because the
//! sparse block can pass through a singular shift along a branch.

use crate::error::{Error, Result};
use crate::geometry::Mesh;
use crate::linalg::{BandedGeneral, BandedLu, SymBanded};
use crate::operators::{
    assemble_weighted_mass, integrate_quad, weighted_load, Field, Operators, QuadField,
};

#[derive(Clone, Debug)]
pub struct PlasmaConfig {
    /// Nonlinearity exponent, in (1, ∞) for planar domains and (1, 3) for
    /// the 3-ball.
    pub p: f64,
    pub newton_tol: f64,
    pub max_iters: usize,
    /// Admissible states keep α + λψ above this fraction of α.
    pub positivity_floor: f64,
}

impl PlasmaConfig {
    pub fn new(p: f64) -> Self {
        PlasmaConfig {
            p,
            newton_tol: 1e-10,
            max_iters: 40,
            positivity_floor: 0.5,
        }
    }

    /// Conjugate exponent q = p/(p-1).
    pub fn q(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        let p_max = match mesh.class {
            crate::geometry::MeshClass::Planar => f64::INFINITY,
            crate::geometry::MeshClass::Radial3d => 3.0,
        };
        if !(self.p > 1.0 && self.p < p_max) {
            return Err(Error::Usage(format!(
                "exponent p = {} outside the admissible range (1, {})",
                self.p, p_max
            )));
        }
        if !(self.positivity_floor > 0.0 && self.positivity_floor < 1.0) {
            return Err(Error::Usage(format!(
                "positivity floor {} must sit in (0, 1)",
                self.positivity_floor
            )));
        }
        Ok(())
    }
}

/// A solved or candidate state (λ, α, ψ) with its derived quadrature data.
#[derive(Clone, Debug)]
pub struct PlasmaState {
    pub lambda: f64,
    pub alpha: f64,
    pub psi: Field,
    /// ρ = (α + λψ)^p at quadrature points.
    pub rho: QuadField,
    /// ρ^{1/q} = (α + λψ)^{p-1} at quadrature points.
    pub weight: QuadField,
    /// m_λ = ∫ ρ^{1/q}.
    pub m_lambda: f64,
    /// ∫ ρ.
    pub mass: f64,
    /// E = ½ ∫ ρ ψ.
    pub energy: f64,
}

impl PlasmaState {
    /// Build the derived data, rejecting states that violate the positivity
    /// floor α + λψ ≥ floor·α (and strict positivity of the base).
    pub fn assemble(
        mesh: &Mesh,
        cfg: &PlasmaConfig,
        lambda: f64,
        alpha: f64,
        psi: Field,
    ) -> Result<Self> {
        let psi_q = QuadField::from_field(mesh, &psi);
        let base = psi_q.map(|v| alpha + lambda * v);
        let floor = cfg.positivity_floor * alpha.max(0.0);
        let min_base = base.min();
        if !(min_base > 0.0) || min_base < floor - 1e-14 * alpha.abs().max(1.0) {
            return Err(Error::DomainViolation(format!(
                "α + λψ reaches {min_base:.3e}, below the admissible floor {floor:.3e}"
            )));
        }
        let p = cfg.p;
        let rho = base.map(|v| v.powf(p));
        let weight = base.map(|v| v.powf(p - 1.0));
        let m_lambda = integrate_quad(mesh, &weight);
        let mass = integrate_quad(mesh, &rho);
        let energy = 0.5 * integrate_quad(mesh, &rho.zip(&psi_q, |a, b| a * b));
        Ok(PlasmaState {
            lambda,
            alpha,
            psi,
            rho,
            weight,
            m_lambda,
            mass,
            energy,
        })
    }

    /// ρ evaluated at the mesh nodes (boundary value α^p), for reporting.
    pub fn rho_nodal(&self, mesh: &Mesh, cfg: &PlasmaConfig) -> Vec<f64> {
        (0..mesh.node_count())
            .map(|i| {
                let v = self.alpha + self.lambda * self.psi.at_node(mesh, i);
                v.max(0.0).powf(cfg.p)
            })
            .collect()
    }

    /// Weighted mean ⟨f⟩_λ with the state weight ρ^{1/q}.
    pub fn mean(&self, mesh: &Mesh, f: &Field) -> f64 {
        let fq = QuadField::from_field(mesh, f);
        integrate_quad(mesh, &self.weight.zip(&fq, |a, b| a * b)) / self.m_lambda
    }

    /// Weighted inner product ⟨f, g⟩_λ = ∫ ρ^{1/q} f g / m_λ.
    pub fn inner(&self, mesh: &Mesh, f: &Field, g: &Field) -> f64 {
        let fq = QuadField::from_field(mesh, f);
        let gq = QuadField::from_field(mesh, g);
        let prod = self.weight.zip(&fq.zip(&gq, |a, b| a * b), |w, fg| w * fg);
        integrate_quad(mesh, &prod) / self.m_lambda
    }
}

/// Residual of the discrete system: the weak-form defect A ψ - b(ρ) per
/// interior node and the mass defect ∫ρ - 1.
pub fn residual(mesh: &Mesh, ops: &Operators, state: &PlasmaState) -> (Vec<f64>, f64) {
    let mut r1 = vec![0.0; mesh.interior_count()];
    ops.stiffness.matvec(state.psi.interior(), &mut r1);
    let b = ops.load_vector(mesh, &state.rho);
    for (r, bv) in r1.iter_mut().zip(&b) {
        *r -= bv;
    }
    (r1, state.mass - 1.0)
}

/// Directional derivative of the residual at `state` along (dψ, dα),
/// computed matrix-free.
pub fn jacobian_apply(
    mesh: &Mesh,
    ops: &Operators,
    cfg: &PlasmaConfig,
    state: &PlasmaState,
    dpsi: &Field,
    dalpha: f64,
) -> (Vec<f64>, f64) {
    let p = cfg.p;
    let lambda = state.lambda;
    let mut j1 = vec![0.0; mesh.interior_count()];
    ops.stiffness.matvec(dpsi.interior(), &mut j1);
    let dpsi_q = QuadField::from_field(mesh, dpsi);
    // dρ = p ρ^{1/q} (λ dψ + dα)
    let drho = state
        .weight
        .zip(&dpsi_q, |w, dv| p * w * (lambda * dv + dalpha));
    let db = ops.load_vector(mesh, &drho);
    for (r, bv) in j1.iter_mut().zip(&db) {
        *r -= bv;
    }
    let j2 = integrate_quad(mesh, &drho);
    (j1, j2)
}

/// The third scalar equation closing the bordered Newton system.
pub enum StepConstraint<'a> {
    /// dλ = 0: classical Newton in (α, ψ) at fixed λ.
    FixedLambda,
    /// dα = 0: solve for (λ, ψ) at fixed α.
    FixedAlpha,
    /// Keller pseudo-arclength: tᵀ(x - x_prev) = ds in the product metric.
    Keller {
        t_psi: &'a Field,
        t_alpha: f64,
        t_lambda: f64,
        prev_psi: &'a Field,
        prev_alpha: f64,
        prev_lambda: f64,
        ds: f64,
    },
}

struct LinearizedBlocks {
    k_lu: BandedLu,
    m_w: SymBanded,
    w_vec: Vec<f64>,
    g_vec: Vec<f64>,
    m: f64,
    gm: f64,
}

fn linearize(mesh: &Mesh, ops: &Operators, cfg: &PlasmaConfig, state: &PlasmaState) -> Result<LinearizedBlocks> {
    let p = cfg.p;
    let lambda = state.lambda;
    let m_w = assemble_weighted_mass(mesh, Some(&state.weight));
    let w_vec = weighted_load(mesh, &state.weight);
    let psi_q = QuadField::from_field(mesh, &state.psi);
    let wpsi = state.weight.zip(&psi_q, |a, b| a * b);
    let g_vec = weighted_load(mesh, &wpsi);
    let gm = integrate_quad(mesh, &wpsi);
    let k = BandedGeneral::from_sym_pair(&ops.stiffness, &m_w, lambda * p);
    let k_lu = k
        .lu()
        .ok_or_else(|| Error::NearFold("shifted operator A - λp M_W is singular".into()))?;
    Ok(LinearizedBlocks {
        k_lu,
        m_w,
        w_vec,
        g_vec,
        m: state.m_lambda,
        gm,
    })
}

/// K x without assembling K: A x - λp M_W x.
fn apply_k(
    ops: &Operators,
    blocks: &LinearizedBlocks,
    lambda_p: f64,
    x: &[f64],
    out: &mut Vec<f64>,
) {
    let n = x.len();
    out.resize(n, 0.0);
    ops.stiffness.matvec(x, out);
    let mut tmp = vec![0.0; n];
    blocks.m_w.matvec(x, &mut tmp);
    for (o, t) in out.iter_mut().zip(&tmp) {
        *o -= lambda_p * t;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One bordered Newton step: returns (dψ, dα, dλ).
fn bordered_step(
    mesh: &Mesh,
    ops: &Operators,
    cfg: &PlasmaConfig,
    state: &PlasmaState,
    blocks: &LinearizedBlocks,
    r1: &[f64],
    r2: f64,
    constraint: &StepConstraint,
) -> Result<(Field, f64, f64)> {
    let p = cfg.p;
    let lp = state.lambda * p;
    let (c_psi, c_alpha, c_lambda, rc): (Option<&Field>, f64, f64, f64) = match constraint {
        StepConstraint::FixedLambda => (None, 0.0, 1.0, 0.0),
        StepConstraint::FixedAlpha => (None, 1.0, 0.0, 0.0),
        StepConstraint::Keller {
            t_psi,
            t_alpha,
            t_lambda,
            prev_psi,
            prev_alpha,
            prev_lambda,
            ds,
        } => {
            let mut diff = state.psi.clone();
            diff.axpy(-1.0, prev_psi);
            let c = t_psi.dot(&diff)
                + t_alpha * (state.alpha - prev_alpha)
                + t_lambda * (state.lambda - prev_lambda)
                - ds;
            (Some(t_psi), *t_alpha, *t_lambda, c)
        }
    };
    let mut neg_r1: Vec<f64> = r1.iter().map(|v| -v).collect();
    let mut dpsi = vec![0.0; r1.len()];
    let mut dalpha = 0.0;
    let mut dlambda = 0.0;
    let mut rhs2 = -r2;
    let mut rhs3 = -rc;

    // two refinement passes over the same factorization
    for pass in 0..2 {
        let u0 = blocks.k_lu.solve(&neg_r1);
        let u1 = blocks.k_lu.solve(&blocks.w_vec);
        let u2 = blocks.k_lu.solve(&blocks.g_vec);
        let m11 = lp * p * dot(&blocks.w_vec, &u1) + p * blocks.m;
        let m12 = lp * p * dot(&blocks.w_vec, &u2) + p * blocks.gm;
        let b1 = rhs2 - lp * dot(&blocks.w_vec, &u0);
        let (m21, m22, b2) = match c_psi {
            Some(t) => (
                p * dot(t.interior(), &u1) + c_alpha,
                p * dot(t.interior(), &u2) + c_lambda,
                rhs3 - dot(t.interior(), &u0),
            ),
            None => (c_alpha, c_lambda, rhs3),
        };
        let det = m11 * m22 - m12 * m21;
        let scale = (m11.abs() + m12.abs()) * (m21.abs() + m22.abs()) + 1e-300;
        if det.abs() < 1e-14 * scale {
            return Err(Error::NearFold(format!(
                "bordered system is singular (det {det:.3e}); switch stepping mode"
            )));
        }
        let da = (b1 * m22 - m12 * b2) / det;
        let dl = (m11 * b2 - m21 * b1) / det;
        for i in 0..dpsi.len() {
            dpsi[i] += u0[i] + p * da * u1[i] + p * dl * u2[i];
        }
        dalpha += da;
        dlambda += dl;

        if pass == 1 {
            break;
        }
        // residual of the full linear system with the accumulated step
        let mut kd = Vec::new();
        apply_k(ops, blocks, lp, &dpsi, &mut kd);
        for i in 0..neg_r1.len() {
            neg_r1[i] = -r1[i] - kd[i] + p * blocks.w_vec[i] * dalpha + p * blocks.g_vec[i] * dlambda;
        }
        rhs2 = -r2 - lp * dot(&blocks.w_vec, &dpsi) - p * blocks.m * dalpha - p * blocks.gm * dlambda;
        rhs3 = -rc
            - c_psi.map_or(0.0, |t| dot(t.interior(), &dpsi))
            - c_alpha * dalpha
            - c_lambda * dlambda;
        let lin_res = neg_r1.iter().fold(0.0f64, |m, v| m.max(v.abs()))
            .max(rhs2.abs())
            .max(rhs3.abs());
        let lin_scale = r1.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(r2.abs()).max(1e-16);
        if lin_res < 1e-12 * lin_scale.max(1.0) {
            break;
        }
    }
    Ok((Field::from_interior(mesh, dpsi), dalpha, dlambda))
}

fn residual_norm(r1: &[f64], r2: f64, rc: f64) -> f64 {
    (dot(r1, r1) + r2 * r2 + rc * rc).sqrt()
}

fn constraint_value(constraint: &StepConstraint, state: &PlasmaState) -> f64 {
    match constraint {
        StepConstraint::FixedLambda | StepConstraint::FixedAlpha => 0.0,
        StepConstraint::Keller {
            t_psi,
            t_alpha,
            t_lambda,
            prev_psi,
            prev_alpha,
            prev_lambda,
            ds,
        } => {
            let mut diff = state.psi.clone();
            diff.axpy(-1.0, prev_psi);
            t_psi.dot(&diff)
                + t_alpha * (state.alpha - prev_alpha)
                + t_lambda * (state.lambda - prev_lambda)
                - ds
        }
    }
}

/// Damped Newton iteration under the given closing constraint, starting from
/// an admissible state.
pub fn newton_solve_constrained(
    mesh: &Mesh,
    ops: &Operators,
    cfg: &PlasmaConfig,
    start: PlasmaState,
    constraint: &StepConstraint,
) -> Result<PlasmaState> {
    let mut state = start;
    let mut last_norm = f64::INFINITY;
    for _iter in 0..cfg.max_iters {
        let (r1, r2) = residual(mesh, ops, &state);
        let rc = constraint_value(constraint, &state);
        let rn = residual_norm(&r1, r2, rc);
        if rn <= cfg.newton_tol {
            return Ok(state);
        }
        if !rn.is_finite() {
            return Err(Error::NewtonFailure("residual is not finite".into()));
        }
        let blocks = linearize(mesh, ops, cfg, &state)?;
        let (dpsi, dalpha, dlambda) =
            bordered_step(mesh, ops, cfg, &state, &blocks, &r1, r2, constraint)?;
        // backtracking on the residual norm
        let mut t = 1.0f64;
        let mut accepted = None;
        while t >= 1.0 / 1024.0 {
            let mut psi_new = state.psi.clone();
            psi_new.axpy(t, &dpsi);
            let cand = PlasmaState::assemble(
                mesh,
                cfg,
                state.lambda + t * dlambda,
                state.alpha + t * dalpha,
                psi_new,
            );
            if let Ok(cand) = cand {
                let (c1, c2) = residual(mesh, ops, &cand);
                let cc = constraint_value(constraint, &cand);
                let cn = residual_norm(&c1, c2, cc);
                if cn < (1.0 - 1e-4 * t) * rn || cn < cfg.newton_tol {
                    accepted = Some((cand, cn));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, cn)) => {
                state = cand;
                last_norm = cn;
            }
            None => {
                return Err(Error::NewtonFailure(format!(
                    "line search stalled at residual {rn:.3e}"
                )))
            }
        }
    }
    Err(Error::NewtonFailure(format!(
        "no convergence within {} iterations (residual {last_norm:.3e})",
        cfg.max_iters
    )))
}

/// Solve at fixed λ from an (α, ψ) guess.
pub fn newton_solve(
    mesh: &Mesh,
    ops: &Operators,
    cfg: &PlasmaConfig,
    lambda: f64,
    alpha_guess: f64,
    psi_guess: Field,
) -> Result<PlasmaState> {
    cfg.validate(mesh)?;
    if lambda < 0.0 {
        return Err(Error::Usage(format!("λ must be nonnegative, got {lambda}")));
    }
    let start = PlasmaState::assemble(mesh, cfg, lambda, alpha_guess, psi_guess)?;
    newton_solve_constrained(mesh, ops, cfg, start, &StepConstraint::FixedLambda)
}

/// Solve at fixed α (used to land exactly on endpoint targets).
pub fn newton_solve_at_alpha(
    mesh: &Mesh,
    ops: &Operators,
    cfg: &PlasmaConfig,
    alpha: f64,
    lambda_guess: f64,
    psi_guess: Field,
) -> Result<PlasmaState> {
    cfg.validate(mesh)?;
    let start = PlasmaState::assemble(mesh, cfg, lambda_guess, alpha, psi_guess)?;
    newton_solve_constrained(mesh, ops, cfg, start, &StepConstraint::FixedAlpha)
}

/// The λ = 0 state is exact on the discrete level: α = 1, ψ = G[1].
pub fn base_state(mesh: &Mesh, ops: &Operators, cfg: &PlasmaConfig) -> Result<PlasmaState> {
    cfg.validate(mesh)?;
    let psi = ops.green_solve(mesh, &QuadField::constant(mesh, 1.0))?;
    PlasmaState::assemble(mesh, cfg, 0.0, 1.0, psi)
}

/// Nullspace tangent of the solution curve at a solved state: solves
/// J t = 0 with the affine normalization rowᵀ t = 1, where `row` is a
/// linear functional in coefficient space (any metric weighting is the
/// caller's business). Passing the previous tangent's row keeps the
/// orientation continuous through folds.
pub fn nullspace_tangent(
    mesh: &Mesh,
    ops: &Operators,
    cfg: &PlasmaConfig,
    state: &PlasmaState,
    row_psi: &Field,
    row_alpha: f64,
    row_lambda: f64,
) -> Result<(Field, f64, f64)> {
    let blocks = linearize(mesh, ops, cfg, state)?;
    let zeros = vec![0.0; mesh.interior_count()];
    let constraint = StepConstraint::Keller {
        t_psi: row_psi,
        t_alpha: row_alpha,
        t_lambda: row_lambda,
        prev_psi: &state.psi,
        prev_alpha: state.alpha,
        prev_lambda: state.lambda,
        ds: 1.0,
    };
    bordered_step(mesh, ops, cfg, state, &blocks, &zeros, 0.0, &constraint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, DomainSpec};
    use std::f64::consts::PI;

    fn setup(spec: &DomainSpec, res: u32) -> (Mesh, Operators) {
        let mesh = build_mesh(spec, res).unwrap();
        let ops = Operators::assemble(&mesh).unwrap();
        (mesh, ops)
    }

    #[test]
    fn lambda_zero_solution_is_exact() {
        for spec in [DomainSpec::disk(), DomainSpec::square(), DomainSpec::ball3d()] {
            let (mesh, ops) = setup(&spec, 24);
            let cfg = PlasmaConfig::new(2.0);
            let state = newton_solve(&mesh, &ops, &cfg, 0.0, 0.7, Field::zeros(&mesh)).unwrap();
            assert!((state.alpha - 1.0).abs() < 1e-10, "α = {}", state.alpha);
            let (r1, r2) = residual(&mesh, &ops, &state);
            let rn = residual_norm(&r1, r2, 0.0);
            assert!(rn <= 1e-10, "residual {rn}");
            // ψ must coincide with the discrete torsion function
            let torsion = ops
                .green_solve(&mesh, &QuadField::constant(&mesh, 1.0))
                .unwrap();
            let mut diff = state.psi.clone();
            diff.axpy(-1.0, &torsion);
            assert!(diff.norm_max() < 1e-10);
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let (mesh, ops) = setup(&DomainSpec::disk(), 16);
        let cfg = PlasmaConfig::new(2.0);
        let base = base_state(&mesh, &ops, &cfg).unwrap();
        // an admissible off-solution state
        let mut psi = base.psi.clone();
        for (i, v) in psi.interior_mut().iter_mut().enumerate() {
            *v *= 1.0 + 0.1 * ((i as f64) * 0.7).sin();
        }
        let state = PlasmaState::assemble(&mesh, &cfg, 0.8, 0.95, psi).unwrap();
        let mut dpsi = Field::zeros(&mesh);
        for (i, v) in dpsi.interior_mut().iter_mut().enumerate() {
            *v = ((i as f64) * 1.3).cos() * 0.01;
        }
        let dalpha = 0.013;
        let (j1, j2) = jacobian_apply(&mesh, &ops, &cfg, &state, &dpsi, dalpha);
        let h = 1e-5;
        let eval = |sgn: f64| {
            let mut psi = state.psi.clone();
            psi.axpy(sgn * h, &dpsi);
            let s = PlasmaState::assemble(&mesh, &cfg, state.lambda, state.alpha + sgn * h * dalpha, psi)
                .unwrap();
            residual(&mesh, &ops, &s)
        };
        let (rp, mp) = eval(1.0);
        let (rm, mm) = eval(-1.0);
        let mut max_rel = 0.0f64;
        let scale = j1.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        for i in 0..j1.len() {
            let fd = (rp[i] - rm[i]) / (2.0 * h);
            max_rel = max_rel.max((fd - j1[i]).abs() / scale);
        }
        let fd2 = (mp - mm) / (2.0 * h);
        assert!(max_rel < 1e-6, "field block mismatch {max_rel}");
        assert!((fd2 - j2).abs() / j2.abs().max(1e-12) < 1e-6, "mass row mismatch");
    }

    /// Independent route to the same solution: damped fixed-point iteration
    /// ψ ← G[(α+λψ)^p] with α recovered from the mass constraint each sweep.
    fn fixed_point_oracle(
        mesh: &Mesh,
        ops: &Operators,
        cfg: &PlasmaConfig,
        lambda: f64,
    ) -> (f64, Field) {
        let mut psi = ops
            .green_solve(mesh, &QuadField::constant(mesh, 1.0))
            .unwrap();
        let mut alpha = 1.0;
        for _ in 0..400 {
            let psi_q = QuadField::from_field(mesh, &psi);
            // bisection for α with ∫(α+λψ)₊^p = 1
            let (mut lo, mut hi) = (-lambda * 1.0, 2.0);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                let mass = integrate_quad(
                    mesh,
                    &psi_q.map(|v| (mid + lambda * v).max(0.0).powf(cfg.p)),
                );
                if mass > 1.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            alpha = 0.5 * (lo + hi);
            let rho = psi_q.map(|v| (alpha + lambda * v).max(0.0).powf(cfg.p));
            let psi_new = ops.green_solve(mesh, &rho).unwrap();
            let mut diff = psi_new.clone();
            diff.axpy(-1.0, &psi);
            let step = diff.norm_max();
            // mild damping keeps the sweep contractive well past λ = 1
            let mut next = psi.clone();
            next.axpy(0.7, &diff);
            psi = next;
            if step < 1e-13 {
                break;
            }
        }
        (alpha, psi)
    }

    #[test]
    fn newton_agrees_with_fixed_point_oracle() {
        let (mesh, ops) = setup(&DomainSpec::disk(), 24);
        let cfg = PlasmaConfig::new(2.0);
        let lambda = 1.0;
        let (alpha_fp, psi_fp) = fixed_point_oracle(&mesh, &ops, &cfg, lambda);
        let state = newton_solve(&mesh, &ops, &cfg, lambda, 1.0, Field::zeros(&mesh)).unwrap();
        assert!(
            (state.alpha - alpha_fp).abs() < 1e-8,
            "α newton {} vs oracle {}",
            state.alpha,
            alpha_fp
        );
        let mut diff = state.psi.clone();
        diff.axpy(-1.0, &psi_fp);
        assert!(diff.norm_max() < 1e-8, "ψ deviation {}", diff.norm_max());
    }

    #[test]
    fn alpha_slope_at_lambda_zero_matches_first_order_theory() {
        // dα/dλ(0) = -∫ψ₀ = -2 E₀(Ω); on the disk α(0.1) ≈ 1 - 0.1/(8π)
        let (mesh, ops) = setup(&DomainSpec::disk(), 32);
        let cfg = PlasmaConfig::new(2.0);
        let state = newton_solve(&mesh, &ops, &cfg, 0.1, 1.0, Field::zeros(&mesh)).unwrap();
        let predicted = 1.0 - 0.1 / (8.0 * PI);
        assert!(
            (state.alpha - predicted).abs() < 5e-4,
            "α = {} vs first-order {}",
            state.alpha,
            predicted
        );
        assert!(state.alpha < 1.0);
        assert!(state.psi.min() > 0.0, "ψ must stay positive inside");
    }

    #[test]
    fn solve_at_fixed_alpha_recovers_lambda() {
        let (mesh, ops) = setup(&DomainSpec::disk(), 20);
        let cfg = PlasmaConfig::new(2.0);
        let at_lambda = newton_solve(&mesh, &ops, &cfg, 0.5, 1.0, Field::zeros(&mesh)).unwrap();
        // forget λ, keep α: the fixed-α solve must find the same point
        let refound = newton_solve_at_alpha(
            &mesh,
            &ops,
            &cfg,
            at_lambda.alpha,
            0.4,
            at_lambda.psi.clone(),
        )
        .unwrap();
        assert!(
            (refound.lambda - 0.5).abs() < 1e-8,
            "λ recovered as {}",
            refound.lambda
        );
    }

    #[test]
    fn inadmissible_state_is_rejected() {
        let (mesh, ops) = setup(&DomainSpec::disk(), 12);
        let cfg = PlasmaConfig::new(2.0);
        let mut psi = ops
            .green_solve(&mesh, &QuadField::constant(&mesh, 1.0))
            .unwrap();
        psi.scale(-30.0);
        match PlasmaState::assemble(&mesh, &cfg, 1.0, 1.0, psi) {
            Err(Error::DomainViolation(_)) => {}
            other => panic!("expected domain violation, got {:?}", other.map(|s| s.alpha)),
        }
    }

    #[test]
    fn invalid_exponent_is_a_usage_error() {
        let (mesh, ops) = setup(&DomainSpec::ball3d(), 16);
        let cfg = PlasmaConfig::new(3.5); // beyond N/(N-2) = 3
        match newton_solve(&mesh, &ops, &cfg, 0.0, 1.0, Field::zeros(&mesh)) {
            Err(Error::Usage(_)) => {}
            other => panic!("expected usage error, got {:?}", other.map(|s| s.alpha)),
        }
    }
}
