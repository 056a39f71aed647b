//! Constrained linearization spectrum and Sobolev constants
//!
//! At a solved state the linearization of the problem restricted to the
//! mass-constraint tangent space is governed by the pencil
//!
//! ```text
//!   A φ = ν B φ,   B = M_W - w wᵀ / m,   σ_k = ν_k - λ p,
//! ```
//!
//! where `M_W` is the mass matrix weighted by `W = (α + λψ)^{p-1}`, `w` the
//! weighted load vector, and `m = ∫W`. `B` is positive definite on the
//! interior space, eigenvectors are `B`-orthonormal, and the centered modes
//! `[φ] = φ - ⟨φ⟩` are orthogonal in the weighted mean. Each eigenpair
//! satisfies the exact discrete identity
//!
//! ```text
//!   (α + λ⟨ψ⟩) ⟨φ⟩ = (λ(p-1) + σ) ⟨ψ[φ]⟩,
//! ```
//!
//! whose defect is reported per mode and acts as a joint solver check.

use crate::error::{Error, Result};
use crate::geometry::Mesh;
use crate::linalg::SymBanded;
use crate::newton::{PlasmaConfig, PlasmaState};
use crate::operators::{
    assemble_weighted_mass, integrate_quad, weighted_load, Field, Operators, QuadField,
};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct EigenConfig {
    /// Number of eigenpairs to resolve.
    pub count: usize,
    /// Relative residual target per wanted mode.
    pub tol: f64,
    pub max_sweeps: usize,
    pub seed: u64,
}

impl Default for EigenConfig {
    fn default() -> Self {
        EigenConfig {
            count: 6,
            tol: 1e-11,
            max_sweeps: 400,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SpectrumResult {
    /// σ_k = ν_k - λp, ascending in ν.
    pub sigmas: Vec<f64>,
    /// Generalized eigenvalues ν_k of (A, B).
    pub nus: Vec<f64>,
    /// B-orthonormal eigenfunctions.
    pub phis: Vec<Field>,
    /// Weighted means ⟨φ_k⟩_λ.
    pub means: Vec<f64>,
    /// ⟨ψ [φ_k]⟩_λ.
    pub psi_projections: Vec<f64>,
    /// Defect of the mean identity per mode.
    pub identity_residuals: Vec<f64>,
    /// Identity defect divided by the magnitude its terms would have
    /// without cancellation, so modes with ⟨φ⟩ ≈ 0 still score sensibly.
    pub identity_rel_residuals: Vec<f64>,
    /// Relative eigen residual ‖Aφ - νBφ‖ / (ν‖Bφ‖) per mode.
    pub eigen_residuals: Vec<f64>,
    pub sweeps: usize,
}

/// The pencil right-hand operator B x = M_W x - c w (wᵀ x).
pub(crate) struct PencilRhs<'a> {
    pub m_w: &'a SymBanded,
    pub rank_one: Option<(&'a [f64], f64)>,
}

impl PencilRhs<'_> {
    pub fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.resize(x.len(), 0.0);
        self.m_w.matvec(x, out);
        if let Some((w, c)) = self.rank_one {
            let s: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
            for (o, wv) in out.iter_mut().zip(w) {
                *o -= c * s * wv;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// B-orthonormalize `cols` in place with modified Gram-Schmidt, keeping the
/// cached products `b_cols[j] = B cols[j]` in sync. Degenerate columns are
/// refilled from the deterministic stream.
fn b_orthonormalize(
    cols: &mut [Vec<f64>],
    b_cols: &mut [Vec<f64>],
    b: &PencilRhs,
    rng: &mut ChaCha8Rng,
) {
    let n = cols[0].len();
    for j in 0..cols.len() {
        let mut attempts = 0;
        loop {
            for _pass in 0..2 {
                for i in 0..j {
                    let c = dot(&b_cols[i], &cols[j]);
                    let (head, tail) = cols.split_at_mut(j);
                    for (x, y) in tail[0].iter_mut().zip(&head[i]) {
                        *x -= c * y;
                    }
                    let (bhead, btail) = b_cols.split_at_mut(j);
                    for (x, y) in btail[0].iter_mut().zip(&bhead[i]) {
                        *x -= c * y;
                    }
                }
            }
            let norm2 = dot(&cols[j], &b_cols[j]);
            if norm2 > 1e-24 {
                let s = 1.0 / norm2.sqrt();
                for x in cols[j].iter_mut() {
                    *x *= s;
                }
                for x in b_cols[j].iter_mut() {
                    *x *= s;
                }
                break;
            }
            attempts += 1;
            assert!(attempts < 8, "cannot complete a B-orthonormal basis");
            for x in cols[j].iter_mut() {
                *x = rng.gen_range(-1.0..1.0);
            }
            let col = cols[j].clone();
            b.apply(&col, &mut b_cols[j]);
            let _ = n;
        }
    }
}

/// Smallest `count` eigenpairs of A x = ν B x by block subspace iteration on
/// the cached Cholesky of A, with Rayleigh-Ritz extraction.
pub(crate) fn subspace_smallest(
    ops: &Operators,
    b: &PencilRhs,
    count: usize,
    tol: f64,
    max_sweeps: usize,
    seed: u64,
    warm: Option<&[Vec<f64>]>,
) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<f64>, usize)> {
    let n = ops.stiffness.n;
    let count = count.min(n);
    let kb = (count + 4).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(kb);
    if let Some(warm) = warm {
        for c in warm.iter().take(kb) {
            if c.len() == n {
                cols.push(c.clone());
            }
        }
    }
    while cols.len() < kb {
        cols.push((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
    }
    let mut b_cols: Vec<Vec<f64>> = cols
        .iter()
        .map(|c| {
            let mut out = Vec::new();
            b.apply(c, &mut out);
            out
        })
        .collect();
    b_orthonormalize(&mut cols, &mut b_cols, b, &mut rng);

    let mut nus = vec![0.0; kb];
    let mut residuals = vec![f64::INFINITY; kb];
    let mut sweeps_used = 0;
    for sweep in 1..=max_sweeps {
        sweeps_used = sweep;
        // power step on A⁻¹ B
        for j in 0..kb {
            cols[j] = ops.chol.solve(&b_cols[j]);
            let col = cols[j].clone();
            b.apply(&col, &mut b_cols[j]);
        }
        b_orthonormalize(&mut cols, &mut b_cols, b, &mut rng);
        // Rayleigh-Ritz on the B-orthonormal block
        let a_cols: Vec<Vec<f64>> = cols
            .iter()
            .map(|c| {
                let mut out = vec![0.0; n];
                ops.stiffness.matvec(c, &mut out);
                out
            })
            .collect();
        let a_r = DMatrix::from_fn(kb, kb, |i, j| dot(&cols[i], &a_cols[j]));
        let a_r = 0.5 * (&a_r + a_r.transpose());
        let eig = SymmetricEigen::new(a_r);
        let mut order: Vec<usize> = (0..kb).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
        let rotate = |src: &[Vec<f64>]| -> Vec<Vec<f64>> {
            order
                .iter()
                .map(|&col_idx| {
                    let u = eig.eigenvectors.column(col_idx);
                    let mut out = vec![0.0; n];
                    for (src_col, &coef) in src.iter().zip(u.iter()) {
                        for (o, v) in out.iter_mut().zip(src_col) {
                            *o += coef * v;
                        }
                    }
                    out
                })
                .collect()
        };
        let new_cols = rotate(&cols);
        let new_b = rotate(&b_cols);
        let new_a = rotate(&a_cols);
        cols = new_cols;
        b_cols = new_b;
        for (slot, &idx) in nus.iter_mut().zip(&order) {
            *slot = eig.eigenvalues[idx];
        }
        let mut worst = 0.0f64;
        for j in 0..count {
            let mut r2 = 0.0;
            let mut bn2 = 0.0;
            for i in 0..n {
                let r = new_a[j][i] - nus[j] * b_cols[j][i];
                r2 += r * r;
                bn2 += b_cols[j][i] * b_cols[j][i];
            }
            residuals[j] = r2.sqrt() / (nus[j].abs() * bn2.sqrt()).max(1e-300);
            worst = worst.max(residuals[j]);
        }
        if worst <= tol {
            break;
        }
    }
    nus.truncate(count);
    cols.truncate(count);
    residuals.truncate(count);
    Ok((nus, cols, residuals, sweeps_used))
}

/// Fix the sign of an eigenvector deterministically: the entry of largest
/// magnitude (lowest index on ties) is made positive.
fn canonical_sign(v: &mut [f64]) {
    let mut best = 0usize;
    let mut best_abs = -1.0f64;
    for (i, &x) in v.iter().enumerate() {
        if x.abs() > best_abs + 1e-300 {
            best_abs = x.abs();
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// Spectrum of the constrained linearization at a solved state.
pub fn eigenpairs(
    mesh: &Mesh,
    ops: &Operators,
    cfg: &PlasmaConfig,
    ecfg: &EigenConfig,
    state: &PlasmaState,
    warm: Option<&SpectrumResult>,
) -> Result<SpectrumResult> {
    let m_w = assemble_weighted_mass(mesh, Some(&state.weight));
    let w = weighted_load(mesh, &state.weight);
    let b = PencilRhs {
        m_w: &m_w,
        rank_one: Some((&w, 1.0 / state.m_lambda)),
    };
    let warm_cols: Option<Vec<Vec<f64>>> =
        warm.map(|s| s.phis.iter().map(|f| f.interior().to_vec()).collect());
    let (nus, mut vecs, eigen_residuals, sweeps) = subspace_smallest(
        ops,
        &b,
        ecfg.count,
        ecfg.tol,
        ecfg.max_sweeps,
        ecfg.seed,
        warm_cols.as_deref(),
    )?;
    let scale = nus.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if nus.iter().any(|&nu| nu.abs() < 1e-12 * scale.max(1.0)) {
        return Err(Error::EigenFailure(
            "resonant pencil: a generalized eigenvalue vanishes".into(),
        ));
    }
    for v in vecs.iter_mut() {
        canonical_sign(v);
    }
    let lp = state.lambda * cfg.p;
    let sigmas: Vec<f64> = nus.iter().map(|nu| nu - lp).collect();
    let phis: Vec<Field> = vecs
        .into_iter()
        .map(|v| Field::from_interior(mesh, v))
        .collect();
    let mut means = Vec::with_capacity(phis.len());
    let mut psi_projections = Vec::with_capacity(phis.len());
    let mut identity_residuals = Vec::with_capacity(phis.len());
    let mut identity_rel_residuals = Vec::with_capacity(phis.len());
    let mean_psi = state.mean(mesh, &state.psi);
    let psi_norm = state.inner(mesh, &state.psi, &state.psi).max(0.0).sqrt();
    let lhs_coef = state.alpha + state.lambda * mean_psi;
    for (phi, &sigma) in phis.iter().zip(&sigmas) {
        let mean_phi = state.mean(mesh, phi);
        let proj = state.inner(mesh, &state.psi, phi) - mean_psi * mean_phi;
        let rhs_coef = state.lambda * (cfg.p - 1.0) + sigma;
        let defect = lhs_coef * mean_phi - rhs_coef * proj;
        let phi_norm = state.inner(mesh, phi, phi).max(0.0).sqrt();
        let term_scale = lhs_coef.abs() * phi_norm + rhs_coef.abs() * psi_norm * phi_norm;
        means.push(mean_phi);
        psi_projections.push(proj);
        identity_residuals.push(defect.abs());
        identity_rel_residuals.push(defect.abs() / term_scale.max(1e-300));
    }
    Ok(SpectrumResult {
        sigmas,
        nus,
        phis,
        means,
        psi_projections,
        identity_residuals,
        identity_rel_residuals,
        eigen_residuals,
        sweeps,
    })
}

/// Dense cross-check of the pencil eigenvalues, restricted to small meshes.
pub fn dense_eigen_oracle(
    mesh: &Mesh,
    ops: &Operators,
    state: &PlasmaState,
    count: usize,
) -> Result<Vec<f64>> {
    let n = mesh.interior_count();
    if n > 450 {
        return Err(Error::Internal(format!(
            "dense oracle limited to 450 unknowns, mesh has {n}"
        )));
    }
    let m_w = assemble_weighted_mass(mesh, Some(&state.weight));
    let w = weighted_load(mesh, &state.weight);
    let a = DMatrix::from_fn(n, n, |i, j| ops.stiffness.get(i, j));
    let mut b = DMatrix::from_fn(n, n, |i, j| m_w.get(i, j));
    for i in 0..n {
        for j in 0..n {
            b[(i, j)] -= w[i] * w[j] / state.m_lambda;
        }
    }
    let chol = nalgebra::Cholesky::new(b)
        .ok_or_else(|| Error::EigenFailure("pencil right side is not positive definite".into()))?;
    let l = chol.l();
    let identity = DMatrix::<f64>::identity(n, n);
    let l_inv = l
        .solve_lower_triangular(&identity)
        .ok_or_else(|| Error::EigenFailure("triangular solve failed".into()))?;
    let c = &l_inv * a * l_inv.transpose();
    let c = 0.5 * (&c + c.transpose());
    let eig = SymmetricEigen::new(c);
    let mut nus: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nus.sort_by(|a, b| a.partial_cmp(b).unwrap());
    nus.truncate(count);
    Ok(nus)
}

#[derive(Clone, Debug)]
pub struct SobolevResult {
    pub t: f64,
    /// Λ(Ω, t) = inf ‖∇u‖² / ‖u‖_t² over H¹₀.
    pub value: f64,
    pub iterations: usize,
    /// Relative stagnation of the Rayleigh quotient at exit.
    pub defect: f64,
}

/// Optimal constant of ‖u‖_t² ≤ Λ⁻¹ ‖∇u‖² on the mesh domain.
///
/// For t = 2 this is the first Dirichlet eigenvalue; for t ≠ 2 a damped
/// normalized fixed-point sweep u ← G[u^{t-1}] descends the quotient.
pub fn sobolev_constant(mesh: &Mesh, ops: &Operators, t: f64) -> Result<SobolevResult> {
    if !(t >= 1.0) {
        return Err(Error::Usage(format!("Sobolev exponent t = {t} must be ≥ 1")));
    }
    if t == 2.0 {
        let mass = assemble_weighted_mass(mesh, None);
        let b = PencilRhs {
            m_w: &mass,
            rank_one: None,
        };
        let (nus, _, resid, iters) = subspace_smallest(ops, &b, 1, 1e-12, 600, 11, None)?;
        return Ok(SobolevResult {
            t,
            value: nus[0],
            iterations: iters,
            defect: resid[0],
        });
    }
    let lt_norm = |mesh: &Mesh, u: &Field| -> f64 {
        let uq = QuadField::from_field(mesh, u);
        integrate_quad(mesh, &uq.map(|v| v.abs().powf(t))).powf(1.0 / t)
    };
    let mut u = ops.green_solve(mesh, &QuadField::constant(mesh, 1.0))?;
    let nrm = lt_norm(mesh, &u);
    u.scale(1.0 / nrm);
    let mut rayleigh = ops.energy_product(&u, &u);
    let mut defect = f64::INFINITY;
    let mut iterations = 0;
    let damping = 0.7;
    for iter in 1..=5000 {
        iterations = iter;
        let uq = QuadField::from_field(mesh, &u);
        let f = uq.map(|v| v.max(0.0).powf(t - 1.0));
        let mut v = ops.green_solve(mesh, &f)?;
        let vn = lt_norm(mesh, &v);
        v.scale(1.0 / vn);
        let mut next = u.clone();
        next.scale(1.0 - damping);
        next.axpy(damping, &v);
        let nn = lt_norm(mesh, &next);
        next.scale(1.0 / nn);
        let r_new = ops.energy_product(&next, &next);
        defect = (r_new - rayleigh).abs() / rayleigh.abs().max(1e-300);
        u = next;
        rayleigh = r_new;
        if defect < 1e-13 {
            break;
        }
    }
    Ok(SobolevResult {
        t,
        value: rayleigh,
        iterations,
        defect,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, DomainSpec};
    use crate::newton::{base_state, newton_solve};
    use std::f64::consts::PI;

    fn solved_disk(res: u32, lambda: f64) -> (Mesh, Operators, PlasmaConfig, PlasmaState) {
        let mesh = build_mesh(&DomainSpec::disk(), res).unwrap();
        let ops = Operators::assemble(&mesh).unwrap();
        let cfg = PlasmaConfig::new(2.0);
        let state = if lambda == 0.0 {
            base_state(&mesh, &ops, &cfg).unwrap()
        } else {
            newton_solve(&mesh, &ops, &cfg, lambda, 1.0, Field::zeros(&mesh)).unwrap()
        };
        (mesh, ops, cfg, state)
    }

    #[test]
    fn subspace_matches_dense_oracle() {
        let (mesh, ops, cfg, state) = solved_disk(16, 1.0);
        let ecfg = EigenConfig::default();
        let spec = eigenpairs(&mesh, &ops, &cfg, &ecfg, &state, None).unwrap();
        let dense = dense_eigen_oracle(&mesh, &ops, &state, ecfg.count).unwrap();
        for (k, (&nu, &nu_dense)) in spec.nus.iter().zip(&dense).enumerate() {
            let rel = (nu - nu_dense).abs() / nu_dense.abs();
            assert!(rel < 1e-8, "mode {k}: sparse {nu} vs dense {nu_dense}");
        }
    }

    #[test]
    fn eigenvectors_are_pencil_orthonormal() {
        let (mesh, ops, cfg, state) = solved_disk(16, 0.8);
        let spec = eigenpairs(&mesh, &ops, &cfg, &EigenConfig::default(), &state, None).unwrap();
        let m_w = assemble_weighted_mass(&mesh, Some(&state.weight));
        let w = weighted_load(&mesh, &state.weight);
        let b = PencilRhs {
            m_w: &m_w,
            rank_one: Some((&w, 1.0 / state.m_lambda)),
        };
        for i in 0..spec.phis.len() {
            let mut bj = Vec::new();
            for j in 0..spec.phis.len() {
                b.apply(spec.phis[j].interior(), &mut bj);
                let prod = dot(spec.phis[i].interior(), &bj);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (prod - expect).abs() < 1e-9,
                    "B-product ({i},{j}) = {prod}"
                );
            }
        }
        // B-orthogonality is exactly the weighted orthogonality of centered
        // modes: ⟨[φ_i][φ_j]⟩ = (φ_iᵀ B φ_j)/m
        let phi0 = &spec.phis[0];
        let phi1 = &spec.phis[1];
        let centered = state.inner(&mesh, phi0, phi1)
            - state.mean(&mesh, phi0) * state.mean(&mesh, phi1);
        assert!(centered.abs() < 1e-9 / state.m_lambda);
    }

    #[test]
    fn mean_identity_holds_on_solved_states() {
        for lambda in [0.0, 0.6, 1.4] {
            let (mesh, ops, cfg, state) = solved_disk(20, lambda);
            let spec =
                eigenpairs(&mesh, &ops, &cfg, &EigenConfig::default(), &state, None).unwrap();
            for (k, &defect) in spec.identity_residuals.iter().enumerate() {
                assert!(
                    defect < 1e-8,
                    "λ = {lambda}, mode {k}: identity defect {defect}"
                );
            }
            // every σ stays strictly above -λp, so no resonance can occur
            for &nu in &spec.nus {
                assert!(nu > 0.0);
            }
        }
    }

    #[test]
    fn warm_start_reuses_the_basis() {
        let (mesh, ops, cfg, state) = solved_disk(16, 0.5);
        let ecfg = EigenConfig::default();
        let cold = eigenpairs(&mesh, &ops, &cfg, &ecfg, &state, None).unwrap();
        let state2 = newton_solve(&mesh, &ops, &cfg, 0.55, state.alpha, state.psi.clone()).unwrap();
        let warm = eigenpairs(&mesh, &ops, &cfg, &ecfg, &state2, Some(&cold)).unwrap();
        assert!(warm.sweeps <= cold.sweeps, "warm {} vs cold {}", warm.sweeps, cold.sweeps);
        for (a, b) in cold.nus.iter().zip(&warm.nus) {
            assert!((a - b).abs() / a < 0.2, "eigenvalues drifted: {a} vs {b}");
        }
    }

    #[test]
    fn disk_first_dirichlet_eigenvalue() {
        let mesh = build_mesh(&DomainSpec::disk(), 48).unwrap();
        let ops = Operators::assemble(&mesh).unwrap();
        let got = sobolev_constant(&mesh, &ops, 2.0).unwrap();
        let exact = PI * 2.404825557695773f64.powi(2);
        let rel = (got.value - exact).abs() / exact;
        assert!(rel < 5e-3, "Λ(D,2) = {} vs πj₀₁² = {exact}", got.value);
    }

    #[test]
    fn square_first_dirichlet_eigenvalue() {
        let mesh = build_mesh(&DomainSpec::square(), 48).unwrap();
        let ops = Operators::assemble(&mesh).unwrap();
        let got = sobolev_constant(&mesh, &ops, 2.0).unwrap();
        let exact = 2.0 * PI * PI;
        let rel = (got.value - exact).abs() / exact;
        assert!(rel < 5e-3, "Λ(□,2) = {} vs 2π² = {exact}", got.value);
    }

    #[test]
    fn sobolev_constants_decrease_in_t() {
        let mesh = build_mesh(&DomainSpec::disk(), 32).unwrap();
        let ops = Operators::assemble(&mesh).unwrap();
        let l2 = sobolev_constant(&mesh, &ops, 2.0).unwrap().value;
        let l3 = sobolev_constant(&mesh, &ops, 3.0).unwrap().value;
        let l4 = sobolev_constant(&mesh, &ops, 4.0).unwrap().value;
        assert!(l2 > l3 && l3 > l4, "Λ chain: {l2}, {l3}, {l4}");
        assert!(l4 > 10.0 && l2 < 20.0, "values out of plausible range");
    }

    #[test]
    fn eigenvalues_refine_toward_dense_limit() {
        // the identity defect must be solver-level small even at λ = 0
        let (mesh, ops, cfg, state) = solved_disk(12, 0.0);
        let spec = eigenpairs(&mesh, &ops, &cfg, &EigenConfig::default(), &state, None).unwrap();
        let dense = dense_eigen_oracle(&mesh, &ops, &state, 6).unwrap();
        for (nu, nd) in spec.nus.iter().zip(&dense) {
            assert!((nu - nd).abs() < 1e-8 * nd);
        }
        for d in &spec.identity_residuals {
            assert!(*d < 1e-9);
        }
    }
}
