//! Property tests for structural invariants that must hold at any
//! admissible parameter value, not just at hand-picked ones.

use plasma_branch::dual::{to_dual, to_primal};
use plasma_branch::error::Error;
use plasma_branch::geometry::{build_mesh, DomainKind, DomainSpec, Mesh};
use plasma_branch::newton::{base_state, newton_solve, PlasmaConfig};
use plasma_branch::operators::{integrate_quad, Operators, QuadField};
use plasma_branch::report::RunConfig;
use proptest::prelude::*;
use std::sync::OnceLock;

fn disk8() -> &'static (Mesh, Operators) {
    static CELL: OnceLock<(Mesh, Operators)> = OnceLock::new();
    CELL.get_or_init(|| {
        let mesh = build_mesh(&DomainSpec::disk(), 8).expect("disk mesh");
        let ops = Operators::assemble(&mesh).expect("operators");
        (mesh, ops)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn weighted_mean_centering_holds_along_the_branch(
        lambda in 0.0f64..2.0,
        p in 1.3f64..3.0,
        coef in prop::array::uniform3(-1.0f64..1.0),
    ) {
        let (mesh, ops) = disk8();
        let pcfg = PlasmaConfig::new(p);
        let base = base_state(mesh, ops, &pcfg).unwrap();
        let state = newton_solve(mesh, ops, &pcfg, lambda, base.alpha, base.psi).unwrap();
        let eta = QuadField::from_fn(mesh, |x| {
            coef[0] * x[0] + coef[1] * x[1] + coef[2] * x[0] * x[1]
        });
        let mean = integrate_quad(mesh, &state.weight.zip(&eta, |w, v| w * v)) / state.m_lambda;
        let centered = eta.map(|v| v - mean);
        let residual =
            integrate_quad(mesh, &state.weight.zip(&centered, |w, v| w * v)) / state.m_lambda;
        prop_assert!(
            residual.abs() <= 1e-12 * (1.0 + mean.abs()),
            "centered mean {residual:.3e} at λ = {lambda}, p = {p}"
        );
    }
}

proptest! {
    #[test]
    fn dual_parameters_round_trip(
        lambda in 0.05f64..20.0,
        alpha in 0.01f64..5.0,
        p in 1.2f64..3.5,
        psi in prop::collection::vec(0.0f64..0.5, 1..12),
    ) {
        let pcfg = PlasmaConfig::new(p);
        let (i_param, gamma) = to_dual(&pcfg, lambda, alpha);
        let v: Vec<f64> = psi.iter().map(|s| gamma + i_param * s).collect();
        let (lambda_back, alpha_back, psi_back) = to_primal(&pcfg, i_param, gamma, &v);
        prop_assert!((lambda_back - lambda).abs() <= 1e-10 * lambda);
        prop_assert!((alpha_back - alpha).abs() <= 1e-10 * alpha);
        for (got, want) in psi_back.iter().zip(&psi) {
            prop_assert!((got - want).abs() <= 1e-9 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn perturbed_disks_keep_unit_measure_and_orientation(
        seed in 0u64..1_000_000,
        amplitude in 0.0f64..0.1,
        nmodes in 1usize..4,
    ) {
        let modes: Vec<u32> = (2..2 + nmodes as u32).collect();
        let spec = DomainSpec::new(DomainKind::PerturbedDisk { amplitude, modes, seed });
        match build_mesh(&spec, 10) {
            Ok(mesh) => {
                prop_assert!(
                    (mesh.measure() - 1.0).abs() < 1e-9,
                    "measure {} off unit", mesh.measure()
                );
                for cell in &mesh.cells {
                    prop_assert!(cell.measure > 0.0, "inverted cell");
                }
                prop_assert!(mesh.interior_count() > 0);
                prop_assert!(mesh.interior_count() < mesh.node_count());
            }
            // rejecting an overly large perturbation is the contract,
            // silently folding the mesh would be the bug
            Err(Error::PerturbationTooLarge(_)) => {}
            Err(e) => return Err(TestCaseError::fail(format!("unexpected error: {e}"))),
        }
    }

    #[test]
    fn config_hash_ignores_presentation_fields(
        p in 1.5f64..3.0,
        res in 8u32..64,
        verbosity in 0u8..3,
    ) {
        let a = RunConfig::parse(&format!("{{\"p\": {p}, \"resolution\": {res}}}")).unwrap();
        let b = RunConfig::parse(&format!(
            "{{ \"resolution\": {res}, \"verbosity\": {verbosity}, \
             \"outputs\": \"elsewhere\", \"p\": {p} }}"
        ))
        .unwrap();
        prop_assert_eq!(a.hash(), b.hash());
    }
}
