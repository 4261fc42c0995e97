mod common;

use std::sync::{Arc, LazyLock};

use common::{random_vector, rng};
use nalgebra::DVector;
use proptest::prelude::*;
use satwave_core::feedback::{validate_assumptions, BoundaryFeedback, Nonlinearity};
use satwave_core::stepper::{random_strong_data, solve_resolvent, state_norm, theta_apply, SolverConfig, State};
use satwave_core::{build_annulus_mesh, build_unit_square_mesh, DiscreteOperators, Mesh, Region};

static ANNULUS: LazyLock<Arc<DiscreteOperators>> =
    LazyLock::new(|| Arc::new(DiscreteOperators::assemble(build_annulus_mesh(0.5, 1.0, 0.12).unwrap()).unwrap()));

fn config() -> ProptestConfig {
    ProptestConfig { cases: 48, ..ProptestConfig::default() }
}

fn check_mesh(mesh: &Mesh) -> std::result::Result<(), TestCaseError> {
    for t in 0..mesh.triangles().len() {
        prop_assert!(mesh.triangle_area(t) > 0.0);
    }
    for e in mesh.boundary_edges() {
        let [a, b] = e.nodes;
        let (pa, pb) = (mesh.nodes()[a], mesh.nodes()[b]);
        let tangent = [pb[0] - pa[0], pb[1] - pa[1]];
        let n = e.normal;
        prop_assert!((n[0].hypot(n[1]) - 1.0).abs() < 1e-12);
        prop_assert!((n[0] * tangent[0] + n[1] * tangent[1]).abs() < 1e-12 * mesh.edge_length(e));
    }
    Ok(())
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn square_mesh_tiles_the_unit_square(n in 2usize..24) {
        let mesh = build_unit_square_mesh(n).unwrap();
        check_mesh(&mesh)?;
        prop_assert!((mesh.area() - 1.0).abs() < 1e-12);
        prop_assert_eq!(mesh.boundary_edges().len(), 4 * n);
        for e in mesh.boundary_edges() {
            let m = mesh.edge_midpoint(e);
            prop_assert!(e.normal[0] * (m[0] - 0.5) + e.normal[1] * (m[1] - 0.5) > 0.0);
        }
    }

    #[test]
    fn annulus_mesh_is_consistent(ri in 0.2f64..0.6, width in 0.3f64..0.8, res in 0.08f64..0.2) {
        let ro = ri + width;
        let mesh = build_annulus_mesh(ri, ro, res).unwrap();
        check_mesh(&mesh)?;
        let exact = std::f64::consts::PI * (ro * ro - ri * ri);
        prop_assert!(mesh.area() < exact && mesh.area() > 0.9 * exact);
        for e in mesh.boundary_edges() {
            let m = mesh.edge_midpoint(e);
            let radial = e.normal[0] * m[0] + e.normal[1] * m[1];
            match e.region {
                Region::Free => prop_assert!(radial < 0.0),
                Region::Actuated => prop_assert!(radial > 0.0),
            }
        }
        prop_assert!(mesh.count_region(Region::Free) > 0 && mesh.count_region(Region::Actuated) > 0);
    }

    #[test]
    fn mesh_json_round_trip(n in 2usize..10) {
        let mesh = build_unit_square_mesh(n).unwrap();
        let back = Mesh::from_json(&mesh.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, mesh);
    }

    #[test]
    fn saturations_satisfy_assumptions(threshold in 1e-3f64..100.0, slope in 0.1f64..10.0) {
        let grid: Vec<f64> = (-400..=400).map(|k| k as f64 * threshold / 100.0).collect();
        prop_assert!(validate_assumptions(&Nonlinearity::saturation(threshold).unwrap(), &grid).passed());
        prop_assert!(validate_assumptions(&Nonlinearity::scaled_saturation(threshold, slope).unwrap(), &grid).passed());
    }

    #[test]
    fn boundary_pairing_is_nonnegative(seed in any::<u64>(), threshold in 1e-2f64..10.0, scale in 1e-3f64..1e3) {
        let ops = &*ANNULUS;
        let fb = BoundaryFeedback::new(ops, Nonlinearity::saturation(threshold).unwrap());
        let b = random_vector(&mut rng(seed), ops.num_boundary()) * scale;
        prop_assert!(fb.pairing(ops, &b) >= 0.0);
    }

    #[test]
    fn theta_is_strongly_monotone(seed in any::<u64>(), lambda in 0.05f64..50.0, threshold in 1e-2f64..10.0) {
        let ops = &*ANNULUS;
        let fb = BoundaryFeedback::new(ops, Nonlinearity::saturation(threshold).unwrap());
        let mut r = rng(seed);
        let v1 = random_vector(&mut r, ops.num_nodes()) * 20.0;
        let v2 = random_vector(&mut r, ops.num_nodes()) * 20.0;
        let dv = &v1 - &v2;
        let lhs = ops.l2_inner(&(theta_apply(ops, &fb, lambda, &v1) - theta_apply(ops, &fb, lambda, &v2)), &dv);
        let modulus = ops.l2_inner(&dv, &dv) / lambda;
        prop_assert!(lhs >= modulus - 1e-10 * modulus.max(1.0), "{} < {}", lhs, modulus);
    }

    #[test]
    fn scaled_resolvent_is_nonexpansive(seed in any::<u64>(), lambda in 0.1f64..20.0, threshold in 1e-2f64..2.0) {
        let ops = &*ANNULUS;
        let fb = BoundaryFeedback::new(ops, Nonlinearity::saturation(threshold).unwrap());
        let cfg = SolverConfig::default();
        let f = random_strong_data(ops, &fb, seed, 3.0);
        let g = random_strong_data(ops, &fb, seed.wrapping_add(1), 3.0);
        let (x, _) = solve_resolvent(ops, &fb, &cfg, lambda, &f.u, &f.v).unwrap();
        let (y, _) = solve_resolvent(ops, &fb, &cfg, lambda, &g.u, &g.v).unwrap();
        let out = state_norm(ops, &x.sub(&y).scale(lambda)).unwrap();
        let inp = state_norm(ops, &f.sub(&g)).unwrap();
        prop_assert!(out <= inp * (1.0 + 1e-10), "{} > {}", out, inp);
    }

    #[test]
    fn energy_is_half_squared_norm_and_scales_quadratically(seed in any::<u64>(), s in -5.0f64..5.0) {
        let ops = &*ANNULUS;
        let mut r = rng(seed);
        let x = State::new(random_vector(&mut r, ops.num_nodes()), random_vector(&mut r, ops.num_nodes()));
        let e = satwave_core::stepper::energy(ops, &x).unwrap();
        let es = satwave_core::stepper::energy(ops, &x.scale(s)).unwrap();
        prop_assert!((es - s * s * e).abs() <= 1e-12 * e.max(1.0) * s * s + 1e-300);
        prop_assert!(e >= 0.0);
    }

    #[test]
    fn phi_vanishes_without_actuation(seed in any::<u64>()) {
        let ops = &*ANNULUS;
        let fb = BoundaryFeedback::with_mask(Nonlinearity::identity(), DVector::zeros(ops.num_boundary())).unwrap();
        let v = random_vector(&mut rng(seed), ops.num_nodes());
        prop_assert_eq!(fb.phi(ops, &v).amax(), 0.0);
    }
}
