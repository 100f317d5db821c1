use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use weakinv_core::actions::{GroupAction, ManifoldDescriptor, ManifoldPoint, VectorFieldM};
use weakinv_core::cascade::{check_group_affine, reconstruct, BundleChart};
use weakinv_core::flows::{FlowHandle, IntegratorConfig};
use weakinv_core::invariance::{classify_vector_field, residual_field, solve_xi_w, Classification};
use weakinv_core::lie::{matrix::expm, AlgebraVector, GroupElement, LieGroup, VectorFieldG};
use weakinv_core::{SamplingPlan, Tolerances};

fn affine_r3() -> VectorFieldM {
    let a = DMatrix::from_row_slice(3, 3, &[0.2, -0.5, 0.1, 0.5, 0.1, 0.0, 0.0, 0.3, -0.2]);
    VectorFieldM::affine(a, DVector::from_column_slice(&[1.0, -0.5, 0.25])).unwrap()
}

fn coords3() -> impl Strategy<Value = [f64; 3]> {
    [-1.5..1.5f64, -1.5..1.5f64, -1.5..1.5f64]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn flow_composes(s in -0.7..0.7f64, t in -0.7..0.7f64, p in coords3()) {
        let flow = FlowHandle::new(affine_r3(), IntegratorConfig::default()).unwrap();
        let m = ManifoldDescriptor::euclidean(3);
        let p = ManifoldPoint::from_slice(&m, &p).unwrap();
        let two = flow.evaluate(s, &flow.evaluate(t, &p).unwrap()).unwrap();
        let one = flow.evaluate(s + t, &p).unwrap();
        prop_assert!(two.distance(&one) < 1e-9);
    }

    #[test]
    fn flow_at_zero_is_identity(p in coords3()) {
        let flow = FlowHandle::new(affine_r3(), IntegratorConfig::default()).unwrap();
        let m = ManifoldDescriptor::euclidean(3);
        let p = ManifoldPoint::from_slice(&m, &p).unwrap();
        let q = flow.evaluate(0.0, &p).unwrap();
        prop_assert_eq!(q.coords(), p.coords());
    }

    // For V = Ap + b under full translation, Δ(x)(p) = A x.
    #[test]
    fn affine_residual_is_linear_in_translation(x in coords3(), p in coords3()) {
        let v = affine_r3();
        let action = GroupAction::translation(3, vec![0, 1, 2]).unwrap();
        let g = GroupElement::from_coords(action.group(), &x).unwrap();
        let p = ManifoldPoint::from_slice(action.manifold(), &p).unwrap();
        let r = residual_field(&v, &action, &g, &p).unwrap();
        let a = DMatrix::from_row_slice(3, 3, &[0.2, -0.5, 0.1, 0.5, 0.1, 0.0, 0.0, 0.3, -0.2]);
        let oracle = a * DVector::from_column_slice(&x);
        prop_assert!((r.dir() - oracle).norm() < 1e-12);
    }

    #[test]
    fn translation_chart_round_trip(p in [-5.0..5.0f64, -5.0..5.0, -5.0..5.0, -5.0..5.0]) {
        let action = GroupAction::translation(4, vec![1, 3]).unwrap();
        let chart = BundleChart::translation(&action).unwrap();
        let p = ManifoldPoint::from_slice(action.manifold(), &p).unwrap();
        let (g, y) = chart.decompose(&p).unwrap();
        prop_assert!(reconstruct(&chart, &y, &g).unwrap().distance(&p) < 1e-12);
    }

    #[test]
    fn radial_chart_round_trip(r in 0.01..10.0f64, theta in -3.1..3.1f64) {
        let action = GroupAction::rotation(LieGroup::so2()).unwrap();
        let chart = BundleChart::radial(&action).unwrap();
        let p = ManifoldPoint::from_slice(action.manifold(), &[r * theta.cos(), r * theta.sin()]).unwrap();
        let (g, y) = chart.decompose(&p).unwrap();
        prop_assert!((y.coords()[0] - r).abs() < 1e-12);
        prop_assert!(reconstruct(&chart, &y, &g).unwrap().distance(&p) < 1e-8);
    }

    #[test]
    fn so3_chart_round_trip(c in coords3()) {
        let group = LieGroup::so3();
        let action = GroupAction::left_translation(group.clone());
        let chart = BundleChart::transitive(&action).unwrap();
        let g = GroupElement::from_coords(&group, &c).unwrap();
        let p = ManifoldPoint::from_group_element(action.manifold(), &g).unwrap();
        let (h, y) = chart.decompose(&p).unwrap();
        prop_assert_eq!(y.coords().len(), 0);
        prop_assert!(reconstruct(&chart, &y, &h).unwrap().distance(&p) < 1e-12);
    }

    // Strongly invariant fields pass the weak test too, with ξ^W = 0.
    #[test]
    fn strong_implies_weak(alpha in -2.0..2.0f64, beta in -2.0..2.0f64, theta in -3.0..3.0f64) {
        let k = DMatrix::from_row_slice(2, 2, &[alpha, -beta, beta, alpha]);
        let v = VectorFieldM::affine(k, DVector::zeros(2)).unwrap();
        let action = GroupAction::rotation(LieGroup::so2()).unwrap();
        let g = GroupElement::from_coords(action.group(), &[theta]).unwrap();
        let plan = SamplingPlan { min_radius: 0.5, ..SamplingPlan::default() };
        let points = plan.manifold_points(action.manifold()).unwrap();
        let sol = solve_xi_w(&v, &action, &g, &points).unwrap();
        prop_assert!(sol.xi.coords().norm() < 1e-12);
        prop_assert!(sol.consistency < 1e-12);
        let report = classify_vector_field(&v, &action, &plan, &Tolerances::default()).unwrap();
        prop_assert_eq!(report.classification, Classification::Strong);
    }

    #[test]
    fn label_is_seed_stable(seed in 0u64..1000) {
        let action = GroupAction::translation(3, vec![0, 1, 2]).unwrap();
        let plan = SamplingPlan::default().with_seed(seed);
        let report = classify_vector_field(&affine_r3(), &action, &plan, &Tolerances::default()).unwrap();
        prop_assert_eq!(report.classification, Classification::Weak);
    }

    // Inner derivations are complete: φ^W_t(g) = e^{tD} g e^{−tD} for every t.
    #[test]
    fn derivation_flow_is_complete(t in -10.0..10.0f64, c in coords3()) {
        let group = LieGroup::so3();
        let d = group.hat(&DVector::from_column_slice(&[0.3, -0.2, 0.5]));
        let w = VectorFieldG::inner_derivation(&group, d.clone()).unwrap();
        let flow = FlowHandle::new(w, IntegratorConfig::group_default().with_step(1e-2)).unwrap();
        let g = GroupElement::from_coords(&group, &c).unwrap();
        let out = flow.evaluate_group(t, &g).unwrap();
        let oracle = expm(&(&d * t)) * g.matrix() * expm(&(&d * -t));
        prop_assert!((out.matrix() - oracle).norm() < 1e-8);
    }

    #[test]
    fn derivation_plus_left_invariant_is_group_affine(d in coords3(), u in coords3()) {
        let group = LieGroup::so3();
        let d = group.hat(&DVector::from_column_slice(&d));
        let u = AlgebraVector::from_slice(&group, &u).unwrap();
        let v = VectorFieldG::group_affine(&group, d, u).unwrap();
        prop_assert!(check_group_affine(&v, &SamplingPlan::default()).unwrap().max < 1e-12);
    }
}
