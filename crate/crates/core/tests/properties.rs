use incremental_lpv::differential::{cos_segment_average, finite_difference_form, validate_embedding, LtiPlant, NonlinearPlant};
use incremental_lpv::example::{default_weights, differential_embedding, incremental_generalized_plant, ExamplePlant};
use incremental_lpv::linalg::Mat;
use incremental_lpv::lpv_model::AffineMatrixFunction;
use incremental_lpv::lti::StateSpace;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Mat> {
    proptest::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |v| Mat::from_row_slice(rows, cols, &v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn lti_differential_form_is_the_realization(
        a in matrix(3, 3), b in matrix(3, 2), c in matrix(2, 3), d in matrix(2, 2),
        x in proptest::collection::vec(-5.0f64..5.0, 3),
        v in proptest::collection::vec(-5.0f64..5.0, 2),
    ) {
        let plant = LtiPlant::new(StateSpace::new(a.clone(), b.clone(), c.clone(), d.clone()).unwrap(), 1, 1).unwrap();
        let j = plant.jacobians(&x, &v);
        prop_assert_eq!((j.a, j.b, j.c, j.d), (a, b, c, d));
    }

    #[test]
    fn generalized_output_is_linear_in_w(
        x in proptest::collection::vec(-3.0f64..3.0, 3),
        w in -5.0f64..5.0, w2 in -5.0f64..5.0, u in -5.0f64..5.0,
    ) {
        let gp = incremental_generalized_plant(&default_weights(), 200).unwrap();
        let mut state = vec![0.0; gp.n_x()];
        state[..3.min(gp.n_x())].copy_from_slice(&x[..3.min(gp.n_x())]);
        let y1 = gp.output(&state, &[w, u]);
        let y2 = gp.output(&state, &[w2, u]);
        let dyw = gp.jacobians(&state, &[w, u]).d;
        for i in 0..y1.len() {
            let expected = dyw[(i, 0)] * (w - w2);
            prop_assert!((y1[i] - y2[i] - expected).abs() <= 1e-12 * (1.0 + w.abs() + w2.abs()));
        }
    }

    #[test]
    fn generalized_jacobian_matches_differences(x in proptest::collection::vec(-3.0f64..3.0, 2)) {
        let gp = incremental_generalized_plant(&default_weights(), 200).unwrap();
        let mut state = vec![0.1; gp.n_x()];
        state[..2].copy_from_slice(&x);
        let exact = gp.jacobians(&state, &[0.0, 0.0]);
        let fd = finite_difference_form(&gp, &state, &[0.0, 0.0], 1e-6);
        let rel = (&exact.a - &fd.a).amax() / exact.a.amax().max(1.0);
        prop_assert!(rel <= 1e-5, "{rel:e}");
    }

    #[test]
    fn cosine_average_is_symmetric_and_bounded(a in -50.0f64..50.0, b in -50.0f64..50.0) {
        let ab = cos_segment_average(a, b);
        prop_assert_eq!(ab, cos_segment_average(b, a));
        prop_assert!(ab.abs() <= 1.0);
    }

    /// Reported errors never grow when the sample set shrinks to a prefix.
    #[test]
    fn embedding_error_monotone_in_samples(small in 1usize..200, extra in 0usize..200) {
        let emb = differential_embedding().unwrap();
        let mut candidate = emb.lpv.clone();
        let coeffs: Vec<Mat> = candidate.a.coefficients().iter().map(|m| m * 1.01).collect();
        candidate.a = AffineMatrixFunction::new(candidate.a.constant_term().clone(), coeffs).unwrap();
        let plant = ExamplePlant::default();
        let few = validate_embedding(&plant, emb.map.as_ref(), &candidate, small).unwrap();
        let many = validate_embedding(&plant, emb.map.as_ref(), &candidate, small + extra).unwrap();
        prop_assert!(few.a_error <= many.a_error);
        prop_assert!(!many.pass || few.pass);
    }
}
