//! Property tests for the algebraic invariants that hold on every input,
//! not just the worked examples.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use semiflex::disorder::DisorderModel;
use semiflex::tensor::{op_norm_mat, LinOp, SuperOp};
use semiflex::{RngStream, Rotation, RotationLaw, StreamDomain, UnitVector};

fn haar_rotation(d: usize, seed: u64) -> Rotation {
    let mut rng = RngStream::new(seed, StreamDomain::Thermal, 0);
    RotationLaw::haar(d).unwrap().sample(&mut rng)
}

fn random_matrix(d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = RngStream::new(seed, StreamDomain::Thermal, 1);
    DMatrix::from_fn(d, d, |_, _| rng.gen_normal())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn compose_stays_in_the_group(d in 2usize..5, s1: u64, s2: u64) {
        let a = haar_rotation(d, s1);
        let b = haar_rotation(d, s2);
        let ab = a.compose(&b).unwrap();
        prop_assert!(Rotation::from_matrix(ab.matrix().clone()).is_ok());
    }

    #[test]
    fn compose_is_associative(d in 2usize..5, s1: u64, s2: u64, s3: u64) {
        let (a, b, c) = (haar_rotation(d, s1), haar_rotation(d, s2), haar_rotation(d, s3));
        let left = a.compose(&b).unwrap().compose(&c).unwrap();
        let right = a.compose(&b.compose(&c).unwrap()).unwrap();
        prop_assert!((left.matrix() - right.matrix()).norm() < 1e-12);
    }

    #[test]
    fn apply_is_an_isometry(d in 2usize..6, s1: u64, s2: u64) {
        let g = haar_rotation(d, s1);
        let mut rng = RngStream::new(s2, StreamDomain::Thermal, 2);
        let v = UnitVector::normalized(DVector::from_fn(d, |_, _| rng.gen_normal())).unwrap();
        let w = g.apply(&v).unwrap();
        prop_assert!((w.coords().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kron_composition_identity(d in 2usize..4, s1: u64, s2: u64, s3: u64, s4: u64) {
        // holds for arbitrary linear maps, not just rotations
        let (g1, h1) = (random_matrix(d, s1), random_matrix(d, s2));
        let (g2, h2) = (random_matrix(d, s3), random_matrix(d, s4));
        let lhs = SuperOp::kron(&LinOp::from_matrix(g1.clone()), &LinOp::from_matrix(h1.clone()))
            .unwrap()
            .compose(
                &SuperOp::kron(
                    &LinOp::from_matrix(g2.clone()),
                    &LinOp::from_matrix(h2.clone()),
                )
                .unwrap(),
            )
            .unwrap();
        let rhs =
            SuperOp::kron(&LinOp::from_matrix(&g1 * &g2), &LinOp::from_matrix(&h1 * &h2)).unwrap();
        let scale = 1.0 + rhs.hs_norm();
        prop_assert!((lhs.matrix() - rhs.matrix()).norm() < 1e-11 * scale);
    }

    #[test]
    fn operator_norm_inequalities(d in 2usize..5, s1: u64, s2: u64) {
        let a = random_matrix(d, s1);
        let b = random_matrix(d, s2);
        let (na, nb) = (op_norm_mat(&a), op_norm_mat(&b));
        let ab = &a * &b;
        prop_assert!(op_norm_mat(&ab) <= na * nb + 1e-10);
        prop_assert!(na <= a.norm() + 1e-12);
        prop_assert!(ab.norm() <= na * b.norm() + 1e-10);
    }

    #[test]
    fn kron_norm_bound(d in 2usize..4, s1: u64, s2: u64) {
        let g = random_matrix(d, s1);
        let h = random_matrix(d, s2);
        let k = SuperOp::kron(&LinOp::from_matrix(g.clone()), &LinOp::from_matrix(h.clone()))
            .unwrap();
        prop_assert!(k.op_norm() <= op_norm_mat(&g) * op_norm_mat(&h) + 1e-10);

        // for rotations the bound is attained with value 1
        let gr = haar_rotation(d, s1);
        let hr = haar_rotation(d, s2);
        let k = SuperOp::kron(&gr.as_linop(), &hr.as_linop()).unwrap();
        prop_assert!((k.op_norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn disorder_windows_agree_on_overlaps(
        seed: u64,
        start in 1u64..500,
        len in 1usize..40,
        shift in 0u64..30,
    ) {
        let models = [
            DisorderModel::iid(RotationLaw::haar(2).unwrap(), seed),
            DisorderModel::periodic(
                vec![Rotation::rotation_2d(0.3), Rotation::rotation_2d(-0.9), Rotation::identity(2)],
                true,
                seed,
            )
            .unwrap(),
            DisorderModel::markov(
                vec![Rotation::rotation_2d(0.1), Rotation::rotation_2d(1.5)],
                DMatrix::from_row_slice(2, 2, &[0.6, 0.4, 0.25, 0.75]),
                true,
                seed,
            )
            .unwrap(),
        ];
        for model in models {
            let long = model.window(start, len + shift as usize);
            let tail = model.window(start + shift, len);
            for i in 0..len {
                prop_assert_eq!(long[i + shift as usize].matrix(), tail[i].matrix());
            }
            // shifted views relabel indices
            let viewed = model.shift(shift).window(start, len);
            for i in 0..len {
                prop_assert_eq!(viewed[i].matrix(), tail[i].matrix());
            }
        }
    }

    #[test]
    fn law_spec_json_round_trip_preserves_samples(a in -3.0f64..0.0, width in 0.01f64..3.0, seed: u64) {
        let law = RotationLaw::so2_window(a, a + width).unwrap();
        let spec = semiflex::LawSpec::So2Window { a, b: a + width };
        let text = serde_json::to_string(&spec).unwrap();
        let parsed = RotationLaw::from_json(&text).unwrap();
        let mut r1 = RngStream::new(seed, StreamDomain::Thermal, 7);
        let mut r2 = RngStream::new(seed, StreamDomain::Thermal, 7);
        let direct = law.sample(&mut r1);
        let via_json = parsed.sample(&mut r2);
        prop_assert_eq!(direct.matrix(), via_json.matrix());
    }

    #[test]
    fn superop_json_round_trip(d in 2usize..4, s1: u64, s2: u64) {
        let k = SuperOp::kron(
            &LinOp::from_matrix(random_matrix(d, s1)),
            &LinOp::from_matrix(random_matrix(d, s2)),
        )
        .unwrap();
        let back = SuperOp::from_json(&k.to_json()).unwrap();
        prop_assert_eq!(k, back);
    }
}
