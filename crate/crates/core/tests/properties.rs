use pcada::apm::{AnnealSchedule, PrototypeBank};
use pcada::divergence::{joint_mmd, KernelConfig};
use pcada::linalg::Matrix;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-3.0..3.0f64, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mmd_symmetric_and_nonnegative(
        a0 in matrix(5, 3), a1 in matrix(5, 2), b0 in matrix(4, 3), b1 in matrix(4, 2)
    ) {
        let cfg = KernelConfig::default();
        let ab = joint_mmd(&[&a0, &a1], &[&b0, &b1], &cfg).unwrap().value;
        let ba = joint_mmd(&[&b0, &b1], &[&a0, &a1], &cfg).unwrap().value;
        prop_assert_eq!(ab, ba);
        prop_assert!(ab >= -1e-12);
    }

    #[test]
    fn mmd_of_batch_with_itself_vanishes(a0 in matrix(6, 4), a1 in matrix(6, 3)) {
        let v = joint_mmd(&[&a0, &a1], &[&a0, &a1], &KernelConfig::default()).unwrap().value;
        prop_assert!(v.abs() <= 1e-12, "{}", v);
    }

    #[test]
    fn anneal_is_monotone_and_bounded(
        t1 in 0.0..50.0f64, span in 0.1..50.0f64, eta in 0.0..1.0f64, s in -10.0..120.0f64, ds in 0.0..10.0f64
    ) {
        let a = AnnealSchedule::new(t1, t1 + span, eta).unwrap();
        prop_assert!(a.eta(s) <= a.eta(s + ds));
        prop_assert!((0.0..=eta).contains(&a.eta(s)));
    }

    #[test]
    fn anneal_is_continuous_at_the_knots(t1 in 0.0..50.0f64, span in 0.1..50.0f64, eta in 0.0..1.0f64) {
        let a = AnnealSchedule::new(t1, t1 + span, eta).unwrap();
        let h = 1e-9;
        prop_assert!((a.eta(t1 - h) - a.eta(t1 + h)).abs() < 1e-6);
        prop_assert!((a.eta(t1 + span - h) - a.eta(t1 + span + h)).abs() < 1e-6);
    }

    #[test]
    fn prototype_update_stays_on_segment(
        protos in matrix(3, 4), feat in prop::collection::vec(-3.0..3.0f64, 4), k in 0usize..3, eta in 0.0..=1.0f64
    ) {
        let mut bank = PrototypeBank::new(protos.clone()).unwrap();
        bank.update(&feat, Some(k), eta).unwrap();
        for (j, &c) in bank.prototype(k).iter().enumerate() {
            let (lo, hi) = (protos.get(k, j).min(feat[j]), protos.get(k, j).max(feat[j]));
            prop_assert!(c >= lo - 1e-12 && c <= hi + 1e-12);
            let expected = protos.get(k, j) + eta * (feat[j] - protos.get(k, j));
            prop_assert!((c - expected).abs() < 1e-12);
        }
        for other in (0..3).filter(|&o| o != k) {
            prop_assert_eq!(bank.prototype(other), protos.row(other));
        }
    }

    #[test]
    fn abstaining_leaves_bank_untouched(protos in matrix(3, 2), feat in prop::collection::vec(-3.0..3.0f64, 2)) {
        let mut bank = PrototypeBank::new(protos.clone()).unwrap();
        bank.update(&feat, None, 0.7).unwrap();
        prop_assert_eq!(bank.as_matrix(), &protos);
    }
}
