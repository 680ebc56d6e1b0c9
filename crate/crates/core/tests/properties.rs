use cphifi_core::sampled::{build_zhat, gather_rows, observed_mttkrp, sample_linear_indices};
use cphifi_core::{
    gram_khatri_rao, khatri_rao, kronecker, mttkrp, omega_norm, DenseTensor, KruskalModel,
    Matrix, ObservationSet,
};
use proptest::prelude::*;

fn shape_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..=5, 2..=4)
}

fn tensor_for(shape: Vec<usize>) -> impl Strategy<Value = DenseTensor> {
    let len = shape.iter().product::<usize>();
    prop::collection::vec(-1.0f64..1.0, len).prop_map(move |d| DenseTensor::new(shape.clone(), d).unwrap())
}

fn model_for(shape: Vec<usize>, r: usize) -> impl Strategy<Value = KruskalModel> {
    let total: usize = shape.iter().map(|n| n * r).sum();
    prop::collection::vec(-1.0f64..1.0, total).prop_map(move |flat| {
        let mut off = 0;
        let factors = shape
            .iter()
            .map(|&n| {
                let m = Matrix::from_column_slice(n, r, &flat[off..off + n * r]);
                off += n * r;
                m
            })
            .collect();
        KruskalModel::new(factors).unwrap()
    })
}

fn matrix(m: usize, n: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-1.0f64..1.0, m * n).prop_map(move |d| Matrix::from_vec(m, n, d))
}

proptest! {
    #[test]
    fn unfold_fold_round_trip(t in shape_strategy().prop_flat_map(tensor_for), k in 0usize..4) {
        let k = k % t.order();
        let m = t.unfold(k).unwrap();
        prop_assert_eq!(m.nrows(), t.shape()[k]);
        prop_assert!((m.norm() - t.norm()).abs() <= 1e-12 * t.norm().max(1.0));
        prop_assert_eq!(DenseTensor::fold(&m, k, t.shape()).unwrap(), t);
    }

    #[test]
    fn mttkrp_and_gram_match_dense(
        (t, model) in (shape_strategy(), 1usize..=4).prop_flat_map(|(s, r)| {
            (tensor_for(s.clone()), model_for(s, r))
        }),
    ) {
        for k in 0..t.order() {
            let z = khatri_rao(&model.z_order(k)).unwrap();
            let dense = t.unfold(k).unwrap() * &z;
            let fast = mttkrp(&t, &model, k).unwrap();
            prop_assert!((fast - &dense).norm() <= 1e-12 * dense.norm().max(1.0));
            let v = z.transpose() * &z;
            prop_assert!((gram_khatri_rao(&model, k) - &v).norm() <= 1e-12 * v.norm().max(1.0));
        }
    }

    #[test]
    fn kronecker_mixed_product(
        (a, b, c, d) in (1usize..4, 1usize..4, 1usize..4, 1usize..4, 1usize..4, 1usize..4)
            .prop_flat_map(|(m, n, p, q, s, u)| (matrix(m, n), matrix(p, q), matrix(n, s), matrix(q, u))),
    ) {
        let lhs = kronecker(&a, &b) * kronecker(&c, &d);
        let rhs = kronecker(&(&a * &c), &(&b * &d));
        prop_assert!((lhs - &rhs).norm() <= 1e-12 * rhs.norm().max(1.0));
        prop_assert_eq!(kronecker(&a, &b).transpose(), kronecker(&a.transpose(), &b.transpose()));
    }

    #[test]
    fn buckets_partition_observations(
        (t, frac, seed) in (shape_strategy().prop_flat_map(tensor_for), 0.0f64..=1.0, any::<u64>()),
    ) {
        let q = (frac * t.len() as f64) as usize;
        let lin = sample_linear_indices(t.len(), q, seed).unwrap();
        let obs = ObservationSet::from_linear(&t, &lin).unwrap();
        for k in 0..t.order() {
            let b = obs.buckets(k);
            prop_assert_eq!(b.len(), t.shape()[k]);
            let mut seen = vec![false; q];
            for i in 0..b.len() {
                for &l in b.rows(i) {
                    prop_assert_eq!(obs.index(l)[k], i);
                    prop_assert!(!seen[l]);
                    seen[l] = true;
                }
            }
            prop_assert!(seen.into_iter().all(|s| s));
        }
        prop_assert!(omega_norm(&obs) <= t.norm() + 1e-12);
    }

    #[test]
    fn sampled_kernels_ignore_row_order(
        (t, model, seed) in (shape_strategy(), 1usize..=3).prop_flat_map(|(s, r)| {
            (tensor_for(s.clone()), model_for(s, r), any::<u64>())
        }),
    ) {
        let q = t.len() / 2 + 1;
        let lin = sample_linear_indices(t.len(), q, seed).unwrap();
        let obs = ObservationSet::from_linear(&t, &lin).unwrap();
        let perm: Vec<usize> = (0..q).rev().collect();
        let shuffled = obs.permuted(&perm).unwrap();
        for k in 0..t.order() {
            let b1 = observed_mttkrp(&obs, &build_zhat(&model, k, &obs).unwrap(), k).unwrap();
            let z2 = build_zhat(&model, k, &shuffled).unwrap();
            let b2 = observed_mttkrp(&shuffled, &z2, k).unwrap();
            prop_assert!((&b1 - &b2).norm() <= 1e-12 * b1.norm().max(1.0));
            let g1 = gather_rows(model.factor(k), &build_zhat(&model, k, &obs).unwrap(), &obs, k).unwrap();
            let g2 = gather_rows(model.factor(k), &z2, &shuffled, k).unwrap();
            for (l, &p) in perm.iter().enumerate() {
                prop_assert!((g2[l] - g1[p]).abs() <= 1e-12);
                prop_assert!((g1[p] - model.value_at(obs.index(p))).abs() <= 1e-12);
            }
        }
    }
}
