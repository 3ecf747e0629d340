use proptest::prelude::*;

use deepcluster::cluster::{
    agglomerative, birch_with, canonical_labels, dbscan_with, kmeans_fit, run_points, AlgoConfig, Algorithm,
    BirchParams, DbscanParams, KMeansParams,
};
use deepcluster::metrics::{contingency, nmi, purity, score};
use deepcluster::Points;

fn labelings() -> impl Strategy<Value = (Vec<i32>, Vec<usize>)> {
    (1usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(-1i32..8, n),
            prop::collection::vec(0usize..6, n),
        )
    })
}

/// Points on a 1/64 grid, so translations by whole numbers are exact in f32.
fn grid_points(max_n: usize, d: usize) -> impl Strategy<Value = Vec<f32>> {
    (2..=max_n).prop_flat_map(move |n| {
        prop::collection::vec((-640i32..640).prop_map(|v| v as f32 / 64.0), n * d)
    })
}

/// Points in a few well separated blobs.
fn blobs(d: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec((0usize..3, prop::collection::vec(-32i32..32, d)), 6..24).prop_map(move |pts| {
        pts.into_iter()
            .flat_map(|(b, off)| {
                off.into_iter()
                    .enumerate()
                    .map(move |(j, o)| if j == 0 { 40.0 * b as f32 } else { 0.0 } + o as f32 / 64.0)
            })
            .collect()
    })
}

fn relabel(labels: &[i32], perm: &[i32]) -> Vec<i32> {
    labels.iter().map(|&l| if l < 0 { l } else { perm[l as usize] }).collect()
}

/// Labels of `order`-permuted rows mapped back to the original row order.
fn unpermute(labels: &[i32], order: &[usize]) -> Vec<i32> {
    let mut back = vec![0; labels.len()];
    for (pos, &row) in order.iter().enumerate() {
        back[row] = labels[pos];
    }
    back
}

/// Same partition, ignoring cluster ids; noise stays noise.
fn same_partition(a: &[i32], b: &[i32]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| (*x < 0) == (*y < 0))
        && (0..a.len()).all(|i| (0..a.len()).all(|j| a[i] < 0 || (a[i] == a[j]) == (b[i] == b[j])))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn nmi_is_symmetric((pred, truth) in labelings()) {
        let pred: Vec<i32> = pred.into_iter().map(|p| p.max(0)).collect();
        let table = contingency(&pred, &truth).unwrap();
        let swapped_pred: Vec<i32> = truth.iter().map(|&t| t as i32).collect();
        let swapped_truth: Vec<usize> = pred.iter().map(|&p| p as usize).collect();
        let other = contingency(&swapped_pred, &swapped_truth).unwrap();
        prop_assert!((nmi(&table) - nmi(&other)).abs() <= 1e-12);
        prop_assert!((nmi(&table) - nmi(&table.transpose())).abs() <= 1e-12);
    }

    #[test]
    fn scores_are_bounded((pred, truth) in labelings()) {
        let s = score(&pred, &truth).unwrap();
        prop_assert!((0.0..=1.0).contains(&s.nmi));
        prop_assert!((0.0..=1.0).contains(&s.purity));
    }

    #[test]
    fn scores_ignore_label_names(
        (pred, truth) in labelings(),
        perm in Just((0..8).collect::<Vec<i32>>()).prop_shuffle(),
    ) {
        let a = score(&pred, &truth).unwrap();
        let b = score(&relabel(&pred, &perm), &truth).unwrap();
        prop_assert!((a.nmi - b.nmi).abs() <= 1e-12);
        prop_assert_eq!(a.purity, b.purity);
    }

    #[test]
    fn refinements_are_pure(truth in prop::collection::vec(0usize..5, 1..50), split in 1usize..4) {
        // Each class splits into `split` clusters by position.
        let pred: Vec<i32> = truth.iter().enumerate().map(|(i, &t)| (t * split + i % split) as i32).collect();
        let table = contingency(&pred, &truth).unwrap();
        prop_assert_eq!(purity(&table), 1.0);
    }

    #[test]
    fn canonical_labels_follow_first_occurrence(labels in prop::collection::vec(-2i32..10, 0..40)) {
        let (canon, k) = canonical_labels(&labels);
        prop_assert_eq!(canonical_labels(&canon).0, canon.clone());
        let mut next = 0;
        for (i, &c) in canon.iter().enumerate() {
            if labels[i] < 0 {
                prop_assert_eq!(c, -1);
            } else if !canon[..i].contains(&c) {
                prop_assert_eq!(c, next);
                next += 1;
            }
        }
        prop_assert_eq!(k, next as usize);
        prop_assert!(same_partition(&labels, &canon));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kmeans_inertia_never_increases(data in grid_points(40, 2), k in 1usize..5, seed in any::<u64>()) {
        let n = data.len() / 2;
        prop_assume!(k <= n);
        let x = Points::new(&data, n, 2).unwrap();
        let params = KMeansParams { n_init: 1, ..KMeansParams::default() };
        let fit = kmeans_fit(x, k, seed, &params).unwrap();
        for w in fit.inertia_history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{:?}", fit.inertia_history);
        }
    }

    #[test]
    fn dbscan_ignores_row_order(
        data in grid_points(40, 2),
        seed in any::<u64>(),
        eps in 0.5f64..3.0,
        min_samples in 1usize..5,
    ) {
        use rand::{seq::SliceRandom, SeedableRng};
        let n = data.len() / 2;
        let params = DbscanParams { eps, min_samples };
        let base = dbscan_with(Points::new(&data, n, 2).unwrap(), &params).labels;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let shuffled: Vec<f32> = order.iter().flat_map(|&i| data[2 * i..2 * i + 2].to_vec()).collect();
        let out = dbscan_with(Points::new(&shuffled, n, 2).unwrap(), &params).labels;
        prop_assert!(same_partition(&base, &unpermute(&out, &order)));
    }

    #[test]
    fn translation_does_not_change_clusters(data in blobs(2), shift in (-500i32..500, -500i32..500)) {
        let n = data.len() / 2;
        let moved: Vec<f32> = data
            .chunks(2)
            .flat_map(|p| [p[0] + shift.0 as f32, p[1] + shift.1 as f32])
            .collect();
        let x = Points::new(&data, n, 2).unwrap();
        let y = Points::new(&moved, n, 2).unwrap();
        for algorithm in Algorithm::ALL {
            let k = algorithm.takes_k().then_some(2.min(n));
            let config = AlgoConfig::new(algorithm, k);
            let a = run_points(x, &config, 7);
            let b = run_points(y, &config, 7);
            match (a, b) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a.labels, b.labels, "{}", algorithm),
                (Err(a), Err(b)) => prop_assert_eq!(a.kind(), b.kind(), "{}", algorithm),
                (a, b) => prop_assert!(false, "{}: {:?} vs {:?}", algorithm, a, b),
            }
        }
    }

    #[test]
    fn birch_with_zero_threshold_is_ward(data in grid_points(16, 2), branching in 2usize..6) {
        let n = data.len() / 2;
        let distinct = (0..n).all(|i| (0..i).all(|j| data[2 * i..2 * i + 2] != data[2 * j..2 * j + 2]));
        prop_assume!(distinct);
        let x = Points::new(&data, n, 2).unwrap();
        let params = BirchParams { threshold: 0.0, branching_factor: branching };
        for k in 1..=n {
            let b = birch_with(x, k, &params).unwrap();
            prop_assert_eq!(b.labels, agglomerative(x, k).unwrap().labels, "k={}", k);
        }
    }
}
