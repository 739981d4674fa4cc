//! Property tests over seeded random inputs.

use hrsa::geometry::{knn_overlap, linear_cka, linear_cka_with, ComputeForm};
use hrsa::numerics::{center_columns, orthogonal_factor, topk_cosine_neighbors};
use hrsa::probe::{evaluate_probe, fit_probe, ProbeConfig};
use hrsa::representation::{dimwise_correlation, inverse_row_entropy, procrustes_align};
use hrsa::store::{
    load_activation_set, write_activation_set, ActivationSet, LabelSet, Labels, SourceDtype, Split,
    Splits,
};
use hrsa::sweep::{layer_grid, sweep, MetricSpec, SweepOptions};
use hrsa::synth;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 24,
        ..ProptestConfig::default()
    }
}

fn transpose(v: &[Vec<Option<f64>>]) -> Vec<Vec<Option<f64>>> {
    (0..v[0].len())
        .map(|j| v.iter().map(|row| row[j]).collect())
        .collect()
}

fn random_set(seed: u64, n: usize, dims: &[usize], fp: &str) -> ActivationSet {
    let mut rng = synth::rng(seed);
    let layers = dims
        .iter()
        .map(|&d| synth::gaussian(&mut rng, n, d))
        .collect();
    ActivationSet::from_matrices("m", fp, SourceDtype::F64, layers).unwrap()
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn centering_is_idempotent(seed in any::<u64>(), n in 2usize..40, d in 1usize..12) {
        let m = synth::gaussian(&mut synth::rng(seed), n, d) * 5.0;
        let once = center_columns(&m);
        let twice = center_columns(&once);
        prop_assert!((once - twice).amax() < 1e-12);
    }

    #[test]
    fn neighbors_invariant_to_similarity_transforms(seed in any::<u64>(), n in 3usize..80, d in 1usize..10, c in 0.01f64..100.0) {
        let mut rng = synth::rng(seed);
        let m = synth::gaussian(&mut rng, n, d);
        let q = synth::orthogonal(&mut rng, d);
        let k = 1 + (seed as usize) % (n - 1);
        prop_assert_eq!(
            topk_cosine_neighbors(&m, k).unwrap(),
            topk_cosine_neighbors(&(&m * q * c), k).unwrap()
        );
    }

    #[test]
    fn orthogonal_factor_dominates_random_rotations(seed in any::<u64>(), d in 2usize..8) {
        let mut rng = synth::rng(seed);
        let c = synth::gaussian(&mut rng, d, d);
        let o = orthogonal_factor(&c).unwrap();
        prop_assert!((o.transpose() * &o - DMatrix::identity(d, d)).amax() < 1e-10);
        let best = (o.transpose() * &c).trace();
        for _ in 0..50 {
            let r = synth::orthogonal(&mut rng, d);
            prop_assert!((r.transpose() * &c).trace() <= best + 1e-9);
        }
    }

    #[test]
    fn dimwise_is_symmetric_and_bounded(seed in any::<u64>(), n in 3usize..60, d in 1usize..10) {
        let mut rng = synth::rng(seed);
        let x = synth::gaussian(&mut rng, n, d);
        let y = synth::gaussian(&mut rng, n, d);
        let a = dimwise_correlation(&x, &y).unwrap();
        let b = dimwise_correlation(&y, &x).unwrap();
        prop_assert_eq!(&a.per_dim, &b.per_dim);
        prop_assert!(a.per_dim.iter().flatten().all(|r| (-1.0 - 1e-12..=1.0 + 1e-12).contains(r)));
    }

    #[test]
    fn procrustes_map_is_orthogonal_and_h_inv_bounded(seed in any::<u64>(), d in 2usize..12) {
        let mut rng = synth::rng(seed);
        let n = d + 5 + (seed as usize % 20);
        let x = synth::gaussian(&mut rng, n, d);
        let y = synth::gaussian(&mut rng, n, d);
        let s = procrustes_align(&x, &y, seed % 2 == 0).unwrap();
        let o = s.o_star_matrix();
        prop_assert!((o.transpose() * &o - DMatrix::identity(d, d)).amax() < 1e-10);
        prop_assert!((0.0..=1.0).contains(&s.h_inv));
        prop_assert!(s.residual <= (&x - &y).norm() + 1e-9 || s.centered);
    }

    #[test]
    fn permutations_have_unit_h_inv(seed in any::<u64>(), d in 2usize..20) {
        let mut perm: Vec<usize> = (0..d).collect();
        let mut rng = synth::rng(seed);
        for i in (1..d).rev() {
            perm.swap(i, rand::Rng::random_range(&mut rng, 0..=i));
        }
        let p = DMatrix::from_fn(d, d, |i, j| if perm[i] == j { 1.0 } else { 0.0 });
        prop_assert_eq!(inverse_row_entropy(&p).unwrap(), 1.0);
    }

    #[test]
    fn cka_is_symmetric_bounded_and_form_independent(seed in any::<u64>(), n in 3usize..60, dx in 1usize..30, dy in 1usize..30) {
        let mut rng = synth::rng(seed);
        let x = synth::gaussian(&mut rng, n, dx);
        let y = synth::gaussian(&mut rng, n, dy);
        let a = linear_cka(&x, &y).unwrap().value;
        let b = linear_cka(&y, &x).unwrap().value;
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
        let g = linear_cka_with(&x, &y, ComputeForm::Gram).unwrap().value;
        let f = linear_cka_with(&x, &y, ComputeForm::Feature).unwrap().value;
        prop_assert!((g - f).abs() <= 1e-9 * g.abs().max(f.abs()));
    }

    #[test]
    fn knn_overlap_is_symmetric_and_saturates(seed in any::<u64>(), n in 3usize..50, d in 1usize..8) {
        let mut rng = synth::rng(seed);
        let x = synth::gaussian(&mut rng, n, d);
        let y = synth::gaussian(&mut rng, n, d);
        let k = 1 + (seed as usize) % (n - 1);
        let a = knn_overlap(&x, &y, k).unwrap();
        prop_assert_eq!(&a, &knn_overlap(&y, &x, k).unwrap());
        prop_assert!((0.0..=1.0).contains(&a.mean_overlap));
        prop_assert_eq!(knn_overlap(&x, &y, n - 1).unwrap().mean_overlap, 1.0);
    }

    #[test]
    fn evaluation_leaves_probe_untouched(seed in any::<u64>()) {
        let mut rng = synth::rng(seed);
        let z = synth::gaussian(&mut rng, 30, 4);
        let values: Vec<usize> = (0..30).map(|i| usize::from(z[(i, 0)] + 0.1 * z[(i, 1)] > 0.0)).collect();
        prop_assume!(values[..20].contains(&0) && values[..20].contains(&1));
        let splits = Splits { train: (0..20).collect(), dev: vec![], test: (20..30).collect() };
        let labels = LabelSet::new(Labels::Classes { values, num_classes: 2 }, splits).unwrap();
        let probe = fit_probe(&z, &labels, &ProbeConfig::default()).unwrap();
        let before = probe.clone();
        evaluate_probe(&probe, &z, &labels, Split::Test).unwrap();
        prop_assert_eq!(before, probe);
    }

    #[test]
    fn grids_of_symmetric_metrics_transpose(seed in any::<u64>()) {
        let a = random_set(seed, 24, &[4, 4, 4], "fp");
        let b = random_set(seed.wrapping_add(1), 24, &[4, 4], "fp");
        let opts = SweepOptions::default();
        for metric in [MetricSpec::Cka, MetricSpec::Knn(3), MetricSpec::Dimwise] {
            let ab = layer_grid(&a, &b, metric, &opts).unwrap();
            let ba = layer_grid(&b, &a, metric, &opts).unwrap();
            let t = transpose(&ba.values);
            for (r1, r2) in ab.values.iter().zip(&t) {
                for (u, v) in r1.iter().zip(r2) {
                    prop_assert!((u.unwrap() - v.unwrap()).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn parallel_and_serial_sweeps_agree(seed in any::<u64>(), cap in 10usize..40) {
        let a = random_set(seed, 40, &[5, 3, 5], "fp");
        let b = random_set(seed ^ 0xff, 40, &[5, 5], "fp");
        let metrics = [MetricSpec::Cka, MetricSpec::Knn(4), MetricSpec::Dimwise, MetricSpec::Procrustes];
        let serial = SweepOptions { jobs: 1, ..SweepOptions::default() };
        let parallel = SweepOptions { jobs: 4, ..SweepOptions::default() };
        let g1 = sweep(&a, &b, &metrics, cap, seed, &serial).unwrap();
        let g2 = sweep(&a, &b, &metrics, cap, seed, &parallel).unwrap();
        prop_assert_eq!(&g1, &g2);
        let dimwise = &g1[2];
        prop_assert!(dimwise.values[1][0].is_none() && !dimwise.null_cells.is_empty());
    }

    #[test]
    fn f64_dumps_round_trip(seed in any::<u64>(), n in 2usize..20, d in 1usize..6) {
        let set = random_set(seed, n, &[d, d], "abc");
        let dir = tempfile::tempdir().unwrap();
        write_activation_set(&set, dir.path()).unwrap();
        let first = std::fs::read(dir.path().join("layer_1.npy")).unwrap();
        let loaded = load_activation_set(dir.path()).unwrap();
        prop_assert_eq!(&loaded, &set);
        let again = tempfile::tempdir().unwrap();
        write_activation_set(&loaded, again.path()).unwrap();
        prop_assert_eq!(first, std::fs::read(again.path().join("layer_1.npy")).unwrap());
    }
}
