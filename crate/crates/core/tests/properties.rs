use proptest::prelude::*;

use ally_core::data::{clone_redundant, load_idx, split_initial, synth_blobs, write_idx_images, write_idx_labels};
use ally_core::duality::{solve_instance, weak_duality_probe, ConvexInstance};
use ally_core::generate::{ascend_input, AscentConfig, ClipRange};
use ally_core::numerics::{init_params, sq_dist, Matrix, MlpArchitecture};
use ally_core::pdcl::{dual_step, DualState};
use ally_core::selection::{kmeans, random_select, top_dual_select};

fn points(max_n: usize, max_d: usize) -> impl proptest::strategy::Strategy<Value = Matrix> {
    (1..=max_n, 1..=max_d).prop_flat_map(|(n, d)| {
        prop::collection::vec(-10.0f64..10.0, n * d).prop_map(move |v| Matrix::from_vec(n, d, v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn kmeans_assigns_each_point_to_a_nearest_centroid(x in points(40, 3), k_raw in 1usize..8, seed in any::<u64>()) {
        let k = k_raw.min(x.rows());
        let c = kmeans(&x, k, seed, 100, 1e-9).unwrap();
        prop_assert_eq!(c.k(), k);
        let mut inertia = 0.0;
        for (i, &a) in c.assignment.iter().enumerate() {
            let d = sq_dist(x.row(i), c.centroids.row(a));
            for j in 0..k {
                prop_assert!(d <= sq_dist(x.row(i), c.centroids.row(j)) + 1e-9);
            }
            inertia += d;
        }
        prop_assert!((inertia - c.inertia).abs() <= 1e-9 * (1.0 + inertia));
        for w in c.inertia_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * (1.0 + w[0]));
        }
    }

    #[test]
    fn dual_step_stays_nonnegative(
        lam in prop::collection::vec(0.0f64..5.0, 1..20),
        s in prop::collection::vec(-5.0f64..5.0, 20),
        eta in 0.0f64..2.0,
    ) {
        let state = DualState { lambdas: lam.clone(), epsilons: vec![0.1; lam.len()], slacks: vec![0.0; lam.len()] };
        let next = dual_step(&state, &s[..lam.len()], eta).unwrap();
        for (i, l) in next.lambdas.iter().enumerate() {
            prop_assert!(*l >= 0.0);
            prop_assert_eq!(*l, (lam[i] + eta * s[i]).max(0.0));
        }
    }

    #[test]
    fn split_and_clone_keep_bookkeeping(n_per in 2usize..20, n0_raw in 1usize..30, factor in 1usize..5, seed in any::<u64>()) {
        let base = synth_blobs(n_per, 2, 2, 0.5, seed).unwrap();
        let n0 = n0_raw.min(base.len());
        let p = split_initial(&base, n0, seed).unwrap();
        prop_assert_eq!(p.labeled.len(), n0);
        p.check_invariants().unwrap();
        let c = clone_redundant(&p, factor).unwrap();
        c.check_invariants().unwrap();
        prop_assert_eq!(c.labeled.len(), n0);
        prop_assert_eq!(c.unlabeled.len(), factor * p.unlabeled.len() + (factor - 1) * n0);
        for &i in &c.unlabeled {
            prop_assert_eq!(c.features.row(i), base.features.row(c.provenance[i]));
        }
    }

    #[test]
    fn random_and_top_dual_pick_distinct_positions(n in 1usize..200, b_raw in 1usize..200, seed in any::<u64>()) {
        let b = b_raw.min(n);
        let r = random_select(n, b, seed).unwrap();
        let mut idx = r.indices.clone();
        idx.sort_unstable();
        idx.dedup();
        prop_assert_eq!(idx.len(), b);
        prop_assert!(idx.iter().all(|&i| i < n));
        let duals: Vec<f64> = (0..n).map(|i| ((i * 7919) % 101) as f64).collect();
        let t = top_dual_select(&duals, b).unwrap();
        let cutoff = t.indices.iter().map(|&i| duals[i]).fold(f64::INFINITY, f64::min);
        let above = duals.iter().filter(|&&d| d > cutoff).count();
        prop_assert!(above < b);
    }

    #[test]
    fn scalar_instances_satisfy_weak_duality(target in -5.0f64..5.0, eps in 0.01f64..10.0, trial in 0.0f64..50.0) {
        let inst = ConvexInstance::scalar(target, eps);
        let sol = solve_instance(&inst).unwrap();
        let exact = (target.abs() - eps.sqrt()).max(0.0).powi(2);
        prop_assert!((sol.p_star - exact).abs() <= 1e-9 * (1.0 + exact));
        let probe = weak_duality_probe(&inst, &[trial]).unwrap();
        prop_assert!(probe.dual_value <= sol.p_star + 1e-10);
    }

    #[test]
    fn ascent_snapshots_stay_in_range(seed in any::<u64>(), x0 in prop::collection::vec(-2.0f64..2.0, 3), step in 0.0f64..1.0) {
        let arch = MlpArchitecture::new(3, vec![5], 2);
        let params = init_params(&arch, seed).unwrap();
        let cfg = AscentConfig { step_size: step, n_steps: 30, clip_range: ClipRange::uniform(-1.0, 1.0), snapshot_every: 3, stall_patience: 0 };
        let t = ascend_input(&params, &x0, &cfg).unwrap();
        for s in &t.snapshots {
            prop_assert!(s.x.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        let start: Vec<f64> = x0.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        prop_assert_eq!(t.snapshots[0].x.clone(), start);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 40, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn idx_files_round_trip(n in 1usize..20, rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<f64> = (0..n * rows * cols).map(|i| ((i as u64 ^ seed) % 256) as f64 / 255.0).collect();
        let x = Matrix::from_vec(n, rows * cols, pixels).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| (i + seed as usize) % 10).collect();
        let (pi, pl) = (dir.path().join("i.idx"), dir.path().join("l.idx"));
        write_idx_images(&pi, &x, rows, cols).unwrap();
        write_idx_labels(&pl, &labels).unwrap();
        let pool = load_idx(&pi, &pl).unwrap();
        prop_assert_eq!(pool.features, x);
    }
}

#[test]
fn mnist_fixture_loads() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist5k");
    let train = load_idx(dir.join("train-images-idx3-ubyte.gz"), dir.join("train-labels-idx1-ubyte.gz")).unwrap();
    let test = load_idx(dir.join("test-images-idx3-ubyte.gz"), dir.join("test-labels-idx1-ubyte.gz")).unwrap();
    assert_eq!((train.len(), train.dim()), (4000, 784));
    assert_eq!(test.len(), 1000);
    assert!(train.features.data().iter().all(|v| (0.0..=1.0).contains(v)));
}
