use bhtsne_core::optimizer::{input_affinity, kl_divergence, KlMode, StepTimings};
use bhtsne_core::quadtree::{compact_bits, interleave, radix_sort, spread_bits};
use bhtsne_core::{
    build_summarized, calibrate_perplexity, knn_exact, load_matrix, repulsive_bh, run, save_matrix, symmetrize, Format,
    GradientBuffers, InputMatrix, Points, Precision, Real, TsneConfig,
};
use proptest::prelude::*;

fn matrix_strategy() -> impl Strategy<Value = InputMatrix<f64>> {
    (2usize..40, 1usize..6).prop_flat_map(|(n, d)| {
        prop::collection::vec(-1e6f64..1e6, n * d).prop_map(move |v| InputMatrix::new(n, d, v).unwrap())
    })
}

fn points_strategy(max: usize) -> impl Strategy<Value = Points<f64>> {
    prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 2..max).prop_map(|v| {
        let (xs, ys) = v.into_iter().unzip();
        Points::new(xs, ys).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tensor_round_trip(m in matrix_strategy(), binary in any::<bool>()) {
        let dir = tempfile::tempdir().unwrap();
        let format = if binary { Format::RawBinary } else { Format::Csv };
        let path = dir.path().join("m");
        save_matrix(&m, &path, format).unwrap();
        prop_assert_eq!(Format::sniff(&path).unwrap(), format);
        let back: InputMatrix<f64> = load_matrix(&path, format).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn spread_compact_inverse(a in any::<u32>(), b in any::<u32>()) {
        let code = interleave(a, b);
        prop_assert_eq!(compact_bits(code), a as u64);
        prop_assert_eq!(compact_bits(code >> 1), b as u64);
        prop_assert_eq!(spread_bits(a as u64) & 0xaaaa_aaaa_aaaa_aaaa, 0);
    }

    #[test]
    fn radix_sort_matches_stable_sort(keys in prop::collection::vec(any::<u64>(), 0..3000), narrow in any::<bool>()) {
        let keyed: Vec<(u64, u32)> = keys
            .iter()
            .enumerate()
            .map(|(i, &k)| (if narrow { k % 7 } else { k }, i as u32))
            .collect();
        let mut expect = keyed.clone();
        expect.sort_by_key(|k| k.0);
        prop_assert_eq!(radix_sort(keyed), expect);
    }

    #[test]
    fn tree_mass_and_com(y in points_strategy(400)) {
        let tree = build_summarized(&y).unwrap();
        prop_assert_eq!(tree.root().mass, y.len() as f64);
        let mean = y.mean();
        for (com, m) in tree.root().com.iter().zip(mean) {
            prop_assert!((com - m).abs() <= 1e-9 * m.abs().max(1.0));
        }
        for node in &tree.nodes {
            if !node.is_leaf() {
                let kids: f64 = node.children().map(|c| tree.nodes[c].mass).sum();
                prop_assert_eq!(kids, node.mass);
            }
        }
    }

    #[test]
    fn repulsion_is_antisymmetric_at_theta_zero(y in points_strategy(200)) {
        let tree = build_summarized(&y).unwrap();
        let mut buf = GradientBuffers::new(y.len());
        repulsive_bh(&tree, &y, 0.0, &mut buf).unwrap();
        for c in 0..2 {
            let net: f64 = buf.rep.coords[c].iter().sum();
            prop_assert!(net.abs() <= 1e-10 * y.len() as f64);
        }
    }

    #[test]
    fn affinity_is_symmetric_distribution(m in matrix_strategy(), u in 1.5f64..4.0) {
        let n = m.n_points();
        let k = ((3.0 * u) as usize).min(n - 1);
        prop_assume!(u <= k as f64);
        let g = knn_exact(&m, k).unwrap();
        let pr = calibrate_perplexity(&g, u, 200, 1e-5).unwrap();
        let p = symmetrize(&pr, &g).unwrap();
        prop_assert!((p.value_sum() - 1.0).abs() <= 1e-10);
        for i in 0..n {
            let (cols, vals) = p.row(i);
            prop_assert!(cols.windows(2).all(|w| w[0] < w[1]));
            for (&j, &v) in cols.iter().zip(vals) {
                let (back_cols, back_vals) = p.row(j as usize);
                let at = back_cols.binary_search(&(i as u32)).unwrap();
                prop_assert_eq!(back_vals[at].to_bits(), v.to_bits());
            }
        }
    }
}

fn blobs(n: usize) -> InputMatrix<f64> {
    let data = (0..n * 5)
        .map(|k| {
            let i = k / 5;
            ((i % 4) * 6) as f64 + ((k * 2654435761) % 1000) as f64 / 1000.0
        })
        .collect();
    InputMatrix::new(n, 5, data).unwrap()
}

fn reloaded_kl<T: Real>(x: &InputMatrix<T>, precision: Precision) {
    let cfg = TsneConfig {
        perplexity: 10.0,
        n_iter: 200,
        precision,
        ..Default::default()
    };
    let out = run(x, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for format in [Format::Csv, Format::RawBinary] {
        let path = dir.path().join("emb");
        save_matrix(&out.embedding.y.to_matrix().unwrap(), &path, format).unwrap();
        let y = Points::from_matrix(&load_matrix::<T>(&path, format).unwrap()).unwrap();
        let p = input_affinity(x, &cfg, &mut StepTimings::default()).unwrap();
        let kl = kl_divergence(&p, &y, KlMode::Exact).unwrap();
        assert!((kl - out.kl).abs() <= 1e-9, "{format:?}: {kl} vs {}", out.kl);
    }
}

#[test]
fn stored_embedding_rescores_to_reported_kl() {
    let x = blobs(200);
    reloaded_kl(&x, Precision::F64);
    reloaded_kl(&x.cast::<f32>(), Precision::F32);
}

#[test]
fn fewer_iterations_than_exaggeration_phase() {
    // 30 points per cluster and k = 30: the farthest neighbor's affinity underflows
    let x = blobs(120);
    let cfg = TsneConfig {
        perplexity: 10.0,
        n_iter: 100,
        ..Default::default()
    };
    let out = run(&x, &cfg).unwrap();
    assert_eq!(out.embedding.iteration, 100);
    assert!(out.kl.is_finite());
}
