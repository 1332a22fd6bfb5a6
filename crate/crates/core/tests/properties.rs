//! Property tests for the module invariants.

use fgssl_core::analysis::linear_cka;
use fgssl_core::augment::{augment, make_views, AugmentConfig, AugmentPair};
use fgssl_core::diffcore::{Tape, Tensor};
use fgssl_core::federation::{aggregate, Stat};
use fgssl_core::gnn::{attention_head, decode_checkpoint, encode_checkpoint, GnnModel, HeadVars, MessageIndex, ModelSpec};
use fgssl_core::graph::{generate_sbm, load_graph, save_graph, split_nodes, Graph, SbmSpec};
use fgssl_core::losses::{fgsd_loss, similarity_distribution, NeighborIndex};
use fgssl_core::partition::induce_subgraph;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sbm(seed: u64, blocks: usize, npb: usize) -> Graph<f64> {
    generate_sbm(&SbmSpec {
        blocks,
        nodes_per_block: npb,
        p_in: 0.5,
        p_out: 0.1,
        feature_noise: 0.7,
        seed,
        signal_width: 1,
    })
    .unwrap()
}

fn matrix(rows: usize, cols: usize, range: f64) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(-range..range, rows * cols).prop_map(move |d| Tensor::new(rows, cols, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distillation_kl_is_non_negative(seed in 0u64..1000, zl in matrix(12, 3, 5.0), zg in matrix(12, 3, 5.0), omega in 0.1f64..10.0) {
        let g = sbm(seed, 3, 4);
        let index = NeighborIndex::new(&g);
        let mut t = Tape::new();
        let v = t.constant(zl.clone()).unwrap();
        let kl = fgsd_loss(&mut t, v, &zg, &index, omega).unwrap();
        prop_assert!(t.value(kl).item() >= 0.0);
        let same = fgsd_loss(&mut t, v, &zl, &index, omega).unwrap();
        prop_assert!(t.value(same).item().abs() < 1e-12);
    }

    #[test]
    fn similarity_distribution_is_normalized(seed in 0u64..1000, z in matrix(12, 4, 10.0), omega in 0.1f64..10.0) {
        let g = sbm(seed, 3, 4);
        for i in 0..g.num_nodes() {
            let nb = g.neighbors(i).unwrap();
            if nb.is_empty() {
                continue;
            }
            let p = similarity_distribution(&z, i, nb, omega).unwrap();
            prop_assert_eq!(p.len(), nb.len());
            prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(z in matrix(6, 5, 50.0)) {
        let mut t = Tape::new();
        let v = t.constant(z).unwrap();
        let p = t.row_softmax(v).unwrap();
        for i in 0..6 {
            let row = t.value(p).row(i);
            prop_assert!(row.iter().all(|&x| x >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_is_normalized_per_node(seed in 0u64..1000, w in matrix(3, 4, 3.0), a in matrix(8, 1, 3.0)) {
        let g = sbm(seed, 3, 4);
        let mut t = Tape::new();
        let x = t.constant(g.features().clone()).unwrap();
        let head = HeadVars { weight: t.constant(w).unwrap(), attn: t.constant(a).unwrap() };
        let (_, alpha) = attention_head(&mut t, head, x, &MessageIndex::new(&g)).unwrap();
        let alpha = t.value(alpha).to_vec();
        let mut k = 0;
        for i in 0..g.num_nodes() {
            let len = 1 + g.degree(i);
            prop_assert!((alpha[k..k + len].iter().sum::<f64>() - 1.0).abs() < 1e-12);
            k += len;
        }
        prop_assert_eq!(k, alpha.len());
    }

    #[test]
    fn cka_is_bounded_symmetric_and_invariant(x in matrix(15, 4, 2.0), y in matrix(15, 3, 2.0), theta in 0.0..std::f64::consts::TAU, c in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0]) {
        let xy = linear_cka(&x, &y).unwrap();
        let yx = linear_cka(&y, &x).unwrap();
        prop_assert!((0.0..=1.0).contains(&xy));
        prop_assert!((xy - yx).abs() < 1e-12);
        prop_assert!((linear_cka(&x, &x).unwrap() - 1.0).abs() < 1e-9);
        // rotate the first two columns of x, then scale
        let mut d = x.to_vec();
        for r in 0..15 {
            let (a, b) = (d[r * 4], d[r * 4 + 1]);
            d[r * 4] = c * (theta.cos() * a - theta.sin() * b);
            d[r * 4 + 1] = c * (theta.sin() * a + theta.cos() * b);
            d[r * 4 + 2] *= c;
            d[r * 4 + 3] *= c;
        }
        let xq = Tensor::new(15, 4, d).unwrap();
        prop_assert!((linear_cka(&xq, &y).unwrap() - xy).abs() < 1e-9);
    }

    #[test]
    fn aggregation_keeps_agreed_coordinates(
        theta in prop::collection::vec(-1e3f64..1e3, 1..20),
        sizes in prop::collection::vec(1usize..1000, 1..8),
        noise in -10.0f64..10.0,
    ) {
        let clients: Vec<Vec<f64>> = (0..sizes.len())
            .map(|m| theta.iter().enumerate().map(|(k, &v)| if k % 2 == 0 { v } else { v + noise * m as f64 }).collect())
            .collect();
        let out = aggregate(&clients, &sizes).unwrap();
        for k in (0..theta.len()).step_by(2) {
            prop_assert_eq!(out[k].to_bits(), theta[k].to_bits());
        }
        let fixed = aggregate(&vec![theta.clone(); sizes.len()], &sizes).unwrap();
        prop_assert_eq!(fixed, theta);
    }

    #[test]
    fn aggregation_is_the_weighted_mean(params in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 5), 1..6), seed in 0u64..100) {
        let sizes: Vec<usize> = (0..params.len()).map(|m| 1 + (seed as usize + 7 * m) % 13).collect();
        let out = aggregate(&params, &sizes).unwrap();
        let total: usize = sizes.iter().sum();
        for k in 0..5 {
            let expected: f64 = params.iter().zip(&sizes).map(|(p, &n)| p[k] * n as f64).sum::<f64>() / total as f64;
            prop_assert!((out[k] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_augmentation_is_identity_and_views_keep_nodes(seed in 0u64..1000, edge in 0.0f64..=1.0, feat in 0.0f64..=1.0) {
        let g = sbm(seed, 3, 5);
        let g = g.clone().with_masks(split_nodes(&g, [0.6, 0.2, 0.2], seed).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let same = augment(&g, &AugmentConfig::NONE, &mut rng).unwrap();
        prop_assert_eq!(same.edges(), g.edges());
        prop_assert_eq!(same.features(), g.features());
        let cfg = AugmentConfig::new(edge, feat).unwrap();
        let (a, b) = make_views(&g, &AugmentPair { strong: cfg, weak: cfg }, &mut rng).unwrap();
        for v in [&a, &b] {
            prop_assert_eq!(v.num_nodes(), g.num_nodes());
            prop_assert_eq!(v.labels(), g.labels());
            prop_assert_eq!(v.masks().map(|m| (&m.train, &m.val, &m.test)), g.masks().map(|m| (&m.train, &m.val, &m.test)));
            prop_assert!(v.edges().iter().all(|e| g.edges().contains(e)));
        }
    }

    #[test]
    fn degrees_sum_to_twice_the_edges(seed in 0u64..1000, blocks in 1usize..5) {
        let g = sbm(seed, blocks, 6);
        let total: usize = (0..g.num_nodes()).map(|i| g.neighbors(i).unwrap().len()).sum();
        prop_assert_eq!(total, 2 * g.num_edges());
        for i in 0..g.num_nodes() {
            for &j in g.neighbors(i).unwrap() {
                prop_assert!(j != i);
                prop_assert!(g.neighbors(j).unwrap().contains(&i));
            }
        }
    }

    #[test]
    fn splits_are_disjoint_and_reproducible(seed in 0u64..1000) {
        let g = sbm(seed, 3, 9);
        let a = split_nodes(&g, [0.6, 0.2, 0.2], seed).unwrap();
        let b = split_nodes(&g, [0.6, 0.2, 0.2], seed).unwrap();
        prop_assert_eq!(&a.train, &b.train);
        let mut all: Vec<usize> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
        all.sort_unstable();
        let n = all.len();
        all.dedup();
        prop_assert_eq!(all.len(), n);
        prop_assert_eq!(n, g.num_nodes());
    }

    #[test]
    fn induced_subgraphs_keep_only_internal_edges(seed in 0u64..1000, keep in prop::collection::vec(any::<bool>(), 12)) {
        let g = sbm(seed, 3, 4);
        let nodes: Vec<usize> = (0..12).filter(|&i| keep[i]).collect();
        prop_assume!(!nodes.is_empty());
        let sub = induce_subgraph(&g, &nodes).unwrap();
        let expected = g.edges().iter().filter(|(a, b)| keep[*a] && keep[*b]).count();
        prop_assert_eq!(sub.graph.num_edges(), expected);
        prop_assert_eq!(sub.original_ids, nodes);
    }

    #[test]
    fn population_std_of_shifted_values(v in prop::collection::vec(-100.0f64..100.0, 1..10), shift in -50.0f64..50.0) {
        let a = Stat::of(&v);
        let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
        let b = Stat::of(&shifted);
        prop_assert!((b.mean - a.mean - shift).abs() < 1e-9);
        prop_assert!((b.std - a.std).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn graph_save_load_round_trip(seed in 0u64..1000) {
        let g = sbm(seed, 2, 5);
        let g = g.clone().with_masks(split_nodes(&g, [0.6, 0.2, 0.2], seed).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_graph(&g, dir.path()).unwrap();
        let back: Graph<f64> = load_graph(dir.path()).unwrap();
        prop_assert_eq!(back.edges(), g.edges());
        prop_assert_eq!(back.features(), g.features());
        prop_assert_eq!(back.labels(), g.labels());
        prop_assert_eq!(back.masks().map(|m| &m.test), g.masks().map(|m| &m.test));
    }

    #[test]
    fn checkpoint_round_trip(seed in 0u64..1000, hidden in 1usize..4, heads in 1usize..3) {
        let spec = ModelSpec::new(2, 2 * hidden * heads, 4).with_heads(heads);
        let m = GnnModel::<f64>::init(spec, seed).unwrap();
        let back: GnnModel<f64> = decode_checkpoint(&encode_checkpoint(&m)).unwrap();
        prop_assert_eq!(back.to_flat(), m.to_flat());
        let g = sbm(seed, 2, 3);
        let (h1, z1) = m.forward(&g).unwrap();
        let (h2, z2) = back.forward(&g).unwrap();
        prop_assert_eq!(h1, h2);
        prop_assert_eq!(z1, z2);
    }
}
