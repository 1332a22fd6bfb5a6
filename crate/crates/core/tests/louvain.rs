//! Louvain and modularity against brute-force and closed-form oracles.

use fgssl_core::diffcore::Tensor;
use fgssl_core::graph::{generate_sbm, Graph, SbmSpec};
use fgssl_core::partition::{
    client_subgraphs, communities_to_clients, louvain_partition, louvain_with_trace, modularity, CommunityAssignment,
};
use proptest::prelude::*;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn graph(n: usize, edges: &[(usize, usize)]) -> Graph<f64> {
    Graph::new(Tensor::zeros(n, 1), edges.iter().copied(), vec![0; n], 1).unwrap()
}

/// Newman modularity straight from the adjacency matrix.
fn modularity_oracle(n: usize, edges: &[(usize, usize)], community: &[usize]) -> f64 {
    let mut a = vec![vec![0.0; n]; n];
    for &(i, j) in edges {
        a[i][j] = 1.0;
        a[j][i] = 1.0;
    }
    let k: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    let two_m: f64 = k.iter().sum();
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            if community[i] == community[j] {
                q += a[i][j] - k[i] * k[j] / two_m;
            }
        }
    }
    q / two_m
}

/// Every set partition of `0..n` as a restricted growth string.
fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn grow(prefix: &mut Vec<usize>, max: usize, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for c in 0..=max + 1 {
            prefix.push(c);
            grow(prefix, max.max(c), n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n > 0 {
        grow(&mut vec![0], 0, n, &mut out);
    }
    out
}

fn same_partition(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len() && (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

fn brute_force_best(n: usize, edges: &[(usize, usize)]) -> (f64, Vec<usize>) {
    set_partitions(n)
        .into_iter()
        .map(|p| (modularity_oracle(n, edges, &p), p))
        .fold((f64::NEG_INFINITY, Vec::new()), |best, cur| if cur.0 > best.0 { cur } else { best })
}

#[test]
fn bell_numbers() {
    let counts: Vec<usize> = (1..=8).map(|n| set_partitions(n).len()).collect();
    assert_eq!(counts, vec![1, 2, 5, 15, 52, 203, 877, 4140]);
}

#[test]
fn bridged_cliques_match_brute_force() {
    let mut edges = Vec::new();
    for base in [0, 4] {
        for i in 0..4 {
            for j in i + 1..4 {
                edges.push((base + i, base + j));
            }
        }
    }
    edges.push((3, 4));
    let (best_q, best) = brute_force_best(8, &edges);
    let cliques = [0, 0, 0, 0, 1, 1, 1, 1];
    assert!(same_partition(&best, &cliques));
    let g = graph(8, &edges);
    for seed in 0..10 {
        let found = louvain_partition(&g, seed).unwrap();
        assert!(same_partition(&found.community_of, &cliques), "seed {seed}");
        assert!((modularity(&g, &found).unwrap() - best_q).abs() < 1e-12);
    }
}

#[test]
fn triangle_is_one_community() {
    let edges = [(0, 1), (1, 2), (0, 2)];
    let (_, best) = brute_force_best(3, &edges);
    assert!(same_partition(&best, &[0, 0, 0]));
    let found = louvain_partition(&graph(3, &edges), 0).unwrap();
    assert_eq!(found.count(), 1);
}

#[test]
fn two_disjoint_edges_have_modularity_one_half() {
    let g = graph(4, &[(0, 1), (2, 3)]);
    let q = modularity(&g, &CommunityAssignment::from_labels(&[0, 0, 1, 1])).unwrap();
    assert!((q - 0.5).abs() < 1e-15);
}

#[test]
fn single_community_has_zero_modularity() {
    // sum_ij k_i k_j = (2m)^2, so the null-model term cancels the edge term
    let edges = [(0, 1), (1, 2), (2, 3), (0, 2), (3, 4)];
    let g = graph(5, &edges);
    let q = modularity(&g, &CommunityAssignment::from_labels(&[0; 5])).unwrap();
    assert!(q.abs() < 1e-15);
    assert!(modularity_oracle(5, &edges, &[0; 5]).abs() < 1e-15);
}

#[test]
fn zero_edge_graph_is_an_error() {
    let g = graph(3, &[]);
    assert!(modularity(&g, &CommunityAssignment::from_labels(&[0, 1, 2])).is_err());
    assert!(louvain_partition(&g, 0).is_err());
}

#[test]
fn random_assignments_average_near_zero() {
    let g: Graph<f64> = generate_sbm(&SbmSpec {
        blocks: 2,
        nodes_per_block: 30,
        p_in: 0.2,
        p_out: 0.05,
        feature_noise: 0.0,
        seed: 1,
        signal_width: 1,
    })
    .unwrap();
    let mut total = 0.0;
    let runs = 1000;
    for seed in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..g.num_nodes()).map(|_| rng.random_range(0..4)).collect();
        total += modularity(&g, &CommunityAssignment::from_labels(&labels)).unwrap();
    }
    let mean = total / runs as f64;
    assert!(mean.abs() < 0.05, "mean modularity of random assignments {mean}");
}

#[test]
fn modularity_matches_oracle_on_random_assignments() {
    let g: Graph<f64> = generate_sbm(&SbmSpec {
        blocks: 3,
        nodes_per_block: 6,
        p_in: 0.5,
        p_out: 0.1,
        feature_noise: 0.0,
        seed: 2,
        signal_width: 1,
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let labels: Vec<usize> = (0..18).map(|_| rng.random_range(0..5)).collect();
        let q = modularity(&g, &CommunityAssignment::from_labels(&labels)).unwrap();
        assert!((q - modularity_oracle(18, g.edges(), &labels)).abs() < 1e-12);
    }
}

#[test]
fn louvain_is_deterministic_per_seed() {
    let g: Graph<f64> = generate_sbm(&SbmSpec {
        blocks: 4,
        nodes_per_block: 25,
        p_in: 0.3,
        p_out: 0.02,
        feature_noise: 0.0,
        seed: 9,
        signal_width: 1,
    })
    .unwrap();
    assert_eq!(louvain_partition(&g, 5).unwrap(), louvain_partition(&g, 5).unwrap());
}

fn sbm(seed: u64, blocks: usize) -> Graph<f64> {
    generate_sbm(&SbmSpec {
        blocks,
        nodes_per_block: 12,
        p_in: 0.4,
        p_out: 0.04,
        feature_noise: 0.0,
        seed,
        signal_width: 1,
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn modularity_trace_never_decreases(seed in 0u64..10_000, blocks in 2usize..6) {
        let g = sbm(seed, blocks);
        let (assignment, trace) = louvain_with_trace(&g, seed).unwrap();
        prop_assert!(trace.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        let q = modularity(&g, &assignment).unwrap();
        prop_assert!((-0.5..1.0).contains(&q));
        prop_assert!((q - trace.last().copied().unwrap_or(q)).abs() < 1e-9);
    }

    #[test]
    fn clients_never_split_communities(seed in 0u64..10_000, blocks in 2usize..6, m in 1usize..4) {
        let g = sbm(seed, blocks);
        let communities = louvain_partition(&g, seed).unwrap();
        prop_assume!(communities.count() >= m);
        let part = communities_to_clients(&communities, m, seed).unwrap();
        let mut owner = vec![usize::MAX; communities.count()];
        for (i, &c) in communities.community_of.iter().enumerate() {
            let client = part.client_of[i];
            prop_assert!(owner[c] == usize::MAX || owner[c] == client);
            owner[c] = client;
        }
        let subs = client_subgraphs(&g, &part).unwrap();
        let mut seen = vec![false; g.num_nodes()];
        let mut edges = std::collections::BTreeSet::new();
        for s in &subs {
            prop_assert!(s.graph.num_nodes() > 0);
            for &i in &s.original_ids {
                prop_assert!(!seen[i]);
                seen[i] = true;
            }
            for &(a, b) in s.graph.edges() {
                let e = (s.original_ids[a].min(s.original_ids[b]), s.original_ids[a].max(s.original_ids[b]));
                prop_assert!(g.edges().contains(&e));
                prop_assert!(edges.insert(e));
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
    }
}
