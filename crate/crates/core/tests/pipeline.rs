//! End-to-end runs on small synthetic graphs.

use fgssl_core::analysis::{pairwise_client_cka, read_metrics, write_metrics};
use fgssl_core::federation::{run_experiment, run_seeds, summarize, Method, TrainConfig};
use fgssl_core::graph::{generate_sbm, split_nodes, Graph, SbmSpec};
use fgssl_core::partition::{communities_to_clients, louvain_partition, ClientPartition};

fn setup() -> (Graph<f64>, ClientPartition) {
    let g: Graph<f64> = generate_sbm(&SbmSpec {
        blocks: 3,
        nodes_per_block: 40,
        p_in: 0.15,
        p_out: 0.02,
        feature_noise: 2.0,
        seed: 3,
        signal_width: 4,
    })
    .unwrap();
    let g = g.clone().with_masks(split_nodes(&g, [0.6, 0.2, 0.2], 0).unwrap()).unwrap();
    let part = communities_to_clients(&louvain_partition(&g, 0).unwrap(), 3, 0).unwrap();
    (g, part)
}

fn config(method: Method, rounds: usize) -> TrainConfig {
    TrainConfig {
        method,
        rounds,
        hidden: 16,
        ..TrainConfig::default()
    }
}

#[test]
fn metrics_have_one_row_per_round_and_method() {
    let (g, part) = setup();
    let mut rows = Vec::new();
    for m in Method::ALL {
        let r = run_experiment(&config(m, 3), &g, &part, 0).unwrap();
        assert_eq!(r.rounds.len(), 3);
        assert!(r.rounds.iter().all(|x| (0.0..=1.0).contains(&x.test_acc)));
        rows.extend(r.rounds);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    write_metrics(&rows, &path).unwrap();
    let back = read_metrics(&path).unwrap();
    assert_eq!(back, rows);
    for m in Method::ALL {
        assert_eq!(back.iter().filter(|r| r.method == m).count(), 3);
    }
}

#[test]
fn summaries_group_seeds_per_method() {
    let (g, part) = setup();
    let mut runs = run_seeds(&config(Method::FedAvg, 2), &g, &part, &[0, 1, 2]).unwrap();
    runs.extend(run_seeds(&config(Method::Local, 2), &g, &part, &[0, 1, 2]).unwrap());
    let s = summarize(&runs);
    assert_eq!(s.len(), 2);
    assert_eq!(s[0].method, Method::FedAvg);
    assert_eq!(s[0].seeds, vec![0, 1, 2]);
    let finals: Vec<f64> = runs[..3].iter().map(|r| r.final_test()).collect();
    let mean = finals.iter().sum::<f64>() / 3.0;
    assert!((s[0].final_test.mean - mean).abs() < 1e-15);
}

#[test]
fn federated_clients_are_more_similar_than_local_ones() {
    let (g, part) = setup();
    let test = g.masks().unwrap().test.clone();
    let cka = |m: Method| {
        let r = run_experiment(&config(m, 20), &g, &part, 0).unwrap();
        pairwise_client_cka(&r.client_models, &g, &test).unwrap()
    };
    let local = cka(Method::Local);
    let ours = cka(Method::Fgssl);
    for report in [&local, &ours] {
        assert_eq!(report.size(), 3);
        for i in 0..3 {
            assert!((report.matrix[i][i] - 1.0).abs() < 1e-9);
            for j in 0..3 {
                assert!((report.matrix[i][j] - report.matrix[j][i]).abs() < 1e-9);
            }
        }
    }
    assert!(
        ours.mean_off_diagonal() > local.mean_off_diagonal(),
        "FGSSL {} vs Local {}",
        ours.mean_off_diagonal(),
        local.mean_off_diagonal()
    );
}
