//! Dataset generation, ingestion and client partitioning.

use fedspzo::data::{load_csv, make_blobs, partition, PartitionScheme};
use std::fs;

fn entropy(labels: &[usize], classes: usize) -> f64 {
    let mut counts = vec![0usize; classes];
    for &l in labels {
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn mean_client_entropy(labels: &[usize], alpha: f64, seeds: std::ops::Range<u64>) -> f64 {
    let mut total = 0.0;
    let mut clients = 0;
    for seed in seeds {
        let plan = partition(labels, 10, PartitionScheme::Dirichlet { alpha }, seed).unwrap();
        for idx in plan.client_indices() {
            let local: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            total += entropy(&local, 4);
            clients += 1;
        }
    }
    total / clients as f64
}

#[test]
fn dirichlet_concentration_controls_label_skew() {
    let data = make_blobs(400, 2, 4, 1.0, 3).unwrap();
    let skewed = mean_client_entropy(data.labels(), 0.1, 0..50);
    let mixed = mean_client_entropy(data.labels(), 100.0, 0..50);
    assert!(skewed < mixed, "entropy α=0.1: {skewed}, α=100: {mixed}");
    assert!(mixed > 0.9 * 4f64.ln(), "α=100 should be close to uniform, got {mixed}");
}

#[test]
fn iid_split_of_2000_gives_100_each() {
    let data = make_blobs(2000, 4, 4, 1.0, 9).unwrap();
    let plan = partition(data.labels(), 20, PartitionScheme::Iid, 1).unwrap();
    let shards = plan.client_indices();
    assert_eq!(shards.len(), 20);
    assert!(shards.iter().all(|s| s.len() == 100));
    let mut seen: Vec<usize> = shards.concat();
    seen.sort_unstable();
    assert_eq!(seen, (0..2000).collect::<Vec<_>>());
}

#[test]
fn single_client_takes_everything() {
    let data = make_blobs(50, 3, 2, 1.0, 2).unwrap();
    for scheme in [PartitionScheme::Iid, PartitionScheme::Dirichlet { alpha: 0.5 }] {
        let plan = partition(data.labels(), 1, scheme, 4).unwrap();
        assert!(plan.assignment.iter().all(|&c| c == 0));
    }
}

#[test]
fn partitions_are_deterministic_and_reject_infeasible_counts() {
    let data = make_blobs(60, 3, 3, 1.0, 2).unwrap();
    let scheme = PartitionScheme::Dirichlet { alpha: 0.3 };
    assert_eq!(
        partition(data.labels(), 6, scheme, 8).unwrap(),
        partition(data.labels(), 6, scheme, 8).unwrap()
    );
    assert!(partition(data.labels(), 61, PartitionScheme::Iid, 8).is_err());
    assert!(partition(data.labels(), 0, PartitionScheme::Iid, 8).is_err());
}

#[test]
fn csv_fixture_and_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = dir.path().join("three.csv");
    fs::write(&fixture, "x1,x2,label\n1.0,2.0,a\n3.0,4.0,b\n5.0,6.0,a\n").unwrap();
    let data = load_csv(&fixture, "label").unwrap();
    assert_eq!(data.labels(), &[0, 1, 0]);
    assert_eq!(data.num_classes(), 2);
    assert_eq!(data.row(2), &[5.0, 6.0]);

    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    assert!(load_csv(&empty, "label").is_err());
}
