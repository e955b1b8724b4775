mod common;

use cometh_core::kmeans::{kmeans, select_k_silhouette, ChosenBy};
use cometh_core::metrics::Contingency;
use cometh_core::seed;
use common::blobs;
use rand::seq::SliceRandom;

#[test]
fn fixed_k_recovers_blobs() {
    for s in 0..20 {
        let (points, truth) = blobs(s);
        let c = kmeans(&points, 6, s, 10).unwrap();
        assert_eq!(c.chosen_by, ChosenBy::Fixed);
        let ari = Contingency::new(&c.assignments, &truth).unwrap().ari();
        assert_eq!(ari, 1.0, "seed {s}");
    }
}

#[test]
fn silhouette_selects_six() {
    for s in 0..20 {
        let (points, truth) = blobs(100 + s);
        let sel = select_k_silhouette(&points, 2..=14, s, 10).unwrap();
        assert_eq!(sel.k, 6, "seed {s}: {:?}", sel.scores);
        let ari = Contingency::new(&sel.clustering.assignments, &truth).unwrap().ari();
        assert_eq!(ari, 1.0);
    }
}

#[test]
fn partition_is_permutation_invariant() {
    let (points, _) = blobs(3);
    let base = kmeans(&points, 4, 9, 3).unwrap();
    let mut rng = seed::rng(1);
    for _ in 0..5 {
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.shuffle(&mut rng);
        let shuffled: Vec<Vec<f64>> = order.iter().map(|&i| points[i].clone()).collect();
        let c = kmeans(&shuffled, 4, 9, 3).unwrap();
        for (pos, &orig) in order.iter().enumerate() {
            assert_eq!(c.assignments[pos], base.assignments[orig]);
        }
        assert_eq!(c.inertia, base.inertia);
    }
}
