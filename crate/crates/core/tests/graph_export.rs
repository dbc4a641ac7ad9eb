use proptest::prelude::*;
use raindrop_core::data::{synth_generate, SynthConfig};
use raindrop_core::graph_export::{
    class_average, differential, export_dot, export_json, intra_inter_distance, read_json, snapshot_graphs,
    GraphSnapshot, DEFAULT_THRESHOLD,
};
use raindrop_core::model::graph::prune_count;
use raindrop_core::train::config_for;
use raindrop_core::ModelParams;

fn snap(label: usize, weights: Vec<f64>) -> GraphSnapshot {
    let m = (weights.len() as f64).sqrt() as usize;
    GraphSnapshot {
        id: String::new(),
        label,
        n_sensors: m,
        weights,
    }
}

#[test]
fn snapshots_respect_pruning_and_range() {
    let ds = synth_generate(&SynthConfig::new(5, 20, 8, 0.3, 1)).unwrap();
    let p = ModelParams::init(&config_for(&ds), 3).unwrap();
    let idx: Vec<usize> = (0..ds.len()).collect();
    let snaps = snapshot_graphs(&p, &ds, &idx).unwrap();
    let pruned = prune_count(50.0, 20);
    for s in &snaps {
        assert!(s.weights.iter().all(|w| (0.0..=1.0).contains(w)));
        for u in 0..5 {
            assert_eq!(s.weights[u * 5 + u], 0.0);
        }
        let zeros = (0..25).filter(|&i| i / 5 != i % 5 && s.weights[i] == 0.0).count();
        assert!(zeros >= pruned);
    }
    assert_eq!(snaps, snapshot_graphs(&p, &ds, &idx).unwrap());
}

#[test]
fn identical_samples_identical_snapshots() {
    let mut ds = synth_generate(&SynthConfig::new(4, 6, 5, 0.2, 2)).unwrap();
    ds.samples[1].events = ds.samples[0].events.clone();
    let p = ModelParams::init(&config_for(&ds), 0).unwrap();
    let s = snapshot_graphs(&p, &ds, &[0, 1]).unwrap();
    assert_eq!(s[0].weights, s[1].weights);
}

#[test]
fn single_snapshot_average_is_thresholded_copy() {
    let w = vec![0.0, 0.5, 0.05, 0.3, 0.0, 0.1, 0.09, 0.95, 0.0];
    let avg = class_average(&[snap(1, w.clone())], 1, DEFAULT_THRESHOLD).unwrap();
    let want: Vec<f64> = w.iter().map(|&x| if x < 0.1 { 0.0 } else { x }).collect();
    assert_eq!(avg, want);
}

#[test]
fn separated_clusters_are_closer_within_class() {
    let mut snaps = Vec::new();
    for i in 0..10 {
        let j = i as f64 * 0.001;
        snaps.push(snap(0, vec![0.0, 0.9 - j, 0.1 + j, 0.0]));
        snaps.push(snap(1, vec![0.0, 0.1 + j, 0.9 - j, 0.0]));
    }
    let r = intra_inter_distance(&snaps, 8, 0, 5).unwrap();
    assert!(r.intra.mean < r.inter.mean);
    assert_eq!(r.repeats, 5);
    assert!(intra_inter_distance(&snaps[..1], 2, 0, 5).is_err());
}

#[test]
fn identical_averages_give_deterministic_order() {
    let a = vec![0.3; 16];
    let d = differential(&a, &a, 4, 50).unwrap();
    assert_eq!(d.len(), 12);
    let order: Vec<(usize, usize)> = d.iter().map(|e| (e.src, e.dst)).collect();
    let mut sorted = order.clone();
    sorted.sort();
    assert_eq!(order, sorted);
}

#[test]
fn files_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let m = vec![0.0, 0.25, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let names = vec!["a".to_string(), "b".into(), "c".into()];
    export_dot(&m, Some(&names), &dir.path().join("g.dot")).unwrap();
    let dot = std::fs::read_to_string(dir.path().join("g.dot")).unwrap();
    assert!(dot.starts_with("digraph"));
    assert_eq!(dot.matches("->").count(), 1);
    assert!(export_dot(&m, None, &dir.path().join("missing/dir/g.dot")).is_err());
}

proptest! {
    #[test]
    fn json_round_trip_is_exact(w in prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0], 16)) {
        let mut w = w;
        for u in 0..4 { w[u * 5] = 0.0; }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        export_json(&w, None, &path).unwrap();
        let g = read_json(&path).unwrap();
        prop_assert_eq!(g.to_matrix().unwrap(), w.clone());
        prop_assert_eq!(g.edges.len(), w.iter().filter(|&&x| x != 0.0).count());
    }

    #[test]
    fn class_average_ignores_order(ws in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 9), 1..8), seed in any::<u64>()) {
        let snaps: Vec<GraphSnapshot> = ws.iter().map(|w| snap(1, w.clone())).collect();
        let mut shuffled = snaps.clone();
        raindrop_core::rng::SplitMix64::new(seed).shuffle(&mut shuffled);
        let a = class_average(&snaps, 1, 0.1).unwrap();
        let b = class_average(&shuffled, 1, 0.1).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-15);
        }
    }

    #[test]
    fn differential_is_sorted(p in prop::collection::vec(0.0f64..1.0, 25), n in prop::collection::vec(0.0f64..1.0, 25), top in 1usize..30) {
        let d = differential(&p, &n, 5, top).unwrap();
        prop_assert_eq!(d.len(), top.min(20));
        for w in d.windows(2) {
            prop_assert!(w[0].diff.abs() >= w[1].diff.abs());
        }
    }
}
