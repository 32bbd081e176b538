mod common;

use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::Rng;
use vlseg3d::fusion::{fuse, FusedEmbeddings};
use vlseg3d::labeling::{apply_scene_mask, class_logits, label_accuracy, label_points, pseudo_labels, SceneMask, TextEmbeddingBank};
use vlseg3d::pipeline::{prepare_scenes, pseudo_stats};
use vlseg3d::synth::{generate, SynthSpec};
use vlseg3d::IGNORE;

fn bank(rows: Array2<f32>) -> TextEmbeddingBank {
    let names = (0..rows.nrows()).map(|k| format!("c{k}")).collect();
    TextEmbeddingBank::new(names, rows).unwrap()
}

fn fused(rows: Array2<f32>, valid: Vec<bool>) -> FusedEmbeddings {
    FusedEmbeddings {
        embeddings: rows,
        view_counts: valid.iter().map(|&v| v as u32).collect(),
        valid,
    }
}

#[test]
fn logits_small_cases() {
    let b = bank(array![[1.0, 0.0], [0.0, 1.0]]);
    let f = fused(array![[1.0, 0.0], [1.0, 1.0], [5.0, 5.0]], vec![true, true, false]);
    let l = class_logits(&f, &b).unwrap();
    assert_eq!(l.row(0).to_vec(), vec![1.0, 0.0]);
    let h = std::f32::consts::FRAC_1_SQRT_2;
    assert!((l[[1, 0]] - h).abs() < 1e-6 && (l[[1, 1]] - h).abs() < 1e-6);
    assert_eq!(l.row(2).to_vec(), vec![0.0, 0.0]);
}

#[test]
fn logits_match_pairwise_loop() {
    let mut r = common::rng(2);
    let rows = Array2::from_shape_simple_fn((5, 4), || r.random_range(-1.0f32..1.0));
    let bank_rows = Array2::from_shape_simple_fn((3, 4), || r.random_range(-1.0f32..1.0));
    let l = class_logits(&fused(rows.clone(), vec![true; 5]), &bank(bank_rows.clone())).unwrap();
    for i in 0..5 {
        for k in 0..3 {
            let (a, b) = (rows.row(i), bank_rows.row(k));
            let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
            let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            assert!((l[[i, k]] as f64 - dot / (na * nb)).abs() <= 1e-6);
        }
    }
}

#[test]
fn mask_examples() {
    let m = SceneMask::new(vec![true, false, true]).unwrap();
    let l = apply_scene_mask(&array![[-0.2f32, 0.9, 0.5]], &m).unwrap();
    assert_eq!(l.row(0).to_vec(), vec![-0.2, f32::NEG_INFINITY, 0.5]);
    assert_eq!(pseudo_labels(&l, &[true]).labels, vec![2]);

    let m = SceneMask::new(vec![true, false, false]).unwrap();
    let l = apply_scene_mask(&array![[-0.5f32, -0.1, -0.2]], &m).unwrap();
    assert_eq!(pseudo_labels(&l, &[true]).labels, vec![0]);

    let raw = array![[0.1f32, 0.7, 0.3]];
    assert_eq!(apply_scene_mask(&raw, &SceneMask::all(3)).unwrap(), raw);
    assert_eq!(pseudo_labels(&raw, &[false]).labels, vec![IGNORE]);
    assert!(SceneMask::new(vec![false, false]).is_err());
    assert!(apply_scene_mask(&raw, &SceneMask::all(2)).is_err());
}

#[test]
fn ties_go_to_lowest_index() {
    assert_eq!(pseudo_labels(&array![[0.5f32, 0.5, 0.1]], &[true]).labels, vec![0]);
}

#[test]
fn masking_never_lowers_accuracy_on_distractor_suites() {
    for seed in 1..=3 {
        let suite = generate(&SynthSpec { test_scenes: 0, ..common::small_spec(seed) }).unwrap();
        let scenes: Vec<_> = suite.train.iter().map(|s| s.scene.clone()).collect();
        let stats = pseudo_stats(&prepare_scenes(&scenes, &suite.bank, 0.05).unwrap());
        let (f, u) = (stats.filtered_accuracy.unwrap(), stats.unfiltered_accuracy.unwrap());
        assert!(f >= u, "seed {seed}: masked {f} < unmasked {u}");
    }
}

#[test]
fn clean_orthonormal_scene_labels_accurately() {
    let spec = SynthSpec {
        bleed: [0.0, 0.0],
        seed: 11,
        train_scenes: 2,
        test_scenes: 0,
        ..Default::default()
    };
    let suite = generate(&spec).unwrap();
    for s in &suite.train {
        let f = fuse(&s.scene.cloud, &s.scene.views, 0.05).unwrap();
        let labels = label_points(&f, &suite.bank, None).unwrap().labels;
        let acc = label_accuracy(&labels, s.scene.cloud.gt_labels.as_ref().unwrap());
        // Nearest-pixel lookups near silhouettes can land on the surface
        // behind within tau; measured 0.989 on this suite.
        assert!(acc >= 0.985, "{}: {acc}", s.scene.name);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mask_guarantee(seed in any::<u64>(), n in 1usize..200, k in 1usize..12, d in 1usize..8) {
        let mut r = common::rng(seed);
        let mut present: Vec<bool> = (0..k).map(|_| r.random_bool(0.4)).collect();
        present[r.random_range(0..k)] = true;
        let rows = Array2::from_shape_simple_fn((n, d), || r.random_range(-1.0f32..1.0));
        let valid: Vec<bool> = (0..n).map(|_| r.random_bool(0.9)).collect();
        let b = bank(Array2::from_shape_simple_fn((k, d), || r.random_range(0.1f32..1.0)));
        let out = label_points(&fused(rows, valid.clone()), &b, Some(&SceneMask::new(present.clone()).unwrap())).unwrap();
        for (i, &l) in out.labels.iter().enumerate() {
            prop_assert_eq!(l == IGNORE, !valid[i]);
            if l != IGNORE {
                prop_assert!(present[l as usize]);
            }
        }
    }

    #[test]
    fn argmax_invariant_under_bank_scaling(seed in any::<u64>(), scale in 1e-3f32..1e3) {
        let mut r = common::rng(seed);
        let rows = Array2::from_shape_simple_fn((50, 6), || r.random_range(-1.0f32..1.0));
        let bank_rows = Array2::from_shape_simple_fn((7, 6), || r.random_range(-1.0f32..1.0));
        let f = fused(rows, vec![true; 50]);
        let a = label_points(&f, &bank(bank_rows.clone()), None).unwrap().labels;
        let b = label_points(&f, &bank(bank_rows * scale), None).unwrap().labels;
        prop_assert_eq!(a, b);
    }
}
