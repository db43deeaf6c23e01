use clenet::data::{extract_inscribed_patches, Fov, Gray8, Label, Site};
use clenet::evaluate::{auc, compute_metrics, confidence_interval, fuse_patches, Fusion, ImageResult};
use clenet::network::{forward, Architecture, Mode, NetworkParams};
use clenet::tensor::rand_uniform;
use clenet::Rng;
use proptest::prelude::*;

#[test]
fn reconstruction_shape_and_code_size_over_patch_sizes() {
    let mut rng = Rng::new(4);
    let mut valid = 0;
    for patch in (16..=96).step_by(8) {
        let arch = Architecture {
            conv1_filters: 4,
            conv2_filters: 4,
            ..Architecture::new(patch, Mode::Enhanced)
        };
        if arch.validate().is_err() {
            continue;
        }
        valid += 1;
        let p = NetworkParams::new(arch, patch as u64).unwrap();
        let x = rand_uniform(&mut rng, (1, 1, patch, patch), 0.0, 1.0).unwrap();
        let t = forward(&p, &x).unwrap();
        assert_eq!(t.x_hat().unwrap().shape(), x.shape(), "patch {patch}");
        assert!(t.classifier_input().len() < patch * patch);
        assert_eq!(t.classifier_input().shape(), t.encode.code().shape());
    }
    assert_eq!(valid, 11);
}

#[test]
fn oversized_codes_are_rejected_at_construction() {
    for patch in [48, 64, 96] {
        assert!(NetworkParams::new(Architecture::new(patch, Mode::Enhanced), 0).is_err(), "patch {patch}");
    }
}

fn brute_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut s = 0.0;
    for p in pos {
        for n in neg {
            s += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
        }
    }
    s / (pos.len() * neg.len()) as f64
}

fn results(probs: &[(f64, bool)]) -> Vec<ImageResult> {
    probs
        .iter()
        .enumerate()
        .map(|(i, &(prob, pos))| ImageResult {
            id: format!("img{i}"),
            site: Site::ALL[i % 3],
            label: if pos { Label::Carcinoma } else { Label::Normal },
            prob,
            seconds: 0.001 * i as f64,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn auc_equals_pairwise_enumeration(
        pos in prop::collection::vec(0u8..12, 1..100),
        neg in prop::collection::vec(0u8..12, 1..100),
    ) {
        let pos: Vec<f64> = pos.iter().map(|&v| v as f64 / 11.0).collect();
        let neg: Vec<f64> = neg.iter().map(|&v| v as f64 / 11.0).collect();
        prop_assert_eq!(auc(&pos, &neg).unwrap(), brute_auc(&pos, &neg));
    }

    #[test]
    fn wilson_interval_is_inside_unit_range_and_contains_p(total in 1usize..500, frac in 0.0f64..=1.0) {
        let correct = ((total as f64) * frac).floor() as usize;
        let (lo, hi) = confidence_interval(correct, total).unwrap();
        let p = correct as f64 / total as f64;
        prop_assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
    }

    #[test]
    fn mean_fusion_ignores_order_and_max_dominates(mut probs in prop::collection::vec(0.0f64..=1.0, 1..40), seed in any::<u64>()) {
        let a = fuse_patches(&probs, Fusion::Mean).unwrap();
        Rng::new(seed).shuffle(&mut probs);
        prop_assert_eq!(a, fuse_patches(&probs, Fusion::Mean).unwrap());
        prop_assert!(fuse_patches(&probs, Fusion::Max).unwrap() >= a);
    }

    #[test]
    fn metrics_are_recoverable_counts(rows in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..80)) {
        let images = results(&rows);
        let m = compute_metrics(&images).unwrap();
        prop_assert_eq!(m.tp + m.tn + m.fp + m.fn_, images.len());
        let k = m.accuracy * m.total as f64;
        prop_assert!((k - k.round()).abs() < 1e-9);
        prop_assert_eq!(k.round() as usize, m.correct());
        if let Some(s) = m.sensitivity {
            prop_assert_eq!(s, m.tp as f64 / (m.tp + m.fn_) as f64);
        }
        if let Some(s) = m.specificity {
            prop_assert_eq!(s, m.tn as f64 / (m.tn + m.fp) as f64);
        }
        let mean: f64 = images.iter().map(|r| r.seconds).sum::<f64>() / images.len() as f64;
        prop_assert!((m.mean_seconds - mean).abs() < 1e-15);
        for r in &images {
            prop_assert_eq!(r.predicted() == Label::Carcinoma, r.prob > 0.5);
        }
    }

    #[test]
    fn patches_stay_inside_raster_and_circle(
        w in 20usize..160,
        h in 20usize..160,
        patch in 2usize..24,
        fx in 0.0f64..1.0,
        fy in 0.0f64..1.0,
        fr in 0.1f64..1.0,
    ) {
        // circle placed anywhere it still fits, including flush with an edge
        let r_max = (w.min(h) as f64) / 2.0;
        let r = (fr * r_max).max(1.0);
        let cx = r + fx * (w as f64 - 2.0 * r);
        let cy = r + fy * (h as f64 - 2.0 * r);
        let fov = Fov { cx, cy, r };
        let img = Gray8::new(w, h);
        if let Ok(patches) = extract_inscribed_patches(&img, &fov, patch, "p") {
            for p in patches {
                let (ox, oy) = p.offset;
                prop_assert!(ox + patch <= w && oy + patch <= h);
                for (x, y) in [(ox, oy), (ox + patch, oy), (ox, oy + patch), (ox + patch, oy + patch)] {
                    let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                    prop_assert!(dx * dx + dy * dy <= r * r + 1e-9);
                }
            }
        }
    }
}
