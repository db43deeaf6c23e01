use clenet::data::{synth_dataset, ImageLoader, SynthConfig};
use clenet::network::{encode_checkpoint, Mode};
use clenet::training::*;
use clenet::{Error, Rng};

/// Straight transcription of the bias-corrected Adam update for one scalar.
struct ScalarAdam {
    m: f64,
    v: f64,
}

impl ScalarAdam {
    fn step(&mut self, theta: f64, g: f64, t: i32, lr: f64, b1: f64, b2: f64, eps: f64) -> f64 {
        self.m = b1 * self.m + (1.0 - b1) * g;
        self.v = b2 * self.v + (1.0 - b2) * g * g;
        let m_hat = self.m / (1.0 - b1.powi(t));
        let v_hat = self.v / (1.0 - b2.powi(t));
        theta - lr * m_hat / (v_hat.sqrt() + eps)
    }
}

#[test]
fn adam_matches_scalar_reference_over_1000_steps() {
    let h = TrainingConfig::default().adam();
    let mut rng = Rng::new(11);
    let n = 5;
    let mut theta: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let mut reference: Vec<(f64, ScalarAdam)> = theta.iter().map(|&t| (t, ScalarAdam { m: 0.0, v: 0.0 })).collect();
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    for t in 1..=1000u64 {
        let g: Vec<f64> = (0..n).map(|i| rng.normal() * (i as f64 + 0.5)).collect();
        adam_update(&mut theta, &g, &mut m, &mut v, t, &h).unwrap();
        for (i, (rt, ra)) in reference.iter_mut().enumerate() {
            *rt = ra.step(*rt, g[i], t as i32, h.lr, h.beta1, h.beta2, h.eps);
            assert!((theta[i] - *rt).abs() < 1e-12, "step {t} param {i}: {} vs {}", theta[i], rt);
        }
    }
}

fn short(mode: Mode, seed: u64) -> TrainingConfig {
    TrainingConfig {
        mode,
        seed,
        epochs: 2,
        steps_per_epoch: 15,
        ..TrainingConfig::default()
    }
}

#[test]
fn log_rows_and_baseline_ablation_identity() {
    let set = synthetic_patch_set(1, 3, 32).unwrap();
    let out = train_patches(&set, &short(Mode::Baseline, 3), None).unwrap();
    assert_eq!(out.log.len(), 30);
    assert!(out.log.iter().all(|l| l.loss.mr == 0.0 && l.loss.s == 0.0 && l.loss.total == l.loss.ce));
    assert_eq!(out.log.iter().map(|l| l.step).collect::<Vec<_>>(), (1..=30).collect::<Vec<_>>());
    assert_eq!(out.log[14].epoch, 1);
    assert_eq!(out.log[15].epoch, 2);
    let enhanced = train_patches(&set, &short(Mode::Enhanced, 3), None).unwrap();
    assert!(enhanced.log.iter().all(|l| l.loss.mr > 0.0));
}

#[test]
fn same_seed_gives_identical_checkpoints_and_logs() {
    let dir = tempfile::tempdir().unwrap();
    let set = synthetic_patch_set(2, 2, 32).unwrap();
    let cfg = short(Mode::Enhanced, 5);
    let mut bytes = Vec::new();
    for run in ["a", "b"] {
        let d = dir.path().join(run);
        let o = Outputs {
            dir: &d,
            epoch_checkpoints: true,
        };
        let out = train_patches(&set, &cfg, Some(o)).unwrap();
        let model = std::fs::read(d.join("model.bin")).unwrap();
        assert_eq!(model, encode_checkpoint(&out.params));
        assert_eq!(std::fs::read(d.join("checkpoint_latest.bin")).unwrap(), model);
        bytes.push((model, std::fs::read(d.join("train_log.csv")).unwrap()));
    }
    assert_eq!(bytes[0], bytes[1]);
    let log = String::from_utf8(bytes[0].1.clone()).unwrap();
    assert_eq!(log.lines().next(), Some(LOG_HEADER));
    assert_eq!(log.lines().count(), 31);

    let other = train_patches(&set, &short(Mode::Enhanced, 6), None).unwrap();
    assert_ne!(encode_checkpoint(&other.params), bytes[0].0);
}

#[test]
fn non_finite_loss_aborts_with_step() {
    let set = synthetic_patch_set(3, 2, 32).unwrap();
    let cfg = TrainingConfig {
        lr: 1e300,
        ..short(Mode::Baseline, 1)
    };
    match train_patches(&set, &cfg, None) {
        Err(Error::NonFiniteLoss { step }) => assert!(step > 1 && step <= 30),
        other => panic!("expected a non-finite loss, got {:?}", other.map(|o| o.log.len())),
    }
}

#[test]
fn training_never_reads_test_images() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        patients: 2,
        images_per_patient: 4,
        size: 64,
        ..SynthConfig::default()
    };
    let m = synth_dataset(&cfg, dir.path()).unwrap();
    for split in make_splits(&m, SplitScheme::Lopo, 0).unwrap() {
        let loader = ImageLoader::new();
        let t = TrainingConfig {
            epochs: 1,
            steps_per_epoch: 2,
            ..TrainingConfig::default()
        };
        train(&m, &split, &t, &loader, None).unwrap();
        let read = loader.loaded();
        assert_eq!(read.len(), split.train.len());
        assert!(read.iter().all(|id| !split.test.contains(id)));
    }
}

#[test]
fn missing_image_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        patients: 2,
        images_per_patient: 2,
        size: 64,
        ..SynthConfig::default()
    };
    let m = synth_dataset(&cfg, dir.path()).unwrap();
    let split = &make_splits(&m, SplitScheme::Lopo, 0).unwrap()[0];
    std::fs::remove_file(dir.path().join(&split.train[0])).unwrap();
    let err = train(&m, split, &short(Mode::Baseline, 0), &ImageLoader::new(), None).unwrap_err();
    assert!(err.to_string().contains(&split.train[0]), "{err}");
}

#[test]
fn splits_are_disjoint_for_every_scheme() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        patients: 3,
        images_per_patient: 8,
        size: 32,
        ..SynthConfig::default()
    };
    let m = synth_dataset(&cfg, dir.path()).unwrap();
    for scheme in [SplitScheme::Lopo, SplitScheme::Kfold10, SplitScheme::Holdout33] {
        for s in make_splits(&m, scheme, 4).unwrap() {
            assert!(s.test.iter().all(|id| !s.train.contains(id)));
            assert_eq!(s.train.len() + s.test.len(), 24);
        }
    }
}
