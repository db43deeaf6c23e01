use clenet::network::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, predict, save_checkpoint, Architecture, Mode, NetworkParams,
    CHECKPOINT_VERSION,
};
use clenet::training::{adam_step, AdamHyper, TrainingConfig};
use clenet::{Error, Tensor};

fn trained(mode: Mode) -> NetworkParams {
    let mut p = NetworkParams::new(Architecture::new(16, mode), 9).unwrap();
    // a few fake Adam steps so the moments are non-trivial
    let h: AdamHyper = TrainingConfig::default().adam();
    for k in 0..3 {
        let x = Tensor::from_fn((2, 1, 16, 16), |n, _, y, x| ((n + y * 3 + x * 7 + k) % 11) as f64 / 10.0);
        let trace = clenet::network::forward(&p, &x).unwrap();
        let w = TrainingConfig {
            mode,
            ..TrainingConfig::default()
        }
        .objective_weights();
        let g = clenet::objective::objective_gradients(&p, &trace, &[0, 1], &w).unwrap();
        adam_step(&mut p, &g.grads, &h).unwrap();
    }
    p
}

#[test]
fn round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for mode in [Mode::Baseline, Mode::Enhanced] {
        let p = trained(mode);
        let path = dir.path().join(format!("{mode}.bin"));
        save_checkpoint(&p, &path).unwrap();
        let q = load_checkpoint(&path).unwrap();
        assert_eq!(q.arch(), p.arch());
        assert_eq!(q.adam.t, 3);
        assert_eq!(q.adam.m, p.adam.m);
        assert_eq!(q.adam.v, p.adam.v);
        assert_eq!(q.flat(), p.flat());
        assert_eq!(encode_checkpoint(&q), std::fs::read(&path).unwrap());
        let x = Tensor::full((1, 1, 16, 16), 0.5);
        assert_eq!(predict(&p, &x).unwrap(), predict(&q, &x).unwrap());
    }
}

#[test]
fn truncation_and_corruption_fail_the_checksum() {
    let bytes = encode_checkpoint(&trained(Mode::Enhanced));
    for cut in [bytes.len() - 1, bytes.len() - 4, bytes.len() / 2, 20] {
        match decode_checkpoint(&bytes[..cut]) {
            Err(Error::CheckpointChecksum) => {}
            other => panic!("cut at {cut}: {other:?}"),
        }
    }
    let mut flipped = bytes.clone();
    flipped[bytes.len() / 3] ^= 1;
    assert!(matches!(decode_checkpoint(&flipped), Err(Error::CheckpointChecksum)));
}

#[test]
fn magic_and_version_are_checked() {
    let bytes = encode_checkpoint(&trained(Mode::Baseline));
    let mut wrong = bytes.clone();
    wrong[0] = b'X';
    assert!(matches!(decode_checkpoint(&wrong), Err(Error::CheckpointMagic)));

    let mut newer = bytes.clone();
    newer[8..12].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    let body = newer.len() - 4;
    let crc = crc32fast::hash(&newer[..body]);
    newer[body..].copy_from_slice(&crc.to_le_bytes());
    match decode_checkpoint(&newer) {
        Err(Error::CheckpointVersion { found, expected }) => {
            assert_eq!(found, CHECKPOINT_VERSION + 1);
            assert_eq!(expected, CHECKPOINT_VERSION);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn missing_file_names_the_path() {
    let err = load_checkpoint("/nonexistent/model.bin").unwrap_err();
    assert!(err.to_string().contains("/nonexistent/model.bin"));
}
