//! Saves a trained network, reloads it, and checks that the reloaded copy
//! predicts bit-identically. Also shows how corrupt files are rejected.
//!
//! cargo run --release --example checkpoint -- [DIR]

use clenet::network::{decode_checkpoint, encode_checkpoint, load_checkpoint, predict, save_checkpoint, Mode};
use clenet::training::{synthetic_patch_set, train_patches, TrainingConfig};

fn main() -> clenet::Result<()> {
    let dir = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "checkpoint_demo".into()));
    std::fs::create_dir_all(&dir).map_err(|e| clenet::Error::Io { path: dir.clone(), source: e })?;
    let set = synthetic_patch_set(5, 2, 32)?;
    let cfg = TrainingConfig {
        mode: Mode::Enhanced,
        epochs: 1,
        steps_per_epoch: 25,
        ..TrainingConfig::default()
    };
    let trained = train_patches(&set, &cfg, None)?.params;
    let path = dir.join("model.bin");
    save_checkpoint(&trained, &path)?;
    let bytes = std::fs::read(&path).map_err(|e| clenet::Error::Io { path: path.clone(), source: e })?;
    println!("{} bytes, {} parameters, Adam step {}", bytes.len(), trained.param_count(), trained.adam.t);

    let loaded = load_checkpoint(&path)?;
    let (x, _) = set.batch(&[0, 1, 2, 3])?;
    let a = predict(&trained, &x)?;
    let b = predict(&loaded, &x)?;
    assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    assert_eq!(encode_checkpoint(&loaded), bytes);
    println!("reloaded model predicts {b:.4?}, bit-identical to the original");

    let mut corrupt = bytes.clone();
    corrupt[100] ^= 0x10;
    println!("flipped bit: {}", decode_checkpoint(&corrupt).unwrap_err());
    println!("truncated:   {}", decode_checkpoint(&bytes[..bytes.len() / 2]).unwrap_err());
    println!("wrong magic: {}", decode_checkpoint(b"NOTACHECKPOINT..").unwrap_err());
    Ok(())
}
