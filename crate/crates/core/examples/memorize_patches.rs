//! Fits four synthetic patches with Adam and prints the loss every 20
//! steps, for both network modes.
//!
//! cargo run --release --example memorize_patches -- [SEED]

use clenet::network::Mode;
use clenet::training::{synthetic_patch_set, train_patches, TrainingConfig};

fn main() -> clenet::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(0);
    let set = synthetic_patch_set(100 + seed, 2, 32)?;
    for mode in [Mode::Baseline, Mode::Enhanced] {
        let cfg = TrainingConfig {
            mode,
            seed,
            epochs: 2,
            steps_per_epoch: 100,
            ..TrainingConfig::default()
        };
        let log = train_patches(&set, &cfg, None)?.log;
        println!("{mode}:");
        for l in log.iter().filter(|l| l.step == 1 || l.step % 20 == 0) {
            println!(
                "  step {:>3}: ce {:.3e}  mr {:>9.4}  s {:.4}  total {:.4}",
                l.step, l.loss.ce, l.loss.mr, l.loss.s, l.loss.total
            );
        }
        println!("  final / initial ce = {:.3e}", log.last().unwrap().loss.ce / log[0].loss.ce);
    }
    Ok(())
}
