//! Builds leave-one-patient-out, 10-fold and 33% holdout splits of a
//! synthetic manifest, then runs a short leave-one-patient-out experiment.
//!
//! cargo run --release --example cross_validation -- [STEPS]

use clenet::data::{synth_dataset, ImageLoader, SynthConfig};
use clenet::evaluate::{evaluate, Fusion};
use clenet::network::Mode;
use clenet::training::{make_splits, train, SplitScheme, TrainingConfig};

fn main() -> clenet::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(150);
    let dir = std::env::temp_dir().join("clenet_cross_validation");
    let manifest = synth_dataset(
        &SynthConfig {
            patients: 4,
            images_per_patient: 6,
            size: 128,
            ..SynthConfig::default()
        },
        &dir,
    )?;
    for scheme in [SplitScheme::Lopo, SplitScheme::Kfold10, SplitScheme::Holdout33] {
        let splits = make_splits(&manifest, scheme, 1)?;
        let sizes: Vec<usize> = splits.iter().map(|s| s.test.len()).collect();
        println!("{scheme}: {} splits, test sizes {sizes:?}", splits.len());
    }

    let cfg = TrainingConfig {
        mode: Mode::Baseline,
        epochs: 1,
        steps_per_epoch: steps,
        ..TrainingConfig::default()
    };
    let mut correct = 0;
    let mut total = 0;
    for split in make_splits(&manifest, SplitScheme::Lopo, 1)? {
        let loader = ImageLoader::new();
        let model = train(&manifest, &split, &cfg, &loader, None)?.params;
        let r = evaluate(&model, &manifest, &split.test, Fusion::Mean, &loader)?;
        println!("  {}: accuracy {:.4} on {} images", split.name, r.overall.accuracy, r.overall.total);
        correct += r.overall.correct();
        total += r.overall.total;
    }
    println!("pooled leave-one-patient-out accuracy {:.4}", correct as f64 / total as f64);
    Ok(())
}
