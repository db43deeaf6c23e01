//! Trains the baseline CNN and the enhanced (autoencoder + sparsity)
//! network on the same synthetic holdout split, then prints both test
//! reports and a side-by-side comparison.
//!
//! cargo run --release --example train_baseline_vs_enhanced -- [EPOCHS] [OUT_DIR]

use clenet::data::{synth_dataset, ImageLoader, SynthConfig};
use clenet::evaluate::{compare, evaluate, Fusion};
use clenet::network::Mode;
use clenet::training::{make_splits, train, Outputs, SplitScheme, TrainingConfig};

fn main() -> clenet::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(5);
    let out = std::path::PathBuf::from(args.next().unwrap_or_else(|| "baseline_vs_enhanced".into()));
    let data = SynthConfig {
        images_per_patient: 12,
        ..SynthConfig::default()
    };
    let manifest = synth_dataset(&data, out.join("data"))?;
    let split = make_splits(&manifest, SplitScheme::Holdout33, 0)?.remove(0);
    println!("{} training / {} test images, {epochs} x 100 steps", split.train.len(), split.test.len());

    let mut reports = Vec::new();
    for mode in [Mode::Baseline, Mode::Enhanced] {
        let cfg = TrainingConfig {
            mode,
            epochs,
            ..TrainingConfig::default()
        };
        let dir = out.join(mode.as_str());
        let loader = ImageLoader::new();
        let start = std::time::Instant::now();
        let outcome = train(&manifest, &split, &cfg, &loader, Some(Outputs { dir: &dir, epoch_checkpoints: false }))?;
        let last = outcome.log.last().unwrap().loss;
        println!(
            "{mode}: {:.1} s, final ce {:.4} mr {:.3} s {:.3} total {:.4}",
            start.elapsed().as_secs_f64(),
            last.ce,
            last.mr,
            last.s,
            last.total
        );
        let train_acc = evaluate(&outcome.params, &manifest, &split.train, Fusion::Mean, &loader)?.overall.accuracy;
        let report = evaluate(&outcome.params, &manifest, &split.test, Fusion::Mean, &loader)?;
        println!("  train accuracy {train_acc:.4}, test accuracy {:.4}", report.overall.accuracy);
        report.write(dir.join("test_report.csv"), "csv")?;
        reports.push(report);
    }
    println!("\n{}", reports[1].to_markdown());
    println!("{}", compare(&reports[0], "baseline", &reports[1], "enhanced")?.to_markdown());
    Ok(())
}
