//! Patch fusion, AUC, Wilson intervals and report emission on a handful of
//! made-up image results.
//!
//! cargo run --release --example evaluate_metrics

use clenet::data::{Label, Site};
use clenet::evaluate::{auc, confidence_interval, fuse_patches, EvalReport, Fusion, ImageResult};

fn main() -> clenet::Result<()> {
    let patches = [0.9, 0.3, 0.6];
    println!(
        "patches {patches:?}: mean fusion {}, max fusion {}",
        fuse_patches(&patches, Fusion::Mean)?,
        fuse_patches(&patches, Fusion::Max)?
    );
    println!("AUC of pos {{0.9, 0.4}} vs neg {{0.6, 0.2}} = {:?}", auc(&[0.9, 0.4], &[0.6, 0.2]));
    for (k, n) in [(87, 100), (0, 10), (10, 10)] {
        let (lo, hi) = confidence_interval(k, n)?;
        println!("Wilson 95% interval for {k}/{n}: ({lo:.4}, {hi:.4})");
    }

    let rows = [
        ("a.pgm", Site::VocalFold, Label::Normal, 0.12),
        ("b.pgm", Site::VocalFold, Label::Carcinoma, 0.91),
        ("c.pgm", Site::OralCavity, Label::Carcinoma, 0.44),
        ("d.pgm", Site::OralCavity, Label::Normal, 0.08),
        ("e.pgm", Site::Both, Label::Carcinoma, 0.77),
        ("f.pgm", Site::Both, Label::Normal, 0.61),
    ];
    let images = rows
        .iter()
        .map(|&(id, site, label, prob)| ImageResult {
            id: id.into(),
            site,
            label,
            prob,
            seconds: 0.01,
        })
        .collect();
    let report = EvalReport::new(images, Fusion::Mean)?;
    print!("{}", report.to_csv());
    println!();
    print!("{}", report.to_markdown());
    Ok(())
}
