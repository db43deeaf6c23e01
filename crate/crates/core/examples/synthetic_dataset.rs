//! Generates a small synthetic CLE dataset, prints per-class texture
//! statistics and writes 8-bit previews of the first image of each class.
//!
//! cargo run --release --example synthetic_dataset -- [OUT_DIR]

use clenet::data::{dynamic_compress, laplacian_energy, load_images, synth_dataset, write_preview, Fov, Label, SynthConfig};

fn main() -> clenet::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synthetic_dataset".into());
    let cfg = SynthConfig {
        patients: 3,
        images_per_patient: 6,
        ..SynthConfig::default()
    };
    let manifest = synth_dataset(&cfg, &out)?;
    let images = load_images(&manifest)?;
    println!("{} images in {out}/ (manifest.csv)", images.len());

    let mut energy = [Vec::new(), Vec::new()];
    for (row, img) in manifest.rows.iter().zip(&images) {
        energy[row.label.index()].push(laplacian_energy(img));
    }
    for label in [Label::Normal, Label::Carcinoma] {
        let e = &energy[label.index()];
        println!("{:>9}: mean Laplacian energy {:.1} over {} images", label.as_str(), e.iter().sum::<f64>() / e.len() as f64, e.len());
    }

    for label in [Label::Normal, Label::Carcinoma] {
        let (row, img) = manifest.rows.iter().zip(&images).find(|(r, _)| r.label == label).unwrap();
        let fov = Fov::centered(img.width, img.height);
        let g8 = dynamic_compress(img, &fov);
        let values: Vec<f64> = g8.pixels.iter().map(|&v| v as f64).collect();
        let path = std::path::Path::new(&out).join(format!("preview_{label}.pgm"));
        write_preview(&values, g8.width, g8.height, &path)?;
        println!("{} ({}, patient {}) -> {}", row.path, row.site, row.patient_id, path.display());
    }
    Ok(())
}
