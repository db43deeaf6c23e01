//! Seeded synthetic stand-in for CLE frames.
//!
//! Every image is a 16-bit square raster with a centered circular field of
//! view (0 outside). Texture recipe, in units of a unit-range field that is
//! then mapped to `offset + gain · field`:
//!
//! * normal: 40 large Gaussian blobs (sigma 8..16 px, amplitude 0.4..1) on
//!   a flat background, plus faint pixel noise (sd 0.005);
//! * carcinoma: white noise blurred with sigma 1 px (sd about 0.35), 60
//!   small filled ellipses (semi-axes 2..5 px, amplitude ±0.4..0.9), and 10
//!   large faint blobs.
//!
//! Each patient has its own intensity offset (uniform in 4000..20000) and
//! gain (uniform in 15000..25000), a nuisance factor that is not
//! informative of the label. Labels alternate within each patient, and
//! patients cycle through the three sites.

use std::path::{Path, PathBuf};

use super::manifest::{Manifest, ManifestRow};
use super::pgm::{write_pgm16, Gray16};
use super::{Fov, Label, Site};
use crate::error::{Error, Result};
use crate::tensor::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub patients: usize,
    pub images_per_patient: usize,
    pub size: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            patients: 3,
            images_per_patient: 40,
            size: 256,
        }
    }
}

fn blob_field(rng: &mut Rng, size: usize, count: usize, sigma: (f64, f64), amp: (f64, f64), field: &mut [f64]) {
    for _ in 0..count {
        let cx = rng.uniform(0.0, size as f64);
        let cy = rng.uniform(0.0, size as f64);
        let s = rng.uniform(sigma.0, sigma.1);
        let a = rng.uniform(amp.0, amp.1);
        let reach = (3.0 * s).ceil() as isize;
        let inv = 1.0 / (2.0 * s * s);
        let (x0, y0) = (cx as isize, cy as isize);
        for y in (y0 - reach).max(0)..(y0 + reach + 1).min(size as isize) {
            let dy = y as f64 + 0.5 - cy;
            for x in (x0 - reach).max(0)..(x0 + reach + 1).min(size as isize) {
                let dx = x as f64 + 0.5 - cx;
                field[y as usize * size + x as usize] += a * (-(dx * dx + dy * dy) * inv).exp();
            }
        }
    }
}

fn blur(field: &[f64], size: usize, sigma: f64) -> Vec<f64> {
    let reach = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-reach..=reach).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / total).collect();
    let clamp = |i: isize| i.clamp(0, size as isize - 1) as usize;
    let mut tmp = vec![0.0; field.len()];
    for y in 0..size {
        for x in 0..size {
            tmp[y * size + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * field[y * size + clamp(x as isize + k as isize - reach)])
                .sum();
        }
    }
    let mut out = vec![0.0; field.len()];
    for y in 0..size {
        for x in 0..size {
            out[y * size + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * tmp[clamp(y as isize + k as isize - reach) * size + x])
                .sum();
        }
    }
    out
}

fn ellipses(rng: &mut Rng, size: usize, count: usize, field: &mut [f64]) {
    for _ in 0..count {
        let cx = rng.uniform(0.0, size as f64);
        let cy = rng.uniform(0.0, size as f64);
        let a = rng.uniform(2.0, 5.0);
        let b = rng.uniform(2.0, 5.0);
        let (s, c) = rng.uniform(0.0, std::f64::consts::PI).sin_cos();
        let amp = rng.uniform(0.4, 0.9) * if rng.next_u64() & 1 == 0 { 1.0 } else { -1.0 };
        let reach = a.max(b).ceil() as isize + 1;
        let (x0, y0) = (cx as isize, cy as isize);
        for y in (y0 - reach).max(0)..(y0 + reach + 1).min(size as isize) {
            for x in (x0 - reach).max(0)..(x0 + reach + 1).min(size as isize) {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                    field[y as usize * size + x as usize] += amp;
                }
            }
        }
    }
}

/// Renders one image of the given class.
pub fn render(rng: &mut Rng, size: usize, label: Label, offset: f64, gain: f64) -> Gray16 {
    let mut field = vec![0.0; size * size];
    match label {
        Label::Normal => {
            blob_field(rng, size, 40, (8.0, 16.0), (0.4, 1.0), &mut field);
            for v in &mut field {
                *v += 0.005 * rng.normal();
            }
        }
        Label::Carcinoma => {
            let noise: Vec<f64> = (0..size * size).map(|_| rng.normal()).collect();
            // blur with sigma 1 shrinks the sd by about 2·sqrt(pi)
            field = blur(&noise, size, 1.0).iter().map(|v| v * 0.35 * 3.545).collect();
            ellipses(rng, size, 60, &mut field);
            blob_field(rng, size, 10, (8.0, 16.0), (0.1, 0.3), &mut field);
        }
    }
    let fov = Fov::centered(size, size);
    let mut img = Gray16::new(size, size);
    for y in 0..size {
        for x in 0..size {
            if fov.contains(x, y) {
                let v = offset + gain * field[y * size + x];
                img.set(x, y, v.round().clamp(1.0, 65535.0) as u16);
            }
        }
    }
    img
}

/// Mean absolute 4-neighbour Laplacian over pixels whose neighbourhood
/// lies inside the FOV.
pub fn laplacian_energy(img: &Gray16) -> f64 {
    let fov = Fov::centered(img.width, img.height);
    let (mut total, mut count) = (0.0, 0usize);
    for y in 1..img.height.saturating_sub(1) {
        for x in 1..img.width.saturating_sub(1) {
            let hood = [(x, y), (x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)];
            if hood.iter().all(|&(a, b)| fov.contains(a, b)) {
                let v = |a: usize, b: usize| img.get(a, b) as f64;
                let lap = 4.0 * v(x, y) - v(x - 1, y) - v(x + 1, y) - v(x, y - 1) - v(x, y + 1);
                total += lap.abs();
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// File name of image `k` of patient `p`.
pub fn image_name(p: usize, k: usize) -> String {
    format!("p{p:02}_{k:03}.pgm")
}

/// Generates the images into `out_dir` and writes `manifest.csv` there.
pub fn synth_dataset(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    let out_dir = out_dir.as_ref();
    if cfg.patients == 0 || cfg.images_per_patient == 0 {
        return Err(Error::InvalidArgument("patients and images per patient must be positive".into()));
    }
    if cfg.size < 16 {
        return Err(Error::InvalidArgument(format!("image size {} is too small", cfg.size)));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut master = Rng::new(cfg.seed);
    let mut rows = Vec::with_capacity(cfg.patients * cfg.images_per_patient);
    for p in 0..cfg.patients {
        let offset = master.uniform(4000.0, 20000.0);
        let gain = master.uniform(15000.0, 25000.0);
        let mut rng = master.fork();
        let site = Site::ALL[p % Site::ALL.len()];
        for k in 0..cfg.images_per_patient {
            let label = if k % 2 == 0 { Label::Normal } else { Label::Carcinoma };
            let img = render(&mut rng, cfg.size, label, offset, gain);
            let name = image_name(p, k);
            write_pgm16(&img, out_dir.join(&name))?;
            rows.push(ManifestRow {
                path: name,
                patient_id: format!("P{p:02}"),
                site,
                label,
                mask: None,
            });
        }
    }
    let manifest = Manifest::new(PathBuf::from(out_dir), rows)?;
    manifest.write(out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes_differ_in_laplacian_energy() {
        let mut rng = Rng::new(1);
        let mut e = [0.0; 2];
        for k in 0..6 {
            let label = if k % 2 == 0 { Label::Normal } else { Label::Carcinoma };
            e[label.index()] += laplacian_energy(&render(&mut rng, 96, label, 10000.0, 20000.0));
        }
        assert!(e[1] >= 2.0 * e[0], "{e:?}");
    }

    #[test]
    fn outside_fov_is_zero() {
        let mut rng = Rng::new(2);
        let img = render(&mut rng, 64, Label::Carcinoma, 10000.0, 20000.0);
        let fov = Fov::centered(64, 64);
        for y in 0..64 {
            for x in 0..64 {
                assert_eq!(img.get(x, y) == 0, !fov.contains(x, y));
            }
        }
    }
}
