//! Images, manifests and the path from a 16-bit source frame to a batch of
//! normalized patches.

pub mod manifest;
pub mod pgm;
pub mod synth;

pub use manifest::{Manifest, ManifestRow};
pub use pgm::{Gray16, Gray8};
pub use synth::{laplacian_energy, synth_dataset, SynthConfig};

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Site {
    VocalFold,
    OralCavity,
    Both,
}

impl Site {
    pub const ALL: [Site; 3] = [Site::VocalFold, Site::OralCavity, Site::Both];

    pub fn as_str(&self) -> &'static str {
        match self {
            Site::VocalFold => "vocal_fold",
            Site::OralCavity => "oral_cavity",
            Site::Both => "both",
        }
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Site {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Site::ALL
            .into_iter()
            .find(|site| site.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown site '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Normal,
    Carcinoma,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Carcinoma => "carcinoma",
        }
    }

    /// Class index used by the network head (carcinoma = 1).
    pub fn index(&self) -> usize {
        match self {
            Label::Normal => 0,
            Label::Carcinoma => 1,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Label::Normal),
            1 => Ok(Label::Carcinoma),
            _ => Err(Error::LabelOutOfRange { label: i, classes: 2 }),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Label::Normal),
            "carcinoma" => Ok(Label::Carcinoma),
            _ => Err(Error::InvalidArgument(format!("unknown label '{s}'"))),
        }
    }
}

/// Circular field of view in pixel coordinates (pixel `(x, y)` has its
/// center at `(x + 0.5, y + 0.5)`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fov {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

impl Fov {
    /// Largest centered circle of a `width × height` raster.
    pub fn centered(width: usize, height: usize) -> Self {
        Fov {
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            r: width.min(height) as f64 / 2.0,
        }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        let dx = x as f64 + 0.5 - self.cx;
        let dy = y as f64 + 0.5 - self.cy;
        dx * dx + dy * dy <= self.r * self.r
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.r > 0.0
            && self.cx - self.r >= 0.0
            && self.cy - self.r >= 0.0
            && self.cx + self.r <= width as f64
            && self.cy + self.r <= height as f64
    }

    /// Side of the inscribed axis-aligned square, `floor(r·√2)`.
    pub fn inscribed_side(&self) -> usize {
        (self.r * std::f64::consts::SQRT_2).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageMeta {
    pub id: String,
    pub patient_id: String,
    pub site: Site,
    pub label: Label,
}

/// A 16-bit source frame with its field of view and metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct CleImage {
    pub pixels: Gray16,
    pub fov: Fov,
    pub meta: ImageMeta,
}

impl CleImage {
    pub fn new(pixels: Gray16, fov: Fov, meta: ImageMeta) -> Result<Self> {
        if !fov.fits(pixels.width, pixels.height) {
            return Err(Error::InvalidArgument(format!(
                "field of view {fov:?} does not fit a {}x{} raster",
                pixels.width, pixels.height
            )));
        }
        if meta.id.is_empty() || meta.patient_id.is_empty() {
            return Err(Error::InvalidArgument("image and patient ids must be non-empty".into()));
        }
        Ok(CleImage { pixels, fov, meta })
    }
}

/// Square 8-bit crop fed to the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub pixels: Gray8,
    pub source: String,
    /// Top-left corner of the crop in the source raster.
    pub offset: (usize, usize),
    /// Rotation applied to the source before cropping, in degrees.
    pub angle: f64,
}

impl Patch {
    pub fn side(&self) -> usize {
        self.pixels.width
    }

    /// Values `v / 255` in row-major order.
    pub fn normalized(&self) -> impl Iterator<Item = f64> + '_ {
        self.pixels.pixels.iter().map(|&v| v as f64 / 255.0)
    }
}

/// Stacks patches into an `(n, 1, P, P)` tensor of values in `[0, 1]`.
pub fn patches_to_tensor(patches: &[&Patch]) -> Result<Tensor> {
    let first = patches.first().ok_or(Error::Empty("patches_to_tensor"))?;
    let p = first.side();
    let mut data = Vec::with_capacity(patches.len() * p * p);
    for patch in patches {
        if patch.pixels.width != p || patch.pixels.height != p {
            return Err(Error::InvalidArgument(format!(
                "patch {}x{} in a batch of {p}x{p}",
                patch.pixels.width, patch.pixels.height
            )));
        }
        data.extend(patch.normalized());
    }
    Tensor::from_vec((patches.len(), 1, p, p), data)
}

/// Nearest-rank percentile of sorted values: the `ceil(q/100 · N)`-th value.
fn nearest_rank(sorted: &[u16], q: f64) -> u16 {
    let n = sorted.len();
    let rank = ((q / 100.0) * n as f64).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

/// Maps the 1st..99th percentile of in-FOV values linearly onto 0..255,
/// clamping outside that range. Pixels outside the FOV become 0, and a
/// degenerate range yields an all-zero image.
pub fn dynamic_compress(img: &Gray16, fov: &Fov) -> Gray8 {
    let mut inside = Vec::new();
    for y in 0..img.height {
        for x in 0..img.width {
            if fov.contains(x, y) {
                inside.push(img.get(x, y));
            }
        }
    }
    let mut out = Gray8::new(img.width, img.height);
    if inside.is_empty() {
        return out;
    }
    inside.sort_unstable();
    let lo = nearest_rank(&inside, 1.0) as f64;
    let hi = nearest_rank(&inside, 99.0) as f64;
    if hi <= lo {
        return out;
    }
    for y in 0..img.height {
        for x in 0..img.width {
            if fov.contains(x, y) {
                let t = ((img.get(x, y) as f64 - lo) / (hi - lo)).clamp(0.0, 1.0);
                out.set(x, y, (255.0 * t).round() as u8);
            }
        }
    }
    out
}

/// Tiles the inscribed square of the FOV with non-overlapping `P × P`
/// patches, row-major, dropping partial tiles. The tiled grid is centered
/// on the FOV.
pub fn extract_inscribed_patches(img: &Gray8, fov: &Fov, patch: usize, source: &str) -> Result<Vec<Patch>> {
    extract_rotated_patches(img, fov, patch, source, 0.0)
}

fn extract_rotated_patches(img: &Gray8, fov: &Fov, patch: usize, source: &str, angle: f64) -> Result<Vec<Patch>> {
    if patch == 0 {
        return Err(Error::InvalidArgument("patch size must be positive".into()));
    }
    if !fov.fits(img.width, img.height) {
        return Err(Error::InvalidArgument(format!(
            "field of view {fov:?} does not fit a {}x{} raster",
            img.width, img.height
        )));
    }
    let side = fov.inscribed_side();
    if side < patch {
        return Err(Error::PatchTooLarge { side, patch });
    }
    let mut k = side / patch;
    let (x0, y0) = loop {
        let g = (k * patch) as f64;
        let x0 = (fov.cx - g / 2.0).floor().max(0.0) as usize;
        let y0 = (fov.cy - g / 2.0).floor().max(0.0) as usize;
        let far = |o: usize, c: f64| (o as f64 - c).abs().max((o as f64 + g - c).abs());
        let (dx, dy) = (far(x0, fov.cx), far(y0, fov.cy));
        let inside = dx * dx + dy * dy <= fov.r * fov.r;
        let in_raster = x0 + k * patch <= img.width && y0 + k * patch <= img.height;
        if inside && in_raster {
            break (x0, y0);
        }
        k -= 1;
        if k == 0 {
            return Err(Error::PatchTooLarge { side, patch });
        }
    };
    let mut out = Vec::with_capacity(k * k);
    for ty in 0..k {
        for tx in 0..k {
            let (ox, oy) = (x0 + tx * patch, y0 + ty * patch);
            let mut pixels = Gray8::new(patch, patch);
            for y in 0..patch {
                let row = &img.pixels[(oy + y) * img.width + ox..][..patch];
                pixels.pixels[y * patch..(y + 1) * patch].copy_from_slice(row);
            }
            out.push(Patch {
                pixels,
                source: source.to_string(),
                offset: (ox, oy),
                angle,
            });
        }
    }
    Ok(out)
}

/// Rotates an image about the FOV center by `degrees` with bilinear
/// interpolation; samples from outside the FOV and pixels outside it are 0.
pub fn rotate(img: &Gray8, fov: &Fov, degrees: f64) -> Gray8 {
    let (s, c) = degrees.to_radians().sin_cos();
    let mut out = Gray8::new(img.width, img.height);
    let sample = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x as usize >= img.width || y as usize >= img.height {
            return 0.0;
        }
        let (x, y) = (x as usize, y as usize);
        if fov.contains(x, y) {
            img.get(x, y) as f64
        } else {
            0.0
        }
    };
    for y in 0..img.height {
        for x in 0..img.width {
            if !fov.contains(x, y) {
                continue;
            }
            let dx = x as f64 + 0.5 - fov.cx;
            let dy = y as f64 + 0.5 - fov.cy;
            // inverse rotation gives the source position, in pixel-center units
            let sx = c * dx + s * dy + fov.cx - 0.5;
            let sy = -s * dx + c * dy + fov.cy - 0.5;
            let (fx, fy) = (sx.floor(), sy.floor());
            let (ax, ay) = (sx - fx, sy - fy);
            let (ix, iy) = (fx as isize, fy as isize);
            let v = (1.0 - ax) * (1.0 - ay) * sample(ix, iy)
                + ax * (1.0 - ay) * sample(ix + 1, iy)
                + (1.0 - ax) * ay * sample(ix, iy + 1)
                + ax * ay * sample(ix + 1, iy + 1);
            out.set(x, y, v.round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

/// One additional copy of a source image, rotated by a uniform angle in
/// `[0, 360)` degrees drawn from `rng`. Returns the copy and its angle.
pub fn augment_rotate(img: &Gray8, fov: &Fov, rng: &mut Rng) -> (Gray8, f64) {
    let angle = rng.uniform(0.0, 360.0);
    (rotate(img, fov, angle), angle)
}

/// Compressed, tiled patches of one image, optionally rotated first.
pub fn image_patches(raw: &Gray16, patch: usize, source: &str, angle: Option<f64>) -> Result<Vec<Patch>> {
    let fov = Fov::centered(raw.width, raw.height);
    let img8 = dynamic_compress(raw, &fov);
    match angle {
        None => extract_inscribed_patches(&img8, &fov, patch, source),
        Some(a) => extract_rotated_patches(&rotate(&img8, &fov, a), &fov, patch, source, a),
    }
}

/// Reads manifest images and records every path it touched.
#[derive(Debug, Default)]
pub struct ImageLoader {
    log: Mutex<Vec<String>>,
}

impl ImageLoader {
    pub fn new() -> Self {
        ImageLoader::default()
    }

    pub fn load(&self, manifest: &Manifest, row: &ManifestRow) -> Result<Gray16> {
        self.log
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(row.path.clone());
        pgm::read_pgm16(manifest.resolve(row))
    }

    /// Image ids read so far, in order.
    pub fn loaded(&self) -> Vec<String> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

/// Loads every image of a manifest in manifest order.
pub fn load_images(manifest: &Manifest) -> Result<Vec<Gray16>> {
    manifest
        .rows
        .iter()
        .map(|r| pgm::read_pgm16(manifest.resolve(r)))
        .collect()
}

/// Writes an 8-bit preview of an arbitrary real map, min-max scaled.
pub fn write_preview(values: &[f64], width: usize, height: usize, path: &Path) -> Result<()> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let img = Gray8 {
        width,
        height,
        pixels: values
            .iter()
            .map(|&v| (255.0 * (v - lo) / span).round().clamp(0.0, 255.0) as u8)
            .collect(),
    };
    pgm::write_pgm8(&img, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_compresses_to_zero() {
        let img = Gray16 {
            width: 8,
            height: 8,
            pixels: vec![1234; 64],
        };
        let out = dynamic_compress(&img, &Fov::centered(8, 8));
        assert!(out.pixels.iter().all(|&v| v == 0));
    }

    #[test]
    fn ramp_midpoint_maps_near_128() {
        // every in-FOV value of 0..=65535 exactly once
        let w = 300;
        let fov = Fov::centered(w, w);
        let coords: Vec<(usize, usize)> = (0..w * w).map(|i| (i % w, i / w)).filter(|&(x, y)| fov.contains(x, y)).collect();
        let n = coords.len();
        let mut img = Gray16::new(w, w);
        let mut mid = None;
        for (i, &(x, y)) in coords.iter().enumerate() {
            let v = (i as f64 * 65535.0 / (n - 1) as f64).round() as u16;
            img.set(x, y, v);
            if mid.is_none() && v >= 32768 {
                mid = Some((x, y, v));
            }
        }
        let out = dynamic_compress(&img, &fov);
        let (x, y, v) = mid.unwrap();
        let mut sorted: Vec<u16> = coords.iter().map(|&(x, y)| img.get(x, y)).collect();
        sorted.sort();
        let lo = sorted[(0.01 * n as f64).ceil() as usize - 1] as f64;
        let hi = sorted[(0.99 * n as f64).ceil() as usize - 1] as f64;
        let want = (255.0 * (v as f64 - lo) / (hi - lo)).round();
        assert_eq!(out.get(x, y) as f64, want);
        assert!((out.get(x, y) as i32 - 128).abs() <= 1);
    }

    #[test]
    fn compression_is_monotone_and_fov_restricted() {
        let mut rng = Rng::new(3);
        for _ in 0..5 {
            let (w, h) = (20 + rng.below(20), 20 + rng.below(20));
            let img = Gray16 {
                width: w,
                height: h,
                pixels: (0..w * h).map(|_| rng.below(65536) as u16).collect(),
            };
            let fov = Fov::centered(w, h);
            let out = dynamic_compress(&img, &fov);
            let mut pairs: Vec<(u16, u8)> = Vec::new();
            for y in 0..h {
                for x in 0..w {
                    if fov.contains(x, y) {
                        pairs.push((img.get(x, y), out.get(x, y)));
                    } else {
                        assert_eq!(out.get(x, y), 0);
                    }
                }
            }
            pairs.sort();
            assert!(pairs.windows(2).all(|p| p[0].1 <= p[1].1));
        }
    }

    #[test]
    fn radius_100_patch_64_gives_four_tiles() {
        let img = Gray8::new(200, 200);
        let fov = Fov::centered(200, 200);
        assert_eq!(fov.inscribed_side(), 141);
        let patches = extract_inscribed_patches(&img, &fov, 64, "a").unwrap();
        assert_eq!(patches.len(), 4);
        for p in &patches {
            let (ox, oy) = p.offset;
            for (x, y) in [(ox, oy), (ox + 64, oy), (ox, oy + 64), (ox + 64, oy + 64)] {
                let d = ((x as f64 - fov.cx).powi(2) + (y as f64 - fov.cy).powi(2)).sqrt();
                assert!(d <= fov.r);
            }
        }
        assert!(matches!(
            extract_inscribed_patches(&img, &fov, 142, "a"),
            Err(Error::PatchTooLarge { side: 141, patch: 142 })
        ));
    }

    #[test]
    fn off_center_fov_stays_in_raster() {
        let img = Gray8::new(90, 70);
        for fov in [
            Fov { cx: 35.0, cy: 35.0, r: 35.0 },
            Fov { cx: 55.0, cy: 35.0, r: 35.0 },
            Fov { cx: 45.5, cy: 20.25, r: 20.0 },
        ] {
            let patches = extract_inscribed_patches(&img, &fov, 8, "a").unwrap();
            assert!(!patches.is_empty());
            for p in &patches {
                assert!(p.offset.0 + 8 <= 90 && p.offset.1 + 8 <= 70);
            }
        }
        assert!(extract_inscribed_patches(&img, &Fov { cx: 80.0, cy: 35.0, r: 35.0 }, 8, "a").is_err());
    }

    #[test]
    fn rotation_of_radial_profile_is_nearly_invariant() {
        let w = 101;
        let fov = Fov::centered(w, w);
        let mut img = Gray8::new(w, w);
        for y in 0..w {
            for x in 0..w {
                if fov.contains(x, y) {
                    let d = ((x as f64 + 0.5 - fov.cx).powi(2) + (y as f64 + 0.5 - fov.cy).powi(2)).sqrt();
                    img.set(x, y, (255.0 * (1.0 - d / fov.r)).round() as u8);
                }
            }
        }
        let mut rng = Rng::new(12);
        for _ in 0..4 {
            let (rot, _) = augment_rotate(&img, &fov, &mut rng);
            for y in 0..w {
                for x in 0..w {
                    if fov.contains(x, y) {
                        assert!((rot.get(x, y) as i32 - img.get(x, y) as i32).abs() <= 2);
                    }
                }
            }
        }
        let a: Vec<f64> = {
            let mut r = Rng::new(5);
            (0..3).map(|_| augment_rotate(&img, &fov, &mut r).1).collect()
        };
        let b: Vec<f64> = {
            let mut r = Rng::new(5);
            (0..3).map(|_| augment_rotate(&img, &fov, &mut r).1).collect()
        };
        assert_eq!(a, b);
        assert!(a.iter().all(|v| (0.0..360.0).contains(v)));
    }

    #[test]
    fn zero_rotation_is_identity_inside_fov() {
        let mut rng = Rng::new(1);
        let img = Gray8 {
            width: 30,
            height: 30,
            pixels: (0..900).map(|_| rng.below(256) as u8).collect(),
        };
        let fov = Fov::centered(30, 30);
        let rot = rotate(&img, &fov, 0.0);
        for y in 0..30 {
            for x in 0..30 {
                let want = if fov.contains(x, y) { img.get(x, y) } else { 0 };
                assert_eq!(rot.get(x, y), want);
            }
        }
    }

    #[test]
    fn tensor_is_exact_division_by_255() {
        let p = Patch {
            pixels: Gray8 {
                width: 2,
                height: 2,
                pixels: vec![0, 51, 255, 7],
            },
            source: "s".into(),
            offset: (0, 0),
            angle: 0.0,
        };
        let t = patches_to_tensor(&[&p, &p]).unwrap();
        assert_eq!(t.shape(), (2, 1, 2, 2).into());
        assert_eq!(t.data()[..4], [0.0, 51.0 / 255.0, 1.0, 7.0 / 255.0]);
    }
}
