use std::path::{Path, PathBuf};

use super::ForwardTrace;
use crate::data::write_preview;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lays the channels of sample `n` out as a grid of tiles separated by a
/// 1-pixel gutter filled with the map's minimum.
fn mosaic(t: &Tensor, n: usize) -> (Vec<f64>, usize, usize) {
    let s = t.shape();
    let cols = (s.c as f64).sqrt().ceil() as usize;
    let rows = s.c.div_ceil(cols);
    let (w, h) = (cols * (s.w + 1) - 1, rows * (s.h + 1) - 1);
    let sample = t.sample(n);
    let lo = sample.iter().copied().fold(f64::INFINITY, f64::min);
    let mut out = vec![lo; w * h];
    for c in 0..s.c {
        let (tx, ty) = ((c % cols) * (s.w + 1), (c / cols) * (s.h + 1));
        for y in 0..s.h {
            for x in 0..s.w {
                out[(ty + y) * w + tx + x] = sample[c * s.plane() + y * s.w + x];
            }
        }
    }
    (out, w, h)
}

/// Writes every stage of the first sample of a trace as an 8-bit PGM
/// preview into `dir`, returning the files in stage order.
pub fn dump_activations(trace: &ForwardTrace, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let e = &trace.encode;
    let mut stages: Vec<(&str, &Tensor)> = vec![
        ("00_input", &e.input),
        ("01_conv1", &e.conv1_pre),
        ("02_pool1", &e.pool1),
        ("03_conv2", &e.conv2_pre),
        ("04_code", &e.pool2),
    ];
    if let Some(d) = &trace.decode {
        stages.extend([
            ("05_unpool2", &d.unpool2),
            ("06_deconv2", &d.deconv2_pre),
            ("07_unpool1", &d.unpool1),
            ("08_reconstruction", &d.x_hat),
        ]);
    }
    if let Some(r) = &trace.reencode {
        stages.push(("09_reencoded_code", &r.pool2));
    }
    let mut written = Vec::with_capacity(stages.len());
    for (name, t) in stages {
        let (values, w, h) = mosaic(t, 0);
        let path = dir.join(format!("{name}.pgm"));
        write_preview(&values, w, h, &path)?;
        written.push(path);
    }
    Ok(written)
}
