//! Max pooling with recorded switches, and the unpooling that scatters
//! pooled values back through them.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Argmax switches recorded by [`maxpool_forward`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    input_shape: Shape,
    pooled_shape: Shape,
    window: usize,
    stride: usize,
    /// `(h, w)` of the selected maximum for each pooled cell, in the pooled
    /// tensor's row-major order.
    coords: Vec<(usize, usize)>,
}

impl PoolIndices {
    pub fn new(
        input_shape: Shape,
        pooled_shape: Shape,
        window: usize,
        stride: usize,
        coords: Vec<(usize, usize)>,
    ) -> Result<Self> {
        if coords.len() != pooled_shape.len() {
            return Err(Error::InvalidArgument(format!(
                "{} switches for pooled shape {pooled_shape}",
                coords.len()
            )));
        }
        if input_shape.n != pooled_shape.n || input_shape.c != pooled_shape.c {
            return Err(Error::ShapeMismatch {
                op: "PoolIndices",
                left: input_shape,
                right: pooled_shape,
            });
        }
        Ok(PoolIndices {
            input_shape,
            pooled_shape,
            window,
            stride,
            coords,
        })
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn pooled_shape(&self) -> Shape {
        self.pooled_shape
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn coords(&self) -> &[(usize, usize)] {
        &self.coords
    }

    /// Flat input offset of every switch, validated against the input shape.
    fn flat_targets(&self) -> Result<Vec<usize>> {
        let s = self.pooled_shape;
        let is = self.input_shape;
        let mut out = Vec::with_capacity(self.coords.len());
        for (i, &(h, w)) in self.coords.iter().enumerate() {
            if h >= is.h || w >= is.w {
                return Err(Error::IndexOutOfRange(format!(
                    "switch {i} at ({h}, {w}) outside input {is}"
                )));
            }
            let plane = i / s.plane();
            out.push(plane * is.plane() + h * is.w + w);
        }
        Ok(out)
    }
}

pub fn pool_output_dim(input: usize, window: usize, stride: usize) -> Option<usize> {
    (window >= 1 && stride >= 1 && input >= window).then(|| (input - window) / stride + 1)
}

struct PoolGeom {
    in_w: usize,
    out_h: usize,
    out_w: usize,
    window: usize,
    stride: usize,
}

/// `W` is the window size when known at compile time, 0 for the general case.
#[inline(always)]
fn pool_planes<const W: usize>(
    data: &[f64],
    plane_len: usize,
    g: &PoolGeom,
    od: &mut [f64],
    coords: &mut Vec<(usize, usize)>,
) {
    let window = if W == 0 { g.window } else { W };
    let (iw, oh, ow, stride) = (g.in_w, g.out_h, g.out_w, g.stride);
    for (p, plane) in data.chunks_exact(plane_len).enumerate() {
        for oy in 0..oh {
            let row_out = &mut od[(p * oh + oy) * ow..(p * oh + oy + 1) * ow];
            let rows = &plane[oy * stride * iw..(oy * stride + window - 1) * iw + iw];
            for (ox, r) in row_out.iter_mut().enumerate() {
                let x0 = ox * stride;
                let mut m = rows[x0];
                let mut at = (0, 0);
                for di in 0..window {
                    for (dj, &v) in rows[di * iw + x0..di * iw + x0 + window].iter().enumerate() {
                        let take = v > m;
                        m = if take { v } else { m };
                        at = if take { (di, dj) } else { at };
                    }
                }
                *r = m;
                coords.push((oy * stride + at.0, x0 + at.1));
            }
        }
    }
}

/// Max over each `window × window` cell; ties go to the first maximum in
/// row-major scan order.
pub fn maxpool_forward(x: &Tensor, window: usize, stride: usize) -> Result<(Tensor, PoolIndices)> {
    let xs = x.shape();
    if window == 0 || stride == 0 {
        return Err(Error::InvalidArgument("pool window and stride must be positive".into()));
    }
    let (Some(oh), Some(ow)) = (
        pool_output_dim(xs.h, window, stride),
        pool_output_dim(xs.w, window, stride),
    ) else {
        return Err(Error::incompatible(
            "maxpool",
            format!("window {window} larger than input {}x{}", xs.h, xs.w),
        ));
    };
    let ps = Shape::new(xs.n, xs.c, oh, ow);
    let mut out = Tensor::zeros(ps);
    let mut coords = Vec::with_capacity(ps.len());
    let data = x.data();
    let od = out.data_mut();
    let geom = PoolGeom {
        in_w: xs.w,
        out_h: oh,
        out_w: ow,
        window,
        stride,
    };
    match window {
        2 => pool_planes::<2>(data, xs.plane(), &geom, od, &mut coords),
        3 => pool_planes::<3>(data, xs.plane(), &geom, od, &mut coords),
        _ => pool_planes::<0>(data, xs.plane(), &geom, od, &mut coords),
    }
    let idx = PoolIndices {
        input_shape: xs,
        pooled_shape: ps,
        window,
        stride,
        coords,
    };
    Ok((out, idx))
}

/// Scatters pooled values to their recorded switches; every other cell is 0.
/// Switches shared by overlapping windows receive the sum of their values.
pub fn unpool(pooled: &Tensor, idx: &PoolIndices, out_shape: Shape) -> Result<Tensor> {
    if pooled.shape() != idx.pooled_shape {
        return Err(Error::ShapeMismatch {
            op: "unpool",
            left: idx.pooled_shape,
            right: pooled.shape(),
        });
    }
    if out_shape != idx.input_shape {
        return Err(Error::ShapeMismatch {
            op: "unpool",
            left: idx.input_shape,
            right: out_shape,
        });
    }
    let targets = idx.flat_targets()?;
    let mut out = Tensor::zeros(out_shape);
    let od = out.data_mut();
    for (&t, &v) in targets.iter().zip(pooled.data()) {
        od[t] += v;
    }
    Ok(out)
}

/// Gradient of [`maxpool_forward`]: the upstream gradient routed to the switches.
pub fn maxpool_backward(grad_out: &Tensor, idx: &PoolIndices) -> Result<Tensor> {
    unpool(grad_out, idx, idx.input_shape)
}

/// Gradient of [`unpool`] with respect to the pooled values: a gather.
pub fn unpool_backward(grad_out: &Tensor, idx: &PoolIndices) -> Result<Tensor> {
    if grad_out.shape() != idx.input_shape {
        return Err(Error::ShapeMismatch {
            op: "unpool_backward",
            left: idx.input_shape,
            right: grad_out.shape(),
        });
    }
    let targets = idx.flat_targets()?;
    let g = grad_out.data();
    let data = targets.iter().map(|&t| g[t]).collect();
    Tensor::from_vec(idx.pooled_shape, data)
}
