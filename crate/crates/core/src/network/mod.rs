//! The two architectures under comparison.
//!
//! Baseline: `x → conv1/ReLU/pool1 → conv2/ReLU/pool2 → dense(2) → softmax`.
//!
//! Enhanced: the same encoder produces a code `z`, a decoder
//! (`unpool2 → deconv2/ReLU → unpool1 → deconv1`) reconstructs `x̂`, and
//! `x̂` is passed through the same encoder again. The classifier reads the
//! re-encoded map `z'`.

mod checkpoint;
mod dump;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use dump::dump_activations;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layers::{
    conv_forward, conv_output_dim, deconv_forward, deconv_output_dim, dense_forward, maxpool_forward, pool_output_dim,
    relu, softmax, unpool, ConvParams, DenseParams, PoolIndices,
};
use crate::tensor::{Rng, Shape, Tensor};

/// Which forward pass a network runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Baseline,
    Enhanced,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Enhanced => "enhanced",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "enhanced" => Ok(Mode::Enhanced),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode '{other}' (expected baseline or enhanced)"
            ))),
        }
    }
}

/// Default patch side in pixels.
pub const DEFAULT_PATCH: usize = 32;

/// Layer sizes and strides of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub patch: usize,
    pub conv1_filters: usize,
    pub conv1_kernel: usize,
    pub conv2_filters: usize,
    pub conv2_kernel: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
    pub conv_stride: usize,
    pub mode: Mode,
}

/// Spatial sizes along the encoder for one architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub conv1: usize,
    pub pool1: usize,
    pub conv2: usize,
    pub pool2: usize,
}

impl Architecture {
    /// 64 filters of 5×5, then 32 filters of 3×3, each followed by 3×3 max
    /// pooling with stride 2.
    pub fn new(patch: usize, mode: Mode) -> Self {
        Architecture {
            patch,
            conv1_filters: 64,
            conv1_kernel: 5,
            conv2_filters: 32,
            conv2_kernel: 3,
            pool_window: 3,
            pool_stride: 2,
            conv_stride: 1,
            mode,
        }
    }

    pub fn with_mode(self, mode: Mode) -> Self {
        Architecture { mode, ..self }
    }

    /// Spatial sizes of every encoder stage, or an error naming the first
    /// stage that would be empty.
    pub fn dims(&self) -> Result<Dims> {
        let bad = |stage: &str, input: usize| {
            Error::InvalidArgument(format!(
                "patch {} is incompatible with the architecture: {stage} does not fit a {input}x{input} input",
                self.patch
            ))
        };
        if self.conv_stride == 0 || self.pool_stride == 0 || self.pool_window == 0 {
            return Err(Error::InvalidArgument("strides and pool window must be positive".into()));
        }
        if [self.conv1_filters, self.conv2_filters, self.conv1_kernel, self.conv2_kernel].contains(&0) {
            return Err(Error::InvalidArgument("filter counts and kernel sizes must be positive".into()));
        }
        let conv1 = conv_output_dim(self.patch, self.conv1_kernel, self.conv_stride)
            .ok_or_else(|| bad("conv1", self.patch))?;
        let pool1 = pool_output_dim(conv1, self.pool_window, self.pool_stride).ok_or_else(|| bad("pool1", conv1))?;
        let conv2 = conv_output_dim(pool1, self.conv2_kernel, self.conv_stride).ok_or_else(|| bad("conv2", pool1))?;
        let pool2 = pool_output_dim(conv2, self.pool_window, self.pool_stride).ok_or_else(|| bad("pool2", conv2))?;
        Ok(Dims {
            conv1,
            pool1,
            conv2,
            pool2,
        })
    }

    /// Checks that every stage fits, that the decoder inverts the encoder
    /// and that the classifier input is smaller than the patch.
    pub fn validate(&self) -> Result<Dims> {
        let d = self.dims()?;
        let s = self.conv_stride;
        if deconv_output_dim(d.conv1, self.conv1_kernel, s) != self.patch
            || deconv_output_dim(d.conv2, self.conv2_kernel, s) != d.pool1
        {
            return Err(Error::InvalidArgument(format!(
                "patch {} with conv stride {s} leaves a remainder; the decoder cannot reproduce the input size",
                self.patch
            )));
        }
        let features = self.feature_len_with(&d);
        if features >= self.patch * self.patch {
            return Err(Error::InvalidArgument(format!(
                "classifier input has {features} elements, not fewer than the {} input pixels",
                self.patch * self.patch
            )));
        }
        Ok(d)
    }

    fn feature_len_with(&self, d: &Dims) -> usize {
        self.conv2_filters * d.pool2 * d.pool2
    }

    /// Element count of the classifier's input feature map per sample.
    pub fn feature_len(&self) -> Result<usize> {
        Ok(self.feature_len_with(&self.dims()?))
    }

    /// Shape of one sample's code map.
    pub fn code_shape(&self) -> Result<Shape> {
        let d = self.dims()?;
        Ok(Shape::new(1, self.conv2_filters, d.pool2, d.pool2))
    }

    pub fn input_shape(&self, batch: usize) -> Shape {
        Shape::new(batch, 1, self.patch, self.patch)
    }
}

/// Decoder weights of the enhanced network.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    /// Maps the code back to the conv2 input (`conv2_filters → conv1_filters`).
    pub deconv2: ConvParams,
    /// Maps the first pooled map back to the image (`conv1_filters → 1`).
    pub deconv1: ConvParams,
}

/// Adam moment estimates, flattened in canonical parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// All weights of a network plus its optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    arch: Architecture,
    pub conv1: ConvParams,
    pub conv2: ConvParams,
    pub decoder: Option<Decoder>,
    pub head: DenseParams,
    pub adam: AdamState,
}

impl NetworkParams {
    /// Glorot-initialized network; biases start at 0.
    ///
    /// Encoder and head are drawn first, so a baseline and an enhanced
    /// network built from the same seed share those weights.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = Rng::new(seed);
        let a = &arch;
        let conv1 = ConvParams::conv(a.conv1_filters, 1, a.conv1_kernel, a.conv1_kernel, &mut rng);
        let conv2 = ConvParams::conv(a.conv2_filters, a.conv1_filters, a.conv2_kernel, a.conv2_kernel, &mut rng);
        let head = DenseParams::new(2, arch.feature_len()?, &mut rng);
        let decoder = match arch.mode {
            Mode::Baseline => None,
            Mode::Enhanced => Some(Decoder {
                deconv2: ConvParams::deconv(a.conv2_filters, a.conv1_filters, a.conv2_kernel, a.conv2_kernel, &mut rng),
                deconv1: ConvParams::deconv(a.conv1_filters, 1, a.conv1_kernel, a.conv1_kernel, &mut rng),
            }),
        };
        let mut p = NetworkParams {
            arch,
            conv1,
            conv2,
            decoder,
            head,
            adam: AdamState::new(0),
        };
        p.adam = AdamState::new(p.param_count());
        Ok(p)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn mode(&self) -> Mode {
        self.arch.mode
    }

    pub fn decoder(&self) -> Option<&Decoder> {
        self.decoder.as_ref()
    }

    /// Parameter buffers in canonical order: conv1, conv2, decoder
    /// (deconv2, deconv1) when present, head; weights before biases.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![
            self.conv1.weight.data(),
            &self.conv1.bias,
            self.conv2.weight.data(),
            &self.conv2.bias,
        ];
        if let Some(d) = &self.decoder {
            out.extend([d.deconv2.weight.data(), &d.deconv2.bias[..], d.deconv1.weight.data(), &d.deconv1.bias[..]]);
        }
        out.extend([self.head.weight.data(), &self.head.bias[..]]);
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.conv1.weight.data_mut(),
            &mut self.conv1.bias,
            self.conv2.weight.data_mut(),
            &mut self.conv2.bias,
        ];
        if let Some(d) = &mut self.decoder {
            out.push(d.deconv2.weight.data_mut());
            out.push(&mut d.deconv2.bias);
            out.push(d.deconv1.weight.data_mut());
            out.push(&mut d.deconv1.bias);
        }
        out.push(self.head.weight.data_mut());
        out.push(&mut self.head.bias);
        out
    }

    /// Names of the buffers returned by [`slices`](Self::slices).
    pub fn slice_names(&self) -> Vec<&'static str> {
        let mut out = vec!["conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias"];
        if self.decoder.is_some() {
            out.extend(["deconv2.weight", "deconv2.bias", "deconv1.weight", "deconv1.bias"]);
        }
        out.extend(["head.weight", "head.bias"]);
        out
    }

    /// Every weight tensor subject to weight decay (biases excluded).
    pub fn weight_tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.conv1.weight, &self.conv2.weight];
        if let Some(d) = &self.decoder {
            out.extend([&d.deconv2.weight, &d.deconv1.weight]);
        }
        out.push(&self.head.weight);
        out
    }

    pub fn param_count(&self) -> usize {
        self.encoder_param_count() + self.decoder_param_count()
    }

    /// Parameters shared by both architectures (encoder and head).
    pub fn encoder_param_count(&self) -> usize {
        self.conv1.param_count() + self.conv2.param_count() + self.head.param_count()
    }

    pub fn decoder_param_count(&self) -> usize {
        self.decoder
            .as_ref()
            .map_or(0, |d| d.deconv2.param_count() + d.deconv1.param_count())
    }

    /// Copies every parameter value into one flat vector.
    pub fn flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    /// Overwrites every parameter from a flat vector in canonical order.
    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::InvalidArgument(format!(
                "{} values for {} parameters",
                values.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&values[off..off + s.len()]);
            off += s.len();
        }
        Ok(())
    }
}

/// Intermediates of one encoder pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    pub input: Tensor,
    pub conv1_pre: Tensor,
    pub pool1: Tensor,
    pub idx1: PoolIndices,
    pub conv2_pre: Tensor,
    pub pool2: Tensor,
    pub idx2: PoolIndices,
}

impl EncoderTrace {
    /// The pooled output of the encoder.
    pub fn code(&self) -> &Tensor {
        &self.pool2
    }
}

/// Intermediates of the decoder.
#[derive(Debug, Clone)]
pub struct DecodeTrace {
    pub unpool2: Tensor,
    pub deconv2_pre: Tensor,
    pub unpool1: Tensor,
    pub x_hat: Tensor,
}

/// Everything retained from one training-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// First (for the baseline, only) encoder pass over the input.
    pub encode: EncoderTrace,
    pub decode: Option<DecodeTrace>,
    /// Encoder pass over the reconstruction; its code is `z'`.
    pub reencode: Option<EncoderTrace>,
    /// Flattened classifier input.
    pub features: Tensor,
    pub logits: Tensor,
    pub probs: Tensor,
}

impl ForwardTrace {
    pub fn x_hat(&self) -> Option<&Tensor> {
        self.decode.as_ref().map(|d| &d.x_hat)
    }

    /// Map the classifier reads: `z'` when enhanced, `z` otherwise.
    pub fn classifier_input(&self) -> &Tensor {
        self.reencode.as_ref().unwrap_or(&self.encode).code()
    }
}

fn check_input(arch: &Architecture, x: &Tensor) -> Result<()> {
    let s = x.shape();
    if s.c != 1 || s.h != arch.patch || s.w != arch.patch {
        return Err(Error::ShapeMismatch {
            op: "forward",
            left: arch.input_shape(s.n),
            right: s,
        });
    }
    if s.n == 0 {
        return Err(Error::Empty("forward"));
    }
    Ok(())
}

/// One pass through the shared encoder.
pub fn encode(p: &NetworkParams, x: &Tensor) -> Result<EncoderTrace> {
    let a = &p.arch;
    let conv1_pre = conv_forward(x, &p.conv1, a.conv_stride)?;
    let (pool1, idx1) = maxpool_forward(&relu(&conv1_pre), a.pool_window, a.pool_stride)?;
    let conv2_pre = conv_forward(&pool1, &p.conv2, a.conv_stride)?;
    let (pool2, idx2) = maxpool_forward(&relu(&conv2_pre), a.pool_window, a.pool_stride)?;
    Ok(EncoderTrace {
        input: x.clone(),
        conv1_pre,
        pool1,
        idx1,
        conv2_pre,
        pool2,
        idx2,
    })
}

/// Reconstructs the input from a code through the switches of the pass
/// that produced it.
pub fn decode(d: &Decoder, enc: &EncoderTrace, stride: usize) -> Result<DecodeTrace> {
    let unpool2 = unpool(enc.code(), &enc.idx2, enc.idx2.input_shape())?;
    let deconv2_pre = deconv_forward(&unpool2, &d.deconv2, stride)?;
    let unpool1 = unpool(&relu(&deconv2_pre), &enc.idx1, enc.idx1.input_shape())?;
    let x_hat = deconv_forward(&unpool1, &d.deconv1, stride)?;
    if x_hat.shape() != enc.input.shape() {
        return Err(Error::ShapeMismatch {
            op: "decode",
            left: enc.input.shape(),
            right: x_hat.shape(),
        });
    }
    Ok(DecodeTrace {
        unpool2,
        deconv2_pre,
        unpool1,
        x_hat,
    })
}

fn classify(p: &NetworkParams, code: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let features = code.clone().flatten();
    let logits = dense_forward(&features, &p.head)?;
    let probs = softmax(&logits);
    Ok((features, logits, probs))
}

/// Baseline forward pass, retaining every intermediate.
pub fn forward_baseline(p: &NetworkParams, x: &Tensor) -> Result<ForwardTrace> {
    check_input(&p.arch, x)?;
    let encode = encode(p, x)?;
    let (features, logits, probs) = classify(p, encode.code())?;
    Ok(ForwardTrace {
        encode,
        decode: None,
        reencode: None,
        features,
        logits,
        probs,
    })
}

/// Enhanced forward pass: encode, decode, re-encode the reconstruction
/// with the same weights, classify the re-encoded map.
pub fn forward_enhanced(p: &NetworkParams, x: &Tensor) -> Result<ForwardTrace> {
    check_input(&p.arch, x)?;
    let dec = p.decoder.as_ref().ok_or(Error::MissingIntermediate("decoder parameters"))?;
    let encode = encode(p, x)?;
    let decode = decode(dec, &encode, p.arch.conv_stride)?;
    let reencode = self::encode(p, &decode.x_hat)?;
    let (features, logits, probs) = classify(p, reencode.code())?;
    Ok(ForwardTrace {
        encode,
        decode: Some(decode),
        reencode: Some(reencode),
        features,
        logits,
        probs,
    })
}

/// Forward pass of the network's own mode.
pub fn forward(p: &NetworkParams, x: &Tensor) -> Result<ForwardTrace> {
    match p.mode() {
        Mode::Baseline => forward_baseline(p, x),
        Mode::Enhanced => forward_enhanced(p, x),
    }
}

/// Encoder output without retained intermediates.
fn encode_lean(p: &NetworkParams, x: &Tensor, keep: bool) -> Result<(Tensor, Option<(PoolIndices, PoolIndices)>)> {
    let a = &p.arch;
    let h = relu(&conv_forward(x, &p.conv1, a.conv_stride)?);
    let (h, idx1) = maxpool_forward(&h, a.pool_window, a.pool_stride)?;
    let h = relu(&conv_forward(&h, &p.conv2, a.conv_stride)?);
    let (z, idx2) = maxpool_forward(&h, a.pool_window, a.pool_stride)?;
    Ok((z, keep.then_some((idx1, idx2))))
}

/// Carcinoma probability per patch, in inference mode.
pub fn predict(p: &NetworkParams, x: &Tensor) -> Result<Vec<f64>> {
    check_input(&p.arch, x)?;
    let a = &p.arch;
    let code = match &p.decoder {
        None => encode_lean(p, x, false)?.0,
        Some(d) => {
            let (z, idx) = encode_lean(p, x, true)?;
            let (idx1, idx2) = idx.ok_or(Error::MissingIntermediate("pool switches"))?;
            let u2 = unpool(&z, &idx2, idx2.input_shape())?;
            let h = relu(&deconv_forward(&u2, &d.deconv2, a.conv_stride)?);
            let u1 = unpool(&h, &idx1, idx1.input_shape())?;
            let x_hat = deconv_forward(&u1, &d.deconv1, a.conv_stride)?;
            encode_lean(p, &x_hat, false)?.0
        }
    };
    let (_, _, probs) = classify(p, &code)?;
    Ok(probs.data().chunks_exact(2).map(|r| r[1]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::rand_uniform;

    fn micro(mode: Mode) -> Architecture {
        Architecture {
            patch: 12,
            conv1_filters: 2,
            conv1_kernel: 5,
            conv2_filters: 2,
            conv2_kernel: 3,
            pool_window: 3,
            pool_stride: 1,
            conv_stride: 1,
            mode,
        }
    }

    #[test]
    fn default_dims_and_feature_reduction() {
        let a = Architecture::new(64, Mode::Enhanced);
        let d = a.dims().unwrap();
        assert_eq!((d.conv1, d.pool1, d.conv2, d.pool2), (60, 29, 27, 13));
        // 32 * 13 * 13 = 5408 features exceed 64 * 64 = 4096 pixels
        assert!(a.validate().is_err());
        let a32 = Architecture::new(DEFAULT_PATCH, Mode::Enhanced);
        let d = a32.validate().unwrap();
        assert_eq!((d.conv1, d.pool1, d.conv2, d.pool2), (28, 13, 11, 5));
        assert_eq!(a32.feature_len().unwrap(), 32 * 5 * 5);
        assert!(a32.feature_len().unwrap() < 32 * 32);
        assert!(Architecture::new(16, Mode::Baseline).validate().is_ok());
        assert!(Architecture::new(12, Mode::Baseline).validate().is_err());
    }

    #[test]
    fn zero_input_zero_biases_gives_even_odds() {
        let p = NetworkParams::new(micro(Mode::Baseline), 1).unwrap();
        let t = forward_baseline(&p, &Tensor::zeros((3, 1, 12, 12))).unwrap();
        assert!(t.probs.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn probs_sum_to_one_and_identical_rows() {
        let p = NetworkParams::new(Architecture::new(32, Mode::Enhanced), 3).unwrap();
        let mut rng = Rng::new(8);
        let one = rand_uniform(&mut rng, (1, 1, 32, 32), 0.0, 1.0).unwrap();
        let x = Tensor::stack(&[&one, &one, &one]).unwrap();
        for t in [forward_baseline(&p, &x).unwrap(), forward_enhanced(&p, &x).unwrap()] {
            for n in 0..3 {
                let row = t.probs.sample(n);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert_eq!(row, t.probs.sample(0));
            }
        }
    }

    #[test]
    fn reconstruction_matches_input_shape() {
        for patch in [32, 48, 64] {
            let arch = Architecture {
                conv2_filters: 16,
                ..Architecture::new(patch, Mode::Enhanced)
            };
            let p = NetworkParams::new(arch, 2).unwrap();
            let x = Tensor::full((1, 1, patch, patch), 0.5);
            let t = forward_enhanced(&p, &x).unwrap();
            assert_eq!(t.x_hat().unwrap().shape(), x.shape());
        }
    }

    #[test]
    fn zero_decoder_reconstructs_zero_image() {
        let mut p = NetworkParams::new(micro(Mode::Enhanced), 4).unwrap();
        let d = p.decoder.as_mut().unwrap();
        for c in [&mut d.deconv2, &mut d.deconv1] {
            c.weight = Tensor::zeros(c.weight.shape());
        }
        let mut rng = Rng::new(1);
        let x = rand_uniform(&mut rng, (2, 1, 12, 12), 0.0, 1.0).unwrap();
        let t = forward_enhanced(&p, &x).unwrap();
        assert!(t.x_hat().unwrap().data().iter().all(|&v| v == 0.0));
        let zero = encode(&p, &Tensor::zeros((2, 1, 12, 12))).unwrap();
        assert_eq!(t.classifier_input().data(), zero.code().data());
    }

    #[test]
    fn perfect_reconstruction_reduces_to_baseline() {
        let p = NetworkParams::new(micro(Mode::Enhanced), 6).unwrap();
        let mut rng = Rng::new(2);
        let x = rand_uniform(&mut rng, (2, 1, 12, 12), 0.0, 1.0).unwrap();
        let z = encode(&p, &x).unwrap();
        let z_prime = encode(&p, &x.clone()).unwrap();
        assert_eq!(z.code().data(), z_prime.code().data());
        let base = forward_baseline(&p, &x).unwrap();
        assert_eq!(base.classifier_input().data(), z_prime.code().data());
    }

    #[test]
    fn predict_matches_training_forward() {
        for mode in [Mode::Baseline, Mode::Enhanced] {
            let p = NetworkParams::new(Architecture::new(32, mode), 9).unwrap();
            let mut rng = Rng::new(3);
            let x = rand_uniform(&mut rng, (4, 1, 32, 32), 0.0, 1.0).unwrap();
            let probs = predict(&p, &x).unwrap();
            let t = forward(&p, &x).unwrap();
            for (n, pr) in probs.iter().enumerate() {
                assert_eq!(pr.to_bits(), t.probs.sample(n)[1].to_bits());
                assert!((0.0..=1.0).contains(pr));
            }
            assert_eq!(probs, predict(&p, &x).unwrap());
        }
    }

    #[test]
    fn parameter_counts_add_up() {
        let b = NetworkParams::new(Architecture::new(32, Mode::Baseline), 1).unwrap();
        let e = NetworkParams::new(Architecture::new(32, Mode::Enhanced), 1).unwrap();
        assert_eq!(b.param_count(), 64 * 25 + 64 + 32 * 64 * 9 + 32 + 2 * 800 + 2);
        assert_eq!(e.decoder_param_count(), 32 * 64 * 9 + 64 + 64 * 25 + 1);
        assert_eq!(e.param_count(), b.param_count() + e.decoder_param_count());
        // shared seeds give shared encoder weights
        assert_eq!(b.conv1, e.conv1);
        assert_eq!(b.head, e.head);
        let mut c = e.clone();
        c.set_flat(&e.flat()).unwrap();
        assert_eq!(c, e);
    }

    #[test]
    fn traces_finite_over_seeds() {
        for seed in 0..20 {
            let p = NetworkParams::new(micro(Mode::Enhanced), seed).unwrap();
            let mut rng = Rng::new(seed + 100);
            let x = rand_uniform(&mut rng, (2, 1, 12, 12), 0.0, 1.0).unwrap();
            let t = forward_enhanced(&p, &x).unwrap();
            let d = t.decode.as_ref().unwrap();
            for tensor in [&t.encode.conv1_pre, &t.encode.pool2, &d.deconv2_pre, &d.x_hat, &t.logits, &t.probs] {
                assert!(tensor.all_finite());
            }
        }
    }

    #[test]
    fn wrong_patch_size_is_rejected() {
        let p = NetworkParams::new(micro(Mode::Baseline), 1).unwrap();
        assert!(matches!(
            forward_baseline(&p, &Tensor::zeros((1, 1, 13, 13))),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
