//! Runs one synthetic patch through the enhanced network: encode, unpool
//! and deconvolve back to a reconstruction, re-encode, classify. Prints
//! every stage's shape and writes the activation maps as PGM files.
//!
//! cargo run --release --example autoencoder_roundtrip -- [DUMP_DIR]

use clenet::network::{dump_activations, forward, Architecture, Mode, NetworkParams, DEFAULT_PATCH};
use clenet::objective::{reconstruction_cost, sparsity};
use clenet::training::synthetic_patch_set;

fn main() -> clenet::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "activations".into());
    let arch = Architecture::new(DEFAULT_PATCH, Mode::Enhanced);
    let params = NetworkParams::new(arch, 42)?;
    println!(
        "enhanced network, patch {DEFAULT_PATCH}: {} parameters ({} encoder + head, {} decoder)",
        params.param_count(),
        params.encoder_param_count(),
        params.decoder_param_count()
    );

    let set = synthetic_patch_set(3, 1, DEFAULT_PATCH)?;
    let (x, labels) = set.batch(&[1])?;
    let trace = forward(&params, &x)?;
    let e = &trace.encode;
    let d = trace.decode.as_ref().expect("enhanced trace");
    for (name, t) in [
        ("input", &e.input),
        ("conv1", &e.conv1_pre),
        ("pool1", &e.pool1),
        ("conv2", &e.conv2_pre),
        ("code z", &e.pool2),
        ("unpool2", &d.unpool2),
        ("deconv2", &d.deconv2_pre),
        ("unpool1", &d.unpool1),
        ("x_hat", &d.x_hat),
        ("code z'", trace.classifier_input()),
    ] {
        println!("{name:>8}: {}", t.shape());
    }

    let mr = reconstruction_cost(&e.input, &d.x_hat, params.weight_tensors(), 0.0)?;
    println!("label {} -> p(carcinoma) = {:.4}", labels[0], trace.probs.get(0, 1, 0, 0));
    println!("reconstruction cost {mr:.4}, code sparsity S = {:.4}", sparsity(e.code())?);
    println!(
        "z' has {} elements for {} input pixels",
        trace.classifier_input().len(),
        DEFAULT_PATCH * DEFAULT_PATCH
    );
    for f in dump_activations(&trace, &dir)? {
        println!("wrote {}", f.display());
    }
    Ok(())
}
