//! The three parts of the enhanced objective on hand-built inputs: code
//! sparsity S, reconstruction cost MR with weight decay, and their
//! combination with the classification loss.
//!
//! cargo run --release --example sparsity_objective

use clenet::objective::{combined_objective, reconstruction_cost, sparsity, sparsity_grad};
use clenet::Tensor;

fn code(masses: &[f64]) -> Tensor {
    Tensor::from_fn((1, masses.len(), 2, 2), |_, c, _, _| masses[c] / 4.0)
}

fn main() -> clenet::Result<()> {
    println!("sparsity S of a 4-filter code (entropy of per-filter mass):");
    for masses in [[1.0, 1.0, 1.0, 1.0], [3.0, 1.0, 0.0, 0.0], [5.0, 0.1, 0.1, 0.1], [2.0, 0.0, 0.0, 0.0], [0.0; 4]] {
        let z = code(&masses);
        let g = sparsity_grad(&z)?;
        let per_filter: Vec<f64> = (0..4).map(|c| g.get(0, c, 0, 0)).collect();
        println!("  masses {masses:?}: S = {:.6}, dS/dz per filter {per_filter:+.4?}", sparsity(&z)?);
    }
    println!("  ln 4 = {:.6}", 4f64.ln());

    let x = Tensor::from_vec((2, 1, 1, 1), vec![1.0, 2.0])?;
    let x_hat = Tensor::from_vec((2, 1, 1, 1), vec![1.5, 2.5])?;
    let w = Tensor::full((1, 1, 2, 2), 1.0);
    for lambda in [0.0, 0.1, 1.0] {
        println!(
            "MR(x, x_hat, ||W||^2 = 4, lambda = {lambda}) = {:.6}",
            reconstruction_cost(&x, &x_hat, [&w], lambda)?
        );
    }

    let (ce, mr, s) = (0.40, 0.325, 0.562335);
    for (lambda_s, w_rec) in [(0.0, 0.0), (0.1, 1.0), (0.5, 1.0), (1.0, 2.0)] {
        let l = combined_objective(ce, mr, s, lambda_s, w_rec)?;
        println!("lambda_s = {lambda_s}, w_rec = {w_rec}: total = {:.6}", l.total);
    }
    Ok(())
}
