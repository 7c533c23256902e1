//! The reversal layer on a tiny graph: identity forward, `-λ·g` backward.
//!
//! Run with `cargo run --example gradient_reversal`.

use xinv::{Graph, Tensor};

fn main() -> xinv::Result<()> {
    for lambda in [0.0, 0.5, 1.0, 2.0] {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![3.0, -1.0]));
        let r = g.gradient_reversal(x, lambda)?;
        let sq = g.mul(r, r)?;
        let loss = g.sum(sq);
        g.backward(loss)?;
        println!(
            "λ={lambda}: forward {:?}, d(sum x²)/dx through the layer {:?}",
            g.value(r).data(),
            g.grad(x).unwrap_or_default()
        );
    }
    Ok(())
}
