//! Build a small expression on the autodiff graph, run the backward pass,
//! and verify the gradient against central finite differences.
//!
//! Run with: cargo run --example autodiff_gradcheck

use seqtag::gradcheck::check_gradients;
use seqtag::tensor::{Graph, Tensor};

fn main() {
    // f(x) = sum(tanh(x W) * sigmoid(x W)) for a fixed W, differentiated
    // with respect to the row vector x
    let w = Tensor::from_vec([3, 2], vec![0.5, -1.0, 0.25, 0.75, -0.5, 1.5]);
    let x = Tensor::row(vec![0.2, -0.4, 0.9]).with_grad();

    let mut g = Graph::new();
    let xv = g.leaf(&x);
    let wv = g.leaf(&w);
    let h = g.matmul(xv, wv);
    let t = g.tanh(h);
    let s = g.sigmoid(h);
    let prod = g.mul(t, s);
    let loss = g.sum_all(prod);
    g.backward(loss);
    println!("loss          = {:.10}", g.scalar_value(loss));
    println!("analytic grad = {:?}", g.grad(xv).unwrap());

    // the same function evaluated from scratch for finite differences
    let report = check_gradients(
        |g, xv| {
            let wv = g.leaf(&w);
            let h = g.matmul(xv, wv);
            let t = g.tanh(h);
            let s = g.sigmoid(h);
            let prod = g.mul(t, s);
            g.sum_all(prod)
        },
        &x,
        1e-6,
    );
    println!("numeric grad  = {:?}", report.numeric);
    println!("max rel error = {:.3e}", report.max_rel_err);
    assert!(report.passes(1e-6), "gradient check failed");
    println!("gradient check passed");
}
