//! Builds a small two-layer network on the autodiff tape, runs backward
//! and compares the gradients with central differences.
//!
//! `cargo run --example autodiff_gradcheck`

use deep_ela::tensor::{gradcheck, Tensor};

fn main() -> deep_ela::Result<()> {
    let init = |r: usize, c: usize, s: f64| Tensor::from_fn(r, c, |i, j| ((i * 7 + j * 3) as f64 * s).sin());
    let params = [init(6, 4, 0.37), init(4, 8, 0.91), init(1, 8, 0.13), init(4, 3, 0.57)];
    let gc = gradcheck(&params, 1e-5, 1e-6, |t, v| {
        let h = t.linear(v[0], v[1], v[2])?;
        let h = t.glu(h)?;
        let o = t.matmul(h, v[3])?;
        let o = t.softmax_rows(o, 0.5)?;
        let o = t.tanh(o);
        Ok(t.mean(o))
    })?;
    println!("checked {} entries: max relative error {:.2e}, max absolute error {:.2e}", gc.checked, gc.max_rel, gc.max_abs);
    Ok(())
}
