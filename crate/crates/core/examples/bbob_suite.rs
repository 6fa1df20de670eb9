//! Lists the single-objective suite with its property labels and checks
//! that every transformed instance attains its offset at its optimum.
//!
//! `cargo run --example bbob_suite`

use deep_ela::benchmarks::{make_benchmark, suite_csv, BenchmarkId};
use deep_ela::Objective;
use ndarray::Array2;

fn main() -> deep_ela::Result<()> {
    print!("{}", suite_csv());
    for fid in [1u8, 8, 15, 21] {
        let inst = make_benchmark(BenchmarkId::bbob(fid, 3), 2)?;
        if let Objective::Bbob(f) = &inst.objectives[0] {
            let x = Array2::from_shape_vec((1, 2), f.x_opt.clone()).unwrap();
            println!("f{fid} i3 d2: f(x_opt) = {:.6}, f_opt = {:.6}", inst.evaluate(x.view())?[[0, 0]], f.f_opt);
        }
    }
    Ok(())
}
