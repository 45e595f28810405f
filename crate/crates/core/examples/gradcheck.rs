//! Central-difference checks of every loss and of the meta-gradient.

use ramoe::autodiff::{finite_difference_check, Tensor};
use ramoe::cli::run_self_checks;
use ramoe::losses::triplet_batch_hard;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // A single check by hand.
    let x = Tensor::matrix(4, 2, vec![0.1, 0.9, 0.2, 0.8, -0.7, 0.1, -0.6, 0.3])?;
    let labels = [0, 0, 1, 1];
    let check = finite_difference_check(|t| Ok(triplet_batch_hard(t, &labels, 0.3).unwrap()), &x, 1e-5)?;
    println!("triplet: max relative error {:.2e}", check.max_rel_error);

    println!("{:<26} {:>9} {:>12} {:>10}", "check", "instances", "max error", "tolerance");
    let mut ok = true;
    for row in run_self_checks(1)? {
        ok &= row.passed();
        println!("{:<26} {:>9} {:>12.3e} {:>10.0e}", row.name, row.instances, row.max_error, row.tolerance);
    }
    println!("{}", if ok { "all checks passed" } else { "some checks failed" });
    Ok(())
}
