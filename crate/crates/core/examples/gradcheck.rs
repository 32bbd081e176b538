//! Finite-difference checks of the adapter and encoder gradients.
fn main() -> vlseg3d::Result<()> {
    let report = vlseg3d::gradcheck::run_suite(1)?;
    for c in &report.cases {
        println!("{:<32} {:>6} params  max rel err {:.2e}  {}", c.name, c.params, c.max_rel_err, if c.passed { "ok" } else { "FAIL" });
    }
    println!("tolerance {:.0e}, step {:.0e}", report.tolerance, report.step);
    Ok(())
}
