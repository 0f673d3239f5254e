//! Runs the finite-difference gradient suite for a few seeds.

use vqa_lab::experiment::gradient_suite;

fn main() -> vqa_lab::Result<()> {
    let cases = gradient_suite(&[0, 1, 2])?;
    for c in &cases {
        println!("{:<4} {:<32} seed {}  {}", if c.passes() { "ok" } else { "FAIL" }, c.name, c.seed, c.report);
    }
    let passed = cases.iter().filter(|c| c.passes()).count();
    println!("{passed} of {} checks passed", cases.len());
    Ok(())
}
