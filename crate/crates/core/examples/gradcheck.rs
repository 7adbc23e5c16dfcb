//! Finite-difference check of a small graph, then the library sweep.

use lohgnet::gradchecks;
use lohgnet::numerics::gradcheck::{gradcheck, GradcheckConfig};
use lohgnet::numerics::Tensor;
use rand::SeedableRng;

fn main() -> lohgnet::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::randn(&[2, 3], 1.0, &mut rng);
    let w = Tensor::randn(&[3, 4], 1.0, &mut rng);
    let report = gradcheck(
        |tape, v| {
            let y = tape.matmul(v[0], v[1])?;
            let y = tape.sigmoid(y)?;
            tape.sum(y)
        },
        &[x, w],
        &GradcheckConfig::default(),
    )?;
    println!("sigmoid(x w): max rel err {:.2e} over {} elements", report.max_rel_err, report.checked);

    for case in gradchecks::primitives(false)? {
        println!("{:<24} {:.2e}  {}", case.name, case.report.max_rel_err, if case.report.passed { "ok" } else { "FAIL" });
    }
    Ok(())
}
